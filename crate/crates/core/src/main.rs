fn main() {
    std::process::exit(playstyle::cli::main_with_args(std::env::args().collect()));
}
