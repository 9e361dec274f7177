//! Command-line front end. Every subcommand can record a [`RunManifest`] from
//! which `rerun` reproduces its output byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diversity::{diverse_count, DiversityConfig, DEFAULT_ENCODER, DEFAULT_THRESHOLD};
use crate::encoders::{encode_dataset, MultiscaleEncoder};
use crate::error::{Error, Result};
use crate::format::g17;
use crate::harness::{
    accuracy_sweep, consistency_count, mcnemar_chi_square, mcnemar_test, spectrum_consistency,
    sweep_csv, ClassificationTask, ContingencyTable, SpectrumReport,
};
use crate::io::{digest_file, load_dataset, load_grid, load_styles, load_trajectory_dir, log_files, write_log};
use crate::measures::{Measure, Weighting};
use crate::model::{validate_dataset, StyleDataset};
use crate::synth::{
    generate_bandit, generate_board_game, generate_grid_styles_with, BanditStyle, BoardGame, GridOptions,
    BOARD_TEMPERATURES, DEFAULT_BIAS_LEVELS, DEFAULT_EPISODE_LEN, DEFAULT_GRID_SIZE, DEFAULT_LAYOUT_SEED,
    DEFAULT_MAX_STEPS, DEFAULT_NOISE_LEVELS,
};

pub const WORKERS_ENV: &str = "PLAYSTYLE_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NO_COMPARABLE_STATES: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Parser, Debug, Clone)]
#[command(name = "playstyle", version, about = "Measure, classify and compare decision-making styles")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Write a run manifest to this path.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Compare two datasets.
    Measure(MeasureArgs),
    /// Accuracy sweep over sample sizes.
    Classify(ClassifyArgs),
    /// Consistency count of a style grid around a target cell.
    Spectrum(SpectrumArgs),
    /// Count diverse trajectories in a directory of logs.
    Diversity(DiversityArgs),
    /// Generate synthetic datasets.
    Synth(SynthArgs),
    /// Exact McNemar test on paired classifier outcomes.
    Mcnemar(McnemarArgs),
    /// Check a log or dataset manifest against the data model.
    Validate(ValidateArgs),
    /// Re-execute a recorded run.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingArg {
    Frequency,
    Uniform,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Frequency => Weighting::Frequency,
            WeightingArg::Uniform => Weighting::Uniform,
        }
    }
}

/// Options shared by every subcommand that scores datasets.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ScoringOpts {
    /// Comma-joined encoder specs, e.g. `identity,down:1x4x4:4,passthrough`.
    #[arg(long, default_value = DEFAULT_ENCODER)]
    pub encoder: String,
    /// Minimum visits per dataset for a state to count as shared.
    #[arg(long = "t")]
    pub threshold_t: Option<u32>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    /// Pad discrete action spaces to this many actions.
    #[arg(long)]
    pub action_space: Option<u32>,
}

impl ScoringOpts {
    fn encoders(&self) -> Result<MultiscaleEncoder> {
        MultiscaleEncoder::parse(&self.encoder)
    }

    fn measure(&self, name: &str) -> Result<Measure<f64>> {
        let mut m = Measure::named(name)?;
        if let Some(t) = self.threshold_t {
            m = m.with_threshold(t)?;
        }
        if let Some(w) = self.weighting {
            m = m.with_weighting(w.into());
        }
        Ok(m)
    }

    fn pad(&self, ds: StyleDataset) -> Result<StyleDataset> {
        match self.action_space {
            Some(k) => ds.pad_action_space(k),
            None => Ok(ds),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MeasureArgs {
    pub dataset_a: PathBuf,
    pub dataset_b: PathBuf,
    #[arg(long, default_value = "ps-union")]
    pub measure: String,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyArgs {
    /// `{"styles": [...]}` file.
    pub styles: PathBuf,
    /// Separate query datasets in the same format and order.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Comma-separated measure names.
    #[arg(long, value_delimiter = ',', default_value = "ps-union")]
    pub measure: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512,1024")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Let query and candidate subsamples of a pool overlap.
    #[arg(long)]
    pub overlap: bool,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumArgs {
    /// `{"grid": [[...], ...]}` file.
    #[arg(required_unless_present = "values", conflicts_with = "values")]
    pub grid: Option<PathBuf>,
    /// CSV of precomputed cell values instead of datasets; empty cells are undefined.
    #[arg(long)]
    pub values: Option<PathBuf>,
    /// Target cell as `row,col`.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 0])]
    pub target: Vec<usize>,
    #[arg(long, default_value = "ps-union")]
    pub measure: String,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DiversityArgs {
    /// Directory of `.jsonl` logs; every trajectory in them is one candidate.
    pub dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "ps-union")]
    pub measure: String,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Bias × noise gridworld styles, one log per style plus grid and styles files.
    Grid {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BIAS_LEVELS)]
        bias: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NOISE_LEVELS)]
        noise: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EPISODE_LEN)]
        episode_len: usize,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid_size: usize,
        #[arg(long, default_value_t = DEFAULT_LAYOUT_SEED)]
        layout_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-observation bandit log.
    Bandit {
        #[arg(long, value_delimiter = ',', required = true)]
        probs: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output log file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Softmax players of the sliding-tile board, one directory per temperature.
    Board {
        #[arg(long, value_delimiter = ',', default_values_t = BOARD_TEMPERATURES)]
        temperatures: Vec<f64>,
        #[arg(long, default_value_t = 25)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: usize,
        #[arg(long, default_value_t = 2048)]
        table_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct McnemarArgs {
    /// Items only classifier A got right.
    pub a_only: u64,
    /// Items only classifier B got right.
    pub b_only: u64,
    #[arg(long, default_value_t = 0)]
    pub both_correct: u64,
    #[arg(long, default_value_t = 0)]
    pub both_wrong: u64,
    /// Continuity-corrected chi-square approximation instead of the exact test.
    #[arg(long)]
    pub chi_square: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ValidateArgs {
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest written by an earlier `--manifest` run.
    #[arg(id = "recorded_manifest", value_name = "MANIFEST")]
    pub manifest: PathBuf,
    /// Replace the recorded output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Command,
    pub argv: Vec<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputDigest>,
    pub version: String,
    pub workers: Option<usize>,
    pub started_unix_ms: u128,
    pub wall_clock_ms: u128,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_context(e, path))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Measure(_) => "measure",
            Command::Classify(_) => "classify",
            Command::Spectrum(_) => "spectrum",
            Command::Diversity(_) => "diversity",
            Command::Synth(_) => "synth",
            Command::Mcnemar(_) => "mcnemar",
            Command::Validate(_) => "validate",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Command::Classify(a) => vec![a.seed],
            Command::Spectrum(a) if a.grid.is_some() => vec![a.seed],
            Command::Synth(SynthArgs { kind }) => match kind {
                SynthKind::Grid { seed, layout_seed, .. } => vec![*seed, *layout_seed],
                SynthKind::Bandit { seed, .. } => vec![*seed],
                SynthKind::Board { seed, table_seed, .. } => vec![*seed, *table_seed],
            },
            _ => Vec::new(),
        }
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Measure(a) => a.out = Some(out),
            Command::Classify(a) => a.out = Some(out),
            Command::Spectrum(a) => a.out = Some(out),
            Command::Diversity(a) => a.out = Some(out),
            Command::Mcnemar(a) => a.out = Some(out),
            Command::Validate(a) => a.out = Some(out),
            Command::Synth(SynthArgs { kind }) => match kind {
                SynthKind::Grid { out: o, .. }
                | SynthKind::Bandit { out: o, .. }
                | SynthKind::Board { out: o, .. } => *o = out,
            },
            Command::Rerun(a) => a.out = Some(out),
        }
    }

    /// Paths whose contents determine the output.
    fn input_paths(&self) -> Vec<PathBuf> {
        let mut paths = Vec::new();
        let scoring = |s: &ScoringOpts, paths: &mut Vec<PathBuf>| {
            for part in s.encoder.split(',') {
                if let Some(p) = part.trim().strip_prefix("pre:") {
                    paths.push(PathBuf::from(p));
                }
            }
        };
        match self {
            Command::Measure(a) => {
                paths.extend([a.dataset_a.clone(), a.dataset_b.clone()]);
                scoring(&a.scoring, &mut paths);
            }
            Command::Classify(a) => {
                paths.push(a.styles.clone());
                paths.extend(a.queries.clone());
                scoring(&a.scoring, &mut paths);
            }
            Command::Spectrum(a) => {
                paths.extend(a.grid.clone());
                paths.extend(a.values.clone());
                scoring(&a.scoring, &mut paths);
            }
            Command::Diversity(a) => {
                paths.push(a.dir.clone());
                scoring(&a.scoring, &mut paths);
            }
            Command::Validate(a) => paths.push(a.dataset.clone()),
            Command::Rerun(a) => paths.push(a.manifest.clone()),
            Command::Synth(_) | Command::Mcnemar(_) => {}
        }
        paths
    }
}

/// Files reached from `path`: directory logs, or a JSON manifest together with
/// every log path mentioned in it.
fn expand_inputs(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        out.extend(log_files(path)?);
        return Ok(());
    }
    out.push(path.to_path_buf());
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| io_context(e, path))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut stack = vec![&value];
        while let Some(v) = stack.pop() {
            match v {
                Value::String(s) if s.ends_with(".jsonl") || s.ends_with(".json") => {
                    let p = Path::new(s);
                    let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
                    expand_inputs(&p, out)?;
                }
                Value::Array(items) => stack.extend(items.iter().rev()),
                Value::Object(map) => stack.extend(map.values().rev()),
                _ => {}
            }
        }
    }
    Ok(())
}

pub fn input_digests(cmd: &Command) -> Result<Vec<InputDigest>> {
    let mut files = Vec::new();
    for p in cmd.input_paths() {
        expand_inputs(&p, &mut files)?;
    }
    files
        .into_iter()
        .map(|path| {
            let sha256 = digest_file(&path)?;
            Ok(InputDigest { path, sha256 })
        })
        .collect()
}

/// JSON with floats printed to 17 significant digits.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize, out: &mut String| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Number(n) if n.is_f64() => out.push_str(&g17(n.as_f64().unwrap_or(f64::NAN))),
        Value::Array(items) if !items.is_empty() => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                pad(indent + 2, out);
                write_value(item, indent + 2, out);
            }
            out.push('\n');
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                pad(indent + 2, out);
                let _ = write!(out, "{}: ", Value::String(k.clone()));
                write_value(item, indent + 2, out);
            }
            out.push('\n');
            pad(indent, out);
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_context(e, p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_values_csv(path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    let text = fs::read_to_string(path).map_err(|e| io_context(e, path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            line.split(',')
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        return Ok(None);
                    }
                    cell.parse::<f64>()
                        .map(|v| if v.is_nan() { None } else { Some(v) })
                        .map_err(|e| Error::Parse(format!("{}:{}: {cell:?}: {e}", path.display(), i + 1)))
                })
                .collect()
        })
        .collect()
}

fn target_cell(t: &[usize]) -> Result<(usize, usize)> {
    match t {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::InvalidConfig(format!("target must be row,col, got {t:?}"))),
    }
}

#[derive(Serialize)]
struct MeasureOutput<'a, R: Serialize> {
    encoder: &'a str,
    #[serde(flatten)]
    report: R,
}

#[derive(Serialize)]
struct DiversityOutput {
    measure: String,
    encoder: String,
    threshold: f64,
    diverse: usize,
    total: usize,
    flags: Vec<bool>,
}

#[derive(Serialize)]
struct McnemarOutput {
    table: ContingencyTable,
    discordant: u64,
    test: &'static str,
    p_value: f64,
}

#[derive(Serialize)]
struct SynthOutput {
    files: Vec<InputDigest>,
}

fn relative_entry(label: &str, file: &str) -> Value {
    serde_json::json!({ "label": label, "files": [file] })
}

fn run_synth(kind: &SynthKind) -> Result<String> {
    let mut written: Vec<PathBuf> = Vec::new();
    match kind {
        SynthKind::Grid {
            bias,
            noise,
            episodes,
            episode_len,
            grid_size,
            layout_seed,
            seed,
            out,
        } => {
            let options = GridOptions {
                grid_size: *grid_size,
                episode_len: *episode_len,
                layout_seed: *layout_seed,
                ..GridOptions::default()
            };
            let styles = generate_grid_styles_with(bias, noise, *episodes, &options, *seed)?;
            fs::create_dir_all(out).map_err(|e| io_context(e, out))?;
            let mut grid = Vec::new();
            for (r, row) in styles.datasets.iter().enumerate() {
                let mut entries = Vec::new();
                for (c, ds) in row.iter().enumerate() {
                    let name = format!("r{r}c{c}.jsonl");
                    let path = out.join(&name);
                    write_log(&path, &ds.records)?;
                    written.push(path);
                    entries.push(relative_entry(ds.label.as_deref().unwrap_or(&name), &name));
                }
                grid.push(entries);
            }
            let flat: Vec<Value> = grid.iter().flatten().cloned().collect();
            for (name, body) in [
                ("grid.json", serde_json::json!({ "grid": grid })),
                ("styles.json", serde_json::json!({ "styles": flat })),
            ] {
                let path = out.join(name);
                emit(Some(&path), &to_json(&body)?)?;
                written.push(path);
            }
        }
        SynthKind::Bandit { probs, n, seed, out } => {
            let ds = generate_bandit(&BanditStyle::new(probs.clone())?, *n, *seed)?;
            write_log(out, &ds.records)?;
            written.push(out.clone());
        }
        SynthKind::Board {
            temperatures,
            episodes,
            max_steps,
            table_seed,
            seed,
            out,
        } => {
            let game = BoardGame {
                table_seed: *table_seed,
                max_steps: *max_steps,
            };
            let per_z = generate_board_game(&game, temperatures, *episodes, *seed)?;
            for (z, trajs) in temperatures.iter().zip(per_z) {
                let dir = out.join(format!("z{z}"));
                fs::create_dir_all(&dir).map_err(|e| io_context(e, &dir))?;
                for (e, t) in trajs.iter().enumerate() {
                    let path = dir.join(format!("ep{e:04}.jsonl"));
                    write_log(&path, t.steps())?;
                    written.push(path);
                }
            }
        }
    }
    let files = written
        .into_iter()
        .map(|path| Ok(InputDigest { sha256: digest_file(&path)?, path }))
        .collect::<Result<_>>()?;
    to_json(&SynthOutput { files })
}

/// Runs one subcommand to completion, writing its output.
pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Measure(a) => {
            let s = &a.scoring;
            let encoders = s.encoders()?;
            let da = encode_dataset(&encoders, &s.pad(load_dataset(&a.dataset_a)?)?)?;
            let db = encode_dataset(&encoders, &s.pad(load_dataset(&a.dataset_b)?)?)?;
            let report = s.measure(&a.measure)?.compare(&da, &db)?;
            let text = to_json(&MeasureOutput {
                encoder: &encoders.spec_string(),
                report,
            })?;
            emit(a.out.as_deref(), &text)
        }
        Command::Classify(a) => {
            let s = &a.scoring;
            let pad_all = |list: Vec<(String, StyleDataset)>| -> Result<Vec<(String, StyleDataset)>> {
                list.into_iter().map(|(l, ds)| Ok((l, s.pad(ds)?))).collect()
            };
            let styles = pad_all(load_styles(&a.styles)?)?;
            let queries = a.queries.as_deref().map(load_styles).transpose()?.map(pad_all).transpose()?;
            if a.measure.is_empty() {
                return Err(Error::InvalidConfig("no measures given".into()));
            }
            let first = s.measure(&a.measure[0])?;
            let mut task = ClassificationTask::new(&styles, queries.as_deref(), &s.encoders()?, first)?;
            task.rounds = a.rounds;
            task.seed = a.seed;
            task.disjoint = !a.overlap;
            let mut rows = Vec::new();
            for name in &a.measure {
                rows.extend(accuracy_sweep(&task.with_measure(s.measure(name)?), &a.sizes)?);
            }
            emit(a.out.as_deref(), &sweep_csv(&rows))
        }
        Command::Spectrum(a) => {
            let target = target_cell(&a.target)?;
            let report = match (&a.grid, &a.values) {
                (_, Some(values)) => {
                    let values = read_values_csv(values)?;
                    let consistency = consistency_count(&values, target)?;
                    SpectrumReport {
                        measure: "values".into(),
                        target,
                        values,
                        consistency,
                    }
                }
                (Some(grid), None) => {
                    let s = &a.scoring;
                    let grid = load_grid(grid)?
                        .into_iter()
                        .map(|row| row.into_iter().map(|ds| s.pad(ds)).collect())
                        .collect::<Result<Vec<Vec<_>>>>()?;
                    spectrum_consistency(
                        &grid,
                        target,
                        &s.measure(&a.measure)?,
                        &s.encoders()?,
                        a.rounds,
                        a.size,
                        a.seed,
                    )?
                }
                (None, None) => return Err(Error::InvalidConfig("give a grid file or --values".into())),
            };
            emit(a.out.as_deref(), &to_json(&report)?)
        }
        Command::Diversity(a) => {
            let s = &a.scoring;
            let trajectories = load_trajectory_dir(&a.dir)?;
            let trajectories = match s.action_space {
                Some(_) => trajectories
                    .into_iter()
                    .map(|t| {
                        let id = t.id().to_string();
                        crate::model::Trajectory::new(id, s.pad(t.to_dataset())?.records)
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => trajectories,
            };
            let cfg = DiversityConfig::new(s.measure(&a.measure)?, a.threshold, s.encoders()?)?;
            let r = diverse_count(&trajectories, &cfg)?;
            let text = to_json(&DiversityOutput {
                measure: cfg.measure.name(),
                encoder: cfg.encoders.spec_string(),
                threshold: cfg.threshold,
                diverse: r.diverse,
                total: r.total,
                flags: r.flags,
            })?;
            emit(a.out.as_deref(), &text)
        }
        Command::Synth(a) => {
            let text = run_synth(&a.kind)?;
            emit(None, &text)
        }
        Command::Mcnemar(a) => {
            let table = ContingencyTable {
                both_correct: a.both_correct,
                a_only: a.a_only,
                b_only: a.b_only,
                both_wrong: a.both_wrong,
            };
            let (test, p_value) = if a.chi_square {
                ("chi-square", mcnemar_chi_square(&table))
            } else {
                ("exact", mcnemar_test(&table))
            };
            let text = to_json(&McnemarOutput {
                discordant: table.discordant(),
                table,
                test,
                p_value,
            })?;
            emit(a.out.as_deref(), &text)
        }
        Command::Validate(a) => {
            let ds = load_dataset(&a.dataset)?;
            let report = validate_dataset(&ds);
            emit(a.out.as_deref(), &to_json(&report)?)?;
            if report.is_valid() {
                Ok(())
            } else {
                Err(Error::InvalidDataset(report.summary()))
            }
        }
        Command::Rerun(_) => Err(Error::InvalidConfig("rerun cannot be nested".into())),
    }
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(0) => Err(Error::InvalidConfig("worker count must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}"))),
        None => Ok(f()),
    }
}

/// Resolves `rerun` into the recorded command, checking that inputs are unchanged.
fn resolve(cli: &Cli) -> Result<Command> {
    let Command::Rerun(r) = &cli.command else {
        return Ok(cli.command.clone());
    };
    let manifest = RunManifest::load(&r.manifest)?;
    let mut cmd = manifest.config;
    for recorded in &manifest.inputs {
        let now = digest_file(&recorded.path)?;
        if now != recorded.sha256 {
            return Err(Error::InvalidConfig(format!(
                "input {} changed since the manifest was written",
                recorded.path.display()
            )));
        }
    }
    if let Some(out) = &r.out {
        cmd.set_out(out.clone());
    }
    Ok(cmd)
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<()> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let clock = Instant::now();
    let cmd = resolve(cli)?;
    let inputs = match &cli.manifest {
        Some(_) => input_digests(&cmd)?,
        None => Vec::new(),
    };
    let result = in_pool(cli.workers, || execute(&cmd))?;
    if let Some(path) = &cli.manifest {
        let manifest = RunManifest {
            subcommand: cmd.name().to_string(),
            seeds: cmd.seeds(),
            config: cmd,
            argv: argv.to_vec(),
            inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            workers: cli.workers,
            started_unix_ms: started,
            wall_clock_ms: clock.elapsed().as_millis(),
        };
        emit(Some(path), &to_json(&manifest)?)?;
    }
    result
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::NoComparableStates => EXIT_NO_COMPARABLE_STATES,
        _ => EXIT_VALIDATION,
    }
}

/// One-line JSON description of a failure for stderr.
pub fn error_json(e: &Error) -> String {
    let kind = match exit_code(e) {
        EXIT_IO => "io",
        EXIT_NO_COMPARABLE_STATES => "no_comparable_states",
        _ => "validation",
    };
    serde_json::json!({ "error": kind, "message": e.to_string() }).to_string()
}

/// Parses `argv`, runs and returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
