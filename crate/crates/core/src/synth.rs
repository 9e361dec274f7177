//! Synthetic environments with known styles: a gridworld bias × noise grid, a
//! single-state bandit and a small deterministic sliding-tile board.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Action, ObservationTensor, StepRecord, StyleDataset, Trajectory};

/// Derives an independent stream seed for item `index` of a seeded family.
pub fn stream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")))
    }
}

// Gridworld

pub const GRID_ACTIONS: u32 = 4;
const UP: usize = 0;
const RIGHT: usize = 1;
const DOWN: usize = 2;
const LEFT: usize = 3;

pub const DEFAULT_GRID_SIZE: usize = 8;
pub const DEFAULT_EPISODE_LEN: usize = 16;
pub const DEFAULT_LAYOUT_SEED: u64 = 77;
pub const DEFAULT_BIAS_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_NOISE_LEVELS: [f64; 5] = [0.0, 0.15, 0.3, 0.45, 0.6];

/// Where each episode starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMode {
    /// A uniformly random cell.
    Random,
    /// A uniformly random row of the leftmost column.
    LeftColumn,
    Corner,
}

/// What happens when a move leaves the board.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Edges wrap around.
    Torus,
    /// The agent stays put.
    Walls,
}

/// How the bias and noise levels turn into per-cell behavior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    /// Every cell carries two fixed thresholds, stratified over the board and
    /// shared by all styles. A cell prefers "right" when its bias threshold is
    /// below `target_bias` (else "down") and moves uniformly at random when its
    /// noise threshold is below `noise_level` (else takes its preferred move).
    Quenched,
    /// The same mixture at every cell, drawn afresh each step.
    Mixture,
}

/// Biased walk on a `G × G` board. Averaged over cells, both policy modes
/// play a uniform move with probability `noise_level` and otherwise "right"
/// with probability `target_bias` and "down" with the rest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridworldStyle {
    pub grid_size: usize,
    pub target_bias: f64,
    pub noise_level: f64,
    pub seed: u64,
    pub start: StartMode,
    pub boundary: Boundary,
    pub policy_mode: PolicyMode,
    /// Seeds the per-cell thresholds of [`PolicyMode::Quenched`].
    pub layout_seed: u64,
}

impl GridworldStyle {
    pub fn new(target_bias: f64, noise_level: f64, seed: u64) -> Result<Self> {
        check_unit("target bias", target_bias)?;
        check_unit("noise level", noise_level)?;
        Ok(Self {
            grid_size: DEFAULT_GRID_SIZE,
            target_bias,
            noise_level,
            seed,
            start: StartMode::Random,
            boundary: Boundary::Torus,
            policy_mode: PolicyMode::Quenched,
            layout_seed: DEFAULT_LAYOUT_SEED,
        })
    }

    pub fn with_start(mut self, start: StartMode) -> Self {
        self.start = start;
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_policy_mode(mut self, mode: PolicyMode) -> Self {
        self.policy_mode = mode;
        self
    }

    /// Action probabilities (up, right, down, left) averaged over cells.
    pub fn policy(&self) -> [f64; 4] {
        let u = self.noise_level / 4.0;
        let mut p = [u; 4];
        p[RIGHT] += (1.0 - self.noise_level) * self.target_bias;
        p[DOWN] += (1.0 - self.noise_level) * (1.0 - self.target_bias);
        p
    }

    /// Per-cell (bias, noise) thresholds in row-major order. Cells take the
    /// points of a Hammersley set in seeded order: bias thresholds are the
    /// stratified ranks `(i + 0.5) / G²` and noise thresholds their bit-reversed
    /// counterparts, so every bias band spans the noise range evenly.
    pub fn cell_thresholds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid_size * self.grid_size;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (stream_seed(self.layout_seed, i as u64), i));
        let bits = usize::BITS - n.saturating_sub(1).leading_zeros();
        let slots = (1usize << bits) as f64;
        let mut hb = vec![0.0; n];
        let mut hn = vec![0.0; n];
        for (rank, &i) in order.iter().enumerate() {
            hb[i] = (rank as f64 + 0.5) / n as f64;
            let rev = if bits == 0 { 0 } else { rank.reverse_bits() >> (usize::BITS - bits) };
            hn[i] = (rev as f64 + 0.5) / slots;
        }
        (hb, hn)
    }

    /// Exact action probabilities at `(row, col)`.
    pub fn cell_policy(&self, row: usize, col: usize) -> [f64; 4] {
        match self.policy_mode {
            PolicyMode::Mixture => self.policy(),
            PolicyMode::Quenched => {
                let (hb, hn) = self.cell_thresholds();
                let i = row * self.grid_size + col;
                if hn[i] < self.noise_level {
                    [0.25; 4]
                } else {
                    let mut p = [0.0; 4];
                    p[if hb[i] < self.target_bias { RIGHT } else { DOWN }] = 1.0;
                    p
                }
            }
        }
    }

    /// `[1, 1, G, G]` one-hot image of the agent's cell.
    pub fn render(&self, row: usize, col: usize) -> ObservationTensor {
        let g = self.grid_size;
        let mut pixels = vec![0u8; g * g];
        pixels[row * g + col] = 255;
        ObservationTensor::from_bytes(vec![1, 1, g, g], pixels).expect("one-hot image")
    }

    fn step(&self, r: usize, c: usize, action: usize) -> (usize, usize) {
        let g = self.grid_size;
        match (self.boundary, action) {
            (Boundary::Torus, UP) => ((r + g - 1) % g, c),
            (Boundary::Torus, RIGHT) => (r, (c + 1) % g),
            (Boundary::Torus, DOWN) => ((r + 1) % g, c),
            (Boundary::Torus, LEFT) => (r, (c + g - 1) % g),
            (Boundary::Walls, UP) => (r.saturating_sub(1), c),
            (Boundary::Walls, RIGHT) => (r, (c + 1).min(g - 1)),
            (Boundary::Walls, DOWN) => ((r + 1).min(g - 1), c),
            (Boundary::Walls, LEFT) => (r, c.saturating_sub(1)),
            _ => unreachable!("grid actions are 0..4"),
        }
    }

    pub fn rollout(&self, episodes: usize, episode_len: usize) -> Result<StyleDataset> {
        if self.grid_size == 0 {
            return Err(Error::InvalidConfig("grid size must be positive".into()));
        }
        let g = self.grid_size;
        let weights = WeightedIndex::new(self.policy())
            .map_err(|e| Error::InvalidConfig(format!("policy: {e}")))?;
        let (hb, hn) = self.cell_thresholds();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut records = Vec::with_capacity(episodes * episode_len);
        for ep in 0..episodes {
            let (mut r, mut c) = match self.start {
                StartMode::LeftColumn => (rng.gen_range(0..g), 0),
                StartMode::Random => (rng.gen_range(0..g), rng.gen_range(0..g)),
                StartMode::Corner => (0, 0),
            };
            for t in 0..episode_len {
                let a = match self.policy_mode {
                    PolicyMode::Mixture => weights.sample(&mut rng),
                    PolicyMode::Quenched => {
                        let i = r * g + c;
                        if hn[i] < self.noise_level {
                            rng.gen_range(0..4)
                        } else if hb[i] < self.target_bias {
                            RIGHT
                        } else {
                            DOWN
                        }
                    }
                };
                records.push(StepRecord {
                    observation: self.render(r, c),
                    action: Action::discrete(a as u32, GRID_ACTIONS)?,
                    trajectory_id: Some(format!("ep{ep}")),
                    step_index: Some(t as u64),
                });
                (r, c) = self.step(r, c, a);
            }
        }
        Ok(StyleDataset::new(Some(style_label(self.target_bias, self.noise_level)), records))
    }
}

pub fn style_label(bias: f64, noise: f64) -> String {
    format!("bias={bias},noise={noise}")
}

/// Styles laid out with noise levels as rows and bias levels as columns.
#[derive(Clone, Debug)]
pub struct GridStyles {
    pub bias_levels: Vec<f64>,
    pub noise_levels: Vec<f64>,
    pub datasets: Vec<Vec<StyleDataset>>,
}

impl GridStyles {
    /// `(label, dataset)` pairs in row-major order.
    pub fn labeled(&self) -> Vec<(String, StyleDataset)> {
        self.datasets
            .iter()
            .flatten()
            .map(|ds| (ds.label.clone().unwrap_or_default(), ds.clone()))
            .collect()
    }
}

/// Shared settings for every style of a generated grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridOptions {
    pub grid_size: usize,
    pub episode_len: usize,
    pub start: StartMode,
    pub boundary: Boundary,
    pub policy_mode: PolicyMode,
    pub layout_seed: u64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            episode_len: DEFAULT_EPISODE_LEN,
            start: StartMode::Random,
            boundary: Boundary::Torus,
            policy_mode: PolicyMode::Quenched,
            layout_seed: DEFAULT_LAYOUT_SEED,
        }
    }
}

pub fn generate_grid_styles(
    levels_bias: &[f64],
    levels_noise: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<GridStyles> {
    generate_grid_styles_with(levels_bias, levels_noise, episodes, &GridOptions::default(), seed)
}

pub fn generate_grid_styles_with(
    levels_bias: &[f64],
    levels_noise: &[f64],
    episodes: usize,
    options: &GridOptions,
    seed: u64,
) -> Result<GridStyles> {
    if levels_bias.is_empty() || levels_noise.is_empty() {
        return Err(Error::InvalidConfig("level lists must be non-empty".into()));
    }
    let cols = levels_bias.len();
    let cells: Vec<(usize, f64, f64)> = levels_noise
        .iter()
        .enumerate()
        .flat_map(|(r, &n)| levels_bias.iter().enumerate().map(move |(c, &b)| (r * cols + c, b, n)))
        .collect();
    let flat: Vec<StyleDataset> = cells
        .into_par_iter()
        .map(|(i, b, n)| {
            let mut style = GridworldStyle::new(b, n, stream_seed(seed, i as u64))?
                .with_start(options.start)
                .with_boundary(options.boundary)
                .with_policy_mode(options.policy_mode);
            style.grid_size = options.grid_size;
            style.layout_seed = options.layout_seed;
            style.rollout(episodes, options.episode_len)
        })
        .collect::<Result<_>>()?;
    Ok(GridStyles {
        bias_levels: levels_bias.to_vec(),
        noise_levels: levels_noise.to_vec(),
        datasets: flat.chunks(cols).map(|c| c.to_vec()).collect(),
    })
}

// Bandit

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BanditStyle {
    probs: Vec<f64>,
}

impl BanditStyle {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("bandit probabilities {probs:?} are not a simplex point")));
        }
        Ok(Self { probs })
    }

    pub fn arms(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `n` pulls sharing a single constant observation.
pub fn generate_bandit(style: &BanditStyle, n: usize, seed: u64) -> Result<StyleDataset> {
    let weights =
        WeightedIndex::new(&style.probs).map_err(|e| Error::InvalidConfig(format!("bandit: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = ObservationTensor::from_bytes(vec![1], vec![0])?;
    let k = style.arms() as u32;
    let records = (0..n)
        .map(|t| {
            let mut r = StepRecord::new(obs.clone(), Action::discrete(weights.sample(&mut rng) as u32, k)?);
            r.step_index = Some(t as u64);
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(StyleDataset::new(None, records))
}

// Sliding-tile board

pub const BOARD_SIDE: usize = 3;
pub const BOARD_ACTIONS: u32 = 4;
pub const BOARD_TEMPERATURES: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const DEFAULT_MAX_STEPS: usize = 64;

/// Tile exponents in row-major order; 0 is empty.
pub type Board = [u8; BOARD_SIDE * BOARD_SIDE];

/// A 2048-like game on a 3×3 board. New tiles appear at the first empty cell,
/// so the only randomness is the policy's. Advantages come from a fixed
/// pseudo-random table keyed by `table_seed`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoardGame {
    pub table_seed: u64,
    pub max_steps: usize,
}

impl Default for BoardGame {
    fn default() -> Self {
        Self {
            table_seed: 2048,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

fn slide_line(line: [u8; BOARD_SIDE]) -> [u8; BOARD_SIDE] {
    let tiles: Vec<u8> = line.iter().copied().filter(|&v| v != 0).collect();
    let mut out = [0u8; BOARD_SIDE];
    let (mut i, mut w) = (0, 0);
    while i < tiles.len() {
        if i + 1 < tiles.len() && tiles[i] == tiles[i + 1] {
            out[w] = tiles[i].saturating_add(1);
            i += 2;
        } else {
            out[w] = tiles[i];
            i += 1;
        }
        w += 1;
    }
    out
}

fn cell(action: usize, line: usize, k: usize) -> usize {
    let s = BOARD_SIDE;
    match action {
        0 => k * s + line,           // up: column `line`, from the top
        1 => line * s + (s - 1 - k), // right: row `line`, from the right
        2 => (s - 1 - k) * s + line, // down
        3 => line * s + k,           // left
        _ => unreachable!(),
    }
}

impl BoardGame {
    pub fn initial(&self) -> Board {
        let mut b = [0u8; BOARD_SIDE * BOARD_SIDE];
        b[0] = 1;
        b[1] = 1;
        b
    }

    /// Board after sliding in direction `action` (up, right, down, left), before spawning.
    pub fn slide(board: &Board, action: usize) -> Board {
        let mut out = [0u8; BOARD_SIDE * BOARD_SIDE];
        for line in 0..BOARD_SIDE {
            let mut vals = [0u8; BOARD_SIDE];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = board[cell(action, line, k)];
            }
            for (k, v) in slide_line(vals).into_iter().enumerate() {
                out[cell(action, line, k)] = v;
            }
        }
        out
    }

    /// Moves that change the board, with the resulting board after spawning.
    pub fn legal_moves(board: &Board) -> Vec<(usize, Board)> {
        (0..BOARD_ACTIONS as usize)
            .filter_map(|a| {
                let mut next = Self::slide(board, a);
                if next == *board {
                    return None;
                }
                if let Some(empty) = next.iter().position(|&v| v == 0) {
                    next[empty] = 1;
                }
                Some((a, next))
            })
            .collect()
    }

    fn hash_unit(&self, board: &Board, salt: u8) -> f64 {
        let mut h = Sha256::new();
        h.update(self.table_seed.to_le_bytes());
        h.update(board);
        h.update([salt]);
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Advantage of each legal action: the best is 0, and successive gaps are
    /// log-uniform in `[1e-4, 1]`.
    pub fn advantages(&self, board: &Board, actions: &[usize]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..actions.len()).collect();
        order.sort_by(|&i, &j| {
            let hi = self.hash_unit(board, actions[i] as u8);
            let hj = self.hash_unit(board, actions[j] as u8);
            hi.total_cmp(&hj).then(i.cmp(&j))
        });
        let mut adv = vec![0.0; actions.len()];
        let mut level = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            if rank > 0 {
                level -= 10f64.powf(-4.0 * self.hash_unit(board, 16 + rank as u8));
            }
            adv[i] = level;
        }
        adv
    }

    /// Rolls out one episode of `Softmax(A/z)` play.
    pub fn play<R: Rng>(&self, z: f64, id: String, rng: &mut R) -> Result<Trajectory> {
        let mut board = self.initial();
        let mut steps = Vec::new();
        for t in 0..self.max_steps {
            let moves = Self::legal_moves(&board);
            if moves.is_empty() {
                break;
            }
            let actions: Vec<usize> = moves.iter().map(|m| m.0).collect();
            let pi = softmax(&self.advantages(&board, &actions), z)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = pi.len() - 1;
            for (i, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            steps.push(StepRecord {
                observation: ObservationTensor::from_bytes(vec![BOARD_SIDE, BOARD_SIDE], board.to_vec())?,
                action: Action::discrete(actions[pick] as u32, BOARD_ACTIONS)?,
                trajectory_id: Some(id.clone()),
                step_index: Some(t as u64),
            });
            board = moves[pick].1;
        }
        Trajectory::new(id, steps)
    }
}

/// `exp(x/z)` normalized, computed relative to the maximum.
pub fn softmax(values: &[f64], z: f64) -> Result<Vec<f64>> {
    if !(z > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {z}")));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|&v| ((v - max) / z).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// `episodes` trajectories per temperature. Episode `e` draws from the same
/// random stream at every temperature.
pub fn generate_board_game(
    game: &BoardGame,
    temperatures: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<Trajectory>>> {
    temperatures
        .par_iter()
        .map(|&z| {
            (0..episodes)
                .map(|e| {
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, e as u64));
                    game.play(z, format!("z={z}/ep{e}"), &mut rng)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cardinality_and_labels() {
        let g = generate_grid_styles(&DEFAULT_BIAS_LEVELS, &DEFAULT_NOISE_LEVELS, 4, 1).unwrap();
        assert_eq!(g.datasets.len(), 5);
        assert!(g.datasets.iter().all(|r| r.len() == 5));
        let labeled = g.labeled();
        assert_eq!(labeled.len(), 25);
        assert_eq!(labeled[1].0, "bias=0.3,noise=0");
        assert_eq!(labeled[0].1.len(), 4 * DEFAULT_EPISODE_LEN);
    }

    #[test]
    fn grid_generation_is_deterministic() {
        let a = generate_grid_styles(&[0.2, 0.8], &[0.1], 3, 9).unwrap();
        let b = generate_grid_styles(&[0.2, 0.8], &[0.1], 3, 9).unwrap();
        assert_eq!(a.datasets, b.datasets);
        let c = generate_grid_styles(&[0.2, 0.8], &[0.1], 3, 10).unwrap();
        assert_ne!(a.datasets, c.datasets);
    }

    #[test]
    fn policy_is_a_distribution() {
        let s = GridworldStyle::new(0.7, 0.3, 0).unwrap();
        let p = s.policy();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[RIGHT] - (0.075 + 0.7 * 0.7)).abs() < 1e-15);
        assert!(GridworldStyle::new(1.2, 0.0, 0).is_err());
    }

    fn cell_of(r: &StepRecord) -> usize {
        r.observation.raw_bytes().iter().position(|&v| v == 255).unwrap()
    }

    #[test]
    fn deterministic_walk_visits_distinct_cells_until_it_revisits() {
        for mode in [PolicyMode::Quenched, PolicyMode::Mixture] {
            let s = GridworldStyle::new(1.0, 0.0, 5).unwrap().with_policy_mode(mode);
            let ds = s.rollout(3, 12).unwrap();
            assert!(ds.records.iter().all(|r| matches!(r.action, Action::Discrete { index: 1, .. })));
            for ep in ds.records.chunks(12) {
                let cells: Vec<usize> = ep.iter().map(cell_of).collect();
                let distinct: std::collections::HashSet<_> = cells[..8].iter().collect();
                assert_eq!(distinct.len(), 8);
                assert_eq!(cells[8], cells[0]);
            }
            let walled = s.clone().with_boundary(Boundary::Walls).rollout(1, 12).unwrap();
            let cols: Vec<usize> = walled.records.iter().map(|r| cell_of(r) % 8).collect();
            let first_wall = cols.iter().position(|&c| c == 7).unwrap();
            assert!(cols[first_wall..].iter().all(|&c| c == 7));
        }
    }

    fn action_marginal(ds: &StyleDataset) -> [f64; 4] {
        let mut m = [0.0; 4];
        for r in &ds.records {
            if let Action::Discrete { index, .. } = r.action {
                m[index as usize] += 1.0 / ds.len() as f64;
            }
        }
        m
    }

    #[test]
    fn full_noise_hides_the_bias() {
        for start in [StartMode::Random, StartMode::LeftColumn] {
            let a = GridworldStyle::new(0.1, 1.0, 1).unwrap().with_start(start).rollout(625, 16).unwrap();
            let b = GridworldStyle::new(0.9, 1.0, 2).unwrap().with_start(start).rollout(625, 16).unwrap();
            let (ma, mb) = (action_marginal(&a), action_marginal(&b));
            let tv: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
            assert!(tv < 0.05, "{tv}");
        }
    }

    #[test]
    fn quenched_thresholds_are_stratified() {
        let s = GridworldStyle::new(0.3, 0.45, 0).unwrap();
        let (hb, hn) = s.cell_thresholds();
        let expect: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) / 64.0).collect();
        for h in [&hb, &hn] {
            let mut sorted = h.clone();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(sorted, expect);
        }
        assert_ne!(hb, hn);
        // Each eighth of the bias range holds one cell from each eighth of the noise range.
        let mut bands = std::collections::HashSet::new();
        for (b, n) in hb.iter().zip(&hn) {
            bands.insert(((b * 8.0) as usize, (n * 8.0) as usize));
        }
        assert_eq!(bands.len(), 64);
        // Cell-averaged policy equals the mixture marginal up to stratification.
        let mut avg = [0.0; 4];
        for r in 0..8 {
            for c in 0..8 {
                for (a, p) in avg.iter_mut().zip(s.cell_policy(r, c)) {
                    *a += p / 64.0;
                }
            }
        }
        for (a, p) in avg.iter().zip(s.policy()) {
            assert!((a - p).abs() < 0.05, "{avg:?}");
        }
        // Thresholds do not depend on the style's own seed.
        assert_eq!(GridworldStyle::new(0.9, 0.0, 123).unwrap().cell_thresholds().0, hb);
    }

    #[test]
    fn bandit_shape() {
        let style = BanditStyle::new(vec![0.25, 0.75]).unwrap();
        let ds = generate_bandit(&style, 200, 3).unwrap();
        assert_eq!(ds.len(), 200);
        let first = ds.records[0].observation.clone();
        assert!(ds.records.iter().all(|r| r.observation == first));
        assert!(BanditStyle::new(vec![0.5, 0.6]).is_err());
        assert!(BanditStyle::new(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn slides_and_merges() {
        let b: Board = [1, 1, 2, 0, 2, 2, 3, 0, 3];
        let left = BoardGame::slide(&b, 3);
        assert_eq!(left, [2, 2, 0, 3, 0, 0, 4, 0, 0]);
        let right = BoardGame::slide(&b, 1);
        assert_eq!(right, [0, 2, 2, 0, 0, 3, 0, 0, 4]);
        let up = BoardGame::slide(&b, 0);
        assert_eq!(up, [1, 1, 3, 3, 2, 3, 0, 0, 0]);
        let down = BoardGame::slide(&b, 2);
        assert_eq!(down, [0, 0, 0, 1, 1, 3, 3, 2, 3]);
    }

    #[test]
    fn softmax_normalizes() {
        let game = BoardGame::default();
        let board = game.initial();
        let moves = BoardGame::legal_moves(&board);
        let actions: Vec<usize> = moves.iter().map(|m| m.0).collect();
        let adv = game.advantages(&board, &actions);
        assert_eq!(adv.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0.0);
        for z in BOARD_TEMPERATURES.iter().chain(&[1e-6, 1.0, 100.0]) {
            let p = softmax(&adv, *z).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(softmax(&adv, 0.0).is_err());
    }

    #[test]
    fn near_zero_temperature_is_greedy() {
        let trajs = generate_board_game(&BoardGame::default(), &[1e-6], 6, 11).unwrap();
        let first: Vec<_> = trajs[0][0].steps().iter().map(|s| s.action.clone()).collect();
        assert!(first.len() > 1);
        for t in &trajs[0] {
            let acts: Vec<_> = t.steps().iter().map(|s| s.action.clone()).collect();
            assert_eq!(acts, first);
        }
    }
}
