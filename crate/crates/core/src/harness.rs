//! Evaluation protocols: zero-shot classification by subsampling, accuracy
//! sweeps, spectrum consistency counting and McNemar tests.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::encoders::{EncodedDataset, EncodedPool, MultiscaleEncoder};
use crate::error::{Error, Result};
use crate::format::g17;
use crate::measures::Measure;
use crate::model::{sample_indices, StyleDataset};

/// Tie-break rule recorded in run manifests.
pub const TIE_BREAK_RULE: &str = "first candidate in declared order";

/// Seed for one round; independent of execution order.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ round as u64
}

/// Candidates, then labelled queries.
type RoundDraw = (Vec<EncodedDataset>, Vec<(String, EncodedDataset)>);

/// Encoded reference styles and, optionally, separate query pools.
#[derive(Clone)]
pub struct ClassificationTask {
    styles: Arc<Vec<(String, EncodedPool)>>,
    queries: Option<Arc<Vec<(String, EncodedPool)>>>,
    pub measure: Measure<f64>,
    pub rounds: usize,
    pub sample_size: usize,
    pub seed: u64,
    /// Draw query and candidate subsamples of one pool without overlap when it is large enough.
    pub disjoint: bool,
}

impl ClassificationTask {
    /// Encodes the pools once. Without `queries`, each style pool also supplies its own query.
    pub fn new(
        styles: &[(String, StyleDataset)],
        queries: Option<&[(String, StyleDataset)]>,
        encoders: &MultiscaleEncoder,
        measure: Measure<f64>,
    ) -> Result<Self> {
        if styles.len() < 2 {
            return Err(Error::InvalidConfig("classification needs at least two styles".into()));
        }
        let encode = |list: &[(String, StyleDataset)]| -> Result<Vec<(String, EncodedPool)>> {
            list.iter()
                .map(|(label, ds)| Ok((label.clone(), EncodedPool::encode(encoders, ds)?)))
                .collect()
        };
        let styles = encode(styles)?;
        let space = styles[0].1.action_space();
        let queries = queries.map(encode).transpose()?;
        for (label, pool) in styles.iter().chain(queries.iter().flatten()) {
            if pool.action_space() != space {
                return Err(Error::SpaceMismatch(
                    format!("{space} ({})", styles[0].0),
                    format!("{} ({label})", pool.action_space()),
                ));
            }
        }
        Ok(Self {
            styles: Arc::new(styles),
            queries: queries.map(Arc::new),
            measure,
            rounds: 100,
            sample_size: 512,
            seed: 0,
            disjoint: true,
        })
    }

    pub fn labels(&self) -> Vec<&str> {
        self.styles.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn with_measure(&self, measure: Measure<f64>) -> Self {
        Self {
            measure,
            ..self.clone()
        }
    }

    fn min_pool(&self) -> usize {
        self.styles
            .iter()
            .chain(self.queries.iter().flat_map(|q| q.iter()))
            .map(|(_, p)| p.len())
            .min()
            .unwrap_or(0)
    }

    /// Draws this round's candidate and query subsamples.
    fn draw(&self, round_seed: u64) -> Result<RoundDraw> {
        let n = self.sample_size;
        if n == 0 {
            return Err(Error::InvalidConfig("sample size must be positive".into()));
        }
        if n > self.min_pool() {
            return Err(Error::SampleExhausted {
                requested: n,
                available: self.min_pool(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
        let mut candidates = Vec::with_capacity(self.styles.len());
        let mut queries = Vec::new();
        match &self.queries {
            None => {
                for (label, pool) in self.styles.iter() {
                    if self.disjoint && 2 * n <= pool.len() {
                        let idx = sample_indices(&mut rng, pool.len(), 2 * n, false)?;
                        queries.push((label.clone(), pool.gather(&idx[..n])));
                        candidates.push(pool.gather(&idx[n..]));
                    } else {
                        let c = sample_indices(&mut rng, pool.len(), n, false)?;
                        let q = sample_indices(&mut rng, pool.len(), n, false)?;
                        candidates.push(pool.gather(&c));
                        queries.push((label.clone(), pool.gather(&q)));
                    }
                }
            }
            Some(query_pools) => {
                for (_, pool) in self.styles.iter() {
                    let c = sample_indices(&mut rng, pool.len(), n, false)?;
                    candidates.push(pool.gather(&c));
                }
                for (label, pool) in query_pools.iter() {
                    let q = sample_indices(&mut rng, pool.len(), n, false)?;
                    queries.push((label.clone(), pool.gather(&q)));
                }
            }
        }
        Ok((candidates, queries))
    }
}

/// Index of the highest defined score; undefined scores rank below all others
/// and ties go to the earliest candidate.
pub fn argmax_first(scores: &[Option<f64>]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Scores every candidate for one query; `None` marks "no comparable states".
pub fn score_candidates(
    measure: &Measure<f64>,
    query: &EncodedDataset,
    candidates: &[&EncodedDataset],
) -> Result<Vec<Option<f64>>> {
    measure
        .compare_batch(query, candidates)
        .into_iter()
        .map(|r| match r {
            Ok(report) => Ok(Some(report.value)),
            Err(Error::NoComparableStates) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// One round of classification: `(true_label, predicted_label)` per query.
pub fn classify_round(task: &ClassificationTask, round_seed: u64) -> Result<Vec<(String, String)>> {
    let (candidates, queries) = task.draw(round_seed)?;
    let refs: Vec<&EncodedDataset> = candidates.iter().collect();
    queries
        .iter()
        .map(|(truth, q)| {
            let scores = score_candidates(&task.measure, q, &refs)?;
            let predicted = &task.styles[argmax_first(&scores)].0;
            Ok((truth.clone(), predicted.clone()))
        })
        .collect()
}

fn round_accuracy(pairs: &[(String, String)]) -> f64 {
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    correct as f64 / pairs.len() as f64
}

/// Per-round outcomes for the task's sample size; rounds run in parallel.
pub fn run_rounds(task: &ClassificationTask) -> Result<Vec<Vec<(String, String)>>> {
    (0..task.rounds)
        .into_par_iter()
        .map(|r| classify_round(task, round_seed(task.seed, r)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub measure: String,
    pub size: usize,
    #[serde(flatten)]
    pub accuracy: Summary,
}

/// Accuracy statistics over rounds for each sample size.
pub fn accuracy_sweep(task: &ClassificationTask, sizes: &[usize]) -> Result<Vec<SweepRow>> {
    sizes
        .iter()
        .map(|&size| {
            let t = ClassificationTask {
                sample_size: size,
                ..task.clone()
            };
            let accs: Vec<f64> = run_rounds(&t)?.iter().map(|r| round_accuracy(r)).collect();
            Ok(SweepRow {
                measure: task.measure.name(),
                size,
                accuracy: Summary::of(&accs),
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "measure,size,mean,std,min,max";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let a = &r.accuracy;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.measure,
            r.size,
            g17(a.mean),
            g17(a.std),
            g17(a.min),
            g17(a.max)
        ));
    }
    out
}

/// A row or column is consistent when it strictly rises up to the target's
/// position along that line and strictly falls after it.
pub fn line_consistent(values: &[Option<f64>], peak: usize) -> bool {
    let defined: Option<Vec<f64>> = values.iter().copied().collect();
    let Some(v) = defined else { return false };
    v.windows(2).enumerate().all(|(i, w)| {
        if i < peak {
            w[0] < w[1]
        } else {
            w[0] > w[1]
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Consistency {
    pub rows: Vec<bool>,
    pub columns: Vec<bool>,
    pub count: usize,
}

/// Counts consistent rows and columns of a value grid around `target = (row, col)`.
pub fn consistency_count(grid: &[Vec<Option<f64>>], target: (usize, usize)) -> Result<Consistency> {
    let rows = grid.len();
    let cols = grid.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 || grid.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("grid must be rectangular and non-empty".into()));
    }
    let (tr, tc) = target;
    if tr >= rows || tc >= cols {
        return Err(Error::Shape(format!("target ({tr}, {tc}) outside {rows}x{cols} grid")));
    }
    let row_ok: Vec<bool> = grid.iter().map(|r| line_consistent(r, tc)).collect();
    let col_ok: Vec<bool> = (0..cols)
        .map(|c| {
            let column: Vec<Option<f64>> = grid.iter().map(|r| r[c]).collect();
            line_consistent(&column, tr)
        })
        .collect();
    let count = row_ok.iter().chain(&col_ok).filter(|&&b| b).count();
    Ok(Consistency {
        rows: row_ok,
        columns: col_ok,
        count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub measure: String,
    pub target: (usize, usize),
    /// Mean measure value per cell; `None` if any round had no comparable states.
    pub values: Vec<Vec<Option<f64>>>,
    pub consistency: Consistency,
}

/// Style grid (rows × columns of datasets) with its pools encoded once.
#[derive(Clone)]
pub struct SpectrumGrid {
    pools: Arc<Vec<Vec<EncodedPool>>>,
}

impl SpectrumGrid {
    pub fn new(grid: &[Vec<StyleDataset>], encoders: &MultiscaleEncoder) -> Result<Self> {
        let cols = grid.first().map_or(0, |r| r.len());
        if grid.is_empty() || cols == 0 || grid.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("style grid must be rectangular and non-empty".into()));
        }
        let pools = grid
            .iter()
            .map(|row| row.iter().map(|ds| EncodedPool::encode(encoders, ds)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        Ok(Self {
            pools: Arc::new(pools),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pools.len(), self.pools[0].len())
    }

    fn round_values(
        &self,
        target: (usize, usize),
        measure: &Measure<f64>,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Option<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tpool = &self.pools[target.0][target.1];
        let (query, target_cand) = if 2 * n <= tpool.len() {
            let idx = sample_indices(&mut rng, tpool.len(), 2 * n, false)?;
            (tpool.gather(&idx[..n]), Some(tpool.gather(&idx[n..])))
        } else {
            let idx = sample_indices(&mut rng, tpool.len(), n, false)?;
            (tpool.gather(&idx), None)
        };
        let mut cands = Vec::new();
        for (r, row) in self.pools.iter().enumerate() {
            for (c, pool) in row.iter().enumerate() {
                if (r, c) == target {
                    if let Some(tc) = &target_cand {
                        cands.push(tc.clone());
                        continue;
                    }
                }
                let idx = sample_indices(&mut rng, pool.len(), n, false)?;
                cands.push(pool.gather(&idx));
            }
        }
        let refs: Vec<&EncodedDataset> = cands.iter().collect();
        score_candidates(measure, &query, &refs)
    }

    /// Mean measure from the target's query subsample to every cell over `rounds`.
    pub fn mean_values(
        &self,
        target: (usize, usize),
        measure: &Measure<f64>,
        rounds: usize,
        sample_size: usize,
        seed: u64,
    ) -> Result<Vec<Vec<Option<f64>>>> {
        let (rows, cols) = self.shape();
        if target.0 >= rows || target.1 >= cols {
            return Err(Error::Shape(format!(
                "target ({}, {}) outside {rows}x{cols} grid",
                target.0, target.1
            )));
        }
        if rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be positive".into()));
        }
        let per_round: Vec<Vec<Option<f64>>> = (0..rounds)
            .into_par_iter()
            .map(|r| self.round_values(target, measure, sample_size, round_seed(seed, r)))
            .collect::<Result<_>>()?;
        let cells = rows * cols;
        let means: Vec<Option<f64>> = (0..cells)
            .map(|i| {
                let vals: Option<Vec<f64>> = per_round.iter().map(|v| v[i]).collect();
                vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        Ok(means.chunks(cols).map(|c| c.to_vec()).collect())
    }

    pub fn consistency(
        &self,
        target: (usize, usize),
        measure: &Measure<f64>,
        rounds: usize,
        sample_size: usize,
        seed: u64,
    ) -> Result<SpectrumReport> {
        let values = self.mean_values(target, measure, rounds, sample_size, seed)?;
        let consistency = consistency_count(&values, target)?;
        Ok(SpectrumReport {
            measure: measure.name(),
            target,
            values,
            consistency,
        })
    }
}

/// Encodes the grid and counts consistent lines around `target`.
#[allow(clippy::too_many_arguments)]
pub fn spectrum_consistency(
    grid: &[Vec<StyleDataset>],
    target: (usize, usize),
    measure: &Measure<f64>,
    encoders: &MultiscaleEncoder,
    rounds: usize,
    sample_size: usize,
    seed: u64,
) -> Result<SpectrumReport> {
    SpectrumGrid::new(grid, encoders)?.consistency(target, measure, rounds, sample_size, seed)
}

/// Paired outcomes of two classifiers on the same items.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ContingencyTable {
    pub both_correct: u64,
    pub a_only: u64,
    pub b_only: u64,
    pub both_wrong: u64,
}

impl ContingencyTable {
    /// Tallies paired correctness flags.
    pub fn from_outcomes(a: &[bool], b: &[bool]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::InvalidConfig("paired outcome lists differ in length".into()));
        }
        let mut t = Self::default();
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                (true, true) => t.both_correct += 1,
                (true, false) => t.a_only += 1,
                (false, true) => t.b_only += 1,
                (false, false) => t.both_wrong += 1,
            }
        }
        Ok(t)
    }

    pub fn discordant(&self) -> u64 {
        self.a_only + self.b_only
    }
}

/// Exact two-sided McNemar test: `min(1, 2·P[X ≤ k])` for `X ~ Bin(n, ½)`.
pub fn mcnemar_test(table: &ContingencyTable) -> f64 {
    let n = table.discordant();
    if n == 0 {
        return 1.0;
    }
    let k = table.a_only.min(table.b_only);
    (2.0 * binomial_half_cdf(n, k)).min(1.0)
}

/// `P[X ≤ k]` for `X ~ Bin(n, ½)`.
fn binomial_half_cdf(n: u64, k: u64) -> f64 {
    if n <= 120 {
        // exact integer sum, one rounding at the end
        let mut term: u128 = 1;
        let mut sum: u128 = 1;
        for i in 1..=k as u128 {
            term = term * (n as u128 - i + 1) / i;
            sum += term;
        }
        return sum as f64 * 0.5f64.powi(n as i32);
    }
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_term = 0.0;
    let mut total = ln_half_n.exp();
    for i in 1..=k {
        ln_term += ((n - i + 1) as f64).ln() - (i as f64).ln();
        total += (ln_term + ln_half_n).exp();
    }
    total
}

/// McNemar chi-square with continuity correction, for cross-checking.
pub fn mcnemar_chi_square(table: &ContingencyTable) -> f64 {
    let n = table.discordant();
    if n == 0 {
        return 1.0;
    }
    let diff = (table.a_only as f64 - table.b_only as f64).abs();
    let stat = (diff - 1.0).max(0.0).powi(2) / n as f64;
    libm::erfc((stat / 2.0).sqrt())
}
