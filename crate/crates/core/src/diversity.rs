//! Counting trajectories that are novel with respect to every earlier one.

use serde::Serialize;

use crate::encoders::{encode_dataset, EncodedDataset, MultiscaleEncoder};
use crate::error::{Error, Result};
use crate::harness::score_candidates;
use crate::measures::Measure;
use crate::model::Trajectory;

pub const DEFAULT_THRESHOLD: f64 = 0.2;
pub const THRESHOLD_PRESETS: [f64; 3] = [0.5, 0.2, 0.05];
pub const DEFAULT_ENCODER: &str = "identity,passthrough";

#[derive(Clone, Debug)]
pub struct DiversityConfig {
    pub measure: Measure<f64>,
    /// Similarity at or above which a trajectory counts as already seen.
    pub threshold: f64,
    pub encoders: MultiscaleEncoder,
}

impl DiversityConfig {
    /// Thresholds above 1 are clamped to 1.
    pub fn new(measure: Measure<f64>, threshold: f64, encoders: MultiscaleEncoder) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "diversity threshold must be a similarity in [0, 1], got {threshold}"
            )));
        }
        Ok(Self {
            measure,
            threshold: threshold.min(1.0),
            encoders,
        })
    }

    pub fn preset(threshold: f64) -> Result<Self> {
        Self::new(
            Measure::named("ps-union")?,
            threshold,
            MultiscaleEncoder::parse(DEFAULT_ENCODER)?,
        )
    }
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self::preset(DEFAULT_THRESHOLD).expect("default diversity config")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DiversityResult {
    pub diverse: usize,
    pub total: usize,
    pub flags: Vec<bool>,
}

/// The loop itself: `similarities(i)` yields the similarity of trajectory `i`
/// to each of `0..i`. Every trajectory joins the stored set.
pub fn diverse_count_by<F>(n: usize, threshold: f64, mut similarities: F) -> Result<DiversityResult>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        let sims = if i == 0 { Vec::new() } else { similarities(i)? };
        flags.push(!sims.iter().any(|&s| s >= threshold));
    }
    Ok(DiversityResult {
        diverse: flags.iter().filter(|&&f| f).count(),
        total: n,
        flags,
    })
}

/// Similarity of `query` to each stored dataset, scored as one batch. Pairs
/// without comparable states get similarity 0.
pub fn similarities_to(
    measure: &Measure<f64>,
    query: &EncodedDataset,
    stored: &[EncodedDataset],
) -> Result<Vec<f64>> {
    let refs: Vec<&EncodedDataset> = stored.iter().collect();
    Ok(score_candidates(measure, query, &refs)?
        .into_iter()
        .map(|s| s.unwrap_or(0.0))
        .collect())
}

pub fn diverse_count(trajectories: &[Trajectory], cfg: &DiversityConfig) -> Result<DiversityResult> {
    if trajectories.is_empty() {
        return Err(Error::InvalidConfig("no trajectories to compare".into()));
    }
    let encoded = trajectories
        .iter()
        .map(|t| encode_dataset(&cfg.encoders, &t.to_dataset()))
        .collect::<Result<Vec<_>>>()?;
    diverse_count_by(encoded.len(), cfg.threshold, |i| {
        similarities_to(&cfg.measure, &encoded[i], &encoded[..i])
    })
}
