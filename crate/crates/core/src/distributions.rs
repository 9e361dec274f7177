//! Per-state action distributions and the policy distances between them.
//!
//! Discrete actions are estimated as plain empirical frequencies; continuous
//! actions as a Gaussian with biased covariance plus `ε·I`. Two families of
//! comparison are available:
//!
//! * 2-Wasserstein. For categorical actions the ground metric is configurable;
//!   under the default 0/1 metric `W₂ = √TV`, under one-hot Euclidean
//!   `W₂ = √(2·TV)`. Gaussians use the Bures closed form.
//! * Bhattacharyya coefficient and distance, with the distance clipped to
//!   [`BHATTACHARYYA_CLIP`].

use serde::Serialize;

use crate::encoders::StateSamples;
use crate::error::{Error, Result};
use crate::linalg::{ln_det_pd, solve_pd, sqrt_psd, Matrix};
use crate::model::Action;
use crate::scalar::Scalar;

/// Upper bound applied to every Bhattacharyya distance.
pub const BHATTACHARYYA_CLIP: f64 = 10.0;

/// Default diagonal regulariser for Gaussian covariances.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Ground metric between discrete action labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundMetric {
    /// `d(i, j) = 1` for `i != j`.
    #[default]
    ZeroOne,
    /// Euclidean distance between one-hot vectors, `√2` for `i != j`.
    OneHotEuclidean,
}

impl GroundMetric {
    pub fn cost(self, i: usize, j: usize) -> f64 {
        match (self, i == j) {
            (_, true) => 0.0,
            (GroundMetric::ZeroOne, false) => 1.0,
            (GroundMetric::OneHotEuclidean, false) => 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDistribution<T> {
    probs: Vec<T>,
    support_count: usize,
}

impl<T: Scalar> CategoricalDistribution<T> {
    /// Frequencies `count(i) / N`, no smoothing.
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total == 0 {
            return Err(Error::EmptySupport);
        }
        let n = T::from_u64(total).expect("count fits");
        Ok(Self {
            probs: counts
                .iter()
                .map(|&c| T::from_u32(c).expect("count fits") / n)
                .collect(),
            support_count: total as usize,
        })
    }

    /// Wraps an explicit probability vector (must sum to 1 within 1e-9).
    pub fn from_probs(probs: Vec<T>, support_count: usize) -> Result<Self> {
        let sum: T = probs.iter().copied().sum();
        if probs.iter().any(|p| *p < T::zero() || !p.is_finite())
            || (sum - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0))
        {
            return Err(Error::NumericalFailure(format!(
                "probabilities must be non-negative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(Self {
            probs,
            support_count: support_count.max(1),
        })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn support_count(&self) -> usize {
        self.support_count
    }

    pub fn space_size(&self) -> usize {
        self.probs.len()
    }

    pub fn total_variation(&self, other: &Self) -> Result<T> {
        check_space(self.space_size(), other.space_size())?;
        let l1: T = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        Ok((l1 * T::lit(0.5)).min(T::one()))
    }
}

pub fn estimate_categorical<T: Scalar>(
    samples: &[Action],
    space_size: u32,
) -> Result<CategoricalDistribution<T>> {
    let mut counts = vec![0u32; space_size as usize];
    for a in samples {
        match a {
            Action::Discrete { index, .. } if *index < space_size => counts[*index as usize] += 1,
            Action::Discrete { index, .. } => {
                return Err(Error::InvalidAction(format!(
                    "index {index} outside action space of size {space_size}"
                )))
            }
            Action::Continuous(_) => {
                return Err(Error::InvalidAction("expected discrete actions".into()))
            }
        }
    }
    CategoricalDistribution::from_counts(&counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit<T> {
    mean: Vec<T>,
    covariance: Matrix<T>,
    support_count: usize,
}

impl<T: Scalar> GaussianFit<T> {
    pub fn new(mean: Vec<T>, covariance: Matrix<T>, support_count: usize) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::SpaceMismatch(
                format!("mean dim {}", mean.len()),
                format!("covariance dim {}", covariance.dim()),
            ));
        }
        if !covariance.is_symmetric(T::lit(1e-9)) {
            return Err(Error::NumericalFailure("covariance is not symmetric".into()));
        }
        Ok(Self {
            mean,
            covariance,
            support_count,
        })
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix<T> {
        &self.covariance
    }

    pub fn support_count(&self) -> usize {
        self.support_count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and biased (`1/N`) covariance plus `epsilon·I`.
pub fn estimate_gaussian<T: Scalar>(samples: &[Vec<f64>], epsilon: T) -> Result<GaussianFit<T>> {
    let Some(first) = samples.first() else {
        return Err(Error::EmptySupport);
    };
    let dim = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::SpaceMismatch(
            format!("continuous:{dim}"),
            format!("continuous:{}", bad.len()),
        ));
    }
    let n = T::from_count(samples.len());
    let lift = |x: f64| T::from_f64(x).expect("finite action component");
    let mut mean = vec![T::zero(); dim];
    for s in samples {
        for (m, &x) in mean.iter_mut().zip(s) {
            *m = *m + lift(x);
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut cov = Matrix::zeros(dim);
    for s in samples {
        for i in 0..dim {
            let di = lift(s[i]) - mean[i];
            for j in 0..=i {
                let dj = lift(s[j]) - mean[j];
                cov[(i, j)] = cov[(i, j)] + di * dj;
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        cov[(i, i)] = cov[(i, i)] + epsilon;
    }
    GaussianFit::new(mean, cov, samples.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Wasserstein2,
    BhattacharyyaDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PolicyDistance<T> {
    pub metric: DistanceMetric,
    pub value: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bhattacharyya<T> {
    /// In `[0, 1]`.
    pub coefficient: T,
    /// In `[0, BHATTACHARYYA_CLIP]`.
    pub distance: T,
}

impl<T: Scalar> Bhattacharyya<T> {
    fn from_coefficient(bc: T) -> Self {
        let bc = bc.max(T::zero()).min(T::one());
        let clip = T::lit(BHATTACHARYYA_CLIP);
        let distance = if bc == T::zero() {
            clip
        } else {
            (-bc.ln()).max(T::zero()).min(clip)
        };
        Self {
            coefficient: bc,
            distance,
        }
    }

    fn from_distance(db: T) -> Self {
        let distance = db.max(T::zero()).min(T::lit(BHATTACHARYYA_CLIP));
        Self {
            coefficient: (-distance).exp(),
            distance,
        }
    }
}

fn check_space(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::SpaceMismatch(a.to_string(), b.to_string()));
    }
    Ok(())
}

pub fn w2_categorical<T: Scalar>(
    p: &CategoricalDistribution<T>,
    q: &CategoricalDistribution<T>,
    ground: GroundMetric,
) -> Result<PolicyDistance<T>> {
    let tv = p.total_variation(q)?;
    let cost = T::lit(ground.cost(0, 1));
    Ok(PolicyDistance {
        metric: DistanceMetric::Wasserstein2,
        value: (cost * tv).sqrt(),
    })
}

pub fn w2_gaussian<T: Scalar>(p: &GaussianFit<T>, q: &GaussianFit<T>) -> Result<PolicyDistance<T>> {
    check_space(p.dim(), q.dim())?;
    let mean_term: T = p
        .mean
        .iter()
        .zip(&q.mean)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    // Both orderings of the cross term, averaged, so the result is exactly symmetric.
    let cross = |a: &Matrix<T>, b: &Matrix<T>| -> Result<T> {
        let root_b = sqrt_psd(b)?;
        Ok(sqrt_psd(&root_b.matmul(a).matmul(&root_b))?.trace())
    };
    let c1 = cross(&p.covariance, &q.covariance)?;
    let c2 = cross(&q.covariance, &p.covariance)?;
    let trace_term =
        p.covariance.trace() + q.covariance.trace() - (c1 + c2);
    let w2_sq = (mean_term + trace_term).max(T::zero());
    if !w2_sq.is_finite() {
        return Err(Error::NumericalFailure("non-finite Wasserstein distance".into()));
    }
    Ok(PolicyDistance {
        metric: DistanceMetric::Wasserstein2,
        value: w2_sq.sqrt(),
    })
}

pub fn bhattacharyya_categorical<T: Scalar>(
    p: &CategoricalDistribution<T>,
    q: &CategoricalDistribution<T>,
) -> Result<Bhattacharyya<T>> {
    check_space(p.space_size(), q.space_size())?;
    if p.probs == q.probs {
        return Ok(Bhattacharyya {
            coefficient: T::one(),
            distance: T::zero(),
        });
    }
    let bc: T = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&a, &b)| (a * b).sqrt())
        .sum();
    Ok(Bhattacharyya::from_coefficient(bc))
}

pub fn bhattacharyya_gaussian<T: Scalar>(
    p: &GaussianFit<T>,
    q: &GaussianFit<T>,
) -> Result<Bhattacharyya<T>> {
    check_space(p.dim(), q.dim())?;
    let pooled = p.covariance.add(&q.covariance).scale(T::lit(0.5));
    let delta: Vec<T> = p.mean.iter().zip(&q.mean).map(|(&a, &b)| a - b).collect();
    let x = solve_pd(&pooled, &delta)?;
    let mahalanobis: T = delta.iter().zip(&x).map(|(&a, &b)| a * b).sum();
    let ln_det = ln_det_pd(&pooled)?;
    let ln_det_p = ln_det_pd(&p.covariance)?;
    let ln_det_q = ln_det_pd(&q.covariance)?;
    let db = mahalanobis / T::lit(8.0) + (ln_det - (ln_det_p + ln_det_q) * T::lit(0.5)) * T::lit(0.5);
    if !db.is_finite() {
        return Err(Error::NumericalFailure("non-finite Bhattacharyya distance".into()));
    }
    Ok(Bhattacharyya::from_distance(db))
}

/// Estimated per-state policy `π_M(s)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution<T> {
    Categorical(CategoricalDistribution<T>),
    Gaussian(GaussianFit<T>),
}

impl<T: Scalar> ActionDistribution<T> {
    pub fn estimate(samples: &StateSamples, epsilon: T) -> Result<Self> {
        match samples {
            StateSamples::Discrete(counts) => {
                CategoricalDistribution::from_counts(counts).map(Self::Categorical)
            }
            StateSamples::Continuous(vectors) => {
                estimate_gaussian(vectors, epsilon).map(Self::Gaussian)
            }
        }
    }

    pub fn wasserstein2(&self, other: &Self, ground: GroundMetric) -> Result<T> {
        match (self, other) {
            (Self::Categorical(p), Self::Categorical(q)) => Ok(w2_categorical(p, q, ground)?.value),
            (Self::Gaussian(p), Self::Gaussian(q)) => Ok(w2_gaussian(p, q)?.value),
            _ => Err(Error::SpaceMismatch("categorical".into(), "gaussian".into())),
        }
    }

    pub fn bhattacharyya(&self, other: &Self) -> Result<Bhattacharyya<T>> {
        match (self, other) {
            (Self::Categorical(p), Self::Categorical(q)) => bhattacharyya_categorical(p, q),
            (Self::Gaussian(p), Self::Gaussian(q)) => bhattacharyya_gaussian(p, q),
            _ => Err(Error::SpaceMismatch("categorical".into(), "gaussian".into())),
        }
    }
}
