//! Playstyle measures over encoded datasets.
//!
//! Every measure works per encoder on two state sets and then pools the
//! namespaced states of all encoders:
//!
//! * **Playstyle Distance** `d = ½·d(A|B) + ½·d(B|A)`, where `d(X|Y)` is the mean
//!   over encoders of the `Y`-visit-weighted policy distance over intersection
//!   states. Reported as the negative similarity `-d`.
//! * **Intersection similarity** `PS∩`: uniform mean over intersection states of
//!   `exp(-D(s)/D̄)` (or the Bhattacharyya coefficient directly).
//! * **Jaccard index** `J = |∩| / |∪|`.
//! * **Playstyle Similarity** `PS∪ = Σ_∩ exp(-D(s)/D̄) / |∪| = J·PS∩`.
//!
//! `D̄` is the mean of every per-state raw distance observed in one batch (one
//! query against all of its candidates), so candidates share one scale.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::distributions::{ActionDistribution, GroundMetric, DEFAULT_EPSILON};
use crate::encoders::{EncodedDataset, EncodedLevel, MultiscaleEncoder, StateSamples, encode_dataset};
use crate::error::{Error, Result};
use crate::model::{StateCode, StyleDataset};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    W2,
    BhattacharyyaDistance,
    BhattacharyyaCoefficient,
}

impl Metric {
    fn is_affinity(self) -> bool {
        matches!(self, Metric::BhattacharyyaCoefficient)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    PerceptualExp,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Dbar,
    None,
}

/// How per-state values are averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weighted by visit counts (the conditioning dataset's for distances,
    /// both datasets' for similarities).
    Frequency,
    /// Every intersection state counts once.
    Uniform,
}

/// `P(d) = e^(-d)`.
pub fn perceptual_kernel<T: Scalar>(d: T) -> T {
    (-d).exp()
}

/// Mean of raw per-state distances; `0` for an empty context.
pub fn scaling_constant<T: Scalar>(distances: &[T]) -> T {
    if distances.is_empty() {
        return T::zero();
    }
    distances.iter().copied().sum::<T>() / T::from_count(distances.len())
}

/// Divides by `dbar`; a zero `dbar` scales everything to zero.
pub fn scale_distance<T: Scalar>(d: T, dbar: T) -> T {
    if dbar == T::zero() {
        T::zero()
    } else {
        d / dbar
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureConfig<T> {
    pub metric: Metric,
    /// Minimum samples a state needs in both datasets to be comparable.
    pub threshold_t: u32,
    pub kernel: Kernel,
    pub scaling: Scaling,
    /// `None` selects the measure family's default.
    pub weighting: Option<Weighting>,
    pub ground_metric: GroundMetric,
    pub epsilon: T,
}

impl<T: Scalar> Default for MeasureConfig<T> {
    fn default() -> Self {
        Self {
            metric: Metric::W2,
            threshold_t: 1,
            kernel: Kernel::PerceptualExp,
            scaling: Scaling::Dbar,
            weighting: None,
            ground_metric: GroundMetric::ZeroOne,
            epsilon: T::lit(DEFAULT_EPSILON),
        }
    }
}

impl<T: Scalar> MeasureConfig<T> {
    pub fn bhattacharyya_coefficient() -> Self {
        Self {
            metric: Metric::BhattacharyyaCoefficient,
            kernel: Kernel::None,
            scaling: Scaling::None,
            ..Self::default()
        }
    }

    pub fn distance(metric: Metric) -> Self {
        Self {
            metric,
            kernel: Kernel::None,
            scaling: Scaling::None,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    PlaystyleDistance,
    IntersectionSimilarity,
    Jaccard,
    PlaystyleSimilarity,
}

/// A measure family plus its configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measure<T> {
    kind: MeasureKind,
    config: MeasureConfig<T>,
}

/// Measure names accepted by [`Measure::named`].
pub const MEASURE_NAMES: &[&str] = &[
    "pd", "pd-bd", "ps-int", "ps-int-bc", "ps-int-bd", "jaccard", "ps-union", "ps-union-bc",
    "ps-union-bd",
];

impl<T: Scalar> Measure<T> {
    pub fn new(kind: MeasureKind, config: MeasureConfig<T>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if config.threshold_t == 0 {
            return bad("threshold t must be at least 1");
        }
        if !(config.epsilon >= T::zero()) {
            return bad("epsilon must be non-negative");
        }
        if config.metric.is_affinity()
            && (config.kernel != Kernel::None || config.scaling != Scaling::None)
        {
            return bad("the Bhattacharyya coefficient is already an affinity: use no kernel and no scaling");
        }
        match kind {
            MeasureKind::PlaystyleDistance => {
                if config.metric.is_affinity() {
                    return bad("playstyle distance needs a distance metric");
                }
                if config.kernel != Kernel::None {
                    return bad("playstyle distance takes no kernel");
                }
            }
            MeasureKind::IntersectionSimilarity | MeasureKind::PlaystyleSimilarity => {
                if !config.metric.is_affinity() && config.kernel == Kernel::None {
                    return bad("a distance metric needs the perceptual kernel to become a similarity");
                }
            }
            MeasureKind::Jaccard => {}
        }
        Ok(Self { kind, config })
    }

    /// Builds a measure from its short name (see [`MEASURE_NAMES`]).
    pub fn named(name: &str) -> Result<Self> {
        use MeasureKind::*;
        let (kind, config) = match name {
            "pd" => (PlaystyleDistance, MeasureConfig::distance(Metric::W2)),
            "pd-bd" => (PlaystyleDistance, MeasureConfig::distance(Metric::BhattacharyyaDistance)),
            "ps-int" => (IntersectionSimilarity, MeasureConfig::default()),
            "ps-int-bc" => (IntersectionSimilarity, MeasureConfig::bhattacharyya_coefficient()),
            "ps-int-bd" => (
                IntersectionSimilarity,
                MeasureConfig {
                    metric: Metric::BhattacharyyaDistance,
                    ..MeasureConfig::default()
                },
            ),
            "jaccard" => (Jaccard, MeasureConfig::default()),
            "ps-union" => (PlaystyleSimilarity, MeasureConfig::default()),
            "ps-union-bc" => (PlaystyleSimilarity, MeasureConfig::bhattacharyya_coefficient()),
            "ps-union-bd" => (
                PlaystyleSimilarity,
                MeasureConfig {
                    metric: Metric::BhattacharyyaDistance,
                    ..MeasureConfig::default()
                },
            ),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown measure {other:?}; expected one of {}",
                    MEASURE_NAMES.join(", ")
                )))
            }
        };
        Self::new(kind, config)
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn config(&self) -> &MeasureConfig<T> {
        &self.config
    }

    pub fn with_threshold(mut self, t: u32) -> Result<Self> {
        self.config.threshold_t = t;
        Self::new(self.kind, self.config)
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.config.weighting = Some(weighting);
        self
    }

    pub fn with_ground_metric(mut self, ground: GroundMetric) -> Self {
        self.config.ground_metric = ground;
        self
    }

    pub fn weighting(&self) -> Weighting {
        self.config.weighting.unwrap_or(match self.kind {
            MeasureKind::PlaystyleDistance => Weighting::Frequency,
            _ => Weighting::Uniform,
        })
    }

    /// Canonical short name.
    pub fn name(&self) -> String {
        let base = match self.kind {
            MeasureKind::PlaystyleDistance => "pd",
            MeasureKind::IntersectionSimilarity => "ps-int",
            MeasureKind::Jaccard => return "jaccard".into(),
            MeasureKind::PlaystyleSimilarity => "ps-union",
        };
        match self.config.metric {
            Metric::W2 => base.into(),
            Metric::BhattacharyyaDistance => format!("{base}-bd"),
            Metric::BhattacharyyaCoefficient => format!("{base}-bc"),
        }
    }

    pub fn is_distance(&self) -> bool {
        self.kind == MeasureKind::PlaystyleDistance
    }

    fn needs_values(&self) -> bool {
        self.kind != MeasureKind::Jaccard
    }

    pub fn compare(&self, a: &EncodedDataset, b: &EncodedDataset) -> Result<ComparisonReport<T>> {
        self.compare_batch(a, &[b]).pop().expect("one candidate")
    }

    /// Compares `query` against every candidate, sharing one `D̄` across the batch.
    pub fn compare_batch(
        &self,
        query: &EncodedDataset,
        candidates: &[&EncodedDataset],
    ) -> Vec<Result<ComparisonReport<T>>> {
        let raw: Vec<Result<PairStates<T>>> =
            candidates.iter().map(|c| self.pair_states(query, c)).collect();
        let dbar = match (self.config.scaling, self.config.metric.is_affinity()) {
            (Scaling::Dbar, false) if self.needs_values() => {
                let context: Vec<T> = raw
                    .iter()
                    .filter_map(|r| r.as_ref().ok())
                    .flat_map(|p| p.levels.iter())
                    .flat_map(|l| l.states.iter().map(|s| s.raw))
                    .collect();
                Some(scaling_constant(&context))
            }
            _ => None,
        };
        raw.into_iter()
            .map(|r| r.and_then(|pair| self.finish(pair, dbar)))
            .collect()
    }

    fn pair_states(&self, a: &EncodedDataset, b: &EncodedDataset) -> Result<PairStates<T>> {
        if !a.same_encoders(b) {
            return Err(Error::EncoderMismatch);
        }
        if a.action_space() != b.action_space() {
            return Err(Error::SpaceMismatch(
                a.action_space().to_string(),
                b.action_space().to_string(),
            ));
        }
        if a.record_count() == 0 || b.record_count() == 0 {
            return Err(Error::InvalidDataset("empty dataset".into()));
        }
        let t = self.config.threshold_t as usize;
        let levels = a
            .levels()
            .iter()
            .zip(b.levels())
            .map(|(la, lb)| self.level_states(la, lb, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(PairStates { levels })
    }

    fn level_states(&self, la: &EncodedLevel, lb: &EncodedLevel, t: usize) -> Result<LevelStates<T>> {
        let mut raw_intersection = 0;
        let mut states = Vec::new();
        for (code, sa, sb) in merge_join(la, lb) {
            raw_intersection += 1;
            let (na, nb) = (sa.count(), sb.count());
            if na < t || nb < t {
                continue;
            }
            let raw = if self.needs_values() {
                self.state_value(sa, sb)?
            } else {
                T::zero()
            };
            states.push(StateRaw {
                code: code.clone(),
                count_a: na,
                count_b: nb,
                raw,
            });
        }
        Ok(LevelStates {
            encoder_id: la.encoder_id.clone(),
            raw_intersection,
            union: la.states.len() + lb.states.len() - raw_intersection,
            states,
        })
    }

    fn state_value(&self, sa: &StateSamples, sb: &StateSamples) -> Result<T> {
        let eps = self.config.epsilon;
        let pa = ActionDistribution::<T>::estimate(sa, eps)?;
        let pb = ActionDistribution::<T>::estimate(sb, eps)?;
        match self.config.metric {
            Metric::W2 => pa.wasserstein2(&pb, self.config.ground_metric),
            Metric::BhattacharyyaDistance => Ok(pa.bhattacharyya(&pb)?.distance),
            Metric::BhattacharyyaCoefficient => Ok(pa.bhattacharyya(&pb)?.coefficient),
        }
    }

    /// Per-state value after scaling and kernel.
    fn transform(&self, raw: T, dbar: Option<T>) -> T {
        let d = match dbar {
            Some(dbar) => scale_distance(raw, dbar),
            None => raw,
        };
        match self.config.kernel {
            Kernel::PerceptualExp if !self.config.metric.is_affinity() => perceptual_kernel(d),
            _ => d,
        }
    }

    fn finish(&self, pair: PairStates<T>, dbar: Option<T>) -> Result<ComparisonReport<T>> {
        let weighting = self.weighting();
        let comparable: usize = pair.levels.iter().map(|l| l.states.len()).sum();
        let raw_intersection: usize = pair.levels.iter().map(|l| l.raw_intersection).sum();
        let union: usize = pair.levels.iter().map(|l| l.union).sum();

        let mut per_encoder = Vec::with_capacity(pair.levels.len());
        let mut level_values: Vec<Vec<T>> = Vec::with_capacity(pair.levels.len());
        for level in &pair.levels {
            let values: Vec<T> = level
                .states
                .iter()
                .map(|s| self.transform(s.raw, dbar))
                .collect();
            per_encoder.push(EncoderBreakdown {
                encoder_id: level.encoder_id.clone(),
                intersection_states: level.states.len(),
                raw_intersection_states: level.raw_intersection,
                union_states: level.union,
                per_state: level
                    .states
                    .iter()
                    .zip(&values)
                    .map(|(s, &v)| StateValue {
                        code: s.code.clone(),
                        count_a: s.count_a,
                        count_b: s.count_b,
                        raw: s.raw,
                        value: v,
                    })
                    .collect(),
            });
            level_values.push(values);
        }

        let (value, distance) = match self.kind {
            MeasureKind::Jaccard => (ratio(raw_intersection, union), None),
            MeasureKind::PlaystyleDistance => {
                if comparable == 0 {
                    return Err(Error::NoComparableStates);
                }
                let a_given_b = conditional_distance(&pair.levels, &level_values, weighting, Side::B);
                let b_given_a = conditional_distance(&pair.levels, &level_values, weighting, Side::A);
                let d = a_given_b * T::lit(0.5) + b_given_a * T::lit(0.5);
                (-d, Some(d))
            }
            MeasureKind::IntersectionSimilarity => {
                if comparable == 0 {
                    return Err(Error::NoComparableStates);
                }
                (pooled_mean(&pair.levels, &level_values, weighting), None)
            }
            MeasureKind::PlaystyleSimilarity => {
                if comparable == 0 {
                    (T::zero(), None)
                } else {
                    match weighting {
                        Weighting::Uniform => {
                            let total: T = level_values.iter().flatten().copied().sum();
                            (total / T::from_count(union), None)
                        }
                        Weighting::Frequency => {
                            let ps_int = pooled_mean(&pair.levels, &level_values, weighting);
                            (ratio::<T>(raw_intersection, union) * ps_int, None)
                        }
                    }
                }
            }
        };
        if !value.is_finite() {
            return Err(Error::NumericalFailure(format!("{} produced {value}", self.name())));
        }
        Ok(ComparisonReport {
            measure_name: self.name(),
            value,
            distance,
            dbar,
            intersection_states: comparable,
            raw_intersection_states: raw_intersection,
            union_states: union,
            per_encoder,
        })
    }
}

impl<T: Scalar> FromStr for Measure<T> {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::named(s)
    }
}

impl<T: Scalar> fmt::Display for Measure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn ratio<T: Scalar>(num: usize, den: usize) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_count(num) / T::from_count(den)
    }
}

#[derive(Clone, Copy)]
enum Side {
    A,
    B,
}

/// `d(X|Y)`: per encoder the `Y`-weighted mean of per-state distances, then the
/// plain mean over encoders that have comparable states.
fn conditional_distance<T: Scalar>(
    levels: &[LevelStates<T>],
    values: &[Vec<T>],
    weighting: Weighting,
    conditioning: Side,
) -> T {
    let mut sum = T::zero();
    let mut used = 0usize;
    for (level, vals) in levels.iter().zip(values) {
        if level.states.is_empty() {
            continue;
        }
        let (num, den) = level.states.iter().zip(vals).fold(
            (T::zero(), T::zero()),
            |(num, den), (s, &v)| {
                let w = match weighting {
                    Weighting::Uniform => T::one(),
                    Weighting::Frequency => T::from_count(match conditioning {
                        Side::A => s.count_a,
                        Side::B => s.count_b,
                    }),
                };
                (num + w * v, den + w)
            },
        );
        sum = sum + num / den;
        used += 1;
    }
    sum / T::from_count(used)
}

/// Mean over all namespaced intersection states of every encoder.
fn pooled_mean<T: Scalar>(levels: &[LevelStates<T>], values: &[Vec<T>], weighting: Weighting) -> T {
    let (num, den) = levels.iter().zip(values).flat_map(|(l, v)| l.states.iter().zip(v)).fold(
        (T::zero(), T::zero()),
        |(num, den), (s, &v)| {
            let w = match weighting {
                Weighting::Uniform => T::one(),
                Weighting::Frequency => T::from_count(s.count_a + s.count_b),
            };
            (num + w * v, den + w)
        },
    );
    num / den
}

/// States present in both levels, in code order.
fn merge_join<'a>(
    a: &'a EncodedLevel,
    b: &'a EncodedLevel,
) -> impl Iterator<Item = (&'a StateCode, &'a StateSamples, &'a StateSamples)> {
    let mut ia = a.states.iter().peekable();
    let mut ib = b.states.iter().peekable();
    std::iter::from_fn(move || loop {
        let (ka, _) = ia.peek()?;
        let (kb, _) = ib.peek()?;
        match ka.cmp(kb) {
            Ordering::Less => {
                ia.next();
            }
            Ordering::Greater => {
                ib.next();
            }
            Ordering::Equal => {
                let (k, sa) = ia.next()?;
                let (_, sb) = ib.next()?;
                return Some((k, sa, sb));
            }
        }
    })
}

struct StateRaw<T> {
    code: StateCode,
    count_a: usize,
    count_b: usize,
    raw: T,
}

struct LevelStates<T> {
    encoder_id: Arc<str>,
    raw_intersection: usize,
    union: usize,
    states: Vec<StateRaw<T>>,
}

struct PairStates<T> {
    levels: Vec<LevelStates<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateValue<T> {
    pub code: StateCode,
    pub count_a: usize,
    pub count_b: usize,
    /// Distance or affinity before scaling and kernel.
    pub raw: T,
    /// Value entering the measure.
    pub value: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncoderBreakdown<T> {
    pub encoder_id: Arc<str>,
    /// Intersection states passing the sample threshold.
    pub intersection_states: usize,
    pub raw_intersection_states: usize,
    pub union_states: usize,
    pub per_state: Vec<StateValue<T>>,
}

/// One comparison with the bookkeeping behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport<T> {
    pub measure_name: String,
    /// Similarity; negated distance for the distance family.
    pub value: T,
    pub distance: Option<T>,
    pub dbar: Option<T>,
    pub intersection_states: usize,
    pub raw_intersection_states: usize,
    pub union_states: usize,
    pub per_encoder: Vec<EncoderBreakdown<T>>,
}

impl<T: Scalar + Serialize> Serialize for ComparisonReport<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Encoders<'a, T>(&'a [EncoderBreakdown<T>]);
        impl<T: Serialize> Serialize for Encoders<'_, T> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut map = s.serialize_map(Some(self.0.len()))?;
                for e in self.0 {
                    map.serialize_entry(&*e.encoder_id, e)?;
                }
                map.end()
            }
        }
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("measure", &self.measure_name)?;
        map.serialize_entry("value", &self.value)?;
        if let Some(d) = self.distance {
            map.serialize_entry("distance", &d)?;
        }
        map.serialize_entry("dbar", &self.dbar)?;
        map.serialize_entry("intersection_states", &self.intersection_states)?;
        map.serialize_entry("raw_intersection_states", &self.raw_intersection_states)?;
        map.serialize_entry("union_states", &self.union_states)?;
        map.serialize_entry("per_encoder", &Encoders(&self.per_encoder))?;
        map.end()
    }
}

/// Per-encoder sets of states with at least `t` samples in both datasets.
pub fn intersection_states(
    a: &EncodedDataset,
    b: &EncodedDataset,
    t: u32,
) -> Result<Vec<Vec<StateCode>>> {
    if !a.same_encoders(b) {
        return Err(Error::EncoderMismatch);
    }
    let t = t as usize;
    Ok(a.levels()
        .iter()
        .zip(b.levels())
        .map(|(la, lb)| {
            merge_join(la, lb)
                .filter(|(_, sa, sb)| sa.count() >= t && sb.count() >= t)
                .map(|(code, _, _)| code.clone())
                .collect()
        })
        .collect())
}

fn run<T: Scalar>(
    kind: MeasureKind,
    a: &StyleDataset,
    b: &StyleDataset,
    encoders: &MultiscaleEncoder,
    config: MeasureConfig<T>,
) -> Result<ComparisonReport<T>> {
    let measure = Measure::new(kind, config)?;
    let ea = encode_dataset(encoders, a)?;
    let eb = encode_dataset(encoders, b)?;
    measure.compare(&ea, &eb)
}

pub fn playstyle_distance<T: Scalar>(
    a: &StyleDataset,
    b: &StyleDataset,
    encoders: &MultiscaleEncoder,
    config: MeasureConfig<T>,
) -> Result<ComparisonReport<T>> {
    run(MeasureKind::PlaystyleDistance, a, b, encoders, config)
}

pub fn playstyle_intersection_similarity<T: Scalar>(
    a: &StyleDataset,
    b: &StyleDataset,
    encoders: &MultiscaleEncoder,
    config: MeasureConfig<T>,
) -> Result<ComparisonReport<T>> {
    run(MeasureKind::IntersectionSimilarity, a, b, encoders, config)
}

pub fn jaccard_index<T: Scalar>(
    a: &StyleDataset,
    b: &StyleDataset,
    encoders: &MultiscaleEncoder,
) -> Result<ComparisonReport<T>> {
    run(MeasureKind::Jaccard, a, b, encoders, MeasureConfig::default())
}

pub fn playstyle_similarity<T: Scalar>(
    a: &StyleDataset,
    b: &StyleDataset,
    encoders: &MultiscaleEncoder,
    config: MeasureConfig<T>,
) -> Result<ComparisonReport<T>> {
    run(MeasureKind::PlaystyleSimilarity, a, b, encoders, config)
}
