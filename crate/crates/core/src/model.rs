//! Observation-action data model shared by every other module.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Real intensities in `[0, 1]`.
    UnitFloat,
    /// Raw intensities in `[0, 255]`.
    Byte,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::UnitFloat => "unit_float",
            ValueKind::Byte => "byte",
        }
    }

    /// Upper end of the declared value range.
    pub fn max_value(self) -> f64 {
        match self {
            ValueKind::UnitFloat => 1.0,
            ValueKind::Byte => 255.0,
        }
    }
}

impl FromStr for ValueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_float" | "float" => Ok(ValueKind::UnitFloat),
            "byte" | "u8" => Ok(ValueKind::Byte),
            other => Err(Error::Parse(format!("unknown obs_kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservationData {
    Bytes(Vec<u8>),
    Unit(Vec<f32>),
}

/// A flat observation with an explicit shape header.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTensor {
    shape: Vec<usize>,
    data: ObservationData,
}

impl ObservationTensor {
    pub fn from_bytes(shape: Vec<usize>, bytes: Vec<u8>) -> Result<Self> {
        check_shape(&shape, bytes.len())?;
        Ok(Self {
            shape,
            data: ObservationData::Bytes(bytes),
        })
    }

    pub fn from_unit(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        check_shape(&shape, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidObservation(format!(
                "unit_float value {v} at {i} outside [0, 1]"
            )));
        }
        Ok(Self {
            shape,
            data: ObservationData::Unit(values),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &ObservationData {
        &self.data
    }

    pub fn value_kind(&self) -> ValueKind {
        match self.data {
            ObservationData::Bytes(_) => ValueKind::Byte,
            ObservationData::Unit(_) => ValueKind::UnitFloat,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ObservationData::Bytes(b) => b.len(),
            ObservationData::Unit(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at flat index `i`, in the units of the value kind.
    pub fn value(&self, i: usize) -> f64 {
        match &self.data {
            ObservationData::Bytes(b) => f64::from(b[i]),
            ObservationData::Unit(v) => f64::from(v[i]),
        }
    }

    /// Raw bytes: the bytes themselves, or little-endian f32 for unit floats.
    pub fn raw_bytes(&self) -> Vec<u8> {
        match &self.data {
            ObservationData::Bytes(b) => b.clone(),
            ObservationData::Unit(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    /// SHA-256 of the raw bytes, lowercase hex.
    pub fn digest(&self) -> String {
        let digest = match &self.data {
            ObservationData::Bytes(b) => Sha256::digest(b),
            ObservationData::Unit(_) => Sha256::digest(self.raw_bytes()),
        };
        hex::encode(digest)
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidObservation(format!(
            "shape {shape:?} must be a non-empty list of positive integers"
        )));
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::InvalidObservation(format!(
            "shape {shape:?} implies {expected} values, got {len}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(u32),
    Continuous(usize),
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionSpace::Discrete(k) => write!(f, "{k}"),
            ActionSpace::Continuous(d) => write!(f, "continuous:{d}"),
        }
    }
}

impl FromStr for ActionSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_err = || Error::Parse(format!("invalid action space {s:?}"));
        if let Some(dim) = s.strip_prefix("continuous:") {
            let dim: usize = dim.trim().parse().map_err(|_| parse_err())?;
            if dim == 0 {
                return Err(parse_err());
            }
            Ok(ActionSpace::Continuous(dim))
        } else {
            let k: u32 = s.trim().parse().map_err(|_| parse_err())?;
            if k == 0 {
                return Err(parse_err());
            }
            Ok(ActionSpace::Discrete(k))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete { index: u32, space_size: u32 },
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(index: u32, space_size: u32) -> Result<Self> {
        if space_size == 0 || index >= space_size {
            return Err(Error::InvalidAction(format!(
                "index {index} outside action space of size {space_size}"
            )));
        }
        Ok(Action::Discrete { index, space_size })
    }

    pub fn continuous(vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::InvalidAction("empty continuous action".into()));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidAction("non-finite continuous action".into()));
        }
        Ok(Action::Continuous(vector))
    }

    pub fn space(&self) -> ActionSpace {
        match self {
            Action::Discrete { space_size, .. } => ActionSpace::Discrete(*space_size),
            Action::Continuous(v) => ActionSpace::Continuous(v.len()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Action::Discrete { .. })
    }
}

/// One observation-action sample.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub observation: ObservationTensor,
    pub action: Action,
    pub trajectory_id: Option<String>,
    pub step_index: Option<u64>,
}

impl StepRecord {
    pub fn new(observation: ObservationTensor, action: Action) -> Self {
        Self {
            observation,
            action,
            trajectory_id: None,
            step_index: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    id: String,
    steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, steps: Vec<StepRecord>) -> Result<Self> {
        let id = id.into();
        if steps.is_empty() {
            return Err(Error::InvalidTrajectory(format!("trajectory {id} has no steps")));
        }
        let mut last: Option<u64> = None;
        for step in &steps {
            if let Some(t) = step.step_index {
                if last.is_some_and(|prev| t <= prev) {
                    return Err(Error::InvalidTrajectory(format!(
                        "trajectory {id}: step index {t} does not increase"
                    )));
                }
                last = Some(t);
            }
        }
        Ok(Self { id, steps })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    /// The trajectory's own steps as a standalone dataset.
    pub fn to_dataset(&self) -> StyleDataset {
        StyleDataset::new(Some(self.id.clone()), self.steps.clone())
    }
}

/// A bag of records drawn from one style.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StyleDataset {
    pub label: Option<String>,
    pub records: Vec<StepRecord>,
}

impl StyleDataset {
    pub fn new(label: Option<String>, records: Vec<StepRecord>) -> Self {
        Self { label, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The shared action space, or an error if the dataset is empty or mixed.
    pub fn action_space(&self) -> Result<ActionSpace> {
        let report = validate_dataset(self);
        if !report.is_valid() {
            return Err(Error::InvalidDataset(report.summary()));
        }
        Ok(report.action_space.expect("valid dataset has an action space"))
    }

    /// Re-declares every discrete action into a larger shared space of `size` actions.
    pub fn pad_action_space(&self, size: u32) -> Result<StyleDataset> {
        let mut records = self.records.clone();
        for r in &mut records {
            match &mut r.action {
                Action::Discrete { index, space_size } => {
                    if size < *space_size {
                        return Err(Error::InvalidAction(format!(
                            "cannot shrink action space {space_size} to {size}"
                        )));
                    }
                    *r = StepRecord {
                        action: Action::discrete(*index, size)?,
                        ..r.clone()
                    };
                }
                Action::Continuous(_) => {
                    return Err(Error::InvalidAction(
                        "continuous actions cannot be padded".into(),
                    ))
                }
            }
        }
        Ok(StyleDataset::new(self.label.clone(), records))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Empty,
    HeterogeneousActionKind,
    HeterogeneousActionSpace,
    HeterogeneousShape,
    HeterogeneousValueKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::Empty => "empty",
            Violation::HeterogeneousActionKind => "heterogeneous action kind",
            Violation::HeterogeneousActionSpace => "heterogeneous action space",
            Violation::HeterogeneousShape => "heterogeneous observation shape",
            Violation::HeterogeneousValueKind => "heterogeneous observation value kind",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub record_count: usize,
    pub action_space: Option<ActionSpace>,
    pub observation_shape: Option<Vec<usize>>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn validate_dataset(ds: &StyleDataset) -> ValidationReport {
    let mut violations = Vec::new();
    let Some(first) = ds.records.first() else {
        return ValidationReport {
            record_count: 0,
            action_space: None,
            observation_shape: None,
            violations: vec![Violation::Empty],
        };
    };
    let space = first.action.space();
    let shape = first.observation.shape();
    let kind = first.observation.value_kind();
    for r in &ds.records[1..] {
        let s = r.action.space();
        if r.action.is_discrete() != first.action.is_discrete() {
            push_once(&mut violations, Violation::HeterogeneousActionKind);
        } else if s != space {
            push_once(&mut violations, Violation::HeterogeneousActionSpace);
        }
        if r.observation.shape() != shape {
            push_once(&mut violations, Violation::HeterogeneousShape);
        }
        if r.observation.value_kind() != kind {
            push_once(&mut violations, Violation::HeterogeneousValueKind);
        }
    }
    ValidationReport {
        record_count: ds.len(),
        action_space: Some(space),
        observation_shape: Some(shape.to_vec()),
        violations,
    }
}

fn push_once(v: &mut Vec<Violation>, item: Violation) {
    if !v.contains(&item) {
        v.push(item);
    }
}

/// Draws `n` record indices out of `len`. Without replacement the indices are distinct
/// and come out in random order, so `n == len` yields a permutation.
pub fn sample_indices<R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    n: usize,
    replacement: bool,
) -> Result<Vec<usize>> {
    if replacement {
        if len == 0 && n > 0 {
            return Err(Error::SampleExhausted {
                requested: n,
                available: 0,
            });
        }
        Ok((0..n).map(|_| rng.gen_range(0..len)).collect())
    } else {
        if n > len {
            return Err(Error::SampleExhausted {
                requested: n,
                available: len,
            });
        }
        Ok(index::sample(rng, len, n).into_vec())
    }
}

pub fn subsample(ds: &StyleDataset, n: usize, seed: u64, replacement: bool) -> Result<StyleDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample_indices(&mut rng, ds.len(), n, replacement)?;
    Ok(StyleDataset::new(
        ds.label.clone(),
        idx.into_iter().map(|i| ds.records[i].clone()).collect(),
    ))
}

/// Opaque per-encoder state code; equality is bitwise.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateCode(Arc<[u8]>);

impl StateCode {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        StateCode(bytes.into())
    }

    pub fn unit() -> Self {
        StateCode(Arc::from(Vec::new()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateCode({})", self.to_hex())
    }
}

impl Serialize for StateCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// A discrete state namespaced by the encoder that produced it, so codes from
/// different granularities never collide in a multiscale union.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DiscreteStateId {
    pub encoder_id: Arc<str>,
    pub code: StateCode,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn rec(i: u8, action: Action) -> StepRecord {
        StepRecord::new(ObservationTensor::from_bytes(vec![1], vec![i]).unwrap(), action)
    }

    fn discrete_ds(n: usize) -> StyleDataset {
        let records = (0..n)
            .map(|i| {
                let mut r = rec((i % 256) as u8, Action::discrete((i % 4) as u32, 4).unwrap());
                r.step_index = Some(i as u64);
                r
            })
            .collect();
        StyleDataset::new(Some("s".into()), records)
    }

    #[test]
    fn empty_dataset_is_reported() {
        let report = validate_dataset(&StyleDataset::default());
        assert_eq!(report.violations, vec![Violation::Empty]);
        assert_eq!(report.violations[0].to_string(), "empty");
    }

    #[test]
    fn well_formed_dataset_is_valid() {
        let report = validate_dataset(&discrete_ds(3));
        assert!(report.is_valid());
        assert_eq!(report.record_count, 3);
        assert_eq!(report.action_space, Some(ActionSpace::Discrete(4)));
    }

    #[test]
    fn mixed_action_kinds_are_reported() {
        let mut ds = discrete_ds(2);
        ds.records.push(rec(9, Action::continuous(vec![0.5]).unwrap()));
        let report = validate_dataset(&ds);
        assert_eq!(report.violations, vec![Violation::HeterogeneousActionKind]);
        assert_eq!(report.violations[0].to_string(), "heterogeneous action kind");
    }

    #[test]
    fn shape_and_space_mismatch_are_reported() {
        let mut ds = discrete_ds(2);
        ds.records.push(StepRecord::new(
            ObservationTensor::from_bytes(vec![2], vec![0, 0]).unwrap(),
            Action::discrete(0, 5).unwrap(),
        ));
        let report = validate_dataset(&ds);
        assert!(report.violations.contains(&Violation::HeterogeneousShape));
        assert!(report.violations.contains(&Violation::HeterogeneousActionSpace));
    }

    #[test]
    fn observation_invariants() {
        assert!(ObservationTensor::from_bytes(vec![2, 2], vec![0; 3]).is_err());
        assert!(ObservationTensor::from_bytes(vec![0], vec![]).is_err());
        assert!(ObservationTensor::from_unit(vec![2], vec![0.0, 1.5]).is_err());
        let o = ObservationTensor::from_unit(vec![2], vec![0.0, 1.0]).unwrap();
        assert_eq!(o.value_kind(), ValueKind::UnitFloat);
        assert_eq!(o.raw_bytes().len(), 8);
    }

    #[test]
    fn action_invariants() {
        assert!(Action::discrete(4, 4).is_err());
        assert!(Action::discrete(3, 4).is_ok());
        assert!(Action::continuous(vec![]).is_err());
        assert_eq!("continuous:3".parse::<ActionSpace>().unwrap(), ActionSpace::Continuous(3));
        assert_eq!("18".parse::<ActionSpace>().unwrap(), ActionSpace::Discrete(18));
        assert!("0".parse::<ActionSpace>().is_err());
    }

    #[test]
    fn trajectory_step_indices_must_increase() {
        let mut a = rec(0, Action::discrete(0, 2).unwrap());
        a.step_index = Some(3);
        let mut b = a.clone();
        b.step_index = Some(3);
        assert!(Trajectory::new("t", vec![a.clone(), b]).is_err());
        assert!(Trajectory::new("t", vec![]).is_err());
        let mut c = a.clone();
        c.step_index = Some(4);
        assert!(Trajectory::new("t", vec![a, c]).is_ok());
    }

    #[test]
    fn full_draw_without_replacement_is_a_permutation() {
        let ds = discrete_ds(50);
        let out = subsample(&ds, 50, 7, false).unwrap();
        let mut got: Vec<u64> = out.records.iter().map(|r| r.step_index.unwrap()).collect();
        got.sort_unstable();
        assert_eq!(got, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn subsample_is_deterministic() {
        let ds = discrete_ds(100);
        assert_eq!(subsample(&ds, 30, 11, true).unwrap(), subsample(&ds, 30, 11, true).unwrap());
        assert_eq!(subsample(&ds, 30, 11, false).unwrap(), subsample(&ds, 30, 11, false).unwrap());
        assert_ne!(subsample(&ds, 30, 11, false).unwrap(), subsample(&ds, 30, 12, false).unwrap());
    }

    #[test]
    fn subsample_512_of_10k_is_distinct() {
        let ds = discrete_ds(10_000);
        let out = subsample(&ds, 512, 3, false).unwrap();
        assert_eq!(out.len(), 512);
        // brute-force membership scan over the drawn step indices
        let ids: Vec<u64> = out.records.iter().map(|r| r.step_index.unwrap()).collect();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
        let uniq: HashSet<_> = ids.iter().collect();
        assert_eq!(uniq.len(), 512);
    }

    #[test]
    fn oversized_draw_without_replacement_fails() {
        let ds = discrete_ds(5);
        assert!(matches!(
            subsample(&ds, 6, 0, false),
            Err(Error::SampleExhausted { requested: 6, available: 5 })
        ));
        assert_eq!(subsample(&ds, 6, 0, true).unwrap().len(), 6);
    }

    #[test]
    fn padding_redeclares_space() {
        let ds = discrete_ds(4);
        let padded = ds.pad_action_space(18).unwrap();
        assert_eq!(padded.action_space().unwrap(), ActionSpace::Discrete(18));
        assert!(ds.pad_action_space(2).is_err());
    }
}
