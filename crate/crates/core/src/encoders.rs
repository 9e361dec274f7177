//! State encoders: deterministic maps from observations to discrete state codes,
//! and multiscale sets of them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    Action, ActionSpace, DiscreteStateId, ObservationTensor, StateCode, StyleDataset,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelMerge {
    MeanToGray,
}

/// Target resolution for the downsampling encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DownsampleSpec {
    pub out_frames: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub intensity_levels: u32,
    pub channel_merge: ChannelMerge,
}

impl DownsampleSpec {
    pub fn new(out_frames: usize, out_height: usize, out_width: usize, levels: u32) -> Result<Self> {
        if out_frames == 0 || out_height == 0 || out_width == 0 {
            return Err(Error::EncoderSpec("output dimensions must be positive".into()));
        }
        if !(2..=65_536).contains(&levels) {
            return Err(Error::EncoderSpec(format!(
                "intensity levels must be in [2, 65536], got {levels}"
            )));
        }
        Ok(Self {
            out_frames,
            out_height,
            out_width,
            intensity_levels: levels,
            channel_merge: ChannelMerge::MeanToGray,
        })
    }

    /// Parses `FxHxW:L` (the `x` may also be `×`).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::EncoderSpec(format!("expected FxHxW:L, got {s:?}"));
        let (dims, levels) = s.split_once(':').ok_or_else(bad)?;
        let dims: Vec<usize> = dims
            .replace('×', "x")
            .split('x')
            .map(|d| d.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [f, h, w] = dims[..] else {
            return Err(bad());
        };
        let levels: u32 = levels.trim().parse().map_err(|_| bad())?;
        Self::new(f, h, w, levels)
    }

    fn canonical(&self) -> String {
        format!(
            "down:{}x{}x{}:{}",
            self.out_frames, self.out_height, self.out_width, self.intensity_levels
        )
    }

    fn descriptor(&self) -> String {
        if self.out_frames == 1 {
            format!("{}^({}*{})", self.intensity_levels, self.out_height, self.out_width)
        } else {
            format!(
                "{}^({}*{}*{})",
                self.intensity_levels, self.out_height, self.out_width, self.out_frames
            )
        }
    }

    /// Encodes a `[frames, channels, H, W]` observation (lower ranks are padded with
    /// leading 1s).
    fn encode(&self, obs: &ObservationTensor) -> std::result::Result<Vec<u8>, String> {
        let shape = obs.shape();
        if shape.len() > 4 {
            return Err(format!("expected at most 4 dimensions, got {}", shape.len()));
        }
        let mut dims = [1usize; 4];
        dims[4 - shape.len()..].copy_from_slice(shape);
        let [frames, channels, height, width] = dims;
        if self.out_frames > frames || self.out_height > height || self.out_width > width {
            return Err(format!(
                "output {}x{}x{} exceeds input {frames}x{height}x{width}",
                self.out_frames, self.out_height, self.out_width
            ));
        }
        let block_h = height / self.out_height;
        let block_w = width / self.out_width;
        let max = obs.value_kind().max_value();
        let levels = f64::from(self.intensity_levels);
        let wide = self.intensity_levels > 256;
        let cells = self.out_height * self.out_width;
        let mut code = Vec::with_capacity(self.out_frames * cells * if wide { 2 } else { 1 });
        let mut sums = vec![0.0f64; cells];
        let mut counts = vec![0usize; cells];
        for frame in frames - self.out_frames..frames {
            sums.iter_mut().for_each(|s| *s = 0.0);
            counts.iter_mut().for_each(|c| *c = 0);
            for row in 0..height {
                let by = (row / block_h).min(self.out_height - 1);
                for col in 0..width {
                    let bx = (col / block_w).min(self.out_width - 1);
                    let mut gray = 0.0;
                    for ch in 0..channels {
                        gray += obs.value(((frame * channels + ch) * height + row) * width + col);
                    }
                    sums[by * self.out_width + bx] += gray / channels as f64;
                    counts[by * self.out_width + bx] += 1;
                }
            }
            for (sum, count) in sums.iter().zip(&counts) {
                let mean = sum / *count as f64;
                let bin = ((mean / max) * levels).floor().clamp(0.0, levels - 1.0) as u32;
                if wide {
                    code.extend_from_slice(&(bin as u16).to_le_bytes());
                } else {
                    code.push(bin as u8);
                }
            }
        }
        Ok(code)
    }
}

/// Lookup table of externally produced codes, keyed by observation digest.
#[derive(Clone, Debug, PartialEq)]
pub struct PreencodedTable {
    encoder_id: String,
    codes: HashMap<String, StateCode>,
}

impl PreencodedTable {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut encoder_id: Option<String> = None;
        let mut codes: HashMap<String, StateCode> = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [digest, id, code] = fields[..] else {
                return Err(Error::Parse(format!(
                    "pre-encoded line {}: expected `digest_hex, encoder_id, code_hex`",
                    lineno + 1
                )));
            };
            match &encoder_id {
                None => encoder_id = Some(id.to_string()),
                Some(known) if known != id => {
                    return Err(Error::Parse(format!(
                        "pre-encoded line {}: encoder id {id:?} differs from {known:?}",
                        lineno + 1
                    )))
                }
                Some(_) => {}
            }
            let digest = digest.to_ascii_lowercase();
            let bytes = hex::decode(code)
                .map_err(|e| Error::Parse(format!("pre-encoded line {}: {e}", lineno + 1)))?;
            let code = StateCode::new(bytes);
            match codes.get(&digest) {
                Some(existing) if *existing != code => return Err(Error::DuplicateDigest(digest)),
                Some(_) => {}
                None => {
                    codes.insert(digest, code);
                }
            }
        }
        let encoder_id = encoder_id
            .ok_or_else(|| Error::Parse("pre-encoded file has no entries".into()))?;
        Ok(Self { encoder_id, codes })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn lookup(&self, digest: &str) -> Result<StateCode> {
        self.codes
            .get(digest)
            .cloned()
            .ok_or_else(|| Error::MissingCode(digest.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderKind {
    Identity,
    Downsample(DownsampleSpec),
    Passthrough,
    Preencoded(Arc<PreencodedTable>),
}

/// A pure map from observations to namespaced discrete states.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEncoder {
    id: Arc<str>,
    kind: EncoderKind,
}

impl StateEncoder {
    /// Maps every observation to the same single state.
    pub fn identity() -> Self {
        Self {
            id: Arc::from("identity"),
            kind: EncoderKind::Identity,
        }
    }

    pub fn downsample(spec: DownsampleSpec) -> Self {
        Self {
            id: Arc::from(spec.canonical()),
            kind: EncoderKind::Downsample(spec),
        }
    }

    /// Uses the raw observation bytes as the code.
    pub fn passthrough() -> Self {
        Self {
            id: Arc::from("passthrough"),
            kind: EncoderKind::Passthrough,
        }
    }

    pub fn preencoded(table: PreencodedTable) -> Self {
        Self {
            id: Arc::from(table.encoder_id()),
            kind: EncoderKind::Preencoded(Arc::new(table)),
        }
    }

    pub fn preencoded_from_path(path: &Path) -> Result<Self> {
        Ok(Self::preencoded(PreencodedTable::from_path(path)?))
    }

    /// Parses one encoder spec: `identity`, `passthrough`, `down:FxHxW:L` or `pre:<file>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        match spec {
            "identity" => Ok(Self::identity()),
            "passthrough" | "raw" => Ok(Self::passthrough()),
            _ => {
                if let Some(rest) = spec.strip_prefix("down:") {
                    Ok(Self::downsample(DownsampleSpec::parse(rest)?))
                } else if let Some(path) = spec.strip_prefix("pre:") {
                    Self::preencoded_from_path(Path::new(path))
                } else {
                    Err(Error::EncoderSpec(format!("unknown encoder {spec:?}")))
                }
            }
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &EncoderKind {
        &self.kind
    }

    /// Human-readable cardinality tag; documentation only.
    pub fn state_space_descriptor(&self) -> String {
        match &self.kind {
            EncoderKind::Identity => "1".into(),
            EncoderKind::Downsample(spec) => spec.descriptor(),
            EncoderKind::Passthrough => "raw".into(),
            EncoderKind::Preencoded(_) => "external".into(),
        }
    }

    pub fn encode(&self, obs: &ObservationTensor) -> Result<StateCode> {
        match &self.kind {
            EncoderKind::Identity => Ok(StateCode::unit()),
            EncoderKind::Passthrough => Ok(StateCode::new(obs.raw_bytes())),
            EncoderKind::Downsample(spec) => {
                spec.encode(obs)
                    .map(StateCode::new)
                    .map_err(|reason| Error::EncodeShape {
                        encoder: self.id.to_string(),
                        shape: obs.shape().to_vec(),
                        reason,
                    })
            }
            EncoderKind::Preencoded(table) => table.lookup(&obs.digest()),
        }
    }

    pub fn encode_id(&self, obs: &ObservationTensor) -> Result<DiscreteStateId> {
        Ok(DiscreteStateId {
            encoder_id: self.id.clone(),
            code: self.encode(obs)?,
        })
    }
}

impl fmt::Display for StateEncoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            EncoderKind::Preencoded(_) => write!(f, "pre:{}", self.id),
            _ => f.write_str(&self.id),
        }
    }
}

/// An ordered, non-empty set of encoders with distinct ids.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiscaleEncoder {
    encoders: Vec<StateEncoder>,
}

impl MultiscaleEncoder {
    pub fn new(encoders: Vec<StateEncoder>) -> Result<Self> {
        if encoders.is_empty() {
            return Err(Error::EncoderSpec("multiscale encoder needs at least one member".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &encoders {
            if !seen.insert(e.id()) {
                return Err(Error::EncoderSpec(format!("duplicate encoder id {:?}", e.id())));
            }
        }
        Ok(Self { encoders })
    }

    pub fn single(encoder: StateEncoder) -> Self {
        Self {
            encoders: vec![encoder],
        }
    }

    /// Parses a comma-joined list of encoder specs.
    pub fn parse(spec: &str) -> Result<Self> {
        Self::new(spec.split(',').map(StateEncoder::parse).collect::<Result<_>>()?)
    }

    pub fn encoders(&self) -> &[StateEncoder] {
        &self.encoders
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.encoders.iter().map(|e| e.id().to_string()).collect()
    }

    pub fn spec_string(&self) -> String {
        self.encoders
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }

    /// The projected state set of one observation under every member.
    pub fn encode_all(&self, obs: &ObservationTensor) -> Result<Vec<DiscreteStateId>> {
        self.encoders.iter().map(|e| e.encode_id(obs)).collect()
    }
}

/// Action samples that landed on one state, with multiplicity.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSamples {
    /// Count per action index.
    Discrete(Vec<u32>),
    Continuous(Vec<Vec<f64>>),
}

impl StateSamples {
    fn empty(space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(k) => StateSamples::Discrete(vec![0; k as usize]),
            ActionSpace::Continuous(_) => StateSamples::Continuous(Vec::new()),
        }
    }

    fn push(&mut self, action: &Action) {
        match (self, action) {
            (StateSamples::Discrete(counts), Action::Discrete { index, .. }) => {
                counts[*index as usize] += 1
            }
            (StateSamples::Continuous(samples), Action::Continuous(v)) => samples.push(v.clone()),
            _ => unreachable!("action kind checked at pool construction"),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            StateSamples::Discrete(counts) => counts.iter().map(|&c| c as usize).sum(),
            StateSamples::Continuous(samples) => samples.len(),
        }
    }
}

/// One encoder's view of a dataset: state code → action samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedLevel {
    pub encoder_id: Arc<str>,
    pub states: BTreeMap<StateCode, StateSamples>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    levels: Vec<EncodedLevel>,
    space: ActionSpace,
    record_count: usize,
}

impl EncodedDataset {
    pub fn levels(&self) -> &[EncodedLevel] {
        &self.levels
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn record_count(&self) -> usize {
        self.record_count
    }

    /// `Φ(M)`: every namespaced state the dataset visits.
    pub fn projected_states(&self) -> BTreeSet<DiscreteStateId> {
        self.levels
            .iter()
            .flat_map(|level| {
                level.states.keys().map(|code| DiscreteStateId {
                    encoder_id: level.encoder_id.clone(),
                    code: code.clone(),
                })
            })
            .collect()
    }

    pub fn same_encoders(&self, other: &EncodedDataset) -> bool {
        self.levels.len() == other.levels.len()
            && self
                .levels
                .iter()
                .zip(&other.levels)
                .all(|(a, b)| a.encoder_id == b.encoder_id)
    }
}

/// Per-record state codes for a whole dataset, so subsamples can be assembled
/// without re-encoding.
#[derive(Clone, Debug)]
pub struct EncodedPool {
    encoder_ids: Vec<Arc<str>>,
    codes: Vec<Vec<StateCode>>,
    actions: Vec<Action>,
    space: ActionSpace,
}

impl EncodedPool {
    pub fn encode(encoders: &MultiscaleEncoder, ds: &StyleDataset) -> Result<Self> {
        let space = ds.action_space()?;
        let codes = encoders
            .encoders()
            .iter()
            .map(|enc| {
                ds.records
                    .par_iter()
                    .map(|r| enc.encode(&r.observation))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder_ids: encoders.encoders().iter().map(|e| e.id.clone()).collect(),
            codes,
            actions: ds.records.iter().map(|r| r.action.clone()).collect(),
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn gather(&self, indices: &[usize]) -> EncodedDataset {
        let levels = self
            .encoder_ids
            .iter()
            .zip(&self.codes)
            .map(|(id, codes)| {
                let mut states: BTreeMap<StateCode, StateSamples> = BTreeMap::new();
                for &i in indices {
                    states
                        .entry(codes[i].clone())
                        .or_insert_with(|| StateSamples::empty(self.space))
                        .push(&self.actions[i]);
                }
                EncodedLevel {
                    encoder_id: id.clone(),
                    states,
                }
            })
            .collect();
        EncodedDataset {
            levels,
            space: self.space,
            record_count: indices.len(),
        }
    }

    pub fn full(&self) -> EncodedDataset {
        self.gather(&(0..self.len()).collect::<Vec<_>>())
    }
}

pub fn encode_dataset(encoders: &MultiscaleEncoder, ds: &StyleDataset) -> Result<EncodedDataset> {
    Ok(EncodedPool::encode(encoders, ds)?.full())
}

/// Renders the pre-encoded file lines (`digest_hex, encoder_id, code_hex`) for the
/// distinct observations of a dataset under one encoder.
pub fn preencoded_lines(encoder: &StateEncoder, ds: &StyleDataset) -> Result<Vec<String>> {
    let mut seen = BTreeMap::new();
    for r in &ds.records {
        let digest = r.observation.digest();
        if let std::collections::btree_map::Entry::Vacant(slot) = seen.entry(digest) {
            slot.insert(encoder.encode(&r.observation)?);
        }
    }
    Ok(seen
        .into_iter()
        .map(|(digest, code)| format!("{digest}, {}, {}", encoder.id(), code.to_hex()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StepRecord;

    fn byte_obs(shape: Vec<usize>, data: Vec<u8>) -> ObservationTensor {
        ObservationTensor::from_bytes(shape, data).unwrap()
    }

    fn dataset(observations: Vec<ObservationTensor>) -> StyleDataset {
        StyleDataset::new(
            None,
            observations
                .into_iter()
                .enumerate()
                .map(|(i, o)| StepRecord::new(o, Action::discrete((i % 2) as u32, 2).unwrap()))
                .collect(),
        )
    }

    #[test]
    fn identity_maps_everything_to_one_state() {
        let e = StateEncoder::identity();
        let a = e.encode_id(&byte_obs(vec![2], vec![1, 2])).unwrap();
        let b = e.encode_id(&byte_obs(vec![3], vec![9, 9, 9])).unwrap();
        assert_eq!(a, b);
        assert_eq!(e.state_space_descriptor(), "1");

        let obs: Vec<_> = (0..1000).map(|i| byte_obs(vec![2], vec![(i % 256) as u8, 3])).collect();
        let enc = encode_dataset(&MultiscaleEncoder::single(e), &dataset(obs)).unwrap();
        assert_eq!(enc.levels()[0].states.len(), 1);
        assert_eq!(enc.levels()[0].states.values().next().unwrap().count(), 1000);
    }

    #[test]
    fn downsample_constant_zero() {
        let spec = DownsampleSpec::new(1, 8, 8, 16).unwrap();
        let e = StateEncoder::downsample(spec);
        let code = e.encode(&byte_obs(vec![4, 3, 64, 64], vec![0; 4 * 3 * 64 * 64])).unwrap();
        assert_eq!(code.as_bytes(), &[0u8; 64][..]);
    }

    #[test]
    fn downsample_to_coarse_resolution() {
        let e = StateEncoder::parse("down:1x8x8:16").unwrap();
        assert_eq!(e.state_space_descriptor(), "16^(8*8)");
        assert_eq!(e.id(), "down:1x8x8:16");
        let data: Vec<u8> = (0..4 * 3 * 64 * 64).map(|i| (i % 251) as u8).collect();
        let code = e.encode(&byte_obs(vec![4, 3, 64, 64], data)).unwrap();
        assert_eq!(code.as_bytes().len(), 64);
        assert!(code.as_bytes().iter().all(|&b| b < 16));
        let four = StateEncoder::parse("down:4×8×8:16").unwrap();
        assert_eq!(four.state_space_descriptor(), "16^(8*8*4)");
    }

    #[test]
    fn downsample_quantization_boundaries() {
        // 1 frame, 1 channel, 4x4 -> 1x1 block of 16 pixels, 4 levels over [0,255].
        // Bin edges sit at 63.75, 127.5, 191.25.
        let e = StateEncoder::downsample(DownsampleSpec::new(1, 1, 1, 4).unwrap());
        let base = vec![70u8; 16];
        // mean 70 -> bin 1; bump one pixel by 16 -> mean 71 -> still bin 1.
        let mut inside = base.clone();
        inside[5] = 86;
        let a = e.encode(&byte_obs(vec![4, 4], base.clone())).unwrap();
        let b = e.encode(&byte_obs(vec![4, 4], inside)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_bytes(), &[1]);
        // mean 127 -> bin 1; add 16 to one pixel -> mean 128 -> bin 2 (straddles 127.5).
        let below = vec![127u8; 16];
        let mut above = below.clone();
        above[0] = 143;
        let c = e.encode(&byte_obs(vec![4, 4], below)).unwrap();
        let d = e.encode(&byte_obs(vec![4, 4], above)).unwrap();
        assert_eq!(c.as_bytes(), &[1]);
        assert_eq!(d.as_bytes(), &[2]);
    }

    #[test]
    fn downsample_remainder_folds_into_last_block() {
        // 5 wide -> 2 blocks: cols {0,1} and {2,3,4}.
        let e = StateEncoder::downsample(DownsampleSpec::new(1, 1, 2, 256).unwrap());
        let code = e.encode(&byte_obs(vec![1, 5], vec![10, 20, 30, 60, 90])).unwrap();
        assert_eq!(code.as_bytes(), &[15, 60]);
    }

    #[test]
    fn downsample_keeps_last_frames_and_merges_channels() {
        let e = StateEncoder::downsample(DownsampleSpec::new(1, 1, 1, 256).unwrap());
        // frames: [0,0] then [100, 200] -> gray mean 150 of last frame
        let code = e.encode(&byte_obs(vec![2, 2, 1, 1], vec![0, 0, 100, 200])).unwrap();
        assert_eq!(code.as_bytes(), &[150]);
        let unit = ObservationTensor::from_unit(vec![1, 1], vec![1.0]).unwrap();
        assert_eq!(e.encode(&unit).unwrap().as_bytes(), &[255]);
    }

    #[test]
    fn downsample_rejects_small_inputs() {
        let e = StateEncoder::parse("down:1x8x8:16").unwrap();
        assert!(matches!(
            e.encode(&byte_obs(vec![1, 1, 4, 4], vec![0; 16])),
            Err(Error::EncodeShape { .. })
        ));
        assert!(DownsampleSpec::new(1, 1, 1, 1).is_err());
        assert!(StateEncoder::parse("down:1x8:16").is_err());
    }

    #[test]
    fn passthrough_is_identity_on_bytes() {
        let board: Vec<u8> = (0..16).collect();
        let code = StateEncoder::passthrough().encode(&byte_obs(vec![4, 4], board.clone())).unwrap();
        assert_eq!(code.as_bytes(), &board[..]);
        let other = StateEncoder::passthrough().encode(&byte_obs(vec![4, 4], vec![0; 16])).unwrap();
        assert_ne!(code, other);
    }

    #[test]
    fn passthrough_counts_distinct_boards() {
        use std::collections::HashSet;
        let boards: Vec<Vec<u8>> = (0..60u32).map(|i| vec![(i % 7) as u8, (i % 5) as u8]).collect();
        let expected: HashSet<&Vec<u8>> = boards.iter().collect();
        let ds = dataset(boards.iter().map(|b| byte_obs(vec![2], b.clone())).collect());
        let enc = encode_dataset(&MultiscaleEncoder::single(StateEncoder::passthrough()), &ds).unwrap();
        assert_eq!(enc.levels()[0].states.len(), expected.len());
    }

    #[test]
    fn preencoded_round_trip_and_errors() {
        let obs: Vec<_> = (0..3).map(|i| byte_obs(vec![1], vec![i])).collect();
        let text: String = obs
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}, pre-1, {:02x}\n", o.digest(), i + 10))
            .collect();
        let e = StateEncoder::preencoded(PreencodedTable::from_reader(text.as_bytes()).unwrap());
        assert_eq!(e.id(), "pre-1");
        for (i, o) in obs.iter().enumerate() {
            assert_eq!(e.encode(o).unwrap().as_bytes(), &[(i + 10) as u8]);
        }
        assert!(matches!(e.encode(&byte_obs(vec![1], vec![99])), Err(Error::MissingCode(_))));

        let dup = format!("{0}, pre-1, 01\n{0}, pre-1, 02\n", obs[0].digest());
        assert!(matches!(
            PreencodedTable::from_reader(dup.as_bytes()),
            Err(Error::DuplicateDigest(_))
        ));
    }

    #[test]
    fn preencoded_lines_reload() {
        let obs: Vec<_> = (0..5).map(|i| byte_obs(vec![2, 2], vec![i * 40; 4])).collect();
        let ds = dataset(obs.clone());
        let down = StateEncoder::parse("down:1x1x1:4").unwrap();
        let text = preencoded_lines(&down, &ds).unwrap().join("\n");
        let table = PreencodedTable::from_reader(text.as_bytes()).unwrap();
        assert_eq!(table.encoder_id(), "down:1x1x1:4");
        let pre = StateEncoder::preencoded(table);
        for o in &obs {
            assert_eq!(pre.encode(o).unwrap(), down.encode(o).unwrap());
        }
    }

    #[test]
    fn multiscale_union_counts() {
        let obs: Vec<_> = (0..10).map(|i| byte_obs(vec![1], vec![i])).collect();
        let ds = dataset(obs);
        let phi = MultiscaleEncoder::parse("identity,passthrough").unwrap();
        let enc = encode_dataset(&phi, &ds).unwrap();
        assert_eq!(enc.levels()[1].states.len(), 10);
        assert!(enc.levels()[1].states.values().all(|s| s.count() == 1));
        assert_eq!(enc.projected_states().len(), 11);
    }

    #[test]
    fn multiscale_rejects_duplicates_and_empty() {
        assert!(MultiscaleEncoder::parse("identity,identity").is_err());
        assert!(MultiscaleEncoder::new(vec![]).is_err());
        assert!(MultiscaleEncoder::parse("bogus").is_err());
    }
}
