//! Trajectory logs (one JSON object per step) and dataset manifests.
//!
//! A log line looks like
//! `{"traj":"ep0","t":3,"obs_shape":[1,1,8,8],"obs":"<base64>","obs_kind":"byte","action":2,"action_space":4}`.
//! `obs` is either base64 of the raw bytes or an array of numbers; `action` is an
//! index or a float vector matching `action_space` (`K` or `"continuous:D"`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    Action, ActionSpace, ObservationData, ObservationTensor, StepRecord, StyleDataset, Trajectory,
    ValueKind,
};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ObsField {
    Encoded(String),
    Values(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ActionField {
    Index(u64),
    Vector(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpaceField {
    Size(u32),
    Named(String),
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    traj: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<u64>,
    obs_shape: Vec<usize>,
    obs: ObsField,
    obs_kind: String,
    action: ActionField,
    action_space: SpaceField,
}

fn parse_line(line: &str) -> std::result::Result<StepRecord, String> {
    let raw: LogLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let kind: ValueKind = raw.obs_kind.parse().map_err(|e: Error| e.to_string())?;
    let observation = match (kind, raw.obs) {
        (ValueKind::Byte, ObsField::Encoded(b64)) => {
            let bytes = BASE64.decode(b64.as_bytes()).map_err(|e| format!("bad base64: {e}"))?;
            ObservationTensor::from_bytes(raw.obs_shape, bytes)
        }
        (ValueKind::Byte, ObsField::Values(vals)) => {
            let bytes = vals
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                        Ok(v as u8)
                    } else {
                        Err(format!("byte observation value {v} is not an integer in [0, 255]"))
                    }
                })
                .collect::<std::result::Result<Vec<u8>, String>>()?;
            ObservationTensor::from_bytes(raw.obs_shape, bytes)
        }
        (ValueKind::UnitFloat, ObsField::Encoded(b64)) => {
            let bytes = BASE64.decode(b64.as_bytes()).map_err(|e| format!("bad base64: {e}"))?;
            if bytes.len() % 4 != 0 {
                return Err("unit_float payload is not a whole number of f32 values".into());
            }
            let vals = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ObservationTensor::from_unit(raw.obs_shape, vals)
        }
        (ValueKind::UnitFloat, ObsField::Values(vals)) => {
            ObservationTensor::from_unit(raw.obs_shape, vals.iter().map(|&v| v as f32).collect())
        }
    }
    .map_err(|e| e.to_string())?;
    let space = match raw.action_space {
        SpaceField::Size(k) => ActionSpace::Discrete(k),
        SpaceField::Named(s) => s.parse().map_err(|e: Error| e.to_string())?,
    };
    let action = match (space, raw.action) {
        (ActionSpace::Discrete(k), ActionField::Index(i)) => {
            let i = u32::try_from(i).map_err(|_| format!("action index {i} out of range"))?;
            Action::discrete(i, k)
        }
        (ActionSpace::Continuous(d), ActionField::Vector(v)) => {
            if v.len() != d {
                return Err(format!("action has {} components, space declares {d}", v.len()));
            }
            Action::continuous(v)
        }
        (ActionSpace::Continuous(1), ActionField::Index(i)) => Action::continuous(vec![i as f64]),
        (space, _) => return Err(format!("action does not match action space {space}")),
    }
    .map_err(|e| e.to_string())?;
    let trajectory_id = raw.traj.map(|v| match v {
        Value::String(s) => s,
        other => other.to_string(),
    });
    Ok(StepRecord {
        observation,
        action,
        trajectory_id,
        step_index: raw.t,
    })
}

/// Reads step records; `source` names the input in error messages.
pub fn read_records<R: BufRead>(reader: R, source: &str) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record = parse_line(trimmed).map_err(|e| Error::Parse(format!("{source}:{}: {e}", no + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let file = File::open(path).map_err(|e| with_path(e, path))?;
    read_records(BufReader::new(file), &path.display().to_string())
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn to_line(r: &StepRecord) -> LogLine {
    let obs = match r.observation.data() {
        ObservationData::Bytes(b) => ObsField::Encoded(BASE64.encode(b)),
        ObservationData::Unit(v) => ObsField::Values(v.iter().map(|&x| x as f64).collect()),
    };
    let (action, action_space) = match &r.action {
        Action::Discrete { index, space_size } => (ActionField::Index(*index as u64), SpaceField::Size(*space_size)),
        Action::Continuous(v) => (
            ActionField::Vector(v.clone()),
            SpaceField::Named(ActionSpace::Continuous(v.len()).to_string()),
        ),
    };
    LogLine {
        traj: r.trajectory_id.clone().map(Value::String),
        t: r.step_index,
        obs_shape: r.observation.shape().to_vec(),
        obs,
        obs_kind: r.observation.value_kind().as_str().to_string(),
        action,
        action_space,
    }
}

pub fn write_records<W: Write>(mut writer: W, records: &[StepRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, &to_line(r)).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_log(path: &Path, records: &[StepRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| with_path(e, path))?;
    write_records(BufWriter::new(file), records)
}

/// A labelled dataset made of one or more log files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub label: Option<String>,
    pub files: Vec<PathBuf>,
}

/// Either a bare log path or a full dataset entry.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Entry {
    Path(PathBuf),
    Dataset(DatasetManifest),
}

#[derive(Deserialize)]
struct StylesFile {
    styles: Vec<Entry>,
}

#[derive(Deserialize)]
struct GridFile {
    grid: Vec<Vec<Entry>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| with_path(e, path))?
        .read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn file_stem(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}

impl DatasetManifest {
    /// Concatenates the member logs, resolving relative paths against `base`.
    pub fn load(&self, base: &Path) -> Result<StyleDataset> {
        let mut records = Vec::new();
        for f in &self.files {
            records.extend(read_log(&resolve(base, f))?);
        }
        let label = self.label.clone().or_else(|| self.files.first().and_then(|f| file_stem(f)));
        Ok(StyleDataset::new(label, records))
    }
}

fn load_entry(entry: &Entry, base: &Path) -> Result<StyleDataset> {
    match entry {
        Entry::Path(p) => load_dataset(&resolve(base, p)),
        Entry::Dataset(m) => m.load(base),
    }
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

/// Loads a dataset from a `.json` manifest (`{"label", "files"}`) or a single log.
pub fn load_dataset(path: &Path) -> Result<StyleDataset> {
    if path.extension().is_some_and(|e| e == "json") {
        let m: DatasetManifest = read_json(path)?;
        m.load(parent(path))
    } else {
        Ok(StyleDataset::new(file_stem(path), read_log(path)?))
    }
}

/// Loads `{"styles": [...]}`; entries are log paths or dataset manifests.
pub fn load_styles(path: &Path) -> Result<Vec<(String, StyleDataset)>> {
    let f: StylesFile = read_json(path)?;
    f.styles
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let ds = load_entry(e, parent(path))?;
            let label = ds.label.clone().unwrap_or_else(|| format!("style{i}"));
            Ok((label, ds))
        })
        .collect()
}

/// Loads `{"grid": [[...], ...]}`, a row-major grid of dataset entries.
pub fn load_grid(path: &Path) -> Result<Vec<Vec<StyleDataset>>> {
    let f: GridFile = read_json(path)?;
    f.grid
        .iter()
        .map(|row| row.iter().map(|e| load_entry(e, parent(path))).collect())
        .collect()
}

/// Splits records into trajectories by `traj` id, in order of first appearance.
/// Records without an id form one trajectory named `default_id`.
pub fn split_trajectories(records: Vec<StepRecord>, default_id: &str) -> Result<Vec<Trajectory>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<StepRecord>> = Default::default();
    for r in records {
        let id = r.trajectory_id.clone().unwrap_or_else(|| default_id.to_string());
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let steps = groups.remove(&id).unwrap_or_default();
            Trajectory::new(id, steps)
        })
        .collect()
}

/// Log files of a directory in name order.
pub fn log_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| with_path(e, dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Every trajectory of every `.jsonl` file in `dir`, files taken in name order.
pub fn load_trajectory_dir(dir: &Path) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for f in log_files(dir)? {
        let stem = file_stem(&f).unwrap_or_default();
        out.extend(split_trajectories(read_log(&f)?, &stem)?);
    }
    Ok(out)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn digest_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path).map_err(|e| with_path(e, path))?;
    std::io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(o: u8, a: u32, traj: &str, t: u64) -> StepRecord {
        StepRecord {
            observation: ObservationTensor::from_bytes(vec![1, 2], vec![o, 255 - o]).unwrap(),
            action: Action::discrete(a, 4).unwrap(),
            trajectory_id: Some(traj.into()),
            step_index: Some(t),
        }
    }

    #[test]
    fn round_trip_bytes_and_floats() {
        let mut records = vec![rec(3, 1, "a", 0), rec(9, 2, "a", 1)];
        records.push(StepRecord::new(
            ObservationTensor::from_unit(vec![3], vec![0.0, 0.1, 1.0]).unwrap(),
            Action::continuous(vec![0.25, -1.5]).unwrap(),
        ));
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn accepts_integer_arrays_and_numeric_ids() {
        let line = r#"{"traj":7,"t":0,"obs_shape":[2],"obs":[0,255],"obs_kind":"byte","action":1,"action_space":2}"#;
        let r = read_records(line.as_bytes(), "mem").unwrap();
        assert_eq!(r[0].trajectory_id.as_deref(), Some("7"));
        assert_eq!(r[0].observation.raw_bytes(), vec![0, 255]);
        let cont = r#"{"obs_shape":[1],"obs":[0.5],"obs_kind":"unit_float","action":[1.0,2.0],"action_space":"continuous:2"}"#;
        assert!(read_records(cont.as_bytes(), "mem").unwrap()[0].action.space() == ActionSpace::Continuous(2));
    }

    #[test]
    fn rejects_malformed_lines() {
        let cases = [
            r#"{"obs_shape":[2],"obs":[0,256],"obs_kind":"byte","action":1,"action_space":2}"#,
            r#"{"obs_shape":[3],"obs":[0,1],"obs_kind":"byte","action":1,"action_space":2}"#,
            r#"{"obs_shape":[1],"obs":[1],"obs_kind":"byte","action":2,"action_space":2}"#,
            r#"{"obs_shape":[1],"obs":[1],"obs_kind":"byte","action":[1.0],"action_space":2}"#,
            r#"{"obs_shape":[1],"obs":[1.5],"obs_kind":"unit_float","action":0,"action_space":2}"#,
            r#"not json"#,
        ];
        for c in cases {
            let err = read_records(c.as_bytes(), "mem").unwrap_err();
            assert!(matches!(err, Error::Parse(ref m) if m.starts_with("mem:1:")), "{c}: {err}");
        }
    }

    #[test]
    fn manifests_and_directories() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        write_log(&p.join("x.jsonl"), &[rec(1, 0, "a", 0), rec(2, 1, "b", 0)]).unwrap();
        write_log(&p.join("y.jsonl"), &[rec(3, 3, "c", 0)]).unwrap();
        std::fs::write(p.join("m.json"), r#"{"label":"both","files":["x.jsonl","y.jsonl"]}"#).unwrap();
        let ds = load_dataset(&p.join("m.json")).unwrap();
        assert_eq!(ds.label.as_deref(), Some("both"));
        assert_eq!(ds.len(), 3);
        std::fs::write(p.join("s.json"), r#"{"styles":["x.jsonl",{"label":"why","files":["y.jsonl"]}]}"#).unwrap();
        let styles = load_styles(&p.join("s.json")).unwrap();
        assert_eq!(styles[0].0, "x");
        assert_eq!(styles[1].0, "why");
        std::fs::write(p.join("g.json"), r#"{"grid":[["x.jsonl","y.jsonl"]]}"#).unwrap();
        assert_eq!(load_grid(&p.join("g.json")).unwrap()[0].len(), 2);
        let trajs = load_trajectory_dir(p).unwrap();
        assert_eq!(trajs.iter().map(|t| t.id()).collect::<Vec<_>>(), vec!["a", "b", "c"]);
        assert_eq!(digest_file(&p.join("x.jsonl")).unwrap().len(), 64);
        assert!(matches!(load_dataset(&p.join("missing.jsonl")), Err(Error::Io(_))));
    }
}
