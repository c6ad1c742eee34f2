//! Dataset, checkpoint and manifest files.
//!
//! Datasets are JSON lines, one [`EpisodeRecord`] per line with keys
//! `past`, `future`, `context`, `scenario_id`, `human_intention`, `seed`.
//! Positions are `[x, y]` pairs; `past` and `future` are lists of joint
//! states, each a list of positions with the robot first. Checkpoints are a
//! single JSON document holding the hyperparameter block and named flat
//! arrays (row-major).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use contingent_core::flow::{Checkpoint, FlowHyper, NamedArray};
use contingent_core::{EpisodeRecord, Intention, JointState, JointTrajectory, Observation, Position, ScenarioId};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite value")]
    NonFinite,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordLine {
    past: Vec<Vec<[f64; 2]>>,
    future: Vec<Vec<[f64; 2]>>,
    context: Vec<f64>,
    scenario_id: String,
    human_intention: String,
    seed: u64,
}

pub fn state_to_pairs(s: &JointState) -> Vec<[f64; 2]> {
    s.positions().iter().map(|p| p.to_array()).collect()
}

fn pairs_to_state(pairs: &[[f64; 2]]) -> Result<JointState, String> {
    JointState::new(pairs.iter().map(|&[x, y]| Position::new(x, y)).collect()).map_err(|e| e.to_string())
}

impl RecordLine {
    fn from_record(r: &EpisodeRecord) -> Self {
        RecordLine {
            past: r.observation.past().iter().map(state_to_pairs).collect(),
            future: r.future.steps().iter().map(state_to_pairs).collect(),
            context: r.observation.context().to_vec(),
            scenario_id: r.scenario_id.as_str().to_string(),
            human_intention: r.human_intention.as_str().to_string(),
            seed: r.seed,
        }
    }

    fn into_record(self) -> Result<EpisodeRecord, String> {
        let past = self.past.iter().map(|s| pairs_to_state(s)).collect::<Result<Vec<_>, _>>()?;
        let future = self.future.iter().map(|s| pairs_to_state(s)).collect::<Result<Vec<_>, _>>()?;
        Ok(EpisodeRecord {
            observation: Observation::new(past, self.context).map_err(|e| e.to_string())?,
            future: JointTrajectory::new(future).map_err(|e| e.to_string())?,
            scenario_id: ScenarioId::parse(&self.scenario_id).ok_or_else(|| format!("unknown scenario {:?}", self.scenario_id))?,
            human_intention: Intention::parse(&self.human_intention)
                .ok_or_else(|| format!("unknown intention {:?}", self.human_intention))?,
            seed: self.seed,
        })
    }
}

/// One JSON object per record, newline terminated.
pub fn serialize_dataset(records: &[EpisodeRecord]) -> Result<Vec<u8>, FormatError> {
    if records.is_empty() {
        return Err(FormatError::EmptyDataset);
    }
    let mut out = Vec::new();
    for r in records {
        if !r.is_finite() {
            return Err(FormatError::NonFinite);
        }
        serde_json::to_writer(&mut out, &RecordLine::from_record(r)).map_err(std::io::Error::from)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn deserialize_dataset(reader: impl BufRead) -> Result<Vec<EpisodeRecord>, FormatError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine =
            serde_json::from_str(&line).map_err(|e| FormatError::Parse { line: i + 1, message: e.to_string() })?;
        if parsed.past.iter().chain(&parsed.future).flatten().flatten().chain(&parsed.context).any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite);
        }
        records.push(parsed.into_record().map_err(|message| FormatError::Parse { line: i + 1, message })?);
    }
    if records.is_empty() {
        return Err(FormatError::EmptyDataset);
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, records: &[EpisodeRecord]) -> Result<(), FormatError> {
    let bytes = serialize_dataset(records)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<EpisodeRecord>, FormatError> {
    deserialize_dataset(BufReader::new(fs::File::open(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HyperBlock {
    past_len: usize,
    horizon: usize,
    agents: usize,
    context_dim: usize,
    window: usize,
    hidden: Vec<usize>,
    dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayBlock {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    hyper: HyperBlock,
    arrays: Vec<ArrayBlock>,
}

pub fn checkpoint_to_json(ck: &Checkpoint) -> Result<String, FormatError> {
    if ck.arrays.iter().flat_map(|a| &a.data).any(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite);
    }
    let h = &ck.hyper;
    let file = CheckpointFile {
        hyper: HyperBlock {
            past_len: h.past_len,
            horizon: h.horizon,
            agents: h.agents,
            context_dim: h.context_dim,
            window: h.window,
            hidden: h.hidden.clone(),
            dt: h.dt,
        },
        arrays: ck.arrays.iter().map(|a| ArrayBlock { name: a.name.clone(), rows: a.rows, cols: a.cols, data: a.data.clone() }).collect(),
    };
    let mut s = serde_json::to_string(&file).map_err(|e| FormatError::Checkpoint(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn checkpoint_from_json(text: &str) -> Result<Checkpoint, FormatError> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| FormatError::Checkpoint(e.to_string()))?;
    let h = file.hyper;
    let hyper = FlowHyper {
        past_len: h.past_len,
        horizon: h.horizon,
        agents: h.agents,
        context_dim: h.context_dim,
        window: h.window,
        hidden: h.hidden,
        dt: h.dt,
    };
    let arrays = file.arrays.into_iter().map(|a| NamedArray { name: a.name, rows: a.rows, cols: a.cols, data: a.data }).collect();
    Ok(Checkpoint { hyper, arrays })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), FormatError> {
    fs::write(path, checkpoint_to_json(ck)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    checkpoint_from_json(&fs::read_to_string(path)?)
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::from)?;
    f.write_all(b"\n")
}

/// Writes one JSON object per line.
pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.push(b'\n');
    }
    fs::write(path, out)
}

/// Writes a CSV file from serializable rows; the header comes from the
/// field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
