//! JSONL dataset files.
//!
//! Line 1 is a header object with `state_dim`, `action_dim`, `box`,
//! `state_key` and an optional `source`. Every following line is one
//! transition `{"s": [...], "a": [...], "r": x, "s2": [...], "done": b}`.
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetSource, StateKeyMode, Transition, TransitionDataset};
use crate::noise::ActionBox;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    state_dim: usize,
    action_dim: usize,
    #[serde(rename = "box")]
    bounds: ActionBox,
    state_key: StateKeyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<DatasetSource>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    s2: Vec<f64>,
    done: bool,
}

pub fn write_jsonl<W: Write>(dataset: &TransitionDataset, mut out: W) -> Result<(), DatasetError> {
    let header = Header {
        state_dim: dataset.state_dim(),
        action_dim: dataset.action_dim(),
        bounds: dataset.bounds().clone(),
        state_key: dataset.state_key_mode(),
        source: dataset.source().cloned(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).map_err(io_err)?)?;
    for t in dataset.transitions() {
        writeln!(out, "{}", serde_json::to_string(t).map_err(io_err)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_jsonl(dataset: &TransitionDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_jsonl(dataset, BufWriter::new(File::create(path)?))
}

pub fn read_jsonl<R: Read>(input: R) -> Result<TransitionDataset, DatasetError> {
    let mut lines = BufReader::new(input).lines();
    let first = lines.next().ok_or(DatasetError::Parse { line: 1, msg: "missing header line".into() })??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| DatasetError::Parse { line: 1, msg: format!("header: {e}") })?;
    if header.action_dim != header.bounds.dim() {
        return Err(DatasetError::DimMismatch {
            line: 1,
            what: format!("header action_dim {} but box has {} dimensions", header.action_dim, header.bounds.dim()),
        });
    }
    let mut transitions = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse { line: line_no, msg: e.to_string() })?;
        if row.s.len() != header.state_dim || row.s2.len() != header.state_dim || row.a.len() != header.action_dim {
            return Err(DatasetError::DimMismatch {
                line: line_no,
                what: format!(
                    "dims s={} a={} s2={} disagree with header state_dim={} action_dim={}",
                    row.s.len(),
                    row.a.len(),
                    row.s2.len(),
                    header.state_dim,
                    header.action_dim
                ),
            });
        }
        transitions.push(Transition { s: row.s, a: row.a, r: row.r, s2: row.s2, done: row.done });
    }
    let dataset = TransitionDataset::new(transitions, header.bounds, header.state_key)?;
    Ok(match header.source {
        Some(src) => dataset.with_source(src),
        None => dataset,
    })
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<TransitionDataset, DatasetError> {
    read_jsonl(File::open(path)?)
}

fn io_err(e: serde_json::Error) -> DatasetError {
    DatasetError::Io(std::io::Error::other(e))
}
