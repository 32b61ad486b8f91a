//! `gen-v1` JSON-lines files: a header line, then one record per anchor.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Anchor, GenMode, GenOutput, StitchedStateTraj};
use crate::{Error, Result};

pub const GEN_SCHEMA: &str = "gen-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: String,
    env: String,
    horizon: usize,
    mode: GenMode,
    guidance: f64,
    n_records: usize,
}

/// One anchor's outcome: the stitched states, or the sampler error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub index: usize,
    pub anchor: Anchor,
    #[serde(default)]
    pub traj: Option<StitchedStateTraj>,
    #[serde(default)]
    pub error: Option<String>,
}

impl From<GenOutput> for GenRecord {
    fn from(o: GenOutput) -> Self {
        let (traj, error) = match o.result {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            index: o.index,
            anchor: o.anchor,
            traj,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenFile {
    pub env: String,
    pub horizon: usize,
    pub mode: GenMode,
    pub guidance: f64,
    pub records: Vec<GenRecord>,
}

impl GenFile {
    pub fn trajectories(&self) -> impl Iterator<Item = &StitchedStateTraj> {
        self.records.iter().filter_map(|r| r.traj.as_ref())
    }
}

pub fn save_generated(file: &GenFile, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        schema: GEN_SCHEMA.to_string(),
        env: file.env.clone(),
        horizon: file.horizon,
        mode: file.mode,
        guidance: file.guidance,
        n_records: file.records.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &file.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_generated(path: impl AsRef<Path>) -> Result<GenFile> {
    let path = path.as_ref();
    let fmt = |record: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        record,
        message,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| fmt(0, "missing header line".into()))??;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| fmt(0, format!("malformed header: {e}")))?;
    let schema = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<missing>");
    if schema != GEN_SCHEMA {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: schema.to_string(),
            expected: GEN_SCHEMA,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| fmt(0, format!("malformed header: {e}")))?;
    let mut records = Vec::with_capacity(header.n_records);
    for i in 0..header.n_records {
        let line = lines
            .next()
            .ok_or_else(|| fmt(i, format!("file ends after {i} of {} records", header.n_records)))??;
        let r: GenRecord = serde_json::from_str(&line).map_err(|e| fmt(i, format!("malformed record: {e}")))?;
        records.push(r);
    }
    Ok(GenFile {
        env: header.env,
        horizon: header.horizon,
        mode: header.mode,
        guidance: header.guidance,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_failures() {
        let anchor = Anchor {
            traj: 1,
            index: 4,
            state: vec![0.1, 0.2],
            forward_return: -3.0,
            backward_return: -4.5,
        };
        let file = GenFile {
            env: "point-reach".into(),
            horizon: 2,
            mode: GenMode::Bidirectional,
            guidance: 0.8,
            records: vec![
                GenRecord {
                    index: 0,
                    anchor: anchor.clone(),
                    traj: Some(StitchedStateTraj {
                        states: vec![vec![0.0, 0.1], vec![0.1, 0.2], vec![1.0 / 3.0, 0.3]],
                        anchor_index: 1,
                    }),
                    error: None,
                },
                GenOutput {
                    index: 1,
                    anchor,
                    result: Err(Error::SamplerDiverged { step: 7 }),
                }
                .into(),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.jsonl");
        save_generated(&file, &p).unwrap();
        let back = load_generated(&p).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.trajectories().count(), 1);
        assert!(back.records[1].error.as_ref().unwrap().contains('7'));
    }
}
