//! JSON-lines dataset files.
//!
//! Line 1 is a header `{"schema": "v1", "env": …, "state_dim": …,
//! "action_dim": …, "n_trajectories": N, "stats": {…}}`; lines 2..=N+1 hold
//! one trajectory each as `{"episode_id", "source", "transitions": [{"s",
//! "a", "r", "s_next", "done"}, …]}`. Record indices in errors count
//! trajectories from 0; the header is reported as record 0 of a dataset
//! with no trajectories read yet.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NormStats, OfflineDataset, Trajectory};
use crate::{Error, Result};

pub const DATASET_SCHEMA: &str = "v1";

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    env: String,
    state_dim: usize,
    action_dim: usize,
    n_trajectories: usize,
    stats: NormStats,
}

pub fn save_dataset(dataset: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        schema: DATASET_SCHEMA.to_string(),
        env: dataset.env.clone(),
        state_dim: dataset.state_dim,
        action_dim: dataset.action_dim,
        n_trajectories: dataset.trajectories.len(),
        stats: dataset.stats.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in &dataset.trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    let path = path.as_ref();
    let fmt = |record: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        record,
        message,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| fmt(0, "missing header line".into()))??;
    let raw: serde_json::Value =
        serde_json::from_str(&header_line).map_err(|e| fmt(0, format!("malformed header: {e}")))?;
    let schema = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<missing>");
    if schema != DATASET_SCHEMA {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: schema.to_string(),
            expected: DATASET_SCHEMA,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| fmt(0, format!("malformed header: {e}")))?;

    let mut trajectories = Vec::with_capacity(header.n_trajectories);
    for record in 0..header.n_trajectories {
        let line = match lines.next() {
            Some(line) => line?,
            None => {
                return Err(fmt(
                    record,
                    format!("file ends after {record} of {} trajectories", header.n_trajectories),
                ))
            }
        };
        let t: Trajectory =
            serde_json::from_str(&line).map_err(|e| fmt(record, format!("malformed trajectory: {e}")))?;
        if let Some(j) = t.chain_break() {
            return Err(fmt(record, format!("trajectory not chained at transition {j}")));
        }
        for tr in &t.transitions {
            if tr.s.len() != header.state_dim || tr.s_next.len() != header.state_dim || tr.a.len() != header.action_dim {
                return Err(fmt(record, "transition dimensions do not match header".into()));
            }
        }
        trajectories.push(t);
    }
    for extra in lines {
        if !extra?.trim().is_empty() {
            return Err(fmt(
                header.n_trajectories,
                format!("more records than the {} declared in the header", header.n_trajectories),
            ));
        }
    }
    Ok(OfflineDataset {
        env: header.env,
        state_dim: header.state_dim,
        action_dim: header.action_dim,
        trajectories,
        stats: header.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect, MdpSpec};

    #[test]
    fn empty_dataset_round_trips() {
        let spec = MdpSpec::named("chain-1d").unwrap();
        let d = OfflineDataset::empty(&spec);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&d, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);
    }

    #[test]
    fn collected_dataset_round_trips_bit_exactly() {
        let spec = MdpSpec::named("point-reach").unwrap();
        let d = collect(&spec, "modes-ab", 10, 3).unwrap();
        assert_eq!(d.len(), 10);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&d, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);
    }

    #[test]
    fn truncated_file_names_the_record() {
        let spec = MdpSpec::named("point-reach").unwrap();
        let d = collect(&spec, "modes-ab", 6, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&d, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        // Cut the file in the middle of the fourth trajectory (record 3).
        let line_starts: Vec<usize> = text.match_indices('\n').map(|(i, _)| i + 1).collect();
        let cut = line_starts[3] + 20;
        std::fs::write(&p, &text[..cut]).unwrap();
        match load_dataset(&p) {
            Err(Error::Format { record, .. }) => assert_eq!(record, 3),
            other => panic!("expected a format error, got {other:?}"),
        }
        // Dropping whole lines reports the first missing record.
        std::fs::write(&p, &text[..line_starts[2]]).unwrap();
        match load_dataset(&p) {
            Err(Error::Format { record, .. }) => assert_eq!(record, 2),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"schema\":\"v0\"}\n").unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Version { .. })));
    }
}
