use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{enumerate_parts, plan_feasible_chains, PartEncoding, ProcessChain, N_PARTS};
use crate::{Error, Result};

pub const RULE_VERSION: &str = "rules-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub part: PartEncoding,
    pub chains: Vec<ProcessChain>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub rule_version: String,
    pub seed: u64,
}

/// One record per part encoding, indexed by [`PartEncoding::index`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    records: Vec<Record>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Enumerates the part space and applies the rule table.
    pub fn generate() -> Self {
        let records = enumerate_parts()
            .into_iter()
            .map(|part| Record {
                chains: plan_feasible_chains(&part),
                part,
            })
            .collect();
        Dataset {
            records,
            provenance: Provenance {
                rule_version: RULE_VERSION.to_string(),
                seed: 0,
            },
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, part: &PartEncoding) -> &Record {
        &self.records[part.index()]
    }

    pub fn chains(&self, part: &PartEncoding) -> &[ProcessChain] {
        &self.record(part).chains
    }

    pub fn is_feasible(&self, part: &PartEncoding, chain: &ProcessChain) -> bool {
        self.chains(part).contains(chain)
    }

    pub fn pair_count(&self) -> usize {
        self.records.iter().map(|r| r.chains.len()).sum()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes the JSONL file through a temporary sibling and an atomic rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut by_index: HashMap<usize, Record> = HashMap::with_capacity(N_PARTS);
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
            if rec.chains.is_empty() || rec.chains.len() > 3 {
                return Err(Error::format(
                    path,
                    format!("line {}: expected 1..=3 chains", lineno + 1),
                ));
            }
            if by_index.insert(rec.part.index(), rec).is_some() {
                return Err(Error::format(
                    path,
                    format!("line {}: duplicate part", lineno + 1),
                ));
            }
        }
        if by_index.len() != N_PARTS {
            return Err(Error::format(
                path,
                format!("expected {N_PARTS} records, found {}", by_index.len()),
            ));
        }
        let records = (0..N_PARTS)
            .map(|i| by_index.remove(&i).expect("all indices present"))
            .collect();
        Ok(Dataset {
            records,
            provenance: Provenance {
                rule_version: RULE_VERSION.to_string(),
                seed: 0,
            },
        })
    }
}

/// Generates the dataset and writes it to `out_path`.
pub fn build_dataset(out_path: &Path) -> Result<Dataset> {
    let ds = Dataset::generate();
    ds.save(out_path)?;
    Ok(ds)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_dataset_shape() {
        let ds = Dataset::generate();
        assert_eq!(ds.len(), 2048);
        let pairs = ds.pair_count();
        assert!((2048..=6144).contains(&pairs), "{pairs}");
        for (i, r) in ds.records().iter().enumerate() {
            assert_eq!(r.part.index(), i);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let ds = build_dataset(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);
        let first = fs::read_to_string(&path).unwrap();
        let line = first.lines().next().unwrap();
        assert!(line.starts_with(
            r#"{"part":{"geometry":"prismatic","holes":"none","external_threads":"yes""#
        ));
        assert!(!dir.path().join("dataset.jsonl.tmp").exists());
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = build_dataset(&blocker.join("dataset.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
