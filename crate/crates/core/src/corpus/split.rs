use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::write_atomic;
use super::{Dataset, PartEncoding, ProcessChain, N_PARTS};
use crate::{rng, Error, Result};

/// Validation share, fixed across all training fractions.
pub const VAL_FRACTION: f64 = 0.10;

/// Train/validation/test partition of the part space.
///
/// Parts are drawn from one seeded permutation, so for a fixed seed the train
/// parts of a smaller fraction are a prefix of those of a larger fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub fraction: f64,
    pub seed: u64,
    pub train_parts: Vec<PartEncoding>,
    pub val_parts: Vec<PartEncoding>,
    pub test_parts: Vec<PartEncoding>,
}

/// On-disk form: part indices per partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub fraction: f64,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn count(fraction: f64) -> usize {
    (fraction * N_PARTS as f64).round() as usize
}

pub fn split_dataset(ds: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 0.9) {
        return Err(Error::invalid(format!(
            "train fraction {fraction} outside (0, 0.9)"
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let n_train = count(fraction);
    let n_val = count(VAL_FRACTION);
    let part = |i: &usize| ds.records()[*i].part;
    Ok(Split {
        fraction,
        seed,
        train_parts: order[..n_train].iter().map(part).collect(),
        val_parts: order[n_train..n_train + n_val].iter().map(part).collect(),
        test_parts: order[n_train + n_val..].iter().map(part).collect(),
    })
}

fn expand(ds: &Dataset, parts: &[PartEncoding]) -> Vec<(PartEncoding, ProcessChain)> {
    parts
        .iter()
        .flat_map(|p| ds.chains(p).iter().map(move |c| (*p, c.clone())))
        .collect()
}

impl Split {
    /// One (part, chain) pair per feasible chain of every train part.
    pub fn train_pairs(&self, ds: &Dataset) -> Vec<(PartEncoding, ProcessChain)> {
        expand(ds, &self.train_parts)
    }

    pub fn val_pairs(&self, ds: &Dataset) -> Vec<(PartEncoding, ProcessChain)> {
        expand(ds, &self.val_parts)
    }

    /// Train followed by validation parts: the labeled pool.
    pub fn labeled_parts(&self) -> Vec<PartEncoding> {
        self.train_parts
            .iter()
            .chain(&self.val_parts)
            .copied()
            .collect()
    }

    pub fn is_disjoint(&self) -> bool {
        let train: HashSet<_> = self.train_parts.iter().collect();
        let val: HashSet<_> = self.val_parts.iter().collect();
        let test: HashSet<_> = self.test_parts.iter().collect();
        train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test)
    }

    pub fn manifest(&self) -> SplitManifest {
        let idx = |v: &[PartEncoding]| v.iter().map(PartEncoding::index).collect();
        SplitManifest {
            fraction: self.fraction,
            seed: self.seed,
            train: idx(&self.train_parts),
            val: idx(&self.val_parts),
            test: idx(&self.test_parts),
        }
    }

    pub fn file_name(fraction: f64, seed: u64) -> String {
        format!("split_{fraction}_{seed}.json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(&self.manifest()).expect("split manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SplitManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let parts = |v: &[usize]| -> Result<Vec<PartEncoding>> {
            v.iter()
                .map(|&i| {
                    PartEncoding::from_index(i)
                        .ok_or_else(|| Error::format(path, format!("part index {i} out of range")))
                })
                .collect()
        };
        let split = Split {
            fraction: m.fraction,
            seed: m.seed,
            train_parts: parts(&m.train)?,
            val_parts: parts(&m.val)?,
            test_parts: parts(&m.test)?,
        };
        if !split.is_disjoint() {
            return Err(Error::format(path, "partitions overlap"));
        }
        Ok(split)
    }
}
