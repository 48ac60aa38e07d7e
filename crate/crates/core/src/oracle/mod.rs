//! Binary oracle over trace features: does a generated chain match one of
//! the feasible chains of its part?

mod gbdt;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gbdt::{boost, logit, sigmoid, GbdtParams, Tree};

use crate::corpus::{Dataset, PartEncoding};
use crate::seqmodel::{Generation, Model};
use crate::trace_features::{
    extract_features, FeatureRow, FeatureVector, N_FEATURES, SCHEMA_VERSION,
};
use crate::{rng, Error, Result};

/// One labeled oracle example.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub part_id: usize,
    pub features: FeatureVector,
    /// True iff the generation matched a feasible chain.
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleDataset {
    pub rows: Vec<OracleRow>,
}

impl OracleDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positive_rate(&self) -> f64 {
        self.rows.iter().filter(|r| r.label).count() as f64 / self.rows.len().max(1) as f64
    }

    /// Labels generations against the rule-engine ground truth; malformed
    /// generations are negatives.
    pub fn from_generations(gens: &[Generation], truth: &Dataset) -> Result<Self> {
        let rows = gens
            .iter()
            .map(|g| {
                Ok(OracleRow {
                    part_id: g.part.index(),
                    features: extract_features(&g.trace)?,
                    label: g.is_correct(truth),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleDataset { rows })
    }

    pub fn to_feature_rows(&self) -> Vec<FeatureRow> {
        self.rows
            .iter()
            .map(|r| FeatureRow {
                part_id: r.part_id,
                label: Some(r.label),
                features: r.features.clone(),
            })
            .collect()
    }

    /// Requires every row to carry a label.
    pub fn from_feature_rows(rows: Vec<FeatureRow>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|r| {
                let label = r
                    .label
                    .ok_or_else(|| Error::invalid(format!("part {} has no label", r.part_id)))?;
                Ok(OracleRow {
                    part_id: r.part_id,
                    features: r.features,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleDataset { rows })
    }
}

/// Generates on `parts`, extracts features and labels each row.
pub fn build_oracle_dataset(
    model: &Model,
    parts: &[PartEncoding],
    truth: &Dataset,
) -> Result<OracleDataset> {
    OracleDataset::from_generations(&model.generate_many(parts), truth)
}

/// The interface any oracle classifier provides.
pub trait OracleClassifier: Sized {
    fn fit(ds: &OracleDataset, seed: u64) -> Result<Self>;
    fn predict_proba(&self, z: &FeatureVector) -> Result<f64>;

    /// Probabilities at or above this are labelled correct.
    fn threshold(&self) -> f64 {
        0.5
    }
}

/// Boosted-tree oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtOracle {
    pub schema: String,
    pub n_features: usize,
    pub params: GbdtParams,
    pub initial_score: f64,
    pub trees: Vec<Tree>,
}

impl GbdtOracle {
    /// A classifier that always answers `prior`.
    pub fn constant(prior: f64, params: GbdtParams) -> Self {
        GbdtOracle {
            schema: SCHEMA_VERSION.to_string(),
            n_features: N_FEATURES,
            params,
            initial_score: logit(prior.clamp(1e-12, 1.0 - 1e-12)),
            trees: Vec::new(),
        }
    }

    pub fn fit_with(ds: &OracleDataset, params: &GbdtParams, seed: u64) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::invalid("cannot fit an oracle on an empty dataset"));
        }
        params.validate()?;
        // Canonical row order makes the fit independent of the input order.
        let mut rows: Vec<&OracleRow> = ds.rows.iter().collect();
        rows.sort_by(|a, b| {
            a.features
                .values()
                .iter()
                .zip(b.features.values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.label.cmp(&b.label))
        });
        let positives = rows.iter().filter(|r| r.label).count();
        if positives == 0 || positives == rows.len() {
            let prior = positives as f64 / rows.len() as f64;
            log::warn!("oracle data has a single class; using a constant classifier at {prior}");
            return Ok(Self::constant(prior, *params));
        }

        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng::stream(seed, "oracle-resplit"));
        let n_val = if params.early_stopping_rounds > 0 {
            (params.validation_fraction * rows.len() as f64).round() as usize
        } else {
            0
        };
        let (val_idx, train_idx) = order.split_at(n_val);
        let mut train_idx = train_idx.to_vec();
        let mut val_idx = val_idx.to_vec();
        train_idx.sort_unstable();
        val_idx.sort_unstable();
        let take = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
            idx.iter()
                .map(|&i| (rows[i].features.values().to_vec(), rows[i].label))
                .unzip()
        };
        let (tx, ty) = take(&train_idx);
        let (vx, vy) = take(&val_idx);
        if !ty.iter().any(|&y| y) || ty.iter().all(|&y| y) {
            let prior = positives as f64 / rows.len() as f64;
            log::warn!("oracle training partition has a single class; using a constant classifier");
            return Ok(Self::constant(prior, *params));
        }
        let boosted = boost(&tx, &ty, &vx, &vy, params, seed);
        Ok(GbdtOracle {
            schema: SCHEMA_VERSION.to_string(),
            n_features: N_FEATURES,
            params: *params,
            initial_score: boosted.initial_score,
            trees: boosted.trees,
        })
    }

    fn check(&self, z: &FeatureVector) -> Result<()> {
        if z.schema() != self.schema || z.len() != self.n_features {
            return Err(Error::invalid(format!(
                "feature schema {} ({} values) does not match oracle schema {} ({} values)",
                z.schema(),
                z.len(),
                self.schema,
                self.n_features
            )));
        }
        Ok(())
    }

    /// Boosted score before the sigmoid.
    pub fn raw_score(&self, z: &FeatureVector) -> Result<f64> {
        self.check(z)?;
        Ok(self.raw_score_unchecked(z.values()))
    }

    pub(crate) fn raw_score_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.initial_score + self.params.learning_rate * sum
    }

    /// Probability of "correct" and the thresholded label.
    pub fn predict(&self, z: &FeatureVector) -> Result<(f64, bool)> {
        let p = sigmoid(self.raw_score(z)?);
        Ok((p, p >= self.params.threshold))
    }

    /// Share of rows whose predicted label equals the true label.
    pub fn accuracy(&self, ds: &OracleDataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::invalid("empty oracle dataset"));
        }
        let mut hits = 0usize;
        for r in &ds.rows {
            if self.predict(&r.features)?.1 == r.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / ds.len() as f64)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("oracle serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::dataset_write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let o: GbdtOracle =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if o.schema != SCHEMA_VERSION || o.n_features != N_FEATURES {
            return Err(Error::format(
                path,
                format!("unsupported feature schema {}", o.schema),
            ));
        }
        Ok(o)
    }
}

impl OracleClassifier for GbdtOracle {
    fn fit(ds: &OracleDataset, seed: u64) -> Result<Self> {
        Self::fit_with(ds, &GbdtParams::default(), seed)
    }

    fn predict_proba(&self, z: &FeatureVector) -> Result<f64> {
        Ok(self.predict(z)?.0)
    }

    fn threshold(&self) -> f64 {
        self.params.threshold
    }
}

pub fn fit_oracle(ds: &OracleDataset, seed: u64) -> Result<GbdtOracle> {
    GbdtOracle::fit(ds, seed)
}

pub fn oracle_predict(oracle: &GbdtOracle, z: &FeatureVector) -> Result<(f64, bool)> {
    oracle.predict(z)
}

pub fn oracle_accuracy(oracle: &GbdtOracle, ds: &OracleDataset) -> Result<f64> {
    oracle.accuracy(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(part_id: usize, f0: f64, f1: f64, label: bool) -> OracleRow {
        let mut v = vec![0.0; N_FEATURES];
        v[0] = f0;
        v[7] = f1;
        OracleRow {
            part_id,
            features: FeatureVector::from_values(v).unwrap(),
            label,
        }
    }

    fn separable(n: usize, offset: f64) -> OracleDataset {
        OracleDataset {
            rows: (0..n)
                .map(|i| {
                    // The gap keeps held-out rows off every split midpoint.
                    let label = 2 * i >= n;
                    let x = i as f64 / n as f64 + offset + if label { 0.3 } else { 0.0 };
                    row(i, x, ((i * 7) % 5) as f64, label)
                })
                .collect(),
        }
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let ds = separable(60, 0.0);
        let o = fit_oracle(&ds, 1).unwrap();
        assert_eq!(oracle_accuracy(&o, &ds).unwrap(), 1.0);
        let held_out = OracleDataset {
            rows: vec![
                row(0, 0.1, 3.0, false),
                row(1, 0.9, 1.0, true),
                row(2, 0.3, 0.0, false),
            ],
        };
        assert_eq!(o.accuracy(&held_out).unwrap(), 1.0);
        assert!(o.trees.len() <= 200);
    }

    #[test]
    fn single_class_gives_constant_prior() {
        let ds = OracleDataset {
            rows: (0..10).map(|i| row(i, i as f64, 0.0, true)).collect(),
        };
        let o = fit_oracle(&ds, 3).unwrap();
        assert!(o.trees.is_empty());
        let (p, label) = oracle_predict(&o, &ds.rows[0].features).unwrap();
        assert!((p - 1.0).abs() < 1e-9 && label);
    }

    #[test]
    fn constant_classifier_answers_prior() {
        let o = GbdtOracle::constant(0.7, GbdtParams::default());
        let ds = separable(10, 0.0);
        for r in &ds.rows {
            let (p, label) = o.predict(&r.features).unwrap();
            assert!((p - 0.7).abs() < 1e-12);
            assert!(label);
        }
        assert_eq!(o.accuracy(&ds).unwrap(), ds.positive_rate());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(
            fit_oracle(&OracleDataset::default(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn same_seed_same_trees_and_order_invariance() {
        let ds = separable(80, 0.0);
        let a = fit_oracle(&ds, 5).unwrap();
        let b = fit_oracle(&ds, 5).unwrap();
        assert_eq!(a, b);
        let mut shuffled = ds.clone();
        shuffled.rows.reverse();
        assert_eq!(fit_oracle(&shuffled, 5).unwrap(), a);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let mut o = GbdtOracle::constant(0.5, GbdtParams::default());
        o.schema = "fv0".into();
        let z = FeatureVector::from_values(vec![0.0; N_FEATURES]).unwrap();
        assert!(o.predict(&z).is_err());
    }

    #[test]
    fn last_tree_contributes_learning_rate_times_leaf() {
        let ds = separable(60, 0.0);
        let o = fit_oracle(&ds, 2).unwrap();
        assert!(!o.trees.is_empty());
        let mut shorter = o.clone();
        let last = shorter.trees.pop().unwrap();
        for r in &ds.rows {
            let x = r.features.values();
            let delta = o.raw_score_unchecked(x) - shorter.raw_score_unchecked(x);
            assert!((delta - o.params.learning_rate * last.predict(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ds = separable(40, 0.0);
        let o = fit_oracle(&ds, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.json");
        o.save(&path).unwrap();
        let back = GbdtOracle::load(&path).unwrap();
        assert_eq!(back, o);
        for r in &ds.rows {
            assert_eq!(
                back.predict(&r.features).unwrap(),
                o.predict(&r.features).unwrap()
            );
        }
    }
}
