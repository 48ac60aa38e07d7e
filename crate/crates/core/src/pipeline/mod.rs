//! Pseudo-labeling experiment: train, fit the oracle, filter test-time
//! generations, augment, retrain once and compare the three arms.

mod experiment;
mod report;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{PartEncoding, ProcessChain};
use crate::oracle::OracleClassifier;
use crate::seqmodel::{Generation, Model, TrainHyper, TrainReport};
use crate::trace_features::{extract_features, FeatureVector};
use crate::{rng, Error, Result};

pub use experiment::{run_cell, run_experiment, CellOutput, ExperimentOutcome, RejectedPrediction};
pub use report::{
    mean_std_sem, read_results_csv, summarize, write_summary_csv, ResultsWriter, SummaryRow,
    RESULTS_HEADER,
};

/// The fractions the corpus splits are defined for.
pub const ALLOWED_FRACTIONS: [f64; 4] = [0.01, 0.025, 0.05, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    Random,
    Detector,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Baseline, Strategy::Random, Strategy::Detector];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Random => "random",
            Strategy::Detector => "detector",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fractions: Vec<f64>,
    pub proportions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fractions: ALLOWED_FRACTIONS.to_vec(),
            proportions: vec![0.25, 0.5, 0.75, 1.0],
            seeds: vec![1, 2, 3],
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.seeds.is_empty() || self.strategies.is_empty() {
            return Err(Error::invalid(
                "fractions, seeds and strategies must be nonempty",
            ));
        }
        if let Some(f) = self
            .fractions
            .iter()
            .find(|f| !ALLOWED_FRACTIONS.contains(f))
        {
            return Err(Error::invalid(format!(
                "fraction {f} is not one of {ALLOWED_FRACTIONS:?}"
            )));
        }
        let augmenting = self.strategies.iter().any(|&s| s != Strategy::Baseline);
        if augmenting && self.proportions.is_empty() {
            return Err(Error::invalid("proportions must be nonempty"));
        }
        if let Some(p) = self.proportions.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::invalid(format!("proportion {p} outside (0, 1]")));
        }
        for (name, dup) in [
            ("fractions", has_duplicates(&self.fractions)),
            ("proportions", has_duplicates(&self.proportions)),
            ("seeds", has_duplicates(&self.seeds)),
            ("strategies", has_duplicates(&self.strategies)),
        ] {
            if dup {
                return Err(Error::invalid(format!("{name} contains duplicates")));
            }
        }
        Ok(())
    }

    pub fn has(&self, s: Strategy) -> bool {
        self.strategies.contains(&s)
    }

    /// Rows produced when every cell succeeds: one baseline row per cell and
    /// one row per augmenting strategy and proportion.
    pub fn expected_rows(&self) -> usize {
        let arms = usize::from(self.has(Strategy::Baseline))
            + self
                .strategies
                .iter()
                .filter(|&&s| s != Strategy::Baseline)
                .count()
                * self.proportions.len();
        self.fractions.len() * self.seeds.len() * arms
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

/// One row of `results.csv`. Accuracy fields are `None` only on failure rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub fraction: f64,
    /// `None` on a failure row, which stands for the whole cell.
    pub strategy: Option<Strategy>,
    /// `None` for the baseline, which has no proportion sweep.
    pub proportion: Option<f64>,
    pub seed: u64,
    pub acc_before: Option<f64>,
    pub acc_after: Option<f64>,
    /// Accuracy on test parts that were never added as pseudo-labels.
    pub acc_after_clean: Option<f64>,
    pub n_augmented: usize,
    pub oracle_test_acc: Option<f64>,
    pub status: String,
}

impl ExperimentResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn failure(fraction: f64, seed: u64, err: &Error) -> Self {
        let msg: String = err
            .to_string()
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        ExperimentResult {
            fraction,
            strategy: None,
            proportion: None,
            seed,
            acc_before: None,
            acc_after: None,
            acc_after_clean: None,
            n_augmented: 0,
            oracle_test_acc: None,
            status: format!("failed: {msg}"),
        }
    }
}

/// A well-formed test-time generation together with its oracle input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub part: PartEncoding,
    pub chain: ProcessChain,
    pub features: FeatureVector,
}

impl Prediction {
    /// `None` for malformed generations, which carry no usable pseudo-label.
    pub fn from_generation(g: &Generation) -> Result<Option<Self>> {
        let Some(chain) = g.chain.clone() else {
            return Ok(None);
        };
        Ok(Some(Prediction {
            part: g.part,
            chain,
            features: extract_features(&g.trace)?,
        }))
    }

    pub fn pair(&self) -> (PartEncoding, ProcessChain) {
        (self.part, self.chain.clone())
    }
}

pub fn predictions_from(gens: &[Generation]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(gens.len());
    for g in gens {
        if let Some(p) = Prediction::from_generation(g)? {
            out.push(p);
        }
    }
    Ok(out)
}

/// Outcome of the detector filter on one offered subset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub offered: usize,
    pub kept: Vec<(PartEncoding, ProcessChain)>,
    /// Offered predictions the oracle turned down, with their probability.
    pub rejected: Vec<(PartEncoding, ProcessChain, f64)>,
}

/// Seeded subset of `k` indices out of `n`, in ascending order.
fn sample_indices(n: usize, k: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut idx = index::sample(&mut rng::stream(seed, label), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Offers a seeded `round(proportion * n)` subset of the predictions to the
/// oracle and keeps the generated chains it labels correct.
pub fn select_pseudolabels<O: OracleClassifier>(
    oracle: &O,
    predictions: &[Prediction],
    proportion: f64,
    seed: u64,
) -> Result<Selection> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::invalid(format!(
            "proportion {proportion} outside (0, 1]"
        )));
    }
    let k = ((proportion * predictions.len() as f64).round() as usize).min(predictions.len());
    let threshold = oracle.threshold();
    let mut sel = Selection {
        offered: k,
        ..Selection::default()
    };
    for i in sample_indices(predictions.len(), k, seed, "select-offer") {
        let p = &predictions[i];
        let prob = oracle.predict_proba(&p.features)?;
        if prob >= threshold {
            sel.kept.push(p.pair());
        } else {
            sel.rejected.push((p.part, p.chain.clone(), prob));
        }
    }
    Ok(sel)
}

/// Uniform seeded sample of `count` predictions, ignoring the oracle.
pub fn select_random(
    predictions: &[Prediction],
    count: usize,
    seed: u64,
) -> Result<Vec<(PartEncoding, ProcessChain)>> {
    if count > predictions.len() {
        return Err(Error::invalid(format!(
            "cannot sample {count} of {} predictions",
            predictions.len()
        )));
    }
    Ok(
        sample_indices(predictions.len(), count, seed, "select-random")
            .into_iter()
            .map(|i| predictions[i].pair())
            .collect(),
    )
}

/// `original ∪ augmented` without duplicate pairs, in canonical order.
pub fn union_pairs(
    original: &[(PartEncoding, ProcessChain)],
    augmented: &[(PartEncoding, ProcessChain)],
) -> Vec<(PartEncoding, ProcessChain)> {
    let set: BTreeSet<(PartEncoding, &ProcessChain)> = original
        .iter()
        .chain(augmented)
        .map(|(p, c)| (*p, c))
        .collect();
    set.into_iter().map(|(p, c)| (p, c.clone())).collect()
}

/// One retraining round on the deduplicated union. `model` is left untouched;
/// the caller chooses warm or fresh start by what it passes in.
pub fn retrain(
    model: &Model,
    original: &[(PartEncoding, ProcessChain)],
    augmented: &[(PartEncoding, ProcessChain)],
    h: &TrainHyper,
) -> Result<(Model, TrainReport)> {
    if original.is_empty() {
        return Err(Error::invalid("retraining needs original labeled pairs"));
    }
    let pairs = union_pairs(original, augmented);
    let mut m = model.clone();
    let report = m.train(&pairs, h)?;
    Ok((m, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{enumerate_parts, Operation};
    use crate::trace_features::N_FEATURES;

    /// Labels a prediction correct when its first feature is positive.
    struct SignOracle;

    impl OracleClassifier for SignOracle {
        fn fit(_: &crate::oracle::OracleDataset, _: u64) -> Result<Self> {
            Ok(SignOracle)
        }
        fn predict_proba(&self, z: &FeatureVector) -> Result<f64> {
            Ok(if z[0] > 0.0 { 0.9 } else { 0.1 })
        }
    }

    fn predictions(signs: &[bool]) -> Vec<Prediction> {
        let parts = enumerate_parts();
        signs
            .iter()
            .enumerate()
            .map(|(i, &pos)| {
                let mut v = vec![0.0; N_FEATURES];
                v[0] = if pos { 1.0 } else { -1.0 };
                Prediction {
                    part: parts[i * 7],
                    chain: ProcessChain::new(vec![Operation::Milling, Operation::Deburring])
                        .unwrap(),
                    features: FeatureVector::from_values(v).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn full_offer_keeps_exactly_the_oracle_positives() {
        let signs: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let preds = predictions(&signs);
        let sel = select_pseudolabels(&SignOracle, &preds, 1.0, 5).unwrap();
        assert_eq!(sel.offered, 20);
        assert_eq!(sel.kept.len(), signs.iter().filter(|&&s| s).count());
        assert_eq!(sel.kept.len() + sel.rejected.len(), 20);
    }

    #[test]
    fn partial_offer_counts_positives_in_the_subset() {
        let signs: Vec<bool> = (0..20).map(|i| i % 4 != 1).collect();
        let preds = predictions(&signs);
        let sel = select_pseudolabels(&SignOracle, &preds, 0.5, 11).unwrap();
        assert_eq!(sel.offered, 10);
        let offered = sample_indices(20, 10, 11, "select-offer");
        let expect = offered.iter().filter(|&&i| signs[i]).count();
        assert_eq!(sel.kept.len(), expect);
    }

    #[test]
    fn invalid_proportion_is_rejected() {
        let preds = predictions(&[true; 4]);
        assert!(select_pseudolabels(&SignOracle, &preds, 0.0, 1).is_err());
        assert!(select_pseudolabels(&SignOracle, &preds, 1.5, 1).is_err());
    }

    #[test]
    fn random_selection_bounds() {
        let preds = predictions(&[true; 10]);
        assert!(select_random(&preds, 0, 3).unwrap().is_empty());
        let mut all = select_random(&preds, 10, 3).unwrap();
        all.sort_by_key(|(p, _)| p.index());
        let mut expect: Vec<_> = preds.iter().map(Prediction::pair).collect();
        expect.sort_by_key(|(p, _)| p.index());
        assert_eq!(all, expect);
        assert_eq!(
            select_random(&preds, 4, 3).unwrap(),
            select_random(&preds, 4, 3).unwrap()
        );
        assert!(select_random(&preds, 11, 3).is_err());
    }

    #[test]
    fn union_deduplicates() {
        let preds = predictions(&[true; 3]);
        let pairs: Vec<_> = preds.iter().map(Prediction::pair).collect();
        let u = union_pairs(&pairs, &pairs[1..]);
        assert_eq!(u, pairs);
    }

    #[test]
    fn grid_row_count() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.expected_rows(), 108);
        let only_base = ExperimentConfig {
            strategies: vec![Strategy::Baseline],
            ..ExperimentConfig::default()
        };
        assert_eq!(only_base.expected_rows(), 12);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = ExperimentConfig {
            fractions: vec![0.2],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            proportions: vec![0.0],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
