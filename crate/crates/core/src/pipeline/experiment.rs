use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::Serialize;

use super::report::{summarize, write_summary_csv, ResultsWriter};
use super::{
    predictions_from, retrain, select_pseudolabels, select_random, ExperimentResult, Prediction,
    Strategy,
};
use crate::config::RunConfig;
use crate::corpus::{split_dataset, Dataset, PartEncoding, ProcessChain, Split};
use crate::oracle::{GbdtOracle, OracleDataset};
use crate::seqmodel::{accuracy_of, init_model, save_model, Model};
use crate::{rng, Error, Result};

/// An offered prediction the oracle turned down, kept for manual inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedPrediction {
    pub fraction: f64,
    pub seed: u64,
    pub proportion: f64,
    pub part_id: usize,
    pub part: PartEncoding,
    pub chain: ProcessChain,
    pub probability: f64,
}

/// Everything one (fraction, seed) cell produces.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub fraction: f64,
    pub seed: u64,
    pub rows: Vec<ExperimentResult>,
    pub rejected: Vec<RejectedPrediction>,
    /// Pre-retrain checkpoint shared by every arm of the cell.
    pub model: Model,
    pub oracle: GbdtOracle,
    /// Training sets that passed the leakage guard.
    pub guarded_sets: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<ExperimentResult>,
    pub failed_cells: usize,
    pub guarded_sets: usize,
}

fn fraction_code(fraction: f64) -> u64 {
    (fraction * 1e4).round() as u64
}

fn proportion_code(p: f64) -> u64 {
    (p * 1e6).round() as u64
}

/// Structural leakage guard: original pairs come from transformer-train parts
/// only, and every augmented pair is a test part carrying the chain the model
/// generated for it.
fn check_training_set(
    split: &Split,
    original: &[(PartEncoding, ProcessChain)],
    augmented: &[(PartEncoding, ProcessChain)],
    generated: &HashMap<PartEncoding, &ProcessChain>,
) -> Result<()> {
    let train: HashSet<_> = split.train_parts.iter().collect();
    let test: HashSet<_> = split.test_parts.iter().collect();
    for (p, _) in original {
        if !train.contains(p) || test.contains(p) {
            return Err(Error::Leakage(format!(
                "labeled pair for part {} is not a training part",
                p.index()
            )));
        }
    }
    for (p, c) in augmented {
        if !test.contains(p) {
            return Err(Error::Leakage(format!(
                "pseudo-label for non-test part {}",
                p.index()
            )));
        }
        if generated.get(p) != Some(&c) {
            return Err(Error::Leakage(format!(
                "pseudo-label for part {} is not the model's generation",
                p.index()
            )));
        }
    }
    Ok(())
}

struct Evaluation {
    acc: f64,
    acc_clean: Option<f64>,
}

fn evaluate(
    model: &Model,
    test: &[PartEncoding],
    augmented: &[(PartEncoding, ProcessChain)],
    ds: &Dataset,
) -> Evaluation {
    let gens = model.generate_many(test);
    let added: HashSet<_> = augmented.iter().map(|(p, _)| *p).collect();
    let clean: Vec<_> = gens
        .iter()
        .filter(|g| !added.contains(&g.part))
        .cloned()
        .collect();
    Evaluation {
        acc: accuracy_of(&gens, ds),
        acc_clean: (!clean.is_empty()).then(|| accuracy_of(&clean, ds)),
    }
}

/// Runs one (fraction, seed) cell end to end.
pub fn run_cell(cfg: &RunConfig, ds: &Dataset, fraction: f64, seed: u64) -> Result<CellOutput> {
    let exp = &cfg.experiment;
    let cell_seed = rng::derive_indexed(seed, "cell", fraction_code(fraction));
    let split = split_dataset(ds, fraction, seed)?;
    if !split.is_disjoint() {
        return Err(Error::Leakage("split partitions overlap".into()));
    }
    let original = split.train_pairs(ds);

    let mut model = init_model(cfg.model, rng::derive_seed(seed, "model-init"))?;
    model.train(
        &original,
        &cfg.train_hyper(rng::derive_seed(cell_seed, "train")),
    )?;
    log::info!(
        "cell {fraction}/{seed}: trained on {} pairs",
        original.len()
    );

    // Oracle labels come from labeled parts only.
    let labeled = model.generate_many(&split.labeled_parts());
    let oracle_train = OracleDataset::from_generations(&labeled, ds)?;
    let oracle = GbdtOracle::fit_with(
        &oracle_train,
        &cfg.oracle,
        rng::derive_seed(cell_seed, "oracle"),
    )?;

    let test_gens = model.generate_many(&split.test_parts);
    let acc_before = accuracy_of(&test_gens, ds);
    let oracle_test_acc = oracle.accuracy(&OracleDataset::from_generations(&test_gens, ds)?)?;
    let predictions: Vec<Prediction> = predictions_from(&test_gens)?;
    let generated: HashMap<PartEncoding, &ProcessChain> =
        predictions.iter().map(|p| (p.part, &p.chain)).collect();
    log::info!(
        "cell {fraction}/{seed}: acc_before {acc_before:.4}, oracle_test_acc {oracle_test_acc:.4}, {} well-formed",
        predictions.len()
    );

    let start = if cfg.retrain.warm_start {
        model.clone()
    } else {
        init_model(cfg.model, rng::derive_seed(cell_seed, "retrain-init"))?
    };
    let retrain_h = cfg.retrain_hyper(rng::derive_seed(cell_seed, "retrain"));
    let mut guarded_sets = 0;
    let mut arm = |augmented: &[(PartEncoding, ProcessChain)]| -> Result<Evaluation> {
        check_training_set(&split, &original, augmented, &generated)?;
        guarded_sets += 1;
        let (m, _) = retrain(&start, &original, augmented, &retrain_h)?;
        Ok(evaluate(&m, &split.test_parts, augmented, ds))
    };
    let row = |strategy, proportion, n_augmented, ev: &Evaluation| ExperimentResult {
        fraction,
        strategy: Some(strategy),
        proportion,
        seed,
        acc_before: Some(acc_before),
        acc_after: Some(ev.acc),
        acc_after_clean: ev.acc_clean,
        n_augmented,
        oracle_test_acc: Some(oracle_test_acc),
        status: "ok".into(),
    };

    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    if exp.has(Strategy::Baseline) {
        let ev = arm(&[])?;
        rows.push(row(Strategy::Baseline, None, 0, &ev));
    }
    let augmenting = exp.has(Strategy::Detector) || exp.has(Strategy::Random);
    for &p in exp.proportions.iter().filter(|_| augmenting) {
        let pseed = rng::derive_indexed(cell_seed, "proportion", proportion_code(p));
        let sel = select_pseudolabels(
            &oracle,
            &predictions,
            p,
            rng::derive_seed(pseed, "detector"),
        )?;
        let random = select_random(
            &predictions,
            sel.kept.len(),
            rng::derive_seed(pseed, "random"),
        )?;
        if random.len() != sel.kept.len() {
            return Err(Error::Leakage(
                "random arm size differs from detector arm".into(),
            ));
        }
        rejected.extend(
            sel.rejected
                .iter()
                .map(|(part, chain, prob)| RejectedPrediction {
                    fraction,
                    seed,
                    proportion: p,
                    part_id: part.index(),
                    part: *part,
                    chain: chain.clone(),
                    probability: *prob,
                }),
        );
        for &s in &exp.strategies {
            let aug = match s {
                Strategy::Baseline => continue,
                Strategy::Random => &random,
                Strategy::Detector => &sel.kept,
            };
            let ev = arm(aug)?;
            log::info!(
                "cell {fraction}/{seed}: {s} p={p} n={} acc {:.4}",
                aug.len(),
                ev.acc
            );
            rows.push(row(s, Some(p), aug.len(), &ev));
        }
    }
    Ok(CellOutput {
        fraction,
        seed,
        rows,
        rejected,
        model,
        oracle,
        guarded_sets,
    })
}

fn append_rejected(path: &Path, rejected: &[RejectedPrediction]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for r in rejected {
        buf.push_str(&serde_json::to_string(r).expect("record serializes"));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs the whole grid, writing `results.csv`, `rejected.jsonl`,
/// `summary.csv` and per-cell checkpoints under `out_dir`. Cells may run on
/// up to `jobs` threads; output order and content do not depend on `jobs`.
pub fn run_experiment(
    cfg: &RunConfig,
    ds: &Dataset,
    out_dir: &Path,
    jobs: usize,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if jobs == 0 {
        return Err(Error::invalid("jobs must be at least 1"));
    }
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let rejected_path = out_dir.join("rejected.jsonl");
    fs::write(&rejected_path, b"").map_err(|e| Error::io(&rejected_path, e))?;
    let mut writer = ResultsWriter::create(&out_dir.join("results.csv"))?;

    let cells: Vec<(f64, u64)> = cfg
        .experiment
        .fractions
        .iter()
        .flat_map(|&f| cfg.experiment.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let mut outcome = ExperimentOutcome {
        results: Vec::new(),
        failed_cells: 0,
        guarded_sets: 0,
    };
    let mut record = |(f, s): (f64, u64), out: Result<CellOutput>| -> Result<()> {
        match out {
            Ok(cell) => {
                let tag = format!("{}_{}", f, s);
                save_model(&cell.model, &ckpt_dir.join(format!("model_{tag}.bin")))?;
                cell.oracle
                    .save(&ckpt_dir.join(format!("oracle_{tag}.json")))?;
                append_rejected(&rejected_path, &cell.rejected)?;
                for r in &cell.rows {
                    writer.write(r)?;
                }
                outcome.guarded_sets += cell.guarded_sets;
                outcome.results.extend(cell.rows);
            }
            Err(e) => {
                log::error!("cell {f}/{s} failed: {e}");
                let r = ExperimentResult::failure(f, s, &e);
                writer.write(&r)?;
                outcome.failed_cells += 1;
                outcome.results.push(r);
            }
        }
        Ok(())
    };

    if jobs == 1 || cells.len() == 1 {
        for &(f, s) in &cells {
            record((f, s), run_cell(cfg, ds, f, s))?;
        }
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..jobs.min(cells.len()) {
                let tx = tx.clone();
                let (next, cells) = (&next, &cells);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(f, s)) = cells.get(i) else { break };
                    if tx.send((i, run_cell(cfg, ds, f, s))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            // Flush in grid order regardless of completion order.
            let mut pending = HashMap::new();
            let mut emitted = 0;
            for (i, out) in rx {
                pending.insert(i, out);
                while let Some(out) = pending.remove(&emitted) {
                    record(cells[emitted], out)?;
                    emitted += 1;
                }
            }
            Ok(())
        })?;
    }
    write_summary_csv(&out_dir.join("summary.csv"), &summarize(&outcome.results))?;
    Ok(outcome)
}
