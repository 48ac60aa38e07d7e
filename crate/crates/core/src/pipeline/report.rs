use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ExperimentResult, Strategy};
use crate::{Error, Result};

pub const RESULTS_HEADER: [&str; 10] = [
    "fraction",
    "strategy",
    "proportion",
    "seed",
    "acc_before",
    "acc_after",
    "acc_after_clean",
    "n_augmented",
    "oracle_test_acc",
    "status",
];

const SUMMARY_HEADER: [&str; 15] = [
    "fraction",
    "strategy",
    "proportion",
    "n_seeds",
    "acc_before_mean",
    "acc_after_mean",
    "acc_after_std",
    "acc_after_sem",
    "acc_after_clean_mean",
    "gain_mean",
    "gain_std",
    "gain_sem",
    "n_augmented_mean",
    "oracle_test_acc_mean",
    "replicated",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("bad number {s:?}"))
}

/// Appends rows to `results.csv`, flushing after each one so a partial run
/// leaves every finished row on disk.
pub struct ResultsWriter {
    inner: csv::Writer<fs::File>,
}

impl ResultsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = ResultsWriter {
            inner: csv::Writer::from_writer(file),
        };
        w.inner
            .write_record(RESULTS_HEADER)
            .and_then(|_| w.inner.flush().map_err(Into::into))
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(w)
    }

    pub fn write(&mut self, r: &ExperimentResult) -> Result<()> {
        let rec = [
            r.fraction.to_string(),
            r.strategy.map(|s| s.to_string()).unwrap_or_default(),
            opt(r.proportion),
            r.seed.to_string(),
            opt(r.acc_before),
            opt(r.acc_after),
            opt(r.acc_after_clean),
            r.n_augmented.to_string(),
            opt(r.oracle_test_acc),
            r.status.clone(),
        ];
        self.inner
            .write_record(&rec)
            .and_then(|_| self.inner.flush().map_err(Into::into))
            .map_err(|e| Error::invalid(format!("writing results: {e}")))
    }
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ExperimentResult>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().ne(RESULTS_HEADER) {
        return Err(Error::format(path, "unexpected results header"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |m: String| Error::format(path, format!("row {}: {m}", i + 1));
        let strategy = match &rec[1] {
            "" => None,
            s => Some(Strategy::parse(s).map_err(|e| bad(e.to_string()))?),
        };
        out.push(ExperimentResult {
            fraction: rec[0].parse().map_err(|_| bad("bad fraction".into()))?,
            strategy,
            proportion: parse_opt(&rec[2]).map_err(bad)?,
            seed: rec[3].parse().map_err(|_| bad("bad seed".into()))?,
            acc_before: parse_opt(&rec[4]).map_err(bad)?,
            acc_after: parse_opt(&rec[5]).map_err(bad)?,
            acc_after_clean: parse_opt(&rec[6]).map_err(bad)?,
            n_augmented: rec[7].parse().map_err(|_| bad("bad n_augmented".into()))?,
            oracle_test_acc: parse_opt(&rec[8]).map_err(bad)?,
            status: rec[9].to_string(),
        });
    }
    Ok(out)
}

/// Per-(fraction, strategy, proportion) statistics across seeds. Gains are
/// paired against the baseline row of the same fraction and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub fraction: f64,
    pub strategy: Strategy,
    pub proportion: Option<f64>,
    pub n_seeds: usize,
    pub acc_before_mean: f64,
    pub acc_after_mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub acc_after_std: f64,
    pub acc_after_sem: f64,
    pub acc_after_clean_mean: Option<f64>,
    pub gain_mean: Option<f64>,
    pub gain_std: Option<f64>,
    pub gain_sem: Option<f64>,
    pub n_augmented_mean: f64,
    pub oracle_test_acc_mean: f64,
    /// Baseline statistics copied onto a proportion for plotting.
    pub replicated: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean, sample standard deviation and standard error.
pub fn mean_std_sem(xs: &[f64]) -> (f64, f64, f64) {
    let s = std_dev(xs);
    (mean(xs), s, s / (xs.len() as f64).sqrt())
}

/// Float keys ordered by value; all keys here are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Key {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

pub fn summarize(results: &[ExperimentResult]) -> Vec<SummaryRow> {
    let ok: Vec<&ExperimentResult> = results.iter().filter(|r| r.is_ok()).collect();
    let baseline: BTreeMap<(Key, u64), f64> = ok
        .iter()
        .filter(|r| r.strategy == Some(Strategy::Baseline))
        .filter_map(|r| Some(((Key(r.fraction), r.seed), r.acc_after?)))
        .collect();

    let mut groups: BTreeMap<(Key, Strategy, Option<Key>), Vec<&ExperimentResult>> =
        BTreeMap::new();
    for r in &ok {
        if let Some(s) = r.strategy {
            groups
                .entry((Key(r.fraction), s, r.proportion.map(Key)))
                .or_default()
                .push(r);
        }
    }
    // Proportions seen per fraction, for replicating the baseline.
    let mut proportions: BTreeMap<Key, Vec<Key>> = BTreeMap::new();
    for (f, s, p) in groups.keys() {
        if let (Strategy::Random | Strategy::Detector, Some(p)) = (s, p) {
            let ps = proportions.entry(*f).or_default();
            if !ps.contains(p) {
                ps.push(*p);
            }
        }
    }

    let stats = |rows: &[&ExperimentResult], strategy, proportion: Option<f64>, replicated| {
        let after: Vec<f64> = rows.iter().filter_map(|r| r.acc_after).collect();
        let before: Vec<f64> = rows.iter().filter_map(|r| r.acc_before).collect();
        let clean: Vec<f64> = rows.iter().filter_map(|r| r.acc_after_clean).collect();
        let oracle: Vec<f64> = rows.iter().filter_map(|r| r.oracle_test_acc).collect();
        let gains: Vec<f64> = rows
            .iter()
            .filter_map(|r| Some(r.acc_after? - baseline.get(&(Key(r.fraction), r.seed))?))
            .collect();
        let (am, asd, asem) = mean_std_sem(&after);
        let g = (!gains.is_empty()).then(|| mean_std_sem(&gains));
        SummaryRow {
            fraction: rows[0].fraction,
            strategy,
            proportion,
            n_seeds: rows.len(),
            acc_before_mean: mean(&before),
            acc_after_mean: am,
            acc_after_std: asd,
            acc_after_sem: asem,
            acc_after_clean_mean: (!clean.is_empty()).then(|| mean(&clean)),
            gain_mean: g.map(|g| g.0),
            gain_std: g.map(|g| g.1),
            gain_sem: g.map(|g| g.2),
            n_augmented_mean: mean(
                &rows
                    .iter()
                    .map(|r| r.n_augmented as f64)
                    .collect::<Vec<_>>(),
            ),
            oracle_test_acc_mean: mean(&oracle),
            replicated,
        }
    };

    let mut out = Vec::new();
    for ((f, s, p), rows) in &groups {
        if *s == Strategy::Baseline {
            match proportions.get(f) {
                Some(ps) => {
                    let mut ps = ps.clone();
                    ps.sort();
                    out.extend(ps.iter().map(|p| stats(rows, *s, Some(p.0), true)));
                }
                None => out.push(stats(rows, *s, p.map(|k| k.0), false)),
            }
        } else {
            out.push(stats(rows, *s, p.map(|k| k.0), false));
        }
    }
    out
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(SUMMARY_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.fraction.to_string(),
            r.strategy.to_string(),
            opt(r.proportion),
            r.n_seeds.to_string(),
            r.acc_before_mean.to_string(),
            r.acc_after_mean.to_string(),
            r.acc_after_std.to_string(),
            r.acc_after_sem.to_string(),
            opt(r.acc_after_clean_mean),
            opt(r.gain_mean),
            opt(r.gain_std),
            opt(r.gain_sem),
            r.n_augmented_mean.to_string(),
            r.oracle_test_acc_mean.to_string(),
            u8::from(r.replicated).to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    crate::corpus::dataset_write_atomic(path, &bytes)
}
