//! Uncertainty features of one greedy generation.
//!
//! Layout of the 132-wide vector (`fv1`):
//!
//! | range     | content |
//! |-----------|---------|
//! | 0..60     | per series: mean, population std, min, max, median, last |
//! | 60..100   | per series: mean and std of first differences, OLS slope over step index, lag-1 autocorrelation |
//! | 100..112  | T, T/T_max, repetition rate, unique-token ratio, final EOS prob, max and mean non-final EOS prob, cumulative log-likelihood, mean log-likelihood, exp(-mean log-likelihood), min chosen prob, share of steps with p1 >= 0.9 |
//! | 112..132  | p1 per step, zero padded to T_max = 20 |
//!
//! The ten step series, in order: p1, p2, p3, entropy (nats), perplexity,
//! p1 - p2, p2 - p3, Gini coefficient, KL from uniform, variance.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::Token;
use crate::seqmodel::LogitTrace;
use crate::{Error, Result};

pub const SCHEMA_VERSION: &str = "fv1";
pub const T_MAX: usize = 20;
pub const N_SERIES: usize = 10;
pub const N_DIST_STATS: usize = 6;
pub const N_TEMPORAL_STATS: usize = 4;
pub const N_SEQUENCE_FEATURES: usize = 12;
pub const DIST_OFFSET: usize = 0;
pub const TEMPORAL_OFFSET: usize = N_SERIES * N_DIST_STATS;
pub const SEQUENCE_OFFSET: usize = TEMPORAL_OFFSET + N_SERIES * N_TEMPORAL_STATS;
pub const PADDED_OFFSET: usize = SEQUENCE_OFFSET + N_SEQUENCE_FEATURES;
pub const N_FEATURES: usize = PADDED_OFFSET + T_MAX;

pub const SERIES_NAMES: [&str; N_SERIES] = [
    "p1",
    "p2",
    "p3",
    "entropy",
    "perplexity",
    "margin12",
    "margin23",
    "gini",
    "kl_uniform",
    "variance",
];

/// Sum of squared deviations below which a series counts as constant.
pub const ZERO_VARIANCE: f64 = 1e-18;
const CONFIDENT_P1: f64 = 0.9;

/// Distribution summaries of one softmax row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSignals {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub entropy: f64,
    pub perplexity: f64,
    pub margin12: f64,
    pub margin23: f64,
    pub gini: f64,
    pub kl_uniform: f64,
    pub variance: f64,
}

impl StepSignals {
    pub fn to_array(&self) -> [f64; N_SERIES] {
        [
            self.p1,
            self.p2,
            self.p3,
            self.entropy,
            self.perplexity,
            self.margin12,
            self.margin23,
            self.gini,
            self.kl_uniform,
            self.variance,
        ]
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logit row"));
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit at index {i}")));
    }
    Ok(())
}

/// Signals of one logit row.
pub fn step_signals(logits: &[f64]) -> Result<StepSignals> {
    check_finite(logits)?;
    Ok(signals_of(&softmax(logits)))
}

fn signals_of(probs: &[f64]) -> StepSignals {
    let n = probs.len() as f64;
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let top = |k: usize| sorted.len().checked_sub(k).map_or(0.0, |i| sorted[i]);
    let (p1, p2, p3) = (top(1), top(2), top(3));
    let entropy = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    let entropy = entropy.clamp(0.0, n.ln());
    let gini = sorted
        .iter()
        .enumerate()
        .map(|(i, p)| (2.0 * (i + 1) as f64 - n - 1.0) * p)
        .sum::<f64>()
        / n;
    let uniform = 1.0 / n;
    let variance = probs.iter().map(|p| (p - uniform).powi(2)).sum::<f64>() / n;
    StepSignals {
        p1,
        p2,
        p3,
        entropy,
        perplexity: entropy.exp(),
        margin12: p1 - p2,
        margin23: p2 - p3,
        gini: gini.max(0.0),
        kl_uniform: n.ln() - entropy,
        variance,
    }
}

/// The oracle input, tagged with its schema version.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    schema: &'static str,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_FEATURES {
            return Err(Error::invalid(format!(
                "feature vector has {} entries, schema {SCHEMA_VERSION} needs {N_FEATURES}",
                values.len()
            )));
        }
        Ok(FeatureVector {
            schema: SCHEMA_VERSION,
            values,
        })
    }

    pub fn schema(&self) -> &'static str {
        self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Column names `f000..f131`.
pub fn feature_names() -> Vec<String> {
    (0..N_FEATURES).map(|i| format!("f{i:03}")).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64], mu: f64) -> f64 {
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn distribution_stats(xs: &[f64]) -> [f64; N_DIST_STATS] {
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mu = mean(xs).clamp(min, max);
    [mu, pop_std(xs, mu), min, max, median(xs), xs[xs.len() - 1]]
}

/// Least-squares slope against 0..T. Symmetric steps are paired so that a
/// constant series yields exactly zero.
fn ols_slope(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let centre = (n as f64 - 1.0) / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..n / 2 {
        let dt = t as f64 - centre;
        num += dt * (xs[t] - xs[n - 1 - t]);
        den += 2.0 * dt * dt;
    }
    num / den
}

fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    if xs.len() < 3 {
        return 0.0;
    }
    let mu = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - mu).powi(2)).sum();
    if denom <= ZERO_VARIANCE {
        return 0.0;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - mu) * (w[1] - mu)).sum();
    (num / denom).clamp(-1.0, 1.0)
}

fn temporal_stats(xs: &[f64]) -> [f64; N_TEMPORAL_STATS] {
    if xs.len() < 2 {
        return [0.0; N_TEMPORAL_STATS];
    }
    let diffs: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let dmu = mean(&diffs);
    [
        dmu,
        pop_std(&diffs, dmu),
        ols_slope(xs),
        lag1_autocorrelation(xs),
    ]
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - max - lse
}

/// Builds the `fv1` vector of a trace with `1 <= T <= 20` steps.
pub fn extract_features(trace: &LogitTrace) -> Result<FeatureVector> {
    let t = trace.steps();
    if t == 0 {
        return Err(Error::invalid("trace has no steps"));
    }
    if t > T_MAX {
        return Err(Error::invalid(format!(
            "trace length {t} exceeds T_max {T_MAX}"
        )));
    }
    if trace.step_logits.len() != t {
        return Err(Error::invalid("trace logits and choices differ in length"));
    }
    let vocab = trace.step_logits[0].len();
    for row in &trace.step_logits {
        check_finite(row)?;
        if row.len() != vocab {
            return Err(Error::invalid("ragged logit rows"));
        }
    }
    if let Some(&bad) = trace
        .chosen
        .iter()
        .chain(std::iter::once(&trace.eos_id))
        .find(|&&c| c as usize >= vocab)
    {
        return Err(Error::invalid(format!(
            "token {bad} outside the logit rows"
        )));
    }

    let probs: Vec<Vec<f64>> = trace.step_logits.iter().map(|r| softmax(r)).collect();
    let signals: Vec<[f64; N_SERIES]> = probs.iter().map(|p| signals_of(p).to_array()).collect();
    let mut z = vec![0.0; N_FEATURES];

    for k in 0..N_SERIES {
        let series: Vec<f64> = signals.iter().map(|s| s[k]).collect();
        let dist = distribution_stats(&series);
        z[DIST_OFFSET + k * N_DIST_STATS..][..N_DIST_STATS].copy_from_slice(&dist);
        let temporal = temporal_stats(&series);
        z[TEMPORAL_OFFSET + k * N_TEMPORAL_STATS..][..N_TEMPORAL_STATS].copy_from_slice(&temporal);
    }

    let eos = trace.eos_id as usize;
    let chosen: &[Token] = &trace.chosen;
    let repeats = chosen.windows(2).filter(|w| w[0] == w[1]).count();
    let repetition = if t > 1 {
        repeats as f64 / (t - 1) as f64
    } else {
        0.0
    };
    let mut unique = chosen.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let eos_probs: Vec<f64> = probs.iter().map(|p| p[eos]).collect();
    let non_final = &eos_probs[..t - 1];
    let (eos_max, eos_mean) = if non_final.is_empty() {
        (0.0, 0.0)
    } else {
        (
            non_final.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean(non_final),
        )
    };
    let log_likes: Vec<f64> = trace
        .step_logits
        .iter()
        .zip(chosen)
        .map(|(row, &c)| log_softmax_at(row, c as usize))
        .collect();
    let cumulative: f64 = log_likes.iter().sum();
    let mean_ll = cumulative / t as f64;
    let min_chosen = probs
        .iter()
        .zip(chosen)
        .map(|(p, &c)| p[c as usize])
        .fold(f64::INFINITY, f64::min);
    let confident = signals.iter().filter(|s| s[0] >= CONFIDENT_P1).count() as f64 / t as f64;

    let seq = [
        t as f64,
        t as f64 / T_MAX as f64,
        repetition,
        unique.len() as f64 / t as f64,
        eos_probs[t - 1],
        eos_max,
        eos_mean,
        cumulative,
        mean_ll,
        (-mean_ll).exp(),
        min_chosen,
        confident,
    ];
    z[SEQUENCE_OFFSET..PADDED_OFFSET].copy_from_slice(&seq);
    for (slot, s) in z[PADDED_OFFSET..].iter_mut().zip(&signals) {
        *slot = s[0];
    }
    FeatureVector::from_values(z)
}

/// One row of a features file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub part_id: usize,
    pub label: Option<bool>,
    pub features: FeatureVector,
}

/// Writes `features.csv`: a `# schema=fv1` line, then `part_id,label,f000..f131`.
pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    writeln!(buf, "# schema={SCHEMA_VERSION}").expect("write to Vec");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["part_id".to_string(), "label".to_string()];
        header.extend(feature_names());
        w.write_record(&header)
            .map_err(|e| Error::format(path, e.to_string()))?;
        for r in rows {
            let mut rec = vec![
                r.part_id.to_string(),
                r.label.map_or(String::new(), |l| u8::from(l).to_string()),
            ];
            rec.extend(r.features.values().iter().map(|v| v.to_string()));
            w.write_record(&rec)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    crate::corpus::dataset_write_atomic(path, &buf)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let expected = format!("# schema={SCHEMA_VERSION}");
    if first.trim_end() != expected {
        return Err(Error::format(
            path,
            format!("expected '{expected}', found '{}'", first.trim_end()),
        ));
    }
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if headers.len() != N_FEATURES + 2 {
        return Err(Error::format(path, "unexpected column count"));
    }
    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |m: String| Error::format(path, format!("row {}: {m}", i + 1));
        let part_id = rec[0].parse().map_err(|e| bad(format!("part_id: {e}")))?;
        let label = match &rec[1] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(bad(format!("label '{other}'"))),
        };
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            part_id,
            label,
            features: FeatureVector::from_values(values)?,
        });
    }
    Ok(rows)
}
