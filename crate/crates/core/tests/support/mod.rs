//! Shared helpers for the integration tests: a brute-force feature
//! extractor written straight from the feature definitions, and random traces.
#![allow(dead_code)]

pub mod grad;

use capp_core::corpus::EOS;
use capp_core::seqmodel::LogitTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 38;

fn softmax_naive(l: &[f64]) -> Vec<f64> {
    let m = l.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// p1, p2, p3, H, PP, m12, m23, Gini (pairwise), KL, V for one row.
pub fn naive_signals(l: &[f64]) -> [f64; 10] {
    let p = softmax_naive(l);
    let n = p.len() as f64;
    let mut desc = p.clone();
    desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut h = 0.0;
    for &x in &p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    let mut pair = 0.0;
    for &a in &p {
        for &b in &p {
            pair += (a - b).abs();
        }
    }
    let gini = pair / (2.0 * n);
    let var = p.iter().map(|x| (x - 1.0 / n) * (x - 1.0 / n)).sum::<f64>() / n;
    [
        desc[0],
        desc[1],
        desc[2],
        h,
        h.exp(),
        desc[0] - desc[1],
        desc[1] - desc[2],
        gini,
        n.ln() - h,
        var,
    ]
}

fn avg(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pstd(x: &[f64]) -> f64 {
    let m = avg(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn med(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n.is_multiple_of(2) {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    } else {
        s[n / 2]
    }
}

fn slope(y: &[f64]) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let t: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    let (mt, my) = (avg(&t), avg(y));
    let num: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let den: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    num / den
}

fn autocorr(y: &[f64]) -> f64 {
    if y.len() < 3 {
        return 0.0;
    }
    let m = avg(y);
    let den: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if den < 1e-18 {
        return 0.0;
    }
    let mut num = 0.0;
    for i in 0..y.len() - 1 {
        num += (y[i] - m) * (y[i + 1] - m);
    }
    num / den
}

/// The full 132-wide vector computed the slow, obvious way.
pub fn naive_features(tr: &LogitTrace) -> Vec<f64> {
    let t = tr.chosen.len();
    let sig: Vec<[f64; 10]> = tr.step_logits.iter().map(|r| naive_signals(r)).collect();
    let mut z = Vec::with_capacity(132);
    for k in 0..10 {
        let s: Vec<f64> = sig.iter().map(|r| r[k]).collect();
        let lo = s.iter().cloned().fold(f64::MAX, f64::min);
        let hi = s.iter().cloned().fold(f64::MIN, f64::max);
        z.extend([avg(&s), pstd(&s), lo, hi, med(&s), s[t - 1]]);
    }
    for k in 0..10 {
        let s: Vec<f64> = sig.iter().map(|r| r[k]).collect();
        if t == 1 {
            z.extend([0.0; 4]);
            continue;
        }
        let d: Vec<f64> = (1..t).map(|i| s[i] - s[i - 1]).collect();
        z.extend([avg(&d), pstd(&d), slope(&s), autocorr(&s)]);
    }
    let probs: Vec<Vec<f64>> = tr.step_logits.iter().map(|r| softmax_naive(r)).collect();
    let eos = tr.eos_id as usize;
    let mut reps = 0;
    for i in 1..t {
        if tr.chosen[i] == tr.chosen[i - 1] {
            reps += 1;
        }
    }
    let mut uniq: Vec<u32> = Vec::new();
    for &c in &tr.chosen {
        if !uniq.contains(&c) {
            uniq.push(c);
        }
    }
    let eos_nf: Vec<f64> = probs[..t - 1].iter().map(|p| p[eos]).collect();
    let ll: Vec<f64> = probs
        .iter()
        .zip(&tr.chosen)
        .map(|(p, &c)| p[c as usize].ln())
        .collect();
    let cum: f64 = ll.iter().sum();
    let mll = cum / t as f64;
    z.push(t as f64);
    z.push(t as f64 / 20.0);
    z.push(if t > 1 {
        reps as f64 / (t - 1) as f64
    } else {
        0.0
    });
    z.push(uniq.len() as f64 / t as f64);
    z.push(probs[t - 1][eos]);
    z.push(if eos_nf.is_empty() {
        0.0
    } else {
        eos_nf.iter().cloned().fold(f64::MIN, f64::max)
    });
    z.push(if eos_nf.is_empty() { 0.0 } else { avg(&eos_nf) });
    z.push(cum);
    z.push(mll);
    z.push((-mll).exp());
    z.push(
        probs
            .iter()
            .zip(&tr.chosen)
            .map(|(p, &c)| p[c as usize])
            .fold(f64::MAX, f64::min),
    );
    z.push(sig.iter().filter(|s| s[0] >= 0.9).count() as f64 / t as f64);
    // Padded tail: first-signal values per step, zero beyond T.
    z.extend(sig.iter().map(|s| s[0]));
    z.resize(z.len() + 20 - t, 0.0);
    z
}

/// A trace with `t` steps whose logit scale varies from flat to peaked.
/// Choices follow the argmax except for occasional random tokens, and the
/// last step is usually EOS.
pub fn random_trace(rng: &mut ChaCha8Rng, t: usize) -> LogitTrace {
    let scale = [0.1, 1.0, 3.0, 8.0][rng.random_range(0..4)];
    let mut rows = Vec::with_capacity(t);
    let mut chosen = Vec::with_capacity(t);
    for step in 0..t {
        let mut row: Vec<f64> = (0..VOCAB)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        if rng.random_bool(0.5) {
            let boost = rng.random_range(0.0..30.0);
            let k = if step == t - 1 {
                EOS as usize
            } else {
                rng.random_range(4..16)
            };
            row[k] += boost;
        }
        let argmax = row
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        chosen.push(if rng.random_bool(0.2) {
            rng.random_range(0..VOCAB)
        } else {
            argmax
        } as u32);
        rows.push(row);
    }
    LogitTrace {
        part_id: rng.random_range(0..2048),
        step_logits: rows,
        chosen,
        eos_id: EOS,
        hit_cap: false,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest deviation between the extractor and the naive oracle, with its
/// index. Deviations are scaled by `max(1, |naive|)`, so entries of order one
/// are compared absolutely and large ones (such as exp(-mean log-likelihood))
/// relatively.
pub fn max_feature_deviation(trace: &LogitTrace) -> (f64, usize) {
    let fast = capp_core::trace_features::extract_features(trace).unwrap();
    let slow = naive_features(trace);
    assert_eq!(slow.len(), 132);
    fast.values()
        .iter()
        .zip(&slow)
        .enumerate()
        .map(|(i, (a, b))| ((a - b).abs() / b.abs().max(1.0), i))
        .fold((0.0, 0), |m, x| if x.0 > m.0 { x } else { m })
}
