//! Central-difference gradient checking on micro transformers.

use capp_core::seqmodel::{Batch, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn micro() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        context_len: 8,
        vocab_size: 6,
        dropout: 0.0,
    }
}

/// A micro model with parameters spread far enough from init that every
/// group carries a sizeable gradient.
pub fn perturbed_model(cfg: ModelConfig, seed: u64) -> Model {
    let mut m = Model::init(cfg, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut() {
        *p += r.random_range(-0.5..0.5);
    }
    m
}

pub fn batch(cfg: &ModelConfig, seed: u64) -> Batch {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let (b, t) = (3, 7);
    let v = cfg.vocab_size as u32;
    Batch {
        b,
        t,
        tokens: (0..b * t).map(|_| r.random_range(0..v)).collect(),
        targets: (0..b * t).map(|_| r.random_range(0..v)).collect(),
        mask: (0..b * t)
            .map(|i| i % t >= 2 && r.random_bool(0.8))
            .collect(),
    }
}

/// Per-group error ||analytic - numeric|| / (||analytic|| + ||numeric||).
pub fn group_errors(model: &Model, batch: &Batch) -> Vec<(String, f64)> {
    let mut analytic = vec![0.0; model.params().len()];
    model.loss_and_grad(batch, &mut analytic).unwrap();
    let h = 1e-4;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (name, range, _) in model.layout().groups() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for i in range {
            let x = probe.params()[i];
            probe.params_mut()[i] = x + h;
            let up = probe.loss(batch).unwrap();
            probe.params_mut()[i] = x - h;
            let down = probe.loss(batch).unwrap();
            probe.params_mut()[i] = x;
            let numeric = (up - down) / (2.0 * h);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        let denom = na.sqrt() + nn.sqrt();
        out.push((
            name,
            if denom == 0.0 {
                0.0
            } else {
                diff.sqrt() / denom
            },
        ));
    }
    out
}

/// Largest per-group error of the micro config over `seeds`.
pub fn max_group_error(cfg: ModelConfig, seeds: &[u64]) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for &seed in seeds {
        let m = perturbed_model(cfg, seed);
        for (name, err) in group_errors(&m, &batch(&cfg, seed)) {
            if err >= worst.0 {
                worst = (err, format!("seed {seed} group {name}"));
            }
        }
    }
    worst
}
