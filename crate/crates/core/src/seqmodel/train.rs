use rand::seq::SliceRandom;

use super::transformer::Batch;
use super::{Model, TrainHyper};
use crate::corpus::vocab::PROMPT_LEN;
use crate::corpus::{tokenize, PartEncoding, ProcessChain, Token, PAD};
use crate::{rng, Error, Result};

/// Per-epoch mean loss of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Builds a right-padded batch. Loss positions are those whose target is a
/// chain operation or the closing EOS; prompt targets are masked out.
pub fn make_batch(seqs: &[&[Token]]) -> Batch {
    let b = seqs.len();
    let t = seqs.iter().map(|s| s.len() - 1).max().unwrap_or(0);
    let mut tokens = vec![PAD; b * t];
    let mut targets = vec![PAD; b * t];
    let mut mask = vec![false; b * t];
    for (i, s) in seqs.iter().enumerate() {
        for pos in 0..s.len() - 1 {
            tokens[i * t + pos] = s[pos];
            targets[i * t + pos] = s[pos + 1];
            mask[i * t + pos] = pos + 1 >= PROMPT_LEN;
        }
    }
    Batch {
        b,
        t,
        tokens,
        targets,
        mask,
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], h: &TrainHyper) {
        self.step += 1;
        let bc1 = 1.0 - h.beta1.powi(self.step);
        let bc2 = 1.0 - h.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g;
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= h.learning_rate * mhat / (vhat.sqrt() + h.eps);
        }
    }
}

fn clip_global_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

impl Model {
    /// Trains on (part, chain) pairs with Adam and global-norm clipping.
    /// The shuffle order of every epoch derives from `h.seed`, so a run is
    /// bit-reproducible.
    pub fn train(
        &mut self,
        pairs: &[(PartEncoding, ProcessChain)],
        h: &TrainHyper,
    ) -> Result<TrainReport> {
        if pairs.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        h.validate()?;
        let seqs: Vec<Vec<Token>> = pairs.iter().map(|(p, c)| tokenize(p, Some(c))).collect();
        self.train_sequences(&seqs, h)
    }

    pub(crate) fn train_sequences(
        &mut self,
        seqs: &[Vec<Token>],
        h: &TrainHyper,
    ) -> Result<TrainReport> {
        let mut adam = Adam::new(self.params.len());
        let mut grad = vec![0.0; self.params.len()];
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        let mut epoch_losses = Vec::with_capacity(h.epochs);
        let mut steps = 0;
        for epoch in 0..h.epochs {
            order.sort_unstable();
            order.shuffle(&mut rng::indexed_stream(
                h.seed,
                "train-shuffle",
                epoch as u64,
            ));
            let mut total = 0.0;
            let mut count = 0usize;
            for chunk in order.chunks(h.batch_size) {
                let refs: Vec<&[Token]> = chunk.iter().map(|&i| seqs[i].as_slice()).collect();
                let batch = make_batch(&refs);
                let loss = self.loss_and_grad(&batch, &mut grad)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        loss,
                        learning_rate: h.learning_rate,
                    });
                }
                clip_global_norm(&mut grad, h.grad_clip_norm);
                adam.update(&mut self.params, &grad, h);
                steps += 1;
                let n = batch.n_targets();
                total += loss * n as f64;
                count += n;
            }
            let mean = total / count as f64;
            if !self.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: mean,
                    learning_rate: h.learning_rate,
                });
            }
            log::trace!("epoch {epoch}: loss {mean:.6}");
            epoch_losses.push(mean);
        }
        Ok(TrainReport {
            epoch_losses,
            steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{enumerate_parts, plan_feasible_chains};

    #[test]
    fn batch_masks_prompt_targets() {
        let p = enumerate_parts()[9];
        let c = plan_feasible_chains(&p).remove(0);
        let seq = tokenize(&p, Some(&c));
        let short = tokenize(
            &enumerate_parts()[0],
            Some(&plan_feasible_chains(&enumerate_parts()[0])[0]),
        );
        let batch = make_batch(&[&seq, &short]);
        assert_eq!(batch.t, seq.len().max(short.len()) - 1);
        assert_eq!(batch.n_targets(), c.len() + 1 + short.len() - PROMPT_LEN);
        for pos in 0..PROMPT_LEN - 1 {
            assert!(!batch.mask[pos]);
        }
        assert!(batch.mask[PROMPT_LEN - 1]);
        assert_eq!(batch.targets[seq.len() - 2], crate::corpus::EOS);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
