//! Forward and backward passes of the pre-norm decoder stack.

use super::kernels::{
    gelu, gelu_grad, layernorm, layernorm_backward, linear, linear_backward, softmax_in_place,
};
use super::Model;
use crate::corpus::Token;
use crate::{Error, Result};

/// A right-padded batch of `b` sequences of length `t`, with next-token
/// targets and a mask selecting the positions that contribute to the loss.
#[derive(Debug, Clone)]
pub struct Batch {
    pub b: usize,
    pub t: usize,
    pub tokens: Vec<Token>,
    pub targets: Vec<Token>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn n_targets(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

struct LayerActs {
    x_in: Vec<f64>,
    ln1: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    att: Vec<f64>,
    y: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fc: Vec<f64>,
    act: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Activations {
    b: usize,
    t: usize,
    tokens: Vec<Token>,
    layers: Vec<LayerActs>,
    x_out: Vec<f64>,
    lnf: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
    /// `b·t × vocab` logits.
    pub logits: Vec<f64>,
}

impl Model {
    fn check_tokens(&self, tokens: &[Token], t: usize) -> Result<()> {
        if t == 0 || t > self.cfg.context_len {
            return Err(Error::invalid(format!(
                "sequence length {t} outside [1, {}]",
                self.cfg.context_len
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&x| x as usize >= self.cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token {bad} outside the vocabulary"
            )));
        }
        Ok(())
    }

    /// Next-token logits for every position of one sequence (`len × vocab`).
    pub fn forward(&self, tokens: &[Token]) -> Result<Vec<f64>> {
        self.check_tokens(tokens, tokens.len())?;
        Ok(self.forward_batch(tokens, 1, tokens.len()).logits)
    }

    /// Runs `b` sequences of equal length `t` stored back to back.
    pub(crate) fn forward_batch(&self, tokens: &[Token], b: usize, t: usize) -> Activations {
        let cfg = &self.cfg;
        let (d, f, v, h) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
        let hd = cfg.head_dim();
        let n = b * t;
        let p = &self.params;
        let lay = &self.layout;
        debug_assert_eq!(tokens.len(), n);

        let mut x = vec![0.0; n * d];
        let wte = &p[lay.wte.clone()];
        let wpe = &p[lay.wpe.clone()];
        for (r, row) in x.chunks_exact_mut(d).enumerate() {
            let tok = tokens[r] as usize;
            let pos = r % t;
            for i in 0..d {
                row[i] = wte[tok * d + i] + wpe[pos * d + i];
            }
        }

        let scale = 1.0 / (hd as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in &lay.layers {
            let mut a = LayerActs {
                x_in: x,
                ln1: vec![0.0; n * d],
                ln1_mean: vec![0.0; n],
                ln1_rstd: vec![0.0; n],
                qkv: vec![0.0; n * 3 * d],
                att: vec![0.0; b * h * t * t],
                y: vec![0.0; n * d],
                x_mid: vec![0.0; n * d],
                ln2: vec![0.0; n * d],
                ln2_mean: vec![0.0; n],
                ln2_rstd: vec![0.0; n],
                fc: vec![0.0; n * f],
                act: vec![0.0; n * f],
            };
            layernorm(
                &a.x_in,
                &p[l.ln1_g.clone()],
                &p[l.ln1_b.clone()],
                d,
                &mut a.ln1,
                &mut a.ln1_mean,
                &mut a.ln1_rstd,
            );
            linear(
                &a.ln1,
                &p[l.w_qkv.clone()],
                &p[l.b_qkv.clone()],
                n,
                d,
                3 * d,
                &mut a.qkv,
            );

            for bi in 0..b {
                for hi in 0..h {
                    let att = &mut a.att[(bi * h + hi) * t * t..(bi * h + hi + 1) * t * t];
                    for ti in 0..t {
                        let q = &a.qkv[(bi * t + ti) * 3 * d + hi * hd..][..hd];
                        let row = &mut att[ti * t..ti * t + t];
                        for (si, r) in row[..=ti].iter_mut().enumerate() {
                            let k = &a.qkv[(bi * t + si) * 3 * d + d + hi * hd..][..hd];
                            *r = scale * q.iter().zip(k).map(|(x, y)| x * y).sum::<f64>();
                        }
                        softmax_in_place(&mut row[..=ti]);
                        let out = &mut a.y[(bi * t + ti) * d + hi * hd..][..hd];
                        for (si, &w) in row[..=ti].iter().enumerate() {
                            let vv = &a.qkv[(bi * t + si) * 3 * d + 2 * d + hi * hd..][..hd];
                            for (o, vx) in out.iter_mut().zip(vv) {
                                *o += w * vx;
                            }
                        }
                    }
                }
            }

            linear(
                &a.y,
                &p[l.w_o.clone()],
                &p[l.b_o.clone()],
                n,
                d,
                d,
                &mut a.x_mid,
            );
            for (m, xi) in a.x_mid.iter_mut().zip(&a.x_in) {
                *m += xi;
            }
            layernorm(
                &a.x_mid,
                &p[l.ln2_g.clone()],
                &p[l.ln2_b.clone()],
                d,
                &mut a.ln2,
                &mut a.ln2_mean,
                &mut a.ln2_rstd,
            );
            linear(
                &a.ln2,
                &p[l.w_fc.clone()],
                &p[l.b_fc.clone()],
                n,
                d,
                f,
                &mut a.fc,
            );
            for (o, i) in a.act.iter_mut().zip(&a.fc) {
                *o = gelu(*i);
            }
            let mut x_next = vec![0.0; n * d];
            linear(
                &a.act,
                &p[l.w_proj.clone()],
                &p[l.b_proj.clone()],
                n,
                f,
                d,
                &mut x_next,
            );
            for (o, m) in x_next.iter_mut().zip(&a.x_mid) {
                *o += m;
            }
            x = x_next;
            layers.push(a);
        }

        let mut lnf = vec![0.0; n * d];
        let mut lnf_mean = vec![0.0; n];
        let mut lnf_rstd = vec![0.0; n];
        layernorm(
            &x,
            &p[lay.lnf_g.clone()],
            &p[lay.lnf_b.clone()],
            d,
            &mut lnf,
            &mut lnf_mean,
            &mut lnf_rstd,
        );
        let mut logits = vec![0.0; n * v];
        super::kernels::gemm(n, d, v, &lnf, false, wte, true, &mut logits, 0.0);

        Activations {
            b,
            t,
            tokens: tokens.to_vec(),
            layers,
            x_out: x,
            lnf,
            lnf_mean,
            lnf_rstd,
            logits,
        }
    }

    /// Mean masked cross-entropy of `batch`; writes the gradient into `grad`
    /// (overwritten, same layout as the parameters).
    pub fn loss_and_grad(&self, batch: &Batch, grad: &mut [f64]) -> Result<f64> {
        self.check_tokens(&batch.tokens, batch.t)?;
        let acts = self.forward_batch(&batch.tokens, batch.b, batch.t);
        let n_targets = batch.n_targets();
        if n_targets == 0 {
            return Err(Error::invalid("batch has no loss positions"));
        }
        let v = self.cfg.vocab_size;
        let mut dlogits = vec![0.0; batch.b * batch.t * v];
        let mut loss = 0.0;
        let inv = 1.0 / n_targets as f64;
        for (r, (row, drow)) in acts
            .logits
            .chunks_exact(v)
            .zip(dlogits.chunks_exact_mut(v))
            .enumerate()
        {
            if !batch.mask[r] {
                continue;
            }
            drow.copy_from_slice(row);
            softmax_in_place(drow);
            let target = batch.targets[r] as usize;
            loss -= drow[target].max(f64::MIN_POSITIVE).ln();
            drow[target] -= 1.0;
            for g in drow.iter_mut() {
                *g *= inv;
            }
        }
        self.backward(&acts, &dlogits, grad);
        Ok(loss * inv)
    }

    /// Masked cross-entropy only, without gradients.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_tokens(&batch.tokens, batch.t)?;
        let acts = self.forward_batch(&batch.tokens, batch.b, batch.t);
        let v = self.cfg.vocab_size;
        let mut loss = 0.0;
        let mut count = 0usize;
        let mut buf = vec![0.0; v];
        for (r, row) in acts.logits.chunks_exact(v).enumerate() {
            if batch.mask[r] {
                buf.copy_from_slice(row);
                softmax_in_place(&mut buf);
                loss -= buf[batch.targets[r] as usize].max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::invalid("batch has no loss positions"));
        }
        Ok(loss / count as f64)
    }

    fn backward(&self, acts: &Activations, dlogits: &[f64], grad: &mut [f64]) {
        let cfg = &self.cfg;
        let (d, f, v, h) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
        let hd = cfg.head_dim();
        let (b, t) = (acts.b, acts.t);
        let n = b * t;
        let p = &self.params;
        let lay = &self.layout;
        grad.fill(0.0);

        // tied output projection
        let mut dx_f = vec![0.0; n * d];
        super::kernels::gemm(
            n,
            v,
            d,
            dlogits,
            false,
            &p[lay.wte.clone()],
            false,
            &mut dx_f,
            0.0,
        );
        super::kernels::gemm(
            v,
            n,
            d,
            dlogits,
            true,
            &acts.lnf,
            false,
            &mut grad[lay.wte.clone()],
            1.0,
        );

        let mut dx = vec![0.0; n * d];
        {
            let (dg, db) = grad[lay.lnf_g.start..lay.lnf_b.end].split_at_mut(d);
            layernorm_backward(
                &dx_f,
                &acts.x_out,
                &p[lay.lnf_g.clone()],
                &acts.lnf_mean,
                &acts.lnf_rstd,
                d,
                &mut dx,
                dg,
                db,
            );
        }

        let scale = 1.0 / (hd as f64).sqrt();
        let mut dact = vec![0.0; n * f];
        let mut dln = vec![0.0; n * d];
        let mut dy = vec![0.0; n * d];
        let mut dqkv = vec![0.0; n * 3 * d];
        let mut datt_row = vec![0.0; t];
        for (l, a) in lay.layers.iter().zip(&acts.layers).rev() {
            // MLP: x_out = x_mid + proj(gelu(fc(ln2(x_mid))))
            {
                let (dw, db) = grad[l.w_proj.start..l.b_proj.end].split_at_mut(f * d);
                linear_backward(
                    &dx,
                    &a.act,
                    &p[l.w_proj.clone()],
                    n,
                    f,
                    d,
                    Some(&mut dact),
                    dw,
                    db,
                );
            }
            for (g, x) in dact.iter_mut().zip(&a.fc) {
                *g *= gelu_grad(*x);
            }
            {
                let (dw, db) = grad[l.w_fc.start..l.b_fc.end].split_at_mut(d * f);
                linear_backward(
                    &dact,
                    &a.ln2,
                    &p[l.w_fc.clone()],
                    n,
                    d,
                    f,
                    Some(&mut dln),
                    dw,
                    db,
                );
            }
            {
                let (dg, db) = grad[l.ln2_g.start..l.ln2_b.end].split_at_mut(d);
                layernorm_backward(
                    &dln,
                    &a.x_mid,
                    &p[l.ln2_g.clone()],
                    &a.ln2_mean,
                    &a.ln2_rstd,
                    d,
                    &mut dx,
                    dg,
                    db,
                );
            }
            // dx now holds d(loss)/d(x_mid); attention: x_mid = x_in + o(attn(ln1(x_in)))
            {
                let (dw, db) = grad[l.w_o.start..l.b_o.end].split_at_mut(d * d);
                linear_backward(&dx, &a.y, &p[l.w_o.clone()], n, d, d, Some(&mut dy), dw, db);
            }
            dqkv.fill(0.0);
            for bi in 0..b {
                for hi in 0..h {
                    let att = &a.att[(bi * h + hi) * t * t..(bi * h + hi + 1) * t * t];
                    for ti in 0..t {
                        let row = &att[ti * t..ti * t + t];
                        let dyt = &dy[(bi * t + ti) * d + hi * hd..][..hd];
                        let mut dot = 0.0;
                        for si in 0..=ti {
                            let vs = &a.qkv[(bi * t + si) * 3 * d + 2 * d + hi * hd..][..hd];
                            datt_row[si] = dyt.iter().zip(vs).map(|(x, y)| x * y).sum::<f64>();
                            dot += row[si] * datt_row[si];
                            let dvs = &mut dqkv[(bi * t + si) * 3 * d + 2 * d + hi * hd..][..hd];
                            for (g, dyv) in dvs.iter_mut().zip(dyt) {
                                *g += row[si] * dyv;
                            }
                        }
                        for si in 0..=ti {
                            let ds = row[si] * (datt_row[si] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let q_off = (bi * t + ti) * 3 * d + hi * hd;
                            let k_off = (bi * t + si) * 3 * d + d + hi * hd;
                            for j in 0..hd {
                                dqkv[q_off + j] += ds * a.qkv[k_off + j];
                                dqkv[k_off + j] += ds * a.qkv[q_off + j];
                            }
                        }
                    }
                }
            }
            {
                let (dw, db) = grad[l.w_qkv.start..l.b_qkv.end].split_at_mut(d * 3 * d);
                linear_backward(
                    &dqkv,
                    &a.ln1,
                    &p[l.w_qkv.clone()],
                    n,
                    d,
                    3 * d,
                    Some(&mut dln),
                    dw,
                    db,
                );
            }
            {
                let (dg, db) = grad[l.ln1_g.start..l.ln1_b.end].split_at_mut(d);
                layernorm_backward(
                    &dln,
                    &a.x_in,
                    &p[l.ln1_g.clone()],
                    &a.ln1_mean,
                    &a.ln1_rstd,
                    d,
                    &mut dx,
                    dg,
                    db,
                );
            }
        }

        let (wte_lo, wpe_lo) = (lay.wte.start, lay.wpe.start);
        for (r, row) in dx.chunks_exact(d).enumerate() {
            let tok = acts.tokens[r] as usize;
            let pos = r % t;
            for i in 0..d {
                grad[wte_lo + tok * d + i] += row[i];
                grad[wpe_lo + pos * d + i] += row[i];
            }
        }
    }
}
