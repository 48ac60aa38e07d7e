//! Flat parameter storage.
//!
//! All parameters live in one `Vec<f64>`, in this order:
//!
//! ```text
//! wte [vocab, d]            token embedding, tied to the output projection
//! wpe [context, d]          learned positions
//! per layer:
//!   ln1_g [d], ln1_b [d]
//!   w_qkv [d, 3d], b_qkv [3d]
//!   w_o [d, d], b_o [d]
//!   ln2_g [d], ln2_b [d]
//!   w_fc [d, ff], b_fc [ff]
//!   w_proj [ff, d], b_proj [d]
//! lnf_g [d], lnf_b [d]
//! ```
//!
//! Matrices are row-major `[in, out]`, so a linear layer is `x · W + b`.

use std::ops::Range;

use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::rng;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Gain,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, c, d, f) = (cfg.vocab_size, cfg.context_len, cfg.d_model, cfg.d_ff);
        let mut cur = Cursor(0);
        let wte = cur.take(v * d);
        let wpe = cur.take(c * d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerLayout {
                ln1_g: cur.take(d),
                ln1_b: cur.take(d),
                w_qkv: cur.take(d * 3 * d),
                b_qkv: cur.take(3 * d),
                w_o: cur.take(d * d),
                b_o: cur.take(d),
                ln2_g: cur.take(d),
                ln2_b: cur.take(d),
                w_fc: cur.take(d * f),
                b_fc: cur.take(f),
                w_proj: cur.take(f * d),
                b_proj: cur.take(d),
            })
            .collect();
        let lnf_g = cur.take(d);
        let lnf_b = cur.take(d);
        ParamLayout {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            total: cur.0,
        }
    }

    /// Named parameter groups in storage order.
    pub fn groups(&self) -> Vec<(String, Range<usize>, ParamKind)> {
        use ParamKind::*;
        let mut out = vec![
            ("wte".to_string(), self.wte.clone(), Weight),
            ("wpe".to_string(), self.wpe.clone(), Weight),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, r, kind) in [
                ("ln1_g", &l.ln1_g, Gain),
                ("ln1_b", &l.ln1_b, Bias),
                ("w_qkv", &l.w_qkv, Weight),
                ("b_qkv", &l.b_qkv, Bias),
                ("w_o", &l.w_o, Weight),
                ("b_o", &l.b_o, Bias),
                ("ln2_g", &l.ln2_g, Gain),
                ("ln2_b", &l.ln2_b, Bias),
                ("w_fc", &l.w_fc, Weight),
                ("b_fc", &l.b_fc, Bias),
                ("w_proj", &l.w_proj, Weight),
                ("b_proj", &l.b_proj, Bias),
            ] {
                out.push((format!("h{i}.{name}"), r.clone(), kind));
            }
        }
        out.push(("lnf_g".to_string(), self.lnf_g.clone(), Gain));
        out.push(("lnf_b".to_string(), self.lnf_b.clone(), Bias));
        out
    }
}

/// A decoder-only transformer: configuration plus flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) cfg: ModelConfig,
    pub(crate) layout: ParamLayout,
    pub(crate) params: Vec<f64>,
}

impl Model {
    /// Gaussian(0, 0.02) weights, unit gains, zero biases.
    pub fn init(cfg: ModelConfig, seed: u64) -> crate::Result<Self> {
        cfg.validate_shape()?;
        let layout = ParamLayout::new(&cfg);
        let mut params = vec![0.0; layout.total];
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let mut rng = rng::stream(seed, "init");
        for (_, range, kind) in layout.groups() {
            let slot = &mut params[range];
            match kind {
                ParamKind::Weight => slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng)),
                ParamKind::Gain => slot.fill(1.0),
                ParamKind::Bias => slot.fill(0.0),
            }
        }
        Ok(Model {
            cfg,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(cfg: ModelConfig, params: Vec<f64>) -> crate::Result<Self> {
        cfg.validate_shape()?;
        let layout = ParamLayout::new(&cfg);
        if params.len() != layout.total {
            return Err(crate::Error::invalid(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Model {
            cfg,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}
