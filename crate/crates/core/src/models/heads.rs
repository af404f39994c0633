//! Temporal heads: `[k, D]` per-frame embeddings to a pooled clip embedding.
//!
//! Each head is one implementation of [`TemporalHead`], registered by name in
//! [`HEADS`] and selected at runtime from the model spec.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{invalid, Result};
use crate::models::params::{Bound, Init, ParamId, ParamStore};
use crate::rng::SslRng;

pub struct HeadOutput {
    /// Per-step features `[k, D]`.
    pub sequence: Var,
    /// Clip embedding `[1, D]`.
    pub pooled: Var,
}

pub trait TemporalHead: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, g: &mut Graph, p: &Bound, frames: Var) -> HeadOutput;
}

pub struct HeadEntry {
    pub name: &'static str,
    pub build: fn(&HeadConfig, &mut ParamStore, &mut SslRng) -> Box<dyn TemporalHead>,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadConfig {
    pub dim: usize,
    pub attention_heads: usize,
}

pub static HEADS: &[HeadEntry] = &[
    HeadEntry {
        name: "recurrent",
        build: RecurrentHead::build,
    },
    HeadEntry {
        name: "attention",
        build: AttentionHead::build,
    },
    HeadEntry {
        name: "causal_tcn",
        build: CausalTcnHead::build,
    },
];

pub fn head_by_name(name: &str) -> Result<&'static HeadEntry> {
    HEADS.iter().find(|h| h.name == name).map_or_else(
        || {
            let known: Vec<&str> = HEADS.iter().map(|h| h.name).collect();
            invalid(format!("unknown temporal head `{name}` (known: {})", known.join(", ")))
        },
        Ok,
    )
}

fn dense(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut SslRng) -> (ParamId, ParamId) {
    let w = store.add(&format!("{name}.w"), vec![fan_in, fan_out], Init::Glorot { fan_in, fan_out }, rng);
    let b = store.add(&format!("{name}.b"), vec![fan_out], Init::Zeros, rng);
    (w, b)
}

/// Two stacked gated recurrent layers; the clip embedding is the last hidden state.
pub struct RecurrentHead {
    dim: usize,
    layers: Vec<GruLayer>,
}

struct GruLayer {
    wx: ParamId,
    bx: ParamId,
    wh: ParamId,
    bh: ParamId,
}

impl RecurrentHead {
    const LAYERS: usize = 2;

    fn build(cfg: &HeadConfig, store: &mut ParamStore, rng: &mut SslRng) -> Box<dyn TemporalHead> {
        let d = cfg.dim;
        let layers = (0..Self::LAYERS)
            .map(|l| {
                let (wx, bx) = dense(store, &format!("gru{l}.x"), d, 3 * d, rng);
                let (wh, bh) = dense(store, &format!("gru{l}.h"), d, 3 * d, rng);
                GruLayer { wx, bx, wh, bh }
            })
            .collect();
        Box::new(Self { dim: d, layers })
    }
}

impl TemporalHead for RecurrentHead {
    fn name(&self) -> &'static str {
        "recurrent"
    }

    fn forward(&self, g: &mut Graph, p: &Bound, frames: Var) -> HeadOutput {
        let d = self.dim;
        let steps = g.value(frames).dims2().0;
        let mut input = frames;
        let mut last = None;
        for layer in &self.layers {
            let xw = g.matmul(input, p[layer.wx]);
            let xw = g.add_bias(xw, p[layer.bx]);
            let mut h = g.leaf(Tensor::zeros(vec![1, d]));
            let mut states = Vec::with_capacity(steps);
            for t in 0..steps {
                let xt = g.row(xw, t);
                let hw = g.matmul(h, p[layer.wh]);
                let hw = g.add_bias(hw, p[layer.bh]);
                let (xz, hz) = (g.slice_cols(xt, 0, d), g.slice_cols(hw, 0, d));
                let (xr, hr) = (g.slice_cols(xt, d, 2 * d), g.slice_cols(hw, d, 2 * d));
                let (xn, hn) = (g.slice_cols(xt, 2 * d, 3 * d), g.slice_cols(hw, 2 * d, 3 * d));
                let z = g.add(xz, hz);
                let z = g.sigmoid(z);
                let r = g.add(xr, hr);
                let r = g.sigmoid(r);
                let rh = g.mul(r, hn);
                let n = g.add(xn, rh);
                let n = g.tanh(n);
                // h' = (1 - z) n + z h = n + z (h - n)
                let diff = g.sub(h, n);
                let zd = g.mul(z, diff);
                h = g.add(n, zd);
                states.push(h);
            }
            input = g.stack_rows(&states);
            last = Some(h);
        }
        HeadOutput {
            sequence: input,
            pooled: last.expect("at least one recurrent layer"),
        }
    }
}

/// Multi-head self-attention with sinusoidal positions, residual, mean pooling.
pub struct AttentionHead {
    dim: usize,
    heads: usize,
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: (ParamId, ParamId),
}

impl AttentionHead {
    fn build(cfg: &HeadConfig, store: &mut ParamStore, rng: &mut SslRng) -> Box<dyn TemporalHead> {
        let d = cfg.dim;
        let glorot = Init::Glorot { fan_in: d, fan_out: d };
        let q = store.add("attn.q", vec![d, d], glorot, rng);
        let k = store.add("attn.k", vec![d, d], glorot, rng);
        let v = store.add("attn.v", vec![d, d], glorot, rng);
        let o = dense(store, "attn.o", d, d, rng);
        Box::new(Self {
            dim: d,
            heads: cfg.attention_heads,
            q,
            k,
            v,
            o,
        })
    }
}

pub fn sinusoidal_positions(steps: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; steps * dim];
    for t in 0..steps {
        for i in 0..dim {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = t as f64 * freq;
            data[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![steps, dim], data)
}

impl TemporalHead for AttentionHead {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn forward(&self, g: &mut Graph, p: &Bound, frames: Var) -> HeadOutput {
        let steps = g.value(frames).dims2().0;
        let pos = g.leaf(sinusoidal_positions(steps, self.dim));
        let x = g.add(frames, pos);
        let q = g.matmul(x, p[self.q]);
        let k = g.matmul(x, p[self.k]);
        let v = g.matmul(x, p[self.v]);
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (s, e) = (h * hd, (h + 1) * hd);
            let qh = g.slice_cols(q, s, e);
            let kh = g.slice_cols(k, s, e);
            let vh = g.slice_cols(v, s, e);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let cat = g.concat_cols(&outs);
        let o = g.matmul(cat, p[self.o.0]);
        let o = g.add_bias(o, p[self.o.1]);
        let y = g.add(x, o);
        let pooled = g.mean_rows(y);
        HeadOutput { sequence: y, pooled }
    }
}

/// Two causal dilated convolutions (dilations 1 and 2, kernel 3) with a residual;
/// the clip embedding is the last step, which sees only past frames.
pub struct CausalTcnHead {
    layers: Vec<(ParamId, ParamId, usize)>,
}

impl CausalTcnHead {
    const KERNEL: usize = 3;

    fn build(cfg: &HeadConfig, store: &mut ParamStore, rng: &mut SslRng) -> Box<dyn TemporalHead> {
        let d = cfg.dim;
        let layers = [1, 2]
            .into_iter()
            .enumerate()
            .map(|(l, dilation)| {
                let w = store.add(
                    &format!("tcn{l}.w"),
                    vec![Self::KERNEL, d, d],
                    Init::Glorot {
                        fan_in: Self::KERNEL * d,
                        fan_out: d,
                    },
                    rng,
                );
                let b = store.add(&format!("tcn{l}.b"), vec![d], Init::Zeros, rng);
                (w, b, dilation)
            })
            .collect();
        Box::new(Self { layers })
    }
}

impl TemporalHead for CausalTcnHead {
    fn name(&self) -> &'static str {
        "causal_tcn"
    }

    fn forward(&self, g: &mut Graph, p: &Bound, frames: Var) -> HeadOutput {
        let mut h = frames;
        for &(w, b, dilation) in &self.layers {
            let y = g.causal_conv1d(h, p[w], p[b], dilation);
            h = g.relu(y);
        }
        let y = g.add(frames, h);
        let steps = g.value(y).dims2().0;
        let pooled = g.row(y, steps - 1);
        HeadOutput { sequence: y, pooled }
    }
}
