use rand::Rng;

use crate::autodiff::{Grads, Graph, Tensor, Var};
use crate::rng::SslRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Glorot uniform with the given fan-in and fan-out.
    Glorot { fan_in: usize, fan_out: usize },
}

/// Flat parameter vector plus its named layout.
///
/// Values always hold `f32`-representable numbers so checkpoints written as
/// `f32` restore bit-identical models.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init, rng: &mut SslRng) -> ParamId {
        let n: usize = shape.iter().product();
        let offset = self.values.len();
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat_n(0.0, n)),
            Init::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                self.values
                    .extend((0..n).map(|_| round_f32(rng.random_range(-a..a))));
            }
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            offset,
            shape,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.values[e.offset..e.offset + e.len()]
    }

    /// Replaces all values, rounding each to `f32` precision.
    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.values.len(), "parameter count mismatch");
        for (d, v) in self.values.iter_mut().zip(values) {
            *d = round_f32(*v);
        }
    }

    /// Replaces all values verbatim (no rounding); used by EMA teachers.
    pub fn set_values_exact(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.values.len(), "parameter count mismatch");
        self.values.copy_from_slice(values);
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Creates one graph leaf per parameter tensor.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|e| {
                    g.leaf(Tensor::new(
                        e.shape.clone(),
                        self.values[e.offset..e.offset + e.len()].to_vec(),
                    ))
                })
                .collect(),
        )
    }

    /// Flattens the gradients of bound leaves in layout order.
    pub fn gather(&self, bound: &Bound, grads: &Grads) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        self.gather_into(bound, grads, 1.0, &mut out);
        out
    }

    /// `out += scale * grad` for every bound leaf.
    pub fn gather_into(&self, bound: &Bound, grads: &Grads, scale: f64, out: &mut [f64]) {
        for (e, v) in self.entries.iter().zip(&bound.0) {
            if let Some(g) = grads.get(*v) {
                for (d, gv) in out[e.offset..e.offset + e.len()].iter_mut().zip(g) {
                    *d += scale * gv;
                }
            }
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}
