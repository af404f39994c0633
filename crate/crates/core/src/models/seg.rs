use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{invalid, Result};
use crate::models::params::{Bound, Init, ParamId, ParamStore};
use crate::rng::{derive_named, seeded, SslRng};
use crate::types::SegPrediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegModelSpec {
    pub num_classes: usize,
    pub in_channels: usize,
    /// Channels of the full-resolution and half-resolution stages.
    pub channels: [usize; 2],
}

impl Default for SegModelSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            in_channels: 3,
            channels: [8, 16],
        }
    }
}

impl SegModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.in_channels == 0 || self.channels.contains(&0) {
            return invalid(format!("invalid segmentation spec {self:?}"));
        }
        Ok(())
    }
}

/// Two-level encoder-decoder with one skip connection.
pub struct SegmentationNet {
    spec: SegModelSpec,
    store: ParamStore,
    layers: [(ParamId, ParamId); 5],
}

fn conv_param(store: &mut ParamStore, name: &str, k: usize, cin: usize, cout: usize, rng: &mut SslRng) -> (ParamId, ParamId) {
    let w = store.add(
        &format!("{name}.w"),
        vec![k, k, cin, cout],
        Init::Glorot {
            fan_in: k * k * cin,
            fan_out: k * k * cout,
        },
        rng,
    );
    let b = store.add(&format!("{name}.b"), vec![cout], Init::Zeros, rng);
    (w, b)
}

impl SegmentationNet {
    pub fn new(spec: &SegModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(derive_named(seed, "init"));
        let mut store = ParamStore::new();
        let [c1, c2] = spec.channels;
        let layers = [
            conv_param(&mut store, "enc1", 3, spec.in_channels, c1, &mut rng),
            conv_param(&mut store, "enc2", 3, c1, c2, &mut rng),
            conv_param(&mut store, "mid", 3, c2, c2, &mut rng),
            conv_param(&mut store, "dec1", 3, c1 + c2, c1, &mut rng),
            conv_param(&mut store, "out", 1, c1, spec.num_classes, &mut rng),
        ];
        Ok(Self {
            spec: spec.clone(),
            store,
            layers,
        })
    }

    pub fn with_parameters(spec: &SegModelSpec, params: &[f64]) -> Result<Self> {
        let mut net = Self::new(spec, 0)?;
        if params.len() != net.store.len() {
            return invalid(format!(
                "expected {} parameters for this architecture, got {}",
                net.store.len(),
                params.len()
            ));
        }
        net.store.set_values_exact(params);
        Ok(net)
    }

    pub fn spec(&self) -> &SegModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Logits `[N, H, W, num_classes]` for frames `[N, H, W, C]`; `H` and `W` must be even.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, frames: &[f32], shape: [usize; 4]) -> Result<Var> {
        let [_, h, w, c] = shape;
        if c != self.spec.in_channels {
            return invalid(format!("frame has {c} channels, model expects {}", self.spec.in_channels));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return invalid(format!("frame dims {h}x{w} must be even and nonzero"));
        }
        if frames.len() != shape.iter().product::<usize>() {
            return invalid("frame buffer does not match its shape");
        }
        let x = g.leaf(Tensor::new(shape.to_vec(), frames.iter().map(|&v| v as f64).collect()));
        let l = &self.layers;
        let e1 = g.conv2d(x, p[l[0].0], p[l[0].1], 1, 1);
        let e1 = g.relu(e1);
        let e2 = g.conv2d(e1, p[l[1].0], p[l[1].1], 2, 1);
        let e2 = g.relu(e2);
        let m = g.conv2d(e2, p[l[2].0], p[l[2].1], 1, 1);
        let m = g.relu(m);
        let up = g.upsample2x(m);
        let cat = g.concat_last(up, e1);
        let d = g.conv2d(cat, p[l[3].0], p[l[3].1], 1, 1);
        let d = g.relu(d);
        Ok(g.conv2d(d, p[l[4].0], p[l[4].1], 1, 0))
    }

    /// Per-pixel class probabilities of one frame `[H, W, C]`.
    pub fn forward_seg(&self, frame: &[f32], height: usize, width: usize) -> Result<SegPrediction> {
        let preds = self.forward_batch(frame, [1, height, width, self.spec.in_channels])?;
        Ok(preds.into_iter().next().expect("one frame in, one prediction out"))
    }

    pub fn forward_batch(&self, frames: &[f32], shape: [usize; 4]) -> Result<Vec<SegPrediction>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let logits = self.forward_graph(&mut g, &p, frames, shape)?;
        let probs = g.softmax_rows(logits);
        let [n, h, w, _] = shape;
        let k = self.spec.num_classes;
        let data = &g.value(probs).data;
        let per = h * w * k;
        (0..n)
            .map(|i| SegPrediction::from_hwc(&data[i * per..(i + 1) * per], h, w, k))
            .collect()
    }
}

impl Clone for SegmentationNet {
    fn clone(&self) -> Self {
        Self::with_parameters(&self.spec, self.store.values()).expect("spec was validated at construction")
    }
}

impl std::fmt::Debug for SegmentationNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmentationNet")
            .field("spec", &self.spec)
            .field("parameters", &self.store.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize) -> Vec<f32> {
        (0..h * w * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()
    }

    #[test]
    fn output_matches_input_resolution_and_is_a_distribution() {
        let net = SegmentationNet::new(&SegModelSpec::default(), 3).unwrap();
        let pred = net.forward_seg(&frame(6, 10), 6, 10).unwrap();
        assert_eq!((pred.height, pred.width), (6, 10));
        assert_eq!(pred.argmax_mask.len(), 60);
        for px in 0..60 {
            let total: f64 = (0..3).map(|c| pred.prob(c, px)).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
        assert_eq!(pred, net.forward_seg(&frame(6, 10), 6, 10).unwrap());
    }

    #[test]
    fn rejects_odd_frames_and_channel_mismatch() {
        let net = SegmentationNet::new(&SegModelSpec::default(), 0).unwrap();
        assert!(net.forward_seg(&frame(5, 4), 5, 4).is_err());
        assert!(net.forward_batch(&frame(4, 4)[..32], [1, 4, 4, 2]).is_err());
    }
}
