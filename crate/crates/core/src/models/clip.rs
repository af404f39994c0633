use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{invalid, Result};
use crate::models::heads::{head_by_name, HeadConfig, TemporalHead};
use crate::models::params::{Bound, Init, ParamId, ParamStore};
use crate::prob::softmax;
use crate::rng::{derive_named, seeded};
use crate::sampling::uniform_sample;
use crate::types::{FrameView, Prediction, VideoClip};

/// How the encoder's last feature map becomes a per-frame vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialPooling {
    /// Flattened coarse grid; keeps position.
    Grid,
    /// Global average; translation invariant.
    Global,
    /// Both, concatenated.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipModelSpec {
    pub head: String,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub encoder_channels: [usize; 2],
    pub attention_heads: usize,
    pub frames_per_view: usize,
    /// `[H, W, C]` of every frame.
    pub frame_shape: [usize; 3],
    pub pooling: SpatialPooling,
}

impl Default for ClipModelSpec {
    fn default() -> Self {
        Self {
            head: "attention".into(),
            num_classes: 4,
            embed_dim: 32,
            encoder_channels: [8, 16],
            attention_heads: 2,
            frames_per_view: 8,
            frame_shape: [32, 32, 3],
            pooling: SpatialPooling::Both,
        }
    }
}

impl ClipModelSpec {
    pub fn validate(&self) -> Result<()> {
        head_by_name(&self.head)?;
        if self.num_classes < 2 {
            return invalid("a classifier needs at least 2 classes");
        }
        if self.embed_dim == 0 || self.frames_per_view == 0 || self.encoder_channels.contains(&0) {
            return invalid("model dimensions must be >= 1");
        }
        if self.frame_shape.contains(&0) {
            return invalid("frame dimensions must be >= 1");
        }
        if self.attention_heads == 0 || self.embed_dim % self.attention_heads != 0 {
            return invalid(format!(
                "embed_dim {} must be divisible by attention_heads {}",
                self.embed_dim, self.attention_heads
            ));
        }
        Ok(())
    }
}

/// Pre-classifier clip representation and class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingOutput {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Graph handles of one clip forward pass.
pub struct ClipGraph {
    pub embedding: Var,
    pub logits: Var,
    pub sequence: Var,
}

struct Encoder {
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    proj: (ParamId, ParamId),
}

/// Side of the encoder's output grid: two stride-2 convolutions.
fn encoder_grid(side: usize) -> usize {
    let half = |n: usize| (n - 1) / 2 + 1;
    half(half(side))
}

/// Convolutional frame encoder, temporal head, linear classifier.
/// The encoder keeps its coarse spatial grid so object position survives.
pub struct ClipClassifier {
    spec: ClipModelSpec,
    store: ParamStore,
    encoder: Encoder,
    head: Box<dyn TemporalHead>,
    classifier: (ParamId, ParamId),
}

impl ClipClassifier {
    pub fn new(spec: &ClipModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(derive_named(seed, "init"));
        let mut store = ParamStore::new();
        let [fh, fw, c_in] = spec.frame_shape;
        let [c1, c2] = spec.encoder_channels;
        let d = spec.embed_dim;
        let mut conv = |store: &mut ParamStore, name: &str, cin: usize, cout: usize| {
            let w = store.add(
                &format!("{name}.w"),
                vec![3, 3, cin, cout],
                Init::Glorot {
                    fan_in: 9 * cin,
                    fan_out: 9 * cout,
                },
                &mut rng,
            );
            let b = store.add(&format!("{name}.b"), vec![cout], Init::Zeros, &mut rng);
            (w, b)
        };
        let conv1 = conv(&mut store, "enc.conv1", c_in, c1);
        let conv2 = conv(&mut store, "enc.conv2", c1, c2);
        let grid = encoder_grid(fh) * encoder_grid(fw) * c2;
        let flat = match spec.pooling {
            SpatialPooling::Grid => grid,
            SpatialPooling::Global => c2,
            SpatialPooling::Both => grid + c2,
        };
        let proj_w = store.add("enc.proj.w", vec![flat, d], Init::Glorot { fan_in: flat, fan_out: d }, &mut rng);
        let proj_b = store.add("enc.proj.b", vec![d], Init::Zeros, &mut rng);
        let head_cfg = HeadConfig {
            dim: d,
            attention_heads: spec.attention_heads,
        };
        let head = (head_by_name(&spec.head)?.build)(&head_cfg, &mut store, &mut rng);
        let cls_w = store.add(
            "cls.w",
            vec![d, spec.num_classes],
            Init::Glorot {
                fan_in: d,
                fan_out: spec.num_classes,
            },
            &mut rng,
        );
        let cls_b = store.add("cls.b", vec![spec.num_classes], Init::Zeros, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            store,
            encoder: Encoder {
                conv1,
                conv2,
                proj: (proj_w, proj_b),
            },
            head,
            classifier: (cls_w, cls_b),
        })
    }

    /// Same architecture with the given parameter vector.
    pub fn with_parameters(spec: &ClipModelSpec, params: &[f64]) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        if params.len() != model.store.len() {
            return invalid(format!(
                "expected {} parameters for this architecture, got {}",
                model.store.len(),
                params.len()
            ));
        }
        model.store.set_values_exact(params);
        Ok(model)
    }

    pub fn spec(&self) -> &ClipModelSpec {
        &self.spec
    }

    pub fn head_name(&self) -> &'static str {
        self.head.name()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Zeroes the classifier layer, making every prediction uniform.
    pub fn zero_classifier(&mut self) {
        self.store.get_mut(self.classifier.0).fill(0.0);
        self.store.get_mut(self.classifier.1).fill(0.0);
    }

    fn check_view(&self, shape: [usize; 4]) -> Result<()> {
        let [k, h, w, c] = shape;
        if k != self.spec.frames_per_view {
            return invalid(format!(
                "view has {k} frames, model expects {}",
                self.spec.frames_per_view
            ));
        }
        if [h, w, c] != self.spec.frame_shape {
            return invalid(format!(
                "frame shape {:?} does not match model {:?}",
                [h, w, c],
                self.spec.frame_shape
            ));
        }
        Ok(())
    }

    /// Records the forward pass of `frames` (`[k, H, W, C]`) into `g`.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, frames: &[f32], shape: [usize; 4]) -> Result<ClipGraph> {
        self.check_view(shape)?;
        let x = g.leaf(Tensor::new(shape.to_vec(), frames.iter().map(|&v| v as f64 - 0.5).collect()));
        let e = &self.encoder;
        let h = g.conv2d(x, p[e.conv1.0], p[e.conv1.1], 2, 1);
        let h = g.relu(h);
        let h = g.conv2d(h, p[e.conv2.0], p[e.conv2.1], 2, 1);
        let h = g.relu(h);
        let (k, gh, gw, c) = g.value(h).dims4();
        let flat = match self.spec.pooling {
            SpatialPooling::Grid => g.reshape(h, vec![k, gh * gw * c]),
            SpatialPooling::Global => g.mean_spatial(h),
            SpatialPooling::Both => {
                let grid = g.reshape(h, vec![k, gh * gw * c]);
                let global = g.mean_spatial(h);
                g.concat_cols(&[grid, global])
            }
        };
        let z = g.matmul(flat, p[e.proj.0]);
        let z = g.add_bias(z, p[e.proj.1]);
        let per_frame = g.relu(z);
        self.head_graph(g, p, per_frame)
    }

    /// Head and classifier over precomputed per-frame embeddings `[k, D]`.
    pub fn head_graph(&self, g: &mut Graph, p: &Bound, per_frame: Var) -> Result<ClipGraph> {
        let out = self.head.forward(g, p, per_frame);
        let logits = g.matmul(out.pooled, p[self.classifier.0]);
        let logits = g.add_bias(logits, p[self.classifier.1]);
        Ok(ClipGraph {
            embedding: out.pooled,
            logits,
            sequence: out.sequence,
        })
    }

    pub fn forward_frames(&self, frames: &[f32], shape: [usize; 4]) -> Result<EmbeddingOutput> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let out = self.forward_graph(&mut g, &p, frames, shape)?;
        Ok(EmbeddingOutput {
            embedding: g.value(out.embedding).data.clone(),
            logits: g.value(out.logits).data.clone(),
        })
    }

    pub fn forward_clip(&self, view: &FrameView) -> Result<EmbeddingOutput> {
        self.forward_frames(&view.frames, view.shape)
    }

    pub fn predict_frames(&self, frames: &[f32], shape: [usize; 4]) -> Result<Prediction> {
        let out = self.forward_frames(frames, shape)?;
        Prediction::from_probs(softmax(&out.logits)?)
    }

    /// Prediction on the canonical uniform view of `clip`.
    pub fn predict(&self, clip: &VideoClip) -> Result<Prediction> {
        let view = clip.view(&uniform_sample(clip.len(), self.spec.frames_per_view)?)?;
        self.predict_frames(&view.frames, view.shape)
    }

    /// Per-step head features of a per-frame embedding sequence `[k, D]`.
    pub fn head_sequence(&self, per_frame: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.leaf(per_frame.clone());
        let out = self.head_graph(&mut g, &p, x)?;
        Ok(g.value(out.sequence).data.clone())
    }

    pub fn head_logits(&self, per_frame: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.leaf(per_frame.clone());
        let out = self.head_graph(&mut g, &p, x)?;
        Ok(g.value(out.logits).data.clone())
    }
}

impl Clone for ClipClassifier {
    fn clone(&self) -> Self {
        Self::with_parameters(&self.spec, self.store.values()).expect("spec was validated at construction")
    }
}

impl std::fmt::Debug for ClipClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClipClassifier")
            .field("head", &self.head.name())
            .field("parameters", &self.store.len())
            .finish()
    }
}
