//! The embedding network: three feature-extraction branches, three
//! individual embedding heads, a joint branch (transformer or dense), and the
//! downstream recognizer head.

use ndarray::{s, Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{Modality, ModalitySample, ShapeConfig};
use crate::error::{AvtError, Result};
use crate::nn::attention::TransformerEncoderBlock;
use crate::nn::conv::{Conv1d, Conv2d};
use crate::nn::dense::Dense;
use crate::nn::norm::{BatchNorm1d, L2Normalize};
use crate::nn::pool::{GlobalAvgPool1d, GlobalAvgPool2d, MaxPool2d};
use crate::nn::{Act, Module, Param};

/// Architecture hyperparameters. `full()` is the documented default;
/// `toy()` shrinks the image stacks so the smoke experiments stay fast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvtNetConfig {
    pub shapes: ShapeConfig,
    pub audio_filters: usize,
    pub audio_kernel: usize,
    pub image_filters: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub transformer_heads: usize,
    pub transformer_ff: usize,
    pub transformer_width: usize,
    pub recognizer_dense: (usize, usize),
    pub n_classes: u32,
}

impl AvtNetConfig {
    pub fn full(n_classes: u32) -> Self {
        Self {
            shapes: ShapeConfig::full(),
            audio_filters: 64,
            audio_kernel: 11,
            image_filters: 128,
            feature_dim: 64,
            embed_dim: 256,
            transformer_heads: 4,
            transformer_ff: 400,
            transformer_width: 64,
            recognizer_dense: (512, 256),
            n_classes,
        }
    }

    pub fn toy(n_classes: u32) -> Self {
        Self {
            shapes: ShapeConfig::toy(),
            audio_filters: 16,
            image_filters: 8,
            ..Self::full(n_classes)
        }
    }
}

/// The four unit-norm embeddings of one sample.
#[derive(Debug, Clone)]
pub struct EmbeddingBundle {
    pub e_s: Vec<f64>,
    pub e_c: Vec<f64>,
    pub e_t: Vec<f64>,
    pub e_j: Vec<f64>,
}

/// Batched network inputs in channel-first layout.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub audio: Array3<f64>,   // (k, n_mels, t)
    pub visible: Array4<f64>, // (k, 3, h, w)
    pub thermal: Array4<f64>, // (k, 1, h, w)
    pub labels: Vec<u32>,
    pub b_audio: Vec<bool>,
    pub b_visible: Vec<bool>,
    pub b_thermal: Vec<bool>,
}

impl BatchInputs {
    pub fn from_samples(samples: &[&ModalitySample]) -> Result<Self> {
        let k = samples.len();
        if k == 0 {
            return Err(AvtError::invalid("empty batch"));
        }
        let (n_mels, t) = samples[0].spectrogram.dim();
        let (h, w, _) = samples[0].visible.dim();
        let mut audio = Array3::zeros((k, n_mels, t));
        let mut visible = Array4::zeros((k, 3, h, w));
        let mut thermal = Array4::zeros((k, 1, h, w));
        let mut labels = Vec::with_capacity(k);
        let (mut ba, mut bv, mut bt) = (Vec::new(), Vec::new(), Vec::new());
        for (i, sm) in samples.iter().enumerate() {
            if sm.spectrogram.dim() != (n_mels, t) || sm.visible.dim() != (h, w, 3) {
                return Err(AvtError::shape(
                    "uniform tensor shapes across the batch",
                    format!("sample {}", sm.sample_id),
                ));
            }
            audio.slice_mut(s![i, .., ..]).assign(&sm.spectrogram);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        visible[[i, c, y, x]] = sm.visible[[y, x, c]];
                    }
                    thermal[[i, 0, y, x]] = sm.thermal[[y, x, 0]];
                }
            }
            labels.push(sm.subject_id);
            ba.push(sm.validity.audio);
            bv.push(sm.validity.visible);
            bt.push(sm.validity.thermal);
        }
        Ok(Self {
            audio,
            visible,
            thermal,
            labels,
            b_audio: ba,
            b_visible: bv,
            b_thermal: bt,
        })
    }

    pub fn validity(&self, m: Modality) -> &[bool] {
        match m {
            Modality::Audio => &self.b_audio,
            Modality::Visible => &self.b_visible,
            Modality::Thermal => &self.b_thermal,
        }
    }
}

/// Three Conv1D layers over the time axis (mel bands as channels) followed by
/// global average pooling.
#[derive(Debug, Clone)]
pub struct AudioBranch {
    convs: Vec<Conv1d>,
    gap: GlobalAvgPool1d,
}

impl AudioBranch {
    pub(crate) fn new(rng: &mut ChaCha8Rng, cfg: &AvtNetConfig) -> Self {
        let f = cfg.audio_filters;
        let k = cfg.audio_kernel;
        let convs = vec![
            Conv1d::new(rng, cfg.shapes.n_mels, f, k, Act::Relu),
            Conv1d::new(rng, f, f, k, Act::Relu),
            Conv1d::new(rng, f, cfg.feature_dim, k, Act::Relu),
        ];
        Self {
            convs,
            gap: GlobalAvgPool1d::default(),
        }
    }

    pub fn forward(&mut self, x: &Array3<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for c in &mut self.convs {
            h = c.forward(&h);
        }
        self.gap.forward(&h)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) {
        let mut dh = self.gap.backward(dy);
        for c in self.convs.iter_mut().rev() {
            dh = c.backward(&dh);
        }
    }
}

impl Module for AudioBranch {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params(&format!("{prefix}conv{i}."), f);
        }
    }
}

/// Three Conv2D + 2×2 max-pool stages, a 1×1 Conv2D down to the feature
/// width, then global average pooling.
#[derive(Debug, Clone)]
pub struct ImageBranch {
    convs: Vec<Conv2d>,
    pools: Vec<MaxPool2d>,
    conv1x1: Conv2d,
    gap: GlobalAvgPool2d,
}

impl ImageBranch {
    pub(crate) fn new(rng: &mut ChaCha8Rng, cfg: &AvtNetConfig, in_channels: usize) -> Self {
        let f = cfg.image_filters;
        let convs = vec![
            Conv2d::new(rng, in_channels, f, 3, 3, Act::Relu),
            Conv2d::new(rng, f, f, 3, 3, Act::Relu),
            Conv2d::new(rng, f, f, 3, 3, Act::Relu),
        ];
        let pools = vec![MaxPool2d::new(), MaxPool2d::new(), MaxPool2d::new()];
        let conv1x1 = Conv2d::new(rng, f, cfg.feature_dim, 1, 1, Act::Relu);
        Self {
            convs,
            pools,
            conv1x1,
            gap: GlobalAvgPool2d::default(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (c, p) in self.convs.iter_mut().zip(self.pools.iter_mut()) {
            h = p.forward(&c.forward(&h));
        }
        let h = self.conv1x1.forward(&h);
        self.gap.forward(&h)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) {
        let dh = self.gap.backward(dy);
        let mut dh = self.conv1x1.backward(&dh);
        for (c, p) in self.convs.iter_mut().zip(self.pools.iter_mut()).rev() {
            dh = c.backward(&p.backward(&dh));
        }
    }
}

impl Module for ImageBranch {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params(&format!("{prefix}conv{i}."), f);
        }
        self.conv1x1.visit_params(&format!("{prefix}conv1x1."), f);
    }
}

/// Two dense layers (ReLU then linear) and L2 normalization.
#[derive(Debug, Clone)]
pub struct EmbedHead {
    d1: Dense,
    d2: Dense,
    l2: L2Normalize,
}

impl EmbedHead {
    fn new(rng: &mut ChaCha8Rng, d_in: usize, embed_dim: usize) -> Self {
        Self {
            d1: Dense::new(rng, d_in, embed_dim, Act::Relu),
            d2: Dense::new(rng, embed_dim, embed_dim, Act::Linear),
            l2: L2Normalize::new(),
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        self.l2.forward(&self.d2.forward(&self.d1.forward(x)))
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        self.d1.backward(&self.d2.backward(&self.l2.backward(dy)))
    }
}

impl Module for EmbedHead {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.d1.visit_params(&format!("{prefix}d1."), f);
        self.d2.visit_params(&format!("{prefix}d2."), f);
    }
}

/// Joint-branch structure: transformer over modality tokens or a plain dense
/// stack over the concatenated features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointKind {
    Transformer,
    Dense,
}

#[derive(Debug, Clone)]
enum JointBranch {
    Transformer {
        proj: Dense, // shared per-token projection to the model width
        block: TransformerEncoderBlock,
        head: EmbedHead,
        n_tokens: usize,
    },
    Dense {
        d1: Dense,
        d2: Dense,
        d3: Dense,
        l2: L2Normalize,
        n_tokens: usize,
    },
}

impl JointBranch {
    fn new(rng: &mut ChaCha8Rng, cfg: &AvtNetConfig, kind: JointKind, n_tokens: usize) -> Self {
        match kind {
            JointKind::Transformer => {
                let width = cfg.transformer_width;
                JointBranch::Transformer {
                    proj: Dense::new(rng, cfg.feature_dim, width, Act::Linear),
                    block: TransformerEncoderBlock::new(
                        rng,
                        width,
                        cfg.transformer_heads,
                        cfg.transformer_ff,
                    ),
                    head: EmbedHead::new(rng, n_tokens * width, cfg.embed_dim),
                    n_tokens,
                }
            }
            JointKind::Dense => {
                let d_in = n_tokens * cfg.feature_dim;
                JointBranch::Dense {
                    d1: Dense::new(rng, d_in, cfg.embed_dim, Act::Relu),
                    d2: Dense::new(rng, cfg.embed_dim, cfg.embed_dim, Act::Relu),
                    d3: Dense::new(rng, cfg.embed_dim, cfg.embed_dim, Act::Linear),
                    l2: L2Normalize::new(),
                    n_tokens,
                }
            }
        }
    }

    /// `features` holds one (k, feature_dim) matrix per present modality.
    fn forward(&mut self, features: &[&Array2<f64>]) -> Array2<f64> {
        match self {
            JointBranch::Transformer {
                proj,
                block,
                head,
                n_tokens,
            } => {
                let k = features[0].nrows();
                let d = features[0].ncols();
                assert_eq!(features.len(), *n_tokens);
                // stack tokens: (k * s, d) with sample-major order
                let mut stacked = Array2::zeros((k * features.len(), d));
                for (ti, f) in features.iter().enumerate() {
                    for i in 0..k {
                        stacked.row_mut(i * features.len() + ti).assign(&f.row(i));
                    }
                }
                let projected = proj.forward(&stacked);
                let width = projected.ncols();
                let tokens = projected
                    .into_shape_with_order((k, features.len(), width))
                    .unwrap();
                let out = block.forward(&tokens);
                let flat = out.into_shape_with_order((k, features.len() * width)).unwrap();
                head.forward(&flat)
            }
            JointBranch::Dense { d1, d2, d3, l2, .. } => {
                let concat = concat_cols(features);
                l2.forward(&d3.forward(&d2.forward(&d1.forward(&concat))))
            }
        }
    }

    /// Returns one gradient matrix per input feature, in the same order.
    fn backward(&mut self, dy: &Array2<f64>) -> Vec<Array2<f64>> {
        match self {
            JointBranch::Transformer {
                proj,
                block,
                head,
                n_tokens,
            } => {
                let k = dy.nrows();
                let dflat = head.backward(dy);
                let width = dflat.ncols() / *n_tokens;
                let dtokens = dflat.into_shape_with_order((k, *n_tokens, width)).unwrap();
                let dtokens = block.backward(&dtokens);
                let dstacked = dtokens
                    .into_shape_with_order((k * *n_tokens, width))
                    .unwrap();
                let dproj = proj.backward(&dstacked);
                let d = dproj.ncols();
                let mut out = vec![Array2::zeros((k, d)); *n_tokens];
                for ti in 0..*n_tokens {
                    for i in 0..k {
                        out[ti].row_mut(i).assign(&dproj.row(i * *n_tokens + ti));
                    }
                }
                out
            }
            JointBranch::Dense {
                d1,
                d2,
                d3,
                l2,
                n_tokens,
            } => {
                let dconcat = d1.backward(&d2.backward(&d3.backward(&l2.backward(dy))));
                let width = dconcat.ncols() / *n_tokens;
                (0..*n_tokens)
                    .map(|ti| {
                        dconcat
                            .slice(s![.., ti * width..(ti + 1) * width])
                            .to_owned()
                    })
                    .collect()
            }
        }
    }

    fn attention(&self) -> Option<&ndarray::Array4<f64>> {
        match self {
            JointBranch::Transformer { block, .. } => block.attention(),
            JointBranch::Dense { .. } => None,
        }
    }
}

fn concat_cols(parts: &[&Array2<f64>]) -> Array2<f64> {
    let k = parts[0].nrows();
    let total: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Array2::zeros((k, total));
    let mut off = 0;
    for p in parts {
        out.slice_mut(s![.., off..off + p.ncols()]).assign(p);
        off += p.ncols();
    }
    out
}

/// Batched embedding outputs; rows align with the input batch.
#[derive(Debug, Clone)]
pub struct EmbeddingOutputs {
    pub e_s: Option<Array2<f64>>,
    pub e_c: Option<Array2<f64>>,
    pub e_t: Option<Array2<f64>>,
    pub e_j: Array2<f64>,
}

/// Which structural pieces an [`AvtNet`] instance carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvtNetStructure {
    pub modalities: [bool; 3], // audio, visible, thermal
    pub individual_embeddings: bool,
    pub joint: JointKind,
}

impl Default for AvtNetStructure {
    fn default() -> Self {
        Self {
            modalities: [true, true, true],
            individual_embeddings: true,
            joint: JointKind::Transformer,
        }
    }
}

/// The embedding network.
pub struct AvtNet {
    pub config: AvtNetConfig,
    pub structure: AvtNetStructure,
    audio: Option<AudioBranch>,
    visible: Option<ImageBranch>,
    thermal: Option<ImageBranch>,
    embed_audio: Option<EmbedHead>,
    embed_visible: Option<EmbedHead>,
    embed_thermal: Option<EmbedHead>,
    joint: JointBranch,
    // caches for backward
    cache_features: Option<Vec<Array2<f64>>>,
}

impl AvtNet {
    pub fn new(config: AvtNetConfig, structure: AvtNetStructure, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_tokens = structure.modalities.iter().filter(|&&m| m).count();
        assert!(n_tokens >= 2, "need at least two modalities");
        let mk_embed = |rng: &mut ChaCha8Rng, on: bool, cfg: &AvtNetConfig| {
            (on && structure.individual_embeddings)
                .then(|| EmbedHead::new(rng, cfg.feature_dim, cfg.embed_dim))
        };
        let audio = structure.modalities[0].then(|| AudioBranch::new(&mut rng, &config));
        let visible = structure.modalities[1].then(|| ImageBranch::new(&mut rng, &config, 3));
        let thermal = structure.modalities[2].then(|| ImageBranch::new(&mut rng, &config, 1));
        let embed_audio = mk_embed(&mut rng, structure.modalities[0], &config);
        let embed_visible = mk_embed(&mut rng, structure.modalities[1], &config);
        let embed_thermal = mk_embed(&mut rng, structure.modalities[2], &config);
        let joint = JointBranch::new(&mut rng, &config, structure.joint, n_tokens);
        Self {
            config,
            structure,
            audio,
            visible,
            thermal,
            embed_audio,
            embed_visible,
            embed_thermal,
            joint,
            cache_features: None,
        }
    }

    /// Number of 256-wide embeddings feeding the recognizer.
    pub fn n_embeddings(&self) -> usize {
        let individual = if self.structure.individual_embeddings {
            self.structure.modalities.iter().filter(|&&m| m).count()
        } else {
            0
        };
        individual + 1
    }

    /// Forward the whole batch through every branch. Missing modalities enter
    /// as their zero tensors and land on the shared per-modality latent point.
    pub fn forward(&mut self, inputs: &BatchInputs) -> EmbeddingOutputs {
        let mut features: Vec<Array2<f64>> = Vec::new();
        let s_e = self.audio.as_mut().map(|b| b.forward(&inputs.audio));
        let c_e = self.visible.as_mut().map(|b| b.forward(&inputs.visible));
        let t_e = self.thermal.as_mut().map(|b| b.forward(&inputs.thermal));
        for f in [&s_e, &c_e, &t_e].into_iter().flatten() {
            features.push(f.clone());
        }
        let e_s = match (&mut self.embed_audio, &s_e) {
            (Some(h), Some(f)) => Some(h.forward(f)),
            _ => None,
        };
        let e_c = match (&mut self.embed_visible, &c_e) {
            (Some(h), Some(f)) => Some(h.forward(f)),
            _ => None,
        };
        let e_t = match (&mut self.embed_thermal, &t_e) {
            (Some(h), Some(f)) => Some(h.forward(f)),
            _ => None,
        };
        let refs: Vec<&Array2<f64>> = features.iter().collect();
        let e_j = self.joint.forward(&refs);
        self.cache_features = Some(features);
        EmbeddingOutputs { e_s, e_c, e_t, e_j }
    }

    /// Backpropagate embedding gradients (same optional structure as the
    /// forward outputs) into all parameters.
    pub fn backward(
        &mut self,
        d_e_s: Option<&Array2<f64>>,
        d_e_c: Option<&Array2<f64>>,
        d_e_t: Option<&Array2<f64>>,
        d_e_j: &Array2<f64>,
    ) {
        let features = self
            .cache_features
            .take()
            .expect("forward before backward");
        let mut dfeatures: Vec<Array2<f64>> = self.joint.backward(d_e_j);
        debug_assert_eq!(dfeatures.len(), features.len());

        let mut idx = 0;
        if self.audio.is_some() {
            if let (Some(h), Some(d)) = (&mut self.embed_audio, d_e_s) {
                dfeatures[idx] = &dfeatures[idx] + &h.backward(d);
            }
            idx += 1;
        }
        if self.visible.is_some() {
            if let (Some(h), Some(d)) = (&mut self.embed_visible, d_e_c) {
                dfeatures[idx] = &dfeatures[idx] + &h.backward(d);
            }
            idx += 1;
        }
        if self.thermal.is_some() {
            if let (Some(h), Some(d)) = (&mut self.embed_thermal, d_e_t) {
                dfeatures[idx] = &dfeatures[idx] + &h.backward(d);
            }
        }

        let mut it = dfeatures.into_iter();
        if let Some(b) = self.audio.as_mut() {
            b.backward(&it.next().unwrap());
        }
        if let Some(b) = self.visible.as_mut() {
            b.backward(&it.next().unwrap());
        }
        if let Some(b) = self.thermal.as_mut() {
            b.backward(&it.next().unwrap());
        }
    }

    /// Raw per-modality features of the last forward pass (for E2E-style
    /// consumers and tests).
    pub fn last_features(&self) -> Option<&Vec<Array2<f64>>> {
        self.cache_features.as_ref()
    }

    /// Attention weights of the last forward pass when the joint branch is a
    /// transformer: (batch, heads, tokens, tokens).
    pub fn last_attention(&self) -> Option<&ndarray::Array4<f64>> {
        self.joint.attention()
    }

    /// Per-sample bundles from batched outputs; absent individual embeddings
    /// are zero vectors (Prop-III / JER variants).
    pub fn bundles(&self, out: &EmbeddingOutputs) -> Vec<EmbeddingBundle> {
        let k = out.e_j.nrows();
        let dim = self.config.embed_dim;
        (0..k)
            .map(|i| {
                let pull = |m: &Option<Array2<f64>>| -> Vec<f64> {
                    m.as_ref()
                        .map(|a| a.row(i).to_vec())
                        .unwrap_or_else(|| vec![0.0; dim])
                };
                EmbeddingBundle {
                    e_s: pull(&out.e_s),
                    e_c: pull(&out.e_c),
                    e_t: pull(&out.e_t),
                    e_j: out.e_j.row(i).to_vec(),
                }
            })
            .collect()
    }
}

impl Module for AvtNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        if let Some(b) = self.audio.as_mut() {
            b.visit_params(&format!("{prefix}audio."), f);
        }
        if let Some(b) = self.visible.as_mut() {
            b.visit_params(&format!("{prefix}visible."), f);
        }
        if let Some(b) = self.thermal.as_mut() {
            b.visit_params(&format!("{prefix}thermal."), f);
        }
        for (name, h) in [
            ("embed_audio", &mut self.embed_audio),
            ("embed_visible", &mut self.embed_visible),
            ("embed_thermal", &mut self.embed_thermal),
        ] {
            if let Some(h) = h.as_mut() {
                h.visit_params(&format!("{prefix}{name}."), f);
            }
        }
        match &mut self.joint {
            JointBranch::Transformer {
                proj, block, head, ..
            } => {
                proj.visit_params(&format!("{prefix}joint.proj."), f);
                block.visit_params(&format!("{prefix}joint.block."), f);
                head.visit_params(&format!("{prefix}joint.head."), f);
            }
            JointBranch::Dense { d1, d2, d3, .. } => {
                d1.visit_params(&format!("{prefix}joint.d1."), f);
                d2.visit_params(&format!("{prefix}joint.d2."), f);
                d3.visit_params(&format!("{prefix}joint.d3."), f);
            }
        }
    }
}

/// Dense → batch-norm → ReLU stage of the recognizer.
#[derive(Debug, Clone)]
struct DenseBnRelu {
    dense: Dense,
    bn: BatchNorm1d,
    cache_bn_out: Option<Array2<f64>>,
}

impl DenseBnRelu {
    fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Self {
            dense: Dense::new(rng, d_in, d_out, Act::Linear),
            bn: BatchNorm1d::new(d_out),
            cache_bn_out: None,
        }
    }

    fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let h = self.bn.forward(&self.dense.forward(x));
        let out = h.mapv(|v| v.max(0.0));
        self.cache_bn_out = Some(h);
        out
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let h = self.cache_bn_out.as_ref().unwrap();
        let mut d = dy.clone();
        ndarray::Zip::from(&mut d).and(h).for_each(|d, &v| {
            if v <= 0.0 {
                *d = 0.0;
            }
        });
        self.dense.backward(&self.bn.backward(&d))
    }
}

impl Module for DenseBnRelu {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.dense.visit_params(&format!("{prefix}dense."), f);
        self.bn.visit_params(&format!("{prefix}bn."), f);
    }
}

/// The recognition head: two dense+BN+ReLU stages and a softmax output layer.
pub struct Recognizer {
    l1: DenseBnRelu,
    l2: DenseBnRelu,
    out: Dense,
    pub d_in: usize,
}

impl Recognizer {
    pub fn new(seed: u64, d_in: usize, hidden: (usize, usize), n_classes: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            l1: DenseBnRelu::new(&mut rng, d_in, hidden.0),
            l2: DenseBnRelu::new(&mut rng, hidden.0, hidden.1),
            out: Dense::new(&mut rng, hidden.1, n_classes as usize, Act::Linear),
            d_in,
        }
    }

    pub fn set_training(&mut self, training: bool) {
        self.l1.bn.training = training;
        self.l2.bn.training = training;
    }

    /// Logits; apply [`crate::nn::dense::softmax`] for probabilities.
    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d_in {
            return Err(AvtError::shape(
                format!("input width {}", self.d_in),
                format!("{}", x.ncols()),
            ));
        }
        Ok(self.out.forward(&self.l2.forward(&self.l1.forward(x))))
    }

    pub fn backward(&mut self, dlogits: &Array2<f64>) -> Array2<f64> {
        self.l1.backward(&self.l2.backward(&self.out.backward(dlogits)))
    }
}

impl Module for Recognizer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.l1.visit_params(&format!("{prefix}l1."), f);
        self.l2.visit_params(&format!("{prefix}l2."), f);
        self.out.visit_params(&format!("{prefix}out."), f);
    }
}

/// Write a model's parameters as one f64 `.npy` per parameter under
/// `dir/params/`, plus `meta.json` with the version tag and `extra`
/// (serialized config) so the model can be rebuilt before loading.
pub fn save_params(dir: &Path, module: &mut dyn Module, extra: serde_json::Value) -> Result<()> {
    let pdir = dir.join("params");
    std::fs::create_dir_all(&pdir)?;
    let mut err = None;
    module.visit_params("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        let path = pdir.join(format!("{name}.npy"));
        if let Err(e) = ndarray_npy::write_npy(&path, &p.w) {
            err = Some(AvtError::Npy(format!("{}: {e}", path.display())));
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let meta = serde_json::json!({ "format": "avtnet-checkpoint", "version": 1, "extra": extra });
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| AvtError::Serde(e.to_string()))?,
    )?;
    Ok(())
}

/// Load parameters saved by [`save_params`] into an already-constructed model.
pub fn load_params(dir: &Path, module: &mut dyn Module) -> Result<()> {
    let pdir = dir.join("params");
    let mut err = None;
    module.visit_params("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        let path = pdir.join(format!("{name}.npy"));
        match ndarray_npy::read_npy::<_, ndarray::ArrayD<f64>>(&path) {
            Ok(w) => {
                if w.shape() == p.w.shape() {
                    p.w = w;
                } else {
                    err = Some(AvtError::shape(
                        format!("{:?} for {name}", p.w.shape()),
                        format!("{:?}", w.shape()),
                    ));
                }
            }
            Err(e) => err = Some(AvtError::Npy(format!("{}: {e}", path.display()))),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Read the `extra` payload back from a checkpoint directory.
pub fn read_checkpoint_meta(dir: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| AvtError::Serde(e.to_string()))?;
    Ok(v["extra"].clone())
}
