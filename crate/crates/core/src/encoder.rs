//! Shared 3D-conv backbone and the projection transforms.
//!
//! One parameter set encodes all three streams (clip, static frame, frame
//! difference); a separate-backbone mode exists behind the config for
//! ablations. Each stage is conv3d -> bias -> relu; the feature vector is the
//! global average pool of the final feature map. The projection sigma is the
//! identity by default, with an optional two-layer MLP per stream.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::ParallelFor;
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::video::{DiffClip, VideoClip};

/// Backbone selector. Only the tiny 3D-conv net is implemented; other tags
/// exist as plug points for heavier backbones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderVariant {
    Tiny3dConv,
    Pluggable(String),
}

/// Projection transform applied to the pooled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaConfig {
    Identity,
    /// Two-layer MLP with the given hidden width; independent parameters per
    /// stream.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub in_channels: usize,
    /// Channel width after each stage; the last entry is the feature dim C.
    pub widths: Vec<usize>,
    pub strides: Vec<[usize; 3]>,
    pub kernels: Vec<[usize; 3]>,
    pub shared_backbone: bool,
    pub sigma: SigmaConfig,
    /// Parameter-free RMS normalization over channels after the last stage.
    /// Pins the feature scale; without it the cosine-based losses leave the
    /// scale free to drift and the reconstruction loss chases it.
    pub final_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Tiny3dConv,
            in_channels: 3,
            widths: alloc::vec![12, 24, 48, 128],
            strides: alloc::vec![[1, 2, 2], [2, 2, 2], [2, 2, 2], [1, 2, 2]],
            kernels: alloc::vec![[3, 3, 3]; 4],
            shared_backbone: true,
            sigma: SigmaConfig::Identity,
            final_norm: true,
        }
    }
}

impl EncoderConfig {
    /// Output feature dimension C.
    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    /// Cumulative stride along (T, H, W).
    pub fn total_stride(&self) -> [usize; 3] {
        let mut s = [1, 1, 1];
        for st in &self.strides {
            for i in 0..3 {
                s[i] *= st[i];
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        match &self.variant {
            EncoderVariant::Tiny3dConv => {}
            EncoderVariant::Pluggable(name) => {
                return Err(Error::Unsupported(format!(
                    "backbone preset '{name}' is a plug point; only tiny3dconv is built in"
                )))
            }
        }
        if self.widths.is_empty() || self.widths.len() != self.strides.len() || self.widths.len() != self.kernels.len() {
            return Err(Error::InvalidInput(
                "encoder widths/strides/kernels must be non-empty and equal length".into(),
            ));
        }
        if self.feature_dim() < 8 {
            return Err(Error::InvalidInput(format!(
                "feature dim C must be >= 8, got {}",
                self.feature_dim()
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::InvalidInput("in_channels must be >= 1".into()));
        }
        if let SigmaConfig::Mlp { hidden } = self.sigma {
            if hidden == 0 {
                return Err(Error::InvalidInput("sigma MLP hidden width must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Check an input shape against the stride plan.
    pub fn check_input(&self, t: usize, h: usize, w: usize, ch: usize) -> Result<()> {
        if ch != self.in_channels {
            return Err(Error::InvalidInput(format!(
                "input has {ch} channels, encoder expects {}",
                self.in_channels
            )));
        }
        let s = self.total_stride();
        for (name, extent, stride) in [("T", t, s[0]), ("H", h, s[1]), ("W", w, s[2])] {
            if extent == 0 || extent % stride != 0 {
                return Err(Error::InvalidInput(format!(
                    "input {name}={extent} is not divisible by total stride {stride}"
                )));
            }
        }
        Ok(())
    }
}

/// Store indices of one backbone's stage parameters.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    /// (weight, bias) per stage.
    pub stages: Vec<(usize, usize)>,
}

/// Store indices of one sigma MLP (absent for the identity).
#[derive(Debug, Clone)]
pub struct SigmaParams {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Ordered, name-addressed parameter registry shared by the whole model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(String::from(name));
        self.tensors.push(tensor);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Enter every parameter as a graph leaf, in registry order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }
}

/// Kaiming-style init for a conv stage stack.
pub fn init_encoder(cfg: &EncoderConfig, store: &mut ParamStore, prefix: &str, rng: &mut Rng) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut stages = Vec::new();
    let mut ci = cfg.in_channels;
    for (i, (&co, k)) in cfg.widths.iter().zip(&cfg.kernels).enumerate() {
        let fan_in = (ci * k[0] * k[1] * k[2]) as f64;
        let std = libm::sqrt(2.0 / fan_in);
        let w = Tensor::randn(&[co, ci, k[0], k[1], k[2]], std, rng);
        let b = Tensor::zeros(&[co]);
        let wi = store.push(&format!("{prefix}.stage{i}.weight"), w);
        let bi = store.push(&format!("{prefix}.stage{i}.bias"), b);
        stages.push((wi, bi));
        ci = co;
    }
    Ok(EncoderParams { stages })
}

pub fn init_sigma(cfg: &EncoderConfig, store: &mut ParamStore, prefix: &str, rng: &mut Rng) -> Option<SigmaParams> {
    match cfg.sigma {
        SigmaConfig::Identity => None,
        SigmaConfig::Mlp { hidden } => {
            let c = cfg.feature_dim();
            let s1 = libm::sqrt(2.0 / c as f64);
            let s2 = libm::sqrt(2.0 / hidden as f64);
            Some(SigmaParams {
                w1: store.push(&format!("{prefix}.w1"), Tensor::randn(&[c, hidden], s1, rng)),
                b1: store.push(&format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
                w2: store.push(&format!("{prefix}.w2"), Tensor::randn(&[hidden, c], s2, rng)),
                b2: store.push(&format!("{prefix}.b2"), Tensor::zeros(&[c])),
            })
        }
    }
}

/// Backbone forward on the graph. `x` is `[B, Ch, T, H, W]`; returns the
/// final feature map node and the pooled feature vector node (`[B, C]`,
/// the per-channel mean over every T'`·`H'`·`W' position).
pub fn encode_nodes(
    g: &mut Graph,
    exec: &dyn ParallelFor,
    cfg: &EncoderConfig,
    params: &EncoderParams,
    bound: &[NodeId],
    x: NodeId,
) -> (NodeId, NodeId) {
    let mut cur = x;
    for (i, &(wi, bi)) in params.stages.iter().enumerate() {
        let kernel = cfg.kernels[i];
        let pad = [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2];
        cur = g.conv3d(exec, cur, bound[wi], cfg.strides[i], pad);
        cur = g.bias_chan(cur, bound[bi]);
        cur = g.relu(cur);
    }
    if cfg.final_norm {
        cur = g.rms_norm_chan(cur);
    }
    let pooled = g.gap(cur);
    (cur, pooled)
}

/// Projection sigma on the graph: identity or two-layer MLP.
pub fn project_nodes(
    g: &mut Graph,
    sigma: &Option<SigmaParams>,
    bound: &[NodeId],
    vec: NodeId,
) -> NodeId {
    match sigma {
        None => vec,
        Some(p) => {
            let h = g.matmul(vec, bound[p.w1]);
            let h = g.add_row_vec(h, bound[p.b1]);
            let h = g.relu(h);
            let o = g.matmul(h, bound[p.w2]);
            g.add_row_vec(o, bound[p.b2])
        }
    }
}

/// Convert a clip to a channels-first input tensor `[Ch, T, H, W]`.
pub fn clip_to_tensor(c: &VideoClip) -> Tensor {
    let mut out = Tensor::zeros(&[c.ch, c.t, c.h, c.w]);
    let data = out.data_mut();
    for t in 0..c.t {
        for y in 0..c.h {
            for x in 0..c.w {
                for ch in 0..c.ch {
                    data[((ch * c.t + t) * c.h + y) * c.w + x] = c.at(t, y, x, ch) as f64;
                }
            }
        }
    }
    out
}

/// Same conversion for a frame-difference clip.
pub fn diff_to_tensor(d: &DiffClip) -> Tensor {
    let mut out = Tensor::zeros(&[d.ch, d.t, d.h, d.w]);
    let data = out.data_mut();
    let (h, w, ch) = (d.h, d.w, d.ch);
    for t in 0..d.t {
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    data[((c * d.t + t) * h + y) * w + x] =
                        d.pixels[((t * h + y) * w + x) * ch + c] as f64;
                }
            }
        }
    }
    out
}

/// One-shot single-input encode outside any training graph.  Returns the
/// feature map `[C, T', H', W']` and the pooled vector `[C]`.
pub fn encode(
    exec: &dyn ParallelFor,
    cfg: &EncoderConfig,
    params: &EncoderParams,
    store: &ParamStore,
    input: Tensor,
) -> Result<(Tensor, Tensor)> {
    let shape = input.shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::InvalidInput("encode expects a [Ch,T,H,W] input".into()));
    }
    cfg.check_input(shape[1], shape[2], shape[3], shape[0])?;
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let x = g.leaf(input.reshaped(&[1, shape[0], shape[1], shape[2], shape[3]]));
    let (fmap, vecn) = encode_nodes(&mut g, exec, cfg, params, &bound, x);
    let fshape = g.value(fmap).shape().to_vec();
    let fmap_t = g.value(fmap).clone().reshaped(&fshape[1..]);
    let vec_t = g.value(vecn).clone().reshaped(&[cfg.feature_dim()]);
    Ok((fmap_t, vec_t))
}
