//! The assembled concept model: shared backbone, projections, prototype
//! banks, reconstruction heads and attention, plus the batch loss graph.
//!
//! One `build_losses` call runs the whole forward pass for a triplet batch
//! and returns the four loss nodes. Batch-level discrete choices (Sinkhorn
//! targets, valid-index sets) and the gradient-stopped fidelity targets are
//! computed from the same forward values and recorded in `FrozenChoices`;
//! callers may pass them back in to pin the choices, which is how the
//! finite-difference and masked-run tests isolate the differentiable path.

use alloc::format;
use alloc::vec::Vec;

use crate::bottleneck::ReconstructionHead;
use crate::concepts::{
    compute_align_targets, AlignTargets, AlignmentConfig, PrototypeBank,
};
use crate::encoder::{
    clip_to_tensor, diff_to_tensor, encode_nodes, init_encoder, init_sigma, project_nodes,
    EncoderConfig, EncoderParams, ParamStore, SigmaParams,
};
use crate::error::{Error, Result};
use crate::exec::ParallelFor;
use crate::graph::{Graph, NodeId};
use crate::localcontrast::{
    cross_attend, cross_attend_nodes, select_valid_batch, AttentionMaps, AttentionParams,
    LocalContrastConfig, ValidIndexSet,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::video::{TripletInput, VideoClip};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub k_s: usize,
    pub k_d: usize,
    pub align: AlignmentConfig,
    /// Hidden width of the reconstruction heads; `None` means C.
    pub head_hidden: Option<usize>,
    pub local: LocalContrastConfig,
    /// Attention dim; `None` means C.
    pub attn_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            k_s: 50,
            k_d: 50,
            align: AlignmentConfig::default(),
            head_hidden: None,
            local: LocalContrastConfig::default(),
            attn_dim: None,
        }
    }
}

enum Backbone {
    Shared(EncoderParams),
    PerStream { s: EncoderParams, d: EncoderParams, v: EncoderParams },
}

pub struct ConceptModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    backbone: Backbone,
    sigma: [Option<SigmaParams>; 3],
    pub protos: PrototypeBank,
    pub heads: [ReconstructionHead; 3],
    pub attn: AttentionParams,
    prototype_indices: Vec<usize>,
}

/// Batch of channels-first stream tensors, each `[B,Ch,T,H,W]`.
pub struct BatchInputs {
    pub v: Tensor,
    pub s: Tensor,
    pub d: Tensor,
}

impl BatchInputs {
    /// Assemble from triplets.
    pub fn from_triplets(triplets: &[TripletInput]) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let stack = |pick: &dyn Fn(&TripletInput) -> Tensor| -> Result<Tensor> {
            let first = pick(&triplets[0]);
            let shape = first.shape().to_vec();
            let mut out = Tensor::zeros(
                &[triplets.len(), shape[0], shape[1], shape[2], shape[3]],
            );
            let stride: usize = shape.iter().product();
            for (i, t) in triplets.iter().enumerate() {
                let ti = pick(t);
                if ti.shape() != shape.as_slice() {
                    return Err(Error::InvalidInput("triplet members differ in shape".into()));
                }
                out.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(ti.data());
            }
            Ok(out)
        };
        Ok(BatchInputs {
            v: stack(&|t| clip_to_tensor(&t.v))?,
            s: stack(&|t| clip_to_tensor(&t.s))?,
            d: stack(&|t| diff_to_tensor(&t.d))?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.v.shape()[0]
    }
}

/// Batch-level choices that the gradient treats as constants.
#[derive(Debug, Clone)]
pub struct FrozenChoices {
    pub targets: AlignTargets,
    pub idx_s: Vec<ValidIndexSet>,
    pub idx_d: Vec<ValidIndexSet>,
    /// Gradient-stopped reconstruction targets for (s, d, v).
    pub fid_targets: [Tensor; 3],
}

/// The built batch graph with handles to everything tests and the trainer
/// need.
pub struct LossGraph {
    pub graph: Graph,
    pub bound: Vec<NodeId>,
    pub l_aln: NodeId,
    pub l_fid: NodeId,
    pub l_div: NodeId,
    /// Built whenever the batch has >= 1 sample; the trainer decides whether
    /// it enters the total (warmup keeps it out, which also zeroes its
    /// gradient contribution exactly).
    pub l_loc: NodeId,
    pub q_s: NodeId,
    pub q_d: NodeId,
    pub q_v: NodeId,
    pub vec_v: NodeId,
    pub frozen: FrozenChoices,
}

/// Greedy farthest-point selection over unit vectors (euclidean metric on
/// the sphere); deterministic, starts from the first candidate.
fn farthest_point_indices(cands: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut picked = alloc::vec![0usize];
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut min_d: Vec<f64> = cands.iter().map(|c| dist(c, &cands[0])).collect();
    while picked.len() < k {
        let (mut best, mut best_d) = (0usize, f64::NEG_INFINITY);
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d && !picked.contains(&i) {
                best = i;
                best_d = d;
            }
        }
        picked.push(best);
        for (i, c) in cands.iter().enumerate() {
            let d = dist(c, &cands[best]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    picked
}

/// Features of one clip used by the evaluation suite.
pub struct ClipFeatures {
    /// Pooled backbone vector, length C.
    pub v: Vec<f64>,
    /// Full concept code, length K_s + K_d.
    pub q_v: Vec<f64>,
    /// Aggregated local features `[K_s+K_d, C]`.
    pub f_v: Tensor,
    /// Attention maps over the clip's positions.
    pub maps: AttentionMaps,
    /// Feature-map extents (T', H', W').
    pub fmap_shape: [usize; 3],
}

impl ConceptModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.encoder.validate()?;
        cfg.align.validate()?;
        let c = cfg.encoder.feature_dim();
        if cfg.k_s + cfg.k_d >= c {
            return Err(Error::InvalidInput(format!(
                "bottleneck requires K_s+K_d < C, got {}+{} vs C={c}",
                cfg.k_s, cfg.k_d
            )));
        }
        cfg.local.validate(cfg.k_s, cfg.k_d)?;
        let mut store = ParamStore::new();
        let mut rng = Rng::derive(seed, 0x6d6f_6465);
        let backbone = if cfg.encoder.shared_backbone {
            Backbone::Shared(init_encoder(&cfg.encoder, &mut store, "enc", &mut rng)?)
        } else {
            Backbone::PerStream {
                s: init_encoder(&cfg.encoder, &mut store, "enc_s", &mut rng)?,
                d: init_encoder(&cfg.encoder, &mut store, "enc_d", &mut rng)?,
                v: init_encoder(&cfg.encoder, &mut store, "enc_v", &mut rng)?,
            }
        };
        // independent sigma instances per stream
        let sigma = [
            init_sigma(&cfg.encoder, &mut store, "sigma_s", &mut rng),
            init_sigma(&cfg.encoder, &mut store, "sigma_d", &mut rng),
            init_sigma(&cfg.encoder, &mut store, "sigma_v", &mut rng),
        ];
        let protos = crate::concepts::init_prototypes(cfg.k_s, cfg.k_d, c, &mut store, &mut rng)?;
        let hidden = cfg.head_hidden.unwrap_or(c);
        let heads = [
            ReconstructionHead::init("s", cfg.k_s, hidden, c, &mut store, &mut rng)?,
            ReconstructionHead::init("d", cfg.k_d, hidden, c, &mut store, &mut rng)?,
            ReconstructionHead::init("v", cfg.k_s + cfg.k_d, hidden, c, &mut store, &mut rng)?,
        ];
        let attn = AttentionParams::init(c, cfg.attn_dim.unwrap_or(c), &mut store, &mut rng)?;
        let prototype_indices = alloc::vec![protos.p_s, protos.p_d, protos.p_v];
        Ok(ConceptModel { cfg, store, backbone, sigma, protos, heads, attn, prototype_indices })
    }

    /// Weight decay is skipped for these (prototypes act through cosine
    /// similarity; shrinking their rows only degrades conditioning).
    pub fn is_prototype(&self, store_index: usize) -> bool {
        self.prototype_indices.contains(&store_index)
    }

    fn stream_params(&self, stream: usize) -> &EncoderParams {
        match &self.backbone {
            Backbone::Shared(p) => p,
            Backbone::PerStream { s, d, v } => match stream {
                0 => s,
                1 => d,
                _ => v,
            },
        }
    }

    /// Store indices of the backbone serving each stream (s, d, v); equal in
    /// shared mode.
    pub fn backbone_indices(&self) -> [Vec<usize>; 3] {
        let collect = |p: &EncoderParams| -> Vec<usize> {
            p.stages.iter().flat_map(|&(w, b)| [w, b]).collect()
        };
        [
            collect(self.stream_params(0)),
            collect(self.stream_params(1)),
            collect(self.stream_params(2)),
        ]
    }

    /// Forward the whole batch and build every loss node.
    pub fn build_losses(
        &self,
        exec: &dyn ParallelFor,
        inputs: &BatchInputs,
        frozen: Option<&FrozenChoices>,
    ) -> Result<LossGraph> {
        let shape = inputs.v.shape();
        self.cfg.encoder.check_input(shape[2], shape[3], shape[4], shape[1])?;
        if inputs.s.shape() != shape || inputs.d.shape() != shape {
            return Err(Error::InvalidInput("triplet streams must share shape".into()));
        }
        let mut g = Graph::new();
        let bound = self.store.bind(&mut g);

        // encode the three streams; shared mode reuses the same leaves
        let xs = g.leaf(inputs.s.clone());
        let xd = g.leaf(inputs.d.clone());
        let xv = g.leaf(inputs.v.clone());
        let (fmap_s, vec_s) =
            encode_nodes(&mut g, exec, &self.cfg.encoder, self.stream_params(0), &bound, xs);
        let (fmap_d, vec_d) =
            encode_nodes(&mut g, exec, &self.cfg.encoder, self.stream_params(1), &bound, xd);
        let (fmap_v, vec_v) =
            encode_nodes(&mut g, exec, &self.cfg.encoder, self.stream_params(2), &bound, xv);

        // concept codes from the projected vectors
        let proj_s = project_nodes(&mut g, &self.sigma[0], &bound, vec_s);
        let proj_d = project_nodes(&mut g, &self.sigma[1], &bound, vec_d);
        let proj_v = project_nodes(&mut g, &self.sigma[2], &bound, vec_v);
        let q_s = g.row_cosine(proj_s, bound[self.protos.p_s]);
        let q_d = g.row_cosine(proj_d, bound[self.protos.p_d]);
        let q_v = g.row_cosine(proj_v, bound[self.protos.p_v]);

        // batch-level constants: Sinkhorn targets, valid indexes, fidelity
        // targets - either frozen by the caller or computed here
        let frozen = match frozen {
            Some(f) => f.clone(),
            None => {
                let targets = compute_align_targets(
                    g.value(q_s),
                    g.value(q_d),
                    g.value(q_v),
                    self.cfg.k_s,
                    self.cfg.k_d,
                    &self.cfg.align,
                )?;
                let q_vs_vals = crate::graph::slice_cols_plain(g.value(q_v), 0, self.cfg.k_s);
                let q_vd_vals =
                    crate::graph::slice_cols_plain(g.value(q_v), self.cfg.k_s, self.cfg.k_d);
                let idx_s = select_valid_batch(g.value(q_s), &q_vs_vals, self.cfg.local.k_top)?;
                let idx_d = select_valid_batch(g.value(q_d), &q_vd_vals, self.cfg.local.k_top)?;
                FrozenChoices {
                    targets,
                    idx_s,
                    idx_d,
                    fid_targets: [
                        g.value(vec_s).clone(),
                        g.value(vec_d).clone(),
                        g.value(vec_v).clone(),
                    ],
                }
            }
        };

        let l_aln = crate::concepts::alignment_loss_nodes(
            &mut g,
            q_s,
            q_d,
            q_v,
            &frozen.targets,
            self.cfg.k_s,
            self.cfg.k_d,
            self.cfg.align.tau,
        );
        let l_div = crate::bottleneck::diversity_loss_nodes(&mut g, q_s, q_d, q_v);
        let l_fid = crate::bottleneck::fidelity_loss_nodes(
            &mut g,
            &bound,
            [q_s, q_d, q_v],
            [&frozen.fid_targets[0], &frozen.fid_targets[1], &frozen.fid_targets[2]],
            [&self.heads[0], &self.heads[1], &self.heads[2]],
        )?;

        // local contrast over cross-attended features
        let f_s = cross_attend_nodes(&mut g, &self.attn, &bound, bound[self.protos.p_s], fmap_s);
        let f_d = cross_attend_nodes(&mut g, &self.attn, &bound, bound[self.protos.p_d], fmap_d);
        let f_v = cross_attend_nodes(&mut g, &self.attn, &bound, bound[self.protos.p_v], fmap_v);
        let l_loc = crate::localcontrast::local_loss_total_nodes(
            &mut g,
            f_s,
            f_d,
            f_v,
            &frozen.idx_s,
            &frozen.idx_d,
            self.cfg.k_s,
            self.cfg.k_d,
            self.cfg.local.margin,
        );

        Ok(LossGraph { graph: g, bound, l_aln, l_fid, l_div, l_loc, q_s, q_d, q_v, vec_v, frozen })
    }

    /// Per-parameter gradients in store order after a backward pass.
    pub fn gradients(&self, lg: &LossGraph) -> Vec<Tensor> {
        lg.bound.iter().map(|&id| lg.graph.grad_or_zeros(id)).collect()
    }

    /// Inference features for one clip (no augmentation).
    pub fn infer_clip(&self, exec: &dyn ParallelFor, clip: &VideoClip) -> Result<ClipFeatures> {
        let input = clip_to_tensor(clip);
        let (fmap, vec) = crate::encoder::encode(
            exec,
            &self.cfg.encoder,
            self.stream_params(2),
            &self.store,
            input,
        )?;
        let proj = self.project_vec(2, vec.data());
        let q_v = crate::concepts::compute_code(&proj, self.store.get(self.protos.p_v))?;
        let (f_v, maps) =
            cross_attend(&self.store, &self.attn, self.store.get(self.protos.p_v), &fmap)?;
        let fmap_shape = [fmap.shape()[1], fmap.shape()[2], fmap.shape()[3]];
        Ok(ClipFeatures { v: vec.into_data(), q_v, f_v: f_v.values, maps, fmap_shape })
    }

    /// Re-seed the prototype banks from data: encode a spread of samples,
    /// collect the per-stream projected feature directions and pick each
    /// bank's rows by greedy farthest-point selection. At desk scale the
    /// Gaussian init leaves codes so uniform that the balanced-assignment
    /// targets degenerate and alignment can stall at its uniform fixed
    /// point; seeding from real directions gives every sample a salient
    /// concept from step one. Deterministic given the seed.
    pub fn init_prototypes_from_data(
        &mut self,
        exec: &dyn ParallelFor,
        source: &dyn crate::trainer::ClipSource,
        seed: u64,
    ) -> Result<()> {
        if source.is_empty() {
            return Err(Error::InvalidInput("prototype data init needs samples".into()));
        }
        let k_v = self.cfg.k_s + self.cfg.k_d;
        let want = (3 * k_v).min(source.len());
        let mut order: Vec<usize> = (0..source.len()).collect();
        Rng::derive(seed, 0x70_696e).shuffle(&mut order);
        let mut cands: [Vec<Vec<f64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for &i in order.iter().take(want) {
            let clip = source.clip(i)?;
            let codesrc = self.infer_stream_vectors(exec, &clip, seed ^ i as u64)?;
            for (s, v) in cands.iter_mut().zip(codesrc) {
                let n = crate::tensor::norm(&v);
                if n > 1e-9 {
                    s.push(v.iter().map(|x| x / n).collect());
                }
            }
        }
        for (bank, k, cand) in [
            (self.protos.p_s, self.cfg.k_s, &cands[0]),
            (self.protos.p_d, self.cfg.k_d, &cands[1]),
            (self.protos.p_v, k_v, &cands[2]),
        ] {
            if cand.len() < k {
                return Err(Error::DegenerateInput(
                    "too few non-degenerate feature directions for prototype init".into(),
                ));
            }
            let picked = farthest_point_indices(cand, k);
            let c = self.cfg.encoder.feature_dim();
            let t = self.store.get_mut(bank);
            for (row, &ci) in picked.iter().enumerate() {
                t.data_mut()[row * c..(row + 1) * c].copy_from_slice(&cand[ci]);
            }
        }
        Ok(())
    }

    /// Projected pooled vectors of the three streams (pre-cosine).
    fn infer_stream_vectors(
        &self,
        exec: &dyn ParallelFor,
        clip: &VideoClip,
        seed: u64,
    ) -> Result<[Vec<f64>; 3]> {
        let s = crate::video::make_static_frame(clip, seed)?;
        let d = crate::video::make_frame_difference(clip)?;
        let mut out: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (i, input) in
            [clip_to_tensor(&s), diff_to_tensor(&d), clip_to_tensor(clip)].into_iter().enumerate()
        {
            let (_, vec) = crate::encoder::encode(
                exec,
                &self.cfg.encoder,
                self.stream_params(i),
                &self.store,
                input,
            )?;
            out[i] = self.project_vec(i, vec.data());
        }
        Ok(out)
    }

    /// Concept codes of all three streams for one clip: builds the static
    /// frame and frame difference without augmentation, encodes each stream
    /// and projects against its own prototype bank. Used by code dumps and
    /// diagnostics; `seed` picks the static frame.
    pub fn infer_stream_codes(
        &self,
        exec: &dyn ParallelFor,
        clip: &VideoClip,
        seed: u64,
    ) -> Result<[Vec<f64>; 3]> {
        let s = crate::video::make_static_frame(clip, seed)?;
        let d = crate::video::make_frame_difference(clip)?;
        let mut out: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (i, input) in
            [clip_to_tensor(&s), diff_to_tensor(&d), clip_to_tensor(clip)].into_iter().enumerate()
        {
            let (_, vec) = crate::encoder::encode(
                exec,
                &self.cfg.encoder,
                self.stream_params(i),
                &self.store,
                input,
            )?;
            let proj = self.project_vec(i, vec.data());
            let bank = [self.protos.p_s, self.protos.p_d, self.protos.p_v][i];
            out[i] = crate::concepts::compute_code(&proj, self.store.get(bank))?;
        }
        Ok(out)
    }

    /// Apply one stream's sigma to a plain vector.
    fn project_vec(&self, stream: usize, vec: &[f64]) -> Vec<f64> {
        match &self.sigma[stream] {
            None => vec.to_vec(),
            Some(p) => {
                let (w1, b1) = (self.store.get(p.w1), self.store.get(p.b1));
                let (w2, b2) = (self.store.get(p.w2), self.store.get(p.b2));
                let h = b1.len();
                let c = b2.len();
                let mut hid = alloc::vec![0.0f64; h];
                for j in 0..h {
                    let mut acc = b1.data()[j];
                    for (i, &vi) in vec.iter().enumerate() {
                        acc += vi * w1.data()[i * h + j];
                    }
                    hid[j] = acc.max(0.0);
                }
                let mut out = alloc::vec![0.0f64; c];
                for j in 0..c {
                    let mut acc = b2.data()[j];
                    for (i, &hi) in hid.iter().enumerate() {
                        acc += hi * w2.data()[i * c + j];
                    }
                    out[j] = acc;
                }
                out
            }
        }
    }
}
