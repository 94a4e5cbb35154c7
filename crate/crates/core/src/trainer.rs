//! Objective composition and the SGD training loop.
//!
//! The total objective is `L_aln + alpha*L_loc + beta*L_fid + gamma*L_div`,
//! with the local term gated off for the first `warmup_epochs` epochs so
//! index selection has settled codes to work with. During warmup the local
//! nodes are simply left out of the total, which makes their gradient
//! contribution exactly zero rather than merely small.
//!
//! Everything here is deterministic given the seed: sample order, triplet
//! augmentation draws, and the fixed-order gradient reduction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::ParallelFor;
use crate::graph::NodeId;
use crate::model::{BatchInputs, ConceptModel, LossGraph};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::video::{make_triplet, CropSpec, VideoClip};

/// Balancing weights of the objective plus the local-term warmup.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub warmup_epochs: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0, gamma: 0.01, warmup_epochs: 5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidInput("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    /// Whether the local term participates at this epoch.
    pub fn local_active(&self, epoch: usize) -> bool {
        self.alpha > 0.0 && epoch >= self.warmup_epochs
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-2,
            weight_decay: 1e-4,
            momentum: 0.9,
            epochs: 50,
            batch_size: 32,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) && self.lr != 0.0 {
            return Err(Error::InvalidInput("lr must be finite and >= 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// The four components and their gated total at a given epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_aln: f64,
    pub l_loc: f64,
    pub l_fid: f64,
    pub l_div: f64,
    pub total: f64,
    pub epoch: usize,
}

/// Compose the scalar objective. The local term is multiplied by zero before
/// `warmup_epochs`. Non-finite components abort with a diagnostic.
pub fn total_loss(
    l_aln: f64,
    l_loc: f64,
    l_fid: f64,
    l_div: f64,
    weights: &LossWeights,
    epoch: usize,
) -> Result<f64> {
    for (name, v) in [("aln", l_aln), ("loc", l_loc), ("fid", l_fid), ("div", l_div)] {
        if !v.is_finite() {
            return Err(Error::Diverged(format!(
                "component l_{name} is {v} at epoch {epoch} (aln={l_aln} loc={l_loc} fid={l_fid} div={l_div})"
            )));
        }
    }
    let gate = if epoch >= weights.warmup_epochs { 1.0 } else { 0.0 };
    Ok(l_aln + weights.alpha * gate * l_loc + weights.beta * l_fid + weights.gamma * l_div)
}

/// Build the total node on an existing loss graph, honoring the warmup gate.
/// Inactive terms are left out of the graph entirely.
pub fn compose_total_node(lg: &mut LossGraph, weights: &LossWeights, epoch: usize) -> NodeId {
    let mut total = lg.l_aln;
    if weights.local_active(epoch) {
        let scaled = lg.graph.scale(lg.l_loc, weights.alpha);
        total = lg.graph.add(total, scaled);
    }
    if weights.beta != 0.0 {
        let scaled = lg.graph.scale(lg.l_fid, weights.beta);
        total = lg.graph.add(total, scaled);
    }
    if weights.gamma != 0.0 {
        let scaled = lg.graph.scale(lg.l_div, weights.gamma);
        total = lg.graph.add(total, scaled);
    }
    total
}

/// SGD with momentum, decoupled prototype handling and global-norm clipping.
pub struct Sgd {
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(model: &ConceptModel) -> Self {
        let velocity = (0..model.store.len())
            .map(|i| Tensor::zeros(model.store.get(i).shape()))
            .collect();
        Sgd { velocity }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Restore optimizer state by store order; shapes must match.
    pub fn set_velocity(&mut self, velocity: Vec<Tensor>) -> Result<()> {
        if velocity.len() != self.velocity.len() {
            return Err(Error::InvalidInput("velocity count mismatch".into()));
        }
        for (a, b) in self.velocity.iter().zip(&velocity) {
            if a.shape() != b.shape() {
                return Err(Error::InvalidInput("velocity shape mismatch".into()));
            }
        }
        self.velocity = velocity;
        Ok(())
    }

    /// One update: clip raw gradients at the global norm, add weight decay
    /// (prototypes exempt), momentum, descend.
    pub fn step(&mut self, model: &mut ConceptModel, grads: &[Tensor], cfg: &OptimConfig) {
        let gsq: f64 = grads.iter().map(|g| g.sq_norm()).sum();
        let gnorm = libm::sqrt(gsq);
        let clip = if cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip {
            cfg.grad_clip / gnorm
        } else {
            1.0
        };
        for i in 0..grads.len() {
            let decay = if model.is_prototype(i) { 0.0 } else { cfg.weight_decay };
            let vel = &mut self.velocity[i];
            let param = model.store.get_mut(i);
            for ((v, &g), p) in
                vel.data_mut().iter_mut().zip(grads[i].data()).zip(param.data_mut())
            {
                *v = cfg.momentum * *v + clip * g + decay * *p;
                *p -= cfg.lr * *v;
            }
        }
    }
}

/// Per-step log record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub losses: LossBundle,
    pub lr: f64,
}

/// Per-epoch log record (means over the epoch's steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossBundle,
    pub lr: f64,
}

/// Receives training events; file IO lives behind this in the std crate.
pub trait TrainSink {
    fn on_step(&mut self, _rec: &StepRecord) {}
    fn on_epoch(&mut self, _rec: &EpochRecord, _model: &ConceptModel, _opt: &Sgd) {}
}

/// A sink that keeps everything in memory.
#[derive(Default)]
pub struct MemorySink {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainSink for MemorySink {
    fn on_step(&mut self, rec: &StepRecord) {
        self.steps.push(*rec);
    }
    fn on_epoch(&mut self, rec: &EpochRecord, _model: &ConceptModel, _opt: &Sgd) {
        self.epochs.push(*rec);
    }
}

/// Anything that can hand out clips by index.
pub trait ClipSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn clip(&self, index: usize) -> Result<VideoClip>;
    /// (static, dynamic) labels when the source is labeled.
    fn labels(&self, index: usize) -> Option<(usize, usize)>;
}

/// Spatio-temporal crop + flip policy for training batches.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// (T, H, W) of the training crop; `None` uses each clip's full extent.
    pub crop: Option<[usize; 3]>,
    pub flip: bool,
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig { crop: None, flip: false }
    }

    fn spec_for(&self, clip: &VideoClip, rng: &mut Rng) -> CropSpec {
        let (t, h, w) = match self.crop {
            Some([t, h, w]) => (t, h, w),
            None => (clip.t, clip.h, clip.w),
        };
        CropSpec { t, h, w, flip: self.flip && rng.flip() }
    }
}

/// Assemble one batch of triplets with per-sample derived seeds.
pub fn assemble_batch(
    dataset: &dyn ClipSource,
    indices: &[usize],
    aug: &AugmentConfig,
    seed: u64,
    epoch: usize,
    step: usize,
) -> Result<BatchInputs> {
    let mut triplets = Vec::with_capacity(indices.len());
    for (slot, &i) in indices.iter().enumerate() {
        let clip = dataset.clip(i)?;
        let label = ((epoch as u64) << 40) ^ ((step as u64) << 20) ^ slot as u64;
        let mut srng = Rng::derive(seed, 0x6175_6700 ^ label);
        let spec = aug.spec_for(&clip, &mut srng);
        triplets.push(make_triplet(&clip, &spec, srng.next_u64())?);
    }
    BatchInputs::from_triplets(&triplets)
}

/// Run the optimization loop. On a non-finite loss the loop aborts with
/// `Error::Diverged`, leaving the caller with the last parameters that were
/// checkpointed by the sink.
pub fn train(
    model: &mut ConceptModel,
    opt: &mut Sgd,
    dataset: &dyn ClipSource,
    weights: &LossWeights,
    optim: &OptimConfig,
    aug: &AugmentConfig,
    exec: &dyn ParallelFor,
    sink: &mut dyn TrainSink,
) -> Result<()> {
    weights.validate()?;
    optim.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let n = dataset.len();
    for epoch in 0..optim.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::derive(optim.seed, 0x7368_7566 ^ epoch as u64).shuffle(&mut order);
        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(optim.batch_size).enumerate() {
            let batch = assemble_batch(dataset, chunk, aug, optim.seed, epoch, step)?;
            let mut lg = model.build_losses(exec, &batch, None)?;
            let l_aln = lg.graph.value(lg.l_aln).item();
            let l_loc = lg.graph.value(lg.l_loc).item();
            let l_fid = lg.graph.value(lg.l_fid).item();
            let l_div = lg.graph.value(lg.l_div).item();
            let total = total_loss(l_aln, l_loc, l_fid, l_div, weights, epoch)?;
            let bundle = LossBundle { l_aln, l_loc, l_fid, l_div, total, epoch };
            let total_node = compose_total_node(&mut lg, weights, epoch);
            lg.graph.backward(total_node, exec);
            let grads = model.gradients(&lg);
            drop(lg);
            opt.step(model, &grads, optim);
            sums[0] += l_aln;
            sums[1] += l_loc;
            sums[2] += l_fid;
            sums[3] += l_div;
            sums[4] += total;
            steps += 1;
            sink.on_step(&StepRecord { epoch, step, losses: bundle, lr: optim.lr });
        }
        let k = steps as f64;
        sink.on_epoch(
            &EpochRecord {
                epoch,
                steps,
                mean: LossBundle {
                    l_aln: sums[0] / k,
                    l_loc: sums[1] / k,
                    l_fid: sums[2] / k,
                    l_div: sums[3] / k,
                    total: sums[4] / k,
                    epoch,
                },
                lr: optim.lr,
            },
            model,
            opt,
        );
    }
    Ok(())
}

/// In-memory labeled clip source for the synthetic corpus, rendering each
/// sample on demand from (config, seed, index).
pub struct SynthSource {
    pub cfg: crate::video::SynthConfig,
    pub seed: u64,
    pub n: usize,
}

impl ClipSource for SynthSource {
    fn len(&self) -> usize {
        self.n
    }

    fn clip(&self, index: usize) -> Result<VideoClip> {
        Ok(crate::video::synth_sample(&self.cfg, self.seed, index)?.clip)
    }

    fn labels(&self, index: usize) -> Option<(usize, usize)> {
        let mut label_rng = Rng::derive(self.seed, 0xabe1_0000 ^ index as u64);
        let s = label_rng.below(self.cfg.n_static);
        let d = label_rng.below(self.cfg.n_dynamic);
        Some((s, d))
    }
}

/// Snapshot of model parameters and optimizer velocity, by name.
pub struct Snapshot {
    pub params: Vec<(String, Tensor)>,
    pub velocity: Vec<(String, Tensor)>,
}

pub fn snapshot(model: &ConceptModel, opt: &Sgd) -> Snapshot {
    let params = model.store.iter().map(|(n, t)| (String::from(n), t.clone())).collect();
    let velocity = (0..model.store.len())
        .map(|i| (String::from(model.store.name(i)), opt.velocity()[i].clone()))
        .collect();
    Snapshot { params, velocity }
}

/// Name-matched restore; unknown names error, missing names keep their
/// current values.
pub fn restore(model: &mut ConceptModel, opt: &mut Sgd, snap: &Snapshot) -> Result<()> {
    for (name, tensor) in &snap.params {
        let idx = model
            .store
            .index_of(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter '{name}'")))?;
        if model.store.get(idx).shape() != tensor.shape() {
            return Err(Error::InvalidInput(format!("shape mismatch for parameter '{name}'")));
        }
        *model.store.get_mut(idx) = tensor.clone();
    }
    let mut vel: Vec<Tensor> = opt.velocity().to_vec();
    for (name, tensor) in &snap.velocity {
        let idx = model
            .store
            .index_of(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown velocity entry '{name}'")))?;
        if vel[idx].shape() != tensor.shape() {
            return Err(Error::InvalidInput(format!("shape mismatch for velocity '{name}'")));
        }
        vel[idx] = tensor.clone();
    }
    opt.set_velocity(vel)
}
