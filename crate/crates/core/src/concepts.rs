//! Prototype banks, concept codes, Sinkhorn soft codes and the decoupled
//! alignment loss.
//!
//! A concept code is the vector of cosine similarities between a pooled
//! feature vector and a bank of prototypes. Per batch, codes are balanced
//! into soft target distributions by Sinkhorn-Knopp under uniform marginals
//! (each sample carries mass 1/B, each concept 1/K); the alignment loss is
//! the swapped cross-entropy between one stream's soft code and the other
//! stream's tempered softmax. Soft codes are targets only: they are stored
//! as op payloads and never carry gradient.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Store indices of the three prototype banks `P_s [K_s,C]`, `P_d [K_d,C]`,
/// `P_v [K_s+K_d,C]`.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    pub p_s: usize,
    pub p_d: usize,
    pub p_v: usize,
    pub k_s: usize,
    pub k_d: usize,
}

/// Temperature and Sinkhorn iteration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    pub tau: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_eps: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { tau: 0.1, sinkhorn_iters: 3, sinkhorn_eps: 0.05 }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidInput("tau must be > 0".into()));
        }
        if self.sinkhorn_iters < 1 {
            return Err(Error::InvalidInput("sinkhorn_iters must be >= 1".into()));
        }
        if !(self.sinkhorn_eps > 0.0) {
            return Err(Error::InvalidInput("sinkhorn_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Batch of Sinkhorn-balanced target distributions; each row sums to 1.
#[derive(Debug, Clone)]
pub struct SoftCodeBatch {
    pub values: Tensor,
}

/// Soft targets for the four alignment terms.
#[derive(Debug, Clone)]
pub struct AlignTargets {
    pub soft_s: Tensor,
    pub soft_d: Tensor,
    pub soft_vs: Tensor,
    pub soft_vd: Tensor,
}

/// Gaussian prototypes with std 1/sqrt(C), row-normalized once at init so no
/// concept starts dead; the cosine handles norms from then on.
pub fn init_prototypes(
    k_s: usize,
    k_d: usize,
    c: usize,
    store: &mut crate::encoder::ParamStore,
    rng: &mut Rng,
) -> Result<PrototypeBank> {
    if k_s < 2 || k_d < 2 {
        return Err(Error::InvalidInput(format!("K_s and K_d must be >= 2, got {k_s}/{k_d}")));
    }
    let std = 1.0 / libm::sqrt(c as f64);
    let mut mk = |k: usize| -> Tensor {
        let mut t = Tensor::randn(&[k, c], std, rng);
        for r in 0..k {
            let row = &mut t.data_mut()[r * c..(r + 1) * c];
            let n = crate::tensor::norm(row);
            row.iter_mut().for_each(|v| *v /= n);
        }
        t
    };
    let (ts, td, tv) = (mk(k_s), mk(k_d), mk(k_s + k_d));
    Ok(PrototypeBank {
        p_s: store.push("protos.static", ts),
        p_d: store.push("protos.dynamic", td),
        p_v: store.push("protos.video", tv),
        k_s,
        k_d,
    })
}

/// Cosine similarity of one feature vector against each prototype row.
pub fn compute_code(vec: &[f64], protos: &Tensor) -> Result<Vec<f64>> {
    let (k, c) = (protos.shape()[0], protos.shape()[1]);
    if vec.len() != c {
        return Err(Error::InvalidInput(format!(
            "feature dim {} does not match prototype dim {c}",
            vec.len()
        )));
    }
    let vn = crate::tensor::norm(vec);
    if vn == 0.0 {
        return Err(Error::DegenerateInput("zero-norm feature vector".into()));
    }
    let mut out = Vec::with_capacity(k);
    for ki in 0..k {
        let row = &protos.data()[ki * c..(ki + 1) * c];
        let pn = crate::tensor::norm(row);
        if pn == 0.0 {
            return Err(Error::DegenerateInput(format!("zero-norm prototype row {ki}")));
        }
        out.push(crate::tensor::dot(vec, row) / (vn * pn));
    }
    Ok(out)
}

/// Sinkhorn-Knopp transport plan for `exp(codes/eps)` under uniform marginals
/// (rows 1/B, columns 1/K). Each iteration ends on a row normalization, so
/// row marginals are exact and column marginals carry the convergence gap.
pub fn sinkhorn_plan(codes: &Tensor, cfg: &AlignmentConfig) -> Result<Tensor> {
    cfg.validate()?;
    if codes.shape().len() != 2 {
        return Err(Error::InvalidInput("codes must be [B,K]".into()));
    }
    let (b, k) = (codes.shape()[0], codes.shape()[1]);
    if k < 2 {
        return Err(Error::InvalidInput("sinkhorn needs K >= 2".into()));
    }
    if !codes.all_finite() {
        return Err(Error::InvalidInput("non-finite code values".into()));
    }
    if b == 0 {
        return Ok(Tensor::zeros(&[0, k]));
    }
    let mut m = Tensor::zeros(&[b, k]);
    for bi in 0..b {
        let row = &codes.data()[bi * k..(bi + 1) * k];
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let out = &mut m.data_mut()[bi * k..(bi + 1) * k];
        for (o, &v) in out.iter_mut().zip(row) {
            *o = libm::exp((v - mx) / cfg.sinkhorn_eps);
        }
    }
    let row_target = 1.0 / b as f64;
    let col_target = 1.0 / k as f64;
    let normalize_rows = |m: &mut Tensor| {
        for bi in 0..b {
            let row = &mut m.data_mut()[bi * k..(bi + 1) * k];
            let s: f64 = row.iter().sum();
            let f = row_target / s.max(1e-300);
            row.iter_mut().for_each(|v| *v *= f);
        }
    };
    // initial row normalization kills per-row scalings of the kernel exactly,
    // making the plan invariant to per-row shifts of the codes
    normalize_rows(&mut m);
    for _ in 0..cfg.sinkhorn_iters {
        for ki in 0..k {
            let mut s = 0.0;
            for bi in 0..b {
                s += m.data()[bi * k + ki];
            }
            let f = col_target / s.max(1e-300);
            for bi in 0..b {
                m.data_mut()[bi * k + ki] *= f;
            }
        }
        normalize_rows(&mut m);
    }
    Ok(m)
}

/// Soft codes: the transport plan rescaled so each row sums to 1.
pub fn sinkhorn_soft_codes(codes: &Tensor, cfg: &AlignmentConfig) -> Result<SoftCodeBatch> {
    let mut plan = sinkhorn_plan(codes, cfg)?;
    let b = plan.shape()[0];
    plan.scale(b as f64);
    Ok(SoftCodeBatch { values: plan })
}

/// Soft targets for all four alignment terms, from detached code values.
pub fn compute_align_targets(
    q_s: &Tensor,
    q_d: &Tensor,
    q_v: &Tensor,
    k_s: usize,
    k_d: usize,
    cfg: &AlignmentConfig,
) -> Result<AlignTargets> {
    if q_v.shape()[1] != k_s + k_d {
        return Err(Error::InvalidInput(format!(
            "q_v has {} concepts, expected K_s+K_d = {}",
            q_v.shape()[1],
            k_s + k_d
        )));
    }
    let q_vs = crate::graph::slice_cols_plain(q_v, 0, k_s);
    let q_vd = crate::graph::slice_cols_plain(q_v, k_s, k_d);
    Ok(AlignTargets {
        soft_s: sinkhorn_soft_codes(q_s, cfg)?.values,
        soft_d: sinkhorn_soft_codes(q_d, cfg)?.values,
        soft_vs: sinkhorn_soft_codes(&q_vs, cfg)?.values,
        soft_vd: sinkhorn_soft_codes(&q_vd, cfg)?.values,
    })
}

/// Build the decoupled alignment loss on the graph: the batch mean of the
/// four swapped cross-entropy terms. The static pair touches only `q_s` and
/// the first `K_s` channels of `q_v`; the dynamic pair only `q_d` and the
/// last `K_d` channels, so each term's gradient is confined to its own
/// stream and prototype slice.
pub fn alignment_loss_nodes(
    g: &mut Graph,
    q_s: NodeId,
    q_d: NodeId,
    q_v: NodeId,
    targets: &AlignTargets,
    k_s: usize,
    k_d: usize,
    tau: f64,
) -> NodeId {
    let b = g.value(q_s).shape()[0];
    let q_vs = g.slice_cols(q_v, 0, k_s);
    let q_vd = g.slice_cols(q_v, k_s, k_d);
    let t1 = g.ce_fixed_target(q_vs, targets.soft_s.clone(), tau);
    let t2 = g.ce_fixed_target(q_s, targets.soft_vs.clone(), tau);
    let t3 = g.ce_fixed_target(q_vd, targets.soft_d.clone(), tau);
    let t4 = g.ce_fixed_target(q_d, targets.soft_vd.clone(), tau);
    let a = g.add(t1, t2);
    let bsum = g.add(t3, t4);
    let s = g.add(a, bsum);
    g.scale(s, 1.0 / b as f64)
}

/// Plain evaluation of the alignment loss for given codes and soft targets.
pub fn alignment_loss(
    q_s: &Tensor,
    q_d: &Tensor,
    q_v: &Tensor,
    targets: &AlignTargets,
    cfg: &AlignmentConfig,
) -> Result<f64> {
    cfg.validate()?;
    let k_s = targets.soft_s.shape()[1];
    let k_d = targets.soft_d.shape()[1];
    if q_s.shape()[1] != k_s || q_d.shape()[1] != k_d || q_v.shape()[1] != k_s + k_d {
        return Err(Error::InvalidInput(
            "code dimensions do not match soft-code dimensions".into(),
        ));
    }
    let mut g = Graph::new();
    let qs = g.leaf(q_s.clone());
    let qd = g.leaf(q_d.clone());
    let qv = g.leaf(q_v.clone());
    let node = alignment_loss_nodes(&mut g, qs, qd, qv, targets, k_s, k_d, cfg.tau);
    Ok(g.value(node).item())
}
