//! Diversity and fidelity regularizers on the concept codes.
//!
//! Diversity is an L1 penalty that keeps each input on a few concepts.
//! Fidelity treats the code as a bottleneck: a small two-layer head must
//! reconstruct the pooled feature vector from it, with the target side
//! gradient-stopped so only the code path learns.

use alloc::format;
use alloc::vec::Vec;

use crate::encoder::ParamStore;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Store indices of one reconstruction head: `w1 [K,H], b1 [H], w2 [H,C], b2 [C]`.
#[derive(Debug, Clone)]
pub struct ReconstructionHead {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ReconstructionHead {
    /// The bottleneck condition: the code must be narrower than the feature.
    pub fn init(
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input >= output {
            return Err(Error::InvalidInput(format!(
                "head {name}: code dim {input} must be smaller than feature dim {output}"
            )));
        }
        let s1 = libm::sqrt(2.0 / input as f64);
        // output layer starts at zero: the reconstruction residual then sends
        // no gradient into the code path until the head itself has warmed up,
        // which keeps the first optimization steps from crushing the codes
        Ok(ReconstructionHead {
            w1: store.push(&format!("head.{name}.w1"), Tensor::randn(&[input, hidden], s1, rng)),
            b1: store.push(&format!("head.{name}.b1"), Tensor::zeros(&[hidden])),
            w2: store.push(&format!("head.{name}.w2"), Tensor::zeros(&[hidden, output])),
            b2: store.push(&format!("head.{name}.b2"), Tensor::zeros(&[output])),
            input,
            hidden,
            output,
        })
    }

    /// Head forward on the graph: `[B,K] -> [B,C]`.
    pub fn apply(&self, g: &mut Graph, bound: &[NodeId], code: NodeId) -> NodeId {
        let h = g.matmul(code, bound[self.w1]);
        let h = g.add_row_vec(h, bound[self.b1]);
        let h = g.relu(h);
        let o = g.matmul(h, bound[self.w2]);
        g.add_row_vec(o, bound[self.b2])
    }
}

/// Batch mean of `||q_s||_1 + ||q_d||_1 + ||q_v||_1` on the graph.
pub fn diversity_loss_nodes(g: &mut Graph, q_s: NodeId, q_d: NodeId, q_v: NodeId) -> NodeId {
    let b = g.value(q_s).shape()[0];
    let l1 = g.l1_sum(q_s);
    let l2 = g.l1_sum(q_d);
    let l3 = g.l1_sum(q_v);
    let s = g.add(l1, l2);
    let s = g.add(s, l3);
    g.scale(s, 1.0 / b as f64)
}

/// Plain diversity loss over `[B,K]` code batches.
pub fn diversity_loss(q_s: &Tensor, q_d: &Tensor, q_v: &Tensor) -> f64 {
    let b = q_s.shape()[0] as f64;
    let l1 = |t: &Tensor| t.data().iter().map(|v| libm::fabs(*v)).sum::<f64>();
    (l1(q_s) + l1(q_d) + l1(q_v)) / b
}

/// Batch mean of the three squared reconstruction errors on the graph.
/// Targets enter as op-internal constants: the feature path that produced
/// them receives no gradient.
pub fn fidelity_loss_nodes(
    g: &mut Graph,
    bound: &[NodeId],
    codes: [NodeId; 3],
    targets: [&Tensor; 3],
    heads: [&ReconstructionHead; 3],
) -> Result<NodeId> {
    let b = g.value(codes[0]).shape()[0];
    let mut total: Option<NodeId> = None;
    for i in 0..3 {
        let code_dim = g.value(codes[i]).shape()[1];
        if code_dim != heads[i].input {
            return Err(Error::InvalidInput(format!(
                "head {i} expects code dim {}, got {code_dim}",
                heads[i].input
            )));
        }
        if targets[i].shape() != [b, heads[i].output] {
            return Err(Error::InvalidInput(format!(
                "target {i} shape {:?} does not match [B,C] = [{b},{}]",
                targets[i].shape(),
                heads[i].output
            )));
        }
        let recon = heads[i].apply(g, bound, codes[i]);
        let target = g.leaf(targets[i].clone());
        let diff = g.sub(recon, target);
        let sq = g.sq_sum(diff);
        total = Some(match total {
            None => sq,
            Some(t) => g.add(t, sq),
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / b as f64))
}

/// Plain fidelity loss: batch mean of `sum_i ||g_i(q_i) - target_i||_2^2`.
pub fn fidelity_loss(
    store: &ParamStore,
    codes: [&Tensor; 3],
    targets: [&Tensor; 3],
    heads: [&ReconstructionHead; 3],
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let code_nodes = [
        g.leaf(codes[0].clone()),
        g.leaf(codes[1].clone()),
        g.leaf(codes[2].clone()),
    ];
    let node = fidelity_loss_nodes(&mut g, &bound, code_nodes, targets, heads)?;
    Ok(g.value(node).item())
}

/// Evaluate one head outside the graph (used by tests and export paths).
pub fn head_forward(store: &ParamStore, head: &ReconstructionHead, code: &[f64]) -> Vec<f64> {
    let (w1, b1) = (store.get(head.w1), store.get(head.b1));
    let (w2, b2) = (store.get(head.w2), store.get(head.b2));
    let mut hid = alloc::vec![0.0f64; head.hidden];
    for j in 0..head.hidden {
        let mut acc = b1.data()[j];
        for i in 0..head.input {
            acc += code[i] * w1.data()[i * head.hidden + j];
        }
        hid[j] = acc.max(0.0);
    }
    let mut out = alloc::vec![0.0f64; head.output];
    for j in 0..head.output {
        let mut acc = b2.data()[j];
        for i in 0..head.hidden {
            acc += hid[i] * w2.data()[i * head.output + j];
        }
        out[j] = acc;
    }
    out
}
