//! Reverse-mode autodiff over dense f64 tensors.
//!
//! Define-by-run tape: builder methods compute the forward value eagerly and
//! record an op node. `backward` walks the tape in reverse, accumulating
//! gradients into every ancestor of the loss node. Nodes are topologically
//! ordered by construction (a parent always has a smaller index), so one
//! reverse sweep suffices.
//!
//! Stop-gradient boundaries are structural: targets that must not carry
//! gradient (Sinkhorn soft codes, fidelity reconstruction targets) are stored
//! inside op payloads or entered as fresh leaves, so no edge exists for the
//! backward sweep to traverse.

mod conv;
mod ops;

pub use ops::Op;

/// Column slice of a `[B,K]` tensor without touching any tape.
pub fn slice_cols_plain(x: &Tensor, start: usize, len: usize) -> Tensor {
    ops::slice_cols(x, start, len)
}

use alloc::vec::Vec;

use crate::exec::ParallelFor;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

pub struct Node {
    pub op: Op,
    pub parents: Vec<NodeId>,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated at `id`, if the node was reached by `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient at `id`, or zeros of the node's shape if it was not reached.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[id.0].value.shape()),
        }
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, parents, value, grad: None });
        id
    }

    /// Enter a tensor as a leaf. Leaves accumulate gradients but have no
    /// parents; parameter updates read them back via `grad`.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = ops::ew_add(self.value(a), self.value(b));
        self.push(Op::Add, alloc::vec![a, b], value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = ops::ew_sub(self.value(a), self.value(b));
        self.push(Op::Sub, alloc::vec![a, b], value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut value = self.value(a).clone();
        value.scale(c);
        self.push(Op::Scale(c), alloc::vec![a], value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = ops::relu(self.value(a));
        self.push(Op::Relu, alloc::vec![a], value)
    }

    /// `[m,k] @ [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = ops::matmul(self.value(a), self.value(b));
        self.push(Op::MatMul, alloc::vec![a, b], value)
    }

    /// `[m,n] + [n]` broadcast over rows.
    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> NodeId {
        let value = ops::add_row_vec(self.value(a), self.value(v));
        self.push(Op::AddRowVec, alloc::vec![a, v], value)
    }

    /// 3D convolution: `x [B,Ci,T,H,W]`, `w [Co,Ci,kt,kh,kw]`.
    pub fn conv3d(
        &mut self,
        exec: &dyn ParallelFor,
        x: NodeId,
        w: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> NodeId {
        let value = conv::conv3d_forward(exec, self.value(x), self.value(w), stride, pad);
        self.push(Op::Conv3d { stride, pad }, alloc::vec![x, w], value)
    }

    /// `x [B,C,rest..] + bias [C]` broadcast over batch and positions.
    pub fn bias_chan(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let value = ops::bias_chan(self.value(x), self.value(b));
        self.push(Op::BiasChan, alloc::vec![x, b], value)
    }

    /// Global average pool `[B,C,T,H,W] -> [B,C]`.
    pub fn gap(&mut self, x: NodeId) -> NodeId {
        let value = ops::gap(self.value(x));
        self.push(Op::Gap, alloc::vec![x], value)
    }

    /// Cosine similarity of each feature row against each prototype row:
    /// `v [B,C], p [K,C] -> [B,K]`.
    pub fn row_cosine(&mut self, v: NodeId, p: NodeId) -> NodeId {
        let value = ops::row_cosine(self.value(v), self.value(p));
        self.push(Op::RowCosine, alloc::vec![v, p], value)
    }

    /// Column slice of a 2-D tensor: `[B,K] -> [B,len]`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = ops::slice_cols(self.value(x), start, len);
        self.push(Op::SliceCols { start, len }, alloc::vec![x], value)
    }

    /// Middle-axis slice of a 3-D tensor: `[B,K,C] -> [B,len,C]`.
    pub fn slice_mid(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = ops::slice_mid(self.value(x), start, len);
        self.push(Op::SliceMid { start, len }, alloc::vec![x], value)
    }

    /// Cross-entropy of `softmax(logits/tau)` rows against a fixed target
    /// distribution, summed over the batch. The target is an op payload, not
    /// a graph parent: it never receives gradient.
    pub fn ce_fixed_target(&mut self, logits: NodeId, target: Tensor, tau: f64) -> NodeId {
        let value = ops::ce_fixed_target(self.value(logits), &target, tau);
        self.push(Op::CeFixedTarget { tau, target }, alloc::vec![logits], value)
    }

    /// Sum of absolute values over all entries -> scalar.
    pub fn l1_sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).data().iter().map(|v| libm::fabs(*v)).sum());
        self.push(Op::L1Sum, alloc::vec![x], value)
    }

    /// Sum of squares over all entries -> scalar.
    pub fn sq_sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sq_norm());
        self.push(Op::SqSum, alloc::vec![x], value)
    }

    /// Flatten a feature map to attention tokens: `[B,C,T,H,W] -> [B,N,C]`.
    pub fn to_tokens(&mut self, x: NodeId) -> NodeId {
        let value = ops::to_tokens(self.value(x));
        self.push(Op::ToTokens, alloc::vec![x], value)
    }

    /// Per-token linear map: `[B,N,C] @ [C,Co] -> [B,N,Co]`.
    pub fn tok_lin(&mut self, t: NodeId, m: NodeId) -> NodeId {
        let value = ops::tok_lin(self.value(t), self.value(m));
        self.push(Op::TokLin, alloc::vec![t, m], value)
    }

    /// Scaled dot-product scores: `q [K,Ca], k [B,N,Ca] -> [B,K,N]`,
    /// including the 1/sqrt(Ca) factor.
    pub fn attn_scores(&mut self, q: NodeId, k: NodeId) -> NodeId {
        let value = ops::attn_scores(self.value(q), self.value(k));
        self.push(Op::AttnScores, alloc::vec![q, k], value)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: NodeId) -> NodeId {
        let value = ops::softmax_last(self.value(x));
        self.push(Op::SoftmaxLast, alloc::vec![x], value)
    }

    /// Attention-weighted value aggregation: `w [B,K,N], v [B,N,C] -> [B,K,C]`.
    pub fn attn_apply(&mut self, w: NodeId, v: NodeId) -> NodeId {
        let value = ops::attn_apply(self.value(w), self.value(v));
        self.push(Op::AttnApply, alloc::vec![w, v], value)
    }

    /// `x [B,K,C] + m [K,C]` broadcast over the batch.
    pub fn add_bcast_mat(&mut self, x: NodeId, m: NodeId) -> NodeId {
        let value = ops::add_bcast_mat(self.value(x), self.value(m));
        self.push(Op::AddBcastMat, alloc::vec![x, m], value)
    }

    /// Directed local margin contrast between two `[B,K,C]` feature sets.
    /// For sample i and concept k in `idx[i]`: squared distance to the
    /// positive `b[i,k]` plus squared hinge `max(margin - ||a[i,k]-b[j,k]||, 0)^2`
    /// over every other sample j. Returns the sum over the batch.
    pub fn local_margin(&mut self, a: NodeId, b: NodeId, idx: Vec<Vec<usize>>, margin: f64) -> NodeId {
        let value = ops::local_margin(self.value(a), self.value(b), &idx, margin);
        self.push(Op::LocalMargin { lambda: margin, idx }, alloc::vec![a, b], value)
    }

    /// Per-position RMS normalization over channels of `[B,C,T,H,W]`.
    pub fn rms_norm_chan(&mut self, x: NodeId) -> NodeId {
        let value = ops::rms_norm_chan(self.value(x));
        self.push(Op::RmsNormChan, alloc::vec![x], value)
    }

    /// Reverse sweep from a scalar `root`, accumulating gradients into every
    /// ancestor. Deterministic: contributions are applied in tape order.
    pub fn backward(&mut self, root: NodeId, exec: &dyn ParallelFor) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        self.nodes[root.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if self.nodes[i].grad.is_none() || self.nodes[i].parents.is_empty() {
                continue;
            }
            let parents = self.nodes[i].parents.clone();
            let contribs = {
                let node = &self.nodes[i];
                let grad = node.grad.as_ref().unwrap();
                let pvals: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
                ops::backward(&node.op, &node.value, grad, &pvals, exec)
            };
            for (p, c) in parents.iter().zip(contribs) {
                match &mut self.nodes[p.0].grad {
                    Some(g) => g.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
    }
}
