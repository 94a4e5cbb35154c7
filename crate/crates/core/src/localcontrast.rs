//! Cross-attention local features and the margin-based local contrast.
//!
//! Prototypes are linearly projected into query tokens; the feature map
//! provides keys and values. Each prototype's query aggregates one local
//! feature row, with the projected query added back as a residual. Valid
//! concepts per sample are the intersection of the two streams' top-k code
//! indexes; only those rows enter the margin loss, with same-concept rows of
//! other batch members as negatives.

use alloc::format;
use alloc::vec::Vec;

use crate::encoder::ParamStore;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which input stream a code or local feature set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Static,
    Dynamic,
    Video,
}

/// Store indices of the shared attention projections.
/// The attention dim must equal the feature dim: the query residual is added
/// to the aggregated values, so their widths have to match.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn init(c: usize, attn_dim: usize, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        if attn_dim == 0 {
            return Err(Error::InvalidInput("attention dim must be >= 1".into()));
        }
        if attn_dim != c {
            return Err(Error::InvalidInput(format!(
                "attention dim {attn_dim} must equal feature dim {c}: the query residual is added to the output"
            )));
        }
        let std = 1.0 / libm::sqrt(c as f64);
        Ok(AttentionParams {
            w_q: store.push("attn.w_q", Tensor::randn(&[c, attn_dim], std, rng)),
            w_k: store.push("attn.w_k", Tensor::randn(&[c, attn_dim], std, rng)),
            w_v: store.push("attn.w_v", Tensor::randn(&[c, c], std, rng)),
            dim: attn_dim,
        })
    }
}

/// Per-concept aggregated local features `[K, C]` for one sample.
#[derive(Debug, Clone)]
pub struct LocalFeatureSet {
    pub values: Tensor,
    pub source: Stream,
}

/// Valid concept indexes for one sample, ascending, at most `k_top` of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidIndexSet {
    pub indexes: Vec<usize>,
    pub k_top: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalContrastConfig {
    pub k_top: usize,
    pub margin: f64,
}

impl Default for LocalContrastConfig {
    fn default() -> Self {
        LocalContrastConfig { k_top: 5, margin: 1.0 }
    }
}

impl LocalContrastConfig {
    pub fn validate(&self, k_s: usize, k_d: usize) -> Result<()> {
        if self.k_top == 0 || self.k_top > k_s.min(k_d) {
            return Err(Error::InvalidInput(format!(
                "k_top {} must be in 1..=min(K_s,K_d)={}",
                self.k_top,
                k_s.min(k_d)
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidInput("margin must be > 0".into()));
        }
        Ok(())
    }
}

/// Indexes of the k largest entries; ties broken toward the lower index.
fn top_k_indexes(code: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..code.len()).collect();
    order.sort_by(|&a, &b| {
        code[b].partial_cmp(&code[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

/// Intersection of the two codes' top-k index sets. May be empty.
pub fn select_valid(q_a: &[f64], q_b: &[f64], k_top: usize) -> Result<ValidIndexSet> {
    if q_a.len() != q_b.len() {
        return Err(Error::InvalidInput("codes must have equal length".into()));
    }
    if k_top > q_a.len() {
        return Err(Error::InvalidInput(format!(
            "k_top {k_top} exceeds code length {}",
            q_a.len()
        )));
    }
    let ta = top_k_indexes(q_a, k_top);
    let tb = top_k_indexes(q_b, k_top);
    let indexes: Vec<usize> = ta.into_iter().filter(|i| tb.contains(i)).collect();
    Ok(ValidIndexSet { indexes, k_top })
}

/// Cross-attention on the graph for one stream:
/// `protos [K,C]`, `fmap [B,C,T',H',W'] -> [B,K,C]`.
pub fn cross_attend_nodes(
    g: &mut Graph,
    params: &AttentionParams,
    bound: &[NodeId],
    protos: NodeId,
    fmap: NodeId,
) -> NodeId {
    let tokens = g.to_tokens(fmap);
    let queries = g.matmul(protos, bound[params.w_q]);
    let keys = g.tok_lin(tokens, bound[params.w_k]);
    let values = g.tok_lin(tokens, bound[params.w_v]);
    let scores = g.attn_scores(queries, keys);
    let weights = g.softmax_last(scores);
    let agg = g.attn_apply(weights, values);
    g.add_bcast_mat(agg, queries)
}

/// Attention maps for one sample: pre-softmax scores and softmax weights,
/// both `[K, N]` with `N = T'*H'*W'`.
pub struct AttentionMaps {
    pub scores: Tensor,
    pub weights: Tensor,
}

/// Plain single-sample cross-attention. Returns the aggregated local feature
/// set and the attention maps. `fmap` is `[C, T', H', W']`.
pub fn cross_attend(
    store: &ParamStore,
    params: &AttentionParams,
    protos: &Tensor,
    fmap: &Tensor,
) -> Result<(LocalFeatureSet, AttentionMaps)> {
    let c = fmap.shape()[0];
    if c != protos.shape()[1] {
        return Err(Error::InvalidInput(format!(
            "feature map channels {c} do not match prototype dim {}",
            protos.shape()[1]
        )));
    }
    let n: usize = fmap.shape()[1..].iter().product();
    if n == 0 {
        return Err(Error::InvalidInput("feature map has no positions".into()));
    }
    let k = protos.shape()[0];
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let p = g.leaf(protos.clone());
    let shape5 = [1, c, fmap.shape()[1], fmap.shape()[2], fmap.shape()[3]];
    let f = g.leaf(fmap.clone().reshaped(&shape5));
    let tokens = g.to_tokens(f);
    let queries = g.matmul(p, bound[params.w_q]);
    let keys = g.tok_lin(tokens, bound[params.w_k]);
    let values = g.tok_lin(tokens, bound[params.w_v]);
    let scores = g.attn_scores(queries, keys);
    let weights = g.softmax_last(scores);
    let agg = g.attn_apply(weights, values);
    let out = g.add_bcast_mat(agg, queries);
    Ok((
        LocalFeatureSet {
            values: g.value(out).clone().reshaped(&[k, c]),
            source: Stream::Video,
        },
        AttentionMaps {
            scores: g.value(scores).clone().reshaped(&[k, n]),
            weights: g.value(weights).clone().reshaped(&[k, n]),
        },
    ))
}

/// Plain directed margin loss for one sample against an explicit negative
/// list: `sum_{k in idx} [ ||F_a[k]-F_b[k]||^2 + sum_n max(margin - ||F_a[k]-n[k]||, 0)^2 ]`.
pub fn local_margin_loss(
    f_a: &LocalFeatureSet,
    f_b: &LocalFeatureSet,
    idx: &ValidIndexSet,
    negatives: &[&LocalFeatureSet],
    margin: f64,
) -> Result<f64> {
    let shape = f_a.values.shape();
    if f_b.values.shape() != shape || negatives.iter().any(|n| n.values.shape() != shape) {
        return Err(Error::InvalidInput("all local feature sets must share [K,C]".into()));
    }
    let (k, c) = (shape[0], shape[1]);
    let mut total = 0.0;
    for &ki in &idx.indexes {
        if ki >= k {
            return Err(Error::InvalidInput(format!("index {ki} out of range for K={k}")));
        }
        let ar = &f_a.values.data()[ki * c..(ki + 1) * c];
        let br = &f_b.values.data()[ki * c..(ki + 1) * c];
        total += ar.iter().zip(br).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        for neg in negatives {
            let nr = &neg.values.data()[ki * c..(ki + 1) * c];
            let d = libm::sqrt(ar.iter().zip(nr).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
            let h = margin - d;
            if h > 0.0 {
                total += h * h;
            }
        }
    }
    Ok(total)
}

/// The four-term local contrast on the graph, batch-averaged:
/// `l(F_s,F_v^s) + l(F_v^s,F_s) + l(F_d,F_v^d) + l(F_v^d,F_d)`, where static
/// terms use each sample's `idx_s` and dynamic terms `idx_d`. Negatives are
/// the same-concept rows of the second argument from other batch members.
#[allow(clippy::too_many_arguments)]
pub fn local_loss_total_nodes(
    g: &mut Graph,
    f_s: NodeId,
    f_d: NodeId,
    f_v: NodeId,
    idx_s: &[ValidIndexSet],
    idx_d: &[ValidIndexSet],
    k_s: usize,
    k_d: usize,
    margin: f64,
) -> NodeId {
    let b = g.value(f_s).shape()[0];
    let f_vs = g.slice_mid(f_v, 0, k_s);
    let f_vd = g.slice_mid(f_v, k_s, k_d);
    let is: Vec<Vec<usize>> = idx_s.iter().map(|s| s.indexes.clone()).collect();
    let id: Vec<Vec<usize>> = idx_d.iter().map(|s| s.indexes.clone()).collect();
    let t1 = g.local_margin(f_s, f_vs, is.clone(), margin);
    let t2 = g.local_margin(f_vs, f_s, is, margin);
    let t3 = g.local_margin(f_d, f_vd, id.clone(), margin);
    let t4 = g.local_margin(f_vd, f_d, id, margin);
    let a = g.add(t1, t2);
    let bb = g.add(t3, t4);
    let s = g.add(a, bb);
    g.scale(s, 1.0 / b as f64)
}

/// Per-sample valid index sets for a batch of code pairs.
pub fn select_valid_batch(
    q_a: &Tensor,
    q_b: &Tensor,
    k_top: usize,
) -> Result<Vec<ValidIndexSet>> {
    let (bs, k) = (q_a.shape()[0], q_a.shape()[1]);
    if q_b.shape() != [bs, k] {
        return Err(Error::InvalidInput("code batches must share [B,K]".into()));
    }
    (0..bs)
        .map(|bi| {
            select_valid(&q_a.data()[bi * k..(bi + 1) * k], &q_b.data()[bi * k..(bi + 1) * k], k_top)
        })
        .collect()
}
