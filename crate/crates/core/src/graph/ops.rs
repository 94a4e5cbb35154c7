//! Op definitions: forward kernels and the backward dispatch.

use alloc::vec;
use alloc::vec::Vec;

use crate::exec::ParallelFor;
use crate::tensor::Tensor;

use super::conv;

/// Every differentiable operation on the tape.
pub enum Op {
    Leaf,
    Add,
    Sub,
    Scale(f64),
    Relu,
    MatMul,
    AddRowVec,
    Conv3d { stride: [usize; 3], pad: [usize; 3] },
    BiasChan,
    Gap,
    RowCosine,
    SliceCols { start: usize, len: usize },
    SliceMid { start: usize, len: usize },
    CeFixedTarget { tau: f64, target: Tensor },
    L1Sum,
    SqSum,
    ToTokens,
    TokLin,
    AttnScores,
    SoftmaxLast,
    AttnApply,
    AddBcastMat,
    LocalMargin { lambda: f64, idx: Vec<Vec<usize>> },
    RmsNormChan,
}

// ---------------------------------------------------------------- forward --

pub fn ew_add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn ew_sub(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub fn add_row_vec(a: &Tensor, v: &Tensor) -> Tensor {
    let n = *a.shape().last().unwrap();
    assert_eq!(v.len(), n);
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        for (x, b) in row.iter_mut().zip(v.data()) {
            *x += b;
        }
    }
    Tensor::from_vec(a.shape(), out)
}

pub fn bias_chan(x: &Tensor, b: &Tensor) -> Tensor {
    let (bs, c) = (x.shape()[0], x.shape()[1]);
    let inner: usize = x.shape()[2..].iter().product();
    assert_eq!(b.len(), c);
    let mut out = x.data().to_vec();
    for bi in 0..bs {
        for ci in 0..c {
            let bias = b.data()[ci];
            let off = (bi * c + ci) * inner;
            for v in &mut out[off..off + inner] {
                *v += bias;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn gap(x: &Tensor) -> Tensor {
    let (bs, c) = (x.shape()[0], x.shape()[1]);
    let inner: usize = x.shape()[2..].iter().product();
    let mut out = vec![0.0; bs * c];
    for bi in 0..bs {
        for ci in 0..c {
            let off = (bi * c + ci) * inner;
            let s: f64 = x.data()[off..off + inner].iter().sum();
            out[bi * c + ci] = s / inner as f64;
        }
    }
    Tensor::from_vec(&[bs, c], out)
}

/// Norm floor: a stream whose features pool to an exactly-zero vector (an
/// all-zero frame difference does this at init) must yield a zero code, not
/// NaN. The strict degenerate-input error stays on the public API.
pub(crate) const COSINE_NORM_FLOOR: f64 = 1e-12;

pub fn row_cosine(v: &Tensor, p: &Tensor) -> Tensor {
    let (bs, c) = (v.shape()[0], v.shape()[1]);
    let (k, c2) = (p.shape()[0], p.shape()[1]);
    assert_eq!(c, c2);
    let pn: Vec<f64> = (0..k)
        .map(|i| crate::tensor::norm(&p.data()[i * c..(i + 1) * c]).max(COSINE_NORM_FLOOR))
        .collect();
    let mut out = vec![0.0; bs * k];
    for bi in 0..bs {
        let vr = &v.data()[bi * c..(bi + 1) * c];
        let vn = crate::tensor::norm(vr).max(COSINE_NORM_FLOOR);
        for ki in 0..k {
            let pr = &p.data()[ki * c..(ki + 1) * c];
            out[bi * k + ki] = crate::tensor::dot(vr, pr) / (vn * pn[ki]);
        }
    }
    Tensor::from_vec(&[bs, k], out)
}

pub fn slice_cols(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (bs, k) = (x.shape()[0], x.shape()[1]);
    assert!(start + len <= k);
    let mut out = Vec::with_capacity(bs * len);
    for bi in 0..bs {
        out.extend_from_slice(&x.data()[bi * k + start..bi * k + start + len]);
    }
    Tensor::from_vec(&[bs, len], out)
}

pub fn slice_mid(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (bs, k, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert!(start + len <= k);
    let mut out = Vec::with_capacity(bs * len * c);
    for bi in 0..bs {
        let off = (bi * k + start) * c;
        out.extend_from_slice(&x.data()[off..off + len * c]);
    }
    Tensor::from_vec(&[bs, len, c], out)
}

/// Row-wise `-sum_k target[k] * log softmax(logits/tau)[k]`, summed over rows.
pub fn ce_fixed_target(logits: &Tensor, target: &Tensor, tau: f64) -> Tensor {
    assert_eq!(logits.shape(), target.shape());
    let (bs, k) = (logits.shape()[0], logits.shape()[1]);
    let mut total = 0.0;
    for bi in 0..bs {
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let trow = &target.data()[bi * k..(bi + 1) * k];
        let zmax = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) / tau;
        let lse = zmax
            + libm::log(row.iter().map(|&z| libm::exp(z / tau - zmax)).sum::<f64>());
        for ki in 0..k {
            total += trow[ki] * (lse - row[ki] / tau);
        }
    }
    Tensor::scalar(total)
}

pub fn to_tokens(x: &Tensor) -> Tensor {
    let (bs, c) = (x.shape()[0], x.shape()[1]);
    let n: usize = x.shape()[2..].iter().product();
    let mut out = vec![0.0; bs * n * c];
    for bi in 0..bs {
        for ci in 0..c {
            let src = (bi * c + ci) * n;
            for ni in 0..n {
                out[(bi * n + ni) * c + ci] = x.data()[src + ni];
            }
        }
    }
    Tensor::from_vec(&[bs, n, c], out)
}

pub fn tok_lin(t: &Tensor, m: &Tensor) -> Tensor {
    let (bs, n, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (c2, co) = (m.shape()[0], m.shape()[1]);
    assert_eq!(c, c2);
    let mut out = vec![0.0; bs * n * co];
    for bi in 0..bs {
        for ni in 0..n {
            let trow = &t.data()[(bi * n + ni) * c..(bi * n + ni + 1) * c];
            let orow = &mut out[(bi * n + ni) * co..(bi * n + ni + 1) * co];
            for ci in 0..c {
                let tv = trow[ci];
                if tv == 0.0 {
                    continue;
                }
                let mrow = &m.data()[ci * co..(ci + 1) * co];
                for oi in 0..co {
                    orow[oi] += tv * mrow[oi];
                }
            }
        }
    }
    Tensor::from_vec(&[bs, n, co], out)
}

pub fn attn_scores(q: &Tensor, k: &Tensor) -> Tensor {
    let (kq, ca) = (q.shape()[0], q.shape()[1]);
    let (bs, n, ca2) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    assert_eq!(ca, ca2);
    let scale = 1.0 / libm::sqrt(ca as f64);
    let mut out = vec![0.0; bs * kq * n];
    for bi in 0..bs {
        for qi in 0..kq {
            let qr = &q.data()[qi * ca..(qi + 1) * ca];
            for ni in 0..n {
                let kr = &k.data()[(bi * n + ni) * ca..(bi * n + ni + 1) * ca];
                out[(bi * kq + qi) * n + ni] = crate::tensor::dot(qr, kr) * scale;
            }
        }
    }
    Tensor::from_vec(&[bs, kq, n], out)
}

pub fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - m);
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn attn_apply(w: &Tensor, v: &Tensor) -> Tensor {
    let (bs, k, n) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (bs2, n2, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    assert_eq!(bs, bs2);
    assert_eq!(n, n2);
    let mut out = vec![0.0; bs * k * c];
    for bi in 0..bs {
        for ki in 0..k {
            let orow = &mut out[(bi * k + ki) * c..(bi * k + ki + 1) * c];
            for ni in 0..n {
                let wv = w.data()[(bi * k + ki) * n + ni];
                if wv == 0.0 {
                    continue;
                }
                let vrow = &v.data()[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                for ci in 0..c {
                    orow[ci] += wv * vrow[ci];
                }
            }
        }
    }
    Tensor::from_vec(&[bs, k, c], out)
}

pub fn add_bcast_mat(x: &Tensor, m: &Tensor) -> Tensor {
    let (bs, k, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(m.shape(), &[k, c]);
    let mut out = x.data().to_vec();
    for bi in 0..bs {
        for (o, mv) in out[bi * k * c..(bi + 1) * k * c].iter_mut().zip(m.data()) {
            *o += mv;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn local_margin(a: &Tensor, b: &Tensor, idx: &[Vec<usize>], margin: f64) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let (bs, k, c) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    assert_eq!(idx.len(), bs);
    let mut total = 0.0;
    for i in 0..bs {
        for &ki in &idx[i] {
            debug_assert!(ki < k);
            let ar = &a.data()[(i * k + ki) * c..(i * k + ki + 1) * c];
            let br = &b.data()[(i * k + ki) * c..(i * k + ki + 1) * c];
            total += sq_dist(ar, br);
            for j in 0..bs {
                if j == i {
                    continue;
                }
                let nr = &b.data()[(j * k + ki) * c..(j * k + ki + 1) * c];
                let d = libm::sqrt(sq_dist(ar, nr));
                let h = margin - d;
                if h > 0.0 {
                    total += h * h;
                }
            }
        }
    }
    Tensor::scalar(total)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) const RMS_EPS: f64 = 1e-6;

/// Feature normalization on `[B,C,T,H,W]`: center each position across
/// channels, then divide the whole sample by its global RMS. Parameter-free.
/// Centering removes the shared positive component relu leaves behind
/// (cosine codes would otherwise crowd into a narrow band); the single
/// per-sample scale pins feature norms - so the cosine-invariant losses
/// cannot drift them - while preserving the relative magnitudes across
/// positions that carry motion strength.
pub fn rms_norm_chan(x: &Tensor) -> Tensor {
    let (bs, c) = (x.shape()[0], x.shape()[1]);
    let inner: usize = x.shape()[2..].iter().product();
    let m = (c * inner) as f64;
    let mut out = vec![0.0; x.len()];
    for bi in 0..bs {
        let base = bi * c * inner;
        // center per position
        for pos in 0..inner {
            let mut mean = 0.0;
            for ci in 0..c {
                mean += x.data()[base + ci * inner + pos];
            }
            mean /= c as f64;
            for ci in 0..c {
                let idx = base + ci * inner + pos;
                out[idx] = x.data()[idx] - mean;
            }
        }
        // one scale for the whole sample
        let ms: f64 = out[base..base + c * inner].iter().map(|v| v * v).sum();
        let r = libm::sqrt(ms / m + RMS_EPS);
        for v in &mut out[base..base + c * inner] {
            *v /= r;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

// --------------------------------------------------------------- backward --

/// Gradient contributions for every parent of a node, in parent order.
pub fn backward(
    op: &Op,
    value: &Tensor,
    grad: &Tensor,
    parents: &[&Tensor],
    exec: &dyn ParallelFor,
) -> Vec<Tensor> {
    match op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![grad.clone(), grad.clone()],
        Op::Sub => {
            let mut neg = grad.clone();
            neg.scale(-1.0);
            vec![grad.clone(), neg]
        }
        Op::Scale(c) => {
            let mut g = grad.clone();
            g.scale(*c);
            vec![g]
        }
        Op::Relu => {
            let x = parents[0];
            let data = x
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                .collect();
            vec![Tensor::from_vec(x.shape(), data)]
        }
        Op::MatMul => backward_matmul(grad, parents),
        Op::AddRowVec => {
            let n = *parents[0].shape().last().unwrap();
            let mut gv = vec![0.0; n];
            for row in grad.data().chunks(n) {
                for (g, r) in gv.iter_mut().zip(row) {
                    *g += r;
                }
            }
            vec![grad.clone(), Tensor::from_vec(&[n], gv)]
        }
        Op::Conv3d { stride, pad } => {
            let (dx, dw) = conv::conv3d_backward(exec, parents[0], parents[1], grad, *stride, *pad);
            vec![dx, dw]
        }
        Op::BiasChan => {
            let (bs, c) = (parents[0].shape()[0], parents[0].shape()[1]);
            let inner: usize = parents[0].shape()[2..].iter().product();
            let mut gb = vec![0.0; c];
            for bi in 0..bs {
                for ci in 0..c {
                    let off = (bi * c + ci) * inner;
                    gb[ci] += grad.data()[off..off + inner].iter().sum::<f64>();
                }
            }
            vec![grad.clone(), Tensor::from_vec(&[c], gb)]
        }
        Op::Gap => {
            let x = parents[0];
            let (bs, c) = (x.shape()[0], x.shape()[1]);
            let inner: usize = x.shape()[2..].iter().product();
            let mut gx = vec![0.0; x.len()];
            for bi in 0..bs {
                for ci in 0..c {
                    let g = grad.data()[bi * c + ci] / inner as f64;
                    let off = (bi * c + ci) * inner;
                    for v in &mut gx[off..off + inner] {
                        *v = g;
                    }
                }
            }
            vec![Tensor::from_vec(x.shape(), gx)]
        }
        Op::RowCosine => backward_row_cosine(value, grad, parents),
        Op::SliceCols { start, len } => {
            let x = parents[0];
            let (bs, k) = (x.shape()[0], x.shape()[1]);
            let mut gx = vec![0.0; x.len()];
            for bi in 0..bs {
                for li in 0..*len {
                    gx[bi * k + start + li] = grad.data()[bi * len + li];
                }
            }
            vec![Tensor::from_vec(x.shape(), gx)]
        }
        Op::SliceMid { start, len } => {
            let x = parents[0];
            let (bs, k, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let mut gx = vec![0.0; x.len()];
            for bi in 0..bs {
                let dst = (bi * k + start) * c;
                let src = bi * len * c;
                gx[dst..dst + len * c].copy_from_slice(&grad.data()[src..src + len * c]);
            }
            vec![Tensor::from_vec(x.shape(), gx)]
        }
        Op::CeFixedTarget { tau, target } => {
            let logits = parents[0];
            let (bs, k) = (logits.shape()[0], logits.shape()[1]);
            let g = grad.item();
            let sm = softmax_last(&{
                let mut z = logits.clone();
                z.scale(1.0 / tau);
                z
            });
            let mut gx = vec![0.0; logits.len()];
            for bi in 0..bs {
                let trow = &target.data()[bi * k..(bi + 1) * k];
                let tsum: f64 = trow.iter().sum();
                for ki in 0..k {
                    gx[bi * k + ki] =
                        g * (sm.data()[bi * k + ki] * tsum - trow[ki]) / tau;
                }
            }
            vec![Tensor::from_vec(logits.shape(), gx)]
        }
        Op::L1Sum => {
            let x = parents[0];
            let g = grad.item();
            let data = x
                .data()
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .collect();
            vec![Tensor::from_vec(x.shape(), data)]
        }
        Op::SqSum => {
            let x = parents[0];
            let g = grad.item();
            let data = x.data().iter().map(|&v| 2.0 * v * g).collect();
            vec![Tensor::from_vec(x.shape(), data)]
        }
        Op::ToTokens => {
            let x = parents[0];
            let (bs, c) = (x.shape()[0], x.shape()[1]);
            let n: usize = x.shape()[2..].iter().product();
            let mut gx = vec![0.0; x.len()];
            for bi in 0..bs {
                for ci in 0..c {
                    let dst = (bi * c + ci) * n;
                    for ni in 0..n {
                        gx[dst + ni] = grad.data()[(bi * n + ni) * c + ci];
                    }
                }
            }
            vec![Tensor::from_vec(x.shape(), gx)]
        }
        Op::TokLin => backward_tok_lin(grad, parents),
        Op::AttnScores => backward_attn_scores(grad, parents),
        Op::SoftmaxLast => {
            let n = *value.shape().last().unwrap();
            let mut gx = vec![0.0; value.len()];
            for (ri, (prow, grow)) in value
                .data()
                .chunks(n)
                .zip(grad.data().chunks(n))
                .enumerate()
            {
                let inner: f64 = prow.iter().zip(grow).map(|(p, g)| p * g).sum();
                for ni in 0..n {
                    gx[ri * n + ni] = prow[ni] * (grow[ni] - inner);
                }
            }
            vec![Tensor::from_vec(value.shape(), gx)]
        }
        Op::AttnApply => backward_attn_apply(grad, parents),
        Op::AddBcastMat => {
            let (bs, k, c) = (parents[0].shape()[0], parents[0].shape()[1], parents[0].shape()[2]);
            let mut gm = vec![0.0; k * c];
            for bi in 0..bs {
                for (g, s) in gm.iter_mut().zip(&grad.data()[bi * k * c..(bi + 1) * k * c]) {
                    *g += s;
                }
            }
            vec![grad.clone(), Tensor::from_vec(&[k, c], gm)]
        }
        Op::LocalMargin { lambda, idx } => backward_local_margin(grad, parents, idx, *lambda),
        Op::RmsNormChan => {
            let x = parents[0];
            let (bs, c) = (x.shape()[0], x.shape()[1]);
            let inner: usize = x.shape()[2..].iter().product();
            let m = (c * inner) as f64;
            let mut gx = vec![0.0; x.len()];
            for bi in 0..bs {
                let base = bi * c * inner;
                // recompute centered values and the sample scale
                let mut z = vec![0.0; c * inner];
                for pos in 0..inner {
                    let mut mean = 0.0;
                    for ci in 0..c {
                        mean += x.data()[base + ci * inner + pos];
                    }
                    mean /= c as f64;
                    for ci in 0..c {
                        z[ci * inner + pos] = x.data()[base + ci * inner + pos] - mean;
                    }
                }
                let ms: f64 = z.iter().map(|v| v * v).sum();
                let r2 = ms / m + RMS_EPS;
                let r = libm::sqrt(r2);
                // d/dz of y = z/r with r a function of all z
                let mut s = 0.0;
                for i in 0..c * inner {
                    s += grad.data()[base + i] * z[i] / r;
                }
                let mut gz = vec![0.0; c * inner];
                for i in 0..c * inner {
                    let y = z[i] / r;
                    gz[i] = (grad.data()[base + i] - y * s / m) / r;
                }
                // backward through per-position centering
                for pos in 0..inner {
                    let mut gmean = 0.0;
                    for ci in 0..c {
                        gmean += gz[ci * inner + pos];
                    }
                    gmean /= c as f64;
                    for ci in 0..c {
                        gx[base + ci * inner + pos] = gz[ci * inner + pos] - gmean;
                    }
                }
            }
            vec![Tensor::from_vec(x.shape(), gx)]
        }
    }
}

fn backward_matmul(grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
    let (a, b) = (parents[0], parents[1]);
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    // dA = G @ B^T
    let mut ga = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..n {
            let g = grad.data()[i * n + j];
            if g == 0.0 {
                continue;
            }
            for p in 0..k {
                ga[i * k + p] += g * b.data()[p * n + j];
            }
        }
    }
    // dB = A^T @ G
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let grow = &grad.data()[i * n..(i + 1) * n];
            let brow = &mut gb[p * n..(p + 1) * n];
            for j in 0..n {
                brow[j] += av * grow[j];
            }
        }
    }
    vec![Tensor::from_vec(&[m, k], ga), Tensor::from_vec(&[k, n], gb)]
}

fn backward_row_cosine(value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
    let (v, p) = (parents[0], parents[1]);
    let (bs, c) = (v.shape()[0], v.shape()[1]);
    let k = p.shape()[0];
    let pn: Vec<f64> = (0..k)
        .map(|i| crate::tensor::norm(&p.data()[i * c..(i + 1) * c]).max(COSINE_NORM_FLOOR))
        .collect();
    let mut gv = vec![0.0; v.len()];
    let mut gp = vec![0.0; p.len()];
    for bi in 0..bs {
        let vr = &v.data()[bi * c..(bi + 1) * c];
        let vn = crate::tensor::norm(vr).max(COSINE_NORM_FLOOR);
        for ki in 0..k {
            let g = grad.data()[bi * k + ki];
            if g == 0.0 {
                continue;
            }
            let cos = value.data()[bi * k + ki];
            let pr = &p.data()[ki * c..(ki + 1) * c];
            for ci in 0..c {
                let u = vr[ci] / vn;
                let w = pr[ci] / pn[ki];
                gv[bi * c + ci] += g * (w - cos * u) / vn;
                gp[ki * c + ci] += g * (u - cos * w) / pn[ki];
            }
        }
    }
    vec![Tensor::from_vec(v.shape(), gv), Tensor::from_vec(p.shape(), gp)]
}

fn backward_tok_lin(grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
    let (t, m) = (parents[0], parents[1]);
    let (bs, n, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let co = m.shape()[1];
    let mut gt = vec![0.0; t.len()];
    let mut gm = vec![0.0; m.len()];
    for bi in 0..bs {
        for ni in 0..n {
            let grow = &grad.data()[(bi * n + ni) * co..(bi * n + ni + 1) * co];
            let trow = &t.data()[(bi * n + ni) * c..(bi * n + ni + 1) * c];
            let gtrow = &mut gt[(bi * n + ni) * c..(bi * n + ni + 1) * c];
            for ci in 0..c {
                let mrow = &m.data()[ci * co..(ci + 1) * co];
                gtrow[ci] += crate::tensor::dot(grow, mrow);
                let tv = trow[ci];
                if tv == 0.0 {
                    continue;
                }
                let gmrow = &mut gm[ci * co..(ci + 1) * co];
                for oi in 0..co {
                    gmrow[oi] += tv * grow[oi];
                }
            }
        }
    }
    vec![Tensor::from_vec(t.shape(), gt), Tensor::from_vec(m.shape(), gm)]
}

fn backward_attn_scores(grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
    let (q, k) = (parents[0], parents[1]);
    let (kq, ca) = (q.shape()[0], q.shape()[1]);
    let (bs, n) = (k.shape()[0], k.shape()[1]);
    let scale = 1.0 / libm::sqrt(ca as f64);
    let mut gq = vec![0.0; q.len()];
    let mut gk = vec![0.0; k.len()];
    for bi in 0..bs {
        for qi in 0..kq {
            let qr = &q.data()[qi * ca..(qi + 1) * ca];
            let gqr_off = qi * ca;
            for ni in 0..n {
                let g = grad.data()[(bi * kq + qi) * n + ni] * scale;
                if g == 0.0 {
                    continue;
                }
                let kr = &k.data()[(bi * n + ni) * ca..(bi * n + ni + 1) * ca];
                let gkr = (bi * n + ni) * ca;
                for ci in 0..ca {
                    gq[gqr_off + ci] += g * kr[ci];
                    gk[gkr + ci] += g * qr[ci];
                }
            }
        }
    }
    vec![Tensor::from_vec(q.shape(), gq), Tensor::from_vec(k.shape(), gk)]
}

fn backward_attn_apply(grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
    let (w, v) = (parents[0], parents[1]);
    let (bs, kq, n) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let c = v.shape()[2];
    let mut gw = vec![0.0; w.len()];
    let mut gv = vec![0.0; v.len()];
    for bi in 0..bs {
        for ki in 0..kq {
            let grow = &grad.data()[(bi * kq + ki) * c..(bi * kq + ki + 1) * c];
            for ni in 0..n {
                let vrow = &v.data()[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                gw[(bi * kq + ki) * n + ni] += crate::tensor::dot(grow, vrow);
                let wv = w.data()[(bi * kq + ki) * n + ni];
                if wv == 0.0 {
                    continue;
                }
                let gvrow = &mut gv[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                for ci in 0..c {
                    gvrow[ci] += wv * grow[ci];
                }
            }
        }
    }
    vec![Tensor::from_vec(w.shape(), gw), Tensor::from_vec(v.shape(), gv)]
}

fn backward_local_margin(
    grad: &Tensor,
    parents: &[&Tensor],
    idx: &[Vec<usize>],
    margin: f64,
) -> Vec<Tensor> {
    let (a, b) = (parents[0], parents[1]);
    let (bs, k, c) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let g = grad.item();
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for i in 0..bs {
        for &ki in &idx[i] {
            let ao = (i * k + ki) * c;
            let bo = (i * k + ki) * c;
            let ar = &a.data()[ao..ao + c];
            let br = &b.data()[bo..bo + c];
            // positive term: ||a - b||^2
            for ci in 0..c {
                let d = 2.0 * g * (ar[ci] - br[ci]);
                ga[ao + ci] += d;
                gb[bo + ci] -= d;
            }
            // hinge over negatives: max(margin - ||a_i - b_j||, 0)^2
            for j in 0..bs {
                if j == i {
                    continue;
                }
                let no = (j * k + ki) * c;
                let nr = &b.data()[no..no + c];
                let d = libm::sqrt(sq_dist(ar, nr));
                let h = margin - d;
                // subgradient convention: zero at the kink (h == 0) and at
                // coincident points (d == 0)
                if h > 0.0 && d > 0.0 {
                    let coef = -2.0 * g * h / d;
                    for ci in 0..c {
                        let diff = ar[ci] - nr[ci];
                        ga[ao + ci] += coef * diff;
                        gb[no + ci] -= coef * diff;
                    }
                }
            }
        }
    }
    vec![Tensor::from_vec(a.shape(), ga), Tensor::from_vec(b.shape(), gb)]
}
