//! 3D convolution kernels, batched over the leading sample axis.
//!
//! The per-sample output blocks are disjoint, so the executor may schedule
//! them in any order; weight gradients are reduced sample-by-sample in index
//! order to keep results bit-identical under any thread count.

use alloc::vec;

use crate::exec::ParallelFor;
use crate::tensor::Tensor;

pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Valid output range along one axis so that the input index
/// `o*stride + k - pad` stays inside `[0, in_len)`.
fn out_range(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi_in = in_len + pad;
    if hi_in <= k {
        return (0, 0);
    }
    let hi = ((hi_in - k - 1) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub fn conv3d_forward(
    exec: &dyn ParallelFor,
    x: &Tensor,
    w: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor {
    let (bs, ci, ti, hi, wi) =
        (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]);
    let (co, ci2, kt, kh, kw) =
        (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3], w.shape()[4]);
    assert_eq!(ci, ci2, "conv3d channel mismatch");
    let to = out_extent(ti, kt, stride[0], pad[0]);
    let ho = out_extent(hi, kh, stride[1], pad[1]);
    let wo = out_extent(wi, kw, stride[2], pad[2]);
    let sample_out = co * to * ho * wo;
    let sample_in = ci * ti * hi * wi;
    let mut out = vec![0.0; bs * sample_out];

    let xd = x.data();
    let wd = w.data();
    exec.run_chunks(&mut out, sample_out, &|b, ob| {
        let xb = &xd[b * sample_in..(b + 1) * sample_in];
        for coi in 0..co {
            for cii in 0..ci {
                for kti in 0..kt {
                    let (t0, t1) = out_range(to, ti, kti, stride[0], pad[0]);
                    for khi in 0..kh {
                        let (h0, h1) = out_range(ho, hi, khi, stride[1], pad[1]);
                        for kwi in 0..kw {
                            let (w0, w1) = out_range(wo, wi, kwi, stride[2], pad[2]);
                            let wt = wd[(((coi * ci + cii) * kt + kti) * kh + khi) * kw + kwi];
                            if wt == 0.0 || w1 <= w0 {
                                continue;
                            }
                            for toi in t0..t1 {
                                let tii = toi * stride[0] + kti - pad[0];
                                for hoi in h0..h1 {
                                    let hii = hoi * stride[1] + khi - pad[1];
                                    let xrow = ((cii * ti + tii) * hi + hii) * wi;
                                    let orow = ((coi * to + toi) * ho + hoi) * wo;
                                    let mut wii = w0 * stride[2] + kwi - pad[2];
                                    for woi in w0..w1 {
                                        ob[orow + woi] += wt * xb[xrow + wii];
                                        wii += stride[2];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(&[bs, co, to, ho, wo], out)
}

/// Returns (d_input, d_weight).
pub fn conv3d_backward(
    exec: &dyn ParallelFor,
    x: &Tensor,
    w: &Tensor,
    grad: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Tensor, Tensor) {
    let (bs, ci, ti, hi, wi) =
        (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]);
    let (co, _, kt, kh, kw) =
        (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3], w.shape()[4]);
    let (to, ho, wo) = (grad.shape()[2], grad.shape()[3], grad.shape()[4]);
    let sample_out = co * to * ho * wo;
    let sample_in = ci * ti * hi * wi;
    let wlen = w.len();

    let xd = x.data();
    let wd = w.data();
    let gd = grad.data();

    // d_input: per-sample disjoint chunks
    let mut gx = vec![0.0; x.len()];
    exec.run_chunks(&mut gx, sample_in, &|b, gxb| {
        let gb = &gd[b * sample_out..(b + 1) * sample_out];
        for coi in 0..co {
            for cii in 0..ci {
                for kti in 0..kt {
                    let (t0, t1) = out_range(to, ti, kti, stride[0], pad[0]);
                    for khi in 0..kh {
                        let (h0, h1) = out_range(ho, hi, khi, stride[1], pad[1]);
                        for kwi in 0..kw {
                            let (w0, w1) = out_range(wo, wi, kwi, stride[2], pad[2]);
                            let wt = wd[(((coi * ci + cii) * kt + kti) * kh + khi) * kw + kwi];
                            if wt == 0.0 || w1 <= w0 {
                                continue;
                            }
                            for toi in t0..t1 {
                                let tii = toi * stride[0] + kti - pad[0];
                                for hoi in h0..h1 {
                                    let hii = hoi * stride[1] + khi - pad[1];
                                    let xrow = ((cii * ti + tii) * hi + hii) * wi;
                                    let orow = ((coi * to + toi) * ho + hoi) * wo;
                                    let mut wii = w0 * stride[2] + kwi - pad[2];
                                    for woi in w0..w1 {
                                        gxb[xrow + wii] += wt * gb[orow + woi];
                                        wii += stride[2];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    // d_weight: per-sample partials, then an ordered reduction
    let mut partials = vec![0.0; bs * wlen];
    exec.run_chunks(&mut partials, wlen, &|b, dwb| {
        let xb = &xd[b * sample_in..(b + 1) * sample_in];
        let gb = &gd[b * sample_out..(b + 1) * sample_out];
        for coi in 0..co {
            for cii in 0..ci {
                for kti in 0..kt {
                    let (t0, t1) = out_range(to, ti, kti, stride[0], pad[0]);
                    for khi in 0..kh {
                        let (h0, h1) = out_range(ho, hi, khi, stride[1], pad[1]);
                        for kwi in 0..kw {
                            let (w0, w1) = out_range(wo, wi, kwi, stride[2], pad[2]);
                            if w1 <= w0 {
                                continue;
                            }
                            let mut acc = 0.0;
                            for toi in t0..t1 {
                                let tii = toi * stride[0] + kti - pad[0];
                                for hoi in h0..h1 {
                                    let hii = hoi * stride[1] + khi - pad[1];
                                    let xrow = ((cii * ti + tii) * hi + hii) * wi;
                                    let orow = ((coi * to + toi) * ho + hoi) * wo;
                                    let mut wii = w0 * stride[2] + kwi - pad[2];
                                    for woi in w0..w1 {
                                        acc += xb[xrow + wii] * gb[orow + woi];
                                        wii += stride[2];
                                    }
                                }
                            }
                            dwb[(((coi * ci + cii) * kt + kti) * kh + khi) * kw + kwi] = acc;
                        }
                    }
                }
            }
        }
    });
    let mut gw = vec![0.0; wlen];
    for b in 0..bs {
        for (g, p) in gw.iter_mut().zip(&partials[b * wlen..(b + 1) * wlen]) {
            *g += p;
        }
    }

    (Tensor::from_vec(x.shape(), gx), Tensor::from_vec(w.shape(), gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Seq;
    use crate::rng::Rng;

    /// Scalar-loop reference convolution, no tricks.
    fn conv3d_naive(x: &Tensor, w: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> Tensor {
        let (bs, ci, ti, hi, wi) =
            (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[4]);
        let (co, _, kt, kh, kw) =
            (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3], w.shape()[4]);
        let to = out_extent(ti, kt, stride[0], pad[0]);
        let ho = out_extent(hi, kh, stride[1], pad[1]);
        let wo = out_extent(wi, kw, stride[2], pad[2]);
        let mut out = Tensor::zeros(&[bs, co, to, ho, wo]);
        for b in 0..bs {
            for coi in 0..co {
                for toi in 0..to {
                    for hoi in 0..ho {
                        for woi in 0..wo {
                            let mut acc = 0.0;
                            for cii in 0..ci {
                                for kti in 0..kt {
                                    for khi in 0..kh {
                                        for kwi in 0..kw {
                                            let tii = (toi * stride[0] + kti) as isize - pad[0] as isize;
                                            let hii = (hoi * stride[1] + khi) as isize - pad[1] as isize;
                                            let wii = (woi * stride[2] + kwi) as isize - pad[2] as isize;
                                            if tii < 0 || hii < 0 || wii < 0 {
                                                continue;
                                            }
                                            let (tii, hii, wii) = (tii as usize, hii as usize, wii as usize);
                                            if tii >= ti || hii >= hi || wii >= wi {
                                                continue;
                                            }
                                            acc += x.data()[(((b * ci + cii) * ti + tii) * hi + hii) * wi + wii]
                                                * w.data()[(((coi * ci + cii) * kt + kti) * kh + khi) * kw + kwi];
                                        }
                                    }
                                }
                            }
                            out.data_mut()[(((b * co + coi) * to + toi) * ho + hoi) * wo + woi] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_reference() {
        let mut rng = Rng::new(99);
        for (stride, pad) in [
            ([1, 1, 1], [0, 0, 0]),
            ([1, 2, 2], [1, 1, 1]),
            ([2, 2, 2], [1, 1, 1]),
            ([1, 4, 4], [1, 1, 1]),
        ] {
            let x = Tensor::randn(&[2, 3, 5, 9, 9], 1.0, &mut rng);
            let w = Tensor::randn(&[4, 3, 3, 3, 3], 0.5, &mut rng);
            let fast = conv3d_forward(&Seq, &x, &w, stride, pad);
            let slow = conv3d_naive(&x, &w, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10, "stride {stride:?} pad {pad:?}: {a} vs {b}");
            }
        }
    }

    fn weighted_sum(o: &Tensor, lw: &Tensor) -> f64 {
        o.data().iter().zip(lw.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let x = Tensor::randn(&[2, 2, 4, 5, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 3, 3, 3], 0.5, &mut rng);
        let stride = [1, 2, 2];
        let pad = [1, 1, 1];
        let out = conv3d_forward(&Seq, &x, &w, stride, pad);
        // loss = fixed pseudo-random weighting of the outputs, so the
        // upstream gradient handed to backward is exactly `lw`
        let lw = Tensor::randn(out.shape(), 1.0, &mut rng);
        let (gx, gw) = conv3d_backward(&Seq, &x, &w, &lw, stride, pad);

        let eps = 1e-6;
        let check = |t: &Tensor, g: &Tensor, is_x: bool, index: usize| {
            let mut tp = t.clone();
            tp.data_mut()[index] += eps;
            let lp = if is_x {
                weighted_sum(&conv3d_forward(&Seq, &tp, &w, stride, pad), &lw)
            } else {
                weighted_sum(&conv3d_forward(&Seq, &x, &tp, stride, pad), &lw)
            };
            tp.data_mut()[index] -= 2.0 * eps;
            let lm = if is_x {
                weighted_sum(&conv3d_forward(&Seq, &tp, &w, stride, pad), &lw)
            } else {
                weighted_sum(&conv3d_forward(&Seq, &x, &tp, stride, pad), &lw)
            };
            let fd = (lp - lm) / (2.0 * eps);
            let an = g.data()[index];
            assert!(
                (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8) < 1e-5,
                "fd {fd} vs analytic {an} at {index}"
            );
        };
        let mut rr = Rng::new(17);
        for _ in 0..20 {
            check(&x, &gx, true, rr.below(x.len()));
            check(&w, &gw, false, rr.below(w.len()));
        }
    }
}
