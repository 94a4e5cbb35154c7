//! Downstream evaluation: linear probe, retrieval, code-similarity heatmaps
//! and attention overlays.
//!
//! Features come from a trained model's inference pass on center-cropped
//! clips. Code-vector sources use the concept code (or one of its slices);
//! local-feature sources average the rows picked by the top-10% of the
//! matching code slice.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::ParallelFor;
use crate::model::{ClipFeatures, ConceptModel};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::ClipSource;
use crate::video::{make_frame_difference, make_static_frame, CropSpec, VideoClip};

/// Which output of the framework feeds the classifier / retrieval index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    V,
    Qv,
    QvStatic,
    QvDynamic,
    Fv,
    FvStatic,
    FvDynamic,
}

impl FeatureSource {
    pub fn parse(tag: &str) -> Result<Self> {
        Ok(match tag {
            "v" => FeatureSource::V,
            "q_v" => FeatureSource::Qv,
            "q_v_s" | "q_v^s" => FeatureSource::QvStatic,
            "q_v_d" | "q_v^d" => FeatureSource::QvDynamic,
            "f_v" => FeatureSource::Fv,
            "f_v_s" | "f_v^s" => FeatureSource::FvStatic,
            "f_v_d" | "f_v^d" => FeatureSource::FvDynamic,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown feature source '{tag}' (expected one of v, q_v, q_v_s, q_v_d, f_v, f_v_s, f_v_d)"
                )))
            }
        })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FeatureSource::V => "v",
            FeatureSource::Qv => "q_v",
            FeatureSource::QvStatic => "q_v_s",
            FeatureSource::QvDynamic => "q_v_d",
            FeatureSource::Fv => "f_v",
            FeatureSource::FvStatic => "f_v_s",
            FeatureSource::FvDynamic => "f_v_d",
        }
    }
}

/// Which label a probe predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Static,
    Dynamic,
    /// Joint (static, dynamic) class.
    Action,
}

impl LabelKind {
    pub fn parse(tag: &str) -> Result<Self> {
        Ok(match tag {
            "static" => LabelKind::Static,
            "dynamic" => LabelKind::Dynamic,
            "action" | "joint" => LabelKind::Action,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown label kind '{tag}' (expected static, dynamic or action)"
                )))
            }
        })
    }
}

/// Count of concepts kept by the top-fraction filter (at least one).
pub fn top_fraction_count(k: usize, frac: f64) -> usize {
    (libm::round(k as f64 * frac) as usize).clamp(1, k)
}

/// Average the local-feature rows picked by the top fraction of `code`.
fn filtered_mean(code: &[f64], rows: &Tensor, row_offset: usize, frac: f64) -> Vec<f64> {
    let c = rows.shape()[1];
    let n = top_fraction_count(code.len(), frac);
    let mut order: Vec<usize> = (0..code.len()).collect();
    order.sort_by(|&a, &b| {
        code[b].partial_cmp(&code[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut mean = alloc::vec![0.0f64; c];
    for &k in order.iter().take(n) {
        let row = &rows.data()[(row_offset + k) * c..(row_offset + k + 1) * c];
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Compose one source's feature vector from a clip's inference outputs.
pub fn feature_from_clip(
    feats: &ClipFeatures,
    source: FeatureSource,
    k_s: usize,
    k_d: usize,
    top_frac: f64,
) -> Vec<f64> {
    match source {
        FeatureSource::V => feats.v.clone(),
        FeatureSource::Qv => feats.q_v.clone(),
        FeatureSource::QvStatic => feats.q_v[..k_s].to_vec(),
        FeatureSource::QvDynamic => feats.q_v[k_s..k_s + k_d].to_vec(),
        FeatureSource::Fv => filtered_mean(&feats.q_v, &feats.f_v, 0, top_frac),
        FeatureSource::FvStatic => filtered_mean(&feats.q_v[..k_s], &feats.f_v, 0, top_frac),
        FeatureSource::FvDynamic => {
            filtered_mean(&feats.q_v[k_s..k_s + k_d], &feats.f_v, k_s, top_frac)
        }
    }
}

/// Center crop spec (no flip).
pub fn center_crop(clip: &VideoClip, crop: Option<[usize; 3]>) -> CropSpec {
    match crop {
        None => CropSpec::full(clip),
        Some([t, h, w]) => CropSpec { t, h, w, flip: false },
    }
}

/// Apply a center crop (no flip) to a clip.
pub fn center_crop_clip(clip: &VideoClip, crop: Option<[usize; 3]>) -> Result<VideoClip> {
    let spec = center_crop(clip, crop);
    if spec.t > clip.t || spec.h > clip.h || spec.w > clip.w {
        return Err(Error::InvalidInput("eval crop larger than clip".into()));
    }
    let t0 = (clip.t - spec.t) / 2;
    let y0 = (clip.h - spec.h) / 2;
    let x0 = (clip.w - spec.w) / 2;
    let mut out = VideoClip::new(spec.t, spec.h, spec.w, clip.ch);
    for t in 0..spec.t {
        for y in 0..spec.h {
            for x in 0..spec.w {
                for c in 0..clip.ch {
                    *out.at_mut(t, y, x, c) = clip.at(t0 + t, y0 + y, x0 + x, c);
                }
            }
        }
    }
    Ok(out)
}

/// Deterministic feature matrix `[N, dim]` plus labels for a whole dataset.
pub fn extract_features(
    model: &ConceptModel,
    exec: &dyn ParallelFor,
    dataset: &dyn ClipSource,
    source: FeatureSource,
    crop: Option<[usize; 3]>,
    top_frac: f64,
) -> Result<(Tensor, Vec<(usize, usize)>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let clip = center_crop_clip(&dataset.clip(i)?, crop)?;
        let feats = model.infer_clip(exec, &clip)?;
        rows.push(feature_from_clip(&feats, source, model.cfg.k_s, model.cfg.k_d, top_frac));
        labels.push(dataset.labels(i).unwrap_or((0, 0)));
    }
    let dim = rows[0].len();
    let mut out = Tensor::zeros(&[rows.len(), dim]);
    for (i, r) in rows.iter().enumerate() {
        out.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(r);
    }
    Ok((out, labels))
}

/// Probe outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub source: String,
    pub label_kind: String,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Train/test split settings for the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub train_frac: f64,
    pub split_seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { train_frac: 0.8, split_seed: 17, tol: 1e-6, max_iters: 1500 }
    }
}

/// Multinomial logistic regression on standardized features.
/// Returns test predictions alongside the accuracy so invariance tests can
/// compare decisions directly.
pub struct ProbeOutcome {
    pub accuracy: f64,
    pub test_indices: Vec<usize>,
    pub predictions: Vec<usize>,
}

pub fn linear_probe(features: &Tensor, labels: &[usize], cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    let (n, dim) = (features.shape()[0], features.shape()[1]);
    if labels.len() != n || n < 4 {
        return Err(Error::InvalidInput("probe needs >= 4 labeled rows".into()));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    if n_classes < 2 {
        return Err(Error::InvalidSplit("probe needs >= 2 classes".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(cfg.split_seed, 0x7072_6f62).shuffle(&mut order);
    let n_train = libm::round(n as f64 * cfg.train_frac) as usize;
    let n_train = n_train.clamp(1, n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);
    for class in 0..n_classes {
        if !train_idx.iter().any(|&i| labels[i] == class) {
            return Err(Error::InvalidSplit(format!(
                "class {class} absent from the train split"
            )));
        }
    }

    // standardize on train statistics; scale invariance of the probe follows
    let mut mean = alloc::vec![0.0f64; dim];
    let mut var = alloc::vec![0.0f64; dim];
    for &i in train_idx {
        for j in 0..dim {
            mean[j] += features.data()[i * dim + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_train as f64);
    for &i in train_idx {
        for j in 0..dim {
            let d = features.data()[i * dim + j] - mean[j];
            var[j] += d * d;
        }
    }
    let std: Vec<f64> =
        var.iter().map(|v| libm::sqrt(v / n_train as f64).max(1e-12)).collect();
    let stdized = |i: usize, j: usize| (features.data()[i * dim + j] - mean[j]) / std[j];

    // full-batch gradient descent with backtracking on the softmax CE
    let d1 = dim + 1; // bias column
    let mut w = alloc::vec![0.0f64; d1 * n_classes];
    let probs_of = |w: &[f64], i: usize| -> Vec<f64> {
        let mut z = alloc::vec![0.0f64; n_classes];
        for (c, zc) in z.iter_mut().enumerate() {
            let mut acc = w[dim * n_classes + c]; // bias
            for j in 0..dim {
                acc += stdized(i, j) * w[j * n_classes + c];
            }
            *zc = acc;
        }
        let mx = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for zc in z.iter_mut() {
            *zc = libm::exp(*zc - mx);
            s += *zc;
        }
        z.iter_mut().for_each(|zc| *zc /= s);
        z
    };
    let objective = |w: &[f64]| -> f64 {
        let mut loss = 0.0;
        for &i in train_idx {
            let p = probs_of(w, i);
            loss -= libm::log(p[labels[i]].max(1e-300));
        }
        loss / n_train as f64
    };
    let mut loss = objective(&w);
    let mut lr = 1.0;
    for _ in 0..cfg.max_iters {
        let mut grad = alloc::vec![0.0f64; d1 * n_classes];
        for &i in train_idx {
            let p = probs_of(&w, i);
            for c in 0..n_classes {
                let delta = p[c] - if labels[i] == c { 1.0 } else { 0.0 };
                for j in 0..dim {
                    grad[j * n_classes + c] += delta * stdized(i, j);
                }
                grad[dim * n_classes + c] += delta;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n_train as f64);
        // backtracking line search
        lr = if lr * 2.0 < 1e3 { lr * 2.0 } else { 1e3 };
        let mut tried = w.clone();
        let mut new_loss;
        loop {
            for (t, (wv, gv)) in tried.iter_mut().zip(w.iter().zip(&grad)).enumerate() {
                let _ = t;
                *wv = *gv.0 - lr * *gv.1;
            }
            new_loss = objective(&tried);
            if new_loss <= loss || lr < 1e-12 {
                break;
            }
            lr *= 0.5;
        }
        let rel = (loss - new_loss) / loss.abs().max(1e-12);
        w = tried;
        let done = rel >= 0.0 && rel < cfg.tol;
        loss = new_loss;
        if done {
            break;
        }
    }

    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(test_idx.len());
    for &i in test_idx {
        let p = probs_of(&w, i);
        let pred = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal))
            .map(|(c, _)| c)
            .unwrap_or(0);
        predictions.push(pred);
        if pred == labels[i] {
            correct += 1;
        }
    }
    Ok(ProbeOutcome {
        accuracy: correct as f64 / test_idx.len() as f64,
        test_indices: test_idx.to_vec(),
        predictions,
    })
}

/// Recall@k results, monotone in k by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub recall_at: Vec<(usize, f64)>,
}

/// Rank the gallery by cosine similarity per query; R@k is the fraction of
/// queries with at least one same-label hit in the top k.
pub fn retrieve(
    query: &Tensor,
    gallery: &Tensor,
    query_labels: &[usize],
    gallery_labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalResult> {
    let (nq, dim) = (query.shape()[0], query.shape()[1]);
    let ng = gallery.shape()[0];
    if nq == 0 || ng == 0 {
        return Err(Error::InvalidInput("empty query or gallery".into()));
    }
    if gallery.shape()[1] != dim || query_labels.len() != nq || gallery_labels.len() != ng {
        return Err(Error::InvalidInput("retrieval shape mismatch".into()));
    }
    let mut hits = alloc::vec![0usize; ks.len()];
    for qi in 0..nq {
        let qrow = &query.data()[qi * dim..(qi + 1) * dim];
        let mut sims: Vec<(f64, usize)> = (0..ng)
            .map(|gi| {
                (crate::tensor::cosine(qrow, &gallery.data()[gi * dim..(gi + 1) * dim]), gi)
            })
            .collect();
        sims.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1))
        });
        for (ki, &k) in ks.iter().enumerate() {
            if sims.iter().take(k).any(|&(_, gi)| gallery_labels[gi] == query_labels[qi]) {
                hits[ki] += 1;
            }
        }
    }
    Ok(RetrievalResult {
        recall_at: ks.iter().zip(&hits).map(|(&k, &h)| (k, h as f64 / nq as f64)).collect(),
    })
}

/// Retrieval where every sample queries the rest of the set (self excluded).
pub fn retrieve_leave_one_out(
    features: &Tensor,
    labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalResult> {
    let (n, dim) = (features.shape()[0], features.shape()[1]);
    if n < 2 || labels.len() != n {
        return Err(Error::InvalidInput("leave-one-out retrieval needs >= 2 labeled rows".into()));
    }
    let mut hits = alloc::vec![0usize; ks.len()];
    for qi in 0..n {
        let qrow = &features.data()[qi * dim..(qi + 1) * dim];
        let mut sims: Vec<(f64, usize)> = (0..n)
            .filter(|&gi| gi != qi)
            .map(|gi| {
                (crate::tensor::cosine(qrow, &features.data()[gi * dim..(gi + 1) * dim]), gi)
            })
            .collect();
        sims.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1))
        });
        for (ki, &k) in ks.iter().enumerate() {
            if sims.iter().take(k).any(|&(_, gi)| labels[gi] == labels[qi]) {
                hits[ki] += 1;
            }
        }
    }
    Ok(RetrievalResult {
        recall_at: ks.iter().zip(&hits).map(|(&k, &h)| (k, h as f64 / n as f64)).collect(),
    })
}

/// Class-averaged code slice, then pairwise cosine: `[L, L]`, symmetric with
/// unit diagonal.
pub fn code_similarity_heatmap(
    codes: &Tensor,
    labels: &[usize],
    n_classes: usize,
) -> Result<Tensor> {
    let (n, k) = (codes.shape()[0], codes.shape()[1]);
    if labels.len() != n {
        return Err(Error::InvalidInput("label count mismatch".into()));
    }
    let mut means = Tensor::zeros(&[n_classes, k]);
    let mut counts = alloc::vec![0usize; n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!("label {l} out of range")));
        }
        counts[l] += 1;
        for j in 0..k {
            means.data_mut()[l * k + j] += codes.data()[i * k + j];
        }
    }
    for (l, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::InvalidInput(format!("class {l} has no samples")));
        }
        for j in 0..k {
            means.data_mut()[l * k + j] /= c as f64;
        }
    }
    let mut out = Tensor::zeros(&[n_classes, n_classes]);
    for a in 0..n_classes {
        for b in 0..n_classes {
            let cos = crate::tensor::cosine(
                &means.data()[a * k..(a + 1) * k],
                &means.data()[b * k..(b + 1) * k],
            );
            // float round-off can nudge cosine past 1
            out.data_mut()[a * n_classes + b] = cos.clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

/// One concept's attention weights turned into per-frame heat overlays in
/// [0, 1], nearest-neighbor upsampled to (out_h, out_w). Returns T' frames.
pub fn attention_overlay(
    weights_row: &[f64],
    fmap_shape: [usize; 3],
    out_h: usize,
    out_w: usize,
) -> Vec<Tensor> {
    let [tp, hp, wp] = fmap_shape;
    debug_assert_eq!(weights_row.len(), tp * hp * wp);
    let mut frames = Vec::with_capacity(tp);
    for t in 0..tp {
        let plane = &weights_row[t * hp * wp..(t + 1) * hp * wp];
        let mn = plane.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let mx = plane.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let span = (mx - mn).max(1e-12);
        let mut frame = Tensor::zeros(&[out_h, out_w]);
        for y in 0..out_h {
            let sy = y * hp / out_h;
            for x in 0..out_w {
                let sx = x * wp / out_w;
                frame.data_mut()[y * out_w + x] = (plane[sy * wp + sx] - mn) / span;
            }
        }
        frames.push(frame);
    }
    frames
}

/// Highest-activation static and dynamic concept indexes of a code vector
/// (the dynamic index is already offset by K_s).
pub fn top_concepts(q_v: &[f64], k_s: usize) -> (usize, usize) {
    let argmax = |s: &[f64]| -> usize {
        s.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    (argmax(&q_v[..k_s]), k_s + argmax(&q_v[k_s..]))
}

/// Mean frame of a clip, average-pooled to `side x side`: the pixel-space
/// baseline used to check what a linear model can read off raw pixels.
pub fn pooled_mean_frame(clip: &VideoClip, side: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0f64; side * side];
    let mut counts = alloc::vec![0usize; side * side];
    for t in 0..clip.t {
        for y in 0..clip.h {
            let py = y * side / clip.h;
            for x in 0..clip.w {
                let px = x * side / clip.w;
                let mut v = 0.0;
                for c in 0..clip.ch {
                    v += clip.at(t, y, x, c) as f64;
                }
                out[py * side + px] += v / clip.ch as f64;
                counts[py * side + px] += 1;
            }
        }
    }
    for (o, &c) in out.iter_mut().zip(&counts) {
        *o /= c.max(1) as f64;
    }
    out
}

/// Triplet stream check used by eval tooling: re-derive the static frame and
/// difference for a clip without augmentation.
pub fn eval_triplet(clip: &VideoClip, seed: u64) -> Result<(VideoClip, crate::video::DiffClip)> {
    Ok((make_static_frame(clip, seed)?, make_frame_difference(clip)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_features(n: usize, dim: usize, seed: u64) -> Tensor {
        Tensor::randn(&[n, dim], 1.0, &mut Rng::new(seed))
    }

    #[test]
    fn probe_separable_features_reach_full_accuracy() {
        // two well-separated clusters
        let n = 60;
        let mut f = Tensor::zeros(&[n, 3]);
        let mut labels = Vec::new();
        let mut rng = Rng::new(1);
        for i in 0..n {
            let class = i % 2;
            labels.push(class);
            for j in 0..3 {
                f.data_mut()[i * 3 + j] =
                    rng.gauss() * 0.1 + if class == 0 { -2.0 } else { 2.0 };
            }
        }
        let out = linear_probe(&f, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(out.accuracy, 1.0);
    }

    #[test]
    fn probe_shuffled_labels_sit_at_chance() {
        let n = 400;
        let f = gaussian_features(n, 8, 2);
        let mut labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        Rng::new(3).shuffle(&mut labels);
        let out = linear_probe(&f, &labels, &ProbeConfig::default()).unwrap();
        assert!((out.accuracy - 0.25).abs() < 0.1, "accuracy {}", out.accuracy);
    }

    #[test]
    fn probe_one_dimensional_two_class_boundary() {
        let mut f = Tensor::zeros(&[40, 1]);
        let mut labels = Vec::new();
        for i in 0..40 {
            let class = i % 2;
            labels.push(class);
            f.data_mut()[i] = if class == 0 { -1.0 } else { 1.0 };
        }
        let out = linear_probe(&f, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(out.accuracy, 1.0);
    }

    #[test]
    fn probe_rejects_class_missing_from_train_split() {
        let f = gaussian_features(10, 2, 4);
        // class 2 appears exactly once; force it into the test split by
        // trying seeds until the check trips - instead, use a label that
        // never appears in train because it only exists at one index that
        // lands in test for this seed
        let mut labels = alloc::vec![0usize; 10];
        labels[1] = 1;
        // class 1 has a single sample; with train_frac tiny the train split
        // will almost surely miss it
        let cfg = ProbeConfig { train_frac: 0.2, ..Default::default() };
        let mut saw_invalid = false;
        for seed in 0..20 {
            let c = ProbeConfig { split_seed: seed, ..cfg.clone() };
            if matches!(linear_probe(&f, &labels, &c), Err(Error::InvalidSplit(_))) {
                saw_invalid = true;
                break;
            }
        }
        assert!(saw_invalid);
    }

    #[test]
    fn probe_decisions_invariant_to_positive_scaling() {
        let n = 80;
        let f = gaussian_features(n, 4, 5);
        let labels: Vec<usize> = (0..n).map(|i| (i / 20) % 4).collect();
        let a = linear_probe(&f, &labels, &ProbeConfig::default()).unwrap();
        let mut f2 = f.clone();
        f2.scale(37.5);
        let b = linear_probe(&f2, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn retrieval_identical_features_per_label_hit_r1() {
        let mut f = Tensor::zeros(&[12, 4]);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        for i in 0..12 {
            f.data_mut()[i * 4 + labels[i]] = 1.0;
        }
        // self-retrieval excluded by using separate-but-equal query/gallery
        // halves: gallery = queries with each label appearing >= 2 times
        let r = retrieve(&f, &f, &labels, &labels, &[1, 5, 10, 20]).unwrap();
        assert_eq!(r.recall_at[0].1, 1.0);
    }

    #[test]
    fn retrieval_recall_is_monotone_in_k() {
        let q = gaussian_features(30, 6, 6);
        let g = gaussian_features(80, 6, 7);
        let ql: Vec<usize> = (0..30).map(|i| i % 5).collect();
        let gl: Vec<usize> = (0..80).map(|i| i % 5).collect();
        let r = retrieve(&q, &g, &ql, &gl, &[1, 5, 10, 20]).unwrap();
        for w in r.recall_at.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn retrieval_random_features_near_chance_at_r1() {
        // Monte-Carlo: random features, L labels uniform, big gallery
        let l = 4;
        let q = gaussian_features(200, 8, 8);
        let g = gaussian_features(400, 8, 9);
        let ql: Vec<usize> = (0..200).map(|i| i % l).collect();
        let gl: Vec<usize> = (0..400).map(|i| i % l).collect();
        let r = retrieve(&q, &g, &ql, &gl, &[1]).unwrap();
        assert!((r.recall_at[0].1 - 1.0 / l as f64).abs() < 0.12, "{:?}", r.recall_at);
    }

    #[test]
    fn retrieval_invariant_under_common_rotation() {
        // build an orthogonal matrix by Gram-Schmidt on a random square
        let dim = 6;
        let mut rng = Rng::new(10);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gauss()).collect();
            for b in &basis {
                let d = crate::tensor::dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= d * bi;
                }
            }
            let n = crate::tensor::norm(&v);
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let rotate = |t: &Tensor| -> Tensor {
            let n = t.shape()[0];
            let mut out = Tensor::zeros(&[n, dim]);
            for i in 0..n {
                for j in 0..dim {
                    out.data_mut()[i * dim + j] =
                        crate::tensor::dot(&t.data()[i * dim..(i + 1) * dim], &basis[j]);
                }
            }
            out
        };
        let q = gaussian_features(20, dim, 11);
        let g = gaussian_features(50, dim, 12);
        let ql: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let gl: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let base = retrieve(&q, &g, &ql, &gl, &[1, 5, 10]).unwrap();
        let rot = retrieve(&rotate(&q), &rotate(&g), &ql, &gl, &[1, 5, 10]).unwrap();
        assert_eq!(base, rot);
    }

    #[test]
    fn heatmap_identical_codes_give_all_ones() {
        let mut codes = Tensor::zeros(&[6, 4]);
        for i in 0..6 {
            codes.data_mut()[i * 4..(i + 1) * 4].copy_from_slice(&[0.5, 0.2, 0.1, 0.7]);
        }
        let labels = [0, 0, 1, 1, 2, 2];
        let hm = code_similarity_heatmap(&codes, &labels, 3).unwrap();
        for &v in hm.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn heatmap_orthogonal_class_means_are_zero_off_diagonal() {
        let mut codes = Tensor::zeros(&[4, 4]);
        codes.data_mut()[0] = 1.0; // class 0 samples on e1
        codes.data_mut()[4] = 1.0;
        codes.data_mut()[2 * 4 + 1] = 1.0; // class 1 samples on e2
        codes.data_mut()[3 * 4 + 1] = 1.0;
        let hm = code_similarity_heatmap(&codes, &[0, 0, 1, 1], 2).unwrap();
        assert!((hm.data()[0] - 1.0).abs() < 1e-9);
        assert!((hm.data()[3] - 1.0).abs() < 1e-9);
        assert!(hm.data()[1].abs() < 1e-9);
        assert!(hm.data()[2].abs() < 1e-9);
    }

    #[test]
    fn heatmap_is_symmetric_unit_diagonal_bounded() {
        let codes = gaussian_features(40, 6, 13);
        let labels: Vec<usize> = (0..40).map(|i| i % 5).collect();
        let hm = code_similarity_heatmap(&codes, &labels, 5).unwrap();
        for a in 0..5 {
            assert!((hm.data()[a * 5 + a] - 1.0).abs() < 1e-6);
            for b in 0..5 {
                let v = hm.data()[a * 5 + b];
                assert!((-1.0..=1.0).contains(&v));
                assert!((v - hm.data()[b * 5 + a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn heatmap_rejects_empty_class() {
        let codes = gaussian_features(4, 3, 14);
        assert!(code_similarity_heatmap(&codes, &[0, 0, 1, 1], 3).is_err());
    }

    #[test]
    fn overlay_constant_map_is_uniform_and_shaped() {
        let weights = alloc::vec![0.25; 2 * 3 * 3];
        let frames = attention_overlay(&weights, [2, 3, 3], 12, 12);
        assert_eq!(frames.len(), 2);
        for f in &frames {
            assert_eq!(f.shape(), &[12, 12]);
            // constant plane normalizes to zero everywhere
            assert!(f.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn overlay_peak_matches_argmax_of_weights() {
        let mut weights = alloc::vec![0.1; 9];
        weights[4] = 0.9; // center of a 3x3 plane
        let frames = attention_overlay(&weights, [1, 3, 3], 9, 9);
        let f = &frames[0];
        let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
        for (i, &v) in f.data().iter().enumerate() {
            if v > bv {
                bv = v;
                bi = i;
            }
        }
        let (y, x) = (bi / 9, bi % 9);
        assert!((3..6).contains(&y) && (3..6).contains(&x), "peak at ({y},{x})");
        assert!((bv - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_fraction_count_examples() {
        assert_eq!(top_fraction_count(100, 0.1), 10);
        assert_eq!(top_fraction_count(50, 0.1), 5);
        assert_eq!(top_fraction_count(3, 0.1), 1);
    }

    #[test]
    fn source_tags_round_trip() {
        for tag in ["v", "q_v", "q_v_s", "q_v_d", "f_v", "f_v_s", "f_v_d"] {
            assert_eq!(FeatureSource::parse(tag).unwrap().tag(), tag);
        }
        assert!(FeatureSource::parse("nope").is_err());
    }
}
