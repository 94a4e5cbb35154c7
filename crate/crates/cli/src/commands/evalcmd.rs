//! `eval`: probe, retrieval, code-similarity heatmaps and attention-map
//! overlays from a trained checkpoint.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use vcl_core::eval::{
    attention_overlay, code_similarity_heatmap, extract_features, linear_probe,
    retrieve_leave_one_out, top_concepts, FeatureSource, LabelKind, ProbeConfig,
};
use vcl_core::exec::ParallelFor;
use vcl_core::tensor::Tensor;
use vcl_core::trainer::ClipSource;

use crate::checkpoint;
use crate::imageio;
use crate::npy::{self, NpyArray};

use super::CmdResult;

pub struct EvalArgs {
    pub task: String,
    pub source: String,
    pub label: String,
    pub slice: String,
    pub data: Option<String>,
    pub count: usize,
}

#[derive(Serialize)]
struct ProbeLine<'a> {
    task: &'a str,
    source: &'a str,
    label: &'a str,
    accuracy: f64,
    n_train: usize,
    n_test: usize,
}

#[derive(Serialize)]
struct RetrievalLine<'a> {
    task: &'a str,
    source: &'a str,
    label: &'a str,
    recall_at: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct HeatmapLine<'a> {
    task: &'a str,
    slice: &'a str,
    classes: usize,
    file: String,
}

pub fn run(ckpt_path: &Path, out: &Path, args: &EvalArgs, exec: &dyn ParallelFor) -> CmdResult {
    let loaded = checkpoint::load(ckpt_path).map_err(|e| e.to_string())?;
    let (model, _opt) = checkpoint::instantiate(&loaded).map_err(|e| e.to_string())?;
    let cfg = &loaded.config;
    let data_name = args.data.clone().unwrap_or_else(|| cfg.videokit.source.clone());
    let dataset = super::open_source(cfg, &data_name)?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let mut results = std::io::BufWriter::new(
        std::fs::File::create(out.join("results.jsonl")).map_err(|e| e.to_string())?,
    );
    let crop = cfg.eval_crop();
    let top_frac = cfg.evalkit.top_fraction;
    let probe_cfg = ProbeConfig {
        train_frac: cfg.evalkit.probe_train_frac,
        split_seed: cfg.evalkit.probe_split_seed,
        tol: cfg.evalkit.probe_tol,
        max_iters: cfg.evalkit.probe_max_iters,
    };

    match args.task.as_str() {
        "probe" => {
            let source = FeatureSource::parse(&args.source).map_err(|e| e.to_string())?;
            let kind = LabelKind::parse(&args.label).map_err(|e| e.to_string())?;
            let (feats, labels) =
                extract_features(&model, exec, dataset.as_ref(), source, crop, top_frac)
                    .map_err(|e| e.to_string())?;
            let targets = label_vector(&labels, kind, cfg.videokit.dynamic_classes);
            let outcome = linear_probe(&feats, &targets, &probe_cfg).map_err(|e| e.to_string())?;
            let line = ProbeLine {
                task: "probe",
                source: source.tag(),
                label: &args.label,
                accuracy: outcome.accuracy,
                n_train: feats.shape()[0] - outcome.test_indices.len(),
                n_test: outcome.test_indices.len(),
            };
            writeln!(results, "{}", serde_json::to_string(&line).unwrap())
                .map_err(|e| e.to_string())?;
            println!("probe {} -> {}: top-1 {:.4}", source.tag(), args.label, outcome.accuracy);
        }
        "retrieval" => {
            let source = FeatureSource::parse(&args.source).map_err(|e| e.to_string())?;
            let kind = LabelKind::parse(&args.label).map_err(|e| e.to_string())?;
            let (feats, labels) =
                extract_features(&model, exec, dataset.as_ref(), source, crop, top_frac)
                    .map_err(|e| e.to_string())?;
            let targets = label_vector(&labels, kind, cfg.videokit.dynamic_classes);
            let rr = retrieve_leave_one_out(&feats, &targets, &cfg.evalkit.recall_ks)
                .map_err(|e| e.to_string())?;
            let line = RetrievalLine {
                task: "retrieval",
                source: source.tag(),
                label: &args.label,
                recall_at: rr.recall_at.clone(),
            };
            writeln!(results, "{}", serde_json::to_string(&line).unwrap())
                .map_err(|e| e.to_string())?;
            let pretty: Vec<String> =
                rr.recall_at.iter().map(|(k, v)| format!("R@{k}={v:.4}")).collect();
            println!("retrieval {} on {}: {}", source.tag(), args.label, pretty.join(" "));
        }
        "heatmap" => {
            let slice = match args.slice.as_str() {
                "static" => FeatureSource::QvStatic,
                "dynamic" => FeatureSource::QvDynamic,
                other => return Err(format!("unknown heatmap slice '{other}'")),
            };
            let kind = match args.slice.as_str() {
                "static" => LabelKind::Static,
                _ => LabelKind::Dynamic,
            };
            let (codes, labels) =
                extract_features(&model, exec, dataset.as_ref(), slice, crop, top_frac)
                    .map_err(|e| e.to_string())?;
            let targets = label_vector(&labels, kind, cfg.videokit.dynamic_classes);
            let n_classes = targets.iter().max().map(|m| m + 1).unwrap_or(0);
            let hm = code_similarity_heatmap(&codes, &targets, n_classes)
                .map_err(|e| e.to_string())?;
            let file = format!("heatmap_{}.npy", args.slice);
            npy::save(&out.join(&file), &NpyArray::from_f64(hm.shape().to_vec(), hm.data()))
                .map_err(|e| e.to_string())?;
            let png = heatmap_png(&hm);
            imageio::write_png_gray(
                &out.join(format!("heatmap_{}.png", args.slice)),
                n_classes,
                n_classes,
                &png,
            )
            .map_err(|e| e.to_string())?;
            let line = HeatmapLine { task: "heatmap", slice: &args.slice, classes: n_classes, file };
            writeln!(results, "{}", serde_json::to_string(&line).unwrap())
                .map_err(|e| e.to_string())?;
            println!("heatmap over {n_classes} classes written to {}", out.display());
        }
        "attention" => {
            export_attention(&model, exec, dataset.as_ref(), out, args.count, crop)
                .map_err(|e| e.to_string())?;
            println!("attention overlays for {} clips in {}", args.count, out.display());
        }
        other => return Err(format!("unknown eval task '{other}' (expected probe, retrieval, heatmap or attention)")),
    }
    results.flush().map_err(|e| e.to_string())?;
    Ok(())
}

pub fn label_vector(labels: &[(usize, usize)], kind: LabelKind, n_dynamic: usize) -> Vec<usize> {
    labels
        .iter()
        .map(|&(s, d)| match kind {
            LabelKind::Static => s,
            LabelKind::Dynamic => d,
            LabelKind::Action => super::joint_label(s, d, n_dynamic),
        })
        .collect()
}

fn heatmap_png(hm: &Tensor) -> Vec<u8> {
    // map [-1,1] to [0,255]
    hm.data().iter().map(|&v| (((v + 1.0) / 2.0) * 255.0).clamp(0.0, 255.0) as u8).collect()
}

/// Per Fig-style protocol: for each clip pick the highest-activation static
/// and dynamic concept and write per-frame overlays plus the raw maps.
pub fn export_attention(
    model: &vcl_core::model::ConceptModel,
    exec: &dyn ParallelFor,
    dataset: &dyn ClipSource,
    out: &Path,
    count: usize,
    crop: Option<[usize; 3]>,
) -> Result<(), String> {
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let n = count.min(dataset.len());
    for i in 0..n {
        let clip = dataset.clip(i).map_err(|e| e.to_string())?;
        let clip = vcl_core::eval::center_crop_clip(&clip, crop).map_err(|e| e.to_string())?;
        let feats = model.infer_clip(exec, &clip).map_err(|e| e.to_string())?;
        let [tp, hp, wp] = feats.fmap_shape;
        let k_total = model.cfg.k_s + model.cfg.k_d;
        // raw maps, reshaped to [K, T', H', W']
        npy::save(
            &out.join(format!("clip{i:03}_attn_weights.npy")),
            &NpyArray::from_f64(vec![k_total, tp, hp, wp], feats.maps.weights.data()),
        )
        .map_err(|e| e.to_string())?;
        npy::save(
            &out.join(format!("clip{i:03}_attn_scores.npy")),
            &NpyArray::from_f64(vec![k_total, tp, hp, wp], feats.maps.scores.data()),
        )
        .map_err(|e| e.to_string())?;
        let (k_static, k_dynamic) = top_concepts(&feats.q_v, model.cfg.k_s);
        for (tag, k) in [("static", k_static), ("dynamic", k_dynamic)] {
            let row = &feats.maps.weights.data()[k * tp * hp * wp..(k + 1) * tp * hp * wp];
            let frames = attention_overlay(row, feats.fmap_shape, clip.h, clip.w);
            for (fi, heat) in frames.iter().enumerate() {
                // overlay on the temporally matching frame (nearest)
                let src_t = fi * clip.t / tp;
                let gray: Vec<f64> = (0..clip.h * clip.w)
                    .map(|p| {
                        let (y, x) = (p / clip.w, p % clip.w);
                        let mut v = 0.0;
                        for c in 0..clip.ch {
                            v += clip.at(src_t, y, x, c) as f64;
                        }
                        v / clip.ch as f64
                    })
                    .collect();
                let rgb = imageio::heat_overlay_rgb(&gray, heat.data(), clip.h, clip.w);
                imageio::write_png_rgb(
                    &out.join(format!("clip{i:03}_{tag}_k{k}_t{fi}.png")),
                    clip.h,
                    clip.w,
                    &rgb,
                )
                .map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(())
}
