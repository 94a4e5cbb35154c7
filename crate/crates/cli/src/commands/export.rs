//! `export`: dump concept codes, extracted features or raw attention maps
//! as numeric array files keyed by sample id.

use std::path::Path;

use vcl_core::eval::{extract_features, FeatureSource};
use vcl_core::exec::ParallelFor;

use crate::checkpoint;
use crate::npy::{self, NpyArray};

use super::CmdResult;

pub struct ExportArgs {
    pub what: String,
    pub source: String,
    pub data: Option<String>,
    pub count: usize,
}

pub fn run(ckpt_path: &Path, out: &Path, args: &ExportArgs, exec: &dyn ParallelFor) -> CmdResult {
    let loaded = checkpoint::load(ckpt_path).map_err(|e| e.to_string())?;
    let (model, _) = checkpoint::instantiate(&loaded).map_err(|e| e.to_string())?;
    let cfg = &loaded.config;
    let data_name = args.data.clone().unwrap_or_else(|| cfg.videokit.source.clone());
    let dataset = super::open_source(cfg, &data_name)?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let crop = cfg.eval_crop();

    match args.what.as_str() {
        "codes" => {
            // q_s, q_d, q_v per sample, with an id/label index
            let n = dataset.len();
            let (k_s, k_d) = (model.cfg.k_s, model.cfg.k_d);
            let mut q_s = Vec::with_capacity(n * k_s);
            let mut q_d = Vec::with_capacity(n * k_d);
            let mut q_v = Vec::with_capacity(n * (k_s + k_d));
            let mut index = String::from("# id\tstatic_label\tdynamic_label\n");
            for i in 0..n {
                let clip = dataset.clip(i).map_err(|e| e.to_string())?;
                let clip =
                    vcl_core::eval::center_crop_clip(&clip, crop).map_err(|e| e.to_string())?;
                let codes =
                    model.infer_stream_codes(exec, &clip, cfg.seed).map_err(|e| e.to_string())?;
                q_s.extend_from_slice(&codes[0]);
                q_d.extend_from_slice(&codes[1]);
                q_v.extend_from_slice(&codes[2]);
                let (s, d) = dataset.labels(i).unwrap_or((0, 0));
                index.push_str(&format!("{i}\t{s}\t{d}\n"));
            }
            npy::save(&out.join("codes_q_s.npy"), &NpyArray::from_f64(vec![n, k_s], &q_s))
                .map_err(|e| e.to_string())?;
            npy::save(&out.join("codes_q_d.npy"), &NpyArray::from_f64(vec![n, k_d], &q_d))
                .map_err(|e| e.to_string())?;
            npy::save(&out.join("codes_q_v.npy"), &NpyArray::from_f64(vec![n, k_s + k_d], &q_v))
                .map_err(|e| e.to_string())?;
            std::fs::write(out.join("codes_index.tsv"), index).map_err(|e| e.to_string())?;
            println!("dumped codes for {n} samples to {}", out.display());
        }
        "features" => {
            let source = FeatureSource::parse(&args.source).map_err(|e| e.to_string())?;
            let (feats, labels) = extract_features(
                &model,
                exec,
                dataset.as_ref(),
                source,
                crop,
                cfg.evalkit.top_fraction,
            )
            .map_err(|e| e.to_string())?;
            npy::save(
                &out.join(format!("features_{}.npy", source.tag())),
                &NpyArray::from_f64(feats.shape().to_vec(), feats.data()),
            )
            .map_err(|e| e.to_string())?;
            let mut index = String::from("# id\tstatic_label\tdynamic_label\n");
            for (i, (s, d)) in labels.iter().enumerate() {
                index.push_str(&format!("{i}\t{s}\t{d}\n"));
            }
            std::fs::write(out.join("features_index.tsv"), index).map_err(|e| e.to_string())?;
            println!(
                "dumped {}x{} {} features to {}",
                feats.shape()[0],
                feats.shape()[1],
                source.tag(),
                out.display()
            );
        }
        "attention" => {
            super::evalcmd::export_attention(&model, exec, dataset.as_ref(), out, args.count, crop)?;
            println!("dumped attention maps for {} clips to {}", args.count, out.display());
        }
        other => {
            return Err(format!(
                "unknown export target '{other}' (expected codes, features or attention)"
            ))
        }
    }
    Ok(())
}
