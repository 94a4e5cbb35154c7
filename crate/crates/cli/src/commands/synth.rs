//! `synth-data`: render the synthetic corpus to disk.

use std::path::Path;

use vcl_core::video::synth_sample;

use crate::config::ExperimentConfig;
use crate::dataset::{clip_to_array, write_manifest, ManifestEntry};

use super::CmdResult;

pub fn run(config: &ExperimentConfig, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut cfg = config.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let synth = cfg.synth_config();
    synth.validate().map_err(|e| e.to_string())?;
    let clips_dir = out.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|e| e.to_string())?;
    std::fs::write(out.join("config.resolved.toml"), cfg.echo()).map_err(|e| e.to_string())?;
    let mut entries = Vec::with_capacity(cfg.videokit.n_samples);
    for i in 0..cfg.videokit.n_samples {
        let sample = synth_sample(&synth, cfg.seed, i).map_err(|e| e.to_string())?;
        let rel = format!("clips/sample_{i:05}.npy");
        crate::npy::save(&out.join(&rel), &clip_to_array(&sample.clip))
            .map_err(|e| e.to_string())?;
        entries.push(ManifestEntry {
            id: i,
            static_label: sample.static_label,
            dynamic_label: sample.dynamic_label,
            path: rel,
        });
    }
    write_manifest(&out.join("manifest.tsv"), &entries).map_err(|e| e.to_string())?;
    println!(
        "wrote {} samples ({}x{}x{}x{}) to {}",
        entries.len(),
        synth.t,
        synth.h,
        synth.w,
        synth.ch,
        out.display()
    );
    Ok(())
}
