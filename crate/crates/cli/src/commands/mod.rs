//! Command implementations. Each returns a descriptive error string; the
//! binary maps errors to exit status 1.

pub mod evalcmd;
pub mod export;
pub mod synth;
pub mod traincmd;

use std::path::{Path, PathBuf};

use vcl_core::trainer::{ClipSource, SynthSource};

use crate::config::ExperimentConfig;

pub type CmdResult = Result<(), String>;

/// Resolve an output directory against VCL_EXPERIMENT_ROOT when relative.
pub fn resolve_out_dir(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    match std::env::var_os("VCL_EXPERIMENT_ROOT") {
        Some(root) => PathBuf::from(root).join(out),
        None => out.to_path_buf(),
    }
}

/// Build the clip source named by `source`: "synth" renders on demand from
/// the config; anything else is a dataset directory.
pub fn open_source(config: &ExperimentConfig, source: &str) -> Result<Box<dyn ClipSource>, String> {
    if source == "synth" {
        let cfg = config.synth_config();
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(Box::new(SynthSource { cfg, seed: config.seed, n: config.videokit.n_samples }))
    } else {
        crate::dataset::open_dataset(Path::new(source)).map_err(|e| e.to_string())
    }
}

/// Joint (static, dynamic) class id.
pub fn joint_label(s: usize, d: usize, n_dynamic: usize) -> usize {
    s * n_dynamic + d
}
