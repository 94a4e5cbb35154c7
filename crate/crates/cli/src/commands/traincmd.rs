//! `train`: run the optimization loop, logging metrics and checkpoints under
//! the experiment directory.

use std::path::Path;

use vcl_core::exec::ParallelFor;
use vcl_core::model::ConceptModel;
use vcl_core::trainer::{train, Sgd};

use crate::config::ExperimentConfig;
use crate::metrics::FileSink;

use super::CmdResult;

pub struct TrainArgs {
    pub seed: Option<u64>,
    pub deterministic: bool,
}

pub fn run(
    config: &ExperimentConfig,
    out: &Path,
    args: &TrainArgs,
    exec: &dyn ParallelFor,
) -> CmdResult {
    let mut cfg = config.clone();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    std::fs::write(out.join("config.resolved.toml"), cfg.echo()).map_err(|e| e.to_string())?;

    let dataset = super::open_source(&cfg, &cfg.videokit.source)?;
    let mut model =
        ConceptModel::new(cfg.model_config(), cfg.seed).map_err(|e| e.to_string())?;
    if cfg.conceptspace.prototype_init == "data" {
        model
            .init_prototypes_from_data(exec, dataset.as_ref(), cfg.seed)
            .map_err(|e| e.to_string())?;
    }
    let mut opt = Sgd::new(&model);
    let weights = cfg.loss_weights();
    let optim = cfg.optim_config(cfg.seed);
    let aug = cfg.augment_config();
    let mut sink = FileSink::create(out, &cfg, args.deterministic).map_err(|e| e.to_string())?;
    let result = train(
        &mut model,
        &mut opt,
        dataset.as_ref(),
        &weights,
        &optim,
        &aug,
        exec,
        &mut sink,
    );
    let sink_result = sink.finish();
    result.map_err(|e| e.to_string())?;
    sink_result?;
    println!(
        "trained {} epochs on {} samples; artifacts in {}",
        optim.epochs,
        dataset.len(),
        out.display()
    );
    Ok(())
}
