//! Line-delimited metrics log and the file-writing train sink.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use vcl_core::model::ConceptModel;
use vcl_core::trainer::{EpochRecord, Sgd, StepRecord, TrainSink};

use crate::checkpoint;
use crate::config::ExperimentConfig;

#[derive(Serialize)]
struct StepLine<'a> {
    record: &'a str,
    epoch: usize,
    step: usize,
    l_aln: f64,
    l_loc: f64,
    l_fid: f64,
    l_div: f64,
    total: f64,
    lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_s: Option<f64>,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    record: &'a str,
    epoch: usize,
    steps: usize,
    l_aln: f64,
    l_loc: f64,
    l_fid: f64,
    l_div: f64,
    total: f64,
    lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_s: Option<f64>,
}

/// Writes metrics as JSON lines and periodic checkpoints. With
/// `deterministic` set, wall-clock fields are omitted so two runs with equal
/// seeds produce byte-identical logs.
pub struct FileSink {
    out_dir: PathBuf,
    log: std::io::BufWriter<std::fs::File>,
    config: ExperimentConfig,
    deterministic: bool,
    checkpoint_every: usize,
    started: Instant,
    pub error: Option<String>,
}

impl FileSink {
    pub fn create(
        out_dir: &Path,
        config: &ExperimentConfig,
        deterministic: bool,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        let log = std::io::BufWriter::new(std::fs::File::create(out_dir.join("metrics.jsonl"))?);
        Ok(FileSink {
            out_dir: out_dir.to_path_buf(),
            log,
            config: config.clone(),
            deterministic,
            checkpoint_every: config.trainer.checkpoint_every,
            started: Instant::now(),
            error: None,
        })
    }

    fn elapsed(&self) -> Option<f64> {
        if self.deterministic {
            None
        } else {
            Some(self.started.elapsed().as_secs_f64())
        }
    }

    fn write_line<T: Serialize>(&mut self, line: &T) {
        if self.error.is_some() {
            return;
        }
        let res = serde_json::to_string(line)
            .map_err(|e| e.to_string())
            .and_then(|s| writeln!(self.log, "{s}").map_err(|e| e.to_string()));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> Result<(), String> {
        if let Err(e) = self.log.flush() {
            self.error = Some(e.to_string());
        }
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl TrainSink for FileSink {
    fn on_step(&mut self, rec: &StepRecord) {
        let line = StepLine {
            record: "step",
            epoch: rec.epoch,
            step: rec.step,
            l_aln: rec.losses.l_aln,
            l_loc: rec.losses.l_loc,
            l_fid: rec.losses.l_fid,
            l_div: rec.losses.l_div,
            total: rec.losses.total,
            lr: rec.lr,
            elapsed_s: self.elapsed(),
        };
        self.write_line(&line);
    }

    fn on_epoch(&mut self, rec: &EpochRecord, model: &ConceptModel, opt: &Sgd) {
        let line = EpochLine {
            record: "epoch",
            epoch: rec.epoch,
            steps: rec.steps,
            l_aln: rec.mean.l_aln,
            l_loc: rec.mean.l_loc,
            l_fid: rec.mean.l_fid,
            l_div: rec.mean.l_div,
            total: rec.mean.total,
            lr: rec.lr,
            elapsed_s: self.elapsed(),
        };
        self.write_line(&line);
        let last = rec.epoch + 1 == self.config.trainer.epochs;
        let periodic =
            self.checkpoint_every > 0 && (rec.epoch + 1) % self.checkpoint_every == 0;
        if last || periodic {
            let name = if last {
                "checkpoint_final.vck".to_string()
            } else {
                format!("checkpoint_epoch{:04}.vck", rec.epoch + 1)
            };
            if let Err(e) =
                checkpoint::save(&self.out_dir.join(name), &self.config, model, opt, rec.epoch + 1)
            {
                self.error = Some(e.to_string());
            }
        }
    }
}
