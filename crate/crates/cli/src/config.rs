//! Experiment configuration: TOML in, validated resolved config out.
//!
//! Every key is optional and falls back to the published defaults; unknown
//! keys are rejected. The resolved config is echoed into the experiment
//! directory with a provenance table so values that come from the method's
//! stated settings are distinguishable from plumbing chosen here.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use vcl_core::concepts::AlignmentConfig;
use vcl_core::encoder::{EncoderConfig, EncoderVariant, SigmaConfig};
use vcl_core::localcontrast::LocalContrastConfig;
use vcl_core::model::ModelConfig;
use vcl_core::trainer::{AugmentConfig, LossWeights, OptimConfig};
use vcl_core::video::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub videokit: VideokitCfg,
    pub encoder: EncoderCfg,
    pub conceptspace: ConceptspaceCfg,
    pub bottleneck: BottleneckCfg,
    pub localcontrast: LocalContrastCfg,
    pub trainer: TrainerCfg,
    pub evalkit: EvalkitCfg,
    /// Regenerated on every echo; accepted on load so echoes round-trip.
    pub provenance: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            videokit: Default::default(),
            encoder: Default::default(),
            conceptspace: Default::default(),
            bottleneck: Default::default(),
            localcontrast: Default::default(),
            trainer: Default::default(),
            evalkit: Default::default(),
            provenance: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideokitCfg {
    /// "synth" or a dataset directory (written by `synth-data`, or a
    /// directory of per-clip frame-image folders).
    pub source: String,
    pub n_samples: usize,
    pub static_classes: usize,
    pub dynamic_classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Training crop (T, H, W); absent means full extent.
    pub crop: Option<[usize; 3]>,
    pub flip: bool,
}

impl Default for VideokitCfg {
    fn default() -> Self {
        VideokitCfg {
            source: "synth".into(),
            n_samples: 2000,
            static_classes: 4,
            dynamic_classes: 4,
            frames: 16,
            height: 64,
            width: 64,
            channels: 1,
            crop: None,
            flip: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderCfg {
    pub variant: String,
    pub widths: Vec<usize>,
    pub strides: Vec<[usize; 3]>,
    pub kernels: Vec<[usize; 3]>,
    pub shared_backbone: bool,
    pub sigma: String,
    pub sigma_hidden: usize,
    pub final_norm: bool,
}

impl Default for EncoderCfg {
    fn default() -> Self {
        EncoderCfg {
            variant: "tiny3dconv".into(),
            widths: vec![12, 24, 48, 128],
            strides: vec![[1, 2, 2], [2, 2, 2], [2, 2, 2], [1, 2, 2]],
            kernels: vec![[3, 3, 3]; 4],
            shared_backbone: true,
            sigma: "identity".into(),
            sigma_hidden: 0,
            final_norm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptspaceCfg {
    pub k_s: i64,
    pub k_d: i64,
    pub tau: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_eps: f64,
    /// "gaussian" (published-style init) or "data" (seed prototype rows from
    /// encoded feature directions; recommended at desk scale, where gaussian
    /// prototypes can leave the alignment stuck at its uniform fixed point).
    pub prototype_init: String,
}

impl Default for ConceptspaceCfg {
    fn default() -> Self {
        ConceptspaceCfg {
            k_s: 50,
            k_d: 50,
            tau: 0.1,
            sinkhorn_iters: 3,
            sinkhorn_eps: 0.05,
            prototype_init: "gaussian".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BottleneckCfg {
    /// Reconstruction-head hidden width; 0 means "same as C".
    pub hidden: usize,
}

impl Default for BottleneckCfg {
    fn default() -> Self {
        BottleneckCfg { hidden: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalContrastCfg {
    pub k_top: usize,
    pub margin: f64,
    /// 0 means "same as C".
    pub attn_dim: usize,
}

impl Default for LocalContrastCfg {
    fn default() -> Self {
        LocalContrastCfg { k_top: 5, margin: 1.0, attn_dim: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerCfg {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainerCfg {
    fn default() -> Self {
        TrainerCfg {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.01,
            warmup_epochs: 5,
            lr: 1e-2,
            weight_decay: 1e-4,
            momentum: 0.9,
            epochs: 50,
            batch_size: 32,
            grad_clip: 10.0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalkitCfg {
    pub probe_train_frac: f64,
    pub probe_tol: f64,
    pub probe_max_iters: usize,
    pub probe_split_seed: u64,
    pub recall_ks: Vec<usize>,
    pub top_fraction: f64,
    /// Center crop at evaluation time; absent means the training crop.
    pub eval_crop: Option<[usize; 3]>,
}

impl Default for EvalkitCfg {
    fn default() -> Self {
        EvalkitCfg {
            probe_train_frac: 0.8,
            probe_tol: 1e-6,
            probe_max_iters: 1500,
            probe_split_seed: 17,
            recall_ks: vec![1, 5, 10, 20],
            top_fraction: 0.1,
            eval_crop: None,
        }
    }
}

#[derive(Debug)]
pub struct LoadError(pub String);

impl std::fmt::Display for LoadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for LoadError {}

impl ExperimentConfig {
    /// Parse, validate and fill defaults. Errors name the offending key.
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LoadError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, LoadError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| LoadError(e.to_string()))?;
        cfg.validate()?;
        cfg.provenance = cfg.provenance_table();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LoadError> {
        let v = &self.videokit;
        if v.source == "synth" {
            if v.static_classes < 2 {
                return Err(LoadError("videokit.static_classes: must be >= 2".into()));
            }
            if v.dynamic_classes < 2 {
                return Err(LoadError("videokit.dynamic_classes: must be >= 2".into()));
            }
            if v.frames < 2 {
                return Err(LoadError("videokit.frames: must be >= 2".into()));
            }
            if v.n_samples == 0 {
                return Err(LoadError("videokit.n_samples: must be >= 1".into()));
            }
        }
        if self.encoder.variant != "tiny3dconv" && self.encoder.variant != "pluggable" {
            return Err(LoadError(format!(
                "encoder.variant: unknown variant '{}'",
                self.encoder.variant
            )));
        }
        if self.encoder.widths.is_empty()
            || self.encoder.widths.len() != self.encoder.strides.len()
            || self.encoder.widths.len() != self.encoder.kernels.len()
        {
            return Err(LoadError(
                "encoder.widths/strides/kernels: must be non-empty and equal length".into(),
            ));
        }
        if self.encoder.sigma != "identity" && self.encoder.sigma != "mlp" {
            return Err(LoadError(format!("encoder.sigma: unknown transform '{}'", self.encoder.sigma)));
        }
        let c = &self.conceptspace;
        if c.k_s < 2 {
            return Err(LoadError(format!("conceptspace.k_s: must be >= 2, got {}", c.k_s)));
        }
        if c.k_d < 2 {
            return Err(LoadError(format!("conceptspace.k_d: must be >= 2, got {}", c.k_d)));
        }
        if !(c.tau > 0.0) {
            return Err(LoadError("conceptspace.tau: must be > 0".into()));
        }
        if c.sinkhorn_iters < 1 {
            return Err(LoadError("conceptspace.sinkhorn_iters: must be >= 1".into()));
        }
        if !(c.sinkhorn_eps > 0.0) {
            return Err(LoadError("conceptspace.sinkhorn_eps: must be > 0".into()));
        }
        if c.prototype_init != "gaussian" && c.prototype_init != "data" {
            return Err(LoadError(format!(
                "conceptspace.prototype_init: unknown mode '{}'",
                c.prototype_init
            )));
        }
        let feature_dim = *self.encoder.widths.last().unwrap();
        if (c.k_s + c.k_d) as usize >= feature_dim {
            return Err(LoadError(format!(
                "conceptspace.k_s + conceptspace.k_d: must stay below encoder feature dim {feature_dim} (the code is the bottleneck)"
            )));
        }
        let l = &self.localcontrast;
        if l.k_top == 0 || l.k_top as i64 > c.k_s.min(c.k_d) {
            return Err(LoadError(format!(
                "localcontrast.k_top: must be in 1..=min(k_s,k_d)={}",
                c.k_s.min(c.k_d)
            )));
        }
        if !(l.margin > 0.0) {
            return Err(LoadError("localcontrast.margin: must be > 0".into()));
        }
        let t = &self.trainer;
        if t.alpha < 0.0 || t.beta < 0.0 || t.gamma < 0.0 {
            return Err(LoadError("trainer.alpha/beta/gamma: must be >= 0".into()));
        }
        if t.lr < 0.0 {
            return Err(LoadError("trainer.lr: must be >= 0".into()));
        }
        if t.epochs == 0 {
            return Err(LoadError("trainer.epochs: must be >= 1".into()));
        }
        if t.batch_size == 0 {
            return Err(LoadError("trainer.batch_size: must be >= 1".into()));
        }
        let e = &self.evalkit;
        if !(e.probe_train_frac > 0.0 && e.probe_train_frac < 1.0) {
            return Err(LoadError("evalkit.probe_train_frac: must be in (0,1)".into()));
        }
        if e.recall_ks.is_empty() {
            return Err(LoadError("evalkit.recall_ks: must be non-empty".into()));
        }
        Ok(())
    }

    /// Which keys carry published values and which are plumbing chosen here.
    fn provenance_table(&self) -> BTreeMap<String, String> {
        let mut p = BTreeMap::new();
        for key in [
            "conceptspace.k_s",
            "conceptspace.k_d",
            "trainer.alpha",
            "trainer.beta",
            "trainer.gamma",
            "trainer.warmup_epochs",
            "trainer.lr",
            "trainer.weight_decay",
            "localcontrast.k_top",
            "encoder.shared_backbone",
            "encoder.sigma",
            "evalkit.top_fraction",
            "evalkit.recall_ks",
        ] {
            p.insert(key.into(), "paper".into());
        }
        for key in [
            "conceptspace.prototype_init",
            "conceptspace.tau",
            "conceptspace.sinkhorn_iters",
            "conceptspace.sinkhorn_eps",
            "localcontrast.margin",
            "localcontrast.attn_dim",
            "trainer.momentum",
            "trainer.batch_size",
            "trainer.grad_clip",
            "trainer.epochs",
            "encoder.widths",
            "encoder.strides",
            "encoder.kernels",
            "encoder.final_norm",
            "bottleneck.hidden",
            "videokit.*",
            "evalkit.probe_*",
        ] {
            p.insert(key.into(), "plumbing".into());
        }
        p
    }

    /// Serialized echo of the resolved config, deterministic.
    pub fn echo(&self) -> String {
        let mut resolved = self.clone();
        resolved.provenance = self.provenance_table();
        toml::to_string_pretty(&resolved).expect("config serializes")
    }

    // ------------------------------------------------- conversion to core --

    pub fn model_config(&self) -> ModelConfig {
        let sigma = match self.encoder.sigma.as_str() {
            "mlp" => SigmaConfig::Mlp {
                hidden: if self.encoder.sigma_hidden == 0 {
                    *self.encoder.widths.last().unwrap()
                } else {
                    self.encoder.sigma_hidden
                },
            },
            _ => SigmaConfig::Identity,
        };
        ModelConfig {
            encoder: EncoderConfig {
                variant: match self.encoder.variant.as_str() {
                    "tiny3dconv" => EncoderVariant::Tiny3dConv,
                    other => EncoderVariant::Pluggable(other.into()),
                },
                in_channels: self.videokit.channels,
                widths: self.encoder.widths.clone(),
                strides: self.encoder.strides.clone(),
                kernels: self.encoder.kernels.clone(),
                shared_backbone: self.encoder.shared_backbone,
                sigma,
                final_norm: self.encoder.final_norm,
            },
            k_s: self.conceptspace.k_s as usize,
            k_d: self.conceptspace.k_d as usize,
            align: AlignmentConfig {
                tau: self.conceptspace.tau,
                sinkhorn_iters: self.conceptspace.sinkhorn_iters,
                sinkhorn_eps: self.conceptspace.sinkhorn_eps,
            },
            head_hidden: if self.bottleneck.hidden == 0 { None } else { Some(self.bottleneck.hidden) },
            local: LocalContrastConfig {
                k_top: self.localcontrast.k_top,
                margin: self.localcontrast.margin,
            },
            attn_dim: if self.localcontrast.attn_dim == 0 {
                None
            } else {
                Some(self.localcontrast.attn_dim)
            },
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.trainer.alpha,
            beta: self.trainer.beta,
            gamma: self.trainer.gamma,
            warmup_epochs: self.trainer.warmup_epochs,
        }
    }

    pub fn optim_config(&self, seed: u64) -> OptimConfig {
        OptimConfig {
            lr: self.trainer.lr,
            weight_decay: self.trainer.weight_decay,
            momentum: self.trainer.momentum,
            epochs: self.trainer.epochs,
            batch_size: self.trainer.batch_size,
            grad_clip: self.trainer.grad_clip,
            seed,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig { crop: self.videokit.crop, flip: self.videokit.flip }
    }

    pub fn eval_crop(&self) -> Option<[usize; 3]> {
        self.evalkit.eval_crop.or(self.videokit.crop)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_static: self.videokit.static_classes,
            n_dynamic: self.videokit.dynamic_classes,
            t: self.videokit.frames,
            h: self.videokit.height,
            w: self.videokit.width,
            ch: self.videokit.channels,
        }
    }
}
