//! Training configuration, read from TOML.
//!
//! Every section and key is optional and falls back to its default; unknown
//! keys are rejected. `config_version` must match [`CONFIG_VERSION`].

use serde::{Deserialize, Serialize};
use stproc_autodiff::AdamWConfig;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::featurize::AugmentationPolicy;
use crate::graph::PropagationConfig;
use crate::ingest::SplitConfig;
use crate::objectives::{LossWeights, PseudoLabelConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Rows per chunk when embedding whole pools in eval mode.
    pub eval_chunk: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch_size: 128,
            epochs: 120,
            patience: 15,
            seed: 0,
            precision: Precision::F32,
            eval_chunk: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
    /// Epochs between global graph rebuilds once warmup is over.
    pub rebuild_every: usize,
    /// Epochs that use only in-batch graphs.
    pub warmup_epochs: usize,
    pub propagation: PropagationConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: 10,
            rebuild_every: 5,
            warmup_epochs: 5,
            propagation: PropagationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    pub ema_alpha: f64,
    /// Pseudo-labels must exceed this confidence to move a prototype;
    /// `None` reuses the pseudo-label confidence threshold.
    pub conf_threshold_for_update: Option<f64>,
    /// Train prototypes by gradient through the prototype and pseudo-label
    /// losses.
    pub gradient: bool,
    /// Nudge prototypes toward class means after each step.
    pub ema: bool,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        PrototypeConfig {
            ema_alpha: 0.999,
            conf_threshold_for_update: None,
            gradient: true,
            ema: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub ema_alpha: f64,
    /// Use `min(ema_alpha, 1 - 1/(step + 1))` so the teacher tracks the
    /// student closely during the first steps.
    pub warmup: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            ema_alpha: 0.999,
            warmup: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_max: 1e-3,
            lr_min: 1e-5,
            warmup_epochs: 5.0,
            weight_decay: 1e-4,
            clip_norm: 1.0,
        }
    }
}

impl OptimizerConfig {
    /// AdamW settings over a run of `epochs`; prototypes get no decay.
    pub fn adamw(&self, epochs: usize, weight_decay: bool) -> AdamWConfig {
        AdamWConfig {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            warmup_epochs: self.warmup_epochs,
            total_epochs: epochs as f64,
            weight_decay: if weight_decay { self.weight_decay } else { 0.0 },
            clip_norm: self.clip_norm,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub config_version: u32,
    pub run: RunConfig,
    pub split: SplitConfig,
    pub loss: LossWeights,
    pub pseudo: PseudoLabelConfig,
    pub prototypes: PrototypeConfig,
    pub teacher: TeacherConfig,
    pub graph: GraphConfig,
    pub encoder: EncoderConfig,
    pub augment: AugmentationPolicy,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            config_version: CONFIG_VERSION,
            run: RunConfig::default(),
            split: SplitConfig::default(),
            loss: LossWeights::default(),
            pseudo: PseudoLabelConfig::default(),
            prototypes: PrototypeConfig::default(),
            teacher: TeacherConfig::default(),
            graph: GraphConfig::default(),
            encoder: EncoderConfig::default(),
            augment: AugmentationPolicy::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.config_version != CONFIG_VERSION {
            return bad(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        if self.run.batch_size < 4 {
            return bad(format!("batch_size {} must be at least 4", self.run.batch_size));
        }
        if self.run.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.run.epochs < 1 || self.run.eval_chunk < 1 {
            return bad("epochs and eval_chunk must be positive".into());
        }
        if self.graph.k < 1 || self.graph.rebuild_every < 1 {
            return bad("graph.k and graph.rebuild_every must be positive".into());
        }
        let p = &self.graph.propagation;
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            return bad(format!("propagation alpha {} outside (0, 1)", p.alpha));
        }
        if !(0.0..=1.0).contains(&self.pseudo.beta) {
            return bad(format!("pseudo.beta {} outside [0, 1]", self.pseudo.beta));
        }
        for (name, a) in [
            ("prototypes", self.prototypes.ema_alpha),
            ("teacher", self.teacher.ema_alpha),
        ] {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("{name}.ema_alpha {a} outside [0, 1]"));
            }
        }
        let o = &self.optimizer;
        if !(o.lr_max > 0.0 && o.lr_min >= 0.0 && o.lr_min <= o.lr_max && o.weight_decay >= 0.0) {
            return bad("optimizer needs 0 <= lr_min <= lr_max, lr_max > 0, weight_decay >= 0".into());
        }
        let a = &self.augment;
        if !(0.0..1.0).contains(&a.mask_prob) || a.jitter_sigma < 0.0 || !(0.0..1.0).contains(&a.time_warp_scale) {
            return bad("augment: mask_prob and time_warp_scale in [0, 1), jitter_sigma >= 0".into());
        }
        self.loss.validate()?;
        self.encoder.validate()?;
        Ok(())
    }

    pub fn conf_threshold_for_update(&self) -> f64 {
        self.prototypes
            .conf_threshold_for_update
            .unwrap_or(self.pseudo.tau_conf)
    }

    /// Whether any active term consumes pseudo-labels.
    pub fn uses_pseudo_labels(&self) -> bool {
        self.loss.lambda_pseudo_max > 0.0
    }

    /// Whether label propagation feeds the pseudo-labels.
    pub fn uses_propagation(&self) -> bool {
        self.uses_pseudo_labels() && self.pseudo.beta < 1.0
    }

    /// Whether any term needs a batch adjacency.
    pub fn uses_batch_graph(&self) -> bool {
        self.loss.lambda_s > 0.0 || self.loss.lambda_n > 0.0
    }
}
