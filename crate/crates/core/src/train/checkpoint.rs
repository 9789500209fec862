//! Model checkpoints: encoder, teacher and prototype tensors (student and
//! prototype entries with their AdamW moments) plus JSON metadata holding
//! the configuration and the fitted standardizer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stproc_autodiff::{AdamW, Checkpoint, CheckpointEntry, ParamSet, Real};

use super::config::TrainConfig;
use super::trainer::TrainedModel;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::featurize::{Standardizer, FEATURE_LAYOUT_VERSION};
use crate::objectives::{PrototypeBank, PROTOTYPE_PARAM};

pub const CHECKPOINT_FORMAT: &str = "stproc-model-v1";
const TEACHER_PREFIX: &str = "teacher/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub feature_layout: String,
    pub config: TrainConfig,
    pub epoch: usize,
    pub best_val_macro_f1: Option<f64>,
    pub standardizer: Standardizer,
    pub proto_opt_step: u64,
}

fn entries<T: Real>(params: &ParamSet<T>, prefix: &str, opt: Option<&AdamW<T>>) -> Vec<CheckpointEntry<T>> {
    params
        .names()
        .iter()
        .zip(params.tensors())
        .enumerate()
        .map(|(i, (name, t))| CheckpointEntry {
            name: format!("{prefix}{name}"),
            tensor: t.clone(),
            moments: opt.map(|o| (o.moments().0[i].clone(), o.moments().1[i].clone())),
        })
        .collect()
}

pub fn model_to_checkpoint<T: Real>(model: &TrainedModel<T>) -> Result<Checkpoint<T>> {
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        feature_layout: FEATURE_LAYOUT_VERSION.into(),
        config: model.config.clone(),
        epoch: model.epoch,
        best_val_macro_f1: model.best_val_macro_f1,
        standardizer: model.standardizer.clone(),
        proto_opt_step: model.proto_opt.step_count(),
    };
    let mut all = entries(&model.student.params, "", Some(&model.student_opt));
    all.extend(entries(&model.teacher.params, TEACHER_PREFIX, None));
    all.extend(entries(&model.bank.params, "", Some(&model.proto_opt)));
    Ok(Checkpoint {
        step: model.student_opt.step_count(),
        metadata: serde_json::to_string(&meta).map_err(|e| Error::Store(e.to_string()))?,
        entries: all,
    })
}

pub fn save_model<T: Real>(model: &TrainedModel<T>, path: &Path) -> Result<()> {
    model_to_checkpoint(model)?.save(path)?;
    Ok(())
}

/// Reads the metadata without touching the tensors' dtype.
pub fn read_meta(ck_metadata: &str) -> Result<CheckpointMeta> {
    let meta: CheckpointMeta =
        serde_json::from_str(ck_metadata).map_err(|e| Error::Store(format!("checkpoint metadata: {e}")))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::Store(format!("unsupported checkpoint format {}", meta.format)));
    }
    if meta.feature_layout != FEATURE_LAYOUT_VERSION {
        return Err(Error::Store(format!(
            "checkpoint feature layout {} does not match {FEATURE_LAYOUT_VERSION}",
            meta.feature_layout
        )));
    }
    meta.config.validate()?;
    Ok(meta)
}

pub fn model_from_checkpoint<T: Real>(ck: Checkpoint<T>) -> Result<TrainedModel<T>> {
    let meta = read_meta(&ck.metadata)?;
    let cfg = meta.config;
    let epochs = cfg.run.epochs;
    let mut student = ParamSet::new();
    let mut teacher = ParamSet::new();
    let mut protos = ParamSet::new();
    let (mut sm, mut sv, mut pm, mut pv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for e in ck.entries {
        let missing = || Error::Store(format!("entry {} lacks optimizer moments", e.name));
        if let Some(name) = e.name.strip_prefix(TEACHER_PREFIX) {
            teacher.push(name, e.tensor);
        } else if e.name == PROTOTYPE_PARAM {
            let (m, v) = e.moments.clone().ok_or_else(missing)?;
            pm.push(m);
            pv.push(v);
            protos.push(e.name, e.tensor);
        } else {
            let (m, v) = e.moments.clone().ok_or_else(missing)?;
            sm.push(m);
            sv.push(v);
            student.push(e.name, e.tensor);
        }
    }
    if protos.len() != 1 {
        return Err(Error::Store("checkpoint has no prototype entry".into()));
    }
    let student = Encoder::from_params(cfg.encoder.clone(), student)?;
    let teacher = Encoder::from_params(cfg.encoder.clone(), teacher)?;
    let student_opt = AdamW::from_state(cfg.optimizer.adamw(epochs, true), &student.params, ck.step, sm, sv)?;
    let proto_opt = AdamW::from_state(cfg.optimizer.adamw(epochs, false), &protos, meta.proto_opt_step, pm, pv)?;
    let shape = protos.get(0).shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.encoder.embed_dim {
        return Err(Error::Store(format!(
            "prototype shape {shape:?} does not match the encoder"
        )));
    }
    let bank = PrototypeBank {
        params: protos,
        tau_p: cfg.loss.tau_p,
        ema_alpha: cfg.prototypes.ema_alpha,
        conf_threshold_for_update: cfg.conf_threshold_for_update(),
    };
    Ok(TrainedModel {
        config: cfg,
        student,
        teacher,
        bank,
        standardizer: meta.standardizer,
        student_opt,
        proto_opt,
        epoch: meta.epoch,
        best_val_macro_f1: meta.best_val_macro_f1,
    })
}

pub fn load_model<T: Real>(path: &Path) -> Result<TrainedModel<T>> {
    model_from_checkpoint(Checkpoint::load(path)?)
}
