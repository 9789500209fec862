//! The semi-supervised training loop.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stproc_autodiff::{AdamW, ParamSet, Real, StepOutcome, Tape, Tensor};

use super::config::TrainConfig;
use super::history::EpochRecord;
use super::sampler::{BatchComposer, BatchPlan};
use crate::embeddings::Embeddings;
use crate::encoder::{ema_update_teacher, Encoder, EncoderBatch};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::featurize::{augment, fit_standardizer, DualView, Standardizer};
use crate::graph::{
    build_global_knn, clip_subgraph, dynamic_batch_knn, label_propagate, laplacian, AdjacencySource, SemanticGraph,
};
use crate::ingest::{DatasetSplit, Segment};
use crate::mode::{Mode, NUM_CLASSES};
use crate::objectives::argmax;
use crate::objectives::{
    loss_consistency, loss_contrastive, loss_graph_smooth, loss_neighbor_contrast, loss_proto, loss_pseudo, loss_total,
    pseudo_label, update_prototypes, LossComponents, LossReport, PrototypeBank, PseudoLabelBatch,
};

/// Featurized training data. Unlabeled truth is kept only for diagnostics.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub labeled: Vec<DualView>,
    pub labeled_y: Vec<usize>,
    pub unlabeled: Vec<DualView>,
    pub unlabeled_truth: Vec<Option<usize>>,
    pub validation: Vec<DualView>,
    pub validation_y: Vec<usize>,
}

impl PreparedData {
    pub fn from_split(split: &DatasetSplit, t_max: usize) -> Result<Self> {
        let views = |segs: &[Segment]| -> Result<Vec<DualView>> {
            segs.iter().map(|s| DualView::from_segment(s, t_max)).collect()
        };
        let labels = |segs: &[Segment], what: &str| -> Result<Vec<usize>> {
            segs.iter()
                .map(|s| {
                    s.label.map(|m| m.index()).ok_or_else(|| {
                        Error::invalid("prepare", format!("{what} segment {} has no label", s.segment_id))
                    })
                })
                .collect()
        };
        Ok(PreparedData {
            labeled: views(&split.labeled)?,
            labeled_y: labels(&split.labeled, "labeled")?,
            unlabeled: views(&split.unlabeled)?,
            unlabeled_truth: split.unlabeled_truth.iter().map(|m| m.map(|m| m.index())).collect(),
            validation: views(&split.validation)?,
            validation_y: labels(&split.validation, "validation")?,
        })
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct TrainedModel<T: Real> {
    pub config: TrainConfig,
    pub student: Encoder<T>,
    pub teacher: Encoder<T>,
    pub bank: PrototypeBank<T>,
    pub standardizer: Standardizer,
    pub student_opt: AdamW<T>,
    pub proto_opt: AdamW<T>,
    /// Last completed epoch of this state.
    pub epoch: usize,
    pub best_val_macro_f1: Option<f64>,
}

impl<T: Real> TrainedModel<T> {
    pub fn embed(&self, views: &[&DualView]) -> Result<Embeddings> {
        self.teacher
            .embed(views, &self.standardizer, self.config.run.eval_chunk)
    }

    /// Argmax prototype of each view's teacher embedding.
    pub fn predict(&self, views: &[&DualView]) -> Result<Vec<usize>> {
        Ok(self.bank.predict(&self.embed(views)?))
    }

    /// Scores labeled segments. Unlabeled ones are an error.
    pub fn evaluate(&self, segments: &[Segment]) -> Result<EvalReport> {
        let truth = segments
            .iter()
            .map(|s| {
                s.label
                    .map(Mode::index)
                    .ok_or_else(|| Error::invalid("evaluate", format!("segment {} has no label", s.segment_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let views = segments
            .iter()
            .map(|s| DualView::from_segment(s, self.config.encoder.t_max))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DualView> = views.iter().collect();
        EvalReport::from_predictions(&truth, &self.predict(&refs)?, NUM_CLASSES)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    /// State at the best validation epoch.
    pub model: TrainedModel<T>,
    pub history: Vec<EpochRecord>,
}

fn zeros_like<T: Real>(p: &ParamSet<T>) -> Vec<Tensor<T>> {
    p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
}

/// Running sums for one epoch's record.
#[derive(Default)]
struct EpochStats {
    loss: LossReport,
    applied: usize,
    skipped: usize,
    pseudo_seen: usize,
    pseudo_accepted: usize,
    pseudo_correct: usize,
    pseudo_with_truth: usize,
    conf_sum: f64,
    margin_sum: f64,
    lr: f64,
    graph_source: Option<AdjacencySource>,
}

impl EpochStats {
    fn add_loss(&mut self, r: &LossReport) {
        let l = &mut self.loss;
        l.ctr += r.ctr;
        l.proto += r.proto;
        l.smooth += r.smooth;
        l.nbr += r.nbr;
        l.pseudo += r.pseudo;
        l.cons += r.cons;
        l.total += r.total;
        l.w_p = r.w_p;
        l.w_c = r.w_c;
    }

    fn mean_loss(&self) -> LossReport {
        let n = self.applied.max(1) as f64;
        let l = &self.loss;
        LossReport {
            ctr: l.ctr / n,
            proto: l.proto / n,
            smooth: l.smooth / n,
            nbr: l.nbr / n,
            pseudo: l.pseudo / n,
            cons: l.cons / n,
            total: l.total / n,
            w_p: l.w_p,
            w_c: l.w_c,
        }
    }
}

struct Trainer<'a, T: Real> {
    cfg: &'a TrainConfig,
    data: &'a PreparedData,
    model: TrainedModel<T>,
    rng: ChaCha8Rng,
    composer: BatchComposer,
    global: Option<SemanticGraph>,
    /// Label propagation scores, indexed by global node id.
    propagation: Option<Vec<Vec<f64>>>,
    global_step: u64,
}

/// Trains on `data` and returns the best-validation state plus the history.
/// `on_epoch` sees each record as it is produced.
pub fn train<T: Real>(
    config: &TrainConfig,
    data: &PreparedData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.labeled.len() != data.labeled_y.len() || data.unlabeled.len() != data.unlabeled_truth.len() {
        return Err(Error::invalid("train", "views and labels differ in length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
    let fit_views: Vec<&DualView> = data.labeled.iter().chain(&data.unlabeled).collect();
    let standardizer = fit_standardizer(&fit_views)?;
    let student: Encoder<T> = Encoder::new(config.encoder.clone(), &mut rng)?;
    let teacher = student.clone();
    let bank = PrototypeBank::random(
        NUM_CLASSES,
        config.encoder.embed_dim,
        config.loss.tau_p,
        config.prototypes.ema_alpha,
        config.conf_threshold_for_update(),
        &mut rng,
    );
    let epochs = config.run.epochs;
    let student_opt = AdamW::new(config.optimizer.adamw(epochs, true), &student.params);
    let proto_opt = AdamW::new(config.optimizer.adamw(epochs, false), &bank.params);
    let composer = BatchComposer::new(&data.labeled_y, data.unlabeled.len(), config.run.batch_size)?;
    let t = Trainer {
        cfg: config,
        data,
        model: TrainedModel {
            config: config.clone(),
            student,
            teacher,
            bank,
            standardizer,
            student_opt,
            proto_opt,
            epoch: 0,
            best_val_macro_f1: None,
        },
        rng,
        composer,
        global: None,
        propagation: None,
        global_step: 0,
    };
    t.run(&mut on_epoch)
}

impl<T: Real> Trainer<'_, T> {
    fn n_labeled(&self) -> usize {
        self.data.labeled.len()
    }

    fn steps_per_epoch(&self) -> usize {
        (self.data.labeled.len() + self.data.unlabeled.len()).div_ceil(self.cfg.run.batch_size)
    }

    /// Whether any active term looks at the unlabeled half of a batch.
    fn uses_unlabeled_rows(&self) -> bool {
        let l = &self.cfg.loss;
        l.lambda_ctr > 0.0 || self.cfg.uses_batch_graph() || l.lambda_pseudo_max > 0.0 || l.lambda_cons_max > 0.0
    }

    fn run(mut self, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome<T>> {
        let cfg = self.cfg;
        let mut history = Vec::new();
        let mut best: Option<(f64, TrainedModel<T>)> = None;
        let mut since_best = 0;
        for epoch in 0..cfg.run.epochs {
            let mut stats = EpochStats::default();
            self.composer.start_epoch(&mut self.rng);
            let steps = self.steps_per_epoch();
            for s in 0..steps {
                let progress = epoch as f64 + s as f64 / steps as f64;
                self.step(epoch, progress, &mut stats)?;
            }
            if epoch == 0 {
                self.init_prototypes()?;
            }
            let g = &cfg.graph;
            let needs_global = cfg.uses_batch_graph() || cfg.uses_propagation();
            if needs_global && epoch + 1 >= g.warmup_epochs && (epoch + 1 - g.warmup_epochs) % g.rebuild_every == 0 {
                self.rebuild_global()?;
            }
            self.model.epoch = epoch;
            let val = self.validate()?;
            let improved = match (val, &best) {
                (Some(v), Some((b, _))) => v > *b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                since_best = 0;
                let v = val.expect("improved implies a score");
                self.model.best_val_macro_f1 = Some(v);
                best = Some((v, self.model.clone()));
            } else {
                since_best += 1;
            }
            let record = EpochRecord {
                epoch,
                lr: stats.lr,
                steps,
                skipped_steps: stats.skipped,
                loss: stats.mean_loss(),
                pseudo_accept_rate: ratio(stats.pseudo_accepted, stats.pseudo_seen),
                pseudo_mean_confidence: stats.conf_sum / stats.pseudo_seen.max(1) as f64,
                pseudo_mean_margin: stats.margin_sum / stats.pseudo_seen.max(1) as f64,
                pseudo_precision: (stats.pseudo_with_truth > 0)
                    .then(|| stats.pseudo_correct as f64 / stats.pseudo_with_truth as f64),
                pseudo_accepted: stats.pseudo_accepted,
                graph_source: stats.graph_source,
                global_graph_edges: self.global.as_ref().map(SemanticGraph::num_edges),
                propagation_accuracy: self.propagation_accuracy(),
                val_macro_f1: val,
                best_val_macro_f1: best.as_ref().map(|b| b.0),
            };
            log::info!(
                "epoch {epoch}: loss {:.4} val macro-F1 {} accepted {}",
                record.loss.total,
                val.map_or("-".into(), |v| format!("{v:.4}")),
                record.pseudo_accepted
            );
            on_epoch(&record);
            history.push(record);
            if best.is_some() && since_best >= cfg.run.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
        let model = match best {
            Some((_, m)) => m,
            None => self.model,
        };
        Ok(TrainOutcome { model, history })
    }

    fn validate(&self) -> Result<Option<f64>> {
        if self.data.validation.is_empty() {
            return Ok(None);
        }
        let views: Vec<&DualView> = self.data.validation.iter().collect();
        let pred = self.model.predict(&views)?;
        Ok(Some(
            EvalReport::from_predictions(&self.data.validation_y, &pred, NUM_CLASSES)?.macro_f1,
        ))
    }

    /// Prototypes start at the normalized class means of the labeled
    /// teacher embeddings; classes without labels keep their random rows.
    fn init_prototypes(&mut self) -> Result<()> {
        let views: Vec<&DualView> = self.data.labeled.iter().collect();
        let z = self.model.embed(&views)?;
        let mut sums = vec![vec![0.0; z.dim()]; NUM_CLASSES];
        let mut counts = [0usize; NUM_CLASSES];
        for (i, &y) in self.data.labeled_y.iter().enumerate() {
            counts[y] += 1;
            for (s, x) in sums[y].iter_mut().zip(z.row(i)) {
                *s += x;
            }
        }
        for c in 0..NUM_CLASSES {
            let n = sums[c].iter().map(|x| x * x).sum::<f64>().sqrt();
            if counts[c] > 0 && n > 0.0 {
                let row: Vec<f64> = sums[c].iter().map(|x| x / n).collect();
                self.model.bank.set_row(c, &row);
            }
        }
        self.model.proto_opt.reset_slot(0);
        Ok(())
    }

    /// Rebuilds the k-NN graph over all training embeddings (labeled node
    /// `i` is id `i`, unlabeled `j` is `n_L + j`) and refreshes label
    /// propagation from the labeled seeds.
    fn rebuild_global(&mut self) -> Result<()> {
        let views: Vec<&DualView> = self.data.labeled.iter().chain(&self.data.unlabeled).collect();
        let z = self.model.embed(&views)?;
        let k = self.cfg.graph.k.min(z.len().saturating_sub(1));
        let graph = build_global_knn(&z, k)?;
        let mut seeds: Vec<Option<usize>> = self.data.labeled_y.iter().map(|&y| Some(y)).collect();
        seeds.resize(z.len(), None);
        self.propagation = Some(label_propagate(
            &graph,
            &seeds,
            NUM_CLASSES,
            &self.cfg.graph.propagation,
        )?);
        log::debug!(
            "global graph rebuilt: {} nodes, {} edges",
            graph.len(),
            graph.num_edges()
        );
        self.global = Some(graph);
        Ok(())
    }

    fn propagation_accuracy(&self) -> Option<f64> {
        let scores = self.propagation.as_ref()?;
        let n_l = self.n_labeled();
        let (mut hit, mut seen) = (0, 0);
        for (j, truth) in self.data.unlabeled_truth.iter().enumerate() {
            if let Some(y) = truth {
                seen += 1;
                hit += usize::from(argmax(&scores[n_l + j]) == *y);
            }
        }
        (seen > 0).then(|| hit as f64 / seen as f64)
    }

    fn node_ids(&self, plan: &BatchPlan) -> Vec<usize> {
        let offset = if plan.unlabeled_from_labeled {
            0
        } else {
            self.n_labeled()
        };
        plan.labeled
            .iter()
            .copied()
            .chain(plan.unlabeled.iter().map(|&j| offset + j))
            .collect()
    }

    fn step(&mut self, epoch: usize, progress: f64, stats: &mut EpochStats) -> Result<()> {
        let cfg = self.cfg;
        let w = &cfg.loss;
        let mut plan = self.composer.next_batch(&mut self.rng)?;
        if !self.uses_unlabeled_rows() {
            plan.unlabeled.clear();
        }
        let n_l = plan.labeled.len();
        let base = views_of(self.data, &plan);
        let n = base.len();

        let mut strong1 = Vec::with_capacity(n);
        let mut strong2 = Vec::with_capacity(n);
        let mut weak = Vec::with_capacity(n);
        let weak_policy = cfg.augment.weak();
        for v in &base {
            strong1.push(augment(v, &cfg.augment, &mut self.rng)?);
            if w.lambda_ctr > 0.0 {
                strong2.push(augment(v, &cfg.augment, &mut self.rng)?);
            }
            weak.push(augment(v, &weak_policy, &mut self.rng)?);
        }
        let std = &self.model.standardizer;
        let batch1: EncoderBatch<T> = EncoderBatch::from_views(&strong1.iter().collect::<Vec<_>>(), std)?;
        let batch_w: EncoderBatch<T> = EncoderBatch::from_views(&weak.iter().collect::<Vec<_>>(), std)?;

        // Teacher pass on its own tape; only its values are used.
        let zt = {
            let mut tt = Tape::new();
            let vars = self.model.teacher.params.attach(&mut tt, false);
            let out = self.model.teacher.forward(&mut tt, &vars, &batch_w, None)?;
            tt.value(out.z).clone()
        };
        let zt64 = Embeddings::new(n, zt.shape()[1], zt.to_f64_vec());

        let mut tape = Tape::new();
        let vars = self.model.student.params.attach(&mut tape, true);
        let protos = self.model.bank.attach(&mut tape, cfg.prototypes.gradient);
        let z1 = {
            let rng: &mut dyn RngCore = &mut self.rng;
            self.model.student.forward(&mut tape, &vars, &batch1, Some(rng))?.z
        };
        let zero = tape.constant(Tensor::scalar(T::zero()));

        let ctr = if w.lambda_ctr > 0.0 {
            let batch2: EncoderBatch<T> = EncoderBatch::from_views(&strong2.iter().collect::<Vec<_>>(), std)?;
            let rng: &mut dyn RngCore = &mut self.rng;
            let z2 = self.model.student.forward(&mut tape, &vars, &batch2, Some(rng))?.z;
            loss_contrastive(&mut tape, z1, z2, w.tau_c)?
        } else {
            zero
        };

        let labeled_rows: Vec<usize> = (0..n_l).collect();
        let labels: Vec<usize> = plan.labeled.iter().map(|&i| self.data.labeled_y[i]).collect();
        let z_l = tape.gather_rows(z1, &labeled_rows)?;
        let proto = loss_proto(&mut tape, z_l, &labels, protos, w.tau_p)?.value;

        let (smooth, nbr) = if cfg.uses_batch_graph() {
            let adj = match (&self.global, epoch >= cfg.graph.warmup_epochs) {
                (Some(g), true) => clip_subgraph(g, &self.node_ids(&plan))?,
                _ => {
                    let v = tape.value(z1);
                    dynamic_batch_knn(&Embeddings::new(n, v.shape()[1], v.to_f64_vec()), cfg.graph.k)
                }
            };
            stats.graph_source = Some(adj.source);
            let smooth = if w.lambda_s > 0.0 {
                loss_graph_smooth(&mut tape, z1, &laplacian(&adj)?)?
            } else {
                zero
            };
            let nbr = if w.lambda_n > 0.0 {
                loss_neighbor_contrast(&mut tape, z1, &adj, w.tau_n)?.value
            } else {
                zero
            };
            (smooth, nbr)
        } else {
            (zero, zero)
        };

        let use_pseudo = cfg.uses_pseudo_labels() && !plan.unlabeled_from_labeled && !plan.unlabeled.is_empty();
        let mut pseudo_batch = PseudoLabelBatch::default();
        let pseudo = if use_pseudo {
            let rows: Vec<usize> = (n_l..n).collect();
            let zu = zt64.select(&rows);
            let proto_p = self.model.bank.probs(&zu);
            let uniform = vec![1.0 / NUM_CLASSES as f64; NUM_CLASSES];
            let ids = self.node_ids(&plan);
            let prop: Vec<Vec<f64>> = rows
                .iter()
                .map(|&r| match &self.propagation {
                    Some(p) => p[ids[r]].clone(),
                    None => uniform.clone(),
                })
                .collect();
            pseudo_batch = pseudo_label(&proto_p, &prop, &cfg.pseudo)?;
            for (k, pl) in pseudo_batch.labels.iter().enumerate() {
                stats.pseudo_seen += 1;
                stats.conf_sum += pl.confidence;
                stats.margin_sum += pl.margin;
                if pl.accepted {
                    stats.pseudo_accepted += 1;
                    if let Some(truth) = self.data.unlabeled_truth[plan.unlabeled[k]] {
                        stats.pseudo_with_truth += 1;
                        stats.pseudo_correct += usize::from(truth == pl.label);
                    }
                }
            }
            let z_u = tape.gather_rows(z1, &rows)?;
            loss_pseudo(&mut tape, z_u, &pseudo_batch, protos, w.tau_p)?.value
        } else {
            zero
        };

        let cons = if w.lambda_cons_max > 0.0 {
            let zt_var = tape.constant(zt);
            loss_consistency(&mut tape, z1, zt_var)?
        } else {
            zero
        };

        let comps = LossComponents {
            ctr,
            proto,
            smooth,
            nbr,
            pseudo,
            cons,
        };
        let mut weights = w.clone();
        if plan.unlabeled_from_labeled {
            weights.lambda_pseudo_max = 0.0;
        }
        let (total, report) = loss_total(&mut tape, &comps, &weights, progress).inspect_err(|e| {
            log::error!("aborting at epoch {epoch}: {e}");
        })?;

        let mut grads = tape.backward(total)?;
        let mut g_student: Vec<Tensor<T>> = zeros_like(&self.model.student.params);
        for (slot, v) in g_student.iter_mut().zip(&vars) {
            if let Some(g) = grads.take(*v) {
                *slot = g;
            }
        }
        let outcome = self
            .model
            .student_opt
            .step(&mut self.model.student.params, &mut g_student, progress)?;
        if cfg.prototypes.gradient {
            let mut g_proto = zeros_like(&self.model.bank.params);
            if let Some(g) = grads.take(protos) {
                g_proto[0] = g;
            }
            self.model
                .proto_opt
                .step(&mut self.model.bank.params, &mut g_proto, progress)?;
            self.model.bank.renormalize();
        }
        match outcome {
            StepOutcome::Applied { lr, .. } => {
                stats.applied += 1;
                stats.lr = lr;
                stats.add_loss(&report);
            }
            StepOutcome::Skipped => stats.skipped += 1,
        }

        self.global_step += 1;
        let t = &cfg.teacher;
        let alpha = if t.warmup {
            t.ema_alpha.min(1.0 - 1.0 / (self.global_step as f64 + 1.0))
        } else {
            t.ema_alpha
        };
        ema_update_teacher(&self.model.student, &mut self.model.teacher, alpha)?;

        if cfg.prototypes.ema {
            let mut rows: Vec<usize> = (0..n_l).collect();
            let mut ema_labels = labels;
            let mut conf: Vec<Option<f64>> = vec![None; n_l];
            for (k, pl) in pseudo_batch.labels.iter().enumerate() {
                if pl.accepted {
                    rows.push(n_l + k);
                    ema_labels.push(pl.label);
                    conf.push(Some(pl.confidence));
                }
            }
            update_prototypes(&mut self.model.bank, &zt64.select(&rows), &ema_labels, &conf)?;
        }
        Ok(())
    }
}

fn views_of<'d>(data: &'d PreparedData, plan: &BatchPlan) -> Vec<&'d DualView> {
    let pool = if plan.unlabeled_from_labeled {
        &data.labeled
    } else {
        &data.unlabeled
    };
    plan.labeled
        .iter()
        .map(|&i| &data.labeled[i])
        .chain(plan.unlabeled.iter().map(|&j| &pool[j]))
        .collect()
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
