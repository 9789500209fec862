//! Dual-stream encoder.
//!
//! Sequence stream: input projection plus sinusoidal positions, then
//! pre-norm multi-head self-attention blocks and one bidirectional GRU layer
//! (order configurable), masked-mean pooled to `h_seq`. Statistical stream:
//! a two-layer MLP over the standardized feature vector to `h_stat`. Both
//! are mapped to `d_model`, mixed by a sigmoid gate computed from
//! `[h_seq; h_stat]`, and a projection head produces the unit-norm `z`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use stproc_autodiff::{ParamSet, Real, Tape, Tensor, Var};

use crate::embeddings::Embeddings;
use crate::error::{Error, Result};
use crate::featurize::{DualView, Standardizer, FEATURE_DIM, SEQ_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamOrder {
    AttentionThenRecurrent,
    RecurrentThenAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateKind {
    /// One gate value per hidden unit.
    Vector,
    /// One gate value per sample.
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_attn_layers: usize,
    pub n_heads: usize,
    pub d_stat_hidden: usize,
    /// Width of the unit-norm embedding `z`.
    pub embed_dim: usize,
    pub dropout: f64,
    pub t_max: usize,
    pub order: StreamOrder,
    pub gate: GateKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_attn_layers: 2,
            n_heads: 4,
            d_stat_hidden: 64,
            embed_dim: 32,
            dropout: 0.1,
            t_max: 512,
            order: StreamOrder::AttentionThenRecurrent,
            gate: GateKind::Vector,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("encoder: {msg}")));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model < 2 || self.d_model % 2 != 0 {
            return bad(format!(
                "d_model {} must be even for the bidirectional layer",
                self.d_model
            ));
        }
        if self.embed_dim < 2 {
            return bad(format!("embedding width {} below 2", self.embed_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.t_max == 0 || self.d_stat_hidden == 0 {
            return bad("t_max and d_stat_hidden must be positive".into());
        }
        Ok(())
    }
}

/// Padded encoder input for one batch.
#[derive(Clone, Debug)]
pub struct EncoderBatch<T> {
    /// `[B, T, 4]`, standardized, zero at padded or masked rows.
    pub seq: Tensor<T>,
    /// `B * T` validity flags.
    pub mask: Vec<bool>,
    /// `[B, 48]`, standardized.
    pub stat: Tensor<T>,
}

impl<T: Real> EncoderBatch<T> {
    pub fn from_views(views: &[&DualView], standardizer: &Standardizer) -> Result<Self> {
        let b = views.len();
        if b == 0 {
            return Err(Error::invalid("encoder", "empty batch"));
        }
        let t = views.iter().map(|v| v.valid_len()).max().unwrap_or(0);
        let mut seq = vec![T::zero(); b * t * SEQ_CHANNELS];
        let mut mask = vec![false; b * t];
        let mut stat = Vec::with_capacity(b * FEATURE_DIM);
        for (i, v) in views.iter().enumerate() {
            if v.survivors() == 0 {
                return Err(Error::invalid("encoder", format!("sample {i} has no valid rows")));
            }
            for (j, (row, &m)) in v.seq.iter().zip(&v.mask).enumerate() {
                if m {
                    mask[i * t + j] = true;
                    let r = standardizer.seq_row(row);
                    for c in 0..SEQ_CHANNELS {
                        seq[(i * t + j) * SEQ_CHANNELS + c] = T::lit(r[c]);
                    }
                }
            }
            stat.extend(standardizer.features(&v.f).into_iter().map(T::lit));
        }
        Ok(EncoderBatch {
            seq: Tensor::new(vec![b, t, SEQ_CHANNELS], seq)?,
            mask,
            stat: Tensor::new(vec![b, FEATURE_DIM], stat)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.seq.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.seq.shape()[1]
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[B, d_model]` fused hidden state.
    pub h: Var,
    /// `[B, D]` unit-norm embedding.
    pub z: Var,
}

/// Dropout source; `None` runs the encoder in eval mode.
pub type Dropout<'a> = Option<&'a mut dyn RngCore>;

#[derive(Clone, Debug)]
pub struct Encoder<T: Real> {
    pub config: EncoderConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Encoder<T> {
    /// Glorot-uniform matrices, zero biases, unit layer-norm gains; GRU
    /// weights uniform in `+-1/sqrt(H)`.
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let hd = d / 2;
        let mut p = ParamSet::new();
        let lin = |p: &mut ParamSet<T>, name: &str, i: usize, o: usize, rng: &mut R| {
            let a = (6.0 / (i + o) as f64).sqrt();
            p.push(format!("{name}.w"), uniform(&[i, o], a, rng));
            p.push(format!("{name}.b"), Tensor::zeros(&[o]));
        };
        lin(&mut p, "seq_in", SEQ_CHANNELS, d, rng);
        for l in 0..config.n_attn_layers {
            p.push(format!("attn{l}.ln1.g"), Tensor::full(&[d], T::one()));
            p.push(format!("attn{l}.ln1.b"), Tensor::zeros(&[d]));
            for m in ["q", "k", "v", "o"] {
                lin(&mut p, &format!("attn{l}.{m}"), d, d, rng);
            }
            p.push(format!("attn{l}.ln2.g"), Tensor::full(&[d], T::one()));
            p.push(format!("attn{l}.ln2.b"), Tensor::zeros(&[d]));
            lin(&mut p, &format!("attn{l}.ff1"), d, 2 * d, rng);
            lin(&mut p, &format!("attn{l}.ff2"), 2 * d, d, rng);
        }
        let a = 1.0 / (hd as f64).sqrt();
        for dir in ["fwd", "bwd"] {
            p.push(format!("gru.{dir}.wx"), uniform(&[d, 3 * hd], a, rng));
            p.push(format!("gru.{dir}.bx"), uniform(&[3 * hd], a, rng));
            p.push(format!("gru.{dir}.wh"), uniform(&[hd, 3 * hd], a, rng));
            p.push(format!("gru.{dir}.bh"), uniform(&[3 * hd], a, rng));
        }
        lin(&mut p, "stat1", FEATURE_DIM, config.d_stat_hidden, rng);
        lin(&mut p, "stat2", config.d_stat_hidden, config.d_stat_hidden, rng);
        lin(&mut p, "map_seq", d, d, rng);
        lin(&mut p, "map_stat", config.d_stat_hidden, d, rng);
        let gate_out = match config.gate {
            GateKind::Vector => d,
            GateKind::Scalar => 1,
        };
        lin(&mut p, "gate", d + config.d_stat_hidden, gate_out, rng);
        lin(&mut p, "proj1", d, d, rng);
        lin(&mut p, "proj2", d, config.embed_dim, rng);
        Ok(Encoder { config, params: p })
    }

    /// Rebuilds an encoder around existing parameters, checking the layout
    /// against a freshly initialized one.
    pub fn from_params(config: EncoderConfig, params: ParamSet<T>) -> Result<Self> {
        let template: Encoder<T> = Encoder::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        if !template.params.same_layout(&params) {
            return Err(Error::Config(
                "parameters do not match the encoder configuration".into(),
            ));
        }
        Ok(Encoder { config, params })
    }

    /// Records a forward pass on `tape`. `vars` are this encoder's
    /// parameters attached to the same tape (see [`ParamSet::attach`]).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        batch: &EncoderBatch<T>,
        mut dropout: Dropout<'_>,
    ) -> Result<EncoderOutput> {
        if vars.len() != self.params.len() {
            return Err(Error::invalid("encoder", "parameter handles do not match the encoder"));
        }
        let cfg = &self.config;
        let p = |name: &str| -> Var {
            vars[self
                .params
                .index_of(name)
                .unwrap_or_else(|| panic!("missing parameter {name}"))]
        };
        let (b, t) = (batch.batch_size(), batch.steps());
        let d = cfg.d_model;

        let x = tape.constant(batch.seq.clone());
        let x = linear(tape, x, p("seq_in.w"), p("seq_in.b"))?;
        let pe = tape.constant(positional_encoding(t, d));
        let mut s = tape.add(x, pe)?;
        match cfg.order {
            StreamOrder::AttentionThenRecurrent => {
                s = self.attention_blocks(tape, &p, s, &batch.mask, &mut dropout)?;
                s = bigru(tape, &p, s, &batch.mask, b, t)?;
            }
            StreamOrder::RecurrentThenAttention => {
                s = bigru(tape, &p, s, &batch.mask, b, t)?;
                s = self.attention_blocks(tape, &p, s, &batch.mask, &mut dropout)?;
            }
        }
        let h_seq = tape.masked_mean(s, &batch.mask)?;

        let f = tape.constant(batch.stat.clone());
        let u = linear(tape, f, p("stat1.w"), p("stat1.b"))?;
        let u = tape.relu(u);
        let u = apply_dropout(tape, u, cfg.dropout, &mut dropout)?;
        let h_stat = linear(tape, u, p("stat2.w"), p("stat2.b"))?;

        let seq_m = linear(tape, h_seq, p("map_seq.w"), p("map_seq.b"))?;
        let stat_m = linear(tape, h_stat, p("map_stat.w"), p("map_stat.b"))?;
        let both = tape.concat(&[h_seq, h_stat], 1)?;
        let g = linear(tape, both, p("gate.w"), p("gate.b"))?;
        let g = tape.sigmoid(g);
        let a = tape.mul(g, seq_m)?;
        let g1 = tape.one_minus(g);
        let c = tape.mul(g1, stat_m)?;
        let h = tape.add(a, c)?;

        let hd = apply_dropout(tape, h, cfg.dropout, &mut dropout)?;
        let q = linear(tape, hd, p("proj1.w"), p("proj1.b"))?;
        let q = tape.relu(q);
        let q = linear(tape, q, p("proj2.w"), p("proj2.b"))?;
        let z = tape.l2_normalize(q);
        Ok(EncoderOutput { h, z })
    }

    fn attention_blocks(
        &self,
        tape: &mut Tape<T>,
        p: &dyn Fn(&str) -> Var,
        mut x: Var,
        mask: &[bool],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        let cfg = &self.config;
        for l in 0..cfg.n_attn_layers {
            let n = |s: &str| p(&format!("attn{l}.{s}"));
            let y = tape.layer_norm(x, n("ln1.g"), n("ln1.b"))?;
            let q = linear(tape, y, n("q.w"), n("q.b"))?;
            let k = linear(tape, y, n("k.w"), n("k.b"))?;
            let v = linear(tape, y, n("v.w"), n("v.b"))?;
            let a = tape.attention(q, k, v, cfg.n_heads, mask)?;
            let o = linear(tape, a, n("o.w"), n("o.b"))?;
            let o = apply_dropout(tape, o, cfg.dropout, dropout)?;
            x = tape.add(x, o)?;
            let y = tape.layer_norm(x, n("ln2.g"), n("ln2.b"))?;
            let f = linear(tape, y, n("ff1.w"), n("ff1.b"))?;
            let f = tape.relu(f);
            let f = linear(tape, f, n("ff2.w"), n("ff2.b"))?;
            let f = apply_dropout(tape, f, cfg.dropout, dropout)?;
            x = tape.add(x, f)?;
        }
        Ok(x)
    }

    /// Eval-mode embeddings of `views`, computed in chunks of `chunk`.
    pub fn embed(&self, views: &[&DualView], standardizer: &Standardizer, chunk: usize) -> Result<Embeddings> {
        let mut data = Vec::with_capacity(views.len() * self.config.embed_dim);
        for part in views.chunks(chunk.max(1)) {
            let batch = EncoderBatch::<T>::from_views(part, standardizer)?;
            let mut tape = Tape::new();
            let vars = self.params.attach(&mut tape, false);
            let out = self.forward(&mut tape, &vars, &batch, None)?;
            data.extend(tape.value(out.z).data().iter().map(|x| x.as_f64()));
        }
        Ok(Embeddings::new(views.len(), self.config.embed_dim, data))
    }
}

/// Teacher forward pass: eval mode with all parameters as constants, so no
/// gradient can reach them.
pub fn teacher_encode<T: Real>(
    teacher: &Encoder<T>,
    student: &Encoder<T>,
    tape: &mut Tape<T>,
    batch: &EncoderBatch<T>,
) -> Result<EncoderOutput> {
    if !teacher.params.same_layout(&student.params) || teacher.config != student.config {
        return Err(Error::invalid("teacher_encode", "teacher and student shapes differ"));
    }
    let vars = teacher.params.attach(tape, false);
    teacher.forward(tape, &vars, batch, None)
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`, elementwise.
pub fn ema_update_teacher<T: Real>(student: &Encoder<T>, teacher: &mut Encoder<T>, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(
            "ema_update_teacher",
            format!("alpha {alpha} outside [0, 1]"),
        ));
    }
    teacher.params.ema_from(&student.params, T::lit(alpha))?;
    Ok(())
}

fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], a: f64, rng: &mut R) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

fn linear<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, b)?)
}

fn apply_dropout<T: Real>(tape: &mut Tape<T>, x: Var, p: f64, rng: &mut Dropout<'_>) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => {
            let keep: Vec<bool> = (0..tape.value(x).numel()).map(|_| r.random::<f64>() >= p).collect();
            Ok(tape.dropout(x, p, &keep)?)
        }
        _ => Ok(x),
    }
}

/// Bidirectional GRU over `[B, T, d]`; masked steps carry the state through.
/// Returns `[B, T, d]` with forward and backward halves concatenated.
fn bigru<T: Real>(
    tape: &mut Tape<T>,
    p: &dyn Fn(&str) -> Var,
    x: Var,
    mask: &[bool],
    b: usize,
    t: usize,
) -> Result<Var> {
    let mut halves = Vec::with_capacity(2);
    for dir in ["fwd", "bwd"] {
        let n = |s: &str| p(&format!("gru.{dir}.{s}"));
        let xp = linear(tape, x, n("wx"), n("bx"))?;
        let hd = tape.shape(n("wh"))[0];
        let mut h = tape.constant(Tensor::zeros(&[b, hd]));
        let mut outs = vec![h; t];
        let order: Vec<usize> = if dir == "fwd" {
            (0..t).collect()
        } else {
            (0..t).rev().collect()
        };
        for step in order {
            let xs = tape.select(xp, 1, step)?;
            let m: Vec<bool> = (0..b).map(|i| mask[i * t + step]).collect();
            h = tape.gru_cell(xs, h, n("wh"), n("bh"), &m)?;
            outs[step] = h;
        }
        halves.push(tape.stack(&outs, 1)?);
    }
    Ok(tape.concat(&halves, 2)?)
}

fn positional_encoding<T: Real>(t: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[t, d], |k| {
        let (pos, i) = ((k / d) as f64, k % d);
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        T::lit(if i % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        })
    })
}
