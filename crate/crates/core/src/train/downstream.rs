//! Linear probing and fine-tuning on labelled downstream tasks.
//!
//! Both train a single affine head on encoder embeddings. Embeddings are
//! standardized with per-dimension statistics of the training split before
//! the head. Classification uses cross-entropy (sigmoid for binary, softmax
//! for categorical), regression an L1 loss on z-scored targets whose
//! predictions are mapped back to the original scale for the MAE.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::EpochRecord;
use super::optim::{Adam, AdamConfig, EarlyStopping, Schedule, ScheduleKind, Verdict};
use super::{accumulate, batch_ranges, ChunkedPass};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::data::{split, DownstreamSet, Label, SplitMode, TaskKind};
use crate::encoder::{Encoder, ParamMode};
use crate::error::{Error, Result};
use crate::eval::{auroc, auroc_macro_ovr, mae, MetricReport, ZScore};
use crate::loss::LossValue;
use crate::numeric::{derive_seed, stream};
use crate::signal::{PreprocessConfig, Preprocessor};

const SPLIT_STREAM: u64 = 0x4453;
const ORDER_STREAM: u64 = 0x444f;
const HEAD_STREAM: u64 = 0x4448;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub lr: f64,
    /// L2 penalty added to the gradient (plain Adam).
    pub weight_decay: f64,
    /// Upper bound; early stopping usually ends training sooner.
    pub epochs: usize,
    pub patience: usize,
    pub restart_period: usize,
    pub batch_size: usize,
    /// Seeds the split, the head initialization and the batch order.
    pub seed: u64,
    /// Train, validation and test fractions of the subjects.
    pub split: [f64; 3],
    pub chunk: usize,
    pub preprocess: PreprocessConfig,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-5,
            epochs: 100,
            patience: 5,
            restart_period: 10,
            batch_size: 32,
            seed: 0,
            split: [0.5, 0.25, 0.25],
            chunk: 16,
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl DownstreamConfig {
    /// Settings for small synthetic runs. With a few hundred subjects an
    /// epoch is only a handful of steps, so the head needs a larger step.
    pub fn desk() -> Self {
        Self { lr: 1e-2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.chunk == 0 || self.restart_period == 0 {
            return Err(Error::config("epochs, batch_size, chunk and restart_period must be positive"));
        }
        Schedule::new(ScheduleKind::WarmRestarts { period: self.restart_period }, self.lr, self.epochs)?;
        AdamConfig::adam(self.weight_decay).validate()
    }
}

/// Embeddings of a whole downstream set under a fixed encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub task: TaskKind,
    pub subject_ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct DownstreamOutcome {
    pub task: TaskKind,
    /// `auroc`, `macro_auroc` or `mae`.
    pub metric: &'static str,
    /// Metric on the test split, computed with the best-validation weights.
    pub value: f64,
    pub val_value: f64,
    pub n_test: usize,
    pub seed: u64,
    /// `head.weight`, `head.bias`, `head.norm_mean`, `head.norm_scale` and,
    /// for regression, `head.target` (`[mean, std]`).
    pub head: ParamStore,
    /// The fine-tuned encoder; `None` for a linear probe.
    pub encoder: Option<Encoder>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl DownstreamOutcome {
    pub fn report(&self, task: impl Into<String>) -> MetricReport {
        MetricReport { task: task.into(), metric: self.metric.to_string(), value: self.value, n: self.n_test, seed: self.seed }
    }
}

fn preprocess(set: &DownstreamSet, cfg: &PreprocessConfig) -> Result<Vec<Vec<f64>>> {
    set.validate()?;
    let pre = Preprocessor::new(set.fs, cfg)?;
    let n = set.samples.first().map_or(0, |s| s.signal.len());
    set.samples
        .iter()
        .map(|s| {
            if s.signal.len() != n {
                return Err(Error::Malformed(format!("subject {} has {} samples, expected {n}", s.subject_id, s.signal.len())));
            }
            let x: Vec<f64> = s.signal.iter().map(|&v| v as f64).collect();
            Ok(pre.apply(&x).samples)
        })
        .collect()
}

/// Embeds every sample of `set` with the frozen encoder.
pub fn probe_features(encoder: &Encoder, set: &DownstreamSet, cfg: &DownstreamConfig) -> Result<FeatureSet> {
    let signals = preprocess(set, &cfg.preprocess)?;
    Ok(FeatureSet {
        task: set.task,
        subject_ids: set.samples.iter().map(|s| s.subject_id).collect(),
        features: encoder.embed_rows(&signals, cfg.chunk)?,
        labels: set.samples.iter().map(|s| s.label).collect(),
    })
}

/// Standardization of features and (for regression) targets from the
/// training split.
#[derive(Debug, Clone)]
struct Normalizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    target: Option<ZScore>,
}

impl Normalizer {
    fn fit(features: &[&[f64]], labels: &[Label], task: TaskKind) -> Result<Self> {
        let h = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; h];
        for f in features {
            for (m, v) in mean.iter_mut().zip(*f) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; h];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(*f).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.iter().map(|&v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        let target = match task {
            TaskKind::Regression => Some(ZScore::fit(&labels.iter().map(|l| l.as_f64()).collect::<Vec<_>>())?),
            _ => None,
        };
        Ok(Self { mean, scale, target })
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect()
    }

    fn targets(&self, labels: &[Label]) -> Vec<f64> {
        labels
            .iter()
            .map(|l| match (l, &self.target) {
                (Label::Real(v), Some(z)) => z.normalize(*v),
                (l, _) => l.as_f64(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    /// `(k, h)`
    weight: Tensor,
    /// `(k)`
    bias: Tensor,
}

impl Head {
    fn init(k: usize, h: usize, seed: u64) -> Result<Self> {
        let bound = 1.0 / (h as f64).sqrt();
        let mut rng = stream(seed, &[HEAD_STREAM]);
        let w = (0..k * h).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self { weight: Tensor::new(vec![k, h], w)?, bias: Tensor::zeros(&[k]) })
    }

    fn logits(&self, x: &[Vec<f64>]) -> Result<Tensor> {
        let (k, h) = (self.weight.shape()[0], self.weight.shape()[1]);
        let w = self.weight.data();
        let mut out = Vec::with_capacity(x.len() * k);
        for row in x {
            for o in 0..k {
                out.push(row.iter().zip(&w[o * h..(o + 1) * h]).map(|(a, b)| a * b).sum::<f64>() + self.bias.data()[o]);
            }
        }
        Tensor::new(vec![x.len(), k], out)
    }

    fn tensors(&self) -> [Tensor; 2] {
        [self.weight.clone(), self.bias.clone()]
    }

    fn step(&mut self, opt: &mut Adam, grads: &[Tensor], lr: f64) -> Result<()> {
        let mut params = self.tensors();
        opt.step(&mut params, grads, lr)?;
        [self.weight, self.bias] = params;
        Ok(())
    }

    fn store(&self, norm: &Normalizer) -> Result<ParamStore> {
        let h = norm.mean.len();
        let mut s = ParamStore::new();
        s.add("head.weight", self.weight.clone());
        s.add("head.bias", self.bias.clone());
        s.add("head.norm_mean", Tensor::new(vec![h], norm.mean.clone())?);
        s.add("head.norm_scale", Tensor::new(vec![h], norm.scale.clone())?);
        if let Some(z) = norm.target {
            s.add("head.target", Tensor::new(vec![2], vec![z.mean, z.std])?);
        }
        Ok(s)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over rows of `logits` and its gradient.
fn head_loss(logits: &Tensor, targets: &[f64], task: TaskKind) -> Result<LossValue> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if n != targets.len() || k != task.outputs() {
        return Err(Error::shape("head loss", format!("logits {:?} for {} targets", logits.shape(), targets.len())));
    }
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let z = &logits.data()[i * k..(i + 1) * k];
        let g = &mut grad[i * k..(i + 1) * k];
        match task {
            TaskKind::Binary => {
                let x = z[0];
                total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
                g[0] = (sigmoid(x) - y) * inv;
            }
            TaskKind::Categorical(_) => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
                let c = y as usize;
                total += m + sum.ln() - z[c];
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = ((z[j] - m).exp() / sum - if j == c { 1.0 } else { 0.0 }) * inv;
                }
            }
            TaskKind::Regression => {
                let d = z[0] - y;
                total += d.abs();
                g[0] = if d > 0.0 { inv } else if d < 0.0 { -inv } else { 0.0 };
            }
        }
    }
    Ok(LossValue { value: total * inv, grad: Tensor::new(vec![n, k], grad)? })
}

/// Test or validation metric from raw logits.
fn metric(logits: &Tensor, labels: &[Label], task: TaskKind, norm: &Normalizer) -> Result<f64> {
    match task {
        TaskKind::Binary => {
            let y: Vec<bool> = labels.iter().map(|l| l.as_f64() > 0.5).collect();
            auroc(logits.data(), &y)
        }
        TaskKind::Categorical(k) => {
            let k = k as usize;
            let mut probs = logits.data().to_vec();
            for row in probs.chunks_mut(k) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.iter_mut().for_each(|v| *v = (*v - m).exp());
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            let y: Vec<u16> = labels.iter().map(|l| l.as_f64() as u16).collect();
            Ok(auroc_macro_ovr(&probs, k, &y)?.value)
        }
        TaskKind::Regression => {
            let z = norm.target.ok_or_else(|| Error::config("regression head without target statistics"))?;
            let pred: Vec<f64> = logits.data().iter().map(|&v| z.denormalize(v)).collect();
            let truth: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
            mae(&pred, &truth)
        }
    }
}

fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Binary => "auroc",
        TaskKind::Categorical(_) => "macro_auroc",
        TaskKind::Regression => "mae",
    }
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

struct Splits {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn make_splits(ids: &[u64], cfg: &DownstreamConfig) -> Result<Splits> {
    let s = split(ids, cfg.split, SplitMode::BySubject, derive_seed(cfg.seed, &[SPLIT_STREAM]))?;
    if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
        return Err(Error::config(format!(
            "split {:?} of {} samples leaves an empty partition",
            cfg.split,
            ids.len()
        )));
    }
    Ok(Splits { train: s.train, val: s.val, test: s.test })
}

/// Head on the tape: standardization constants, then `x W^T + b`. Head
/// parameters enter as gradient-tracked inputs so their gradients do not mix
/// with encoder parameter ids.
fn head_on_tape(tape: &mut Tape, z: Var, head: &Head, norm: &Normalizer) -> Result<(Var, Var, Var)> {
    let n = tape.value(z).shape()[0];
    let rep = |v: &[f64]| Tensor::new(vec![n, v.len()], v.iter().copied().cycle().take(n * v.len()).collect());
    let mean = tape.constant(rep(&norm.mean)?)?;
    let scale = tape.constant(rep(&norm.scale)?)?;
    let centered = tape.sub(z, mean)?;
    let x = tape.mul(centered, scale)?;
    let w = tape.input(head.weight.clone())?;
    let b = tape.input(head.bias.clone())?;
    Ok((tape.linear(x, w, Some(b))?, w, b))
}

struct Loop<'a> {
    cfg: &'a DownstreamConfig,
    norm: Normalizer,
    labels: &'a [Label],
    splits: Splits,
}

impl Loop<'_> {
    fn shuffled(&self, epoch: usize) -> Vec<usize> {
        let mut order = self.splits.train.clone();
        order.shuffle(&mut stream(self.cfg.seed, &[ORDER_STREAM, epoch as u64]));
        order
    }

    fn schedule(&self) -> Result<Schedule> {
        Schedule::new(ScheduleKind::WarmRestarts { period: self.cfg.restart_period }, self.cfg.lr, self.cfg.epochs)
    }

    fn targets(&self, idx: &[usize]) -> Vec<f64> {
        self.norm.targets(&pick(self.labels, idx))
    }
}

/// Trains a linear head on precomputed embeddings.
pub fn probe_on_features(features: &FeatureSet, cfg: &DownstreamConfig) -> Result<DownstreamOutcome> {
    cfg.validate()?;
    let task = features.task;
    if let Some(l) = features.labels.iter().find(|l| !l.matches(task)) {
        return Err(Error::LabelMismatch(format!("label {l:?} for a {task} task")));
    }
    let splits = make_splits(&features.subject_ids, cfg)?;
    let train_f: Vec<&[f64]> = splits.train.iter().map(|&i| features.features[i].as_slice()).collect();
    let norm = Normalizer::fit(&train_f, &pick(&features.labels, &splits.train), task)?;
    let x: Vec<Vec<f64>> = features.features.iter().map(|f| norm.apply(f)).collect();
    let lp = Loop { cfg, norm, labels: &features.labels, splits };

    let h = x[0].len();
    let mut head = Head::init(task.outputs(), h, cfg.seed)?;
    let mut opt = Adam::new(AdamConfig::adam(cfg.weight_decay), &head.tensors())?;
    let schedule = lp.schedule()?;
    let mut early = EarlyStopping::new(cfg.patience);
    let mut best = head.clone();
    let mut history = Vec::new();
    let val_x = pick(&x, &lp.splits.val);
    let val_y = lp.targets(&lp.splits.val);

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        let order = lp.shuffled(epoch);
        let mut losses = Vec::new();
        for r in batch_ranges(order.len(), cfg.batch_size, 1) {
            let idx = &order[r];
            let logits = head.logits(&pick(&x, idx))?;
            let loss = head_loss(&logits, &lp.targets(idx), task)?;
            let g = loss.grad;
            let k = task.outputs();
            let mut gw = vec![0.0; k * h];
            let mut gb = vec![0.0; k];
            for (i, &row) in idx.iter().enumerate() {
                for o in 0..k {
                    let go = g.data()[i * k + o];
                    gb[o] += go;
                    for (w, xv) in gw[o * h..(o + 1) * h].iter_mut().zip(&x[row]) {
                        *w += go * xv;
                    }
                }
            }
            head.step(&mut opt, &[Tensor::new(vec![k, h], gw)?, Tensor::new(vec![k], gb)?], lr)?;
            losses.push(loss.value);
        }
        let val_loss = head_loss(&head.logits(&val_x)?, &val_y, task)?.value;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("probe validation loss {val_loss} at epoch {epoch} (seed {})", cfg.seed)));
        }
        history.push(EpochRecord { epoch, lr, train_loss: losses.iter().sum::<f64>() / losses.len() as f64, val_loss });
        match early.observe(epoch, val_loss) {
            Verdict::Improved => best = head.clone(),
            Verdict::Stop => break,
            Verdict::Wait => {}
        }
    }

    let eval = |idx: &[usize]| metric(&best.logits(&pick(&x, idx))?, &pick(lp.labels, idx), task, &lp.norm);
    Ok(DownstreamOutcome {
        task,
        metric: metric_name(task),
        value: eval(&lp.splits.test)?,
        val_value: eval(&lp.splits.val)?,
        n_test: lp.splits.test.len(),
        seed: cfg.seed,
        head: best.store(&lp.norm)?,
        encoder: None,
        history,
        best_epoch: early.best_epoch,
    })
}

/// Embeds `set` with the frozen encoder and trains a linear head.
pub fn linear_probe(encoder: &Encoder, set: &DownstreamSet, cfg: &DownstreamConfig) -> Result<DownstreamOutcome> {
    probe_on_features(&probe_features(encoder, set, cfg)?, cfg)
}

/// Trains encoder and head jointly. Standardization statistics come from the
/// initial encoder's training-split embeddings and stay fixed.
pub fn finetune(mut encoder: Encoder, set: &DownstreamSet, cfg: &DownstreamConfig) -> Result<DownstreamOutcome> {
    cfg.validate()?;
    let task = set.task;
    let signals = preprocess(set, &cfg.preprocess)?;
    if signals[0].len() < encoder.config().min_length() {
        return Err(Error::shape("finetune", "signals are shorter than the encoder's stem kernel"));
    }
    let ids: Vec<u64> = set.samples.iter().map(|s| s.subject_id).collect();
    let labels: Vec<Label> = set.samples.iter().map(|s| s.label).collect();
    let splits = make_splits(&ids, cfg)?;
    let train_z = encoder.embed_rows(&pick(&signals, &splits.train), cfg.chunk)?;
    let norm = Normalizer::fit(&train_z.iter().map(Vec::as_slice).collect::<Vec<_>>(), &pick(&labels, &splits.train), task)?;
    let lp = Loop { cfg, norm, labels: &labels, splits };

    let mut head = Head::init(task.outputs(), encoder.output_dim(), cfg.seed)?;
    let adam = AdamConfig::adam(cfg.weight_decay);
    let mut enc_opt = Adam::new(adam, encoder.params().tensors())?;
    let mut head_opt = Adam::new(adam, &head.tensors())?;
    let schedule = lp.schedule()?;
    let mut early = EarlyStopping::new(cfg.patience);
    let mut best = (encoder.params().clone(), head.clone());
    let mut history = Vec::new();
    let val_signals = pick(&signals, &lp.splits.val);
    let val_y = lp.targets(&lp.splits.val);

    let frozen_logits = |encoder: &Encoder, head: &Head, rows: &[Vec<f64>]| -> Result<Tensor> {
        let z = encoder.embed_rows(rows, cfg.chunk)?;
        head.logits(&z.iter().map(|f| lp.norm.apply(f)).collect::<Vec<_>>())
    };

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        let order = lp.shuffled(epoch);
        let mut losses = Vec::new();
        for r in batch_ranges(order.len(), cfg.batch_size, 1) {
            let idx = &order[r];
            let enc = &encoder;
            let mut head_vars = Vec::new();
            let pass = ChunkedPass::forward(&pick(&signals, idx), cfg.chunk, |tape, x| {
                let z = enc.forward(tape, x, ParamMode::Trainable)?;
                let (y, w, b) = head_on_tape(tape, z, &head, &lp.norm)?;
                head_vars.push((w, b));
                Ok(y)
            })?;
            let loss = head_loss(pass.output(), &lp.targets(idx), task)?;
            if !loss.value.is_finite() {
                return Err(Error::Diverged(format!("fine-tuning loss {} at epoch {epoch} (seed {})", loss.value, cfg.seed)));
            }
            let mut enc_grads: Vec<Tensor> = enc.params().tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut head_grads = vec![Tensor::zeros(head.weight.shape()), Tensor::zeros(head.bias.shape())];
            let mut vars = head_vars.into_iter();
            pass.backward(&loss.grad, |g| {
                accumulate(&mut enc_grads, g.for_store(enc.params()));
                if let Some((w, b)) = vars.next() {
                    for (dst, v) in head_grads.iter_mut().zip([w, b]) {
                        if let Some(t) = g.wrt(v) {
                            dst.add_assign(t);
                        }
                    }
                }
            })?;
            enc_opt.step(encoder.params_mut().tensors_mut(), &enc_grads, lr)?;
            head.step(&mut head_opt, &head_grads, lr)?;
            losses.push(loss.value);
        }
        let val_loss = head_loss(&frozen_logits(&encoder, &head, &val_signals)?, &val_y, task)?.value;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("fine-tuning validation loss {val_loss} at epoch {epoch} (seed {})", cfg.seed)));
        }
        history.push(EpochRecord { epoch, lr, train_loss: losses.iter().sum::<f64>() / losses.len() as f64, val_loss });
        match early.observe(epoch, val_loss) {
            Verdict::Improved => best = (encoder.params().clone(), head.clone()),
            Verdict::Stop => break,
            Verdict::Wait => {}
        }
    }

    let (params, head) = best;
    let encoder = Encoder::from_params(encoder.config(), encoder.seed(), params)?;
    let eval = |idx: &[usize]| metric(&frozen_logits(&encoder, &head, &pick(&signals, idx))?, &pick(&labels, idx), task, &lp.norm);
    Ok(DownstreamOutcome {
        task,
        metric: metric_name(task),
        value: eval(&lp.splits.test)?,
        val_value: eval(&lp.splits.val)?,
        n_test: lp.splits.test.len(),
        seed: cfg.seed,
        head: head.store(&lp.norm)?,
        encoder: Some(encoder),
        history,
        best_epoch: early.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::compare;
    use crate::data::{generate_downstream, SyntheticConfig};
    use crate::encoder::EncoderConfig;

    fn features(task: TaskKind, n: usize, signal: f64, seed: u64) -> FeatureSet {
        let mut rng = stream(seed, &[]);
        let mut labels = Vec::new();
        let mut feats = Vec::new();
        for _ in 0..n {
            let latent: f64 = rng.random_range(-1.0..1.0);
            let noise: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut f = noise.clone();
            f[0] += signal * latent;
            feats.push(f);
            labels.push(match task {
                TaskKind::Binary => Label::Binary(latent > 0.0),
                TaskKind::Categorical(k) => Label::Class((((latent + 1.0) / 2.0 * k as f64) as u16).min(k - 1)),
                TaskKind::Regression => Label::Real(10.0 + 5.0 * latent),
            });
        }
        FeatureSet { task, subject_ids: (0..n as u64).collect(), features: feats, labels }
    }

    #[test]
    fn head_loss_gradients_match_finite_differences() {
        let targets = [[1.0, 0.0, 1.0], [2.0, 0.0, 1.0], [0.3, -1.2, 0.0]];
        for (task, y) in [TaskKind::Binary, TaskKind::Categorical(3), TaskKind::Regression].into_iter().zip(targets) {
            let k = task.outputs();
            let logits = Tensor::new(vec![3, k], (0..3 * k).map(|i| (i as f64 * 1.3).sin()).collect()).unwrap();
            let analytic = head_loss(&logits, &y, task).unwrap().grad;
            let shape = logits.shape().to_vec();
            let f = |p: &[f64]| Ok(head_loss(&Tensor::new(shape.clone(), p.to_vec())?, &y, task)?.value);
            let report = compare(analytic.data(), f, logits.data(), 1e-6, None).unwrap();
            assert!(report.passes(1e-6), "{task}: {report:?}");
        }
    }

    #[test]
    fn binary_loss_matches_direct_formula() {
        let logits = Tensor::new(vec![2, 1], vec![0.7, -2.0]).unwrap();
        let v = head_loss(&logits, &[1.0, 0.0], TaskKind::Binary).unwrap().value;
        let direct = -(sigmoid(0.7).ln() + (1.0 - sigmoid(-2.0)).ln()) / 2.0;
        assert!((v - direct).abs() < 1e-14);
    }

    #[test]
    fn probe_learns_separable_tasks() {
        let cfg = DownstreamConfig { lr: 1e-2, ..DownstreamConfig::default() };
        let b = probe_on_features(&features(TaskKind::Binary, 200, 3.0, 1), &cfg).unwrap();
        assert!(b.value > 0.9, "{}", b.value);
        let c = probe_on_features(&features(TaskKind::Categorical(3), 300, 3.0, 2), &cfg).unwrap();
        assert!(c.value > 0.85, "{}", c.value);
        let r = probe_on_features(&features(TaskKind::Regression, 200, 3.0, 3), &cfg).unwrap();
        assert_eq!(r.metric, "mae");
        // Predicting the mean gives MAE 2.5 on this target.
        assert!(r.value < 1.5, "{}", r.value);
    }

    #[test]
    fn probe_on_pure_noise_is_near_chance() {
        let cfg = DownstreamConfig { epochs: 40, ..DownstreamConfig::default() };
        let out = probe_on_features(&features(TaskKind::Binary, 400, 0.0, 5), &cfg).unwrap();
        assert!((out.value - 0.5).abs() < 0.15, "{}", out.value);
    }

    #[test]
    fn probe_is_deterministic_and_seed_dependent() {
        let f = features(TaskKind::Binary, 120, 1.0, 7);
        let a = probe_on_features(&f, &DownstreamConfig::default()).unwrap();
        let b = probe_on_features(&f, &DownstreamConfig::default()).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.head, b.head);
        let c = probe_on_features(&f, &DownstreamConfig { seed: 1, ..DownstreamConfig::default() }).unwrap();
        assert_ne!(a.head, c.head);
    }

    #[test]
    fn label_mismatch_is_rejected() {
        let mut f = features(TaskKind::Binary, 20, 1.0, 7);
        f.labels[3] = Label::Real(0.5);
        assert!(matches!(probe_on_features(&f, &DownstreamConfig::default()), Err(Error::LabelMismatch(_))));
    }

    fn small_set() -> DownstreamSet {
        generate_downstream(&SyntheticConfig { downstream_n: 24, duration_s: 2.0, ..SyntheticConfig::default() }).unwrap()
    }

    fn fast() -> DownstreamConfig {
        DownstreamConfig { preprocess: PreprocessConfig { fs_out: 250.0, ..PreprocessConfig::default() }, ..DownstreamConfig::default() }
    }

    #[test]
    fn linear_probe_leaves_the_encoder_untouched() {
        let enc = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 1).unwrap();
        let before = enc.params().clone();
        linear_probe(&enc, &small_set(), &fast()).unwrap();
        assert_eq!(enc.params(), &before);
    }

    #[test]
    fn one_epoch_finetune_changes_the_encoder() {
        let enc = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 1).unwrap();
        let before = enc.params().clone();
        let cfg = DownstreamConfig { epochs: 1, ..fast() };
        let a = finetune(enc.clone(), &small_set(), &cfg).unwrap();
        assert_ne!(a.encoder.as_ref().unwrap().params(), &before);
        let b = finetune(enc, &small_set(), &cfg).unwrap();
        assert_eq!(a.encoder.unwrap().params(), b.encoder.unwrap().params());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn finetune_head_gradients_match_a_probe_step() {
        // With the encoder's contribution ignored, the head gradient from
        // the tape must equal the closed form used by the probe.
        let enc = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 2).unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..300).map(|t| ((t * (i + 1)) as f64 * 0.05).sin()).collect()).collect();
        let z = enc.embed_rows(&rows, 8).unwrap();
        let zs: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
        let labels = [Label::Binary(true), Label::Binary(false), Label::Binary(true)];
        let norm = Normalizer::fit(&zs, &labels, TaskKind::Binary).unwrap();
        let head = Head::init(1, enc.output_dim(), 4).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows).unwrap()).unwrap();
        let zv = enc.forward(&mut tape, x, ParamMode::Frozen).unwrap();
        let (y, w, _) = head_on_tape(&mut tape, zv, &head, &norm).unwrap();
        let loss = head_loss(tape.value(y), &[1.0, 0.0, 1.0], TaskKind::Binary).unwrap();
        let s = tape.custom_scalar(y, loss.value, loss.grad.clone()).unwrap();
        let g = tape.backward(s).unwrap();
        let gw = g.wrt(w).unwrap();
        for j in 0..enc.output_dim() {
            let expect: f64 = (0..3).map(|i| loss.grad.data()[i] * norm.apply(&z[i])[j]).sum();
            assert!((gw.data()[j] - expect).abs() < 1e-12);
        }
    }
}
