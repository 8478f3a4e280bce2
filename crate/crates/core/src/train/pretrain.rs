//! Contrastive pretraining: two augmented views per subject, risk-weighted
//! objective, AdamW with cosine annealing, early stopping on a held-out split.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, EpochRecord, TrainState};
use super::optim::{Adam, AdamConfig, EarlyStopping, Schedule, ScheduleKind, Verdict};
use super::run::RunDir;
use super::{accumulate, batch_ranges, ChunkedPass};
use crate::autodiff::{ParamStore, Tensor};
use crate::data::{split, PretrainSet, SplitMode};
use crate::encoder::{Encoder, ParamMode};
use crate::error::{Error, Result};
use crate::loss::{EmbeddingBatch, Objective, DEFAULT_TAU};
use crate::numeric::{derive_seed, stream, Rng};
use crate::risk::{ImputeOptions, RiskScore};
use crate::signal::{augment, random_lead, random_mask, AugmentConfig, LeadMode, NoiseBank, PreprocessConfig, Preprocessor};
use crate::weighting::{batch_weights, BatchRiskInfo, WeightMatrix};

const SPLIT_STREAM: u64 = 0x5350;
const ORDER_STREAM: u64 = 0x4f52;
const VIEW_STREAM: u64 = 0x5657;
const VAL_STREAM: u64 = 0x5641;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub lead_mode: LeadMode,
    /// Share of subjects held out for the validation loss.
    pub val_fraction: f64,
    /// Views per autodiff tape; bounds peak memory, not the batch.
    pub chunk: usize,
    pub objective: Objective,
    pub augment: AugmentConfig,
    pub preprocess: PreprocessConfig,
    pub impute: ImputeOptions,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            lr: 1e-4,
            weight_decay: 5e-5,
            tau: DEFAULT_TAU,
            alpha: 0.2,
            patience: 20,
            seed: 42,
            lead_mode: LeadMode::AllTwelve,
            val_fraction: 0.1,
            chunk: 16,
            objective: Objective::default(),
            augment: AugmentConfig::default(),
            preprocess: PreprocessConfig::default(),
            impute: ImputeOptions::default(),
        }
    }
}

impl PretrainConfig {
    /// Settings for a Tiny encoder on a few hundred synthetic subjects.
    pub fn desk() -> Self {
        Self { epochs: 20, lr: 1e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.epochs == 0 || self.chunk == 0 {
            return Err(Error::config("epochs and chunk must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("lr and tau must be positive (got {}, {})", self.lr, self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        if !(self.augment.phi >= 0.0 && self.augment.phi.is_finite()) {
            return Err(Error::config("augment.phi must be finite and non-negative"));
        }
        self.augment.mask.validate()?;
        self.objective.validate()?;
        AdamConfig::adamw(self.weight_decay).validate()
    }
}

/// Preprocessed leads for every record, stored as `f32`.
#[derive(Debug, Clone)]
pub struct LeadCache {
    fs: f64,
    len: usize,
    /// `leads[record][lead - 1]`; empty for leads the lead mode never picks.
    leads: Vec<Vec<Vec<f32>>>,
    available: Vec<usize>,
}

impl LeadCache {
    pub fn build(set: &PretrainSet, cfg: &PreprocessConfig, mode: LeadMode) -> Result<Self> {
        let pre = Preprocessor::new(set.fs, cfg)?;
        let n = set.records.first().map_or(0, |r| r.len());
        if let Some(r) = set.records.iter().find(|r| r.len() != n) {
            return Err(Error::Malformed(format!("subject {} has {} samples, expected {n}", r.subject_id, r.len())));
        }
        let leads = set
            .records
            .par_iter()
            .map(|r| {
                r.validate()?;
                let wanted = |l: usize| match mode {
                    LeadMode::AllTwelve => true,
                    LeadMode::Fixed(f) => l + 1 == f as usize,
                };
                Ok(r.leads
                    .iter()
                    .enumerate()
                    .map(|(l, x)| {
                        if !wanted(l) {
                            return Vec::new();
                        }
                        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                        let z = pre.apply(&x);
                        if z.degenerate {
                            log::warn!("subject {} lead {} is flat after preprocessing", r.subject_id, l + 1);
                        }
                        z.samples.into_iter().map(|v| v as f32).collect()
                    })
                    .collect())
            })
            .collect::<Result<Vec<Vec<Vec<f32>>>>>()?;
        Ok(Self {
            fs: pre.fs_out(),
            len: pre.output_len(n),
            leads,
            available: set.records.iter().map(|r| r.leads.len()).collect(),
        })
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// Samples per preprocessed lead.
    pub fn samples(&self) -> usize {
        self.len
    }

    fn lead(&self, record: usize, lead: u8) -> Result<&[f32]> {
        self.leads[record]
            .get(lead as usize - 1)
            .filter(|l| !l.is_empty())
            .map(Vec::as_slice)
            .ok_or(Error::LeadCount { found: self.available[record], needed: lead as usize })
    }

    /// Two augmented views of one record; both use the same randomly
    /// selected lead.
    fn views(
        &self,
        record: usize,
        mode: LeadMode,
        aug: &AugmentConfig,
        bank: &NoiseBank,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let lead = random_lead(self.available[record], mode, rng)?;
        let x: Vec<f64> = self.lead(record, lead)?.iter().map(|&v| v as f64).collect();
        let mut one = || -> Result<Vec<f64>> {
            let (mut v, _) = augment(&x, lead, self.fs, bank, aug.phi, rng)?;
            random_mask(&mut v, &aug.mask, rng)?;
            Ok(v)
        };
        let a = one()?;
        let b = one()?;
        Ok((a, b))
    }
}

/// Settings that change how a run is driven but not what it computes.
#[derive(Debug, Default)]
pub struct RunControl<'a> {
    pub run_dir: Option<&'a RunDir>,
    /// Continue from a saved state; the encoder passed in must hold the
    /// parameters stored alongside it.
    pub resume: Option<TrainState>,
    /// Return before running this epoch, as if interrupted.
    pub stop_before: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Encoder with the best validation loss seen.
    pub encoder: Encoder,
    /// Latest parameters and the state needed to resume.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Serialize)]
struct Report {
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_val_loss: f64,
    stopped_early: bool,
    parameters: usize,
    train_subjects: usize,
    val_subjects: usize,
}

struct Context<'a> {
    cfg: &'a PretrainConfig,
    cache: &'a LeadCache,
    bank: &'a NoiseBank,
    data: &'a PretrainSet,
    scores: &'a [RiskScore],
}

impl Context<'_> {
    /// `[a_1..a_B, b_1..b_B]` for the given records.
    fn batch_views(&self, idx: &[usize], rng_for: impl Fn(u64) -> Rng + Sync) -> Result<Vec<Vec<f64>>> {
        let pairs = idx
            .par_iter()
            .map(|&i| {
                let mut rng = rng_for(self.data.records[i].subject_id);
                self.cache.views(i, self.cfg.lead_mode, &self.cfg.augment, self.bank, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Ok(a.into_iter().chain(b).collect())
    }

    fn weights(&self, idx: &[usize]) -> Result<(BatchRiskInfo, Option<WeightMatrix>)> {
        let scores: Vec<RiskScore> = idx.iter().map(|&i| self.scores[i]).collect();
        let info = BatchRiskInfo::from_samples(&scores);
        let w = if self.cfg.objective.needs_weights() { Some(batch_weights(&info, self.cfg.alpha)?) } else { None };
        Ok((info, w))
    }

    fn diverged(&self, epoch: usize, batch: usize, idx: &[usize], w: Option<&WeightMatrix>, what: &str) -> Error {
        let w_stats = w.map_or("none".to_string(), |w| {
            let v = w.w.as_slice();
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            format!("min {lo:.6} mean {:.6} max {hi:.6}", v.iter().sum::<f64>() / v.len() as f64)
        });
        let subjects: Vec<u64> = idx.iter().map(|&i| self.data.records[i].subject_id).collect();
        Error::Diverged(format!(
            "{what} at epoch {epoch}, batch {batch} (seed {}, view seed of first subject {}); W {w_stats}; subjects {subjects:?}",
            self.cfg.seed,
            subjects.first().map_or(0, |&s| derive_seed(self.cfg.seed, &[VIEW_STREAM, epoch as u64, s])),
        ))
    }

    fn train_batch(&self, encoder: &mut Encoder, opt: &mut Adam, epoch: usize, batch: usize, idx: &[usize], lr: f64) -> Result<f64> {
        let seed = self.cfg.seed;
        let views = self.batch_views(idx, |s| stream(seed, &[VIEW_STREAM, epoch as u64, s]))?;
        let (info, w) = self.weights(idx)?;
        let enc = &*encoder;
        let pass = ChunkedPass::forward(&views, self.cfg.chunk, |tape, x| enc.forward(tape, x, ParamMode::Trainable))
            .map_err(|e| match e {
                Error::NonFinite(m) => self.diverged(epoch, batch, idx, w.as_ref(), &m),
                e => e,
            })?;
        if !pass.output().is_finite() {
            return Err(self.diverged(epoch, batch, idx, w.as_ref(), "non-finite embeddings"));
        }
        let batch_z = EmbeddingBatch::new(pass.output(), &info.positive_of, self.cfg.tau);
        let loss = self.cfg.objective.evaluate(&batch_z, w.as_ref())?;
        if !loss.value.is_finite() || !loss.grad.is_finite() {
            return Err(self.diverged(epoch, batch, idx, w.as_ref(), &format!("loss {}", loss.value)));
        }
        let mut grads: Vec<Tensor> = enc.params().tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        pass.backward(&loss.grad, |g| accumulate(&mut grads, g.for_store(enc.params())))?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(self.diverged(epoch, batch, idx, w.as_ref(), "non-finite gradient"));
        }
        opt.step(encoder.params_mut().tensors_mut(), &grads, lr)?;
        Ok(loss.value)
    }

    /// Mean objective over fixed views of the validation subjects.
    fn validation_loss(&self, encoder: &Encoder, val: &[usize]) -> Result<f64> {
        let seed = self.cfg.seed;
        let mut total = 0.0;
        let ranges = batch_ranges(val.len(), self.cfg.batch_size, 2);
        for r in &ranges {
            let idx = &val[r.clone()];
            let views = self.batch_views(idx, |s| stream(seed, &[VAL_STREAM, s]))?;
            let z = Tensor::from_rows(&encoder.embed_rows(&views, self.cfg.chunk)?)?;
            let (info, w) = self.weights(idx)?;
            let loss = self.cfg.objective.evaluate(&EmbeddingBatch::new(&z, &info.positive_of, self.cfg.tau), w.as_ref())?;
            total += loss.value;
        }
        Ok(total / ranges.len() as f64)
    }
}

/// Trains `encoder` on `data`. Each epoch shuffles the training subjects
/// with a seeded stream; every subject's views come from its own stream
/// keyed by (seed, epoch, subject id), so results do not depend on thread
/// count or batch composition.
pub fn pretrain(
    data: &PretrainSet,
    mut encoder: Encoder,
    cfg: &PretrainConfig,
    bank: &NoiseBank,
    ctl: RunControl,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let ids: Vec<u64> = data.records.iter().map(|r| r.subject_id).collect();
    let parts = split(&ids, [1.0 - cfg.val_fraction, cfg.val_fraction, 0.0], SplitMode::BySubject, derive_seed(cfg.seed, &[SPLIT_STREAM]))?;
    if parts.train.len() < 2 || parts.val.len() < 2 {
        return Err(Error::config(format!(
            "{} subjects give {} training and {} validation subjects; need at least 2 of each",
            data.len(),
            parts.train.len(),
            parts.val.len()
        )));
    }
    let cache = LeadCache::build(data, &cfg.preprocess, cfg.lead_mode)?;
    if cache.samples() < encoder.config().min_length() {
        return Err(Error::shape("pretrain", format!("{} samples per view is too short for the encoder", cache.samples())));
    }
    let scores = data.risk_scores(cfg.seed, &cfg.impute);
    let ctx = Context { cfg, cache: &cache, bank, data, scores: &scores };
    let echo = toml::to_string(cfg).map_err(|e| Error::config(e.to_string()))?;

    let adam = AdamConfig::adamw(cfg.weight_decay);
    let schedule = Schedule::new(ScheduleKind::Cosine, cfg.lr, cfg.epochs)?;
    let (mut opt, mut early, mut best, mut history, start) = match ctl.resume {
        Some(s) => {
            let opt = Adam::with_state(adam, s.optimizer, encoder.params().tensors())?;
            (opt, s.early, s.best, s.history, s.next_epoch)
        }
        None => {
            let opt = Adam::new(adam, encoder.params().tensors())?;
            (opt, EarlyStopping::new(cfg.patience), encoder.params().clone(), Vec::new(), 0)
        }
    };
    if let Some(run) = ctl.run_dir {
        run.write_config(cfg)?;
    }

    let snapshot = |encoder: &Encoder, opt: &Adam, early: &EarlyStopping, best: &ParamStore, history: &[EpochRecord], next: usize| {
        let mut ck = Checkpoint::from_encoder(encoder, echo.clone());
        ck.state = Some(TrainState {
            next_epoch: next,
            optimizer: opt.state.clone(),
            early: *early,
            best: best.clone(),
            history: history.to_vec(),
        });
        ck
    };

    let mut stopped_early = false;
    for epoch in start..cfg.epochs {
        if ctl.stop_before == Some(epoch) {
            break;
        }
        let lr = schedule.lr(epoch);
        let mut order = parts.train.clone();
        order.shuffle(&mut stream(cfg.seed, &[ORDER_STREAM, epoch as u64]));
        let mut losses = Vec::new();
        for (b, r) in batch_ranges(order.len(), cfg.batch_size, 2).into_iter().enumerate() {
            losses.push(ctx.train_batch(&mut encoder, &mut opt, epoch, b, &order[r], lr)?);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_loss = ctx.validation_loss(&encoder, &parts.val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("validation loss {val_loss} at epoch {epoch} (seed {})", cfg.seed)));
        }
        history.push(EpochRecord { epoch, lr, train_loss, val_loss });
        log::info!("epoch {epoch}: lr {lr:.3e} train {train_loss:.5} val {val_loss:.5}");

        let verdict = early.observe(epoch, val_loss);
        if verdict == Verdict::Improved {
            best = encoder.params().clone();
        }
        if let Some(run) = ctl.run_dir {
            run.write_metrics(&history)?;
            if verdict == Verdict::Improved {
                run.save_checkpoint("best.ckpt", &Checkpoint::from_encoder(&Encoder::from_params(encoder.config(), encoder.seed(), best.clone())?, echo.clone()))?;
            }
            run.save_checkpoint("last.ckpt", &snapshot(&encoder, &opt, &early, &best, &history, epoch + 1))?;
        }
        if verdict == Verdict::Stop {
            stopped_early = true;
            log::info!("early stop at epoch {epoch}; best epoch {:?}", early.best_epoch);
            break;
        }
    }

    let next = history.last().map_or(start, |r| r.epoch + 1);
    let checkpoint = snapshot(&encoder, &opt, &early, &best, &history, next);
    let best_encoder = Encoder::from_params(encoder.config(), encoder.seed(), best)?;
    if let Some(run) = ctl.run_dir {
        run.write_report(&Report {
            epochs_run: history.len(),
            best_epoch: early.best_epoch,
            best_val_loss: early.best,
            stopped_early,
            parameters: best_encoder.param_count(),
            train_subjects: parts.train.len(),
            val_subjects: parts.val.len(),
        })?;
    }
    Ok(PretrainOutcome { encoder: best_encoder, checkpoint, history, best_epoch: early.best_epoch, stopped_early })
}
