//! Finite-difference checks of the analytic gradients, as run by the
//! `gradcheck` subcommand.

use rand::seq::index;
use rand::Rng as _;
use serde::Serialize;

use crate::autodiff::gradcheck::{compare, GradCheckReport};
use crate::autodiff::{Tape, Tensor};
use crate::encoder::{Encoder, EncoderConfig, ParamMode};
use crate::error::Result;
use crate::loss::{dissim_align, nt_xent, weighted_contrastive, EmbeddingBatch, LossValue, Objective, DEFAULT_TAU};
use crate::numeric::{stream, Rng};
use crate::risk::{RiskScore, NUM_COVARIATES};
use crate::weighting::{batch_weights, BatchRiskInfo, WeightMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Signal length for the encoder check.
    pub t: usize,
    /// Parameter coordinates probed per encoder instance (all when 0).
    pub encoder_coords: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { instances: 10, seed: 7, eps: 1e-5, tolerance: 1e-4, t: 256, encoder_coords: 48 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

struct Instance {
    z: Tensor,
    pairing: Vec<usize>,
    w: WeightMatrix,
}

fn instance(rng: &mut Rng, i: usize) -> Result<Instance> {
    let b = if i % 2 == 0 { 2 } else { 4 };
    let h = if (i / 2) % 2 == 0 { 4 } else { 8 };
    let scores: Vec<RiskScore> = (0..b)
        .map(|_| RiskScore { r: rng.random_range(0.005..0.4), missing: rng.random_range(0..=NUM_COVARIATES as u8) })
        .collect();
    let info = BatchRiskInfo::from_samples(&scores);
    let w = batch_weights(&info, 0.2)?;
    let z = Tensor::new(vec![2 * b, h], (0..2 * b * h).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    Ok(Instance { z, pairing: info.positive_of, w })
}

fn check_loss(
    inst: &Instance,
    eps: f64,
    f: impl Fn(&EmbeddingBatch, &WeightMatrix) -> Result<LossValue>,
) -> Result<GradCheckReport> {
    let batch = EmbeddingBatch::new(&inst.z, &inst.pairing, DEFAULT_TAU);
    let analytic = f(&batch, &inst.w)?.grad;
    let shape = inst.z.shape().to_vec();
    let value = |p: &[f64]| {
        let z = Tensor::new(shape.clone(), p.to_vec())?;
        Ok(f(&EmbeddingBatch::new(&z, &inst.pairing, DEFAULT_TAU), &inst.w)?.value)
    };
    compare(analytic.data(), value, inst.z.data(), eps, None)
}

/// Tiny encoder followed by the default objective; checks a random subset
/// of parameter coordinates and every input coordinate of one view.
fn check_encoder(rng: &mut Rng, i: usize, cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let b = if i % 2 == 0 { 2 } else { 4 };
    let encoder = Encoder::build(&EncoderConfig::preset("tiny")?, rng.random())?;
    let scores: Vec<RiskScore> =
        (0..b).map(|_| RiskScore { r: rng.random_range(0.005..0.4), missing: rng.random_range(0..=7) }).collect();
    let info = BatchRiskInfo::from_samples(&scores);
    let w = batch_weights(&info, 0.2)?;
    let x = Tensor::new(vec![2 * b, cfg.t], (0..2 * b * cfg.t).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let objective = Objective::default();

    let loss_of = |enc: &Encoder, x: &Tensor| -> Result<LossValue> {
        let z = enc.embed(x)?;
        objective.evaluate(&EmbeddingBatch::new(&z, &info.positive_of, DEFAULT_TAU), Some(&w))
    };

    let mut tape = Tape::new();
    let xv = tape.input(x.clone())?;
    let z = encoder.forward(&mut tape, xv, ParamMode::Trainable)?;
    let lv = objective.evaluate(&EmbeddingBatch::new(tape.value(z), &info.positive_of, DEFAULT_TAU), Some(&w))?;
    let out = tape.custom_scalar(z, lv.value, lv.grad)?;
    let grads = tape.backward(out)?;
    let param_grads = grads.for_store(encoder.params());
    let input_grad = grads.wrt(xv).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);

    // Flatten parameters so one coordinate list spans every tensor.
    let flat_grad: Vec<f64> = param_grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let flat_point: Vec<f64> = encoder.params().tensors().iter().flat_map(|t| t.data().iter().copied()).collect();
    let coords: Vec<usize> = if cfg.encoder_coords == 0 || cfg.encoder_coords >= flat_point.len() {
        (0..flat_point.len()).collect()
    } else {
        let mut c = index::sample(rng, flat_point.len(), cfg.encoder_coords).into_vec();
        c.sort_unstable();
        c
    };
    let mut probe = encoder.clone();
    let param_report = compare(
        &flat_grad,
        |p| {
            let mut off = 0;
            for t in probe.params_mut().tensors_mut() {
                let n = t.len();
                t.data_mut().copy_from_slice(&p[off..off + n]);
                off += n;
            }
            Ok(loss_of(&probe, &x)?.value)
        },
        &flat_point,
        cfg.eps,
        Some(&coords),
    )?;

    let view: Vec<usize> = (0..cfg.t).collect();
    let shape = x.shape().to_vec();
    let input_report = compare(
        &input_grad,
        |p| Ok(loss_of(&encoder, &Tensor::new(shape.clone(), p.to_vec())?)?.value),
        x.data(),
        cfg.eps,
        Some(&view),
    )?;
    Ok(param_report.merge(input_report))
}

/// Runs every check over `cfg.instances` random instances (batch sizes 2 and
/// 4, embedding widths 4 and 8).
pub fn gradient_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteResult>> {
    type LossFn = fn(&EmbeddingBatch, &WeightMatrix) -> Result<LossValue>;
    let losses: [(&'static str, LossFn); 4] = [
        ("nt_xent", |b, _| nt_xent(b)),
        ("weighted_contrastive", weighted_contrastive),
        ("dissim_align", dissim_align),
        ("total_loss", |b, w| Objective::default().evaluate(b, Some(w))),
    ];
    let mut out = Vec::new();
    for (k, (name, f)) in losses.iter().enumerate() {
        let mut rng = stream(cfg.seed, &[k as u64]);
        let mut worst: Option<GradCheckReport> = None;
        for i in 0..cfg.instances {
            let r = check_loss(&instance(&mut rng, i)?, cfg.eps, f)?;
            worst = Some(match worst {
                Some(w) => w.merge(r),
                None => r,
            });
        }
        out.push(summarize(name, cfg, worst));
    }
    let mut rng = stream(cfg.seed, &[losses.len() as u64]);
    let mut worst: Option<GradCheckReport> = None;
    for i in 0..cfg.instances {
        let r = check_encoder(&mut rng, i, cfg)?;
        worst = Some(match worst {
            Some(w) => w.merge(r),
            None => r,
        });
    }
    out.push(summarize("tiny_encoder+total_loss", cfg, worst));
    Ok(out)
}

fn summarize(name: &'static str, cfg: &SuiteConfig, r: Option<GradCheckReport>) -> SuiteResult {
    let (checked, err) = r.map_or((0, 0.0), |r| (r.checked, r.max_rel_err));
    SuiteResult {
        name,
        instances: cfg.instances,
        checked,
        max_rel_err: err,
        passed: checked > 0 && err.is_finite() && err < cfg.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = SuiteConfig { instances: 2, t: 64, encoder_coords: 8, ..SuiteConfig::default() };
        let results = gradient_suite(&cfg).unwrap();
        assert_eq!(results.len(), 5);
        for r in &results {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn zero_instances_fail() {
        let cfg = SuiteConfig { instances: 0, ..SuiteConfig::default() };
        assert!(gradient_suite(&cfg).unwrap().iter().all(|r| !r.passed));
    }
}
