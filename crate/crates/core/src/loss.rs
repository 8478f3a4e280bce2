//! Contrastive objectives over a batch of `2B` view embeddings.
//!
//! Each loss is evaluated in one fused pass that returns the scalar together
//! with `dL/dZ`; [`attach`] places the result on a [`Tape`] so gradients flow
//! back into the encoder.
//!
//! Per-anchor terms are averaged, so the weighted loss is
//! `mean_i [ -s_ip/tau + log sum_{k != i} W_ik exp(s_ik/tau) ]`. With weights
//! from [`crate::weighting`] the positive has `W_ip = 0` and drops out of the
//! denominator, which lets the loss go negative; it is not clamped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::weighting::{validate_pairing, WeightMatrix};

pub const DEFAULT_TAU: f64 = 0.07;

/// View embeddings plus the positive pairing and temperature.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingBatch<'a> {
    /// `(2B, h)`; rows need not be normalized.
    pub z: &'a Tensor,
    pub positive_of: &'a [usize],
    pub tau: f64,
}

impl<'a> EmbeddingBatch<'a> {
    pub fn new(z: &'a Tensor, positive_of: &'a [usize], tau: f64) -> Self {
        Self { z, positive_of, tau }
    }

    pub fn views(&self) -> usize {
        self.z.shape()[0]
    }

    fn validate(&self) -> Result<()> {
        if self.z.ndim() != 2 {
            return Err(Error::shape("loss", format!("embeddings must be 2-D, got {:?}", self.z.shape())));
        }
        if self.positive_of.len() != self.views() {
            return Err(Error::shape(
                "loss",
                format!("{} views vs {} pairing entries", self.views(), self.positive_of.len()),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.tau)));
        }
        if !self.z.is_finite() {
            return Err(Error::NonFinite("embeddings".into()));
        }
        validate_pairing(self.positive_of)
    }
}

/// A loss value with its gradient with respect to the raw embeddings.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", format!("{} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding("zero vector in cosine similarity".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Row-normalized embeddings and their cosine similarity matrix.
struct Similarities {
    n: usize,
    h: usize,
    unit: Vec<f64>,
    norms: Vec<f64>,
    s: Vec<f64>,
}

impl Similarities {
    fn new(z: &Tensor) -> Result<Self> {
        let (n, h) = (z.shape()[0], z.shape()[1]);
        let mut unit = z.data().to_vec();
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut unit[i * h..(i + 1) * h];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateEmbedding(format!("view {i} has a zero embedding")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = 1.0;
            for k in i + 1..n {
                let v: f64 = unit[i * h..(i + 1) * h].iter().zip(&unit[k * h..(k + 1) * h]).map(|(a, b)| a * b).sum();
                s[i * n + k] = v;
                s[k * n + i] = v;
            }
        }
        Ok(Self { n, h, unit, norms, s })
    }

    #[inline]
    fn get(&self, i: usize, k: usize) -> f64 {
        self.s[i * self.n + k]
    }

    /// Maps `G = dL/dS` (diagonal ignored) to `dL/dZ`.
    fn backprop(&self, g: &[f64]) -> Tensor {
        let (n, h) = (self.n, self.h);
        let mut dn = vec![0.0; n * h];
        for i in 0..n {
            let out = &mut dn[i * h..(i + 1) * h];
            for k in 0..n {
                if k == i {
                    continue;
                }
                let c = g[i * n + k] + g[k * n + i];
                if c != 0.0 {
                    for (o, u) in out.iter_mut().zip(&self.unit[k * h..(k + 1) * h]) {
                        *o += c * u;
                    }
                }
            }
        }
        let mut dz = vec![0.0; n * h];
        for i in 0..n {
            let u = &self.unit[i * h..(i + 1) * h];
            let d = &dn[i * h..(i + 1) * h];
            let proj: f64 = u.iter().zip(d).map(|(a, b)| a * b).sum();
            for j in 0..h {
                dz[i * h + j] = (d[j] - u[j] * proj) / self.norms[i];
            }
        }
        Tensor::new(vec![n, h], dz).expect("shape is consistent")
    }
}

/// Shared body of the NT-Xent and weighted losses; `weight(i, k)` scales
/// each denominator term.
fn contrastive(batch: &EmbeddingBatch, weight: impl Fn(usize, usize) -> f64) -> Result<LossValue> {
    let sims = Similarities::new(batch.z)?;
    let n = sims.n;
    let inv_tau = 1.0 / batch.tau;
    let scale = 1.0 / n as f64;
    let mut g = vec![0.0; n * n];
    let mut terms = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for i in 0..n {
        let p = batch.positive_of[i];
        let mut peak = f64::NEG_INFINITY;
        for k in 0..n {
            if k != i && weight(i, k) > 0.0 {
                peak = peak.max(sims.get(i, k) * inv_tau);
            }
        }
        if !peak.is_finite() {
            return Err(Error::config(format!("anchor {i} has no negative with positive weight")));
        }
        for k in 0..n {
            let w = if k == i { 0.0 } else { weight(i, k) };
            if w < 0.0 {
                return Err(Error::config(format!("negative weight at ({i}, {k})")));
            }
            e[k] = w * (sims.get(i, k) * inv_tau - peak).exp();
        }
        let den = pairwise_sum(&e);
        terms.push(-sims.get(i, p) * inv_tau + peak + den.ln());
        for k in 0..n {
            g[i * n + k] = scale * inv_tau * e[k] / den;
        }
        g[i * n + p] -= scale * inv_tau;
    }
    Ok(LossValue { value: pairwise_sum(&terms) * scale, grad: sims.backprop(&g) })
}

/// NT-Xent: every other view, positive included, enters the denominator.
pub fn nt_xent(batch: &EmbeddingBatch) -> Result<LossValue> {
    batch.validate()?;
    contrastive(batch, |_, _| 1.0)
}

/// Negatives in the denominator are scaled by `W`.
pub fn weighted_contrastive(batch: &EmbeddingBatch, w: &WeightMatrix) -> Result<LossValue> {
    batch.validate()?;
    check_weights(batch, w)?;
    contrastive(batch, |i, k| w.get(i, k))
}

fn check_weights(batch: &EmbeddingBatch, w: &WeightMatrix) -> Result<()> {
    if w.size() != batch.views() {
        return Err(Error::shape("loss", format!("W is {0}x{0} for {1} views", w.size(), batch.views())));
    }
    Ok(())
}

/// Mean over all `(2B)^2` ordered view pairs of `((1 + s_ik)/2 - (1 - W_ik))^2`.
/// The diagonal uses `s_ii = 1`.
pub fn dissim_align(batch: &EmbeddingBatch, w: &WeightMatrix) -> Result<LossValue> {
    batch.validate()?;
    check_weights(batch, w)?;
    let sims = Similarities::new(batch.z)?;
    let n = sims.n;
    let scale = 1.0 / (n * n) as f64;
    let mut sq = vec![0.0; n * n];
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let r = (1.0 + sims.get(i, k)) / 2.0 - (1.0 - w.get(i, k));
            sq[i * n + k] = r * r;
            if i != k {
                g[i * n + k] = scale * r;
            }
        }
    }
    Ok(LossValue { value: pairwise_sum(&sq) * scale, grad: sims.backprop(&g) })
}

/// Which contrastive term a pretraining objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastiveTerm {
    Nce,
    Weighted,
    None,
}

/// `contrastive + lambda * L^d`, optionally divided by the coefficient sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub contrastive: ContrastiveTerm,
    /// Coefficient on the alignment term; 0 disables it.
    pub lambda: f64,
    pub normalize: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Self { contrastive: ContrastiveTerm::Weighted, lambda: 1.0, normalize: false }
    }
}

impl Objective {
    pub fn nce() -> Self {
        Self { contrastive: ContrastiveTerm::Nce, lambda: 0.0, normalize: true }
    }

    pub fn weighted() -> Self {
        Self { contrastive: ContrastiveTerm::Weighted, lambda: 0.0, normalize: true }
    }

    pub fn dissim() -> Self {
        Self { contrastive: ContrastiveTerm::None, lambda: 1.0, normalize: true }
    }

    pub fn nce_dissim(lambda: f64) -> Self {
        Self { contrastive: ContrastiveTerm::Nce, lambda, normalize: true }
    }

    pub fn weighted_dissim(lambda: f64) -> Self {
        Self { contrastive: ContrastiveTerm::Weighted, lambda, normalize: true }
    }

    /// The five ablation arms, mixtures normalized by their coefficient sum.
    pub fn ablation_set() -> Vec<Objective> {
        vec![
            Self::nce(),
            Self::weighted(),
            Self::dissim(),
            Self::nce_dissim(1.0),
            Self::weighted_dissim(1.0),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if self.contrastive == ContrastiveTerm::None && self.lambda == 0.0 {
            return Err(Error::config("objective has no terms"));
        }
        Ok(())
    }

    pub fn needs_weights(&self) -> bool {
        self.contrastive == ContrastiveTerm::Weighted || self.lambda > 0.0
    }

    fn normalizer(&self) -> f64 {
        if !self.normalize {
            return 1.0;
        }
        let c = if self.contrastive == ContrastiveTerm::None { 0.0 } else { 1.0 };
        c + self.lambda
    }

    /// Evaluates the objective. `w` may be `None` only for plain NT-Xent.
    pub fn evaluate(&self, batch: &EmbeddingBatch, w: Option<&WeightMatrix>) -> Result<LossValue> {
        self.validate()?;
        let need = || w.ok_or_else(|| Error::config("objective needs a weight matrix"));
        let mut parts: Vec<(f64, LossValue)> = Vec::with_capacity(2);
        match self.contrastive {
            ContrastiveTerm::Nce => parts.push((1.0, nt_xent(batch)?)),
            ContrastiveTerm::Weighted => parts.push((1.0, weighted_contrastive(batch, need()?)?)),
            ContrastiveTerm::None => {}
        }
        if self.lambda > 0.0 {
            parts.push((self.lambda, dissim_align(batch, need()?)?));
        }
        let norm = self.normalizer();
        let mut value = 0.0;
        let mut grad = Tensor::zeros(batch.z.shape());
        for (c, part) in &parts {
            value += c * part.value;
            grad.add_assign(&part.grad.map(|g| c * g));
        }
        Ok(LossValue { value: value / norm, grad: grad.map(|g| g / norm) })
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.contrastive {
            ContrastiveTerm::Nce => "nce",
            ContrastiveTerm::Weighted => "weighted",
            ContrastiveTerm::None => "",
        };
        match (base.is_empty(), self.lambda > 0.0) {
            (true, _) => write!(f, "dissim")?,
            (false, false) => write!(f, "{base}")?,
            (false, true) if self.lambda == 1.0 => write!(f, "{base}+dissim")?,
            (false, true) => write!(f, "{base}+dissim:{}", self.lambda)?,
        }
        if !self.normalize && self.normalizer() != 1.0 {
            write!(f, " (unnormalized)")?;
        }
        Ok(())
    }
}

impl FromStr for Objective {
    type Err = Error;

    /// Accepts `nce`, `weighted`, `dissim`, `nce+dissim[:lambda]` and
    /// `weighted+dissim[:lambda]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, lambda) = match s.split_once(':') {
            Some((h, l)) => {
                let l: f64 = l.parse().map_err(|_| Error::config(format!("bad lambda in objective {s:?}")))?;
                (h.to_string(), Some(l))
            }
            None => (s.clone(), None),
        };
        let obj = match (head.as_str(), lambda) {
            ("nce", None) => Self::nce(),
            ("weighted", None) => Self::weighted(),
            ("dissim", None) => Self::dissim(),
            ("nce+dissim", l) => Self::nce_dissim(l.unwrap_or(1.0)),
            ("weighted+dissim", l) => Self::weighted_dissim(l.unwrap_or(1.0)),
            _ => return Err(Error::config(format!("unknown objective {s:?}"))),
        };
        obj.validate()?;
        Ok(obj)
    }
}

/// Records a precomputed loss on the tape as a function of `z`.
pub fn attach(tape: &mut Tape, z: Var, loss: LossValue) -> Result<Var> {
    tape.custom_scalar(z, loss.value, loss.grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::compare;
    use crate::numeric::SquareMatrix;
    use crate::weighting::two_view_pairing;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_z(rng: &mut ChaCha8Rng, n: usize, h: usize) -> Tensor {
        Tensor::new(vec![n, h], (0..n * h).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_w(rng: &mut ChaCha8Rng, n: usize, pairing: &[usize]) -> WeightMatrix {
        let mut w = SquareMatrix::from_fn(n, |_, _| rng.random_range(0.05..1.0));
        for i in 0..n {
            for k in 0..i {
                let v = w.get(k, i);
                w.set(i, k, v);
            }
            w.set(i, i, 0.0);
            w.set(i, pairing[i], 0.0);
        }
        WeightMatrix { w, alpha: 0.05 }
    }

    fn cos(z: &Tensor, i: usize, k: usize) -> f64 {
        let (a, b) = (z.row(i), z.row(k));
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    /// Direct double loop over anchors and denominator terms.
    fn weighted_oracle(z: &Tensor, pairing: &[usize], tau: f64, w: impl Fn(usize, usize) -> f64) -> f64 {
        let n = z.shape()[0];
        let mut total = 0.0;
        for i in 0..n {
            let j = pairing[i];
            let num = (cos(z, i, j) / tau).exp();
            let mut den = 0.0;
            for k in 0..n {
                if k != i {
                    den += w(i, k) * (cos(z, i, k) / tau).exp();
                }
            }
            total += -(num / den).ln();
        }
        total / n as f64
    }

    fn dissim_oracle(z: &Tensor, w: &WeightMatrix) -> f64 {
        let n = z.shape()[0];
        let mut total = 0.0;
        for i in 0..n {
            for k in 0..n {
                let s = if i == k { 1.0 } else { cos(z, i, k) };
                total += ((1.0 + s) / 2.0 - (1.0 - w.get(i, k))).powi(2);
            }
        }
        total / (n * n) as f64
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(cosine_similarity(&v, &v).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_similarity(&v, &neg).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn nt_xent_examples() {
        let z = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let pairing = two_view_pairing(1);
        let l = nt_xent(&EmbeddingBatch::new(&z, &pairing, 0.07)).unwrap();
        assert_abs_diff_eq!(l.value, 0.0, epsilon = 1e-12);

        let z = Tensor::full(&[4, 3], 0.7);
        let pairing = two_view_pairing(2);
        let l = nt_xent(&EmbeddingBatch::new(&z, &pairing, 0.07)).unwrap();
        assert_abs_diff_eq!(l.value, 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn losses_match_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let z = random_z(&mut rng, 8, 8);
            let pairing = two_view_pairing(4);
            let w = random_w(&mut rng, 8, &pairing);
            let b = EmbeddingBatch::new(&z, &pairing, 0.5);
            let nce = nt_xent(&b).unwrap().value;
            assert_abs_diff_eq!(nce, weighted_oracle(&z, &pairing, 0.5, |_, _| 1.0), epsilon = 1e-10);
            let lw = weighted_contrastive(&b, &w).unwrap().value;
            assert_abs_diff_eq!(lw, weighted_oracle(&z, &pairing, 0.5, |i, k| w.get(i, k)), epsilon = 1e-10);
            let ld = dissim_align(&b, &w).unwrap().value;
            assert_abs_diff_eq!(ld, dissim_oracle(&z, &w), epsilon = 1e-10);
        }
    }

    #[test]
    fn uniform_weights_reduce_to_nt_xent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random_z(&mut rng, 6, 4);
        let pairing = two_view_pairing(3);
        let b = EmbeddingBatch::new(&z, &pairing, DEFAULT_TAU);
        let a = nt_xent(&b).unwrap();
        let c = weighted_contrastive(&b, &WeightMatrix::uniform(6, 1.0)).unwrap();
        assert_abs_diff_eq!(a.value, c.value, epsilon = 1e-12);
    }

    #[test]
    fn halving_negatives_shifts_by_log_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = random_z(&mut rng, 8, 4);
        let pairing = two_view_pairing(4);
        let w = random_w(&mut rng, 8, &pairing);
        let half = WeightMatrix { w: SquareMatrix::from_fn(8, |i, k| w.get(i, k) / 2.0), alpha: w.alpha };
        let b = EmbeddingBatch::new(&z, &pairing, 0.3);
        let full = weighted_contrastive(&b, &w).unwrap().value;
        let halved = weighted_contrastive(&b, &half).unwrap().value;
        assert_abs_diff_eq!(full - halved, 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn dissim_examples() {
        // identical embeddings: every term is W^2
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pairing = two_view_pairing(2);
        let w = random_w(&mut rng, 4, &pairing);
        let z = Tensor::full(&[4, 3], 1.5);
        let l = dissim_align(&EmbeddingBatch::new(&z, &pairing, 1.0), &w).unwrap().value;
        let expected: f64 = w.w.as_slice().iter().map(|v| v * v).sum::<f64>() / 16.0;
        assert_abs_diff_eq!(l, expected, epsilon = 1e-14);

        // exact alignment: orthogonal unit vectors with W = 0.5 off the positives,
        // positives identical with W = 0
        let z = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = WeightMatrix {
            w: SquareMatrix::from_fn(4, |i, k| if i == k || pairing[i] == k { 0.0 } else { 0.5 }),
            alpha: 0.2,
        };
        let l = dissim_align(&EmbeddingBatch::new(&z, &pairing, 1.0), &w).unwrap().value;
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_rejects_all_zero_row() {
        let z = Tensor::full(&[4, 2], 1.0);
        let pairing = two_view_pairing(2);
        let w = WeightMatrix::uniform(4, 0.0);
        assert!(weighted_contrastive(&EmbeddingBatch::new(&z, &pairing, 0.1), &w).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(b, h) in &[(2, 4), (4, 8)] {
            let n = 2 * b;
            let z = random_z(&mut rng, n, h);
            let pairing = two_view_pairing(b);
            let w = random_w(&mut rng, n, &pairing);
            let tau = rng.random_range(0.1..1.0);
            let objectives = [Objective::nce(), Objective::weighted(), Objective::dissim(), Objective::default()];
            for obj in objectives {
                let eval = |p: &[f64]| {
                    let zt = Tensor::new(vec![n, h], p.to_vec())?;
                    Ok(obj.evaluate(&EmbeddingBatch::new(&zt, &pairing, tau), Some(&w))?.value)
                };
                let lv = obj.evaluate(&EmbeddingBatch::new(&z, &pairing, tau), Some(&w)).unwrap();
                let r = compare(lv.grad.data(), eval, z.data(), 1e-5, None).unwrap();
                assert!(r.passes(1e-4), "{obj}: {r:?}");
            }
        }
    }

    #[test]
    fn total_loss_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = random_z(&mut rng, 8, 4);
        let pairing = two_view_pairing(4);
        let w = random_w(&mut rng, 8, &pairing);
        let b = EmbeddingBatch::new(&z, &pairing, DEFAULT_TAU);
        let lw = weighted_contrastive(&b, &w).unwrap().value;
        let ld = dissim_align(&b, &w).unwrap().value;
        let zero = Objective { lambda: 0.0, ..Objective::default() };
        assert_abs_diff_eq!(zero.evaluate(&b, Some(&w)).unwrap().value, lw, epsilon = 1e-15);
        assert_abs_diff_eq!(Objective::default().evaluate(&b, Some(&w)).unwrap().value, lw + ld, epsilon = 1e-14);
        let five = Objective::weighted_dissim(5.0).evaluate(&b, Some(&w)).unwrap().value;
        assert_abs_diff_eq!(five, (lw + 5.0 * ld) / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn objective_parsing_round_trips() {
        for obj in Objective::ablation_set().into_iter().chain([Objective::weighted_dissim(0.2)]) {
            let parsed: Objective = obj.to_string().parse().unwrap();
            assert_eq!(parsed, obj);
        }
        assert!("bogus".parse::<Objective>().is_err());
        assert!("weighted+dissim:-1".parse::<Objective>().is_err());
    }

    #[test]
    fn attach_carries_gradient_to_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = random_z(&mut rng, 4, 3);
        let pairing = two_view_pairing(2);
        let lv = nt_xent(&EmbeddingBatch::new(&z, &pairing, 0.5)).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(z.clone()).unwrap();
        let y = attach(&mut tape, x, lv.clone()).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &lv.grad);
    }

    proptest! {
        // Relabelling samples, or swapping which view counts as the first,
        // leaves every loss unchanged.
        #[test]
        fn losses_ignore_view_order(seed in any::<u64>(), b in 2usize..8, h in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 * b;
            let pairing = two_view_pairing(b);
            let z = random_z(&mut rng, n, h);
            let w = random_w(&mut rng, n, &pairing);
            let mut order: Vec<usize> = (0..b).collect();
            for i in (1..b).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            // New view j takes old view perm[j]; the second halves swap roles.
            let perm: Vec<usize> = (0..n).map(|j| if j < b { order[j] + b } else { order[j - b] }).collect();
            let zp = Tensor::new(vec![n, h], perm.iter().flat_map(|&j| z.row(j).to_vec()).collect()).unwrap();
            let wp = WeightMatrix { w: SquareMatrix::from_fn(n, |i, k| w.get(perm[i], perm[k])), alpha: w.alpha };
            let a = EmbeddingBatch::new(&z, &pairing, 0.1);
            let ap = EmbeddingBatch::new(&zp, &pairing, 0.1);
            let pairs = [
                (nt_xent(&a).unwrap().value, nt_xent(&ap).unwrap().value),
                (weighted_contrastive(&a, &w).unwrap().value, weighted_contrastive(&ap, &wp).unwrap().value),
                (dissim_align(&a, &w).unwrap().value, dissim_align(&ap, &wp).unwrap().value),
            ];
            for (x, y) in pairs {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }
    }
}
