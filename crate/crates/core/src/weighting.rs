//! Per-batch pairwise weights over augmented views: `W = D ⊙ M`.
//!
//! `D` maps squared risk differences into `[alpha, 1]` (zero for a view and
//! its positive partner), `M` discounts pairs whose risks rest on imputed
//! covariates. Note that `M_ik = exp(-(A-m_i)/A * (A-m_k)/A)` is *larger*
//! when more covariates are missing (1 when both records are fully imputed,
//! `e^-1` when both are complete), so heavily imputed pairs are not pushed
//! towards zero weight; the formula is applied as written.

use crate::error::{Error, Result};
use crate::numeric::SquareMatrix;
use crate::risk::{RiskScore, NUM_COVARIATES};

/// Risk and missingness for every view of a batch.
///
/// Views are laid out as `[a_1..a_B, b_1..b_B]` when built with
/// [`BatchRiskInfo::from_samples`], but any fixed-point-free involution is
/// accepted as `positive_of`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRiskInfo {
    pub risk: Vec<f64>,
    pub missing: Vec<u8>,
    pub num_covariates: usize,
    pub positive_of: Vec<usize>,
}

/// `positive_of` for the `[a_1..a_B, b_1..b_B]` layout.
pub fn two_view_pairing(samples: usize) -> Vec<usize> {
    (0..2 * samples).map(|i| (i + samples) % (2 * samples)).collect()
}

impl BatchRiskInfo {
    /// Two views per sample; both views inherit the sample's score.
    pub fn from_samples(scores: &[RiskScore]) -> Self {
        let risk = scores.iter().chain(scores).map(|s| s.r).collect();
        let missing = scores.iter().chain(scores).map(|s| s.missing).collect();
        Self {
            risk,
            missing,
            num_covariates: NUM_COVARIATES,
            positive_of: two_view_pairing(scores.len()),
        }
    }

    pub fn views(&self) -> usize {
        self.risk.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.risk.len();
        if self.missing.len() != n || self.positive_of.len() != n {
            return Err(Error::shape(
                "batch risk info",
                format!(
                    "risk {} / missing {} / positive_of {}",
                    n,
                    self.missing.len(),
                    self.positive_of.len()
                ),
            ));
        }
        validate_pairing(&self.positive_of)?;
        for (i, &p) in self.positive_of.iter().enumerate() {
            if self.risk[i] != self.risk[p] || self.missing[i] != self.missing[p] {
                return Err(Error::config(format!(
                    "views {i} and {p} are positives but carry different metadata"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_pairing(positive_of: &[usize]) -> Result<()> {
    let n = positive_of.len();
    for (i, &p) in positive_of.iter().enumerate() {
        if p >= n || p == i || positive_of[p] != i {
            return Err(Error::config(format!(
                "positive_of must be a fixed-point-free involution (view {i} -> {p})"
            )));
        }
    }
    Ok(())
}

/// Missingness multiplier `M_ik = exp(-((A-m_i)/A) * ((A-m_k)/A))`.
pub fn missingness_matrix(missing: &[u8], num_covariates: usize) -> Result<SquareMatrix> {
    if num_covariates == 0 {
        return Err(Error::config("number of covariates must be positive"));
    }
    if let Some(&m) = missing.iter().find(|&&m| m as usize > num_covariates) {
        return Err(Error::config(format!(
            "missing count {m} exceeds covariate count {num_covariates}"
        )));
    }
    let a = num_covariates as f64;
    let present: Vec<f64> = missing.iter().map(|&m| (a - m as f64) / a).collect();
    Ok(SquareMatrix::from_fn(missing.len(), |i, k| (-(present[i] * present[k])).exp()))
}

/// Risk dissimilarity mapped to `[alpha, 1]`; zero on the diagonal and on
/// positive pairs. Extremes of `(r_i - r_k)^2` are taken over all ordered
/// pairs `i != k`, positives included, so `delta_min` is 0 whenever the batch
/// contains a positive pair. A batch with no spread gives `alpha` everywhere
/// off the positives.
pub fn dissimilarity_matrix(risk: &[f64], alpha: f64, positive_of: &[usize]) -> Result<SquareMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if positive_of.len() != risk.len() {
        return Err(Error::shape(
            "dissimilarity_matrix",
            format!("{} risks vs {} pairing entries", risk.len(), positive_of.len()),
        ));
    }
    let n = risk.len();
    let delta = |i: usize, k: usize| (risk[i] - risk[k]).powi(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let d = delta(i, k);
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    let span = hi - lo;
    Ok(SquareMatrix::from_fn(n, |i, k| {
        if i == k || positive_of[i] == k {
            0.0
        } else if span > 0.0 {
            // Rounding can land one ulp outside [alpha, 1] at the extremes.
            ((1.0 - alpha) * (delta(i, k) - lo) / span + alpha).clamp(alpha, 1.0)
        } else {
            alpha
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub w: SquareMatrix,
    pub alpha: f64,
}

impl WeightMatrix {
    pub fn size(&self) -> usize {
        self.w.size()
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.w.get(i, k)
    }

    /// A uniform matrix (every entry, including positives and the diagonal,
    /// equals `value`). With `value = 1` the weighted loss reduces to NT-Xent.
    pub fn uniform(n: usize, value: f64) -> Self {
        Self { w: SquareMatrix::filled(n, value), alpha: value }
    }
}

pub fn weight_matrix(d: &SquareMatrix, m: &SquareMatrix, alpha: f64) -> Result<WeightMatrix> {
    if d.size() != m.size() {
        return Err(Error::shape(
            "weight_matrix",
            format!("D is {0}x{0}, M is {1}x{1}", d.size(), m.size()),
        ));
    }
    let w = SquareMatrix::from_fn(d.size(), |i, k| d.get(i, k) * m.get(i, k));
    Ok(WeightMatrix { w, alpha })
}

/// `D ⊙ M` for a batch in one call.
pub fn batch_weights(info: &BatchRiskInfo, alpha: f64) -> Result<WeightMatrix> {
    info.validate()?;
    let d = dissimilarity_matrix(&info.risk, alpha, &info.positive_of)?;
    let m = missingness_matrix(&info.missing, info.num_covariates)?;
    weight_matrix(&d, &m, alpha)
}
