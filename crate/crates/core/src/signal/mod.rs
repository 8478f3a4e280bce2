//! Preprocessing (resample, band-pass, z-score) and view augmentation.

mod augment;
mod filter;
mod resample;

pub use augment::{
    augment, random_lead, random_mask, AugmentChoice, AugmentConfig, LeadMode, MaskConfig, MaskMode,
    NoiseBank, NoiseCategory, NoiseSource,
};
pub use filter::{BandPass, Biquad};
pub use resample::{resample, Resampler};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Standardized samples plus a flag set when the input had no spread.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub samples: Vec<f64>,
    pub degenerate: bool,
}

/// Zero mean, unit population standard deviation. Constant input maps to
/// zeros with `degenerate` set.
pub fn zscore(x: &[f64]) -> ZScored {
    if x.is_empty() {
        return ZScored { samples: Vec::new(), degenerate: true };
    }
    let n = x.len() as f64;
    let mean = crate::numeric::pairwise_sum(x) / n;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let sq: Vec<f64> = centered.iter().map(|v| v * v).collect();
    let std = (crate::numeric::pairwise_sum(&sq) / n).sqrt();
    if !(std > 1e-12 * (1.0 + mean.abs())) {
        return ZScored { samples: vec![0.0; x.len()], degenerate: true };
    }
    ZScored { samples: centered.into_iter().map(|v| v / std).collect(), degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub fs_out: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { fs_out: 500.0, low_hz: 0.67, high_hz: 40.0, order: 5 }
    }
}

/// The fixed chain resample -> band-pass -> z-score for one input rate.
/// The filter starts in steady state for the first sample so a baseline
/// offset does not produce a start-up transient.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    resampler: Resampler,
    filter: BandPass,
}

impl Preprocessor {
    pub fn new(fs_in: f64, cfg: &PreprocessConfig) -> Result<Self> {
        Ok(Self {
            resampler: Resampler::new(fs_in, cfg.fs_out)?,
            filter: BandPass::design(cfg.fs_out, cfg.low_hz, cfg.high_hz, cfg.order)?,
        })
    }

    pub fn fs_out(&self) -> f64 {
        self.resampler.fs_out()
    }

    pub fn output_len(&self, n: usize) -> usize {
        self.resampler.output_len(n)
    }

    pub fn apply(&self, x: &[f64]) -> ZScored {
        zscore(&self.filter.apply_steady(&self.resampler.apply(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zscore_examples() {
        let z = zscore(&[1.0, 2.0, 3.0]);
        assert!(!z.degenerate);
        let mean: f64 = z.samples.iter().sum::<f64>() / 3.0;
        let var: f64 = z.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-12);

        let z = zscore(&[5.0, 5.0, 5.0]);
        assert!(z.degenerate);
        assert_eq!(z.samples, vec![0.0; 3]);
    }

    #[test]
    fn zscore_is_idempotent() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 7919) % 101) as f64 * 0.3 - 4.0).collect();
        let once = zscore(&x).samples;
        let twice = zscore(&once).samples;
        for (a, b) in once.iter().zip(&twice) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pipeline_output_is_standardized() {
        let p = Preprocessor::new(250.0, &PreprocessConfig::default()).unwrap();
        let x: Vec<f64> = (0..2500).map(|i| (i as f64 * 0.1).sin() + 0.5).collect();
        let z = p.apply(&x);
        assert_eq!(z.samples.len(), 5000);
        assert!(!z.degenerate);
        let mean = z.samples.iter().sum::<f64>() / 5000.0;
        assert!(mean.abs() < 1e-9);
    }
}
