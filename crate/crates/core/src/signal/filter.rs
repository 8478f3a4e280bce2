//! Butterworth band-pass design as cascaded second-order sections.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad, `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub fs: f64,
    pub low: f64,
    pub high: f64,
    pub order: usize,
    pub sections: Vec<Biquad>,
}

impl BandPass {
    /// Designs an order-`order` Butterworth band-pass by the bilinear transform
    /// with pre-warped band edges. The result has `order` sections, each with
    /// one zero at `z = 1` and one at `z = -1`, scaled for unit gain at the
    /// band center.
    pub fn design(fs: f64, low: f64, high: f64, order: usize) -> Result<Self> {
        if !(fs > 0.0) || !(low > 0.0) || !(low < high) || !(high < fs / 2.0) {
            return Err(Error::FilterDesign(format!(
                "band edges must satisfy 0 < low < high < fs/2 (got {low}, {high} at fs {fs})"
            )));
        }
        if order == 0 {
            return Err(Error::FilterDesign("order must be positive".into()));
        }
        let k = 2.0 * fs;
        let w1 = k * (PI * low / fs).tan();
        let w2 = k * (PI * high / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        // Each prototype pole p maps to the two roots of s^2 - p*bw*s + w0^2.
        let to_z = |s: Complex64| (k + s) / (k - s);
        let mut complex_pairs = Vec::new();
        let mut real_poles = Vec::new();
        for i in 0..order {
            let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            if p.im < -1e-12 {
                continue; // handled as the conjugate of an upper-half pole
            }
            let half = p * bw / 2.0;
            let root = (half * half - w0sq).sqrt();
            if p.im.abs() > 1e-12 {
                complex_pairs.push(to_z(half + root));
                complex_pairs.push(to_z(half - root));
            } else if root.im.abs() > 1e-12 * root.norm().max(1.0) {
                // a real prototype pole with a narrow band gives a conjugate pair
                complex_pairs.push(to_z(half + root));
            } else {
                real_poles.push(to_z(half + root).re);
                real_poles.push(to_z(half - root).re);
            }
        }
        let mut sections: Vec<Biquad> = complex_pairs
            .iter()
            .map(|z| Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] })
            .collect();
        for pair in real_poles.chunks(2) {
            let (p1, p2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-(p1 + p2), p1 * p2] });
        }

        let mut filter = Self { fs, low, high, order, sections };
        let center = (w0sq.sqrt() / k).atan() * fs / PI;
        let g = filter.response(center).norm();
        let per = g.powf(-1.0 / filter.sections.len() as f64);
        for s in &mut filter.sections {
            s.b.iter_mut().for_each(|b| *b *= per);
        }
        Ok(filter)
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / self.fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Causal single-pass filtering from a zero initial state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, false)
    }

    /// Like [`BandPass::apply`], but every section starts in the steady state
    /// for a constant input equal to `x[0]`, which removes the start-up
    /// transient caused by a baseline offset.
    pub fn apply_steady(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, true)
    }

    fn run(&self, x: &[f64], steady: bool) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            if steady {
                if let Some(&u) = y.first() {
                    let dc = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
                    let out = dc * u;
                    z2 = s.b[2] * u - s.a[1] * out;
                    z1 = s.b[1] * u - s.a[0] * out + z2;
                }
            }
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Magnitude of the analog Butterworth band-pass at the pre-warped
    /// frequency corresponding to `f`.
    fn analytic_gain(f: f64, fs: f64, low: f64, high: f64, order: i32) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w, w1, w2) = (warp(f), warp(low), warp(high));
        let x = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + x.powi(2 * order)).sqrt()
    }

    fn steady_amplitude(filter: &BandPass, freq: f64, seconds: f64) -> f64 {
        let n = (seconds * filter.fs) as usize;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * freq * i as f64 / filter.fs).sin()).collect();
        let y = filter.apply(&x);
        y[n / 2..].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn design_is_stable_with_expected_sections() {
        let f = BandPass::design(500.0, 0.67, 40.0, 5).unwrap();
        assert_eq!(f.sections.len(), 5);
        assert!(f.is_stable());
        assert!((f.response(0.0).norm()) < 1e-12);
        assert!((f.response(250.0).norm()) < 1e-12);
    }

    #[test]
    fn response_matches_analytic_magnitude() {
        let f = BandPass::design(500.0, 0.67, 40.0, 5).unwrap();
        for &freq in &[0.3, 0.67, 2.0, 10.0, 25.0, 40.0, 60.0, 100.0, 200.0] {
            let got = f.response(freq).norm();
            let want = analytic_gain(freq, 500.0, 0.67, 40.0, 5);
            assert!((got - want).abs() < 1e-9, "{freq} Hz: {got} vs {want}");
        }
    }

    #[test]
    fn sine_sweep_gains() {
        let f = BandPass::design(500.0, 0.67, 40.0, 5).unwrap();
        let pass = steady_amplitude(&f, 10.0, 20.0);
        assert!((20.0 * pass.log10()).abs() < 1.0, "{pass}");
        let stop = steady_amplitude(&f, 100.0, 20.0);
        assert!(20.0 * stop.log10() <= -20.0, "{stop}");
    }

    fn peak_after(y: &[f64], start: usize) -> f64 {
        y[start..].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn dc_is_removed_after_transient() {
        let f = BandPass::design(500.0, 0.67, 40.0, 5).unwrap();
        let y = f.apply(&vec![1.0; 10_000]);
        // The zero-state step response of this band still rings at ~4.8% two
        // seconds in; it falls below 1% within five.
        assert!(peak_after(&y, 1000) < 0.05);
        assert!(peak_after(&y, 2500) < 0.01);
        assert!(peak_after(&y, 9000) < 1e-5);
    }

    #[test]
    fn steady_start_has_no_dc_transient() {
        let f = BandPass::design(500.0, 0.67, 40.0, 5).unwrap();
        let y = f.apply_steady(&vec![3.0; 2000]);
        assert!(peak_after(&y, 0) < 1e-12);
        // a sine riding on an offset: same steady state as the offset-free input
        let x: Vec<f64> = (0..10_000).map(|i| (2.0 * PI * 10.0 * i as f64 / 500.0).sin()).collect();
        let shifted: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
        let a = f.apply_steady(&shifted);
        let b = f.apply(&x);
        assert!((peak_after(&a, 5000) - peak_after(&b, 5000)).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(BandPass::design(500.0, 40.0, 0.67, 5).is_err());
        assert!(BandPass::design(500.0, 0.0, 40.0, 5).is_err());
        assert!(BandPass::design(60.0, 0.67, 40.0, 5).is_err());
        assert!(BandPass::design(500.0, 0.67, 40.0, 0).is_err());
    }

    #[test]
    fn output_length_matches_input() {
        let f = BandPass::design(250.0, 0.67, 40.0, 5).unwrap();
        assert_eq!(f.apply(&[1.0; 37]).len(), 37);
    }
}
