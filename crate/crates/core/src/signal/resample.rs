//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Kernel half-width in units of the narrower of the two sample periods.
const HALF_TAPS: usize = 24;
const KAISER_BETA: f64 = 8.6;
const MAX_CACHED_PHASES: u64 = 4096;

fn bessel_i0(x: f64) -> f64 {
    let q = (x / 2.0) * (x / 2.0);
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

#[derive(Debug, Clone)]
pub struct Resampler {
    fs_in: f64,
    fs_out: f64,
    /// Input samples advanced per output sample, as `down / up`.
    up: u64,
    down: u64,
    cutoff: f64,
    half_width: usize,
    phases: Option<Vec<Vec<f64>>>,
}

impl Resampler {
    pub fn new(fs_in: f64, fs_out: f64) -> Result<Self> {
        if !(fs_in > 0.0) || !(fs_out > 0.0) || !fs_in.is_finite() || !fs_out.is_finite() {
            return Err(Error::config(format!("sample rates must be positive (got {fs_in} -> {fs_out})")));
        }
        // rates are matched to a millihertz grid
        let a = (fs_out * 1000.0).round() as u64;
        let b = (fs_in * 1000.0).round() as u64;
        let g = gcd(a, b).max(1);
        let (up, down) = (a / g, b / g);
        let cutoff = (fs_out / fs_in).min(1.0);
        let half_width = (HALF_TAPS as f64 / cutoff).ceil() as usize;
        let mut r = Self { fs_in, fs_out, up, down, cutoff, half_width, phases: None };
        if up <= MAX_CACHED_PHASES {
            let phases = (0..up).map(|p| r.kernel(p as f64 / up as f64)).collect();
            r.phases = Some(phases);
        }
        Ok(r)
    }

    pub fn fs_in(&self) -> f64 {
        self.fs_in
    }

    pub fn fs_out(&self) -> f64 {
        self.fs_out
    }

    pub fn is_identity(&self) -> bool {
        self.up == self.down
    }

    pub fn output_len(&self, n: usize) -> usize {
        (n as f64 * self.fs_out / self.fs_in).round() as usize
    }

    /// Taps for input offsets `-half_width+1 ..= half_width` around the
    /// integer position, for a fractional position `frac` in `[0, 1)`.
    fn kernel(&self, frac: f64) -> Vec<f64> {
        let w = self.half_width as f64;
        let norm = bessel_i0(KAISER_BETA);
        let lo = -(self.half_width as isize) + 1;
        let taps: Vec<f64> = (lo..=self.half_width as isize)
            .map(|j| {
                let d = frac - j as f64;
                let r = d / w;
                if r.abs() >= 1.0 {
                    return 0.0;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                let arg = self.cutoff * d;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                self.cutoff * sinc * window
            })
            .collect();
        // unit DC gain
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }

    /// Resamples `x`. Samples beyond either end are extended by point
    /// reflection about the end sample.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.is_identity() || x.is_empty() {
            return x.to_vec();
        }
        let n = x.len() as isize;
        let at = |i: isize| -> f64 {
            if i < 0 {
                let j = (-i).min(n - 1);
                2.0 * x[0] - x[j as usize]
            } else if i >= n {
                let j = (i - (n - 1)).min(n - 1);
                2.0 * x[(n - 1) as usize] - x[(n - 1 - j) as usize]
            } else {
                x[i as usize]
            }
        };
        let len = self.output_len(x.len());
        let mut out = Vec::with_capacity(len);
        let lo = -(self.half_width as isize) + 1;
        for m in 0..len as u64 {
            let num = m * self.down;
            let base = (num / self.up) as isize;
            let phase = num % self.up;
            let owned;
            let taps = match &self.phases {
                Some(p) => &p[phase as usize],
                None => {
                    owned = self.kernel(phase as f64 / self.up as f64);
                    &owned
                }
            };
            let interior = base + lo >= 0 && base + self.half_width as isize <= n - 1;
            let acc = if interior {
                let start = (base + lo) as usize;
                x[start..start + taps.len()].iter().zip(taps).map(|(a, b)| a * b).sum()
            } else {
                taps.iter().enumerate().map(|(j, t)| t * at(base + lo + j as isize)).sum()
            };
            out.push(acc);
        }
        out
    }
}

/// One-shot convenience wrapper.
pub fn resample(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    Ok(Resampler::new(fs_in, fs_out)?.apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_rates_match() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(resample(&x, 500.0, 500.0).unwrap(), x);
    }

    #[test]
    fn doubles_length() {
        assert_eq!(resample(&vec![0.0; 2500], 250.0, 500.0).unwrap().len(), 5000);
        assert_eq!(resample(&vec![0.0; 1000], 500.0, 250.0).unwrap().len(), 500);
        assert_eq!(resample(&vec![0.0; 360], 360.0, 500.0).unwrap().len(), 500);
    }

    #[test]
    fn sine_upsampling_error() {
        let f = 5.0;
        let x: Vec<f64> = (0..2500).map(|i| (2.0 * PI * f * i as f64 / 250.0).sin()).collect();
        let y = resample(&x, 250.0, 500.0).unwrap();
        let err = y
            .iter()
            .enumerate()
            .map(|(m, v)| (v - (2.0 * PI * f * m as f64 / 500.0).sin()).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn downsampling_removes_aliases() {
        // 200 Hz tone at 500 Hz, resampled to 250 Hz, lies above the new Nyquist
        let x: Vec<f64> = (0..5000).map(|i| (2.0 * PI * 200.0 * i as f64 / 500.0).sin()).collect();
        let y = resample(&x, 500.0, 250.0).unwrap();
        let peak = y[200..y.len() - 200].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 0.01, "{peak}");
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(Resampler::new(0.0, 500.0).is_err());
        assert!(Resampler::new(250.0, f64::NAN).is_err());
    }
}
