//! Stochastic view augmentation: noise injection, masking, lead choice.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::filter::BandPass;
use super::resample::Resampler;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    Muscle,
    Movement,
    BaselineWander,
    White,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 4] =
        [NoiseCategory::Muscle, NoiseCategory::Movement, NoiseCategory::BaselineWander, NoiseCategory::White];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseCategory::Muscle => "muscle",
            NoiseCategory::Movement => "movement",
            NoiseCategory::BaselineWander => "baseline_wander",
            NoiseCategory::White => "white",
        }
    }
}

impl fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown noise category {s:?}")))
    }
}

/// Where a noise category's samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    Synthetic,
    /// One recording per lead (index 0 is lead 1) at `fs` Hz.
    Recorded { fs: f64, leads: Vec<Vec<f64>> },
}

/// Noise sources for the four categories.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    sources: BTreeMap<NoiseCategory, NoiseSource>,
}

impl Default for NoiseBank {
    fn default() -> Self {
        Self::synthetic()
    }
}

fn normalize_unit(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    } else {
        x.iter_mut().for_each(|v| *v = 0.0);
    }
    x
}

impl NoiseBank {
    /// All four categories from built-in generators.
    pub fn synthetic() -> Self {
        Self { sources: NoiseCategory::ALL.into_iter().map(|c| (c, NoiseSource::Synthetic)).collect() }
    }

    pub fn empty() -> Self {
        Self { sources: BTreeMap::new() }
    }

    pub fn set(&mut self, category: NoiseCategory, source: NoiseSource) {
        self.sources.insert(category, source);
    }

    pub fn remove(&mut self, category: NoiseCategory) {
        self.sources.remove(&category);
    }

    pub fn has(&self, category: NoiseCategory, lead: u8) -> bool {
        match self.sources.get(&category) {
            Some(NoiseSource::Synthetic) => true,
            Some(NoiseSource::Recorded { leads, .. }) => {
                lead >= 1 && leads.get(lead as usize - 1).is_some_and(|l| !l.is_empty())
            }
            None => false,
        }
    }

    /// `len` samples of zero-mean, unit-variance noise at `fs` Hz.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        category: NoiseCategory,
        lead: u8,
        len: usize,
        fs: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if !self.has(category, lead) {
            return Err(Error::MissingNoise { category: category.to_string(), lead });
        }
        let raw = match &self.sources[&category] {
            NoiseSource::Synthetic => synthesize(category, len, fs, rng)?,
            NoiseSource::Recorded { fs: rec_fs, leads } => {
                let rec = &leads[lead as usize - 1];
                let rec = if (*rec_fs - fs).abs() > 1e-9 { Resampler::new(*rec_fs, fs)?.apply(rec) } else { rec.clone() };
                let offset = rng.random_range(0..rec.len());
                (0..len).map(|i| rec[(offset + i) % rec.len()]).collect()
            }
        };
        Ok(normalize_unit(raw))
    }
}

fn synthesize<R: Rng + ?Sized>(category: NoiseCategory, len: usize, fs: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gauss = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    Ok(match category {
        NoiseCategory::White => (0..len).map(|_| gauss(rng)).collect(),
        NoiseCategory::BaselineWander => {
            let comps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.random_range(0.1..0.4), rng.random_range(0.0..2.0 * PI), rng.random_range(0.5..1.0)))
                .collect();
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    comps.iter().map(|(f, ph, a)| a * (2.0 * PI * f * t + ph).sin()).sum()
                })
                .collect()
        }
        NoiseCategory::Muscle => {
            let high = 100.0f64.min(0.45 * fs);
            let low = 20.0f64.min(high / 2.0);
            let filter = BandPass::design(fs, low, high, 4)?;
            // discard the filter's start-up transient
            let warm = (fs / low * 2.0) as usize;
            let white: Vec<f64> = (0..len + warm).map(|_| gauss(rng)).collect();
            filter.apply(&white)[warm..].to_vec()
        }
        NoiseCategory::Movement => {
            let mut x = vec![0.0; len];
            let seconds = len as f64 / fs;
            let events = ((seconds / 2.0).round() as usize).max(1);
            let width = (0.02 * fs).max(1.0);
            for _ in 0..events {
                let at = rng.random_range(0..len.max(1));
                let amp = gauss(rng);
                if rng.random_bool(0.5) {
                    // step with a short ramp
                    for (i, v) in x.iter_mut().enumerate().skip(at) {
                        *v += amp * ((i - at) as f64 / width).min(1.0);
                    }
                } else {
                    let span = (4.0 * width) as usize;
                    let lo = at.saturating_sub(span);
                    let hi = (at + span).min(len);
                    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                        let d = (i as f64 - at as f64) / width;
                        *v += 3.0 * amp * (-0.5 * d * d).exp();
                    }
                }
            }
            x
        }
    })
}

/// The five equally likely augmentation outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentChoice {
    None,
    Noise(NoiseCategory),
}

impl AugmentChoice {
    pub const ALL: [AugmentChoice; 5] = [
        AugmentChoice::Noise(NoiseCategory::Muscle),
        AugmentChoice::Noise(NoiseCategory::Movement),
        AugmentChoice::Noise(NoiseCategory::BaselineWander),
        AugmentChoice::Noise(NoiseCategory::White),
        AugmentChoice::None,
    ];

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.random_range(0..Self::ALL.len())]
    }
}

impl fmt::Display for AugmentChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentChoice::None => f.write_str("none"),
            AugmentChoice::Noise(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Contiguous,
    Scattered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub enabled: bool,
    pub p: f64,
    pub frac: f64,
    pub mode: MaskMode,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { enabled: true, p: 0.2, frac: 0.1, mode: MaskMode::Contiguous }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || !(0.0..=1.0).contains(&self.frac) {
            return Err(Error::config(format!("mask p and frac must lie in [0, 1] (got {}, {})", self.p, self.frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Noise intensity in `x + phi * n`.
    pub phi: f64,
    pub mask: MaskConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { phi: 0.02, mask: MaskConfig::default() }
    }
}

/// Applies one uniformly drawn choice out of {four noise types, none}.
pub fn augment<R: Rng + ?Sized>(
    x: &[f64],
    lead: u8,
    fs: f64,
    bank: &NoiseBank,
    phi: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, AugmentChoice)> {
    let choice = AugmentChoice::draw(rng);
    let out = apply_choice(x, lead, fs, bank, phi, choice, rng)?;
    Ok((out, choice))
}

pub(crate) fn apply_choice<R: Rng + ?Sized>(
    x: &[f64],
    lead: u8,
    fs: f64,
    bank: &NoiseBank,
    phi: f64,
    choice: AugmentChoice,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match choice {
        AugmentChoice::None => Ok(x.to_vec()),
        AugmentChoice::Noise(cat) => {
            let n = bank.sample(cat, lead, x.len(), fs, rng)?;
            Ok(x.iter().zip(&n).map(|(a, b)| a + phi * b).collect())
        }
    }
}

/// With probability `p`, zeroes `round(frac * len)` samples in place.
/// Returns the masked positions.
pub fn random_mask<R: Rng + ?Sized>(x: &mut [f64], cfg: &MaskConfig, rng: &mut R) -> Result<Vec<usize>> {
    cfg.validate()?;
    if !cfg.enabled || x.is_empty() || !rng.random_bool(cfg.p) {
        return Ok(Vec::new());
    }
    let count = ((cfg.frac * x.len() as f64).round() as usize).min(x.len());
    let positions: Vec<usize> = match cfg.mode {
        MaskMode::Contiguous => {
            let start = rng.random_range(0..=x.len() - count);
            (start..start + count).collect()
        }
        MaskMode::Scattered => {
            let mut v = index::sample(rng, x.len(), count).into_vec();
            v.sort_unstable();
            v
        }
    };
    for &i in &positions {
        x[i] = 0.0;
    }
    Ok(positions)
}

/// Lead selection policy for pretraining views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeadMode {
    /// Uniform over all twelve leads.
    AllTwelve,
    /// Always the given lead (1-based).
    Fixed(u8),
}

impl Default for LeadMode {
    fn default() -> Self {
        LeadMode::AllTwelve
    }
}

impl fmt::Display for LeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeadMode::AllTwelve => f.write_str("all"),
            LeadMode::Fixed(l) => write!(f, "{l}"),
        }
    }
}

impl FromStr for LeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" | "all-12" | "all12" => Ok(LeadMode::AllTwelve),
            other => {
                let l: u8 = other
                    .trim_start_matches("lead")
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("invalid lead mode {s:?}")))?;
                if !(1..=12).contains(&l) {
                    return Err(Error::config(format!("lead must be in 1..=12, got {l}")));
                }
                Ok(LeadMode::Fixed(l))
            }
        }
    }
}

impl Serialize for LeadMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LeadMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u8),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => LeadMode::from_str(&n.to_string()),
            Raw::Text(t) => LeadMode::from_str(&t),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Picks a lead (1-based) for a record with `available` leads.
pub fn random_lead<R: Rng + ?Sized>(available: usize, mode: LeadMode, rng: &mut R) -> Result<u8> {
    match mode {
        LeadMode::AllTwelve => {
            if available < 12 {
                return Err(Error::LeadCount { found: available, needed: 12 });
            }
            Ok(rng.random_range(1..=12))
        }
        LeadMode::Fixed(l) => {
            if (l as usize) > available {
                return Err(Error::LeadCount { found: available, needed: l as usize });
            }
            Ok(l)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn std(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn synthetic_noise_is_unit_variance() {
        let bank = NoiseBank::synthetic();
        for cat in NoiseCategory::ALL {
            let n = bank.sample(cat, 1, 5000, 500.0, &mut rng(1)).unwrap();
            assert_eq!(n.len(), 5000);
            assert!((std(&n) - 1.0).abs() < 1e-9, "{cat}");
        }
    }

    #[test]
    fn none_choice_is_identity() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y = apply_choice(&x, 1, 500.0, &NoiseBank::synthetic(), 0.02, AugmentChoice::None, &mut rng(2)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn white_noise_component_has_phi_std() {
        let x = vec![0.0; 20_000];
        let choice = AugmentChoice::Noise(NoiseCategory::White);
        let y = apply_choice(&x, 1, 500.0, &NoiseBank::synthetic(), 0.02, choice, &mut rng(3)).unwrap();
        assert!((std(&y) - 0.02).abs() < 1e-9);
    }

    #[test]
    fn choices_are_uniform() {
        let mut r = rng(4);
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            let c = AugmentChoice::draw(&mut r);
            counts[AugmentChoice::ALL.iter().position(|x| *x == c).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((0.19..=0.21).contains(&f), "{f}");
        }
    }

    #[test]
    fn missing_category_is_an_error() {
        let mut bank = NoiseBank::synthetic();
        bank.remove(NoiseCategory::Muscle);
        let choice = AugmentChoice::Noise(NoiseCategory::Muscle);
        let err = apply_choice(&[0.0; 10], 1, 500.0, &bank, 0.02, choice, &mut rng(5)).unwrap_err();
        assert!(matches!(err, Error::MissingNoise { .. }));
    }

    #[test]
    fn recorded_noise_is_used() {
        let mut bank = NoiseBank::empty();
        let rec: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        bank.set(NoiseCategory::White, NoiseSource::Recorded { fs: 500.0, leads: vec![rec] });
        let n = bank.sample(NoiseCategory::White, 1, 10, 500.0, &mut rng(6)).unwrap();
        assert!(n.iter().all(|v| (v.abs() - 1.0).abs() < 1e-12));
        assert!(!bank.has(NoiseCategory::White, 2));
    }

    #[test]
    fn mask_examples() {
        let cfg = MaskConfig { p: 1.0, ..MaskConfig::default() };
        let mut x = vec![1.0; 1000];
        let pos = random_mask(&mut x, &cfg, &mut rng(7)).unwrap();
        assert_eq!(pos.len(), 100);
        assert_eq!(x.iter().filter(|v| **v == 0.0).count(), 100);
        assert!(pos.windows(2).all(|w| w[1] == w[0] + 1));

        let mut y = vec![1.0; 1000];
        let again = random_mask(&mut y, &cfg, &mut rng(7)).unwrap();
        assert_eq!(pos, again);

        let scattered = MaskConfig { p: 1.0, mode: MaskMode::Scattered, ..MaskConfig::default() };
        let mut z = vec![1.0; 1000];
        assert_eq!(random_mask(&mut z, &scattered, &mut rng(8)).unwrap().len(), 100);
        assert_eq!(z.iter().filter(|v| **v == 0.0).count(), 100);

        let never = MaskConfig { p: 0.0, ..MaskConfig::default() };
        let mut r = rng(9);
        for _ in 0..100 {
            let mut w = vec![1.0; 50];
            assert!(random_mask(&mut w, &never, &mut r).unwrap().is_empty());
            assert!(w.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn lead_selection() {
        let mut r = rng(10);
        assert_eq!(random_lead(12, LeadMode::Fixed(1), &mut r).unwrap(), 1);
        assert!(random_lead(1, LeadMode::AllTwelve, &mut r).is_err());
        let n = 120_000;
        let mut counts = [0usize; 12];
        for _ in 0..n {
            counts[random_lead(12, LeadMode::AllTwelve, &mut r).unwrap() as usize - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 12.0).abs() < 0.01);
        }
        let a: Vec<u8> = (0..20).map(|_| random_lead(12, LeadMode::AllTwelve, &mut rng(11)).unwrap()).collect();
        let mut r1 = rng(12);
        let mut r2 = rng(12);
        let s1: Vec<u8> = (0..20).map(|_| random_lead(12, LeadMode::AllTwelve, &mut r1).unwrap()).collect();
        let s2: Vec<u8> = (0..20).map(|_| random_lead(12, LeadMode::AllTwelve, &mut r2).unwrap()).collect();
        assert_eq!(s1, s2);
        assert!(a.iter().all(|l| (1..=12).contains(l)));
    }

    #[test]
    fn lead_mode_parsing() {
        assert_eq!("all".parse::<LeadMode>().unwrap(), LeadMode::AllTwelve);
        assert_eq!("1".parse::<LeadMode>().unwrap(), LeadMode::Fixed(1));
        assert!("13".parse::<LeadMode>().is_err());
    }
}
