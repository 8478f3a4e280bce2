//! Synthetic risk-structured ECG.
//!
//! Each subject gets metadata, a true SCORE2 risk from the complete metadata,
//! and a latent `ell`: the logit of that risk, centred and scaled to roughly
//! unit variance. Beat morphology (heart rate, T-wave amplitude, ST level,
//! baseline noise) moves monotonically with `coupling * ell` plus
//! subject-level noise that does not depend on risk. With `coupling = 0` the
//! signal carries no information about the labels.
//!
//! Covariates other than age, gender and SBP are then hidden independently
//! with probability `1 - presence`, so stored metadata is incomplete the
//! way clinical records are.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DownstreamSample, DownstreamSet, EcgRecord, Label, PretrainSet, TaskKind};
use crate::error::{Error, Result};
use crate::numeric::stream;
use crate::risk::{impute, score2, Gender, ImputeOptions, MetadataRecord};

/// Centre and scale of `logit(r)` under the metadata distribution below,
/// measured once on 200k draws. Fixed so that pretraining and downstream
/// cohorts share one latent scale.
const LOGIT_CENTER: f64 = -2.895;
const LOGIT_SCALE: f64 = 1.274;

const META_STREAM: u64 = 0x3e7a;
const MASK_STREAM: u64 = 0x3e7b;
const SIGNAL_STREAM: u64 = 0x3e7c;

/// Downstream subjects are numbered after the pretraining cohort.
const DOWNSTREAM_ID_BASE: u64 = 1 << 32;

pub const NUM_LEADS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub downstream_n: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Global multiplier on every risk-to-morphology coupling below.
    pub coupling: f64,
    /// Heart rate change per unit latent, bpm.
    pub hr_gain: f64,
    /// Log T-wave amplitude change per unit latent (negative: flattening).
    pub t_gain: f64,
    /// ST level change per unit latent, mV (negative: depression).
    pub st_gain: f64,
    /// Log noise level change per unit latent.
    pub noise_gain: f64,
    /// Probability that each of smoking, diabetes, tchol, hdl is recorded.
    pub presence: f64,
    /// Downstream lead (1-based).
    pub lead: u8,
    pub task: TaskKind,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_subjects: 512,
            downstream_n: 256,
            fs: 250.0,
            duration_s: 10.0,
            seed: 42,
            coupling: 1.0,
            hr_gain: 9.0,
            t_gain: -0.35,
            st_gain: -0.05,
            noise_gain: 0.35,
            presence: 0.6,
            lead: 1,
            task: TaskKind::Binary,
        }
    }
}

impl SyntheticConfig {
    pub fn samples(&self) -> usize {
        (self.fs * self.duration_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let gains = [self.coupling, self.hr_gain, self.t_gain, self.st_gain, self.noise_gain];
        if gains.iter().any(|g| !g.is_finite()) || self.coupling < 0.0 {
            return Err(Error::config("coupling must be finite and >= 0"));
        }
        if !(self.fs > 0.0) || !(self.duration_s > 0.0) || self.samples() < 2 {
            return Err(Error::config("fs and duration must give at least two samples"));
        }
        if !(0.0..=1.0).contains(&self.presence) {
            return Err(Error::config("presence must be in [0, 1]"));
        }
        if !(1..=NUM_LEADS as u8).contains(&self.lead) {
            return Err(Error::config(format!("lead must be 1..={NUM_LEADS}")));
        }
        if let TaskKind::Categorical(k) = self.task {
            if k < 2 {
                return Err(Error::config("categorical tasks need at least 2 classes"));
            }
        }
        Ok(())
    }
}

fn sample_metadata<R: Rng>(rng: &mut R) -> MetadataRecord {
    let n = |rng: &mut R, mean: f64, sd: f64| mean + sd * rng.sample::<f64, _>(StandardNormal);
    MetadataRecord {
        age: Some(rng.random_range(40.0..80.0)),
        gender: Some(if rng.random_bool(0.5) { Gender::Female } else { Gender::Male }),
        smoking: Some(rng.random_bool(0.25)),
        sbp: Some(n(rng, 132.0, 18.0).clamp(90.0, 210.0)),
        diabetes: Some(rng.random_bool(0.12)),
        total_cholesterol: Some(n(rng, 5.4, 1.0).clamp(2.5, 10.0)),
        hdl_cholesterol: Some(n(rng, 1.35, 0.35).clamp(0.5, 3.0)),
    }
}

fn hide_optional<R: Rng>(full: &MetadataRecord, presence: f64, rng: &mut R) -> MetadataRecord {
    let mut keep = || rng.random_bool(presence);
    MetadataRecord {
        smoking: full.smoking.filter(|_| keep()),
        diabetes: full.diabetes.filter(|_| keep()),
        total_cholesterol: full.total_cholesterol.filter(|_| keep()),
        hdl_cholesterol: full.hdl_cholesterol.filter(|_| keep()),
        ..*full
    }
}

/// Subject draw: full metadata, what is recorded, and the latent.
struct Subject {
    recorded: MetadataRecord,
    latent: f64,
}

fn subject(cfg: &SyntheticConfig, id: u64) -> Subject {
    let full = sample_metadata(&mut stream(cfg.seed, &[META_STREAM, id]));
    let recorded = hide_optional(&full, cfg.presence, &mut stream(cfg.seed, &[MASK_STREAM, id]));
    // Complete metadata, so nothing is imputed and the rng is never drawn.
    let r = score2(&impute(&full, &mut stream(0, &[]), &ImputeOptions::deterministic())).r;
    let logit = (r / (1.0 - r)).ln();
    Subject { recorded, latent: (logit - LOGIT_CENTER) / LOGIT_SCALE }
}

/// Per-lead projection of the (P, QRS, T) components, roughly following the
/// limb and precordial axes: I, II, III, aVR, aVL, aVF, V1..V6.
const LEAD_GAINS: [[f64; 3]; NUM_LEADS] = [
    [0.5, 0.9, 0.6],
    [0.9, 1.3, 0.9],
    [0.4, 0.5, 0.3],
    [-0.7, -1.0, -0.7],
    [0.1, 0.3, 0.2],
    [0.6, 0.9, 0.6],
    [0.3, -0.8, -0.2],
    [0.4, -0.4, 0.6],
    [0.4, 0.4, 1.0],
    [0.4, 1.1, 1.1],
    [0.4, 1.4, 0.9],
    [0.4, 1.2, 0.7],
];

/// Per-subject waveform parameters.
struct Morphology {
    hr_bpm: f64,
    rr_jitter: f64,
    p_amp: f64,
    qrs_sigma: f64,
    r_amp: f64,
    t_amp: f64,
    st_mv: f64,
    noise_mv: f64,
    wander_mv: f64,
    lead_jitter: [[f64; 3]; NUM_LEADS],
}

fn morphology<R: Rng>(cfg: &SyntheticConfig, latent: f64, rng: &mut R) -> Morphology {
    let c = cfg.coupling;
    let mut z = || rng.sample::<f64, _>(StandardNormal);
    let hr_bpm = (68.0 + c * cfg.hr_gain * latent + 7.0 * z()).clamp(40.0, 140.0);
    let rr_jitter = 0.02 + 0.02 * z().abs();
    let p_amp = 0.12 * (0.2 * z()).exp();
    let qrs_sigma = 0.011 * (0.12 * z()).exp();
    let r_amp = 1.0 * (0.2 * z()).exp();
    let t_amp = 0.3 * (c * cfg.t_gain * latent + 0.2 * z()).exp();
    let st_mv = c * cfg.st_gain * latent + 0.02 * z();
    let noise_mv = 0.02 * (c * cfg.noise_gain * latent + 0.25 * z()).exp();
    let wander_mv = 0.08 * (0.4 * z()).exp();
    let mut lead_jitter = [[0.0; 3]; NUM_LEADS];
    for row in &mut lead_jitter {
        for g in row.iter_mut() {
            *g = 1.0 + 0.1 * z();
        }
    }
    Morphology { hr_bpm, rr_jitter, p_amp, qrs_sigma, r_amp, t_amp, st_mv, noise_mv, wander_mv, lead_jitter }
}

fn add_bump(out: &mut [f64], fs: f64, center_s: f64, sigma_s: f64, amp: f64) {
    let n = out.len() as isize;
    let c = center_s * fs;
    let half = (5.0 * sigma_s * fs).ceil() as isize;
    let lo = (c.floor() as isize - half).max(0);
    let hi = (c.ceil() as isize + half).min(n - 1);
    let inv = 1.0 / (2.0 * sigma_s * sigma_s * fs * fs);
    for i in lo..=hi {
        let d = i as f64 - c;
        out[i as usize] += amp * (-d * d * inv).exp();
    }
}

/// Builds all twelve leads for one subject.
fn render<R: Rng>(m: &Morphology, fs: f64, len: usize, rng: &mut R) -> Vec<Vec<f32>> {
    // Component traces: P wave, QRS complex, repolarisation (ST + T).
    let mut comp = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let duration = len as f64 / fs;
    let rr = 60.0 / m.hr_bpm;
    let mut t = -rng.random_range(0.0..rr);
    while t < duration + 0.5 {
        let beat_rr = rr * (1.0 + m.rr_jitter * rng.sample::<f64, _>(StandardNormal));
        let q = m.qrs_sigma;
        add_bump(&mut comp[0], fs, t - 0.16, 0.025, m.p_amp);
        add_bump(&mut comp[1], fs, t - 0.025, q * 0.7, -0.12 * m.r_amp);
        add_bump(&mut comp[1], fs, t, q, m.r_amp);
        add_bump(&mut comp[1], fs, t + 0.03, q * 0.8, -0.2 * m.r_amp);
        // T wave timing shortens with rate (QT ~ sqrt(RR)).
        let qt = 0.4 * beat_rr.sqrt();
        add_bump(&mut comp[2], fs, t + 0.12 + 0.02 * beat_rr, 0.045, m.st_mv);
        add_bump(&mut comp[2], fs, t + qt - 0.07, 0.05 * beat_rr.sqrt(), m.t_amp);
        t += beat_rr.max(0.25);
    }

    let wander_f = rng.random_range(0.1..0.4);
    let noise = Normal::new(0.0, m.noise_mv).expect("noise level is finite and positive");
    (0..NUM_LEADS)
        .map(|l| {
            let g = LEAD_GAINS[l];
            let j = m.lead_jitter[l];
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (0..len)
                .map(|i| {
                    let s = g[0] * j[0] * comp[0][i] + g[1] * j[1] * comp[1][i] + g[2] * j[2] * comp[2][i];
                    let wander = m.wander_mv * (std::f64::consts::TAU * wander_f * i as f64 / fs + phase).sin();
                    (s + wander + noise.sample(rng)) as f32
                })
                .collect()
        })
        .collect()
}

fn ecg(cfg: &SyntheticConfig, id: u64, latent: f64) -> Vec<Vec<f32>> {
    let mut rng = stream(cfg.seed, &[SIGNAL_STREAM, id]);
    let m = morphology(cfg, latent, &mut rng);
    render(&m, cfg.fs, cfg.samples(), &mut rng)
}

/// Pretraining cohort: subjects `0..n_subjects`, all twelve leads.
pub fn generate_pretrain(cfg: &SyntheticConfig) -> Result<PretrainSet> {
    cfg.validate()?;
    let records = (0..cfg.n_subjects as u64)
        .into_par_iter()
        .map(|id| {
            let s = subject(cfg, id);
            EcgRecord { subject_id: id, leads: ecg(cfg, id, s.latent), metadata: s.recorded }
        })
        .collect();
    Ok(PretrainSet { fs: cfg.fs, records })
}

/// Latent of every downstream subject, in order. Exposed for experiments
/// that need the continuous target behind a binary or categorical label.
pub fn downstream_latents(cfg: &SyntheticConfig) -> Vec<f64> {
    (0..cfg.downstream_n as u64).map(|i| subject(cfg, DOWNSTREAM_ID_BASE + i).latent).collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Downstream cohort on `cfg.lead`, disjoint from the pretraining subjects.
/// Binary: latent above the cohort median. Categorical(K): latent quantile
/// bins. Regression: the latent itself.
pub fn generate_downstream(cfg: &SyntheticConfig) -> Result<DownstreamSet> {
    cfg.validate()?;
    let latents = downstream_latents(cfg);
    let mut sorted = latents.clone();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = match cfg.task {
        _ if sorted.is_empty() => Vec::new(),
        TaskKind::Binary => vec![quantile(&sorted, 0.5)],
        TaskKind::Categorical(k) => (1..k).map(|j| quantile(&sorted, j as f64 / k as f64)).collect(),
        TaskKind::Regression => Vec::new(),
    };
    let lead = cfg.lead as usize - 1;
    let samples = latents
        .par_iter()
        .enumerate()
        .map(|(i, &latent)| {
            let id = DOWNSTREAM_ID_BASE + i as u64;
            let signal = ecg(cfg, id, latent).swap_remove(lead);
            let bin = cuts.iter().filter(|&&c| latent > c).count();
            let label = match cfg.task {
                TaskKind::Binary => Label::Binary(bin == 1),
                TaskKind::Categorical(_) => Label::Class(bin as u16),
                TaskKind::Regression => Label::Real(latent),
            };
            DownstreamSample { subject_id: id, signal, label }
        })
        .collect();
    Ok(DownstreamSet { fs: cfg.fs, lead: cfg.lead, task: cfg.task, samples })
}

pub fn generate(cfg: &SyntheticConfig) -> Result<(PretrainSet, DownstreamSet)> {
    Ok((generate_pretrain(cfg)?, generate_downstream(cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{PreprocessConfig, Preprocessor};

    fn small(n: usize) -> SyntheticConfig {
        SyntheticConfig { n_subjects: n, downstream_n: n, ..Default::default() }
    }

    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let mut r = vec![0.0; x.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    /// Beats per minute from R-peak counting on lead II: local maxima above
    /// half the record maximum, at least 250 ms apart.
    fn heart_rate(lead: &[f32], fs: f64) -> f64 {
        let max = lead.iter().cloned().fold(f32::MIN, f32::max);
        let refractory = (0.25 * fs) as usize;
        let mut peaks = Vec::new();
        for i in 1..lead.len() - 1 {
            if lead[i] > 0.5 * max && lead[i] >= lead[i - 1] && lead[i] > lead[i + 1] {
                if peaks.last().is_none_or(|&p: &usize| i - p > refractory) {
                    peaks.push(i);
                }
            }
        }
        let span = (peaks[peaks.len() - 1] - peaks[0]) as f64 / fs;
        60.0 * (peaks.len() - 1) as f64 / span
    }

    #[test]
    fn seed_determines_dataset() {
        let cfg = small(6);
        let (a, da) = generate(&cfg).unwrap();
        let (b, db) = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);
        let (c, _) = generate(&SyntheticConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_metadata_presence() {
        let cfg = SyntheticConfig { presence: 0.0, ..small(8) };
        let set = generate_pretrain(&cfg).unwrap();
        assert_eq!(set.len(), 8);
        for r in &set.records {
            assert_eq!(r.leads.len(), NUM_LEADS);
            assert_eq!(r.len(), 2500);
            r.validate().unwrap();
            assert!(r.metadata.age.is_some() && r.metadata.gender.is_some() && r.metadata.sbp.is_some());
            assert_eq!(r.metadata.missing_count(), 4);
        }
        let full = generate_pretrain(&SyntheticConfig { presence: 1.0, ..small(8) }).unwrap();
        assert!(full.records.iter().all(|r| r.metadata.missing_count() == 0));
    }

    #[test]
    fn latent_scale_is_roughly_standard() {
        let cfg = SyntheticConfig { downstream_n: 4000, ..Default::default() };
        let l = downstream_latents(&cfg);
        let n = l.len() as f64;
        let mean = l.iter().sum::<f64>() / n;
        let sd = (l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.1, "sd {sd}");
    }

    #[test]
    fn risk_correlates_with_heart_rate() {
        let cfg = SyntheticConfig { presence: 1.0, ..SyntheticConfig::default() };
        let set = generate_pretrain(&cfg).unwrap();
        let risk: Vec<f64> = set.risk_scores(0, &ImputeOptions::deterministic()).iter().map(|s| s.r).collect();
        let hr: Vec<f64> = set.records.iter().map(|r| heart_rate(&r.leads[1], cfg.fs)).collect();
        let rho = pearson(&ranks(&risk), &ranks(&hr));
        assert!(rho.abs() >= 0.5, "spearman {rho}");
    }

    #[test]
    fn null_coupling_decouples_heart_rate() {
        let cfg = SyntheticConfig { presence: 1.0, coupling: 0.0, n_subjects: 256, ..Default::default() };
        let set = generate_pretrain(&cfg).unwrap();
        let risk: Vec<f64> = set.risk_scores(0, &ImputeOptions::deterministic()).iter().map(|s| s.r).collect();
        let hr: Vec<f64> = set.records.iter().map(|r| heart_rate(&r.leads[1], cfg.fs)).collect();
        assert!(pearson(&ranks(&risk), &ranks(&hr)).abs() < 0.2);
    }

    #[test]
    fn downstream_labels() {
        let cfg = small(40);
        let bin = generate_downstream(&cfg).unwrap();
        bin.validate().unwrap();
        let pos = bin.samples.iter().filter(|s| s.label == Label::Binary(true)).count();
        assert_eq!(pos, 20);
        assert!(bin.samples.iter().all(|s| s.signal.len() == 2500));

        let cat = generate_downstream(&SyntheticConfig { task: TaskKind::Categorical(4), ..cfg.clone() }).unwrap();
        cat.validate().unwrap();
        for k in 0..4 {
            assert_eq!(cat.samples.iter().filter(|s| s.label == Label::Class(k)).count(), 10);
        }
        let reg = generate_downstream(&SyntheticConfig { task: TaskKind::Regression, ..cfg.clone() }).unwrap();
        let latents = downstream_latents(&cfg);
        for (s, l) in reg.samples.iter().zip(latents) {
            assert_eq!(s.label, Label::Real(l));
        }
        // Same subjects and signals regardless of task.
        assert_eq!(bin.samples[3].signal, reg.samples[3].signal);
    }

    #[test]
    fn every_lead_survives_preprocessing() {
        let cfg = small(6);
        let set = generate_pretrain(&cfg).unwrap();
        let pre = Preprocessor::new(cfg.fs, &PreprocessConfig::default()).unwrap();
        for r in &set.records {
            for l in 1..=NUM_LEADS as u8 {
                let z = pre.apply(&r.lead(l).unwrap());
                assert!(!z.degenerate);
                assert!(z.samples.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SyntheticConfig { coupling: -1.0, ..Default::default() }.validate().is_err());
        assert!(SyntheticConfig { lead: 13, ..Default::default() }.validate().is_err());
        assert!(SyntheticConfig { presence: 1.5, ..Default::default() }.validate().is_err());
        assert!(SyntheticConfig { fs: 0.0, ..Default::default() }.validate().is_err());
    }
}
