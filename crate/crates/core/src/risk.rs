//! SCORE2 ten-year cardiovascular risk from (possibly incomplete) metadata.
//!
//! Missing covariates are imputed with fixed reference values (optionally
//! with Gaussian jitter) and the number of imputed covariates is carried
//! alongside the score so that downstream weighting can discount unreliable
//! risk differences.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of covariate slots in a metadata record.
pub const NUM_COVARIATES: usize = 7;

pub const IMPUTED_AGE: f64 = 40.0;
pub const IMPUTED_SBP: f64 = 120.0;
pub const IMPUTED_TCHOL_MEAN: f64 = 5.2;
pub const IMPUTED_TCHOL_SD: f64 = 0.5;
pub const IMPUTED_HDL_MEAN: f64 = 1.3;
pub const IMPUTED_HDL_SD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gender::Male => f.write_str("male"),
            Gender::Female => f.write_str("female"),
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            other => Err(Error::InvalidMetadata(format!("unknown gender {other:?}"))),
        }
    }
}

/// The seven SCORE2 covariates as recorded; any of them may be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub age: Option<f64>,
    pub gender: Option<Gender>,
    pub smoking: Option<bool>,
    /// Systolic blood pressure, mmHg.
    pub sbp: Option<f64>,
    pub diabetes: Option<bool>,
    /// mmol/L
    pub total_cholesterol: Option<f64>,
    /// mmol/L
    pub hdl_cholesterol: Option<f64>,
}

impl MetadataRecord {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("age", self.age),
            ("sbp", self.sbp),
            ("total_cholesterol", self.total_cholesterol),
            ("hdl_cholesterol", self.hdl_cholesterol),
        ];
        for (name, value) in positive {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidMetadata(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn missing_count(&self) -> u8 {
        [
            self.age.is_none(),
            self.gender.is_none(),
            self.smoking.is_none(),
            self.sbp.is_none(),
            self.diabetes.is_none(),
            self.total_cholesterol.is_none(),
            self.hdl_cholesterol.is_none(),
        ]
        .iter()
        .filter(|&&absent| absent)
        .count() as u8
    }
}

/// Fully populated covariates plus the number that were imputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputedMetadata {
    pub age: f64,
    pub gender: Gender,
    pub smoking: bool,
    pub sbp: f64,
    pub diabetes: bool,
    pub total_cholesterol: f64,
    pub hdl_cholesterol: f64,
    pub missing: u8,
}

impl ImputedMetadata {
    /// The imputed values as a complete record (nothing absent).
    pub fn materialize(&self) -> MetadataRecord {
        MetadataRecord {
            age: Some(self.age),
            gender: Some(self.gender),
            smoking: Some(self.smoking),
            sbp: Some(self.sbp),
            diabetes: Some(self.diabetes),
            total_cholesterol: Some(self.total_cholesterol),
            hdl_cholesterol: Some(self.hdl_cholesterol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputeOptions {
    /// Skip the Gaussian jitter on cholesterol imputations.
    pub deterministic: bool,
    /// Used when gender is absent. The absence still counts as missing.
    pub default_gender: Gender,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        Self { deterministic: false, default_gender: Gender::Male }
    }
}

impl ImputeOptions {
    pub fn deterministic() -> Self {
        Self { deterministic: true, ..Self::default() }
    }
}

/// Fills absent covariates. Smoking and diabetes default to "no"; total and
/// HDL cholesterol to population means with Gaussian jitter unless
/// `opts.deterministic`; age to 40; SBP to 120 mmHg.
///
/// Imputed values are not clamped, so a jittered cholesterol can in principle
/// be non-physiological (about five standard deviations out).
pub fn impute<R: rand::Rng + ?Sized>(
    record: &MetadataRecord,
    rng: &mut R,
    opts: &ImputeOptions,
) -> ImputedMetadata {
    let mut jitter = |mean: f64, sd: f64| {
        if opts.deterministic {
            mean
        } else {
            // sd is a positive constant, so construction cannot fail.
            Normal::new(mean, sd).expect("positive sd").sample(rng)
        }
    };
    let total_cholesterol = record
        .total_cholesterol
        .unwrap_or_else(|| jitter(IMPUTED_TCHOL_MEAN, IMPUTED_TCHOL_SD));
    let hdl_cholesterol = record
        .hdl_cholesterol
        .unwrap_or_else(|| jitter(IMPUTED_HDL_MEAN, IMPUTED_HDL_SD));
    ImputedMetadata {
        age: record.age.unwrap_or(IMPUTED_AGE),
        gender: record.gender.unwrap_or(opts.default_gender),
        smoking: record.smoking.unwrap_or(false),
        sbp: record.sbp.unwrap_or(IMPUTED_SBP),
        diabetes: record.diabetes.unwrap_or(false),
        total_cholesterol,
        hdl_cholesterol,
        missing: record.missing_count(),
    }
}

/// Standardized covariates `u`; slots 1 and 3 (zero-based) are the binary
/// smoking and diabetes indicators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateVector(pub [f64; 6]);

pub fn standardize(meta: &ImputedMetadata) -> CovariateVector {
    CovariateVector([
        (meta.age - 60.0) / 5.0,
        if meta.smoking { 1.0 } else { 0.0 },
        (meta.sbp - 120.0) / 20.0,
        if meta.diabetes { 1.0 } else { 0.0 },
        meta.total_cholesterol - 6.0,
        (meta.hdl_cholesterol - 1.3) / 0.5,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stratum {
    MaleUnder70,
    FemaleUnder70,
    Male70Plus,
    Female70Plus,
}

impl Stratum {
    pub const ALL: [Stratum; 4] =
        [Stratum::MaleUnder70, Stratum::FemaleUnder70, Stratum::Male70Plus, Stratum::Female70Plus];

    pub fn coefficients(self) -> &'static Score2Coefficients {
        match self {
            Stratum::MaleUnder70 => &MALE_UNDER_70,
            Stratum::FemaleUnder70 => &FEMALE_UNDER_70,
            Stratum::Male70Plus => &MALE_70_PLUS,
            Stratum::Female70Plus => &FEMALE_70_PLUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score2Coefficients {
    /// Main effects (beta 1..6).
    pub b1: [f64; 6],
    /// Age interactions; the leading zero means age does not interact with itself.
    pub b2: [f64; 6],
    /// Ten-year baseline survival.
    pub s0: f64,
    /// Linear-predictor offset.
    pub c: f64,
    pub stratum: Stratum,
}

pub const MALE_UNDER_70: Score2Coefficients = Score2Coefficients {
    b1: [0.3742, 0.6012, 0.2777, 0.6457, 0.1458, -0.2698],
    b2: [0.0, -0.0755, -0.0255, -0.0281, 0.0426, -0.0983],
    s0: 0.9605,
    c: 0.0,
    stratum: Stratum::MaleUnder70,
};

pub const FEMALE_UNDER_70: Score2Coefficients = Score2Coefficients {
    b1: [0.4648, 0.7744, 0.3131, 0.8096, 0.1002, -0.2606],
    b2: [0.0, -0.1088, -0.0277, -0.0226, 0.0613, -0.1272],
    s0: 0.9776,
    c: 0.0,
    stratum: Stratum::FemaleUnder70,
};

pub const MALE_70_PLUS: Score2Coefficients = Score2Coefficients {
    b1: [0.0634, 0.3524, 0.0094, 0.4245, 0.0850, -0.3564],
    b2: [0.0, -0.0247, -0.0005, 0.0073, 0.0091, -0.0174],
    s0: 0.7576,
    c: 0.0929,
    stratum: Stratum::Male70Plus,
};

pub const FEMALE_70_PLUS: Score2Coefficients = Score2Coefficients {
    b1: [0.0789, 0.4921, 0.0102, 0.6010, 0.0605, -0.3040],
    b2: [0.0, -0.0255, -0.0004, -0.0009, 0.0154, -0.0107],
    s0: 0.8082,
    c: 0.2290,
    stratum: Stratum::Female70Plus,
};

/// Age 70 and above uses the older-age columns.
pub fn select_stratum(age: f64, gender: Gender) -> &'static Score2Coefficients {
    let stratum = match (gender, age >= 70.0) {
        (Gender::Male, false) => Stratum::MaleUnder70,
        (Gender::Female, false) => Stratum::FemaleUnder70,
        (Gender::Male, true) => Stratum::Male70Plus,
        (Gender::Female, true) => Stratum::Female70Plus,
    };
    stratum.coefficients()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskScore {
    pub r: f64,
    pub missing: u8,
}

/// Linear predictor: `b1 . u + u[0] * (b2 . u)`.
pub fn linear_predictor(coeffs: &Score2Coefficients, u: &CovariateVector) -> f64 {
    let u = &u.0;
    let main: f64 = coeffs.b1.iter().zip(u).map(|(b, x)| b * x).sum();
    let interaction: f64 = coeffs.b2.iter().zip(u).map(|(b, x)| b * x).sum();
    main + u[0] * interaction
}

/// Risk for an explicit coefficient set: `1 - s0^exp(chi - c)`.
pub fn score2_with(coeffs: &Score2Coefficients, u: &CovariateVector) -> f64 {
    let chi = linear_predictor(coeffs, u);
    1.0 - coeffs.s0.powf((chi - coeffs.c).exp())
}

pub fn score2(meta: &ImputedMetadata) -> RiskScore {
    let coeffs = select_stratum(meta.age, meta.gender);
    RiskScore { r: score2_with(coeffs, &standardize(meta)), missing: meta.missing }
}

/// Validates, imputes and scores in one step.
pub fn risk_from_record<R: rand::Rng + ?Sized>(
    record: &MetadataRecord,
    rng: &mut R,
    opts: &ImputeOptions,
) -> Result<RiskScore> {
    record.validate()?;
    Ok(score2(&impute(record, rng, opts)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream;
    use approx::assert_abs_diff_eq;

    fn reference(gender: Gender, age: f64) -> MetadataRecord {
        MetadataRecord {
            age: Some(age),
            gender: Some(gender),
            smoking: Some(false),
            sbp: Some(120.0),
            diabetes: Some(false),
            total_cholesterol: Some(6.0),
            hdl_cholesterol: Some(1.3),
        }
    }

    fn det(record: &MetadataRecord) -> ImputedMetadata {
        impute(record, &mut stream(0, &[]), &ImputeOptions::deterministic())
    }

    #[test]
    fn impute_partial_record() {
        let record = MetadataRecord {
            age: Some(60.0),
            gender: Some(Gender::Male),
            sbp: Some(120.0),
            ..Default::default()
        };
        let m = det(&record);
        assert_eq!(m.missing, 4);
        assert_eq!(m.total_cholesterol, 5.2);
        assert_eq!(m.hdl_cholesterol, 1.3);
        assert!(!m.smoking);
        assert!(!m.diabetes);
    }

    #[test]
    fn impute_full_record_is_identity() {
        let record = reference(Gender::Female, 55.0);
        let m = det(&record);
        assert_eq!(m.missing, 0);
        assert_eq!(m.materialize(), record);
    }

    #[test]
    fn impute_absent_age_and_gender() {
        let record = MetadataRecord { sbp: Some(140.0), ..Default::default() };
        let m = det(&record);
        assert_eq!(m.age, 40.0);
        assert_eq!(m.gender, Gender::Male);
        assert_eq!(m.sbp, 140.0);
        assert_eq!(m.missing, 6);

        let opts = ImputeOptions { deterministic: true, default_gender: Gender::Female };
        let m = impute(&MetadataRecord::default(), &mut stream(0, &[]), &opts);
        assert_eq!(m.gender, Gender::Female);
        assert_eq!(m.sbp, IMPUTED_SBP);
        assert_eq!(m.missing, 7);
    }

    #[test]
    fn stochastic_imputation_jitters_cholesterol() {
        let mut rng = stream(7, &[]);
        let n = 20_000;
        let draws: Vec<ImputedMetadata> = (0..n)
            .map(|_| impute(&MetadataRecord::default(), &mut rng, &ImputeOptions::default()))
            .collect();
        let mean_tc = draws.iter().map(|m| m.total_cholesterol).sum::<f64>() / n as f64;
        let var_tc = draws.iter().map(|m| (m.total_cholesterol - mean_tc).powi(2)).sum::<f64>()
            / n as f64;
        let mean_hdl = draws.iter().map(|m| m.hdl_cholesterol).sum::<f64>() / n as f64;
        let var_hdl =
            draws.iter().map(|m| (m.hdl_cholesterol - mean_hdl).powi(2)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(mean_tc, 5.2, epsilon = 0.02);
        assert_abs_diff_eq!(var_tc.sqrt(), 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(mean_hdl, 1.3, epsilon = 0.01);
        assert_abs_diff_eq!(var_hdl.sqrt(), 0.2, epsilon = 0.01);
    }

    #[test]
    fn validate_rejects_nonpositive() {
        let bad = MetadataRecord { sbp: Some(0.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = MetadataRecord { age: Some(-3.0), ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(reference(Gender::Male, 60.0).validate().is_ok());
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&det(&reference(Gender::Male, 60.0))).0, [0.0; 6]);
        let u = standardize(&det(&reference(Gender::Male, 70.0)));
        assert_eq!(u.0[0], 2.0);
        let mut r = reference(Gender::Male, 60.0);
        r.hdl_cholesterol = Some(1.8);
        assert_abs_diff_eq!(standardize(&det(&r)).0[5], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn stratum_selection() {
        let c = select_stratum(60.0, Gender::Male);
        assert_eq!((c.b1[0], c.s0, c.c), (0.3742, 0.9605, 0.0));
        let c = select_stratum(70.0, Gender::Male);
        assert_eq!((c.b1[0], c.s0, c.c), (0.0634, 0.7576, 0.0929));
        let c = select_stratum(69.0, Gender::Female);
        assert_eq!((c.b1[0], c.s0, c.c), (0.4648, 0.9776, 0.0));
        assert_eq!(select_stratum(85.0, Gender::Female).stratum, Stratum::Female70Plus);
        for s in Stratum::ALL {
            assert_eq!(s.coefficients().b2[0], 0.0);
        }
    }

    #[test]
    fn score2_reference_individuals() {
        let male = score2(&det(&reference(Gender::Male, 60.0)));
        assert_abs_diff_eq!(male.r, 0.0395, epsilon = 1e-12);
        let female = score2(&det(&reference(Gender::Female, 60.0)));
        assert_abs_diff_eq!(female.r, 0.0224, epsilon = 1e-12);

        // chi = 0.0634 * 2 = 0.1268; r = 1 - 0.7576^exp(0.1268 - 0.0929)
        let older = score2(&det(&reference(Gender::Male, 70.0)));
        let expected = 1.0 - 0.7576_f64.powf((0.1268_f64 - 0.0929).exp());
        assert_abs_diff_eq!(older.r, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(older.r, 0.2496, epsilon = 1e-4);
    }

    #[test]
    fn score2_carries_missing_count() {
        let record = MetadataRecord { age: Some(50.0), sbp: Some(130.0), ..Default::default() };
        let r = risk_from_record(&record, &mut stream(1, &[]), &ImputeOptions::default()).unwrap();
        assert_eq!(r.missing, 5);
    }
}
