//! C ABI over `ecg-contrast`.
//!
//! Every fallible function returns an [`EcgStatus`]. On failure a message is
//! kept per thread and can be read with [`ecg_last_error`]. Encoders are
//! opaque handles created by `ecg_encoder_*` constructors and released with
//! [`ecg_encoder_free`]. Arrays are row-major `double` buffers whose sizes
//! the caller states explicitly; output buffers are owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ecg_contrast::autodiff::Tensor;
use ecg_contrast::data::score_records;
use ecg_contrast::encoder::{Encoder, EncoderConfig};
use ecg_contrast::error::Error;
use ecg_contrast::eval::auroc;
use ecg_contrast::loss::{ContrastiveTerm, EmbeddingBatch, Objective};
use ecg_contrast::numeric::SquareMatrix;
use ecg_contrast::risk::{Gender, ImputeOptions, MetadataRecord, RiskScore};
use ecg_contrast::signal::{BandPass, PreprocessConfig, Preprocessor};
use ecg_contrast::train::Checkpoint;
use ecg_contrast::weighting::{batch_weights, two_view_pairing, BatchRiskInfo, WeightMatrix};

/// Result of every fallible call. The numeric values match the exit codes
/// of the `ecg-contrast` command-line tool where the categories overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcgStatus {
    Ok = 0,
    Other = 1,
    InvalidConfig = 2,
    Io = 3,
    InvalidData = 4,
    NonFinite = 5,
    /// A required pointer was null or a size was inconsistent.
    InvalidArgument = 7,
    /// The library panicked; this is a bug.
    Panic = 8,
}

/// Contrastive term codes for [`EcgObjective::contrastive`].
pub const ECG_TERM_NCE: u32 = 0;
pub const ECG_TERM_WEIGHTED: u32 = 1;
pub const ECG_TERM_NONE: u32 = 2;

/// `contrastive + lambda * alignment`, divided by the coefficient sum when
/// `normalize` is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgObjective {
    pub contrastive: u32,
    pub lambda: f64,
    pub normalize: bool,
}

/// Clinical covariates. Use NaN for an unrecorded measurement and -1 for an
/// unrecorded flag. `gender` is 0 for male, 1 for female.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgMetadata {
    pub age: f64,
    pub sbp: f64,
    pub total_cholesterol: f64,
    pub hdl_cholesterol: f64,
    pub gender: i32,
    pub smoking: i32,
    pub diabetes: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgRisk {
    /// Ten-year risk in (0, 1).
    pub r: f64,
    /// Number of covariates that were imputed.
    pub missing: u8,
}

/// Opaque encoder handle.
pub struct EcgEncoder {
    inner: Encoder,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

#[derive(Debug)]
struct Failure(EcgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => EcgStatus::InvalidConfig,
            3 => EcgStatus::Io,
            4 => EcgStatus::InvalidData,
            5 => EcgStatus::NonFinite,
            _ => EcgStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn bad_arg(msg: impl Into<String>) -> Failure {
    Failure(EcgStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure for [`ecg_last_error`] and never lets a
/// panic cross the boundary.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EcgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EcgStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(bad_arg(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(bad_arg(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| bad_arg(format!("{name} is null")))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(bad_arg(format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad_arg(format!("{name} is not UTF-8")))
}

fn objective(o: &EcgObjective) -> Result<Objective, Failure> {
    let contrastive = match o.contrastive {
        ECG_TERM_NCE => ContrastiveTerm::Nce,
        ECG_TERM_WEIGHTED => ContrastiveTerm::Weighted,
        ECG_TERM_NONE => ContrastiveTerm::None,
        other => return Err(bad_arg(format!("unknown contrastive term {other}"))),
    };
    let obj = Objective { contrastive, lambda: o.lambda, normalize: o.normalize };
    obj.validate()?;
    Ok(obj)
}

fn flag(v: i32, name: &str) -> Result<Option<bool>, Failure> {
    match v {
        -1 => Ok(None),
        0 => Ok(Some(false)),
        1 => Ok(Some(true)),
        other => Err(bad_arg(format!("{name} must be -1, 0 or 1, got {other}"))),
    }
}

fn record(m: &EcgMetadata) -> Result<MetadataRecord, Failure> {
    let real = |v: f64| (!v.is_nan()).then_some(v);
    let gender = match m.gender {
        -1 => None,
        0 => Some(Gender::Male),
        1 => Some(Gender::Female),
        other => return Err(bad_arg(format!("gender must be -1, 0 or 1, got {other}"))),
    };
    Ok(MetadataRecord {
        age: real(m.age),
        gender,
        smoking: flag(m.smoking, "smoking")?,
        sbp: real(m.sbp),
        diabetes: flag(m.diabetes, "diabetes")?,
        total_cholesterol: real(m.total_cholesterol),
        hdl_cholesterol: real(m.hdl_cholesterol),
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ecg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ecg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The default pretraining objective.
#[no_mangle]
pub extern "C" fn ecg_objective_default() -> EcgObjective {
    let o = Objective::default();
    EcgObjective { contrastive: ECG_TERM_WEIGHTED, lambda: o.lambda, normalize: o.normalize }
}

/// Parses `nce`, `weighted`, `dissim`, `nce+dissim[:lambda]` or
/// `weighted+dissim[:lambda]`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ecg_objective_parse(name: *const c_char, out_objective: *mut EcgObjective) -> EcgStatus {
    guard(|| {
        let o: Objective = string(name, "name")?.parse()?;
        let contrastive = match o.contrastive {
            ContrastiveTerm::Nce => ECG_TERM_NCE,
            ContrastiveTerm::Weighted => ECG_TERM_WEIGHTED,
            ContrastiveTerm::None => ECG_TERM_NONE,
        };
        *out(out_objective, "out_objective")? = EcgObjective { contrastive, lambda: o.lambda, normalize: o.normalize };
        Ok(())
    })
}

/// SCORE2 risk with imputation of absent covariates. The imputation draw is
/// keyed by `(seed, subject_id)`, matching the pretraining pipeline.
///
/// # Safety
/// `meta` and `out_risk` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ecg_score2(
    meta: *const EcgMetadata,
    subject_id: u64,
    seed: u64,
    deterministic: bool,
    out_risk: *mut EcgRisk,
) -> EcgStatus {
    guard(|| {
        let m = meta.as_ref().ok_or_else(|| bad_arg("meta is null"))?;
        let opts = ImputeOptions { deterministic, ..ImputeOptions::default() };
        let s = score_records(&[record(m)?], &[subject_id], seed, &opts)?[0];
        *out(out_risk, "out_risk")? = EcgRisk { r: s.r, missing: s.missing };
        Ok(())
    })
}

/// Weight matrix for `samples` subjects seen as two views each, views laid
/// out as `[a_1..a_B, b_1..b_B]`. Writes `(2B)^2` values row-major.
///
/// # Safety
/// `risk` and `missing` must hold `samples` values, `out_weights` room for
/// `4 * samples * samples`.
#[no_mangle]
pub unsafe extern "C" fn ecg_batch_weights(
    risk: *const f64,
    missing: *const u8,
    samples: usize,
    alpha: f64,
    out_weights: *mut f64,
) -> EcgStatus {
    guard(|| {
        let r = slice(risk, samples, "risk")?;
        let m = slice(missing, samples, "missing")?;
        let scores: Vec<RiskScore> = r.iter().zip(m).map(|(&r, &missing)| RiskScore { r, missing }).collect();
        let w = batch_weights(&BatchRiskInfo::from_samples(&scores), alpha)?;
        let n = 2 * samples;
        slice_mut(out_weights, n * n, "out_weights")?.copy_from_slice(w.w.as_slice());
        Ok(())
    })
}

/// Loss value and, when `out_grad` is not NULL, its gradient with respect to
/// `z`. `z` is `(2 * samples, dim)` with the view layout of
/// [`ecg_batch_weights`]; `weights` may be NULL for objectives that need none.
///
/// # Safety
/// Buffers must hold the stated number of values; `out_grad`, when given,
/// room for `2 * samples * dim`.
#[no_mangle]
pub unsafe extern "C" fn ecg_loss(
    z: *const f64,
    samples: usize,
    dim: usize,
    weights: *const f64,
    objective_spec: *const EcgObjective,
    tau: f64,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> EcgStatus {
    guard(|| {
        let n = 2 * samples;
        let obj = objective(objective_spec.as_ref().ok_or_else(|| bad_arg("objective is null"))?)?;
        let z = Tensor::new(vec![n, dim], slice(z, n * dim, "z")?.to_vec())?;
        let w = if weights.is_null() {
            None
        } else {
            let sq = SquareMatrix::from_vec(n, slice(weights, n * n, "weights")?.to_vec())
                .ok_or_else(|| bad_arg("weights has the wrong size"))?;
            Some(WeightMatrix { w: sq, alpha: f64::NAN })
        };
        let pairing = two_view_pairing(samples);
        let lv = obj.evaluate(&EmbeddingBatch::new(&z, &pairing, tau), w.as_ref())?;
        *out(out_value, "out_value")? = lv.value;
        if !out_grad.is_null() {
            slice_mut(out_grad, n * dim, "out_grad")?.copy_from_slice(lv.grad.data());
        }
        Ok(())
    })
}

/// Rank-based AUROC with ties counted as one half. `labels` are 0 or 1.
///
/// # Safety
/// `scores` and `labels` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ecg_auroc(scores: *const f64, labels: *const u8, n: usize, out_auroc: *mut f64) -> EcgStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(bad_arg(format!("label {other} is not 0 or 1"))),
            })
            .collect::<Result<_, _>>()?;
        *out(out_auroc, "out_auroc")? = auroc(s, &l)?;
        Ok(())
    })
}

/// Causal Butterworth band-pass of order `order`, started in steady state
/// for the first sample. `out` may alias `x`.
///
/// # Safety
/// `x` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ecg_bandpass(
    x: *const f64,
    n: usize,
    fs: f64,
    low_hz: f64,
    high_hz: f64,
    order: u32,
    out_signal: *mut f64,
) -> EcgStatus {
    guard(|| {
        let filter = BandPass::design(fs, low_hz, high_hz, order as usize)?;
        let y = filter.apply_steady(slice(x, n, "x")?);
        slice_mut(out_signal, n, "out_signal")?.copy_from_slice(&y);
        Ok(())
    })
}

/// The encoder input chain: resample to 500 Hz, band-pass 0.67-40 Hz, z-score.
/// The output length is written to `out_len`; when it exceeds `capacity`
/// nothing else is written and `ECG_STATUS_INVALID_ARGUMENT` is returned.
///
/// # Safety
/// `x` must hold `n` values and `out_signal` room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn ecg_preprocess(
    x: *const f64,
    n: usize,
    fs: f64,
    out_signal: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> EcgStatus {
    guard(|| {
        let p = Preprocessor::new(fs, &PreprocessConfig::default())?;
        let len = out(out_len, "out_len")?;
        *len = p.output_len(n);
        if *len > capacity {
            return Err(bad_arg(format!("output needs {} values, capacity is {capacity}", *len)));
        }
        let y = p.apply(slice(x, n, "x")?);
        slice_mut(out_signal, y.samples.len(), "out_signal")?.copy_from_slice(&y.samples);
        *len = y.samples.len();
        Ok(())
    })
}

fn boxed(e: Encoder, out_encoder: *mut *mut EcgEncoder) -> Result<(), Failure> {
    // SAFETY: checked for null; the caller owns the slot.
    let slot = unsafe { out(out_encoder, "out_encoder")? };
    *slot = Box::into_raw(Box::new(EcgEncoder { inner: e }));
    Ok(())
}

/// Freshly initialized encoder from a preset (`tiny`, `s`, `m` or `l`).
///
/// # Safety
/// `preset` must be NUL-terminated; `out_encoder` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ecg_encoder_from_preset(
    preset: *const c_char,
    seed: u64,
    out_encoder: *mut *mut EcgEncoder,
) -> EcgStatus {
    guard(|| {
        let cfg = EncoderConfig::preset(string(preset, "preset")?)?;
        boxed(Encoder::build(&cfg, seed)?, out_encoder)
    })
}

/// Encoder stored in a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out_encoder` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ecg_encoder_load(path: *const c_char, out_encoder: *mut *mut EcgEncoder) -> EcgStatus {
    guard(|| {
        let ck = Checkpoint::load(Path::new(string(path, "path")?))?;
        boxed(ck.encoder()?, out_encoder)
    })
}

/// Embedding width, or 0 for a NULL handle.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecg_encoder_output_dim(encoder: *const EcgEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.inner.output_dim())
}

/// Shortest input the encoder accepts, or 0 for a NULL handle.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecg_encoder_min_length(encoder: *const EcgEncoder) -> usize {
    encoder.as_ref().map_or(0, |e| e.inner.config().min_length())
}

/// Embeds `batch` preprocessed signals of `length` samples each into
/// `batch * output_dim` values.
///
/// # Safety
/// `encoder` must be a live handle and the buffers must hold the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ecg_encoder_embed(
    encoder: *const EcgEncoder,
    signals: *const f64,
    batch: usize,
    length: usize,
    out_embeddings: *mut f64,
) -> EcgStatus {
    guard(|| {
        let enc = &encoder.as_ref().ok_or_else(|| bad_arg("encoder is null"))?.inner;
        if batch == 0 {
            return Err(bad_arg("batch must be positive"));
        }
        let x = Tensor::new(vec![batch, length], slice(signals, batch * length, "signals")?.to_vec())?;
        let z = enc.embed(&x)?;
        slice_mut(out_embeddings, z.len(), "out_embeddings")?.copy_from_slice(z.data());
        Ok(())
    })
}

/// Releases an encoder. NULL is ignored.
///
/// # Safety
/// `encoder` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ecg_encoder_free(encoder: *mut EcgEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = ecg_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    fn meta() -> EcgMetadata {
        EcgMetadata {
            age: 60.0,
            sbp: 140.0,
            total_cholesterol: 6.3,
            hdl_cholesterol: 1.4,
            gender: 0,
            smoking: 1,
            diabetes: 0,
        }
    }

    #[test]
    fn score2_matches_the_library() {
        let mut r = EcgRisk { r: 0.0, missing: 9 };
        assert_eq!(unsafe { ecg_score2(&meta(), 0, 1, false, &mut r) }, EcgStatus::Ok);
        let rec = record(&meta()).unwrap();
        let lib = score_records(&[rec], &[0], 1, &ImputeOptions::default()).unwrap()[0];
        assert_eq!((r.r, r.missing), (lib.r, 0));

        let partial = EcgMetadata { total_cholesterol: f64::NAN, smoking: -1, ..meta() };
        assert_eq!(unsafe { ecg_score2(&partial, 3, 1, true, &mut r) }, EcgStatus::Ok);
        assert_eq!(r.missing, 2);
    }

    #[test]
    fn bad_inputs_report_status_and_message() {
        let mut r = EcgRisk { r: 0.0, missing: 0 };
        assert_eq!(unsafe { ecg_score2(ptr::null(), 0, 0, false, &mut r) }, EcgStatus::InvalidArgument);
        assert!(last_error().contains("meta"));
        let bad = EcgMetadata { age: -1.0, ..meta() };
        assert_eq!(unsafe { ecg_score2(&bad, 0, 0, false, &mut r) }, EcgStatus::InvalidData);
        assert!(last_error().contains("age"));
        let odd = EcgMetadata { gender: 4, ..meta() };
        assert_eq!(unsafe { ecg_score2(&odd, 0, 0, false, &mut r) }, EcgStatus::InvalidArgument);
        let mut v = 0.0;
        assert_eq!(unsafe { ecg_bandpass([0.0; 4].as_ptr(), 4, 100.0, 30.0, 10.0, 2, &mut v) }, EcgStatus::InvalidConfig);
    }

    #[test]
    fn weights_and_loss_round_trip() {
        let risk = [0.05, 0.2, 0.1];
        let missing = [0u8, 2, 7];
        let mut w = vec![0.0; 36];
        assert_eq!(unsafe { ecg_batch_weights(risk.as_ptr(), missing.as_ptr(), 3, 0.2, w.as_mut_ptr()) }, EcgStatus::Ok);
        let z: Vec<f64> = (0..6 * 4).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let obj = ecg_objective_default();
        let (mut value, mut grad) = (0.0, vec![0.0; 24]);
        let st = unsafe { ecg_loss(z.as_ptr(), 3, 4, w.as_ptr(), &obj, 0.07, &mut value, grad.as_mut_ptr()) };
        assert_eq!(st, EcgStatus::Ok);

        let zt = Tensor::new(vec![6, 4], z.clone()).unwrap();
        let scores: Vec<RiskScore> = risk.iter().zip(missing).map(|(&r, m)| RiskScore { r, missing: m }).collect();
        let info = BatchRiskInfo::from_samples(&scores);
        let wm = batch_weights(&info, 0.2).unwrap();
        assert_eq!(w, wm.w.as_slice());
        let lib = Objective::default().evaluate(&EmbeddingBatch::new(&zt, &info.positive_of, 0.07), Some(&wm)).unwrap();
        assert_eq!(value, lib.value);
        assert_eq!(grad, lib.grad.data());

        // NT-Xent needs no weights.
        let mut nce = EcgObjective { contrastive: 0, lambda: 0.0, normalize: true };
        let st = unsafe { ecg_loss(z.as_ptr(), 3, 4, ptr::null(), &nce, 0.07, &mut value, ptr::null_mut()) };
        assert_eq!(st, EcgStatus::Ok);
        nce.lambda = 1.0;
        let st = unsafe { ecg_loss(z.as_ptr(), 3, 4, ptr::null(), &nce, 0.07, &mut value, ptr::null_mut()) };
        assert_eq!(st, EcgStatus::InvalidConfig);
    }

    #[test]
    fn objective_parsing() {
        let mut o = ecg_objective_default();
        let name = CString::new("nce+dissim:0.5").unwrap();
        assert_eq!(unsafe { ecg_objective_parse(name.as_ptr(), &mut o) }, EcgStatus::Ok);
        assert_eq!(o, EcgObjective { contrastive: ECG_TERM_NCE, lambda: 0.5, normalize: true });
        let bad = CString::new("contrast").unwrap();
        assert_eq!(unsafe { ecg_objective_parse(bad.as_ptr(), &mut o) }, EcgStatus::InvalidConfig);
    }

    #[test]
    fn auroc_and_preprocess() {
        let mut a = 0.0;
        let st = unsafe { ecg_auroc([0.1, 0.4, 0.35, 0.8].as_ptr(), [0u8, 0, 1, 1].as_ptr(), 4, &mut a) };
        assert_eq!(st, EcgStatus::Ok);
        assert_eq!(a, 0.75);
        assert_eq!(unsafe { ecg_auroc([0.1].as_ptr(), [2u8].as_ptr(), 1, &mut a) }, EcgStatus::InvalidArgument);

        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.05).sin()).collect();
        let mut len = 0;
        let st = unsafe { ecg_preprocess(x.as_ptr(), x.len(), 250.0, ptr::null_mut(), 0, &mut len) };
        assert_eq!(st, EcgStatus::InvalidArgument);
        assert_eq!(len, 2000);
        let mut y = vec![0.0; len];
        let st = unsafe { ecg_preprocess(x.as_ptr(), x.len(), 250.0, y.as_mut_ptr(), y.len(), &mut len) };
        assert_eq!(st, EcgStatus::Ok);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn encoder_handle_lifecycle() {
        let preset = CString::new("tiny").unwrap();
        let mut enc: *mut EcgEncoder = ptr::null_mut();
        assert_eq!(unsafe { ecg_encoder_from_preset(preset.as_ptr(), 42, &mut enc) }, EcgStatus::Ok);
        let dim = unsafe { ecg_encoder_output_dim(enc) };
        let t = 256.max(unsafe { ecg_encoder_min_length(enc) });
        let x: Vec<f64> = (0..2 * t).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut z = vec![0.0; 2 * dim];
        assert_eq!(unsafe { ecg_encoder_embed(enc, x.as_ptr(), 2, t, z.as_mut_ptr()) }, EcgStatus::Ok);
        let lib = Encoder::build(&EncoderConfig::preset("tiny").unwrap(), 42).unwrap();
        assert_eq!(z, lib.embed(&Tensor::new(vec![2, t], x.clone()).unwrap()).unwrap().data());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        Checkpoint::from_encoder(&lib, "").save(&path).unwrap();
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut loaded: *mut EcgEncoder = ptr::null_mut();
        assert_eq!(unsafe { ecg_encoder_load(cpath.as_ptr(), &mut loaded) }, EcgStatus::Ok);
        let mut z2 = vec![0.0; 2 * dim];
        assert_eq!(unsafe { ecg_encoder_embed(loaded, x.as_ptr(), 2, t, z2.as_mut_ptr()) }, EcgStatus::Ok);
        assert_eq!(z, z2);
        unsafe {
            ecg_encoder_free(enc);
            ecg_encoder_free(loaded);
            ecg_encoder_free(ptr::null_mut());
        }

        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(unsafe { ecg_encoder_load(missing.as_ptr(), &mut loaded) }, EcgStatus::Io);
        let huge = CString::new("xl").unwrap();
        assert_eq!(unsafe { ecg_encoder_from_preset(huge.as_ptr(), 0, &mut loaded) }, EcgStatus::InvalidConfig);
        assert_eq!(unsafe { ecg_encoder_output_dim(ptr::null()) }, 0);
    }
}
