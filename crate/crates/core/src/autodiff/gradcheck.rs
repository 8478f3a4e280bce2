//! Central-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error instead.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol
    }

    /// Combines two reports, keeping the worse coordinate.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let mut worst = if other.max_rel_err > self.max_rel_err { other } else { self };
        worst.checked = checked;
        worst
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` at `point`,
/// visiting only `coords` (all coordinates when `None`).
pub fn compare<F>(
    analytic: &[f64],
    mut f: F,
    point: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::config(format!("gradcheck step must be positive, got {eps}")));
    }
    if analytic.len() != point.len() {
        return Err(Error::shape("gradcheck", format!("{} vs {}", analytic.len(), point.len())));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x)?;
        x[i] = orig - eps;
        let down = f(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric, DEFAULT_FLOOR);
        if err > report.max_rel_err || err.is_nan() || report.checked == 0 {
            report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err.max(report.max_rel_err) };
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Checks the gradient of a scalar function built on a fresh tape from a
/// single input tensor.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(point.clone())?;
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads.wrt(x).map_or_else(|| vec![0.0; point.len()], |g| g.data().to_vec());
    let shape = point.shape().to_vec();
    compare(
        &analytic,
        |p| {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::new(shape.clone(), p.to_vec())?)?;
            let y = f(&mut tape, x)?;
            tape.value(y).item().ok_or_else(|| Error::Tape("gradcheck target is not scalar".into()))
        },
        point.data(),
        eps,
        None,
    )
}
