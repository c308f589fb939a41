use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input, element) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// `‖a - n‖ / max(‖a‖, ‖n‖)` over all checked coordinates.
    pub norm_rel_error: f64,
}

/// Compares `backward` gradients of a scalar function with central
/// differences at every coordinate of every input.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    grad_check_at(f, point, eps, &coords)
}

/// Like [`grad_check`] but probes only the listed (input, element) coordinates.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check_at<F>(f: F, point: &[Tensor], eps: f64, coords: &[(usize, usize)]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_finite_checks(true);
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).all_finite() {
        return Err(Error::NonFinite("grad_check"));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();
    drop(tape);

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::with_finite_checks(true);
        let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = f(&mut t, &vs)?;
        let v = t.value(o).item().ok_or_else(|| Error::NonScalarLoss(t.shape(o).to_vec()))?;
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        norm_rel_error: 0.0,
    };
    let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
    let mut probe = point.to_vec();
    for &(i, j) in coords {
        let x0 = point[i].data()[j];
        probe[i].data_mut()[j] = x0 + eps;
        let hi = eval(&probe)?;
        probe[i].data_mut()[j] = x0 - eps;
        let lo = eval(&probe)?;
        probe[i].data_mut()[j] = x0;
        let numeric = (hi - lo) / (2.0 * eps);
        let a = analytic[i].data()[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        diff_sq += (a - numeric) * (a - numeric);
        a_sq += a * a;
        n_sq += numeric * numeric;
        if rel > report.max_rel_error || report.checked == 1 {
            report = GradCheckReport {
                max_rel_error: rel,
                worst: (i, j),
                analytic: a,
                numeric,
                checked: report.checked,
                norm_rel_error: 0.0,
            };
        }
    }
    let scale = a_sq.max(n_sq).sqrt();
    report.norm_rel_error = if scale > 0.0 { diff_sq.sqrt() / scale } else { 0.0 };
    Ok(report)
}
