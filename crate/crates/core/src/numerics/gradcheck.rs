//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Compare an analytic gradient against central differences.
///
/// `f` maps a flat parameter vector to `(value, analytic_gradient)` and is
/// re-evaluated at `x ± eps*e_i` for every coordinate; only the value of
/// those perturbed calls is used. Returns the maximum relative error
/// `|analytic - fd| / max(1, |fd|)` over all coordinates.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if eps <= 0.0 || eps > 1e-3 || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grad_check: eps must lie in (0, 1e-3], got {eps}"
        )));
    }
    let (_, analytic) = f(x)?;
    if analytic.len() != x.len() {
        return Err(Error::Contract(format!(
            "grad_check: analytic gradient has {} entries for {} parameters",
            analytic.len(),
            x.len()
        )));
    }
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (plus, _) = f(&probe)?;
        probe[i] = x[i] - eps;
        let (minus, _) = f(&probe)?;
        probe[i] = x[i];
        let fd = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        if !rel.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_passes() {
        // f(x) = x.x, grad 2x
        let f = |x: &[f64]| {
            let v: f64 = x.iter().map(|v| v * v).sum();
            Ok((v, x.iter().map(|v| 2.0 * v).collect()))
        };
        let err = grad_check(f, &[0.7, -1.3, 2.4], 1e-6).unwrap();
        assert!(err < 1e-7, "rel err {err}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let f = |x: &[f64]| {
            let v: f64 = x.iter().map(|v| v * v).sum();
            // deliberately off by a factor of two
            Ok((v, x.to_vec()))
        };
        let err = grad_check(f, &[1.0, 2.0], 1e-6).unwrap();
        assert!(err > 0.1, "rel err {err}");
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let f = |x: &[f64]| Ok((x[0], vec![1.0]));
        assert!(matches!(
            grad_check(f, &[1.0], 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            grad_check(f, &[1.0], 1e-2),
            Err(Error::InvalidParameter(_))
        ));
    }
}
