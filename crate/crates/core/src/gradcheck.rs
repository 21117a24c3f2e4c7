//! Central finite-difference gradient checking.

use crate::error::{KcotError, Result};

/// Relative error `max_j |g_j − ĝ_j| / max(1, |g_j|, |ĝ_j|)` between the
/// analytic gradient returned by `f` at `theta` and central differences
/// `(f(θ + h e_j) − f(θ − h e_j)) / 2h`.
///
/// `f` returns `(loss, gradient)`; only the loss is used at the shifted
/// points.
pub fn grad_check<F>(f: F, theta: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(KcotError::InvalidParameter(format!(
            "finite-difference step {h:e} outside [1e-7, 1e-4]"
        )));
    }
    let (loss, analytic) = f(theta);
    if !loss.is_finite() {
        return Err(KcotError::NonFinite(format!("loss {loss} at θ")));
    }
    if analytic.len() != theta.len() {
        return Err(KcotError::dims(
            "grad_check",
            format!("{} gradient entries for {} parameters", analytic.len(), theta.len()),
        ));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for j in 0..theta.len() {
        probe[j] = theta[j] + h;
        let up = f(&probe).0;
        probe[j] = theta[j] - h;
        let down = f(&probe).0;
        probe[j] = theta[j];
        if !(up.is_finite() && down.is_finite()) {
            return Err(KcotError::NonFinite(format!("loss at θ ± h·e_{j}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let g = analytic[j];
        let err = (g - numeric).abs() / 1f64.max(g.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Shifts `theta` by `+1e-3` in every coordinate until `at_kink` reports
/// false (at most 16 shifts). Finite differences across a relu kink are
/// meaningless, so checks start from a nearby differentiable point.
pub fn nudge_off_kinks(theta: &[f64], at_kink: impl Fn(&[f64]) -> bool) -> Vec<f64> {
    let mut t = theta.to_vec();
    for _ in 0..16 {
        if !at_kink(&t) {
            break;
        }
        t.iter_mut().for_each(|x| *x += 1e-3);
    }
    t
}
