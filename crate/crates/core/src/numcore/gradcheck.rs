use crate::error::{Error, Result};

/// Floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Compares an analytic gradient against central finite differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(loss: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    grad_check_worst(loss, params, analytic, eps).map(|w| w.error)
}

/// The coordinate where analytic and numeric gradients disagree most.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCoordinate {
    pub error: f64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// [`grad_check`] that also reports where the maximum was attained.
pub fn grad_check_worst<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<WorstCoordinate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("parameters are not finite".into()));
    }
    let mut p = params.to_vec();
    let mut worst = WorstCoordinate {
        error: 0.0,
        index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p)?;
        p[i] = orig - eps;
        let down = loss(&p)?;
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is not finite when perturbing coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.error {
            worst = WorstCoordinate {
                error: rel,
                index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = vec![0.3, -1.2, 2.5, 0.0];
        let grad = p.clone();
        let err = grad_check(
            |q| Ok(0.5 * q.iter().map(|x| x * x).sum::<f64>()),
            &p,
            &grad,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = vec![1.0, 2.0];
        let err = grad_check(
            |q| Ok(q[0] * q[0] + q[1]),
            &p,
            &[2.0, 0.5],
            1e-5,
        )
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = vec![0.0];
        let r = grad_check(|q| Ok(1.0 / q[0].abs().min(0.0)), &p, &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
