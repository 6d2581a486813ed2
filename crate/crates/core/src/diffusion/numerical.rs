//! Variance-exploding branch: `x_t = x_0 + sigma(t) eps` with a log-linear
//! `sigma`, mean-squared noise loss and a probability-flow Euler step.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_pair, check_time, DiffusionError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericalSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NumericalSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
        }
    }
}

impl NumericalSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(DiffusionError::InvalidSchedule { sigma_min, sigma_max });
        }
        Ok(Self { sigma_min, sigma_max })
    }

    /// `sigma_min^(1-t) * sigma_max^t`.
    pub fn sigma_at(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.sigma_unchecked(t))
    }

    pub(crate) fn sigma_unchecked(&self, t: f64) -> f64 {
        (self.sigma_min.ln() * (1.0 - t) + self.sigma_max.ln() * t).exp()
    }
}

fn same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(DiffusionError::ShapeMismatch {
            op,
            lhs: a.dim(),
            rhs: b.dim(),
        })
    }
}

/// Row `b` becomes `x0[b] + sigma(t[b]) * eps[b]`.
pub fn forward_noise(schedule: &NumericalSchedule, x0: &Array2<f64>, t: &[f64], eps: &Array2<f64>) -> Result<Array2<f64>> {
    same_shape("forward_noise", x0, eps)?;
    if t.len() != x0.nrows() {
        return Err(DiffusionError::ShapeMismatch {
            op: "forward_noise times",
            lhs: (t.len(), 1),
            rhs: x0.dim(),
        });
    }
    let mut out = x0.clone();
    for (b, mut row) in out.rows_mut().into_iter().enumerate() {
        let sigma = schedule.sigma_at(t[b])?;
        row.zip_mut_with(&eps.row(b), |x, e| *x += sigma * e);
    }
    Ok(out)
}

/// Mean over batch and dimensions of the squared noise error; zero when there
/// are no numerical dimensions.
pub fn loss_numerical(eps_hat: &Array2<f64>, eps: &Array2<f64>) -> Result<f64> {
    same_shape("loss_numerical", eps_hat, eps)?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    let sse: f64 = eps_hat.iter().zip(eps).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / eps.len() as f64)
}

/// Euler step of the probability-flow ODE from `t_hi` down to `t_lo`:
/// `x + (sigma(t_lo) - sigma(t_hi)) * eps_hat`.
pub fn reverse_step(schedule: &NumericalSchedule, x: &Array2<f64>, t_hi: f64, t_lo: f64, eps_hat: &Array2<f64>) -> Result<Array2<f64>> {
    check_pair(t_lo, t_hi)?;
    same_shape("reverse_step", x, eps_hat)?;
    let delta = schedule.sigma_unchecked(t_lo) - schedule.sigma_unchecked(t_hi);
    Ok(x + &(eps_hat * delta))
}
