//! Forward corruption, training losses and reverse samplers for the two
//! diffusion branches, plus the joint sampler that walks both on one grid.

pub mod categorical;
pub mod numerical;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::tabular::argmax;
use crate::util::stream_rng;

pub use categorical::{alpha_at, forward_mask, loss_categorical, posterior_step, MASK_T_MIN};
pub use numerical::{forward_noise, loss_numerical, reverse_step, NumericalSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("time {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("need 0 <= lo < hi <= 1, got lo={lo} hi={hi}")]
    BadTimes { lo: f64, hi: f64 },
    #[error("invalid noise schedule: sigma_min={sigma_min}, sigma_max={sigma_max}")]
    InvalidSchedule { sigma_min: f64, sigma_max: f64 },
    #[error("sampling needs at least one step")]
    ZeroSteps,
    #[error("denoiser failed: {0}")]
    Denoiser(String),
}

pub type Result<T, E = DiffusionError> = std::result::Result<T, E>;

pub(crate) fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(DiffusionError::OutOfRange(t))
    }
}

pub(crate) fn check_pair(lo: f64, hi: f64) -> Result<()> {
    if 0.0 <= lo && lo < hi && hi <= 1.0 {
        Ok(())
    } else {
        Err(DiffusionError::BadTimes { lo, hi })
    }
}

/// Predictions for one reverse step: noise for numerical dims and per-column
/// category probabilities (rows sum to one, no MASK slot).
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub eps_hat: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
}

/// A network queried by the joint sampler. `tokens` holds category indices,
/// with `cat_sizes()[j]` standing for MASK in column `j`.
pub trait Denoiser {
    fn num_dims(&self) -> usize;
    fn cat_sizes(&self) -> &[usize];
    fn denoise(&self, x_num: &Array2<f64>, tokens: &Array2<usize>, t: f64) -> Result<DenoiserOutput>;
}

const STREAM_SAMPLE_INIT: u64 = 0x5a11;
const STREAM_SAMPLE_STEP: u64 = 0x5a12;

/// Joint reverse process from `t = 1` to `t = 0` over a uniform grid with one
/// denoiser call per step. Numerical state starts at `N(0, sigma_max^2)`,
/// categorical state starts fully masked.
pub fn sample_joint<D: Denoiser + ?Sized>(
    net: &D,
    schedule: &NumericalSchedule,
    n_rows: usize,
    steps: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array2<usize>)> {
    if steps == 0 {
        return Err(DiffusionError::ZeroSteps);
    }
    let ks = net.cat_sizes().to_vec();
    let mut init = stream_rng(seed, STREAM_SAMPLE_INIT, 0);
    let mut x = Array2::from_shape_simple_fn((n_rows, net.num_dims()), || {
        let z: f64 = StandardNormal.sample(&mut init);
        schedule.sigma_max * z
    });
    let mut tokens = Array2::from_shape_fn((n_rows, ks.len()), |(_, j)| ks[j]);

    for step in 0..steps {
        let t_hi = 1.0 - step as f64 / steps as f64;
        let t_lo = if step + 1 == steps { 0.0 } else { 1.0 - (step + 1) as f64 / steps as f64 };
        let out = net.denoise(&x, &tokens, t_hi)?;
        if out.eps_hat.dim() != x.dim() {
            return Err(DiffusionError::ShapeMismatch {
                op: "denoiser output",
                lhs: out.eps_hat.dim(),
                rhs: x.dim(),
            });
        }
        x = reverse_step(schedule, &x, t_hi, t_lo, &out.eps_hat)?;
        if !ks.is_empty() {
            let mut rng = stream_rng(seed, STREAM_SAMPLE_STEP, step as u64);
            let reveal = Array2::from_shape_simple_fn(tokens.dim(), || rng.random::<f64>());
            let pick = Array2::from_shape_simple_fn(tokens.dim(), || rng.random::<f64>());
            tokens = posterior_step(&tokens, &out.probs, &ks, t_lo, t_hi, &reveal, &pick)?;
            if step + 1 == steps {
                for ((b, j), tok) in tokens.indexed_iter_mut() {
                    if *tok == ks[j] {
                        *tok = argmax(out.probs[j].row(b).iter().copied());
                    }
                }
            }
        }
    }
    Ok((x, tokens))
}

/// Numerical-only sampler; the denoiser sees no categorical columns.
pub fn sample_numerical<D: Denoiser + ?Sized>(
    net: &D,
    schedule: &NumericalSchedule,
    n_rows: usize,
    steps: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    Ok(sample_joint(net, schedule, n_rows, steps, seed)?.0)
}

/// Categorical-only sampler.
pub fn sample_categorical<D: Denoiser + ?Sized>(net: &D, n_rows: usize, steps: usize, seed: u64) -> Result<Array2<usize>> {
    Ok(sample_joint(net, &NumericalSchedule::default(), n_rows, steps, seed)?.1)
}
