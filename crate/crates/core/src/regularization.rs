//! Hybrid adaptive causal regularization.
//!
//! Noise-prediction Gram matrices are penalized on the entries of the causal
//! mask, and the penalty is scaled by a weight that shrinks when the base loss
//! fluctuates or the noise level is high.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softmax_rows, AutodiffError, Tape, Tensor};
use crate::causal::CausalMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizationError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("noise scale must be positive, got {0}")]
    ZeroSigma(f64),
    #[error("noise level must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("invalid regularization setting: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = RegularizationError> = std::result::Result<T, E>;

fn check_shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Result<()> {
    if lhs == rhs {
        Ok(())
    } else {
        Err(RegularizationError::ShapeMismatch { op, lhs, rhs })
    }
}

/// Softmax applied independently to each consecutive block of widths `ks`.
pub fn blockwise_softmax(logits: &Array2<f64>, ks: &[usize]) -> Result<Array2<f64>> {
    let width: usize = ks.iter().sum();
    check_shape("blockwise_softmax", (logits.nrows(), logits.ncols()), (logits.nrows(), width))?;
    let mut out = Array2::zeros(logits.dim());
    let mut offset = 0;
    for &k in ks {
        let block = logits.slice(s![.., offset..offset + k]).to_owned();
        out.slice_mut(s![.., offset..offset + k]).assign(&softmax_rows(&block));
        offset += k;
    }
    Ok(out)
}

/// `Z^T Z / B`.
pub fn gram(z: &Array2<f64>) -> Array2<f64> {
    let b = z.nrows().max(1) as f64;
    z.t().dot(z) / b
}

/// Batch Gram of blockwise category probabilities.
pub fn categorical_gram(logits: &Array2<f64>, ks: &[usize]) -> Result<Array2<f64>> {
    Ok(gram(&blockwise_softmax(logits, ks)?))
}

/// Row-scaled residuals `(x_t - x_hat) / sigma`.
pub fn numerical_residuals(x_t: &Array2<f64>, x_hat: &Array2<f64>, sigma: &[f64]) -> Result<Array2<f64>> {
    check_shape("numerical_gram", x_t.dim(), x_hat.dim())?;
    if sigma.len() != x_t.nrows() {
        return Err(RegularizationError::ShapeMismatch {
            op: "numerical_gram sigma",
            lhs: (sigma.len(), 1),
            rhs: x_t.dim(),
        });
    }
    if let Some(&bad) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(RegularizationError::ZeroSigma(bad));
    }
    let mut r = x_t - x_hat;
    for (mut row, &s) in r.rows_mut().into_iter().zip(sigma) {
        row.mapv_inplace(|v| v / s);
    }
    Ok(r)
}

pub fn numerical_gram(x_t: &Array2<f64>, x_hat: &Array2<f64>, sigma: &[f64]) -> Result<Array2<f64>> {
    Ok(gram(&numerical_residuals(x_t, x_hat, sigma)?))
}

/// Mean of `|G_ij|` over the non-zero entries of `mask`; zero for an empty mask.
pub fn masked_base_loss(g: &Array2<f64>, mask: &Array2<f64>) -> Result<f64> {
    check_shape("masked_base_loss", g.dim(), mask.dim())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (v, &m) in g.iter().zip(mask) {
        if m != 0.0 {
            total += v.abs();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// `(w_max / 2) * (exp(-|delta_l|) + 1 / (1 + sigma_mean))`, in `(0, w_max]`.
pub fn hybrid_weight(delta_l: f64, sigma_mean: f64, w_max: f64) -> Result<f64> {
    if !(w_max > 0.0) || !w_max.is_finite() {
        return Err(RegularizationError::InvalidConfig(format!("w_max must be positive, got {w_max}")));
    }
    if sigma_mean < 0.0 {
        return Err(RegularizationError::NegativeSigma(sigma_mean));
    }
    if !delta_l.is_finite() || !sigma_mean.is_finite() {
        return Err(RegularizationError::NonFinite("hybrid_weight"));
    }
    Ok(0.5 * w_max * ((-delta_l.abs()).exp() + 1.0 / (1.0 + sigma_mean)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Weighting {
    /// Hybrid weight from loss fluctuation and noise level.
    Adaptive,
    /// Constant multiplier regardless of training dynamics.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HacrState {
    pub ema: Option<f64>,
    pub ema_decay: f64,
    pub w_max: f64,
    pub weighting: Weighting,
}

/// Per-step outcome of the weight schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub delta_l: f64,
    pub w: f64,
}

impl HacrState {
    pub fn new(w_max: f64, ema_decay: f64, weighting: Weighting) -> Result<Self> {
        if !(ema_decay > 0.0 && ema_decay <= 1.0) {
            return Err(RegularizationError::InvalidConfig(format!("ema_decay must lie in (0, 1], got {ema_decay}")));
        }
        if !(w_max > 0.0) {
            return Err(RegularizationError::InvalidConfig(format!("w_max must be positive, got {w_max}")));
        }
        if let Weighting::Fixed(l) = weighting {
            if !(l >= 0.0) {
                return Err(RegularizationError::InvalidConfig(format!("fixed weight must be non-negative, got {l}")));
            }
        }
        Ok(Self {
            ema: None,
            ema_decay,
            w_max,
            weighting,
        })
    }

    /// Records `l_base`: the fluctuation is measured against the EMA before
    /// the update, and the EMA starts at the first observation.
    pub fn observe(&mut self, l_base: f64, sigma_mean: f64) -> Result<WeightUpdate> {
        if !l_base.is_finite() {
            return Err(RegularizationError::NonFinite("base causal loss"));
        }
        let prev = self.ema.unwrap_or(l_base);
        let delta_l = (l_base - prev).abs();
        let w = match self.weighting {
            Weighting::Adaptive => hybrid_weight(delta_l, sigma_mean, self.w_max)?,
            Weighting::Fixed(l) => l,
        };
        self.ema = Some(self.ema_decay * l_base + (1.0 - self.ema_decay) * prev);
        Ok(WeightUpdate { delta_l, w })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalPenalty {
    pub l_base_cat: f64,
    pub l_base_num: f64,
    pub delta_l: f64,
    pub sigma_mean: f64,
    pub w: f64,
    pub l_causal: f64,
}

impl CausalPenalty {
    pub fn l_base(&self) -> f64 {
        self.l_base_cat + self.l_base_num
    }
}

/// The causal mask split by branch over the joint width `[numerical | one-hot]`.
/// Numerical-numerical pairs and, unless disabled, numerical-categorical pairs
/// go to the numerical branch; categorical-categorical pairs to the other.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMasks {
    pub num: Array2<f64>,
    pub cat: Array2<f64>,
    pub nnz_num: usize,
    pub nnz_cat: usize,
}

impl BranchMasks {
    pub fn split(mask: &CausalMask, num_dims: usize, cross_pairs: bool) -> Self {
        let w = mask.width();
        let mut num = Array2::zeros((w, w));
        let mut cat = Array2::zeros((w, w));
        let (mut nnz_num, mut nnz_cat) = (0, 0);
        for ((i, j), &v) in mask.m.indexed_iter() {
            if v == 0.0 {
                continue;
            }
            match (i < num_dims, j < num_dims) {
                (true, true) => {
                    num[[i, j]] = 1.0;
                    nnz_num += 1;
                }
                (false, false) => {
                    cat[[i, j]] = 1.0;
                    nnz_cat += 1;
                }
                _ if cross_pairs => {
                    num[[i, j]] = 1.0;
                    nnz_num += 1;
                }
                _ => {}
            }
        }
        Self { num, cat, nnz_num, nnz_cat }
    }

    pub fn is_empty(&self) -> bool {
        self.nnz_num == 0 && self.nnz_cat == 0
    }

    pub fn width(&self) -> usize {
        self.num.nrows()
    }
}

/// Base losses of both branches from one joint Gram of
/// `[residuals | blockwise probabilities]`.
pub fn base_losses(residuals: &Array2<f64>, logits: &Array2<f64>, ks: &[usize], masks: &BranchMasks) -> Result<(f64, f64)> {
    check_shape("base_losses", (residuals.nrows(), 0), (logits.nrows(), 0))?;
    let probs = blockwise_softmax(logits, ks)?;
    let z = ndarray::concatenate(ndarray::Axis(1), &[residuals.view(), probs.view()]).expect("row counts checked");
    check_shape("base_losses mask", (z.ncols(), z.ncols()), masks.num.dim())?;
    let g = gram(&z);
    Ok((masked_base_loss(&g, &masks.cat)?, masked_base_loss(&g, &masks.num)?))
}

/// One regularization step: both base losses, the weight update, and the
/// resulting penalty. The input state is left untouched.
#[allow(clippy::too_many_arguments)]
pub fn hacr_step(
    state: &HacrState,
    logits: &Array2<f64>,
    ks: &[usize],
    x_t_num: &Array2<f64>,
    x_hat_num: &Array2<f64>,
    sigma_rows: &[f64],
    masks: &BranchMasks,
) -> Result<(CausalPenalty, HacrState)> {
    let residuals = numerical_residuals(x_t_num, x_hat_num, sigma_rows)?;
    let (l_base_cat, l_base_num) = base_losses(&residuals, logits, ks, masks)?;
    let sigma_mean = sigma_rows.iter().sum::<f64>() / sigma_rows.len().max(1) as f64;
    let mut next = state.clone();
    let update = next.observe(l_base_cat + l_base_num, sigma_mean)?;
    let penalty = CausalPenalty {
        l_base_cat,
        l_base_num,
        delta_l: update.delta_l,
        sigma_mean,
        w: update.w,
        l_causal: (l_base_cat + l_base_num) * update.w,
    };
    Ok((penalty, next))
}

/// Differentiable base losses `(cat, num)` recorded on `tape`. `output` is the
/// denoiser's joint output `[eps_hat | logits]`; the predicted noise equals the
/// scaled residual `(x_t - x_hat) / sigma` under the forward rule. Returns
/// `None` for an empty mask so that no nodes are recorded.
pub fn base_losses_on_tape(
    tape: &mut Tape,
    output: Tensor,
    num_dims: usize,
    ks: &[usize],
    masks: &BranchMasks,
) -> Result<Option<(Option<Tensor>, Option<Tensor>)>> {
    if masks.is_empty() {
        return Ok(None);
    }
    let mut parts = Vec::with_capacity(ks.len() + 1);
    if num_dims > 0 {
        parts.push(tape.slice_cols(output, 0, num_dims)?);
    }
    let mut offset = num_dims;
    for &k in ks {
        let block = tape.slice_cols(output, offset, offset + k)?;
        parts.push(tape.softmax(block));
        offset += k;
    }
    let z = tape.concat_cols(&parts)?;
    check_shape("base_losses_on_tape", (z.shape().1, z.shape().1), masks.num.dim())?;
    let zt = tape.transpose(z);
    let g = tape.matmul(zt, z)?;
    let g = tape.scale(g, 1.0 / z.shape().0.max(1) as f64);
    let g_abs = tape.abs(g);
    let mut branch = |mask: &Array2<f64>, nnz: usize| -> Result<Option<Tensor>> {
        if nnz == 0 {
            return Ok(None);
        }
        let weighted = tape.mul_const(g_abs, mask / nnz as f64)?;
        Ok(Some(tape.sum(weighted)))
    };
    let cat = branch(&masks.cat, masks.nnz_cat)?;
    let num = branch(&masks.num, masks.nnz_num)?;
    Ok(Some((cat, num)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
    }

    fn naive_gram(z: &Array2<f64>) -> Array2<f64> {
        let (b, w) = z.dim();
        let mut g = Array2::zeros((w, w));
        for i in 0..w {
            for j in 0..w {
                let mut acc = 0.0;
                for r in 0..b {
                    acc += z[[r, i]] * z[[r, j]];
                }
                g[[i, j]] = acc / b as f64;
            }
        }
        g
    }

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn categorical_gram_examples() {
        let g = categorical_gram(&array![[0.0, 0.0]], &[2]).unwrap();
        assert_eq!(g, array![[0.25, 0.25], [0.25, 0.25]]);
        let g = categorical_gram(&array![[800.0, 0.0, 0.0]], &[3]).unwrap();
        assert!(close(&g, &array![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], 1e-300));

        let logits = randn(17, 5, 1);
        let p = blockwise_softmax(&logits, &[2, 3]).unwrap();
        for row in p.rows() {
            assert!((row.slice(s![0..2]).sum() - 1.0).abs() < 1e-12);
            assert!((row.slice(s![2..5]).sum() - 1.0).abs() < 1e-12);
        }
        assert!(close(&categorical_gram(&logits, &[2, 3]).unwrap(), &naive_gram(&p), 1e-12));
        assert!(blockwise_softmax(&logits, &[2, 2]).is_err());
    }

    #[test]
    fn numerical_gram_examples() {
        let x = randn(6, 3, 2);
        assert_eq!(numerical_gram(&x, &x, &[1.0; 6]).unwrap(), Array2::<f64>::zeros((3, 3)));
        let g = numerical_gram(&array![[1.0, -2.0]], &array![[0.0, 0.0]], &[1.0]).unwrap();
        assert_eq!(g, array![[1.0, -2.0], [-2.0, 4.0]]);
        let xh = randn(6, 3, 3);
        let sig = [0.5, 1.0, 2.0, 3.0, 0.1, 7.0];
        let mut r = &x - &xh;
        for (b, s) in sig.iter().enumerate() {
            r.row_mut(b).mapv_inplace(|v| v / s);
        }
        assert!(close(&numerical_gram(&x, &xh, &sig).unwrap(), &naive_gram(&r), 1e-12));
        assert_eq!(numerical_gram(&x, &xh, &[0.0; 6]), Err(RegularizationError::ZeroSigma(0.0)));
    }

    #[test]
    fn masked_base_loss_examples() {
        let g = array![[1.0, -2.0], [-2.0, 4.0]];
        assert_eq!(masked_base_loss(&g, &Array2::zeros((2, 2))).unwrap(), 0.0);
        assert_eq!(masked_base_loss(&g, &array![[0.0, 1.0], [1.0, 0.0]]).unwrap(), 2.0);
        let g = randn(5, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Array2::from_shape_simple_fn((5, 5), || if rng.random::<bool>() { 1.0 } else { 0.0 });
        let (mut sum, mut n) = (0.0, 0.0);
        for i in 0..5 {
            for j in 0..5 {
                if m[[i, j]] == 1.0 {
                    sum += g[[i, j]].abs();
                    n += 1.0;
                }
            }
        }
        assert!((masked_base_loss(&g, &m).unwrap() - sum / n).abs() < 1e-12);
        assert!(masked_base_loss(&g, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn hybrid_weight_closed_forms() {
        let w_max = 0.1;
        assert_eq!(hybrid_weight(0.0, 0.0, w_max).unwrap(), w_max);
        assert!((hybrid_weight(2f64.ln(), 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(hybrid_weight(50.0, 1e6, w_max).unwrap() < 1e-6 * w_max);
        assert_eq!(hybrid_weight(0.0, -1.0, w_max), Err(RegularizationError::NegativeSigma(-1.0)));
        assert!(hybrid_weight(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn weight_decreases_along_grids() {
        let grid: Vec<f64> = (0..50).map(|k| k as f64 * 0.4).collect();
        for pair in grid.windows(2) {
            assert!(hybrid_weight(pair[1], 1.0, 0.1).unwrap() < hybrid_weight(pair[0], 1.0, 0.1).unwrap());
            assert!(hybrid_weight(-pair[1], 1.0, 0.1).unwrap() < hybrid_weight(-pair[0], 1.0, 0.1).unwrap());
            assert!(hybrid_weight(0.3, pair[1], 0.1).unwrap() < hybrid_weight(0.3, pair[0], 0.1).unwrap());
        }
        // noise factor derivative is negative
        for &s in &[0.0, 0.5, 3.0, 80.0] {
            let h = 1e-6;
            let d = (1.0 / (1.0 + s + h) - 1.0 / (1.0 + s - h)) / (2.0 * h);
            assert!(d < 0.0);
        }
    }

    #[test]
    fn ema_trajectory() {
        let mut st = HacrState::new(0.1, 0.1, Weighting::Adaptive).unwrap();
        let first = st.observe(0.4, 2.0).unwrap();
        assert_eq!(first.delta_l, 0.0);
        assert_eq!(st.ema, Some(0.4));
        assert!((first.w - 0.05 * (1.0 + 1.0 / 3.0)).abs() < 1e-15);
        let second = st.observe(0.6, 2.0).unwrap();
        assert!((second.delta_l - 0.2).abs() < 1e-15);
        assert!((st.ema.unwrap() - 0.42).abs() < 1e-15);
        let third = st.observe(0.5, 2.0).unwrap();
        assert!((third.delta_l - 0.08).abs() < 1e-15);
        assert!((st.ema.unwrap() - 0.428).abs() < 1e-15);

        let mut fixed = HacrState::new(0.1, 0.1, Weighting::Fixed(0.3)).unwrap();
        assert_eq!(fixed.observe(5.0, 1.0).unwrap().w, 0.3);
        assert!(HacrState::new(0.1, 0.0, Weighting::Adaptive).is_err());
    }

    fn full_mask(widths: &[usize]) -> CausalMask {
        let w: usize = widths.iter().sum();
        let mut feature = Vec::new();
        for (f, &k) in widths.iter().enumerate() {
            feature.extend(std::iter::repeat_n(f, k));
        }
        let m = Array2::from_shape_fn((w, w), |(i, j)| if feature[i] != feature[j] { 1.0 } else { 0.0 });
        let nnz = m.iter().filter(|&&v| v != 0.0).count();
        CausalMask { m, nnz }
    }

    #[test]
    fn branch_split_and_cross_pairs() {
        // two numerical dims, then blocks of width 2 and 3
        let mask = full_mask(&[1, 1, 2, 3]);
        let with = BranchMasks::split(&mask, 2, true);
        let without = BranchMasks::split(&mask, 2, false);
        assert_eq!(with.nnz_num + with.nnz_cat, mask.nnz);
        assert_eq!(without.nnz_num, 2);
        assert_eq!(with.nnz_cat, 12);
        assert_eq!(without.nnz_cat, 12);
    }

    #[test]
    fn hacr_step_examples() {
        let st = HacrState::new(0.1, 0.1, Weighting::Adaptive).unwrap();
        let mask = full_mask(&[1, 1, 2]);
        let masks = BranchMasks::split(&mask, 2, false);
        // exact reconstruction and a confident categorical block off the numerical pairs
        let x = randn(4, 2, 6);
        let logits = Array2::from_shape_fn((4, 2), |(_, k)| if k == 0 { 800.0 } else { 0.0 });
        let (pen, next) = hacr_step(&st, &logits, &[2], &x, &x, &[1.0; 4], &masks).unwrap();
        assert_eq!(pen.l_causal, 0.0);
        assert_eq!(next.ema, Some(0.0));

        let xh = randn(4, 2, 7);
        let (pen, next) = hacr_step(&st, &logits, &[2], &x, &xh, &[0.5, 1.0, 2.0, 4.0], &masks).unwrap();
        assert_eq!(pen.delta_l, 0.0);
        assert_eq!(pen.sigma_mean, 1.875);
        assert!((pen.w - 0.05 * (1.0 + 1.0 / 2.875)).abs() < 1e-15);
        assert!((pen.l_causal - pen.l_base() * pen.w).abs() < 1e-15);
        assert_eq!(next.ema, Some(pen.l_base()));
        assert_eq!(st.ema, None);
    }

    #[test]
    fn tape_losses_match_arrays_and_gradients() {
        let ks = [2, 3];
        let masks = BranchMasks::split(&full_mask(&[1, 1, 2, 3]), 2, true);
        let eps = randn(7, 2, 8);
        let logits = randn(7, 5, 9);
        let (cat, num) = base_losses(&eps, &logits, &ks, &masks).unwrap();

        let eval = |p: &[Array2<f64>]| -> (f64, Vec<Array2<f64>>) {
            let mut tape = Tape::new();
            let e = tape.leaf(p[0].clone());
            let l = tape.leaf(p[1].clone());
            let out = tape.concat_cols(&[e, l]).unwrap();
            let (c, n) = base_losses_on_tape(&mut tape, out, 2, &ks, &masks).unwrap().unwrap();
            let total = tape.add(c.unwrap(), n.unwrap()).unwrap();
            let v = tape.scalar_value(total);
            let g = tape.backward(total).unwrap();
            (v, vec![g.get(e), g.get(l)])
        };
        let params = [eps.clone(), logits.clone()];
        let (v, grads) = eval(&params);
        assert!((v - (cat + num)).abs() < 1e-12);
        let err = grad_check(|p| eval(p).0, &params, &grads, 1e-6);
        assert!(err < 1e-4, "{err}");

        let empty = BranchMasks::split(&CausalMask::empty(7), 2, true);
        let mut tape = Tape::new();
        let out = tape.leaf(ndarray::concatenate(ndarray::Axis(1), &[eps.view(), logits.view()]).unwrap());
        let before = tape.len();
        assert!(base_losses_on_tape(&mut tape, out, 2, &ks, &empty).unwrap().is_none());
        assert_eq!(tape.len(), before);
    }

    proptest! {
        #[test]
        fn weight_in_range(d in -1e3f64..1e3, s in 0.0f64..1e9, w_max in 1e-3f64..10.0) {
            let w = hybrid_weight(d, s, w_max).unwrap();
            prop_assert!(w > 0.0 && w <= w_max);
        }

        #[test]
        fn categorical_gram_is_psd(seed in 0u64..10_000) {
            let g = categorical_gram(&randn(9, 5, seed), &[2, 3]).unwrap();
            prop_assert!(g.iter().all(|&v| v >= 0.0));
            // v^T G v over random directions approximates the min-eigenvalue bound
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            for _ in 0..20 {
                let v = Array2::from_shape_simple_fn((5, 1), || rng.sample::<f64, _>(StandardNormal));
                let q = v.t().dot(&g).dot(&v)[[0, 0]];
                prop_assert!(q >= -1e-10);
            }
        }

        #[test]
        fn base_loss_nonnegative(seed in 0u64..10_000) {
            let g = randn(4, 4, seed);
            let m = Array2::from_shape_fn((4, 4), |(i, j)| ((i + j + seed as usize) % 2) as f64);
            prop_assert!(masked_base_loss(&g, &m).unwrap() >= 0.0);
        }
    }
}
