//! Absorbing-state branch with `alpha_t = 1 - t`. A token in column `j`
//! equal to `K_j` is MASK.

use ndarray::Array2;

use super::{check_pair, check_time, DiffusionError, Result};
use crate::autodiff::log_softmax_rows;

/// Lower clamp on `t` inside the `1/t` loss weight.
pub const MASK_T_MIN: f64 = 1e-3;

pub fn alpha_at(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0 - t)
}

/// Per-row loss weight `-alpha'_t / (1 - alpha_t)` with the clamp applied.
pub fn mask_weight(t: f64) -> f64 {
    1.0 / t.max(MASK_T_MIN)
}

fn shape_check(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Result<()> {
    if lhs == rhs {
        Ok(())
    } else {
        Err(DiffusionError::ShapeMismatch { op, lhs, rhs })
    }
}

/// Token `(b, j)` is replaced by MASK iff `u[b, j] < 1 - alpha(t[b])`.
pub fn forward_mask(x0: &Array2<usize>, t: &[f64], u: &Array2<f64>, ks: &[usize]) -> Result<Array2<usize>> {
    shape_check("forward_mask", x0.dim(), u.dim())?;
    shape_check("forward_mask times", (t.len(), ks.len()), x0.dim())?;
    let mut out = x0.clone();
    for ((b, j), tok) in out.indexed_iter_mut() {
        if u[[b, j]] < 1.0 - alpha_at(t[b])? {
            *tok = ks[j];
        }
    }
    Ok(out)
}

/// Weighted negative log-likelihood of the clean category at masked
/// positions, summed over columns and averaged over rows. `logits[j]` is
/// `B x K_j` with no MASK slot.
pub fn loss_categorical(logits: &[Array2<f64>], x0: &Array2<usize>, x_t: &Array2<usize>, t: &[f64]) -> Result<f64> {
    shape_check("loss_categorical tokens", x0.dim(), x_t.dim())?;
    shape_check("loss_categorical blocks", (x0.nrows(), logits.len()), x0.dim())?;
    if t.len() != x0.nrows() {
        return Err(DiffusionError::ShapeMismatch {
            op: "loss_categorical times",
            lhs: (t.len(), 1),
            rhs: x0.dim(),
        });
    }
    if x0.nrows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (j, block) in logits.iter().enumerate() {
        shape_check("loss_categorical logits", (block.nrows(), 0), (x0.nrows(), 0))?;
        let k = block.ncols();
        let logp = log_softmax_rows(block);
        for b in 0..x0.nrows() {
            if x_t[[b, j]] == k {
                total -= mask_weight(t[b]) * logp[[b, x0[[b, j]]]];
            }
        }
    }
    Ok(total / x0.nrows() as f64)
}

/// Probability that a masked token at `t` is revealed by time `s`.
pub fn unmask_probability(s: f64, t: f64) -> Result<f64> {
    check_pair(s, t)?;
    Ok((alpha_at(s)? - alpha_at(t)?) / (1.0 - alpha_at(t)?))
}

/// Reverse transition `t -> s`. Revealed tokens are carried; a MASK token is
/// revealed iff `reveal[b, j]` falls below the unmask probability, taking the
/// category located by inverse CDF of `probs[j]` at `pick[b, j]`.
pub fn posterior_step(
    x_t: &Array2<usize>,
    probs: &[Array2<f64>],
    ks: &[usize],
    s: f64,
    t: f64,
    reveal: &Array2<f64>,
    pick: &Array2<f64>,
) -> Result<Array2<usize>> {
    let p_reveal = unmask_probability(s, t)?;
    shape_check("posterior_step", x_t.dim(), reveal.dim())?;
    shape_check("posterior_step", x_t.dim(), pick.dim())?;
    shape_check("posterior_step blocks", (x_t.nrows(), probs.len()), (x_t.nrows(), ks.len()))?;
    let mut out = x_t.clone();
    for ((b, j), tok) in out.indexed_iter_mut() {
        if *tok != ks[j] || reveal[[b, j]] >= p_reveal {
            continue;
        }
        shape_check("posterior_step probs", (probs[j].nrows(), probs[j].ncols()), (x_t.nrows(), ks[j]))?;
        let row = probs[j].row(b);
        let target = pick[[b, j]] * row.sum();
        let mut acc = 0.0;
        let mut chosen = ks[j] - 1;
        for (k, p) in row.iter().enumerate() {
            acc += p;
            if target < acc {
                chosen = k;
                break;
            }
        }
        *tok = chosen;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniforms(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
    }

    #[test]
    fn alpha_endpoints() {
        assert_eq!(alpha_at(0.0).unwrap(), 1.0);
        assert_eq!(alpha_at(1.0).unwrap(), 0.0);
        assert_eq!(alpha_at(0.25).unwrap(), 0.75);
        assert!(alpha_at(-0.1).is_err());
    }

    #[test]
    fn forward_mask_endpoints_and_rate() {
        let x0 = Array2::from_elem((100, 2), 1usize);
        let u = uniforms(100, 2, 1);
        let ks = [3, 2];
        assert_eq!(forward_mask(&x0, &[0.0; 100], &u, &ks).unwrap(), x0);
        let all = forward_mask(&x0, &[1.0; 100], &u, &ks).unwrap();
        assert!(all.column(0).iter().all(|&v| v == 3) && all.column(1).iter().all(|&v| v == 2));

        for (k, t) in [0.1, 0.3, 0.5, 0.9].into_iter().enumerate() {
            let n = 100_000;
            let x0 = Array2::zeros((n, 1));
            let xt = forward_mask(&x0, &vec![t; n], &uniforms(n, 1, 10 + k as u64), &[2]).unwrap();
            let frac = xt.iter().filter(|&&v| v == 2).count() as f64 / n as f64;
            assert!((frac - t).abs() < 0.01, "t={t}: {frac}");
        }
    }

    #[test]
    fn loss_examples() {
        let x0 = array![[2usize]];
        let masked = array![[4usize]];
        let uniform = vec![Array2::zeros((1, 4))];
        let l = loss_categorical(&uniform, &x0, &masked, &[0.5]).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((l - 2.7726).abs() < 1e-4);
        assert_eq!(loss_categorical(&uniform, &x0, &x0, &[0.5]).unwrap(), 0.0);
        let confident = vec![array![[-1e3, -1e3, 0.0, -1e3]]];
        assert!(loss_categorical(&confident, &x0, &masked, &[0.5]).unwrap().abs() < 1e-12);
        // clamp bounds the weight at small t
        let l_small = loss_categorical(&uniform, &x0, &masked, &[0.0]).unwrap();
        assert!((l_small - 1e3 * 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn posterior_examples() {
        let probs = vec![array![[0.1, 0.2, 0.7]]];
        let ks = [3];
        let revealed = array![[2usize]];
        let out = posterior_step(&revealed, &probs, &ks, 0.0, 1.0, &array![[0.0]], &array![[0.0]]).unwrap();
        assert_eq!(out, revealed);

        let masked = array![[3usize]];
        assert_eq!(unmask_probability(0.0, 0.4).unwrap(), 1.0);
        let out = posterior_step(&masked, &probs, &ks, 0.0, 0.4, &array![[0.999]], &array![[0.35]]).unwrap();
        assert_eq!(out, array![[2usize]]);
        assert!((unmask_probability(0.6, 0.8).unwrap() - 0.25).abs() < 1e-12);
        assert!(matches!(unmask_probability(0.5, 0.5), Err(DiffusionError::BadTimes { .. })));
    }

    #[test]
    fn unmask_frequency_matches_closed_form() {
        let n = 100_000;
        let ks = [2];
        let masked = Array2::from_elem((n, 1), 2usize);
        let probs = vec![Array2::from_elem((n, 2), 0.5)];
        for (k, (s, t)) in [(0.6, 0.8), (0.0, 0.5), (0.2, 0.3), (0.5, 0.9), (0.1, 1.0)].into_iter().enumerate() {
            let out = posterior_step(&masked, &probs, &ks, s, t, &uniforms(n, 1, 100 + k as u64), &uniforms(n, 1, 200 + k as u64)).unwrap();
            let freq = out.iter().filter(|&&v| v != 2).count() as f64 / n as f64;
            let want = ((1.0 - s) - (1.0 - t)) / t;
            assert!((freq - want).abs() < 0.01, "({s},{t}): {freq} vs {want}");
        }
    }

    #[test]
    fn masking_is_absorbing_under_shared_uniforms() {
        let n = 2000;
        let x0 = Array2::from_shape_fn((n, 1), |(b, _)| b % 3);
        let u = uniforms(n, 1, 7);
        let at_s = forward_mask(&x0, &vec![0.3; n], &u, &[3]).unwrap();
        let at_t = forward_mask(&x0, &vec![0.6; n], &u, &[3]).unwrap();
        for b in 0..n {
            if at_s[[b, 0]] == 3 {
                assert_eq!(at_t[[b, 0]], 3);
            }
        }
    }

    /// Forward to `s`, then mask each surviving token with probability
    /// `(alpha_s - alpha_t) / alpha_s`; compare with the direct masking rate
    /// by a chi-square statistic on one degree of freedom.
    #[test]
    fn two_stage_forward_composes() {
        let (s, t, n) = (0.3, 0.7, 100_000);
        let x0 = Array2::zeros((n, 1));
        let stage1 = forward_mask(&x0, &vec![s; n], &uniforms(n, 1, 21), &[2]).unwrap();
        let u2 = uniforms(n, 1, 22);
        let hop = ((1.0 - s) - (1.0 - t)) / (1.0 - s);
        let masked = stage1
            .iter()
            .zip(u2.iter())
            .filter(|(&tok, &u)| tok == 2 || u < hop)
            .count() as f64;
        let expected = t * n as f64;
        let chi2 = (masked - expected).powi(2) / expected + (masked - expected).powi(2) / (n as f64 - expected);
        // 0.01 upper quantile of chi-square with one degree of freedom
        assert!(chi2 < 6.635, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn loss_nonnegative(vals in proptest::collection::vec(-4.0f64..4.0, 6), tok in 0usize..3, t in 0.0f64..1.0) {
            let logits = vec![Array2::from_shape_vec((2, 3), vals).unwrap()];
            let x0 = Array2::from_elem((2, 1), tok);
            let xt = Array2::from_elem((2, 1), 3usize);
            prop_assert!(loss_categorical(&logits, &x0, &xt, &[t, t]).unwrap() >= 0.0);
        }

        #[test]
        fn final_step_never_leaves_mask(t in 0.01f64..1.0, seed in 0u64..1000) {
            let n = 64;
            let masked = Array2::from_shape_fn((n, 2), |(b, j)| if b % 2 == 0 { [4, 2][j] } else { 1 });
            let probs = vec![Array2::from_elem((n, 4), 0.25), Array2::from_elem((n, 2), 0.5)];
            let out = posterior_step(&masked, &probs, &[4, 2], 0.0, t, &uniforms(n, 2, seed), &uniforms(n, 2, seed + 1)).unwrap();
            prop_assert!(out.indexed_iter().all(|((_, j), &v)| v < [4, 2][j]));
        }
    }
}
