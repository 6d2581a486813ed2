//! Small dense helpers shared by the causal and autodiff modules.

use ndarray::Array2;

fn norm_1(a: &Array2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a Taylor core.
///
/// The argument is scaled so its 1-norm is at most 1/2, where a degree-18
/// Taylor polynomial is accurate to well below f64 epsilon, then squared back.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    assert_eq!(a.nrows(), a.ncols(), "expm needs a square matrix");
    let d = a.nrows();
    let norm = norm_1(a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);

    let mut result = Array2::<f64>::eye(d);
    let mut term = Array2::<f64>::eye(d);
    for k in 1..=18 {
        term = term.dot(&scaled) / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

pub fn trace(a: &Array2<f64>) -> f64 {
    a.diag().sum()
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky
/// factorization. Returns `None` when a pivot is not positive.
pub fn solve_spd(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(a.dim(), (n, n));
    assert_eq!(b.len(), n);
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[[i, k]] * y[k]).sum();
        y[i] = (b[i] - s) / l[[i, i]];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[[k, i]] * x[k]).sum();
        x[i] = (y[i] - s) / l[[i, i]];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(expm(&Array2::zeros((3, 3))), Array2::<f64>::eye(3));
    }

    #[test]
    fn exp_of_diagonal() {
        let a = array![[1.0, 0.0], [0.0, -2.0]];
        let e = expm(&a);
        assert!((e[[0, 0]] - 1f64.exp()).abs() < 1e-14);
        assert!((e[[1, 1]] - (-2f64).exp()).abs() < 1e-15);
        assert_eq!(e[[0, 1]], 0.0);
    }

    #[test]
    fn exp_of_swap_matches_cosh_sinh() {
        let a = array![[0.0, 3.0], [3.0, 0.0]];
        let e = expm(&a);
        let (c, s) = (3f64.cosh(), 3f64.sinh());
        for (got, want) in e.iter().zip([c, s, s, c]) {
            assert!((got - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn cholesky_solve_round_trips() {
        let m = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let x = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| m[[i, j]] * x[j]).sum()).collect();
        let got = solve_spd(&m, &b).unwrap();
        for (g, w) in got.iter().zip(x) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!(solve_spd(&array![[1.0, 2.0], [2.0, 1.0]], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn exp_of_nilpotent_is_polynomial() {
        let a = array![[0.0, 2.0, 1.0], [0.0, 0.0, 3.0], [0.0, 0.0, 0.0]];
        let want = Array2::<f64>::eye(3) + &a + a.dot(&a) / 2.0;
        let e = expm(&a);
        for (g, w) in e.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-13);
        }
    }
}
