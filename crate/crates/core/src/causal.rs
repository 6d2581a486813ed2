//! Causal structure learning (NOTEARS, linear and MLP variants), graph
//! thresholding with cycle repair, and expansion to an encoded-space mask.

use std::collections::VecDeque;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::linalg;
use crate::tabular::EncodingMap;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("acyclicity {h:e} still above tolerance after {outer} outer iterations")]
    DidNotConverge { h: f64, outer: usize },
    #[error("graph has {graph} nodes but the encoding has {encoding} features")]
    DimensionMismatch { graph: usize, encoding: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = DiscoveryError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotearsConfig {
    pub alpha_l1: f64,
    pub beta_l2: f64,
    pub rho_init: f64,
    pub rho_mult: f64,
    pub rho_max: f64,
    pub h_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub hidden_units: usize,
    pub seed: u64,
}

impl Default for NotearsConfig {
    fn default() -> Self {
        Self {
            alpha_l1: 0.01,
            beta_l2: 0.01,
            rho_init: 1.0,
            rho_mult: 10.0,
            rho_max: 1e16,
            h_tol: 1e-8,
            max_outer: 20,
            max_inner: 500,
            hidden_units: 10,
            seed: 0,
        }
    }
}

impl NotearsConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rho_mult > 1.0) {
            return Err(DiscoveryError::InvalidConfig("rho_mult must be > 1".into()));
        }
        if !(self.h_tol > 0.0) {
            return Err(DiscoveryError::InvalidConfig("h_tol must be > 0".into()));
        }
        if self.alpha_l1 < 0.0 || self.beta_l2 < 0.0 || !(self.rho_init > 0.0) {
            return Err(DiscoveryError::InvalidConfig("penalties must be non-negative".into()));
        }
        Ok(())
    }
}

/// Weighted adjacency; entry `(i, j)` is the strength of `i -> j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix(#[serde(with = "crate::serde_arrays::single")] pub Array2<f64>);

impl WeightMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// One augmented-Lagrangian outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub rho: f64,
    pub multiplier: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotearsFit {
    pub weights: WeightMatrix,
    pub trajectory: Vec<OuterRecord>,
}

/// `tr(exp(H)) - d`. Zero exactly when the support of `H` is acyclic.
pub fn acyclicity(h: &Array2<f64>) -> Result<f64> {
    Ok(acyclicity_with_grad(h)?.0)
}

/// Acyclicity value and its gradient `exp(H)^T`.
pub fn acyclicity_with_grad(h: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(DiscoveryError::NonFinite("acyclicity input"));
    }
    let e = linalg::expm(h);
    let value = linalg::trace(&e) - h.nrows() as f64;
    if !value.is_finite() {
        return Err(DiscoveryError::NonFinite("acyclicity"));
    }
    Ok((value, e.t().to_owned()))
}

fn center_columns(x: &Array2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty data");
    x - &mean.insert_axis(Axis(0))
}

/// Centers and scales every column to unit variance; constant columns are
/// only centered.
pub fn standardize_columns(x: &Array2<f64>) -> Array2<f64> {
    let mut out = center_columns(x);
    for mut col in out.columns_mut() {
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt();
        if sd > 1e-12 {
            col.mapv_inplace(|v| v / sd);
        }
    }
    out
}

/// Parameter blocks handled by the inner solver: which entries are pinned
/// at zero and whether the block carries the L1 penalty.
struct BlockSpec {
    l1: bool,
    fixed_zero: Option<Array2<f64>>,
}

const LBFGS_MEMORY: usize = 10;

/// Flat variable layout for the bound-constrained solver. An L1 block is
/// split as `p = pos - neg` with `pos, neg >= 0`, which turns `|p|_1` into the
/// linear term `sum(pos + neg)`; other blocks are stored as is.
struct SplitLayout<'a> {
    specs: &'a [BlockSpec],
    shapes: Vec<(usize, usize)>,
    /// Entry may not go below zero.
    bounded: Vec<bool>,
    /// Entry stays at zero.
    fixed: Vec<bool>,
}

impl<'a> SplitLayout<'a> {
    fn new(params: &[Array2<f64>], specs: &'a [BlockSpec]) -> Self {
        let mut bounded = Vec::new();
        let mut fixed = Vec::new();
        for (p, spec) in params.iter().zip(specs) {
            let copies = if spec.l1 { 2 } else { 1 };
            for _ in 0..copies {
                for (idx, _) in p.indexed_iter() {
                    bounded.push(spec.l1);
                    fixed.push(spec.fixed_zero.as_ref().is_some_and(|m| m[idx] == 0.0));
                }
            }
        }
        Self {
            specs,
            shapes: params.iter().map(|p| p.dim()).collect(),
            bounded,
            fixed,
        }
    }

    fn pack(&self, params: &[Array2<f64>]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.bounded.len());
        for (p, spec) in params.iter().zip(self.specs) {
            if spec.l1 {
                z.extend(p.iter().map(|v| v.max(0.0)));
                z.extend(p.iter().map(|v| (-v).max(0.0)));
            } else {
                z.extend(p.iter().copied());
            }
        }
        for (v, &f) in z.iter_mut().zip(&self.fixed) {
            if f {
                *v = 0.0;
            }
        }
        z
    }

    fn unpack(&self, z: &[f64]) -> Vec<Array2<f64>> {
        let mut at = 0;
        let mut out = Vec::with_capacity(self.shapes.len());
        for (&(r, c), spec) in self.shapes.iter().zip(self.specs) {
            let len = r * c;
            let block = if spec.l1 {
                Array2::from_shape_fn((r, c), |(i, j)| z[at + i * c + j] - z[at + len + i * c + j])
            } else {
                Array2::from_shape_fn((r, c), |(i, j)| z[at + i * c + j])
            };
            at += if spec.l1 { 2 * len } else { len };
            out.push(block);
        }
        out
    }

    /// Objective and gradient in split coordinates.
    fn eval<F>(&self, z: &[f64], alpha: f64, smooth: &F) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(&[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)>,
    {
        let (value, grads) = smooth(&self.unpack(z))?;
        let mut g = Vec::with_capacity(z.len());
        let mut l1 = 0.0;
        let mut at = 0;
        for (grad, spec) in grads.iter().zip(self.specs) {
            if spec.l1 {
                let len = grad.len();
                l1 += z[at..at + 2 * len].iter().sum::<f64>();
                g.extend(grad.iter().map(|v| v + alpha));
                g.extend(grad.iter().map(|v| alpha - v));
                at += 2 * len;
            } else {
                g.extend(grad.iter().copied());
                at += grad.len();
            }
        }
        for (v, &f) in g.iter_mut().zip(&self.fixed) {
            if f {
                *v = 0.0;
            }
        }
        let total = value + alpha * l1;
        if !total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(DiscoveryError::NonFinite("notears objective"));
        }
        Ok((total, g))
    }

    fn project(&self, z: &mut [f64]) {
        for ((v, &b), &f) in z.iter_mut().zip(&self.bounded).zip(&self.fixed) {
            if f || (b && *v < 0.0) {
                *v = 0.0;
            }
        }
    }

    /// Entries held at their bound: fixed, or at zero with the gradient
    /// pushing further down.
    fn active(&self, z: &[f64], g: &[f64]) -> Vec<bool> {
        (0..z.len())
            .map(|i| self.fixed[i] || (self.bounded[i] && z[i] <= 0.0 && g[i] > 0.0))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS two-loop recursion applied to `q`.
fn lbfgs_direction(q: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut r = q.to_vec();
    let mut coeffs = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &r);
        r.iter_mut().zip(y).for_each(|(v, yi)| *v -= a * yi);
        coeffs.push((rho, a));
    }
    if let Some((s, y)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (rho, a)) in memory.iter().zip(coeffs.into_iter().rev()) {
        let b = rho * dot(y, &r);
        r.iter_mut().zip(s).for_each(|(v, si)| *v += (a - b) * si);
    }
    r
}

/// Minimizes `smooth(p) + alpha * |L1 blocks|_1` with projected L-BFGS on the
/// split variables. Stops when the relative decrease falls below machine
/// precision times `1e7` or after `max_iter` accepted steps.
fn minimize_split<F>(params: Vec<Array2<f64>>, specs: &[BlockSpec], alpha: f64, max_iter: usize, smooth: F) -> Result<Vec<Array2<f64>>>
where
    F: Fn(&[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)>,
{
    let layout = SplitLayout::new(&params, specs);
    let mut z = layout.pack(&params);
    let (mut f, mut g) = layout.eval(&z, alpha, &smooth)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let ftol = 1e7 * f64::EPSILON;

    for _ in 0..max_iter {
        let active = layout.active(&z, &g);
        let pg: Vec<f64> = g.iter().zip(&active).map(|(&v, &a)| if a { 0.0 } else { v }).collect();
        let pg_max = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if pg_max <= 1e-12 {
            break;
        }
        let mut dir: Vec<f64> = lbfgs_direction(&pg, &memory).into_iter().map(|v| -v).collect();
        dir.iter_mut().zip(&active).for_each(|(v, &a)| {
            if a {
                *v = 0.0;
            }
        });
        if dot(&dir, &pg) >= 0.0 {
            memory.clear();
            dir = pg.iter().map(|v| -v).collect();
        }
        let mut t = if memory.is_empty() { (1.0 / pg_max).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            layout.project(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            match layout.eval(&trial, alpha, &smooth) {
                Ok((f_new, g_new)) if f_new <= f + 1e-4 * decrease.min(0.0) => {
                    accepted = Some((trial, step, f_new, g_new));
                    break;
                }
                // overflow in a trial point means the step is too long
                Ok(_) | Err(DiscoveryError::NonFinite(_)) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((z_new, s, f_new, g_new)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-10 * dot(&y, &y) {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y));
        }
        let converged = (f - f_new) <= ftol * f.abs().max(f_new.abs()).max(1.0);
        z = z_new;
        f = f_new;
        g = g_new;
        if converged {
            break;
        }
    }
    Ok(layout.unpack(&z))
}

/// Augmented-Lagrangian outer loop shared by both NOTEARS variants.
/// `h_of` maps parameters to the acyclicity value.
fn augmented_lagrangian<S, H>(
    cfg: &NotearsConfig,
    init: Vec<Array2<f64>>,
    specs: &[BlockSpec],
    smooth_loss: S,
    h_of: H,
) -> Result<(Vec<Array2<f64>>, Vec<OuterRecord>)>
where
    S: Fn(&[Array2<f64>], f64, f64) -> Result<(f64, Vec<Array2<f64>>)>,
    H: Fn(&[Array2<f64>]) -> Result<f64>,
{
    let mut params = init;
    let mut rho = cfg.rho_init;
    let mut multiplier = 0.0;
    let mut h = f64::INFINITY;
    let mut trajectory = Vec::new();

    for _ in 0..cfg.max_outer {
        let (candidate, h_new) = loop {
            let candidate = minimize_split(params.clone(), specs, cfg.alpha_l1, cfg.max_inner, |p| smooth_loss(p, rho, multiplier))?;
            let h_new = h_of(&candidate)?;
            if h_new > 0.25 * h && rho < cfg.rho_max {
                rho *= cfg.rho_mult;
            } else {
                break (candidate, h_new);
            }
        };
        params = candidate;
        h = h_new;
        multiplier += rho * h;
        trajectory.push(OuterRecord { rho, multiplier, h });
        log::debug!("notears outer: rho={rho:e} h={h:e}");
        if h <= cfg.h_tol || rho >= cfg.rho_max {
            break;
        }
    }
    if !(h <= cfg.h_tol) {
        return Err(DiscoveryError::DidNotConverge {
            h,
            outer: trajectory.len(),
        });
    }
    Ok((params, trajectory))
}

fn check_input(x: &Array2<f64>, cfg: &NotearsConfig) -> Result<()> {
    cfg.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DiscoveryError::NonFinite("input data"));
    }
    if x.nrows() < 2 {
        return Err(DiscoveryError::InvalidConfig("need at least 2 rows".into()));
    }
    Ok(())
}

/// Linear NOTEARS: least squares `(1/2n)||X - XW||^2 + a|W|_1 + b|W|^2`
/// subject to `tr(exp(W*W)) - d = 0`. Columns are centered internally.
pub fn notears_linear(x: &Array2<f64>, cfg: &NotearsConfig) -> Result<NotearsFit> {
    check_input(x, cfg)?;
    let d = x.ncols();
    let xc = center_columns(x);
    let n = xc.nrows() as f64;
    let cov = xc.t().dot(&xc) / n;
    let off_diag = Array2::from_shape_fn((d, d), |(i, j)| if i == j { 0.0 } else { 1.0 });
    let specs = [BlockSpec {
        l1: true,
        fixed_zero: Some(off_diag),
    }];
    let beta = cfg.beta_l2;

    let smooth = |p: &[Array2<f64>], rho: f64, mult: f64| -> Result<(f64, Vec<Array2<f64>>)> {
        let w = &p[0];
        // 0.5 tr((I-W)^T C (I-W))
        let i_minus_w = Array2::<f64>::eye(d) - w;
        let c_iw = cov.dot(&i_minus_w);
        let loss = 0.5 * (&i_minus_w * &c_iw).sum();
        let (h, grad_h) = acyclicity_with_grad(&w.mapv(|v| v * v))?;
        let value = loss + beta * (w * w).sum() + 0.5 * rho * h * h + mult * h;
        let grad = -&c_iw + &(w * (2.0 * beta)) + &(&grad_h * w * (2.0 * (rho * h + mult)));
        Ok((value, vec![grad]))
    };
    let h_of = |p: &[Array2<f64>]| acyclicity(&p[0].mapv(|v| v * v));
    let (params, trajectory) = augmented_lagrangian(cfg, vec![Array2::zeros((d, d))], &specs, smooth, h_of)?;
    let mut w = params.into_iter().next().expect("one block");
    w.diag_mut().fill(0.0);
    Ok(NotearsFit {
        weights: WeightMatrix(w),
        trajectory,
    })
}

/// Objective pieces of the linear problem, exposed for gradient checks.
pub fn linear_objective(x: &Array2<f64>, w: &Array2<f64>, cfg: &NotearsConfig, rho: f64, mult: f64) -> Result<(f64, Array2<f64>)> {
    let d = x.ncols();
    let n = x.nrows() as f64;
    let resid = x - &x.dot(w);
    let loss = 0.5 / n * resid.mapv(|v| v * v).sum();
    let (h, grad_h) = acyclicity_with_grad(&w.mapv(|v| v * v))?;
    let value = loss + cfg.beta_l2 * (w * w).sum() + 0.5 * rho * h * h + mult * h;
    let grad = -(x.t().dot(&resid)) / n + &(w * (2.0 * cfg.beta_l2)) + &(&grad_h * w * (2.0 * (rho * h + mult)));
    debug_assert_eq!(grad.dim(), (d, d));
    Ok((value, grad))
}

/// Per-variable MLPs `f_k : R^d -> R` with one sigmoid hidden layer of
/// `hidden_units`. First-layer weights are laid out as a `d x (d*m)` matrix
/// whose column block `k` feeds `f_k`; input `k` into `f_k` is pinned at zero.
struct MlpLayout {
    d: usize,
    m: usize,
}

impl MlpLayout {
    fn first_mask(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.d, self.d * self.m), |(j, c)| if c / self.m == j { 0.0 } else { 1.0 })
    }

    fn second_mask(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.d * self.m, self.d), |(c, k)| if c / self.m == k { 1.0 } else { 0.0 })
    }

    /// `(d*m) x d` matrix summing squared first-layer weights per target.
    fn aggregate(&self) -> Array2<f64> {
        self.second_mask()
    }

    fn h_matrix(&self, w1: &Array2<f64>) -> Array2<f64> {
        w1.mapv(|v| v * v).dot(&self.aggregate())
    }
}

/// Nonlinear NOTEARS with per-variable one-hidden-layer MLPs. The adjacency
/// is `A_jk = sqrt(sum_m W1[j, (k, m)]^2)`.
pub fn notears_nonlinear(x: &Array2<f64>, cfg: &NotearsConfig) -> Result<NotearsFit> {
    check_input(x, cfg)?;
    if cfg.hidden_units == 0 {
        return Err(DiscoveryError::InvalidConfig("hidden_units must be >= 1".into()));
    }
    let d = x.ncols();
    if d == 1 {
        if cfg.max_outer == 0 {
            return Err(DiscoveryError::DidNotConverge {
                h: f64::INFINITY,
                outer: 0,
            });
        }
        return Ok(NotearsFit {
            weights: WeightMatrix(Array2::zeros((1, 1))),
            trajectory: vec![OuterRecord {
                rho: cfg.rho_init,
                multiplier: 0.0,
                h: 0.0,
            }],
        });
    }
    let layout = MlpLayout { d, m: cfg.hidden_units };
    let xc = center_columns(x);
    let n = xc.nrows() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut randn = |r: usize, c: usize, scale: f64| {
        Array2::from_shape_fn((r, c), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
    };
    let first_mask = layout.first_mask();
    let second_mask = layout.second_mask();
    let init = vec![
        randn(d, d * layout.m, 0.1) * &first_mask,
        Array2::zeros((1, d * layout.m)),
        randn(d * layout.m, d, (1.0 / layout.m as f64).sqrt()) * &second_mask,
        Array2::zeros((1, d)),
    ];
    let specs = [
        BlockSpec {
            l1: true,
            fixed_zero: Some(first_mask.clone()),
        },
        BlockSpec {
            l1: false,
            fixed_zero: None,
        },
        BlockSpec {
            l1: false,
            fixed_zero: Some(second_mask.clone()),
        },
        BlockSpec {
            l1: false,
            fixed_zero: None,
        },
    ];
    let aggregate = layout.aggregate();
    let beta = cfg.beta_l2;

    let smooth = |p: &[Array2<f64>], rho: f64, mult: f64| -> Result<(f64, Vec<Array2<f64>>)> {
        let mut tape = Tape::new();
        let xt = tape.leaf(xc.clone());
        let leaves: Vec<_> = p.iter().map(|a| tape.leaf(a.clone())).collect();
        let z1 = tape.matmul(xt, leaves[0])?;
        let z1 = tape.add(z1, leaves[1])?;
        let hidden = tape.sigmoid(z1);
        let w2 = tape.mul_const(leaves[2], second_mask.clone())?;
        let out = tape.matmul(hidden, w2)?;
        let out = tape.add(out, leaves[3])?;
        let resid = tape.sub(xt, out)?;
        let sq = tape.square(resid);
        let sse = tape.sum(sq);
        let loss = tape.scale(sse, 0.5 / n);

        let w1_sq = tape.square(leaves[0]);
        let w2_sq = tape.square(leaves[2]);
        let l2a = tape.sum(w1_sq);
        let l2b = tape.sum(w2_sq);
        let l2 = tape.add(l2a, l2b)?;
        let l2 = tape.scale(l2, beta);

        let agg = tape.leaf(aggregate.clone());
        let h_mat = tape.matmul(w1_sq, agg)?;
        let h = tape.acyclicity(h_mat)?;
        let h_val = tape.scalar_value(h);
        let h_sq = tape.square(h);
        let pen = tape.scale(h_sq, 0.5 * rho);
        let lin = tape.scale(h, mult);

        let total = tape.add(loss, l2)?;
        let total = tape.add(total, pen)?;
        let total = tape.add(total, lin)?;
        let value = tape.scalar_value(total);
        if !value.is_finite() || !h_val.is_finite() {
            return Err(DiscoveryError::NonFinite("nonlinear notears objective"));
        }
        let grads = tape.backward(total)?;
        Ok((value, leaves.iter().map(|l| grads.get(*l)).collect()))
    };
    let h_of = |p: &[Array2<f64>]| acyclicity(&layout.h_matrix(&p[0]));
    let (params, trajectory) = augmented_lagrangian(cfg, init, &specs, smooth, h_of)?;
    let mut a = layout.h_matrix(&params[0]).mapv(f64::sqrt);
    a.diag_mut().fill(0.0);
    Ok(NotearsFit {
        weights: WeightMatrix(a),
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Binary DAG obtained by thresholding `|A|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    /// `adjacency[i][j]` is true for an edge `i -> j`.
    pub adjacency: Vec<Vec<bool>>,
    /// Threshold used to build the graph; `None` when given directly.
    pub tau: Option<f64>,
    /// Edges that passed the threshold but were dropped to break cycles.
    pub removed: Vec<Edge>,
    /// Kept edges with their weights.
    pub edges: Vec<Edge>,
}

impl CausalGraph {
    pub fn empty(d: usize) -> Self {
        Self {
            adjacency: vec![vec![false; d]; d],
            tau: None,
            removed: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(d);
        for &(from, to) in edges {
            g.adjacency[from][to] = true;
            g.edges.push(Edge { from, to, weight: 1.0 });
        }
        g
    }

    pub fn dim(&self) -> usize {
        self.adjacency.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from][to]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().flatten().filter(|&&e| e).count()
    }

    pub fn is_acyclic(&self) -> bool {
        !has_cycle(&self.adjacency)
    }
}

/// Whether `target` is reachable from `start` along edges of `adj`.
fn reachable(adj: &[Vec<bool>], start: usize, target: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        if v == target {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        stack.extend((0..adj.len()).filter(|&u| adj[v][u] && !seen[u]));
    }
    false
}

/// Depth-first cycle detection.
pub fn has_cycle(adj: &[Vec<bool>]) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(v: usize, adj: &[Vec<bool>], marks: &mut [Mark]) -> bool {
        marks[v] = Mark::Active;
        for u in 0..adj.len() {
            if adj[v][u] {
                let found = match marks[u] {
                    Mark::Active => true,
                    Mark::New => visit(u, adj, marks),
                    Mark::Done => false,
                };
                if found {
                    return true;
                }
            }
        }
        marks[v] = Mark::Done;
        false
    }
    let mut marks = vec![Mark::New; adj.len()];
    (0..adj.len()).any(|v| marks[v] == Mark::New && visit(v, adj, &mut marks))
}

/// Keeps `i -> j` when `|A_ij| > tau`. Cycles are repaired greedily: edges are
/// admitted strongest first and an edge that would close a cycle (and is
/// therefore the weakest on it) is dropped and recorded.
pub fn threshold_graph(a: &WeightMatrix, tau: f64) -> CausalGraph {
    let d = a.dim();
    let mut candidates: Vec<Edge> = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let w = a.0[[i, j]];
            if i != j && w.abs() > tau {
                candidates.push(Edge { from: i, to: j, weight: w });
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.weight
            .abs()
            .total_cmp(&x.weight.abs())
            .then(x.from.cmp(&y.from))
            .then(x.to.cmp(&y.to))
    });
    let mut graph = CausalGraph {
        tau: Some(tau),
        ..CausalGraph::empty(d)
    };
    for e in candidates {
        if reachable(&graph.adjacency, e.to, e.from) {
            graph.removed.push(e);
        } else {
            graph.adjacency[e.from][e.to] = true;
            graph.edges.push(e);
        }
    }
    graph
}

/// Symmetric 0/1 mask over encoded dimensions marking the pairs whose noise
/// correlation is penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalMask {
    #[serde(with = "crate::serde_arrays::single")]
    pub m: Array2<f64>,
    pub nnz: usize,
}

impl CausalMask {
    pub fn empty(width: usize) -> Self {
        Self {
            m: Array2::zeros((width, width)),
            nnz: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.m.nrows()
    }

    /// Coordinate list of the non-zero entries, row-major.
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        self.m
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((i, j), _)| (i, j))
            .collect()
    }
}

/// Penalizes every pair of dimensions from distinct features that have no
/// causal link in either direction.
pub fn expand_mask(graph: &CausalGraph, map: &EncodingMap) -> Result<CausalMask> {
    let d = graph.dim();
    if d != map.n_features() {
        return Err(DiscoveryError::DimensionMismatch {
            graph: d,
            encoding: map.n_features(),
        });
    }
    let w = map.width;
    let mut m = Array2::zeros((w, w));
    let mut nnz = 0;
    for i in 0..w {
        for j in 0..w {
            let (fi, fj) = (map.feature_of_dim[i], map.feature_of_dim[j]);
            if fi != fj && !graph.has_edge(fi, fj) && !graph.has_edge(fj, fi) {
                m[[i, j]] = 1.0;
                nnz += 1;
            }
        }
    }
    Ok(CausalMask { m, nnz })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotearsMode {
    Linear,
    Nonlinear,
    Off,
}

impl std::str::FromStr for NotearsMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "nonlinear" => Ok(Self::Nonlinear),
            "off" => Ok(Self::Off),
            other => Err(format!("unknown notears mode `{other}` (expected linear, nonlinear or off)")),
        }
    }
}

/// Discovery over a table's feature space: numerical columns raw,
/// categorical columns as integer codes, all standardized.
pub fn discover(
    table: &crate::tabular::DataTable,
    mode: NotearsMode,
    cfg: &NotearsConfig,
    tau: f64,
) -> Result<(CausalGraph, Option<NotearsFit>)> {
    let d = table.n_cols();
    let x = standardize_columns(&table.feature_matrix());
    let fit = match mode {
        NotearsMode::Off => return Ok((CausalGraph::empty(d), None)),
        NotearsMode::Linear => notears_linear(&x, cfg)?,
        NotearsMode::Nonlinear => notears_nonlinear(&x, cfg)?,
    };
    Ok((threshold_graph(&fit.weights, tau), Some(fit)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::tabular::{fit_encoder, ColumnData, ColumnSpec, DataTable, TableSchema};
    use ndarray::array;
    use proptest::prelude::*;

    /// Truncated power series sum_{k<=20} tr(H^k)/k! - d.
    fn power_series_h(h: &Array2<f64>) -> f64 {
        let d = h.nrows();
        let mut term = Array2::<f64>::eye(d);
        let mut total = 0.0;
        for k in 1..=20 {
            term = term.dot(h) / k as f64;
            total += linalg::trace(&term);
        }
        total
    }

    #[test]
    fn acyclicity_examples() {
        assert_eq!(acyclicity(&Array2::zeros((3, 3))).unwrap(), 0.0);
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        let oracle = power_series_h(&swap);
        assert!((oracle - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-12);
        assert!((acyclicity(&swap).unwrap() - oracle).abs() < 1e-12);
        assert!((acyclicity(&swap).unwrap() - 1.0862).abs() < 1e-4);
        let upper = array![[0.0, 0.7, 2.0], [0.0, 0.0, 1.5], [0.0, 0.0, 0.0]];
        assert!(acyclicity(&upper).unwrap().abs() < 1e-9);
        assert!(matches!(acyclicity(&array![[f64::NAN]]), Err(DiscoveryError::NonFinite(_))));
    }

    #[test]
    fn acyclicity_gradient_matches_finite_differences() {
        let h0 = array![[0.0, 0.4, 0.1], [0.3, 0.0, 0.9], [0.2, 0.5, 0.0]];
        let (_, g) = acyclicity_with_grad(&h0).unwrap();
        let f = |p: &[Array2<f64>]| acyclicity(&p[0]).unwrap();
        assert!(grad_check(f, &[h0], &[g], 1e-5) < 1e-7);
    }

    #[test]
    fn linear_objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in 2..=4 {
            let x = Array2::from_shape_fn((30, d), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let w = Array2::from_shape_fn((d, d), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z
            });
            let cfg = NotearsConfig::default();
            let (_, g) = linear_objective(&x, &w, &cfg, 3.0, 0.7).unwrap();
            let f = |p: &[Array2<f64>]| linear_objective(&x, &p[0], &cfg, 3.0, 0.7).unwrap().0;
            let err = grad_check(f, &[w], &[g], 1e-6);
            assert!(err < 1e-5, "d={d}: {err}");
        }
    }

    fn chain_data(n: usize, d: usize, weight: f64, noise: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                let parent = if j == 0 { 0.0 } else { weight * x[[i, j - 1]] };
                x[[i, j]] = parent + noise * e;
            }
        }
        x
    }

    fn small_l1() -> NotearsConfig {
        NotearsConfig {
            alpha_l1: 0.001,
            beta_l2: 0.0,
            ..NotearsConfig::default()
        }
    }

    #[test]
    fn linear_recovers_three_chain() {
        let x = chain_data(1000, 3, 2.0, 0.1, 1);
        let fit = notears_linear(&x, &small_l1()).unwrap();
        let a = &fit.weights.0;
        assert!(a[[0, 1]].abs() > 0.3 && a[[1, 2]].abs() > 0.3, "{a:?}");
        for i in 0..3 {
            for j in 0..3 {
                if !((i, j) == (0, 1) || (i, j) == (1, 2)) {
                    assert!(a[[i, j]].abs() < 0.3, "spurious ({i},{j}) in {a:?}");
                }
            }
        }
        assert!(fit.trajectory.last().unwrap().h <= 1e-8);
    }

    #[test]
    fn linear_independent_columns_give_empty_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((2000, 3), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let fit = notears_linear(&x, &NotearsConfig::default()).unwrap();
        assert!(fit.weights.0.iter().all(|v| v.abs() < 0.3));
    }

    #[test]
    fn zero_outer_iterations_do_not_converge() {
        let x = chain_data(50, 2, 1.0, 1.0, 3);
        let cfg = NotearsConfig {
            max_outer: 0,
            ..NotearsConfig::default()
        };
        assert!(matches!(notears_linear(&x, &cfg), Err(DiscoveryError::DidNotConverge { .. })));
        assert!(matches!(notears_nonlinear(&x, &cfg), Err(DiscoveryError::DidNotConverge { .. })));
        let bad = NotearsConfig {
            rho_mult: 1.0,
            ..NotearsConfig::default()
        };
        assert!(matches!(notears_linear(&x, &bad), Err(DiscoveryError::InvalidConfig(_))));
    }

    #[test]
    fn nonlinear_single_variable() {
        let x = array![[1.0], [2.0], [0.5]];
        let fit = notears_nonlinear(&x, &NotearsConfig::default()).unwrap();
        assert_eq!(fit.weights.0, array![[0.0]]);
    }

    #[test]
    fn threshold_examples() {
        let a = WeightMatrix(array![[0.0, 0.5], [0.1, 0.0]]);
        let g = threshold_graph(&a, 0.3);
        assert_eq!(g.adjacency, vec![vec![false, true], vec![false, false]]);
        let g = threshold_graph(&WeightMatrix(Array2::zeros((3, 3))), 0.3);
        assert_eq!(g.edge_count(), 0);
    }

    /// Brute force over all subsets of thresholded edges: best acyclic total weight.
    fn best_acyclic_weight(a: &Array2<f64>, tau: f64) -> f64 {
        let d = a.nrows();
        let edges: Vec<(usize, usize)> = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && a[[i, j]].abs() > tau)
            .collect();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << edges.len()) {
            let mut adj = vec![vec![false; d]; d];
            let mut total = 0.0;
            for (k, &(i, j)) in edges.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    adj[i][j] = true;
                    total += a[[i, j]].abs();
                }
            }
            if !has_cycle(&adj) {
                best = best.max(total);
            }
        }
        best
    }

    #[test]
    fn two_cycle_is_repaired_by_dropping_weaker_edge() {
        let a = array![[0.0, 0.4], [0.35, 0.0]];
        let g = threshold_graph(&WeightMatrix(a.clone()), 0.3);
        assert_eq!(g.adjacency, vec![vec![false, true], vec![false, false]]);
        assert_eq!(g.removed.len(), 1);
        assert_eq!((g.removed[0].from, g.removed[0].to), (1, 0));
        let kept: f64 = g.edges.iter().map(|e| e.weight.abs()).sum();
        assert_eq!(kept, best_acyclic_weight(&a, 0.3));
    }

    #[test]
    fn mask_examples() {
        let schema = TableSchema::new(vec![ColumnSpec::numerical("a"), ColumnSpec::numerical("b")]).unwrap();
        let t = DataTable::new(
            schema,
            vec![ColumnData::Numerical(vec![0.0, 1.0]), ColumnData::Numerical(vec![1.0, 0.0])],
        )
        .unwrap();
        let map = fit_encoder(&t).unwrap();
        let m = expand_mask(&CausalGraph::empty(2), &map).unwrap();
        assert_eq!(m.m, array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(m.nnz, 2);
        let m = expand_mask(&CausalGraph::from_edges(2, &[(1, 0)]), &map).unwrap();
        assert_eq!(m.nnz, 0);
        assert!(matches!(
            expand_mask(&CausalGraph::empty(3), &map),
            Err(DiscoveryError::DimensionMismatch { .. })
        ));

        let schema = TableSchema::new(vec![ColumnSpec::numerical("a"), ColumnSpec::categorical("c", &["p", "q"])]).unwrap();
        let t = DataTable::new(
            schema,
            vec![ColumnData::Numerical(vec![0.0, 1.0]), ColumnData::Categorical(vec![1, 0])],
        )
        .unwrap();
        let map = fit_encoder(&t).unwrap();
        let m = expand_mask(&CausalGraph::from_edges(2, &[(0, 1)]), &map).unwrap();
        // hand enumeration: every entry is either same-feature or causally linked
        assert_eq!(m.m, Array2::<f64>::zeros((3, 3)));
        let m = expand_mask(&CausalGraph::empty(2), &map).unwrap();
        assert_eq!(m.m, array![[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    fn digraph_from_bits(d: usize, bits: u32) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; d]; d];
        let mut k = 0;
        for (i, row) in adj.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i != j {
                    *cell = bits & (1 << k) != 0;
                    k += 1;
                }
            }
        }
        adj
    }

    #[test]
    fn acyclicity_agrees_with_dfs_on_all_three_node_digraphs() {
        for bits in 0u32..64 {
            let adj = digraph_from_bits(3, bits);
            let h = Array2::from_shape_fn((3, 3), |(i, j)| if adj[i][j] { 0.8 } else { 0.0 });
            let value = acyclicity(&h).unwrap();
            assert_eq!(value.abs() < 1e-8, !has_cycle(&adj), "bits={bits}");
        }
    }

    fn arb_weights(d: usize) -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], d * d).prop_map(move |v| {
            let mut a = Array2::from_shape_vec((d, d), v).unwrap();
            a.diag_mut().fill(0.0);
            a
        })
    }

    proptest! {
        #[test]
        fn thresholded_graph_is_acyclic_and_maximal(a in arb_weights(5), tau in 0.05f64..0.6) {
            let g = threshold_graph(&WeightMatrix(a), tau);
            prop_assert!(g.is_acyclic());
            for e in &g.removed {
                let mut adj = g.adjacency.clone();
                adj[e.from][e.to] = true;
                prop_assert!(has_cycle(&adj));
            }
        }

        #[test]
        fn raising_tau_never_adds_edges(a in arb_weights(5), lo in 0.0f64..0.5, delta in 0.0f64..0.5) {
            let wm = WeightMatrix(a);
            let g_lo = threshold_graph(&wm, lo);
            let g_hi = threshold_graph(&wm, lo + delta);
            for i in 0..5 {
                for j in 0..5 {
                    prop_assert!(!g_hi.adjacency[i][j] || g_lo.adjacency[i][j]);
                }
            }
        }

        #[test]
        fn mask_is_symmetric_with_zero_blocks(bits in 0u32..(1 << 12), ks in proptest::collection::vec(1usize..4, 4)) {
            let adj = digraph_from_bits(4, bits);
            let graph = CausalGraph { adjacency: adj, ..CausalGraph::empty(4) };
            let cols: Vec<ColumnSpec> = ks.iter().enumerate().map(|(i, &k)| {
                if k == 1 { ColumnSpec::numerical(&format!("f{i}")) } else {
                    let cats: Vec<String> = (0..k).map(|c| format!("v{c}")).collect();
                    let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
                    ColumnSpec::categorical(&format!("f{i}"), &refs)
                }
            }).collect();
            let data = cols.iter().map(|c| if c.is_numerical() {
                ColumnData::Numerical(vec![0.0, 1.0])
            } else {
                ColumnData::Categorical(vec![0, 1])
            }).collect();
            let t = DataTable::new(TableSchema::new(cols).unwrap(), data).unwrap();
            let map = fit_encoder(&t).unwrap();
            let mask = expand_mask(&graph, &map).unwrap();
            prop_assert_eq!(&mask.m, &mask.m.t().to_owned());
            for i in 0..map.width {
                for j in 0..map.width {
                    if map.feature_of_dim[i] == map.feature_of_dim[j] {
                        prop_assert_eq!(mask.m[[i, j]], 0.0);
                    }
                }
            }
            prop_assert_eq!(mask.nnz, mask.m.iter().filter(|&&v| v != 0.0).count());
        }
    }
}
