//! Fidelity, detectability, privacy and utility metrics for a synthetic table
//! measured against real data, plus rule-violation counting.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AdamState;
use crate::linalg::solve_spd;
use crate::tabular::{ColumnData, ColumnKind, DataTable, TableError, TableSchema, Task};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schemas differ: {0}")]
    SchemaMismatch(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("schema has no target column and task")]
    NoTarget,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown category `{category}` in column `{column}`")]
    UnknownCategory { column: String, category: String },
    #[error("rule columns must be categorical: `{0}`")]
    NotCategorical(String),
    #[error("invalid metric setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn check_layout(a: &DataTable, b: &DataTable) -> Result<()> {
    if a.schema.same_layout(&b.schema) {
        Ok(())
    } else {
        Err(EvalError::SchemaMismatch("column names, kinds or categories differ".into()))
    }
}

// ---------------------------------------------------------------- shape

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

fn frequencies(codes: &[usize], k: usize) -> Vec<f64> {
    let mut f = vec![0.0; k];
    for &c in codes {
        f[c] += 1.0;
    }
    let n = codes.len().max(1) as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

/// Half the L1 distance between two category frequency vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Per-column marginal distance: KS for numerical, TV for categorical.
pub fn column_shape_distances(real: &DataTable, synth: &DataTable) -> Result<Vec<f64>> {
    check_layout(real, synth)?;
    Ok(real
        .schema
        .columns
        .iter()
        .enumerate()
        .map(|(j, spec)| match (real.column(j), synth.column(j)) {
            (ColumnData::Numerical(a), ColumnData::Numerical(b)) => ks_statistic(a, b),
            (ColumnData::Categorical(a), ColumnData::Categorical(b)) => {
                let k = spec.categories.len();
                total_variation(&frequencies(a, k), &frequencies(b, k))
            }
            _ => unreachable!("layouts match"),
        })
        .collect())
}

/// `100 x` mean per-column marginal distance.
pub fn shape_error(real: &DataTable, synth: &DataTable) -> Result<f64> {
    let d = column_shape_distances(real, synth)?;
    Ok(100.0 * d.iter().sum::<f64>() / d.len() as f64)
}

// ---------------------------------------------------------------- trend

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Cramer's V from the contingency table of two code columns, counting only
/// categories that occur.
pub fn cramers_v(a: &[usize], ka: usize, b: &[usize], kb: usize) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let mut table = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                chi2 += (table[i][j] - e).powi(2) / e;
            }
        }
    }
    let r = rows.iter().filter(|&&v| v > 0.0).count();
    let c = cols.iter().filter(|&&v| v > 0.0).count();
    let dof = r.min(c).saturating_sub(1);
    if dof == 0 {
        0.0
    } else {
        (chi2 / (n * dof as f64)).sqrt().min(1.0)
    }
}

/// Correlation ratio `sqrt(SS_between / SS_total)` of a numerical column
/// grouped by a categorical one.
pub fn correlation_ratio(x: &[f64], codes: &[usize], k: usize) -> f64 {
    let m = mean(x);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0.0; k];
    for (&v, &c) in x.iter().zip(codes) {
        sums[c] += v;
        counts[c] += 1.0;
    }
    let between: f64 = (0..k)
        .filter(|&c| counts[c] > 0.0)
        .map(|c| counts[c] * (sums[c] / counts[c] - m).powi(2))
        .sum();
    let total: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if total <= 0.0 {
        0.0
    } else {
        (between / total).sqrt().min(1.0)
    }
}

/// Association of a column pair and the width of its value range.
fn association(table: &DataTable, i: usize, j: usize) -> (f64, f64) {
    let ki = table.schema.columns[i].categories.len();
    let kj = table.schema.columns[j].categories.len();
    match (table.column(i), table.column(j)) {
        (ColumnData::Numerical(x), ColumnData::Numerical(y)) => (pearson(x, y), 2.0),
        (ColumnData::Categorical(a), ColumnData::Categorical(b)) => (cramers_v(a, ki, b, kj), 1.0),
        (ColumnData::Numerical(x), ColumnData::Categorical(c)) => (correlation_ratio(x, c, kj), 1.0),
        (ColumnData::Categorical(c), ColumnData::Numerical(x)) => (correlation_ratio(x, c, ki), 1.0),
    }
}

/// `100 x` mean over unordered column pairs of the range-normalized
/// association difference.
pub fn trend_error(real: &DataTable, synth: &DataTable) -> Result<f64> {
    check_layout(real, synth)?;
    let d = real.n_cols();
    if d < 2 {
        return Err(EvalError::InvalidConfig("trend needs at least two columns".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..d {
        for j in i + 1..d {
            let (a, range) = association(real, i, j);
            let (b, _) = association(synth, i, j);
            total += (a - b).abs() / range;
            pairs += 1;
        }
    }
    Ok(100.0 * total / pairs as f64)
}

// ---------------------------------------------------------------- features

/// Encoded feature space for distance- and classifier-based metrics:
/// numerical columns z-scored with a reference table's statistics (unit scale
/// for constant columns), categorical columns one-hot.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    schema: TableSchema,
    stats: Vec<(f64, f64)>,
    exclude: Option<usize>,
}

impl FeatureSpace {
    pub fn fit(reference: &DataTable) -> Self {
        Self::fit_excluding(reference, None)
    }

    pub fn fit_excluding(reference: &DataTable, exclude: Option<usize>) -> Self {
        let stats = reference
            .columns()
            .iter()
            .map(|c| match c {
                ColumnData::Numerical(v) => {
                    let m = mean(v);
                    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt();
                    (m, if sd > 1e-12 { sd } else { 1.0 })
                }
                ColumnData::Categorical(_) => (0.0, 1.0),
            })
            .collect();
        Self {
            schema: reference.schema.clone(),
            stats,
            exclude,
        }
    }

    pub fn width(&self) -> usize {
        self.schema
            .columns
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != self.exclude)
            .map(|(_, c)| if c.kind == ColumnKind::Numerical { 1 } else { c.categories.len() })
            .sum()
    }

    pub fn transform(&self, table: &DataTable) -> Result<Array2<f64>> {
        if !self.schema.same_layout(&table.schema) {
            return Err(EvalError::SchemaMismatch("table does not match the feature space".into()));
        }
        let mut out = Array2::zeros((table.n_rows(), self.width()));
        let mut offset = 0;
        for (j, col) in table.columns().iter().enumerate() {
            if Some(j) == self.exclude {
                continue;
            }
            match col {
                ColumnData::Numerical(v) => {
                    let (m, sd) = self.stats[j];
                    for (i, x) in v.iter().enumerate() {
                        out[[i, offset]] = (x - m) / sd;
                    }
                    offset += 1;
                }
                ColumnData::Categorical(v) => {
                    for (i, &c) in v.iter().enumerate() {
                        out[[i, offset + c]] = 1.0;
                    }
                    offset += self.schema.columns[j].categories.len();
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- classifiers

/// L2-regularized logistic regression fitted by full-batch Adam.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn fit(x: &Array2<f64>, y: &[f64], iters: usize, lr: f64, l2: f64) -> Self {
        let (n, d) = x.dim();
        let mut params = vec![Array2::zeros((d, 1)), Array2::zeros((1, 1))];
        let mut adam = AdamState::new(&params, lr);
        let y = Array1::from(y.to_vec());
        for _ in 0..iters {
            let z = x.dot(&params[0].column(0)) + params[1][[0, 0]];
            let resid = z.mapv(sigmoid) - &y;
            let gw = x.t().dot(&resid) / n as f64 + &(params[0].column(0).to_owned() * l2);
            let gb = resid.sum() / n as f64;
            let grads = vec![gw.insert_axis(Axis(1)), Array2::from_elem((1, 1), gb)];
            adam.step(&mut params, &grads).expect("shapes fixed at construction");
        }
        Self {
            weights: params[0].column(0).to_owned(),
            bias: params[1][[0, 0]],
        }
    }

    pub fn decision(&self, x: &Array2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.bias
    }
}

/// ROC AUC by the rank-sum statistic with average ranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos_rank: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (pos_rank - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}

const LOGISTIC_ITERS: usize = 300;
const LOGISTIC_LR: f64 = 0.05;
const LOGISTIC_L2: f64 = 1e-4;

/// `2 (1 - max(AUC, 0.5))`: 1 when indistinguishable, 0 when separable.
pub fn detection_score(auc: f64) -> f64 {
    2.0 * (1.0 - auc.max(0.5))
}

/// Classifier two-sample test: k-fold logistic regression on balanced
/// real-vs-synthetic rows, reported as a detection score.
pub fn c2st_score(real: &DataTable, synth: &DataTable, folds: usize, seed: u64) -> Result<f64> {
    check_layout(real, synth)?;
    for t in [real, synth] {
        if t.n_rows() < 50 {
            return Err(EvalError::TooFewRows { needed: 50, got: t.n_rows() });
        }
    }
    if folds < 2 {
        return Err(EvalError::InvalidConfig("c2st needs at least two folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = real.n_rows().min(synth.n_rows());
    let pick = |t: &DataTable, rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..t.n_rows()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.sort_unstable();
        t.select_rows(&idx)
    };
    let real_s = pick(real, &mut rng);
    let synth_s = pick(synth, &mut rng);
    let space = FeatureSpace::fit(&real_s);
    let xr = space.transform(&real_s)?;
    let xs = space.transform(&synth_s)?;
    let x = ndarray::concatenate(Axis(0), &[xr.view(), xs.view()]).expect("same width");
    let labels: Vec<bool> = (0..2 * n).map(|i| i >= n).collect();

    let mut order: Vec<usize> = (0..2 * n).collect();
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut f = vec![0; 2 * n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % folds;
        }
        f
    };
    let aucs: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..2 * n).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..2 * n).filter(|&i| fold_of[i] == k).collect();
            let y: Vec<f64> = train.iter().map(|&i| if labels[i] { 1.0 } else { 0.0 }).collect();
            let model = LogisticModel::fit(&x.select(Axis(0), &train), &y, LOGISTIC_ITERS, LOGISTIC_LR, LOGISTIC_L2);
            let scores = model.decision(&x.select(Axis(0), &test));
            let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
            roc_auc(scores.as_slice().expect("contiguous"), &test_labels)
        })
        .collect();
    Ok(detection_score(mean(&aucs)))
}

// ---------------------------------------------------------------- privacy

fn l1(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn min_l1(row: ndarray::ArrayView1<f64>, set: &Array2<f64>) -> f64 {
    set.rows().into_iter().map(|r| l1(row, r)).fold(f64::INFINITY, f64::min)
}

/// Percentage of synthetic rows closer (L1, encoded space) to the training
/// set than to the holdout set; ties count one half. The larger of train and
/// holdout is subsampled to the smaller size.
pub fn dcr_score(train: &DataTable, holdout: &DataTable, synth: &DataTable, seed: u64) -> Result<f64> {
    check_layout(train, holdout)?;
    check_layout(train, synth)?;
    if train.n_rows() == 0 || holdout.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(EvalError::TooFewRows { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = train.n_rows().min(holdout.n_rows());
    let shrink = |t: &DataTable, rng: &mut ChaCha8Rng| {
        if t.n_rows() == n {
            return t.clone();
        }
        let mut idx: Vec<usize> = (0..t.n_rows()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.sort_unstable();
        t.select_rows(&idx)
    };
    let train = shrink(train, &mut rng);
    let holdout = shrink(holdout, &mut rng);
    let space = FeatureSpace::fit(&train);
    let xt = space.transform(&train)?;
    let xh = space.transform(&holdout)?;
    let xs = space.transform(synth)?;
    let score: f64 = (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let row = xs.row(i);
            let (dt, dh) = (min_l1(row, &xt), min_l1(row, &xh));
            if dt < dh {
                1.0
            } else if dt == dh {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(100.0 * score / xs.nrows() as f64)
}

// ---------------------------------------------------------------- utility

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleReport {
    pub task: Task,
    /// `auc` for classification, `rmse` for regression.
    pub metric: String,
    pub model: String,
    pub synthetic: f64,
    pub real_baseline: Option<f64>,
}

const RIDGE_LAMBDA: f64 = 1e-3;

fn target_index(schema: &TableSchema) -> Result<usize> {
    let name = schema.target_column.as_ref().ok_or(EvalError::NoTarget)?;
    if schema.task == Task::None {
        return Err(EvalError::NoTarget);
    }
    schema.column_index(name).ok_or_else(|| EvalError::UnknownColumn(name.clone()))
}

fn utility(train: &DataTable, test: &DataTable, target: usize, space: &FeatureSpace) -> Result<f64> {
    let xtr = space.transform(train)?;
    let xte = space.transform(test)?;
    match (train.column(target), test.column(target)) {
        (ColumnData::Categorical(ytr), ColumnData::Categorical(yte)) => {
            let k = train.schema.columns[target].categories.len();
            // one-vs-rest macro average over classes present in the test set
            let classes: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
            let mut aucs = Vec::new();
            for c in classes {
                let labels: Vec<bool> = yte.iter().map(|&v| v == c).collect();
                if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                    continue;
                }
                let y: Vec<f64> = ytr.iter().map(|&v| if v == c { 1.0 } else { 0.0 }).collect();
                let model = LogisticModel::fit(&xtr, &y, LOGISTIC_ITERS, LOGISTIC_LR, LOGISTIC_L2);
                let scores = model.decision(&xte);
                aucs.push(roc_auc(scores.as_slice().expect("contiguous"), &labels));
            }
            Ok(if aucs.is_empty() { 0.5 } else { mean(&aucs) })
        }
        (ColumnData::Numerical(ytr), ColumnData::Numerical(yte)) => {
            let d = xtr.ncols();
            let xm = xtr.mean_axis(Axis(0)).expect("non-empty");
            let ym = mean(ytr);
            let xc = &xtr - &xm.view().insert_axis(Axis(0));
            let mut gram = xc.t().dot(&xc);
            for i in 0..d {
                gram[[i, i]] += RIDGE_LAMBDA * xtr.nrows() as f64;
            }
            let rhs: Vec<f64> = xc.t().dot(&Array1::from_iter(ytr.iter().map(|v| v - ym))).to_vec();
            let beta = solve_spd(&gram, &rhs).ok_or_else(|| EvalError::InvalidConfig("ridge system is singular".into()))?;
            let beta = Array1::from(beta);
            let pred = (&xte - &xm.view().insert_axis(Axis(0))).dot(&beta) + ym;
            let mse = pred.iter().zip(yte).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / yte.len() as f64;
            Ok(mse.sqrt())
        }
        _ => unreachable!("layouts match"),
    }
}

/// Train-on-synthetic, test-on-real utility, with an optional
/// train-on-real baseline for the gap.
pub fn mle_report(train_synth: &DataTable, real_test: &DataTable, real_train: Option<&DataTable>) -> Result<MleReport> {
    check_layout(train_synth, real_test)?;
    let target = target_index(&real_test.schema).or_else(|_| target_index(&train_synth.schema))?;
    let task = real_test.schema.task;
    let task = if task == Task::None { train_synth.schema.task } else { task };
    let space = FeatureSpace::fit_excluding(&train_synth.concat(real_test)?, Some(target));
    let synthetic = utility(train_synth, real_test, target, &space)?;
    let real_baseline = match real_train {
        Some(rt) => {
            check_layout(rt, real_test)?;
            Some(utility(rt, real_test, target, &space)?)
        }
        None => None,
    };
    let (metric, model) = match task {
        Task::Regression => ("rmse", "ridge regression"),
        _ => ("auc", "logistic regression"),
    };
    Ok(MleReport {
        task,
        metric: metric.into(),
        model: model.into(),
        synthetic,
        real_baseline,
    })
}

// ---------------------------------------------------------------- coverage

fn sq_l2(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each row to its k-th nearest other row.
fn knn_radii(x: &Array2<f64>, k: usize) -> Vec<f64> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..x.nrows()).filter(|&j| j != i).map(|j| sq_l2(x.row(i), x.row(j))).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

/// Fraction of `query` rows inside at least one k-NN ball of `support`.
fn coverage(support: &Array2<f64>, radii: &[f64], query: &Array2<f64>) -> f64 {
    let hits: usize = (0..query.nrows())
        .into_par_iter()
        .filter(|&i| (0..support.nrows()).any(|j| sq_l2(query.row(i), support.row(j)) <= radii[j]))
        .count();
    hits as f64 / query.nrows() as f64
}

/// k-NN precision (synthetic rows within a real row's k-NN radius) and
/// recall (real rows within a synthetic row's k-NN radius), L2 over the
/// encoded space fitted on the real table.
pub fn knn_precision_recall(real: &DataTable, synth: &DataTable, k: usize) -> Result<(f64, f64)> {
    check_layout(real, synth)?;
    if k == 0 {
        return Err(EvalError::InvalidConfig("k must be >= 1".into()));
    }
    for t in [real, synth] {
        if t.n_rows() < k + 1 {
            return Err(EvalError::TooFewRows { needed: k + 1, got: t.n_rows() });
        }
    }
    let space = FeatureSpace::fit(real);
    let xr = space.transform(real)?;
    let xs = space.transform(synth)?;
    let precision = coverage(&xr, &knn_radii(&xr, k), &xs);
    let recall = coverage(&xs, &knn_radii(&xs, k), &xr);
    Ok((precision, recall))
}

// ---------------------------------------------------------------- rules

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellValue {
    pub column: String,
    pub category: String,
}

/// Rows with the antecedent value must not carry the forbidden value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRule {
    pub antecedent: CellValue,
    pub forbidden: CellValue,
}

impl ViolationRule {
    pub fn new(if_col: &str, if_cat: &str, not_col: &str, not_cat: &str) -> Self {
        Self {
            antecedent: CellValue {
                column: if_col.into(),
                category: if_cat.into(),
            },
            forbidden: CellValue {
                column: not_col.into(),
                category: not_cat.into(),
            },
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}={} & {}={}",
            self.antecedent.column, self.antecedent.category, self.forbidden.column, self.forbidden.category
        )
    }
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<ViolationRule>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn resolve(schema: &TableSchema, cell: &CellValue) -> Result<(usize, usize)> {
    let col = schema
        .column_index(&cell.column)
        .ok_or_else(|| EvalError::UnknownColumn(cell.column.clone()))?;
    let spec = &schema.columns[col];
    if spec.kind != ColumnKind::Categorical {
        return Err(EvalError::NotCategorical(cell.column.clone()));
    }
    let cat = spec
        .categories
        .iter()
        .position(|c| c == &cell.category)
        .ok_or_else(|| EvalError::UnknownCategory {
            column: cell.column.clone(),
            category: cell.category.clone(),
        })?;
    Ok((col, cat))
}

/// Number of rows matching each rule's antecedent and forbidden value.
pub fn count_violations(table: &DataTable, rules: &[ViolationRule]) -> Result<Vec<usize>> {
    rules
        .iter()
        .map(|rule| {
            let (ca, va) = resolve(&table.schema, &rule.antecedent)?;
            let (cf, vf) = resolve(&table.schema, &rule.forbidden)?;
            let a = table.column(ca).as_categorical().expect("checked categorical");
            let f = table.column(cf).as_categorical().expect("checked categorical");
            Ok(a.iter().zip(f).filter(|(&x, &y)| x == va && y == vf).count())
        })
        .collect()
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCount {
    pub rule: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub n_real: usize,
    pub n_synth: usize,
    pub columns: Vec<String>,
    pub c2st_folds: usize,
    pub knn_k: usize,
    pub notes: Vec<String>,
}

/// Every metric is either populated or listed in `skipped` with a reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub shape_pct: f64,
    pub trend_pct: f64,
    pub c2st: Option<f64>,
    pub dcr_pct: Option<f64>,
    pub mle: Option<MleReport>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub violations: Vec<RuleCount>,
    pub skipped: BTreeMap<String, String>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub seed: u64,
    pub folds: usize,
    pub k: usize,
    pub rules: Vec<ViolationRule>,
    /// Training rows for the privacy metric.
    pub train: Option<DataTable>,
    /// Rows never seen in training: privacy holdout and utility test set.
    pub holdout: Option<DataTable>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: 5,
            k: 5,
            rules: Vec::new(),
            train: None,
            holdout: None,
        }
    }
}

fn keep<T>(name: &str, r: Result<T>, skipped: &mut BTreeMap<String, String>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            skipped.insert(name.into(), e.to_string());
            None
        }
    }
}

pub fn evaluate(real: &DataTable, synth: &DataTable, opts: &EvalOptions) -> Result<MetricsReport> {
    let shape_pct = shape_error(real, synth)?;
    let trend_pct = trend_error(real, synth)?;
    let mut skipped = BTreeMap::new();
    let c2st = keep("c2st", c2st_score(real, synth, opts.folds, opts.seed), &mut skipped);
    let dcr_pct = match (&opts.train, &opts.holdout) {
        (Some(tr), Some(ho)) => keep("dcr", dcr_score(tr, ho, synth, opts.seed), &mut skipped),
        _ => {
            skipped.insert("dcr".into(), "requires both training and holdout tables".into());
            None
        }
    };
    let test = opts.holdout.as_ref().unwrap_or(real);
    let baseline = opts.train.as_ref().or(if opts.holdout.is_some() { Some(real) } else { None });
    let mle = keep("mle", mle_report(synth, test, baseline), &mut skipped);
    let pr = keep("knn", knn_precision_recall(real, synth, opts.k), &mut skipped);
    let violations = count_violations(synth, &opts.rules)?
        .into_iter()
        .zip(&opts.rules)
        .map(|(count, rule)| RuleCount { rule: rule.label(), count })
        .collect();
    Ok(MetricsReport {
        shape_pct,
        trend_pct,
        c2st,
        dcr_pct,
        mle,
        precision: pr.map(|p| p.0),
        recall: pr.map(|p| p.1),
        violations,
        skipped,
        metadata: ReportMetadata {
            seed: opts.seed,
            n_real: real.n_rows(),
            n_synth: synth.n_rows(),
            columns: real.schema.columns.iter().map(|c| c.name.clone()).collect(),
            c2st_folds: opts.folds,
            knn_k: opts.k,
            notes: vec!["utility uses linear models in place of gradient-boosted trees".into()],
        },
    })
}

// ---------------------------------------------------------------- histograms

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub real: usize,
    pub synthetic: usize,
}

pub const HISTOGRAM_BINS: usize = 50;

/// Per-column marginal counts: 50 equal-width bins over the pooled range for
/// numerical columns, category frequencies for categorical ones.
pub fn column_histograms(real: &DataTable, synth: &DataTable) -> Result<Vec<(String, Vec<HistogramRow>)>> {
    check_layout(real, synth)?;
    let mut out = Vec::new();
    for (j, spec) in real.schema.columns.iter().enumerate() {
        let rows = match (real.column(j), synth.column(j)) {
            (ColumnData::Numerical(a), ColumnData::Numerical(b)) => {
                let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
                let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
                let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 };
                let bin_of = |v: f64| (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                let mut counts = vec![(0usize, 0usize); HISTOGRAM_BINS];
                a.iter().for_each(|&v| counts[bin_of(v)].0 += 1);
                b.iter().for_each(|&v| counts[bin_of(v)].1 += 1);
                counts
                    .into_iter()
                    .enumerate()
                    .map(|(i, (r, s))| HistogramRow {
                        bin: i.to_string(),
                        lower: Some(lo + i as f64 * width),
                        upper: Some(lo + (i + 1) as f64 * width),
                        real: r,
                        synthetic: s,
                    })
                    .collect()
            }
            (ColumnData::Categorical(a), ColumnData::Categorical(b)) => spec
                .categories
                .iter()
                .enumerate()
                .map(|(c, name)| HistogramRow {
                    bin: name.clone(),
                    lower: None,
                    upper: None,
                    real: a.iter().filter(|&&v| v == c).count(),
                    synthetic: b.iter().filter(|&&v| v == c).count(),
                })
                .collect(),
            _ => unreachable!("layouts match"),
        };
        out.push((spec.name.clone(), rows));
    }
    Ok(out)
}

/// Writes `hist_<column>.csv` files into `dir`; returns the paths written.
pub fn write_histograms(real: &DataTable, synth: &DataTable, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, rows) in column_histograms(real, synth)? {
        let safe: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect();
        let path = dir.join(format!("hist_{safe}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
