//! Synthetic structural causal models with known ground truth.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::causal::CausalGraph;
use crate::evaluation::ViolationRule;
use crate::tabular::{ColumnData, ColumnSpec, DataTable, TableError, TableSchema, Task};

pub const RELATIONSHIPS: [&str; 3] = ["Husband", "Wife", "Single"];
pub const SEXES: [&str; 2] = ["Male", "Female"];

/// Size and seed of the bundled `fixtures/scm4` data.
pub const SCM4_ROWS: usize = 4000;
pub const SCM4_SEED: u64 = 2024;

pub fn scm4_schema() -> TableSchema {
    TableSchema::new(vec![
        ColumnSpec::numerical("x1"),
        ColumnSpec::categorical("relationship", &RELATIONSHIPS),
        ColumnSpec::categorical("sex", &SEXES),
        ColumnSpec::numerical("x2"),
    ])
    .and_then(|s| s.with_target("sex", Task::Classification))
    .expect("static schema is valid")
}

/// Four-column SCM:
///
/// - `x1 ~ N(0, 1)`
/// - `relationship ~ softmax(1.2 x1, -1.2 x1, 0)`
/// - `sex` is Male for Husband, Female for Wife, a fair coin for Single
/// - `x2 = 0.8 x1 + [sex = Female] + 0.5 N(0, 1)`
///
/// Husband implies Male and Wife implies Female in every row.
pub fn scm4(n: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x1 = Vec::with_capacity(n);
    let mut rel = Vec::with_capacity(n);
    let mut sex = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let logits = [1.2 * a, -1.2 * a, 0.0];
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let u = rng.random::<f64>() * z;
        let r = if u < logits[0].exp() {
            0
        } else if u < logits[0].exp() + logits[1].exp() {
            1
        } else {
            2
        };
        let coin = rng.random::<bool>();
        let s = match r {
            0 => 0,
            1 => 1,
            _ => usize::from(coin),
        };
        let noise: f64 = rng.sample(StandardNormal);
        x1.push(a);
        rel.push(r);
        sex.push(s);
        x2.push(0.8 * a + s as f64 + 0.5 * noise);
    }
    DataTable::new(
        scm4_schema(),
        vec![
            ColumnData::Numerical(x1),
            ColumnData::Categorical(rel),
            ColumnData::Categorical(sex),
            ColumnData::Numerical(x2),
        ],
    )
    .expect("generated columns match the schema")
}

/// Rows the SCM never produces.
pub fn scm4_rules() -> Vec<ViolationRule> {
    vec![
        ViolationRule::new("relationship", "Husband", "sex", "Female"),
        ViolationRule::new("relationship", "Wife", "sex", "Male"),
    ]
}

/// Generating graph of [`scm4`] over columns (x1, relationship, sex, x2).
pub fn scm4_graph() -> CausalGraph {
    CausalGraph::from_edges(4, &[(0, 1), (1, 2), (0, 3), (2, 3)])
}

/// Writes `data.csv`, `schema.json` and `rules.json` into `dir`.
pub fn write_scm4(dir: impl AsRef<Path>, n: usize, seed: u64) -> Result<(), TableError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    scm4(n, seed).write_csv_file(dir.join("data.csv"))?;
    std::fs::write(dir.join("schema.json"), scm4_schema().to_json_pretty()? + "\n")?;
    let rules = serde_json::to_string_pretty(&scm4_rules()).expect("rules serialize");
    std::fs::write(dir.join("rules.json"), rules + "\n")?;
    Ok(())
}

/// Linear chain `x_{j+1} = weight * x_j + noise_sd * N(0, 1)` with
/// `x_0 ~ N(0, 1)`.
pub fn linear_chain(n: usize, d: usize, weight: f64, noise_sd: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        x[[i, 0]] = rng.sample(StandardNormal);
        for j in 1..d {
            let e: f64 = rng.sample(StandardNormal);
            x[[i, j]] = weight * x[[i, j - 1]] + noise_sd * e;
        }
    }
    x
}

pub fn chain_graph(d: usize) -> CausalGraph {
    let edges: Vec<(usize, usize)> = (1..d).map(|j| (j - 1, j)).collect();
    CausalGraph::from_edges(d, &edges)
}

/// `x2 = sin(2 x1) + noise_sd * N(0, 1)` with `x1 ~ N(0, 1)`.
pub fn sin_pair(n: usize, noise_sd: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 2));
    for i in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = a;
        x[[i, 1]] = (2.0 * a).sin() + noise_sd * e;
    }
    x
}

/// Structural Hamming distance: edge additions, deletions and reversals,
/// a reversal counted once.
pub fn structural_hamming(a: &CausalGraph, b: &CausalGraph) -> usize {
    let d = a.dim();
    let mut dist = 0;
    for i in 0..d {
        for j in i + 1..d {
            let ea = (a.has_edge(i, j), a.has_edge(j, i));
            let eb = (b.has_edge(i, j), b.has_edge(j, i));
            if ea != eb {
                dist += 1;
            }
        }
    }
    dist
}
