//! Mixed-type tables: schema, CSV I/O, reversible encoding and splitting.
//!
//! The encoded layout places all numerical dimensions first (z-scored with the
//! statistics recorded at fit time), followed by one one-hot block per
//! categorical column in schema order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("column `{0}` is missing from the input header")]
    MissingColumn(String),
    #[error("unknown category `{value}` at row {row}, column `{col}`")]
    UnknownCategory { row: usize, col: String, value: String },
    #[error("unparsable numeric value `{value}` at row {row}, column `{col}`")]
    UnparsableNumeric { row: usize, col: String, value: String },
    #[error("table has no rows")]
    EmptyTable,
    #[error("numerical column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("at least 2 rows are required to fit an encoder, got {0}")]
    TooFewRows(usize),
    #[error("table schema does not match the encoding map: {0}")]
    SchemaMismatch(String),
    #[error("encoded width {got} does not match the encoding map width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TableError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl ColumnSpec {
    pub fn numerical(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Numerical,
            categories: Vec::new(),
            mean: None,
            std: None,
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            mean: None,
            std: None,
        }
    }

    pub fn is_numerical(&self) -> bool {
        self.kind == ColumnKind::Numerical
    }

    /// Same column ignoring fitted statistics.
    fn same_shape(&self, other: &ColumnSpec) -> bool {
        self.name == other.name && self.kind == other.kind && self.categories == other.categories
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default, rename = "target", skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
    #[serde(default)]
    pub task: Task,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self {
            columns,
            target_column: None,
            task: Task::None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_target(mut self, target: &str, task: Task) -> Result<Self> {
        self.target_column = Some(target.to_string());
        self.task = task;
        self.validate()?;
        Ok(self)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: TableSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(TableError::InvalidSchema(format!("duplicate column `{}`", col.name)));
            }
            if col.kind == ColumnKind::Categorical {
                if col.categories.is_empty() {
                    return Err(TableError::InvalidSchema(format!(
                        "categorical column `{}` has no categories",
                        col.name
                    )));
                }
                let mut seen = HashSet::new();
                if !col.categories.iter().all(|c| seen.insert(c)) {
                    return Err(TableError::InvalidSchema(format!(
                        "categorical column `{}` has duplicate categories",
                        col.name
                    )));
                }
            }
        }
        if let Some(target) = &self.target_column {
            if !names.contains(target.as_str()) {
                return Err(TableError::InvalidSchema(format!("target column `{target}` not in schema")));
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn n_numerical(&self) -> usize {
        self.columns.iter().filter(|c| c.is_numerical()).count()
    }

    pub fn n_categorical(&self) -> usize {
        self.columns.len() - self.n_numerical()
    }

    /// Compares names, kinds and categories; fitted statistics are ignored.
    pub fn same_layout(&self, other: &TableSchema) -> bool {
        self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|(a, b)| a.same_shape(b))
    }

    /// Copy of the schema with fitted statistics stripped.
    pub fn unfitted(&self) -> TableSchema {
        let mut s = self.clone();
        for c in &mut s.columns {
            c.mean = None;
            c.std = None;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numerical(Vec<f64>),
    /// Category indices into the column's category list.
    Categorical(Vec<usize>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numerical(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numerical(&self) -> Option<&[f64]> {
        match self {
            ColumnData::Numerical(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[usize]> {
        match self {
            ColumnData::Categorical(v) => Some(v),
            ColumnData::Numerical(_) => None,
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numerical(v) => ColumnData::Numerical(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Column-major mixed-type table.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub schema: TableSchema,
    columns: Vec<ColumnData>,
    n: usize,
}

impl DataTable {
    /// Builds a table after checking lengths and category ranges.
    pub fn new(schema: TableSchema, columns: Vec<ColumnData>) -> Result<Self> {
        schema.validate()?;
        if columns.len() != schema.columns.len() {
            return Err(TableError::SchemaMismatch(format!(
                "{} columns supplied for a schema of {}",
                columns.len(),
                schema.columns.len()
            )));
        }
        let n = columns.first().map_or(0, |c| c.len());
        for (spec, data) in schema.columns.iter().zip(&columns) {
            if data.len() != n {
                return Err(TableError::SchemaMismatch(format!("column `{}` has {} rows, expected {n}", spec.name, data.len())));
            }
            match (spec.kind, data) {
                (ColumnKind::Numerical, ColumnData::Numerical(v)) => {
                    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                        return Err(TableError::UnparsableNumeric {
                            row,
                            col: spec.name.clone(),
                            value: v[row].to_string(),
                        });
                    }
                }
                (ColumnKind::Categorical, ColumnData::Categorical(v)) => {
                    if let Some(row) = v.iter().position(|&c| c >= spec.categories.len()) {
                        return Err(TableError::UnknownCategory {
                            row,
                            col: spec.name.clone(),
                            value: v[row].to_string(),
                        });
                    }
                }
                _ => {
                    return Err(TableError::SchemaMismatch(format!("column `{}` has the wrong kind", spec.name)));
                }
            }
        }
        Ok(Self { schema, columns, n })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, idx: usize) -> &ColumnData {
        &self.columns[idx]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&ColumnData> {
        self.schema.column_index(name).map(|i| &self.columns[i])
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n: rows.len(),
        }
    }

    /// Row-wise concatenation of two tables sharing a layout.
    pub fn concat(&self, other: &DataTable) -> Result<DataTable> {
        if !self.schema.same_layout(&other.schema) {
            return Err(TableError::SchemaMismatch("cannot concatenate tables with different schemas".into()));
        }
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| match (a, b) {
                (ColumnData::Numerical(x), ColumnData::Numerical(y)) => {
                    ColumnData::Numerical(x.iter().chain(y).copied().collect())
                }
                (ColumnData::Categorical(x), ColumnData::Categorical(y)) => {
                    ColumnData::Categorical(x.iter().chain(y).copied().collect())
                }
                _ => unreachable!("layouts compared equal"),
            })
            .collect();
        Ok(DataTable {
            schema: self.schema.clone(),
            columns,
            n: self.n + other.n,
        })
    }

    /// Feature-space matrix for causal discovery: numerical values raw,
    /// categorical columns as integer codes. One column per schema column.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.columns.len()));
        for (j, col) in self.columns.iter().enumerate() {
            match col {
                ColumnData::Numerical(v) => {
                    for (i, x) in v.iter().enumerate() {
                        out[[i, j]] = *x;
                    }
                }
                ColumnData::Categorical(v) => {
                    for (i, c) in v.iter().enumerate() {
                        out[[i, j]] = *c as f64;
                    }
                }
            }
        }
        out
    }

    fn cell_string(&self, row: usize, col: usize) -> String {
        match &self.columns[col] {
            ColumnData::Numerical(v) => format!("{}", v[row]),
            ColumnData::Categorical(v) => self.schema.columns[col].categories[v[row]].clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for row in 0..self.n {
            w.write_record((0..self.columns.len()).map(|c| self.cell_string(row, c)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Parses a headered CSV file against `schema`.
pub fn load_table(path: impl AsRef<Path>, schema: &TableSchema) -> Result<DataTable> {
    let file = File::open(path)?;
    read_table(file, schema)
}

pub fn read_table<R: Read>(reader: R, schema: &TableSchema) -> Result<DataTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| TableError::MissingColumn(c.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<ColumnData> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numerical => ColumnData::Numerical(Vec::new()),
            ColumnKind::Categorical => ColumnData::Categorical(Vec::new()),
        })
        .collect();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for ((spec, &pos), data) in schema.columns.iter().zip(&positions).zip(columns.iter_mut()) {
            let raw = record.get(pos).unwrap_or("");
            match data {
                ColumnData::Numerical(v) => {
                    let x: f64 = raw.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                        TableError::UnparsableNumeric {
                            row,
                            col: spec.name.clone(),
                            value: raw.to_string(),
                        }
                    })?;
                    v.push(x);
                }
                ColumnData::Categorical(v) => {
                    let idx = spec.categories.iter().position(|c| c == raw).ok_or_else(|| {
                        TableError::UnknownCategory {
                            row,
                            col: spec.name.clone(),
                            value: raw.to_string(),
                        }
                    })?;
                    v.push(idx);
                }
            }
        }
    }
    if columns.first().is_none_or(|c| c.is_empty()) {
        return Err(TableError::EmptyTable);
    }
    DataTable::new(schema.clone(), columns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatBlock {
    /// Index of the originating column in the schema.
    pub feature: usize,
    pub offset: usize,
    pub k: usize,
}

/// Fitted mapping between raw columns and the encoded matrix layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    /// Schema with mean/std populated for numerical columns.
    pub schema: TableSchema,
    /// Encoded offset of each schema column (first dim of its block).
    pub offsets: Vec<usize>,
    pub num_dims: usize,
    /// Schema column index of each numerical dim, in encoded order.
    pub num_features: Vec<usize>,
    pub cat_blocks: Vec<CatBlock>,
    pub feature_of_dim: Vec<usize>,
    pub width: usize,
}

impl EncodingMap {
    pub fn n_features(&self) -> usize {
        self.schema.columns.len()
    }

    pub fn cat_width(&self) -> usize {
        self.width - self.num_dims
    }

    pub fn num_stats(&self, dim: usize) -> (f64, f64) {
        let spec = &self.schema.columns[self.num_features[dim]];
        (spec.mean.unwrap_or(0.0), spec.std.unwrap_or(1.0))
    }
}

pub fn fit_encoder(table: &DataTable) -> Result<EncodingMap> {
    if table.n_rows() < 2 {
        return Err(TableError::TooFewRows(table.n_rows()));
    }
    let mut schema = table.schema.clone();
    let n_cols = schema.columns.len();
    let mut offsets = vec![0; n_cols];
    let mut num_features = Vec::new();
    let mut feature_of_dim = Vec::new();

    for (j, spec) in schema.columns.iter_mut().enumerate() {
        if let ColumnData::Numerical(v) = &table.columns[j] {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if !(std > 1e-12 * mean.abs().max(1.0)) {
                return Err(TableError::ZeroVariance(spec.name.clone()));
            }
            spec.mean = Some(mean);
            spec.std = Some(std);
            offsets[j] = num_features.len();
            num_features.push(j);
            feature_of_dim.push(j);
        }
    }
    let num_dims = num_features.len();
    let mut cat_blocks = Vec::new();
    let mut offset = num_dims;
    for (j, spec) in schema.columns.iter().enumerate() {
        if spec.kind == ColumnKind::Categorical {
            let k = spec.categories.len();
            offsets[j] = offset;
            cat_blocks.push(CatBlock { feature: j, offset, k });
            feature_of_dim.extend(std::iter::repeat_n(j, k));
            offset += k;
        }
    }
    Ok(EncodingMap {
        schema,
        offsets,
        num_dims,
        num_features,
        cat_blocks,
        feature_of_dim,
        width: offset,
    })
}

/// Encoded rows; numerical dims z-scored, categorical blocks one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: Array2<f64>,
}

pub fn encode(table: &DataTable, map: &EncodingMap) -> Result<EncodedMatrix> {
    if !table.schema.same_layout(&map.schema) {
        return Err(TableError::SchemaMismatch("table columns differ from the fitted schema".into()));
    }
    let mut values = Array2::zeros((table.n_rows(), map.width));
    for (dim, &feat) in map.num_features.iter().enumerate() {
        let (mean, std) = map.num_stats(dim);
        let col = table.columns[feat].as_numerical().expect("layout checked");
        for (i, x) in col.iter().enumerate() {
            values[[i, dim]] = (x - mean) / std;
        }
    }
    for block in &map.cat_blocks {
        let col = table.columns[block.feature].as_categorical().expect("layout checked");
        for (i, &c) in col.iter().enumerate() {
            values[[i, block.offset + c]] = 1.0;
        }
    }
    Ok(EncodedMatrix { values })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub fn decode(encoded: ArrayView2<f64>, map: &EncodingMap) -> Result<DataTable> {
    if encoded.ncols() != map.width {
        return Err(TableError::WidthMismatch {
            expected: map.width,
            got: encoded.ncols(),
        });
    }
    let n = encoded.nrows();
    let mut columns: Vec<Option<ColumnData>> = vec![None; map.n_features()];
    for (dim, &feat) in map.num_features.iter().enumerate() {
        let (mean, std) = map.num_stats(dim);
        let col = encoded.column(dim).iter().map(|z| z * std + mean).collect();
        columns[feat] = Some(ColumnData::Numerical(col));
    }
    for block in &map.cat_blocks {
        let col = (0..n)
            .map(|i| argmax((0..block.k).map(|c| encoded[[i, block.offset + c]])))
            .collect();
        columns[block.feature] = Some(ColumnData::Categorical(col));
    }
    let columns = columns.into_iter().map(|c| c.expect("every feature decoded")).collect();
    DataTable::new(map.schema.unfitted(), columns)
}

/// Row counts for a (train, val, test) split: val and test are floored and
/// the remainder goes to train.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(TableError::BadFractions(fractions));
    }
    let val = (n as f64 * b).floor() as usize;
    let test = (n as f64 * c).floor() as usize;
    Ok((n - val - test, val, test))
}

/// Seeded permutation partitioned into (train, val, test) index sets.
pub fn split_indices(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (n_train, n_val, _) = split_sizes(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok((idx, val, test))
}

pub fn split(table: &DataTable, fractions: (f64, f64, f64), seed: u64) -> Result<(DataTable, DataTable, DataTable)> {
    let (tr, va, te) = split_indices(table.n_rows(), fractions, seed)?;
    Ok((table.select_rows(&tr), table.select_rows(&va), table.select_rows(&te)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn age_sex_schema() -> TableSchema {
        TableSchema::new(vec![ColumnSpec::numerical("age"), ColumnSpec::categorical("sex", &["M", "F"])]).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let csv = "age,sex\n30,M\n41,F\n25,F\n";
        let t = read_table(csv.as_bytes(), &age_sex_schema()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.column(1).as_categorical().unwrap(), &[0, 1, 1]);
    }

    #[test]
    fn rejects_unknown_category() {
        let csv = "age,sex\n30,M\n41,X\n";
        match read_table(csv.as_bytes(), &age_sex_schema()) {
            Err(TableError::UnknownCategory { row, col, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(col, "sex");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_column_and_bad_numbers() {
        let err = read_table("sex\nM\n".as_bytes(), &age_sex_schema()).unwrap_err();
        assert!(matches!(err, TableError::MissingColumn(c) if c == "age"));
        let err = read_table("age,sex\nold,M\n".as_bytes(), &age_sex_schema()).unwrap_err();
        assert!(matches!(err, TableError::UnparsableNumeric { row: 0, .. }));
        let err = read_table("age,sex\n,M\n".as_bytes(), &age_sex_schema()).unwrap_err();
        assert!(matches!(err, TableError::UnparsableNumeric { .. }));
        let err = read_table("age,sex\n".as_bytes(), &age_sex_schema()).unwrap_err();
        assert!(matches!(err, TableError::EmptyTable));
    }

    #[test]
    fn schema_json_validation() {
        let ok = r#"{"columns":[{"name":"a","kind":"numerical"},{"name":"b","kind":"categorical","categories":["x","y"]}],"target":"b","task":"classification"}"#;
        let s = TableSchema::from_json_str(ok).unwrap();
        assert_eq!(s.task, Task::Classification);
        let dup = r#"{"columns":[{"name":"a","kind":"numerical"},{"name":"a","kind":"numerical"}]}"#;
        assert!(TableSchema::from_json_str(dup).is_err());
        let no_cats = r#"{"columns":[{"name":"b","kind":"categorical","categories":[]}]}"#;
        assert!(TableSchema::from_json_str(no_cats).is_err());
        let bad_target = r#"{"columns":[{"name":"a","kind":"numerical"}],"target":"z"}"#;
        assert!(TableSchema::from_json_str(bad_target).is_err());
    }

    #[test]
    fn encoder_layout_one_num_one_cat() {
        let schema = TableSchema::new(vec![
            ColumnSpec::categorical("c", &["a", "b", "c"]),
            ColumnSpec::numerical("x"),
        ])
        .unwrap();
        let t = DataTable::new(
            schema,
            vec![ColumnData::Categorical(vec![0, 1, 2]), ColumnData::Numerical(vec![1.0, 2.0, 3.0])],
        )
        .unwrap();
        let map = fit_encoder(&t).unwrap();
        assert_eq!(map.width, 4);
        assert_eq!(map.num_dims, 1);
        assert_eq!(map.cat_blocks, vec![CatBlock { feature: 0, offset: 1, k: 3 }]);
        assert_eq!(map.feature_of_dim, vec![1, 0, 0, 0]);
        let enc = encode(&t, &map).unwrap();
        assert_eq!(enc.values.row(1).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_column_rejected() {
        let schema = TableSchema::new(vec![ColumnSpec::numerical("x")]).unwrap();
        let t = DataTable::new(schema, vec![ColumnData::Numerical(vec![5.0; 4])]).unwrap();
        assert!(matches!(fit_encoder(&t), Err(TableError::ZeroVariance(_))));
        let one = t.select_rows(&[0]);
        assert!(matches!(fit_encoder(&one), Err(TableError::TooFewRows(1))));
    }

    #[test]
    fn adult_shaped_schema_counts() {
        let mut cols: Vec<ColumnSpec> = (0..6).map(|i| ColumnSpec::numerical(&format!("n{i}"))).collect();
        cols.extend((0..9).map(|i| ColumnSpec::categorical(&format!("c{i}"), &["p", "q"])));
        let schema = TableSchema::new(cols).unwrap();
        let data = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numerical => ColumnData::Numerical(vec![0.0, 1.0, 2.0]),
                ColumnKind::Categorical => ColumnData::Categorical(vec![0, 1, 0]),
            })
            .collect();
        let map = fit_encoder(&DataTable::new(schema, data).unwrap()).unwrap();
        assert_eq!(map.num_dims, 6);
        assert_eq!(map.cat_blocks.len(), 9);
        assert_eq!(map.width, 6 + 18);
    }

    #[test]
    fn encode_decode_examples() {
        let schema = age_sex_schema();
        let t = DataTable::new(schema, vec![ColumnData::Numerical(vec![8.0, 12.0]), ColumnData::Categorical(vec![0, 1])])
            .unwrap();
        let map = fit_encoder(&t).unwrap();
        // mean 10, std 2
        let enc = encode(&t, &map).unwrap();
        assert_eq!(enc.values[[0, 0]], -1.0);
        let z = ndarray::array![[0.0, 0.5, 0.5], [1.0, 0.1, 0.7]];
        let back = decode(z.view(), &map).unwrap();
        assert_eq!(back.column(0).as_numerical().unwrap(), &[10.0, 12.0]);
        assert_eq!(back.column(1).as_categorical().unwrap(), &[0, 1]);
        assert!(matches!(
            decode(Array2::zeros((1, 2)).view(), &map),
            Err(TableError::WidthMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn argmax_ties_and_order() {
        assert_eq!(argmax([0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax([0.5, 0.5]), 0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        assert_eq!(split_sizes(10, (0.8, 0.1, 0.1)).unwrap(), (8, 1, 1));
        assert!(matches!(split_sizes(10, (0.8, 0.3, 0.1)), Err(TableError::BadFractions(_))));
        assert!(matches!(split_sizes(10, (1.0, 0.0, 0.0)), Err(TableError::BadFractions(_))));
        let a = split_indices(10, (0.8, 0.1, 0.1), 7).unwrap();
        let b = split_indices(10, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.0.len(), a.1.len(), a.2.len()), (8, 1, 1));
    }

    #[test]
    fn csv_round_trip_keeps_header_order() {
        let csv = "sex,age,extra\nM,30.5,1\nF,41,2\n";
        let t = read_table(csv.as_bytes(), &age_sex_schema()).unwrap();
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "age,sex\n30.5,M\n41,F\n");
    }

    fn arb_table() -> impl Strategy<Value = DataTable> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1e3f64..1e3, n),
                proptest::collection::vec(-5f64..5.0, n),
                proptest::collection::vec(0usize..3, n),
                proptest::collection::vec(0usize..2, n),
            )
                .prop_filter("non-constant", |(a, b, _, _)| {
                    a.iter().any(|x| *x != a[0]) && b.iter().any(|x| *x != b[0])
                })
                .prop_map(|(a, b, c, d)| {
                    let schema = TableSchema::new(vec![
                        ColumnSpec::numerical("a"),
                        ColumnSpec::categorical("c", &["x", "y", "z"]),
                        ColumnSpec::numerical("b"),
                        ColumnSpec::categorical("d", &["u", "v"]),
                    ])
                    .unwrap();
                    DataTable::new(
                        schema,
                        vec![
                            ColumnData::Numerical(a),
                            ColumnData::Categorical(c),
                            ColumnData::Numerical(b),
                            ColumnData::Categorical(d),
                        ],
                    )
                    .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(t in arb_table()) {
            let map = fit_encoder(&t).unwrap();
            prop_assert_eq!(&fit_encoder(&t).unwrap(), &map);
            let enc = encode(&t, &map).unwrap();
            for block in &map.cat_blocks {
                for row in enc.values.rows() {
                    let s: f64 = (0..block.k).map(|c| row[block.offset + c]).sum();
                    prop_assert_eq!(s, 1.0);
                }
            }
            let back = decode(enc.values.view(), &map).unwrap();
            for (orig, dec) in t.columns().iter().zip(back.columns()) {
                match (orig, dec) {
                    (ColumnData::Numerical(a), ColumnData::Numerical(b)) => {
                        for (x, y) in a.iter().zip(b) {
                            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                        }
                    }
                    (ColumnData::Categorical(a), ColumnData::Categorical(b)) => prop_assert_eq!(a, b),
                    _ => prop_assert!(false),
                }
            }
        }

        #[test]
        fn split_is_partition(n in 3usize..200, seed in any::<u64>()) {
            let (a, b, c) = split_indices(n, (0.7, 0.15, 0.15), seed).unwrap();
            let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
