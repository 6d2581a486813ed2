//! Serde adapter storing matrices as `{rows, cols, data}` with row-major data.

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
pub struct FlatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Array2<f64>> for FlatMatrix {
    fn from(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }
}

impl FlatMatrix {
    pub fn into_array<E: serde::de::Error>(self) -> Result<Array2<f64>, E> {
        Array2::from_shape_vec((self.rows, self.cols), self.data).map_err(E::custom)
    }
}

pub fn serialize<S: Serializer>(v: &[Array2<f64>], s: S) -> Result<S::Ok, S::Error> {
    let flat: Vec<FlatMatrix> = v.iter().map(FlatMatrix::from).collect();
    flat.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Array2<f64>>, D::Error> {
    let flat = Vec::<FlatMatrix>::deserialize(d)?;
    flat.into_iter().map(FlatMatrix::into_array).collect()
}

/// Single-matrix variant for `#[serde(with = "crate::serde_arrays::single")]`.
pub mod single {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        FlatMatrix::from(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        FlatMatrix::deserialize(d)?.into_array()
    }
}
