//! JSON encodings for nalgebra vectors and matrices.
//!
//! JSON has no infinities, so non-finite entries are written as the strings
//! `"inf"`, `"-inf"` and `"nan"`. Matrices are `{"rows", "cols", "data"}` with
//! row-major data.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Real {
    Num(f64),
    Str(String),
}

impl From<f64> for Real {
    fn from(x: f64) -> Self {
        if x.is_finite() {
            Real::Num(x)
        } else if x.is_nan() {
            Real::Str("nan".into())
        } else if x > 0.0 {
            Real::Str("inf".into())
        } else {
            Real::Str("-inf".into())
        }
    }
}

impl Real {
    fn value<E: serde::de::Error>(self) -> Result<f64, E> {
        match self {
            Real::Num(x) => Ok(x),
            Real::Str(s) => match s.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                other => Err(E::custom(format!("not a real number: {other:?}"))),
            },
        }
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        let reals: Vec<Real> = v.iter().map(|&x| Real::from(x)).collect();
        reals.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let reals = Vec::<Real>::deserialize(d)?;
        let vals = reals
            .into_iter()
            .map(Real::value)
            .collect::<Result<Vec<f64>, D::Error>>()?;
        Ok(DVector::from_vec(vals))
    }
}

pub mod matrix {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<Real>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(Real::from(m[(i, j)]));
            }
        }
        Repr { rows, cols, data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(D::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                r.data.len(),
                r.rows,
                r.cols
            )));
        }
        let vals = r
            .data
            .into_iter()
            .map(Real::value)
            .collect::<Result<Vec<f64>, D::Error>>()?;
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &vals))
    }
}
