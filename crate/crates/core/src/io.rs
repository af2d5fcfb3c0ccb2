//! File formats: state files and the `{"dim", "re", "im"}` matrix layout
//! shared by state files and serialized solver runs.

use std::fs;
use std::path::Path;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::linalg::{from_parts, ComplexMatrix, NumericPolicy};
use crate::states::DensityMatrix;

/// Formats a float with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
struct MatrixOut {
    dim: usize,
    re: Vec<Vec<Box<RawValue>>>,
    im: Vec<Vec<Box<RawValue>>>,
}

#[derive(Deserialize)]
struct MatrixIn {
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

fn raw(x: f64) -> Box<RawValue> {
    RawValue::from_string(format_f64(x)).expect("exponent notation is valid JSON")
}

fn to_out(m: &ComplexMatrix) -> MatrixOut {
    let d = m.nrows();
    MatrixOut {
        dim: d,
        re: (0..d).map(|i| (0..d).map(|j| raw(m[(i, j)].re)).collect()).collect(),
        im: (0..d).map(|i| (0..d).map(|j| raw(m[(i, j)].im)).collect()).collect(),
    }
}

fn from_in(m: MatrixIn) -> Result<ComplexMatrix> {
    if m.re.len() != m.dim {
        return Err(Error::Format(format!("`dim` is {} but `re` has {} rows", m.dim, m.re.len())));
    }
    from_parts(&m.re, &m.im)
}

/// `serde(with = ...)` adaptor for matrices in the re/im layout.
pub mod matrix_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &ComplexMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_out(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexMatrix, D::Error> {
        from_in(MatrixIn::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Same as [`matrix_serde`] for a list of matrices.
pub mod matrix_vec_serde {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[ComplexMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
        ms.iter().map(to_out).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ComplexMatrix>, D::Error> {
        Vec::<MatrixIn>::deserialize(d)?
            .into_iter()
            .map(|m| from_in(m).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub fn matrix_to_json(m: &ComplexMatrix) -> String {
    serde_json::to_string(&to_out(m)).expect("matrix serialization cannot fail")
}

pub fn matrix_from_json(text: &str) -> Result<ComplexMatrix> {
    let parsed: MatrixIn = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    from_in(parsed)
}

pub fn state_to_json(rho: &DensityMatrix) -> String {
    matrix_to_json(rho.matrix())
}

pub fn state_from_json(text: &str, policy: &NumericPolicy) -> Result<DensityMatrix> {
    DensityMatrix::from_matrix(&matrix_from_json(text)?, policy)
}

pub fn write_state(path: &Path, rho: &DensityMatrix) -> Result<()> {
    let mut text = state_to_json(rho);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_state(path: &Path, policy: &NumericPolicy) -> Result<DensityMatrix> {
    state_from_json(&fs::read_to_string(path)?, policy)
}
