use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::PlantModel;
use crate::error::{Error, Result};
use crate::linalg;

/// On-disk plant definition: row-major `A`, `B` and an optional Lyapunov weight `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
}

impl PlantSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn from_model(model: &PlantModel, id: Option<String>) -> Self {
        Self {
            id,
            description: None,
            a: linalg::matrix_to_rows(model.a()),
            b: linalg::matrix_to_rows(model.b()),
            q: None,
        }
    }

    pub fn build(&self) -> Result<PlantModel> {
        let a = linalg::matrix_from_rows(&self.a).map_err(|e| Error::config("A", e.to_string()))?;
        let b = linalg::matrix_from_rows(&self.b).map_err(|e| Error::config("B", e.to_string()))?;
        if !a.is_square() {
            return Err(Error::config(
                "A",
                format!("must be square, got {}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::config(
                "B",
                format!("has {} rows but A has {}", b.nrows(), a.nrows()),
            ));
        }
        PlantModel::new(a, b).map_err(|e| match e {
            Error::Unstable { spectral_radius } => Error::config(
                "A",
                format!("unstable: spectral radius {spectral_radius:.6} >= 1"),
            ),
            other => Error::config("A", other.to_string()),
        })
    }

    /// Lyapunov weight; identity when absent.
    pub fn weight(&self) -> Result<DMatrix<f64>> {
        let n = self.a.len();
        match &self.q {
            None => Ok(DMatrix::identity(n, n)),
            Some(rows) => {
                let q = linalg::matrix_from_rows(rows).map_err(|e| Error::config("Q", e.to_string()))?;
                if q.nrows() != n || q.ncols() != n {
                    return Err(Error::config("Q", format!("must be {n}x{n}")));
                }
                Ok(q)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_builds() {
        let spec = PlantSpec::from_json(r#"{"A": [[0.1, 1.0], [0.0, 0.1]], "B": [[1, 0], [0, 1]]}"#).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.n_x(), 2);
        assert_eq!(spec.weight().unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn unstable_a_names_the_field() {
        let spec = PlantSpec::from_json(r#"{"A": [[1.5]], "B": [[1]]}"#).unwrap();
        match spec.build().unwrap_err() {
            Error::Config { field, reason } => {
                assert_eq!(field, "A");
                assert!(reason.contains("1.5"), "{reason}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = PlantSpec::from_json("{\n  \"A\": [[0.5]],\n  \"B\": [[1]\n}").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let spec = PlantSpec::from_json(r#"{"A": [[0.1, 0.0], [0.0]], "B": [[1], [1]]}"#).unwrap();
        assert!(matches!(spec.build(), Err(Error::Config { field, .. }) if field == "A"));
    }
}
