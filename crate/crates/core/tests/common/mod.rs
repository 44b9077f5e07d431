#![allow(dead_code)]

pub mod props;

use std::path::PathBuf;

use covadj::{load_csv, TrialDataset};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_data() -> TrialDataset {
    load_csv(fixture_dir().join("trial200.csv"), "y", "z", &["x_cont", "x_cat"]).unwrap()
}

pub struct Reference(Value);

impl Reference {
    pub fn load() -> Self {
        let text = std::fs::read_to_string(fixture_dir().join("trial200_reference.json")).unwrap();
        Self(serde_json::from_str(&text).unwrap())
    }

    pub fn scalar(&self, key: &str) -> f64 {
        self.0[key].as_f64().unwrap_or_else(|| panic!("missing {key}"))
    }

    pub fn vector(&self, key: &str) -> DVector<f64> {
        to_vector(&self.0[key])
    }

    pub fn matrix(&self, key: &str) -> DMatrix<f64> {
        to_matrix(&self.0[key])
    }

    pub fn sandwich(&self, hc: &str) -> DMatrix<f64> {
        to_matrix(&self.0["sandwich"][hc])
    }
}

fn to_vector(v: &Value) -> DVector<f64> {
    DVector::from_iterator(
        v.as_array().unwrap().len(),
        v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()),
    )
}

fn to_matrix(v: &Value) -> DMatrix<f64> {
    let rows: Vec<DVector<f64>> = v.as_array().unwrap().iter().map(to_vector).collect();
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    (a - b).amax()
}
