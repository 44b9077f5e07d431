//! Subject-level trial data and design matrices.
//!
//! A [`TrialDataset`] holds one [`TrialRecord`] per subject together with the
//! declared covariate order. That order matters: when a logistic fit fails,
//! covariates are removed starting from the last declared one.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative tolerance used when deciding whether a design column lies in the
/// span of the columns before it.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{column}` not found in header")]
    MissingColumn { column: String },
    #[error("line {line}: outcome `{value}` is not 0 or 1")]
    NonBinaryOutcome { line: usize, value: String },
    #[error("line {line}: treatment `{value}` is not 0 or 1")]
    NonBinaryTreatment { line: usize, value: String },
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    UnparsableNumeric {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}, column `{column}`: missing value")]
    MissingValue { line: usize, column: String },
    #[error("covariate `{0}` declared more than once")]
    DuplicateCovariate(String),
    #[error("record {index} has {found} covariates, expected {expected}")]
    CovariateCount {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("record {index}: outcome and treatment must be 0 or 1")]
    InvalidRecord { index: usize },
    #[error("need at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("treatment arm {0} has no subjects")]
    EmptyArm(u8),
    #[error("treatment arms must be two distinct labels")]
    SameArms,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One subject: binary outcome, binary treatment and covariates in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub outcome: u8,
    pub treatment: u8,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    records: Vec<TrialRecord>,
    covariate_names: Vec<String>,
}

impl TrialDataset {
    pub fn new(covariate_names: Vec<String>, records: Vec<TrialRecord>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateCovariate(name.clone()));
            }
        }
        for (index, r) in records.iter().enumerate() {
            if r.covariates.len() != covariate_names.len() {
                return Err(DataError::CovariateCount {
                    index,
                    found: r.covariates.len(),
                    expected: covariate_names.len(),
                });
            }
            if r.outcome > 1 || r.treatment > 1 {
                return Err(DataError::InvalidRecord { index });
            }
        }
        if records.len() < 2 {
            return Err(DataError::TooFewSubjects(records.len()));
        }
        for arm in [0u8, 1] {
            if !records.iter().any(|r| r.treatment == arm) {
                return Err(DataError::EmptyArm(arm));
            }
        }
        Ok(Self {
            records,
            covariate_names,
        })
    }

    /// Builds a dataset from column vectors. `covariates` pairs each name with
    /// its column, in declaration order.
    pub fn from_columns(
        outcomes: &[u8],
        treatments: &[u8],
        covariates: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, DataError> {
        assert_eq!(outcomes.len(), treatments.len(), "column lengths differ");
        let names = covariates.iter().map(|(n, _)| n.clone()).collect();
        let records = (0..outcomes.len())
            .map(|i| TrialRecord {
                outcome: outcomes[i],
                treatment: treatments[i],
                covariates: covariates.iter().map(|(_, col)| col[i]).collect(),
            })
            .collect();
        Self::new(names, records)
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn outcomes(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.records.iter().map(|r| f64::from(r.outcome)))
    }

    pub fn treatments(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.records.iter().map(|r| f64::from(r.treatment)))
    }

    /// Subjects in the control and treated arms, in that order.
    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self.records.iter().filter(|r| r.treatment == 1).count();
        (self.n() - n1, n1)
    }

    /// Observed response rates in the control and treated arms.
    pub fn arm_response_rates(&self) -> (f64, f64) {
        let (n0, n1) = self.arm_sizes();
        let mut events = [0usize; 2];
        for r in &self.records {
            events[r.treatment as usize] += r.outcome as usize;
        }
        (events[0] as f64 / n0 as f64, events[1] as f64 / n1 as f64)
    }

    /// Writes the dataset as CSV with the given outcome and treatment headers
    /// followed by the covariate names.
    pub fn write_csv<W: Write>(
        &self,
        writer: W,
        outcome_col: &str,
        treatment_col: &str,
    ) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![outcome_col.to_string(), treatment_col.to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.outcome.to_string(), r.treatment.to_string()];
            // `{:?}` prints the shortest representation that round-trips.
            row.extend(r.covariates.iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How to read a trial CSV.
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub outcome_col: String,
    pub treatment_col: String,
    pub covariate_cols: Vec<String>,
    /// For multi-arm files: the treatment label coded 1 and the label coded 0.
    /// Rows carrying any other label are skipped.
    pub arms: Option<(String, String)>,
}

impl CsvOptions {
    pub fn new(outcome_col: &str, treatment_col: &str, covariate_cols: &[&str]) -> Self {
        Self {
            outcome_col: outcome_col.into(),
            treatment_col: treatment_col.into(),
            covariate_cols: covariate_cols.iter().map(|s| s.to_string()).collect(),
            arms: None,
        }
    }
}

/// Reads a headered, comma-separated trial file.
pub fn load_csv(
    path: impl AsRef<Path>,
    outcome_col: &str,
    treatment_col: &str,
    covariate_cols: &[&str],
) -> Result<TrialDataset, DataError> {
    let opts = CsvOptions::new(outcome_col, treatment_col, covariate_cols);
    load_csv_with(path, &opts)
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<TrialDataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<TrialDataset, DataError> {
    if let Some((a, b)) = &opts.arms {
        if a == b {
            return Err(DataError::SameArms);
        }
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let locate = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                column: name.to_string(),
            })
    };
    let y_idx = locate(&opts.outcome_col)?;
    let z_idx = locate(&opts.treatment_col)?;
    let cov_idx = opts
        .covariate_cols
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        // header is line 1
        let line = row + 2;
        let field = |idx: usize, column: &str| -> Result<&str, DataError> {
            match rec.get(idx) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DataError::MissingValue {
                    line,
                    column: column.to_string(),
                }),
            }
        };

        let z_raw = field(z_idx, &opts.treatment_col)?;
        let treatment = match &opts.arms {
            Some((treated, control)) => {
                if z_raw == treated {
                    1
                } else if z_raw == control {
                    0
                } else {
                    continue;
                }
            }
            None => parse_binary(z_raw).ok_or_else(|| DataError::NonBinaryTreatment {
                line,
                value: z_raw.to_string(),
            })?,
        };

        let y_raw = field(y_idx, &opts.outcome_col)?;
        let outcome = parse_binary(y_raw).ok_or_else(|| DataError::NonBinaryOutcome {
            line,
            value: y_raw.to_string(),
        })?;

        let mut covariates = Vec::with_capacity(cov_idx.len());
        for (&idx, name) in cov_idx.iter().zip(&opts.covariate_cols) {
            let raw = field(idx, name)?;
            let v: f64 = raw.parse().map_err(|_| DataError::UnparsableNumeric {
                line,
                column: name.clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::UnparsableNumeric {
                    line,
                    column: name.clone(),
                    value: raw.to_string(),
                });
            }
            covariates.push(v);
        }
        records.push(TrialRecord {
            outcome,
            treatment,
            covariates,
        });
    }
    TrialDataset::new(opts.covariate_cols.clone(), records)
}

fn parse_binary(raw: &str) -> Option<u8> {
    match raw {
        "0" => Some(0),
        "1" => Some(1),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 => Some(0),
            Ok(v) if v == 1.0 => Some(1),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRole {
    Intercept,
    Treatment,
    Covariate(String),
}

/// Rows `x_i = (1, z_i, w_i)` for the retained covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    roles: Vec<ColumnRole>,
    retained: Vec<usize>,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    /// Dataset indices of the covariates present, in dataset order.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn treatment(&self) -> DVector<f64> {
        self.matrix.column(1).into_owned()
    }

    /// Copy of the design with every subject's treatment set to `value`.
    pub fn with_treatment(&self, value: f64) -> DMatrix<f64> {
        let mut m = self.matrix.clone();
        m.column_mut(1).fill(value);
        m
    }
}

/// Intercept, treatment, then the `retained` covariates in dataset order.
///
/// Indices refer to `data.covariate_names()`; duplicates are ignored.
pub fn build_design(data: &TrialDataset, retained: &[usize]) -> DesignMatrix {
    let mut keep: Vec<usize> = retained.to_vec();
    keep.sort_unstable();
    keep.dedup();
    assert!(
        keep.iter().all(|&j| j < data.num_covariates()),
        "retained covariate index out of range"
    );

    let n = data.n();
    let p = 2 + keep.len();
    let matrix = DMatrix::from_fn(n, p, |i, j| {
        let r = &data.records[i];
        match j {
            0 => 1.0,
            1 => f64::from(r.treatment),
            _ => r.covariates[keep[j - 2]],
        }
    });
    let mut roles = vec![ColumnRole::Intercept, ColumnRole::Treatment];
    roles.extend(keep.iter().map(|&j| ColumnRole::Covariate(data.covariate_names[j].clone())));
    DesignMatrix {
        matrix,
        roles,
        retained: keep,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankReport {
    FullRank,
    /// Column indices that lie in the span of the columns before them.
    Deficient(Vec<usize>),
}

impl RankReport {
    pub fn is_full(&self) -> bool {
        matches!(self, RankReport::FullRank)
    }
}

/// Column-ordered Gram-Schmidt rank check.
///
/// A column is flagged when its residual after projecting out the earlier
/// independent columns has norm below `RANK_TOLERANCE` times its own norm.
pub fn check_rank(design: &DesignMatrix) -> RankReport {
    check_rank_matrix(design.matrix())
}

pub(crate) fn check_rank_matrix(m: &DMatrix<f64>) -> RankReport {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut deficient = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).into_owned();
        let norm = col.norm();
        let mut resid = col;
        // two passes of modified Gram-Schmidt for numerical stability
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&resid);
                resid.axpy(-proj, q, 1.0);
            }
        }
        let rnorm = resid.norm();
        if norm == 0.0 || rnorm <= RANK_TOLERANCE * norm {
            deficient.push(j);
        } else {
            basis.push(resid / rnorm);
        }
    }
    if deficient.is_empty() {
        RankReport::FullRank
    } else {
        RankReport::Deficient(deficient)
    }
}
