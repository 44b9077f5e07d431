//! Variance estimators for the standardized risk difference.
//!
//! The delta-method family plugs a coefficient covariance `V` into
//! `gᵀ V g`, where `g` is the gradient of the risk difference with respect
//! to the coefficients. `V` is either the model-based `(XᵀWX)^{-1}` or a
//! sandwich `V_model · Xᵀ diag(ω) X · V_model` whose residual weights `ω`
//! follow the HC conventions below. The "proposed" estimators add the
//! between-covariate term `σ̂²_RD / n` to the conditional variance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::glm::{fit_irls, FitConfig, FitError, LogisticFit};
use crate::linalg::{quad_form, sample_covariance, sample_variance, spd_inverse, symmetrize, weighted_crossprod};
use crate::standardization::{estimate_rd, predict_counterfactual, CounterfactualPredictions, RdEstimate};
use crate::trial_data::{build_design, TrialDataset};

/// Smallest admissible `1 - h_i` for weights that divide by it.
pub const LEVERAGE_FLOOR: f64 = 1e-12;
/// Largest admissible condition number of the information matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VarianceError {
    #[error("subject {index} has leverage {leverage} too close to 1 for {hc}")]
    DegenerateLeverage {
        index: usize,
        leverage: f64,
        hc: HcType,
    },
    #[error("information matrix is numerically singular (condition number {condition:e})")]
    SingularInformation { condition: f64 },
    #[error("treatment arm {arm} has {size} subjects; need at least 2")]
    DegenerateArm { arm: u8, size: usize },
    #[error("{0} needs more subjects than coefficients")]
    NoResidualDegreesOfFreedom(HcType),
    #[error("variance estimate is negative ({0:e})")]
    Negative(f64),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Residual weighting schemes for the sandwich meat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HcType {
    Const,
    Hc0,
    Hc1,
    Hc2,
    Hc3,
    Hc4,
    Hc4m,
    Hc5,
}

impl HcType {
    pub const ALL: [HcType; 8] = [
        HcType::Const,
        HcType::Hc0,
        HcType::Hc1,
        HcType::Hc2,
        HcType::Hc3,
        HcType::Hc4,
        HcType::Hc4m,
        HcType::Hc5,
    ];

    fn divides_by_leverage(self) -> bool {
        !matches!(self, HcType::Const | HcType::Hc0 | HcType::Hc1)
    }
}

impl fmt::Display for HcType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HcType::Const => "const",
            HcType::Hc0 => "HC0",
            HcType::Hc1 => "HC1",
            HcType::Hc2 => "HC2",
            HcType::Hc3 => "HC3",
            HcType::Hc4 => "HC4",
            HcType::Hc4m => "HC4m",
            HcType::Hc5 => "HC5",
        })
    }
}

impl FromStr for HcType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HcType::ALL
            .into_iter()
            .find(|h| h.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown HC type `{s}`"))
    }
}

/// Which coefficient covariance feeds the delta method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CovarianceKind {
    Model,
    Sandwich(HcType),
}

impl fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceKind::Model => f.write_str("model"),
            CovarianceKind::Sandwich(hc) => hc.fmt(f),
        }
    }
}

impl FromStr for CovarianceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("model") {
            Ok(CovarianceKind::Model)
        } else {
            s.parse().map(CovarianceKind::Sandwich)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarianceMethod {
    /// Delta method, model-based covariance.
    M1DeltaModel,
    M2DeltaHc2,
    M3DeltaHc3,
    /// Efficient influence function.
    M4Eif,
    M5SemiParametric,
    /// Delta method with HC2 plus `σ̂²_RD / n`.
    M6ProposedHc2,
    M7ProposedHc3,
    /// Treatment-only model, proposed estimator with HC2.
    M8UnadjustedHc2,
    M9UnadjustedHc3,
    /// The proposed estimator with any coefficient covariance.
    ProposedExtended(CovarianceKind),
}

impl VarianceMethod {
    pub const MAIN: [VarianceMethod; 9] = [
        VarianceMethod::M1DeltaModel,
        VarianceMethod::M2DeltaHc2,
        VarianceMethod::M3DeltaHc3,
        VarianceMethod::M4Eif,
        VarianceMethod::M5SemiParametric,
        VarianceMethod::M6ProposedHc2,
        VarianceMethod::M7ProposedHc3,
        VarianceMethod::M8UnadjustedHc2,
        VarianceMethod::M9UnadjustedHc3,
    ];

    /// The nine main methods followed by every extended proposed variant.
    pub fn all() -> Vec<VarianceMethod> {
        let mut v = Self::MAIN.to_vec();
        v.push(VarianceMethod::ProposedExtended(CovarianceKind::Model));
        v.extend(
            HcType::ALL
                .into_iter()
                .map(|h| VarianceMethod::ProposedExtended(CovarianceKind::Sandwich(h))),
        );
        v
    }

    /// Whether the method uses the treatment-only model rather than the
    /// covariate-adjusted one.
    pub fn is_unadjusted(self) -> bool {
        matches!(self, VarianceMethod::M8UnadjustedHc2 | VarianceMethod::M9UnadjustedHc3)
    }

    pub fn label(self) -> String {
        match self {
            VarianceMethod::M1DeltaModel => "Delta (model)".into(),
            VarianceMethod::M2DeltaHc2 => "Delta (HC2)".into(),
            VarianceMethod::M3DeltaHc3 => "Delta (HC3)".into(),
            VarianceMethod::M4Eif => "EIF".into(),
            VarianceMethod::M5SemiParametric => "Semi-parametric".into(),
            VarianceMethod::M6ProposedHc2 => "Proposed (HC2)".into(),
            VarianceMethod::M7ProposedHc3 => "Proposed (HC3)".into(),
            VarianceMethod::M8UnadjustedHc2 => "Unadjusted (HC2)".into(),
            VarianceMethod::M9UnadjustedHc3 => "Unadjusted (HC3)".into(),
            VarianceMethod::ProposedExtended(kind) => format!("Proposed ({kind})"),
        }
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceMethod::ProposedExtended(kind) => write!(f, "Proposed({kind})"),
            other => {
                let idx = VarianceMethod::MAIN.iter().position(|m| m == other).unwrap();
                write!(f, "M{}", idx + 1)
            }
        }
    }
}

impl FromStr for VarianceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Some(rest) = t.strip_prefix('M').or_else(|| t.strip_prefix('m')) {
            if let Ok(k) = rest.parse::<usize>() {
                if (1..=9).contains(&k) {
                    return Ok(VarianceMethod::MAIN[k - 1]);
                }
            }
        }
        let lower = t.to_ascii_lowercase();
        if let Some(inner) = lower
            .strip_prefix("proposed")
            .map(str::trim)
            .and_then(|r| r.strip_prefix('('))
            .and_then(|r| r.strip_suffix(')'))
        {
            return inner.trim().parse().map(VarianceMethod::ProposedExtended);
        }
        Err(format!(
            "unknown method `{s}` (expected M1..M9 or Proposed(<model|const|HC0..HC5|HC4m>))"
        ))
    }
}

impl Serialize for VarianceMethod {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VarianceMethod {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub method: VarianceMethod,
    pub value: f64,
}

/// Residual weights `ω_i` of the sandwich meat.
pub fn meat_weights(fit: &LogisticFit, hc: HcType) -> Result<DVector<f64>, VarianceError> {
    let n = fit.n();
    let p = fit.p();
    let res = fit.residuals();
    let h = fit.hat_diagonals();

    if matches!(hc, HcType::Const | HcType::Hc1) && n <= p {
        return Err(VarianceError::NoResidualDegreesOfFreedom(hc));
    }
    if hc.divides_by_leverage() {
        if let Some((index, &leverage)) =
            h.iter().enumerate().find(|(_, &hi)| !(1.0 - hi >= LEVERAGE_FLOOR))
        {
            return Err(VarianceError::DegenerateLeverage {
                index,
                leverage,
                hc,
            });
        }
    }

    let nf = n as f64;
    // leverage scaling uses p recovered from the hat trace, as it equals p at the MLE
    let pf = h.sum().round().max(1.0);
    let sq = res.map(|e| e * e);
    let w = match hc {
        HcType::Const => DVector::from_element(n, sq.sum() / (n - p) as f64),
        HcType::Hc0 => sq,
        HcType::Hc1 => sq * (nf / (n - p) as f64),
        HcType::Hc2 => sq.zip_map(h, |e2, hi| e2 / (1.0 - hi)),
        HcType::Hc3 => sq.zip_map(h, |e2, hi| e2 / ((1.0 - hi) * (1.0 - hi))),
        HcType::Hc4 => sq.zip_map(h, |e2, hi| {
            let delta = (nf * hi / pf).min(4.0);
            e2 / (1.0 - hi).powf(delta)
        }),
        HcType::Hc4m => sq.zip_map(h, |e2, hi| {
            let r = nf * hi / pf;
            let delta = r.min(1.0) + r.min(1.5);
            e2 / (1.0 - hi).powf(delta)
        }),
        HcType::Hc5 => {
            let h_max = h.max();
            let cap = (0.7 * nf * h_max / pf).max(4.0);
            sq.zip_map(h, |e2, hi| {
                let delta = 0.5 * (nf * hi / pf).min(cap);
                e2 / (1.0 - hi).powf(delta)
            })
        }
    };
    Ok(w)
}

/// `V_model · Xᵀ diag(ω) X · V_model`.
pub fn sandwich_covariance(fit: &LogisticFit, hc: HcType) -> Result<DMatrix<f64>, VarianceError> {
    let omega = meat_weights(fit, hc)?;
    let meat = weighted_crossprod(fit.design().matrix(), &omega);
    let v = fit.model_covariance();
    Ok(symmetrize(&(v * meat * v)))
}

pub fn coefficient_covariance(
    fit: &LogisticFit,
    kind: CovarianceKind,
) -> Result<DMatrix<f64>, VarianceError> {
    match kind {
        CovarianceKind::Model => Ok(fit.model_covariance().clone()),
        CovarianceKind::Sandwich(hc) => sandwich_covariance(fit, hc),
    }
}

/// `gᵀ V g` with `g` the risk-difference gradient.
pub fn delta_conditional_variance(rd: &RdEstimate, v: &DMatrix<f64>) -> f64 {
    quad_form(v, &rd.contrast_gradient()).max(0.0)
}

/// Conditional variance plus `σ̂²_RD / n`.
pub fn proposed_unconditional_variance(rd: &RdEstimate, v: &DMatrix<f64>, n: usize) -> f64 {
    delta_conditional_variance(rd, v) + rd.sigma2_rd / n as f64
}

/// Per-subject influence values `λ_i(RD)`.
pub fn eif_contributions(
    fit: &LogisticFit,
    rd: &RdEstimate,
    preds: &CounterfactualPredictions,
) -> Result<DVector<f64>, VarianceError> {
    let x = fit.design().matrix();
    let n = fit.n();
    let w = fit.fitted().map(|v| v * (1.0 - v));
    let info = weighted_crossprod(x, &w) / n as f64;

    let eig = SymmetricEigen::new(info.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(VarianceError::SingularInformation { condition });
    }
    let info_inv = spd_inverse(&info).ok_or(VarianceError::SingularInformation { condition })?;

    // rows: λ_i(b)ᵀ = ε_i x_iᵀ M⁻¹
    let g = rd.contrast_gradient();
    let lever = info_inv * g;
    let coef_part = (x * lever).component_mul(fit.residuals());
    let centered = preds.pi1.add_scalar(-rd.pi_bar1) - preds.pi0.add_scalar(-rd.pi_bar0);
    Ok(centered + coef_part)
}

/// `1/n` times the sample variance of the influence values.
pub fn eif_variance(
    fit: &LogisticFit,
    rd: &RdEstimate,
    preds: &CounterfactualPredictions,
) -> Result<f64, VarianceError> {
    let lambda = eif_contributions(fit, rd, preds)?;
    Ok(sample_variance(lambda.as_slice()).max(0.0) / fit.n() as f64)
}

/// Variance from the doubly robust representation with arm-specific
/// allocation fractions.
pub fn semiparametric_variance(
    fit: &LogisticFit,
    preds: &CounterfactualPredictions,
) -> Result<f64, VarianceError> {
    semiparametric_from_parts(
        fit.outcomes().as_slice(),
        fit.design().treatment().as_slice(),
        preds.pi0.as_slice(),
        preds.pi1.as_slice(),
    )
}

fn semiparametric_from_parts(
    y: &[f64],
    z: &[f64],
    pi0: &[f64],
    pi1: &[f64],
) -> Result<f64, VarianceError> {
    let n = y.len();
    let split = |v: &[f64], arm: f64| -> Vec<f64> {
        v.iter().zip(z).filter(|(_, &zi)| zi == arm).map(|(&x, _)| x).collect()
    };
    let y_arm = [split(y, 0.0), split(y, 1.0)];
    for (arm, ys) in y_arm.iter().enumerate() {
        if ys.len() < 2 {
            return Err(VarianceError::DegenerateArm {
                arm: arm as u8,
                size: ys.len(),
            });
        }
    }
    let pi = [pi0, pi1];
    // pi_in_arm[k][j]: predictions under assignment k for subjects in arm j
    let pi_in_arm = [
        [split(pi0, 0.0), split(pi0, 1.0)],
        [split(pi1, 0.0), split(pi1, 1.0)],
    ];
    let nf = n as f64;

    let arm_var = |j: usize| -> f64 {
        let theta = y_arm[j].len() as f64 / nf;
        let resid: Vec<f64> =
            y_arm[j].iter().zip(&pi_in_arm[j][j]).map(|(yi, pij)| yi - pij).collect();
        (sample_variance(&resid) / theta + 2.0 * sample_covariance(&y_arm[j], &pi_in_arm[j][j])
            - sample_variance(pi[j]))
            / nf
    };
    let var0 = arm_var(0);
    let var1 = arm_var(1);
    let cov01 = (sample_covariance(&y_arm[0], &pi_in_arm[1][0])
        + sample_covariance(&y_arm[1], &pi_in_arm[0][1])
        - sample_covariance(pi0, pi1))
        / nf;
    nonnegative(var1 - 2.0 * cov01 + var0)
}

fn nonnegative(v: f64) -> Result<f64, VarianceError> {
    // rounding in the differences of moments
    const SLACK: f64 = 1e-15;
    if v >= 0.0 {
        Ok(v)
    } else if v > -SLACK {
        Ok(0.0)
    } else {
        Err(VarianceError::Negative(v))
    }
}

/// Treatment-only fit, standardization and the proposed variance with the
/// given sandwich type.
pub fn unadjusted_pipeline(
    data: &TrialDataset,
    hc: HcType,
    config: &FitConfig,
) -> Result<(RdEstimate, VarianceEstimate), VarianceError> {
    let design = build_design(data, &[]);
    let fit = fit_irls(&design, &data.outcomes(), config)?;
    let preds = predict_counterfactual(&fit);
    let rd = estimate_rd(&preds, &fit);
    let v = sandwich_covariance(&fit, hc)?;
    let method = match hc {
        HcType::Hc2 => VarianceMethod::M8UnadjustedHc2,
        HcType::Hc3 => VarianceMethod::M9UnadjustedHc3,
        other => VarianceMethod::ProposedExtended(CovarianceKind::Sandwich(other)),
    };
    let value = proposed_unconditional_variance(&rd, &v, fit.n());
    Ok((rd, VarianceEstimate { method, value }))
}

/// A fitted and standardized model from which any variance method can be
/// evaluated.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub fit: LogisticFit,
    pub preds: CounterfactualPredictions,
    pub rd: RdEstimate,
}

impl Standardized {
    pub fn new(fit: LogisticFit) -> Self {
        let preds = predict_counterfactual(&fit);
        let rd = estimate_rd(&preds, &fit);
        Self { fit, preds, rd }
    }

    /// Evaluates `method` on this model. The M8/M9 tags are evaluated as
    /// their proposed counterparts; pass a treatment-only model for them.
    pub fn variance(&self, method: VarianceMethod) -> Result<VarianceEstimate, VarianceError> {
        use VarianceMethod::*;
        let n = self.fit.n();
        let value = match method {
            M1DeltaModel => delta_conditional_variance(&self.rd, self.fit.model_covariance()),
            M2DeltaHc2 => {
                delta_conditional_variance(&self.rd, &sandwich_covariance(&self.fit, HcType::Hc2)?)
            }
            M3DeltaHc3 => {
                delta_conditional_variance(&self.rd, &sandwich_covariance(&self.fit, HcType::Hc3)?)
            }
            M4Eif => eif_variance(&self.fit, &self.rd, &self.preds)?,
            M5SemiParametric => semiparametric_variance(&self.fit, &self.preds)?,
            M6ProposedHc2 | M8UnadjustedHc2 => proposed_unconditional_variance(
                &self.rd,
                &sandwich_covariance(&self.fit, HcType::Hc2)?,
                n,
            ),
            M7ProposedHc3 | M9UnadjustedHc3 => proposed_unconditional_variance(
                &self.rd,
                &sandwich_covariance(&self.fit, HcType::Hc3)?,
                n,
            ),
            ProposedExtended(kind) => {
                proposed_unconditional_variance(&self.rd, &coefficient_covariance(&self.fit, kind)?, n)
            }
        };
        if !value.is_finite() {
            return Err(VarianceError::Negative(value));
        }
        Ok(VarianceEstimate { method, value })
    }
}
