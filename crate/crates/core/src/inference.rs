//! Wald intervals and p-values, and a one-call analysis of a dataset under
//! several variance methods.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::glm::{fit_irls, fit_with_fallback, FitConfig};
use crate::trial_data::{build_design, TrialDataset};
use crate::variance::{Standardized, VarianceMethod};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InferenceError {
    #[error("variance must be nonnegative, got {0}")]
    NegativeVariance(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldInterval {
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// `rd ± z_{1-α/2} √variance` and the two-sided p-value for `RD = 0`.
pub fn wald_interval(rd: f64, variance: f64, alpha: f64) -> Result<WaldInterval, InferenceError> {
    if !(variance >= 0.0) {
        return Err(InferenceError::NegativeVariance(variance));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidAlpha(alpha));
    }
    let se = variance.sqrt();
    let half = normal_quantile(1.0 - alpha / 2.0) * se;
    let p_value = if se == 0.0 {
        if rd == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        // 2(1 - Φ(t)) = erfc(t/√2), without cancellation in the tail
        erfc(rd.abs() / se / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    };
    Ok(WaldInterval {
        ci_low: rd - half,
        ci_high: rd + half,
        p_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceSummary {
    pub method: VarianceMethod,
    pub rd: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub fallback_steps: usize,
}

impl InferenceSummary {
    pub fn rejects(&self) -> bool {
        self.p_value < self.alpha
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// A method that could not produce an estimate for this dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Error)]
#[error("{method}: {message}")]
pub struct MethodFailure {
    pub method: VarianceMethod,
    pub message: String,
}

pub type MethodOutcome = Result<InferenceSummary, MethodFailure>;

/// Summarizes a standardized model under one variance method.
pub fn summarize(
    model: &Standardized,
    method: VarianceMethod,
    alpha: f64,
) -> MethodOutcome {
    let fail = |message: String| MethodFailure { method, message };
    let var = model.variance(method).map_err(|e| fail(e.to_string()))?;
    let w = wald_interval(model.rd.rd, var.value, alpha).map_err(|e| fail(e.to_string()))?;
    Ok(InferenceSummary {
        method,
        rd: model.rd.rd,
        se: var.value.sqrt(),
        ci_low: w.ci_low,
        ci_high: w.ci_high,
        p_value: w.p_value,
        alpha,
        fallback_steps: model.fit.fallback_steps(),
    })
}

/// Runs every requested method on `data`, one outcome per method in the
/// order given.
///
/// Covariate-adjusted methods share one fit (with fallback) and therefore one
/// point estimate; M8 and M9 share the treatment-only fit. Failures are
/// reported per method.
pub fn analyze_all(
    data: &TrialDataset,
    methods: &[VarianceMethod],
    alpha: f64,
    config: &FitConfig,
) -> Vec<MethodOutcome> {
    let need_adjusted = methods.iter().any(|m| !m.is_unadjusted());
    let need_unadjusted = methods.iter().any(|m| m.is_unadjusted());

    let adjusted = need_adjusted.then(|| {
        fit_with_fallback(data, config)
            .map(Standardized::new)
            .map_err(|e| e.to_string())
    });
    let unadjusted = need_unadjusted.then(|| {
        fit_irls(&build_design(data, &[]), &data.outcomes(), config)
            .map(Standardized::new)
            .map_err(|e| e.to_string())
    });

    methods
        .iter()
        .map(|&method| {
            let model = if method.is_unadjusted() {
                unadjusted.as_ref()
            } else {
                adjusted.as_ref()
            };
            match model.expect("model computed for every requested family") {
                Ok(m) => summarize(m, method, alpha),
                Err(msg) => Err(MethodFailure {
                    method,
                    message: msg.clone(),
                }),
            }
        })
        .collect()
}
