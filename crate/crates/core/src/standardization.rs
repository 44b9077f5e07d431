//! G-computation: predict every subject under both treatment assignments,
//! average over the whole sample and contrast.

use nalgebra::{DMatrix, DVector};

use crate::glm::LogisticFit;
use crate::linalg::{expit, sample_variance};

/// Per-subject predicted probabilities with treatment forced to 1 and to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPredictions {
    pub pi1: DVector<f64>,
    pub pi0: DVector<f64>,
}

impl CounterfactualPredictions {
    pub fn n(&self) -> usize {
        self.pi1.len()
    }

    /// Subject-level contrasts `π̂_i(1) - π̂_i(0)`.
    pub fn contrasts(&self) -> DVector<f64> {
        &self.pi1 - &self.pi0
    }
}

/// Standardized arm averages, the risk difference and the pieces needed by
/// the delta-method variance estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct RdEstimate {
    pub pi_bar1: f64,
    pub pi_bar0: f64,
    pub rd: f64,
    /// Gradient of `pi_bar1` with respect to the coefficients.
    pub grad1: DVector<f64>,
    /// Gradient of `pi_bar0` with respect to the coefficients.
    pub grad0: DVector<f64>,
    /// Sample variance (divisor n - 1) of the subject-level contrasts.
    pub sigma2_rd: f64,
}

impl RdEstimate {
    /// `grad1 - grad0`, the gradient of the risk difference.
    pub fn contrast_gradient(&self) -> DVector<f64> {
        &self.grad1 - &self.grad0
    }
}

/// Predictions use the fit's own design, so covariates dropped by the
/// fallback are excluded here too.
pub fn predict_counterfactual(fit: &LogisticFit) -> CounterfactualPredictions {
    let b = fit.coefficients();
    let predict = |x: DMatrix<f64>| (x * b).map(expit);
    CounterfactualPredictions {
        pi1: predict(fit.design().with_treatment(1.0)),
        pi0: predict(fit.design().with_treatment(0.0)),
    }
}

pub fn estimate_rd(preds: &CounterfactualPredictions, fit: &LogisticFit) -> RdEstimate {
    let n = preds.n() as f64;
    let pi_bar1 = preds.pi1.mean();
    let pi_bar0 = preds.pi0.mean();

    let gradient = |x: DMatrix<f64>, pi: &DVector<f64>| {
        let w = pi.map(|v| v * (1.0 - v));
        x.transpose() * w / n
    };
    let grad1 = gradient(fit.design().with_treatment(1.0), &preds.pi1);
    let grad0 = gradient(fit.design().with_treatment(0.0), &preds.pi0);

    let contrasts = preds.contrasts();
    let sigma2_rd = if fit.retained_covariates().is_empty() {
        // every contrast is the same number
        0.0
    } else {
        sample_variance(contrasts.as_slice()).max(0.0)
    };

    RdEstimate {
        pi_bar1,
        pi_bar0,
        rd: pi_bar1 - pi_bar0,
        grad1,
        grad0,
        sigma2_rd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit_with_fallback, FitConfig};
    use crate::trial_data::TrialDataset;

    fn rates_0p2_0p3() -> TrialDataset {
        let mut y = Vec::new();
        let mut z = Vec::new();
        for (arm, events) in [(0u8, 2), (1u8, 3)] {
            for i in 0..10 {
                y.push(u8::from(i < events));
                z.push(arm);
            }
        }
        TrialDataset::from_columns(&y, &z, vec![]).unwrap()
    }

    #[test]
    fn treatment_only_predictions_are_arm_rates() {
        let fit = fit_with_fallback(&rates_0p2_0p3(), &FitConfig::default()).unwrap();
        let preds = predict_counterfactual(&fit);
        assert!(preds.pi1.iter().all(|&v| (v - 0.3).abs() < 1e-12));
        assert!(preds.pi0.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        let rd = estimate_rd(&preds, &fit);
        assert!((rd.rd - 0.1).abs() < 1e-12);
        assert_eq!(rd.sigma2_rd, 0.0);
    }

    /// Six subjects, fixed coefficients: brute-force averaging of the
    /// logistic formula.
    #[test]
    fn six_subject_brute_force() {
        let y = [0, 1, 1, 0, 1, 0];
        let z = [0, 1, 0, 1, 1, 0];
        let w = [0.4, -1.1, 2.0, 0.3, -0.6, 1.2];
        let data =
            TrialDataset::from_columns(&y, &z, vec![("w".into(), w.to_vec())]).unwrap();
        let fit = fit_with_fallback(&data, &FitConfig::default()).unwrap();
        assert_eq!(fit.retained_covariates(), &[0]);
        let b = fit.coefficients();
        let f = |t: f64, wi: f64| 1.0 / (1.0 + (-(b[0] + b[1] * t + b[2] * wi)).exp());
        let brute1: f64 = w.iter().map(|&wi| f(1.0, wi)).sum::<f64>() / 6.0;
        let brute0: f64 = w.iter().map(|&wi| f(0.0, wi)).sum::<f64>() / 6.0;
        let rd = estimate_rd(&predict_counterfactual(&fit), &fit);
        assert!((rd.pi_bar1 - brute1).abs() < 1e-14);
        assert!((rd.pi_bar0 - brute0).abs() < 1e-14);
        assert!((rd.rd - (brute1 - brute0)).abs() < 1e-14);
        assert!(rd.sigma2_rd > 0.0);
    }
}
