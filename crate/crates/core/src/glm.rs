//! Maximum-likelihood logistic regression by IRLS (Newton-Raphson on the
//! canonical-link binomial likelihood), plus the covariate-dropping fallback
//! used when a fit does not converge.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{expit, softplus, spd_inverse, weighted_crossprod};
use crate::trial_data::{build_design, check_rank_matrix, DesignMatrix, TrialDataset};

const MAX_STEP_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Convergence when the largest absolute coefficient change falls below this.
    pub coef_tolerance: f64,
    /// Fit is declared divergent once any |coefficient| exceeds this.
    pub divergence_bound: f64,
    /// Fit is declared separated once any |linear predictor| exceeds this.
    pub separation_eta_bound: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            coef_tolerance: 1e-8,
            divergence_bound: 1e4,
            separation_eta_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NonConvergenceReason {
    MaxIterations,
    Divergence,
    Separation,
}

impl std::fmt::Display for NonConvergenceReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MaxIterations => "iteration limit reached",
            Self::Divergence => "coefficients diverged",
            Self::Separation => "separation (fitted probabilities numerically 0 or 1)",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitError {
    #[error("logistic regression did not converge: {reason}")]
    NonConvergence { reason: NonConvergenceReason },
    #[error("treatment and intercept columns are collinear")]
    RankDeficient,
}

impl FitError {
    fn non_convergence(reason: NonConvergenceReason) -> Self {
        Self::NonConvergence { reason }
    }
}

/// A converged logistic regression and the per-subject quantities derived
/// from it.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    design: DesignMatrix,
    outcomes: DVector<f64>,
    coefficients: DVector<f64>,
    fitted: DVector<f64>,
    residuals: DVector<f64>,
    hat: DVector<f64>,
    v_model: DMatrix<f64>,
    iterations: usize,
    fallback_steps: usize,
}

impl LogisticFit {
    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn outcomes(&self) -> &DVector<f64> {
        &self.outcomes
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Fitted probabilities under the assigned treatment.
    pub fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    /// Response residuals `y_i - π̂_i`.
    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    /// Diagonal of `W^{1/2} X (XᵀWX)^{-1} Xᵀ W^{1/2}`.
    pub fn hat_diagonals(&self) -> &DVector<f64> {
        &self.hat
    }

    /// `(XᵀWX)^{-1}` evaluated at the MLE.
    pub fn model_covariance(&self) -> &DMatrix<f64> {
        &self.v_model
    }

    pub fn retained_covariates(&self) -> &[usize] {
        self.design.retained()
    }

    pub fn fallback_steps(&self) -> usize {
        self.fallback_steps
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    /// `Xᵀ(y - π̂)`; zero at the MLE.
    pub fn score(&self) -> DVector<f64> {
        self.design.matrix().transpose() * &self.residuals
    }
}

fn log_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let eta = x * b;
    eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

/// Fits `logit P(y=1) = Xb` by IRLS starting from `b = 0`.
///
/// Each Newton step is halved (up to ten times) while it lowers the
/// log-likelihood. Bounds in `config` turn runaway iterations into
/// [`FitError::NonConvergence`].
pub fn fit_irls(
    design: &DesignMatrix,
    outcomes: &DVector<f64>,
    config: &FitConfig,
) -> Result<LogisticFit, FitError> {
    let x = design.matrix();
    let (n, p) = x.shape();
    assert_eq!(outcomes.len(), n, "outcome length must match design rows");

    let mut b = DVector::zeros(p);
    let mut ll = log_likelihood(x, outcomes, &b);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let pi = (x * &b).map(expit);
        let w = pi.map(|v| v * (1.0 - v));
        let info = weighted_crossprod(x, &w);
        let score = x.transpose() * (outcomes - &pi);
        let chol = info
            .cholesky()
            .ok_or(FitError::non_convergence(NonConvergenceReason::Divergence))?;
        let mut step = chol.solve(&score);

        let mut candidate = &b + &step;
        let mut ll_new = log_likelihood(x, outcomes, &candidate);
        let slack = 1e-12 * ll.abs().max(1.0);
        let mut halvings = 0;
        while !(ll_new >= ll - slack) && halvings < MAX_STEP_HALVINGS {
            step *= 0.5;
            candidate = &b + &step;
            ll_new = log_likelihood(x, outcomes, &candidate);
            halvings += 1;
        }
        if !(ll_new >= ll - slack) {
            return Err(FitError::non_convergence(NonConvergenceReason::Divergence));
        }

        let change = step.amax();
        b = candidate;
        ll = ll_new;

        if !b.iter().all(|v| v.is_finite()) || b.amax() > config.divergence_bound {
            return Err(FitError::non_convergence(NonConvergenceReason::Divergence));
        }
        if (x * &b).amax() > config.separation_eta_bound {
            return Err(FitError::non_convergence(NonConvergenceReason::Separation));
        }
        if change < config.coef_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FitError::non_convergence(NonConvergenceReason::MaxIterations));
    }

    let fitted = (x * &b).map(expit);
    let w = fitted.map(|v| v * (1.0 - v));
    let info = weighted_crossprod(x, &w);
    let v_model =
        spd_inverse(&info).ok_or(FitError::non_convergence(NonConvergenceReason::Divergence))?;
    let hat = DVector::from_iterator(
        n,
        x.row_iter().zip(w.iter()).map(|(row, &wi)| {
            let r = row.transpose();
            wi * (r.transpose() * &v_model * &r)[(0, 0)]
        }),
    );
    let residuals = outcomes - &fitted;

    Ok(LogisticFit {
        design: design.clone(),
        outcomes: outcomes.clone(),
        coefficients: b,
        fitted,
        residuals,
        hat,
        v_model,
        iterations,
        fallback_steps: 0,
    })
}

/// Fits the full main-effects model, removing covariates one at a time
/// (last declared first) until a fit converges.
///
/// Covariates that are linearly dependent on earlier design columns are
/// removed before fitting; each removal counts as a fallback step. The
/// sequence ends with the treatment-only model, and only a failure there is
/// returned as an error.
pub fn fit_with_fallback(data: &TrialDataset, config: &FitConfig) -> Result<LogisticFit, FitError> {
    let y = data.outcomes();
    let mut retained: Vec<usize> = Vec::new();
    let mut steps = 0;

    if !check_rank_matrix(build_design(data, &[]).matrix()).is_full() {
        return Err(FitError::RankDeficient);
    }
    for j in 0..data.num_covariates() {
        retained.push(j);
        if !check_rank_matrix(build_design(data, &retained).matrix()).is_full() {
            retained.pop();
            steps += 1;
        }
    }

    loop {
        let design = build_design(data, &retained);
        match fit_irls(&design, &y, config) {
            Ok(mut fit) => {
                fit.fallback_steps = steps;
                return Ok(fit);
            }
            Err(e) if retained.is_empty() => return Err(e),
            Err(_) => {
                retained.pop();
                steps += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_data::TrialDataset;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Arms of size 10 with the requested number of responders.
    fn two_arm(events0: usize, events1: usize) -> TrialDataset {
        let mut y = Vec::new();
        let mut z = Vec::new();
        for (arm, events) in [(0u8, events0), (1u8, events1)] {
            for i in 0..10 {
                y.push(u8::from(i < events));
                z.push(arm);
            }
        }
        TrialDataset::from_columns(&y, &z, vec![]).unwrap()
    }

    #[test]
    fn saturated_model_reproduces_group_rates() {
        let data = two_arm(2, 3);
        let fit = fit_with_fallback(&data, &FitConfig::default()).unwrap();
        let b = fit.coefficients();
        assert!((b[0] - logit(0.2)).abs() < 1e-10);
        assert!((b[1] - (logit(0.3) - logit(0.2))).abs() < 1e-10);
        assert!((b[0] + 1.386_294_361_119_890_6).abs() < 1e-10);
        assert!((b[1] - 0.538_996_500_732_687_4).abs() < 1e-10);
        assert_eq!(fit.fallback_steps(), 0);
    }

    #[test]
    fn balanced_half_rates_give_zero_coefficients() {
        let data = two_arm(5, 5);
        let fit = fit_irls(&build_design(&data, &[]), &data.outcomes(), &FitConfig::default())
            .unwrap();
        assert!(fit.coefficients().amax() < 1e-12);
    }

    #[test]
    fn hat_trace_equals_p() {
        let data = two_arm(3, 6);
        let fit = fit_with_fallback(&data, &FitConfig::default()).unwrap();
        assert!((fit.hat_diagonals().sum() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn all_zero_arm_fails_even_unadjusted() {
        let data = two_arm(0, 4);
        let err = fit_with_fallback(&data, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, FitError::NonConvergence { .. }));
    }

    #[test]
    fn separating_covariate_is_dropped() {
        // `marker` equals the outcome exactly
        let y = [0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 0];
        let z = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let age = vec![0.3, -1.2, 0.8, 0.1, -0.4, 1.5, -0.7, 0.2, 1.1, -0.9, 0.6, -0.1];
        let marker = y.iter().map(|&v| f64::from(v)).collect();
        let data = TrialDataset::from_columns(
            &y,
            &z,
            vec![("age".into(), age), ("marker".into(), marker)],
        )
        .unwrap();
        let fit = fit_with_fallback(&data, &FitConfig::default()).unwrap();
        assert_eq!(fit.retained_covariates(), &[0]);
        assert_eq!(fit.fallback_steps(), 1);
    }

    #[test]
    fn collinear_covariate_counts_as_fallback() {
        let y = [0, 1, 0, 1, 1, 0, 1, 0];
        let z = [0, 0, 0, 0, 1, 1, 1, 1];
        let copy = z.iter().map(|&v| f64::from(v)).collect();
        let x = vec![-0.5, -1.2, 0.8, 0.1, -0.4, 1.5, 0.7, 0.2];
        let data =
            TrialDataset::from_columns(&y, &z, vec![("x".into(), x), ("copy".into(), copy)])
                .unwrap();
        let fit = fit_with_fallback(&data, &FitConfig::default()).unwrap();
        assert_eq!(fit.retained_covariates(), &[0]);
        assert_eq!(fit.fallback_steps(), 1);
    }
}
