//! Oracle-free identities checked on randomly generated datasets.

use covadj::simulation::{gen_covariates, gen_outcome, randomize, RandomizationScheme, Scenario};
use covadj::variance::{
    delta_conditional_variance, eif_contributions, proposed_unconditional_variance,
    sandwich_covariance,
};
use covadj::{
    build_design, fit_irls, fit_with_fallback, FitConfig, HcType, Standardized, TrialDataset,
    VarianceMethod,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A trial with 40 to 300 subjects, random coefficients and allocation.
pub fn random_dataset(rng: &mut ChaCha8Rng) -> TrialDataset {
    let n = rng.random_range(40..=300);
    let beta = [
        rng.random_range(-2.0..0.5),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.5..1.5),
        rng.random_range(-1.5..1.5),
        0.0,
        0.0,
        0.0,
    ];
    let scenario = Scenario::new("random", &beta);
    let scheme = if rng.random_bool(0.5) {
        RandomizationScheme::one_to_one()
    } else {
        RandomizationScheme::two_to_one()
    };
    let (xc, xb) = gen_covariates(n, rng);
    let z = randomize(&xb, &scheme, rng);
    let y = gen_outcome(&z, &xc, &xb, &scenario, rng);
    let z: Vec<u8> = z.iter().map(|&v| v as u8).collect();
    TrialDataset::from_columns(&y, &z, vec![("x_cont".into(), xc), ("x_cat".into(), xb)]).unwrap()
}

fn rel_ge(a: f64, b: f64) -> bool {
    a >= b - 1e-12 * b.abs().max(1e-300)
}

/// Returns `Ok(false)` when the dataset cannot be fitted at all.
pub fn check_dataset(data: &TrialDataset) -> Result<bool, String> {
    let cfg = FitConfig::default();
    let Ok(fit) = fit_with_fallback(data, &cfg) else {
        return Ok(false);
    };
    let m = Standardized::new(fit);
    let fit = &m.fit;

    let delta = |hc| -> Result<f64, String> {
        let v = sandwich_covariance(fit, hc).map_err(|e| e.to_string())?;
        Ok(delta_conditional_variance(&m.rd, &v))
    };
    let (v0, v2, v3) = (delta(HcType::Hc0)?, delta(HcType::Hc2)?, delta(HcType::Hc3)?);
    if !(rel_ge(v3, v2) && rel_ge(v2, v0)) {
        return Err(format!("HC ordering violated: {v0} {v2} {v3}"));
    }

    let v = sandwich_covariance(fit, HcType::Hc2).map_err(|e| e.to_string())?;
    let cond = delta_conditional_variance(&m.rd, &v);
    let prop = proposed_unconditional_variance(&m.rd, &v, fit.n());
    if !(prop >= cond) {
        return Err(format!("proposed {prop} below conditional {cond}"));
    }

    let score = fit.score();
    if score.amax() >= 1e-6 {
        return Err(format!("score residual {:e}", score.amax()));
    }
    // intercept and treatment columns: residuals sum to zero within each arm
    let z = fit.design().treatment();
    for arm in [0.0, 1.0] {
        let s: f64 =
            fit.residuals().iter().zip(z.iter()).filter(|(_, &zi)| zi == arm).map(|(r, _)| r).sum();
        if s.abs() >= 1e-8 {
            return Err(format!("arm {arm} calibration {s:e}"));
        }
    }

    let trace = fit.hat_diagonals().sum();
    if (trace - fit.p() as f64).abs() >= 1e-8 {
        return Err(format!("hat trace {trace} for p = {}", fit.p()));
    }

    let lambda = eif_contributions(fit, &m.rd, &m.preds).map_err(|e| e.to_string())?;
    if lambda.mean().abs() >= 1e-8 {
        return Err(format!("EIF mean {:e}", lambda.mean()));
    }

    // treatment-only model: no between-covariate term, M6 = M8
    let unadj = fit_irls(&build_design(data, &[]), &data.outcomes(), &cfg);
    if let Ok(u) = unadj {
        let u = Standardized::new(u);
        let (r0, r1) = data.arm_response_rates();
        if (u.rd.rd - (r1 - r0)).abs() >= 1e-12 {
            return Err(format!("unadjusted rd {} vs {}", u.rd.rd, r1 - r0));
        }
        let a = u.variance(VarianceMethod::M6ProposedHc2).map_err(|e| e.to_string())?.value;
        let b = u.variance(VarianceMethod::M2DeltaHc2).map_err(|e| e.to_string())?.value;
        if u.rd.sigma2_rd != 0.0 || (a - b).abs() >= 1e-12 {
            return Err(format!("collapse violated: {a} vs {b}"));
        }
    }
    Ok(true)
}
