//! Data-generating scenarios and their true marginal effects.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize};

use crate::linalg::expit;

pub const QUADRATURE_NODES: usize = 64;

/// Outcome model
/// `logit P(Y=1) = β0 + β1 Z + β2 Xc + β3 Xb + β4 Xc² + β5 Xc Z + β6 Xc² Z`
/// with `Xc ~ N(0,1)` and `Xb ~ Bernoulli(1/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub label: String,
    #[serde(deserialize_with = "padded_beta")]
    pub beta: [f64; 7],
    /// Overrides the quadrature value when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_rd: Option<f64>,
}

fn padded_beta<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 7], D::Error> {
    let v = Vec::<f64>::deserialize(d)?;
    if v.is_empty() || v.len() > 7 {
        return Err(serde::de::Error::custom(format!(
            "beta must have 1 to 7 entries, got {}",
            v.len()
        )));
    }
    let mut out = [0.0; 7];
    out[..v.len()].copy_from_slice(&v);
    Ok(out)
}

impl Scenario {
    pub fn new(label: impl Into<String>, beta: &[f64]) -> Self {
        assert!(!beta.is_empty() && beta.len() <= 7, "1 to 7 coefficients");
        let mut b = [0.0; 7];
        b[..beta.len()].copy_from_slice(beta);
        Self {
            label: label.into(),
            beta: b,
            true_rd: None,
        }
    }

    /// The five standard scenarios: 1-3 match the fitted working model,
    /// 4-5 do not.
    pub fn preset(number: u8) -> Option<Self> {
        let (label, beta): (&str, &[f64]) = match number {
            1 => ("Scenario 1: moderate treatment effect", &[-1.7, 1.1, 3.0, -3.0]),
            2 => ("Scenario 2: large treatment effect", &[-4.0, 2.0, 4.2, -3.0]),
            3 => ("Scenario 3: no treatment effect", &[-1.2, 0.0, 1.0, -1.0]),
            4 => (
                "Scenario 4: omitted nonlinear and interaction terms",
                &[-4.0, 2.0, 4.2, -3.0, 1.0, -0.2, 0.2],
            ),
            5 => ("Scenario 5: covariates unrelated to outcome", &[-2.2, 0.7]),
            _ => return None,
        };
        Some(Self::new(label, beta))
    }

    pub fn linear_predictor(&self, z: f64, x_cont: f64, x_cat: f64) -> f64 {
        let b = &self.beta;
        b[0] + b[1] * z
            + b[2] * x_cont
            + b[3] * x_cat
            + b[4] * x_cont * x_cont
            + b[5] * x_cont * z
            + b[6] * x_cont * x_cont * z
    }

    pub fn probability(&self, z: f64, x_cont: f64, x_cat: f64) -> f64 {
        expit(self.linear_predictor(z, x_cont, x_cat))
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|b| b.is_finite()) && self.true_rd.is_none_or(f64::is_finite)
    }

    /// Risk difference used to score coverage.
    pub fn target_rd(&self) -> f64 {
        self.true_rd.unwrap_or_else(|| true_effect(self).rd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueEffect {
    pub pi0: f64,
    pub pi1: f64,
    pub rd: f64,
}

/// Nodes and weights for `E[f(X)]`, `X ~ N(0,1)`, by the Golub-Welsch
/// eigenvalue method on the probabilists' Hermite recurrence.
pub fn gauss_hermite(nodes: usize) -> Vec<(f64, f64)> {
    let jacobi = DMatrix::from_fn(nodes, nodes, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut rule: Vec<(f64, f64)> = (0..nodes)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to remove eigen-solver asymmetry
    let m = rule.len();
    for k in 0..m / 2 {
        let x = 0.5 * (rule[m - 1 - k].0 - rule[k].0);
        let w = 0.5 * (rule[m - 1 - k].1 + rule[k].1);
        rule[k] = (-x, w);
        rule[m - 1 - k] = (x, w);
    }
    if m % 2 == 1 {
        rule[m / 2].0 = 0.0;
    }
    let total: f64 = rule.iter().map(|r| r.1).sum();
    rule.iter().map(|&(x, w)| (x, w / total)).collect()
}

/// Marginal response probabilities under each assignment, integrating
/// the continuous covariate by Gauss-Hermite quadrature and the binary one
/// exactly.
pub fn true_effect(scenario: &Scenario) -> TrueEffect {
    let rule = gauss_hermite(QUADRATURE_NODES);
    let mut pi = [0.0; 2];
    for (arm, acc) in pi.iter_mut().enumerate() {
        let z = arm as f64;
        for x_cat in [0.0, 1.0] {
            let s: f64 = rule
                .iter()
                .map(|&(x, w)| w * scenario.probability(z, x, x_cat))
                .sum();
            *acc += 0.5 * s;
        }
    }
    // identical arms give an exact zero
    let rd = if scenario.beta[1] == 0.0 && scenario.beta[5] == 0.0 && scenario.beta[6] == 0.0 {
        0.0
    } else {
        pi[1] - pi[0]
    };
    TrueEffect {
        pi0: pi[0],
        pi1: pi[1],
        rd,
    }
}

pub fn true_rd(scenario: &Scenario) -> f64 {
    true_effect(scenario).rd
}
