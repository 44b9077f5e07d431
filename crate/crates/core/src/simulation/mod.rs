//! Monte Carlo harness for the operating characteristics of the variance
//! methods: mean standard error, confidence-interval coverage and rejection
//! rate of `RD = 0`.
//!
//! Replication `i` of a study draws all its randomness from
//! [`replication_rng`]`(master_seed, i)`, and results are aggregated in
//! replication order, so a study's output does not depend on the number of
//! worker threads.

mod generate;
mod scenario;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glm::FitConfig;
use crate::inference::{analyze_all, MethodFailure, MethodOutcome};
use crate::linalg::CompensatedSum;
use crate::trial_data::TrialDataset;
use crate::variance::VarianceMethod;

pub use generate::{gen_covariates, gen_outcome, randomize, replication_rng, RandomizationScheme};
pub use scenario::{gauss_hermite, true_effect, true_rd, Scenario, TrueEffect, QUADRATURE_NODES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_alpha() -> f64 {
    0.05
}

fn default_methods() -> Vec<VarianceMethod> {
    VarianceMethod::MAIN.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub scheme: RandomizationScheme,
    pub n_total: usize,
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub master_seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<VarianceMethod>,
    #[serde(default)]
    pub fit: FitConfig,
}

impl SimConfig {
    pub fn new(
        scenario: Scenario,
        scheme: RandomizationScheme,
        n_total: usize,
        replications: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            scenario,
            scheme,
            n_total,
            replications,
            alpha: default_alpha(),
            master_seed,
            methods: default_methods(),
            fit: FitConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.replications < 1 {
            return bad("replications must be at least 1");
        }
        if self.n_total < 4 {
            return bad("n_total must be at least 4");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !self.scheme.is_valid() {
            return bad("ratio entries must be positive and p_treat must lie in (0, 1)");
        }
        if !self.scenario.is_finite() {
            return bad("scenario coefficients must be finite");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        let f = &self.fit;
        if f.max_iterations == 0
            || !(f.coef_tolerance > 0.0 && f.divergence_bound > 0.0 && f.separation_eta_bound > 0.0)
        {
            return bad("fit settings must be positive");
        }
        Ok(())
    }
}

/// Generates the dataset for one replication. Fails only when simple
/// randomization leaves an arm empty.
pub fn generate_dataset(config: &SimConfig, replication: u64) -> Result<TrialDataset, String> {
    let mut rng = replication_rng(config.master_seed, replication);
    let (x_cont, x_cat) = gen_covariates(config.n_total, &mut rng);
    let z = randomize(&x_cat, &config.scheme, &mut rng);
    let y = gen_outcome(&z, &x_cont, &x_cat, &config.scenario, &mut rng);
    let z: Vec<u8> = z.iter().map(|&v| v as u8).collect();
    TrialDataset::from_columns(
        &y,
        &z,
        vec![("x_cont".into(), x_cont), ("x_cat".into(), x_cat)],
    )
    .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub index: u64,
    pub outcomes: Vec<MethodOutcome>,
}

impl ReplicationRecord {
    /// Covariates dropped by the adjusted fit, if it succeeded.
    pub fn fallback_steps(&self) -> Option<usize> {
        self.outcomes.iter().find_map(|o| match o {
            Ok(s) if !s.method.is_unadjusted() => Some(s.fallback_steps),
            _ => None,
        })
    }
}

/// One simulated trial analysed by every configured method.
pub fn run_replication(config: &SimConfig, replication: u64) -> ReplicationRecord {
    let outcomes = match generate_dataset(config, replication) {
        Ok(data) => analyze_all(&data, &config.methods, config.alpha, &config.fit),
        Err(msg) => config
            .methods
            .iter()
            .map(|&method| {
                Err(MethodFailure {
                    method,
                    message: msg.clone(),
                })
            })
            .collect(),
    };
    ReplicationRecord {
        index: replication,
        outcomes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: VarianceMethod,
    pub label: String,
    /// Replications in which the method produced an estimate.
    pub estimates: usize,
    pub mean_se: f64,
    pub coverage: f64,
    pub rejection_rate: f64,
    pub mean_rd: f64,
    pub empirical_sd_rd: f64,
    /// Fraction of all replications without an estimate.
    pub nonconvergence_rate: f64,
    /// Fraction of estimates whose fit dropped at least one covariate.
    pub fallback_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub true_rd: f64,
    pub replications: usize,
    pub methods: Vec<MethodMetrics>,
}

impl SimMetrics {
    pub fn method(&self, method: VarianceMethod) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Aggregates replication records (in the order given) into metrics.
pub fn aggregate(
    methods: &[VarianceMethod],
    records: &[ReplicationRecord],
    true_rd: f64,
) -> SimMetrics {
    let total = records.len();
    let metrics = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let mut se = CompensatedSum::default();
            let mut rd = CompensatedSum::default();
            let mut covered = 0usize;
            let mut rejected = 0usize;
            let mut fallback = 0usize;
            let mut estimates = Vec::new();
            for rec in records {
                if let Ok(s) = &rec.outcomes[k] {
                    se.add(s.se);
                    rd.add(s.rd);
                    covered += usize::from(s.covers(true_rd));
                    rejected += usize::from(s.rejects());
                    fallback += usize::from(s.fallback_steps > 0);
                    estimates.push(s.rd);
                }
            }
            let m = estimates.len();
            let mf = m as f64;
            let mean_rd = rd.value() / mf;
            let empirical_sd_rd = if m > 1 {
                let mut ss = CompensatedSum::default();
                for v in &estimates {
                    ss.add((v - mean_rd) * (v - mean_rd));
                }
                (ss.value() / (mf - 1.0)).sqrt()
            } else if m == 1 {
                0.0
            } else {
                f64::NAN
            };
            MethodMetrics {
                method,
                label: method.label(),
                estimates: m,
                mean_se: se.value() / mf,
                coverage: covered as f64 / mf,
                rejection_rate: rejected as f64 / mf,
                mean_rd,
                empirical_sd_rd,
                nonconvergence_rate: (total - m) as f64 / total as f64,
                fallback_rate: fallback as f64 / mf,
            }
        })
        .collect();
    SimMetrics {
        true_rd,
        replications: total,
        methods: metrics,
    }
}

/// Runs all replications on the current rayon pool.
pub fn run_study(config: &SimConfig) -> SimMetrics {
    let true_rd = config.scenario.target_rd();
    let records: Vec<ReplicationRecord> = (0..config.replications as u64)
        .into_par_iter()
        .map(|i| run_replication(config, i))
        .collect();
    aggregate(&config.methods, &records, true_rd)
}

/// Runs the study on a dedicated pool of `threads` workers.
pub fn run_study_with_threads(
    config: &SimConfig,
    threads: usize,
) -> Result<SimMetrics, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(|| run_study(config)))
}

/// Everything the `simulate` command emits as JSON: the configuration, the
/// true effect and the metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: SimConfig,
    pub true_effect: TrueEffect,
    pub metrics: SimMetrics,
}

impl StudyReport {
    pub fn new(config: SimConfig, metrics: SimMetrics) -> Self {
        let mut true_effect = true_effect(&config.scenario);
        true_effect.rd = metrics.true_rd;
        Self {
            config,
            true_effect,
            metrics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
n_total = 60
replications = 20
alpha = 0.05
master_seed = 42
methods = ["M1", "M6", "M9", "Proposed(HC4)"]

[scenario]
label = "Scenario 1"
beta = [-1.7, 1.1, 3.0, -3.0]

[scheme]
variant = "stratified"
ratio = [2, 1]
"#;

    #[test]
    fn parses_config() {
        let cfg = SimConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.n_total, 60);
        assert_eq!(cfg.scheme, RandomizationScheme::Stratified { ratio: [2, 1] });
        assert_eq!(cfg.methods.len(), 4);
        assert_eq!(cfg.fit, FitConfig::default());
        let simple = EXAMPLE.replace("variant = \"stratified\"\nratio = [2, 1]", "variant = \"simple\"\np_treat = 0.4");
        let cfg = SimConfig::from_toml(&simple).unwrap();
        assert_eq!(cfg.scheme, RandomizationScheme::Simple { p_treat: 0.4 });
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = EXAMPLE.replace("replications = 20", "replications = 0");
        assert!(matches!(SimConfig::from_toml(&bad), Err(ConfigError::Invalid(_))));
        let bad = EXAMPLE.replace("\"M1\"", "\"M12\"");
        assert!(matches!(SimConfig::from_toml(&bad), Err(ConfigError::Parse(_))));
        let bad = EXAMPLE.replace("ratio = [2, 1]", "ratio = [0, 1]");
        assert!(SimConfig::from_toml(&bad).is_err());
        let bad = format!("unknown_key = 1\n{EXAMPLE}");
        assert!(SimConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn single_replication_metrics_are_indicators() {
        let mut cfg = SimConfig::from_toml(EXAMPLE).unwrap();
        cfg.replications = 1;
        let rec = run_replication(&cfg, 0);
        let metrics = run_study(&cfg);
        let target = cfg.scenario.target_rd();
        for (k, m) in metrics.methods.iter().enumerate() {
            match &rec.outcomes[k] {
                Ok(s) => {
                    assert_eq!(m.mean_se, s.se);
                    assert_eq!(m.mean_rd, s.rd);
                    assert_eq!(m.coverage, f64::from(u8::from(s.covers(target))));
                    assert_eq!(m.rejection_rate, f64::from(u8::from(s.rejects())));
                }
                Err(_) => assert_eq!(m.nonconvergence_rate, 1.0),
            }
        }
    }

    #[test]
    fn replication_matches_single_shot_analysis() {
        let cfg = SimConfig::from_toml(EXAMPLE).unwrap();
        let data = generate_dataset(&cfg, 5).unwrap();
        let direct = analyze_all(&data, &cfg.methods, cfg.alpha, &cfg.fit);
        assert_eq!(run_replication(&cfg, 5).outcomes, direct);
    }
}
