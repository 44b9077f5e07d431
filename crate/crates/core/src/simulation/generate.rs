//! Covariates, treatment allocation and outcomes for one simulated trial.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;

/// Per-replication generator: the ChaCha8 key comes from the master seed
/// and the replication index selects the stream, so replication `i` draws
/// the same numbers no matter which thread runs it or in what order.
pub fn replication_rng(master_seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum RandomizationScheme {
    /// Fixed allocation `treated:control` within each level of the binary
    /// covariate, by random permutation.
    Stratified { ratio: [u32; 2] },
    /// Independent Bernoulli assignment.
    Simple { p_treat: f64 },
}

impl RandomizationScheme {
    pub fn one_to_one() -> Self {
        Self::Stratified { ratio: [1, 1] }
    }

    pub fn two_to_one() -> Self {
        Self::Stratified { ratio: [2, 1] }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Self::Stratified { ratio } => ratio[0] > 0 && ratio[1] > 0,
            Self::Simple { p_treat } => p_treat > 0.0 && p_treat < 1.0,
        }
    }
}

/// `X_cont ~ N(0,1)` then `X_cat ~ Bernoulli(1/2)`, each of length `n`.
pub fn gen_covariates<R: RngCore>(n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let x_cont: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let x_cat = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    (x_cont, x_cat)
}

/// Treated count for `n` subjects at ratio `t:c`, rounding to nearest with
/// exact halves going to treatment.
fn treated_total(n: usize, t: u32, c: u32) -> usize {
    let num = n as u64 * u64::from(t);
    let den = u64::from(t + c);
    let mut k = num / den;
    let rem = num % den;
    if rem > 0 && 2 * rem >= den {
        k += 1;
    }
    k as usize
}

pub fn randomize<R: RngCore>(x_cat: &[f64], scheme: &RandomizationScheme, rng: &mut R) -> Vec<f64> {
    let n = x_cat.len();
    match *scheme {
        RandomizationScheme::Simple { p_treat } => {
            (0..n).map(|_| f64::from(u8::from(rng.random_bool(p_treat)))).collect()
        }
        RandomizationScheme::Stratified { ratio: [t, c] } => {
            let den = u64::from(t + c);
            let strata: Vec<Vec<usize>> = [0.0, 1.0]
                .iter()
                .map(|&level| (0..n).filter(|&i| x_cat[i] == level).collect())
                .collect();

            // largest-remainder apportionment of the overall treated count
            let total = treated_total(n, t, c);
            let mut quota: Vec<usize> = Vec::with_capacity(strata.len());
            let mut rems: Vec<u64> = Vec::with_capacity(strata.len());
            for s in &strata {
                let num = s.len() as u64 * u64::from(t);
                quota.push((num / den) as usize);
                rems.push(num % den);
            }
            let mut leftover = total.saturating_sub(quota.iter().sum());
            let mut order: Vec<usize> = (0..strata.len()).collect();
            // random order first so equal remainders are broken at random
            order.shuffle(rng);
            order.sort_by(|&a, &b| rems[b].cmp(&rems[a]));
            for &s in &order {
                if leftover == 0 {
                    break;
                }
                if rems[s] > 0 {
                    quota[s] += 1;
                    leftover -= 1;
                }
            }

            let mut z = vec![0.0; n];
            for (members, &k) in strata.iter().zip(&quota) {
                let mut idx = members.clone();
                idx.shuffle(rng);
                for &i in idx.iter().take(k) {
                    z[i] = 1.0;
                }
            }
            z
        }
    }
}

pub fn gen_outcome<R: RngCore>(
    z: &[f64],
    x_cont: &[f64],
    x_cat: &[f64],
    scenario: &Scenario,
    rng: &mut R,
) -> Vec<u8> {
    z.iter()
        .zip(x_cont)
        .zip(x_cat)
        .map(|((&zi, &xc), &xb)| {
            let p = scenario.probability(zi, xc, xb);
            u8::from(rng.random::<f64>() < p)
        })
        .collect()
}
