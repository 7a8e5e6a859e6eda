//! Monte-Carlo checks of the score-function estimator on a one-step
//! Gaussian policy whose reward is 1 iff the sampled location lands in the
//! half-space `a . l >= c`. The estimator runs through the same
//! `gaussian_log_prob` op the location network uses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::{Graph, Tensor};
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct HalfSpace {
    pub normal: [f64; 3],
    pub offset: f64,
    pub mu: [f64; 3],
    pub sigma: f64,
}

impl Default for HalfSpace {
    fn default() -> Self {
        Self { normal: [1.0, 0.5, -0.5], offset: 0.1, mu: [0.05, -0.1, 0.2], sigma: 0.15 }
    }
}

/// Sample mean and standard error per coordinate.
#[derive(Clone, Debug, Serialize)]
pub struct Estimate {
    pub mean: [f64; 3],
    pub stderr: [f64; 3],
}

impl Estimate {
    fn from_rows(rows: &[[f64; 3]]) -> Self {
        let n = rows.len() as f64;
        let mut mean = [0.0; 3];
        let mut stderr = [0.0; 3];
        for k in 0..3 {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            mean[k] = m;
            stderr[k] = (var / n).sqrt();
        }
        Self { mean, stderr }
    }

    /// Largest `|a - b| / sqrt(se_a^2 + se_b^2)` over coordinates.
    pub fn max_z(&self, other: &Estimate) -> f64 {
        (0..3)
            .map(|k| (self.mean[k] - other.mean[k]).abs() / (self.stderr[k].powi(2) + other.stderr[k].powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest `|mean| / se` over coordinates.
    pub fn max_z_from_zero(&self) -> f64 {
        (0..3).map(|k| self.mean[k].abs() / self.stderr[k]).fold(0.0, f64::max)
    }
}

impl HalfSpace {
    pub fn reward(&self, l: [f64; 3]) -> f64 {
        let s: f64 = (0..3).map(|k| self.normal[k] * l[k]).sum();
        f64::from(u8::from(s >= self.offset))
    }

    fn noise(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [0; 3].map(|_| StandardNormal.sample(&mut rng))).collect()
    }

    /// Closed form: `J(mu) = Phi((a.mu - c) / (sigma |a|))`, so
    /// `dJ/dmu_k = a_k phi(z) / (sigma |a|)`.
    pub fn analytic_gradient(&self) -> [f64; 3] {
        let norm = self.normal.iter().map(|a| a * a).sum::<f64>().sqrt();
        let z = ((0..3).map(|k| self.normal[k] * self.mu[k]).sum::<f64>() - self.offset) / (self.sigma * norm);
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        self.normal.map(|a| a * phi / (self.sigma * norm))
    }

    /// Per-sample REINFORCE gradients `(R - b) d log pi / d mu` from the tape.
    /// `reward_override` replaces the half-space reward (for the
    /// score-function zero-mean check).
    pub fn reinforce_samples(
        &self,
        n: usize,
        seed: u64,
        baseline: f64,
        reward_override: Option<f64>,
    ) -> Result<Vec<[f64; 3]>> {
        let eps = Self::noise(n, seed);
        let mut rows = Vec::with_capacity(n);
        for chunk in eps.chunks(10_000) {
            let b = chunk.len();
            let mut g = Graph::new();
            let mu_rows: Vec<f64> = (0..b).flat_map(|_| self.mu).collect();
            let mu = g.input(Tensor::new(vec![b, 3], mu_rows)?);
            let ls: Vec<[f64; 3]> = chunk.iter().map(|e| [0, 1, 2].map(|k| self.mu[k] + self.sigma * e[k])).collect();
            let sample = Tensor::new(vec![b, 3], ls.iter().flatten().copied().collect())?;
            let lp = g.gaussian_log_prob(mu, &sample, self.sigma)?;
            let adv: Vec<f64> =
                ls.iter().map(|&l| reward_override.unwrap_or_else(|| self.reward(l)) - baseline).collect();
            let obj = g.dot_const(lp, &adv)?;
            let grads = g.backward(obj)?;
            let gm = grads.wrt(mu).expect("mu is differentiable").data();
            rows.extend((0..b).map(|i| [gm[3 * i], gm[3 * i + 1], gm[3 * i + 2]]));
        }
        Ok(rows)
    }

    pub fn reinforce_estimate(&self, n: usize, seed: u64, baseline: f64) -> Result<Estimate> {
        Ok(Estimate::from_rows(&self.reinforce_samples(n, seed, baseline, None)?))
    }

    /// Central finite difference of Monte-Carlo `J` with common random numbers.
    pub fn finite_difference(&self, n: usize, seed: u64, h: f64) -> Estimate {
        let eps = Self::noise(n, seed);
        let rows: Vec<[f64; 3]> = eps
            .iter()
            .map(|e| {
                let base = [0, 1, 2].map(|k| self.mu[k] + self.sigma * e[k]);
                [0, 1, 2].map(|k| {
                    let (mut up, mut down) = (base, base);
                    up[k] += h;
                    down[k] -= h;
                    (self.reward(up) - self.reward(down)) / (2.0 * h)
                })
            })
            .collect();
        Estimate::from_rows(&rows)
    }

    /// `E[d log pi / d mu]` with `R = 1`, `b = 0`.
    pub fn score_mean(&self, n: usize, seed: u64) -> Result<Estimate> {
        Ok(Estimate::from_rows(&self.reinforce_samples(n, seed, 0.0, Some(1.0))?))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyCheckReport {
    pub samples: usize,
    pub reinforce: Estimate,
    pub finite_difference: Estimate,
    pub analytic: [f64; 3],
    /// Estimator vs finite difference, in combined standard errors.
    pub estimator_z: f64,
    pub score_mean: Estimate,
    /// Score mean vs zero, in standard errors.
    pub score_z: f64,
    pub with_baseline: Estimate,
    /// Estimator with b = 0.5 vs finite difference, in combined standard errors.
    pub baseline_z: f64,
}

impl PolicyCheckReport {
    pub fn passes(&self) -> bool {
        self.estimator_z <= 3.0 && self.score_z <= 4.0 && self.baseline_z <= 3.0
    }
}

pub fn run_policy_checks(toy: &HalfSpace, samples: usize, seed: u64) -> Result<PolicyCheckReport> {
    let reinforce = toy.reinforce_estimate(samples, seed, 0.0)?;
    let finite_difference = toy.finite_difference(samples, seed.wrapping_add(1), 0.02);
    let score_mean = toy.score_mean(samples, seed.wrapping_add(2))?;
    let with_baseline = toy.reinforce_estimate(samples, seed, 0.5)?;
    Ok(PolicyCheckReport {
        samples,
        estimator_z: reinforce.max_z(&finite_difference),
        score_z: score_mean.max_z_from_zero(),
        baseline_z: with_baseline.max_z(&finite_difference),
        analytic: toy.analytic_gradient(),
        reinforce,
        finite_difference,
        score_mean,
        with_baseline,
    })
}
