//! Covariate similarity g(x*_c): per-column conjugate marginals, kept as raw
//! sufficient statistics so clusters can be merged across shards. Continuous
//! columns use a normal likelihood with a normal-gamma prior on (mean,
//! precision); categorical columns use a symmetric Dirichlet over level
//! probabilities. Marginals are over the ordered observation sequence.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

const LN_2PI: f64 = 1.8378770664093453;
// Gamma draws with tiny shapes can underflow to 0.0; keep 1/(v0*lambda) finite.
const LAMBDA_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContSuffStat {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ContSuffStat {
    pub fn from_values(xs: &[f64]) -> Self {
        let mut s = ContSuffStat::default();
        for &x in xs {
            s.add(x);
        }
        s
    }

    pub fn add(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn remove(&mut self, x: f64) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        self.sum -= x;
        self.sum_sq -= x * x;
        if self.n == 0 {
            self.sum = 0.0;
            self.sum_sq = 0.0;
        }
    }

    pub fn merge(&mut self, other: &ContSuffStat) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Sum of squared deviations from the mean; clamped at zero against
    /// round-off when all values coincide.
    pub fn centered_ss(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.sum_sq - self.sum * self.sum / self.n as f64).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatSuffStat {
    pub counts: Vec<u64>,
}

impl CatSuffStat {
    pub fn new(levels: usize) -> Self {
        CatSuffStat { counts: vec![0; levels] }
    }

    pub fn add(&mut self, level: usize) {
        self.counts[level] += 1;
    }

    pub fn remove(&mut self, level: usize) {
        debug_assert!(self.counts[level] > 0);
        self.counts[level] -= 1;
    }

    pub fn merge(&mut self, other: &CatSuffStat) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHyper {
    pub mu0: f64,
    pub v0: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    /// Dirichlet concentration per level; None uses 1/levels per column.
    pub a_pi: Option<f64>,
}

impl Default for SimilarityHyper {
    fn default() -> Self {
        SimilarityHyper { mu0: 0.0, v0: 0.01, a_lambda: 0.01, b_lambda: 0.01, a_pi: None }
    }
}

impl SimilarityHyper {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.v0, self.a_lambda, self.b_lambda];
        if !self.mu0.is_finite() || pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("similarity hyperparameters must be positive and finite"));
        }
        if let Some(a) = self.a_pi {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::domain("a_pi must be positive"));
            }
        }
        Ok(())
    }

    pub fn a_pi_for(&self, levels: usize) -> f64 {
        self.a_pi.unwrap_or(1.0 / levels as f64)
    }
}

/// Posterior normal-gamma parameters for one continuous column.
#[derive(Clone, Copy, Debug)]
pub struct NormalGammaPost {
    pub v_n: f64,
    pub mu_n: f64,
    pub a_n: f64,
    pub b_n: f64,
}

pub fn normal_gamma_posterior(s: &ContSuffStat, hy: &SimilarityHyper) -> NormalGammaPost {
    let n = s.n as f64;
    let v_n = hy.v0 + n;
    if s.n == 0 {
        return NormalGammaPost { v_n, mu_n: hy.mu0, a_n: hy.a_lambda, b_n: hy.b_lambda };
    }
    let xbar = s.mean();
    let mu_n = (hy.v0 * hy.mu0 + n * xbar) / v_n;
    let a_n = hy.a_lambda + 0.5 * n;
    let b_n = hy.b_lambda
        + 0.5 * s.centered_ss()
        + 0.5 * n * hy.v0 / v_n * (xbar - hy.mu0) * (xbar - hy.mu0);
    NormalGammaPost { v_n, mu_n, a_n, b_n }
}

/// log marginal of one continuous column's observations with (mean,
/// precision) integrated out; empty gives log 1 = 0.
pub fn log_marginal_cont(s: &ContSuffStat, hy: &SimilarityHyper) -> f64 {
    if s.n == 0 {
        return 0.0;
    }
    let post = normal_gamma_posterior(s, hy);
    let n = s.n as f64;
    ln_gamma(post.a_n) - ln_gamma(hy.a_lambda) + hy.a_lambda * hy.b_lambda.ln()
        - post.a_n * post.b_n.ln()
        + 0.5 * (hy.v0.ln() - post.v_n.ln())
        - 0.5 * n * LN_2PI
}

/// log marginal of one categorical column with the level probabilities
/// integrated out (ordered sequence, no multinomial coefficient).
pub fn log_marginal_cat(s: &CatSuffStat, hy: &SimilarityHyper) -> f64 {
    let m = s.total();
    if m == 0 {
        return 0.0;
    }
    let r = s.counts.len();
    let a = hy.a_pi_for(r);
    let mut acc = ln_gamma(r as f64 * a) - ln_gamma(r as f64 * a + m as f64);
    for &m_j in &s.counts {
        if m_j > 0 {
            acc += ln_gamma(a + m_j as f64) - ln_gamma(a);
        }
    }
    acc
}

/// log g(x*_c) over all covariate columns of a cluster.
pub fn log_marginal_g(cont: &[ContSuffStat], cat: &[CatSuffStat], hy: &SimilarityHyper) -> f64 {
    cont.iter().map(|s| log_marginal_cont(s, hy)).sum::<f64>()
        + cat.iter().map(|s| log_marginal_cat(s, hy)).sum::<f64>()
}

/// log q(x_new | x*_c) = log g(x*_c with row) - log g(x*_c), in closed form:
/// Student-t predictive per continuous column, Dirichlet predictive per
/// categorical column.
pub fn log_predictive_ratio(
    w: &[f64],
    u: &[usize],
    cont: &[ContSuffStat],
    cat: &[CatSuffStat],
    hy: &SimilarityHyper,
) -> f64 {
    debug_assert_eq!(w.len(), cont.len());
    debug_assert_eq!(u.len(), cat.len());
    let mut acc = 0.0;
    for (x, s) in w.iter().zip(cont) {
        let post = normal_gamma_posterior(s, hy);
        let nu = 2.0 * post.a_n;
        let scale2 = post.b_n * (post.v_n + 1.0) / (post.a_n * post.v_n);
        let t = (x - post.mu_n) * (x - post.mu_n) / (nu * scale2);
        acc += ln_gamma(0.5 * (nu + 1.0))
            - ln_gamma(0.5 * nu)
            - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
            - 0.5 * (nu + 1.0) * t.ln_1p();
    }
    for (&level, s) in u.iter().zip(cat) {
        let r = s.counts.len();
        let a = hy.a_pi_for(r);
        let m = s.total() as f64;
        acc += ((a + s.counts[level] as f64) / (r as f64 * a + m)).ln();
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContXi {
    pub mu: f64,
    pub lambda: f64,
}

/// Sampled auxiliary-model parameters for one cluster: per continuous column
/// a (mean, precision), per categorical column a probability vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiParams {
    pub cont: Vec<ContXi>,
    pub cat: Vec<Vec<f64>>,
}

fn sample_gamma_rate<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters checked upstream");
    g.sample(rng).max(LAMBDA_FLOOR)
}

/// Conjugate draw of xi from its exact conditional given the cluster's
/// sufficient statistics (the prior when the stats are empty).
pub fn sample_xi_posterior<R: Rng>(
    cont: &[ContSuffStat],
    cat: &[CatSuffStat],
    hy: &SimilarityHyper,
    rng: &mut R,
) -> XiParams {
    let cont_xi = cont
        .iter()
        .map(|s| {
            let post = normal_gamma_posterior(s, hy);
            let lambda = sample_gamma_rate(post.a_n, post.b_n, rng);
            let sd = (1.0 / (post.v_n * lambda)).sqrt();
            let mu = Normal::new(post.mu_n, sd).unwrap().sample(rng);
            ContXi { mu, lambda }
        })
        .collect();
    let cat_xi = cat
        .iter()
        .map(|s| {
            let a = hy.a_pi_for(s.counts.len());
            let mut pi: Vec<f64> =
                s.counts.iter().map(|&m| sample_gamma_rate(a + m as f64, 1.0, rng)).collect();
            let total: f64 = pi.iter().sum();
            for p in &mut pi {
                *p /= total;
            }
            pi
        })
        .collect();
    XiParams { cont: cont_xi, cat: cat_xi }
}

/// log density of one covariate row under sampled xi.
pub fn log_density_row(w: &[f64], u: &[usize], xi: &XiParams) -> f64 {
    debug_assert_eq!(w.len(), xi.cont.len());
    debug_assert_eq!(u.len(), xi.cat.len());
    let mut acc = 0.0;
    for (x, cx) in w.iter().zip(&xi.cont) {
        let dev = x - cx.mu;
        acc += 0.5 * (cx.lambda.ln() - LN_2PI) - 0.5 * cx.lambda * dev * dev;
    }
    for (&level, pi) in u.iter().zip(&xi.cat) {
        acc += pi[level].ln();
    }
    acc
}
