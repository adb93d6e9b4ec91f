//! Probit outcome model: stable log-CDF evaluation, latent-utility draws
//! (truncated normals), and the conjugate Gibbs update of a cluster's
//! coefficient vector given latents.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use statrs::function::erf::erfc;

const LN_2PI: f64 = 1.8378770664093453;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Design dimension 1 + p + sum_j (r_j - 1).
pub fn design_dim(p: usize, levels: &[usize]) -> usize {
    1 + p + levels.iter().map(|r| r - 1).sum::<usize>()
}

/// Intercept, raw continuous values, then reference-coded dummies per
/// categorical column (level 0 is the baseline).
pub fn encode_design(w: &[f64], u: &[usize], levels: &[usize], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(w);
    for (&val, &r) in u.iter().zip(levels) {
        let start = out.len();
        out.resize(start + r - 1, 0.0);
        if val > 0 {
            out[start + val - 1] = 1.0;
        }
    }
}

/// log Phi(eta), accurate far into the left tail.
pub fn log_phi(eta: f64) -> f64 {
    if eta > -30.0 {
        (0.5 * erfc(-eta / SQRT_2)).ln()
    } else {
        // asymptotic: Phi(eta) ~ phi(eta)/|eta| * (1 - 1/eta^2 + 3/eta^4)
        let e2 = eta * eta;
        -0.5 * e2 - 0.5 * LN_2PI - (-eta).ln() + (-1.0 / e2 + 3.0 / (e2 * e2)).ln_1p()
    }
}

pub fn probit_loglik(z: u8, eta: f64) -> f64 {
    if z == 1 {
        log_phi(eta)
    } else {
        log_phi(-eta)
    }
}

/// Phi(eta), the standard normal CDF.
pub fn phi(eta: f64) -> f64 {
    0.5 * erfc(-eta / SQRT_2)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    // statrs keeps a precomputed standard normal; build once
    use std::sync::OnceLock;
    static STD: OnceLock<NormalDist> = OnceLock::new();
    STD.get_or_init(|| NormalDist::new(0.0, 1.0).unwrap()).inverse_cdf(p)
}

// Standard normal conditioned on exceeding `a`. Inverse CDF away from the
// deep tail, exponential-proposal rejection beyond it.
fn sample_tail<R: Rng>(a: f64, rng: &mut R) -> f64 {
    if a <= 5.0 {
        let lo = std_normal_cdf(a);
        let u: f64 = rng.random();
        let p = (lo + u * (1.0 - lo)).min(1.0 - 1e-16);
        std_normal_quantile(p).max(a)
    } else {
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = Exp1.sample(rng);
            let x = a + e / rate;
            let accept = (-(x - rate) * (x - rate) / 2.0).exp();
            if rng.random::<f64>() < accept {
                return x;
            }
        }
    }
}

/// Latent utility for one observation: N(eta, 1) truncated to (0, inf) when
/// z = 1, to (-inf, 0] when z = 0.
pub fn sample_latent<R: Rng>(z: u8, eta: f64, rng: &mut R) -> f64 {
    if z == 1 {
        loop {
            let t = eta + sample_tail(-eta, rng);
            if t > 0.0 {
                return t;
            }
        }
    } else {
        loop {
            let t = -(-eta + sample_tail(eta, rng));
            if t <= 0.0 {
                return t;
            }
        }
    }
}

/// Draws beta from N(A^{-1} X'l, A^{-1}) with A = I/tau_beta + X'X, given the
/// accumulated moments. Prior draw N(0, tau_beta I) falls out when the
/// moments are zero.
pub fn sample_beta_from_moments<R: Rng>(
    xtx: &DMatrix<f64>,
    xtl: &DVector<f64>,
    tau_beta: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(tau_beta > 0.0) || !tau_beta.is_finite() {
        return Err(Error::domain(format!("tau_beta must be positive, got {tau_beta}")));
    }
    let d = xtl.len();
    let mut a = xtx.clone();
    for i in 0..d {
        a[(i, i)] += 1.0 / tau_beta;
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::state("probit precision matrix is not positive definite"))?;
    let mean = chol.solve(xtl);
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    // L^{-T} z has covariance (L L^T)^{-1} = A^{-1}
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::state("singular Cholesky factor"))?;
    Ok(mean + noise)
}

/// Conjugate update of a cluster's coefficients from its members' design rows
/// and latent utilities.
pub fn sample_beta_given_cluster<'a, R: Rng>(
    rows: impl Iterator<Item = &'a [f64]>,
    latents: &[f64],
    d: usize,
    tau_beta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut xtx = DMatrix::zeros(d, d);
    let mut xtl = DVector::zeros(d);
    let mut k = 0usize;
    for row in rows {
        debug_assert_eq!(row.len(), d);
        let l = latents[k];
        for i in 0..d {
            xtl[i] += row[i] * l;
            for j in 0..=i {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
        k += 1;
    }
    if k != latents.len() {
        return Err(Error::state("latent count does not match member rows"));
    }
    for i in 0..d {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    Ok(sample_beta_from_moments(&xtx, &xtl, tau_beta, rng)?.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn design_encoding() {
        let mut out = Vec::new();
        // one continuous column, one 4-level categorical at level 2 (0-based)
        encode_design(&[2.0], &[2], &[4], &mut out);
        assert_eq!(out, vec![1.0, 2.0, 0.0, 1.0, 0.0]);
        encode_design(&[0.5, -1.0], &[0], &[3], &mut out);
        assert_eq!(out, vec![1.0, 0.5, -1.0, 0.0, 0.0]);
        assert_eq!(design_dim(5, &[3, 3, 3, 3, 3]), 16);
    }

    #[test]
    fn log_phi_reference_points() {
        assert!((log_phi(0.0) - 0.5f64.ln()).abs() < 1e-14);
        // Phi(1.96) = 0.9750021048517795
        assert!((log_phi(1.96) - 0.9750021048517795f64.ln()).abs() < 1e-10);
        assert!((probit_loglik(1, 1.96) - 0.975f64.ln()).abs() < 1e-4);
        assert!((probit_loglik(0, 1.96) - 0.025f64.ln()).abs() < 1e-2);
    }

    #[test]
    fn log_phi_deep_tail_is_finite_and_smooth() {
        for eta in [-50.0, -40.0, -31.0, -30.0, -29.9, -20.0, -10.0] {
            let v = log_phi(eta);
            assert!(v.is_finite(), "log_phi({eta}) = {v}");
        }
        // the two formulas agree where they meet
        let erfc_side = (0.5 * erfc(30.0 / SQRT_2)).ln();
        assert!((log_phi(-30.0) - erfc_side).abs() < 1e-6);
        // smooth across the switch: slope of log Phi near -30 is about 30
        let a = log_phi(-30.000001);
        let b = log_phi(-29.999999);
        assert!(a < b && b - a < 31.0 * 2e-6, "{a} {b}");
        // complement identity where both sides are representable
        for eta in [-8.0, -3.0, -0.5, 0.7, 2.5, 6.0] {
            let total = log_phi(eta).exp() + log_phi(-eta).exp();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn log_phi_monotone(eta in -37.0f64..8.0) {
            proptest::prop_assert!(log_phi(eta) < log_phi(eta + 0.01));
        }
    }

    #[test]
    fn latent_signs_match_outcomes() {
        let mut rng = rng_from(77);
        for _ in 0..20_000 {
            let eta = rng.random_range(-9.0..9.0);
            let z = if rng.random::<f64>() < 0.5 { 1 } else { 0 };
            let l = sample_latent(z, eta, &mut rng);
            assert!(l.is_finite());
            if z == 1 {
                assert!(l > 0.0, "z=1 latent {l} at eta={eta}");
            } else {
                assert!(l <= 0.0, "z=0 latent {l} at eta={eta}");
            }
        }
    }

    #[test]
    fn latent_half_normal_mean() {
        // z=1, eta=0: half-normal with mean sqrt(2/pi)
        let mut rng = rng_from(123);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_latent(1, 0.0, &mut rng)).sum::<f64>() / n as f64;
        let want = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - want).abs() < 0.01 * want, "{mean} vs {want}");
    }

    #[test]
    fn latent_mild_truncation_mean() {
        let mut rng = rng_from(7);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_latent(1, 5.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn latent_deep_tail_mean_matches_mills_ratio() {
        // z=1 at eta=-9 lands in the rejection branch; E = eta + phi(a)/Phi(-a), a=9
        let mut rng = rng_from(8);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_latent(1, -9.0, &mut rng)).sum::<f64>() / n as f64;
        let a: f64 = 9.0;
        let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let want = -a + phi / log_phi(-a).exp();
        assert!((mean - want).abs() < 0.01, "{mean} vs {want}");
    }

    #[test]
    fn beta_prior_draw_moments() {
        let mut rng = rng_from(31);
        let xtx = DMatrix::zeros(2, 2);
        let xtl = DVector::zeros(2);
        let tau = 2.5;
        let n = 100_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let b = sample_beta_from_moments(&xtx, &xtl, tau, &mut rng).unwrap();
            m1 += b[0];
            m2 += b[0] * b[0];
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 0.02);
        assert!((m2 - tau).abs() < 0.05 * tau, "var {m2} vs {tau}");
    }

    #[test]
    fn beta_single_observation_posterior() {
        // X = (1), l = 2, tau = 1: precision 2, posterior N(1, 0.5)
        let mut rng = rng_from(99);
        let row = [1.0f64];
        let n = 100_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let b = sample_beta_given_cluster(
                std::iter::once(&row[..]),
                &[2.0],
                1,
                1.0,
                &mut rng,
            )
            .unwrap();
            m1 += b[0];
            m2 += b[0] * b[0];
        }
        m1 /= n as f64;
        m2 /= n as f64;
        let var = m2 - m1 * m1;
        assert!((m1 - 1.0).abs() < 0.02, "mean {m1}");
        assert!((var - 0.5).abs() < 0.03, "var {var}");
    }

    #[test]
    fn beta_shrinks_with_tiny_prior_variance() {
        let mut rng = rng_from(4);
        let rows = [[1.0, 0.4], [1.0, -0.2], [1.0, 1.1]];
        let latents = [0.5, -0.3, 0.9];
        let mut mean = [0.0f64; 2];
        let n = 20_000;
        for _ in 0..n {
            let b = sample_beta_given_cluster(
                rows.iter().map(|r| &r[..]),
                &latents,
                2,
                1e-8,
                &mut rng,
            )
            .unwrap();
            mean[0] += b[0];
            mean[1] += b[1];
        }
        assert!(mean.iter().all(|m| (m / n as f64).abs() < 1e-3));
    }

    // Latent-augmentation chain against deterministic quadrature: clamp one
    // coordinate at the truth and compare the other's posterior mean.
    #[test]
    fn gibbs_conditional_matches_quadrature() {
        let truth = [0.8, -0.6];
        let tau = 1.0;
        let n_obs = 50;
        let mut rng = rng_from(1234);
        let rows: Vec<[f64; 2]> =
            (0..n_obs).map(|_| [1.0, rng.random_range(-2.0..2.0f64)]).collect();
        let z: Vec<u8> = rows
            .iter()
            .map(|r| {
                let eta = truth[0] * r[0] + truth[1] * r[1];
                u8::from(rng.random::<f64>() < log_phi(eta).exp())
            })
            .collect();

        for j in 0..2 {
            let other = 1 - j;
            let log_post = |bj: f64| -> f64 {
                let mut acc = -0.5 * bj * bj / tau;
                for (r, &zi) in rows.iter().zip(&z) {
                    let eta = bj * r[j] + truth[other] * r[other];
                    acc += probit_loglik(zi, eta);
                }
                acc
            };
            // quadrature mean over a wide grid
            let (lo, hi, m) = (-6.0f64, 6.0f64, 4800usize);
            let h = (hi - lo) / m as f64;
            let (mut num, mut den) = (0.0, 0.0);
            let logs: Vec<f64> = (0..=m).map(|k| log_post(lo + k as f64 * h)).collect();
            let lmax = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (k, lp) in logs.iter().enumerate() {
                let wt = if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let f = (lp - lmax).exp() * wt;
                num += f * (lo + k as f64 * h);
                den += f;
            }
            let want = num / den;

            // chain over (latents, beta_j) with beta_other clamped
            let iters = 60_000;
            let burn = 10_000;
            let mut bj = 0.0;
            let mut draws = Vec::with_capacity(iters - burn);
            for it in 0..iters {
                let latents: Vec<f64> = rows
                    .iter()
                    .zip(&z)
                    .map(|(r, &zi)| {
                        sample_latent(zi, bj * r[j] + truth[other] * r[other], &mut rng)
                    })
                    .collect();
                // 1-D conjugate update for coordinate j
                let mut xtx = 0.0;
                let mut xtl = 0.0;
                for (r, l) in rows.iter().zip(&latents) {
                    xtx += r[j] * r[j];
                    xtl += r[j] * (l - truth[other] * r[other]);
                }
                let prec = 1.0 / tau + xtx;
                let mean = xtl / prec;
                let noise: f64 = StandardNormal.sample(&mut rng);
                bj = mean + noise / prec.sqrt();
                if it >= burn {
                    draws.push(bj);
                }
            }
            let got = draws.iter().sum::<f64>() / draws.len() as f64;
            // batch-means standard error
            let nb = 50;
            let bs = draws.len() / nb;
            let bmeans: Vec<f64> =
                (0..nb).map(|b| draws[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64).collect();
            let bvar = bmeans.iter().map(|m| (m - got) * (m - got)).sum::<f64>() / (nb - 1) as f64;
            let se = (bvar / nb as f64).sqrt();
            assert!(
                (got - want).abs() < 3.0 * se.max(0.005),
                "coord {j}: chain {got} vs quadrature {want} (se {se})"
            );
        }
    }
}
