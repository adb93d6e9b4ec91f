//! Synthetic benchmark generators and the small brute-force oracles the test
//! suite checks the samplers against: exhaustive partition enumeration, exact
//! co-clustering probabilities, a quadrature reference for the continuous
//! marginal, and misclustering after optimal label matching.

use crate::config::Hyperparams;
use crate::data::{CatCol, Dataset, Schema};
use crate::error::{Error, Result};
use crate::partition::{py_log_eppf, Partition};
use crate::probit::phi;
use crate::rng::rng_from;
use crate::similarity::{log_marginal_g, CatSuffStat, ContSuffStat, SimilarityHyper};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

pub const SIM_P: usize = 5;
pub const SIM_Q: usize = 5;
pub const SIM_LEVELS: usize = 3;
pub const SIM1_CLUSTERS: usize = 5;

#[derive(Clone, Debug)]
pub struct SimData {
    pub schema: Schema,
    pub data: Dataset,
    /// True cluster labels; present for the clustered benchmark only.
    pub labels: Option<Vec<usize>>,
}

pub fn sim_schema() -> Schema {
    Schema {
        response: "z".into(),
        continuous: (1..=SIM_P).map(|j| format!("w{j}")).collect(),
        categorical: (1..=SIM_Q)
            .map(|j| CatCol { name: format!("u{j}"), levels: SIM_LEVELS })
            .collect(),
    }
}

pub fn sim1_means() -> [[f64; 5]; 5] {
    [
        [-2.0, 1.5, 0.0, 0.0, 0.0],
        [0.0, 4.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, -2.0],
        [1.0, 2.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -2.0, -2.0],
    ]
}

pub fn sim1_covs() -> [[[f64; 5]; 5]; 5] {
    let mut covs = [[[0.0; 5]; 5]; 5];
    let diag = |v: [f64; 5]| {
        let mut m = [[0.0; 5]; 5];
        for (i, x) in v.into_iter().enumerate() {
            m[i][i] = x;
        }
        m
    };
    covs[0] = diag([0.25, 0.05 * 0.05, 1.0, 1.0, 1.0]);
    covs[1] = diag([1.25 * 1.25, 0.05 * 0.05, 1.0, 1.0, 1.0]);
    covs[2] = diag([1.0, 1.0, 1.0, 0.05 * 0.05, 0.25]);
    covs[3] = diag([1.0; 5]);
    covs[3][0][0] = 0.1;
    covs[3][1][1] = 0.1;
    covs[3][0][1] = 0.05;
    covs[3][1][0] = 0.05;
    covs[4] = diag([1.0; 5]);
    covs[4][3][3] = 0.25;
    covs[4][4][4] = 0.25;
    covs[4][3][4] = 0.125;
    covs[4][4][3] = 0.125;
    covs
}

/// Linear predictor for the clustered benchmark; `cluster` is 0-based,
/// categorical values are 0-based level indices.
pub fn sim1_eta(cluster: usize, w: &[f64], u: &[usize]) -> f64 {
    let ind = |cond: bool| if cond { 1.0 } else { 0.0 };
    match cluster {
        0 => -1.0 - w[4],
        1 => -1.0 + 2.0 * w[2],
        2 => -1.0 + w[3],
        3 => -1.0 + 1.5 * w[0] - ind(u[0] == 1) + ind(u[0] == 2),
        // the mixed u2/u3 indicators are intentional
        4 => -1.0 - 1.5 * w[0] - ind(u[1] == 1) + ind(u[2] == 2),
        _ => panic!("cluster out of range"),
    }
}

/// Linear predictor of the unclustered nonlinear benchmark.
pub fn sim2_eta(w: &[f64], u: &[usize]) -> f64 {
    let ind = |cond: bool| if cond { 1.0 } else { 0.0 };
    -1.0 + w[0] * w[0] - w[1] * w[1] + (w[2] * w[3]).sin() + ind(u[0] == 1) - ind(u[0] == 2)
        - ind(u[1] == 1)
        + ind(u[1] == 2)
}

fn empty_columns(n: usize) -> Dataset {
    Dataset {
        z: Vec::with_capacity(n),
        w: (0..SIM_P).map(|_| Vec::with_capacity(n)).collect(),
        u: (0..SIM_Q).map(|_| Vec::with_capacity(n)).collect(),
    }
}

/// Five equal-size clusters of multivariate-normal covariates with
/// cluster-specific probit response rules. `n` must be divisible by 5; rows
/// come out grouped by true cluster.
pub fn gen_sim1(n: usize, seed: u64) -> Result<SimData> {
    if n == 0 || !n.is_multiple_of(SIM1_CLUSTERS) {
        return Err(Error::usage(format!("n must be a positive multiple of 5, got {n}")));
    }
    let means = sim1_means();
    let chols: Vec<DMatrix<f64>> = sim1_covs()
        .iter()
        .map(|cov| {
            let m = DMatrix::from_fn(5, 5, |i, j| cov[i][j]);
            nalgebra::Cholesky::new(m).expect("benchmark covariances are positive definite").l()
        })
        .collect();
    let mut rng = rng_from(seed);
    let mut data = empty_columns(n);
    let mut labels = Vec::with_capacity(n);
    let per = n / SIM1_CLUSTERS;
    let mut zbuf = [0.0f64; 5];
    for c in 0..SIM1_CLUSTERS {
        for _ in 0..per {
            for zk in &mut zbuf {
                *zk = StandardNormal.sample(&mut rng);
            }
            let l = &chols[c];
            let mut w = [0.0f64; 5];
            for i in 0..5 {
                let mut acc = means[c][i];
                for j in 0..=i {
                    acc += l[(i, j)] * zbuf[j];
                }
                w[i] = acc;
            }
            let u: Vec<usize> = (0..SIM_Q).map(|_| rng.random_range(0..SIM_LEVELS)).collect();
            let eta = sim1_eta(c, &w, &u);
            let z = u8::from(rng.random::<f64>() < phi(eta));
            for (col, &x) in data.w.iter_mut().zip(&w) {
                col.push(x);
            }
            for (col, &v) in data.u.iter_mut().zip(&u) {
                col.push(v);
            }
            data.z.push(z);
            labels.push(c);
        }
    }
    Ok(SimData { schema: sim_schema(), data, labels: Some(labels) })
}

/// No clustering structure: iid standard-normal covariates, uniform
/// categorical covariates, one nonlinear response surface.
pub fn gen_sim2(n: usize, seed: u64) -> Result<SimData> {
    if n == 0 {
        return Err(Error::usage("n must be positive"));
    }
    let mut rng = rng_from(seed);
    let mut data = empty_columns(n);
    for _ in 0..n {
        let w: Vec<f64> = (0..SIM_P).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u: Vec<usize> = (0..SIM_Q).map(|_| rng.random_range(0..SIM_LEVELS)).collect();
        let eta = sim2_eta(&w, &u);
        let z = u8::from(rng.random::<f64>() < phi(eta));
        for (col, &x) in data.w.iter_mut().zip(&w) {
            col.push(x);
        }
        for (col, &v) in data.u.iter_mut().zip(&u) {
            col.push(v);
        }
        data.z.push(z);
    }
    Ok(SimData { schema: sim_schema(), data, labels: None })
}

/// All set partitions of n items as restricted growth strings (labels
/// contiguous from 0, canonical order).
pub fn enumerate_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(labels: &mut Vec<usize>, next: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if labels.len() == n {
            out.push(labels.clone());
            return;
        }
        for l in 0..=next {
            labels.push(l);
            rec(labels, next.max(l + 1), n, out);
            labels.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), 0, n, &mut out);
    out
}

/// Exact pairwise co-clustering probabilities of the covariate-only model
/// (EPPF times marginal similarity), by exhausting all partitions. Rows are
/// treated as singleton items; n is capped at 12.
pub fn brute_force_coclustering(
    data: &Dataset,
    schema: &Schema,
    hyper: &Hyperparams,
) -> Result<Vec<Vec<f64>>> {
    hyper.validate()?;
    data.validate_against(schema, false)?;
    let n = data.n();
    if n > 12 {
        return Err(Error::usage(format!("brute force is limited to 12 rows, got {n}")));
    }
    let parts = enumerate_partitions(n);
    let levels = schema.levels();
    let mut log_mass = Vec::with_capacity(parts.len());
    for labels in &parts {
        let part = Partition::canonicalize(labels);
        let c = part.n_clusters();
        let mut cont = vec![vec![ContSuffStat::default(); schema.p()]; c];
        let mut cat: Vec<Vec<CatSuffStat>> = (0..c)
            .map(|_| levels.iter().map(|&r| CatSuffStat::new(r)).collect())
            .collect();
        for (i, &l) in part.labels().iter().enumerate() {
            for (j, col) in data.w.iter().enumerate() {
                cont[l][j].add(col[i]);
            }
            for (j, col) in data.u.iter().enumerate() {
                cat[l][j].add(col[i]);
            }
        }
        let mut lm = py_log_eppf(&part.sizes(), &hyper.py)?;
        for k in 0..c {
            lm += log_marginal_g(&cont[k], &cat[k], &hyper.similarity);
        }
        log_mass.push(lm);
    }
    let lmax = log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_mass.iter().map(|lm| (lm - lmax).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut co = vec![vec![0.0; n]; n];
    for (labels, wt) in parts.iter().zip(&weights) {
        let p = wt / total;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    co[i][j] += p;
                }
            }
        }
    }
    Ok(co)
}

/// Reference 2-D quadrature (log-precision outer, location inner) for the
/// single-observation continuous marginal. Slow but independent of the
/// closed-form path.
pub fn quadrature_log_marginal_single(w: f64, hy: &SimilarityHyper) -> f64 {
    const LN_2PI: f64 = 1.8378770664093453;
    let (outer_lo, outer_hi, outer_n) = (-80.0f64, 40.0f64, 6000usize);
    let inner_n = 800usize;
    let h_t = (outer_hi - outer_lo) / outer_n as f64;
    let center = (w + hy.v0 * hy.mu0) / (1.0 + hy.v0);
    let log_prior_const = hy.a_lambda * hy.b_lambda.ln() - ln_gamma(hy.a_lambda);
    let mut outer = 0.0;
    for i in 0..=outer_n {
        let t = outer_lo + i as f64 * h_t;
        let lambda = t.exp();
        let sd = (1.0 / (lambda * (1.0 + hy.v0))).sqrt();
        let lo = center - 12.0 * sd;
        let h_mu = 24.0 * sd / inner_n as f64;
        let mut inner = 0.0;
        for j in 0..=inner_n {
            let mu = lo + j as f64 * h_mu;
            let log_f = 0.5 * (lambda.ln() - LN_2PI) - 0.5 * lambda * (w - mu) * (w - mu)
                + 0.5 * ((hy.v0 * lambda).ln() - LN_2PI)
                - 0.5 * hy.v0 * lambda * (mu - hy.mu0) * (mu - hy.mu0);
            let wt = if j == 0 || j == inner_n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            inner += wt * log_f.exp();
        }
        inner *= h_mu / 3.0;
        let log_g = log_prior_const + hy.a_lambda * t - hy.b_lambda * lambda;
        let wt = if i == 0 || i == outer_n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        outer += wt * inner * log_g.exp();
    }
    (outer * h_t / 3.0).ln()
}

fn hungarian_min_cost(a: &[Vec<i64>]) -> Vec<usize> {
    // square cost matrix; returns col assigned to each row
    let n = a.len();
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

/// Fraction of items left unmatched after the best one-to-one pairing of
/// estimated clusters with true clusters (Hungarian on the confusion counts).
pub fn misclustering_rate(est: &[usize], truth: &[usize]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::usage("label vectors must be nonempty and equal length"));
    }
    let ce = est.iter().max().unwrap() + 1;
    let ct = truth.iter().max().unwrap() + 1;
    let k = ce.max(ct);
    let mut confusion = vec![vec![0i64; k]; k];
    for (&e, &t) in est.iter().zip(truth) {
        confusion[e][t] += 1;
    }
    let cost: Vec<Vec<i64>> =
        confusion.iter().map(|row| row.iter().map(|&c| -c).collect()).collect();
    let assign = hungarian_min_cost(&cost);
    let matched: i64 = assign.iter().enumerate().map(|(i, &j)| confusion[i][j]).sum();
    Ok(1.0 - matched as f64 / est.len() as f64)
}
