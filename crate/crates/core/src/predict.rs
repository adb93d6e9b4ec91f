//! Out-of-sample class probabilities from a retained trace. For each saved
//! draw the new observation is assigned to an existing cluster or a fresh one
//! with weight prior * covariate predictive, the success probability is the
//! weighted probit mean, and draws are averaged. The fresh-cluster option
//! needs a coefficient vector with no data behind it, so one prior draw per
//! trace draw is made up front from a prediction-only seed.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::partition::block_membership_log_weights;
use crate::probit::{encode_design, phi};
use crate::rng::{derive_seed, rng_from};
use crate::similarity::{log_predictive_ratio, CatSuffStat, ContSuffStat};
use crate::trace::PosteriorTrace;
use nalgebra::{DMatrix, DVector};

struct DrawCache {
    /// Prior membership log weights for a single new observation, last entry
    /// is the fresh cluster.
    prior_lw: Vec<f64>,
    beta_new: Vec<f64>,
}

pub struct Predictor<'a> {
    trace: &'a PosteriorTrace,
    levels: Vec<usize>,
    cache: Vec<DrawCache>,
}

impl<'a> Predictor<'a> {
    pub fn new(trace: &'a PosteriorTrace, seed: u64) -> Result<Predictor<'a>> {
        trace.validate()?;
        let d = trace.schema.design_dim();
        let py = &trace.hyper.py;
        let tau = trace.hyper.tau_beta;
        let mut rng = rng_from(derive_seed(seed, 0, 0));
        let zero_m = DMatrix::zeros(d, d);
        let zero_v = DVector::zeros(d);
        let mut cache = Vec::with_capacity(trace.draws.len());
        for draw in &trace.draws {
            let sizes: Vec<u64> = draw.clusters.iter().map(|c| c.n_obs).collect();
            let prior_lw = block_membership_log_weights(1, &sizes, py)?;
            let beta_new =
                crate::probit::sample_beta_from_moments(&zero_m, &zero_v, tau, &mut rng)?
                    .as_slice()
                    .to_vec();
            cache.push(DrawCache { prior_lw, beta_new });
        }
        Ok(Predictor { trace, levels: trace.schema.levels(), cache })
    }

    /// P(z = 1 | w, u, training data), averaged over the saved draws.
    pub fn prob(&self, w: &[f64], u: &[usize]) -> Result<f64> {
        self.check_row(w, u)?;
        let hy = &self.trace.hyper.similarity;
        let mut x = Vec::new();
        encode_design(w, u, &self.levels, &mut x);
        // marginal of the row alone, the covariate factor of a fresh cluster
        let empty_cont = vec![ContSuffStat::default(); w.len()];
        let empty_cat: Vec<CatSuffStat> =
            self.levels.iter().map(|&r| CatSuffStat::new(r)).collect();
        let log_g_new = log_predictive_ratio(w, u, &empty_cont, &empty_cat, hy);

        let mut acc = 0.0;
        let mut lw: Vec<f64> = Vec::new();
        for (draw, cache) in self.trace.draws.iter().zip(&self.cache) {
            lw.clear();
            for (c, cl) in draw.clusters.iter().enumerate() {
                lw.push(cache.prior_lw[c] + log_predictive_ratio(w, u, &cl.cont, &cl.cat, hy));
            }
            lw.push(cache.prior_lw[draw.clusters.len()] + log_g_new);
            let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(Error::state("membership weights vanished in prediction"));
            }
            let probs: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = probs.iter().sum();
            let mut p = 0.0;
            for (c, cl) in draw.clusters.iter().enumerate() {
                p += probs[c] * phi(dot(&x, &cl.beta));
            }
            p += probs[draw.clusters.len()] * phi(dot(&x, &cache.beta_new));
            acc += p / total;
        }
        Ok(acc / self.trace.draws.len() as f64)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.validate_against(&self.trace.schema, false)?;
        (0..data.n()).map(|i| self.prob(&data.w_row(i), &data.u_row(i))).collect()
    }

    fn check_row(&self, w: &[f64], u: &[usize]) -> Result<()> {
        if w.len() != self.trace.schema.p() || u.len() != self.trace.schema.q() {
            return Err(Error::usage(format!(
                "prediction row has {}+{} covariates, model expects {}+{}",
                w.len(),
                u.len(),
                self.trace.schema.p(),
                self.trace.schema.q()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("prediction row contains non-finite values"));
        }
        if let Some((j, _)) =
            u.iter().enumerate().find(|(j, &v)| v >= self.levels[*j])
        {
            return Err(Error::usage(format!(
                "categorical value out of range in prediction column {j}"
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank-based AUC with midranks for ties, positives labeled 1.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::usage("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("scores contain NaN"));
    }
    if labels.iter().any(|&z| z > 1) {
        return Err(Error::usage("labels must be 0 or 1"));
    }
    let n_pos = labels.iter().filter(|&&z| z == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::usage("need both classes present to compute AUC"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank over the tied run [i, j)
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Hyperparams;
    use crate::data::Schema;
    use crate::partition::PyParams;
    use crate::similarity::{ContXi, XiParams};
    use crate::trace::{ClusterDraw, TraceDraw};
    use rand::Rng;
    use statrs::function::erf::erfc;

    fn schema_1cont() -> Schema {
        Schema { response: "z".into(), continuous: vec!["w1".into()], categorical: vec![] }
    }

    fn cluster(n_obs: u64, beta: Vec<f64>, values: &[f64]) -> ClusterDraw {
        ClusterDraw {
            n_obs,
            beta,
            xi: XiParams { cont: vec![ContXi { mu: 0.0, lambda: 1.0 }], cat: vec![] },
            cont: vec![ContSuffStat::from_values(values)],
            cat: vec![],
        }
    }

    fn trace_with(hyper: Hyperparams, draws: Vec<TraceDraw>, n_obs: usize) -> PosteriorTrace {
        PosteriorTrace { n_obs, hyper, schema: schema_1cont(), draws }
    }

    #[test]
    fn dominant_cluster_reduces_to_its_probit() {
        let hyper =
            Hyperparams { py: PyParams::new(1e-12, 0.0).unwrap(), ..Hyperparams::default() };
        let beta = vec![0.3, 1.1];
        let values = [1.9, 2.0, 2.1, 2.0, 2.0];
        let draw = TraceDraw {
            assignments: vec![0; 5],
            clusters: vec![cluster(5, beta.clone(), &values)],
        };
        let trace = trace_with(hyper, vec![draw], 5);
        let pred = Predictor::new(&trace, 1).unwrap();
        let w = [2.0];
        let got = pred.prob(&w, &[]).unwrap();
        let eta = beta[0] + beta[1] * w[0];
        let want = 0.5 * erfc(-eta / std::f64::consts::SQRT_2);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn mirrored_clusters_average_to_half() {
        let hyper =
            Hyperparams { py: PyParams::new(1e-12, 0.0).unwrap(), ..Hyperparams::default() };
        let values = [0.0, 0.1, -0.1];
        let draw = TraceDraw {
            assignments: vec![0, 0, 0, 1, 1, 1],
            clusters: vec![
                cluster(3, vec![0.4, 0.7], &values),
                cluster(3, vec![-0.4, -0.7], &values),
            ],
        };
        let trace = trace_with(hyper, vec![draw], 6);
        let pred = Predictor::new(&trace, 1).unwrap();
        let got = pred.prob(&[0.05], &[]).unwrap();
        assert!((got - 0.5).abs() < 1e-9, "{got}");
    }

    // straight-line reimplementation without logs, for one draw
    fn naive_prob(trace: &PosteriorTrace, w: &[f64], beta_new: &[f64]) -> f64 {
        let hy = &trace.hyper.similarity;
        let py = &trace.hyper.py;
        let draw = &trace.draws[0];
        let c = draw.clusters.len() as f64;
        let mut weights = Vec::new();
        let mut probits = Vec::new();
        for cl in &draw.clusters {
            let q = log_predictive_ratio(w, &[], &cl.cont, &cl.cat, hy).exp();
            weights.push((cl.n_obs as f64 - py.discount) * q);
            let eta = cl.beta[0] + cl.beta[1] * w[0];
            probits.push(0.5 * erfc(-eta / std::f64::consts::SQRT_2));
        }
        let empty = [ContSuffStat::default()];
        let g = log_predictive_ratio(w, &[], &empty, &[], hy).exp();
        weights.push((py.alpha + py.discount * c) * g);
        let eta = beta_new[0] + beta_new[1] * w[0];
        probits.push(0.5 * erfc(-eta / std::f64::consts::SQRT_2));
        let total: f64 = weights.iter().sum();
        weights.iter().zip(&probits).map(|(w, p)| w * p / total).sum()
    }

    #[test]
    fn matches_naive_evaluation() {
        let hyper = Hyperparams::default(); // alpha 1, discount 0.5
        let draw = TraceDraw {
            assignments: vec![0, 0, 1],
            clusters: vec![
                cluster(2, vec![0.2, -0.5], &[1.0, 1.2]),
                cluster(1, vec![-1.0, 0.3], &[-2.0]),
            ],
        };
        let trace = trace_with(hyper, vec![draw], 3);
        let pred = Predictor::new(&trace, 7).unwrap();
        let beta_new = pred.cache[0].beta_new.clone();
        for w in [[-2.5f64], [0.0], [1.1], [4.0]] {
            let got = pred.prob(&w, &[]).unwrap();
            let want = naive_prob(&trace, &w, &beta_new);
            assert!((got - want).abs() < 1e-12, "w={w:?}: {got} vs {want}");
            assert!(got > 0.0 && got < 1.0);
        }
    }

    #[test]
    fn predictor_is_seed_deterministic() {
        let hyper = Hyperparams::default();
        let draws = vec![
            TraceDraw {
                assignments: vec![0, 1],
                clusters: vec![
                    cluster(1, vec![0.2, -0.5], &[1.0]),
                    cluster(1, vec![-1.0, 0.3], &[-2.0]),
                ],
            };
            3
        ];
        let trace = trace_with(hyper, draws, 2);
        let a = Predictor::new(&trace, 5).unwrap().prob(&[0.3], &[]).unwrap();
        let b = Predictor::new(&trace, 5).unwrap().prob(&[0.3], &[]).unwrap();
        let c = Predictor::new(&trace, 6).unwrap().prob(&[0.3], &[]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c); // fresh-cluster coefficients differ
        assert!((a - c).abs() < 0.3);
    }

    #[test]
    fn rejects_bad_rows() {
        let hyper = Hyperparams::default();
        let draw = TraceDraw {
            assignments: vec![0],
            clusters: vec![cluster(1, vec![0.0, 0.0], &[0.0])],
        };
        let trace = trace_with(hyper, vec![draw], 1);
        let pred = Predictor::new(&trace, 0).unwrap();
        assert!(pred.prob(&[], &[]).is_err());
        assert!(pred.prob(&[f64::NAN], &[]).is_err());
        assert!(pred.prob(&[0.0, 1.0], &[]).is_err());
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        let got = auc(&[0.9, 0.2, 0.8, 0.3], &[1, 1, 0, 0]).unwrap();
        assert_eq!(got, 0.5);
        // all scores tied: every comparison counts half
        assert_eq!(auc(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        // one tie across classes among four points
        let got = auc(&[0.1, 0.5, 0.5, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(got, 0.875);
    }

    #[test]
    fn auc_is_rank_invariant() {
        let scores = [0.12, 0.97, 0.33, 0.51, 0.08, 0.77];
        let labels = [0, 1, 0, 1, 0, 1];
        let a = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).tanh()).collect();
        let b = auc(&squashed, &labels).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn auc_of_random_scores_centers_at_half() {
        let mut rng = rng_from(52);
        let (n_pos, n_neg) = (1000usize, 1000usize);
        let mut mean = 0.0;
        let reps = 200;
        for _ in 0..reps {
            let scores: Vec<f64> = (0..n_pos + n_neg).map(|_| rng.random::<f64>()).collect();
            let labels: Vec<u8> =
                (0..n_pos + n_neg).map(|i| u8::from(i < n_pos)).collect();
            mean += auc(&scores, &labels).unwrap();
        }
        mean /= reps as f64;
        let bound = 3.0 / ((n_pos * n_neg) as f64).sqrt();
        assert!((mean - 0.5).abs() < bound, "null auc {mean} strayed past {bound}");
    }

    #[test]
    fn auc_rejects_degenerate_inputs() {
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(auc(&[0.1, f64::NAN], &[0, 1]).is_err());
        assert!(auc(&[0.1], &[0, 1]).is_err());
        assert!(auc(&[0.1, 0.2], &[0, 2]).is_err());
    }
}
