//! Single-shard MCMC: a Gibbs sampler over block-item memberships under the
//! Pitman-Yor product partition model with covariate similarity and probit
//! outcomes. New-cluster proposals use one auxiliary parameter set drawn from
//! the prior; when an item's removal empties its cluster, that cluster's
//! parameters are retained as the auxiliary draw. The shard's point estimate
//! is the saved partition minimizing squared distance to the mean
//! co-clustering matrix.

use crate::config::{Hyperparams, McmcConfig};
use crate::data::{Dataset, DesignMatrix, Schema};
use crate::error::{Error, Result};
use crate::partition::block_membership_log_weights;
use crate::probit::{probit_loglik, sample_beta_from_moments, sample_latent};
use crate::rng::rng_from;
use crate::similarity::{sample_xi_posterior, CatSuffStat, ContSuffStat, XiParams};
use crate::trace::{ClusterDraw, PosteriorTrace, TraceDraw};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockItem {
    pub obs_ids: Vec<usize>,
}

impl BlockItem {
    pub fn singleton(i: usize) -> Self {
        BlockItem { obs_ids: vec![i] }
    }

    pub fn len(&self) -> usize {
        self.obs_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_ids.is_empty()
    }
}

/// Which likelihood terms enter the membership weights. The reduced modes
/// exist for posterior-exactness and prior-reduction checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    Full,
    SimilarityOnly,
    PriorOnly,
}

/// Everything a shard borrows from the fit: data, cached design rows, schema,
/// hyperparameters, and the likelihood mode.
#[derive(Clone, Copy)]
pub struct FitContext<'a> {
    pub data: &'a Dataset,
    pub schema: &'a Schema,
    pub design: &'a DesignMatrix,
    pub hyper: &'a Hyperparams,
    pub likelihood: Likelihood,
}

impl<'a> FitContext<'a> {
    pub fn new(
        data: &'a Dataset,
        schema: &'a Schema,
        design: &'a DesignMatrix,
        hyper: &'a Hyperparams,
        likelihood: Likelihood,
    ) -> Self {
        FitContext { data, schema, design, hyper, likelihood }
    }
}

struct Theta {
    beta: Vec<f64>,
    xi: XiParams,
    // cached per-column constants for fast row evaluation
    cont_c0: Vec<f64>,
    log_pi: Vec<Vec<f64>>,
}

impl Theta {
    fn new(beta: Vec<f64>, xi: XiParams) -> Self {
        let cont_c0 = xi.cont.iter().map(|c| 0.5 * (c.lambda.ln() - LN_2PI)).collect();
        let log_pi = xi.cat.iter().map(|pi| pi.iter().map(|p| p.ln()).collect()).collect();
        Theta { beta, xi, cont_c0, log_pi }
    }
}

struct Cluster {
    members: Vec<usize>,
    n_obs: u64,
    cont: Vec<ContSuffStat>,
    cat: Vec<CatSuffStat>,
    theta: Theta,
}

pub struct ShardOutput {
    /// One merged item per estimated cluster, observation ids sorted.
    pub merged_items: Vec<BlockItem>,
    /// Estimated cluster label per input item (Dahl least squares).
    pub est_labels: Vec<usize>,
    /// Index of the chosen draw among the saved ones.
    pub est_draw: usize,
    pub trace: PosteriorTrace,
}

struct ShardState<'a> {
    ctx: FitContext<'a>,
    items: &'a [BlockItem],
    labels: Vec<usize>,
    clusters: Vec<Cluster>,
    rng: ChaCha8Rng,
    levels: Vec<usize>,
}

impl<'a> ShardState<'a> {
    fn init(ctx: FitContext<'a>, items: &'a [BlockItem], seed: u64) -> ShardState<'a> {
        let levels = ctx.schema.levels();
        let mut st = ShardState {
            ctx,
            items,
            labels: (0..items.len()).collect(),
            clusters: Vec::with_capacity(items.len()),
            rng: rng_from(seed),
            levels,
        };
        for (i, item) in items.iter().enumerate() {
            let theta = st.draw_prior_theta();
            let mut cl = Cluster {
                members: vec![i],
                n_obs: 0,
                cont: vec![ContSuffStat::default(); st.ctx.data.p()],
                cat: st.levels.iter().map(|&r| CatSuffStat::new(r)).collect(),
                theta,
            };
            Self::stats_add(&mut cl, item, st.ctx.data);
            st.clusters.push(cl);
        }
        st
    }

    fn draw_prior_theta(&mut self) -> Theta {
        let hy = self.ctx.hyper;
        let p = self.ctx.data.p();
        let empty_cont = vec![ContSuffStat::default(); p];
        let empty_cat: Vec<CatSuffStat> =
            self.levels.iter().map(|&r| CatSuffStat::new(r)).collect();
        let xi = sample_xi_posterior(&empty_cont, &empty_cat, &hy.similarity, &mut self.rng);
        let d = self.ctx.design.d();
        let beta = sample_beta_from_moments(
            &DMatrix::zeros(d, d),
            &DVector::zeros(d),
            hy.tau_beta,
            &mut self.rng,
        )
        .expect("prior draw cannot fail for valid tau_beta")
        .as_slice()
        .to_vec();
        Theta::new(beta, xi)
    }

    fn stats_add(cl: &mut Cluster, item: &BlockItem, data: &Dataset) {
        for &obs in &item.obs_ids {
            for (s, col) in cl.cont.iter_mut().zip(&data.w) {
                s.add(col[obs]);
            }
            for (s, col) in cl.cat.iter_mut().zip(&data.u) {
                s.add(col[obs]);
            }
        }
        cl.n_obs += item.len() as u64;
    }

    fn stats_remove(cl: &mut Cluster, item: &BlockItem, data: &Dataset) {
        for &obs in &item.obs_ids {
            for (s, col) in cl.cont.iter_mut().zip(&data.w) {
                s.remove(col[obs]);
            }
            for (s, col) in cl.cat.iter_mut().zip(&data.u) {
                s.remove(col[obs]);
            }
        }
        cl.n_obs -= item.len() as u64;
    }

    /// Sum over the item's observations of log p(z, x | theta).
    fn item_loglik(&self, item: &BlockItem, theta: &Theta) -> f64 {
        if matches!(self.ctx.likelihood, Likelihood::PriorOnly) {
            return 0.0;
        }
        let data = self.ctx.data;
        let mut acc = 0.0;
        for &obs in &item.obs_ids {
            for ((cx, c0), col) in theta.xi.cont.iter().zip(&theta.cont_c0).zip(&data.w) {
                let dev = col[obs] - cx.mu;
                acc += c0 - 0.5 * cx.lambda * dev * dev;
            }
            for (lp, col) in theta.log_pi.iter().zip(&data.u) {
                acc += lp[col[obs]];
            }
            if matches!(self.ctx.likelihood, Likelihood::Full) {
                let row = self.ctx.design.row(obs);
                let eta: f64 = row.iter().zip(&theta.beta).map(|(x, b)| x * b).sum();
                acc += probit_loglik(data.z[obs], eta);
            }
        }
        acc
    }

    /// Redraw xi from its conditional and beta through the latent-utility
    /// augmentation, cluster by cluster.
    fn update_cluster_params(&mut self) -> Result<()> {
        if matches!(self.ctx.likelihood, Likelihood::PriorOnly) {
            return Ok(());
        }
        let hy = self.ctx.hyper;
        let d = self.ctx.design.d();
        let full = matches!(self.ctx.likelihood, Likelihood::Full);
        for c in 0..self.clusters.len() {
            let xi = {
                let cl = &self.clusters[c];
                sample_xi_posterior(&cl.cont, &cl.cat, &hy.similarity, &mut self.rng)
            };
            let beta = if full {
                let mut xtx = DMatrix::zeros(d, d);
                let mut xtl = DVector::zeros(d);
                let beta_old = self.clusters[c].theta.beta.clone();
                for m in self.clusters[c].members.clone() {
                    for &obs in &self.items[m].obs_ids {
                        let row = self.ctx.design.row(obs);
                        let eta: f64 = row.iter().zip(&beta_old).map(|(x, b)| x * b).sum();
                        let l = sample_latent(self.ctx.data.z[obs], eta, &mut self.rng);
                        for i in 0..d {
                            xtl[i] += row[i] * l;
                            for j in 0..=i {
                                xtx[(i, j)] += row[i] * row[j];
                            }
                        }
                    }
                }
                for i in 0..d {
                    for j in 0..i {
                        xtx[(j, i)] = xtx[(i, j)];
                    }
                }
                sample_beta_from_moments(&xtx, &xtl, hy.tau_beta, &mut self.rng)?
                    .as_slice()
                    .to_vec()
            } else {
                self.clusters[c].theta.beta.clone()
            };
            self.clusters[c].theta = Theta::new(beta, xi);
        }
        Ok(())
    }

    fn remove_item(&mut self, i: usize) -> Result<Option<Theta>> {
        let c = self.labels[i];
        let data = self.ctx.data;
        {
            let cl = &mut self.clusters[c];
            let pos = cl
                .members
                .iter()
                .position(|&m| m == i)
                .ok_or_else(|| Error::state("membership list out of sync"))?;
            cl.members.swap_remove(pos);
            Self::stats_remove(cl, &self.items[i], data);
        }
        if self.clusters[c].members.is_empty() {
            let dead = self.clusters.swap_remove(c);
            if c < self.clusters.len() {
                // the former last cluster now sits at slot c
                for &m in &self.clusters[c].members {
                    self.labels[m] = c;
                }
            }
            return Ok(Some(dead.theta));
        }
        Ok(None)
    }

    fn gibbs_sweep(&mut self) -> Result<()> {
        let n_items = self.items.len();
        let mut weights: Vec<f64> = Vec::new();
        for i in 0..n_items {
            let reserve = self.remove_item(i)?;
            let item = &self.items[i];
            let sizes: Vec<u64> = self.clusters.iter().map(|cl| cl.n_obs).collect();
            let prior =
                block_membership_log_weights(item.len() as u64, &sizes, &self.ctx.hyper.py)?;
            let fresh = match reserve {
                Some(theta) => theta,
                None => self.draw_prior_theta(),
            };
            weights.clear();
            for (c, cl) in self.clusters.iter().enumerate() {
                weights.push(prior[c] + self.item_loglik(item, &cl.theta));
            }
            weights.push(*prior.last().unwrap() + self.item_loglik(item, &fresh));

            let pick = sample_from_log_weights(&weights, &mut self.rng)?;
            if pick == self.clusters.len() {
                let mut cl = Cluster {
                    members: vec![i],
                    n_obs: 0,
                    cont: vec![ContSuffStat::default(); self.ctx.data.p()],
                    cat: self.levels.iter().map(|&r| CatSuffStat::new(r)).collect(),
                    theta: fresh,
                };
                Self::stats_add(&mut cl, item, self.ctx.data);
                self.clusters.push(cl);
            } else {
                let cl = &mut self.clusters[pick];
                cl.members.push(i);
                Self::stats_add(cl, item, self.ctx.data);
            }
            self.labels[i] = pick;
        }
        Ok(())
    }

    fn snapshot(&self) -> TraceDraw {
        TraceDraw {
            assignments: self.labels.clone(),
            clusters: self
                .clusters
                .iter()
                .map(|cl| ClusterDraw {
                    n_obs: cl.n_obs,
                    beta: cl.theta.beta.clone(),
                    xi: cl.theta.xi.clone(),
                    cont: cl.cont.clone(),
                    cat: cl.cat.clone(),
                })
                .collect(),
        }
    }

    /// Recompute every cluster's statistics from scratch and compare.
    fn check_consistency(&self) {
        for (c, cl) in self.clusters.iter().enumerate() {
            assert!(!cl.members.is_empty(), "empty cluster {c} survived");
            let mut cont = vec![ContSuffStat::default(); self.ctx.data.p()];
            let mut cat: Vec<CatSuffStat> =
                self.levels.iter().map(|&r| CatSuffStat::new(r)).collect();
            let mut n_obs = 0u64;
            for &m in &cl.members {
                assert_eq!(self.labels[m], c, "label/membership mismatch for item {m}");
                for (s, col) in cont.iter_mut().zip(&self.ctx.data.w) {
                    for &obs in &self.items[m].obs_ids {
                        s.add(col[obs]);
                    }
                }
                for (s, col) in cat.iter_mut().zip(&self.ctx.data.u) {
                    for &obs in &self.items[m].obs_ids {
                        s.add(col[obs]);
                    }
                }
                n_obs += self.items[m].len() as u64;
            }
            assert_eq!(cl.n_obs, n_obs);
            for (a, b) in cl.cont.iter().zip(&cont) {
                assert_eq!(a.n, b.n);
                let scale = b.sum.abs().max(1.0);
                assert!((a.sum - b.sum).abs() / scale < 1e-6);
                let scale = b.sum_sq.abs().max(1.0);
                assert!((a.sum_sq - b.sum_sq).abs() / scale < 1e-6);
            }
            for (a, b) in cl.cat.iter().zip(&cat) {
                assert_eq!(a.counts, b.counts);
            }
        }
    }
}

/// Max-stabilized categorical draw from unnormalized log weights.
pub fn sample_from_log_weights<R: Rng>(log_w: &[f64], rng: &mut R) -> Result<usize> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::state("all membership weights vanished"));
    }
    let probs: Vec<f64> = log_w.iter().map(|w| (w - m).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return Ok(k);
        }
    }
    Ok(log_w.len() - 1)
}

/// Least-squares partition estimate: the saved draw whose co-clustering
/// indicator is closest to the mean co-clustering matrix; ties keep the
/// earliest draw.
pub fn dahl_least_squares(assignments: &[Vec<usize>]) -> Result<usize> {
    let t = assignments.len();
    if t == 0 {
        return Err(Error::usage("no saved partitions"));
    }
    let b = assignments[0].len();
    if assignments.iter().any(|a| a.len() != b) {
        return Err(Error::usage("saved partitions cover different item counts"));
    }
    let n_pairs = b * (b - 1) / 2;
    let mut mean = vec![0.0f64; n_pairs];
    for a in assignments {
        let mut k = 0;
        for i in 0..b {
            for j in (i + 1)..b {
                if a[i] == a[j] {
                    mean[k] += 1.0;
                }
                k += 1;
            }
        }
    }
    let tf = t as f64;
    for v in &mut mean {
        *v /= tf;
    }
    let mut best = 0usize;
    let mut best_loss = f64::INFINITY;
    for (idx, a) in assignments.iter().enumerate() {
        let mut loss = 0.0;
        let mut k = 0;
        for i in 0..b {
            for j in (i + 1)..b {
                let delta = if a[i] == a[j] { 1.0 } else { 0.0 };
                let diff = delta - mean[k];
                loss += diff * diff;
                k += 1;
            }
        }
        if loss < best_loss {
            best_loss = loss;
            best = idx;
        }
    }
    Ok(best)
}

/// Runs the Gibbs sampler over the given items and returns the estimated
/// clusters as merged items together with the retained trace.
pub fn mcmc_shard(ctx: FitContext, items: &[BlockItem], cfg: &McmcConfig) -> Result<ShardOutput> {
    cfg.validate()?;
    ctx.hyper.validate()?;
    if items.is_empty() {
        return Err(Error::usage("shard received no items"));
    }
    let n = ctx.data.n();
    let mut seen = vec![false; n];
    for item in items {
        if item.is_empty() {
            return Err(Error::usage("empty block item"));
        }
        for &obs in &item.obs_ids {
            if obs >= n || seen[obs] {
                return Err(Error::usage("block items must partition distinct observations"));
            }
            seen[obs] = true;
        }
    }
    if matches!(ctx.likelihood, Likelihood::Full) {
        let covered = items.iter().map(BlockItem::len).sum::<usize>();
        if ctx.data.z.len() != n || covered > n {
            return Err(Error::usage("outcome column required for the full likelihood"));
        }
    }

    let mut st = ShardState::init(ctx, items, cfg.seed);
    let burn = cfg.burn();
    let mut draws = Vec::with_capacity(cfg.n_saves());
    for iter in 0..cfg.n_iter {
        st.update_cluster_params()?;
        st.gibbs_sweep()?;
        if cfg!(debug_assertions) && iter % 100 == 0 {
            st.check_consistency();
        }
        if iter >= burn && (iter - burn).is_multiple_of(cfg.thin) {
            draws.push(st.snapshot());
        }
    }
    debug_assert_eq!(draws.len(), cfg.n_saves());

    let assignments: Vec<Vec<usize>> = draws.iter().map(|d| d.assignments.clone()).collect();
    let est_draw = dahl_least_squares(&assignments)?;
    let est_labels = crate::partition::Partition::canonicalize(&assignments[est_draw]);
    let n_clusters = est_labels.n_clusters();
    let mut merged: Vec<BlockItem> = (0..n_clusters).map(|_| BlockItem { obs_ids: vec![] }).collect();
    for (i, &l) in est_labels.labels().iter().enumerate() {
        merged[l].obs_ids.extend_from_slice(&items[i].obs_ids);
    }
    for m in &mut merged {
        m.obs_ids.sort_unstable();
    }
    let trace = PosteriorTrace {
        n_obs: items.iter().map(BlockItem::len).sum(),
        hyper: *ctx.hyper,
        schema: ctx.schema.clone(),
        draws,
    };
    Ok(ShardOutput {
        merged_items: merged,
        est_labels: est_labels.labels().to_vec(),
        est_draw,
        trace,
    })
}
