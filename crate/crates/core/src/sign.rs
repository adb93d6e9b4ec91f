//! Multi-step fitting: while there are more items than fit in one shard,
//! split the items at random, run the shard sampler on each split in
//! parallel, and replace every estimated cluster by a single merged item.
//! Observations merged at one step stay together for all later steps. The
//! final step runs one sampler over whatever remains and its trace is what
//! prediction consumes.

use crate::config::{Hyperparams, McmcConfig, SignConfig};
use crate::data::{Dataset, DesignMatrix, Schema};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::rng::{derive_seed, rng_from};
use crate::shard::{mcmc_shard, BlockItem, FitContext, Likelihood, ShardOutput};
use crate::trace::PosteriorTrace;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

// seed lane reserved for the split permutation; shard lanes count from 0
const SPLIT_LANE: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub n_items_in: usize,
    pub n_shards: usize,
    pub n_items_out: usize,
    pub seconds: f64,
}

/// Run summary kept small enough to serialize next to the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub n_obs: usize,
    pub n_clusters: usize,
    pub cluster_sizes: Vec<u64>,
    pub n_steps: usize,
    pub steps: Vec<StepRecord>,
    pub max_items_per_shard: usize,
    pub seed: u64,
    pub wall_secs: f64,
}

pub struct SignFit {
    pub report: SignReport,
    /// Final cluster label per observation, relabeled by first appearance.
    pub labels: Vec<usize>,
    pub trace: PosteriorTrace,
    /// Frozen items after each coarsening step (empty when none ran). Later
    /// steps and the final clusters may only merge these, never split them.
    pub step_items: Vec<Vec<BlockItem>>,
}

/// Random split of `n` items into `m` near-equal groups (sizes differ by at
/// most one, larger groups first in permutation order).
pub fn shard_split(n: usize, m: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(m >= 1 && m <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed));
    let base = n / m;
    let extra = n % m;
    let mut out = Vec::with_capacity(m);
    let mut at = 0;
    for g in 0..m {
        let size = base + usize::from(g < extra);
        out.push(idx[at..at + size].to_vec());
        at += size;
    }
    out
}

fn gather(items: &[BlockItem], group: &[usize]) -> Vec<BlockItem> {
    group.iter().map(|&i| items[i].clone()).collect()
}

pub fn run_sign(
    data: &Dataset,
    schema: &Schema,
    hyper: &Hyperparams,
    cfg: &SignConfig,
) -> Result<SignFit> {
    schema.validate()?;
    data.validate_against(schema, true)?;
    hyper.validate()?;
    cfg.validate()?;
    let n = data.n();
    if n == 0 {
        return Err(Error::usage("no observations to fit"));
    }

    let start = Instant::now();
    let design = DesignMatrix::build(data, schema);
    let ctx = FitContext::new(data, schema, &design, hyper, Likelihood::Full);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::state(format!("worker pool: {e}")))?;

    let r = cfg.max_items_per_shard;
    let mut items: Vec<BlockItem> = (0..n).map(BlockItem::singleton).collect();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut step_items: Vec<Vec<BlockItem>> = Vec::new();
    let mut step = 1usize;

    while items.len() > r {
        let b = items.len();
        // every shard needs at least two items to have anything to merge
        let m = b.div_ceil(r).min(b / 2);
        if m <= 1 {
            break;
        }
        let t0 = Instant::now();
        let groups = shard_split(b, m, derive_seed(cfg.seed, step as u64, SPLIT_LANE));
        let base_mcmc = cfg.mcmc_for_step(step);
        let outputs: Result<Vec<ShardOutput>> = pool.install(|| {
            groups
                .par_iter()
                .enumerate()
                .map(|(s, group)| {
                    let mcmc = McmcConfig {
                        seed: derive_seed(cfg.seed, step as u64, s as u64),
                        ..base_mcmc
                    };
                    mcmc_shard(ctx, &gather(&items, group), &mcmc)
                })
                .collect()
        });
        let next: Vec<BlockItem> =
            outputs?.into_iter().flat_map(|o| o.merged_items).collect();
        let seconds = t0.elapsed().as_secs_f64();
        log::info!(
            "step {step}: {b} items in {m} shards -> {} items ({seconds:.1}s)",
            next.len()
        );
        steps.push(StepRecord {
            step,
            n_items_in: b,
            n_shards: m,
            n_items_out: next.len(),
            seconds,
        });
        let stalled = next.len() == b;
        items = next;
        step_items.push(items.clone());
        step += 1;
        if stalled {
            // nothing merged anywhere; a further split would loop forever
            break;
        }
    }

    // final aggregation over the remaining items, single shard
    let t0 = Instant::now();
    let b = items.len();
    let mcmc = McmcConfig {
        seed: derive_seed(cfg.seed, step as u64, 0),
        ..cfg.mcmc_for_step(step)
    };
    let fin = mcmc_shard(ctx, &items, &mcmc)?;
    let seconds = t0.elapsed().as_secs_f64();
    log::info!(
        "step {step} (final): {b} items -> {} clusters ({seconds:.1}s)",
        fin.merged_items.len()
    );
    steps.push(StepRecord {
        step,
        n_items_in: b,
        n_shards: 1,
        n_items_out: fin.merged_items.len(),
        seconds,
    });

    let mut raw = vec![0usize; n];
    for (i, item) in items.iter().enumerate() {
        for &obs in &item.obs_ids {
            raw[obs] = fin.est_labels[i];
        }
    }
    let labels = Partition::canonicalize(&raw);
    let report = SignReport {
        n_obs: n,
        n_clusters: labels.n_clusters(),
        cluster_sizes: labels.sizes(),
        n_steps: step,
        steps,
        max_items_per_shard: r,
        seed: cfg.seed,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    Ok(SignFit { report, labels: labels.labels().to_vec(), trace: fin.trace, step_items })
}
