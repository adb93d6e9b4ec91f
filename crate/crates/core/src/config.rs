use crate::error::{Error, Result};
use crate::partition::PyParams;
use crate::similarity::SimilarityHyper;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub py: PyParams,
    /// Prior *variance* of each probit coefficient.
    pub tau_beta: f64,
    pub similarity: SimilarityHyper,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            py: PyParams::default(),
            tau_beta: 1.0,
            similarity: SimilarityHyper::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        self.py.validate()?;
        self.similarity.validate()?;
        if !(self.tau_beta > 0.0) || !self.tau_beta.is_finite() {
            return Err(Error::domain("tau_beta must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_frac: f64,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { n_iter: 10_000, burn_frac: 0.5, thin: 5, seed: 0 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::domain("n_iter must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_frac) {
            return Err(Error::domain("burn_frac must lie in [0, 1)"));
        }
        if self.thin == 0 {
            return Err(Error::domain("thin must be at least 1"));
        }
        Ok(())
    }

    pub fn burn(&self) -> usize {
        (self.n_iter as f64 * self.burn_frac).floor() as usize
    }

    /// Number of retained draws; floor(n_iter * (1 - burn_frac) / thin) at
    /// the defaults (10000, 0.5, 5) this is 1000.
    pub fn n_saves(&self) -> usize {
        let kept = self.n_iter - self.burn();
        kept.div_ceil(self.thin)
    }
}

/// Per-step schedule override (seed is always derived from the master seed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcStep {
    pub n_iter: usize,
    pub burn_frac: f64,
    pub thin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignConfig {
    /// R: a shard-level MCMC never sees more items than this.
    pub max_items_per_shard: usize,
    /// 0 means use all available cores.
    pub workers: usize,
    pub seed: u64,
    pub mcmc: McmcConfig,
    /// Optional schedule overrides keyed by 1-based step index.
    pub mcmc_by_step: BTreeMap<usize, McmcStep>,
}

impl Default for SignConfig {
    fn default() -> Self {
        SignConfig {
            max_items_per_shard: 250,
            workers: 0,
            seed: 0,
            mcmc: McmcConfig::default(),
            mcmc_by_step: BTreeMap::new(),
        }
    }
}

impl SignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_items_per_shard < 1 {
            return Err(Error::domain("max_items_per_shard must be at least 1"));
        }
        self.mcmc.validate()?;
        for (step, ov) in &self.mcmc_by_step {
            McmcConfig { n_iter: ov.n_iter, burn_frac: ov.burn_frac, thin: ov.thin, seed: 0 }
                .validate()
                .map_err(|e| Error::domain(format!("step {step} override: {e}")))?;
        }
        Ok(())
    }

    /// Schedule for a given 1-based step, before seeding.
    pub fn mcmc_for_step(&self, step: usize) -> McmcConfig {
        match self.mcmc_by_step.get(&step) {
            Some(ov) => McmcConfig {
                n_iter: ov.n_iter,
                burn_frac: ov.burn_frac,
                thin: ov.thin,
                seed: self.mcmc.seed,
            },
            None => self.mcmc,
        }
    }
}
