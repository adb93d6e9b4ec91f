//! Scalable Bayesian nonparametric clustering with binary outcomes.
//!
//! Observations carry continuous and categorical covariates plus a 0/1
//! response. A Pitman-Yor product partition model with covariate similarity
//! terms clusters them, each cluster holding its own probit regression. When
//! the data are too large for one Gibbs run, fitting proceeds in steps: split
//! into shards, sample each shard in parallel, freeze each shard's estimated
//! clusters into single block items, and repeat until one shard covers
//! everything. The final shard's retained draws drive out-of-sample class
//! probabilities.
//!
//! Entry points: [`sign::run_sign`] to fit, [`predict::Predictor`] to score
//! new rows, [`synth`] for reference data generators and small brute-force
//! checks.

// validation guards use `!(x > 0.0)` so that NaN fails them; `x <= 0.0` would not
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod partition;
pub mod predict;
pub mod probit;
pub mod rng;
pub mod shard;
pub mod sign;
pub mod similarity;
pub mod synth;
pub mod trace;

pub use config::{Hyperparams, McmcConfig, SignConfig};
pub use data::{Dataset, Schema, Standardizer};
pub use error::{Error, Result};
pub use partition::{Partition, PyParams};
pub use predict::{auc, Predictor};
pub use shard::{mcmc_shard, BlockItem, FitContext, Likelihood};
pub use sign::{run_sign, SignFit, SignReport};
pub use trace::PosteriorTrace;
