use crate::config::Hyperparams;
use crate::data::Schema;
use crate::error::{Error, Result};
use crate::similarity::{CatSuffStat, ContSuffStat, XiParams};
use serde::{Deserialize, Serialize};

/// One retained cluster: observation count, probit coefficients, sampled
/// auxiliary parameters, and the raw similarity statistics needed for the
/// posterior predictive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDraw {
    pub n_obs: u64,
    pub beta: Vec<f64>,
    pub xi: XiParams,
    pub cont: Vec<ContSuffStat>,
    pub cat: Vec<CatSuffStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDraw {
    /// Item-level cluster labels at the moment of the save.
    pub assignments: Vec<usize>,
    pub clusters: Vec<ClusterDraw>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrace {
    pub n_obs: usize,
    pub hyper: Hyperparams,
    pub schema: Schema,
    pub draws: Vec<TraceDraw>,
}

impl PosteriorTrace {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.schema.validate()?;
        if self.draws.is_empty() {
            return Err(Error::state("trace holds no draws"));
        }
        let d = self.schema.design_dim();
        for draw in &self.draws {
            if draw.clusters.is_empty() {
                return Err(Error::state("trace draw with no clusters"));
            }
            let total: u64 = draw.clusters.iter().map(|c| c.n_obs).sum();
            if total != self.n_obs as u64 {
                return Err(Error::state("cluster sizes do not sum to the observation count"));
            }
            if draw.clusters.iter().any(|c| c.beta.len() != d) {
                return Err(Error::state("coefficient length does not match the schema"));
            }
        }
        Ok(())
    }
}
