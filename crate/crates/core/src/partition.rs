//! Pitman-Yor exchangeable partition probabilities and the block membership
//! weights used by the Gibbs sweeps. Everything is kept in log space.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyParams {
    pub alpha: f64,
    /// Discount in [0, 1); 0 recovers the Dirichlet process.
    pub discount: f64,
}

impl PyParams {
    pub fn new(alpha: f64, discount: f64) -> Result<Self> {
        let p = PyParams { alpha, discount };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !self.discount.is_finite() {
            return Err(Error::domain("Pitman-Yor parameters must be finite"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::domain(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if self.alpha <= -self.discount {
            return Err(Error::domain(format!(
                "alpha must exceed -discount, got alpha={} discount={}",
                self.alpha, self.discount
            )));
        }
        Ok(())
    }
}

impl Default for PyParams {
    fn default() -> Self {
        PyParams { alpha: 1.0, discount: 0.5 }
    }
}

/// log of the rising factorial (x)_n = x(x+1)...(x+n-1), n = 0 giving log 1.
pub fn pochhammer_rising_log(x: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!(
            "rising factorial needs x > 0, got x={x}"
        )));
    }
    Ok(ln_gamma(x + n as f64) - ln_gamma(x))
}

/// log of the increment form (x|y)_n = x(x+y)...(x+(n-1)y).
pub fn pochhammer_incr_log(x: f64, y: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for k in 0..n {
        let factor = x + k as f64 * y;
        if !(factor > 0.0) {
            return Err(Error::domain(format!(
                "non-positive factor {factor} in ({x}|{y})_{n}"
            )));
        }
        acc += factor.ln();
    }
    Ok(acc)
}

/// Unnormalized log EPPF of the Pitman-Yor process for a partition with the
/// given cluster sizes (observation units):
/// (alpha|d)_C * prod_c (1-d)_{n_c - 1}.
pub fn py_log_eppf(sizes: &[u64], py: &PyParams) -> Result<f64> {
    py.validate()?;
    if sizes.is_empty() {
        return Err(Error::domain("partition must have at least one cluster"));
    }
    let mut acc = pochhammer_incr_log(py.alpha, py.discount, sizes.len() as u64)?;
    for &n_c in sizes {
        if n_c == 0 {
            return Err(Error::domain("cluster sizes must be >= 1"));
        }
        acc += pochhammer_rising_log(1.0 - py.discount, n_c - 1)?;
    }
    Ok(acc)
}

/// Log prior weights for moving an item of `item_size` observations into each
/// existing cluster (sizes exclude the item) or a new one (last entry).
/// Existing cluster c: Gamma(n_c + r - d) / Gamma(n_c - d); new cluster:
/// (alpha + d*C) * Gamma(r - d) / Gamma(1 - d). With r = 1 this is the usual
/// Polya urn. A caller normalizes at sampling time.
pub fn block_membership_log_weights(
    item_size: u64,
    cluster_sizes: &[u64],
    py: &PyParams,
) -> Result<Vec<f64>> {
    py.validate()?;
    if item_size == 0 {
        return Err(Error::domain("item must contain at least one observation"));
    }
    let r = item_size as f64;
    let d = py.discount;
    if cluster_sizes.is_empty() {
        // Sole option; any constant works after normalization.
        return Ok(vec![0.0]);
    }
    let mut w = Vec::with_capacity(cluster_sizes.len() + 1);
    for &n_c in cluster_sizes {
        if n_c == 0 {
            return Err(Error::domain("cluster sizes must be >= 1"));
        }
        let m = n_c as f64;
        w.push(ln_gamma(m + r - d) - ln_gamma(m - d));
    }
    let open = py.alpha + d * cluster_sizes.len() as f64;
    if !(open > 0.0) {
        return Err(Error::domain(format!(
            "new-cluster mass alpha + d*C = {open} must be positive"
        )));
    }
    w.push(open.ln() + ln_gamma(r - d) - ln_gamma(1.0 - d));
    Ok(w)
}

/// Cluster labels for a fixed item set, kept contiguous in 0..C.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("partition of zero items"));
        }
        let c = labels.iter().max().unwrap() + 1;
        let mut seen = vec![false; c];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::domain("cluster labels must be contiguous from 0"));
        }
        Ok(Partition { labels })
    }

    /// Relabels arbitrary labels by order of first appearance.
    pub fn canonicalize(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &l in raw {
            let next = map.len();
            labels.push(*map.entry(l).or_insert(next));
        }
        Partition { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Item counts per cluster.
    pub fn sizes(&self) -> Vec<u64> {
        let mut s = vec![0u64; self.n_clusters()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}
