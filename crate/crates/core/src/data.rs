//! Columnar dataset, its schema, and the cached probit design matrix.

use crate::error::{Error, Result};
use crate::probit;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatCol {
    pub name: String,
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub response: String,
    pub continuous: Vec<String>,
    pub categorical: Vec<CatCol>,
}

impl Schema {
    pub fn p(&self) -> usize {
        self.continuous.len()
    }

    pub fn q(&self) -> usize {
        self.categorical.len()
    }

    pub fn levels(&self) -> Vec<usize> {
        self.categorical.iter().map(|c| c.levels).collect()
    }

    pub fn design_dim(&self) -> usize {
        probit::design_dim(self.p(), &self.levels())
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = vec![&self.response];
        names.extend(self.continuous.iter().map(String::as_str));
        names.extend(self.categorical.iter().map(|c| c.name.as_str()));
        if names.iter().any(|n| n.is_empty()) {
            return Err(Error::usage("schema column names must be nonempty"));
        }
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::usage("schema column names must be unique"));
        }
        if let Some(c) = self.categorical.iter().find(|c| c.levels < 2) {
            return Err(Error::usage(format!(
                "categorical column {} must have at least 2 levels",
                c.name
            )));
        }
        Ok(())
    }
}

/// Column-major storage; categorical values are 0-based level indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub z: Vec<u8>,
    pub w: Vec<Vec<f64>>,
    pub u: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        if let Some(c) = self.w.first() {
            c.len()
        } else if let Some(c) = self.u.first() {
            c.len()
        } else {
            self.z.len()
        }
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    pub fn q(&self) -> usize {
        self.u.len()
    }

    pub fn w_row(&self, i: usize) -> Vec<f64> {
        self.w.iter().map(|c| c[i]).collect()
    }

    pub fn u_row(&self, i: usize) -> Vec<usize> {
        self.u.iter().map(|c| c[i]).collect()
    }

    pub fn validate_against(&self, schema: &Schema, require_response: bool) -> Result<()> {
        schema.validate()?;
        if self.p() != schema.p() || self.q() != schema.q() {
            return Err(Error::usage(format!(
                "dataset has {}x{} covariate columns, schema expects {}x{}",
                self.p(),
                self.q(),
                schema.p(),
                schema.q()
            )));
        }
        let n = self.n();
        if n == 0 {
            return Err(Error::usage("dataset has no rows"));
        }
        if self.w.iter().any(|c| c.len() != n) || self.u.iter().any(|c| c.len() != n) {
            return Err(Error::usage("ragged dataset columns"));
        }
        if require_response && self.z.len() != n {
            return Err(Error::usage("response column missing or incomplete"));
        }
        if !self.z.is_empty() && self.z.iter().any(|&z| z > 1) {
            return Err(Error::usage("response values must be 0 or 1"));
        }
        for (col, schema_col) in self.u.iter().zip(&schema.categorical) {
            if let Some(&bad) = col.iter().find(|&&v| v >= schema_col.levels) {
                return Err(Error::usage(format!(
                    "category value {} out of range for column {} with {} levels",
                    bad + 1,
                    schema_col.name,
                    schema_col.levels
                )));
            }
        }
        if self.w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::usage("continuous covariates must be finite"));
        }
        Ok(())
    }
}

/// Row-major cached design rows for every observation.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    d: usize,
    rows: Vec<f64>,
}

impl DesignMatrix {
    pub fn build(data: &Dataset, schema: &Schema) -> DesignMatrix {
        let levels = schema.levels();
        let d = schema.design_dim();
        let n = data.n();
        let mut rows = Vec::with_capacity(n * d);
        let mut buf = Vec::with_capacity(d);
        for i in 0..n {
            probit::encode_design(&data.w_row(i), &data.u_row(i), &levels, &mut buf);
            rows.extend_from_slice(&buf);
        }
        DesignMatrix { d, rows }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }
}

/// Per-column location/scale transform fitted on training data; applied to
/// test covariates before prediction when fitting used --standardize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub cols: Vec<(f64, f64)>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Standardizer {
        let cols = data
            .w
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                let mean = c.iter().sum::<f64>() / n;
                let var = c.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                (mean, if sd > 0.0 { sd } else { 1.0 })
            })
            .collect();
        Standardizer { cols }
    }

    pub fn apply(&self, data: &mut Dataset) -> Result<()> {
        if data.w.len() != self.cols.len() {
            return Err(Error::usage("standardizer does not match column count"));
        }
        for (col, &(mean, sd)) in data.w.iter_mut().zip(&self.cols) {
            for x in col {
                *x = (*x - mean) / sd;
            }
        }
        Ok(())
    }
}
