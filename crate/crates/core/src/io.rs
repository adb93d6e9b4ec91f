//! File formats: schema and run-config JSON, dataset/partition/prediction
//! CSV, and the saved-model container. CSV categorical levels are 1-based on
//! disk and 0-based in memory; cluster labels likewise. Unknown CSV columns
//! are ignored so id columns can ride along.

use crate::config::{Hyperparams, McmcConfig, McmcStep, SignConfig};
use crate::data::{Dataset, Schema, Standardizer};
use crate::error::{Error, Result};
use crate::partition::PyParams;
use crate::similarity::SimilarityHyper;
use crate::trace::PosteriorTrace;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path, err: &csv::Error) -> Error {
    let line = err.position().map_or(0, csv::Position::line);
    Error::Csv { path: path.display().to_string(), line, msg: err.to_string() }
}

fn cell_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Csv { path: path.display().to_string(), line, msg: msg.into() }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let schema: Schema = read_json(path)?;
    schema.validate()?;
    Ok(schema)
}

/// Reads a dataset CSV against a schema. Columns are located by header name;
/// the response may be absent when not required; extra columns are ignored.
pub fn read_table(path: &Path, schema: &Schema, require_response: bool) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, &e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, &e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let z_idx = match col(&schema.response) {
        Some(i) => Some(i),
        None if require_response => {
            return Err(cell_err(path, 1, format!("missing column {}", schema.response)));
        }
        None => None,
    };
    let mut w_idx = Vec::with_capacity(schema.p());
    for name in &schema.continuous {
        w_idx.push(
            col(name).ok_or_else(|| cell_err(path, 1, format!("missing column {name}")))?,
        );
    }
    let mut u_idx = Vec::with_capacity(schema.q());
    for c in &schema.categorical {
        u_idx.push(
            col(&c.name)
                .ok_or_else(|| cell_err(path, 1, format!("missing column {}", c.name)))?,
        );
    }

    let mut data = Dataset {
        z: Vec::new(),
        w: vec![Vec::new(); schema.p()],
        u: vec![Vec::new(); schema.q()],
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, &e))?;
        let line = rec.position().map_or(0, csv::Position::line);
        let cell = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| cell_err(path, line, "short record"))
        };
        if let Some(i) = z_idx {
            let raw = cell(i)?;
            match raw.trim().parse::<u8>() {
                Ok(v @ (0 | 1)) => data.z.push(v),
                _ => {
                    return Err(cell_err(
                        path,
                        line,
                        format!("response {} must be 0 or 1, got {raw:?}", schema.response),
                    ))
                }
            }
        }
        for (k, &i) in w_idx.iter().enumerate() {
            let raw = cell(i)?;
            let v: f64 = raw.trim().parse().map_err(|_| {
                cell_err(path, line, format!("bad number {raw:?} in column {}", schema.continuous[k]))
            })?;
            if !v.is_finite() {
                return Err(cell_err(
                    path,
                    line,
                    format!("non-finite value in column {}", schema.continuous[k]),
                ));
            }
            data.w[k].push(v);
        }
        for (k, &i) in u_idx.iter().enumerate() {
            let raw = cell(i)?;
            let sc = &schema.categorical[k];
            let v: usize = raw.trim().parse().map_err(|_| {
                cell_err(path, line, format!("bad category {raw:?} in column {}", sc.name))
            })?;
            if v < 1 || v > sc.levels {
                return Err(cell_err(
                    path,
                    line,
                    format!("category {v} out of range 1..={} in column {}", sc.levels, sc.name),
                ));
            }
            data.u[k].push(v - 1);
        }
    }
    Ok(data)
}

/// Writes a dataset CSV: response (when present), continuous, categorical.
pub fn write_table(path: &Path, data: &Dataset, schema: &Schema) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(path, &e))?;
    let has_z = !data.z.is_empty();
    let mut header: Vec<&str> = Vec::new();
    if has_z {
        header.push(&schema.response);
    }
    header.extend(schema.continuous.iter().map(String::as_str));
    header.extend(schema.categorical.iter().map(|c| c.name.as_str()));
    wtr.write_record(&header).map_err(|e| csv_err(path, &e))?;
    let mut row: Vec<String> = Vec::new();
    for i in 0..data.n() {
        row.clear();
        if has_z {
            row.push(data.z[i].to_string());
        }
        row.extend(data.w.iter().map(|c| c[i].to_string()));
        row.extend(data.u.iter().map(|c| (c[i] + 1).to_string()));
        wtr.write_record(&row).map_err(|e| csv_err(path, &e))?;
    }
    wtr.flush().map_err(|e| io_err(path, e))
}

/// observation_id,cluster with 1-based cluster labels.
pub fn write_partition(path: &Path, labels: &[usize]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(path, &e))?;
    wtr.write_record(["observation_id", "cluster"]).map_err(|e| csv_err(path, &e))?;
    for (i, &l) in labels.iter().enumerate() {
        wtr.write_record([i.to_string(), (l + 1).to_string()])
            .map_err(|e| csv_err(path, &e))?;
    }
    wtr.flush().map_err(|e| io_err(path, e))
}

pub fn read_partition(path: &Path) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, &e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, &e))?.clone();
    let ci = headers
        .iter()
        .position(|h| h == "cluster")
        .ok_or_else(|| cell_err(path, 1, "missing column cluster"))?;
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, &e))?;
        let line = rec.position().map_or(0, csv::Position::line);
        let raw = rec.get(ci).ok_or_else(|| cell_err(path, line, "short record"))?;
        let v: usize = raw
            .trim()
            .parse()
            .map_err(|_| cell_err(path, line, format!("bad cluster label {raw:?}")))?;
        if v == 0 {
            return Err(cell_err(path, line, "cluster labels start at 1"));
        }
        labels.push(v - 1);
    }
    Ok(labels)
}

pub fn write_predictions(path: &Path, probs: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(path, &e))?;
    wtr.write_record(["observation_id", "probability"]).map_err(|e| csv_err(path, &e))?;
    for (i, &p) in probs.iter().enumerate() {
        wtr.write_record([i.to_string(), p.to_string()]).map_err(|e| csv_err(path, &e))?;
    }
    wtr.flush().map_err(|e| io_err(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, &e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, &e))?.clone();
    let pi = headers
        .iter()
        .position(|h| h == "probability")
        .ok_or_else(|| cell_err(path, 1, "missing column probability"))?;
    let mut probs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, &e))?;
        let line = rec.position().map_or(0, csv::Position::line);
        let raw = rec.get(pi).ok_or_else(|| cell_err(path, line, "short record"))?;
        let p: f64 = raw
            .trim()
            .parse()
            .map_err(|_| cell_err(path, line, format!("bad probability {raw:?}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(cell_err(path, line, format!("probability {p} outside [0, 1]")));
        }
        probs.push(p);
    }
    Ok(probs)
}

/// Pulls one 0/1 column out of an arbitrary CSV, for evaluation truth.
pub fn read_outcomes(path: &Path, response: &str) -> Result<Vec<u8>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, &e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, &e))?.clone();
    let zi = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| cell_err(path, 1, format!("missing column {response}")))?;
    let mut z = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, &e))?;
        let line = rec.position().map_or(0, csv::Position::line);
        let raw = rec.get(zi).ok_or_else(|| cell_err(path, line, "short record"))?;
        match raw.trim().parse::<u8>() {
            Ok(v @ (0 | 1)) => z.push(v),
            _ => {
                return Err(cell_err(path, line, format!("outcome must be 0 or 1, got {raw:?}")))
            }
        }
    }
    Ok(z)
}

pub const TRACE_FORMAT: &str = "sign-trace";
pub const TRACE_VERSION: u32 = 1;

/// Saved-model container: the retained trace plus the covariate transform
/// test rows must pass through.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceFile {
    pub format: String,
    pub version: u32,
    pub standardize: Option<Standardizer>,
    pub trace: PosteriorTrace,
}

impl TraceFile {
    pub fn new(trace: PosteriorTrace, standardize: Option<Standardizer>) -> TraceFile {
        TraceFile {
            format: TRACE_FORMAT.to_string(),
            version: TRACE_VERSION,
            standardize,
            trace,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<TraceFile> {
        let tf: TraceFile = read_json(path)?;
        if tf.format != TRACE_FORMAT {
            return Err(Error::Format(format!(
                "{}: not a saved model (format {:?})",
                path.display(),
                tf.format
            )));
        }
        if tf.version != TRACE_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported model version {}",
                path.display(),
                tf.version
            )));
        }
        tf.trace.validate()?;
        Ok(tf)
    }
}

/// Flat run configuration for the fit command; every field is optional in
/// the file and falls back to the reference defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub discount: f64,
    pub tau_beta: f64,
    pub mu0: f64,
    pub v0: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub a_pi: Option<f64>,
    pub n_iter: usize,
    pub burn_frac: f64,
    pub thin: usize,
    pub max_items_per_shard: usize,
    pub workers: usize,
    pub seed: u64,
    pub standardize: bool,
    pub mcmc_by_step: BTreeMap<usize, McmcStep>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hy = Hyperparams::default();
        let sc = SignConfig::default();
        RunConfig {
            alpha: hy.py.alpha,
            discount: hy.py.discount,
            tau_beta: hy.tau_beta,
            mu0: hy.similarity.mu0,
            v0: hy.similarity.v0,
            a_lambda: hy.similarity.a_lambda,
            b_lambda: hy.similarity.b_lambda,
            a_pi: hy.similarity.a_pi,
            n_iter: sc.mcmc.n_iter,
            burn_frac: sc.mcmc.burn_frac,
            thin: sc.mcmc.thin,
            max_items_per_shard: sc.max_items_per_shard,
            workers: sc.workers,
            seed: sc.seed,
            standardize: false,
            mcmc_by_step: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        read_json(path)
    }

    pub fn to_parts(&self) -> Result<(Hyperparams, SignConfig, bool)> {
        let hyper = Hyperparams {
            py: PyParams { alpha: self.alpha, discount: self.discount },
            tau_beta: self.tau_beta,
            similarity: SimilarityHyper {
                mu0: self.mu0,
                v0: self.v0,
                a_lambda: self.a_lambda,
                b_lambda: self.b_lambda,
                a_pi: self.a_pi,
            },
        };
        hyper.validate()?;
        let cfg = SignConfig {
            max_items_per_shard: self.max_items_per_shard,
            workers: self.workers,
            seed: self.seed,
            mcmc: McmcConfig {
                n_iter: self.n_iter,
                burn_frac: self.burn_frac,
                thin: self.thin,
                seed: self.seed,
            },
            mcmc_by_step: self.mcmc_by_step.clone(),
        };
        cfg.validate()?;
        Ok((hyper, cfg, self.standardize))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use std::fs;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn dataset_csv_round_trip_is_lossless() {
        let dir = tmp();
        let sim = synth::gen_sim1(20, 4).unwrap();
        let path = dir.path().join("data.csv");
        write_table(&path, &sim.data, &sim.schema).unwrap();
        let back = read_table(&path, &sim.schema, true).unwrap();
        assert_eq!(back, sim.data);
    }

    #[test]
    fn awkward_floats_survive_the_csv() {
        let dir = tmp();
        let schema = Schema {
            response: "z".into(),
            continuous: vec!["w1".into()],
            categorical: vec![],
        };
        let data = Dataset {
            z: vec![0, 1, 0, 1],
            w: vec![vec![0.1 + 0.2, 1e-300, -1.5e308, -0.0]],
            u: vec![],
        };
        let path = dir.path().join("data.csv");
        write_table(&path, &data, &schema).unwrap();
        let back = read_table(&path, &schema, true).unwrap();
        assert_eq!(back.w[0][0].to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back.w[0][1], 1e-300);
        assert_eq!(back.w[0][2], -1.5e308);
        assert_eq!(back.w[0][3].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn reader_reports_line_numbers() {
        let dir = tmp();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "z,w1,u1\n1,0.5,2\n0,oops,1\n").unwrap();
        let schema = Schema {
            response: "z".into(),
            continuous: vec!["w1".into()],
            categorical: vec![crate::data::CatCol { name: "u1".into(), levels: 3 }],
        };
        let err = read_table(&path, &schema, true).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "{msg}");
        assert!(msg.contains("w1"), "{msg}");
        assert_eq!(err.exit_code(), 2);

        fs::write(&path, "z,w1,u1\n1,0.5,4\n").unwrap();
        let err = read_table(&path, &schema, true).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        fs::write(&path, "w1,u1\n0.5,1\n").unwrap();
        let err = read_table(&path, &schema, true).unwrap_err();
        assert!(err.to_string().contains("missing column z"), "{err}");
        // same file is fine when the response is optional
        let data = read_table(&path, &schema, false).unwrap();
        assert!(data.z.is_empty());
        assert_eq!(data.n(), 1);
    }

    #[test]
    fn extra_columns_are_ignored() {
        let dir = tmp();
        let path = dir.path().join("extra.csv");
        fs::write(&path, "observation_id,z,w1,note\n0,1,0.25,keep\n1,0,-1.5,me\n").unwrap();
        let schema = Schema {
            response: "z".into(),
            continuous: vec!["w1".into()],
            categorical: vec![],
        };
        let data = read_table(&path, &schema, true).unwrap();
        assert_eq!(data.z, vec![1, 0]);
        assert_eq!(data.w[0], vec![0.25, -1.5]);
    }

    #[test]
    fn partition_and_prediction_round_trips() {
        let dir = tmp();
        let p = dir.path().join("partition.csv");
        write_partition(&p, &[0, 1, 0, 2]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("observation_id,cluster\n0,1\n1,2\n"));
        assert_eq!(read_partition(&p).unwrap(), vec![0, 1, 0, 2]);

        let q = dir.path().join("pred.csv");
        write_predictions(&q, &[0.25, 1.0, 1e-9]).unwrap();
        assert_eq!(read_predictions(&q).unwrap(), vec![0.25, 1.0, 1e-9]);

        let o = dir.path().join("truth.csv");
        fs::write(&o, "z,w1\n1,0.0\n0,2.0\n").unwrap();
        assert_eq!(read_outcomes(&o, "z").unwrap(), vec![1, 0]);
        assert!(read_outcomes(&o, "label").is_err());
    }

    #[test]
    fn model_container_checks_its_tag() {
        let dir = tmp();
        let sim = synth::gen_sim1(5, 1).unwrap();
        let design = crate::data::DesignMatrix::build(&sim.data, &sim.schema);
        let hyper = Hyperparams::default();
        let ctx = crate::shard::FitContext::new(
            &sim.data,
            &sim.schema,
            &design,
            &hyper,
            crate::shard::Likelihood::Full,
        );
        let items: Vec<_> = (0..5).map(crate::shard::BlockItem::singleton).collect();
        let mcmc = McmcConfig { n_iter: 20, burn_frac: 0.5, thin: 1, seed: 0 };
        let out = crate::shard::mcmc_shard(ctx, &items, &mcmc).unwrap();
        let path = dir.path().join("model.json");
        TraceFile::new(out.trace, None).save(&path).unwrap();
        let back = TraceFile::load(&path).unwrap();
        assert_eq!(back.trace.n_obs, 5);
        assert_eq!(back.trace.draws.len(), 10);

        let mut broken: serde_json::Value = read_json(&path).unwrap();
        broken["format"] = "something-else".into();
        write_json(&path, &broken).unwrap();
        assert!(TraceFile::load(&path).is_err());
        let mut broken: serde_json::Value = read_json(&path).unwrap();
        broken["format"] = TRACE_FORMAT.into();
        broken["version"] = 99.into();
        write_json(&path, &broken).unwrap();
        assert!(TraceFile::load(&path).is_err());
    }

    #[test]
    fn run_config_defaults_and_overrides() {
        let dir = tmp();
        let path = dir.path().join("config.json");
        fs::write(&path, "{}").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let (hyper, sign, standardize) = cfg.to_parts().unwrap();
        assert_eq!(hyper, Hyperparams::default());
        assert_eq!(sign.max_items_per_shard, 250);
        assert!(!standardize);

        fs::write(
            &path,
            r#"{"alpha": 2.0, "discount": 0.0, "n_iter": 50, "burn_frac": 0.2, "thin": 1,
               "mcmc_by_step": {"2": {"n_iter": 10, "burn_frac": 0.0, "thin": 1}}}"#,
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        let (hyper, sign, _) = cfg.to_parts().unwrap();
        assert_eq!(hyper.py.alpha, 2.0);
        assert_eq!(sign.mcmc.n_iter, 50);
        assert_eq!(sign.mcmc_for_step(2).n_iter, 10);

        fs::write(&path, r#"{"alpa": 2.0}"#).unwrap();
        assert!(RunConfig::from_file(&path).is_err());
        fs::write(&path, r#"{"discount": 1.5}"#).unwrap();
        assert!(RunConfig::from_file(&path).unwrap().to_parts().is_err());
    }
}
