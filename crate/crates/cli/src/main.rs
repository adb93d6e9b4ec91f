use clap::{Args, Parser, Subcommand, ValueEnum};
use sign_core::io::{self, RunConfig, TraceFile};
use sign_core::predict::{auc, Predictor};
use sign_core::synth;
use sign_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sign",
    version,
    about = "Sharded nonparametric clustering and probit classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reference synthetic dataset
    Simulate(SimulateArgs),
    /// Fit the model and write the partition, trace, and run report
    Fit(FitArgs),
    /// Score new rows with a saved model
    Predict(PredictArgs),
    /// Compare predictions against observed outcomes
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    /// five Gaussian clusters with cluster-specific probit rules
    Sim1,
    /// one population with a nonlinear success probability
    Sim2,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: SimKind,
    /// Number of observations (sim1 needs a multiple of five)
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
    /// Also write the true cluster per observation (sim1 only has one)
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Also write the matching schema JSON
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV with the response column
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON describing the columns
    #[arg(long)]
    schema: PathBuf,
    /// Run configuration JSON; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for partition.csv, trace.json, report.json
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_items_per_shard: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_frac: Option<f64>,
    #[arg(long)]
    thin: Option<usize>,
    /// Center and scale continuous covariates before fitting
    #[arg(long)]
    standardize: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// trace.json written by fit
    #[arg(long)]
    model: PathBuf,
    /// CSV of rows to score; the response column is optional and ignored
    #[arg(long)]
    test: PathBuf,
    /// Output CSV of class-1 probabilities
    #[arg(long)]
    out: PathBuf,
    /// Seed for the fresh-cluster coefficient draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// predictions.csv written by predict
    #[arg(long)]
    predictions: PathBuf,
    /// CSV holding the observed outcomes, aligned by row order
    #[arg(long)]
    truth: PathBuf,
    /// Name of the outcome column in the truth file
    #[arg(long, default_value = "z")]
    response: String,
    /// Output metrics JSON
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Predict(args) => predict(args),
        Command::Eval(args) => eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let sim = match args.kind {
        SimKind::Sim1 => synth::gen_sim1(args.n, args.seed)?,
        SimKind::Sim2 => synth::gen_sim2(args.n, args.seed)?,
    };
    io::write_table(&args.out, &sim.data, &sim.schema)?;
    if let Some(path) = &args.truth_out {
        let labels = sim.labels.as_ref().ok_or_else(|| {
            Error::usage("this generator has no true clustering to write")
        })?;
        io::write_partition(path, labels)?;
    }
    if let Some(path) = &args.schema_out {
        io::write_json(path, &sim.schema)?;
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), Error> {
    let schema = io::read_schema(&args.schema)?;
    let mut run = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        run.seed = v;
    }
    if let Some(v) = args.workers {
        run.workers = v;
    }
    if let Some(v) = args.max_items_per_shard {
        run.max_items_per_shard = v;
    }
    if let Some(v) = args.iters {
        run.n_iter = v;
    }
    if let Some(v) = args.burn_frac {
        run.burn_frac = v;
    }
    if let Some(v) = args.thin {
        run.thin = v;
    }
    if args.standardize {
        run.standardize = true;
    }
    let (hyper, cfg, standardize) = run.to_parts()?;

    let mut data = io::read_table(&args.data, &schema, true)?;
    let standardizer = if standardize {
        let s = sign_core::Standardizer::fit(&data);
        s.apply(&mut data)?;
        Some(s)
    } else {
        None
    };

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    let fit = sign_core::run_sign(&data, &schema, &hyper, &cfg)?;
    io::write_partition(&args.out_dir.join("partition.csv"), &fit.labels)?;
    TraceFile::new(fit.trace, standardizer).save(&args.out_dir.join("trace.json"))?;
    io::write_json(&args.out_dir.join("report.json"), &fit.report)?;
    Ok(())
}

fn predict(args: PredictArgs) -> Result<(), Error> {
    let tf = TraceFile::load(&args.model)?;
    let mut test = io::read_table(&args.test, &tf.trace.schema, false)?;
    if test.n() == 0 {
        return io::write_predictions(&args.out, &[]);
    }
    if let Some(s) = &tf.standardize {
        s.apply(&mut test)?;
    }
    let predictor = Predictor::new(&tf.trace, args.seed)?;
    let probs = predictor.predict_dataset(&test)?;
    io::write_predictions(&args.out, &probs)
}

fn eval(args: EvalArgs) -> Result<(), Error> {
    let probs = io::read_predictions(&args.predictions)?;
    let truth = io::read_outcomes(&args.truth, &args.response)?;
    if probs.len() != truth.len() {
        return Err(Error::usage(format!(
            "{} predictions but {} outcomes",
            probs.len(),
            truth.len()
        )));
    }
    let auc = auc(&probs, &truth)?;
    let n_pos = truth.iter().filter(|&&z| z == 1).count();
    let metrics = serde_json::json!({
        "auc": auc,
        "n_pos": n_pos,
        "n_neg": truth.len() - n_pos,
    });
    io::write_json(&args.out, &metrics)
}
