mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;
use tinyhr::bench::{
    bench_pipeline, markdown_table, mean_std, BenchOptions, EvalReport, PowerModel,
};
use tinyhr::data::{make_dataset, DatasetManifest};
use tinyhr::models::{train_bundle, BundleError, TrainError, TrainedBundle};
use tinyhr::pipelines::{
    run, run_batch, write_batch_csv, PipelineContext, PipelineError, PipelineKind, PipelineResult,
};
use tinyhr::signal::{Frame, HIGH_RATE_HZ, LOW_RATE_HZ};
use tinyhr::{DataError, Dataset};

use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("training failed in {stage}: {message}")]
    Training { stage: String, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Training { .. } => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::TooFew(_) | DataError::InvalidFraction(_) => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::Data(format!("bundle: {e}"))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Training {
            stage: e.stage().unwrap_or("data preparation").to_string(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tinyhr",
    version,
    about = "Heart-rate estimation from short pulse frames"
)]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, splitting and training (overrides data.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PipelineArg {
    Sp,
    Ml,
    Hybrid,
    All,
}

impl PipelineArg {
    fn kinds(self) -> Vec<PipelineKind> {
        match self {
            PipelineArg::Sp => vec![PipelineKind::SP],
            PipelineArg::Ml => vec![PipelineKind::ML],
            PipelineArg::Hybrid => vec![PipelineKind::Hybrid],
            PipelineArg::All => PipelineKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV and its manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the upsampler, classifier and regressor.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train this many consecutive seeds and record per-metric std.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Evaluate pipelines on the test split; report JSON goes to stdout.
    Eval {
        /// Bundle directory; needed for the ML and Hybrid pipelines.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = PipelineArg::All)]
        pipeline: PipelineArg,
        /// Also write per-frame results as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the comparison table as Markdown.
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
    /// Run one frame through a pipeline; result JSON goes to stdout.
    Infer {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PipelineArg::Ml)]
        pipeline: PipelineArg,
        /// Comma-separated samples; read from stdin when omitted.
        #[arg(long, allow_hyphen_values = true)]
        row: Option<String>,
        /// Apply baseline correction and normalization before the pipeline.
        #[arg(long)]
        preprocess: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_deref())?.with_seed(cli.seed);
    match cli.command {
        Command::Gen { out } => cmd_gen(&config, &out),
        Command::Train { data, out, seeds } => cmd_train(&config, &data, &out, seeds),
        Command::Eval {
            bundle,
            data,
            pipeline,
            csv,
            markdown,
        } => cmd_eval(
            &config,
            cli.seed,
            bundle.as_deref(),
            &data,
            pipeline,
            csv.as_deref(),
            markdown.as_deref(),
        ),
        Command::Infer {
            bundle,
            pipeline,
            row,
            preprocess,
        } => cmd_infer(&config, bundle.as_deref(), pipeline, row, preprocess),
    }
}

fn print_json(v: &Value) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

fn cmd_gen(config: &Config, out: &Path) -> Result<(), CliError> {
    let d = &config.data;
    let dataset = make_dataset(d.n, d.abnormal_fraction, d.seed)?;
    dataset.save_csv(out)?;
    let manifest = DatasetManifest {
        seed: d.seed,
        n: dataset.len(),
        abnormal_fraction: d.abnormal_fraction,
        abnormal_count: dataset.abnormal_count(),
        csv_file: out
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(manifest_path(out), text + "\n")?;
    print_json(&serde_json::to_value(&manifest).expect("manifest serializes"))
}

/// Per-leaf standard deviation of numeric fields across several JSON documents of the same shape.
fn leaf_std(docs: &[Value]) -> Value {
    match docs.first() {
        Some(Value::Object(first)) => Value::Object(
            first
                .keys()
                .map(|k| {
                    let col: Vec<Value> = docs.iter().filter_map(|d| d.get(k).cloned()).collect();
                    (k.clone(), leaf_std(&col))
                })
                .filter(|(_, v)| !v.is_null())
                .collect(),
        ),
        Some(Value::Number(_)) => {
            let xs: Vec<f64> = docs.iter().filter_map(Value::as_f64).collect();
            json!(mean_std(&xs).1)
        }
        _ => Value::Null,
    }
}

fn cmd_train(config: &Config, data: &Path, out: &Path, seeds: usize) -> Result<(), CliError> {
    if seeds == 0 {
        return Err(CliError::Config("--seeds must be positive".into()));
    }
    let dataset = Dataset::load_csv(data, config.data.seed)?;
    let base = config.data.seed;
    let mut bundles = Vec::with_capacity(seeds);
    for i in 0..seeds as u64 {
        let seed = base.wrapping_add(i);
        eprintln!("training seed {seed}");
        bundles.push(train_bundle(&dataset, &config.bundle_config(seed))?);
    }
    let seed_std = (seeds > 1).then(|| {
        let docs: Vec<Value> = bundles
            .iter()
            .map(|b| serde_json::to_value(&b.metrics).expect("metrics serialize"))
            .collect();
        json!({ "seeds": seeds, "std": leaf_std(&docs) })
    });
    let manifest = bundles[0].save_with(out, seed_std)?;
    print_json(&serde_json::to_value(&manifest).expect("manifest serializes"))
}

fn load_bundle(
    dir: Option<&Path>,
    kinds: &[PipelineKind],
) -> Result<Option<TrainedBundle>, CliError> {
    match dir {
        Some(d) => Ok(Some(TrainedBundle::load(d)?)),
        None if kinds.iter().all(|&k| k == PipelineKind::SP) => Ok(None),
        None => Err(CliError::Config(
            "--bundle is required for the ML and Hybrid pipelines".into(),
        )),
    }
}

/// Moves the nondeterministic fields of a report into a separate subtree.
fn split_timing(report: &EvalReport) -> (Value, Value) {
    let mut v = serde_json::to_value(report).expect("report serializes");
    let timing = v
        .as_object_mut()
        .and_then(|o| o.remove("timing"))
        .unwrap_or(Value::Null);
    (v, timing)
}

fn cmd_eval(
    config: &Config,
    seed: Option<u64>,
    bundle_dir: Option<&Path>,
    data: &Path,
    pipeline: PipelineArg,
    csv: Option<&Path>,
    markdown: Option<&Path>,
) -> Result<(), CliError> {
    let kinds = pipeline.kinds();
    let bundle = load_bundle(bundle_dir, &kinds)?;
    let split_seed = seed
        .or(bundle.as_ref().map(|b| b.split_seed))
        .unwrap_or(config.data.seed);
    let dataset = Dataset::load_csv(data, split_seed)?;
    let ctx = PipelineContext {
        gate_threshold: config.pipeline.gate_threshold,
        ..PipelineContext::new(bundle.as_ref(), &config.filters)
    };
    let options = BenchOptions {
        repeats: config.bench.repeats,
        power: PowerModel::new(config.bench.power_mw)
            .map_err(|e| CliError::Config(e.to_string()))?,
        latency_frames: config.bench.latency_frames,
        include_entire: true,
    };
    let mut reports = Vec::new();
    for &kind in &kinds {
        let report = bench_pipeline(kind, &dataset, bundle.as_ref(), &ctx, &options).map_err(
            |e| match e {
                tinyhr::BenchError::Pipeline(p) => CliError::from(p),
                e => CliError::Data(e.to_string()),
            },
        )?;
        reports.push(report);
    }
    if let Some(path) = csv {
        let test: Vec<(usize, &Frame)> = dataset
            .indices(tinyhr::Split::Test)
            .into_iter()
            .map(|i| (i, &dataset.frames[i]))
            .collect();
        let mut rows = Vec::new();
        for &kind in &kinds {
            rows.extend(run_batch(kind, test.iter().copied(), &ctx)?);
        }
        write_batch_csv(&rows, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    let table = markdown_table(&reports);
    if let Some(path) = markdown {
        std::fs::write(path, &table)?;
    }
    let (results, timings): (Vec<Value>, Vec<Value>) = reports.iter().map(split_timing).unzip();
    let timing: serde_json::Map<String, Value> = kinds
        .iter()
        .zip(timings)
        .map(|(k, t)| (k.to_string(), t))
        .collect();
    print_json(&json!({
        "split_seed": split_seed,
        "reports": results,
        "timing": timing,
        "table_markdown": table,
    }))
}

fn parse_row(text: &str) -> Result<Vec<f64>, CliError> {
    text.trim()
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Data(format!("bad sample `{}`: {e}", s.trim())))
        })
        .collect()
}

fn result_json(r: &PipelineResult) -> Value {
    let mut v = serde_json::to_value(r).expect("result serializes");
    let obj = v.as_object_mut().expect("struct serializes to an object");
    let stages = obj.remove("stage_times").unwrap_or(Value::Null);
    obj.insert(
        "timing".into(),
        json!({ "stage_times": stages, "total_ns": r.total_ns() }),
    );
    v
}

fn cmd_infer(
    config: &Config,
    bundle_dir: Option<&Path>,
    pipeline: PipelineArg,
    row: Option<String>,
    preprocess: bool,
) -> Result<(), CliError> {
    let kinds = pipeline.kinds();
    if kinds.len() != 1 {
        return Err(CliError::Config("infer runs a single pipeline".into()));
    }
    let kind = kinds[0];
    let row = match row {
        Some(r) => r,
        None => std::io::stdin()
            .lock()
            .lines()
            .map_while(Result::ok)
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| CliError::Data("no frame on stdin".into()))?,
    };
    let rate = if kind == PipelineKind::SP {
        HIGH_RATE_HZ
    } else {
        LOW_RATE_HZ
    };
    let mut frame = Frame::new(parse_row(&row)?, rate);
    if frame.len() != kind.input_len() {
        return Err(CliError::Data(format!(
            "{kind} pipeline needs {} samples, got {}",
            kind.input_len(),
            frame.len()
        )));
    }
    if preprocess {
        frame = frame
            .preprocess()
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bundle = load_bundle(bundle_dir, &kinds)?;
    let ctx = PipelineContext {
        gate_threshold: config.pipeline.gate_threshold,
        ..PipelineContext::new(bundle.as_ref(), &config.filters)
    };
    let result = run(kind, &frame, &ctx)?;
    print_json(&result_json(&result))
}
