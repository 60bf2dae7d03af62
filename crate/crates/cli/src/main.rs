//! `flowknn`: feature extraction, synthetic data, k tuning, evaluation,
//! selector benchmarks and query classification from the command line.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use flowknn::flowfeat::{read_feature_csv, write_feature_csv, FeatureRecord};
use flowknn::{
    bench_selectors, classify, evaluate, ingest_packets, split, synth_generate, tune_k, windowize,
    BenchConfig, Dataset, ExecMode, IngestMode, KnnConfig, SelectorKind, SplitSpec, SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "flowknn",
    version,
    about = "Network-flow KNN classification and selector benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a packet CSV into per-window feature rows
    Extract(ExtractArgs),
    /// Generate a labeled synthetic feature CSV
    Synth(SynthArgs),
    /// Pick k by stratified k-fold cross-validation
    TuneK(TuneArgs),
    /// Split a labeled feature CSV and report held-out accuracy
    Eval(EvalArgs),
    /// Count selector operations on seeded random inputs
    Bench(BenchArgs),
    /// Classify query windows against a labeled training file
    Classify(ClassifyArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Packet CSV, or - for stdin
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Feature CSV, or - for stdout
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: PathBuf,
    /// Window length in seconds
    #[arg(long, default_value_t = 20.0, value_parser = positive_f64)]
    window_length: f64,
    /// Fail on the first malformed row instead of skipping it
    #[arg(long, default_value_t = false)]
    strict: bool,
    /// Label written on every row, producing a training file
    #[arg(long, value_name = "NAME")]
    label: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Feature CSV, or - for stdout
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of classes, the last being the UDP flood
    #[arg(long, default_value_t = 6, value_parser = classes)]
    classes: usize,
    #[arg(long, default_value_t = 2000, value_parser = positive)]
    per_class: usize,
    /// Cluster noise magnitude
    #[arg(long, default_value_t = 0.3, value_parser = non_negative_f64)]
    spread: f64,
    /// Probability of relabelling a sample to another class
    #[arg(long, default_value_t = 0.0, value_parser = probability)]
    label_noise: f64,
    /// Also write the label table as JSON
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// Labeled feature CSV, or - for stdin
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Report JSON, or - for stdout
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = folds)]
    folds: usize,
    /// Candidate k values
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9,11", value_parser = positive)]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Labeled feature CSV, or - for stdin
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Report JSON, or - for stdout
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: PathBuf,
    /// Training fraction of each class
    #[arg(long, default_value_t = 0.5, value_parser = fraction)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5, value_parser = positive, conflicts_with = "tune")]
    k: usize,
    #[arg(long, default_value = "kmin", value_parser = selector)]
    selector: SelectorKind,
    /// Choose k by cross-validation on the training part
    #[arg(long, default_value_t = false)]
    tune: bool,
    /// Folds used with --tune
    #[arg(long, default_value_t = 10, value_parser = folds, requires = "tune")]
    folds: usize,
    /// Candidate k values used with --tune
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9,11", value_parser = positive, requires = "tune")]
    ks: Vec<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Report JSON, or - for stdout
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: PathBuf,
    /// Input sizes
    #[arg(long, value_delimiter = ',', default_value = "1000", value_parser = positive)]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5", value_parser = positive)]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "kmin,bubble,merge,oddeven,enumeration", value_parser = selector)]
    strategies: Vec<SelectorKind>,
    /// Repetitions per cell; with 3 or more the first is a warm-up
    #[arg(long, default_value_t = 5, value_parser = positive)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the network selectors with data parallelism
    #[arg(long, default_value_t = false)]
    parallel: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Labeled feature CSV used as the model
    #[arg(long, value_name = "PATH")]
    train: PathBuf,
    /// Query feature CSV, or - for stdin; a label column is ignored
    #[arg(long = "in", value_name = "PATH", default_value = "-")]
    input: PathBuf,
    /// Verdict lines, or - for stdout
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = positive)]
    k: usize,
    #[arg(long, default_value = "kmin", value_parser = selector)]
    selector: SelectorKind,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn folds(s: &str) -> Result<usize, String> {
    let v = positive(s)?;
    if v < 2 {
        return Err("must be at least 2".into());
    }
    Ok(v)
}

fn classes(s: &str) -> Result<usize, String> {
    folds(s)
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if !v.is_finite() {
        return Err("must be finite".into());
    }
    Ok(v)
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v <= 0.0 {
        return Err("must be positive".into());
    }
    Ok(v)
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v < 0.0 {
        return Err("must not be negative".into());
    }
    Ok(v)
}

fn probability(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if !(0.0..=1.0).contains(&v) {
        return Err("must lie in [0, 1]".into());
    }
    Ok(v)
}

fn fraction(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if !(v > 0.0 && v < 1.0) {
        return Err("must lie strictly between 0 and 1".into());
    }
    Ok(v)
}

fn selector(s: &str) -> Result<SelectorKind, String> {
    s.parse().map_err(|e: flowknn::Error| e.to_string())
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn open_input(path: &Path) -> anyhow::Result<Box<dyn Read>> {
    if is_stdio(path) {
        return Ok(Box::new(io::stdin().lock()));
    }
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

/// Writes to stdout, or to a temp file beside `path` that is renamed into
/// place once `body` succeeds.
fn write_output<F>(path: &Path, body: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
{
    if is_stdio(path) {
        let mut w = BufWriter::new(io::stdout().lock());
        body(&mut w)?;
        w.flush()?;
        return Ok(());
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_output(path, |w| {
        serde_json::to_writer(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::read_csv(open_input(path)?).with_context(|| format!("reading {}", path.display()))
}

fn extract(args: ExtractArgs) -> anyhow::Result<()> {
    let mode = if args.strict {
        IngestMode::Strict
    } else {
        IngestMode::Lenient
    };
    let outcome = ingest_packets(open_input(&args.input)?, mode)
        .with_context(|| format!("reading {}", args.input.display()))?;
    for err in &outcome.rejected {
        log::warn!("skipped row: {err}");
    }
    log::info!(
        "{} packets accepted, {} rejected",
        outcome.packets.len(),
        outcome.rejected.len()
    );
    let windows = windowize(outcome.packets, args.window_length)?;
    let records: Vec<FeatureRecord> = windows
        .iter()
        .map(|w| FeatureRecord {
            label: args.label.clone(),
            ..FeatureRecord::from_window(w)
        })
        .collect();
    write_output(&args.out, |w| {
        write_feature_csv(w, &records, args.label.is_some())?;
        Ok(())
    })
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let data = synth_generate(&SynthConfig {
        classes: args.classes,
        samples_per_class: args.per_class,
        cluster_spread: args.spread,
        label_noise: args.label_noise,
        seed: args.seed,
    })?;
    log::info!("generated {} samples", data.len());
    if let Some(path) = &args.labels {
        let json = data.labels().to_json()?;
        write_output(path, |w| {
            writeln!(w, "{json}")?;
            Ok(())
        })?;
    }
    write_output(&args.out, |w| {
        data.write_csv(w)?;
        Ok(())
    })
}

fn tune(args: TuneArgs) -> anyhow::Result<()> {
    let data = read_dataset(&args.input)?;
    let result = tune_k(&data, &args.ks, args.folds, args.seed)?;
    log::info!("best k = {}", result.best_k);
    write_json(&args.out, &result)
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let data = read_dataset(&args.input)?;
    let (train, test) = split(&data, &SplitSpec::new(args.split, args.seed)?)?;
    if test.is_empty() {
        bail!("the split leaves no test samples");
    }
    let tuning = if args.tune {
        Some(tune_k(&train, &args.ks, args.folds, args.seed)?)
    } else {
        None
    };
    let k = tuning.as_ref().map_or(args.k, |t| t.best_k);
    let evaluation = evaluate(&train, &test, &KnnConfig::new(k, args.selector)?)?;
    log::info!(
        "accuracy {:.4} ({}/{}) with k = {k}",
        evaluation.accuracy,
        evaluation.correct,
        evaluation.total
    );
    let report = serde_json::json!({
        "split": args.split,
        "seed": args.seed,
        "train_size": train.len(),
        "test_size": test.len(),
        "tuning": tuning,
        "evaluation": evaluation,
    });
    write_json(&args.out, &report)
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let report = bench_selectors(&BenchConfig {
        sizes: args.sizes,
        ks: args.ks,
        reps: args.reps,
        seed: args.seed,
        strategies: args.strategies,
        mode: if args.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        },
    })?;
    write_json(&args.out, &report)
}

fn classify_stream(args: ClassifyArgs) -> anyhow::Result<()> {
    let train = read_dataset(&args.train)?;
    if train.is_empty() {
        bail!("training file {} has no rows", args.train.display());
    }
    let queries = read_feature_csv(open_input(&args.input)?)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let config = KnnConfig::new(args.k, args.selector)?;
    write_output(&args.out, |w| {
        for q in &queries {
            let started = Instant::now();
            let verdict = classify(&train, &q.features, &config)?;
            let nanos = started.elapsed().as_nanos();
            let label = train.labels().name(verdict.label).unwrap_or("?");
            writeln!(w, "{},{},{label},{nanos}", q.device_id, q.window_start)?;
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWKNN_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Extract(a) => extract(a),
        Command::Synth(a) => synth(a),
        Command::TuneK(a) => tune(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Classify(a) => classify_stream(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
