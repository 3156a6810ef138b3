//! `lcdl` command-line front end.
//!
//! Failures print one `E_<CATEGORY>: <message>` line on stderr and exit with
//! 2 (usage, configuration, I/O, dimension, model version), 3 (data) or
//! 4 (numerical failure).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcdl::classifier::{classify_batch_with_eta2, confusion_csv};
use lcdl::ingest::{load_matrix, pca_apply, pca_fit, split_per_class, synthesize, to_csv, PcaTarget, SynthConfig};
use lcdl::persist::{apply_param, load_model, params_to_config, parse_config, save_model};
use lcdl::{Error, FeatureMatrix, HyperParams, LabelMap, LabeledDataset};

#[derive(Parser)]
#[command(
    name = "lcdl",
    version,
    about = "Locality-constrained discriminative dictionary learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a dictionary and SVM from a labeled feature file.
    Train(Box<TrainArgs>),
    /// Score a model against a labeled feature file.
    Eval(EvalArgs),
    /// Predict labels for a feature file.
    Predict(PredictArgs),
    /// Write a seeded Gaussian-cluster train/test pair.
    Synth(SynthArgs),
    /// Summarize a training trace.
    Report(ReportArgs),
}

/// Every option here can also be set in the `--config` file under the same
/// name (hyphens or underscores). Flags win over the file.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    atoms_per_class: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    eta1: Option<String>,
    #[arg(long)]
    eta2: Option<String>,
    #[arg(long)]
    knn_k: Option<String>,
    /// Heat-kernel bandwidth, or `auto`.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    /// Dictionary-update ridge, or `auto`.
    #[arg(long)]
    ridge_eps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Reduce features to this many principal directions before training.
    #[arg(long, conflicts_with = "pca_var")]
    pca_dim: Option<String>,
    /// Keep the fewest principal directions explaining this variance share.
    #[arg(long)]
    pca_var: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Write the confusion matrix CSV here.
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Override the model's SVM weight in the fused decision.
    #[arg(long)]
    eta2: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Write predictions here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eta2: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Defaults to half of `--per-class`.
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Usage,
    Config,
    Io,
    Dim,
    ModelVersion,
    Data,
    Numeric,
}

impl Category {
    fn tag(self) -> &'static str {
        match self {
            Category::Usage => "E_USAGE",
            Category::Config => "E_CONFIG",
            Category::Io => "E_IO",
            Category::Dim => "E_DIM",
            Category::ModelVersion => "E_MODEL_VERSION",
            Category::Data => "E_DATA",
            Category::Numeric => "E_NUMERIC",
        }
    }

    fn exit_code(self) -> u8 {
        match self {
            Category::Data => 3,
            Category::Numeric => 4,
            _ => 2,
        }
    }

    fn of(err: &Error) -> Self {
        match err.root() {
            Error::Io(_) => Category::Io,
            Error::InvalidParam(_)
            | Error::KTooLarge { .. }
            | Error::NonPositiveDelta(_)
            | Error::TargetTooLarge { .. } => Category::Config,
            Error::DimensionMismatch(_) => Category::Dim,
            Error::ModelVersion(_) => Category::ModelVersion,
            Error::SingularSystem | Error::SingularGram | Error::DegenerateAtom(_) => Category::Numeric,
            _ => Category::Data,
        }
    }
}

struct Failure {
    category: Category,
    message: String,
}

impl Failure {
    fn new(category: Category, message: impl fmt::Display) -> Self {
        Self {
            category,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Category::Io, format!("{}: {err}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Self::new(Category::of(&err), err)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&rendered).trim_start_matches("error: ");
            eprintln!("{}: {first}", Category::Usage.tag());
            return ExitCode::from(Category::Usage.exit_code());
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.replace('\n', " ");
            eprintln!("{}: {message}", f.category.tag());
            ExitCode::from(f.category.exit_code())
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

/// Train settings after merging the config file and the flags.
struct TrainSettings {
    params: HyperParams,
    input: PathBuf,
    out: PathBuf,
    trace: Option<PathBuf>,
    pca: Option<PcaTarget>,
}

fn flag_entries(a: &TrainArgs) -> Vec<(&'static str, Option<String>)> {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    vec![
        ("input", path(&a.input)),
        ("out", path(&a.out)),
        ("trace", path(&a.trace)),
        ("atoms_per_class", a.atoms_per_class.clone()),
        ("lambda1", a.lambda1.clone()),
        ("lambda2", a.lambda2.clone()),
        ("theta", a.theta.clone()),
        ("eta1", a.eta1.clone()),
        ("eta2", a.eta2.clone()),
        ("knn_k", a.knn_k.clone()),
        ("delta", a.delta.clone()),
        ("max_iters", a.max_iters.clone()),
        ("ridge_eps", a.ridge_eps.clone()),
        ("seed", a.seed.clone()),
        ("pca_dim", a.pca_dim.clone()),
        ("pca_var", a.pca_var.clone()),
    ]
}

fn resolve_train(args: &TrainArgs) -> CliResult<TrainSettings> {
    let mut entries: BTreeMap<String, String> = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            parse_config(&text).map_err(|e| Failure::new(Category::Config, format!("{}: {e}", path.display())))?
        }
        None => BTreeMap::new(),
    };
    let flags = flag_entries(args);
    let known: Vec<&str> = flags.iter().map(|(k, _)| *k).collect();
    if let Some(bad) = entries.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Failure::new(Category::Config, format!("unknown config key {bad:?}")));
    }
    for (key, value) in flags {
        if let Some(v) = value {
            entries.insert(key.to_string(), v);
        }
    }
    if entries.contains_key("pca_dim") && entries.contains_key("pca_var") {
        return Err(Failure::new(
            Category::Config,
            "pca_dim and pca_var are mutually exclusive",
        ));
    }

    let mut params = HyperParams::default();
    for (key, value) in &entries {
        apply_param(&mut params, key, value).map_err(|e| Failure::new(Category::Config, e))?;
    }
    let required = |key: &str| {
        entries
            .get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Failure::new(Category::Usage, format!("--{} is required", key.replace('_', "-"))))
    };
    let pca = match (entries.get("pca_dim"), entries.get("pca_var")) {
        (Some(v), _) => {
            Some(PcaTarget::Dims(v.parse().map_err(|_| {
                Failure::new(Category::Config, format!("pca_dim: cannot parse {v:?}"))
            })?))
        }
        (_, Some(v)) => {
            Some(PcaTarget::Variance(v.parse().map_err(|_| {
                Failure::new(Category::Config, format!("pca_var: cannot parse {v:?}"))
            })?))
        }
        _ => None,
    };
    Ok(TrainSettings {
        params,
        input: required("input")?,
        out: required("out")?,
        trace: entries.get("trace").map(PathBuf::from),
        pca,
    })
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let settings = resolve_train(&args)?;
    let table = load_features(&settings.input)?;
    let names = table
        .labels
        .ok_or_else(|| Failure::new(Category::Data, "training file has no label column"))?;
    let label_map = LabelMap::fit(&names);
    let labels = label_map.encode(&names)?;
    let raw = table.features.into_inner();

    let pca = match settings.pca {
        Some(target) => Some(pca_fit(&raw, target)?),
        None => None,
    };
    let features = match &pca {
        Some(t) => pca_apply(t, &raw)?,
        None => raw,
    };
    let dataset = LabeledDataset::new(FeatureMatrix::new(features)?, labels, label_map.num_classes());
    let (model, trace) = lcdl::train(&dataset, &settings.params)?;
    let model = model.with_label_map(label_map).with_pca(pca.clone());
    save_model(&model, &settings.out).map_err(|e| match e {
        Error::Io(io) => Failure::io(&settings.out, io),
        other => other.into(),
    })?;

    if let Some(path) = &settings.trace {
        let mut preamble = vec![format!("input = {}", settings.input.display())];
        preamble.extend(params_to_config(&settings.params));
        preamble.push(match &pca {
            Some(t) => format!("pca = {} -> {} dims", t.input_dim(), t.output_dim()),
            None => "pca = none".to_string(),
        });
        write_file(path, trace.to_csv(&preamble))?;
    }
    log::info!(
        "trained {} iterations, final objective {:e}",
        trace.iterations(),
        trace.objective_per_iter.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_model_checked(path: &Path) -> CliResult<lcdl::TrainedModel> {
    load_model(path).map_err(|e| match e {
        Error::Io(io) => Failure::io(path, io),
        other => other.into(),
    })
}

fn load_features(path: &Path) -> CliResult<lcdl::ingest::FeatureTable> {
    load_matrix(path, None).map_err(|e| match e {
        Error::Io(io) => Failure::io(path, io),
        other => other.into(),
    })
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let model = load_model_checked(&args.model)?;
    let table = load_features(&args.input)?;
    let names = table
        .labels
        .ok_or_else(|| Failure::new(Category::Data, "evaluation file has no label column"))?;
    let labels = model.label_map.encode(&names)?;
    let x = model.prepare(&table.features)?;
    let eta2 = args.eta2.unwrap_or(model.params.eta2);
    let report = classify_batch_with_eta2(&x, Some(&labels), &model, eta2)?;
    println!("accuracy={:?}", report.accuracy.unwrap_or(0.0));
    if let (Some(path), Some(confusion)) = (&args.confusion, &report.confusion) {
        write_file(path, confusion_csv(confusion, model.label_map.names()))?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    let model = load_model_checked(&args.model)?;
    let table = load_features(&args.input)?;
    let x = model.prepare(&table.features)?;
    let eta2 = args.eta2.unwrap_or(model.params.eta2);
    let report = classify_batch_with_eta2(&x, None, &model, eta2)?;
    let mut out = String::new();
    for (i, d) in report.decisions.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{}\n",
            model.label_map.decode(d.predicted_class),
            d.winning_score()
        ));
    }
    match &args.out {
        Some(path) => write_file(path, out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        classes: args.classes,
        dim: args.dim,
        per_class: args.per_class,
        separation: args.separation,
        spread: args.spread,
        seed: args.seed,
    };
    let data = synthesize(&cfg).map_err(|e| Failure::new(Category::Config, e))?;
    let train_per_class = args.train_per_class.unwrap_or(args.per_class / 2);
    let (train, test) =
        split_per_class(&data, train_per_class, args.seed).map_err(|e| Failure::new(Category::Config, e))?;
    for (set, path) in [(&train, &args.out_train), (&test, &args.out_test)] {
        let names: Vec<String> = set.labels.iter().map(|c| c.to_string()).collect();
        write_file(path, to_csv(&set.features, Some(&names)))?;
    }
    Ok(())
}

struct TraceRow {
    iteration: usize,
    objective: f64,
    mean_active: f64,
}

fn parse_trace(text: &str) -> CliResult<(Vec<String>, Vec<TraceRow>)> {
    let mut preamble = Vec::new();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let bad = |msg: &str| Failure::new(Category::Data, format!("trace line {}: {msg}", i + 1));
        if let Some(comment) = line.strip_prefix('#') {
            preamble.push(comment.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line.trim() != "iteration,objective,mean_active_set_size" {
                return Err(bad("unexpected header"));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad("expected three fields"));
        }
        rows.push(TraceRow {
            iteration: fields[0].parse().map_err(|_| bad("bad iteration"))?,
            objective: fields[1].parse().map_err(|_| bad("bad objective"))?,
            mean_active: fields[2].parse().map_err(|_| bad("bad active-set size"))?,
        });
    }
    if rows.is_empty() {
        return Err(Failure::new(Category::Data, "trace has no iterations"));
    }
    Ok((preamble, rows))
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.trace).map_err(|e| Failure::io(&args.trace, e))?;
    let (preamble, rows) = parse_trace(&text)?;
    for line in &preamble {
        println!("{line}");
    }
    println!();
    println!(
        "{:>9}  {:>14}  {:>12}  {:>11}",
        "iteration", "objective", "rel_change", "mean_active"
    );
    let mut prev: Option<f64> = None;
    for row in &rows {
        let change = prev.map_or_else(|| "-".to_string(), |p| format!("{:.3e}", (row.objective - p) / p.abs()));
        println!(
            "{:>9}  {:>14.6e}  {:>12}  {:>11.3}",
            row.iteration, row.objective, change, row.mean_active
        );
        prev = Some(row.objective);
    }
    let first = rows[0].objective;
    let last = rows[rows.len() - 1].objective;
    println!();
    println!("iterations = {}", rows.len());
    println!("objective_first = {first:e}");
    println!("objective_last = {last:e}");
    println!("total_decrease = {:.4}%", 100.0 * (first - last) / first.abs());
    Ok(())
}
