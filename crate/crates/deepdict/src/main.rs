//! Command-line front end: train deep dictionary models, encode samples,
//! evaluate features with 1-NN, and compare deep against shallow baselines.
//!
//! Every subcommand accepts `--config <path>`, a key=value file whose keys
//! mirror the long flag names; explicit flags override config entries and
//! unknown keys are ignored so one file can serve several subcommands.
//! Exit codes: 0 on success, 1 on runtime failures (bad data, dimension
//! conflicts, unreadable files), 2 on usage errors.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use deepdict::classify::evaluate_knn1;
use deepdict::dataio::{read_amat_dataset, read_idx_images, read_idx_labels};
use deepdict::deep::{
    encode, train_deep, DeepDictModel, DeepTrainConfig, Layer, LayerKind, LayerReport,
};
use deepdict::persist::{load_features, load_model, read_header, save_features, save_model, Header};
use deepdict::shallow::{train_layer_dense, LayerTrainConfig};
use deepdict::Error;

#[derive(Parser)]
#[command(
    name = "deepdict",
    version,
    about = "Deep dictionary learning: greedy layer-wise training, sparse final codes"
)]
struct Cli {
    /// Key=value config file; explicit flags override its entries
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it to disk
    Train(TrainArgs),
    /// Encode samples with a trained model into a feature file
    Encode(EncodeArgs),
    /// Score stored features with a 1-nearest-neighbor classifier
    EvalKnn(EvalKnnArgs),
    /// Train deep and shallow models on one split and print both accuracies
    Compare(CompareArgs),
    /// Print the header of a model or feature file
    Info(InfoArgs),
}

/// Shared training hyperparameters. Defaults match the library's layer
/// presets.
#[derive(Args)]
struct HyperArgs {
    /// Sparsity penalty of the final layer (default 0.1)
    #[arg(long)]
    lambda: Option<f64>,
    /// Alternating rounds per dense layer (default 10)
    #[arg(long)]
    dense_iters: Option<usize>,
    /// Alternating rounds for the sparse layer (default 15)
    #[arg(long)]
    sparse_iters: Option<usize>,
    /// Soft-thresholding sweeps per sparse round (default 50)
    #[arg(long)]
    ista_iters: Option<usize>,
    /// Relative improvement below which a layer stops early (default 1e-4)
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Multiplier on the estimated step bound, must exceed 1 (default 1.01)
    #[arg(long)]
    step_safety: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training samples: amat file or idx image file
    #[arg(long)]
    data: Option<PathBuf>,
    /// Input format: amat or idx (default amat)
    #[arg(long)]
    format: Option<String>,
    /// Comma-separated layer widths, e.g. 300,150,50
    #[arg(long)]
    layers: Option<String>,
    /// Output model path
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hypers: HyperArgs,
}

#[derive(Args)]
struct EncodeArgs {
    /// Trained model file
    #[arg(long)]
    model: Option<PathBuf>,
    /// Samples to encode: amat file or idx image file
    #[arg(long)]
    data: Option<PathBuf>,
    /// Input format: amat or idx (default amat)
    #[arg(long)]
    format: Option<String>,
    /// Optional idx label file to embed in the feature file
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output feature file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalKnnArgs {
    /// Feature file holding the training side
    #[arg(long)]
    train_features: Option<PathBuf>,
    /// Feature file holding the test side
    #[arg(long)]
    test_features: Option<PathBuf>,
    /// idx labels for the training side when not embedded
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// idx labels for the test side when not embedded
    #[arg(long)]
    test_labels: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Training samples: amat file or idx image file
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test samples in the same format
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Input format: amat or idx (default amat)
    #[arg(long)]
    format: Option<String>,
    /// idx labels for the training samples (amat embeds its own)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// idx labels for the test samples
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Comma-separated layer widths of the deep model
    #[arg(long)]
    layers: Option<String>,
    /// Atom count of the single-layer baseline
    #[arg(long)]
    shallow: Option<usize>,
    /// Use a dense single-layer baseline instead of a sparse one
    #[arg(long, action = clap::ArgAction::SetTrue)]
    shallow_dense: bool,
    /// Directory to write both models and all four feature files
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    hypers: HyperArgs,
}

#[derive(Args)]
struct InfoArgs {
    /// Model or feature file to inspect
    file: PathBuf,
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Cfg::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Encode(a) => cmd_encode(&cfg, a),
        Command::EvalKnn(a) => cmd_eval_knn(&cfg, a),
        Command::Compare(a) => cmd_compare(&cfg, a),
        Command::Info(a) => cmd_info(a),
    }
}

/// Key=value entries from `--config`, consulted when a flag is absent.
struct Cfg(HashMap<String, String>);

impl Cfg {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut map = HashMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Run(Error::Io(e)))?;
            for (ln, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "config line {}: expected key=value, got {raw:?}",
                        ln + 1
                    )));
                };
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    fn parse<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|e| CliError::Usage(format!("config entry {key}={s}: {e}"))),
        }
    }

    fn parse_required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Err(CliError::Usage(format!(
                "missing required --{key} (flag or config entry)"
            ))),
            Some(s) => s
                .parse()
                .map_err(|e| CliError::Usage(format!("config entry {key}={s}: {e}"))),
        }
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.0.get(key).map(PathBuf::from))
    }

    fn bool_flag(&self, set: bool, key: &str) -> Result<bool, CliError> {
        if set {
            return Ok(true);
        }
        match self.0.get(key) {
            None => Ok(false),
            Some(s) => s
                .parse::<bool>()
                .map_err(|e| CliError::Usage(format!("config entry {key}={s}: {e}"))),
        }
    }
}

#[derive(Clone, Copy)]
enum DataFormat {
    Amat,
    Idx,
}

fn parse_format(cfg: &Cfg, flag: Option<String>) -> Result<DataFormat, CliError> {
    match cfg.parse(flag, "format", "amat".to_string())?.as_str() {
        "amat" => Ok(DataFormat::Amat),
        "idx" => Ok(DataFormat::Idx),
        other => Err(CliError::Usage(format!(
            "unknown format {other:?}, expected \"amat\" or \"idx\""
        ))),
    }
}

fn parse_layers(spec: &str) -> Result<Vec<usize>, CliError> {
    let sizes: Result<Vec<usize>, _> = spec
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect();
    match sizes {
        Ok(v) if !v.is_empty() && v.iter().all(|&k| k > 0) => Ok(v),
        _ => Err(CliError::Usage(format!(
            "cannot parse layer widths from {spec:?}; expected comma-separated positive integers like 300,150,50"
        ))),
    }
}

struct Hypers {
    lambda: f64,
    dense_iters: usize,
    sparse_iters: usize,
    ista_iters: usize,
    rel_tol: f64,
    step_safety: f64,
}

fn resolve_hypers(cfg: &Cfg, h: &HyperArgs) -> Result<Hypers, CliError> {
    Ok(Hypers {
        lambda: cfg.parse(h.lambda, "lambda", 0.1)?,
        dense_iters: cfg.parse(h.dense_iters, "dense-iters", 10)?,
        sparse_iters: cfg.parse(h.sparse_iters, "sparse-iters", 15)?,
        ista_iters: cfg.parse(h.ista_iters, "ista-iters", 50)?,
        rel_tol: cfg.parse(h.rel_tol, "rel-tol", 1e-4)?,
        step_safety: cfg.parse(h.step_safety, "step-safety", 1.01)?,
    })
}

fn build_train_config(sizes: &[usize], hy: &Hypers) -> DeepTrainConfig {
    let mut cfg = DeepTrainConfig::with_defaults(sizes, hy.lambda);
    let n = cfg.per_layer.len();
    for (i, c) in cfg.per_layer.iter_mut().enumerate() {
        c.rel_tol = hy.rel_tol;
        c.step_safety = hy.step_safety;
        c.ista_iters = hy.ista_iters;
        c.outer_iters = if i + 1 == n {
            hy.sparse_iters
        } else {
            hy.dense_iters
        };
    }
    cfg
}

/// Load samples plus labels when available: amat files embed labels, idx
/// images take an optional companion label file.
fn load_labeled(
    path: &Path,
    format: DataFormat,
    labels: Option<&Path>,
) -> Result<(Array2<f64>, Option<Vec<u32>>), Error> {
    match format {
        DataFormat::Amat => {
            let ds = read_amat_dataset(path)?;
            Ok((ds.samples, Some(ds.labels)))
        }
        DataFormat::Idx => {
            let samples = read_idx_images(path)?;
            let labels = match labels {
                Some(p) => {
                    let l = read_idx_labels(p)?;
                    if l.len() != samples.ncols() {
                        return Err(Error::Dimension(format!(
                            "{} samples but {} labels",
                            samples.ncols(),
                            l.len()
                        )));
                    }
                    Some(l)
                }
                None => None,
            };
            Ok((samples, labels))
        }
    }
}

fn print_reports(reports: &[LayerReport]) {
    for (i, r) in reports.iter().enumerate() {
        println!(
            "layer {} ({}, {} atoms): objective {:.6e} after {} rounds",
            i + 1,
            r.kind.as_str(),
            r.atoms,
            r.objective,
            r.rounds
        );
    }
}

fn cmd_train(cfg: &Cfg, args: TrainArgs) -> Result<(), CliError> {
    let data = cfg.parse_required(args.data, "data")?;
    let out: PathBuf = cfg.parse_required(args.out, "out")?;
    let layers = parse_layers(&cfg.parse_required::<String>(args.layers, "layers")?)?;
    let format = parse_format(cfg, args.format)?;
    let hy = resolve_hypers(cfg, &args.hypers)?;
    let (x, _) = load_labeled(&data, format, None)?;
    println!("training on {} samples of dimension {}", x.ncols(), x.nrows());
    let tcfg = build_train_config(&layers, &hy);
    let t0 = Instant::now();
    let fit = train_deep(&x, &tcfg)?;
    let secs = t0.elapsed().as_secs_f64();
    print_reports(&fit.reports);
    println!("training time: {secs:.3} s");
    save_model(&fit.model, &out)?;
    println!("model written to {}", out.display());
    Ok(())
}

fn cmd_encode(cfg: &Cfg, args: EncodeArgs) -> Result<(), CliError> {
    let model_path: PathBuf = cfg.parse_required(args.model, "model")?;
    let data = cfg.parse_required(args.data, "data")?;
    let out: PathBuf = cfg.parse_required(args.out, "out")?;
    let format = parse_format(cfg, args.format)?;
    let labels_path = cfg.path(args.labels, "labels");
    let model = load_model(&model_path)?;
    let (x, labels) = load_labeled(&data, format, labels_path.as_deref())?;
    let feats = encode(&model, &x)?;
    save_features(&feats, labels.as_deref(), &out)?;
    println!(
        "encoded {} samples into {}-dimensional features",
        feats.ncols(),
        feats.nrows()
    );
    println!("features written to {}", out.display());
    Ok(())
}

fn resolve_labels(
    embedded: Option<Vec<u32>>,
    override_path: Option<PathBuf>,
    expected: usize,
    side: &str,
) -> Result<Vec<u32>, CliError> {
    let labels = match override_path {
        Some(p) => read_idx_labels(&p)?,
        None => embedded.ok_or_else(|| {
            CliError::Run(Error::InvalidParam(format!(
                "the {side} feature file embeds no labels; pass --{side}-labels"
            )))
        })?,
    };
    if labels.len() != expected {
        return Err(CliError::Run(Error::Dimension(format!(
            "{expected} {side} samples but {} labels",
            labels.len()
        ))));
    }
    Ok(labels)
}

fn cmd_eval_knn(cfg: &Cfg, args: EvalKnnArgs) -> Result<(), CliError> {
    let train_path: PathBuf = cfg.parse_required(args.train_features, "train-features")?;
    let test_path: PathBuf = cfg.parse_required(args.test_features, "test-features")?;
    let (xtr, emb_tr) = load_features(&train_path)?;
    let (xte, emb_te) = load_features(&test_path)?;
    let ltr = resolve_labels(
        emb_tr,
        cfg.path(args.train_labels, "train-labels"),
        xtr.ncols(),
        "train",
    )?;
    let lte = resolve_labels(
        emb_te,
        cfg.path(args.test_labels, "test-labels"),
        xte.ncols(),
        "test",
    )?;
    let report = evaluate_knn1(&xtr, &ltr, &xte, &lte)?;
    println!("accuracy: {:.2}", report.accuracy * 100.0);
    println!("errors: {} / {}", report.num_errors, report.num_test);
    println!("search time: {:.3} s", report.elapsed);
    Ok(())
}

/// Dataset display name: the file stem with a trailing `_train`/`-train`
/// stripped, so train/test pairs print under one name.
fn dataset_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    for suffix in ["_train", "-train"] {
        if let Some(base) = stem.strip_suffix(suffix) {
            if !base.is_empty() {
                return base.to_string();
            }
        }
    }
    stem
}

fn cmd_compare(cfg: &Cfg, args: CompareArgs) -> Result<(), CliError> {
    let data = cfg.parse_required(args.data, "data")?;
    let test_data: PathBuf = cfg.parse_required(args.test_data, "test-data")?;
    let layers = parse_layers(&cfg.parse_required::<String>(args.layers, "layers")?)?;
    let shallow_atoms: usize = cfg.parse_required(args.shallow, "shallow")?;
    let shallow_dense = cfg.bool_flag(args.shallow_dense, "shallow-dense")?;
    let format = parse_format(cfg, args.format)?;
    let hy = resolve_hypers(cfg, &args.hypers)?;
    let (xtr, ltr) = load_labeled(&data, format, cfg.path(args.labels, "labels").as_deref())?;
    let (xte, lte) = load_labeled(
        &test_data,
        format,
        cfg.path(args.test_labels, "test-labels").as_deref(),
    )?;
    let need = "labels are required for evaluation; amat embeds them, idx needs";
    let ltr = ltr.ok_or_else(|| CliError::Run(Error::InvalidParam(format!("{need} --labels"))))?;
    let lte =
        lte.ok_or_else(|| CliError::Run(Error::InvalidParam(format!("{need} --test-labels"))))?;

    let dcfg = build_train_config(&layers, &hy);
    let t0 = Instant::now();
    let deep_fit = train_deep(&xtr, &dcfg)?;
    let deep_secs = t0.elapsed().as_secs_f64();
    println!("deep model:");
    print_reports(&deep_fit.reports);
    println!("deep training time: {deep_secs:.3} s");

    let t0 = Instant::now();
    let (shallow_model, shallow_reports) = if shallow_dense {
        let mut c = LayerTrainConfig::dense(shallow_atoms);
        c.outer_iters = hy.dense_iters;
        c.rel_tol = hy.rel_tol;
        c.step_safety = hy.step_safety;
        let fit = train_layer_dense(&xtr, &c)?;
        let report = LayerReport {
            kind: LayerKind::Dense,
            atoms: shallow_atoms,
            rounds: fit.rounds,
            objective: fit.objective,
        };
        let model = DeepDictModel::new(
            vec![Layer {
                dictionary: fit.dictionary,
                kind: LayerKind::Dense,
            }],
            0.0,
            hy.ista_iters,
            hy.step_safety,
        )?;
        (model, vec![report])
    } else {
        let scfg = build_train_config(&[shallow_atoms], &hy);
        let fit = train_deep(&xtr, &scfg)?;
        (fit.model, fit.reports)
    };
    let shallow_secs = t0.elapsed().as_secs_f64();
    println!("shallow model:");
    print_reports(&shallow_reports);
    println!("shallow training time: {shallow_secs:.3} s");

    let ztr_deep = encode(&deep_fit.model, &xtr)?;
    let zte_deep = encode(&deep_fit.model, &xte)?;
    let ztr_shallow = encode(&shallow_model, &xtr)?;
    let zte_shallow = encode(&shallow_model, &xte)?;
    let rep_deep = evaluate_knn1(&ztr_deep, &ltr, &zte_deep, &lte)?;
    let rep_shallow = evaluate_knn1(&ztr_shallow, &ltr, &zte_shallow, &lte)?;
    println!("evaluation time: {:.3} s", rep_deep.elapsed + rep_shallow.elapsed);

    println!("dataset\tdeep\tshallow");
    println!(
        "{}\t{:.2}\t{:.2}",
        dataset_name(&data),
        rep_deep.accuracy * 100.0,
        rep_shallow.accuracy * 100.0
    );

    if let Some(dir) = cfg.path(args.out_dir, "out-dir") {
        std::fs::create_dir_all(&dir).map_err(Error::Io)?;
        save_model(&deep_fit.model, &dir.join("deep_model.ddl"))?;
        save_model(&shallow_model, &dir.join("shallow_model.ddl"))?;
        save_features(&ztr_deep, Some(&ltr), &dir.join("deep_train_features.ddl"))?;
        save_features(&zte_deep, Some(&lte), &dir.join("deep_test_features.ddl"))?;
        save_features(&ztr_shallow, Some(&ltr), &dir.join("shallow_train_features.ddl"))?;
        save_features(&zte_shallow, Some(&lte), &dir.join("shallow_test_features.ddl"))?;
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

fn cmd_info(args: InfoArgs) -> Result<(), CliError> {
    match read_header(&args.file)? {
        Header::Model {
            format_version,
            input_dim,
            layer_sizes,
            layer_kinds,
            lambda,
            ista_iters,
            step_safety,
        } => {
            println!("type: model");
            println!("format version: {format_version}");
            println!("input dim: {input_dim}");
            let mut chain = format!("{input_dim}");
            for (size, kind) in layer_sizes.iter().zip(&layer_kinds) {
                chain.push_str(&format!(" -> {size} ({kind})"));
            }
            println!("layer chain: {chain}");
            println!("lambda: {lambda}");
            println!("ista iters: {ista_iters}");
            println!("step safety: {step_safety}");
        }
        Header::Features {
            format_version,
            rows,
            cols,
            has_labels,
        } => {
            println!("type: features");
            println!("format version: {format_version}");
            println!("rows: {rows}");
            println!("cols: {cols}");
            println!("labels: {}", if has_labels { "embedded" } else { "none" });
        }
    }
    Ok(())
}
