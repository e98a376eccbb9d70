//! `qpf`: filter images, scan entanglement, compute dataset statistics, train
//! classifiers and run experiment grids.
//!
//! Exit status: 0 success, 1 other failure, 2 usage error, 3 IO or format error.

mod settings;

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpf_core::dataset::{read_idx_images, read_idx_labels, DatasetFiles, LabeledDataset};
use qpf_core::entanglement::{
    dataset_entropy_stats, scan_surface_with, write_stats_csv, EntropyAggregation, EntropyStatsRow,
};
use qpf_core::experiments::{
    build_features, export_boxplot_data, history_label, load_split_pair, run_grid,
    summarize_best, summarize_seeds, write_best_csv, write_errors_csv, write_results_csv,
    write_seed_summary_csv, ExperimentPlan,
};
use qpf_core::filter::{filter_batch, write_pgm, write_qpft};
use qpf_core::mlp::{save_checkpoint, train, MlpArchitecture, MlpModel, TrainConfig};
use qpf_core::{
    Direction, Exec, KernelConfig, Observable, Permutation, QpfError, Symmetry,
};

use settings::{parse_file_value, FileSettings};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    fn other(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<QpfError> for CliError {
    fn from(e: QpfError) -> Self {
        let code = if e.is_io_or_format() {
            3
        } else {
            match e {
                QpfError::Config(_)
                | QpfError::StepOutOfRange(_)
                | QpfError::InvalidPermutation(_)
                | QpfError::UnsupportedLadder(_)
                | QpfError::SubsampleTooLarge { .. } => 2,
                _ => 1,
            }
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "qpf", version, about = "Quantum pre-processing filter toolkit")]
struct Cli {
    /// Seed for every random choice (subsampling, initialization, shuffling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, or output file for the CSV-only commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file of default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter an IDX image file into QPFT tensor batches.
    Filter(FilterArgs),
    /// Write the pair entropy surface over both angles.
    ScanEntropy(ScanArgs),
    /// Mean and spread of per-image entanglement over a dataset.
    EntropyStats(StatsArgs),
    /// Train one classifier on raw pixels or filter features.
    Train(TrainArgs),
    /// Run an experiment grid described by a TOML plan.
    Grid(GridArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct KernelArgs {
    /// Named pairing: diagonal, vertical or horizontal.
    #[arg(long, conflicts_with = "perm")]
    symmetry: Option<Symmetry>,
    /// Pixel order a,b,c,d: qubit q encodes pixel perm[q].
    #[arg(long)]
    perm: Option<Permutation>,
    /// Direction of the first pair: fwd or rev.
    #[arg(long)]
    dir1: Option<Direction>,
    /// Direction of the second pair: fwd or rev.
    #[arg(long)]
    dir2: Option<Direction>,
    /// Channel value: p1 or z.
    #[arg(long)]
    observable: Option<Observable>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// IDX image file, optionally gzip-compressed.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Matching IDX label file; copied to labels.csv.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Images per tensor file.
    #[arg(long)]
    batch: Option<usize>,
    /// Only the first N images.
    #[arg(long)]
    limit: Option<usize>,
    /// Write four PGM channel images for each of the first K images.
    #[arg(long)]
    preview: Option<usize>,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Grid step in radians; accepts forms like 0.01pi or pi/2.
    #[arg(long)]
    step: Option<String>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Every symmetry with every direction pair instead of one kernel.
    #[arg(long)]
    all_configs: bool,
    /// pair-mean or patch-sum.
    #[arg(long)]
    aggregate: Option<EntropyAggregation>,
    /// Stratified subsample size.
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// Directory with train/t10k IDX files.
    #[arg(long, conflicts_with = "images")]
    data_dir: Option<PathBuf>,
    /// train or val, used with --data-dir.
    #[arg(long)]
    split: Option<String>,
    /// IDX image file, instead of --data-dir.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file for --images.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Dataset name recorded in outputs.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory with train/t10k IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Dataset name recorded in outputs.
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Train on raw pixels instead of filter features.
    #[arg(long, conflicts_with_all = ["symmetry", "perm"])]
    baseline: bool,
    /// Hidden layers, 0 to 3.
    #[arg(long)]
    depth: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Stratified subsample of the training split.
    #[arg(long)]
    train_subsample: Option<usize>,
    /// Stratified subsample of the validation split.
    #[arg(long)]
    val_subsample: Option<usize>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Experiment plan (TOML).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Record per-cell wall time (makes results run-dependent).
    #[arg(long)]
    timings: bool,
}

struct Shared {
    /// Set by `--seed` or the config file.
    seed_override: Option<u64>,
    seed: u64,
    out: Option<PathBuf>,
    file: FileSettings,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qpf: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = FileSettings::load(cli.config.as_deref())?;
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::other(e.to_string()))?;
    }
    let seed_override = cli.seed.or(file.seed);
    let shared = Shared {
        seed_override,
        seed: seed_override.unwrap_or(0),
        out: cli.out.or_else(|| file.out.clone()),
        file,
    };
    match cli.command {
        Command::Filter(a) => cmd_filter(a, &shared),
        Command::ScanEntropy(a) => cmd_scan_entropy(a, &shared),
        Command::EntropyStats(a) => cmd_entropy_stats(a, &shared),
        Command::Train(a) => cmd_train(a, &shared),
        Command::Grid(a) => cmd_grid(a, &shared),
    }
}

fn resolve_kernel(k: &KernelArgs, f: &FileSettings) -> CliResult<KernelConfig> {
    let (symmetry, perm) = if k.symmetry.is_some() || k.perm.is_some() {
        (k.symmetry, k.perm)
    } else {
        (
            parse_file_value::<Symmetry>("symmetry", f.symmetry.as_ref())?,
            parse_file_value::<Permutation>("perm", f.perm.as_ref())?,
        )
    };
    let base = match (symmetry, perm) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage("symmetry and perm cannot both be set"));
        }
        (_, Some(p)) => KernelConfig::permutation(p),
        (s, None) => KernelConfig::named(s.unwrap_or(Symmetry::Diagonal)),
    };
    let dir1 = k
        .dir1
        .or(parse_file_value("dir1", f.dir1.as_ref())?)
        .unwrap_or(Direction::Forward);
    let dir2 = k
        .dir2
        .or(parse_file_value("dir2", f.dir2.as_ref())?)
        .unwrap_or(Direction::Forward);
    let observable = k
        .observable
        .or(parse_file_value("observable", f.observable.as_ref())?)
        .unwrap_or_default();
    Ok(base.with_directions(dir1, dir2).with_observable(observable))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush()
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Writes CSV output to `path`, or stdout when no path is set.
fn with_csv_output(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> qpf_core::Result<()>,
) -> CliResult<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            let mut w = create(p)?;
            write(&mut w)?;
            finish(w, p)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            Ok(())
        }
    }
}

fn cmd_filter(a: FilterArgs, s: &Shared) -> CliResult<()> {
    let f = &s.file;
    let images_path = a
        .images
        .or_else(|| f.images.clone())
        .ok_or_else(|| CliError::usage("--images is required"))?;
    if !images_path.exists() {
        return Err(CliError::usage(format!(
            "images file {} does not exist",
            images_path.display()
        )));
    }
    let config = resolve_kernel(&a.kernel, f)?;
    let out = s.out.clone().unwrap_or_else(|| PathBuf::from("qpf-features"));
    let batch = a.batch.or(f.batch).unwrap_or(1000);
    if batch == 0 {
        return Err(CliError::usage("--batch must be positive"));
    }

    let raw = read_idx_images(&images_path)?;
    let mut images = raw.into_images()?;
    let labels = match a.labels.or_else(|| f.labels.clone()) {
        Some(p) => Some(read_idx_labels(&p)?),
        None => None,
    };
    if let Some(l) = &labels {
        if l.len() != images.len() {
            return Err(QpfError::LengthMismatch {
                images: images.len(),
                labels: l.len(),
            }
            .into());
        }
    }
    if let Some(n) = a.limit.or(f.limit) {
        images.truncate(n);
    }
    create_dir(&out)?;

    let manifest_path = out.join("manifest.csv");
    let mut manifest = create(&manifest_path)?;
    let io_err = |p: &Path, e: std::io::Error| CliError::io(format!("{}: {e}", p.display()));
    writeln!(manifest, "file,first_image,count,height,width,config,dir1,dir2,observable")
        .map_err(|e| io_err(&manifest_path, e))?;
    let observable = match config.observable {
        Observable::ProbOne => "p1",
        Observable::ExpectationZ => "z",
    };
    for (b, chunk) in images.chunks(batch).enumerate() {
        let maps = filter_batch(chunk, &config, Exec::Parallel)?;
        let name = format!("features-{b:05}.qpft");
        let path = out.join(&name);
        let mut w = create(&path)?;
        for m in &maps {
            write_qpft(&mut w, m).map_err(|e| io_err(&path, e))?;
        }
        finish(w, &path)?;
        let (h, wd) = maps.first().map_or((0, 0), |m| (m.height(), m.width()));
        writeln!(
            manifest,
            "{name},{},{},{h},{wd},{},{},{},{observable}",
            b * batch,
            maps.len(),
            config.label(),
            config.dir1,
            config.dir2
        )
        .map_err(|e| io_err(&manifest_path, e))?;
    }
    finish(manifest, &manifest_path)?;

    if let Some(l) = labels {
        let path = out.join("labels.csv");
        let mut w = create(&path)?;
        writeln!(w, "index,label").map_err(|e| io_err(&path, e))?;
        for (i, v) in l.iter().take(images.len()).enumerate() {
            writeln!(w, "{i},{v}").map_err(|e| io_err(&path, e))?;
        }
        finish(w, &path)?;
    }

    let preview = a.preview.or(f.preview).unwrap_or(0).min(images.len());
    if preview > 0 {
        let (lo, hi) = match config.observable {
            Observable::ProbOne => (0.0, 1.0),
            Observable::ExpectationZ => (-1.0, 1.0),
        };
        let maps = filter_batch(&images[..preview], &config, Exec::Parallel)?;
        for (i, m) in maps.iter().enumerate() {
            for c in 0..4 {
                write_pgm(&out.join(format!("preview-{i:05}-ch{c}.pgm")), m, c, lo, hi)?;
            }
        }
    }
    eprintln!(
        "filtered {} images with {} ({},{}) into {}",
        images.len(),
        config.label(),
        config.dir1,
        config.dir2,
        out.display()
    );
    Ok(())
}

fn parse_step(text: &str) -> CliResult<f64> {
    let t = text.trim().to_ascii_lowercase().replace(['π'], "pi");
    let bad = || CliError::usage(format!("cannot parse step '{text}'"));
    if t == "pi" {
        return Ok(PI);
    }
    if let Some(d) = t.strip_prefix("pi/") {
        return d.parse::<f64>().map(|d| PI / d).map_err(|_| bad());
    }
    if let Some(x) = t.strip_suffix("pi") {
        return x.trim_end_matches('*').parse::<f64>().map(|x| x * PI).map_err(|_| bad());
    }
    t.parse::<f64>().map_err(|_| bad())
}

fn cmd_scan_entropy(a: ScanArgs, s: &Shared) -> CliResult<()> {
    let step = match a.step.or_else(|| s.file.step.clone()) {
        Some(t) => parse_step(&t)?,
        None => 0.01 * PI,
    };
    let surface = scan_surface_with(step, Exec::Parallel)?;
    with_csv_output(s.out.as_deref(), |w| surface.write_csv(w))?;
    let (max, at) = surface.maxima(1e-9);
    eprintln!(
        "{}x{} grid, max entropy {max:.12} at {} points",
        surface.len(),
        surface.len(),
        at.len()
    );
    Ok(())
}

fn load_source(src: &SourceArgs, s: &Shared) -> CliResult<LabeledDataset> {
    let f = &s.file;
    let images = src.images.clone().or_else(|| f.images.clone());
    let data_dir = src.data_dir.clone().or_else(|| f.data_dir.clone());
    match (images, data_dir) {
        (Some(img), _) => {
            let name = src
                .name
                .clone()
                .or_else(|| f.name.clone())
                .unwrap_or_else(|| file_stem(&img));
            let raw = read_idx_images(&img)?;
            let labels: Vec<usize> = match src.labels.clone().or_else(|| f.labels.clone()) {
                Some(p) => read_idx_labels(&p)?.into_iter().map(usize::from).collect(),
                None => vec![0; raw.count],
            };
            Ok(LabeledDataset::new(name, raw.into_images()?, labels, None)?)
        }
        (None, Some(dir)) => {
            let name = src
                .name
                .clone()
                .or_else(|| f.name.clone())
                .unwrap_or_else(|| file_stem(&dir));
            let files = DatasetFiles::in_dir(name, &dir);
            match src.split.as_deref().or(f.split.as_deref()).unwrap_or("train") {
                "train" => Ok(files.load_train()?),
                "val" | "t10k" | "test" => Ok(files.load_validation()?),
                other => Err(CliError::usage(format!("unknown split '{other}'"))),
            }
        }
        (None, None) => Err(CliError::usage("either --images or --data-dir is required")),
    }
}

fn file_stem(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().split('-').next().unwrap_or("").to_string())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "dataset".into())
}

fn cmd_entropy_stats(a: StatsArgs, s: &Shared) -> CliResult<()> {
    let f = &s.file;
    let mut ds = load_source(&a.source, s)?;
    if let Some(n) = a.subsample.or(f.subsample) {
        ds = ds.subsample(n, s.seed)?;
    }
    let agg = match a.aggregate {
        Some(g) => g,
        None => parse_file_value("aggregate", f.aggregate.as_ref())?.unwrap_or_default(),
    };
    let configs = if a.all_configs {
        let observable = resolve_kernel(&a.kernel, f)?.observable;
        let mut v = Vec::new();
        for sym in Symmetry::ALL {
            for d1 in Direction::ALL {
                for d2 in Direction::ALL {
                    v.push(
                        KernelConfig::named(sym)
                            .with_directions(d1, d2)
                            .with_observable(observable),
                    );
                }
            }
        }
        v
    } else {
        vec![resolve_kernel(&a.kernel, f)?]
    };
    let rows = configs
        .into_iter()
        .map(|config| {
            let stats = dataset_entropy_stats(&ds, &config, agg, Exec::Parallel)?;
            Ok(EntropyStatsRow {
                dataset: ds.name.clone(),
                config,
                stats,
            })
        })
        .collect::<qpf_core::Result<Vec<_>>>()?;
    with_csv_output(s.out.as_deref(), |w| write_stats_csv(w, &rows))
}

fn cmd_train(a: TrainArgs, s: &Shared) -> CliResult<()> {
    let f = &s.file;
    let dir = a
        .data_dir
        .or_else(|| f.data_dir.clone())
        .ok_or_else(|| CliError::usage("--data-dir is required"))?;
    let name = a
        .name
        .or_else(|| f.name.clone())
        .unwrap_or_else(|| file_stem(&dir));
    let baseline = a.baseline || f.baseline.unwrap_or(false);
    let config = if baseline {
        None
    } else {
        Some(resolve_kernel(&a.kernel, f)?)
    };
    let depth = a.depth.or(f.depth).unwrap_or(0);
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.or(f.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: a.lr.or(f.lr).unwrap_or(defaults.learning_rate),
        seed: s.seed,
        ..defaults
    };
    cfg.validate()?;
    let (train_ds, val_ds) = load_split_pair(
        &name,
        &dir,
        a.train_subsample.or(f.train_subsample),
        a.val_subsample.or(f.val_subsample),
        s.seed,
    )?;
    let train_set = build_features(&train_ds, config.as_ref(), Exec::Parallel)?;
    let val_set = build_features(&val_ds, config.as_ref(), Exec::Parallel)?;
    let arch = MlpArchitecture::with_depth(
        train_set.inputs.ncols(),
        depth,
        train_ds.classes().max(val_ds.classes()),
    )?;
    let mut model = MlpModel::new(arch, s.seed);
    let history = train(&mut model, &train_set, &val_set, &cfg)?;

    let out = s.out.clone().unwrap_or_else(|| PathBuf::from("qpf-train"));
    create_dir(&out)?;
    let hist_path = out.join("history.csv");
    let mut w = create(&hist_path)?;
    history.write_csv(&mut w)?;
    finish(w, &hist_path)?;
    save_checkpoint(&model, &out.join("model.qpfm"))?;

    let label = config.map_or_else(|| "baseline".to_string(), |c| c.label());
    println!(
        "{name} {label} depth {depth}: max_val_acc {:.4} final_val_acc {:.4} last15_mean {:.4}",
        history.max_val_acc(),
        history.final_val_acc(),
        history.last_n_mean(15)
    );
    Ok(())
}

fn cmd_grid(a: GridArgs, s: &Shared) -> CliResult<()> {
    let plan_path = a
        .plan
        .or_else(|| s.file.plan.clone())
        .ok_or_else(|| CliError::usage("--plan is required"))?;
    if !plan_path.exists() {
        return Err(CliError::usage(format!(
            "plan file {} does not exist",
            plan_path.display()
        )));
    }
    let mut plan = ExperimentPlan::load(&plan_path)?;
    if let Some(seed) = s.seed_override {
        plan.seed = seed;
    }
    plan.timings |= a.timings || s.file.timings.unwrap_or(false);
    plan.validate()?;

    let outcome = run_grid(&plan, Exec::Parallel)?;
    let out = s.out.clone().unwrap_or_else(|| PathBuf::from("qpf-grid"));
    create_dir(&out)?;

    let write = |name: &str, f: &dyn Fn(&mut dyn Write) -> qpf_core::Result<()>| {
        let path = out.join(name);
        let mut w = create(&path)?;
        f(&mut w)?;
        finish(w, &path)
    };
    write("results.csv", &|w| write_results_csv(w, &outcome.results))?;
    write("seed_summary.csv", &|w| {
        write_seed_summary_csv(w, &summarize_seeds(&outcome.results))
    })?;
    if !outcome.results.is_empty() {
        write("best.csv", &|w| write_best_csv(w, &summarize_best(&outcome.results)))?;
    }
    let histories: Vec<_> = outcome
        .results
        .iter()
        .map(|r| (history_label(r), r.history.clone()))
        .collect();
    let path = out.join("boxplot.csv");
    let mut w = create(&path)?;
    let report = export_boxplot_data(&mut w, &histories)?;
    finish(w, &path)?;
    if !report.short_histories.is_empty() {
        eprintln!(
            "note: {} histories are shorter than 15 epochs; boxplot data uses all of their epochs",
            report.short_histories.len()
        );
    }
    eprintln!(
        "{} rows written to {}",
        outcome.results.len(),
        out.join("results.csv").display()
    );
    if !outcome.errors.is_empty() {
        write("errors.csv", &|w| write_errors_csv(w, &outcome.errors))?;
        for e in &outcome.errors {
            eprintln!("cell {} / {}: {}", e.dataset, e.config, e.message);
        }
        return Err(CliError::other(format!(
            "{} grid cells failed",
            outcome.errors.len()
        )));
    }
    Ok(())
}
