//! Experiment grid: {baseline, kernel configs} × depths × seeds × datasets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::Deserialize;

use crate::dataset::{DatasetFiles, LabeledDataset};
use crate::entanglement::{images_entropy_stats, DatasetEntropyStats, EntropyAggregation};
use crate::error::{QpfError, Result};
use crate::filter::{
    enumerate_permutations, filter_batch, Direction, Image, KernelConfig, Observable, Pairing,
    Permutation, Symmetry,
};
use crate::mlp::{train, FeatureSet, MlpArchitecture, MlpModel, TrainConfig, TrainingHistory};
use crate::parallel::{self, Exec};

pub const BASELINE: &str = "baseline";
pub const BOXPLOT_EPOCHS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: String,
    /// Directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    pub dir: PathBuf,
}

/// A grid description, usually read from TOML.
///
/// Config entries are `diagonal`, `vertical`, `horizontal`, optionally with a
/// direction suffix (`diagonal:rev,fwd`), or an explicit pixel order
/// (`perm:0,3,1,2`, also with an optional suffix).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub datasets: Vec<DatasetRef>,
    pub configs: Vec<String>,
    /// Appends all 24 pixel orders to `configs`.
    pub all_permutations: bool,
    pub observable: String,
    pub depths: Vec<usize>,
    /// `None` uses every training image.
    pub train_subsample: Option<usize>,
    pub val_subsample: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Subsampling seed and the default run seed.
    pub seed: u64,
    /// Run seeds; defaults to `[seed]`.
    pub seeds: Option<Vec<u64>>,
    pub aggregation: EntropyAggregation,
    /// Fill the `wall_s` column. Off by default so results are byte-stable.
    pub timings: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            datasets: Vec::new(),
            configs: Symmetry::ALL.iter().map(|s| s.name().to_string()).collect(),
            all_permutations: false,
            observable: "p1".into(),
            depths: vec![0, 1, 2, 3],
            train_subsample: Some(10_000),
            val_subsample: Some(2_000),
            epochs: 20,
            batch_size: 124,
            learning_rate: 1e-3,
            seed: 0,
            seeds: None,
            aggregation: EntropyAggregation::PairMean,
            timings: false,
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| QpfError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QpfError::io(path, e))?;
        let mut plan = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            plan.resolve_relative_to(base);
        }
        Ok(plan)
    }

    /// Rebases relative dataset directories onto `base`.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        for d in &mut self.datasets {
            if d.dir.is_relative() {
                d.dir = base.join(&d.dir);
            }
        }
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    pub fn kernel_configs(&self) -> Result<Vec<KernelConfig>> {
        let observable: Observable = self.observable.parse()?;
        let mut out = self
            .configs
            .iter()
            .map(|s| parse_config(s))
            .collect::<Result<Vec<_>>>()?;
        if self.all_permutations {
            out.extend(enumerate_permutations().into_iter().map(KernelConfig::permutation));
        }
        Ok(out
            .into_iter()
            .map(|c| c.with_observable(observable))
            .collect())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel_configs()?;
        for &d in &self.depths {
            if d > 3 {
                return Err(QpfError::Config(format!("depth {d} not in 0..=3")));
            }
        }
        if self.run_seeds().is_empty() {
            return Err(QpfError::Config("seed list is empty".into()));
        }
        self.train_config(0).validate()
    }

    /// Number of rows a clean run produces.
    pub fn expected_rows(&self) -> Result<usize> {
        let configs = self.kernel_configs()?.len();
        let per_dataset = if configs == 0 { 0 } else { configs + 1 };
        Ok(self.datasets.len() * per_dataset * self.depths.len() * self.run_seeds().len())
    }
}

/// Parses `diagonal`, `perm:0,3,1,2`, each with an optional `:dir1,dir2` suffix.
pub fn parse_config(text: &str) -> Result<KernelConfig> {
    let (base, dirs) = match text.strip_prefix("perm:") {
        Some(rest) => match rest.split_once(':') {
            Some((p, d)) => (KernelConfig::permutation(p.parse::<Permutation>()?), Some(d)),
            None => (KernelConfig::permutation(rest.parse::<Permutation>()?), None),
        },
        None => match text.split_once(':') {
            Some((s, d)) => (KernelConfig::named(s.parse::<Symmetry>()?), Some(d)),
            None => (KernelConfig::named(text.parse::<Symmetry>()?), None),
        },
    };
    match dirs {
        None => Ok(base),
        Some(d) => {
            let (a, b) = d
                .split_once(',')
                .ok_or_else(|| QpfError::Config(format!("bad direction pair '{d}'")))?;
            Ok(base.with_directions(a.parse::<Direction>()?, b.parse::<Direction>()?))
        }
    }
}

/// One grid cell's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub dataset: String,
    /// `baseline`, a symmetry name, or `permABCD`.
    pub config: String,
    /// Empty for baseline rows.
    pub dir1: String,
    pub dir2: String,
    pub depth: usize,
    pub seed: u64,
    pub max_val_acc: f64,
    pub final_val_acc: f64,
    pub last15_mean: f64,
    pub entropy_mean: Option<f64>,
    pub entropy_std: Option<f64>,
    pub wall_s: Option<f64>,
    pub history: TrainingHistory,
}

impl RunResult {
    pub fn is_baseline(&self) -> bool {
        self.config == BASELINE
    }
}

/// A cell that failed, with the grid carrying on.
#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    pub dataset: String,
    pub config: String,
    pub depth: Option<usize>,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridOutcome {
    pub results: Vec<RunResult>,
    pub errors: Vec<CellError>,
}

struct Prepared {
    train: FeatureSet,
    val: FeatureSet,
    classes: usize,
    entropy: Option<DatasetEntropyStats>,
}

fn pixel_matrix(images: &[Image]) -> Array2<f64> {
    let width = images.first().map_or(0, |im| im.pixels().len());
    let data = images
        .iter()
        .flat_map(|im| im.pixels().iter().map(|&p| p as f64))
        .collect();
    Array2::from_shape_vec((images.len(), width), data).expect("uniform image sizes")
}

fn feature_matrix(images: &[Image], config: &KernelConfig, exec: Exec) -> Result<Array2<f64>> {
    let maps = filter_batch(images, config, exec)?;
    let width = maps.first().map_or(0, |m| m.flattened().len());
    let data = maps.iter().flat_map(|m| m.flattened().iter().copied()).collect();
    Ok(Array2::from_shape_vec((images.len(), width), data).expect("uniform map sizes"))
}

/// Classifier inputs for `dataset`: raw pixels when `config` is `None`,
/// otherwise the flattened filter channels.
pub fn build_features(
    dataset: &LabeledDataset,
    config: Option<&KernelConfig>,
    exec: Exec,
) -> Result<FeatureSet> {
    let x = match config {
        None => pixel_matrix(dataset.images()),
        Some(cfg) => feature_matrix(dataset.images(), cfg, exec)?,
    };
    FeatureSet::new(x, dataset.labels().to_vec())
}

fn prepare(
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    config: Option<&KernelConfig>,
    agg: EntropyAggregation,
    exec: Exec,
) -> Result<Prepared> {
    let entropy = match config {
        None => None,
        Some(cfg) => Some(images_entropy_stats(train_ds.images(), cfg, agg, exec)?),
    };
    Ok(Prepared {
        train: build_features(train_ds, config, exec)?,
        val: build_features(val_ds, config, exec)?,
        classes: train_ds.classes().max(val_ds.classes()),
        entropy,
    })
}

/// Loads both splits from `dir` and applies optional stratified subsampling;
/// the validation split uses `seed + 1`.
pub fn load_split_pair(
    name: &str,
    dir: &Path,
    train_n: Option<usize>,
    val_n: Option<usize>,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let files = DatasetFiles::in_dir(name, dir);
    let mut train_ds = files.load_train()?;
    let mut val_ds = files.load_validation()?;
    if let Some(n) = train_n {
        train_ds = train_ds.subsample(n, seed)?;
    }
    if let Some(n) = val_n {
        val_ds = val_ds.subsample(n, seed.wrapping_add(1))?;
    }
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(QpfError::EmptyDataset);
    }
    Ok((train_ds, val_ds))
}

fn load_subsampled(plan: &ExperimentPlan, d: &DatasetRef) -> Result<(LabeledDataset, LabeledDataset)> {
    load_split_pair(&d.name, &d.dir, plan.train_subsample, plan.val_subsample, plan.seed)
}

fn config_ids(config: Option<&KernelConfig>) -> (String, String, String) {
    match config {
        None => (BASELINE.into(), String::new(), String::new()),
        Some(c) => (c.label(), c.dir1.to_string(), c.dir2.to_string()),
    }
}

/// Runs every cell of `plan`.
///
/// Feature extraction happens once per (dataset, config); the depth × seed
/// cells sharing those features train concurrently under `exec`. Row order is
/// plan order: datasets, then configs (baseline last), depths, seeds.
pub fn run_grid(plan: &ExperimentPlan, exec: Exec) -> Result<GridOutcome> {
    plan.validate()?;
    let configs = plan.kernel_configs()?;
    let mut outcome = GridOutcome::default();
    if configs.is_empty() {
        return Ok(outcome);
    }
    let seeds = plan.run_seeds();
    let cells: Vec<(usize, u64)> = plan
        .depths
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    let columns: Vec<Option<&KernelConfig>> =
        configs.iter().map(Some).chain(std::iter::once(None)).collect();

    for d in &plan.datasets {
        let (train_ds, val_ds) = match load_subsampled(plan, d) {
            Ok(v) => v,
            Err(e) => {
                outcome.errors.push(CellError {
                    dataset: d.name.clone(),
                    config: String::new(),
                    depth: None,
                    seed: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        for config in &columns {
            let (label, dir1, dir2) = config_ids(*config);
            let prepared = match prepare(&train_ds, &val_ds, *config, plan.aggregation, exec) {
                Ok(p) => p,
                Err(e) => {
                    outcome.errors.push(CellError {
                        dataset: d.name.clone(),
                        config: label,
                        depth: None,
                        seed: None,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let runs = parallel::map_slice(exec, &cells, |&(depth, seed)| {
                let start = Instant::now();
                let arch = MlpArchitecture::with_depth(
                    prepared.train.inputs.ncols(),
                    depth,
                    prepared.classes,
                )?;
                let mut model = MlpModel::new(arch, seed);
                let history = train(
                    &mut model,
                    &prepared.train,
                    &prepared.val,
                    &plan.train_config(seed),
                )?;
                Ok((history, start.elapsed().as_secs_f64()))
            });
            for (&(depth, seed), run) in cells.iter().zip(runs) {
                match run {
                    Ok((history, wall)) => outcome.results.push(RunResult {
                        dataset: d.name.clone(),
                        config: label.clone(),
                        dir1: dir1.clone(),
                        dir2: dir2.clone(),
                        depth,
                        seed,
                        max_val_acc: history.max_val_acc(),
                        final_val_acc: history.final_val_acc(),
                        last15_mean: history.last_n_mean(BOXPLOT_EPOCHS),
                        entropy_mean: prepared.entropy.as_ref().map(|s| s.mean),
                        entropy_std: prepared.entropy.as_ref().map(|s| s.std),
                        wall_s: plan.timings.then_some(wall),
                        history,
                    }),
                    Err(e) => outcome.errors.push(CellError {
                        dataset: d.name.clone(),
                        config: label.clone(),
                        depth: Some(depth),
                        seed: Some(seed),
                        message: QpfError::to_string(&e),
                    }),
                }
            }
        }
    }
    Ok(outcome)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 12] = [
    "dataset",
    "config",
    "dir1",
    "dir2",
    "depth",
    "seed",
    "max_val_acc",
    "final_val_acc",
    "last15_mean",
    "entropy_mean",
    "entropy_std",
    "wall_s",
];

pub fn write_results_csv<W: Write>(w: W, results: &[RunResult]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(RESULTS_HEADER)?;
    for r in results {
        csv.write_record([
            r.dataset.clone(),
            r.config.clone(),
            r.dir1.clone(),
            r.dir2.clone(),
            r.depth.to_string(),
            r.seed.to_string(),
            r.max_val_acc.to_string(),
            r.final_val_acc.to_string(),
            r.last15_mean.to_string(),
            opt(r.entropy_mean),
            opt(r.entropy_std),
            opt(r.wall_s),
        ])?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `dataset,config,depth,seed,message`.
pub fn write_errors_csv<W: Write>(w: W, errors: &[CellError]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "config", "depth", "seed", "message"])?;
    for e in errors {
        csv.write_record([
            e.dataset.clone(),
            e.config.clone(),
            e.depth.map(|d| d.to_string()).unwrap_or_default(),
            e.seed.map(|s| s.to_string()).unwrap_or_default(),
            e.message.clone(),
        ])?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Mean and population std over seeds of one (dataset, config, dirs, depth).
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub dataset: String,
    pub config: String,
    pub dir1: String,
    pub dir2: String,
    pub depth: usize,
    pub runs: usize,
    pub max_val_acc_mean: f64,
    pub max_val_acc_std: f64,
    pub final_val_acc_mean: f64,
    pub final_val_acc_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

type RunKey = (String, String, String, String, usize);

fn run_key(r: &RunResult) -> RunKey {
    (r.dataset.clone(), r.config.clone(), r.dir1.clone(), r.dir2.clone(), r.depth)
}

/// Groups rows that differ only by seed, in first-appearance order.
fn group_by_seed(results: &[RunResult]) -> Vec<(RunKey, Vec<&RunResult>)> {
    let mut order: Vec<RunKey> = Vec::new();
    let mut groups: BTreeMap<RunKey, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        let key = run_key(r);
        let slot = groups.entry(key.clone()).or_default();
        if slot.is_empty() {
            order.push(key);
        }
        slot.push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = groups.remove(&k).unwrap_or_default();
            (k, g)
        })
        .collect()
}

pub fn summarize_seeds(results: &[RunResult]) -> Vec<SeedSummary> {
    group_by_seed(results)
        .into_iter()
        .map(|((dataset, config, dir1, dir2, depth), rows)| {
            let maxes: Vec<f64> = rows.iter().map(|r| r.max_val_acc).collect();
            let finals: Vec<f64> = rows.iter().map(|r| r.final_val_acc).collect();
            let (max_val_acc_mean, max_val_acc_std) = mean_std(&maxes);
            let (final_val_acc_mean, final_val_acc_std) = mean_std(&finals);
            SeedSummary {
                dataset,
                config,
                dir1,
                dir2,
                depth,
                runs: rows.len(),
                max_val_acc_mean,
                max_val_acc_std,
                final_val_acc_mean,
                final_val_acc_std,
            }
        })
        .collect()
}

pub fn write_seed_summary_csv<W: Write>(w: W, rows: &[SeedSummary]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "dataset",
        "config",
        "dir1",
        "dir2",
        "depth",
        "runs",
        "max_val_acc_mean",
        "max_val_acc_std",
        "final_val_acc_mean",
        "final_val_acc_std",
    ])?;
    for r in rows {
        csv.write_record([
            r.dataset.clone(),
            r.config.clone(),
            r.dir1.clone(),
            r.dir2.clone(),
            r.depth.to_string(),
            r.runs.to_string(),
            r.max_val_acc_mean.to_string(),
            r.max_val_acc_std.to_string(),
            r.final_val_acc_mean.to_string(),
            r.final_val_acc_std.to_string(),
        ])?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Winner of one (dataset, depth) group.
#[derive(Debug, Clone, PartialEq)]
pub struct BestRow {
    pub dataset: String,
    pub depth: usize,
    pub config: String,
    pub dir1: String,
    pub dir2: String,
    /// Seed-averaged when several seeds were run.
    pub max_val_acc: f64,
    /// Another configuration reached exactly the same value.
    pub tie: bool,
}

/// Ordering used to break exact ties: diagonal, vertical, horizontal, then
/// pixel orders by their class, baseline last.
fn tie_rank(config: &str) -> (u8, String) {
    if config == BASELINE {
        return (4, String::new());
    }
    match config.parse::<Symmetry>() {
        Ok(s) => (0, format!("{}", Symmetry::ALL.iter().position(|x| *x == s).unwrap())),
        Err(_) => {
            let class = config
                .strip_prefix("perm")
                .and_then(|digits| {
                    let v: Vec<usize> = digits
                        .chars()
                        .filter_map(|c| c.to_digit(10).map(|d| d as usize))
                        .collect();
                    <[usize; 4]>::try_from(v).ok()
                })
                .and_then(|p| Permutation::new(p).ok())
                .map(|p| crate::filter::classify_permutation(&p));
            let idx = class.map_or(3, |s| Symmetry::ALL.iter().position(|x| *x == s).unwrap());
            (1, format!("{idx}{config}"))
        }
    }
}

/// Best configuration per (dataset, depth) by max validation accuracy.
pub fn summarize_best(results: &[RunResult]) -> Vec<BestRow> {
    let summaries = summarize_seeds(results);
    let mut groups: Vec<((String, usize), Vec<&SeedSummary>)> = Vec::new();
    for s in &summaries {
        let key = (s.dataset.clone(), s.depth);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(s),
            None => groups.push((key, vec![s])),
        }
    }
    groups
        .into_iter()
        .map(|((dataset, depth), mut rows)| {
            rows.sort_by(|a, b| {
                b.max_val_acc_mean
                    .total_cmp(&a.max_val_acc_mean)
                    .then_with(|| tie_rank(&a.config).cmp(&tie_rank(&b.config)))
                    .then_with(|| (&a.dir1, &a.dir2).cmp(&(&b.dir1, &b.dir2)))
            });
            let best = rows[0];
            let tie = rows
                .iter()
                .skip(1)
                .any(|r| r.max_val_acc_mean == best.max_val_acc_mean);
            BestRow {
                dataset,
                depth,
                config: best.config.clone(),
                dir1: best.dir1.clone(),
                dir2: best.dir2.clone(),
                max_val_acc: best.max_val_acc_mean,
                tie,
            }
        })
        .collect()
}

pub fn write_best_csv<W: Write>(w: W, rows: &[BestRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "depth", "config", "dir1", "dir2", "max_val_acc", "tie"])?;
    for r in rows {
        csv.write_record([
            r.dataset.clone(),
            r.depth.to_string(),
            r.config.clone(),
            r.dir1.clone(),
            r.dir2.clone(),
            r.max_val_acc.to_string(),
            r.tie.to_string(),
        ])?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Configurations whose history was shorter than the boxplot window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoxplotReport {
    pub rows: usize,
    pub short_histories: Vec<String>,
}

/// Long-format `config,epoch,val_acc` over each history's final 15 epochs.
pub fn export_boxplot_data<W: Write>(
    w: W,
    histories: &[(String, TrainingHistory)],
) -> Result<BoxplotReport> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["config", "epoch", "val_acc"])?;
    let mut report = BoxplotReport::default();
    for (name, h) in histories {
        if h.epochs.len() < BOXPLOT_EPOCHS {
            report.short_histories.push(name.clone());
        }
        for e in &h.epochs[h.epochs.len().saturating_sub(BOXPLOT_EPOCHS)..] {
            csv.write_record([name.clone(), e.epoch.to_string(), e.val_acc.to_string()])?;
            report.rows += 1;
        }
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(report)
}

/// `dataset/config[:dir1,dir2]/dN/sS` identifiers for boxplot export.
pub fn history_label(r: &RunResult) -> String {
    let dirs = if r.is_baseline() {
        String::new()
    } else {
        format!(":{},{}", r.dir1, r.dir2)
    };
    format!("{}/{}{}/d{}/s{}", r.dataset, r.config, dirs, r.depth, r.seed)
}

/// Whether the kernel in `config` is one of the three named pairings.
pub fn is_named(config: &KernelConfig) -> bool {
    matches!(config.pairing, Pairing::Named(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::EpochRecord;

    fn row(dataset: &str, config: &str, depth: usize, acc: f64) -> RunResult {
        let (dir1, dir2) = if config == BASELINE {
            (String::new(), String::new())
        } else {
            ("fwd".to_string(), "fwd".to_string())
        };
        RunResult {
            dataset: dataset.into(),
            config: config.into(),
            dir1,
            dir2,
            depth,
            seed: 0,
            max_val_acc: acc,
            final_val_acc: acc,
            last15_mean: acc,
            entropy_mean: None,
            entropy_std: None,
            wall_s: None,
            history: TrainingHistory::default(),
        }
    }

    fn history(epochs: usize) -> TrainingHistory {
        TrainingHistory {
            epochs: (1..=epochs)
                .map(|e| EpochRecord {
                    epoch: e,
                    train_loss: 1.0 / e as f64,
                    val_acc: e as f64 / 100.0,
                    lr: 1e-3,
                    lr_reduced: false,
                })
                .collect(),
        }
    }

    #[test]
    fn published_mnist_row_picks_filter_at_depth_two() {
        let qpf = [95.53, 98.32, 98.55, 98.42];
        let nn = [92.87, 98.37, 98.24, 98.36];
        let mut rows = Vec::new();
        for d in 0..4 {
            rows.push(row("mnist", "diagonal", d, qpf[d] / 100.0));
            rows.push(row("mnist", BASELINE, d, nn[d] / 100.0));
        }
        let best = summarize_best(&rows);
        let winners: Vec<&str> = best.iter().map(|b| b.config.as_str()).collect();
        assert_eq!(winners, ["diagonal", BASELINE, "diagonal", "diagonal"]);
        assert!((best[2].max_val_acc - 0.9855).abs() < 1e-12);
        assert!(best.iter().all(|b| !b.tie));
    }

    #[test]
    fn single_row_and_ties() {
        let one = summarize_best(&[row("m", "vertical", 1, 0.5)]);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].config, "vertical");

        let tied = summarize_best(&[
            row("m", BASELINE, 0, 0.9),
            row("m", "horizontal", 0, 0.9),
            row("m", "diagonal", 0, 0.9),
            row("m", "vertical", 0, 0.8),
        ]);
        assert_eq!(tied[0].config, "diagonal");
        assert!(tied[0].tie);

        let base_vs_perm = summarize_best(&[row("m", BASELINE, 0, 0.9), row("m", "perm0213", 0, 0.9)]);
        assert_eq!(base_vs_perm[0].config, "perm0213");
    }

    #[test]
    fn boxplot_window() {
        let mut buf = Vec::new();
        let rep = export_boxplot_data(
            &mut buf,
            &[("a".into(), history(60)), ("b".into(), history(60))],
        )
        .unwrap();
        assert_eq!(rep.rows, 30);
        assert!(rep.short_histories.is_empty());
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "config,epoch,val_acc");
        assert_eq!(lines[1], "a,46,0.46");
        assert_eq!(lines[16], "b,46,0.46");

        let rep = export_boxplot_data(std::io::sink(), &[("c".into(), history(10))]).unwrap();
        assert_eq!(rep.rows, 10);
        assert_eq!(rep.short_histories, vec!["c".to_string()]);
    }

    #[test]
    fn config_strings() {
        let c = parse_config("vertical:rev,fwd").unwrap();
        assert_eq!(c.symmetry(), Symmetry::Vertical);
        assert_eq!((c.dir1, c.dir2), (Direction::Reversed, Direction::Forward));
        let p = parse_config("perm:0,3,1,2").unwrap();
        assert_eq!(p.label(), "perm0312");
        assert!(!is_named(&p));
        assert!(parse_config("diagonal:up").is_err());
        assert!(parse_config("spiral").is_err());
    }

    #[test]
    fn full_plan_parses() {
        let plan = ExperimentPlan::from_toml(
            r#"
            configs = ["diagonal", "vertical:rev,fwd", "perm:0,3,1,2"]
            depths = [0, 1, 2, 3]
            train_subsample = 10000
            val_subsample = 2000
            epochs = 20
            seeds = [0, 1, 2]
            aggregation = "pair-mean"
            [[datasets]]
            name = "mnist"
            dir = "data/mnist"
            "#,
        )
        .unwrap();
        plan.validate().unwrap();
        assert_eq!(plan.expected_rows().unwrap(), 4 * 4 * 3);
        assert!(ExperimentPlan::from_toml("colour = 1").is_err());
    }

    #[test]
    fn plan_defaults_and_row_count() {
        let plan = ExperimentPlan::from_toml(
            r#"
            depths = [0, 2]
            seeds = [1, 2]
            [[datasets]]
            name = "mnist"
            dir = "data/mnist"
            "#,
        )
        .unwrap();
        assert_eq!(plan.epochs, 20);
        assert_eq!(plan.kernel_configs().unwrap().len(), 3);
        assert_eq!(plan.expected_rows().unwrap(), 1 * 4 * 2 * 2);

        let sweep = ExperimentPlan {
            configs: vec![],
            all_permutations: true,
            ..plan.clone()
        };
        assert_eq!(sweep.kernel_configs().unwrap().len(), 24);

        let empty = ExperimentPlan {
            configs: vec![],
            ..plan
        };
        assert_eq!(empty.expected_rows().unwrap(), 0);
        let out = run_grid(&empty, Exec::Sequential).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &out.results).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);

        assert!(ExperimentPlan::from_toml("bogus = 1").is_err());
        let bad_depth = ExperimentPlan {
            depths: vec![4],
            ..ExperimentPlan::default()
        };
        assert!(bad_depth.validate().is_err());
    }

    #[test]
    fn seed_summary_statistics() {
        let mut a = row("m", "diagonal", 0, 0.8);
        let mut b = a.clone();
        b.seed = 1;
        b.max_val_acc = 0.9;
        a.final_val_acc = 0.7;
        b.final_val_acc = 0.7;
        let s = summarize_seeds(&[a, b]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].runs, 2);
        assert!((s[0].max_val_acc_mean - 0.85).abs() < 1e-15);
        assert!((s[0].max_val_acc_std - 0.05).abs() < 1e-15);
        assert_eq!(s[0].final_val_acc_std, 0.0);
    }
}
