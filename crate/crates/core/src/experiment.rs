//! Experiment orchestration behind the `usersel` command line: dataset
//! generation, training, paired SE-vs-SNR evaluation of all four selection
//! methods, the imperfect-CSI sweep, and the complexity table.
//!
//! Configuration is a `key = value` text file (see [`ExperimentConfig`]);
//! every command's CSV output starts with `#`-prefixed lines echoing the
//! full configuration so each file is reproducible on its own.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{apply_csi_error, generate_channel_matrix, ArrayGeometry, ChannelConfig, ChannelMatrix};
use crate::cnn::layers::Exec;
use crate::cnn::train::{predict_batch, write_metrics_csv, LabeledSet};
use crate::cnn::{train, CnnError, EpochMetrics, NetworkConfig, NetworkState, TrainConfig};
use crate::dataset::{build_dataset, channel_to_planes, load_dataset, parse_key_values, DatasetError, Manifest};
use crate::rate::{count_ops, evaluate_selection, noise_power_from_snr_db, Algorithm, OpCountModel};
use crate::rng::{domain_seed, substream, Domain};
use crate::selection::{
    binomial, bpso_select, combo_unrank, exhaustive_search, greedy_select, BpsoParams, ClassLabel, UserSubset,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// 1 for usage errors, 2 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// All experiment parameters. Defaults reproduce the full-scale setup
/// (12x12 UPA, 10 users, 6 selected, 100,000 samples, 200 epochs).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub array_rows: usize,
    pub array_cols: usize,
    pub spacing: f64,
    pub n_users: usize,
    pub n_select: usize,
    pub n_paths: usize,
    pub path_loss: f64,
    pub n_samples: usize,
    pub label_snr_db: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub keep_prob: f64,
    pub precision: Precision,
    pub parallel: bool,
    pub snr_grid_db: Vec<f64>,
    pub xi_list: Vec<f64>,
    pub trials: usize,
    pub bpso_pop: usize,
    pub bpso_iters: usize,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            array_rows: 12,
            array_cols: 12,
            spacing: 0.5,
            n_users: 10,
            n_select: 6,
            n_paths: 3,
            path_loss: 1.0,
            n_samples: 100_000,
            label_snr_db: 10.0,
            epochs: 200,
            batch_size: 100,
            learning_rate: 0.01,
            keep_prob: 0.5,
            precision: Precision::F32,
            parallel: false,
            snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            xi_list: vec![1.0, 0.9, 0.7],
            trials: 500,
            bpso_pop: 10,
            bpso_iters: 10,
            dataset: PathBuf::from("dataset.bin"),
            checkpoint: PathBuf::from("model.ckpt"),
            metrics: PathBuf::from("metrics.csv"),
            out: None,
            seed: 1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ExperimentError> {
    value
        .parse()
        .map_err(|_| ExperimentError::Usage(format!("invalid value `{value}` for `{key}`")))
}

/// Comma-separated list, or `start:step:stop` (inclusive).
fn parse_grid(key: &str, value: &str) -> Result<Vec<f64>, ExperimentError> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let (start, step, stop): (f64, f64, f64) =
            (parse_num(key, parts[0])?, parse_num(key, parts[1])?, parse_num(key, parts[2])?);
        if step <= 0.0 || stop < start {
            return Err(ExperimentError::Usage(format!("empty range `{value}` for `{key}`")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + step * i as f64).collect());
    }
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        match key {
            "array_rows" => self.array_rows = parse_num(key, value)?,
            "array_cols" => self.array_cols = parse_num(key, value)?,
            "spacing" => self.spacing = parse_num(key, value)?,
            "n_users" => self.n_users = parse_num(key, value)?,
            "n_select" => self.n_select = parse_num(key, value)?,
            "n_paths" => self.n_paths = parse_num(key, value)?,
            "path_loss" => self.path_loss = parse_num(key, value)?,
            "n_samples" => self.n_samples = parse_num(key, value)?,
            "label_snr_db" => self.label_snr_db = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "keep_prob" => self.keep_prob = parse_num(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(ExperimentError::Usage(format!("precision must be f32 or f64, got `{value}`"))),
                }
            }
            "parallel" => self.parallel = parse_num(key, value)?,
            "snr_grid_db" => self.snr_grid_db = parse_grid(key, value)?,
            "xi_list" => self.xi_list = parse_grid(key, value)?,
            "trials" => self.trials = parse_num(key, value)?,
            "bpso_pop" => self.bpso_pop = parse_num(key, value)?,
            "bpso_iters" => self.bpso_iters = parse_num(key, value)?,
            "dataset" => self.dataset = PathBuf::from(value),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "metrics" => self.metrics = PathBuf::from(value),
            "out" => self.out = Some(PathBuf::from(value)),
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(ExperimentError::Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text).map_err(ExperimentError::Usage)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Usage(m));
        if self.n_select == 0 || self.n_select > self.n_users {
            return fail(format!("cannot select {} of {} users", self.n_select, self.n_users));
        }
        if self.snr_grid_db.is_empty() || self.xi_list.is_empty() {
            return fail("SNR grid and CSI accuracy list must be non-empty".into());
        }
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if let Some(xi) = self.xi_list.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return fail(format!("CSI accuracy {xi} outside [0, 1]"));
        }
        if self.batch_size == 0 || self.bpso_pop == 0 {
            return fail("batch_size and bpso_pop must be >= 1".into());
        }
        self.channel_config().validate().map_err(|e| ExperimentError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn n_tx(&self) -> usize {
        self.array_rows * self.array_cols
    }

    pub fn classes(&self) -> usize {
        binomial(self.n_users, self.n_select) as usize
    }

    pub fn label_noise_power(&self) -> f64 {
        noise_power_from_snr_db(self.label_snr_db)
    }

    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            n_tx: self.n_tx(),
            n_users: self.n_users,
            n_paths: self.n_paths,
            path_loss: self.path_loss,
            geometry: ArrayGeometry { rows: self.array_rows, cols: self.array_cols, spacing: self.spacing },
            seed: self.seed,
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig { keep_prob: self.keep_prob, ..NetworkConfig::new(self.classes()) }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: domain_seed(self.seed, Domain::Training),
            exec: if self.parallel { Exec::Parallel } else { Exec::Serial },
        }
    }

    pub fn op_count_model(&self) -> OpCountModel {
        OpCountModel {
            cnn: self.network_config(),
            ..OpCountModel::new(self.n_tx(), self.n_users, self.n_select, self.bpso_pop, self.bpso_iters)
        }
    }

    /// `key = value` lines for every setting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("array_rows", self.array_rows.to_string());
        kv("array_cols", self.array_cols.to_string());
        kv("spacing", self.spacing.to_string());
        kv("n_users", self.n_users.to_string());
        kv("n_select", self.n_select.to_string());
        kv("n_paths", self.n_paths.to_string());
        kv("path_loss", self.path_loss.to_string());
        kv("n_samples", self.n_samples.to_string());
        kv("label_snr_db", self.label_snr_db.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("keep_prob", self.keep_prob.to_string());
        kv("precision", if self.precision == Precision::F32 { "f32" } else { "f64" }.into());
        kv("parallel", self.parallel.to_string());
        kv("snr_grid_db", join(&self.snr_grid_db));
        kv("xi_list", join(&self.xi_list));
        kv("trials", self.trials.to_string());
        kv("bpso_pop", self.bpso_pop.to_string());
        kv("bpso_iters", self.bpso_iters.to_string());
        kv("dataset", self.dataset.display().to_string());
        kv("checkpoint", self.checkpoint.display().to_string());
        kv("metrics", self.metrics.display().to_string());
        if let Some(out) = &self.out {
            kv("out", out.display().to_string());
        }
        kv("seed", self.seed.to_string());
        s
    }

    /// Config echo as CSV comment lines.
    pub fn csv_preamble(&self) -> String {
        self.to_text().lines().map(|l| format!("# {l}\n")).collect()
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), ExperimentError> {
    if path.exists() && !force {
        return Err(ExperimentError::Usage(format!(
            "{} already exists (pass --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

/// Writes the dataset to `out` (or `dataset`).
pub fn cmd_gen_dataset(cfg: &ExperimentConfig, force: bool) -> Result<Manifest, ExperimentError> {
    let path = cfg.out.clone().unwrap_or_else(|| cfg.dataset.clone());
    refuse_overwrite(&path, force)?;
    Ok(build_dataset(&cfg.channel_config(), cfg.n_samples, cfg.n_select, cfg.label_noise_power(), &path)?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    pub state: NetworkState<f32>,
}

fn check_dataset_matches(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<(), ExperimentError> {
    let h = &manifest.header;
    let ours = (cfg.n_users, cfg.n_tx(), cfg.n_select);
    let theirs = (h.n_users as usize, h.n_tx as usize, h.n_select as usize);
    if ours != theirs {
        return Err(ExperimentError::Data(format!(
            "dataset has (n_users, n_tx, n_select) = {theirs:?}, config expects {ours:?}"
        )));
    }
    Ok(())
}

/// Trains on the dataset's train split and writes the checkpoint to `out`
/// (or `checkpoint`) and per-epoch metrics to `metrics`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    force: bool,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainSummary, ExperimentError> {
    let checkpoint = cfg.out.clone().unwrap_or_else(|| cfg.checkpoint.clone());
    refuse_overwrite(&checkpoint, force)?;
    let dataset = load_dataset(&cfg.dataset)?;
    check_dataset_matches(cfg, &dataset.manifest)?;
    let header = dataset.header();
    let data = LabeledSet::new(&dataset.planes, &dataset.labels, header.input_shape())?;
    let split = &dataset.manifest.split;
    let train_idx: Vec<usize> = split.train.clone().collect();
    let test_idx: Vec<usize> = split.test.clone().collect();
    let net_cfg = cfg.network_config();
    let train_cfg = cfg.train_config();
    let (state, metrics) = match cfg.precision {
        Precision::F32 => train::<f32>(&data, &train_idx, &test_idx, net_cfg, &train_cfg, on_epoch)?,
        Precision::F64 => {
            let (s, m) = train::<f64>(&data, &train_idx, &test_idx, net_cfg, &train_cfg, on_epoch)?;
            (s.cast::<f32>(), m)
        }
    };
    state.save(&checkpoint)?;
    let mut csv = Vec::new();
    csv.extend_from_slice(cfg.csv_preamble().as_bytes());
    write_metrics_csv(&mut csv, &metrics)?;
    fs::write(&cfg.metrics, csv)?;
    Ok(TrainSummary { checkpoint, metrics_path: cfg.metrics.clone(), metrics, state })
}

pub fn load_checkpoint(cfg: &ExperimentConfig) -> Result<NetworkState<f32>, ExperimentError> {
    let state = NetworkState::<f32>::load(&cfg.checkpoint)?;
    let s = state.input;
    if (s.height, s.width, state.config.classes) != (cfg.n_users, cfg.n_tx(), cfg.classes()) {
        return Err(ExperimentError::Data(format!(
            "checkpoint is for {}x{} inputs with {} classes, config needs {}x{} with {}",
            s.height,
            s.width,
            state.config.classes,
            cfg.n_users,
            cfg.n_tx(),
            cfg.classes()
        )));
    }
    Ok(state)
}

/// Evaluation channel for trial `t`; never overlaps dataset streams.
pub fn eval_channel(cfg: &ExperimentConfig, trial: u64) -> ChannelMatrix {
    let seed = domain_seed(cfg.seed, Domain::EvalChannel);
    generate_channel_matrix(&cfg.channel_config(), &mut substream(seed, trial))
}

fn bpso_params(cfg: &ExperimentConfig, trial: u64) -> BpsoParams {
    BpsoParams {
        pop_size: cfg.bpso_pop,
        iterations: cfg.bpso_iters,
        ..BpsoParams::with_seed(domain_seed(cfg.seed, Domain::EvalBpso).wrapping_add(trial))
    }
}

/// CNN-selected subset for each channel.
pub fn cnn_select(state: &NetworkState<f32>, channels: &[ChannelMatrix], n_select: usize) -> Result<Vec<UserSubset>, ExperimentError> {
    let mut planes = Vec::new();
    for h in channels {
        planes.extend(channel_to_planes(h));
    }
    let n_users = state.input.height;
    predict_batch(state, &planes)?
        .into_iter()
        .map(|label: ClassLabel| {
            combo_unrank(label, n_users, n_select).map_err(|e| ExperimentError::Data(format!("CNN output: {e}")))
        })
        .collect()
}

/// Sum rates of the four methods on one channel draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawRates {
    pub trial: u64,
    pub snr_db: f64,
    pub es: f64,
    pub greedy: f64,
    pub bpso: f64,
    pub cnn: f64,
}

impl DrawRates {
    pub fn get(&self, method: Algorithm) -> f64 {
        match method {
            Algorithm::Exhaustive => self.es,
            Algorithm::Greedy => self.greedy,
            Algorithm::Bpso => self.bpso,
            Algorithm::Cnn => self.cnn,
        }
    }

    pub fn es_dominates(&self) -> bool {
        self.es >= self.greedy && self.es >= self.bpso && self.es >= self.cnn
    }
}

/// Paired comparison: every method sees the same `trials` channel draws,
/// evaluated at each SNR of `snr_grid_db`.
pub fn paired_draws(
    cfg: &ExperimentConfig,
    state: &NetworkState<f32>,
    snr_grid_db: &[f64],
) -> Result<Vec<DrawRates>, ExperimentError> {
    let channels: Vec<ChannelMatrix> = (0..cfg.trials as u64).into_par_iter().map(|t| eval_channel(cfg, t)).collect();
    let cnn_subsets = cnn_select(state, &channels, cfg.n_select)?;
    let mut out = Vec::with_capacity(channels.len() * snr_grid_db.len());
    for &snr_db in snr_grid_db {
        let noise = noise_power_from_snr_db(snr_db);
        let rows: Vec<DrawRates> = channels
            .par_iter()
            .zip(&cnn_subsets)
            .enumerate()
            .map(|(t, (h, cnn_subset))| {
                let (_, es) = exhaustive_search(h, cfg.n_select, noise);
                let greedy = evaluate_selection(h, &greedy_select(h, cfg.n_select, noise), noise).sum_rate;
                let bpso_subset = bpso_select(h, cfg.n_select, noise, &bpso_params(cfg, t as u64));
                let bpso = evaluate_selection(h, &bpso_subset, noise).sum_rate;
                let cnn = evaluate_selection(h, cnn_subset, noise).sum_rate;
                DrawRates { trial: t as u64, snr_db, es, greedy, bpso, cnn }
            })
            .collect();
        out.extend(rows);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub snr_db: f64,
    pub method: Algorithm,
    pub mean_rate: f64,
    pub std_rate: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<RateRow>,
    pub draws: Vec<DrawRates>,
}

impl EvalReport {
    /// Draws where some method beat exhaustive search (always empty).
    pub fn dominance_violations(&self) -> Vec<&DrawRates> {
        self.draws.iter().filter(|d| !d.es_dominates()).collect()
    }

    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut s = cfg.csv_preamble();
        s.push_str("snr_db,method,mean_rate,std_rate\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", r.snr_db, r.method, r.mean_rate, r.std_rate);
        }
        s
    }
}

pub fn cmd_eval_rate(cfg: &ExperimentConfig, state: &NetworkState<f32>) -> Result<EvalReport, ExperimentError> {
    let draws = paired_draws(cfg, state, &cfg.snr_grid_db)?;
    let mut rows = Vec::new();
    for &snr_db in &cfg.snr_grid_db {
        for method in Algorithm::ALL {
            let values: Vec<f64> = draws.iter().filter(|d| d.snr_db == snr_db).map(|d| d.get(method)).collect();
            let (mean_rate, std_rate) = mean_std(&values);
            rows.push(RateRow { snr_db, method, mean_rate, std_rate });
        }
    }
    Ok(EvalReport { rows, draws })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiRow {
    pub snr_db: f64,
    pub xi: f64,
    pub mean_rate: f64,
}

/// Per-draw CNN rates under imperfect CSI: selection from `Ĥ`, rate on `H`.
/// Returned as `rates[xi_index][snr_index][trial]`.
pub fn csi_draws(cfg: &ExperimentConfig, state: &NetworkState<f32>) -> Result<Vec<Vec<Vec<f64>>>, ExperimentError> {
    let channels: Vec<ChannelMatrix> = (0..cfg.trials as u64).into_par_iter().map(|t| eval_channel(cfg, t)).collect();
    let err_seed = domain_seed(cfg.seed, Domain::EvalCsiError);
    let mut out = Vec::with_capacity(cfg.xi_list.len());
    for &xi in &cfg.xi_list {
        let estimates = channels
            .iter()
            .enumerate()
            .map(|(t, h)| apply_csi_error(h, xi, &mut substream(err_seed, t as u64)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ExperimentError::Usage(e.to_string()))?;
        let subsets = cnn_select(state, &estimates, cfg.n_select)?;
        let per_snr = cfg
            .snr_grid_db
            .iter()
            .map(|&snr_db| {
                let noise = noise_power_from_snr_db(snr_db);
                channels
                    .par_iter()
                    .zip(&subsets)
                    .map(|(h, s)| evaluate_selection(h, s, noise).sum_rate)
                    .collect()
            })
            .collect();
        out.push(per_snr);
    }
    Ok(out)
}

pub fn cmd_csi_sweep(cfg: &ExperimentConfig, state: &NetworkState<f32>) -> Result<Vec<CsiRow>, ExperimentError> {
    let draws = csi_draws(cfg, state)?;
    let mut rows = Vec::new();
    for (si, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        for (xi_idx, &xi) in cfg.xi_list.iter().enumerate() {
            let (mean_rate, _) = mean_std(&draws[xi_idx][si]);
            rows.push(CsiRow { snr_db, xi, mean_rate });
        }
    }
    Ok(rows)
}

pub fn csi_csv(cfg: &ExperimentConfig, rows: &[CsiRow]) -> String {
    let mut s = cfg.csv_preamble();
    s.push_str("snr_db,xi,mean_rate\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6}", r.snr_db, r.xi, r.mean_rate);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityRow {
    pub method: Algorithm,
    pub operations: u64,
}

pub fn cmd_complexity(cfg: &ExperimentConfig) -> Vec<ComplexityRow> {
    let model = cfg.op_count_model();
    Algorithm::ALL
        .into_iter()
        .map(|method| ComplexityRow { method, operations: count_ops(&model, method) })
        .collect()
}

pub fn complexity_csv(cfg: &ExperimentConfig, rows: &[ComplexityRow]) -> String {
    let mut s = cfg.csv_preamble();
    s.push_str("method,operations\n");
    for r in rows {
        let _ = writeln!(s, "{},{}", r.method, r.operations);
    }
    s
}

/// Writes `text` to `out` or stdout.
pub fn emit(out: Option<&Path>, text: &str, force: bool) -> Result<(), ExperimentError> {
    match out {
        Some(path) => {
            refuse_overwrite(path, force)?;
            fs::write(path, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_overrides() {
        let cfg = ExperimentConfig::from_text(
            "# desk\narray_rows = 4\narray_cols = 4\nn_users = 6\nn_select = 3\nsnr_grid_db = -10:5:20\nxi_list = 1, 0.9\n",
        )
        .unwrap();
        assert_eq!(cfg.n_tx(), 16);
        assert_eq!(cfg.classes(), 20);
        assert_eq!(cfg.snr_grid_db, vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]);
        assert_eq!(cfg.xi_list, vec![1.0, 0.9]);
        assert_eq!(ExperimentConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let err = ExperimentConfig::from_text("bogus = 1").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(ExperimentConfig::from_text("n_select = 11").is_err());
        assert!(ExperimentConfig::from_text("trials = 0").is_err());
    }

    #[test]
    fn complexity_defaults_and_scaling() {
        let cfg = ExperimentConfig::default();
        let rows = cmd_complexity(&cfg);
        let ops: Vec<u64> = rows.iter().map(|r| r.operations).collect();
        assert_eq!(ops, vec![156_764_160, 74_649_600, 7_464_960, 5_827_584]);

        let full = ExperimentConfig { n_select: 10, ..cfg.clone() };
        let rows = cmd_complexity(&full);
        assert_eq!(rows[0].operations, 144 * 144 * 100);

        // doubling N_T quadruples the model-based counts
        let wide = ExperimentConfig { array_cols: 24, ..cfg.clone() };
        let doubled = cmd_complexity(&wide);
        for i in 0..3 {
            assert_eq!(doubled[i].operations, 4 * cmd_complexity(&cfg)[i].operations);
        }
        let csv = complexity_csv(&cfg, &cmd_complexity(&cfg));
        assert!(csv.contains("method,operations\nES,156764160\n"));
    }
}
