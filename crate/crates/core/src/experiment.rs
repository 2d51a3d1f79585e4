//! Experiment orchestration: configuration profiles, seed-matched sweeps,
//! checkpoint evaluation and the topology pipeline.
//!
//! A configuration is a TOML file merged onto a profile (`desk` or `paper`).
//! The resolved configuration is dumped as JSON next to every result together
//! with its SHA-256 hash, and every result row carries that hash.
//!
//! Seeding: trial `k` of a sweep uses `seed + k` for the place-cell ensemble,
//! the initial weights and the training streams, so the cells of one trial
//! differ only in the swept quantity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{
    export_population, population_grid_stats, score_maps, GridScoreConfig, GridScoreResult, RateMap,
    DEFAULT_MIN_OVERLAP,
};
use crate::codec::{EnsembleConfig, PlaceCellEnsemble, DEFAULT_DECODE_TOP_K};
use crate::error::{Error, Result};
use crate::network::{load_checkpoint, CheckpointMeta, LeakyRnnParams, NetworkConfig};
use crate::noise::{NoiseConfig, NoiseKind};
use crate::scalar::Scalar;
use crate::stats::mean_std;
use crate::topology::{
    barcode_stats, build_point_cloud, drop_zero_rows, fourier_torus, pca_reduce, rips_persistence,
    shuffled_control, write_barcodes_json, BarcodeReport, Metric, PersistenceDiagram, RipsConfig,
    TorusOutcome, DEFAULT_CROP_FRACTION, DEFAULT_MAX_POINTS, DEFAULT_PCA_DIM,
};
use crate::trainer::{
    evaluate_mse, population_rate_maps, train, Artifacts, EvalConfig, Task, TrainConfig,
};
use crate::trajectory::{generate_indexed, ArenaConfig, MotionConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

/// Learning rate of the desk profile.
pub const DESK_LEARNING_RATE: f64 = 1e-3;
/// Training steps of the full-scale `paper` profile.
pub const PAPER_STEPS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::config(format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    F32,
    #[default]
    F64,
}

/// Sweep axes. The subcommand fixes what `parameter` may name; empty lists
/// fall back to the subcommand defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<f64>,
    /// Leak rates crossed with the noise levels of a noise sweep.
    pub alphas: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: String::new(),
            values: Vec::new(),
            alphas: vec![0.95],
            noise_kinds: vec![NoiseKind::Gaussian, NoiseKind::Ou],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Trajectories whose states build the rate maps.
    pub map_trajectories: usize,
    /// Steps per map trajectory; the training length when unset.
    pub seq_len: Option<usize>,
    pub batch_size: usize,
    pub min_overlap: usize,
    pub grid: GridScoreConfig,
    pub top_k: usize,
    /// Held-out trajectories per length in `evaluate`.
    pub test_trajectories: usize,
    pub t_list: Vec<usize>,
    /// Write every rate map and SAC of sweep runs (always done by `evaluate`).
    pub export_maps: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            map_trajectories: 5000,
            seq_len: None,
            batch_size: 250,
            min_overlap: DEFAULT_MIN_OVERLAP,
            grid: GridScoreConfig::default(),
            top_k: 10,
            test_trajectories: 500,
            t_list: vec![20, 50],
            export_maps: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySettings {
    pub crop_fraction: f64,
    pub max_points: usize,
    pub pca_dim: usize,
    pub metric: Metric,
    pub n_shuffles: usize,
    pub max_dim: usize,
    pub max_filtration: Option<f64>,
}

impl Default for TopologySettings {
    fn default() -> Self {
        Self {
            crop_fraction: DEFAULT_CROP_FRACTION,
            max_points: DEFAULT_MAX_POINTS,
            pca_dim: DEFAULT_PCA_DIM,
            metric: Metric::Cosine,
            n_shuffles: 5,
            max_dim: 2,
            max_filtration: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub n_trajectories: usize,
    pub steps: usize,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            n_trajectories: 10,
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Master seed.
    pub seed: u64,
    pub trials: usize,
    pub scalar: ScalarKind,
    pub output_dir: PathBuf,
    /// Concurrent sweep cells; 0 uses every core.
    pub workers: usize,
    pub arena: ArenaConfig,
    pub motion: MotionConfig,
    pub ensemble: EnsembleConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    pub sweep: SweepConfig,
    pub eval: EvalSettings,
    pub topology: TopologySettings,
    pub simulate: SimulateSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (n_rec, n_cells, batch_size, n_steps) = match profile {
            Profile::Desk => (512, 128, 64, 2000),
            Profile::Paper => (4096, 512, 200, PAPER_STEPS),
        };
        let learning_rate = match profile {
            Profile::Desk => DESK_LEARNING_RATE,
            Profile::Paper => 1e-4,
        };
        Self {
            profile,
            seed: 0,
            trials: 5,
            scalar: ScalarKind::F64,
            output_dir: PathBuf::from("runs"),
            workers: 0,
            arena: ArenaConfig::default(),
            motion: MotionConfig::default(),
            ensemble: EnsembleConfig {
                n_cells,
                ..EnsembleConfig::default()
            },
            network: NetworkConfig {
                n_rec,
                ..NetworkConfig::default()
            },
            train: TrainConfig {
                batch_size,
                seq_len: 20,
                n_steps,
                learning_rate,
                ..TrainConfig::default()
            },
            noise: NoiseConfig::default(),
            sweep: SweepConfig::default(),
            eval: EvalSettings::default(),
            topology: TopologySettings::default(),
            simulate: SimulateSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        self.arena.validate()?;
        self.motion.validate()?;
        self.train.validate()?;
        self.noise.validate()?;
        if self.ensemble.n_cells == 0 || self.network.n_rec == 0 {
            return Err(Error::config("n_cells and n_rec must be at least 1"));
        }
        if !(self.ensemble.sigma_e > 0.0 && self.ensemble.sigma_i > self.ensemble.sigma_e) {
            return Err(Error::config("need 0 < sigma_e < sigma_i"));
        }
        let e = &self.eval;
        if e.map_trajectories == 0 || e.batch_size == 0 || e.test_trajectories == 0 || e.seq_len == Some(0) {
            return Err(Error::config("evaluation sizes must be at least 1"));
        }
        let t = &self.topology;
        if !(t.crop_fraction > 0.0 && t.crop_fraction <= 1.0) || t.pca_dim == 0 || t.max_dim > 2 {
            return Err(Error::config(
                "topology needs crop_fraction in (0, 1], pca_dim >= 1 and max_dim <= 2",
            ));
        }
        if self.simulate.steps == 0 {
            return Err(Error::config("simulate.steps must be at least 1"));
        }
        Ok(())
    }

    fn map_eval(&self) -> EvalConfig {
        EvalConfig {
            n_trajectories: self.eval.map_trajectories,
            seq_len: self.eval.seq_len.unwrap_or(self.train.seq_len),
            seed: self.seed,
            batch_size: self.eval.batch_size,
        }
    }

    /// The supervised task of one run; the ensemble is drawn from `seed`.
    pub fn task(&self) -> Result<Task> {
        Ok(Task {
            arena: self.arena,
            motion: self.motion,
            ensemble: PlaceCellEnsemble::random(&self.ensemble, &self.arena, self.seed)?,
            noise: self.noise,
            input_units: self.train.input_units,
            target_mode: self.train.target_mode,
        })
    }

    /// Copy whose leak rate is `alpha` in both places it is stored.
    fn with_alpha(&self, alpha: f64) -> Self {
        let mut c = self.clone();
        c.train.alpha = alpha;
        c.network.alpha = alpha;
        c
    }

    /// Configuration of trial `k`: seeds advanced, a single trial.
    fn trial(&self, k: usize) -> Self {
        let mut c = self.clone();
        c.seed = self.seed + k as u64;
        c.train.seed = c.seed;
        c.trials = 1;
        c
    }
}

// ---------------------------------------------------------------------------
// resolution

/// Command-line overrides, applied after the profile and the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Merges a parsed file onto its profile and applies the overrides.
///
/// `network.alpha` and `train.alpha` name the same quantity; setting only one
/// sets both, setting both to different values is an error.
pub fn resolve(mut file: Value, ov: &Overrides) -> Result<ExperimentConfig> {
    let obj = file
        .as_object_mut()
        .ok_or_else(|| Error::config("configuration must be a table"))?;
    let profile = match (ov.profile, obj.get("profile")) {
        (Some(p), _) => p,
        (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
        (None, None) => Profile::Desk,
    };
    obj.insert("profile".into(), serde_json::to_value(profile)?);
    let net_alpha = file.pointer("/network/alpha").cloned();
    let train_alpha = file.pointer("/train/alpha").cloned();
    match (net_alpha, train_alpha) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::config(format!(
                "network.alpha = {a} conflicts with train.alpha = {b}"
            )))
        }
        (Some(a), None) => {
            let train = file
                .as_object_mut()
                .expect("checked above")
                .entry("train")
                .or_insert_with(|| Value::Object(Default::default()));
            train
                .as_object_mut()
                .ok_or_else(|| Error::config("train must be a table"))?
                .insert("alpha".into(), a);
        }
        _ => {}
    }
    let mut merged = serde_json::to_value(ExperimentConfig::for_profile(profile))?;
    merge(&mut merged, file);
    let mut cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.output_dir = o.clone();
    }
    if let Some(a) = ov.alpha {
        cfg.train.alpha = a;
    }
    cfg.network.alpha = cfg.train.alpha;
    // the training streams always follow the master seed
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses TOML text; an empty text yields the profile defaults.
pub fn parse_config(text: &str, ov: &Overrides) -> Result<ExperimentConfig> {
    let file: Value = toml::from_str(text)?;
    resolve(file, ov)
}

pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config(&text, ov)
}

/// SHA-256 of the canonical JSON of everything that affects results
/// (`output_dir` and `workers` excluded).
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut v = serde_json::to_value(cfg)?;
    if let Value::Object(m) = &mut v {
        m.remove("output_dir");
        m.remove("workers");
    }
    let digest = Sha256::digest(serde_json::to_vec(&v)?);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config_hash: String,
    pub config: ExperimentConfig,
}

/// Writes `resolved_config.json` into `dir` and returns the hash.
pub fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = config_hash(cfg)?;
    let doc = ResolvedConfig {
        config_hash: hash.clone(),
        config: cfg.clone(),
    };
    let path = dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))?;
    Ok(hash)
}

pub fn read_resolved(path: &Path) -> Result<ResolvedConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// single runs

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub alpha: f64,
    pub final_loss: f64,
    pub final_mse: Option<f64>,
    pub mean_gs: Option<f64>,
    pub defined_fraction: Option<f64>,
    pub steps_completed: usize,
    pub abort: Option<String>,
    /// Paths relative to the output directory.
    pub loss_curve: String,
    pub checkpoint: String,
}

fn rel_join(rel: &str, file: &str) -> String {
    if rel.is_empty() {
        file.to_string()
    } else {
        format!("{rel}/{file}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapAnalysis {
    pub mean_gs: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
    pub top: Vec<usize>,
}

impl MapAnalysis {
    fn defined_fraction(&self) -> f64 {
        self.n_defined as f64 / (self.n_defined + self.n_undefined).max(1) as f64
    }
}

fn write_grid_scores(path: &Path, results: &[GridScoreResult]) -> Result<()> {
    let mut out = String::from("neuron_id,gs,defined_flag\n");
    for (i, r) in results.iter().enumerate() {
        match r.gs {
            Some(g) => writeln!(out, "{i},{g},1"),
            None => writeln!(out, "{i},nan,0"),
        }
        .expect("writing to a String");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Rate maps, SACs and grid scores of a trained network.
fn analyse_maps(maps: &[RateMap], cfg: &ExperimentConfig, dir: &Path, export: bool) -> Result<MapAnalysis> {
    let scored = score_maps(maps, cfg.eval.min_overlap, &cfg.eval.grid)?;
    let results: Vec<GridScoreResult> = scored.iter().map(|s| s.1.clone()).collect();
    write_grid_scores(&dir.join("grid_scores.csv"), &results)?;
    if export {
        export_population(&dir.join("maps"), maps, &scored)?;
    }
    let n_defined = results.iter().filter(|r| r.is_defined()).count();
    let stats = match population_grid_stats(&results, cfg.eval.top_k) {
        Ok(s) => Some(s),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MapAnalysis {
        mean_gs: stats.as_ref().map(|s| s.mean_gs),
        n_defined,
        n_undefined: results.len() - n_defined,
        top: stats.map(|s| s.top).unwrap_or_default(),
    })
}

fn run_typed<F: Scalar>(cfg: &ExperimentConfig, root: &Path, rel: &str, analyse: bool) -> Result<RunRecord> {
    let dir = if rel.is_empty() { root.to_path_buf() } else { root.join(rel) };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let task = cfg.task()?;
    task.ensemble.save_json(&dir.join("ensemble.json"))?;
    let params = LeakyRnnParams::<F>::init(
        cfg.network.n_rec,
        task.ensemble.n_cells(),
        cfg.train.alpha,
        cfg.network.recurrent_init,
        cfg.seed,
    )?;
    let meta = CheckpointMeta {
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        n_rec: cfg.network.n_rec,
        n_place: task.ensemble.n_cells(),
        alpha: cfg.train.alpha,
        scalar: F::type_name().to_string(),
        config: serde_json::to_value(cfg)?,
    };
    let artifacts = Artifacts {
        dir: dir.clone(),
        stem: "model".into(),
        meta,
    };
    let out = train(&cfg.train, &task, &params, Some(&artifacts))?;
    let analysis = match (&out.report.abort, analyse) {
        (None, true) => {
            let maps = population_rate_maps(&out.params, &task, &cfg.map_eval())?;
            Some(analyse_maps(&maps, cfg, &dir, cfg.eval.export_maps)?)
        }
        _ => None,
    };
    let r = &out.report;
    if let Some(a) = &r.abort {
        log::warn!("run '{rel}' aborted: {a}");
    }
    Ok(RunRecord {
        label: rel.to_string(),
        seed: cfg.seed,
        alpha: cfg.train.alpha,
        final_loss: r.final_loss,
        final_mse: r.final_mse,
        mean_gs: analysis.as_ref().and_then(|a| a.mean_gs),
        defined_fraction: analysis.as_ref().map(MapAnalysis::defined_fraction),
        steps_completed: r.steps_completed,
        abort: r.abort.clone(),
        loss_curve: rel_join(rel, "model_loss.csv"),
        checkpoint: rel_join(rel, "model.gpnw"),
    })
}

/// Trains one network under `root/rel`, optionally scoring its rate maps.
pub fn run_single(cfg: &ExperimentConfig, root: &Path, rel: &str, analyse: bool) -> Result<RunRecord> {
    match cfg.scalar {
        ScalarKind::F32 => run_typed::<f32>(cfg, root, rel, analyse),
        ScalarKind::F64 => run_typed::<f64>(cfg, root, rel, analyse),
    }
}

/// The `train` command: one run written straight into the output directory.
pub fn train_command(cfg: &ExperimentConfig) -> Result<RunRecord> {
    write_resolved(cfg, &cfg.output_dir)?;
    run_single(cfg, &cfg.output_dir, "", false)
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Alpha,
    Noise,
    EnvLength,
}

impl SweepKind {
    pub fn parameter(self) -> &'static str {
        match self {
            SweepKind::Alpha => "alpha",
            SweepKind::Noise => "noi",
            SweepKind::EnvLength => "env_length",
        }
    }

    fn accepts(self, name: &str) -> bool {
        let aliases: &[&str] = match self {
            SweepKind::Alpha => &["alpha", "train.alpha", "network.alpha"],
            SweepKind::Noise => &["noi", "noise.h", "noise.ou_sigma"],
            SweepKind::EnvLength => &["env_length", "arena.side_length"],
        };
        name.is_empty() || aliases.contains(&name)
    }

    fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::Alpha => vec![0.2, 0.9, 1.0],
            SweepKind::Noise => vec![0.0, 0.02, 0.05],
            SweepKind::EnvLength => vec![55.0, 220.0, 880.0],
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub trial: usize,
    pub noise_kind: NoiseKind,
    pub noise_intensity: f64,
    pub record: RunRecord,
}

/// Per-cell mean ± sample std over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub value: f64,
    pub alpha: f64,
    pub noise_kind: NoiseKind,
    pub noise_intensity: f64,
    pub n_trials: usize,
    pub n_completed: usize,
    pub final_mse: (f64, f64),
    pub mean_gs: (f64, f64),
    pub defined_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// File stem of the tables, e.g. `sweep_alpha`.
    pub name: String,
    pub config_hash: String,
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

fn noise_param(kind: NoiseKind) -> &'static str {
    match kind {
        NoiseKind::Gaussian => "h",
        NoiseKind::Ou => "ou_sigma",
        NoiseKind::None => "none",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

impl ExperimentResult {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "config_hash,parameter,value,alpha,noise_kind,noise_param,noise_intensity,trial,seed,\
             final_loss,final_mse,mean_gs,defined_fraction,steps_completed,aborted,loss_curve,checkpoint\n",
        );
        for row in &self.rows {
            let r = &row.record;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.config_hash,
                self.parameter,
                row.value,
                r.alpha,
                row.noise_kind.as_str(),
                noise_param(row.noise_kind),
                row.noise_intensity,
                row.trial,
                r.seed,
                r.final_loss,
                opt(r.final_mse),
                opt(r.mean_gs),
                opt(r.defined_fraction),
                r.steps_completed,
                u8::from(r.abort.is_some()),
                r.loss_curve,
                r.checkpoint
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "config_hash,parameter,value,alpha,noise_kind,noise_intensity,n_trials,n_completed,\
             final_mse_mean,final_mse_std,mean_gs_mean,mean_gs_std,defined_fraction_mean\n",
        );
        for s in &self.summary {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.config_hash,
                self.parameter,
                s.value,
                s.alpha,
                s.noise_kind.as_str(),
                s.noise_intensity,
                s.n_trials,
                s.n_completed,
                s.final_mse.0,
                s.final_mse.1,
                s.mean_gs.0,
                s.mean_gs.1,
                s.defined_fraction
            )
            .expect("writing to a String");
        }
        out
    }

    fn summary_name(&self) -> String {
        match self.name.strip_prefix("sweep_noise_") {
            Some(kind) => format!("noise_heatmap_{kind}"),
            None => format!("{}_summary", self.name),
        }
    }

    /// Writes `<name>.csv` and the summary table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let a = dir.join(format!("{}.csv", self.name));
        fs::write(&a, self.rows_csv()).map_err(|e| Error::io(&a, e))?;
        let b = dir.join(format!("{}.csv", self.summary_name()));
        fs::write(&b, self.summary_csv()).map_err(|e| Error::io(&b, e))
    }

    /// Rows of trial `k`, keyed by `(value, alpha)`.
    pub fn trial_rows(&self, k: usize) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.trial == k)
    }

    /// Any run that stopped on a numeric failure.
    pub fn any_aborted(&self) -> bool {
        self.rows.iter().any(|r| r.record.abort.is_some())
    }
}

fn summarise(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        let k = (r.value, r.record.alpha);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(value, alpha)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.value == value && r.record.alpha == alpha)
                .collect();
            let done: Vec<&&SweepRow> = group.iter().filter(|r| r.record.abort.is_none()).collect();
            let mse: Vec<f64> = done.iter().filter_map(|r| r.record.final_mse).collect();
            let gs: Vec<f64> = done.iter().filter_map(|r| r.record.mean_gs).collect();
            let frac: Vec<f64> = done.iter().filter_map(|r| r.record.defined_fraction).collect();
            SummaryRow {
                value,
                alpha,
                noise_kind: group[0].noise_kind,
                noise_intensity: group[0].noise_intensity,
                n_trials: group.len(),
                n_completed: done.len(),
                final_mse: mean_std(&mse),
                mean_gs: mean_std(&gs),
                defined_fraction: mean_std(&frac).0,
            }
        })
        .collect()
}

struct Cell {
    label: String,
    cfg: ExperimentConfig,
    value: f64,
    trial: usize,
    noise_kind: NoiseKind,
    noise_intensity: f64,
}

fn sweep_values(cfg: &ExperimentConfig, kind: SweepKind) -> Result<Vec<f64>> {
    if !kind.accepts(&cfg.sweep.parameter) {
        return Err(Error::config(format!(
            "sweep parameter '{}' does not match a {} sweep",
            cfg.sweep.parameter,
            kind.parameter()
        )));
    }
    let values = if cfg.sweep.values.is_empty() {
        kind.default_values()
    } else {
        cfg.sweep.values.clone()
    };
    for &v in &values {
        let ok = match kind {
            SweepKind::Alpha => v > 0.0 && v <= 1.0,
            SweepKind::Noise => v >= 0.0 && v.is_finite(),
            SweepKind::EnvLength => v > 0.0 && v.is_finite(),
        };
        if !ok {
            return Err(Error::config(format!("invalid {} value {v}", kind.parameter())));
        }
    }
    Ok(values)
}

fn worker_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::config(format!("worker pool: {e}")))
}

/// Runs every distinct cell once (cells sharing a label share a run) and
/// returns records by label.
fn run_cells(cells: &[Cell], root: &Path, workers: usize) -> Result<BTreeMap<String, RunRecord>> {
    let mut unique: Vec<&Cell> = Vec::new();
    for c in cells {
        if !unique.iter().any(|u| u.label == c.label) {
            unique.push(c);
        }
    }
    let job = || -> Vec<Result<RunRecord>> {
        unique
            .par_iter()
            .map(|c| {
                log::info!("run {}", c.label);
                run_single(&c.cfg, root, &c.label, true)
            })
            .collect()
    };
    let results = match worker_pool(workers)? {
        Some(pool) => pool.install(job),
        None => job(),
    };
    unique
        .iter()
        .zip(results)
        .map(|(c, r)| Ok((c.label.clone(), r?)))
        .collect()
}

fn build_cells(cfg: &ExperimentConfig, kind: SweepKind, noise_kind: NoiseKind) -> Result<Vec<Cell>> {
    let values = sweep_values(cfg, kind)?;
    let mut cells = Vec::new();
    for trial in 0..cfg.trials {
        let base = cfg.trial(trial);
        match kind {
            SweepKind::Alpha => {
                for &a in &values {
                    cells.push(Cell {
                        label: format!("runs/alpha_{a}_t{trial}"),
                        cfg: base.with_alpha(a),
                        value: a,
                        trial,
                        noise_kind: cfg.noise.kind,
                        noise_intensity: cfg.noise.intensity(),
                    });
                }
            }
            SweepKind::Noise => {
                for &a in &cfg.sweep.alphas {
                    check_leak(a)?;
                    for &noi in &values {
                        let mut c = base.with_alpha(a);
                        // a silent channel is the same run whatever its kind
                        let label = if noi == 0.0 {
                            c.noise = NoiseConfig {
                                kind: NoiseKind::None,
                                h: 0.0,
                                ou_sigma: 0.0,
                                ..cfg.noise
                            };
                            format!("runs/clean_a{a}_t{trial}")
                        } else {
                            c.noise = NoiseConfig {
                                kind: noise_kind,
                                ..cfg.noise
                            }
                            .with_intensity(noi);
                            format!("runs/{}_a{a}_n{noi}_t{trial}", noise_kind.as_str())
                        };
                        cells.push(Cell {
                            label,
                            cfg: c,
                            value: noi,
                            trial,
                            noise_kind,
                            noise_intensity: noi,
                        });
                    }
                }
            }
            SweepKind::EnvLength => {
                for &len in &values {
                    let mut c = base.clone();
                    // keep the number of rate-map bins fixed
                    c.arena.bin_size = cfg.arena.bin_size * len / cfg.arena.side_length;
                    c.arena.side_length = len;
                    c.validate()?;
                    cells.push(Cell {
                        label: format!("runs/env_{len}_t{trial}"),
                        cfg: c,
                        value: len,
                        trial,
                        noise_kind: cfg.noise.kind,
                        noise_intensity: cfg.noise.intensity(),
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn check_leak(a: f64) -> Result<()> {
    if a > 0.0 && a <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("leak rate {a} outside (0, 1]")))
    }
}

fn collect_result(
    name: String,
    hash: &str,
    parameter: &str,
    cells: &[Cell],
    records: &BTreeMap<String, RunRecord>,
) -> ExperimentResult {
    let rows: Vec<SweepRow> = cells
        .iter()
        .map(|c| SweepRow {
            value: c.value,
            trial: c.trial,
            noise_kind: c.noise_kind,
            noise_intensity: c.noise_intensity,
            record: records[&c.label].clone(),
        })
        .collect();
    ExperimentResult {
        name,
        config_hash: hash.to_string(),
        parameter: parameter.to_string(),
        summary: summarise(&rows),
        rows,
    }
}

/// Runs a sweep and writes its tables into `cfg.output_dir`.
pub fn run_sweep(cfg: &ExperimentConfig, kind: SweepKind) -> Result<Vec<ExperimentResult>> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    let hash = write_resolved(cfg, root)?;
    let kinds: Vec<NoiseKind> = match kind {
        SweepKind::Noise => {
            if cfg.sweep.noise_kinds.is_empty() || cfg.sweep.alphas.is_empty() {
                return Err(Error::config("noise sweep needs noise_kinds and alphas"));
            }
            if cfg.sweep.noise_kinds.contains(&NoiseKind::None) {
                return Err(Error::config("noise sweep kinds must be gaussian or ou"));
            }
            cfg.sweep.noise_kinds.clone()
        }
        _ => vec![cfg.noise.kind],
    };
    let per_kind: Vec<Vec<Cell>> = kinds
        .iter()
        .map(|&k| build_cells(cfg, kind, k))
        .collect::<Result<_>>()?;
    let all: Vec<Cell> = per_kind.iter().flatten().map(clone_cell).collect();
    let records = run_cells(&all, root, cfg.workers)?;
    let results: Vec<ExperimentResult> = kinds
        .iter()
        .zip(&per_kind)
        .map(|(k, cells)| {
            let name = match kind {
                SweepKind::Alpha => "sweep_alpha".to_string(),
                SweepKind::Noise => format!("sweep_noise_{}", k.as_str()),
                SweepKind::EnvLength => "sweep_env".to_string(),
            };
            collect_result(name, &hash, kind.parameter(), cells, &records)
        })
        .collect();
    for r in &results {
        r.write(root)?;
    }
    if kind == SweepKind::EnvLength {
        write_env_trend(&results[0], root)?;
    }
    Ok(results)
}

fn clone_cell(c: &Cell) -> Cell {
    Cell {
        label: c.label.clone(),
        cfg: c.cfg.clone(),
        value: c.value,
        trial: c.trial,
        noise_kind: c.noise_kind,
        noise_intensity: c.noise_intensity,
    }
}

pub fn run_alpha_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    Ok(run_sweep(cfg, SweepKind::Alpha)?.remove(0))
}

/// Vanilla-vs-leaky comparison: every trial trains one shared initialization
/// once per α on identical trajectory streams. `alphas` must include the
/// vanilla baseline α = 1; per-α means are in the result summary.
pub fn seed_matched_comparison(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<ExperimentResult> {
    if !alphas.contains(&1.0) {
        return Err(Error::config("seed-matched comparison needs the baseline alpha = 1"));
    }
    let mut cfg = cfg.clone();
    cfg.sweep.parameter = SweepKind::Alpha.parameter().to_string();
    cfg.sweep.values = alphas.to_vec();
    run_alpha_sweep(&cfg)
}

/// One result per noise kind, each covering every `(α, NoI)` cell.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    run_sweep(cfg, SweepKind::Noise)
}

pub fn run_env_length_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    Ok(run_sweep(cfg, SweepKind::EnvLength)?.remove(0))
}

/// Whether the mean grid score peaks strictly inside the length range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvTrend {
    pub lengths: Vec<f64>,
    pub mean_gs: Vec<f64>,
    pub best_length: Option<f64>,
    pub interior_maximum: bool,
}

pub fn env_trend(result: &ExperimentResult) -> EnvTrend {
    let mut pts: Vec<(f64, f64)> = result.summary.iter().map(|s| (s.value, s.mean_gs.0)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = pts
        .iter()
        .enumerate()
        .filter(|(_, p)| p.1.is_finite())
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1));
    EnvTrend {
        lengths: pts.iter().map(|p| p.0).collect(),
        mean_gs: pts.iter().map(|p| p.1).collect(),
        best_length: best.map(|b| b.1 .0),
        interior_maximum: best.is_some_and(|(i, _)| i > 0 && i + 1 < pts.len()),
    }
}

fn write_env_trend(result: &ExperimentResult, dir: &Path) -> Result<()> {
    let t = env_trend(result);
    log::info!(
        "env sweep: best length {:?}, interior maximum {}",
        t.best_length,
        t.interior_maximum
    );
    let path = dir.join("env_trend.json");
    fs::write(&path, serde_json::to_string_pretty(&t)?).map_err(|e| Error::io(&path, e))
}

// ---------------------------------------------------------------------------
// evaluation

/// Weights plus the task they were trained on.
struct LoadedModel<F: Scalar> {
    params: LeakyRnnParams<F>,
    /// Configuration from the checkpoint sidecar, else the caller's.
    cfg: ExperimentConfig,
    task: Task,
}

fn load_model<F: Scalar>(checkpoint: &Path, fallback: &ExperimentConfig) -> Result<LoadedModel<F>> {
    let (params, meta) = load_checkpoint::<F>(checkpoint)?;
    let cfg = match meta.as_ref().map(|m| &m.config) {
        Some(v) if !v.is_null() => {
            serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?
        }
        _ => fallback.clone(),
    };
    let mut task = cfg.task()?;
    if let Some(dir) = checkpoint.parent() {
        let ens = dir.join("ensemble.json");
        if ens.is_file() {
            task.ensemble = PlaceCellEnsemble::load_json(&ens)?;
        }
    }
    if task.ensemble.n_cells() != params.n_place() {
        return Err(Error::Shape(format!(
            "checkpoint has {} outputs, ensemble {} cells",
            params.n_place(),
            task.ensemble.n_cells()
        )));
    }
    Ok(LoadedModel { params, cfg, task })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub seq_len: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub config_hash: String,
    pub checkpoint: String,
    pub per_t: Vec<MsePoint>,
    pub maps: MapAnalysis,
}

fn evaluate_typed<F: Scalar>(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    n_test: usize,
    t_list: &[usize],
) -> Result<Evaluation> {
    if t_list.is_empty() || t_list.contains(&0) {
        return Err(Error::config("evaluation needs a non-empty list of positive lengths"));
    }
    if n_test == 0 {
        return Err(Error::config("evaluation needs at least one test trajectory"));
    }
    let model = load_model::<F>(checkpoint, cfg)?;
    let out = &cfg.output_dir;
    let hash = write_resolved(cfg, out)?;
    let per_t = t_list
        .iter()
        .map(|&t| {
            let e = EvalConfig {
                n_trajectories: n_test,
                seq_len: t,
                seed: cfg.seed,
                batch_size: cfg.eval.batch_size,
            };
            Ok(MsePoint {
                seq_len: t,
                mse: evaluate_mse(&model.params, &model.task, &e)?.mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut eval_cfg = cfg.map_eval();
    eval_cfg.seq_len = cfg.eval.seq_len.unwrap_or(model.cfg.train.seq_len);
    let maps = population_rate_maps(&model.params, &model.task, &eval_cfg)?;
    let analysis = analyse_maps(&maps, cfg, out, true)?;
    let mut csv = String::from("config_hash,seq_len,mse\n");
    for p in &per_t {
        writeln!(csv, "{hash},{},{}", p.seq_len, p.mse).expect("writing to a String");
    }
    let path = out.join("mse_by_t.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let result = Evaluation {
        config_hash: hash,
        checkpoint: checkpoint.display().to_string(),
        per_t,
        maps: analysis,
    };
    let path = out.join("evaluation.json");
    fs::write(&path, serde_json::to_string_pretty(&result)?).map_err(|e| Error::io(&path, e))?;
    Ok(result)
}

/// Decoding error per sequence length plus the rate-map analysis of a saved
/// network; results go to `cfg.output_dir`.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    n_test: usize,
    t_list: &[usize],
) -> Result<Evaluation> {
    match cfg.scalar {
        ScalarKind::F32 => evaluate_typed::<f32>(cfg, checkpoint, n_test, t_list),
        ScalarKind::F64 => evaluate_typed::<f64>(cfg, checkpoint, n_test, t_list),
    }
}

// ---------------------------------------------------------------------------
// topology

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub config_hash: String,
    pub n_points: usize,
    pub explained_variance: Vec<f64>,
    /// Mean of the three longest bars per dimension.
    pub top_means: Vec<f64>,
    pub torus_found: bool,
}

/// Position decoded from the readout of each visited bin's mean state,
/// row-major over the map.
fn decoded_bin_positions<F: Scalar>(model: &LoadedModel<F>, maps: &[RateMap]) -> Result<Vec<[f64; 2]>> {
    let b = maps[0].n_bins();
    let mut out = Vec::with_capacity(b * b);
    for iy in 0..b {
        for ix in 0..b {
            if maps[0].visit_counts[[iy, ix]] == 0 {
                continue;
            }
            let r: Array1<F> = maps.iter().map(|m| F::lit(m.grid[[iy, ix]])).collect();
            let logits = model.params.w_out.dot(&r);
            out.push(
                model
                    .task
                    .ensemble
                    .decode(logits.as_slice().expect("contiguous"), DEFAULT_DECODE_TOP_K)?,
            );
        }
    }
    Ok(out)
}

fn topology_typed<F: Scalar>(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<TopologySummary> {
    let model = load_model::<F>(checkpoint, cfg)?;
    let out = &cfg.output_dir;
    let hash = write_resolved(cfg, out)?;
    let mut eval_cfg = cfg.map_eval();
    eval_cfg.seq_len = cfg.eval.seq_len.unwrap_or(model.cfg.train.seq_len);
    let maps = population_rate_maps(&model.params, &model.task, &eval_cfg)?;
    let t = &cfg.topology;

    let cloud = build_point_cloud(&maps, t.crop_fraction, t.max_points, cfg.seed)?;
    let pca = pca_reduce(&cloud, t.pca_dim)?;
    let reduced = match t.metric {
        Metric::Cosine => {
            let (c, dropped) = drop_zero_rows(&pca.cloud);
            if dropped > 0 {
                log::warn!("dropped {dropped} zero rows before cosine distances");
            }
            c
        }
        Metric::Euclidean => pca.cloud.clone(),
    };
    let rips = RipsConfig {
        max_dim: t.max_dim,
        max_filtration: t.max_filtration,
        max_points: t.max_points.max(reduced.len()),
        include_zero_persistence: false,
    };
    let diagram: PersistenceDiagram = rips_persistence(&reduced, t.metric, &rips)?;
    let shuffled = if t.n_shuffles > 0 {
        Some(shuffled_control(&reduced, t.n_shuffles, cfg.seed, t.metric, &rips)?)
    } else {
        None
    };
    let stats = barcode_stats(&diagram, 3);
    diagram.write_csv(&out.join("diagrams.csv"))?;
    let report = BarcodeReport {
        threshold: diagram.threshold,
        stats: stats.clone(),
        shuffled,
        explained_variance: pca.explained.clone(),
        n_points: reduced.len(),
    };
    write_barcodes_json(&out.join("barcodes.json"), &diagram, &report)?;

    let positions = decoded_bin_positions(&model, &maps)?;
    let torus = fourier_torus(&maps, &positions)?;
    let torus_found = matches!(torus, TorusOutcome::Found(_));
    if let TorusOutcome::Found(p) = &torus {
        p.write_csv(&out.join("torus_projection.csv"))?;
    } else {
        log::warn!("no hexagonal Fourier triple; torus projection skipped");
    }
    let path = out.join("torus.json");
    fs::write(&path, serde_json::to_string_pretty(&torus)?).map_err(|e| Error::io(&path, e))?;

    let summary = TopologySummary {
        config_hash: hash,
        n_points: reduced.len(),
        explained_variance: pca.explained,
        top_means: stats.iter().map(|s| s.mean_top).collect(),
        torus_found,
    };
    let path = out.join("topology_summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Persistence diagrams, barcodes with shuffled controls and the Fourier
/// torus projection of a saved network's population activity.
pub fn topology_command(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<TopologySummary> {
    match cfg.scalar {
        ScalarKind::F32 => topology_typed::<f32>(cfg, checkpoint),
        ScalarKind::F64 => topology_typed::<f64>(cfg, checkpoint),
    }
}

// ---------------------------------------------------------------------------
// simulate

/// Writes `simulate.n_trajectories` trajectories and the place-cell ensemble.
pub fn simulate_command(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = &cfg.output_dir;
    write_resolved(cfg, out)?;
    let task = cfg.task()?;
    task.ensemble.save_json(&out.join("ensemble.json"))?;
    let dir = out.join("trajectories");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    (0..cfg.simulate.n_trajectories)
        .map(|i| {
            let traj = generate_indexed(&cfg.arena, &cfg.motion, cfg.simulate.steps, cfg.seed, &[i as u64])?;
            let path = dir.join(format!("trajectory_{i:04}.csv"));
            let mut buf = Vec::new();
            traj.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
