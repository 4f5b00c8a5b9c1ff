//! Run configuration: defaults, optional JSON file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use qcnn_core::analytic::GridAxes;
use qcnn_core::cnn::TrainerConfig;
use qcnn_core::datasets::{TrainingSetSpec, MAX_N, MIX_RATIOS};
use qcnn_core::evaluation::{CriticalErrorConfig, EvalConfig};
use qcnn_core::numerics::{master_seed_from_env, RngState};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Csv,
    Binary,
}

/// Everything a run depends on. Serialized into every manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub a: Vec<u32>,
    pub n: Vec<usize>,
    /// Training set block size.
    pub unit: u64,
    /// `default`, `coarse` or `SLO:SHI:STEP;MLO:MHI:STEP`.
    pub grid: String,
    /// `seed` here is ignored: each model gets one derived from the master seed.
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub critical_errors: CriticalErrorConfig,
    /// 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
    pub format: DatasetFormat,
    pub paper_scale: bool,
    pub baseline_only: bool,
    pub critical: bool,
}

pub const DESK_UNIT: u64 = 10_000;
pub const PAPER_UNIT: u64 = 100_000;
pub const PAPER_IN_CONTROL: u64 = 100_000_000;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            a: vec![6],
            n: vec![3],
            unit: DESK_UNIT,
            grid: "default".into(),
            trainer: TrainerConfig::desk_scale(),
            eval: EvalConfig::default(),
            critical_errors: CriticalErrorConfig::default(),
            workers: 0,
            out: PathBuf::from("out"),
            format: DatasetFormat::Csv,
            paper_scale: false,
            baseline_only: false,
            critical: false,
        }
    }
}

/// Flags shared by all subcommands. Any flag given overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// JSON run configuration
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed (otherwise the config file, then QCNN_SEED)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Tuple sizes: comma list or `all`
    #[arg(long, global = true)]
    pub n: Option<String>,
    /// Mix ratios: comma list or `all`
    #[arg(long, global = true)]
    pub a: Option<String>,
    /// Training set unit
    #[arg(long, global = true)]
    pub unit: Option<u64>,
    /// Scenario grid
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Worker threads, 0 = all cores; outputs do not depend on it
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Published sizes: unit 1e5, in-control test sets of 1e8, default trainer
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Compare the limit rule against itself instead of trained models
    #[arg(long, global = true)]
    pub baseline_only: bool,
    /// Critical-error tables instead of the full grid
    #[arg(long, global = true)]
    pub critical: bool,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Tuples per position mask in shifted testing sets
    #[arg(long, global = true)]
    pub replicates: Option<u64>,
    /// In-control testing set size
    #[arg(long, global = true)]
    pub in_control: Option<u64>,
    /// Training epochs
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Dataset file format
    #[arg(long, global = true, value_enum)]
    pub format: Option<DatasetFormat>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_list<T: std::str::FromStr + Clone>(s: &str, all: &[T], what: &str) -> Result<Vec<T>, CliError> {
    if s.trim() == "all" {
        return Ok(all.to_vec());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("--{what}: cannot parse {x:?}")))
        })
        .collect()
}

impl RunConfig {
    fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        self.unit = PAPER_UNIT;
        self.eval.replicates_per_pattern = qcnn_core::datasets::DEFAULT_REPLICATES;
        self.eval.in_control_count = PAPER_IN_CONTROL;
        self.trainer = TrainerConfig::default();
    }

    /// Builds the configuration from defaults, an optional file and flags.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seed_in_file = false;
        if let Some(path) = &flags.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if file.get("paper_scale") == Some(&Value::Bool(true)) {
                cfg.apply_paper_scale();
            }
            seed_in_file = file.get("seed").is_some();
            let mut base = serde_json::to_value(&cfg).expect("config serializes");
            merge(&mut base, file);
            cfg = serde_json::from_value(base).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        if flags.paper_scale {
            cfg.apply_paper_scale();
        }
        cfg.seed = match flags.seed {
            Some(s) => s,
            None if seed_in_file => cfg.seed,
            None => master_seed_from_env(cfg.seed).map_err(|e| CliError::Config(e.to_string()))?,
        };
        if let Some(s) = &flags.n {
            cfg.n = parse_list(s, &[1, 2, 3, 4], "n")?;
        }
        if let Some(s) = &flags.a {
            cfg.a = parse_list(s, &MIX_RATIOS, "a")?;
        }
        if let Some(u) = flags.unit {
            cfg.unit = u;
        }
        if let Some(g) = &flags.grid {
            cfg.grid = g.clone();
        }
        if let Some(w) = flags.workers {
            cfg.workers = w;
        }
        if let Some(o) = &flags.out {
            cfg.out = o.clone();
        }
        if let Some(r) = flags.replicates {
            cfg.eval.replicates_per_pattern = r;
        }
        if let Some(c) = flags.in_control {
            cfg.eval.in_control_count = c;
        }
        if let Some(e) = flags.epochs {
            cfg.trainer.epochs = e;
        }
        if let Some(f) = flags.format {
            cfg.format = f;
        }
        cfg.baseline_only |= flags.baseline_only;
        cfg.critical |= flags.critical;
        cfg.trainer.workers = effective_workers(cfg.workers);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: qcnn_core::Error| CliError::Config(e.to_string());
        if self.a.is_empty() || self.n.is_empty() {
            return Err(CliError::Config("a and n lists must not be empty".into()));
        }
        for &n in &self.n {
            if !(1..=MAX_N).contains(&n) {
                return Err(CliError::Config(format!("n = {n} not in 1..={MAX_N}")));
            }
        }
        for &a in &self.a {
            if !MIX_RATIOS.contains(&a) {
                return Err(CliError::Config(format!("a = {a} not in {MIX_RATIOS:?}")));
            }
        }
        for (a, n) in self.models() {
            TrainingSetSpec::new(a, n, self.unit).composition().map_err(cfg)?;
        }
        self.grid_axes()?;
        self.trainer.validate().map_err(cfg)?;
        self.eval.validate().map_err(cfg)?;
        self.critical_errors.validate().map_err(cfg)?;
        if self.critical && self.n.iter().all(|&n| n < 2) {
            return Err(CliError::Config("critical-error tables need some n >= 2".into()));
        }
        Ok(())
    }

    pub fn grid_axes(&self) -> Result<GridAxes, CliError> {
        GridAxes::parse(&self.grid).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    /// `(a, n)` pairs, n-major, in the order given.
    pub fn models(&self) -> Vec<(u32, usize)> {
        let mut a = self.a.clone();
        let mut n = self.n.clone();
        a.sort_unstable();
        a.dedup();
        n.sort_unstable();
        n.dedup();
        n.iter().flat_map(|&n| a.iter().map(move |&a| (a, n))).collect()
    }

    /// Random stream for one purpose and model.
    pub fn stream(&self, purpose: Purpose, a: u32, n: usize) -> RngState {
        RngState::new(self.seed)
            .derive_substream(purpose as u64)
            .derive_substream(n as u64 * 100 + a as u64)
    }

    pub fn training_spec(&self, a: u32, n: usize) -> TrainingSetSpec {
        TrainingSetSpec::new(a, n, self.unit)
    }

    pub fn dir(&self, sub: &str) -> PathBuf {
        self.out.join(sub)
    }

    pub fn model_path(&self, a: u32, n: usize) -> PathBuf {
        model_path(&self.out, a, n)
    }
}

/// 0 means every available core.
pub fn effective_workers(w: usize) -> usize {
    if w == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        w
    }
}

pub fn model_path(out: &Path, a: u32, n: usize) -> PathBuf {
    out.join("models").join(format!("qcnn_a{a}_n{n}.qcnn"))
}

#[derive(Clone, Copy, Debug)]
pub enum Purpose {
    TrainingData = 1,
    TrainerSeed = 2,
    FalseRejection = 3,
    Compare = 4,
    Critical = 5,
}
