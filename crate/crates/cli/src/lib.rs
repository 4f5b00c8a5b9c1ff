//! `qcnn` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! divergence.

pub mod config;
pub mod plot;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qcnn_core::cnn::{build_template_network, load_model, save_model, train, Provenance};
use qcnn_core::datasets::{build_training_set, write_binary, write_csv, TrainingComposition};
use qcnn_core::evaluation::{
    compare, critical_error_report, ks_uniform, matched_limit, monotonicity_scan, read_eval_csv, sign_summary,
    write_critical_csv, write_eval_csv, Classifier, CriticalModel, EvalRow, MatchedLimit, McEstimate,
    MonotonicityReport, SignSummary,
};
use qcnn_core::numerics::RngState;
use qcnn_core::{reference, with_workers, StatClassifier, StatQcFunction, TrainedClassifier};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{effective_workers, DatasetFormat, Flags, Purpose, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Divergence(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Divergence(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<qcnn_core::Error> for CliError {
    fn from(e: qcnn_core::Error) -> Self {
        match e {
            qcnn_core::Error::Config(_) => CliError::Config(e.to_string()),
            qcnn_core::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "qcnn", version, about = "Simulate QC data, train CNN classifiers and compare them with the limit rule")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write training sets and a manifest to OUT/datasets
    Simulate,
    /// Train one model per (a, n) into OUT/models
    Train,
    /// Measure false rejection and matched limits into OUT/eval
    Eval,
    /// Rejection-probability tables into OUT/compare
    Compare,
    /// Sign counts, ordering checks and calibration summary into OUT/report
    Report,
    /// SVG plots of the comparison tables into OUT/plots
    Plot,
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qcnn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    let workers = effective_workers(cfg.workers);
    with_workers(workers, || match cli.command {
        Command::Simulate => simulate(&cfg, workers),
        Command::Train => train_models(&cfg, workers),
        Command::Eval => eval(&cfg),
        Command::Compare => compare_cmd(&cfg),
        Command::Report => report(&cfg),
        Command::Plot => plot_cmd(&cfg),
    })
}

#[derive(Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_entry(out: &Path, path: &Path) -> Result<FileEntry, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(FileEntry {
        path: path.strip_prefix(out).unwrap_or(path).display().to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: RunConfig,
    entries: T,
    files: Vec<FileEntry>,
}

/// Writes `DIR/manifest.json`. The output directory itself and the worker
/// count are left out so reruns elsewhere produce the same bytes.
fn write_manifest<T: Serialize>(cfg: &RunConfig, dir: &Path, command: &str, entries: T, files: Vec<FileEntry>) -> Result<PathBuf, CliError> {
    let mut config = cfg.clone();
    config.out = PathBuf::from(".");
    config.workers = 0;
    config.trainer.workers = 1;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        entries,
        files,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

#[derive(Serialize)]
struct DatasetEntry {
    a: u32,
    n: usize,
    file: String,
    records: u64,
    composition: TrainingComposition,
}

fn simulate(cfg: &RunConfig, workers: usize) -> Result<(), CliError> {
    let dir = cfg.dir("datasets");
    create_dir(&dir)?;
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for (a, n) in cfg.models() {
        let spec = cfg.training_spec(a, n);
        let composition = spec.composition()?;
        let records = build_training_set(&spec, &cfg.stream(Purpose::TrainingData, a, n))?.collect_records::<f64>(workers);
        let ext = match cfg.format {
            DatasetFormat::Csv => "csv",
            DatasetFormat::Binary => "qcds",
        };
        let path = dir.join(format!("train_a{a}_n{n}.{ext}"));
        let mut w = create_file(&path)?;
        let count = match cfg.format {
            DatasetFormat::Csv => write_csv(&mut w, &records)?,
            DatasetFormat::Binary => write_binary(&mut w, n, &records)?,
        };
        w.flush().map_err(io_err(&path))?;
        eprintln!(
            "T_{a}({n}): {} in control + {} scale shift + {} location shift = {count} records",
            composition.in_control, composition.scale_shift, composition.location_shift
        );
        files.push(file_entry(&cfg.out, &path)?);
        entries.push(DatasetEntry {
            a,
            n,
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            records: count,
            composition,
        });
    }
    let m = write_manifest(cfg, &dir, "simulate", entries, files)?;
    println!("{}", m.display());
    Ok(())
}

#[derive(Serialize)]
struct ModelEntry {
    a: u32,
    n: usize,
    file: String,
    checksum: String,
    p_fr: f64,
    p_fr_sample_size: u64,
    l: f64,
    best_epoch: usize,
    init_attempts: u64,
}

fn train_models(cfg: &RunConfig, workers: usize) -> Result<(), CliError> {
    let dir = cfg.dir("models");
    create_dir(&dir)?;
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for (a, n) in cfg.models() {
        let spec = cfg.training_spec(a, n);
        let data = build_training_set(&spec, &cfg.stream(Purpose::TrainingData, a, n))?.collect_records::<f64>(workers);
        let net = build_template_network(n, None)?;
        let mut trainer = cfg.trainer.clone();
        trainer.seed = cfg.stream(Purpose::TrainerSeed, a, n).next_u64();
        trainer.workers = workers;
        eprintln!("training n = {n}, a = {a} on {} records", data.len());
        let (params, report) = train(&net, &data, &trainer)?;
        let model = TrainedClassifier { spec: net, params };
        let m = matched_limit(&model, cfg.eval.in_control_count, &cfg.stream(Purpose::FalseRejection, a, n))?;
        eprintln!(
            "  loss {:.5}, best epoch {}, P_FR {:.6} on {} -> l = {:.6}",
            report.final_loss, report.best_epoch, m.p_fr, m.estimate.sample_size, m.l
        );
        let path = cfg.model_path(a, n);
        let entry = ModelEntry {
            a,
            n,
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            checksum: report.checksum.clone(),
            p_fr: m.p_fr,
            p_fr_sample_size: m.estimate.sample_size,
            l: m.l,
            best_epoch: report.best_epoch,
            init_attempts: report.init_attempts,
        };
        trainer.workers = 1;
        let provenance = Provenance {
            seed: cfg.seed,
            a: Some(a),
            unit: Some(cfg.unit),
            dataset_records: Some(data.len() as u64),
            trainer: Some(trainer),
            report: Some(report),
            p_fr: Some(m.p_fr),
            p_fr_sample_size: Some(m.estimate.sample_size),
        };
        save_model(&path, &model.spec, &model.params, provenance)?;
        files.push(file_entry(&cfg.out, &path)?);
        entries.push(entry);
    }
    let m = write_manifest(cfg, &dir, "train", entries, files)?;
    println!("{}", m.display());
    Ok(())
}

/// A classifier, the limit it is compared against and how that limit was found.
struct Subject {
    a: u32,
    n: usize,
    classifier: Box<dyn Classifier<f64>>,
    matched: MatchedLimit,
}

/// The limit rule at a reference operating point. Critical-error runs use
/// the limits printed with the critical tables.
fn baseline_subject(a: u32, n: usize, critical: bool) -> Result<Subject, CliError> {
    let critical_row = reference::CRITICAL_SHIFT
        .iter()
        .find(|r| critical && r.n == n && r.a == a)
        .map(|r| (r.p_fr, r.l));
    let (p_fr, l) = critical_row
        .or_else(|| reference::limit_for(n, a))
        .ok_or_else(|| CliError::Data(format!("no reference false-rejection rate for n = {n}, a = {a}")))?;
    Ok(Subject {
        a,
        n,
        classifier: Box::new(StatClassifier {
            n,
            rule: StatQcFunction::new(l)?,
        }),
        matched: MatchedLimit {
            estimate: McEstimate {
                rejections: 0,
                sample_size: 0,
            },
            p_fr,
            l,
        },
    })
}

fn check_models_exist(cfg: &RunConfig, pairs: &[(u32, usize)]) -> Result<(), CliError> {
    for &(a, n) in pairs {
        let p = cfg.model_path(a, n);
        if !p.is_file() {
            return Err(CliError::Data(format!(
                "missing model {} (run `qcnn train --a {a} --n {n}` first)",
                p.display()
            )));
        }
    }
    Ok(())
}

/// Loads the classifiers and matches each to a limit. With
/// `baseline_only`, the limit rule at the reference rate stands in for the
/// model.
fn subjects(cfg: &RunConfig, pairs: &[(u32, usize)]) -> Result<Vec<Subject>, CliError> {
    if !cfg.baseline_only {
        check_models_exist(cfg, pairs)?;
    }
    pairs
        .iter()
        .map(|&(a, n)| {
            if cfg.baseline_only {
                return baseline_subject(a, n, cfg.critical);
            }
            let path = cfg.model_path(a, n);
            let (spec, params) = load_model(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            if spec.n() != n {
                return Err(CliError::Data(format!("{}: model takes n = {}", path.display(), spec.n())));
            }
            let model = TrainedClassifier { spec, params };
            let matched = matched_limit(&model, cfg.eval.in_control_count, &cfg.stream(Purpose::FalseRejection, a, n))?;
            Ok(Subject {
                a,
                n,
                classifier: Box::new(model),
                matched,
            })
        })
        .collect()
}

fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let pairs = cfg.models();
    let subjects = subjects(cfg, &pairs)?;
    let dir = cfg.dir("eval");
    create_dir(&dir)?;
    let path = dir.join("limits.csv");
    let mut w = create_file(&path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "a,n,N,p_fr,l")?;
        for s in &subjects {
            writeln!(w, "{},{},{},{:.6},{:.6}", s.a, s.n, s.matched.estimate.sample_size, s.matched.p_fr, s.matched.l)?;
            println!(
                "n = {}, a = {:>2}: P_FR = {:.6} (N = {}), l = {:.6}",
                s.n, s.a, s.matched.p_fr, s.matched.estimate.sample_size, s.matched.l
            );
        }
        w.flush()
    };
    write().map_err(io_err(&path))?;
    let files = vec![file_entry(&cfg.out, &path)?];
    write_manifest(cfg, &dir, "eval", (), files)?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryEntry {
    a: u32,
    #[serde(flatten)]
    summary: SignSummary,
}

fn write_summary_csv(path: &Path, rows: &[SummaryEntry]) -> Result<(), CliError> {
    let mut w = create_file(path)?;
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "a,n,k,positive,negative,zero,significant_positive,significant_negative")?;
        for r in rows {
            let s = &r.summary;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.a, s.n, s.k, s.positive, s.negative, s.zero, s.significant_positive, s.significant_negative
            )?;
        }
        w.flush()
    };
    go().map_err(io_err(path))
}

#[derive(Serialize)]
struct LimitEntry {
    a: u32,
    n: usize,
    p_fr: f64,
    p_fr_sample_size: u64,
    l: f64,
}

fn compare_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let grid = cfg.grid_axes()?;
    let pairs: Vec<(u32, usize)> = cfg.models().into_iter().filter(|&(_, n)| !cfg.critical || n >= 2).collect();
    let subjects = subjects(cfg, &pairs)?;
    let dir = cfg.dir("compare");
    let limits: Vec<LimitEntry> = subjects
        .iter()
        .map(|s| LimitEntry {
            a: s.a,
            n: s.n,
            p_fr: s.matched.p_fr,
            p_fr_sample_size: s.matched.estimate.sample_size,
            l: s.matched.l,
        })
        .collect();
    if cfg.critical {
        let models: Vec<CriticalModel<f64>> = subjects
            .iter()
            .map(|s| CriticalModel {
                a: s.a,
                classifier: s.classifier.as_ref(),
                matched: s.matched,
            })
            .collect();
        let rng = RngState::new(cfg.seed).derive_substream(Purpose::Critical as u64);
        let rows = critical_error_report(&models, &cfg.critical_errors, &cfg.eval, &rng)?;
        create_dir(&dir)?;
        let path = dir.join("critical.csv");
        let mut w = create_file(&path)?;
        write_critical_csv(&mut w, &rows)?;
        w.flush().map_err(io_err(&path))?;
        println!("  n  k   a  P_FR      l         dP(mu_c)   dP(sigma_c)");
        for r in &rows {
            println!(
                "{:>3}{:>3}{:>4}  {:.6}  {:.6}  {:>+9.6}  {:>+9.6}",
                r.n, r.k, r.a, r.p_fr, r.l, r.shift.delta_p, r.spread.delta_p
            );
        }
        let files = vec![file_entry(&cfg.out, &path)?];
        write_manifest(cfg, &dir, "compare --critical", limits, files)?;
        return Ok(());
    }
    let mut tables = Vec::new();
    for s in &subjects {
        eprintln!("comparing n = {}, a = {} at l = {:.6}", s.n, s.a, s.matched.l);
        let rows = compare(s.a, s.classifier.as_ref(), s.matched.l, &grid, &cfg.eval, &cfg.stream(Purpose::Compare, s.a, s.n))?;
        tables.push((s.a, s.n, rows));
    }
    create_dir(&dir)?;
    let mut files = Vec::new();
    let mut summary = Vec::new();
    for (a, n, rows) in &tables {
        let path = dir.join(format!("compare_a{a}_n{n}.csv"));
        let mut w = create_file(&path)?;
        write_eval_csv(&mut w, rows)?;
        w.flush().map_err(io_err(&path))?;
        files.push(file_entry(&cfg.out, &path)?);
        summary.extend(sign_summary(rows).into_iter().map(|s| SummaryEntry { a: *a, summary: s }));
    }
    summary.sort_by_key(|s| (s.summary.n, s.summary.k, s.a));
    let path = dir.join("summary.csv");
    write_summary_csv(&path, &summary)?;
    files.push(file_entry(&cfg.out, &path)?);
    println!("  n  k   a   dP>0  dP<0  (p<0.01: >0 / <0)");
    for s in &summary {
        let x = &s.summary;
        println!(
            "{:>3}{:>3}{:>4}  {:>5} {:>5}   {:>5} / {}",
            x.n, x.k, s.a, x.positive, x.negative, x.significant_positive, x.significant_negative
        );
    }
    write_manifest(cfg, &dir, "compare", limits, files)?;
    Ok(())
}

/// All `compare_a*_n*.csv` tables under OUT/compare, in file-name order.
fn read_compare_tables(cfg: &RunConfig) -> Result<Vec<(PathBuf, Vec<EvalRow>)>, CliError> {
    let dir = cfg.dir("compare");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("compare_") && name.ends_with(".csv")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no comparison tables in {} (run `qcnn compare` first)", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let f = fs::File::open(&p).map_err(io_err(&p))?;
            let rows = read_eval_csv(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok((p, rows))
        })
        .collect()
}

#[derive(Serialize)]
struct Calibration {
    rows: usize,
    rows_with_p_value: usize,
    /// Rows within 4 standard errors of the closed form.
    within_4se: usize,
    ks_uniform: Option<f64>,
    significant_at_1pct: usize,
}

#[derive(Serialize)]
struct Report {
    tables: Vec<String>,
    sign_counts: Vec<SummaryEntry>,
    calibration: Calibration,
    monotonicity: MonotonicityReport,
}

fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let tables = read_compare_tables(cfg)?;
    let rows: Vec<EvalRow> = tables.iter().flat_map(|t| t.1.iter().copied()).collect();
    let mut sign_counts = Vec::new();
    for (_, t) in &tables {
        let a = t[0].a;
        sign_counts.extend(sign_summary(t).into_iter().map(|s| SummaryEntry { a, summary: s }));
    }
    sign_counts.sort_by_key(|s| (s.summary.n, s.summary.k, s.a));
    let p_values: Vec<f64> = rows.iter().filter_map(|r| r.p_value).collect();
    let mut within = 0;
    for r in &rows {
        // p_s went through six-decimal text; keep it off the boundaries.
        let mut r = *r;
        r.p_s = r.p_s.clamp(5e-7, 1.0 - 5e-7);
        within += usize::from(r.consistent_with_rule(4.0)?);
    }
    let calibration = Calibration {
        rows: rows.len(),
        rows_with_p_value: p_values.len(),
        within_4se: within,
        ks_uniform: ks_uniform(&p_values).ok(),
        significant_at_1pct: p_values.iter().filter(|&&p| p < 0.01).count(),
    };
    let monotonicity = monotonicity_scan(&rows);
    println!("{} rows from {} tables", rows.len(), tables.len());
    println!(
        "within 4 SE of the closed form: {}/{}; p < 0.01: {}/{}; KS vs uniform: {}",
        within,
        rows.len(),
        calibration.significant_at_1pct,
        p_values.len(),
        calibration.ks_uniform.map_or("n/a".into(), |d| format!("{d:.4}"))
    );
    println!(
        "ordering checks: {} pairs, {} flagged",
        monotonicity.pairs_checked,
        monotonicity.findings.len()
    );
    for f in monotonicity.findings.iter().take(20) {
        println!(
            "  item {} ({}): {:?} P = {:.6} vs {:?} P = {:.6}, tolerance {:.6}",
            f.item, f.description, f.lower, f.p_lower, f.higher, f.p_higher, f.tolerance
        );
    }
    let report = Report {
        tables: tables
            .iter()
            .map(|(p, _)| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        sign_counts,
        calibration,
        monotonicity,
    };
    let dir = cfg.dir("report");
    create_dir(&dir)?;
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    let spath = dir.join("summary.csv");
    write_summary_csv(&spath, &report.sign_counts)?;
    let files = vec![file_entry(&cfg.out, &path)?, file_entry(&cfg.out, &spath)?];
    write_manifest(cfg, &dir, "report", (), files)?;
    Ok(())
}

fn plot_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let tables = read_compare_tables(cfg)?;
    let rows: Vec<EvalRow> = tables.into_iter().flat_map(|t| t.1).collect();
    let charts = plot::charts_for(&rows)?;
    let dir = cfg.dir("plots");
    create_dir(&dir)?;
    let mut files = Vec::new();
    for (name, svg) in &charts {
        let path = dir.join(name);
        fs::write(&path, svg).map_err(io_err(&path))?;
        files.push(file_entry(&cfg.out, &path)?);
    }
    println!("{} plots in {}", charts.len(), dir.display());
    write_manifest(cfg, &dir, "plot", (), files)?;
    Ok(())
}
