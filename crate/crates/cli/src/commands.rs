//! The five subcommands. Every command echoes its resolved config into the
//! output directory first; timestamps go only to `run.log`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use fintact_core::autodiff::primitive_cases;
use fintact_core::datasets::{generate_dataset, DatasetManifest, MANIFEST_FILE};
use fintact_core::models::{Arch, Checkpoint, Head};
use fintact_core::scalar::Scalar;
use fintact_core::simgel::Simulator;
use fintact_core::trainer::{
    classification_csv, classification_table, evaluate_classification, evaluate_regression, regression_csv,
    regression_table, sort_rows_by_arch, train, ClassificationReport, FrameReader, MetricsReport, RegressionReport,
};
use fintact_core::Error;

use crate::config::{ExperimentConfig, CONFIG_FILE};
use crate::svg::regression_scatter;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TABLE: &str = "metrics.txt";
pub const SCATTER_FILE: &str = "scatter.svg";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const LOG_FILE: &str = "run.log";

/// Timestamped progress log, mirrored to stderr.
pub struct RunLog {
    file: File,
    quiet: bool,
}

impl RunLog {
    fn create(dir: &Path, quiet: bool) -> Result<Self, CliError> {
        let path = dir.join(LOG_FILE);
        let file = File::create(&path).map_err(|e| Error::Io { path, source: e })?;
        Ok(RunLog { file, quiet })
    }

    pub fn line(&mut self, msg: &str) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let _ = writeln!(self.file, "[{}.{:03}] {msg}", t.as_secs(), t.subsec_millis());
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }.into())
}

/// Creates `dir`, writes the resolved config and opens the log.
fn prepare(dir: &Path, cfg: &ExperimentConfig, quiet: bool) -> Result<RunLog, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    write(&dir.join(CONFIG_FILE), cfg.to_toml())?;
    RunLog::create(dir, quiet)
}

fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.dataset.path.join(MANIFEST_FILE)
}

fn reader(cfg: &ExperimentConfig) -> FrameReader {
    FrameReader { calibration: cfg.calibration.clone() }
}

pub fn simulate(cfg: &ExperimentConfig, quiet: bool) -> Result<DatasetManifest, CliError> {
    let out = &cfg.run.out;
    let mut log = prepare(out, cfg, quiet)?;
    let start = Instant::now();
    log.line(&format!(
        "generating {:?} dataset, n={} seed={} into {}",
        cfg.dataset.kind,
        cfg.dataset.n,
        cfg.dataset.seed,
        out.display()
    ));
    let manifest = generate_dataset(&cfg.generation(), &Simulator::default(), out)?;
    log.line(&format!("wrote {} images in {:.1?}", manifest.records.len(), start.elapsed()));
    Ok(manifest)
}

/// Writes table and CSV for a single model, returning the table text.
fn write_metrics(dir: &Path, name: &str, report: &MetricsReport) -> Result<String, CliError> {
    let (table, csv) = match report {
        MetricsReport::Classification(r) => (classification_table(&[(name, r)]), classification_csv(&[(name, r)])),
        MetricsReport::Regression(r) => (regression_table(&[(name, r)]), regression_csv(&[(name, r)])),
    };
    write(&dir.join(METRICS_TABLE), &table)?;
    write(&dir.join(METRICS_CSV), csv)?;
    Ok(table)
}

/// Evaluates `checkpoint` and, for regression, writes the scatter plot and
/// the per-sample predictions into `dir`.
fn evaluate_into<T: Scalar>(
    dir: &Path,
    checkpoint: &Checkpoint<T>,
    manifest: &DatasetManifest,
    cfg: &ExperimentConfig,
) -> Result<MetricsReport, CliError> {
    let split = cfg.split()?;
    match checkpoint.spec.head {
        Head::Classify4 => {
            Ok(MetricsReport::Classification(evaluate_classification(checkpoint, manifest, &reader(cfg), split)?))
        }
        Head::RegressPosForce => {
            let (report, pairs) = evaluate_regression(checkpoint, manifest, &reader(cfg), split)?;
            write(&dir.join(SCATTER_FILE), regression_scatter(&pairs))?;
            let mut csv = String::from("true_position_mm,true_force_n,pred_position_mm,pred_force_n\n");
            for ((tp, tf), (pp, pf)) in &pairs {
                csv.push_str(&format!("{tp:.6},{tf:.6},{pp:.6},{pf:.6}\n"));
            }
            write(&dir.join(PREDICTIONS_FILE), csv)?;
            Ok(MetricsReport::Regression(report))
        }
    }
}

fn train_one<T: Scalar>(
    dir: &Path,
    arch: Arch,
    manifest: &DatasetManifest,
    cfg: &ExperimentConfig,
    log: &mut dyn FnMut(&str),
) -> Result<MetricsReport, CliError> {
    let spec = cfg.spec_for(arch);
    let start = Instant::now();
    log(&format!("training {} on {} records", arch.display_name(), manifest.records.len()));
    let outcome = train::<T>(&spec, manifest, &reader(cfg), &cfg.train_config()?)?;
    for e in &outcome.history.epochs {
        log(&format!("{} epoch {} loss {:.5} val {:.5}", arch.key(), e.epoch, e.train_loss, e.val_metric));
    }
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    write(&dir.join(HISTORY_FILE), outcome.history.to_csv())?;
    let report = evaluate_into(dir, &outcome.checkpoint, manifest, cfg)?;
    log(&format!("{} done in {:.1?}, best epoch {}", arch.key(), start.elapsed(), outcome.best_epoch));
    Ok(report)
}

fn with_precision<R>(
    cfg: &ExperimentConfig,
    f32_run: impl FnOnce() -> Result<R, CliError>,
    f64_run: impl FnOnce() -> Result<R, CliError>,
) -> Result<R, CliError> {
    if cfg.run.precision == "f64" {
        f64_run()
    } else {
        f32_run()
    }
}

pub fn train_cmd(cfg: &ExperimentConfig, quiet: bool) -> Result<MetricsReport, CliError> {
    let out = &cfg.run.out;
    let mut log = prepare(out, cfg, quiet)?;
    let manifest = DatasetManifest::parse(&manifest_path(cfg))?;
    let mut sink = |m: &str| log.line(m);
    let report = if cfg.run.precision == "f64" {
        train_one::<f64>(out, cfg.model.arch, &manifest, cfg, &mut sink)?
    } else {
        train_one::<f32>(out, cfg.model.arch, &manifest, cfg, &mut sink)?
    };
    let table = write_metrics(out, cfg.model.arch.display_name(), &report)?;
    log.line(&format!("{} metrics:\n{table}", cfg.eval.split));
    Ok(report)
}

pub fn eval_cmd(cfg: &ExperimentConfig, quiet: bool) -> Result<(MetricsReport, String), CliError> {
    let out = &cfg.run.out;
    let mut log = prepare(out, cfg, quiet)?;
    let manifest = DatasetManifest::parse(&manifest_path(cfg))?;
    log.line(&format!(
        "evaluating {} on {} ({} split)",
        cfg.eval.checkpoint.display(),
        cfg.dataset.path.display(),
        cfg.eval.split
    ));
    let (report, arch) = with_precision(
        cfg,
        || {
            let ck = Checkpoint::<f32>::load(&cfg.eval.checkpoint)?;
            Ok((evaluate_into(out, &ck, &manifest, cfg)?, ck.spec.arch))
        },
        || {
            let ck = Checkpoint::<f64>::load(&cfg.eval.checkpoint)?;
            Ok((evaluate_into(out, &ck, &manifest, cfg)?, ck.spec.arch))
        },
    )?;
    let table = write_metrics(out, arch.display_name(), &report)?;
    log.line(&table);
    Ok((report, table))
}

/// Trains every listed architecture on the same data and seed and writes one
/// combined table in the fixed architecture order.
pub fn ablation_cmd(cfg: &ExperimentConfig, quiet: bool) -> Result<String, CliError> {
    let out = &cfg.run.out;
    let archs = &cfg.ablation.archs;
    for (i, a) in archs.iter().enumerate() {
        if archs[..i].contains(a) {
            return Err(CliError::Config(format!(
                "ablation lists {} twice; members need separate output directories",
                a.key()
            )));
        }
        if cfg.model.head == Head::RegressPosForce && !a.is_network() {
            return Err(CliError::Config(format!("{} cannot regress position and force", a.display_name())));
        }
    }
    let mut log = prepare(out, cfg, quiet)?;
    let manifest = DatasetManifest::parse(&manifest_path(cfg))?;
    let run = |arch: Arch, sink: &mut dyn FnMut(&str)| -> Result<MetricsReport, CliError> {
        let dir = out.join(arch.key());
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        if cfg.run.precision == "f64" {
            train_one::<f64>(&dir, arch, &manifest, cfg, sink)
        } else {
            train_one::<f32>(&dir, arch, &manifest, cfg, sink)
        }
    };
    let results: Vec<(Arch, Result<MetricsReport, CliError>)> = if cfg.run.parallel {
        let mut gathered = Vec::new();
        std::thread::scope(|s| {
            let handles: Vec<_> = archs
                .iter()
                .map(|&a| {
                    let run = &run;
                    s.spawn(move || {
                        let mut lines = Vec::new();
                        let r = run(a, &mut |m| lines.push(m.to_string()));
                        (a, r, lines)
                    })
                })
                .collect();
            for h in handles {
                gathered.push(h.join().expect("ablation worker panicked"));
            }
        });
        gathered
            .into_iter()
            .map(|(a, r, lines)| {
                for l in lines {
                    log.line(&l);
                }
                (a, r)
            })
            .collect()
    } else {
        archs.iter().map(|&a| (a, run(a, &mut |m| log.line(m)))).collect()
    };
    let mut rows = Vec::new();
    for (a, r) in results {
        rows.push((a, r?));
    }
    sort_rows_by_arch(&mut rows);
    let (table, csv) = match cfg.model.head {
        Head::Classify4 => {
            let named: Vec<(&str, &ClassificationReport)> = rows
                .iter()
                .map(|(a, r)| match r {
                    MetricsReport::Classification(c) => (a.display_name(), c),
                    _ => unreachable!("head checked"),
                })
                .collect();
            (classification_table(&named), classification_csv(&named))
        }
        Head::RegressPosForce => {
            let named: Vec<(&str, &RegressionReport)> = rows
                .iter()
                .map(|(a, r)| match r {
                    MetricsReport::Regression(c) => (a.display_name(), c),
                    _ => unreachable!("head checked"),
                })
                .collect();
            (regression_table(&named), regression_csv(&named))
        }
    };
    write(&out.join(METRICS_TABLE), &table)?;
    write(&out.join(METRICS_CSV), csv)?;
    log.line(&table);
    Ok(table)
}

/// Central-difference check of every tape primitive over the configured seeds.
pub fn grad_check_cmd(cfg: &ExperimentConfig, quiet: bool) -> Result<String, CliError> {
    let out = &cfg.run.out;
    let mut log = prepare(out, cfg, quiet)?;
    let g = &cfg.grad_check;
    let mut csv = String::from("primitive,seeds,checked,max_rel_error,pass\n");
    let mut table = format!("{:<24}{:>14}  result\n", "primitive", "max rel err");
    let mut failed = 0;
    for case in primitive_cases() {
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut pass = true;
        for seed in 0..g.seeds {
            let r = case.check(seed, g.eps, g.tol)?;
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
            pass &= r.pass;
        }
        failed += usize::from(!pass);
        csv.push_str(&format!("{},{},{checked},{worst:e},{pass}\n", case.name, g.seeds));
        table.push_str(&format!("{:<24}{:>14.3e}  {}\n", case.name, worst, if pass { "PASS" } else { "FAIL" }));
    }
    write(&out.join("grad_check.csv"), csv)?;
    write(&out.join(METRICS_TABLE), &table)?;
    log.line(&table);
    if failed > 0 {
        return Err(CliError::GradCheck(failed));
    }
    Ok(table)
}
