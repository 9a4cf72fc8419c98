//! CSV and JSON writers for single runs and batch studies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aesim_core::engine::study::{
    aggregate, run_rep, BranchRun, CurvePoint, Moments, StudyConfig, StudyReport,
};
use aesim_core::engine::{CurveEntry, ExperimentConfig, Scorer, Source, Specimen, TraceRecord};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{io_err, LabResult};

pub const CURVE_COLUMNS: [&str; 4] = ["step", "mean_sigma", "sigma_of_sigma", "mae"];
pub const OUTCOME_COLUMNS: [&str; 5] = ["rep", "branch", "stagnant_at_bifurcation", "released", "steps"];
pub const TRACE_COLUMNS: [&str; 9] = ["step", "index", "row", "col", "z1", "z2", "value", "pixel", "source"];
pub const SUMMARY_VERSION: u32 = 1;

pub fn source_name(s: Source) -> &'static str {
    match s {
        Source::Seed => "seed",
        Source::Bo => "bo",
        Source::Intervention => "intervention",
    }
}

fn writer(path: &Path) -> LabResult<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> LabResult<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_COLUMNS)?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            r.index.to_string(),
            r.row.to_string(),
            r.col.to_string(),
            r.z[0].to_string(),
            r.z[1].to_string(),
            r.value.to_string(),
            r.pixel.to_string(),
            source_name(r.source).to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

fn write_points(path: &Path, points: impl IntoIterator<Item = CurvePoint>) -> LabResult<()> {
    let mut w = writer(path)?;
    w.write_record(CURVE_COLUMNS)?;
    for p in points {
        w.write_record([p.step.to_string(), p.mean_sigma.to_string(), p.sigma_of_sigma.to_string(), p.mae.to_string()])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_curve_csv(path: &Path, curve: &[CurveEntry]) -> LabResult<()> {
    write_points(
        path,
        curve.iter().map(|c| CurvePoint { step: c.step, mean_sigma: c.mean_sigma, sigma_of_sigma: c.sigma_of_sigma, mae: c.mae }),
    )
}

/// Short name such as `gd_ei` used for per-config report directories.
pub fn config_label(c: &ExperimentConfig) -> String {
    let seed = serde_json::to_value(c.seed_model).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    let acq = serde_json::to_value(c.acquisition.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    format!("{seed}_{acq}")
}

pub fn config_dir_name(index: usize, c: &ExperimentConfig) -> String {
    format!("config_{index:02}_{}", config_label(c))
}

/// Run every `(config, rep)` job, in parallel when `threads` allows, and
/// aggregate. The report does not depend on the thread count.
pub fn run_batch(
    specimen: &Arc<Specimen>,
    study: &StudyConfig,
    scorer: &(dyn Scorer + Sync),
    threads: Option<usize>,
) -> LabResult<StudyReport> {
    study.validate()?;
    let jobs = study.jobs();
    let work = || -> Vec<_> {
        jobs.par_iter().map(|&(c, r)| (c, r, run_rep(specimen, study, c, r, scorer))).collect()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| aesim_core::Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(aggregate(study, results))
}

fn moments_points(curve: &[aesim_core::engine::study::CurveStat], pick: fn(&Moments) -> f64) -> Vec<CurvePoint> {
    curve
        .iter()
        .map(|s| CurvePoint { step: s.step, mean_sigma: pick(&s.mean_sigma), sigma_of_sigma: pick(&s.sigma_of_sigma), mae: pick(&s.mae) })
        .collect()
}

fn trace_file(dir: &Path, rep: usize, b: &BranchRun) -> PathBuf {
    dir.join(format!("rep_{rep:03}_{}.csv", b.branch.as_str()))
}

/// Write a study report directory:
///
/// - `summary.json`: rates, config echo, per-rep seeds
/// - `config_NN_<label>/curves_<branch>.csv` (across-rep means) and
///   `curves_<branch>_var.csv` (across-rep sample variances)
/// - `config_NN_<label>/outcomes.csv`
/// - `config_NN_<label>/traces/rep_RRR_<branch>.csv`
pub fn write_study_report(dir: &Path, report: &StudyReport) -> LabResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut configs = Vec::new();
    for c in &report.configs {
        let cdir = dir.join(config_dir_name(c.index, &c.config));
        let tdir = cdir.join("traces");
        fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
        for b in &c.branches {
            let name = b.branch.as_str();
            write_points(&cdir.join(format!("curves_{name}.csv")), moments_points(&b.curve, |m| m.mean))?;
            write_points(&cdir.join(format!("curves_{name}_var.csv")), moments_points(&b.curve, |m| m.var))?;
        }
        let path = cdir.join("outcomes.csv");
        let mut w = writer(&path)?;
        w.write_record(OUTCOME_COLUMNS)?;
        for o in report.outcomes.iter().filter(|o| o.config == c.index) {
            w.write_record([
                o.rep.to_string(),
                o.branch.as_str().to_string(),
                o.stagnant_at_bifurcation.to_string(),
                o.released.to_string(),
                o.steps.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;
        for run in report.runs.iter().filter(|r| r.config == c.index) {
            for b in &run.branches {
                write_trace_csv(&trace_file(&tdir, run.rep, b), &b.trace)?;
            }
        }
        let release: serde_json::Map<String, serde_json::Value> = c
            .branches
            .iter()
            .map(|b| (b.branch.as_str().to_string(), json!({ "released": b.released, "release_rate": b.release_rate })))
            .collect();
        configs.push(json!({
            "index": c.index,
            "label": config_label(&c.config),
            "directory": config_dir_name(c.index, &c.config),
            "config": c.config,
            "reps_completed": c.reps_completed,
            "failures": c.failures,
            "stagnant": c.stagnant,
            "stagnation_rate": c.stagnation_rate,
            "branches": release,
        }));
    }
    let seeds: Vec<_> = report.runs.iter().map(|r| json!({ "config": r.config, "rep": r.rep, "seed": r.seed })).collect();
    let s = &report.study;
    let summary = json!({
        "version": SUMMARY_VERSION,
        "master_seed": s.master_seed,
        "reps": s.reps,
        "bifurcate_at": s.bifurcate_at,
        "n_points": s.n_points,
        "horizon": s.horizon,
        "intervention": s.intervention,
        "runs": report.runs.len(),
        "branch_outcomes": report.outcomes.len(),
        "configs": configs,
        "seeds": seeds,
    });
    let path = dir.join("summary.json");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n").map_err(io_err(&path))
}
