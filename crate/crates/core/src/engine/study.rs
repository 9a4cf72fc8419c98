//! Repeated experiments with an optional bifurcation into an intervention
//! branch and an untouched control branch.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    ExperimentConfig, ExperimentState, InterventionSpec, Scorer, Specimen, TraceRecord, DEFAULT_INTERVENTION_POINTS,
};
use crate::error::{Error, Result};
use crate::rng::replicate_seed;

pub const DEFAULT_BIFURCATION: usize = 20;
/// BO steps after an intervention within which release is checked.
pub const RELEASE_HORIZON: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub configs: Vec<ExperimentConfig>,
    pub reps: usize,
    /// Per-rep seeds derive from this; each config's own seed is ignored.
    pub master_seed: u64,
    pub bifurcate_at: Option<usize>,
    pub intervention: InterventionSpec,
    pub n_points: usize,
    pub horizon: usize,
}

impl StudyConfig {
    pub fn new(configs: Vec<ExperimentConfig>, reps: usize, master_seed: u64, intervention: InterventionSpec) -> Self {
        Self {
            configs,
            reps,
            master_seed,
            bifurcate_at: Some(DEFAULT_BIFURCATION),
            intervention,
            n_points: DEFAULT_INTERVENTION_POINTS,
            horizon: RELEASE_HORIZON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("a study needs at least one rep".into()));
        }
        if self.configs.is_empty() {
            return Err(Error::Config("a study needs at least one config".into()));
        }
        if self.bifurcate_at.is_some() && (self.n_points == 0 || self.horizon == 0) {
            return Err(Error::Config("intervention points and horizon must be positive".into()));
        }
        Ok(())
    }

    /// The experiment config actually run for `(config, rep)`.
    pub fn rep_config(&self, config: usize, rep: usize) -> ExperimentConfig {
        let mut c = self.configs[config].clone();
        c.master_seed = replicate_seed(self.master_seed, config, rep);
        c
    }

    /// Every `(config, rep)` pair in report order.
    pub fn jobs(&self) -> Vec<(usize, usize)> {
        (0..self.configs.len()).flat_map(|c| (0..self.reps).map(move |r| (c, r))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Intervention applied at the bifurcation.
    Intervention,
    /// Continued under BO only.
    Control,
    /// No bifurcation: one run to the budget.
    Single,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Intervention => "intervention",
            Branch::Control => "control",
            Branch::Single => "single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_sigma: f64,
    pub sigma_of_sigma: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRun {
    pub branch: Branch,
    pub released: bool,
    /// Learning-curve steps completed by the end of the branch.
    pub steps: usize,
    pub trace: Vec<TraceRecord>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRun {
    pub config: usize,
    pub rep: usize,
    pub seed: u64,
    pub stagnant_at_bifurcation: bool,
    pub branches: Vec<BranchRun>,
}

fn curve_points(state: &ExperimentState) -> Vec<CurvePoint> {
    state
        .curve()
        .iter()
        .map(|c| CurvePoint { step: c.step, mean_sigma: c.mean_sigma, sigma_of_sigma: c.sigma_of_sigma, mae: c.mae })
        .collect()
}

fn branch_run(branch: Branch, state: &ExperimentState, released: bool) -> BranchRun {
    BranchRun { branch, released, steps: state.steps_completed(), trace: state.trace().to_vec(), curve: curve_points(state) }
}

/// Run one repetition.
///
/// With a bifurcation at step `b`, the run proceeds to `b` learning-curve
/// steps and is then cloned. The intervention branch injects `n_points`
/// intervention measurements and takes `horizon` BO steps; the control branch
/// takes `n_points + horizon` BO steps. A branch counts as released when the
/// run was stagnant at the bifurcation and the detector is off after any of
/// the last `horizon` steps.
pub fn run_rep(
    specimen: &Arc<Specimen>,
    study: &StudyConfig,
    config: usize,
    rep: usize,
    scorer: &dyn Scorer,
) -> Result<RepRun> {
    let cfg = study.rep_config(config, rep);
    let seed = cfg.master_seed;
    let mut state = ExperimentState::init(specimen.clone(), cfg)?;
    let Some(b) = study.bifurcate_at else {
        while state.status() == super::Status::Running {
            state.step_with(scorer)?;
        }
        let stagnant = state.is_stagnant();
        return Ok(RepRun {
            config,
            rep,
            seed,
            stagnant_at_bifurcation: stagnant,
            branches: alloc::vec![branch_run(Branch::Single, &state, false)],
        });
    };
    let c = state.config();
    let needed = c.n_seed + b + study.n_points + study.horizon;
    if needed > c.budget {
        return Err(Error::Config(format!(
            "budget {} is below the {needed} measurements the bifurcation protocol needs",
            c.budget
        )));
    }
    for _ in 0..b {
        state.step_with(scorer)?;
    }
    let stagnant = state.is_stagnant();

    let mut treated = state.clone();
    treated.apply_intervention(&study.intervention, study.n_points)?;
    let mut treated_free = false;
    for _ in 0..study.horizon {
        treated.step_with(scorer)?;
        treated_free |= !treated.is_stagnant();
    }

    let mut control = state;
    let mut control_free = false;
    for k in 0..study.n_points + study.horizon {
        control.step_with(scorer)?;
        if k >= study.n_points {
            control_free |= !control.is_stagnant();
        }
    }
    Ok(RepRun {
        config,
        rep,
        seed,
        stagnant_at_bifurcation: stagnant,
        branches: alloc::vec![
            branch_run(Branch::Intervention, &treated, stagnant && treated_free),
            branch_run(Branch::Control, &control, stagnant && control_free),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub config: usize,
    pub rep: usize,
    pub branch: Branch,
    pub stagnant_at_bifurcation: bool,
    pub released: bool,
    pub steps: usize,
}

/// Across-rep mean and sample variance of one curve column at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, var }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStat {
    pub step: usize,
    pub mean_sigma: Moments,
    pub sigma_of_sigma: Moments,
    pub mae: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub branch: Branch,
    pub released: usize,
    /// `released / stagnant`, undefined when nothing stagnated.
    pub release_rate: Option<f64>,
    pub curve: Vec<CurveStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub index: usize,
    pub config: ExperimentConfig,
    pub reps_completed: usize,
    pub failures: Vec<RepFailure>,
    pub stagnant: usize,
    /// `stagnant / reps_completed`, undefined when no rep completed.
    pub stagnation_rate: Option<f64>,
    pub branches: Vec<BranchSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: StudyConfig,
    pub configs: Vec<ConfigSummary>,
    pub runs: Vec<RepRun>,
    pub outcomes: Vec<RepOutcome>,
}

/// Reduce per-rep results. Input order does not matter: results are sorted by
/// `(config, rep)` first.
pub fn aggregate(study: &StudyConfig, mut results: Vec<(usize, usize, Result<RepRun>)>) -> StudyReport {
    results.sort_by_key(|(c, r, _)| (*c, *r));
    let mut runs = Vec::new();
    let mut failures: Vec<Vec<RepFailure>> = alloc::vec![Vec::new(); study.configs.len()];
    for (c, rep, res) in results {
        match res {
            Ok(run) => runs.push(run),
            Err(e) => failures[c].push(RepFailure { rep, error: e.to_string() }),
        }
    }
    let outcomes: Vec<RepOutcome> = runs
        .iter()
        .flat_map(|run| {
            run.branches.iter().map(move |b| RepOutcome {
                config: run.config,
                rep: run.rep,
                branch: b.branch,
                stagnant_at_bifurcation: run.stagnant_at_bifurcation,
                released: b.released,
                steps: b.steps,
            })
        })
        .collect();

    let configs = study
        .configs
        .iter()
        .enumerate()
        .map(|(index, config)| {
            let mine: Vec<&RepRun> = runs.iter().filter(|r| r.config == index).collect();
            let stagnant = mine.iter().filter(|r| r.stagnant_at_bifurcation).count();
            let mut kinds: Vec<Branch> = mine.iter().flat_map(|r| r.branches.iter().map(|b| b.branch)).collect();
            kinds.sort();
            kinds.dedup();
            let branches = kinds
                .into_iter()
                .map(|kind| {
                    let runs: Vec<&BranchRun> =
                        mine.iter().flat_map(|r| r.branches.iter().filter(move |b| b.branch == kind)).collect();
                    let released = runs.iter().filter(|b| b.released).count();
                    let len = runs.iter().map(|b| b.curve.len()).min().unwrap_or(0);
                    let curve = (0..len)
                        .map(|k| {
                            let col = |f: fn(&CurvePoint) -> f64| -> Vec<f64> { runs.iter().map(|b| f(&b.curve[k])).collect() };
                            CurveStat {
                                step: runs[0].curve[k].step,
                                mean_sigma: Moments::of(&col(|p| p.mean_sigma)),
                                sigma_of_sigma: Moments::of(&col(|p| p.sigma_of_sigma)),
                                mae: Moments::of(&col(|p| p.mae)),
                            }
                        })
                        .collect();
                    BranchSummary {
                        branch: kind,
                        released,
                        release_rate: (stagnant > 0).then(|| released as f64 / stagnant as f64),
                        curve,
                    }
                })
                .collect();
            ConfigSummary {
                index,
                config: config.clone(),
                reps_completed: mine.len(),
                failures: core::mem::take(&mut failures[index]),
                stagnant,
                stagnation_rate: (!mine.is_empty()).then(|| stagnant as f64 / mine.len() as f64),
                branches,
            }
        })
        .collect();
    StudyReport { study: study.clone(), configs, runs, outcomes }
}

/// Run every rep in order on the calling thread.
pub fn run_study(specimen: &Arc<Specimen>, study: &StudyConfig, scorer: &dyn Scorer) -> Result<StudyReport> {
    study.validate()?;
    let results = study
        .jobs()
        .into_iter()
        .map(|(c, r)| (c, r, run_rep(specimen, study, c, r, scorer)))
        .collect();
    Ok(aggregate(study, results))
}
