//! `aesim` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aesim_core::acquisition::{AcquisitionConfig, AcquisitionKind, Direction};
use aesim_core::dataset::{generate_synthetic_dataset, extract_patches, ScalarizerKind, SyntheticConfig};
use aesim_core::embedding::pca_embed;
use aesim_core::engine::study::StudyConfig;
use aesim_core::engine::{
    AcquisitionScorer, ExperimentConfig, ExperimentState, InterventionSpec, SeedModel, Status, SurrogateConfig,
    DEFAULT_PATCH_SIZE,
};
use aesim_core::sampling::{BaseKind, Region};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::container::{read_dataset, read_latent_csv, write_dataset, write_latent};
use crate::error::{io_err, LabError, LabResult};
use crate::report::{run_batch, write_curve_csv, write_study_report, write_trace_csv};
use crate::service::{serve, AppState, ServiceOptions};

#[derive(Parser, Debug)]
#[command(name = "aesim", version, about = "Simulated autonomous microscopy experiments with deep-kernel Bayesian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Compute PCA latents for a dataset, or attach latents from a CSV.
    Embed(EmbedArgs),
    /// Run one experiment and write its trace and learning curve.
    Run(RunArgs),
    /// Run a batch study and write a study report.
    Batch(BatchArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    domain_scale: f64,
    #[arg(long, default_value_t = 0.02)]
    loop_noise: f64,
    #[arg(long, default_value_t = 65)]
    n_bias: usize,
    /// Also store PCA latents for this patch size.
    #[arg(long)]
    embed: Option<usize>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// CSV with two columns (z1, z2), one row per patch in row-major patch order.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory; a synthetic dataset is generated when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Generator seed for the synthetic fallback.
    #[arg(long, default_value_t = 0)]
    dataset_seed: u64,
    /// Side length of the synthetic fallback image.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    #[arg(long, value_enum, default_value_t = ScalarizerArg::Area)]
    scalarizer: ScalarizerArg,
}

impl DataArgs {
    fn specimen(&self) -> LabResult<aesim_core::engine::Specimen> {
        let synth = SyntheticConfig { height: self.size, width: self.size, rng_seed: self.dataset_seed, ..Default::default() };
        crate::load_specimen(self.dataset.as_deref(), &synth, self.patch_size, self.scalarizer.into())
    }
}

#[derive(Args, Debug)]
struct LoopArgs {
    #[arg(long, default_value_t = 5)]
    n_seed: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    xi: f64,
    /// Search for the smallest scalarizer value instead of the largest.
    #[arg(long)]
    minimize: bool,
    #[arg(long, default_value_t = 200)]
    init_iters: usize,
    #[arg(long, default_value_t = 50)]
    retrain_iters: usize,
}

impl LoopArgs {
    fn config(&self, kind: AcquisitionKind, seed_model: SeedModel, scalarizer: ScalarizerKind, budget: usize) -> ExperimentConfig {
        let mut acquisition = AcquisitionConfig::new(kind);
        acquisition.beta = self.beta;
        acquisition.xi = self.xi;
        acquisition.direction = if self.minimize { Direction::Minimize } else { Direction::Maximize };
        ExperimentConfig {
            acquisition,
            seed_model,
            n_seed: self.n_seed,
            budget,
            scalarizer,
            surrogate: SurrogateConfig { init_iters: self.init_iters, retrain_iters: self.retrain_iters, ..Default::default() },
            master_seed: self.master_seed,
            ..Default::default()
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    loop_args: LoopArgs,
    #[arg(long, value_enum, default_value_t = AcqArg::Ei)]
    acq: AcqArg,
    #[arg(long, value_enum, default_value_t = SeedArg::Gd)]
    seed_model: SeedArg,
    /// BO steps after the seeds.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    /// Total measurements; defaults to n_seed + steps.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write the final state to this checkpoint file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting a new experiment.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BatchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    loop_args: LoopArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [SeedArg::Gd, SeedArg::Ud, SeedArg::Uls])]
    seed_models: Vec<SeedArg>,
    #[arg(long = "acq", value_enum, value_delimiter = ',', default_values_t = [AcqArg::Ei, AcqArg::Mu])]
    acqs: Vec<AcqArg>,
    #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 20)]
    bifurcate_at: usize,
    /// Run each rep to its budget without a bifurcation.
    #[arg(long)]
    no_bifurcation: bool,
    #[arg(long, value_enum, default_value_t = InterventionArg::Exclusion)]
    intervention: InterventionArg,
    /// Prioritizing region as z1_min,z1_max,z2_min,z2_max.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    region: Option<Vec<f64>>,
    #[arg(long)]
    exclusion_radius: Option<f64>,
    #[arg(long, value_enum, default_value_t = BaseArg::Ud)]
    exclusion_base: BaseArg,
    #[arg(long, default_value_t = 5)]
    n_points: usize,
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    /// Total measurements per run; defaults to what the protocol needs.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Hide simulator-only ground truth from clients.
    #[arg(long)]
    exam_mode: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AcqArg {
    Ei,
    Ucb,
    Mu,
}

impl From<AcqArg> for AcquisitionKind {
    fn from(a: AcqArg) -> Self {
        match a {
            AcqArg::Ei => AcquisitionKind::Ei,
            AcqArg::Ucb => AcquisitionKind::Ucb,
            AcqArg::Mu => AcquisitionKind::Mu,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SeedArg {
    Gd,
    Ud,
    Uls,
    Random,
}

impl From<SeedArg> for SeedModel {
    fn from(a: SeedArg) -> Self {
        match a {
            SeedArg::Gd => SeedModel::Gd,
            SeedArg::Ud => SeedModel::Ud,
            SeedArg::Uls => SeedModel::Uls,
            SeedArg::Random => SeedModel::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScalarizerArg {
    Area,
    Height,
    Imprint,
}

impl From<ScalarizerArg> for ScalarizerKind {
    fn from(a: ScalarizerArg) -> Self {
        match a {
            ScalarizerArg::Area => ScalarizerKind::Area,
            ScalarizerArg::Height => ScalarizerKind::Height,
            ScalarizerArg::Imprint => ScalarizerKind::Imprint,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InterventionArg {
    Exclusion,
    Prioritizing,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaseArg {
    Gd,
    Ud,
    Uls,
}

impl From<BaseArg> for BaseKind {
    fn from(a: BaseArg) -> Self {
        match a {
            BaseArg::Gd => BaseKind::Gd,
            BaseArg::Ud => BaseKind::Ud,
            BaseArg::Uls => BaseKind::Uls,
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lab(#[from] LabError),
}

impl From<aesim_core::Error> for CliError {
    fn from(e: aesim_core::Error) -> Self {
        CliError::Lab(e.into())
    }
}

/// Parse `args` (program name first), run the command and return the exit
/// code: 0 on success, 2 on usage errors, 1 on runtime failures. Diagnostics
/// go to stderr as a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Lab(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Embed(a) => embed(a),
        Command::Run(a) => run_one(a),
        Command::Batch(a) => batch(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = SyntheticConfig {
        height: a.height,
        width: a.width,
        domain_scale: a.domain_scale,
        loop_noise: a.loop_noise,
        n_bias: a.n_bias,
        rng_seed: a.seed,
    };
    let ds = generate_synthetic_dataset(&cfg)?;
    write_dataset(&a.out, &ds, Some(&cfg))?;
    if let Some(k) = a.embed {
        let e = pca_embed(&extract_patches(ds.image(), k)?)?;
        write_latent(&a.out, k, &e)?;
    }
    println!("wrote {}x{} dataset with {} bias points to {}", a.height, a.width, a.n_bias, a.out.display());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<(), CliError> {
    let bundle = read_dataset(&a.dataset)?;
    let patches = extract_patches(bundle.dataset.image(), a.patch_size)?;
    let e = match &a.from {
        Some(csv) => read_latent_csv(csv, patches.len())?,
        None => pca_embed(&patches)?,
    };
    write_latent(&a.dataset, a.patch_size, &e)?;
    println!("stored {} latent points ({:?}) in {}", e.len(), e.source(), a.dataset.display());
    Ok(())
}

fn write_run_outputs(out: &Path, state: &ExperimentState) -> LabResult<()> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_trace_csv(&out.join("trace.csv"), state.trace())?;
    write_curve_csv(&out.join("curves.csv"), state.curve())?;
    let path = out.join("config.json");
    let mut text = serde_json::to_string_pretty(state.config())?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

fn run_one(a: RunArgs) -> Result<(), CliError> {
    let steps = a.steps as usize;
    let mut state = match &a.resume {
        Some(path) => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            ExperimentState::from_checkpoint(&bytes)?
        }
        None => {
            let specimen = Arc::new(a.data.specimen()?);
            let budget = a.budget.unwrap_or(a.loop_args.n_seed + steps);
            let cfg = a.loop_args.config(a.acq.into(), a.seed_model.into(), a.data.scalarizer.into(), budget);
            ExperimentState::init(specimen, cfg)?
        }
    };
    for _ in 0..steps {
        if state.status() != Status::Running {
            break;
        }
        state.step()?;
    }
    write_run_outputs(&a.out, &state)?;
    if let Some(path) = &a.checkpoint {
        let bytes = state.to_checkpoint()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
    }
    let last = state.curve().last().expect("curve has the init entry");
    println!(
        "{} measurements, {} steps, mean sigma {:.6}, stagnant {}",
        state.measured_count(),
        state.steps_completed(),
        last.mean_sigma,
        state.is_stagnant()
    );
    Ok(())
}

fn batch(a: BatchArgs) -> Result<(), CliError> {
    let intervention = match a.intervention {
        InterventionArg::Exclusion => InterventionSpec::Exclusion {
            centers: None,
            radius: a.exclusion_radius,
            base: a.exclusion_base.into(),
        },
        InterventionArg::Prioritizing => {
            let Some(r) = &a.region else {
                return Err(CliError::Usage("--intervention prioritizing needs --region z1_min,z1_max,z2_min,z2_max".into()));
            };
            InterventionSpec::Prioritizing {
                region: Region::Rectangle { z1_min: r[0], z1_max: r[1], z2_min: r[2], z2_max: r[3] },
                bandwidth: None,
            }
        }
    };
    let specimen = Arc::new(a.data.specimen()?);
    let bifurcate_at = (!a.no_bifurcation).then_some(a.bifurcate_at);
    let budget = a.budget.unwrap_or_else(|| match bifurcate_at {
        Some(b) => a.loop_args.n_seed + b + a.n_points + a.horizon,
        None => a.loop_args.n_seed + 40,
    });
    let configs = a
        .seed_models
        .iter()
        .flat_map(|&s| a.acqs.iter().map(move |&q| (s, q)))
        .map(|(s, q)| a.loop_args.config(q.into(), s.into(), a.data.scalarizer.into(), budget))
        .collect();
    let mut study = StudyConfig::new(configs, a.reps as usize, a.loop_args.master_seed, intervention);
    study.bifurcate_at = bifurcate_at;
    study.n_points = a.n_points;
    study.horizon = a.horizon;
    let report = run_batch(&specimen, &study, &AcquisitionScorer, a.threads)?;
    write_study_report(&a.out, &report)?;
    let failures: usize = report.configs.iter().map(|c| c.failures.len()).sum();
    println!(
        "{} runs, {} branch outcomes, {failures} failed reps, report in {}",
        report.runs.len(),
        report.outcomes.len(),
        a.out.display()
    );
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    let specimen = Arc::new(a.data.specimen()?);
    let state = Arc::new(AppState::new(specimen, ServiceOptions { exam_mode: a.exam_mode }));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_err("tokio runtime"))?;
    rt.block_on(serve(&a.addr, state)).map_err(io_err(&a.addr))?;
    Ok(())
}
