//! Command-line driver: pre-trial design, interim re-allocation,
//! certification of a given design and batch simulation.

pub mod data;
pub mod report;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dosefind::config::{LoadedConfig, ScenarioConfig, StartKind, StartingDesign};
use dosefind::design::{efficiency_bound, round_allocation, AllocationState};
use dosefind::inference::{posterior_model_probs, Dataset};
use dosefind::simulator::{
    builtin_scenario, cohort_sizes, criterion_input, interim_design, run_study, truths, DoseOption,
    Scenario, StartDesign, TrialSettings,
};

use report::{CertifyReport, DesignReport, InterimReport, ModelSummary, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<dosefind::Error> for CliError {
    fn from(e: dosefind::Error) -> Self {
        match e {
            dosefind::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Exit status of a command that produced its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A numerical fallback was taken; the output says which.
    Fallback,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Fallback => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dosefind",
    version,
    about = "Adaptive MED-optimal dose-finding designs"
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores, or
    /// RAYON_NUM_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// First-stage design at the prior guesses.
    Design(DesignArgs),
    /// Posterior update and next-cohort allocation from accrued data.
    Interim(InterimArgs),
    /// Efficiency lower bound of given next-cohort weights.
    Certify(CertifyArgs),
    /// Monte Carlo study of complete trials.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Optimizer seed (default: the config's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterimArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// CSV with header `patient_id,dose,response`.
    #[arg(long)]
    pub data: PathBuf,
    /// Patients in the next cohort.
    #[arg(long)]
    pub cohort_size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Next-cohort weights, comma separated, one per dose.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Vec<f64>,
    /// Accrued data; the bound is then taken at the posterior.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Size of the cohort the weights apply to (required with --data).
    #[arg(long)]
    pub cohort_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Grid {
    #[value(name = "4")]
    Four,
    #[value(name = "7")]
    Seven,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Start {
    Balanced,
    Good,
    Bad,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in truth (beta, emax1, emax2, logistic1, logistic2, linear or
    /// all).
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub scenario: Option<String>,
    /// Scenario configuration with a `truth` model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Numbers of interim analyses to compare, comma separated (default:
    /// 0,1,2,4,9 for built-ins, the config's schedule otherwise).
    #[arg(long, value_delimiter = ',')]
    pub interims: Option<Vec<usize>>,
    /// Active-dose grid of the built-in scenarios.
    #[arg(long, value_enum, default_value = "7")]
    pub grid: Grid,
    /// First-stage design of the built-in scenarios.
    #[arg(long, value_enum, default_value = "balanced")]
    pub start: Start,
    /// Write the CSV summary here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command, printing the human-readable summary to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<Status, CliError> {
    match cli.command {
        Command::Design(a) => cmd_design(&a, stdout, stderr),
        Command::Interim(a) => cmd_interim(&a, stdout, stderr),
        Command::Certify(a) => cmd_certify(&a, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(&a, cli.threads, stdout, stderr),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_config(path: &Path, stderr: &mut dyn Write) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let loaded = ScenarioConfig::from_json(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    for w in &loaded.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    Ok(loaded)
}

fn load_data(path: &Path, doses: &[f64]) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    data::read_dataset(file, doses)
}

fn write_out(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        write_out(p, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

fn model_summaries(
    sc: &Scenario,
    data: &Dataset,
    settings: &TrialSettings,
) -> Result<(Vec<ModelSummary>, dosefind::inference::PosteriorSummary), CliError> {
    let post = posterior_model_probs(data, &sc.candidates, &sc.med_spec, &settings.inference)?;
    let priors = sc.candidates.prior_probs();
    let models = post
        .models
        .iter()
        .zip(priors)
        .map(|(m, p)| ModelSummary {
            name: m.name.clone(),
            prior_prob: p,
            posterior_prob: m.prob,
            theta: m.estimate.theta(),
            med: m.med,
        })
        .collect();
    Ok((models, post))
}

struct Certified {
    bound: Option<f64>,
    h: Vec<f64>,
    dropped: Vec<String>,
}

fn certify_weights(
    sc: &Scenario,
    post: &dosefind::inference::PosteriorSummary,
    alloc: &AllocationState,
    w: &[f64],
) -> Result<Certified, CliError> {
    let (input, dropped) = criterion_input(sc, post)?;
    let Some(input) = input else {
        return Ok(Certified {
            bound: None,
            h: Vec::new(),
            dropped,
        });
    };
    let cert = efficiency_bound(&input, alloc, &sc.doses, w)?;
    Ok(Certified {
        bound: cert.bound,
        h: cert.h,
        dropped,
    })
}

/// First-stage weights as the config requests them, with the record of the
/// optimization when one ran.
fn first_stage(
    loaded: &LoadedConfig,
    sc: &Scenario,
    cohort: usize,
    seed: u64,
    settings: &TrialSettings,
) -> Result<(Vec<f64>, &'static str, bool), CliError> {
    let k = sc.doses.len();
    Ok(match &loaded.config.starting_design {
        StartingDesign::Named(StartKind::Balanced) => (vec![1.0 / k as f64; k], "balanced", false),
        StartingDesign::Weights(_) => (sc.starting_design.clone(), "weights", false),
        StartingDesign::Named(StartKind::Optimal) => {
            let empty = Dataset::new(sc.doses.clone())?;
            let (w, rec) = interim_design(sc, &empty, cohort, seed, settings)?;
            (w, "optimal", rec.balanced_fallback)
        }
    })
}

fn design_report(
    loaded: &LoadedConfig,
    cohort: usize,
    seed: u64,
) -> Result<DesignReport, CliError> {
    let sc = loaded.planning_scenario()?;
    let settings = TrialSettings::default();
    let empty = Dataset::new(sc.doses.clone())?;
    let (models, post) = model_summaries(&sc, &empty, &settings)?;
    let (weights, source, fallback) = first_stage(loaded, &sc, cohort, seed, &settings)?;
    let alloc = AllocationState::initial(sc.doses.len(), cohort)?;
    let cert = certify_weights(&sc, &post, &alloc, &weights)?;
    Ok(DesignReport {
        schema_version: SCHEMA_VERSION,
        command: "design".into(),
        doses: sc.doses.clone(),
        source: source.into(),
        weights: weights.clone(),
        cohort_size: cohort,
        counts: round_allocation(&weights, cohort)?,
        certificate: cert.bound,
        h: cert.h,
        models,
        dropped: cert.dropped,
        balanced_fallback: fallback,
    })
}

pub fn cmd_design(
    a: &DesignArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Status, CliError> {
    let loaded = load_config(&a.config, err)?;
    let c = &loaded.config;
    let cohort = cohort_sizes(c.total_n, c.n_interims)[0];
    let rep = design_report(&loaded, cohort, a.seed.unwrap_or(c.seed))?;
    write_json(a.out.as_deref(), &rep)?;
    report::print_design(out, &rep).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(if rep.balanced_fallback {
        Status::Fallback
    } else {
        Status::Ok
    })
}

pub fn cmd_interim(
    a: &InterimArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Status, CliError> {
    let loaded = load_config(&a.config, err)?;
    let sc = loaded.planning_scenario()?;
    let data = load_data(&a.data, &sc.doses)?;
    if a.cohort_size == 0 {
        return Err(CliError::Validation(
            "--cohort-size must be positive".into(),
        ));
    }
    let seed = a.seed.unwrap_or(loaded.config.seed);
    let settings = TrialSettings::default();
    let (models, post) = model_summaries(&sc, &data, &settings)?;
    let (weights, dropped, fallback, closed, certificate, h) = if data.is_empty() {
        // no data yet: the next cohort is the first stage
        let rep = design_report(&loaded, a.cohort_size, seed)?;
        (
            rep.weights,
            rep.dropped,
            rep.balanced_fallback,
            Vec::new(),
            rep.certificate,
            rep.h,
        )
    } else {
        let (w, rec) = interim_design(&sc, &data, a.cohort_size, seed, &settings)?;
        let alloc = AllocationState::new(data.counts(), a.cohort_size)?;
        let cert = certify_weights(&sc, &post, &alloc, &w)?;
        (
            w,
            rec.dropped,
            rec.balanced_fallback,
            rec.closed_doses,
            cert.bound,
            cert.h,
        )
    };
    let rep = InterimReport {
        schema_version: SCHEMA_VERSION,
        command: "interim".into(),
        doses: sc.doses.clone(),
        observed: data.counts(),
        models,
        dropped,
        weights: weights.clone(),
        cohort_size: a.cohort_size,
        counts: round_allocation(&weights, a.cohort_size)?,
        certificate,
        h,
        closed_doses: closed,
        balanced_fallback: fallback,
    };
    write_json(a.out.as_deref(), &rep)?;
    report::print_interim(out, &rep).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(if rep.balanced_fallback {
        Status::Fallback
    } else {
        Status::Ok
    })
}

pub fn cmd_certify(
    a: &CertifyArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Status, CliError> {
    let loaded = load_config(&a.config, err)?;
    let sc = loaded.planning_scenario()?;
    dosefind::design::Design::new(sc.doses.clone(), a.weights.clone())
        .map_err(|e| CliError::Validation(format!("--weights: {e}")))?;
    let (data, alloc) = match &a.data {
        Some(p) => {
            let data = load_data(p, &sc.doses)?;
            let n = a.cohort_size.ok_or_else(|| {
                CliError::Validation("--cohort-size is required with --data".into())
            })?;
            let alloc = AllocationState::new(data.counts(), n)?;
            (data, alloc)
        }
        None => {
            let n = a.cohort_size.unwrap_or(sc.total_n);
            (
                Dataset::new(sc.doses.clone())?,
                AllocationState::initial(sc.doses.len(), n)?,
            )
        }
    };
    let (_, post) = model_summaries(&sc, &data, &TrialSettings::default())?;
    let cert = certify_weights(&sc, &post, &alloc, &a.weights)?;
    let rep = CertifyReport {
        schema_version: SCHEMA_VERSION,
        command: "certify".into(),
        doses: sc.doses.clone(),
        weights: a.weights.clone(),
        certificate: cert.bound,
        h: cert.h,
        dropped: cert.dropped,
    };
    write_json(a.out.as_deref(), &rep)?;
    report::print_certify(out, &rep).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(if rep.certificate.is_none() {
        Status::Fallback
    } else {
        Status::Ok
    })
}

fn builtin_scenarios(a: &SimulateArgs, name: &str) -> Result<Vec<Scenario>, CliError> {
    let names: Vec<&str> = if name == "all" {
        truths().iter().map(|(n, _)| *n).collect()
    } else {
        vec![name]
    };
    let grid = match a.grid {
        Grid::Four => DoseOption::Four,
        Grid::Seven => DoseOption::Seven,
    };
    let start = match a.start {
        Start::Balanced => StartDesign::Balanced,
        Start::Good => StartDesign::Good,
        Start::Bad => StartDesign::Bad,
    };
    let interims = a.interims.clone().unwrap_or_else(|| vec![0, 1, 2, 4, 9]);
    let mut out = Vec::new();
    for n in names {
        for &i in &interims {
            out.push(builtin_scenario(n, grid, start, i)?);
        }
    }
    Ok(out)
}

fn config_scenarios(
    a: &SimulateArgs,
    path: &Path,
    err: &mut dyn Write,
) -> Result<(Vec<Scenario>, u64), CliError> {
    let loaded = load_config(path, err)?;
    let c = &loaded.config;
    let interims = a.interims.clone().unwrap_or_else(|| vec![c.n_interims]);
    let mut out = Vec::new();
    for i in interims {
        let mut lc = loaded.clone();
        lc.config.n_interims = i;
        let cohort = cohort_sizes(c.total_n, i)[0];
        let planning = lc.planning_scenario()?;
        let (start, _, _) = first_stage(&lc, &planning, cohort, c.seed, &TrialSettings::default())?;
        out.push(lc.scenario(start)?);
    }
    Ok((out, c.seed))
}

pub fn cmd_simulate(
    a: &SimulateArgs,
    threads: Option<usize>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Status, CliError> {
    let (scenarios, default_seed) = match (&a.scenario, &a.config) {
        (Some(name), _) => (builtin_scenarios(a, name)?, 1),
        (None, Some(path)) => config_scenarios(a, path, err)?,
        (None, None) => return Err(CliError::Validation("give --scenario or --config".into())),
    };
    if a.reps == 0 {
        return Err(CliError::Validation("--reps must be at least 1".into()));
    }
    let seed = a.seed.unwrap_or(default_seed);
    let study = || run_study(&scenarios, a.reps, seed, &TrialSettings::default());
    let summary = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?
            .install(study)?,
        None => study()?,
    };
    if let Some(p) = &a.out {
        let mut buf = Vec::new();
        summary.write_csv(&mut buf)?;
        write_out(p, &buf)?;
    }
    report::print_study(out, &summary).map_err(|e| CliError::Io(e.to_string()))?;
    let failed: usize = summary.rows.iter().map(|r| r.failures.len()).sum();
    if failed > 0 {
        for r in &summary.rows {
            for (rep, msg) in &r.failures {
                let _ = writeln!(
                    err,
                    "{} ({} interims) replication {rep}: {msg}",
                    r.scenario, r.n_interims
                );
            }
        }
        return Ok(Status::Fallback);
    }
    Ok(Status::Ok)
}
