//! Simulated adaptive trials.
//!
//! One trial splits `total_n` patients into `n_interims + 1` equal cohorts
//! (the remainder goes to the first). The first cohort follows the starting
//! design. Before each later cohort the accrued data update the posterior
//! model probabilities and shrinkage estimates, models without an estimated
//! MED are set aside, and the next cohort is allocated by minimizing the
//! compound MED criterion. After the last cohort the frequentist final
//! analysis estimates the MED.
//!
//! Replication `r` of a study draws from stream `r` of a ChaCha8 generator
//! seeded with the study seed, so results do not depend on scheduling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    optimize_next_stage, prune_weights, round_allocation, AllocationState, CompoundCriterionInput,
    CriterionTerm, OptimizerSettings,
};
use crate::error::{Error, Result};
use crate::fitting::{final_med, FitSettings, DEFAULT_ALPHA};
use crate::inference::{
    posterior_model_probs, CandidateModel, CandidateSet, Dataset, Elicitation, InferenceSettings,
    ParamPrior, PosteriorSummary,
};
use crate::models::{DoseResponseModel, MedSpec, Shape};

/// Optimized weights below this are treated as zero before rounding.
pub const PRUNE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Label of the dose grid, e.g. `"4"` or `"7"` active doses.
    pub doses_option: String,
    pub truth: DoseResponseModel,
    pub sigma: f64,
    pub doses: Vec<f64>,
    pub total_n: usize,
    pub n_interims: usize,
    pub starting_design: Vec<f64>,
    pub candidates: CandidateSet,
    pub med_spec: MedSpec,
    /// Doses whose optimized next-cohort weight falls below this fraction are
    /// closed and the cohort re-optimized. Placebo always stays open.
    pub min_alloc_fraction: Option<f64>,
    pub alpha_level: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        crate::design::validate_doses(&self.doses)?;
        if self.starting_design.len() != self.doses.len() {
            return Err(Error::Config(format!(
                "starting design has {} weights for {} doses",
                self.starting_design.len(),
                self.doses.len()
            )));
        }
        crate::design::Design::new(self.doses.clone(), self.starting_design.clone())
            .map_err(|e| Error::Config(format!("starting design: {e}")))?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("bad sigma {}", self.sigma)));
        }
        let sizes = self.cohort_sizes();
        if sizes.contains(&0) {
            return Err(Error::Config(format!(
                "{} patients cannot fill {} cohorts",
                self.total_n,
                self.n_interims + 1
            )));
        }
        if let Some(f) = self.min_alloc_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "min_alloc_fraction {f} not in [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn cohort_sizes(&self) -> Vec<usize> {
        cohort_sizes(self.total_n, self.n_interims)
    }

    pub fn true_med(&self) -> Option<f64> {
        self.truth.med(&self.med_spec)
    }
}

/// Equal cohorts with the remainder added to the first.
pub fn cohort_sizes(total_n: usize, n_interims: usize) -> Vec<usize> {
    let c = n_interims + 1;
    let base = total_n / c;
    let mut sizes = vec![base; c];
    sizes[0] += total_n - base * c;
    sizes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterimRecord {
    pub posterior: Vec<f64>,
    /// Candidate names set aside because their MED estimate does not exist.
    pub dropped: Vec<String>,
    /// Criterion weights after dropping and reweighting.
    pub alphas: Vec<f64>,
    pub balanced_fallback: bool,
    pub closed_doses: Vec<f64>,
    pub certificate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub med: Option<f64>,
    pub selected: Option<String>,
    pub signal: bool,
    /// Next-cohort weights per stage.
    pub designs: Vec<Vec<f64>>,
    /// Patients per dose per stage.
    pub allocations: Vec<Vec<usize>>,
    pub interims: Vec<InterimRecord>,
}

impl TrialResult {
    pub fn total_allocation(&self) -> Vec<usize> {
        let k = self.allocations.first().map_or(0, Vec::len);
        let mut total = vec![0; k];
        for a in &self.allocations {
            for (t, v) in total.iter_mut().zip(a) {
                *t += v;
            }
        }
        total
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrialSettings {
    pub optimizer: OptimizerSettings,
    pub inference: InferenceSettings,
    pub fit: FitSettings,
}

/// Runs one trial on stream 0 of `seed`.
pub fn run_trial(scenario: &Scenario, seed: u64) -> Result<TrialResult> {
    run_replication(scenario, seed, 0, &TrialSettings::default())
}

/// Runs replication `rep` of a study seeded with `base_seed`.
pub fn run_replication(
    scenario: &Scenario,
    base_seed: u64,
    rep: u64,
    settings: &TrialSettings,
) -> Result<TrialResult> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(rep);
    let k = scenario.doses.len();
    let means: Vec<f64> = scenario
        .doses
        .iter()
        .map(|&d| scenario.truth.eval_mean(d))
        .collect::<Result<_>>()?;
    let sizes = scenario.cohort_sizes();
    let mut data = Dataset::new(scenario.doses.clone())?;
    let mut designs = Vec::with_capacity(sizes.len());
    let mut allocations = Vec::with_capacity(sizes.len());
    let mut interims = Vec::with_capacity(scenario.n_interims);

    for (stage, &cohort) in sizes.iter().enumerate() {
        let w = if stage == 0 {
            scenario.starting_design.clone()
        } else {
            let opt_seed: u64 = rng.random();
            let (w, record) = interim_design(scenario, &data, cohort, opt_seed, settings)?;
            interims.push(record);
            w
        };
        let counts = round_allocation(&w, cohort)?;
        for (i, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                data.push_at(i, means[i] + scenario.sigma * z);
            }
        }
        designs.push(w);
        allocations.push(counts);
    }
    debug_assert_eq!(
        allocations.iter().flatten().sum::<usize>(),
        scenario.total_n
    );
    debug_assert!(allocations.iter().all(|a| a.len() == k));

    let fa = final_med(
        &data,
        &scenario.candidates,
        &scenario.med_spec,
        scenario.alpha_level,
        &settings.fit,
    );
    Ok(TrialResult {
        med: fa.med,
        selected: fa.selected,
        signal: fa.signal.is_some_and(|s| s.any_signal),
        designs,
        allocations,
        interims,
    })
}

/// Compound criterion at the shrinkage estimates, weighted by the posterior
/// model probabilities. Models without a usable MED are left out and named
/// in the second return value; `None` if no model is left.
pub fn criterion_input(
    scenario: &Scenario,
    post: &PosteriorSummary,
) -> Result<(Option<CompoundCriterionInput>, Vec<String>)> {
    let mut terms = Vec::new();
    let mut dropped = Vec::new();
    for m in &post.models {
        let usable = m.med.is_some() && m.estimate.med_gradient(&scenario.med_spec).is_ok();
        if usable && m.prob > 0.0 {
            terms.push(CriterionTerm {
                model: m.estimate.clone(),
                spec: scenario.med_spec,
                alpha: m.prob,
            });
        } else {
            dropped.push(m.name.clone());
        }
    }
    if terms.is_empty() {
        return Ok((None, dropped));
    }
    let total_alpha: f64 = terms.iter().map(|t| t.alpha).sum();
    terms.iter_mut().for_each(|t| t.alpha /= total_alpha);
    let input = CompoundCriterionInput::new(
        terms,
        scenario.sigma.max(f64::MIN_POSITIVE).powi(2),
        scenario.total_n as f64,
    )?;
    Ok((Some(input), dropped))
}

/// Posterior update and next-cohort allocation at one interim analysis.
pub fn interim_design(
    scenario: &Scenario,
    data: &Dataset,
    cohort: usize,
    opt_seed: u64,
    settings: &TrialSettings,
) -> Result<(Vec<f64>, InterimRecord)> {
    let k = scenario.doses.len();
    let post = posterior_model_probs(
        data,
        &scenario.candidates,
        &scenario.med_spec,
        &settings.inference,
    )?;
    let (input, dropped) = criterion_input(scenario, &post)?;
    let mut record = InterimRecord {
        posterior: post.probs(),
        dropped,
        alphas: Vec::new(),
        balanced_fallback: false,
        closed_doses: Vec::new(),
        certificate: None,
    };
    let balanced = vec![1.0 / k as f64; k];
    let Some(input) = input else {
        record.balanced_fallback = true;
        return Ok((balanced, record));
    };
    record.alphas = input.terms.iter().map(|t| t.alpha).collect();
    let alloc = AllocationState::new(data.counts(), cohort)?;
    let mut opt = settings.optimizer.clone();
    opt.seed = opt_seed;
    let mut open = vec![true; k];
    loop {
        opt.available = Some(open.clone());
        let res = match optimize_next_stage(&input, &alloc, &scenario.doses, &opt) {
            Ok(r) if !r.fallback => r,
            _ => {
                record.balanced_fallback = true;
                return Ok((balanced, record));
            }
        };
        let mut closed_any = false;
        if let Some(frac) = scenario.min_alloc_fraction {
            for (is_open, &w) in open.iter_mut().zip(&res.w_next).skip(1) {
                if *is_open && w < frac {
                    *is_open = false;
                    closed_any = true;
                }
            }
        }
        if !closed_any {
            record.closed_doses = (0..k)
                .filter(|&i| !open[i])
                .map(|i| scenario.doses[i])
                .collect();
            record.certificate = res.certificate.bound;
            return Ok((prune_weights(&res.w_next, PRUNE_TOL), record));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub scenario: String,
    pub doses_option: String,
    pub n_interims: usize,
    pub n_reps: usize,
    /// Mean `|MED̂ − MED|` over replications that produced an estimate.
    pub mae: Option<f64>,
    pub estimation_rate: f64,
    /// Mean fraction of patients per dose.
    pub mean_alloc: Vec<f64>,
    /// Per-replication absolute errors, `None` where no MED was estimated.
    #[serde(skip)]
    pub abs_errors: Vec<Option<f64>>,
    /// Replications that failed outright, with their messages.
    #[serde(skip)]
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub rows: Vec<StudyRow>,
}

/// Runs `n_reps` replications of every scenario. Replications run on the
/// current rayon pool; results are identical for any number of threads.
pub fn run_study(
    scenarios: &[Scenario],
    n_reps: usize,
    base_seed: u64,
    settings: &TrialSettings,
) -> Result<StudySummary> {
    if n_reps == 0 {
        return Err(Error::Config("n_reps must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        sc.validate()?;
        let truth_med = sc.true_med();
        let results: Vec<Result<TrialResult>> = (0..n_reps)
            .into_par_iter()
            .map(|r| run_replication(sc, base_seed, r as u64, settings))
            .collect();
        let k = sc.doses.len();
        let mut alloc_sum = vec![0.0; k];
        let mut abs_errors = Vec::with_capacity(n_reps);
        let mut failures = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok(t) => {
                    for (s, v) in alloc_sum.iter_mut().zip(t.total_allocation()) {
                        *s += v as f64 / sc.total_n as f64;
                    }
                    abs_errors.push(match (t.med, truth_med) {
                        (Some(m), Some(tm)) => Some((m - tm).abs()),
                        _ => None,
                    });
                }
                Err(e) => {
                    abs_errors.push(None);
                    failures.push((r, e.to_string()));
                }
            }
        }
        let ok = n_reps - failures.len();
        let est: Vec<f64> = abs_errors.iter().flatten().copied().collect();
        rows.push(StudyRow {
            scenario: sc.name.clone(),
            doses_option: sc.doses_option.clone(),
            n_interims: sc.n_interims,
            n_reps,
            mae: (!est.is_empty()).then(|| est.iter().sum::<f64>() / est.len() as f64),
            estimation_rate: est.len() as f64 / n_reps as f64,
            mean_alloc: alloc_sum.iter().map(|s| s / ok.max(1) as f64).collect(),
            abs_errors,
            failures,
        });
    }
    Ok(StudySummary { rows })
}

impl StudySummary {
    /// CSV with columns `scenario, doses_option, n_interims, n_reps, mae,
    /// estimation_rate, mean_alloc_d1..dk`, where `k` is the largest grid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let k = self
            .rows
            .iter()
            .map(|r| r.mean_alloc.len())
            .max()
            .unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "scenario",
            "doses_option",
            "n_interims",
            "n_reps",
            "mae",
            "estimation_rate",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=k).map(|i| format!("mean_alloc_d{i}")));
        let io = |e: csv::Error| Error::Data(format!("csv: {e}"));
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                r.scenario.clone(),
                r.doses_option.clone(),
                r.n_interims.to_string(),
                r.n_reps.to_string(),
                r.mae.map_or(String::new(), |v| format!("{v}")),
                format!("{}", r.estimation_rate),
            ];
            rec.extend((0..k).map(|i| {
                r.mean_alloc
                    .get(i)
                    .map_or(String::new(), |v| format!("{v}"))
            }));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Data(format!("csv: {e}")))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Built-in asthma scenarios

pub const DELTA: f64 = 200.0;
pub const MAX_DOSE: f64 = 50.0;
pub const BETA_SCALE: f64 = 60.0;
pub const SIGMA: f64 = 350.0;
pub const TOTAL_N: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoseOption {
    Four,
    Seven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartDesign {
    Balanced,
    Good,
    Bad,
}

impl DoseOption {
    pub fn doses(self) -> Vec<f64> {
        match self {
            DoseOption::Four => vec![0.0, 2.5, 10.0, 20.0, 50.0],
            DoseOption::Seven => vec![0.0, 0.5, 1.0, 2.5, 5.0, 10.0, 20.0, 50.0],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DoseOption::Four => "4",
            DoseOption::Seven => "7",
        }
    }

    pub fn start(self, start: StartDesign) -> Vec<f64> {
        match (self, start) {
            (_, StartDesign::Balanced) => {
                let k = self.doses().len();
                vec![1.0 / k as f64; k]
            }
            (DoseOption::Four, StartDesign::Good) => vec![0.35, 0.03, 0.22, 0.35, 0.05],
            (DoseOption::Seven, StartDesign::Good) => {
                vec![0.35, 0.02, 0.02, 0.02, 0.02, 0.20, 0.30, 0.07]
            }
            (DoseOption::Four, StartDesign::Bad) => vec![0.1, 0.3, 0.05, 0.05, 0.5],
            (DoseOption::Seven, StartDesign::Bad) => {
                vec![0.1, 0.2, 0.22, 0.02, 0.02, 0.02, 0.02, 0.4]
            }
        }
    }
}

pub fn asthma_med_spec() -> MedSpec {
    MedSpec {
        delta: DELTA,
        placebo_dose: 0.0,
        max_dose: MAX_DOSE,
    }
}

/// The data-generating curves: five candidate shapes plus a linear truth
/// outside the candidate set.
pub fn truths() -> Vec<(&'static str, DoseResponseModel)> {
    vec![
        (
            "beta",
            DoseResponseModel::scaled_beta(100.0, 300.0, 0.43, 0.6, BETA_SCALE).expect("valid"),
        ),
        (
            "emax1",
            DoseResponseModel::emax(100.0, 420.0, 20.0).expect("valid"),
        ),
        (
            "emax2",
            DoseResponseModel::emax(100.0, 330.0, 5.0).expect("valid"),
        ),
        (
            "logistic1",
            DoseResponseModel::logistic(98.0, 302.0, 17.5, 3.3).expect("valid"),
        ),
        (
            "logistic2",
            DoseResponseModel::logistic(92.0, 615.0, 50.0, 11.5).expect("valid"),
        ),
        (
            "linear",
            DoseResponseModel::linear(100.0, 6.0).expect("valid"),
        ),
    ]
}

pub fn asthma_elicitation() -> Elicitation {
    Elicitation {
        placebo_mean: 100.0,
        placebo_var: 100_000.0,
        maxeff_mean: 300.0,
        maxeff_var: 100_000.0,
        sigma2_mode: SIGMA * SIGMA,
        nu: 4.0,
    }
}

/// Five candidates with beta priors (S = 3) centred on the truth parameters,
/// elicited linear parameters and uniform model probabilities.
pub fn asthma_candidates() -> CandidateSet {
    let e = asthma_elicitation();
    let s = 3.0;
    let emax = |mode: f64| vec![ParamPrior::new(0.05, 75.0, mode, s).expect("valid")];
    let logistic = |ed50: f64, delta: f64| {
        vec![
            ParamPrior::new(0.05, 75.0, ed50, s).expect("valid"),
            ParamPrior::new(0.5, 25.0, delta, s).expect("valid"),
        ]
    };
    let beta = vec![
        ParamPrior::new(0.05, 4.0, 0.43, s).expect("valid"),
        ParamPrior::new(0.05, 4.0, 0.6, s).expect("valid"),
    ];
    let p = 0.2;
    let build = |name: &str, shape: Shape, priors: Vec<ParamPrior>| {
        CandidateModel::elicited(name, shape, priors, &e, MAX_DOSE, p).expect("valid priors")
    };
    CandidateSet::new(vec![
        build("beta", Shape::ScaledBeta { scale: BETA_SCALE }, beta),
        build("emax1", Shape::Emax, emax(20.0)),
        build("emax2", Shape::Emax, emax(5.0)),
        build("logistic1", Shape::Logistic, logistic(17.5, 3.3)),
        build("logistic2", Shape::Logistic, logistic(50.0, 11.5)),
    ])
    .expect("non-empty")
}

pub fn builtin_scenario(
    truth: &str,
    option: DoseOption,
    start: StartDesign,
    n_interims: usize,
) -> Result<Scenario> {
    let model = truths()
        .into_iter()
        .find(|(n, _)| *n == truth)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Config(format!("unknown built-in scenario {truth:?}")))?;
    Ok(Scenario {
        name: truth.to_string(),
        doses_option: option.label().to_string(),
        truth: model,
        sigma: SIGMA,
        doses: option.doses(),
        total_n: TOTAL_N,
        n_interims,
        starting_design: option.start(start),
        candidates: asthma_candidates(),
        med_spec: asthma_med_spec(),
        min_alloc_fraction: None,
        alpha_level: DEFAULT_ALPHA,
    })
}

/// Every truth on both dose grids with a balanced first stage and nine
/// interim analyses.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    for (name, _) in truths() {
        for option in [DoseOption::Four, DoseOption::Seven] {
            out.push(builtin_scenario(name, option, StartDesign::Balanced, 9).expect("built-in"));
        }
    }
    out
}
