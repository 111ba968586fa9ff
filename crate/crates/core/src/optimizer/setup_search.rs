use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sweep::reference_functional;
use crate::bell::{
    capacity_bound_f, extract_bell, is_local, violation, BellFunctional, EtaSearch, Violation,
    LOCALITY_TOL,
};
use crate::error::{Error, Result};
use crate::nsbox::BoxShape;
use crate::nsbox::JointExtension;
use crate::quantum::{
    born_box, functional_value, maximize_functional, DensityOperator, MeasurementSetup, SeeSaw,
};
use crate::solver::{best_effort, nonlocal_capacity_from, SolverConfig, SolverResult};

pub const MAX_START_DRAWS: usize = 64;
pub const START_TILT: f64 = 0.3;

/// Random stream `stream` of the root `seed`. Restart `k` of grid point `j`
/// uses stream `(j << 32) | k`, so any run can be reproduced in isolation.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub restarts: usize,
    /// Stop once a setup update raises the dual objective by less than this (bits).
    pub outer_tol: f64,
    pub max_outer: usize,
    pub solver: SolverConfig,
    pub seed: u64,
    pub see_saw: SeeSaw,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            outer_tol: 1e-7,
            max_outer: 500,
            solver: SolverConfig::default(),
            seed: 0,
            see_saw: SeeSaw::default(),
        }
    }
}

impl OptimizeConfig {
    pub fn check(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidConfig("outer_tol must be positive".into()));
        }
        self.solver.check()
    }
}

/// One outer iteration of the setup optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Capacity (bits) of the setup entering this iteration.
    pub capacity: f64,
    pub lower_bound: f64,
    /// Dual objective (bits) of this iteration's witness before and after the setup update.
    pub dual_before: f64,
    pub dual_after: f64,
    pub setup_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeTrace {
    pub steps: Vec<TraceStep>,
}

impl OptimizeTrace {
    /// Largest drop `C_n - C_{n+1}` along the trace (nonpositive when monotone).
    pub fn worst_descent(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| w[0].capacity - w[1].capacity)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Gain of the final setup update (bits).
    pub fn final_gain(&self) -> f64 {
        self.steps
            .last()
            .map_or(0.0, |s| s.dual_after - s.dual_before)
    }
}

/// Outcome of one run of the capacity-maximizing setup search.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupRun {
    pub setup: MeasurementSetup,
    pub result: SolverResult,
    pub trace: OptimizeTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub best: SetupRun,
    /// Bell functional `rho(a) lambda` of the final witness.
    pub functional: BellFunctional,
    /// `F(Delta B)` of that functional (bits), when the search succeeded.
    pub f_check: Option<f64>,
    pub restarts_completed: usize,
    pub failures: Vec<String>,
}

pub fn setup_hash(setup: &MeasurementSetup) -> String {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for basis in setup.alice().iter().chain(setup.bob()) {
        for v in basis {
            for z in v.iter() {
                z.re.to_bits().hash(&mut h);
                z.im.to_bits().hash(&mut h);
            }
        }
    }
    format!("{:016x}", h.finish())
}

/// Capacity-maximizing setup search from a given start: alternates a
/// capacity solve with the maximization of the witness's dual objective over
/// the setup, until the dual objective gains less than `outer_tol`.
pub fn optimize_from(
    state: &DensityOperator,
    start: &MeasurementSetup,
    cfg: &OptimizeConfig,
    warm: Option<&JointExtension>,
) -> Result<SetupRun> {
    let ln2 = std::f64::consts::LN_2;
    let mut setup = start.clone();
    let mut result = best_effort(nonlocal_capacity_from(
        &born_box(state, &setup)?,
        &cfg.solver,
        warm,
    ))?;
    let mut trace = OptimizeTrace::default();
    let mut best: Option<(MeasurementSetup, SolverResult)> = None;
    for _ in 0..cfg.max_outer {
        let coeffs = result.witness.bell_coefficients();
        let dual_before = functional_value(state, &setup, &coeffs)? / ln2;
        let opt = maximize_functional(state, &setup, &coeffs, &cfg.see_saw)?;
        let dual_after = opt.value / ln2;
        trace.steps.push(TraceStep {
            capacity: result.capacity,
            lower_bound: result.lower_bound,
            dual_before,
            dual_after,
            setup_hash: setup_hash(&setup),
        });
        if best
            .as_ref()
            .is_none_or(|(_, r)| result.capacity > r.capacity)
        {
            best = Some((setup.clone(), result.clone()));
        }
        if dual_after - dual_before < cfg.outer_tol {
            break;
        }
        setup = opt.setup;
        result = best_effort(nonlocal_capacity_from(
            &born_box(state, &setup)?,
            &cfg.solver,
            Some(&result.extension),
        ))?;
    }
    if best
        .as_ref()
        .is_none_or(|(_, r)| result.capacity > r.capacity)
    {
        best = Some((setup, result));
    }
    let (setup, result) = best.expect("at least one solve ran");
    Ok(SetupRun {
        setup,
        result,
        trace,
    })
}

pub(crate) fn restart_runs(
    state: &DensityOperator,
    shape: BoxShape,
    cfg: &OptimizeConfig,
    stream_base: u64,
) -> Vec<Result<SetupRun>> {
    let run = |k: usize| -> Result<SetupRun> {
        let mut rng = stream_rng(cfg.seed, stream_base | k as u64);
        let start = nonlocal_start(state, shape, cfg, &mut rng)?;
        optimize_from(state, &start, cfg, None)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.restarts).into_par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..cfg.restarts).map(run).collect()
    }
}

/// Haar draws at a local box give a zero witness and no ascent direction.
/// Such a draw is pushed to a nonlocal box by maximizing the reference Bell
/// functional plus Gaussian noise of relative size `START_TILT`; the noise
/// spreads restarts over differently tilted basins.
fn nonlocal_start(
    state: &DensityOperator,
    shape: BoxShape,
    cfg: &OptimizeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MeasurementSetup> {
    let reference = reference_functional(shape);
    let mut start = MeasurementSetup::haar(shape, rng)?;
    for _ in 0..MAX_START_DRAWS {
        if !is_local(&born_box(state, &start)?, LOCALITY_TOL)?.local {
            return Ok(start);
        }
        if let Some(f) = &reference {
            let scale = START_TILT * f.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let tilted: Vec<f64> = f
                .coeffs()
                .iter()
                .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let pushed = maximize_functional(state, &start, &tilted, &cfg.see_saw)?.setup;
            if !is_local(&born_box(state, &pushed)?, LOCALITY_TOL)?.local {
                return Ok(pushed);
            }
        }
        start = MeasurementSetup::haar(shape, rng)?;
    }
    Ok(start)
}

/// Picks the best completed run; ties go to the earliest.
pub(crate) fn pick_best(runs: Vec<Result<SetupRun>>) -> Result<(SetupRun, usize, Vec<String>)> {
    let mut best: Option<SetupRun> = None;
    let mut completed = 0;
    let mut failures = Vec::new();
    for run in runs {
        match run {
            Ok(run) => {
                completed += 1;
                if best
                    .as_ref()
                    .is_none_or(|b| run.result.capacity > b.result.capacity)
                {
                    best = Some(run);
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    match best {
        Some(b) => Ok((b, completed, failures)),
        None => Err(Error::NoRestartCompleted(
            failures.first().cloned().unwrap_or_default(),
        )),
    }
}

/// Multi-start capacity maximization over measurement setups for a fixed
/// state. `extra_starts` are tried in addition to the Haar-random restarts.
pub fn optimize_setup(
    state: &DensityOperator,
    shape: BoxShape,
    cfg: &OptimizeConfig,
    extra_starts: &[MeasurementSetup],
) -> Result<OptimizeOutcome> {
    optimize_setup_stream(state, shape, cfg, extra_starts, 0)
}

pub(crate) fn optimize_setup_stream(
    state: &DensityOperator,
    shape: BoxShape,
    cfg: &OptimizeConfig,
    extra_starts: &[MeasurementSetup],
    stream_base: u64,
) -> Result<OptimizeOutcome> {
    cfg.check()?;
    if state.dims() != (shape.r, shape.s) {
        return Err(Error::DimensionMismatch(format!(
            "state dims {:?} vs shape {shape}",
            state.dims()
        )));
    }
    let mut runs = restart_runs(state, shape, cfg, stream_base);
    for start in extra_starts {
        runs.push(optimize_from(state, start, cfg, None));
    }
    finish_outcome(state, runs)
}

pub(crate) fn finish_outcome(
    state: &DensityOperator,
    runs: Vec<Result<SetupRun>>,
) -> Result<OptimizeOutcome> {
    let (best, restarts_completed, failures) = pick_best(runs)?;
    let functional = extract_bell(&best.result.witness)?;
    let nsbox = born_box(state, &best.setup)?;
    let f_check = capacity_bound_f(&functional, &nsbox, &EtaSearch::default())
        .ok()
        .map(|b| b.value);
    Ok(OptimizeOutcome {
        best,
        functional,
        f_check,
        restarts_completed,
        failures,
    })
}

/// Multi-start maximization of `sum P B` over setups for a fixed functional.
pub fn maximize_bell_violation(
    state: &DensityOperator,
    f: &BellFunctional,
    cfg: &OptimizeConfig,
    extra_starts: &[MeasurementSetup],
) -> Result<(MeasurementSetup, Violation)> {
    maximize_bell_violation_stream(state, f, cfg, extra_starts, 0)
}

pub(crate) fn maximize_bell_violation_stream(
    state: &DensityOperator,
    f: &BellFunctional,
    cfg: &OptimizeConfig,
    extra_starts: &[MeasurementSetup],
    stream_base: u64,
) -> Result<(MeasurementSetup, Violation)> {
    cfg.check()?;
    let shape = f.shape();
    let mut starts: Vec<MeasurementSetup> = extra_starts.to_vec();
    for k in 0..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, stream_base | (1 << 31) | k as u64);
        starts.push(MeasurementSetup::haar(shape, &mut rng)?);
    }
    let mut best: Option<(MeasurementSetup, f64)> = None;
    let mut first_err = None;
    for start in &starts {
        match maximize_functional(state, start, f.coeffs(), &cfg.see_saw) {
            Ok(opt) => {
                if best.as_ref().is_none_or(|(_, v)| opt.value > *v + 1e-12) {
                    best = Some((opt.setup, opt.value));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e.to_string());
            }
        }
    }
    let (setup, _) =
        best.ok_or_else(|| Error::NoRestartCompleted(first_err.unwrap_or_default()))?;
    let v = violation(&born_box(state, &setup)?, f)?;
    Ok((setup, v))
}
