use serde::{Deserialize, Serialize};

use crate::bell::{
    cglmp3_functional, chsh_functional, extract_bell, max_facet_alignment, BellFunctional, NSBasis,
    Violation,
};
use crate::error::{Error, Result};
use crate::nsbox::{BoxShape, JointExtension};
use crate::quantum::{
    born_box, maximize_functional, DensityOperator, GammaState, MeasurementSetup,
};
use crate::solver::{best_effort, nonlocal_capacity_from, DualWitness};

use super::setup_search::{
    finish_outcome, maximize_bell_violation_stream, optimize_from, restart_runs, stream_rng,
    OptimizeConfig, SetupRun,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Capacity maximized over setups.
    Optimize,
    /// Capacity at the setup maximizing the reference Bell violation.
    BellThenCapacity,
    /// Capacity at a fixed setup.
    Fixed,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Optimize => "optimize",
            SweepMode::BellThenCapacity => "bell-then-capacity",
            SweepMode::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimize" => Ok(SweepMode::Optimize),
            "bell-then-capacity" => Ok(SweepMode::BellThenCapacity),
            "fixed" => Ok(SweepMode::Fixed),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    /// Points in order, each warm-started from the previous one; cold
    /// multi-starts only at the first, middle and last point.
    SequentialWarm,
    /// Every point cold multi-started, points evaluated concurrently.
    ParallelCold,
}

/// Setup held fixed in [`SweepMode::Fixed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSetup {
    pub setup: MeasurementSetup,
    /// Below this `gamma1` the setup is re-optimized for the reference violation.
    pub reoptimize_below: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub execution: Execution,
    pub optimize: OptimizeConfig,
    /// Defaults to the preset of the shape, re-optimized below 0.63 for 2233.
    pub fixed: Option<FixedSetup>,
    /// Bisection rounds around the capacity argmax (plus one pass over [0.55, 0.70]).
    pub refine_rounds: usize,
}

impl SweepConfig {
    pub fn new(mode: SweepMode, execution: Execution) -> Self {
        Self {
            mode,
            execution,
            optimize: OptimizeConfig::default(),
            fixed: None,
            refine_rounds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma1: f64,
    pub gamma2: f64,
    pub mode: SweepMode,
    pub capacity: f64,
    pub lower_bound: f64,
    /// `B/2 - 1` for the maximal reference violation `B`, floored at 0.
    pub cmin_bell: f64,
    pub delta_b: f64,
    /// Alignment of the extracted functional with the reference orbit.
    pub s_b: f64,
    pub iterations: usize,
    pub converged: bool,
    pub setup: Option<MeasurementSetup>,
    pub bell_setup: Option<MeasurementSetup>,
    pub witness: Option<DualWitness>,
    pub error: Option<String>,
}

impl SweepPoint {
    fn failed(gamma1: f64, gamma2: f64, mode: SweepMode, e: Error) -> Self {
        Self {
            gamma1,
            gamma2,
            mode,
            capacity: f64::NAN,
            lower_bound: f64::NAN,
            cmin_bell: f64::NAN,
            delta_b: f64::NAN,
            s_b: f64::NAN,
            iterations: 0,
            converged: false,
            setup: None,
            bell_setup: None,
            witness: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub shape: BoxShape,
    pub mode: SweepMode,
    pub execution: Execution,
    pub points: Vec<SweepPoint>,
}

const CONTINUATION_TOL: f64 = 1e-7;
const CONTINUATION_STEP: f64 = 0.005;
const KICK: f64 = 1e-3;

pub const CSV_HEADER: &str =
    "gamma1,gamma2,mode,capacity,lower_bound,cmin_bell,delta_b,s_b,iterations,converged";

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{},{}\n",
                p.gamma1,
                p.gamma2,
                p.mode.as_str(),
                p.capacity,
                p.lower_bound,
                p.cmin_bell,
                p.delta_b,
                p.s_b,
                p.iterations,
                p.converged
            ));
        }
        out
    }

    /// Index of the largest finite value of `column`.
    pub fn argmax_by(&self, column: impl Fn(&SweepPoint) -> f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            let v = column(p);
            if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// `{0.02, 0.04, ..., 1.00}`.
pub fn default_grid() -> Vec<f64> {
    (1..=50).map(|k| k as f64 / 50.0).collect()
}

/// Reference Bell family of a shape: CHSH for 2222, CGLMP3 for 2233.
pub fn reference_functional(shape: BoxShape) -> Option<BellFunctional> {
    let (chsh, cglmp) = (chsh_functional(), cglmp3_functional());
    if shape == chsh.shape() {
        Some(chsh)
    } else if shape == cglmp.shape() {
        Some(cglmp)
    } else {
        None
    }
}

pub fn preset_setup(shape: BoxShape) -> Option<MeasurementSetup> {
    if shape == chsh_functional().shape() {
        Some(MeasurementSetup::tsirelson())
    } else if shape == cglmp3_functional().shape() {
        Some(MeasurementSetup::cglmp3())
    } else {
        None
    }
}

struct Reference {
    functional: BellFunctional,
    orbit: Vec<BellFunctional>,
    basis: NSBasis,
    preset: Option<MeasurementSetup>,
}

struct Context<'a> {
    shape: BoxShape,
    gamma2: f64,
    cfg: &'a SweepConfig,
    reference: Option<Reference>,
    fixed: Option<FixedSetup>,
    /// Violation maximizers continued downward from the fixed setup.
    path: Option<Vec<(f64, MeasurementSetup)>>,
}

#[derive(Clone, Default)]
struct Warm {
    bell_setup: Option<MeasurementSetup>,
    setup: Option<MeasurementSetup>,
    extension: Option<JointExtension>,
}

fn stream_base(gamma1: f64) -> u64 {
    ((gamma1 * 1e6).round() as u64) << 32
}

impl Context<'_> {
    fn state(&self, gamma1: f64) -> Result<DensityOperator> {
        if self.shape.r != self.shape.s {
            return Err(Error::DimensionMismatch(format!(
                "gamma states need R = S, got {}",
                self.shape
            )));
        }
        GammaState::new(gamma1, self.gamma2)?.density_in(self.shape.r)
    }

    fn evaluate(&self, gamma1: f64, warm: &Warm, cold: bool) -> (SweepPoint, Warm) {
        match self.try_evaluate(gamma1, warm, cold) {
            Ok(r) => r,
            Err(e) => (
                SweepPoint::failed(gamma1, self.gamma2, self.cfg.mode, e),
                warm.clone(),
            ),
        }
    }

    fn try_evaluate(&self, gamma1: f64, warm: &Warm, cold: bool) -> Result<(SweepPoint, Warm)> {
        let state = self.state(gamma1)?;
        let opt = &self.cfg.optimize;
        let base = stream_base(gamma1);

        let mut bell = None;
        if let Some(reference) = &self.reference {
            let mut starts: Vec<MeasurementSetup> = reference.preset.iter().cloned().collect();
            starts.extend(warm.bell_setup.iter().cloned());
            let bell_cfg = OptimizeConfig {
                restarts: if cold || warm.bell_setup.is_none() {
                    opt.restarts
                } else {
                    1
                },
                ..opt.clone()
            };
            bell = Some(maximize_bell_violation_stream(
                &state,
                &reference.functional,
                &bell_cfg,
                &starts,
                base,
            )?);
        }

        let run: SetupRun = match self.cfg.mode {
            SweepMode::Optimize => {
                let mut runs = if cold || warm.setup.is_none() {
                    restart_runs(&state, self.shape, opt, base)
                } else {
                    Vec::new()
                };
                if let Some(prev) = &warm.setup {
                    runs.push(optimize_from(&state, prev, opt, warm.extension.as_ref()));
                }
                if let Some((bs, _)) = &bell {
                    runs.push(optimize_from(&state, bs, opt, None));
                }
                finish_outcome(&state, runs)?.best
            }
            SweepMode::BellThenCapacity | SweepMode::Fixed => {
                let setup = match (self.cfg.mode, &self.fixed) {
                    (SweepMode::Fixed, Some(f))
                        if f.reoptimize_below.is_none_or(|t| gamma1 >= t) =>
                    {
                        f.setup.clone()
                    }
                    _ if self.path.is_some() => {
                        self.continued_bell_setup(&state, gamma1, bell.as_ref())?
                    }
                    _ => match &bell {
                        Some((s, _)) => s.clone(),
                        None => {
                            return Err(Error::InvalidConfig(format!(
                                "no reference functional for shape {}",
                                self.shape
                            )))
                        }
                    },
                };
                let result = best_effort(nonlocal_capacity_from(
                    &born_box(&state, &setup)?,
                    &opt.solver,
                    warm.extension.as_ref(),
                ))?;
                SetupRun {
                    setup,
                    result,
                    trace: Default::default(),
                }
            }
        };

        let (mut cmin_bell, mut delta_b, mut s_b) = (f64::NAN, f64::NAN, f64::NAN);
        if let (Some(reference), Some((_, v))) = (&self.reference, &bell) {
            cmin_bell = (0.5 * v.value - 1.0).max(0.0);
            delta_b = v.delta_b;
            s_b = max_facet_alignment(
                &extract_bell(&run.result.witness)?,
                &reference.orbit,
                &reference.basis,
            )?;
        }
        let point = SweepPoint {
            gamma1,
            gamma2: self.gamma2,
            mode: self.cfg.mode,
            capacity: run.result.capacity,
            lower_bound: run.result.lower_bound,
            cmin_bell,
            delta_b,
            s_b,
            iterations: run.result.iterations,
            converged: run.result.converged,
            setup: Some(run.setup.clone()),
            bell_setup: bell.as_ref().map(|(s, _)| s.clone()),
            witness: Some(run.result.witness.clone()),
            error: None,
        };
        let next = Warm {
            bell_setup: bell.map(|(s, _)| s),
            setup: Some(run.setup),
            extension: Some(run.result.extension),
        };
        Ok((point, next))
    }

    /// The violation maximizers form a family along which the capacity
    /// varies, so below the threshold the setup follows the maximizer
    /// continued from the fixed setup, unless it misses the multi-start maximum.
    fn continued_bell_setup(
        &self,
        state: &DensityOperator,
        gamma1: f64,
        bell: Option<&(MeasurementSetup, Violation)>,
    ) -> Result<MeasurementSetup> {
        let (Some(reference), Some(path)) = (&self.reference, &self.path) else {
            return Err(Error::InvalidConfig(
                "continuation needs a reference functional".into(),
            ));
        };
        let node = path
            .iter()
            .rev()
            .find(|(g, _)| *g >= gamma1)
            .unwrap_or(&path[0]);
        let (setup, value) = ascend_with_kick(
            state,
            &node.1,
            reference,
            &self.cfg.optimize,
            stream_base(gamma1),
        )?;
        Ok(match bell {
            Some((s, v)) if v.value > value + CONTINUATION_TOL => s.clone(),
            _ => setup,
        })
    }

    fn run_points(&self, gammas: &[f64], seeds: &[Warm]) -> Vec<(SweepPoint, Warm)> {
        match self.cfg.execution {
            Execution::ParallelCold => {
                let eval = |&g: &f64| self.evaluate(g, &Warm::default(), true);
                #[cfg(feature = "parallel")]
                {
                    use rayon::prelude::*;
                    gammas.par_iter().map(eval).collect()
                }
                #[cfg(not(feature = "parallel"))]
                {
                    gammas.iter().map(eval).collect()
                }
            }
            Execution::SequentialWarm => {
                let n = gammas.len();
                let anchors = [0, n / 2, n.saturating_sub(1)];
                let mut warm = Warm::default();
                let mut out = Vec::with_capacity(n);
                for (i, &g) in gammas.iter().enumerate() {
                    if let Some(seed) = seeds.get(i) {
                        warm = seed.clone();
                    }
                    let (p, next) = self.evaluate(g, &warm, anchors.contains(&i));
                    if p.error.is_none() {
                        warm = next.clone();
                    }
                    out.push((p, next));
                }
                out
            }
        }
    }
}

/// Capacity and reference violation along `gamma1_list` for the states
/// `GammaState(gamma1, gamma2)` in local dimension `shape.r`.
/// Per-point failures are recorded in the table.
pub fn sweep_gamma(
    gamma1_list: &[f64],
    gamma2: f64,
    shape: BoxShape,
    cfg: &SweepConfig,
) -> Result<SweepTable> {
    cfg.optimize.check()?;
    if let Some(g) = gamma1_list.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidConfig(format!("gamma1 = {g} outside [0, 1]")));
    }
    let reference = match reference_functional(shape) {
        Some(functional) => Some(Reference {
            orbit: functional.relabel_orbit(),
            basis: NSBasis::new(shape)?,
            preset: preset_setup(shape),
            functional,
        }),
        None => None,
    };
    let fixed = match (&cfg.fixed, preset_setup(shape)) {
        (Some(f), _) => Some(f.clone()),
        (None, Some(setup)) => {
            let reoptimize_below = (shape == cglmp3_functional().shape()).then_some(0.63);
            Some(FixedSetup {
                setup,
                reoptimize_below,
            })
        }
        (None, None) => None,
    };
    if cfg.mode == SweepMode::Fixed && fixed.is_none() {
        return Err(Error::InvalidConfig(format!(
            "fixed mode needs a setup for shape {shape}"
        )));
    }
    let mut ctx = Context {
        shape,
        gamma2,
        cfg,
        reference,
        fixed,
        path: None,
    };
    // Path start: the fixed setup at its threshold, or the preset at gamma1 = 1.
    let start = match (cfg.mode, &ctx.fixed, &ctx.reference) {
        (
            SweepMode::Fixed,
            Some(FixedSetup {
                setup,
                reoptimize_below: Some(t),
            }),
            Some(_),
        ) => Some((*t, setup.clone())),
        (SweepMode::BellThenCapacity, _, Some(r)) => r.preset.clone().map(|s| (1.0, s)),
        _ => None,
    };
    if let (Some((t, setup)), Some(reference)) = (start, &ctx.reference) {
        // A failed path leaves each point to report its own error.
        ctx.path = continuation_path(&ctx, &setup, t, reference).ok();
    }

    let mut evaluated: Vec<(SweepPoint, Warm)> = ctx.run_points(gamma1_list, &[]);
    for round in 0..cfg.refine_rounds {
        evaluated.sort_by(|x, y| x.0.gamma1.total_cmp(&y.0.gamma1));
        let points: Vec<&SweepPoint> = evaluated.iter().map(|e| &e.0).collect();
        let mut extra = Vec::new();
        if let Some(i) = argmax(&points) {
            if i > 0 {
                extra.push(0.5 * (points[i - 1].gamma1 + points[i].gamma1));
            }
            if i + 1 < points.len() {
                extra.push(0.5 * (points[i].gamma1 + points[i + 1].gamma1));
            }
        }
        if round == 0 {
            for w in points.windows(2) {
                let mid = 0.5 * (w[0].gamma1 + w[1].gamma1);
                if (0.55..=0.70).contains(&mid) {
                    extra.push(mid);
                }
            }
        }
        extra.sort_by(f64::total_cmp);
        extra.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        extra.retain(|g| points.iter().all(|p| (p.gamma1 - g).abs() > 1e-12));
        if extra.is_empty() {
            break;
        }
        // Each new point starts from its nearest evaluated neighbor.
        let seeds: Vec<Warm> = extra
            .iter()
            .map(|g| {
                evaluated
                    .iter()
                    .filter(|e| e.0.error.is_none())
                    .min_by(|x, y| (x.0.gamma1 - g).abs().total_cmp(&(y.0.gamma1 - g).abs()))
                    .map(|e| e.1.clone())
                    .unwrap_or_default()
            })
            .collect();
        let new_points = ctx.run_points(&extra, &seeds);
        evaluated.extend(new_points);
    }
    evaluated.sort_by(|x, y| x.0.gamma1.total_cmp(&y.0.gamma1));
    Ok(SweepTable {
        shape,
        mode: cfg.mode,
        execution: cfg.execution,
        points: evaluated.into_iter().map(|e| e.0).collect(),
    })
}

/// Maximizes the reference violation from `from` and from a slightly
/// perturbed copy, which leaves saddle points the plain ascent stalls on.
fn ascend_with_kick(
    state: &DensityOperator,
    from: &MeasurementSetup,
    reference: &Reference,
    cfg: &OptimizeConfig,
    stream: u64,
) -> Result<(MeasurementSetup, f64)> {
    let coeffs = reference.functional.coeffs();
    let plain = maximize_functional(state, from, coeffs, &cfg.see_saw)?;
    let mut rng = stream_rng(cfg.seed, stream | (1 << 30));
    let kicked = maximize_functional(state, &from.perturbed(KICK, &mut rng), coeffs, &cfg.see_saw)?;
    Ok(if kicked.value > plain.value + CONTINUATION_TOL {
        (kicked.setup, kicked.value)
    } else {
        (plain.setup, plain.value)
    })
}

fn continuation_path(
    ctx: &Context<'_>,
    start: &MeasurementSetup,
    threshold: f64,
    reference: &Reference,
) -> Result<Vec<(f64, MeasurementSetup)>> {
    let mut path = vec![(threshold, start.clone())];
    let steps = (threshold / CONTINUATION_STEP).floor() as usize;
    for k in 1..=steps {
        let g = threshold - k as f64 * CONTINUATION_STEP;
        let state = ctx.state(g)?;
        let prev = &path.last().expect("path starts nonempty").1;
        let (setup, _) =
            ascend_with_kick(&state, prev, reference, &ctx.cfg.optimize, stream_base(g))?;
        path.push((g, setup));
    }
    Ok(path)
}

fn argmax(points: &[&SweepPoint]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if p.capacity.is_finite() && best.is_none_or(|(_, b)| p.capacity > b) {
            best = Some((i, p.capacity));
        }
    }
    best.map(|(i, _)| i)
}
