//! Nonlocal capacity by alternating minimization.
//!
//! Each outer iteration computes the capacity of the current channel
//! `rho(s|a)` (Blahut-Arimoto), rebuilds the nonsignaling auxiliary
//! distribution, solves the multiplier equations by Newton's method, and
//! projects back onto the extensions of the box. The multipliers double as a
//! dual certificate, so every iteration yields both an upper and a lower bound
//! and the loop stops on the duality gap.

mod channel;
mod dual;
mod newton;

pub use channel::{channel_capacity, channel_capacity_from, CapacityEstimate, Channel};
pub use dual::{dual_lower_bound, shift_constant, DualWitness, MASKED_LAMBDA};
pub use newton::{solve_lambda, update_aux, update_extension, AuxDistribution, LambdaSolution};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nsbox::{extension_residual, InputDist, JointExtension, NSBox};
use newton::{solve_lambda_with, BlockLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once upper minus lower bound (bits) falls below this.
    pub gap_tol: f64,
    pub max_outer_iters: usize,
    /// Max-norm residual accepted for the multiplier equations.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// When set, the input distribution is held fixed and the result is the
    /// mutual-information minimum for that distribution.
    pub fixed_input_dist: Option<InputDist>,
    pub init_seed: u64,
    /// Relative size of the random perturbation of the starting extension.
    pub init_perturbation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            max_outer_iters: 200_000,
            newton_tol: 1e-12,
            newton_max_iters: 200,
            fixed_input_dist: None,
            init_seed: 0,
            init_perturbation: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) || !(self.newton_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "gap_tol and newton_tol must be positive".into(),
            ));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidConfig(
                "max_outer_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    /// Upper bound on the capacity (bits): capacity of the final extension's channel.
    pub capacity: f64,
    /// Dual lower bound (bits) certified by `witness`.
    pub lower_bound: f64,
    pub gap: f64,
    pub witness: DualWitness,
    pub extension: JointExtension,
    pub iterations: usize,
    pub converged: bool,
    /// Extension residual of the final iterate.
    pub newton_residual: f64,
    /// Upper bound after every outer iteration; nonincreasing up to round-off.
    pub history: Vec<f64>,
}

/// Nonlocal capacity of `nsbox` in bits.
///
/// Returns [`Error::IterationLimit`] carrying the best iterate when the gap
/// does not close within `max_outer_iters`.
pub fn nonlocal_capacity(nsbox: &NSBox, cfg: &SolverConfig) -> Result<SolverResult> {
    nonlocal_capacity_from(nsbox, cfg, None)
}

/// As [`nonlocal_capacity`], starting from a previous extension (of any box of
/// the same shape). Entries are mixed with the uniform extension so the start
/// stays strictly positive on the support of `nsbox`.
pub fn nonlocal_capacity_from(
    nsbox: &NSBox,
    cfg: &SolverConfig,
    warm: Option<&JointExtension>,
) -> Result<SolverResult> {
    let result = solve(nsbox, cfg, warm)?;
    if result.converged {
        Ok(result)
    } else {
        Err(Error::IterationLimit(Box::new(result)))
    }
}

/// Maps [`Error::IterationLimit`] back to its best-so-far result.
pub fn best_effort(outcome: Result<SolverResult>) -> Result<SolverResult> {
    match outcome {
        Err(Error::IterationLimit(res)) => Ok(*res),
        other => other,
    }
}

fn initial_extension(
    layout: &BlockLayout,
    cfg: &SolverConfig,
    warm: Option<&JointExtension>,
) -> Result<JointExtension> {
    let mut ext = layout.uniform_extension()?;
    let sh = ext.shape();
    if let Some(prev) = warm.filter(|w| w.shape() == sh) {
        const MIX: f64 = 1e-6;
        for (e, p) in ext.as_mut_slice().iter_mut().zip(prev.as_slice()) {
            if *e > 0.0 {
                *e = (1.0 - MIX) * p.max(0.0) + MIX * *e;
            }
        }
    } else if cfg.init_perturbation > 0.0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.init_seed);
        for e in ext.as_mut_slice().iter_mut().filter(|e| **e > 0.0) {
            *e *= 1.0 + cfg.init_perturbation * rng.gen::<f64>();
        }
    }
    // Only the support matters for the first channel; renormalize per setting.
    for a in 0..sh.a {
        let mut total = 0.0;
        for r in 0..sh.r {
            for q in 0..ext.sequences() {
                total += ext.get(r, q, a);
            }
        }
        for r in 0..sh.r {
            for q in 0..ext.sequences() {
                let v = ext.get(r, q, a) / total;
                ext.set(r, q, a, v);
            }
        }
    }
    Ok(ext)
}

fn solve(nsbox: &NSBox, cfg: &SolverConfig, warm: Option<&JointExtension>) -> Result<SolverResult> {
    cfg.check()?;
    let sh = nsbox.shape();
    if let Some(d) = &cfg.fixed_input_dist {
        if d.len() != sh.a {
            return Err(Error::ShapeMismatch(format!(
                "fixed input distribution has {} entries for {sh}",
                d.len()
            )));
        }
    }
    let layout = BlockLayout::new(nsbox)?;
    let nq = layout.sequences();
    let ba_tol = cfg.gap_tol / 10.0;

    let mut ext = initial_extension(&layout, cfg, warm)?;
    let mut input_dist = cfg
        .fixed_input_dist
        .clone()
        .unwrap_or_else(|| InputDist::uniform(sh.a));
    let mut history = Vec::new();
    let mut best: Option<(f64, JointExtension, f64)> = None;
    let mut best_witness: Option<(f64, DualWitness)> = None;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..=cfg.max_outer_iters {
        // Step 2: capacity of the current channel (or I(A;S) at the fixed law).
        let channel = Channel::new(sh.a, nq, ext.channel())?;
        let upper = match &cfg.fixed_input_dist {
            Some(d) => channel.mutual_information(d.as_slice()),
            None => {
                let est = channel_capacity_from(&channel, ba_tol, Some(&input_dist))?;
                input_dist = est.maximizer;
                est.upper
            }
        };
        if iter > 0 {
            history.push(upper);
            if best.as_ref().is_none_or(|(u, _, _)| upper < *u) {
                let residual = extension_residual(&ext, nsbox)?;
                best = Some((upper, ext.clone(), residual));
            }
            let lower = best_witness.as_ref().map_or(f64::NEG_INFINITY, |(l, _)| *l);
            let gap = best.as_ref().map_or(f64::INFINITY, |(u, _, _)| *u) - lower;
            if gap < cfg.gap_tol {
                converged = true;
                break;
            }
        }
        if iter == cfg.max_outer_iters {
            break;
        }
        iterations = iter + 1;

        // Steps 3-5.
        let aux = update_aux(&ext, &input_dist)?;
        let sol = solve_lambda_with(&layout, &aux, &input_dist, nsbox, cfg)?;
        ext = update_extension(&aux, &sol.lambda)?;

        let witness = DualWitness::feasible(sh, &sol.lambda, input_dist.clone())?;
        let lower = dual_lower_bound(&witness, nsbox)?;
        if best_witness.as_ref().is_none_or(|(l, _)| lower > *l) {
            best_witness = Some((lower, witness));
        }
    }

    let (capacity, extension, newton_residual) = best.expect("at least one full iteration runs");
    let (lower_bound, witness) = best_witness.expect("at least one full iteration runs");
    Ok(SolverResult {
        capacity,
        lower_bound,
        gap: capacity - lower_bound,
        witness,
        extension,
        iterations,
        converged,
        newton_residual,
        history,
    })
}
