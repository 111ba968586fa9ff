use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::setup::{born_tensor, reorthonormalize, Basis, CVector, MeasurementSetup};
use super::state::{CMatrix, DensityOperator};
use crate::error::{Error, Party, Result};
use crate::nsbox::{BoxShape, InputDist};
use crate::solver::DualWitness;

/// Per `(outcome, setting)` Hermitian operators whose expectation values in
/// one party's bases give the objective; index `setting * dim + outcome`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveOperators {
    pub party: Party,
    pub settings: usize,
    pub dim: usize,
    pub ops: Vec<CMatrix>,
}

impl EffectiveOperators {
    pub fn op(&self, setting: usize, outcome: usize) -> &CMatrix {
        &self.ops[setting * self.dim + outcome]
    }

    /// `sum_{a,r} <v_{a,r}| O(r,a) |v_{a,r}>`.
    pub fn objective(&self, bases: &[Basis]) -> f64 {
        (0..self.settings)
            .map(|a| setting_objective(self, a, &bases[a]))
            .sum()
    }

    /// `max_{a, i != j} |<v_i| O(i,a) - O(j,a) |v_j>|`.
    pub fn stationarity_residual(&self, bases: &[Basis]) -> f64 {
        let mut worst = 0.0f64;
        for (a, basis) in bases.iter().enumerate().take(self.settings) {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    if i != j {
                        let d = self.op(a, i) - self.op(a, j);
                        worst = worst.max(sandwich(&basis[i], &d, &basis[j]).norm());
                    }
                }
            }
        }
        worst
    }
}

fn setting_objective(ops: &EffectiveOperators, a: usize, basis: &Basis) -> f64 {
    basis
        .iter()
        .enumerate()
        .map(|(r, v)| sandwich(v, ops.op(a, r), v).re)
        .sum()
}

fn sandwich(u: &CVector, m: &CMatrix, v: &CVector) -> Complex64 {
    u.dotc(&(m * v))
}

/// `<beta|_B rho |beta>_B`, an operator on Alice's space.
fn partial_bob(state: &DensityOperator, beta: &CVector) -> CMatrix {
    let (da, db) = state.dims();
    CMatrix::from_fn(da, da, |i, k| {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..db {
            for l in 0..db {
                acc += beta[j].conj() * state.at(i, j, k, l) * beta[l];
            }
        }
        acc
    })
}

/// `<alpha|_A rho |alpha>_A`, an operator on Bob's space.
fn partial_alice(state: &DensityOperator, alpha: &CVector) -> CMatrix {
    let (da, db) = state.dims();
    CMatrix::from_fn(db, db, |j, l| {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..da {
            for k in 0..da {
                acc += alpha[i].conj() * state.at(i, j, k, l) * alpha[k];
            }
        }
        acc
    })
}

fn check_coeffs(shape: BoxShape, state: &DensityOperator, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != shape.len() {
        return Err(Error::LengthMismatch {
            expected: shape.len(),
            found: coeffs.len(),
        });
    }
    if state.dims() != (shape.r, shape.s) {
        return Err(Error::DimensionMismatch(format!(
            "state dims {:?} vs shape {shape}",
            state.dims()
        )));
    }
    Ok(())
}

/// Alice-side operators `O(r,a) = sum_{s,b} C(r,s,a,b) <beta_{b,s}| rho |beta_{b,s}>`.
pub fn alice_operators(
    state: &DensityOperator,
    bob: &[Basis],
    shape: BoxShape,
    coeffs: &[f64],
) -> Result<EffectiveOperators> {
    check_coeffs(shape, state, coeffs)?;
    if bob.len() != shape.b {
        return Err(Error::DimensionMismatch(format!(
            "{} Bob bases for {shape}",
            bob.len()
        )));
    }
    let partials: Vec<CMatrix> = (0..shape.b)
        .flat_map(|b| (0..shape.s).map(move |s| (b, s)))
        .map(|(b, s)| partial_bob(state, &bob[b][s]))
        .collect();
    let mut ops = vec![CMatrix::zeros(shape.r, shape.r); shape.a * shape.r];
    for a in 0..shape.a {
        for r in 0..shape.r {
            let op = &mut ops[a * shape.r + r];
            for b in 0..shape.b {
                for s in 0..shape.s {
                    let c = coeffs[shape.index(r, s, a, b)];
                    if c != 0.0 {
                        *op += partials[b * shape.s + s].scale(c);
                    }
                }
            }
        }
    }
    Ok(EffectiveOperators {
        party: Party::Alice,
        settings: shape.a,
        dim: shape.r,
        ops,
    })
}

/// Bob-side mirror `O(s,b) = sum_{r,a} C(r,s,a,b) <alpha_{a,r}| rho |alpha_{a,r}>`.
pub fn bob_operators(
    state: &DensityOperator,
    alice: &[Basis],
    shape: BoxShape,
    coeffs: &[f64],
) -> Result<EffectiveOperators> {
    check_coeffs(shape, state, coeffs)?;
    if alice.len() != shape.a {
        return Err(Error::DimensionMismatch(format!(
            "{} Alice bases for {shape}",
            alice.len()
        )));
    }
    let partials: Vec<CMatrix> = (0..shape.a)
        .flat_map(|a| (0..shape.r).map(move |r| (a, r)))
        .map(|(a, r)| partial_alice(state, &alice[a][r]))
        .collect();
    let mut ops = vec![CMatrix::zeros(shape.s, shape.s); shape.b * shape.s];
    for b in 0..shape.b {
        for s in 0..shape.s {
            let op = &mut ops[b * shape.s + s];
            for a in 0..shape.a {
                for r in 0..shape.r {
                    let c = coeffs[shape.index(r, s, a, b)];
                    if c != 0.0 {
                        *op += partials[a * shape.r + r].scale(c);
                    }
                }
            }
        }
    }
    Ok(EffectiveOperators {
        party: Party::Bob,
        settings: shape.b,
        dim: shape.s,
        ops,
    })
}

/// Alice's operators for the dual objective, weighted by `rho(a)` so that
/// [`EffectiveOperators::objective`] is `I_dual` itself.
pub fn effective_operators(
    state: &DensityOperator,
    bob: &[Basis],
    lambda: &[f64],
    input_dist: &InputDist,
) -> Result<EffectiveOperators> {
    let (da, db) = state.dims();
    let a_count = input_dist.len();
    let shape = BoxShape::new(a_count, bob.len(), da, db)?;
    if lambda.len() != shape.len() {
        return Err(Error::LengthMismatch {
            expected: shape.len(),
            found: lambda.len(),
        });
    }
    let pa = input_dist.as_slice();
    let coeffs: Vec<f64> = (0..shape.len())
        .map(|i| pa[shape.unindex(i).2] * lambda[i])
        .collect();
    alice_operators(state, bob, shape, &coeffs)
}

/// Settings for the cyclic pair rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSweep {
    /// Stationarity residual accepted at convergence, relative to the largest
    /// operator entry (floored at 1).
    pub tol: f64,
    pub max_sweeps: usize,
    /// Record the objective after every pair update.
    pub record: bool,
}

impl Default for PairSweep {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_sweeps: 10_000,
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartyOptimum {
    pub bases: Vec<Basis>,
    pub objective: f64,
    pub residual: f64,
    pub sweeps: usize,
    /// Objective after each pair update (only with [`PairSweep::record`]).
    pub trace: Vec<f64>,
}

/// Maximizes `sum <v_{a,r}|O(r,a)|v_{a,r}>` over orthonormal bases by
/// rotating pairs `(i, j)`, `i < j`, in lexicographic order. Each rotation is
/// the exact maximizer within `span{v_i, v_j}`, so the objective never drops.
pub fn optimize_party_bases(
    ops: &EffectiveOperators,
    start: &[Basis],
    cfg: &PairSweep,
) -> Result<PartyOptimum> {
    if start.len() != ops.settings
        || start
            .iter()
            .any(|b| b.len() != ops.dim || b.iter().any(|v| v.len() != ops.dim))
    {
        return Err(Error::DimensionMismatch(format!(
            "{} bases for {} settings of dimension {}",
            start.len(),
            ops.settings,
            ops.dim
        )));
    }
    let scale = ops
        .ops
        .iter()
        .flat_map(|m| m.iter())
        .fold(1.0f64, |m, z| m.max(z.norm()));
    let tol = cfg.tol * scale;
    let mut bases = start.to_vec();
    let mut trace = Vec::new();
    let mut total = if cfg.record {
        ops.objective(&bases)
    } else {
        0.0
    };
    let mut sweeps = 0;
    let mut residual = ops.stationarity_residual(&bases);
    while residual >= tol {
        if sweeps >= cfg.max_sweeps {
            return Err(Error::StagnationWithoutConvergence { residual });
        }
        sweeps += 1;
        for (a, basis) in bases.iter_mut().enumerate() {
            for i in 0..ops.dim {
                for j in i + 1..ops.dim {
                    let gain = rotate_pair(ops.op(a, i), ops.op(a, j), basis, i, j, scale);
                    if cfg.record {
                        total += gain;
                        trace.push(total);
                    }
                }
            }
            reorthonormalize(basis);
        }
        residual = ops.stationarity_residual(&bases);
    }
    let objective = ops.objective(&bases);
    Ok(PartyOptimum {
        bases,
        objective,
        residual,
        sweeps,
        trace,
    })
}

/// Best rotation of `(v_i, v_j)` within their span; returns the objective gain.
fn rotate_pair(
    oi: &CMatrix,
    oj: &CMatrix,
    basis: &mut Basis,
    i: usize,
    j: usize,
    scale: f64,
) -> f64 {
    let d = oi - oj;
    let (vi, vj) = (&basis[i], &basis[j]);
    let p = sandwich(vi, &d, vi).re;
    let r = sandwich(vj, &d, vj).re;
    let q = sandwich(vi, &d, vj);
    let eps = 1e-15 * scale;
    let half = 0.5 * (p - r);
    let disc = (half * half + q.norm_sqr()).sqrt();
    if disc <= eps {
        // Degenerate: every rotation is stationary, keep the incumbent.
        return 0.0;
    }
    // mu - p without cancellation when |q| << |p - r|.
    let gain = if half >= 0.0 {
        q.norm_sqr() / (disc + half)
    } else {
        disc - half
    };
    // The gain is quadratic in the off-diagonal element, so the decision is
    // made on `q` itself; ties keep the incumbent.
    if q.norm() <= eps {
        if p >= r {
            return 0.0;
        }
        basis.swap(i, j);
        return gain;
    }
    let c0 = q.norm();
    let c1 = gain * q.conj() / q.norm();
    let norm = (c0 * c0 + c1.norm_sqr()).sqrt();
    let (c0, c1) = (c0 / norm, c1 / norm);
    let new_i = vi * Complex64::new(c0, 0.0) + vj * c1;
    let new_j = vi * (-c1.conj()) + vj * Complex64::new(c0, 0.0);
    basis[i] = new_i;
    basis[j] = new_j;
    gain
}

/// Settings for the alternating Alice/Bob maximization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeeSaw {
    /// Stop when a full Alice+Bob round gains less than this.
    pub tol: f64,
    pub max_rounds: usize,
    pub pairs: PairSweep,
}

impl Default for SeeSaw {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_rounds: 10_000,
            pairs: PairSweep::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetupOptimum {
    pub setup: MeasurementSetup,
    /// `sum_{r,s,a,b} P(r,s|a,b) C(r,s,a,b)` at the returned setup.
    pub value: f64,
    pub start_value: f64,
    pub rounds: usize,
}

/// `sum P C` for the raw Born tensor of `setup`.
pub fn functional_value(
    state: &DensityOperator,
    setup: &MeasurementSetup,
    coeffs: &[f64],
) -> Result<f64> {
    let p = born_tensor(state, setup)?;
    if coeffs.len() != p.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            found: coeffs.len(),
        });
    }
    Ok(p.iter().zip(coeffs).map(|(p, c)| p * c).sum())
}

/// Block maximization of `sum P C` over both parties' bases, alternating
/// Alice and Bob pair sweeps until a round gains less than `cfg.tol`.
pub fn maximize_functional(
    state: &DensityOperator,
    setup: &MeasurementSetup,
    coeffs: &[f64],
    cfg: &SeeSaw,
) -> Result<SetupOptimum> {
    let shape = setup.shape();
    let start_value = functional_value(state, setup, coeffs)?;
    let (mut alice, mut bob) = setup.clone().into_parts();
    let mut value = start_value;
    let mut rounds = 0;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let ops_a = alice_operators(state, &bob, shape, coeffs)?;
        alice = optimize_party_bases(&ops_a, &alice, &cfg.pairs)?.bases;
        let ops_b = bob_operators(state, &alice, shape, coeffs)?;
        let opt_b = optimize_party_bases(&ops_b, &bob, &cfg.pairs)?;
        bob = opt_b.bases;
        let next = opt_b.objective;
        let gain = next - value;
        value = value.max(next);
        if gain < cfg.tol {
            break;
        }
    }
    let setup = MeasurementSetup::from_parts(alice, bob);
    let value = functional_value(state, &setup, coeffs)?;
    Ok(SetupOptimum {
        setup,
        value,
        start_value,
        rounds,
    })
}

/// Step 3 of the setup optimization: maximizes the dual objective of a fixed
/// witness over the measurement setup. Returns the new setup and `I_dual` (nats).
pub fn maximize_dual_over_setup(
    state: &DensityOperator,
    setup: &MeasurementSetup,
    witness: &DualWitness,
    tol: f64,
) -> Result<(MeasurementSetup, f64)> {
    if witness.shape != setup.shape() {
        return Err(Error::ShapeMismatch(format!(
            "witness {} vs setup {}",
            witness.shape,
            setup.shape()
        )));
    }
    let coeffs = witness.bell_coefficients();
    let opt = maximize_functional(
        state,
        setup,
        &coeffs,
        &SeeSaw {
            tol,
            ..Default::default()
        },
    )?;
    Ok((opt.setup, opt.value))
}
