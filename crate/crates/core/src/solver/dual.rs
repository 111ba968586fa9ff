//! Dual certificates: feasible multipliers and the capacity lower bound they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nsbox::{sequence_table, BoxShape, InputDist, NSBox};

/// Value stored in place of `-inf` multipliers (entries where the box vanishes).
/// `exp` of it is far below any tolerance in use, so the bound it certifies is
/// indistinguishable from the limit.
pub const MASKED_LAMBDA: f64 = -50.0;

/// A feasible point `(lambda, rho(a))` of the dual problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualWitness {
    pub shape: BoxShape,
    /// `lambda(r,s,a,b)` in box layout (natural-log units), already shifted to feasibility.
    pub lambda: Vec<f64>,
    pub input_dist: InputDist,
    /// The `K_lambda` that was spread over the Bob settings to reach feasibility.
    pub shift_applied: f64,
}

impl DualWitness {
    /// Builds a feasible witness from arbitrary finite-or-`-inf` multipliers by
    /// adding `K_lambda / B` to every entry.
    pub fn feasible(shape: BoxShape, lambda: &[f64], input_dist: InputDist) -> Result<Self> {
        if lambda.len() != shape.len() || input_dist.len() != shape.a {
            return Err(Error::ShapeMismatch(format!("witness for {shape}")));
        }
        let finite: Vec<f64> = lambda.iter().map(|v| v.max(MASKED_LAMBDA)).collect();
        let k = shift_constant(shape, &finite, input_dist.as_slice());
        let per = k / shape.b as f64;
        let shifted = finite.iter().map(|v| v + per).collect();
        Ok(Self {
            shape,
            lambda: shifted,
            input_dist,
            shift_applied: k,
        })
    }

    /// `max_s sum_a rho(a) max_r exp(sum_b lambda(r,s_b,a,b)) - 1`; nonpositive when feasible.
    pub fn feasibility_residual(&self) -> f64 {
        (-shift_constant(self.shape, &self.lambda, self.input_dist.as_slice())).exp() - 1.0
    }

    /// Bell coefficients `rho(a) * lambda(r,s,a,b)`.
    pub fn bell_coefficients(&self) -> Vec<f64> {
        let sh = self.shape;
        let pa = self.input_dist.as_slice();
        (0..sh.len())
            .map(|i| pa[sh.unindex(i).2] * self.lambda[i])
            .collect()
    }

    /// The dual objective `sum P rho(a) lambda` in nats.
    pub fn objective_nats(&self, nsbox: &NSBox) -> f64 {
        nsbox.dot(&self.bell_coefficients())
    }
}

/// `K = -log max_s sum_a rho(a) max_r exp(sum_b lambda(r,s_b,a,b))`, evaluated in
/// the log domain.
pub fn shift_constant(shape: BoxShape, lambda: &[f64], rho_a: &[f64]) -> f64 {
    let seqs = sequence_table(shape.s, shape.b);
    let nq = seqs.len() / shape.b;
    let mut worst = f64::NEG_INFINITY;
    let mut inner = vec![0.0; shape.a];
    for q in 0..nq {
        let seq = &seqs[q * shape.b..(q + 1) * shape.b];
        for (a, slot) in inner.iter_mut().enumerate() {
            *slot = (0..shape.r)
                .map(|r| {
                    seq.iter()
                        .enumerate()
                        .map(|(b, &s)| lambda[shape.index(r, s, a, b)])
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let top = inner
            .iter()
            .zip(rho_a)
            .filter(|(_, p)| **p > 0.0)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            continue;
        }
        let lse = top
            + inner
                .iter()
                .zip(rho_a)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, p)| p * (v - top).exp())
                .sum::<f64>()
                .ln();
        worst = worst.max(lse);
    }
    -worst
}

/// Lower bound on the nonlocal capacity of `nsbox`, in bits, certified by any
/// multipliers: `sum P rho(a) lambda + K_lambda`.
pub fn dual_lower_bound(witness: &DualWitness, nsbox: &NSBox) -> Result<f64> {
    if witness.shape != nsbox.shape() {
        return Err(Error::ShapeMismatch(format!(
            "witness {} vs box {}",
            witness.shape,
            nsbox.shape()
        )));
    }
    if witness
        .lambda
        .iter()
        .any(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return Err(Error::InvalidConfig(
            "witness multipliers must be finite".into(),
        ));
    }
    let k = shift_constant(
        witness.shape,
        &witness.lambda,
        witness.input_dist.as_slice(),
    );
    Ok((witness.objective_nats(nsbox) + k) / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s2222() -> BoxShape {
        BoxShape::new(2, 2, 2, 2).unwrap()
    }

    #[test]
    fn zero_multipliers_give_zero_bound() {
        let w = DualWitness::feasible(s2222(), &[0.0; 16], InputDist::uniform(2)).unwrap();
        assert_eq!(w.shift_applied, 0.0);
        assert_eq!(dual_lower_bound(&w, &NSBox::pr_box()).unwrap(), 0.0);
    }

    #[test]
    fn chsh_shaped_multipliers_certify_the_pr_box() {
        // lambda proportional to the CHSH correlator signs.
        let sh = s2222();
        let t = 0.5;
        let lambda: Vec<f64> = (0..16)
            .map(|i| {
                let (r, s, a, b) = sh.unindex(i);
                let sign = if a * b == 1 { -1.0 } else { 1.0 };
                let corr = if r == s { 1.0 } else { -1.0 };
                t * sign * corr
            })
            .collect();
        let w = DualWitness::feasible(sh, &lambda, InputDist::uniform(2)).unwrap();
        assert!(w.feasibility_residual().abs() < 1e-12);
        let bound = dual_lower_bound(&w, &NSBox::pr_box()).unwrap();
        assert!(bound > 0.0 && bound <= 1.0, "{bound}");
        // The same witness certifies nothing for a local box.
        let local = NSBox::deterministic(sh, &[0, 0], &[0, 0]).unwrap();
        assert!(dual_lower_bound(&w, &local).unwrap() <= 1e-12);
    }
}
