use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use super::functional::vertex_pairs;
use crate::error::{Error, Result};
use crate::nsbox::{sequence_table, NSBox};

/// Feasibility tolerance of the locality test.
pub const LOCALITY_TOL: f64 = 1e-8;

/// Weight of one deterministic vertex in a local decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexWeight {
    /// Alice's answer for every setting.
    pub alice: Vec<usize>,
    /// Bob's answer for every setting.
    pub bob: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locality {
    pub local: bool,
    /// Smallest max-norm distance between the box and the local polytope found by the LP.
    pub distance: f64,
    /// Convex weights (nonzero entries only) when `local`.
    pub weights: Option<Vec<VertexWeight>>,
}

/// Decides whether `nsbox` is a convex combination of deterministic vertices.
///
/// Solves `min t` subject to `|sum_v w_v V_v - P| <= t` entrywise, `w` in the
/// simplex; the box is local when the optimum is at most `tol`.
pub fn is_local(nsbox: &NSBox, tol: f64) -> Result<Locality> {
    let sh = nsbox.shape();
    vertex_pairs(sh)?;
    let alice = sequence_table(sh.r, sh.a);
    let bob = sequence_table(sh.s, sh.b);
    let (na, nb) = (alice.len() / sh.a, bob.len() / sh.b);

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    let w: Vec<_> = (0..na * nb).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    lp.add_constraint(
        w.iter().map(|v| (*v, 1.0)).collect::<Vec<_>>(),
        ComparisonOp::Eq,
        1.0,
    );

    for r in 0..sh.r {
        for s in 0..sh.s {
            for a in 0..sh.a {
                for b in 0..sh.b {
                    let mut terms = Vec::new();
                    for i in (0..na).filter(|i| alice[i * sh.a + a] == r) {
                        for j in (0..nb).filter(|j| bob[j * sh.b + b] == s) {
                            terms.push((w[i * nb + j], 1.0));
                        }
                    }
                    let p = nsbox.get(r, s, a, b);
                    let mut upper = terms.clone();
                    upper.push((t, -1.0));
                    lp.add_constraint(upper, ComparisonOp::Le, p);
                    terms.push((t, 1.0));
                    lp.add_constraint(terms, ComparisonOp::Ge, p);
                }
            }
        }
    }

    let solution = lp
        .solve()
        .map_err(|e| Error::LpNumericalFailure(e.to_string()))?;
    let distance = *solution.var_value(t);
    if !distance.is_finite() {
        return Err(Error::LpNumericalFailure(format!(
            "non-finite objective {distance}"
        )));
    }
    let local = distance <= tol;
    let weights = local.then(|| {
        let mut out = Vec::new();
        for i in 0..na {
            for j in 0..nb {
                let weight = *solution.var_value(w[i * nb + j]);
                if weight > 1e-12 {
                    out.push(VertexWeight {
                        alice: alice[i * sh.a..(i + 1) * sh.a].to_vec(),
                        bob: bob[j * sh.b..(j + 1) * sh.b].to_vec(),
                        weight,
                    });
                }
            }
        }
        out
    });
    Ok(Locality {
        local,
        distance,
        weights,
    })
}
