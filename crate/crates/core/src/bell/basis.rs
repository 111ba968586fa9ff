use serde::{Deserialize, Serialize};

use super::functional::BellFunctional;
use crate::error::{Error, Result};
use crate::nsbox::{ns_dimension, BoxShape};

const RANK_TOL: f64 = 1e-10;

/// Orthonormal bases adapted to the nonsignaling subspace of `R^{RSAB}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSBasis {
    pub shape: BoxShape,
    /// Directions along which nonsignaling boxes can move; `ns_dimension` vectors.
    pub parallel: Vec<Vec<f64>>,
    /// Orthogonal complement. The first vector is the normalized uniform box,
    /// the remaining ones span the shifts that vanish on every nonsignaling box.
    pub complement: Vec<Vec<f64>>,
}

impl NSBasis {
    pub fn new(shape: BoxShape) -> Result<Self> {
        shape.check()?;
        let n = shape.len();
        let mut complement: Vec<Vec<f64>> = Vec::new();
        let uniform = vec![1.0; n];
        push_orthonormal(&mut complement, uniform);
        for row in constraint_rows(shape) {
            push_orthonormal(&mut complement, row);
        }
        let mut all = complement.clone();
        let mut parallel = Vec::new();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            if push_orthonormal(&mut all, e) {
                parallel.push(all.last().expect("just pushed").clone());
            }
        }
        let expected = ns_dimension(&shape);
        if parallel.len() != expected || parallel.len() + complement.len() != n {
            return Err(Error::InvalidShape(format!(
                "nonsignaling subspace has dimension {} for {shape}, expected {expected}",
                parallel.len()
            )));
        }
        Ok(Self {
            shape,
            parallel,
            complement,
        })
    }

    /// Basis of the shifts `A` with `sum P A = 0` for every nonsignaling `P`.
    pub fn admissible_shifts(&self) -> &[Vec<f64>] {
        &self.complement[1..]
    }

    /// Orthogonal projection onto the nonsignaling directions.
    pub fn project_parallel(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for e in &self.parallel {
            let c = dot(e, v);
            for (o, x) in out.iter_mut().zip(e) {
                *o += c * x;
            }
        }
        out
    }
}

/// Normalization rows per `(a,b)` followed by both nonsignaling families.
fn constraint_rows(sh: BoxShape) -> Vec<Vec<f64>> {
    let n = sh.len();
    let mut rows = Vec::new();
    for a in 0..sh.a {
        for b in 0..sh.b {
            let mut row = vec![0.0; n];
            for r in 0..sh.r {
                for s in 0..sh.s {
                    row[sh.index(r, s, a, b)] = 1.0;
                }
            }
            rows.push(row);
        }
    }
    for a in 0..sh.a {
        for r in 0..sh.r {
            for b in 1..sh.b {
                let mut row = vec![0.0; n];
                for s in 0..sh.s {
                    row[sh.index(r, s, a, b)] += 1.0;
                    row[sh.index(r, s, a, 0)] -= 1.0;
                }
                rows.push(row);
            }
        }
    }
    for b in 0..sh.b {
        for s in 0..sh.s {
            for a in 1..sh.a {
                let mut row = vec![0.0; n];
                for r in 0..sh.r {
                    row[sh.index(r, s, a, b)] += 1.0;
                    row[sh.index(r, s, 0, b)] -= 1.0;
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// Gram-Schmidt with reorthogonalization; returns whether `v` added a new direction.
fn push_orthonormal(basis: &mut Vec<Vec<f64>>, mut v: Vec<f64>) -> bool {
    let start = norm(&v);
    if start == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for e in basis.iter() {
            let c = dot(e, &v);
            for (x, y) in v.iter_mut().zip(e) {
                *x -= c * y;
            }
        }
    }
    let rest = norm(&v);
    if rest <= RANK_TOL * start.max(1.0) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= rest);
    basis.push(v);
    true
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Cosine between the nonsignaling projections of two functionals.
pub fn facet_alignment(f: &BellFunctional, facet: &BellFunctional, basis: &NSBasis) -> Result<f64> {
    if f.shape() != basis.shape || facet.shape() != basis.shape {
        return Err(Error::ShapeMismatch(format!(
            "alignment on {}",
            basis.shape
        )));
    }
    let x = basis.project_parallel(f.coeffs());
    let y = basis.project_parallel(facet.coeffs());
    let (nx, ny) = (norm(&x), norm(&y));
    if nx < 1e-12 || ny < 1e-12 {
        return Err(Error::DegenerateProjection { norm: nx.min(ny) });
    }
    Ok((dot(&x, &y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// Largest [`facet_alignment`] over a family of facets.
pub fn max_facet_alignment(
    f: &BellFunctional,
    family: &[BellFunctional],
    basis: &NSBasis,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for facet in family {
        best = best.max(facet_alignment(f, facet, basis)?);
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::InvalidConfig("empty facet family".into()));
    }
    Ok(best)
}
