use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nsbox::{sequence_table, BoxShape, NSBox};
use crate::solver::DualWitness;

/// Largest number of deterministic vertex pairs `R^A * S^B` we enumerate.
pub const MAX_VERTEX_PAIRS: u128 = 1 << 24;

/// Coefficients `B(r,s;a,b)` of a Bell expression together with its local bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FunctionalFile", into = "FunctionalFile")]
pub struct BellFunctional {
    shape: BoxShape,
    coeffs: Vec<f64>,
    local_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct FunctionalFile {
    shape: BoxShape,
    coeffs: Vec<f64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    local_bound: Option<f64>,
}

impl TryFrom<FunctionalFile> for BellFunctional {
    type Error = Error;

    fn try_from(file: FunctionalFile) -> Result<Self> {
        match file.local_bound {
            Some(l) => {
                check_coeffs(file.shape, &file.coeffs)?;
                Ok(Self {
                    shape: file.shape,
                    coeffs: file.coeffs,
                    local_bound: l,
                })
            }
            None => Self::new(file.shape, file.coeffs),
        }
    }
}

impl From<BellFunctional> for FunctionalFile {
    fn from(f: BellFunctional) -> Self {
        Self {
            shape: f.shape,
            coeffs: f.coeffs,
            local_bound: Some(f.local_bound),
        }
    }
}

fn check_coeffs(shape: BoxShape, coeffs: &[f64]) -> Result<()> {
    shape.check()?;
    if coeffs.len() != shape.len() {
        return Err(Error::LengthMismatch {
            expected: shape.len(),
            found: coeffs.len(),
        });
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidConfig(
            "Bell coefficients must be finite".into(),
        ));
    }
    Ok(())
}

impl BellFunctional {
    /// Builds a functional and computes its local bound by vertex enumeration.
    pub fn new(shape: BoxShape, coeffs: Vec<f64>) -> Result<Self> {
        check_coeffs(shape, &coeffs)?;
        let local_bound = local_bound(&coeffs, shape)?;
        Ok(Self {
            shape,
            coeffs,
            local_bound,
        })
    }

    pub fn from_fn(shape: BoxShape, f: impl Fn(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let coeffs = (0..shape.len())
            .map(|i| {
                let (r, s, a, b) = shape.unindex(i);
                f(r, s, a, b)
            })
            .collect();
        Self::new(shape, coeffs)
    }

    pub fn shape(&self) -> BoxShape {
        self.shape
    }

    /// Flat coefficients in `(r,s,a,b)` order.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn local_bound(&self) -> f64 {
        self.local_bound
    }

    /// `sum P B`, the left-hand side of the inequality.
    pub fn value(&self, nsbox: &NSBox) -> Result<f64> {
        if nsbox.shape() != self.shape {
            return Err(Error::ShapeMismatch(format!(
                "functional {} vs box {}",
                self.shape,
                nsbox.shape()
            )));
        }
        Ok(nsbox.dot(&self.coeffs))
    }

    /// Multiplies every coefficient (and the bound) by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            shape: self.shape,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            local_bound: self.local_bound * factor,
        }
    }

    /// Coefficients after relabeling settings and outcomes, with the same
    /// conventions as [`NSBox::relabeled`]. The local bound is unchanged.
    pub fn relabeled(
        &self,
        alice_settings: &[usize],
        bob_settings: &[usize],
        alice_out: &[Vec<usize>],
        bob_out: &[Vec<usize>],
    ) -> Self {
        let sh = self.shape;
        let mut coeffs = vec![0.0; sh.len()];
        for (i, c) in self.coeffs.iter().enumerate() {
            let (r, s, a, b) = sh.unindex(i);
            let j = sh.index(
                alice_out[a][r],
                bob_out[b][s],
                alice_settings[a],
                bob_settings[b],
            );
            coeffs[j] = *c;
        }
        Self {
            shape: sh,
            coeffs,
            local_bound: self.local_bound,
        }
    }

    /// All distinct functionals reachable by permuting settings and outcomes.
    pub fn relabel_orbit(&self) -> Vec<Self> {
        let sh = self.shape;
        let set_a = permutations(sh.a);
        let set_b = permutations(sh.b);
        let out_a = product_of(&permutations(sh.r), sh.a);
        let out_b = product_of(&permutations(sh.s), sh.b);
        let mut seen = std::collections::HashSet::new();
        let mut orbit = Vec::new();
        for pa in &set_a {
            for pb in &set_b {
                for oa in &out_a {
                    for ob in &out_b {
                        let f = self.relabeled(pa, pb, oa, ob);
                        let key: Vec<i64> =
                            f.coeffs.iter().map(|c| (c * 1e9).round() as i64).collect();
                        if seen.insert(key) {
                            orbit.push(f);
                        }
                    }
                }
            }
        }
        orbit
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..n {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

fn product_of(items: &[Vec<usize>], count: usize) -> Vec<Vec<Vec<usize>>> {
    let mut acc: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for _ in 0..count {
        acc = acc
            .into_iter()
            .flat_map(|prefix| {
                items.iter().map(move |item| {
                    let mut next = prefix.clone();
                    next.push(item.clone());
                    next
                })
            })
            .collect();
    }
    acc
}

/// `L = max_{r,s} sum_{a,b} B(r_a, s_b; a, b)` over all deterministic vertices.
///
/// For each Bob sequence the best Alice answer is chosen independently per
/// setting, which gives the exact maximum with `S^B * A * R * B` work.
pub fn local_bound(coeffs: &[f64], shape: BoxShape) -> Result<f64> {
    check_coeffs(shape, coeffs)?;
    vertex_pairs(shape)?;
    let seqs = sequence_table(shape.s, shape.b);
    let nq = seqs.len() / shape.b;
    let best_for = |q: usize| -> f64 {
        let seq = &seqs[q * shape.b..(q + 1) * shape.b];
        (0..shape.a)
            .map(|a| {
                (0..shape.r)
                    .map(|r| {
                        seq.iter()
                            .enumerate()
                            .map(|(b, &s)| coeffs[shape.index(r, s, a, b)])
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if nq >= 4096 {
            return Ok((0..nq)
                .into_par_iter()
                .map(best_for)
                .reduce(|| f64::NEG_INFINITY, f64::max));
        }
    }
    Ok((0..nq).map(best_for).fold(f64::NEG_INFINITY, f64::max))
}

/// `R^A * S^B`, checked against [`MAX_VERTEX_PAIRS`].
pub(crate) fn vertex_pairs(shape: BoxShape) -> Result<usize> {
    let count = (shape.r as u128)
        .checked_pow(shape.a as u32)
        .and_then(|x| {
            (shape.s as u128)
                .checked_pow(shape.b as u32)
                .and_then(|y| x.checked_mul(y))
        })
        .unwrap_or(u128::MAX);
    if count > MAX_VERTEX_PAIRS {
        return Err(Error::TooManyVertices {
            count,
            limit: MAX_VERTEX_PAIRS,
        });
    }
    Ok(count as usize)
}

/// Strength of a violation, `sum P B - L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub value: f64,
    pub local_bound: f64,
    pub delta_b: f64,
}

pub fn violation(nsbox: &NSBox, f: &BellFunctional) -> Result<Violation> {
    let value = f.value(nsbox)?;
    Ok(Violation {
        value,
        local_bound: f.local_bound,
        delta_b: value - f.local_bound,
    })
}

/// The CHSH expression with outcomes read as `+1, -1`:
/// `sum rs [P(.|0,0) - P(.|0,1) + P(.|1,0) + P(.|1,1)] <= 2`.
pub fn chsh_functional() -> BellFunctional {
    let shape = BoxShape {
        a: 2,
        b: 2,
        r: 2,
        s: 2,
    };
    let signs = [[1.0, -1.0], [1.0, 1.0]];
    BellFunctional::from_fn(shape, |r, s, a, b| {
        let rs = if r == s { 1.0 } else { -1.0 };
        rs * signs[a][b]
    })
    .expect("CHSH coefficients are valid")
}

/// The eight CHSH facets.
pub fn chsh_orbit() -> Vec<BellFunctional> {
    chsh_functional().relabel_orbit()
}

/// The CGLMP expression for two qutrit measurements per party, written with
/// `P(r_a = s_b + k)` groups (differences mod 3); local bound 2.
pub fn cglmp3_functional() -> BellFunctional {
    let shape = BoxShape {
        a: 2,
        b: 2,
        r: 3,
        s: 3,
    };
    BellFunctional::from_fn(shape, |r, s, a, b| {
        let diff = (r + 3 - s) % 3; // r - s mod 3
        match (a, b) {
            // P(r0 = s0) - P(r0 = s0 - 1)
            (0, 0) => plus_minus(diff == 0, diff == 2),
            // P(s0 = r1 + 1) - P(s0 = r1)
            (1, 0) => plus_minus(diff == 2, diff == 0),
            // P(r1 = s1) - P(r1 = s1 - 1)
            (1, 1) => plus_minus(diff == 0, diff == 2),
            // P(s1 = r0) - P(s1 = r0 - 1)
            _ => plus_minus(diff == 0, diff == 1),
        }
    })
    .expect("CGLMP coefficients are valid")
}

fn plus_minus(plus: bool, minus: bool) -> f64 {
    if plus {
        1.0
    } else if minus {
        -1.0
    } else {
        0.0
    }
}

/// Bell functional `B = rho(a) lambda` associated with a dual witness.
pub fn extract_bell(witness: &DualWitness) -> Result<BellFunctional> {
    BellFunctional::new(witness.shape, witness.bell_coefficients())
}

/// The largest violation over a family of functionals, with its index.
pub fn max_violation(nsbox: &NSBox, family: &[BellFunctional]) -> Result<(usize, Violation)> {
    let mut best: Option<(usize, Violation)> = None;
    for (k, f) in family.iter().enumerate() {
        let v = violation(nsbox, f)?;
        if best.as_ref().is_none_or(|(_, b)| v.delta_b > b.delta_b) {
            best = Some((k, v));
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("empty functional family".into()))
}
