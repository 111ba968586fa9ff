use serde::{Deserialize, Serialize};

use super::basis::NSBasis;
use super::functional::BellFunctional;
use crate::error::{Error, Result};
use crate::nsbox::{sequence_table, NSBox};

/// Search box for `eta(a) = exp(t_a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtaSearch {
    pub t_min: f64,
    pub t_max: f64,
    /// Width at which a golden-section bracket is considered resolved.
    pub t_tol: f64,
    pub max_sweeps: usize,
}

impl Default for EtaSearch {
    fn default() -> Self {
        Self {
            t_min: -20.0,
            t_max: 20.0,
            t_tol: 1e-10,
            max_sweeps: 200,
        }
    }
}

/// Result of maximizing a violation-to-capacity bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    /// Bound on the nonlocal capacity in bits.
    pub value: f64,
    /// Maximizing `eta(a)`.
    pub eta: Vec<f64>,
    /// Coordinates of the maximizing shift on [`NSBasis::admissible_shifts`]
    /// (empty for the bound without shifts).
    pub shift: Vec<f64>,
    /// Some `t_a` ended on the upper end of the search box.
    pub at_cap: bool,
}

/// Objective `sum P B / gamma + K_eta` (nats) for fixed coefficients.
struct Objective {
    a: usize,
    nq: usize,
    /// `(sum P B)` of the unshifted functional; shifts do not change it.
    value: f64,
    /// `h[a * nq + q] = max_r sum_b C(r, s_b; a, b)` for the current coefficients.
    h: Vec<f64>,
    seqs: Vec<usize>,
}

impl Objective {
    fn new(f: &BellFunctional, value: f64) -> Self {
        let sh = f.shape();
        let seqs = sequence_table(sh.s, sh.b);
        let nq = seqs.len() / sh.b;
        let mut obj = Self {
            a: sh.a,
            nq,
            value,
            h: vec![0.0; sh.a * nq],
            seqs,
        };
        obj.set_coeffs(f, f.coeffs());
        obj
    }

    fn set_coeffs(&mut self, f: &BellFunctional, coeffs: &[f64]) {
        let sh = f.shape();
        for a in 0..sh.a {
            for q in 0..self.nq {
                let seq = &self.seqs[q * sh.b..(q + 1) * sh.b];
                self.h[a * self.nq + q] = (0..sh.r)
                    .map(|r| {
                        seq.iter()
                            .enumerate()
                            .map(|(b, &s)| coeffs[sh.index(r, s, a, b)])
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }

    fn eval(&self, t: &[f64]) -> f64 {
        self.eval_smoothed(t, None)
    }

    /// With `beta`, the max over sequences becomes `log-sum-exp(beta x) / beta`,
    /// a lower bound on the objective that has no kinks.
    fn eval_smoothed(&self, t: &[f64], beta: Option<f64>) -> f64 {
        let log_gamma = log_sum_exp(t.iter().copied());
        let gamma = log_gamma.exp();
        let terms = (0..self.nq).map(|q| {
            log_sum_exp(
                (0..self.a).map(|a| t[a] - log_gamma + self.h[a * self.nq + q] * (-t[a]).exp()),
            )
        });
        let worst = match beta {
            Some(beta) => {
                log_sum_exp(terms.map(|x| beta * x).collect::<Vec<_>>().into_iter()) / beta
            }
            None => terms.fold(f64::NEG_INFINITY, f64::max),
        };
        self.value / gamma - worst
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let top = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + xs.map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// Maximizes a unimodal `g` on `[lo, hi]`; returns `(argmax, max)`.
fn golden(mut lo: f64, mut hi: f64, tol: f64, mut g: impl FnMut(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    while hi - lo > tol {
        if g1 >= g2 {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - INV_PHI * (hi - lo);
            g1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + INV_PHI * (hi - lo);
            g2 = g(x2);
        }
    }
    // Endpoints are never evaluated by the interior probes; check them so a
    // maximizer on the boundary is reported as such.
    [(x1, g1), (x2, g2), (lo, g(lo)), (hi, g(hi))]
        .into_iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cand| {
            if cand.1 > best.1 {
                cand
            } else {
                best
            }
        })
}

/// Local maximization of `g` on `[lo, hi]` (with `lo <= 0 <= hi`) starting at 0.
/// Brackets an improving step on either side by expansion, or by shrinking
/// the trial step down to `tol`, then refines the bracket by golden section.
/// The objective is not unimodal over the whole box, so a global golden
/// search can walk away from the nearby maximum.
fn line_search(lo: f64, hi: f64, tol: f64, mut g: impl FnMut(f64) -> f64) -> (f64, f64) {
    let g0 = g(0.0);
    for dir in [1.0, -1.0] {
        let bound = if dir > 0.0 { hi } else { -lo };
        if bound <= 0.0 {
            continue;
        }
        let mut h = 0.5f64.min(bound);
        while h >= tol {
            let gh = g(dir * h);
            if gh > g0 {
                let (mut a, mut b, mut gb) = (0.0, h, gh);
                let c = loop {
                    let c = (2.0 * b).min(bound);
                    if c <= b {
                        break c;
                    }
                    let gc = g(dir * c);
                    if gc <= gb {
                        break c;
                    }
                    (a, b, gb) = (b, c, gc);
                };
                let (x0, x1) = if dir > 0.0 { (a, c) } else { (-c, -a) };
                let (x, gx) = golden(x0, x1, tol, &mut g);
                return if gx >= gb { (x, gx) } else { (dir * b, gb) };
            }
            h *= 0.25;
        }
    }
    (0.0, g0)
}

/// Search directions: the common scale, every coordinate, and every transfer
/// `e_a - e_a'`.
fn directions(n: usize) -> Vec<Vec<f64>> {
    let unit = |a: usize| {
        (0..n)
            .map(|k| if k == a { 1.0 } else { 0.0 })
            .collect::<Vec<f64>>()
    };
    let mut dirs = vec![vec![1.0; n]];
    if n > 1 {
        dirs.extend((0..n).map(unit));
        for a in 0..n {
            for b in a + 1..n {
                dirs.push(
                    (0..n)
                        .map(|k| {
                            if k == a {
                                1.0
                            } else if k == b {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
            }
        }
    }
    dirs
}

/// Sharpness schedule of the smoothed passes in [`ascend_eta`].
const SMOOTHING: [f64; 6] = [1e2, 1e3, 1e4, 1e5, 1e6, 1e7];

/// Ascent through increasingly sharp smoothings, then on the exact objective.
/// On the exact objective alone, direction searches stall on the kinks of the
/// max over sequences. The returned `t` is never worse than the starting point.
fn ascend_eta(obj: &Objective, t: &mut [f64], search: &EtaSearch) -> f64 {
    let start = t.to_vec();
    let start_value = obj.eval(t);
    for beta in SMOOTHING {
        ascend_on(obj, t, search, Some(beta));
    }
    let value = ascend_on(obj, t, search, None);
    if value >= start_value {
        value
    } else {
        t.copy_from_slice(&start);
        ascend_on(obj, t, search, None)
    }
}

/// Line-search ascent along each direction in turn, `t` kept inside the search box.
fn ascend_on(obj: &Objective, t: &mut [f64], search: &EtaSearch, beta: Option<f64>) -> f64 {
    let dirs = directions(t.len());
    let mut best = obj.eval_smoothed(t, beta);
    for _ in 0..search.max_sweeps {
        let start = best;
        for d in &dirs {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (x, dx) in t.iter().zip(d) {
                if *dx > 0.0 {
                    lo = lo.max((search.t_min - x) / dx);
                    hi = hi.min((search.t_max - x) / dx);
                } else if *dx < 0.0 {
                    lo = lo.max((search.t_max - x) / dx);
                    hi = hi.min((search.t_min - x) / dx);
                }
            }
            let base = t.to_vec();
            let mut trial = base.clone();
            let (c, g) = line_search(lo.min(0.0), hi.max(0.0), search.t_tol, |c| {
                trial
                    .iter_mut()
                    .zip(base.iter().zip(d))
                    .for_each(|(x, (b, dx))| *x = b + c * dx);
                obj.eval_smoothed(&trial, beta)
            });
            if g > best {
                t.iter_mut()
                    .zip(base.iter().zip(d))
                    .for_each(|(x, (b, dx))| *x = (b + c * dx).clamp(search.t_min, search.t_max));
                best = g;
            }
        }
        if best - start <= 1e-15 * best.abs().max(1.0) {
            break;
        }
    }
    best
}

fn at_cap(t: &[f64], search: &EtaSearch) -> bool {
    t.iter().any(|x| *x >= search.t_max - 1e-6)
}

/// Capacity lower bound `F(Delta B)` of a Bell functional, in bits.
///
/// When `Delta B <= 0` the supremum is 0, approached as `eta -> infinity`, and
/// 0 is reported. A positive violation whose maximizer sits on the upper end
/// of the search box is reported as [`Error::SearchRangeExhausted`].
pub fn capacity_bound_f(
    f: &BellFunctional,
    nsbox: &NSBox,
    search: &EtaSearch,
) -> Result<BoundEstimate> {
    let value = f.value(nsbox)?;
    let delta_b = value - f.local_bound();
    let obj = Objective::new(f, value);
    let mut t = vec![0.0; f.shape().a];
    let best = ascend_eta(&obj, &mut t, search);
    finish(best, t, Vec::new(), delta_b, search)
}

fn finish(
    best_nats: f64,
    t: Vec<f64>,
    shift: Vec<f64>,
    delta_b: f64,
    search: &EtaSearch,
) -> Result<BoundEstimate> {
    let capped = at_cap(&t, search);
    let eta: Vec<f64> = t.iter().map(|x| x.exp()).collect();
    if delta_b <= 0.0 {
        return Ok(BoundEstimate {
            value: 0.0,
            eta,
            shift,
            at_cap: capped,
        });
    }
    let value = best_nats / std::f64::consts::LN_2;
    if capped {
        return Err(Error::SearchRangeExhausted { value });
    }
    Ok(BoundEstimate {
        value,
        eta,
        shift,
        at_cap: false,
    })
}

/// The bound with the additional maximization over admissible shifts `A`,
/// `F-bar(Delta B)`, in bits. Starts from the maximizer of [`capacity_bound_f`]
/// with `A = 0` and only accepts improving moves, so the result is never
/// below that bound.
pub fn capacity_bound_f_bar(
    f: &BellFunctional,
    nsbox: &NSBox,
    basis: &NSBasis,
    search: &EtaSearch,
) -> Result<BoundEstimate> {
    if basis.shape != f.shape() {
        return Err(Error::ShapeMismatch(format!(
            "basis {} vs functional {}",
            basis.shape,
            f.shape()
        )));
    }
    let value = f.value(nsbox)?;
    let delta_b = value - f.local_bound();
    let mut obj = Objective::new(f, value);
    let mut t = vec![0.0; f.shape().a];
    let mut best = ascend_eta(&obj, &mut t, search);

    let shifts = basis.admissible_shifts();
    let mut alpha = vec![0.0; shifts.len()];
    let mut coeffs = f.coeffs().to_vec();
    let scale = f
        .coeffs()
        .iter()
        .fold(0.0f64, |m, c| m.max(c.abs()))
        .max(1e-3);
    let mut step = 0.25;

    let apply = |alpha: &[f64], coeffs: &mut Vec<f64>| {
        coeffs.copy_from_slice(f.coeffs());
        for (w, v) in alpha.iter().zip(shifts) {
            for (c, x) in coeffs.iter_mut().zip(v) {
                *c += w * x;
            }
        }
    };

    while step > 1e-10 {
        let mut improved = false;
        for k in 0..alpha.len() {
            for dir in [1.0, -1.0] {
                let mut trial = alpha.clone();
                trial[k] += dir * step * scale;
                apply(&trial, &mut coeffs);
                obj.set_coeffs(f, &coeffs);
                let mut tt = t.clone();
                let g = ascend_on(
                    &obj,
                    &mut tt,
                    &EtaSearch {
                        max_sweeps: 3,
                        ..*search
                    },
                    None,
                );
                if g > best + 1e-15 {
                    best = g;
                    alpha = trial;
                    t = tt;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    finish(best, t, alpha, delta_b, search)
}
