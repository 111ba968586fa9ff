//! Steps 3-5 of the alternating minimization: the auxiliary distribution,
//! the multiplier equations, and the extension update.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nsbox::{sequence_table, BoxShape, InputDist, JointExtension, NSBox};

use super::SolverConfig;

/// Nonsignaling auxiliary distribution `R(r, s-sequence | a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxDistribution(JointExtension);

impl AuxDistribution {
    pub fn as_extension(&self) -> &JointExtension {
        &self.0
    }

    pub fn into_extension(self) -> JointExtension {
        self.0
    }

    pub fn shape(&self) -> BoxShape {
        self.0.shape()
    }

    pub fn get(&self, r: usize, q: usize, a: usize) -> f64 {
        self.0.get(r, q, a)
    }

    /// Largest violation of normalization and of `sum_r R(r,s|a)` being independent of `a`.
    pub fn constraint_residual(&self) -> f64 {
        let ext = &self.0;
        let (na, nq) = (ext.shape().a, ext.sequences());
        let ch = ext.channel();
        let mut worst = ext.normalization_residual();
        for q in 0..nq {
            for a in 1..na {
                worst = worst.max((ch[a * nq + q] - ch[q]).abs());
            }
        }
        worst
    }
}

/// `R(r,s|a) = rho(r,s|a) rho(s) / rho(s|a)` with `rho(s) = sum_a rho(s|a) rho(a)`.
pub fn update_aux(ext: &JointExtension, input_dist: &InputDist) -> Result<AuxDistribution> {
    let sh = ext.shape();
    if input_dist.len() != sh.a {
        return Err(Error::ShapeMismatch(format!(
            "input distribution has {} entries, box has {} settings",
            input_dist.len(),
            sh.a
        )));
    }
    let nq = ext.sequences();
    let ch = ext.channel();
    let pa = input_dist.as_slice();
    let mut out = JointExtension::zeros(sh)?;
    for q in 0..nq {
        let marginal: f64 = (0..sh.a).map(|a| ch[a * nq + q] * pa[a]).sum();
        for a in 0..sh.a {
            let cond = ch[a * nq + q];
            if cond > 0.0 {
                let ratio = marginal / cond;
                for r in 0..sh.r {
                    out.set(r, q, a, ext.get(r, q, a) * ratio);
                }
            } else {
                if let Some(r) = (0..sh.r).find(|&r| ext.get(r, q, a) > 0.0) {
                    return Err(Error::ZeroConditional { r, seq: q, a });
                }
                for r in 0..sh.r {
                    out.set(r, q, a, marginal / sh.r as f64);
                }
            }
        }
    }
    Ok(AuxDistribution(out))
}

/// Support pattern induced by zeros of the box: `(s, b)` pairs with
/// `P(r,s|a,b) > 0` per `(r, a)` block, and the sequences compatible with them.
#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    shape: BoxShape,
    seqs: Vec<usize>,
    nq: usize,
    /// Per `(r, a)`: sequences whose every element is supported.
    live: Vec<Vec<usize>>,
    /// Per `(r, a)`: supported `(s, b)` pairs as flat `b * S + s`.
    free: Vec<Vec<usize>>,
}

impl BlockLayout {
    pub(crate) fn new(nsbox: &NSBox) -> Result<Self> {
        let sh = nsbox.shape();
        JointExtension::planned_len(&sh)?;
        let seqs = sequence_table(sh.s, sh.b);
        let nq = sh.bob_sequences().expect("guarded");
        let mut live = Vec::with_capacity(sh.r * sh.a);
        let mut free = Vec::with_capacity(sh.r * sh.a);
        for r in 0..sh.r {
            for a in 0..sh.a {
                let supported = |s: usize, b: usize| nsbox.get(r, s, a, b) > 0.0;
                let block_free: Vec<usize> = (0..sh.b)
                    .flat_map(|b| {
                        (0..sh.s)
                            .filter(move |&s| supported(s, b))
                            .map(move |s| b * sh.s + s)
                    })
                    .collect();
                let every_b = (0..sh.b).all(|b| (0..sh.s).any(|s| supported(s, b)));
                let block_live: Vec<usize> = if every_b {
                    (0..nq)
                        .filter(|&q| (0..sh.b).all(|b| supported(seqs[q * sh.b + b], b)))
                        .collect()
                } else {
                    Vec::new()
                };
                live.push(block_live);
                free.push(if every_b { block_free } else { Vec::new() });
            }
        }
        Ok(Self {
            shape: sh,
            seqs,
            nq,
            live,
            free,
        })
    }

    #[inline]
    fn block(&self, r: usize, a: usize) -> usize {
        r * self.shape.a + a
    }

    #[inline]
    pub(crate) fn seq(&self, q: usize) -> &[usize] {
        let b = self.shape.b;
        &self.seqs[q * b..(q + 1) * b]
    }

    pub(crate) fn sequences(&self) -> usize {
        self.nq
    }

    pub(crate) fn live(&self, r: usize, a: usize) -> &[usize] {
        &self.live[self.block(r, a)]
    }

    /// Uniform extension on the supported sequences.
    pub(crate) fn uniform_extension(&self) -> Result<JointExtension> {
        let sh = self.shape;
        let mut ext = JointExtension::zeros(sh)?;
        for a in 0..sh.a {
            let count: usize = (0..sh.r).map(|r| self.live(r, a).len()).sum();
            for r in 0..sh.r {
                for &q in self.live(r, a) {
                    ext.set(r, q, a, 1.0 / count as f64);
                }
            }
        }
        Ok(ext)
    }
}

/// Outcome of the multiplier solve.
#[derive(Debug, Clone)]
pub struct LambdaSolution {
    /// `lambda(r,s,a,b)` in box layout; unsupported entries are `-inf`.
    pub lambda: Vec<f64>,
    /// Max-norm of the multiplier equations at termination.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `sum_{s: s_b = s} R(r,s|a) exp(sum_b' lambda(r,s_b',a,b')) = P(r,s|a,b)`
/// by damped Newton ascent on the concave dual functional, one `(r, a)` block at a time.
pub fn solve_lambda(
    aux: &AuxDistribution,
    input_dist: &InputDist,
    nsbox: &NSBox,
    cfg: &SolverConfig,
) -> Result<LambdaSolution> {
    let layout = BlockLayout::new(nsbox)?;
    solve_lambda_with(&layout, aux, input_dist, nsbox, cfg)
}

pub(crate) fn solve_lambda_with(
    layout: &BlockLayout,
    aux: &AuxDistribution,
    input_dist: &InputDist,
    nsbox: &NSBox,
    cfg: &SolverConfig,
) -> Result<LambdaSolution> {
    let sh = nsbox.shape();
    if aux.shape() != sh || input_dist.len() != sh.a {
        return Err(Error::ShapeMismatch(format!(
            "aux {} / box {}",
            aux.shape(),
            sh
        )));
    }
    let mut lambda = vec![f64::NEG_INFINITY; sh.len()];
    let mut residual: f64 = 0.0;
    let mut iterations = 0;
    for r in 0..sh.r {
        for a in 0..sh.a {
            let (block_lambda, res, its) = solve_block(layout, aux, nsbox, r, a, cfg)?;
            residual = residual.max(res);
            iterations = iterations.max(its);
            for (k, v) in block_lambda {
                let (b, s) = (k / sh.s, k % sh.s);
                lambda[sh.index(r, s, a, b)] = v;
            }
        }
    }
    Ok(LambdaSolution {
        lambda,
        residual,
        iterations,
    })
}

type BlockSolution = (Vec<(usize, f64)>, f64, usize);

fn solve_block(
    layout: &BlockLayout,
    aux: &AuxDistribution,
    nsbox: &NSBox,
    r: usize,
    a: usize,
    cfg: &SolverConfig,
) -> Result<BlockSolution> {
    let sh = nsbox.shape();
    let free = &layout.free[layout.block(r, a)];
    let live = layout.live(r, a);
    if free.is_empty() {
        // Alice never answers r on setting a; every constraint is 0 = 0.
        let res = (0..sh.b)
            .flat_map(|b| (0..sh.s).map(move |s| (s, b)))
            .map(|(s, b)| nsbox.get(r, s, a, b))
            .fold(0.0, f64::max);
        return Ok((Vec::new(), res, 0));
    }
    let width = sh.b * sh.s;
    // Dense slot -> position in `free`; the first supported s of every b > 0 is
    // pinned, which removes the gauge freedom of shifting lambda between settings.
    let mut pos = vec![usize::MAX; width];
    for (i, &k) in free.iter().enumerate() {
        pos[k] = i;
    }
    let mut var_of = vec![usize::MAX; free.len()];
    let mut nvars = 0;
    for b in 0..sh.b {
        let mut first = true;
        for s in 0..sh.s {
            let k = b * sh.s + s;
            if pos[k] == usize::MAX {
                continue;
            }
            if b > 0 && first {
                first = false;
                continue;
            }
            first = false;
            var_of[pos[k]] = nvars;
            nvars += 1;
        }
    }
    let target: Vec<f64> = free
        .iter()
        .map(|&k| nsbox.get(r, k % sh.s, a, k / sh.s))
        .collect();
    let weights: Vec<f64> = live.iter().map(|&q| aux.get(r, q, a)).collect();
    // Per live sequence, its free positions for every b.
    let slots: Vec<usize> = live
        .iter()
        .flat_map(|&q| {
            let seq = layout.seq(q);
            let pos = &pos;
            (0..sh.b).map(move |b| pos[b * sh.s + seq[b]])
        })
        .collect();

    // Objective, gradient, and the exponential terms at `x`.
    let eval = |x: &[f64], terms: &mut [f64]| -> (f64, Vec<f64>) {
        let mut marg = vec![0.0; x.len()];
        let mut exp_part = 0.0;
        for ((t, w), sl) in terms.iter_mut().zip(&weights).zip(slots.chunks(sh.b)) {
            *t = w * sl.iter().map(|&i| x[i]).sum::<f64>().exp();
            exp_part += *t;
            for &i in sl {
                marg[i] += *t;
            }
        }
        let lin: f64 = target.iter().zip(x).map(|(p, l)| p * l).sum();
        let grad = target.iter().zip(&marg).map(|(p, m)| p - m).collect();
        (lin - exp_part, grad)
    };
    let max_abs = |g: &[f64]| g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut x = vec![0.0; free.len()];
    let mut terms = vec![0.0; weights.len()];
    let mut trial_terms = terms.clone();
    let (mut f, mut grad) = eval(&x, &mut terms);
    let mut residual = max_abs(&grad);
    let mut trial = x.clone();
    for iter in 0..=cfg.newton_max_iters {
        if residual < cfg.newton_tol {
            let out = free.iter().copied().zip(x.iter().copied()).collect();
            return Ok((out, residual, iter));
        }
        if iter == cfg.newton_max_iters || nvars == 0 {
            break;
        }
        let mut hess = DMatrix::<f64>::zeros(nvars, nvars);
        let mut g = DVector::<f64>::zeros(nvars);
        for (i, gi) in grad.iter().enumerate() {
            if var_of[i] != usize::MAX {
                g[var_of[i]] = *gi;
            }
        }
        for (t, sl) in terms.iter().zip(slots.chunks(sh.b)) {
            for &i in sl {
                let vi = var_of[i];
                if vi == usize::MAX {
                    continue;
                }
                for &j in sl {
                    let vj = var_of[j];
                    if vj != usize::MAX {
                        hess[(vi, vj)] += t;
                    }
                }
            }
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                let ridge = 1e-12 * hess.trace().max(1e-300);
                for d in 0..nvars {
                    hess[(d, d)] += ridge;
                }
                match hess.clone().cholesky() {
                    Some(ch) => ch.solve(&g),
                    None => {
                        let pinv =
                            hess.pseudo_inverse(1e-14)
                                .map_err(|_| Error::NewtonDiverged {
                                    iterations: iter,
                                    residual,
                                })?;
                        pinv * &g
                    }
                }
            }
        };
        let slope = step.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=40 {
            for (i, xi) in x.iter().enumerate() {
                let vi = var_of[i];
                trial[i] = if vi == usize::MAX {
                    *xi
                } else {
                    xi + t * step[vi]
                };
            }
            let (f1, g1) = eval(&trial, &mut trial_terms);
            let r1 = max_abs(&g1);
            // Near the solution the objective change drops below its rounding
            // error, so a strict decrease of the residual is also accepted.
            let armijo = f1.is_finite() && f1 - f >= 1e-4 * t * slope && f1 > f;
            if armijo || (f1.is_finite() && r1 < residual * (1.0 - 1e-4 * t)) {
                accepted = Some((f1, g1, r1));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((f1, g1, r1)) => {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut terms, &mut trial_terms);
                f = f1;
                grad = g1;
                residual = r1;
            }
            None => {
                // Round-off floor: no measurable progress is possible.
                if residual < cfg.newton_tol * 1e3 {
                    let out = free.iter().copied().zip(x.iter().copied()).collect();
                    return Ok((out, residual, iter));
                }
                return Err(Error::NewtonDiverged {
                    iterations: iter,
                    residual,
                });
            }
        }
    }
    Err(Error::NewtonDiverged {
        iterations: cfg.newton_max_iters,
        residual,
    })
}

/// `rho(r,s|a) = R(r,s|a) exp(sum_b lambda(r,s_b,a,b))`.
pub fn update_extension(aux: &AuxDistribution, lambda: &[f64]) -> Result<JointExtension> {
    let sh = aux.shape();
    if lambda.len() != sh.len() {
        return Err(Error::LengthMismatch {
            expected: sh.len(),
            found: lambda.len(),
        });
    }
    let seqs = sequence_table(sh.s, sh.b);
    let mut ext = JointExtension::zeros(sh)?;
    for r in 0..sh.r {
        for q in 0..ext.sequences() {
            let seq = &seqs[q * sh.b..(q + 1) * sh.b];
            for a in 0..sh.a {
                let expo: f64 = seq
                    .iter()
                    .enumerate()
                    .map(|(b, &s)| lambda[sh.index(r, s, a, b)])
                    .sum();
                let v = aux.get(r, q, a);
                ext.set(r, q, a, if v == 0.0 { 0.0 } else { v * expo.exp() });
            }
        }
    }
    Ok(ext)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsbox::extension_residual;

    fn shape(a: usize, b: usize, r: usize, s: usize) -> BoxShape {
        BoxShape::new(a, b, r, s).unwrap()
    }

    /// Strictly positive nonsignaling box built from a random mixture of vertices.
    fn mixed_box(sh: BoxShape, seed: u64) -> NSBox {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let uniform = NSBox::uniform(sh).unwrap();
        let mut parts = vec![(0.2, uniform)];
        for _ in 0..5 {
            let alice: Vec<usize> = (0..sh.a).map(|_| rng.gen_range(0..sh.r)).collect();
            let bob: Vec<usize> = (0..sh.b).map(|_| rng.gen_range(0..sh.s)).collect();
            parts.push((
                rng.gen::<f64>(),
                NSBox::deterministic(sh, &alice, &bob).unwrap(),
            ));
        }
        let refs: Vec<(f64, &NSBox)> = parts.iter().map(|(w, b)| (*w, b)).collect();
        NSBox::mixture(&refs).unwrap()
    }

    fn random_extension(sh: BoxShape, seed: u64) -> JointExtension {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut ext = JointExtension::zeros(sh).unwrap();
        for a in 0..sh.a {
            let mut total = 0.0;
            for r in 0..sh.r {
                for q in 0..ext.sequences() {
                    let v = rng.gen::<f64>() + 0.01;
                    ext.set(r, q, a, v);
                    total += v;
                }
            }
            for r in 0..sh.r {
                for q in 0..ext.sequences() {
                    let v = ext.get(r, q, a) / total;
                    ext.set(r, q, a, v);
                }
            }
        }
        ext
    }

    #[test]
    fn aux_with_single_setting_is_identity() {
        let sh = shape(1, 3, 2, 2);
        let ext = random_extension(sh, 3);
        let aux = update_aux(&ext, &InputDist::uniform(1)).unwrap();
        for (x, y) in aux.as_extension().as_slice().iter().zip(ext.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn aux_is_identity_when_channel_ignores_input() {
        let sh = shape(2, 2, 2, 2);
        let mut ext = random_extension(sh, 5);
        // Copy a's channel across settings, varying only the r split.
        for q in 0..ext.sequences() {
            let total = ext.get(0, q, 0) + ext.get(1, q, 0);
            ext.set(0, q, 1, 0.3 * total);
            ext.set(1, q, 1, 0.7 * total);
        }
        let aux = update_aux(&ext, &InputDist::new(vec![0.4, 0.6]).unwrap()).unwrap();
        for (x, y) in aux.as_extension().as_slice().iter().zip(ext.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn aux_satisfies_constraints_on_random_inputs() {
        for seed in 0..10 {
            let sh = shape(3, 2, 2, 3);
            let ext = random_extension(sh, seed);
            let aux = update_aux(&ext, &InputDist::new(vec![0.2, 0.5, 0.3]).unwrap()).unwrap();
            assert!(aux.constraint_residual() < 1e-12);
        }
    }

    #[test]
    fn aux_reports_zero_conditional() {
        let sh = shape(2, 1, 2, 2);
        let mut ext = random_extension(sh, 1);
        ext.set(0, 1, 0, 0.0);
        ext.set(1, 1, 0, 0.0);
        assert!(update_aux(&ext, &InputDist::uniform(2)).is_ok());
        let mut bad = ext.clone();
        // Channel entry zero while a joint entry is positive cannot come from a
        // nonnegative extension, so build the conflict with a negative partner.
        bad.set(0, 1, 0, 0.1);
        bad.set(1, 1, 0, -0.1);
        assert!(matches!(
            update_aux(&bad, &InputDist::uniform(2)),
            Err(Error::ZeroConditional { .. })
        ));
    }

    #[test]
    fn lambda_vanishes_when_marginals_already_match() {
        let sh = shape(2, 2, 2, 2);
        // A product box admits an exact product extension.
        let pa = [[0.3, 0.7], [0.6, 0.4]];
        let pb = [[0.2, 0.8], [0.9, 0.1]];
        let mix = NSBox::from_fn(sh, 1e-9, |r, s, a, b| pa[a][r] * pb[b][s]).unwrap();
        let ext = JointExtension::product_extension(&mix).unwrap();
        assert!(extension_residual(&ext, &mix).unwrap() < 1e-15);
        let aux = AuxDistribution(ext);
        let sol =
            solve_lambda(&aux, &InputDist::uniform(2), &mix, &SolverConfig::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.lambda.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_bob_setting_has_closed_form() {
        let sh = shape(2, 1, 3, 2);
        let nsbox = mixed_box(sh, 4);
        let aux = AuxDistribution(random_extension(sh, 8));
        let sol = solve_lambda(
            &aux,
            &InputDist::uniform(2),
            &nsbox,
            &SolverConfig::default(),
        )
        .unwrap();
        for r in 0..3 {
            for s in 0..2 {
                for a in 0..2 {
                    let expected = (nsbox.get(r, s, a, 0) / aux.get(r, s, a)).ln();
                    assert!((sol.lambda[sh.index(r, s, a, 0)] - expected).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn solved_lambda_lands_in_the_feasible_set() {
        for (sh, seed) in [
            (shape(2, 2, 2, 2), 1),
            (shape(2, 2, 3, 3), 2),
            (shape(3, 3, 2, 2), 3),
            (shape(2, 4, 2, 2), 4),
        ] {
            let nsbox = mixed_box(sh, seed);
            let aux = AuxDistribution(random_extension(sh, seed + 100));
            let cfg = SolverConfig::default();
            let sol = solve_lambda(&aux, &InputDist::uniform(sh.a), &nsbox, &cfg).unwrap();
            assert!(sol.residual < cfg.newton_tol);
            let ext = update_extension(&aux, &sol.lambda).unwrap();
            assert!(extension_residual(&ext, &nsbox).unwrap() < 10.0 * cfg.newton_tol);
            assert!(ext.as_slice().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn zero_lambda_returns_aux() {
        let sh = shape(2, 2, 2, 3);
        let aux = AuxDistribution(random_extension(sh, 11));
        let ext = update_extension(&aux, &vec![0.0; sh.len()]).unwrap();
        assert_eq!(ext.as_slice(), aux.as_extension().as_slice());
        assert!(ext.as_slice().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn zeros_of_the_box_are_eliminated() {
        let sh = shape(2, 2, 2, 2);
        let pr = NSBox::pr_box();
        let layout = BlockLayout::new(&pr).unwrap();
        let aux = AuxDistribution(layout.uniform_extension().unwrap());
        let sol =
            solve_lambda(&aux, &InputDist::uniform(2), &pr, &SolverConfig::default()).unwrap();
        let ext = update_extension(&aux, &sol.lambda).unwrap();
        assert!(extension_residual(&ext, &pr).unwrap() < 1e-10);
        // Entries incompatible with the PR constraints stay exactly zero.
        assert_eq!(sol.lambda[sh.index(0, 1, 0, 0)], f64::NEG_INFINITY);
    }
}
