//! Probability objects shared by the solver, Bell and quantum modules.
//!
//! Layouts are fixed row-major: an [`NSBox`] is indexed `(r, s, a, b)` and a
//! [`JointExtension`] is indexed `(r, packed s-sequence, a)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Party, Result};

/// Default validation tolerance for boxes.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Largest joint extension (entries) we are willing to allocate.
pub const MAX_EXTENSION_ENTRIES: u128 = 1 << 28;

/// Counts of settings and outcomes for a bipartite box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxShape {
    /// Alice settings.
    #[serde(rename = "A")]
    pub a: usize,
    /// Bob settings.
    #[serde(rename = "B")]
    pub b: usize,
    /// Alice outcomes.
    #[serde(rename = "R")]
    pub r: usize,
    /// Bob outcomes.
    #[serde(rename = "S")]
    pub s: usize,
}

impl BoxShape {
    pub fn new(a: usize, b: usize, r: usize, s: usize) -> Result<Self> {
        let shape = Self { a, b, r, s };
        shape.check()?;
        Ok(shape)
    }

    pub fn check(&self) -> Result<()> {
        if self.a == 0 || self.b == 0 || self.r == 0 || self.s == 0 {
            return Err(Error::InvalidShape(format!(
                "all counts must be >= 1, got {self}"
            )));
        }
        Ok(())
    }

    /// Parses `AxBxRxS`, e.g. `2x2x3x3`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.trim().split(['x', 'X']).collect();
        if parts.len() != 4 {
            return Err(Error::InvalidShape(format!(
                "expected AxBxRxS, got {text:?}"
            )));
        }
        let mut v = [0usize; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::InvalidShape(format!("bad count {part:?} in {text:?}")))?;
        }
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Number of entries of a box tensor, `R*S*A*B`.
    pub fn len(&self) -> usize {
        self.r * self.s * self.a * self.b
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, r: usize, s: usize, a: usize, b: usize) -> usize {
        ((r * self.s + s) * self.a + a) * self.b + b
    }

    /// Inverse of [`BoxShape::index`].
    pub fn unindex(&self, mut i: usize) -> (usize, usize, usize, usize) {
        let b = i % self.b;
        i /= self.b;
        let a = i % self.a;
        i /= self.a;
        let s = i % self.s;
        (i / self.s, s, a, b)
    }

    /// Number of Bob outcome sequences, `S^B`, or `None` on overflow.
    pub fn bob_sequences(&self) -> Option<usize> {
        checked_pow(self.s, self.b)
    }

    /// Number of Alice outcome sequences, `R^A`, or `None` on overflow.
    pub fn alice_sequences(&self) -> Option<usize> {
        checked_pow(self.r, self.a)
    }

    /// Box with the roles of the parties exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            a: self.b,
            b: self.a,
            r: self.s,
            s: self.r,
        }
    }
}

impl std::fmt::Display for BoxShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.a, self.b, self.r, self.s)
    }
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

/// Dimension of the affine hull of nonsignaling boxes of a given shape.
pub fn ns_dimension(shape: &BoxShape) -> usize {
    let (a, b, r, s) = (shape.a, shape.b, shape.r, shape.s);
    a * b * (r - 1) * (s - 1) + a * (r - 1) + b * (s - 1)
}

/// Mixed-radix packing of an outcome sequence, first element least significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceIndex(pub usize);

impl SequenceIndex {
    pub fn encode(seq: &[usize], radix: usize) -> Self {
        let mut packed = 0;
        for &digit in seq.iter().rev() {
            debug_assert!(digit < radix);
            packed = packed * radix + digit;
        }
        Self(packed)
    }

    pub fn decode(self, radix: usize, len: usize) -> Vec<usize> {
        let mut out = vec![0; len];
        self.decode_into(radix, &mut out);
        out
    }

    pub fn decode_into(self, radix: usize, out: &mut [usize]) {
        let mut rest = self.0;
        for slot in out.iter_mut() {
            *slot = rest % radix;
            rest /= radix;
        }
    }
}

/// Table of decoded sequences, `table[q * len + k]` is the `k`-th digit of sequence `q`.
pub fn sequence_table(radix: usize, len: usize) -> Vec<usize> {
    let count = checked_pow(radix, len).expect("sequence count overflow");
    let mut table = vec![0; count * len];
    for (q, chunk) in table.chunks_mut(len.max(1)).enumerate().take(count) {
        if len > 0 {
            SequenceIndex(q).decode_into(radix, chunk);
        }
    }
    table
}

/// A validated nonsignaling box `P(r,s|a,b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxFile")]
pub struct NSBox {
    shape: BoxShape,
    p: Vec<f64>,
    tol: f64,
}

#[derive(Deserialize)]
struct BoxFile {
    shape: BoxShape,
    p: Vec<f64>,
    #[serde(default)]
    tol: Option<f64>,
}

impl TryFrom<BoxFile> for NSBox {
    type Error = Error;

    fn try_from(file: BoxFile) -> Result<Self> {
        validate_nsbox(file.p, file.shape, file.tol.unwrap_or(DEFAULT_TOL))
    }
}

impl NSBox {
    /// Validates a raw tensor. Entries in `[-tol, 0)` are clamped to zero and each
    /// `(a,b)` block is renormalized after the checks pass.
    pub fn new(p: Vec<f64>, shape: BoxShape, tol: f64) -> Result<Self> {
        validate_nsbox(p, shape, tol)
    }

    /// Renormalizes every `(a,b)` block before validating; used for boxes
    /// produced by floating-point pipelines such as the Born rule.
    pub fn renormalized(mut p: Vec<f64>, shape: BoxShape, tol: f64) -> Result<Self> {
        shape.check()?;
        if p.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                found: p.len(),
            });
        }
        for a in 0..shape.a {
            for b in 0..shape.b {
                let mut sum = 0.0;
                for r in 0..shape.r {
                    for s in 0..shape.s {
                        sum += p[shape.index(r, s, a, b)].max(0.0);
                    }
                }
                if sum > 0.0 {
                    for r in 0..shape.r {
                        for s in 0..shape.s {
                            let i = shape.index(r, s, a, b);
                            p[i] = if p[i] < 0.0 && p[i] >= -tol {
                                0.0
                            } else {
                                p[i] / sum
                            };
                        }
                    }
                }
            }
        }
        validate_nsbox(p, shape, tol)
    }

    pub fn from_fn(
        shape: BoxShape,
        tol: f64,
        f: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        shape.check()?;
        let mut p = vec![0.0; shape.len()];
        for (i, slot) in p.iter_mut().enumerate() {
            let (r, s, a, b) = shape.unindex(i);
            *slot = f(r, s, a, b);
        }
        validate_nsbox(p, shape, tol)
    }

    /// Uniform box `1/(RS)`.
    pub fn uniform(shape: BoxShape) -> Result<Self> {
        let v = 1.0 / (shape.r * shape.s) as f64;
        Self::from_fn(shape, DEFAULT_TOL, |_, _, _, _| v)
    }

    /// Popescu-Rohrlich box on the 2x2x2x2 shape: `r xor s = a*b` with probability 1/2.
    pub fn pr_box() -> Self {
        let shape = BoxShape {
            a: 2,
            b: 2,
            r: 2,
            s: 2,
        };
        Self::from_fn(shape, DEFAULT_TOL, |r, s, a, b| {
            if (r ^ s) == (a & b) {
                0.5
            } else {
                0.0
            }
        })
        .expect("PR box is nonsignaling")
    }

    /// Deterministic local vertex: Alice answers `alice[a]`, Bob answers `bob[b]`.
    pub fn deterministic(shape: BoxShape, alice: &[usize], bob: &[usize]) -> Result<Self> {
        if alice.len() != shape.a || bob.len() != shape.b {
            return Err(Error::ShapeMismatch(format!(
                "vertex sequences have lengths {}/{}, shape {shape}",
                alice.len(),
                bob.len()
            )));
        }
        Self::from_fn(shape, DEFAULT_TOL, |r, s, a, b| {
            if alice[a] == r && bob[b] == s {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Convex combination `sum_k w_k P_k`; weights are normalized.
    pub fn mixture(parts: &[(f64, &NSBox)]) -> Result<Self> {
        let Some((_, first)) = parts.first() else {
            return Err(Error::InvalidShape("empty mixture".into()));
        };
        let shape = first.shape;
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        if total <= 0.0 || parts.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::InvalidShape(
                "mixture weights must be nonnegative with positive sum".into(),
            ));
        }
        let mut p = vec![0.0; shape.len()];
        for (w, part) in parts {
            if part.shape != shape {
                return Err(Error::ShapeMismatch(format!("{} vs {}", part.shape, shape)));
            }
            for (acc, v) in p.iter_mut().zip(&part.p) {
                *acc += w / total * v;
            }
        }
        validate_nsbox(p, shape, first.tol)
    }

    pub fn shape(&self) -> BoxShape {
        self.shape
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Flat tensor in `(r,s,a,b)` row-major order.
    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    #[inline]
    pub fn get(&self, r: usize, s: usize, a: usize, b: usize) -> f64 {
        self.p[self.shape.index(r, s, a, b)]
    }

    /// `P(r|a)`, averaged over Bob settings.
    pub fn alice_marginal(&self, r: usize, a: usize) -> f64 {
        let sh = &self.shape;
        let mut total = 0.0;
        for b in 0..sh.b {
            for s in 0..sh.s {
                total += self.get(r, s, a, b);
            }
        }
        total / sh.b as f64
    }

    /// `P(s|b)`, averaged over Alice settings.
    pub fn bob_marginal(&self, s: usize, b: usize) -> f64 {
        let sh = &self.shape;
        let mut total = 0.0;
        for a in 0..sh.a {
            for r in 0..sh.r {
                total += self.get(r, s, a, b);
            }
        }
        total / sh.a as f64
    }

    /// `sum P(r,s|a,b) * coeffs(r,s,a,b)`.
    pub fn dot(&self, coeffs: &[f64]) -> f64 {
        self.p
            .iter()
            .zip(coeffs)
            .map(|(p, c)| if *p == 0.0 { 0.0 } else { p * c })
            .sum()
    }

    /// Applies permutations of settings and outcomes. `alice_out[a]` permutes
    /// Alice's outcomes for setting `a` (new label = `alice_out[a][old]`).
    pub fn relabeled(
        &self,
        alice_settings: &[usize],
        bob_settings: &[usize],
        alice_out: &[Vec<usize>],
        bob_out: &[Vec<usize>],
    ) -> Result<Self> {
        let sh = self.shape;
        let mut p = vec![0.0; sh.len()];
        for r in 0..sh.r {
            for s in 0..sh.s {
                for a in 0..sh.a {
                    for b in 0..sh.b {
                        let (na, nb) = (alice_settings[a], bob_settings[b]);
                        let (nr, ns) = (alice_out[a][r], bob_out[b][s]);
                        p[sh.index(nr, ns, na, nb)] = self.get(r, s, a, b);
                    }
                }
            }
        }
        validate_nsbox(p, sh, self.tol)
    }

    /// Box seen from Bob's side: `P'(s,r|b,a) = P(r,s|a,b)`.
    pub fn transposed(&self) -> Self {
        let sh = self.shape;
        let t = sh.transposed();
        let mut p = vec![0.0; sh.len()];
        for r in 0..sh.r {
            for s in 0..sh.s {
                for a in 0..sh.a {
                    for b in 0..sh.b {
                        p[t.index(s, r, b, a)] = self.get(r, s, a, b);
                    }
                }
            }
        }
        Self {
            shape: t,
            p,
            tol: self.tol,
        }
    }
}

/// Checks nonnegativity, normalization and both nonsignaling families.
///
/// On failure the error names the worst offending index tuple of the first
/// failing family (negativity, then normalization, then signaling).
pub fn validate_nsbox(mut p: Vec<f64>, shape: BoxShape, tol: f64) -> Result<NSBox> {
    shape.check()?;
    if p.len() != shape.len() {
        return Err(Error::LengthMismatch {
            expected: shape.len(),
            found: p.len(),
        });
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    let sh = shape;

    let mut worst_neg: Option<(usize, f64)> = None;
    for (i, &v) in p.iter().enumerate() {
        if !v.is_finite() || v < -tol {
            let v = if v.is_finite() { v } else { f64::NEG_INFINITY };
            if worst_neg.is_none_or(|(_, w)| v < w) {
                worst_neg = Some((i, v));
            }
        }
    }
    if let Some((i, value)) = worst_neg {
        let (r, s, a, b) = sh.unindex(i);
        return Err(Error::NegativeEntry { r, s, a, b, value });
    }
    for v in p.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    let get = |p: &[f64], r, s, a, b| p[sh.index(r, s, a, b)];
    let mut worst: Option<(usize, usize, f64, f64)> = None;
    for a in 0..sh.a {
        for b in 0..sh.b {
            let mut sum = 0.0;
            for r in 0..sh.r {
                for s in 0..sh.s {
                    sum += get(&p, r, s, a, b);
                }
            }
            let res = (sum - 1.0).abs();
            if res > tol && worst.is_none_or(|w| res > w.3) {
                worst = Some((a, b, sum, res));
            }
        }
    }
    if let Some((a, b, sum, residual)) = worst {
        return Err(Error::NotNormalized {
            a,
            b,
            sum,
            residual,
        });
    }

    let mut worst_sig: Option<(Party, usize, usize, usize, usize, f64)> = None;
    let mut consider = |cand: (Party, usize, usize, usize, usize, f64)| {
        if cand.5 > tol && worst_sig.is_none_or(|w| cand.5 > w.5) {
            worst_sig = Some(cand);
        }
    };
    for a in 0..sh.a {
        for r in 0..sh.r {
            let marg = |b: usize| (0..sh.s).map(|s| get(&p, r, s, a, b)).sum::<f64>();
            let m0 = marg(0);
            for b in 1..sh.b {
                consider((Party::Alice, r, a, 0, b, (marg(b) - m0).abs()));
            }
        }
    }
    for b in 0..sh.b {
        for s in 0..sh.s {
            let marg = |a: usize| (0..sh.r).map(|r| get(&p, r, s, a, b)).sum::<f64>();
            let m0 = marg(0);
            for a in 1..sh.a {
                consider((Party::Bob, s, b, 0, a, (marg(a) - m0).abs()));
            }
        }
    }
    if let Some((party, outcome, setting, remote, remote_other, residual)) = worst_sig {
        return Err(Error::Signaling {
            party,
            outcome,
            setting,
            remote,
            remote_other,
            residual,
        });
    }

    // Clamping may have shifted the sums by at most tol; restore exact normalization.
    for a in 0..sh.a {
        for b in 0..sh.b {
            let mut sum = 0.0;
            for r in 0..sh.r {
                for s in 0..sh.s {
                    sum += get(&p, r, s, a, b);
                }
            }
            for r in 0..sh.r {
                for s in 0..sh.s {
                    p[sh.index(r, s, a, b)] /= sum;
                }
            }
        }
    }
    Ok(NSBox { shape, p, tol })
}

/// Input distribution `rho(a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InputDist(Vec<f64>);

impl InputDist {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInputDist("empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInputDist(format!(
                "negative or non-finite entry in {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInputDist(format!("sums to {sum}")));
        }
        Ok(Self(weights))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidInputDist(format!("weights sum to {sum}")));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for InputDist {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<InputDist> for Vec<f64> {
    fn from(d: InputDist) -> Self {
        d.0
    }
}

/// Distribution `rho(r, s-sequence | a)` over Alice's outcome and a full
/// sequence of Bob outcomes, one per Bob setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointExtension {
    shape: BoxShape,
    sequences: usize,
    rho: Vec<f64>,
}

impl JointExtension {
    /// Number of entries `R * S^B * A`, rejecting shapes past the memory guard.
    pub fn planned_len(shape: &BoxShape) -> Result<usize> {
        let seqs = (shape.s as u128)
            .checked_pow(shape.b as u32)
            .unwrap_or(u128::MAX);
        let entries = seqs
            .saturating_mul(shape.r as u128)
            .saturating_mul(shape.a as u128);
        if entries > MAX_EXTENSION_ENTRIES {
            return Err(Error::CapacityPlanning {
                entries,
                limit: MAX_EXTENSION_ENTRIES,
            });
        }
        Ok(entries as usize)
    }

    pub fn zeros(shape: BoxShape) -> Result<Self> {
        shape.check()?;
        let len = Self::planned_len(&shape)?;
        let sequences = shape.bob_sequences().expect("guarded above");
        Ok(Self {
            shape,
            sequences,
            rho: vec![0.0; len],
        })
    }

    pub fn from_vec(shape: BoxShape, rho: Vec<f64>) -> Result<Self> {
        let mut ext = Self::zeros(shape)?;
        if rho.len() != ext.rho.len() {
            return Err(Error::LengthMismatch {
                expected: ext.rho.len(),
                found: rho.len(),
            });
        }
        ext.rho = rho;
        Ok(ext)
    }

    /// The extension `rho(r, s|a) = P(r, s_1|a, 1) * prod_{b>=2} P(s_b|b)`.
    pub fn product_extension(nsbox: &NSBox) -> Result<Self> {
        let sh = nsbox.shape();
        let mut ext = Self::zeros(sh)?;
        let mut seq = vec![0; sh.b];
        for q in 0..ext.sequences {
            SequenceIndex(q).decode_into(sh.s, &mut seq);
            let tail: f64 = (1..sh.b).map(|b| nsbox.bob_marginal(seq[b], b)).product();
            for r in 0..sh.r {
                for a in 0..sh.a {
                    ext.set(r, q, a, nsbox.get(r, seq[0], a, 0) * tail);
                }
            }
        }
        Ok(ext)
    }

    pub fn shape(&self) -> BoxShape {
        self.shape
    }

    /// `S^B`.
    pub fn sequences(&self) -> usize {
        self.sequences
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    #[inline]
    pub fn index(&self, r: usize, q: usize, a: usize) -> usize {
        (r * self.sequences + q) * self.shape.a + a
    }

    #[inline]
    pub fn get(&self, r: usize, q: usize, a: usize) -> f64 {
        self.rho[self.index(r, q, a)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, q: usize, a: usize, v: f64) {
        let i = self.index(r, q, a);
        self.rho[i] = v;
    }

    /// Channel `rho(s|a) = sum_r rho(r,s|a)`, laid out `[a * S^B + q]`.
    pub fn channel(&self) -> Vec<f64> {
        let (na, nq) = (self.shape.a, self.sequences);
        let mut out = vec![0.0; na * nq];
        for r in 0..self.shape.r {
            for q in 0..nq {
                for a in 0..na {
                    out[a * nq + q] += self.get(r, q, a);
                }
            }
        }
        out
    }

    /// Largest deviation of `sum_{r,s} rho(r,s|a)` from one.
    pub fn normalization_residual(&self) -> f64 {
        let ch = self.channel();
        ch.chunks(self.sequences)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `max |sum_{s: s_b = s} rho(r,s|a) - P(r,s|a,b)|` over all `(r,s,a,b)`.
pub fn extension_residual(ext: &JointExtension, nsbox: &NSBox) -> Result<f64> {
    let sh = nsbox.shape();
    if ext.shape() != sh {
        return Err(Error::ShapeMismatch(format!(
            "extension {} vs box {}",
            ext.shape(),
            sh
        )));
    }
    let mut marg = vec![0.0; sh.len()];
    let mut seq = vec![0; sh.b];
    for q in 0..ext.sequences() {
        SequenceIndex(q).decode_into(sh.s, &mut seq);
        for r in 0..sh.r {
            for a in 0..sh.a {
                let v = ext.get(r, q, a);
                if v != 0.0 {
                    for (b, &s) in seq.iter().enumerate() {
                        marg[sh.index(r, s, a, b)] += v;
                    }
                }
            }
        }
    }
    Ok(marg
        .iter()
        .zip(nsbox.as_slice())
        .map(|(m, p)| (m - p).abs())
        .fold(0.0, f64::max))
}
