use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::state::DensityOperator;
use crate::error::{Error, Party, Result};
use crate::nsbox::{BoxShape, NSBox, DEFAULT_TOL};

pub type CVector = DVector<Complex64>;

/// An orthonormal basis; vector `i` belongs to outcome `i`.
pub type Basis = Vec<CVector>;

const ORTHO_TOL: f64 = 1e-10;

/// Projective measurements for both parties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SetupFile", into = "SetupFile")]
pub struct MeasurementSetup {
    alice: Vec<Basis>,
    bob: Vec<Basis>,
}

#[derive(Serialize, Deserialize)]
struct SetupFile {
    alice: Vec<Vec<Vec<Complex64>>>,
    bob: Vec<Vec<Vec<Complex64>>>,
}

impl TryFrom<SetupFile> for MeasurementSetup {
    type Error = Error;

    fn try_from(file: SetupFile) -> Result<Self> {
        let conv = |bases: Vec<Vec<Vec<Complex64>>>| -> Vec<Basis> {
            bases
                .into_iter()
                .map(|b| b.into_iter().map(CVector::from_vec).collect())
                .collect()
        };
        Self::new(conv(file.alice), conv(file.bob))
    }
}

impl From<MeasurementSetup> for SetupFile {
    fn from(s: MeasurementSetup) -> Self {
        let conv = |bases: &[Basis]| -> Vec<Vec<Vec<Complex64>>> {
            bases
                .iter()
                .map(|b| b.iter().map(|v| v.iter().copied().collect()).collect())
                .collect()
        };
        Self {
            alice: conv(&s.alice),
            bob: conv(&s.bob),
        }
    }
}

/// Largest deviation of the Gram matrix from the identity.
pub fn gram_residual(basis: &[CVector]) -> f64 {
    let mut worst = 0.0f64;
    for (i, u) in basis.iter().enumerate() {
        for (j, v) in basis.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((u.dotc(v) - target).norm());
        }
    }
    worst
}

fn check_party(bases: &[Basis], party: Party) -> Result<usize> {
    let d = bases.first().map(|b| b.len()).unwrap_or(0);
    if d == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{party} needs at least one nonempty basis"
        )));
    }
    for (index, basis) in bases.iter().enumerate() {
        if basis.len() != d || basis.iter().any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "{party} basis {index} is not {d} vectors of length {d}"
            )));
        }
        let residual = gram_residual(basis);
        if residual > ORTHO_TOL {
            return Err(Error::NonOrthonormalBasis {
                party,
                index,
                residual,
            });
        }
    }
    Ok(d)
}

impl MeasurementSetup {
    pub fn new(alice: Vec<Basis>, bob: Vec<Basis>) -> Result<Self> {
        check_party(&alice, Party::Alice)?;
        check_party(&bob, Party::Bob)?;
        Ok(Self { alice, bob })
    }

    /// Skips the orthonormality check; bases produced by unitary updates.
    pub(crate) fn from_parts(alice: Vec<Basis>, bob: Vec<Basis>) -> Self {
        Self { alice, bob }
    }

    pub fn alice(&self) -> &[Basis] {
        &self.alice
    }

    pub fn bob(&self) -> &[Basis] {
        &self.bob
    }

    pub fn into_parts(self) -> (Vec<Basis>, Vec<Basis>) {
        (self.alice, self.bob)
    }

    /// Box shape `A x B x d_A x d_B`.
    pub fn shape(&self) -> BoxShape {
        BoxShape {
            a: self.alice.len(),
            b: self.bob.len(),
            r: self.alice[0].len(),
            s: self.bob[0].len(),
        }
    }

    /// Computational basis for every setting.
    pub fn computational(shape: BoxShape) -> Result<Self> {
        shape.check()?;
        let basis = |d: usize| -> Basis {
            (0..d)
                .map(|i| CVector::from_fn(d, |k, _| unit(k == i)))
                .collect()
        };
        Ok(Self {
            alice: vec![basis(shape.r); shape.a],
            bob: vec![basis(shape.s); shape.b],
        })
    }

    /// Independent Haar-random bases for every setting.
    pub fn haar<R: Rng + ?Sized>(shape: BoxShape, rng: &mut R) -> Result<Self> {
        shape.check()?;
        let alice = (0..shape.a).map(|_| haar_basis(shape.r, rng)).collect();
        let bob = (0..shape.b).map(|_| haar_basis(shape.s, rng)).collect();
        Ok(Self { alice, bob })
    }

    /// Real qubit settings reaching `2 sqrt 2` for the maximally entangled
    /// state: Alice at angles `0, pi/4`, Bob at `pi/8, -pi/8`, where a basis at
    /// angle `t` is `(cos t, sin t), (-sin t, cos t)`.
    pub fn tsirelson() -> Self {
        let basis = |t: f64| -> Basis {
            vec![
                CVector::from_vec(vec![real(t.cos()), real(t.sin())]),
                CVector::from_vec(vec![real(-t.sin()), real(t.cos())]),
            ]
        };
        Self {
            alice: vec![basis(0.0), basis(PI / 4.0)],
            bob: vec![basis(PI / 8.0), basis(-PI / 8.0)],
        }
    }

    /// Fourier-type qutrit bases `|k> = 3^{-1/2} sum_j w^{j (k + phase)} |j>`,
    /// `w = e^{2 pi i / 3}`, with Alice phases `0, 1/2` and Bob phases
    /// `-1/4, 1/4` (conjugate exponent on Bob's side). Maximizes
    /// [`crate::bell::cglmp3_functional`] on the maximally entangled state.
    pub fn cglmp3() -> Self {
        let fourier = |phase: f64, sign: f64| -> Basis {
            (0..3)
                .map(|k| {
                    CVector::from_fn(3, |j, _| {
                        let angle = sign * 2.0 * PI / 3.0 * j as f64 * (k as f64 + phase);
                        Complex64::from_polar(1.0 / 3f64.sqrt(), angle)
                    })
                })
                .collect()
        };
        Self {
            alice: vec![fourier(0.0, 1.0), fourier(0.5, 1.0)],
            bob: vec![fourier(-0.25, -1.0), fourier(0.25, -1.0)],
        }
    }

    /// Adds complex Gaussian noise of size `eps` to every vector and
    /// re-orthonormalizes.
    pub fn perturbed<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Self {
        let mut shake = |bases: &[Basis]| -> Vec<Basis> {
            bases
                .iter()
                .map(|b| {
                    let mut b: Basis = b
                        .iter()
                        .map(|v| {
                            v.map(|z| {
                                let re: f64 = rng.sample(StandardNormal);
                                let im: f64 = rng.sample(StandardNormal);
                                z + Complex64::new(re, im) * eps
                            })
                        })
                        .collect();
                    reorthonormalize(&mut b);
                    b
                })
                .collect()
        };
        let alice = shake(&self.alice);
        let bob = shake(&self.bob);
        Self { alice, bob }
    }

    /// Multiplies every vector by an arbitrary phase; changes nothing observable.
    pub fn rephased(&self, phases: impl Fn(usize) -> f64) -> Self {
        let mut k = 0;
        let mut apply = |bases: &[Basis]| -> Vec<Basis> {
            bases
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|v| {
                            k += 1;
                            v * Complex64::from_polar(1.0, phases(k))
                        })
                        .collect()
                })
                .collect()
        };
        let alice = apply(&self.alice);
        let bob = apply(&self.bob);
        Self { alice, bob }
    }
}

pub(crate) fn reorthonormalize(basis: &mut Basis) {
    for k in 0..basis.len() {
        let mut v = basis[k].clone();
        for prev in basis.iter().take(k) {
            let c = prev.dotc(&v);
            v -= prev * c;
        }
        let n = v.norm();
        basis[k] = v / Complex64::new(n, 0.0);
    }
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn unit(on: bool) -> Complex64 {
    real(if on { 1.0 } else { 0.0 })
}

/// Haar-distributed orthonormal basis: QR of a complex Gaussian matrix with
/// the phases of `R`'s diagonal moved into `Q`.
pub fn haar_basis<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Basis {
    let g = DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    (0..d)
        .map(|k| {
            let diag = r[(k, k)];
            let phase = if diag.norm() > 0.0 {
                diag / diag.norm()
            } else {
                real(1.0)
            };
            q.column(k) * phase
        })
        .collect()
}

/// `<a| <b| rho |b> |a>` for product vectors.
pub(crate) fn expectation(state: &DensityOperator, alpha: &CVector, beta: &CVector) -> f64 {
    let (da, db) = state.dims();
    let x: Vec<Complex64> = (0..da * db)
        .map(|idx| alpha[idx / db] * beta[idx % db])
        .collect();
    let m = state.matrix();
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, xi) in x.iter().enumerate() {
        if xi.norm_sqr() == 0.0 {
            continue;
        }
        let mut row = Complex64::new(0.0, 0.0);
        for (j, xj) in x.iter().enumerate() {
            row += m[(i, j)] * xj;
        }
        acc += xi.conj() * row;
    }
    acc.re
}

/// Born-rule box `P(r,s|a,b) = <alpha_{a,r}| <beta_{b,s}| rho |beta_{b,s}> |alpha_{a,r}>`.
pub fn born_box(state: &DensityOperator, setup: &MeasurementSetup) -> Result<NSBox> {
    NSBox::renormalized(born_tensor(state, setup)?, setup.shape(), DEFAULT_TOL)
}

/// The raw Born-rule tensor before renormalization.
pub fn born_tensor(state: &DensityOperator, setup: &MeasurementSetup) -> Result<Vec<f64>> {
    let sh = setup.shape();
    if state.dims() != (sh.r, sh.s) {
        return Err(Error::DimensionMismatch(format!(
            "state dims {:?} vs measurement dims ({}, {})",
            state.dims(),
            sh.r,
            sh.s
        )));
    }
    let mut p = vec![0.0; sh.len()];
    for a in 0..sh.a {
        for b in 0..sh.b {
            for r in 0..sh.r {
                for s in 0..sh.s {
                    p[sh.index(r, s, a, b)] =
                        expectation(state, &setup.alice[a][r], &setup.bob[b][s]);
                }
            }
        }
    }
    Ok(p)
}
