use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Density operator on `C^{d_A} (x) C^{d_B}`; basis index `i * d_B + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityFile", into = "DensityFile")]
pub struct DensityOperator {
    dims: (usize, usize),
    matrix: CMatrix,
}

#[derive(Serialize, Deserialize)]
struct DensityFile {
    dims: (usize, usize),
    /// Row-major rows of `[re, im]` pairs.
    matrix: Vec<Vec<Complex64>>,
}

impl TryFrom<DensityFile> for DensityOperator {
    type Error = Error;

    fn try_from(file: DensityFile) -> Result<Self> {
        let n = file.matrix.len();
        if file.matrix.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidState("density matrix must be square".into()));
        }
        let m = CMatrix::from_fn(n, n, |i, j| file.matrix[i][j]);
        Self::new(file.dims, m)
    }
}

impl From<DensityOperator> for DensityFile {
    fn from(d: DensityOperator) -> Self {
        let n = d.matrix.nrows();
        Self {
            dims: d.dims,
            matrix: (0..n)
                .map(|i| (0..n).map(|j| d.matrix[(i, j)]).collect())
                .collect(),
        }
    }
}

impl DensityOperator {
    /// Checks Hermiticity (1e-12), unit trace (1e-12) and positivity (-1e-10).
    pub fn new(dims: (usize, usize), matrix: CMatrix) -> Result<Self> {
        let n = dims.0 * dims.1;
        if dims.0 == 0 || dims.1 == 0 || matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for dims {dims:?}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let herm = (&matrix - matrix.adjoint())
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()));
        if herm > 1e-12 {
            return Err(Error::InvalidState(format!(
                "not Hermitian (residual {herm:e})"
            )));
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > 1e-12 || trace.im.abs() > 1e-12 {
            return Err(Error::InvalidState(format!("trace is {trace}")));
        }
        let min_eig = matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { dims, matrix })
    }

    /// `|psi><psi|` for a (not necessarily normalized) vector.
    pub fn pure(dims: (usize, usize), psi: &[Complex64]) -> Result<Self> {
        if psi.len() != dims.0 * dims.1 {
            return Err(Error::DimensionMismatch(format!(
                "state vector of length {} for dims {dims:?}",
                psi.len()
            )));
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let v: Vec<Complex64> = psi.iter().map(|z| z / norm).collect();
        let mut m = CMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj());
        // Exact Hermiticity regardless of rounding.
        let adj = m.adjoint();
        m = (m + adj).scale(0.5);
        Self::new(dims, m)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        let db = self.dims.1;
        self.matrix[(i * db + j, k * db + l)]
    }
}

/// `(|00> + g1 |11> + g2 |22>) / sqrt(1 + g1^2 + g2^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaState {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl GammaState {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma1) {
            return Err(Error::InvalidState(format!(
                "gamma1 = {gamma1} outside [0, 1]"
            )));
        }
        if gamma2 != 0.0 && gamma2 != 1.0 {
            return Err(Error::InvalidState(format!(
                "gamma2 = {gamma2} must be 0 or 1"
            )));
        }
        Ok(Self { gamma1, gamma2 })
    }

    /// Local dimension: 2 for qubits (`gamma2 = 0`), 3 for qutrits.
    pub fn local_dim(&self) -> usize {
        if self.gamma2 == 0.0 {
            2
        } else {
            3
        }
    }

    pub fn density(&self) -> Result<DensityOperator> {
        self.density_in(self.local_dim())
    }

    /// The same state embedded in `C^d (x) C^d`, `d >= local_dim()`.
    pub fn density_in(&self, d: usize) -> Result<DensityOperator> {
        if d < self.local_dim() {
            return Err(Error::DimensionMismatch(format!(
                "gamma state needs local dimension {}",
                self.local_dim()
            )));
        }
        let mut psi = vec![Complex64::new(0.0, 0.0); d * d];
        let amps = [1.0, self.gamma1, self.gamma2];
        for (k, amp) in amps.iter().enumerate().take(d) {
            psi[k * d + k] = Complex64::new(*amp, 0.0);
        }
        DensityOperator::pure((d, d), &psi)
    }
}
