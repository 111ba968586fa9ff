//! JSON files for boxes, functionals, setups, states and results.

use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{CMatrix, DensityOperator, GammaState};

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A state file: `{"gamma1": x, "gamma2": y}`, a density operator with
/// explicit `dims`, or a bare square matrix of `[re, im]` entries with equal
/// local dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Gamma(GammaState),
    Dense(DensityOperator),
    Bare(Vec<Vec<Complex64>>),
}

impl StateSpec {
    /// Density operator with local dimension `d` where the description leaves it open.
    pub fn density(&self, d: Option<usize>) -> Result<DensityOperator> {
        match self {
            StateSpec::Gamma(g) => match (GammaState::new(g.gamma1, g.gamma2)?, d) {
                (g, Some(d)) => g.density_in(d),
                (g, None) => g.density(),
            },
            StateSpec::Dense(rho) => Ok(rho.clone()),
            StateSpec::Bare(rows) => {
                let n = rows.len();
                let local = (n as f64).sqrt().round() as usize;
                if local * local != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidState(format!(
                        "bare matrix must be square with a square size, got {n} rows"
                    )));
                }
                DensityOperator::new((local, local), CMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

pub fn parse_state(text: &str) -> Result<StateSpec> {
    Ok(serde_json::from_str(text)?)
}
