//! Blahut-Arimoto capacity of a discrete memoryless channel.

use crate::error::{Error, Result};
use crate::nsbox::InputDist;

/// Row-stochastic channel `W(y|x)`, laid out `[x * outputs + y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    inputs: usize,
    outputs: usize,
    rows: Vec<f64>,
}

impl Channel {
    pub fn new(inputs: usize, outputs: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != inputs * outputs || inputs == 0 || outputs == 0 {
            return Err(Error::ShapeMismatch(format!(
                "channel {inputs}x{outputs} with {} entries",
                rows.len()
            )));
        }
        for (x, row) in rows.chunks(outputs).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-8 {
                return Err(Error::NonstochasticChannel { row: x, sum });
            }
        }
        Ok(Self {
            inputs,
            outputs,
            rows,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x * self.outputs..(x + 1) * self.outputs]
    }

    /// `D(W(.|x) || q)` in nats for every input `x`, with `q` the output law under `p`.
    pub fn divergences(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs];
        for (x, &px) in p.iter().enumerate() {
            if px > 0.0 {
                for (o, w) in out.iter_mut().zip(self.row(x)) {
                    *o += px * w;
                }
            }
        }
        (0..self.inputs)
            .map(|x| {
                self.row(x)
                    .iter()
                    .zip(&out)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, o)| w * (w / o).ln())
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect()
    }

    /// Mutual information `I(X;Y)` in bits for input law `p`.
    pub fn mutual_information(&self, p: &[f64]) -> f64 {
        let d = self.divergences(p);
        p.iter().zip(&d).map(|(p, d)| p * d).sum::<f64>() / std::f64::consts::LN_2
    }
}

/// Outcome of a capacity computation.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityEstimate {
    /// Lower estimate `log sum_x p(x) exp(D_x)`, bits.
    pub capacity: f64,
    /// Upper estimate `max_x D_x`, bits.
    pub upper: f64,
    pub maximizer: InputDist,
    pub iterations: usize,
}

const MAX_BA_ITERS: usize = 200_000;

/// Channel capacity in bits by Blahut-Arimoto. Iterates until the upper and
/// lower capacity estimates are within `tol / 10`.
pub fn channel_capacity(channel: &Channel, tol: f64) -> Result<CapacityEstimate> {
    channel_capacity_from(channel, tol, None)
}

/// As [`channel_capacity`], starting from `start` when given.
pub fn channel_capacity_from(
    channel: &Channel,
    tol: f64,
    start: Option<&InputDist>,
) -> Result<CapacityEstimate> {
    let n = channel.inputs();
    let mut p: Vec<f64> = match start {
        Some(d) if d.len() == n && d.as_slice().iter().all(|v| *v > 0.0) => d.as_slice().to_vec(),
        _ => vec![1.0 / n as f64; n],
    };
    let stop = tol / 10.0 * std::f64::consts::LN_2;
    let mut iterations = 0;
    loop {
        let d = channel.divergences(&p);
        let dmax = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // log-sum-exp relative to the max keeps the weights finite.
        let weights: Vec<f64> = p
            .iter()
            .zip(&d)
            .map(|(p, d)| p * (d - dmax).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        let lower = dmax + z.ln();
        let upper = dmax;
        if upper - lower <= stop || iterations >= MAX_BA_ITERS {
            return Ok(CapacityEstimate {
                capacity: lower.max(0.0) / std::f64::consts::LN_2,
                upper: upper.max(0.0) / std::f64::consts::LN_2,
                maximizer: InputDist::from_weights(&p)?,
                iterations,
            });
        }
        p = weights.iter().map(|w| w / z).collect();
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_entropy(p: f64) -> f64 {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }

    #[test]
    fn identity_channel() {
        for n in 1..6 {
            let mut rows = vec![0.0; n * n];
            for i in 0..n {
                rows[i * n + i] = 1.0;
            }
            let est = channel_capacity(&Channel::new(n, n, rows).unwrap(), 1e-10).unwrap();
            assert!((est.capacity - (n as f64).log2()).abs() < 1e-9);
            for w in est.maximizer.as_slice() {
                assert!((w - 1.0 / n as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn useless_channel_has_zero_capacity() {
        let rows = [0.2, 0.5, 0.3].repeat(4);
        let est = channel_capacity(&Channel::new(4, 3, rows).unwrap(), 1e-10).unwrap();
        assert!(est.upper < 1e-12);
    }

    #[test]
    fn binary_symmetric_channel() {
        let f = 0.11;
        let ch = Channel::new(2, 2, vec![1.0 - f, f, f, 1.0 - f]).unwrap();
        let est = channel_capacity(&ch, 1e-10).unwrap();
        let expected = 1.0 - binary_entropy(f);
        assert!((expected - 0.500_084_041_835).abs() < 1e-9);
        assert!((est.capacity - expected).abs() < 1e-9);
        assert!(est.capacity <= expected + 1e-12 && est.upper >= expected - 1e-12);
    }

    #[test]
    fn asymmetric_channel_brackets_brute_force() {
        // Z-channel: brute-force the input law on a fine grid.
        let ch = Channel::new(2, 2, vec![1.0, 0.0, 0.3, 0.7]).unwrap();
        let est = channel_capacity(&ch, 1e-11).unwrap();
        let brute = (0..=100_000)
            .map(|k| {
                let p = k as f64 / 100_000.0;
                ch.mutual_information(&[p, 1.0 - p])
            })
            .fold(0.0, f64::max);
        assert!(
            (est.capacity - brute).abs() < 1e-8,
            "{} vs {brute}",
            est.capacity
        );
    }

    #[test]
    fn rejects_nonstochastic_rows() {
        assert!(matches!(
            Channel::new(2, 2, vec![0.5, 0.6, 0.5, 0.5]),
            Err(Error::NonstochasticChannel { row: 0, .. })
        ));
    }
}
