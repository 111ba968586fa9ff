//! Quantum states, projective measurements and Born-rule boxes, plus the
//! basis optimization used to maximize linear functionals of the box.

mod ops;
mod setup;
mod state;

pub use ops::{
    alice_operators, bob_operators, effective_operators, functional_value,
    maximize_dual_over_setup, maximize_functional, optimize_party_bases, EffectiveOperators,
    PairSweep, PartyOptimum, SeeSaw, SetupOptimum,
};
pub use setup::{
    born_box, born_tensor, gram_residual, haar_basis, Basis, CVector, MeasurementSetup,
};
pub use state::{CMatrix, DensityOperator, GammaState};
