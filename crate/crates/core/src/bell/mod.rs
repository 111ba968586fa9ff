//! Bell functionals, the local polytope and violation-to-capacity bounds.

mod basis;
mod bound;
mod functional;
mod lp;

pub use basis::{facet_alignment, max_facet_alignment, NSBasis};
pub use bound::{capacity_bound_f, capacity_bound_f_bar, BoundEstimate, EtaSearch};
pub use functional::{
    cglmp3_functional, chsh_functional, chsh_orbit, extract_bell, local_bound, max_violation,
    violation, BellFunctional, Violation, MAX_VERTEX_PAIRS,
};
pub use lp::{is_local, Locality, VertexWeight, LOCALITY_TOL};
