//! Drifted and killed kernels as Duhamel/Picard series on a lattice.

pub mod base;
pub mod field;
pub(crate) mod lattice;
mod mc_base;
mod series;

pub use base::{BaseKernel, BaseSource};
pub use field::{Anchor, GridSpec, KernelField};
pub use mc_base::{tabulate_mc_base_kernel, McBaseQuality};
pub use series::{
    contraction_estimate, contraction_estimate_at, default_targets, dual_duhamel_rhs, gradient_series, picard_step,
    picard_step_adjoint, semigroup_series, sum_series, sum_series_with, tabulate_base_kernel, Contraction,
    SemigroupField, SeriesDiagnostics,
};
