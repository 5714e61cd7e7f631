//! Advection kernel: basis sets, time integration and the per-element /
//! per-side update loop with cost instrumentation.

pub mod basis;
pub mod lserk;
pub mod solver;

pub use basis::{
    build_basis, build_basis_with_options, modal_project, modal_reconstruct, BasisSet,
    HexBasisKind, MAX_DEGREE,
};
pub use lserk::LserkScheme;
pub use solver::{Kernel, KernelConfig, LocalSolver};

use crate::mesh::ElementType;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unsupported polynomial degree {0} (max {MAX_DEGREE})")]
    UnsupportedDegree(usize),
    #[error("basis for {element_type:?} at degree {degree} is numerically singular")]
    SingularBasis {
        element_type: ElementType,
        degree: usize,
    },
    #[error("mesh not usable by this kernel: {0}")]
    UnsupportedMesh(String),
    #[error("solution diverged (non-finite values) at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Cluster(#[from] crate::cluster::ClusterError),
}
