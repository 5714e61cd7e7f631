//! SFC-based dynamic load balancing toolkit with a simulated-cluster
//! benchmark driver.
//!
//! The crate combines:
//! - [`sfc`]: 3D Hilbert curve indexing and mesh ordering,
//! - [`mesh`]: periodic box meshes, hex-to-mixed-element splitting,
//!   side connectivity and a binary mesh format,
//! - [`kernel`]: a cost-faithful DG-style linear advection kernel with
//!   modal time stepping for non-hexahedral elements,
//! - [`timing`]: section timers and per-element runtime attribution,
//! - [`balance`]: imbalance evaluation, SFC repartitioning and in-memory
//!   element redistribution,
//! - [`cluster`]: a simulated multi-rank runtime with deterministic
//!   collectives,
//! - [`metrics`]: performance index and scaling reports,
//! - [`bench`]: scenario presets and the benchmark driver used by the
//!   `bench` binary.

pub mod balance;
pub mod bench;
pub mod cluster;
pub mod kernel;
pub mod mesh;
pub mod metrics;
pub mod sfc;
pub mod timing;
