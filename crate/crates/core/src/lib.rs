//! Position based fluids with per-particle adaptive iteration counts.
//!
//! Every particle carries a level equal to the number of Jacobi iterations
//! it takes part in. Levels come from the camera (distance to the eye or
//! depth behind the visible surface), so fluid far from the viewer or hidden
//! inside the volume leaves the solver early.
//!
//! # Modules
//! - [`kernels`]: poly6 density kernel and spiky gradient.
//! - [`particles`]: structure-of-arrays state, active/finished sets.
//! - [`grid`]: counting-sort uniform grid for neighbor search.
//! - [`sdf`]: obstacle distance functions, contacts, pre-stabilisation.
//! - [`splat`]: camera, sphere splatting into a depth buffer, PPM output.
//! - [`lod`]: distance-to-camera and distance-to-visible-surface levels.
//! - [`solver`]: constraint math and the frame loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod kernels;
pub mod lod;
pub mod particles;
pub mod sdf;
pub mod solver;
pub mod splat;

pub use error::{Error, Result};
pub use grid::{NeighborLists, UniformGrid};
pub use kernels::{density_kernel, gradient_kernel, GradientKernel, KernelParams};
pub use lod::{blend_lod, lod_dtc, lod_dtvs, map_distance_to_level, LodModel, LodModelConfig};
pub use particles::{active_set, finished_set, is_active, IterationRange, ParticleSet};
pub use sdf::{find_contacts, resolve_contact, Contact, SdfPrimitive, SdfScene};
pub use solver::{
    compute_densities, ConstraintParams, FrameStats, InactiveLambda, LodSetup, Solver,
    SolverConfig, SolverMode,
};
pub use splat::{splat, Camera, DepthBuffer, Image};

pub use glam::DVec3;
