//! Approximations of the identity adapted to Monge-Ampère geometry, the
//! Calderón-type reproducing formula built from them, inhomogeneous Besov
//! norms, and singular integral operators of Monge-Ampère type.

pub mod error;
pub mod fit;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod ma_sio;
pub mod approx_id;
pub mod besov;
pub mod calderon;

pub use approx_id::{build_stack, AIStack, BumpProfile};
pub use error::{Error, Result};
pub use geometry::{ConvexPotential, DomainBox, Point, PotentialKind};
pub use grid::{build_grid, DiscretizedDomain, GridFunction};
pub use kernel::{DenseKernel, KernelMatrix, WeightedOperator};
