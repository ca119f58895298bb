//! Certifiably optimal n-view triangulation.
//!
//! Triangulation is posed as a quadratically constrained quadratic program over
//! the stacked image coordinates, subject to the pairwise epipolar constraints.
//! Its first semidefinite relaxation is solved with an embedded primal-dual
//! interior-point method; when the dual multipliers make `I + Σ λ_ij H_ij`
//! sufficiently positive definite the relaxation is tight, the primal solution
//! has rank one, and the extracted point is the global optimum.
//!
//! Module map:
//!
//! * [`linalg`]: small dense kernels (symmetric eigen, SVD, Cholesky, solves)
//! * [`geometry`]: cameras, projection, fundamental matrices, DLT
//! * [`qcqp`]: lifted objective and epipolar constraint matrices
//! * [`sdp`]: the interior-point solver and the triangulation-specific dual map
//! * [`certify`]: the full certification pipeline and local refinement
//! * [`harness`]: synthetic experiments and CSV output
//! * [`scene`]: text and JSON scene files

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod qcqp;
pub mod scene;
pub mod sdp;

pub use certify::{
    check_certificate, gradient_slice_check, refine, stationary_duals, triangulate, CertifyConfig, Refinement,
    Status, TriangulationResult,
};
pub use error::{Error, Result};
pub use geometry::{Camera, FundamentalMatrix, ImagePoint, WorldPoint};
pub use qcqp::{build_qcqp, LiftedConstraint, LiftedQcqp, ObservationVector};
pub use sdp::{solve_sdp, SdpProblem, SdpSolution, SolverConfig, SolverStatus};
