//! Semantic-cluster SLAM back-end.
//!
//! The library refines monocular keyframe poses and sparse map points with a
//! plane-regularized bundle adjustment. Per-pixel class probabilities are fused
//! into per-point class distributions, points are grouped into
//! temporally-consistent object clusters, planes are fitted to a-priori planar
//! clusters with RANSAC, and the fitted planes enter the optimization as unary
//! point-plane regularizers next to the usual Huber-robust reprojection terms.
//!
//! Modules:
//! - [`geometry`]: SE(3) poses, pinhole projection, homogeneous planes.
//! - [`semantics`]: probability maps, Bayesian class fusion, IOU instance tracking.
//! - [`cluster`]: the semantic map, cluster assignment, merging and id repair.
//! - [`plane_fit`]: SVD plane fitting inside a RANSAC loop.
//! - [`ba`]: Levenberg-Marquardt bundle adjustment with plane regularizers.
//! - [`sim`]: deterministic synthetic scene generation for verification.
//! - [`eval`]: scale-aligned ATE and plane-normal coherence metrics.
//! - [`io`]: TUM trajectories, segmentation ingestion, PLY/JSON map export.
//! - [`pipeline`]: the keyframe loop and run orchestration.

pub mod ba;
pub mod cluster;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod plane_fit;
pub mod semantics;
pub mod sim;
