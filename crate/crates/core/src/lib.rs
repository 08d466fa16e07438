//! Posterior Cramér-Rao bounds on localization and mapping errors for
//! multipath SLAM with distributed anchors.
//!
//! Surfaces are represented by master virtual anchors, so the mapping error
//! bound of each surface covers both its position and its orientation. The
//! crate evaluates position, velocity, orientation and per-surface mapping
//! bounds along a ground-truth trajectory and ships an oracle-association
//! EKF with a Monte-Carlo harness to compare achieved errors against them.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ekf;
pub mod error;
pub mod exec;
pub mod fim;
pub mod geometry;
pub mod layout;
pub mod linalg;
pub mod pcrlb;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod selfcheck;

pub use error::{BoundsError, Result};
