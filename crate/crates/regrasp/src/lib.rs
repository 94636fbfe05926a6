//! Dual-arm functional regrasp planning toolkit.
//!
//! The crate covers the full planning chain needed to regrasp a novel object
//! of a known category so that its intended use becomes possible: rigid pose
//! refinement by ICP, category-level non-rigid shape registration with grasp
//! warping, supportive-hand grasp sampling on rendered depth images, handover
//! pose optimization over a joint-limit proximity cost, observation pose
//! generation, and in-hand pose correction after the first grasp. A synthetic
//! scene harness (`pipeline`) runs all stages end-to-end without robot
//! hardware.
//!
//! Everything is deterministic for fixed seeds: samplers use explicit RNG
//! streams or low-discrepancy sequences, and no stage depends on wall-clock
//! time or iteration order of unordered containers.

pub mod collision;
pub mod geometry;
pub mod grasp;
pub mod handover;
pub mod icp;
pub mod kinematics;
pub mod pipeline;
pub mod render;
pub mod shape;
pub mod viewpose;

mod spatial;

pub use geometry::{PointCloud, RigidTransform, TriangleMesh};
