//! Foundational geometric types: rigid transforms, point clouds, triangle
//! meshes, and the mesh preprocessing filters (subdivision, clustering
//! decimation, bounding spheres) used throughout the planning chain.
//!
//! All types are immutable after construction and every operation is a pure
//! function, so values can be shared freely between workers.

mod cloud;
mod mesh;
mod sphere;
mod transform;

pub mod io;

pub use cloud::PointCloud;
pub use mesh::{ClusterRepresentative, TriangleMesh};
pub use sphere::bounding_sphere;
pub use transform::RigidTransform;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("operation requires at least one point")]
    EmptyInput,
    #[error("face {face} references vertex {index} but mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: u32,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex index")]
    DegenerateFace { face: usize },
    #[error("normal count {normals} does not match point count {points}")]
    NormalCountMismatch { normals: usize, points: usize },
    #[error("{context}: expected unit vector, got norm {norm}")]
    NotUnitLength { context: &'static str, norm: f64 },
    #[error("cell size must be positive, got {0}")]
    NonPositiveCellSize(f64),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}
