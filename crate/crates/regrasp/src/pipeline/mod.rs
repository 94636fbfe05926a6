//! End-to-end orchestration and the synthetic scene harness.
//!
//! A ground-truth scene oracle with configurable noise stands in for the
//! perception stack: scenes render the true instance from the sensor pose,
//! the pipeline then runs pose refinement, shape registration, grasp
//! sampling, handover planning, observation-pose generation and in-hand
//! correction in order, and the report compares the corrected functional
//! grasp against ground truth.

mod run;
mod scene;
pub mod synth;

pub use run::{
    annotate_functional_grasp, build_scene_world, run_batch, run_pipeline, BatchAggregate,
    BatchSummary, FailureInfo, PipelineParams, PipelineReport, PoseError, SceneSummary,
    StageReport,
};
pub use scene::{
    generate_scene, DisturbanceConfig, GeneratedScene, GroundTruth, InstanceSpec, NoiseConfig,
    PoseNoise, SceneConfig, SensorConfig, TableConfig,
};

use thiserror::Error;

use crate::geometry::ClusterRepresentative;
use crate::shape::{train_shape_space, CpdParams, LatentDim, ModelBundle, ModelMeta};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Shape(#[from] crate::shape::ShapeError),
    #[error(transparent)]
    Kinematics(#[from] crate::kinematics::KinematicsError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Mesh preprocessing ahead of shape-space training: subdivision for point
/// density, then clustering decimation to bound the count.
#[derive(Debug, Clone, Copy)]
pub struct TrainingParams {
    pub subdivide_levels: usize,
    /// Decimation cell as a fraction of the mesh bounding diagonal.
    pub decimate_cell_ratio: f64,
    pub latent_dim: LatentDim,
    pub cpd: CpdParams,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            subdivide_levels: 2,
            decimate_cell_ratio: 0.01,
            latent_dim: LatentDim::default(),
            cpd: CpdParams::default(),
        }
    }
}

/// Applies the standard preprocessing to one mesh.
pub fn preprocess_mesh(
    mesh: &crate::geometry::TriangleMesh,
    params: &TrainingParams,
) -> Result<crate::geometry::TriangleMesh, PipelineError> {
    let subdivided = mesh.subdivided(params.subdivide_levels);
    let cell = (subdivided.bounding_diagonal() * params.decimate_cell_ratio).max(1e-6);
    Ok(subdivided.cluster_decimated(cell, ClusterRepresentative::Centroid)?)
}

/// Trains a category model from a synthetic category definition, including
/// preprocessing and the functional grasp annotation.
pub fn train_category_model(
    category: &synth::SyntheticCategory,
    params: TrainingParams,
) -> Result<ModelBundle, PipelineError> {
    let canonical = preprocess_mesh(&category.canonical, &params)?;
    let training: Vec<_> = category
        .training
        .iter()
        .map(|m| preprocess_mesh(m, &params))
        .collect::<Result<_, _>>()?;
    let model = train_shape_space(&canonical, &training, params.latent_dim, &params.cpd)?;
    Ok(ModelBundle {
        model,
        meta: ModelMeta {
            category: category.name.clone(),
            training_meshes: (0..training.len())
                .map(|i| format!("{}_{i:02}", category.name))
                .collect(),
            functional_grasp: Some(category.functional_grasp),
        },
    })
}
