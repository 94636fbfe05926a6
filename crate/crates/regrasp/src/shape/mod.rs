//! Category-level non-rigid registration.
//!
//! A category is modeled by a canonical mesh plus a low-dimensional latent
//! space of dense deformation fields: coherent point drift computes the field
//! from the canonical model to every training instance, PCA spans the fields,
//! and inference searches the latent space (jointly with a local rigid
//! transform) so the deformed canonical mesh fits an observed cloud. Poses
//! annotated on the canonical model ride the same field, which is how the
//! functional grasp transfers to a novel instance.

mod cpd;
mod infer;
mod persist;
mod warp;

pub use cpd::{cpd_nonrigid, CpdParams};
pub use infer::{infer, inference_cost, inference_cost_and_z_gradient, InferParams};
pub use persist::{load_model, save_model, ModelBundle, ModelMeta};
pub use warp::{warp_pose, warp_pose_through_field, WarpParams};

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::geometry::{RigidTransform, TriangleMesh};

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("EM diverged to non-finite values at iteration {0}")]
    NonFinite(usize),
    #[error("need at least 2 training meshes, got {0}")]
    InsufficientTrainingData(usize),
    #[error("latent dimension {dim} invalid for {instances} training instances")]
    BadLatentDim { dim: usize, instances: usize },
    #[error("latent vector has {got} components, model has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

/// Per-canonical-vertex displacement vectors, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    displacements: Vec<Vector3<f64>>,
}

impl DeformationField {
    pub fn new(displacements: Vec<Vector3<f64>>) -> Self {
        Self { displacements }
    }

    pub fn zeros(count: usize) -> Self {
        Self {
            displacements: vec![Vector3::zeros(); count],
        }
    }

    pub fn displacements(&self) -> &[Vector3<f64>] {
        &self.displacements
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.displacements
            .iter()
            .all(|d| d.x.is_finite() && d.y.is_finite() && d.z.is_finite())
    }

    /// Flattened `[x0, y0, z0, x1, ...]` vector of length `3·len()`.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.displacements.len() * 3);
        for (i, d) in self.displacements.iter().enumerate() {
            v[3 * i] = d.x;
            v[3 * i + 1] = d.y;
            v[3 * i + 2] = d.z;
        }
        v
    }

    pub fn from_flat(flat: &DVector<f64>) -> Self {
        assert_eq!(flat.len() % 3, 0);
        Self {
            displacements: (0..flat.len() / 3)
                .map(|i| Vector3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]))
                .collect(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.displacements
            .iter()
            .map(|d| d.norm())
            .fold(0.0, f64::max)
    }
}

/// Low-dimensional description of a deformation field together with the
/// local rigid transform that absorbs global misalignment.
#[derive(Debug, Clone)]
pub struct LatentDescriptor {
    pub z: DVector<f64>,
    pub local_rigid: RigidTransform,
}

impl LatentDescriptor {
    pub fn zero(latent_dim: usize) -> Self {
        Self {
            z: DVector::zeros(latent_dim),
            local_rigid: RigidTransform::identity(),
        }
    }
}

/// Canonical mesh plus mean deformation field and principal-component basis.
#[derive(Debug, Clone)]
pub struct ShapeSpaceModel {
    canonical: TriangleMesh,
    mean_field: DeformationField,
    /// 3V x L, columns orthonormal.
    basis: DMatrix<f64>,
    /// Per-component training variance (descending).
    training_variances: Vec<f64>,
    /// Total variance of the training fields (all components, kept or not).
    total_variance: f64,
    training_count: usize,
}

/// How the number of kept principal components is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentDim {
    Fixed(usize),
    /// Smallest dimension whose cumulative variance ratio reaches the bound.
    ExplainedVariance(f64),
}

impl Default for LatentDim {
    fn default() -> Self {
        LatentDim::ExplainedVariance(0.95)
    }
}

impl ShapeSpaceModel {
    pub fn canonical(&self) -> &TriangleMesh {
        &self.canonical
    }

    pub fn mean_field(&self) -> &DeformationField {
        &self.mean_field
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn training_variances(&self) -> &[f64] {
        &self.training_variances
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn training_count(&self) -> usize {
        self.training_count
    }

    /// Fraction of training variance explained by the leading `k` components.
    pub fn explained_variance(&self, k: usize) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        self.training_variances.iter().take(k).sum::<f64>() / self.total_variance
    }

    pub(crate) fn from_parts(
        canonical: TriangleMesh,
        mean_field: DeformationField,
        basis: DMatrix<f64>,
        training_variances: Vec<f64>,
        total_variance: f64,
        training_count: usize,
    ) -> Self {
        Self {
            canonical,
            mean_field,
            basis,
            training_variances,
            total_variance,
            training_count,
        }
    }

    /// The deformation field encoded by a latent vector (mean + basis·z),
    /// without the local rigid part.
    pub fn field_of(&self, z: &DVector<f64>) -> Result<DeformationField, ShapeError> {
        if z.len() != self.latent_dim() {
            return Err(ShapeError::DimensionMismatch {
                got: z.len(),
                expected: self.latent_dim(),
            });
        }
        let flat = self.mean_field.to_flat() + &self.basis * z;
        Ok(DeformationField::from_flat(&flat))
    }

    /// Projects a deformation field into the latent space: `Bᵀ(f − mean)`.
    pub fn encode(&self, field: &DeformationField) -> Result<DVector<f64>, ShapeError> {
        if field.len() != self.canonical.vertices().len() {
            return Err(ShapeError::DimensionMismatch {
                got: field.len(),
                expected: self.canonical.vertices().len(),
            });
        }
        let centered = field.to_flat() - self.mean_field.to_flat();
        Ok(self.basis.transpose() * centered)
    }

    /// Deformed mesh for a latent descriptor:
    /// `local_rigid ∘ (canonical + mean + basis·z)`, topology unchanged.
    pub fn decode(&self, latent: &LatentDescriptor) -> Result<TriangleMesh, ShapeError> {
        let field = self.field_of(&latent.z)?;
        let vertices: Vec<Vector3<f64>> = self
            .canonical
            .vertices()
            .iter()
            .zip(field.displacements())
            .map(|(v, d)| latent.local_rigid.apply(&(v + d)))
            .collect();
        Ok(self.canonical.with_vertices(vertices))
    }
}

/// Outcome of latent-space inference against an observed cloud.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub latent: LatentDescriptor,
    /// Deformed mesh in the object frame implied by the inference init pose.
    pub deformed_mesh: TriangleMesh,
    /// RMS observed-point-to-model distance, meters.
    pub fitness_rms: f64,
    /// False when the iteration budget ran out before the cost settled; the
    /// best iterate is still returned.
    pub converged: bool,
    /// Cost after each accepted iteration (non-increasing).
    pub cost_trace: Vec<f64>,
}

/// Learns the shape space: one CPD field per training mesh, PCA over the
/// stacked fields.
pub fn train_shape_space(
    canonical: &TriangleMesh,
    training_meshes: &[TriangleMesh],
    latent_dim: LatentDim,
    cpd_params: &CpdParams,
) -> Result<ShapeSpaceModel, ShapeError> {
    let k = training_meshes.len();
    if k < 2 {
        return Err(ShapeError::InsufficientTrainingData(k));
    }
    let v = canonical.vertices().len();
    if v == 0 {
        return Err(ShapeError::EmptyCloud);
    }

    let canonical_cloud = canonical.vertex_cloud();
    let mut fields = Vec::with_capacity(k);
    for mesh in training_meshes {
        fields.push(cpd_nonrigid(&canonical_cloud, &mesh.vertex_cloud(), cpd_params)?);
    }

    // Rows = training instances, columns = flattened field entries.
    let mut data = DMatrix::<f64>::zeros(k, 3 * v);
    for (r, field) in fields.iter().enumerate() {
        data.row_mut(r).copy_from(&field.to_flat().transpose());
    }
    let mean_row = data.row_sum() / k as f64;
    for r in 0..k {
        let centered = data.row(r) - &mean_row;
        data.row_mut(r).copy_from(&centered);
    }

    let svd = data.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| ShapeError::BadModelFile("SVD failed".into()))?;
    let denom = (k - 1).max(1) as f64;
    let all_variances: Vec<f64> = svd.singular_values.iter().map(|s| s * s / denom).collect();
    let total_variance: f64 = all_variances.iter().sum();

    let dim = match latent_dim {
        LatentDim::Fixed(dim) => {
            if dim == 0 || dim > k {
                return Err(ShapeError::BadLatentDim { dim, instances: k });
            }
            dim.min(v_t.nrows())
        }
        LatentDim::ExplainedVariance(ratio) => {
            let mut acc = 0.0;
            let mut dim = all_variances.len().min(v_t.nrows());
            for (i, var) in all_variances.iter().enumerate() {
                acc += var;
                if total_variance <= 0.0 || acc / total_variance >= ratio {
                    dim = i + 1;
                    break;
                }
            }
            dim
        }
    };

    let mut basis = DMatrix::<f64>::zeros(3 * v, dim);
    for c in 0..dim {
        basis.column_mut(c).copy_from(&v_t.row(c).transpose());
    }
    let mean_field = DeformationField::from_flat(&mean_row.transpose());

    Ok(ShapeSpaceModel::from_parts(
        canonical.clone(),
        mean_field,
        basis,
        all_variances[..dim].to_vec(),
        total_variance,
        k,
    ))
}
