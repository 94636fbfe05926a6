//! Transfers poses annotated on the canonical model through a dense
//! deformation field.
//!
//! The per-vertex field is extended off the canonical surface with a
//! Gaussian RBF interpolant augmented by an affine polynomial term, which
//! reproduces translation and scaling fields exactly. Positions warp
//! directly; orientations warp by displacing a small local frame triad and
//! re-orthonormalizing the resulting axes to the nearest rotation.

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;

use super::{DeformationField, RegistrationResult, ShapeError, ShapeSpaceModel};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WarpParams {
    /// Gaussian kernel bandwidth as a fraction of the canonical bounding
    /// diagonal.
    pub kernel_bandwidth_ratio: f64,
    /// Offset of the orientation triad points along the pose axes, meters.
    pub triad_delta: f64,
    /// Cap on interpolation control points; vertices are subsampled evenly
    /// beyond this.
    pub max_control_points: usize,
}

impl Default for WarpParams {
    fn default() -> Self {
        Self {
            kernel_bandwidth_ratio: 0.10,
            triad_delta: 0.01,
            max_control_points: 256,
        }
    }
}

/// Gaussian RBF + affine interpolant of a vector field sampled at control
/// points. The affine side conditions make translation/linear fields
/// reproduce exactly regardless of control-point geometry.
struct FieldInterpolant {
    controls: Vec<Vector3<f64>>,
    /// Per-control RBF weights, one column per output dimension.
    rbf_weights: DMatrix<f64>,
    /// Affine part: rows are output dims, columns [x y z 1].
    affine: DMatrix<f64>,
    two_h2: f64,
}

impl FieldInterpolant {
    fn fit(controls: Vec<Vector3<f64>>, values: &[Vector3<f64>], bandwidth: f64) -> Self {
        let n = controls.len();
        let two_h2 = 2.0 * bandwidth * bandwidth;
        let dim = n + 4;
        let mut system = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            for j in i..n {
                let k = (-(controls[i] - controls[j]).norm_squared() / two_h2).exp();
                system[(i, j)] = k;
                system[(j, i)] = k;
            }
            // Tiny ridge keeps near-duplicate controls solvable without
            // disturbing the affine-exactness (whose RBF weights are zero).
            system[(i, i)] += 1e-10;
            let c = controls[i];
            for (col, v) in [c.x, c.y, c.z, 1.0].into_iter().enumerate() {
                system[(i, n + col)] = v;
                system[(n + col, i)] = v;
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(dim, 3);
        for (i, d) in values.iter().enumerate() {
            rhs[(i, 0)] = d.x;
            rhs[(i, 1)] = d.y;
            rhs[(i, 2)] = d.z;
        }
        let solution = system
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DMatrix::zeros(dim, 3));
        let rbf_weights = solution.rows(0, n).into_owned();
        let affine = solution.rows(n, 4).transpose().into_owned();
        Self {
            controls,
            rbf_weights,
            affine,
            two_h2,
        }
    }

    /// Interpolated field value (displacement) at `x`.
    fn displacement(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut out = Vector3::new(
            self.affine[(0, 0)] * x.x
                + self.affine[(0, 1)] * x.y
                + self.affine[(0, 2)] * x.z
                + self.affine[(0, 3)],
            self.affine[(1, 0)] * x.x
                + self.affine[(1, 1)] * x.y
                + self.affine[(1, 2)] * x.z
                + self.affine[(1, 3)],
            self.affine[(2, 0)] * x.x
                + self.affine[(2, 1)] * x.y
                + self.affine[(2, 2)] * x.z
                + self.affine[(2, 3)],
        );
        for (i, c) in self.controls.iter().enumerate() {
            let k = (-(c - x).norm_squared() / self.two_h2).exp();
            out.x += self.rbf_weights[(i, 0)] * k;
            out.y += self.rbf_weights[(i, 1)] * k;
            out.z += self.rbf_weights[(i, 2)] * k;
        }
        out
    }
}

fn nearest_rotation(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    UnitQuaternion::from_matrix(&(u * d * v_t))
}

/// Warps a pose expressed in the canonical object frame through a
/// deformation field (no local rigid part).
pub fn warp_pose_through_field(
    canonical_vertices: &[Vector3<f64>],
    field: &DeformationField,
    pose: &RigidTransform,
    bandwidth: f64,
    triad_delta: f64,
) -> RigidTransform {
    warp_pose_through_field_capped(canonical_vertices, field, pose, bandwidth, triad_delta, 256)
}

fn warp_pose_through_field_capped(
    canonical_vertices: &[Vector3<f64>],
    field: &DeformationField,
    pose: &RigidTransform,
    bandwidth: f64,
    triad_delta: f64,
    max_control_points: usize,
) -> RigidTransform {
    assert_eq!(canonical_vertices.len(), field.len());
    let n = canonical_vertices.len();
    let (controls, values): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = if n > max_control_points {
        let stride = n as f64 / max_control_points as f64;
        (0..max_control_points)
            .map(|i| {
                let idx = (i as f64 * stride) as usize;
                (canonical_vertices[idx], field.displacements()[idx])
            })
            .unzip()
    } else {
        (
            canonical_vertices.to_vec(),
            field.displacements().to_vec(),
        )
    };
    let interp = FieldInterpolant::fit(controls, &values, bandwidth.max(1e-6));

    let origin = *pose.translation();
    let warped_origin = origin + interp.displacement(&origin);
    let rot = pose.rotation_matrix();
    let mut axes = Matrix3::<f64>::zeros();
    for k in 0..3 {
        let axis: Vector3<f64> = rot.column(k).into();
        let tip = origin + axis * triad_delta;
        let warped_tip = tip + interp.displacement(&tip);
        axes.set_column(k, &((warped_tip - warped_origin) / triad_delta));
    }
    RigidTransform::new(nearest_rotation(&axes), warped_origin)
}

/// Transfers a canonical-frame pose (e.g. the functional grasp annotation)
/// onto a registered instance: kernel-interpolated field warp followed by
/// the registration's local rigid transform.
pub fn warp_pose(
    model: &ShapeSpaceModel,
    result: &RegistrationResult,
    pose_on_canonical: &RigidTransform,
    params: &WarpParams,
) -> Result<RigidTransform, ShapeError> {
    let field = model.field_of(&result.latent.z)?;
    let diag = model.canonical().bounding_diagonal().max(1e-6);
    let warped = warp_pose_through_field_capped(
        model.canonical().vertices(),
        &field,
        pose_on_canonical,
        params.kernel_bandwidth_ratio * diag,
        params.triad_delta,
        params.max_control_points,
    );
    Ok(result.latent.local_rigid.compose(&warped))
}

#[cfg(test)]
mod tests {
    use super::super::test_meshes::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_pose() -> RigidTransform {
        RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.3, -0.2, 0.7),
            Vector3::new(0.03, -0.02, 0.08),
        )
    }

    #[test]
    fn zero_field_keeps_pose() {
        let mesh = canonical_box();
        let field = DeformationField::zeros(mesh.vertices().len());
        let pose = test_pose();
        let out = warp_pose_through_field(mesh.vertices(), &field, &pose, 0.02, 0.01);
        assert!(out.translation_distance_to(&pose) < 1e-9);
        assert!(out.rotation_angle_to(&pose) < 1e-9);
    }

    #[test]
    fn uniform_translation_field_translates_pose() {
        let mesh = canonical_box();
        let t = Vector3::new(0.05, -0.01, 0.02);
        let field = DeformationField::new(vec![t; mesh.vertices().len()]);
        let pose = test_pose();
        let out = warp_pose_through_field(mesh.vertices(), &field, &pose, 0.02, 0.01);
        assert!((out.translation() - (pose.translation() + t)).norm() < 1e-9);
        assert!(out.rotation_angle_to(&pose) < 1e-9);
    }

    #[test]
    fn uniform_scale_field_scales_position_keeps_orientation() {
        let mesh = canonical_box();
        let s = 1.3;
        let field = DeformationField::new(
            mesh.vertices().iter().map(|v| v * (s - 1.0)).collect(),
        );
        let pose = test_pose();
        let out = warp_pose_through_field(mesh.vertices(), &field, &pose, 0.02, 0.01);
        assert!(
            (out.translation() - pose.translation() * s).norm() < 1e-6,
            "position {:?} vs scaled {:?}",
            out.translation(),
            pose.translation() * s
        );
        assert!(out.rotation_angle_to(&pose) < 1e-6);
    }

    #[test]
    fn interpolant_matches_field_at_vertices() {
        let mesh = canonical_box();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        // Smooth non-affine field: sinusoidal perturbation.
        let field = DeformationField::new(
            mesh.vertices()
                .iter()
                .map(|v| {
                    Vector3::new(
                        0.01 * (8.0 * v.y).sin(),
                        0.008 * (7.0 * v.z).cos(),
                        0.012 * (6.0 * v.x).sin(),
                    )
                })
                .collect(),
        );
        // Warp poses anchored at randomly chosen vertices: the interpolated
        // displacement there should be close to the stored one.
        for _ in 0..10 {
            let idx = rng.gen_range(0..mesh.vertices().len());
            let pose = RigidTransform::from_translation(mesh.vertices()[idx]);
            let out = warp_pose_through_field(mesh.vertices(), &field, &pose, 0.03, 0.01);
            let expected = mesh.vertices()[idx] + field.displacements()[idx];
            assert!(
                (out.translation() - expected).norm() < 2e-3,
                "interpolation off by {}",
                (out.translation() - expected).norm()
            );
        }
    }

    #[test]
    fn orientation_stays_orthonormal_for_random_fields() {
        let mesh = canonical_box();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let field = DeformationField::new(
                mesh.vertices()
                    .iter()
                    .map(|_| {
                        Vector3::new(
                            rng.gen_range(-0.02..0.02),
                            rng.gen_range(-0.02..0.02),
                            rng.gen_range(-0.02..0.02),
                        )
                    })
                    .collect(),
            );
            let out = warp_pose_through_field(mesh.vertices(), &field, &test_pose(), 0.02, 0.01);
            let r = out.rotation_matrix();
            let gram = r.transpose() * r;
            for i in 0..3 {
                for j in 0..3 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - expected).abs() < 1e-6);
                }
            }
            assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
    }
}
