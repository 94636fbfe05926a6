//! Rigid pose refinement by point-to-mesh ICP.
//!
//! Used twice in the planning chain: to refine the initial object pose
//! estimate against a reference mesh, and to measure the in-hand object
//! displacement after the supportive grasp (with hand points removed by a
//! cuboid filter around the end-effector).

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PointCloud, RigidTransform, TriangleMesh};
use crate::spatial::MeshIndex;

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("observed point cloud is empty")]
    EmptyCloud,
    #[error("reference mesh has no faces")]
    EmptyMesh,
    #[error("no point within the correspondence distance of the reference surface")]
    NoCorrespondences,
    #[error("in-hand refinement rejected: residual rms {residual_rms:.4} m exceeds gate {gate:.4} m")]
    RefinementRejected { residual_rms: f64, gate: f64 },
}

/// Error metric minimized per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IcpMetric {
    /// Distance along the surface normal at the closest point; converges
    /// faster on smooth meshes.
    #[default]
    PointToPlane,
    /// Euclidean distance to the closest surface point.
    PointToPoint,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Converged when the per-iteration RMS improvement drops below this,
    /// meters.
    pub convergence_eps: f64,
    /// Points farther than this from the surface are ignored, meters.
    pub max_correspondence_dist: f64,
    pub metric: IcpMetric,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            convergence_eps: 1e-6,
            max_correspondence_dist: 0.05,
            metric: IcpMetric::PointToPlane,
        }
    }
}

/// Outcome of an ICP run.
///
/// `correction` maps the observed points, expressed in the frame implied by
/// the initial pose, onto the reference surface; the refined object pose is
/// `init ∘ correction⁻¹` (see [`IcpResult::refined_pose`]).
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub correction: RigidTransform,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl IcpResult {
    /// The refined object pose for the initial pose the run was seeded with.
    pub fn refined_pose(&self, init: &RigidTransform) -> RigidTransform {
        init.compose(&self.correction.inverse())
    }
}

/// Axis-aligned box in its own pose frame, used to cut end-effector points
/// out of in-hand observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cuboid {
    pub pose: RigidTransform,
    pub half_extents: Vector3<f64>,
}

impl Cuboid {
    pub fn new(pose: RigidTransform, half_extents: Vector3<f64>) -> Self {
        assert!(
            half_extents.iter().all(|&h| h > 0.0),
            "cuboid half extents must be strictly positive"
        );
        Self { pose, half_extents }
    }

    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        let local = self.pose.inverse().apply(point);
        local.x.abs() <= self.half_extents.x
            && local.y.abs() <= self.half_extents.y
            && local.z.abs() <= self.half_extents.z
    }
}

/// Removes every point inside the cuboid, keeping the rest (normals follow
/// their points). May return an empty cloud.
pub fn cuboid_filter(cloud: &PointCloud, cuboid: &Cuboid) -> PointCloud {
    let keep: Vec<usize> = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| !cuboid.contains(p))
        .map(|(i, _)| i)
        .collect();
    let points = keep.iter().map(|&i| cloud.points()[i]).collect();
    match cloud.normals() {
        Some(ns) => {
            let normals = keep.iter().map(|&i| ns[i]).collect();
            PointCloud::with_normals(points, normals).expect("filtered normals stay unit")
        }
        None => PointCloud::new(points),
    }
}

/// Registers an observed cloud (world frame) against a reference mesh
/// (object frame) starting from the initial object pose estimate.
pub fn icp_register(
    observed: &PointCloud,
    reference: &TriangleMesh,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, IcpError> {
    if observed.is_empty() {
        return Err(IcpError::EmptyCloud);
    }
    let index = MeshIndex::build(reference).ok_or(IcpError::EmptyMesh)?;

    // Work in the object frame: the observed points are pulled back through
    // the initial pose and then incrementally aligned onto the mesh.
    let init_inv = init.inverse();
    let targets: Vec<Vector3<f64>> = observed.points().iter().map(|p| init_inv.apply(p)).collect();

    let max_d2 = params.max_correspondence_dist * params.max_correspondence_dist;
    let mut alignment = RigidTransform::identity();
    let mut prev_rms = f64::INFINITY;
    let mut rms = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..params.max_iterations {
        iterations = iter + 1;

        let mut pairs: Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> = Vec::new();
        let mut sum_sq = 0.0;
        for q in &targets {
            let x = alignment.apply(q);
            let hit = index.closest_point(&x);
            if hit.dist2 > max_d2 {
                continue;
            }
            sum_sq += hit.dist2;
            pairs.push((x, hit.point, index.mesh().face_normal(hit.face)));
        }
        if pairs.is_empty() {
            return Err(IcpError::NoCorrespondences);
        }
        rms = (sum_sq / pairs.len() as f64).sqrt();
        if (prev_rms - rms).abs() < params.convergence_eps {
            converged = true;
            break;
        }
        prev_rms = rms;

        let delta = match params.metric {
            IcpMetric::PointToPlane => solve_point_to_plane(&pairs),
            IcpMetric::PointToPoint => solve_point_to_point(&pairs),
        };
        alignment = delta.compose(&alignment);
    }

    Ok(IcpResult {
        correction: alignment,
        residual_rms: rms,
        iterations,
        converged,
    })
}

/// One linearized point-to-plane step: minimizes
/// `Σ ((x + ω×x + t − s)·n)²` over the twist `(ω, t)`.
fn solve_point_to_plane(pairs: &[(Vector3<f64>, Vector3<f64>, Vector3<f64>)]) -> RigidTransform {
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for (x, s, n) in pairs {
        let c = x.cross(n);
        let mut row = Vector6::zeros();
        row.fixed_rows_mut::<3>(0).copy_from(&c);
        row.fixed_rows_mut::<3>(3).copy_from(n);
        let r = (x - s).dot(n);
        ata += row * row.transpose();
        atb += row * (-r);
    }
    let twist = ata
        .svd(true, true)
        .solve(&atb, 1e-12)
        .unwrap_or_else(|_| Vector6::zeros());
    let omega = Vector3::new(twist[0], twist[1], twist[2]);
    let trans = Vector3::new(twist[3], twist[4], twist[5]);
    let rotation = if omega.norm() > 0.0 {
        UnitQuaternion::from_scaled_axis(omega)
    } else {
        UnitQuaternion::identity()
    };
    RigidTransform::new(rotation, trans)
}

/// One point-to-point step via the Kabsch solution.
fn solve_point_to_point(pairs: &[(Vector3<f64>, Vector3<f64>, Vector3<f64>)]) -> RigidTransform {
    let n = pairs.len() as f64;
    let cx: Vector3<f64> = pairs.iter().map(|(x, _, _)| x).sum::<Vector3<f64>>() / n;
    let cs: Vector3<f64> = pairs.iter().map(|(_, s, _)| s).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::<f64>::zeros();
    for (x, s, _) in pairs {
        h += (x - cx) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = cs - rotation * cx;
    RigidTransform::new(rotation, translation)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InhandParams {
    pub icp: IcpParams,
    /// Refinements with residual RMS above this are rejected so that
    /// misaligned ICP results become detectable instead of silently
    /// corrupting the functional grasp, meters.
    pub residual_gate: f64,
}

impl Default for InhandParams {
    fn default() -> Self {
        Self {
            icp: IcpParams::default(),
            residual_gate: 0.008,
        }
    }
}

/// In-hand correction of the functional grasp.
#[derive(Debug, Clone)]
pub struct InhandRefinement {
    /// Displacement between the expected and observed in-hand object pose,
    /// expressed in the functional grasp frame.
    pub t_view: RigidTransform,
    /// The functional grasp composed with the displacement.
    pub refined_grasp: RigidTransform,
    pub icp: IcpResult,
}

/// Measures how the grasped object actually sits in the hand and refines the
/// functional grasp accordingly.
///
/// Hand points are removed with `hand_cuboid` (placed from forward
/// kinematics), the remaining cloud is ICP-registered against the deformed
/// mesh at the expected pose, and the resulting displacement is applied to
/// the functional grasp in its local frame.
pub fn inhand_refine(
    expected_object_pose: &RigidTransform,
    observed: &PointCloud,
    deformed_mesh: &TriangleMesh,
    hand_cuboid: &Cuboid,
    functional_grasp: &RigidTransform,
    params: &InhandParams,
) -> Result<InhandRefinement, IcpError> {
    if observed.is_empty() {
        return Err(IcpError::EmptyCloud);
    }
    let filtered = cuboid_filter(observed, hand_cuboid);
    if filtered.is_empty() {
        return Err(IcpError::NoCorrespondences);
    }
    let icp = icp_register(&filtered, deformed_mesh, expected_object_pose, &params.icp)?;
    if icp.residual_rms > params.residual_gate {
        return Err(IcpError::RefinementRejected {
            residual_rms: icp.residual_rms,
            gate: params.residual_gate,
        });
    }
    let actual_pose = icp.refined_pose(expected_object_pose);
    // The functional grasp rides on the object: its actual frame is
    // actual ∘ expected⁻¹ ∘ f*, and t_view re-expresses that displacement
    // locally so that refined = f* ∘ t_view.
    let t_view = functional_grasp
        .inverse()
        .compose(&actual_pose)
        .compose(&expected_object_pose.inverse())
        .compose(functional_grasp);
    let refined_grasp = functional_grasp.compose(&t_view);
    Ok(InhandRefinement {
        t_view,
        refined_grasp,
        icp,
    })
}
