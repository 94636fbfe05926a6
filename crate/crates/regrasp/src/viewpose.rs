//! Observation pose generation: place the grasped object's functional-grasp
//! region on the sensor's optical axis at the minimum quality-reading
//! distance plus a safety offset, with the grasp approach vector parallel to
//! the sensor Z axis. When the canonical pose is unreachable, nearby poses
//! are sampled and the feasible one closest to the canonical pose wins.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{check_free, CollisionWorld};
use crate::geometry::RigidTransform;
use crate::kinematics::{ik, Attachment, DualArmModel, IkParams, JointState, KinematicsError, Side};

#[derive(Debug, Error)]
pub enum ViewPoseError {
    #[error("no kinematically feasible, collision-free view pose found")]
    NoViewPoseFound,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewPoseRequest {
    /// Current world pose of the functional grasp frame (f*).
    pub functional_grasp: RigidTransform,
    /// Approach direction (pregrasp to grasp) expressed in the functional
    /// grasp frame, unit length. Tool convention: +z.
    pub grasp_approach: Vector3<f64>,
    /// Sensor pose, camera-to-world, +z optical axis.
    pub camera_pose: RigidTransform,
    /// Minimum distance for quality sensor readings, meters.
    pub d_min: f64,
    /// Additional standoff beyond `d_min`, meters.
    pub offset_d: f64,
}

impl ViewPoseRequest {
    pub fn new(
        functional_grasp: RigidTransform,
        camera_pose: RigidTransform,
    ) -> Self {
        Self {
            functional_grasp,
            grasp_approach: Vector3::z(),
            camera_pose,
            d_min: 0.5,
            offset_d: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ViewSamplerParams {
    pub n: usize,
    /// Per-axis translation bound around the canonical pose, meters.
    pub translation_bound: f64,
    /// Rotation bound per axis, radians.
    pub rotation_bound: f64,
    pub seed: u64,
    /// Weight converting rotation angle to meters in the pose-distance
    /// metric used to rank fallback samples.
    pub rotation_weight: f64,
}

impl Default for ViewSamplerParams {
    fn default() -> Self {
        Self {
            n: 128,
            translation_bound: 0.10,
            rotation_bound: 20f64.to_radians(),
            seed: 0,
            rotation_weight: 0.2,
        }
    }
}

/// The selected observation pose and the joint state realizing it.
#[derive(Debug, Clone)]
pub struct ViewPose {
    /// World pose of the observed frame (the functional grasp frame at the
    /// observation).
    pub pose: RigidTransform,
    pub joint_state: JointState,
    /// Whether the canonical pose itself was feasible (no fallback needed).
    pub canonical: bool,
    /// Pose distance from the canonical pose (0 when canonical).
    pub distance_to_canonical: f64,
}

/// The canonical observation pose: on the optical axis at `d_min + offset_d`,
/// oriented by the shortest-arc rotation that aligns the grasp approach
/// vector with the camera Z axis (which also minimizes wrist travel).
pub fn canonical_view_pose(req: &ViewPoseRequest) -> RigidTransform {
    let cam_z = req.camera_pose.rotate(&Vector3::z());
    let d = req.d_min + req.offset_d;
    let position = req.camera_pose.translation() + cam_z * d;
    let approach_world = req.functional_grasp.rotate(&req.grasp_approach);
    let align = UnitQuaternion::rotation_between(&approach_world, &cam_z).unwrap_or_else(|| {
        // Anti-parallel: rotate half a turn about any perpendicular axis.
        let perp = approach_world.cross(&Vector3::x());
        let perp = if perp.norm() < 1e-9 {
            approach_world.cross(&Vector3::y())
        } else {
            perp
        };
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(perp), std::f64::consts::PI)
    });
    RigidTransform::new(align * req.functional_grasp.rotation(), position)
}

fn pose_distance(a: &RigidTransform, b: &RigidTransform, rotation_weight: f64) -> f64 {
    a.translation_distance_to(b) + rotation_weight * a.rotation_angle_to(b)
}

fn radical_inverse(base: u64, mut index: u64) -> f64 {
    let mut result = 0.0;
    let mut fraction = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * fraction;
        index /= base;
        fraction /= base as f64;
    }
    result
}

/// Computes the observation pose for the in-hand refinement.
///
/// `ee_from_target` maps the observed frame to the end-effector pose the
/// `chain` must reach (identity when the chain's tool frame is the observed
/// frame itself). `attachments` ride along for collision checking (the held
/// object). Candidate 0 is the canonical pose; the rest perturb it with a
/// low-discrepancy sequence, and the feasible candidate minimizing the pose
/// distance to canonical is returned.
#[allow(clippy::too_many_arguments)]
pub fn generate_view_pose(
    req: &ViewPoseRequest,
    model: &DualArmModel,
    arm: Side,
    ee_from_target: &RigidTransform,
    world: &CollisionWorld,
    sampler: &ViewSamplerParams,
    ik_params: &IkParams,
    attachments: &[Attachment],
) -> Result<ViewPose, ViewPoseError> {
    let chain = model.chain(arm);
    let canonical = canonical_view_pose(req);
    let home = JointState::zeros(chain.joints.len());

    let mut best: Option<ViewPose> = None;
    for i in 0..sampler.n.max(1) {
        let candidate = if i == 0 {
            canonical
        } else {
            let idx = sampler.seed + i as u64;
            let u = |base: u64| radical_inverse(base, idx) * 2.0 - 1.0;
            let dt = Vector3::new(u(2), u(3), u(5)) * sampler.translation_bound;
            let dr = Vector3::new(u(7), u(11), u(13)) * sampler.rotation_bound;
            let perturb = RigidTransform::new(
                UnitQuaternion::from_scaled_axis(dr),
                dt,
            );
            RigidTransform::new(
                perturb.rotation() * canonical.rotation(),
                canonical.translation() + perturb.translation(),
            )
        };
        let distance = pose_distance(&candidate, &canonical, sampler.rotation_weight);
        if let Some(b) = &best {
            if distance >= b.distance_to_canonical {
                continue;
            }
        }
        let ee_target = candidate.compose(ee_from_target);
        let Ok(state) = ik(chain, &ee_target, &home, ik_params) else {
            continue;
        };
        let spheres = model
            .dynamic_sphere_set(&[(arm, &state)], attachments)
            .map_err(ViewPoseError::Kinematics)?;
        if !check_free(world, &spheres).free {
            continue;
        }
        best = Some(ViewPose {
            pose: candidate,
            joint_state: state,
            canonical: i == 0,
            distance_to_canonical: distance,
        });
        if i == 0 {
            break; // canonical pose is feasible, nothing can beat distance 0
        }
    }
    best.ok_or(ViewPoseError::NoViewPoseFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{build_edt, CollisionWorld, SphereSet, VoxelGrid};

    fn empty_world() -> CollisionWorld {
        let grid = VoxelGrid::empty(Vector3::new(-1.0, -1.0, -0.5), 0.1, [20, 20, 15]);
        CollisionWorld::new(build_edt(&grid), SphereSet::new(), 0.0)
    }

    fn head_camera() -> RigidTransform {
        // Camera above the torso looking forward and slightly down.
        let forward = Vector3::new(1.0, 0.0, -0.35).normalize();
        let right = Vector3::new(0.0, -1.0, 0.0);
        let down = forward.cross(&right).normalize();
        let right = down.cross(&forward).normalize();
        RigidTransform::from_matrix(
            &nalgebra::Matrix3::from_columns(&[right, down, forward]),
            Vector3::new(0.05, 0.0, 0.85),
        )
    }

    fn sample_request() -> ViewPoseRequest {
        let functional_grasp = RigidTransform::from_matrix(
            &nalgebra::Matrix3::from_columns(&[
                Vector3::new(0.0, 0.0, -1.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
            ]),
            Vector3::new(0.55, 0.0, 0.5),
        );
        ViewPoseRequest::new(functional_grasp, head_camera())
    }

    #[test]
    fn canonical_pose_geometry() {
        let req = sample_request();
        let pose = canonical_view_pose(&req);
        // Exactly d_min + D from the camera origin.
        let d = (pose.translation() - req.camera_pose.translation()).norm();
        assert!((d - 0.6).abs() < 1e-9, "distance {d}");
        // Approach vector parallel to the camera Z axis.
        let approach_world = pose.rotate(&req.grasp_approach);
        let cam_z = req.camera_pose.rotate(&Vector3::z());
        assert!((approach_world - cam_z).norm() < 1e-6);
    }

    #[test]
    fn unconstrained_case_returns_canonical() {
        let req = sample_request();
        let model = DualArmModel::reference();
        let world = empty_world();
        let out = generate_view_pose(
            &req,
            &model,
            Side::Left,
            &RigidTransform::identity(),
            &world,
            &ViewSamplerParams::default(),
            &IkParams::default(),
            &[],
        )
        .unwrap();
        assert!(out.canonical);
        assert_eq!(out.distance_to_canonical, 0.0);
        let d = (out.pose.translation() - req.camera_pose.translation()).norm();
        assert!((d - 0.6).abs() < 1e-9);
        // Joint state re-verifies against the pose.
        let fk = model.left.fk(&out.joint_state).unwrap();
        assert!(fk.translation_distance_to(&out.pose) < 2e-3);
    }

    #[test]
    fn blocked_canonical_falls_back_to_nearest_feasible() {
        let req = sample_request();
        let model = DualArmModel::reference();
        // Obstacle sphere right at the canonical view position.
        let canonical = canonical_view_pose(&req);
        let mut grid = VoxelGrid::empty(Vector3::new(-1.0, -1.0, -0.5), 0.05, [40, 40, 30]);
        let c = *canonical.translation();
        grid.insert_points(&crate::geometry::PointCloud::new(vec![c]));
        let world = CollisionWorld::new(build_edt(&grid), SphereSet::new(), 0.0);
        // The hand spheres sit near the observed frame, so a voxel at the
        // canonical position blocks candidate 0.
        let sampler = ViewSamplerParams {
            n: 96,
            ..Default::default()
        };
        let out = generate_view_pose(
            &req,
            &model,
            Side::Left,
            &RigidTransform::identity(),
            &world,
            &sampler,
            &IkParams::default(),
            &[],
        )
        .unwrap();
        assert!(!out.canonical);
        assert!(out.distance_to_canonical > 0.0);

        // Brute-force optimality over the drawn sample set: no feasible
        // candidate sits closer to the canonical pose.
        let chain = &model.left;
        let home = JointState::zeros(7);
        for i in 1..sampler.n {
            let idx = sampler.seed + i as u64;
            let u = |base: u64| radical_inverse(base, idx) * 2.0 - 1.0;
            let dt = Vector3::new(u(2), u(3), u(5)) * sampler.translation_bound;
            let dr = Vector3::new(u(7), u(11), u(13)) * sampler.rotation_bound;
            let candidate = RigidTransform::new(
                UnitQuaternion::from_scaled_axis(dr) * canonical.rotation(),
                canonical.translation() + dt,
            );
            let dist = pose_distance(&candidate, &canonical, sampler.rotation_weight);
            if dist >= out.distance_to_canonical {
                continue;
            }
            let feasible = ik(chain, &candidate, &home, &IkParams::default()).is_ok_and(|s| {
                let spheres = model.dynamic_sphere_set(&[(Side::Left, &s)], &[]).unwrap();
                check_free(&world, &spheres).free
            });
            assert!(!feasible, "sample {i} is closer and feasible");
        }
    }

    #[test]
    fn out_of_reach_target_has_no_view_pose() {
        let mut req = sample_request();
        // Push the camera so far that the observed frame is unreachable.
        req.camera_pose = RigidTransform::from_translation(Vector3::new(5.0, 0.0, 1.0))
            .compose(&req.camera_pose);
        let model = DualArmModel::reference();
        let world = empty_world();
        let result = generate_view_pose(
            &req,
            &model,
            Side::Left,
            &RigidTransform::identity(),
            &world,
            &ViewSamplerParams {
                n: 16,
                ..Default::default()
            },
            &IkParams::default(),
            &[],
        );
        assert!(matches!(result, Err(ViewPoseError::NoViewPoseFound)));
    }
}
