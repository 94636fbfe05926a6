//! Handover pose optimization: filter supportive grasp candidates for
//! feasibility, sample rigid transforms of the grasp pair, and keep the
//! feasible, collision-free configuration with the lowest joint-limit
//! proximity cost. Early-stopping and the cost follow the planning loop with
//! `c_min = 1`, `c_stop = 0.1`.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{check_free, CollisionWorld};
use crate::geometry::RigidTransform;
use crate::grasp::{GraspCandidateSet, GraspHypothesis};
use crate::kinematics::{
    ik, proximity_cost_from_deltas, Attachment, DualArmModel, IkParams, JointState,
    KinematicsError, Side,
};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no feasible handover configuration found")]
    NoHandoverFound,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// One sampled rigid motion of the grasp pair: a world-frame translation and
/// extrinsic x-y-z rotations applied about the pair midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSample {
    pub translation: Vector3<f64>,
    /// Rotation angles about the world x, y, z axes, radians.
    pub rotation_xyz: Vector3<f64>,
}

impl TransformSample {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation_xyz: Vector3::zeros(),
        }
    }

    /// Extrinsic x-y-z composition: `Rz · Ry · Rx`.
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.rotation_xyz.z)
            * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), self.rotation_xyz.y)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.rotation_xyz.x)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleBounds {
    /// Per-axis translation intervals `[lo, hi]`, meters.
    pub translation: [[f64; 2]; 3],
    /// Per-axis rotation intervals `[lo, hi]`, radians.
    pub rotation: [[f64; 2]; 3],
}

impl Default for SampleBounds {
    fn default() -> Self {
        let quarter = 45f64.to_radians();
        Self {
            translation: [[-0.25, 0.25]; 3],
            rotation: [[-quarter, quarter]; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransformSamplerParams {
    pub n: usize,
    pub bounds: SampleBounds,
    /// Offset into the low-discrepancy sequence; same seed, same samples.
    pub seed: u64,
}

impl Default for TransformSamplerParams {
    fn default() -> Self {
        Self {
            n: 256,
            bounds: SampleBounds::default(),
            seed: 0,
        }
    }
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

/// Deterministic Halton sequence over the 6D bounds. Sample 0 is always the
/// identity transform.
pub fn sample_transforms(params: &TransformSamplerParams) -> Vec<TransformSample> {
    const BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];
    let mut out = Vec::with_capacity(params.n);
    if params.n == 0 {
        return out;
    }
    out.push(TransformSample::identity());
    for i in 1..params.n {
        let index = params.seed + i as u64;
        let unit: Vec<f64> = BASES.iter().map(|&b| radical_inverse(b, index)).collect();
        let lerp = |range: [f64; 2], t: f64| range[0] + (range[1] - range[0]) * t;
        out.push(TransformSample {
            translation: Vector3::new(
                lerp(params.bounds.translation[0], unit[0]),
                lerp(params.bounds.translation[1], unit[1]),
                lerp(params.bounds.translation[2], unit[2]),
            ),
            rotation_xyz: Vector3::new(
                lerp(params.bounds.rotation[0], unit[3]),
                lerp(params.bounds.rotation[1], unit[4]),
                lerp(params.bounds.rotation[2], unit[5]),
            ),
        });
    }
    out
}

/// Moves the grasp pair rigidly: both poses translate in the world frame,
/// then rotate about the midpoint of their translated positions using world
/// axes (positions orbit the midpoint, orientations are pre-multiplied).
/// The relative pose `q⁻¹ ∘ f` is preserved exactly.
pub fn apply_handover_transform(
    supportive: &RigidTransform,
    functional: &RigidTransform,
    sample: &TransformSample,
) -> (RigidTransform, RigidTransform) {
    let q_t = supportive.translation() + sample.translation;
    let f_t = functional.translation() + sample.translation;
    let midpoint = (q_t + f_t) / 2.0;
    let rot = sample.rotation();
    let move_pose = |pos: Vector3<f64>, pose: &RigidTransform| {
        RigidTransform::new(rot * pose.rotation(), midpoint + rot * (pos - midpoint))
    };
    (move_pose(q_t, supportive), move_pose(f_t, functional))
}

/// A supportive grasp that survived kinematic and collision filtering.
#[derive(Debug, Clone)]
pub struct FeasibleGrasp {
    /// Index into the original candidate set.
    pub candidate_index: usize,
    pub hypothesis: GraspHypothesis,
    pub pose: RigidTransform,
    pub pregrasp: RigidTransform,
    /// Bounding sphere of the object once held at this grasp (center in the
    /// tool frame, radius); overrides the planner-level default.
    pub attachment: Option<(Vector3<f64>, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterParams {
    pub supportive_arm: Side,
    /// Pregrasp offset along the approach direction (tool z), meters;
    /// negative backs away from the object.
    pub pregrasp_offset: f64,
    pub ik: IkParams,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            supportive_arm: Side::Left,
            pregrasp_offset: -0.10,
            ik: IkParams::default(),
        }
    }
}

/// Keeps the grasps whose grasp pose and pregrasp pose are both reachable
/// and collision-free for the supportive arm.
pub fn filter_grasps(
    candidates: &GraspCandidateSet,
    model: &DualArmModel,
    world: &CollisionWorld,
    params: &FilterParams,
) -> Result<Vec<FeasibleGrasp>, KinematicsError> {
    let chain = model.chain(params.supportive_arm);
    let home = JointState::zeros(chain.joints.len());
    let mut out = Vec::new();
    for (i, grasp) in candidates.grasps.iter().enumerate() {
        let pose = grasp.grasp_pose();
        let pregrasp = pose.compose(&RigidTransform::from_translation(Vector3::new(
            0.0,
            0.0,
            params.pregrasp_offset,
        )));
        let mut feasible = true;
        for target in [&pose, &pregrasp] {
            match ik(chain, target, &home, &params.ik) {
                Ok(state) => {
                    let spheres =
                        model.dynamic_sphere_set(&[(params.supportive_arm, &state)], &[])?;
                    if !check_free(world, &spheres).free {
                        feasible = false;
                        break;
                    }
                }
                Err(KinematicsError::Infeasible) => {
                    feasible = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if feasible {
            out.push(FeasibleGrasp {
                candidate_index: i,
                hypothesis: grasp.clone(),
                pose,
                pregrasp,
                attachment: None,
            });
        }
    }
    Ok(out)
}

/// A handover configuration: paired end-effector poses with the joint states
/// realizing them and the joint-limit proximity cost.
#[derive(Debug, Clone)]
pub struct HandoverConfiguration {
    pub supportive_pose: RigidTransform,
    pub functional_pose: RigidTransform,
    pub supportive_state: JointState,
    pub functional_state: JointState,
    pub cost: f64,
    pub grasp_index: usize,
    pub sample_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerParams {
    pub supportive_arm: Side,
    pub sampler: TransformSamplerParams,
    /// Joint-limit proximity scale of the cost, radians.
    pub epsilon: f64,
    /// Break out of the search once the best cost drops below `c_stop`.
    pub early_stop: bool,
    pub c_stop: f64,
    pub ik: IkParams,
    /// Default bounding sphere of the held object, attached to the
    /// supportive tip (center in tool frame, radius), used when a grasp
    /// carries no attachment of its own.
    pub held_object: Option<([f64; 3], f64)>,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            supportive_arm: Side::Left,
            sampler: TransformSamplerParams::default(),
            epsilon: 0.35,
            early_stop: true,
            c_stop: 0.1,
            ik: IkParams::default(),
            held_object: None,
        }
    }
}

/// Per-run planner statistics, serializable as the planner report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlannerReport {
    pub grasps_in: usize,
    pub candidates_evaluated: usize,
    pub ik_rejected: usize,
    pub collision_rejected: usize,
    pub feasible: usize,
    pub best_cost: Option<f64>,
    pub early_stopped: bool,
    pub wall_time_s: f64,
}

/// Searches grasps x transform samples for the feasible, collision-free
/// configuration minimizing the joint-limit proximity cost over both arms'
/// concatenated joints.
///
/// Transform sets are drawn per grasp (sequence offset by grasp index), so
/// the search is deterministic. Ties keep the earliest (grasp index, then
/// sample index) candidate. With early stop enabled the whole search ends
/// after the first grasp whose best cost beats `c_stop`.
pub fn plan_handover(
    feasible: &[FeasibleGrasp],
    functional: &RigidTransform,
    model: &DualArmModel,
    world: &CollisionWorld,
    params: &PlannerParams,
) -> Result<(HandoverConfiguration, PlannerReport), PlanError> {
    let start = std::time::Instant::now();
    let supportive_side = params.supportive_arm;
    let functional_side = supportive_side.other();
    let sup_chain = model.chain(supportive_side);
    let fun_chain = model.chain(functional_side);
    let sup_home = JointState::zeros(sup_chain.joints.len());
    let fun_home = JointState::zeros(fun_chain.joints.len());

    let mut report = PlannerReport {
        grasps_in: feasible.len(),
        ..Default::default()
    };
    let mut best: Option<HandoverConfiguration> = None;
    let mut c_min = 1.0f64;

    'grasps: for (gi, grasp) in feasible.iter().enumerate() {
        let attachments: Vec<Attachment> = grasp
            .attachment
            .or_else(|| {
                params
                    .held_object
                    .map(|(c, r)| (Vector3::from(c), r))
            })
            .iter()
            .map(|(center, radius)| Attachment {
                arm: supportive_side,
                center: *center,
                radius: *radius,
            })
            .collect();
        let sampler = TransformSamplerParams {
            seed: params
                .sampler
                .seed
                .wrapping_add((gi * params.sampler.n) as u64),
            ..params.sampler
        };
        let transforms = sample_transforms(&sampler);
        for (si, sample) in transforms.iter().enumerate() {
            report.candidates_evaluated += 1;
            let (q_pose, f_pose) = apply_handover_transform(&grasp.pose, functional, sample);

            let sup_state = match ik(sup_chain, &q_pose, &sup_home, &params.ik) {
                Ok(s) => s,
                Err(KinematicsError::Infeasible) => {
                    report.ik_rejected += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let fun_state = match ik(fun_chain, &f_pose, &fun_home, &params.ik) {
                Ok(s) => s,
                Err(KinematicsError::Infeasible) => {
                    report.ik_rejected += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };

            let spheres = model.dynamic_sphere_set(
                &[
                    (supportive_side, &sup_state),
                    (functional_side, &fun_state),
                ],
                &attachments,
            )?;
            if !check_free(world, &spheres).free {
                report.collision_rejected += 1;
                continue;
            }
            report.feasible += 1;

            let mut deltas = sup_chain.joint_proximity(&sup_state)?;
            deltas.extend(fun_chain.joint_proximity(&fun_state)?);
            let cost = proximity_cost_from_deltas(&deltas, params.epsilon);

            if cost < c_min || best.is_none() {
                c_min = c_min.min(cost);
                best = Some(HandoverConfiguration {
                    supportive_pose: q_pose,
                    functional_pose: f_pose,
                    supportive_state: sup_state,
                    functional_state: fun_state,
                    cost,
                    grasp_index: gi,
                    sample_index: si,
                });
            }
        }
        if params.early_stop && c_min < params.c_stop {
            report.early_stopped = true;
            break 'grasps;
        }
    }

    report.best_cost = best.as_ref().map(|b| b.cost);
    report.wall_time_s = start.elapsed().as_secs_f64();
    match best {
        Some(config) => Ok((config, report)),
        None => Err(PlanError::NoHandoverFound),
    }
}
