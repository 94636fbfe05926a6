//! Dual-arm kinematics: forward kinematics, damped-least-squares inverse
//! kinematics with joint limits and random restarts, and the joint-limit
//! proximity cost that drives handover selection.
//!
//! Robot descriptions load from a JSON file (see
//! `assets/reference_robot.json` for the schema); a reference dual 7-DoF arm
//! ships embedded as [`DualArmModel::reference`].

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::SphereSet;
use crate::geometry::RigidTransform;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("joint state has {got} values but the chain has {expected} joints")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("no inverse kinematics solution within tolerance")]
    Infeasible,
    #[error("bad robot description: {0}")]
    BadDescription(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Sphere attached to a joint or tip frame, local coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalSphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Fixed transform from the previous frame to this joint's frame.
    pub origin: RigidTransform,
    /// Rotation axis in the joint frame, unit length.
    pub axis: [f64; 3],
    /// Lower limit, radians.
    pub lower: f64,
    /// Upper limit, radians.
    pub upper: f64,
    #[serde(default)]
    pub spheres: Vec<LocalSphere>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KinematicChain {
    pub base_pose: RigidTransform,
    pub joints: Vec<Joint>,
    pub tip_offset: RigidTransform,
    #[serde(default)]
    pub tip_spheres: Vec<LocalSphere>,
}

/// Joint angles in radians, one per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub angles: Vec<f64>,
}

impl JointState {
    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            angles: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

impl KinematicChain {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        for j in &self.joints {
            if j.lower >= j.upper {
                return Err(KinematicsError::BadDescription(format!(
                    "joint {}: lower {} not below upper {}",
                    j.name, j.lower, j.upper
                )));
            }
            let norm = Vector3::from(j.axis).norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(KinematicsError::BadDescription(format!(
                    "joint {}: axis norm {} is not 1",
                    j.name, norm
                )));
            }
        }
        Ok(())
    }

    fn check_state(&self, state: &JointState) -> Result<(), KinematicsError> {
        if state.len() != self.joints.len() {
            return Err(KinematicsError::DimensionMismatch {
                got: state.len(),
                expected: self.joints.len(),
            });
        }
        Ok(())
    }

    /// End-effector pose: `base ∘ Π(origin_i ∘ rot(axis_i, θ_i)) ∘ tip`.
    pub fn fk(&self, state: &JointState) -> Result<RigidTransform, KinematicsError> {
        self.check_state(state)?;
        let mut cur = self.base_pose;
        for (joint, &theta) in self.joints.iter().zip(&state.angles) {
            cur = cur
                .compose(&joint.origin)
                .compose(&RigidTransform::from_axis_angle(&Vector3::from(joint.axis), theta));
        }
        Ok(cur.compose(&self.tip_offset))
    }

    /// World frame after each joint's rotation plus the tip frame
    /// (`joints.len() + 1` entries). Spheres of joint `i` are expressed in
    /// entry `i`; tip spheres in the last entry.
    pub fn link_frames(&self, state: &JointState) -> Result<Vec<RigidTransform>, KinematicsError> {
        self.check_state(state)?;
        let mut frames = Vec::with_capacity(self.joints.len() + 1);
        let mut cur = self.base_pose;
        for (joint, &theta) in self.joints.iter().zip(&state.angles) {
            cur = cur
                .compose(&joint.origin)
                .compose(&RigidTransform::from_axis_angle(&Vector3::from(joint.axis), theta));
            frames.push(cur);
        }
        frames.push(cur.compose(&self.tip_offset));
        Ok(frames)
    }

    /// Upper bound on the distance from the base to any reachable tip
    /// position: the sum of all fixed link offsets.
    pub fn max_reach(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| j.origin.translation().norm())
            .sum::<f64>()
            + self.tip_offset.translation().norm()
    }

    /// Per-joint distance to the nearer limit:
    /// `δ_i = min(|upper_i − θ_i|, |θ_i − lower_i|)`.
    pub fn joint_proximity(&self, state: &JointState) -> Result<Vec<f64>, KinematicsError> {
        self.check_state(state)?;
        Ok(self
            .joints
            .iter()
            .zip(&state.angles)
            .map(|(j, &t)| (j.upper - t).abs().min((t - j.lower).abs()))
            .collect())
    }

    /// Joint-limit proximity cost of this chain alone; see
    /// [`proximity_cost_from_deltas`].
    pub fn proximity_cost(&self, state: &JointState, epsilon: f64) -> Result<f64, KinematicsError> {
        Ok(proximity_cost_from_deltas(&self.joint_proximity(state)?, epsilon))
    }

    /// Uniform random state within the joint limits.
    pub fn random_state<R: Rng>(&self, rng: &mut R) -> JointState {
        JointState::new(
            self.joints
                .iter()
                .map(|j| rng.gen_range(j.lower..j.upper))
                .collect(),
        )
    }

    fn clamp_to_limits(&self, state: &mut JointState) {
        for (joint, theta) in self.joints.iter().zip(&mut state.angles) {
            *theta = theta.clamp(joint.lower, joint.upper);
        }
    }
}

/// Joint-limit proximity cost over a vector of proximities δ:
/// the mean of `(min(δ_i, ε)/ε − 1)²`.
///
/// This is `(1/|δ|) Σ (δ̂_i²/ε² − 2 δ̂_i/ε + 1)` with δ̂ clamped at ε; the
/// clamp keeps the value in [0, 1] (the unclamped quadratic grows again for
/// δ > ε). At a limit the cost is exactly 1, beyond ε exactly 0.
pub fn proximity_cost_from_deltas(deltas: &[f64], epsilon: f64) -> f64 {
    assert!(epsilon > 0.0, "epsilon must be positive");
    if deltas.is_empty() {
        return 0.0;
    }
    let sum: f64 = deltas
        .iter()
        .map(|&d| {
            let clamped = d.min(epsilon);
            let r = 1.0 - clamped / epsilon;
            r * r
        })
        .sum();
    sum / deltas.len() as f64
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IkParams {
    /// Position tolerance, meters.
    pub pos_tol: f64,
    /// Rotation tolerance, radians.
    pub rot_tol: f64,
    pub max_iterations: usize,
    /// Random-restart attempts after the seeded one.
    pub restarts: usize,
    /// Damping factor of the least-squares step.
    pub damping: f64,
    /// Seed of the deterministic restart stream.
    pub restart_seed: u64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            pos_tol: 1e-3,
            rot_tol: 0.5f64.to_radians(),
            max_iterations: 200,
            restarts: 5,
            damping: 0.08,
            restart_seed: 0x1c2b3a,
        }
    }
}

/// Damped-least-squares inverse kinematics with limit clamping and seeded
/// random restarts. Restarts run sequentially, so the first success by
/// restart index wins deterministically.
pub fn ik(
    chain: &KinematicChain,
    target: &RigidTransform,
    seed: &JointState,
    params: &IkParams,
) -> Result<JointState, KinematicsError> {
    chain.check_state(seed)?;
    let n = chain.joints.len();

    // Cheap reachability reject: the tip can never be farther from the base
    // than the summed link lengths.
    let base_to_target = (target.translation() - chain.base_pose.translation()).norm();
    if base_to_target > chain.max_reach() + 0.01 {
        return Err(KinematicsError::Infeasible);
    }

    for restart in 0..=params.restarts {
        let mut state = if restart == 0 {
            let mut s = seed.clone();
            chain.clamp_to_limits(&mut s);
            s
        } else {
            let mut rng =
                ChaCha8Rng::seed_from_u64(params.restart_seed.wrapping_add(restart as u64));
            chain.random_state(&mut rng)
        };

        for _ in 0..params.max_iterations {
            let frames = chain.link_frames(&state)?;
            let tip = frames[n];
            let pos_err = target.translation() - tip.translation();
            let rot_err = (target.rotation() * tip.rotation().inverse()).scaled_axis();
            if pos_err.norm() < params.pos_tol && rot_err.norm() < params.rot_tol {
                return Ok(state);
            }

            // Geometric Jacobian, world frame. The rotation axis of joint i
            // is fixed under its own rotation, so the post-rotation frame
            // serves to express it.
            let tip_pos = *tip.translation();
            let mut jjt = Matrix6::<f64>::zeros();
            let mut cols: Vec<Vector6<f64>> = Vec::with_capacity(n);
            for (i, joint) in chain.joints.iter().enumerate() {
                let axis_world = frames[i].rotate(&Vector3::from(joint.axis));
                let joint_pos = *frames[i].translation();
                let linear = axis_world.cross(&(tip_pos - joint_pos));
                let mut col = Vector6::zeros();
                col.fixed_rows_mut::<3>(0).copy_from(&linear);
                col.fixed_rows_mut::<3>(3).copy_from(&axis_world);
                jjt += col * col.transpose();
                cols.push(col);
            }
            let mut err = Vector6::zeros();
            err.fixed_rows_mut::<3>(0).copy_from(&pos_err);
            err.fixed_rows_mut::<3>(3).copy_from(&rot_err);

            let damped = jjt + Matrix6::identity() * (params.damping * params.damping);
            let y = match damped.cholesky() {
                Some(chol) => chol.solve(&err),
                None => break,
            };

            let mut step_norm2 = 0.0;
            let mut step = vec![0.0; n];
            for (i, col) in cols.iter().enumerate() {
                step[i] = col.dot(&y);
                step_norm2 += step[i] * step[i];
            }
            // Limit the per-iteration motion to keep the linearization valid.
            let max_step = 0.5;
            let scale = if step_norm2.sqrt() > max_step {
                max_step / step_norm2.sqrt()
            } else {
                1.0
            };
            for (i, theta) in state.angles.iter_mut().enumerate() {
                *theta += step[i] * scale;
            }
            chain.clamp_to_limits(&mut state);
        }
    }
    Err(KinematicsError::Infeasible)
}

/// Which arm of the dual-arm model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn other(&self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StaticSphereEntry {
    link: String,
    center: [f64; 3],
    radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArmsDescription {
    left: KinematicChain,
    right: KinematicChain,
}

/// On-disk robot description; converted into [`DualArmModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RobotDescription {
    name: String,
    arms: ArmsDescription,
    #[serde(default)]
    static_spheres: Vec<StaticSphereEntry>,
    #[serde(default)]
    exclusions: Vec<(String, String)>,
}

/// Both arm chains anchored in a common base frame, plus the static collision
/// bodies (torso) and the link pairs excluded from mutual checks.
#[derive(Debug, Clone)]
pub struct DualArmModel {
    pub name: String,
    pub left: KinematicChain,
    pub right: KinematicChain,
    static_spheres: Vec<StaticSphereEntry>,
    exclusions: Vec<(String, String)>,
}

/// Extra collision sphere attached to an arm's tip frame (e.g. the held
/// object's bounding sphere). Excluded against the same arm's hand and
/// forearm, which it permanently neighbors.
#[derive(Debug, Clone)]
pub struct Attachment {
    pub arm: Side,
    /// Center in the tip (tool) frame.
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl DualArmModel {
    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let desc: RobotDescription = serde_json::from_str(text)?;
        let model = Self {
            name: desc.name,
            left: desc.arms.left,
            right: desc.arms.right,
            static_spheres: desc.static_spheres,
            exclusions: desc.exclusions,
        };
        model.left.validate()?;
        model.right.validate()?;
        Ok(model)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self, KinematicsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The embedded reference description: two 7-DoF arms on a torso.
    pub fn reference() -> Self {
        Self::from_json(include_str!("../assets/reference_robot.json"))
            .expect("embedded robot description is valid")
    }

    pub fn chain(&self, side: Side) -> &KinematicChain {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Static (non-moving) robot collision spheres with exclusions applied.
    pub fn static_sphere_set(&self) -> SphereSet {
        let mut set = SphereSet::new();
        for s in &self.static_spheres {
            set.add_sphere(&s.link, Vector3::from(s.center), s.radius);
        }
        for (a, b) in &self.exclusions {
            set.exclude_pair(a, b);
        }
        set
    }

    /// Places every collision sphere of the given arms (and attachments) in
    /// the world for the given joint states.
    pub fn dynamic_sphere_set(
        &self,
        states: &[(Side, &JointState)],
        attachments: &[Attachment],
    ) -> Result<SphereSet, KinematicsError> {
        let mut set = SphereSet::new();
        for (a, b) in &self.exclusions {
            set.exclude_pair(a, b);
        }
        for (side, state) in states {
            let chain = self.chain(*side);
            let frames = chain.link_frames(state)?;
            for (i, joint) in chain.joints.iter().enumerate() {
                for s in &joint.spheres {
                    let c = frames[i].apply(&Vector3::from(s.center));
                    set.add_sphere(&format!("{}/{}", side.name(), joint.name), c, s.radius);
                }
            }
            let tip = frames[chain.joints.len()];
            for s in &chain.tip_spheres {
                let c = tip.apply(&Vector3::from(s.center));
                set.add_sphere(&format!("{}/hand", side.name()), c, s.radius);
            }
        }
        for att in attachments {
            let chain = self.chain(att.arm);
            let state = states
                .iter()
                .find(|(side, _)| *side == att.arm)
                .map(|(_, s)| *s)
                .ok_or_else(|| {
                    KinematicsError::BadDescription(format!(
                        "attachment on {} arm without a joint state",
                        att.arm.name()
                    ))
                })?;
            let tip = chain.fk(state)?;
            let link = format!("{}/attached", att.arm.name());
            set.add_sphere(&link, tip.apply(&att.center), att.radius);
            set.exclude_pair(&link, &format!("{}/hand", att.arm.name()));
            set.exclude_pair(&link, &format!("{}/forearm", att.arm.name()));
        }
        Ok(set)
    }
}
