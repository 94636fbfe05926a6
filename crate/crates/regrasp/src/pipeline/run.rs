//! End-to-end pipeline execution on a generated scene: pose refinement,
//! shape registration with grasp warping, supportive grasp sampling,
//! handover planning, observation pose, simulated grasp disturbance, in-hand
//! correction and the final accuracy check against ground truth.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{build_edt, CollisionWorld, Primitive, VoxelGrid};
use crate::geometry::{bounding_sphere, PointCloud, RigidTransform};
use crate::grasp::{sample_antipodal, select_candidates, GripperParams, SelectionParams};
use crate::icp::{icp_register, inhand_refine, Cuboid, IcpParams, InhandParams};
use crate::kinematics::DualArmModel;
use crate::handover::{filter_grasps, plan_handover, FilterParams, PlannerParams};
use crate::render::{render_depth, top_down_camera, PinholeCamera};
use crate::shape::{infer, warp_pose, InferParams, ModelBundle, WarpParams};
use crate::viewpose::{generate_view_pose, ViewPoseError, ViewPoseRequest, ViewSamplerParams};

use super::scene::{gaussian, random_perturbation, GeneratedScene};
use super::PipelineError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineParams {
    pub icp: IcpParams,
    pub infer: InferParams,
    pub warp: WarpParams,
    pub gripper: GripperParams,
    pub selection: SelectionParams,
    /// Pixel-pair draws of the antipodal sampler.
    pub antipodal_samples: usize,
    /// Virtual camera used for top-down grasp sampling.
    pub virtual_camera: PinholeCamera,
    /// Virtual camera standoff as a multiple of the object bounding
    /// diagonal.
    pub top_down_standoff_factor: f64,
    pub filter: FilterParams,
    pub planner: PlannerParams,
    pub view_sampler: ViewSamplerParams,
    pub view_d_min: f64,
    pub view_offset_d: f64,
    pub inhand: InhandParams,
    /// Whether the in-hand correction runs; disabled for ablations.
    pub refinement_enabled: bool,
    /// Success thresholds on the final functional-pose error.
    pub success_translation_tol: f64,
    pub success_rotation_tol: f64,
    /// Observed clouds are decimated to at most this many points.
    pub max_cloud_points: usize,
    pub edt_resolution: f64,
    pub clearance_margin: f64,
    pub hand_cuboid_half_extents: [f64; 3],
    /// Synthetic hand points added to the in-hand observation (per hand
    /// sphere) to exercise the cuboid filter.
    pub hand_clutter_points: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            icp: IcpParams::default(),
            infer: InferParams::default(),
            warp: WarpParams::default(),
            gripper: GripperParams::default(),
            selection: SelectionParams::default(),
            antipodal_samples: 4000,
            virtual_camera: PinholeCamera::default_vga(),
            top_down_standoff_factor: 2.0,
            filter: FilterParams::default(),
            planner: PlannerParams::default(),
            view_sampler: ViewSamplerParams::default(),
            view_d_min: 0.5,
            view_offset_d: 0.1,
            inhand: InhandParams::default(),
            refinement_enabled: true,
            success_translation_tol: 0.010,
            success_rotation_tol: 5f64.to_radians(),
            max_cloud_points: 1500,
            edt_resolution: 0.02,
            clearance_margin: 0.0,
            hand_cuboid_half_extents: [0.12, 0.12, 0.12],
            hand_clutter_points: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub ok: bool,
    pub seconds: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseError {
    pub translation_m: f64,
    pub rotation_rad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: u32,
    pub category: String,
    pub seed: u64,
    pub refinement_enabled: bool,
    pub stages: Vec<StageReport>,
    /// None when the run aborted before the final check.
    pub success: Option<bool>,
    pub final_error: Option<PoseError>,
    pub failure: Option<FailureInfo>,
    /// Set when the observation pose was infeasible and the handover ran
    /// open-loop.
    pub view_pose_fallback: bool,
    pub injected_disturbance: PoseError,
    pub total_seconds: f64,
}

struct StageTimer {
    stages: Vec<StageReport>,
    current: Instant,
}

impl StageTimer {
    fn new() -> Self {
        Self {
            stages: Vec::new(),
            current: Instant::now(),
        }
    }

    fn finish(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.stages.push(StageReport {
            name: name.to_string(),
            ok,
            seconds: self.current.elapsed().as_secs_f64(),
            detail: detail.into(),
        });
        self.current = Instant::now();
    }
}

/// Builds the static collision world for a scene: the table, voxelized over
/// a workspace box spanning the table plus the robot's surroundings.
pub fn build_scene_world(
    scene: &GeneratedScene,
    robot: &DualArmModel,
    resolution: f64,
    margin: f64,
) -> CollisionWorld {
    let t = &scene.config.table;
    let origin = Vector3::new(
        (t.center_x - t.half_x - 0.3).min(-0.3),
        t.center_y - t.half_y - 0.2,
        0.0,
    );
    let max = Vector3::new(t.center_x + t.half_x + 0.3, t.center_y + t.half_y + 0.2, 1.3);
    let dims = [
        ((max.x - origin.x) / resolution).ceil() as usize + 1,
        ((max.y - origin.y) / resolution).ceil() as usize + 1,
        ((max.z - origin.z) / resolution).ceil() as usize + 1,
    ];
    let mut grid = VoxelGrid::empty(origin, resolution, dims);
    grid.insert_primitives(&[Primitive::table(
        t.center_x,
        t.center_y,
        t.top_z,
        t.half_x,
        t.half_y,
        t.thickness,
    )]);
    CollisionWorld::new(build_edt(&grid), robot.static_sphere_set(), margin)
}

fn pose_error(a: &RigidTransform, b: &RigidTransform) -> PoseError {
    PoseError {
        translation_m: a.translation_distance_to(b),
        rotation_rad: a.rotation_angle_to(b),
    }
}

/// Runs every stage on a generated scene. Stage failures abort the run and
/// are reported, not propagated; `Err` is reserved for configuration
/// problems.
pub fn run_pipeline(
    scene: &GeneratedScene,
    bundle: &ModelBundle,
    robot: &DualArmModel,
    params: &PipelineParams,
) -> Result<PipelineReport, PipelineError> {
    let run_start = Instant::now();
    let mut timer = StageTimer::new();
    let mut report = PipelineReport {
        version: 1,
        category: scene.config.category.clone(),
        seed: scene.config.seed,
        refinement_enabled: params.refinement_enabled,
        stages: Vec::new(),
        success: None,
        final_error: None,
        failure: None,
        view_pose_fallback: false,
        injected_disturbance: PoseError {
            translation_m: 0.0,
            rotation_rad: 0.0,
        },
        total_seconds: 0.0,
    };
    let abort = |mut timer: StageTimer,
                     mut report: PipelineReport,
                     stage: &str,
                     reason: String|
     -> PipelineReport {
        timer.finish(stage, false, reason.clone());
        report.stages = timer.stages;
        report.failure = Some(FailureInfo {
            stage: stage.to_string(),
            reason,
        });
        report.total_seconds = run_start.elapsed().as_secs_f64();
        report
    };

    let model = &bundle.model;
    let annotation = bundle.meta.functional_grasp.ok_or_else(|| {
        PipelineError::BadConfig("model has no functional grasp annotation".into())
    })?;

    // Pose refinement: ICP of the observed cloud against the canonical mesh.
    let cloud = scene.observed.decimated(params.max_cloud_points);
    let refined_pose = match icp_register(&cloud, model.canonical(), &scene.noisy_pose, &params.icp)
    {
        Ok(result) => {
            let pose = result.refined_pose(&scene.noisy_pose);
            timer.finish(
                "pose_refinement",
                true,
                format!(
                    "rms {:.4} m after {} iterations",
                    result.residual_rms, result.iterations
                ),
            );
            pose
        }
        Err(e) => return Ok(abort(timer, report, "pose_refinement", e.to_string())),
    };

    // Shape registration and grasp warping.
    let registration = match infer(model, &cloud, &refined_pose, &params.infer) {
        Ok(r) => r,
        Err(e) => return Ok(abort(timer, report, "shape_registration", e.to_string())),
    };
    let functional_obj = match warp_pose(model, &registration, &annotation, &params.warp) {
        Ok(p) => p,
        Err(e) => return Ok(abort(timer, report, "shape_registration", e.to_string())),
    };
    let functional_world = refined_pose.compose(&functional_obj);
    timer.finish(
        "shape_registration",
        true,
        format!(
            "fitness rms {:.4} m, {} iterations",
            registration.fitness_rms,
            registration.cost_trace.len()
        ),
    );

    // Supportive grasp sampling on a top-down render of the deformed mesh.
    let world_mesh = registration.deformed_mesh.transformed(&refined_pose);
    let standoff = (world_mesh.bounding_diagonal() * params.top_down_standoff_factor).max(0.3);
    let virtual_pose = top_down_camera(&world_mesh, &RigidTransform::identity(), standoff);
    let (depth, mask) = render_depth(&world_mesh, &params.virtual_camera, &virtual_pose);
    let hypotheses = sample_antipodal(
        &depth,
        &mask,
        &params.virtual_camera,
        &virtual_pose,
        &params.gripper,
        params.antipodal_samples,
        scene.config.seed ^ 0x5a5a,
    );
    let candidates = select_candidates(&hypotheses, &params.selection);
    if candidates.is_empty() {
        return Ok(abort(
            timer,
            report,
            "grasp_sampling",
            "no antipodal grasp candidates".into(),
        ));
    }
    timer.finish(
        "grasp_sampling",
        true,
        format!(
            "{} hypotheses, {} candidates after selection and doubling",
            hypotheses.len(),
            candidates.len()
        ),
    );

    // Handover planning.
    let world = build_scene_world(scene, robot, params.edt_resolution, params.clearance_margin);
    let mut feasible = match filter_grasps(&candidates, robot, &world, &params.filter) {
        Ok(f) => f,
        Err(e) => return Ok(abort(timer, report, "handover_planning", e.to_string())),
    };
    // Attach the held object's bounding sphere to each grasp.
    let (obj_center, obj_radius) =
        bounding_sphere(world_mesh.vertices()).unwrap_or((Vector3::zeros(), 0.0));
    for grasp in &mut feasible {
        let center_tool = grasp.pose.inverse().apply(&obj_center);
        grasp.attachment = Some((center_tool, obj_radius));
    }
    let (handover, planner_report) =
        match plan_handover(&feasible, &functional_world, robot, &world, &params.planner) {
            Ok(pair) => pair,
            Err(e) => return Ok(abort(timer, report, "handover_planning", e.to_string())),
        };
    timer.finish(
        "handover_planning",
        true,
        format!(
            "{} feasible grasps, cost {:.3}, {} candidates evaluated",
            feasible.len(),
            handover.cost,
            planner_report.candidates_evaluated
        ),
    );

    // Frames tying the estimate to the hand: the grasp executes at the
    // table, so hand-object relations derive from the pre-transform poses.
    let selected = &feasible[handover.grasp_index];
    let grasp_pose = selected.pose;
    let q_obj_est = refined_pose.inverse().compose(&grasp_pose);
    let ee_from_target = functional_obj.inverse().compose(&q_obj_est);
    let supportive_arm = params.planner.supportive_arm;

    // Observation pose; infeasibility degrades to an open-loop handover.
    let view_request = ViewPoseRequest {
        functional_grasp: functional_world,
        grasp_approach: Vector3::z(),
        camera_pose: scene.config.sensor.pose,
        d_min: params.view_d_min,
        offset_d: params.view_offset_d,
    };
    let attachment = crate::kinematics::Attachment {
        arm: supportive_arm,
        center: grasp_pose.inverse().apply(&obj_center),
        radius: obj_radius.max(1e-3),
    };
    let view = match generate_view_pose(
        &view_request,
        robot,
        supportive_arm,
        &ee_from_target,
        &world,
        &params.view_sampler,
        &params.filter.ik,
        std::slice::from_ref(&attachment),
    ) {
        Ok(v) => {
            timer.finish(
                "view_pose",
                true,
                format!(
                    "canonical: {}, distance {:.4}",
                    v.canonical, v.distance_to_canonical
                ),
            );
            Some(v)
        }
        Err(ViewPoseError::NoViewPoseFound) => {
            report.view_pose_fallback = true;
            timer.finish(
                "view_pose",
                false,
                "no feasible observation pose; handover runs open-loop".to_string(),
            );
            None
        }
        Err(ViewPoseError::Kinematics(e)) => {
            return Ok(abort(timer, report, "view_pose", e.to_string()))
        }
    };

    // Simulated supportive grasp: the object moves in the hand by a seeded
    // rigid disturbance (ground-truth frames drive the simulation).
    let mut disturbance_rng = ChaCha8Rng::seed_from_u64(scene.config.seed ^ 0xd157);
    let disturbance = random_perturbation(
        &mut disturbance_rng,
        scene.config.disturbance.trans_sigma,
        scene.config.disturbance.rot_sigma,
    );
    let (d_angle, d_trans) = disturbance.magnitude();
    report.injected_disturbance = PoseError {
        translation_m: d_trans,
        rotation_rad: d_angle,
    };
    let q_obj_gt = scene.ground_truth.object_pose.inverse().compose(&grasp_pose);

    // Hand pose at which the final comparison happens (observation pose when
    // available, otherwise the handover pose).
    let hand_pose = match &view {
        Some(v) => v.pose.compose(&ee_from_target),
        None => handover.supportive_pose,
    };
    let expected_obj = hand_pose.compose(&q_obj_est.inverse());
    let actual_obj = hand_pose
        .compose(&q_obj_gt.inverse())
        .compose(&disturbance);
    let expected_functional = match &view {
        Some(v) => v.pose,
        None => handover.functional_pose,
    };
    let truth_functional = actual_obj.compose(&scene.ground_truth.functional_grasp_obj);

    // In-hand pose refinement on a synthetic observation of the disturbed
    // object (plus hand clutter that the cuboid filter must remove).
    let refined_functional = if params.refinement_enabled && view.is_some() {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.config.seed ^ 0x0b5e);
        let gt_world = scene.ground_truth.instance_mesh.transformed(&actual_obj);
        let (mut depth2, mask2) =
            render_depth(&gt_world, &scene.config.sensor.camera, &scene.config.sensor.pose);
        let sigma = scene.config.noise.depth_sigma;
        if sigma > 0.0 {
            for v in 0..depth2.height {
                for u in 0..depth2.width {
                    if mask2.is_object(u, v) {
                        let noisy = depth2.get(u, v) as f64 + gaussian(&mut rng, sigma);
                        depth2.set(u, v, noisy.max(1e-4) as f32);
                    }
                }
            }
        }
        let mut points = Vec::new();
        for v in 0..depth2.height {
            for u in 0..depth2.width {
                if mask2.is_object(u, v) {
                    let p = scene
                        .config
                        .sensor
                        .pose
                        .apply(&scene.config.sensor.camera.deproject(u, v, depth2.get(u, v) as f64));
                    points.push(p);
                }
            }
        }
        // Hand clutter: points on the supportive hand's collision spheres.
        let chain = robot.chain(supportive_arm);
        for sphere in &chain.tip_spheres {
            let center = hand_pose.apply(&Vector3::from(sphere.center));
            for _ in 0..params.hand_clutter_points {
                let dir = super::scene::random_unit_axis(&mut rng);
                points.push(center + dir.into_inner() * sphere.radius);
            }
        }
        if points.is_empty() {
            return Ok(abort(
                timer,
                report,
                "inhand_refinement",
                "object not visible at the observation pose".into(),
            ));
        }
        let observed2 = PointCloud::new(points).decimated(params.max_cloud_points);
        let hand_cuboid = Cuboid::new(hand_pose, Vector3::from(params.hand_cuboid_half_extents));
        match inhand_refine(
            &expected_obj,
            &observed2,
            &registration.deformed_mesh,
            &hand_cuboid,
            &expected_functional,
            &params.inhand,
        ) {
            Ok(out) => {
                let (tv_angle, tv_trans) = out.t_view.magnitude();
                timer.finish(
                    "inhand_refinement",
                    true,
                    format!(
                        "t_view {:.4} m / {:.2} deg, rms {:.4} m",
                        tv_trans,
                        tv_angle.to_degrees(),
                        out.icp.residual_rms
                    ),
                );
                out.refined_grasp
            }
            Err(e) => return Ok(abort(timer, report, "inhand_refinement", e.to_string())),
        }
    } else {
        timer.finish(
            "inhand_refinement",
            true,
            if view.is_none() {
                "skipped: no observation pose".to_string()
            } else {
                "skipped: refinement disabled".to_string()
            },
        );
        expected_functional
    };

    // Final check against ground truth.
    let error = pose_error(&refined_functional, &truth_functional);
    let success = error.translation_m <= params.success_translation_tol
        && error.rotation_rad <= params.success_rotation_tol;
    timer.finish(
        "final_check",
        true,
        format!(
            "error {:.4} m / {:.2} deg",
            error.translation_m,
            error.rotation_rad.to_degrees()
        ),
    );

    report.stages = timer.stages;
    report.success = Some(success);
    report.final_error = Some(error);
    report.total_seconds = run_start.elapsed().as_secs_f64();
    Ok(report)
}

/// One line of a batch summary. Carries no timing so summaries are
/// byte-identical across runs with the same seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSummary {
    pub name: String,
    pub category: String,
    pub seed: u64,
    pub success: Option<bool>,
    pub final_error: Option<PoseError>,
    pub failure_stage: Option<String>,
    pub view_pose_fallback: bool,
    pub injected_disturbance: PoseError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchAggregate {
    pub scenes: usize,
    pub succeeded: usize,
    pub failed_runs: usize,
    pub success_rate: f64,
    pub median_translation_error_m: Option<f64>,
    pub median_rotation_error_rad: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSummary {
    pub version: u32,
    pub scenes: Vec<SceneSummary>,
    pub aggregate: BatchAggregate,
}

pub(crate) fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    Some(values[values.len() / 2])
}

/// Runs a list of named scene configs against their category bundles and
/// aggregates the outcomes. Scene order follows the input list.
pub fn run_batch(
    scenes: &[(String, super::scene::SceneConfig)],
    bundles: &BTreeMap<String, ModelBundle>,
    robot: &DualArmModel,
    params: &PipelineParams,
) -> Result<BatchSummary, PipelineError> {
    let mut summaries = Vec::with_capacity(scenes.len());
    for (name, config) in scenes {
        let bundle = bundles.get(&config.category).ok_or_else(|| {
            PipelineError::BadConfig(format!("no model bundle for category {}", config.category))
        })?;
        let scene = super::scene::generate_scene(config, bundle)?;
        let report = run_pipeline(&scene, bundle, robot, params)?;
        summaries.push(SceneSummary {
            name: name.clone(),
            category: report.category.clone(),
            seed: report.seed,
            success: report.success,
            final_error: report.final_error,
            failure_stage: report.failure.as_ref().map(|f| f.stage.clone()),
            view_pose_fallback: report.view_pose_fallback,
            injected_disturbance: report.injected_disturbance,
        });
    }
    let succeeded = summaries
        .iter()
        .filter(|s| s.success == Some(true))
        .count();
    let failed_runs = summaries.iter().filter(|s| s.failure_stage.is_some()).count();
    let mut t_errs: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.final_error.map(|e| e.translation_m))
        .collect();
    let mut r_errs: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.final_error.map(|e| e.rotation_rad))
        .collect();
    let aggregate = BatchAggregate {
        scenes: summaries.len(),
        succeeded,
        failed_runs,
        success_rate: if summaries.is_empty() {
            0.0
        } else {
            succeeded as f64 / summaries.len() as f64
        },
        median_translation_error_m: median(&mut t_errs),
        median_rotation_error_rad: median(&mut r_errs),
    };
    Ok(BatchSummary {
        version: 1,
        scenes: summaries,
        aggregate,
    })
}

/// Stores the functional grasp annotation (canonical object frame) in the
/// model's sidecar metadata.
pub fn annotate_functional_grasp(bundle: &mut ModelBundle, pose: RigidTransform) {
    bundle.meta.functional_grasp = Some(pose);
}
