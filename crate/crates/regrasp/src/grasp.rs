//! Antipodal grasp sampling for the supportive hand.
//!
//! Candidate contacts are depth-edge pixels inside the object mask; pixel
//! pairs become grasp hypotheses when their depth-gradient directions oppose
//! along the pair axis within the friction cone and the deprojected width
//! fits the gripper. Grasps are parallel to the image plane with the camera
//! optical axis as approach. Quality is an analytic antipodality surrogate
//! (opposing-normal alignment), interface-compatible with a learned scorer.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;
use crate::render::{DepthImage, PinholeCamera, SegmentationMask};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GripperParams {
    /// Maximum jaw opening, meters.
    pub max_width: f64,
    /// Contact friction coefficient; the cone half-angle is atan(mu).
    pub friction_mu: f64,
    /// Depth-gradient magnitude marking a contact edge, meters per pixel.
    pub edge_threshold: f64,
}

impl Default for GripperParams {
    fn default() -> Self {
        Self {
            max_width: 0.085,
            friction_mu: 0.6,
            edge_threshold: 0.005,
        }
    }
}

/// A two-contact grasp in world frame: closing axis, approach direction,
/// opening width and a [0,1] quality score.
#[derive(Debug, Clone)]
pub struct GraspHypothesis {
    pub center: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub approach: Vector3<f64>,
    pub width: f64,
    pub quality: f64,
}

impl GraspHypothesis {
    /// End-effector pose for this grasp: tool z along the approach, tool x
    /// along the closing axis, origin at the grasp center.
    pub fn grasp_pose(&self) -> RigidTransform {
        let z = self.approach;
        let x = self.axis;
        let y = z.cross(&x);
        RigidTransform::from_matrix(&Matrix3::from_columns(&[x, y, z]), self.center)
    }

    /// The finger-swapped duplicate: the gripper rotated half a turn so the
    /// closing axis flips while center, width, approach and quality stay.
    pub fn flipped(&self) -> GraspHypothesis {
        GraspHypothesis {
            center: self.center,
            axis: -self.axis,
            approach: self.approach,
            width: self.width,
            quality: self.quality,
        }
    }
}

/// Serialized form: arrays in world frame, meters.
#[derive(Serialize, Deserialize)]
struct GraspRepr {
    center: [f64; 3],
    axis: [f64; 3],
    approach: [f64; 3],
    width: f64,
    quality: f64,
}

impl Serialize for GraspHypothesis {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GraspRepr {
            center: self.center.into(),
            axis: self.axis.into(),
            approach: self.approach.into(),
            width: self.width,
            quality: self.quality,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GraspHypothesis {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = GraspRepr::deserialize(deserializer)?;
        Ok(GraspHypothesis {
            center: Vector3::from(repr.center),
            axis: Vector3::from(repr.axis),
            approach: Vector3::from(repr.approach),
            width: repr.width,
            quality: repr.quality,
        })
    }
}

/// The filtered, separation-respecting, finger-doubled candidate set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GraspCandidateSet {
    pub grasps: Vec<GraspHypothesis>,
}

impl GraspCandidateSet {
    pub fn len(&self) -> usize {
        self.grasps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grasps.is_empty()
    }
}

/// Samples antipodal grasp hypotheses from a rendered depth/mask pair.
///
/// Returns an empty list for an empty mask. Deterministic for a fixed seed.
pub fn sample_antipodal(
    depth: &DepthImage,
    mask: &SegmentationMask,
    camera: &PinholeCamera,
    camera_pose: &RigidTransform,
    gripper: &GripperParams,
    n_samples: usize,
    seed: u64,
) -> Vec<GraspHypothesis> {
    assert!(gripper.friction_mu > 0.0, "friction must be positive");
    let (w, h) = (camera.width, camera.height);
    if mask.object_count() == 0 {
        return Vec::new();
    }

    // Background pixels read as "far" so silhouette edges carry a strong
    // outward depth gradient.
    let mut max_depth = 0.0f32;
    for v in 0..h {
        for u in 0..w {
            if mask.is_object(u, v) {
                max_depth = max_depth.max(depth.get(u, v));
            }
        }
    }
    let bg = max_depth as f64 + 0.05;
    let depth_at = |u: i64, v: i64| -> f64 {
        if u < 0 || v < 0 || u >= w as i64 || v >= h as i64 {
            return bg;
        }
        let (u, v) = (u as usize, v as usize);
        if mask.is_object(u, v) {
            depth.get(u, v) as f64
        } else {
            bg
        }
    };

    // Edge pixels: in-mask pixels whose central-difference depth gradient
    // exceeds the threshold. Gradient points from near (object) to far
    // (background), i.e. outward.
    struct Edge {
        u: usize,
        v: usize,
        grad_dir: Vector2<f64>,
    }
    let mut edges: Vec<Edge> = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if !mask.is_object(u, v) {
                continue;
            }
            let gu = (depth_at(u as i64 + 1, v as i64) - depth_at(u as i64 - 1, v as i64)) / 2.0;
            let gv = (depth_at(u as i64, v as i64 + 1) - depth_at(u as i64, v as i64 - 1)) / 2.0;
            let g = Vector2::new(gu, gv);
            if g.norm() > gripper.edge_threshold {
                edges.push(Edge {
                    u,
                    v,
                    grad_dir: g.normalize(),
                });
            }
        }
    }
    if edges.len() < 2 {
        return Vec::new();
    }

    let cos_cone = 1.0 / (1.0 + gripper.friction_mu * gripper.friction_mu).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n_samples {
        let i = rng.gen_range(0..edges.len());
        let j = rng.gen_range(0..edges.len());
        if i == j {
            continue;
        }
        let (e1, e2) = (&edges[i], &edges[j]);
        let pixel_axis = Vector2::new(e2.u as f64 - e1.u as f64, e2.v as f64 - e1.v as f64);
        if pixel_axis.norm() < 1.0 {
            continue;
        }
        let a2 = pixel_axis.normalize();
        // Antipodal: gradient at the first contact opposes the axis, at the
        // second it aligns, both within the friction cone half-angle.
        if e1.grad_dir.dot(&a2) > -cos_cone || e2.grad_dir.dot(&a2) < cos_cone {
            continue;
        }
        let p1 = camera.deproject(e1.u, e1.v, depth.get(e1.u, e1.v) as f64);
        let p2 = camera.deproject(e2.u, e2.v, depth.get(e2.u, e2.v) as f64);
        let width = (p2 - p1).norm();
        if width <= 0.0 || width > gripper.max_width {
            continue;
        }
        // Grasps stay parallel to the image plane: flatten the closing axis.
        let mut axis_cam = p2 - p1;
        axis_cam.z = 0.0;
        if axis_cam.norm() < 1e-9 {
            continue;
        }
        axis_cam = axis_cam.normalize();
        let center_cam = (p1 + p2) / 2.0;
        let quality = 0.5 * (e1.grad_dir.dot(&a2).abs() + e2.grad_dir.dot(&a2).abs());
        out.push(GraspHypothesis {
            center: camera_pose.apply(&center_cam),
            axis: camera_pose.rotate(&axis_cam),
            approach: camera_pose.rotate(&Vector3::z()),
            width,
            quality,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionParams {
    /// Minimum horizontal (image-plane) separation between kept grasps,
    /// meters.
    pub min_separation: f64,
    /// Selection may stop once quality drops below this...
    pub quality_floor: f64,
    /// ...but only after this many grasps have been taken.
    pub min_count: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            min_separation: 0.01,
            quality_floor: 0.5,
            min_count: 10,
        }
    }
}

/// Separation perpendicular to the approach direction (the virtual camera's
/// image plane).
fn horizontal_separation(a: &GraspHypothesis, b: &GraspHypothesis) -> f64 {
    let d = a.center - b.center;
    let up = a.approach;
    (d - up * d.dot(&up)).norm()
}

/// Greedy descending-quality selection with a minimum horizontal separation,
/// stopping once enough grasps are in and quality falls below the floor,
/// then doubled by rotating each grasp half a turn (finger swap). Doubled
/// twins follow their originals, so the list stays quality-ordered.
pub fn select_candidates(
    hypotheses: &[GraspHypothesis],
    params: &SelectionParams,
) -> GraspCandidateSet {
    let mut order: Vec<usize> = (0..hypotheses.len()).collect();
    order.sort_by(|&a, &b| hypotheses[b].quality.total_cmp(&hypotheses[a].quality));

    let mut accepted: Vec<&GraspHypothesis> = Vec::new();
    for &i in &order {
        let h = &hypotheses[i];
        if accepted
            .iter()
            .any(|a| horizontal_separation(a, h) < params.min_separation)
        {
            continue;
        }
        accepted.push(h);
        if accepted.len() >= params.min_count && h.quality < params.quality_floor {
            break;
        }
    }

    let mut grasps = Vec::with_capacity(accepted.len() * 2);
    for g in accepted {
        grasps.push(g.clone());
        grasps.push(g.flipped());
    }
    GraspCandidateSet { grasps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render_depth, top_down_camera};
    use crate::TriangleMesh;

    fn box_mesh(hx: f64, hy: f64, hz: f64) -> TriangleMesh {
        let vertices = vec![
            Vector3::new(-hx, -hy, -hz),
            Vector3::new(hx, -hy, -hz),
            Vector3::new(hx, hy, -hz),
            Vector3::new(-hx, hy, -hz),
            Vector3::new(-hx, -hy, hz),
            Vector3::new(hx, -hy, hz),
            Vector3::new(hx, hy, hz),
            Vector3::new(-hx, hy, hz),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriangleMesh::new(vertices, faces).unwrap()
    }

    fn rendered_box(
        hx: f64,
        hy: f64,
        hz: f64,
    ) -> (DepthImage, SegmentationMask, PinholeCamera, RigidTransform) {
        let mesh = box_mesh(hx, hy, hz);
        let camera = PinholeCamera::centered(160, 120, 180.0);
        let pose = top_down_camera(&mesh, &RigidTransform::identity(), 0.5);
        let (depth, mask) = render_depth(&mesh, &camera, &pose);
        (depth, mask, camera, pose)
    }

    #[test]
    fn empty_mask_gives_no_hypotheses() {
        let camera = PinholeCamera::centered(32, 32, 30.0);
        let depth = DepthImage::zeroed(32, 32);
        let mask = SegmentationMask::background(32, 32);
        let out = sample_antipodal(
            &depth,
            &mask,
            &camera,
            &RigidTransform::identity(),
            &GripperParams::default(),
            500,
            1,
        );
        assert!(out.is_empty());
    }

    #[test]
    fn graspable_box_yields_correct_width() {
        // 4 cm wide box: graspable across x with an 8.5 cm gripper.
        let (depth, mask, camera, pose) = rendered_box(0.02, 0.06, 0.02);
        let grasps = sample_antipodal(
            &depth,
            &mask,
            &camera,
            &pose,
            &GripperParams::default(),
            4000,
            7,
        );
        assert!(!grasps.is_empty());
        // Deprojection error budget: ~2 px at depth 0.48 with f = 180.
        let px_tol = 2.0 * 0.48 / 180.0;
        let across_x: Vec<_> = grasps
            .iter()
            .filter(|g| g.axis.x.abs() > 0.9)
            .collect();
        assert!(across_x.len() >= 10, "only {} grasps across x", across_x.len());
        for g in &across_x {
            assert!(
                (g.width - 0.04).abs() <= px_tol + 1e-9,
                "width {} outside 4cm ± {px_tol}",
                g.width
            );
        }
    }

    #[test]
    fn too_wide_box_yields_no_hypotheses() {
        // 12 cm in both directions: nothing fits an 8.5 cm gripper.
        let (depth, mask, camera, pose) = rendered_box(0.06, 0.06, 0.02);
        let grasps = sample_antipodal(
            &depth,
            &mask,
            &camera,
            &pose,
            &GripperParams::default(),
            4000,
            7,
        );
        assert!(
            grasps.is_empty(),
            "expected no grasps across a 12 cm span, got {}",
            grasps.len()
        );
    }

    #[test]
    fn constraints_hold_on_every_hypothesis() {
        let (depth, mask, camera, pose) = rendered_box(0.02, 0.05, 0.015);
        let gripper = GripperParams::default();
        let grasps = sample_antipodal(&depth, &mask, &camera, &pose, &gripper, 3000, 11);
        for g in &grasps {
            assert!(g.width <= gripper.max_width);
            assert!(g.axis.dot(&g.approach).abs() < 1e-6);
            assert!((g.axis.norm() - 1.0).abs() < 1e-9);
            assert!((g.approach.norm() - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&g.quality));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (depth, mask, camera, pose) = rendered_box(0.02, 0.05, 0.015);
        let a = sample_antipodal(&depth, &mask, &camera, &pose, &GripperParams::default(), 1000, 42);
        let b = sample_antipodal(&depth, &mask, &camera, &pose, &GripperParams::default(), 1000, 42);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.center, y.center);
            assert_eq!(x.quality, y.quality);
        }
    }

    fn synthetic_hypothesis(x: f64, y: f64, quality: f64) -> GraspHypothesis {
        GraspHypothesis {
            center: Vector3::new(x, y, 0.0),
            axis: Vector3::x(),
            approach: Vector3::new(0.0, 0.0, -1.0),
            width: 0.04,
            quality,
        }
    }

    #[test]
    fn clustered_hypotheses_collapse_to_one() {
        // 181 hypotheses all within 1 cm of each other.
        let hypotheses: Vec<_> = (0..181)
            .map(|i| synthetic_hypothesis((i % 10) as f64 * 0.0005, (i / 10) as f64 * 0.0004, 0.9))
            .collect();
        let set = select_candidates(&hypotheses, &SelectionParams::default());
        assert_eq!(set.len(), 2); // one survivor, doubled
    }

    #[test]
    fn well_separated_all_selected_when_floor_below() {
        let hypotheses: Vec<_> = (0..25)
            .map(|i| synthetic_hypothesis(i as f64 * 0.05, 0.0, 0.9 - i as f64 * 0.01))
            .collect();
        let set = select_candidates(
            &hypotheses,
            &SelectionParams {
                quality_floor: 0.1,
                ..Default::default()
            },
        );
        assert_eq!(set.len(), 50);
    }

    #[test]
    fn floor_triggers_after_min_count() {
        // Qualities descend; the 12th drops below the floor, so selection
        // takes it (count >= 10 satisfied) and stops there.
        let hypotheses: Vec<_> = (0..25)
            .map(|i| {
                let quality = if i < 11 { 0.9 - i as f64 * 0.01 } else { 0.4 - i as f64 * 0.001 };
                synthetic_hypothesis(i as f64 * 0.05, 0.0, quality)
            })
            .collect();
        let set = select_candidates(&hypotheses, &SelectionParams::default());
        assert_eq!(set.len(), 24); // 12 selected, doubled
    }

    #[test]
    fn doubling_flips_axis_keeps_rest() {
        let hypotheses: Vec<_> = (0..4)
            .map(|i| synthetic_hypothesis(i as f64 * 0.05, 0.0, 0.9))
            .collect();
        let set = select_candidates(
            &hypotheses,
            &SelectionParams {
                quality_floor: 0.0,
                min_count: 1,
                ..Default::default()
            },
        );
        assert_eq!(set.len() % 2, 0);
        for pair in set.grasps.chunks(2) {
            assert_eq!(pair[0].center, pair[1].center);
            assert_eq!(pair[0].width, pair[1].width);
            assert_eq!(pair[0].quality, pair[1].quality);
            assert_eq!(pair[0].axis, -pair[1].axis);
            assert_eq!(pair[0].approach, pair[1].approach);
        }
    }

    #[test]
    fn selected_grasps_pairwise_separated() {
        let mut hypotheses = Vec::new();
        for i in 0..30 {
            // Clusters of three nearly-coincident grasps.
            let base_x = (i / 3) as f64 * 0.03;
            hypotheses.push(synthetic_hypothesis(
                base_x + (i % 3) as f64 * 0.001,
                0.0,
                0.9 - i as f64 * 0.005,
            ));
        }
        let set = select_candidates(
            &hypotheses,
            &SelectionParams {
                quality_floor: 0.0,
                min_count: 1,
                ..Default::default()
            },
        );
        // Brute-force check over the pre-doubling survivors (even indices).
        let originals: Vec<_> = set.grasps.iter().step_by(2).collect();
        for (i, a) in originals.iter().enumerate() {
            for b in originals.iter().skip(i + 1) {
                assert!(horizontal_separation(a, b) >= 0.01);
            }
        }
    }

    #[test]
    fn grasp_pose_is_right_handed() {
        let g = synthetic_hypothesis(0.1, 0.2, 0.8);
        let pose = g.grasp_pose();
        let r = pose.rotation_matrix();
        assert!((r.determinant() - 1.0).abs() < 1e-9);
        assert!((r.column(2) - g.approach).norm() < 1e-9);
        assert!((r.column(0) - g.axis).norm() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let set = GraspCandidateSet {
            grasps: vec![synthetic_hypothesis(0.1, -0.05, 0.77)],
        };
        let json = serde_json::to_string(&set).unwrap();
        let back: GraspCandidateSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.grasps[0].quality, 0.77);
    }
}
