//! Software depth rendering of triangle meshes from a virtual pinhole
//! camera, producing the depth image and segmentation mask consumed by the
//! grasp sampler and the synthetic scene harness.
//!
//! Camera convention: +Z is the optical axis (forward), +X right (image u),
//! +Y down (image v); `camera_pose` maps camera frame to world. Depth is the
//! camera-frame z coordinate in meters, 0 meaning no hit. No back-face
//! culling, since meshes from online databases are often open shells.

pub mod io;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{RigidTransform, TriangleMesh};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    /// 640x480 with 550 px focal length, a common depth-sensor geometry.
    pub fn default_vga() -> Self {
        Self::centered(640, 480, 550.0)
    }

    /// Principal point at the image center with equal focal lengths.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame ray direction through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Camera-frame point at depth `z` seen at the center of pixel `(u, v)`.
    pub fn deproject(&self, u: usize, v: usize, z: f64) -> Vector3<f64> {
        self.pixel_ray(u, v) * z
    }
}

/// Per-pixel depth in meters; 0 marks pixels with no surface hit.
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn zeroed(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f32) {
        self.data[v * self.width + u] = depth;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Binary object/background labels, dimension-matched to its depth image.
#[derive(Debug, Clone)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl SegmentationMask {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn is_object(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set_object(&mut self, u: usize, v: usize) {
        self.data[v * self.width + u] = true;
    }

    pub fn object_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Z-buffer rasterization of `mesh` (world frame) into a depth image and
/// object mask. Depth is interpolated perspective-correctly (linear in 1/z).
/// Triangles with any vertex at or behind the camera plane are skipped.
pub fn render_depth(
    mesh: &TriangleMesh,
    camera: &PinholeCamera,
    camera_pose: &RigidTransform,
) -> (DepthImage, SegmentationMask) {
    let mut depth = DepthImage::zeroed(camera.width, camera.height);
    let mut mask = SegmentationMask::background(camera.width, camera.height);
    let world_to_cam = camera_pose.inverse();

    let cam_vertices: Vec<Vector3<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| world_to_cam.apply(v))
        .collect();

    const NEAR: f64 = 1e-6;
    for face in mesh.faces() {
        let tri = [
            cam_vertices[face[0] as usize],
            cam_vertices[face[1] as usize],
            cam_vertices[face[2] as usize],
        ];
        if tri.iter().any(|p| p.z <= NEAR) {
            continue;
        }
        let uv: Vec<(f64, f64)> = tri
            .iter()
            .map(|p| (camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy))
            .collect();

        let min_u = uv.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_u = uv.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_v = uv.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_v = uv.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);

        let u0 = (min_u - 0.5).floor().max(0.0) as usize;
        let u1 = ((max_u - 0.5).ceil() as i64).min(camera.width as i64 - 1);
        let v0 = (min_v - 0.5).floor().max(0.0) as usize;
        let v1 = ((max_v - 0.5).ceil() as i64).min(camera.height as i64 - 1);
        if u1 < u0 as i64 || v1 < v0 as i64 {
            continue;
        }

        let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| -> f64 {
            (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
        };
        let area = edge(uv[0], uv[1], uv[2]);
        if area == 0.0 {
            continue;
        }
        let inv_z = [1.0 / tri[0].z, 1.0 / tri[1].z, 1.0 / tri[2].z];

        for v in v0..=v1 as usize {
            for u in u0..=u1 as usize {
                let pc = (u as f64 + 0.5, v as f64 + 0.5);
                let w0 = edge(uv[1], uv[2], pc) / area;
                let w1 = edge(uv[2], uv[0], pc) / area;
                let w2 = edge(uv[0], uv[1], pc) / area;
                // Accept both windings: all weights non-negative covers
                // counter-clockwise, all non-positive clockwise.
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
                let current = depth.get(u, v);
                if current == 0.0 || (z as f32) < current {
                    depth.set(u, v, z as f32);
                    mask.set_object(u, v);
                }
            }
        }
    }

    (depth, mask)
}

/// Camera pose looking straight down at the object from `standoff` meters
/// above its vertex centroid, image x axis aligned with world x.
pub fn top_down_camera(
    mesh: &TriangleMesh,
    object_pose: &RigidTransform,
    standoff: f64,
) -> RigidTransform {
    assert!(standoff > 0.0, "standoff must be positive");
    let center = object_pose.apply(&mesh.vertex_centroid());
    let position = center + Vector3::new(0.0, 0.0, standoff);
    // Camera axes in world: x right (world +x), y down the image (world -y),
    // z forward (world -z, looking down).
    let rotation = Matrix3::from_columns(&[
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
    ]);
    RigidTransform::from_matrix(&rotation, position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

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

    /// Möller–Trumbore ray/triangle intersection, used as an independent
    /// oracle against the rasterizer.
    fn ray_triangle(
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        a: &Vector3<f64>,
        b: &Vector3<f64>,
        c: &Vector3<f64>,
    ) -> Option<f64> {
        let e1 = b - a;
        let e2 = c - a;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv_det = 1.0 / det;
        let t_vec = origin - a;
        let u = t_vec.dot(&p) * inv_det;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = t_vec.cross(&e1);
        let v = dir.dot(&q) * inv_det;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv_det;
        (t > 0.0).then_some(t)
    }

    #[test]
    fn flat_triangle_at_one_meter() {
        // Large triangle parallel to the image plane 1 m in front of a
        // camera at the origin looking along +z.
        let mesh = TriangleMesh::new(
            vec![
                Vector3::new(-1.0, -1.0, 1.0),
                Vector3::new(1.5, -1.0, 1.0),
                Vector3::new(0.0, 1.5, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let camera = PinholeCamera::centered(64, 48, 60.0);
        let (depth, mask) = render_depth(&mesh, &camera, &RigidTransform::identity());
        let center = depth.get(32, 24);
        assert!(mask.is_object(32, 24));
        assert!((center as f64 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mesh_behind_camera_is_background() {
        let mesh = box_mesh(0.1, 0.1, 0.1)
            .transformed(&RigidTransform::from_translation(Vector3::new(0.0, 0.0, -2.0)));
        let camera = PinholeCamera::centered(32, 32, 30.0);
        let (_, mask) = render_depth(&mesh, &camera, &RigidTransform::identity());
        assert_eq!(mask.object_count(), 0);
    }

    #[test]
    fn top_down_box_depths() {
        // Unit-scale box with its top face 1 m below the camera.
        let mesh = box_mesh(0.3, 0.2, 0.25);
        let object_pose = RigidTransform::identity();
        let camera = PinholeCamera::centered(96, 96, 90.0);
        let cam_pose = top_down_camera(&mesh, &object_pose, 1.25);
        let (depth, mask) = render_depth(&mesh, &camera, &cam_pose);
        // Center pixel sees the top face: z_cam = 1.25 - 0.25 = 1.0.
        assert!(mask.is_object(48, 48));
        assert!((depth.get(48, 48) as f64 - 1.0).abs() < 1e-6);
        // Every object pixel matches an independent per-pixel ray cast.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 50 {
            let u = rng.gen_range(0..96);
            let v = rng.gen_range(0..96);
            if !mask.is_object(u, v) {
                continue;
            }
            let dir_cam = camera.pixel_ray(u, v);
            let origin = *cam_pose.translation();
            let dir_world = cam_pose.rotate(&dir_cam);
            let mut best = f64::INFINITY;
            for fi in 0..mesh.faces().len() {
                let [a, b, c] = mesh.face_vertices(fi);
                if let Some(t) = ray_triangle(&origin, &dir_world, &a, &b, &c) {
                    best = best.min(t);
                }
            }
            assert!(best.is_finite());
            // t parameterizes the un-normalized ray whose z component is 1,
            // so t equals the camera-frame depth.
            assert!(
                (best - depth.get(u, v) as f64).abs() < 1e-5,
                "pixel ({u},{v}): raster {} vs raycast {}",
                depth.get(u, v),
                best
            );
            checked += 1;
        }
    }

    #[test]
    fn mask_matches_nonzero_depth() {
        let mesh = box_mesh(0.2, 0.3, 0.15);
        let camera = PinholeCamera::centered(64, 64, 70.0);
        let cam_pose = top_down_camera(&mesh, &RigidTransform::identity(), 1.0);
        let (depth, mask) = render_depth(&mesh, &camera, &cam_pose);
        for v in 0..64 {
            for u in 0..64 {
                assert_eq!(mask.is_object(u, v), depth.get(u, v) > 0.0);
            }
        }
    }

    #[test]
    fn top_down_pose_position_and_axis() {
        let mesh = box_mesh(0.1, 0.1, 0.1);
        let pose = RigidTransform::from_translation(Vector3::new(0.5, 0.2, 0.1));
        let cam = top_down_camera(&mesh, &pose, 0.7);
        assert!((cam.translation() - Vector3::new(0.5, 0.2, 0.8)).norm() < 1e-12);
        let optical = cam.rotate(&Vector3::z());
        assert!((optical - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn centroid_projects_to_principal_point() {
        let mesh = box_mesh(0.15, 0.1, 0.2);
        let pose = RigidTransform::from_translation(Vector3::new(0.4, -0.3, 0.2));
        let camera = PinholeCamera::centered(128, 128, 120.0);
        let cam_pose = top_down_camera(&mesh, &pose, 0.9);
        let centroid_world = pose.apply(&mesh.vertex_centroid());
        let centroid_cam = cam_pose.inverse().apply(&centroid_world);
        let (u, v) = camera.project(&centroid_cam).unwrap();
        assert!((u - camera.cx).abs() < 2.0);
        assert!((v - camera.cy).abs() < 2.0);
    }
}
