//! Procedural object categories for the synthetic scene harness: families of
//! bottle-like and can-like meshes with seeded parameter variation, plus a
//! functional grasp annotation per category. Everything is deterministic for
//! a fixed seed.

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{RigidTransform, TriangleMesh};

fn push_box(
    vertices: &mut Vec<Vector3<f64>>,
    faces: &mut Vec<[u32; 3]>,
    center: Vector3<f64>,
    half: Vector3<f64>,
) {
    let base = vertices.len() as u32;
    for dz in [-1.0, 1.0] {
        for dy in [-1.0, 1.0] {
            for dx in [-1.0, 1.0] {
                vertices.push(center + Vector3::new(dx * half.x, dy * half.y, dz * half.z));
            }
        }
    }
    // Corner order: x fastest, then y, then z.
    let quads = [
        [0, 2, 3, 1], // bottom (z-)
        [4, 5, 7, 6], // top (z+)
        [0, 1, 5, 4], // y-
        [2, 6, 7, 3], // y+
        [0, 4, 6, 2], // x-
        [1, 3, 7, 5], // x+
    ];
    for q in quads {
        faces.push([base + q[0], base + q[1], base + q[2]]);
        faces.push([base + q[0], base + q[2], base + q[3]]);
    }
}

fn push_frustum(
    vertices: &mut Vec<Vector3<f64>>,
    faces: &mut Vec<[u32; 3]>,
    base_center: Vector3<f64>,
    axis: Vector3<f64>,
    r_base: f64,
    r_top: f64,
    length: f64,
    segments: u32,
) {
    let axis = Unit::new_normalize(axis);
    // Any perpendicular frame.
    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u).normalize();
    let top_center = base_center + axis.into_inner() * length;

    let base_idx = vertices.len() as u32;
    for i in 0..segments {
        let a = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
        vertices.push(base_center + (u * a.cos() + v * a.sin()) * r_base);
    }
    for i in 0..segments {
        let a = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
        vertices.push(top_center + (u * a.cos() + v * a.sin()) * r_top);
    }
    let bc = vertices.len() as u32;
    vertices.push(base_center);
    let tc = vertices.len() as u32;
    vertices.push(top_center);

    for i in 0..segments {
        let j = (i + 1) % segments;
        let (b0, b1) = (base_idx + i, base_idx + j);
        let (t0, t1) = (base_idx + segments + i, base_idx + segments + j);
        faces.push([b0, b1, t1]);
        faces.push([b0, t1, t0]);
        faces.push([bc, b1, b0]);
        faces.push([tc, t0, t1]);
    }
}

/// Parameters of one bottle-family instance.
#[derive(Debug, Clone, Copy)]
pub struct BottleParams {
    pub body_half_x: f64,
    pub body_half_y: f64,
    pub body_height: f64,
    pub neck_radius: f64,
    pub neck_height: f64,
    pub head_length: f64,
}

impl Default for BottleParams {
    fn default() -> Self {
        Self {
            body_half_x: 0.032,
            body_half_y: 0.026,
            body_height: 0.16,
            neck_radius: 0.016,
            neck_height: 0.05,
            head_length: 0.055,
        }
    }
}

/// Bottle with a box body, cylindrical neck and a forward head; base at
/// z = 0 in the object frame.
pub fn bottle_mesh(p: &BottleParams) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    push_box(
        &mut vertices,
        &mut faces,
        Vector3::new(0.0, 0.0, p.body_height / 2.0),
        Vector3::new(p.body_half_x, p.body_half_y, p.body_height / 2.0),
    );
    push_frustum(
        &mut vertices,
        &mut faces,
        Vector3::new(0.0, 0.0, p.body_height),
        Vector3::z(),
        p.neck_radius,
        p.neck_radius * 0.9,
        p.neck_height,
        8,
    );
    push_box(
        &mut vertices,
        &mut faces,
        Vector3::new(
            p.head_length / 2.0 - 0.01,
            0.0,
            p.body_height + p.neck_height + 0.012,
        ),
        Vector3::new(p.head_length / 2.0, p.neck_radius * 0.9, 0.014),
    );
    TriangleMesh::new(vertices, faces).expect("generated bottle is valid")
}

/// Functional grasp of the bottle family: at the neck below the head, hand
/// approaching from the front (-x motion), fingers closing across y.
pub fn bottle_functional_grasp(p: &BottleParams) -> RigidTransform {
    let position = Vector3::new(p.body_half_x + 0.015, 0.0, p.body_height + p.neck_height / 2.0);
    // Tool z (approach) along -x, closing axis along y.
    let x = Vector3::y();
    let z = Vector3::new(-1.0, 0.0, 0.0);
    let y = z.cross(&x);
    RigidTransform::from_matrix(&Matrix3::from_columns(&[x, y, z]), position)
}

/// Parameters of one can-family instance.
#[derive(Debug, Clone, Copy)]
pub struct CanParams {
    pub body_half_x: f64,
    pub body_half_y: f64,
    pub body_height: f64,
    pub spout_length: f64,
    pub spout_radius: f64,
}

impl Default for CanParams {
    fn default() -> Self {
        Self {
            body_half_x: 0.034,
            body_half_y: 0.028,
            body_height: 0.15,
            spout_length: 0.09,
            spout_radius: 0.014,
        }
    }
}

/// Watering-can-like body with a slanted spout; base at z = 0.
pub fn can_mesh(p: &CanParams) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    push_box(
        &mut vertices,
        &mut faces,
        Vector3::new(0.0, 0.0, p.body_height / 2.0),
        Vector3::new(p.body_half_x, p.body_half_y, p.body_height / 2.0),
    );
    push_frustum(
        &mut vertices,
        &mut faces,
        Vector3::new(p.body_half_x - 0.005, 0.0, p.body_height * 0.75),
        Vector3::new(0.8, 0.0, 0.6),
        p.spout_radius,
        p.spout_radius * 0.75,
        p.spout_length,
        8,
    );
    TriangleMesh::new(vertices, faces).expect("generated can is valid")
}

/// Functional grasp of the can family: top-rear of the body (the handle
/// region), approaching downward, closing across y.
pub fn can_functional_grasp(p: &CanParams) -> RigidTransform {
    let position = Vector3::new(-p.body_half_x * 0.5, 0.0, p.body_height + 0.01);
    let x = Vector3::y();
    let z = Vector3::new(0.0, 0.0, -1.0);
    let y = z.cross(&x);
    RigidTransform::from_matrix(&Matrix3::from_columns(&[x, y, z]), position)
}

/// A generated category: canonical mesh, training instances and the
/// functional grasp annotated on the canonical model.
pub struct SyntheticCategory {
    pub name: String,
    pub canonical: TriangleMesh,
    pub training: Vec<TriangleMesh>,
    pub functional_grasp: RigidTransform,
}

/// Builds a seeded family of instances around the default parameters.
pub fn synthetic_category(name: &str, instance_count: usize, seed: u64) -> SyntheticCategory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scale = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    match name {
        "bottle" => {
            let canonical_params = BottleParams::default();
            let canonical = bottle_mesh(&canonical_params);
            let training = (0..instance_count)
                .map(|_| {
                    let p = BottleParams {
                        body_half_x: canonical_params.body_half_x * scale(0.85, 1.15),
                        body_half_y: canonical_params.body_half_y * scale(0.85, 1.15),
                        body_height: canonical_params.body_height * scale(0.85, 1.2),
                        neck_radius: canonical_params.neck_radius * scale(0.9, 1.1),
                        neck_height: canonical_params.neck_height * scale(0.85, 1.2),
                        head_length: canonical_params.head_length * scale(0.9, 1.15),
                    };
                    bottle_mesh(&p)
                })
                .collect();
            SyntheticCategory {
                name: name.to_string(),
                canonical,
                training,
                functional_grasp: bottle_functional_grasp(&canonical_params),
            }
        }
        "can" => {
            let canonical_params = CanParams::default();
            let canonical = can_mesh(&canonical_params);
            let training = (0..instance_count)
                .map(|_| {
                    let p = CanParams {
                        body_half_x: canonical_params.body_half_x * scale(0.85, 1.15),
                        body_half_y: canonical_params.body_half_y * scale(0.85, 1.15),
                        body_height: canonical_params.body_height * scale(0.85, 1.2),
                        spout_length: canonical_params.spout_length * scale(0.85, 1.15),
                        spout_radius: canonical_params.spout_radius * scale(0.9, 1.1),
                    };
                    can_mesh(&p)
                })
                .collect();
            SyntheticCategory {
                name: name.to_string(),
                canonical,
                training,
                functional_grasp: can_functional_grasp(&canonical_params),
            }
        }
        other => panic!("unknown synthetic category {other}"),
    }
}

/// Object pose lying on its side on the table, rotated by `yaw` about the
/// vertical, matching the tabletop scenario the planner targets.
pub fn lying_pose(table_top_z: f64, x: f64, y: f64, yaw: f64, half_width: f64) -> RigidTransform {
    // Tip the object onto its -x side (object +x, the front, points up),
    // then yaw about the world vertical.
    let tip = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -std::f64::consts::FRAC_PI_2);
    let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    RigidTransform::new(spin * tip, Vector3::new(x, y, table_top_z + half_width))
}
