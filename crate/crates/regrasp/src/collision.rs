//! Collision world split into a static Euclidean distance field and dynamic
//! sphere sets.
//!
//! The static part (environment plus non-moving robot bodies) is a voxelized
//! exact distance transform; the dynamic part (arms, hands, held object) is a
//! set of spheres positioned by forward kinematics. Feasibility checks reduce
//! to distance-field lookups and sphere/sphere tests.

use std::collections::HashSet;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, RigidTransform};

/// Voxel occupancy over a regular grid. `origin` is the center of voxel
/// (0,0,0); `resolution` the voxel edge length in meters.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(origin: Vector3<f64>, resolution: f64, dims: [usize; 3]) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        Self {
            origin,
            resolution,
            dims,
            occupied: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn is_occupied(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupied[self.index(x, y, z)]
    }

    pub fn set_occupied(&mut self, x: usize, y: usize, z: usize) {
        let i = self.index(x, y, z);
        self.occupied[i] = true;
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        self.origin + Vector3::new(x as f64, y as f64, z as f64) * self.resolution
    }

    /// Marks the voxels containing the given points; points outside the grid
    /// are ignored.
    pub fn insert_points(&mut self, cloud: &PointCloud) {
        for p in cloud.points() {
            let rel = (p - self.origin) / self.resolution;
            let x = (rel.x + 0.5).floor() as i64;
            let y = (rel.y + 0.5).floor() as i64;
            let z = (rel.z + 0.5).floor() as i64;
            if x >= 0
                && y >= 0
                && z >= 0
                && (x as usize) < self.dims[0]
                && (y as usize) < self.dims[1]
                && (z as usize) < self.dims[2]
            {
                self.set_occupied(x as usize, y as usize, z as usize);
            }
        }
    }

    /// Voxelizes solid primitives by testing every voxel center.
    pub fn insert_primitives(&mut self, primitives: &[Primitive]) {
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let c = self.voxel_center(x, y, z);
                    if primitives.iter().any(|p| p.contains(&c)) {
                        self.set_occupied(x, y, z);
                    }
                }
            }
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }
}

/// Solid obstacle primitives for building occupancy (e.g. the table).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Box {
        pose: RigidTransform,
        half_extents: [f64; 3],
    },
    Cylinder {
        /// Pose of the cylinder center; the axis is the local z.
        pose: RigidTransform,
        radius: f64,
        half_height: f64,
    },
}

impl Primitive {
    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        match self {
            Primitive::Box { pose, half_extents } => {
                let local = pose.inverse().apply(point);
                local.x.abs() <= half_extents[0]
                    && local.y.abs() <= half_extents[1]
                    && local.z.abs() <= half_extents[2]
            }
            Primitive::Cylinder {
                pose,
                radius,
                half_height,
            } => {
                let local = pose.inverse().apply(point);
                local.z.abs() <= *half_height && local.xy().norm() <= *radius
            }
        }
    }

    /// Axis-aligned table top: surface at `top_z`, thickness downward.
    pub fn table(center_x: f64, center_y: f64, top_z: f64, half_x: f64, half_y: f64, thickness: f64) -> Self {
        Primitive::Box {
            pose: RigidTransform::new(
                UnitQuaternion::identity(),
                Vector3::new(center_x, center_y, top_z - thickness / 2.0),
            ),
            half_extents: [half_x, half_y, thickness / 2.0],
        }
    }
}

/// Distance in meters from each voxel center to the nearest occupied voxel
/// center. Occupied voxels have distance zero.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    /// Distances are exact Euclidean transforms of the occupancy; an empty
    /// occupancy yields `sentinel` everywhere.
    data: Vec<f64>,
    pub sentinel: f64,
    /// Whether the grid is declared to contain every obstacle. Governs how
    /// out-of-grid queries are answered.
    pub exhaustive: bool,
}

impl DistanceField {
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn voxel_distance(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    fn in_grid(&self, g: &Vector3<f64>) -> bool {
        g.x >= 0.0
            && g.y >= 0.0
            && g.z >= 0.0
            && g.x <= (self.dims[0] - 1) as f64
            && g.y <= (self.dims[1] - 1) as f64
            && g.z <= (self.dims[2] - 1) as f64
    }

    /// Trilinear interpolation of the eight surrounding voxels.
    ///
    /// Outside the grid: when the grid is exhaustive the result is the
    /// conservative lower bound `max(d(clamped) − ‖p − clamped‖, dist to
    /// grid box)`; otherwise 0 (unknown space is treated as occupied).
    pub fn query(&self, p: &Vector3<f64>) -> f64 {
        let g = (p - self.origin) / self.resolution;
        if !self.in_grid(&g) {
            if !self.exhaustive {
                return 0.0;
            }
            let clamped = Vector3::new(
                g.x.clamp(0.0, (self.dims[0] - 1) as f64),
                g.y.clamp(0.0, (self.dims[1] - 1) as f64),
                g.z.clamp(0.0, (self.dims[2] - 1) as f64),
            );
            let outside = (g - clamped).norm() * self.resolution;
            let inner = self.interpolate(&clamped);
            // Both are lower bounds on the true obstacle distance: the
            // triangle inequality through the clamped point, and the
            // distance to the grid volume itself.
            return (inner - outside).max(outside);
        }
        self.interpolate(&g)
    }

    fn interpolate(&self, g: &Vector3<f64>) -> f64 {
        let x0 = (g.x.floor() as usize).min(self.dims[0] - 1);
        let y0 = (g.y.floor() as usize).min(self.dims[1] - 1);
        let z0 = (g.z.floor() as usize).min(self.dims[2] - 1);
        let x1 = (x0 + 1).min(self.dims[0] - 1);
        let y1 = (y0 + 1).min(self.dims[1] - 1);
        let z1 = (z0 + 1).min(self.dims[2] - 1);
        let fx = (g.x - x0 as f64).clamp(0.0, 1.0);
        let fy = (g.y - y0 as f64).clamp(0.0, 1.0);
        let fz = (g.z - z0 as f64).clamp(0.0, 1.0);

        let d = |x: usize, y: usize, z: usize| self.data[self.index(x, y, z)];
        let c00 = d(x0, y0, z0) * (1.0 - fx) + d(x1, y0, z0) * fx;
        let c10 = d(x0, y1, z0) * (1.0 - fx) + d(x1, y1, z0) * fx;
        let c01 = d(x0, y0, z1) * (1.0 - fx) + d(x1, y0, z1) * fx;
        let c11 = d(x0, y1, z1) * (1.0 - fx) + d(x1, y1, z1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }
}

/// Exact squared Euclidean distance transform via the separable
/// lower-envelope-of-parabolas method, one pass per axis.
pub fn build_edt(grid: &VoxelGrid) -> DistanceField {
    let [nx, ny, nz] = grid.dims;
    let n = nx * ny * nz;
    let diagonal = (Vector3::new(nx as f64, ny as f64, nz as f64) * grid.resolution).norm();
    // Squared distances in voxel units; "infinity" must survive additions.
    let inf = (nx * nx + ny * ny + nz * nz) as f64 + 1.0;

    let mut dist2: Vec<f64> = (0..n)
        .map(|i| if grid.occupied[i] { 0.0 } else { inf })
        .collect();

    if grid.occupied_count() == 0 {
        return DistanceField {
            origin: grid.origin,
            resolution: grid.resolution,
            dims: grid.dims,
            data: vec![diagonal; n],
            sentinel: diagonal,
            exhaustive: true,
        };
    }

    let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;

    // Pass 1: x lines.
    let mut line = vec![0.0f64; nx.max(ny).max(nz)];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                line[x] = dist2[idx(x, y, z)];
            }
            let out = dt_1d(&line[..nx]);
            for x in 0..nx {
                dist2[idx(x, y, z)] = out[x];
            }
        }
    }
    // Pass 2: y lines.
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = dist2[idx(x, y, z)];
            }
            let out = dt_1d(&line[..ny]);
            for y in 0..ny {
                dist2[idx(x, y, z)] = out[y];
            }
        }
    }
    // Pass 3: z lines.
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                line[z] = dist2[idx(x, y, z)];
            }
            let out = dt_1d(&line[..nz]);
            for z in 0..nz {
                dist2[idx(x, y, z)] = out[z];
            }
        }
    }

    let data: Vec<f64> = dist2.iter().map(|&d2| d2.sqrt() * grid.resolution).collect();
    DistanceField {
        origin: grid.origin,
        resolution: grid.resolution,
        dims: grid.dims,
        data,
        sentinel: diagonal,
        exhaustive: true,
    }
}

/// 1D squared distance transform (Felzenszwalb-Huttenlocher lower envelope).
fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = f[0];
        return out;
    }
    let mut v = vec![0usize; n]; // parabola vertices
    let mut z = vec![0.0f64; n + 1]; // envelope boundaries
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
    out
}

/// A collision sphere placed in the world, tagged with the link it belongs
/// to so that permanently-adjacent bodies can be excluded from checks.
#[derive(Debug, Clone)]
pub struct PlacedSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub link: u16,
}

/// Spheres approximating moving robot bodies, with a link-name table and
/// pairs of links that are never mutually checked.
#[derive(Debug, Clone, Default)]
pub struct SphereSet {
    pub spheres: Vec<PlacedSphere>,
    link_names: Vec<String>,
    excluded: HashSet<(u16, u16)>,
}

impl SphereSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for a link name, interning it on first use.
    pub fn link_id(&mut self, name: &str) -> u16 {
        if let Some(i) = self.link_names.iter().position(|n| n == name) {
            return i as u16;
        }
        self.link_names.push(name.to_string());
        (self.link_names.len() - 1) as u16
    }

    pub fn link_name(&self, id: u16) -> &str {
        &self.link_names[id as usize]
    }

    pub fn add_sphere(&mut self, link: &str, center: Vector3<f64>, radius: f64) {
        assert!(radius > 0.0, "sphere radius must be positive");
        let link = self.link_id(link);
        self.spheres.push(PlacedSphere {
            center,
            radius,
            link,
        });
    }

    pub fn exclude_pair(&mut self, a: &str, b: &str) {
        let a = self.link_id(a);
        let b = self.link_id(b);
        self.excluded.insert((a.min(b), a.max(b)));
    }

    pub fn is_excluded(&self, a: u16, b: u16) -> bool {
        a == b || self.excluded.contains(&(a.min(b), a.max(b)))
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }
}

/// Static environment (distance field plus non-moving robot spheres) against
/// which dynamic sphere sets are checked.
#[derive(Debug, Clone)]
pub struct CollisionWorld {
    pub static_field: DistanceField,
    pub robot_static: SphereSet,
    pub clearance_margin: f64,
}

impl CollisionWorld {
    pub fn new(static_field: DistanceField, robot_static: SphereSet, clearance_margin: f64) -> Self {
        assert!(clearance_margin >= 0.0, "margin must be non-negative");
        Self {
            static_field,
            robot_static,
            clearance_margin,
        }
    }
}

/// First violation found by a collision check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A dynamic sphere is within `required` of the static field.
    StaticField {
        link: String,
        distance: f64,
        required: f64,
    },
    /// Two spheres overlap (dynamic/dynamic or dynamic/static-robot).
    SphereOverlap {
        link_a: String,
        link_b: String,
        distance: f64,
        required: f64,
    },
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub free: bool,
    pub violation: Option<Violation>,
}

/// Checks a dynamic sphere set against the world: every sphere must clear
/// the static distance field by its radius plus the margin, and no
/// non-excluded sphere pair (dynamic-dynamic or dynamic-robot-static) may
/// overlap.
pub fn check_free(world: &CollisionWorld, dynamic: &SphereSet) -> CheckResult {
    let margin = world.clearance_margin;
    for s in &dynamic.spheres {
        let d = world.static_field.query(&s.center);
        let required = s.radius + margin;
        if d <= required {
            return CheckResult {
                free: false,
                violation: Some(Violation::StaticField {
                    link: dynamic.link_name(s.link).to_string(),
                    distance: d,
                    required,
                }),
            };
        }
    }
    for (i, a) in dynamic.spheres.iter().enumerate() {
        for b in dynamic.spheres.iter().skip(i + 1) {
            if dynamic.is_excluded(a.link, b.link) {
                continue;
            }
            let d = (a.center - b.center).norm();
            let required = a.radius + b.radius + margin;
            if d <= required {
                return CheckResult {
                    free: false,
                    violation: Some(Violation::SphereOverlap {
                        link_a: dynamic.link_name(a.link).to_string(),
                        link_b: dynamic.link_name(b.link).to_string(),
                        distance: d,
                        required,
                    }),
                };
            }
        }
    }
    // Robot-static spheres live in a separate set with their own link table;
    // exclusions across the two sets are matched by name.
    for a in &dynamic.spheres {
        let a_name = dynamic.link_name(a.link);
        for b in &world.robot_static.spheres {
            let b_name = world.robot_static.link_name(b.link);
            if excluded_by_name(dynamic, a_name, b_name)
                || excluded_by_name(&world.robot_static, a_name, b_name)
            {
                continue;
            }
            let d = (a.center - b.center).norm();
            let required = a.radius + b.radius + margin;
            if d <= required {
                return CheckResult {
                    free: false,
                    violation: Some(Violation::SphereOverlap {
                        link_a: a_name.to_string(),
                        link_b: b_name.to_string(),
                        distance: d,
                        required,
                    }),
                };
            }
        }
    }
    CheckResult {
        free: true,
        violation: None,
    }
}

fn excluded_by_name(set: &SphereSet, a: &str, b: &str) -> bool {
    let find = |name: &str| set.link_names.iter().position(|n| n == name);
    match (find(a), find(b)) {
        (Some(a), Some(b)) => set.is_excluded(a as u16, b as u16),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_distance(grid: &VoxelGrid, x: usize, y: usize, z: usize) -> f64 {
        let mut best = f64::INFINITY;
        for oz in 0..grid.dims[2] {
            for oy in 0..grid.dims[1] {
                for ox in 0..grid.dims[0] {
                    if grid.is_occupied(ox, oy, oz) {
                        let dx = ox as f64 - x as f64;
                        let dy = oy as f64 - y as f64;
                        let dz = oz as f64 - z as f64;
                        best = best.min(dx * dx + dy * dy + dz * dz);
                    }
                }
            }
        }
        best.sqrt() * grid.resolution
    }

    #[test]
    fn empty_occupancy_gives_sentinel() {
        let grid = VoxelGrid::empty(Vector3::zeros(), 0.1, [4, 5, 6]);
        let field = build_edt(&grid);
        for z in 0..6 {
            for y in 0..5 {
                for x in 0..4 {
                    assert_eq!(field.voxel_distance(x, y, z), field.sentinel);
                }
            }
        }
    }

    #[test]
    fn single_voxel_unit_geometry() {
        let mut grid = VoxelGrid::empty(Vector3::zeros(), 1.0, [5, 5, 5]);
        grid.set_occupied(2, 2, 2);
        let field = build_edt(&grid);
        assert_eq!(field.voxel_distance(2, 2, 2), 0.0);
        assert_eq!(field.voxel_distance(3, 2, 2), 1.0);
        assert_eq!(field.voxel_distance(3, 3, 3), 3.0f64.sqrt());
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let dims = [
                rng.gen_range(3..12usize),
                rng.gen_range(3..12usize),
                rng.gen_range(3..12usize),
            ];
            let mut grid = VoxelGrid::empty(Vector3::zeros(), 0.05, dims);
            let occupied = rng.gen_range(1..20);
            for _ in 0..occupied {
                grid.set_occupied(
                    rng.gen_range(0..dims[0]),
                    rng.gen_range(0..dims[1]),
                    rng.gen_range(0..dims[2]),
                );
            }
            let field = build_edt(&grid);
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let expected = brute_force_distance(&grid, x, y, z);
                        assert_eq!(
                            field.voxel_distance(x, y, z),
                            expected,
                            "mismatch at ({x},{y},{z})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn query_at_occupied_center_is_zero() {
        let mut grid = VoxelGrid::empty(Vector3::new(1.0, 2.0, 3.0), 0.5, [4, 4, 4]);
        grid.set_occupied(1, 1, 1);
        let field = build_edt(&grid);
        let p = grid.voxel_center(1, 1, 1);
        assert_eq!(field.query(&p), 0.0);
    }

    #[test]
    fn query_interpolates_between_voxels() {
        let mut grid = VoxelGrid::empty(Vector3::zeros(), 1.0, [4, 1, 1]);
        grid.set_occupied(0, 0, 0);
        let field = build_edt(&grid);
        // Voxels along x have distances 0,1,2,3; midpoint of 1 and 2 = 1.5.
        let p = Vector3::new(1.5, 0.0, 0.0);
        assert!((field.query(&p) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn random_queries_near_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dims = [10, 10, 10];
        let res = 0.05;
        let mut grid = VoxelGrid::empty(Vector3::zeros(), res, dims);
        for _ in 0..15 {
            grid.set_occupied(
                rng.gen_range(0..dims[0]),
                rng.gen_range(0..dims[1]),
                rng.gen_range(0..dims[2]),
            );
        }
        let field = build_edt(&grid);
        let mut centers = Vec::new();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    if grid.is_occupied(x, y, z) {
                        centers.push(grid.voxel_center(x, y, z));
                    }
                }
            }
        }
        for _ in 0..100 {
            let p = Vector3::new(
                rng.gen_range(0.0..(dims[0] - 1) as f64 * res),
                rng.gen_range(0.0..(dims[1] - 1) as f64 * res),
                rng.gen_range(0.0..(dims[2] - 1) as f64 * res),
            );
            let brute = centers
                .iter()
                .map(|c| (c - p).norm())
                .fold(f64::INFINITY, f64::min);
            let interp = field.query(&p);
            assert!(
                (interp - brute).abs() <= res * 3.0f64.sqrt(),
                "interp {interp} vs brute {brute}"
            );
        }
    }

    #[test]
    fn determinism_bit_for_bit() {
        let mut grid = VoxelGrid::empty(Vector3::zeros(), 0.02, [16, 16, 16]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            grid.set_occupied(
                rng.gen_range(0..16),
                rng.gen_range(0..16),
                rng.gen_range(0..16),
            );
        }
        let a = build_edt(&grid);
        let b = build_edt(&grid);
        assert_eq!(a.data, b.data);
    }

    fn table_world(margin: f64) -> CollisionWorld {
        let mut grid = VoxelGrid::empty(Vector3::new(-0.5, -0.5, 0.0), 0.05, [20, 20, 12]);
        grid.insert_primitives(&[Primitive::table(0.0, 0.0, 0.2, 0.4, 0.4, 0.1)]);
        CollisionWorld::new(build_edt(&grid), SphereSet::new(), margin)
    }

    #[test]
    fn empty_dynamic_set_is_free() {
        let world = table_world(0.0);
        let result = check_free(&world, &SphereSet::new());
        assert!(result.free);
    }

    #[test]
    fn penetrating_sphere_is_not_free() {
        let mut grid = VoxelGrid::empty(Vector3::zeros(), 0.05, [8, 8, 8]);
        grid.set_occupied(4, 4, 4);
        let world = CollisionWorld::new(build_edt(&grid), SphereSet::new(), 0.0);
        let mut dynamic = SphereSet::new();
        // 0.05 m sphere centered 0.04 m from the occupied voxel center.
        let c = grid.voxel_center(4, 4, 4) + Vector3::new(0.04, 0.0, 0.0);
        dynamic.add_sphere("probe", c, 0.05);
        let result = check_free(&world, &dynamic);
        assert!(!result.free);
        assert!(matches!(result.violation, Some(Violation::StaticField { .. })));
    }

    #[test]
    fn agrees_with_brute_force_on_random_configurations() {
        let world = table_world(0.0);
        let mut grid_centers = Vec::new();
        {
            let mut grid = VoxelGrid::empty(Vector3::new(-0.5, -0.5, 0.0), 0.05, [20, 20, 12]);
            grid.insert_primitives(&[Primitive::table(0.0, 0.0, 0.2, 0.4, 0.4, 0.1)]);
            for z in 0..12 {
                for y in 0..20 {
                    for x in 0..20 {
                        if grid.is_occupied(x, y, z) {
                            grid_centers.push(grid.voxel_center(x, y, z));
                        }
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..60 {
            let mut dynamic = SphereSet::new();
            let n = rng.gen_range(1..6);
            for i in 0..n {
                dynamic.add_sphere(
                    &format!("link{i}"),
                    Vector3::new(
                        rng.gen_range(-0.45..0.45),
                        rng.gen_range(-0.45..0.45),
                        rng.gen_range(0.05..0.5),
                    ),
                    rng.gen_range(0.02..0.08),
                );
            }
            let result = check_free(&world, &dynamic);
            // Brute force: sphere vs every occupied voxel center and every
            // sphere pair. Interpolation can differ from true voxel-center
            // distance, so only compare on clear cases.
            let mut brute_free = true;
            for s in &dynamic.spheres {
                let d = grid_centers
                    .iter()
                    .map(|c| (c - s.center).norm())
                    .fold(f64::INFINITY, f64::min);
                if d <= s.radius {
                    brute_free = false;
                }
            }
            for (i, a) in dynamic.spheres.iter().enumerate() {
                for b in dynamic.spheres.iter().skip(i + 1) {
                    if (a.center - b.center).norm() <= a.radius + b.radius {
                        brute_free = false;
                    }
                }
            }
            // The field is conservative within one voxel diagonal; require
            // agreement when the margin of decision is larger than that.
            if !brute_free {
                let deep = dynamic.spheres.iter().any(|s| {
                    grid_centers
                        .iter()
                        .map(|c| (c - s.center).norm())
                        .fold(f64::INFINITY, f64::min)
                        < s.radius - 0.05 * 1.8
                }) || {
                    let mut overlap = false;
                    for (i, a) in dynamic.spheres.iter().enumerate() {
                        for b in dynamic.spheres.iter().skip(i + 1) {
                            if (a.center - b.center).norm() <= a.radius + b.radius {
                                overlap = true;
                            }
                        }
                    }
                    overlap
                };
                if deep {
                    assert!(!result.free, "deep collision missed");
                }
            } else {
                let clear = dynamic.spheres.iter().all(|s| {
                    grid_centers
                        .iter()
                        .map(|c| (c - s.center).norm())
                        .fold(f64::INFINITY, f64::min)
                        > s.radius + 0.05 * 1.8
                });
                if clear {
                    assert!(result.free, "clear configuration flagged");
                }
            }
        }
    }

    #[test]
    fn monotone_in_margin() {
        let world_strict = table_world(0.05);
        let world_loose = table_world(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let mut dynamic = SphereSet::new();
            dynamic.add_sphere(
                "probe",
                Vector3::new(
                    rng.gen_range(-0.45..0.45),
                    rng.gen_range(-0.45..0.45),
                    rng.gen_range(0.1..0.5),
                ),
                0.04,
            );
            if check_free(&world_strict, &dynamic).free {
                assert!(check_free(&world_loose, &dynamic).free);
            }
        }
    }

    #[test]
    fn excluded_pairs_ignored() {
        let grid = VoxelGrid::empty(Vector3::zeros(), 0.1, [4, 4, 4]);
        let world = CollisionWorld::new(build_edt(&grid), SphereSet::new(), 0.0);
        let mut dynamic = SphereSet::new();
        dynamic.add_sphere("a", Vector3::new(1.0, 1.0, 1.0), 0.1);
        dynamic.add_sphere("b", Vector3::new(1.05, 1.0, 1.0), 0.1);
        assert!(!check_free(&world, &dynamic).free);
        dynamic.exclude_pair("a", "b");
        assert!(check_free(&world, &dynamic).free);
    }

    #[test]
    fn out_of_grid_queries() {
        let mut grid = VoxelGrid::empty(Vector3::zeros(), 0.1, [4, 4, 4]);
        grid.set_occupied(0, 0, 0);
        let mut field = build_edt(&grid);
        let far = Vector3::new(10.0, 0.0, 0.0);
        // Exhaustive: nearest obstacle is at least the distance to the grid.
        assert!(field.query(&far) > 0.0);
        field.exhaustive = false;
        assert_eq!(field.query(&far), 0.0);
    }
}
