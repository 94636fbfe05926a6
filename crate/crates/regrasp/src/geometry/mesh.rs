use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::{GeometryError, PointCloud, RigidTransform};

/// Vertex chosen to represent a grid cell during clustering decimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterRepresentative {
    /// Per-cell vertex centroid. The filter is only used to bound point
    /// count, so the centroid is the default.
    #[default]
    Centroid,
    /// Minimizer of the summed face quadrics of the cell's vertices, falling
    /// back to the centroid when the quadric is near singular.
    QuadricMinimizer,
}

/// An indexed triangle mesh with 64-bit vertex coordinates in meters.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, validating that every face index is in range and no
    /// face repeats a vertex index.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx as usize >= vertices.len() {
                    return Err(GeometryError::FaceIndexOutOfRange {
                        face: fi,
                        index: idx,
                        vertex_count: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::DegenerateFace { face: fi });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn face_vertices(&self, face: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_vertices(face);
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if norm > 0.0 {
            n / norm
        } else {
            Vector3::z()
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Replaces the vertex positions, keeping connectivity. Counts must match.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> TriangleMesh {
        assert_eq!(vertices.len(), self.vertices.len());
        TriangleMesh {
            vertices,
            faces: self.faces.clone(),
        }
    }

    pub fn vertex_centroid(&self) -> Vector3<f64> {
        if self.vertices.is_empty() {
            return Vector3::zeros();
        }
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn aabb(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.vertices.first()?;
        let mut min = first;
        let mut max = first;
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Some((min, max))
    }

    pub fn bounding_diagonal(&self) -> f64 {
        self.aabb().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    /// The vertices as a point cloud (no normals).
    pub fn vertex_cloud(&self) -> PointCloud {
        PointCloud::new(self.vertices.clone())
    }

    /// Splits every triangle into four through its edge midpoints, `levels`
    /// times. New vertices lie on the original surface, so geometry is
    /// unchanged; face count grows by 4 per level.
    pub fn subdivided(&self, levels: usize) -> TriangleMesh {
        let mut mesh = self.clone();
        for _ in 0..levels {
            if mesh.faces.is_empty() {
                break;
            }
            mesh = mesh.subdivide_once();
        }
        mesh
    }

    fn subdivide_once(&self) -> TriangleMesh {
        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut faces = Vec::with_capacity(self.faces.len() * 4);

        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]) * 0.5;
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };

        for &[a, b, c] in &self.faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            faces.push([a, ab, ca]);
            faces.push([ab, b, bc]);
            faces.push([ca, bc, c]);
            faces.push([ab, bc, ca]);
        }

        TriangleMesh { vertices, faces }
    }

    /// Merges vertices that fall in the same axis-aligned grid cell of edge
    /// `cell_size`, dropping faces that become degenerate. Cells are anchored
    /// at the mesh AABB minimum; output vertex order follows first occurrence.
    pub fn cluster_decimated(
        &self,
        cell_size: f64,
        representative: ClusterRepresentative,
    ) -> Result<TriangleMesh, GeometryError> {
        if cell_size <= 0.0 {
            return Err(GeometryError::NonPositiveCellSize(cell_size));
        }
        let Some((min, _)) = self.aabb() else {
            return Ok(self.clone());
        };

        let cell_of = |v: &Vector3<f64>| -> (i64, i64, i64) {
            (
                ((v.x - min.x) / cell_size).floor() as i64,
                ((v.y - min.y) / cell_size).floor() as i64,
                ((v.z - min.z) / cell_size).floor() as i64,
            )
        };

        let mut cell_index: HashMap<(i64, i64, i64), u32> = HashMap::new();
        let mut vertex_remap = vec![0u32; self.vertices.len()];
        let mut cells: Vec<Vec<u32>> = Vec::new();
        for (vi, v) in self.vertices.iter().enumerate() {
            let cell = cell_of(v);
            let new_idx = *cell_index.entry(cell).or_insert_with(|| {
                cells.push(Vec::new());
                (cells.len() - 1) as u32
            });
            cells[new_idx as usize].push(vi as u32);
            vertex_remap[vi] = new_idx;
        }

        let mut vertices = Vec::with_capacity(cells.len());
        for members in &cells {
            let centroid = members
                .iter()
                .map(|&vi| self.vertices[vi as usize])
                .sum::<Vector3<f64>>()
                / members.len() as f64;
            let v = match representative {
                ClusterRepresentative::Centroid => centroid,
                ClusterRepresentative::QuadricMinimizer => {
                    self.quadric_minimizer(members, centroid)
                }
            };
            vertices.push(v);
        }

        let mut faces = Vec::new();
        for f in &self.faces {
            let g = [
                vertex_remap[f[0] as usize],
                vertex_remap[f[1] as usize],
                vertex_remap[f[2] as usize],
            ];
            if g[0] != g[1] && g[1] != g[2] && g[0] != g[2] {
                faces.push(g);
            }
        }

        Ok(TriangleMesh { vertices, faces })
    }

    /// Minimizes the summed plane quadrics of faces incident to the cell's
    /// vertices. Falls back to the centroid when the 3x3 system is singular
    /// or the minimizer leaves the cell neighborhood.
    fn quadric_minimizer(&self, members: &[u32], centroid: Vector3<f64>) -> Vector3<f64> {
        let member_set: std::collections::HashSet<u32> = members.iter().copied().collect();
        let mut a = Matrix3::<f64>::zeros();
        let mut b = Vector3::<f64>::zeros();
        let mut spread: f64 = 0.0;
        for (fi, f) in self.faces.iter().enumerate() {
            if !f.iter().any(|idx| member_set.contains(idx)) {
                continue;
            }
            let n = self.face_normal(fi);
            let p = self.face_vertices(fi)[0];
            let d = n.dot(&p);
            a += n * n.transpose();
            b += n * d;
        }
        for &vi in members {
            spread = spread.max((self.vertices[vi as usize] - centroid).norm());
        }
        match a.try_inverse() {
            Some(inv) if a.determinant().abs() > 1e-12 => {
                let x = inv * b;
                if (x - centroid).norm() <= spread.max(1e-9) * 4.0 {
                    x
                } else {
                    centroid
                }
            }
            _ => centroid,
        }
    }

    /// Draws `n` points uniformly over the surface (area-weighted), with
    /// interpolated face normals. Deterministic for a fixed RNG.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> PointCloud {
        if self.faces.is_empty() || n == 0 {
            return PointCloud::default();
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for fi in 0..self.faces.len() {
            let [a, b, c] = self.face_vertices(fi);
            total += 0.5 * (b - a).cross(&(c - a)).norm();
            cumulative.push(total);
        }
        if total <= 0.0 {
            return PointCloud::default();
        }

        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let target = rng.gen_range(0.0..total);
            let fi = cumulative.partition_point(|&acc| acc < target);
            let fi = fi.min(self.faces.len() - 1);
            let [a, b, c] = self.face_vertices(fi);
            let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            points.push(a + (b - a) * u + (c - a) * v);
            normals.push(self.face_normal(fi));
        }
        PointCloud::with_normals(points, normals).expect("face normals are unit length")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    /// 8 corners, 12 faces.
    pub(crate) fn unit_cube() -> TriangleMesh {
        let vertices = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
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

    #[test]
    fn subdivision_level_one_splits_triangle() {
        let mesh = single_triangle().subdivided(1);
        assert_eq!(mesh.faces().len(), 4);
        assert_eq!(mesh.vertices().len(), 6);
    }

    #[test]
    fn subdivision_level_zero_is_identity() {
        let mesh = unit_cube();
        let out = mesh.subdivided(0);
        assert_eq!(out.vertices().len(), mesh.vertices().len());
        assert_eq!(out.faces(), mesh.faces());
    }

    #[test]
    fn subdivision_face_count_grows_by_four_per_level() {
        assert_eq!(single_triangle().subdivided(2).faces().len(), 16);
        let cube = unit_cube();
        for levels in 0..3 {
            assert_eq!(
                cube.subdivided(levels).faces().len(),
                cube.faces().len() * 4usize.pow(levels as u32)
            );
        }
    }

    #[test]
    fn subdivision_of_empty_mesh_is_empty() {
        let mesh = TriangleMesh::default().subdivided(3);
        assert!(mesh.is_empty());
    }

    #[test]
    fn new_vertices_lie_on_old_faces() {
        let mesh = single_triangle();
        let sub = mesh.subdivided(1);
        // All subdivided vertices of a planar triangle stay in its plane.
        for v in sub.vertices() {
            assert!(v.z.abs() < 1e-15);
            assert!(v.x >= -1e-15 && v.y >= -1e-15 && v.x + v.y <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn huge_cell_collapses_everything() {
        let mesh = unit_cube();
        let out = mesh.cluster_decimated(10.0, ClusterRepresentative::Centroid).unwrap();
        assert_eq!(out.vertices().len(), 1);
        assert!(out.faces().is_empty());
    }

    #[test]
    fn tiny_cell_preserves_topology() {
        let mesh = unit_cube();
        let out = mesh.cluster_decimated(1e-4, ClusterRepresentative::Centroid).unwrap();
        assert_eq!(out.vertices().len(), mesh.vertices().len());
        assert_eq!(out.faces().len(), mesh.faces().len());
    }

    #[test]
    fn half_cell_reduces_cube_within_deviation() {
        // Oracle: brute-force cell assignment on the subdivided cube.
        let cell = 0.5;
        let mesh = unit_cube().subdivided(2);
        let out = mesh.cluster_decimated(cell, ClusterRepresentative::Centroid).unwrap();
        assert!(out.vertices().len() < mesh.vertices().len());

        let (min, _) = mesh.aabb().unwrap();
        let mut expected_cells = std::collections::HashSet::new();
        for v in mesh.vertices() {
            expected_cells.insert((
                ((v.x - min.x) / cell).floor() as i64,
                ((v.y - min.y) / cell).floor() as i64,
                ((v.z - min.z) / cell).floor() as i64,
            ));
        }
        assert_eq!(out.vertices().len(), expected_cells.len());

        // Every representative stays within a cell diagonal of the surface.
        let max_dev = cell * (3.0f64).sqrt();
        for v in out.vertices() {
            let nearest = mesh
                .vertices()
                .iter()
                .map(|u| (u - v).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < max_dev);
        }
    }

    #[test]
    fn subdivide_then_fine_decimate_preserves_original_vertices() {
        let mesh = unit_cube();
        let processed = mesh
            .subdivided(1)
            .cluster_decimated(1e-6, ClusterRepresentative::Centroid)
            .unwrap();
        for v in mesh.vertices() {
            let nearest = processed
                .vertices()
                .iter()
                .map(|u| (u - v).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-12);
        }
    }

    #[test]
    fn quadric_representative_stays_on_planar_patches() {
        let mesh = unit_cube().subdivided(1);
        let out = mesh
            .cluster_decimated(0.6, ClusterRepresentative::QuadricMinimizer)
            .unwrap();
        // Cube corners are intersections of three planes; the quadric
        // minimizer should stay within the unit cube neighborhood.
        for v in out.vertices() {
            assert!(v.x > -0.51 && v.x < 1.51);
            assert!(v.y > -0.51 && v.y < 1.51);
            assert!(v.z > -0.51 && v.z < 1.51);
        }
    }

    #[test]
    fn repeated_index_face_rejected() {
        let result = TriangleMesh::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::y()],
            vec![[0, 0, 1]],
        );
        assert!(matches!(result, Err(GeometryError::DegenerateFace { .. })));
    }

    #[test]
    fn out_of_range_face_rejected() {
        let result = TriangleMesh::new(vec![Vector3::zeros(), Vector3::x()], vec![[0, 1, 2]]);
        assert!(matches!(
            result,
            Err(GeometryError::FaceIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn surface_samples_lie_on_surface() {
        use rand::SeedableRng;
        let mesh = unit_cube();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cloud = mesh.sample_surface(200, &mut rng);
        assert_eq!(cloud.len(), 200);
        for p in cloud.points() {
            let on_boundary = [p.x, p.y, p.z]
                .iter()
                .any(|&c| c.abs() < 1e-12 || (c - 1.0).abs() < 1e-12);
            assert!(on_boundary, "sample {p:?} not on cube surface");
        }
    }
}
