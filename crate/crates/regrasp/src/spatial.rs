//! Internal spatial acceleration structures: a bounding-volume hierarchy over
//! mesh triangles for nearest-surface queries and a uniform hash grid for
//! nearest-vertex queries.

use nalgebra::Vector3;

use crate::geometry::TriangleMesh;

/// Closest point on triangle `(a, b, c)` to `p` (Ericson, Real-Time
/// Collision Detection, 5.1.5).
pub(crate) fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    fn dist2(&self, p: &Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = p[i].clamp(self.min[i], self.max[i]) - p[i];
            d2 += v * v;
        }
        d2
    }

    fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }
}

enum BvhNode {
    Leaf {
        bounds: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Result of a nearest-surface query.
pub(crate) struct SurfaceHit {
    pub point: Vector3<f64>,
    pub face: usize,
    pub dist2: f64,
}

/// Median-split BVH over the triangles of a fixed mesh.
pub(crate) struct MeshIndex {
    mesh: TriangleMesh,
    nodes: Vec<BvhNode>,
    face_order: Vec<u32>,
    root: usize,
}

const LEAF_SIZE: usize = 4;

impl MeshIndex {
    pub fn build(mesh: &TriangleMesh) -> Option<Self> {
        if mesh.faces().is_empty() {
            return None;
        }
        let face_bounds: Vec<Aabb> = (0..mesh.faces().len())
            .map(|fi| {
                let mut b = Aabb::empty();
                for v in mesh.face_vertices(fi) {
                    b.grow(&v);
                }
                b
            })
            .collect();
        let mut face_order: Vec<u32> = (0..mesh.faces().len() as u32).collect();
        let mut nodes = Vec::new();
        let n = face_order.len();
        let root = Self::build_node(&face_bounds, &mut face_order, 0, n, &mut nodes);
        Some(Self {
            mesh: mesh.clone(),
            nodes,
            face_order,
            root,
        })
    }

    fn build_node(
        face_bounds: &[Aabb],
        order: &mut [u32],
        start: usize,
        count: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> usize {
        let mut bounds = Aabb::empty();
        for &fi in &order[start..start + count] {
            bounds.merge(&face_bounds[fi as usize]);
        }
        if count <= LEAF_SIZE {
            nodes.push(BvhNode::Leaf {
                bounds,
                start,
                count,
            });
            return nodes.len() - 1;
        }
        // Split on the widest axis at the median centroid.
        let extent = bounds.max - bounds.min;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let slice = &mut order[start..start + count];
        let mid = count / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            face_bounds[a as usize].center()[axis].total_cmp(&face_bounds[b as usize].center()[axis])
        });
        let left = Self::build_node(face_bounds, order, start, mid, nodes);
        let right = Self::build_node(face_bounds, order, start + mid, count - mid, nodes);
        nodes.push(BvhNode::Inner {
            bounds,
            left,
            right,
        });
        nodes.len() - 1
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Nearest point on the mesh surface, best-first BVH descent.
    pub fn closest_point(&self, p: &Vector3<f64>) -> SurfaceHit {
        let mut best = SurfaceHit {
            point: Vector3::zeros(),
            face: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.search(self.root, p, &mut best);
        best
    }

    fn search(&self, node: usize, p: &Vector3<f64>, best: &mut SurfaceHit) {
        match &self.nodes[node] {
            BvhNode::Leaf { start, count, .. } => {
                for &fi in &self.face_order[*start..*start + *count] {
                    let [a, b, c] = self.mesh.face_vertices(fi as usize);
                    let q = closest_point_on_triangle(p, &a, &b, &c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.dist2 {
                        *best = SurfaceHit {
                            point: q,
                            face: fi as usize,
                            dist2: d2,
                        };
                    }
                }
            }
            BvhNode::Inner { left, right, .. } => {
                let dl = self.nodes[*left].bounds().dist2(p);
                let dr = self.nodes[*right].bounds().dist2(p);
                let (first, second, dfirst, dsecond) = if dl <= dr {
                    (*left, *right, dl, dr)
                } else {
                    (*right, *left, dr, dl)
                };
                if dfirst < best.dist2 {
                    self.search(first, p, best);
                }
                if dsecond < best.dist2 {
                    self.search(second, p, best);
                }
            }
        }
    }
}

/// Uniform hash grid for nearest-vertex queries over a point set that changes
/// every iteration (rebuilt cheaply).
pub(crate) struct PointGrid {
    cell: f64,
    origin: Vector3<f64>,
    dims: [i64; 3],
    buckets: Vec<Vec<u32>>,
    points: Vec<Vector3<f64>>,
}

impl PointGrid {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        assert!(!points.is_empty());
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let diag = (max - min).norm().max(1e-9);
        // Aim for a handful of points per cell.
        let cell = (diag / (points.len() as f64).cbrt().max(1.0)).max(1e-9);
        let dims = [
            (((max.x - min.x) / cell).floor() as i64 + 1).max(1),
            (((max.y - min.y) / cell).floor() as i64 + 1).max(1),
            (((max.z - min.z) / cell).floor() as i64 + 1).max(1),
        ];
        let mut buckets = vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize];
        let grid = |p: &Vector3<f64>| -> [i64; 3] {
            [
                (((p.x - min.x) / cell).floor() as i64).clamp(0, dims[0] - 1),
                (((p.y - min.y) / cell).floor() as i64).clamp(0, dims[1] - 1),
                (((p.z - min.z) / cell).floor() as i64).clamp(0, dims[2] - 1),
            ]
        };
        for (i, p) in points.iter().enumerate() {
            let g = grid(p);
            let idx = (g[0] + dims[0] * (g[1] + dims[1] * g[2])) as usize;
            buckets[idx].push(i as u32);
        }
        Self {
            cell,
            origin: min,
            dims,
            buckets,
            points: points.to_vec(),
        }
    }

    /// Index and squared distance of the nearest stored point.
    pub fn nearest(&self, p: &Vector3<f64>) -> (usize, f64) {
        let gx = (((p.x - self.origin.x) / self.cell).floor() as i64).clamp(0, self.dims[0] - 1);
        let gy = (((p.y - self.origin.y) / self.cell).floor() as i64).clamp(0, self.dims[1] - 1);
        let gz = (((p.z - self.origin.z) / self.cell).floor() as i64).clamp(0, self.dims[2] - 1);

        let mut best = (usize::MAX, f64::INFINITY);
        // Expand rings until the found distance beats the ring's lower bound.
        let max_ring = self.dims.iter().max().copied().unwrap_or(1);
        for ring in 0..=max_ring {
            // Any point in a farther ring is at least (ring-1) cells away.
            if best.1.is_finite() {
                let bound = (ring as f64 - 1.0).max(0.0) * self.cell;
                if bound * bound > best.1 {
                    break;
                }
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (x, y, z) = (gx + dx, gy + dy, gz + dz);
                        if x < 0 || y < 0 || z < 0 || x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
                            continue;
                        }
                        let idx = (x + self.dims[0] * (y + self.dims[1] * z)) as usize;
                        for &pi in &self.buckets[idx] {
                            let d2 = (self.points[pi as usize] - p).norm_squared();
                            if d2 < best.1 {
                                best = (pi as usize, d2);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}
