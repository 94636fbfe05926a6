use nalgebra::Vector3;

use super::{GeometryError, RigidTransform};

/// An unordered set of 3D points in meters, with optional unit normals.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    /// Builds a cloud with per-point normals. Normals must be unit length
    /// within 1e-6 and match the point count.
    pub fn with_normals(
        points: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self, GeometryError> {
        if normals.len() != points.len() {
            return Err(GeometryError::NormalCountMismatch {
                normals: normals.len(),
                points: points.len(),
            });
        }
        for n in &normals {
            let norm = n.norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(GeometryError::NotUnitLength {
                    context: "point cloud normal",
                    norm,
                });
            }
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies a rigid transform: points get `R·p + t`, normals are rotated
    /// only.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotate(n)).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }

    /// Keeps at most `max_points` points, taking a deterministic evenly
    /// strided subset. Normals follow their points.
    pub fn decimated(&self, max_points: usize) -> PointCloud {
        if max_points == 0 || self.points.len() <= max_points {
            return self.clone();
        }
        let stride = self.points.len() as f64 / max_points as f64;
        let indices: Vec<usize> = (0..max_points).map(|i| (i as f64 * stride) as usize).collect();
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }
}
