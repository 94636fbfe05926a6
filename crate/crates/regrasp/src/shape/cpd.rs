//! Coherent point drift: correspondence-free non-rigid registration of the
//! canonical point set onto an instance point set via Gaussian-mixture EM.
//!
//! Clouds are normalized to zero mean and unit scale internally and the
//! result denormalized, so `beta`/`lambda` are scale-free. The M-step system
//! is solved through a truncated eigendecomposition of the kernel matrix
//! (Woodbury identity), the usual low-rank variant.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;

use super::{DeformationField, ShapeError};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CpdParams {
    /// Gaussian kernel width of the motion-coherence prior, relative to the
    /// normalized cloud scale.
    pub beta: f64,
    /// Regularization weight of the deformation.
    pub lambda: f64,
    pub max_em_iterations: usize,
    /// EM stops when the relative change of the mixture variance drops
    /// below this.
    pub tolerance: f64,
    /// Uniform-outlier mixture weight in [0, 1).
    pub outlier_weight: f64,
    /// Rank of the kernel approximation (clamped to the point count).
    pub kernel_rank: usize,
}

impl Default for CpdParams {
    fn default() -> Self {
        Self {
            beta: 2.0,
            lambda: 3.0,
            max_em_iterations: 120,
            tolerance: 1e-8,
            outlier_weight: 0.1,
            kernel_rank: 64,
        }
    }
}

struct Normalization {
    mean: Vector3<f64>,
    scale: f64,
}

fn normalize(points: &[Vector3<f64>]) -> (DMatrix<f64>, Normalization) {
    let n = points.len();
    let mean = points.iter().sum::<Vector3<f64>>() / n as f64;
    let scale = (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    let mut m = DMatrix::zeros(n, 3);
    for (i, p) in points.iter().enumerate() {
        let q = (p - mean) / scale;
        m[(i, 0)] = q.x;
        m[(i, 1)] = q.y;
        m[(i, 2)] = q.z;
    }
    (m, Normalization { mean, scale })
}

/// Computes the dense displacement field that moves each canonical point onto
/// the instance cloud. The clouds may have different sizes.
pub fn cpd_nonrigid(
    canonical: &PointCloud,
    instance: &PointCloud,
    params: &CpdParams,
) -> Result<DeformationField, ShapeError> {
    if canonical.is_empty() || instance.is_empty() {
        return Err(ShapeError::EmptyCloud);
    }
    let m = canonical.len();
    let n = instance.len();
    let (y, _norm_y) = normalize(canonical.points());
    let (x, norm_x) = normalize(instance.points());

    // Kernel matrix over the normalized canonical points, then its truncated
    // eigendecomposition for the Woodbury solve.
    let beta2 = 2.0 * params.beta * params.beta;
    let mut g = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let d2 = (y.row(i) - y.row(j)).norm_squared();
            let v = (-d2 / beta2).exp();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let rank = params.kernel_rank.clamp(1, m);
    let eig = nalgebra::SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut q = DMatrix::<f64>::zeros(m, rank);
    let mut lam = DVector::<f64>::zeros(rank);
    for (c, &i) in order.iter().take(rank).enumerate() {
        q.column_mut(c).copy_from(&eig.eigenvectors.column(i));
        lam[c] = eig.eigenvalues[i].max(1e-12);
    }

    // Initial mixture variance: mean squared distance between the clouds.
    let mut sigma2 = {
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..n {
                acc += (y.row(i) - x.row(j)).norm_squared();
            }
        }
        acc / (3.0 * m as f64 * n as f64)
    };

    let w_out = params.outlier_weight.clamp(0.0, 0.999);
    let mut t = y.clone();
    let mut coeff = DMatrix::<f64>::zeros(m, 3); // W in the usual notation

    for iter in 0..params.max_em_iterations {
        let sigma2_prev = sigma2;

        // E-step: responsibilities P (m x n), with the uniform outlier term
        // folded into the denominator.
        let c_out = (2.0 * std::f64::consts::PI * sigma2).powf(1.5) * w_out / (1.0 - w_out)
            * m as f64
            / n as f64;
        let mut p = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let mut denom = c_out;
            for i in 0..m {
                let d2 = (t.row(i) - x.row(j)).norm_squared();
                let v = (-d2 / (2.0 * sigma2)).exp();
                p[(i, j)] = v;
                denom += v;
            }
            if denom <= 0.0 || !denom.is_finite() {
                return Err(ShapeError::NonFinite(iter));
            }
            for i in 0..m {
                p[(i, j)] /= denom;
            }
        }

        let p1 = p.column_sum(); // m
        let pt1 = p.row_sum().transpose(); // n
        let np = p1.sum();
        if np <= 1e-12 {
            return Err(ShapeError::NonFinite(iter));
        }
        let px = &p * &x; // m x 3

        // M-step: (diag(P1) G + λσ² I) W = PX − diag(P1) Y, solved with
        // G ≈ Q Λ Qᵀ via the Woodbury identity.
        let c = params.lambda * sigma2;
        let mut rhs = px.clone();
        for i in 0..m {
            for d in 0..3 {
                rhs[(i, d)] -= p1[i] * y[(i, d)];
            }
        }
        // U = diag(P1) Q Λ ; VU = Qᵀ diag(P1) Q Λ.
        let mut dq = q.clone();
        for i in 0..m {
            for r in 0..rank {
                dq[(i, r)] *= p1[i];
            }
        }
        let mut u = dq.clone();
        for r in 0..rank {
            for i in 0..m {
                u[(i, r)] *= lam[r];
            }
        }
        let vu = q.transpose() * &u; // rank x rank
        let small = DMatrix::<f64>::identity(rank, rank) * c + vu;
        let v_rhs = q.transpose() * &rhs; // rank x 3
        let solved = small
            .lu()
            .solve(&v_rhs)
            .ok_or(ShapeError::NonFinite(iter))?;
        coeff = (rhs - &u * solved) / c;

        t = &y + &g * &coeff;

        // Variance update.
        let mut xx = 0.0;
        for j in 0..n {
            xx += pt1[j] * x.row(j).norm_squared();
        }
        let mut tt = 0.0;
        for i in 0..m {
            tt += p1[i] * t.row(i).norm_squared();
        }
        let cross = (px.transpose() * &t).trace();
        sigma2 = ((xx - 2.0 * cross + tt) / (3.0 * np)).max(1e-12);
        if !sigma2.is_finite() {
            return Err(ShapeError::NonFinite(iter));
        }

        if (sigma2_prev - sigma2).abs() < params.tolerance * sigma2_prev.max(1e-12) {
            break;
        }
    }

    if coeff.iter().any(|v| !v.is_finite()) {
        return Err(ShapeError::NonFinite(params.max_em_iterations));
    }

    // Denormalize with the instance parameters and express as displacements
    // of the original canonical points.
    let mut displacements = Vec::with_capacity(m);
    for (i, p) in canonical.points().iter().enumerate() {
        let moved = Vector3::new(t[(i, 0)], t[(i, 1)], t[(i, 2)]) * norm_x.scale + norm_x.mean;
        displacements.push(moved - p);
    }
    Ok(DeformationField::new(displacements))
}
