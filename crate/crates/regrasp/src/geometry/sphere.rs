use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// Smallest enclosing sphere of a point set, `(center, radius)`.
///
/// Uses Welzl's move-to-front algorithm, which is exact (well inside the
/// 1.01x approximation budget callers are allowed to assume). Points are
/// shuffled with a fixed-seed LCG so the recursion depth stays small and the
/// result is deterministic.
pub fn bounding_sphere(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, f64), GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut state = 0x9e3779b97f4a7c15u64;
    for i in (1..order.len()).rev() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let j = (state >> 33) as usize % (i + 1);
        order.swap(i, j);
    }

    let mut support: Vec<Vector3<f64>> = Vec::with_capacity(4);
    let (center, r2) = welzl(points, &order, points.len(), &mut support);
    Ok((center, r2.max(0.0).sqrt()))
}

fn welzl(
    points: &[Vector3<f64>],
    order: &[usize],
    n: usize,
    support: &mut Vec<Vector3<f64>>,
) -> (Vector3<f64>, f64) {
    if n == 0 || support.len() == 4 {
        return sphere_of_support(support);
    }
    let p = points[order[n - 1]];
    let (center, r2) = welzl(points, order, n - 1, support);
    if (p - center).norm_squared() <= r2 * (1.0 + 1e-12) + 1e-24 {
        return (center, r2);
    }
    support.push(p);
    let result = welzl(points, order, n - 1, support);
    support.pop();
    result
}

fn sphere_of_support(support: &[Vector3<f64>]) -> (Vector3<f64>, f64) {
    match support.len() {
        0 => (Vector3::zeros(), 0.0),
        1 => (support[0], 0.0),
        2 => {
            let center = (support[0] + support[1]) * 0.5;
            (center, (support[0] - center).norm_squared())
        }
        3 => circumsphere_3(support[0], support[1], support[2]),
        _ => circumsphere_4(support[0], support[1], support[2], support[3]),
    }
}

/// Smallest sphere through three points: the circumcircle of the triangle,
/// embedded in its plane. Falls back to the best two-point sphere when the
/// points are nearly collinear.
fn circumsphere_3(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> (Vector3<f64>, f64) {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let denom = 2.0 * n.norm_squared();
    if denom < 1e-18 {
        // Collinear: the farthest pair defines the sphere.
        let pairs = [(a, b), (a, c), (b, c)];
        return pairs
            .iter()
            .map(|(p, q)| {
                let center = (p + q) * 0.5;
                (center, (p - center).norm_squared())
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        }
    let rel = (ac.norm_squared() * n.cross(&ab) + ab.norm_squared() * ac.cross(&n)) / denom;
    let center = a + rel;
    (center, rel.norm_squared())
}

/// Circumsphere of four points, falling back to the three-point case when
/// they are nearly coplanar.
fn circumsphere_4(
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
    d: Vector3<f64>,
) -> (Vector3<f64>, f64) {
    let m = Matrix3::from_rows(&[(b - a).transpose(), (c - a).transpose(), (d - a).transpose()]);
    let rhs = Vector3::new(
        (b - a).norm_squared() * 0.5,
        (c - a).norm_squared() * 0.5,
        (d - a).norm_squared() * 0.5,
    );
    if m.determinant().abs() < 1e-18 {
        let candidates = [
            circumsphere_3(a, b, c),
            circumsphere_3(a, b, d),
            circumsphere_3(a, c, d),
            circumsphere_3(b, c, d),
        ];
        return candidates
            .into_iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
    }
    let rel = m.try_inverse().expect("checked determinant") * rhs;
    (a + rel, rel.norm_squared())
}
