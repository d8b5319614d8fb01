//! Cyclic Jacobi eigen-decomposition for symmetric 3x3 matrices.

use crate::{Mat3, Vec3};

/// Eigenvalues (descending) and matching unit eigenvectors as columns.
///
/// Signs are left as produced by the rotation sequence; callers fix them.
pub(crate) fn symmetric_eigen(m: &Mat3) -> (Vec3, Mat3) {
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = Mat3::identity();
    let scale = a.abs().max();
    if scale == 0.0 {
        return (Vec3::zeros(), v);
    }
    for _sweep in 0..64 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off <= (f64::EPSILON * scale).powi(2) * 1e-4 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Mat3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = Vec3::new(a[(order[0], order[0])], a[(order[1], order[1])], a[(order[2], order[2])]);
    let vectors = Mat3::from_columns(&[v.column(order[0]), v.column(order[1]), v.column(order[2])]);
    (values, vectors)
}
