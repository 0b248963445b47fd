//! Cyclic Jacobi eigen-decomposition for symmetric 3x3 matrices.

use nalgebra::{Matrix3, Vector3};

const MAX_SWEEPS: usize = 64;

/// Eigenvalues in ascending order with unit eigenvectors. Each eigenvector
/// is signed so that its largest-magnitude component is positive.
pub fn symmetric_eigen3(m: &Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let mut a = 0.5 * (m + m.transpose());
    let mut v = Matrix3::<f64>::identity();
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off = (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();
        if off <= 1e-17 * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
            let t = if tau == 0.0 { 1.0 } else { t };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;

            let mut rot = Matrix3::identity();
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
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.map(|i| a[(i, i)]);
    let vectors = order.map(|i| {
        let mut col: Vector3<f64> = v.column(i).into_owned().normalize();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        col
    });
    (values, vectors)
}
