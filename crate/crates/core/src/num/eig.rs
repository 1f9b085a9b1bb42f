//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use ndarray::Array2;

use super::NumError;

/// Eigenvalues in ascending order with matching orthonormal eigenvector
/// columns.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

const SYM_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Decomposes a symmetric matrix. Inputs asymmetric beyond `1e-10` are
/// rejected.
pub fn eig_symmetric(m: &Array2<f64>) -> Result<SymEig, NumError> {
    let (n, c) = m.dim();
    if n != c {
        return Err(NumError::Shape { op: "eig_symmetric", lhs: (n, c), rhs: (c, n) });
    }
    for i in 0..n {
        for j in i + 1..n {
            let diff = (m[[i, j]] - m[[j, i]]).abs();
            if diff > SYM_TOL || !diff.is_finite() {
                return Err(NumError::NotSymmetric { i, j, diff });
            }
        }
    }
    // Work on the symmetrized copy so both triangles agree exactly.
    let mut a: Vec<f64> = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m[[i, j]] + m[[j, i]]);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // A <- J^T A J with J the (p, q) rotation.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, c)| v[i * n + order[c]]);
    Ok(SymEig { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn residual(m: &Array2<f64>, e: &SymEig) -> f64 {
        let mv = m.dot(&e.vectors);
        let n = m.nrows();
        let mut worst: f64 = 0.0;
        for c in 0..n {
            for r in 0..n {
                worst = worst.max((mv[[r, c]] - e.values[c] * e.vectors[[r, c]]).abs());
            }
        }
        worst
    }

    #[test]
    fn identity_eigenvalues() {
        let e = eig_symmetric(&Array2::eye(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn swap_matrix() {
        let m = array![[0.0, 1.0], [1.0, 0.0]];
        let e = eig_symmetric(&m).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        assert!(residual(&m, &e) < 1e-12);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        let n = 12;
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let x = next();
                m[[i, j]] = x;
                m[[j, i]] = x;
            }
        }
        let e = eig_symmetric(&m).unwrap();
        assert!(residual(&m, &e) < 1e-10);
        let vtv = e.vectors.t().dot(&e.vectors);
        let eye = Array2::<f64>::eye(n);
        assert!(vtv.iter().zip(eye.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = array![[0.0, 1.0], [0.5, 0.0]];
        assert!(matches!(eig_symmetric(&m), Err(NumError::NotSymmetric { i: 0, j: 1, .. })));
    }
}
