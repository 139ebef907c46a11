use super::sparse::CsrMatrix;
use crate::par;

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b - A x‖ / ‖b‖` at exit.
    pub relative_residual: f64,
    /// False when `max_iters` was reached above `tol`; `x` is still the last iterate.
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// semidefinite systems, started from zero.
///
/// From a zero start the iterates stay in the range of the (preconditioned)
/// operator, so components along a nullspace are never introduced.
pub fn cg_solve(matrix: &CsrMatrix, rhs: &[f64], tol: f64, max_iters: usize) -> CgSolution {
    assert_eq!(matrix.nrows(), rhs.len());
    assert!(tol > 0.0, "tolerance must be positive");
    let n = rhs.len();
    let inv_diag: Vec<f64> = matrix
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let b_norm = par::dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return CgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = par::dot(&r, &z);
    let mut rel = 1.0;

    for it in 1..=max_iters {
        let ap = matrix.mul_vec(&p);
        let pap = par::dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // search direction fell into the nullspace
            return CgSolution {
                x,
                iterations: it - 1,
                relative_residual: rel,
                converged: rel <= tol,
            };
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rel = par::dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            return CgSolution {
                x,
                iterations: it,
                relative_residual: rel,
                converged: true,
            };
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_next = par::dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    CgSolution {
        x,
        iterations: max_iters,
        relative_residual: rel,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_system_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.5];
        let sol = cg_solve(&CsrMatrix::identity(3), &b, 1e-12, 10);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.x, b);
        assert!(sol.converged);
    }

    #[test]
    fn two_by_two() {
        let m = CsrMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let sol = cg_solve(&m, &[1.0, 2.0], 1e-12, 10);
        // Cramer's rule: det = 11, x = (3*1 - 1*2)/11, y = (4*2 - 1*1)/11
        assert!((sol.x[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((sol.x[1] - 7.0 / 11.0).abs() < 1e-10);
    }

    #[test]
    fn random_spd_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        let g: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        // A = Gᵀ G + n I is SPD
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| g[k][i] * g[k][j]).sum::<f64>() + if i == j { n as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = a.iter().map(|row| row.iter().zip(&x_true).map(|(p, q)| p * q).sum()).collect();
        let tol = 1e-10;
        let sol = cg_solve(&CsrMatrix::from_dense(&a), &b, tol, 200);
        assert!(sol.converged);
        let err = sol.x.iter().zip(&x_true).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let norm = x_true.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-8);
    }

    #[test]
    fn semidefinite_consistent_system() {
        // [[1, -1], [-1, 1]] has nullspace (1, 1); rhs in the range
        let m = CsrMatrix::from_dense(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let sol = cg_solve(&m, &[2.0, -2.0], 1e-12, 10);
        assert!(sol.converged);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let m = CsrMatrix::from_dense(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 9.0]]);
        let sol = cg_solve(&m, &[1.0, 2.0, 3.0], 1e-14, 1);
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
    }
}
