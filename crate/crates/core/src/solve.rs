//! Preconditioned conjugate gradients for symmetric positive definite operators.

use crate::error::{Error, Result};

/// Outcome of a converged solve.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::quad::compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Solves `A x = b` with Jacobi preconditioning, stopping when `‖r‖ ≤ tol·‖b‖`.
pub fn conjugate_gradient<F>(
    apply: F,
    diag: &[f64],
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    context: &str,
) -> Result<CgSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter().zip(diag).map(|(ri, di)| if *di > 0.0 { ri / di } else { *ri }).collect()
    };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(CgSolution { x, iterations: it, relative_residual: res });
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NoConvergence {
                context: format!("{context}: operator not positive definite"),
                iterations: it,
                residual: res,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if it % 50 == 49 {
            // Refresh the recursive residual to limit drift.
            let ax = apply(&x);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
    }
    if res <= tol {
        return Ok(CgSolution { x, iterations: max_iter, relative_residual: res });
    }
    Err(Error::NoConvergence { context: context.to_string(), iterations: max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_tridiagonal_system() {
        let n = 50;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut v = 2.5 * x[i];
                    if i > 0 {
                        v -= x[i - 1];
                    }
                    if i + 1 < n {
                        v -= x[i + 1];
                    }
                    v
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let sol = conjugate_gradient(apply, &vec![2.5; n], &b, None, 1e-12, 500, "test").unwrap();
        let r = apply(&sol.x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn reports_iteration_limit() {
        let apply = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (1.0 + i as f64) * v).collect();
        let b = vec![1.0; 40];
        let err = conjugate_gradient(apply, &vec![1.0; 40], &b, None, 1e-14, 2, "limit").unwrap_err();
        assert!(err.is_convergence_failure());
    }
}
