//! Complex LSQR (Paige & Saunders) with a warm start.

use nalgebra::{DMatrix, DVector};

use crate::basis::C64;

#[derive(Debug, Clone)]
pub struct LsqrResult {
    pub x: DVector<C64>,
    /// `‖b − A x‖₂`, recomputed from the returned iterate.
    pub residual: f64,
    pub iterations: usize,
    /// Stopped on the iteration cap rather than a tolerance test.
    pub hit_cap: bool,
}

/// Least-squares solve of `A x ≈ b` starting from `x0`.
///
/// Stops when `‖r‖ ≤ tol·‖b‖` or `‖Aᴴr‖ ≤ tol·‖A‖_F·‖r‖`.
pub fn lsqr(a: &DMatrix<C64>, b: &DVector<C64>, x0: &DVector<C64>, tol: f64, max_iter: usize) -> LsqrResult {
    let zero = C64::new(0.0, 0.0);
    let mut x = x0.clone();
    let bnorm = b.norm();
    let anorm = a.norm();
    let mut u = b - a * &x;
    let mut beta = u.norm();
    let finish = |x: DVector<C64>, iterations: usize, hit_cap: bool| {
        let residual = (b - a * &x).norm();
        LsqrResult { x, residual, iterations, hit_cap }
    };
    if beta <= tol * bnorm || beta == 0.0 {
        return finish(x, 0, false);
    }
    u /= C64::new(beta, 0.0);
    let mut v = a.adjoint() * &u;
    let mut alpha = v.norm();
    if alpha == 0.0 {
        return finish(x, 0, false);
    }
    v /= C64::new(alpha, 0.0);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    for it in 1..=max_iter {
        u = a * &v - &u * C64::new(alpha, 0.0);
        beta = u.norm();
        if beta > 0.0 {
            u /= C64::new(beta, 0.0);
            v = a.adjoint() * &u - &v * C64::new(beta, 0.0);
            alpha = v.norm();
            if alpha > 0.0 {
                v /= C64::new(alpha, 0.0);
            }
        } else {
            alpha = 0.0;
        }
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        x += &w * C64::new(phi / rho, 0.0);
        if alpha > 0.0 {
            w = &v - &w * C64::new(theta / rho, 0.0);
        } else {
            w.fill(zero);
        }
        let arnorm = phibar * alpha * c.abs();
        if phibar <= tol * bnorm || arnorm <= tol * anorm * phibar || alpha == 0.0 || beta == 0.0 {
            return finish(x, it, false);
        }
    }
    finish(x, max_iter, true)
}
