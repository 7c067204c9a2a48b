//! Jacobi-preconditioned conjugate orthogonal conjugate gradients (COCG)
//! for complex symmetric systems.
//!
//! COCG is CG with the unconjugated bilinear form `x^T y` in place of the
//! inner product. It needs one matrix product per step and no restarts
//! while the recurrence stays healthy. The true residual is re-evaluated
//! whenever the recursive one claims convergence; a mismatch or a
//! quasi-null breakdown restarts the recurrence from the current iterate.

use rayon::prelude::*;

use crate::grid::C64;
use crate::linalg::{dotu, norm2};
use crate::operator::{DiscreteOperator, SolveReport};

const MAX_RESTARTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl SolveOptions {
    pub fn new(tol: f64, max_iterations: usize) -> Self {
        Self {
            tol,
            max_iterations,
        }
    }
}

fn residual(op: &DiscreteOperator, x: &[C64], b: &[C64], r: &mut [C64]) {
    op.apply_matrix(x, r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
}

pub(crate) fn cocg(op: &DiscreteOperator, b: &[C64], opts: SolveOptions) -> (Vec<C64>, SolveReport) {
    let len = b.len();
    let zero = C64::new(0.0, 0.0);
    let mut x = vec![zero; len];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        );
    }
    let inv_diag: Vec<C64> = op.diagonal().iter().map(|d| d.inv()).collect();

    let mut r = b.to_vec();
    let mut z = vec![zero; len];
    let mut p = vec![zero; len];
    let mut q = vec![zero; len];

    let mut best_x = x.clone();
    let mut best_res = 1.0;
    let mut iterations = 0usize;
    let mut restarts = 0usize;

    'outer: loop {
        // (re)start the recurrence from the current residual
        z.par_iter_mut()
            .zip(r.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(zi, (ri, di))| *zi = ri * di);
        p.copy_from_slice(&z);
        let mut rho = dotu(&r, &z);

        while iterations < opts.max_iterations {
            iterations += 1;
            op.apply_matrix(&p, &mut q);
            let pq = dotu(&p, &q);
            if pq.norm() == 0.0 || !pq.re.is_finite() || !pq.im.is_finite() || rho.norm() == 0.0 {
                break;
            }
            let alpha = rho / pq;
            x.par_iter_mut()
                .zip(p.par_iter())
                .for_each(|(xi, pi)| *xi += alpha * pi);
            r.par_iter_mut()
                .zip(q.par_iter())
                .for_each(|(ri, qi)| *ri -= alpha * qi);
            let rel = norm2(&r) / bnorm;
            if !rel.is_finite() {
                break;
            }
            if rel <= opts.tol {
                residual(op, &x, b, &mut r);
                let true_rel = norm2(&r) / bnorm;
                if true_rel <= opts.tol {
                    return (
                        x,
                        SolveReport {
                            iterations,
                            residual: true_rel,
                            converged: true,
                        },
                    );
                }
                if true_rel < best_res {
                    best_res = true_rel;
                    best_x.copy_from_slice(&x);
                }
                restarts += 1;
                if restarts > MAX_RESTARTS {
                    break 'outer;
                }
                continue 'outer;
            }
            if rel < 0.5 * best_res {
                best_res = rel;
                best_x.copy_from_slice(&x);
            }
            z.par_iter_mut()
                .zip(r.par_iter().zip(inv_diag.par_iter()))
                .for_each(|(zi, (ri, di))| *zi = ri * di);
            let rho_next = dotu(&r, &z);
            let beta = rho_next / rho;
            rho = rho_next;
            p.par_iter_mut()
                .zip(z.par_iter())
                .for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        if iterations >= opts.max_iterations {
            break;
        }
        // breakdown: rebuild the true residual and restart
        restarts += 1;
        if restarts > MAX_RESTARTS {
            break;
        }
        residual(op, &x, b, &mut r);
    }

    residual(op, &x, b, &mut r);
    let final_res = norm2(&r) / bnorm;
    let mut best_true = f64::INFINITY;
    if best_res < 1.0 {
        residual(op, &best_x, b, &mut r);
        best_true = norm2(&r) / bnorm;
    }
    let (x, res) = if best_true < final_res {
        (best_x, best_true)
    } else {
        (x, final_res)
    };
    (
        x,
        SolveReport {
            iterations,
            residual: res,
            converged: res <= opts.tol,
        },
    )
}
