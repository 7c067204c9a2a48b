//! Vector kernels with a reduction order that does not depend on the
//! number of worker threads.

use rayon::prelude::*;

use crate::grid::C64;

/// Reduction block length. Partial sums are formed per block and then
/// added sequentially, so results are bit-identical for any pool size.
const BLOCK: usize = 8192;

/// Unconjugated bilinear form `sum a_i b_i`.
pub fn dotu(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<C64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(x, y)| x.iter().zip(y).fold(C64::new(0.0, 0.0), |acc, (p, q)| acc + p * q))
        .collect();
    partials.into_iter().fold(C64::new(0.0, 0.0), |acc, v| acc + v)
}

/// Hermitian inner product `sum conj(a_i) b_i`.
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<C64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .fold(C64::new(0.0, 0.0), |acc, (p, q)| acc + p.conj() * q)
        })
        .collect();
    partials.into_iter().fold(C64::new(0.0, 0.0), |acc, v| acc + v)
}

pub fn norm2(a: &[C64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(BLOCK)
        .map(|x| x.iter().map(|v| v.norm_sqr()).sum::<f64>())
        .collect();
    partials.into_iter().sum::<f64>().sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    y.par_chunks_mut(BLOCK)
        .zip(x.par_chunks(BLOCK))
        .for_each(|(yc, xc)| {
            for (yi, xi) in yc.iter_mut().zip(xc) {
                *yi += alpha * xi;
            }
        });
}
