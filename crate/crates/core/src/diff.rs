//! Finite-difference derivatives of node fields: central in the interior,
//! second-order one-sided on the boundary planes.

use crate::grid::{Domain, ScalarField, C64};

/// Three Cartesian components of a complex vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    domain: Domain,
    components: [Vec<C64>; 3],
}

impl VectorField {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn component(&self, axis: usize) -> &[C64] {
        &self.components[axis]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [C64; 3] {
        [
            self.components[0][idx],
            self.components[1][idx],
            self.components[2][idx],
        ]
    }

    /// Euclidean modulus `sqrt(sum |v_a|^2)` as a real-valued field.
    pub fn modulus(&self) -> ScalarField {
        let values = (0..self.domain.node_count())
            .map(|i| {
                let m = self.components.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt();
                C64::new(m, 0.0)
            })
            .collect();
        ScalarField::from_values(self.domain, values).expect("modulus of a finite field is finite")
    }
}

#[inline]
fn first_difference(values: &[C64], idx: usize, i: usize, n: usize, stride: usize, h: f64) -> C64 {
    if i == 0 {
        (values[idx] * -3.0 + values[idx + stride] * 4.0 - values[idx + 2 * stride]) / (2.0 * h)
    } else if i + 1 == n {
        (values[idx] * 3.0 - values[idx - stride] * 4.0 + values[idx - 2 * stride]) / (2.0 * h)
    } else {
        (values[idx + stride] - values[idx - stride]) / (2.0 * h)
    }
}

#[inline]
fn second_difference(values: &[C64], idx: usize, i: usize, n: usize, stride: usize, h: f64) -> C64 {
    let c = if i == 0 {
        idx + stride
    } else if i + 1 == n {
        idx - stride
    } else {
        idx
    };
    (values[c + stride] - values[c] * 2.0 + values[c - stride]) / (h * h)
}

fn strides(domain: &Domain) -> [usize; 3] {
    let n = domain.n();
    [1, n, n * n]
}

/// Derivative along one axis.
pub fn partial(field: &ScalarField, axis: usize) -> Vec<C64> {
    let d = *field.domain();
    let n = d.n();
    let stride = strides(&d)[axis];
    let h = d.h()[axis];
    let v = field.values();
    (0..d.node_count())
        .map(|idx| first_difference(v, idx, d.ijk(idx)[axis], n, stride, h))
        .collect()
}

pub fn gradient(field: &ScalarField) -> VectorField {
    VectorField {
        domain: *field.domain(),
        components: [partial(field, 0), partial(field, 1), partial(field, 2)],
    }
}

/// Frobenius norm of the discrete Hessian at every node.
pub fn hessian_modulus(field: &ScalarField) -> ScalarField {
    let d = *field.domain();
    let n = d.n();
    let st = strides(&d);
    let h = d.h();
    let v = field.values();
    let grads: Vec<ScalarField> = (0..3)
        .map(|a| ScalarField::from_values(d, partial(field, a)).expect("finite"))
        .collect();
    let values = (0..d.node_count())
        .map(|idx| {
            let ijk = d.ijk(idx);
            let mut acc = 0.0;
            for a in 0..3 {
                acc += second_difference(v, idx, ijk[a], n, st[a], h[a]).norm_sqr();
                for b in (a + 1)..3 {
                    let g = grads[a].values();
                    let mixed = first_difference(g, idx, ijk[b], n, st[b], h[b]);
                    acc += 2.0 * mixed.norm_sqr();
                }
            }
            C64::new(acc.sqrt(), 0.0)
        })
        .collect();
    ScalarField::from_values(d, values).expect("finite")
}

/// Central-difference divergence of a vector field that vanishes on the
/// boundary planes. This is minus the transpose of the interior central
/// gradient, so `sum_y V(y) . grad_h u(y) = -sum_y u(y) div_h V(y)`.
pub fn central_divergence(domain: &Domain, v: &[[C64; 3]]) -> Vec<C64> {
    let n = domain.n();
    let st = strides(domain);
    let h = domain.h();
    let zero = C64::new(0.0, 0.0);
    let mut out = vec![zero; domain.node_count()];
    for (idx, o) in out.iter_mut().enumerate() {
        let ijk = domain.ijk(idx);
        let mut acc = zero;
        for a in 0..3 {
            let plus = if ijk[a] + 1 < n { v[idx + st[a]][a] } else { zero };
            let minus = if ijk[a] > 0 { v[idx - st[a]][a] } else { zero };
            acc += (plus - minus) / (2.0 * h[a]);
        }
        *o = acc;
    }
    out
}
