//! Finite-volume discretisation of `L u = div(gamma grad u) - i k u` on the
//! node-centred box grid, with zero conormal flux on the boundary.
//!
//! The stored matrix `M` is the dual-cell integrated form of `-L` divided by
//! `h^3`:
//!
//! ```text
//! (M u)_i = sum_j c_ij (u_i - u_j) + w_i (a_i + i s k) u_i
//! ```
//!
//! where `c_ij` is the face conductance (face mean of gamma, times the
//! tangential dual-face area fraction, over `h^2`), `w_i` the dual-cell
//! weight, `a_i` an optional real zeroth-order coefficient and `s = +1`
//! (`s = -1` for the adjoint `L* = div(gamma grad) + i k`). `M` is complex
//! symmetric. No flux crosses a boundary face, and half cells on the
//! boundary planes make the boundary rows consistent with the mirrored
//! ghost-node scheme.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{validate_ellipticity, CoefficientField, Domain, ScalarField, C64};
use crate::solver::{cocg, SolveOptions};

/// Default lower bound on the shift `k`.
pub const K_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceMean {
    #[default]
    Harmonic,
    Arithmetic,
}

impl FaceMean {
    #[inline]
    fn of(self, a: f64, b: f64) -> f64 {
        match self {
            FaceMean::Harmonic => 2.0 * a * b / (a + b),
            FaceMean::Arithmetic => 0.5 * (a + b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleOptions {
    pub face_mean: FaceMean,
    pub adjoint: bool,
    pub k_floor: f64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            face_mean: FaceMean::Harmonic,
            adjoint: false,
            k_floor: K_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative 2-norm of the final residual.
    pub residual: f64,
    pub converged: bool,
}

/// Assembled operator; immutable after construction.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    domain: Domain,
    k: f64,
    adjoint: bool,
    face_mean: FaceMean,
    gamma: Arc<CoefficientField>,
    /// `faces[a][idx]`: conductance between `idx` and its `+a` neighbour.
    faces: [Vec<f64>; 3],
    /// Sum of the conductances around each node.
    gamma_diag: Vec<f64>,
    weight: Vec<f64>,
    absorption: Option<Vec<f64>>,
    diag: Vec<C64>,
}

pub fn assemble(gamma: &CoefficientField, k: f64) -> Result<DiscreteOperator> {
    DiscreteOperator::assemble_with(Arc::new(gamma.clone()), k, AssembleOptions::default())
}

impl DiscreteOperator {
    pub fn assemble_with(
        gamma: Arc<CoefficientField>,
        k: f64,
        opts: AssembleOptions,
    ) -> Result<Self> {
        if !(k.is_finite() && k >= opts.k_floor) {
            return Err(Error::ShiftBelowFloor {
                k,
                floor: opts.k_floor,
            });
        }
        let ell = validate_ellipticity(gamma.values());
        if !ell.ok {
            return Err(Error::InvalidCoefficient(format!(
                "coefficient fails the ellipticity check (nu_effective = {:.3e})",
                ell.nu_effective
            )));
        }
        let domain = *gamma.domain();
        let n = domain.n();
        let h = domain.h();
        let len = domain.node_count();
        let g = gamma.values();
        let mut faces = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        let mut gamma_diag = vec![0.0; len];
        let stride = [1, n, n * n];
        for idx in 0..len {
            let ijk = domain.ijk(idx);
            for a in 0..3 {
                if ijk[a] + 1 == n {
                    continue;
                }
                let nb = idx + stride[a];
                // tangential dual-face area fraction; identical for both endpoints
                let mut tau = 1.0;
                for b in 0..3 {
                    if b != a {
                        tau *= domain.axis_weight(ijk[b]);
                    }
                }
                let c = tau * opts.face_mean.of(g[idx], g[nb]) / (h[a] * h[a]);
                faces[a][idx] = c;
                gamma_diag[idx] += c;
                gamma_diag[nb] += c;
            }
        }
        let weight: Vec<f64> = (0..len).map(|i| domain.cell_weight(i)).collect();
        let mut op = Self {
            domain,
            k,
            adjoint: opts.adjoint,
            face_mean: opts.face_mean,
            gamma,
            faces,
            gamma_diag,
            weight,
            absorption: None,
            diag: Vec::new(),
        };
        op.rebuild_diag();
        Ok(op)
    }

    fn rebuild_diag(&mut self) {
        let s = if self.adjoint { -1.0 } else { 1.0 };
        self.diag = (0..self.domain.node_count())
            .map(|i| {
                let a = self.absorption.as_ref().map_or(0.0, |v| v[i]);
                C64::new(self.gamma_diag[i] + self.weight[i] * a, self.weight[i] * s * self.k)
            })
            .collect();
    }

    /// Adds a real zeroth-order term: `L u = div(gamma grad u) - (i k + a) u`.
    pub fn with_absorption(mut self, a: Vec<f64>) -> Result<Self> {
        if a.len() != self.domain.node_count() {
            return Err(Error::DomainMismatch(format!(
                "absorption has {} values for {} nodes",
                a.len(),
                self.domain.node_count()
            )));
        }
        if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "absorption must be finite and non-negative".into(),
            ));
        }
        self.absorption = Some(a);
        self.rebuild_diag();
        Ok(self)
    }

    /// The operator of `L* = div(gamma grad) + i k` (or back again).
    pub fn adjoint(&self) -> Self {
        let mut out = self.clone();
        out.adjoint = !self.adjoint;
        out.rebuild_diag();
        out
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn is_adjoint(&self) -> bool {
        self.adjoint
    }

    pub fn face_mean(&self) -> FaceMean {
        self.face_mean
    }

    pub fn gamma(&self) -> &Arc<CoefficientField> {
        &self.gamma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn diagonal(&self) -> &[C64] {
        &self.diag
    }

    pub fn absorption(&self) -> Option<&[f64]> {
        self.absorption.as_deref()
    }

    /// `y = M x`.
    pub fn apply_matrix(&self, x: &[C64], y: &mut [C64]) {
        let n = self.domain.n();
        let plane = n * n;
        let [fx, fy, fz] = &self.faces;
        let diag = &self.diag;
        y.par_chunks_mut(plane).enumerate().for_each(|(kk, yp)| {
            for jj in 0..n {
                let row = kk * plane + jj * n;
                for ii in 0..n {
                    let idx = row + ii;
                    let mut acc = diag[idx] * x[idx];
                    if ii > 0 {
                        acc -= x[idx - 1] * fx[idx - 1];
                    }
                    if ii + 1 < n {
                        acc -= x[idx + 1] * fx[idx];
                    }
                    if jj > 0 {
                        acc -= x[idx - n] * fy[idx - n];
                    }
                    if jj + 1 < n {
                        acc -= x[idx + n] * fy[idx];
                    }
                    if kk > 0 {
                        acc -= x[idx - plane] * fz[idx - plane];
                    }
                    if kk + 1 < n {
                        acc -= x[idx + plane] * fz[idx];
                    }
                    yp[jj * n + ii] = acc;
                }
            }
        });
    }

    /// Pointwise discrete `L u` (per unit volume).
    pub fn apply(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check_domain(u.domain())?;
        let mut y = vec![C64::new(0.0, 0.0); self.domain.node_count()];
        self.apply_matrix(u.values(), &mut y);
        for (v, w) in y.iter_mut().zip(&self.weight) {
            *v = -*v / *w;
        }
        ScalarField::from_values(self.domain, y)
    }

    /// Pointwise discrete `div(gamma grad u)`, i.e. `L u` without the zeroth-order part.
    pub fn apply_divergence_part(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check_domain(u.domain())?;
        let x = u.values();
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        let n = self.domain.n();
        let stride = [1, n, n * n];
        for a in 0..3 {
            for (idx, &c) in self.faces[a].iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let nb = idx + stride[a];
                let flux = (x[nb] - x[idx]) * c;
                out[idx] += flux;
                out[nb] -= flux;
            }
        }
        for (v, w) in out.iter_mut().zip(&self.weight) {
            *v /= *w;
        }
        ScalarField::from_values(self.domain, out)
    }

    fn check_domain(&self, other: &Domain) -> Result<()> {
        if self.domain.same_grid(other) {
            Ok(())
        } else {
            Err(Error::DomainMismatch(
                "field and operator live on different grids".into(),
            ))
        }
    }

    /// Solves `-L u = f` for the density `f`.
    pub fn solve(&self, rhs: &ScalarField, tol: f64) -> Result<(ScalarField, SolveReport)> {
        self.solve_with(rhs, SolveOptions::new(tol, self.default_max_iterations()))
    }

    pub fn default_max_iterations(&self) -> usize {
        20 * self.domain.node_count()
    }

    pub fn solve_with(
        &self,
        rhs: &ScalarField,
        opts: SolveOptions,
    ) -> Result<(ScalarField, SolveReport)> {
        self.check_domain(rhs.domain())?;
        if !rhs.is_finite() {
            return Err(Error::InvalidArgument("right-hand side is not finite".into()));
        }
        let b: Vec<C64> = rhs
            .values()
            .iter()
            .zip(&self.weight)
            .map(|(f, w)| f * *w)
            .collect();
        let (x, report) = self.solve_system(&b, opts)?;
        Ok((ScalarField::from_values(self.domain, x)?, report))
    }

    /// Solves `M x = b` for an already integrated right-hand side.
    pub fn solve_system(&self, b: &[C64], opts: SolveOptions) -> Result<(Vec<C64>, SolveReport)> {
        if !(opts.tol > 1e-14 && opts.tol < 1e-2) {
            return Err(Error::InvalidTolerance(opts.tol));
        }
        if b.len() != self.domain.node_count() {
            return Err(Error::DomainMismatch(format!(
                "right-hand side has {} entries for {} nodes",
                b.len(),
                self.domain.node_count()
            )));
        }
        Ok(cocg(self, b, opts))
    }

    /// Independent solves for each right-hand side; columns may run in parallel.
    pub fn solve_batch(
        &self,
        rhs_list: &[ScalarField],
        tol: f64,
    ) -> Result<Vec<(ScalarField, SolveReport)>> {
        rhs_list.par_iter().map(|rhs| self.solve(rhs, tol)).collect()
    }

    /// Writes the nonzeros of `M` as `row col re im` lines.
    pub fn dump_matrix(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.domain.n();
        let stride = [1, n, n * n];
        writeln!(out, "% rows={} nnz_per_row<=7 k={} adjoint={}", self.domain.node_count(), self.k, self.adjoint)?;
        for idx in 0..self.domain.node_count() {
            let ijk = self.domain.ijk(idx);
            let mut entries: Vec<(usize, C64)> = Vec::with_capacity(7);
            for a in (0..3).rev() {
                if ijk[a] > 0 {
                    let nb = idx - stride[a];
                    entries.push((nb, C64::new(-self.faces[a][nb], 0.0)));
                }
            }
            entries.push((idx, self.diag[idx]));
            for a in 0..3 {
                if ijk[a] + 1 < n {
                    entries.push((idx + stride[a], C64::new(-self.faces[a][idx], 0.0)));
                }
            }
            for (col, v) in entries {
                writeln!(out, "{} {} {:.17e} {:.17e}", idx, col, v.re, v.im)?;
            }
        }
        Ok(())
    }

    /// Integrated boundary source for a flux `gamma du/dn = g` that is constant
    /// on each face, ordered `[x-, x+, y-, y+, z-, z+]`.
    pub fn boundary_flux_rhs(&self, g: [f64; 6]) -> Vec<C64> {
        boundary_flux_rhs(&self.domain, g)
    }
}

pub fn boundary_flux_rhs(domain: &Domain, g: [f64; 6]) -> Vec<C64> {
    let n = domain.n();
    let h = domain.h();
    (0..domain.node_count())
        .map(|idx| {
            let ijk = domain.ijk(idx);
            let mut acc = 0.0;
            for a in 0..3 {
                let on_lo = ijk[a] == 0;
                let on_hi = ijk[a] + 1 == n;
                if !(on_lo || on_hi) {
                    continue;
                }
                let mut tau = 1.0;
                for b in 0..3 {
                    if b != a {
                        tau *= domain.axis_weight(ijk[b]);
                    }
                }
                if on_lo {
                    acc += g[2 * a] * tau / h[a];
                }
                if on_hi {
                    acc += g[2 * a + 1] * tau / h[a];
                }
            }
            C64::new(acc, 0.0)
        })
        .collect()
}

/// Grid-refinement study on `cos(pi x) cos(pi y) cos(pi z)` over the unit cube
/// with `gamma = 1`, which has zero normal derivative on every face.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderStudy {
    pub ns: Vec<usize>,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log2(e_i / e_{i+1})` for each consecutive pair.
    pub pairwise: Vec<f64>,
    /// Least-squares slope of `log e` against `log h`.
    pub order: f64,
}

impl OrderStudy {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "n [nodes per axis],h [length],linf_error [1]")?;
        for ((n, h), e) in self.ns.iter().zip(&self.h).zip(&self.errors) {
            writeln!(out, "{n},{h:.17e},{e:.17e}")?;
        }
        Ok(())
    }
}

pub fn manufactured_cosine_study(ns: &[usize], k: f64, tol: f64) -> Result<OrderStudy> {
    use std::f64::consts::PI;
    if ns.len() < 2 || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("need at least two increasing grid sizes".into()));
    }
    let mut h = Vec::with_capacity(ns.len());
    let mut errors = Vec::with_capacity(ns.len());
    for &n in ns {
        let d = Domain::unit_cube(n)?;
        let gamma = crate::grid::generate_coefficient(&d, &crate::grid::CoefficientSpec::constant(1.0))?;
        let op = DiscreteOperator::assemble_with(Arc::new(gamma), k, AssembleOptions::default())?;
        let exact = ScalarField::from_real_fn(d, |x| (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos());
        let rhs = exact.scale(C64::new(3.0 * PI * PI, k));
        let (u, report) = op.solve(&rhs, tol)?;
        if !report.converged {
            return Err(Error::NonConvergence(report));
        }
        h.push(d.h_max());
        errors.push(u.sub(&exact)?.max_abs());
    }
    let pairwise = errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, hh)| (e[0] / e[1]).ln() / (hh[0] / hh[1]).ln())
        .collect();
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(OrderStudy {
        ns: ns.to_vec(),
        h,
        errors,
        pairwise,
        order: sxy / sxx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_coefficient, CoefficientSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn op_for(spec: &CoefficientSpec, n: usize, k: f64) -> DiscreteOperator {
        let d = Domain::unit_cube(n).unwrap();
        let g = generate_coefficient(&d, spec).unwrap();
        assemble(&g, k).unwrap()
    }

    fn bump() -> CoefficientSpec {
        CoefficientSpec::HoelderBump {
            gamma0: 1.0,
            a: 0.5,
            center: None,
            lambda: 0.5,
        }
    }

    #[test]
    fn constants_map_to_minus_ik() {
        for spec in [CoefficientSpec::constant(1.0), bump()] {
            let op = op_for(&spec, 9, 1.0);
            let one = ScalarField::from_real_fn(*op.domain(), |_| 1.0);
            let l1 = op.apply(&one).unwrap();
            for v in l1.values() {
                assert!(v.re.abs() < 1e-12, "gamma part must annihilate constants");
                assert_relative_eq!(v.im, -1.0, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn row_sums_of_gamma_part_vanish() {
        let op = op_for(&bump(), 11, 1.0);
        let mut buf = Vec::new();
        op.dump_matrix(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut sums = vec![0.0f64; op.domain().node_count()];
        for line in text.lines().skip(1) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let row: usize = parts[0].parse().unwrap();
            let re: f64 = parts[2].parse().unwrap();
            sums[row] += re;
        }
        let scale = op.gamma_diag.iter().cloned().fold(0.0, f64::max);
        for s in sums {
            assert!(s.abs() <= 1e-12 * scale, "row sum {s}");
        }
    }

    #[test]
    fn matrix_is_symmetric_in_dump() {
        let op = op_for(&bump(), 9, 2.0);
        let mut buf = Vec::new();
        op.dump_matrix(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut map = std::collections::HashMap::new();
        for line in text.lines().skip(1) {
            let p: Vec<&str> = line.split_whitespace().collect();
            let key = (p[0].parse::<usize>().unwrap(), p[1].parse::<usize>().unwrap());
            map.insert(key, (p[2].to_string(), p[3].to_string()));
        }
        for ((r, c), v) in &map {
            assert_eq!(map.get(&(*c, *r)), Some(v));
        }
        let per_row = map.len() as f64 / op.domain().node_count() as f64;
        assert!(per_row <= 7.0);
    }

    #[test]
    fn manufactured_cosine_converges_at_second_order() {
        let s = manufactured_cosine_study(&[9, 17, 33], 1.0, 1e-12).unwrap();
        assert!(s.order > 1.8 && s.order < 2.2, "{s:?}");
        assert!(s.errors.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn manufactured_cosine_consistency() {
        let op = op_for(&CoefficientSpec::constant(1.0), 9, 1.0);
        let u = ScalarField::from_real_fn(*op.domain(), |x| {
            (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos()
        });
        let lu = op.apply(&u).unwrap();
        let factor = C64::new(-3.0 * PI * PI, -1.0);
        let h2 = op.domain().h()[0].powi(2);
        for (a, b) in lu.values().iter().zip(u.values()) {
            // second-order truncation: |err| <= 3 * pi^4 h^2 / 12 per unit amplitude
            assert!((a - factor * b).norm() <= 3.0 * PI.powi(4) * h2 / 12.0 + 1e-9);
        }
    }

    #[test]
    fn rejects_small_shift_and_mismatched_grids() {
        let d = Domain::unit_cube(9).unwrap();
        let g = generate_coefficient(&d, &CoefficientSpec::constant(1.0)).unwrap();
        assert!(matches!(assemble(&g, 1e-7), Err(Error::ShiftBelowFloor { .. })));
        assert!(assemble(&g, -1.0).is_err());
        let op = assemble(&g, 1.0).unwrap();
        let other = ScalarField::zeros(Domain::unit_cube(11).unwrap());
        assert!(matches!(op.apply(&other), Err(Error::DomainMismatch(_))));
        assert!(matches!(op.solve(&other, 1e-8), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn solve_round_trip_and_zero_rhs() {
        let op = op_for(&bump(), 13, 1.0);
        let u = ScalarField::from_fn(*op.domain(), |x| C64::new(x[0] * x[1], (x[2] * 3.0).sin()));
        let rhs = op.apply(&u).unwrap().scale(C64::new(-1.0, 0.0));
        let (sol, rep) = op.solve(&rhs, 1e-12).unwrap();
        assert!(rep.converged && rep.residual <= 1e-12);
        let err = sol.sub(&u).unwrap().max_abs();
        assert!(err < 1e-8, "round-trip error {err}");

        let zero = ScalarField::zeros(*op.domain());
        let (z, rep) = op.solve(&zero, 1e-10).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn tolerance_bounds() {
        let op = op_for(&CoefficientSpec::constant(1.0), 9, 1.0);
        let rhs = ScalarField::from_real_fn(*op.domain(), |x| x[0]);
        assert!(matches!(op.solve(&rhs, 1e-15), Err(Error::InvalidTolerance(_))));
        assert!(matches!(op.solve(&rhs, 0.1), Err(Error::InvalidTolerance(_))));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let op = op_for(&CoefficientSpec::constant(1.0), 17, 1.0);
        let rhs = ScalarField::from_real_fn(*op.domain(), |x| (7.0 * x[0]).sin() + x[1]);
        let (sol, rep) = op.solve_with(&rhs, SolveOptions::new(1e-12, 3)).unwrap();
        assert!(!rep.converged);
        assert!(rep.residual > 1e-12);
        assert!(sol.is_finite());
    }

    #[test]
    fn solves_are_deterministic_and_batch_matches() {
        let op = op_for(&bump(), 13, 0.5);
        let rhs = ScalarField::from_real_fn(*op.domain(), |x| (x[0] - 0.5).exp() * x[2]);
        let (a, _) = op.solve(&rhs, 1e-10).unwrap();
        let (b, _) = op.solve(&rhs, 1e-10).unwrap();
        assert_eq!(a, b);
        let batch = op.solve_batch(&[rhs.clone(), rhs.clone()], 1e-10).unwrap();
        assert_eq!(batch[0].0, a);
        assert_eq!(batch[1].0, a);
        let single = op.solve_batch(std::slice::from_ref(&rhs), 1e-10).unwrap();
        assert_eq!(single[0].0, a);
    }

    #[test]
    fn adjoint_is_an_involution_and_conjugates() {
        let op = op_for(&bump(), 11, 2.0);
        let adj = op.adjoint();
        assert!(adj.is_adjoint());
        assert_eq!(adj.adjoint().diagonal(), op.diagonal());
        for (a, b) in adj.diagonal().iter().zip(op.diagonal()) {
            assert_eq!(*a, b.conj());
        }
    }

    #[test]
    fn flux_balance_of_boundary_source() {
        let op = op_for(&CoefficientSpec::constant(1.0 / 30.0), 17, 1.0);
        let b = op.boundary_flux_rhs([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // the face x = 0 has area 1
        let total: f64 = b.iter().map(|v| v.re).sum::<f64>() * op.domain().cell_volume();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        let (u, rep) = op.solve_system(&b, SolveOptions::new(1e-12, 100_000)).unwrap();
        assert!(rep.converged);
        let field = ScalarField::from_values(*op.domain(), u).unwrap();
        let lhs = field.integral() * C64::new(0.0, 1.0);
        assert!((lhs - C64::new(1.0, 0.0)).norm() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn bilinear_symmetry(seed in 0u64..1000, k in 0.01f64..10.0) {
            let op = op_for(&bump(), 9, k);
            let len = op.domain().node_count();
            let gen = |s: u64| -> Vec<C64> {
                (0..len).map(|i| {
                    let t = (i as f64 + 1.0) * (s as f64 + 0.5);
                    C64::new((t * 0.731).sin(), (t * 1.379).cos())
                }).collect()
            };
            let x = gen(seed);
            let y = gen(seed + 17);
            let mut ax = vec![C64::new(0.0, 0.0); len];
            let mut ay = vec![C64::new(0.0, 0.0); len];
            op.apply_matrix(&x, &mut ax);
            op.apply_matrix(&y, &mut ay);
            let l = crate::linalg::dotu(&x, &ay);
            let r = crate::linalg::dotu(&y, &ax);
            prop_assert!((l - r).norm() <= 1e-12 * l.norm().max(1.0));
            // Hermitian part of the gamma form is non-negative
            let q = crate::linalg::dotc(&x, &ax);
            let shift: f64 = x.iter().zip(op.weights()).map(|(v, w)| w * v.norm_sqr()).sum::<f64>() * k;
            prop_assert!(q.re >= -1e-9 * q.norm());
            prop_assert!((q.im - shift).abs() <= 1e-9 * q.norm().max(1.0));
        }
    }
}
