//! Averaged Neumann functions `N^eps(., y)`: discrete solutions of
//! `-L v = Phi_eps` with a unit-mass bump source and zero conormal flux,
//! together with frozen-coefficient comparators, adjoint columns, the
//! reciprocity check and the representation formula.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Domain, ScalarField, C64};
use crate::operator::{AssembleOptions, DiscreteOperator, SolveReport};

/// Default mollification radius in units of the largest grid spacing.
pub const DEFAULT_EPS_CELLS: f64 = 3.0;

/// Smallest admissible mollification radius in grid spacings.
pub const MIN_EPS_CELLS: f64 = 2.0;

/// Radial bump `exp(-1 / (1 - s^2))` of support radius `radius` around `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Mollifier {
    #[inline]
    pub fn profile(s: f64) -> f64 {
        if s >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - s * s)).exp()
        }
    }

    pub fn default_radius(domain: &Domain) -> f64 {
        DEFAULT_EPS_CELLS * domain.h_max()
    }

    /// Nodes in the support together with the unnormalised profile values.
    fn support(&self, domain: &Domain) -> Vec<(usize, f64)> {
        let h = domain.h();
        let n = domain.n() as isize;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            lo[a] = (((self.center[a] - self.radius) / h[a]).floor().max(0.0)) as usize;
            hi[a] = ((((self.center[a] + self.radius) / h[a]).ceil()) as isize).min(n - 1) as usize;
        }
        let mut out = Vec::new();
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let x = domain.coord_of([i, j, k]);
                    let s = Domain::distance(x, self.center) / self.radius;
                    let v = Self::profile(s);
                    if v > 0.0 {
                        out.push((domain.index(i, j, k), v));
                    }
                }
            }
        }
        out
    }

    fn validate(&self, domain: &Domain) -> Result<()> {
        let h = domain.h_max();
        if !(self.radius.is_finite() && self.radius >= MIN_EPS_CELLS * h * (1.0 - 1e-12)) {
            return Err(Error::InvalidSource(format!(
                "mollification radius {:.4e} is below {MIN_EPS_CELLS} h = {:.4e}",
                self.radius,
                MIN_EPS_CELLS * h
            )));
        }
        if domain.dist_to_boundary(self.center) <= self.radius {
            return Err(Error::InvalidSource(format!(
                "support of radius {:.4e} around {:?} touches the boundary",
                self.radius, self.center
            )));
        }
        Ok(())
    }

    /// Nonnegative real field with unit discrete mass, supported in the ball.
    pub fn field(&self, domain: &Domain) -> Result<ScalarField> {
        self.validate(domain)?;
        let support = self.support(domain);
        let mass: f64 = support
            .iter()
            .map(|&(idx, v)| v * domain.cell_weight(idx))
            .sum::<f64>()
            * domain.cell_volume();
        if mass <= 0.0 {
            return Err(Error::InvalidSource("empty mollifier support".into()));
        }
        let mut values = vec![C64::new(0.0, 0.0); domain.node_count()];
        for (idx, v) in support {
            values[idx] = C64::new(v / mass, 0.0);
        }
        ScalarField::from_values(*domain, values)
    }

    /// `sum_x Phi_eps(x) u(x) h^3`: the mollified reading of `u` at the centre.
    pub fn average(&self, u: &ScalarField) -> Result<C64> {
        let phi = self.field(u.domain())?;
        let d = u.domain();
        let vol = d.cell_volume();
        Ok(phi
            .values()
            .iter()
            .zip(u.values())
            .enumerate()
            .filter(|(_, (p, _))| p.re != 0.0)
            .map(|(idx, (p, v))| p * v * d.cell_weight(idx) * vol)
            .sum())
    }
}

pub fn mollified_source(domain: &Domain, y: [f64; 3], eps_mol: f64) -> Result<ScalarField> {
    Mollifier {
        center: y,
        radius: eps_mol,
    }
    .field(domain)
}

/// One column `N^eps(., y)` (or `N*^eps(., y)` when `adjoint`).
#[derive(Debug, Clone)]
pub struct NeumannColumn {
    pub field: ScalarField,
    pub y: [f64; 3],
    pub k: f64,
    pub eps_mol: f64,
    pub gamma: Arc<CoefficientField>,
    pub report: SolveReport,
    pub adjoint: bool,
    /// Distance from `y` to the boundary.
    pub d_y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnSidecar {
    pub y: [f64; 3],
    pub k: f64,
    pub eps_mol: f64,
    pub residual: f64,
    pub iterations: usize,
    pub adjoint: bool,
    pub gamma_spec: Option<crate::grid::CoefficientSpec>,
}

impl NeumannColumn {
    pub fn domain(&self) -> &Domain {
        self.field.domain()
    }

    /// Nearest-node value `N(x, y)`.
    pub fn at(&self, x: [f64; 3]) -> C64 {
        self.field.at_point(x)
    }

    pub fn sidecar(&self) -> ColumnSidecar {
        ColumnSidecar {
            y: self.y,
            k: self.k,
            eps_mol: self.eps_mol,
            residual: self.report.residual,
            iterations: self.report.iterations,
            adjoint: self.adjoint,
            gamma_spec: self.gamma.spec().cloned(),
        }
    }

    /// Writes the field as `<stem>.bin` with the sidecar metadata in `<stem>.json`.
    pub fn save(&self, stem: &std::path::Path) -> Result<()> {
        crate::io::save_field(&self.field, stem, serde_json::to_value(self.sidecar())?)
    }

    fn same_configuration(&self, other: &NeumannColumn) -> bool {
        self.domain().same_grid(other.domain())
            && self.k == other.k
            && self.eps_mol == other.eps_mol
            && self.gamma.values() == other.gamma.values()
    }
}

/// Builds columns that share one assembled operator.
#[derive(Debug, Clone)]
pub struct ColumnFactory {
    op: DiscreteOperator,
    tol: f64,
}

impl ColumnFactory {
    pub fn new(gamma: Arc<CoefficientField>, k: f64, tol: f64) -> Result<Self> {
        Self::with_options(gamma, k, tol, AssembleOptions::default())
    }

    pub fn with_options(
        gamma: Arc<CoefficientField>,
        k: f64,
        tol: f64,
        opts: AssembleOptions,
    ) -> Result<Self> {
        Ok(Self {
            op: DiscreteOperator::assemble_with(gamma, k, opts)?,
            tol,
        })
    }

    pub fn from_operator(op: DiscreteOperator, tol: f64) -> Self {
        Self { op, tol }
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn adjoint(&self) -> Self {
        Self {
            op: self.op.adjoint(),
            tol: self.tol,
        }
    }

    pub fn column(&self, y: [f64; 3], eps_mol: f64) -> Result<NeumannColumn> {
        let domain = *self.op.domain();
        let d_y = domain.dist_to_boundary(y);
        if d_y <= 2.0 * eps_mol {
            return Err(Error::InvalidSource(format!(
                "source {y:?} is {d_y:.4} from the boundary; need more than 2 eps_mol = {:.4}",
                2.0 * eps_mol
            )));
        }
        let src = mollified_source(&domain, y, eps_mol)?;
        let (field, report) = self.op.solve(&src, self.tol)?;
        if !report.converged {
            return Err(Error::NonConvergence(report));
        }
        Ok(NeumannColumn {
            field,
            y,
            k: self.op.k(),
            eps_mol,
            gamma: self.op.gamma().clone(),
            report,
            adjoint: self.op.is_adjoint(),
            d_y,
        })
    }

    /// Columns for several sources; solved as one batch.
    pub fn columns(&self, ys: &[[f64; 3]], eps_mol: f64) -> Result<Vec<NeumannColumn>> {
        use rayon::prelude::*;
        ys.par_iter().map(|&y| self.column(y, eps_mol)).collect()
    }

    /// Column for a unit mass concentrated on the node nearest `x`; the
    /// result records `eps_mol = 0`.
    pub fn node_column(&self, x: [f64; 3]) -> Result<NeumannColumn> {
        let domain = *self.op.domain();
        let node = domain.nearest_node(x);
        if domain.is_boundary_node(node) {
            return Err(Error::InvalidSource("node sources must be interior".into()));
        }
        let mut b = vec![C64::new(0.0, 0.0); domain.node_count()];
        b[node] = C64::new(1.0 / domain.cell_volume(), 0.0);
        let opts = crate::solver::SolveOptions::new(self.tol, self.op.default_max_iterations());
        let (x, report) = self.op.solve_system(&b, opts)?;
        if !report.converged {
            return Err(Error::NonConvergence(report));
        }
        let y = domain.coord(node);
        Ok(NeumannColumn {
            field: ScalarField::from_values(domain, x)?,
            y,
            k: self.op.k(),
            eps_mol: 0.0,
            gamma: self.op.gamma().clone(),
            report,
            adjoint: self.op.is_adjoint(),
            d_y: domain.dist_to_boundary(y),
        })
    }
}

pub fn neumann_column(
    gamma: &Arc<CoefficientField>,
    k: f64,
    y: [f64; 3],
    eps_mol: f64,
    tol: f64,
) -> Result<NeumannColumn> {
    ColumnFactory::new(gamma.clone(), k, tol)?.column(y, eps_mol)
}

/// Column of `L_0 = gamma(y) Laplacian - i k`, with `gamma(y)` read at the node nearest `y`.
pub fn constant_coeff_column(
    gamma: &Arc<CoefficientField>,
    k: f64,
    y: [f64; 3],
    eps_mol: f64,
    tol: f64,
) -> Result<NeumannColumn> {
    let frozen = Arc::new(gamma.frozen_at(y));
    ColumnFactory::new(frozen, k, tol)?.column(y, eps_mol)
}

/// Column of the adjoint `L* = div(gamma grad) + i k` sourced at `x`.
pub fn adjoint_column(
    gamma: &Arc<CoefficientField>,
    k: f64,
    x: [f64; 3],
    eps_mol: f64,
    tol: f64,
) -> Result<NeumannColumn> {
    let opts = AssembleOptions {
        adjoint: true,
        ..AssembleOptions::default()
    };
    ColumnFactory::with_options(gamma.clone(), k, tol, opts)?.column(x, eps_mol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reciprocity {
    /// `|N(x,y) - conj(N*(y,x))| / |N(x,y)|` with both values read as
    /// mollified averages around the opposite source.
    pub averaged: f64,
    /// Same with nearest-node readings.
    pub nearest: f64,
}

/// Compares `N(x, y)` from `col_n` (sourced at `y`) with `conj(N*(y, x))`
/// from `col_star` (sourced at `x`).
pub fn check_reciprocity(col_n: &NeumannColumn, col_star: &NeumannColumn) -> Result<Reciprocity> {
    if col_n.adjoint || !col_star.adjoint {
        return Err(Error::InvalidArgument(
            "expected a primal column and an adjoint column".into(),
        ));
    }
    if !col_n.same_configuration(col_star) {
        return Err(Error::InvalidArgument(
            "columns differ in grid, coefficient, shift or mollifier".into(),
        ));
    }
    let x = col_star.y;
    let y = col_n.y;
    let r = Domain::distance(x, y);
    if r <= 2.0 * col_n.eps_mol {
        return Err(Error::InvalidArgument(format!(
            "|x - y| = {r:.4} must exceed 2 eps_mol = {:.4}",
            2.0 * col_n.eps_mol
        )));
    }
    let n_near = col_n.at(x);
    let s_near = col_star.at(y).conj();
    let mx = Mollifier {
        center: x,
        radius: col_n.eps_mol,
    };
    let my = Mollifier {
        center: y,
        radius: col_n.eps_mol,
    };
    let n_avg = mx.average(&col_n.field)?;
    let s_avg = my.average(&col_star.field)?.conj();
    Ok(Reciprocity {
        averaged: (n_avg - s_avg).norm() / n_avg.norm(),
        nearest: (n_near - s_near).norm() / n_near.norm(),
    })
}

/// `u(x) = sum_y N(x, y) f(y) h^3` over the support of `f`, using one primal
/// column per support node (matched by nearest node of the column source).
pub fn representation_solution(f: &ScalarField, columns: &[NeumannColumn]) -> Result<ScalarField> {
    let d = *f.domain();
    let vol = d.cell_volume();
    let mut by_node = std::collections::HashMap::new();
    for c in columns {
        if !c.domain().same_grid(&d) {
            return Err(Error::DomainMismatch("column grid differs from f".into()));
        }
        if c.adjoint {
            return Err(Error::InvalidArgument(
                "representation_solution expects primal columns".into(),
            ));
        }
        by_node.insert(d.nearest_node(c.y), c);
    }
    let mut out = vec![C64::new(0.0, 0.0); d.node_count()];
    for (idx, fv) in f.values().iter().enumerate() {
        if *fv == C64::new(0.0, 0.0) {
            continue;
        }
        if d.is_boundary_node(idx) {
            return Err(Error::InvalidArgument(
                "f must be supported away from the boundary".into(),
            ));
        }
        let col = by_node.get(&idx).ok_or_else(|| {
            Error::Coverage(format!("no column sourced at support node {:?}", d.ijk(idx)))
        })?;
        let w = fv * vol;
        for (o, n) in out.iter_mut().zip(col.field.values()) {
            *o += n * w;
        }
    }
    ScalarField::from_values(d, out)
}

/// Representation formula at the sources of adjoint columns, using
/// `N(x, y) = conj(N*(y, x))`. Node columns reproduce a direct solve at
/// their nodes; mollified columns return the mollified reading.
pub fn representation_at_points(
    f: &ScalarField,
    adjoint_columns: &[NeumannColumn],
) -> Result<Vec<([f64; 3], C64)>> {
    let d = *f.domain();
    let vol = d.cell_volume();
    adjoint_columns
        .iter()
        .map(|c| {
            if !c.adjoint {
                return Err(Error::InvalidArgument("expected adjoint columns".into()));
            }
            if !c.domain().same_grid(&d) {
                return Err(Error::DomainMismatch("column grid differs from f".into()));
            }
            let u: C64 = f
                .values()
                .iter()
                .zip(c.field.values())
                .enumerate()
                .map(|(i, (fv, nstar))| fv * nstar.conj() * d.cell_weight(i))
                .sum::<C64>()
                * vol;
            Ok((c.y, u))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_coefficient, CoefficientSpec};

    fn gamma(spec: CoefficientSpec, n: usize) -> Arc<CoefficientField> {
        let d = Domain::unit_cube(n).unwrap();
        Arc::new(generate_coefficient(&d, &spec).unwrap())
    }

    #[test]
    fn mollifier_has_unit_mass_and_compact_support() {
        let d = Domain::unit_cube(33).unwrap();
        let y = [0.5, 0.47, 0.52];
        let eps = 3.0 * d.h_max();
        let phi = mollified_source(&d, y, eps).unwrap();
        assert!((phi.integral().re - 1.0).abs() < 1e-13);
        for idx in 0..d.node_count() {
            let v = phi.at(idx);
            assert!(v.re >= 0.0 && v.im == 0.0);
            if Domain::distance(d.coord(idx), y) >= eps {
                assert_eq!(v.re, 0.0);
            }
        }
    }

    #[test]
    fn halving_the_radius_sharpens_the_peak() {
        let d = Domain::unit_cube(65).unwrap();
        let y = d.center();
        let h = d.h_max();
        let wide = mollified_source(&d, y, 8.0 * h).unwrap().max_abs();
        let narrow = mollified_source(&d, y, 4.0 * h).unwrap().max_abs();
        assert!(narrow >= 4.0 * wide, "{narrow} vs {wide}");
    }

    #[test]
    fn mollifier_rejects_bad_radius_or_position() {
        let d = Domain::unit_cube(33).unwrap();
        let h = d.h_max();
        assert!(mollified_source(&d, d.center(), 1.5 * h).is_err());
        assert!(mollified_source(&d, [0.05, 0.5, 0.5], 3.0 * h).is_err());
        assert!(mollified_source(&d, d.center(), 2.0 * h).is_ok());
    }

    #[test]
    fn columns_are_deterministic() {
        let g = gamma(CoefficientSpec::constant(1.0), 17);
        let eps = 3.0 * g.domain().h_max();
        let a = neumann_column(&g, 1.0, [0.5; 3], eps, 1e-10).unwrap();
        let b = neumann_column(&g, 1.0, [0.5; 3], eps, 1e-10).unwrap();
        assert_eq!(a.field, b.field);
    }

    #[test]
    fn frozen_column_equals_column_for_constant_gamma() {
        let g = gamma(CoefficientSpec::constant(0.7), 17);
        let eps = 3.0 * g.domain().h_max();
        let a = neumann_column(&g, 1.0, [0.5; 3], eps, 1e-10).unwrap();
        let b = constant_coeff_column(&g, 1.0, [0.5; 3], eps, 1e-10).unwrap();
        assert_eq!(a.field, b.field);
        let bump = gamma(
            CoefficientSpec::HoelderBump {
                gamma0: 1.0,
                a: 0.5,
                center: Some([0.2, 0.2, 0.2]),
                lambda: 0.5,
            },
            17,
        );
        let c = constant_coeff_column(&bump, 1.0, [0.5; 3], eps, 1e-10).unwrap();
        let node = bump.domain().nearest_node([0.5; 3]);
        assert!(c.gamma.values().iter().all(|&v| v == bump.at(node)));
    }

    #[test]
    fn adjoint_column_is_conjugate_for_real_gamma() {
        let g = gamma(
            CoefficientSpec::HoelderBump {
                gamma0: 1.0,
                a: 0.5,
                center: None,
                lambda: 0.5,
            },
            17,
        );
        let eps = 3.0 * g.domain().h_max();
        let y = [0.45, 0.5, 0.55];
        let n = neumann_column(&g, 2.0, y, eps, 1e-12).unwrap();
        let s = adjoint_column(&g, 2.0, y, eps, 1e-12).unwrap();
        let diff = n.field.sub(&s.field.conj()).unwrap().max_abs();
        assert!(diff <= 1e-9 * n.field.max_abs(), "{diff}");
        assert!(s.adjoint);
    }

    #[test]
    fn reciprocity_rejects_coincident_points() {
        let g = gamma(CoefficientSpec::constant(1.0), 17);
        let eps = 3.0 * g.domain().h_max();
        let n = neumann_column(&g, 1.0, [0.5; 3], eps, 1e-10).unwrap();
        let s = adjoint_column(&g, 1.0, [0.5; 3], eps, 1e-10).unwrap();
        assert!(check_reciprocity(&n, &s).is_err());
        assert!(check_reciprocity(&s, &n).is_err());
    }

    #[test]
    fn reciprocity_holds_to_solver_tolerance() {
        let g = gamma(
            CoefficientSpec::HoelderBump {
                gamma0: 1.0,
                a: 0.5,
                center: Some([0.4, 0.5, 0.5]),
                lambda: 0.5,
            },
            17,
        );
        let eps = 2.0 * g.domain().h_max();
        let y = [0.375, 0.5, 0.5];
        let x = [0.625, 0.5625, 0.5];
        let n = neumann_column(&g, 1.0, y, eps, 1e-11).unwrap();
        let s = adjoint_column(&g, 1.0, x, eps, 1e-11).unwrap();
        let r = check_reciprocity(&n, &s).unwrap();
        assert!(r.averaged < 1e-8, "{r:?}");
        assert!(r.nearest < 5e-2, "{r:?}");
    }

    #[test]
    fn representation_of_zero_and_linearity() {
        let g = gamma(CoefficientSpec::constant(1.0), 17);
        let d = *g.domain();
        let eps = 2.0 * d.h_max();
        let factory = ColumnFactory::new(g.clone(), 1.0, 1e-10).unwrap();
        let nodes = [d.index(8, 8, 8), d.index(9, 8, 8)];
        let ys: Vec<[f64; 3]> = nodes.iter().map(|&i| d.coord(i)).collect();
        let cols = factory.columns(&ys, eps).unwrap();
        let zero = ScalarField::zeros(d);
        assert_eq!(representation_solution(&zero, &cols).unwrap().max_abs(), 0.0);

        let mut f1 = ScalarField::zeros(d);
        f1.values_mut()[nodes[0]] = C64::new(1.0, 0.5);
        let mut f2 = ScalarField::zeros(d);
        f2.values_mut()[nodes[1]] = C64::new(-2.0, 0.0);
        let sum = f1.add(&f2).unwrap();
        let u1 = representation_solution(&f1, &cols).unwrap();
        let u2 = representation_solution(&f2, &cols).unwrap();
        let u12 = representation_solution(&sum, &cols).unwrap();
        let err = u12.sub(&u1.add(&u2).unwrap()).unwrap().max_abs();
        assert!(err <= 1e-14 * u12.max_abs());

        let mut f3 = ScalarField::zeros(d);
        f3.values_mut()[d.index(5, 5, 5)] = C64::new(1.0, 0.0);
        assert!(matches!(
            representation_solution(&f3, &cols),
            Err(Error::Coverage(_))
        ));
    }
}
