//! Diffusion-approximation fluence with a small absorbing inclusion
//! `D = z + eps B`: forward solves, absorbed energy, the exact perturbation
//! identity, the leading-order expansion, the integral operators on `D` and a
//! fixed-point recovery of the absorption coefficient.
//!
//! Kernels on `D` use the sign convention `N = -G`, where `G` is the discrete
//! Neumann function of `i omega/c - div(gamma grad)` with `gamma = 1/(3 mu_s)`.
//! Near the diagonal `N` behaves like `3 mu_s Gamma`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{central_divergence, gradient, partial};
use crate::error::{Error, Result};
use crate::grid::{
    generate_coefficient, CoefficientField, CoefficientSpec, Domain, ScalarField,
    SmoothnessClass, C64,
};
use crate::neumann::NeumannColumn;
use crate::operator::{AssembleOptions, DiscreteOperator, SolveReport};
use crate::potentials::{newtonian_potential, single_layer_normal, ReferenceShape, ShapeKind};
use crate::solver::SolveOptions;

/// Smallness parameters above this value trigger a warning.
pub const SMALLNESS_LIMIT: f64 = 0.3;
pub const MIN_ANOMALY_NODES: usize = 27;
/// Fraction of the smallest box extent used as the distance constant `C0`.
pub const C0_FRACTION: f64 = 0.25;
pub const INVERSION_RTOL: f64 = 1e-8;
pub const INVERSION_MAX_ITERATIONS: usize = 100;
/// Relative slack allowed when testing that errors do not grow as `eps` shrinks.
pub const CONVERGENCE_SLACK: f64 = 0.1;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Scattering medium and illumination as written in a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub mu_s: CoefficientSpec,
    pub omega_over_c: f64,
    /// Normal flux `gamma d Phi/dn` on the faces `[x-, x+, y-, y+, z-, z+]`.
    pub g: [f64; 6],
}

/// A validated medium sampled on a grid.
#[derive(Debug, Clone)]
pub struct OpticalMedium {
    spec: MediumSpec,
    mu_s: Vec<f64>,
    gamma: Arc<CoefficientField>,
    op: DiscreteOperator,
}

impl OpticalMedium {
    pub fn new(domain: &Domain, spec: MediumSpec) -> Result<Self> {
        let mu_s: Vec<f64> = (0..domain.node_count())
            .map(|i| spec.mu_s.evaluate(domain, domain.coord(i)))
            .collect();
        if mu_s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidCoefficient("mu_s must be positive".into()));
        }
        if spec.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("boundary flux must be finite".into()));
        }
        let gamma = Arc::new(generate_coefficient(
            domain,
            &CoefficientSpec::DiffusionRecip {
                mu_s: Box::new(spec.mu_s.clone()),
            },
        )?);
        let op = DiscreteOperator::assemble_with(
            gamma.clone(),
            spec.omega_over_c,
            AssembleOptions::default(),
        )?;
        Ok(Self {
            spec,
            mu_s,
            gamma,
            op,
        })
    }

    pub fn spec(&self) -> &MediumSpec {
        &self.spec
    }

    pub fn domain(&self) -> &Domain {
        self.gamma.domain()
    }

    pub fn mu_s(&self) -> &[f64] {
        &self.mu_s
    }

    /// `1 / (3 mu_s)` on the nodes.
    pub fn gamma(&self) -> &Arc<CoefficientField> {
        &self.gamma
    }

    pub fn omega_over_c(&self) -> f64 {
        self.spec.omega_over_c
    }

    /// The background diffusion operator.
    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }
}

/// How the inclusion enters the forward problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyModel {
    /// Absorption on `D` and diffusion `1/(3(mu_a + mu_s))` there.
    #[default]
    Full,
    /// Absorption on `D` only; diffusion keeps its background value.
    AbsorptionOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub z: [f64; 3],
    pub eps: f64,
    #[serde(default = "ShapeKind::unit_ball")]
    pub shape: ShapeKind,
    pub mu_a: f64,
    #[serde(default)]
    pub model: AnomalyModel,
    /// Sample points per axis and dual cell for volume fractions; 1 means
    /// node-centre membership.
    #[serde(default = "default_subcell")]
    pub subcell: usize,
}

fn default_subcell() -> usize {
    1
}

impl AnomalySpec {
    pub fn ball(z: [f64; 3], eps: f64, mu_a: f64) -> Self {
        Self {
            z,
            eps,
            shape: ShapeKind::unit_ball(),
            mu_a,
            model: AnomalyModel::Full,
            subcell: 1,
        }
    }

    pub fn with_mu_a(&self, mu_a: f64) -> Self {
        Self { mu_a, ..self.clone() }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Smallness {
    pub eps_sqrt_mu_s: f64,
    pub mu_a_over_mu_s: f64,
}

impl Smallness {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.eps_sqrt_mu_s > SMALLNESS_LIMIT {
            out.push(format!("eps sqrt(mu_s) = {:.3} exceeds {SMALLNESS_LIMIT}", self.eps_sqrt_mu_s));
        }
        if self.mu_a_over_mu_s > SMALLNESS_LIMIT {
            out.push(format!("mu_a / mu_s = {:.3} exceeds {SMALLNESS_LIMIT}", self.mu_a_over_mu_s));
        }
        out
    }
}

/// An inclusion resolved on the grid of a medium.
#[derive(Debug, Clone)]
pub struct Anomaly {
    spec: AnomalySpec,
    shape: ReferenceShape,
    domain: Domain,
    /// Nodes with a positive volume fraction, ascending.
    nodes: Vec<usize>,
    /// Volume fraction per node, zero off `D`.
    chi: Vec<f64>,
    mu_s_bar: f64,
    smallness: Smallness,
}

impl Anomaly {
    pub fn new(medium: &OpticalMedium, spec: AnomalySpec) -> Result<Self> {
        let domain = *medium.domain();
        let z = spec.z;
        if !(spec.eps.is_finite() && spec.eps > 0.0) {
            return Err(Error::InvalidAnomaly(format!("eps = {} must be positive", spec.eps)));
        }
        if !(spec.mu_a.is_finite() && spec.mu_a >= 0.0) {
            return Err(Error::InvalidAnomaly(format!("mu_a = {} must be non-negative", spec.mu_a)));
        }
        if spec.subcell == 0 {
            return Err(Error::InvalidAnomaly("subcell must be at least 1".into()));
        }
        let c0 = C0_FRACTION * domain.min_extent();
        let dz = domain.dist_to_boundary(z);
        if !(dz >= c0) {
            return Err(Error::InvalidAnomaly(format!(
                "centre {z:?} is {dz:.4} from the boundary; need at least {c0:.4}"
            )));
        }
        let reach = spec.eps * spec.shape.circumradius();
        if reach >= c0 / 2.0 {
            return Err(Error::InvalidAnomaly(format!(
                "eps * circumradius = {reach:.4} must stay below {:.4}",
                c0 / 2.0
            )));
        }
        let shape = ReferenceShape::new(spec.shape)?;
        let chi = membership(&domain, &spec);
        let nodes: Vec<usize> = (0..chi.len()).filter(|&i| chi[i] > 0.0).collect();
        if reach < 2.0 * domain.h_max() || nodes.len() < MIN_ANOMALY_NODES {
            return Err(Error::UnderresolvedAnomaly {
                nodes: nodes.len(),
                required: MIN_ANOMALY_NODES,
            });
        }
        let mu_s_bar = medium.mu_s()[domain.nearest_node(z)];
        let smallness = Smallness {
            eps_sqrt_mu_s: spec.eps * mu_s_bar.sqrt(),
            mu_a_over_mu_s: spec.mu_a / mu_s_bar,
        };
        for w in smallness.warnings() {
            log::warn!("anomaly at {z:?}: {w}");
        }
        Ok(Self {
            spec,
            shape,
            domain,
            nodes,
            chi,
            mu_s_bar,
            smallness,
        })
    }

    pub fn spec(&self) -> &AnomalySpec {
        &self.spec
    }

    pub fn shape(&self) -> &ReferenceShape {
        &self.shape
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn mu_a(&self) -> f64 {
        self.spec.mu_a
    }

    pub fn mu_s_bar(&self) -> f64 {
        self.mu_s_bar
    }

    pub fn smallness(&self) -> Smallness {
        self.smallness
    }

    pub fn center_node(&self) -> usize {
        self.domain.nearest_node(self.spec.z)
    }

    /// Jump of `1/mu` across the inclusion, `chi (1/(mu_a + mu_s) - 1/mu_s)`;
    /// zero when the diffusion is left unperturbed.
    pub fn delta_beta(&self, medium: &OpticalMedium, frozen: bool) -> Vec<f64> {
        let mu_a = self.spec.mu_a;
        self.chi
            .iter()
            .zip(medium.mu_s())
            .map(|(&c, &ms)| {
                if c == 0.0 || self.spec.model == AnomalyModel::AbsorptionOnly {
                    return 0.0;
                }
                let m = if frozen { self.mu_s_bar } else { ms };
                c * (1.0 / (mu_a + m) - 1.0 / m)
            })
            .collect()
    }
}

fn membership(domain: &Domain, spec: &AnomalySpec) -> Vec<f64> {
    let h = domain.h();
    let s = spec.subcell;
    let inside = |x: [f64; 3]| {
        let rel = [
            (x[0] - spec.z[0]) / spec.eps,
            (x[1] - spec.z[1]) / spec.eps,
            (x[2] - spec.z[2]) / spec.eps,
        ];
        spec.shape.contains(rel)
    };
    let reach = spec.eps * spec.shape.circumradius() + 2.0 * domain.h_max();
    (0..domain.node_count())
        .into_par_iter()
        .map(|i| {
            let x = domain.coord(i);
            if Domain::distance(x, spec.z) > reach {
                return 0.0;
            }
            if s == 1 {
                return if inside(x) { 1.0 } else { 0.0 };
            }
            let mut hits = 0usize;
            for a in 0..s {
                for b in 0..s {
                    for c in 0..s {
                        let off = |m: usize, ha: f64| ((m as f64 + 0.5) / s as f64 - 0.5) * ha;
                        let p = [x[0] + off(a, h[0]), x[1] + off(b, h[1]), x[2] + off(c, h[2])];
                        hits += inside(p) as usize;
                    }
                }
            }
            hits as f64 / (s * s * s) as f64
        })
        .collect()
}

/// A converged fluence.
#[derive(Debug, Clone)]
pub struct FluenceField {
    pub field: ScalarField,
    pub with_anomaly: bool,
    pub report: SolveReport,
}

fn solve_flux(op: &DiscreteOperator, g: [f64; 6], tol: f64) -> Result<(ScalarField, SolveReport)> {
    let domain = *op.domain();
    if g.iter().all(|&v| v == 0.0) {
        let report = SolveReport {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
        return Ok((ScalarField::zeros(domain), report));
    }
    let b = op.boundary_flux_rhs(g);
    let (x, report) = op.solve_system(&b, SolveOptions::new(tol, op.default_max_iterations()))?;
    if !report.converged {
        return Err(Error::NonConvergence(report));
    }
    Ok((ScalarField::from_values(domain, x)?, report))
}

pub fn solve_background(medium: &OpticalMedium, tol: f64) -> Result<FluenceField> {
    let (field, report) = solve_flux(&medium.op, medium.spec.g, tol)?;
    Ok(FluenceField {
        field,
        with_anomaly: false,
        report,
    })
}

/// The operator of the perturbed problem.
pub fn anomaly_operator(medium: &OpticalMedium, anomaly: &Anomaly) -> Result<DiscreteOperator> {
    let domain = *medium.domain();
    let mu_a = anomaly.spec.mu_a;
    let gamma: Vec<f64> = match anomaly.spec.model {
        AnomalyModel::AbsorptionOnly => medium.gamma.values().to_vec(),
        AnomalyModel::Full => medium
            .mu_s
            .iter()
            .zip(&anomaly.chi)
            .map(|(&ms, &c)| c / (3.0 * (ms + mu_a)) + (1.0 - c) / (3.0 * ms))
            .collect(),
    };
    let gamma = CoefficientField::from_values(
        domain,
        gamma,
        medium.gamma.lambda(),
        medium.gamma.seminorm(),
        SmoothnessClass::C0,
    )?;
    let absorption: Vec<f64> = anomaly.chi.iter().map(|c| c * mu_a).collect();
    DiscreteOperator::assemble_with(Arc::new(gamma), medium.omega_over_c(), AssembleOptions::default())?
        .with_absorption(absorption)
}

pub fn solve_with_anomaly(
    medium: &OpticalMedium,
    anomaly: &Anomaly,
    tol: f64,
) -> Result<FluenceField> {
    let op = anomaly_operator(medium, anomaly)?;
    let (field, report) = solve_flux(&op, medium.spec.g, tol)?;
    Ok(FluenceField {
        field,
        with_anomaly: true,
        report,
    })
}

/// `A = mu_a chi_D Phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbedEnergy {
    pub field: ScalarField,
}

impl AbsorbedEnergy {
    pub fn save(&self, stem: &Path, anomaly: &Anomaly) -> Result<()> {
        let meta = serde_json::json!({
            "quantity": "absorbed_energy",
            "anomaly": anomaly.spec,
            "nodes": anomaly.nodes.len(),
        });
        crate::io::save_field(&self.field, stem, meta)
    }
}

pub fn absorbed_energy(phi: &ScalarField, anomaly: &Anomaly) -> Result<AbsorbedEnergy> {
    check_grid(phi.domain(), anomaly)?;
    let mu_a = anomaly.spec.mu_a;
    let values = phi
        .values()
        .iter()
        .zip(&anomaly.chi)
        .map(|(v, &c)| v * (mu_a * c))
        .collect();
    Ok(AbsorbedEnergy {
        field: ScalarField::from_values(*phi.domain(), values)?,
    })
}

fn check_grid(domain: &Domain, anomaly: &Anomaly) -> Result<()> {
    if domain.same_grid(&anomaly.domain) {
        Ok(())
    } else {
        Err(Error::DomainMismatch("field and anomaly live on different grids".into()))
    }
}

/// Applies `rho -> int N(., y) rho(y) dy` over the whole grid through one
/// solve of the background problem.
#[derive(Debug, Clone, Copy)]
pub struct KernelOnD<'a> {
    op: &'a DiscreteOperator,
    tol: f64,
}

impl<'a> KernelOnD<'a> {
    pub fn new(medium: &'a OpticalMedium, tol: f64) -> Self {
        Self {
            op: &medium.op,
            tol,
        }
    }

    pub fn apply(&self, rho: &[C64]) -> Result<Vec<C64>> {
        let domain = *self.op.domain();
        if rho.iter().all(|v| *v == ZERO) {
            return Ok(vec![ZERO; domain.node_count()]);
        }
        let density = ScalarField::from_values(domain, rho.to_vec())?;
        let (u, report) = self.op.solve(&density, self.tol)?;
        if !report.converged {
            return Err(Error::NonConvergence(report));
        }
        Ok(u.values().iter().map(|v| -v).collect())
    }
}

/// `(1/3) delta_beta grad f` as a node vector field.
fn weighted_gradient(f: &ScalarField, delta_beta: &[f64]) -> Vec<[C64; 3]> {
    let g = gradient(f);
    (0..delta_beta.len())
        .map(|i| {
            let s = delta_beta[i] / 3.0;
            if s == 0.0 {
                [ZERO; 3]
            } else {
                let v = g.at(i);
                [v[0] * s, v[1] * s, v[2] * s]
            }
        })
        .collect()
}

/// Density whose kernel image is `mu_a int_D f N + (1/3) int_D dbeta grad f . grad_y N`.
fn perturbation_density(f: &ScalarField, anomaly: &Anomaly, delta_beta: &[f64]) -> Vec<C64> {
    let domain = *f.domain();
    let div = central_divergence(&domain, &weighted_gradient(f, delta_beta));
    let mu_a = anomaly.spec.mu_a;
    f.values()
        .iter()
        .zip(&anomaly.chi)
        .zip(div)
        .map(|((v, &c), d)| v * (mu_a * c) - d)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeValue {
    pub x: [f64; 3],
    pub lhs: C64,
    pub rhs: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub probes: Vec<ProbeValue>,
    /// Largest `|lhs - rhs| / |lhs|` over the probes.
    pub rel_error: f64,
    pub abs_error: f64,
}

/// Six probes on the coordinate axes through `z` at distance `r`.
pub fn axis_probes(z: [f64; 3], r: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(6);
    for a in 0..3 {
        for s in [-1.0, 1.0] {
            let mut x = z;
            x[a] += s * r;
            out.push(x);
        }
    }
    out
}

/// Evaluates both sides of the perturbation identity at the probes. The
/// right-hand side is a grid quadrature over `D` using `N(x, y) = -conj(N*(y, x))`
/// read from adjoint node columns sourced at the probes.
pub fn identity_check_mainasym(
    medium: &OpticalMedium,
    anomaly: &Anomaly,
    phi: &ScalarField,
    phi0: &ScalarField,
    adjoint_columns: &[NeumannColumn],
) -> Result<IdentityReport> {
    check_grid(phi.domain(), anomaly)?;
    check_grid(phi0.domain(), anomaly)?;
    let domain = *phi.domain();
    let vol = domain.cell_volume();
    let mu_a = anomaly.spec.mu_a;
    let delta_beta = anomaly.delta_beta(medium, false);
    let v = weighted_gradient(phi, &delta_beta);
    let mut probes = Vec::with_capacity(adjoint_columns.len());
    for col in adjoint_columns {
        if !col.adjoint || col.eps_mol != 0.0 {
            return Err(Error::InvalidSource("identity needs adjoint node columns".into()));
        }
        if !col.domain().same_grid(&domain) || (col.k - medium.omega_over_c()).abs() > 0.0 {
            return Err(Error::DomainMismatch("column does not match the medium".into()));
        }
        let x = col.y;
        let dz = Domain::distance(x, anomaly.spec.z);
        let reach = anomaly.spec.eps * anomaly.spec.shape.circumradius();
        if dz <= 2.0 * reach {
            return Err(Error::InvalidSource(format!(
                "probe {x:?} is {dz:.4} from z; need more than {:.4}",
                2.0 * reach
            )));
        }
        let kernel = col.field.conj().scale(C64::new(-1.0, 0.0));
        let grad = gradient(&kernel);
        let mut rhs = ZERO;
        for &y in &anomaly.nodes {
            let g = grad.at(y);
            rhs += phi.at(y) * kernel.at(y) * (mu_a * anomaly.chi[y])
                + v[y][0] * g[0]
                + v[y][1] * g[1]
                + v[y][2] * g[2];
        }
        let node = domain.nearest_node(x);
        probes.push(ProbeValue {
            x,
            lhs: phi.at(node) - phi0.at(node),
            rhs: rhs * vol,
        });
    }
    Ok(summarise(probes))
}

fn summarise(probes: Vec<ProbeValue>) -> IdentityReport {
    let mut rel_error = 0.0f64;
    let mut abs_error = 0.0f64;
    for p in &probes {
        let d = (p.lhs - p.rhs).norm();
        abs_error = abs_error.max(d);
        rel_error = rel_error.max(if p.lhs.norm() > 0.0 { d / p.lhs.norm() } else { f64::INFINITY });
    }
    if probes.is_empty() {
        rel_error = f64::NAN;
    }
    IdentityReport {
        probes,
        rel_error,
        abs_error,
    }
}

/// The identity's right-hand side at every node by one kernel application;
/// agrees with the column quadrature by summation by parts.
pub fn mainasym_rhs_field(
    medium: &OpticalMedium,
    anomaly: &Anomaly,
    phi: &ScalarField,
    tol: f64,
) -> Result<ScalarField> {
    check_grid(phi.domain(), anomaly)?;
    let rho = perturbation_density(phi, anomaly, &anomaly.delta_beta(medium, false));
    ScalarField::from_values(*phi.domain(), KernelOnD::new(medium, tol).apply(&rho)?)
}

/// Identity check at the given probes using [`mainasym_rhs_field`].
pub fn identity_check_superposition(
    medium: &OpticalMedium,
    anomaly: &Anomaly,
    phi: &ScalarField,
    phi0: &ScalarField,
    probes: &[[f64; 3]],
    tol: f64,
) -> Result<IdentityReport> {
    let rhs = mainasym_rhs_field(medium, anomaly, phi, tol)?;
    let domain = *phi.domain();
    let probes = probes
        .iter()
        .map(|&x| {
            let node = domain.nearest_node(x);
            ProbeValue {
                x,
                lhs: phi.at(node) - phi0.at(node),
                rhs: rhs.at(node),
            }
        })
        .collect();
    Ok(summarise(probes))
}

/// Leading-order perturbation at `z` and its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticTerm {
    pub value: C64,
    pub monopole: C64,
    pub dipole: C64,
    pub n_hat: f64,
    pub single_layer: [f64; 3],
}

/// `3 eps^2 mu_a mu_s N_B(0) phi0 - eps (mu_a / mu_s) S_B[nu](0) . grad phi0`.
pub fn asymptotic_formula(
    eps: f64,
    mu_a: f64,
    mu_s_bar: f64,
    phi0_z: C64,
    grad_phi0_z: [C64; 3],
    n_hat: f64,
    single_layer: [f64; 3],
) -> AsymptoticTerm {
    let monopole = phi0_z * (3.0 * eps * eps * mu_a * mu_s_bar * n_hat);
    let dot = grad_phi0_z[0] * single_layer[0]
        + grad_phi0_z[1] * single_layer[1]
        + grad_phi0_z[2] * single_layer[2];
    let dipole = -dot * (eps * mu_a / mu_s_bar);
    AsymptoticTerm {
        value: monopole + dipole,
        monopole,
        dipole,
        n_hat,
        single_layer,
    }
}

/// Shape constants `N_B(0)` and `S_B[nu](0)`.
pub fn shape_constants(shape: &ReferenceShape) -> Result<(f64, [f64; 3])> {
    Ok((
        newtonian_potential(shape, [0.0; 3]),
        single_layer_normal(shape, [0.0; 3])?.value,
    ))
}

pub fn asymptotic_perturbation(
    anomaly: &Anomaly,
    phi0: &ScalarField,
) -> Result<AsymptoticTerm> {
    asymptotic_perturbation_at(anomaly, phi0, anomaly.spec.mu_a)
}

fn asymptotic_perturbation_at(
    anomaly: &Anomaly,
    phi0: &ScalarField,
    mu_a: f64,
) -> Result<AsymptoticTerm> {
    check_grid(phi0.domain(), anomaly)?;
    for w in anomaly.smallness.warnings() {
        log::warn!("asymptotic formula outside its small-parameter regime: {w}");
    }
    let (n_hat, s) = shape_constants(&anomaly.shape)?;
    let node = anomaly.center_node();
    let grad = [
        partial(phi0, 0)[node],
        partial(phi0, 1)[node],
        partial(phi0, 2)[node],
    ];
    Ok(asymptotic_formula(
        anomaly.spec.eps,
        mu_a,
        anomaly.mu_s_bar,
        phi0.at(node),
        grad,
        n_hat,
        s,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub delta_dir: C64,
    pub delta_asy: C64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub nodes: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub pass: bool,
}

impl ConvergenceStudy {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "eps [length],delta_dir_re [fluence],delta_dir_im [fluence],delta_asy_re [fluence],delta_asy_im [fluence],rel_err [1]"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e}",
                r.eps, r.delta_dir.re, r.delta_dir.im, r.delta_asy.re, r.delta_asy.im, r.rel_err
            )?;
        }
        Ok(())
    }
}

/// Compares direct and leading-order perturbations at `z` over a decreasing
/// list of sizes. Passes when the relative error never grows by more than
/// [`CONVERGENCE_SLACK`] from one size to the next.
pub fn asymptotic_convergence_study(
    medium: &OpticalMedium,
    template: &AnomalySpec,
    eps_list: &[f64],
    tol: f64,
) -> Result<ConvergenceStudy> {
    if eps_list.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 sizes, got {}",
            eps_list.len()
        )));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("sizes must be strictly decreasing".into()));
    }
    let anomalies = eps_list
        .iter()
        .map(|&e| Anomaly::new(medium, template.with_eps(e)))
        .collect::<Result<Vec<_>>>()?;
    let phi0 = solve_background(medium, tol)?.field;
    let rows = anomalies
        .par_iter()
        .map(|a| {
            let phi = solve_with_anomaly(medium, a, tol)?.field;
            let node = a.center_node();
            let delta_dir = phi.at(node) - phi0.at(node);
            let delta_asy = asymptotic_perturbation(a, &phi0)?.value;
            let abs_err = (delta_dir - delta_asy).norm();
            Ok(ConvergenceRow {
                eps: a.spec.eps,
                delta_dir,
                delta_asy,
                abs_err,
                rel_err: abs_err / delta_dir.norm(),
                nodes: a.nodes.len(),
                warnings: a.smallness.warnings(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = rows
        .windows(2)
        .all(|w| w[1].rel_err <= (1.0 + CONVERGENCE_SLACK) * w[0].rel_err);
    Ok(ConvergenceStudy { rows, pass })
}

/// `n(x) = int_D N(x, y) dy` at every node.
pub fn n_of_x(medium: &OpticalMedium, anomaly: &Anomaly, tol: f64) -> Result<ScalarField> {
    check_grid(medium.domain(), anomaly)?;
    let rho: Vec<C64> = anomaly.chi.iter().map(|&c| C64::new(c, 0.0)).collect();
    ScalarField::from_values(*medium.domain(), KernelOnD::new(medium, tol).apply(&rho)?)
}

/// `M[f] = mu_a n f`.
pub fn multiplier_m(f: &ScalarField, n: &ScalarField, mu_a: f64) -> Result<ScalarField> {
    if !f.domain().same_grid(n.domain()) {
        return Err(Error::DomainMismatch("f and n live on different grids".into()));
    }
    let values = f.values().iter().zip(n.values()).map(|(a, b)| a * b * mu_a).collect();
    ScalarField::from_values(*f.domain(), values)
}

fn restrict_to_d(values: Vec<C64>, anomaly: &Anomaly) -> Result<ScalarField> {
    let mut out = vec![ZERO; values.len()];
    for &i in &anomaly.nodes {
        out[i] = values[i];
    }
    ScalarField::from_values(anomaly.domain, out)
}

/// The singular part of the kernel: `3 mu_a mu_s int_D (f(y) - f(x)) Gamma
/// + mu_s int_D dbeta grad f . grad_y Gamma`, with `Gamma(x - y) = -1/(4 pi |x - y|)`.
/// The self cell contributes nothing: the first integrand vanishes there and
/// the ball average of `grad Gamma` is zero. With `frozen`, `dbeta` uses the
/// value of `mu_s` at `z`. The result is zero off `D`.
pub fn operator_n_script(
    f: &ScalarField,
    anomaly: &Anomaly,
    medium: &OpticalMedium,
    frozen: bool,
) -> Result<ScalarField> {
    check_grid(f.domain(), anomaly)?;
    let domain = *f.domain();
    let vol = domain.cell_volume();
    let mu_a = anomaly.spec.mu_a;
    let mu_bar = anomaly.mu_s_bar;
    let delta_beta = anomaly.delta_beta(medium, frozen);
    let grad = gradient(f);
    let nodes = &anomaly.nodes;
    let coords: Vec<[f64; 3]> = nodes.iter().map(|&i| domain.coord(i)).collect();
    let per_node: Vec<C64> = nodes
        .par_iter()
        .enumerate()
        .map(|(a, &xi)| {
            let x = coords[a];
            let fx = f.at(xi);
            let mut t1 = ZERO;
            let mut t2 = ZERO;
            for (b, &yi) in nodes.iter().enumerate() {
                if yi == xi {
                    continue;
                }
                let y = coords[b];
                let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let gam = -1.0 / (4.0 * PI * r);
                t1 += (f.at(yi) - fx) * (gam * anomaly.chi[yi]);
                if delta_beta[yi] != 0.0 {
                    // grad_y Gamma(x - y) = -(x - y) / (4 pi |x - y|^3)
                    let s = -delta_beta[yi] / (4.0 * PI * r * r * r);
                    let g = grad.at(yi);
                    t2 += (g[0] * d[0] + g[1] * d[1] + g[2] * d[2]) * s;
                }
            }
            (t1 * (3.0 * mu_a * mu_bar) + t2 * mu_bar) * vol
        })
        .collect();
    let mut out = vec![ZERO; domain.node_count()];
    for (a, &i) in nodes.iter().enumerate() {
        out[i] = per_node[a];
    }
    ScalarField::from_values(domain, out)
}

/// The full kernel part `mu_a int_D (f(y) - f(x)) N + (1/3) int_D dbeta grad f . grad_y N`,
/// so that the perturbation identity on `D` reads `(I - M) Phi - this[Phi] = Phi0`.
pub fn operator_n_total(
    f: &ScalarField,
    anomaly: &Anomaly,
    medium: &OpticalMedium,
    n: &ScalarField,
    tol: f64,
) -> Result<ScalarField> {
    check_grid(f.domain(), anomaly)?;
    let rho = perturbation_density(f, anomaly, &anomaly.delta_beta(medium, false));
    let k = KernelOnD::new(medium, tol).apply(&rho)?;
    let mu_a = anomaly.spec.mu_a;
    let values = k
        .iter()
        .zip(f.values())
        .zip(n.values())
        .map(|((kv, fv), nv)| kv - fv * nv * mu_a)
        .collect();
    restrict_to_d(values, anomaly)
}

/// The remainder operator, the full kernel part minus [`operator_n_script`].
pub fn operator_r_script(
    f: &ScalarField,
    anomaly: &Anomaly,
    medium: &OpticalMedium,
    n: &ScalarField,
    frozen: bool,
    tol: f64,
) -> Result<ScalarField> {
    let total = operator_n_total(f, anomaly, medium, n, tol)?;
    total.sub(&operator_n_script(f, anomaly, medium, frozen)?)
}

/// Envelope `|R(x, y)| <= c1 mu_s^{3/2} + c2 mu_s |x - y|^{lambda - 1}` fitted to samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderBound {
    pub c1: f64,
    pub c2: f64,
    pub lambda: f64,
    pub samples: usize,
    pub max_abs: f64,
}

/// Samples `R = N - 3 mu_s Gamma` on `D x D` from kernel columns at the given
/// source nodes and fits the envelope: least squares on the two basis
/// functions, then scaled up until every sample lies below it.
pub fn remainder_bound(
    medium: &OpticalMedium,
    anomaly: &Anomaly,
    sources: &[usize],
    tol: f64,
) -> Result<RemainderBound> {
    let domain = *medium.domain();
    let vol = domain.cell_volume();
    let mu = anomaly.mu_s_bar;
    let lambda = medium.gamma.lambda();
    let kernel = KernelOnD::new(medium, tol);
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for &x in sources {
        if anomaly.chi[x] == 0.0 {
            return Err(Error::Coverage(format!("source node {x} is not in D")));
        }
        let mut rho = vec![ZERO; domain.node_count()];
        rho[x] = C64::new(1.0 / vol, 0.0);
        let col = kernel.apply(&rho)?;
        let xc = domain.coord(x);
        for &y in &anomaly.nodes {
            if y == x {
                continue;
            }
            let r = Domain::distance(xc, domain.coord(y));
            let r_val = col[y] - C64::new(3.0 * mu * (-1.0 / (4.0 * PI * r)), 0.0);
            rows.push((mu.powf(1.5), mu * r.powf(lambda - 1.0), r_val.norm()));
        }
    }
    if rows.is_empty() {
        return Err(Error::Coverage("no off-diagonal samples".into()));
    }
    let (mut saa, mut sab, mut sbb, mut sar, mut sbr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, b, r) in &rows {
        saa += a * a;
        sab += a * b;
        sbb += b * b;
        sar += a * r;
        sbr += b * r;
    }
    let det = saa * sbb - sab * sab;
    let (mut c1, mut c2) = if det.abs() > 1e-300 {
        ((sar * sbb - sbr * sab) / det, (saa * sbr - sab * sar) / det)
    } else {
        (sar / saa, 0.0)
    };
    if c1 < 0.0 || c2 < 0.0 {
        c1 = c1.max(0.0);
        c2 = c2.max(0.0);
        if c1 == 0.0 {
            c2 = sbr / sbb;
        } else if c2 == 0.0 {
            c1 = sar / saa;
        }
    }
    let scale = rows
        .iter()
        .map(|&(a, b, r)| r / (c1 * a + c2 * b).max(f64::MIN_POSITIVE))
        .fold(1.0f64, f64::max);
    Ok(RemainderBound {
        c1: c1 * scale,
        c2: c2 * scale,
        lambda,
        samples: rows.len(),
        max_abs: rows.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesReport {
    #[serde(skip)]
    pub field: ScalarField,
    /// `||Phi_series - Phi||_D / ||Phi||_D`.
    pub deviation: f64,
    /// The same difference measured against `||Phi - Phi0||_D`.
    pub deviation_of_perturbation: f64,
    pub max_mu_a_n: f64,
    /// `||(N + R) f0||_D / ||f0||_D`.
    pub contraction: f64,
    /// `||R f0||_D / ||grad f0||_D`, with the singular part frozen or not as requested.
    pub remainder_ratio: f64,
}

fn norm_on_d(values: &[C64], anomaly: &Anomaly) -> f64 {
    anomaly
        .nodes
        .iter()
        .map(|&i| values[i].norm_sqr() * anomaly.chi[i])
        .sum::<f64>()
        .sqrt()
}

/// Two terms of the Neumann series for the integral equation on `D`:
/// `f0 = Phi0 / (1 - mu_a n)` and `Phi_series = f0 + (N + R) f0`.
pub fn two_term_series(
    medium: &OpticalMedium,
    anomaly: &Anomaly,
    phi0: &ScalarField,
    phi: &ScalarField,
    frozen: bool,
    tol: f64,
) -> Result<SeriesReport> {
    check_grid(phi0.domain(), anomaly)?;
    check_grid(phi.domain(), anomaly)?;
    let mu_a = anomaly.spec.mu_a;
    let n = n_of_x(medium, anomaly, tol)?;
    let max_mu_a_n = anomaly
        .nodes
        .iter()
        .map(|&i| (n.at(i) * mu_a).norm())
        .fold(0.0, f64::max);
    if max_mu_a_n >= 1.0 {
        return Err(Error::SeriesHypothesis(max_mu_a_n));
    }
    let f0_values: Vec<C64> = phi0
        .values()
        .iter()
        .zip(n.values())
        .map(|(p, nv)| {
            let denom = C64::new(1.0, 0.0) - nv * mu_a;
            if denom.norm() > 0.0 { p / denom } else { *p }
        })
        .collect();
    let f0 = ScalarField::from_values(*phi0.domain(), f0_values)?;
    let correction = operator_n_total(&f0, anomaly, medium, &n, tol)?;
    let singular = operator_n_script(&f0, anomaly, medium, frozen)?;
    let remainder = correction.sub(&singular)?;
    let mut series = vec![ZERO; f0.values().len()];
    for &i in &anomaly.nodes {
        series[i] = f0.at(i) + correction.at(i);
    }
    let diff: Vec<C64> = series.iter().zip(phi.values()).map(|(s, p)| s - p).collect();
    let pert: Vec<C64> = phi.values().iter().zip(phi0.values()).map(|(p, q)| p - q).collect();
    let dn = norm_on_d(&diff, anomaly);
    let grad = gradient(&f0);
    let grad_norm = anomaly
        .nodes
        .iter()
        .map(|&i| grad.at(i).iter().map(|c| c.norm_sqr()).sum::<f64>() * anomaly.chi[i])
        .sum::<f64>()
        .sqrt();
    let f0_norm = norm_on_d(f0.values(), anomaly);
    Ok(SeriesReport {
        field: ScalarField::from_values(*phi.domain(), series)?,
        deviation: dn / norm_on_d(phi.values(), anomaly),
        deviation_of_perturbation: dn / norm_on_d(&pert, anomaly),
        max_mu_a_n,
        contraction: norm_on_d(correction.values(), anomaly) / f0_norm,
        remainder_ratio: norm_on_d(remainder.values(), anomaly) / grad_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inversion {
    pub estimate: f64,
    pub zeroth: f64,
    pub iterations: usize,
    pub converged: bool,
    pub non_contraction: bool,
    pub history: Vec<f64>,
}

/// Mean of `A` over `D`, weighted by volume fraction.
pub fn d_average(a: &ScalarField, anomaly: &Anomaly) -> Result<C64> {
    check_grid(a.domain(), anomaly)?;
    let mut acc = ZERO;
    let mut w = 0.0;
    for &i in &anomaly.nodes {
        acc += a.at(i) * anomaly.chi[i];
        w += anomaly.chi[i];
    }
    Ok(acc / w)
}

/// Absorbed energy predicted by the leading-order model: constant
/// `mu_a (Phi0(z) + Delta(mu_a))` on `D`.
pub fn synthetic_absorbed_energy(
    anomaly: &Anomaly,
    phi0: &ScalarField,
    mu_a: f64,
) -> Result<AbsorbedEnergy> {
    let p = phi0.at(anomaly.center_node()) + asymptotic_perturbation_at(anomaly, phi0, mu_a)?.value;
    let mut values = vec![ZERO; phi0.values().len()];
    for &i in &anomaly.nodes {
        values[i] = p * (mu_a * anomaly.chi[i]);
    }
    Ok(AbsorbedEnergy {
        field: ScalarField::from_values(*phi0.domain(), values)?,
    })
}

/// Real least-squares solution of `abar = mu p`.
fn real_ratio(abar: C64, p: C64) -> f64 {
    (abar * p.conj()).re / p.norm_sqr()
}

/// Fixed-point recovery `mu <- abar / (Phi0(z) + Delta(mu))`, taken in the
/// real least-squares sense. The geometry and `mu_s` come from `anomaly`; its
/// `mu_a` is ignored.
pub fn invert_mu_a(a: &AbsorbedEnergy, phi0: &ScalarField, anomaly: &Anomaly) -> Result<Inversion> {
    let abar = d_average(&a.field, anomaly)?;
    if abar.norm() == 0.0 {
        return Err(Error::InvalidArgument("absorbed energy vanishes on D".into()));
    }
    let phi_z = phi0.at(anomaly.center_node());
    if phi_z.norm() == 0.0 {
        return Err(Error::InvalidArgument("background fluence vanishes at z".into()));
    }
    let zeroth = real_ratio(abar, phi_z);
    let mut history = vec![zeroth];
    let mut mu = zeroth;
    let mut last_step = f64::INFINITY;
    let mut best = (f64::INFINITY, zeroth);
    let mut growing = 0usize;
    let mut converged = false;
    let mut non_contraction = false;
    for _ in 0..INVERSION_MAX_ITERATIONS {
        let p = phi_z + asymptotic_perturbation_at(anomaly, phi0, mu)?.value;
        let next = real_ratio(abar, p);
        let step = (next - mu).abs();
        history.push(next);
        if step < best.0 {
            best = (step, next);
        }
        if step > last_step {
            growing += 1;
            if growing >= 3 {
                non_contraction = true;
                break;
            }
        } else {
            growing = 0;
        }
        last_step = step;
        mu = next;
        if step < INVERSION_RTOL * mu.abs() {
            converged = true;
            break;
        }
    }
    if non_contraction {
        log::warn!("mu_a iteration is not contracting; returning the best iterate");
        mu = best.1;
    }
    Ok(Inversion {
        estimate: mu,
        zeroth,
        iterations: history.len() - 1,
        converged,
        non_contraction,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn medium(n: usize, g: [f64; 6]) -> OpticalMedium {
        let d = Domain::unit_cube(n).unwrap();
        OpticalMedium::new(
            &d,
            MediumSpec {
                mu_s: CoefficientSpec::constant(10.0),
                omega_over_c: 1.0,
                g,
            },
        )
        .unwrap()
    }

    const G: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

    #[test]
    fn asymptotic_formula_for_the_ball() {
        let t = asymptotic_formula(0.05, 0.2, 10.0, C64::new(1.0, 0.0), [C64::new(3.0, 1.0); 3], -0.5, [0.0; 3]);
        assert_relative_eq!(t.value.re, -0.0075, epsilon = 1e-15);
        assert_eq!(t.value.im, 0.0);
        let t = asymptotic_formula(0.05, 0.0, 10.0, C64::new(1.0, 0.0), [C64::new(3.0, 1.0); 3], -0.5, [0.1; 3]);
        assert_eq!(t.value, ZERO);
    }

    #[test]
    fn zero_gradient_leaves_only_the_monopole() {
        let t = asymptotic_formula(0.05, 0.2, 10.0, C64::new(2.0, 0.0), [ZERO; 3], -0.3, [0.2, 0.1, 0.0]);
        assert_eq!(t.dipole.norm(), 0.0);
        assert_eq!(t.value, t.monopole);
    }

    #[test]
    fn anomaly_constraints() {
        let m = medium(33, G);
        assert!(Anomaly::new(&m, AnomalySpec::ball([0.5; 3], 0.1, 0.2)).is_ok());
        assert!(matches!(
            Anomaly::new(&m, AnomalySpec::ball([0.2, 0.5, 0.5], 0.1, 0.2)),
            Err(Error::InvalidAnomaly(_))
        ));
        assert!(matches!(
            Anomaly::new(&m, AnomalySpec::ball([0.5; 3], 0.2, 0.2)),
            Err(Error::InvalidAnomaly(_))
        ));
        assert!(matches!(
            Anomaly::new(&m, AnomalySpec::ball([0.5; 3], 0.04, 0.2)),
            Err(Error::UnderresolvedAnomaly { .. })
        ));
    }

    #[test]
    fn subcell_fractions_approach_the_volume() {
        let m = medium(33, G);
        let mut spec = AnomalySpec::ball([0.5; 3], 0.1, 0.2);
        spec.subcell = 4;
        let a = Anomaly::new(&m, spec).unwrap();
        let vol: f64 = a.chi().iter().sum::<f64>() * m.domain().cell_volume();
        let exact = 4.0 / 3.0 * PI * 1e-3;
        assert!((vol - exact).abs() / exact < 0.03, "{vol} {exact}");
    }

    #[test]
    fn absorbed_energy_support_and_linearity() {
        let m = medium(33, G);
        let a = Anomaly::new(&m, AnomalySpec::ball([0.5; 3], 0.1, 0.2)).unwrap();
        let phi = ScalarField::from_real_fn(*m.domain(), |x| 1.0 + x[0]);
        let e = absorbed_energy(&phi, &a).unwrap();
        for i in 0..phi.values().len() {
            assert_eq!(e.field.at(i) != ZERO, a.chi()[i] > 0.0);
        }
        let a2 = Anomaly::new(&m, a.spec().with_mu_a(0.4)).unwrap();
        let e2 = absorbed_energy(&phi, &a2).unwrap();
        assert_eq!(e2.field, e.field.scale(C64::new(2.0, 0.0)));
        let a0 = Anomaly::new(&m, a.spec().with_mu_a(0.0)).unwrap();
        assert_eq!(absorbed_energy(&phi, &a0).unwrap().field.max_abs(), 0.0);
    }

    #[test]
    fn n_script_annihilates_constants() {
        let m = medium(33, G);
        let a = Anomaly::new(&m, AnomalySpec::ball([0.5; 3], 0.1, 0.2)).unwrap();
        let f = ScalarField::from_real_fn(*m.domain(), |_| 2.5);
        let out = operator_n_script(&f, &a, &m, false).unwrap();
        assert!(out.max_abs() < 1e-14);
    }

    #[test]
    fn n_script_first_term_vanishes_at_the_centre_for_linear_f() {
        let m = medium(33, G);
        let a = Anomaly::new(&m, AnomalySpec::ball([0.5; 3], 0.1, 0.2).with_mu_a(0.2)).unwrap();
        let f = ScalarField::from_real_fn(*m.domain(), |x| 0.3 * x[0] - 0.7 * x[1] + 0.2 * x[2]);
        let mut absorption_only = a.spec().clone();
        absorption_only.model = AnomalyModel::AbsorptionOnly;
        let a = Anomaly::new(&m, absorption_only).unwrap();
        let out = operator_n_script(&f, &a, &m, false).unwrap();
        assert!(out.at(a.center_node()).norm() < 1e-12, "{}", out.at(a.center_node()));
    }

    #[test]
    fn inversion_fixed_point_on_synthetic_data() {
        let m = medium(33, G);
        let a = Anomaly::new(&m, AnomalySpec::ball([0.5; 3], 0.1, 0.2)).unwrap();
        let phi0 = ScalarField::from_real_fn(*m.domain(), |x| 1.0 + 0.5 * x[0]);
        let e = synthetic_absorbed_energy(&a, &phi0, 0.35).unwrap();
        let inv = invert_mu_a(&e, &phi0, &a).unwrap();
        assert!(inv.converged);
        assert!(!inv.non_contraction);
        assert!((inv.estimate - 0.35).abs() < 1e-6 * 0.35, "{inv:?}");
    }

    #[test]
    fn study_rejects_short_lists() {
        let m = medium(17, G);
        let t = AnomalySpec::ball([0.5; 3], 0.1, 0.2);
        assert!(asymptotic_convergence_study(&m, &t, &[0.1], 1e-8).is_err());
        assert!(asymptotic_convergence_study(&m, &t, &[0.1, 0.12, 0.08], 1e-8).is_err());
    }
}
