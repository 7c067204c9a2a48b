//! One runner per experiment preset. Runners compute everything in memory and
//! return artifacts; nothing touches the disk here.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use nkit_core::diff::gradient;
use nkit_core::estimates::{
    level_set_scaling, verify_difference_decay, verify_gradient_decay, verify_pointwise_decay,
    DecayReport,
};
use nkit_core::neumann::{
    check_reciprocity, mollified_source, representation_at_points, ColumnFactory, NeumannColumn,
};
use nkit_core::photoacoustic::{
    absorbed_energy, asymptotic_convergence_study, axis_probes, identity_check_mainasym,
    invert_mu_a, remainder_bound, solve_background, solve_with_anomaly, synthetic_absorbed_energy,
    two_term_series, Anomaly, IdentityReport, OpticalMedium,
};
use nkit_core::potentials::{
    newtonian_potential, newtonian_potential_quadrature, single_layer_normal, ReferenceShape,
    ShapeKind,
};
use nkit_core::{assemble, generate_coefficient, CoefficientField, Domain, ScalarField, C64};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Preset, RunConfig};
use crate::CliError;

/// Flux-balance tolerance for the forward solve, relative to `|int g|`.
pub const FLUX_BALANCE_TOL: f64 = 1e-6;
pub const RECIPROCITY_TOL: f64 = 1e-6;
pub const REPRESENTATION_TOL: f64 = 1e-3;
pub const POTENTIAL_TOL: f64 = 1e-3;
pub const SURFACE_TOL: f64 = 1e-6;
pub const IDENTITY_TOL: f64 = 5e-2;
pub const SERIES_TOL: f64 = 0.1;
pub const INVERSION_TOL: f64 = 0.1;
pub const ZEROTH_TOL: f64 = 0.25;
pub const SYNTHETIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum Artifact {
    Text { name: String, body: String },
    Field { stem: String, field: ScalarField, meta: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictEntry {
    pub name: String,
    pub pass: bool,
    /// Ungated verdicts are diagnostics and never change the exit code.
    pub gated: bool,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub verdicts: Vec<VerdictEntry>,
    pub stages: Vec<Stage>,
}

impl Outcome {
    fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let t = Instant::now();
        let out = f()?;
        self.stages.push(Stage {
            name: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn text(&mut self, name: &str, body: String) {
        self.artifacts.push(Artifact::Text {
            name: name.to_string(),
            body,
        });
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.text(name, String::from_utf8(buf).expect("CSV output is UTF-8"));
        Ok(())
    }

    fn verdict(&mut self, name: &str, pass: bool, gated: bool, details: Value) {
        self.verdicts.push(VerdictEntry {
            name: name.to_string(),
            pass,
            gated,
            details,
        });
    }

    fn decay(&mut self, report: &DecayReport) {
        self.verdict(&report.name, report.verdict.is_pass(), true, report.to_json());
    }
}

/// Everything validated before any compute starts.
pub struct Prepared {
    pub config: RunConfig,
    pub domain: Domain,
    pub gamma: Option<Arc<CoefficientField>>,
    pub medium: Option<OpticalMedium>,
    pub anomaly: Option<Anomaly>,
    pub shape: Option<ReferenceShape>,
}

fn config_err(e: nkit_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

pub fn prepare(config: RunConfig) -> Result<Prepared, CliError> {
    let domain = Domain::new(config.grid.extent, config.grid.n).map_err(config_err)?;
    let gamma = match &config.coefficient {
        Some(spec) => Some(Arc::new(generate_coefficient(&domain, spec).map_err(config_err)?)),
        None => None,
    };
    if let (Some(g), Some(k)) = (&gamma, config.k) {
        assemble(g, k).map_err(config_err)?;
    }
    for case in &config.study.cases {
        let g = generate_coefficient(&domain, &case.coefficient).map_err(config_err)?;
        assemble(&g, case.k).map_err(config_err)?;
    }
    let medium = match &config.medium {
        Some(m) => Some(OpticalMedium::new(&domain, m.clone()).map_err(config_err)?),
        None => None,
    };
    let anomaly = match (&medium, &config.anomaly) {
        (Some(m), Some(a)) => Some(Anomaly::new(m, a.clone()).map_err(config_err)?),
        _ => None,
    };
    let shape = if config.experiment == Preset::PotentialsCheck {
        let kind = config.shape.unwrap_or(ShapeKind::unit_ball());
        Some(ReferenceShape::with_level(kind, config.study.level).map_err(config_err)?)
    } else {
        None
    };
    if let Some(y) = config.study.source {
        if !domain.contains(y) {
            return Err(CliError::Config(format!("source {y:?} lies outside the box")));
        }
    }
    Ok(Prepared {
        config,
        domain,
        gamma,
        medium,
        anomaly,
        shape,
    })
}

pub fn execute(p: &Prepared) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    match p.config.experiment {
        Preset::DecayStudy => decay_study(p, &mut out)?,
        Preset::DifferenceStudy => difference_study(p, &mut out)?,
        Preset::GradientStudy => gradient_study(p, &mut out)?,
        Preset::LevelsetStudy => levelset_study(p, &mut out)?,
        Preset::ReciprocityCheck => reciprocity_check(p, &mut out)?,
        Preset::RepresentationCheck => representation_check(p, &mut out)?,
        Preset::PotentialsCheck => potentials_check(p, &mut out)?,
        Preset::PatForward => pat_forward(p, &mut out)?,
        Preset::PatMainasym => pat_mainasym(p, &mut out)?,
        Preset::PatConvergence => pat_convergence(p, &mut out)?,
        Preset::PatSeries => pat_series(p, &mut out)?,
        Preset::PatInvertDemo => pat_invert_demo(p, &mut out)?,
    }
    Ok(out)
}

struct ColumnSetup {
    factory: ColumnFactory,
    gamma: Arc<CoefficientField>,
    k: f64,
    y: [f64; 3],
    eps: f64,
}

fn column_setup(p: &Prepared) -> Result<ColumnSetup, CliError> {
    let gamma = p.gamma.clone().expect("checked by the config");
    let k = p.config.k.expect("checked by the config");
    Ok(ColumnSetup {
        factory: ColumnFactory::new(gamma.clone(), k, p.config.tol)?,
        gamma,
        k,
        y: p.config.study.source.unwrap_or(p.domain.center()),
        eps: p.config.study.eps_cells * p.domain.h_max(),
    })
}

fn primary_column(s: &ColumnSetup, out: &mut Outcome) -> Result<NeumannColumn, CliError> {
    out.timed("column", || Ok(s.factory.column(s.y, s.eps)?))
}

fn comparator_column(s: &ColumnSetup, tol: f64, out: &mut Outcome) -> Result<NeumannColumn, CliError> {
    out.timed("frozen_column", || {
        let frozen = Arc::new(s.gamma.frozen_at(s.y));
        Ok(ColumnFactory::new(frozen, s.k, tol)?.column(s.y, s.eps)?)
    })
}

fn lambda_of(p: &Prepared, s: &ColumnSetup) -> f64 {
    p.config.study.lambda.unwrap_or(s.gamma.lambda())
}

fn decay_study(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let s = column_setup(p)?;
    let col = primary_column(&s, out)?;
    let report = out.timed("fit", || Ok(verify_pointwise_decay(&col, &p.config.study.window)?))?;
    out.csv("decay.csv", |b| report.write_csv(b))?;
    out.decay(&report);
    Ok(())
}

fn difference_study(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let s = column_setup(p)?;
    let col = primary_column(&s, out)?;
    let col0 = comparator_column(&s, p.config.tol, out)?;
    let lambda = lambda_of(p, &s);
    let report = out.timed("fit", || {
        Ok(verify_difference_decay(&col, &col0, lambda, &p.config.study.window)?)
    })?;
    out.csv("difference.csv", |b| report.write_csv(b))?;
    out.decay(&report);
    Ok(())
}

fn gradient_study(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let s = column_setup(p)?;
    let col = primary_column(&s, out)?;
    let col0 = comparator_column(&s, p.config.tol, out)?;
    let lambda = lambda_of(p, &s);
    let order = p.config.study.gradient_order;
    let report = out.timed("fit", || {
        Ok(verify_gradient_decay(&col, &col0, lambda, s.k, order, &p.config.study.window)?)
    })?;
    out.csv("gradient.csv", |b| report.write_csv(b))?;
    out.decay(&report);
    Ok(())
}

fn levelset_study(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let s = column_setup(p)?;
    let col = primary_column(&s, out)?;
    let grad = gradient(&col.field).modulus();
    let n_t = p.config.study.n_thresholds;
    let w = p.config.study.window;
    let ((value, value_curve), (grad_report, grad_curve)) = out.timed("fit", || {
        Ok((
            level_set_scaling(&col.field, &col, -3.0, n_t, &w)?,
            level_set_scaling(&grad, &col, -1.5, n_t, &w)?,
        ))
    })?;
    out.csv("levelset_value.csv", |b| value_curve.write_csv(b))?;
    out.csv("levelset_gradient.csv", |b| grad_curve.write_csv(b))?;
    let mut value = value;
    value.name = "level_set_value".into();
    let mut grad_report = grad_report;
    grad_report.name = "level_set_gradient".into();
    out.decay(&value);
    out.decay(&grad_report);
    Ok(())
}

fn reciprocity_check(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let d = p.domain;
    let eps = p.config.study.eps_cells * d.h_max();
    let ext = d.extent();
    let y = p.config.study.y.unwrap_or([0.4 * ext[0], 0.45 * ext[1], 0.5 * ext[2]]);
    let x = p.config.study.x.unwrap_or([0.62 * ext[0], 0.55 * ext[1], 0.47 * ext[2]]);
    let tol = p.config.tol;
    let rows = out.timed("columns", || {
        p.config
            .study
            .cases
            .iter()
            .map(|case| {
                let g = Arc::new(generate_coefficient(&d, &case.coefficient)?);
                let f = ColumnFactory::new(g, case.k, tol)?;
                let n = f.column(y, eps)?;
                let s = f.adjoint().column(x, eps)?;
                Ok(check_reciprocity(&n, &s)?)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let mut csv = String::from("case [index],k [1/time],averaged [relative],nearest [relative]\n");
    let mut worst = 0.0f64;
    for (i, (r, case)) in rows.iter().zip(&p.config.study.cases).enumerate() {
        writeln!(csv, "{i},{:e},{:.17e},{:.17e}", case.k, r.averaged, r.nearest).unwrap();
        worst = worst.max(r.averaged);
    }
    out.text("reciprocity.csv", csv);
    out.verdict(
        "reciprocity",
        worst < RECIPROCITY_TOL,
        true,
        json!({"worst_relative": worst, "threshold": RECIPROCITY_TOL, "cases": rows.len()}),
    );
    Ok(())
}

/// Interior nodes a quarter of the box away from the centre along each axis.
fn default_node_probes(d: &Domain) -> Vec<[f64; 3]> {
    let c = d.center();
    let ext = d.extent();
    let mut out = Vec::new();
    for a in 0..3 {
        for s in [-0.25, 0.25] {
            let mut x = c;
            x[a] += s * ext[a];
            out.push(d.coord(d.nearest_node(x)));
        }
    }
    out
}

fn representation_check(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let s = column_setup(p)?;
    let d = p.domain;
    let tol = p.config.tol;
    let f = mollified_source(&d, s.y, s.eps)?;
    let direct = out.timed("direct", || {
        let (u, report) = s.factory.operator().solve(&f, tol)?;
        if !report.converged {
            return Err(nkit_core::Error::NonConvergence(report).into());
        }
        Ok(u)
    })?;
    let probes = if p.config.study.probes.is_empty() {
        default_node_probes(&d)
    } else {
        p.config.study.probes.clone()
    };
    let rep = out.timed("adjoint_columns", || {
        let adj = s.factory.adjoint();
        let cols = probes
            .iter()
            .map(|&x| adj.node_column(x))
            .collect::<nkit_core::Result<Vec<_>>>()?;
        Ok(representation_at_points(&f, &cols)?)
    })?;
    let mut csv = String::from(
        "x [length],y [length],z [length],direct_re [field],direct_im [field],represented_re [field],represented_im [field],rel_err [1]\n",
    );
    let mut worst = 0.0f64;
    for (x, v) in &rep {
        let u = direct.at_point(*x);
        let rel = (v - u).norm() / u.norm();
        worst = worst.max(rel);
        writeln!(
            csv,
            "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            x[0], x[1], x[2], u.re, u.im, v.re, v.im, rel
        )
        .unwrap();
    }
    out.text("representation.csv", csv);
    out.verdict(
        "representation",
        worst < REPRESENTATION_TOL,
        true,
        json!({"worst_relative": worst, "threshold": REPRESENTATION_TOL}),
    );
    Ok(())
}

fn potentials_check(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let shape = p.shape.as_ref().expect("prepared for this preset");
    let (n_quad, n_ref, s, moment) = out.timed("quadrature", || {
        let n_quad = newtonian_potential_quadrature(shape, [0.0; 3]);
        let n_ref = match shape.kind() {
            ShapeKind::Ball { .. } => newtonian_potential(shape, [0.0; 3]),
            kind => newtonian_potential_quadrature(
                &ReferenceShape::with_level(kind, 2 * shape.level())?,
                [0.0; 3],
            ),
        };
        Ok((n_quad, n_ref, single_layer_normal(shape, [0.0; 3])?, shape.surface_moment()))
    })?;
    let s_norm = s.value.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m_norm = moment.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut csv = String::from("quantity [name],value [length^2 or length^2 vector norm]\n");
    writeln!(csv, "newtonian_at_origin_quadrature,{n_quad:.17e}").unwrap();
    writeln!(csv, "newtonian_at_origin_reference,{n_ref:.17e}").unwrap();
    writeln!(csv, "single_layer_at_origin_norm,{s_norm:.17e}").unwrap();
    writeln!(csv, "surface_normal_moment_norm,{m_norm:.17e}").unwrap();
    out.text("potentials.csv", csv);
    out.csv("volume_cells.csv", |b| shape.write_volume_csv(b))?;
    out.csv("surface_panels.csv", |b| shape.write_surface_csv(b))?;
    let diff = (n_quad - n_ref).abs();
    out.verdict(
        "newtonian_at_origin",
        diff < POTENTIAL_TOL,
        true,
        json!({"quadrature": n_quad, "reference": n_ref, "abs_diff": diff, "threshold": POTENTIAL_TOL}),
    );
    // the dipole vanishes at the centre only for point-symmetric shapes, which all shipped kinds are
    out.verdict(
        "single_layer_at_origin",
        s_norm < SURFACE_TOL,
        true,
        json!({"norm": s_norm, "threshold": SURFACE_TOL}),
    );
    out.verdict(
        "gauss_closed_surface",
        m_norm < SURFACE_TOL,
        true,
        json!({"norm": m_norm, "threshold": SURFACE_TOL}),
    );
    Ok(())
}

fn pat_parts(p: &Prepared) -> (&OpticalMedium, &Anomaly) {
    (
        p.medium.as_ref().expect("checked by the config"),
        p.anomaly.as_ref().expect("checked by the config"),
    )
}

fn complex_row(csv: &mut String, name: &str, v: C64) {
    writeln!(csv, "{name},{:.17e},{:.17e}", v.re, v.im).unwrap();
}

fn pat_forward(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let (m, a) = pat_parts(p);
    let tol = p.config.tol;
    let phi0 = out.timed("background", || Ok(solve_background(m, tol)?))?;
    let phi = out.timed("anomaly", || Ok(solve_with_anomaly(m, a, tol)?))?;
    let energy = absorbed_energy(&phi.field, a)?;
    let ext = p.domain.extent();
    let g = m.spec().g;
    let areas = [ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]];
    let flux: f64 = (0..6).map(|f| g[f] * areas[f / 2]).sum();
    let balance = phi0.field.integral() * C64::new(0.0, m.omega_over_c());
    let mismatch = (balance - flux).norm() / flux.abs().max(f64::MIN_POSITIVE);
    let z = a.center_node();
    let mut csv = String::from("quantity [name],re [fluence],im [fluence]\n");
    complex_row(&mut csv, "phi0_at_z", phi0.field.at(z));
    complex_row(&mut csv, "phi_at_z", phi.field.at(z));
    complex_row(&mut csv, "i_omega_over_c_times_integral_phi0", balance);
    complex_row(&mut csv, "boundary_flux_integral", C64::new(flux, 0.0));
    complex_row(&mut csv, "absorbed_energy_integral", energy.field.integral());
    out.text("forward.csv", csv);
    let meta = json!({"quantity": "absorbed_energy", "anomaly": a.spec(), "nodes": a.nodes().len()});
    out.artifacts.push(Artifact::Field {
        stem: "absorbed_energy".into(),
        field: energy.field,
        meta,
    });
    out.artifacts.push(Artifact::Field {
        stem: "fluence".into(),
        field: phi.field.clone(),
        meta: json!({"quantity": "fluence", "with_anomaly": true}),
    });
    out.artifacts.push(Artifact::Field {
        stem: "fluence_background".into(),
        field: phi0.field.clone(),
        meta: json!({"quantity": "fluence", "with_anomaly": false}),
    });
    out.verdict(
        "flux_balance",
        mismatch < FLUX_BALANCE_TOL,
        true,
        json!({"relative_mismatch": mismatch, "threshold": FLUX_BALANCE_TOL}),
    );
    out.verdict(
        "absorption_reduces_fluence",
        phi.field.at(z).norm() < phi0.field.at(z).norm(),
        false,
        json!({"phi0_abs": phi0.field.at(z).norm(), "phi_abs": phi.field.at(z).norm()}),
    );
    Ok(())
}

fn identity_on(
    m: &OpticalMedium,
    a: &Anomaly,
    probes: &[[f64; 3]],
    tol: f64,
) -> Result<IdentityReport, CliError> {
    let phi0 = solve_background(m, tol)?.field;
    let phi = solve_with_anomaly(m, a, tol)?.field;
    let factory = ColumnFactory::from_operator(m.operator().clone(), tol).adjoint();
    let cols = probes
        .iter()
        .map(|&x| factory.node_column(x))
        .collect::<nkit_core::Result<Vec<_>>>()?;
    Ok(identity_check_mainasym(m, a, &phi, &phi0, &cols)?)
}

fn pat_mainasym(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let (m, a) = pat_parts(p);
    let tol = p.config.tol;
    let probes = if p.config.study.probes.is_empty() {
        axis_probes(a.spec().z, p.config.study.probe_radius)
    } else {
        p.config.study.probes.clone()
    };
    let fine = out.timed("fine", || identity_on(m, a, &probes, tol))?;
    let coarse_n = p.config.study.coarse_n.unwrap_or((p.domain.n() - 1) / 2 + 1);
    let coarse = out.timed("coarse", || {
        let d = Domain::new(p.domain.extent(), coarse_n)?;
        let mc = OpticalMedium::new(&d, m.spec().clone())?;
        let ac = Anomaly::new(&mc, a.spec().clone())?;
        identity_on(&mc, &ac, &probes, tol)
    })?;
    let mut csv = String::from(
        "n [nodes per axis],x [length],y [length],z [length],lhs_re [fluence],lhs_im [fluence],rhs_re [fluence],rhs_im [fluence]\n",
    );
    for (n, rep) in [(coarse_n, &coarse), (p.domain.n(), &fine)] {
        for pv in &rep.probes {
            writeln!(
                csv,
                "{n},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
                pv.x[0], pv.x[1], pv.x[2], pv.lhs.re, pv.lhs.im, pv.rhs.re, pv.rhs.im
            )
            .unwrap();
        }
    }
    out.text("mainasym.csv", csv);
    out.verdict(
        "identity",
        fine.rel_error < IDENTITY_TOL,
        true,
        json!({"rel_error": fine.rel_error, "threshold": IDENTITY_TOL, "n": p.domain.n()}),
    );
    out.verdict(
        "identity_refinement",
        fine.rel_error < coarse.rel_error,
        true,
        json!({"coarse_n": coarse_n, "coarse": coarse.rel_error, "fine": fine.rel_error}),
    );
    Ok(())
}

fn pat_convergence(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let (m, a) = pat_parts(p);
    let study = out.timed("study", || {
        Ok(asymptotic_convergence_study(m, a.spec(), &p.config.study.eps_list, p.config.tol)?)
    })?;
    out.csv("convergence.csv", |b| study.write_csv(b))?;
    let rel: Vec<f64> = study.rows.iter().map(|r| r.rel_err).collect();
    let warnings: Vec<&String> = study.rows.iter().flat_map(|r| &r.warnings).collect();
    out.verdict(
        "asymptotic_convergence",
        study.pass,
        true,
        json!({"rel_err": rel, "slack": nkit_core::photoacoustic::CONVERGENCE_SLACK, "warnings": warnings}),
    );
    Ok(())
}

fn pat_series(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let (m, a) = pat_parts(p);
    let tol = p.config.tol;
    let frozen = p.config.study.frozen;
    let phi0 = out.timed("background", || Ok(solve_background(m, tol)?.field))?;
    let half = Anomaly::new(m, a.spec().with_mu_a(0.5 * a.mu_a()))?;
    let reports = out.timed("series", || {
        [a, &half]
            .iter()
            .map(|an| {
                let phi = solve_with_anomaly(m, an, tol)?.field;
                Ok(two_term_series(m, an, &phi0, &phi, frozen, tol)?)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let bound = out.timed("remainder_bound", || Ok(remainder_bound(m, a, &[a.center_node()], tol)?))?;
    let mut csv = String::from(
        "mu_a [1/length],deviation [1],deviation_of_perturbation [1],contraction [1],remainder_ratio [length],max_mu_a_n [1]\n",
    );
    for (mu, r) in [a.mu_a(), half.mu_a()].iter().zip(&reports) {
        writeln!(
            csv,
            "{mu:e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.deviation, r.deviation_of_perturbation, r.contraction, r.remainder_ratio, r.max_mu_a_n
        )
        .unwrap();
    }
    out.text("series.csv", csv);
    out.verdict(
        "series_deviation",
        reports[0].deviation < SERIES_TOL,
        true,
        json!({"deviation": reports[0].deviation, "threshold": SERIES_TOL}),
    );
    out.verdict(
        "series_shrinks_with_mu_a",
        reports[1].deviation < reports[0].deviation,
        true,
        json!({"full": reports[0].deviation, "half": reports[1].deviation}),
    );
    out.verdict(
        "remainder_bound",
        true,
        false,
        serde_json::to_value(&bound).expect("bound serializes"),
    );
    Ok(())
}

fn pat_invert_demo(p: &Prepared, out: &mut Outcome) -> Result<(), CliError> {
    let (m, a) = pat_parts(p);
    let tol = p.config.tol;
    let truth = a.mu_a();
    let phi0 = out.timed("background", || Ok(solve_background(m, tol)?.field))?;
    let phi = out.timed("anomaly", || Ok(solve_with_anomaly(m, a, tol)?.field))?;
    let energy = absorbed_energy(&phi, a)?;
    let (pde, synthetic) = out.timed("inversion", || {
        let synthetic = invert_mu_a(&synthetic_absorbed_energy(a, &phi0, truth)?, &phi0, a)?;
        Ok((invert_mu_a(&energy, &phi0, a)?, synthetic))
    })?;
    let rel = |v: f64| (v - truth).abs() / truth;
    let mut csv = String::from("iteration [count],pde_mu_a [1/length],synthetic_mu_a [1/length]\n");
    let rows = pde.history.len().max(synthetic.history.len());
    for i in 0..rows {
        let cell = |h: &[f64]| h.get(i).map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(csv, "{i},{},{}", cell(&pde.history), cell(&synthetic.history)).unwrap();
    }
    out.text("inversion.csv", csv);
    let summary = json!({"true_mu_a": truth, "pde": pde, "synthetic": synthetic});
    out.text(
        "inversion.json",
        serde_json::to_string_pretty(&summary).expect("inversion serializes") + "\n",
    );
    out.artifacts.push(Artifact::Field {
        stem: "absorbed_energy".into(),
        field: energy.field,
        meta: json!({"quantity": "absorbed_energy", "anomaly": a.spec(), "nodes": a.nodes().len()}),
    });
    out.verdict(
        "inversion_pde",
        rel(pde.estimate) < INVERSION_TOL && !pde.non_contraction,
        true,
        json!({"estimate": pde.estimate, "relative": rel(pde.estimate), "threshold": INVERSION_TOL}),
    );
    out.verdict(
        "inversion_zeroth_iterate",
        rel(pde.zeroth) < ZEROTH_TOL,
        true,
        json!({"estimate": pde.zeroth, "relative": rel(pde.zeroth), "threshold": ZEROTH_TOL}),
    );
    out.verdict(
        "inversion_synthetic",
        rel(synthetic.estimate) < SYNTHETIC_TOL,
        true,
        json!({"estimate": synthetic.estimate, "relative": rel(synthetic.estimate), "threshold": SYNTHETIC_TOL}),
    );
    Ok(())
}
