use std::f64::consts::PI;
use std::sync::Arc;

use nkit_core::neumann::{
    adjoint_column, check_reciprocity, constant_coeff_column, mollified_source, neumann_column,
    representation_at_points, ColumnFactory,
};
use nkit_core::{assemble, generate_coefficient, CoefficientField, CoefficientSpec, Domain, C64};

fn field(n: usize, spec: CoefficientSpec) -> Arc<CoefficientField> {
    let d = Domain::unit_cube(n).unwrap();
    Arc::new(generate_coefficient(&d, &spec).unwrap())
}

/// `exp(-kappa r) / (4 pi gamma0 r)` with `kappa^2 = i k / gamma0`, `Re kappa > 0`.
fn free_space(gamma0: f64, k: f64, r: f64) -> C64 {
    let kappa = C64::new(0.0, k / gamma0).sqrt();
    let kappa = if kappa.re < 0.0 { -kappa } else { kappa };
    (-kappa * r).exp() / (4.0 * PI * gamma0 * r)
}

#[test]
fn free_space_oracle_satisfies_the_shifted_equation() {
    // gamma0 u'' + 2 gamma0 u' / r - i k u = 0 away from the origin
    let (g0, k) = (0.3, 2.0);
    let dr = 1e-4;
    for r in [0.05, 0.1, 0.2] {
        let u = |s: f64| free_space(g0, k, s);
        let d2 = (u(r + dr) - u(r) * 2.0 + u(r - dr)) / (dr * dr);
        let d1 = (u(r + dr) - u(r - dr)) / (2.0 * dr);
        let res = d2 * g0 + d1 * (2.0 * g0 / r) - C64::new(0.0, k) * u(r);
        assert!(res.norm() < 1e-5 * (u(r).norm() / (r * r)), "{res}");
    }
}

#[test]
fn constant_coefficient_column_matches_free_space_in_the_interior() {
    let g0 = 1.0 / 30.0;
    let k = 1.0;
    let g = field(65, CoefficientSpec::constant(g0));
    let d = *g.domain();
    let h = d.h_max();
    let y = d.center();
    let col = neumann_column(&g, k, y, 3.0 * h, 1e-10).unwrap();
    let mut worst = 0.0f64;
    for idx in 0..d.node_count() {
        let r = Domain::distance(d.coord(idx), y);
        if r >= 4.0 * h - 1e-12 && r <= 0.15 {
            let o = free_space(g0, k, r);
            worst = worst.max((col.field.at(idx) - o).norm() / o.norm());
        }
    }
    assert!(worst < 0.1, "worst relative deviation {worst}");

    let shell_max = |r: f64| {
        (0..d.node_count())
            .filter(|&i| (Domain::distance(d.coord(i), y) - r).abs() <= h)
            .map(|i| col.field.at(i).norm())
            .fold(0.0, f64::max)
    };
    assert!(shell_max(0.15) < shell_max(0.05));
}

#[test]
fn halving_the_mollifier_gives_cauchy_behaviour() {
    let g = field(65, CoefficientSpec::constant(1.0));
    let d = *g.domain();
    let h = d.h_max();
    let y = d.center();
    let x = [y[0] + 0.2, y[1], y[2]];
    let factory = ColumnFactory::new(g, 1.0, 1e-11).unwrap();
    let vals: Vec<C64> = [8.0, 4.0, 2.0]
        .iter()
        .map(|c| factory.column(y, c * h).unwrap().at(x))
        .collect();
    let d1 = (vals[0] - vals[1]).norm();
    let d2 = (vals[1] - vals[2]).norm();
    assert!(d2 < d1, "{d1} {d2}");
}

#[test]
fn frozen_comparator_is_close_near_the_source() {
    let spec = CoefficientSpec::HoelderBump {
        gamma0: 1.0,
        a: 0.2,
        center: None,
        lambda: 0.5,
    };
    let g = field(65, spec);
    let d = *g.domain();
    let h = d.h_max();
    let y = d.center();
    let n = neumann_column(&g, 1.0, y, 3.0 * h, 1e-10).unwrap();
    let n0 = constant_coeff_column(&g, 1.0, y, 3.0 * h, 1e-10).unwrap();
    let x = [y[0] + 4.0 * h, y[1], y[2]];
    let rel = (n.at(x) - n0.at(x)).norm() / n0.at(x).norm();
    assert!(rel < 0.05, "{rel}");
}

#[test]
fn reciprocity_over_coefficients_and_shifts() {
    let specs = [
        CoefficientSpec::constant(1.0),
        CoefficientSpec::HoelderBump {
            gamma0: 1.0,
            a: 0.5,
            center: Some([0.4, 0.45, 0.5]),
            lambda: 0.5,
        },
        CoefficientSpec::SmoothWave {
            gamma0: 1.0,
            a: 0.5,
            lambda: 0.5,
        },
    ];
    let tol = 1e-10;
    for spec in specs {
        let g = field(33, spec);
        let d = *g.domain();
        let eps = 3.0 * d.h_max();
        for k in [0.5, 2.0] {
            let y = [0.4, 0.45, 0.5];
            let x = [0.62, 0.55, 0.47];
            let n = neumann_column(&g, k, y, eps, tol).unwrap();
            let s = adjoint_column(&g, k, x, eps, tol).unwrap();
            let r = check_reciprocity(&n, &s).unwrap();
            assert!(r.averaged <= 10.0 * tol, "{r:?}");
        }
    }
}

#[test]
fn representation_at_probes_matches_a_direct_solve() {
    let g = field(33, CoefficientSpec::constant(1.0));
    let d = *g.domain();
    let h = d.h_max();
    let k = 1.0;
    // probes sit on nodes of the n = 33 grid
    let f = mollified_source(&d, d.center(), 3.0 * h).unwrap();
    let (u, _) = assemble(&g, k).unwrap().solve(&f, 1e-12).unwrap();
    let probes = [
        [0.3125, 0.5, 0.5],
        [0.6875, 0.5, 0.5],
        [0.5, 0.28125, 0.5],
        [0.5, 0.5, 0.75],
        [0.65625, 0.65625, 0.34375],
    ];
    let factory = ColumnFactory::new(g.clone(), k, 1e-12).unwrap().adjoint();
    let cols: Vec<_> = probes.iter().map(|&x| factory.node_column(x).unwrap()).collect();
    let rep = representation_at_points(&f, &cols).unwrap();
    for (x, v) in rep {
        let direct = u.at_point(x);
        let rel = (v - direct).norm() / direct.norm();
        assert!(rel < 1e-3, "{x:?}: {rel}");
    }
}

#[test]
fn columns_export_with_sidecar() {
    let g = field(17, CoefficientSpec::constant(1.0));
    let d = *g.domain();
    let col = neumann_column(&g, 1.0, d.center(), 2.0 * d.h_max(), 1e-10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("column");
    col.save(&stem).unwrap();
    let (back, side) = nkit_core::io::load_field(&stem).unwrap();
    assert_eq!(back, col.field);
    assert_eq!(side.meta["k"], 1.0);
    assert_eq!(side.meta["y"][0], 0.5);
    assert!(side.meta["residual"].as_f64().unwrap() <= 1e-10);
}
