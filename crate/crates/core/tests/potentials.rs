use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use nkit_core::potentials::{
    newtonian_potential, newtonian_potential_quadrature, single_layer_normal, ReferenceShape,
    ShapeKind, DEFAULT_LEVEL,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn ball_quadrature_reproduces_the_closed_form() {
    let ball = ReferenceShape::unit_ball();
    let q0 = newtonian_potential_quadrature(&ball, [0.0; 3]);
    assert!((q0 + 0.5).abs() < 1e-3, "{q0}");

    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..10 {
        let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let exact = newtonian_potential(&ball, x);
        let quad = newtonian_potential_quadrature(&ball, x);
        assert!(rel(quad, exact) < 1e-3, "{x:?}: {quad} vs {exact}");
    }
}

#[test]
fn doubling_the_quadrature_changes_little() {
    let x = [0.3, -0.2, 0.1];
    for kind in [
        ShapeKind::unit_ball(),
        ShapeKind::Ellipsoid {
            semi_axes: [2.0, 1.0, 1.0],
        },
        ShapeKind::Cube { half_width: 0.5 },
    ] {
        let coarse = ReferenceShape::new(kind).unwrap();
        let fine = ReferenceShape::with_level(kind, 2 * DEFAULT_LEVEL).unwrap();
        let a = newtonian_potential_quadrature(&coarse, x);
        let b = newtonian_potential_quadrature(&fine, x);
        assert!(rel(a, b) < 1e-3, "{kind:?}: {a} vs {b}");
        let p = [1.7, 0.4, -0.9];
        let sa = single_layer_normal(&coarse, p).unwrap().value;
        let sb = single_layer_normal(&fine, p).unwrap().value;
        let scale = sb.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = (0..3).map(|i| (sa[i] - sb[i]).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-3 * scale, "{kind:?}: {sa:?} vs {sb:?}");
    }
}

#[test]
fn ellipsoid_single_layer_at_an_off_centre_point() {
    let kind = ShapeKind::Ellipsoid {
        semi_axes: [2.0, 1.0, 1.0],
    };
    let x = [0.5, 0.2, 0.1];
    let a = single_layer_normal(&ReferenceShape::with_level(kind, 32).unwrap(), x).unwrap();
    let b = single_layer_normal(&ReferenceShape::with_level(kind, 64).unwrap(), x).unwrap();
    for i in 0..3 {
        assert!((a.value[i] - b.value[i]).abs() < 1e-3, "{:?} {:?}", a.value, b.value);
    }
    let centre = single_layer_normal(&ReferenceShape::new(kind).unwrap(), [0.0; 3]).unwrap();
    assert!(centre.value.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn surfaces_are_closed() {
    for kind in [
        ShapeKind::unit_ball(),
        ShapeKind::Ellipsoid {
            semi_axes: [2.0, 1.0, 0.5],
        },
        ShapeKind::Cube { half_width: 0.5 },
    ] {
        let s = ReferenceShape::new(kind).unwrap();
        let m = s.surface_moment();
        assert!(m.iter().all(|v| v.abs() < 1e-6), "{kind:?}: {m:?}");
        assert!((s.quadrature_volume() / kind.volume() - 1.0).abs() < 1e-4);
    }
}
