//! Laplace fundamental solution, Newtonian and single-layer potentials of
//! the reference shapes used for small anomalies. Shapes are centred at the
//! origin.

use std::f64::consts::PI;
use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default quadrature level: radial and polar cell counts, half the
/// azimuthal count, and per-axis cell count on the cube.
pub const DEFAULT_LEVEL: usize = 32;
/// Cells whose centre lies within this many cell widths of the evaluation
/// point are replaced by the equal-volume ball average.
pub const NEAR_CELL_WIDTHS: f64 = 2.0;

/// `-1 / (4 pi |x|)`.
pub fn gamma_fund(x: [f64; 3]) -> Result<f64> {
    let r = norm(x);
    if r == 0.0 {
        return Err(Error::InvalidArgument("fundamental solution is singular at 0".into()));
    }
    Ok(-1.0 / (4.0 * PI * r))
}

#[inline]
fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Integral of `Gamma(x - y)` over a ball of radius `rho` whose centre is at
/// distance `d` from `x`.
fn ball_potential(rho: f64, d: f64) -> f64 {
    if d < rho {
        -(3.0 * rho * rho - d * d) / 6.0
    } else {
        -rho.powi(3) / (3.0 * d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeKind {
    Ball { radius: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
    Cube { half_width: f64 },
}

impl ShapeKind {
    pub fn unit_ball() -> Self {
        ShapeKind::Ball { radius: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let good = match *self {
            ShapeKind::Ball { radius } => ok(radius),
            ShapeKind::Ellipsoid { semi_axes } => semi_axes.iter().all(|&a| ok(a)),
            ShapeKind::Cube { half_width } => ok(half_width),
        };
        if good {
            Ok(())
        } else {
            Err(Error::Shape(format!("dimensions of {self:?} must be positive")))
        }
    }

    pub fn volume(&self) -> f64 {
        match *self {
            ShapeKind::Ball { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            ShapeKind::Ellipsoid { semi_axes: [a, b, c] } => 4.0 / 3.0 * PI * a * b * c,
            ShapeKind::Cube { half_width } => (2.0 * half_width).powi(3),
        }
    }

    /// Largest distance from the origin to a point of the shape.
    pub fn circumradius(&self) -> f64 {
        match *self {
            ShapeKind::Ball { radius } => radius,
            ShapeKind::Ellipsoid { semi_axes } => semi_axes.iter().cloned().fold(0.0, f64::max),
            ShapeKind::Cube { half_width } => half_width * 3f64.sqrt(),
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.circumradius()
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        match *self {
            ShapeKind::Ball { radius } => norm(x) <= radius,
            ShapeKind::Ellipsoid { semi_axes } => {
                (0..3).map(|i| (x[i] / semi_axes[i]).powi(2)).sum::<f64>() <= 1.0
            }
            ShapeKind::Cube { half_width } => x.iter().all(|v| v.abs() <= half_width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeCell {
    pub center: [f64; 3],
    pub weight: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Panel {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub area: f64,
    pub diameter: f64,
}

/// A shape with its volume cells and surface panels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceShape {
    kind: ShapeKind,
    level: usize,
    cells: Vec<VolumeCell>,
    panels: Vec<Panel>,
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("positive order"));
    let mut pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (*x, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

impl ReferenceShape {
    pub fn new(kind: ShapeKind) -> Result<Self> {
        Self::with_level(kind, DEFAULT_LEVEL)
    }

    pub fn unit_ball() -> Self {
        Self::new(ShapeKind::unit_ball()).expect("unit ball is valid")
    }

    pub fn with_level(kind: ShapeKind, level: usize) -> Result<Self> {
        kind.validate()?;
        if level < 2 {
            return Err(Error::Shape(format!("quadrature level {level} is below 2")));
        }
        let (cells, panels) = match kind {
            ShapeKind::Ball { radius } => spherical(level, [radius; 3]),
            ShapeKind::Ellipsoid { semi_axes } => spherical(level, semi_axes),
            ShapeKind::Cube { half_width } => cube(level, half_width),
        };
        Ok(Self {
            kind,
            level,
            cells,
            panels,
        })
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn cells(&self) -> &[VolumeCell] {
        &self.cells
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    pub fn volume(&self) -> f64 {
        self.kind.volume()
    }

    pub fn quadrature_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.weight).sum()
    }

    /// `sum area * normal`, zero for a closed surface.
    pub fn surface_moment(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in &self.panels {
            for a in 0..3 {
                m[a] += p.area * p.normal[a];
            }
        }
        m
    }

    pub fn write_volume_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "x [length],y [length],z [length],weight [volume],width [length]")?;
        for c in &self.cells {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                c.center[0], c.center[1], c.center[2], c.weight, c.width
            )?;
        }
        Ok(())
    }

    pub fn write_surface_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "x [length],y [length],z [length],nx [1],ny [1],nz [1],area [area]"
        )?;
        for p in &self.panels {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                p.center[0], p.center[1], p.center[2], p.normal[0], p.normal[1], p.normal[2], p.area
            )?;
        }
        Ok(())
    }
}

/// Cells of the unit ball in `(r, cos theta, phi)`, each weighted by its
/// exact volume, then stretched by `axes`. Surface panels use a Gauss rule
/// in `cos theta` and the midpoint rule in `phi`.
fn spherical(level: usize, axes: [f64; 3]) -> (Vec<VolumeCell>, Vec<Panel>) {
    let n_r = level;
    let n_t = level;
    let n_p = 2 * level;
    let dr = 1.0 / n_r as f64;
    let dmu = 2.0 / n_t as f64;
    let dphi = 2.0 * PI / n_p as f64;
    let jac = axes[0] * axes[1] * axes[2];
    let stretch = axes.iter().cloned().fold(0.0, f64::max);
    let mut cells = Vec::with_capacity(n_r * n_t * n_p);
    for ir in 0..n_r {
        let (r1, r2) = (ir as f64 * dr, (ir + 1) as f64 * dr);
        let rc = (0.5 * (r1.powi(3) + r2.powi(3))).cbrt();
        let shell = (r2.powi(3) - r1.powi(3)) / 3.0;
        for it in 0..n_t {
            let (mu1, mu2) = (-1.0 + it as f64 * dmu, -1.0 + (it + 1) as f64 * dmu);
            let mu = 0.5 * (mu1 + mu2);
            let s = (1.0 - mu * mu).sqrt();
            let dtheta = mu1.clamp(-1.0, 1.0).acos() - mu2.clamp(-1.0, 1.0).acos();
            let s_max = if mu1 <= 0.0 && mu2 >= 0.0 {
                1.0
            } else {
                (1.0 - mu1.abs().min(mu2.abs()).powi(2)).sqrt()
            };
            for ip in 0..n_p {
                let phi = (ip as f64 + 0.5) * dphi;
                let u = [rc * s * phi.cos(), rc * s * phi.sin(), rc * mu];
                let width = stretch * dr.max(r2 * dtheta).max(r2 * s_max * dphi);
                cells.push(VolumeCell {
                    center: [axes[0] * u[0], axes[1] * u[1], axes[2] * u[2]],
                    weight: jac * shell * dmu * dphi,
                    width,
                });
            }
        }
    }
    let [a, b, c] = axes;
    let mut panels = Vec::with_capacity(n_t * n_p);
    for (mu, w) in gauss_legendre(n_t) {
        let s = (1.0 - mu * mu).sqrt();
        for ip in 0..n_p {
            let phi = (ip as f64 + 0.5) * dphi;
            let (cp, sp) = (phi.cos(), phi.sin());
            let v = [b * c * s * cp, a * c * s * sp, a * b * mu];
            let len = norm(v);
            let area = len * w * dphi;
            panels.push(Panel {
                center: [a * s * cp, b * s * sp, c * mu],
                normal: [v[0] / len, v[1] / len, v[2] / len],
                area,
                diameter: (2.0 * area).sqrt(),
            });
        }
    }
    (cells, panels)
}

fn cube(level: usize, half: f64) -> (Vec<VolumeCell>, Vec<Panel>) {
    let m = level;
    let step = 2.0 * half / m as f64;
    let mid = |i: usize| -half + (i as f64 + 0.5) * step;
    let mut cells = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                cells.push(VolumeCell {
                    center: [mid(i), mid(j), mid(k)],
                    weight: step.powi(3),
                    width: step,
                });
            }
        }
    }
    let mut panels = Vec::with_capacity(6 * m * m);
    for axis in 0..3 {
        let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            for j in 0..m {
                for i in 0..m {
                    let mut center = [0.0; 3];
                    center[axis] = sign * half;
                    center[p] = mid(i);
                    center[q] = mid(j);
                    let mut normal = [0.0; 3];
                    normal[axis] = sign;
                    panels.push(Panel {
                        center,
                        normal,
                        area: step * step,
                        diameter: step * 2f64.sqrt(),
                    });
                }
            }
        }
    }
    (cells, panels)
}

/// `int_B Gamma(x - y) dy`: closed form for balls, quadrature otherwise.
pub fn newtonian_potential(shape: &ReferenceShape, x: [f64; 3]) -> f64 {
    match shape.kind {
        ShapeKind::Ball { radius } => ball_potential(radius, norm(x)),
        _ => newtonian_potential_quadrature(shape, x),
    }
}

/// Cell quadrature of the Newtonian potential with the near-singular cells
/// replaced by equal-volume ball averages.
pub fn newtonian_potential_quadrature(shape: &ReferenceShape, x: [f64; 3]) -> f64 {
    shape
        .cells
        .iter()
        .map(|c| {
            let d = norm(sub(x, c.center));
            if d <= NEAR_CELL_WIDTHS * c.width {
                let rho = (3.0 * c.weight / (4.0 * PI)).cbrt();
                ball_potential(rho, d)
            } else {
                -c.weight / (4.0 * PI * d)
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingleLayer {
    pub value: [f64; 3],
    pub min_distance: f64,
    /// Set when the point is closer to a panel than that panel's diameter.
    pub degraded: bool,
}

/// `int_{dB} Gamma(x - y) nu(y) dsigma(y)` by panel quadrature.
pub fn single_layer_normal(shape: &ReferenceShape, x: [f64; 3]) -> Result<SingleLayer> {
    let mut value = [0.0; 3];
    let mut min_distance = f64::INFINITY;
    let mut degraded = false;
    for p in &shape.panels {
        let d = norm(sub(x, p.center));
        if d == 0.0 {
            return Err(Error::InvalidArgument(format!("{x:?} lies on a panel centre")));
        }
        min_distance = min_distance.min(d);
        degraded |= d < p.diameter;
        let g = -p.area / (4.0 * PI * d);
        for a in 0..3 {
            value[a] += g * p.normal[a];
        }
    }
    if degraded {
        log::warn!("single layer at {x:?}: panel distance {min_distance:.3e} below panel size");
    }
    Ok(SingleLayer {
        value,
        min_distance,
        degraded,
    })
}
