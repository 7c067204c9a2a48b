//! Structured node-centred grids on an axis-aligned box, complex node
//! fields, and real coefficient fields with declared Hölder data.
//!
//! Nodes are numbered `i + n*(j + n*k)` with `i` running fastest along x.
//! Every node owns a dual cell; cells on a boundary plane are cut in half
//! along that axis, so the dual-cell weights tile the box exactly.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Smallest admissible number of nodes per axis.
pub const MIN_NODES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    extent: [f64; 3],
    n: usize,
    h: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: [usize; 3],
    pub coord: [f64; 3],
}

impl Domain {
    /// Box `[0, extent[0]] x [0, extent[1]] x [0, extent[2]]` with `n` nodes per axis.
    pub fn new(extent: [f64; 3], n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::InvalidDomain(format!(
                "n = {n} is too coarse; need at least {MIN_NODES} nodes per axis"
            )));
        }
        if extent.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::InvalidDomain(format!(
                "extent {extent:?} must be finite and positive"
            )));
        }
        let h = extent.map(|e| e / (n - 1) as f64);
        Ok(Self { extent, n, h })
    }

    pub fn unit_cube(n: usize) -> Result<Self> {
        Self::new([1.0; 3], n)
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> [f64; 3] {
        self.h
    }

    /// Largest spacing over the three axes.
    pub fn h_max(&self) -> f64 {
        self.h.iter().cloned().fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    pub fn node_count(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn has_center_node(&self) -> bool {
        self.n % 2 == 1
    }

    pub fn center(&self) -> [f64; 3] {
        self.extent.map(|e| 0.5 * e)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    #[inline]
    pub fn coord_of(&self, ijk: [usize; 3]) -> [f64; 3] {
        [
            ijk[0] as f64 * self.h[0],
            ijk[1] as f64 * self.h[1],
            ijk[2] as f64 * self.h[2],
        ]
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> [f64; 3] {
        self.coord_of(self.ijk(idx))
    }

    pub fn point(&self, idx: usize) -> GridPoint {
        let index = self.ijk(idx);
        GridPoint {
            index,
            coord: self.coord_of(index),
        }
    }

    /// Index triple of the node nearest to `x` (clamped into the box).
    pub fn nearest_ijk(&self, x: [f64; 3]) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] / self.h[a]).round();
            out[a] = t.clamp(0.0, (self.n - 1) as f64) as usize;
        }
        out
    }

    pub fn nearest_node(&self, x: [f64; 3]) -> usize {
        let [i, j, k] = self.nearest_ijk(x);
        self.index(i, j, k)
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        (0..3).all(|a| x[a] >= 0.0 && x[a] <= self.extent[a])
    }

    /// Distance from `x` to the boundary of the box (negative outside).
    pub fn dist_to_boundary(&self, x: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| x[a].min(self.extent[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_extent(&self) -> f64 {
        self.extent.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Dual-cell width fraction along one axis: 1/2 on the two end planes.
    #[inline]
    pub fn axis_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5
        } else {
            1.0
        }
    }

    /// Dual-cell volume of node `idx` as a fraction of `h^3`.
    #[inline]
    pub fn cell_weight(&self, idx: usize) -> f64 {
        let [i, j, k] = self.ijk(idx);
        self.axis_weight(i) * self.axis_weight(j) * self.axis_weight(k)
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        self.ijk(idx).iter().any(|&i| i == 0 || i + 1 == self.n)
    }

    /// Physical distance between two points.
    pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    pub fn same_grid(&self, other: &Domain) -> bool {
        self.n == other.n && self.extent == other.extent
    }
}

/// Complex node values on a [`Domain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: Domain,
    values: Vec<C64>,
}

impl ScalarField {
    pub fn zeros(domain: Domain) -> Self {
        Self {
            domain,
            values: vec![C64::new(0.0, 0.0); domain.node_count()],
        }
    }

    pub fn from_values(domain: Domain, values: Vec<C64>) -> Result<Self> {
        if values.len() != domain.node_count() {
            return Err(Error::DomainMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                domain.node_count()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidArgument("field contains non-finite values".into()));
        }
        Ok(Self { domain, values })
    }

    pub fn from_fn(domain: Domain, f: impl Fn([f64; 3]) -> C64) -> Self {
        let values = (0..domain.node_count()).map(|i| f(domain.coord(i))).collect();
        Self { domain, values }
    }

    pub fn from_real_fn(domain: Domain, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self::from_fn(domain, |x| C64::new(f(x), 0.0))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> C64 {
        self.values[idx]
    }

    /// Value at the node nearest to `x`.
    pub fn at_point(&self, x: [f64; 3]) -> C64 {
        self.values[self.domain.nearest_node(x)]
    }

    /// Dual-cell quadrature of the field over the box.
    pub fn integral(&self) -> C64 {
        let vol = self.domain.cell_volume();
        let mut acc = C64::new(0.0, 0.0);
        for (idx, v) in self.values.iter().enumerate() {
            acc += v * self.domain.cell_weight(idx);
        }
        acc * vol
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn conj(&self) -> Self {
        Self {
            domain: self.domain,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            domain: self.domain,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &ScalarField, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if !self.domain.same_grid(&other.domain) {
            return Err(Error::DomainMismatch("fields live on different grids".into()));
        }
        Ok(Self {
            domain: self.domain,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Smoothness class declared by a coefficient generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessClass {
    C0,
    C0Lambda,
    C1Lambda,
    C2,
}

fn default_lambda() -> f64 {
    0.5
}

/// Analytic coefficient families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `gamma0` everywhere.
    Constant {
        gamma0: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    /// `gamma0 + a |x - center|^lambda`: exactly C^{0,lambda} with seminorm `a`.
    HoelderBump {
        gamma0: f64,
        a: f64,
        #[serde(default)]
        center: Option<[f64; 3]>,
        lambda: f64,
    },
    /// `gamma0 + a |x - center|^(1 + lambda)`: C^{1,lambda}, gradient vanishing at `center`.
    GradientHoelderBump {
        gamma0: f64,
        a: f64,
        #[serde(default)]
        center: Option<[f64; 3]>,
        lambda: f64,
    },
    /// `gamma0 (1 + a prod_i cos(pi x_i / L_i))`, a C^2 field.
    SmoothWave {
        gamma0: f64,
        a: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    /// `1 / (3 mu_s)` for a scattering field described by `mu_s`.
    DiffusionRecip { mu_s: Box<CoefficientSpec> },
}

impl CoefficientSpec {
    pub fn constant(gamma0: f64) -> Self {
        CoefficientSpec::Constant {
            gamma0,
            lambda: default_lambda(),
        }
    }

    pub fn diffusion_of_constant(mu_s: f64) -> Self {
        CoefficientSpec::DiffusionRecip {
            mu_s: Box::new(CoefficientSpec::constant(mu_s)),
        }
    }

    fn declared_lambda(&self) -> f64 {
        match self {
            CoefficientSpec::Constant { lambda, .. }
            | CoefficientSpec::HoelderBump { lambda, .. }
            | CoefficientSpec::GradientHoelderBump { lambda, .. }
            | CoefficientSpec::SmoothWave { lambda, .. } => *lambda,
            CoefficientSpec::DiffusionRecip { mu_s } => mu_s.declared_lambda(),
        }
    }

    fn class(&self) -> SmoothnessClass {
        match self {
            CoefficientSpec::Constant { .. } | CoefficientSpec::SmoothWave { .. } => {
                SmoothnessClass::C2
            }
            CoefficientSpec::HoelderBump { .. } => SmoothnessClass::C0Lambda,
            CoefficientSpec::GradientHoelderBump { .. } => SmoothnessClass::C1Lambda,
            CoefficientSpec::DiffusionRecip { mu_s } => mu_s.class(),
        }
    }

    /// Point evaluation of the generator formula.
    pub fn evaluate(&self, domain: &Domain, x: [f64; 3]) -> f64 {
        match self {
            CoefficientSpec::Constant { gamma0, .. } => *gamma0,
            CoefficientSpec::HoelderBump {
                gamma0,
                a,
                center,
                lambda,
            } => {
                let z = center.unwrap_or_else(|| domain.center());
                gamma0 + a * Domain::distance(x, z).powf(*lambda)
            }
            CoefficientSpec::GradientHoelderBump {
                gamma0,
                a,
                center,
                lambda,
            } => {
                let z = center.unwrap_or_else(|| domain.center());
                gamma0 + a * Domain::distance(x, z).powf(1.0 + lambda)
            }
            CoefficientSpec::SmoothWave { gamma0, a, .. } => {
                let l = domain.extent();
                let prod: f64 = (0..3).map(|i| (PI * x[i] / l[i]).cos()).product();
                gamma0 * (1.0 + a * prod)
            }
            CoefficientSpec::DiffusionRecip { mu_s } => 1.0 / (3.0 * mu_s.evaluate(domain, x)),
        }
    }

    fn check_params(&self) -> Result<()> {
        let lambda = self.declared_lambda();
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidCoefficient(format!(
                "Hölder exponent {lambda} must lie in (0, 1)"
            )));
        }
        match self {
            CoefficientSpec::HoelderBump { a, .. } | CoefficientSpec::GradientHoelderBump { a, .. }
                if !a.is_finite() || *a < 0.0 =>
            {
                Err(Error::InvalidCoefficient(format!(
                    "bump amplitude {a} must be finite and non-negative"
                )))
            }
            CoefficientSpec::DiffusionRecip { mu_s } => mu_s.check_params(),
            _ => Ok(()),
        }
    }

    /// Declared Hölder seminorm of the generated field on `domain`.
    fn declared_seminorm(&self, domain: &Domain, values: &[f64]) -> f64 {
        match self {
            CoefficientSpec::Constant { .. } => 0.0,
            CoefficientSpec::HoelderBump { a, .. } => *a,
            CoefficientSpec::GradientHoelderBump { a, .. } => *a,
            CoefficientSpec::SmoothWave { gamma0, a, lambda } => {
                let l = domain.extent();
                let lip = (gamma0 * a).abs()
                    * PI
                    * (1.0 / (l[0] * l[0]) + 1.0 / (l[1] * l[1]) + 1.0 / (l[2] * l[2])).sqrt();
                let diam = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
                lip * diam.powf(1.0 - lambda)
            }
            CoefficientSpec::DiffusionRecip { mu_s } => {
                // |1/(3a) - 1/(3b)| <= |a - b| / (3 min^2)
                let mu: Vec<f64> = values.iter().map(|g| 1.0 / (3.0 * g)).collect();
                let mu_min = mu.iter().cloned().fold(f64::INFINITY, f64::min);
                mu_s.declared_seminorm(domain, &mu) / (3.0 * mu_min * mu_min)
            }
        }
    }
}

/// Real positive coefficient samples together with their declared regularity.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    domain: Domain,
    values: Vec<f64>,
    nu: f64,
    lambda: f64,
    seminorm: f64,
    smoothness: SmoothnessClass,
    spec: Option<CoefficientSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipticity {
    pub nu_effective: f64,
    pub ok: bool,
}

/// `nu_effective = min(min gamma, 1 / max gamma)`.
pub fn validate_ellipticity(values: &[f64]) -> Ellipticity {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Ellipticity {
            nu_effective: 0.0,
            ok: false,
        };
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nu_effective = if min <= 0.0 { min } else { min.min(1.0 / max) };
    Ellipticity {
        nu_effective,
        ok: nu_effective > 0.0,
    }
}

/// Samples `spec` at every node of `domain`.
pub fn generate_coefficient(domain: &Domain, spec: &CoefficientSpec) -> Result<CoefficientField> {
    spec.check_params()?;
    let values: Vec<f64> = (0..domain.node_count())
        .map(|i| spec.evaluate(domain, domain.coord(i)))
        .collect();
    let ell = validate_ellipticity(&values);
    if !ell.ok {
        return Err(Error::InvalidCoefficient(format!(
            "generated field is not elliptic (nu_effective = {:.3e})",
            ell.nu_effective
        )));
    }
    let seminorm = spec.declared_seminorm(domain, &values);
    Ok(CoefficientField {
        domain: *domain,
        nu: ell.nu_effective,
        lambda: spec.declared_lambda(),
        seminorm,
        smoothness: spec.class(),
        spec: Some(spec.clone()),
        values,
    })
}

impl CoefficientField {
    /// Wraps arbitrary samples; the declared data is taken on trust.
    pub fn from_values(
        domain: Domain,
        values: Vec<f64>,
        lambda: f64,
        seminorm: f64,
        smoothness: SmoothnessClass,
    ) -> Result<Self> {
        if values.len() != domain.node_count() {
            return Err(Error::DomainMismatch(format!(
                "{} coefficient values for {} nodes",
                values.len(),
                domain.node_count()
            )));
        }
        if !(lambda > 0.0 && lambda < 1.0) || !(seminorm >= 0.0) {
            return Err(Error::InvalidCoefficient(format!(
                "declared (lambda, seminorm) = ({lambda}, {seminorm}) out of range"
            )));
        }
        let ell = validate_ellipticity(&values);
        if !ell.ok {
            return Err(Error::InvalidCoefficient(format!(
                "field is not elliptic (nu_effective = {:.3e})",
                ell.nu_effective
            )));
        }
        Ok(Self {
            domain,
            values,
            nu: ell.nu_effective,
            lambda,
            seminorm,
            smoothness,
            spec: None,
        })
    }

    /// The constant field `gamma(x_node)` where `x_node` is the node nearest `y`.
    pub fn frozen_at(&self, y: [f64; 3]) -> Self {
        let g0 = self.values[self.domain.nearest_node(y)];
        let mut out = generate_coefficient(&self.domain, &CoefficientSpec::constant(g0))
            .expect("a positive constant is always elliptic");
        out.lambda = self.lambda;
        out
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn seminorm(&self) -> f64 {
        self.seminorm
    }

    pub fn smoothness(&self) -> SmoothnessClass {
        self.smoothness
    }

    pub fn spec(&self) -> Option<&CoefficientSpec> {
        self.spec.as_ref()
    }

    /// Modulus of continuity `theta(r) = seminorm * r^lambda`.
    pub fn modulus(&self, r: f64) -> f64 {
        self.seminorm * r.powf(self.lambda)
    }

    pub fn is_constant(&self) -> bool {
        let first = self.values[0];
        self.values.iter().all(|&v| v == first)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}
