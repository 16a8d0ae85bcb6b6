//! Conditional statistics of a turbulent velocity field and the PDE
//! coefficients derived from them.
//!
//! A flow is described by its conditional average increment `ρ(x, y, u, t)`
//! and conditional covariance `σ(x, y, u, t)`. From those the transport
//! equation for the one-point velocity density needs
//!
//! * `B^i_k = ∂ρ^i/∂y^k` at `y = x` (conditional mean velocity gradient),
//! * `A^i = Δ_y ρ^i` at `y = x`,
//! * `Q^i`, a Newtonian-kernel integral of `∂_j∂_k(σ^{jk} + b^j b^k)`,
//! * `C^i = ν ∂B^i_k/∂x^k - ν A^i + Q^i`.
//!
//! Derivatives are central differences; see [`crate::quadrature::fd_step`]
//! for the step rule.

mod catalog;
mod classify;

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, fd_step, QuadratureConfig};
use crate::vec3::{self, Mat3, Vec3};

pub use catalog::{
    catalog_names, catalog_statistics, AnisotropicGaussianStatistics, QuadraticRhoStatistics, StatisticsFn,
    ZeroStatistics,
};
pub use classify::{classify_flow, ClassificationReport, DivergenceDiagnostics, SamplePoint};

/// Structural class a set of statistics claims to belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowClass {
    General,
    WeaklyHomogeneous,
    WeaklyIsotropic,
}

/// Which form of the transport equation a [`FlowSpec`] is solved in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    General,
    WeaklyHomogeneous,
    WeaklyIsotropic,
    Inviscid,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::General => "general",
            Regime::WeaklyHomogeneous => "weakly_homogeneous",
            Regime::WeaklyIsotropic => "weakly_isotropic",
            Regime::Inviscid => "inviscid",
        };
        f.write_str(s)
    }
}

/// Conditional average increment `ρ` and conditional covariance `σ`.
///
/// Implementations must satisfy `ρ(x, x, u, t) = 0` and return a symmetric
/// positive semi-definite `σ`.
pub trait ConditionalStatistics: Send + Sync {
    fn name(&self) -> &str;

    fn rho(&self, x: &Vec3, y: &Vec3, u: &Vec3, t: f64) -> Vec3;

    fn sigma(&self, x: &Vec3, y: &Vec3, u: &Vec3, t: f64) -> Mat3;

    fn claimed_class(&self) -> FlowClass {
        FlowClass::General
    }

    /// `true` when `ρ` is identically zero, letting `B` and `A` skip the
    /// stencils and return exact zeros.
    fn rho_vanishes(&self) -> bool {
        false
    }

    /// A closed-form drift `C` for this model at the given viscosity, when
    /// one is known. Estimators use it instead of re-integrating `Q` at
    /// every step.
    fn closed_form_drift(&self, _viscosity: f64) -> Option<Arc<dyn VectorField>> {
        None
    }
}

/// A vector field `F(x, u, t)`, used for the drift `C` (or `Q` when
/// inviscid) along characteristics.
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &Vec3, u: &Vec3, t: f64) -> Vec3;

    /// `∇_u · F`. Defaults to a central difference.
    fn div_u(&self, x: &Vec3, u: &Vec3, t: f64) -> f64 {
        let h = fd_step(x, u);
        (0..3)
            .map(|k| {
                let e = vec3::unit(k, h);
                (self.eval(x, &vec3::add(u, &e), t)[k] - self.eval(x, &vec3::sub(u, &e), t)[k]) / (2.0 * h)
            })
            .sum()
    }

    /// `true` if the field is known not to depend on `x`.
    fn ignores_position(&self) -> bool {
        false
    }
}

/// `F ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl VectorField for ZeroField {
    fn eval(&self, _x: &Vec3, _u: &Vec3, _t: f64) -> Vec3 {
        vec3::ZERO
    }

    fn div_u(&self, _x: &Vec3, _u: &Vec3, _t: f64) -> f64 {
        0.0
    }

    fn ignores_position(&self) -> bool {
        true
    }
}

/// Affine field `F = G_u u + G_x x + offset` with constant matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineField {
    pub velocity_gain: Mat3,
    pub position_gain: Mat3,
    pub offset: Vec3,
}

impl AffineField {
    /// `F = -k u`, isotropic linear damping.
    pub fn damping(k: f64) -> Self {
        Self {
            velocity_gain: vec3::diag(&[-k; 3]),
            position_gain: vec3::ZERO_MAT,
            offset: vec3::ZERO,
        }
    }

    pub fn constant(offset: Vec3) -> Self {
        Self {
            velocity_gain: vec3::ZERO_MAT,
            position_gain: vec3::ZERO_MAT,
            offset,
        }
    }
}

impl VectorField for AffineField {
    fn eval(&self, x: &Vec3, u: &Vec3, _t: f64) -> Vec3 {
        let gu = vec3::mat_vec(&self.velocity_gain, u);
        let gx = vec3::mat_vec(&self.position_gain, x);
        vec3::add(&vec3::add(&gu, &gx), &self.offset)
    }

    fn div_u(&self, _x: &Vec3, _u: &Vec3, _t: f64) -> f64 {
        vec3::trace(&self.velocity_gain)
    }

    fn ignores_position(&self) -> bool {
        vec3::mat_max_abs(&self.position_gain) == 0.0
    }
}

type DensityFn = dyn Fn(&Vec3, &Vec3) -> f64 + Send + Sync;
type FieldFn = dyn Fn(&Vec3, &Vec3, f64) -> Vec3 + Send + Sync;
type DivFn = dyn Fn(&Vec3, &Vec3, f64) -> f64 + Send + Sync;

/// Closure-backed field with an optional analytic divergence.
#[derive(Clone)]
pub struct FnField {
    f: Arc<FieldFn>,
    div: Option<Arc<DivFn>>,
    position_free: bool,
}

impl FnField {
    pub fn new(f: impl Fn(&Vec3, &Vec3, f64) -> Vec3 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            div: None,
            position_free: false,
        }
    }

    pub fn with_divergence(mut self, div: impl Fn(&Vec3, &Vec3, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.div = Some(Arc::new(div));
        self
    }

    /// Declare that the closure ignores `x`.
    pub fn position_free(mut self) -> Self {
        self.position_free = true;
        self
    }
}

impl VectorField for FnField {
    fn eval(&self, x: &Vec3, u: &Vec3, t: f64) -> Vec3 {
        (self.f)(x, u, t)
    }

    fn div_u(&self, x: &Vec3, u: &Vec3, t: f64) -> f64 {
        match &self.div {
            Some(d) => d(x, u, t),
            None => {
                let h = fd_step(x, u);
                (0..3)
                    .map(|k| {
                        let e = vec3::unit(k, h);
                        ((self.f)(x, &vec3::add(u, &e), t)[k] - (self.f)(x, &vec3::sub(u, &e), t)[k]) / (2.0 * h)
                    })
                    .sum()
            }
        }
    }

    fn ignores_position(&self) -> bool {
        self.position_free
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField")
            .field("analytic_divergence", &self.div.is_some())
            .field("position_free", &self.position_free)
            .finish()
    }
}

/// Where a flow's drift comes from.
#[derive(Clone)]
pub enum CoefficientSource {
    Statistics(Arc<dyn ConditionalStatistics>),
    /// `C(x, u, t)` given directly.
    DirectC(Arc<dyn VectorField>),
    /// `Q(x, u, t)` given directly; inviscid flows only.
    DirectQ(Arc<dyn VectorField>),
}

impl fmt::Debug for CoefficientSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientSource::Statistics(s) => write!(f, "Statistics({})", s.name()),
            CoefficientSource::DirectC(_) => f.write_str("DirectC"),
            CoefficientSource::DirectQ(_) => f.write_str("DirectQ"),
        }
    }
}

/// A complete flow model: viscosity, regime, and coefficient source.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub name: String,
    pub viscosity: f64,
    pub regime: Regime,
    pub source: CoefficientSource,
    pub quadrature: QuadratureConfig,
}

/// Positions used to check that a drift ignores `x`.
const POSITION_PROBES: [Vec3; 3] = [[0.0, 0.0, 0.0], [1.5, -2.0, 0.7], [-3.0, 0.4, 5.0]];
const VELOCITY_PROBES: [Vec3; 3] = [[0.3, -0.2, 0.9], [-1.1, 0.5, 0.25], [2.0, 1.0, -0.6]];

impl FlowSpec {
    /// Validates regime/viscosity consistency before building the spec.
    pub fn new(name: impl Into<String>, viscosity: f64, regime: Regime, source: CoefficientSource) -> Result<Self> {
        let flow = Self {
            name: name.into(),
            viscosity,
            regime,
            source,
            quadrature: QuadratureConfig::default(),
        };
        flow.validate()?;
        Ok(flow)
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureConfig) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity >= 0.0) || !self.viscosity.is_finite() {
            return Err(Error::Config(format!("viscosity must be finite and >= 0 (got {})", self.viscosity)));
        }
        if self.regime == Regime::Inviscid && self.viscosity != 0.0 {
            return Err(Error::Config(format!(
                "regime inviscid requires nu = 0 (got {})",
                self.viscosity
            )));
        }
        if matches!(self.source, CoefficientSource::DirectQ(_)) && self.regime != Regime::Inviscid {
            return Err(Error::Config("a direct Q field is only meaningful for the inviscid regime".into()));
        }
        if self.regime == Regime::WeaklyIsotropic {
            if let Some(drift) = self.cheap_drift() {
                check_position_free(drift.as_ref())?;
            }
        }
        Ok(())
    }

    fn cheap_drift(&self) -> Option<Arc<dyn VectorField>> {
        match &self.source {
            CoefficientSource::DirectC(c) | CoefficientSource::DirectQ(c) => Some(Arc::clone(c)),
            CoefficientSource::Statistics(s) => s.closed_form_drift(self.viscosity),
        }
    }

    /// The drift driving the characteristics: `C`, or `Q` when inviscid.
    pub fn drift(&self) -> Arc<dyn VectorField> {
        if let Some(d) = self.cheap_drift() {
            return d;
        }
        match &self.source {
            CoefficientSource::Statistics(s) => Arc::new(DerivedDrift {
                statistics: Arc::clone(s),
                viscosity: self.viscosity,
                quadrature: QuadratureConfig {
                    check_truncation: false,
                    ..self.quadrature.clone()
                },
            }),
            _ => unreachable!("direct sources always have a cheap drift"),
        }
    }

    pub fn statistics(&self) -> Option<&Arc<dyn ConditionalStatistics>> {
        match &self.source {
            CoefficientSource::Statistics(s) => Some(s),
            _ => None,
        }
    }
}

fn check_position_free(drift: &dyn VectorField) -> Result<()> {
    if drift.ignores_position() {
        return Ok(());
    }
    for u in &VELOCITY_PROBES {
        let reference = drift.eval(&POSITION_PROBES[0], u, 0.5);
        for x in &POSITION_PROBES[1..] {
            let other = drift.eval(x, u, 0.5);
            let scale = 1.0 + vec3::max_abs(&reference);
            if vec3::max_abs(&vec3::sub(&reference, &other)) > 1e-10 * scale {
                return Err(Error::Config(format!(
                    "regime weakly_isotropic needs a drift independent of x, but it differs between {} and {}",
                    vec3::format_point(&POSITION_PROBES[0]),
                    vec3::format_point(x)
                )));
            }
        }
    }
    Ok(())
}

/// `C` computed from statistics on every call. Slow: each evaluation runs
/// the singular integral.
struct DerivedDrift {
    statistics: Arc<dyn ConditionalStatistics>,
    viscosity: f64,
    quadrature: QuadratureConfig,
}

impl VectorField for DerivedDrift {
    fn eval(&self, x: &Vec3, u: &Vec3, t: f64) -> Vec3 {
        match drift_from_statistics(self.statistics.as_ref(), self.viscosity, x, u, t, &self.quadrature) {
            Ok(f) => f.c,
            Err(e) => {
                log::error!("drift evaluation failed: {e}");
                [f64::NAN; 3]
            }
        }
    }
}

/// Density of the initial velocity field, `p0(u; x)`.
#[derive(Clone)]
pub struct InitialDensity {
    pub name: String,
    /// Claimed `m` with `p0(u; x) |u|^m → 0`.
    pub decay_exponent: f64,
    f: Arc<DensityFn>,
}

impl InitialDensity {
    pub fn new(
        name: impl Into<String>,
        decay_exponent: f64,
        f: impl Fn(&Vec3, &Vec3) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(decay_exponent >= 1.0) {
            return Err(Error::Config(format!("decay exponent must be >= 1 (got {decay_exponent})")));
        }
        Ok(Self {
            name: name.into(),
            decay_exponent,
            f: Arc::new(f),
        })
    }

    #[inline]
    pub fn eval(&self, u: &Vec3, x: &Vec3) -> f64 {
        (self.f)(u, x)
    }

    /// Points among `samples` where `p0 < 0`. Nothing is clamped.
    pub fn negativity(&self, samples: &[(Vec3, Vec3)]) -> Vec<(Vec3, Vec3, f64)> {
        samples
            .iter()
            .filter_map(|(u, x)| {
                let v = self.eval(u, x);
                (v < 0.0).then_some((*u, *x, v))
            })
            .collect()
    }
}

impl fmt::Debug for InitialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialDensity")
            .field("name", &self.name)
            .field("decay_exponent", &self.decay_exponent)
            .finish()
    }
}

/// Centred Gaussian density with independent components.
pub fn gaussian_density(variance: Vec3) -> impl Fn(&Vec3) -> f64 + Copy + Send + Sync {
    let det = variance[0] * variance[1] * variance[2];
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).powf(1.5) * det.sqrt());
    move |u: &Vec3| {
        let q = u[0] * u[0] / variance[0] + u[1] * u[1] / variance[1] + u[2] * u[2] / variance[2];
        norm * (-0.5 * q).exp()
    }
}

fn finite3(v: Vec3, what: &'static str, at: &Vec3) -> Result<Vec3> {
    if vec3::is_finite(&v) {
        Ok(v)
    } else {
        Err(Error::non_finite(what, at))
    }
}

/// Conditional mean `b = ρ + u`.
pub fn conditional_mean(stats: &dyn ConditionalStatistics, x: &Vec3, y: &Vec3, u: &Vec3, t: f64) -> Result<Vec3> {
    let rho = finite3(stats.rho(x, y, u, t), "rho", y)?;
    Ok(vec3::add(&rho, u))
}

/// `B^i_k`, the `y`-gradient of `ρ^i` at `y = x`, with the default step.
pub fn gradient_coefficient(stats: &dyn ConditionalStatistics, x: &Vec3, u: &Vec3, t: f64) -> Result<Mat3> {
    gradient_coefficient_with_step(stats, x, u, t, fd_step(x, u))
}

pub fn gradient_coefficient_with_step(
    stats: &dyn ConditionalStatistics,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    h: f64,
) -> Result<Mat3> {
    quadrature::check_step(h)?;
    if stats.rho_vanishes() {
        return Ok(vec3::ZERO_MAT);
    }
    let mut b = vec3::ZERO_MAT;
    for k in 0..3 {
        let e = vec3::unit(k, h);
        let yp = vec3::add(x, &e);
        let ym = vec3::sub(x, &e);
        let plus = finite3(stats.rho(x, &yp, u, t), "rho", &yp)?;
        let minus = finite3(stats.rho(x, &ym, u, t), "rho", &ym)?;
        for i in 0..3 {
            b[i][k] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(b)
}

/// `A^i = Δ_y ρ^i` at `y = x`, with the default step.
pub fn laplacian_coefficient(stats: &dyn ConditionalStatistics, x: &Vec3, u: &Vec3, t: f64) -> Result<Vec3> {
    laplacian_coefficient_with_step(stats, x, u, t, fd_step(x, u))
}

pub fn laplacian_coefficient_with_step(
    stats: &dyn ConditionalStatistics,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    h: f64,
) -> Result<Vec3> {
    quadrature::check_step(h)?;
    if stats.rho_vanishes() {
        return Ok(vec3::ZERO);
    }
    let center = finite3(stats.rho(x, x, u, t), "rho", x)?;
    let mut a = vec3::ZERO;
    for k in 0..3 {
        let e = vec3::unit(k, h);
        let yp = vec3::add(x, &e);
        let ym = vec3::sub(x, &e);
        let plus = finite3(stats.rho(x, &yp, u, t), "rho", &yp)?;
        let minus = finite3(stats.rho(x, &ym, u, t), "rho", &ym)?;
        for i in 0..3 {
            a[i] += (plus[i] - 2.0 * center[i] + minus[i]) / (h * h);
        }
    }
    Ok(a)
}

/// `σ + b ⊗ b` at `y`; the tensor whose double divergence feeds `Q`.
pub fn second_moment_tensor(stats: &dyn ConditionalStatistics, x: &Vec3, y: &Vec3, u: &Vec3, t: f64) -> Mat3 {
    let b = vec3::add(&stats.rho(x, y, u, t), u);
    vec3::mat_add(&stats.sigma(x, y, u, t), &vec3::outer(&b, &b))
}

/// The pressure contribution `Q`.
pub fn pressure_coefficient(
    stats: &dyn ConditionalStatistics,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    quad: &QuadratureConfig,
) -> Result<quadrature::KernelIntegral> {
    let h = fd_step(x, u);
    let field = |y: &Vec3| second_moment_tensor(stats, x, y, u, t);
    let q = quadrature::singular_kernel_integral(field, x, h, quad)?;
    finite3(q.value, "Q", x)?;
    Ok(q)
}

/// Every coefficient of the transport equation at one `(x, u, t)`.
/// `b`, `a`, `q` are absent when the flow gives its drift directly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientField {
    pub x: Vec3,
    pub u: Vec3,
    pub t: f64,
    pub b: Option<Mat3>,
    pub a: Option<Vec3>,
    pub q: Option<Vec3>,
    pub c: Vec3,
    /// Change in `Q` when the truncation radius is doubled.
    pub q_truncation_delta: Option<f64>,
}

fn drift_from_statistics(
    stats: &dyn ConditionalStatistics,
    viscosity: f64,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    quad: &QuadratureConfig,
) -> Result<CoefficientField> {
    let q = pressure_coefficient(stats, x, u, t, quad)?;
    if viscosity == 0.0 {
        return Ok(CoefficientField {
            x: *x,
            u: *u,
            t,
            b: None,
            a: None,
            q: Some(q.value),
            c: q.value,
            q_truncation_delta: q.truncation_delta,
        });
    }
    let b = gradient_coefficient(stats, x, u, t)?;
    let a = laplacian_coefficient(stats, x, u, t)?;
    let div_b = if stats.rho_vanishes() {
        vec3::ZERO
    } else {
        let h = 10.0 * fd_step(x, u);
        let mut div = vec3::ZERO;
        for k in 0..3 {
            let e = vec3::unit(k, h);
            let plus = gradient_coefficient(stats, &vec3::add(x, &e), u, t)?;
            let minus = gradient_coefficient(stats, &vec3::sub(x, &e), u, t)?;
            for i in 0..3 {
                div[i] += (plus[i][k] - minus[i][k]) / (2.0 * h);
            }
        }
        div
    };
    let mut c = vec3::ZERO;
    for i in 0..3 {
        c[i] = viscosity * div_b[i] - viscosity * a[i] + q.value[i];
    }
    Ok(CoefficientField {
        x: *x,
        u: *u,
        t,
        b: Some(b),
        a: Some(a),
        q: Some(q.value),
        c,
        q_truncation_delta: q.truncation_delta,
    })
}

/// Assembles `B`, `A`, `Q` and `C` for `flow` at `(x, u, t)`.
pub fn coefficient_field(flow: &FlowSpec, x: &Vec3, u: &Vec3, t: f64) -> Result<CoefficientField> {
    match &flow.source {
        CoefficientSource::Statistics(s) => drift_from_statistics(s.as_ref(), flow.viscosity, x, u, t, &flow.quadrature),
        CoefficientSource::DirectC(c) => Ok(CoefficientField {
            x: *x,
            u: *u,
            t,
            b: None,
            a: None,
            q: None,
            c: finite3(c.eval(x, u, t), "C", x)?,
            q_truncation_delta: None,
        }),
        CoefficientSource::DirectQ(q) => {
            let q = finite3(q.eval(x, u, t), "Q", x)?;
            Ok(CoefficientField {
                x: *x,
                u: *u,
                t,
                b: None,
                a: None,
                q: Some(q),
                c: q,
                q_truncation_delta: None,
            })
        }
    }
}

/// The 6×6 second-order coefficient matrix over `(u, x)` and its
/// symmetry / semi-definiteness diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionReport {
    pub matrix: [[f64; 6]; 6],
    pub symmetric: bool,
    pub positive_semidefinite: bool,
    /// Eigenvalues of the symmetric part, ascending.
    pub eigenvalues: [f64; 6],
}

/// Zero `u`-`u` block, `νB` in both off-diagonal blocks, `νI` in the
/// `x`-`x` block.
pub fn diffusion_matrix(b: &Mat3, viscosity: f64) -> DiffusionReport {
    let mut d = [[0.0; 6]; 6];
    for i in 0..3 {
        for k in 0..3 {
            d[i][3 + k] = viscosity * b[i][k];
            d[3 + i][k] = viscosity * b[i][k];
        }
        d[3 + i][3 + i] = viscosity;
    }
    let m = Matrix6::from_fn(|i, j| d[i][j]);
    let asym = (m - m.transpose()).amax();
    let sym = (m + m.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let eigenvalues: [f64; 6] = eig.try_into().expect("six eigenvalues");
    DiffusionReport {
        matrix: d,
        symmetric: asym < 1e-12,
        positive_semidefinite: eigenvalues[0] >= -1e-10,
        eigenvalues,
    }
}

#[cfg(test)]
mod tests;
