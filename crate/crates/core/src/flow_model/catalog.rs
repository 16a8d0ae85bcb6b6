//! Built-in conditional statistics addressable by name.

use std::fmt;
use std::sync::Arc;

use super::{AffineField, ConditionalStatistics, FlowClass, VectorField, ZeroField};
use crate::showcase::ShowcaseStatistics;
use crate::vec3::{self, Mat3, Vec3};

/// `ρ ≡ 0`, `σ = I`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroStatistics;

impl ConditionalStatistics for ZeroStatistics {
    fn name(&self) -> &str {
        "zero"
    }

    fn rho(&self, _x: &Vec3, _y: &Vec3, _u: &Vec3, _t: f64) -> Vec3 {
        vec3::ZERO
    }

    fn sigma(&self, _x: &Vec3, _y: &Vec3, _u: &Vec3, _t: f64) -> Mat3 {
        vec3::IDENTITY
    }

    fn claimed_class(&self) -> FlowClass {
        FlowClass::WeaklyIsotropic
    }

    fn rho_vanishes(&self) -> bool {
        true
    }

    fn closed_form_drift(&self, _viscosity: f64) -> Option<Arc<dyn VectorField>> {
        Some(Arc::new(ZeroField))
    }
}

/// `ρ^i = (y^i - x^i)^2`, `σ = I`.
///
/// `B = 0`, `A = (2, 2, 2)` and `Q = 0` (the double divergence of
/// `b ⊗ b` is even in `y - x`), so `C = -2ν (1, 1, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticRhoStatistics;

impl ConditionalStatistics for QuadraticRhoStatistics {
    fn name(&self) -> &str {
        "quadratic-rho"
    }

    fn rho(&self, x: &Vec3, y: &Vec3, _u: &Vec3, _t: f64) -> Vec3 {
        let d = vec3::sub(y, x);
        [d[0] * d[0], d[1] * d[1], d[2] * d[2]]
    }

    fn sigma(&self, _x: &Vec3, _y: &Vec3, _u: &Vec3, _t: f64) -> Mat3 {
        vec3::IDENTITY
    }

    fn closed_form_drift(&self, viscosity: f64) -> Option<Arc<dyn VectorField>> {
        Some(Arc::new(AffineField::constant([-2.0 * viscosity; 3])))
    }
}

/// `ρ ≡ 0`, `σ^{jk} = δ^{jk} (1 + g(y - x))` with `g(z) = z^1 exp(-|z|^2)`.
///
/// Because `b = u` is constant in `y`, `Q` is the Newtonian-kernel integral
/// of `Δg`, which equals `-∇g(0) = (-1, 0, 0)` everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnisotropicGaussianStatistics;

impl AnisotropicGaussianStatistics {
    pub fn bump(z: &Vec3) -> f64 {
        z[0] * (-vec3::norm2(z)).exp()
    }
}

impl ConditionalStatistics for AnisotropicGaussianStatistics {
    fn name(&self) -> &str {
        "anisotropic-gaussian"
    }

    fn rho(&self, _x: &Vec3, _y: &Vec3, _u: &Vec3, _t: f64) -> Vec3 {
        vec3::ZERO
    }

    fn sigma(&self, x: &Vec3, y: &Vec3, _u: &Vec3, _t: f64) -> Mat3 {
        let s = 1.0 + Self::bump(&vec3::sub(y, x));
        vec3::diag(&[s; 3])
    }

    fn claimed_class(&self) -> FlowClass {
        FlowClass::WeaklyHomogeneous
    }

    fn rho_vanishes(&self) -> bool {
        true
    }

    fn closed_form_drift(&self, _viscosity: f64) -> Option<Arc<dyn VectorField>> {
        Some(Arc::new(AffineField::constant([-1.0, 0.0, 0.0])))
    }
}

type RhoFn = dyn Fn(&Vec3, &Vec3, &Vec3, f64) -> Vec3 + Send + Sync;
type SigmaFn = dyn Fn(&Vec3, &Vec3, &Vec3, f64) -> Mat3 + Send + Sync;

/// User-defined statistics from closures.
#[derive(Clone)]
pub struct StatisticsFn {
    name: String,
    rho: Arc<RhoFn>,
    sigma: Arc<SigmaFn>,
    class: FlowClass,
}

impl StatisticsFn {
    pub fn new(
        name: impl Into<String>,
        rho: impl Fn(&Vec3, &Vec3, &Vec3, f64) -> Vec3 + Send + Sync + 'static,
        sigma: impl Fn(&Vec3, &Vec3, &Vec3, f64) -> Mat3 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            rho: Arc::new(rho),
            sigma: Arc::new(sigma),
            class: FlowClass::General,
        }
    }

    pub fn claiming(mut self, class: FlowClass) -> Self {
        self.class = class;
        self
    }
}

impl fmt::Debug for StatisticsFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StatisticsFn").field("name", &self.name).finish()
    }
}

impl ConditionalStatistics for StatisticsFn {
    fn name(&self) -> &str {
        &self.name
    }

    fn rho(&self, x: &Vec3, y: &Vec3, u: &Vec3, t: f64) -> Vec3 {
        (self.rho)(x, y, u, t)
    }

    fn sigma(&self, x: &Vec3, y: &Vec3, u: &Vec3, t: f64) -> Mat3 {
        (self.sigma)(x, y, u, t)
    }

    fn claimed_class(&self) -> FlowClass {
        self.class
    }
}

pub fn catalog_names() -> &'static [&'static str] {
    &["zero", "showcase", "quadratic-rho", "anisotropic-gaussian"]
}

/// Looks up built-in statistics by name.
pub fn catalog_statistics(name: &str) -> Option<Arc<dyn ConditionalStatistics>> {
    let s: Arc<dyn ConditionalStatistics> = match name {
        "zero" => Arc::new(ZeroStatistics),
        "showcase" => Arc::new(ShowcaseStatistics::default()),
        "quadratic-rho" => Arc::new(QuadraticRhoStatistics),
        "anisotropic-gaussian" => Arc::new(AnisotropicGaussianStatistics),
        _ => return None,
    };
    Some(s)
}
