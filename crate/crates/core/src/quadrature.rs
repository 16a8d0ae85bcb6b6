//! Numerical kernels shared by every other module: Gauss rules, the
//! singular Newtonian-kernel integrator, finite-difference stencils and
//! velocity-space quadrature plans.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Mat3, Vec3};

/// Nodes and weights of a one-dimensional Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map of a Legendre rule from [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> GaussRule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        GaussRule {
            nodes: self.nodes.iter().map(|z| mid + half * z).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(*z))
            .sum()
    }
}

type RuleCache = RwLock<HashMap<usize, Arc<GaussRule>>>;

fn cached(cache: &'static OnceLock<RuleCache>, n: usize, build: fn(usize) -> GaussRule) -> Arc<GaussRule> {
    let cache = cache.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(rule) = cache.read().expect("rule cache poisoned").get(&n) {
        return Arc::clone(rule);
    }
    let rule = Arc::new(build(n));
    // Two racing writers compute identical rules, so either insert is fine.
    cache
        .write()
        .expect("rule cache poisoned")
        .entry(n)
        .or_insert(rule)
        .clone()
}

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

fn build_legendre(n: usize) -> GaussRule {
    assert!(n >= 1, "Gauss-Legendre order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= NEWTON_TOL {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Physicists' Hermite rule (weight `exp(-z^2)`), Newton iteration on the
/// orthonormal recurrence.
fn build_hermite(n: usize) -> GaussRule {
    assert!(n >= 1, "Gauss-Hermite order must be at least 1");
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut roots: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        let mut z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => roots[0] - 1.14 * nf.powf(0.426) / roots[0],
            2 => 1.86 * roots[1] - 0.86 * roots[0],
            3 => 1.91 * roots[2] - 0.91 * roots[1],
            _ => 2.0 * roots[i - 1] - roots[i - 2],
        };
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = hermite_normalised(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= NEWTON_TOL * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = hermite_normalised(n, z);
        if d.is_finite() && d != 0.0 {
            dp = d;
        }
        roots.push(z);
        let w = 2.0 / (dp * dp);
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    nodes.reverse();
    weights.reverse();
    GaussRule { nodes, weights }
}

fn hermite_normalised(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Gauss-Legendre rule on [-1, 1], cached per order.
pub fn gauss_legendre(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_legendre)
}

/// Raw physicists' Gauss-Hermite rule, `∫ f(z) exp(-z^2) dz ≈ Σ w f(z)`.
pub fn gauss_hermite(n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, n, build_hermite)
}

/// Nodes and weights of an `n`-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre_nodes(n: usize, a: f64, b: f64) -> Result<GaussRule> {
    if n == 0 || !(a < b) {
        return Err(Error::Domain(format!(
            "Gauss-Legendre needs n >= 1 and a < b (got n = {n}, [{a}, {b}])"
        )));
    }
    Ok(gauss_legendre(n).mapped(a, b))
}

/// `E[f(mean + sqrt(variance) ⊙ ξ)]` for standard normal `ξ` by a tensor
/// Hermite rule of the given order per axis.
pub fn gauss_hermite_expectation<F>(f: F, mean: &Vec3, variance: &Vec3, order: usize) -> f64
where
    F: Fn(&Vec3) -> f64,
{
    let rule = gauss_hermite(order);
    let spread = variance.map(|v| (2.0 * v.max(0.0)).sqrt());
    let norm = PI.powf(-1.5);
    let mut total = 0.0;
    for (z0, w0) in rule.nodes.iter().zip(&rule.weights) {
        let mut plane = 0.0;
        for (z1, w1) in rule.nodes.iter().zip(&rule.weights) {
            let mut line = 0.0;
            for (z2, w2) in rule.nodes.iter().zip(&rule.weights) {
                let p = [
                    mean[0] + spread[0] * z0,
                    mean[1] + spread[1] * z1,
                    mean[2] + spread[2] * z2,
                ];
                line += w2 * f(&p);
            }
            plane += w1 * line;
        }
        total += w0 * plane;
    }
    norm * total
}

/// Parallel version of [`gauss_hermite_expectation`]; the reduction order
/// is fixed so the result does not depend on the worker count.
pub fn gauss_hermite_expectation_par<F>(f: F, mean: &Vec3, variance: &Vec3, order: usize) -> f64
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    let rule = gauss_hermite(order);
    let spread = variance.map(|v| (2.0 * v.max(0.0)).sqrt());
    let planes: Vec<f64> = (0..rule.len())
        .into_par_iter()
        .map(|a| {
            let z0 = rule.nodes[a];
            let mut plane = 0.0;
            for (z1, w1) in rule.nodes.iter().zip(&rule.weights) {
                let mut line = 0.0;
                for (z2, w2) in rule.nodes.iter().zip(&rule.weights) {
                    let p = [
                        mean[0] + spread[0] * z0,
                        mean[1] + spread[1] * z1,
                        mean[2] + spread[2] * z2,
                    ];
                    line += w2 * f(&p);
                }
                plane += w1 * line;
            }
            rule.weights[a] * plane
        })
        .collect();
    PI.powf(-1.5) * planes.iter().sum::<f64>()
}

/// Settings for every quadrature and stencil in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Gauss-Legendre order per axis for box integrals.
    pub gl_order: usize,
    /// Gauss-Hermite order per axis for Gaussian expectations.
    pub gh_order: usize,
    pub radial_nodes: usize,
    pub polar_nodes: usize,
    pub azimuthal_nodes: usize,
    /// Truncation radius of the singular integral.
    pub radius: f64,
    pub tolerance: f64,
    /// Repeat the singular integral at twice the radius and warn on drift.
    pub check_truncation: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            gl_order: 16,
            gh_order: 20,
            radial_nodes: 64,
            polar_nodes: 32,
            azimuthal_nodes: 64,
            radius: 12.0,
            tolerance: 1e-6,
            check_truncation: true,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        let orders = [
            ("gl_order", self.gl_order),
            ("gh_order", self.gh_order),
            ("radial_nodes", self.radial_nodes),
            ("polar_nodes", self.polar_nodes),
            ("azimuthal_nodes", self.azimuthal_nodes),
        ];
        for (name, n) in orders {
            if n < 2 {
                return Err(Error::Config(format!("quadrature.{name} must be >= 2 (got {n})")));
            }
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("quadrature.radius must be > 0 (got {})", self.radius)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("quadrature.tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Result of a singular-kernel integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelIntegral {
    pub value: Vec3,
    /// Max-norm change when the radius is doubled, if that check ran.
    pub truncation_delta: Option<f64>,
}

/// `∫_{|y-x|<R} (y - x) / (4π|y - x|^3) s(y) dy` in spherical coordinates
/// about `x`. The `r^2` volume factor cancels the kernel singularity, so
/// the integrand is `ω s(x + rω) / 4π` and only `r > 0` nodes are used.
pub fn newtonian_gradient<F>(source: F, x: &Vec3, radius: f64, cfg: &QuadratureConfig) -> Result<Vec3>
where
    F: Fn(&Vec3) -> Result<f64> + Sync,
{
    let radial = gauss_legendre(cfg.radial_nodes).mapped(0.0, radius);
    let polar = gauss_legendre(cfg.polar_nodes);
    let n_phi = cfg.azimuthal_nodes;
    let w_phi = 2.0 * PI / n_phi as f64;
    let directions: Vec<(Vec3, f64)> = polar
        .nodes
        .iter()
        .zip(&polar.weights)
        .flat_map(|(c, wc)| {
            let s = (1.0 - c * c).max(0.0).sqrt();
            (0..n_phi).map(move |k| {
                let phi = w_phi * k as f64;
                ([s * phi.cos(), s * phi.sin(), *c], wc * w_phi)
            })
        })
        .collect();

    let shells: Vec<Result<Vec3>> = radial
        .nodes
        .par_iter()
        .zip(radial.weights.par_iter())
        .map(|(r, wr)| {
            let mut acc = vec3::ZERO;
            for (omega, w) in &directions {
                let y = vec3::axpy(x, *r, omega);
                let s = source(&y)?;
                acc = vec3::axpy(&acc, w * s, omega);
            }
            Ok(vec3::scale(&acc, wr / (4.0 * PI)))
        })
        .collect();

    let mut total = vec3::ZERO;
    for shell in shells {
        total = vec3::add(&total, &shell?);
    }
    Ok(total)
}

/// `Σ_jk ∂²T^{jk}/∂y^j∂y^k` at `y` by second-order central stencils.
/// A `y`-constant field gives exactly zero.
pub fn double_divergence<F>(field: &F, y: &Vec3, h: f64) -> Result<f64>
where
    F: Fn(&Vec3) -> Mat3,
{
    let center = field(y);
    let mut total = 0.0;
    for j in 0..3 {
        let e = vec3::unit(j, h);
        let plus = field(&vec3::add(y, &e));
        let minus = field(&vec3::sub(y, &e));
        total += (plus[j][j] - 2.0 * center[j][j] + minus[j][j]) / (h * h);
    }
    for j in 0..3 {
        for k in (j + 1)..3 {
            let ej = vec3::unit(j, h);
            let ek = vec3::unit(k, h);
            let sym = |p: &Vec3| {
                let t = field(p);
                t[j][k] + t[k][j]
            };
            let pp = sym(&vec3::add(&vec3::add(y, &ej), &ek));
            let pm = sym(&vec3::sub(&vec3::add(y, &ej), &ek));
            let mp = sym(&vec3::add(&vec3::sub(y, &ej), &ek));
            let mm = sym(&vec3::sub(&vec3::sub(y, &ej), &ek));
            total += (pp - pm - mp + mm) / (4.0 * h * h);
        }
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::non_finite("double divergence", y))
    }
}

/// `∫ (y - x)/(4π|y - x|^3) ∂_j∂_k T^{jk}(y) dy` for a symmetric-matrix
/// field `T`, second derivatives taken with step `h`.
pub fn singular_kernel_integral<F>(field: F, x: &Vec3, h: f64, cfg: &QuadratureConfig) -> Result<KernelIntegral>
where
    F: Fn(&Vec3) -> Mat3 + Sync,
{
    check_step(h)?;
    let source = |y: &Vec3| double_divergence(&field, y, h);
    let value = newtonian_gradient(source, x, cfg.radius, cfg)?;
    let truncation_delta = if cfg.check_truncation {
        let doubled = newtonian_gradient(source, x, 2.0 * cfg.radius, cfg)?;
        let delta = vec3::max_abs(&vec3::sub(&value, &doubled));
        if delta > cfg.tolerance {
            log::warn!(
                "singular integral at {} moved by {delta:e} when the radius was doubled to {}",
                vec3::format_point(x),
                2.0 * cfg.radius
            );
        }
        Some(delta)
    } else {
        None
    };
    Ok(KernelIntegral { value, truncation_delta })
}

pub(crate) fn check_step(h: f64) -> Result<()> {
    if !(h >= 1e-12) {
        return Err(Error::StepUnderflow(h));
    }
    Ok(())
}

/// Default finite-difference step, scaled with the size of the coordinates.
pub fn fd_step(x: &Vec3, u: &Vec3) -> f64 {
    1e-4 * (1.0 + vec3::norm(x) + vec3::norm(u))
}

/// Stencil selector for [`central_difference`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Gradient,
    Laplacian,
    SecondMixed(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StencilValue {
    Vector(Vec3),
    Scalar(f64),
}

pub fn central_difference<F>(f: F, point: &Vec3, h: f64, kind: Stencil) -> StencilValue
where
    F: Fn(&Vec3) -> f64,
{
    match kind {
        Stencil::Gradient => StencilValue::Vector(gradient(&f, point, h)),
        Stencil::Laplacian => StencilValue::Scalar(laplacian(&f, point, h)),
        Stencil::SecondMixed(j, k) => StencilValue::Scalar(second_mixed(&f, point, j, k, h)),
    }
}

/// One-dimensional central first difference.
pub fn derivative(f: impl Fn(f64) -> f64, z: f64, h: f64) -> f64 {
    (f(z + h) - f(z - h)) / (2.0 * h)
}

/// One-dimensional central second difference.
pub fn second_derivative(f: impl Fn(f64) -> f64, z: f64, h: f64) -> f64 {
    (f(z + h) - 2.0 * f(z) + f(z - h)) / (h * h)
}

pub fn gradient<F: Fn(&Vec3) -> f64>(f: &F, p: &Vec3, h: f64) -> Vec3 {
    let mut g = vec3::ZERO;
    for (k, gk) in g.iter_mut().enumerate() {
        let e = vec3::unit(k, h);
        *gk = (f(&vec3::add(p, &e)) - f(&vec3::sub(p, &e))) / (2.0 * h);
    }
    g
}

pub fn laplacian<F: Fn(&Vec3) -> f64>(f: &F, p: &Vec3, h: f64) -> f64 {
    let center = f(p);
    (0..3)
        .map(|k| {
            let e = vec3::unit(k, h);
            (f(&vec3::add(p, &e)) - 2.0 * center + f(&vec3::sub(p, &e))) / (h * h)
        })
        .sum()
}

/// `∂²f/∂p^j∂p^k`; falls back to the plain second difference when `j == k`.
pub fn second_mixed<F: Fn(&Vec3) -> f64>(f: &F, p: &Vec3, j: usize, k: usize, h: f64) -> f64 {
    let ej = vec3::unit(j, h);
    if j == k {
        return (f(&vec3::add(p, &ej)) - 2.0 * f(p) + f(&vec3::sub(p, &ej))) / (h * h);
    }
    let ek = vec3::unit(k, h);
    let pp = f(&vec3::add(&vec3::add(p, &ej), &ek));
    let pm = f(&vec3::sub(&vec3::add(p, &ej), &ek));
    let mp = f(&vec3::add(&vec3::sub(p, &ej), &ek));
    let mm = f(&vec3::sub(&vec3::sub(p, &ej), &ek));
    (pp - pm - mp + mm) / (4.0 * h * h)
}

/// A tensor quadrature over velocity space, stored as explicit weighted
/// nodes. Nodes in the outer shell of the plan are flagged so callers can
/// tell when the integrand has not decayed before the truncation edge.
#[derive(Debug, Clone)]
pub struct VelocityQuadrature {
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    shell: Vec<bool>,
    description: String,
}

/// `∫ f du` together with the share carried by the outer shell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityIntegral {
    pub value: f64,
    pub shell_contribution: f64,
}

impl VelocityQuadrature {
    /// Product of composite Gauss-Legendre rules: on each axis, `order`
    /// nodes inside every interval between consecutive breakpoints.
    /// Integrands with jumps should put breakpoints on the jump surfaces.
    pub fn piecewise_legendre(breaks: [&[f64]; 3], order: usize) -> Result<Self> {
        let mut axes: Vec<Vec<(f64, f64, bool)>> = Vec::with_capacity(3);
        for b in breaks {
            if b.len() < 2 || b.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Domain("breakpoints must be strictly increasing, at least two".into()));
            }
            let lo = b[0];
            let hi = b[b.len() - 1];
            let edge = 0.125 * (hi - lo);
            let mut axis = Vec::new();
            for w in b.windows(2) {
                let rule = gauss_legendre_nodes(order, w[0], w[1])?;
                for (z, wt) in rule.nodes.iter().zip(&rule.weights) {
                    axis.push((*z, *wt, *z < lo + edge || *z > hi - edge));
                }
            }
            axes.push(axis);
        }
        let description = format!(
            "piecewise Gauss-Legendre, order {order}, breaks {:?} / {:?} / {:?}",
            breaks[0], breaks[1], breaks[2]
        );
        Ok(Self::tensor(&axes, description))
    }

    /// Hermite-based plan for densities with Gaussian tails centred near
    /// `mean` with per-axis `variance`: `∫ f du = E[f(U) / φ(U)]`.
    pub fn gauss_hermite(mean: &Vec3, variance: &Vec3, order: usize) -> Self {
        let rule = gauss_hermite(order);
        let zmax = rule.nodes.iter().fold(0.0_f64, |m, z| m.max(z.abs()));
        let axes: Vec<Vec<(f64, f64, bool)>> = (0..3)
            .map(|k| {
                let s = (2.0 * variance[k]).sqrt();
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(z, w)| (mean[k] + s * z, w * (z * z).exp() * s, z.abs() > 0.75 * zmax))
                    .collect()
            })
            .collect();
        let description = format!("Gauss-Hermite, order {order}, mean {mean:?}, variance {variance:?}");
        Self::tensor(&axes, description)
    }

    fn tensor(axes: &[Vec<(f64, f64, bool)>], description: String) -> Self {
        let n = axes.iter().map(Vec::len).product();
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut shell = Vec::with_capacity(n);
        for a in &axes[0] {
            for b in &axes[1] {
                for c in &axes[2] {
                    nodes.push([a.0, b.0, c.0]);
                    weights.push(a.1 * b.1 * c.1);
                    shell.push(a.2 || b.2 || c.2);
                }
            }
        }
        Self {
            nodes,
            weights,
            shell,
            description,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Whether each node lies in the outer shell of the plan.
    pub fn shell_flags(&self) -> &[bool] {
        &self.shell
    }

    /// Clears the shell flags, for integrands that are truncated by design
    /// at the plan's edge.
    pub fn without_shell(mut self) -> Self {
        self.shell.iter_mut().for_each(|s| *s = false);
        self
    }

    /// Integrates `f` over the plan in parallel, reducing in node order.
    pub fn integrate<F>(&self, f: F) -> Result<VelocityIntegral>
    where
        F: Fn(&Vec3) -> Result<f64> + Sync,
    {
        let terms: Vec<Result<(f64, bool)>> = self
            .nodes
            .par_iter()
            .zip(self.weights.par_iter())
            .zip(self.shell.par_iter())
            .map(|((u, w), s)| f(u).map(|v| (v * w, *s)))
            .collect();
        let mut value = 0.0;
        let mut shell_contribution = 0.0;
        for term in terms {
            let (v, s) = term?;
            value += v;
            if s {
                shell_contribution += v.abs();
            }
        }
        Ok(VelocityIntegral {
            value,
            shell_contribution,
        })
    }
}
