//! Point and slice estimates of `p(u; x, t)` from the representation
//! formulas.
//!
//! | regime | method | formula |
//! |---|---|---|
//! | weakly homogeneous | Monte Carlo | `E[p0(Y(t); X(t)) q(t)]` over Euler-Maruyama paths |
//! | weakly isotropic | kernel quadrature | `q(t) E[p0(Y(t); x - D + √(2νt) ξ)]`, `D = ∫ Y ds` |
//! | inviscid | single characteristic | `p0(Y(t); X(t)) q(t)` |

use serde::{Deserialize, Serialize};

use crate::characteristics::{simulate_homogeneous, solve_inviscid};
use crate::error::{Error, Result};
use crate::flow_model::{FlowSpec, InitialDensity, Regime};
use crate::noise::{sample_mean, NoiseSpec};
use crate::quadrature::gauss_hermite_expectation_par;
use crate::vec3::{self, Vec3};

/// `log q` above which the Monte Carlo weights are considered to be
/// blowing up the variance.
pub const LOG_Q_WARNING: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mc,
    KernelQuadrature,
    Characteristic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdfEstimate {
    pub value: f64,
    /// Sample standard deviation over `√n_samples` for Monte Carlo; zero for
    /// deterministic methods.
    pub stderr: f64,
    pub n_samples: usize,
    pub dt: f64,
    pub method: Method,
    /// Largest `|log q|` over the paths.
    pub max_abs_log_q: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

impl PdfEstimate {
    fn exact(value: f64, dt: f64, method: Method) -> Self {
        Self {
            value,
            stderr: 0.0,
            n_samples: 1,
            dt,
            method,
            max_abs_log_q: 0.0,
            caveat: None,
        }
    }
}

/// Estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_samples: usize,
    pub dt: f64,
    pub seed: u64,
    pub gh_order: usize,
    /// Pair each path with its sign-flipped twin. The standard error is then
    /// computed over pair averages.
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            dt: 0.01,
            seed: 0,
            gh_order: 20,
            antithetic: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be finite and > 0 (got {})", self.dt)));
        }
        if self.gh_order == 0 {
            return Err(Error::Config("gh_order must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be finite and >= 0 (got {t})")));
    }
    Ok(())
}

fn require_regime(flow: &FlowSpec, allowed: &[Regime], what: &str) -> Result<()> {
    if allowed.contains(&flow.regime) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} needs regime {}, but flow '{}' is {}",
            allowed.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" or "),
            flow.name,
            flow.regime
        )))
    }
}

/// Monte Carlo estimate over characteristic paths; weakly homogeneous
/// (or isotropic) flows only.
pub fn estimate_homogeneous(
    flow: &FlowSpec,
    p0: &InitialDensity,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    cfg: &McConfig,
) -> Result<PdfEstimate> {
    require_regime(
        flow,
        &[Regime::WeaklyHomogeneous, Regime::WeaklyIsotropic],
        "estimate_homogeneous",
    )?;
    monte_carlo(flow, p0, x, u, t, cfg, 0)
}

/// Monte Carlo estimate for a flow in the general regime.
///
/// The representation only solves the full equation when
/// `∂_u · (B ∇_x p) = 0`, which depends on the unknown `p` and is not
/// checked. Treat the result as exploratory.
pub fn estimate_general(
    flow: &FlowSpec,
    p0: &InitialDensity,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    cfg: &McConfig,
) -> Result<PdfEstimate> {
    let caveat = "general-regime representation: valid only if div_u(B grad_x p) = 0, which is not verified";
    log::warn!("{caveat}");
    let mut est = monte_carlo(flow, p0, x, u, t, cfg, 0)?;
    est.caveat = Some(caveat.into());
    Ok(est)
}

fn monte_carlo(
    flow: &FlowSpec,
    p0: &InitialDensity,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    cfg: &McConfig,
    stream: u64,
) -> Result<PdfEstimate> {
    check_time(t)?;
    cfg.validate()?;
    if t == 0.0 {
        return Ok(PdfEstimate::exact(p0.eval(u, x), cfg.dt, Method::Mc));
    }
    let drift = flow.drift();
    let nu = flow.viscosity;
    let path = |index: usize, sign: f64| -> Result<(f64, f64)> {
        let noise = NoiseSpec::on_stream(cfg.seed, stream, index as u64);
        let end = simulate_homogeneous(drift.as_ref(), nu, x, u, t, cfg.dt, &noise, sign, |_| {})?;
        let v = p0.eval(&end.y, &end.x) * end.q;
        if !v.is_finite() {
            return Err(Error::non_finite("p0(Y; X) q", &end.x));
        }
        Ok((v, end.log_q.abs()))
    };
    let (m, n_samples) = if cfg.antithetic {
        let pairs = cfg.n_samples.div_ceil(2);
        let m = sample_mean(pairs, |i| {
            let (a, la) = path(i, 1.0)?;
            let (b, lb) = path(i, -1.0)?;
            Ok((0.5 * (a + b), la.max(lb)))
        })?;
        (m, 2 * pairs)
    } else {
        (sample_mean(cfg.n_samples, |i| path(i, 1.0))?, cfg.n_samples)
    };
    if m.max_extra > LOG_Q_WARNING {
        log::warn!(
            "path weights reach |log q| = {:.1} at x = {}, u = {}; the estimate may have very high variance",
            m.max_extra,
            vec3::format_point(x),
            vec3::format_point(u)
        );
    }
    Ok(PdfEstimate {
        value: m.mean,
        stderr: m.stderr,
        n_samples,
        dt: cfg.dt,
        method: Method::Mc,
        max_abs_log_q: m.max_extra,
        caveat: None,
    })
}

/// `p0(Y(t); X(t)) q(t)` along the single RK4 characteristic.
pub fn evaluate_inviscid(
    flow: &FlowSpec,
    p0: &InitialDensity,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    dt: f64,
) -> Result<PdfEstimate> {
    require_regime(flow, &[Regime::Inviscid], "evaluate_inviscid")?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(PdfEstimate::exact(p0.eval(u, x), dt, Method::Characteristic));
    }
    let end = solve_inviscid(flow.drift().as_ref(), x, u, t, dt)?;
    let mut est = PdfEstimate::exact(p0.eval(&end.y, &end.x) * end.q, dt, Method::Characteristic);
    est.max_abs_log_q = end.log_q.abs();
    Ok(est)
}

/// `q(t) E[p0(Y(t); x - D + √(2νt) ξ)]` with a tensor Hermite rule.
pub fn evaluate_isotropic(
    flow: &FlowSpec,
    p0: &InitialDensity,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    gh_order: usize,
    dt: f64,
) -> Result<PdfEstimate> {
    require_regime(flow, &[Regime::WeaklyIsotropic], "evaluate_isotropic")?;
    if !(flow.viscosity > 0.0) {
        return Err(Error::Config("evaluate_isotropic needs nu > 0".into()));
    }
    check_time(t)?;
    if t == 0.0 {
        return Ok(PdfEstimate::exact(p0.eval(u, x), dt, Method::KernelQuadrature));
    }
    // The drift ignores X, so starting X at the origin leaves X(t) = -D.
    let end = solve_inviscid(flow.drift().as_ref(), &vec3::ZERO, u, t, dt)?;
    let mean = vec3::add(x, &end.x);
    let var = 2.0 * flow.viscosity * t;
    let y = end.y;
    let integral = gauss_hermite_expectation_par(|z: &Vec3| p0.eval(&y, z), &mean, &[var; 3], gh_order);
    let value = end.q * integral;
    if !value.is_finite() {
        return Err(Error::non_finite("kernel integral", x));
    }
    let mut est = PdfEstimate::exact(value, dt, Method::KernelQuadrature);
    est.max_abs_log_q = end.log_q.abs();
    Ok(est)
}

/// Heat kernel `(4πνt)^{-3/2} exp(-|z - x + D|² / (4νt))`.
pub fn heat_kernel(x: &Vec3, t: f64, z: &Vec3, displacement: &Vec3, nu: f64) -> Result<f64> {
    let nt = nu * t;
    if !(nt > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs nu * t > 0 (got {nt})")));
    }
    let r = vec3::add(&vec3::sub(z, x), displacement);
    Ok((4.0 * std::f64::consts::PI * nt).powf(-1.5) * (-vec3::norm2(&r) / (4.0 * nt)).exp())
}

/// Which estimator a slice uses. `Auto` picks by regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceMethod {
    #[default]
    Auto,
    Mc,
    KernelQuadrature,
    Characteristic,
}

impl SliceMethod {
    pub fn resolve(self, flow: &FlowSpec) -> Method {
        match self {
            SliceMethod::Mc => Method::Mc,
            SliceMethod::KernelQuadrature => Method::KernelQuadrature,
            SliceMethod::Characteristic => Method::Characteristic,
            SliceMethod::Auto => match flow.regime {
                Regime::Inviscid => Method::Characteristic,
                Regime::WeaklyIsotropic if flow.viscosity > 0.0 => Method::KernelQuadrature,
                _ => Method::Mc,
            },
        }
    }
}

/// Evaluates `p` at one point with the given method; Monte Carlo uses
/// sub-stream `stream`.
pub fn estimate_with(
    method: Method,
    flow: &FlowSpec,
    p0: &InitialDensity,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    cfg: &McConfig,
    stream: u64,
) -> Result<PdfEstimate> {
    match method {
        Method::Mc => {
            if flow.regime == Regime::General {
                let mut est = monte_carlo(flow, p0, x, u, t, cfg, stream)?;
                est.caveat = Some("general regime".into());
                Ok(est)
            } else {
                monte_carlo(flow, p0, x, u, t, cfg, stream)
            }
        }
        Method::KernelQuadrature => evaluate_isotropic(flow, p0, x, u, t, cfg.gh_order, cfg.dt),
        Method::Characteristic => evaluate_inviscid(flow, p0, x, u, t, cfg.dt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl AxisRange {
    pub fn point(&self, i: usize) -> f64 {
        if self.n <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * (i as f64 / (self.n - 1) as f64)
        }
    }

    pub fn step(&self) -> f64 {
        if self.n <= 1 {
            0.0
        } else {
            (self.hi - self.lo) / (self.n - 1) as f64
        }
    }
}

/// A `(u1, u2)` grid at fixed `u3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceGrid {
    pub u1: AxisRange,
    pub u2: AxisRange,
    pub u3: f64,
}

impl SliceGrid {
    pub fn square(lo: f64, hi: f64, n: usize, u3: f64) -> Self {
        let axis = AxisRange { lo, hi, n };
        Self { u1: axis, u2: axis, u3 }
    }

    /// 121 × 121 over `[-3, 3]²` at `u3 = 0.3`.
    pub fn figure_default() -> Self {
        Self::square(-3.0, 3.0, 121, 0.3)
    }

    pub fn validate(&self) -> Result<()> {
        for a in [&self.u1, &self.u2] {
            if a.n == 0 || !(a.lo <= a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(Error::Config(format!("invalid grid axis {a:?}")));
            }
        }
        if !self.u3.is_finite() {
            return Err(Error::Config("u3 must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.u1.n * self.u2.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes with `u1` varying slowest.
    pub fn nodes(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.u1.n {
            for j in 0..self.u2.n {
                out.push([self.u1.point(i), self.u2.point(j), self.u3]);
            }
        }
        out
    }
}

/// One-sided evaluation across a known jump of `p0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    In,
    Out,
    Na,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityNode {
    pub u: Vec3,
    pub side: Side,
    pub value: f64,
    pub stderr: f64,
}

/// Estimates over a slice grid, one row per node (boundary nodes may add a
/// second row with the other one-sided limit).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityField {
    pub flow: String,
    pub method: String,
    pub grid: SliceGrid,
    pub x: Vec3,
    pub t: f64,
    pub seed: Option<u64>,
    pub nodes: Vec<DensityNode>,
}

impl DensityField {
    pub fn max_abs_deviation(&self, reference: impl Fn(&Vec3) -> f64) -> (f64, Vec3) {
        self.nodes.iter().fold((0.0, vec3::ZERO), |(m, at), n| {
            let d = (n.value - reference(&n.u)).abs();
            if d > m {
                (d, n.u)
            } else {
                (m, at)
            }
        })
    }
}

/// Evaluates `p(·; x, t)` on every grid node. Monte Carlo nodes use the
/// node index as sub-stream, so slices are reproducible for any thread
/// count. Failed nodes are recorded as NaN; the slice fails when more than
/// 1% of nodes do.
pub fn density_slice(
    flow: &FlowSpec,
    p0: &InitialDensity,
    grid: &SliceGrid,
    x: &Vec3,
    t: f64,
    cfg: &McConfig,
    method: SliceMethod,
) -> Result<DensityField> {
    use rayon::prelude::*;

    grid.validate()?;
    let m = method.resolve(flow);
    let results: Vec<Result<PdfEstimate>> = grid
        .nodes()
        .par_iter()
        .enumerate()
        .map(|(i, u)| estimate_with(m, flow, p0, x, u, t, cfg, i as u64))
        .collect();
    let total = results.len();
    let mut nodes = Vec::with_capacity(total);
    let mut failed = 0;
    let mut first = None;
    for (u, r) in grid.nodes().into_iter().zip(results) {
        match r {
            Ok(est) => nodes.push(DensityNode {
                u,
                side: Side::Na,
                value: est.value,
                stderr: est.stderr,
            }),
            Err(e) => {
                if !e.is_numeric() {
                    return Err(e);
                }
                failed += 1;
                first.get_or_insert_with(|| format!("u = {}: {e}", vec3::format_point(&u)));
                nodes.push(DensityNode {
                    u,
                    side: Side::Na,
                    value: f64::NAN,
                    stderr: f64::NAN,
                });
            }
        }
    }
    if failed > 0 {
        let first = first.unwrap_or_default();
        if failed * 100 > total {
            return Err(Error::SliceFailure { failed, total, first });
        }
        log::warn!("{failed} of {total} slice nodes failed (first: {first})");
    }
    let seed = (m == Method::Mc).then_some(cfg.seed);
    Ok(DensityField {
        flow: flow.name.clone(),
        method: serde_json::to_string(&m)?.trim_matches('"').to_string(),
        grid: grid.clone(),
        x: *x,
        t,
        seed,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::flow_model::{
        gaussian_density, AffineField, CoefficientSource, FnField, ZeroStatistics,
    };

    fn zero_flow(regime: Regime, nu: f64) -> FlowSpec {
        FlowSpec::new("zero", nu, regime, CoefficientSource::Statistics(Arc::new(ZeroStatistics))).unwrap()
    }

    fn alpha_like() -> InitialDensity {
        let g = gaussian_density([2.0 / 3.0, 1.0, 1.5]);
        InitialDensity::new("gauss", 2.0, move |u: &Vec3, _x: &Vec3| g(u)).unwrap()
    }

    fn small() -> McConfig {
        McConfig {
            n_samples: 4000,
            ..McConfig::default()
        }
    }

    #[test]
    fn x_independent_data_is_stationary() {
        let flow = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        let p0 = alpha_like();
        let u = [0.3, -0.4, 1.2];
        let est = estimate_homogeneous(&flow, &p0, &[1.0, 2.0, 3.0], &u, 0.7, &small()).unwrap();
        assert_eq!(est.value, p0.eval(&u, &vec3::ZERO));
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn zero_time_returns_initial_data() {
        let p0 = InitialDensity::new("bump", 2.0, |u: &Vec3, x: &Vec3| (-vec3::norm2(u) - x[0] * x[0]).exp()).unwrap();
        let u = [0.1, 0.2, 0.3];
        let x = [0.5, 0.0, 0.0];
        let expected = p0.eval(&u, &x);
        let hom = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        assert_eq!(estimate_homogeneous(&hom, &p0, &x, &u, 0.0, &small()).unwrap().value, expected);
        let iso = zero_flow(Regime::WeaklyIsotropic, 1.0);
        assert_eq!(evaluate_isotropic(&iso, &p0, &x, &u, 0.0, 10, 0.01).unwrap().value, expected);
        let inv = zero_flow(Regime::Inviscid, 0.0);
        assert_eq!(evaluate_inviscid(&inv, &p0, &x, &u, 0.0, 0.01).unwrap().value, expected);
    }

    #[test]
    fn inviscid_free_transport() {
        let flow = zero_flow(Regime::Inviscid, 0.0);
        let p0 = InitialDensity::new("bump", 2.0, |u: &Vec3, x: &Vec3| {
            (-vec3::norm2(u)).exp() * (1.0 + x[0] * x[0] + 0.5 * x[1])
        })
        .unwrap();
        let x = [0.2, -0.1, 0.4];
        let u = [1.0, 0.5, -0.3];
        let est = evaluate_inviscid(&flow, &p0, &x, &u, 1.5, 0.01).unwrap();
        let expected = p0.eval(&u, &vec3::axpy(&x, -1.5, &u));
        assert!((est.value - expected).abs() < 1e-14);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn inviscid_linear_damping() {
        let flow = FlowSpec::new("damped", 0.0, Regime::Inviscid, CoefficientSource::DirectQ(Arc::new(AffineField::damping(1.0))))
            .unwrap();
        let p0 = alpha_like();
        let u = [0.7, -0.2, 0.4];
        let est = evaluate_inviscid(&flow, &p0, &vec3::ZERO, &u, 1.0, 1e-3).unwrap();
        let e = (-1.0_f64).exp();
        let expected = p0.eval(&vec3::scale(&u, e), &vec3::ZERO) * (-3.0_f64).exp();
        assert!((est.value - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn flipped_weight_sign_breaks_the_equation() {
        // A constant C has zero u-divergence, so only a u-dependent drift
        // can tell the two signs apart.
        let c = AffineField::damping(1.0);
        let flow = FlowSpec::new("damped", 0.0, Regime::Inviscid, CoefficientSource::DirectQ(Arc::new(c))).unwrap();
        let p0 = alpha_like();
        let plus = |u: &Vec3, x: &Vec3, t: f64| evaluate_inviscid(&flow, &p0, x, u, t, 1e-2).unwrap().value;
        let minus = |u: &Vec3, x: &Vec3, t: f64| {
            let end = solve_inviscid(&c, x, u, t, 1e-2).unwrap();
            p0.eval(&end.y, &end.x) / end.q
        };
        let (u, x, t) = ([0.4, -0.3, 0.6], [0.1, 0.2, -0.1], 0.8);
        let r_plus = crate::invariants::pde_residual(&plus, Some(&c), 0.0, &u, &x, t, 1e-3).unwrap();
        let r_minus = crate::invariants::pde_residual(&minus, Some(&c), 0.0, &u, &x, t, 1e-3).unwrap();
        let scale = plus(&u, &x, t);
        assert!(r_plus.abs() < 1e-4 * scale, "{r_plus}");
        assert!(r_minus.abs() > 1.0 * minus(&u, &x, t), "{r_minus}");
    }

    #[test]
    fn regimes_are_enforced() {
        let p0 = alpha_like();
        let hom = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        assert!(matches!(evaluate_inviscid(&hom, &p0, &vec3::ZERO, &vec3::ZERO, 1.0, 0.1), Err(Error::Config(_))));
        assert!(matches!(evaluate_isotropic(&hom, &p0, &vec3::ZERO, &vec3::ZERO, 1.0, 4, 0.1), Err(Error::Config(_))));
        let general = zero_flow(Regime::General, 1.0);
        assert!(estimate_homogeneous(&general, &p0, &vec3::ZERO, &vec3::ZERO, 1.0, &small()).is_err());
        let est = estimate_general(&general, &p0, &vec3::ZERO, &vec3::ZERO, 0.1, &small()).unwrap();
        assert!(est.caveat.is_some());
    }

    #[test]
    fn heat_kernel_values() {
        let d = [0.3, -0.2, 0.1];
        let x = [1.0, 2.0, 3.0];
        let peak = heat_kernel(&x, 1.0, &vec3::sub(&x, &d), &d, 1.0).unwrap();
        assert!((peak - 0.022_448_4).abs() < 1e-7);
        assert!((peak - (4.0 * std::f64::consts::PI).powf(-1.5)).abs() < 1e-16);
        let a = heat_kernel(&x, 0.5, &[0.0, 1.0, 2.0], &d, 2.0).unwrap();
        let shift = [5.0, -1.0, 0.5];
        let b = heat_kernel(&vec3::add(&x, &shift), 0.5, &vec3::add(&[0.0, 1.0, 2.0], &shift), &d, 2.0).unwrap();
        assert_eq!(a, b);
        assert!(heat_kernel(&x, 0.0, &x, &d, 1.0).is_err());
    }

    #[test]
    fn heat_kernel_has_unit_mass() {
        let x = [0.5, 0.0, -1.0];
        let d = [0.2, 0.2, 0.2];
        let (nu, t) = (0.7, 1.3);
        let var = 2.0 * nu * t;
        let mean = vec3::sub(&x, &d);
        // ∫H dz = E[H(z)/φ(z)] under the matching Gaussian, where φ = H.
        let mass = gauss_hermite_expectation_par(
            |z: &Vec3| {
                let h = heat_kernel(&x, t, z, &d, nu).unwrap();
                let phi = gaussian_density([var; 3])(&vec3::sub(z, &mean));
                h / phi
            },
            &mean,
            &[var; 3],
            8,
        );
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn isotropic_and_monte_carlo_agree_for_free_flow() {
        let p0 = InitialDensity::new("mix", 2.0, |u: &Vec3, x: &Vec3| {
            (-vec3::norm2(u)).exp() * (1.0 + 0.5 * (x[0] - x[2]).sin())
        })
        .unwrap();
        let x = [0.1, 0.2, 0.3];
        let u = [0.5, -0.5, 0.25];
        let iso = zero_flow(Regime::WeaklyIsotropic, 1.0);
        let kq = evaluate_isotropic(&iso, &p0, &x, &u, 0.6, 20, 0.01).unwrap();
        let hom = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        let mc = estimate_homogeneous(&hom, &p0, &x, &u, 0.6, &McConfig { n_samples: 40_000, ..McConfig::default() }).unwrap();
        assert!((kq.value - mc.value).abs() < 3.0 * mc.stderr, "{} vs {} ± {}", kq.value, mc.value, mc.stderr);
    }

    #[test]
    fn isotropic_damping_matches_brute_force() {
        let flow = FlowSpec::new(
            "damped",
            0.5,
            Regime::WeaklyIsotropic,
            CoefficientSource::DirectC(Arc::new(AffineField::damping(1.0))),
        )
        .unwrap();
        let g = gaussian_density([1.0; 3]);
        let p0 = InitialDensity::new("g", 2.0, move |u: &Vec3, x: &Vec3| g(u) * (1.0 + 0.5 * (-x[0] * x[0]).exp())).unwrap();
        let (x, u, t) = ([0.3, 0.0, 0.0], [1.0, 0.5, -0.5], 0.8);
        let est = evaluate_isotropic(&flow, &p0, &x, &u, t, 20, 1e-3).unwrap();
        // Y = u e^{-s}, D = u (1 - e^{-t}), q = e^{-3t}; the z-integral only
        // varies along z1, so a dense 1D trapezoid rule is exact enough.
        let e = (-t).exp();
        let y = vec3::scale(&u, e);
        let d = vec3::scale(&u, 1.0 - e);
        let var = 2.0 * flow.viscosity * t;
        let m1 = x[0] - d[0];
        let n = 40_000;
        let (lo, hi) = (m1 - 12.0 * var.sqrt(), m1 + 12.0 * var.sqrt());
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let z = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let phi = (-(z - m1).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            acc += w * h * phi * (1.0 + 0.5 * (-z * z).exp());
        }
        let oracle = (-3.0 * t).exp() * g(&y) * acc;
        assert!((est.value - oracle).abs() < 1e-6, "{} vs {}", est.value, oracle);
    }

    #[test]
    fn stderr_follows_inverse_square_root() {
        let flow = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        let p0 = InitialDensity::new("x", 2.0, |u: &Vec3, x: &Vec3| (-vec3::norm2(u)).exp() * (1.0 + x[0].sin())).unwrap();
        let base = McConfig { n_samples: 5000, ..McConfig::default() };
        let a = estimate_homogeneous(&flow, &p0, &vec3::ZERO, &[0.2; 3], 0.5, &base).unwrap();
        let b = estimate_homogeneous(&flow, &p0, &vec3::ZERO, &[0.2; 3], 0.5, &McConfig { n_samples: 20_000, ..base }).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn antithetic_pairs_reduce_variance_for_linear_integrand() {
        let flow = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        let p0 = InitialDensity::new("lin", 1.0, |_u: &Vec3, x: &Vec3| 1.0 + 0.1 * x[0]).unwrap();
        let cfg = McConfig { n_samples: 1000, antithetic: true, ..McConfig::default() };
        let est = estimate_homogeneous(&flow, &p0, &vec3::ZERO, &[0.0; 3], 0.5, &cfg).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        assert!(est.stderr < 1e-12);
        assert_eq!(est.n_samples, 1000);
    }

    #[test]
    fn heavy_weights_are_flagged() {
        let field = FnField::new(|_: &Vec3, _: &Vec3, _| [0.0; 3]).with_divergence(|_, _, _| 60.0).position_free();
        let flow = FlowSpec::new("w", 1.0, Regime::WeaklyHomogeneous, CoefficientSource::DirectC(Arc::new(field))).unwrap();
        let p0 = alpha_like();
        let est = estimate_homogeneous(&flow, &p0, &vec3::ZERO, &vec3::ZERO, 1.0, &McConfig { n_samples: 10, ..McConfig::default() })
            .unwrap();
        assert!(est.max_abs_log_q > LOG_Q_WARNING);
    }

    #[test]
    fn slice_of_stationary_data_is_exact() {
        let flow = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        let p0 = alpha_like();
        let grid = SliceGrid::square(-1.0, 1.0, 5, 0.3);
        let field = density_slice(&flow, &p0, &grid, &vec3::ZERO, 0.5, &small(), SliceMethod::Auto).unwrap();
        assert_eq!(field.nodes.len(), grid.len());
        for n in &field.nodes {
            assert_eq!(n.value, p0.eval(&n.u, &vec3::ZERO));
            assert_eq!(n.stderr, 0.0);
        }
    }

    #[test]
    fn slice_is_thread_count_invariant() {
        let flow = zero_flow(Regime::WeaklyHomogeneous, 1.0);
        let p0 = InitialDensity::new("x", 2.0, |u: &Vec3, x: &Vec3| (-vec3::norm2(u)).exp() * (1.0 + x[1].cos())).unwrap();
        let grid = SliceGrid::square(-1.0, 1.0, 3, 0.0);
        let cfg = McConfig { n_samples: 2000, seed: 9, ..McConfig::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| density_slice(&flow, &p0, &grid, &vec3::ZERO, 0.3, &cfg, SliceMethod::Mc).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn slice_fails_when_many_nodes_fail() {
        let field = FnField::new(|_: &Vec3, y: &Vec3, _| if y[0] > 0.0 { [f64::NAN; 3] } else { [0.0; 3] }).position_free();
        let flow = FlowSpec::new("bad", 0.0, Regime::Inviscid, CoefficientSource::DirectQ(Arc::new(field))).unwrap();
        let grid = SliceGrid::square(-1.0, 1.0, 4, 0.0);
        let err = density_slice(&flow, &alpha_like(), &grid, &vec3::ZERO, 1.0, &small(), SliceMethod::Auto).unwrap_err();
        assert!(matches!(err, Error::SliceFailure { failed: 8, total: 16, .. }));
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = SliceGrid::figure_default();
        assert_eq!(g.len(), 121 * 121);
        let nodes = g.nodes();
        assert_eq!(nodes[0], [-3.0, -3.0, 0.3]);
        assert_eq!(nodes[nodes.len() - 1], [3.0, 3.0, 0.3]);
        assert!((g.u1.step() - 0.05).abs() < 1e-15);
    }
}
