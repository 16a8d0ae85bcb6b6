//! The closed-form example: a flow with `C = 0` and `ν = 1`, initial data
//! `p0(u; x) = α(u) + β(u) γ(x)`, and the solution
//! `p(u; x, t) = α(u) + β(u) E[γ(x - ut + √(2ν) M_t)]`.
//!
//! * `α` is a centred Gaussian with variances `(2/3, 1, 3/2)`.
//! * `β(u) = 1/(u¹u²u³)` on the symmetric region `I` and zero elsewhere.
//! * `γ` is a fixed smooth function of `x` that vanishes at infinity.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{DensityField, DensityNode, Side, SliceGrid};
use crate::flow_model::{
    pressure_coefficient, ConditionalStatistics, FlowClass, FlowSpec, InitialDensity, Regime, VectorField, ZeroField,
    CoefficientSource,
};
use crate::noise::{sample_mean, NoiseSpec};
use crate::output;
use crate::invariants::ComponentDensity;
use crate::quadrature::{gauss_hermite_expectation_par, gauss_legendre_nodes, QuadratureConfig, VelocityQuadrature};
use crate::report::VerificationReport;
use crate::vec3::{self, Mat3, Vec3};

pub const VISCOSITY: f64 = 1.0;

/// Variances of `α`: `σ_ii = (3/2)^(i-2)`.
pub const SIGMA_DIAG: Vec3 = [2.0 / 3.0, 1.0, 1.5];

/// Bounds of `I` per axis as rationals `(lower, upper)`, each `(num, den)`.
/// Axis `i` is `[lower, upper] ∪ [-upper, -lower]`.
pub const REGION_BOUNDS: [((f64, f64), (f64, f64)); 3] = [
    ((1.0, 4.0), (1.0, 1.0)),
    ((1.0, 4.0), (2.0, 1.0)),
    ((2.0, 7.0), (3.0, 1.0)),
];

const GAMMA_PREFACTOR: f64 = 1.0 / 36.0;
const GAMMA_WIDTH: f64 = 200.0;

/// Fixed parameters of the example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShowcaseSpec {
    pub sigma_diag: Vec3,
    /// `(lower, upper)` of the positive half of each axis of `I`.
    pub region: [(f64, f64); 3],
    pub nu: f64,
    pub gamma_prefactor: f64,
    pub gamma_width: f64,
}

impl Default for ShowcaseSpec {
    fn default() -> Self {
        Self {
            sigma_diag: SIGMA_DIAG,
            region: region_intervals(),
            nu: VISCOSITY,
            gamma_prefactor: GAMMA_PREFACTOR,
            gamma_width: GAMMA_WIDTH,
        }
    }
}

/// `(lower, upper)` of the positive half of each axis of `I`.
pub fn region_intervals() -> [(f64, f64); 3] {
    REGION_BOUNDS.map(|((ln, ld), (un, ud))| (ln / ld, un / ud))
}

/// Breakpoints of `I` on one axis, ascending: `-upper, -lower, lower, upper`.
pub fn axis_breaks(axis: usize) -> [f64; 4] {
    let (lo, hi) = region_intervals()[axis];
    [-hi, -lo, lo, hi]
}

/// `lower <= |v| <= upper`, with both bounds compared as `den·|v|` vs `num`
/// so that rational bounds such as 2/7 are tested exactly.
fn on_axis(v: f64, axis: usize) -> bool {
    let ((ln, ld), (un, ud)) = REGION_BOUNDS[axis];
    let a = v.abs();
    ld * a >= ln && ud * a <= un
}

/// Membership of the closed region `I`.
pub fn in_region(u: &Vec3) -> bool {
    (0..3).all(|k| on_axis(u[k], k))
}

pub fn alpha(u: &Vec3) -> f64 {
    crate::flow_model::gaussian_density(SIGMA_DIAG)(u)
}

pub fn beta(u: &Vec3) -> f64 {
    if in_region(u) {
        1.0 / (u[0] * u[1] * u[2])
    } else {
        0.0
    }
}

/// `β` taking the one-sided limit from inside (`Side::In`) or outside
/// (`Side::Out`) of `I`; `Side::Na` is plain [`beta`].
pub fn beta_side(u: &Vec3, side: Side) -> f64 {
    match side {
        Side::Na => beta(u),
        Side::In => 1.0 / (u[0] * u[1] * u[2]),
        Side::Out => 0.0,
    }
}

pub fn gamma(x: &Vec3) -> f64 {
    let r2 = vec3::norm2(x);
    let sum = x[0] + x[1] + x[2];
    let first = 30.0 * (x[0] - 1.0) / (30.0 + 3.0 * x[1] * x[1] + 2.0 * x[2] * x[2])
        * (-x[0] * x[0] / 3.0 + sum.sin() / 3.0).exp();
    let second = (x[1] + x[2]).cos() / (r2 + 1.0);
    let tail = 2.0 * (-r2 / GAMMA_WIDTH).exp();
    GAMMA_PREFACTOR * (2.0 * std::f64::consts::PI).powf(-1.5) * (first + second + tail)
}

pub fn example_p0(u: &Vec3, x: &Vec3) -> f64 {
    alpha(u) + beta(u) * gamma(x)
}

/// The example's initial data as an [`InitialDensity`].
pub fn initial_density() -> InitialDensity {
    InitialDensity::new("showcase", 2.0, |u: &Vec3, x: &Vec3| example_p0(u, x)).expect("valid decay exponent")
}

/// `α` alone, as an `x`-independent [`InitialDensity`].
pub fn alpha_density() -> InitialDensity {
    InitialDensity::new("alpha", 2.0, |u: &Vec3, _x: &Vec3| alpha(u)).expect("valid decay exponent")
}

/// Statistics giving `C = 0`: `ρ ≡ 0`,
/// `σ^{jk} = c + λ f(y¹-x¹, t) f(y²-x², t) f(y³-x³, t)` for every `j, k`,
/// with `f(z, t) = z⁴/8 · exp(-z²(1+t)/2)`.
///
/// `break_evenness` multiplies each factor by `(1 + z)`, which destroys
/// the odd symmetry that makes `Q` vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShowcaseStatistics {
    pub c: f64,
    pub lambda: f64,
    pub break_evenness: bool,
}

impl Default for ShowcaseStatistics {
    fn default() -> Self {
        Self {
            c: 1.0,
            lambda: 1.0,
            break_evenness: false,
        }
    }
}

impl ShowcaseStatistics {
    pub fn with_broken_evenness() -> Self {
        Self {
            break_evenness: true,
            ..Self::default()
        }
    }

    pub fn f(z: f64, t: f64) -> f64 {
        z.powi(4) / 8.0 * (-z * z * (1.0 + t) / 2.0).exp()
    }

    fn factor(&self, z: f64, t: f64) -> f64 {
        let f = Self::f(z, t);
        if self.break_evenness {
            f * (1.0 + z)
        } else {
            f
        }
    }
}

impl ConditionalStatistics for ShowcaseStatistics {
    fn name(&self) -> &str {
        if self.break_evenness {
            "showcase-odd"
        } else {
            "showcase"
        }
    }

    fn rho(&self, _x: &Vec3, _y: &Vec3, _u: &Vec3, _t: f64) -> Vec3 {
        vec3::ZERO
    }

    fn sigma(&self, x: &Vec3, y: &Vec3, _u: &Vec3, t: f64) -> Mat3 {
        let d = vec3::sub(y, x);
        let prod = self.factor(d[0], t) * self.factor(d[1], t) * self.factor(d[2], t);
        [[self.c + self.lambda * prod; 3]; 3]
    }

    fn claimed_class(&self) -> FlowClass {
        FlowClass::WeaklyHomogeneous
    }

    fn rho_vanishes(&self) -> bool {
        true
    }

    fn closed_form_drift(&self, _viscosity: f64) -> Option<Arc<dyn VectorField>> {
        if self.break_evenness {
            None
        } else {
            Some(Arc::new(ZeroField))
        }
    }
}

/// The example flow: showcase statistics, `ν = 1`, weakly homogeneous.
pub fn showcase_flow() -> FlowSpec {
    FlowSpec::new(
        "showcase",
        VISCOSITY,
        Regime::WeaklyHomogeneous,
        CoefficientSource::Statistics(Arc::new(ShowcaseStatistics::default())),
    )
    .expect("showcase flow is consistent")
}

/// How the Gaussian expectation of `γ` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GammaMethod {
    GaussHermite { order: usize },
    MonteCarlo { n_samples: usize, seed: u64 },
}

impl Default for GammaMethod {
    fn default() -> Self {
        GammaMethod::GaussHermite { order: 20 }
    }
}

/// Hermite order used for the figures: 20 points per axis resolve `γ`
/// against a unit-variance Gaussian, but at `2νt = 80` the kernel is so
/// wide that the order must grow to keep the error near 1%.
pub fn figure_gh_order(t: f64, nu: f64) -> usize {
    if 2.0 * nu * t > 4.0 {
        48
    } else {
        20
    }
}

/// A value with its Monte Carlo standard error (zero for quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShowcaseValue {
    pub value: f64,
    pub stderr: f64,
}

/// `E[γ(x - ut + √(2νt) ξ)]` for standard normal `ξ`.
pub fn smoothed_gamma(x: &Vec3, u: &Vec3, t: f64, nu: f64, method: &GammaMethod) -> Result<ShowcaseValue> {
    smoothed_gamma_on_stream(x, u, t, nu, method, 0)
}

fn smoothed_gamma_on_stream(
    x: &Vec3,
    u: &Vec3,
    t: f64,
    nu: f64,
    method: &GammaMethod,
    stream: u64,
) -> Result<ShowcaseValue> {
    if !(t >= 0.0) || !(nu >= 0.0) {
        return Err(Error::Domain(format!("smoothed_gamma needs t >= 0 and nu >= 0 (t = {t}, nu = {nu})")));
    }
    let mean = vec3::axpy(x, -t, u);
    let var = 2.0 * nu * t;
    if var == 0.0 {
        return Ok(ShowcaseValue {
            value: gamma(&mean),
            stderr: 0.0,
        });
    }
    match *method {
        GammaMethod::GaussHermite { order } => Ok(ShowcaseValue {
            value: gauss_hermite_expectation_par(gamma, &mean, &[var; 3], order),
            stderr: 0.0,
        }),
        GammaMethod::MonteCarlo { n_samples, seed } => {
            if n_samples == 0 {
                return Err(Error::Config("n_samples must be >= 1".into()));
            }
            let m = sample_mean(n_samples, |i| {
                let mut rng = NoiseSpec::on_stream(seed, stream, i as u64).rng();
                let z = vec3::add(&mean, &rng.increment(var));
                Ok((gamma(&z), 0.0))
            })?;
            Ok(ShowcaseValue {
                value: m.mean,
                stderr: m.stderr,
            })
        }
    }
}

/// The closed-form solution `α(u) + β(u) E[γ(x - ut + √2 M_t)]`.
pub fn example_pdf(u: &Vec3, x: &Vec3, t: f64, method: &GammaMethod) -> Result<ShowcaseValue> {
    example_pdf_side(u, x, t, method, Side::Na)
}

/// [`example_pdf`] with `β` taken as a one-sided limit across `∂I`.
pub fn example_pdf_side(u: &Vec3, x: &Vec3, t: f64, method: &GammaMethod, side: Side) -> Result<ShowcaseValue> {
    example_pdf_inner(u, x, t, method, side, 0)
}

fn example_pdf_inner(u: &Vec3, x: &Vec3, t: f64, method: &GammaMethod, side: Side, stream: u64) -> Result<ShowcaseValue> {
    let a = alpha(u);
    let b = beta_side(u, side);
    if b == 0.0 {
        return Ok(ShowcaseValue { value: a, stderr: 0.0 });
    }
    let g = smoothed_gamma_on_stream(x, u, t, VISCOSITY, method, stream)?;
    Ok(ShowcaseValue {
        value: a + b * g.value,
        stderr: b.abs() * g.stderr,
    })
}

/// Integrates `g` over the 8 boxes of `I` with an `order`-point
/// Gauss-Legendre rule per box axis.
pub fn integrate_over_region(g: impl Fn(&Vec3) -> f64 + Sync, order: usize) -> Result<f64> {
    let r = region_intervals();
    let mut axes = Vec::with_capacity(3);
    for (lo, hi) in r {
        let pos = gauss_legendre_nodes(order, lo, hi)?;
        let neg = gauss_legendre_nodes(order, -hi, -lo)?;
        axes.push([neg, pos]);
    }
    let boxes: Vec<f64> = (0..8)
        .into_par_iter()
        .map(|b| {
            let r0 = &axes[0][b & 1];
            let r1 = &axes[1][(b >> 1) & 1];
            let r2 = &axes[2][(b >> 2) & 1];
            let mut total = 0.0;
            for (u0, w0) in r0.nodes.iter().zip(&r0.weights) {
                for (u1, w1) in r1.nodes.iter().zip(&r1.weights) {
                    for (u2, w2) in r2.nodes.iter().zip(&r2.weights) {
                        total += w0 * w1 * w2 * g(&[*u0, *u1, *u2]);
                    }
                }
            }
            total
        })
        .collect();
    Ok(boxes.iter().sum())
}

/// Interior points of each box used for the pointwise identity.
fn box_samples() -> Vec<Vec3> {
    let r = region_intervals();
    let fractions = [0.3, 0.5, 0.8];
    let mut out = Vec::new();
    for b in 0..8 {
        for &f in &fractions {
            let mut u = [0.0; 3];
            for k in 0..3 {
                let (lo, hi) = r[k];
                let v = lo + f * (hi - lo);
                u[k] = if (b >> k) & 1 == 1 { v } else { -v };
            }
            out.push(u);
        }
    }
    out
}

/// `∫β`, `∫u^i β` over `I`, and `Σ_i ∂_i(u^i β)` sampled inside every box.
pub fn verify_beta_properties(order: usize) -> Result<Vec<VerificationReport>> {
    const TOL: f64 = 1e-10;
    let config = serde_json::json!({ "gl_order_per_box": order });
    let mut reports = Vec::new();
    let mass = integrate_over_region(beta, order)?;
    let box_mass = integrate_over_region(|u| beta(u).abs(), order)? / 8.0;
    reports.push(
        VerificationReport::new("beta_integral", mass, TOL, true)
            .detail("per_box_magnitude", box_mass)
            .with_config(config.clone()),
    );
    for i in 0..3 {
        let m = integrate_over_region(|u| u[i] * beta(u), order)?;
        reports.push(VerificationReport::new(format!("beta_moment_u{}", i + 1), m, TOL, true).with_config(config.clone()));
    }
    let h = 1e-2;
    let mut worst = 0.0_f64;
    for u in box_samples() {
        let mut div = 0.0;
        for i in 0..3 {
            let e = vec3::unit(i, h);
            let up = vec3::add(&u, &e);
            let um = vec3::sub(&u, &e);
            div += (up[i] * beta(&up) - um[i] * beta(&um)) / (2.0 * h);
        }
        worst = worst.max(div.abs());
    }
    reports.push(
        VerificationReport::new("beta_flux_divergence", worst, TOL, true)
            .detail("fd_step", h)
            .detail("samples", box_samples().len() as f64)
            .with_config(config),
    );
    Ok(reports)
}

/// `max_i |Q^i|` for `stats` at `(x, u, t)`; assertable against 1e-5.
pub fn showcase_q_residual(
    stats: &ShowcaseStatistics,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    quad: &QuadratureConfig,
) -> Result<VerificationReport> {
    let q = pressure_coefficient(stats, x, u, t, quad)?;
    let mut r = VerificationReport::new("showcase_q", vec3::max_abs(&q.value), 1e-5, true)
        .detail("q1", q.value[0])
        .detail("q2", q.value[1])
        .detail("q3", q.value[2])
        .with_config(serde_json::to_value(quad)?);
    if let Some(d) = q.truncation_delta {
        r = r.detail("truncation_delta", d);
    }
    if stats.break_evenness {
        r = r.note("evenness deliberately broken");
    }
    Ok(r)
}

/// Velocity-space breakpoints for the `β` part: the faces of `I` on each
/// axis plus the geometric midpoint of each half-interval.
pub fn region_plan_breaks(axis: usize) -> [f64; 6] {
    let (lo, hi) = region_intervals()[axis];
    let mid = (lo * hi).sqrt();
    [-hi, -mid, -lo, lo, mid, hi]
}

/// The solution at time `t` split as `α` (Hermite plan) plus
/// `β E[γ]` (Gauss-Legendre plan aligned with `I`), for the invariant checks.
pub fn solution_components(t: f64, gh_order: usize, box_order: usize) -> Result<ComponentDensity> {
    let b = [region_plan_breaks(0), region_plan_breaks(1), region_plan_breaks(2)];
    let beta_plan = VelocityQuadrature::piecewise_legendre([&b[0], &b[1], &b[2]], box_order)?.without_shell();
    let alpha_plan = VelocityQuadrature::gauss_hermite(&vec3::ZERO, &SIGMA_DIAG, 24);
    let method = GammaMethod::GaussHermite { order: gh_order };
    Ok(ComponentDensity::single("alpha", alpha_plan, |u, _x| Ok(alpha(u))).with(
        "beta_gamma",
        beta_plan,
        move |u, x| {
            let b = beta(u);
            if b == 0.0 {
                return Ok(0.0);
            }
            Ok(b * smoothed_gamma(x, u, t, VISCOSITY, &method)?.value)
        },
    ))
}

/// The three published density slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    T05,
    T40,
    T40x12,
}

impl Figure {
    pub fn all() -> [Figure; 3] {
        [Figure::T05, Figure::T40, Figure::T40x12]
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Figure::T05 => "t05",
            Figure::T40 => "t40",
            Figure::T40x12 => "t40x12",
        }
    }

    pub fn parse(tag: &str) -> Option<Figure> {
        Figure::all().into_iter().find(|f| f.tag() == tag)
    }

    pub fn x(&self) -> Vec3 {
        match self {
            Figure::T40x12 => [12.0; 3],
            _ => vec3::ZERO,
        }
    }

    pub fn t(&self) -> f64 {
        match self {
            Figure::T05 => 0.5,
            _ => 40.0,
        }
    }
}

/// Grid and evaluation method for figure data. `method = None` picks
/// Gauss-Hermite with [`figure_gh_order`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureConfig {
    pub grid: SliceGrid,
    pub method: Option<GammaMethod>,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self {
            grid: SliceGrid::figure_default(),
            method: None,
        }
    }
}

impl FigureConfig {
    pub fn method_for(&self, figure: Figure) -> GammaMethod {
        self.method.unwrap_or(GammaMethod::GaussHermite {
            order: figure_gh_order(figure.t(), VISCOSITY),
        })
    }
}

/// A figure slice and, for `t05`, the change `p - p0` over the same nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureData {
    pub figure: Figure,
    pub field: DensityField,
    pub difference: Option<DensityField>,
}

const SNAP: f64 = 1e-9;

/// Snaps coordinates lying within 1e-9 of a face of `I` onto it and reports
/// whether the node sits on `∂I`.
fn snap_to_region(u: &Vec3) -> (Vec3, bool) {
    let mut out = *u;
    let mut on_face = false;
    for k in 0..3 {
        for b in axis_breaks(k) {
            if (u[k] - b).abs() <= SNAP {
                out[k] = b;
                on_face = true;
            }
        }
    }
    (out, on_face && in_region(&out))
}

/// Evaluates the closed-form solution over `grid`. Nodes on `∂I` are
/// emitted twice, once per one-sided limit.
pub fn figure_data(figure: Figure, config: &FigureConfig) -> Result<FigureData> {
    let x = figure.x();
    let t = figure.t();
    let method = config.method_for(figure);
    let mut plan: Vec<(Vec3, Side)> = Vec::with_capacity(config.grid.len());
    for u in config.grid.nodes() {
        let (u, on_boundary) = snap_to_region(&u);
        if on_boundary {
            plan.push((u, Side::In));
            plan.push((u, Side::Out));
        } else {
            plan.push((u, Side::Na));
        }
    }
    let values: Vec<Result<(DensityNode, f64)>> = plan
        .par_iter()
        .enumerate()
        .map(|(i, (u, side))| {
            let v = example_pdf_inner(u, &x, t, &method, *side, i as u64)?;
            let p0 = alpha(u) + beta_side(u, *side) * gamma(&x);
            Ok((
                DensityNode {
                    u: *u,
                    side: *side,
                    value: v.value,
                    stderr: v.stderr,
                },
                p0,
            ))
        })
        .collect();
    let mut nodes = Vec::with_capacity(plan.len());
    let mut diff = Vec::with_capacity(plan.len());
    for v in values {
        let (node, p0) = v?;
        diff.push(DensityNode {
            value: node.value - p0,
            ..node
        });
        nodes.push(node);
    }
    let seed = match method {
        GammaMethod::MonteCarlo { seed, .. } => Some(seed),
        GammaMethod::GaussHermite { .. } => None,
    };
    let method_desc = serde_json::to_string(&method)?;
    let field = DensityField {
        flow: "showcase".into(),
        method: method_desc.clone(),
        grid: config.grid.clone(),
        x,
        t,
        seed,
        nodes,
    };
    let difference = (figure == Figure::T05).then(|| DensityField {
        nodes: diff,
        method: format!("{method_desc} minus p0"),
        ..field.clone()
    });
    Ok(FigureData {
        figure,
        field,
        difference,
    })
}

/// [`figure_data`] plus `<tag>.csv`, `<tag>.meta.json` and, for `t05`,
/// `<tag>_diff.csv` under `out_dir`. Returns the data and written paths.
pub fn emit_figure_data(
    figure: Figure,
    config: &FigureConfig,
    out_dir: &Path,
    force: bool,
) -> Result<(FigureData, Vec<PathBuf>)> {
    emit_figure_data_with_meta(figure, config, out_dir, force, serde_json::Value::Null)
}

/// [`emit_figure_data`] with `extra` stored under `run` in the metadata.
pub fn emit_figure_data_with_meta(
    figure: Figure,
    config: &FigureConfig,
    out_dir: &Path,
    force: bool,
    extra: serde_json::Value,
) -> Result<(FigureData, Vec<PathBuf>)> {
    let data = figure_data(figure, config)?;
    std::fs::create_dir_all(out_dir)?;
    let tag = figure.tag();
    let mut written = Vec::new();
    let csv_path = out_dir.join(format!("{tag}.csv"));
    output::write_density_csv(&data.field, &csv_path, true, force)?;
    written.push(csv_path);
    if let Some(diff) = &data.difference {
        let p = out_dir.join(format!("{tag}_diff.csv"));
        output::write_density_csv(diff, &p, true, force)?;
        written.push(p);
    }
    let meta = serde_json::json!({
        "figure": tag,
        "x": data.field.x,
        "t": data.field.t,
        "nu": VISCOSITY,
        "u3": config.grid.u3,
        "grid": config.grid,
        "method": config.method_for(figure),
        "seed": data.field.seed,
        "rows": data.field.nodes.len(),
        "boundary_rows": data.field.nodes.iter().filter(|n| n.side != Side::Na).count(),
        "run": extra,
    });
    let meta_path = out_dir.join(format!("{tag}.meta.json"));
    output::write_json(&meta, &meta_path, force)?;
    written.push(meta_path);
    Ok((data, written))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_model::{coefficient_field, second_moment_tensor};

    #[test]
    fn alpha_at_origin() {
        assert!((alpha(&vec3::ZERO) - 0.063_493_635_934_240_97).abs() < 1e-15);
        let det: f64 = SIGMA_DIAG.iter().product();
        assert!((det - 1.0).abs() < 1e-15);
    }

    #[test]
    fn beta_values_and_support() {
        assert_eq!(beta(&[0.5, 0.5, 0.5]), 8.0);
        assert_eq!(beta(&vec3::ZERO), 0.0);
        assert_eq!(beta(&[0.5, 0.5, 0.2]), 0.0);
        assert_eq!(beta(&[1.5, 0.5, 0.5]), 0.0);
        assert_eq!(beta(&[-0.5, 0.5, 0.5]), -8.0);
    }

    #[test]
    fn region_is_symmetric_and_uses_exact_two_sevenths() {
        let probes = [[0.3, 1.9, 2.9], [0.26, 0.26, 0.29], [0.9, 0.3, 1.0], [1.2, 0.3, 0.5], [0.5, 0.1, 0.5]];
        for u in probes {
            assert_eq!(in_region(&u), in_region(&vec3::scale(&u, -1.0)));
        }
        assert!(in_region(&[0.25, 0.25, 2.0 / 7.0]));
        assert!(!in_region(&[0.25, 0.25, 0.2857]));
        assert!(in_region(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn gamma_at_origin() {
        let expected = 2.0 / 36.0 * (2.0 * std::f64::consts::PI).powf(-1.5);
        assert!((gamma(&vec3::ZERO) - expected).abs() < 1e-17);
        assert!((gamma(&vec3::ZERO) - 3.5274e-3).abs() < 1e-7);
    }

    #[test]
    fn p0_goes_negative_at_a_sign_mixed_corner() {
        let u = [-0.25, 0.25, 2.0 / 7.0];
        let p = example_p0(&u, &vec3::ZERO);
        let expected = alpha(&u) - 56.0 * gamma(&vec3::ZERO);
        assert!((p - expected).abs() < 1e-15);
        assert!((p + 0.1404).abs() < 1e-3, "p0 = {p}");
    }

    #[test]
    fn f_shape() {
        for t in [0.0, 0.5, 3.0] {
            assert_eq!(ShowcaseStatistics::f(0.0, t), 0.0);
            for z in [0.3, 1.0, 2.5] {
                assert_eq!(ShowcaseStatistics::f(z, t), ShowcaseStatistics::f(-z, t));
            }
            assert!(ShowcaseStatistics::f(40.0, t) < 1e-100);
        }
    }

    #[test]
    fn sigma_is_constant_plus_product() {
        let s = ShowcaseStatistics::default();
        let x = [0.1, 0.2, 0.3];
        let y = [1.1, -0.8, 1.3];
        let sigma = s.sigma(&x, &y, &[0.5; 3], 0.2);
        let f = ShowcaseStatistics::f;
        let expected = 1.0 + f(1.0, 0.2) * f(-1.0, 0.2) * f(1.0, 0.2);
        for row in sigma {
            for v in row {
                assert!((v - expected).abs() < 1e-15);
            }
        }
        let m = second_moment_tensor(&s, &x, &y, &[0.5; 3], 0.2);
        assert!((m[0][1] - expected - 0.25).abs() < 1e-15);
    }

    #[test]
    fn smoothed_gamma_at_zero_time_is_gamma() {
        let x = [0.3, -1.0, 2.0];
        let g = smoothed_gamma(&x, &[0.5, 0.5, 0.3], 0.0, 1.0, &GammaMethod::default()).unwrap();
        assert_eq!(g.value, gamma(&x));
        assert_eq!(g.stderr, 0.0);
    }

    #[test]
    fn hermite_and_monte_carlo_agree() {
        let x = vec3::ZERO;
        let u = [0.5, 0.5, 0.3];
        let gh = smoothed_gamma(&x, &u, 0.5, 1.0, &GammaMethod::GaussHermite { order: 20 }).unwrap();
        let mc = smoothed_gamma(&x, &u, 0.5, 1.0, &GammaMethod::MonteCarlo { n_samples: 200_000, seed: 3 }).unwrap();
        assert!((gh.value - mc.value).abs() < 3.0 * mc.stderr, "gh {} mc {} ± {}", gh.value, mc.value, mc.stderr);
    }

    #[test]
    fn smoothed_gamma_decays() {
        let u = [0.5, 0.5, 0.3];
        let early = smoothed_gamma(&vec3::ZERO, &u, 0.5, 1.0, &GammaMethod::GaussHermite { order: 20 }).unwrap();
        let late = smoothed_gamma(&vec3::ZERO, &u, 40.0, 1.0, &GammaMethod::GaussHermite { order: 48 }).unwrap();
        assert!(late.value.abs() < early.value.abs());
    }

    #[test]
    fn outside_region_solution_is_alpha() {
        let u = [2.5, 0.1, 0.3];
        for t in [0.0, 0.5, 40.0] {
            let p = example_pdf(&u, &[1.0, 2.0, 3.0], t, &GammaMethod::default()).unwrap();
            assert_eq!(p.value, alpha(&u));
        }
    }

    #[test]
    fn zero_time_solution_is_p0() {
        let x = [0.2, -0.4, 1.0];
        for u in [[0.5, 0.5, 0.5], [-0.3, 1.5, -2.0], [0.0, 0.0, 0.0]] {
            assert_eq!(example_pdf(&u, &x, 0.0, &GammaMethod::default()).unwrap().value, example_p0(&u, &x));
        }
    }

    #[test]
    fn solution_jumps_across_the_boundary() {
        let x = vec3::ZERO;
        let u = [0.25, 0.25, 0.3];
        let m = GammaMethod::default();
        let inside = example_pdf_side(&u, &x, 0.5, &m, Side::In).unwrap().value;
        let outside = example_pdf_side(&u, &x, 0.5, &m, Side::Out).unwrap().value;
        assert!((inside - outside).abs() > 1e-2);
        let just_in = example_pdf(&[0.25 + 1e-9, 0.25, 0.3], &x, 0.5, &m).unwrap().value;
        assert!((just_in - inside).abs() < 1e-6);
    }

    #[test]
    fn beta_properties_hold() {
        for r in verify_beta_properties(16).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn region_integral_of_a_box_indicator() {
        // Volume of I: 8 · (3/4)(7/4)(19/7).
        let v = integrate_over_region(|_| 1.0, 4).unwrap();
        assert!((v - 8.0 * 0.75 * 1.75 * (19.0 / 7.0)).abs() < 1e-12);
        let m = integrate_over_region(|u| u[0] * u[0], 8).unwrap();
        let expected = 8.0 * (1.0 - 1.0 / 64.0) / 3.0 * 1.75 * (19.0 / 7.0);
        assert!((m - expected).abs() < 1e-12);
    }

    #[test]
    fn drift_vanishes_for_the_showcase_statistics() {
        let flow = showcase_flow();
        let c = coefficient_field(&flow, &[0.3, -0.2, 0.1], &[0.5, 0.1, -0.4], 0.7).unwrap();
        assert!(vec3::max_abs(&c.c) < 1e-5, "C = {:?}", c.c);
        assert!(flow.drift().eval(&vec3::ZERO, &[1.0; 3], 0.0) == vec3::ZERO);
        assert!(ShowcaseStatistics::with_broken_evenness().closed_form_drift(1.0).is_none());
    }

    #[test]
    fn snapping_marks_boundary_nodes() {
        let (u, b) = snap_to_region(&[0.25 + 1e-12, 0.5, 0.3]);
        assert!(b);
        assert_eq!(u[0], 0.25);
        let (_, b) = snap_to_region(&[0.25 + 1e-12, 2.5, 0.3]);
        assert!(!b);
        let (_, b) = snap_to_region(&[0.5, 0.5, 0.3]);
        assert!(!b);
    }

    #[test]
    fn small_figure_has_paired_boundary_rows() {
        let cfg = FigureConfig {
            grid: SliceGrid::square(-3.0, 3.0, 25, 0.3),
            method: None,
        };
        let data = figure_data(Figure::T05, &cfg).unwrap();
        let ins = data.field.nodes.iter().filter(|n| n.side == Side::In).count();
        let outs = data.field.nodes.iter().filter(|n| n.side == Side::Out).count();
        assert_eq!(ins, outs);
        assert!(ins > 0);
        assert_eq!(data.field.nodes.len(), 625 + ins);
        let diff = data.difference.unwrap();
        for (n, d) in data.field.nodes.iter().zip(&diff.nodes) {
            if beta_side(&n.u, n.side) == 0.0 {
                assert_eq!(d.value, 0.0);
            }
        }
    }
}
