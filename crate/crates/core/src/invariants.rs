//! Numerical checks of the properties solutions are expected to have:
//! unit mass, the divergence-free first moment, the PDE residual, the
//! second-moment identity, and positivity of the example's initial data.
//!
//! Assertable checks cover analytically forced cases and may fail a strict
//! run. Diagnostic checks measure claims under audit and only warn.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow_model::VectorField;
use crate::quadrature::VelocityQuadrature;
use crate::report::VerificationReport;
use crate::showcase::{self, ShowcaseSpec};
use crate::vec3::{self, Vec3};

/// Boundary-shell share of `∫p du` above which coverage is questioned.
pub const SHELL_LIMIT: f64 = 1e-6;

pub type ComponentFn = dyn Fn(&Vec3, &Vec3) -> Result<f64> + Send + Sync;

/// One additive piece `f(u; x)` of a density with the plan that resolves it.
#[derive(Clone)]
pub struct DensityComponent {
    pub name: String,
    pub plan: Arc<VelocityQuadrature>,
    pub f: Arc<ComponentFn>,
}

/// `p(u; x) = Σ f_k(u; x)`, each piece integrated on its own plan.
#[derive(Clone, Default)]
pub struct ComponentDensity {
    pub components: Vec<DensityComponent>,
}

impl fmt::Debug for ComponentDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.components.iter().map(|c| (&c.name, c.plan.len())))
            .finish()
    }
}

impl ComponentDensity {
    pub fn single(
        name: impl Into<String>,
        plan: VelocityQuadrature,
        f: impl Fn(&Vec3, &Vec3) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::default().with(name, plan, f)
    }

    pub fn with(
        mut self,
        name: impl Into<String>,
        plan: VelocityQuadrature,
        f: impl Fn(&Vec3, &Vec3) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        self.components.push(DensityComponent {
            name: name.into(),
            plan: Arc::new(plan),
            f: Arc::new(f),
        });
        self
    }

    pub fn eval(&self, u: &Vec3, x: &Vec3) -> Result<f64> {
        self.components.iter().map(|c| (c.f)(u, x)).sum()
    }

    /// `∫ m_k(u) p(u; x) du` for `K` moment functions at once, plus the
    /// shell share of `∫ |p|`.
    pub fn moments<const K: usize>(&self, x: &Vec3, m: impl Fn(&Vec3) -> [f64; K] + Sync) -> Result<([f64; K], f64)> {
        let mut total = [0.0; K];
        let mut shell = 0.0;
        for c in &self.components {
            let plan = &c.plan;
            let values: Vec<Result<f64>> = plan.nodes().par_iter().map(|u| (c.f)(u, x)).collect();
            for (((u, w), s), v) in plan.nodes().iter().zip(plan.weights()).zip(plan.shell_flags()).zip(values) {
                let pv = v? * w;
                if pv == 0.0 {
                    continue;
                }
                let mk = m(u);
                for k in 0..K {
                    total[k] += mk[k] * pv;
                }
                if *s {
                    shell += pv.abs();
                }
            }
        }
        Ok((total, shell))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.components
                .iter()
                .map(|c| serde_json::json!({ "component": c.name, "plan": c.plan.description(), "nodes": c.plan.len() }))
                .collect(),
        )
    }
}

fn coverage(report: VerificationReport, shell: f64) -> VerificationReport {
    let r = report.detail("shell_contribution", shell);
    if shell > SHELL_LIMIT {
        r.warn(format!("quadrature shell carries {shell:.3e} of the integral; the plan may not cover the support"))
    } else {
        r
    }
}

/// `|∫p(u; x) du - 1|`.
pub fn check_mass(p: &ComponentDensity, x: &Vec3, tol: f64, assertable: bool) -> Result<VerificationReport> {
    let ([mass], shell) = p.moments(x, |_| [1.0])?;
    let r = VerificationReport::new("mass", (mass - 1.0).abs(), tol, assertable)
        .detail("mass", mass)
        .with_config(serde_json::json!({ "x": x, "plan": p.describe() }));
    Ok(coverage(r, shell))
}

/// Central-difference divergence of `m^i(x) = ∫u^i p du`.
pub fn check_divergence_free(
    p: &ComponentDensity,
    x: &Vec3,
    h_x: f64,
    tol: f64,
    assertable: bool,
) -> Result<VerificationReport> {
    crate::quadrature::check_step(h_x)?;
    let mut div = 0.0;
    let mut shell = 0.0_f64;
    let mut r = VerificationReport::new("divergence_free", 0.0, tol, assertable);
    for k in 0..3 {
        let e = vec3::unit(k, h_x);
        let (plus, s1) = p.moments(&vec3::add(x, &e), |u| [u[k]])?;
        let (minus, s2) = p.moments(&vec3::sub(x, &e), |u| [u[k]])?;
        let d = (plus[0] - minus[0]) / (2.0 * h_x);
        r = r.detail(format!("d_m{}_dx{}", k + 1, k + 1), d);
        div += d;
        shell = shell.max(s1).max(s2);
    }
    let fresh = VerificationReport::new("divergence_free", div.abs(), tol, assertable)
        .with_config(serde_json::json!({ "x": x, "h_x": h_x, "plan": p.describe() }));
    let mut out = coverage(fresh, shell).detail("divergence", div);
    out.details.extend(r.details);
    Ok(out)
}

/// Density as a function of `(u, x, t)`.
pub type SpaceTimeDensity<'a> = &'a (dyn Fn(&Vec3, &Vec3, f64) -> f64 + Sync);

/// `R = ∂_t p + u·∇_x p - ν Δ_x p - ∇_u·(p C)` by central differences of
/// step `h` (one-sided in `t` when `t < h`). `c = None` means `C ≡ 0`.
pub fn pde_residual(
    p: SpaceTimeDensity<'_>,
    c: Option<&dyn VectorField>,
    nu: f64,
    u: &Vec3,
    x: &Vec3,
    t: f64,
    h: f64,
) -> Result<f64> {
    crate::quadrature::check_step(h)?;
    let f = |x: &Vec3| p(u, x, t);
    let dt = if t >= h {
        (p(u, x, t + h) - p(u, x, t - h)) / (2.0 * h)
    } else {
        (-3.0 * p(u, x, t) + 4.0 * p(u, x, t + h) - p(u, x, t + 2.0 * h)) / (2.0 * h)
    };
    let grad = crate::quadrature::gradient(&f, x, h);
    let lap = crate::quadrature::laplacian(&f, x, h);
    let mut flux = 0.0;
    if let Some(c) = c {
        for i in 0..3 {
            let e = vec3::unit(i, h);
            let up = vec3::add(u, &e);
            let um = vec3::sub(u, &e);
            flux += (p(&up, x, t) * c.eval(x, &up, t)[i] - p(&um, x, t) * c.eval(x, &um, t)[i]) / (2.0 * h);
        }
    }
    let r = dt + vec3::dot(u, &grad) - nu * lap - flux;
    if !r.is_finite() {
        return Err(Error::non_finite("PDE residual", x));
    }
    Ok(r)
}

/// Residual at steps `h` and `h/2` with the implied convergence order.
/// `discontinuity_distance` is the distance from the evaluation point to the
/// nearest known jump surface of `p`, if any.
#[allow(clippy::too_many_arguments)]
pub fn check_pde_residual(
    p: SpaceTimeDensity<'_>,
    c: Option<&dyn VectorField>,
    nu: f64,
    u: &Vec3,
    x: &Vec3,
    t: f64,
    h: f64,
    tol: f64,
    assertable: bool,
    discontinuity_distance: Option<f64>,
) -> Result<VerificationReport> {
    let r1 = pde_residual(p, c, nu, u, x, t, h)?;
    let r2 = pde_residual(p, c, nu, u, x, t, 0.5 * h)?;
    let mut r = VerificationReport::new("pde_residual", r2.abs(), tol, assertable)
        .detail("residual_h", r1)
        .detail("residual_h_half", r2)
        .with_config(serde_json::json!({ "u": u, "x": x, "t": t, "h": h, "nu": nu }));
    if r1 != 0.0 && r2 != 0.0 {
        r = r.detail("observed_order", (r1.abs() / r2.abs()).log2());
    }
    if let Some(d) = discontinuity_distance {
        if c.is_some() && d < 2.0 * h {
            r = r.warn(format!("u stencil reaches within {d:.3e} of a discontinuity"));
        }
    }
    Ok(r)
}

/// `∇_x·∫C p du` against `-∂_i∂_j ∫u^i u^j p du`, on the 19-point stencil.
pub fn check_moment_identity(
    c: &dyn VectorField,
    p: &ComponentDensity,
    x: &Vec3,
    t: f64,
    h_x: f64,
    tol: f64,
    assertable: bool,
) -> Result<VerificationReport> {
    crate::quadrature::check_step(h_x)?;
    const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    // Moments per stencil point: C^1, C^2, C^3, then u^i u^j for PAIRS.
    let at = |y: &Vec3| -> Result<[f64; 9]> {
        let (m, _) = p.moments(y, |u| {
            let cv = c.eval(y, u, t);
            [
                cv[0],
                cv[1],
                cv[2],
                u[0] * u[0],
                u[1] * u[1],
                u[2] * u[2],
                u[0] * u[1],
                u[0] * u[2],
                u[1] * u[2],
            ]
        })?;
        Ok(m)
    };
    let centre = at(x)?;
    let mut lhs = 0.0;
    let mut axis = [[[0.0; 9]; 2]; 3];
    for k in 0..3 {
        let e = vec3::unit(k, h_x);
        axis[k][0] = at(&vec3::add(x, &e))?;
        axis[k][1] = at(&vec3::sub(x, &e))?;
        lhs += (axis[k][0][k] - axis[k][1][k]) / (2.0 * h_x);
    }
    let mut rhs = 0.0;
    for (slot, &(i, j)) in PAIRS.iter().enumerate() {
        let idx = 3 + slot;
        let d2 = if i == j {
            (axis[i][0][idx] - 2.0 * centre[idx] + axis[i][1][idx]) / (h_x * h_x)
        } else {
            let ei = vec3::unit(i, h_x);
            let ej = vec3::unit(j, h_x);
            let pp = at(&vec3::add(&vec3::add(x, &ei), &ej))?[idx];
            let pm = at(&vec3::sub(&vec3::add(x, &ei), &ej))?[idx];
            let mp = at(&vec3::add(&vec3::sub(x, &ei), &ej))?[idx];
            let mm = at(&vec3::sub(&vec3::sub(x, &ei), &ej))?[idx];
            // Off-diagonal pairs appear twice in the double sum.
            2.0 * (pp - pm - mp + mm) / (4.0 * h_x * h_x)
        };
        rhs -= d2;
    }
    Ok(VerificationReport::new("moment_identity", (lhs - rhs).abs(), tol, assertable)
        .detail("lhs", lhs)
        .detail("rhs", rhs)
        .with_config(serde_json::json!({ "x": x, "t": t, "h_x": h_x, "plan": p.describe() })))
}

/// Measured positivity margin of the example's initial data. Always
/// diagnostic: the headline value is `max(0, -min p0)`.
pub fn check_positivity_bound(spec: &ShowcaseSpec, u_grid: &[Vec3], x_grid: &[Vec3]) -> VerificationReport {
    assert!(!u_grid.is_empty() && !x_grid.is_empty(), "positivity grids must be nonempty");
    let _ = spec;
    let m_i = u_grid
        .iter()
        .filter(|u| showcase::in_region(u))
        .map(|u| showcase::alpha(u) * (u[0] * u[1] * u[2]).abs())
        .fold(f64::INFINITY, f64::min);
    let (max_gamma, _) = x_grid.iter().fold((0.0_f64, vec3::ZERO), |(m, at), x| {
        let g = showcase::gamma(x).abs();
        if g > m {
            (g, *x)
        } else {
            (m, at)
        }
    });
    let mut min_p0 = f64::INFINITY;
    let mut arg = (vec3::ZERO, vec3::ZERO);
    for x in x_grid {
        for u in u_grid {
            let v = showcase::example_p0(u, x);
            if v < min_p0 {
                min_p0 = v;
                arg = (*u, *x);
            }
        }
    }
    let mut r = VerificationReport::new("positivity_bound", (-min_p0).max(0.0), 0.0, false)
        .detail("min_alpha_times_abs_u_product", m_i)
        .detail("max_abs_gamma", max_gamma)
        .detail("min_p0", min_p0)
        .detail("argmin_u1", arg.0[0])
        .detail("argmin_u2", arg.0[1])
        .detail("argmin_u3", arg.0[2])
        .detail("argmin_x1", arg.1[0])
        .detail("argmin_x2", arg.1[1])
        .detail("argmin_x3", arg.1[2])
        .with_config(serde_json::json!({ "u_points": u_grid.len(), "x_points": x_grid.len() }));
    if max_gamma > m_i {
        r = r.note(format!(
            "sup |gamma| = {max_gamma:.4e} exceeds inf alpha/|beta| = {m_i:.4e}; positivity of p0 is not guaranteed"
        ));
    }
    if min_p0 < 0.0 {
        r = r.note(format!("p0 is negative ({min_p0:.4e}) at sampled points"));
    }
    r
}

/// Default sample sets for [`check_positivity_bound`]: corners and interior
/// points of every box of `I` (all sign patterns), and a few positions
/// including the origin.
pub fn default_positivity_grids() -> (Vec<Vec3>, Vec<Vec3>) {
    let r = showcase::region_intervals();
    let mut u_grid = Vec::new();
    let fractions = [0.0, 0.25, 0.5, 1.0];
    for b in 0..8 {
        for &f0 in &fractions {
            for &f1 in &fractions {
                for &f2 in &fractions {
                    let f = [f0, f1, f2];
                    let mut u = [0.0; 3];
                    for k in 0..3 {
                        let (lo, hi) = r[k];
                        let v = if f[k] == 0.0 { lo } else if f[k] == 1.0 { hi } else { lo + f[k] * (hi - lo) };
                        u[k] = if (b >> k) & 1 == 1 { v } else { -v };
                    }
                    u_grid.push(u);
                }
            }
        }
    }
    let x_grid = vec![
        vec3::ZERO,
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, -1.0],
        [2.0, 2.0, 2.0],
        [12.0, 12.0, 12.0],
    ];
    (u_grid, x_grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_model::{gaussian_density, AffineField};
    use crate::quadrature::VelocityQuadrature;

    const VAR: Vec3 = [2.0 / 3.0, 1.0, 1.5];

    fn alpha_density() -> ComponentDensity {
        let g = gaussian_density(VAR);
        ComponentDensity::single("alpha", VelocityQuadrature::gauss_hermite(&vec3::ZERO, &VAR, 16), move |u, _| Ok(g(u)))
    }

    #[test]
    fn gaussian_mass_is_one() {
        let r = check_mass(&alpha_density(), &vec3::ZERO, 1e-8, true).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn product_of_one_dimensional_densities_has_unit_mass() {
        // Laplace × logistic × uniform-ish smooth bump.
        let plan = VelocityQuadrature::piecewise_legendre([&[-40.0, 0.0, 40.0], &[-40.0, 0.0, 40.0], &[-1.0, 1.0]], 60)
            .unwrap()
            .without_shell();
        let d = ComponentDensity::single("product", plan, |u, _| {
            let lap = 0.5 * (-u[0].abs()).exp();
            let logi = {
                let e = (-u[1]).exp();
                e / ((1.0 + e) * (1.0 + e))
            };
            let tri = 0.75 * (1.0 - u[2] * u[2]);
            Ok(lap * logi * tri)
        });
        let r = check_mass(&d, &vec3::ZERO, 1e-8, true).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn truncated_plan_triggers_coverage_warning() {
        let g = gaussian_density([1.0; 3]);
        let plan = VelocityQuadrature::piecewise_legendre([&[-2.0, 2.0], &[-2.0, 2.0], &[-2.0, 2.0]], 12).unwrap();
        let d = ComponentDensity::single("narrow", plan, move |u, _| Ok(g(u)));
        let r = check_mass(&d, &vec3::ZERO, 1.0, true).unwrap();
        assert_eq!(r.status, crate::report::Status::Warn);
    }

    #[test]
    fn x_independent_density_is_divergence_free() {
        let r = check_divergence_free(&alpha_density(), &[0.3, 0.1, -0.2], 1e-3, 1e-12, true).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn odd_moment_cancels_linear_perturbation() {
        let g = gaussian_density(VAR);
        let d = ComponentDensity::single("tilted", VelocityQuadrature::gauss_hermite(&vec3::ZERO, &VAR, 16), move |u, x| {
            Ok(g(u) * (1.0 + 0.1 * x[0]))
        });
        let r = check_divergence_free(&d, &vec3::ZERO, 1e-3, 1e-10, true).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn residual_of_stationary_gaussian_is_zero() {
        let g = gaussian_density(VAR);
        let p = move |u: &Vec3, _x: &Vec3, _t: f64| g(u);
        let r = check_pde_residual(&p, None, 1.0, &[0.3, 0.2, 0.1], &[1.0, 2.0, 3.0], 0.5, 1e-3, 0.0, true, None).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.details["residual_h"], 0.0);
    }

    #[test]
    fn planted_non_solution_leaves_transport_term() {
        let g = gaussian_density(VAR);
        let p = move |u: &Vec3, x: &Vec3, _t: f64| g(u) * (1.0 + x[0]);
        let u = [0.7, -0.3, 0.2];
        let r = pde_residual(&p, None, 1.0, &u, &[0.4, 0.0, 0.0], 1.0, 1e-3).unwrap();
        // The x-Laplacian of a linear function is exact up to eps / h^2 rounding.
        assert!((r - u[0] * g(&u)).abs() < 1e-9, "{r}");
    }

    #[test]
    fn damped_inviscid_density_solves_the_equation() {
        // p = α(u e^{-t}) e^{-3t} solves ∂_t p = ∇_u·(p C) with C = -u.
        let g = gaussian_density(VAR);
        let p = move |u: &Vec3, _x: &Vec3, t: f64| g(&vec3::scale(u, (-t).exp())) * (-3.0 * t).exp();
        let c = AffineField::damping(1.0);
        let r = check_pde_residual(&p, Some(&c), 0.0, &[0.5, 0.2, -0.4], &vec3::ZERO, 0.7, 1e-2, 1e-5, true, None).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.details["observed_order"] > 1.9);
    }

    #[test]
    fn moment_identity_for_stationary_data() {
        let r = check_moment_identity(&crate::flow_model::ZeroField, &alpha_density(), &vec3::ZERO, 0.5, 1e-3, 1e-10, true)
            .unwrap();
        assert_eq!(r.details["lhs"], 0.0);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn positivity_diagnostic_finds_the_negative_corner() {
        let (u, x) = default_positivity_grids();
        let r = check_positivity_bound(&ShowcaseSpec::default(), &u, &x);
        assert!(!r.assertable);
        assert!(!r.failed());
        let m = r.details["min_alpha_times_abs_u_product"];
        // Smallest corner value: u = (1/4, 1/4, 3) with unit-determinant covariance.
        let q = 0.25_f64.powi(2) * 1.5 + 0.25_f64.powi(2) + 9.0 / 1.5;
        let expected = (2.0 * std::f64::consts::PI).powf(-1.5) * (-0.5 * q).exp() * 0.25 * 0.25 * 3.0;
        assert!((m - expected).abs() < 1e-12, "{m} vs {expected}");
        assert!(r.details["min_p0"] < -0.1);
    }
}
