use std::io::Write;
use std::path::{Path, PathBuf};

use pdfflow::characteristics::{simulate_homogeneous, solve_inviscid_path, CharacteristicState};
use pdfflow::estimator::{density_slice, estimate_with, SliceMethod};
use pdfflow::flow_model::{
    classify_flow, coefficient_field, diffusion_matrix, CoefficientSource, Regime, SamplePoint,
};
use pdfflow::invariants::{
    check_divergence_free, check_mass, check_moment_identity, check_pde_residual, check_positivity_bound,
    default_positivity_grids,
};
use pdfflow::noise::NoiseSpec;
use pdfflow::output::{format_f64, json_bytes, write_atomic, write_density_csv, write_json};
use pdfflow::report::VerificationReport;
use pdfflow::showcase::{
    self, emit_figure_data_with_meta, example_pdf, showcase_q_residual, solution_components, verify_beta_properties,
    Figure, GammaMethod, ShowcaseSpec, ShowcaseStatistics,
};
use pdfflow::{vec3, Error, Result, Vec3};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::Suite;

pub enum Outcome {
    Success,
    /// Number of assertable checks that failed in a strict run.
    StrictFailure(usize),
}

/// Writes `value` as JSON to `out`, or to stdout.
fn emit_json<T: Serialize + ?Sized>(value: &T, out: Option<&Path>, force: bool) -> Result<()> {
    match out {
        Some(path) => write_json(value, path, force),
        None => {
            std::io::stdout().write_all(&json_bytes(value)?)?;
            Ok(())
        }
    }
}

fn meta_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn time_arg(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Config(format!("--t must be finite and >= 0 (got {t})")));
    }
    Ok(t)
}

pub fn coeffs(cfg: &RunConfig, x: &Vec3, u: &Vec3, t: f64, out: Option<&Path>, force: bool) -> Result<Outcome> {
    let flow = cfg.flow_spec()?;
    let field = coefficient_field(&flow, x, u, time_arg(t)?)?;
    let diffusion = field.b.map(|b| diffusion_matrix(&b, flow.viscosity));
    let doc = json!({
        "flow": flow.name,
        "regime": flow.regime,
        "nu": flow.viscosity,
        "x": x,
        "u": u,
        "t": t,
        "coefficients": field,
        "diffusion": diffusion,
        "config": cfg,
    });
    emit_json(&doc, out, force)?;
    Ok(Outcome::Success)
}

pub fn estimate(
    cfg: &RunConfig,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    method: Option<SliceMethod>,
    out: Option<&Path>,
    force: bool,
) -> Result<Outcome> {
    let flow = cfg.flow_spec()?;
    let p0 = cfg.initial_density()?;
    let m = method.unwrap_or(cfg.slice.method).resolve(&flow);
    let est = estimate_with(m, &flow, &p0, x, u, time_arg(t)?, &cfg.estimator, 0)?;
    if let Some(c) = &est.caveat {
        log::warn!("estimate carries a caveat: {c}");
    }
    let doc = json!({ "x": x, "u": u, "t": t, "estimate": est, "config": cfg });
    emit_json(&doc, out, force)?;
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
pub fn slice(
    cfg: &RunConfig,
    x: &Vec3,
    t: f64,
    u3: Option<f64>,
    method: Option<SliceMethod>,
    out: &Path,
    force: bool,
) -> Result<Outcome> {
    let flow = cfg.flow_spec()?;
    let p0 = cfg.initial_density()?;
    let mut grid = cfg.slice.grid.clone();
    if let Some(v) = u3 {
        grid.u3 = v;
    }
    let method = method.unwrap_or(cfg.slice.method);
    let field = density_slice(&flow, &p0, &grid, x, time_arg(t)?, &cfg.estimator, method)?;
    let failed = field.nodes.iter().filter(|n| n.value.is_nan()).count();
    let meta = json!({
        "flow": field.flow,
        "method": field.method,
        "x": x,
        "t": t,
        "grid": grid,
        "seed": field.seed,
        "rows": field.nodes.len(),
        "failed_nodes": failed,
        "config": cfg,
    });
    let meta_out = meta_path(out);
    // Refuse before writing anything.
    if !force {
        for p in [out, meta_out.as_path()] {
            if p.exists() {
                return Err(Error::WouldOverwrite(p.display().to_string()));
            }
        }
    }
    write_density_csv(&field, out, false, force)?;
    write_json(&meta, &meta_out, force)?;
    Ok(Outcome::Success)
}

const RESIDUAL_POINT: (Vec3, Vec3, f64) = ([0.6, -1.1, 1.6], [0.2, -0.1, 0.3], 0.5);

fn beta_suite() -> Result<Vec<VerificationReport>> {
    verify_beta_properties(12)
}

fn q_suite(cfg: &RunConfig) -> Result<Vec<VerificationReport>> {
    let stats = ShowcaseStatistics::default();
    let probes: [(Vec3, Vec3, f64); 3] = [
        ([0.0; 3], [0.5, 0.5, 0.3], 0.5),
        ([1.0, -0.5, 2.0], [-0.3, 1.2, 0.8], 0.0),
        ([12.0; 3], [0.25, 0.25, 0.3], 40.0),
    ];
    probes
        .iter()
        .map(|(x, u, t)| showcase_q_residual(&stats, x, u, *t, &cfg.quadrature))
        .collect()
}

fn residual_suite() -> Result<Vec<VerificationReport>> {
    let (u, x, t) = RESIDUAL_POINT;
    let stationary = |u: &Vec3, _x: &Vec3, _t: f64| showcase::alpha(u);
    let r1 = check_pde_residual(&stationary, None, showcase::VISCOSITY, &u, &x, t, 1e-3, 0.0, true, None)?;
    // Hermite order 64 keeps the quadrature error below the stencil error.
    let gh = GammaMethod::GaussHermite { order: 64 };
    let closed = move |u: &Vec3, x: &Vec3, t: f64| example_pdf(u, x, t, &gh).map(|v| v.value).unwrap_or(f64::NAN);
    let r2 = check_pde_residual(&closed, None, showcase::VISCOSITY, &u, &x, t, 0.05, 1e-5, true, None)?;
    Ok(vec![
        VerificationReport { name: "pde_residual_alpha".into(), ..r1 },
        VerificationReport { name: "pde_residual_showcase".into(), ..r2 },
    ])
}

fn mass_suite(cfg: &RunConfig) -> Result<Vec<VerificationReport>> {
    let at0 = solution_components(0.0, 20, 6)?;
    let r0 = check_mass(&at0, &vec3::ZERO, 1e-10, true)?;
    let later = solution_components(0.5, 20, 6)?;
    let r1 = check_mass(&later, &vec3::ZERO, 1e-6, cfg.checks.mass_assertable)?;
    let coarse = solution_components(0.5, 12, 4)?;
    let r2 = check_divergence_free(&coarse, &vec3::ZERO, 1e-3, 1e-6, false)?;
    Ok(vec![
        VerificationReport { name: "mass_t0".into(), ..r0 },
        VerificationReport { name: "mass_t0.5".into(), ..r1 },
        VerificationReport { name: "divergence_free_t0.5".into(), ..r2 },
    ])
}

fn moments_suite() -> Result<Vec<VerificationReport>> {
    let p = solution_components(0.5, 12, 4)?;
    let c = pdfflow::flow_model::ZeroField;
    Ok(vec![check_moment_identity(&c, &p, &vec3::ZERO, 0.5, 1e-2, 1e-6, false)?])
}

fn positivity_suite(cfg: &RunConfig) -> Vec<VerificationReport> {
    let (u_grid, _) = default_positivity_grids();
    vec![check_positivity_bound(&ShowcaseSpec::default(), &u_grid, &[vec3::ZERO]).assertable(cfg.checks.positivity_assertable)]
}

fn classify_samples() -> Vec<SamplePoint> {
    vec![
        SamplePoint { x: [0.3, -0.7, 1.1], y: [0.5, -0.2, 1.4], u: [1.0, 2.0, 3.0], t: 0.5 },
        SamplePoint { x: [0.0; 3], y: [0.7, 0.1, -0.3], u: [0.2, 0.1, 0.0], t: 0.0 },
        SamplePoint { x: [-1.0, 2.0, 0.5], y: [-0.4, 1.7, 0.9], u: [-0.5, 0.3, 0.8], t: 2.0 },
    ]
}

fn classify_suite(cfg: &RunConfig) -> Result<Vec<VerificationReport>> {
    let flow = cfg.flow_spec()?;
    let CoefficientSource::Statistics(stats) = &flow.source else {
        return Ok(vec![VerificationReport::new("classification", 0.0, 0.0, false)
            .note("flow gives its drift directly; nothing to classify")]);
    };
    let r = classify_flow(stats.as_ref(), &classify_samples(), 1e-8)?;
    let d = &r.divergence;
    let worst = d.rho_divergence.max(d.gradient_trace).max(d.laplacian_contraction);
    let mut div = VerificationReport::new("divergence_conditions", if d.passed { 0.0 } else { worst }, 0.0, cfg.checks.divergence_assertable)
        .detail("rho_divergence", d.rho_divergence)
        .detail("gradient_trace", d.gradient_trace)
        .detail("laplacian_contraction", d.laplacian_contraction);
    if !d.passed {
        div = div.note("statistics violate the incompressibility conditions");
    }
    let mut class = VerificationReport::new("classification", 0.0, 0.0, false)
        .detail("max_gradient", r.max_gradient)
        .detail("rho_rotation_defect", r.rho_rotation_defect)
        .detail("sigma_rotation_defect", r.sigma_rotation_defect)
        .detail("laplacian_position_defect", r.laplacian_position_defect)
        .detail("lipschitz_probe", r.lipschitz_probe)
        .note(format!("measured class {:?}, claimed {:?}", r.tag, r.claimed))
        .with_config(json!({ "flow": flow.name, "tolerance": r.tolerance }));
    for f in &r.isotropy_findings {
        class = class.note(f.clone());
    }
    if r.tag != r.claimed {
        class = class.warn("measured class differs from the claimed class");
    }
    Ok(vec![class, div])
}

pub fn verify(cfg: &RunConfig, suite: Suite, out: Option<&Path>, force: bool) -> Result<Outcome> {
    let want = |s: Suite| suite == Suite::All || suite == s;
    let mut reports = Vec::new();
    if want(Suite::Beta) {
        reports.extend(beta_suite()?);
    }
    if want(Suite::Q) {
        reports.extend(q_suite(cfg)?);
    }
    if want(Suite::Residual) {
        reports.extend(residual_suite()?);
    }
    if want(Suite::Mass) {
        reports.extend(mass_suite(cfg)?);
    }
    if want(Suite::Moments) {
        reports.extend(moments_suite()?);
    }
    if want(Suite::Positivity) {
        reports.extend(positivity_suite(cfg));
    }
    if want(Suite::Classify) {
        reports.extend(classify_suite(cfg)?);
    }
    emit_json(&reports, out, force)?;
    if let Some(path) = out {
        write_json(&json!({ "suite": format!("{suite:?}").to_lowercase(), "config": cfg }), &meta_path(path), force)?;
    }
    let failed = reports.iter().filter(|r| r.failed()).count();
    for r in reports.iter().filter(|r| !r.passed()) {
        log::warn!("check {} is {} (value {:e}, tolerance {:e})", r.name, r.status, r.value, r.tolerance);
    }
    if cfg.strict && failed > 0 {
        Ok(Outcome::StrictFailure(failed))
    } else {
        Ok(Outcome::Success)
    }
}

pub fn example(cfg: &RunConfig, figure: &str, out: &Path, force: bool) -> Result<Outcome> {
    let figures: Vec<Figure> = if figure == "all" {
        Figure::all().to_vec()
    } else {
        vec![Figure::parse(figure)
            .ok_or_else(|| Error::Config(format!("unknown figure '{figure}' (t05, t40, t40x12 or all)")))?]
    };
    let run = serde_json::to_value(cfg)?;
    for f in figures {
        let (_, written) = emit_figure_data_with_meta(f, &cfg.example, out, force, run.clone())?;
        for p in written {
            log::info!("wrote {}", p.display());
        }
    }
    Ok(Outcome::Success)
}

const PATH_HEADER: &str = "s,X1,X2,X3,Y1,Y2,Y3,q";

fn path_csv(states: &[CharacteristicState]) -> String {
    let mut out = String::from(PATH_HEADER);
    out.push('\n');
    for s in states {
        let row: Vec<String> = std::iter::once(s.s)
            .chain(s.x)
            .chain(s.y)
            .chain(std::iter::once(s.q))
            .map(format_f64)
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn characteristic(
    cfg: &RunConfig,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    path_index: u64,
    out: Option<&Path>,
    force: bool,
) -> Result<Outcome> {
    let flow = cfg.flow_spec()?;
    let drift = flow.drift();
    let t = time_arg(t)?;
    let mut states = Vec::new();
    if flow.regime == Regime::Inviscid {
        solve_inviscid_path(drift.as_ref(), x, u, t, cfg.estimator.dt, |s| states.push(*s))?;
    } else {
        if flow.regime == Regime::General {
            log::warn!("general regime: the path omits the mixed B term");
        }
        let noise = NoiseSpec::new(cfg.estimator.seed, path_index);
        simulate_homogeneous(drift.as_ref(), flow.viscosity, x, u, t, cfg.estimator.dt, &noise, 1.0, |s| {
            states.push(*s)
        })?;
    }
    let csv = path_csv(&states);
    match out {
        Some(path) => write_atomic(path, csv.as_bytes(), force)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(Outcome::Success)
}
