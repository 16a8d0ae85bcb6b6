use serde::Serialize;

use super::{gradient_coefficient, laplacian_coefficient, ConditionalStatistics, FlowClass};
use crate::error::Result;
use crate::quadrature::{fd_step, second_mixed};
use crate::vec3::{self, Mat3, Vec3};

/// One `(x, y, u, t)` probe for [`classify_flow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplePoint {
    pub x: Vec3,
    pub y: Vec3,
    pub u: Vec3,
    pub t: f64,
}

/// Incompressibility diagnostics; the largest magnitude seen over the samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceDiagnostics {
    /// `max |∂ρ^i/∂y^i|` at the sampled `y`.
    pub rho_divergence: f64,
    /// `max |trace B|`.
    pub gradient_trace: f64,
    /// `max_k |Σ_i A^i_ik|`.
    pub laplacian_contraction: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub tag: FlowClass,
    pub claimed: FlowClass,
    pub weakly_homogeneous: bool,
    /// `max ‖B‖∞` over the samples.
    pub max_gradient: f64,
    pub weakly_isotropic: bool,
    /// Largest change in `ρ` under the probe rotations of `y - x`.
    pub rho_rotation_defect: f64,
    /// Largest change in `σ` under the probe rotations of `y - x`.
    pub sigma_rotation_defect: f64,
    /// Largest change in `A` when `x` is shifted.
    pub laplacian_position_defect: f64,
    /// Human-readable reasons isotropy failed.
    pub isotropy_findings: Vec<String>,
    pub divergence: DivergenceDiagnostics,
    /// Largest observed `|A(x1,u1) - A(x2,u2)| / (|x1-x2| + |u1-u2|)` over
    /// consecutive samples. A local probe, not a Lipschitz bound.
    pub lipschitz_probe: f64,
    pub tolerance: f64,
}

fn probe_rotations() -> [Mat3; 3] {
    [
        vec3::rotation(&[0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2),
        vec3::rotation(&[1.0, 1.0, 1.0], 2.0 * std::f64::consts::FRAC_PI_3),
        vec3::rotation(&[0.3, -0.5, 0.8], 1.1),
    ]
}

const POSITION_SHIFT: Vec3 = [1.3, -0.7, 2.1];

fn mat_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut m = 0.0_f64;
    for i in 0..3 {
        for k in 0..3 {
            m = m.max((a[i][k] - b[i][k]).abs());
        }
    }
    m
}

/// Probes `stats` for weak homogeneity, weak isotropy and the
/// divergence-free conditions at the given samples.
pub fn classify_flow(stats: &dyn ConditionalStatistics, samples: &[SamplePoint], tol: f64) -> Result<ClassificationReport> {
    assert!(!samples.is_empty(), "classify_flow needs at least one sample point");
    let rotations = probe_rotations();

    let mut max_gradient = 0.0_f64;
    let mut rho_rot = 0.0_f64;
    let mut sigma_rot = 0.0_f64;
    let mut a_shift = 0.0_f64;
    let mut rho_div = 0.0_f64;
    let mut trace_b = 0.0_f64;
    let mut contraction = 0.0_f64;
    let mut lipschitz = 0.0_f64;
    let mut previous: Option<(Vec3, Vec3, Vec3)> = None;

    for s in samples {
        let b = gradient_coefficient(stats, &s.x, &s.u, s.t)?;
        max_gradient = max_gradient.max(vec3::mat_max_abs(&b));
        trace_b = trace_b.max(vec3::trace(&b).abs());

        let a = laplacian_coefficient(stats, &s.x, &s.u, s.t)?;
        let shifted = vec3::add(&s.x, &POSITION_SHIFT);
        let a_other = laplacian_coefficient(stats, &shifted, &s.u, s.t)?;
        a_shift = a_shift.max(vec3::max_abs(&vec3::sub(&a, &a_other)));

        if let Some((px, pu, pa)) = previous {
            let dist = vec3::norm(&vec3::sub(&px, &s.x)) + vec3::norm(&vec3::sub(&pu, &s.u));
            if dist > 0.0 {
                lipschitz = lipschitz.max(vec3::norm(&vec3::sub(&pa, &a)) / dist);
            }
        }
        previous = Some((s.x, s.u, a));

        let d = vec3::sub(&s.y, &s.x);
        let rho = stats.rho(&s.x, &s.y, &s.u, s.t);
        let sigma = stats.sigma(&s.x, &s.y, &s.u, s.t);
        for r in &rotations {
            let y_rot = vec3::add(&s.x, &vec3::mat_vec(r, &d));
            rho_rot = rho_rot.max(vec3::max_abs(&vec3::sub(&rho, &stats.rho(&s.x, &y_rot, &s.u, s.t))));
            sigma_rot = sigma_rot.max(mat_diff(&sigma, &stats.sigma(&s.x, &y_rot, &s.u, s.t)));
        }

        let h = fd_step(&s.x, &s.u);
        let div: f64 = (0..3)
            .map(|i| {
                let e = vec3::unit(i, h);
                (stats.rho(&s.x, &vec3::add(&s.y, &e), &s.u, s.t)[i] - stats.rho(&s.x, &vec3::sub(&s.y, &e), &s.u, s.t)[i])
                    / (2.0 * h)
            })
            .sum();
        rho_div = rho_div.max(div.abs());

        // Σ_i ∂²ρ^i/∂y^i∂y^k at y = x, for each k.
        for k in 0..3 {
            let total: f64 = (0..3)
                .map(|i| second_mixed(&|y: &Vec3| stats.rho(&s.x, y, &s.u, s.t)[i], &s.x, i, k, h))
                .sum();
            contraction = contraction.max(total.abs());
        }
    }

    let weakly_homogeneous = max_gradient <= tol;
    let mut findings = Vec::new();
    if rho_rot > tol {
        findings.push(format!("rho changes by {rho_rot:.3e} when y - x is rotated"));
    }
    if sigma_rot > tol {
        findings.push(format!("sigma depends on the direction of y - x (max change {sigma_rot:.3e} under rotation)"));
    }
    if a_shift > tol {
        findings.push(format!("A depends on x (max change {a_shift:.3e} under a shift)"));
    }
    let weakly_isotropic = findings.is_empty();
    let tag = if weakly_isotropic {
        FlowClass::WeaklyIsotropic
    } else if weakly_homogeneous {
        FlowClass::WeaklyHomogeneous
    } else {
        FlowClass::General
    };
    // Second differences carry O(eps / h^2) rounding, hence the looser bound.
    let contraction_tol = tol.max(1e-6);
    Ok(ClassificationReport {
        tag,
        claimed: stats.claimed_class(),
        weakly_homogeneous,
        max_gradient,
        weakly_isotropic,
        rho_rotation_defect: rho_rot,
        sigma_rotation_defect: sigma_rot,
        laplacian_position_defect: a_shift,
        isotropy_findings: findings,
        divergence: DivergenceDiagnostics {
            rho_divergence: rho_div,
            gradient_trace: trace_b,
            laplacian_contraction: contraction,
            passed: rho_div <= tol && trace_b <= tol && contraction <= contraction_tol,
        },
        lipschitz_probe: lipschitz,
        tolerance: tol,
    })
}
