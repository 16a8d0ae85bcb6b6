use std::sync::Arc;

use super::*;
use crate::showcase::ShowcaseStatistics;

fn linear_rho(g: Mat3) -> StatisticsFn {
    StatisticsFn::new(
        "linear",
        move |x: &Vec3, y: &Vec3, _u: &Vec3, _t: f64| vec3::mat_vec(&g, &vec3::sub(y, x)),
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| vec3::IDENTITY,
    )
}

fn exp_rho() -> StatisticsFn {
    // ρ^i = exp(d_i) - 1 with d = y - x: B = I, A = (1, 1, 1).
    StatisticsFn::new(
        "exp",
        |x: &Vec3, y: &Vec3, _u: &Vec3, _t: f64| {
            let d = vec3::sub(y, x);
            [d[0].exp_m1(), d[1].exp_m1(), d[2].exp_m1()]
        },
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| vec3::IDENTITY,
    )
}

fn stats_flow(stats: impl ConditionalStatistics + 'static, nu: f64) -> FlowSpec {
    let regime = if nu == 0.0 { Regime::Inviscid } else { Regime::General };
    FlowSpec::new("test", nu, regime, CoefficientSource::Statistics(Arc::new(stats))).unwrap()
}

const X: Vec3 = [0.3, -0.7, 1.1];
const U: Vec3 = [1.0, 2.0, 3.0];

#[test]
fn conditional_mean_examples() {
    assert_eq!(conditional_mean(&exp_rho(), &X, &X, &U, 0.5).unwrap(), U);
    assert_eq!(conditional_mean(&ZeroStatistics, &X, &[5.0, 5.0, 5.0], &U, 0.5).unwrap(), U);
    let lin = linear_rho(vec3::IDENTITY);
    let b = conditional_mean(&lin, &vec3::ZERO, &[0.1, 0.0, 0.0], &U, 0.0).unwrap();
    assert!((b[0] - 1.1).abs() < 1e-15 && b[1] == 2.0 && b[2] == 3.0);
}

#[test]
fn nan_rho_is_reported_with_the_point() {
    let bad = StatisticsFn::new(
        "nan",
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| [f64::NAN; 3],
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| vec3::IDENTITY,
    );
    let err = gradient_coefficient(&bad, &X, &U, 0.0).unwrap_err();
    assert!(matches!(err, Error::NonFinite { what: "rho", .. }));
    assert!(matches!(gradient_coefficient_with_step(&exp_rho(), &X, &U, 0.0, 1e-13), Err(Error::StepUnderflow(_))));
}

#[test]
fn gradient_of_linear_rho() {
    let g = vec3::diag(&[1.0, 2.0, 3.0]);
    let b = gradient_coefficient(&linear_rho(g), &X, &U, 0.0).unwrap();
    for i in 0..3 {
        for k in 0..3 {
            assert!((b[i][k] - g[i][k]).abs() < 1e-10);
        }
    }
    assert_eq!(gradient_coefficient(&ZeroStatistics, &X, &U, 0.0).unwrap(), vec3::ZERO_MAT);
}

#[test]
fn gradient_of_cubic_rho_vanishes() {
    let cubic = StatisticsFn::new(
        "cubic",
        |x: &Vec3, y: &Vec3, _u: &Vec3, _t: f64| {
            let d = vec3::sub(y, x);
            vec3::scale(&d, vec3::norm2(&d))
        },
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| vec3::IDENTITY,
    );
    let h = fd_step(&X, &U);
    let b = gradient_coefficient(&cubic, &X, &U, 0.0).unwrap();
    assert!(vec3::mat_max_abs(&b) <= 2.0 * h * h);
}

#[test]
fn laplacian_of_quadratic_rho() {
    let a = laplacian_coefficient(&QuadraticRhoStatistics, &X, &U, 0.0).unwrap();
    for v in a {
        assert!((v - 2.0).abs() < 1e-6, "A = {a:?}");
    }
    assert_eq!(laplacian_coefficient(&ZeroStatistics, &X, &U, 0.0).unwrap(), vec3::ZERO);
    assert_eq!(laplacian_coefficient(&ShowcaseStatistics::default(), &X, &U, 0.0).unwrap(), vec3::ZERO);
}

#[test]
fn stencils_converge_at_second_order() {
    let s = exp_rho();
    let err_b = |h: f64| {
        let b = gradient_coefficient_with_step(&s, &X, &U, 0.0, h).unwrap();
        (b[0][0] - 1.0).abs()
    };
    let err_a = |h: f64| {
        let a = laplacian_coefficient_with_step(&s, &X, &U, 0.0, h).unwrap();
        (a[0] - 1.0).abs()
    };
    let rb = err_b(2e-2) / err_b(1e-2);
    let ra = err_a(2e-2) / err_a(1e-2);
    assert!((3.5..=4.5).contains(&rb), "B ratio {rb}");
    assert!((3.5..=4.5).contains(&ra), "A ratio {ra}");
}

#[test]
fn q_of_constant_tensor_is_exactly_zero() {
    let q = pressure_coefficient(&ZeroStatistics, &X, &U, 0.0, &QuadratureConfig::default()).unwrap();
    assert_eq!(q.value, vec3::ZERO);
}

#[test]
fn q_of_radial_tensor_vanishes() {
    let radial = StatisticsFn::new(
        "radial",
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| vec3::ZERO,
        |x: &Vec3, y: &Vec3, _: &Vec3, _: f64| {
            let g = (-vec3::norm2(&vec3::sub(y, x))).exp();
            vec3::diag(&[g; 3])
        },
    );
    let q = pressure_coefficient(&radial, &X, &vec3::ZERO, 0.0, &QuadratureConfig::default()).unwrap();
    assert!(vec3::max_abs(&q.value) < 1e-6, "Q = {:?}", q.value);
}

#[test]
fn q_matches_newtonian_potential_oracle() {
    let q = pressure_coefficient(&AnisotropicGaussianStatistics, &X, &[0.5, -0.5, 0.2], 0.0, &QuadratureConfig::default())
        .unwrap();
    assert!((q.value[0] + 1.0).abs() < 1e-4, "Q = {:?}", q.value);
    assert!(q.value[1].abs() < 1e-4 && q.value[2].abs() < 1e-4);
    assert!(q.truncation_delta.unwrap() < 1e-6);
}

#[test]
fn showcase_q_vanishes_and_broken_evenness_does_not() {
    let cfg = QuadratureConfig::default();
    let q = pressure_coefficient(&ShowcaseStatistics::default(), &X, &U, 0.5, &cfg).unwrap();
    assert!(vec3::max_abs(&q.value) < 1e-5);
    let odd = pressure_coefficient(&ShowcaseStatistics::with_broken_evenness(), &X, &U, 0.0, &cfg).unwrap();
    assert!(vec3::max_abs(&odd.value) > 1e-3, "Q = {:?}", odd.value);
}

#[test]
fn c_assembles_viscous_terms() {
    let flow = stats_flow(QuadraticRhoStatistics, 1.0);
    let f = coefficient_field(&flow, &X, &U, 0.0).unwrap();
    assert_eq!(f.b.unwrap(), vec3::ZERO_MAT);
    for i in 0..3 {
        let expected = flow.viscosity * 0.0 - flow.viscosity * f.a.unwrap()[i] + f.q.unwrap()[i];
        assert!((f.c[i] - expected).abs() < 1e-12);
        assert!((f.c[i] + 2.0).abs() < 1e-3, "C = {:?}", f.c);
    }
}

#[test]
fn inviscid_c_is_q() {
    let flow = stats_flow(AnisotropicGaussianStatistics, 0.0);
    let f = coefficient_field(&flow, &X, &U, 0.0).unwrap();
    assert_eq!(f.c, f.q.unwrap());
    assert!(f.b.is_none() && f.a.is_none());
}

#[test]
fn divergence_of_b_uses_x_dependence() {
    // ρ^i = x^1 (y^i - x^i) gives B = x^1 I and ∂B^i_k/∂x^k = δ^i_1.
    let s = StatisticsFn::new(
        "xlin",
        |x: &Vec3, y: &Vec3, _u: &Vec3, _t: f64| vec3::scale(&vec3::sub(y, x), x[0]),
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| vec3::IDENTITY,
    );
    let flow = stats_flow(s, 2.0);
    let f = coefficient_field(&flow, &X, &U, 0.0).unwrap();
    assert!((f.c[0] - 2.0).abs() < 1e-6, "C = {:?}", f.c);
    assert!(f.c[1].abs() < 1e-6 && f.c[2].abs() < 1e-6);
}

#[test]
fn direct_c_skips_statistics() {
    let flow = FlowSpec::new("direct", 1.0, Regime::General, CoefficientSource::DirectC(Arc::new(AffineField::damping(2.0))))
        .unwrap();
    let f = coefficient_field(&flow, &X, &U, 0.0).unwrap();
    assert_eq!(f.c, [-2.0, -4.0, -6.0]);
    assert!(f.b.is_none() && f.a.is_none() && f.q.is_none());
}

#[test]
fn catalog_closed_forms_agree_with_assembly() {
    for name in catalog_names() {
        let stats = catalog_statistics(name).unwrap();
        let nu = 0.7;
        let closed = stats.closed_form_drift(nu).expect("catalog entries have closed forms");
        let flow = FlowSpec::new(*name, nu, Regime::General, CoefficientSource::Statistics(Arc::clone(&stats))).unwrap();
        for (x, u, t) in [(X, [0.5, -0.2, 0.1], 0.3), ([1.0, 0.0, -2.0], [-0.4, 0.3, 0.2], 1.5)] {
            let assembled = coefficient_field(&flow, &x, &u, t).unwrap().c;
            let c = closed.eval(&x, &u, t);
            assert!(vec3::max_abs(&vec3::sub(&assembled, &c)) < 1e-3, "{name}: {assembled:?} vs {c:?}");
        }
    }
    assert!(catalog_statistics("nope").is_none());
}

#[test]
fn flow_spec_validation() {
    let zero = || CoefficientSource::Statistics(Arc::new(ZeroStatistics));
    assert!(FlowSpec::new("a", 0.0, Regime::Inviscid, zero()).is_ok());
    assert!(matches!(FlowSpec::new("a", 1.0, Regime::Inviscid, zero()), Err(Error::Config(_))));
    assert!(FlowSpec::new("a", -1.0, Regime::General, zero()).is_err());
    let q = CoefficientSource::DirectQ(Arc::new(ZeroField));
    assert!(FlowSpec::new("a", 1.0, Regime::General, q).is_err());
    let x_dependent = AffineField {
        velocity_gain: vec3::ZERO_MAT,
        position_gain: vec3::IDENTITY,
        offset: vec3::ZERO,
    };
    let direct = CoefficientSource::DirectC(Arc::new(x_dependent));
    assert!(FlowSpec::new("a", 1.0, Regime::WeaklyIsotropic, direct).is_err());
    let damped = CoefficientSource::DirectC(Arc::new(AffineField::damping(1.0)));
    assert!(FlowSpec::new("a", 1.0, Regime::WeaklyIsotropic, damped).is_ok());
}

#[test]
fn initial_density_reports_negativity_without_clamping() {
    let p0 = InitialDensity::new("signed", 2.0, |u: &Vec3, _x: &Vec3| u[0]).unwrap();
    let bad = p0.negativity(&[([1.0, 0.0, 0.0], X), ([-2.0, 0.0, 0.0], X)]);
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0].2, -2.0);
    assert!(InitialDensity::new("slow", 0.5, |_: &Vec3, _: &Vec3| 0.0).is_err());
}

#[test]
fn diffusion_matrix_examples() {
    let d = diffusion_matrix(&vec3::ZERO_MAT, 1.0);
    assert!(d.symmetric && d.positive_semidefinite);
    for i in 0..3 {
        for k in 0..3 {
            assert_eq!(d.matrix[i][k], 0.0);
            assert_eq!(d.matrix[3 + i][3 + k], if i == k { 1.0 } else { 0.0 });
        }
    }

    let d = diffusion_matrix(&vec3::IDENTITY, 1.0);
    assert!(d.symmetric);
    assert!(!d.positive_semidefinite);
    let phi = (1.0 - 5.0_f64.sqrt()) / 2.0;
    assert!((d.eigenvalues[0] - phi).abs() < 1e-12);
    assert!((d.eigenvalues[5] - (1.0 - phi)).abs() < 1e-12);

    let mut b = vec3::ZERO_MAT;
    b[0][1] = 1.0;
    assert!(!diffusion_matrix(&b, 1.0).symmetric);
}

fn samples() -> Vec<SamplePoint> {
    vec![
        SamplePoint { x: X, y: [0.5, -0.2, 1.4], u: U, t: 0.5 },
        SamplePoint { x: [0.0; 3], y: [0.7, 0.1, -0.3], u: [0.2, 0.1, 0.0], t: 0.0 },
        SamplePoint { x: [-1.0, 2.0, 0.5], y: [-0.4, 1.7, 0.9], u: [-0.5, 0.3, 0.8], t: 2.0 },
    ]
}

#[test]
fn zero_statistics_are_isotropic() {
    let r = classify_flow(&ZeroStatistics, &samples(), 1e-8).unwrap();
    assert!(r.weakly_homogeneous && r.weakly_isotropic);
    assert_eq!(r.tag, FlowClass::WeaklyIsotropic);
    assert!(r.divergence.passed);
}

#[test]
fn traceless_linear_rho_is_inhomogeneous_but_divergence_free() {
    let r = classify_flow(&linear_rho(vec3::diag(&[1.0, -1.0, 0.0])), &samples(), 1e-6).unwrap();
    assert!(!r.weakly_homogeneous);
    assert!(r.divergence.passed, "{:?}", r.divergence);
    assert!((r.max_gradient - 1.0).abs() < 1e-8);
}

#[test]
fn showcase_statistics_are_homogeneous_not_isotropic() {
    let r = classify_flow(&ShowcaseStatistics::default(), &samples(), 1e-8).unwrap();
    assert!(r.weakly_homogeneous);
    assert!(!r.weakly_isotropic);
    assert_eq!(r.tag, FlowClass::WeaklyHomogeneous);
    assert!(r.isotropy_findings.iter().any(|f| f.contains("sigma")));
    assert!(r.sigma_rotation_defect > 1e-8);
}

#[test]
fn kolmogorov_radial_rho_has_zero_gradient() {
    // ρ^i = u^i |y - x|^{2/3}: a two-thirds-law increment depending on
    // |y - x| and u only.
    let k41 = StatisticsFn::new(
        "k41",
        |x: &Vec3, y: &Vec3, u: &Vec3, _t: f64| vec3::scale(u, vec3::norm(&vec3::sub(y, x)).powf(2.0 / 3.0)),
        |_: &Vec3, _: &Vec3, _: &Vec3, _: f64| vec3::IDENTITY,
    );
    let b = gradient_coefficient(&k41, &X, &U, 0.0).unwrap();
    assert_eq!(b, vec3::ZERO_MAT);
    let r = classify_flow(&k41, &samples(), 1e-8).unwrap();
    assert!(r.weakly_homogeneous);
    assert!(r.rho_rotation_defect < 1e-12);
}
