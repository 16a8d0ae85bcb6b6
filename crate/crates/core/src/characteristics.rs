//! Backward characteristics `(X, Y, q)` of the transport equation.
//!
//! In internal time `s ∈ [0, t]`, starting from `X = x`, `Y = u`, `q = 1`:
//!
//! ```text
//! dX = -Y ds + √(2ν) dM
//! dY = C(X, Y, t - s) ds
//! dq = q · div_u C(X, Y, t - s) ds
//! ```
//!
//! The weight is carried as `log q` so long horizons do not overflow.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow_model::VectorField;
use crate::noise::NoiseSpec;
use crate::quadrature::gauss_legendre_nodes;
use crate::vec3::{self, Vec3};

/// `|log q|` above which a path is reported as overflowing.
pub const LOG_Q_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharacteristicState {
    pub s: f64,
    pub x: Vec3,
    pub y: Vec3,
    pub q: f64,
    pub log_q: f64,
}

impl CharacteristicState {
    pub fn start(x: &Vec3, u: &Vec3) -> Self {
        Self {
            s: 0.0,
            x: *x,
            y: *u,
            q: 1.0,
            log_q: 0.0,
        }
    }

    fn checked(self) -> Result<Self> {
        if !(vec3::is_finite(&self.x) && vec3::is_finite(&self.y) && self.log_q.is_finite()) {
            return Err(Error::PathNotFinite { s: self.s });
        }
        if self.log_q.abs() > LOG_Q_LIMIT {
            return Err(Error::WeightOverflow {
                log_q: self.log_q,
                s: self.s,
            });
        }
        Ok(self)
    }
}

/// Number of uniform steps covering `[0, t]` with step at most `dt`.
pub fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be finite and >= 0 (got {t})")));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be > 0 (got {dt})")));
    }
    Ok((t / dt - 1e-9).ceil().max(0.0) as usize)
}

/// One Euler-Maruyama step of length `dt`. `increment` is the Brownian
/// increment over the step (variance `dt` per component). The drift is
/// evaluated at the pre-step state.
pub fn step_homogeneous(
    state: &CharacteristicState,
    drift: &dyn VectorField,
    nu: f64,
    t: f64,
    dt: f64,
    increment: &Vec3,
) -> Result<CharacteristicState> {
    if !(dt > 0.0) || state.s < 0.0 || state.s + dt > t * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::Domain(format!(
            "step [{}, {}] leaves [0, {t}]",
            state.s,
            state.s + dt
        )));
    }
    let time = t - state.s;
    let c = drift.eval(&state.x, &state.y, time);
    let div = drift.div_u(&state.x, &state.y, time);
    let noise = (2.0 * nu).sqrt();
    let mut x = state.x;
    let mut y = state.y;
    for i in 0..3 {
        x[i] += -state.y[i] * dt + noise * increment[i];
        y[i] += c[i] * dt;
    }
    let log_q = state.log_q + div * dt;
    CharacteristicState {
        s: state.s + dt,
        x,
        y,
        q: log_q.exp(),
        log_q,
    }
    .checked()
}

/// Euler-Maruyama path from `(x, u)` to internal time `t`, with increments
/// drawn from `noise`. `sign = -1.0` gives the antithetic partner.
/// `record` receives every state including the first and last.
pub fn simulate_homogeneous(
    drift: &dyn VectorField,
    nu: f64,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    dt: f64,
    noise: &NoiseSpec,
    sign: f64,
    mut record: impl FnMut(&CharacteristicState),
) -> Result<CharacteristicState> {
    let n = step_count(t, dt)?;
    let mut state = CharacteristicState::start(x, u);
    record(&state);
    if n == 0 {
        return Ok(state);
    }
    let h = t / n as f64;
    let mut rng = noise.rng();
    for k in 0..n {
        let inc = vec3::scale(&rng.increment(h), sign);
        state = step_homogeneous(&state, drift, nu, t, h, &inc)?;
        if k + 1 == n {
            state.s = t;
        }
        record(&state);
    }
    Ok(state)
}

type State7 = [f64; 7];

fn rhs(drift: &dyn VectorField, t: f64, s: f64, z: &State7) -> State7 {
    let x = [z[0], z[1], z[2]];
    let y = [z[3], z[4], z[5]];
    let c = drift.eval(&x, &y, t - s);
    let div = drift.div_u(&x, &y, t - s);
    [-y[0], -y[1], -y[2], c[0], c[1], c[2], div]
}

fn combine(z: &State7, k: &State7, h: f64) -> State7 {
    let mut out = *z;
    for i in 0..7 {
        out[i] += h * k[i];
    }
    out
}

/// Classical RK4 for the deterministic system `dX = -Y ds`,
/// `dY = Q ds`, `d log q = div_u Q ds`, recording every state.
pub fn solve_inviscid_path(
    drift: &dyn VectorField,
    x: &Vec3,
    u: &Vec3,
    t: f64,
    dt: f64,
    mut record: impl FnMut(&CharacteristicState),
) -> Result<CharacteristicState> {
    let n = step_count(t, dt)?;
    let mut state = CharacteristicState::start(x, u);
    record(&state);
    if n == 0 {
        return Ok(state);
    }
    let h = t / n as f64;
    let mut z: State7 = [x[0], x[1], x[2], u[0], u[1], u[2], 0.0];
    for k in 0..n {
        let s = k as f64 * h;
        let k1 = rhs(drift, t, s, &z);
        let k2 = rhs(drift, t, s + 0.5 * h, &combine(&z, &k1, 0.5 * h));
        let k3 = rhs(drift, t, s + 0.5 * h, &combine(&z, &k2, 0.5 * h));
        let k4 = rhs(drift, t, s + h, &combine(&z, &k3, h));
        for i in 0..7 {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        state = CharacteristicState {
            s: if k + 1 == n { t } else { (k + 1) as f64 * h },
            x: [z[0], z[1], z[2]],
            y: [z[3], z[4], z[5]],
            q: z[6].exp(),
            log_q: z[6],
        }
        .checked()?;
        record(&state);
    }
    Ok(state)
}

/// End state of [`solve_inviscid_path`].
pub fn solve_inviscid(drift: &dyn VectorField, x: &Vec3, u: &Vec3, t: f64, dt: f64) -> Result<CharacteristicState> {
    solve_inviscid_path(drift, x, u, t, dt, |_| {})
}

/// Per-axis linear drift `C^i = 2a^i Y^i + b^i X^i + c^i(s)`.
#[derive(Clone)]
pub struct LinearCModel {
    pub a: Vec3,
    pub b: Vec3,
    pub c: [Arc<dyn Fn(f64) -> f64 + Send + Sync>; 3],
}

impl fmt::Debug for LinearCModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearCModel").field("a", &self.a).field("b", &self.b).finish_non_exhaustive()
    }
}

impl LinearCModel {
    /// Same `a`, `b` on every axis and no forcing.
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        let zero: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(|_| 0.0);
        let m = Self {
            a: [a; 3],
            b: [b; 3],
            c: [zero.clone(), zero.clone(), zero],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            eigenvalues(self.a[i], self.b[i])?;
        }
        Ok(())
    }

    /// The model as a drift field on `(X, Y)`; `c` is read at `time`.
    pub fn as_field(&self) -> impl VectorField {
        let m = self.clone();
        crate::flow_model::FnField::new(move |x: &Vec3, y: &Vec3, time: f64| {
            let mut out = [0.0; 3];
            for i in 0..3 {
                out[i] = 2.0 * m.a[i] * y[i] + m.b[i] * x[i] + (m.c[i])(time);
            }
            out
        })
        .with_divergence({
            let a = self.a;
            move |_, _, _| 2.0 * (a[0] + a[1] + a[2])
        })
    }
}

/// `λ1 = a + √(a² - b)`, `λ2 = a - √(a² - b)`.
pub fn eigenvalues(a: f64, b: f64) -> Result<(f64, f64)> {
    let disc = a * a - b;
    if !(disc > 0.0) {
        return Err(Error::Domain(format!("need a^2 > b for real distinct eigenvalues (a = {a}, b = {b})")));
    }
    let r = disc.sqrt();
    if 2.0 * r < 1e-10 {
        return Err(Error::DegenerateEigenvalues(2.0 * r));
    }
    Ok((a + r, a - r))
}

/// `exp(L s)` for `L = [[2a, b], [-1, 0]]` by the eigen-decomposition formula
/// `[(λ2 e^{λ1 s} - λ1 e^{λ2 s}) I + (e^{λ2 s} - e^{λ1 s}) L] / (λ2 - λ1)`.
pub fn linear_exponential(a: f64, b: f64, s: f64) -> Result<[[f64; 2]; 2]> {
    let (l1, l2) = eigenvalues(a, b)?;
    let e1 = (l1 * s).exp();
    let e2 = (l2 * s).exp();
    let d = l2 - l1;
    let p = (l2 * e1 - l1 * e2) / d;
    let r = (e2 - e1) / d;
    Ok([[p + r * 2.0 * a, r * b], [-r, p]])
}

/// Mean characteristic of a [`LinearCModel`] at internal time `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearCSolution {
    pub y: Vec3,
    pub x: Vec3,
    /// `∂Y^i(s)/∂u^i`, the `(1,1)` entry of `exp(L^i s)`.
    pub sensitivity: Vec3,
}

const FORCING_ORDER: usize = 32;

/// Closed-form mean of `(Y, X)` at internal time `s`. The noise in `X`
/// has zero mean and the system is linear, so `ν` does not enter the mean.
/// The forcing `c^i` is integrated against `exp(L^i (s - r))` over `r ∈ [0, s]`.
pub fn linear_c_solution(model: &LinearCModel, u: &Vec3, x: &Vec3, s: f64, _nu: f64) -> Result<LinearCSolution> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("s must be >= 0 (got {s})")));
    }
    model.validate()?;
    let mut out = LinearCSolution {
        y: *u,
        x: *x,
        sensitivity: [1.0; 3],
    };
    if s == 0.0 {
        return Ok(out);
    }
    let rule = gauss_legendre_nodes(FORCING_ORDER, 0.0, s)?;
    for i in 0..3 {
        let e = linear_exponential(model.a[i], model.b[i], s)?;
        let mut y = e[0][0] * u[i] + e[0][1] * x[i];
        let mut xi = e[1][0] * u[i] + e[1][1] * x[i];
        for (r, w) in rule.nodes.iter().zip(&rule.weights) {
            let c = (model.c[i])(*r);
            if c != 0.0 {
                let k = linear_exponential(model.a[i], model.b[i], s - r)?;
                y += w * k[0][0] * c;
                xi += w * k[1][0] * c;
            }
        }
        out.y[i] = y;
        out.x[i] = xi;
        out.sensitivity[i] = e[0][0];
    }
    Ok(out)
}

/// Zero of the `u`-sensitivity, `s* = ln(λ2/λ1)/(λ1 - λ2)`, for `a < 0`,
/// `0 < b < a²`.
pub fn linear_c_s_star(a: f64, b: f64) -> Result<f64> {
    if !(a < 0.0 && b > 0.0 && a * a > b) {
        return Err(Error::Domain(format!("s* needs a < 0 and 0 < b < a^2 (a = {a}, b = {b})")));
    }
    let (l1, l2) = eigenvalues(a, b)?;
    Ok((l2 / l1).ln() / (l1 - l2))
}
