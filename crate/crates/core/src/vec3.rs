//! Small fixed-size vector and matrix helpers.
//!
//! Everything in the model lives in three dimensions, so plain arrays are
//! used instead of a general linear-algebra type.

pub type Vec3 = [f64; 3];

/// Row-major 3×3 matrix; `m[i][k]` is row `i`, column `k`.
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO: Vec3 = [0.0; 3];
pub const ZERO_MAT: Mat3 = [[0.0; 3]; 3];
pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `a + s * b`
#[inline]
pub fn axpy(a: &Vec3, s: f64, b: &Vec3) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm2(a: &Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    norm2(a).sqrt()
}

/// Unit vector along axis `k`, scaled by `h`.
#[inline]
pub fn unit(k: usize, h: f64) -> Vec3 {
    let mut e = ZERO;
    e[k] = h;
    e
}

pub fn max_abs(a: &Vec3) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn is_finite(a: &Vec3) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_max_abs(m: &Mat3) -> f64 {
    m.iter().map(max_abs).fold(0.0, f64::max)
}

pub fn trace(m: &Mat3) -> f64 {
    m[0][0] + m[1][1] + m[2][2]
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = ZERO_MAT;
    for (i, row) in m.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            t[k][i] = *v;
        }
    }
    t
}

pub fn outer(a: &Vec3, b: &Vec3) -> Mat3 {
    let mut m = ZERO_MAT;
    for i in 0..3 {
        for k in 0..3 {
            m[i][k] = a[i] * b[k];
        }
    }
    m
}

pub fn diag(d: &Vec3) -> Mat3 {
    let mut m = ZERO_MAT;
    for i in 0..3 {
        m[i][i] = d[i];
    }
    m
}

pub fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = *a;
    for i in 0..3 {
        for k in 0..3 {
            m[i][k] += b[i][k];
        }
    }
    m
}

/// Rotation by `angle` about the (not necessarily normalised) `axis`.
pub fn rotation(axis: &Vec3, angle: f64) -> Mat3 {
    let n = norm(axis);
    let [a, b, c] = scale(axis, 1.0 / n);
    let (s, co) = angle.sin_cos();
    let t = 1.0 - co;
    [
        [co + a * a * t, a * b * t - c * s, a * c * t + b * s],
        [b * a * t + c * s, co + b * b * t, b * c * t - a * s],
        [c * a * t - b * s, c * b * t + a * s, co + c * c * t],
    ]
}

pub fn format_point(v: &Vec3) -> String {
    format!("({}, {}, {})", v[0], v[1], v[2])
}
