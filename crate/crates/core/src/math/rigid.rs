//! Quaternion and SE(3) kernels, generic over the scalar type.
//!
//! Quaternions are `[w, x, y, z]`, twists are `(omega, v)` with the rotation
//! part in radians. Poses are `(quat, translation)` acting as
//! `x_out = R(quat) * x + translation`. `pose_compose(a, b)` applies `b`
//! first, matching matrix multiplication `A * B`.
//!
//! Small-angle branches are written in even powers of the angle so they stay
//! exact and derivative-safe for dual scalars at omega = 0.

use super::real::Real;

/// Angle below which the series branches take over.
pub const SMALL_ANGLE: f64 = 1e-6;

pub type V3<R> = [R; 3];
pub type Q<R> = [R; 4];

#[inline]
pub fn v3_add<R: Real>(a: V3<R>, b: V3<R>) -> V3<R> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn v3_sub<R: Real>(a: V3<R>, b: V3<R>) -> V3<R> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn v3_scale<R: Real>(a: V3<R>, s: R) -> V3<R> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn v3_dot<R: Real>(a: V3<R>, b: V3<R>) -> R {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn v3_cross<R: Real>(a: V3<R>, b: V3<R>) -> V3<R> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn quat_mul<R: Real>(a: Q<R>, b: Q<R>) -> Q<R> {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

#[inline]
pub fn quat_conj<R: Real>(q: Q<R>) -> Q<R> {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Rotate a vector by a unit quaternion.
#[inline]
pub fn quat_rotate<R: Real>(q: Q<R>, v: V3<R>) -> V3<R> {
    let u = [q[1], q[2], q[3]];
    let uv = v3_cross(u, v);
    let uuv = v3_cross(u, uv);
    let two = R::from_f64(2.0);
    v3_add(v, v3_add(v3_scale(uv, two * q[0]), v3_scale(uuv, two)))
}

/// Exponential map so(3) -> unit quaternion.
pub fn so3_exp_quat<R: Real>(omega: V3<R>) -> Q<R> {
    let t2 = v3_dot(omega, omega);
    let (w, s) = if t2.value() < SMALL_ANGLE * SMALL_ANGLE {
        // cos(t/2) and sin(t/2)/t in even powers of t
        let w = R::one() - t2 * R::from_f64(1.0 / 8.0) + t2 * t2 * R::from_f64(1.0 / 384.0);
        let s = R::from_f64(0.5) - t2 * R::from_f64(1.0 / 48.0) + t2 * t2 * R::from_f64(1.0 / 3840.0);
        (w, s)
    } else {
        let t = t2.sqrt();
        let half = t * R::from_f64(0.5);
        (half.cos(), half.sin() / t)
    };
    [w, omega[0] * s, omega[1] * s, omega[2] * s]
}

/// Logarithm of a unit quaternion, shortest branch (angle < pi).
pub fn quat_log<R: Real>(q: Q<R>) -> V3<R> {
    // The double cover makes q and -q the same rotation; branch on the value
    // so the log stays on the short side.
    let q = if q[0].value() < 0.0 { [-q[0], -q[1], -q[2], -q[3]] } else { q };
    let v = [q[1], q[2], q[3]];
    let n2 = v3_dot(v, v);
    let f = if n2.value() < SMALL_ANGLE * SMALL_ANGLE {
        // 2*atan2(n, w)/n in even powers of n
        let w_inv = R::one() / q[0];
        let two = R::from_f64(2.0);
        two * w_inv - two * n2 * w_inv * w_inv * w_inv * R::from_f64(1.0 / 3.0)
    } else {
        let n = n2.sqrt();
        let theta = R::from_f64(2.0) * n.atan2(q[0]);
        theta / n
    };
    v3_scale(v, f)
}

/// Coefficients (a, b) of V = I + a*Omega + b*Omega^2 for the SE(3) exp.
fn se3_v_coeffs<R: Real>(t2: R) -> (R, R) {
    if t2.value() < SMALL_ANGLE * SMALL_ANGLE {
        let a = R::from_f64(0.5) - t2 * R::from_f64(1.0 / 24.0) + t2 * t2 * R::from_f64(1.0 / 720.0);
        let b = R::from_f64(1.0 / 6.0) - t2 * R::from_f64(1.0 / 120.0)
            + t2 * t2 * R::from_f64(1.0 / 5040.0);
        (a, b)
    } else {
        let t = t2.sqrt();
        let a = (R::one() - t.cos()) / t2;
        let b = (t - t.sin()) / (t2 * t);
        (a, b)
    }
}

/// Exponential map se(3) -> (unit quaternion, translation).
pub fn se3_exp<R: Real>(omega: V3<R>, v: V3<R>) -> (Q<R>, V3<R>) {
    let q = so3_exp_quat(omega);
    let t2 = v3_dot(omega, omega);
    let (a, b) = se3_v_coeffs(t2);
    let wv = v3_cross(omega, v);
    let wwv = v3_cross(omega, wv);
    let t = v3_add(v, v3_add(v3_scale(wv, a), v3_scale(wwv, b)));
    (q, t)
}

/// Logarithm SE(3) -> (omega, v); rotation angle must be < pi.
pub fn se3_log<R: Real>(q: Q<R>, t: V3<R>) -> (V3<R>, V3<R>) {
    let omega = quat_log(q);
    let t2 = v3_dot(omega, omega);
    let c = if t2.value() < SMALL_ANGLE * SMALL_ANGLE {
        R::from_f64(1.0 / 12.0) + t2 * R::from_f64(1.0 / 720.0) + t2 * t2 * R::from_f64(1.0 / 30240.0)
    } else {
        let theta = t2.sqrt();
        let half = theta * R::from_f64(0.5);
        // (1 - (theta/2) * cot(theta/2)) / theta^2
        (R::one() - half * half.cos() / half.sin()) / t2
    };
    let wt = v3_cross(omega, t);
    let wwt = v3_cross(omega, wt);
    let v = v3_add(t, v3_add(v3_scale(wt, R::from_f64(-0.5)), v3_scale(wwt, c)));
    (omega, v)
}

/// Compose rigid transforms: the result applies `b` first, then `a`.
#[inline]
pub fn pose_compose<R: Real>(a: (Q<R>, V3<R>), b: (Q<R>, V3<R>)) -> (Q<R>, V3<R>) {
    (quat_mul(a.0, b.0), v3_add(quat_rotate(a.0, b.1), a.1))
}

#[inline]
pub fn pose_inverse<R: Real>(p: (Q<R>, V3<R>)) -> (Q<R>, V3<R>) {
    let qc = quat_conj(p.0);
    (qc, v3_scale(quat_rotate(qc, p.1), -R::one()))
}

/// Geodesic interpolation exp(s * log(end o start^-1)) o start.
pub fn pose_interp<R: Real>(start: (Q<R>, V3<R>), end: (Q<R>, V3<R>), s: R) -> (Q<R>, V3<R>) {
    let rel = pose_compose(end, pose_inverse(start));
    let (omega, v) = se3_log(rel.0, rel.1);
    let step = se3_exp(v3_scale(omega, s), v3_scale(v, s));
    pose_compose(step, start)
}
