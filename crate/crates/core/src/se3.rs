//! Rigid-transform algebra: rotations, camera poses, twists, and the
//! per-primitive affine warp that re-expresses a change of viewpoint as a
//! transform of the scene.
//!
//! Pose convention is world-to-camera: `x_cam = R * x_world + t`. The warp
//! returned by [`relative_warp`] satisfies the render-equivalence identity
//!
//! ```text
//! render(G, target) == render(apply_warp(G, relative_warp(fixed, target)), fixed)
//! ```
//!
//! i.e. `relative_warp(fixed, target) = fixed^-1 o target`. The two published
//! variants of this formula disagree on the translation sign; this is the one
//! that passes the pixel-level equivalence check (see `render` tests and the
//! acceptance suite).

use serde::{Deserialize, Serialize};

use crate::err::{Error, Result};
use crate::math::rigid::{self, Q, V3};

/// Unit quaternion rotation, stored as `[w, x, y, z]`.
///
/// Constructors normalize; `canonicalized` additionally resolves the double
/// cover to `w >= 0`. Compositions keep the raw product so that downstream
/// derivative bookkeeping never sees a hidden sign flip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(pub [f64; 4]);

impl Rotation {
    pub fn identity() -> Self {
        Rotation([1.0, 0.0, 0.0, 0.0])
    }

    /// Normalize an arbitrary non-zero quaternion into a rotation.
    pub fn from_quat(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        Rotation([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        Rotation(rigid::so3_exp_quat([axis[0] * angle, axis[1] * angle, axis[2] * angle]))
    }

    pub fn quat(&self) -> [f64; 4] {
        self.0
    }

    /// From a proper rotation matrix (row-major), Shepperd's branch-stable
    /// extraction.
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            ]
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            [
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            ]
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            [
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            ]
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            [
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            ]
        };
        Rotation::from_quat(q).canonicalized()
    }

    /// Resolve the double cover to w >= 0 and renormalize.
    pub fn canonicalized(&self) -> Self {
        let mut r = Rotation::from_quat(self.0);
        if r.0[0] < 0.0 {
            r.0 = [-r.0[0], -r.0[1], -r.0[2], -r.0[3]];
        }
        r
    }

    pub fn inverse(&self) -> Self {
        Rotation(rigid::quat_conj(self.0))
    }

    /// `self * other`: `other` applied first.
    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(rigid::quat_mul(self.0, other.0))
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        rigid::quat_rotate(self.0, v)
    }

    /// Row-major rotation matrix.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        quat_to_matrix(self.0)
    }

    /// Axis-angle vector (angle < pi).
    pub fn log(&self) -> [f64; 3] {
        rigid::quat_log(self.0)
    }

    /// Geodesic angle to another rotation, radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let d = rigid::quat_mul(rigid::quat_conj(self.0), other.0);
        let w = rigid::quat_log(d);
        rigid::v3_dot(w, w).sqrt()
    }
}

/// Element of se(3): rotational part `omega` (radians) and translational
/// part `v` (scene units). Parameterizes learnable pose deltas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist(pub [f64; 6]);

impl Twist {
    pub fn zero() -> Self {
        Twist([0.0; 6])
    }

    pub fn new(omega: [f64; 3], v: [f64; 3]) -> Self {
        Twist([omega[0], omega[1], omega[2], v[0], v[1], v[2]])
    }

    pub fn omega(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn v(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist(self.0.map(|x| x * s))
    }
}

/// World-to-camera rigid pose: `x_cam = R * x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), translation: [0.0; 3] }
    }

    pub fn new(rotation: Rotation, translation: [f64; 3]) -> Self {
        Pose { rotation, translation }
    }

    fn as_tuple(&self) -> (Q<f64>, V3<f64>) {
        (self.rotation.0, self.translation)
    }

    fn from_tuple(p: (Q<f64>, V3<f64>)) -> Self {
        Pose { rotation: Rotation(p.0), translation: p.1 }
    }

    /// `self o other`: `other` applied first.
    pub fn compose(&self, other: &Pose) -> Self {
        Pose::from_tuple(rigid::pose_compose(self.as_tuple(), other.as_tuple()))
    }

    pub fn inverse(&self) -> Self {
        Pose::from_tuple(rigid::pose_inverse(self.as_tuple()))
    }

    pub fn transform(&self, x: [f64; 3]) -> [f64; 3] {
        rigid::v3_add(self.rotation.rotate(x), self.translation)
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> [f64; 3] {
        rigid::v3_scale(self.rotation.inverse().rotate(self.translation), -1.0)
    }

    /// Logarithm to a twist; rotation angle must be < pi.
    pub fn log(&self) -> Twist {
        let (omega, v) = rigid::se3_log(self.rotation.0, self.translation);
        Twist::new(omega, v)
    }
}

/// Exponential map from a twist to a pose.
pub fn exp(twist: &Twist) -> Pose {
    let (q, t) = rigid::se3_exp(twist.omega(), twist.v());
    Pose { rotation: Rotation(q), translation: t }
}

/// Rigid transform applied to every Gaussian primitive so that a fixed
/// rendering pose reproduces another viewpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineWarp {
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

impl AffineWarp {
    pub fn identity() -> Self {
        AffineWarp { rotation: Rotation::identity(), translation: [0.0; 3] }
    }

    pub fn apply_point(&self, x: [f64; 3]) -> [f64; 3] {
        rigid::v3_add(self.rotation.rotate(x), self.translation)
    }

    /// `self o other`: `other` applied first.
    pub fn compose(&self, other: &AffineWarp) -> Self {
        AffineWarp {
            rotation: self.rotation.compose(&other.rotation),
            translation: rigid::v3_add(
                self.rotation.rotate(other.translation),
                self.translation,
            ),
        }
    }
}

/// Warp that makes rendering from `fixed` reproduce the view from `target`:
/// `fixed^-1 o target`.
pub fn relative_warp(fixed: &Pose, target: &Pose) -> AffineWarp {
    let rel = fixed.inverse().compose(target);
    AffineWarp { rotation: rel.rotation, translation: rel.translation }
}

/// Geodesic interpolation `exp(s * log(end o start^-1)) o start`.
///
/// Rejects relative rotations at (or numerically at) pi, where the geodesic
/// is not unique.
pub fn interpolate_pose(start: &Pose, end: &Pose, s: f64) -> Result<Pose> {
    let rel = end.compose(&start.inverse());
    let w = rel.rotation.canonicalized().0[0];
    // w = cos(angle/2); angle within ~1e-6 of pi means w below ~5e-7.
    if w.abs() < 5e-7 {
        return Err(Error::InterpolationUndefined);
    }
    Ok(Pose::from_tuple(rigid::pose_interp(start.as_tuple(), end.as_tuple(), s)))
}

pub(crate) fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// d(R(q) applied as in `quat_to_matrix`) chained with an upstream gradient:
/// given dL/dR (row-major), returns dL/dq for the unit-quaternion formula.
///
/// Valid for gradients that will only ever be contracted with tangent
/// directions of the unit sphere (all quaternion-valued nodes in this crate
/// stay exactly unit along any leaf perturbation).
pub(crate) fn quat_grad_from_matrix_grad(q: [f64; 4], d_r: &[[f64; 3]; 3]) -> [f64; 4] {
    let [w, x, y, z] = q;
    // dR/dw
    let dw = [
        [0.0, -2.0 * z, 2.0 * y],
        [2.0 * z, 0.0, -2.0 * x],
        [-2.0 * y, 2.0 * x, 0.0],
    ];
    // dR/dx
    let dx = [
        [0.0, 2.0 * y, 2.0 * z],
        [2.0 * y, -4.0 * x, -2.0 * w],
        [2.0 * z, 2.0 * w, -4.0 * x],
    ];
    // dR/dy
    let dy = [
        [-4.0 * y, 2.0 * x, 2.0 * w],
        [2.0 * x, 0.0, 2.0 * z],
        [-2.0 * w, 2.0 * z, -4.0 * y],
    ];
    // dR/dz
    let dz = [
        [-4.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * w, -4.0 * z, 2.0 * y],
        [2.0 * x, 2.0 * y, 0.0],
    ];
    let contract = |d: &[[f64; 3]; 3]| {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += d[i][j] * d_r[i][j];
            }
        }
        s
    };
    [contract(&dw), contract(&dx), contract(&dy), contract(&dz)]
}

/// Left-multiplication matrix: a (x) b = L(a) b.
pub(crate) fn quat_left_mat(a: [f64; 4]) -> [[f64; 4]; 4] {
    let [w, x, y, z] = a;
    [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
}

/// Right-multiplication matrix: a (x) b = R(b) a.
pub(crate) fn quat_right_mat(b: [f64; 4]) -> [[f64; 4]; 4] {
    let [w, x, y, z] = b;
    [
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ]
}

/// M^T v for the 4x4 helpers above.
pub(crate) fn mat4_tmul(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[j] += m[i][j] * v[i];
        }
    }
    out
}

/// Project a raw quaternion gradient onto the tangent space of the unit
/// sphere at `q`; matches finite differences of a forward pass that
/// renormalizes its quaternion leaves.
pub(crate) fn project_quat_grad(q: [f64; 4], g: [f64; 4]) -> [f64; 4] {
    let dot = q[0] * g[0] + q[1] * g[1] + q[2] * g[2] + q[3] * g[3];
    [
        g[0] - dot * q[0],
        g[1] - dot * q[1],
        g[2] - dot * q[2],
        g[3] - dot * q[3],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn random_pose(rng: &mut impl rand::Rng) -> Pose {
        let axis = random_unit(rng);
        let angle = rng.gen_range(-2.8..2.8);
        let t = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        Pose::new(Rotation::from_axis_angle(axis, angle), t)
    }

    fn random_unit(rng: &mut impl rand::Rng) -> [f64; 3] {
        loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = rigid::v3_dot(v, v).sqrt();
            if n > 1e-3 && n < 1.0 {
                return rigid::v3_scale(v, 1.0 / n);
            }
        }
    }

    /// Independent rotation-matrix logarithm: angle from the trace, axis from
    /// the antisymmetric part. Oracle for the quaternion-based round trip.
    fn matrix_log(m: &[[f64; 3]; 3]) -> [f64; 3] {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let cos_t = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
        let theta = cos_t.acos();
        if theta < 1e-9 {
            return [
                (m[2][1] - m[1][2]) / 2.0,
                (m[0][2] - m[2][0]) / 2.0,
                (m[1][0] - m[0][1]) / 2.0,
            ];
        }
        let k = theta / (2.0 * theta.sin());
        [
            (m[2][1] - m[1][2]) * k,
            (m[0][2] - m[2][0]) * k,
            (m[1][0] - m[0][1]) * k,
        ]
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp(&Twist::zero());
        assert_eq!(p.rotation.quat(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.translation, [0.0; 3]);
    }

    #[test]
    fn exp_quarter_turn_matches_rodrigues() {
        let p = exp(&Twist::new([0.0, 0.0, std::f64::consts::FRAC_PI_2], [0.0; 3]));
        let m = p.rotation.matrix();
        let want = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
        assert_eq!(p.translation, [0.0; 3]);
    }

    #[test]
    fn exp_log_round_trip_1000_random_poses() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            let q = exp(&p.log());
            // rotation checked through the independent matrix log
            let log_direct = matrix_log(&p.rotation.matrix());
            let log_round = matrix_log(&q.rotation.matrix());
            for k in 0..3 {
                assert!((log_direct[k] - log_round[k]).abs() < 1e-9);
                assert!((p.translation[k] - q.translation[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relative_warp_of_pose_with_itself_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        let w = relative_warp(&p, &p);
        assert!(w.rotation.angle_to(&Rotation::identity()) < 1e-12);
        for k in 0..3 {
            assert!(w.translation[k].abs() < 1e-12);
        }
    }

    #[test]
    fn relative_warp_composition_on_random_triples() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let pm = random_pose(&mut rng);
            let pk = random_pose(&mut rng);
            let pn = random_pose(&mut rng);
            let a = relative_warp(&pm, &pk);
            let b = relative_warp(&pk, &pn);
            let direct = relative_warp(&pm, &pn);
            let composed = a.compose(&b);
            assert!(composed.rotation.angle_to(&direct.rotation) < 1e-9);
            for k in 0..3 {
                assert!((composed.translation[k] - direct.translation[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interpolate_endpoints_and_translation_midpoint() {
        let a = Pose::identity();
        let b = Pose::new(Rotation::identity(), [2.0, 0.0, 0.0]);
        let p0 = interpolate_pose(&a, &b, 0.0).unwrap();
        let p1 = interpolate_pose(&a, &b, 1.0).unwrap();
        let ph = interpolate_pose(&a, &b, 0.5).unwrap();
        assert_eq!(p0.translation, [0.0; 3]);
        assert_eq!(p1.translation, [2.0, 0.0, 0.0]);
        for (got, want) in ph.translation.iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolate_halfway_rotation_matches_slerp() {
        let a = Pose::identity();
        let b = Pose::new(
            Rotation::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2),
            [0.0; 3],
        );
        let half = interpolate_pose(&a, &b, 0.5).unwrap();
        // quaternion slerp oracle: for unit quats q0 = 1, q1, the halfway
        // point is (q0 + q1) normalized.
        let q1 = b.rotation.quat();
        let slerp = Rotation::from_quat([1.0 + q1[0], q1[1], q1[2], q1[3]]);
        assert!(half.rotation.angle_to(&slerp) < 1e-12);
    }

    #[test]
    fn interpolate_rejects_pi_rotation() {
        let a = Pose::identity();
        let b = Pose::new(
            Rotation::from_axis_angle([0.0, 1.0, 0.0], std::f64::consts::PI),
            [0.0; 3],
        );
        assert!(matches!(
            interpolate_pose(&a, &b, 0.3),
            Err(Error::InterpolationUndefined)
        ));
    }

    proptest! {
        #[test]
        fn pose_inverse_compose_is_identity(seed in 0u64..500) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = random_pose(&mut rng);
            let id = p.inverse().compose(&p);
            prop_assert!(id.rotation.angle_to(&Rotation::identity()) < 1e-9);
            for k in 0..3 {
                prop_assert!(id.translation[k].abs() < 1e-9);
            }
        }

        #[test]
        fn interpolate_pose_with_itself_is_constant(seed in 0u64..200, s in 0.0f64..1.0) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = random_pose(&mut rng);
            let q = interpolate_pose(&p, &p, s).unwrap();
            prop_assert!(q.rotation.angle_to(&p.rotation) < 1e-10);
            for k in 0..3 {
                prop_assert!((q.translation[k] - p.translation[k]).abs() < 1e-10);
            }
        }
    }
}
