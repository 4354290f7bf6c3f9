//! Scene representation: a static Gaussian set plus a dynamic canonical set
//! deformed per timestamp by a rigid transform, with a per-frame exposure
//! weight describing intra-exposure object motion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::err::{Error, Result};
use crate::math::rigid;
use crate::se3::{AffineWarp, Pose, Rotation, Twist};

/// sqrt(3 / (4 pi)), the degree-1 real spherical-harmonic constant.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Scale clamp bounds, scene units.
pub const SCALE_MIN: f64 = 1e-6;
pub const SCALE_MAX: f64 = 1e3;

/// One anisotropic 3D Gaussian.
///
/// Scales are stored in log-space so positivity is structural; opacity is a
/// logit. `color_sh1[k]` multiplies the degree-1 basis function of direction
/// component `k` in (y, z, x) order, each an RGB triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: Rotation,
    pub opacity_logit: f64,
    pub color_base: [f64; 3],
    pub color_sh1: [[f64; 3]; 3],
}

impl GaussianPrimitive {
    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// World-space covariance R diag(scale^2) R^T.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let r = self.rotation.matrix();
        let s2 = self.scale().map(|s| s * s);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| r[i][k] * s2[k] * r[j][k]).sum();
            }
        }
        out
    }

    /// Clamp scales into [SCALE_MIN, SCALE_MAX]; called after parameter
    /// updates and when ingesting external data.
    pub fn clamp_scales(&mut self) {
        for s in &mut self.log_scale {
            *s = s.clamp(SCALE_MIN.ln(), SCALE_MAX.ln());
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// View-dependent color: base plus degree-1 SH, clamped to [0, 1].
///
/// `view_direction` must be a unit vector; the renderer passes the direction
/// in the rasterizing camera's frame so that warped and direct renders of
/// the same viewpoint agree exactly.
pub fn evaluate_color(primitive: &GaussianPrimitive, view_direction: [f64; 3]) -> [f64; 3] {
    let raw = evaluate_color_raw(primitive, view_direction);
    raw.map(|c| c.clamp(0.0, 1.0))
}

pub(crate) fn evaluate_color_raw(g: &GaussianPrimitive, d: [f64; 3]) -> [f64; 3] {
    let basis = sh1_basis(d);
    let mut out = g.color_base;
    for k in 0..3 {
        for c in 0..3 {
            out[c] += g.color_sh1[k][c] * basis[k];
        }
    }
    out
}

/// Degree-1 real SH basis at unit direction d, ordered (y, z, x).
pub(crate) fn sh1_basis(d: [f64; 3]) -> [f64; 3] {
    [SH_C1 * d[1], SH_C1 * d[2], SH_C1 * d[0]]
}

/// Per-timestamp learnables: object deformation, exposure weight, and the
/// camera parameterization (fixed initial pose plus two twist deltas for the
/// start and end of the exposure).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub deform_rotation: Rotation,
    pub deform_translation: [f64; 3],
    pub exposure_weight: Twist,
    pub camera_init: Pose,
    pub start_twist: Twist,
    pub end_twist: Twist,
}

impl FrameParams {
    /// Identity deformation and zero twists around the given initial pose.
    pub fn at_rest(camera_init: Pose) -> Self {
        FrameParams {
            deform_rotation: Rotation::identity(),
            deform_translation: [0.0; 3],
            exposure_weight: Twist::zero(),
            camera_init,
            start_twist: Twist::zero(),
            end_twist: Twist::zero(),
        }
    }
}

/// Static set, dynamic canonical set, and per-timestamp parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub static_set: Vec<GaussianPrimitive>,
    pub dynamic_canonical: Vec<GaussianPrimitive>,
    pub frames: BTreeMap<u32, FrameParams>,
}

impl SceneModel {
    pub fn new(
        static_set: Vec<GaussianPrimitive>,
        dynamic_canonical: Vec<GaussianPrimitive>,
    ) -> Self {
        SceneModel { static_set, dynamic_canonical, frames: BTreeMap::new() }
    }

    pub fn frame(&self, t: u32) -> Result<&FrameParams> {
        self.frames.get(&t).ok_or(Error::UnknownTimestamp(t))
    }

    pub fn frame_mut(&mut self, t: u32) -> Result<&mut FrameParams> {
        self.frames.get_mut(&t).ok_or(Error::UnknownTimestamp(t))
    }

    pub fn timestamps(&self) -> impl Iterator<Item = u32> + '_ {
        self.frames.keys().copied()
    }
}

/// Subframe deformation weight: endpoints +-w_t/2, linear in between,
/// elementwise. N = 1 uses the midpoint (zero offset).
pub fn subframe_weight(w_t: &Twist, i: usize, n: usize) -> Result<Twist> {
    if i < 1 || i > n {
        return Err(Error::SubframeOutOfRange { index: i, count: n });
    }
    if n == 1 {
        return Ok(Twist::zero());
    }
    let u = (i - 1) as f64 / (n - 1) as f64;
    let mut out = [0.0; 6];
    for k in 0..6 {
        let half = w_t.0[k] / 2.0;
        out[k] = (1.0 - u) * half + u * (-half);
    }
    Ok(Twist(out))
}

/// Deform the canonical dynamic set to timestamp `t`, with an additional
/// subframe offset `exp(subframe_weight)` composed after the frame
/// deformation. Color, opacity, and scale are untouched.
pub fn deform_dynamic(
    scene: &SceneModel,
    t: u32,
    subframe_weight: &Twist,
) -> Result<Vec<GaussianPrimitive>> {
    let frame = scene.frame(t)?;
    let (q_w, t_w) = rigid::se3_exp(subframe_weight.omega(), subframe_weight.v());
    let rot_w = Rotation(q_w);
    let out = scene
        .dynamic_canonical
        .iter()
        .map(|g| {
            let frame_pos = rigid::v3_add(
                frame.deform_rotation.rotate(g.mean),
                frame.deform_translation,
            );
            let mean = rigid::v3_add(rot_w.rotate(frame_pos), t_w);
            let rotation = rot_w.compose(&frame.deform_rotation).compose(&g.rotation);
            GaussianPrimitive { mean, rotation, ..g.clone() }
        })
        .collect();
    Ok(out)
}

/// Apply a rigid warp to every primitive: means are transformed, rotations
/// conjugated; color and opacity stay as they are.
pub fn apply_warp(gaussians: &[GaussianPrimitive], warp: &AffineWarp) -> Vec<GaussianPrimitive> {
    gaussians
        .iter()
        .map(|g| GaussianPrimitive {
            mean: warp.apply_point(g.mean),
            rotation: warp.rotation.compose(&g.rotation),
            ..g.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_gaussian() -> GaussianPrimitive {
        GaussianPrimitive {
            mean: [0.5, -0.25, 2.0],
            log_scale: [2.0f64.ln(), 0.0, 0.0], // covariance diag(4, 1, 1)
            rotation: Rotation::identity(),
            opacity_logit: 0.4,
            color_base: [0.5, 0.4, 0.3],
            color_sh1: [[0.0; 3]; 3],
        }
    }

    fn scene_with_frame(frame: FrameParams) -> SceneModel {
        let mut scene = SceneModel::new(vec![test_gaussian()], vec![test_gaussian()]);
        scene.frames.insert(0, frame);
        scene
    }

    #[test]
    fn subframe_weight_endpoints_and_midpoint() {
        let w = Twist([0.2, -0.4, 0.6, 1.0, 2.0, 3.0]);
        let first = subframe_weight(&w, 1, 5).unwrap();
        let last = subframe_weight(&w, 5, 5).unwrap();
        let mid = subframe_weight(&w, 4, 7).unwrap();
        for k in 0..6 {
            assert_eq!(first.0[k], w.0[k] / 2.0);
            assert_eq!(last.0[k], -w.0[k] / 2.0);
            assert_eq!(mid.0[k], 0.0);
        }
        assert_eq!(subframe_weight(&w, 1, 1).unwrap(), Twist::zero());
        assert!(subframe_weight(&w, 0, 5).is_err());
        assert!(subframe_weight(&w, 6, 5).is_err());
    }

    #[test]
    fn deform_identity_returns_canonical_set() {
        let scene = scene_with_frame(FrameParams::at_rest(Pose::identity()));
        let out = deform_dynamic(&scene, 0, &Twist::zero()).unwrap();
        assert_eq!(out, scene.dynamic_canonical);
    }

    #[test]
    fn deform_pure_translation_shifts_means_only() {
        let mut frame = FrameParams::at_rest(Pose::identity());
        frame.deform_translation = [0.0, 0.0, 1.0];
        let scene = scene_with_frame(frame);
        let statics_before = scene.static_set.clone();
        let out = deform_dynamic(&scene, 0, &Twist::zero()).unwrap();
        let g = &scene.dynamic_canonical[0];
        assert_eq!(out[0].mean, [g.mean[0], g.mean[1], g.mean[2] + 1.0]);
        assert_eq!(out[0].covariance(), g.covariance());
        assert_eq!(scene.static_set, statics_before);
    }

    #[test]
    fn deform_unknown_timestamp_errors() {
        let scene = scene_with_frame(FrameParams::at_rest(Pose::identity()));
        assert!(matches!(
            deform_dynamic(&scene, 9, &Twist::zero()),
            Err(Error::UnknownTimestamp(9))
        ));
    }

    #[test]
    fn deform_rotation_matches_monte_carlo_sample_covariance() {
        let mut frame = FrameParams::at_rest(Pose::identity());
        frame.deform_rotation =
            Rotation::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let scene = scene_with_frame(frame);
        let out = deform_dynamic(&scene, 0, &Twist::zero()).unwrap();
        let cov = out[0].covariance();

        // sample points from the canonical Gaussian, push them through the
        // same rigid map, and take the sample covariance
        let g = &scene.dynamic_canonical[0];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 400_000;
        let mut acc = [[0.0f64; 3]; 3];
        let s = g.scale();
        for _ in 0..n {
            let local = [
                gauss(&mut rng) * s[0],
                gauss(&mut rng) * s[1],
                gauss(&mut rng) * s[2],
            ];
            let p = scene.frames[&0].deform_rotation.rotate(local);
            for i in 0..3 {
                for j in 0..3 {
                    acc[i][j] += p[i] * p[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let mc = acc[i][j] / n as f64;
                assert!(
                    (mc - cov[i][j]).abs() < 0.05,
                    "cov[{i}][{j}]: mc {mc} vs analytic {}",
                    cov[i][j]
                );
            }
        }
        // analytic expectation: diag(4,1,1) conjugated by 90 deg about z
        assert!((cov[0][0] - 1.0).abs() < 1e-12);
        assert!((cov[1][1] - 4.0).abs() < 1e-12);
        assert!((cov[2][2] - 1.0).abs() < 1e-12);
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn apply_identity_warp_is_bitwise_noop() {
        let gaussians = vec![test_gaussian()];
        let out = apply_warp(&gaussians, &AffineWarp::identity());
        assert_eq!(out, gaussians);
    }

    #[test]
    fn apply_translation_warp_shifts_means_keeps_covariance() {
        let gaussians = vec![test_gaussian()];
        let warp = AffineWarp { rotation: Rotation::identity(), translation: [1.0, -2.0, 3.0] };
        let out = apply_warp(&gaussians, &warp);
        assert_eq!(out[0].mean, [1.5, -2.25, 5.0]);
        assert_eq!(out[0].covariance(), gaussians[0].covariance());
    }

    #[test]
    fn apply_rotation_warp_matches_dense_conjugation() {
        let gaussians = vec![test_gaussian()];
        let warp = AffineWarp {
            rotation: Rotation::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2),
            translation: [0.0; 3],
        };
        let out = apply_warp(&gaussians, &warp);
        let cov = out[0].covariance();
        // dense conjugation oracle R Sigma R^T
        let r = warp.rotation.matrix();
        let sigma = gaussians[0].covariance();
        let mut want = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        want[i][j] += r[i][a] * sigma[a][b] * r[j][b];
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[i][j] - want[i][j]).abs() < 1e-12);
            }
        }
        assert!((cov[0][0] - 1.0).abs() < 1e-12);
        assert!((cov[1][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn warp_composition_acts_like_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let g = vec![GaussianPrimitive {
                mean: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                ..test_gaussian()
            }];
            let w1 = AffineWarp {
                rotation: Rotation::from_axis_angle(
                    [0.0, 1.0, 0.0],
                    rng.gen_range(-1.0..1.0),
                ),
                translation: [rng.gen_range(-1.0..1.0), 0.0, 0.0],
            };
            let w2 = AffineWarp {
                rotation: Rotation::from_axis_angle(
                    [1.0, 0.0, 0.0],
                    rng.gen_range(-1.0..1.0),
                ),
                translation: [0.0, rng.gen_range(-1.0..1.0), 0.0],
            };
            let sequential = apply_warp(&apply_warp(&g, &w1), &w2);
            let composed = apply_warp(&g, &w2.compose(&w1));
            for k in 0..3 {
                assert!((sequential[0].mean[k] - composed[0].mean[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn warp_preserves_covariance_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let g = GaussianPrimitive {
                log_scale: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
                rotation: Rotation::from_axis_angle([1.0, 0.0, 0.0], rng.gen_range(-1.0..1.0)),
                ..test_gaussian()
            };
            let warp = AffineWarp {
                rotation: Rotation::from_axis_angle(
                    [0.0, 1.0, 0.0],
                    rng.gen_range(-2.0..2.0),
                ),
                translation: [0.1, 0.2, 0.3],
            };
            let out = apply_warp(&[g.clone()], &warp);
            assert!((det3(&g.covariance()) - det3(&out[0].covariance())).abs() < 1e-9);
        }
    }

    fn det3(m: &[[f64; 3]; 3]) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[test]
    fn color_without_sh_is_base_everywhere() {
        let g = test_gaussian();
        for d in [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.6, 0.8, 0.0]] {
            assert_eq!(evaluate_color(&g, d), g.color_base);
        }
    }

    #[test]
    fn opposite_directions_sum_to_twice_base() {
        let mut g = test_gaussian();
        g.color_sh1 = [[0.05, -0.02, 0.01], [0.03, 0.04, -0.03], [-0.02, 0.01, 0.02]];
        let d = [0.48, -0.6, 0.64];
        let a = evaluate_color(&g, d);
        let b = evaluate_color(&g, [-d[0], -d[1], -d[2]]);
        for c in 0..3 {
            assert!((a[c] + b[c] - 2.0 * g.color_base[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn sh_evaluation_matches_textbook_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let mut g = test_gaussian();
            for k in 0..3 {
                for c in 0..3 {
                    g.color_sh1[k][c] = rng.gen_range(-0.1..0.1);
                }
            }
            let v: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let d = [v[0] / n, v[1] / n, v[2] / n];
            // textbook real SH: Y_{1,-1} = sqrt(3/4pi) y, Y_{1,0} = sqrt(3/4pi) z,
            // Y_{1,1} = sqrt(3/4pi) x
            let c1 = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
            let got = evaluate_color(&g, d);
            for c in 0..3 {
                let want = (g.color_base[c]
                    + c1 * (d[1] * g.color_sh1[0][c] + d[2] * g.color_sh1[1][c] + d[0] * g.color_sh1[2][c]))
                    .clamp(0.0, 1.0);
                assert!((got[c] - want).abs() < 1e-12);
            }
        }
    }
}
