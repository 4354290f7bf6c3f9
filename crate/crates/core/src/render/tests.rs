//! Renderer tests: projection against a numerical Jacobian, compositing
//! against hand-evaluated and supersampled references, the warp-equivalence
//! identity, and finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{apply_warp, logit};
use crate::se3::{exp, project_quat_grad, relative_warp, Rotation, Twist};

fn test_camera(size: usize) -> Camera {
    Camera {
        fx: size as f64 * 1.2,
        fy: size as f64 * 1.2,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
        near: 0.1,
    }
}

fn gaussian_at(mean: [f64; 3]) -> GaussianPrimitive {
    GaussianPrimitive {
        mean,
        log_scale: [0.1f64.ln(); 3],
        rotation: Rotation::identity(),
        opacity_logit: logit(0.6),
        color_base: [0.7, 0.5, 0.3],
        color_sh1: [[0.0; 3]; 3],
    }
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<GaussianPrimitive> {
    (0..n)
        .map(|_| GaussianPrimitive {
            mean: [
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.6..0.6),
            ],
            log_scale: [
                rng.gen_range(-2.8..-1.8),
                rng.gen_range(-2.8..-1.8),
                rng.gen_range(-2.8..-1.8),
            ],
            rotation: Rotation::from_axis_angle(
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                rng.gen_range(-1.5..1.5),
            )
            .canonicalized(),
            opacity_logit: logit(rng.gen_range(0.3..0.9)),
            color_base: [
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ],
            color_sh1: std::array::from_fn(|_| {
                std::array::from_fn(|_| rng.gen_range(-0.05..0.05))
            }),
        })
        .collect()
}

/// A pose whose camera sits at distance ~4 looking toward the scene,
/// perturbed by a random twist.
fn random_viewing_pose(rng: &mut ChaCha8Rng) -> Pose {
    let base = Pose::new(Rotation::identity(), [0.0, 0.0, 4.0]);
    let xi = Twist::new(
        [
            rng.gen_range(-0.25..0.25),
            rng.gen_range(-0.25..0.25),
            rng.gen_range(-0.25..0.25),
        ],
        [
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        ],
    );
    exp(&xi).compose(&base)
}

// ---------------------------------------------------------------------------
// projection

#[test]
fn on_axis_gaussian_projects_to_principal_point() {
    let cam = test_camera(32);
    let pose = Pose::identity();
    let g = gaussian_at([0.0, 0.0, 5.0]);
    let s = project(&g, &cam, &pose, &RenderSettings::default()).unwrap();
    assert!((s.mean2d[0] - cam.cx).abs() < 1e-12);
    assert!((s.mean2d[1] - cam.cy).abs() < 1e-12);
    assert!((s.depth - 5.0).abs() < 1e-12);
}

#[test]
fn isotropic_on_axis_cov2d_matches_closed_form() {
    let cam = test_camera(32);
    let settings = RenderSettings::default();
    let pose = Pose::identity();
    let sigma = 0.1f64;
    let z = 5.0;
    let g = GaussianPrimitive { log_scale: [sigma.ln(); 3], ..gaussian_at([0.0, 0.0, z]) };
    let s = project(&g, &cam, &pose, &settings).unwrap();
    let want = (cam.fx * sigma / z).powi(2) + settings.dilation;
    assert!((s.cov2d[0][0] - want).abs() < 1e-9);
    assert!((s.cov2d[1][1] - want).abs() < 1e-9);
    assert!(s.cov2d[0][1].abs() < 1e-12);
}

#[test]
fn behind_camera_is_culled() {
    let cam = test_camera(32);
    let g = gaussian_at([0.0, 0.0, -1.0]);
    assert!(project(&g, &cam, &Pose::identity(), &RenderSettings::default()).is_none());
}

/// EWA covariance against a numerical Jacobian of the pinhole map.
#[test]
fn cov2d_matches_numerical_jacobian() {
    let cam = test_camera(32);
    let settings = RenderSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let pose = random_viewing_pose(&mut rng);
        let g = &random_scene(&mut rng, 1)[0];
        let Some(s) = project(g, &cam, &pose, &settings) else {
            continue;
        };
        let p = pose.transform(g.mean);
        let h = 1e-6;
        let proj = |p: [f64; 3]| [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy];
        let mut jn = [[0.0f64; 3]; 2];
        for k in 0..3 {
            let mut pp = p;
            pp[k] += h;
            let mut pm = p;
            pm[k] -= h;
            let up = proj(pp);
            let um = proj(pm);
            jn[0][k] = (up[0] - um[0]) / (2.0 * h);
            jn[1][k] = (up[1] - um[1]) / (2.0 * h);
        }
        let w = pose.rotation.matrix();
        let sigma = g.covariance();
        let mut m = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        m[i][j] += w[i][a] * sigma[a][b] * w[j][b];
                    }
                }
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                let mut want = if r == c { settings.dilation } else { 0.0 };
                for a in 0..3 {
                    for b in 0..3 {
                        want += jn[r][a] * m[a][b] * jn[c][b];
                    }
                }
                assert!(
                    (s.cov2d[r][c] - want).abs() < 1e-5,
                    "cov2d[{r}][{c}] {} vs {want}",
                    s.cov2d[r][c]
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// compositing

#[test]
fn single_opaque_wide_splat_paints_its_color() {
    let cam = test_camera(8);
    let settings = RenderSettings::default();
    let splat = Splat2D {
        mean2d: [4.0, 4.0],
        cov2d: [[1e9, 0.0], [0.0, 1e9]],
        depth: 1.0,
        color: [0.8, 0.2, 0.4],
        opacity: 0.999_999_9,
    };
    let img = rasterize(&[splat], &cam, &settings).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            let px = img.pixel(x, y);
            for c in 0..3 {
                assert!((px[c] - splat.color[c]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn two_coincident_half_alpha_splats_match_hand_blend() {
    let cam = test_camera(4);
    let settings = RenderSettings { background: [0.1, 0.3, 0.5], ..RenderSettings::default() };
    let mk = |color: [f64; 3], depth: f64| Splat2D {
        mean2d: [2.0, 2.0],
        cov2d: [[1e9, 0.0], [0.0, 1e9]],
        depth,
        color,
        opacity: 0.5,
    };
    let c1 = [1.0, 0.0, 0.2];
    let c2 = [0.0, 1.0, 0.6];
    // list order back-to-front; the rasterizer must sort by depth itself
    let img = rasterize(&[mk(c2, 2.0), mk(c1, 1.0)], &cam, &settings).unwrap();
    // out = 0.5 c1 + 0.25 c2 + 0.25 bg at every pixel of the flat footprint
    let px = img.pixel(1, 2);
    for c in 0..3 {
        let want = 0.5 * c1[c] + 0.25 * c2[c] + 0.25 * settings.background[c];
        assert!((px[c] - want).abs() < 1e-9, "channel {c}: {} vs {want}", px[c]);
    }
}

#[test]
fn empty_splat_list_gives_background() {
    let cam = test_camera(6);
    let settings = RenderSettings { background: [0.25, 0.5, 0.75], ..RenderSettings::default() };
    let img = rasterize(&[], &cam, &settings).unwrap();
    for y in 0..6 {
        for x in 0..6 {
            assert_eq!(img.pixel(x, y), settings.background);
        }
    }
}

#[test]
fn non_finite_splat_is_an_error() {
    let cam = test_camera(4);
    let splat = Splat2D {
        mean2d: [f64::NAN, 2.0],
        cov2d: [[1.0, 0.0], [0.0, 1.0]],
        depth: 1.0,
        color: [0.5; 3],
        opacity: 0.5,
    };
    assert!(matches!(
        rasterize(&[splat], &cam, &RenderSettings::default()),
        Err(Error::NonFiniteSplat(_))
    ));
}

#[test]
fn white_scene_on_white_background_stays_exactly_one() {
    // blending weights plus final transmittance are a partition of unity
    let cam = test_camera(16);
    let settings = RenderSettings { background: [1.0; 3], ..RenderSettings::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scene = random_scene(&mut rng, 12);
    for g in &mut scene {
        g.color_base = [1.0; 3];
        g.color_sh1 = [[0.0; 3]; 3];
    }
    let pose = Pose::new(Rotation::identity(), [0.0, 0.0, 4.0]);
    let img = render(&scene, &cam, &pose, &settings).unwrap();
    for v in &img.data {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn pixels_stay_in_unit_range() {
    let cam = test_camera(16);
    let settings = RenderSettings { background: [0.9, 0.05, 0.5], ..RenderSettings::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scene = random_scene(&mut rng, 25);
    let pose = Pose::new(Rotation::identity(), [0.0, 0.0, 4.0]);
    let img = render(&scene, &cam, &pose, &settings).unwrap();
    for v in &img.data {
        assert!(*v >= 0.0 && *v <= 1.0);
    }
}

#[test]
fn rendering_is_invariant_to_input_order() {
    let cam = test_camera(24);
    let settings = RenderSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = random_scene(&mut rng, 30);
    let pose = Pose::new(Rotation::identity(), [0.0, 0.0, 4.0]);
    let img = render(&scene, &cam, &pose, &settings).unwrap();
    let mut shuffled = scene.clone();
    shuffled.reverse();
    shuffled.swap(0, 10);
    let img2 = render(&shuffled, &cam, &pose, &settings).unwrap();
    assert!(img.max_abs_diff(&img2).unwrap() < 1e-7);
}

/// Supersampled point-evaluation reference: evaluates the blending sum on a
/// 4x4 subpixel grid and averages; written independently of the rasterizer
/// (inverts the 2x2 covariance inline instead of precomputing).
fn reference_render(splats: &[Splat2D], cam: &Camera, background: [f64; 3]) -> Image {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .partial_cmp(&splats[b].depth)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut img = Image::new(cam.width, cam.height);
    let sub = 4usize;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut acc = [0.0f64; 3];
            for sy in 0..sub {
                for sx in 0..sub {
                    let px = x as f64 + (sx as f64 + 0.5) / sub as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / sub as f64;
                    let mut t = 1.0f64;
                    let mut out = [0.0f64; 3];
                    for &i in &order {
                        let s = &splats[i];
                        let det = s.cov2d[0][0] * s.cov2d[1][1] - s.cov2d[0][1] * s.cov2d[1][0];
                        let dx = px - s.mean2d[0];
                        let dy = py - s.mean2d[1];
                        let e = -0.5
                            * (s.cov2d[1][1] * dx * dx - 2.0 * s.cov2d[0][1] * dx * dy
                                + s.cov2d[0][0] * dy * dy)
                            / det;
                        let alpha = (s.opacity * e.exp()).min(1.0 - 1e-6);
                        if alpha < 1.0 / 255.0 {
                            continue;
                        }
                        for c in 0..3 {
                            out[c] += t * alpha * s.color[c];
                        }
                        t *= 1.0 - alpha;
                        if t < 1e-4 {
                            break;
                        }
                    }
                    for c in 0..3 {
                        acc[c] += out[c] + t * background[c];
                    }
                }
            }
            img.set_pixel(x, y, acc.map(|v| v / (sub * sub) as f64));
        }
    }
    img
}

#[test]
fn rasterizer_matches_supersampled_reference() {
    let cam = test_camera(8);
    let settings = RenderSettings { background: [0.2, 0.25, 0.3], ..RenderSettings::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // wide, smooth splats so center sampling is close to area integration
    let mut splats = Vec::new();
    for _ in 0..6 {
        let a: f64 = rng.gen_range(9.0..15.0);
        let b: f64 = rng.gen_range(-1.5..1.5);
        let c: f64 = rng.gen_range(9.0..15.0);
        splats.push(Splat2D {
            mean2d: [rng.gen_range(1.0..7.0), rng.gen_range(1.0..7.0)],
            cov2d: [[a, b], [b, c]],
            depth: rng.gen_range(1.0..5.0),
            color: [
                rng.gen_range(0.2..0.9),
                rng.gen_range(0.2..0.9),
                rng.gen_range(0.2..0.9),
            ],
            opacity: rng.gen_range(0.3..0.8),
        });
    }
    let img = rasterize(&splats, &cam, &settings).unwrap();
    let reference = reference_render(&splats, &cam, settings.background);
    let mean_abs: f64 = img
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / img.data.len() as f64;
    assert!(mean_abs < 1e-3, "mean abs {mean_abs}");
}

#[test]
fn doubling_fx_doubles_horizontal_extent() {
    let size = 64;
    let mut cam = test_camera(size);
    cam.fx = 40.0;
    cam.fy = 40.0;
    let settings =
        RenderSettings { sigma_cutoff: 6.0, background: [0.0; 3], ..RenderSettings::default() };
    let g = GaussianPrimitive {
        color_base: [1.0; 3],
        opacity_logit: logit(0.6),
        log_scale: [0.5f64.ln(); 3],
        ..gaussian_at([0.0, 0.0, 5.0])
    };
    let pose = Pose::identity();
    let second_moment_x = |img: &Image| {
        let mut w_sum = 0.0;
        let mut mean = 0.0;
        for y in 0..size {
            for x in 0..size {
                let w = img.pixel(x, y)[0];
                w_sum += w;
                mean += w * (x as f64 + 0.5);
            }
        }
        mean /= w_sum;
        let mut var = 0.0;
        for y in 0..size {
            for x in 0..size {
                let w = img.pixel(x, y)[0];
                var += w * (x as f64 + 0.5 - mean).powi(2);
            }
        }
        var / w_sum
    };
    let img1 = render(std::slice::from_ref(&g), &cam, &pose, &settings).unwrap();
    let v1 = second_moment_x(&img1);
    cam.fx *= 2.0;
    let img2 = render(std::slice::from_ref(&g), &cam, &pose, &settings).unwrap();
    let v2 = second_moment_x(&img2);
    let ratio = (v2 / v1).sqrt();
    assert!((ratio - 2.0).abs() < 0.04, "x-extent ratio {ratio}");
}

// ---------------------------------------------------------------------------
// warp equivalence

#[test]
fn identity_warp_render_matches_direct() {
    let cam = test_camera(16);
    let settings = RenderSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scene = random_scene(&mut rng, 10);
    let pose = random_viewing_pose(&mut rng);
    let warped = apply_warp(&scene, &relative_warp(&pose, &pose));
    let a = render(&scene, &cam, &pose, &settings).unwrap();
    let b = render(&warped, &cam, &pose, &settings).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
}

#[test]
fn warp_equivalence_holds_over_100_random_pose_pairs() {
    let cam = test_camera(16);
    let settings = RenderSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..100 {
        let scene = random_scene(&mut rng, 12);
        let fixed = random_viewing_pose(&mut rng);
        let target = random_viewing_pose(&mut rng);
        let direct = render(&scene, &cam, &target, &settings).unwrap();
        let warped = apply_warp(&scene, &relative_warp(&fixed, &target));
        let via_fixed = render(&warped, &cam, &fixed, &settings).unwrap();
        let diff = direct.max_abs_diff(&via_fixed).unwrap();
        assert!(diff < 1e-4, "case {case}: max abs diff {diff}");
    }
}

// ---------------------------------------------------------------------------
// gradients

#[test]
fn backward_without_forward_errors() {
    let renderer = DiffRenderer::new(RenderSettings::default());
    let upstream = Image::new(4, 4);
    assert!(matches!(renderer.backward(&upstream), Err(Error::NoForwardPass)));
}

#[test]
fn zero_upstream_gradient_gives_zero_grads() {
    let cam = test_camera(8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scene = random_scene(&mut rng, 4);
    let pose = random_viewing_pose(&mut rng);
    let mut renderer = DiffRenderer::new(RenderSettings::default());
    renderer.forward(&scene, &cam, &pose).unwrap();
    let grads = renderer.backward(&Image::new(8, 8)).unwrap();
    for g in &grads.gaussians {
        assert_eq!(*g, GaussianGrad::default());
    }
    assert_eq!(grads.pose_rotation, [0.0; 4]);
    assert_eq!(grads.pose_translation, [0.0; 3]);
}

/// Weighted-sum functional L = sum(W . image), so upstream dL/dimage = W.
fn functional_weights(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Image::new(size, size);
    for v in &mut w.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    w
}

fn eval_functional(
    scene: &[GaussianPrimitive],
    cam: &Camera,
    pose: &Pose,
    settings: &RenderSettings,
    w: &Image,
) -> f64 {
    let img = render(scene, cam, pose, settings).unwrap();
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let size = 12;
    let cam = test_camera(size);
    let settings = RenderSettings::smooth_for_gradcheck();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let scene = random_scene(&mut rng, 4);
    let pose = random_viewing_pose(&mut rng);
    let w = functional_weights(size, 99);

    let mut renderer = DiffRenderer::new(settings);
    renderer.forward(&scene, &cam, &pose).unwrap();
    let grads = renderer.backward(&w).unwrap();

    let h = 1e-5;
    let fd =
        |scene: &[GaussianPrimitive], pose: &Pose| eval_functional(scene, &cam, pose, &settings, &w);
    let check = |analytic: f64, want: f64, what: &str| {
        assert!(
            (analytic - want).abs() < 1e-4 * want.abs().max(1.0),
            "{what}: analytic {analytic} vs fd {want}"
        );
    };

    for (gi, g) in scene.iter().enumerate() {
        let gg = &grads.gaussians[gi];
        for k in 0..3 {
            let mut sp = scene.to_vec();
            sp[gi].mean[k] += h;
            let mut sm = scene.to_vec();
            sm[gi].mean[k] -= h;
            check(gg.mean[k], (fd(&sp, &pose) - fd(&sm, &pose)) / (2.0 * h), "mean");

            sp = scene.to_vec();
            sp[gi].log_scale[k] += h;
            sm = scene.to_vec();
            sm[gi].log_scale[k] -= h;
            check(gg.log_scale[k], (fd(&sp, &pose) - fd(&sm, &pose)) / (2.0 * h), "log_scale");

            sp = scene.to_vec();
            sp[gi].color_base[k] += h;
            sm = scene.to_vec();
            sm[gi].color_base[k] -= h;
            check(gg.color_base[k], (fd(&sp, &pose) - fd(&sm, &pose)) / (2.0 * h), "color_base");
        }
        // rotations: projected analytic vs renormalizing FD
        let proj = project_quat_grad(g.rotation.quat(), gg.rotation);
        for k in 0..4 {
            let mut qp = g.rotation.quat();
            qp[k] += h;
            let mut sp = scene.to_vec();
            sp[gi].rotation = Rotation::from_quat(qp);
            let mut qm = g.rotation.quat();
            qm[k] -= h;
            let mut sm = scene.to_vec();
            sm[gi].rotation = Rotation::from_quat(qm);
            check(proj[k], (fd(&sp, &pose) - fd(&sm, &pose)) / (2.0 * h), "rotation");
        }
        {
            let mut sp = scene.to_vec();
            sp[gi].opacity_logit += h;
            let mut sm = scene.to_vec();
            sm[gi].opacity_logit -= h;
            check(gg.opacity_logit, (fd(&sp, &pose) - fd(&sm, &pose)) / (2.0 * h), "opacity");
        }
        for k in 0..3 {
            for c in 0..3 {
                let mut sp = scene.to_vec();
                sp[gi].color_sh1[k][c] += h;
                let mut sm = scene.to_vec();
                sm[gi].color_sh1[k][c] -= h;
                check(
                    gg.color_sh1[k][c],
                    (fd(&sp, &pose) - fd(&sm, &pose)) / (2.0 * h),
                    "color_sh1",
                );
            }
        }
    }

    let proj = project_quat_grad(pose.rotation.quat(), grads.pose_rotation);
    for k in 0..4 {
        let mut qp = pose.rotation.quat();
        qp[k] += h;
        let pp = Pose::new(Rotation::from_quat(qp), pose.translation);
        let mut qm = pose.rotation.quat();
        qm[k] -= h;
        let pm = Pose::new(Rotation::from_quat(qm), pose.translation);
        check(proj[k], (fd(&scene, &pp) - fd(&scene, &pm)) / (2.0 * h), "pose_rotation");
    }
    for k in 0..3 {
        let mut tp = pose.translation;
        tp[k] += h;
        let mut tm = pose.translation;
        tm[k] -= h;
        check(
            grads.pose_translation[k],
            (fd(&scene, &Pose::new(pose.rotation, tp)) - fd(&scene, &Pose::new(pose.rotation, tm)))
                / (2.0 * h),
            "pose_translation",
        );
    }
}

#[test]
fn occluded_back_splat_color_gets_no_gradient() {
    let cam = test_camera(8);
    let settings = RenderSettings::default();
    let front = GaussianPrimitive {
        opacity_logit: logit(0.99999),
        log_scale: [90.0f64.ln(); 3],
        ..gaussian_at([0.0, 0.0, 2.0])
    };
    let back = gaussian_at([0.0, 0.0, 6.0]);
    let pose = Pose::identity();
    let mut renderer = DiffRenderer::new(settings);
    renderer.forward(&[front, back], &cam, &pose).unwrap();
    let mut upstream = Image::new(8, 8);
    for v in &mut upstream.data {
        *v = 1.0;
    }
    let grads = renderer.backward(&upstream).unwrap();
    for c in 0..3 {
        assert!(
            grads.gaussians[1].color_base[c].abs() < 1e-6,
            "occluded color grad {}",
            grads.gaussians[1].color_base[c]
        );
    }
}
