//! Synthetic ground-truth generator: a static Gaussian cloud plus a rigid
//! dynamic object, a smooth orbiting camera with exposure-time shake, blurry
//! observations rendered with the same forward model the trainer uses (at a
//! much higher subframe count), and noisy initial poses standing in for an
//! SfM pipeline's output.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blur::{render_sharp, synthesize_blur, ExposureSpec, SubframeChoice};
use crate::err::{Error, Result};
use crate::img::Image;
use crate::render::{render, Camera, RenderSettings};
use crate::scene::{logit, FrameParams, GaussianPrimitive, SceneModel};
use crate::se3::{self, Pose, Rotation, Twist};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub frame_count: usize,
    pub image_size: usize,
    pub n_static: usize,
    pub n_dynamic: usize,
    /// Exposure-time camera shake: rotation magnitude in degrees and
    /// translation magnitude as a fraction of the scene radius.
    pub shake_rotation_deg: f64,
    pub shake_translation_frac: f64,
    /// Total object travel over the sequence, fraction of the scene radius.
    pub object_motion_frac: f64,
    /// Object spin over the sequence, degrees.
    pub object_spin_deg: f64,
    /// Initial-pose noise: rotation (degrees) and translation (fraction of
    /// the scene radius).
    pub pose_noise_rot_deg: f64,
    pub pose_noise_trans_frac: f64,
    /// Position noise of the init point cloud, fraction of the scene radius.
    pub init_point_noise_frac: f64,
    /// Subframe count for ground-truth blur rendering.
    pub gt_blur_subframes: usize,
    /// Exposure duration as a fraction of the inter-frame interval.
    pub exposure_fraction: f64,
    pub background: [f64; 3],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            frame_count: 24,
            image_size: 64,
            n_static: 96,
            n_dynamic: 24,
            shake_rotation_deg: 0.8,
            shake_translation_frac: 0.01,
            object_motion_frac: 0.25,
            object_spin_deg: 25.0,
            pose_noise_rot_deg: 1.0,
            pose_noise_trans_frac: 0.01,
            init_point_noise_frac: 0.05,
            gt_blur_subframes: 64,
            exposure_fraction: 0.6,
            background: [0.0, 0.0, 0.0],
        }
    }
}

impl SyntheticSpec {
    /// Named regimes used by the command line and the acceptance runs.
    pub fn preset(name: &str) -> Result<Self> {
        let base = SyntheticSpec::default();
        Ok(match name {
            "slow-object" => SyntheticSpec {
                object_motion_frac: 0.1,
                object_spin_deg: 8.0,
                ..base
            },
            "fast-object" => SyntheticSpec {
                object_motion_frac: 0.45,
                object_spin_deg: 50.0,
                shake_rotation_deg: 1.2,
                ..base
            },
            "small-shake" => SyntheticSpec {
                shake_rotation_deg: 0.25,
                shake_translation_frac: 0.004,
                ..base
            },
            "large-shake" => SyntheticSpec {
                shake_rotation_deg: 2.0,
                shake_translation_frac: 0.025,
                ..base
            },
            "dense-static" => SyntheticSpec { n_static: 192, n_dynamic: 16, ..base },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset '{other}' (slow-object, fast-object, small-shake, \
                     large-shake, dense-static)"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::InvalidConfig("frame count must be >= 2".into()));
        }
        if self.n_static == 0 && self.n_dynamic == 0 {
            return Err(Error::InvalidConfig("scene must contain Gaussians".into()));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidConfig("image size must be >= 8".into()));
        }
        let nonneg = [
            self.shake_rotation_deg,
            self.shake_translation_frac,
            self.object_motion_frac,
            self.object_spin_deg,
            self.pose_noise_rot_deg,
            self.pose_noise_trans_frac,
            self.init_point_noise_frac,
        ];
        if nonneg.iter().any(|m| *m < 0.0) {
            return Err(Error::InvalidConfig("magnitudes must be >= 0".into()));
        }
        if self.gt_blur_subframes == 0 || !(self.exposure_fraction > 0.0 && self.exposure_fraction <= 1.0) {
            return Err(Error::InvalidConfig("bad exposure parameters".into()));
        }
        Ok(())
    }
}

/// One timestamp's observations and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameObservation {
    pub t: u32,
    pub blurry: Image,
    pub sharp_gt: Image,
    pub static_gt: Image,
    pub gt_pose: Pose,
    pub init_pose: Pose,
    pub delta_t: f64,
    pub gt_start_twist: Twist,
    pub gt_end_twist: Twist,
}

/// Seed point for trainer initialization (the stand-in for an SfM cloud).
/// Dynamic points are expressed in the canonical object configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
    pub dynamic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub camera: Camera,
    pub frames: Vec<FrameObservation>,
    pub init_points: Vec<InitPoint>,
    pub scene_radius: f64,
    pub spec: SyntheticSpec,
}

const SCENE_RADIUS: f64 = 3.0;
const CAMERA_DISTANCE: f64 = 8.0;

fn uniform_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rotation noise: uniform axis, folded-normal angle of the given sigma.
fn noise_twist(rng: &mut ChaCha8Rng, sigma_rot_rad: f64, sigma_trans: f64) -> Twist {
    let axis = uniform_unit(rng);
    let angle = gauss(rng) * sigma_rot_rad;
    let dir = uniform_unit(rng);
    let mag = gauss(rng) * sigma_trans;
    Twist::new(
        [axis[0] * angle, axis[1] * angle, axis[2] * angle],
        [dir[0] * mag, dir[1] * mag, dir[2] * mag],
    )
}

fn look_at(center: [f64; 3], target: [f64; 3]) -> Pose {
    let f = {
        let d = [target[0] - center[0], target[1] - center[1], target[2] - center[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    };
    let up = [0.0, 1.0, 0.0];
    let mut right = [
        f[1] * up[2] - f[2] * up[1],
        f[2] * up[0] - f[0] * up[2],
        f[0] * up[1] - f[1] * up[0],
    ];
    let rn = (right[0] * right[0] + right[1] * right[1] + right[2] * right[2]).sqrt();
    for r in &mut right {
        *r /= rn;
    }
    let down = [
        f[1] * right[2] - f[2] * right[1],
        f[2] * right[0] - f[0] * right[2],
        f[0] * right[1] - f[1] * right[0],
    ];
    let rot = Rotation::from_matrix(&[right, down, f]);
    let t = {
        let c = rot.rotate(center);
        [-c[0], -c[1], -c[2]]
    };
    Pose::new(rot, t)
}

/// Camera center along a smooth orbit, parameterized by continuous frame
/// time (fractional values land inside exposures).
fn trajectory_pose(time: f64, frame_count: usize) -> Pose {
    let sweep = 1.15; // radians of orbit over the whole sequence
    let phi = (time / frame_count as f64 - 0.5) * sweep;
    let center = [
        CAMERA_DISTANCE * phi.sin(),
        0.35 * (2.2 * phi + 0.7).sin(),
        -CAMERA_DISTANCE * phi.cos(),
    ];
    look_at(center, [0.0, 0.0, 0.0])
}

/// Deterministic dataset plus the generating scene (with ground-truth
/// per-frame parameters installed).
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, SceneModel)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = spec.image_size;
    let cam = Camera {
        fx: size as f64 * 1.1,
        fy: size as f64 * 1.1,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
        near: 0.2,
    };
    let settings = RenderSettings { background: spec.background, ..RenderSettings::default() };

    // static cloud: positions in a slab that fills the view, warm/cool colors
    let mut static_set = Vec::with_capacity(spec.n_static);
    for _ in 0..spec.n_static {
        static_set.push(GaussianPrimitive {
            mean: [
                rng.gen_range(-SCENE_RADIUS..SCENE_RADIUS),
                rng.gen_range(-SCENE_RADIUS..SCENE_RADIUS),
                rng.gen_range(-SCENE_RADIUS * 0.6..SCENE_RADIUS * 0.6),
            ],
            log_scale: [
                rng.gen_range(-2.6..-1.7),
                rng.gen_range(-2.6..-1.7),
                rng.gen_range(-2.6..-1.7),
            ],
            rotation: Rotation::from_axis_angle(uniform_unit(&mut rng), rng.gen_range(-1.5..1.5))
                .canonicalized(),
            opacity_logit: logit(rng.gen_range(0.35..0.9)),
            color_base: [
                rng.gen_range(0.15..0.9),
                rng.gen_range(0.15..0.9),
                rng.gen_range(0.15..0.9),
            ],
            color_sh1: std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.04..0.04))),
        });
    }

    // dynamic object: a compact cluster in the canonical configuration
    let object_center = [
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.3..0.3),
    ];
    let object_radius = SCENE_RADIUS * 0.18;
    let mut dynamic_set = Vec::with_capacity(spec.n_dynamic);
    for _ in 0..spec.n_dynamic {
        let offset = uniform_unit(&mut rng);
        let dist = rng.gen_range(0.0..object_radius);
        dynamic_set.push(GaussianPrimitive {
            mean: [
                object_center[0] + offset[0] * dist,
                object_center[1] + offset[1] * dist,
                object_center[2] + offset[2] * dist,
            ],
            log_scale: [
                rng.gen_range(-2.4..-1.8),
                rng.gen_range(-2.4..-1.8),
                rng.gen_range(-2.4..-1.8),
            ],
            rotation: Rotation::from_axis_angle(uniform_unit(&mut rng), rng.gen_range(-1.5..1.5))
                .canonicalized(),
            opacity_logit: logit(rng.gen_range(0.5..0.95)),
            color_base: [
                rng.gen_range(0.5..0.95),
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.1..0.4),
            ],
            color_sh1: std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.04..0.04))),
        });
    }

    let mut gt_scene = SceneModel::new(static_set, dynamic_set);

    // object trajectory: linear drift plus spin about a fixed axis, both
    // centered on the canonical configuration at mid-sequence
    let drift_dir = uniform_unit(&mut rng);
    let drift_total = spec.object_motion_frac * SCENE_RADIUS;
    let spin_axis = uniform_unit(&mut rng);
    let spin_total = spec.object_spin_deg.to_radians();
    let mid = spec.frame_count as f64 / 2.0;
    let object_pose_at = |time: f64| -> (Rotation, [f64; 3]) {
        let u = (time - mid) / spec.frame_count as f64;
        let rot = Rotation::from_axis_angle(spin_axis, spin_total * u);
        let center_t = [
            object_center[0] + drift_dir[0] * drift_total * u,
            object_center[1] + drift_dir[1] * drift_total * u,
            object_center[2] + drift_dir[2] * drift_total * u,
        ];
        // A_t x + E_t with rotation about the object center
        let rc = rot.rotate(object_center);
        let e = [center_t[0] - rc[0], center_t[1] - rc[1], center_t[2] - rc[2]];
        (rot, e)
    };

    let gt_spec_n = spec.gt_blur_subframes;
    let mut frames = Vec::with_capacity(spec.frame_count);
    for ti in 0..spec.frame_count {
        let t = ti as u32;
        let time = ti as f64;
        let delta = spec.exposure_fraction;
        let frame_pose = trajectory_pose(time, spec.frame_count);
        let pose_start = trajectory_pose(time - delta / 2.0, spec.frame_count);
        let pose_end = trajectory_pose(time + delta / 2.0, spec.frame_count);
        let shake = noise_twist(
            &mut rng,
            spec.shake_rotation_deg.to_radians(),
            spec.shake_translation_frac * SCENE_RADIUS,
        );
        let mut xi_start = pose_start.compose(&frame_pose.inverse()).log();
        let mut xi_end = pose_end.compose(&frame_pose.inverse()).log();
        for k in 0..6 {
            xi_start.0[k] -= shake.0[k] / 2.0;
            xi_end.0[k] += shake.0[k] / 2.0;
        }

        // intra-exposure object drift as the ground-truth exposure weight:
        // subframe 1 carries +w/2, subframe N carries -w/2
        let (_, e_before) = object_pose_at(time - delta / 2.0);
        let (_, e_after) = object_pose_at(time + delta / 2.0);
        let (rot_t, e_t) = object_pose_at(time);
        let w_t = Twist::new(
            [0.0; 3],
            [
                e_before[0] - e_after[0],
                e_before[1] - e_after[1],
                e_before[2] - e_after[2],
            ],
        );

        gt_scene.frames.insert(
            t,
            FrameParams {
                deform_rotation: rot_t,
                deform_translation: e_t,
                exposure_weight: w_t,
                camera_init: frame_pose,
                start_twist: xi_start,
                end_twist: xi_end,
            },
        );

        let noise = noise_twist(
            &mut rng,
            spec.pose_noise_rot_deg.to_radians(),
            spec.pose_noise_trans_frac * SCENE_RADIUS,
        );
        let gt_ref_pose = {
            let spec1 = ExposureSpec::with_middle_reference(1, delta);
            crate::blur::subframe_poses(&frame_pose, &xi_start, &xi_end, &spec1)?[0]
        };
        let init_pose = se3::exp(&noise).compose(&gt_ref_pose);

        frames.push((t, delta, gt_ref_pose, init_pose, xi_start, xi_end));
    }

    // render observations from the completed ground-truth scene
    let mut observations = Vec::with_capacity(spec.frame_count);
    for (t, delta, gt_pose, init_pose, xi_start, xi_end) in frames {
        let blur_spec = ExposureSpec::with_middle_reference(gt_spec_n, delta);
        let sharp_spec = ExposureSpec::with_middle_reference(1, delta);
        let blurry = synthesize_blur(&gt_scene, &cam, t, &blur_spec, &settings)?;
        let sharp_gt =
            render_sharp(&gt_scene, &cam, t, &sharp_spec, SubframeChoice::Middle, &settings)?;
        let static_gt = render(&gt_scene.static_set, &cam, &gt_pose, &settings)?;
        observations.push(FrameObservation {
            t,
            blurry,
            sharp_gt,
            static_gt,
            gt_pose,
            init_pose,
            delta_t: delta,
            gt_start_twist: xi_start,
            gt_end_twist: xi_end,
        });
    }

    // init cloud: perturbed ground-truth means with the static/dynamic split
    let sigma_p = spec.init_point_noise_frac * SCENE_RADIUS;
    let mut init_points = Vec::new();
    let mut noisy_point = |g: &GaussianPrimitive, dynamic: bool, rng: &mut ChaCha8Rng| InitPoint {
        position: [
            g.mean[0] + gauss(rng) * sigma_p,
            g.mean[1] + gauss(rng) * sigma_p,
            g.mean[2] + gauss(rng) * sigma_p,
        ],
        color: g.color_base.map(|c| (c + rng.gen_range(-0.15..0.15)).clamp(0.02, 0.98)),
        dynamic,
    };
    for g in &gt_scene.static_set {
        init_points.push(noisy_point(g, false, &mut rng));
    }
    for g in &gt_scene.dynamic_canonical {
        init_points.push(noisy_point(g, true, &mut rng));
    }
    drop(noisy_point);

    let dataset = Dataset {
        camera: cam,
        frames: observations,
        init_points,
        scene_radius: SCENE_RADIUS,
        spec: spec.clone(),
    };
    Ok((dataset, gt_scene))
}

// ---------------------------------------------------------------------------
// disk layout

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub t: u32,
    pub delta_t: f64,
    pub blurry: String,
    pub sharp: String,
    pub static_target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub spec: SyntheticSpec,
    pub scene_radius: f64,
    pub camera: Camera,
    pub frames: Vec<ManifestFrame>,
    pub poses_gt: String,
    pub poses_init: String,
    pub twists_gt: String,
    pub points: String,
    pub gt_scene: String,
}

/// Write the dataset directory: manifest, camera file, per-frame PFM
/// triplets, pose/twist/point text files, and the ground-truth scene as a
/// checkpoint. Creates `dir` itself but not its parents.
pub fn export(dataset: &Dataset, gt_scene: &SceneModel, dir: &Path) -> Result<()> {
    use crate::formats;
    if !dir.exists() {
        std::fs::create_dir(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut frames = Vec::new();
    for f in &dataset.frames {
        let blurry = format!("frame_{:03}_blurry.pfm", f.t);
        let sharp = format!("frame_{:03}_sharp.pfm", f.t);
        let static_target = format!("frame_{:03}_static.pfm", f.t);
        formats::write_pfm(&dir.join(&blurry), &f.blurry)?;
        formats::write_pfm(&dir.join(&sharp), &f.sharp_gt)?;
        formats::write_pfm(&dir.join(&static_target), &f.static_gt)?;
        frames.push(ManifestFrame { t: f.t, delta_t: f.delta_t, blurry, sharp, static_target });
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        spec: dataset.spec.clone(),
        scene_radius: dataset.scene_radius,
        camera: dataset.camera,
        frames,
        poses_gt: "poses_gt.txt".into(),
        poses_init: "poses_init.txt".into(),
        twists_gt: "twists_gt.txt".into(),
        points: "points_init.txt".into(),
        gt_scene: "scene_gt.ckpt".into(),
    };
    formats::write_poses(
        &dir.join(&manifest.poses_gt),
        &dataset.frames.iter().map(|f| (f.t, f.gt_pose)).collect::<Vec<_>>(),
    )?;
    formats::write_poses(
        &dir.join(&manifest.poses_init),
        &dataset.frames.iter().map(|f| (f.t, f.init_pose)).collect::<Vec<_>>(),
    )?;
    formats::write_twists(
        &dir.join(&manifest.twists_gt),
        &dataset
            .frames
            .iter()
            .map(|f| (f.t, f.gt_start_twist, f.gt_end_twist))
            .collect::<Vec<_>>(),
    )?;
    formats::write_points(&dir.join(&manifest.points), &dataset.init_points)?;
    formats::write_checkpoint(
        &dir.join(&manifest.gt_scene),
        &crate::formats::Checkpoint {
            scene: gt_scene.clone(),
            optimizer: None,
            epoch: 0,
            history: vec![],
            config: None,
        },
    )?;
    formats::write_json(&dir.join("camera.json"), &dataset.camera)?;
    formats::write_json(&dir.join("manifest.json"), &manifest)
}


/// Read a dataset directory back. Fails with the offending path on missing
/// files or a version mismatch.
pub fn import(dir: &Path) -> Result<Dataset> {
    use crate::formats;
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = formats::read_json(&manifest_path)?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Version {
            path: manifest_path,
            found: manifest.version,
            expected: DATASET_VERSION,
        });
    }
    let camera: Camera = formats::read_json(&dir.join("camera.json"))?;
    if camera != manifest.camera {
        return Err(Error::format(
            manifest_path,
            "camera.json disagrees with the manifest",
        ));
    }
    let poses_gt = formats::read_poses(&dir.join(&manifest.poses_gt))?;
    let poses_init = formats::read_poses(&dir.join(&manifest.poses_init))?;
    let twists = formats::read_twists(&dir.join(&manifest.twists_gt))?;
    let find_pose = |list: &[(u32, Pose)], t: u32| -> Result<Pose> {
        list.iter()
            .find(|(pt, _)| *pt == t)
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::format(dir.join(&manifest.poses_gt), format!("no pose for frame {t}")))
    };
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for mf in &manifest.frames {
        let (gt_start_twist, gt_end_twist) = twists
            .iter()
            .find(|(t, _, _)| *t == mf.t)
            .map(|(_, s, e)| (*s, *e))
            .ok_or_else(|| {
                Error::format(dir.join(&manifest.twists_gt), format!("no twists for frame {}", mf.t))
            })?;
        frames.push(FrameObservation {
            t: mf.t,
            blurry: formats::read_pfm(&dir.join(&mf.blurry))?,
            sharp_gt: formats::read_pfm(&dir.join(&mf.sharp))?,
            static_gt: formats::read_pfm(&dir.join(&mf.static_target))?,
            gt_pose: find_pose(&poses_gt, mf.t)?,
            init_pose: find_pose(&poses_init, mf.t)?,
            delta_t: mf.delta_t,
            gt_start_twist,
            gt_end_twist,
        });
    }
    Ok(Dataset {
        camera,
        frames,
        init_points: formats::read_points(&dir.join(&manifest.points))?,
        scene_radius: manifest.scene_radius,
        spec: manifest.spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SyntheticSpec {
            frame_count: 3,
            image_size: 16,
            n_static: 8,
            n_dynamic: 4,
            gt_blur_subframes: 4,
            ..SyntheticSpec::default()
        };
        let (a, scene_a) = generate(&spec).unwrap();
        let (b, scene_b) = generate(&spec).unwrap();
        assert_eq!(scene_a, scene_b);
        assert_eq!(a.frames.len(), b.frames.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa, fb);
        }
        assert_eq!(a.init_points, b.init_points);
    }

    #[test]
    fn static_world_means_blurry_equals_sharp_and_poses_exact() {
        let spec = SyntheticSpec {
            frame_count: 3,
            image_size: 16,
            n_static: 10,
            n_dynamic: 2,
            shake_rotation_deg: 0.0,
            shake_translation_frac: 0.0,
            object_motion_frac: 0.0,
            object_spin_deg: 0.0,
            pose_noise_rot_deg: 0.0,
            pose_noise_trans_frac: 0.0,
            init_point_noise_frac: 0.0,
            gt_blur_subframes: 8,
            exposure_fraction: 1e-9,
            ..SyntheticSpec::default()
        };
        let (ds, _) = generate(&spec).unwrap();
        for f in &ds.frames {
            assert!(f.blurry.max_abs_diff(&f.sharp_gt).unwrap() < 1e-9);
            assert!(f.init_pose.rotation.angle_to(&f.gt_pose.rotation) < 1e-12);
            for k in 0..3 {
                assert!((f.init_pose.translation[k] - f.gt_pose.translation[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_spec_is_rejected() {
        let spec = SyntheticSpec { n_static: 0, n_dynamic: 0, ..SyntheticSpec::default() };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn rotation_noise_magnitude_matches_folded_normal() {
        // 1 degree sigma -> mean folded-normal magnitude sigma*sqrt(2/pi)
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let sigma = 1.0f64.to_radians();
        let mut total = 0.0;
        let n = 1000;
        for _ in 0..n {
            let tw = noise_twist(&mut rng, sigma, 0.0);
            let p = se3::exp(&tw);
            total += p.rotation.angle_to(&Rotation::identity()).to_degrees();
        }
        let mean = total / n as f64;
        assert!((0.7..=1.3).contains(&mean), "mean rotation error {mean} deg");
    }

    #[test]
    fn export_import_round_trip() {
        let spec = SyntheticSpec {
            frame_count: 2,
            image_size: 12,
            n_static: 6,
            n_dynamic: 3,
            gt_blur_subframes: 3,
            ..SyntheticSpec::default()
        };
        let (ds, gt) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        export(&ds, &gt, &out).unwrap();
        let back = import(&out).unwrap();
        assert_eq!(back.camera, ds.camera);
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.init_points, ds.init_points);
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.gt_pose, b.gt_pose);
            assert_eq!(a.init_pose, b.init_pose);
            assert_eq!(a.gt_start_twist, b.gt_start_twist);
            // images round-trip through f32
            for (x, y) in a.blurry.data.iter().zip(&b.blurry.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // re-exporting the imported dataset reproduces identical PFM bytes
        let out2 = dir.path().join("ds2");
        let gt2 = crate::formats::read_checkpoint(&out.join("scene_gt.ckpt")).unwrap().scene;
        export(&back, &gt2, &out2).unwrap();
        let a = std::fs::read(out.join("frame_000_blurry.pfm")).unwrap();
        let b = std::fs::read(out2.join("frame_000_blurry.pfm")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn import_of_empty_directory_names_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = import(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("manifest.json"), "error should name the manifest: {msg}");
    }

    #[test]
    fn static_target_has_no_dynamic_contribution() {
        let spec = SyntheticSpec {
            frame_count: 2,
            image_size: 16,
            n_static: 8,
            n_dynamic: 6,
            gt_blur_subframes: 2,
            ..SyntheticSpec::default()
        };
        let (ds, gt_scene) = generate(&spec).unwrap();
        let settings =
            RenderSettings { background: spec.background, ..RenderSettings::default() };
        for f in &ds.frames {
            // force dynamic opacities to zero and render everything
            let mut muted = gt_scene.clone();
            for g in &mut muted.dynamic_canonical {
                g.opacity_logit = -1e9;
            }
            let weight = crate::scene::subframe_weight(
                &muted.frames[&f.t].exposure_weight,
                1,
                1,
            )
            .unwrap();
            let mut all = muted.static_set.clone();
            all.extend(crate::scene::deform_dynamic(&muted, f.t, &weight).unwrap());
            let img = render(&all, &ds.camera, &f.gt_pose, &settings).unwrap();
            assert_eq!(img, f.static_gt);
        }
    }
}
