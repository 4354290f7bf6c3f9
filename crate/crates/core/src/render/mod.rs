//! Differentiable pinhole splatting: project 3D Gaussians to 2D splats,
//! composite front-to-back, and (in [`diff`]) run the analytic backward pass
//! for every scene and pose parameter.

mod diff;

pub use diff::{DiffRenderer, GaussianGrad, RenderGrads};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::err::{Error, Result};
use crate::img::Image;
use crate::scene::{self, GaussianPrimitive};
use crate::se3::Pose;

/// Pinhole intrinsics. Pixel (ix, iy) has its center at (ix + 0.5, iy + 0.5).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

/// Rasterizer knobs. The dilation is the standard +0.3 px^2 splat
/// anti-aliasing term; cutoffs are configurable because gradient validation
/// widens them to keep the model smooth where finite differences probe it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub dilation: f64,
    pub sigma_cutoff: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub transmittance_min: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            background: [0.0, 0.0, 0.0],
            dilation: 0.3,
            sigma_cutoff: 3.0,
            alpha_min: 1.0 / 255.0,
            // keeps 1/(1 - alpha) finite in the backward pass
            alpha_max: 1.0 - 1e-6,
            transmittance_min: 1e-4,
        }
    }
}

impl RenderSettings {
    /// Settings for finite-difference validation: no footprint truncation,
    /// no early-out, so the forward model is smooth everywhere the probe
    /// lands.
    pub fn smooth_for_gradcheck() -> Self {
        RenderSettings {
            sigma_cutoff: 50.0,
            alpha_min: 0.0,
            transmittance_min: 0.0,
            ..Self::default()
        }
    }
}

/// A projected Gaussian ready for compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Regularized (dilated) screen-space covariance.
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Everything the backward pass needs about one projected Gaussian.
#[derive(Clone, Debug)]
pub(crate) struct SplatRecord {
    pub gaussian_index: usize,
    pub splat: Splat2D,
    /// Inverse of the regularized cov2d.
    pub lambda: [[f64; 2]; 2],
    pub p_cam: [f64; 3],
    /// Unit view direction in camera frame (p_cam normalized).
    pub dir: [f64; 3],
    /// Color before the [0,1] clamp, for the clamp mask.
    pub color_raw: [f64; 3],
    /// Inclusive pixel bounds of the footprint.
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

pub(crate) fn project_record(
    g: &GaussianPrimitive,
    index: usize,
    cam: &Camera,
    pose: &Pose,
    settings: &RenderSettings,
) -> Option<SplatRecord> {
    let p = pose.transform(g.mean);
    let z = p[2];
    if z <= cam.near {
        return None;
    }

    let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let dir = [p[0] / norm, p[1] / norm, p[2] / norm];
    let color_raw = scene::evaluate_color_raw(g, dir);
    let color = color_raw.map(|c| c.clamp(0.0, 1.0));

    let mean2d = [cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy];

    // EWA: cov2d = J W Sigma W^T J^T with J the projection Jacobian at p.
    let w = pose.rotation.matrix();
    let sigma = g.covariance();
    let mut m = [[0.0f64; 3]; 3]; // W Sigma W^T
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    acc += w[i][a] * sigma[a][b] * w[j][b];
                }
            }
            m[i][j] = acc;
        }
    }
    let j = projection_jacobian(cam, p);
    let mut cov2d = [[0.0f64; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    acc += j[r][a] * m[a][b] * j[c][b];
                }
            }
            cov2d[r][c] = acc;
        }
    }
    cov2d[0][0] += settings.dilation;
    cov2d[1][1] += settings.dilation;

    let det = cov2d[0][0] * cov2d[1][1] - cov2d[0][1] * cov2d[1][0];
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let lambda = [
        [cov2d[1][1] / det, -cov2d[0][1] / det],
        [-cov2d[1][0] / det, cov2d[0][0] / det],
    ];

    // footprint bound from the largest eigenvalue
    let half_tr = 0.5 * (cov2d[0][0] + cov2d[1][1]);
    let disc = (0.25 * (cov2d[0][0] - cov2d[1][1]).powi(2) + cov2d[0][1] * cov2d[0][1]).sqrt();
    let radius = settings.sigma_cutoff * (half_tr + disc).max(0.0).sqrt();

    let xmin = mean2d[0] - radius;
    let xmax = mean2d[0] + radius;
    let ymin = mean2d[1] - radius;
    let ymax = mean2d[1] + radius;
    if xmax < 0.0 || ymax < 0.0 || xmin > cam.width as f64 || ymin > cam.height as f64 {
        return None;
    }
    let x0 = xmin.floor().max(0.0) as usize;
    let y0 = ymin.floor().max(0.0) as usize;
    let x1 = (xmax.ceil() as usize).min(cam.width - 1);
    let y1 = (ymax.ceil() as usize).min(cam.height - 1);

    Some(SplatRecord {
        gaussian_index: index,
        splat: Splat2D { mean2d, cov2d, depth: z, color, opacity: g.opacity() },
        lambda,
        p_cam: p,
        dir,
        color_raw,
        x0,
        x1,
        y0,
        y1,
    })
}

pub(crate) fn projection_jacobian(cam: &Camera, p: [f64; 3]) -> [[f64; 3]; 2] {
    let z_inv = 1.0 / p[2];
    let z_inv2 = z_inv * z_inv;
    [
        [cam.fx * z_inv, 0.0, -cam.fx * p[0] * z_inv2],
        [0.0, cam.fy * z_inv, -cam.fy * p[1] * z_inv2],
    ]
}

/// Project one Gaussian; `None` means culled (behind the near plane or the
/// footprint misses the viewport).
pub fn project(
    g: &GaussianPrimitive,
    cam: &Camera,
    pose: &Pose,
    settings: &RenderSettings,
) -> Option<Splat2D> {
    project_record(g, 0, cam, pose, settings).map(|r| r.splat)
}

/// Sort key: ascending depth, ties by original index.
pub(crate) fn sort_records(records: &mut Vec<SplatRecord>) {
    records.sort_by(|a, b| {
        a.splat
            .depth
            .partial_cmp(&b.splat.depth)
            .unwrap()
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
}

#[inline]
pub(crate) fn splat_alpha(rec: &SplatRecord, px: f64, py: f64, settings: &RenderSettings) -> f64 {
    let dx = px - rec.splat.mean2d[0];
    let dy = py - rec.splat.mean2d[1];
    let e = -0.5
        * (rec.lambda[0][0] * dx * dx
            + (rec.lambda[0][1] + rec.lambda[1][0]) * dx * dy
            + rec.lambda[1][1] * dy * dy);
    (rec.splat.opacity * e.exp()).min(settings.alpha_max)
}

pub(crate) fn composite_pixel(
    records: &[SplatRecord],
    ix: usize,
    iy: usize,
    settings: &RenderSettings,
) -> [f64; 3] {
    let px = ix as f64 + 0.5;
    let py = iy as f64 + 0.5;
    let mut out = [0.0f64; 3];
    let mut transmittance = 1.0f64;
    for rec in records {
        if ix < rec.x0 || ix > rec.x1 || iy < rec.y0 || iy > rec.y1 {
            continue;
        }
        let alpha = splat_alpha(rec, px, py, settings);
        if alpha < settings.alpha_min || alpha <= 0.0 {
            continue;
        }
        let w = transmittance * alpha;
        for c in 0..3 {
            out[c] += w * rec.splat.color[c];
        }
        transmittance *= 1.0 - alpha;
        if transmittance < settings.transmittance_min {
            break;
        }
    }
    for c in 0..3 {
        out[c] += transmittance * settings.background[c];
    }
    out
}

pub(crate) fn rasterize_records(
    records: &[SplatRecord],
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<Image> {
    for (i, rec) in records.iter().enumerate() {
        let s = &rec.splat;
        let finite = s.mean2d.iter().all(|v| v.is_finite())
            && s.cov2d.iter().flatten().all(|v| v.is_finite())
            && s.depth.is_finite()
            && s.color.iter().all(|v| v.is_finite())
            && s.opacity.is_finite();
        if !finite {
            return Err(Error::NonFiniteSplat(i));
        }
    }
    let mut img = Image::new(cam.width, cam.height);
    let width = cam.width;
    img.data
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(iy, row)| {
            for ix in 0..width {
                let rgb = composite_pixel(records, ix, iy, settings);
                row[ix * 3..ix * 3 + 3].copy_from_slice(&rgb);
            }
        });
    Ok(img)
}

/// Composite already-projected splats over the background.
pub fn rasterize(splats: &[Splat2D], cam: &Camera, settings: &RenderSettings) -> Result<Image> {
    let mut records: Vec<SplatRecord> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let det = s.cov2d[0][0] * s.cov2d[1][1] - s.cov2d[0][1] * s.cov2d[1][0];
            if !det.is_finite() || det == 0.0 {
                // surfaced as a non-finite splat by the finiteness check below
                return Some(SplatRecord {
                    gaussian_index: i,
                    splat: *s,
                    lambda: [[f64::NAN; 2]; 2],
                    p_cam: [0.0, 0.0, s.depth],
                    dir: [0.0, 0.0, 1.0],
                    color_raw: s.color,
                    x0: 0,
                    x1: cam.width - 1,
                    y0: 0,
                    y1: cam.height - 1,
                });
            }
            let lambda = [
                [s.cov2d[1][1] / det, -s.cov2d[0][1] / det],
                [-s.cov2d[1][0] / det, s.cov2d[0][0] / det],
            ];
            let half_tr = 0.5 * (s.cov2d[0][0] + s.cov2d[1][1]);
            let disc =
                (0.25 * (s.cov2d[0][0] - s.cov2d[1][1]).powi(2) + s.cov2d[0][1] * s.cov2d[0][1])
                    .sqrt();
            let radius = settings.sigma_cutoff * (half_tr + disc).max(0.0).sqrt();
            let xmin = s.mean2d[0] - radius;
            let xmax = s.mean2d[0] + radius;
            let ymin = s.mean2d[1] - radius;
            let ymax = s.mean2d[1] + radius;
            if xmax < 0.0 || ymax < 0.0 || xmin > cam.width as f64 || ymin > cam.height as f64 {
                return None;
            }
            Some(SplatRecord {
                gaussian_index: i,
                splat: *s,
                lambda,
                p_cam: [0.0, 0.0, s.depth],
                dir: [0.0, 0.0, 1.0],
                color_raw: s.color,
                x0: xmin.floor().max(0.0) as usize,
                y0: ymin.floor().max(0.0) as usize,
                x1: (xmax.ceil() as usize).min(cam.width - 1),
                y1: (ymax.ceil() as usize).min(cam.height - 1),
            })
        })
        .collect();
    sort_records(&mut records);
    rasterize_records(&records, cam, settings)
}

/// Project-then-composite. Deterministic: depth ties break on list order and
/// pixels are independent, so the image does not depend on thread count.
pub fn render(
    gaussians: &[GaussianPrimitive],
    cam: &Camera,
    pose: &Pose,
    settings: &RenderSettings,
) -> Result<Image> {
    let mut records: Vec<SplatRecord> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_record(g, i, cam, pose, settings))
        .collect();
    sort_records(&mut records);
    rasterize_records(&records, cam, settings)
}

#[cfg(test)]
mod tests;
