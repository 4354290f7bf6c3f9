//! Reverse-mode gradients through compositing and projection.
//!
//! The per-pixel walk mirrors the forward compositing exactly (same skip and
//! early-out decisions), accumulating per-splat adjoints; a single post-pass
//! then chains those through the EWA projection to the 3D Gaussian
//! parameters and the rasterizing pose.
//!
//! Gradient sums are reduced in a fixed order (pixel chunks merged by chunk
//! index, then splats in depth order), so results are independent of the
//! rayon thread count.

use rayon::prelude::*;

use crate::err::{Error, Result};
use crate::img::Image;
use crate::scene::{sh1_basis, GaussianPrimitive, SH_C1};
use crate::se3::{quat_grad_from_matrix_grad, Pose};

use super::{
    projection_jacobian, rasterize_records, sort_records, splat_alpha, Camera,
    RenderSettings, SplatRecord,
};

/// Gradients with respect to one Gaussian's parameters.
///
/// `rotation` is the raw 4-vector adjoint of the (unit) quaternion the
/// primitive carried into the forward pass; project it onto the unit-sphere
/// tangent only at parameter leaves.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color_base: [f64; 3],
    pub color_sh1: [[f64; 3]; 3],
}

impl GaussianGrad {
    pub fn add_assign(&mut self, o: &GaussianGrad) {
        for k in 0..3 {
            self.mean[k] += o.mean[k];
            self.log_scale[k] += o.log_scale[k];
            self.color_base[k] += o.color_base[k];
            for c in 0..3 {
                self.color_sh1[k][c] += o.color_sh1[k][c];
            }
        }
        for k in 0..4 {
            self.rotation[k] += o.rotation[k];
        }
        self.opacity_logit += o.opacity_logit;
    }

    pub fn scale(&mut self, s: f64) {
        for k in 0..3 {
            self.mean[k] *= s;
            self.log_scale[k] *= s;
            self.color_base[k] *= s;
            for c in 0..3 {
                self.color_sh1[k][c] *= s;
            }
        }
        for k in 0..4 {
            self.rotation[k] *= s;
        }
        self.opacity_logit *= s;
    }
}

/// Output of one backward pass: one entry per input Gaussian (culled ones
/// get zeros) plus the adjoint of the rasterizing pose.
#[derive(Clone, Debug)]
pub struct RenderGrads {
    pub gaussians: Vec<GaussianGrad>,
    pub pose_rotation: [f64; 4],
    pub pose_translation: [f64; 3],
}

impl RenderGrads {
    pub fn zeros(n: usize) -> Self {
        RenderGrads {
            gaussians: vec![GaussianGrad::default(); n],
            pose_rotation: [0.0; 4],
            pose_translation: [0.0; 3],
        }
    }
}

/// Per-splat adjoints accumulated over pixels.
#[derive(Clone, Copy, Default)]
struct SplatAdjoint {
    color: [f64; 3],
    opacity: f64,
    mean2d: [f64; 2],
    lambda: [[f64; 2]; 2],
}

impl SplatAdjoint {
    fn add_assign(&mut self, o: &SplatAdjoint) {
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
        self.opacity += o.opacity;
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
            for j in 0..2 {
                self.lambda[k][j] += o.lambda[k][j];
            }
        }
    }
}

struct ForwardCtx {
    gaussians: Vec<GaussianPrimitive>,
    records: Vec<SplatRecord>,
    image: Image,
    cam: Camera,
    pose: Pose,
}

/// Recording renderer: `forward` keeps the projected state, `backward`
/// consumes an upstream image gradient.
pub struct DiffRenderer {
    pub settings: RenderSettings,
    ctx: Option<ForwardCtx>,
}

impl DiffRenderer {
    pub fn new(settings: RenderSettings) -> Self {
        DiffRenderer { settings, ctx: None }
    }

    pub fn forward(
        &mut self,
        gaussians: &[GaussianPrimitive],
        cam: &Camera,
        pose: &Pose,
    ) -> Result<Image> {
        let mut records: Vec<SplatRecord> = gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| super::project_record(g, i, cam, pose, &self.settings))
            .collect();
        sort_records(&mut records);
        let image = rasterize_records(&records, cam, &self.settings)?;
        self.ctx = Some(ForwardCtx {
            gaussians: gaussians.to_vec(),
            records,
            image: image.clone(),
            cam: *cam,
            pose: *pose,
        });
        Ok(image)
    }

    /// Chain an upstream dL/dImage back to all Gaussian parameters and the
    /// rasterizing pose. Requires a recorded forward pass.
    pub fn backward(&self, upstream: &Image) -> Result<RenderGrads> {
        let ctx = self.ctx.as_ref().ok_or(Error::NoForwardPass)?;
        ctx.image.same_dims(upstream)?;
        let settings = &self.settings;
        let n_splats = ctx.records.len();
        let width = ctx.cam.width;
        let height = ctx.cam.height;

        // Pixel-chunk parallelism with a fixed chunk grid, merged in order.
        const CHUNK_ROWS: usize = 8;
        let chunk_count = height.div_ceil(CHUNK_ROWS);
        let partials: Vec<Vec<SplatAdjoint>> = (0..chunk_count)
            .into_par_iter()
            .map(|chunk| {
                let mut acc = vec![SplatAdjoint::default(); n_splats];
                let y_end = ((chunk + 1) * CHUNK_ROWS).min(height);
                for iy in chunk * CHUNK_ROWS..y_end {
                    for ix in 0..width {
                        backward_pixel(ctx, settings, upstream, ix, iy, &mut acc);
                    }
                }
                acc
            })
            .collect();

        let mut adjoints = vec![SplatAdjoint::default(); n_splats];
        for partial in &partials {
            for (a, p) in adjoints.iter_mut().zip(partial) {
                a.add_assign(p);
            }
        }

        // Chain per-splat adjoints to Gaussian parameters and the pose.
        let mut grads = RenderGrads::zeros(ctx.gaussians.len());
        let mut d_w = [[0.0f64; 3]; 3]; // adjoint of the pose rotation matrix
        for (rec, adj) in ctx.records.iter().zip(&adjoints) {
            chain_splat(
                ctx,
                rec,
                adj,
                &mut grads.gaussians[rec.gaussian_index],
                &mut d_w,
                &mut grads.pose_translation,
            );
        }
        grads.pose_rotation = quat_grad_from_matrix_grad(ctx.pose.rotation.quat(), &d_w);
        Ok(grads)
    }
}

/// Backward over one pixel: replays the forward walk and distributes the
/// upstream gradient to each contributing splat's color and alpha.
fn backward_pixel(
    ctx: &ForwardCtx,
    settings: &RenderSettings,
    upstream: &Image,
    ix: usize,
    iy: usize,
    acc: &mut [SplatAdjoint],
) {
    let g_out = upstream.pixel(ix, iy);
    if g_out == [0.0, 0.0, 0.0] {
        return;
    }
    let out = ctx.image.pixel(ix, iy);
    let px = ix as f64 + 0.5;
    let py = iy as f64 + 0.5;

    let mut transmittance = 1.0f64;
    let mut prefix = [0.0f64; 3]; // sum of w_j * c_j for processed splats
    for (si, rec) in ctx.records.iter().enumerate() {
        if ix < rec.x0 || ix > rec.x1 || iy < rec.y0 || iy > rec.y1 {
            continue;
        }
        let alpha = splat_alpha(rec, px, py, settings);
        if alpha < settings.alpha_min || alpha <= 0.0 {
            continue;
        }
        let w = transmittance * alpha;
        for c in 0..3 {
            prefix[c] += w * rec.splat.color[c];
        }

        // d out / d color_i = w
        let adj = &mut acc[si];
        for c in 0..3 {
            adj.color[c] += g_out[c] * w;
        }

        // d out_c / d alpha_i = T_i c_ic - (suffix_c + T_N bg_c) / (1 - alpha_i)
        // where suffix + T_N bg = out - prefix (prefix now includes splat i).
        let mut d_alpha = 0.0;
        for c in 0..3 {
            let tail = (out[c] - prefix[c]) / (1.0 - alpha);
            d_alpha += g_out[c] * (transmittance * rec.splat.color[c] - tail);
        }

        // alpha = min(opacity * G, alpha_max); clamped alphas get no gradient
        if alpha < settings.alpha_max {
            let gw = alpha / rec.splat.opacity;
            adj.opacity += d_alpha * gw;
            // d e = d_alpha * opacity * G = d_alpha * alpha
            let de = d_alpha * alpha;
            let dx = px - rec.splat.mean2d[0];
            let dy = py - rec.splat.mean2d[1];
            // e = -1/2 d^T L d: de/dmean2d = L d, de/dL = -1/2 d d^T
            adj.mean2d[0] += de * (rec.lambda[0][0] * dx + rec.lambda[0][1] * dy);
            adj.mean2d[1] += de * (rec.lambda[1][0] * dx + rec.lambda[1][1] * dy);
            adj.lambda[0][0] += de * (-0.5 * dx * dx);
            adj.lambda[0][1] += de * (-0.5 * dx * dy);
            adj.lambda[1][0] += de * (-0.5 * dy * dx);
            adj.lambda[1][1] += de * (-0.5 * dy * dy);
        }

        transmittance *= 1.0 - alpha;
        if transmittance < settings.transmittance_min {
            break;
        }
    }
}

/// Chain one splat's 2D adjoints through projection, covariance, and color
/// to the 3D Gaussian parameters and the pose adjoints.
fn chain_splat(
    ctx: &ForwardCtx,
    rec: &SplatRecord,
    adj: &SplatAdjoint,
    gg: &mut GaussianGrad,
    d_w_total: &mut [[f64; 3]; 3],
    d_t_total: &mut [f64; 3],
) {
    let g = &ctx.gaussians[rec.gaussian_index];
    let cam = &ctx.cam;
    let p = rec.p_cam;

    // opacity logit
    let o = rec.splat.opacity;
    gg.opacity_logit += adj.opacity * o * (1.0 - o);

    // color clamp mask, then base / SH coefficients / view direction
    let mut d_raw = [0.0f64; 3];
    for c in 0..3 {
        if rec.color_raw[c] > 0.0 && rec.color_raw[c] < 1.0 {
            d_raw[c] = adj.color[c];
        }
    }
    let basis = sh1_basis(rec.dir);
    let mut d_basis = [0.0f64; 3];
    for k in 0..3 {
        for c in 0..3 {
            gg.color_sh1[k][c] += d_raw[c] * basis[k];
            d_basis[k] += d_raw[c] * g.color_sh1[k][c];
        }
        gg.color_base[k] += d_raw[k];
    }
    // basis = C1 * (dir_y, dir_z, dir_x)
    let d_dir = [SH_C1 * d_basis[2], SH_C1 * d_basis[0], SH_C1 * d_basis[1]];

    // dir = p / |p|
    let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let mut d_p = [0.0f64; 3];
    {
        let dot = rec.dir[0] * d_dir[0] + rec.dir[1] * d_dir[1] + rec.dir[2] * d_dir[2];
        for k in 0..3 {
            d_p[k] += (d_dir[k] - rec.dir[k] * dot) / norm;
        }
    }

    // cov2d adjoint from the lambda adjoint: dL/dC = -L^T dL/dLam L^T
    let lam = rec.lambda;
    let mut d_cov = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for jj in 0..2 {
            let mut acc = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    acc += lam[a][i] * adj.lambda[a][b] * lam[jj][b];
                }
            }
            d_cov[i][jj] = -acc;
        }
    }

    // mean2d = (fx x/z + cx, fy y/z + cy)
    let j = projection_jacobian(cam, p);
    for k in 0..3 {
        d_p[k] += j[0][k] * adj.mean2d[0] + j[1][k] * adj.mean2d[1];
    }

    // cov2d = J M J^T (+ dilation): dM = J^T dC J, dJ = dC J M^T + dC^T J M
    let w = ctx.pose.rotation.matrix();
    let sigma = g.covariance();
    let mut m = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for jj in 0..3 {
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    acc += w[i][a] * sigma[a][b] * w[jj][b];
                }
            }
            m[i][jj] = acc;
        }
    }
    let mut d_m = [[0.0f64; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    acc += j[r][a] * d_cov[r][c] * j[c][b];
                }
            }
            d_m[a][b] = acc;
        }
    }
    let mut d_j = [[0.0f64; 3]; 2];
    for r in 0..2 {
        for a in 0..3 {
            let mut acc = 0.0;
            for c in 0..2 {
                for b in 0..3 {
                    // dC J M^T + dC^T J M, with M symmetric
                    acc += (d_cov[r][c] + d_cov[c][r]) * j[c][b] * m[b][a];
                }
            }
            d_j[r][a] = acc;
        }
    }
    // J depends on p: entries fx/z, -fx x/z^2, fy/z, -fy y/z^2
    let z_inv = 1.0 / p[2];
    let z_inv2 = z_inv * z_inv;
    let z_inv3 = z_inv2 * z_inv;
    d_p[0] += d_j[0][2] * (-cam.fx * z_inv2);
    d_p[1] += d_j[1][2] * (-cam.fy * z_inv2);
    d_p[2] += d_j[0][0] * (-cam.fx * z_inv2)
        + d_j[1][1] * (-cam.fy * z_inv2)
        + d_j[0][2] * (2.0 * cam.fx * p[0] * z_inv3)
        + d_j[1][2] * (2.0 * cam.fy * p[1] * z_inv3);

    // M = W Sigma W^T: dSigma = W^T dM W, dW = (dM + dM^T) W Sigma
    let mut d_sigma = [[0.0f64; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for i in 0..3 {
                for jj in 0..3 {
                    acc += w[i][a] * d_m[i][jj] * w[jj][b];
                }
            }
            d_sigma[a][b] = acc;
        }
    }
    for i in 0..3 {
        for a in 0..3 {
            let mut acc = 0.0;
            for jj in 0..3 {
                for b in 0..3 {
                    acc += (d_m[i][jj] + d_m[jj][i]) * w[jj][b] * sigma[b][a];
                }
            }
            d_w_total[i][a] += acc;
        }
    }

    // p = W mu + t
    for i in 0..3 {
        for a in 0..3 {
            d_w_total[i][a] += d_p[i] * g.mean[a];
            gg.mean[a] += w[i][a] * d_p[i];
        }
        d_t_total[i] += d_p[i];
    }

    // Sigma = R D R^T with D = diag(exp(2 ls))
    let r = g.rotation.matrix();
    let s2 = g.scale().map(|s| s * s);
    let mut d_r = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for a in 0..3 {
            let mut acc = 0.0;
            for jj in 0..3 {
                acc += (d_sigma[i][jj] + d_sigma[jj][i]) * r[jj][a] * s2[a];
            }
            d_r[i][a] = acc;
        }
    }
    for a in 0..3 {
        let mut acc = 0.0;
        for i in 0..3 {
            for jj in 0..3 {
                acc += r[i][a] * d_sigma[i][jj] * r[jj][a];
            }
        }
        gg.log_scale[a] += acc * 2.0 * s2[a];
    }
    let d_q = quat_grad_from_matrix_grad(g.rotation.quat(), &d_r);
    for k in 0..4 {
        gg.rotation[k] += d_q[k];
    }
}
