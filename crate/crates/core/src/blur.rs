//! Exposure-time blur synthesis.
//!
//! A frame's camera trajectory is parameterized by two learnable twists
//! around the initial pose (start and end of exposure). N subframe poses are
//! placed along the geodesic between them; each subframe is realized as an
//! affine warp of the scene relative to the fixed reference pose, rendered,
//! and the images averaged in subframe order.
//!
//! The low-dimensional pose chains (12 camera twist components, 6 exposure
//! weight components) are differentiated with forward-mode duals over the
//! same generic kernels as the value path, so values match the plain f64
//! path bitwise and the Jacobians are exact.

use serde::{Deserialize, Serialize};

use crate::err::{Error, Result};
use crate::img::Image;
use crate::math::rigid::{self, Q, V3};
use crate::math::{Dual, Real};
use crate::render::{Camera, DiffRenderer, GaussianGrad, RenderSettings};
use crate::scene::{apply_warp, deform_dynamic, subframe_weight, SceneModel};
use crate::se3::{
    self, mat4_tmul, project_quat_grad, quat_grad_from_matrix_grad, quat_left_mat, quat_right_mat,
    AffineWarp, Pose, Rotation, Twist,
};

/// Subframe discretization of one exposure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureSpec {
    /// Number of latent sharp subframes.
    pub n: usize,
    /// Exposure duration as a fraction of the inter-frame interval.
    pub delta_t: f64,
    /// 1-based reference subframe index.
    pub reference_index: usize,
}

impl ExposureSpec {
    /// N subframes with the middle one (ceil(N/2)) as reference.
    pub fn with_middle_reference(n: usize, delta_t: f64) -> Self {
        ExposureSpec { n, delta_t, reference_index: n.div_ceil(2) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidConfig("subframe count must be >= 1".into()));
        }
        if !(self.delta_t > 0.0 && self.delta_t <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "exposure fraction {} outside (0, 1]",
                self.delta_t
            )));
        }
        if self.reference_index < 1 || self.reference_index > self.n {
            return Err(Error::InvalidConfig(format!(
                "reference index {} outside 1..={}",
                self.reference_index, self.n
            )));
        }
        Ok(())
    }

    /// Interpolation fraction of subframe m (1-based).
    pub fn fraction(&self, m: usize) -> f64 {
        if self.n == 1 {
            0.5
        } else {
            (m - 1) as f64 / (self.n - 1) as f64
        }
    }
}

/// Which subframe a sharp render uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubframeChoice {
    Start,
    Middle,
    End,
}

impl SubframeChoice {
    pub fn index(&self, n: usize) -> usize {
        match self {
            SubframeChoice::Start => 1,
            SubframeChoice::Middle => n.div_ceil(2),
            SubframeChoice::End => n,
        }
    }
}

impl std::str::FromStr for SubframeChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(SubframeChoice::Start),
            "middle" => Ok(SubframeChoice::Middle),
            "end" => Ok(SubframeChoice::End),
            other => Err(Error::InvalidConfig(format!(
                "subframe choice '{other}' (expected start|middle|end)"
            ))),
        }
    }
}

/// The generic pose chain: initial pose + two twists -> per-subframe warps
/// against the reference pose, plus the reference pose itself.
fn pose_chain<R: Real>(
    init: (Q<R>, V3<R>),
    xi_start: [R; 6],
    xi_end: [R; 6],
    spec: &ExposureSpec,
) -> (Vec<(Q<R>, V3<R>)>, Vec<(Q<R>, V3<R>)>, (Q<R>, V3<R>)) {
    let split = |xi: [R; 6]| ([xi[0], xi[1], xi[2]], [xi[3], xi[4], xi[5]]);
    let (ws, vs) = split(xi_start);
    let (we, ve) = split(xi_end);
    let pose_start = rigid::pose_compose(rigid::se3_exp(ws, vs), init);
    let pose_end = rigid::pose_compose(rigid::se3_exp(we, ve), init);
    let mut poses = Vec::with_capacity(spec.n);
    for m in 1..=spec.n {
        let s = R::from_f64(spec.fraction(m));
        poses.push(rigid::pose_interp(pose_start, pose_end, s));
    }
    let reference = poses[spec.reference_index - 1];
    let ref_inv = rigid::pose_inverse(reference);
    let warps = poses.iter().map(|p| rigid::pose_compose(ref_inv, *p)).collect();
    (poses, warps, reference)
}

/// Subframe camera poses for one frame. With both twists zero all poses
/// equal the initial pose.
pub fn subframe_poses(
    initial: &Pose,
    start_twist: &Twist,
    end_twist: &Twist,
    spec: &ExposureSpec,
) -> Result<Vec<Pose>> {
    spec.validate()?;
    let rel = se3::exp(end_twist).compose(&se3::exp(start_twist).inverse());
    if rel.rotation.canonicalized().quat()[0].abs() < 5e-7 {
        return Err(Error::InterpolationUndefined);
    }
    let (poses, _, _) = pose_chain(
        (initial.rotation.quat(), initial.translation),
        start_twist.0,
        end_twist.0,
        spec,
    );
    Ok(poses
        .into_iter()
        .map(|(q, t)| Pose::new(Rotation(q), t))
        .collect())
}

/// Camera chain with exact Jacobians w.r.t. the 12 twist components
/// (start twist lanes 0..6, end twist lanes 6..12). Row layout of each
/// Jacobian: (qw, qx, qy, qz, tx, ty, tz).
pub(crate) struct CameraChain {
    pub warps: Vec<AffineWarp>,
    pub reference: Pose,
    pub warp_jac: Vec<[[f64; 12]; 7]>,
    pub ref_jac: [[f64; 12]; 7],
}

pub(crate) fn camera_chain(
    initial: &Pose,
    start_twist: &Twist,
    end_twist: &Twist,
    spec: &ExposureSpec,
) -> CameraChain {
    type D = Dual<12>;
    let init = (
        initial.rotation.quat().map(D::constant),
        initial.translation.map(D::constant),
    );
    let mut xi_s = [D::constant(0.0); 6];
    let mut xi_e = [D::constant(0.0); 6];
    for k in 0..6 {
        xi_s[k] = D::variable(start_twist.0[k], k);
        xi_e[k] = D::variable(end_twist.0[k], 6 + k);
    }
    let (_, warps_d, ref_d) = pose_chain(init, xi_s, xi_e, spec);

    let unpack = |p: &(Q<D>, V3<D>)| {
        let mut value = [0.0f64; 7];
        let mut jac = [[0.0f64; 12]; 7];
        for k in 0..4 {
            value[k] = p.0[k].re;
            jac[k] = p.0[k].eps;
        }
        for k in 0..3 {
            value[4 + k] = p.1[k].re;
            jac[4 + k] = p.1[k].eps;
        }
        (value, jac)
    };

    let mut warps = Vec::with_capacity(spec.n);
    let mut warp_jac = Vec::with_capacity(spec.n);
    for w in &warps_d {
        let (v, j) = unpack(w);
        warps.push(AffineWarp {
            rotation: Rotation([v[0], v[1], v[2], v[3]]),
            translation: [v[4], v[5], v[6]],
        });
        warp_jac.push(j);
    }
    let (rv, rj) = unpack(&ref_d);
    CameraChain {
        warps,
        reference: Pose::new(Rotation([rv[0], rv[1], rv[2], rv[3]]), [rv[4], rv[5], rv[6]]),
        warp_jac,
        ref_jac: rj,
    }
}

/// Exposure-weight chain for subframe m: (rotation, translation) of
/// exp(subframe_weight(w_t, m, N)) with its Jacobian w.r.t. w_t.
pub(crate) struct DeformChain {
    pub rotation: Rotation,
    pub translation: [f64; 3],
    pub jac: [[f64; 6]; 7],
}

pub(crate) fn deform_chain(w_t: &Twist, m: usize, n: usize) -> DeformChain {
    type D = Dual<6>;
    let w: [D; 6] = std::array::from_fn(|k| D::variable(w_t.0[k], k));
    let weight: [D; 6] = if n == 1 {
        [D::constant(0.0); 6]
    } else {
        let u = D::constant((m - 1) as f64 / (n - 1) as f64);
        let half = D::constant(0.5);
        let one = D::constant(1.0);
        std::array::from_fn(|k| {
            (one - u) * (w[k] * half) + u * (-(w[k] * half))
        })
    };
    let (q, t) = rigid::se3_exp(
        [weight[0], weight[1], weight[2]],
        [weight[3], weight[4], weight[5]],
    );
    let mut jac = [[0.0f64; 6]; 7];
    let mut qv = [0.0f64; 4];
    let mut tv = [0.0f64; 3];
    for k in 0..4 {
        qv[k] = q[k].re;
        jac[k] = q[k].eps;
    }
    for k in 0..3 {
        tv[k] = t[k].re;
        jac[4 + k] = t[k].eps;
    }
    DeformChain { rotation: Rotation(qv), translation: tv, jac }
}

/// Recorded forward pass of one frame's blur prediction.
pub struct BlurForward {
    pub image: Image,
    renderers: Vec<DiffRenderer>,
    chain: CameraChain,
    deform_chains: Vec<DeformChain>,
    n_static: usize,
    t: u32,
}

/// Gradients of a frame-level loss w.r.t. every learnable the frame touches.
/// Rotation-quaternion entries are tangent-projected at their leaves.
#[derive(Clone, Debug)]
pub struct FrameGrads {
    pub static_gaussians: Vec<GaussianGrad>,
    pub dynamic_gaussians: Vec<GaussianGrad>,
    pub deform_rotation: [f64; 4],
    pub deform_translation: [f64; 3],
    pub exposure_weight: [f64; 6],
    pub start_twist: [f64; 6],
    pub end_twist: [f64; 6],
}

impl FrameGrads {
    pub fn zeros(n_static: usize, n_dynamic: usize) -> Self {
        FrameGrads {
            static_gaussians: vec![GaussianGrad::default(); n_static],
            dynamic_gaussians: vec![GaussianGrad::default(); n_dynamic],
            deform_rotation: [0.0; 4],
            deform_translation: [0.0; 3],
            exposure_weight: [0.0; 6],
            start_twist: [0.0; 6],
            end_twist: [0.0; 6],
        }
    }

    pub fn add_assign(&mut self, o: &FrameGrads) {
        for (a, b) in self.static_gaussians.iter_mut().zip(&o.static_gaussians) {
            a.add_assign(b);
        }
        for (a, b) in self.dynamic_gaussians.iter_mut().zip(&o.dynamic_gaussians) {
            a.add_assign(b);
        }
        for k in 0..4 {
            self.deform_rotation[k] += o.deform_rotation[k];
        }
        for k in 0..3 {
            self.deform_translation[k] += o.deform_translation[k];
        }
        for k in 0..6 {
            self.exposure_weight[k] += o.exposure_weight[k];
            self.start_twist[k] += o.start_twist[k];
            self.end_twist[k] += o.end_twist[k];
        }
    }
}

/// Forward blur synthesis with recording for [`BlurForward::backward`].
pub fn blur_forward(
    scene: &SceneModel,
    cam: &Camera,
    t: u32,
    spec: &ExposureSpec,
    settings: &RenderSettings,
) -> Result<BlurForward> {
    spec.validate()?;
    let frame = scene.frame(t)?;
    let chain = camera_chain(&frame.camera_init, &frame.start_twist, &frame.end_twist, spec);

    let mut accum = Image::new(cam.width, cam.height);
    let mut renderers = Vec::with_capacity(spec.n);
    let mut deform_chains = Vec::with_capacity(spec.n);
    for m in 1..=spec.n {
        let dchain = deform_chain(&frame.exposure_weight, m, spec.n);
        // combined list: statics first, then deformed dynamics
        let weight = subframe_weight(&frame.exposure_weight, m, spec.n)?;
        let mut gaussians = scene.static_set.clone();
        gaussians.extend(deform_dynamic(scene, t, &weight)?);
        let warped = apply_warp(&gaussians, &chain.warps[m - 1]);
        let mut renderer = DiffRenderer::new(*settings);
        let image = renderer.forward(&warped, cam, &chain.reference)?;
        accum.accumulate(&image, 1.0 / spec.n as f64);
        renderers.push(renderer);
        deform_chains.push(dchain);
    }
    Ok(BlurForward {
        image: accum,
        renderers,
        chain,
        deform_chains,
        n_static: scene.static_set.len(),
        t,
    })
}

impl BlurForward {
    /// Chain an upstream gradient on the averaged blur image back to every
    /// parameter. `scene` must be the model the forward pass ran on.
    pub fn backward(&self, scene: &SceneModel, upstream: &Image) -> Result<FrameGrads> {
        let frame = scene.frame(self.t)?;
        let n = self.renderers.len();
        let mut per_subframe = upstream.clone();
        for v in &mut per_subframe.data {
            *v /= n as f64;
        }

        let mut grads = FrameGrads::zeros(self.n_static, scene.dynamic_canonical.len());
        let mut d_xi = [0.0f64; 12];
        let mut d_ref_pose = [0.0f64; 7];

        let q_a = frame.deform_rotation.quat();
        let e_t = frame.deform_translation;
        let r_a = frame.deform_rotation.matrix();

        for (m_idx, renderer) in self.renderers.iter().enumerate() {
            let rg = renderer.backward(&per_subframe)?;
            let warp = &self.chain.warps[m_idx];
            let q_t = warp.rotation.quat();
            let r_t = warp.rotation.matrix();
            let dchain = &self.deform_chains[m_idx];
            let q_w = dchain.rotation.quat();
            let r_w = dchain.rotation.matrix();
            let t_w = dchain.translation;

            let mut d_warp = [0.0f64; 7];
            let mut d_rt = [[0.0f64; 3]; 3];
            let mut d_dchain = [0.0f64; 7];
            let mut d_rw = [[0.0f64; 3]; 3];

            // statics: input mean was R_T mu + t_T, quat q_T (x) q_i
            for (i, g) in scene.static_set.iter().enumerate() {
                let gg = &rg.gaussians[i];
                // mean
                let mut d_mu = [0.0f64; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        d_rt[r][c] += gg.mean[r] * g.mean[c];
                        d_mu[c] += r_t[r][c] * gg.mean[r];
                    }
                    d_warp[4 + r] += gg.mean[r];
                }
                // quat composition
                let d_qt = mat4_tmul(&quat_right_mat(g.rotation.quat()), gg.rotation);
                let d_qi = mat4_tmul(&quat_left_mat(q_t), gg.rotation);
                for k in 0..4 {
                    d_warp[k] += d_qt[k];
                }
                let out = &mut grads.static_gaussians[i];
                for k in 0..3 {
                    out.mean[k] += d_mu[k];
                    out.log_scale[k] += gg.log_scale[k];
                    out.color_base[k] += gg.color_base[k];
                    for c in 0..3 {
                        out.color_sh1[k][c] += gg.color_sh1[k][c];
                    }
                }
                out.opacity_logit += gg.opacity_logit;
                let proj = project_quat_grad(g.rotation.quat(), d_qi);
                for k in 0..4 {
                    out.rotation[k] += proj[k];
                }
            }

            // dynamics: mean chain mu_w = R_T (R_w (R_A mu + E) + t_w) + t_T,
            // quat chain q_T (x) q_w (x) q_A (x) q_i
            for (i, g) in scene.dynamic_canonical.iter().enumerate() {
                let gg = &rg.gaussians[self.n_static + i];
                let frame_pos = rigid::v3_add(
                    frame.deform_rotation.rotate(g.mean),
                    e_t,
                );
                let def_pos = rigid::v3_add(rigid::quat_rotate(q_w, frame_pos), t_w);

                // warp level
                let mut d_def_pos = [0.0f64; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        d_rt[r][c] += gg.mean[r] * def_pos[c];
                        d_def_pos[c] += r_t[r][c] * gg.mean[r];
                    }
                    d_warp[4 + r] += gg.mean[r];
                }
                let q_rest = rigid::quat_mul(q_w, rigid::quat_mul(q_a, g.rotation.quat()));
                let d_qt = mat4_tmul(&quat_right_mat(q_rest), gg.rotation);
                let d_qrest = mat4_tmul(&quat_left_mat(q_t), gg.rotation);
                for k in 0..4 {
                    d_warp[k] += d_qt[k];
                }

                // exposure deformation level
                let mut d_frame_pos = [0.0f64; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        d_rw[r][c] += d_def_pos[r] * frame_pos[c];
                        d_frame_pos[c] += r_w[r][c] * d_def_pos[r];
                    }
                    d_dchain[4 + r] += d_def_pos[r];
                }
                let q_ai = rigid::quat_mul(q_a, g.rotation.quat());
                let d_qw = mat4_tmul(&quat_right_mat(q_ai), d_qrest);
                let d_qai = mat4_tmul(&quat_left_mat(q_w), d_qrest);
                for k in 0..4 {
                    d_dchain[k] += d_qw[k];
                }

                // frame deformation level
                let mut d_mu = [0.0f64; 3];
                let mut d_ra = [[0.0f64; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        d_ra[r][c] += d_frame_pos[r] * g.mean[c];
                        d_mu[c] += r_a[r][c] * d_frame_pos[r];
                    }
                    grads.deform_translation[r] += d_frame_pos[r];
                }
                let d_qa = mat4_tmul(&quat_right_mat(g.rotation.quat()), d_qai);
                let d_qi = mat4_tmul(&quat_left_mat(q_a), d_qai);
                let d_qa_total = {
                    let from_mat = quat_grad_from_matrix_grad(q_a, &d_ra);
                    [
                        d_qa[0] + from_mat[0],
                        d_qa[1] + from_mat[1],
                        d_qa[2] + from_mat[2],
                        d_qa[3] + from_mat[3],
                    ]
                };
                for k in 0..4 {
                    grads.deform_rotation[k] += d_qa_total[k];
                }

                let out = &mut grads.dynamic_gaussians[i];
                for k in 0..3 {
                    out.mean[k] += d_mu[k];
                    out.log_scale[k] += gg.log_scale[k];
                    out.color_base[k] += gg.color_base[k];
                    for c in 0..3 {
                        out.color_sh1[k][c] += gg.color_sh1[k][c];
                    }
                }
                out.opacity_logit += gg.opacity_logit;
                let proj = project_quat_grad(g.rotation.quat(), d_qi);
                for k in 0..4 {
                    out.rotation[k] += proj[k];
                }
            }

            // rotation-matrix adjoints into the warp / deformation quats
            let d_qt_mat = quat_grad_from_matrix_grad(q_t, &d_rt);
            for k in 0..4 {
                d_warp[k] += d_qt_mat[k];
            }
            let d_qw_mat = quat_grad_from_matrix_grad(q_w, &d_rw);
            for k in 0..4 {
                d_dchain[k] += d_qw_mat[k];
            }

            // contract with the chain Jacobians
            let wj = &self.chain.warp_jac[m_idx];
            for out in 0..7 {
                for k in 0..12 {
                    d_xi[k] += d_warp[out] * wj[out][k];
                }
            }
            for out in 0..7 {
                for k in 0..6 {
                    grads.exposure_weight[k] += d_dchain[out] * dchain.jac[out][k];
                }
            }

            // rasterizing-pose adjoint (same reference pose for every
            // subframe)
            for k in 0..4 {
                d_ref_pose[k] += rg.pose_rotation[k];
            }
            for k in 0..3 {
                d_ref_pose[4 + k] += rg.pose_translation[k];
            }
        }

        for out in 0..7 {
            for k in 0..12 {
                d_xi[k] += d_ref_pose[out] * self.chain.ref_jac[out][k];
            }
        }
        for k in 0..6 {
            grads.start_twist[k] = d_xi[k];
            grads.end_twist[k] = d_xi[6 + k];
        }
        grads.deform_rotation = project_quat_grad(q_a, grads.deform_rotation);
        Ok(grads)
    }
}

/// Plain (non-recording) blur synthesis: the arithmetic mean of the N
/// subframe renders, accumulated in subframe order.
pub fn synthesize_blur(
    scene: &SceneModel,
    cam: &Camera,
    t: u32,
    spec: &ExposureSpec,
    settings: &RenderSettings,
) -> Result<Image> {
    spec.validate()?;
    let frame = scene.frame(t)?;
    let chain = camera_chain(&frame.camera_init, &frame.start_twist, &frame.end_twist, spec);
    let mut accum = Image::new(cam.width, cam.height);
    for m in 1..=spec.n {
        let weight = subframe_weight(&frame.exposure_weight, m, spec.n)?;
        let mut gaussians = scene.static_set.clone();
        gaussians.extend(deform_dynamic(scene, t, &weight)?);
        let warped = apply_warp(&gaussians, &chain.warps[m - 1]);
        let image = crate::render::render(&warped, cam, &chain.reference, settings)?;
        accum.accumulate(&image, 1.0 / spec.n as f64);
    }
    Ok(accum)
}

/// Sharp render of a single chosen subframe (no blur averaging). The chosen
/// subframe is rendered directly from its own pose.
pub fn render_sharp(
    scene: &SceneModel,
    cam: &Camera,
    t: u32,
    spec: &ExposureSpec,
    choice: SubframeChoice,
    settings: &RenderSettings,
) -> Result<Image> {
    spec.validate()?;
    let frame = scene.frame(t)?;
    let m = choice.index(spec.n);
    let poses = subframe_poses(&frame.camera_init, &frame.start_twist, &frame.end_twist, spec)?;
    let weight = subframe_weight(&frame.exposure_weight, m, spec.n)?;
    let mut gaussians = scene.static_set.clone();
    gaussians.extend(deform_dynamic(scene, t, &weight)?);
    crate::render::render(&gaussians, cam, &poses[m - 1], settings)
}
