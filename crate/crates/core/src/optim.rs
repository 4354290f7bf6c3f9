//! Losses, Adam updates, the three-stage schedule, and the training loop.
//!
//! Stage gating follows the alternating scheme: scene parameters only while
//! `epoch < E1`, camera twists only while `E1 <= epoch < E2`, then both.
//! Excluded groups are not touched at all (no moment decay either), so their
//! bits are stable across the stage.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blur::{blur_forward, ExposureSpec, FrameGrads};
use crate::data_synth::Dataset;
use crate::err::{Error, Result};
use crate::img::Image;
use crate::metrics::pose_error;
use crate::render::{Camera, DiffRenderer, RenderSettings};
use crate::scene::{logit, FrameParams, GaussianPrimitive, SceneModel};
use crate::se3::{project_quat_grad, Pose, Rotation, Twist};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub means: f64,
    pub log_scales: f64,
    pub rotations: f64,
    pub opacities: f64,
    pub colors: f64,
    pub twists: f64,
    pub deformation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            means: 1.6e-3,
            log_scales: 5e-3,
            rotations: 1e-3,
            opacities: 5e-2,
            colors: 2.5e-3,
            twists: 1e-3,
            deformation: 1e-3,
        }
    }
}

/// Epoch boundaries of the three stages plus per-group learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub e1: usize,
    pub e2: usize,
    pub emax: usize,
    pub rates: LearningRates,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    SceneOnly,
    PoseOnly,
    Joint,
}

impl StageSchedule {
    /// E1 = 0.4 Emax, E2 = 0.7 Emax.
    pub fn with_default_bounds(emax: usize, rates: LearningRates) -> Self {
        StageSchedule {
            e1: (emax as f64 * 0.4).round() as usize,
            e2: (emax as f64 * 0.7).round() as usize,
            emax,
            rates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e1 > self.e2 || self.e2 > self.emax {
            return Err(Error::InvalidConfig(format!(
                "stage bounds must satisfy E1 <= E2 <= Emax, got {} {} {}",
                self.e1, self.e2, self.emax
            )));
        }
        Ok(())
    }

    pub fn stage(&self, epoch: usize) -> Stage {
        if epoch < self.e1 {
            Stage::SceneOnly
        } else if epoch < self.e2 {
            Stage::PoseOnly
        } else {
            Stage::Joint
        }
    }
}

// ---------------------------------------------------------------------------
// losses

fn mse_and_upstream(prediction: &Image, target: &Image) -> Result<(f64, Image)> {
    let loss = prediction.mse(target)?;
    let scale = 2.0 / prediction.data.len() as f64;
    let mut upstream = prediction.clone();
    for (u, t) in upstream.data.iter_mut().zip(&target.data) {
        *u = (*u - *t) * scale;
    }
    Ok((loss, upstream))
}

/// Blur reconstruction loss: MSE between the synthesized blurry image and
/// the observation, with gradients for every parameter the frame touches.
pub fn loss_dym(
    scene: &SceneModel,
    cam: &Camera,
    t: u32,
    spec: &ExposureSpec,
    observed: &Image,
    settings: &RenderSettings,
) -> Result<(f64, FrameGrads)> {
    let fwd = blur_forward(scene, cam, t, spec, settings)?;
    let (loss, upstream) = mse_and_upstream(&fwd.image, observed)?;
    let grads = fwd.backward(scene, &upstream)?;
    Ok((loss, grads))
}

/// Static-background loss: MSE between the sharp static-only render at the
/// frame's (estimated) pose and the static target. Gradients reach only the
/// static set and the camera twists.
pub fn loss_static(
    scene: &SceneModel,
    cam: &Camera,
    t: u32,
    spec: &ExposureSpec,
    target: &Image,
    settings: &RenderSettings,
) -> Result<(f64, FrameGrads)> {
    let frame = scene.frame(t)?;
    let chain =
        crate::blur::camera_chain(&frame.camera_init, &frame.start_twist, &frame.end_twist, spec);
    let mut renderer = DiffRenderer::new(*settings);
    let image = renderer.forward(&scene.static_set, cam, &chain.reference)?;
    let (loss, upstream) = mse_and_upstream(&image, target)?;
    let rg = renderer.backward(&upstream)?;

    let mut grads = FrameGrads::zeros(scene.static_set.len(), scene.dynamic_canonical.len());
    for (out, (gg, g)) in grads
        .static_gaussians
        .iter_mut()
        .zip(rg.gaussians.iter().zip(&scene.static_set))
    {
        *out = *gg;
        out.rotation = project_quat_grad(g.rotation.quat(), gg.rotation);
    }
    let mut d_ref = [0.0f64; 7];
    d_ref[..4].copy_from_slice(&rg.pose_rotation);
    d_ref[4..].copy_from_slice(&rg.pose_translation);
    for out in 0..7 {
        for k in 0..6 {
            grads.start_twist[k] += d_ref[out] * chain.ref_jac[out][k];
            grads.end_twist[k] += d_ref[out] * chain.ref_jac[out][6 + k];
        }
    }
    Ok((loss, grads))
}

/// Both terms of the objective with combined gradients.
pub struct FrameLoss {
    pub dym: f64,
    pub stat: f64,
    pub total: f64,
    pub grads: FrameGrads,
}

pub fn loss_total(
    scene: &SceneModel,
    cam: &Camera,
    t: u32,
    spec: &ExposureSpec,
    observed: &Image,
    static_target: &Image,
    settings: &RenderSettings,
) -> Result<FrameLoss> {
    let (dym, mut grads) = loss_dym(scene, cam, t, spec, observed, settings)?;
    let (stat, grads_static) = loss_static(scene, cam, t, spec, static_target, settings)?;
    grads.add_assign(&grads_static);
    Ok(FrameLoss { dym, stat, total: dym + stat, grads })
}

// ---------------------------------------------------------------------------
// optimizer

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moments and step counter for one flat parameter block.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AdamBuf {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamBuf {
    fn new(n: usize) -> Self {
        AdamBuf { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64, h: &AdamParams) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * grads[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + h.epsilon);
        }
    }
}

/// Per-frame moment buffers; frames are updated sparsely (only the frame in
/// the current step), each with its own step counter.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FrameOptState {
    pub deform_rot: AdamBuf,
    pub deform_trans: AdamBuf,
    pub exposure: AdamBuf,
    pub twists: AdamBuf,
}

impl FrameOptState {
    fn new() -> Self {
        FrameOptState {
            deform_rot: AdamBuf::new(4),
            deform_trans: AdamBuf::new(3),
            exposure: AdamBuf::new(6),
            twists: AdamBuf::new(12),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamParams,
    pub(crate) means: AdamBuf,
    pub(crate) log_scales: AdamBuf,
    pub(crate) rotations: AdamBuf,
    pub(crate) opacities: AdamBuf,
    pub(crate) colors: AdamBuf,
    pub(crate) frames: BTreeMap<u32, FrameOptState>,
}

impl OptimizerState {
    pub fn new(scene: &SceneModel, hyper: AdamParams) -> Self {
        let n = scene.static_set.len() + scene.dynamic_canonical.len();
        let frames = scene.timestamps().map(|t| (t, FrameOptState::new())).collect();
        OptimizerState {
            hyper,
            means: AdamBuf::new(3 * n),
            log_scales: AdamBuf::new(3 * n),
            rotations: AdamBuf::new(4 * n),
            opacities: AdamBuf::new(n),
            colors: AdamBuf::new(12 * n),
            frames,
        }
    }
}

fn gaussians_mut(scene: &mut SceneModel) -> Vec<&mut GaussianPrimitive> {
    scene
        .static_set
        .iter_mut()
        .chain(scene.dynamic_canonical.iter_mut())
        .collect()
}

fn flatten_gaussian_grads<'a>(
    grads: &'a FrameGrads,
) -> impl Iterator<Item = &'a crate::render::GaussianGrad> {
    grads.static_gaussians.iter().chain(grads.dynamic_gaussians.iter())
}

/// One Adam step on the scene parameter groups.
fn step_scene(
    scene: &mut SceneModel,
    state: &mut OptimizerState,
    rates: &LearningRates,
    t: u32,
    grads: &FrameGrads,
) -> Result<()> {
    let hyper = state.hyper;
    let mut gaussians = gaussians_mut(scene);
    let n = gaussians.len();

    let mut buf = vec![0.0f64; 3 * n];
    let mut gbuf = vec![0.0f64; 3 * n];
    for (i, (g, gg)) in gaussians.iter().zip(flatten_gaussian_grads(grads)).enumerate() {
        buf[3 * i..3 * i + 3].copy_from_slice(&g.mean);
        gbuf[3 * i..3 * i + 3].copy_from_slice(&gg.mean);
    }
    state.means.apply(&mut buf, &gbuf, rates.means, &hyper);
    for (i, g) in gaussians.iter_mut().enumerate() {
        g.mean.copy_from_slice(&buf[3 * i..3 * i + 3]);
    }

    for (i, (g, gg)) in gaussians.iter().zip(flatten_gaussian_grads(grads)).enumerate() {
        buf[3 * i..3 * i + 3].copy_from_slice(&g.log_scale);
        gbuf[3 * i..3 * i + 3].copy_from_slice(&gg.log_scale);
    }
    state.log_scales.apply(&mut buf, &gbuf, rates.log_scales, &hyper);
    for (i, g) in gaussians.iter_mut().enumerate() {
        g.log_scale.copy_from_slice(&buf[3 * i..3 * i + 3]);
        g.clamp_scales();
    }

    let mut qbuf = vec![0.0f64; 4 * n];
    let mut qgbuf = vec![0.0f64; 4 * n];
    for (i, (g, gg)) in gaussians.iter().zip(flatten_gaussian_grads(grads)).enumerate() {
        qbuf[4 * i..4 * i + 4].copy_from_slice(&g.rotation.quat());
        qgbuf[4 * i..4 * i + 4].copy_from_slice(&gg.rotation);
    }
    state.rotations.apply(&mut qbuf, &qgbuf, rates.rotations, &hyper);
    for (i, g) in gaussians.iter_mut().enumerate() {
        let q: [f64; 4] = qbuf[4 * i..4 * i + 4].try_into().unwrap();
        g.rotation = renormalize_with_moments(q, &mut state.rotations, 4 * i);
    }

    let mut obuf = vec![0.0f64; n];
    let mut ogbuf = vec![0.0f64; n];
    for (i, (g, gg)) in gaussians.iter().zip(flatten_gaussian_grads(grads)).enumerate() {
        obuf[i] = g.opacity_logit;
        ogbuf[i] = gg.opacity_logit;
    }
    state.opacities.apply(&mut obuf, &ogbuf, rates.opacities, &hyper);
    for (i, g) in gaussians.iter_mut().enumerate() {
        g.opacity_logit = obuf[i];
    }

    let mut cbuf = vec![0.0f64; 12 * n];
    let mut cgbuf = vec![0.0f64; 12 * n];
    for (i, (g, gg)) in gaussians.iter().zip(flatten_gaussian_grads(grads)).enumerate() {
        cbuf[12 * i..12 * i + 3].copy_from_slice(&g.color_base);
        cgbuf[12 * i..12 * i + 3].copy_from_slice(&gg.color_base);
        for k in 0..3 {
            cbuf[12 * i + 3 + 3 * k..12 * i + 6 + 3 * k].copy_from_slice(&g.color_sh1[k]);
            cgbuf[12 * i + 3 + 3 * k..12 * i + 6 + 3 * k].copy_from_slice(&gg.color_sh1[k]);
        }
    }
    state.colors.apply(&mut cbuf, &cgbuf, rates.colors, &hyper);
    for (i, g) in gaussians.iter_mut().enumerate() {
        g.color_base.copy_from_slice(&cbuf[12 * i..12 * i + 3]);
        for k in 0..3 {
            g.color_sh1[k].copy_from_slice(&cbuf[12 * i + 3 + 3 * k..12 * i + 6 + 3 * k]);
        }
    }
    drop(gaussians);

    // per-frame deformation groups
    let fstate = state.frames.get_mut(&t).ok_or(Error::UnknownTimestamp(t))?;
    let frame = scene.frame_mut(t)?;

    let mut q = frame.deform_rotation.quat();
    fstate.deform_rot.apply(&mut q, &grads.deform_rotation, rates.deformation, &hyper);
    frame.deform_rotation = renormalize_with_moments(q, &mut fstate.deform_rot, 0);

    fstate.deform_trans.apply(
        &mut frame.deform_translation,
        &grads.deform_translation,
        rates.deformation,
        &hyper,
    );
    fstate.exposure.apply(
        &mut frame.exposure_weight.0,
        &grads.exposure_weight,
        rates.deformation,
        &hyper,
    );
    Ok(())
}

/// One Adam step on the camera twists of frame `t`.
fn step_camera(
    scene: &mut SceneModel,
    state: &mut OptimizerState,
    rates: &LearningRates,
    t: u32,
    grads: &FrameGrads,
) -> Result<()> {
    let hyper = state.hyper;
    let fstate = state.frames.get_mut(&t).ok_or(Error::UnknownTimestamp(t))?;
    let frame = scene.frame_mut(t)?;
    let mut buf = [0.0f64; 12];
    let mut gbuf = [0.0f64; 12];
    buf[..6].copy_from_slice(&frame.start_twist.0);
    buf[6..].copy_from_slice(&frame.end_twist.0);
    gbuf[..6].copy_from_slice(&grads.start_twist);
    gbuf[6..].copy_from_slice(&grads.end_twist);
    fstate.twists.apply(&mut buf, &gbuf, rates.twists, &hyper);
    frame.start_twist.0.copy_from_slice(&buf[..6]);
    frame.end_twist.0.copy_from_slice(&buf[6..]);
    Ok(())
}

/// Renormalize a quaternion after an additive update and resolve the double
/// cover. Flipping the sign of the stored quaternion negates all future
/// gradients, so the first moment flips with it; the second moment is
/// sign-invariant.
fn renormalize_with_moments(q: [f64; 4], buf: &mut AdamBuf, offset: usize) -> Rotation {
    let mut r = Rotation::from_quat(q);
    if r.quat()[0] < 0.0 {
        r = Rotation([-r.quat()[0], -r.quat()[1], -r.quat()[2], -r.quat()[3]]);
        for k in 0..4 {
            buf.m[offset + k] = -buf.m[offset + k];
        }
    }
    r
}

/// One optimization step on one timestamp, gated by the stage schedule.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    scene: &mut SceneModel,
    state: &mut OptimizerState,
    schedule: &StageSchedule,
    epoch: usize,
    t: u32,
    cam: &Camera,
    spec: &ExposureSpec,
    observed: &Image,
    static_target: &Image,
    settings: &RenderSettings,
) -> Result<FrameLoss> {
    let loss = loss_total(scene, cam, t, spec, observed, static_target, settings)?;
    match schedule.stage(epoch) {
        Stage::SceneOnly => {
            step_scene(scene, state, &schedule.rates, t, &loss.grads)?;
        }
        Stage::PoseOnly => {
            step_camera(scene, state, &schedule.rates, t, &loss.grads)?;
        }
        Stage::Joint => {
            step_scene(scene, state, &schedule.rates, t, &loss.grads)?;
            step_camera(scene, state, &schedule.rates, t, &loss.grads)?;
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// trainer

/// Scene initialization knobs: Gaussians are seeded from the dataset's init
/// point cloud (the stand-in for an SfM seed cloud).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub initial_opacity: f64,
    /// Initial per-axis scale as a fraction of the scene radius.
    pub initial_scale_fraction: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { initial_opacity: 0.5, initial_scale_fraction: 0.04 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub version: u32,
    pub n_subframes: usize,
    pub emax: usize,
    /// Stage bounds; `None` uses 0.4/0.7 of Emax.
    pub e1: Option<usize>,
    pub e2: Option<usize>,
    pub rates: LearningRates,
    pub adam: AdamParams,
    pub seed: u64,
    pub background: [f64; 3],
    pub init: InitConfig,
}

pub const TRAIN_CONFIG_VERSION: u32 = 1;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: TRAIN_CONFIG_VERSION,
            n_subframes: 7,
            emax: 200,
            e1: None,
            e2: None,
            rates: LearningRates::default(),
            adam: AdamParams::default(),
            seed: 0,
            background: [0.0, 0.0, 0.0],
            init: InitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config json: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn schedule(&self) -> StageSchedule {
        let mut s = StageSchedule::with_default_bounds(self.emax, self.rates);
        if let Some(e1) = self.e1 {
            s.e1 = e1;
        }
        if let Some(e2) = self.e2 {
            s.e2 = e2;
        }
        s
    }

    pub fn settings(&self) -> RenderSettings {
        RenderSettings { background: self.background, ..RenderSettings::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != TRAIN_CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} (expected {TRAIN_CONFIG_VERSION})",
                self.version
            )));
        }
        if self.n_subframes == 0 {
            return Err(Error::InvalidConfig("n_subframes must be >= 1".into()));
        }
        self.schedule().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_dym: f64,
    pub loss_static: f64,
    pub loss_total: f64,
    pub rot_err_deg: f64,
    pub trans_err: f64,
}

pub struct Trainer {
    pub scene: SceneModel,
    pub state: OptimizerState,
    pub config: TrainConfig,
    pub cam: Camera,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    /// Initialize a fresh scene from the dataset's init point cloud and
    /// noisy poses.
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let scene = init_scene(dataset, &config)?;
        let state = OptimizerState::new(&scene, config.adam);
        Ok(Trainer {
            scene,
            state,
            config,
            cam: dataset.camera,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Rebuild a trainer from checkpointed parts.
    pub fn resume(
        scene: SceneModel,
        state: OptimizerState,
        config: TrainConfig,
        cam: Camera,
        epoch: usize,
        history: Vec<EpochStats>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { scene, state, config, cam, epoch, history })
    }

    pub fn exposure_spec(&self, delta_t: f64) -> ExposureSpec {
        ExposureSpec::with_middle_reference(self.config.n_subframes, delta_t)
    }

    /// Current estimate of frame t's reference-subframe pose.
    pub fn estimated_pose(&self, t: u32) -> Result<Pose> {
        let frame = self.scene.frame(t)?;
        estimated_pose_of(frame, self.config.n_subframes)
    }

    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochStats> {
        let schedule = self.config.schedule();
        let settings = self.config.settings();
        let mut order: Vec<usize> = (0..dataset.frames.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config.seed ^ (self.epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut rng);

        let mut sum_dym = 0.0;
        let mut sum_stat = 0.0;
        for &idx in &order {
            let frame = &dataset.frames[idx];
            let spec = self.exposure_spec(frame.delta_t);
            let loss = train_step(
                &mut self.scene,
                &mut self.state,
                &schedule,
                self.epoch,
                frame.t,
                &self.cam,
                &spec,
                &frame.blurry,
                &frame.static_gt,
                &settings,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: self.epoch, frame: frame.t });
            }
            sum_dym += loss.dym;
            sum_stat += loss.stat;
        }

        let nf = dataset.frames.len() as f64;
        let (rot_err, trans_err) = self.pose_errors(dataset)?;
        let stats = EpochStats {
            epoch: self.epoch,
            loss_dym: sum_dym / nf,
            loss_static: sum_stat / nf,
            loss_total: (sum_dym + sum_stat) / nf,
            rot_err_deg: rot_err,
            trans_err,
        };
        self.history.push(stats);
        self.epoch += 1;
        Ok(stats)
    }

    /// Mean pose error of the current estimates against ground truth.
    pub fn pose_errors(&self, dataset: &Dataset) -> Result<(f64, f64)> {
        let mut rot = 0.0;
        let mut trans = 0.0;
        for frame in &dataset.frames {
            let est = self.estimated_pose(frame.t)?;
            let (r, d) = pose_error(&est, &frame.gt_pose);
            rot += r;
            trans += d;
        }
        let n = dataset.frames.len() as f64;
        Ok((rot / n, trans / n))
    }

    /// Run epochs until Emax, invoking the callback after each epoch (for
    /// checkpointing at stage boundaries).
    pub fn train_to_end(
        &mut self,
        dataset: &Dataset,
        mut on_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.config.emax {
            let stats = self.run_epoch(dataset)?;
            on_epoch(self, &stats)?;
        }
        Ok(())
    }
}

pub(crate) fn estimated_pose_of(frame: &FrameParams, n_subframes: usize) -> Result<Pose> {
    let spec = ExposureSpec::with_middle_reference(n_subframes, 1.0);
    let poses =
        crate::blur::subframe_poses(&frame.camera_init, &frame.start_twist, &frame.end_twist, &spec)?;
    Ok(poses[spec.reference_index - 1])
}

fn init_scene(dataset: &Dataset, config: &TrainConfig) -> Result<SceneModel> {
    if dataset.init_points.is_empty() {
        return Err(Error::InvalidConfig("dataset has no init points".into()));
    }
    let log_scale = (dataset.scene_radius * config.init.initial_scale_fraction).ln();
    let make = |p: &crate::data_synth::InitPoint| GaussianPrimitive {
        mean: p.position,
        log_scale: [log_scale; 3],
        rotation: Rotation::identity(),
        opacity_logit: logit(config.init.initial_opacity),
        color_base: p.color,
        color_sh1: [[0.0; 3]; 3],
    };
    let static_set: Vec<_> =
        dataset.init_points.iter().filter(|p| !p.dynamic).map(make).collect();
    let dynamic_set: Vec<_> =
        dataset.init_points.iter().filter(|p| p.dynamic).map(make).collect();
    let mut scene = SceneModel::new(static_set, dynamic_set);
    for frame in &dataset.frames {
        scene.frames.insert(frame.t, FrameParams::at_rest(frame.init_pose));
    }
    Ok(scene)
}

// ---------------------------------------------------------------------------
// gradient checking

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamClass {
    Means,
    LogScales,
    Rotations,
    Opacities,
    Colors,
    CameraTwists,
    Deformation,
    ExposureWeights,
}

impl ParamClass {
    pub const ALL: [ParamClass; 8] = [
        ParamClass::Means,
        ParamClass::LogScales,
        ParamClass::Rotations,
        ParamClass::Opacities,
        ParamClass::Colors,
        ParamClass::CameraTwists,
        ParamClass::Deformation,
        ParamClass::ExposureWeights,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamClass::Means => "means",
            ParamClass::LogScales => "log_scales",
            ParamClass::Rotations => "rotations",
            ParamClass::Opacities => "opacities",
            ParamClass::Colors => "colors",
            ParamClass::CameraTwists => "camera_twists",
            ParamClass::Deformation => "deformation",
            ParamClass::ExposureWeights => "exposure_weights",
        }
    }
}

impl std::str::FromStr for ParamClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamClass::ALL
            .iter()
            .find(|c| c.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter class '{s}'")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckRow {
    pub class: ParamClass,
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub fd_norm: f64,
    pub pass: bool,
}

pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const FD_STEP: f64 = 1e-4;

/// Number of scalar parameters per class in a gradcheck fixture.
fn class_len(scene: &SceneModel, class: ParamClass) -> usize {
    let n = scene.static_set.len() + scene.dynamic_canonical.len();
    match class {
        ParamClass::Means | ParamClass::LogScales => 3 * n,
        ParamClass::Rotations => 4 * n,
        ParamClass::Opacities => n,
        ParamClass::Colors => 12 * n,
        ParamClass::CameraTwists => 12,
        ParamClass::Deformation => 7,
        ParamClass::ExposureWeights => 6,
    }
}

fn gaussian_at(scene: &mut SceneModel, i: usize) -> &mut GaussianPrimitive {
    let ns = scene.static_set.len();
    if i < ns {
        &mut scene.static_set[i]
    } else {
        &mut scene.dynamic_canonical[i - ns]
    }
}

/// Read or nudge one scalar parameter. Quaternion classes renormalize after
/// writing, matching the retraction the optimizer applies; finite
/// differences therefore probe the same manifold the analytic gradients are
/// projected onto.
fn param_access(
    scene: &mut SceneModel,
    t: u32,
    class: ParamClass,
    index: usize,
    delta: Option<f64>,
) -> f64 {
    match class {
        ParamClass::Means => {
            let g = gaussian_at(scene, index / 3);
            if let Some(d) = delta {
                g.mean[index % 3] += d;
            }
            g.mean[index % 3]
        }
        ParamClass::LogScales => {
            let g = gaussian_at(scene, index / 3);
            if let Some(d) = delta {
                g.log_scale[index % 3] += d;
            }
            g.log_scale[index % 3]
        }
        ParamClass::Rotations => {
            let g = gaussian_at(scene, index / 4);
            let mut q = g.rotation.quat();
            if let Some(d) = delta {
                q[index % 4] += d;
                g.rotation = Rotation::from_quat(q);
            }
            q[index % 4]
        }
        ParamClass::Opacities => {
            let g = gaussian_at(scene, index);
            if let Some(d) = delta {
                g.opacity_logit += d;
            }
            g.opacity_logit
        }
        ParamClass::Colors => {
            let g = gaussian_at(scene, index / 12);
            let k = index % 12;
            if k < 3 {
                if let Some(d) = delta {
                    g.color_base[k] += d;
                }
                g.color_base[k]
            } else {
                let row = (k - 3) / 3;
                let col = (k - 3) % 3;
                if let Some(d) = delta {
                    g.color_sh1[row][col] += d;
                }
                g.color_sh1[row][col]
            }
        }
        ParamClass::CameraTwists => {
            let frame = scene.frames.get_mut(&t).unwrap();
            let tw = if index < 6 { &mut frame.start_twist } else { &mut frame.end_twist };
            if let Some(d) = delta {
                tw.0[index % 6] += d;
            }
            tw.0[index % 6]
        }
        ParamClass::Deformation => {
            let frame = scene.frames.get_mut(&t).unwrap();
            if index < 4 {
                let mut q = frame.deform_rotation.quat();
                if let Some(d) = delta {
                    q[index] += d;
                    frame.deform_rotation = Rotation::from_quat(q);
                }
                q[index]
            } else {
                if let Some(d) = delta {
                    frame.deform_translation[index - 4] += d;
                }
                frame.deform_translation[index - 4]
            }
        }
        ParamClass::ExposureWeights => {
            let frame = scene.frames.get_mut(&t).unwrap();
            if let Some(d) = delta {
                frame.exposure_weight.0[index] += d;
            }
            frame.exposure_weight.0[index]
        }
    }
}

fn flatten_class_grads(grads: &FrameGrads, class: ParamClass) -> Vec<f64> {
    let mut out = Vec::new();
    let per_gaussian = |out: &mut Vec<f64>, f: &dyn Fn(&crate::render::GaussianGrad, &mut Vec<f64>)| {
        for g in grads.static_gaussians.iter().chain(&grads.dynamic_gaussians) {
            f(g, out);
        }
    };
    match class {
        ParamClass::Means => per_gaussian(&mut out, &|g, o| o.extend_from_slice(&g.mean)),
        ParamClass::LogScales => per_gaussian(&mut out, &|g, o| o.extend_from_slice(&g.log_scale)),
        ParamClass::Rotations => per_gaussian(&mut out, &|g, o| o.extend_from_slice(&g.rotation)),
        ParamClass::Opacities => per_gaussian(&mut out, &|g, o| o.push(g.opacity_logit)),
        ParamClass::Colors => per_gaussian(&mut out, &|g, o| {
            o.extend_from_slice(&g.color_base);
            for k in 0..3 {
                o.extend_from_slice(&g.color_sh1[k]);
            }
        }),
        ParamClass::CameraTwists => {
            out.extend_from_slice(&grads.start_twist);
            out.extend_from_slice(&grads.end_twist);
        }
        ParamClass::Deformation => {
            out.extend_from_slice(&grads.deform_rotation);
            out.extend_from_slice(&grads.deform_translation);
        }
        ParamClass::ExposureWeights => out.extend_from_slice(&grads.exposure_weight),
    }
    out
}

/// A small fully-exercised fixture: static + dynamic Gaussians, nonzero
/// deformation, exposure weight, and camera twists, with targets rendered
/// from a jittered copy so every residual is nonzero.
pub struct GradCheckFixture {
    pub scene: SceneModel,
    pub cam: Camera,
    pub spec: ExposureSpec,
    pub observed: Image,
    pub static_target: Image,
    pub settings: RenderSettings,
    pub t: u32,
}

pub fn gradcheck_fixture(n_gaussians: usize, image_size: usize, seed: u64) -> Result<GradCheckFixture> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera {
        fx: image_size as f64 * 1.2,
        fy: image_size as f64 * 1.1,
        cx: image_size as f64 / 2.0,
        cy: image_size as f64 / 2.0,
        width: image_size,
        height: image_size,
        near: 0.1,
    };
    let n_dynamic = (n_gaussians / 2).max(1);
    let n_static = n_gaussians - n_dynamic;
    // depths live in disjoint slots: finite differences must not flip the
    // blending order (the sort is a genuine non-differentiability)
    let mut depth_slot = 0usize;
    let mut make = |rng: &mut ChaCha8Rng| GaussianPrimitive {
        mean: [
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            {
                depth_slot += 1;
                1.8 + 0.35 * depth_slot as f64 + rng.gen_range(0.0..0.1)
            },
        ],
        log_scale: [
            rng.gen_range(-2.2..-1.6),
            rng.gen_range(-2.2..-1.6),
            rng.gen_range(-2.2..-1.6),
        ],
        rotation: Rotation::from_axis_angle(
            [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            rng.gen_range(-1.0..1.0),
        )
        .canonicalized(),
        opacity_logit: rng.gen_range(-0.5..0.8),
        color_base: [
            rng.gen_range(0.25..0.75),
            rng.gen_range(0.25..0.75),
            rng.gen_range(0.25..0.75),
        ],
        color_sh1: [
            [rng.gen_range(-0.05..0.05); 3],
            [rng.gen_range(-0.05..0.05); 3],
            [rng.gen_range(-0.05..0.05); 3],
        ],
    };
    let static_set: Vec<_> = (0..n_static).map(|_| make(&mut rng)).collect();
    let dynamic_set: Vec<_> = (0..n_dynamic).map(|_| make(&mut rng)).collect();
    drop(make);
    let mut scene = SceneModel::new(static_set, dynamic_set);
    let t = 0u32;
    let frame = FrameParams {
        deform_rotation: Rotation::from_axis_angle([0.3, -0.2, 0.93], 0.08),
        deform_translation: [0.02, -0.03, 0.01],
        exposure_weight: Twist([0.01, -0.02, 0.015, 0.02, -0.01, 0.005]),
        camera_init: Pose::identity(),
        start_twist: Twist([0.004, -0.006, 0.005, 0.01, -0.008, 0.006]),
        end_twist: Twist([-0.005, 0.004, -0.003, -0.012, 0.009, -0.004]),
    };
    scene.frames.insert(t, frame);

    let settings = RenderSettings {
        background: [0.12, 0.1, 0.14],
        ..RenderSettings::smooth_for_gradcheck()
    };
    let spec = ExposureSpec::with_middle_reference(3, 0.8);

    // targets from a jittered copy of the scene so residuals are nonzero
    let mut jittered = scene.clone();
    for g in gaussians_mut(&mut jittered) {
        for k in 0..3 {
            g.mean[k] += rng.gen_range(-0.03..0.03);
            g.color_base[k] = (g.color_base[k] + rng.gen_range(-0.08..0.08)).clamp(0.05, 0.95);
        }
    }
    let observed = crate::blur::synthesize_blur(&jittered, &cam, t, &spec, &settings)?;
    let static_target =
        crate::render::render(&jittered.static_set, &cam, &Pose::identity(), &settings)?;
    Ok(GradCheckFixture { scene, cam, spec, observed, static_target, settings, t })
}

/// Compare analytic gradients against central finite differences for every
/// parameter class. `corrupt` deliberately scales one class's analytic
/// gradient, as a negative control for the harness itself.
pub fn run_gradcheck(
    n_gaussians: usize,
    image_size: usize,
    seed: u64,
    corrupt: Option<ParamClass>,
) -> Result<GradCheckReport> {
    let fixture = gradcheck_fixture(n_gaussians, image_size, seed)?;
    let GradCheckFixture { mut scene, cam, spec, observed, static_target, settings, t } = fixture;

    let loss =
        loss_total(&scene, &cam, t, &spec, &observed, &static_target, &settings)?;
    let mut rows = Vec::new();
    for class in ParamClass::ALL {
        let mut analytic = flatten_class_grads(&loss.grads, class);
        if corrupt == Some(class) {
            for g in &mut analytic {
                *g *= 1.05;
            }
        }
        let len = class_len(&scene, class);
        debug_assert_eq!(len, analytic.len());
        let mut fd = vec![0.0f64; len];
        for i in 0..len {
            let original_scene = scene.clone();
            param_access(&mut scene, t, class, i, Some(FD_STEP));
            let plus = loss_total(&scene, &cam, t, &spec, &observed, &static_target, &settings)?
                .total;
            scene = original_scene.clone();
            param_access(&mut scene, t, class, i, Some(-FD_STEP));
            let minus = loss_total(&scene, &cam, t, &spec, &observed, &static_target, &settings)?
                .total;
            scene = original_scene;
            fd[i] = (plus - minus) / (2.0 * FD_STEP);
        }
        let diff_norm: f64 = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let fd_norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        let analytic_norm: f64 = analytic.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel_err = diff_norm / fd_norm.max(1e-12);
        rows.push(GradCheckRow {
            class,
            rel_err,
            analytic_norm,
            fd_norm,
            pass: rel_err < GRADCHECK_TOLERANCE,
        });
    }
    Ok(GradCheckReport { rows })
}
