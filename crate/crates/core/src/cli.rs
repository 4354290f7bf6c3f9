//! Command-line orchestration: dataset synthesis, training, rendering,
//! evaluation, and the gradient-check harness.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::blur::{synthesize_blur, ExposureSpec, SubframeChoice};
use crate::data_synth::{self, Dataset, SyntheticSpec};
use crate::err::{Error, Result};
use crate::formats::{self, Checkpoint};
use crate::metrics;
use crate::optim::{self, EpochStats, ParamClass, TrainConfig, Trainer};
use crate::scene::SceneModel;

#[derive(Parser)]
#[command(
    name = "desplat",
    about = "Differentiable Gaussian-splatting deblurring with joint pose refinement",
    version
)]
pub struct Cli {
    /// Cap for internal render parallelism (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Train a scene + pose model on a dataset directory.
    Train(TrainArgs),
    /// Render sharp/blur predictions for one frame of a checkpoint.
    Render(RenderArgs),
    /// Evaluate a checkpoint against a dataset's ground truth.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory (created; its parent must exist).
    #[arg(long)]
    pub out: PathBuf,
    /// Scene preset: slow-object, fast-object, small-shake, large-shake,
    /// dense-static.
    #[arg(long, conflicts_with = "spec")]
    pub preset: Option<String>,
    /// JSON spec file (overrides --preset).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory from `synth`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for checkpoints and the history CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config JSON; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Frame timestamp.
    #[arg(long)]
    pub frame: u32,
    /// Which subframe the sharp render uses: start, middle, or end.
    #[arg(long, default_value = "middle")]
    pub choice: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Number of Gaussians in the fixture scene.
    #[arg(long, default_value_t = 5)]
    pub gaussians: usize,
    /// Image size of the fixture camera.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Deliberately corrupt one class's analytic gradient (negative control
    /// for the harness). Class names as printed in the table.
    #[arg(long)]
    pub corrupt: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // ignore failure if a pool already exists (tests call run() repeatedly)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(path), _) => formats::read_json::<SyntheticSpec>(path)?,
        (None, Some(name)) => SyntheticSpec::preset(name)?,
        (None, None) => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (dataset, gt_scene) = data_synth::generate(&spec)?;
    data_synth::export(&dataset, &gt_scene, &args.out)?;
    println!(
        "wrote {} frames ({}x{}) to {} (seed {}, static {}, dynamic {})",
        dataset.frames.len(),
        dataset.camera.width,
        dataset.camera.height,
        args.out.display(),
        spec.seed,
        spec.n_static,
        spec.n_dynamic,
    );
    Ok(())
}

fn checkpoint_of(trainer: &Trainer) -> Checkpoint {
    Checkpoint {
        scene: trainer.scene.clone(),
        optimizer: Some(trainer.state.clone()),
        epoch: trainer.epoch as u64,
        history: trainer.history.clone(),
        config: Some(trainer.config.clone()),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = data_synth::import(&args.dataset)?;
    if !args.out.exists() {
        std::fs::create_dir(&args.out).map_err(|e| Error::io(&args.out, e))?;
    }

    let mut trainer = match &args.resume {
        Some(ckpt_path) => {
            let ck = formats::read_checkpoint(ckpt_path)?;
            let config = ck.config.ok_or_else(|| {
                Error::format(ckpt_path, "checkpoint has no embedded config; cannot resume")
            })?;
            let state = ck.optimizer.ok_or_else(|| {
                Error::format(ckpt_path, "checkpoint has no optimizer state; cannot resume")
            })?;
            Trainer::resume(
                ck.scene,
                state,
                config,
                dataset.camera,
                ck.epoch as usize,
                ck.history,
            )?
        }
        None => {
            let mut config = match &args.config {
                Some(path) => formats::read_json::<TrainConfig>(path)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            Trainer::new(&dataset, config)?
        }
    };

    let schedule = trainer.config.schedule();
    let out = args.out.clone();
    let mut last_good: Option<Checkpoint> = None;
    let result = (|| -> Result<()> {
        while trainer.epoch < trainer.config.emax {
            let stats = trainer.run_epoch(&dataset)?;
            if trainer.epoch == schedule.e1 {
                formats::write_checkpoint(&out.join("checkpoint_e1.ckpt"), &checkpoint_of(&trainer))?;
            }
            if trainer.epoch == schedule.e2 {
                formats::write_checkpoint(&out.join("checkpoint_e2.ckpt"), &checkpoint_of(&trainer))?;
            }
            last_good = Some(checkpoint_of(&trainer));
            if trainer.epoch % 20 == 0 || trainer.epoch == trainer.config.emax {
                println!(
                    "epoch {:4}  L_dym {:.6}  L_static {:.6}  rot_err {:.4} deg",
                    stats.epoch, stats.loss_dym, stats.loss_static, stats.rot_err_deg
                );
            }
        }
        Ok(())
    })();

    if let Err(e) = result {
        if let Some(ck) = &last_good {
            let path = out.join("checkpoint_lastgood.ckpt");
            formats::write_checkpoint(&path, ck)?;
            eprintln!("training aborted: {e}; last good state written to {}", path.display());
        }
        return Err(e);
    }

    formats::write_checkpoint(&out.join("checkpoint_final.ckpt"), &checkpoint_of(&trainer))?;
    formats::write_history_csv(&out.join("history.csv"), &trainer.history)?;
    println!("finished {} epochs; outputs in {}", trainer.epoch, out.display());
    Ok(())
}

fn load_scene(path: &Path) -> Result<(SceneModel, Option<TrainConfig>)> {
    let ck = formats::read_checkpoint(path)?;
    Ok((ck.scene, ck.config))
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let dataset = data_synth::import(&args.dataset)?;
    let (scene, config) = load_scene(&args.checkpoint)?;
    let choice: SubframeChoice = args.choice.parse()?;
    let frame = dataset
        .frames
        .iter()
        .find(|f| f.t == args.frame)
        .ok_or(Error::UnknownTimestamp(args.frame))?;
    let config = config.unwrap_or_default();
    let settings = config.settings();
    let spec = ExposureSpec::with_middle_reference(config.n_subframes, frame.delta_t);

    if !args.out.exists() {
        std::fs::create_dir(&args.out).map_err(|e| Error::io(&args.out, e))?;
    }
    let sharp = crate::blur::render_sharp(&scene, &dataset.camera, args.frame, &spec, choice, &settings)?;
    let blur = synthesize_blur(&scene, &dataset.camera, args.frame, &spec, &settings)?;
    let diff = blur.abs_diff(&frame.blurry)?;
    for (name, img) in [("sharp", &sharp), ("blur", &blur), ("diff", &diff)] {
        formats::write_pfm(&args.out.join(format!("{name}.pfm")), img)?;
        formats::write_png(&args.out.join(format!("{name}.png")), img)?;
    }
    println!(
        "frame {}: wrote sharp/blur/diff to {} (blur-vs-observed mean abs {:.6})",
        args.frame,
        args.out.display(),
        diff.data.iter().sum::<f64>() / diff.data.len() as f64
    );
    Ok(())
}

/// Per-frame PSNR/SSIM of the sharp render against the sharp ground truth,
/// plus pose errors; final row is the mean.
pub fn evaluate(scene: &SceneModel, dataset: &Dataset, config: &TrainConfig) -> Result<Vec<(String, [f64; 4])>> {
    let settings = config.settings();
    let mut rows: Vec<(String, [f64; 4])> = Vec::new();
    let mut sums = [0.0f64; 4];
    for frame in &dataset.frames {
        let spec = ExposureSpec::with_middle_reference(config.n_subframes, frame.delta_t);
        let sharp = crate::blur::render_sharp(
            scene,
            &dataset.camera,
            frame.t,
            &spec,
            SubframeChoice::Middle,
            &settings,
        )?;
        let psnr = metrics::psnr(&sharp, &frame.sharp_gt)?;
        let ssim = metrics::ssim(&sharp, &frame.sharp_gt)?;
        let est = optim::estimated_pose_of(scene.frame(frame.t)?, config.n_subframes)?;
        let (rot, trans) = metrics::pose_error(&est, &frame.gt_pose);
        let row = [psnr, ssim, rot, trans];
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        rows.push((frame.t.to_string(), row));
    }
    let n = dataset.frames.len() as f64;
    rows.push(("mean".into(), sums.map(|s| s / n)));
    Ok(rows)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let dataset = data_synth::import(&args.dataset)?;
    let (scene, config) = load_scene(&args.checkpoint)?;
    let config = config.unwrap_or_default();
    let rows = evaluate(&scene, &dataset, &config)?;
    let mut text = String::from("frame,psnr,ssim,rot_err_deg,trans_err\n");
    for (name, row) in &rows {
        text.push_str(&format!("{name},{},{},{},{}\n", row[0], row[1], row[2], row[3]));
    }
    std::fs::write(&args.out, &text).map_err(|e| Error::io(&args.out, e))?;
    let mean = &rows.last().unwrap().1;
    println!(
        "eval over {} frames: PSNR {:.3} dB  SSIM {:.4}  rot_err {:.4} deg  trans_err {:.5}",
        rows.len() - 1,
        mean[0],
        mean[1],
        mean[2],
        mean[3]
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let corrupt = match &args.corrupt {
        Some(name) => Some(name.parse::<ParamClass>()?),
        None => None,
    };
    let report = optim::run_gradcheck(args.gaussians, args.size, args.seed, corrupt)?;
    println!("{:<18} {:>12} {:>12} {:>12}  result", "class", "rel_err", "|analytic|", "|fd|");
    for row in &report.rows {
        println!(
            "{:<18} {:>12.3e} {:>12.4e} {:>12.4e}  {}",
            row.class.name(),
            row.rel_err,
            row.analytic_norm,
            row.fd_norm,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    if report.all_pass() {
        println!("all parameter classes pass at rel err < {:.0e}", optim::GRADCHECK_TOLERANCE);
        Ok(())
    } else {
        Err(Error::InvalidConfig("gradient check failed".into()))
    }
}

/// Re-exported for integration tests that drive commands in-process.
pub fn history_csv_string(history: &[EpochStats]) -> String {
    let mut text = String::from("epoch,loss_dym,loss_static,loss_total,rot_err_deg,trans_err\n");
    for row in history {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch, row.loss_dym, row.loss_static, row.loss_total, row.rot_err_deg, row.trans_err
        ));
    }
    text
}
