//! On-disk codecs: PFM float images, 8-bit PNG previews, binary
//! checkpoints, and the small text formats (poses, twists, init points).
//! Byte-level layouts are documented in FORMATS.md at the repo root.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::err::{Error, Result};
use crate::img::Image;
use crate::optim::{AdamBuf, EpochStats, FrameOptState, OptimizerState, TrainConfig};
use crate::scene::{FrameParams, GaussianPrimitive, SceneModel};
use crate::se3::{Pose, Rotation, Twist};

// ---------------------------------------------------------------------------
// PFM

/// Write a color PFM: "PF", dimensions, scale -1.0 (little-endian), then
/// f32 RGB scanlines bottom-to-top.
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + img.data.len() * 4);
    buf.extend_from_slice(b"PF\n");
    buf.extend_from_slice(format!("{} {}\n", img.width, img.height).as_bytes());
    buf.extend_from_slice(b"-1.0\n");
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for c in img.pixel(x, y) {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::format(path, reason);

    // header: three whitespace-separated tokens after the magic
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "PF" {
        return Err(fail("not a color PFM (missing PF magic)"));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| fail("bad width"))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| fail("bad height"))?;
    let scale: f64 = token(&bytes)?.parse().map_err(|_| fail("bad scale"))?;
    if scale >= 0.0 {
        return Err(fail("big-endian PFM not supported (scale must be negative)"));
    }
    pos += 1; // single whitespace byte after the scale line
    let need = width * height * 12;
    if bytes.len() < pos + need {
        return Err(fail("truncated pixel data"));
    }
    let mut img = Image::new(width, height);
    let mut off = pos;
    for y in (0..height).rev() {
        for x in 0..width {
            let mut px = [0.0f64; 3];
            for p in &mut px {
                let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
                *p = f32::from_le_bytes(raw) as f64;
                off += 4;
            }
            img.set_pixel(x, y, px);
        }
    }
    Ok(img)
}

/// 8-bit PNG preview of a linear image (values clamped to [0, 1]).
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let mut out = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = img.pixel(x, y);
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb(px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)),
            );
        }
    }
    out.save(path)
        .map_err(|e| Error::format(path, format!("png encode: {e}")))
}

// ---------------------------------------------------------------------------
// JSON helpers

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, format!("parse: {e}")))
}

// ---------------------------------------------------------------------------
// pose / twist / point text files

/// One pose per line: `t qw qx qy qz tx ty tz`.
pub fn write_poses(path: &Path, poses: &[(u32, Pose)]) -> Result<()> {
    let mut text = String::new();
    for (t, p) in poses {
        let q = p.rotation.quat();
        let tr = p.translation;
        text.push_str(&format!(
            "{t} {} {} {} {} {} {} {}\n",
            q[0], q[1], q[2], q[3], tr[0], tr[1], tr[2]
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<(u32, Pose)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::format(path, format!("line {}: expected 8 fields", ln + 1)));
        }
        let t: u32 = fields[0]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad timestamp", ln + 1)))?;
        let mut v = [0.0f64; 7];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad number", ln + 1)))?;
        }
        out.push((t, Pose::new(Rotation([v[0], v[1], v[2], v[3]]), [v[4], v[5], v[6]])));
    }
    Ok(out)
}

/// One line per frame: `t s0..s5 e0..e5` (start and end twists).
pub fn write_twists(path: &Path, twists: &[(u32, Twist, Twist)]) -> Result<()> {
    let mut text = String::new();
    for (t, s, e) in twists {
        text.push_str(&t.to_string());
        for v in s.0.iter().chain(e.0.iter()) {
            text.push_str(&format!(" {v}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_twists(path: &Path) -> Result<Vec<(u32, Twist, Twist)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 13 {
            return Err(Error::format(path, format!("line {}: expected 13 fields", ln + 1)));
        }
        let t: u32 = fields[0]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad timestamp", ln + 1)))?;
        let mut v = [0.0f64; 12];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad number", ln + 1)))?;
        }
        out.push((
            t,
            Twist([v[0], v[1], v[2], v[3], v[4], v[5]]),
            Twist([v[6], v[7], v[8], v[9], v[10], v[11]]),
        ));
    }
    Ok(out)
}

/// One init point per line: `s|d x y z r g b`.
pub fn write_points(path: &Path, points: &[crate::data_synth::InitPoint]) -> Result<()> {
    let mut text = String::new();
    for p in points {
        text.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            if p.dynamic { "d" } else { "s" },
            p.position[0],
            p.position[1],
            p.position[2],
            p.color[0],
            p.color[1],
            p.color[2]
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_points(path: &Path) -> Result<Vec<crate::data_synth::InitPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::format(path, format!("line {}: expected 7 fields", ln + 1)));
        }
        let dynamic = match fields[0] {
            "d" => true,
            "s" => false,
            _ => return Err(Error::format(path, format!("line {}: flag must be s or d", ln + 1))),
        };
        let mut v = [0.0f64; 6];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad number", ln + 1)))?;
        }
        out.push(crate::data_synth::InitPoint {
            position: [v[0], v[1], v[2]],
            color: [v[3], v[4], v[5]],
            dynamic,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV

pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut text = String::from("epoch,loss_dym,loss_static,loss_total,rot_err_deg,trans_err\n");
    for row in history {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch, row.loss_dym, row.loss_static, row.loss_total, row.rot_err_deg, row.trans_err
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// checkpoint (binary, magic + version, little-endian f64 payload)

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSPLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub scene: SceneModel,
    pub optimizer: Option<OptimizerState>,
    pub epoch: u64,
    pub history: Vec<EpochStats>,
    pub config: Option<TrainConfig>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(&self.path, "truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
}

fn write_gaussian(w: &mut Writer, g: &GaussianPrimitive) {
    w.f64s(&g.mean);
    w.f64s(&g.log_scale);
    w.f64s(&g.rotation.quat());
    w.f64(g.opacity_logit);
    w.f64s(&g.color_base);
    for row in &g.color_sh1 {
        w.f64s(row);
    }
}

fn read_gaussian(r: &mut Reader) -> Result<GaussianPrimitive> {
    let mean = [r.f64()?, r.f64()?, r.f64()?];
    let log_scale = [r.f64()?, r.f64()?, r.f64()?];
    let rotation = Rotation([r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
    let opacity_logit = r.f64()?;
    let color_base = [r.f64()?, r.f64()?, r.f64()?];
    let mut color_sh1 = [[0.0; 3]; 3];
    for row in &mut color_sh1 {
        *row = [r.f64()?, r.f64()?, r.f64()?];
    }
    Ok(GaussianPrimitive { mean, log_scale, rotation, opacity_logit, color_base, color_sh1 })
}

fn write_adam_buf(w: &mut Writer, b: &AdamBuf) {
    w.u64(b.m.len() as u64);
    w.f64s(&b.m);
    w.f64s(&b.v);
    w.u64(b.step);
}

fn read_adam_buf(r: &mut Reader) -> Result<AdamBuf> {
    let n = r.u64()? as usize;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    let step = r.u64()?;
    Ok(AdamBuf { m, v, step })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);

    let config_json = match &ck.config {
        Some(c) => serde_json::to_string(c)
            .map_err(|e| Error::format(path, format!("config serialize: {e}")))?,
        None => String::new(),
    };
    w.bytes(config_json.as_bytes());

    w.u64(ck.scene.static_set.len() as u64);
    w.u64(ck.scene.dynamic_canonical.len() as u64);
    for g in ck.scene.static_set.iter().chain(&ck.scene.dynamic_canonical) {
        write_gaussian(&mut w, g);
    }
    w.u64(ck.scene.frames.len() as u64);
    for (t, f) in &ck.scene.frames {
        w.u32(*t);
        w.f64s(&f.deform_rotation.quat());
        w.f64s(&f.deform_translation);
        w.f64s(&f.exposure_weight.0);
        w.f64s(&f.camera_init.rotation.quat());
        w.f64s(&f.camera_init.translation);
        w.f64s(&f.start_twist.0);
        w.f64s(&f.end_twist.0);
    }

    match &ck.optimizer {
        None => w.u8(0),
        Some(st) => {
            w.u8(1);
            w.f64(st.hyper.beta1);
            w.f64(st.hyper.beta2);
            w.f64(st.hyper.epsilon);
            write_adam_buf(&mut w, &st.means);
            write_adam_buf(&mut w, &st.log_scales);
            write_adam_buf(&mut w, &st.rotations);
            write_adam_buf(&mut w, &st.opacities);
            write_adam_buf(&mut w, &st.colors);
            w.u64(st.frames.len() as u64);
            for (t, f) in &st.frames {
                w.u32(*t);
                write_adam_buf(&mut w, &f.deform_rot);
                write_adam_buf(&mut w, &f.deform_trans);
                write_adam_buf(&mut w, &f.exposure);
                write_adam_buf(&mut w, &f.twists);
            }
        }
    }

    w.u64(ck.epoch);
    w.u64(ck.history.len() as u64);
    for row in &ck.history {
        w.u64(row.epoch as u64);
        w.f64(row.loss_dym);
        w.f64(row.loss_static);
        w.f64(row.loss_total);
        w.f64(row.rot_err_deg);
        w.f64(row.trans_err);
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&w.buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0, path: path.to_path_buf() };

    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let config_bytes = r.bytes()?;
    let config = if config_bytes.is_empty() {
        None
    } else {
        Some(
            serde_json::from_slice(config_bytes)
                .map_err(|e| Error::format(path, format!("embedded config: {e}")))?,
        )
    };

    let n_static = r.u64()? as usize;
    let n_dynamic = r.u64()? as usize;
    let mut static_set = Vec::with_capacity(n_static);
    for _ in 0..n_static {
        static_set.push(read_gaussian(&mut r)?);
    }
    let mut dynamic_set = Vec::with_capacity(n_dynamic);
    for _ in 0..n_dynamic {
        dynamic_set.push(read_gaussian(&mut r)?);
    }
    let mut scene = SceneModel::new(static_set, dynamic_set);
    let n_frames = r.u64()? as usize;
    for _ in 0..n_frames {
        let t = r.u32()?;
        let deform_rotation = Rotation([r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
        let deform_translation = [r.f64()?, r.f64()?, r.f64()?];
        let exposure_weight = Twist([r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
        let camera_init = Pose::new(
            Rotation([r.f64()?, r.f64()?, r.f64()?, r.f64()?]),
            [r.f64()?, r.f64()?, r.f64()?],
        );
        let start_twist = Twist([r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
        let end_twist = Twist([r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?]);
        scene.frames.insert(
            t,
            FrameParams {
                deform_rotation,
                deform_translation,
                exposure_weight,
                camera_init,
                start_twist,
                end_twist,
            },
        );
    }

    let optimizer = if r.u8()? == 1 {
        let hyper = crate::optim::AdamParams {
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let means = read_adam_buf(&mut r)?;
        let log_scales = read_adam_buf(&mut r)?;
        let rotations = read_adam_buf(&mut r)?;
        let opacities = read_adam_buf(&mut r)?;
        let colors = read_adam_buf(&mut r)?;
        let n = r.u64()? as usize;
        let mut frames = std::collections::BTreeMap::new();
        for _ in 0..n {
            let t = r.u32()?;
            frames.insert(
                t,
                FrameOptState {
                    deform_rot: read_adam_buf(&mut r)?,
                    deform_trans: read_adam_buf(&mut r)?,
                    exposure: read_adam_buf(&mut r)?,
                    twists: read_adam_buf(&mut r)?,
                },
            );
        }
        Some(OptimizerState {
            hyper,
            means,
            log_scales,
            rotations,
            opacities,
            colors,
            frames,
        })
    } else {
        None
    };

    let epoch = r.u64()?;
    let n_rows = r.u64()? as usize;
    let mut history = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        history.push(EpochStats {
            epoch: r.u64()? as usize,
            loss_dym: r.f64()?,
            loss_static: r.f64()?,
            loss_total: r.f64()?,
            rot_err_deg: r.f64()?,
            trans_err: r.f64()?,
        });
    }

    Ok(Checkpoint { scene, optimizer, epoch, history, config })
}
