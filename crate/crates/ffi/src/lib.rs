//! C ABI for the desplat engine.
//!
//! Conventions: every fallible call returns a [`DsplStatus`]; results come
//! back through out-pointers holding opaque handles, released with the
//! matching `_free` function. On failure the thread-local message retrieved
//! by [`dspl_last_error_message`] describes what went wrong. Handles are not
//! thread-safe; use one handle from one thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use desplat::blur::{synthesize_blur, ExposureSpec, SubframeChoice};
use desplat::data_synth::{self, Dataset, SyntheticSpec};
use desplat::formats;
use desplat::img::Image;
use desplat::optim::{TrainConfig, Trainer};
use desplat::scene::SceneModel;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DsplStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IoError = 3,
    RuntimeError = 4,
}

fn status_of(err: &desplat::Error) -> DsplStatus {
    use desplat::Error::*;
    match err {
        Io { .. } | Format { .. } | Version { .. } => DsplStatus::IoError,
        InvalidConfig(_) | UnknownTimestamp(_) | SubframeOutOfRange { .. } => {
            DsplStatus::InvalidArgument
        }
        _ => DsplStatus::RuntimeError,
    }
}

/// Opaque dataset handle.
pub struct DsplDataset {
    inner: Dataset,
}

/// Opaque trained-scene handle (scene model plus its training config).
pub struct DsplScene {
    scene: SceneModel,
    config: TrainConfig,
}

/// Opaque image handle: row-major interleaved RGB f64 in [0, 1].
pub struct DsplImage {
    inner: Image,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().ok()
}

fn guard<T>(
    out: *mut *mut T,
    f: impl FnOnce() -> Result<T, (DsplStatus, String)>,
) -> DsplStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return DsplStatus::NullPointer;
    }
    let result = catch_unwind(AssertUnwindSafe(f));
    match result {
        Ok(Ok(value)) => {
            unsafe { *out = Box::into_raw(Box::new(value)) };
            DsplStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DsplStatus::RuntimeError
        }
    }
}

fn map_err(e: desplat::Error) -> (DsplStatus, String) {
    (status_of(&e), e.to_string())
}

/// Library version string; the pointer is static.
#[no_mangle]
pub extern "C" fn dspl_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Copy the last error message (UTF-8, NUL-terminated, truncated to `len`)
/// into `buf`; returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn dspl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let copy_len = msg.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, copy_len);
                *buf.add(copy_len) = 0;
            }
        }
        msg.len()
    })
}

/// Generate a synthetic dataset from a named preset (or NULL for defaults),
/// write it to `out_dir`, and return a handle to it.
#[no_mangle]
pub unsafe extern "C" fn dspl_dataset_generate(
    preset: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    out: *mut *mut DsplDataset,
) -> DsplStatus {
    guard(out, || {
        let dir = unsafe { cstr(out_dir) }
            .ok_or((DsplStatus::NullPointer, "out_dir is null or not UTF-8".to_string()))?;
        let mut spec = match unsafe { cstr(preset) } {
            Some(name) => SyntheticSpec::preset(name).map_err(map_err)?,
            None => SyntheticSpec::default(),
        };
        spec.seed = seed;
        let (dataset, gt_scene) = data_synth::generate(&spec).map_err(map_err)?;
        data_synth::export(&dataset, &gt_scene, Path::new(dir)).map_err(map_err)?;
        Ok(DsplDataset { inner: dataset })
    })
}

/// Open a dataset directory written by `dspl_dataset_generate` or the CLI.
#[no_mangle]
pub unsafe extern "C" fn dspl_dataset_open(
    dir: *const c_char,
    out: *mut *mut DsplDataset,
) -> DsplStatus {
    guard(out, || {
        let dir = unsafe { cstr(dir) }
            .ok_or((DsplStatus::NullPointer, "dir is null or not UTF-8".to_string()))?;
        let dataset = data_synth::import(Path::new(dir)).map_err(map_err)?;
        Ok(DsplDataset { inner: dataset })
    })
}

#[no_mangle]
pub unsafe extern "C" fn dspl_dataset_free(dataset: *mut DsplDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Number of frames in the dataset.
#[no_mangle]
pub unsafe extern "C" fn dspl_dataset_frame_count(
    dataset: *const DsplDataset,
    out: *mut usize,
) -> DsplStatus {
    if dataset.is_null() || out.is_null() {
        set_error("null argument");
        return DsplStatus::NullPointer;
    }
    unsafe { *out = (*dataset).inner.frames.len() };
    DsplStatus::Ok
}

/// Train a model on the dataset. `config_json` may be NULL for defaults or a
/// JSON object matching the training config schema.
#[no_mangle]
pub unsafe extern "C" fn dspl_scene_train(
    dataset: *const DsplDataset,
    config_json: *const c_char,
    out: *mut *mut DsplScene,
) -> DsplStatus {
    guard(out, || {
        if dataset.is_null() {
            return Err((DsplStatus::NullPointer, "dataset is null".into()));
        }
        let dataset = unsafe { &(*dataset).inner };
        let config: TrainConfig = match unsafe { cstr(config_json) } {
            Some(text) => TrainConfig::from_json(text).map_err(map_err)?,
            None => TrainConfig::default(),
        };
        let mut trainer = Trainer::new(dataset, config).map_err(map_err)?;
        trainer.train_to_end(dataset, |_, _| Ok(())).map_err(map_err)?;
        Ok(DsplScene { scene: trainer.scene, config: trainer.config })
    })
}

/// Load a scene checkpoint written by training.
#[no_mangle]
pub unsafe extern "C" fn dspl_scene_load(
    path: *const c_char,
    out: *mut *mut DsplScene,
) -> DsplStatus {
    guard(out, || {
        let path = unsafe { cstr(path) }
            .ok_or((DsplStatus::NullPointer, "path is null or not UTF-8".to_string()))?;
        let ck = formats::read_checkpoint(Path::new(path)).map_err(map_err)?;
        Ok(DsplScene { scene: ck.scene, config: ck.config.unwrap_or_default() })
    })
}

/// Save the scene as a checkpoint (no optimizer state).
#[no_mangle]
pub unsafe extern "C" fn dspl_scene_save(
    scene: *const DsplScene,
    path: *const c_char,
) -> DsplStatus {
    if scene.is_null() {
        set_error("scene is null");
        return DsplStatus::NullPointer;
    }
    let Some(path) = (unsafe { cstr(path) }) else {
        set_error("path is null or not UTF-8");
        return DsplStatus::NullPointer;
    };
    let scene = unsafe { &*scene };
    let ck = formats::Checkpoint {
        scene: scene.scene.clone(),
        optimizer: None,
        epoch: 0,
        history: vec![],
        config: Some(scene.config.clone()),
    };
    match formats::write_checkpoint(Path::new(path), &ck) {
        Ok(()) => DsplStatus::Ok,
        Err(e) => {
            let (s, m) = map_err(e);
            set_error(m);
            s
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn dspl_scene_free(scene: *mut DsplScene) {
    if !scene.is_null() {
        drop(unsafe { Box::from_raw(scene) });
    }
}

fn frame_of<'a>(
    dataset: &'a DsplDataset,
    frame: u32,
) -> Result<&'a desplat::data_synth::FrameObservation, (DsplStatus, String)> {
    dataset
        .inner
        .frames
        .iter()
        .find(|f| f.t == frame)
        .ok_or((DsplStatus::InvalidArgument, format!("unknown timestamp {frame}")))
}

/// Sharp render of one frame at the chosen subframe ("start", "middle",
/// "end").
#[no_mangle]
pub unsafe extern "C" fn dspl_render_sharp(
    scene: *const DsplScene,
    dataset: *const DsplDataset,
    frame: u32,
    choice: *const c_char,
    out: *mut *mut DsplImage,
) -> DsplStatus {
    guard(out, || {
        if scene.is_null() || dataset.is_null() {
            return Err((DsplStatus::NullPointer, "scene or dataset is null".into()));
        }
        let scene = unsafe { &*scene };
        let dataset = unsafe { &*dataset };
        let choice: SubframeChoice = unsafe { cstr(choice) }
            .unwrap_or("middle")
            .parse()
            .map_err(map_err)?;
        let obs = frame_of(dataset, frame)?;
        let spec = ExposureSpec::with_middle_reference(scene.config.n_subframes, obs.delta_t);
        let img = desplat::blur::render_sharp(
            &scene.scene,
            &dataset.inner.camera,
            frame,
            &spec,
            choice,
            &scene.config.settings(),
        )
        .map_err(map_err)?;
        Ok(DsplImage { inner: img })
    })
}

/// Blurry prediction (subframe average) of one frame.
#[no_mangle]
pub unsafe extern "C" fn dspl_render_blur(
    scene: *const DsplScene,
    dataset: *const DsplDataset,
    frame: u32,
    out: *mut *mut DsplImage,
) -> DsplStatus {
    guard(out, || {
        if scene.is_null() || dataset.is_null() {
            return Err((DsplStatus::NullPointer, "scene or dataset is null".into()));
        }
        let scene = unsafe { &*scene };
        let dataset = unsafe { &*dataset };
        let obs = frame_of(dataset, frame)?;
        let spec = ExposureSpec::with_middle_reference(scene.config.n_subframes, obs.delta_t);
        let img = synthesize_blur(
            &scene.scene,
            &dataset.inner.camera,
            frame,
            &spec,
            &scene.config.settings(),
        )
        .map_err(map_err)?;
        Ok(DsplImage { inner: img })
    })
}

/// Copy of one of the dataset's stored images; `kind` is "blurry", "sharp",
/// or "static".
#[no_mangle]
pub unsafe extern "C" fn dspl_dataset_image(
    dataset: *const DsplDataset,
    frame: u32,
    kind: *const c_char,
    out: *mut *mut DsplImage,
) -> DsplStatus {
    guard(out, || {
        if dataset.is_null() {
            return Err((DsplStatus::NullPointer, "dataset is null".into()));
        }
        let dataset = unsafe { &*dataset };
        let obs = frame_of(dataset, frame)?;
        let img = match unsafe { cstr(kind) }.unwrap_or("blurry") {
            "blurry" => obs.blurry.clone(),
            "sharp" => obs.sharp_gt.clone(),
            "static" => obs.static_gt.clone(),
            other => {
                return Err((
                    DsplStatus::InvalidArgument,
                    format!("image kind '{other}' (blurry|sharp|static)"),
                ))
            }
        };
        Ok(DsplImage { inner: img })
    })
}

#[no_mangle]
pub unsafe extern "C" fn dspl_image_free(image: *mut DsplImage) {
    if !image.is_null() {
        drop(unsafe { Box::from_raw(image) });
    }
}

#[no_mangle]
pub unsafe extern "C" fn dspl_image_width(image: *const DsplImage) -> usize {
    if image.is_null() {
        return 0;
    }
    unsafe { (*image).inner.width }
}

#[no_mangle]
pub unsafe extern "C" fn dspl_image_height(image: *const DsplImage) -> usize {
    if image.is_null() {
        return 0;
    }
    unsafe { (*image).inner.height }
}

/// Borrow the pixel buffer (width * height * 3 doubles, row-major RGB).
/// Valid until the image is freed.
#[no_mangle]
pub unsafe extern "C" fn dspl_image_data(image: *const DsplImage) -> *const f64 {
    if image.is_null() {
        return std::ptr::null();
    }
    unsafe { (*image).inner.data.as_ptr() }
}

#[no_mangle]
pub unsafe extern "C" fn dspl_image_write_pfm(
    image: *const DsplImage,
    path: *const c_char,
) -> DsplStatus {
    write_image(image, path, formats::write_pfm)
}

#[no_mangle]
pub unsafe extern "C" fn dspl_image_write_png(
    image: *const DsplImage,
    path: *const c_char,
) -> DsplStatus {
    write_image(image, path, formats::write_png)
}

fn write_image(
    image: *const DsplImage,
    path: *const c_char,
    writer: fn(&Path, &Image) -> desplat::Result<()>,
) -> DsplStatus {
    if image.is_null() {
        set_error("image is null");
        return DsplStatus::NullPointer;
    }
    let Some(path) = (unsafe { cstr(path) }) else {
        set_error("path is null or not UTF-8");
        return DsplStatus::NullPointer;
    };
    match writer(Path::new(path), unsafe { &(*image).inner }) {
        Ok(()) => DsplStatus::Ok,
        Err(e) => {
            let (s, m) = map_err(e);
            set_error(m);
            s
        }
    }
}

/// PSNR in dB between two images of equal size.
#[no_mangle]
pub unsafe extern "C" fn dspl_psnr(
    a: *const DsplImage,
    b: *const DsplImage,
    out: *mut f64,
) -> DsplStatus {
    metric(a, b, out, desplat::metrics::psnr)
}

/// Single-scale SSIM between two images of equal size (>= 11x11).
#[no_mangle]
pub unsafe extern "C" fn dspl_ssim(
    a: *const DsplImage,
    b: *const DsplImage,
    out: *mut f64,
) -> DsplStatus {
    metric(a, b, out, desplat::metrics::ssim)
}

fn metric(
    a: *const DsplImage,
    b: *const DsplImage,
    out: *mut f64,
    f: fn(&Image, &Image) -> desplat::Result<f64>,
) -> DsplStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        set_error("null argument");
        return DsplStatus::NullPointer;
    }
    match f(unsafe { &(*a).inner }, unsafe { &(*b).inner }) {
        Ok(v) => {
            unsafe { *out = v };
            DsplStatus::Ok
        }
        Err(e) => {
            let (s, m) = map_err(e);
            set_error(m);
            s
        }
    }
}
