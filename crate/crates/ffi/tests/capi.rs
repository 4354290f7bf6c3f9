//! Exercises the C ABI the way a foreign binding would: through the
//! exported extern "C" functions, raw pointers, and status codes.

use std::ffi::CString;
use std::ptr;

use desplat_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0i8; 256];
    let n = unsafe { dspl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|b| *b as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = dspl_version();
    assert!(!v.is_null());
    let s = unsafe { std::ffi::CStr::from_ptr(v) }.to_str().unwrap();
    assert!(!s.is_empty());
}

#[test]
fn full_round_trip_generate_train_render_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let ds_dir = c(dir.path().join("ds").to_str().unwrap());

    // small dataset through a spec preset
    let mut dataset: *mut DsplDataset = ptr::null_mut();
    let status =
        unsafe { dspl_dataset_generate(c("slow-object").as_ptr(), 3, ds_dir.as_ptr(), &mut dataset) };
    assert_eq!(status, DsplStatus::Ok, "{}", last_error());
    let mut count = 0usize;
    assert_eq!(unsafe { dspl_dataset_frame_count(dataset, &mut count) }, DsplStatus::Ok);
    assert_eq!(count, 24);

    // reopen from disk
    let mut reopened: *mut DsplDataset = ptr::null_mut();
    assert_eq!(
        unsafe { dspl_dataset_open(ds_dir.as_ptr(), &mut reopened) },
        DsplStatus::Ok,
        "{}",
        last_error()
    );

    // two-epoch training with an explicit config
    let config = c(r#"{
        "version": 1, "n_subframes": 3, "emax": 2, "e1": 2, "e2": 2,
        "rates": {"means": 0.0016, "log_scales": 0.005, "rotations": 0.001,
                   "opacities": 0.05, "colors": 0.0025, "twists": 0.001,
                   "deformation": 0.001},
        "adam": {"beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
        "seed": 1, "background": [0.0, 0.0, 0.0],
        "init": {"initial_opacity": 0.5, "initial_scale_fraction": 0.04}
    }"#);
    let mut scene: *mut DsplScene = ptr::null_mut();
    let status = unsafe { dspl_scene_train(reopened, config.as_ptr(), &mut scene) };
    assert_eq!(status, DsplStatus::Ok, "{}", last_error());

    // save + load round trip
    let ckpt = c(dir.path().join("model.ckpt").to_str().unwrap());
    assert_eq!(unsafe { dspl_scene_save(scene, ckpt.as_ptr()) }, DsplStatus::Ok);
    let mut loaded: *mut DsplScene = ptr::null_mut();
    assert_eq!(unsafe { dspl_scene_load(ckpt.as_ptr(), &mut loaded) }, DsplStatus::Ok);

    // render and compare against the stored ground truth
    let mut sharp: *mut DsplImage = ptr::null_mut();
    let status = unsafe { dspl_render_sharp(loaded, reopened, 0, c("middle").as_ptr(), &mut sharp) };
    assert_eq!(status, DsplStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { dspl_image_width(sharp) }, 64);
    assert_eq!(unsafe { dspl_image_height(sharp) }, 64);
    let data = unsafe { dspl_image_data(sharp) };
    assert!(!data.is_null());
    let first = unsafe { *data };
    assert!((0.0..=1.0).contains(&first));

    let mut gt: *mut DsplImage = ptr::null_mut();
    assert_eq!(
        unsafe { dspl_dataset_image(reopened, 0, c("sharp").as_ptr(), &mut gt) },
        DsplStatus::Ok
    );
    let mut psnr = 0.0f64;
    assert_eq!(unsafe { dspl_psnr(sharp, gt, &mut psnr) }, DsplStatus::Ok);
    assert!(psnr > 5.0, "psnr {psnr}");
    let mut ssim = 0.0f64;
    assert_eq!(unsafe { dspl_ssim(sharp, gt, &mut ssim) }, DsplStatus::Ok);
    assert!((-1.0..=1.0).contains(&ssim));

    // blur prediction and file output
    let mut blur: *mut DsplImage = ptr::null_mut();
    assert_eq!(unsafe { dspl_render_blur(loaded, reopened, 0, &mut blur) }, DsplStatus::Ok);
    let pfm = c(dir.path().join("blur.pfm").to_str().unwrap());
    let png = c(dir.path().join("blur.png").to_str().unwrap());
    assert_eq!(unsafe { dspl_image_write_pfm(blur, pfm.as_ptr()) }, DsplStatus::Ok);
    assert_eq!(unsafe { dspl_image_write_png(blur, png.as_ptr()) }, DsplStatus::Ok);
    assert!(dir.path().join("blur.pfm").exists());
    assert!(dir.path().join("blur.png").exists());

    unsafe {
        dspl_image_free(sharp);
        dspl_image_free(gt);
        dspl_image_free(blur);
        dspl_scene_free(scene);
        dspl_scene_free(loaded);
        dspl_dataset_free(dataset);
        dspl_dataset_free(reopened);
    }
}

#[test]
fn errors_set_status_and_message() {
    // null out pointer
    let status = unsafe {
        dspl_dataset_open(c("/nonexistent/dir").as_ptr(), ptr::null_mut())
    };
    assert_eq!(status, DsplStatus::NullPointer);

    // missing directory
    let mut dataset: *mut DsplDataset = ptr::null_mut();
    let status = unsafe { dspl_dataset_open(c("/nonexistent/dir").as_ptr(), &mut dataset) };
    assert_eq!(status, DsplStatus::IoError);
    assert!(last_error().contains("manifest.json"), "{}", last_error());

    // unknown preset
    let dir = tempfile::tempdir().unwrap();
    let out = c(dir.path().join("x").to_str().unwrap());
    let status =
        unsafe { dspl_dataset_generate(c("warp-speed").as_ptr(), 0, out.as_ptr(), &mut dataset) };
    assert_eq!(status, DsplStatus::InvalidArgument);
    assert!(last_error().contains("warp-speed"));

    // bad checkpoint file
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"junk").unwrap();
    let mut scene: *mut DsplScene = ptr::null_mut();
    let status = unsafe { dspl_scene_load(c(bad.to_str().unwrap()).as_ptr(), &mut scene) };
    assert_eq!(status, DsplStatus::IoError);
}

#[test]
fn generated_header_exists_and_declares_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/desplat.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen header missing");
    for symbol in [
        "DsplStatus",
        "dspl_dataset_generate",
        "dspl_scene_train",
        "dspl_render_sharp",
        "dspl_image_data",
        "dspl_last_error_message",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
}
