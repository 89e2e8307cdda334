use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use platehog::detector::{detect_at, Padding, ScanConfig};
use platehog::hog::{descriptor_length, HogConfig};
use platehog::imaging::{GrayImage, WindowSize};
use platehog::svm::{save_model, LinearModel, ModelFile};
use platehog_ffi::*;

fn model_file(bias: f64, threshold: f64) -> ModelFile {
    let hog = HogConfig::default();
    let window = WindowSize::new(108, 36);
    let n = descriptor_length(window, &hog).unwrap();
    ModelFile {
        // alternate signs so textured windows get varied scores
        model: LinearModel {
            weights: (0..n).map(|i| if i % 3 == 0 { 0.02 } else { -0.01 }).collect(),
            bias,
            threshold,
        },
        hog,
        window,
        pad: Padding::new(9, 3),
    }
}

fn load(dir: &Path, file: &ModelFile) -> *mut PhModel {
    let path = dir.join("model.txt");
    save_model(&path, file).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ph_model_load(c.as_ptr(), &mut m) }, PhStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ph_last_error()) }.to_string_lossy().into_owned()
}

fn texture(w: usize, h: usize) -> Vec<u8> {
    (0..w * h).map(|i| ((i % w) * 7 + (i / w) * 13 + (i * i) % 31) as u8).collect()
}

unsafe fn collect(d: *const PhDetections) -> Vec<PhDetection> {
    (0..ph_detections_len(d))
        .map(|i| {
            let mut out = std::mem::zeroed();
            assert_eq!(ph_detections_get(d, i, &mut out), PhStatus::Ok);
            out
        })
        .collect()
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(ph_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn missing_model_is_a_data_error() {
    let path = CString::new("/nonexistent/model.txt").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ph_model_load(path.as_ptr(), &mut m) }, PhStatus::Data);
    assert!(m.is_null());
    assert!(last_error().contains("/nonexistent/model.txt"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(ph_model_load(ptr::null(), &mut m), PhStatus::NullPointer);
        assert_eq!(ph_model_descriptor_length(ptr::null()), 0);
        assert!(ph_model_threshold(ptr::null()).is_nan());
        assert_eq!(ph_detections_len(ptr::null()), 0);
        let mut d = ptr::null_mut();
        let px = [0u8; 4];
        assert_eq!(ph_detect_gray8(ptr::null(), px.as_ptr(), 2, 2, 2, ptr::null(), &mut d), PhStatus::NullPointer);
        ph_model_free(ptr::null_mut());
        ph_detections_free(ptr::null_mut());
    }
}

#[test]
fn model_accessors() {
    let dir = tempfile::tempdir().unwrap();
    let m = load(dir.path(), &model_file(0.0, 0.25));
    unsafe {
        assert_eq!(ph_model_descriptor_length(m), 7488);
        assert_eq!(ph_model_threshold(m), 0.25);
        let (mut w, mut h) = (0, 0);
        assert_eq!(ph_model_window(m, &mut w, &mut h), PhStatus::Ok);
        assert_eq!((w, h), (108, 36));
        assert_eq!(ph_model_set_threshold(m, f64::NAN), PhStatus::InvalidArgument);
        assert_eq!(ph_model_set_threshold(m, -2.0), PhStatus::Ok);
        assert_eq!(ph_model_threshold(m), -2.0);
        ph_model_free(m);
    }
}

#[test]
fn blank_image_below_threshold_yields_nothing() {
    // a constant image has an all-zero descriptor, so every score is the bias
    let dir = tempfile::tempdir().unwrap();
    let m = load(dir.path(), &model_file(-0.5, 0.0));
    let px = vec![128u8; 200 * 100];
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(ph_detect_gray8(m, px.as_ptr(), 200, 100, 200, ptr::null(), &mut d), PhStatus::Ok);
        assert_eq!(ph_detections_len(d), 0);
        let mut out = std::mem::zeroed();
        assert_eq!(ph_detections_get(d, 0, &mut out), PhStatus::InvalidArgument);
        ph_detections_free(d);
        ph_model_free(m);
    }
}

#[test]
fn matches_the_library_detector() {
    let dir = tempfile::tempdir().unwrap();
    let file = model_file(0.1, 0.0);
    let m = load(dir.path(), &file);
    let (w, h, row) = (240usize, 130usize, 256usize);
    let tex = texture(w, h);
    // padded rows exercise the row stride
    let mut buf = vec![255u8; row * h];
    for y in 0..h {
        buf[y * row..y * row + w].copy_from_slice(&tex[y * w..(y + 1) * w]);
    }
    let mut opts = ph_scan_options_default();
    opts.num_levels = 5;
    opts.override_threshold = true;
    opts.threshold = -0.2;
    let mut d = ptr::null_mut();
    let got = unsafe {
        assert_eq!(ph_detect_gray8(m, buf.as_ptr(), w as u32, h as u32, row, &opts, &mut d), PhStatus::Ok);
        let v = collect(d);
        ph_detections_free(d);
        ph_model_free(m);
        v
    };
    let img = GrayImage::from_fn(w, h, |x, y| f64::from(tex[y * w + x])).unwrap();
    let mut scan = ScanConfig::default();
    scan.pyramid.num_levels = 5;
    let want = detect_at(&img, &file.model, &file.hog, &scan, -0.2).unwrap();
    assert!(!want.is_empty());
    assert_eq!(got.len(), want.len());
    for (g, e) in got.iter().zip(&want) {
        assert_eq!((g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h), (e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h));
        assert_eq!(g.score, e.score);
        assert_eq!(g.level as usize, e.level_index);
    }
}

#[test]
fn invalid_options_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = load(dir.path(), &model_file(0.0, 0.0));
    let px = vec![0u8; 200 * 100];
    let mut d = ptr::null_mut();
    let mut opts = ph_scan_options_default();
    opts.stride = 0;
    unsafe {
        assert_eq!(ph_detect_gray8(m, px.as_ptr(), 200, 100, 200, &opts, &mut d), PhStatus::InvalidArgument);
        assert!(d.is_null());
        assert!(last_error().contains("stride"), "{}", last_error());
        assert_eq!(ph_detect_gray8(m, px.as_ptr(), 200, 100, 100, ptr::null(), &mut d), PhStatus::InvalidArgument);
        ph_model_free(m);
    }
}

#[test]
fn match_pair_values() {
    let b = |x, y, w, h| PhBox { x, y, w, h };
    assert_eq!(ph_match_pair(b(0.0, 0.0, 10.0, 10.0), b(0.0, 0.0, 10.0, 10.0)), 1.0);
    assert_eq!(ph_match_pair(b(0.0, 0.0, 10.0, 10.0), b(5.0, 0.0, 10.0, 10.0)), 50.0 / 150.0);
    assert_eq!(ph_match_pair(b(0.0, 0.0, 10.0, 10.0), b(10.0, 0.0, 10.0, 10.0)), 0.0);
}

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/platehog.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["ph_model_load", "ph_detect_gray8", "ph_detections_get", "ph_last_error", "ph_match_pair"] {
        assert!(text.contains(f), "{f} missing from the header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(status) = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status()
        else {
            eprintln!("{compiler} unavailable; skipping syntax check");
            continue;
        };
        assert!(status.success(), "{compiler} rejects the header");
    }
}

#[test]
fn c_example_links_and_runs() {
    // target/<profile>/deps/<test exe> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libplatehog_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("detect");
    let Ok(status) = std::process::Command::new("cc")
        .arg(root.join("examples/detect.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
    else {
        eprintln!("cc unavailable; skipping");
        return;
    };
    assert!(status.success(), "C example failed to build");

    let file = model_file(0.1, -0.2);
    let (w, h) = (240usize, 130usize);
    let tex = texture(w, h);
    save_model(dir.path().join("model.txt"), &file).unwrap();
    std::fs::write(dir.path().join("img.raw"), &tex).unwrap();
    let out = std::process::Command::new(&bin)
        .arg(dir.path().join("model.txt"))
        .arg(dir.path().join("img.raw"))
        .args([w.to_string(), h.to_string()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = GrayImage::from_fn(w, h, |x, y| f64::from(tex[y * w + x])).unwrap();
    let want = detect_at(&img, &file.model, &file.hog, &ScanConfig::default(), -0.2).unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), want.len() + 1);
    for (line, e) in stdout.lines().skip(1).zip(&want) {
        let score: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(score, e.score);
    }
}
