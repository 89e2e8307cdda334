//! C ABI for loading a trained model and detecting plates in 8-bit
//! grayscale buffers. The header `include/platehog.h` is generated from
//! this file at build time.
//!
//! Every fallible call returns a `PhStatus`; on failure
//! `ph_last_error` describes the most recent error on the calling thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use platehog::detector::{detect_at, BoundingBox, Padding, ScanConfig};
use platehog::eval::match_pair;
use platehog::imaging::{GrayImage, PyramidConfig, WindowSize};
use platehog::svm::{load_model, ModelFile};
use platehog::{Error, ErrorCategory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument or option value is invalid.
    InvalidArgument = 2,
    /// Unreadable or malformed input data.
    Data = 3,
    /// Broken internal invariant, or a caught panic.
    Internal = 4,
}

/// Rectangle in pixels, origin top-left.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhDetection {
    pub bbox: PhBox,
    pub score: f64,
    /// Pyramid level the window was found at.
    pub level: u32,
}

/// Scan settings. Start from `ph_scan_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhScanOptions {
    pub stride: u32,
    pub num_levels: u32,
    pub scale_step: f64,
    /// Index of the native-resolution level; negative picks the default.
    pub anchor_level: i32,
    pub nms_overlap: f64,
    /// When false the model's calibrated threshold is used.
    pub override_threshold: bool,
    pub threshold: f64,
}

/// Opaque trained model.
pub struct PhModel {
    file: ModelFile,
}

/// Opaque list of detections, sorted by descending score.
pub struct PhDetections {
    items: Vec<PhDetection>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: PhStatus, message: &str) -> PhStatus {
    set_error(message);
    status
}

fn from_error(e: &Error) -> PhStatus {
    let status = match e.category() {
        ErrorCategory::Usage => PhStatus::InvalidArgument,
        ErrorCategory::Data => PhStatus::Data,
        ErrorCategory::Internal => PhStatus::Internal,
    };
    fail(status, &e.to_string())
}

fn guarded(f: impl FnOnce() -> PhStatus) -> PhStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PhStatus::Internal, "panic inside platehog"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ph_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ph_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ph_model_load(path: *const c_char, out: *mut *mut PhModel) -> PhStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(PhStatus::NullPointer, "path and out must be non-null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PhStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match load_model(path) {
            Ok(file) => {
                *out = Box::into_raw(Box::new(PhModel { file }));
                PhStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `model` must come from `ph_model_load` and not be used afterwards.
/// Null is accepted.
#[no_mangle]
pub unsafe extern "C" fn ph_model_free(model: *mut PhModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature count per window; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ph_model_descriptor_length(model: *const PhModel) -> usize {
    model.as_ref().map_or(0, |m| m.file.model.weights.len())
}

/// Window width and height in pixels, including padding.
///
/// # Safety
/// `model` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_window(model: *const PhModel, width: *mut u32, height: *mut u32) -> PhStatus {
    let (Some(m), false, false) = (model.as_ref(), width.is_null(), height.is_null()) else {
        return fail(PhStatus::NullPointer, "model, width and height must be non-null");
    };
    *width = m.file.window.width as u32;
    *height = m.file.window.height as u32;
    PhStatus::Ok
}

/// Calibrated score threshold; NaN for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ph_model_threshold(model: *const PhModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.file.model.threshold)
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ph_model_set_threshold(model: *mut PhModel, threshold: f64) -> PhStatus {
    let Some(m) = model.as_mut() else {
        return fail(PhStatus::NullPointer, "model must be non-null");
    };
    if threshold.is_nan() {
        return fail(PhStatus::InvalidArgument, "threshold must not be NaN");
    }
    m.file.model.threshold = threshold;
    PhStatus::Ok
}

/// Stride 9, 11 levels at step 1.1, default anchor, suppression at 0.3,
/// model threshold.
#[no_mangle]
pub extern "C" fn ph_scan_options_default() -> PhScanOptions {
    let scan = ScanConfig::default();
    PhScanOptions {
        stride: scan.stride as u32,
        num_levels: scan.pyramid.num_levels as u32,
        scale_step: scan.pyramid.step,
        anchor_level: -1,
        nms_overlap: scan.nms_overlap,
        override_threshold: false,
        threshold: 0.0,
    }
}

fn scan_config(file: &ModelFile, opts: &PhScanOptions) -> platehog::Result<ScanConfig> {
    let pad: Padding = file.pad;
    let core = WindowSize::new(
        (file.window.width as i64 - 2 * i64::from(pad.x)).max(0) as usize,
        (file.window.height as i64 - 2 * i64::from(pad.y)).max(0) as usize,
    );
    let mut scan = ScanConfig::with_core(core, pad)?;
    scan.stride = opts.stride as usize;
    scan.pyramid = PyramidConfig {
        step: opts.scale_step,
        num_levels: opts.num_levels as usize,
        anchor: usize::try_from(opts.anchor_level).ok(),
    };
    scan.nms_overlap = opts.nms_overlap;
    scan.validate(&file.hog)?;
    Ok(scan)
}

/// Detects plates in an 8-bit grayscale image of `width x height` pixels
/// whose rows start `row_stride` bytes apart. `options` may be null for the
/// defaults. On success `*out` owns a new detection list.
///
/// # Safety
/// `pixels` must point to at least `row_stride * (height - 1) + width`
/// readable bytes; `model` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ph_detect_gray8(
    model: *const PhModel,
    pixels: *const u8,
    width: u32,
    height: u32,
    row_stride: usize,
    options: *const PhScanOptions,
    out: *mut *mut PhDetections,
) -> PhStatus {
    guarded(|| {
        if model.is_null() || pixels.is_null() || out.is_null() {
            return fail(PhStatus::NullPointer, "model, pixels and out must be non-null");
        }
        *out = ptr::null_mut();
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 || row_stride < w {
            return fail(PhStatus::InvalidArgument, "image must be non-empty with row_stride >= width");
        }
        let file = &(*model).file;
        let opts = options.as_ref().copied().unwrap_or_else(|| ph_scan_options_default());
        let scan = match scan_config(file, &opts) {
            Ok(s) => s,
            Err(e) => return from_error(&e),
        };
        let buf = std::slice::from_raw_parts(pixels, row_stride * (h - 1) + w);
        let img = match GrayImage::from_fn(w, h, |x, y| f64::from(buf[y * row_stride + x])) {
            Ok(img) => img,
            Err(e) => return from_error(&e),
        };
        let tau = if opts.override_threshold {
            opts.threshold
        } else {
            file.model.threshold
        };
        match detect_at(&img, &file.model, &file.hog, &scan, tau) {
            Ok(dets) => {
                let items = dets
                    .into_iter()
                    .map(|d| PhDetection {
                        bbox: to_ph(d.bbox),
                        score: d.score,
                        level: d.level_index as u32,
                    })
                    .collect();
                *out = Box::into_raw(Box::new(PhDetections { items }));
                PhStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `dets` must be null or a live list.
#[no_mangle]
pub unsafe extern "C" fn ph_detections_len(dets: *const PhDetections) -> usize {
    dets.as_ref().map_or(0, |d| d.items.len())
}

/// Copies detection `index` into `*out`.
///
/// # Safety
/// `dets` must be a live list and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ph_detections_get(dets: *const PhDetections, index: usize, out: *mut PhDetection) -> PhStatus {
    let (Some(d), false) = (dets.as_ref(), out.is_null()) else {
        return fail(PhStatus::NullPointer, "dets and out must be non-null");
    };
    match d.items.get(index) {
        Some(item) => {
            *out = *item;
            PhStatus::Ok
        }
        None => fail(
            PhStatus::InvalidArgument,
            &format!("index {index} out of range for {} detections", d.items.len()),
        ),
    }
}

/// # Safety
/// `dets` must come from `ph_detect_gray8` and not be used afterwards.
/// Null is accepted.
#[no_mangle]
pub unsafe extern "C" fn ph_detections_free(dets: *mut PhDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}

fn to_ph(b: BoundingBox) -> PhBox {
    PhBox {
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
    }
}

/// Intersection over union of two boxes, in [0, 1].
#[no_mangle]
pub extern "C" fn ph_match_pair(a: PhBox, b: PhBox) -> f64 {
    match_pair(&BoundingBox::new(a.x, a.y, a.w, a.h), &BoundingBox::new(b.x, b.y, b.w, b.h))
}
