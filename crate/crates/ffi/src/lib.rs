//! C interface to `ssae`. Networks are opaque handles; every fallible call returns an
//! `SsaeStatus` and leaves a message for `ssae_last_error` on failure. Images cross the boundary
//! as row-major `height × width × channels` float arrays in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ssae::evaluation::{calibrate_threshold, pixel_auroc};
use ssae::image::{BinaryMask, ImageTensor};
use ssae::inference::{self, AnomalyHeatmap, Connectivity, PostprocessConfig};
use ssae::model::Network;
use ssae::objectives::{self, ObjectiveConfig, Variant};
use ssae::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    Precondition = 6,
    Metric = 7,
    Panic = 8,
    Other = 9,
}

pub const SSAE_OBJECTIVE_V1: u32 = 1;
pub const SSAE_OBJECTIVE_V2: u32 = 2;
pub const SSAE_OBJECTIVE_V3: u32 = 3;

/// Opaque trained network.
pub struct SsaeNetwork {
    net: Network,
}

/// Post-processing settings for `ssae_predict`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsaePostprocess {
    pub sigma: f64,
    pub threshold: f32,
    pub min_area: u32,
    /// Nonzero for 8-connectivity, zero for 4-connectivity.
    pub eight_connected: u8,
}

/// Image-level outcome of `ssae_predict`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsaeDetection {
    pub anomalous: u8,
    pub score: f32,
    pub components: u32,
    pub anomalous_pixels: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SsaeStatus {
    match err {
        Error::Config(_) => SsaeStatus::InvalidArgument,
        Error::Io(_) | Error::Index { .. } | Error::Image { .. } => SsaeStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => SsaeStatus::Checkpoint,
        Error::Shape(_) => SsaeStatus::Shape,
        Error::Precondition(_) | Error::EmptyValidation | Error::Degenerate => SsaeStatus::Precondition,
        Error::Metric(_) => SsaeStatus::Metric,
        _ => SsaeStatus::Other,
    }
}

struct Fail(SsaeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SsaeStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SsaeStatus::InvalidArgument, msg.into())
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SsaeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SsaeStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SsaeStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn image(ptr: *const f32, h: usize, w: usize, c: usize, what: &str) -> Result<ImageTensor, Fail> {
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(c)).ok_or_else(|| invalid("image size overflows"))?;
    Ok(ImageTensor::from_vec(h, w, c, slice(ptr, n, what)?.to_vec())?)
}

fn connectivity(eight: u8) -> Connectivity {
    if eight != 0 {
        Connectivity::Eight
    } else {
        Connectivity::Four
    }
}

/// Message of the most recent failure on this thread, or null. Valid until the next call that
/// fails on the same thread.
#[no_mangle]
pub extern "C" fn ssae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ssae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a network checkpoint. On success `*out` owns a handle to release with
/// `ssae_network_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssae_network_load(path: *const c_char, out: *mut *mut SsaeNetwork) -> SsaeStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let net = Network::load(&PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(SsaeNetwork { net }));
        Ok(())
    })
}

/// Release a handle from `ssae_network_load`. Null is ignored.
///
/// # Safety
/// `net` must come from `ssae_network_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssae_network_free(net: *mut SsaeNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Side length of the square images the network accepts.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssae_network_input_side(net: *const SsaeNetwork, out: *mut u32) -> SsaeStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = net.net.config().input_side as u32;
        Ok(())
    })
}

/// Images pushed through the network so far (instrumentation).
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssae_network_forward_count(net: *const SsaeNetwork, out: *mut u64) -> SsaeStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = net.net.forward_pass_count();
        Ok(())
    })
}

/// Reconstruct one `side × side × 3` image into `out` (same size).
///
/// # Safety
/// `image` and `out` must each hold `side * side * 3` floats.
#[no_mangle]
pub unsafe extern "C" fn ssae_network_reconstruct(
    net: *const SsaeNetwork,
    image: *const f32,
    side: usize,
    out: *mut f32,
) -> SsaeStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let x = self::image(image, side, side, 3, "image")?;
        let r = net.net.reconstruct(&x)?;
        slice_mut(out, r.as_slice().len(), "out")?.copy_from_slice(r.as_slice());
        Ok(())
    })
}

/// Single-pass detection on one `side × side × 3` image. `heatmap` (`side²` floats, smoothed
/// scores) and `mask` (`side²` bytes, 1 = anomalous) may be null when not needed.
///
/// # Safety
/// Non-null buffers must have the sizes stated above; `post` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssae_predict(
    net: *const SsaeNetwork,
    image: *const f32,
    side: usize,
    post: *const SsaePostprocess,
    heatmap: *mut f32,
    mask: *mut u8,
    out: *mut SsaeDetection,
) -> SsaeStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let post = post.as_ref().ok_or_else(|| null("post"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let x = self::image(image, side, side, 3, "image")?;
        let cfg = PostprocessConfig {
            sigma: post.sigma,
            threshold: post.threshold,
            min_area: post.min_area as usize,
            connectivity: connectivity(post.eight_connected),
        };
        let p = inference::predict(&net.net, &x, &cfg)?;
        if !heatmap.is_null() {
            slice_mut(heatmap, side * side, "heatmap")?.copy_from_slice(&p.heatmap.values);
        }
        if !mask.is_null() {
            for (dst, &m) in slice_mut(mask, side * side, "mask")?.iter_mut().zip(p.detection.mask.as_slice()) {
                *dst = m as u8;
            }
        }
        *out = SsaeDetection {
            anomalous: p.detection.anomalous as u8,
            score: p.detection.score,
            components: p.detection.components.len() as u32,
            anomalous_pixels: p.detection.mask.area() as u64,
        };
        Ok(())
    })
}

/// Objective value for one sample, optionally with its gradient with respect to `recon`.
/// `variant` is one of the `SSAE_OBJECTIVE_*` constants. `mask` holds `height × width` bytes (nonzero = modified); `grad` may be null.
///
/// # Safety
/// Image buffers must hold `height * width * channels` floats.
#[no_mangle]
pub unsafe extern "C" fn ssae_objective(
    variant: u32,
    lambda: f64,
    recon: *const f32,
    target: *const f32,
    distorted: *const f32,
    mask: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    loss: *mut f64,
    grad: *mut f32,
) -> SsaeStatus {
    guard(|| {
        let variant = match variant {
            1 => Variant::V1,
            2 => Variant::V2,
            3 => Variant::V3,
            v => return Err(invalid(format!("unknown objective {v}"))),
        };
        let cfg = ObjectiveConfig { variant, lambda, ..ObjectiveConfig::default() };
        cfg.validate()?;
        let r = image(recon, height, width, channels, "recon")?;
        let t = image(target, height, width, channels, "target")?;
        let d = image(distorted, height, width, channels, "distorted")?;
        let m = slice(mask, height * width, "mask")?.iter().map(|&v| v != 0).collect();
        let m = BinaryMask::from_vec(height, width, m)?;
        let lg = objectives::evaluate(&cfg, &r, &t, &d, &m)?;
        *loss.as_mut().ok_or_else(|| null("loss"))? = lg.loss;
        if !grad.is_null() {
            slice_mut(grad, lg.grad.as_slice().len(), "grad")?.copy_from_slice(lg.grad.as_slice());
        }
        Ok(())
    })
}

/// Calibrate a threshold on `count` validation heatmaps of `height × width`, stored back to back.
///
/// # Safety
/// `maps` must hold `count * height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn ssae_calibrate_threshold(
    maps: *const f32,
    count: usize,
    height: usize,
    width: usize,
    min_area: u32,
    eight_connected: u8,
    out: *mut f32,
) -> SsaeStatus {
    guard(|| {
        let plane = height * width;
        let all = slice(maps, count * plane, "maps")?;
        let heatmaps = (0..count)
            .map(|i| AnomalyHeatmap::from_values(height, width, all[i * plane..(i + 1) * plane].to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let t = calibrate_threshold(&heatmaps, min_area as usize, connectivity(eight_connected))?;
        *out.as_mut().ok_or_else(|| null("out"))? = t;
        Ok(())
    })
}

/// Pooled AUROC of `n` scores against binary labels (nonzero = anomalous).
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ssae_pixel_auroc(scores: *const f32, labels: *const u8, n: usize, out: *mut f64) -> SsaeStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
        *out.as_mut().ok_or_else(|| null("out"))? = pixel_auroc(s, &l)?;
        Ok(())
    })
}
