//! C ABI over `fils`.
//!
//! Every function returns a [`FilsStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`fils_last_error_message`]. Objects
//! cross the boundary as opaque handles owned by the caller and released with
//! the matching `*_free` function. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use fils::action_area::action_area_for_clip;
use fils::config::FilsConfig;
use fils::eval::{similarity_heatmap, FilsModel as CoreModel};
use fils::synthgen::{find_clip, generate_dataset, load_clip, VideoClip};
use fils::FilsError;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    Shape = 7,
    NonFinite = 8,
    AlreadyExists = 9,
    /// Output buffer shorter than required; the required length is reported.
    BufferTooSmall = 10,
    Internal = 11,
    Panic = 12,
}

/// A decoded video clip.
pub struct FilsClip {
    inner: VideoClip,
}

/// A loaded checkpoint (or a random-init encoder) ready for inference.
pub struct FilsModel {
    inner: CoreModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &FilsError) -> FilsStatus {
    match e {
        FilsError::Io { .. } => FilsStatus::Io,
        FilsError::Config(_) => FilsStatus::Config,
        FilsError::InvalidArgument(_) => FilsStatus::InvalidArgument,
        FilsError::Shape(_) => FilsStatus::Shape,
        FilsError::Format { .. } | FilsError::Json(_) => FilsStatus::Format,
        FilsError::AlreadyExists(_) => FilsStatus::AlreadyExists,
        FilsError::NonFinite(_) => FilsStatus::NonFinite,
        FilsError::Tensor(_) | FilsError::Image(_) => FilsStatus::Internal,
    }
}

struct Fail(FilsStatus, String);

impl From<FilsError> for Fail {
    fn from(e: FilsError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FilsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FilsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FilsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FilsStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FilsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` must be null or point to a live value of type `T`.
unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Copy `src` into a caller buffer of `cap` elements, always reporting the
/// required length through `len_out`.
///
/// # Safety
/// `dst` must be null or valid for `cap` writes; `len_out` must be null or valid.
unsafe fn copy_out(src: &[f32], dst: *mut f32, cap: usize, len_out: *mut usize) -> Result<(), Fail> {
    if let Some(l) = len_out.as_mut() {
        *l = src.len();
    }
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if cap < src.len() {
        return Err(Fail(
            FilsStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn fils_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fils_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Render the dataset described by the config's `[data]` section.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fils_generate_dataset(config_path: *const c_char, force: bool) -> FilsStatus {
    guard(|| {
        let cfg = FilsConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?;
        generate_dataset(&cfg.data, cfg.seed, &cfg.data.dir, force)?;
        Ok(())
    })
}

/// Load a stored clip file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fils_clip_load(path: *const c_char, out: *mut *mut FilsClip) -> FilsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let clip = load_clip(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(FilsClip { inner: clip }));
        Ok(())
    })
}

/// Look a clip up by manifest id (e.g. `val/000003`) under a dataset directory.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fils_clip_find(
    data_dir: *const c_char,
    id: *const c_char,
    out: *mut *mut FilsClip,
) -> FilsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let dir = PathBuf::from(str_arg(data_dir, "data_dir")?);
        let clip = find_clip(&dir, str_arg(id, "id")?)?;
        *out = Box::into_raw(Box::new(FilsClip { inner: clip }));
        Ok(())
    })
}

/// # Safety
/// `clip` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fils_clip_free(clip: *mut FilsClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

/// Clip geometry and action label.
///
/// # Safety
/// `clip` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fils_clip_info(
    clip: *const FilsClip,
    frames: *mut usize,
    height: *mut usize,
    width: *mut usize,
    label: *mut usize,
) -> FilsStatus {
    guard(|| {
        let c = &ref_arg(clip, "clip")?.inner;
        let g = c.geometry();
        for (p, v, what) in [
            (frames, g.frames, "frames"),
            (height, g.height, "height"),
            (width, g.width, "width"),
            (label, c.action_label, "label"),
        ] {
            *p.as_mut().ok_or_else(|| null(what))? = v;
        }
        Ok(())
    })
}

/// Copy the caption into `buf` (NUL-terminated). `len_out` receives the
/// caption length in bytes without the terminator.
///
/// # Safety
/// `clip` must be live; `buf` valid for `cap` bytes; `len_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn fils_clip_caption(
    clip: *const FilsClip,
    buf: *mut c_char,
    cap: usize,
    len_out: *mut usize,
) -> FilsStatus {
    guard(|| {
        let s = ref_arg(clip, "clip")?.inner.caption.as_bytes();
        if let Some(l) = len_out.as_mut() {
            *l = s.len();
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < s.len() + 1 {
            return Err(Fail(
                FilsStatus::BufferTooSmall,
                format!("caption needs {} bytes", s.len() + 1),
            ));
        }
        std::ptr::copy_nonoverlapping(s.as_ptr().cast(), buf, s.len());
        *buf.add(s.len()) = 0;
        Ok(())
    })
}

/// Pixels as `[frames, height, width, 3]` row-major f32 in [0, 1].
///
/// # Safety
/// `clip` must be live; `buf` valid for `cap` floats; `len_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn fils_clip_pixels(
    clip: *const FilsClip,
    buf: *mut f32,
    cap: usize,
    len_out: *mut usize,
) -> FilsStatus {
    guard(|| {
        let px = &ref_arg(clip, "clip")?.inner.pixels;
        let v: Vec<f32> = px.iter().copied().collect();
        copy_out(&v, buf, cap, len_out)
    })
}

/// Action-area mask over the config's spatial grid, row-major `[Hy, Wx]`,
/// 1 for selected patches.
///
/// # Safety
/// `config_path` must be a valid string, `clip` live, `mask` valid for `cap`
/// bytes, `hy`/`wx` valid.
#[no_mangle]
pub unsafe extern "C" fn fils_clip_action_area(
    config_path: *const c_char,
    clip: *const FilsClip,
    mask: *mut u8,
    cap: usize,
    hy: *mut usize,
    wx: *mut usize,
) -> FilsStatus {
    guard(|| {
        let cfg = FilsConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?;
        let c = &ref_arg(clip, "clip")?.inner;
        let m = action_area_for_clip(c, cfg.patch, &cfg.action_area)?.mask();
        let (h, w) = m.dim();
        *hy.as_mut().ok_or_else(|| null("hy"))? = h;
        *wx.as_mut().ok_or_else(|| null("wx"))? = w;
        if mask.is_null() {
            return Err(null("mask"));
        }
        if cap < h * w {
            return Err(Fail(FilsStatus::BufferTooSmall, format!("mask needs {} bytes", h * w)));
        }
        for (i, &b) in m.iter().enumerate() {
            *mask.add(i) = b as u8;
        }
        Ok(())
    })
}

/// Load a checkpoint written by `fils pretrain`.
///
/// # Safety
/// `path` must be a valid string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fils_model_load(path: *const c_char, out: *mut *mut FilsModel) -> FilsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = CoreModel::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(FilsModel { inner: m }));
        Ok(())
    })
}

/// Untrained model with the architecture of a config file.
///
/// # Safety
/// `config_path` must be a valid string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fils_model_random_init(
    config_path: *const c_char,
    seed: u64,
    out: *mut *mut FilsModel,
) -> FilsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cfg = FilsConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?;
        let m = CoreModel::random_init(&cfg, seed)?;
        *out = Box::into_raw(Box::new(FilsModel { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fils_model_free(model: *mut FilsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature width D of [`fils_model_embed`].
///
/// # Safety
/// `model` must be live and `dim` valid.
#[no_mangle]
pub unsafe extern "C" fn fils_model_embed_dim(model: *const FilsModel, dim: *mut usize) -> FilsStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        *dim.as_mut().ok_or_else(|| null("dim"))? = m.cfg.model.embed_dim;
        Ok(())
    })
}

/// Mean-pooled full-view student features of one clip, `D` floats.
///
/// # Safety
/// Handles must be live; `buf` valid for `cap` floats; `len_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn fils_model_embed(
    model: *const FilsModel,
    clip: *const FilsClip,
    buf: *mut f32,
    cap: usize,
    len_out: *mut usize,
) -> FilsStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        let c = ref_arg(clip, "clip")?.inner.clone();
        let e = m.embed(std::slice::from_ref(&c))?;
        let v: Vec<f32> = e.iter().copied().collect();
        copy_out(&v, buf, cap, len_out)
    })
}

/// Text-to-patch similarity heatmap, row-major `[Hy, Wx]` in [0, 1].
///
/// # Safety
/// Handles must be live; `text` a valid string; `buf` valid for `cap` floats;
/// `hy`/`wx` valid.
#[no_mangle]
pub unsafe extern "C" fn fils_model_heatmap(
    model: *const FilsModel,
    clip: *const FilsClip,
    text: *const c_char,
    buf: *mut f32,
    cap: usize,
    hy: *mut usize,
    wx: *mut usize,
) -> FilsStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        let c = &ref_arg(clip, "clip")?.inner;
        let text = str_arg(text, "text")?;
        let h = similarity_heatmap(m, c, "", text, m.cfg.heatmap.smooth_sigma)?;
        let (y, x) = h.values.dim();
        *hy.as_mut().ok_or_else(|| null("hy"))? = y;
        *wx.as_mut().ok_or_else(|| null("wx"))? = x;
        let v: Vec<f32> = h.values.iter().copied().collect();
        copy_out(&v, buf, cap, std::ptr::null_mut())
    })
}
