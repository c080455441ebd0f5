//! C interface to the diastereo pipeline.
//!
//! Objects are opaque handles created by `ds_*_new`/`ds_*_read` style calls
//! and released with the matching `ds_*_free`. Every fallible call returns a
//! [`DsStatus`]; on failure [`ds_last_error_message`] describes the problem
//! for the calling thread. Output pointers are written only on success.
//! Panics never cross the boundary; they surface as `DS_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use diastereo::dense::{block_match, MatchConfigDense};
use diastereo::evaluate::dsm_mae;
use diastereo::gt::{gt_disparity, GtConfig};
use diastereo::rectify::{rectify_pair, MatchInput, RectGeometry, RectifyConfig};
use diastereo::rpc::parse_rpc;
use diastereo::triangulate::{grid_dsm, triangulate, Aggregator, GridSpec};
use diastereo::{Error, GroundPoint, PixelPoint, Raster, RasterFormat, RpcModel, VegetationMask};

/// Result of every fallible call. One code per library failure, plus the
/// boundary's own conditions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Panic = 3,
    Io = 10,
    UnknownMagic = 11,
    TruncatedFile = 12,
    HeaderFieldMissing = 13,
    RangeError = 14,
    InvalidRaster = 15,
    Json = 16,
    SingularHomography = 20,
    PointAtInfinity = 21,
    DegenerateConfiguration = 22,
    DegenerateGeometry = 23,
    DenominatorNearZero = 30,
    NoConvergence = 31,
    SingularJacobian = 32,
    MissingCoefficient = 33,
    MalformedNumber = 34,
    MalformedLine = 40,
    EmptyFile = 41,
    ImageTooSmall = 42,
    EmptyMatchSet = 43,
    MatchFailure = 44,
    NoGeotransform = 50,
    BadCrs = 51,
    EmptyOverlap = 52,
    BadDisparityRange = 53,
    BipolarDisparity = 54,
    EmptyInput = 55,
    OutOfBounds = 56,
    GridMismatch = 60,
    FrameMismatch = 61,
    NoEvaluablePixels = 62,
    EmptyGroup = 63,
    InsufficientPairs = 64,
    HashMismatch = 70,
}

impl From<&Error> for DsStatus {
    fn from(e: &Error) -> Self {
        use DsStatus as S;
        match e {
            Error::UnknownMagic(_) => S::UnknownMagic,
            Error::TruncatedFile(_) => S::TruncatedFile,
            Error::HeaderFieldMissing(_) => S::HeaderFieldMissing,
            Error::RangeError(_) => S::RangeError,
            Error::InvalidRaster(_) => S::InvalidRaster,
            Error::Io(_) => S::Io,
            Error::Json(_) => S::Json,
            Error::SingularHomography(_) => S::SingularHomography,
            Error::PointAtInfinity => S::PointAtInfinity,
            Error::DegenerateConfiguration(_) => S::DegenerateConfiguration,
            Error::DegenerateGeometry(_) => S::DegenerateGeometry,
            Error::DenominatorNearZero(_) => S::DenominatorNearZero,
            Error::NoConvergence { .. } => S::NoConvergence,
            Error::SingularJacobian => S::SingularJacobian,
            Error::MissingCoefficient(_) => S::MissingCoefficient,
            Error::MalformedNumber(_) => S::MalformedNumber,
            Error::MalformedLine(_) => S::MalformedLine,
            Error::EmptyFile => S::EmptyFile,
            Error::ImageTooSmall(..) => S::ImageTooSmall,
            Error::EmptyMatchSet => S::EmptyMatchSet,
            Error::MatchFailure { .. } => S::MatchFailure,
            Error::NoGeotransform => S::NoGeotransform,
            Error::BadCrs(_) => S::BadCrs,
            Error::EmptyOverlap => S::EmptyOverlap,
            Error::BadDisparityRange(..) => S::BadDisparityRange,
            Error::BipolarDisparity { .. } => S::BipolarDisparity,
            Error::EmptyInput => S::EmptyInput,
            Error::OutOfBounds { .. } => S::OutOfBounds,
            Error::GridMismatch(_) => S::GridMismatch,
            Error::FrameMismatch(_) => S::FrameMismatch,
            Error::NoEvaluablePixels => S::NoEvaluablePixels,
            Error::EmptyGroup(_) => S::EmptyGroup,
            Error::InsufficientPairs { .. } => S::InsufficientPairs,
            Error::HashMismatch { .. } => S::HashMismatch,
            Error::InvalidInput(_) => S::InvalidArgument,
        }
    }
}

/// Opaque raster handle.
pub struct DsRaster(Raster);

/// Opaque RPC camera handle.
pub struct DsRpc(RpcModel);

/// Opaque rectification geometry handle.
pub struct DsRectGeometry(RectGeometry);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(DsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(DsStatus::from(&e), format!("{}: {e}", e.name()))
    }
}

fn null(what: &str) -> Fail {
    Fail(DsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DsStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            DsStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_val<T>(out: *mut T, value: T) {
    if !out.is_null() {
        *out = value;
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Stable name of a status code, e.g. "NoConvergence". Static storage.
#[no_mangle]
pub extern "C" fn ds_status_name(status: DsStatus) -> *const c_char {
    let s: &'static CStr = match status {
        DsStatus::Ok => c"Ok",
        DsStatus::NullPointer => c"NullPointer",
        DsStatus::InvalidArgument => c"InvalidArgument",
        DsStatus::Panic => c"Panic",
        DsStatus::Io => c"IoError",
        DsStatus::UnknownMagic => c"UnknownMagic",
        DsStatus::TruncatedFile => c"TruncatedFile",
        DsStatus::HeaderFieldMissing => c"HeaderFieldMissing",
        DsStatus::RangeError => c"RangeError",
        DsStatus::InvalidRaster => c"InvalidRaster",
        DsStatus::Json => c"JsonError",
        DsStatus::SingularHomography => c"SingularHomography",
        DsStatus::PointAtInfinity => c"PointAtInfinity",
        DsStatus::DegenerateConfiguration => c"DegenerateConfiguration",
        DsStatus::DegenerateGeometry => c"DegenerateGeometry",
        DsStatus::DenominatorNearZero => c"DenominatorNearZero",
        DsStatus::NoConvergence => c"NoConvergence",
        DsStatus::SingularJacobian => c"SingularJacobian",
        DsStatus::MissingCoefficient => c"MissingCoefficient",
        DsStatus::MalformedNumber => c"MalformedNumber",
        DsStatus::MalformedLine => c"MalformedLine",
        DsStatus::EmptyFile => c"EmptyFile",
        DsStatus::ImageTooSmall => c"ImageTooSmall",
        DsStatus::EmptyMatchSet => c"EmptyMatchSet",
        DsStatus::MatchFailure => c"MatchFailure",
        DsStatus::NoGeotransform => c"NoGeotransform",
        DsStatus::BadCrs => c"BadCrs",
        DsStatus::EmptyOverlap => c"EmptyOverlap",
        DsStatus::BadDisparityRange => c"BadDisparityRange",
        DsStatus::BipolarDisparity => c"BipolarDisparityError",
        DsStatus::EmptyInput => c"EmptyInput",
        DsStatus::OutOfBounds => c"OutOfBounds",
        DsStatus::GridMismatch => c"GridMismatch",
        DsStatus::FrameMismatch => c"FrameMismatch",
        DsStatus::NoEvaluablePixels => c"NoEvaluablePixels",
        DsStatus::EmptyGroup => c"EmptyGroup",
        DsStatus::InsufficientPairs => c"InsufficientPairs",
        DsStatus::HashMismatch => c"HashMismatch",
    };
    s.as_ptr()
}

/// Library version string. Static storage.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- rasters ----

/// Copies `width * height * channels` interleaved samples (NaN = nodata).
#[no_mangle]
pub unsafe extern "C" fn ds_raster_new(
    width: u32,
    height: u32,
    channels: u32,
    data: *const f32,
    out: *mut *mut DsRaster,
) -> DsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(channels as usize))
            .ok_or_else(|| invalid("raster size overflows"))?;
        let samples = std::slice::from_raw_parts(data, n).to_vec();
        put(out, DsRaster(Raster::new(width, height, channels, samples)?))
    })
}

/// Reads DSRAST, PFM or PGM, detected from the file contents.
#[no_mangle]
pub unsafe extern "C" fn ds_raster_read(path: *const c_char, out: *mut *mut DsRaster) -> DsStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, DsRaster(diastereo::raster::read_raster(p)?))
    })
}

/// Writes in the format implied by the extension (`.pfm`, `.pgm`, else DSRAST).
#[no_mangle]
pub unsafe extern "C" fn ds_raster_write(raster: *const DsRaster, path: *const c_char) -> DsStatus {
    guard(|| {
        let r = obj(raster, "raster")?;
        let p = path_arg(path)?;
        diastereo::raster::write_raster(&r.0, &p, RasterFormat::from_path(&p))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_raster_width(raster: *const DsRaster) -> u32 {
    raster.as_ref().map_or(0, |r| r.0.width())
}

#[no_mangle]
pub unsafe extern "C" fn ds_raster_height(raster: *const DsRaster) -> u32 {
    raster.as_ref().map_or(0, |r| r.0.height())
}

#[no_mangle]
pub unsafe extern "C" fn ds_raster_channels(raster: *const DsRaster) -> u32 {
    raster.as_ref().map_or(0, |r| r.0.channels())
}

/// Borrowed pointer to the interleaved samples; valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn ds_raster_data(raster: *const DsRaster) -> *const f32 {
    raster.as_ref().map_or(ptr::null(), |r| r.0.data().as_ptr())
}

/// Writes the six GDAL-order coefficients; `DS_STATUS_NO_GEOTRANSFORM` if
/// the raster has none.
#[no_mangle]
pub unsafe extern "C" fn ds_raster_geotransform(raster: *const DsRaster, out: *mut f64) -> DsStatus {
    guard(|| {
        let r = obj(raster, "raster")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let gt = r.0.geotransform().ok_or(Error::NoGeotransform)?;
        std::slice::from_raw_parts_mut(out, 6).copy_from_slice(&gt.0);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_raster_free(raster: *mut DsRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

// ---- cameras ----

/// Reads a JSON sidecar or an RPC00B keyword file.
#[no_mangle]
pub unsafe extern "C" fn ds_rpc_read(path: *const c_char, out: *mut *mut DsRpc) -> DsStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, DsRpc(parse_rpc(p)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_rpc_project(
    rpc: *const DsRpc,
    lon: f64,
    lat: f64,
    h: f64,
    col: *mut f64,
    row: *mut f64,
) -> DsStatus {
    guard(|| {
        let p = obj(rpc, "rpc")?.0.project(&GroundPoint::new(lon, lat, h))?;
        put_val(col, p.col);
        put_val(row, p.row);
        Ok(())
    })
}

/// Ground point seen at pixel (col, row) at altitude `h`.
#[no_mangle]
pub unsafe extern "C" fn ds_rpc_localize(
    rpc: *const DsRpc,
    col: f64,
    row: f64,
    h: f64,
    lon: *mut f64,
    lat: *mut f64,
) -> DsStatus {
    guard(|| {
        let g = obj(rpc, "rpc")?.0.localize(PixelPoint::new(col, row), h)?;
        put_val(lon, g.lon);
        put_val(lat, g.lat);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_rpc_free(rpc: *mut DsRpc) {
    if !rpc.is_null() {
        drop(Box::from_raw(rpc));
    }
}

// ---- pipeline stages ----

/// Rectifies (`left`, `right`) with automatic matching. `rect_left` and
/// `rect_right` may be null when the images are not wanted.
#[no_mangle]
pub unsafe extern "C" fn ds_rectify(
    left: *const DsRaster,
    rpc_left: *const DsRpc,
    right: *const DsRaster,
    rpc_right: *const DsRpc,
    z_avg: f64,
    geometry: *mut *mut DsRectGeometry,
    rect_left: *mut *mut DsRaster,
    rect_right: *mut *mut DsRaster,
) -> DsStatus {
    guard(|| {
        if geometry.is_null() {
            return Err(null("geometry output"));
        }
        let res = rectify_pair(
            &obj(left, "left")?.0,
            &obj(rpc_left, "rpc_left")?.0,
            &obj(right, "right")?.0,
            &obj(rpc_right, "rpc_right")?.0,
            z_avg,
            &MatchInput::Auto,
            &RectifyConfig::default(),
        )?;
        put(geometry, DsRectGeometry(res.geometry))?;
        if !rect_left.is_null() {
            put(rect_left, DsRaster(res.rect_left))?;
        }
        if !rect_right.is_null() {
            put(rect_right, DsRaster(res.rect_right))?;
        }
        Ok(())
    })
}

/// Whether the second image became the rectified left view.
#[no_mangle]
pub unsafe extern "C" fn ds_rect_swapped(geometry: *const DsRectGeometry) -> bool {
    geometry.as_ref().is_some_and(|g| g.0.swapped)
}

/// Row-major 3×3 left (`which` = 0) or right (`which` = 1) homography.
#[no_mangle]
pub unsafe extern "C" fn ds_rect_homography(geometry: *const DsRectGeometry, which: c_int, out: *mut f64) -> DsStatus {
    guard(|| {
        let g = &obj(geometry, "geometry")?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let h = match which {
            0 => &g.h_l,
            1 => &g.h_r,
            _ => return Err(invalid(format!("homography index {which}"))),
        };
        std::slice::from_raw_parts_mut(out, 9).copy_from_slice(h.matrix());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_rect_free(geometry: *mut DsRectGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// Ground-truth disparity from a georeferenced DSM. Cameras in the order
/// given to `ds_rectify`.
#[no_mangle]
pub unsafe extern "C" fn ds_gt_disparity(
    geometry: *const DsRectGeometry,
    dsm: *const DsRaster,
    rpc_a: *const DsRpc,
    rpc_b: *const DsRpc,
    out: *mut *mut DsRaster,
) -> DsStatus {
    guard(|| {
        let gt = gt_disparity(
            &obj(geometry, "geometry")?.0,
            &obj(dsm, "dsm")?.0,
            &obj(rpc_a, "rpc_a")?.0,
            &obj(rpc_b, "rpc_b")?.0,
            &GtConfig::default(),
        )?;
        put(out, DsRaster(gt.disparity))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ds_block_match(
    rect_left: *const DsRaster,
    rect_right: *const DsRaster,
    d_min: f64,
    d_max: f64,
    window: u32,
    out: *mut *mut DsRaster,
) -> DsStatus {
    guard(|| {
        let cfg = MatchConfigDense { d_min, d_max, window: window as usize, ..MatchConfigDense::default() };
        let d = block_match(&obj(rect_left, "rect_left")?.0, &obj(rect_right, "rect_right")?.0, &cfg)?;
        put(out, DsRaster(d))
    })
}

/// Two-channel raster: altitude and residual in pixels.
#[no_mangle]
pub unsafe extern "C" fn ds_triangulate(
    disparity: *const DsRaster,
    geometry: *const DsRectGeometry,
    rpc_a: *const DsRpc,
    rpc_b: *const DsRpc,
    h_min: f64,
    h_max: f64,
    out: *mut *mut DsRaster,
) -> DsStatus {
    guard(|| {
        let alt = triangulate(
            &obj(disparity, "disparity")?.0,
            &obj(geometry, "geometry")?.0,
            &obj(rpc_a, "rpc_a")?.0,
            &obj(rpc_b, "rpc_b")?.0,
            [h_min, h_max],
        )?;
        put(out, DsRaster(alt.raster))
    })
}

/// `aggregator`: 0 median, 1 max, 2 mean.
#[no_mangle]
pub unsafe extern "C" fn ds_grid_dsm(
    altitude: *const DsRaster,
    geometry: *const DsRectGeometry,
    rpc_a: *const DsRpc,
    rpc_b: *const DsRpc,
    cell: f64,
    aggregator: c_int,
    out: *mut *mut DsRaster,
) -> DsStatus {
    guard(|| {
        let agg = match aggregator {
            0 => Aggregator::Median,
            1 => Aggregator::Max,
            2 => Aggregator::Mean,
            _ => return Err(invalid(format!("aggregator {aggregator}"))),
        };
        let dsm = grid_dsm(
            &obj(altitude, "altitude")?.0,
            &obj(geometry, "geometry")?.0,
            &obj(rpc_a, "rpc_a")?.0,
            &obj(rpc_b, "rpc_b")?.0,
            &GridSpec { cell, agg, frame: None },
        )?;
        put(out, DsRaster(dsm))
    })
}

/// Altitude errors of `pred` against `reference`; `vegetation` may be null.
/// Any of the outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn ds_dsm_mae(
    pred: *const DsRaster,
    reference: *const DsRaster,
    vegetation: *const DsRaster,
    margin: u32,
    mae: *mut f64,
    rmse: *mut f64,
    completeness: *mut f64,
) -> DsStatus {
    guard(|| {
        let veg = match vegetation.as_ref() {
            Some(v) => Some(VegetationMask::new(v.0.clone())?),
            None => None,
        };
        let r = dsm_mae("", &obj(pred, "pred")?.0, &obj(reference, "reference")?.0, veg.as_ref(), margin as usize)?;
        put_val(mae, r.mae_m);
        put_val(rmse, r.rmse_m);
        put_val(completeness, r.completeness);
        Ok(())
    })
}

/// Runs the command line with `argv[0..argc]` and returns its exit code
/// (1 on bad arguments to this function).
#[no_mangle]
pub unsafe extern "C" fn ds_cli_run(argc: c_int, argv: *const *const c_char) -> c_int {
    if argv.is_null() || argc < 1 {
        return 1;
    }
    let mut args = Vec::with_capacity(argc as usize);
    for i in 0..argc as usize {
        let p = *argv.add(i);
        if p.is_null() {
            return 1;
        }
        args.push(CStr::from_ptr(p).to_string_lossy().into_owned());
    }
    catch_unwind(|| diastereo::cli::run(args)).unwrap_or(3)
}
