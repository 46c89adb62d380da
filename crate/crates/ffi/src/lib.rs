//! C ABI for the spoofguard detector.
//!
//! Objects are opaque handles created by `sg_*_new`/`sg_*_load` functions and
//! released with the matching `sg_*_free`. Every fallible call returns an
//! [`SgStatus`]; on failure [`sg_last_error_message`] describes the error for
//! the calling thread. A detector handle may be shared between threads as
//! long as each vehicle's packets are submitted in order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use spoofguard::detector::{CheckCase, DetectError, DetectionOutcome, Detector, FlagReason};
use spoofguard::packets::{sign, KeyTable, LocationPacket, PacketError, VehicleKey, KEY_LEN};
use spoofguard::roadmap::{load_roadmap, RoadGraph, RoadmapDoc, RoadmapError};
use spoofguard::GeoPoint;

/// Bytes in a serialized packet without a tag.
pub const SG_UNSIGNED_LEN: usize = 41;
/// Bytes in a serialized packet with its HMAC-SHA-512 tag.
pub const SG_SIGNED_LEN: usize = 105;
pub const SG_KEY_LEN: usize = 32;

// Literals above so the header generator can see them.
const _: () = assert!(SG_UNSIGNED_LEN == spoofguard::packets::UNSIGNED_LEN);
const _: () = assert!(SG_SIGNED_LEN == spoofguard::packets::SIGNED_LEN);
const _: () = assert!(SG_KEY_LEN == KEY_LEN);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    UnknownVehicle = 6,
    Malformed = 7,
    BufferTooSmall = 8,
    KeyMismatch = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgCase {
    /// First packet of a vehicle; it only seeds the state.
    Seed = 0,
    /// Rejected before the position check (authentication or replay).
    Unchecked = 1,
    SameRoad = 2,
    AdjacentRoads = 3,
    FromJunction = 4,
    ToJunction = 5,
    Invalid = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgReason {
    None = 0,
    EExceeds = 1,
    InvalidLocation = 2,
    Replay = 3,
    AuthFailure = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgPacket {
    pub vehicle_id: u64,
    pub lat: f64,
    pub lon: f64,
    pub bearing: f64,
    pub timestamp_ms: i64,
}

/// Result of processing one packet. Distances are NaN when not computed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgOutcome {
    pub vehicle_id: u64,
    pub timestamp_ms: i64,
    pub case_used: SgCase,
    pub d: f64,
    pub max_dist: f64,
    pub e_value: f64,
    pub flagged: bool,
    pub reason: SgReason,
    pub auth_remaining: u32,
    /// True when the vehicle was just told to start signing.
    pub alert: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SgGraphCounts {
    pub junctions: usize,
    pub roads: usize,
    pub sampled_points: usize,
    pub road_pairs: usize,
}

pub struct SgGraph(Arc<RoadGraph>);
pub struct SgKeyTable(KeyTable);
pub struct SgDetector(Detector);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(SgStatus, String);

impl From<RoadmapError> for Fail {
    fn from(e: RoadmapError) -> Self {
        let status = match e {
            RoadmapError::Io(_) => SgStatus::Io,
            RoadmapError::Parse(_) => SgStatus::Parse,
            RoadmapError::Validation(_) => SgStatus::Validation,
        };
        Fail(status, e.to_string())
    }
}

impl From<PacketError> for Fail {
    fn from(e: PacketError) -> Self {
        let status = match e {
            PacketError::KeyMismatch { .. } => SgStatus::KeyMismatch,
            PacketError::OutOfRange(_) => SgStatus::Validation,
            _ => SgStatus::Malformed,
        };
        Fail(status, e.to_string())
    }
}

impl From<DetectError> for Fail {
    fn from(e: DetectError) -> Self {
        let status = match e {
            DetectError::UnknownVehicle(_) => SgStatus::UnknownVehicle,
            DetectError::Malformed(_) => SgStatus::Malformed,
        };
        Fail(status, e.to_string())
    }
}

fn null() -> Fail {
    Fail(SgStatus::NullPointer, "null pointer argument".into())
}

/// Runs `f`, recording its error message and turning panics into
/// [`SgStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|_| Fail(SgStatus::InvalidUtf8, "argument is not valid UTF-8".into()))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn ref_arg<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

/// Message for the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and preprocesses a roadmap file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_load(path: *const c_char, out: *mut *mut SgGraph) -> SgStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let graph = load_roadmap(str_arg(path)?)?;
        *out = Box::into_raw(Box::new(SgGraph(Arc::new(graph))));
        Ok(())
    })
}

/// Preprocesses a roadmap given as JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_from_json(json: *const c_char, out: *mut *mut SgGraph) -> SgStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let doc = RoadmapDoc::from_json(str_arg(json)?)?;
        *out = Box::into_raw(Box::new(SgGraph(Arc::new(RoadGraph::from_doc(&doc)?))));
        Ok(())
    })
}

/// # Safety
/// `graph` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_counts(graph: *const SgGraph, out: *mut SgGraphCounts) -> SgStatus {
    guard(|| {
        let g = &ref_arg(graph)?.0;
        *out_arg(out)? = SgGraphCounts {
            junctions: g.junctions().len(),
            roads: g.roads().len(),
            sampled_points: g.sample_count(),
            road_pairs: g.road_pair_count(),
        };
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn sg_graph_free(graph: *mut SgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Creates an empty key table.
#[no_mangle]
pub extern "C" fn sg_keys_new() -> *mut SgKeyTable {
    Box::into_raw(Box::new(SgKeyTable(KeyTable::default())))
}

/// Generates one key per vehicle id from a seeded stream.
///
/// # Safety
/// `ids` must point to `n` ids (may be null when `n` is 0); `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sg_keys_generate(
    ids: *const u64,
    n: usize,
    seed: u64,
    out: *mut *mut SgKeyTable,
) -> SgStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let ids: &[u64] = if n == 0 {
            &[]
        } else if ids.is_null() {
            return Err(null());
        } else {
            std::slice::from_raw_parts(ids, n)
        };
        *out = Box::into_raw(Box::new(SgKeyTable(KeyTable::generate(ids.iter().copied(), seed))));
        Ok(())
    })
}

/// Adds or replaces a vehicle key of [`SG_KEY_LEN`] bytes.
///
/// # Safety
/// `keys` must be valid; `key` must point to `SG_KEY_LEN` bytes.
#[no_mangle]
pub unsafe extern "C" fn sg_keys_insert(keys: *mut SgKeyTable, vehicle_id: u64, key: *const u8) -> SgStatus {
    guard(|| {
        let table = out_arg(keys)?;
        if key.is_null() {
            return Err(null());
        }
        let mut bytes = [0u8; KEY_LEN];
        bytes.copy_from_slice(std::slice::from_raw_parts(key, KEY_LEN));
        table.0.insert(VehicleKey::new(vehicle_id, bytes));
        Ok(())
    })
}

/// # Safety
/// `keys` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn sg_keys_free(keys: *mut SgKeyTable) {
    if !keys.is_null() {
        drop(Box::from_raw(keys));
    }
}

fn to_core(p: &SgPacket) -> LocationPacket {
    LocationPacket::new(p.vehicle_id, GeoPoint::new(p.lat, p.lon), p.bearing, p.timestamp_ms)
}

unsafe fn write_bytes(bytes: &[u8], buf: *mut u8, cap: usize, written: *mut usize) -> Result<(), Fail> {
    let written = out_arg(written)?;
    *written = bytes.len();
    if cap < bytes.len() {
        return Err(Fail(SgStatus::BufferTooSmall, format!("need {} bytes, buffer holds {cap}", bytes.len())));
    }
    if buf.is_null() {
        return Err(null());
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    Ok(())
}

/// Serializes an unsigned packet into `buf`. `*written` receives the
/// required size even when the buffer is too small.
///
/// # Safety
/// `packet` must be valid; `buf` must hold `cap` bytes; `written` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sg_packet_serialize(
    packet: *const SgPacket,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> SgStatus {
    guard(|| {
        let bytes = to_core(ref_arg(packet)?).serialize()?;
        write_bytes(&bytes, buf, cap, written)
    })
}

/// Signs a packet with its vehicle's key from `keys` and serializes it.
///
/// # Safety
/// As for [`sg_packet_serialize`]; `keys` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_packet_sign(
    keys: *const SgKeyTable,
    packet: *const SgPacket,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> SgStatus {
    guard(|| {
        let table = &ref_arg(keys)?.0;
        let p = to_core(ref_arg(packet)?);
        let key = table
            .get(p.vehicle_id)
            .ok_or_else(|| Fail(SgStatus::UnknownVehicle, format!("no key for vehicle {}", p.vehicle_id)))?;
        let bytes = sign(&p, key)?.serialize()?;
        write_bytes(&bytes, buf, cap, written)
    })
}

/// Creates a detector over `graph` for the vehicles in `keys`. Both inputs
/// are copied or shared; the caller may free them afterwards.
///
/// # Safety
/// `graph` and `keys` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_detector_new(
    graph: *const SgGraph,
    keys: *const SgKeyTable,
    t_auth: u32,
    out: *mut *mut SgDetector,
) -> SgStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let g = ref_arg(graph)?.0.clone();
        let k = Arc::new(ref_arg(keys)?.0.clone());
        *out = Box::into_raw(Box::new(SgDetector(Detector::new(g, k, t_auth))));
        Ok(())
    })
}

fn to_c(o: &DetectionOutcome) -> SgOutcome {
    let case_used = match (o.seeded, o.case_used) {
        (true, _) => SgCase::Seed,
        (false, None) => SgCase::Unchecked,
        (false, Some(CheckCase::SameRoad)) => SgCase::SameRoad,
        (false, Some(CheckCase::AdjacentRoads)) => SgCase::AdjacentRoads,
        (false, Some(CheckCase::FromJunction)) => SgCase::FromJunction,
        (false, Some(CheckCase::ToJunction)) => SgCase::ToJunction,
        (false, Some(CheckCase::Invalid)) => SgCase::Invalid,
    };
    let reason = match o.reason {
        None => SgReason::None,
        Some(FlagReason::EExceeds) => SgReason::EExceeds,
        Some(FlagReason::InvalidLocation) => SgReason::InvalidLocation,
        Some(FlagReason::Replay) => SgReason::Replay,
        Some(FlagReason::AuthFailure) => SgReason::AuthFailure,
    };
    SgOutcome {
        vehicle_id: o.vehicle_id,
        timestamp_ms: o.timestamp_ms,
        case_used,
        d: o.d.unwrap_or(f64::NAN),
        max_dist: o.max_dist.unwrap_or(f64::NAN),
        e_value: o.e_value.unwrap_or(f64::NAN),
        flagged: o.flagged,
        reason,
        auth_remaining: o.auth_remaining,
        alert: o.alert.is_some(),
    }
}

/// Checks one serialized packet and updates the vehicle's state.
///
/// # Safety
/// `detector` must be valid; `bytes` must hold `len` bytes; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sg_detector_process(
    detector: *const SgDetector,
    bytes: *const u8,
    len: usize,
    out: *mut SgOutcome,
) -> SgStatus {
    guard(|| {
        let det = &ref_arg(detector)?.0;
        let out = out_arg(out)?;
        if bytes.is_null() {
            return Err(null());
        }
        let outcome = det.process_bytes(std::slice::from_raw_parts(bytes, len))?;
        *out = to_c(&outcome);
        Ok(())
    })
}

/// Authenticated packets the vehicle still owes; 0 for unknown vehicles or a
/// null detector.
///
/// # Safety
/// `detector` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn sg_detector_auth_remaining(detector: *const SgDetector, vehicle_id: u64) -> u32 {
    detector.as_ref().map_or(0, |d| d.0.auth_remaining(vehicle_id))
}

/// # Safety
/// `detector` must come from this library and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn sg_detector_free(detector: *mut SgDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}
