//! C ABI for router-audit.
//!
//! Databases and fleets are opaque handles. Results that carry structure are
//! returned as NUL-terminated JSON strings owned by the caller and released
//! with `ra_string_free`. Every function returns an `RaStatus`; on failure
//! `ra_last_error` describes what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;
use std::time::Duration;

use router_audit::audit::{AuditPolicy, AuditTarget, Mode};
use router_audit::cli::scan_report;
use router_audit::discovery::{parse_target, DEFAULT_PARALLELISM};
use router_audit::fingerprint::fingerprint;
use router_audit::http::Transport;
use router_audit::mockfleet::{bundled_fleet, load_fleet_config, start_fleet, FleetHandle};
use router_audit::payload::{generate_files, PayloadKind};
use router_audit::report::{render_report, Format};
use router_audit::signature::{db_stats, load_signatures, SignatureDatabase};
use tokio::runtime::Runtime;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed JSON, URL, mode or payload spec.
    InvalidInput = 3,
    /// The target did not answer or could not be identified.
    Unreachable = 4,
    /// A mock fleet failed to start or an id was unknown.
    FleetError = 5,
    /// A panic or runtime failure inside the library.
    Internal = 6,
}

/// A loaded signature database.
pub struct RaDatabase {
    db: SignatureDatabase,
}

/// A running emulated router fleet.
pub struct RaFleet {
    handle: FleetHandle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn runtime() -> Result<&'static Runtime, Failure> {
    static RT: OnceLock<Result<Runtime, String>> = OnceLock::new();
    RT.get_or_init(|| {
        tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(|e| Failure(RaStatus::Internal, format!("tokio runtime: {e}")))
}

struct Failure(RaStatus, String);

fn fail(status: RaStatus, e: impl std::fmt::Display) -> Failure {
    Failure(status, e.to_string())
}

fn set_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            RaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(_) => {
            set_error(Some("panic inside router-audit".into()));
            RaStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(RaStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(RaStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(RaStatus::NullArgument, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(RaStatus::NullArgument, "out is null"));
    }
    *out = value;
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| fail(RaStatus::Internal, e))?;
    put(out, c.into_raw())
}

fn timeout_of(ms: u32) -> Duration {
    if ms == 0 {
        router_audit::http::DEFAULT_TIMEOUT
    } else {
        Duration::from_millis(u64::from(ms))
    }
}

/// Library version as a static string. Do not free.
#[no_mangle]
pub extern "C" fn ra_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread. Do not free.
#[no_mangle]
pub extern "C" fn ra_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ra_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the signature database shipped with the library.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_db_bundled(out: *mut *mut RaDatabase) -> RaStatus {
    guard(|| {
        let db = Box::new(RaDatabase {
            db: SignatureDatabase::bundled(),
        });
        put(out, Box::into_raw(db))
    })
}

/// Loads a signature database from `signatures.json` text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_db_load_json(json: *const c_char, out: *mut *mut RaDatabase) -> RaStatus {
    guard(|| {
        let raw = str_arg(json, "json")?;
        let db = load_signatures(raw.as_bytes()).map_err(|e| fail(RaStatus::InvalidInput, e))?;
        put(out, Box::into_raw(Box::new(RaDatabase { db })))
    })
}

/// # Safety
/// `db` must come from `ra_db_*` and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ra_db_free(db: *mut RaDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Table statistics of the database as a JSON object.
///
/// # Safety
/// `db` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_db_stats_json(db: *const RaDatabase, out: *mut *mut c_char) -> RaStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        let json = serde_json::to_string(&db_stats(&db.db)).map_err(|e| fail(RaStatus::Internal, e))?;
        put_string(out, json)
    })
}

/// Fingerprints one target and writes the decision as JSON. Returns
/// `Unreachable` when the device was not identified; `out` is still set.
/// `timeout_ms` of 0 selects the default timeout.
///
/// # Safety
/// `db` must be a live handle, `url` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fingerprint_json(
    db: *const RaDatabase,
    url: *const c_char,
    timeout_ms: u32,
    out: *mut *mut c_char,
) -> RaStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        let url = parse_target(str_arg(url, "url")?).map_err(|e| fail(RaStatus::InvalidInput, e))?;
        let transport = Transport::new(timeout_of(timeout_ms));
        let decision = runtime()?.block_on(fingerprint(&transport, &url, &db.db));
        let json = serde_json::to_string(&decision).map_err(|e| fail(RaStatus::Internal, e))?;
        let exact = decision.is_exact();
        put_string(out, json)?;
        if exact {
            Ok(())
        } else {
            Err(fail(RaStatus::Unreachable, format!("{url}: unidentified")))
        }
    })
}

fn scan(db: &SignatureDatabase, targets: &[AuditTarget], mode: &str, timeout_ms: u32) -> Result<String, Failure> {
    let mode: Mode = mode.parse().map_err(|e| fail(RaStatus::InvalidInput, e))?;
    let policy = AuditPolicy::new(mode).with_timeout(timeout_of(timeout_ms));
    let (report, _) = runtime()?.block_on(scan_report(db, &policy, targets, DEFAULT_PARALLELISM));
    let bytes = render_report(&report, Format::Json).map_err(|e| fail(RaStatus::Internal, e))?;
    String::from_utf8(bytes).map_err(|e| fail(RaStatus::Internal, e))
}

/// Scans `count` target URLs and writes the JSON report. `mode` is one of
/// passive, active or lab.
///
/// # Safety
/// `urls` must point to `count` NUL-terminated strings; `db`, `mode` and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ra_scan_json(
    db: *const RaDatabase,
    urls: *const *const c_char,
    count: usize,
    mode: *const c_char,
    timeout_ms: u32,
    out: *mut *mut c_char,
) -> RaStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        if urls.is_null() && count > 0 {
            return Err(fail(RaStatus::NullArgument, "urls is null"));
        }
        let mut targets = Vec::with_capacity(count);
        for i in 0..count {
            let raw = str_arg(*urls.add(i), "urls[i]")?;
            targets.push(AuditTarget::new(parse_target(raw).map_err(|e| fail(RaStatus::InvalidInput, e))?));
        }
        let json = scan(&db.db, &targets, str_arg(mode, "mode")?, timeout_ms)?;
        put_string(out, json)
    })
}

/// Generates proof-of-concept pages. `kind` is csrf, redress or tabjack;
/// the result is a JSON object mapping file name to HTML.
///
/// # Safety
/// `kind` and `spec_json` must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_gen_payload_json(
    kind: *const c_char,
    spec_json: *const c_char,
    out: *mut *mut c_char,
) -> RaStatus {
    guard(|| {
        let kind: PayloadKind = str_arg(kind, "kind")?
            .parse()
            .map_err(|e| fail(RaStatus::InvalidInput, e))?;
        let files = generate_files(kind, str_arg(spec_json, "spec_json")?.as_bytes())
            .map_err(|e| fail(RaStatus::InvalidInput, e))?;
        let map: serde_json::Map<String, serde_json::Value> =
            files.into_iter().map(|(name, html)| (name.to_string(), html.into())).collect();
        put_string(out, serde_json::Value::Object(map).to_string())
    })
}

/// Starts the shipped ten-device fleet on loopback.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_start_bundled(out: *mut *mut RaFleet) -> RaStatus {
    guard(|| {
        let handle = runtime()?
            .block_on(start_fleet(&bundled_fleet()))
            .map_err(|e| fail(RaStatus::FleetError, e))?;
        put(out, Box::into_raw(Box::new(RaFleet { handle })))
    })
}

/// Starts a fleet from `fleet.json` text, resolving signature ids in `db`.
///
/// # Safety
/// `db` must be a live handle, `config` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_start_json(
    db: *const RaDatabase,
    config: *const c_char,
    out: *mut *mut RaFleet,
) -> RaStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        let specs = load_fleet_config(str_arg(config, "config")?.as_bytes(), &db.db)
            .map_err(|e| fail(RaStatus::InvalidInput, e))?;
        let handle = runtime()?
            .block_on(start_fleet(&specs))
            .map_err(|e| fail(RaStatus::FleetError, e))?;
        put(out, Box::into_raw(Box::new(RaFleet { handle })))
    })
}

/// Number of devices in the fleet, or 0 for a null handle.
///
/// # Safety
/// `fleet` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_len(fleet: *const RaFleet) -> usize {
    fleet.as_ref().map_or(0, |f| f.handle.len())
}

/// JSON object mapping device id to base URL.
///
/// # Safety
/// `fleet` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_urls_json(fleet: *const RaFleet, out: *mut *mut c_char) -> RaStatus {
    guard(|| {
        let fleet = ref_arg(fleet, "fleet")?;
        let json = serde_json::to_string(&fleet.handle.url_map()).map_err(|e| fail(RaStatus::Internal, e))?;
        put_string(out, json)
    })
}

/// Base URL of one device.
///
/// # Safety
/// `fleet` must be a live handle, `id` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_url(fleet: *const RaFleet, id: *const c_char, out: *mut *mut c_char) -> RaStatus {
    guard(|| {
        let fleet = ref_arg(fleet, "fleet")?;
        let url = fleet
            .handle
            .base_url(str_arg(id, "id")?)
            .map_err(|e| fail(RaStatus::FleetError, e))?;
        put_string(out, url.to_string())
    })
}

/// State snapshot of one device as JSON.
///
/// # Safety
/// `fleet` must be a live handle, `id` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_state_json(
    fleet: *const RaFleet,
    id: *const c_char,
    out: *mut *mut c_char,
) -> RaStatus {
    guard(|| {
        let fleet = ref_arg(fleet, "fleet")?;
        let snap = fleet
            .handle
            .fleet_state(str_arg(id, "id")?)
            .map_err(|e| fail(RaStatus::FleetError, e))?;
        let json = serde_json::to_string(&snap).map_err(|e| fail(RaStatus::Internal, e))?;
        put_string(out, json)
    })
}

/// Reboot counter of one device.
///
/// # Safety
/// `fleet` must be a live handle, `id` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_reboot_count(fleet: *const RaFleet, id: *const c_char, out: *mut u64) -> RaStatus {
    guard(|| {
        let fleet = ref_arg(fleet, "fleet")?;
        let snap = fleet
            .handle
            .fleet_state(str_arg(id, "id")?)
            .map_err(|e| fail(RaStatus::FleetError, e))?;
        if out.is_null() {
            return Err(fail(RaStatus::NullArgument, "out is null"));
        }
        *out = snap.reboot_count;
        Ok(())
    })
}

/// Scans every device of a running fleet and writes the JSON report.
///
/// # Safety
/// `db` and `fleet` must be live handles, `mode` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_scan_json(
    db: *const RaDatabase,
    fleet: *const RaFleet,
    mode: *const c_char,
    timeout_ms: u32,
    out: *mut *mut c_char,
) -> RaStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        let fleet = ref_arg(fleet, "fleet")?;
        let json = scan(&db.db, &fleet.handle.audit_targets(), str_arg(mode, "mode")?, timeout_ms)?;
        put_string(out, json)
    })
}

/// Closes every listener. Safe to call more than once.
///
/// # Safety
/// `fleet` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_stop(fleet: *mut RaFleet) -> RaStatus {
    guard(|| {
        let fleet = fleet
            .as_mut()
            .ok_or_else(|| fail(RaStatus::NullArgument, "fleet is null"))?;
        runtime()?.block_on(fleet.handle.stop());
        Ok(())
    })
}

/// Stops the fleet if needed and releases the handle.
///
/// # Safety
/// `fleet` must come from `ra_fleet_start_*` and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ra_fleet_free(fleet: *mut RaFleet) {
    if fleet.is_null() {
        return;
    }
    let mut fleet = Box::from_raw(fleet);
    if let Ok(rt) = runtime() {
        rt.block_on(fleet.handle.stop());
    }
}
