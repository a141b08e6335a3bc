use std::ffi::{c_char, CStr, CString};
use std::ptr;

use router_audit_ffi::*;

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { ra_string_free(s) };
    out
}

fn last_error() -> String {
    let p = ra_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn json(s: *mut c_char) -> serde_json::Value {
    serde_json::from_str(&take(s)).unwrap()
}

#[test]
fn version_and_null_handling() {
    let v = unsafe { CStr::from_ptr(ra_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    unsafe {
        ra_string_free(ptr::null_mut());
        ra_db_free(ptr::null_mut());
        ra_fleet_free(ptr::null_mut());
        assert_eq!(ra_db_bundled(ptr::null_mut()), RaStatus::NullArgument);
        let mut out = ptr::null_mut();
        assert_eq!(ra_db_stats_json(ptr::null(), &mut out), RaStatus::NullArgument);
        assert!(last_error().contains("db"));
        assert_eq!(ra_fleet_len(ptr::null()), 0);
    }
}

#[test]
fn db_stats_through_the_abi() {
    unsafe {
        let mut db = ptr::null_mut();
        assert_eq!(ra_db_bundled(&mut db), RaStatus::Ok);
        assert!(ra_last_error().is_null());
        let mut out = ptr::null_mut();
        assert_eq!(ra_db_stats_json(db, &mut out), RaStatus::Ok);
        let stats = json(out);
        assert_eq!(stats["admin_valued_fields"], 11);
        assert_eq!(stats["total_credential_fields"], 20);
        assert_eq!(stats["basic_auth_count"], 6);
        assert_eq!(stats["web_form_count"], 4);
        assert_eq!(stats["distinct_gateway_ips"], 5);
        ra_db_free(db);

        let bad = CString::new("{\"routers\": 7}").unwrap();
        let mut db = ptr::null_mut();
        assert_eq!(ra_db_load_json(bad.as_ptr(), &mut db), RaStatus::InvalidInput);
        assert!(db.is_null());
        assert!(!last_error().is_empty());

        let invalid = [0xffu8, 0];
        assert_eq!(
            ra_db_load_json(invalid.as_ptr().cast(), &mut db),
            RaStatus::InvalidUtf8
        );
    }
}

#[test]
fn payload_generation() {
    unsafe {
        let kind = CString::new("tabjack").unwrap();
        let spec = CString::new(
            r#"{"admin_url":"http://192.168.1.1/","window_name":"admin","evil_url":"http://evil.example/"}"#,
        )
        .unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(ra_gen_payload_json(kind.as_ptr(), spec.as_ptr(), &mut out), RaStatus::Ok);
        let files = json(out);
        let names: Vec<&String> = files.as_object().unwrap().keys().collect();
        assert_eq!(names, ["tabjack_lure.html", "tabjack_rebind.html"]);

        let kind = CString::new("bogus").unwrap();
        assert_eq!(
            ra_gen_payload_json(kind.as_ptr(), spec.as_ptr(), &mut out),
            RaStatus::InvalidInput
        );
        let kind = CString::new("csrf").unwrap();
        let spec = CString::new(r#"{"action_url":"not a url","method":"POST","fields":[]}"#).unwrap();
        assert_eq!(
            ra_gen_payload_json(kind.as_ptr(), spec.as_ptr(), &mut out),
            RaStatus::InvalidInput
        );
        assert!(last_error().contains("action_url"));
    }
}

#[test]
fn fleet_lifecycle_fingerprint_and_scan() {
    unsafe {
        let mut db = ptr::null_mut();
        assert_eq!(ra_db_bundled(&mut db), RaStatus::Ok);
        let mut fleet = ptr::null_mut();
        assert_eq!(ra_fleet_start_bundled(&mut fleet), RaStatus::Ok);
        assert_eq!(ra_fleet_len(fleet), 10);

        let mut out = ptr::null_mut();
        assert_eq!(ra_fleet_urls_json(fleet, &mut out), RaStatus::Ok);
        assert_eq!(json(out).as_object().unwrap().len(), 10);

        let id = CString::new("netgear-n150").unwrap();
        assert_eq!(ra_fleet_url(fleet, id.as_ptr(), &mut out), RaStatus::Ok);
        let url = CString::new(take(out)).unwrap();
        assert_eq!(ra_fingerprint_json(db, url.as_ptr(), 2000, &mut out), RaStatus::Ok);
        let decision = json(out);
        assert_eq!(decision["matched_id"], "netgear-n150");
        assert_eq!(decision["probes_used"], 1);

        let dlink = CString::new("dlink-dir615").unwrap();
        let mut count = 99u64;
        assert_eq!(ra_fleet_reboot_count(fleet, dlink.as_ptr(), &mut count), RaStatus::Ok);
        assert_eq!(count, 0);
        assert_eq!(ra_fleet_state_json(fleet, dlink.as_ptr(), &mut out), RaStatus::Ok);
        assert_eq!(json(out)["reboot_count"], 0);

        let missing = CString::new("nope").unwrap();
        assert_eq!(
            ra_fleet_reboot_count(fleet, missing.as_ptr(), &mut count),
            RaStatus::FleetError
        );

        let mode = CString::new("passive").unwrap();
        assert_eq!(ra_fleet_scan_json(db, fleet, mode.as_ptr(), 2000, &mut out), RaStatus::Ok);
        let report = json(out);
        assert_eq!(report["targets"].as_array().unwrap().len(), 10);
        assert_eq!(report["rollup"]["vulnerable_by_check"]["FrameOptionsMissing"], 10);

        let urls = [url.as_ptr()];
        assert_eq!(ra_scan_json(db, urls.as_ptr(), 1, mode.as_ptr(), 2000, &mut out), RaStatus::Ok);
        assert_eq!(json(out)["targets"].as_array().unwrap().len(), 1);
        let bogus = CString::new("bogus").unwrap();
        assert_eq!(
            ra_scan_json(db, urls.as_ptr(), 1, bogus.as_ptr(), 2000, &mut out),
            RaStatus::InvalidInput
        );

        assert_eq!(ra_fleet_stop(fleet), RaStatus::Ok);
        assert_eq!(ra_fleet_stop(fleet), RaStatus::Ok);
        assert_eq!(ra_fingerprint_json(db, url.as_ptr(), 500, &mut out), RaStatus::Unreachable);
        assert_eq!(json(out)["matched_id"], serde_json::Value::Null);
        ra_fleet_free(fleet);
        ra_db_free(db);
    }
}

#[test]
fn fleet_from_config() {
    unsafe {
        let mut db = ptr::null_mut();
        assert_eq!(ra_db_bundled(&mut db), RaStatus::Ok);
        let config = CString::new(r#"{"version":1,"devices":[]}"#).unwrap();
        let mut fleet = ptr::null_mut();
        assert_eq!(ra_fleet_start_json(db, config.as_ptr(), &mut fleet), RaStatus::Ok);
        assert_eq!(ra_fleet_len(fleet), 0);
        ra_fleet_free(fleet);

        let config = CString::new(r#"{"version":1,"devices":[{"signature":"no-such-router"}]}"#).unwrap();
        let mut fleet = ptr::null_mut();
        assert_eq!(ra_fleet_start_json(db, config.as_ptr(), &mut fleet), RaStatus::InvalidInput);
        assert!(last_error().contains("no-such-router"));
        ra_db_free(db);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/router_audit.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct RaFleet RaFleet;"));
    assert!(header.contains("RA_STATUS_OK = 0"));
}
