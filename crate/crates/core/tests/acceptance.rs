//! End-to-end acceptance checks against the emulated fleet. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use router_audit::audit::{AuditPolicy, CheckId, Mode, Status};
use router_audit::cli::scan_report;
use router_audit::fingerprint::fingerprint;
use router_audit::http::{ProbeRequest, RequestLog, Transport};
use router_audit::mockfleet::{bundled_fleet, start_fleet, FleetHandle};
use router_audit::payload::inspect::{element_names, extract_csrf, inspect_redress, inspect_tabjack};
use router_audit::payload::*;
use router_audit::report::{render_report, Format, Report};
use router_audit::signature::{db_stats, Credentials, SignatureDatabase};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn transport() -> Transport {
    Transport::new(Duration::from_secs(2))
}

async fn lab_report(db: &SignatureDatabase, fleet: &FleetHandle, policy: &AuditPolicy) -> Report {
    scan_report(db, policy, &fleet.audit_targets(), 8).await.0
}

/// device id -> check -> status
fn statuses(fleet: &FleetHandle, report: &Report) -> BTreeMap<String, BTreeMap<CheckId, Status>> {
    let by_url: BTreeMap<String, String> = fleet.urls().into_iter().map(|(id, u)| (u.to_string(), id)).collect();
    report
        .targets
        .iter()
        .map(|t| {
            let id = by_url[&t.base_url].clone();
            (id, t.findings.iter().map(|f| (f.check_id, f.status)).collect())
        })
        .collect()
}

fn vulnerable(s: &BTreeMap<String, BTreeMap<CheckId, Status>>, check: CheckId) -> BTreeSet<String> {
    s.iter()
        .filter(|(_, m)| m.get(&check) == Some(&Status::Vulnerable))
        .map(|(id, _)| id.clone())
        .collect()
}

fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

async fn fingerprint_identification(db: &SignatureDatabase, fleet: &FleetHandle) -> Outcome {
    let t = transport();
    let started = Instant::now();
    let mut worst = 0;
    for (id, url) in fleet.urls() {
        let d = fingerprint(&t, &url, db).await;
        ensure!(d.matched_id.as_deref() == Some(id.as_str()), "{id} identified as {:?}", d.matched_id);
        ensure!(d.probes_used <= 9, "{id}: {} probes exceeds 9", d.probes_used);
        ensure!(d.probes_used <= 4, "{id}: {} probes exceeds 4", d.probes_used);
        worst = worst.max(d.probes_used);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "fleet took {elapsed:?}");
    Ok(format!("10/10 identified, max {worst} probes, {} ms", elapsed.as_millis()))
}

async fn credential_audit(db: &SignatureDatabase, fleet: &FleetHandle) -> Outcome {
    let policy = AuditPolicy::new(Mode::Lab).with_checks([CheckId::DefaultCredentials]);
    let report = lab_report(db, fleet, &policy).await;
    let base = statuses(fleet, &report);
    let all: BTreeSet<String> = fleet.ids().into_iter().collect();
    ensure!(vulnerable(&base, CheckId::DefaultCredentials) == all, "baseline: {:?}", base);
    let fritz_url = fleet.base_url("fritzbox-2170").map_err(|e| e.to_string())?;
    let fritz = report
        .targets
        .iter()
        .find(|t| t.base_url == fritz_url.as_str())
        .and_then(|t| t.finding(CheckId::DefaultCredentials))
        .ok_or("no Fritz!Box finding")?;
    ensure!(
        fritz.description.contains("no authentication required"),
        "Fritz!Box description {:?}",
        fritz.description
    );

    let changed = Credentials::new(Some("operator"), Some("x7!changed"));
    for id in fleet.ids() {
        fleet.set_credential_override(&id, Some(changed.clone())).map_err(|e| e.to_string())?;
        let flipped = statuses(fleet, &lab_report(db, fleet, &policy).await);
        fleet.set_credential_override(&id, None).map_err(|e| e.to_string())?;
        for (other, checks) in &flipped {
            let want = if *other == id { Status::NotVulnerable } else { Status::Vulnerable };
            let got = checks[&CheckId::DefaultCredentials];
            ensure!(got == want, "override on {id}: {other} is {got:?}, expected {want:?}");
        }
    }
    Ok("10/10 Vulnerable, Fritz!Box unauthenticated, 10/10 single-device flips".into())
}

fn table_one_statistics(db: &SignatureDatabase) -> Outcome {
    let s = db_stats(db);
    let got = (
        s.admin_valued_fields,
        s.total_credential_fields,
        s.basic_auth_count,
        s.web_form_count,
        s.distinct_gateway_ips,
    );
    ensure!(got == (11, 20, 6, 4, 5), "got {s:?}");
    Ok("11/20 admin-valued, 6 BasicAuth, 4 WebForm, 5 gateways".into())
}

async fn table_two(db: &SignatureDatabase, fleet: &FleetHandle) -> Outcome {
    let report = lab_report(db, fleet, &AuditPolicy::new(Mode::Lab)).await;
    let s = statuses(fleet, &report);
    ensure!(s.len() == 10, "{} targets", s.len());
    let all: BTreeSet<String> = fleet.ids().into_iter().collect();
    ensure!(vulnerable(&s, CheckId::FrameOptionsMissing) == all, "XFO {:?}", vulnerable(&s, CheckId::FrameOptionsMissing));
    let reflected = set(&["logilink-wl0083", "buffalo-wcr-gn", "asus-rt-n12"]);
    ensure!(vulnerable(&s, CheckId::ReflectedXss) == reflected, "reflected {:?}", vulnerable(&s, CheckId::ReflectedXss));
    let stored = set(&["tplink-wr841n", "netgear-n150", "dlink-dir615", "linksys-wrt54gl", "belkin-f7d4301"]);
    ensure!(vulnerable(&s, CheckId::StoredXss) == stored, "stored {:?}", vulnerable(&s, CheckId::StoredXss));
    let tls_ok = set(&["huawei-e5331", "linksys-wrt54gl"]);
    let absent: BTreeSet<String> = all.difference(&tls_ok).cloned().collect();
    ensure!(vulnerable(&s, CheckId::TlsAbsent) == absent, "TLS absent {:?}", vulnerable(&s, CheckId::TlsAbsent));
    ensure!(vulnerable(&s, CheckId::TlsInvalidCert) == tls_ok, "TLS invalid {:?}", vulnerable(&s, CheckId::TlsInvalidCert));

    let huawei_url = fleet.base_url("huawei-e5331").map_err(|e| e.to_string())?;
    let finding = report
        .targets
        .iter()
        .find(|t| t.base_url == huawei_url.as_str())
        .and_then(|t| t.finding(CheckId::TlsInvalidCert))
        .ok_or("no Huawei TLS finding")?;
    let info = finding.evidence.iter().find_map(|e| e.tls.as_ref()).ok_or("no TLS evidence")?;
    ensure!(info.expired_at_scan, "Huawei certificate not expired: {info:?}");
    ensure!(info.cert_subject == "ipwebs.interpeak.com", "subject {:?}", info.cert_subject);
    ensure!(info.not_after.format("%Y-%m").to_string() == "2008-09", "not_after {}", info.not_after);
    Ok("XFO 10/10, reflected 3, stored 5, TLS absent 8, invalid cert {Huawei, Linksys}".into())
}

async fn listing_one_replay(fleet: &FleetHandle) -> Outcome {
    let id = "dlink-dir615";
    let base = fleet.base_url(id).map_err(|e| e.to_string())?;
    let before = fleet.fleet_state(id).map_err(|e| e.to_string())?;
    let html = gen_csrf_page(&CsrfSpec::dlink_reboot(base.as_str())).map_err(|e| e.to_string())?;
    let form = extract_csrf(&html)?;
    ensure!(form.auto_submit && form.form_count == 1, "page shape {form:?}");
    ensure!(form.spec.method == FormMethod::Post, "method {:?}", form.spec.method);
    let url = url::Url::parse(&form.spec.action_url).map_err(|e| e.to_string())?;
    let resp = transport()
        .allow_mutating(true)
        .send(ProbeRequest::post_form(url, form.spec.fields.clone()))
        .await
        .map_err(|e| e.to_string())?;
    ensure!(resp.status_code == 200, "status {}", resp.status_code);
    let after = fleet.fleet_state(id).map_err(|e| e.to_string())?;
    ensure!(before.reboot_count == 0, "fresh D-Link already rebooted {} times", before.reboot_count);
    ensure!(
        after.reboot_count == before.reboot_count + 1,
        "reboot_count {} -> {}",
        before.reboot_count,
        after.reboot_count
    );
    ensure!(after.stored_values == before.stored_values, "stored values changed");
    ensure!(after.credential_override == before.credential_override, "credentials changed");
    Ok(format!("reboot_count {} -> {}", before.reboot_count, after.reboot_count))
}

const META: &[&str] = &[
    "<", ">", "&", "\"", "'", "`", "=", "/", "\\", " ", "\n", "\r", "\t", "</script>", "<!--", "-->", "&amp;",
    "&#x27;", "a", "\u{e9}", "\u{1f600}", "javascript:", "onerror=", "<svg onload=x>", "</iframe>", "]]>",
];

fn meta(rng: &mut ChaCha8Rng, min: usize) -> String {
    let n = rng.gen_range(min..12);
    (0..n).map(|_| META[rng.gen_range(0..META.len())]).collect()
}

fn fuzz_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    // redress
    let mut r = fritzbox_redress_example();
    r.frame_url = format!("http://192.168.178.1/cgi-bin/webcm?getpage={}", meta(rng, 0));
    r.drop_value = meta(rng, 0);
    for d in &mut r.decoy_items {
        d.label = meta(rng, 0);
        d.image_ref = meta(rng, 1);
    }
    r.button_overlay.label = meta(rng, 0);
    let html = gen_uiredress_page(&r).map_err(|e| e.to_string())?;
    let report = inspect_redress(&html);
    ensure!(report.all_checks_pass(&r.frame_url, &r.drop_value), "redress checks failed for {r:?}");
    ensure!(report.button.as_ref() == Some(&r.button_overlay), "button label lost");
    ensure!(
        element_names(&html) == element_names(&gen_uiredress_page(&fritzbox_redress_example()).unwrap()),
        "redress element skeleton changed for {r:?}"
    );

    // tabjack
    let t = TabjackSpec {
        admin_url: format!("http://192.168.1.1/?{}", meta(rng, 0)),
        window_name: meta(rng, 1),
        evil_url: format!("http://evil.example/{}", meta(rng, 0)),
    };
    let (lure, rebind) = gen_tabjack_pages(&t).map_err(|e| e.to_string())?;
    let tj = inspect_tabjack(&lure, &rebind);
    ensure!(
        tj.lure_href.as_deref() == Some(t.admin_url.as_str())
            && tj.lure_target.as_deref() == Some(t.window_name.as_str())
            && tj.rebind_url.as_deref() == Some(t.evil_url.as_str())
            && tj.rebind_window.as_deref() == Some(t.window_name.as_str())
            && tj.rebind_handler_ok,
        "tabjack parse-back {tj:?} for {t:?}"
    );
    let (plain_lure, plain_rebind) = gen_tabjack_pages(&TabjackSpec {
        admin_url: "http://192.168.1.1/".into(),
        window_name: "w".into(),
        evil_url: "http://evil.example/".into(),
    })
    .map_err(|e| e.to_string())?;
    ensure!(
        element_names(&lure) == element_names(&plain_lure) && element_names(&rebind) == element_names(&plain_rebind),
        "tabjack element skeleton changed for {t:?}"
    );

    // csrf
    let c = CsrfSpec {
        action_url: format!("http://192.168.0.1/tools_system.htm?{}", meta(rng, 0)),
        method: FormMethod::Post,
        fields: (0..rng.gen_range(0..4)).map(|_| (meta(rng, 1), meta(rng, 0))).collect(),
    };
    let html = gen_csrf_page(&c).map_err(|e| e.to_string())?;
    let got = extract_csrf(&html)?;
    ensure!(got.spec == c && got.auto_submit && got.form_count == 1, "csrf parse-back for {c:?}");
    Ok(())
}

fn payload_structure() -> Outcome {
    let spec = fritzbox_redress_example();
    let report = inspect_redress(&gen_uiredress_page(&spec).map_err(|e| e.to_string())?);
    ensure!(report.overlay_rule_ok, "overlay rule");
    ensure!(report.decoys_ok("foobar"), "decoys {:?}", report.decoys);
    ensure!(report.button.as_ref() == Some(&spec.button_overlay), "button {:?}", report.button);
    ensure!(
        report.frame == Some((spec.frame_url.clone(), spec.frame_position)),
        "frame {:?}",
        report.frame
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2014);
    let mut passed = 0;
    for i in 0..200 {
        fuzz_case(&mut rng).map_err(|e| format!("fuzz case {i}: {e}"))?;
        passed += 1;
    }
    Ok(format!("4/4 structural checks, {passed}/200 fuzz cases without breakout"))
}

async fn cross_uniqueness(db: &SignatureDatabase, fleet: &FleetHandle) -> Outcome {
    let t = transport();
    let mut pairs = 0;
    let mut probes = 0;
    for (i, url) in fleet.urls() {
        for j in db.routers().iter().filter(|s| s.id != i) {
            pairs += 1;
            for path in &j.unique_resources {
                probes += 1;
                let resp = t.get(url.join(path).map_err(|e| e.to_string())?).await.map_err(|e| e.to_string())?;
                ensure!(resp.status_code != 200, "{i} answers 200 to {}'s {path}", j.id);
            }
        }
    }
    ensure!(pairs == 90, "{pairs} pairs");
    Ok(format!("{pairs}/90 ordered pairs, {probes} foreign-resource probes all non-200"))
}

fn without_timestamps(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| {
            let t = l.trim_start();
            if t.starts_with("\"scan_started\"") || t.starts_with("\"scan_finished\"") {
                "<timestamp>"
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

async fn determinism_and_safety(db: &SignatureDatabase) -> Outcome {
    let fleet = start_fleet(&bundled_fleet()).await.map_err(|e| e.to_string())?;
    let log = RequestLog::new();
    let passive = AuditPolicy::new(Mode::Passive).with_log(log.clone());
    let a = render_report(&lab_report(db, &fleet, &passive).await, Format::Json).map_err(|e| e.to_string())?;
    let b = render_report(&lab_report(db, &fleet, &passive).await, Format::Json).map_err(|e| e.to_string())?;
    ensure!(without_timestamps(&a) == without_timestamps(&b), "passive reports differ");

    let methods = log.methods();
    ensure!(!log.is_empty(), "transport log is empty");
    ensure!(methods.iter().all(|m| m == "GET" || m == "HEAD"), "transport issued {methods:?}");
    for id in fleet.ids() {
        let seen = fleet.fleet_state(&id).map_err(|e| e.to_string())?.methods_seen;
        ensure!(seen.keys().all(|m| m == "GET" || m == "HEAD"), "{id} received {seen:?}");
    }

    let lab = AuditPolicy::new(Mode::Lab);
    let c = render_report(&lab_report(db, &fleet, &lab).await, Format::Json).map_err(|e| e.to_string())?;
    let d = render_report(&lab_report(db, &fleet, &lab).await, Format::Json).map_err(|e| e.to_string())?;
    ensure!(without_timestamps(&c) == without_timestamps(&d), "lab reports differ");
    Ok(format!(
        "passive and lab reports identical modulo timestamps; {} passive requests, methods {:?}",
        log.len(),
        methods
    ))
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let db = SignatureDatabase::bundled();
    let results: Vec<(&str, Outcome)> = rt.block_on(async {
        let fleet = start_fleet(&bundled_fleet()).await.expect("fleet");
        vec![
            ("1 fingerprint identification", fingerprint_identification(&db, &fleet).await),
            ("2 credential audit", credential_audit(&db, &fleet).await),
            ("3 signature statistics", table_one_statistics(&db)),
            ("4 penetration test reproduction", table_two(&db, &fleet).await),
            ("5 CSRF reboot replay", listing_one_replay(&fleet).await),
            ("6 payload structure", payload_structure()),
            ("7 cross-uniqueness", cross_uniqueness(&db, &fleet).await),
            ("8 determinism and passive safety", determinism_and_safety(&db).await),
        ]
    });
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
