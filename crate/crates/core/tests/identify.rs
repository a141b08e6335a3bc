use std::time::Duration;

use router_audit::discovery::{discover, GatewayCandidate};
use router_audit::fingerprint::{fingerprint, probe_resource, Confidence, EvidenceKind};
use router_audit::http::{FailureKind, Transport};
use router_audit::mockfleet::{bundled_fleet, start_fleet, StaticSite};
use router_audit::signature::SignatureDatabase;
use url::Url;

fn transport() -> Transport {
    Transport::new(Duration::from_secs(2))
}

#[tokio::test]
async fn examples_from_the_tables() {
    let db = SignatureDatabase::bundled();
    let fleet = start_fleet(&bundled_fleet()).await.unwrap();
    let t = transport();

    let asus = fingerprint(&t, &fleet.base_url("asus-rt-n12").unwrap(), &db).await;
    assert_eq!(asus.matched_id.as_deref(), Some("asus-rt-n12"));
    assert_eq!(asus.probes_used, 1);
    assert_eq!(asus.evidence[0].kind, EvidenceKind::RealmMatch);

    let belkin = fingerprint(&t, &fleet.base_url("belkin-f7d4301").unwrap(), &db).await;
    assert_eq!(belkin.matched_id.as_deref(), Some("belkin-f7d4301"));
    assert!(belkin.probes_used <= 4);

    let fritz_url = fleet.base_url("fritzbox-2170").unwrap();
    let (hit, _) = probe_resource(&t, &fritz_url, "/html/de/images/fw_header.gif").await.unwrap();
    assert!(hit);
    let (hit, _) = probe_resource(&t, &fritz_url, "/images/head_logo.gif").await.unwrap();
    assert!(!hit);
}

#[tokio::test]
async fn decisions_are_sound_and_repeatable() {
    let db = SignatureDatabase::bundled();
    let fleet = start_fleet(&bundled_fleet()).await.unwrap();
    let t = transport();
    for (id, url) in fleet.urls() {
        let a = fingerprint(&t, &url, &db).await;
        let b = fingerprint(&t, &url, &db).await;
        assert_eq!(a, b, "{id}");
        assert_eq!(a.confidence, Confidence::Exact);
        assert_eq!(a.matched_id.as_deref(), Some(id.as_str()));
        assert!(a.evidence.iter().any(|e| matches!(
            e.kind,
            EvidenceKind::RealmMatch | EvidenceKind::ResourceHit | EvidenceKind::Eliminated
        )));
        let issued = a.evidence.iter().filter(|e| e.probe.is_some()).count();
        assert_eq!(issued, a.probes_used, "{id}");
    }
}

#[tokio::test]
async fn open_world_static_site_is_unidentified() {
    let db = SignatureDatabase::bundled().with_closed_world(false);
    let site = StaticSite::start("<html><body>brochure</body></html>").await.unwrap();
    let d = fingerprint(&transport(), &site.base_url, &db).await;
    assert_eq!(d.confidence, Confidence::Unidentified);
    assert_eq!(d.matched_id, None);
    assert_eq!(d.probes_used, 5);
}

#[tokio::test]
async fn open_world_probe_count_tracks_webform_entries() {
    let full = SignatureDatabase::bundled();
    let ids: Vec<&str> = full
        .routers()
        .iter()
        .map(|s| s.id.as_str())
        .filter(|id| *id != "fritzbox-2170")
        .collect();
    let db = full.subset(&ids).with_closed_world(false);
    let site = StaticSite::start("<html></html>").await.unwrap();
    let d = fingerprint(&transport(), &site.base_url, &db).await;
    assert_eq!(d.matched_id, None);
    assert_eq!(d.probes_used, 4);
}

#[tokio::test]
async fn dead_target_is_unidentified() {
    let db = SignatureDatabase::bundled();
    let url = Url::parse("http://127.0.0.1:1/").unwrap();
    let d = fingerprint(&Transport::new(Duration::from_millis(300)), &url, &db).await;
    assert_eq!(d.confidence, Confidence::Unidentified);
    assert!(d.evidence.iter().all(|e| e.kind == EvidenceKind::TransportError));
}

#[tokio::test]
async fn discovery_over_the_fleet() {
    let fleet = start_fleet(&bundled_fleet()).await.unwrap();
    let mut candidates: Vec<GatewayCandidate> = fleet.urls().into_iter().map(|(_, u)| GatewayCandidate::user(u)).collect();
    let live = discover(&transport(), &candidates, 3).await;
    assert_eq!(live.len(), 10);
    assert!(live.iter().all(|g| g.responded));
    for (g, c) in live.iter().zip(&candidates) {
        assert_eq!(g.base_url, c.base_url);
    }

    // a stopped port in the middle keeps its slot
    candidates.insert(4, GatewayCandidate::user(Url::parse("http://127.0.0.1:1/").unwrap()));
    let live = discover(&transport(), &candidates, 8).await;
    assert_eq!(live.len(), 11);
    assert!(!live[4].responded);
    assert_eq!(live[4].failure.as_ref().unwrap().kind, FailureKind::Refused);
    assert_eq!(live.iter().filter(|g| g.responded).count(), 10);
}

#[tokio::test]
async fn discovery_single_device() {
    let specs: Vec<_> = bundled_fleet().into_iter().filter(|s| s.id() == "dlink-dir615").collect();
    let fleet = start_fleet(&specs).await.unwrap();
    let candidates = vec![
        GatewayCandidate::user(fleet.base_url("dlink-dir615").unwrap()),
        GatewayCandidate::user(Url::parse("http://127.0.0.1:1/").unwrap()),
    ];
    let live = discover(&transport(), &candidates, 2).await;
    assert_eq!(live.iter().map(|g| g.responded).collect::<Vec<_>>(), [true, false]);
}

#[tokio::test]
async fn unroutable_address_does_not_respond() {
    let candidates = vec![GatewayCandidate::user(Url::parse("http://203.0.113.1/").unwrap())];
    let started = std::time::Instant::now();
    let live = discover(&Transport::new(Duration::from_millis(100)), &candidates, 1).await;
    assert!(started.elapsed() < Duration::from_secs(2));
    assert!(!live[0].responded);
    // a real network drops TEST-NET packets (timeout); some sandboxes reset them instead
    let kind = live[0].failure.as_ref().unwrap().kind;
    assert!(matches!(kind, FailureKind::Timeout | FailureKind::Reset | FailureKind::Connect), "{kind:?}");
}

#[tokio::test]
async fn closed_world_elimination_needs_a_matching_landing_page() {
    let db = SignatureDatabase::bundled();
    assert!(db.is_closed_world());
    let plain = StaticSite::start("<html><body>brochure</body></html>").await.unwrap();
    let d = fingerprint(&transport(), &plain.base_url, &db).await;
    assert_eq!(d.matched_id, None);
    assert_eq!(d.probes_used, 5);

    let named = StaticSite::start("<html><title>FRITZ!Box 2170</title></html>").await.unwrap();
    let d = fingerprint(&transport(), &named.base_url, &db).await;
    assert_eq!(d.matched_id.as_deref(), Some("fritzbox-2170"));
    assert_eq!(d.probes_used, 4);
    assert_eq!(d.evidence.last().unwrap().kind, EvidenceKind::Eliminated);
}
