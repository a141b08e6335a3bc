//! Weakness checks against a (usually fingerprinted) router.
//!
//! An audit first collects a fixed baseline of pages (the root page, the admin
//! page, the device's form pages, and in active modes the result of logging in
//! with the default credentials). Every check reads from that baseline or
//! issues its own requests, so enabling or disabling one check never changes
//! what another one sees.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use crate::fingerprint::{parse_basic_realm, FingerprintDecision};
use crate::http::{join_path, EvidenceRef, FailureKind, ProbeRequest, ProbeResult, RequestLog, Transport, TransportError};
use crate::payload::inspect::{extract_forms, FormInfo};
use crate::signature::{AuthMethod, Credentials, ProbePoint, RouterSignature, SignatureDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckId {
    DefaultCredentials,
    FrameOptionsMissing,
    ReflectedXss,
    StoredXss,
    TlsAbsent,
    TlsInvalidCert,
    CookieFlags,
    CsrfTokenAbsent,
    InfoLeakRealm,
}

impl CheckId {
    pub const ALL: [CheckId; 9] = [
        CheckId::DefaultCredentials,
        CheckId::FrameOptionsMissing,
        CheckId::ReflectedXss,
        CheckId::StoredXss,
        CheckId::TlsAbsent,
        CheckId::TlsInvalidCert,
        CheckId::CookieFlags,
        CheckId::CsrfTokenAbsent,
        CheckId::InfoLeakRealm,
    ];

    pub fn severity(self) -> Severity {
        match self {
            CheckId::DefaultCredentials => Severity::Critical,
            CheckId::ReflectedXss | CheckId::StoredXss => Severity::High,
            CheckId::FrameOptionsMissing
            | CheckId::CsrfTokenAbsent
            | CheckId::TlsAbsent
            | CheckId::TlsInvalidCert => Severity::Medium,
            CheckId::CookieFlags => Severity::Low,
            CheckId::InfoLeakRealm => Severity::Info,
        }
    }

    /// Weakness class identifiers for the check.
    pub fn reference(self) -> &'static str {
        match self {
            CheckId::DefaultCredentials => "CWE-1392",
            CheckId::FrameOptionsMissing => "CWE-1021; RFC 7034",
            CheckId::ReflectedXss | CheckId::StoredXss => "CWE-79",
            CheckId::TlsAbsent => "CWE-319",
            CheckId::TlsInvalidCert => "CWE-295",
            CheckId::CookieFlags => "CWE-1004; CWE-614",
            CheckId::CsrfTokenAbsent => "CWE-352",
            CheckId::InfoLeakRealm => "CWE-200",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    Vulnerable,
    NotVulnerable,
    NotApplicable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub check_id: CheckId,
    pub severity: Severity,
    pub status: Status,
    pub description: String,
    pub evidence: Vec<EvidenceRef>,
    pub reference: String,
}

impl AuditFinding {
    pub fn new(check_id: CheckId, status: Status, description: impl Into<String>, evidence: Vec<EvidenceRef>) -> Self {
        Self {
            check_id,
            severity: check_id.severity(),
            status,
            description: description.into(),
            evidence,
            reference: check_id.reference().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// GET/HEAD only, no login attempts, no injected input.
    Passive,
    /// Adds login attempts and reflection probes on non-mutating endpoints.
    ActiveSafe,
    /// Everything, including state-changing requests. Owned or emulated devices only.
    Lab,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "passive" => Ok(Mode::Passive),
            "active" | "active_safe" | "active-safe" => Ok(Mode::ActiveSafe),
            "lab" => Ok(Mode::Lab),
            other => Err(format!("unknown mode {other:?} (expected passive, active or lab)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditPolicy {
    pub mode: Mode,
    pub enabled: BTreeSet<CheckId>,
    pub timeout: Duration,
    /// Records every request issued under this policy.
    pub log: Option<Arc<RequestLog>>,
}

impl AuditPolicy {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            enabled: CheckId::ALL.into_iter().collect(),
            timeout: crate::http::DEFAULT_TIMEOUT,
            log: None,
        }
    }

    pub fn with_log(mut self, log: Arc<RequestLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_checks(mut self, checks: impl IntoIterator<Item = CheckId>) -> Self {
        self.enabled = checks.into_iter().collect();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// A transport whose method guard matches the mode.
    pub fn transport(&self) -> Transport {
        self.read_only_transport().allow_mutating(self.mode >= Mode::ActiveSafe)
    }

    /// A GET/HEAD-only transport sharing the policy's timeout and log.
    pub fn read_only_transport(&self) -> Transport {
        let t = Transport::new(self.timeout);
        match &self.log {
            Some(log) => t.with_log(log.clone()),
            None => t,
        }
    }

    fn may_post(&self, sig: Option<&RouterSignature>, path: &str) -> bool {
        match self.mode {
            Mode::Passive => false,
            Mode::Lab => true,
            Mode::ActiveSafe => !sig.is_some_and(|s| s.audit.mutating_paths.iter().any(|p| p == path)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditTarget {
    pub base_url: Url,
    /// HTTPS ports to try instead of the signature's list.
    pub tls_ports: Option<Vec<u16>>,
    /// Credentials for authenticated probing, when not the defaults.
    pub credentials: Option<Credentials>,
    pub extra_probe_points: Vec<ProbePoint>,
}

impl AuditTarget {
    pub fn new(base_url: Url) -> Self {
        Self {
            base_url,
            tls_ports: None,
            credentials: None,
            extra_probe_points: Vec::new(),
        }
    }
}

/// The inert reflection marker for one check and injection point.
pub fn xss_marker(check: CheckId, path: &str, param: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{check:?}\0{path}\0{param}"));
    let nonce = hex::encode(h.finalize());
    format!("zq<\"'x>qz-{}", &nonce[..10])
}

/// True when the marker comes back with any of `<`, `>`, `"` or `'` left raw.
/// Encoders replace each of them with an entity, so a raw one between the
/// `zq` head and the nonce tail means that character went through unencoded.
pub fn reflects_unencoded(body: &str, marker: &str) -> bool {
    let Some(tail_at) = marker.rfind("qz-") else {
        return body.contains(marker);
    };
    let tail = &marker[tail_at..];
    body.match_indices(tail).any(|(i, _)| {
        let window_start = i.saturating_sub(64);
        let window = body.get(window_start..i).unwrap_or("");
        window
            .rfind("zq")
            .is_some_and(|h| window[h + 2..].contains(['<', '>', '"', '\'']))
    })
}

pub fn frame_options_protects(value: &str) -> bool {
    let v = value.trim();
    v.eq_ignore_ascii_case("DENY") || v.eq_ignore_ascii_case("SAMEORIGIN")
}

/// Inspects frame protection across pages; `pages` pairs each page with its outcome.
pub fn check_frame_options(pages: &[Result<&ProbeResult, (&Url, &TransportError)>]) -> AuditFinding {
    let id = CheckId::FrameOptionsMissing;
    let mut evidence = Vec::new();
    let mut seen = 0;
    for page in pages {
        match page {
            Ok(p) => {
                seen += 1;
                let xfo = p.header("x-frame-options");
                if let Some(v) = xfo.filter(|v| frame_options_protects(v)) {
                    return AuditFinding::new(
                        id,
                        Status::NotVulnerable,
                        format!("X-Frame-Options: {v}"),
                        vec![p.evidence(Some(format!("X-Frame-Options: {v}")))],
                    );
                }
                let detail = match xfo {
                    Some(v) => format!("unrecognized X-Frame-Options value {v:?}"),
                    None => "no X-Frame-Options header".to_string(),
                };
                evidence.push(p.evidence(Some(detail)));
            }
            Err((url, e)) => evidence.push(EvidenceRef::failed("GET", url, e)),
        }
    }
    if seen == 0 {
        return AuditFinding::new(id, Status::Inconclusive, "no page could be fetched", evidence);
    }
    AuditFinding::new(
        id,
        Status::Vulnerable,
        "pages can be framed: no X-Frame-Options DENY or SAMEORIGIN",
        evidence,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetCookie {
    pub name: String,
    pub http_only: bool,
    pub secure: bool,
}

pub fn parse_set_cookie(header: &str) -> Option<SetCookie> {
    let mut parts = header.split(';');
    let (name, _) = parts.next()?.split_once('=')?;
    let mut c = SetCookie {
        name: name.trim().to_string(),
        http_only: false,
        secure: false,
    };
    for attr in parts {
        let key = attr.split('=').next().unwrap_or_default().trim();
        if key.eq_ignore_ascii_case("httponly") {
            c.http_only = true;
        } else if key.eq_ignore_ascii_case("secure") {
            c.secure = true;
        }
    }
    Some(c)
}

/// Cookie names that look like they carry a session.
pub fn is_session_cookie(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    ["sid", "sess", "auth", "token", "login", "uid"].iter().any(|k| n.contains(k))
}

pub fn check_cookie_flags(responses: &[&ProbeResult], https_available: bool) -> AuditFinding {
    let id = CheckId::CookieFlags;
    let mut any = false;
    let mut bad = Vec::new();
    let mut good = Vec::new();
    for r in responses {
        for raw in r.header_all("set-cookie") {
            let Some(c) = parse_set_cookie(raw) else { continue };
            any = true;
            if !is_session_cookie(&c.name) {
                continue;
            }
            let mut missing = Vec::new();
            if !c.http_only {
                missing.push("HttpOnly");
            }
            if !c.secure && https_available {
                missing.push("Secure");
            }
            if missing.is_empty() {
                good.push(r.evidence(Some(format!("cookie {} flagged", c.name))));
            } else {
                bad.push(r.evidence(Some(format!("cookie {} lacks {}", c.name, missing.join(", ")))));
            }
        }
    }
    if !any {
        return AuditFinding::new(id, Status::NotApplicable, "no cookies set", Vec::new());
    }
    if !bad.is_empty() {
        bad.dedup_by(|a, b| a.url == b.url && a.detail == b.detail);
        return AuditFinding::new(id, Status::Vulnerable, "session cookie without protective flags", bad);
    }
    good.dedup_by(|a, b| a.url == b.url && a.detail == b.detail);
    AuditFinding::new(id, Status::NotVulnerable, "session cookies carry the required flags", good)
}

const TOKEN_MIN_LEN: usize = 16;

/// A page fetched twice, to tell per-request tokens from static hidden fields.
#[derive(Debug, Clone)]
pub struct FormPage<'a> {
    pub first: &'a ProbeResult,
    pub second: Option<&'a ProbeResult>,
}

fn form_is_login(form: &FormInfo) -> bool {
    form.inputs.iter().any(|(t, _, _)| t == "password")
}

fn form_path(form: &FormInfo, page_url: &Url) -> Option<String> {
    let action = form.action.as_deref().unwrap_or("");
    page_url.join(action).ok().map(|u| u.path().to_string())
}

fn has_token(form: &FormInfo, refetched: Option<&FormInfo>) -> bool {
    form.inputs.iter().any(|(t, name, value)| {
        t == "hidden"
            && value.chars().count() >= TOKEN_MIN_LEN
            && refetched.is_some_and(|f| {
                f.inputs
                    .iter()
                    .find(|(t2, n2, _)| t2 == "hidden" && n2 == name)
                    .is_some_and(|(_, _, v2)| v2 != value)
            })
    })
}

/// Flags state-changing forms that carry no per-request token. Login forms are
/// not considered.
pub fn check_csrf_tokens(pages: &[FormPage<'_>], mutating_paths: &[String]) -> AuditFinding {
    let id = CheckId::CsrfTokenAbsent;
    let mut evidence = Vec::new();
    let mut protected = Vec::new();
    let mut forms_seen = 0;
    for page in pages {
        let forms = extract_forms(&page.first.body_text());
        let again = page.second.map(|p| extract_forms(&p.body_text())).unwrap_or_default();
        let url = Some(&page.first.url);
        for (i, form) in forms.iter().enumerate() {
            if form_is_login(form) {
                continue;
            }
            forms_seen += 1;
            let path = url.and_then(|u| form_path(form, u)).unwrap_or_default();
            let changing = form.method == "POST" || mutating_paths.contains(&path);
            if !changing {
                continue;
            }
            if has_token(form, again.get(i)) {
                protected.push(page.first.evidence(Some(format!("form to {path} carries a token"))));
            } else {
                let fields: Vec<&str> = form.inputs.iter().map(|(_, n, _)| n.as_str()).collect();
                evidence.push(page.first.evidence(Some(format!(
                    "{} form to {path} without token (fields: {})",
                    form.method,
                    fields.join(", ")
                ))));
            }
        }
    }
    if forms_seen == 0 {
        return AuditFinding::new(id, Status::NotApplicable, "no forms found", Vec::new());
    }
    if !evidence.is_empty() {
        return AuditFinding::new(id, Status::Vulnerable, "state-changing form without anti-CSRF token", evidence);
    }
    AuditFinding::new(id, Status::NotVulnerable, "all state-changing forms carry tokens", protected)
}

/// Manufacturer and model tokens the realm gives away.
pub fn leaked_tokens(realm: &str, sig: &RouterSignature) -> Vec<String> {
    let lower = realm.to_lowercase();
    [&sig.manufacturer, &sig.model]
        .into_iter()
        .filter(|t| !t.is_empty() && lower.contains(&t.to_lowercase()))
        .cloned()
        .collect()
}

pub fn check_info_leakage(realm: Option<&str>, sig: Option<&RouterSignature>, db: &SignatureDatabase, probe: Option<&ProbeResult>) -> AuditFinding {
    let id = CheckId::InfoLeakRealm;
    let Some(realm) = realm else {
        return AuditFinding::new(id, Status::NotApplicable, "no Basic realm announced", Vec::new());
    };
    let candidates: Vec<&RouterSignature> = match sig {
        Some(s) => vec![s],
        None => db.routers().iter().collect(),
    };
    let mut leaked: Vec<String> = Vec::new();
    for s in candidates {
        for t in leaked_tokens(realm, s) {
            if !leaked.contains(&t) {
                leaked.push(t);
            }
        }
    }
    let evidence: Vec<EvidenceRef> = probe.map(|p| p.evidence(Some(format!("realm {realm:?}")))).into_iter().collect();
    if leaked.is_empty() || evidence.is_empty() {
        return AuditFinding::new(id, Status::NotVulnerable, format!("realm {realm:?} names no vendor or model"), evidence);
    }
    let evidence = evidence
        .into_iter()
        .map(|mut e| {
            e.detail = Some(format!("realm {realm:?} leaks {}", leaked.join(", ")));
            e
        })
        .collect();
    AuditFinding::new(
        id,
        Status::Vulnerable,
        format!("authentication realm reveals {}", leaked.join(", ")),
        evidence,
    )
}

#[derive(Debug, Clone)]
enum LoginOutcome {
    Accepted,
    NoAuthRequired,
    Rejected,
    Skipped(String),
    Failed,
}

#[derive(Debug, Clone)]
struct LoginAttempt {
    outcome: LoginOutcome,
    evidence: Vec<EvidenceRef>,
    auth_headers: Vec<(String, String)>,
    responses: Vec<ProbeResult>,
}

fn looks_authenticated(body: &str, sig: &RouterSignature) -> bool {
    match sig.login_form.as_ref().and_then(|f| f.authenticated_marker.as_deref()) {
        Some(marker) => body.contains(marker),
        None => !extract_forms(body).iter().any(form_is_login),
    }
}

fn cookie_header(resp: &ProbeResult) -> Option<String> {
    let pairs: Vec<String> = resp
        .header_all("set-cookie")
        .filter_map(|c| c.split(';').next())
        .map(|c| c.trim().to_string())
        .collect();
    (!pairs.is_empty()).then(|| pairs.join("; "))
}

struct Auditor<'a> {
    transport: &'a Transport,
    policy: &'a AuditPolicy,
    target: &'a AuditTarget,
    sig: Option<&'a RouterSignature>,
}

type Fetched = Result<ProbeResult, (Url, TransportError)>;

impl Auditor<'_> {
    async fn get(&self, path: &str, headers: &[(String, String)]) -> Fetched {
        let url = join_path(&self.target.base_url, path);
        self.transport
            .send(ProbeRequest::get(url.clone()).headers(headers.iter().cloned()))
            .await
            .map_err(|e| (url, e))
    }

    async fn post(&self, path: &str, fields: Vec<(String, String)>, headers: &[(String, String)]) -> Fetched {
        let url = join_path(&self.target.base_url, path);
        if !self.policy.may_post(self.sig, path) {
            return Err((
                url.clone(),
                TransportError {
                    kind: FailureKind::PolicyViolation,
                    method: "POST".into(),
                    url: url.to_string(),
                    message: format!("POST to {path} not permitted in {:?} mode", self.policy.mode),
                },
            ));
        }
        self.transport
            .send(ProbeRequest::post_form(url.clone(), fields).headers(headers.iter().cloned()))
            .await
            .map_err(|e| (url, e))
    }

    async fn attempt_login(&self, sig: &RouterSignature, creds: &Credentials) -> LoginAttempt {
        let admin = sig.audit.admin_path.as_str();
        let mut attempt = LoginAttempt {
            outcome: LoginOutcome::Failed,
            evidence: Vec::new(),
            auth_headers: Vec::new(),
            responses: Vec::new(),
        };

        if creds.is_empty() {
            match self.get(admin, &[]).await {
                Ok(p) => {
                    let open = p.status_code == 200 && looks_authenticated(&p.body_text(), sig);
                    attempt.evidence.push(p.evidence(Some(if open {
                        "admin page served without login".to_string()
                    } else {
                        "admin page requires login".to_string()
                    })));
                    attempt.outcome = if open {
                        LoginOutcome::NoAuthRequired
                    } else {
                        LoginOutcome::Rejected
                    };
                    attempt.responses.push(p);
                }
                Err((url, e)) => attempt.evidence.push(EvidenceRef::failed("GET", &url, &e)),
            }
            return attempt;
        }

        match sig.auth_method {
            AuthMethod::BasicAuth => {
                let headers = vec![("Authorization".to_string(), creds.basic_header())];
                match self.get(admin, &headers).await {
                    Ok(p) => {
                        let ok = !matches!(p.status_code, 401 | 403);
                        attempt.evidence.push(p.evidence(Some(format!(
                            "Basic credentials answered with {}",
                            p.status_code
                        ))));
                        if ok {
                            attempt.outcome = LoginOutcome::Accepted;
                            attempt.auth_headers = headers;
                        } else {
                            attempt.outcome = LoginOutcome::Rejected;
                        }
                        attempt.responses.push(p);
                    }
                    Err((url, e)) => attempt.evidence.push(EvidenceRef::failed("GET", &url, &e)),
                }
            }
            AuthMethod::WebForm => {
                let Some(form) = &sig.login_form else {
                    attempt.outcome = LoginOutcome::Skipped("no login form known".into());
                    return attempt;
                };
                if !self.policy.may_post(Some(sig), &form.action) {
                    attempt.outcome = LoginOutcome::Skipped(format!(
                        "login endpoint {} is state-changing; lab mode required",
                        form.action
                    ));
                    return attempt;
                }
                let mut fields = Vec::new();
                if let Some(f) = &form.username_field {
                    fields.push((f.clone(), creds.username.clone().unwrap_or_default()));
                }
                if let Some(f) = &form.password_field {
                    fields.push((f.clone(), creds.password.clone().unwrap_or_default()));
                }
                match self.post(&form.action, fields, &[]).await {
                    Ok(p) => {
                        let ok = (200..400).contains(&p.status_code) && looks_authenticated(&p.body_text(), sig);
                        attempt.evidence.push(p.evidence(Some(if ok {
                            "login form accepted the credentials".to_string()
                        } else {
                            "login form rejected the credentials".to_string()
                        })));
                        if ok {
                            attempt.outcome = LoginOutcome::Accepted;
                            if let Some(c) = cookie_header(&p) {
                                attempt.auth_headers.push(("Cookie".into(), c));
                            }
                        } else {
                            attempt.outcome = LoginOutcome::Rejected;
                        }
                        attempt.responses.push(p);
                    }
                    Err((url, e)) => attempt.evidence.push(EvidenceRef::failed("POST", &url, &e)),
                }
            }
        }
        attempt
    }

    fn credentials_finding(&self, attempt: Option<&LoginAttempt>) -> AuditFinding {
        let id = CheckId::DefaultCredentials;
        if self.policy.mode < Mode::ActiveSafe {
            return AuditFinding::new(id, Status::NotApplicable, "login attempts disabled in passive mode", Vec::new());
        }
        let (Some(sig), Some(attempt)) = (self.sig, attempt) else {
            return AuditFinding::new(id, Status::NotApplicable, "device not identified; no default credentials known", Vec::new());
        };
        let creds = sig.default_credentials();
        let shown = |s: &Option<String>| match s {
            None => "-".to_string(),
            Some(v) if v.is_empty() => "(empty)".to_string(),
            Some(v) => v.clone(),
        };
        let ev = attempt.evidence.clone();
        match &attempt.outcome {
            LoginOutcome::NoAuthRequired => AuditFinding::new(id, Status::Vulnerable, "no authentication required", ev),
            LoginOutcome::Accepted => AuditFinding::new(
                id,
                Status::Vulnerable,
                format!(
                    "default credentials accepted (username {}, password {})",
                    shown(&creds.username),
                    shown(&creds.password)
                ),
                ev,
            ),
            LoginOutcome::Rejected => AuditFinding::new(id, Status::NotVulnerable, "default credentials rejected", ev),
            LoginOutcome::Skipped(reason) => AuditFinding::new(id, Status::NotApplicable, reason.clone(), ev),
            LoginOutcome::Failed => AuditFinding::new(id, Status::Inconclusive, "login attempt failed", ev),
        }
    }

    async fn reflected_xss(&self, headers: &[(String, String)]) -> AuditFinding {
        let id = CheckId::ReflectedXss;
        if self.policy.mode < Mode::ActiveSafe {
            return AuditFinding::new(id, Status::NotApplicable, "input probes disabled in passive mode", Vec::new());
        }
        let mut points: Vec<ProbePoint> = self.sig.map(|s| s.audit.probe_points.clone()).unwrap_or_default();
        points.extend(self.target.extra_probe_points.iter().cloned());
        if points.is_empty() {
            return AuditFinding::new(id, Status::NotApplicable, "no probe points", Vec::new());
        }
        let mut hits = Vec::new();
        let mut clean = Vec::new();
        let mut failed = 0;
        for pt in &points {
            let mutating = self.sig.is_some_and(|s| s.audit.mutating_paths.contains(&pt.path));
            if mutating && self.policy.mode < Mode::Lab {
                continue;
            }
            let marker = xss_marker(id, &pt.path, &pt.param);
            let mut url = join_path(&self.target.base_url, &pt.path);
            url.query_pairs_mut().append_pair(&pt.param, &marker);
            match self
                .transport
                .send(ProbeRequest::get(url.clone()).headers(headers.iter().cloned()))
                .await
            {
                Ok(p) => {
                    if reflects_unencoded(&p.body_text(), &marker) {
                        hits.push(p.evidence(Some(format!("parameter {} reflected unencoded", pt.param))));
                    } else {
                        clean.push(p.evidence(Some(format!("parameter {} not reflected raw", pt.param))));
                    }
                }
                Err(e) => {
                    failed += 1;
                    clean.push(EvidenceRef::failed("GET", &url, &e));
                }
            }
        }
        if !hits.is_empty() {
            return AuditFinding::new(id, Status::Vulnerable, "input reflected without encoding", hits);
        }
        if failed > 0 {
            return AuditFinding::new(id, Status::Inconclusive, "some probe points could not be fetched", clean);
        }
        if clean.is_empty() {
            return AuditFinding::new(id, Status::NotApplicable, "all probe points are state-changing", clean);
        }
        AuditFinding::new(id, Status::NotVulnerable, "no unencoded reflection", clean)
    }

    async fn stored_xss(&self, headers: &[(String, String)]) -> AuditFinding {
        let id = CheckId::StoredXss;
        if self.policy.mode < Mode::Lab {
            return AuditFinding::new(id, Status::NotApplicable, "stored input test requires lab mode", Vec::new());
        }
        let Some(sink) = self.sig.and_then(|s| s.audit.stored_xss.as_ref()) else {
            return AuditFinding::new(id, Status::NotApplicable, "no known stored input sink", Vec::new());
        };
        let marker = xss_marker(id, &sink.inject_path, &sink.field);
        let inject = match self
            .post(&sink.inject_path, vec![(sink.field.clone(), marker.clone())], headers)
            .await
        {
            Ok(p) => p,
            Err((url, e)) => {
                return AuditFinding::new(id, Status::Inconclusive, "injection request failed", vec![EvidenceRef::failed("POST", &url, &e)])
            }
        };
        let mut evidence = vec![inject.evidence(Some(format!("marker submitted in {}", sink.field)))];
        match self.get(&sink.display_path, headers).await {
            Ok(p) => {
                let hit = reflects_unencoded(&p.body_text(), &marker);
                evidence.push(p.evidence(Some(if hit {
                    "stored marker rendered unencoded".to_string()
                } else {
                    "stored marker not rendered raw".to_string()
                })));
                if hit {
                    AuditFinding::new(id, Status::Vulnerable, format!("stored input from {} rendered unencoded on {}", sink.inject_path, sink.display_path), evidence)
                } else {
                    AuditFinding::new(id, Status::NotVulnerable, "stored input encoded or not displayed", evidence)
                }
            }
            Err((url, e)) => {
                evidence.push(EvidenceRef::failed("GET", &url, &e));
                AuditFinding::new(id, Status::Inconclusive, "display page could not be fetched", evidence)
            }
        }
    }

    fn tls_ports(&self) -> Vec<u16> {
        self.target
            .tls_ports
            .clone()
            .or_else(|| self.sig.map(|s| s.audit.tls_ports.clone()))
            .unwrap_or_else(|| vec![443])
    }

    async fn tls(&self) -> (AuditFinding, AuditFinding, bool) {
        let ports = self.tls_ports();
        let mut endpoints: Vec<ProbeResult> = Vec::new();
        let mut refused = Vec::new();
        let mut unclear = Vec::new();
        for port in &ports {
            let mut url = self.target.base_url.clone();
            let _ = url.set_scheme("https");
            let _ = url.set_port(Some(*port));
            url.set_path("/");
            url.set_query(None);
            match self.transport.get(url.clone()).await {
                Ok(p) if p.tls_info.is_some() => endpoints.push(p),
                Ok(p) => unclear.push(p.evidence(Some("response without TLS session data".to_string()))),
                Err(e) if e.kind == FailureKind::Refused => refused.push(EvidenceRef::failed("GET", &url, &e)),
                Err(e) => unclear.push(EvidenceRef::failed("GET", &url, &e)),
            }
        }
        if endpoints.is_empty() {
            let absent = if ports.is_empty() {
                AuditFinding::new(CheckId::TlsAbsent, Status::Inconclusive, "no HTTPS ports to try", Vec::new())
            } else if unclear.is_empty() {
                AuditFinding::new(
                    CheckId::TlsAbsent,
                    Status::Vulnerable,
                    "no HTTPS endpoint; the admin interface is only reachable in cleartext",
                    refused,
                )
            } else {
                let mut ev = refused;
                ev.extend(unclear.iter().cloned());
                AuditFinding::new(CheckId::TlsAbsent, Status::Inconclusive, "HTTPS probe failed without a clean refusal", ev)
            };
            let invalid = if absent.status == Status::Vulnerable {
                AuditFinding::new(CheckId::TlsInvalidCert, Status::NotApplicable, "no HTTPS endpoint", Vec::new())
            } else {
                AuditFinding::new(CheckId::TlsInvalidCert, Status::Inconclusive, "no certificate could be inspected", unclear)
            };
            return (absent, invalid, false);
        }
        let absent = AuditFinding::new(
            CheckId::TlsAbsent,
            Status::NotVulnerable,
            "HTTPS endpoint available",
            endpoints.iter().map(|p| p.evidence(None)).collect(),
        );
        let mut bad = Vec::new();
        let mut good = Vec::new();
        for p in &endpoints {
            let info = p.tls_info.as_ref().expect("filtered above");
            let defects = info.defects();
            let mut ev = p.evidence(None);
            ev.tls = Some(info.clone());
            if defects.is_empty() {
                ev.detail = Some("certificate valid".into());
                good.push(ev);
            } else {
                ev.detail = Some(format!("certificate defects: {}", defects.join(", ")));
                bad.push((ev, defects));
            }
        }
        let invalid = if bad.is_empty() {
            AuditFinding::new(CheckId::TlsInvalidCert, Status::NotVulnerable, "certificate valid", good)
        } else {
            let mut all: Vec<&str> = bad.iter().flat_map(|(_, d)| d.iter().copied()).collect();
            all.dedup();
            AuditFinding::new(
                CheckId::TlsInvalidCert,
                Status::Vulnerable,
                format!("invalid certificate: {}", all.join(", ")),
                bad.into_iter().map(|(e, _)| e).collect(),
            )
        };
        (absent, invalid, true)
    }
}

/// Runs every enabled check. Findings come back ordered by check id.
pub async fn run_audit(
    transport: &Transport,
    target: &AuditTarget,
    decision: &FingerprintDecision,
    db: &SignatureDatabase,
    policy: &AuditPolicy,
) -> Vec<AuditFinding> {
    let sig = decision.matched_id.as_deref().and_then(|id| db.get(id));
    let a = Auditor {
        transport,
        policy,
        target,
        sig,
    };
    let enabled = |c: CheckId| policy.enabled.contains(&c);

    let root = match a.get("/", &[]).await {
        Ok(p) => p,
        Err((url, e)) => {
            let ev = EvidenceRef::failed("GET", &url, &e);
            return CheckId::ALL
                .into_iter()
                .filter(|c| enabled(*c))
                .map(|c| AuditFinding::new(c, Status::Inconclusive, "target unreachable", vec![ev.clone()]))
                .collect();
        }
    };
    let admin_path = sig.map(|s| s.audit.admin_path.as_str()).unwrap_or("/");
    let admin_unauth = if admin_path != "/" {
        Some(a.get(admin_path, &[]).await)
    } else {
        None
    };

    let mut default_attempt = None;
    let mut session: Vec<(String, String)> = Vec::new();
    let mut extra_responses: Vec<ProbeResult> = Vec::new();
    if let (Some(s), true) = (sig, policy.mode >= Mode::ActiveSafe) {
        let attempt = a.attempt_login(s, &s.default_credentials()).await;
        extra_responses.extend(attempt.responses.iter().cloned());
        session = attempt.auth_headers.clone();
        if let Some(creds) = &target.credentials {
            let own = a.attempt_login(s, creds).await;
            extra_responses.extend(own.responses.iter().cloned());
            session = own.auth_headers;
        }
        default_attempt = Some(attempt);
    }
    let admin_auth = if session.is_empty() {
        None
    } else {
        Some(a.get(admin_path, &session).await)
    };

    let mut form_pages: Vec<(ProbeResult, Option<ProbeResult>)> = Vec::new();
    if let Some(s) = sig {
        let mut seen = BTreeSet::new();
        for path in s.audit.form_pages.iter().filter(|p| seen.insert(p.as_str())) {
            if let Ok(first) = a.get(path, &session).await {
                let second = a.get(path, &session).await.ok();
                form_pages.push((first, second));
            }
        }
    } else {
        let second = a.get("/", &[]).await.ok();
        form_pages.push((root.clone(), second));
    }

    let mut findings = Vec::new();

    if enabled(CheckId::DefaultCredentials) {
        findings.push(a.credentials_finding(default_attempt.as_ref()));
    }

    if enabled(CheckId::FrameOptionsMissing) {
        let mut pages: Vec<Result<&ProbeResult, (&Url, &TransportError)>> = vec![Ok(&root)];
        for f in [&admin_unauth, &admin_auth].into_iter().flatten() {
            pages.push(f.as_ref().map_err(|(u, e)| (u, e)));
        }
        findings.push(check_frame_options(&pages));
    }

    if enabled(CheckId::ReflectedXss) {
        findings.push(a.reflected_xss(&session).await);
    }
    if enabled(CheckId::StoredXss) {
        findings.push(a.stored_xss(&session).await);
    }

    let needs_tls = [CheckId::TlsAbsent, CheckId::TlsInvalidCert, CheckId::CookieFlags]
        .into_iter()
        .any(enabled);
    let mut https_available = false;
    if needs_tls {
        let (absent, invalid, available) = a.tls().await;
        https_available = available;
        if enabled(CheckId::TlsAbsent) {
            findings.push(absent);
        }
        if enabled(CheckId::TlsInvalidCert) {
            findings.push(invalid);
        }
    }

    if enabled(CheckId::CookieFlags) {
        let mut responses: Vec<&ProbeResult> = vec![&root];
        for p in [&admin_unauth, &admin_auth].into_iter().flatten().flatten() {
            responses.push(p);
        }
        responses.extend(extra_responses.iter());
        responses.extend(form_pages.iter().map(|(f, _)| f));
        findings.push(check_cookie_flags(&responses, https_available));
    }

    if enabled(CheckId::CsrfTokenAbsent) {
        let pages: Vec<FormPage> = form_pages
            .iter()
            .map(|(first, second)| FormPage {
                first,
                second: second.as_ref(),
            })
            .collect();
        let mutating = sig.map(|s| s.audit.mutating_paths.clone()).unwrap_or_default();
        findings.push(check_csrf_tokens(&pages, &mutating));
    }

    if enabled(CheckId::InfoLeakRealm) {
        let realm = if root.status_code == 401 {
            root.header("www-authenticate").and_then(|h| parse_basic_realm(h).ok().flatten())
        } else {
            None
        };
        findings.push(check_info_leakage(realm.as_deref(), sig, db, Some(&root)));
    }

    findings.sort_by_key(|f| (f.check_id, f.severity));
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration as D;

    fn probe(headers: &[(&str, &str)], body: &str) -> ProbeResult {
        ProbeResult::new(
            Url::parse("http://192.168.0.1/").unwrap(),
            "GET",
            200,
            headers.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            body.as_bytes().to_vec(),
            D::from_millis(1),
        )
    }

    #[test]
    fn frame_options_values() {
        let ok = probe(&[("X-Frame-Options", "SAMEORIGIN")], "");
        assert_eq!(check_frame_options(&[Ok(&ok)]).status, Status::NotVulnerable);
        let deny = probe(&[("x-frame-options", " deny ")], "");
        assert_eq!(check_frame_options(&[Ok(&deny)]).status, Status::NotVulnerable);
        let allowall = probe(&[("X-Frame-Options", "ALLOWALL")], "");
        let f = check_frame_options(&[Ok(&allowall)]);
        assert_eq!(f.status, Status::Vulnerable);
        assert!(!f.evidence.is_empty());
        assert_eq!(check_frame_options(&[]).status, Status::Inconclusive);
    }

    #[test]
    fn cookie_flags() {
        let bare = probe(&[("set-cookie", "sid=abc; Path=/")], "");
        assert_eq!(check_cookie_flags(&[&bare], false).status, Status::Vulnerable);
        let flagged = probe(&[("set-cookie", "sid=1; HttpOnly; Secure")], "");
        assert_eq!(check_cookie_flags(&[&flagged], true).status, Status::NotVulnerable);
        let http_only = probe(&[("set-cookie", "sid=1; HttpOnly")], "");
        assert_eq!(check_cookie_flags(&[&http_only], false).status, Status::NotVulnerable);
        assert_eq!(check_cookie_flags(&[&http_only], true).status, Status::Vulnerable);
        let none = probe(&[], "");
        assert_eq!(check_cookie_flags(&[&none], true).status, Status::NotApplicable);
    }

    fn form_page(token: &str) -> ProbeResult {
        probe(
            &[],
            &format!(r#"<form method="POST" action="/apply.cgi"><input type="hidden" name="tok" value="{token}"><input type="hidden" name="submitType" value="3"></form>"#),
        )
    }

    #[test]
    fn csrf_token_needs_length_and_variability() {
        let a = form_page("0123456789abcdef0123456789abcdef");
        let b = form_page("fedcba9876543210fedcba9876543210");
        let pages = [FormPage { first: &a, second: Some(&b) }];
        assert_eq!(check_csrf_tokens(&pages, &[]).status, Status::NotVulnerable);
        let same = [FormPage { first: &a, second: Some(&a) }];
        assert_eq!(check_csrf_tokens(&same, &[]).status, Status::Vulnerable);
        let short1 = form_page("abc");
        let short2 = form_page("abd");
        let short = [FormPage { first: &short1, second: Some(&short2) }];
        assert_eq!(check_csrf_tokens(&short, &[]).status, Status::Vulnerable);
        let brochure = probe(&[], "<p>hello</p>");
        assert_eq!(
            check_csrf_tokens(&[FormPage { first: &brochure, second: None }], &[]).status,
            Status::NotApplicable
        );
    }

    #[test]
    fn get_form_to_mutating_path_counts() {
        let p = probe(&[], r#"<form action="/goform/x"><input type="hidden" name="a" value="1"></form>"#);
        let pages = [FormPage { first: &p, second: None }];
        assert_eq!(check_csrf_tokens(&pages, &[]).status, Status::NotVulnerable);
        assert_eq!(check_csrf_tokens(&pages, &["/goform/x".into()]).status, Status::Vulnerable);
    }

    #[test]
    fn info_leak_tokens() {
        let db = SignatureDatabase::bundled();
        let tp = db.get("tplink-wr841n").unwrap();
        let f = check_info_leakage(Some("TP-LINK Wireless N Router WR841N"), Some(tp), &db, Some(&probe(&[], "")));
        assert_eq!(f.status, Status::Vulnerable);
        assert!(f.description.contains("TP-Link") && f.description.contains("WR841N"));
        let f = check_info_leakage(Some("Router Login 7f3k9"), Some(tp), &db, Some(&probe(&[], "")));
        assert_eq!(f.status, Status::NotVulnerable);
        assert_eq!(check_info_leakage(None, Some(tp), &db, None).status, Status::NotApplicable);
    }

    #[test]
    fn marker_is_inert_and_deterministic() {
        let m = xss_marker(CheckId::ReflectedXss, "/p", "q");
        assert_eq!(m, xss_marker(CheckId::ReflectedXss, "/p", "q"));
        assert_ne!(m, xss_marker(CheckId::ReflectedXss, "/p", "r"));
        assert!(m.starts_with("zq<\"'x>qz-"));
        assert!(!m.to_ascii_lowercase().contains("script"));
        let encoded = crate::payload::escape_attr(&m);
        assert!(!reflects_unencoded(&encoded, &m));
        assert!(reflects_unencoded(&format!("<p>{m}</p>"), &m));
        // angle brackets encoded, quotes left raw
        let partial = m.replace('<', "&lt;").replace('>', "&gt;");
        assert!(reflects_unencoded(&partial, &m));
        assert!(!reflects_unencoded("nothing here", &m));
    }

    #[test]
    fn severity_mapping_and_order() {
        assert_eq!(CheckId::DefaultCredentials.severity(), Severity::Critical);
        assert_eq!(CheckId::StoredXss.severity(), Severity::High);
        assert_eq!(CheckId::CookieFlags.severity(), Severity::Low);
        assert_eq!(CheckId::InfoLeakRealm.severity(), Severity::Info);
        let mut sorted = CheckId::ALL.to_vec();
        sorted.sort();
        assert_eq!(sorted, CheckId::ALL.to_vec());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("lab".parse::<Mode>().unwrap(), Mode::Lab);
        assert_eq!("active".parse::<Mode>().unwrap(), Mode::ActiveSafe);
        assert!("bogus".parse::<Mode>().is_err());
        assert!(Mode::Passive < Mode::ActiveSafe && Mode::ActiveSafe < Mode::Lab);
    }
}
