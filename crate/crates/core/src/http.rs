//! Instrumented HTTP(S) transport shared by discovery, fingerprinting and auditing.
//!
//! Every request goes through [`Transport::send`], which enforces the
//! read-only guard and appends to an optional [`RequestLog`]. Redirects are
//! never followed implicitly.

use std::borrow::Cow;
use std::error::Error as _;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::Utc;
use reqwest::Method;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::tls::TlsInfo;

pub const EXCERPT_LEN: usize = 1024;
const MAX_BODY: usize = 4 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ProbeRequest {
    pub method: Method,
    pub url: Url,
    pub headers: Vec<(String, String)>,
    pub form: Option<Vec<(String, String)>>,
}

impl ProbeRequest {
    pub fn get(url: Url) -> Self {
        Self {
            method: Method::GET,
            url,
            headers: Vec::new(),
            form: None,
        }
    }

    pub fn head(url: Url) -> Self {
        Self {
            method: Method::HEAD,
            ..Self::get(url)
        }
    }

    pub fn post_form(url: Url, fields: Vec<(String, String)>) -> Self {
        Self {
            method: Method::POST,
            url,
            headers: Vec::new(),
            form: Some(fields),
        }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn headers(mut self, headers: impl IntoIterator<Item = (String, String)>) -> Self {
        self.headers.extend(headers);
        self
    }
}

/// One completed HTTP exchange.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub url: Url,
    pub method: String,
    pub status_code: u16,
    pub headers: Vec<(String, String)>,
    pub body_digest: String,
    pub body_excerpt: String,
    #[serde(rename = "elapsed_ms", serialize_with = "ser_millis")]
    pub elapsed: Duration,
    pub tls_info: Option<TlsInfo>,
    #[serde(skip)]
    pub body: Vec<u8>,
}

fn ser_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(d.as_millis() as u64)
}

pub fn body_digest(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

impl ProbeResult {
    pub fn new(
        url: Url,
        method: &str,
        status_code: u16,
        headers: Vec<(String, String)>,
        body: Vec<u8>,
        elapsed: Duration,
    ) -> Self {
        let cut = body.len().min(EXCERPT_LEN);
        Self {
            url,
            method: method.to_string(),
            status_code,
            headers,
            body_digest: body_digest(&body),
            body_excerpt: String::from_utf8_lossy(&body[..cut]).into_owned(),
            elapsed,
            tls_info: None,
            body,
        }
    }

    /// First value of a header, case-insensitive.
    pub fn header<'a>(&'a self, name: &str) -> Option<&'a str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn header_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.headers
            .iter()
            .filter(move |(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn body_text(&self) -> Cow<'_, str> {
        String::from_utf8_lossy(&self.body)
    }

    pub fn is_html(&self) -> bool {
        self.header("content-type")
            .map(|ct| ct.to_ascii_lowercase().contains("html"))
            .unwrap_or_else(|| self.body_text().trim_start().starts_with('<'))
    }

    pub fn evidence(&self, detail: impl Into<Option<String>>) -> EvidenceRef {
        EvidenceRef {
            method: self.method.clone(),
            url: self.url.to_string(),
            status: Some(self.status_code),
            body_digest: Some(self.body_digest.clone()),
            detail: detail.into(),
            tls: self.tls_info.clone(),
        }
    }
}

/// Compact, timing-free pointer to an exchange, as embedded in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub method: String,
    pub url: String,
    pub status: Option<u16>,
    pub body_digest: Option<String>,
    pub detail: Option<String>,
    pub tls: Option<TlsInfo>,
}

impl EvidenceRef {
    pub fn failed(method: &str, url: &Url, err: &TransportError) -> Self {
        Self {
            method: method.to_string(),
            url: url.to_string(),
            status: None,
            body_digest: None,
            detail: Some(err.to_string()),
            tls: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    Refused,
    /// Connection accepted and then reset before a response arrived.
    Reset,
    Tls,
    Connect,
    PolicyViolation,
    Other,
}

#[derive(Debug, Clone, Error)]
#[error("{kind:?} on {method} {url}: {message}")]
pub struct TransportError {
    pub kind: FailureKind,
    pub method: String,
    pub url: String,
    pub message: String,
}

/// Records every request the transport actually put on the wire.
#[derive(Debug, Default)]
pub struct RequestLog {
    entries: Mutex<Vec<(String, Url)>>,
}

impl RequestLog {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn record(&self, method: &Method, url: &Url) {
        self.entries
            .lock()
            .expect("request log poisoned")
            .push((method.as_str().to_string(), url.clone()));
    }

    pub fn entries(&self) -> Vec<(String, Url)> {
        self.entries.lock().expect("request log poisoned").clone()
    }

    pub fn methods(&self) -> std::collections::BTreeSet<String> {
        self.entries().into_iter().map(|(m, _)| m).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("request log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Transport {
    client: reqwest::Client,
    timeout: Duration,
    allow_mutating: bool,
    log: Option<Arc<RequestLog>>,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

impl Transport {
    /// A read-only transport: anything other than GET/HEAD is refused.
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .no_proxy()
            .http1_only()
            .pool_max_idle_per_host(0)
            .tls_danger_accept_invalid_certs(true)
            .tls_info(true)
            .connect_timeout(timeout)
            .timeout(timeout)
            .user_agent(concat!("router-audit/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("http client builds");
        Self {
            client,
            timeout,
            allow_mutating: false,
            log: None,
        }
    }

    pub fn allow_mutating(mut self, allow: bool) -> Self {
        self.allow_mutating = allow;
        self
    }

    pub fn with_log(mut self, log: Arc<RequestLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn permits(&self, method: &Method) -> bool {
        self.allow_mutating || *method == Method::GET || *method == Method::HEAD
    }

    pub async fn get(&self, url: Url) -> Result<ProbeResult, TransportError> {
        self.send(ProbeRequest::get(url)).await
    }

    pub async fn send(&self, req: ProbeRequest) -> Result<ProbeResult, TransportError> {
        let method_name = req.method.as_str().to_string();
        if !self.permits(&req.method) {
            return Err(TransportError {
                kind: FailureKind::PolicyViolation,
                method: method_name,
                url: req.url.to_string(),
                message: "state-changing method refused by read-only transport".into(),
            });
        }
        let fail = |kind, message: String| TransportError {
            kind,
            method: req.method.as_str().to_string(),
            url: req.url.to_string(),
            message,
        };

        let mut builder = self.client.request(req.method.clone(), req.url.clone());
        for (k, v) in &req.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        if let Some(fields) = &req.form {
            let body = url::form_urlencoded::Serializer::new(String::new())
                .extend_pairs(fields.iter())
                .finish();
            builder = builder
                .header("content-type", "application/x-www-form-urlencoded")
                .body(body);
        }

        if let Some(log) = &self.log {
            log.record(&req.method, &req.url);
        }
        tracing::debug!(method = %req.method, url = %req.url, "probe");
        let started = Instant::now();
        let resp = builder.send().await.map_err(|e| {
            let (kind, message) = classify(&e);
            fail(kind, message)
        })?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| {
                (
                    k.as_str().to_string(),
                    String::from_utf8_lossy(v.as_bytes()).into_owned(),
                )
            })
            .collect();
        let peer_cert = resp
            .extensions()
            .get::<reqwest::tls::TlsInfo>()
            .and_then(|t| t.peer_certificate().map(<[u8]>::to_vec));
        let mut body = resp
            .bytes()
            .await
            .map_err(|e| {
                let (kind, message) = classify(&e);
                fail(kind, message)
            })?
            .to_vec();
        body.truncate(MAX_BODY);

        let mut result = ProbeResult::new(
            req.url.clone(),
            req.method.as_str(),
            status,
            headers,
            body,
            started.elapsed(),
        );
        if let Some(der) = peer_cert {
            let host = req.url.host_str().unwrap_or_default();
            result.tls_info = TlsInfo::from_der(&der, host, Utc::now()).ok();
        }
        Ok(result)
    }
}

fn classify(err: &reqwest::Error) -> (FailureKind, String) {
    let mut message = err.to_string();
    let mut source = err.source();
    let mut kind = if err.is_timeout() {
        FailureKind::Timeout
    } else if err.is_connect() {
        FailureKind::Connect
    } else {
        FailureKind::Other
    };
    while let Some(s) = source {
        message.push_str(": ");
        message.push_str(&s.to_string());
        if let Some(io) = s.downcast_ref::<std::io::Error>() {
            match io.kind() {
                std::io::ErrorKind::ConnectionRefused => kind = FailureKind::Refused,
                std::io::ErrorKind::TimedOut => kind = FailureKind::Timeout,
                std::io::ErrorKind::ConnectionReset | std::io::ErrorKind::ConnectionAborted => {
                    kind = FailureKind::Reset
                }
                _ => {}
            }
        }
        if s.downcast_ref::<rustls::Error>().is_some() {
            kind = FailureKind::Tls;
        }
        source = s.source();
    }
    if kind == FailureKind::Connect {
        let lower = message.to_ascii_lowercase();
        if lower.contains("tls") || lower.contains("handshake") || lower.contains("certificate") {
            kind = FailureKind::Tls;
        }
    }
    (kind, message)
}

/// Joins an absolute path (possibly with a query) onto a base URL.
pub fn join_path(base: &Url, path: &str) -> Url {
    let mut url = base.clone();
    match path.split_once('?') {
        Some((p, q)) => {
            url.set_path(p);
            url.set_query(Some(q));
        }
        None => {
            url.set_path(path);
            url.set_query(None);
        }
    }
    url.set_fragment(None);
    url
}
