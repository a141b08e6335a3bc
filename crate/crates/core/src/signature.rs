//! Known router signatures and the JSON database that holds them.
//!
//! The bundled database describes ten consumer routers: how their admin UI
//! authenticates, which factory credentials they ship with, the `Basic` realm
//! or static resources that identify them, and the weakness profile observed
//! on each device.

use std::collections::HashSet;
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::{Host, Url};

/// The database shipped with the crate.
pub const BUNDLED_SIGNATURES: &str = include_str!("../data/signatures.json");

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMethod {
    #[serde(rename = "basic")]
    BasicAuth,
    #[serde(rename = "web")]
    WebForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XssKind {
    None,
    Reflected,
    Stored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HttpsSupport {
    None,
    OptionalInvalidCert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnProfile {
    #[serde(rename = "uir")]
    pub ui_redressing: bool,
    pub xss: XssKind,
    pub https: HttpsSupport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginForm {
    pub action: String,
    pub method: String,
    /// `None` when the form has no username input at all.
    pub username_field: Option<String>,
    pub password_field: Option<String>,
    /// Substring that only appears on pages rendered for an authenticated user.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authenticated_marker: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProbePoint {
    pub path: String,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredXssSink {
    pub inject_path: String,
    pub field: String,
    pub display_path: String,
}

fn default_admin_path() -> String {
    "/".to_string()
}

fn default_tls_ports() -> Vec<u16> {
    vec![443]
}

/// Where the auditor should look on a device once it has been identified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditHints {
    #[serde(default = "default_admin_path")]
    pub admin_path: String,
    #[serde(default)]
    pub probe_points: Vec<ProbePoint>,
    #[serde(default)]
    pub stored_xss: Option<StoredXssSink>,
    #[serde(default)]
    pub form_pages: Vec<String>,
    #[serde(default)]
    pub mutating_paths: Vec<String>,
    #[serde(default = "default_tls_ports")]
    pub tls_ports: Vec<u16>,
}

impl Default for AuditHints {
    fn default() -> Self {
        Self {
            admin_path: default_admin_path(),
            probe_points: Vec::new(),
            stored_xss: None,
            form_pages: Vec::new(),
            mutating_paths: Vec::new(),
            tls_ports: default_tls_ports(),
        }
    }
}

/// A username/password pair where either slot may be absent from the login UI.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub username: Option<String>,
    pub password: Option<String>,
}

impl Credentials {
    pub fn new(username: Option<&str>, password: Option<&str>) -> Self {
        Self {
            username: username.map(str::to_string),
            password: password.map(str::to_string),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.username.is_none() && self.password.is_none()
    }

    /// `Authorization` header value; absent slots are sent as empty strings.
    pub fn basic_header(&self) -> String {
        use base64::Engine as _;
        let raw = format!(
            "{}:{}",
            self.username.as_deref().unwrap_or_default(),
            self.password.as_deref().unwrap_or_default()
        );
        format!("Basic {}", base64::engine::general_purpose::STANDARD.encode(raw))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterSignature {
    pub id: String,
    pub manufacturer: String,
    pub model: String,
    pub firmware_version: String,
    pub auth_method: AuthMethod,
    /// `Some("")` submits an empty username; `None` means the UI has no username field.
    pub default_username: Option<String>,
    pub default_password: Option<String>,
    pub gateway_url: Url,
    pub realm: Option<String>,
    #[serde(default)]
    pub unique_resources: Vec<String>,
    pub login_form: Option<LoginForm>,
    pub vuln_profile: VulnProfile,
    #[serde(default)]
    pub audit: AuditHints,
}

impl RouterSignature {
    pub fn display_name(&self) -> String {
        format!("{} {}", self.manufacturer, self.model)
    }

    pub fn has_default_credentials(&self) -> bool {
        self.default_username.is_some() || self.default_password.is_some()
    }

    pub fn default_credentials(&self) -> Credentials {
        Credentials {
            username: self.default_username.clone(),
            password: self.default_password.clone(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id must be non-empty".into());
        }
        match self.auth_method {
            AuthMethod::BasicAuth => {
                if self.realm.is_none() {
                    return Err("BasicAuth signature requires a realm".into());
                }
                if !self.unique_resources.is_empty() {
                    return Err("unique_resources must be empty for BasicAuth".into());
                }
                if self.login_form.is_some() {
                    return Err("login_form must be absent for BasicAuth".into());
                }
            }
            AuthMethod::WebForm => {
                if self.realm.is_some() {
                    return Err("realm must be absent for WebForm".into());
                }
                if self.unique_resources.is_empty() {
                    return Err("WebForm signature requires unique_resources".into());
                }
                if self.login_form.is_none() {
                    return Err("WebForm signature requires a login_form".into());
                }
            }
        }
        for path in self
            .unique_resources
            .iter()
            .chain(std::iter::once(&self.audit.admin_path))
            .chain(&self.audit.form_pages)
        {
            if !path.starts_with('/') {
                return Err(format!("path {path:?} is not absolute"));
            }
        }
        if self.gateway_url.scheme() != "http" {
            return Err("gateway_url scheme must be http".into());
        }
        match self.gateway_url.host() {
            Some(Host::Ipv4(ip)) if is_private(IpAddr::V4(ip)) => {}
            Some(Host::Ipv6(ip)) if is_private(IpAddr::V6(ip)) => {}
            _ => return Err("gateway_url host is not a private address".into()),
        }
        Ok(())
    }
}

/// RFC 1918 IPv4 ranges and IPv6 unique-local addresses.
pub fn is_private(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => v4.is_private(),
        IpAddr::V6(v6) => (v6.segments()[0] & 0xfe00) == 0xfc00,
    }
}

#[derive(Debug, Error)]
pub enum DbError {
    #[error("parse error at line {line}, column {column} (field `{path}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },
    #[error("unsupported database version {0}")]
    Version(u32),
    #[error("signature `{id}`: {reason}")]
    Invariant { id: String, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DbDocument {
    version: u32,
    #[serde(default)]
    closed_world: bool,
    routers: Vec<RouterSignature>,
}

/// A validated, immutable set of signatures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureDatabase {
    routers: Vec<RouterSignature>,
    closed_world: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SignatureDbStats {
    pub total_routers: usize,
    pub total_credential_fields: usize,
    pub admin_valued_fields: usize,
    pub basic_auth_count: usize,
    pub web_form_count: usize,
    pub distinct_gateway_ips: usize,
}

impl SignatureDatabase {
    pub fn new(routers: Vec<RouterSignature>, closed_world: bool) -> Result<Self, DbError> {
        let mut ids = HashSet::new();
        let mut realms = HashSet::new();
        for sig in &routers {
            sig.validate().map_err(|reason| DbError::Invariant {
                id: sig.id.clone(),
                reason,
            })?;
            if !ids.insert(sig.id.as_str()) {
                return Err(DbError::Invariant {
                    id: sig.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
            if let Some(realm) = &sig.realm {
                if !realms.insert(realm.as_str()) {
                    return Err(DbError::Invariant {
                        id: sig.id.clone(),
                        reason: format!("duplicate realm {realm:?}"),
                    });
                }
            }
        }
        Ok(Self {
            routers,
            closed_world,
        })
    }

    pub fn bundled() -> Self {
        load_signatures(BUNDLED_SIGNATURES.as_bytes()).expect("bundled signature database is valid")
    }

    pub fn routers(&self) -> &[RouterSignature] {
        &self.routers
    }

    pub fn len(&self) -> usize {
        self.routers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routers.is_empty()
    }

    pub fn is_closed_world(&self) -> bool {
        self.closed_world
    }

    pub fn get(&self, id: &str) -> Option<&RouterSignature> {
        self.routers.iter().find(|s| s.id == id)
    }

    /// Serializes back into the on-disk document format.
    pub fn to_json(&self) -> String {
        let doc = DbDocument {
            version: SCHEMA_VERSION,
            closed_world: self.closed_world,
            routers: self.routers.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("database serializes")
    }

    /// Returns a copy restricted to the given ids, in database order.
    pub fn subset(&self, ids: &[&str]) -> Self {
        Self {
            routers: self
                .routers
                .iter()
                .filter(|s| ids.contains(&s.id.as_str()))
                .cloned()
                .collect(),
            closed_world: self.closed_world,
        }
    }

    pub fn with_closed_world(mut self, closed_world: bool) -> Self {
        self.closed_world = closed_world;
        self
    }
}

impl fmt::Display for SignatureDatabase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for sig in &self.routers {
            writeln!(f, "{:<18} {:<24} {}", sig.id, sig.display_name(), sig.gateway_url)?;
        }
        Ok(())
    }
}

pub fn load_signatures(raw: &[u8]) -> Result<SignatureDatabase, DbError> {
    let mut de = serde_json::Deserializer::from_slice(raw);
    let doc: DbDocument = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        DbError::Parse {
            line: inner.line(),
            column: inner.column(),
            path,
            message: inner.to_string(),
        }
    })?;
    if doc.version != SCHEMA_VERSION {
        return Err(DbError::Version(doc.version));
    }
    SignatureDatabase::new(doc.routers, doc.closed_world)
}

pub fn db_stats(db: &SignatureDatabase) -> SignatureDbStats {
    let mut stats = SignatureDbStats {
        total_routers: db.len(),
        total_credential_fields: 2 * db.len(),
        ..Default::default()
    };
    let mut gateways = HashSet::new();
    for sig in db.routers() {
        stats.admin_valued_fields += [&sig.default_username, &sig.default_password]
            .into_iter()
            .filter(|v| v.as_deref() == Some("admin"))
            .count();
        match sig.auth_method {
            AuthMethod::BasicAuth => stats.basic_auth_count += 1,
            AuthMethod::WebForm => stats.web_form_count += 1,
        }
        if let Some(host) = sig.gateway_url.host_str() {
            gateways.insert(host.to_string());
        }
    }
    stats.distinct_gateway_ips = gateways.len();
    stats
}
