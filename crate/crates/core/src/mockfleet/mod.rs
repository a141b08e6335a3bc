//! Emulated router fleet.
//!
//! Each device is a loopback HTTP server (plus an optional HTTPS listener)
//! whose behavior is derived from its signature and then adjusted by
//! per-device overrides. The fleet is the ground truth the scanner is tested
//! against: realms, unique resources, login gates, XSS sinks, the
//! unauthenticated reboot endpoint and certificate defects all come from here.

mod certs;
mod server;

use std::collections::{BTreeMap, HashSet};
use std::net::{IpAddr, Ipv4Addr};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use url::Url;

use crate::audit::AuditTarget;

pub use certs::CertProfile;
pub use server::{route, MockRequest, MockResponse};

use crate::signature::{
    AuthMethod, Credentials, HttpsSupport, RouterSignature, SignatureDatabase, StoredXssSink,
    XssKind,
};

/// The ten-device fleet shipped with the crate.
pub const BUNDLED_FLEET: &str = include_str!("../../data/fleet.json");

#[derive(Debug, Error)]
pub enum FleetError {
    #[error("fleet config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported fleet config version {0}")]
    Version(u32),
    #[error("device {device}: unknown signature id")]
    UnknownSignature { device: String },
    #[error("device {device}: behavior inconsistent with vulnerability profile: {reason}")]
    Inconsistent { device: String, reason: String },
    #[error("device {device}: cannot bind port {port}: {source}")]
    Bind {
        device: String,
        port: u16,
        source: std::io::Error,
    },
    #[error("device {device}: TLS setup failed: {reason}")]
    Tls { device: String, reason: String },
    #[error("unknown device {0}")]
    UnknownDevice(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectiveEndpoint {
    pub path: String,
    pub param: String,
    /// HTML-encode the echoed value (a non-vulnerable sink).
    #[serde(default)]
    pub encode: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebootEndpoint {
    pub path: String,
    pub fields: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCookie {
    pub name: String,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Behavior {
    pub realm_header: Option<String>,
    pub login_form_html: Option<String>,
    pub unique_resource_paths: Vec<String>,
    pub frame_options_header: Option<String>,
    pub reflective_endpoint: Option<ReflectiveEndpoint>,
    pub stored_xss_pair: Option<StoredXssSink>,
    pub reboot_endpoint: Option<RebootEndpoint>,
    pub tls: Option<CertProfile>,
    pub session_cookie: Option<SessionCookie>,
    /// Embed a fresh random token in every served settings form.
    pub csrf_token: bool,
    pub credential_override: Option<Credentials>,
}

impl Behavior {
    /// Behavior implied by a signature and its weakness profile.
    pub fn derived(sig: &RouterSignature) -> Self {
        let reflective_endpoint = sig.audit.probe_points.first().map(|p| ReflectiveEndpoint {
            path: p.path.clone(),
            param: p.param.clone(),
            encode: sig.vuln_profile.xss != XssKind::Reflected,
        });
        Self {
            realm_header: sig.realm.clone(),
            login_form_html: None,
            unique_resource_paths: sig.unique_resources.clone(),
            frame_options_header: None,
            reflective_endpoint,
            stored_xss_pair: match sig.vuln_profile.xss {
                XssKind::Stored => sig.audit.stored_xss.clone(),
                _ => None,
            },
            reboot_endpoint: None,
            tls: match sig.vuln_profile.https {
                HttpsSupport::None => None,
                HttpsSupport::OptionalInvalidCert => Some(CertProfile::SelfSigned),
            },
            session_cookie: (sig.auth_method == AuthMethod::WebForm).then(|| SessionCookie {
                name: "sid".into(),
                flags: Vec::new(),
            }),
            csrf_token: false,
            credential_override: None,
        }
    }

    pub fn serves_tls(&self) -> bool {
        self.tls.as_ref().is_some_and(CertProfile::serves_tls)
    }
}

fn some<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> Result<Option<Option<T>>, D::Error> {
    Option::<T>::deserialize(d).map(Some)
}

/// Per-device overrides in `fleet.json`. An absent key keeps the derived
/// default; an explicit `null` clears it.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorOverrides {
    #[serde(default, deserialize_with = "some")]
    pub realm_header: Option<Option<String>>,
    #[serde(default, deserialize_with = "some")]
    pub login_form_html: Option<Option<String>>,
    #[serde(default)]
    pub unique_resource_paths: Option<Vec<String>>,
    #[serde(default, deserialize_with = "some")]
    pub frame_options_header: Option<Option<String>>,
    #[serde(default, deserialize_with = "some")]
    pub reflective_endpoint: Option<Option<ReflectiveEndpoint>>,
    #[serde(default, deserialize_with = "some")]
    pub stored_xss_pair: Option<Option<StoredXssSink>>,
    #[serde(default, deserialize_with = "some")]
    pub reboot_endpoint: Option<Option<RebootEndpoint>>,
    #[serde(default, deserialize_with = "some")]
    pub tls: Option<Option<CertProfile>>,
    #[serde(default, deserialize_with = "some")]
    pub session_cookie: Option<Option<SessionCookie>>,
    #[serde(default)]
    pub csrf_token: Option<bool>,
    #[serde(default, deserialize_with = "some")]
    pub credential_override: Option<Option<Credentials>>,
}

impl BehaviorOverrides {
    fn apply(self, b: &mut Behavior) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { b.$f = v; } )* };
        }
        set!(
            realm_header,
            login_form_html,
            unique_resource_paths,
            frame_options_header,
            reflective_endpoint,
            stored_xss_pair,
            reboot_endpoint,
            tls,
            session_cookie,
            csrf_token,
            credential_override
        );
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceConfig {
    signature: String,
    #[serde(default)]
    listen_port: u16,
    #[serde(default)]
    tls_port: u16,
    #[serde(default)]
    behavior: BehaviorOverrides,
}

#[derive(Debug, Clone, Deserialize)]
struct FleetConfig {
    version: u32,
    devices: Vec<DeviceConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRouterSpec {
    pub signature: RouterSignature,
    /// 0 picks an ephemeral port.
    pub listen_port: u16,
    pub tls_port: u16,
    pub behavior: Behavior,
}

impl MockRouterSpec {
    pub fn derived(signature: RouterSignature) -> Self {
        let behavior = Behavior::derived(&signature);
        Self {
            signature,
            listen_port: 0,
            tls_port: 0,
            behavior,
        }
    }

    pub fn id(&self) -> &str {
        &self.signature.id
    }

    /// Checks the behavior against the signature's weakness profile.
    pub fn validate(&self) -> Result<(), FleetError> {
        let fail = |reason: &str| {
            Err(FleetError::Inconsistent {
                device: self.id().to_string(),
                reason: reason.to_string(),
            })
        };
        let p = &self.signature.vuln_profile;
        let b = &self.behavior;
        if p.xss == XssKind::Reflected && !b.reflective_endpoint.as_ref().is_some_and(|r| !r.encode) {
            return fail("xss=reflected requires an unencoded reflective endpoint");
        }
        if p.xss == XssKind::Stored && b.stored_xss_pair.is_none() {
            return fail("xss=stored requires a stored_xss_pair");
        }
        if p.https == HttpsSupport::OptionalInvalidCert && !b.serves_tls() {
            return fail("https=optional_invalid_cert requires a TLS profile");
        }
        Ok(())
    }
}

/// Parses `fleet.json`, resolving signature ids against `db`.
pub fn load_fleet_config(raw: &[u8], db: &SignatureDatabase) -> Result<Vec<MockRouterSpec>, FleetError> {
    let mut de = serde_json::Deserializer::from_slice(raw);
    let cfg: FleetConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| FleetError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if cfg.version != 1 {
        return Err(FleetError::Version(cfg.version));
    }
    cfg.devices
        .into_iter()
        .map(|d| {
            let sig = db
                .get(&d.signature)
                .ok_or_else(|| FleetError::UnknownSignature {
                    device: d.signature.clone(),
                })?
                .clone();
            let mut spec = MockRouterSpec::derived(sig);
            spec.listen_port = d.listen_port;
            spec.tls_port = d.tls_port;
            d.behavior.apply(&mut spec.behavior);
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

/// The bundled ten-device fleet against the bundled database.
pub fn bundled_fleet() -> Vec<MockRouterSpec> {
    load_fleet_config(BUNDLED_FLEET.as_bytes(), &SignatureDatabase::bundled())
        .expect("bundled fleet config is valid")
}

#[derive(Debug, Default)]
pub(crate) struct MutableState {
    pub reboot_count: u64,
    pub stored_values: Vec<String>,
    pub current_stored: Option<String>,
    pub credential_override: Option<Credentials>,
    pub sessions: HashSet<String>,
    pub methods_seen: BTreeMap<String, u64>,
}

#[derive(Debug)]
pub struct DeviceState {
    pub(crate) signature: RouterSignature,
    pub(crate) behavior: Behavior,
    pub(crate) inner: Mutex<MutableState>,
}

impl DeviceState {
    pub fn new(spec: &MockRouterSpec) -> Self {
        Self {
            signature: spec.signature.clone(),
            behavior: spec.behavior.clone(),
            inner: Mutex::new(MutableState {
                credential_override: spec.behavior.credential_override.clone(),
                ..Default::default()
            }),
        }
    }

    pub(crate) fn lock(&self) -> std::sync::MutexGuard<'_, MutableState> {
        self.inner.lock().expect("device state poisoned")
    }

    pub fn snapshot(&self) -> DeviceSnapshot {
        let s = self.lock();
        DeviceSnapshot {
            reboot_count: s.reboot_count,
            stored_values: s.stored_values.clone(),
            credential_override: s.credential_override.clone(),
            methods_seen: s.methods_seen.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeviceSnapshot {
    pub reboot_count: u64,
    pub stored_values: Vec<String>,
    pub credential_override: Option<Credentials>,
    /// Request count per HTTP method, as received by the server.
    pub methods_seen: BTreeMap<String, u64>,
}

struct RunningDevice {
    id: String,
    base_url: Url,
    tls_url: Option<Url>,
    state: Arc<DeviceState>,
    tasks: Vec<JoinHandle<()>>,
}

/// A running fleet. Dropping it aborts all listeners.
pub struct FleetHandle {
    devices: Vec<RunningDevice>,
    stopped: bool,
}

async fn bind(device: &str, port: u16) -> Result<(TcpListener, u16), FleetError> {
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, port))
        .await
        .map_err(|source| FleetError::Bind {
            device: device.to_string(),
            port,
            source,
        })?;
    let port = listener.local_addr().map(|a| a.port()).unwrap_or(port);
    Ok((listener, port))
}

pub async fn start_fleet(specs: &[MockRouterSpec]) -> Result<FleetHandle, FleetError> {
    let mut handle = FleetHandle {
        devices: Vec::new(),
        stopped: false,
    };
    for spec in specs {
        spec.validate()?;
        let id = spec.id().to_string();
        let state = Arc::new(DeviceState::new(spec));
        let (listener, port) = bind(&id, spec.listen_port).await?;
        let mut tasks = vec![tokio::spawn(server::serve(listener, None, state.clone()))];
        let base_url = Url::parse(&format!("http://127.0.0.1:{port}/")).expect("loopback url");

        let mut tls_url = None;
        if let Some(profile) = &spec.behavior.tls {
            let mut sans: Vec<IpAddr> = vec![IpAddr::V4(Ipv4Addr::LOCALHOST)];
            if let Some(url::Host::Ipv4(gw)) = spec.signature.gateway_url.host() {
                sans.insert(0, IpAddr::V4(gw));
            }
            let config = certs::server_config(profile, &spec.signature.manufacturer, &sans)
                .map_err(|reason| FleetError::Tls {
                    device: id.clone(),
                    reason,
                })?;
            if let Some(config) = config {
                let (listener, port) = bind(&id, spec.tls_port).await?;
                let acceptor = tokio_rustls::TlsAcceptor::from(config);
                tasks.push(tokio::spawn(server::serve(listener, Some(acceptor), state.clone())));
                tls_url = Some(Url::parse(&format!("https://127.0.0.1:{port}/")).expect("loopback url"));
            }
        }
        handle.devices.push(RunningDevice {
            id,
            base_url,
            tls_url,
            state,
            tasks,
        });
    }
    Ok(handle)
}

impl FleetHandle {
    fn device(&self, id: &str) -> Result<&RunningDevice, FleetError> {
        self.devices
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| FleetError::UnknownDevice(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.id.clone()).collect()
    }

    pub fn base_url(&self, id: &str) -> Result<Url, FleetError> {
        Ok(self.device(id)?.base_url.clone())
    }

    pub fn tls_url(&self, id: &str) -> Result<Option<Url>, FleetError> {
        Ok(self.device(id)?.tls_url.clone())
    }

    /// Device id → base URL, in start order.
    pub fn urls(&self) -> Vec<(String, Url)> {
        self.devices
            .iter()
            .map(|d| (d.id.clone(), d.base_url.clone()))
            .collect()
    }

    pub fn url_map(&self) -> BTreeMap<String, Url> {
        self.urls().into_iter().collect()
    }

    /// HTTPS ports the auditor should try for a device: its TLS listener, or
    /// the signature's default ports, on which nothing listens on loopback.
    pub fn tls_ports(&self, id: &str) -> Result<Vec<u16>, FleetError> {
        let dev = self.device(id)?;
        Ok(match dev.tls_url.as_ref().and_then(Url::port) {
            Some(port) => vec![port],
            None => dev.state.signature.audit.tls_ports.clone(),
        })
    }

    /// One audit target per device, in fleet order, with its HTTPS ports set.
    pub fn audit_targets(&self) -> Vec<AuditTarget> {
        self.urls()
            .into_iter()
            .map(|(id, url)| {
                let mut t = AuditTarget::new(url);
                t.tls_ports = self.tls_ports(&id).ok();
                t
            })
            .collect()
    }

    pub fn fleet_state(&self, id: &str) -> Result<DeviceSnapshot, FleetError> {
        Ok(self.device(id)?.state.snapshot())
    }

    pub fn set_credential_override(&self, id: &str, creds: Option<Credentials>) -> Result<(), FleetError> {
        let dev = self.device(id)?;
        let mut s = dev.state.lock();
        s.credential_override = creds;
        s.sessions.clear();
        Ok(())
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Closes every listener and open connection. Safe to call twice.
    pub async fn stop(&mut self) {
        if self.stopped {
            return;
        }
        self.stopped = true;
        for dev in &mut self.devices {
            for task in dev.tasks.drain(..) {
                task.abort();
                let _ = task.await;
            }
        }
    }
}

impl Drop for FleetHandle {
    fn drop(&mut self) {
        for dev in &self.devices {
            for task in &dev.tasks {
                task.abort();
            }
        }
    }
}

pub async fn stop_fleet(handle: &mut FleetHandle) {
    handle.stop().await
}

/// A plain site: `/` answers 200 with a static page, everything else 404.
pub struct StaticSite {
    pub base_url: Url,
    task: JoinHandle<()>,
}

impl StaticSite {
    pub async fn start(body: &'static str) -> std::io::Result<Self> {
        let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).await?;
        let port = listener.local_addr()?.port();
        let task = tokio::spawn(server::serve_static(listener, body));
        Ok(Self {
            base_url: Url::parse(&format!("http://127.0.0.1:{port}/")).expect("loopback url"),
            task,
        })
    }
}

impl Drop for StaticSite {
    fn drop(&mut self) {
        self.task.abort();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fleet_matches_profiles() {
        let fleet = bundled_fleet();
        assert_eq!(fleet.len(), 10);
        let huawei = fleet.iter().find(|s| s.id() == "huawei-e5331").unwrap();
        assert!(matches!(
            &huawei.behavior.tls,
            Some(CertProfile::ExpiredMismatched { subject, .. }) if subject == "ipwebs.interpeak.com"
        ));
        let dlink = fleet.iter().find(|s| s.id() == "dlink-dir615").unwrap();
        assert_eq!(dlink.behavior.reboot_endpoint.as_ref().unwrap().path, "/tools_system.htm");
        assert!(fleet.iter().all(|s| s.behavior.frame_options_header.is_none()));
    }

    #[test]
    fn overrides_can_clear_and_set() {
        let db = SignatureDatabase::bundled();
        let raw = br#"{"version":1,"devices":[{"signature":"fritzbox-2170","behavior":{
            "frame_options_header":"SAMEORIGIN","session_cookie":null}}]}"#;
        let specs = load_fleet_config(raw, &db).unwrap();
        assert_eq!(specs[0].behavior.frame_options_header.as_deref(), Some("SAMEORIGIN"));
        assert!(specs[0].behavior.session_cookie.is_none());
    }

    #[test]
    fn inconsistent_behavior_rejected() {
        let db = SignatureDatabase::bundled();
        let raw = br#"{"version":1,"devices":[{"signature":"asus-rt-n12","behavior":{"reflective_endpoint":null}}]}"#;
        assert!(matches!(load_fleet_config(raw, &db), Err(FleetError::Inconsistent { .. })));
        let raw = br#"{"version":1,"devices":[{"signature":"linksys-wrt54gl","behavior":{"tls":{"profile":"none"}}}]}"#;
        assert!(matches!(load_fleet_config(raw, &db), Err(FleetError::Inconsistent { .. })));
    }

    #[test]
    fn unknown_signature_and_fields() {
        let db = SignatureDatabase::bundled();
        let raw = br#"{"version":1,"devices":[{"signature":"nope"}]}"#;
        assert!(matches!(load_fleet_config(raw, &db), Err(FleetError::UnknownSignature { .. })));
        let raw = br#"{"version":1,"devices":[{"signature":"asus-rt-n12","behavior":{"bogus":1}}]}"#;
        assert!(matches!(load_fleet_config(raw, &db), Err(FleetError::Parse { .. })));
    }

    #[test]
    fn empty_config() {
        let specs = load_fleet_config(br#"{"version":1,"devices":[]}"#, &SignatureDatabase::bundled()).unwrap();
        assert!(specs.is_empty());
    }
}
