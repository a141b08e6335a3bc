use std::convert::Infallible;
use std::sync::Arc;

use base64::Engine;
use http_body_util::{BodyExt, Full};
use hyper::body::{Bytes, Incoming};
use hyper::service::service_fn;
use hyper::{Request, Response};
use hyper_util::rt::TokioIo;
use rand::Rng;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::task::JoinSet;
use tokio_rustls::TlsAcceptor;

use super::{DeviceState, MutableState};
use crate::fingerprint::basic_challenge;
use crate::payload::{escape_attr, escape_text};
use crate::signature::{AuthMethod, Credentials};

// 1x1 transparent GIF
const PIXEL: &[u8] = b"GIF89a\x01\x00\x01\x00\x80\x00\x00\x00\x00\x00\xff\xff\xff\x21\xf9\x04\x01\x00\x00\x00\x00\x2c\x00\x00\x00\x00\x01\x00\x01\x00\x00\x02\x02\x44\x01\x00\x3b";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub query: Vec<(String, String)>,
    pub authorization: Option<String>,
    pub cookies: Vec<(String, String)>,
    pub form: Vec<(String, String)>,
}

impl MockRequest {
    pub fn get(path: &str) -> Self {
        Self {
            method: "GET".into(),
            path: path.into(),
            ..Default::default()
        }
    }

    fn query_param(&self, name: &str) -> Option<&str> {
        self.query.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn form_value(&self, name: &str) -> Option<&str> {
        self.form.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn cookie(&self, name: &str) -> Option<&str> {
        self.cookies.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn is_read(&self) -> bool {
        self.method == "GET" || self.method == "HEAD"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl MockResponse {
    fn new(status: u16, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            headers: vec![("Content-Type".into(), content_type.into())],
            body: body.into(),
        }
    }

    fn html(status: u16, body: String) -> Self {
        Self::new(status, "text/html; charset=utf-8", body)
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

fn random_hex(len: usize) -> String {
    let mut rng = rand::thread_rng();
    (0..len).map(|_| format!("{:x}", rng.gen_range(0..16u8))).collect()
}

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html><head><title>{}</title></head>\n<body>\n{}\n</body></html>\n",
        escape_text(title),
        body
    )
}

fn effective_credentials(dev: &DeviceState, s: &MutableState) -> Credentials {
    s.credential_override
        .clone()
        .unwrap_or_else(|| dev.signature.default_credentials())
}

fn basic_ok(header: Option<&str>, creds: &Credentials) -> bool {
    let Some(encoded) = header.and_then(|h| h.strip_prefix("Basic ")) else {
        return false;
    };
    let Ok(raw) = base64::engine::general_purpose::STANDARD.decode(encoded.trim()) else {
        return false;
    };
    let Ok(raw) = String::from_utf8(raw) else {
        return false;
    };
    let Some((user, pass)) = raw.split_once(':') else {
        return false;
    };
    user == creds.username.as_deref().unwrap_or("") && pass == creds.password.as_deref().unwrap_or("")
}

fn form_login_ok(dev: &DeviceState, req: &MockRequest, creds: &Credentials) -> bool {
    let Some(form) = &dev.signature.login_form else {
        return false;
    };
    let slot = |expected: &Option<String>, field: &Option<String>| match (expected, field) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(v), Some(f)) => req.form_value(f).unwrap_or("") == v,
    };
    slot(&creds.username, &form.username_field) && slot(&creds.password, &form.password_field)
}

fn login_page(dev: &DeviceState, failed: bool) -> String {
    if let Some(html) = &dev.behavior.login_form_html {
        return html.clone();
    }
    let sig = &dev.signature;
    let mut body = String::new();
    if failed {
        body.push_str("<p class=\"error\">Login failed</p>\n");
    }
    if let Some(form) = &sig.login_form {
        body.push_str(&format!(
            "<form id=\"login\" method=\"{}\" action=\"{}\">\n",
            escape_attr(&form.method),
            escape_attr(&form.action)
        ));
        if let Some(u) = &form.username_field {
            body.push_str(&format!("<input type=\"text\" name=\"{}\">\n", escape_attr(u)));
        }
        if let Some(p) = &form.password_field {
            body.push_str(&format!("<input type=\"password\" name=\"{}\">\n", escape_attr(p)));
        }
        body.push_str("<input type=\"submit\" value=\"Login\">\n</form>");
    }
    page(&format!("{} Login", sig.model), &body)
}

fn settings_form(dev: &DeviceState, page_path: &str) -> String {
    let b = &dev.behavior;
    let a = &dev.signature.audit;
    let token = if b.csrf_token {
        format!("<input type=\"hidden\" name=\"token\" value=\"{}\">\n", random_hex(32))
    } else {
        String::new()
    };
    if let Some(reboot) = b.reboot_endpoint.as_ref().filter(|r| r.path == page_path) {
        let hidden: String = reboot
            .fields
            .iter()
            .map(|(k, v)| {
                format!(
                    "<input type=\"hidden\" name=\"{}\" value=\"{}\">\n",
                    escape_attr(k),
                    escape_attr(v)
                )
            })
            .collect();
        return format!(
            "<form method=\"POST\" action=\"{}\">\n{token}{hidden}<input type=\"submit\" value=\"Reboot\">\n</form>",
            escape_attr(&reboot.path)
        );
    }
    let (action, field) = match &b.stored_xss_pair {
        Some(s) => (s.inject_path.as_str(), s.field.as_str()),
        None => (
            a.mutating_paths.first().map(String::as_str).unwrap_or(page_path),
            "setting",
        ),
    };
    format!(
        "<form method=\"POST\" action=\"{}\">\n{token}<input type=\"hidden\" name=\"submit_flag\" value=\"1\">\n<input type=\"text\" name=\"{}\">\n<input type=\"submit\" value=\"Apply\">\n</form>",
        escape_attr(action),
        escape_attr(field)
    )
}

fn admin_page(dev: &DeviceState, path: &str) -> String {
    let sig = &dev.signature;
    let menu = "<div id=\"admin-menu\"><a href=\"/\">Status</a> <a href=\"#wireless\">Wireless</a></div>";
    let form = if sig.audit.form_pages.iter().any(|p| p == path) {
        settings_form(dev, path)
    } else {
        String::new()
    };
    page(&sig.model, &format!("{menu}\n<h1>{}</h1>\n{form}", escape_text(&sig.display_name())))
}

/// Decides the response for one request. Pure apart from the device state.
pub fn route(dev: &DeviceState, req: &MockRequest) -> MockResponse {
    *dev.lock().methods_seen.entry(req.method.clone()).or_default() += 1;
    let mut resp = route_inner(dev, req);
    if let Some(xfo) = &dev.behavior.frame_options_header {
        resp.headers.push(("X-Frame-Options".into(), xfo.clone()));
    }
    if let Some(c) = &dev.behavior.session_cookie {
        let has_session_cookie = resp.headers.iter().any(|(k, _)| k == "Set-Cookie");
        if req.cookie(&c.name).is_none() && !has_session_cookie {
            resp.headers.push(("Set-Cookie".into(), cookie_header(&c.name, &random_hex(16), &c.flags)));
        }
    }
    if req.method == "HEAD" {
        resp.body.clear();
    }
    resp
}

fn cookie_header(name: &str, value: &str, flags: &[String]) -> String {
    let mut h = format!("{name}={value}; Path=/");
    for f in flags {
        h.push_str("; ");
        h.push_str(f);
    }
    h
}

fn route_inner(dev: &DeviceState, req: &MockRequest) -> MockResponse {
    let b = &dev.behavior;
    let sig = &dev.signature;
    let path = req.path.as_str();

    if req.is_read() && b.unique_resource_paths.iter().any(|p| p == path) {
        return MockResponse::new(200, "image/gif", PIXEL);
    }

    // the unauthenticated reboot handler
    if let Some(reboot) = b.reboot_endpoint.as_ref().filter(|r| r.path == path) {
        if req.method == "POST" && reboot.fields.iter().all(|(k, v)| req.form_value(k) == Some(v)) {
            dev.lock().reboot_count += 1;
            return MockResponse::html(200, page(&sig.model, "<p>The device is rebooting.</p>"));
        }
    }

    let mut state = dev.lock();
    let creds = effective_credentials(dev, &state);
    let open = creds.username.is_none() && creds.password.is_none();

    if sig.auth_method == AuthMethod::WebForm
        && req.method == "POST"
        && sig.login_form.as_ref().is_some_and(|f| f.action == path)
    {
        if open || form_login_ok(dev, req, &creds) {
            let sid = random_hex(32);
            state.sessions.insert(sid.clone());
            let mut resp = MockResponse::html(200, admin_page(dev, &sig.audit.admin_path));
            if let Some(c) = &b.session_cookie {
                resp.headers.push(("Set-Cookie".into(), cookie_header(&c.name, &sid, &c.flags)));
            }
            return resp;
        }
        return MockResponse::html(200, login_page(dev, true));
    }

    let a = &sig.audit;
    let known = path == "/"
        || path == a.admin_path
        || a.form_pages.iter().any(|p| p == path)
        || a.mutating_paths.iter().any(|p| p == path)
        || b.reflective_endpoint.as_ref().is_some_and(|r| r.path == path)
        || b
            .stored_xss_pair
            .as_ref()
            .is_some_and(|s| s.inject_path == path || s.display_path == path)
        || sig.login_form.as_ref().is_some_and(|f| f.action == path);
    if !known {
        return MockResponse::html(404, page("404 Not Found", "<h1>Not Found</h1>"));
    }

    if !open {
        match sig.auth_method {
            AuthMethod::BasicAuth => {
                if !basic_ok(req.authorization.as_deref(), &creds) {
                    let mut resp = MockResponse::html(401, page("401 Unauthorized", "<h1>Unauthorized</h1>"));
                    if let Some(realm) = &b.realm_header {
                        resp.headers
                            .push(("WWW-Authenticate".into(), basic_challenge(realm)));
                    }
                    return resp;
                }
            }
            AuthMethod::WebForm => {
                let authed = b
                    .session_cookie
                    .as_ref()
                    .and_then(|c| req.cookie(&c.name))
                    .is_some_and(|sid| state.sessions.contains(sid));
                if !authed {
                    return MockResponse::html(200, login_page(dev, false));
                }
            }
        }
    }

    if let Some(s) = &b.stored_xss_pair {
        if req.method == "POST" && s.inject_path == path {
            if let Some(v) = req.form_value(&s.field) {
                state.stored_values.push(v.to_string());
                state.current_stored = Some(v.to_string());
            }
            return MockResponse::html(200, page(&sig.model, "<p>Settings saved.</p>"));
        }
        if req.is_read() && s.display_path == path {
            let current = state.current_stored.clone().unwrap_or_default();
            return MockResponse::html(
                200,
                page(&sig.model, &format!("<table><tr><td>Name</td><td>{current}</td></tr></table>")),
            );
        }
    }
    drop(state);

    if let Some(r) = b.reflective_endpoint.as_ref().filter(|r| r.path == path) {
        let v = req.query_param(&r.param).unwrap_or_default();
        let shown = if r.encode { escape_attr(v) } else { v.to_string() };
        return MockResponse::html(200, page(&sig.model, &format!("<p>Results for: {shown}</p>")));
    }

    if !req.is_read() {
        return MockResponse::html(200, page(&sig.model, "<p>Settings saved.</p>"));
    }
    if sig.login_form.as_ref().is_some_and(|f| f.action == path) && path != a.admin_path && path != "/" {
        return MockResponse::html(200, login_page(dev, false));
    }
    MockResponse::html(200, admin_page(dev, path))
}

fn parse_cookies(header: &str) -> Vec<(String, String)> {
    header
        .split(';')
        .filter_map(|c| {
            let (k, v) = c.split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

async fn to_mock(req: Request<Incoming>) -> MockRequest {
    let (parts, body) = req.into_parts();
    let query = parts
        .uri
        .query()
        .map(|q| url::form_urlencoded::parse(q.as_bytes()).into_owned().collect())
        .unwrap_or_default();
    let header = |name: hyper::header::HeaderName| {
        parts.headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
    };
    let cookies = parts
        .headers
        .get_all(hyper::header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(parse_cookies)
        .collect();
    let body = body.collect().await.map(|b| b.to_bytes()).unwrap_or_default();
    let is_form = header(hyper::header::CONTENT_TYPE)
        .is_some_and(|ct| ct.starts_with("application/x-www-form-urlencoded"));
    MockRequest {
        method: parts.method.as_str().to_string(),
        path: parts.uri.path().to_string(),
        query,
        authorization: header(hyper::header::AUTHORIZATION),
        cookies,
        form: if is_form {
            url::form_urlencoded::parse(&body).into_owned().collect()
        } else {
            Vec::new()
        },
    }
}

fn to_hyper(resp: MockResponse) -> Response<Full<Bytes>> {
    let mut builder = Response::builder().status(resp.status);
    for (k, v) in &resp.headers {
        builder = builder.header(k, v);
    }
    builder
        .body(Full::new(Bytes::from(resp.body)))
        .unwrap_or_else(|_| Response::new(Full::new(Bytes::new())))
}

async fn serve_io<IO>(io: IO, state: Arc<DeviceState>)
where
    IO: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    let svc = service_fn(move |req| {
        let state = state.clone();
        async move {
            let mreq = to_mock(req).await;
            Ok::<_, Infallible>(to_hyper(route(&state, &mreq)))
        }
    });
    let _ = hyper::server::conn::http1::Builder::new()
        .serve_connection(TokioIo::new(io), svc)
        .await;
}

/// Accept loop for one listener. Connections live in a JoinSet owned by this
/// task, so aborting the task tears them down too.
pub(super) async fn serve(listener: TcpListener, tls: Option<TlsAcceptor>, state: Arc<DeviceState>) {
    let mut conns = JoinSet::new();
    loop {
        let Ok((stream, _)) = listener.accept().await else {
            continue;
        };
        while conns.try_join_next().is_some() {}
        let state = state.clone();
        match &tls {
            None => {
                conns.spawn(serve_io(stream, state));
            }
            Some(acceptor) => {
                let acceptor = acceptor.clone();
                conns.spawn(async move {
                    if let Ok(tls_stream) = acceptor.accept(stream).await {
                        serve_io(tls_stream, state).await;
                    }
                });
            }
        }
    }
}

pub(super) async fn serve_static(listener: TcpListener, body: &'static str) {
    let mut conns = JoinSet::new();
    loop {
        let Ok((stream, _)) = listener.accept().await else {
            continue;
        };
        while conns.try_join_next().is_some() {}
        conns.spawn(async move {
            let svc = service_fn(move |req: Request<Incoming>| async move {
                let resp = if req.uri().path() == "/" {
                    MockResponse::html(200, body.to_string())
                } else {
                    MockResponse::html(404, "Not Found".to_string())
                };
                Ok::<_, Infallible>(to_hyper(resp))
            });
            let _ = hyper::server::conn::http1::Builder::new()
                .serve_connection(TokioIo::new(stream), svc)
                .await;
        });
    }
}
