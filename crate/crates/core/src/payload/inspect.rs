//! Parse-back of generated pages with a real HTML5 parser.
//!
//! These readers know nothing about how the generators build their output;
//! they only look at the parsed DOM, which makes them usable as an oracle for
//! escaping and structure.

use scraper::{ElementRef, Html, Selector};

use super::{ButtonOverlay, CsrfSpec, FormMethod, Rect};

fn sel(s: &str) -> Selector {
    Selector::parse(s).expect("static selector")
}

pub fn element_count(html: &str) -> usize {
    Html::parse_document(html)
        .tree
        .nodes()
        .filter(|n| n.value().is_element())
        .count()
}

/// Tag names of every element, in document order.
pub fn element_names(html: &str) -> Vec<String> {
    Html::parse_document(html)
        .tree
        .nodes()
        .filter_map(|n| n.value().as_element().map(|e| e.name().to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedCsrf {
    pub spec: CsrfSpec,
    pub auto_submit: bool,
    pub form_count: usize,
}

/// Recovers the form a CSRF page submits.
pub fn extract_csrf(html: &str) -> Result<ExtractedCsrf, String> {
    let doc = Html::parse_document(html);
    let forms: Vec<ElementRef> = doc.select(&sel("form")).collect();
    let form = forms.first().ok_or("no form")?;
    let action = form.value().attr("action").ok_or("form without action")?;
    let method = match form.value().attr("method").unwrap_or("GET").to_ascii_uppercase().as_str() {
        "POST" => FormMethod::Post,
        "GET" => FormMethod::Get,
        other => return Err(format!("unexpected method {other}")),
    };
    let mut fields = Vec::new();
    for input in form.select(&sel("input")) {
        let v = input.value();
        if v.attr("type").map(|t| t.eq_ignore_ascii_case("hidden")) != Some(true) {
            return Err("non-hidden input in CSRF form".into());
        }
        fields.push((
            v.attr("name").unwrap_or_default().to_string(),
            v.attr("value").unwrap_or_default().to_string(),
        ));
    }
    let auto_submit = doc
        .select(&sel("body"))
        .next()
        .and_then(|b| b.value().attr("onload"))
        .is_some_and(|h| h.replace(' ', "").contains("document.forms[0].submit()"));
    Ok(ExtractedCsrf {
        spec: CsrfSpec {
            action_url: action.to_string(),
            method,
            fields,
        },
        auto_submit,
        form_count: forms.len(),
    })
}

/// Parses `top:35px; left:300px` style declarations into pixel values.
pub fn style_px(style: &str, prop: &str) -> Option<u32> {
    style_decl(style, prop)?.strip_suffix("px")?.trim().parse().ok()
}

pub fn style_decl<'a>(style: &'a str, prop: &str) -> Option<&'a str> {
    style.split(';').find_map(|decl| {
        let (k, v) = decl.split_once(':')?;
        (k.trim().eq_ignore_ascii_case(prop)).then_some(v.trim())
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoy {
    pub label: String,
    pub image_ref: String,
    pub drop_value: String,
    pub draggable: bool,
    pub sets_text_plain: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RedressReport {
    /// (a) overlays: absolute, positive z-index, pointer-events:none.
    pub overlay_rule_ok: bool,
    /// (b) every decoy draggable and carrying the drop value as text/plain.
    pub decoys: Vec<Decoy>,
    pub boxes: Vec<Rect>,
    /// (c)
    pub button: Option<ButtonOverlay>,
    /// (d) iframe source and placement.
    pub frame: Option<(String, Rect)>,
}

impl RedressReport {
    pub fn decoys_ok(&self, drop_value: &str) -> bool {
        !self.decoys.is_empty()
            && self
                .decoys
                .iter()
                .all(|d| d.draggable && d.sets_text_plain && d.drop_value == drop_value)
    }

    pub fn all_checks_pass(&self, frame_url: &str, drop_value: &str) -> bool {
        self.overlay_rule_ok
            && self.decoys_ok(drop_value)
            && self.button.is_some()
            && self.frame.as_ref().is_some_and(|(src, _)| src == frame_url)
    }
}

struct CssRule {
    selectors: Vec<String>,
    decls: String,
}

fn css_rules(css: &str) -> Vec<CssRule> {
    css.split('}')
        .filter_map(|chunk| {
            let (sel, decls) = chunk.split_once('{')?;
            Some(CssRule {
                selectors: sel.split(',').map(|s| s.trim().to_string()).collect(),
                decls: decls.to_string(),
            })
        })
        .collect()
}

fn selector_matches(selector: &str, el: &ElementRef) -> bool {
    let (tag, class) = match selector.split_once('.') {
        Some((t, c)) => (t, Some(c)),
        None => (selector, None),
    };
    let tag_ok = tag.is_empty() || tag.eq_ignore_ascii_case(el.value().name());
    let class_ok = class.is_none_or(|c| el.value().classes().any(|k| k == c));
    !selector.is_empty() && tag_ok && class_ok
}

fn overlay_rule_holds(rules: &[CssRule], el: &ElementRef) -> bool {
    let mut position = None;
    let mut z = None;
    let mut pe = None;
    for rule in rules.iter().filter(|r| r.selectors.iter().any(|s| selector_matches(s, el))) {
        if let Some(v) = style_decl(&rule.decls, "position") {
            position = Some(v.to_string());
        }
        if let Some(v) = style_decl(&rule.decls, "z-index") {
            z = v.parse::<i64>().ok();
        }
        if let Some(v) = style_decl(&rule.decls, "pointer-events") {
            pe = Some(v.to_string());
        }
    }
    position.as_deref() == Some("absolute") && z.is_some_and(|z| z > 0) && pe.as_deref() == Some("none")
}

fn rect_of(style: &str) -> Option<Rect> {
    Some(Rect {
        top: style_px(style, "top")?,
        left: style_px(style, "left")?,
        width: style_px(style, "width").unwrap_or(0),
        height: style_px(style, "height").unwrap_or(0),
    })
}

pub fn inspect_redress(html: &str) -> RedressReport {
    let doc = Html::parse_document(html);
    let css: String = doc.select(&sel("style")).map(|s| s.text().collect::<String>()).collect();
    let rules = css_rules(&css);

    let overlays: Vec<ElementRef> = doc.select(&sel(".overlay")).collect();
    let overlay_rule_ok = !overlays.is_empty() && overlays.iter().all(|el| overlay_rule_holds(&rules, el));

    let decoys = doc
        .select(&sel("img"))
        .map(|img| {
            let v = img.value();
            let drop_attr = v.attr("data-drop");
            let handler = v.attr("ondragstart").unwrap_or_default();
            Decoy {
                label: v.attr("alt").unwrap_or_default().to_string(),
                image_ref: v.attr("src").unwrap_or_default().to_string(),
                drop_value: drop_attr.unwrap_or_default().to_string(),
                draggable: v.attr("draggable") == Some("true"),
                sets_text_plain: drop_attr.is_some()
                    && handler.contains("dataTransfer.setData('text/plain'")
                    && handler.contains("getAttribute('data-drop')"),
            }
        })
        .collect();

    let boxes = doc
        .select(&sel("div.overlay"))
        .filter_map(|d| rect_of(d.value().attr("style").unwrap_or_default()))
        .collect();

    let button = doc.select(&sel("button")).next().and_then(|b| {
        let style = b.value().attr("style").unwrap_or_default();
        let positioned =
            overlay_rule_holds(&rules, &b) || style_decl(style, "position") == Some("absolute");
        positioned.then_some(())?;
        Some(ButtonOverlay {
            top: style_px(style, "top")?,
            left: style_px(style, "left")?,
            label: b.text().collect(),
        })
    });

    let frame = doc.select(&sel("iframe")).next().and_then(|f| {
        let style = f.value().attr("style").unwrap_or_default();
        if style_decl(style, "position") != Some("absolute") {
            return None;
        }
        Some((f.value().attr("src")?.to_string(), rect_of(style)?))
    });

    RedressReport {
        overlay_rule_ok,
        decoys,
        boxes,
        button,
        frame,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabjackReport {
    pub lure_href: Option<String>,
    pub lure_target: Option<String>,
    pub rebind_url: Option<String>,
    pub rebind_window: Option<String>,
    /// handler opens data-url into data-window and cancels navigation
    pub rebind_handler_ok: bool,
}

pub fn inspect_tabjack(lure: &str, rebind: &str) -> TabjackReport {
    let lure_doc = Html::parse_document(lure);
    let anchor = lure_doc.select(&sel("a[target]")).next();
    let rebind_doc = Html::parse_document(rebind);
    let r = rebind_doc.select(&sel("a[onclick]")).next();
    let handler = r.and_then(|a| a.value().attr("onclick")).unwrap_or_default();
    TabjackReport {
        lure_href: anchor.and_then(|a| a.value().attr("href")).map(str::to_string),
        lure_target: anchor.and_then(|a| a.value().attr("target")).map(str::to_string),
        rebind_url: r.and_then(|a| a.value().attr("data-url")).map(str::to_string),
        rebind_window: r.and_then(|a| a.value().attr("data-window")).map(str::to_string),
        rebind_handler_ok: handler.contains("window.open(")
            && handler.contains("getAttribute('data-url')")
            && handler.contains("getAttribute('data-window')")
            && handler.trim_end().ends_with("return false;")
            && r.and_then(|a| a.value().attr("href")) == Some("#"),
    }
}

/// Forms found on a page, with their inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormInfo {
    pub action: Option<String>,
    pub method: String,
    /// (type, name, value)
    pub inputs: Vec<(String, String, String)>,
}

pub fn extract_forms(html: &str) -> Vec<FormInfo> {
    let doc = Html::parse_document(html);
    doc.select(&sel("form"))
        .map(|f| FormInfo {
            action: f.value().attr("action").map(str::to_string),
            method: f.value().attr("method").unwrap_or("GET").to_ascii_uppercase(),
            inputs: f
                .select(&sel("input"))
                .map(|i| {
                    let v = i.value();
                    (
                        v.attr("type").unwrap_or("text").to_ascii_lowercase(),
                        v.attr("name").unwrap_or_default().to_string(),
                        v.attr("value").unwrap_or_default().to_string(),
                    )
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_one_verbatim_parses() {
        // the published page, with the entity-encoded underscore
        let html = r#"<body onload="document.forms[0].submit()">
<form action="http://192.168.0.1/tools_system.htm" method="POST">
<input type="hidden" name="page" value="tools&#95;system" />
<input type="hidden" name="submitType" value="3" />
</form>
</body>"#;
        let got = extract_csrf(html).unwrap();
        assert!(got.auto_submit);
        assert_eq!(got.spec, CsrfSpec::dlink_reboot("http://192.168.0.1"));
    }

    #[test]
    fn style_parsing() {
        assert_eq!(style_px("top:35px; left:300px", "left"), Some(300));
        assert_eq!(style_px("top: 35px", "top"), Some(35));
        assert_eq!(style_px("top:auto", "top"), None);
    }

    #[test]
    fn overlay_rule_requires_all_three_properties() {
        let ok = r#"<style>div, button { position:absolute; z-index:1; border:1px solid; pointer-events:none }</style><div class="overlay" style="top:1px;left:1px"></div>"#;
        assert!(inspect_redress(ok).overlay_rule_ok);
        let no_pe = r#"<style>div { position:absolute; z-index:1 }</style><div class="overlay"></div>"#;
        assert!(!inspect_redress(no_pe).overlay_rule_ok);
        let zero_z = r#"<style>div { position:absolute; z-index:0; pointer-events:none }</style><div class="overlay"></div>"#;
        assert!(!inspect_redress(zero_z).overlay_rule_ok);
    }
}
