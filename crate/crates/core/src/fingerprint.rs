//! Router identification from the unauthenticated HTTP surface.
//!
//! BasicAuth devices are told apart by their `WWW-Authenticate` realm, which
//! is a fixed per-model string. Web-form devices expose static resources
//! (logos, status icons) whose paths exist on exactly one model. The procedure
//! asks for the realm once, then walks the web-form resources in database
//! order, and in a closed-world database names the last remaining candidate
//! without probing it.

use serde::{Deserialize, Serialize};
use url::Url;

use crate::http::{join_path, EvidenceRef, ProbeResult, Transport, TransportError};
use crate::signature::{AuthMethod, RouterSignature, SignatureDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Exact,
    Unidentified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    RealmMatch,
    RealmUnmatched,
    NoRealm,
    MalformedChallenge,
    ResourceHit,
    ResourceMiss,
    Eliminated,
    TransportError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintEvidence {
    pub kind: EvidenceKind,
    /// Absent only for elimination, which issues no request.
    pub probe: Option<EvidenceRef>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintDecision {
    pub matched_id: Option<String>,
    pub confidence: Confidence,
    pub probes_used: usize,
    pub evidence: Vec<FingerprintEvidence>,
}

impl FingerprintDecision {
    pub fn unidentified(evidence: Vec<FingerprintEvidence>, probes_used: usize) -> Self {
        Self {
            matched_id: None,
            confidence: Confidence::Unidentified,
            probes_used,
            evidence,
        }
    }

    fn exact(id: &str, evidence: Vec<FingerprintEvidence>, probes_used: usize) -> Self {
        Self {
            matched_id: Some(id.to_string()),
            confidence: Confidence::Exact,
            probes_used,
            evidence,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.confidence == Confidence::Exact
    }
}

#[derive(Debug, Clone)]
pub struct RealmProbe {
    pub realm: Option<String>,
    pub warning: Option<String>,
    pub probe: ProbeResult,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Challenge {
    scheme: String,
    params: Vec<(String, String)>,
}

fn is_tchar(c: char) -> bool {
    c.is_ascii_alphanumeric() || "!#$%&'*+-.^_`|~".contains(c)
}

/// Parses a `WWW-Authenticate` value into its challenges.
fn parse_challenges(value: &str) -> Result<Vec<Challenge>, String> {
    let chars: Vec<char> = value.chars().collect();
    let mut pos = 0;
    let skip = |pos: &mut usize, extra: &str| {
        while *pos < chars.len() && (chars[*pos] == ' ' || chars[*pos] == '\t' || extra.contains(chars[*pos])) {
            *pos += 1;
        }
    };
    let token = |pos: &mut usize| {
        let start = *pos;
        while *pos < chars.len() && is_tchar(chars[*pos]) {
            *pos += 1;
        }
        chars[start..*pos].iter().collect::<String>()
    };

    let mut out = Vec::new();
    loop {
        skip(&mut pos, ",");
        if pos >= chars.len() {
            break;
        }
        let scheme = token(&mut pos);
        if scheme.is_empty() {
            return Err(format!("expected auth scheme at offset {pos}"));
        }
        let mut params = Vec::new();
        loop {
            let save = pos;
            skip(&mut pos, ",");
            let name = token(&mut pos);
            skip(&mut pos, "");
            if name.is_empty() || pos >= chars.len() || chars[pos] != '=' {
                pos = save;
                break;
            }
            // `name=` or `name==` at the end of a challenge is a token68 blob
            let mut end = pos;
            while end < chars.len() && chars[end] == '=' {
                end += 1;
            }
            if params.is_empty() && (end > pos + 1 || end == chars.len() || chars[end] == ',') {
                pos = save;
                break;
            }
            pos += 1;
            skip(&mut pos, "");
            let value = if pos < chars.len() && chars[pos] == '"' {
                pos += 1;
                let mut v = String::new();
                loop {
                    match chars.get(pos) {
                        None => return Err("unterminated quoted-string".into()),
                        Some('"') => {
                            pos += 1;
                            break;
                        }
                        Some('\\') => {
                            let c = chars.get(pos + 1).ok_or("dangling escape")?;
                            v.push(*c);
                            pos += 2;
                        }
                        Some(c) => {
                            v.push(*c);
                            pos += 1;
                        }
                    }
                }
                v
            } else {
                let v = token(&mut pos);
                if v.is_empty() {
                    return Err(format!("missing value for parameter {name}"));
                }
                v
            };
            params.push((name.to_ascii_lowercase(), value));
        }
        // token68 credentials (e.g. `Negotiate abc==`) are not params; skip them.
        skip(&mut pos, "");
        while pos < chars.len() && chars[pos] != ',' && (is_tchar(chars[pos]) || chars[pos] == '=' || chars[pos] == '/') {
            pos += 1;
        }
        out.push(Challenge { scheme, params });
        if pos < chars.len() && chars[pos] != ',' && chars[pos] != ' ' {
            return Err(format!("unexpected character {:?} at offset {pos}", chars[pos]));
        }
    }
    Ok(out)
}

/// Extracts the realm of the first `Basic` challenge.
pub fn parse_basic_realm(value: &str) -> Result<Option<String>, String> {
    Ok(parse_challenges(value)?
        .into_iter()
        .find(|c| c.scheme.eq_ignore_ascii_case("basic"))
        .and_then(|c| c.params.into_iter().find(|(k, _)| k == "realm").map(|(_, v)| v)))
}

/// Formats a `Basic` challenge, quoting the realm.
pub fn basic_challenge(realm: &str) -> String {
    let mut out = String::with_capacity(realm.len() + 16);
    out.push_str("Basic realm=\"");
    for c in realm.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

pub async fn probe_realm(transport: &Transport, base_url: &Url) -> Result<RealmProbe, TransportError> {
    let probe = transport.get(base_url.clone()).await?;
    let mut realm = None;
    let mut warning = None;
    if probe.status_code == 401 {
        match probe.header("www-authenticate") {
            None => warning = Some("401 without WWW-Authenticate header".to_string()),
            Some(value) => match parse_basic_realm(value) {
                Ok(Some(r)) => realm = Some(r),
                Ok(None) => warning = Some(format!("no Basic realm in challenge {value:?}")),
                Err(e) => warning = Some(format!("malformed WWW-Authenticate {value:?}: {e}")),
            },
        }
    }
    Ok(RealmProbe {
        realm,
        warning,
        probe,
    })
}

/// Exact, case-sensitive realm lookup.
pub fn match_realm<'a>(realm: &str, db: &'a SignatureDatabase) -> Option<&'a RouterSignature> {
    if realm.is_empty() {
        return None;
    }
    db.routers().iter().find(|s| s.realm.as_deref() == Some(realm))
}

pub async fn probe_resource(
    transport: &Transport,
    base_url: &Url,
    path: &str,
) -> Result<(bool, ProbeResult), TransportError> {
    let probe = transport.get(join_path(base_url, path)).await?;
    Ok((probe.status_code == 200, probe))
}

#[derive(PartialEq)]
enum RealmOutcome {
    NoChallenge,
    Unmatched,
    Failed,
}

/// Whether a lowercased page mentions the signature's manufacturer or model.
fn names_device(page: &str, sig: &RouterSignature) -> bool {
    [&sig.manufacturer, &sig.model]
        .iter()
        .any(|t| !t.is_empty() && page.contains(&t.to_lowercase()))
}

pub async fn fingerprint(transport: &Transport, base_url: &Url, db: &SignatureDatabase) -> FingerprintDecision {
    let mut evidence = Vec::new();
    let mut probes = 0;
    // lowercased landing page, consulted before closed-world elimination
    let mut landing = String::new();

    probes += 1;
    let realm_outcome = match probe_realm(transport, base_url).await {
        Ok(rp) => {
            landing = rp.probe.body_text().to_lowercase();
            if let Some(w) = &rp.warning {
                evidence.push(FingerprintEvidence {
                    kind: EvidenceKind::MalformedChallenge,
                    probe: Some(rp.probe.evidence(None)),
                    reason: w.clone(),
                });
            }
            match rp.realm {
                Some(realm) => match match_realm(&realm, db) {
                    Some(sig) => {
                        evidence.push(FingerprintEvidence {
                            kind: EvidenceKind::RealmMatch,
                            probe: Some(rp.probe.evidence(None)),
                            reason: format!("{} answers with realm \"{realm}\"", sig.id),
                        });
                        return FingerprintDecision::exact(&sig.id, evidence, probes);
                    }
                    None => {
                        evidence.push(FingerprintEvidence {
                            kind: EvidenceKind::RealmUnmatched,
                            probe: Some(rp.probe.evidence(None)),
                            reason: format!("unknown realm \"{realm}\""),
                        });
                        RealmOutcome::Unmatched
                    }
                },
                None => {
                    if rp.warning.is_none() {
                        evidence.push(FingerprintEvidence {
                            kind: EvidenceKind::NoRealm,
                            probe: Some(rp.probe.evidence(None)),
                            reason: format!("status {} without Basic challenge", rp.probe.status_code),
                        });
                        RealmOutcome::NoChallenge
                    } else if rp.probe.status_code == 401 {
                        RealmOutcome::Unmatched
                    } else {
                        RealmOutcome::NoChallenge
                    }
                }
            }
        }
        Err(err) => {
            evidence.push(FingerprintEvidence {
                kind: EvidenceKind::TransportError,
                probe: Some(EvidenceRef::failed("GET", base_url, &err)),
                reason: "realm probe failed".into(),
            });
            RealmOutcome::Failed
        }
    };

    let web_sigs: Vec<&RouterSignature> = db
        .routers()
        .iter()
        .filter(|s| s.auth_method == AuthMethod::WebForm && !s.unique_resources.is_empty())
        .collect();
    let mut clean_misses = 0;
    for (i, sig) in web_sigs.iter().enumerate() {
        let last = i + 1 == web_sigs.len();
        if last
            && db.is_closed_world()
            && realm_outcome == RealmOutcome::NoChallenge
            && clean_misses == i
            && names_device(&landing, sig)
        {
            evidence.push(FingerprintEvidence {
                kind: EvidenceKind::Eliminated,
                probe: None,
                reason: format!(
                    "closed-world elimination: all {i} other web-form signatures ruled out, remaining {}",
                    sig.id
                ),
            });
            return FingerprintDecision::exact(&sig.id, evidence, probes);
        }

        let path = &sig.unique_resources[0];
        probes += 1;
        match probe_resource(transport, base_url, path).await {
            Ok((true, probe)) => {
                evidence.push(FingerprintEvidence {
                    kind: EvidenceKind::ResourceHit,
                    probe: Some(probe.evidence(None)),
                    reason: format!("{} unique resource {path} present", sig.id),
                });
                return FingerprintDecision::exact(&sig.id, evidence, probes);
            }
            Ok((false, probe)) => {
                clean_misses += 1;
                evidence.push(FingerprintEvidence {
                    kind: EvidenceKind::ResourceMiss,
                    probe: Some(probe.evidence(None)),
                    reason: format!("{} unique resource {path} absent ({})", sig.id, probe.status_code),
                });
            }
            Err(err) => {
                evidence.push(FingerprintEvidence {
                    kind: EvidenceKind::TransportError,
                    probe: Some(EvidenceRef::failed("GET", &join_path(base_url, path), &err)),
                    reason: format!("{} resource probe failed", sig.id),
                });
            }
        }
    }
    FingerprintDecision::unidentified(evidence, probes)
}
