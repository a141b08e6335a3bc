//! Gateway discovery: probe the handful of default gateway addresses known
//! from the signature database instead of sweeping whole subnets.

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::http::{FailureKind, ProbeResult, Transport};
use crate::signature::SignatureDatabase;

pub const DEFAULT_PARALLELISM: usize = 8;
pub const MAX_REDIRECTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    SignatureDb,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayCandidate {
    pub base_url: Url,
    pub source: CandidateSource,
}

impl GatewayCandidate {
    pub fn user(base_url: Url) -> Self {
        Self {
            base_url,
            source: CandidateSource::UserSupplied,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid target URL {value:?}: {reason}")]
pub struct CandidateError {
    pub value: String,
    pub reason: String,
}

/// Parses a user-supplied target, accepting bare hosts as `http://host/`.
pub fn parse_target(raw: &str) -> Result<Url, CandidateError> {
    let err = |reason: String| CandidateError {
        value: raw.to_string(),
        reason,
    };
    let trimmed = raw.trim();
    let with_scheme = if trimmed.contains("://") {
        trimmed.to_string()
    } else {
        format!("http://{trimmed}")
    };
    let url = Url::parse(&with_scheme).map_err(|e| err(e.to_string()))?;
    if url.scheme() != "http" && url.scheme() != "https" {
        return Err(err(format!("unsupported scheme {}", url.scheme())));
    }
    if url.host_str().is_none_or(str::is_empty) {
        return Err(err("missing host".into()));
    }
    Ok(url)
}

/// Distinct DB gateways in DB order, then the extra targets; duplicates dropped.
pub fn candidate_set(db: &SignatureDatabase, extra_urls: &[&str]) -> Result<Vec<GatewayCandidate>, CandidateError> {
    let mut out: Vec<GatewayCandidate> = Vec::new();
    let mut push = |base_url: Url, source| {
        if !out.iter().any(|c| c.base_url == base_url) {
            out.push(GatewayCandidate { base_url, source });
        }
    };
    for sig in db.routers() {
        push(sig.gateway_url.clone(), CandidateSource::SignatureDb);
    }
    for raw in extra_urls {
        push(parse_target(raw)?, CandidateSource::UserSupplied);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LiveGateway {
    pub base_url: Url,
    pub responded: bool,
    /// First response received, before any redirect was followed.
    pub initial_probe: Option<ProbeResult>,
    /// Redirect targets visited, in order.
    pub redirects: Vec<Url>,
    pub failure: Option<ProbeFailure>,
}

async fn probe_one(transport: &Transport, candidate: &GatewayCandidate) -> LiveGateway {
    let mut live = LiveGateway {
        base_url: candidate.base_url.clone(),
        responded: false,
        initial_probe: None,
        redirects: Vec::new(),
        failure: None,
    };
    let mut url = candidate.base_url.clone();
    // a hard deadline on top of the client's own timeout
    let deadline = transport.timeout() * (MAX_REDIRECTS as u32 + 1) + transport.timeout() / 2;
    let walk = async {
        for hop in 0..=MAX_REDIRECTS {
            let probe = match transport.get(url.clone()).await {
                Ok(p) => p,
                Err(e) => {
                    if hop == 0 {
                        live.failure = Some(ProbeFailure {
                            kind: e.kind,
                            message: e.message,
                        });
                    }
                    return;
                }
            };
            let status = probe.status_code;
            let next = (300..400)
                .contains(&status)
                .then(|| probe.header("location").and_then(|l| url.join(l).ok()))
                .flatten()
                .filter(|u| u.scheme() == "http" || u.scheme() == "https");
            if hop == 0 {
                live.responded = true;
                live.initial_probe = Some(probe);
            }
            match next {
                Some(n) if hop < MAX_REDIRECTS => {
                    live.redirects.push(n.clone());
                    url = n;
                }
                _ => return,
            }
        }
    };
    if tokio::time::timeout(deadline, walk).await.is_err() && !live.responded {
        live.failure = Some(ProbeFailure {
            kind: FailureKind::Timeout,
            message: format!("no response within {deadline:?}"),
        });
    }
    live
}

/// Probes every candidate with at most `parallel` requests in flight.
/// The result has one entry per candidate, in input order.
pub async fn discover(transport: &Transport, candidates: &[GatewayCandidate], parallel: usize) -> Vec<LiveGateway> {
    stream::iter(candidates)
        .map(|c| probe_one(transport, c))
        .buffered(parallel.max(1))
        .collect()
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_db_has_five_gateways() {
        let db = SignatureDatabase::bundled();
        let got: Vec<String> = candidate_set(&db, &[])
            .unwrap()
            .into_iter()
            .map(|c| c.base_url.host_str().unwrap().to_string())
            .collect();
        assert_eq!(
            got,
            ["192.168.0.1", "192.168.1.1", "192.168.2.1", "192.168.11.1", "192.168.178.1"]
        );
        assert_eq!(candidate_set(&db, &["http://192.168.1.1"]).unwrap().len(), 5);
    }

    #[test]
    fn extras_on_empty_db() {
        let db = SignatureDatabase::new(vec![], true).unwrap();
        let got = candidate_set(&db, &["http://10.0.0.1"]).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].source, CandidateSource::UserSupplied);
    }

    #[test]
    fn bad_extra_is_named() {
        let db = SignatureDatabase::bundled();
        let err = candidate_set(&db, &["ftp://x"]).unwrap_err();
        assert_eq!(err.value, "ftp://x");
        assert!(candidate_set(&db, &["http://"]).is_err());
        assert_eq!(parse_target("10.0.0.1").unwrap().as_str(), "http://10.0.0.1/");
    }
}
