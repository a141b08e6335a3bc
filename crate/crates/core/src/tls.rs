//! Certificate facts extracted from a TLS peer.

use std::net::IpAddr;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use x509_parser::extensions::GeneralName;
use x509_parser::prelude::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsInfo {
    pub https_reachable: bool,
    pub cert_subject: String,
    pub cert_issuer: String,
    pub self_signed: bool,
    pub not_after: DateTime<Utc>,
    pub expired_at_scan: bool,
    pub hostname_match: bool,
}

impl TlsInfo {
    /// Parses a DER leaf certificate as seen when connecting to `host` at `scan_time`.
    pub fn from_der(der: &[u8], host: &str, scan_time: DateTime<Utc>) -> Result<Self, String> {
        let (_, cert) = X509Certificate::from_der(der).map_err(|e| format!("bad certificate: {e}"))?;
        let not_after = Utc
            .timestamp_opt(cert.validity().not_after.timestamp(), 0)
            .single()
            .ok_or_else(|| "certificate not_after out of range".to_string())?;
        Ok(Self {
            https_reachable: true,
            cert_subject: display_name(cert.subject()),
            cert_issuer: display_name(cert.issuer()),
            self_signed: cert.subject().as_raw() == cert.issuer().as_raw(),
            not_after,
            expired_at_scan: scan_time > not_after,
            hostname_match: hostname_matches(&cert, host),
        })
    }

    pub fn is_valid(&self) -> bool {
        !self.self_signed && !self.expired_at_scan && self.hostname_match
    }

    /// Human-readable list of what is wrong with the certificate.
    pub fn defects(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.self_signed {
            out.push("self_signed");
        }
        if self.expired_at_scan {
            out.push("expired");
        }
        if !self.hostname_match {
            out.push("hostname_mismatch");
        }
        out
    }
}

fn display_name(name: &X509Name<'_>) -> String {
    name.iter_common_name()
        .next()
        .and_then(|cn| cn.as_str().ok())
        .map(str::to_string)
        .unwrap_or_else(|| name.to_string())
}

fn hostname_matches(cert: &X509Certificate<'_>, host: &str) -> bool {
    let host = host.trim_start_matches('[').trim_end_matches(']');
    let host_ip: Option<IpAddr> = host.parse().ok();
    let mut saw_san = false;
    if let Ok(Some(san)) = cert.subject_alternative_name() {
        for name in &san.value.general_names {
            saw_san = true;
            match (name, host_ip) {
                (GeneralName::DNSName(dns), None) if dns_matches(dns, host) => return true,
                (GeneralName::IPAddress(bytes), Some(ip)) if ip_bytes_eq(bytes, ip) => return true,
                _ => {}
            }
        }
    }
    if saw_san {
        return false;
    }
    cert.subject()
        .iter_common_name()
        .filter_map(|cn| cn.as_str().ok())
        .any(|cn| match host_ip {
            Some(ip) => cn.parse::<IpAddr>().ok() == Some(ip),
            None => dns_matches(cn, host),
        })
}

fn dns_matches(pattern: &str, host: &str) -> bool {
    let pattern = pattern.to_ascii_lowercase();
    let host = host.to_ascii_lowercase();
    match pattern.strip_prefix("*.") {
        Some(suffix) => host
            .split_once('.')
            .is_some_and(|(label, rest)| !label.is_empty() && rest == suffix),
        None => pattern == host,
    }
}

fn ip_bytes_eq(bytes: &[u8], ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => bytes == v4.octets(),
        IpAddr::V6(v6) => bytes == v6.octets(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rcgen::{CertificateParams, DnType, KeyPair, SanType};

    fn cert(cn: &str, sans: Vec<SanType>, not_after: (i32, u8, u8)) -> Vec<u8> {
        let key = KeyPair::generate().unwrap();
        let mut params = CertificateParams::default();
        params.distinguished_name.push(DnType::CommonName, cn);
        params.subject_alt_names = sans;
        params.not_before = rcgen::date_time_ymd(2000, 1, 1);
        params.not_after = rcgen::date_time_ymd(not_after.0, not_after.1, not_after.2);
        params.self_signed(&key).unwrap().der().to_vec()
    }

    #[test]
    fn expired_and_mismatched() {
        let der = cert(
            "ipwebs.interpeak.com",
            vec![SanType::DnsName("ipwebs.interpeak.com".try_into().unwrap())],
            (2008, 9, 30),
        );
        let info = TlsInfo::from_der(&der, "192.168.1.1", Utc::now()).unwrap();
        assert_eq!(info.cert_subject, "ipwebs.interpeak.com");
        assert!(info.expired_at_scan);
        assert!(!info.hostname_match);
        assert!(info.self_signed);
        assert_eq!(info.not_after.format("%Y-%m").to_string(), "2008-09");
    }

    #[test]
    fn ip_san_matches() {
        let der = cert(
            "Linksys",
            vec![SanType::IpAddress("127.0.0.1".parse().unwrap())],
            (2049, 1, 1),
        );
        let info = TlsInfo::from_der(&der, "127.0.0.1", Utc::now()).unwrap();
        assert!(info.hostname_match);
        assert!(!info.expired_at_scan);
        assert_eq!(info.defects(), vec!["self_signed"]);
    }

    #[test]
    fn expiry_is_relative_to_scan_time() {
        let der = cert("a.example", vec![], (2030, 1, 1));
        let before = Utc.with_ymd_and_hms(2029, 12, 31, 0, 0, 0).unwrap();
        let after = Utc.with_ymd_and_hms(2030, 1, 2, 0, 0, 0).unwrap();
        assert!(!TlsInfo::from_der(&der, "a.example", before).unwrap().expired_at_scan);
        assert!(TlsInfo::from_der(&der, "a.example", after).unwrap().expired_at_scan);
    }

    #[test]
    fn wildcard_and_cn_fallback() {
        assert!(dns_matches("*.example.org", "router.example.org"));
        assert!(!dns_matches("*.example.org", "example.org"));
        let der = cert("router.lan", vec![], (2049, 1, 1));
        assert!(TlsInfo::from_der(&der, "ROUTER.lan", Utc::now()).unwrap().hostname_match);
    }
}
