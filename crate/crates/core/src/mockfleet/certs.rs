use std::net::IpAddr;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use rcgen::{
    BasicConstraints, CertificateParams, DistinguishedName, DnType, IsCa, KeyPair, SanType,
};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum CertProfile {
    None,
    SelfSigned,
    /// Leaf for `subject`, issued by a throwaway CA, valid for the two years ending at `not_after`.
    ExpiredMismatched { subject: String, not_after: NaiveDate },
}

impl CertProfile {
    pub fn serves_tls(&self) -> bool {
        !matches!(self, CertProfile::None)
    }
}

fn dn(cn: &str) -> DistinguishedName {
    let mut dn = DistinguishedName::new();
    dn.push(DnType::CommonName, cn);
    dn
}

/// Builds a rustls server config presenting the profile's certificate chain.
pub fn server_config(
    profile: &CertProfile,
    common_name: &str,
    ip_sans: &[IpAddr],
) -> Result<Option<Arc<rustls::ServerConfig>>, String> {
    let err = |e: rcgen::Error| e.to_string();
    let (chain, key) = match profile {
        CertProfile::None => return Ok(None),
        CertProfile::SelfSigned => {
            let key = KeyPair::generate().map_err(err)?;
            let mut params = CertificateParams::default();
            params.distinguished_name = dn(common_name);
            params.subject_alt_names = ip_sans.iter().map(|ip| SanType::IpAddress(*ip)).collect();
            params.not_before = rcgen::date_time_ymd(2024, 1, 1);
            params.not_after = rcgen::date_time_ymd(2049, 12, 31);
            let cert = params.self_signed(&key).map_err(err)?;
            (vec![cert.der().clone()], key)
        }
        CertProfile::ExpiredMismatched { subject, not_after } => {
            let ca_key = KeyPair::generate().map_err(err)?;
            let mut ca_params = CertificateParams::default();
            ca_params.distinguished_name = dn("Interpeak Test CA");
            ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
            ca_params.not_before = rcgen::date_time_ymd(not_after.year() - 3, 1, 1);
            ca_params.not_after = rcgen::date_time_ymd(not_after.year() + 1, 12, 31);
            let ca = ca_params.self_signed(&ca_key).map_err(err)?;

            let key = KeyPair::generate().map_err(err)?;
            let mut params = CertificateParams::default();
            params.distinguished_name = dn(subject);
            params.subject_alt_names = vec![SanType::DnsName(
                subject.clone().try_into().map_err(err)?,
            )];
            let start = not_after
                .with_year(not_after.year() - 2)
                .unwrap_or(*not_after);
            params.not_before =
                rcgen::date_time_ymd(start.year(), start.month() as u8, start.day() as u8);
            params.not_after = rcgen::date_time_ymd(
                not_after.year(),
                not_after.month() as u8,
                not_after.day() as u8,
            );
            let cert = params.signed_by(&key, &ca, &ca_key).map_err(err)?;
            (vec![cert.der().clone(), ca.der().clone()], key)
        }
    };
    let chain: Vec<CertificateDer<'static>> = chain.into_iter().map(|c| c.into_owned()).collect();
    let key = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key.serialize_der()));
    let config = rustls::ServerConfig::builder_with_provider(Arc::new(
        rustls::crypto::aws_lc_rs::default_provider(),
    ))
    .with_safe_default_protocol_versions()
    .map_err(|e| e.to_string())?
    .with_no_client_auth()
    .with_single_cert(chain, key)
    .map_err(|e| e.to_string())?;
    Ok(Some(Arc::new(config)))
}
