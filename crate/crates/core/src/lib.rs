//! Router web-interface security auditor.
//!
//! Fingerprints home routers from their HTTP surface, audits them against a
//! database of default credentials and known weaknesses, generates
//! proof-of-concept pages and renders structured reports. A fleet of emulated
//! routers ships with the crate for testing.

pub mod audit;
pub mod cli;
pub mod discovery;
pub mod fingerprint;
pub mod http;
pub mod mockfleet;
pub mod payload;
pub mod report;
pub mod signature;
pub mod tls;
