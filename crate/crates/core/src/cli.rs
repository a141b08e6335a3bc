//! Command-line front end.
//!
//! Exit codes: 0 clean, 1 vulnerable findings, 2 usage or I/O error,
//! 3 every scan target unreachable, 4 fingerprint unidentified.

use std::ffi::OsString;
use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;
use clap::{Parser, Subcommand, ValueEnum};
use futures::stream::{self, StreamExt};
use url::Url;

use crate::audit::{run_audit, AuditPolicy, AuditTarget, Mode};
use crate::discovery::{candidate_set, discover, parse_target, GatewayCandidate, DEFAULT_PARALLELISM};
use crate::fingerprint::fingerprint;
use crate::http::Transport;
use crate::mockfleet::{bundled_fleet, load_fleet_config, start_fleet, FleetHandle, MockRouterSpec};
use crate::payload::{self, PayloadKind};
use crate::report::{render_report, Format, Report, TargetReport};
use crate::signature::{is_private, load_signatures, SignatureDatabase};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VULNERABLE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;
pub const EXIT_UNIDENTIFIED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "router-audit", version, about = "Home router web-interface security auditor")]
pub struct Cli {
    /// Signature database (defaults to the bundled one).
    #[arg(long, global = true, env = "ROUTER_AUDIT_DB")]
    pub db: Option<PathBuf>,
    /// Log requests to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Passive,
    Active,
    Lab,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Passive => Mode::Passive,
            ModeArg::Active => Mode::ActiveSafe,
            ModeArg::Lab => Mode::Lab,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Text,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Text => Format::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Csrf,
    Redress,
    Tabjack,
}

impl From<KindArg> for PayloadKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Csrf => PayloadKind::Csrf,
            KindArg::Redress => PayloadKind::Redress,
            KindArg::Tabjack => PayloadKind::Tabjack,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discover, fingerprint and audit targets, then print a report.
    Scan {
        /// Target URLs or hosts. Without targets or --fleet, the default
        /// gateway addresses from the database are tried.
        targets: Vec<String>,
        /// Start this mock fleet and scan it.
        #[arg(long)]
        fleet: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "passive")]
        mode: ModeArg,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PARALLELISM)]
        parallel: usize,
        /// Allow lab mode against public addresses.
        #[arg(long)]
        i_own_this_network: bool,
    },
    /// Identify the router model at one URL.
    Fingerprint {
        target: String,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Write a proof-of-concept page generated from a JSON spec.
    GenPayload {
        #[arg(value_enum)]
        kind: KindArg,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a mock fleet until interrupted.
    MockFleet {
        #[arg(long)]
        fleet: Option<PathBuf>,
    },
}

struct Failure(i32, String);

impl<E: std::fmt::Display> From<(i32, E)> for Failure {
    fn from((code, e): (i32, E)) -> Self {
        Failure(code, e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_USAGE, e.to_string())
}

fn load_db(path: Option<&Path>) -> Result<SignatureDatabase, Failure> {
    match path {
        None => Ok(SignatureDatabase::bundled()),
        Some(p) => {
            let raw = std::fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            load_signatures(&raw).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn load_fleet(path: Option<&Path>, db: &SignatureDatabase) -> Result<Vec<MockRouterSpec>, Failure> {
    match path {
        None => Ok(bundled_fleet()),
        Some(p) => {
            let raw = std::fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            load_fleet_config(&raw, db).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(usage)
        }
    }
}

/// Lab mode sends state-changing requests, so keep it to local networks.
fn lab_target_allowed(url: &Url) -> bool {
    match url.host() {
        Some(url::Host::Ipv4(ip)) => ip.is_loopback() || is_private(IpAddr::V4(ip)),
        Some(url::Host::Ipv6(ip)) => ip.is_loopback() || is_private(IpAddr::V6(ip)),
        Some(url::Host::Domain(d)) => d.eq_ignore_ascii_case("localhost"),
        None => false,
    }
}

struct ScanArgs {
    targets: Vec<String>,
    fleet: Option<PathBuf>,
    mode: Mode,
    timeout: Duration,
    format: Format,
    out: Option<PathBuf>,
    parallel: usize,
    i_own_this_network: bool,
}

/// Discovers, fingerprints and audits the targets. The flag is false when no
/// target answered at all.
pub async fn scan_report(
    db: &SignatureDatabase,
    policy: &AuditPolicy,
    targets: &[AuditTarget],
    parallel: usize,
) -> (Report, bool) {
    let started = Utc::now();
    let transport = policy.transport();
    let candidates: Vec<GatewayCandidate> = targets.iter().map(|t| GatewayCandidate::user(t.base_url.clone())).collect();
    let live = discover(&policy.read_only_transport(), &candidates, parallel).await;
    for g in live.iter().filter(|g| !g.responded) {
        let reason = g.failure.as_ref().map(|f| f.message.as_str()).unwrap_or("no response");
        tracing::warn!(target = %g.base_url, %reason, "unreachable");
    }
    let responders: Vec<&AuditTarget> = targets
        .iter()
        .zip(&live)
        .filter(|(_, g)| g.responded)
        .map(|(t, _)| t)
        .collect();
    let any_live = !responders.is_empty();
    let reports: Vec<TargetReport> = stream::iter(responders)
        .map(|target| {
            let transport = &transport;
            async move {
                let decision = fingerprint(transport, &target.base_url, db).await;
                let findings = run_audit(transport, target, &decision, db, policy).await;
                TargetReport::new(target.base_url.as_str(), decision, findings)
            }
        })
        .buffered(parallel.max(1))
        .collect()
        .await;
    (Report::new(started, Utc::now(), reports), any_live)
}

async fn cmd_scan(db: &SignatureDatabase, args: ScanArgs) -> Result<i32, Failure> {
    if args.timeout.is_zero() {
        return Err(usage("--timeout-ms must be positive"));
    }
    let mut fleet: Option<FleetHandle> = None;
    let mut targets: Vec<AuditTarget> = Vec::new();

    if let Some(path) = &args.fleet {
        let specs = load_fleet(Some(path), db)?;
        let handle = start_fleet(&specs).await.map_err(usage)?;
        targets = handle.audit_targets();
        fleet = Some(handle);
    }
    for raw in &args.targets {
        targets.push(AuditTarget::new(parse_target(raw).map_err(usage)?));
    }
    if args.fleet.is_none() && args.targets.is_empty() {
        targets = candidate_set(db, &[])
            .map_err(usage)?
            .into_iter()
            .map(|c| AuditTarget::new(c.base_url))
            .collect();
    }

    if args.mode == Mode::Lab && !args.i_own_this_network {
        if let Some(c) = targets.iter().find(|c| !lab_target_allowed(&c.base_url)) {
            return Err(usage(format!(
                "refusing lab mode against {}: not a loopback or private address (pass --i-own-this-network to override)",
                c.base_url
            )));
        }
    }

    let policy = AuditPolicy::new(args.mode).with_timeout(args.timeout);
    let (report, any_live) = scan_report(db, &policy, &targets, args.parallel).await;

    if let Some(mut f) = fleet.take() {
        f.stop().await;
    }
    let bytes = render_report(&report, args.format).map_err(usage)?;
    write_output(args.out.as_deref(), &bytes)?;

    Ok(if !any_live {
        EXIT_UNREACHABLE
    } else if report.has_vulnerable() {
        EXIT_VULNERABLE
    } else {
        EXIT_OK
    })
}

async fn cmd_fingerprint(db: &SignatureDatabase, target: &str, timeout: Duration, format: Format) -> Result<i32, Failure> {
    let url = parse_target(target).map_err(usage)?;
    if timeout.is_zero() {
        return Err(usage("--timeout-ms must be positive"));
    }
    let decision = fingerprint(&Transport::new(timeout), &url, db).await;
    let out = match format {
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(&serde_json::to_value(&decision).map_err(usage)?).map_err(usage)?;
            v.push(b'\n');
            v
        }
        Format::Text => {
            let mut s = format!(
                "{}\nprobes_used {}\n",
                decision.matched_id.as_deref().unwrap_or("unidentified"),
                decision.probes_used
            );
            for e in &decision.evidence {
                let url = e.probe.as_ref().map(|p| p.url.as_str()).unwrap_or("-");
                s.push_str(&format!("  {:?} {url}: {}\n", e.kind, e.reason));
            }
            s.into_bytes()
        }
    };
    write_output(None, &out)?;
    Ok(if decision.is_exact() { EXIT_OK } else { EXIT_UNIDENTIFIED })
}

fn cmd_gen_payload(kind: PayloadKind, spec: &Path, out: &Path) -> Result<i32, Failure> {
    let raw = std::fs::read(spec).map_err(|e| usage(format!("{}: {e}", spec.display())))?;
    let files = payload::generate_files(kind, &raw).map_err(usage)?;
    std::fs::create_dir_all(out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
    for (name, html) in files {
        let path = out.join(name);
        std::fs::write(&path, html).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        println!("{}", path.display());
    }
    Ok(EXIT_OK)
}

async fn cmd_mock_fleet(db: &SignatureDatabase, fleet: Option<&Path>) -> Result<i32, Failure> {
    let specs = load_fleet(fleet, db)?;
    let mut handle = start_fleet(&specs).await.map_err(usage)?;
    // registered before the table is printed so an early Ctrl-C is not lost
    #[cfg(unix)]
    let mut interrupt =
        tokio::signal::unix::signal(tokio::signal::unix::SignalKind::interrupt()).map_err(usage)?;
    {
        let mut out = std::io::stdout().lock();
        for (id, url) in handle.urls() {
            let tls = handle.tls_url(&id).ok().flatten().map(|u| u.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{id:<18} {url} {tls}");
        }
        let _ = writeln!(out, "serving {} devices; Ctrl-C to stop", handle.len());
        let _ = out.flush();
    }
    #[cfg(unix)]
    interrupt.recv().await;
    #[cfg(not(unix))]
    tokio::signal::ctrl_c().await.map_err(usage)?;
    handle.stop().await;
    Ok(EXIT_OK)
}

async fn dispatch(cli: Cli) -> Result<i32, Failure> {
    let db = load_db(cli.db.as_deref())?;
    match cli.command {
        Command::Scan {
            targets,
            fleet,
            mode,
            timeout_ms,
            format,
            out,
            parallel,
            i_own_this_network,
        } => {
            cmd_scan(
                &db,
                ScanArgs {
                    targets,
                    fleet,
                    mode: mode.into(),
                    timeout: Duration::from_millis(timeout_ms),
                    format: format.into(),
                    out,
                    parallel,
                    i_own_this_network,
                },
            )
            .await
        }
        Command::Fingerprint {
            target,
            timeout_ms,
            format,
        } => cmd_fingerprint(&db, &target, Duration::from_millis(timeout_ms), format.into()).await,
        Command::GenPayload { kind, spec, out } => cmd_gen_payload(kind.into(), &spec, &out),
        Command::MockFleet { fleet } => cmd_mock_fleet(&db, fleet.as_deref()).await,
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub async fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if cli.verbose {
        let _ = tracing_subscriber::fmt()
            .with_writer(std::io::stderr)
            .with_env_filter(tracing_subscriber::EnvFilter::new("router_audit=debug"))
            .try_init();
    }
    match dispatch(cli).await {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}
