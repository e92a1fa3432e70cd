//! `mediagate`: audit access control of hash-named web media.
//!
//! Subcommands compose the library workflows end to end: `probe` runs the
//! header matrix and classifies the protection regime, `assemble` rebuilds a
//! fragmented MP4 from its playlist, `archive` pushes/surveys/verifies
//! against a web archive, `tls-audit` judges https enforcement, and
//! `mock serve` runs the offline behavior twin everything can be pointed at.
//!
//! JSON reports go to stdout; human-readable notes go to stderr.

mod commands;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
/// A fetch failed or a verification came back non-identical.
pub const EXIT_FAILURE: i32 = 1;
/// The probe matrix lacked the evidence needed to classify.
pub const EXIT_INSUFFICIENT: i32 = 2;
/// Bad invocation (also used when an external target is not confirmed).
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "mediagate",
    version,
    about = "Audit access control of hash-named web media: probe, reassemble, archive, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Probe a URL under authentication-relevant header variations and
    /// classify the protection regime.
    Probe(ProbeArgs),
    /// Parse a playlist, fetch every part, and reassemble the video.
    Assemble(AssembleArgs),
    /// Web-archive workflows: push captures, survey the index, verify
    /// live-vs-archive equivalence.
    #[command(subcommand)]
    Archive(ArchiveCommand),
    /// Judge https enforcement: plain-http serving, STS, preload, CSP.
    #[command(name = "tls-audit")]
    TlsAudit(TlsAuditArgs),
    /// The offline behavior-twin server.
    #[command(subcommand)]
    Mock(MockCommand),
}

/// Flags shared by every network-touching command.
#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// host:port receiving connections for https URLs (the mock's
    /// https-role listener).
    #[arg(long, value_name = "ADDR")]
    pub https_endpoint: Option<String>,
    /// host:port receiving connections for http URLs (the mock's http-role
    /// listener).
    #[arg(long, value_name = "ADDR")]
    pub http_endpoint: Option<String>,
    /// Per-request timeout in milliseconds.
    #[arg(long, value_name = "MS")]
    pub timeout: Option<u64>,
    /// Confirm that contacting a non-loopback host is intended.
    #[arg(long)]
    pub yes_external: bool,
    /// JSON config file supplying endpoints, profiles and pacing defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Target URL.
    pub url: String,
    /// JSON file with custom header profiles.
    #[arg(long, value_name = "FILE")]
    pub profiles: Option<std::path::PathBuf>,
    /// Delay between probes against non-loopback hosts, in milliseconds.
    #[arg(long, value_name = "MS", default_value_t = 250)]
    pub probe_delay: u64,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Args, Debug)]
pub struct AssembleArgs {
    /// Playlist URL, or path to a local .m3u8 file.
    pub playlist: String,
    /// Output file for the reassembled video.
    #[arg(long, value_name = "FILE")]
    pub out: std::path::PathBuf,
    /// Base URI for resolving relative entries of a local playlist file.
    #[arg(long, value_name = "URI")]
    pub base: Option<String>,
    /// Maximum concurrent part fetches.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Subcommand, Debug)]
pub enum ArchiveCommand {
    /// Submit every manifest URL to the archive's save endpoint.
    Push(ArchivePushArgs),
    /// Prefix-search the CDX index and summarize unique media ids.
    Survey(ArchiveSurveyArgs),
    /// Re-fetch all parts from the archive and verify byte equivalence
    /// against a live assembly report.
    Verify(ArchiveVerifyArgs),
}

#[derive(Args, Debug)]
pub struct ArchivePushArgs {
    /// Manifest file: one `<local-name> <uri>` pair per line.
    pub manifest: std::path::PathBuf,
    /// Archive API base URL.
    #[arg(long, value_name = "URL", default_value = "https://web.archive.org")]
    pub archive_endpoint: String,
    /// Pause between submissions to non-loopback archives, in milliseconds.
    #[arg(long, value_name = "MS", default_value_t = 5000)]
    pub pace: u64,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Args, Debug)]
pub struct ArchiveSurveyArgs {
    /// URL prefix to search, e.g. video.twimg.com/dm_video/.
    pub prefix: String,
    /// Media ids to exclude from the summary (repeatable).
    #[arg(long, value_name = "ID")]
    pub exclude: Vec<u64>,
    /// Path segment preceding the media id in captured URLs.
    #[arg(long, value_name = "SEGMENT", default_value = "dm_video")]
    pub id_marker: String,
    #[arg(long, value_name = "URL", default_value = "https://web.archive.org")]
    pub archive_endpoint: String,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Args, Debug)]
pub struct ArchiveVerifyArgs {
    /// Playlist URL, or path to a local .m3u8 file.
    pub playlist: String,
    /// JSON report from `assemble` (or a bare assembly report).
    pub live_report: std::path::PathBuf,
    /// Base URI for resolving relative entries of a local playlist file.
    #[arg(long, value_name = "URI")]
    pub base: Option<String>,
    /// Pick the capture closest at-or-after this 14-digit timestamp.
    #[arg(long, value_name = "TS14", conflicts_with = "at")]
    pub after: Option<String>,
    /// Pick exactly this 14-digit capture timestamp.
    #[arg(long, value_name = "TS14")]
    pub at: Option<String>,
    #[arg(long, value_name = "URL", default_value = "https://web.archive.org")]
    pub archive_endpoint: String,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Args, Debug)]
pub struct TlsAuditArgs {
    /// Target URL (https scheme).
    pub url: String,
    /// Local HSTS-preload snapshot: one domain per line, optional
    /// `include_subdomains` flag.
    #[arg(long, value_name = "FILE")]
    pub preload_snapshot: Option<std::path::PathBuf>,
    /// A connect-src source list (or full CSP header) to evaluate against
    /// the target URL and its http twin.
    #[arg(long, value_name = "POLICY")]
    pub csp: Option<String>,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Subcommand, Debug)]
pub enum MockCommand {
    /// Bind both role listeners on loopback and serve until killed.
    Serve(MockServeArgs),
    /// Print the built-in demo scenario as JSON.
    Scenario,
}

#[derive(Args, Debug)]
pub struct MockServeArgs {
    /// Scenario JSON file (defaults to the built-in demo scenario).
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<std::path::PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };

    let result = match cli.command {
        Command::Probe(args) => commands::cmd_probe(args),
        Command::Assemble(args) => commands::cmd_assemble(args),
        Command::Archive(ArchiveCommand::Push(args)) => commands::cmd_archive_push(args),
        Command::Archive(ArchiveCommand::Survey(args)) => commands::cmd_archive_survey(args),
        Command::Archive(ArchiveCommand::Verify(args)) => commands::cmd_archive_verify(args),
        Command::TlsAudit(args) => commands::cmd_tls_audit(args),
        Command::Mock(MockCommand::Serve(args)) => commands::cmd_mock_serve(args),
        Command::Mock(MockCommand::Scenario) => commands::cmd_mock_scenario(),
    };

    match result {
        Ok(code) => std::process::exit(code),
        Err(failure) => {
            eprintln!("mediagate: {}", failure.message);
            std::process::exit(failure.exit_code);
        }
    }
}
