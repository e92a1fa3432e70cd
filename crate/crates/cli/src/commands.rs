//! Implementations behind the subcommands. Each returns the process exit
//! code; hard failures bubble up as [`CliFailure`].

use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use mediagate_core::archive::{
    cdx_prefix_search, dedupe_by_media_id, roundtrip_verify, spn_submit, ArchiveConfig,
    ArchiveError, IdExtractor, TimestampPolicy,
};
use mediagate_core::assembler::{
    assemble_streamed, fetch_all, parse_manifest, AssemblyReport, FetchConfig,
};
use mediagate_core::http::{send_get, targets_local_endpoint, ClientLimits, EndpointMap};
use mediagate_core::mock::{paper_scenario, MockServer, ScenarioConfig};
use mediagate_core::playlist::{parse_media_playlist, MediaPlaylist};
use mediagate_core::probe::{
    build_default_matrix, check_plain_http, classify, load_profiles, run_matrix, ProbeConfig,
    ProbeError,
};
use mediagate_core::report::{AuditReport, PushEntry, PushReport, SurveyReport, SCHEMA_VERSION};
use mediagate_core::tlsaudit::{
    csp_connect_src_allows, evaluate_https_enforcement, parse_connect_src, parse_sts,
    preload_status, PreloadSnapshot, PreloadStatus, StsPolicy,
};
use mediagate_core::uri::{is_loopback_host, Uri};

use crate::{
    ArchivePushArgs, ArchiveSurveyArgs, ArchiveVerifyArgs, AssembleArgs, MockServeArgs, NetArgs,
    ProbeArgs, TlsAuditArgs, EXIT_FAILURE, EXIT_INSUFFICIENT, EXIT_OK, EXIT_USAGE,
};

pub struct CliFailure {
    pub exit_code: i32,
    pub message: String,
}

impl CliFailure {
    fn usage(message: impl Into<String>) -> CliFailure {
        CliFailure {
            exit_code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> CliFailure {
        CliFailure {
            exit_code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

/// Optional defaults loadable from `--config`.
#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    #[serde(default)]
    https_endpoint: Option<String>,
    #[serde(default)]
    http_endpoint: Option<String>,
    #[serde(default)]
    archive_endpoint: Option<String>,
    #[serde(default)]
    timeout_ms: Option<u64>,
    #[serde(default)]
    profiles: Option<std::path::PathBuf>,
    #[serde(default)]
    pace_ms: Option<u64>,
}

/// Flags merged over the config file, flags winning.
struct NetSettings {
    endpoint_map: EndpointMap,
    limits: ClientLimits,
    yes_external: bool,
    archive_endpoint: Option<String>,
    profiles: Option<std::path::PathBuf>,
    pace_ms: Option<u64>,
}

fn resolve_net(net: &NetArgs) -> Result<NetSettings, CliFailure> {
    let file: FileConfig = match &net.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliFailure::usage(format!("cannot read config {path:?}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| CliFailure::usage(format!("bad config {path:?}: {e}")))?
        }
        None => FileConfig::default(),
    };

    let endpoint_map = EndpointMap {
        https: net.https_endpoint.clone().or(file.https_endpoint),
        http: net.http_endpoint.clone().or(file.http_endpoint),
    };
    let mut limits = ClientLimits::default();
    if let Some(ms) = net.timeout.or(file.timeout_ms) {
        limits.timeout = Duration::from_millis(ms);
    }
    Ok(NetSettings {
        endpoint_map,
        limits,
        yes_external: net.yes_external,
        archive_endpoint: file.archive_endpoint,
        profiles: file.profiles,
        pace_ms: file.pace_ms,
    })
}

/// Refuse to touch non-loopback hosts unless `--yes-external` was given.
fn guard_external(urls: &[&str], settings: &NetSettings) -> Result<(), CliFailure> {
    if settings.yes_external {
        return Ok(());
    }
    for url in urls {
        if !targets_local_endpoint(url, &settings.endpoint_map) {
            return Err(CliFailure::usage(format!(
                "{url} is not a loopback target; pass --yes-external to probe external hosts"
            )));
        }
    }
    Ok(())
}

fn endpoint_is_local(endpoint: &str, map: &EndpointMap) -> bool {
    targets_local_endpoint(endpoint, map)
        || Uri::parse_absolute(endpoint)
            .ok()
            .and_then(|u| u.host().map(is_loopback_host))
            .unwrap_or(false)
}

fn now_rfc3339() -> String {
    OffsetDateTime::now_utc()
        .format(&Rfc3339)
        .unwrap_or_else(|_| "1970-01-01T00:00:00Z".to_string())
}

fn rfc3339_to_ts14(text: &str) -> Option<String> {
    let t = OffsetDateTime::parse(text, &Rfc3339).ok()?;
    Some(format!(
        "{:04}{:02}{:02}{:02}{:02}{:02}",
        t.year(),
        u8::from(t.month()),
        t.day(),
        t.hour(),
        t.minute(),
        t.second()
    ))
}

fn print_report<T: serde::Serialize>(report: &T) -> Result<(), CliFailure> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| CliFailure::failure(format!("serializing report: {e}")))?;
    println!("{json}");
    Ok(())
}

pub fn cmd_probe(args: ProbeArgs) -> Result<i32, CliFailure> {
    let settings = resolve_net(&args.net)?;
    guard_external(&[args.url.as_str()], &settings)?;

    let profiles = match args.profiles.as_ref().or(settings.profiles.as_ref()) {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliFailure::usage(format!("cannot read profiles {path:?}: {e}")))?;
            load_profiles(&text).map_err(|e| CliFailure::usage(e.to_string()))?
        }
        None => build_default_matrix(),
    };

    let config = ProbeConfig {
        limits: settings.limits.clone(),
        endpoint_map: settings.endpoint_map.clone(),
        inter_probe_delay: Duration::from_millis(args.probe_delay),
    };

    let started_at = now_rfc3339();
    let matrix = run_matrix(&args.url, &profiles, &config)
        .map_err(|e| CliFailure::usage(e.to_string()))?;
    let classification = classify(&matrix);
    let finished_at = now_rfc3339();

    let mut report = AuditReport::new(&args.url, started_at, finished_at);
    report.matrix = Some(matrix);
    match classification {
        Ok(protection) => {
            eprintln!(
                "probe: unauthenticated_access={:?} cookie_required={:?} referer_required={:?} \
                 party_bound={:?} session_liveness_bound={:?}",
                protection.unauthenticated_access,
                protection.cookie_required,
                protection.referer_required,
                protection.party_bound,
                protection.session_liveness_bound,
            );
            report.protection = Some(protection);
            print_report(&report)?;
            Ok(EXIT_OK)
        }
        Err(ProbeError::InsufficientEvidence) => {
            print_report(&report)?;
            eprintln!("probe: insufficient evidence (no NO_COOKIE outcome in the matrix)");
            Ok(EXIT_INSUFFICIENT)
        }
        Err(other) => Err(CliFailure::usage(other.to_string())),
    }
}

/// Load a playlist from a URL or a local file, returning the parsed model.
fn load_playlist(
    target: &str,
    base_flag: Option<&str>,
    settings: &NetSettings,
) -> Result<MediaPlaylist, CliFailure> {
    if target.starts_with("http://") || target.starts_with("https://") {
        guard_external(&[target], settings)?;
        let response = send_get(target, &[], &settings.limits, &settings.endpoint_map)
            .map_err(|e| CliFailure::failure(format!("fetching playlist: {e}")))?;
        if response.status != 200 {
            return Err(CliFailure::failure(format!(
                "playlist fetch returned status {}",
                response.status
            )));
        }
        let text = String::from_utf8_lossy(&response.body).into_owned();
        let base = base_flag.unwrap_or(target);
        parse_media_playlist(&text, base).map_err(|e| CliFailure::failure(e.to_string()))
    } else {
        let path = Path::new(target);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliFailure::usage(format!("cannot read playlist {target:?}: {e}")))?;
        let fallback = format!(
            "file://{}",
            path.canonicalize().unwrap_or_else(|_| path.to_path_buf()).display()
        );
        let base = base_flag.map(str::to_string).unwrap_or(fallback);
        parse_media_playlist(&text, &base).map_err(|e| CliFailure::failure(e.to_string()))
    }
}

fn playlist_part_uris(playlist: &MediaPlaylist) -> Vec<String> {
    let mut uris = Vec::new();
    if let Some(init) = &playlist.init_section_uri {
        uris.push(init.clone());
    }
    uris.extend(playlist.segments.iter().map(|s| s.uri.clone()));
    uris
}

pub fn cmd_assemble(args: AssembleArgs) -> Result<i32, CliFailure> {
    let settings = resolve_net(&args.net)?;
    let started_at = now_rfc3339();
    let playlist = load_playlist(&args.playlist, args.base.as_deref(), &settings)?;
    let uris = playlist_part_uris(&playlist);
    if uris.is_empty() {
        return Err(CliFailure::usage(
            "playlist has no init section and no segments".to_string(),
        ));
    }
    let uri_refs: Vec<&str> = uris.iter().map(String::as_str).collect();
    guard_external(&uri_refs, &settings)?;

    let fetch_config = FetchConfig {
        limits: settings.limits.clone(),
        endpoint_map: settings.endpoint_map.clone(),
        concurrency: args.concurrency,
    };
    let results = fetch_all(&uris, &fetch_config);

    let mut failures: Vec<(String, String)> = Vec::new();
    let mut fetched: Vec<Option<Vec<u8>>> = Vec::with_capacity(results.len());
    for (uri, result) in uris.iter().zip(results) {
        match result {
            Ok(part) => fetched.push(Some(part.bytes)),
            Err(err) => {
                failures.push((uri.clone(), err.to_string()));
                fetched.push(None);
            }
        }
    }

    // everything fetched so far, in order up to the first failure
    let partial_path = args.out.with_extension(format!(
        "{}partial",
        args.out
            .extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    let complete_prefix: Vec<&[u8]> = fetched
        .iter()
        .take_while(|part| part.is_some())
        .map(|part| part.as_deref().unwrap())
        .collect();

    let mut report = AuditReport::new(&args.playlist, started_at, now_rfc3339());
    if failures.is_empty() {
        let parts: Vec<&[u8]> = fetched.iter().map(|p| p.as_deref().unwrap()).collect();
        let assembly = assemble_streamed(parts.iter().copied(), &partial_path)
            .map_err(|e| CliFailure::failure(e.to_string()))?;
        std::fs::rename(&partial_path, &args.out)
            .map_err(|e| CliFailure::failure(format!("renaming output: {e}")))?;
        let assembly = AssemblyReport {
            output_path: args.out.clone(),
            ..assembly
        };
        eprintln!(
            "assemble: {} parts, {} bytes -> {}",
            assembly.part_count,
            assembly.total_bytes,
            args.out.display()
        );
        report.assembly = Some(assembly);
        print_report(&report)?;
        Ok(EXIT_OK)
    } else {
        if !complete_prefix.is_empty() {
            let _ = assemble_streamed(complete_prefix.iter().copied(), &partial_path);
            eprintln!(
                "assemble: kept {} complete leading part(s) in {}",
                complete_prefix.len(),
                partial_path.display()
            );
        }
        report.fetch_failures = failures
            .iter()
            .map(|(uri, error)| format!("{uri}: {error}"))
            .collect();
        print_report(&report)?;
        for (uri, error) in &failures {
            eprintln!("assemble: failed to fetch {uri}: {error}");
        }
        Ok(EXIT_FAILURE)
    }
}

fn archive_config(endpoint: &str, settings: &NetSettings) -> ArchiveConfig {
    let mut config = ArchiveConfig::new(endpoint);
    config.limits = settings.limits.clone();
    config.endpoint_map = settings.endpoint_map.clone();
    config
}

fn resolve_archive_endpoint<'a>(flag_value: &'a str, settings: &'a NetSettings) -> &'a str {
    // a config-file endpoint overrides the built-in default but not an
    // explicit flag; clap gives us no way to tell flag-default from flag-set,
    // so the config wins only when the flag still carries the default
    if flag_value == "https://web.archive.org" {
        settings.archive_endpoint.as_deref().unwrap_or(flag_value)
    } else {
        flag_value
    }
}

fn guard_archive_endpoint(endpoint: &str, settings: &NetSettings) -> Result<(), CliFailure> {
    if settings.yes_external || endpoint_is_local(endpoint, &settings.endpoint_map) {
        Ok(())
    } else {
        Err(CliFailure::usage(format!(
            "archive endpoint {endpoint} is not a loopback target; pass --yes-external"
        )))
    }
}

pub fn cmd_archive_push(args: ArchivePushArgs) -> Result<i32, CliFailure> {
    let settings = resolve_net(&args.net)?;
    let endpoint = resolve_archive_endpoint(&args.archive_endpoint, &settings).to_string();
    guard_archive_endpoint(&endpoint, &settings)?;

    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| CliFailure::usage(format!("cannot read manifest {:?}: {e}", args.manifest)))?;
    let entries = parse_manifest(&text);
    let config = archive_config(&endpoint, &settings);
    let pace = Duration::from_millis(settings.pace_ms.unwrap_or(args.pace));
    let local_archive = endpoint_is_local(&endpoint, &settings.endpoint_map);

    let mut push_entries = Vec::new();
    let mut failed = 0usize;
    for (i, (_, url)) in entries.iter().enumerate() {
        if i > 0 && !local_archive {
            std::thread::sleep(pace);
        }
        let mut attempt = spn_submit(url, &config);
        if let Err(ArchiveError::RateLimited { retry_after }) = &attempt {
            let wait = retry_after.unwrap_or(1).min(30);
            eprintln!("archive push: rate limited, retrying {url} after {wait}s");
            std::thread::sleep(Duration::from_secs(wait));
            attempt = spn_submit(url, &config);
        }
        match attempt {
            Ok(result) => push_entries.push(PushEntry {
                url: url.clone(),
                accepted: result.accepted,
                timestamp: result.snapshot.map(|s| s.timestamp),
                detail: result.detail,
            }),
            Err(err) => {
                failed += 1;
                eprintln!("archive push: {url}: {err}");
                push_entries.push(PushEntry {
                    url: url.clone(),
                    accepted: false,
                    timestamp: None,
                    detail: err.to_string(),
                });
            }
        }
    }

    let report = PushReport {
        schema_version: SCHEMA_VERSION,
        tool_version: mediagate_core::report::tool_version(),
        submitted: push_entries.len() - failed,
        failed,
        entries: push_entries,
    };
    print_report(&report)?;
    eprintln!(
        "archive push: {} submitted, {} failed",
        report.submitted, report.failed
    );
    Ok(EXIT_OK)
}

pub fn cmd_archive_survey(args: ArchiveSurveyArgs) -> Result<i32, CliFailure> {
    let settings = resolve_net(&args.net)?;
    let endpoint = resolve_archive_endpoint(&args.archive_endpoint, &settings).to_string();
    guard_archive_endpoint(&endpoint, &settings)?;

    let config = archive_config(&endpoint, &settings);
    let listing = cdx_prefix_search(&args.prefix, &config)
        .map_err(|e| CliFailure::failure(e.to_string()))?;
    for line in &listing.malformed {
        eprintln!(
            "archive survey: unparseable CDX line {}: {}",
            line.line_number, line.reason
        );
    }
    let extractor = IdExtractor {
        marker_segment: args.id_marker.clone(),
    };
    let summary = dedupe_by_media_id(&listing.records, &extractor, &args.exclude);

    // full URLs stay out of the report by design
    let report = SurveyReport {
        schema_version: SCHEMA_VERSION,
        tool_version: mediagate_core::report::tool_version(),
        prefix: args.prefix.clone(),
        unique_id_count: summary.unique_ids.len(),
        pipeline_line_count: summary.pipeline_line_count(),
        excluded_count: summary.excluded_count,
        malformed_count: summary.malformed.len(),
        unique_ids: summary.unique_ids.clone(),
        earliest: summary.earliest.clone(),
        malformed: summary.malformed.clone(),
    };
    print_report(&report)?;
    eprintln!(
        "archive survey: {} unique ids, {} pipeline lines, earliest {}",
        report.unique_id_count,
        report.pipeline_line_count,
        report
            .earliest
            .as_ref()
            .map(|s| s.timestamp.as_str())
            .unwrap_or("n/a")
    );
    Ok(EXIT_OK)
}

/// Accept either a bare assembly report or a full audit report that carries
/// one.
fn load_live_report(path: &Path) -> Result<AssemblyReport, CliFailure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliFailure::usage(format!("cannot read live report {path:?}: {e}")))?;
    if let Ok(report) = serde_json::from_str::<AssemblyReport>(&text) {
        return Ok(report);
    }
    let audit: AuditReport = serde_json::from_str(&text)
        .map_err(|e| CliFailure::usage(format!("{path:?} is not an assembly report: {e}")))?;
    audit
        .assembly
        .ok_or_else(|| CliFailure::usage(format!("{path:?} carries no assembly section")))
}

fn load_audit_started_at(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    let audit: AuditReport = serde_json::from_str(&text).ok()?;
    rfc3339_to_ts14(&audit.started_at)
}

pub fn cmd_archive_verify(args: ArchiveVerifyArgs) -> Result<i32, CliFailure> {
    let settings = resolve_net(&args.net)?;
    let endpoint = resolve_archive_endpoint(&args.archive_endpoint, &settings).to_string();
    guard_archive_endpoint(&endpoint, &settings)?;

    let started_at = now_rfc3339();
    let playlist = load_playlist(&args.playlist, args.base.as_deref(), &settings)?;
    let live = load_live_report(&args.live_report)?;

    let policy = if let Some(ts) = &args.at {
        TimestampPolicy::Exact(ts.clone())
    } else if let Some(ts) = &args.after {
        TimestampPolicy::NearestAtOrAfter(ts.clone())
    } else if let Some(ts) = load_audit_started_at(&args.live_report) {
        // nearest capture at or after the live fetch
        TimestampPolicy::NearestAtOrAfter(ts)
    } else {
        TimestampPolicy::Latest
    };

    let config = archive_config(&endpoint, &settings);
    let roundtrip = roundtrip_verify(&playlist, &live, &config, &policy)
        .map_err(|e| CliFailure::failure(e.to_string()))?;
    let identical = roundtrip.identical;

    let mut report = AuditReport::new(&args.playlist, started_at, now_rfc3339());
    report.roundtrip = Some(roundtrip);
    print_report(&report)?;
    if identical {
        eprintln!("archive verify: live and archived assemblies are identical");
        Ok(EXIT_OK)
    } else {
        eprintln!("archive verify: NOT identical");
        Ok(EXIT_FAILURE)
    }
}

pub fn cmd_tls_audit(args: TlsAuditArgs) -> Result<i32, CliFailure> {
    let settings = resolve_net(&args.net)?;
    let parsed = Uri::parse_absolute(&args.url)
        .map_err(|e| CliFailure::usage(format!("bad URL: {e}")))?;
    if parsed.scheme.as_deref() != Some("https") {
        return Err(CliFailure::usage(format!(
            "tls-audit expects an https URL, got {}",
            args.url
        )));
    }
    guard_external(&[args.url.as_str()], &settings)?;

    let started_at = now_rfc3339();
    let config = ProbeConfig {
        limits: settings.limits.clone(),
        endpoint_map: settings.endpoint_map.clone(),
        ..ProbeConfig::default()
    };
    let plain = check_plain_http(&args.url, &config)
        .map_err(|e| CliFailure::usage(e.to_string()))?;

    let sts: Option<StsPolicy> = match &plain.https_outcome {
        mediagate_core::probe::ProbeOutcome::Status {
            response_headers, ..
        } => response_headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("strict-transport-security"))
            .and_then(|(_, v)| match parse_sts(v) {
                Ok(policy) => Some(policy),
                Err(err) => {
                    eprintln!("tls-audit: ignoring malformed STS header: {err}");
                    None
                }
            }),
        _ => None,
    };

    let host = parsed.host().unwrap_or_default().to_string();
    let preload = match &args.preload_snapshot {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliFailure::usage(format!("cannot read preload snapshot {path:?}: {e}"))
            })?;
            preload_status(&host, &PreloadSnapshot::parse(&text))
        }
        None => PreloadStatus {
            host_listed: false,
            matched_parent: None,
        },
    };

    let mut https_report = evaluate_https_enforcement(&plain, sts.as_ref(), &preload);
    if let Some(csp_text) = &args.csp {
        let directive = parse_connect_src(csp_text);
        let http_twin = parsed.with_scheme("http").to_uri_string();
        for url in [args.url.as_str(), http_twin.as_str()] {
            let allowed = csp_connect_src_allows(&directive, url);
            https_report.findings.push(format!(
                "csp connect-src {} {url}",
                if allowed { "allows" } else { "blocks" }
            ));
        }
    }

    eprintln!("tls-audit: verdict {:?}", https_report.verdict);
    let mut report = AuditReport::new(&args.url, started_at, now_rfc3339());
    report.https = Some(https_report);
    print_report(&report)?;
    Ok(EXIT_OK)
}

pub fn cmd_mock_serve(args: MockServeArgs) -> Result<i32, CliFailure> {
    let scenario: ScenarioConfig = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliFailure::usage(format!("cannot read scenario {path:?}: {e}")))?;
            ScenarioConfig::from_json(&text).map_err(|e| CliFailure::usage(e.to_string()))?
        }
        None => paper_scenario(),
    };
    let server =
        MockServer::serve(scenario).map_err(|e| CliFailure::failure(e.to_string()))?;

    let endpoints = serde_json::json!({
        "https_endpoint": server.https_endpoint(),
        "http_endpoint": server.http_endpoint(),
        "archive_endpoint": server.archive_base_url(),
    });
    println!("{endpoints}");
    eprintln!(
        "mock serve: https-role {} | http-role {} (Ctrl-C to stop)",
        server.https_endpoint(),
        server.http_endpoint()
    );
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

pub fn cmd_mock_scenario() -> Result<i32, CliFailure> {
    print_report(&paper_scenario())?;
    Ok(EXIT_OK)
}
