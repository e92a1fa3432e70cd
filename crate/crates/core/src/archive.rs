//! Web-archive client: submit URLs for capture, query the CDX index with
//! prefix search, build replay URLs, deduplicate survey results by media id,
//! and verify live-vs-archive round trips.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembler::{AssemblyReport, ContentDigest};
use crate::http::{send_get, ClientLimits, EndpointMap, RedirectPolicy};
use crate::playlist::MediaPlaylist;
use crate::uri::Uri;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive rate limited the request (retry after {retry_after:?} s)")]
    RateLimited { retry_after: Option<u64> },
    #[error("capture submission failed with status {0}")]
    SubmitFailed(u16),
    #[error("CDX query failed with status {0}")]
    QueryFailed(u16),
    #[error("not an absolute http(s) URL: {0}")]
    InvalidUrl(String),
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Clone)]
pub struct ArchiveConfig {
    /// Archive API base, e.g. `https://web.archive.org`.
    pub endpoint: String,
    pub limits: ClientLimits,
    pub endpoint_map: EndpointMap,
}

impl ArchiveConfig {
    pub fn new(endpoint: &str) -> ArchiveConfig {
        ArchiveConfig {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            limits: ClientLimits::default(),
            endpoint_map: EndpointMap::default(),
        }
    }
}

/// One CDX index row (7 space-separated fields).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdxRecord {
    pub urlkey: String,
    /// 14-digit capture time, validated as a real UTC datetime.
    pub timestamp: String,
    pub original: String,
    pub mimetype: String,
    pub status: u16,
    pub digest: String,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line_number: usize,
    pub text: String,
    pub reason: String,
}

/// Parse raw CDX lines. Nothing is dropped: every input line lands either in
/// the record list or the malformed list.
pub fn parse_cdx_lines(text: &str) -> (Vec<CdxRecord>, Vec<MalformedLine>) {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_number = i + 1;
        let push_bad = |malformed: &mut Vec<MalformedLine>, reason: String| {
            malformed.push(MalformedLine {
                line_number,
                text: line.to_string(),
                reason,
            });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            push_bad(
                &mut malformed,
                format!("expected 7 fields, found {}", fields.len()),
            );
            continue;
        }
        if crate::ts::parse_ts14(fields[1]).is_none() {
            push_bad(&mut malformed, format!("bad timestamp {:?}", fields[1]));
            continue;
        }
        let Ok(status) = fields[4].parse::<u16>() else {
            push_bad(&mut malformed, format!("bad status {:?}", fields[4]));
            continue;
        };
        let Ok(length) = fields[6].parse::<u64>() else {
            push_bad(&mut malformed, format!("bad length {:?}", fields[6]));
            continue;
        };
        records.push(CdxRecord {
            urlkey: fields[0].to_string(),
            timestamp: fields[1].to_string(),
            original: fields[2].to_string(),
            mimetype: fields[3].to_string(),
            status,
            digest: fields[5].to_string(),
            length,
        });
    }
    (records, malformed)
}

/// A reference to one archived capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub timestamp: String,
    pub original: String,
    /// Replay with the `id_` modifier: raw bytes, no replay-time rewriting.
    pub raw: bool,
}

/// Render `<endpoint>/web/<timestamp>[id_]/<original>`.
pub fn to_replay_url(snapshot: &SnapshotRef, endpoint: &str) -> String {
    let modifier = if snapshot.raw { "id_" } else { "" };
    format!(
        "{}/web/{}{}/{}",
        endpoint.trim_end_matches('/'),
        snapshot.timestamp,
        modifier,
        snapshot.original
    )
}

/// Inverse of [`to_replay_url`]; also accepts endpoint-relative paths like
/// the `Content-Location` a save endpoint returns.
pub fn parse_replay_url(url: &str, endpoint: &str) -> Option<SnapshotRef> {
    let rest = url
        .strip_prefix(endpoint.trim_end_matches('/'))
        .unwrap_or(url);
    let rest = rest.strip_prefix("/web/")?;
    let (spec, original) = rest.split_once('/')?;
    let (timestamp, raw) = match spec.strip_suffix("id_") {
        Some(ts) => (ts, true),
        None => (spec, false),
    };
    if timestamp.len() != 14 || !timestamp.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(SnapshotRef {
        timestamp: timestamp.to_string(),
        original: original.to_string(),
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpnResult {
    pub accepted: bool,
    pub snapshot: Option<SnapshotRef>,
    pub detail: String,
}

/// Submit one URL to the archive's save endpoint.
///
/// The URL must be absolute http(s); anything else is rejected before any
/// request goes out.
pub fn spn_submit(url: &str, config: &ArchiveConfig) -> Result<SpnResult, ArchiveError> {
    let parsed = Uri::parse_absolute(url).map_err(|_| ArchiveError::InvalidUrl(url.to_string()))?;
    if !matches!(parsed.scheme.as_deref(), Some("http") | Some("https")) {
        return Err(ArchiveError::InvalidUrl(url.to_string()));
    }
    if parsed.host().map_or(true, str::is_empty) {
        return Err(ArchiveError::InvalidUrl(url.to_string()));
    }

    let save_url = format!("{}/save/{}", config.endpoint, url);
    let response = send_get(&save_url, &[], &config.limits, &config.endpoint_map)
        .map_err(|e| ArchiveError::Transport(e.to_string()))?;

    match response.status {
        status if (200..300).contains(&status) => {
            let snapshot = response
                .header("content-location")
                .and_then(|loc| parse_replay_url(loc, &config.endpoint))
                .or_else(|| {
                    let value: serde_json::Value = serde_json::from_slice(&response.body).ok()?;
                    Some(SnapshotRef {
                        timestamp: value.get("timestamp")?.as_str()?.to_string(),
                        original: url.to_string(),
                        raw: false,
                    })
                });
            Ok(SpnResult {
                accepted: true,
                snapshot,
                detail: format!("accepted with status {status}"),
            })
        }
        429 => Err(ArchiveError::RateLimited {
            retry_after: response
                .header("retry-after")
                .and_then(|v| v.trim().parse().ok()),
        }),
        status => Err(ArchiveError::SubmitFailed(status)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdxMatchType {
    Exact,
    Prefix,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CdxSearch {
    pub records: Vec<CdxRecord>,
    pub malformed: Vec<MalformedLine>,
}

fn urlencode_component(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    for byte in input.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' | b'/' | b':' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

/// Query the CDX index, following resume-key pagination until the listing is
/// complete. An empty result is not an error.
pub fn cdx_search(
    url: &str,
    match_type: CdxMatchType,
    config: &ArchiveConfig,
) -> Result<CdxSearch, ArchiveError> {
    let mut out = CdxSearch::default();
    let mut resume_key: Option<String> = None;
    loop {
        let mut query_url = format!(
            "{}/cdx/search/cdx?url={}&matchType={}&showResumeKey=true",
            config.endpoint,
            urlencode_component(url),
            match_type_name(match_type),
        );
        if let Some(key) = &resume_key {
            query_url.push_str(&format!("&resumeKey={}", urlencode_component(key)));
        }
        let response = send_get(&query_url, &[], &config.limits, &config.endpoint_map)
            .map_err(|e| ArchiveError::Transport(e.to_string()))?;
        if response.status != 200 {
            return Err(ArchiveError::QueryFailed(response.status));
        }
        let body = String::from_utf8_lossy(&response.body).into_owned();

        // a truncated page ends with a blank line followed by the resume key
        let (page, next_key) = match body.split_once("\n\n") {
            Some((page, key)) if !key.trim().is_empty() => {
                (page.to_string(), Some(key.trim().to_string()))
            }
            _ => (body, None),
        };
        let (records, malformed) = parse_cdx_lines(&page);
        out.records.extend(records);
        out.malformed.extend(malformed);

        match next_key {
            Some(key) => resume_key = Some(key),
            None => return Ok(out),
        }
    }
}

/// Prefix search, as used for the media survey.
pub fn cdx_prefix_search(prefix: &str, config: &ArchiveConfig) -> Result<CdxSearch, ArchiveError> {
    cdx_search(prefix, CdxMatchType::Prefix, config)
}

fn match_type_name(match_type: CdxMatchType) -> &'static str {
    match match_type {
        CdxMatchType::Exact => "exact",
        CdxMatchType::Prefix => "prefix",
    }
}

/// Which path segment carries the media id. For DM videos the id follows the
/// `dm_video` segment, but the rule is configurable in case other prefixes
/// exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdExtractor {
    pub marker_segment: String,
}

impl Default for IdExtractor {
    fn default() -> Self {
        IdExtractor {
            marker_segment: "dm_video".to_string(),
        }
    }
}

impl IdExtractor {
    /// Pull the numeric media id out of a captured URL.
    ///
    /// A bare digits-only segment with no extension and nothing after it is
    /// a truncated capture (the index holds such entries) and is rejected.
    pub fn extract(&self, original: &str) -> Result<u64, String> {
        let uri = Uri::parse(original).map_err(|e| format!("unparseable URL: {e}"))?;
        let segments: Vec<&str> = uri.path.split('/').filter(|s| !s.is_empty()).collect();
        let marker_index = segments
            .iter()
            .position(|s| *s == self.marker_segment)
            .ok_or_else(|| format!("no {:?} segment in path", self.marker_segment))?;
        let id_segment = segments
            .get(marker_index + 1)
            .ok_or_else(|| format!("nothing after {:?} segment", self.marker_segment))?;

        let (stem, has_extension) = match id_segment.split_once('.') {
            Some((stem, _)) => (stem, true),
            None => (*id_segment, false),
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("non-numeric id segment {id_segment:?}"));
        }
        let is_last = marker_index + 1 == segments.len() - 1;
        if !has_extension && is_last {
            return Err("truncated id (bare segment, no extension, no children)".to_string());
        }
        stem.parse()
            .map_err(|_| format!("id {stem:?} out of range"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedRecord {
    pub original: String,
    pub reason: String,
}

/// Survey result: unique media ids, the earliest well-formed capture, and
/// everything that did not fit the id rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveySummary {
    /// Numerically sorted, deduplicated.
    pub unique_ids: Vec<u64>,
    pub earliest: Option<SnapshotRef>,
    /// Number of input records dropped by the exclusion list.
    pub excluded_count: u64,
    /// Records that carried no usable id, deduplicated by original URL.
    pub malformed: Vec<MalformedRecord>,
}

impl SurveySummary {
    /// Line count the shell pipeline equivalent would print: one line per
    /// unique id plus one per malformed original.
    pub fn pipeline_line_count(&self) -> usize {
        self.unique_ids.len() + self.malformed.len()
    }
}

/// Deduplicate survey records by media id. The output is independent of
/// input order.
pub fn dedupe_by_media_id(
    records: &[CdxRecord],
    extractor: &IdExtractor,
    exclude: &[u64],
) -> SurveySummary {
    let mut ids = std::collections::BTreeSet::new();
    let mut malformed: Vec<MalformedRecord> = Vec::new();
    let mut excluded_count = 0u64;
    let mut earliest: Option<&CdxRecord> = None;

    for record in records {
        match extractor.extract(&record.original) {
            Ok(id) => {
                if exclude.contains(&id) {
                    excluded_count += 1;
                    continue;
                }
                ids.insert(id);
                let better = match earliest {
                    None => true,
                    Some(current) => {
                        (record.timestamp.as_str(), record.original.as_str())
                            < (current.timestamp.as_str(), current.original.as_str())
                    }
                };
                if better {
                    earliest = Some(record);
                }
            }
            Err(reason) => {
                if !malformed.iter().any(|m| m.original == record.original) {
                    malformed.push(MalformedRecord {
                        original: record.original.clone(),
                        reason,
                    });
                }
            }
        }
    }
    malformed.sort_by(|a, b| a.original.cmp(&b.original));

    SurveySummary {
        unique_ids: ids.into_iter().collect(),
        earliest: earliest.map(|record| SnapshotRef {
            timestamp: record.timestamp.clone(),
            original: record.original.clone(),
            raw: false,
        }),
        excluded_count,
        malformed,
    }
}

/// How to choose among several captures of the same URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimestampPolicy {
    /// Smallest capture timestamp at or after the reference time, falling
    /// back to the largest available.
    NearestAtOrAfter(String),
    Latest,
    Exact(String),
}

impl TimestampPolicy {
    fn select<'a>(&self, timestamps: &'a [String]) -> Option<&'a String> {
        match self {
            TimestampPolicy::NearestAtOrAfter(reference) => timestamps
                .iter()
                .filter(|ts| ts.as_str() >= reference.as_str())
                .min()
                .or_else(|| timestamps.iter().max()),
            TimestampPolicy::Latest => timestamps.iter().max(),
            TimestampPolicy::Exact(wanted) => timestamps.iter().find(|ts| *ts == wanted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartComparison {
    pub uri: String,
    pub live_length: Option<u64>,
    pub archived_length: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub live_digest: ContentDigest,
    pub archived_digest: Option<ContentDigest>,
    pub identical: bool,
    pub missing_captures: Vec<String>,
    pub per_part: Vec<PartComparison>,
}

/// Re-download every part of `playlist` from the archive via raw replay
/// URLs, reassemble in playlist order, and compare digests against the live
/// assembly. Missing captures are recorded, never fatal.
pub fn roundtrip_verify(
    playlist: &MediaPlaylist,
    live_report: &AssemblyReport,
    config: &ArchiveConfig,
    policy: &TimestampPolicy,
) -> Result<RoundTripReport, ArchiveError> {
    let mut part_uris: Vec<&str> = Vec::new();
    if let Some(init) = &playlist.init_section_uri {
        part_uris.push(init);
    }
    part_uris.extend(playlist.segments.iter().map(|s| s.uri.as_str()));

    let mut fetch_limits = config.limits.clone();
    fetch_limits.redirect = RedirectPolicy::SameHost(3);

    let mut missing_captures = Vec::new();
    let mut per_part = Vec::new();
    let mut hasher = sha2::Sha256::new();
    use sha2::Digest as _;
    let mut all_fetched = true;

    for (i, uri) in part_uris.iter().enumerate() {
        let live_length = live_report.part_lengths.get(i).copied();
        let listing = cdx_search(uri, CdxMatchType::Exact, config)?;
        let timestamps: Vec<String> = listing
            .records
            .iter()
            .map(|r| r.timestamp.clone())
            .collect();

        let Some(timestamp) = policy.select(&timestamps) else {
            missing_captures.push(uri.to_string());
            all_fetched = false;
            per_part.push(PartComparison {
                uri: uri.to_string(),
                live_length,
                archived_length: None,
            });
            continue;
        };

        let snapshot = SnapshotRef {
            timestamp: timestamp.clone(),
            original: uri.to_string(),
            raw: true,
        };
        let replay_url = to_replay_url(&snapshot, &config.endpoint);
        match send_get(&replay_url, &[], &fetch_limits, &config.endpoint_map) {
            Ok(response) if response.status == 200 => {
                hasher.update(&response.body);
                per_part.push(PartComparison {
                    uri: uri.to_string(),
                    live_length,
                    archived_length: Some(response.body.len() as u64),
                });
            }
            Ok(_) | Err(_) => {
                missing_captures.push(uri.to_string());
                all_fetched = false;
                per_part.push(PartComparison {
                    uri: uri.to_string(),
                    live_length,
                    archived_length: None,
                });
            }
        }
    }

    let archived_digest = all_fetched.then(|| ContentDigest {
        algorithm: "sha256".to_string(),
        hex: format!("{:x}", hasher.finalize()),
    });
    let identical = archived_digest
        .as_ref()
        .map(|digest| *digest == live_report.digest)
        .unwrap_or(false)
        && missing_captures.is_empty();

    Ok(RoundTripReport {
        live_digest: live_report.digest.clone(),
        archived_digest,
        identical,
        missing_captures,
        per_part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler;
    use crate::mock::{paper, MockServer};
    use crate::playlist::parse_media_playlist;

    const APPENDIX4: &str = include_str!("../fixtures/appendix4.cdx");
    const STUDY_ID: u64 = 1600877027330064385;

    #[test]
    fn cdx_parser_agrees_with_a_line_splitting_oracle() {
        let synthetic = "\
com,example)/a 20200101000000 https://example.com/a video/mp4 200 DIGESTA 100\n\
com,example)/b 20210615120000 https://example.com/b video/mp4 404 DIGESTB 2048\n";
        let (records, malformed) = parse_cdx_lines(synthetic);
        assert!(malformed.is_empty());
        assert_eq!(records.len(), 2);

        // oracle: independent whitespace split of each line
        for (record, line) in records.iter().zip(synthetic.lines()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(record.urlkey, fields[0]);
            assert_eq!(record.timestamp, fields[1]);
            assert_eq!(record.original, fields[2]);
            assert_eq!(record.mimetype, fields[3]);
            assert_eq!(record.status.to_string(), fields[4]);
            assert_eq!(record.digest, fields[5]);
            assert_eq!(record.length.to_string(), fields[6]);
        }
    }

    #[test]
    fn cdx_parser_never_discards_a_line() {
        let mixed = "\
com,example)/ok 20200101000000 https://example.com/ok video/mp4 200 D 1\n\
too few fields\n\
com,example)/bad-ts 20201399000000 https://example.com/x video/mp4 200 D 1\n\
com,example)/bad-status 20200101000000 https://example.com/y video/mp4 2xx D 1\n\
com,example)/bad-len 20200101000000 https://example.com/z video/mp4 200 D many\n";
        let (records, malformed) = parse_cdx_lines(mixed);
        assert_eq!(records.len() + malformed.len(), mixed.lines().count());
        assert_eq!(records.len(), 1);
        assert_eq!(malformed.len(), 4);
        assert!(malformed[1].reason.contains("timestamp"));
    }

    #[test]
    fn appendix4_fixture_parses_cleanly() {
        let (records, malformed) = parse_cdx_lines(APPENDIX4);
        assert!(malformed.is_empty(), "{malformed:?}");
        assert_eq!(records.len(), APPENDIX4.lines().count());
    }

    #[test]
    fn replay_url_matches_the_known_capture() {
        let snapshot = SnapshotRef {
            timestamp: "20221208194342".to_string(),
            original: "https://video.twimg.com/dm_video/1600877027330064385/vid/0/0/320x180/jZY0JeLERXPOC4qe.mp4".to_string(),
            raw: true,
        };
        assert_eq!(
            to_replay_url(&snapshot, "https://web.archive.org"),
            "https://web.archive.org/web/20221208194342id_/https://video.twimg.com/dm_video/1600877027330064385/vid/0/0/320x180/jZY0JeLERXPOC4qe.mp4"
        );
        let plain = SnapshotRef { raw: false, ..snapshot.clone() };
        assert_eq!(
            to_replay_url(&plain, "https://web.archive.org"),
            "https://web.archive.org/web/20221208194342/https://video.twimg.com/dm_video/1600877027330064385/vid/0/0/320x180/jZY0JeLERXPOC4qe.mp4"
        );
    }

    #[test]
    fn replay_url_round_trips_random_snapshots() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        let endpoint = "https://archive.example";
        for _ in 0..200 {
            let y = rng.gen_range(1996..2026);
            let mo = rng.gen_range(1..=12);
            let d = rng.gen_range(1..=28);
            let h = rng.gen_range(0..24);
            let mi = rng.gen_range(0..60);
            let s = rng.gen_range(0..60);
            let snapshot = SnapshotRef {
                timestamp: format!("{y:04}{mo:02}{d:02}{h:02}{mi:02}{s:02}"),
                original: format!(
                    "https://video.twimg.com/dm_video/{}/vid/{}/{}/320x180/seg.m4s",
                    rng.gen::<u64>() % 2_000_000_000_000_000_000,
                    rng.gen_range(0..100) * 3000,
                    rng.gen_range(0..100) * 3000 + 3000,
                ),
                raw: rng.gen(),
            };
            let rendered = to_replay_url(&snapshot, endpoint);
            assert_eq!(parse_replay_url(&rendered, endpoint), Some(snapshot));
        }
    }

    #[test]
    fn id_extractor_handles_the_observed_url_shapes() {
        let extractor = IdExtractor::default();
        // deep fragment path
        assert_eq!(
            extractor
                .extract("https://video.twimg.com/dm_video/1600877027330064385/vid/0/0/320x180/x.mp4")
                .unwrap(),
            STUDY_ID
        );
        // flat old-style capture with query
        assert_eq!(
            extractor
                .extract("https://video.twimg.com/dm_video/702847370122936320.mp4?_=1")
                .unwrap(),
            702847370122936320
        );
        // the truncated index entry
        assert!(extractor
            .extract("http://video.twimg.com/dm_video/13443")
            .unwrap_err()
            .contains("truncated"));
        // no marker at all
        assert!(extractor
            .extract("https://video.twimg.com/ext_tw_video/123/x.mp4")
            .is_err());
        // non-numeric id
        assert!(extractor
            .extract("https://video.twimg.com/dm_video/notanid/x.mp4")
            .is_err());
    }

    #[test]
    fn survey_reproduces_the_appendix4_pipeline() {
        let (records, _) = parse_cdx_lines(APPENDIX4);
        let summary = dedupe_by_media_id(&records, &IdExtractor::default(), &[STUDY_ID]);

        assert_eq!(summary.pipeline_line_count(), 103);
        assert_eq!(summary.malformed.len(), 1);
        assert!(summary.malformed[0].original.ends_with("/dm_video/13443"));
        assert_eq!(summary.unique_ids.len(), 102);
        assert!(summary.excluded_count >= 12);

        let earliest = summary.earliest.unwrap();
        assert_eq!(earliest.timestamp, "20160304122159");
        assert!(earliest.original.contains("702847370122936320"));

        // ids are numerically sorted and unique
        assert!(summary.unique_ids.windows(2).all(|w| w[0] < w[1]));
        assert!(!summary.unique_ids.contains(&STUDY_ID));
    }

    #[test]
    fn survey_of_nothing_is_empty() {
        let summary = dedupe_by_media_id(&[], &IdExtractor::default(), &[]);
        assert!(summary.unique_ids.is_empty());
        assert!(summary.earliest.is_none());
        assert_eq!(summary.pipeline_line_count(), 0);
    }

    #[test]
    fn survey_matches_a_brute_force_set_and_ignores_order() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (records, _) = parse_cdx_lines(APPENDIX4);

        // brute-force oracle: set construction with independent id parsing
        let mut expected = std::collections::HashSet::new();
        for record in &records {
            let rest = record.original.split("dm_video/").nth(1).unwrap_or("");
            let segment = rest.split(['/', '?']).next().unwrap_or("");
            let stem = segment.split('.').next().unwrap_or("");
            let has_more = rest.contains('/') || segment.contains('.');
            if let Ok(id) = stem.parse::<u64>() {
                if has_more && id != STUDY_ID {
                    expected.insert(id);
                }
            }
        }
        let summary = dedupe_by_media_id(&records, &IdExtractor::default(), &[STUDY_ID]);
        let actual: std::collections::HashSet<u64> = summary.unique_ids.iter().copied().collect();
        assert_eq!(actual, expected);

        // order independence
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..5 {
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rng);
            assert_eq!(
                dedupe_by_media_id(&shuffled, &IdExtractor::default(), &[STUDY_ID]),
                summary
            );
        }
    }

    // -- against the mock archive --

    fn mock_archive_config(server: &MockServer) -> ArchiveConfig {
        ArchiveConfig::new(&server.archive_base_url())
    }

    fn part_url(i: usize) -> String {
        format!("https://video.twimg.com{}", paper::VIDEO_PARTS[i].0)
    }

    #[test]
    fn spn_submit_records_a_capture_at_the_mock_clock() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_archive_config(&server);
        let expected_ts = server.clock_ts();

        let result = spn_submit(&part_url(0), &config).unwrap();
        assert!(result.accepted);
        let snapshot = result.snapshot.unwrap();
        assert_eq!(snapshot.timestamp, expected_ts);
        assert_eq!(snapshot.original, part_url(0));

        let log = server.capture_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].0, expected_ts);
    }

    #[test]
    fn spn_rejects_malformed_urls_without_a_request() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_archive_config(&server);
        assert!(matches!(
            spn_submit("not a url", &config),
            Err(ArchiveError::InvalidUrl(_))
        ));
        assert!(matches!(
            spn_submit("ftp://files.example/x", &config),
            Err(ArchiveError::InvalidUrl(_))
        ));
        assert_eq!(server.trace_len(), 0, "no request may be issued");
    }

    #[test]
    fn spn_surfaces_rate_limiting() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_archive_config(&server);
        server.set_spn_rate_limit_burst(1);
        match spn_submit(&part_url(0), &config) {
            Err(ArchiveError::RateLimited { retry_after }) => {
                assert_eq!(retry_after, Some(1));
            }
            other => panic!("expected RateLimited, got {other:?}"),
        }
        // the burst is exhausted; the next submission goes through
        assert!(spn_submit(&part_url(0), &config).unwrap().accepted);
    }

    #[test]
    fn cdx_prefix_search_returns_the_preloaded_fixture() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_archive_config(&server);
        let listing = cdx_prefix_search("video.twimg.com/dm_video/", &config).unwrap();
        assert_eq!(listing.records.len(), APPENDIX4.lines().count());
        assert!(listing.malformed.is_empty());

        let nothing = cdx_prefix_search("video.twimg.com/ext_tw_video/", &config).unwrap();
        assert!(nothing.records.is_empty());
    }

    #[test]
    fn cdx_pagination_is_followed_to_completion() {
        let mut scenario = crate::mock::paper_scenario();
        scenario.cdx_page_size = Some(7);
        let server = MockServer::serve(scenario).unwrap();
        let config = mock_archive_config(&server);
        let listing = cdx_prefix_search("video.twimg.com/dm_video/", &config).unwrap();
        assert_eq!(listing.records.len(), APPENDIX4.lines().count());
        // several pages means several requests
        assert!(server.trace_len() > 1);
    }

    fn live_assembly(
        server: &MockServer,
        dir: &std::path::Path,
    ) -> (crate::playlist::MediaPlaylist, assembler::AssemblyReport) {
        let playlist = parse_media_playlist(
            paper::PLAYLIST_BODY,
            &format!("https://video.twimg.com{}", paper::PLAYLIST_PATH),
        )
        .unwrap();
        let fetch_config = assembler::FetchConfig {
            endpoint_map: server.endpoint_map(),
            ..assembler::FetchConfig::default()
        };
        let mut uris = vec![playlist.init_section_uri.clone().unwrap()];
        uris.extend(playlist.segments.iter().map(|s| s.uri.clone()));
        let parts: Vec<Vec<u8>> = assembler::fetch_all(&uris, &fetch_config)
            .into_iter()
            .map(|r| r.unwrap().bytes)
            .collect();
        let report = assembler::assemble(&parts[0], &parts[1..], &dir.join("live.mp4")).unwrap();
        (playlist, report)
    }

    fn push_all_parts(server: &MockServer, config: &ArchiveConfig) {
        for i in 0..paper::VIDEO_PARTS.len() {
            spn_submit(&part_url(i), config).unwrap();
        }
        assert_eq!(server.capture_log().len(), 12);
    }

    #[test]
    fn roundtrip_verify_is_identical_on_a_fully_seeded_archive() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_archive_config(&server);
        let dir = tempfile::tempdir().unwrap();
        let (playlist, live) = live_assembly(&server, dir.path());
        push_all_parts(&server, &config);

        let policy = TimestampPolicy::NearestAtOrAfter(paper::CLOCK_START.to_string());
        let report = roundtrip_verify(&playlist, &live, &config, &policy).unwrap();

        assert!(report.identical);
        assert!(report.missing_captures.is_empty());
        assert_eq!(report.archived_digest.as_ref(), Some(&live.digest));
        let archived_total: u64 = report
            .per_part
            .iter()
            .map(|p| p.archived_length.unwrap())
            .sum();
        assert_eq!(archived_total, paper::TOTAL_VIDEO_BYTES);
        for part in &report.per_part {
            assert_eq!(part.live_length, part.archived_length);
        }
    }

    #[test]
    fn roundtrip_verify_reports_a_missing_capture() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_archive_config(&server);
        let dir = tempfile::tempdir().unwrap();
        let (playlist, live) = live_assembly(&server, dir.path());
        push_all_parts(&server, &config);
        assert!(server.drop_capture(&part_url(5)));

        let policy = TimestampPolicy::Latest;
        let report = roundtrip_verify(&playlist, &live, &config, &policy).unwrap();
        assert!(!report.identical);
        assert_eq!(report.missing_captures, vec![part_url(5)]);
        assert!(report.archived_digest.is_none());
    }

    #[test]
    fn roundtrip_verify_catches_a_corrupted_capture() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_archive_config(&server);
        let dir = tempfile::tempdir().unwrap();
        let (playlist, live) = live_assembly(&server, dir.path());
        push_all_parts(&server, &config);
        assert!(server.corrupt_capture(&part_url(7), 1234));

        let policy = TimestampPolicy::Latest;
        let report = roundtrip_verify(&playlist, &live, &config, &policy).unwrap();
        assert!(!report.identical);
        assert!(report.missing_captures.is_empty());
        // corruption preserved the length, so the lengths still agree
        for part in &report.per_part {
            assert_eq!(part.live_length, part.archived_length);
        }
        assert_ne!(report.archived_digest.unwrap(), live.digest);
    }

    #[test]
    fn timestamp_policy_selection() {
        let timestamps = vec![
            "20221208194342".to_string(),
            "20221208194345".to_string(),
            "20221208194350".to_string(),
        ];
        let policy = TimestampPolicy::NearestAtOrAfter("20221208194343".to_string());
        assert_eq!(policy.select(&timestamps).unwrap(), "20221208194345");
        // reference after everything falls back to the latest
        let policy = TimestampPolicy::NearestAtOrAfter("20230101000000".to_string());
        assert_eq!(policy.select(&timestamps).unwrap(), "20221208194350");
        assert_eq!(
            TimestampPolicy::Latest.select(&timestamps).unwrap(),
            "20221208194350"
        );
        assert_eq!(
            TimestampPolicy::Exact("20221208194345".to_string())
                .select(&timestamps)
                .unwrap(),
            "20221208194345"
        );
        assert!(TimestampPolicy::Exact("19990101000000".to_string())
            .select(&timestamps)
            .is_none());
    }
}
