//! HLS Media Playlist parsing for fragmented MP4, plus the path-convention
//! lint for DM-style segment URLs.
//!
//! Only the Media Playlist subset is supported: `EXT-X-VERSION`,
//! `EXT-X-MEDIA-SEQUENCE`, `EXT-X-TARGETDURATION`, `EXT-X-PLAYLIST-TYPE`,
//! `EXT-X-MAP`, `EXTINF` and `EXT-X-ENDLIST`. Master playlists are rejected;
//! any other tag is preserved verbatim and never fails the parse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uri::{resolve_uri, Uri};

/// A duration held as an exact integer count of milliseconds.
///
/// `EXTINF` values in the wild are millisecond-precise decimals ("3.000",
/// "2.100"); keeping them as integers avoids float drift when summing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Millis(pub u64);

impl Millis {
    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Nearest whole second (RFC 8216 rounds EXTINF to the nearest integer
    /// when comparing against the target duration).
    pub fn round_secs(self) -> u64 {
        (self.0 + 500) / 1000
    }

    /// Parse a decimal seconds value ("3", "3.0", "2.100") into milliseconds.
    /// A fourth and later fraction digit rounds to the nearest millisecond.
    pub fn parse_seconds(text: &str) -> Option<Millis> {
        let text = text.trim();
        let (whole, frac) = match text.split_once('.') {
            Some((w, f)) => (w, f),
            None => (text, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return None;
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        let mut ms = whole.checked_mul(1000)?;
        let digits: Vec<u32> = frac.chars().map(|c| c.to_digit(10).unwrap()).collect();
        let mut frac_ms = 0u64;
        for i in 0..3 {
            frac_ms = frac_ms * 10 + digits.get(i).copied().unwrap_or(0) as u64;
        }
        if digits.get(3).copied().unwrap_or(0) >= 5 {
            frac_ms += 1;
        }
        ms = ms.checked_add(frac_ms)?;
        Some(Millis(ms))
    }
}

impl std::fmt::Display for Millis {
    /// Canonical decimal-seconds form with three fraction digits ("3.000").
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PlaylistType {
    Vod,
    Event,
    Unspecified,
}

/// One Media Segment: its playlist position, EXTINF duration, and the URI
/// resolved to absolute form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub duration: Millis,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaPlaylist {
    pub version: u32,
    pub media_sequence: u64,
    /// EXT-X-TARGETDURATION in whole seconds (0 when the tag is absent).
    pub target_duration: u64,
    pub playlist_type: PlaylistType,
    pub init_section_uri: Option<String>,
    pub segments: Vec<Segment>,
    pub has_endlist: bool,
    pub base_uri: String,
    /// Tags the parser does not model, kept verbatim in source order.
    pub unknown_tags: Vec<String>,
}

impl MediaPlaylist {
    /// VOD playlists need an ENDLIST tag to be considered complete.
    pub fn is_complete(&self) -> bool {
        match self.playlist_type {
            PlaylistType::Vod => self.has_endlist,
            _ => self.has_endlist,
        }
    }

    /// RFC 8216 target-duration rule, reported as warnings rather than
    /// failures: each EXTINF rounded to the nearest second must not exceed
    /// the target duration.
    pub fn duration_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.target_duration == 0 && !self.segments.is_empty() {
            warnings.push("EXT-X-TARGETDURATION missing".to_string());
            return warnings;
        }
        for seg in &self.segments {
            if seg.duration.round_secs() > self.target_duration {
                warnings.push(format!(
                    "segment {} duration {} exceeds target duration {}",
                    seg.index, seg.duration, self.target_duration
                ));
            }
        }
        warnings
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlaylistError {
    #[error("first line is not #EXTM3U")]
    MissingHeader,
    #[error("malformed tag on line {line}: {detail}")]
    MalformedTag { line: usize, detail: String },
    #[error("EXTINF on line {line} has no following URI line")]
    DanglingExtinf { line: usize },
}

/// Canonical serializer. Written against the type, not the parser: the
/// round-trip property `parse(serialize(parse(x))) == parse(x)` is checked
/// for every fixture.
pub fn serialize_media_playlist(p: &MediaPlaylist) -> String {
    let mut out = String::new();
    out.push_str("#EXTM3U\n");
    out.push_str(&format!("#EXT-X-VERSION:{}\n", p.version));
    out.push_str(&format!("#EXT-X-MEDIA-SEQUENCE:{}\n", p.media_sequence));
    out.push_str(&format!("#EXT-X-TARGETDURATION:{}\n", p.target_duration));
    match p.playlist_type {
        PlaylistType::Vod => out.push_str("#EXT-X-PLAYLIST-TYPE:VOD\n"),
        PlaylistType::Event => out.push_str("#EXT-X-PLAYLIST-TYPE:EVENT\n"),
        PlaylistType::Unspecified => {}
    }
    for tag in &p.unknown_tags {
        out.push_str(tag);
        out.push('\n');
    }
    if let Some(map) = &p.init_section_uri {
        out.push_str(&format!("#EXT-X-MAP:URI=\"{map}\"\n"));
    }
    for seg in &p.segments {
        out.push_str(&format!("#EXTINF:{},\n{}\n", seg.duration, seg.uri));
    }
    if p.has_endlist {
        out.push_str("#EXT-X-ENDLIST\n");
    }
    out
}

/// Split a tag attribute list (`KEY=VALUE,KEY="VAL,UE"`) honoring quotes.
fn split_attributes(list: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut in_quotes = false;
    for (i, c) in list.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => {
                parts.push(&list[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&list[start..]);
    parts
}

fn map_uri_attribute(list: &str, line: usize) -> Result<String, PlaylistError> {
    for attr in split_attributes(list) {
        let Some((key, value)) = attr.split_once('=') else {
            return Err(PlaylistError::MalformedTag {
                line,
                detail: format!("attribute without '=': {attr:?}"),
            });
        };
        if key.trim() == "URI" {
            let v = value.trim();
            let Some(unquoted) = v.strip_prefix('"').and_then(|v| v.strip_suffix('"')) else {
                return Err(PlaylistError::MalformedTag {
                    line,
                    detail: "EXT-X-MAP URI value is not quoted".to_string(),
                });
            };
            return Ok(unquoted.to_string());
        }
    }
    Err(PlaylistError::MalformedTag {
        line,
        detail: "EXT-X-MAP has no URI attribute".to_string(),
    })
}

/// Parse a Media Playlist body, resolving every URI against `base`.
///
/// Errors are limited to [`PlaylistError`]'s three cases; anything the parser
/// does not understand but can skip is preserved in `unknown_tags`.
pub fn parse_media_playlist(text: &str, base: &str) -> Result<MediaPlaylist, PlaylistError> {
    let base_uri = Uri::parse_absolute(base).map_err(|e| PlaylistError::MalformedTag {
        line: 0,
        detail: format!("invalid base URI: {e}"),
    })?;

    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().map(str::trim_end).enumerate();

    match lines.next() {
        Some((_, "#EXTM3U")) => {}
        _ => return Err(PlaylistError::MissingHeader),
    }

    let mut playlist = MediaPlaylist {
        version: 1,
        media_sequence: 0,
        target_duration: 0,
        playlist_type: PlaylistType::Unspecified,
        init_section_uri: None,
        segments: Vec::new(),
        has_endlist: false,
        base_uri: base_uri.to_uri_string(),
        unknown_tags: Vec::new(),
    };
    let mut pending_extinf: Option<(Millis, usize)> = None;

    let resolve = |reference: &str, line: usize| -> Result<String, PlaylistError> {
        resolve_uri(base, reference).map_err(|e| PlaylistError::MalformedTag {
            line,
            detail: format!("unresolvable URI: {e}"),
        })
    };

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw;
        if line.is_empty() {
            continue;
        }
        if let Some(value) = line.strip_prefix("#EXT-X-VERSION:") {
            playlist.version = value.trim().parse().map_err(|_| PlaylistError::MalformedTag {
                line: line_no,
                detail: format!("bad EXT-X-VERSION value {value:?}"),
            })?;
        } else if let Some(value) = line.strip_prefix("#EXT-X-MEDIA-SEQUENCE:") {
            playlist.media_sequence =
                value.trim().parse().map_err(|_| PlaylistError::MalformedTag {
                    line: line_no,
                    detail: format!("bad EXT-X-MEDIA-SEQUENCE value {value:?}"),
                })?;
        } else if let Some(value) = line.strip_prefix("#EXT-X-TARGETDURATION:") {
            playlist.target_duration =
                value.trim().parse().map_err(|_| PlaylistError::MalformedTag {
                    line: line_no,
                    detail: format!("bad EXT-X-TARGETDURATION value {value:?}"),
                })?;
        } else if let Some(value) = line.strip_prefix("#EXT-X-PLAYLIST-TYPE:") {
            playlist.playlist_type = match value.trim() {
                "VOD" => PlaylistType::Vod,
                "EVENT" => PlaylistType::Event,
                other => {
                    return Err(PlaylistError::MalformedTag {
                        line: line_no,
                        detail: format!("bad EXT-X-PLAYLIST-TYPE value {other:?}"),
                    })
                }
            };
        } else if let Some(value) = line.strip_prefix("#EXT-X-MAP:") {
            let uri = map_uri_attribute(value, line_no)?;
            playlist.init_section_uri = Some(resolve(&uri, line_no)?);
        } else if let Some(value) = line.strip_prefix("#EXTINF:") {
            if let Some((_, prev_line)) = pending_extinf {
                return Err(PlaylistError::DanglingExtinf { line: prev_line });
            }
            let duration_text = value.split(',').next().unwrap_or("");
            let duration =
                Millis::parse_seconds(duration_text).ok_or_else(|| PlaylistError::MalformedTag {
                    line: line_no,
                    detail: format!("bad EXTINF duration {duration_text:?}"),
                })?;
            if duration.0 == 0 {
                return Err(PlaylistError::MalformedTag {
                    line: line_no,
                    detail: "EXTINF duration must be > 0".to_string(),
                });
            }
            pending_extinf = Some((duration, line_no));
        } else if line == "#EXT-X-ENDLIST" {
            playlist.has_endlist = true;
        } else if line.starts_with("#EXT-X-STREAM-INF") || line.starts_with("#EXT-X-MEDIA:") {
            return Err(PlaylistError::MalformedTag {
                line: line_no,
                detail: "master playlist not supported".to_string(),
            });
        } else if line.starts_with("#EXT") {
            playlist.unknown_tags.push(line.to_string());
        } else if line.starts_with('#') {
            // comment
        } else {
            let Some((duration, _)) = pending_extinf.take() else {
                return Err(PlaylistError::MalformedTag {
                    line: line_no,
                    detail: "segment URI without a preceding EXTINF".to_string(),
                });
            };
            let uri = resolve(line, line_no)?;
            playlist.segments.push(Segment {
                index: playlist.segments.len(),
                duration,
                uri,
            });
        }
    }

    if let Some((_, line)) = pending_extinf {
        return Err(PlaylistError::DanglingExtinf { line });
    }
    Ok(playlist)
}

/// Exact sum of segment durations.
pub fn total_duration(p: &MediaPlaylist) -> Millis {
    Millis(p.segments.iter().map(|s| s.duration.0).sum())
}

/// One lint observation from [`lint_dm_path_convention`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    /// No `/vid/<start_ms>/<end_ms>/` pattern in the segment paths.
    ConventionNotDetected,
    /// Path range length disagrees with the EXTINF duration.
    DurationMismatch {
        index: usize,
        path_ms: u64,
        extinf_ms: u64,
    },
    /// Consecutive segments do not tile: previous end != next start.
    RangeDiscontinuity {
        index: usize,
        prev_end_ms: u64,
        start_ms: u64,
    },
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::ConventionNotDetected => write!(f, "convention not detected"),
            Finding::DurationMismatch {
                index,
                path_ms,
                extinf_ms,
            } => write!(
                f,
                "segment {index}: path range {path_ms} ms != EXTINF {extinf_ms} ms"
            ),
            Finding::RangeDiscontinuity {
                index,
                prev_end_ms,
                start_ms,
            } => write!(
                f,
                "segment {index}: starts at {start_ms} ms but previous segment ends at {prev_end_ms} ms"
            ),
        }
    }
}

/// Extract `(start_ms, end_ms)` from a `/vid/<a>/<b>/` segment path.
fn vid_range(uri: &str) -> Option<(u64, u64)> {
    let path = Uri::parse(uri).ok()?.path;
    let mut segments = path.split('/');
    while let Some(seg) = segments.next() {
        if seg == "vid" {
            let a: u64 = segments.next()?.parse().ok()?;
            let b: u64 = segments.next()?.parse().ok()?;
            return Some((a, b));
        }
    }
    None
}

/// Check the observed `<start_ms>/<end_ms>` path convention of DM video
/// segments against the EXTINF durations.
///
/// The convention is a provider habit, not a documented contract, so every
/// disagreement is a finding rather than an error. A playlist whose segment
/// paths do not all carry the pattern yields a single
/// [`Finding::ConventionNotDetected`].
pub fn lint_dm_path_convention(p: &MediaPlaylist) -> Vec<Finding> {
    let ranges: Vec<Option<(u64, u64)>> = p.segments.iter().map(|s| vid_range(&s.uri)).collect();
    if ranges.is_empty() || ranges.iter().any(Option::is_none) {
        return vec![Finding::ConventionNotDetected];
    }
    let mut findings = Vec::new();
    let mut prev_end: Option<u64> = None;
    for (seg, range) in p.segments.iter().zip(&ranges) {
        let (start, end) = range.unwrap();
        let path_ms = end.saturating_sub(start);
        if path_ms != seg.duration.0 {
            findings.push(Finding::DurationMismatch {
                index: seg.index,
                path_ms,
                extinf_ms: seg.duration.0,
            });
        }
        if let Some(prev) = prev_end {
            if prev != start {
                findings.push(Finding::RangeDiscontinuity {
                    index: seg.index,
                    prev_end_ms: prev,
                    start_ms: start,
                });
            }
        }
        prev_end = Some(end);
    }
    findings
}
