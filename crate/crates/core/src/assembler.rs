//! Fetch the Media Initialization Section and Media Segments of a
//! fragmented MP4 and concatenate them into one playable file, byte-exact.
//!
//! No container-level validation happens here: byte fidelity is the
//! contract, playability belongs to the player.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::http::{send_get, ClientLimits, EndpointMap, WireError};
use crate::playlist::MediaPlaylist;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("fetch failed with status {0}")]
    FetchFailed(u16),
    #[error("body length {actual} does not match declared Content-Length {declared}")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("empty reply from server")]
    EmptyReply,
    #[error("timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Error)]
#[error("i/o error on {path}: {source}")]
pub struct IoError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub limits: ClientLimits,
    pub endpoint_map: EndpointMap,
    /// Maximum simultaneous segment fetches.
    pub concurrency: usize,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            limits: ClientLimits::default(),
            endpoint_map: EndpointMap::default(),
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FetchedPart {
    pub bytes: Vec<u8>,
    pub length: u64,
    pub content_type: Option<String>,
}

/// Fetch one part without any authentication headers attached. The received
/// length is checked against the declared Content-Length.
pub fn fetch_segment(uri: &str, config: &FetchConfig) -> Result<FetchedPart, FetchError> {
    let response = send_get(uri, &[], &config.limits, &config.endpoint_map).map_err(
        |err| match err {
            WireError::EmptyReply => FetchError::EmptyReply,
            WireError::Timeout => FetchError::Timeout,
            WireError::Transport(detail) => FetchError::Transport(detail),
        },
    )?;
    if response.status != 200 {
        return Err(FetchError::FetchFailed(response.status));
    }
    let actual = response.body.len() as u64;
    if let Some(declared) = response.content_length() {
        if declared != actual {
            return Err(FetchError::LengthMismatch { declared, actual });
        }
    }
    Ok(FetchedPart {
        length: actual,
        content_type: response.header("content-type").map(str::to_string),
        bytes: response.body,
    })
}

/// Fetch many parts with bounded concurrency, returning results in input
/// order regardless of completion order.
pub fn fetch_all(
    uris: &[String],
    config: &FetchConfig,
) -> Vec<Result<FetchedPart, FetchError>> {
    let slots: Vec<Mutex<Option<Result<FetchedPart, FetchError>>>> =
        uris.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.max(1).min(uris.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= uris.len() {
                    return;
                }
                let result = fetch_segment(&uris[i], config);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentDigest {
    pub algorithm: String,
    pub hex: String,
}

impl ContentDigest {
    pub fn sha256_of(parts: &[&[u8]]) -> ContentDigest {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update(part);
        }
        ContentDigest {
            algorithm: "sha256".to_string(),
            hex: format!("{:x}", hasher.finalize()),
        }
    }

    pub fn sha256_of_file(path: &Path) -> Result<ContentDigest, IoError> {
        let mut file = File::open(path).map_err(io_err(path))?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = file.read(&mut buf).map_err(io_err(path))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        Ok(ContentDigest {
            algorithm: "sha256".to_string(),
            hex: format!("{:x}", hasher.finalize()),
        })
    }
}

/// Metadata of a finished reassembly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub part_count: usize,
    pub part_lengths: Vec<u64>,
    pub total_bytes: u64,
    pub digest: ContentDigest,
    pub output_path: PathBuf,
}

/// Write `init` followed by each segment, in order, to `output`. Parts are
/// streamed through a buffered writer and the digest is computed on the fly,
/// so peak memory does not depend on the output size.
pub fn assemble(
    init: &[u8],
    segments: &[Vec<u8>],
    output: &Path,
) -> Result<AssemblyReport, IoError> {
    let parts = std::iter::once(init).chain(segments.iter().map(|s| s.as_slice()));
    assemble_streamed(parts, output)
}

/// Streaming form of [`assemble`]: consumes parts one at a time in playlist
/// order.
pub fn assemble_streamed<'a>(
    parts: impl IntoIterator<Item = &'a [u8]>,
    output: &Path,
) -> Result<AssemblyReport, IoError> {
    let file = File::create(output).map_err(io_err(output))?;
    let mut writer = BufWriter::new(file);
    let mut hasher = Sha256::new();
    let mut part_lengths = Vec::new();

    for part in parts {
        writer.write_all(part).map_err(io_err(output))?;
        hasher.update(part);
        part_lengths.push(part.len() as u64);
    }
    writer.flush().map_err(io_err(output))?;

    Ok(AssemblyReport {
        part_count: part_lengths.len(),
        total_bytes: part_lengths.iter().sum(),
        part_lengths,
        digest: ContentDigest {
            algorithm: "sha256".to_string(),
            hex: format!("{:x}", hasher.finalize()),
        },
        output_path: output.to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equivalence {
    pub identical: bool,
    /// Lowest differing byte index; when only the lengths differ this is the
    /// shorter file's length.
    pub first_diff_offset: Option<u64>,
    pub length_a: u64,
    pub length_b: u64,
}

/// Byte-exact file comparison, chunked so large files never load whole.
pub fn verify_equivalence(a: &Path, b: &Path) -> Result<Equivalence, IoError> {
    let mut file_a = File::open(a).map_err(io_err(a))?;
    let mut file_b = File::open(b).map_err(io_err(b))?;
    let mut buf_a = vec![0u8; 64 * 1024];
    let mut buf_b = vec![0u8; 64 * 1024];
    let mut offset = 0u64;
    let mut first_diff = None;
    let mut length_a = 0u64;
    let mut length_b = 0u64;

    loop {
        let n_a = read_full(&mut file_a, &mut buf_a).map_err(io_err(a))?;
        let n_b = read_full(&mut file_b, &mut buf_b).map_err(io_err(b))?;
        length_a += n_a as u64;
        length_b += n_b as u64;

        if first_diff.is_none() {
            let common = n_a.min(n_b);
            if let Some(i) = (0..common).find(|&i| buf_a[i] != buf_b[i]) {
                first_diff = Some(offset + i as u64);
            } else if n_a != n_b {
                first_diff = Some(offset + common as u64);
            }
        }
        offset += n_a.max(n_b) as u64;
        if n_a == 0 && n_b == 0 {
            break;
        }
    }

    Ok(Equivalence {
        identical: first_diff.is_none() && length_a == length_b,
        first_diff_offset: first_diff,
        length_a,
        length_b,
    })
}

fn read_full(file: &mut File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = file.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

/// One `<local-name> <uri>` line per part, init first, in playlist order.
/// Local names follow the `00.mp4`, `01.m4s`, ... scheme.
pub fn export_manifest(p: &MediaPlaylist) -> String {
    let mut entries: Vec<&str> = Vec::new();
    if let Some(init) = &p.init_section_uri {
        entries.push(init);
    }
    entries.extend(p.segments.iter().map(|s| s.uri.as_str()));

    let width = std::cmp::max(2, entries.len().saturating_sub(1).to_string().len());
    let mut out = String::from("# download manifest: <local-name> <uri>\n");
    for (i, uri) in entries.iter().enumerate() {
        let ext = uri_extension(uri).unwrap_or(if i == 0 { "mp4" } else { "m4s" });
        out.push_str(&format!("{i:0width$}.{ext} {uri}\n"));
    }
    out
}

fn uri_extension(uri: &str) -> Option<&str> {
    let path = uri.split(['?', '#']).next()?;
    let name = path.rsplit('/').next()?;
    let (_, ext) = name.rsplit_once('.')?;
    (!ext.is_empty()).then_some(ext)
}

/// Parse a manifest back into `(local_name, uri)` pairs, skipping comments
/// and blank lines.
pub fn parse_manifest(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|line| !line.is_empty() && !line.starts_with('#'))
        .filter_map(|line| {
            let (local, uri) = line.split_once(char::is_whitespace)?;
            Some((local.to_string(), uri.trim().to_string()))
        })
        .collect()
}
