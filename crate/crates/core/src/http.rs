//! A small HTTP/1.1 client over plain TCP.
//!
//! The probing workflow needs three things a general-purpose client makes
//! hard to observe:
//!
//! - header fidelity: a request carries `Host` plus exactly the caller's
//!   headers, nothing else, in the caller's order;
//! - a clean zero-byte connection close (curl exit 52, "Empty reply from
//!   server") kept distinct from timeouts and from refused connections;
//! - no automatic retries and no redirect following unless asked.
//!
//! TLS is deliberately absent. `https` URLs are served through an
//! [`EndpointMap`] that points the scheme role at a plain listener (the mock
//! server's "https-role"), which keeps the whole test bed hermetic. Probing a
//! real `https` host is out of scope for this build and fails with a
//! transport error saying so.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::uri::{is_loopback_host, Uri};

/// Where connections for each URL scheme actually go.
///
/// With a role mapped, the URL keeps its logical authority (the `Host` header
/// and request path are untouched) and only the TCP connection is redirected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EndpointMap {
    /// `host:port` receiving connections for `https` URLs.
    pub https: Option<String>,
    /// `host:port` receiving connections for `http` URLs.
    pub http: Option<String>,
}

impl EndpointMap {
    pub fn is_empty(&self) -> bool {
        self.https.is_none() && self.http.is_none()
    }

    fn for_scheme(&self, scheme: &str) -> Option<&str> {
        match scheme {
            "https" => self.https.as_deref(),
            "http" => self.http.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedirectPolicy {
    /// Record 3xx responses as-is.
    None,
    /// Follow up to N redirects, but only to the same host.
    SameHost(u8),
}

#[derive(Debug, Clone)]
pub struct ClientLimits {
    /// Overall wall-clock budget for connect + request + full response.
    pub timeout: Duration,
    pub redirect: RedirectPolicy,
    /// Upper bound on accepted body size.
    pub max_body: usize,
}

impl Default for ClientLimits {
    fn default() -> Self {
        ClientLimits {
            timeout: Duration::from_secs(10),
            redirect: RedirectPolicy::None,
            max_body: 256 * 1024 * 1024,
        }
    }
}

/// A parsed response. Header names are kept as received; lookup is
/// case-insensitive.
#[derive(Debug, Clone)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub elapsed: Duration,
}

impl Response {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn content_length(&self) -> Option<u64> {
        self.header("content-length")?.trim().parse().ok()
    }

    pub fn status_class(&self) -> u16 {
        self.status / 100
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireError {
    /// Connection accepted, then closed with zero response bytes.
    EmptyReply,
    /// The time budget ran out before a complete response arrived.
    Timeout,
    /// DNS, connect, TLS-absence, or protocol-level failure.
    Transport(String),
}

impl std::fmt::Display for WireError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WireError::EmptyReply => write!(f, "empty reply from server"),
            WireError::Timeout => write!(f, "timed out"),
            WireError::Transport(detail) => write!(f, "transport error: {detail}"),
        }
    }
}

impl std::error::Error for WireError {}

/// True when the request will stay on this machine: either the URL host is
/// loopback or the scheme role is mapped (mapping targets are loopback
/// listeners in this tool's workflows).
pub fn targets_local_endpoint(url: &str, map: &EndpointMap) -> bool {
    match Uri::parse_absolute(url) {
        Ok(u) => {
            let scheme = u.scheme.as_deref().unwrap_or("");
            if map.for_scheme(scheme).is_some() {
                return true;
            }
            u.host().map(is_loopback_host).unwrap_or(false)
        }
        Err(_) => false,
    }
}

fn connect_addr(url: &Uri, map: &EndpointMap) -> Result<(String, u16), WireError> {
    let scheme = url.scheme.as_deref().unwrap_or("");
    if let Some(mapped) = map.for_scheme(scheme) {
        let (host, port) = mapped.rsplit_once(':').ok_or_else(|| {
            WireError::Transport(format!("endpoint mapping {mapped:?} is not host:port"))
        })?;
        let port: u16 = port
            .parse()
            .map_err(|_| WireError::Transport(format!("bad port in endpoint mapping {mapped:?}")))?;
        return Ok((host.to_string(), port));
    }
    if scheme == "https" {
        return Err(WireError::Transport(
            "https without an endpoint mapping: this client does not speak TLS; \
             map the https role to a plain listener"
                .to_string(),
        ));
    }
    if scheme != "http" {
        return Err(WireError::Transport(format!("unsupported scheme {scheme:?}")));
    }
    let host = url
        .host()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| WireError::Transport("URL has no host".to_string()))?;
    let port = url.effective_port().unwrap_or(80);
    Ok((host.to_string(), port))
}

fn resolve_one(host: &str, port: u16) -> Result<SocketAddr, WireError> {
    (host, port)
        .to_socket_addrs()
        .map_err(|e| WireError::Transport(format!("resolving {host}:{port}: {e}")))?
        .next()
        .ok_or_else(|| WireError::Transport(format!("no address for {host}:{port}")))
}

struct Deadline {
    start: Instant,
    budget: Duration,
}

impl Deadline {
    fn new(budget: Duration) -> Self {
        Deadline {
            start: Instant::now(),
            budget,
        }
    }

    fn remaining(&self) -> Result<Duration, WireError> {
        self.budget
            .checked_sub(self.start.elapsed())
            .filter(|d| !d.is_zero())
            .ok_or(WireError::Timeout)
    }

    fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}

fn read_classified(
    stream: &mut TcpStream,
    buf: &mut [u8],
    deadline: &Deadline,
) -> Result<usize, WireError> {
    stream
        .set_read_timeout(Some(deadline.remaining()?))
        .map_err(|e| WireError::Transport(format!("set_read_timeout: {e}")))?;
    match stream.read(buf) {
        Ok(n) => Ok(n),
        Err(e)
            if e.kind() == std::io::ErrorKind::WouldBlock
                || e.kind() == std::io::ErrorKind::TimedOut =>
        {
            Err(WireError::Timeout)
        }
        Err(e) => Err(WireError::Transport(format!("read: {e}"))),
    }
}

/// Issue one GET. `headers` are written verbatim after the `Host` header;
/// nothing else is added.
pub fn send_get(
    url: &str,
    headers: &[(String, String)],
    limits: &ClientLimits,
    map: &EndpointMap,
) -> Result<Response, WireError> {
    let deadline = Deadline::new(limits.timeout);
    let mut current = url.to_string();
    let mut hops = 0u8;
    loop {
        let response = send_get_once(&current, headers, limits, map, &deadline)?;
        let allowed = match limits.redirect {
            RedirectPolicy::None => 0,
            RedirectPolicy::SameHost(n) => n,
        };
        if (300..400).contains(&response.status) && hops < allowed {
            if let Some(location) = response.header("location") {
                let next = crate::uri::resolve_uri(&current, location)
                    .map_err(|e| WireError::Transport(format!("bad redirect target: {e}")))?;
                let same_host = match (Uri::parse_absolute(&current), Uri::parse_absolute(&next)) {
                    (Ok(a), Ok(b)) => a.host() == b.host(),
                    _ => false,
                };
                if same_host {
                    hops += 1;
                    current = next;
                    continue;
                }
            }
        }
        return Ok(response);
    }
}

fn send_get_once(
    url: &str,
    headers: &[(String, String)],
    limits: &ClientLimits,
    map: &EndpointMap,
    deadline: &Deadline,
) -> Result<Response, WireError> {
    let parsed =
        Uri::parse_absolute(url).map_err(|e| WireError::Transport(format!("bad URL: {e}")))?;
    let (host, port) = connect_addr(&parsed, map)?;
    let addr = resolve_one(&host, port)?;

    let mut stream = TcpStream::connect_timeout(&addr, deadline.remaining()?).map_err(|e| {
        if e.kind() == std::io::ErrorKind::TimedOut {
            WireError::Timeout
        } else {
            WireError::Transport(format!("connect {addr}: {e}"))
        }
    })?;
    stream.set_nodelay(true).ok();

    // Host carries the logical authority even when the connection is mapped.
    let logical_host = parsed.host().unwrap_or(&host);
    let host_header = match parsed.port() {
        Some(p) => format!("{logical_host}:{p}"),
        None => logical_host.to_string(),
    };
    let mut request = format!("GET {} HTTP/1.1\r\n", parsed.path_and_query());
    request.push_str(&format!("Host: {host_header}\r\n"));
    for (name, value) in headers {
        request.push_str(&format!("{name}: {value}\r\n"));
    }
    request.push_str("\r\n");
    stream
        .set_write_timeout(Some(deadline.remaining()?))
        .map_err(|e| WireError::Transport(format!("set_write_timeout: {e}")))?;
    stream
        .write_all(request.as_bytes())
        .map_err(|e| WireError::Transport(format!("write request: {e}")))?;

    // Read the response head.
    let mut raw = Vec::with_capacity(1024);
    let mut chunk = [0u8; 4096];
    let head_end = loop {
        let n = read_classified(&mut stream, &mut chunk, deadline)?;
        if n == 0 {
            if raw.is_empty() {
                return Err(WireError::EmptyReply);
            }
            return Err(WireError::Transport("connection closed mid-headers".to_string()));
        }
        raw.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_head_end(&raw) {
            break pos;
        }
        if raw.len() > 64 * 1024 {
            return Err(WireError::Transport("response head too large".to_string()));
        }
    };

    let head = String::from_utf8_lossy(&raw[..head_end]).into_owned();
    let mut lines = head.split("\r\n");
    let status_line = lines.next().unwrap_or("");
    let status = parse_status_line(status_line)?;
    let mut parsed_headers = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let Some((name, value)) = line.split_once(':') else {
            return Err(WireError::Transport(format!("bad header line {line:?}")));
        };
        parsed_headers.push((name.trim().to_string(), value.trim().to_string()));
    }

    let mut body = raw[head_end + 4..].to_vec();
    let header = |name: &str| {
        parsed_headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    };

    let chunked = header("transfer-encoding")
        .map(|v| v.to_ascii_lowercase().contains("chunked"))
        .unwrap_or(false);
    if chunked {
        read_remaining(&mut stream, &mut body, limits.max_body, deadline)?;
        body = decode_chunked(&body)?;
    } else if let Some(length) = header("content-length").and_then(|v| v.trim().parse::<usize>().ok())
    {
        if length > limits.max_body {
            return Err(WireError::Transport(format!("body of {length} bytes exceeds limit")));
        }
        while body.len() < length {
            let n = read_classified(&mut stream, &mut chunk, deadline)?;
            if n == 0 {
                return Err(WireError::Transport(format!(
                    "body truncated: expected {length} bytes, got {}",
                    body.len()
                )));
            }
            body.extend_from_slice(&chunk[..n]);
        }
        body.truncate(length);
    } else if status_allows_body(status) {
        read_remaining(&mut stream, &mut body, limits.max_body, deadline)?;
    } else {
        body.clear();
    }

    Ok(Response {
        status,
        headers: parsed_headers,
        body,
        elapsed: deadline.elapsed(),
    })
}

fn status_allows_body(status: u16) -> bool {
    !(status < 200 || status == 204 || status == 304)
}

fn find_head_end(raw: &[u8]) -> Option<usize> {
    raw.windows(4).position(|w| w == b"\r\n\r\n")
}

fn parse_status_line(line: &str) -> Result<u16, WireError> {
    let mut parts = line.split_whitespace();
    let version = parts.next().unwrap_or("");
    if !version.starts_with("HTTP/") {
        return Err(WireError::Transport(format!("bad status line {line:?}")));
    }
    parts
        .next()
        .and_then(|code| code.parse().ok())
        .ok_or_else(|| WireError::Transport(format!("bad status line {line:?}")))
}

fn read_remaining(
    stream: &mut TcpStream,
    body: &mut Vec<u8>,
    max_body: usize,
    deadline: &Deadline,
) -> Result<(), WireError> {
    let mut chunk = [0u8; 8192];
    loop {
        let n = read_classified(stream, &mut chunk, deadline)?;
        if n == 0 {
            return Ok(());
        }
        body.extend_from_slice(&chunk[..n]);
        if body.len() > max_body {
            return Err(WireError::Transport("body exceeds size limit".to_string()));
        }
    }
}

fn decode_chunked(raw: &[u8]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        let line_end = raw[pos..]
            .windows(2)
            .position(|w| w == b"\r\n")
            .ok_or_else(|| WireError::Transport("bad chunked encoding".to_string()))?
            + pos;
        let size_text = std::str::from_utf8(&raw[pos..line_end])
            .map_err(|_| WireError::Transport("bad chunk size".to_string()))?;
        let size_text = size_text.split(';').next().unwrap_or("").trim();
        let size = usize::from_str_radix(size_text, 16)
            .map_err(|_| WireError::Transport(format!("bad chunk size {size_text:?}")))?;
        pos = line_end + 2;
        if size == 0 {
            return Ok(out);
        }
        if pos + size > raw.len() {
            return Err(WireError::Transport("chunked body truncated".to_string()));
        }
        out.extend_from_slice(&raw[pos..pos + size]);
        pos += size + 2; // skip trailing CRLF
    }
}
