//! The listener, router, and state machine behind [`MockServer`].

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use time::{Duration as TimeDuration, PrimitiveDateTime};

use super::{filler_bytes, MockError, Phase, ScenarioConfig};
use crate::http::EndpointMap;
use crate::ts::{format_ts14, parse_ts14};

/// Monotonic capture clock: every tick returns the current 14-digit
/// timestamp and advances one second.
struct Clock {
    current: PrimitiveDateTime,
}

impl Clock {
    fn tick(&mut self) -> String {
        let out = format_ts14(self.current);
        self.current += TimeDuration::seconds(1);
        out
    }

    fn peek(&self) -> String {
        format_ts14(self.current)
    }

    fn set(&mut self, ts: &str) -> Result<(), String> {
        let next = parse_ts14(ts).ok_or_else(|| format!("bad timestamp {ts:?}"))?;
        if next < self.current {
            return Err(format!(
                "clock only moves forward (current {})",
                format_ts14(self.current)
            ));
        }
        self.current = next;
        Ok(())
    }
}

/// One recorded request, in arrival order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Which listener received it: "https" or "http".
    pub role: String,
    pub method: String,
    /// Path plus query, exactly as requested.
    pub target: String,
    pub headers: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
struct Capture {
    bytes: Vec<u8>,
    mimetype: String,
}

enum RouteKind {
    Image { bytes: Vec<u8>, session: String },
    Video { bytes: Vec<u8>, plain: bool, content_type: String },
    Playlist { body: Vec<u8> },
}

struct SessionInfo {
    parties: Vec<String>,
    stale_tokens: Vec<String>,
}

struct State {
    routes: HashMap<String, RouteKind>,
    token_accounts: HashMap<String, String>,
    sessions: HashMap<String, SessionInfo>,
    phases: Mutex<HashMap<String, Phase>>,
    captures: Mutex<BTreeMap<(String, String), Capture>>,
    cdx_preload: Vec<String>,
    cdx_page_size: Option<usize>,
    trace: Mutex<Vec<TraceEntry>>,
    clock: Mutex<Clock>,
    spn_429_remaining: AtomicU32,
    sts: Option<String>,
    csp: Option<String>,
    shutdown: AtomicBool,
}

/// How a presented credential relates to the session owning an image route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CookieClass {
    None,
    Unknown,
    PartyLive,
    PartyStale,
    ThirdParty,
}

enum Reply {
    Http {
        status: u16,
        reason: &'static str,
        headers: Vec<(String, String)>,
        body: Vec<u8>,
    },
    /// Accept, then close without writing a byte (curl exit 52 on the
    /// client side).
    EmptyClose,
}

impl Reply {
    fn status(status: u16, reason: &'static str) -> Reply {
        Reply::Http {
            status,
            reason,
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    fn with_body(status: u16, reason: &'static str, content_type: &str, body: Vec<u8>) -> Reply {
        Reply::Http {
            status,
            reason,
            headers: vec![("content-type".to_string(), content_type.to_string())],
            body,
        }
    }

    fn push_header(&mut self, name: &str, value: String) {
        if let Reply::Http { headers, .. } = self {
            headers.push((name.to_string(), value));
        }
    }
}

struct Request {
    method: String,
    target: String,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    fn path(&self) -> &str {
        self.target.split('?').next().unwrap_or(&self.target)
    }

    fn query(&self) -> Option<&str> {
        self.target.split_once('?').map(|(_, q)| q)
    }
}

/// A running behavior twin with a "https-role" and a "http-role" listener.
pub struct MockServer {
    state: Arc<State>,
    https_addr: SocketAddr,
    http_addr: SocketAddr,
    listener_threads: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Bind both role listeners on loopback and start serving `config`.
    pub fn serve(config: ScenarioConfig) -> Result<MockServer, MockError> {
        config.validate()?;

        let mut routes = HashMap::new();
        for image in &config.image_routes {
            routes.insert(
                image.path.clone(),
                RouteKind::Image {
                    bytes: filler_bytes(&image.path, image.length),
                    session: image.session.clone(),
                },
            );
        }
        for video in &config.video_routes {
            routes.insert(
                video.path.clone(),
                RouteKind::Video {
                    bytes: filler_bytes(&video.path, video.length),
                    plain: video.plain_http_allowed,
                    content_type: video.content_type.clone(),
                },
            );
        }
        for playlist in &config.playlist_routes {
            routes.insert(
                playlist.path.clone(),
                RouteKind::Playlist {
                    body: playlist.body.clone().into_bytes(),
                },
            );
        }

        let token_accounts = config
            .accounts
            .iter()
            .map(|a| (a.cookie_token.clone(), a.id.clone()))
            .collect();
        let sessions = config
            .sessions
            .iter()
            .map(|s| {
                (
                    s.session_id.clone(),
                    SessionInfo {
                        parties: s.parties.clone(),
                        stale_tokens: s.stale_tokens.clone(),
                    },
                )
            })
            .collect();
        let phases = config
            .sessions
            .iter()
            .map(|s| (s.session_id.clone(), s.phase))
            .collect();

        let clock = Clock {
            current: parse_ts14(&config.clock_start)
                .ok_or_else(|| MockError::InvalidScenario("bad clock_start".to_string()))?,
        };

        let state = Arc::new(State {
            routes,
            token_accounts,
            sessions,
            phases: Mutex::new(phases),
            captures: Mutex::new(BTreeMap::new()),
            cdx_preload: config
                .cdx_preload
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect(),
            cdx_page_size: config.cdx_page_size,
            trace: Mutex::new(Vec::new()),
            clock: Mutex::new(clock),
            spn_429_remaining: AtomicU32::new(config.spn_rate_limit_burst),
            sts: config.sts_header_value.clone(),
            csp: config.csp_header_value.clone(),
            shutdown: AtomicBool::new(false),
        });

        let mut listener_threads = Vec::new();
        let mut bind_role = |role: &'static str| -> Result<SocketAddr, MockError> {
            let listener = TcpListener::bind("127.0.0.1:0")
                .map_err(|e| MockError::BindFailed(e.to_string()))?;
            let addr = listener
                .local_addr()
                .map_err(|e| MockError::BindFailed(e.to_string()))?;
            let state = Arc::clone(&state);
            listener_threads.push(std::thread::spawn(move || {
                accept_loop(listener, role, state);
            }));
            Ok(addr)
        };
        let https_addr = bind_role("https")?;
        let http_addr = bind_role("http")?;

        Ok(MockServer {
            state,
            https_addr,
            http_addr,
            listener_threads,
        })
    }

    /// Serve the default demo scenario.
    pub fn serve_paper_scenario() -> Result<MockServer, MockError> {
        MockServer::serve(super::paper_scenario())
    }

    pub fn https_endpoint(&self) -> String {
        self.https_addr.to_string()
    }

    pub fn http_endpoint(&self) -> String {
        self.http_addr.to_string()
    }

    /// Endpoint map pointing both scheme roles at this server.
    pub fn endpoint_map(&self) -> EndpointMap {
        EndpointMap {
            https: Some(self.https_endpoint()),
            http: Some(self.http_endpoint()),
        }
    }

    /// Archive API base as seen through the https role.
    pub fn archive_base_url(&self) -> String {
        format!("http://{}", self.https_addr)
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.state.trace.lock().unwrap().clone()
    }

    pub fn trace_len(&self) -> usize {
        self.state.trace.lock().unwrap().len()
    }

    pub fn clear_trace(&self) {
        self.state.trace.lock().unwrap().clear();
    }

    pub fn session_phase(&self, session_id: &str) -> Option<Phase> {
        self.state.phases.lock().unwrap().get(session_id).copied()
    }

    pub fn set_session_phase(&self, session_id: &str, next: Phase) -> Result<(), MockError> {
        let mut phases = self.state.phases.lock().unwrap();
        let Some(current) = phases.get_mut(session_id) else {
            return Err(MockError::IllegalTransition(format!(
                "unknown session {session_id:?}"
            )));
        };
        if !current.can_transition_to(next) {
            return Err(MockError::IllegalTransition(format!(
                "{} -> {}",
                current.as_str(),
                next.as_str()
            )));
        }
        *current = next;
        Ok(())
    }

    pub fn clock_ts(&self) -> String {
        self.state.clock.lock().unwrap().peek()
    }

    /// `(timestamp, original URL)` of every accumulated capture.
    pub fn capture_log(&self) -> Vec<(String, String)> {
        self.state
            .captures
            .lock()
            .unwrap()
            .keys()
            .cloned()
            .collect()
    }

    /// Seed an archived capture directly, bypassing the save endpoint.
    pub fn seed_capture(&self, timestamp: &str, url: &str, bytes: Vec<u8>, mimetype: &str) {
        self.state.captures.lock().unwrap().insert(
            (timestamp.to_string(), url.to_string()),
            Capture {
                bytes,
                mimetype: mimetype.to_string(),
            },
        );
    }

    /// Flip one byte in the stored capture of `url`. Returns false when no
    /// such capture exists or the offset is out of range.
    pub fn corrupt_capture(&self, url: &str, offset: usize) -> bool {
        let mut captures = self.state.captures.lock().unwrap();
        for ((_, original), capture) in captures.iter_mut() {
            if original == url {
                if let Some(byte) = capture.bytes.get_mut(offset) {
                    *byte ^= 0xff;
                    return true;
                }
                return false;
            }
        }
        false
    }

    pub fn drop_capture(&self, url: &str) -> bool {
        let mut captures = self.state.captures.lock().unwrap();
        let keys: Vec<(String, String)> = captures
            .keys()
            .filter(|(_, original)| original == url)
            .cloned()
            .collect();
        for key in &keys {
            captures.remove(key);
        }
        !keys.is_empty()
    }

    pub fn set_spn_rate_limit_burst(&self, n: u32) {
        self.state.spn_429_remaining.store(n, Ordering::SeqCst);
    }

    /// Stop accepting connections and join the listener threads.
    pub fn shutdown(&mut self) {
        if self.state.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // nudge both blocking accept() calls
        let _ = TcpStream::connect(self.https_addr);
        let _ = TcpStream::connect(self.http_addr);
        for handle in self.listener_threads.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, role: &'static str, state: Arc<State>) {
    loop {
        let Ok((stream, _)) = listener.accept() else {
            if state.shutdown.load(Ordering::SeqCst) {
                return;
            }
            continue;
        };
        if state.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let state = Arc::clone(&state);
        std::thread::spawn(move || {
            handle_connection(stream, role, &state);
        });
    }
}

fn handle_connection(mut stream: TcpStream, role: &'static str, state: &State) {
    stream
        .set_read_timeout(Some(std::time::Duration::from_secs(10)))
        .ok();
    let Some(request) = read_request(&mut stream) else {
        return;
    };

    state.trace.lock().unwrap().push(TraceEntry {
        role: role.to_string(),
        method: request.method.clone(),
        target: request.target.clone(),
        headers: request.headers.clone(),
    });

    let reply = route(state, role, &request);
    match reply {
        Reply::EmptyClose => {
            // write nothing; the client sees a clean zero-byte close
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
        Reply::Http {
            status,
            reason,
            mut headers,
            body,
        } => {
            headers.push(("content-length".to_string(), body.len().to_string()));
            headers.push(("connection".to_string(), "close".to_string()));
            headers.push(("server".to_string(), "twinmock".to_string()));
            headers.push((
                "x-transaction-id".to_string(),
                short_hash(&request.target),
            ));
            let mut head = format!("HTTP/1.1 {status} {reason}\r\n");
            for (name, value) in &headers {
                head.push_str(&format!("{name}: {value}\r\n"));
            }
            head.push_str("\r\n");
            let _ = stream.write_all(head.as_bytes());
            if request.method != "HEAD" {
                let _ = stream.write_all(&body);
            }
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    let mut raw = Vec::with_capacity(1024);
    let mut chunk = [0u8; 4096];
    let head_end = loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        raw.extend_from_slice(&chunk[..n]);
        if let Some(pos) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos;
        }
        if raw.len() > 64 * 1024 {
            return None;
        }
    };
    let head = String::from_utf8_lossy(&raw[..head_end]).into_owned();
    let mut lines = head.split("\r\n");
    let request_line = lines.next()?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next()?.to_string();
    let target = parts.next()?.to_string();
    let mut headers = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (name, value) = line.split_once(':')?;
        headers.push((name.trim().to_string(), value.trim().to_string()));
    }
    let mut body = raw[head_end + 4..].to_vec();
    let content_length = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    if content_length > 1024 * 1024 {
        return None;
    }
    while body.len() < content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&chunk[..n]);
    }
    body.truncate(content_length);
    Some(Request {
        method,
        target,
        headers,
        body,
    })
}

fn short_hash(input: &str) -> String {
    let digest = Sha256::digest(input.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn route(state: &State, role: &str, request: &Request) -> Reply {
    let path = request.path().to_string();

    if role == "http" {
        // the plain listener serves only what is explicitly allowed there
        return match state.routes.get(&path) {
            Some(RouteKind::Video {
                bytes,
                plain: true,
                content_type,
            }) => decorate(state, Reply::with_body(200, "OK", content_type, bytes.clone())),
            Some(RouteKind::Playlist { body }) => decorate(
                state,
                Reply::with_body(200, "OK", "application/x-mpegURL", body.clone()),
            ),
            _ => Reply::status(404, "Not Found"),
        };
    }

    if let Some(rest) = path.strip_prefix("/admin/") {
        return admin_route(state, rest, request);
    }
    if request.target.starts_with("/save/") {
        return save_route(state, &request.target["/save/".len()..]);
    }
    if request.target.starts_with("/web/") {
        return replay_route(state, &request.target["/web/".len()..]);
    }
    if path == "/cdx/search/cdx" {
        return cdx_route(state, request.query().unwrap_or(""));
    }

    match state.routes.get(&path) {
        Some(RouteKind::Image { bytes, session }) => image_route(state, request, bytes, session),
        Some(RouteKind::Video {
            bytes,
            content_type,
            ..
        }) => decorate(state, Reply::with_body(200, "OK", content_type, bytes.clone())),
        Some(RouteKind::Playlist { body }) => decorate(
            state,
            Reply::with_body(200, "OK", "application/x-mpegURL", body.clone()),
        ),
        None => Reply::status(404, "Not Found"),
    }
}

/// Attach the scenario's response-header posture (STS, site-wide CSP, and
/// filler CORS bits).
fn decorate(state: &State, mut reply: Reply) -> Reply {
    if let Some(sts) = &state.sts {
        reply.push_header("strict-transport-security", sts.clone());
    }
    if let Some(csp) = &state.csp {
        reply.push_header("content-security-policy", csp.clone());
    }
    reply.push_header("access-control-allow-origin", "*".to_string());
    reply.push_header("accept-ranges", "bytes".to_string());
    reply
}

fn classify_cookie(state: &State, request: &Request, session: &SessionInfo) -> CookieClass {
    let Some(cookie) = request.header("cookie") else {
        return CookieClass::None;
    };
    let token = cookie.split(';').find_map(|pair| {
        let (key, value) = pair.split_once('=')?;
        (key.trim() == "auth_token").then(|| value.trim().to_string())
    });
    let Some(token) = token else {
        return CookieClass::None;
    };
    if session.stale_tokens.iter().any(|t| t == &token) {
        return CookieClass::PartyStale;
    }
    match state.token_accounts.get(&token) {
        Some(account) if session.parties.contains(account) => CookieClass::PartyLive,
        Some(_) => CookieClass::ThirdParty,
        None => CookieClass::Unknown,
    }
}

/// The access-control decision table for images shared in a DM session.
/// The response is a pure function of (cookie class, Referer presence,
/// session phase); wrong-party and missing-Referer are intentionally
/// indistinguishable by status alone.
fn image_decision(class: CookieClass, has_referer: bool, phase: Phase) -> ImageDecision {
    match (class, phase) {
        (CookieClass::None, _) | (CookieClass::Unknown, _) => ImageDecision::Unauthorized,
        (CookieClass::PartyStale, _) => ImageDecision::EmptyClose,
        (CookieClass::PartyLive, Phase::Active) => {
            if has_referer {
                ImageDecision::Ok
            } else {
                ImageDecision::NotFound
            }
        }
        (CookieClass::PartyLive, Phase::Closed) => ImageDecision::NotFound,
        (CookieClass::PartyLive, Phase::Expired) => ImageDecision::EmptyClose,
        (CookieClass::ThirdParty, _) => ImageDecision::NotFound,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ImageDecision {
    Ok,
    Unauthorized,
    NotFound,
    EmptyClose,
}

fn image_route(state: &State, request: &Request, bytes: &[u8], session_id: &str) -> Reply {
    let session = &state.sessions[session_id];
    let phase = state.phases.lock().unwrap()[session_id];
    let class = classify_cookie(state, request, session);
    let has_referer = request
        .header("referer")
        .map(|v| !v.trim().is_empty())
        .unwrap_or(false);

    match image_decision(class, has_referer, phase) {
        ImageDecision::Ok => decorate(
            state,
            Reply::with_body(200, "OK", "image/jpeg", bytes.to_vec()),
        ),
        ImageDecision::Unauthorized => {
            let mut reply = Reply::status(401, "Unauthorized");
            // the set-cookie preamble shape served alongside a 401
            for name in ["guest_id_marketing", "guest_id_ads", "guest_id"] {
                reply.push_header(
                    "set-cookie",
                    format!("{name}=v1%3A167051518741457080; Max-Age=63072000; Path=/; Secure"),
                );
            }
            reply.push_header("cache-control", "no-cache".to_string());
            decorate(state, reply)
        }
        ImageDecision::NotFound => {
            let mut reply = Reply::status(404, "Not Found");
            reply.push_header("cache-control", "no-cache".to_string());
            decorate(state, reply)
        }
        ImageDecision::EmptyClose => Reply::EmptyClose,
    }
}

fn admin_route(state: &State, rest: &str, request: &Request) -> Reply {
    match (request.method.as_str(), rest) {
        ("GET", "health") => Reply::with_body(200, "OK", "text/plain", b"ok".to_vec()),
        ("GET", "trace") => {
            let trace = state.trace.lock().unwrap();
            let json = serde_json::to_vec(&*trace).unwrap_or_default();
            Reply::with_body(200, "OK", "application/json", json)
        }
        ("GET", "clock") => {
            let ts = state.clock.lock().unwrap().peek();
            Reply::with_body(200, "OK", "text/plain", ts.into_bytes())
        }
        ("POST", "clock") => {
            let body = String::from_utf8_lossy(&request.body);
            match state.clock.lock().unwrap().set(body.trim()) {
                Ok(()) => Reply::with_body(200, "OK", "text/plain", b"ok".to_vec()),
                Err(detail) => {
                    Reply::with_body(409, "Conflict", "text/plain", detail.into_bytes())
                }
            }
        }
        (method, other) => {
            if let Some(session_id) = other
                .strip_prefix("session/")
                .and_then(|r| r.strip_suffix("/phase"))
            {
                return session_phase_route(state, method, session_id, request);
            }
            Reply::status(404, "Not Found")
        }
    }
}

fn session_phase_route(
    state: &State,
    method: &str,
    session_id: &str,
    request: &Request,
) -> Reply {
    let mut phases = state.phases.lock().unwrap();
    let Some(phase) = phases.get_mut(session_id) else {
        return Reply::status(404, "Not Found");
    };
    match method {
        "GET" => Reply::with_body(200, "OK", "text/plain", phase.as_str().as_bytes().to_vec()),
        "POST" | "PUT" => {
            let body = String::from_utf8_lossy(&request.body);
            let Some(next) = Phase::parse(&body) else {
                return Reply::with_body(
                    400,
                    "Bad Request",
                    "text/plain",
                    b"expected ACTIVE, CLOSED or EXPIRED".to_vec(),
                );
            };
            if !phase.can_transition_to(next) {
                return Reply::with_body(
                    409,
                    "Conflict",
                    "text/plain",
                    format!("illegal transition {} -> {}", phase.as_str(), next.as_str())
                        .into_bytes(),
                );
            }
            *phase = next;
            Reply::with_body(200, "OK", "text/plain", b"ok".to_vec())
        }
        _ => Reply::status(405, "Method Not Allowed"),
    }
}

/// Save Page Now twin: fetches the target from the mock's own routes and
/// stores the bytes under the current clock tick.
fn save_route(state: &State, url: &str) -> Reply {
    if state
        .spn_429_remaining
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        let mut reply = Reply::with_body(
            429,
            "Too Many Requests",
            "text/plain",
            b"slow down".to_vec(),
        );
        reply.push_header("retry-after", "1".to_string());
        return reply;
    }
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Reply::with_body(
            400,
            "Bad Request",
            "text/plain",
            b"save target must be an absolute http(s) URL".to_vec(),
        );
    }
    let path = match crate::uri::Uri::parse_absolute(url) {
        Ok(u) => u.path.clone(),
        Err(_) => return Reply::status(400, "Bad Request"),
    };
    let (bytes, mimetype) = match state.routes.get(&path) {
        Some(RouteKind::Video {
            bytes, content_type, ..
        }) => (bytes.clone(), content_type.clone()),
        Some(RouteKind::Playlist { body }) => (body.clone(), "application/x-mpegURL".to_string()),
        // image routes demand credentials the archiver does not have
        Some(RouteKind::Image { .. }) => return Reply::status(502, "Bad Gateway"),
        None => return Reply::status(404, "Not Found"),
    };
    let ts = state.clock.lock().unwrap().tick();
    state
        .captures
        .lock()
        .unwrap()
        .insert((ts.clone(), url.to_string()), Capture { bytes, mimetype });

    let body = serde_json::json!({ "url": url, "timestamp": ts });
    let mut reply = Reply::with_body(
        200,
        "OK",
        "application/json",
        serde_json::to_vec(&body).unwrap(),
    );
    reply.push_header("content-location", format!("/web/{ts}/{url}"));
    reply
}

/// Replay twin: `<ts>[id_]/<original>`. Exact hits return the stored bytes;
/// a timestamp miss redirects to the nearest capture of the same URL.
fn replay_route(state: &State, spec_and_url: &str) -> Reply {
    let Some((spec, url)) = spec_and_url.split_once('/') else {
        return Reply::status(400, "Bad Request");
    };
    let (ts, raw) = match spec.strip_suffix("id_") {
        Some(ts) => (ts, true),
        None => (spec, false),
    };
    if parse_ts14(ts).is_none() {
        return Reply::status(400, "Bad Request");
    }

    let captures = state.captures.lock().unwrap();
    if let Some(capture) = captures.get(&(ts.to_string(), url.to_string())) {
        return Reply::with_body(200, "OK", &capture.mimetype, capture.bytes.clone());
    }
    // nearest other capture of the same URL, by timestamp distance
    let requested: i64 = ts.parse().unwrap_or(0);
    let nearest = captures
        .keys()
        .filter(|(_, original)| original == url)
        .min_by_key(|(capture_ts, _)| {
            let t: i64 = capture_ts.parse().unwrap_or(i64::MAX);
            (t - requested).abs()
        });
    match nearest {
        Some((capture_ts, _)) => {
            let modifier = if raw { "id_" } else { "" };
            let mut reply = Reply::status(302, "Found");
            reply.push_header("location", format!("/web/{capture_ts}{modifier}/{url}"));
            reply
        }
        None => Reply::status(404, "Not Found"),
    }
}

fn query_param<'q>(query: &'q str, name: &str) -> Option<&'q str> {
    query.split('&').find_map(|pair| {
        let (k, v) = pair.split_once('=')?;
        (k == name).then_some(v)
    })
}

fn strip_scheme(url: &str) -> &str {
    url.strip_prefix("https://")
        .or_else(|| url.strip_prefix("http://"))
        .unwrap_or(url)
}

/// CDX index twin. Supports `matchType=prefix|exact`, and resume-key
/// pagination when the scenario sets a page size: a truncated response ends
/// with a blank line followed by the resume key.
fn cdx_route(state: &State, query: &str) -> Reply {
    let Some(target) = query_param(query, "url") else {
        return Reply::with_body(400, "Bad Request", "text/plain", b"missing url".to_vec());
    };
    let target = percent_decode(target);
    let match_type = query_param(query, "matchType").unwrap_or("exact");
    let show_resume = query_param(query, "showResumeKey") == Some("true");
    let offset: usize = query_param(query, "resumeKey")
        .and_then(|k| k.parse().ok())
        .unwrap_or(0);

    let captures = state.captures.lock().unwrap();
    let mut lines: Vec<String> = state.cdx_preload.clone();
    for ((ts, url), capture) in captures.iter() {
        let surt = surt_key(url);
        let digest = short_hash(&String::from_utf8_lossy(&capture.bytes)).to_uppercase();
        lines.push(format!(
            "{surt} {ts} {url} {} 200 {digest} {}",
            capture.mimetype,
            capture.bytes.len()
        ));
    }

    let wanted = strip_scheme(&target);
    let matches: Vec<String> = lines
        .into_iter()
        .filter(|line| {
            let Some(original) = line.split_whitespace().nth(2) else {
                return false;
            };
            let original = strip_scheme(original);
            match match_type {
                "prefix" => original.starts_with(wanted),
                _ => original == wanted,
            }
        })
        .collect();

    let page = state.cdx_page_size.unwrap_or(usize::MAX);
    let end = matches.len().min(offset.saturating_add(page));
    let mut body = matches[offset.min(matches.len())..end].join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    if show_resume && end < matches.len() {
        body.push('\n');
        body.push_str(&end.to_string());
        body.push('\n');
    }
    Reply::with_body(200, "OK", "text/plain", body.into_bytes())
}

fn surt_key(url: &str) -> String {
    let rest = strip_scheme(url);
    let (host, path) = rest.split_once('/').unwrap_or((rest, ""));
    let host_key: Vec<&str> = host.split('.').rev().collect();
    format!("{})/{}", host_key.join(","), path)
}

fn percent_decode(input: &str) -> String {
    let bytes = input.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Ok(b) = u8::from_str_radix(&input[i + 1..i + 3], 16) {
                out.push(b);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::paper;

    #[test]
    fn image_decision_table_is_pinned() {
        use CookieClass::*;
        use ImageDecision::*;
        use Phase::*;
        // (cookie class, referer present, session phase) -> decision
        let table: &[(CookieClass, bool, Phase, ImageDecision)] = &[
            (None, true, Active, Unauthorized),
            (None, true, Closed, Unauthorized),
            (None, true, Expired, Unauthorized),
            (Unknown, true, Active, Unauthorized),
            (PartyLive, true, Active, Ok),
            (PartyLive, false, Active, NotFound),
            (PartyLive, true, Closed, NotFound),
            (PartyLive, true, Expired, EmptyClose),
            (PartyStale, true, Active, EmptyClose),
            (ThirdParty, true, Active, NotFound),
            (ThirdParty, true, Closed, NotFound),
            (ThirdParty, true, Expired, NotFound),
        ];
        for (class, referer, phase, expected) in table {
            assert_eq!(
                image_decision(*class, *referer, *phase),
                *expected,
                "({class:?}, referer={referer}, {phase:?})"
            );
        }
        // referer only matters for a live party in an active session
        for class in [None, Unknown, PartyStale, ThirdParty] {
            for phase in [Active, Closed, Expired] {
                assert_eq!(
                    image_decision(class, true, phase),
                    image_decision(class, false, phase)
                );
            }
        }
    }

    #[test]
    fn clock_ticks_monotonically_and_rejects_rewind() {
        let mut clock = Clock {
            current: parse_ts14(paper::CLOCK_START).unwrap(),
        };
        assert_eq!(clock.tick(), "20221208194342");
        assert_eq!(clock.tick(), "20221208194343");
        assert_eq!(clock.peek(), "20221208194344");
        assert!(clock.set("20221208194000").is_err());
        assert!(clock.set("20230101000000").is_ok());
        assert_eq!(clock.tick(), "20230101000000");
    }

    #[test]
    fn surt_keys_reverse_the_host() {
        assert_eq!(
            surt_key("https://video.twimg.com/dm_video/1/x.mp4"),
            "com,twimg,video)/dm_video/1/x.mp4"
        );
    }
}
