//! Differential probing: issue the same GET under header profiles that vary
//! only in authentication-relevant ways, then classify which factors gate
//! access from the outcome pattern.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{send_get, targets_local_endpoint, ClientLimits, EndpointMap, WireError};
use crate::uri::Uri;

pub const FULL_SESSION: &str = "FULL_SESSION";
pub const NO_COOKIE: &str = "NO_COOKIE";
pub const NO_REFERER: &str = "NO_REFERER";
pub const THIRD_PARTY: &str = "THIRD_PARTY";
pub const EXPIRED: &str = "EXPIRED";

/// Response headers worth carrying into reports.
const SELECTED_RESPONSE_HEADERS: &[&str] = &[
    "content-type",
    "content-length",
    "strict-transport-security",
    "content-security-policy",
    "location",
    "cache-control",
    "set-cookie",
];

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("matrix lacks a {NO_COOKIE} outcome; cannot classify")]
    InsufficientEvidence,
    #[error("invalid header profile: {0}")]
    InvalidProfile(String),
    #[error("profiles must be non-empty with unique names")]
    BadMatrixInput,
    #[error("expected an https URL, got {0}")]
    ExpectedHttps(String),
    #[error("bad URL: {0}")]
    BadUrl(String),
}

/// What the Cookie header of a profile represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CookieRole {
    None,
    SessionParty,
    ThirdParty,
    Expired,
}

/// One named request-header configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderProfile {
    pub name: String,
    pub headers: Vec<(String, String)>,
    pub cookie_role: CookieRole,
    pub has_referer: bool,
}

impl HeaderProfile {
    fn has_header(&self, name: &str) -> bool {
        self.headers.iter().any(|(k, _)| k.eq_ignore_ascii_case(name))
    }

    /// Enforce the structural invariants relating the annotations to the
    /// actual header list.
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.name.trim().is_empty() {
            return Err(ProbeError::InvalidProfile("empty profile name".to_string()));
        }
        let has_cookie = self.has_header("cookie");
        if (self.cookie_role == CookieRole::None) == has_cookie {
            return Err(ProbeError::InvalidProfile(format!(
                "{}: cookie_role {:?} disagrees with Cookie header presence ({has_cookie})",
                self.name, self.cookie_role
            )));
        }
        if self.has_referer != self.has_header("referer") {
            return Err(ProbeError::InvalidProfile(format!(
                "{}: has_referer={} disagrees with Referer header presence",
                self.name, self.has_referer
            )));
        }
        Ok(())
    }
}

/// Load header profiles from a JSON array, enforcing per-profile invariants.
pub fn load_profiles(json: &str) -> Result<Vec<HeaderProfile>, ProbeError> {
    let profiles: Vec<HeaderProfile> =
        serde_json::from_str(json).map_err(|e| ProbeError::InvalidProfile(e.to_string()))?;
    for profile in &profiles {
        profile.validate()?;
    }
    Ok(profiles)
}

/// The credentials the default matrix plugs into its Cookie and Referer
/// headers. The defaults match the bundled mock scenario; real targets need
/// operator-supplied values (especially the expired-session cookie, which
/// cannot be fabricated).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CredentialSet {
    pub session_cookie: String,
    pub third_party_cookie: String,
    pub expired_cookie: String,
    pub referer: String,
}

impl Default for CredentialSet {
    fn default() -> Self {
        CredentialSet {
            session_cookie: crate::mock::paper::SESSION_COOKIE.to_string(),
            third_party_cookie: crate::mock::paper::THIRD_PARTY_COOKIE.to_string(),
            expired_cookie: crate::mock::paper::EXPIRED_COOKIE.to_string(),
            referer: "https://twitter.com/".to_string(),
        }
    }
}

const BROWSER_USER_AGENT: &str = "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) \
     AppleWebKit/605.1.15 (KHTML, like Gecko) Version/15.3 Safari/605.1.15";
const BROWSER_ACCEPT: &str =
    "image/webp,image/png,image/svg+xml,image/*;q=0.8,video/*;q=0.8,*/*;q=0.5";

/// Build the five-probe matrix: a full browser-like session request, then
/// the same request with the cookie removed, the referer removed, a valid
/// third-party cookie substituted, and an expired-session cookie substituted.
/// Every profile keeps the headers that mark an interactive user.
pub fn build_matrix(credentials: &CredentialSet) -> Vec<HeaderProfile> {
    let browser = |extra: Vec<(&str, &str)>| -> Vec<(String, String)> {
        let mut headers = vec![
            ("User-Agent".to_string(), BROWSER_USER_AGENT.to_string()),
            ("Accept".to_string(), BROWSER_ACCEPT.to_string()),
            ("Accept-Language".to_string(), "en-us".to_string()),
        ];
        headers.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v.to_string())));
        headers
    };

    vec![
        HeaderProfile {
            name: FULL_SESSION.to_string(),
            headers: browser(vec![
                ("Cookie", credentials.session_cookie.as_str()),
                ("Referer", credentials.referer.as_str()),
            ]),
            cookie_role: CookieRole::SessionParty,
            has_referer: true,
        },
        HeaderProfile {
            name: NO_COOKIE.to_string(),
            headers: browser(vec![("Referer", credentials.referer.as_str())]),
            cookie_role: CookieRole::None,
            has_referer: true,
        },
        HeaderProfile {
            name: NO_REFERER.to_string(),
            headers: browser(vec![("Cookie", credentials.session_cookie.as_str())]),
            cookie_role: CookieRole::SessionParty,
            has_referer: false,
        },
        HeaderProfile {
            name: THIRD_PARTY.to_string(),
            headers: browser(vec![
                ("Cookie", credentials.third_party_cookie.as_str()),
                ("Referer", credentials.referer.as_str()),
            ]),
            cookie_role: CookieRole::ThirdParty,
            has_referer: true,
        },
        HeaderProfile {
            name: EXPIRED.to_string(),
            headers: browser(vec![
                ("Cookie", credentials.expired_cookie.as_str()),
                ("Referer", credentials.referer.as_str()),
            ]),
            cookie_role: CookieRole::Expired,
            has_referer: true,
        },
    ]
}

pub fn build_default_matrix() -> Vec<HeaderProfile> {
    build_matrix(&CredentialSet::default())
}

/// What one probe observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeOutcome {
    Status {
        code: u16,
        body_length: u64,
        response_headers: Vec<(String, String)>,
        elapsed_ms: u64,
    },
    /// Connection accepted, then closed before any status line arrived.
    EmptyReply { elapsed_ms: u64 },
    Timeout { elapsed_ms: u64 },
    TransportError { detail: String, elapsed_ms: u64 },
}

impl ProbeOutcome {
    pub fn status_code(&self) -> Option<u16> {
        match self {
            ProbeOutcome::Status { code, .. } => Some(*code),
            _ => None,
        }
    }

    pub fn status_class(&self) -> Option<u16> {
        self.status_code().map(|c| c / 100)
    }

    pub fn body_length(&self) -> Option<u64> {
        match self {
            ProbeOutcome::Status { body_length, .. } => Some(*body_length),
            _ => None,
        }
    }

    /// Compact form used in evidence listings.
    pub fn summary(&self) -> String {
        match self {
            ProbeOutcome::Status {
                code, body_length, ..
            } => format!("STATUS({code}) body_length={body_length}"),
            ProbeOutcome::EmptyReply { .. } => "EMPTY_REPLY".to_string(),
            ProbeOutcome::Timeout { .. } => "TIMEOUT".to_string(),
            ProbeOutcome::TransportError { detail, .. } => format!("TRANSPORT_ERROR({detail})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub limits: ClientLimits,
    pub endpoint_map: EndpointMap,
    /// Pause between probes against non-local targets.
    pub inter_probe_delay: Duration,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            limits: ClientLimits::default(),
            endpoint_map: EndpointMap::default(),
            inter_probe_delay: Duration::from_millis(250),
        }
    }
}

/// Issue exactly one GET carrying exactly the profile's headers. Failures
/// are captured as outcomes, never raised.
pub fn probe_once(url: &str, profile: &HeaderProfile, config: &ProbeConfig) -> ProbeOutcome {
    let start = Instant::now();
    let elapsed_ms = |start: Instant| start.elapsed().as_millis() as u64;
    match send_get(url, &profile.headers, &config.limits, &config.endpoint_map) {
        Ok(response) => {
            let response_headers = response
                .headers
                .iter()
                .filter(|(k, _)| {
                    SELECTED_RESPONSE_HEADERS
                        .iter()
                        .any(|sel| k.eq_ignore_ascii_case(sel))
                })
                .cloned()
                .collect();
            ProbeOutcome::Status {
                code: response.status,
                body_length: response.body.len() as u64,
                response_headers,
                elapsed_ms: elapsed_ms(start),
            }
        }
        Err(WireError::EmptyReply) => ProbeOutcome::EmptyReply {
            elapsed_ms: elapsed_ms(start),
        },
        Err(WireError::Timeout) => ProbeOutcome::Timeout {
            elapsed_ms: elapsed_ms(start),
        },
        Err(WireError::Transport(detail)) => ProbeOutcome::TransportError {
            detail,
            elapsed_ms: elapsed_ms(start),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub profile: String,
    pub outcome: ProbeOutcome,
}

/// Outcomes keyed by profile name, kept in the order probes finished.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeMatrix {
    pub entries: Vec<MatrixEntry>,
}

impl OutcomeMatrix {
    pub fn from_entries(entries: Vec<(String, ProbeOutcome)>) -> OutcomeMatrix {
        OutcomeMatrix {
            entries: entries
                .into_iter()
                .map(|(profile, outcome)| MatrixEntry { profile, outcome })
                .collect(),
        }
    }

    pub fn get(&self, profile: &str) -> Option<&ProbeOutcome> {
        self.entries
            .iter()
            .find(|e| e.profile == profile)
            .map(|e| &e.outcome)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Run every profile against `url`. Probes are independent: no cookie jar,
/// no retries. Local targets (loopback or endpoint-mapped) are probed
/// concurrently; anything else is probed sequentially with the configured
/// delay between requests.
pub fn run_matrix(
    url: &str,
    profiles: &[HeaderProfile],
    config: &ProbeConfig,
) -> Result<OutcomeMatrix, ProbeError> {
    if profiles.is_empty() {
        return Err(ProbeError::BadMatrixInput);
    }
    let mut names = std::collections::HashSet::new();
    for profile in profiles {
        if !names.insert(&profile.name) {
            return Err(ProbeError::BadMatrixInput);
        }
    }

    if targets_local_endpoint(url, &config.endpoint_map) {
        let results: Vec<(usize, ProbeOutcome)> = std::thread::scope(|scope| {
            let handles: Vec<_> = profiles
                .iter()
                .enumerate()
                .map(|(i, profile)| scope.spawn(move || (i, probe_once(url, profile, config))))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        Ok(OutcomeMatrix::from_entries(
            results
                .into_iter()
                .map(|(i, outcome)| (profiles[i].name.clone(), outcome))
                .collect(),
        ))
    } else {
        let mut entries = Vec::with_capacity(profiles.len());
        for (i, profile) in profiles.iter().enumerate() {
            if i > 0 {
                std::thread::sleep(config.inter_probe_delay);
            }
            entries.push((profile.name.clone(), probe_once(url, profile, config)));
        }
        Ok(OutcomeMatrix::from_entries(entries))
    }
}

/// Tri-state verdict: a field stays indeterminate until its witness
/// profiles produced usable evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Indeterminate,
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }

    pub fn is_determined(self) -> bool {
        self != Verdict::Indeterminate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub profile: String,
    pub outcome: String,
}

/// Which authentication factors gate access, with the supporting outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectionProfile {
    pub unauthenticated_access: Verdict,
    pub cookie_required: Verdict,
    pub referer_required: Verdict,
    pub party_bound: Verdict,
    pub session_liveness_bound: Verdict,
    pub evidence: BTreeMap<String, Vec<Evidence>>,
}

fn witness(matrix: &OutcomeMatrix, profile: &str) -> Vec<Evidence> {
    matrix
        .get(profile)
        .map(|outcome| {
            vec![Evidence {
                profile: profile.to_string(),
                outcome: outcome.summary(),
            }]
        })
        .unwrap_or_default()
}

/// Deterministic classification of an outcome matrix.
///
/// Rules (witnesses in parentheses):
/// - `unauthenticated_access` (NO_COOKIE): yes iff 2xx with a non-empty body.
/// - `cookie_required` (NO_COOKIE, FULL_SESSION): yes iff NO_COOKIE got
///   401/403 while FULL_SESSION got 2xx; no iff NO_COOKIE got 2xx.
/// - `referer_required` (NO_REFERER, FULL_SESSION): yes iff their status
///   classes differ.
/// - `party_bound` (THIRD_PARTY, FULL_SESSION): yes iff THIRD_PARTY got 4xx
///   while FULL_SESSION got 2xx; no iff THIRD_PARTY got 2xx.
/// - `session_liveness_bound` (EXPIRED): yes iff the probe ended in an empty
///   reply or a transport error; no iff it got any HTTP status.
///
/// A field whose witnesses are absent or produced no status evidence is
/// reported indeterminate rather than false.
pub fn classify(matrix: &OutcomeMatrix) -> Result<ProtectionProfile, ProbeError> {
    let no_cookie = matrix.get(NO_COOKIE).ok_or(ProbeError::InsufficientEvidence)?;
    let full = matrix.get(FULL_SESSION);
    let no_referer = matrix.get(NO_REFERER);
    let third = matrix.get(THIRD_PARTY);
    let expired = matrix.get(EXPIRED);

    let mut evidence: BTreeMap<String, Vec<Evidence>> = BTreeMap::new();
    let mut record = |field: &str, profiles: &[&str]| {
        let mut items = Vec::new();
        for profile in profiles {
            items.extend(witness(matrix, profile));
        }
        evidence.insert(field.to_string(), items);
    };

    let unauthenticated_access = match no_cookie {
        ProbeOutcome::Status {
            code, body_length, ..
        } if (200..300).contains(code) && *body_length > 0 => Verdict::Yes,
        _ => Verdict::No,
    };
    record("unauthenticated_access", &[NO_COOKIE]);

    let cookie_required = match (no_cookie.status_code(), full.and_then(|o| o.status_class())) {
        (Some(code), _) if (200..300).contains(&code) => {
            record("cookie_required", &[NO_COOKIE]);
            Verdict::No
        }
        (Some(401) | Some(403), Some(2)) => {
            record("cookie_required", &[NO_COOKIE, FULL_SESSION]);
            Verdict::Yes
        }
        _ => Verdict::Indeterminate,
    };

    let referer_required = match (
        no_referer.and_then(|o| o.status_class()),
        full.and_then(|o| o.status_class()),
    ) {
        (Some(nr), Some(fs)) => {
            record("referer_required", &[NO_REFERER, FULL_SESSION]);
            if nr != fs {
                Verdict::Yes
            } else {
                Verdict::No
            }
        }
        _ => Verdict::Indeterminate,
    };

    let party_bound = match (
        third.and_then(|o| o.status_class()),
        full.and_then(|o| o.status_class()),
    ) {
        (Some(2), _) => {
            record("party_bound", &[THIRD_PARTY]);
            Verdict::No
        }
        (Some(4), Some(2)) => {
            record("party_bound", &[THIRD_PARTY, FULL_SESSION]);
            Verdict::Yes
        }
        _ => Verdict::Indeterminate,
    };

    let session_liveness_bound = match expired {
        Some(ProbeOutcome::EmptyReply { .. }) | Some(ProbeOutcome::TransportError { .. }) => {
            record("session_liveness_bound", &[EXPIRED]);
            Verdict::Yes
        }
        Some(ProbeOutcome::Status { .. }) => {
            record("session_liveness_bound", &[EXPIRED]);
            Verdict::No
        }
        _ => Verdict::Indeterminate,
    };

    Ok(ProtectionProfile {
        unauthenticated_access,
        cookie_required,
        referer_required,
        party_bound,
        session_liveness_bound,
        evidence,
    })
}

/// Does the https URL also answer over plain http?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainHttpResult {
    /// True iff the http-rewritten URL returned a 2xx status.
    pub served: bool,
    pub lengths_match: bool,
    pub http_outcome: ProbeOutcome,
    pub https_outcome: ProbeOutcome,
}

/// Probe `url` and its http-rewritten twin with default headers only.
pub fn check_plain_http(url: &str, config: &ProbeConfig) -> Result<PlainHttpResult, ProbeError> {
    let parsed = Uri::parse_absolute(url).map_err(|e| ProbeError::BadUrl(e.to_string()))?;
    if parsed.scheme.as_deref() != Some("https") {
        return Err(ProbeError::ExpectedHttps(url.to_string()));
    }
    let bare = HeaderProfile {
        name: "DEFAULT".to_string(),
        headers: Vec::new(),
        cookie_role: CookieRole::None,
        has_referer: false,
    };
    let https_outcome = probe_once(url, &bare, config);
    let http_url = parsed.with_scheme("http").to_uri_string();
    if !targets_local_endpoint(url, &config.endpoint_map) {
        std::thread::sleep(config.inter_probe_delay);
    }
    let http_outcome = probe_once(&http_url, &bare, config);

    let served = matches!(http_outcome.status_class(), Some(2));
    let lengths_match = match (http_outcome.body_length(), https_outcome.body_length()) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    Ok(PlainHttpResult {
        served,
        lengths_match,
        http_outcome,
        https_outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::{paper, MockServer, Phase};

    fn status(code: u16, body_length: u64) -> ProbeOutcome {
        ProbeOutcome::Status {
            code,
            body_length,
            response_headers: Vec::new(),
            elapsed_ms: 1,
        }
    }

    fn image_matrix() -> OutcomeMatrix {
        OutcomeMatrix::from_entries(vec![
            (FULL_SESSION.to_string(), status(200, 22425)),
            (NO_COOKIE.to_string(), status(401, 0)),
            (NO_REFERER.to_string(), status(404, 0)),
            (THIRD_PARTY.to_string(), status(404, 0)),
            (EXPIRED.to_string(), ProbeOutcome::EmptyReply { elapsed_ms: 1 }),
        ])
    }

    #[test]
    fn default_matrix_mirrors_the_five_probes() {
        let profiles = build_default_matrix();
        assert_eq!(profiles.len(), 5);
        let names: std::collections::HashSet<&str> =
            profiles.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names.len(), 5);

        for profile in &profiles {
            profile.validate().unwrap();
            assert!(profile.has_header("user-agent"));
            assert!(profile.has_header("accept"));
            assert!(profile.has_header("accept-language"));
        }

        let no_cookie = profiles.iter().find(|p| p.name == NO_COOKIE).unwrap();
        assert_eq!(no_cookie.cookie_role, CookieRole::None);
        assert!(no_cookie.has_referer);
        assert!(!no_cookie.has_header("cookie"));

        let no_referer = profiles.iter().find(|p| p.name == NO_REFERER).unwrap();
        assert_eq!(no_referer.cookie_role, CookieRole::SessionParty);
        assert!(!no_referer.has_referer);
        assert!(no_referer.has_header("cookie"));
    }

    #[test]
    fn profile_invariants_are_enforced() {
        let mut profile = build_default_matrix().remove(0);
        profile.cookie_role = CookieRole::None; // but a Cookie header is present
        assert!(profile.validate().is_err());

        let mut profile = build_default_matrix().remove(1);
        profile.has_referer = false; // but a Referer header is present
        assert!(profile.validate().is_err());

        let json = serde_json::to_string(&build_default_matrix()).unwrap();
        assert_eq!(load_profiles(&json).unwrap().len(), 5);
    }

    #[test]
    fn classifies_the_image_matrix() {
        let profile = classify(&image_matrix()).unwrap();
        assert_eq!(profile.unauthenticated_access, Verdict::No);
        assert_eq!(profile.cookie_required, Verdict::Yes);
        assert_eq!(profile.referer_required, Verdict::Yes);
        assert_eq!(profile.party_bound, Verdict::Yes);
        assert_eq!(profile.session_liveness_bound, Verdict::Yes);
        for (field, items) in &profile.evidence {
            assert!(!items.is_empty(), "no evidence for {field}");
        }
    }

    #[test]
    fn classifies_the_open_video_matrix() {
        let matrix = OutcomeMatrix::from_entries(
            [FULL_SESSION, NO_COOKIE, NO_REFERER, THIRD_PARTY, EXPIRED]
                .iter()
                .map(|name| (name.to_string(), status(200, 37919)))
                .collect(),
        );
        let profile = classify(&matrix).unwrap();
        assert_eq!(profile.unauthenticated_access, Verdict::Yes);
        assert_eq!(profile.cookie_required, Verdict::No);
        assert_eq!(profile.referer_required, Verdict::No);
        assert_eq!(profile.party_bound, Verdict::No);
        assert_eq!(profile.session_liveness_bound, Verdict::No);
    }

    #[test]
    fn all_timeouts_leave_everything_indeterminate_except_unauthenticated() {
        let matrix = OutcomeMatrix::from_entries(
            [FULL_SESSION, NO_COOKIE, NO_REFERER, THIRD_PARTY, EXPIRED]
                .iter()
                .map(|name| (name.to_string(), ProbeOutcome::Timeout { elapsed_ms: 10_000 }))
                .collect(),
        );
        let profile = classify(&matrix).unwrap();
        assert_eq!(profile.unauthenticated_access, Verdict::No);
        assert_eq!(profile.cookie_required, Verdict::Indeterminate);
        assert_eq!(profile.referer_required, Verdict::Indeterminate);
        assert_eq!(profile.party_bound, Verdict::Indeterminate);
        assert_eq!(profile.session_liveness_bound, Verdict::Indeterminate);
    }

    #[test]
    fn missing_no_cookie_witness_is_insufficient_evidence() {
        let matrix =
            OutcomeMatrix::from_entries(vec![(FULL_SESSION.to_string(), status(200, 10))]);
        assert!(matches!(
            classify(&matrix),
            Err(ProbeError::InsufficientEvidence)
        ));
    }

    #[test]
    fn classifier_is_deterministic_and_order_independent() {
        let matrix = image_matrix();
        let mut reversed = matrix.entries.clone();
        reversed.reverse();
        let reversed = OutcomeMatrix { entries: reversed };
        assert_eq!(classify(&matrix).unwrap(), classify(&reversed).unwrap());
    }

    #[test]
    fn adding_outcomes_only_resolves_indeterminates() {
        // start with only the required witness
        let partial = OutcomeMatrix::from_entries(vec![(NO_COOKIE.to_string(), status(401, 0))]);
        let before = classify(&partial).unwrap();
        assert_eq!(before.unauthenticated_access, Verdict::No);
        assert_eq!(before.cookie_required, Verdict::Indeterminate);

        let after = classify(&image_matrix()).unwrap();
        // determined verdicts never flip to the opposite determined verdict
        for (a, b) in [
            (before.unauthenticated_access, after.unauthenticated_access),
            (before.cookie_required, after.cookie_required),
            (before.referer_required, after.referer_required),
            (before.party_bound, after.party_bound),
            (before.session_liveness_bound, after.session_liveness_bound),
        ] {
            if a.is_determined() {
                assert_eq!(a, b);
            }
        }
    }

    // -- probes against the behavior twin --

    fn mock_config(server: &MockServer) -> ProbeConfig {
        ProbeConfig {
            endpoint_map: server.endpoint_map(),
            ..ProbeConfig::default()
        }
    }

    fn image_url() -> String {
        format!("https://ton.twitter.com{}", paper::IMAGE_PATH)
    }

    #[test]
    fn matrix_against_mock_image_reproduces_the_paper_outcomes() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_config(&server);
        let matrix = run_matrix(&image_url(), &build_default_matrix(), &config).unwrap();

        assert_eq!(matrix.len(), 5);
        assert_eq!(matrix.get(FULL_SESSION).unwrap().status_code(), Some(200));
        assert_eq!(
            matrix.get(FULL_SESSION).unwrap().body_length(),
            Some(paper::IMAGE_LENGTH as u64)
        );
        assert_eq!(matrix.get(NO_COOKIE).unwrap().status_code(), Some(401));
        assert_eq!(matrix.get(NO_COOKIE).unwrap().body_length(), Some(0));
        assert_eq!(matrix.get(NO_REFERER).unwrap().status_code(), Some(404));
        assert_eq!(matrix.get(THIRD_PARTY).unwrap().status_code(), Some(404));
        assert!(matches!(
            matrix.get(EXPIRED).unwrap(),
            ProbeOutcome::EmptyReply { .. }
        ));

        let profile = classify(&matrix).unwrap();
        assert_eq!(profile.unauthenticated_access, Verdict::No);
        assert_eq!(profile.cookie_required, Verdict::Yes);
        assert_eq!(profile.referer_required, Verdict::Yes);
        assert_eq!(profile.party_bound, Verdict::Yes);
        assert_eq!(profile.session_liveness_bound, Verdict::Yes);
    }

    #[test]
    fn matrix_against_mock_video_is_all_200_with_equal_lengths() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_config(&server);
        let (path, length) = paper::VIDEO_PARTS[1];
        let url = format!("https://video.twimg.com{path}");
        let matrix = run_matrix(&url, &build_default_matrix(), &config).unwrap();

        for entry in &matrix.entries {
            assert_eq!(entry.outcome.status_code(), Some(200), "{}", entry.profile);
            assert_eq!(entry.outcome.body_length(), Some(length as u64));
        }
        let profile = classify(&matrix).unwrap();
        assert_eq!(profile.unauthenticated_access, Verdict::Yes);
        assert_eq!(profile.cookie_required, Verdict::No);
    }

    #[test]
    fn expired_session_phase_turns_full_session_into_empty_reply() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_config(&server);
        server
            .set_session_phase(paper::SESSION_ID, Phase::Closed)
            .unwrap();
        server
            .set_session_phase(paper::SESSION_ID, Phase::Expired)
            .unwrap();
        let full = build_default_matrix().remove(0);
        let outcome = probe_once(&image_url(), &full, &config);
        assert!(matches!(outcome, ProbeOutcome::EmptyReply { .. }));
    }

    #[test]
    fn trace_shows_exactly_the_profile_headers_plus_host() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_config(&server);
        let profiles = build_default_matrix();
        run_matrix(&image_url(), &profiles, &config).unwrap();

        let trace = server.trace();
        assert_eq!(trace.len(), profiles.len());
        for entry in &trace {
            let profile = profiles
                .iter()
                .find(|p| {
                    // match trace entries to profiles by their header sets
                    let mut sent = entry.headers.clone();
                    sent.retain(|(k, _)| !k.eq_ignore_ascii_case("host"));
                    sent == p.headers
                })
                .unwrap_or_else(|| panic!("unexpected header set in trace: {:?}", entry.headers));
            // beyond the profile's own headers only Host may appear
            assert_eq!(entry.headers.len(), profile.headers.len() + 1);
            assert!(entry.headers[0].0.eq_ignore_ascii_case("host"));
        }
    }

    #[test]
    fn plain_http_check_on_video_and_image_routes() {
        let server = MockServer::serve_paper_scenario().unwrap();
        let config = mock_config(&server);

        let (segment_path, segment_length) = paper::VIDEO_PARTS[1];
        let video = check_plain_http(
            &format!("https://video.twimg.com{segment_path}"),
            &config,
        )
        .unwrap();
        assert!(video.served);
        assert!(video.lengths_match);
        assert_eq!(video.http_outcome.body_length(), Some(segment_length as u64));
        assert_eq!(video.https_outcome.body_length(), Some(segment_length as u64));

        let image = check_plain_http(&image_url(), &config).unwrap();
        assert!(!image.served, "image route is https-only");

        assert!(matches!(
            check_plain_http("http://video.twimg.com/x", &config),
            Err(ProbeError::ExpectedHttps(_))
        ));
    }
}
