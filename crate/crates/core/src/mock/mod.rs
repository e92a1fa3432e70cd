//! Offline behavior twin of the servers the audit workflows talk to.
//!
//! One process hosts two plain-HTTP listeners. The "https-role" listener
//! stands in for the TLS hosts (image host, video host, web archive) and the
//! "http-role" listener stands in for the same hosts reached over plain
//! http. Clients are pointed at the role endpoints through an
//! [`crate::http::EndpointMap`]; no real TLS is involved, so scheme-dependent
//! behavior (plain-http availability, CSP scheme matching) keys off the role
//! label. That trade is what keeps the entire test bed hermetic.
//!
//! Routes are matched by path only; the logical hostname in a request's
//! `Host` header is recorded in the trace but does not affect routing.

mod server;

pub use server::{MockServer, TraceEntry};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("failed to bind mock listener: {0}")]
    BindFailed(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("illegal session phase transition: {0}")]
    IllegalTransition(String),
}

/// Lifecycle of a DM chat session. `Expired` is only reachable from
/// `Closed`: a session has to end before its credentials can go stale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Active,
    Closed,
    Expired,
}

impl Phase {
    pub fn parse(text: &str) -> Option<Phase> {
        match text.trim() {
            "ACTIVE" => Some(Phase::Active),
            "CLOSED" => Some(Phase::Closed),
            "EXPIRED" => Some(Phase::Expired),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Active => "ACTIVE",
            Phase::Closed => "CLOSED",
            Phase::Expired => "EXPIRED",
        }
    }

    /// Runtime transitions enforce the lifecycle; seeding a scenario may
    /// start in any phase.
    pub fn can_transition_to(self, next: Phase) -> bool {
        match (self, next) {
            (a, b) if a == b => true,
            (_, Phase::Active) => true,
            (_, Phase::Closed) => true,
            (Phase::Closed, Phase::Expired) => true,
            (_, Phase::Expired) => false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Account {
    pub id: String,
    /// Value of the `auth_token` cookie pair identifying this account.
    pub cookie_token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSeed {
    pub session_id: String,
    pub parties: Vec<String>,
    pub phase: Phase,
    /// Tokens that used to grant party access before the session ended.
    /// Presenting one gets the connection dropped without a response.
    #[serde(default)]
    pub stale_tokens: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRoute {
    pub path: String,
    pub length: usize,
    pub session: String,
}

fn default_content_type() -> String {
    "video/mp4".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRoute {
    pub path: String,
    pub length: usize,
    #[serde(default)]
    pub plain_http_allowed: bool,
    #[serde(default = "default_content_type")]
    pub content_type: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaylistRoute {
    pub path: String,
    pub body: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub accounts: Vec<Account>,
    pub sessions: Vec<SessionSeed>,
    #[serde(default)]
    pub image_routes: Vec<ImageRoute>,
    #[serde(default)]
    pub video_routes: Vec<VideoRoute>,
    #[serde(default)]
    pub playlist_routes: Vec<PlaylistRoute>,
    /// Raw CDX index lines served before any accumulated captures.
    #[serde(default)]
    pub cdx_preload: String,
    /// Lines per CDX response page; `None` disables pagination.
    #[serde(default)]
    pub cdx_page_size: Option<usize>,
    #[serde(default)]
    pub sts_header_value: Option<String>,
    #[serde(default)]
    pub csp_header_value: Option<String>,
    /// 14-digit start of the mock clock driving capture timestamps.
    pub clock_start: String,
    /// The next N save requests are answered with 429 (fault injection).
    #[serde(default)]
    pub spn_rate_limit_burst: u32,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), MockError> {
        let mut tokens = std::collections::HashSet::new();
        for account in &self.accounts {
            if !tokens.insert(&account.cookie_token) {
                return Err(MockError::InvalidScenario(format!(
                    "duplicate cookie token {:?}",
                    account.cookie_token
                )));
            }
        }
        for session in &self.sessions {
            for token in &session.stale_tokens {
                if !tokens.insert(token) {
                    return Err(MockError::InvalidScenario(format!(
                        "stale token {token:?} collides with a live token"
                    )));
                }
            }
            for party in &session.parties {
                if !self.accounts.iter().any(|a| &a.id == party) {
                    return Err(MockError::InvalidScenario(format!(
                        "session {:?} references unknown account {party:?}",
                        session.session_id
                    )));
                }
            }
        }
        for image in &self.image_routes {
            if !self.sessions.iter().any(|s| s.session_id == image.session) {
                return Err(MockError::InvalidScenario(format!(
                    "image route {:?} references unknown session {:?}",
                    image.path, image.session
                )));
            }
        }
        if self.clock_start.len() != 14 || !self.clock_start.bytes().all(|b| b.is_ascii_digit()) {
            return Err(MockError::InvalidScenario(format!(
                "clock_start {:?} is not a 14-digit timestamp",
                self.clock_start
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<ScenarioConfig, MockError> {
        let config: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| MockError::InvalidScenario(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// Deterministic filler bytes: a SHA-256 counter stream keyed by `seed`.
/// The same (seed, length) always yields the same bytes, which is what makes
/// scenario responses reproducible across runs.
pub fn filler_bytes(seed: &str, length: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(length);
    let mut counter = 0u64;
    while out.len() < length {
        let mut hasher = Sha256::new();
        hasher.update(seed.as_bytes());
        hasher.update(counter.to_be_bytes());
        out.extend_from_slice(&hasher.finalize());
        counter += 1;
    }
    out.truncate(length);
    out
}

/// The scenario constants for the demo image/video exchange.
pub mod paper {
    pub const MEDIA_ID: &str = "1600877027330064385";
    pub const IMAGE_PATH: &str =
        "/i/ton/data/dm/1600870219324465156/1600870190459256832/KM0EBzij.jpg:small";
    pub const IMAGE_LENGTH: usize = 22425;
    pub const PLAYLIST_PATH: &str =
        "/dm_video/1600877027330064385/pl/320x180/Vn4h391lbQ0jfr1D.m3u8";
    pub const PLAYLIST_BODY: &str = include_str!("../../fixtures/dm_playlist.m3u8");
    pub const CDX_FIXTURE: &str = include_str!("../../fixtures/appendix4.cdx");
    pub const STS_VALUE: &str = "max-age=631138519";
    pub const CSP_VALUE: &str = "connect-src https://*.twimg.com";
    pub const CLOCK_START: &str = "20221208194342";

    pub const SESSION_ID: &str = "dm-session-1";
    pub const SESSION_COOKIE: &str = "dnt=1; auth_token=wk-live-token; lang=en";
    pub const THIRD_PARTY_COOKIE: &str = "dnt=1; auth_token=kitten-token; lang=en";
    pub const EXPIRED_COOKIE: &str = "dnt=1; auth_token=wk-stale-token; lang=en";

    /// `(path, length)` of the init section followed by the eleven segments.
    pub const VIDEO_PARTS: &[(&str, usize)] = &[
        ("/dm_video/1600877027330064385/vid/0/0/320x180/jZY0JeLERXPOC4qe.mp4", 1130),
        ("/dm_video/1600877027330064385/vid/0/3000/320x180/1lmZtezFzjRRYziE.m4s", 37919),
        ("/dm_video/1600877027330064385/vid/3000/6000/320x180/yxhsDmzuJG9ZqtYb.m4s", 35423),
        ("/dm_video/1600877027330064385/vid/6000/9000/320x180/KGtEzr2KaRfP4Y6H.m4s", 36960),
        ("/dm_video/1600877027330064385/vid/9000/12000/320x180/V1cXuDCxjXKk_JT9.m4s", 43395),
        ("/dm_video/1600877027330064385/vid/12000/15000/320x180/CtUTfpf83EHjEFjd.m4s", 47333),
        ("/dm_video/1600877027330064385/vid/15000/18000/320x180/lGncur15MHC6fvKg.m4s", 41711),
        ("/dm_video/1600877027330064385/vid/18000/21000/320x180/2U51PtuljYpAxxRr.m4s", 38884),
        ("/dm_video/1600877027330064385/vid/21000/24000/320x180/gs-8pNvThX_1kjx0.m4s", 36449),
        ("/dm_video/1600877027330064385/vid/24000/27000/320x180/f1UDV6NW3odTL-ux.m4s", 32279),
        ("/dm_video/1600877027330064385/vid/27000/30000/320x180/9hFdPsP3QYV8c130.m4s", 32413),
        ("/dm_video/1600877027330064385/vid/30000/32100/320x180/yFOkibojJs9PWhkX.m4s", 22617),
    ];

    pub const TOTAL_VIDEO_BYTES: u64 = 406513;
}

/// The default scenario: one protected image shared in an active DM session,
/// one unprotected fragmented video, a stale credential for the
/// expired-session probe, and a preloaded CDX index.
pub fn paper_scenario() -> ScenarioConfig {
    let video_routes = paper::VIDEO_PARTS
        .iter()
        .map(|(path, length)| VideoRoute {
            path: path.to_string(),
            length: *length,
            plain_http_allowed: true,
            content_type: "video/mp4".to_string(),
        })
        .collect();

    let config = ScenarioConfig {
        accounts: vec![
            Account {
                id: "whitekitty".to_string(),
                cookie_token: "wk-live-token".to_string(),
            },
            Account {
                id: "bkitty".to_string(),
                cookie_token: "bk-live-token".to_string(),
            },
            Account {
                id: "kitten".to_string(),
                cookie_token: "kitten-token".to_string(),
            },
        ],
        sessions: vec![SessionSeed {
            session_id: paper::SESSION_ID.to_string(),
            parties: vec!["whitekitty".to_string(), "bkitty".to_string()],
            phase: Phase::Active,
            stale_tokens: vec!["wk-stale-token".to_string()],
        }],
        image_routes: vec![ImageRoute {
            path: paper::IMAGE_PATH.to_string(),
            length: paper::IMAGE_LENGTH,
            session: paper::SESSION_ID.to_string(),
        }],
        video_routes,
        playlist_routes: vec![PlaylistRoute {
            path: paper::PLAYLIST_PATH.to_string(),
            body: paper::PLAYLIST_BODY.to_string(),
        }],
        cdx_preload: paper::CDX_FIXTURE.to_string(),
        cdx_page_size: None,
        sts_header_value: Some(paper::STS_VALUE.to_string()),
        csp_header_value: Some(paper::CSP_VALUE.to_string()),
        clock_start: paper::CLOCK_START.to_string(),
        spn_rate_limit_burst: 0,
    };
    debug_assert!(config.validate().is_ok());
    config
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scenario_is_valid_and_sums_to_the_final_file_size() {
        let config = paper_scenario();
        config.validate().unwrap();
        let total: usize = paper::VIDEO_PARTS.iter().map(|(_, n)| *n).sum();
        assert_eq!(total as u64, paper::TOTAL_VIDEO_BYTES);
        assert_eq!(paper::PLAYLIST_BODY.len(), 1177);
    }

    #[test]
    fn filler_bytes_are_deterministic_and_seed_sensitive() {
        assert_eq!(filler_bytes("a", 100), filler_bytes("a", 100));
        assert_ne!(filler_bytes("a", 100), filler_bytes("b", 100));
        assert_eq!(filler_bytes("a", 0).len(), 0);
        assert_eq!(filler_bytes("a", 22425).len(), 22425);
    }

    #[test]
    fn phase_transitions_enforce_expired_only_from_closed() {
        assert!(Phase::Active.can_transition_to(Phase::Closed));
        assert!(Phase::Closed.can_transition_to(Phase::Expired));
        assert!(!Phase::Active.can_transition_to(Phase::Expired));
        assert!(Phase::Expired.can_transition_to(Phase::Active));
    }

    #[test]
    fn scenario_validation_catches_dangling_references() {
        let mut config = paper_scenario();
        config.image_routes[0].session = "nope".to_string();
        assert!(config.validate().is_err());

        let mut config = paper_scenario();
        config.accounts[1].cookie_token = config.accounts[0].cookie_token.clone();
        assert!(config.validate().is_err());

        let mut config = paper_scenario();
        config.clock_start = "202212".to_string();
        assert!(config.validate().is_err());
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let config = paper_scenario();
        let json = serde_json::to_string(&config).unwrap();
        let back = ScenarioConfig::from_json(&json).unwrap();
        assert_eq!(back.image_routes[0].length, paper::IMAGE_LENGTH);
        assert_eq!(back.video_routes.len(), 12);
    }
}
