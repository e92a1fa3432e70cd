//! Transport-security posture: Strict-Transport-Security parsing, a local
//! HSTS-preload snapshot lookup, CSP `connect-src` matching, and the overall
//! https-enforcement verdict.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::PlainHttpResult;
use crate::uri::{default_port, Uri};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StsError {
    #[error("malformed Strict-Transport-Security value: {0}")]
    MalformedSts(String),
}

/// A parsed Strict-Transport-Security header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StsPolicy {
    pub max_age: u64,
    pub include_subdomains: bool,
    pub preload_token: bool,
    pub raw: String,
}

impl StsPolicy {
    /// `max-age=0` tells clients to forget the policy.
    pub fn is_removal(&self) -> bool {
        self.max_age == 0
    }
}

/// Parse an STS header value. Directive names are case-insensitive, unknown
/// directives are ignored, and a missing or non-numeric `max-age` is an
/// error.
pub fn parse_sts(header_value: &str) -> Result<StsPolicy, StsError> {
    let mut max_age = None;
    let mut include_subdomains = false;
    let mut preload_token = false;

    for directive in header_value.split(';') {
        let directive = directive.trim();
        if directive.is_empty() {
            continue;
        }
        let (name, value) = match directive.split_once('=') {
            Some((name, value)) => (name.trim(), Some(value.trim())),
            None => (directive, None),
        };
        if name.eq_ignore_ascii_case("max-age") {
            let value = value
                .ok_or_else(|| StsError::MalformedSts("max-age without a value".to_string()))?;
            let value = value.trim_matches('"');
            let seconds: u64 = value.parse().map_err(|_| {
                StsError::MalformedSts(format!("non-numeric max-age {value:?}"))
            })?;
            // first occurrence wins; later duplicates are ignored
            max_age.get_or_insert(seconds);
        } else if name.eq_ignore_ascii_case("includeSubDomains") {
            include_subdomains = true;
        } else if name.eq_ignore_ascii_case("preload") {
            preload_token = true;
        }
    }

    Ok(StsPolicy {
        max_age: max_age
            .ok_or_else(|| StsError::MalformedSts("max-age directive missing".to_string()))?,
        include_subdomains,
        preload_token,
        raw: header_value.to_string(),
    })
}

/// A locally supplied snapshot of the HSTS preload list: this tool never
/// fetches the live list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreloadSnapshot {
    /// `(domain, include_subdomains)` entries.
    pub entries: Vec<(String, bool)>,
}

impl PreloadSnapshot {
    /// One domain per line, optionally followed by `include_subdomains`.
    /// `#` comments and blank lines are skipped.
    pub fn parse(text: &str) -> PreloadSnapshot {
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|line| !line.is_empty() && !line.starts_with('#'))
            .map(|line| {
                let mut parts = line.split_whitespace();
                let domain = parts.next().unwrap_or("").trim_end_matches('.').to_ascii_lowercase();
                let include = parts.any(|flag| flag.eq_ignore_ascii_case("include_subdomains"));
                (domain, include)
            })
            .filter(|(domain, _)| !domain.is_empty())
            .collect();
        PreloadSnapshot { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreloadStatus {
    pub host_listed: bool,
    /// The covering `include_subdomains` parent, when the match was not the
    /// host itself.
    pub matched_parent: Option<String>,
}

/// Check `host` against the snapshot: listed directly, or covered by an
/// include-subdomains parent.
pub fn preload_status(host: &str, snapshot: &PreloadSnapshot) -> PreloadStatus {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if snapshot.entries.iter().any(|(domain, _)| *domain == host) {
        return PreloadStatus {
            host_listed: true,
            matched_parent: None,
        };
    }
    let mut rest = host.as_str();
    while let Some((_, parent)) = rest.split_once('.') {
        if snapshot
            .entries
            .iter()
            .any(|(domain, include)| *include && domain == parent)
        {
            return PreloadStatus {
                host_listed: true,
                matched_parent: Some(parent.to_string()),
            };
        }
        rest = parent;
    }
    PreloadStatus {
        host_listed: false,
        matched_parent: None,
    }
}

/// One source expression of a `connect-src` directive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CspSource {
    /// The `*` source: any network-scheme URL.
    Wildcard,
    /// A bare scheme source like `https:`.
    Scheme { scheme: String },
    /// scheme://host[:port][/path], host optionally starting with `*.`.
    Host {
        scheme: Option<String>,
        wildcard_host: bool,
        host: String,
        port: Option<u16>,
        any_port: bool,
        path_prefix: Option<String>,
    },
    /// Quoted keywords ('self', 'none', ...): preserved, never matched by
    /// this evaluator, which has no document origin to resolve them against.
    Keyword { keyword: String },
}

/// The `connect-src` directive: ordered source expressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CspConnectSrc {
    pub sources: Vec<CspSource>,
    pub raw: String,
}

fn parse_source(token: &str) -> CspSource {
    if token == "*" {
        return CspSource::Wildcard;
    }
    if token.starts_with('\'') && token.ends_with('\'') && token.len() >= 2 {
        return CspSource::Keyword {
            keyword: token.to_string(),
        };
    }
    // scheme-only source: "https:"
    if let Some(scheme) = token.strip_suffix(':') {
        if !scheme.is_empty() && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c)) {
            return CspSource::Scheme {
                scheme: scheme.to_ascii_lowercase(),
            };
        }
    }

    let (scheme, rest) = match token.split_once("://") {
        Some((scheme, rest)) => (Some(scheme.to_ascii_lowercase()), rest),
        None => (None, token),
    };
    let (hostport, path) = match rest.find('/') {
        Some(i) => (&rest[..i], Some(rest[i..].to_string())),
        None => (rest, None),
    };
    let (host, port_text) = match hostport.rsplit_once(':') {
        Some((host, port)) => (host, Some(port)),
        None => (hostport, None),
    };
    let (wildcard_host, host) = match host.strip_prefix("*.") {
        Some(apex) => (true, apex),
        None => (false, host),
    };
    let (port, any_port) = match port_text {
        Some("*") => (None, true),
        Some(p) => (p.parse().ok(), false),
        None => (None, false),
    };
    CspSource::Host {
        scheme,
        wildcard_host,
        host: host.to_ascii_lowercase(),
        port,
        any_port,
        path_prefix: path,
    }
}

/// Parse a `connect-src` source list. Accepts the bare source list, a
/// `connect-src ...` directive, or a full policy header containing one.
pub fn parse_connect_src(text: &str) -> CspConnectSrc {
    let directive_value = text
        .split(';')
        .map(str::trim)
        .find_map(|directive| {
            directive
                .strip_prefix("connect-src")
                .filter(|rest| rest.is_empty() || rest.starts_with(char::is_whitespace))
        })
        .unwrap_or(text);

    CspConnectSrc {
        sources: directive_value
            .split_whitespace()
            .map(parse_source)
            .collect(),
        raw: text.trim().to_string(),
    }
}

fn host_matches(source_host: &str, wildcard: bool, url_host: &str) -> bool {
    let url_host = url_host.to_ascii_lowercase();
    if wildcard {
        // `*.example.com` matches one or more leading labels, never the apex
        url_host.len() > source_host.len() + 1
            && url_host.ends_with(source_host)
            && url_host.as_bytes()[url_host.len() - source_host.len() - 1] == b'.'
    } else {
        url_host == source_host
    }
}

/// Evaluate whether the directive allows a fetch to `url`.
///
/// Matching is scheme-exact for sources that name a scheme: a source of
/// `https://*.twimg.com` never matches an `http` URL. Sources without a
/// scheme match both http and https. A path in the source is treated as a
/// prefix.
pub fn csp_connect_src_allows(directive: &CspConnectSrc, url: &str) -> bool {
    let Ok(parsed) = Uri::parse_absolute(url) else {
        return false;
    };
    let Some(url_scheme) = parsed.scheme.as_deref() else {
        return false;
    };
    let Some(url_host) = parsed.host() else {
        return false;
    };
    let url_port = parsed.effective_port();

    directive.sources.iter().any(|source| match source {
        CspSource::Wildcard => matches!(url_scheme, "http" | "https" | "ws" | "wss"),
        CspSource::Scheme { scheme } => url_scheme == scheme,
        CspSource::Keyword { .. } => false,
        CspSource::Host {
            scheme,
            wildcard_host,
            host,
            port,
            any_port,
            path_prefix,
        } => {
            if let Some(scheme) = scheme {
                if url_scheme != scheme {
                    return false;
                }
            } else if !matches!(url_scheme, "http" | "https") {
                return false;
            }
            if !host_matches(host, *wildcard_host, url_host) {
                return false;
            }
            if !any_port {
                let source_port = port.or_else(|| {
                    default_port(scheme.as_deref().unwrap_or(url_scheme))
                });
                if source_port != url_port {
                    return false;
                }
            }
            if let Some(prefix) = path_prefix {
                if prefix != "/" {
                    let url_path = if parsed.path.is_empty() { "/" } else { &parsed.path };
                    if !url_path.starts_with(prefix.as_str()) {
                        return false;
                    }
                }
            }
            true
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnforcementVerdict {
    /// Plain http is refused, or the host is preloaded.
    Enforced,
    /// An STS policy exists but plain http still serves content, leaving
    /// first-visit exposure.
    HeaderOnly,
    NotEnforced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpsEnforcementReport {
    pub verdict: EnforcementVerdict,
    pub findings: Vec<String>,
}

/// Combine the plain-http probe, the STS policy, and the preload lookup into
/// one verdict. A pure function of its three inputs; `max-age=0` counts as
/// no policy.
pub fn evaluate_https_enforcement(
    plain: &PlainHttpResult,
    sts: Option<&StsPolicy>,
    preload: &PreloadStatus,
) -> HttpsEnforcementReport {
    let sts_effective = sts.map(|p| !p.is_removal()).unwrap_or(false);

    let mut findings: Vec<String> = Vec::new();
    if plain.served {
        if sts_effective {
            findings.push("content served over plain http despite STS".to_string());
        } else {
            findings.push("content served over plain http".to_string());
        }
        if plain.lengths_match {
            findings.push("plain-http body length matches the https body".to_string());
        }
    } else {
        findings.push("plain http did not serve the content".to_string());
    }
    match sts {
        Some(policy) if policy.is_removal() => {
            findings.push("STS max-age=0: policy removal".to_string())
        }
        Some(policy) => {
            findings.push(format!(
                "STS policy present (max-age={}{}{})",
                policy.max_age,
                if policy.include_subdomains { "; includeSubDomains" } else { "" },
                if policy.preload_token { "; preload" } else { "" },
            ));
        }
        None => findings.push("no STS header".to_string()),
    }
    if preload.host_listed {
        match &preload.matched_parent {
            Some(parent) => findings.push(format!("host preloaded via parent {parent}")),
            None => findings.push("host on the preload snapshot".to_string()),
        }
    } else {
        findings.push("host not on the preload snapshot".to_string());
    }

    let verdict = if !plain.served || preload.host_listed {
        EnforcementVerdict::Enforced
    } else if sts_effective {
        EnforcementVerdict::HeaderOnly
    } else {
        EnforcementVerdict::NotEnforced
    };

    HttpsEnforcementReport { verdict, findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::ProbeOutcome;

    #[test]
    fn parses_the_observed_sts_header() {
        let policy = parse_sts("max-age=631138519").unwrap();
        assert_eq!(policy.max_age, 631138519);
        assert!(!policy.include_subdomains);
        assert!(!policy.preload_token);
        assert!(!policy.is_removal());
    }

    #[test]
    fn sts_directive_grammar() {
        // vectors from the HSTS specification's example policies
        let policy = parse_sts("max-age=31536000; includeSubDomains; preload").unwrap();
        assert_eq!(policy.max_age, 31536000);
        assert!(policy.include_subdomains);
        assert!(policy.preload_token);

        let policy = parse_sts("max-age=\"31536000\"").unwrap();
        assert_eq!(policy.max_age, 31536000);

        let policy = parse_sts("MAX-AGE=100; INCLUDESUBDOMAINS; unknown=1").unwrap();
        assert_eq!(policy.max_age, 100);
        assert!(policy.include_subdomains);

        let removal = parse_sts("max-age=0").unwrap();
        assert!(removal.is_removal());

        assert!(parse_sts("includeSubDomains").is_err());
        assert!(parse_sts("max-age=abc").is_err());
        assert!(parse_sts("").is_err());
    }

    #[test]
    fn preload_lookup_and_suffix_oracle() {
        let snapshot = PreloadSnapshot::parse(
            "# comment\n\
             twitter.com include_subdomains\n\
             example.org\n\
             b.example include_subdomains\n",
        );

        let status = preload_status("video.twimg.com", &snapshot);
        assert!(!status.host_listed);

        let status = preload_status("example.org", &snapshot);
        assert!(status.host_listed);
        assert_eq!(status.matched_parent, None);

        let status = preload_status("a.b.example", &snapshot);
        assert!(status.host_listed);
        assert_eq!(status.matched_parent.as_deref(), Some("b.example"));

        // include_subdomains must not catch the non-flagged entry's children
        assert!(!preload_status("sub.example.org", &snapshot).host_listed);
        // nor should a flagged entry match itself via the parent path only
        assert!(preload_status("twitter.com", &snapshot).host_listed);
        assert!(preload_status("mobile.twitter.com", &snapshot).host_listed);

        // brute-force suffix-walk oracle over generated hosts
        let oracle = |host: &str| -> bool {
            let labels: Vec<&str> = host.split('.').collect();
            for start in 0..labels.len() {
                let candidate = labels[start..].join(".");
                for (domain, include) in &snapshot.entries {
                    if *domain == candidate && (start == 0 || *include) {
                        return true;
                    }
                }
            }
            false
        };
        for host in [
            "a.b.example",
            "x.y.z.b.example",
            "b.example",
            "notb.example",
            "example.org",
            "deep.example.org",
            "twitter.com",
            "a.twitter.com",
            "twitter.com.evil.example",
        ] {
            assert_eq!(
                preload_status(host, &snapshot).host_listed,
                oracle(host),
                "host {host}"
            );
        }
    }

    #[test]
    fn csp_scheme_exact_wildcard_matching() {
        let directive = parse_connect_src("https://*.twimg.com");
        assert!(!csp_connect_src_allows(
            &directive,
            "http://video.twimg.com/dm_video/1600877027330064385/vid/0/3000/320x180/x.m4s"
        ));
        assert!(csp_connect_src_allows(
            &directive,
            "https://video.twimg.com/dm_video/1600877027330064385/vid/0/3000/320x180/x.m4s"
        ));
        // wildcard never matches the apex
        assert!(!csp_connect_src_allows(&directive, "https://twimg.com/x"));
        // deeper labels are fine
        assert!(csp_connect_src_allows(&directive, "https://a.b.twimg.com/x"));
        // cousin domains are not
        assert!(!csp_connect_src_allows(&directive, "https://evil-twimg.com/x"));
        assert!(!csp_connect_src_allows(&directive, "https://twimg.com.evil.example/x"));
    }

    #[test]
    fn csp_universal_source_and_keywords() {
        let directive = parse_connect_src("*");
        assert!(csp_connect_src_allows(&directive, "http://anything.example/x"));
        assert!(csp_connect_src_allows(&directive, "https://anything.example/x"));

        // quoted keywords are preserved but never match here
        let directive = parse_connect_src("'self'");
        assert_eq!(directive.sources.len(), 1);
        assert!(!csp_connect_src_allows(&directive, "https://h.example/x"));

        // bare scheme source
        let directive = parse_connect_src("http:");
        assert!(csp_connect_src_allows(&directive, "http://h.example/x"));
        assert!(!csp_connect_src_allows(&directive, "https://h.example/x"));
    }

    #[test]
    fn csp_port_and_path_rules() {
        let directive = parse_connect_src("https://api.example:8443/v1/");
        assert!(csp_connect_src_allows(&directive, "https://api.example:8443/v1/users"));
        assert!(!csp_connect_src_allows(&directive, "https://api.example/v1/users"));
        assert!(!csp_connect_src_allows(&directive, "https://api.example:8443/v2/users"));

        // default port implied by scheme
        let directive = parse_connect_src("https://api.example");
        assert!(csp_connect_src_allows(&directive, "https://api.example/x"));
        assert!(csp_connect_src_allows(&directive, "https://api.example:443/x"));
        assert!(!csp_connect_src_allows(&directive, "https://api.example:8443/x"));

        let directive = parse_connect_src("https://api.example:*");
        assert!(csp_connect_src_allows(&directive, "https://api.example:8443/x"));
    }

    #[test]
    fn csp_parses_out_of_full_policy_header() {
        let directive = parse_connect_src(
            "default-src 'self'; connect-src 'self' https://*.twimg.com; img-src *",
        );
        assert!(csp_connect_src_allows(&directive, "https://video.twimg.com/x"));
        assert!(!csp_connect_src_allows(&directive, "http://video.twimg.com/x"));
        assert_eq!(directive.sources.len(), 2);
    }

    #[test]
    fn scheme_flip_always_flips_for_the_paper_source_list() {
        // property over the scenario's CSP: any https twimg-subdomain URL is
        // allowed and its http twin denied
        let directive = parse_connect_src(crate::mock::paper::CSP_VALUE);
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let labels = ["video", "pbs", "abs", "a", "cdn7", "x-y"];
        for _ in 0..100 {
            let depth = rng.gen_range(1..=3);
            let mut host = String::new();
            for _ in 0..depth {
                host.push_str(labels[rng.gen_range(0..labels.len())]);
                host.push('.');
            }
            host.push_str("twimg.com");
            let path: String = (0..rng.gen_range(1..20))
                .map(|_| char::from(rng.gen_range(b'a'..=b'z')))
                .collect();
            let https_url = format!("https://{host}/{path}");
            let http_url = format!("http://{host}/{path}");
            assert!(csp_connect_src_allows(&directive, &https_url), "{https_url}");
            assert!(!csp_connect_src_allows(&directive, &http_url), "{http_url}");
        }
    }

    fn plain(served: bool) -> PlainHttpResult {
        let outcome = |code: u16| ProbeOutcome::Status {
            code,
            body_length: 37919,
            response_headers: Vec::new(),
            elapsed_ms: 1,
        };
        PlainHttpResult {
            served,
            lengths_match: served,
            http_outcome: if served { outcome(200) } else { outcome(404) },
            https_outcome: outcome(200),
        }
    }

    #[test]
    fn enforcement_truth_table_is_pinned() {
        use EnforcementVerdict::*;
        let sts = parse_sts("max-age=631138519").unwrap();
        let preloaded = PreloadStatus {
            host_listed: true,
            matched_parent: None,
        };
        let not_preloaded = PreloadStatus {
            host_listed: false,
            matched_parent: None,
        };

        // (plain served, STS present, preloaded) -> verdict
        let table: &[(bool, bool, bool, EnforcementVerdict)] = &[
            (true, true, true, Enforced),
            (true, true, false, HeaderOnly),
            (true, false, true, Enforced),
            (true, false, false, NotEnforced),
            (false, true, true, Enforced),
            (false, true, false, Enforced),
            (false, false, true, Enforced),
            (false, false, false, Enforced),
        ];
        for (served, has_sts, is_preloaded, expected) in table {
            let report = evaluate_https_enforcement(
                &plain(*served),
                has_sts.then_some(&sts),
                if *is_preloaded { &preloaded } else { &not_preloaded },
            );
            assert_eq!(
                report.verdict, *expected,
                "(served={served}, sts={has_sts}, preloaded={is_preloaded})"
            );
            assert!(!report.findings.is_empty());
        }
    }

    #[test]
    fn enforcement_findings_name_the_contributing_facts() {
        let sts = parse_sts("max-age=631138519").unwrap();
        let not_preloaded = PreloadStatus {
            host_listed: false,
            matched_parent: None,
        };
        let report = evaluate_https_enforcement(&plain(true), Some(&sts), &not_preloaded);
        assert_eq!(report.verdict, EnforcementVerdict::HeaderOnly);
        assert!(report
            .findings
            .iter()
            .any(|f| f.contains("despite STS")));

        let report = evaluate_https_enforcement(&plain(false), None, &not_preloaded);
        assert_eq!(report.verdict, EnforcementVerdict::Enforced);
        assert!(report.findings.iter().any(|f| f.contains("no STS header")));

        // max-age=0 counts as no policy
        let removal = parse_sts("max-age=0").unwrap();
        let report = evaluate_https_enforcement(&plain(true), Some(&removal), &not_preloaded);
        assert_eq!(report.verdict, EnforcementVerdict::NotEnforced);
    }
}
