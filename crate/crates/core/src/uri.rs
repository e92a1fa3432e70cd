//! Minimal URI handling: component split, reference resolution, and the
//! host/port helpers the HTTP client needs.
//!
//! Resolution follows RFC 3986 section 5.3 (strict mode) and reproduces the
//! published section 5.4 example table byte for byte, which rules out
//! WHATWG-style normalization such as rewriting `http://g` to `http://g/`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UriError {
    #[error("invalid URI: {0}")]
    InvalidUri(String),
}

/// A URI or URI reference split into its five components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Uri {
    pub scheme: Option<String>,
    pub authority: Option<String>,
    pub path: String,
    pub query: Option<String>,
    pub fragment: Option<String>,
}

fn is_scheme(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
}

impl Uri {
    /// Split a URI reference into components (RFC 3986 appendix B).
    pub fn parse(input: &str) -> Result<Uri, UriError> {
        if input.chars().any(|c| c.is_ascii_control() || c == ' ') {
            return Err(UriError::InvalidUri(format!(
                "whitespace or control character in {input:?}"
            )));
        }
        let mut rest = input;

        let fragment = match rest.find('#') {
            Some(i) => {
                let f = rest[i + 1..].to_string();
                rest = &rest[..i];
                Some(f)
            }
            None => None,
        };
        let scheme = match rest.find(':') {
            Some(i) if is_scheme(&rest[..i]) => {
                let s = rest[..i].to_ascii_lowercase();
                rest = &rest[i + 1..];
                Some(s)
            }
            _ => None,
        };
        let query = match rest.find('?') {
            Some(i) => {
                let q = rest[i + 1..].to_string();
                rest = &rest[..i];
                Some(q)
            }
            None => None,
        };
        let authority = if let Some(after) = rest.strip_prefix("//") {
            let end = after.find('/').unwrap_or(after.len());
            let a = after[..end].to_string();
            rest = &after[end..];
            Some(a)
        } else {
            None
        };
        Ok(Uri {
            scheme,
            authority,
            path: rest.to_string(),
            query,
            fragment,
        })
    }

    /// Parse, requiring a scheme (and rejecting scheme-relative references).
    pub fn parse_absolute(input: &str) -> Result<Uri, UriError> {
        let uri = Uri::parse(input)?;
        if uri.scheme.is_none() {
            return Err(UriError::InvalidUri(format!("not an absolute URI: {input:?}")));
        }
        Ok(uri)
    }

    pub fn is_absolute(&self) -> bool {
        self.scheme.is_some()
    }

    /// Host portion of the authority, with any userinfo and port stripped.
    /// IPv6 literals are returned without their brackets.
    pub fn host(&self) -> Option<&str> {
        let auth = self.authority.as_deref()?;
        let hostport = auth.rsplit('@').next().unwrap_or(auth);
        if let Some(v6) = hostport.strip_prefix('[') {
            return v6.find(']').map(|i| &v6[..i]);
        }
        match hostport.rfind(':') {
            Some(i) => Some(&hostport[..i]),
            None => Some(hostport),
        }
    }

    /// Explicit port from the authority, if any.
    pub fn port(&self) -> Option<u16> {
        let auth = self.authority.as_deref()?;
        let hostport = auth.rsplit('@').next().unwrap_or(auth);
        let after_host = match hostport.rfind(']') {
            Some(i) => &hostport[i + 1..],
            None => hostport,
        };
        after_host
            .rfind(':')
            .and_then(|i| after_host[i + 1..].parse().ok())
    }

    /// Explicit port, or the scheme default (80/443).
    pub fn effective_port(&self) -> Option<u16> {
        self.port().or_else(|| default_port(self.scheme.as_deref()?))
    }

    /// Path plus `?query`, as it appears on an HTTP request line. An empty
    /// path becomes `/`.
    pub fn path_and_query(&self) -> String {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        match &self.query {
            Some(q) => format!("{path}?{q}"),
            None => path.to_string(),
        }
    }

    /// Same URI with the scheme replaced (used to rewrite https -> http).
    pub fn with_scheme(&self, scheme: &str) -> Uri {
        Uri {
            scheme: Some(scheme.to_string()),
            ..self.clone()
        }
    }

    /// Recompose the components into a string (RFC 3986 section 5.3).
    pub fn to_uri_string(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.scheme {
            out.push_str(s);
            out.push(':');
        }
        if let Some(a) = &self.authority {
            out.push_str("//");
            out.push_str(a);
        }
        out.push_str(&self.path);
        if let Some(q) = &self.query {
            out.push('?');
            out.push_str(q);
        }
        if let Some(f) = &self.fragment {
            out.push('#');
            out.push_str(f);
        }
        out
    }
}

impl std::fmt::Display for Uri {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_uri_string())
    }
}

pub fn default_port(scheme: &str) -> Option<u16> {
    match scheme {
        "http" => Some(80),
        "https" => Some(443),
        _ => None,
    }
}

/// True for `localhost` and loopback IP literals.
pub fn is_loopback_host(host: &str) -> bool {
    if host.eq_ignore_ascii_case("localhost") {
        return true;
    }
    host.parse::<std::net::IpAddr>()
        .map(|ip| ip.is_loopback())
        .unwrap_or(false)
}

/// RFC 3986 section 5.2.4.
fn remove_dot_segments(path: &str) -> String {
    let mut input = path;
    let mut output = String::new();
    while !input.is_empty() {
        if let Some(rest) = input.strip_prefix("../") {
            input = rest;
        } else if let Some(rest) = input.strip_prefix("./") {
            input = rest;
        } else if input.starts_with("/./") {
            input = &input[2..];
        } else if input == "/." {
            input = "/";
        } else if input.starts_with("/../") {
            input = &input[3..];
            truncate_last_segment(&mut output);
        } else if input == "/.." {
            input = "/";
            truncate_last_segment(&mut output);
        } else if input == "." || input == ".." {
            input = "";
        } else {
            let start = if input.starts_with('/') { 1 } else { 0 };
            let end = match input[start..].find('/') {
                Some(i) => start + i,
                None => input.len(),
            };
            output.push_str(&input[..end]);
            input = &input[end..];
        }
    }
    output
}

fn truncate_last_segment(output: &mut String) {
    match output.rfind('/') {
        Some(i) => output.truncate(i),
        None => output.clear(),
    }
}

/// RFC 3986 section 5.3 merge.
fn merge_paths(base: &Uri, reference_path: &str) -> String {
    if base.authority.is_some() && base.path.is_empty() {
        return format!("/{reference_path}");
    }
    match base.path.rfind('/') {
        Some(i) => format!("{}{}", &base.path[..=i], reference_path),
        None => reference_path.to_string(),
    }
}

/// Resolve `reference` against the absolute URI `base` and return the target
/// as a string (RFC 3986 section 5.3, strict).
pub fn resolve_uri(base: &str, reference: &str) -> Result<String, UriError> {
    let base = Uri::parse(base)?;
    if !base.is_absolute() {
        return Err(UriError::InvalidUri(format!(
            "base is not an absolute URI: {base}"
        )));
    }
    let r = Uri::parse(reference)?;

    let target = if r.scheme.is_some() {
        Uri {
            scheme: r.scheme,
            authority: r.authority,
            path: remove_dot_segments(&r.path),
            query: r.query,
            fragment: r.fragment,
        }
    } else if r.authority.is_some() {
        Uri {
            scheme: base.scheme,
            authority: r.authority,
            path: remove_dot_segments(&r.path),
            query: r.query,
            fragment: r.fragment,
        }
    } else if r.path.is_empty() {
        Uri {
            scheme: base.scheme,
            authority: base.authority,
            path: base.path,
            query: r.query.or(base.query),
            fragment: r.fragment,
        }
    } else if r.path.starts_with('/') {
        Uri {
            scheme: base.scheme,
            authority: base.authority,
            path: remove_dot_segments(&r.path),
            query: r.query,
            fragment: r.fragment,
        }
    } else {
        let merged = merge_paths(&base, &r.path);
        Uri {
            scheme: base.scheme,
            authority: base.authority,
            path: remove_dot_segments(&merged),
            query: r.query,
            fragment: r.fragment,
        }
    };
    Ok(target.to_uri_string())
}
