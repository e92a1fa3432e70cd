//! Audits whether hash-named web media resources are actually access-controlled.
//!
//! The crate bundles the pieces needed to reproduce a full audit offline:
//!
//! - [`playlist`]: parse HLS Media Playlists for fragmented MP4 and resolve
//!   segment URIs.
//! - [`probe`]: run a matrix of HTTP requests that differ only in
//!   authentication-relevant headers, and classify the protection regime from
//!   the outcome pattern.
//! - [`assembler`]: fetch the init section plus media segments and
//!   concatenate them back into a single playable file, byte-exact.
//! - [`archive`]: push URLs to a web archive, query its CDX index, and verify
//!   live-vs-archive byte equivalence.
//! - [`tlsaudit`]: plain-HTTP availability, Strict-Transport-Security,
//!   HSTS-preload lookup, and CSP `connect-src` matching.
//! - [`mock`]: an offline behavior-twin HTTP server that reproduces the
//!   response semantics the other modules are tested against.
//!
//! Everything network-facing goes through [`http`], a deliberately small
//! HTTP/1.1 client that sends exactly the headers it is given and can tell a
//! zero-byte connection close apart from a timeout or a refused connection.

pub mod archive;
pub mod assembler;
pub mod http;
pub mod mock;
pub mod playlist;
pub mod probe;
pub mod report;
pub mod tlsaudit;
pub(crate) mod ts;
pub mod uri;
