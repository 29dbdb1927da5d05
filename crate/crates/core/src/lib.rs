//! Sibling prefix detection and analysis.
//!
//! Sibling prefixes are IPv4/IPv6 prefix pairs that serve nearly the same
//! set of dual-stack domains. This crate groups DNS resolution data by
//! announced prefix, scores prefix pairs by set similarity, keeps each
//! prefix's best match, and refines the CIDR sizes of the resulting pairs by
//! walking per-family address tries. Enrichment and longitudinal modules
//! annotate and compare the pairs.

pub mod detect;
pub mod enrich;
pub mod ingest;
pub mod longitudinal;
pub mod prefix;
pub mod record;
pub mod special;
pub mod trie;
pub mod tuner;

pub use prefix::{IpPrefix, IpVersion, PrefixError};
pub use trie::{PrefixTrie, Subprefix};
