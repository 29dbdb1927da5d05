//! Special-purpose address registry used to filter resolution data.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialKind {
    Unspecified,
    Private,
    Loopback,
    LinkLocal,
    Multicast,
    Reserved,
    Documentation,
}

impl fmt::Display for SpecialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpecialKind::Unspecified => "unspecified",
            SpecialKind::Private => "private",
            SpecialKind::Loopback => "loopback",
            SpecialKind::LinkLocal => "link_local",
            SpecialKind::Multicast => "multicast",
            SpecialKind::Reserved => "reserved",
            SpecialKind::Documentation => "documentation",
        })
    }
}

/// Which special ranges to drop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    /// Documentation ranges (192.0.2.0/24, 2001:db8::/32, ...) are kept
    /// unless this is set.
    pub drop_documentation: bool,
}

const V4_RANGES: &[(u32, u8, SpecialKind)] = &[
    (0x0000_0000, 32, SpecialKind::Unspecified),   // 0.0.0.0/32
    (0x0000_0000, 8, SpecialKind::Reserved),       // 0.0.0.0/8 "this network"
    (0x0a00_0000, 8, SpecialKind::Private),        // 10.0.0.0/8
    (0x6440_0000, 10, SpecialKind::Private),       // 100.64.0.0/10 shared CGN space
    (0x7f00_0000, 8, SpecialKind::Loopback),       // 127.0.0.0/8
    (0xa9fe_0000, 16, SpecialKind::LinkLocal),     // 169.254.0.0/16
    (0xac10_0000, 12, SpecialKind::Private),       // 172.16.0.0/12
    (0xc000_0000, 24, SpecialKind::Reserved),      // 192.0.0.0/24 protocol assignments
    (0xc000_0200, 24, SpecialKind::Documentation), // 192.0.2.0/24
    (0xc058_6300, 24, SpecialKind::Reserved),      // 192.88.99.0/24 deprecated 6to4 relay
    (0xc0a8_0000, 16, SpecialKind::Private),       // 192.168.0.0/16
    (0xc612_0000, 15, SpecialKind::Reserved),      // 198.18.0.0/15 benchmarking
    (0xc633_6400, 24, SpecialKind::Documentation), // 198.51.100.0/24
    (0xcb00_7100, 24, SpecialKind::Documentation), // 203.0.113.0/24
    (0xe000_0000, 4, SpecialKind::Multicast),      // 224.0.0.0/4
    (0xf000_0000, 4, SpecialKind::Reserved),       // 240.0.0.0/4 incl. broadcast
];

const V6_RANGES: &[(u128, u8, SpecialKind)] = &[
    (0, 128, SpecialKind::Unspecified),                                     // ::/128
    (1, 128, SpecialKind::Loopback),                                        // ::1/128
    (0x0000_0000_0000_0000_0000_ffff_0000_0000, 96, SpecialKind::Reserved), // ::ffff:0:0/96
    (0x0064_ff9b_0001 << 80, 48, SpecialKind::Reserved),                    // 64:ff9b:1::/48
    (0x0100 << 112, 64, SpecialKind::Reserved),                             // 100::/64 discard
    (0x2001 << 112, 23, SpecialKind::Reserved),                             // 2001::/23 protocol assignments
    (0x2001_0db8 << 96, 32, SpecialKind::Documentation),                    // 2001:db8::/32
    (0x3fff << 112, 20, SpecialKind::Documentation),                        // 3fff::/20
    (0xfc00 << 112, 7, SpecialKind::Private),                               // fc00::/7 unique local
    (0xfe80 << 112, 10, SpecialKind::LinkLocal),                            // fe80::/10
    (0xff00 << 112, 8, SpecialKind::Multicast),                             // ff00::/8
];

fn in_range(bits: u128, net: u128, len: u8, width: u32) -> bool {
    if len == 0 {
        return true;
    }
    let shift = width - len as u32;
    (bits >> shift) == (net >> shift)
}

/// Classifies an address against the registry, ignoring policy.
pub fn classify(addr: &IpAddr) -> Option<SpecialKind> {
    match addr {
        IpAddr::V4(a) => classify_v4(a),
        IpAddr::V6(a) => classify_v6(a),
    }
}

fn classify_v4(addr: &Ipv4Addr) -> Option<SpecialKind> {
    let bits = u32::from(*addr) as u128;
    V4_RANGES.iter().find(|(net, len, _)| in_range(bits, *net as u128, *len, 32)).map(|(_, _, kind)| *kind)
}

fn classify_v6(addr: &Ipv6Addr) -> Option<SpecialKind> {
    let bits = u128::from(*addr);
    if let Some(kind) = V6_RANGES.iter().find(|(net, len, _)| in_range(bits, *net, *len, 128)).map(|(_, _, kind)| *kind)
    {
        return Some(kind);
    }
    // Anything outside 2000::/3 is not allocated for global unicast.
    if bits >> 125 != 0b001 {
        return Some(SpecialKind::Reserved);
    }
    None
}

impl FilterPolicy {
    /// Reason to drop `addr`, if any.
    pub fn reject(&self, addr: &IpAddr) -> Option<SpecialKind> {
        match classify(addr) {
            Some(SpecialKind::Documentation) if !self.drop_documentation => None,
            other => other,
        }
    }
}
