//! Canonical IPv4/IPv6 prefixes.
//!
//! Both families share one representation: the network bits are stored
//! left-aligned in a `u128`, so an IPv4 prefix occupies the top 32 bits and
//! bit `i` of any prefix is bit `127 - i` of the word. This keeps trie code
//! family-agnostic and makes the derived ordering prefix-lexicographic
//! (address first, shorter prefix before longer).

use std::cmp::Ordering;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefixError {
    #[error("malformed prefix {0:?}")]
    Malformed(String),
    #[error("prefix length {len} out of range for {version}")]
    LengthOutOfRange { version: IpVersion, len: u32 },
    #[error("prefix {0} has host bits set")]
    NonCanonical(String),
    #[error("address family mismatch: prefix is {prefix}, address is {addr}")]
    VersionMismatch { prefix: IpVersion, addr: IpVersion },
    #[error("cannot move {levels} levels up from a /{len}")]
    Underflow { len: u8, levels: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpVersion {
    V4,
    V6,
}

impl IpVersion {
    pub const fn bit_len(self) -> u8 {
        match self {
            IpVersion::V4 => 32,
            IpVersion::V6 => 128,
        }
    }

    pub fn of(addr: &IpAddr) -> Self {
        match addr {
            IpAddr::V4(_) => IpVersion::V4,
            IpAddr::V6(_) => IpVersion::V6,
        }
    }
}

impl fmt::Display for IpVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IpVersion::V4 => "IPv4",
            IpVersion::V6 => "IPv6",
        })
    }
}

/// Left-aligned address bits.
pub(crate) fn addr_bits(addr: &IpAddr) -> u128 {
    match addr {
        IpAddr::V4(a) => (u32::from(*a) as u128) << 96,
        IpAddr::V6(a) => u128::from(*a),
    }
}

const fn mask(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        u128::MAX << (128 - len as u32)
    }
}

/// A versioned CIDR block with all host bits zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct IpPrefix {
    version: IpVersion,
    bits: u128,
    len: u8,
}

impl IpPrefix {
    /// Builds a prefix from an address, zeroing host bits.
    pub fn new(addr: IpAddr, len: u8) -> Result<Self, PrefixError> {
        let version = IpVersion::of(&addr);
        if len > version.bit_len() {
            return Err(PrefixError::LengthOutOfRange { version, len: len as u32 });
        }
        Ok(Self::from_raw(version, addr_bits(&addr), len))
    }

    /// The full-length prefix of a single address.
    pub fn host(addr: IpAddr) -> Self {
        let version = IpVersion::of(&addr);
        Self::from_raw(version, addr_bits(&addr), version.bit_len())
    }

    pub(crate) fn from_raw(version: IpVersion, bits: u128, len: u8) -> Self {
        debug_assert!(len <= version.bit_len());
        IpPrefix { version, bits: bits & mask(len), len }
    }

    /// The zero-length prefix of a family.
    pub fn root(version: IpVersion) -> Self {
        IpPrefix { version, bits: 0, len: 0 }
    }

    pub fn version(&self) -> IpVersion {
        self.version
    }

    #[allow(clippy::len_without_is_empty)] // a prefix length, not a size
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_v4(&self) -> bool {
        self.version == IpVersion::V4
    }

    pub fn network(&self) -> IpAddr {
        match self.version {
            IpVersion::V4 => IpAddr::V4(Ipv4Addr::from((self.bits >> 96) as u32)),
            IpVersion::V6 => IpAddr::V6(Ipv6Addr::from(self.bits)),
        }
    }

    /// Bit `i` (0 = most significant) of the network address.
    pub(crate) fn bit(&self, i: u8) -> usize {
        ((self.bits >> (127 - i as u32)) & 1) as usize
    }

    /// True iff `other` is the same prefix or a more specific one inside `self`.
    pub fn covers(&self, other: &IpPrefix) -> bool {
        self.version == other.version && self.len <= other.len && other.bits & mask(self.len) == self.bits
    }

    pub fn overlaps(&self, other: &IpPrefix) -> bool {
        self.covers(other) || other.covers(self)
    }

    pub fn contains(&self, addr: &IpAddr) -> Result<bool, PrefixError> {
        let av = IpVersion::of(addr);
        if av != self.version {
            return Err(PrefixError::VersionMismatch { prefix: self.version, addr: av });
        }
        Ok(addr_bits(addr) & mask(self.len) == self.bits)
    }

    /// The prefix `levels` bits shorter than `self`.
    pub fn supernet(&self, levels: u8) -> Result<IpPrefix, PrefixError> {
        if levels > self.len {
            return Err(PrefixError::Underflow { len: self.len, levels });
        }
        Ok(Self::from_raw(self.version, self.bits, self.len - levels))
    }

    /// Truncates to `len` bits if longer; otherwise returns `self`.
    pub fn truncate(&self, len: u8) -> IpPrefix {
        if len >= self.len {
            *self
        } else {
            Self::from_raw(self.version, self.bits, len)
        }
    }

    /// Longest prefix covering both `self` and `other` (same family).
    pub(crate) fn common(&self, other: &IpPrefix) -> IpPrefix {
        debug_assert_eq!(self.version, other.version);
        let diff = (self.bits ^ other.bits).leading_zeros().min(128) as u8;
        let len = diff.min(self.len).min(other.len);
        Self::from_raw(self.version, self.bits, len)
    }

    /// Parses `addr/len`. With `normalize` off, host bits must already be zero.
    pub fn parse(text: &str, normalize: bool) -> Result<IpPrefix, PrefixError> {
        let text = text.trim();
        let (addr, len) = text.split_once('/').ok_or_else(|| PrefixError::Malformed(text.to_string()))?;
        let addr: IpAddr = addr.parse().map_err(|_| PrefixError::Malformed(text.to_string()))?;
        if len.is_empty() || !len.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PrefixError::Malformed(text.to_string()));
        }
        let version = IpVersion::of(&addr);
        let len: u32 = len.parse().map_err(|_| PrefixError::LengthOutOfRange { version, len: u32::MAX })?;
        if len > version.bit_len() as u32 {
            return Err(PrefixError::LengthOutOfRange { version, len });
        }
        let prefix = Self::from_raw(version, addr_bits(&addr), len as u8);
        if !normalize && prefix.bits != addr_bits(&addr) {
            return Err(PrefixError::NonCanonical(text.to_string()));
        }
        Ok(prefix)
    }
}

impl Ord for IpPrefix {
    fn cmp(&self, other: &Self) -> Ordering {
        self.version.cmp(&other.version).then(self.bits.cmp(&other.bits)).then(self.len.cmp(&other.len))
    }
}

impl PartialOrd for IpPrefix {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network(), self.len)
    }
}

impl fmt::Debug for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for IpPrefix {
    type Err = PrefixError;

    /// Strict parse: host bits must be zero.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IpPrefix::parse(s, false)
    }
}

impl Serialize for IpPrefix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpPrefix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
