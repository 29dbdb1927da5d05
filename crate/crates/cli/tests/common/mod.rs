//! Synthetic instances and independent oracles shared by the integration
//! and acceptance tests. Nothing here goes through the library's tries.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::rngs::StdRng;
use rand::Rng;
use sibprefix_core::ingest::{ResolutionRecord, ResolutionSnapshot, RouteTable};
use sibprefix_core::special::FilterPolicy;
use sibprefix_core::{IpPrefix, IpVersion};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn bits(a: &IpAddr) -> u128 {
    match a {
        IpAddr::V4(x) => (u32::from(*x) as u128) << 96,
        IpAddr::V6(x) => u128::from(*x),
    }
}

/// Membership by plain bit arithmetic.
pub fn in_prefix(p: &IpPrefix, a: &IpAddr) -> bool {
    if a.is_ipv4() != p.is_v4() {
        return false;
    }
    let len = p.len() as u32;
    len == 0 || (bits(a) ^ bits(&p.network())) >> (128 - len) == 0
}

/// Longest route covering `a`, by linear scan.
pub fn lpm_scan(routes: &[(IpPrefix, u32)], a: &IpAddr) -> Option<(IpPrefix, u32)> {
    routes.iter().filter(|(p, _)| in_prefix(p, a)).max_by_key(|(p, _)| p.len()).copied()
}

#[derive(Debug, Clone)]
pub struct Instance {
    /// (domain, address) rows.
    pub rows: Vec<(String, IpAddr)>,
    /// First-wins route list, unique prefixes.
    pub routes: Vec<(IpPrefix, u32)>,
}

fn random_v4_base(rng: &mut StdRng) -> IpPrefix {
    let addr = Ipv4Addr::new(81 + rng.gen_range(0..4), rng.gen(), rng.gen(), 0);
    IpPrefix::new(IpAddr::V4(addr), rng.gen_range(16..=24)).unwrap()
}

fn random_v6_base(rng: &mut StdRng) -> IpPrefix {
    let addr = Ipv6Addr::new(0x2a00 + rng.gen_range(0..4), rng.gen(), rng.gen::<u16>() & 0xff00, 0, 0, 0, 0, 0);
    IpPrefix::new(IpAddr::V6(addr), rng.gen_range(32..=48)).unwrap()
}

/// Random address inside `p` varying only the low `spread` host bits, so
/// addresses cluster and share sub-prefixes.
pub fn random_addr_in(rng: &mut StdRng, p: &IpPrefix, spread: u32) -> IpAddr {
    let total = if p.is_v4() { 32 } else { 128 };
    let free = (total - p.len() as u32).min(spread);
    let r: u128 = match free {
        0 => 0,
        128 => rng.gen(),
        f => rng.gen::<u128>() & ((1u128 << f) - 1),
    };
    match p.network() {
        IpAddr::V4(n) => IpAddr::V4(Ipv4Addr::from(u32::from(n) | r as u32)),
        IpAddr::V6(n) => IpAddr::V6(Ipv6Addr::from(u128::from(n) | r)),
    }
}

fn random_child(rng: &mut StdRng, parent: &IpPrefix, max_len: u8) -> Option<IpPrefix> {
    if parent.len() >= max_len {
        return None;
    }
    let len = rng.gen_range(parent.len() + 1..=max_len.min(parent.len() + 6));
    let host = random_addr_in(rng, parent, u32::MAX);
    Some(IpPrefix::new(host, len).unwrap())
}

/// A random resolution snapshot with correlated IPv4/IPv6 placement and
/// nested routes, some unrouted and single-stack domains.
pub fn random_instance(rng: &mut StdRng, max_domains: usize, max_prefixes: usize) -> Instance {
    let mut routes: Vec<(IpPrefix, u32)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (family, count) in
        [(IpVersion::V4, rng.gen_range(1..=max_prefixes)), (IpVersion::V6, rng.gen_range(1..=max_prefixes))]
    {
        let mut made: Vec<IpPrefix> = Vec::new();
        while made.len() < count {
            let p = if !made.is_empty() && rng.gen_bool(0.3) {
                let parent = made[rng.gen_range(0..made.len())];
                let cap = if family == IpVersion::V4 { 28 } else { 64 };
                match random_child(rng, &parent, cap) {
                    Some(c) => c,
                    None => continue,
                }
            } else if family == IpVersion::V4 {
                random_v4_base(rng)
            } else {
                random_v6_base(rng)
            };
            if seen.insert(p) {
                made.push(p);
                routes.push((p, 64_500 + rng.gen_range(0..8)));
            }
        }
    }
    let v4: Vec<IpPrefix> = routes.iter().filter(|r| r.0.is_v4()).map(|r| r.0).collect();
    let v6: Vec<IpPrefix> = routes.iter().filter(|r| !r.0.is_v4()).map(|r| r.0).collect();

    // Hosting "sites": a v4 route tied to a v6 route, so overlap is common.
    let sites: Vec<(IpPrefix, IpPrefix)> =
        (0..v4.len().max(v6.len())).map(|i| (v4[i % v4.len()], v6[(i * 7 + 3) % v6.len()])).collect();

    let n = rng.gen_range(1..=max_domains);
    let mut rows = Vec::new();
    for d in 0..n {
        let name = format!("d{d}.example");
        let (mut s4, mut s6) = sites[rng.gen_range(0..sites.len())];
        if rng.gen_bool(0.15) {
            s4 = v4[rng.gen_range(0..v4.len())];
        }
        if rng.gen_bool(0.15) {
            s6 = v6[rng.gen_range(0..v6.len())];
        }
        let k4 = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..=3) };
        let k6 = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..=3) };
        for _ in 0..k4 {
            let a = if rng.gen_bool(0.05) {
                IpAddr::V4(Ipv4Addr::new(95, rng.gen(), rng.gen(), rng.gen_range(1..=254)))
            } else {
                random_addr_in(rng, &s4, 10)
            };
            rows.push((name.clone(), a));
        }
        for _ in 0..k6 {
            let a = if rng.gen_bool(0.05) {
                IpAddr::V6(Ipv6Addr::new(0x2c0f, rng.gen(), 0, 0, 0, 0, 0, rng.gen_range(1..=0xfff0)))
            } else {
                random_addr_in(rng, &s6, 40)
            };
            rows.push((name.clone(), a));
        }
    }
    Instance { rows, routes }
}

impl Instance {
    pub fn snapshot(&self) -> ResolutionSnapshot {
        let date = chrono_date();
        let recs = self.rows.iter().map(|(name, addr)| ResolutionRecord {
            snapshot_date: date,
            query_name: name.clone(),
            response_name: name.clone(),
            address: *addr,
            version: IpVersion::of(addr),
        });
        ResolutionSnapshot::from_records(recs, &FilterPolicy::default())
    }

    pub fn route_table(&self) -> RouteTable {
        let mut t = RouteTable::new();
        for (p, a) in &self.routes {
            t.add(*p, *a);
        }
        t
    }

    /// Per domain: its v4 and v6 address sets.
    pub fn domains(&self) -> BTreeMap<&str, (BTreeSet<IpAddr>, BTreeSet<IpAddr>)> {
        let mut m: BTreeMap<&str, (BTreeSet<IpAddr>, BTreeSet<IpAddr>)> = BTreeMap::new();
        for (name, a) in &self.rows {
            let e = m.entry(name.as_str()).or_default();
            if a.is_ipv4() {
                e.0.insert(*a);
            } else {
                e.1.insert(*a);
            }
        }
        m
    }

    /// Dual-stack domains routed in both families, with their addresses.
    pub fn retained(&self) -> BTreeMap<&str, Vec<IpAddr>> {
        self.domains()
            .into_iter()
            .filter(|(_, (a4, a6))| {
                a4.iter().any(|a| lpm_scan(&self.routes, a).is_some())
                    && a6.iter().any(|a| lpm_scan(&self.routes, a).is_some())
            })
            .map(|(d, (a4, a6))| (d, a4.into_iter().chain(a6).collect()))
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("date,query_name,rr_type,response_name,address\n");
        for (name, a) in &self.rows {
            let t = if a.is_ipv4() { "A" } else { "AAAA" };
            s += &format!("2024-03-01,{name},{t},{name},{a}\n");
        }
        s
    }

    pub fn routes_csv(&self) -> String {
        let mut s = String::from("prefix,origin_asn\n");
        for (p, a) in &self.routes {
            s += &format!("{p},{a}\n");
        }
        s
    }
}

pub fn chrono_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, 1).unwrap()
}

/// Reduced fraction by Euclid, independent of the library.
pub fn reduce(n: u64, d: u64) -> (u64, u64) {
    let (mut a, mut b) = (n, d);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    let g = a.max(1);
    (n / g, d / g)
}
