//! Path-compressed binary prefix trie covering both address families.
//!
//! Nodes live in an arena. Each family has a permanent root at `/0`; every
//! other node is either occupied (carries a payload) or a glue node created
//! where two stored prefixes diverge. Traversals visit the 0-branch before the
//! 1-branch, which yields prefix-lexicographic order.
//!
//! The trie has no interior mutability: once built it can be shared across
//! threads behind `&` for concurrent lookups.

use std::net::IpAddr;

use crate::prefix::{IpPrefix, IpVersion};

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node<P> {
    prefix: IpPrefix,
    value: Option<P>,
    children: [u32; 2],
}

impl<P> Node<P> {
    fn new(prefix: IpPrefix, value: Option<P>) -> Self {
        Node { prefix, value, children: [NIL, NIL] }
    }
}

#[derive(Debug, Clone)]
pub struct PrefixTrie<P> {
    nodes: Vec<Node<P>>,
    occupied: usize,
}

/// One entry of [`PrefixTrie::next_subprefixes`]: a reported prefix and the
/// payloads of the occupied nodes folded into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Subprefix<'a, P> {
    pub prefix: IpPrefix,
    pub payloads: Vec<&'a P>,
}

impl<P> Default for PrefixTrie<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> PrefixTrie<P> {
    pub fn new() -> Self {
        PrefixTrie {
            nodes: vec![Node::new(IpPrefix::root(IpVersion::V4), None), Node::new(IpPrefix::root(IpVersion::V6), None)],
            occupied: 0,
        }
    }

    /// Number of stored prefixes.
    pub fn len(&self) -> usize {
        self.occupied
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    fn root(version: IpVersion) -> u32 {
        match version {
            IpVersion::V4 => 0,
            IpVersion::V6 => 1,
        }
    }

    fn push(&mut self, node: Node<P>) -> u32 {
        self.nodes.push(node);
        (self.nodes.len() - 1) as u32
    }

    /// Index of the node for `prefix`, creating it (and any glue) if needed.
    fn locate_or_create(&mut self, prefix: IpPrefix) -> usize {
        let mut idx = Self::root(prefix.version());
        loop {
            let node_prefix = self.nodes[idx as usize].prefix;
            if node_prefix == prefix {
                return idx as usize;
            }
            let side = prefix.bit(node_prefix.len());
            let child = self.nodes[idx as usize].children[side];
            if child == NIL {
                let leaf = self.push(Node::new(prefix, None));
                self.nodes[idx as usize].children[side] = leaf;
                return leaf as usize;
            }
            let child_prefix = self.nodes[child as usize].prefix;
            if child_prefix.covers(&prefix) {
                idx = child;
                continue;
            }
            if prefix.covers(&child_prefix) {
                let mut node = Node::new(prefix, None);
                node.children[child_prefix.bit(prefix.len())] = child;
                let new = self.push(node);
                self.nodes[idx as usize].children[side] = new;
                return new as usize;
            }
            let common = prefix.common(&child_prefix);
            let mut glue = Node::new(common, None);
            glue.children[child_prefix.bit(common.len())] = child;
            let glue_idx = self.push(glue);
            let leaf = self.push(Node::new(prefix, None));
            self.nodes[glue_idx as usize].children[prefix.bit(common.len())] = leaf;
            self.nodes[idx as usize].children[side] = glue_idx;
            return leaf as usize;
        }
    }

    /// Stores `value` at `prefix`, returning the previous payload.
    pub fn insert(&mut self, prefix: IpPrefix, value: P) -> Option<P> {
        let idx = self.locate_or_create(prefix);
        let old = self.nodes[idx].value.replace(value);
        if old.is_none() {
            self.occupied += 1;
        }
        old
    }

    pub fn get_or_insert_with(&mut self, prefix: IpPrefix, make: impl FnOnce() -> P) -> &mut P {
        let idx = self.locate_or_create(prefix);
        if self.nodes[idx].value.is_none() {
            self.occupied += 1;
        }
        self.nodes[idx].value.get_or_insert_with(make)
    }

    fn find(&self, prefix: &IpPrefix) -> Option<usize> {
        let mut idx = Self::root(prefix.version());
        loop {
            let node = &self.nodes[idx as usize];
            if node.prefix == *prefix {
                return Some(idx as usize);
            }
            if !node.prefix.covers(prefix) {
                return None;
            }
            idx = node.children[prefix.bit(node.prefix.len())];
            if idx == NIL {
                return None;
            }
        }
    }

    pub fn get(&self, prefix: &IpPrefix) -> Option<&P> {
        self.find(prefix).and_then(|i| self.nodes[i].value.as_ref())
    }

    pub fn get_mut(&mut self, prefix: &IpPrefix) -> Option<&mut P> {
        self.find(prefix).and_then(move |i| self.nodes[i].value.as_mut())
    }

    pub fn contains_key(&self, prefix: &IpPrefix) -> bool {
        self.get(prefix).is_some()
    }

    /// All stored prefixes covering `prefix` (itself included), shortest first.
    pub fn covering(&self, prefix: &IpPrefix) -> Vec<(IpPrefix, &P)> {
        let mut out = Vec::new();
        let mut idx = Self::root(prefix.version());
        while idx != NIL {
            let node = &self.nodes[idx as usize];
            if !node.prefix.covers(prefix) {
                break;
            }
            if let Some(v) = &node.value {
                out.push((node.prefix, v));
            }
            if node.prefix.len() == prefix.len() {
                break;
            }
            idx = node.children[prefix.bit(node.prefix.len())];
        }
        out
    }

    /// Longest stored prefix covering `prefix` (itself included).
    pub fn lpm_prefix(&self, prefix: &IpPrefix) -> Option<(IpPrefix, &P)> {
        self.covering(prefix).pop()
    }

    /// Longest-prefix match for a single address.
    pub fn lpm(&self, addr: &IpAddr) -> Option<(IpPrefix, &P)> {
        self.lpm_prefix(&IpPrefix::host(*addr))
    }

    /// First node whose prefix is covered by `prefix`: the root of the
    /// sub-trie holding everything inside `prefix`.
    fn subtree_root(&self, prefix: &IpPrefix) -> Option<u32> {
        let mut idx = Self::root(prefix.version());
        loop {
            let node = &self.nodes[idx as usize];
            if prefix.covers(&node.prefix) {
                return Some(idx);
            }
            if !node.prefix.covers(prefix) {
                return None;
            }
            idx = node.children[prefix.bit(node.prefix.len())];
            if idx == NIL {
                return None;
            }
        }
    }

    /// Pre-order walk from `start`. `visit` returns whether to descend below
    /// the node it was given.
    fn walk<'a>(&'a self, start: u32, mut visit: impl FnMut(&'a Node<P>) -> bool) {
        let mut stack = vec![start];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx as usize];
            if visit(node) {
                for &c in node.children.iter().rev() {
                    if c != NIL {
                        stack.push(c);
                    }
                }
            }
        }
    }

    /// Stored entries covered by `prefix` (itself included), in order.
    pub fn iter_within(&self, prefix: &IpPrefix) -> Vec<(IpPrefix, &P)> {
        let mut out = Vec::new();
        if let Some(start) = self.subtree_root(prefix) {
            self.walk(start, |n| {
                if let Some(v) = &n.value {
                    out.push((n.prefix, v));
                }
                true
            });
        }
        out
    }

    /// Every stored entry, IPv4 before IPv6, prefix-lexicographic.
    pub fn iter(&self) -> impl Iterator<Item = (IpPrefix, &P)> + '_ {
        let mut all = self.iter_within(&IpPrefix::root(IpVersion::V4));
        all.extend(self.iter_within(&IpPrefix::root(IpVersion::V6)));
        all.into_iter()
    }

    /// Nearest occupied prefixes strictly inside `prefix`.
    ///
    /// Results are clipped to `max_len`: an occupied node deeper than
    /// `max_len` is reported at its `max_len` ancestor, and all nodes clipped
    /// onto the same ancestor share one entry. Output is sorted and pairwise
    /// non-overlapping.
    pub fn next_subprefixes(&self, prefix: &IpPrefix, max_len: u8) -> Vec<Subprefix<'_, P>> {
        let mut out: Vec<Subprefix<'_, P>> = Vec::new();
        if max_len <= prefix.len() {
            return out;
        }
        let Some(start) = self.subtree_root(prefix) else {
            return out;
        };
        self.walk(start, |n| {
            if n.prefix == *prefix {
                return true;
            }
            let Some(v) = &n.value else {
                return true;
            };
            let reported = n.prefix.truncate(max_len);
            match out.last_mut() {
                Some(last) if last.prefix == reported => last.payloads.push(v),
                _ => out.push(Subprefix { prefix: reported, payloads: vec![v] }),
            }
            false
        });
        out
    }
}
