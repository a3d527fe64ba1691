//! Independent correctness checks for the aggregation engine.
//!
//! Three checkers with different blind spots back each other up:
//!
//! * [`check_equivalence`] walks the trie once and compares, per node,
//!   the next hop the announced routes imply against the next hop the
//!   aggregated entries imply. Nodes whose children tile their block
//!   exactly (both children one bit longer) host no addresses of their
//!   own and are skipped; every address resolves to some non-tiled
//!   node's residual region, so this is per-address equivalence in
//!   O(nodes).
//! * [`brute_force_equivalence`] actually resolves every address of the
//!   family and compares the two views. Only affordable for toy widths,
//!   which is what they exist for.
//! * [`static_oracle`] rebuilds a fresh trie from the announced routes
//!   and aggregates it from scratch, giving a reference aggregated table
//!   to hold the incrementally maintained one against.
//!
//! [`compare_tables`] applies the same machinery to two route files with
//! no shared engine state, for offline verification.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::faqs::{fib_entry, ChangeSet, FibChange};
use crate::patricia::{FibStatus, FibTrie, NextHop};
use crate::prefix::{AddressFamily, IpAddress, IpPrefix};

/// Which side of the engine a snapshot captures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotView {
    /// The announced routes (including the root default).
    Original,
    /// The aggregated forwarding table.
    Aggregated,
}

/// An immutable prefix-to-next-hop table, ordered by prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FibSnapshot {
    view: SnapshotView,
    family: AddressFamily,
    entries: BTreeMap<IpPrefix, NextHop>,
}

impl FibSnapshot {
    pub fn from_entries(
        view: SnapshotView,
        family: AddressFamily,
        entries: impl IntoIterator<Item = (IpPrefix, NextHop)>,
    ) -> Self {
        FibSnapshot {
            view,
            family,
            entries: entries.into_iter().collect(),
        }
    }

    #[inline]
    pub fn view(&self) -> SnapshotView {
        self.view
    }

    #[inline]
    pub fn family(&self) -> AddressFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, prefix: &IpPrefix) -> Option<NextHop> {
        self.entries.get(prefix).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (IpPrefix, NextHop)> + '_ {
        self.entries.iter().map(|(p, h)| (*p, *h))
    }

    /// Longest-prefix match; absent coverage means drop.
    pub fn lpm(&self, addr: IpAddress) -> NextHop {
        assert_eq!(addr.family(), self.family, "family mismatch");
        for len in (0..=self.family.width()).rev() {
            if let Some(hop) = self.entries.get(&IpPrefix::from_address(addr, len)) {
                return *hop;
            }
        }
        NextHop::DROP
    }

    /// Replays a change set as strict map edits: adds must be new,
    /// changes must alter an existing entry, deletes must hit one.
    pub fn with_changes(&self, changes: &ChangeSet) -> Result<FibSnapshot, SnapshotEditError> {
        let mut entries = self.entries.clone();
        for change in changes {
            match *change {
                FibChange::Add { prefix, next_hop } => {
                    if entries.insert(prefix, next_hop).is_some() {
                        return Err(SnapshotEditError::AddOverExisting(prefix));
                    }
                }
                FibChange::Change { prefix, next_hop } => match entries.insert(prefix, next_hop) {
                    None => return Err(SnapshotEditError::ChangeOfMissing(prefix)),
                    Some(old) if old == next_hop => {
                        return Err(SnapshotEditError::ChangeWithoutEffect(prefix))
                    }
                    Some(_) => {}
                },
                FibChange::Delete { prefix } => {
                    if entries.remove(&prefix).is_none() {
                        return Err(SnapshotEditError::DeleteOfMissing(prefix));
                    }
                }
            }
        }
        Ok(FibSnapshot {
            view: self.view,
            family: self.family,
            entries,
        })
    }
}

/// A change set and the snapshot it was applied to disagree.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SnapshotEditError {
    #[error("ADD of {0} which is already present")]
    AddOverExisting(IpPrefix),
    #[error("CHANGE of {0} which is not present")]
    ChangeOfMissing(IpPrefix),
    #[error("CHANGE of {0} to its existing next hop")]
    ChangeWithoutEffect(IpPrefix),
    #[error("DELETE of {0} which is not present")]
    DeleteOfMissing(IpPrefix),
}

/// Extracts one side of the engine state as a plain table.
pub fn snapshot(trie: &FibTrie, view: SnapshotView) -> FibSnapshot {
    let mut entries = BTreeMap::new();
    trie.for_each_id(|t, id| {
        let node = t.node(id);
        match view {
            SnapshotView::Original => {
                if node.is_real() {
                    entries.insert(node.prefix, node.original);
                }
            }
            SnapshotView::Aggregated => {
                if let Some(hop) = fib_entry(node) {
                    entries.insert(node.prefix, hop);
                }
            }
        }
    });
    FibSnapshot {
        view,
        family: trie.family(),
        entries,
    }
}

/// A region whose original and aggregated forwarding differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub prefix: IpPrefix,
    pub original_hop: NextHop,
    pub aggregated_hop: NextHop,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "region {} forwards to {} originally but {} aggregated",
            self.prefix, self.original_hop, self.aggregated_hop
        )
    }
}

/// Verifies forwarding equivalence per node in one traversal.
///
/// Carries the nearest announced hop and the nearest emitted hop down
/// the trie and requires them to agree wherever a node keeps addresses
/// of its own (see the module notes on tiled nodes). Returns the first
/// offending region otherwise.
pub fn check_equivalence(trie: &FibTrie) -> Result<(), Violation> {
    debug_assert!(trie.is_aggregated(), "nothing to verify before aggregation");
    let root = trie.root_id();
    let mut stack = vec![(root, NextHop::DROP, NextHop::DROP)];
    while let Some((id, inherited_orig, inherited_aggr)) = stack.pop() {
        let node = trie.node(id);
        let orig = if node.is_real() {
            node.original
        } else {
            inherited_orig
        };
        let aggr = if node.in_fib() {
            node.effective_selected()
        } else {
            inherited_aggr
        };
        let own_len = node.prefix.len();
        let tiled = matches!(
            node.children,
            [Some(l), Some(r)]
                if trie.node(l).prefix.len() == own_len + 1
                    && trie.node(r).prefix.len() == own_len + 1
        );
        if !tiled && orig != aggr {
            return Err(Violation {
                prefix: node.prefix,
                original_hop: orig,
                aggregated_hop: aggr,
            });
        }
        // Reversed push so the left child pops first: a violation is
        // then reported for the lowest mismatching region.
        for child in node.children.into_iter().flatten().rev() {
            stack.push((child, orig, aggr));
        }
    }
    Ok(())
}

/// Failure of the exhaustive per-address sweep.
#[derive(Error, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteForceError {
    #[error("family width {width} too large to sweep exhaustively")]
    UnsupportedWidth { width: u8 },
    #[error(
        "address {address} forwards to {original_hop} originally but {aggregated_hop} aggregated"
    )]
    Mismatch {
        address: IpAddress,
        original_hop: NextHop,
        aggregated_hop: NextHop,
    },
}

/// Compact node record for the exhaustive sweep. The sweep runs once
/// per update in fuzz campaigns, so the trie is first copied into these
/// cache-dense records; the copy carries raw field values only, no
/// derived state.
struct SweepNode {
    /// Prefix bits shifted down to the prefix length.
    key: u32,
    /// Bits below the prefix: family width minus prefix length.
    shift: u8,
    len: u8,
    real: bool,
    in_fib: bool,
    original: u32,
    emitted: u32,
    children: [u32; 2],
}

const NO_CHILD: u32 = u32::MAX;

fn flatten_for_sweep(trie: &FibTrie, id: crate::patricia::NodeId, out: &mut Vec<SweepNode>) -> u32 {
    let node = trie.node(id);
    let width = trie.family().width();
    let index = out.len() as u32;
    out.push(SweepNode {
        key: (node.prefix.bits() >> (width - node.prefix.len())) as u32,
        shift: width - node.prefix.len(),
        len: node.prefix.len(),
        real: node.is_real(),
        in_fib: node.in_fib(),
        original: node.original.0,
        emitted: node.effective_selected().0,
        children: [NO_CHILD, NO_CHILD],
    });
    for slot in 0..2 {
        if let Some(child) = trie.node(id).children[slot] {
            let child_index = flatten_for_sweep(trie, child, out);
            out[index as usize].children[slot] = child_index;
        }
    }
    index
}

/// Resolves every address of the family in both views and compares.
///
/// Deliberately shares no logic with [`check_equivalence`]: each address
/// is looked up by an independent root-to-leaf walk, tracking the
/// deepest announced and deepest emitted covering entries. Widths above
/// 16 are refused.
pub fn brute_force_equivalence(trie: &FibTrie) -> Result<(), BruteForceError> {
    let family = trie.family();
    let width = family.width();
    if width > 16 {
        return Err(BruteForceError::UnsupportedWidth { width });
    }
    let mut nodes = Vec::with_capacity(trie.node_count());
    flatten_for_sweep(trie, trie.root_id(), &mut nodes);

    for value in 0..(1u32 << width) {
        let mut original_hop = NextHop::DROP.0;
        let mut aggregated_hop = NextHop::DROP.0;
        let mut cursor = 0usize;
        loop {
            let node = &nodes[cursor];
            if node.real {
                original_hop = node.original;
            }
            if node.in_fib {
                aggregated_hop = node.emitted;
            }
            if node.len == width {
                break;
            }
            let bit = (value >> (width - 1 - node.len)) & 1;
            let child = node.children[bit as usize];
            if child == NO_CHILD {
                break;
            }
            let next = &nodes[child as usize];
            if (value >> next.shift) != next.key {
                break;
            }
            cursor = child as usize;
        }
        if original_hop != aggregated_hop {
            return Err(BruteForceError::Mismatch {
                address: IpAddress::new(family, value as u128).expect("value fits the width"),
                original_hop: NextHop(original_hop),
                aggregated_hop: NextHop(aggregated_hop),
            });
        }
    }
    Ok(())
}

/// Reference aggregation: loads the announced routes into a fresh trie
/// and aggregates from scratch. Insensitive to entry order since the
/// trie shape is determined by the prefix set alone.
pub fn static_oracle(original: &FibSnapshot) -> FibSnapshot {
    debug_assert_eq!(original.view(), SnapshotView::Original);
    let family = original.family();
    let default_hop = original
        .get(&IpPrefix::default_route(family))
        .unwrap_or(NextHop::DROP);
    let mut trie = FibTrie::new(family, default_hop);
    for (prefix, hop) in original.iter() {
        if !prefix.is_default_route() {
            trie.load_route(&prefix, hop)
                .expect("snapshot entries are unique and one family");
        }
    }
    trie.static_aggregate_quiet();
    snapshot(&trie, SnapshotView::Aggregated)
}

/// [`static_oracle`] straight off a live trie, skipping the snapshot
/// detour: rebuilds a fresh trie from the announced routes and
/// aggregates it from scratch. This runs once per update in fuzz
/// campaigns, hence the leaner path.
pub fn reaggregate(trie: &FibTrie) -> FibSnapshot {
    let root_hop = trie.node(trie.root_id()).original;
    let mut fresh = FibTrie::new(trie.family(), root_hop);
    trie.for_each_id(|t, id| {
        let node = t.node(id);
        if node.is_real() && node.prefix.len() > 0 {
            fresh
                .load_route(&node.prefix, node.original)
                .expect("a live trie holds each route once");
        }
    });
    fresh.static_aggregate_quiet();
    snapshot(&fresh, SnapshotView::Aggregated)
}

/// Outcome of comparing two route tables for forwarding equivalence.
#[derive(Error, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareError {
    #[error("tables belong to different families ({left} vs {right})")]
    FamilyMismatch {
        left: AddressFamily,
        right: AddressFamily,
    },
    #[error("{0}")]
    Region(Violation),
    #[error("{0}")]
    Address(BruteForceError),
}

/// Checks that two tables forward every address identically.
///
/// Builds a union trie holding the first table as announced routes and
/// the second as emitted entries, then runs the per-region check and,
/// for sweepable widths, the exhaustive one. Absent default routes mean
/// drop on either side.
pub fn compare_tables(
    original: &FibSnapshot,
    aggregated: &FibSnapshot,
) -> Result<(), CompareError> {
    if original.family() != aggregated.family() {
        return Err(CompareError::FamilyMismatch {
            left: original.family(),
            right: aggregated.family(),
        });
    }
    let family = original.family();
    let default = IpPrefix::default_route(family);
    let mut trie = FibTrie::new(family, original.get(&default).unwrap_or(NextHop::DROP));
    for (prefix, hop) in original.iter() {
        if !prefix.is_default_route() {
            trie.load_route(&prefix, hop)
                .expect("snapshot entries are unique and one family");
        }
    }
    for (prefix, hop) in aggregated.iter() {
        let id = if prefix.is_default_route() {
            trie.root_id()
        } else {
            match trie.find_exact_id(&prefix) {
                Some(id) => id,
                None => {
                    trie.insert_structural(&prefix)
                        .expect("snapshot entries are unique and one family")
                        .0
                }
            }
        };
        trie.node_mut(id).selected = Some(hop);
        trie.set_status(id, FibStatus::InFib);
    }
    let root = trie.root_id();
    if !trie.node(root).in_fib() {
        let fallback = aggregated.get(&default).unwrap_or(NextHop::DROP);
        trie.node_mut(root).selected = Some(fallback);
        trie.set_status(root, FibStatus::InFib);
    }
    trie.aggregated = true;

    check_equivalence(&trie).map_err(CompareError::Region)?;
    if family.width() <= 16 {
        if let Err(err @ BruteForceError::Mismatch { .. }) = brute_force_equivalence(&trie) {
            return Err(CompareError::Address(err));
        }
    }
    Ok(())
}
