//! Forwarding table aggregation engine.
//!
//! Routers install routes into a forwarding table (FIB) that resolves
//! packet destinations by longest prefix match. Neighboring routes
//! frequently share a next hop, so the table can be shrunk without
//! changing where any packet goes. This crate maintains such a shrunken
//! table on a path-compressed binary trie: a one-pass static aggregation
//! builds it, and route announcements and withdrawals are folded in
//! incrementally, touching only the subtree and ancestor chain around
//! the changed node and emitting the exact set of entry adds, changes,
//! and deletes the data plane must apply.
//!
//! Aggregation is only worth having if it is provably safe, so the
//! crate carries its own referees: snapshot extraction, a per-region
//! equivalence check, an exhaustive per-address sweep for small
//! families, re-aggregation from scratch as an oracle, and a seeded
//! fuzz campaign that runs all of them after every update.
//!
//! Modules:
//!
//! * [`prefix`] — address families, prefixes, addresses, parsing.
//! * [`patricia`] — the path-compressed trie and its bookkeeping.
//! * [`faqs`] — aggregation itself: static pass, announce, withdraw.
//! * [`verify`] — snapshots and the independent correctness checks.
//! * [`metrics`] — replay statistics and report rendering.
//! * [`io`] — table and trace file formats.
//! * [`fuzz`] — the seeded randomized campaign.
//! * [`cli`] — the `fibagg` command-line driver.

pub mod cli;
pub mod faqs;
pub mod fuzz;
pub mod io;
pub mod metrics;
pub mod patricia;
pub mod prefix;
pub mod verify;

pub use faqs::{ApplyOutcome, ChangeSet, FibChange, RouteUpdate, UpdateWarning};
pub use patricia::{EngineError, FibStatus, FibTrie, NextHop, NodeInfo, NodeType};
pub use prefix::{AddressFamily, IpAddress, IpPrefix, PrefixError};
pub use verify::{FibSnapshot, SnapshotView};
