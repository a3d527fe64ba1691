//! FIB aggregation on the trie, static and incremental.
//!
//! The aggregated table is described per node by the `selected` next hop
//! and the FIB status. A node's prefix is emitted iff its selected hop
//! differs from its parent's: equal hops are absorbed into the covering
//! prefix. Selection itself looks one level down: when both children sit
//! exactly one bit deeper and the right child's selected hop differs
//! from the node's own (original) hop, the node adopts the left child's
//! selection, letting one child's entry stand for the pair; in every
//! other case the node keeps its original hop. `Fake` nodes first
//! inherit their original hop from the nearest `Real` ancestor.
//!
//! [`FibTrie::static_aggregate`] computes all three fields in a single
//! walk: original hops flow down on the way in, selections and child
//! statuses are settled on the way out.
//!
//! Incremental updates never re-aggregate. A route change re-derives
//! original hops below the touched node, stopping at `Real` nodes since
//! their regions cannot be affected, re-selects bottom-up over exactly
//! the visited region, then walks the ancestor chain re-selecting until
//! a node's selected hop is unchanged, which screens everything above.
//! Announcements of a hop equal to what the region already inherits
//! skip the traversals entirely.
//!
//! Every mutation funnels through a [`ChangeRecorder`] that captures the
//! first-seen state per prefix; at the end of an update the recorder is
//! diffed against the final state, so transient flips coalesce and each
//! update yields at most one change per prefix.

use std::collections::HashMap;
use std::fmt;

use crate::patricia::{EngineError, FibStatus, FibTrie, NextHop, Node, NodeId, TraceKind};
use crate::prefix::IpPrefix;

/// One routing update: a route announcement or a withdrawal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteUpdate {
    Announce { prefix: IpPrefix, next_hop: NextHop },
    Withdraw { prefix: IpPrefix },
}

impl RouteUpdate {
    pub fn prefix(&self) -> &IpPrefix {
        match self {
            RouteUpdate::Announce { prefix, .. } => prefix,
            RouteUpdate::Withdraw { prefix } => prefix,
        }
    }
}

impl fmt::Display for RouteUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteUpdate::Announce { prefix, next_hop } => write!(f, "A {prefix} {next_hop}"),
            RouteUpdate::Withdraw { prefix } => write!(f, "W {prefix}"),
        }
    }
}

/// One edit to the aggregated forwarding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FibChange {
    /// The prefix enters the table.
    Add { prefix: IpPrefix, next_hop: NextHop },
    /// The prefix stays but forwards to a different next hop.
    Change { prefix: IpPrefix, next_hop: NextHop },
    /// The prefix leaves the table.
    Delete { prefix: IpPrefix },
}

impl FibChange {
    pub fn prefix(&self) -> IpPrefix {
        match self {
            FibChange::Add { prefix, .. }
            | FibChange::Change { prefix, .. }
            | FibChange::Delete { prefix } => *prefix,
        }
    }
}

impl fmt::Display for FibChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FibChange::Add { prefix, next_hop } => write!(f, "ADD {prefix} -> {next_hop}"),
            FibChange::Change { prefix, next_hop } => write!(f, "CHANGE {prefix} -> {next_hop}"),
            FibChange::Delete { prefix } => write!(f, "DELETE {prefix}"),
        }
    }
}

/// Net forwarding-table edits produced by one update, at most one per
/// prefix, ordered by prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChangeSet {
    changes: Vec<FibChange>,
}

impl ChangeSet {
    /// Number of table edits ("burst size" in update-cost terms).
    pub fn burst_size(&self) -> usize {
        self.changes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FibChange> {
        self.changes.iter()
    }

    pub fn as_slice(&self) -> &[FibChange] {
        &self.changes
    }
}

impl<'a> IntoIterator for &'a ChangeSet {
    type Item = &'a FibChange;
    type IntoIter = std::slice::Iter<'a, FibChange>;
    fn into_iter(self) -> Self::IntoIter {
        self.changes.iter()
    }
}

impl fmt::Display for ChangeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for change in &self.changes {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{change}")?;
            first = false;
        }
        Ok(())
    }
}

/// Anomaly signalled by an otherwise successful update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateWarning {
    /// Withdrawal of a prefix the table has no node for.
    UnknownPrefix(IpPrefix),
    /// Withdrawal of a prefix that exists only structurally.
    NotAnnounced(IpPrefix),
}

impl fmt::Display for UpdateWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateWarning::UnknownPrefix(p) => write!(f, "withdrawal of unknown prefix {p}"),
            UpdateWarning::NotAnnounced(p) => {
                write!(f, "withdrawal of {p} which holds no announced route")
            }
        }
    }
}

/// Result of applying one update.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApplyOutcome {
    pub changes: ChangeSet,
    pub warning: Option<UpdateWarning>,
}

/// The forwarding-table entry a node currently contributes, if any.
#[inline]
pub(crate) fn fib_entry(node: &Node) -> Option<NextHop> {
    node.in_fib().then(|| node.effective_selected())
}

/// Captures per-prefix state the first time a node is about to change,
/// then diffs against the final state. Intermediate flips cancel out.
///
/// A muted recorder skips the bookkeeping entirely, for callers that
/// re-aggregate purely to compare tables and discard the change set.
struct ChangeRecorder {
    before: HashMap<IpPrefix, Option<NextHop>>,
    muted: bool,
}

impl ChangeRecorder {
    fn new() -> Self {
        ChangeRecorder {
            before: HashMap::new(),
            muted: false,
        }
    }

    fn muted() -> Self {
        ChangeRecorder {
            before: HashMap::new(),
            muted: true,
        }
    }

    /// Must run before any mutation of `id`'s entry-relevant state.
    fn touch(&mut self, trie: &FibTrie, id: NodeId) {
        if self.muted {
            return;
        }
        let node = trie.node(id);
        self.before
            .entry(node.prefix)
            .or_insert_with(|| fib_entry(node));
    }

    fn finalize(self, trie: &FibTrie) -> ChangeSet {
        let mut changes = Vec::new();
        for (prefix, before) in self.before {
            let after = trie
                .find_exact_id(&prefix)
                .and_then(|id| fib_entry(trie.node(id)));
            match (before, after) {
                (None, Some(next_hop)) => changes.push(FibChange::Add { prefix, next_hop }),
                (Some(_), None) => changes.push(FibChange::Delete { prefix }),
                (Some(old), Some(new)) if old != new => changes.push(FibChange::Change {
                    prefix,
                    next_hop: new,
                }),
                _ => {}
            }
        }
        changes.sort_by_key(FibChange::prefix);
        ChangeSet { changes }
    }
}

impl FibTrie {
    /// Computes the aggregated table from scratch in one traversal.
    ///
    /// Going down, structural nodes inherit their original hop from the
    /// parent; coming back up, each node's selection and its children's
    /// FIB statuses are settled. The root is always emitted.
    ///
    /// Returns the net table edits relative to the previous aggregated
    /// state; on a freshly loaded trie that is the whole table as adds.
    pub fn static_aggregate(&mut self) -> ChangeSet {
        let mut rec = ChangeRecorder::new();
        self.aggregate_with(&mut rec);
        rec.finalize(self)
    }

    /// [`Self::static_aggregate`] without the change tracking, for
    /// reference rebuilds whose change set nobody reads.
    pub(crate) fn static_aggregate_quiet(&mut self) {
        let mut rec = ChangeRecorder::muted();
        self.aggregate_with(&mut rec);
    }

    fn aggregate_with(&mut self, rec: &mut ChangeRecorder) {
        let root = self.root_id();
        let mut order = Vec::with_capacity(self.node_count());
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            // Parents are visited first, so a fake node's parent already
            // carries its settled original hop.
            if let Some(parent) = self.node(id).parent {
                if !self.node(id).is_real() {
                    let inherited = self.node(parent).original;
                    if self.node(id).original != inherited {
                        rec.touch(self, id);
                        self.node_mut(id).original = inherited;
                    }
                }
            }
            order.push(id);
            for child in self.node(id).children.into_iter().flatten() {
                stack.push(child);
            }
        }
        // Reverse visit order puts every child before its parent.
        for &id in order.iter().rev() {
            self.set_selected_next_hop(id, rec);
            self.set_child_fib_status(id, rec);
        }
        if !self.node(root).in_fib() {
            rec.touch(self, root);
            self.set_status(root, FibStatus::InFib);
        }
        self.aggregated = true;
    }

    /// Applies one update to an aggregated table.
    pub fn apply(&mut self, update: &RouteUpdate) -> Result<ApplyOutcome, EngineError> {
        if !self.aggregated {
            return Err(EngineError::NotAggregated);
        }
        match update {
            RouteUpdate::Announce { prefix, next_hop } => {
                self.announce(prefix, *next_hop)
                    .map(|changes| ApplyOutcome {
                        changes,
                        warning: None,
                    })
            }
            RouteUpdate::Withdraw { prefix } => self.withdraw(prefix),
        }
    }

    /// Installs or updates a route and repairs the aggregation around it.
    ///
    /// A new route whose hop matches what its parent already supplies
    /// cannot alter the aggregated table, so no traversal runs; the same
    /// holds for re-announcing an unchanged hop.
    pub fn announce(&mut self, prefix: &IpPrefix, hop: NextHop) -> Result<ChangeSet, EngineError> {
        self.check_family(prefix.family())?;
        let mut rec = ChangeRecorder::new();
        match self.find_exact_id(prefix) {
            Some(id) => {
                if !self.node(id).is_real() {
                    self.retype_real(id);
                }
                if self.node(id).original != hop {
                    rec.touch(self, id);
                    self.node_mut(id).original = hop;
                    let parent = self.node(id).parent;
                    self.update_subtree(id, &mut rec);
                    self.refresh_ancestors(parent, &mut rec);
                }
            }
            None => {
                let (id, _) = self.insert_structural(prefix)?;
                self.retype_real(id);
                self.node_mut(id).original = hop;
                let parent = self.node(id).parent.expect("new node has a parent");
                if self.node(parent).original != hop {
                    self.update_subtree(id, &mut rec);
                    self.refresh_ancestors(Some(parent), &mut rec);
                }
            }
        }
        if prefix.is_default_route() {
            self.explicit_default = true;
        }
        Ok(rec.finalize(self))
    }

    /// Removes a route and repairs the aggregation around it.
    ///
    /// A branch-point route is retyped structural rather than removed; a
    /// route with at most one child is removed outright, merging a glue
    /// parent left with a single child. Withdrawing the default route
    /// resets the root to drop. Unknown or structural-only prefixes are
    /// a warning, not an error.
    pub fn withdraw(&mut self, prefix: &IpPrefix) -> Result<ApplyOutcome, EngineError> {
        self.check_family(prefix.family())?;
        let mut rec = ChangeRecorder::new();

        if prefix.is_default_route() {
            if !self.explicit_default {
                return Ok(warned(UpdateWarning::UnknownPrefix(*prefix)));
            }
            self.explicit_default = false;
            let root = self.root_id();
            if self.node(root).original != NextHop::DROP {
                rec.touch(self, root);
                self.node_mut(root).original = NextHop::DROP;
                self.update_subtree(root, &mut rec);
            }
            return Ok(ApplyOutcome {
                changes: rec.finalize(self),
                warning: None,
            });
        }

        let Some(id) = self.find_exact_id(prefix) else {
            return Ok(warned(UpdateWarning::UnknownPrefix(*prefix)));
        };
        if !self.node(id).is_real() {
            return Ok(warned(UpdateWarning::NotAnnounced(*prefix)));
        }

        let parent = self.node(id).parent.expect("non-root node has a parent");
        if self.node(id).children.iter().all(Option::is_some) {
            // Still a divergence point: keep the node, drop the route.
            // From here this is the announce path with the inherited hop.
            self.retype_fake(id);
            let inherited = self.node(parent).original;
            if self.node(id).original != inherited {
                rec.touch(self, id);
                self.node_mut(id).original = inherited;
                self.update_subtree(id, &mut rec);
                self.refresh_ancestors(Some(parent), &mut rec);
            }
        } else {
            rec.touch(self, id);
            let is_leaf = self.node(id).children.iter().all(Option::is_none);
            if is_leaf && !self.node(parent).is_real() {
                // The glue parent will merge away; record its exit.
                rec.touch(self, parent);
            }
            let outcome = self.remove_structural(id);
            if let Some(child) = outcome.surviving_child {
                // The child lost a Real ancestor; re-derive its region.
                let new_parent = self.node(child).parent.expect("reparented under anchor");
                let inherited = self.node(new_parent).original;
                if !self.node(child).is_real() && self.node(child).original != inherited {
                    rec.touch(self, child);
                    self.node_mut(child).original = inherited;
                    self.update_subtree(child, &mut rec);
                }
            }
            self.refresh_ancestors(Some(outcome.anchor), &mut rec);
        }
        Ok(ApplyOutcome {
            changes: rec.finalize(self),
            warning: None,
        })
    }

    /// Recomputes a node's selected next hop. Returns whether the value
    /// changed; an unset selection reads as the original hop, which is
    /// what a full recomputation would have stored.
    fn set_selected_next_hop(&mut self, id: NodeId, rec: &mut ChangeRecorder) -> bool {
        let (own_len, original, children) = {
            let node = self.node(id);
            (node.prefix.len(), node.original, node.children)
        };
        let new = match children {
            [Some(left), Some(right)]
                if self.node(left).prefix.len() == own_len + 1
                    && self.node(right).prefix.len() == own_len + 1
                    && self.node(right).effective_selected() != original =>
            {
                // The children tile this node's block exactly; absorbing
                // the left child's hop lets its entry be dropped.
                self.node(left).effective_selected()
            }
            _ => original,
        };
        let old = self.node(id).effective_selected();
        if new != old {
            rec.touch(self, id);
        }
        self.node_mut(id).selected = Some(new);
        new != old
    }

    /// Re-evaluates which children are emitted: exactly those whose
    /// selected hop differs from this node's.
    fn set_child_fib_status(&mut self, id: NodeId, rec: &mut ChangeRecorder) {
        let own = self.node(id).effective_selected();
        for child in self.node(id).children {
            let Some(child) = child else { continue };
            let status = if self.node(child).effective_selected() != own {
                FibStatus::InFib
            } else {
                FibStatus::NonFib
            };
            if self.node(child).status != status {
                rec.touch(self, child);
                self.set_status(child, status);
            }
        }
    }

    /// Pushes `start`'s original hop into its structural descendants and
    /// re-selects over the visited region bottom-up.
    ///
    /// Descent stops at `Real` nodes: their regions derive from their own
    /// hops and cannot be affected. The walk never leaves the subtree.
    fn update_subtree(&mut self, start: NodeId, rec: &mut ChangeRecorder) {
        let mut order = vec![start];
        let mut i = 0;
        while i < order.len() {
            let id = order[i];
            i += 1;
            self.trace_visit(TraceKind::Subtree, id);
            let inherited = self.node(id).original;
            for child in self.node(id).children {
                let Some(child) = child else { continue };
                if !self.node(child).is_real() {
                    if self.node(child).original != inherited {
                        rec.touch(self, child);
                        self.node_mut(child).original = inherited;
                    }
                    order.push(child);
                }
            }
        }
        for &id in order.iter().rev() {
            self.set_selected_next_hop(id, rec);
            self.set_child_fib_status(id, rec);
        }
    }

    /// Re-selects upward from `start` (inclusive), stopping once a
    /// node's selected hop is unchanged: selection only reads one level
    /// down, so an unchanged value screens every node above it.
    fn refresh_ancestors(&mut self, start: Option<NodeId>, rec: &mut ChangeRecorder) {
        let mut cursor = start;
        while let Some(id) = cursor {
            self.trace_visit(TraceKind::Ancestors, id);
            let changed = self.set_selected_next_hop(id, rec);
            self.set_child_fib_status(id, rec);
            if !changed {
                break;
            }
            cursor = self.node(id).parent;
        }
    }
}

fn warned(warning: UpdateWarning) -> ApplyOutcome {
    ApplyOutcome {
        changes: ChangeSet::default(),
        warning: Some(warning),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patricia::{NodeType, TraceEvent};
    use crate::prefix::{parse_prefix, AddressFamily};
    use crate::verify::{self, SnapshotView};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn p(text: &str) -> IpPrefix {
        parse_prefix(text, AddressFamily::V4).unwrap()
    }

    /// Worked example used across the crate: five routes, three of which
    /// aggregate away.
    fn sample_trie() -> FibTrie {
        let mut trie = FibTrie::new(AddressFamily::V4, NextHop::DROP);
        for (prefix, hop) in [
            ("141.92.0.0/16", 1),
            ("141.92.64.0/18", 1),
            ("141.92.0.0/19", 1),
            ("141.92.192.0/19", 2),
            ("141.92.224.0/19", 2),
        ] {
            trie.load_route(&p(prefix), NextHop(hop)).unwrap();
        }
        trie
    }

    fn aggregated_sample() -> FibTrie {
        let mut trie = sample_trie();
        trie.static_aggregate();
        trie
    }

    #[track_caller]
    fn assert_node(
        trie: &FibTrie,
        prefix: &str,
        node_type: NodeType,
        original: u32,
        selected: u32,
        status: FibStatus,
    ) {
        let info = trie
            .find_exact(&p(prefix))
            .unwrap_or_else(|| panic!("{prefix} missing"));
        assert_eq!(info.node_type, node_type, "{prefix} type");
        assert_eq!(
            info.original_next_hop,
            NextHop(original),
            "{prefix} original"
        );
        assert_eq!(
            info.selected_next_hop,
            Some(NextHop(selected)),
            "{prefix} selected"
        );
        assert_eq!(info.fib_status, status, "{prefix} status");
    }

    #[test]
    fn static_aggregation_settles_every_field() {
        let trie = aggregated_sample();
        use FibStatus::*;
        use NodeType::*;
        assert_node(&trie, "0.0.0.0/0", Real, 0, 0, InFib);
        assert_node(&trie, "141.92.0.0/16", Real, 1, 1, InFib);
        assert_node(&trie, "141.92.0.0/17", Fake, 1, 1, NonFib);
        assert_node(&trie, "141.92.0.0/19", Real, 1, 1, NonFib);
        assert_node(&trie, "141.92.64.0/18", Real, 1, 1, NonFib);
        // The right-hand branch point absorbs its children's shared hop
        // and is the only entry emitted for that block.
        assert_node(&trie, "141.92.192.0/18", Fake, 1, 2, InFib);
        assert_node(&trie, "141.92.192.0/19", Real, 2, 2, NonFib);
        assert_node(&trie, "141.92.224.0/19", Real, 2, 2, NonFib);
        assert_eq!(trie.in_fib_count(), 3);
        assert_eq!(trie.real_count(), 6);
        assert_eq!(trie.node_count(), 8);
        trie.check_invariants().unwrap();
    }

    #[test]
    fn first_aggregation_reports_the_whole_table_as_adds() {
        let mut trie = sample_trie();
        let changes = trie.static_aggregate();
        assert_eq!(
            changes.as_slice(),
            &[
                FibChange::Add {
                    prefix: p("0.0.0.0/0"),
                    next_hop: NextHop(0)
                },
                FibChange::Add {
                    prefix: p("141.92.0.0/16"),
                    next_hop: NextHop(1)
                },
                FibChange::Add {
                    prefix: p("141.92.192.0/18"),
                    next_hop: NextHop(2)
                },
            ]
        );
    }

    #[test]
    fn reaggregation_is_a_fixed_point() {
        let mut trie = aggregated_sample();
        let changes = trie.static_aggregate();
        assert!(changes.is_empty(), "unexpected changes: {changes}");
    }

    #[test]
    fn empty_table_aggregates_to_the_default_entry() {
        let mut trie = FibTrie::new(AddressFamily::V4, NextHop::DROP);
        let changes = trie.static_aggregate();
        assert_eq!(
            changes.as_slice(),
            &[FibChange::Add {
                prefix: p("0.0.0.0/0"),
                next_hop: NextHop(0)
            }]
        );
        assert_eq!(trie.in_fib_count(), 1);
    }

    #[test]
    fn covering_announce_splits_the_aggregate() {
        let mut trie = aggregated_sample();
        let changes = trie.announce(&p("141.92.0.0/16"), NextHop(2)).unwrap();
        // The /16 now forwards to 2: the left half must be re-exposed
        // and the right-hand aggregate is absorbed.
        assert_eq!(
            changes.as_slice(),
            &[
                FibChange::Change {
                    prefix: p("141.92.0.0/16"),
                    next_hop: NextHop(2)
                },
                FibChange::Add {
                    prefix: p("141.92.0.0/19"),
                    next_hop: NextHop(1)
                },
                FibChange::Add {
                    prefix: p("141.92.64.0/18"),
                    next_hop: NextHop(1)
                },
                FibChange::Delete {
                    prefix: p("141.92.192.0/18")
                },
            ]
        );
        assert_eq!(changes.burst_size(), 4);
        verify::check_equivalence(&trie).unwrap();
        trie.check_invariants().unwrap();
    }

    #[test]
    fn covered_announce_with_inherited_hop_is_free() {
        let mut trie = aggregated_sample();
        let changes = trie.announce(&p("141.92.0.0/20"), NextHop(1)).unwrap();
        assert!(changes.is_empty());
        // The shortcut leaves the new node unselected and out of the
        // table; its effective selection still reads correctly.
        let node = trie.find_exact(&p("141.92.0.0/20")).unwrap();
        assert_eq!(node.node_type, NodeType::Real);
        assert_eq!(node.selected_next_hop, None);
        assert_eq!(node.fib_status, FibStatus::NonFib);
        verify::check_equivalence(&trie).unwrap();
        trie.check_invariants().unwrap();
    }

    #[test]
    fn reannouncing_the_same_hop_is_a_no_op() {
        let mut trie = aggregated_sample();
        let before = verify::snapshot(&trie, SnapshotView::Aggregated);
        let changes = trie.announce(&p("141.92.64.0/18"), NextHop(1)).unwrap();
        assert!(changes.is_empty());
        assert_eq!(verify::snapshot(&trie, SnapshotView::Aggregated), before);
    }

    #[test]
    fn announcing_a_structural_prefix_retypes_in_place() {
        let mut trie = aggregated_sample();
        // The /18 branch point inherits hop 1; announcing 1 for it
        // changes nothing in the aggregated table.
        let changes = trie.announce(&p("141.92.192.0/18"), NextHop(1)).unwrap();
        assert!(changes.is_empty());
        let node = trie.find_exact(&p("141.92.192.0/18")).unwrap();
        assert_eq!(node.node_type, NodeType::Real);
        assert_eq!(trie.real_count(), 7);
        verify::check_equivalence(&trie).unwrap();
    }

    #[test]
    fn withdrawing_a_leaf_merges_and_reexposes_the_sibling() {
        let mut trie = aggregated_sample();
        let outcome = trie.withdraw(&p("141.92.192.0/19")).unwrap();
        assert_eq!(outcome.warning, None);
        assert_eq!(
            outcome.changes.as_slice(),
            &[
                FibChange::Delete {
                    prefix: p("141.92.192.0/18")
                },
                FibChange::Add {
                    prefix: p("141.92.224.0/19"),
                    next_hop: NextHop(2)
                },
            ]
        );
        assert_eq!(trie.node_count(), 6);
        verify::check_equivalence(&trie).unwrap();
        trie.check_invariants().unwrap();
    }

    #[test]
    fn withdrawing_a_branch_point_route_retypes_it() {
        let mut trie = aggregated_sample();
        trie.announce(&p("141.92.192.0/18"), NextHop(3)).unwrap();
        let outcome = trie.withdraw(&p("141.92.192.0/18")).unwrap();
        assert_eq!(outcome.warning, None);
        let node = trie.find_exact(&p("141.92.192.0/18")).unwrap();
        assert_eq!(node.node_type, NodeType::Fake);
        assert_eq!(node.original_next_hop, NextHop(1));
        // Back to the original aggregation: the /18 again stands for
        // both /19s.
        assert_eq!(node.fib_status, FibStatus::InFib);
        assert_eq!(node.selected_next_hop, Some(NextHop(2)));
        assert_eq!(trie.node_count(), 8);
        verify::check_equivalence(&trie).unwrap();
        trie.check_invariants().unwrap();
    }

    #[test]
    fn withdrawing_a_branch_point_with_inherited_hop_changes_nothing() {
        let mut trie = aggregated_sample();
        trie.announce(&p("141.92.192.0/18"), NextHop(1)).unwrap();
        let before = verify::snapshot(&trie, SnapshotView::Aggregated);
        let outcome = trie.withdraw(&p("141.92.192.0/18")).unwrap();
        assert!(outcome.changes.is_empty());
        assert_eq!(verify::snapshot(&trie, SnapshotView::Aggregated), before);
        assert_eq!(
            trie.find_exact(&p("141.92.192.0/18")).unwrap().node_type,
            NodeType::Fake
        );
        verify::check_equivalence(&trie).unwrap();
    }

    #[test]
    fn withdraw_then_reannounce_restores_the_table() {
        let mut trie = aggregated_sample();
        let before = verify::snapshot(&trie, SnapshotView::Aggregated);
        trie.withdraw(&p("141.92.192.0/19")).unwrap();
        trie.announce(&p("141.92.192.0/19"), NextHop(2)).unwrap();
        assert_eq!(verify::snapshot(&trie, SnapshotView::Aggregated), before);
        trie.check_invariants().unwrap();
    }

    #[test]
    fn unknown_withdrawal_warns_without_changes() {
        let mut trie = aggregated_sample();
        let outcome = trie.withdraw(&p("10.0.0.0/8")).unwrap();
        assert!(outcome.changes.is_empty());
        assert_eq!(
            outcome.warning,
            Some(UpdateWarning::UnknownPrefix(p("10.0.0.0/8")))
        );
    }

    #[test]
    fn structural_withdrawal_warns_without_changes() {
        let mut trie = aggregated_sample();
        let outcome = trie.withdraw(&p("141.92.0.0/17")).unwrap();
        assert!(outcome.changes.is_empty());
        assert_eq!(
            outcome.warning,
            Some(UpdateWarning::NotAnnounced(p("141.92.0.0/17")))
        );
    }

    #[test]
    fn default_route_announce_and_withdraw() {
        let mut trie = aggregated_sample();
        let changes = trie.announce(&p("0.0.0.0/0"), NextHop(9)).unwrap();
        assert!(trie.has_explicit_default());
        assert_eq!(
            changes.as_slice(),
            &[FibChange::Change {
                prefix: p("0.0.0.0/0"),
                next_hop: NextHop(9)
            }]
        );
        verify::check_equivalence(&trie).unwrap();

        let outcome = trie.withdraw(&p("0.0.0.0/0")).unwrap();
        assert_eq!(outcome.warning, None);
        assert!(!trie.has_explicit_default());
        assert_eq!(
            outcome.changes.as_slice(),
            &[FibChange::Change {
                prefix: p("0.0.0.0/0"),
                next_hop: NextHop(0)
            }]
        );
        // Root is never removed, only reset to drop.
        assert_eq!(
            trie.find_exact(&p("0.0.0.0/0")).unwrap().fib_status,
            FibStatus::InFib
        );

        let again = trie.withdraw(&p("0.0.0.0/0")).unwrap();
        assert_eq!(
            again.warning,
            Some(UpdateWarning::UnknownPrefix(p("0.0.0.0/0")))
        );
    }

    #[test]
    fn updates_require_prior_aggregation() {
        let mut trie = sample_trie();
        let update = RouteUpdate::Announce {
            prefix: p("10.0.0.0/8"),
            next_hop: NextHop(1),
        };
        assert_eq!(trie.apply(&update), Err(EngineError::NotAggregated));
    }

    #[test]
    fn traversals_stay_inside_their_regions() {
        let mut trie = aggregated_sample();
        trie.set_trace_enabled(true);
        trie.announce(&p("141.92.0.0/17"), NextHop(4)).unwrap();
        let trace = trie.take_trace();
        assert!(!trace.is_empty());
        let announced = p("141.92.0.0/17");
        for TraceEvent { kind, prefix } in trace {
            match kind {
                TraceKind::Subtree => assert!(
                    announced.covers(&prefix),
                    "subtree visit escaped to {prefix}"
                ),
                TraceKind::Ancestors => assert!(
                    prefix.covers(&announced) && prefix != announced,
                    "ancestor visit strayed to {prefix}"
                ),
            }
        }
    }

    #[test]
    fn withdrawal_traversals_stay_local() {
        let mut trie = aggregated_sample();
        trie.announce(&p("141.92.192.0/18"), NextHop(3)).unwrap();
        trie.set_trace_enabled(true);
        trie.withdraw(&p("141.92.192.0/18")).unwrap();
        let withdrawn = p("141.92.192.0/18");
        for TraceEvent { kind, prefix } in trie.take_trace() {
            match kind {
                TraceKind::Subtree => assert!(withdrawn.covers(&prefix)),
                TraceKind::Ancestors => assert!(prefix.covers(&withdrawn) && prefix != withdrawn),
            }
        }
    }

    #[test]
    fn changes_apply_cleanly_to_the_previous_snapshot() {
        let mut trie = aggregated_sample();
        let mut expected = verify::snapshot(&trie, SnapshotView::Aggregated);
        for update in [
            RouteUpdate::Announce {
                prefix: p("141.92.0.0/16"),
                next_hop: NextHop(2),
            },
            RouteUpdate::Withdraw {
                prefix: p("141.92.224.0/19"),
            },
            RouteUpdate::Announce {
                prefix: p("141.92.128.0/17"),
                next_hop: NextHop(2),
            },
            RouteUpdate::Withdraw {
                prefix: p("141.92.0.0/16"),
            },
        ] {
            let outcome = trie.apply(&update).unwrap();
            expected = expected.with_changes(&outcome.changes).unwrap();
            assert_eq!(
                expected,
                verify::snapshot(&trie, SnapshotView::Aggregated),
                "after {update}"
            );
        }
    }

    /// Randomized cross-check of the incremental machinery against a
    /// from-scratch re-aggregation, an exhaustive per-address sweep, and
    /// change-set replay, on a width where all three stay cheap.
    #[test]
    fn incremental_updates_match_static_reaggregation() {
        let width = 8;
        let family = AddressFamily::toy(width).unwrap();
        for seed in 0..6u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut trie = FibTrie::new(family, NextHop::DROP);
            let mut pool: Vec<IpPrefix> = Vec::new();
            for _ in 0..24 {
                let prefix = random_prefix(&mut rng, width);
                if trie
                    .load_route(&prefix, NextHop(rng.gen_range(1..=4)))
                    .is_ok()
                {
                    pool.push(prefix);
                }
            }
            trie.static_aggregate();
            let mut previous = verify::snapshot(&trie, SnapshotView::Aggregated);

            for step in 0..400 {
                let update = if !pool.is_empty() && rng.gen_bool(0.3) {
                    let victim = pool.swap_remove(rng.gen_range(0..pool.len()));
                    RouteUpdate::Withdraw { prefix: victim }
                } else {
                    let prefix = if !pool.is_empty() && rng.gen_bool(0.5) {
                        pool[rng.gen_range(0..pool.len())]
                    } else {
                        let fresh = random_prefix(&mut rng, width);
                        if !pool.contains(&fresh) {
                            pool.push(fresh);
                        }
                        fresh
                    };
                    RouteUpdate::Announce {
                        prefix,
                        next_hop: NextHop(rng.gen_range(1..=4)),
                    }
                };

                let outcome = trie.apply(&update).unwrap();
                assert_eq!(outcome.warning, None, "seed {seed} step {step}: {update}");
                trie.check_invariants()
                    .unwrap_or_else(|e| panic!("seed {seed} step {step} ({update}): {e}"));
                verify::check_equivalence(&trie)
                    .unwrap_or_else(|v| panic!("seed {seed} step {step} ({update}): {v}"));
                verify::brute_force_equivalence(&trie)
                    .unwrap_or_else(|v| panic!("seed {seed} step {step} ({update}): {v}"));

                let actual = verify::snapshot(&trie, SnapshotView::Aggregated);
                let oracle =
                    verify::static_oracle(&verify::snapshot(&trie, SnapshotView::Original));
                assert_eq!(actual, oracle, "seed {seed} step {step}: {update}");

                previous = previous
                    .with_changes(&outcome.changes)
                    .unwrap_or_else(|e| panic!("seed {seed} step {step} ({update}): {e}"));
                assert_eq!(previous, actual, "seed {seed} step {step}: {update}");
            }
        }
    }

    fn random_prefix(rng: &mut ChaCha8Rng, width: u8) -> IpPrefix {
        let family = AddressFamily::toy(width).unwrap();
        let len = rng.gen_range(1..=width);
        let bits = (rng.gen::<u32>() as u128) & ((1u128 << width) - 1);
        let masked = bits >> (width - len) << (width - len);
        IpPrefix::new(family, masked, len).unwrap()
    }
}
