//! Path-compressed binary trie over canonical prefixes.
//!
//! Every stored prefix is a node; additionally a branch ("glue") node is
//! materialized wherever two stored prefixes diverge below their common
//! ancestor. Nodes are tagged `Real` (a route was announced for the
//! prefix) or `Fake` (structural only). The root is the `Real` default
//! route `0/0` at all times and is never removed.
//!
//! Each node carries the aggregation state the engine works on:
//!
//! * `original`: the announced next hop for `Real` nodes; for `Fake`
//!   nodes the value inherited from the nearest `Real` ancestor. Always
//!   populated; for `Fake` nodes it may lag until the next traversal
//!   refreshes the region it sits in.
//! * `selected`: the next hop chosen for the aggregated table. `None`
//!   until first computed; an unset value reads as `original`, which is
//!   exactly the value a full recomputation would assign (nodes skipped
//!   by the no-change shortcut satisfy this by construction).
//! * `status`: whether the node's prefix is emitted into the aggregated
//!   forwarding table.
//!
//! Structural invariants, checkable via [`FibTrie::check_invariants`]:
//! a child's prefix strictly extends its parent's; a child sits in the
//! slot named by its first bit past the parent's length; `Fake` nodes
//! have exactly two children; parent links mirror child links; the
//! cached node/real/in-FIB counts match full-traversal tallies.
//!
//! Nodes live in a slab with explicit parent indices: the update
//! algorithms walk both down (subtree refresh) and up (ancestor
//! re-selection), and the upward walk must be O(depth) without a
//! descent stack.

use std::fmt;

use thiserror::Error;

use crate::prefix::{AddressFamily, IpPrefix};

/// Opaque next-hop identifier. `0` is reserved for "drop".
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NextHop(pub u32);

impl NextHop {
    /// The discard next hop, used for the synthetic default route.
    pub const DROP: NextHop = NextHop(0);
}

impl fmt::Display for NextHop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for NextHop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whether a node holds an announced route or is purely structural.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeType {
    Real,
    Fake,
}

/// Whether a node's prefix is present in the aggregated table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FibStatus {
    InFib,
    NonFib,
}

/// Error raised by trie mutation entry points.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("family mismatch: trie is {trie}, argument is {argument}")]
    FamilyMismatch {
        trie: AddressFamily,
        argument: AddressFamily,
    },
    #[error("duplicate route for {0}")]
    DuplicateRoute(IpPrefix),
    #[error("table must be aggregated before incremental updates")]
    NotAggregated,
}

/// Slab index of a node. Stable for the node's lifetime.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) struct NodeId(u32);

impl NodeId {
    #[inline]
    fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) prefix: IpPrefix,
    pub(crate) node_type: NodeType,
    pub(crate) original: NextHop,
    pub(crate) selected: Option<NextHop>,
    pub(crate) status: FibStatus,
    pub(crate) parent: Option<NodeId>,
    pub(crate) children: [Option<NodeId>; 2],
}

impl Node {
    #[inline]
    pub(crate) fn is_real(&self) -> bool {
        self.node_type == NodeType::Real
    }

    #[inline]
    pub(crate) fn in_fib(&self) -> bool {
        self.status == FibStatus::InFib
    }

    /// The selected next hop a full recomputation would observe.
    #[inline]
    pub(crate) fn effective_selected(&self) -> NextHop {
        self.selected.unwrap_or(self.original)
    }

    fn child_count(&self) -> usize {
        self.children.iter().filter(|c| c.is_some()).count()
    }

    fn sole_child(&self) -> Option<NodeId> {
        match self.children {
            [Some(c), None] | [None, Some(c)] => Some(c),
            _ => None,
        }
    }
}

/// Read-only view of a node, for inspection and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeInfo {
    pub prefix: IpPrefix,
    pub node_type: NodeType,
    pub original_next_hop: NextHop,
    pub selected_next_hop: Option<NextHop>,
    pub fib_status: FibStatus,
    pub child_count: usize,
}

/// Which traversal recorded a [`TraceEvent`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Subtree,
    Ancestors,
}

/// One node visit, recorded when tracing is enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub kind: TraceKind,
    pub prefix: IpPrefix,
}

/// Result of a structural removal, for the caller driving recomputation.
pub(crate) struct RemovalOutcome {
    /// The single child that took the removed node's place, if any.
    pub(crate) surviving_child: Option<NodeId>,
    /// Node whose child set changed; re-selection restarts here.
    pub(crate) anchor: NodeId,
    /// Prefix of a glue parent merged away by compaction. The update
    /// logic does not need it (the anchor already accounts for the
    /// merge) but structural tests assert on it.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) merged_glue: Option<IpPrefix>,
}

/// Path-compressed trie holding both the announced routes and the
/// aggregation state derived from them.
pub struct FibTrie {
    family: AddressFamily,
    slots: Vec<Option<Node>>,
    free: Vec<u32>,
    root: NodeId,
    node_count: usize,
    real_count: usize,
    in_fib_count: usize,
    pub(crate) aggregated: bool,
    pub(crate) explicit_default: bool,
    trace: Option<Vec<TraceEvent>>,
}

impl FibTrie {
    /// Creates a trie holding only the root default route.
    ///
    /// The root is `Real` with `default_hop` as its next hop; its FIB
    /// status is settled by the first aggregation pass.
    pub fn new(family: AddressFamily, default_hop: NextHop) -> Self {
        let root = Node {
            prefix: IpPrefix::default_route(family),
            node_type: NodeType::Real,
            original: default_hop,
            selected: None,
            status: FibStatus::NonFib,
            parent: None,
            children: [None, None],
        };
        FibTrie {
            family,
            slots: vec![Some(root)],
            free: Vec::new(),
            root: NodeId(0),
            node_count: 1,
            real_count: 1,
            in_fib_count: 0,
            aggregated: false,
            explicit_default: default_hop != NextHop::DROP,
            trace: None,
        }
    }

    #[inline]
    pub fn family(&self) -> AddressFamily {
        self.family
    }

    /// Total nodes, including structural ones.
    #[inline]
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Nodes holding an announced route (the root always counts).
    #[inline]
    pub fn real_count(&self) -> usize {
        self.real_count
    }

    /// Nodes currently emitted into the aggregated table.
    #[inline]
    pub fn in_fib_count(&self) -> usize {
        self.in_fib_count
    }

    /// Whether an aggregation pass has run at least once.
    #[inline]
    pub fn is_aggregated(&self) -> bool {
        self.aggregated
    }

    /// Whether the default route was declared rather than synthesized.
    #[inline]
    pub fn has_explicit_default(&self) -> bool {
        self.explicit_default
    }

    #[inline]
    pub(crate) fn root_id(&self) -> NodeId {
        self.root
    }

    #[inline]
    pub(crate) fn node(&self, id: NodeId) -> &Node {
        self.slots[id.index()].as_ref().expect("stale node id")
    }

    #[inline]
    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.slots[id.index()].as_mut().expect("stale node id")
    }

    pub(crate) fn check_family(&self, argument: AddressFamily) -> Result<(), EngineError> {
        if self.family == argument {
            Ok(())
        } else {
            Err(EngineError::FamilyMismatch {
                trie: self.family,
                argument,
            })
        }
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        self.node_count += 1;
        match self.free.pop() {
            Some(i) => {
                self.slots[i as usize] = Some(node);
                NodeId(i)
            }
            None => {
                self.slots.push(Some(node));
                NodeId(self.slots.len() as u32 - 1)
            }
        }
    }

    fn release(&mut self, id: NodeId) -> Node {
        self.node_count -= 1;
        self.free.push(id.0);
        self.slots[id.index()].take().expect("double free")
    }

    /// Exact-match lookup by prefix.
    pub(crate) fn find_exact_id(&self, prefix: &IpPrefix) -> Option<NodeId> {
        debug_assert_eq!(prefix.family(), self.family);
        let mut cur = self.root;
        loop {
            let node = self.node(cur);
            if node.prefix == *prefix {
                return Some(cur);
            }
            if node.prefix.len() >= prefix.len() || !node.prefix.covers(prefix) {
                return None;
            }
            cur = node.children[prefix.bit_at(node.prefix.len()) as usize]?;
        }
    }

    /// Exact-match lookup; returns a read-only view of the node.
    pub fn find_exact(&self, prefix: &IpPrefix) -> Option<NodeInfo> {
        self.find_exact_id(prefix).map(|id| self.info(id))
    }

    pub(crate) fn info(&self, id: NodeId) -> NodeInfo {
        let n = self.node(id);
        NodeInfo {
            prefix: n.prefix,
            node_type: n.node_type,
            original_next_hop: n.original,
            selected_next_hop: n.selected,
            fib_status: n.status,
            child_count: n.child_count(),
        }
    }

    /// Inserts `prefix` as a new node, creating at most one glue node.
    ///
    /// The caller must have ruled out an existing exact match. Both the
    /// new node and any glue node start `Fake` with `original` copied
    /// from their parent at creation time, no selected hop, and out of
    /// the FIB; the caller retypes the new node as needed.
    ///
    /// Returns the new node and the glue node if one was created.
    pub(crate) fn insert_structural(
        &mut self,
        prefix: &IpPrefix,
    ) -> Result<(NodeId, Option<NodeId>), EngineError> {
        self.check_family(prefix.family())?;
        debug_assert!(prefix.len() > 0, "root insertion is not structural");
        let mut cur = self.root;
        loop {
            // Invariant: cur's prefix strictly covers `prefix`.
            let cur_node = self.node(cur);
            let slot = prefix.bit_at(cur_node.prefix.len()) as usize;
            let Some(child) = cur_node.children[slot] else {
                let id = self.attach_new(cur, slot, *prefix);
                return Ok((id, None));
            };
            let child_prefix = self.node(child).prefix;
            if child_prefix == *prefix {
                return Err(EngineError::DuplicateRoute(*prefix));
            }
            if child_prefix.covers(prefix) {
                cur = child;
                continue;
            }
            if prefix.covers(&child_prefix) {
                // New node slides in between cur and child.
                self.unlink(cur, child);
                let id = self.attach_new(cur, slot, *prefix);
                self.link(id, child);
                return Ok((id, None));
            }
            // Diverging siblings: a glue node at the branch point adopts
            // both the existing child and the new node.
            let glue_prefix = prefix.truncated(prefix.common_prefix_len(&child_prefix));
            self.unlink(cur, child);
            let glue = self.attach_new(cur, slot, glue_prefix);
            self.link(glue, child);
            let id = self.attach_new(glue, prefix.bit_at(glue_prefix.len()) as usize, *prefix);
            return Ok((id, Some(glue)));
        }
    }

    /// Allocates a fresh `Fake` node for `prefix` under `parent`.
    fn attach_new(&mut self, parent: NodeId, slot: usize, prefix: IpPrefix) -> NodeId {
        debug_assert!(self.node(parent).children[slot].is_none());
        let inherited = self.node(parent).original;
        let id = self.alloc(Node {
            prefix,
            node_type: NodeType::Fake,
            original: inherited,
            selected: None,
            status: FibStatus::NonFib,
            parent: Some(parent),
            children: [None, None],
        });
        self.node_mut(parent).children[slot] = Some(id);
        id
    }

    /// Re-links `child` under `parent` in the slot its prefix names.
    fn link(&mut self, parent: NodeId, child: NodeId) {
        let parent_len = self.node(parent).prefix.len();
        let slot = self.node(child).prefix.bit_at(parent_len) as usize;
        debug_assert!(self.node(parent).children[slot].is_none());
        self.node_mut(parent).children[slot] = Some(child);
        self.node_mut(child).parent = Some(parent);
    }

    /// Detaches `child` from `parent`, returning the vacated slot.
    fn unlink(&mut self, parent: NodeId, child: NodeId) -> usize {
        let parent_len = self.node(parent).prefix.len();
        let slot = self.node(child).prefix.bit_at(parent_len) as usize;
        debug_assert_eq!(self.node(parent).children[slot], Some(child));
        self.node_mut(parent).children[slot] = None;
        self.node_mut(child).parent = None;
        slot
    }

    /// Removes a node with at most one child from the structure.
    ///
    /// The single child, if any, takes the removed node's place. If the
    /// removal leaves a `Fake` parent with a single child, that parent
    /// is merged away as well (one level only; the merge cannot cascade
    /// because the grandparent keeps its child count).
    ///
    /// The caller handles nodes with two children by retyping instead,
    /// and must never pass the root.
    pub(crate) fn remove_structural(&mut self, id: NodeId) -> RemovalOutcome {
        assert!(id != self.root, "root is permanent");
        let parent = self.node(id).parent.expect("non-root node has a parent");
        debug_assert!(self.node(id).child_count() <= 1);

        let surviving_child = self.node(id).sole_child();
        let slot = self.unlink(parent, id);
        if let Some(child) = surviving_child {
            self.unlink(id, child);
            self.node_mut(parent).children[slot] = Some(child);
            self.node_mut(child).parent = Some(parent);
        }
        let node = self.release(id);
        if node.is_real() {
            self.real_count -= 1;
        }
        if node.in_fib() {
            self.in_fib_count -= 1;
        }

        // Compaction: a glue parent reduced to one child no longer marks
        // a divergence and is spliced out.
        let p = self.node(parent);
        if !p.is_real() && p.child_count() == 1 {
            let grand = p.parent.expect("fake node is never the root");
            let kept = p.sole_child().expect("checked: exactly one child");
            let merged_prefix = p.prefix;
            let was_in_fib = p.in_fib();
            let grand_slot = self.unlink(grand, parent);
            self.unlink(parent, kept);
            self.node_mut(grand).children[grand_slot] = Some(kept);
            self.node_mut(kept).parent = Some(grand);
            self.release(parent);
            if was_in_fib {
                self.in_fib_count -= 1;
            }
            return RemovalOutcome {
                surviving_child,
                anchor: grand,
                merged_glue: Some(merged_prefix),
            };
        }
        RemovalOutcome {
            surviving_child,
            anchor: parent,
            merged_glue: None,
        }
    }

    /// Records an announced route without running any recomputation.
    ///
    /// This is the bulk-load path used before the first aggregation
    /// pass. Declaring `0/0` re-points the root's next hop.
    pub fn load_route(&mut self, prefix: &IpPrefix, hop: NextHop) -> Result<(), EngineError> {
        self.check_family(prefix.family())?;
        if prefix.is_default_route() {
            if self.explicit_default {
                return Err(EngineError::DuplicateRoute(*prefix));
            }
            self.explicit_default = true;
            self.node_mut(self.root).original = hop;
            return Ok(());
        }
        match self.find_exact_id(prefix) {
            Some(id) => {
                let node = self.node_mut(id);
                if node.is_real() {
                    return Err(EngineError::DuplicateRoute(*prefix));
                }
                node.node_type = NodeType::Real;
                node.original = hop;
                self.real_count += 1;
            }
            None => {
                let (id, _) = self.insert_structural(prefix)?;
                let node = self.node_mut(id);
                node.node_type = NodeType::Real;
                node.original = hop;
                self.real_count += 1;
            }
        }
        Ok(())
    }

    /// Flips a node's FIB status, keeping the cached tally in step.
    /// Returns whether the status actually changed.
    pub(crate) fn set_status(&mut self, id: NodeId, status: FibStatus) -> bool {
        let node = self.node_mut(id);
        if node.status == status {
            return false;
        }
        node.status = status;
        match status {
            FibStatus::InFib => self.in_fib_count += 1,
            FibStatus::NonFib => self.in_fib_count -= 1,
        }
        true
    }

    /// Retypes a structural node into an announced route.
    pub(crate) fn retype_real(&mut self, id: NodeId) {
        let node = self.node_mut(id);
        debug_assert!(!node.is_real());
        node.node_type = NodeType::Real;
        self.real_count += 1;
    }

    /// Retypes an announced route into a structural node.
    pub(crate) fn retype_fake(&mut self, id: NodeId) {
        let node = self.node_mut(id);
        debug_assert!(node.is_real());
        node.node_type = NodeType::Fake;
        self.real_count -= 1;
    }

    /// Calls `f` on every node id, parents before children.
    pub(crate) fn for_each_id(&self, mut f: impl FnMut(&FibTrie, NodeId)) {
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            f(self, id);
            for child in self.node(id).children.into_iter().flatten() {
                stack.push(child);
            }
        }
    }

    /// Enables or disables traversal tracing (diagnostics and tests).
    pub fn set_trace_enabled(&mut self, enabled: bool) {
        self.trace = if enabled { Some(Vec::new()) } else { None };
    }

    /// Drains the recorded trace events.
    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    #[inline]
    pub(crate) fn trace_visit(&mut self, kind: TraceKind, id: NodeId) {
        if self.trace.is_none() {
            return;
        }
        let prefix = self.node(id).prefix;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent { kind, prefix });
        }
    }

    /// Full structural audit; returns a description of the first
    /// violated invariant. Linear in the trie size, intended for tests
    /// and fuzz harnesses.
    pub fn check_invariants(&self) -> Result<(), String> {
        let root = self.node(self.root);
        if root.prefix != IpPrefix::default_route(self.family) {
            return Err("root prefix is not 0/0".into());
        }
        if !root.is_real() {
            return Err("root is not Real".into());
        }
        if root.parent.is_some() {
            return Err("root has a parent".into());
        }

        let mut nodes = 0usize;
        let mut reals = 0usize;
        let mut in_fib = 0usize;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = self.node(id);
            nodes += 1;
            if node.is_real() {
                reals += 1;
            }
            if node.in_fib() {
                in_fib += 1;
            }
            if !node.is_real() && node.child_count() != 2 {
                return Err(format!(
                    "fake node {} has {} children",
                    node.prefix,
                    node.child_count()
                ));
            }
            for (slot, child) in node.children.iter().enumerate() {
                let Some(child) = *child else { continue };
                let c = self.node(child);
                if c.parent != Some(id) {
                    return Err(format!(
                        "{}: parent link does not mirror child link",
                        c.prefix
                    ));
                }
                if c.prefix.len() <= node.prefix.len() || !node.prefix.covers(&c.prefix) {
                    return Err(format!(
                        "{} is not a strict extension of its parent {}",
                        c.prefix, node.prefix
                    ));
                }
                if c.prefix.bit_at(node.prefix.len()) as usize != slot {
                    return Err(format!("{} sits in the wrong child slot", c.prefix));
                }
                stack.push(child);
            }
        }

        let occupied = self.slots.iter().filter(|s| s.is_some()).count();
        if occupied != nodes {
            return Err(format!(
                "{} reachable nodes but {occupied} occupied slots",
                nodes
            ));
        }
        if nodes != self.node_count {
            return Err(format!(
                "node_count cache {} != tally {nodes}",
                self.node_count
            ));
        }
        if reals != self.real_count {
            return Err(format!(
                "real_count cache {} != tally {reals}",
                self.real_count
            ));
        }
        if in_fib != self.in_fib_count {
            return Err(format!(
                "in_fib_count cache {} != tally {in_fib}",
                self.in_fib_count
            ));
        }
        Ok(())
    }
}
