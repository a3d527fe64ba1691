//! Seeded randomized testing over toy address families.
//!
//! A run builds a random initial table, aggregates it, then applies a
//! stream of random announcements and withdrawals. After every single
//! update the full oracle battery executes:
//!
//! * structural invariant audit,
//! * per-region forwarding equivalence,
//! * exhaustive per-address forwarding equivalence,
//! * re-aggregation from scratch compared against the live table,
//! * replay of the emitted change set against the previous table.
//!
//! Everything derives from one seed, so a failing run is reproducible
//! by rerunning with the same parameters and truncating at the failing
//! index. Log output contains no timing and is byte-stable per seed.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::faqs::RouteUpdate;
use crate::patricia::{FibTrie, NextHop};
use crate::prefix::{AddressFamily, IpPrefix};
use crate::verify::{self, FibSnapshot, SnapshotView};

/// Parameters of one randomized run.
#[derive(Clone, Copy, Debug)]
pub struct FuzzConfig {
    /// Toy family width in bits, 4 through 16.
    pub width: u8,
    /// Number of updates to apply after the initial aggregation.
    pub updates: u64,
    /// Next hops are drawn from 1..=hops.
    pub hops: u32,
    /// RNG seed; equal seeds give byte-identical runs.
    pub seed: u64,
}

/// Statistics of a completed run.
#[derive(Clone, Copy, Debug)]
pub struct FuzzSummary {
    pub updates_applied: u64,
    pub total_changes: u64,
    pub max_burst: u64,
    pub final_routes: usize,
    pub final_entries: usize,
}

/// Which oracle rejected the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuzzFailureKind {
    /// Structural audit of the trie failed.
    Invariant,
    /// Per-region equivalence check failed.
    Equivalence,
    /// Exhaustive per-address sweep failed.
    Exhaustive,
    /// Live table differs from re-aggregation from scratch.
    OracleMismatch,
    /// Emitted changes do not transform the previous table into the new one.
    ChangeFidelity,
}

impl FuzzFailureKind {
    /// Forwarding-safety failures versus bookkeeping failures; the CLI
    /// maps these to distinct exit codes.
    pub fn breaks_forwarding(self) -> bool {
        matches!(
            self,
            FuzzFailureKind::Equivalence | FuzzFailureKind::Exhaustive
        )
    }
}

/// First oracle rejection in a run, with enough context to replay it.
#[derive(Debug)]
pub struct FuzzFailure {
    /// Zero-based index of the failing update; `None` means the initial
    /// aggregation itself failed.
    pub index: Option<u64>,
    /// The update that triggered the failure, in trace-file syntax.
    pub reproduction: Option<String>,
    pub kind: FuzzFailureKind,
    pub detail: String,
    /// Command line that replays the failure deterministically.
    pub rerun: String,
}

impl fmt::Display for FuzzFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.index, &self.reproduction) {
            (Some(index), Some(line)) => {
                write!(
                    f,
                    "update {index} (`{line}`): {:?}: {}",
                    self.kind, self.detail
                )?;
            }
            _ => write!(f, "initial aggregation: {:?}: {}", self.kind, self.detail)?,
        }
        write!(f, "\nreproduce with: {}", self.rerun)
    }
}

fn random_prefix(rng: &mut ChaCha8Rng, family: AddressFamily) -> IpPrefix {
    let width = family.width();
    let len = rng.gen_range(1..=width);
    let bits = (rng.gen::<u32>() as u128) & ((1u128 << width) - 1);
    let masked = bits >> (width - len) << (width - len);
    IpPrefix::new(family, masked, len).expect("masked bits fit the length")
}

/// Announced non-default prefixes, supporting uniform random picks.
struct RoutePool {
    order: Vec<IpPrefix>,
    members: HashSet<IpPrefix>,
}

impl RoutePool {
    fn new() -> Self {
        RoutePool {
            order: Vec::new(),
            members: HashSet::new(),
        }
    }

    fn len(&self) -> usize {
        self.order.len()
    }

    fn contains(&self, prefix: &IpPrefix) -> bool {
        self.members.contains(prefix)
    }

    fn insert(&mut self, prefix: IpPrefix) {
        if self.members.insert(prefix) {
            self.order.push(prefix);
        }
    }

    fn remove_random(&mut self, rng: &mut ChaCha8Rng) -> Option<IpPrefix> {
        if self.order.is_empty() {
            return None;
        }
        let index = rng.gen_range(0..self.order.len());
        let prefix = self.order.swap_remove(index);
        self.members.remove(&prefix);
        Some(prefix)
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> Option<IpPrefix> {
        if self.order.is_empty() {
            None
        } else {
            Some(self.order[rng.gen_range(0..self.order.len())])
        }
    }
}

struct OracleBattery<'a> {
    trie: &'a FibTrie,
    previous: &'a FibSnapshot,
    changes: &'a crate::faqs::ChangeSet,
}

impl OracleBattery<'_> {
    /// Runs every check; returns the new aggregated snapshot on success
    /// so the caller can reuse it as the next baseline.
    fn run(self) -> Result<FibSnapshot, (FuzzFailureKind, String)> {
        if let Err(detail) = self.trie.check_invariants() {
            return Err((FuzzFailureKind::Invariant, detail));
        }
        if let Err(violation) = verify::check_equivalence(self.trie) {
            return Err((FuzzFailureKind::Equivalence, violation.to_string()));
        }
        if let Err(mismatch) = verify::brute_force_equivalence(self.trie) {
            return Err((FuzzFailureKind::Exhaustive, mismatch.to_string()));
        }
        let aggregated = verify::snapshot(self.trie, SnapshotView::Aggregated);
        let reference = verify::reaggregate(self.trie);
        if aggregated != reference {
            return Err((
                FuzzFailureKind::OracleMismatch,
                diff_snapshots(&aggregated, &reference),
            ));
        }
        match self.previous.with_changes(self.changes) {
            Err(edit) => Err((FuzzFailureKind::ChangeFidelity, edit.to_string())),
            Ok(replayed) if replayed != aggregated => Err((
                FuzzFailureKind::ChangeFidelity,
                diff_snapshots(&aggregated, &replayed),
            )),
            Ok(_) => Ok(aggregated),
        }
    }
}

fn diff_snapshots(live: &FibSnapshot, other: &FibSnapshot) -> String {
    for (prefix, hop) in live.iter() {
        match other.get(&prefix) {
            None => return format!("{prefix} -> {hop} present only in the live table"),
            Some(expected) if expected != hop => {
                return format!("{prefix}: live {hop}, expected {expected}")
            }
            Some(_) => {}
        }
    }
    for (prefix, hop) in other.iter() {
        if live.get(&prefix).is_none() {
            return format!("{prefix} -> {hop} missing from the live table");
        }
    }
    "tables identical (inconsistent comparison)".to_string()
}

/// Runs one seeded campaign, writing a deterministic log.
pub fn run(
    config: &FuzzConfig,
    log: &mut dyn Write,
) -> io::Result<Result<FuzzSummary, FuzzFailure>> {
    let family = AddressFamily::toy(config.width).expect("width validated by the caller");
    let rerun = format!(
        "fibagg fuzz --width {} --updates {} --hops {} --seed {}",
        config.width, config.updates, config.hops, config.seed
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    writeln!(
        log,
        "fuzz width={} updates={} hops={} seed={}",
        config.width, config.updates, config.hops, config.seed
    )?;

    // Seed the table with enough routes to make the trie interesting
    // without saturating narrow families.
    let target = (1usize << (config.width.saturating_sub(2))).clamp(16, 512);
    let mut pool = RoutePool::new();
    let mut trie = FibTrie::new(family, NextHop::DROP);
    let mut attempts = 0;
    while pool.len() < target && attempts < target * 16 {
        attempts += 1;
        let prefix = random_prefix(&mut rng, family);
        if !pool.contains(&prefix) {
            let hop = NextHop(rng.gen_range(1..=config.hops));
            trie.load_route(&prefix, hop)
                .expect("pool guards duplicates");
            pool.insert(prefix);
        }
    }
    trie.static_aggregate();
    writeln!(
        log,
        "initial: routes={} entries={} nodes={}",
        trie.real_count(),
        trie.in_fib_count(),
        trie.node_count()
    )?;

    let empty = crate::faqs::ChangeSet::default();
    let baseline = verify::snapshot(&trie, SnapshotView::Aggregated);
    let initial = OracleBattery {
        trie: &trie,
        previous: &baseline,
        changes: &empty,
    }
    .run();
    let mut previous = match initial {
        Ok(snapshot) => snapshot,
        Err((kind, detail)) => {
            return Ok(Err(FuzzFailure {
                index: None,
                reproduction: None,
                kind,
                detail,
                rerun,
            }))
        }
    };

    let mut total_changes = 0u64;
    let mut max_burst = 0u64;
    let progress_step = (config.updates / 4).max(1);
    for index in 0..config.updates {
        let update = next_update(&mut rng, &mut pool, family, config.hops);
        let outcome = trie.apply(&update).expect("table is aggregated");
        if let Some(warning) = outcome.warning {
            return Ok(Err(FuzzFailure {
                index: Some(index),
                reproduction: Some(update.to_string()),
                kind: FuzzFailureKind::Invariant,
                detail: format!("generator produced a warned update: {warning}"),
                rerun,
            }));
        }
        let burst = outcome.changes.burst_size() as u64;
        total_changes += burst;
        max_burst = max_burst.max(burst);

        let battery = OracleBattery {
            trie: &trie,
            previous: &previous,
            changes: &outcome.changes,
        }
        .run();
        previous = match battery {
            Ok(snapshot) => snapshot,
            Err((kind, detail)) => {
                return Ok(Err(FuzzFailure {
                    index: Some(index),
                    reproduction: Some(update.to_string()),
                    kind,
                    detail,
                    rerun,
                }))
            }
        };

        if (index + 1) % progress_step == 0 || index + 1 == config.updates {
            writeln!(
                log,
                "update={} routes={} entries={} changes={} max_burst={}",
                index + 1,
                trie.real_count(),
                trie.in_fib_count(),
                total_changes,
                max_burst
            )?;
        }
    }

    let summary = FuzzSummary {
        updates_applied: config.updates,
        total_changes,
        max_burst,
        final_routes: trie.real_count(),
        final_entries: trie.in_fib_count(),
    };
    writeln!(
        log,
        "ok: updates={} changes={} max_burst={}",
        summary.updates_applied, summary.total_changes, summary.max_burst
    )?;
    Ok(Ok(summary))
}

/// Draws the next update: 30% withdrawals of announced routes, 70%
/// announcements split between hop churn on existing routes and fresh
/// prefixes.
fn next_update(
    rng: &mut ChaCha8Rng,
    pool: &mut RoutePool,
    family: AddressFamily,
    hops: u32,
) -> RouteUpdate {
    let withdraw = pool.len() > 0 && rng.gen_bool(0.3);
    if withdraw {
        let prefix = pool.remove_random(rng).expect("pool checked non-empty");
        return RouteUpdate::Withdraw { prefix };
    }
    let churn = pool.len() > 0 && rng.gen_bool(0.5);
    let prefix = if churn {
        pool.pick(rng).expect("pool checked non-empty")
    } else {
        // A fresh draw may still collide on saturated narrow families;
        // colliding announcements are hop churn, which is fine.
        let fresh = random_prefix(rng, family);
        pool.insert(fresh);
        fresh
    };
    RouteUpdate::Announce {
        prefix,
        next_hop: NextHop(rng.gen_range(1..=hops)),
    }
}
