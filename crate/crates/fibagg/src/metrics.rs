//! Replay metrics: burst statistics, per-update latency, table sizes.

use std::collections::BTreeMap;
use std::time::Duration;

use crate::patricia::{FibTrie, Node};

/// Byte cost charged per trie node in memory estimates. The engine
/// stores nodes in a flat slab, so the node payload is the whole story
/// up to allocator slack.
pub const PER_NODE_BYTES: usize = std::mem::size_of::<Node>();

/// Output shapes for [`ReplayReport::render`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// Human-readable summary, one metric per line.
    Table,
    /// Machine-readable summary with a fixed key set.
    Json,
    /// One row per periodic sample of the table sizes.
    CsvSeries,
}

/// Table sizes captured from the trie, minus the synthetic default.
///
/// The engine's root always holds a route, even when the operator never
/// announced 0/0. Counting that synthetic entry would flatter the ratio
/// on small tables, so both sizes drop it unless the default route was
/// explicit in the input.
#[derive(Clone, Copy, Debug, Default)]
struct TableSizes {
    original: u64,
    aggregated: u64,
    nodes: u64,
}

impl TableSizes {
    fn capture(trie: &FibTrie) -> Self {
        let synthetic = u64::from(!trie.has_explicit_default());
        TableSizes {
            original: trie.real_count() as u64 - synthetic,
            aggregated: trie.in_fib_count() as u64 - synthetic,
            nodes: trie.node_count() as u64,
        }
    }

    fn ratio(&self) -> Option<f64> {
        (self.original > 0).then(|| self.aggregated as f64 / self.original as f64)
    }
}

/// One periodic observation of the replay.
#[derive(Clone, Copy, Debug)]
pub struct SeriesSample {
    pub update_index: u64,
    pub original_size: u64,
    pub aggregated_size: u64,
    pub cumulative_us: u64,
    pub cumulative_changes: u64,
}

/// Accumulated statistics over one replay run.
#[derive(Clone, Debug, Default)]
pub struct ReplayReport {
    updates: u64,
    changes: u64,
    burst_hist: BTreeMap<u64, u64>,
    peak: Duration,
    total_apply: Duration,
    sizes: Option<TableSizes>,
    series: Vec<SeriesSample>,
}

impl ReplayReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accounts one applied update: how many FIB changes it caused and
    /// how long the engine took. Timing covers the apply call only.
    pub fn record(&mut self, burst: usize, elapsed: Duration) {
        self.updates += 1;
        self.changes += burst as u64;
        *self.burst_hist.entry(burst as u64).or_insert(0) += 1;
        self.total_apply += elapsed;
        if elapsed > self.peak {
            self.peak = elapsed;
        }
    }

    /// Captures the current table sizes; call at report time (and it is
    /// fine to call repeatedly, the last snapshot wins).
    pub fn note_table_state(&mut self, trie: &FibTrie) {
        self.sizes = Some(TableSizes::capture(trie));
    }

    /// Appends one periodic sample of table sizes and running totals.
    pub fn sample_series(&mut self, update_index: u64, trie: &FibTrie) {
        let sizes = TableSizes::capture(trie);
        self.series.push(SeriesSample {
            update_index,
            original_size: sizes.original,
            aggregated_size: sizes.aggregated,
            cumulative_us: self.total_apply.as_micros() as u64,
            cumulative_changes: self.changes,
        });
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn total_changes(&self) -> u64 {
        self.changes
    }

    pub fn max_burst(&self) -> u64 {
        self.burst_hist.keys().next_back().copied().unwrap_or(0)
    }

    /// Aggregated size over original size, if defined.
    pub fn ratio(&self) -> Option<f64> {
        self.sizes.and_then(|s| s.ratio())
    }

    pub fn series(&self) -> &[SeriesSample] {
        &self.series
    }

    fn bursts_counted(&self, pred: impl Fn(u64) -> bool) -> u64 {
        self.burst_hist
            .iter()
            .filter(|(burst, _)| pred(**burst))
            .map(|(_, count)| count)
            .sum()
    }

    fn pct(&self, count: u64) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            count as f64 * 100.0 / self.updates as f64
        }
    }

    fn mean_update_us(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.total_apply.as_secs_f64() * 1e6 / self.updates as f64
        }
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_u": self.updates,
            "n_c": self.changes,
            "ratio": self.ratio(),
            "nc_per_nu": if self.updates == 0 { 0.0 } else { self.changes as f64 / self.updates as f64 },
            "t_aggr_us": self.mean_update_us(),
            "t_peak_ms": self.peak.as_secs_f64() * 1e3,
            "burst0_pct": self.pct(self.bursts_counted(|b| b == 0)),
            "burst1_pct": self.pct(self.bursts_counted(|b| b == 1)),
            "burst_le30_pct": self.pct(self.bursts_counted(|b| b <= 30)),
            "b_max": self.max_burst(),
            "mem_bytes": self.sizes.map_or(0, |s| s.nodes) * PER_NODE_BYTES as u64,
        })
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut text =
                    serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
                text.push('\n');
                text
            }
            ReportFormat::Table => {
                let ratio = self
                    .ratio()
                    .map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
                let mut out = String::new();
                let mut line = |label: &str, value: String| {
                    out.push_str(&format!("{label:<22} {value}\n"));
                };
                line("updates", self.updates.to_string());
                line("fib changes", self.changes.to_string());
                line(
                    "changes per update",
                    format!(
                        "{:.4}",
                        if self.updates == 0 {
                            0.0
                        } else {
                            self.changes as f64 / self.updates as f64
                        }
                    ),
                );
                line("aggregation ratio", ratio);
                line(
                    "mean update time",
                    format!("{:.2} us", self.mean_update_us()),
                );
                line(
                    "peak update time",
                    format!("{:.3} ms", self.peak.as_secs_f64() * 1e3),
                );
                line(
                    "burst = 0",
                    format!("{:.2}%", self.pct(self.bursts_counted(|b| b == 0))),
                );
                line(
                    "burst = 1",
                    format!("{:.2}%", self.pct(self.bursts_counted(|b| b == 1))),
                );
                line(
                    "burst <= 30",
                    format!("{:.2}%", self.pct(self.bursts_counted(|b| b <= 30))),
                );
                line("largest burst", self.max_burst().to_string());
                line(
                    "memory estimate",
                    format!(
                        "{} bytes",
                        self.sizes.map_or(0, |s| s.nodes) * PER_NODE_BYTES as u64
                    ),
                );
                out
            }
            ReportFormat::CsvSeries => {
                let mut out = String::from(
                    "update_index,original_size,aggregated_size,cumulative_us,cumulative_changes\n",
                );
                for s in &self.series {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        s.update_index,
                        s.original_size,
                        s.aggregated_size,
                        s.cumulative_us,
                        s.cumulative_changes
                    ));
                }
                out
            }
        }
    }
}
