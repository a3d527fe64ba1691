//! Command-line driver.
//!
//! Four subcommands cover the operational surface: `aggregate` shrinks
//! a table offline, `replay` streams an update trace through the live
//! engine and reports metrics, `verify` compares two tables for
//! forwarding equivalence, and `fuzz` runs the seeded random campaign.
//!
//! Failure classes map to distinct exit codes so scripts can react:
//! 2 malformed input, 3 forwarding equivalence violated, 4 oracle or
//! bookkeeping mismatch, 5 I/O trouble.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::fuzz::{self, FuzzConfig};
use crate::io as table_io;
use crate::io::FileError;
use crate::metrics::{ReplayReport, ReportFormat};
use crate::patricia::{FibTrie, NextHop};
use crate::prefix::{AddressFamily, IpPrefix};
use crate::verify::{self, CompareError, FibSnapshot, SnapshotView};

pub const EXIT_PARSE: u8 = 2;
pub const EXIT_EQUIVALENCE: u8 = 3;
pub const EXIT_ORACLE: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(
    name = "fibagg",
    version,
    about = "Forwarding table aggregation engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    V4,
    V6,
}

impl From<FamilyArg> for AddressFamily {
    fn from(value: FamilyArg) -> Self {
        match value {
            FamilyArg::V4 => AddressFamily::V4,
            FamilyArg::V6 => AddressFamily::V6,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate a route table file and write the shrunken table.
    Aggregate {
        /// Input route table.
        #[arg(long)]
        rib: PathBuf,
        /// Address family of the input.
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Output path for the aggregated table.
        #[arg(long)]
        out: PathBuf,
        /// Optional path for a JSON stats report.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Replay an update trace against an aggregated table.
    Replay {
        /// Initial route table.
        #[arg(long)]
        rib: PathBuf,
        /// Update trace to apply in order.
        #[arg(long)]
        updates: PathBuf,
        /// Address family of both inputs.
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Output path for the JSON metrics report.
        #[arg(long)]
        report: PathBuf,
        /// Run the correctness oracles every N updates.
        #[arg(long)]
        oracle_every: Option<u64>,
        /// Sample table sizes every K updates into a CSV file written
        /// next to the report.
        #[arg(long)]
        series_every: Option<u64>,
    },
    /// Check that two route tables forward every address identically.
    Verify {
        /// Reference route table.
        #[arg(long)]
        rib: PathBuf,
        /// Candidate (typically aggregated) route table.
        #[arg(long)]
        aggregated: PathBuf,
        /// Address family of both inputs.
        #[arg(long, value_enum)]
        family: FamilyArg,
    },
    /// Random campaign over a toy family with per-update oracles.
    Fuzz {
        /// Address width in bits.
        #[arg(long, value_parser = clap::value_parser!(u8).range(4..=16))]
        width: u8,
        /// Number of random updates to apply.
        #[arg(long)]
        updates: u64,
        /// Next hops are drawn from 1..=HOPS.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        hops: u32,
        /// RNG seed; identical seeds give identical runs.
        #[arg(long)]
        seed: u64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn file_failure(path: &Path) -> impl Fn(FileError) -> Failure + '_ {
    move |err| {
        let code = match err {
            FileError::Io(_) => EXIT_IO,
            FileError::Parse { .. } | FileError::DuplicatePrefix { .. } => EXIT_PARSE,
        };
        Failure::new(code, format!("{}: {err}", path.display()))
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |err| Failure::new(EXIT_IO, format!("{}: {err}", path.display()))
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Aggregate {
            rib,
            family,
            out,
            stats,
        } => cmd_aggregate(&rib, family.into(), &out, stats.as_deref()),
        Command::Replay {
            rib,
            updates,
            family,
            report,
            oracle_every,
            series_every,
        } => cmd_replay(
            &rib,
            &updates,
            family.into(),
            &report,
            oracle_every,
            series_every,
        ),
        Command::Verify {
            rib,
            aggregated,
            family,
        } => cmd_verify(&rib, &aggregated, family.into()),
        Command::Fuzz {
            width,
            updates,
            hops,
            seed,
        } => cmd_fuzz(&FuzzConfig {
            width,
            updates,
            hops,
            seed,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

/// Loads a route table into a fresh trie. An explicit 0/0 line becomes
/// the root's route; everything else is inserted as announced.
fn build_trie(family: AddressFamily, entries: &[(IpPrefix, NextHop)]) -> Result<FibTrie, Failure> {
    let default_hop = entries
        .iter()
        .find(|(prefix, _)| prefix.is_default_route())
        .map_or(NextHop::DROP, |(_, hop)| *hop);
    let mut trie = FibTrie::new(family, default_hop);
    for (prefix, hop) in entries {
        if prefix.is_default_route() {
            continue;
        }
        trie.load_route(prefix, *hop)
            .map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))?;
    }
    Ok(trie)
}

/// The aggregated table as written to disk: the root's entry appears
/// only when the input declared a default route.
fn exported_snapshot(trie: &FibTrie) -> FibSnapshot {
    let full = verify::snapshot(trie, SnapshotView::Aggregated);
    if trie.has_explicit_default() {
        full
    } else {
        FibSnapshot::from_entries(
            SnapshotView::Aggregated,
            trie.family(),
            full.iter().filter(|(prefix, _)| !prefix.is_default_route()),
        )
    }
}

fn cmd_aggregate(
    rib: &Path,
    family: AddressFamily,
    out: &Path,
    stats: Option<&Path>,
) -> Result<(), Failure> {
    let entries = table_io::load_rib(rib, family).map_err(file_failure(rib))?;
    let route_count = entries.len();
    let mut trie = build_trie(family, &entries)?;
    trie.static_aggregate();
    verify::check_equivalence(&trie)
        .map_err(|v| Failure::new(EXIT_EQUIVALENCE, format!("aggregation unsafe: {v}")))?;

    let snapshot = exported_snapshot(&trie);
    table_io::write_snapshot(&snapshot, out).map_err(file_failure(out))?;
    if let Some(stats_path) = stats {
        let mut report = ReplayReport::new();
        report.note_table_state(&trie);
        fs::write(stats_path, report.render(ReportFormat::Json)).map_err(io_failure(stats_path))?;
    }
    println!(
        "wrote {}: {} entries covering {} routes",
        out.display(),
        snapshot.len(),
        route_count
    );
    Ok(())
}

fn cmd_replay(
    rib: &Path,
    updates: &Path,
    family: AddressFamily,
    report_path: &Path,
    oracle_every: Option<u64>,
    series_every: Option<u64>,
) -> Result<(), Failure> {
    let entries = table_io::load_rib(rib, family).map_err(file_failure(rib))?;
    let mut trie = build_trie(family, &entries)?;
    trie.static_aggregate();
    verify::check_equivalence(&trie)
        .map_err(|v| Failure::new(EXIT_EQUIVALENCE, format!("initial aggregation unsafe: {v}")))?;

    let reader = table_io::UpdateReader::open(updates, family).map_err(file_failure(updates))?;
    let mut report = ReplayReport::new();
    let mut index = 0u64;
    for item in reader {
        let update = item.map_err(file_failure(updates))?;
        index += 1;

        let started = Instant::now();
        let outcome = trie.apply(&update).expect("table was aggregated above");
        let elapsed = started.elapsed();
        report.record(outcome.changes.burst_size(), elapsed);
        if let Some(warning) = outcome.warning {
            eprintln!("warning: update {index}: {warning}");
        }

        if oracle_every.is_some_and(|n| index.is_multiple_of(n)) {
            verify::check_equivalence(&trie).map_err(|v| {
                Failure::new(EXIT_EQUIVALENCE, format!("after update {index}: {v}"))
            })?;
            let live = verify::snapshot(&trie, SnapshotView::Aggregated);
            let reference = verify::reaggregate(&trie);
            if live != reference {
                return Err(Failure::new(
                    EXIT_ORACLE,
                    format!("after update {index}: live table diverges from re-aggregation"),
                ));
            }
        }
        if series_every.is_some_and(|k| index.is_multiple_of(k)) {
            report.sample_series(index, &trie);
        }
    }

    report.note_table_state(&trie);
    fs::write(report_path, report.render(ReportFormat::Json)).map_err(io_failure(report_path))?;
    if series_every.is_some() {
        // The JSON schema is fixed, so sampled series go in a sibling
        // file rather than a new report key.
        let series_path = report_path.with_extension("series.csv");
        fs::write(&series_path, report.render(ReportFormat::CsvSeries))
            .map_err(io_failure(&series_path))?;
    }
    print!("{}", report.render(ReportFormat::Table));
    Ok(())
}

fn cmd_verify(rib: &Path, aggregated: &Path, family: AddressFamily) -> Result<(), Failure> {
    let original = FibSnapshot::from_entries(
        SnapshotView::Original,
        family,
        table_io::load_rib(rib, family).map_err(file_failure(rib))?,
    );
    let candidate = FibSnapshot::from_entries(
        SnapshotView::Aggregated,
        family,
        table_io::load_rib(aggregated, family).map_err(file_failure(aggregated))?,
    );
    match verify::compare_tables(&original, &candidate) {
        Ok(()) => {
            println!("tables are forwarding-equivalent");
            Ok(())
        }
        Err(err @ CompareError::FamilyMismatch { .. }) => {
            Err(Failure::new(EXIT_PARSE, err.to_string()))
        }
        Err(err) => Err(Failure::new(EXIT_EQUIVALENCE, err.to_string())),
    }
}

fn cmd_fuzz(config: &FuzzConfig) -> Result<(), Failure> {
    let stdout = std::io::stdout();
    let mut log = stdout.lock();
    let log_failure = |err| Failure::new(EXIT_IO, format!("stdout: {err}"));
    match fuzz::run(config, &mut log).map_err(log_failure)? {
        Ok(_) => Ok(()),
        Err(failure) => {
            let code = if failure.kind.breaks_forwarding() {
                EXIT_EQUIVALENCE
            } else {
                EXIT_ORACLE
            };
            Err(Failure::new(code, failure.to_string()))
        }
    }
}
