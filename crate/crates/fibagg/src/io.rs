//! Route table and update trace files.
//!
//! Both formats are line-oriented UTF-8 text, LF or CRLF, with `#`
//! starting a comment and blank lines skipped:
//!
//! * table files: `<prefix>/<len> <hop>` per line, hop a decimal ≥ 1;
//! * trace files: `A <prefix>/<len> <hop>` or `W <prefix>/<len>`.
//!
//! Traces can be far larger than memory, so they are read as an
//! iterator; table files are small enough to load whole.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::faqs::RouteUpdate;
use crate::patricia::NextHop;
use crate::prefix::{parse_prefix, AddressFamily, IpPrefix};
use crate::verify::FibSnapshot;

#[derive(Error, Debug)]
pub enum FileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate prefix {prefix}")]
    DuplicatePrefix { line: usize, prefix: IpPrefix },
}

fn parse_error(line: usize, message: impl Into<String>) -> FileError {
    FileError::Parse {
        line,
        message: message.into(),
    }
}

/// Strips the comment tail and surrounding whitespace; returns `None`
/// for lines with no content.
fn payload(raw: &str) -> Option<&str> {
    let uncommented = raw.split('#').next().unwrap_or("");
    let trimmed = uncommented.trim();
    (!trimmed.is_empty()).then_some(trimmed)
}

fn parse_hop(token: &str, line: usize) -> Result<NextHop, FileError> {
    let value: u32 = token
        .parse()
        .map_err(|_| parse_error(line, format!("invalid next hop `{token}`")))?;
    if value == 0 {
        return Err(parse_error(line, "next hop 0 is reserved for drop"));
    }
    Ok(NextHop(value))
}

fn parse_prefix_token(
    token: &str,
    family: AddressFamily,
    line: usize,
) -> Result<IpPrefix, FileError> {
    parse_prefix(token, family).map_err(|e| parse_error(line, e.to_string()))
}

/// Loads a route table file, preserving file order.
pub fn load_rib(
    path: impl AsRef<Path>,
    family: AddressFamily,
) -> Result<Vec<(IpPrefix, NextHop)>, FileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries: Vec<(IpPrefix, NextHop)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (index, raw) in reader.lines().enumerate() {
        let line = index + 1;
        let raw = raw?;
        let Some(text) = payload(&raw) else { continue };
        let mut tokens = text.split_whitespace();
        let (Some(prefix_token), Some(hop_token), None) =
            (tokens.next(), tokens.next(), tokens.next())
        else {
            return Err(parse_error(line, "expected `<prefix>/<len> <hop>`"));
        };
        let prefix = parse_prefix_token(prefix_token, family, line)?;
        let hop = parse_hop(hop_token, line)?;
        if !seen.insert(prefix) {
            return Err(FileError::DuplicatePrefix { line, prefix });
        }
        entries.push((prefix, hop));
    }
    Ok(entries)
}

/// Lazy reader over an update trace.
pub struct UpdateReader<R> {
    reader: R,
    family: AddressFamily,
    line: usize,
    buffer: String,
}

impl UpdateReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, family: AddressFamily) -> Result<Self, FileError> {
        Ok(UpdateReader::new(BufReader::new(File::open(path)?), family))
    }
}

impl<R: BufRead> UpdateReader<R> {
    pub fn new(reader: R, family: AddressFamily) -> Self {
        UpdateReader {
            reader,
            family,
            line: 0,
            buffer: String::new(),
        }
    }

    fn parse_line(&self, text: &str) -> Result<RouteUpdate, FileError> {
        let line = self.line;
        let mut tokens = text.split_whitespace();
        let op = tokens.next().expect("payload is non-empty");
        match op {
            "A" => {
                let (Some(prefix_token), Some(hop_token), None) =
                    (tokens.next(), tokens.next(), tokens.next())
                else {
                    return Err(parse_error(line, "expected `A <prefix>/<len> <hop>`"));
                };
                Ok(RouteUpdate::Announce {
                    prefix: parse_prefix_token(prefix_token, self.family, line)?,
                    next_hop: parse_hop(hop_token, line)?,
                })
            }
            "W" => {
                let (Some(prefix_token), None) = (tokens.next(), tokens.next()) else {
                    return Err(parse_error(line, "expected `W <prefix>/<len>`"));
                };
                Ok(RouteUpdate::Withdraw {
                    prefix: parse_prefix_token(prefix_token, self.family, line)?,
                })
            }
            other => Err(parse_error(line, format!("unknown operation `{other}`"))),
        }
    }
}

impl<R: BufRead> Iterator for UpdateReader<R> {
    type Item = Result<RouteUpdate, FileError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buffer.clear();
            self.line += 1;
            match self.reader.read_line(&mut self.buffer) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            if let Some(text) = payload(&self.buffer) {
                return Some(self.parse_line(text));
            }
        }
    }
}

/// Writes a snapshot in table format, sorted by prefix for stable
/// diffs. The caller decides which entries belong in the file.
pub fn write_snapshot(snapshot: &FibSnapshot, path: impl AsRef<Path>) -> Result<(), FileError> {
    let mut out = BufWriter::new(File::create(path)?);
    for (prefix, hop) in snapshot.iter() {
        writeln!(out, "{prefix} {hop}")?;
    }
    out.flush()?;
    Ok(())
}
