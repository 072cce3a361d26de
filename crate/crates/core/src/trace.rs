//! Raw IO trace ingestion and reduction to fixed-width bins.
//!
//! A trace is a CSV of `timestamp_us,op,size_blocks` request records. Binning
//! collapses the trace to per-bin (read blocks, write blocks) totals on a fixed
//! time grid; everything downstream (clustering, HMM fitting, synthesis,
//! queueing replay) works on the binned form. Thinning keeps a periodic subset
//! of bins, which is how sub-second activity patterns inside a long
//! accounting period are isolated.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    /// Line does not have the `timestamp_us,op,size_blocks` shape or a field
    /// fails integer parsing. Line numbers are 1-based.
    #[error("line {0}: malformed record")]
    MalformedLine(usize),
    #[error("line {0}: op must be R or W")]
    InvalidOp(usize),
    #[error("line {0}: size_blocks must be >= 1")]
    NonPositiveSize(usize),
    #[error("trace has no records")]
    EmptyTrace,
    #[error("keep set must be non-empty with entries in 0..period")]
    InvalidKeepSet,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Read,
    Write,
}

/// One request record: microsecond timestamp, direction, size in blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub timestamp_us: u64,
    pub op: OpKind,
    pub size_blocks: u64,
}

/// Per-bin transferred volume, in blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Bin {
    pub reads: u64,
    pub writes: u64,
}

impl Bin {
    pub fn new(reads: u64, writes: u64) -> Self {
        Bin { reads, writes }
    }
}

/// A trace reduced to (reads, writes) block totals per fixed-width time bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedTrace {
    pub bin_width_us: u64,
    pub bins: Vec<Bin>,
}

impl BinnedTrace {
    pub fn new(bin_width_us: u64, bins: Vec<Bin>) -> Self {
        assert!(bin_width_us >= 1, "bin width must be at least 1us");
        BinnedTrace { bin_width_us, bins }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

const BINNED_HEADER: &str = "bin_index,reads,writes";

/// Parses a `timestamp_us,op,size_blocks` CSV. A leading header line (first
/// field `timestamp_us`) is skipped. Fields are trimmed; op is `R` or `W`;
/// sizes must be >= 1. Records are returned sorted by timestamp (stable, so
/// same-timestamp records keep file order).
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (ts, op, size) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => return Err(TraceError::MalformedLine(line_no)),
        };
        if line_no == 1 && ts == "timestamp_us" {
            continue;
        }
        let timestamp_us: u64 = ts.parse().map_err(|_| TraceError::MalformedLine(line_no))?;
        let op = match op {
            "R" => OpKind::Read,
            "W" => OpKind::Write,
            _ => return Err(TraceError::InvalidOp(line_no)),
        };
        let size_blocks: u64 = size.parse().map_err(|_| TraceError::MalformedLine(line_no))?;
        if size_blocks == 0 {
            return Err(TraceError::NonPositiveSize(line_no));
        }
        records.push(TraceRecord { timestamp_us, op, size_blocks });
    }
    records.sort_by_key(|r| r.timestamp_us);
    Ok(records)
}

/// Sums record sizes into `bin_width_us`-wide bins. Timestamps are first
/// normalized to the earliest record's time, so bin 0 starts at the trace
/// start rather than at an absolute epoch; interior bins with no records are
/// present as (0, 0). Bin count is floor((last - first) / width) + 1.
pub fn bin_trace(records: &[TraceRecord], bin_width_us: u64) -> Result<BinnedTrace, TraceError> {
    assert!(bin_width_us >= 1, "bin width must be at least 1us");
    if records.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let t0 = records.iter().map(|r| r.timestamp_us).min().unwrap();
    let t_max = records.iter().map(|r| r.timestamp_us).max().unwrap();
    let n_bins = ((t_max - t0) / bin_width_us) as usize + 1;
    let mut bins = vec![Bin::default(); n_bins];
    for r in records {
        let k = ((r.timestamp_us - t0) / bin_width_us) as usize;
        match r.op {
            OpKind::Read => bins[k].reads += r.size_blocks,
            OpKind::Write => bins[k].writes += r.size_blocks,
        }
    }
    Ok(BinnedTrace { bin_width_us, bins })
}

/// Keeps exactly the bins whose index mod `period` lies in `keep`, preserving
/// order. Used to extract the active sub-bins of a periodic workload (e.g.
/// keep {0,1,2,4} of every 10) so the shortened trace exposes the intra-period
/// structure at a proportionally shorter lag.
pub fn thin_periodic(
    binned: &BinnedTrace,
    period: usize,
    keep: &BTreeSet<usize>,
) -> Result<BinnedTrace, TraceError> {
    assert!(period >= 1, "period must be at least 1");
    if keep.is_empty() || keep.iter().any(|&k| k >= period) {
        return Err(TraceError::InvalidKeepSet);
    }
    let bins = binned
        .bins
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(&(i % period)))
        .map(|(_, b)| *b)
        .collect();
    Ok(BinnedTrace { bin_width_us: binned.bin_width_us, bins })
}

/// Writes the `bin_index,reads,writes` CSV form: header line, one integer row
/// per bin, LF line endings. `read_binned_csv` accepts this byte-for-byte.
pub fn write_binned_csv<W: Write>(mut w: W, binned: &BinnedTrace) -> io::Result<()> {
    writeln!(w, "{BINNED_HEADER}")?;
    for (i, b) in binned.bins.iter().enumerate() {
        writeln!(w, "{},{},{}", i, b.reads, b.writes)?;
    }
    Ok(())
}

/// Reads the CSV form produced by [`write_binned_csv`]. The header is
/// optional; bin indices must be 0..n in order. The bin width is not part of
/// the file format, so the caller supplies it when rebuilding a
/// [`BinnedTrace`].
pub fn read_binned_csv<R: BufRead>(reader: R) -> Result<Vec<Bin>, TraceError> {
    let mut bins = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line_no == 1 && line == BINNED_HEADER {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (i, r, w) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => return Err(TraceError::MalformedLine(line_no)),
        };
        let i: usize = i.parse().map_err(|_| TraceError::MalformedLine(line_no))?;
        if i != bins.len() {
            return Err(TraceError::MalformedLine(line_no));
        }
        let reads: u64 = r.parse().map_err(|_| TraceError::MalformedLine(line_no))?;
        let writes: u64 = w.parse().map_err(|_| TraceError::MalformedLine(line_no))?;
        bins.push(Bin { reads, writes });
    }
    Ok(bins)
}
