//! Series ingestion, partitioning into consecutive blocks and the parallel,
//! order-preserving map of block statistics.
//!
//! Blocks are computed in chunks on a dedicated thread pool. Each block is a
//! pure function of its index (a slice of the input series, or stream `i` of
//! a synthetic source), and chunks are handed to the consumer in index
//! order, so every output is independent of the thread count.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::moments::{summarize, MomentSummary};
use crate::samplers::{DistributionSpec, Sampler, SeedSpec};
use crate::{Error, Result, Summary};

/// Default missing-value sentinel (ECA&D convention).
pub const DEFAULT_MISSING_SENTINEL: f64 = -9999.0;

/// Blocks per scheduling chunk; bounds the in-flight working set.
const CHUNK_BLOCKS: u64 = 1 << 14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Filter {
    #[default]
    None,
    /// Keep values strictly greater than zero.
    PositiveOnly,
    /// Keep values strictly greater than `t`.
    Threshold { t: f64 },
}

impl Filter {
    pub fn keeps(&self, v: f64) -> bool {
        match *self {
            Filter::None => true,
            Filter::PositiveOnly => v > 0.0,
            Filter::Threshold { t } => v > t,
        }
    }
}

/// Applies `filter`, preserving order. Fails when nothing survives.
pub fn apply_filter(values: &[f64], filter: Filter) -> Result<Vec<f64>> {
    let kept: Vec<f64> = values.iter().copied().filter(|&v| filter.keeps(v)).collect();
    if kept.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Zero-based column holding the values; `None` selects the last column.
    pub column: Option<usize>,
    pub delimiter: u8,
    pub missing_sentinel: Option<f64>,
    pub filter: Filter,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { column: None, delimiter: b',', missing_sentinel: Some(DEFAULT_MISSING_SENTINEL), filter: Filter::None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestedSeries {
    #[serde(skip)]
    pub values: Vec<f64>,
    /// Data rows read (header and comment lines excluded).
    pub total_read: u64,
    pub dropped_missing: u64,
    pub dropped_filtered: u64,
    /// SHA-256 of the raw input bytes.
    pub digest: String,
}

/// Reads one value column from a delimited text file.
///
/// Lines starting with `#` are comments. A first row whose value field does
/// not parse is taken as a header. Empty fields and the missing sentinel
/// are dropped and counted, as are values rejected by the filter.
pub fn ingest_series(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<IngestedSeries> {
    let file = File::open(path.as_ref())?;
    ingest_reader(BufReader::new(file), opts)
}

pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<IngestedSeries> {
    let mut raw = Vec::new();
    BufReader::new(reader).read_to_end(&mut raw)?;
    let digest = hex::encode(Sha256::digest(&raw));

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(opts.delimiter)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_slice());

    let mut values = Vec::new();
    let (mut total_read, mut dropped_missing, mut dropped_filtered) = (0u64, 0u64, 0u64);
    let mut first = true;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let idx = opts.column.unwrap_or(record.len().saturating_sub(1));
        let field = record.get(idx).ok_or_else(|| Error::MissingColumn { line, column: idx.to_string() })?;
        let is_first = std::mem::take(&mut first);
        if field.is_empty() {
            total_read += 1;
            dropped_missing += 1;
            continue;
        }
        let v = match field.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            Err(_) if is_first => continue,
            _ => return Err(Error::Parse { line, value: field.to_string() }),
        };
        total_read += 1;
        if opts.missing_sentinel == Some(v) {
            dropped_missing += 1;
        } else if !opts.filter.keeps(v) {
            dropped_filtered += 1;
        } else {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(IngestedSeries { values, total_read, dropped_missing, dropped_filtered, digest })
}

/// `⌊N/n⌋` consecutive blocks of a series; the short tail is discarded.
#[derive(Clone, Copy, Debug)]
pub struct Partition<'a> {
    values: &'a [f64],
    n: usize,
}

impl<'a> Partition<'a> {
    pub fn block_size(&self) -> usize {
        self.n
    }

    pub fn block_count(&self) -> usize {
        self.values.len() / self.n
    }

    /// Number of trailing values that do not fill a block.
    pub fn discarded(&self) -> usize {
        self.values.len() % self.n
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'a, f64> {
        self.values.chunks_exact(self.n)
    }
}

pub fn partition(values: &[f64], n: usize) -> Result<Partition<'_>> {
    if n < 2 {
        return Err(Error::SampleTooSmall { n, min: 2 });
    }
    if values.len() < n {
        return Err(Error::SeriesTooShort { len: values.len(), n });
    }
    Ok(Partition { values, n })
}

/// Anything that can produce block `i` on demand.
pub trait BlockSource: Sync {
    fn block_size(&self) -> usize;

    fn block_count(&self) -> u64;

    /// Writes block `index` into `out` (`out.len() == block_size()`).
    fn fill_block(&self, index: u64, out: &mut [f64]);

    /// Input values left over after the last full block.
    fn discarded(&self) -> u64 {
        0
    }

    /// Configuration record for run metadata.
    fn describe(&self) -> serde_json::Value;

    /// Checksum identifying the input configuration.
    fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.describe().to_string().as_bytes()))
    }
}

/// Blocks cut from an in-memory series.
#[derive(Clone, Debug)]
pub struct SeriesSource {
    values: Vec<f64>,
    n: usize,
    label: String,
    digest: String,
}

impl SeriesSource {
    pub fn new(values: Vec<f64>, n: usize, label: impl Into<String>) -> Result<Self> {
        partition(&values, n)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let mut h = Sha256::new();
        for v in &values {
            h.update(v.to_le_bytes());
        }
        let digest = hex::encode(h.finalize());
        Ok(Self { values, n, label: label.into(), digest })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl BlockSource for SeriesSource {
    fn block_size(&self) -> usize {
        self.n
    }

    fn block_count(&self) -> u64 {
        (self.values.len() / self.n) as u64
    }

    fn fill_block(&self, index: u64, out: &mut [f64]) {
        let start = index as usize * self.n;
        out.copy_from_slice(&self.values[start..start + self.n]);
    }

    fn discarded(&self) -> u64 {
        (self.values.len() % self.n) as u64
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "series",
            "label": self.label,
            "n": self.n,
            "values": self.values.len(),
            "values_sha256": self.digest,
        })
    }
}

/// `blocks` blocks of `n` draws; block `i` comes from stream `i`.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    sampler: Sampler,
    n: usize,
    blocks: u64,
    master_seed: u64,
}

impl SyntheticSource {
    pub fn new(spec: &DistributionSpec, n: usize, blocks: u64, master_seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::SampleTooSmall { n, min: 2 });
        }
        Ok(Self { sampler: spec.sampler()?, n, blocks, master_seed })
    }

    /// Source sized as `⌊total/n⌋` blocks, mirroring a series of length `total`.
    pub fn with_total(spec: &DistributionSpec, n: usize, total: u64, master_seed: u64) -> Result<Self> {
        if (total as usize) < n {
            return Err(Error::SeriesTooShort { len: total as usize, n });
        }
        Self::new(spec, n, total / n as u64, master_seed)
    }

    pub fn spec(&self) -> &DistributionSpec {
        self.sampler.spec()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
}

impl BlockSource for SyntheticSource {
    fn block_size(&self) -> usize {
        self.n
    }

    fn block_count(&self) -> u64 {
        self.blocks
    }

    fn fill_block(&self, index: u64, out: &mut [f64]) {
        self.sampler.fill(SeedSpec::new(self.master_seed, index), out);
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "synthetic",
            "spec": self.sampler.spec(),
            "n": self.n,
            "blocks": self.blocks,
            "master_seed": self.master_seed,
            "generator": "chacha8/stream-per-block",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRow {
    pub block_index: u64,
    pub summary: Summary,
}

/// Counts reported by a streaming pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCounts {
    pub blocks: u64,
    pub rows: u64,
    pub degenerate: u64,
    pub discarded_tail: u64,
}

/// Non-degenerate block statistics in block order.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockStatsTable {
    pub rows: Vec<BlockRow>,
    pub n: usize,
    pub degenerate_count: u64,
    pub discarded_tail: u64,
    pub source_digest: String,
}

impl BlockStatsTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn skewness(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.summary.s)
    }

    /// `(S, R)` for every row.
    pub fn skew_ratio_pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.summary.s, r.summary.r)).collect()
    }

    /// `(S, K)` for every row.
    pub fn skew_kurt_points(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.summary.s, r.summary.k)).collect()
    }
}

/// Identity and Pearson checks on one emitted row.
fn check_row(block: u64, s: &Summary) -> Result<()> {
    let id = s.identity_error();
    if id.is_nan() || id > 1e-9 {
        return Err(Error::Invariant { block, what: format!("K·R identity relative error {id:e}") });
    }
    if s.k < 1.0 + s.s * s.s - 1e-12 * s.k.max(1.0) {
        return Err(Error::Invariant {
            block,
            what: format!("Pearson bound: K = {} < 1 + S² = {}", s.k, 1.0 + s.s * s.s),
        });
    }
    Ok(())
}

#[inline]
fn should_check(block: u64) -> bool {
    cfg!(debug_assertions) || block.is_multiple_of(100)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Computes every block's statistics and hands the non-degenerate rows to
/// `consume` chunk by chunk, in block order.
///
/// Peak memory is one chunk of rows plus one block buffer per thread.
pub fn stream_summaries<S, F>(source: &S, threads: usize, mut consume: F) -> Result<StreamCounts>
where
    S: BlockSource + ?Sized,
    F: FnMut(&[BlockRow]) -> Result<()>,
{
    let n = source.block_size();
    if n < 2 {
        return Err(Error::SampleTooSmall { n, min: 2 });
    }
    let pool = thread_pool(threads)?;
    let total = source.block_count();
    let mut counts = StreamCounts { blocks: total, discarded_tail: source.discarded(), ..Default::default() };
    let mut rows = Vec::with_capacity(CHUNK_BLOCKS as usize);

    let mut start = 0;
    while start < total {
        let end = (start + CHUNK_BLOCKS).min(total);
        let chunk: Vec<Option<BlockRow>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map_init(
                    || vec![0.0; n],
                    |buf, i| -> Result<Option<BlockRow>> {
                        source.fill_block(i, buf);
                        let summary = summarize(buf)?;
                        if summary.degenerate {
                            return Ok(None);
                        }
                        if should_check(i) {
                            check_row(i, &summary)?;
                        }
                        Ok(Some(BlockRow { block_index: i, summary }))
                    },
                )
                .collect::<Result<_>>()
        })?;
        rows.clear();
        for row in chunk {
            match row {
                Some(r) => rows.push(r),
                None => counts.degenerate += 1,
            }
        }
        counts.rows += rows.len() as u64;
        consume(&rows)?;
        start = end;
    }
    Ok(counts)
}

/// Materializes the full statistics table of a source.
pub fn map_moments<S: BlockSource + ?Sized>(source: &S, threads: usize) -> Result<BlockStatsTable> {
    let mut rows = Vec::with_capacity(source.block_count().min(1 << 24) as usize);
    let counts = stream_summaries(source, threads, |chunk| {
        rows.extend_from_slice(chunk);
        Ok(())
    })?;
    Ok(BlockStatsTable {
        rows,
        n: source.block_size(),
        degenerate_count: counts.degenerate,
        discarded_tail: counts.discarded_tail,
        source_digest: source.digest(),
    })
}

/// Column names of the statistics CSV, in order.
pub const STATS_COLUMNS: [&str; 7] = ["block_index", "n", "mean", "m2", "S", "K", "R"];

/// Renders `x` with 17 significant digits, `%.17g` style.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let fixed = format!("{:.*}", (16 - exp) as usize, x);
        trim_fraction(&fixed).to_string()
    } else {
        format!("{}e{}{:02}", trim_fraction(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Streaming writer for the statistics CSV.
pub struct StatsCsvWriter<W: Write> {
    out: W,
}

impl<W: Write> StatsCsvWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", STATS_COLUMNS.join(","))?;
        Ok(Self { out })
    }

    pub fn write_rows(&mut self, rows: &[BlockRow]) -> Result<()> {
        for row in rows {
            let s = &row.summary;
            writeln!(
                self.out,
                "{},{},{},{},{},{},{}",
                row.block_index,
                s.n,
                fmt_g17(s.mean),
                fmt_g17(s.m2),
                fmt_g17(s.s),
                fmt_g17(s.k),
                fmt_g17(s.r)
            )?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_stats_csv<W: Write>(table: &BlockStatsTable, out: W) -> Result<W> {
    let mut w = StatsCsvWriter::new(out)?;
    w.write_rows(&table.rows)?;
    w.finish()
}

/// Reads a statistics CSV back. `m3` and `m4` are reconstructed from
/// `S`, `K` and `m2`.
pub fn read_stats_csv<R: Read>(reader: R) -> Result<BlockStatsTable> {
    let mut raw = Vec::new();
    BufReader::new(reader).read_to_end(&mut raw)?;
    let digest = hex::encode(Sha256::digest(&raw));
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(raw.as_slice());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn { line: 1, column: name.to_string() })
    };
    let idx: Vec<usize> = STATS_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut n_seen: Option<usize> = None;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            record.get(idx[i]).ok_or_else(|| Error::MissingColumn { line, column: STATS_COLUMNS[i].into() })
        };
        let real = |i: usize| -> Result<f64> {
            let f = field(i)?;
            f.trim().parse::<f64>().map_err(|_| Error::Parse { line, value: f.to_string() })
        };
        let int = |i: usize| -> Result<u64> {
            let f = field(i)?;
            f.trim().parse::<u64>().map_err(|_| Error::Parse { line, value: f.to_string() })
        };
        let n = int(1)? as usize;
        match n_seen {
            None => n_seen = Some(n),
            Some(prev) if prev != n => {
                return Err(Error::InvalidArgument(format!(
                    "line {line}: mixed block sizes {prev} and {n} in one table"
                )))
            }
            _ => {}
        }
        let (m2, s, k) = (real(3)?, real(4)?, real(5)?);
        rows.push(BlockRow {
            block_index: int(0)?,
            summary: MomentSummary {
                n,
                mean: real(2)?,
                m2,
                m3: s * m2 * m2.sqrt(),
                m4: k * m2 * m2,
                s,
                k,
                r: real(6)?,
                degenerate: false,
            },
        });
    }
    Ok(BlockStatsTable { rows, n: n_seen.unwrap_or(0), degenerate_count: 0, discarded_tail: 0, source_digest: digest })
}

pub fn read_stats_file(path: impl AsRef<Path>) -> Result<BlockStatsTable> {
    read_stats_csv(File::open(path.as_ref())?)
}

/// Metadata sidecar written next to every statistics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub source: serde_json::Value,
    pub source_digest: String,
    pub n: usize,
    pub threads: usize,
    pub counts: StreamCounts,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl RunMetadata {
    pub fn new(command: &str, source: &dyn BlockSource, threads: usize, counts: StreamCounts) -> Self {
        Self {
            tool: "skewkurt".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            source: source.describe(),
            source_digest: source.digest(),
            n: source.block_size(),
            threads,
            counts,
            extra: serde_json::Value::Null,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = io::BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

/// Reads a whitespace/comma separated list of numbers (one series).
pub fn parse_values<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            out.push(tok.parse().map_err(|_| Error::Parse { line: i as u64 + 1, value: tok.into() })?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn positive_filter() {
        assert_eq!(apply_filter(&[0.0, 3.0, 0.0, 7.0, 1.0], Filter::PositiveOnly).unwrap(), vec![3.0, 7.0, 1.0]);
        assert!(matches!(apply_filter(&[0.0; 5], Filter::PositiveOnly), Err(Error::EmptySeries)));
        assert_eq!(apply_filter(&[1.0, 5.0, 2.0], Filter::Threshold { t: 1.5 }).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn partition_counts() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        let p = partition(&v, 4).unwrap();
        assert_eq!((p.block_count(), p.discarded()), (2, 2));
        assert_eq!(p.blocks().nth(1).unwrap(), &[4.0, 5.0, 6.0, 7.0]);
        let p = partition(&v[..4], 4).unwrap();
        assert_eq!((p.block_count(), p.discarded()), (1, 0));
        assert!(matches!(partition(&v[..3], 4), Err(Error::SeriesTooShort { len: 3, n: 4 })));
        assert!(matches!(partition(&v, 1), Err(Error::SampleTooSmall { .. })));
    }

    #[test]
    fn partition_arithmetic_at_scale() {
        // No allocation needed to check the block count of a 10⁸ series.
        let src = SyntheticSource::with_total(&DistributionSpec::default_for("gaussian").unwrap(), 100, 100_000_000, 0)
            .unwrap();
        assert_eq!(src.block_count(), 1_000_000);
    }

    #[test]
    fn ingest_two_column_with_sentinels() {
        let text = "date,value\n# comment\n2020-01-01,0\n2020-01-02,3\n2020-01-03,-9999\n2020-01-04,\n2020-01-05,7\n2020-01-06,1\n";
        let opts = IngestOptions { filter: Filter::PositiveOnly, ..Default::default() };
        let s = ingest_reader(text.as_bytes(), &opts).unwrap();
        assert_eq!(s.values, vec![3.0, 7.0, 1.0]);
        assert_eq!((s.total_read, s.dropped_missing, s.dropped_filtered), (6, 2, 1));
    }

    #[test]
    fn ingest_errors() {
        let opts = IngestOptions { filter: Filter::PositiveOnly, ..Default::default() };
        assert!(matches!(ingest_reader("0\n0\n0\n".as_bytes(), &opts), Err(Error::EmptySeries)));
        let err = ingest_reader("1\n2\nabc\n".as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let opts = IngestOptions { column: Some(3), ..Default::default() };
        assert!(matches!(ingest_reader("1,2\n".as_bytes(), &opts), Err(Error::MissingColumn { .. })));
        assert!(matches!(ingest_series("/nonexistent/file.csv", &opts), Err(Error::Io(_))));
        let semi = IngestOptions { delimiter: b';', column: Some(1), ..Default::default() };
        assert_eq!(ingest_reader("a;1.5\nb;2.5\n".as_bytes(), &semi).unwrap().values, vec![1.5, 2.5]);
    }

    #[test]
    fn constant_source_is_all_degenerate() {
        let src = SeriesSource::new(vec![5.0; 40], 4, "constant").unwrap();
        let table = map_moments(&src, 2).unwrap();
        assert!(table.rows.is_empty());
        assert_eq!(table.degenerate_count, 10);
    }

    #[test]
    fn conservation_of_values() {
        let mut v: Vec<f64> = (0..103).map(|i| ((i * 7919) % 13) as f64).collect();
        v[8..12].fill(2.0);
        let src = SeriesSource::new(v.clone(), 4, "mixed").unwrap();
        let table = map_moments(&src, 3).unwrap();
        assert_eq!(table.rows.len() as u64 + table.degenerate_count, 25);
        assert_eq!((table.rows.len() as u64 + table.degenerate_count) * 4 + table.discarded_tail, 103);
        assert!(table.rows.windows(2).all(|w| w[0].block_index < w[1].block_index));
    }

    #[test]
    fn poisson_blocks_satisfy_every_bound() {
        let spec = DistributionSpec::default_for("poisson").unwrap();
        let src = SyntheticSource::new(&spec, 4, 1_000_000, 17).unwrap();
        let mut checked = 0u64;
        let counts = stream_summaries(&src, 2, |rows| {
            for row in rows {
                let v = crate::bounds::check_summary(&row.summary)?;
                assert!(v.is_empty(), "block {}: {v:?}", row.block_index);
                checked += 1;
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(checked, counts.rows);
        assert_eq!(counts.rows + counts.degenerate, 1_000_000);
    }

    #[test]
    fn gaussian_mean_kurtosis_matches_small_sample_expectation() {
        let spec = DistributionSpec::default_for("gaussian").unwrap();
        let table = map_moments(&SyntheticSource::new(&spec, 100, 100_000, 23).unwrap(), 2).unwrap();
        let mean_k = table.rows.iter().map(|r| r.summary.k).sum::<f64>() / table.rows.len() as f64;
        // E[m4/m2²] = 3(n−1)/(n+1) for Gaussian blocks, 2.9406 at n = 100,
        // which sits just outside 3 ± 0.05.
        let expected = 3.0 * 99.0 / 101.0;
        assert!((mean_k - expected).abs() <= 0.005, "{mean_k} vs {expected}");
        assert!((mean_k - 3.0).abs() < 0.07, "{mean_k}");
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let spec = DistributionSpec::default_for("poisson").unwrap();
        let src = SyntheticSource::new(&spec, 4, 40_000, 11).unwrap();
        let csv = |threads| {
            let t = map_moments(&src, threads).unwrap();
            write_stats_csv(&t, Vec::new()).unwrap()
        };
        let one = csv(1);
        assert_eq!(one, csv(2));
        assert_eq!(one, csv(5));
    }

    #[test]
    fn csv_round_trip() {
        let spec = DistributionSpec::default_for("lognormal").unwrap();
        let src = SyntheticSource::new(&spec, 7, 200, 3).unwrap();
        let table = map_moments(&src, 1).unwrap();
        let bytes = write_stats_csv(&table, Vec::new()).unwrap();
        let header = std::str::from_utf8(&bytes).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "block_index,n,mean,m2,S,K,R");
        let back = read_stats_csv(bytes.as_slice()).unwrap();
        assert_eq!(back.n, 7);
        for (a, b) in table.rows.iter().zip(&back.rows) {
            assert_eq!(a.block_index, b.block_index);
            assert_eq!((a.summary.s, a.summary.k, a.summary.r), (b.summary.s, b.summary.k, b.summary.r));
            assert_eq!((a.summary.mean, a.summary.m2), (b.summary.mean, b.summary.m2));
        }
    }

    #[test]
    fn g17_format() {
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(2.5e-7), "2.4999999999999999e-07");
        assert_eq!(fmt_g17(-1234.5), "-1234.5");
        assert_eq!(fmt_g17(1e20), "1e+20");
    }

    proptest! {
        #[test]
        fn g17_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let s = fmt_g17(x);
            prop_assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
