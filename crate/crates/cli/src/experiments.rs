//! Experiment drivers shared by the subcommands, the `repro` recipes and the
//! acceptance suite. Nothing here touches the file system except through
//! the optional writers handed in by the caller.

use std::io::Write;

use serde::Serialize;
use skewkurt::bounds::table1_envelope;
use skewkurt::detector::{emergence_from_pairs, DetectorConfig, EmergenceReport};
use skewkurt::envelope::{EnvelopeAccumulator, EnvelopeEstimate};
use skewkurt::partition::{stream_summaries, StatsCsvWriter, StreamCounts, SyntheticSource};
use skewkurt::samplers::{derive_seed, DistributionSpec};
use skewkurt::{Error, Result};

/// Series length used by the original experiments.
pub const ORIGINAL_SCALE: u64 = 100_000_000;
/// Default series length for desk runs.
pub const DEFAULT_SCALE: u64 = 1_000_000;
/// Block sizes of the emergence matrix.
pub const TABLE2_NS: [usize; 3] = [4, 100, 1000];

/// Published emergence decisions for `n = 4, 100, 1000`, in
/// [`DistributionSpec::FAMILIES`] order.
pub const PUBLISHED_TABLE2: [[char; 3]; 10] = [
    ['N', 'N', 'N'],
    ['N', 'Y', 'N'],
    ['N', 'Y', 'Y'],
    ['N', 'Y', 'N'],
    ['N', 'Y', 'Y'],
    ['N', 'N', 'N'],
    ['N', 'N', 'N'],
    ['N', 'N', 'N'],
    ['N', 'Y', 'N'],
    ['N', 'Y', 'Y'],
];

/// The published decision for a family and block size, if tabulated.
pub fn published_decision(family: &str, n: usize) -> Option<char> {
    let row = DistributionSpec::FAMILIES.iter().position(|f| *f == family)?;
    let col = TABLE2_NS.iter().position(|&m| m == n)?;
    Some(PUBLISHED_TABLE2[row][col])
}

/// Master seed of one cell of an experiment, independent of every other cell.
pub fn cell_seed(master_seed: u64, experiment: &str, family: &str, n: usize) -> u64 {
    derive_seed(master_seed, &format!("{experiment}/{family}/n{n}"))
}

/// One cell of the emergence matrix.
#[derive(Clone, Debug, Serialize)]
pub struct EmergenceCell {
    pub family: String,
    pub distribution: String,
    pub n: usize,
    pub blocks: u64,
    pub counts: StreamCounts,
    /// `None` when no quantile level had enough conditioning rows.
    pub report: Option<EmergenceReport>,
}

impl EmergenceCell {
    /// `Y`/`N`; a cell without any usable level counts as no emergence.
    pub fn decision(&self) -> char {
        self.report.as_ref().map_or('N', EmergenceReport::decision)
    }

    pub fn insufficient(&self) -> bool {
        self.report.is_none()
    }
}

/// Streams `⌊scale/n⌋` synthetic blocks, optionally writing the statistics
/// CSV, and runs the emergence detector on the `(S, R)` pairs.
pub fn emergence_cell(
    spec: &DistributionSpec,
    n: usize,
    scale: u64,
    seed: u64,
    threads: usize,
    config: &DetectorConfig,
    stats_out: Option<&mut dyn Write>,
) -> Result<EmergenceCell> {
    let source = SyntheticSource::with_total(spec, n, scale, seed)?;
    let mut pairs = Vec::with_capacity((scale / n as u64).min(1 << 26) as usize);
    let mut writer = stats_out.map(StatsCsvWriter::new).transpose()?;
    let counts = stream_summaries(&source, threads, |rows| {
        pairs.extend(rows.iter().map(|r| (r.summary.s, r.summary.r)));
        if let Some(w) = writer.as_mut() {
            w.write_rows(rows)?;
        }
        Ok(())
    })?;
    if let Some(w) = writer {
        w.finish()?;
    }
    let label = format!("{spec} n={n}");
    let report = match emergence_from_pairs(&pairs, n, config, &label) {
        Ok(r) => Some(r),
        Err(Error::TableTooSmall { .. } | Error::EmptyTable) => None,
        Err(e) => return Err(e),
    };
    Ok(EmergenceCell {
        family: spec.family().to_string(),
        distribution: spec.to_string(),
        n,
        blocks: counts.blocks,
        counts,
        report,
    })
}

/// The two sources behind the empirical envelopes: standard Gaussian and
/// Poisson(20), which between them reach both the smooth and the
/// lattice-like parts of the `(S, K)` domain.
pub fn envelope_sources() -> [DistributionSpec; 2] {
    [DistributionSpec::Gaussian { mean: 0.0, sd: 1.0 }, DistributionSpec::Poisson { rate: 20.0 }]
}

/// Envelope of a mixed Gaussian/Poisson table plus a running comparison
/// against the tabulated envelope.
#[derive(Clone, Debug, Serialize)]
pub struct MixedEnvelope {
    pub estimate: EnvelopeEstimate,
    pub blocks: u64,
    pub counts: StreamCounts,
    /// Rows with `K < table1_lower(S) − tolerance` (only for `n ∈ 4..=9`).
    pub below_table1: u64,
    /// Smallest `K − table1_lower(S)` seen, with the row attaining it.
    pub worst_margin: Option<Margin>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Margin {
    pub margin: f64,
    pub s: f64,
    pub k: f64,
    pub family: &'static str,
    pub block_index: u64,
}

/// Streams `blocks` blocks of size `n`, split evenly between the
/// [`envelope_sources`], into an envelope accumulator. Memory stays
/// proportional to the number of bins.
pub fn mixed_envelope(
    n: usize,
    blocks: u64,
    master_seed: u64,
    threads: usize,
    bin_width: f64,
    tolerance: f64,
) -> Result<MixedEnvelope> {
    let mut acc = EnvelopeAccumulator::new(n, bin_width)?;
    let table = table1_envelope::<f64>(n).ok();
    let mut below = 0u64;
    let mut worst: Option<Margin> = None;
    let mut total = StreamCounts::default();
    let specs = envelope_sources();
    for (i, spec) in specs.iter().enumerate() {
        let share = blocks / 2 + if i == 0 { blocks % 2 } else { 0 };
        if share == 0 {
            continue;
        }
        let family = spec.family();
        let source = SyntheticSource::new(spec, n, share, cell_seed(master_seed, "envelope", family, n))?;
        let counts = stream_summaries(&source, threads, |rows| {
            for row in rows {
                let (s, k) = (row.summary.s, row.summary.k);
                acc.push(s, k);
                if let Some(t) = &table {
                    let limit = t.eval(s.clamp(t.segments[0].s_lo, -t.segments[0].s_lo))?;
                    let margin = k - limit;
                    if margin < -tolerance {
                        below += 1;
                    }
                    if worst.is_none_or(|w| margin < w.margin) {
                        worst = Some(Margin { margin, s, k, family, block_index: row.block_index });
                    }
                }
            }
            Ok(())
        })?;
        total.blocks += counts.blocks;
        total.rows += counts.rows;
        total.degenerate += counts.degenerate;
    }
    Ok(MixedEnvelope { estimate: acc.finish(), blocks, counts: total, below_table1: below, worst_margin: worst })
}

/// `(S, K)` of every non-degenerate Poisson(20) block of size 4.
pub fn deltoid_points(blocks: u64, master_seed: u64, threads: usize) -> Result<(Vec<(f64, f64)>, StreamCounts)> {
    let spec = DistributionSpec::Poisson { rate: 20.0 };
    let source = SyntheticSource::new(&spec, 4, blocks, cell_seed(master_seed, "deltoid", spec.family(), 4))?;
    let mut points = Vec::with_capacity(blocks.min(1 << 26) as usize);
    let counts = stream_summaries(&source, threads, |rows| {
        points.extend(rows.iter().map(|r| (r.summary.s, r.summary.k)));
        Ok(())
    })?;
    Ok((points, counts))
}

/// Distinct points with multiplicities, sorted by `(S, K)`.
pub fn distinct_with_counts(points: &[(f64, f64)]) -> Vec<(f64, f64, u64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64, u64)> = Vec::new();
    for (s, k) in sorted {
        match out.last_mut() {
            Some(last) if last.0.to_bits() == s.to_bits() && last.1.to_bits() == k.to_bits() => last.2 += 1,
            _ => out.push((s, k, 1)),
        }
    }
    out
}

/// The four conditional-ECDF panels: label, family, block size.
pub const FIG4_CASES: [(&str, &str, usize); 4] =
    [("a", "gaussian", 100), ("b", "exponential", 1000), ("c", "lognormal", 100), ("d", "pareto", 1000)];
