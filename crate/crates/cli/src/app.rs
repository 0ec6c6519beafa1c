//! Argument parsing, dispatch and the analysis subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use skewkurt::bounds::{check_summary, table1_envelope, BoundKind, BoundSet};
use skewkurt::boxdim::{box_dimension, PointSet2D};
use skewkurt::detector::{conditional_ecdf, emergence, DetectorConfig, EmergenceReport};
use skewkurt::envelope::{fit_envelope, lower_envelope, pearson_gap, pearson_gap_within, Breakpoints, FittedEnvelope};
use skewkurt::partition::{
    fmt_g17, ingest_series, read_stats_file, stream_summaries, BlockSource, Filter, IngestOptions, SeriesSource,
    StatsCsvWriter, StreamCounts, SyntheticSource,
};
use skewkurt::samplers::DistributionSpec;
use skewkurt::{Error, ErrorCategory};

use crate::experiments::{self, emergence_cell, published_decision, EmergenceCell, DEFAULT_SCALE, TABLE2_NS};
use crate::output::{q_label, sci, stem, RunContext};
use crate::repro::{self, ReproArgs};

#[derive(Debug, Parser)]
#[command(name = "skewkurt", version, about = "Block-wise skewness, kurtosis and the 4/3 power law")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed of every random stream.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving CSV outputs and their JSON sidecars.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Series length N per experiment cell, e.g. 1e6 (synthetic sources
    /// yield ⌊N/n⌋ blocks).
    #[arg(long, global = true, value_parser = parse_scale)]
    pub scale: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the closed-form skewness/kurtosis bounds for block size n.
    Bounds {
        #[arg(long)]
        n: usize,
        /// Also evaluate the S-dependent bounds at this skewness.
        #[arg(long, allow_hyphen_values = true)]
        s: Option<f64>,
    },
    /// Draw synthetic blocks and write their statistics (or the raw values).
    Synth {
        #[arg(long)]
        dist: String,
        /// Parameter overrides, e.g. `shape=3,scale=2`.
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long)]
        n: usize,
        /// Number of blocks (default: ⌊scale/n⌋).
        #[arg(long)]
        blocks: Option<u64>,
        /// Write the raw series, one value per line, instead of statistics.
        #[arg(long)]
        values: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition a series (file or synthetic) and write per-block statistics.
    Analyze(AnalyzeArgs),
    /// Run the conditional-ECDF emergence detector on a statistics CSV.
    Detect {
        #[arg(long)]
        stats: PathBuf,
        /// Comma-separated quantile levels.
        #[arg(long, value_delimiter = ',')]
        q_grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.9)]
        p_star: f64,
        #[arg(long, default_value_t = 0.999)]
        q_max: f64,
        /// Write one ECDF CSV per quantile level into this directory.
        #[arg(long)]
        emit_ecdf: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emergence matrix over the ten reference distributions.
    Table2(Table2Args),
    /// Empirical lower envelope of K against S, with parabola fits.
    Envelope {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = skewkurt::envelope::DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        /// `table1`, `auto`, `none` or comma-separated breakpoints
        /// (default: `table1` for n = 4..9, otherwise `none`).
        #[arg(long, allow_hyphen_values = true)]
        breakpoints: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Box-counting dimension of the (S, K) point set of a statistics CSV.
    Boxdim {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = 12)]
        levels: usize,
        /// Inclusive level range `j1:j2` for the slope fit.
        #[arg(long, value_parser = parse_fit_range)]
        fit_range: Option<(usize, usize)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce a figure or table of the original study.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Delimited text file holding the series.
    #[arg(long, conflicts_with = "dist", required_unless_present = "dist")]
    pub input: Option<PathBuf>,
    /// Synthetic source instead of a file.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long, default_value = "")]
    pub params: String,
    #[arg(long)]
    pub n: usize,
    /// Number of synthetic blocks (default: ⌊scale/n⌋).
    #[arg(long)]
    pub blocks: Option<u64>,
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// `none`, `positive` or `threshold:<t>` (keep values > t).
    #[arg(long, default_value = "none", value_parser = parse_filter)]
    pub filter: Filter,
    /// Zero-based value column (default: last column).
    #[arg(long)]
    pub column: Option<usize>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Missing-value sentinel; `none` disables it.
    #[arg(long, default_value = "-9999", allow_hyphen_values = true)]
    pub missing: String,
}

impl IngestArgs {
    pub fn options(&self) -> Result<IngestOptions> {
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidArgument(format!("delimiter must be ASCII, got {:?}", self.delimiter)).into());
        }
        Ok(IngestOptions {
            column: self.column,
            delimiter: self.delimiter as u8,
            missing_sentinel: parse_sentinel(&self.missing).map_err(Error::InvalidArgument)?,
            filter: self.filter,
        })
    }
}

#[derive(Debug, Args)]
pub struct Table2Args {
    /// Restrict to these families (default: all ten).
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Block sizes.
    #[arg(long, value_delimiter = ',', default_values_t = TABLE2_NS)]
    pub ns: Vec<usize>,
    /// Skip writing the per-cell statistics CSVs.
    #[arg(long)]
    pub no_stats: bool,
}

fn parse_scale(s: &str) -> Result<u64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s}"))?;
    if !(1.0..=1e15).contains(&v) || v.fract() != 0.0 {
        return Err(format!("scale must be a positive integer up to 1e15, got {s}"));
    }
    Ok(v as u64)
}

fn parse_fit_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected j1:j2, got {s}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad level {a}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad level {b}"))?;
    if a > b {
        return Err(format!("empty fit range {s}"));
    }
    Ok((a, b))
}

fn parse_filter(s: &str) -> Result<Filter, String> {
    match s {
        "none" => Ok(Filter::None),
        "positive" => Ok(Filter::PositiveOnly),
        _ => {
            let t = s
                .strip_prefix("threshold:")
                .ok_or_else(|| format!("filter must be none, positive or threshold:<t>, got {s}"))?;
            let t: f64 = t.parse().map_err(|_| format!("bad threshold {t}"))?;
            Ok(Filter::Threshold { t })
        }
    }
}

fn parse_sentinel(s: &str) -> Result<Option<f64>, String> {
    if s == "none" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("bad sentinel {s}"))
}

/// Parses arguments from the process, runs, and maps errors to exit codes.
pub fn main_entry() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = category_name(&err);
            eprintln!("error: {err:#}");
            eprintln!("{}", json!({ "error": { "category": category, "message": format!("{err:#}") } }));
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Exit code of a failed run: 2 usage, 3 data, 4 domain, 5 insufficient
/// data, 6 internal invariant, 7 I/O, 1 anything else. Clap reports its
/// own argument errors with 2 as well.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match classify(err) {
        Some(ErrorCategory::Usage) => 2,
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Domain) => 4,
        Some(ErrorCategory::Insufficient) => 5,
        Some(ErrorCategory::Internal) => 6,
        Some(ErrorCategory::Io) => 7,
        None => 1,
    }
}

fn classify(err: &anyhow::Error) -> Option<ErrorCategory> {
    err.chain().find_map(|cause| {
        if let Some(e) = cause.downcast_ref::<Error>() {
            Some(e.category())
        } else if cause.downcast_ref::<std::io::Error>().is_some() {
            Some(ErrorCategory::Io)
        } else {
            None
        }
    })
}

fn category_name(err: &anyhow::Error) -> &'static str {
    match classify(err) {
        Some(ErrorCategory::Usage) => "usage",
        Some(ErrorCategory::Data) => "data",
        Some(ErrorCategory::Domain) => "domain",
        Some(ErrorCategory::Insufficient) => "insufficient",
        Some(ErrorCategory::Internal) => "internal",
        Some(ErrorCategory::Io) => "io",
        None => "other",
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let threads = match cli.global.threads {
        Some(0) => return Err(Error::InvalidArgument("--threads must be at least 1".into()).into()),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let ctx = RunContext {
        command: command_name(&cli.command).to_string(),
        argv,
        seed: cli.global.seed,
        threads,
        out_dir: cli.global.out_dir,
        scale: cli.global.scale.unwrap_or(DEFAULT_SCALE),
    };
    match cli.command {
        Command::Bounds { n, s } => cmd_bounds(&ctx, n, s),
        Command::Synth { dist, params, n, blocks, values, out } => {
            cmd_synth(&ctx, &dist, &params, n, blocks, values, out.as_deref())
        }
        Command::Analyze(args) => cmd_analyze(&ctx, &args),
        Command::Detect { stats, q_grid, epsilon, p_star, q_max, emit_ecdf, out } => {
            let mut config = DetectorConfig { epsilon, p_star, q_max_for_emergence: q_max, ..Default::default() };
            if let Some(grid) = q_grid {
                config.q_grid = grid;
            }
            cmd_detect(&ctx, &stats, &config, emit_ecdf.as_deref(), out.as_deref())
        }
        Command::Table2(args) => cmd_table2(&ctx, &args, "table2").map(|_| ()),
        Command::Envelope { stats, bin_width, breakpoints, out } => {
            cmd_envelope(&ctx, &stats, bin_width, breakpoints.as_deref(), out.as_deref())
        }
        Command::Boxdim { stats, levels, fit_range, out } => {
            cmd_boxdim(&ctx, &stats, levels, fit_range, out.as_deref())
        }
        Command::Repro(args) => repro::run(&ctx, &args),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Bounds { .. } => "bounds",
        Command::Synth { .. } => "synth",
        Command::Analyze(_) => "analyze",
        Command::Detect { .. } => "detect",
        Command::Table2(_) => "table2",
        Command::Envelope { .. } => "envelope",
        Command::Boxdim { .. } => "boxdim",
        Command::Repro(_) => "repro",
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_default()
}

fn cmd_bounds(ctx: &RunContext, n: usize, s: Option<f64>) -> Result<()> {
    let b = BoundSet::<f64>::new(n)?;
    if let Some(s) = s.filter(|s| s.abs() > b.skew_abs_max + skewkurt::bounds::BOUND_TOLERANCE) {
        return Err(Error::SkewOutOfRange { s: s.abs(), max: b.skew_abs_max }.into());
    }
    let sharma = s.map(|s| b.sharma_upper(s)).transpose().ok().flatten();
    let pearson = s.map(|s| b.pearson_lower(s));
    let table1 = s.and_then(|s| table1_envelope::<f64>(n).ok().and_then(|t| t.eval(s).ok()));

    let mut text = vec![
        ("n", n as f64, "block size"),
        ("skew_abs_max_loose", b.skew_abs_max_loose, "|S| <= sqrt(n-1)"),
        ("skew_abs_max", b.skew_abs_max, "|S| <= (n-2)/sqrt(n-1)"),
        ("kurt_max_loose", b.kurt_max_loose, "K <= n"),
        ("kurt_max_dalen", b.kurt_max_dalen, "K <= (n^2-3n+3)/(n-1)  (Dalen)"),
    ];
    if let Some(s) = s {
        text.push(("s", s, "skewness evaluated"));
        text.push(("pearson_lower", pearson.unwrap_or(f64::NAN), "K >= 1 + S^2"));
        if let Some(v) = sharma {
            text.push(("sharma_upper", v, "K <= ((n-3)/(n-2)) S^2/2 + n/2"));
        }
        if let Some(v) = table1 {
            text.push(("table1_lower", v, "tabulated lower envelope (n = 4..9)"));
        }
    }
    for (k, v, what) in &text {
        if *k == "n" {
            println!("{k:<20} {n:<12} {what}");
        } else {
            println!("{k:<20} {v:<12.6} {what}");
        }
    }

    let header =
        "n,s,skew_abs_max_loose,skew_abs_max,kurt_max_loose,kurt_max_dalen,pearson_lower,sharma_upper,table1_lower";
    let row = format!(
        "{n},{},{},{},{},{},{},{},{}",
        opt(s),
        fmt_g17(b.skew_abs_max_loose),
        fmt_g17(b.skew_abs_max),
        fmt_g17(b.kurt_max_loose),
        fmt_g17(b.kurt_max_dalen),
        opt(pearson),
        opt(sharma),
        opt(table1)
    );
    println!();
    println!("{header}");
    println!("{row}");

    let path = ctx.path(&format!("bounds_n{n}.csv"))?;
    let mut w = ctx.create(&path)?;
    writeln!(w, "{header}")?;
    writeln!(w, "{row}")?;
    w.flush()?;
    ctx.sidecar(&path, json!({ "bounds": b, "s": s }))?;
    Ok(())
}

fn blocks_for(ctx: &RunContext, n: usize, blocks: Option<u64>) -> Result<u64> {
    let blocks = blocks.unwrap_or(ctx.scale / n.max(1) as u64);
    if blocks == 0 {
        return Err(Error::SeriesTooShort { len: ctx.scale as usize, n }.into());
    }
    Ok(blocks)
}

fn cmd_synth(
    ctx: &RunContext,
    dist: &str,
    params: &str,
    n: usize,
    blocks: Option<u64>,
    values: bool,
    out: Option<&Path>,
) -> Result<()> {
    let spec = DistributionSpec::parse(dist, params)?;
    let blocks = blocks_for(ctx, n, blocks)?;
    let source = SyntheticSource::new(&spec, n, blocks, ctx.seed)?;
    let family = spec.family();

    if values {
        let path = ctx.output(out, &format!("synth_{family}_n{n}_values.csv"))?;
        let mut w = ctx.create(&path)?;
        writeln!(w, "# {spec} n={n} blocks={blocks} seed={}", ctx.seed)?;
        let mut buf = vec![0.0; n];
        for i in 0..blocks {
            source.fill_block(i, &mut buf);
            writeln!(w, "# block {i}")?;
            for v in &buf {
                writeln!(w, "{}", fmt_g17(*v))?;
            }
        }
        w.flush()?;
        ctx.sidecar(&path, json!({ "source": source.describe(), "values": blocks * n as u64 }))?;
        println!("{spec}: wrote {} values in {blocks} blocks to {}", blocks * n as u64, path.display());
        return Ok(());
    }

    let path = ctx.output(out, &format!("synth_{family}_n{n}.csv"))?;
    let counts = write_stats(ctx, &source, &path, None)?;
    ctx.sidecar(&path, json!({ "source": source.describe(), "source_digest": source.digest(), "counts": counts }))?;
    println!(
        "{spec}: {} blocks of n = {n}, {} rows, {} degenerate -> {}",
        counts.blocks,
        counts.rows,
        counts.degenerate,
        path.display()
    );
    Ok(())
}

/// Violation tallies per bound kind.
#[derive(Debug, Default, serde::Serialize)]
pub struct ViolationTally(pub Vec<(BoundKind, u64)>);

impl ViolationTally {
    fn add(&mut self, kind: BoundKind) {
        match self.0.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, c)) => *c += 1,
            None => self.0.push((kind, 1)),
        }
    }
}

/// Streams a source into a statistics CSV, optionally tallying bound checks.
fn write_stats(
    ctx: &RunContext,
    source: &dyn BlockSource,
    path: &Path,
    mut tally: Option<&mut ViolationTally>,
) -> Result<StreamCounts> {
    let mut writer = StatsCsvWriter::new(ctx.create(path)?)?;
    let counts = stream_summaries(source, ctx.threads, |rows| {
        writer.write_rows(rows)?;
        if let Some(t) = tally.as_deref_mut() {
            for row in rows {
                for v in check_summary(&row.summary)? {
                    t.add(v.bound);
                }
            }
        }
        Ok(())
    })?;
    writer.finish()?;
    Ok(counts)
}

pub(crate) struct Analyzed {
    pub path: PathBuf,
    pub counts: StreamCounts,
    pub tally: ViolationTally,
}

pub(crate) fn analyze_file(
    ctx: &RunContext,
    input: &Path,
    n: usize,
    ingest: &IngestArgs,
    path: &Path,
) -> Result<Analyzed> {
    let opts = ingest.options()?;
    let series = ingest_series(input, &opts).with_context(|| format!("reading {}", input.display()))?;
    let source = SeriesSource::new(series.values.clone(), n, input.display().to_string())?;
    let mut tally = ViolationTally::default();
    let counts = write_stats(ctx, &source, path, Some(&mut tally))?;
    ctx.sidecar(
        path,
        json!({
            "input": { "path": input, "sha256": series.digest },
            "ingest": opts,
            "series": series,
            "kept_values": series.values.len(),
            "source": source.describe(),
            "counts": counts,
            "bound_violations": tally,
        }),
    )?;
    println!(
        "{}: {} values read, {} missing, {} filtered, {} kept",
        input.display(),
        series.total_read,
        series.dropped_missing,
        series.dropped_filtered,
        series.values.len()
    );
    Ok(Analyzed { path: path.to_path_buf(), counts, tally })
}

fn cmd_analyze(ctx: &RunContext, args: &AnalyzeArgs) -> Result<()> {
    let n = args.n;
    let result = if let Some(input) = &args.input {
        let path = ctx.output(args.out.as_deref(), &format!("analyze_{}_n{n}.csv", stem(input)))?;
        analyze_file(ctx, input, n, &args.ingest, &path)?
    } else {
        let dist = args.dist.as_deref().expect("clap enforces --input or --dist");
        let spec = DistributionSpec::parse(dist, &args.params)?;
        let blocks = blocks_for(ctx, n, args.blocks)?;
        let source = SyntheticSource::new(&spec, n, blocks, ctx.seed)?;
        let path = ctx.output(args.out.as_deref(), &format!("analyze_{}_n{n}.csv", spec.family()))?;
        let mut tally = ViolationTally::default();
        let counts = write_stats(ctx, &source, &path, Some(&mut tally))?;
        ctx.sidecar(
            &path,
            json!({ "source": source.describe(), "source_digest": source.digest(), "counts": counts, "bound_violations": tally }),
        )?;
        Analyzed { path, counts, tally }
    };
    let c = result.counts;
    println!(
        "{} blocks of n = {n}: {} rows, {} degenerate, {} trailing values discarded",
        c.blocks, c.rows, c.degenerate, c.discarded_tail
    );
    if result.tally.0.is_empty() {
        println!("bound checks: no violations");
    } else {
        for (kind, count) in &result.tally.0 {
            println!("bound checks: {count} rows violate {kind:?}");
        }
    }
    println!("statistics -> {}", result.path.display());
    Ok(())
}

pub(crate) fn print_report(report: &EmergenceReport) {
    println!("{}  (rows = {}, n = {})", report.label, report.rows, report.n);
    println!("  {:>8}  {:>12}  {:>10}  {:>8}", "q", "s_q", "rows", "p(q)");
    for l in &report.levels {
        let p = l.p.map_or("skipped".to_string(), |p| format!("{p:.4}"));
        println!("  {:>8}  {:>12.6}  {:>10}  {:>8}", l.q, l.s_q, l.conditioning_rows, p);
    }
    let witness = report.witness_q.map_or("none".to_string(), |q| q.to_string());
    println!(
        "  emerged: {} (witness q = {witness}; p* = {}, q_max = {})",
        report.decision(),
        report.config.p_star,
        report.config.q_max_for_emergence
    );
}

pub(crate) fn write_levels_csv(path: &Path, report: &EmergenceReport) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "q,s_q,conditioning_rows,p")?;
    for l in &report.levels {
        writeln!(w, "{},{},{},{}", l.q, fmt_g17(l.s_q), l.conditioning_rows, opt(l.p))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the unconditioned ECDF and one ECDF per evaluable grid level.
pub(crate) fn emit_ecdfs(
    table: &skewkurt::partition::BlockStatsTable,
    config: &DetectorConfig,
    dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut levels: Vec<Option<f64>> = vec![None];
    levels.extend(config.q_grid.iter().map(|&q| Some(q)));
    for q in levels {
        let curve = match conditional_ecdf(table, q) {
            Ok(c) => c,
            Err(Error::InsufficientTailRows { available, .. }) => {
                println!("  ecdf q = {}: skipped ({available} conditioning rows)", q.unwrap_or(0.0));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let name = match q {
            None => format!("{prefix}ecdf_unconditioned.csv"),
            Some(q) => format!("{prefix}ecdf_q{}.csv", q_label(q)),
        };
        let path = dir.join(name);
        curve.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        written.push(path);
    }
    Ok(written)
}

fn cmd_detect(
    ctx: &RunContext,
    stats: &Path,
    config: &DetectorConfig,
    emit_ecdf: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let table = read_stats_file(stats).with_context(|| format!("reading {}", stats.display()))?;
    let report = emergence(&table, config, &stem(stats))?;
    print_report(&report);
    let path = ctx.output(out, &format!("detect_{}.csv", stem(stats)))?;
    write_levels_csv(&path, &report)?;
    let mut ecdf_files = Vec::new();
    if let Some(dir) = emit_ecdf {
        ecdf_files = emit_ecdfs(&table, config, dir, "")?;
        for f in &ecdf_files {
            ctx.sidecar(f, json!({ "stats": stats, "stats_sha256": table.source_digest }))?;
        }
    }
    ctx.sidecar(
        &path,
        json!({ "stats": stats, "stats_sha256": table.source_digest, "report": report, "ecdf_files": ecdf_files }),
    )?;
    println!("levels -> {}", path.display());
    Ok(())
}

/// Runs the emergence matrix; returns the cells in family-major order.
pub(crate) fn cmd_table2(ctx: &RunContext, args: &Table2Args, prefix: &str) -> Result<Vec<EmergenceCell>> {
    let specs: Vec<DistributionSpec> = match &args.families {
        Some(list) => list.iter().map(|f| DistributionSpec::default_for(f)).collect::<skewkurt::Result<_>>()?,
        None => DistributionSpec::reference_defaults(),
    };
    let config = DetectorConfig::default();
    let mut cells = Vec::new();
    for spec in &specs {
        for &n in &args.ns {
            let seed = experiments::cell_seed(ctx.seed, "table2", spec.family(), n);
            let cell = if args.no_stats {
                emergence_cell(spec, n, ctx.scale, seed, ctx.threads, &config, None)?
            } else {
                let path = ctx.path(&format!("{prefix}_stats_{}_n{n}.csv", spec.family()))?;
                let mut w = ctx.create(&path)?;
                let cell = emergence_cell(spec, n, ctx.scale, seed, ctx.threads, &config, Some(&mut w))?;
                w.flush()?;
                drop(w);
                ctx.sidecar(&path, json!({ "distribution": spec, "n": n, "cell_seed": seed, "counts": cell.counts }))?;
                cell
            };
            cells.push(cell);
        }
    }

    // Grid.
    let width = cells.iter().map(|c| c.distribution.len()).max().unwrap_or(12).max(12);
    print!("{:<width$}", "distribution");
    for n in &args.ns {
        print!("  {:>7}", format!("n={n}"));
    }
    println!("   published");
    let mut any_insufficient = false;
    for (spec, row) in specs.iter().zip(cells.chunks(args.ns.len())) {
        print!("{:<width$}", spec.to_string());
        for c in row {
            let mark = if c.insufficient() { "~" } else { "" };
            any_insufficient |= c.insufficient();
            print!("  {:>7}", format!("{}{mark}", c.decision()));
        }
        let published: String = args
            .ns
            .iter()
            .map(|&n| published_decision(spec.family(), n).unwrap_or('-'))
            .map(String::from)
            .collect::<Vec<_>>()
            .join(" ");
        println!("   {published}");
    }
    if any_insufficient {
        println!("~ no quantile level had {} conditioning rows; reported as N", skewkurt::detector::MIN_TAIL_ROWS);
    }

    // p(q) curves.
    let grid = config.q_grid.clone();
    println!();
    print!("{:<width$}  {:>5}", "p(q)", "n");
    for q in &grid {
        print!("  {:>7}", q);
    }
    println!();
    for c in &cells {
        print!("{:<width$}  {:>5}", c.distribution, c.n);
        for q in &grid {
            let p = c
                .report
                .as_ref()
                .and_then(|r| r.levels.iter().find(|l| l.q == *q))
                .and_then(|l| l.p)
                .map_or("-".to_string(), |p| format!("{p:.3}"));
            print!("  {p:>7}");
        }
        println!();
    }

    // Long table.
    let path = ctx.path(&format!("{prefix}.csv"))?;
    let mut w = ctx.create(&path)?;
    write!(w, "family,distribution,n,blocks,rows,degenerate,decision,published,witness_q,insufficient")?;
    for q in &grid {
        write!(w, ",p_{q}")?;
    }
    writeln!(w)?;
    for c in &cells {
        let witness = c.report.as_ref().and_then(|r| r.witness_q);
        write!(
            w,
            "{},\"{}\",{},{},{},{},{},{},{},{}",
            c.family,
            c.distribution,
            c.n,
            c.blocks,
            c.counts.rows,
            c.counts.degenerate,
            c.decision(),
            published_decision(&c.family, c.n).map(String::from).unwrap_or_default(),
            opt(witness),
            c.insufficient()
        )?;
        for q in &grid {
            let p = c.report.as_ref().and_then(|r| r.levels.iter().find(|l| l.q == *q)).and_then(|l| l.p);
            write!(w, ",{}", opt(p))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    drop(w);
    ctx.sidecar(&path, json!({ "detector": config, "cells": cells }))?;

    // Compact grid.
    let grid_path = ctx.path(&format!("{prefix}_grid.csv"))?;
    let mut w = ctx.create(&grid_path)?;
    write!(w, "distribution")?;
    for n in &args.ns {
        write!(w, ",n{n}")?;
    }
    writeln!(w)?;
    for (spec, row) in specs.iter().zip(cells.chunks(args.ns.len())) {
        write!(w, "\"{spec}\"")?;
        for c in row {
            write!(w, ",{}", c.decision())?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    drop(w);
    ctx.sidecar(&grid_path, json!({ "detector": config, "long_table": path }))?;
    println!();
    println!("emergence table -> {}", path.display());
    Ok(cells)
}

pub(crate) fn parse_breakpoints(arg: Option<&str>, n: usize) -> Result<Option<Breakpoints>> {
    let default = if (4..=9).contains(&n) { "table1" } else { "none" };
    Ok(match arg.unwrap_or(default) {
        "none" => None,
        "table1" => Some(Breakpoints::Table1),
        "auto" => Some(Breakpoints::Auto),
        list => {
            let v = list.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| {
                Error::InvalidArgument(format!("breakpoints must be table1, auto, none or numbers: {list}"))
            })?;
            Some(Breakpoints::Explicit(v))
        }
    })
}

pub(crate) fn print_fit(fit: &FittedEnvelope) {
    let table = table1_envelope::<f64>(fit.n).ok();
    for (i, s) in fit.segments.iter().enumerate() {
        let seg = &s.segment;
        print!(
            "  segment {i}: S in [{:.5}, {:.5}]  a = {:.5}  b = {:.5}  c = {:.5}  rms = {:.2e}  points = {}",
            seg.s_lo, seg.s_hi, seg.a, seg.b, seg.c, s.rms, s.points
        );
        if let Some(t) = table.as_ref().filter(|t| t.segments.len() == fit.segments.len()) {
            let p = &t.segments[i];
            print!("   (tabulated {:.5}, {:.5}, {:.5})", p.a, p.b, p.c);
        }
        println!();
    }
}

pub(crate) fn write_fit_csv(path: &Path, fit: &FittedEnvelope) -> Result<()> {
    let table = table1_envelope::<f64>(fit.n).ok().filter(|t| t.segments.len() == fit.segments.len());
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "n,segment,s_lo,s_hi,a,b,c,rms,points,a_table1,b_table1,c_table1")?;
    for (i, s) in fit.segments.iter().enumerate() {
        let seg = &s.segment;
        let t = table.as_ref().map(|t| t.segments[i]);
        writeln!(
            w,
            "{},{i},{},{},{},{},{},{},{},{},{},{}",
            fit.n,
            fmt_g17(seg.s_lo),
            fmt_g17(seg.s_hi),
            fmt_g17(seg.a),
            fmt_g17(seg.b),
            fmt_g17(seg.c),
            fmt_g17(s.rms),
            s.points,
            opt(t.map(|t| t.a)),
            opt(t.map(|t| t.b)),
            opt(t.map(|t| t.c))
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_envelope(
    ctx: &RunContext,
    stats: &Path,
    bin_width: f64,
    breakpoints: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let table = read_stats_file(stats).with_context(|| format!("reading {}", stats.display()))?;
    let estimate = lower_envelope(&table, bin_width)?;
    let path = ctx.output(out, &format!("envelope_{}.csv", stem(stats)))?;
    estimate.write_csv(ctx.create(&path)?)?;
    let gap = pearson_gap(&estimate);
    let gap2 = pearson_gap_within(&estimate, 2.0);
    println!(
        "n = {}: {} rows in {} occupied bins of width {bin_width}",
        estimate.n,
        estimate.total_rows,
        estimate.bins.len()
    );
    println!("Pearson gap: {gap:.4} overall, {gap2:.4} within |S| <= 2");

    let mut fit_json = serde_json::Value::Null;
    if let Some(bp) = parse_breakpoints(breakpoints, estimate.n)? {
        let fit = fit_envelope(&estimate, &bp)?;
        print_fit(&fit);
        let fit_path = path.with_file_name(format!("{}_fit.csv", stem(&path)));
        write_fit_csv(&fit_path, &fit)?;
        ctx.sidecar(&fit_path, json!({ "stats": stats, "breakpoints": bp, "fit": fit }))?;
        fit_json = serde_json::to_value(&fit)?;
    }
    ctx.sidecar(
        &path,
        json!({
            "stats": stats,
            "stats_sha256": table.source_digest,
            "bin_width": bin_width,
            "total_rows": estimate.total_rows,
            "pearson_gap": gap,
            "pearson_gap_within_2": gap2,
            "fit": fit_json,
        }),
    )?;
    println!("envelope -> {}", path.display());
    Ok(())
}

fn cmd_boxdim(
    ctx: &RunContext,
    stats: &Path,
    levels: usize,
    fit_range: Option<(usize, usize)>,
    out: Option<&Path>,
) -> Result<()> {
    let table = read_stats_file(stats).with_context(|| format!("reading {}", stats.display()))?;
    let points = PointSet2D::new(table.skew_kurt_points())?;
    let result = box_dimension(&points, levels, fit_range)?;
    let path = ctx.output(out, &format!("boxdim_{}.csv", stem(stats)))?;
    result.counts.write_csv(ctx.create(&path)?)?;
    ctx.sidecar(
        &path,
        json!({ "stats": stats, "stats_sha256": table.source_digest, "levels": levels, "fit": result.fit,
                "points": result.counts.points, "distinct_points": result.counts.distinct_points }),
    )?;
    println!(
        "D = {:.4}, R^2 = {:.5} (levels {}..{}, {} points, {} distinct)",
        result.fit.dimension,
        result.fit.r_squared,
        result.fit.first_level,
        result.fit.last_level,
        result.counts.points,
        result.counts.distinct_points
    );
    println!("box counts -> {}", path.display());
    Ok(())
}

pub(crate) fn scale_line(ctx: &RunContext, original: &str) {
    println!("scale: N = {} (original study: {original})", sci(ctx.scale));
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;

    /// Runs the CLI in-process; `Err` carries the exit code.
    fn invoke(dir: &Path, args: &[&str]) -> std::result::Result<(), u8> {
        let mut argv = vec!["skewkurt".to_string(), "--out-dir".into(), dir.display().to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        let cli = Cli::try_parse_from(&argv).map_err(|_| 2u8)?;
        run(cli, argv).map_err(|e| exit_code(&e))
    }

    fn sidecar(path: &Path) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(path.with_extension("json")).unwrap()).unwrap()
    }

    #[test]
    fn bounds_table_for_four() {
        let dir = tempfile::tempdir().unwrap();
        invoke(dir.path(), &["bounds", "--n", "4", "--s", "0"]).unwrap();
        let csv = fs::read_to_string(dir.path().join("bounds_n4.csv")).unwrap();
        assert!(csv.contains("2.333333"), "{csv}");
        assert!(csv.contains("1.154700"), "{csv}");
        assert_eq!(invoke(dir.path(), &["bounds", "--n", "1"]), Err(2));
        assert_eq!(invoke(dir.path(), &["bounds", "--n", "4", "--s", "5"]), Err(4));
    }

    #[test]
    fn synthetic_values_round_trip_through_analyze() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let common = ["--seed", "9", "--threads", "2"];
        let run_with = |extra: &[&str]| invoke(d, &[&common[..], extra].concat());
        run_with(&["synth", "--dist", "lognormal", "--n", "10", "--blocks", "500"]).unwrap();
        run_with(&["synth", "--dist", "lognormal", "--n", "10", "--blocks", "500", "--values"]).unwrap();
        let values = d.join("synth_lognormal_n10_values.csv");
        run_with(&["analyze", "--input", values.to_str().unwrap(), "--n", "10"]).unwrap();
        let direct = fs::read(d.join("synth_lognormal_n10.csv")).unwrap();
        let analyzed = fs::read(d.join("analyze_synth_lognormal_n10_values_n10.csv")).unwrap();
        assert_eq!(direct, analyzed);

        let meta = sidecar(&d.join("synth_lognormal_n10.csv"));
        assert_eq!(meta["config"]["seed"], 9);
        assert_eq!(meta["output"]["sha256"], crate::output::sha256_file(&d.join("synth_lognormal_n10.csv")).unwrap());
    }

    #[test]
    fn downstream_commands_on_a_stats_file() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        invoke(d, &["--scale", "200000", "analyze", "--dist", "poisson", "--n", "4"]).unwrap();
        let stats = d.join("analyze_poisson_n4.csv");
        let s = stats.to_str().unwrap();
        let ecdf_dir = d.join("ecdf");
        invoke(d, &["detect", "--stats", s, "--emit-ecdf", ecdf_dir.to_str().unwrap()]).unwrap();
        assert!(d.join("detect_analyze_poisson_n4.csv").exists());
        assert!(fs::read_dir(&ecdf_dir).unwrap().count() > 0);

        invoke(d, &["envelope", "--stats", s]).unwrap();
        let env = fs::read_to_string(d.join("envelope_analyze_poisson_n4.csv")).unwrap();
        assert!(env.starts_with("s_center,k_min,count,k_table1,k_pearson"), "{env}");

        invoke(d, &["boxdim", "--stats", s, "--levels", "8", "--fit-range", "2:6"]).unwrap();
        let meta = sidecar(&d.join("boxdim_analyze_poisson_n4.csv"));
        assert!(meta["details"].is_object());
    }

    #[test]
    fn error_categories_map_to_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        assert_eq!(invoke(d, &["bounds"]), Err(2));
        assert_eq!(invoke(d, &["--threads", "0", "bounds", "--n", "4"]), Err(2));
        assert_eq!(invoke(d, &["synth", "--dist", "cauchy", "--n", "4", "--blocks", "1"]), Err(2));
        assert_eq!(
            invoke(d, &["synth", "--dist", "poisson", "--params", "rate=-1", "--n", "4", "--blocks", "1"]),
            Err(2)
        );
        assert_eq!(invoke(d, &["detect", "--stats", "/nonexistent/stats.csv"]), Err(7));

        let bad = d.join("bad.csv");
        fs::write(&bad, "1\n2\nabc\n").unwrap();
        assert_eq!(invoke(d, &["analyze", "--input", bad.to_str().unwrap(), "--n", "2"]), Err(3));

        invoke(d, &["synth", "--dist", "gaussian", "--n", "50", "--blocks", "20"]).unwrap();
        let few = d.join("synth_gaussian_n50.csv");
        assert_eq!(invoke(d, &["detect", "--stats", few.to_str().unwrap()]), Err(5));

        assert_eq!(invoke(d, &["repro", "fig1f"]), Err(2));
    }

    #[test]
    fn table2_writes_grid_and_cells() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        invoke(d, &["--scale", "40000", "table2", "--families", "gaussian,pareto", "--ns", "4,100"]).unwrap();
        let grid = fs::read_to_string(d.join("table2_grid.csv")).unwrap();
        assert_eq!(grid.lines().count(), 3, "{grid}");
        for f in ["gaussian", "pareto"] {
            for n in [4, 100] {
                assert!(d.join(format!("table2_stats_{f}_n{n}.csv")).exists());
                assert!(d.join(format!("table2_stats_{f}_n{n}.json")).exists());
            }
        }
    }
}
