//! Reproduction recipes for the figures and tables of the original study.
//!
//! Every recipe runs at `--scale` (default 10⁶ values per cell) and prints
//! that scale next to the one used originally (10⁸).

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde_json::json;
use skewkurt::bounds::{table1_envelope, BoundSet};
use skewkurt::boxdim::{box_dimension, PointSet2D};
use skewkurt::detector::{emergence, DetectorConfig};
use skewkurt::envelope::{fit_envelope, Breakpoints};
use skewkurt::moments::power_law_rhs;
use skewkurt::partition::{fmt_g17, map_moments, read_stats_file, Filter, SyntheticSource};
use skewkurt::samplers::DistributionSpec;
use skewkurt::Error;

use crate::app::{
    analyze_file, cmd_table2, emit_ecdfs, print_fit, print_report, scale_line, write_fit_csv, write_levels_csv,
    IngestArgs, Table2Args,
};
use crate::experiments::{
    cell_seed, deltoid_points, distinct_with_counts, envelope_sources, mixed_envelope, MixedEnvelope, FIG4_CASES,
    TABLE2_NS,
};
use crate::output::{sci, RunContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Recipe {
    /// Observed series: (S, K) scatter, 4/3 power-law curve, R-window points.
    Fig1f,
    /// Empirical lower envelopes for n = 4..9 with the closed-form bounds.
    Fig2,
    /// Poisson(20) n = 4 deltoid and its box-counting dimension.
    Fig3,
    /// Conditional ECDFs of R, Gaussian n = 100.
    Fig4a,
    /// Conditional ECDFs of R, Exponential n = 1000.
    Fig4b,
    /// Conditional ECDFs of R, Lognormal n = 100.
    Fig4c,
    /// Conditional ECDFs of R, Pareto n = 1000.
    Fig4d,
    /// All four conditional-ECDF panels.
    Fig4,
    /// Piecewise-parabola fits of the lower envelope against the tabulated ones.
    Table1,
    /// Emergence matrix, ten distributions by n = 4, 100, 1000.
    Table2,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(value_enum)]
    pub recipe: Recipe,
    /// Observed series for fig1f.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Block size for fig1f (default 50).
    #[arg(long)]
    pub n: Option<usize>,
    /// Value filter for fig1f (default `positive`: wet days only).
    #[arg(long, value_parser = parse_filter_arg)]
    pub filter: Option<Filter>,
    #[arg(long)]
    pub column: Option<usize>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, default_value = "-9999", allow_hyphen_values = true)]
    pub missing: String,
    /// Box-counting levels for fig3.
    #[arg(long, default_value_t = 12)]
    pub levels: usize,
    /// Box-counting fit range `j1:j2` for fig3.
    #[arg(long)]
    pub fit_range: Option<String>,
    /// Envelope bin width for fig2 and table1.
    #[arg(long, default_value_t = skewkurt::envelope::DEFAULT_BIN_WIDTH)]
    pub bin_width: f64,
    /// table2: skip the per-cell statistics CSVs.
    #[arg(long)]
    pub no_stats: bool,
}

fn parse_filter_arg(s: &str) -> Result<Filter, String> {
    match s {
        "none" => Ok(Filter::None),
        "positive" => Ok(Filter::PositiveOnly),
        _ => s
            .strip_prefix("threshold:")
            .and_then(|t| t.parse().ok())
            .map(|t| Filter::Threshold { t })
            .ok_or_else(|| format!("filter must be none, positive or threshold:<t>, got {s}")),
    }
}

pub fn run(ctx: &RunContext, args: &ReproArgs) -> Result<()> {
    match args.recipe {
        Recipe::Fig1f => fig1f(ctx, args),
        Recipe::Fig2 => fig2(ctx, args),
        Recipe::Fig3 => fig3(ctx, args),
        Recipe::Fig4a => fig4(ctx, &["a"]),
        Recipe::Fig4b => fig4(ctx, &["b"]),
        Recipe::Fig4c => fig4(ctx, &["c"]),
        Recipe::Fig4d => fig4(ctx, &["d"]),
        Recipe::Fig4 => fig4(ctx, &["a", "b", "c", "d"]),
        Recipe::Table1 => table1(ctx, args),
        Recipe::Table2 => {
            scale_line(ctx, "N = 1e8 per cell");
            let t2 = Table2Args { families: None, ns: TABLE2_NS.to_vec(), no_stats: args.no_stats };
            cmd_table2(ctx, &t2, "repro_table2").map(|_| ())
        }
    }
}

fn fig1f(ctx: &RunContext, args: &ReproArgs) -> Result<()> {
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("fig1f needs --input <daily precipitation series (CSV)>".into()))?;
    let n = args.n.unwrap_or(50);
    let ingest = IngestArgs {
        filter: args.filter.unwrap_or(Filter::PositiveOnly),
        column: args.column,
        delimiter: args.delimiter,
        missing: args.missing.clone(),
    };
    println!("scale: observed series, --scale not used (original study: Linkoeping daily precipitation > 0, n = 50)");
    let stats_path = ctx.path("fig1f_stats.csv")?;
    let analyzed = analyze_file(ctx, input, n, &ingest, &stats_path)?;
    println!(
        "{} blocks of n = {n}: {} rows, {} degenerate; bound violations: {}",
        analyzed.counts.blocks,
        analyzed.counts.rows,
        analyzed.counts.degenerate,
        analyzed.tally.0.iter().map(|(_, c)| c).sum::<u64>()
    );
    let table = read_stats_file(&stats_path)?;

    // Rows with R in the detector window (the highlighted points).
    let config = DetectorConfig::default();
    let (lo, hi) = (1.0 - config.epsilon, 1.0 + config.epsilon);
    let window_path = ctx.path("fig1f_window.csv")?;
    let mut w = ctx.create(&window_path)?;
    writeln!(w, "block_index,S,K,R")?;
    let mut in_window = 0u64;
    for row in &table.rows {
        let s = &row.summary;
        if lo <= s.r && s.r <= hi {
            in_window += 1;
            writeln!(w, "{},{},{},{}", row.block_index, fmt_g17(s.s), fmt_g17(s.k), fmt_g17(s.r))?;
        }
    }
    w.flush()?;
    drop(w);
    ctx.sidecar(&window_path, json!({ "stats": stats_path, "epsilon": config.epsilon, "rows": in_window }))?;

    // Power-law curve and bounds along S.
    let curve_path = ctx.path("fig1f_curve.csv")?;
    write_curve(ctx, &curve_path, n)?;
    ctx.sidecar(&curve_path, json!({ "n": n }))?;

    println!("{in_window} of {} rows have R in [{lo}, {hi}]", table.len());
    match emergence(&table, &config, &format!("{} n={n}", input.display())) {
        Ok(report) => {
            print_report(&report);
            let path = ctx.path("fig1f_detect.csv")?;
            write_levels_csv(&path, &report)?;
            ctx.sidecar(&path, json!({ "report": report }))?;
        }
        Err(Error::TableTooSmall { .. }) => println!("detector: no quantile level has enough rows"),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// `s, power_law, pearson_lower, sharma_upper` on `0 ≤ S ≤ (n−2)/√(n−1)`.
fn write_curve(ctx: &RunContext, path: &std::path::Path, n: usize) -> Result<()> {
    let b = BoundSet::<f64>::new(n)?;
    let mut w = ctx.create(path)?;
    writeln!(w, "s,power_law,pearson_lower,sharma_upper")?;
    let steps = 400;
    for i in 0..=steps {
        let s = b.skew_abs_max * i as f64 / steps as f64;
        writeln!(
            w,
            "{},{},{},{}",
            fmt_g17(s),
            fmt_g17(power_law_rhs(n, s)),
            fmt_g17(b.pearson_lower(s)),
            fmt_g17(b.sharma_upper(s)?)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn envelope_for(ctx: &RunContext, n: usize, bin_width: f64) -> Result<MixedEnvelope> {
    let blocks = ctx.scale / n as u64;
    if blocks == 0 {
        return Err(Error::SeriesTooShort { len: ctx.scale as usize, n }.into());
    }
    let env = mixed_envelope(n, blocks, ctx.seed, ctx.threads, bin_width, skewkurt::bounds::ENVELOPE_TOLERANCE)?;
    let worst = env
        .worst_margin
        .map_or(String::new(), |m| format!(", lowest K - table1 = {:.5} at S = {:.4} ({})", m.margin, m.s, m.family));
    println!(
        "n = {n}: {} blocks ({} rows), {} rows below table1 - {}{worst}",
        env.blocks,
        env.counts.rows,
        env.below_table1,
        skewkurt::bounds::ENVELOPE_TOLERANCE
    );
    Ok(env)
}

fn sources_json() -> serde_json::Value {
    json!(envelope_sources().iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

fn fig2(ctx: &RunContext, args: &ReproArgs) -> Result<()> {
    scale_line(ctx, "N = 1e8, about 1e7 blocks per n");
    for n in 4..=9 {
        let env = envelope_for(ctx, n, args.bin_width)?;
        let path = ctx.path(&format!("fig2_envelope_n{n}.csv"))?;
        env.estimate.write_csv(ctx.create(&path)?)?;
        ctx.sidecar(
            &path,
            json!({ "n": n, "sources": sources_json(), "blocks": env.blocks, "counts": env.counts,
                    "below_table1": env.below_table1, "worst_margin": env.worst_margin, "bin_width": args.bin_width }),
        )?;
    }
    let path = ctx.path("fig2_bounds.csv")?;
    let mut w = ctx.create(&path)?;
    writeln!(w, "n,s,table1_lower,pearson_lower,sharma_upper,kurt_max_dalen")?;
    for n in 4..=9 {
        let b = BoundSet::<f64>::new(n)?;
        let t = table1_envelope::<f64>(n)?;
        let steps = 400;
        for i in 0..=steps {
            let s = -b.skew_abs_max + 2.0 * b.skew_abs_max * i as f64 / steps as f64;
            writeln!(
                w,
                "{n},{},{},{},{},{}",
                fmt_g17(s),
                fmt_g17(t.eval(s)?),
                fmt_g17(b.pearson_lower(s)),
                fmt_g17(b.sharma_upper(s)?),
                fmt_g17(b.kurt_max_dalen)
            )?;
        }
    }
    w.flush()?;
    drop(w);
    ctx.sidecar(&path, json!({ "ns": [4, 5, 6, 7, 8, 9] }))?;
    println!("envelopes -> {}", ctx.out_dir.display());
    Ok(())
}

fn table1(ctx: &RunContext, args: &ReproArgs) -> Result<()> {
    scale_line(ctx, "N = 1e8, about 1e7 blocks per n");
    let path = ctx.path("table1_fit.csv")?;
    let mut fits = Vec::new();
    let mut envelopes = Vec::new();
    for n in 4..=9 {
        let env = envelope_for(ctx, n, args.bin_width)?;
        let fit = fit_envelope(&env.estimate, &Breakpoints::Table1)?;
        print_fit(&fit);
        envelopes.push(json!({ "n": n, "blocks": env.blocks, "counts": env.counts,
                               "below_table1": env.below_table1, "worst_margin": env.worst_margin }));
        fits.push(fit);
    }
    // One CSV for all n: write each fit, then concatenate without repeated headers.
    let mut w = ctx.create(&path)?;
    for (i, fit) in fits.iter().enumerate() {
        let tmp = ctx.path(&format!(".table1_fit_{}.tmp", fit.n))?;
        write_fit_csv(&tmp, fit)?;
        let text = std::fs::read_to_string(&tmp)?;
        std::fs::remove_file(&tmp)?;
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
        w.write_all(body.as_bytes())?;
    }
    w.flush()?;
    drop(w);
    ctx.sidecar(
        &path,
        json!({ "sources": sources_json(), "bin_width": args.bin_width, "envelopes": envelopes, "fits": fits }),
    )?;
    println!("fits -> {}", path.display());
    Ok(())
}

fn fig3(ctx: &RunContext, args: &ReproArgs) -> Result<()> {
    scale_line(ctx, "N = 1e8, 2.5e7 blocks of n = 4");
    let blocks = ctx.scale / 4;
    if blocks == 0 {
        return Err(Error::SeriesTooShort { len: ctx.scale as usize, n: 4 }.into());
    }
    let fit_range = args
        .fit_range
        .as_deref()
        .map(|s| {
            let (a, b) = s.split_once(':').ok_or_else(|| Error::InvalidArgument(format!("expected j1:j2, got {s}")))?;
            let parse =
                |x: &str| x.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad level {x}")));
            Ok::<_, Error>((parse(a)?, parse(b)?))
        })
        .transpose()?;
    let (points, counts) = deltoid_points(blocks, ctx.seed, ctx.threads)?;
    let distinct = distinct_with_counts(&points);

    let pts_path = ctx.path("fig3_deltoid.csv")?;
    let mut w = ctx.create(&pts_path)?;
    writeln!(w, "S,K,count")?;
    for (s, k, c) in &distinct {
        writeln!(w, "{},{},{c}", fmt_g17(*s), fmt_g17(*k))?;
    }
    w.flush()?;
    drop(w);
    ctx.sidecar(
        &pts_path,
        json!({ "distribution": DistributionSpec::Poisson { rate: 20.0 }, "n": 4, "blocks": blocks, "counts": counts,
                "distinct_points": distinct.len() }),
    )?;

    let result = box_dimension(&PointSet2D::new(points)?, args.levels, fit_range)?;
    let box_path = ctx.path("fig3_boxcount.csv")?;
    result.counts.write_csv(ctx.create(&box_path)?)?;
    ctx.sidecar(&box_path, json!({ "levels": args.levels, "fit": result.fit, "deltoid": pts_path }))?;

    println!("{} blocks, {} rows, {} distinct (S, K) points", sci(blocks), counts.rows, distinct.len());
    let slopes: Vec<String> =
        result.counts.counts.windows(2).map(|w| format!("{:.2}", (w[1] as f64 / w[0] as f64).log2())).collect();
    println!("local slopes by level: {}", slopes.join(" "));
    println!(
        "D = {:.4}, R^2 = {:.5} over levels {}..{} (original study: 1.798 +/- 0.006, R^2 = 0.9997)",
        result.fit.dimension, result.fit.r_squared, result.fit.first_level, result.fit.last_level
    );
    Ok(())
}

fn fig4(ctx: &RunContext, panels: &[&str]) -> Result<()> {
    scale_line(ctx, "N = 1e8, 1e8/n blocks per panel");
    let config = DetectorConfig::default();
    for (label, family, n) in FIG4_CASES.iter().filter(|c| panels.contains(&c.0)) {
        let spec = DistributionSpec::default_for(family)?;
        let seed = cell_seed(ctx.seed, "fig4", family, *n);
        let source = SyntheticSource::with_total(&spec, *n, ctx.scale, seed)?;
        let table = map_moments(&source, ctx.threads)?;
        println!("fig4{label}: {spec}, n = {n}, {} blocks", source_blocks(ctx.scale, *n));
        let prefix = format!("fig4{label}_");
        let files = emit_ecdfs(&table, &config, &ctx.out_dir, &prefix)?;
        for f in &files {
            ctx.sidecar(f, json!({ "distribution": spec, "n": n, "cell_seed": seed }))?;
        }
        match emergence(&table, &config, &format!("{spec} n={n}")) {
            Ok(report) => {
                print_report(&report);
                let path = ctx.path(&format!("fig4{label}_levels.csv"))?;
                write_levels_csv(&path, &report)?;
                ctx.sidecar(&path, json!({ "distribution": spec, "n": n, "cell_seed": seed, "report": report }))?;
            }
            Err(Error::TableTooSmall { .. }) => println!("  no quantile level has enough conditioning rows"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn source_blocks(scale: u64, n: usize) -> String {
    sci(scale / n as u64)
}
