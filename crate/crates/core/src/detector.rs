//! Conditional-ECDF criterion for the emergence of the 4/3 power law.
//!
//! For a quantile level `q`, rows whose skewness exceeds the `q`-quantile
//! `s_q` are kept, and `p(q)` is the fraction of them with
//! `R ∈ [1−ε, 1+ε]`. The power law is declared to emerge when `p(q)`
//! reaches `p_star` already at a moderate level `q ≤ q_max_for_emergence`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::partition::{fmt_g17, BlockStatsTable};
use crate::{Error, Result};

/// Conditioning sets smaller than this are not evaluated.
pub const MIN_TAIL_ROWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub q_grid: Vec<f64>,
    pub epsilon: f64,
    pub p_star: f64,
    pub q_max_for_emergence: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            q_grid: vec![0.9, 0.95, 0.99, 0.999, 0.9995, 0.9999, 0.99995],
            epsilon: 0.05,
            p_star: 0.9,
            q_max_for_emergence: 0.999,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_grid.is_empty() {
            return Err(Error::InvalidArgument("empty quantile grid".into()));
        }
        if let Some(q) = self.q_grid.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::InvalidArgument(format!("quantile level {q} outside (0, 1)")));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        if !(self.p_star > 0.0 && self.p_star <= 1.0) {
            return Err(Error::InvalidArgument(format!("p_star {} outside (0, 1]", self.p_star)));
        }
        Ok(())
    }

    fn sorted_grid(&self) -> Vec<f64> {
        let mut g = self.q_grid.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}

/// Nearest-rank quantile: the `⌈q·m⌉`-th smallest value.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyTable);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside (0, 1)")));
    }
    let mut v = values.to_vec();
    let k = nearest_rank(v.len(), q);
    let (_, x, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*x)
}

/// Zero-based index of the nearest-rank order statistic.
fn nearest_rank(m: usize, q: f64) -> usize {
    // The slack absorbs rounding in q·m (e.g. 0.99995·200000 = 199990.00000000003).
    let rank = (q * m as f64 - 1e-12 * m as f64).ceil() as usize;
    rank.clamp(1, m) - 1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Unconditioned,
    SkewAboveQuantile { q: f64, s_q: f64 },
}

/// Empirical CDF of `R`, one step per row (ties kept).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcdfCurve {
    pub condition: Condition,
    /// Sorted ascending.
    pub support: Vec<f64>,
    /// `i/m` for `i = 1..=m`.
    pub fractions: Vec<f64>,
    pub conditioning_rows: usize,
}

impl EcdfCurve {
    fn from_values(mut r: Vec<f64>, condition: Condition) -> Self {
        r.sort_by(f64::total_cmp);
        let m = r.len();
        let fractions = (1..=m).map(|i| i as f64 / m as f64).collect();
        Self { condition, support: r, fractions, conditioning_rows: m }
    }

    /// Fraction of mass in the closed interval `[lo, hi]`.
    pub fn mass_within(&self, lo: f64, hi: f64) -> f64 {
        let below = self.support.partition_point(|&r| r < lo);
        let upto = self.support.partition_point(|&r| r <= hi);
        (upto - below) as f64 / self.support.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "r,cum_frac")?;
        for (r, f) in self.support.iter().zip(&self.fractions) {
            writeln!(out, "{},{}", fmt_g17(*r), fmt_g17(*f))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// ECDF of `R` over all rows, or over rows with `S > s_q`.
pub fn conditional_ecdf(table: &BlockStatsTable, q: Option<f64>) -> Result<EcdfCurve> {
    ecdf_from_pairs(&table.skew_ratio_pairs(), q)
}

/// As [`conditional_ecdf`] on `(S, R)` pairs.
pub fn ecdf_from_pairs(pairs: &[(f64, f64)], q: Option<f64>) -> Result<EcdfCurve> {
    if pairs.is_empty() {
        return Err(Error::EmptyTable);
    }
    let Some(q) = q else {
        return Ok(EcdfCurve::from_values(pairs.iter().map(|p| p.1).collect(), Condition::Unconditioned));
    };
    let skew: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let s_q = quantile(&skew, q)?;
    let tail: Vec<f64> = pairs.iter().filter(|p| p.0 > s_q).map(|p| p.1).collect();
    if tail.len() < MIN_TAIL_ROWS {
        return Err(Error::InsufficientTailRows { required: MIN_TAIL_ROWS, available: tail.len() });
    }
    Ok(EcdfCurve::from_values(tail, Condition::SkewAboveQuantile { q, s_q }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub q: f64,
    pub s_q: f64,
    pub conditioning_rows: usize,
    /// `None` when the level had fewer than [`MIN_TAIL_ROWS`] rows.
    pub p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergenceReport {
    pub label: String,
    pub n: usize,
    pub rows: usize,
    pub levels: Vec<LevelResult>,
    /// Smallest evaluated level with `p(q) ≥ p_star`.
    pub witness_q: Option<f64>,
    pub emerged: bool,
    pub config: DetectorConfig,
}

impl EmergenceReport {
    pub fn skipped_levels(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels.iter().filter(|l| l.p.is_none()).map(|l| l.q)
    }

    pub fn decision(&self) -> char {
        if self.emerged {
            'Y'
        } else {
            'N'
        }
    }
}

pub fn emergence(table: &BlockStatsTable, config: &DetectorConfig, label: &str) -> Result<EmergenceReport> {
    emergence_from_pairs(&table.skew_ratio_pairs(), table.n, config, label)
}

/// Emergence decision from `(S, R)` pairs.
pub fn emergence_from_pairs(
    pairs: &[(f64, f64)],
    n: usize,
    config: &DetectorConfig,
    label: &str,
) -> Result<EmergenceReport> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let m = sorted.len();

    // in_window_suffix[i] = number of rows j ≥ i with R in the window.
    let (lo, hi) = (1.0 - config.epsilon, 1.0 + config.epsilon);
    let mut in_window_suffix = vec![0usize; m + 1];
    for i in (0..m).rev() {
        let r = sorted[i].1;
        in_window_suffix[i] = in_window_suffix[i + 1] + usize::from(lo <= r && r <= hi);
    }

    let levels: Vec<LevelResult> = config
        .sorted_grid()
        .into_iter()
        .map(|q| {
            let s_q = sorted[nearest_rank(m, q)].0;
            let first = sorted.partition_point(|p| p.0 <= s_q);
            let conditioning_rows = m - first;
            let p =
                (conditioning_rows >= MIN_TAIL_ROWS).then(|| in_window_suffix[first] as f64 / conditioning_rows as f64);
            LevelResult { q, s_q, conditioning_rows, p }
        })
        .collect();

    if levels.iter().all(|l| l.p.is_none()) {
        return Err(Error::TableTooSmall { min_rows: MIN_TAIL_ROWS });
    }
    let witness_q = levels.iter().find(|l| l.p.is_some_and(|p| p >= config.p_star)).map(|l| l.q);
    let emerged = witness_q.is_some_and(|q| q <= config.q_max_for_emergence);
    Ok(EmergenceReport { label: label.to_string(), n, rows: m, levels, witness_q, emerged, config: config.clone() })
}
