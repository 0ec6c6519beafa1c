//! Direct box-counting dimension of a planar point set.
//!
//! Grids are dyadic and anchored at the lower-left corner of the bounding
//! box: level `j` uses square boxes of side `L/2^j`, `L` the longer side of
//! the box. Box indices at every level are derived from the finest level by
//! shifting, so the grids nest exactly.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::partition::fmt_g17;
use crate::{Error, Result, Scalar};

/// Deepest supported level (indices are packed two per `u64`).
pub const MAX_LEVELS: usize = 31;

#[derive(Clone, Debug, PartialEq)]
pub struct PointSet2D<T> {
    points: Vec<(T, T)>,
    min: (T, T),
    max: (T, T),
}

impl<T: Scalar> PointSet2D<T> {
    pub fn new(points: Vec<(T, T)>) -> Result<Self> {
        let first = *points.first().ok_or(Error::EmptyTable)?;
        if let Some(pos) = points.iter().position(|p| !(p.0.is_finite() && p.1.is_finite())) {
            return Err(Error::NonFinite(pos));
        }
        let (mut min, mut max) = (first, first);
        for &(x, y) in &points {
            min = (min.0.min(x), min.1.min(y));
            max = (max.0.max(x), max.1.max(y));
        }
        Ok(Self { points, min, max })
    }

    pub fn points(&self) -> &[(T, T)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bounding_box(&self) -> ((T, T), (T, T)) {
        (self.min, self.max)
    }

    /// Longer side of the bounding box.
    pub fn side(&self) -> T {
        (self.max.0 - self.min.0).max(self.max.1 - self.min.1)
    }

    /// Number of distinct points.
    pub fn distinct(&self) -> usize {
        let mut keys: Vec<(u64, u64)> =
            self.points.iter().map(|p| (p.0.as_f64().to_bits(), p.1.as_f64().to_bits())).collect();
        keys.par_sort_unstable();
        keys.dedup();
        keys.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxCounts {
    /// Level `j = 1..=levels`.
    pub levels: Vec<usize>,
    /// Box side `ε_j = L/2^j`.
    pub scales: Vec<f64>,
    /// Occupied boxes `N(ε_j)`.
    pub counts: Vec<u64>,
    pub points: usize,
    pub distinct_points: usize,
}

impl BoxCounts {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "level,epsilon,count")?;
        for ((j, e), c) in self.levels.iter().zip(&self.scales).zip(&self.counts) {
            writeln!(out, "{j},{},{c}", fmt_g17(*e))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Occupied-box counts at levels `1..=levels`.
pub fn box_count<T: Scalar>(points: &PointSet2D<T>, levels: usize) -> Result<BoxCounts> {
    if !(1..=MAX_LEVELS).contains(&levels) {
        return Err(Error::InvalidArgument(format!("levels must be in 1..={MAX_LEVELS}, got {levels}")));
    }
    let side = points.side();
    if side <= T::zero() {
        return Err(Error::DegenerateBoundingBox);
    }
    let cells = 1u64 << levels;
    let last = (cells - 1) as f64;
    let (x0, y0) = points.min;
    let scale = cells as f64 / side.as_f64();
    let index = |v: T, origin: T| -> u64 { ((v - origin).as_f64() * scale).floor().clamp(0.0, last) as u64 };

    let mut keys: Vec<u64> = points.points.par_iter().map(|&(x, y)| (index(x, x0) << 32) | index(y, y0)).collect();
    keys.par_sort_unstable();
    keys.dedup();

    let mut counts = vec![0u64; levels];
    counts[levels - 1] = keys.len() as u64;
    for level in (1..levels).rev() {
        let mask = (1u64 << 32) - 1;
        for k in keys.iter_mut() {
            *k = (((*k >> 32) >> 1) << 32) | ((*k & mask) >> 1);
        }
        // Halving both coordinates does not preserve lexicographic order.
        keys.par_sort_unstable();
        keys.dedup();
        counts[level - 1] = keys.len() as u64;
    }

    let side = side.as_f64();
    Ok(BoxCounts {
        levels: (1..=levels).collect(),
        scales: (1..=levels).map(|j| side / (1u64 << j) as f64).collect(),
        counts,
        points: points.len(),
        distinct_points: points.distinct(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DimensionFit {
    pub dimension: f64,
    pub r_squared: f64,
    /// Inclusive level range used.
    pub first_level: usize,
    pub last_level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxCountResult {
    pub counts: BoxCounts,
    pub fit: DimensionFit,
}

/// Default fit range: drop the two coarsest levels and every level whose
/// count is within 5% of the number of distinct points.
pub fn default_fit_range(counts: &BoxCounts) -> (usize, usize) {
    let saturation = 0.95 * counts.distinct_points as f64;
    let last = counts
        .levels
        .iter()
        .zip(&counts.counts)
        .filter(|(_, &c)| (c as f64) < saturation)
        .map(|(&j, _)| j)
        .max()
        .unwrap_or(0);
    (3, last)
}

/// Least-squares slope of `ln N(ε)` against `ln(1/ε)` over levels
/// `fit_range` (inclusive), or the default range.
pub fn dimension_fit(counts: &BoxCounts, fit_range: Option<(usize, usize)>) -> Result<DimensionFit> {
    let (first, last) = fit_range.unwrap_or_else(|| default_fit_range(counts));
    let pts: Vec<(f64, f64)> = counts
        .levels
        .iter()
        .zip(counts.scales.iter().zip(&counts.counts))
        .filter(|(&j, (_, &c))| j >= first && j <= last && c >= 2)
        .map(|(_, (&e, &c))| ((1.0 / e).ln(), (c as f64).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientScales { available: pts.len() });
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(DimensionFit {
        dimension: slope,
        r_squared,
        first_level: first.max(*counts.levels.first().unwrap_or(&first)),
        last_level: last.min(*counts.levels.last().unwrap_or(&last)),
    })
}

/// Box counts plus dimension fit in one call.
pub fn box_dimension<T: Scalar>(
    points: &PointSet2D<T>,
    levels: usize,
    fit_range: Option<(usize, usize)>,
) -> Result<BoxCountResult> {
    let counts = box_count(points, levels)?;
    let fit = dimension_fit(&counts, fit_range)?;
    Ok(BoxCountResult { counts, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic_counts(base: u64, levels: usize) -> BoxCounts {
        BoxCounts {
            levels: (1..=levels).collect(),
            scales: (1..=levels).map(|j| 0.5f64.powi(j as i32)).collect(),
            counts: (1..=levels).map(|j| base.pow(j as u32)).collect(),
            points: usize::MAX,
            distinct_points: usize::MAX,
        }
    }

    #[test]
    fn unit_square_corners() {
        let p = PointSet2D::new(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]).unwrap();
        let c = box_count(&p, 2).unwrap();
        assert_eq!(c.counts, vec![4, 4]);
        assert_eq!(c.scales, vec![0.5, 0.25]);
    }

    #[test]
    fn exact_power_laws() {
        let f = dimension_fit(&synthetic_counts(4, 10), Some((1, 10))).unwrap();
        assert!((f.dimension - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let f = dimension_fit(&synthetic_counts(2, 10), Some((1, 10))).unwrap();
        assert!((f.dimension - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let p = PointSet2D::new(vec![(1.0, 1.0); 5]).unwrap();
        assert!(matches!(box_count(&p, 4), Err(Error::DegenerateBoundingBox)));
        assert!(PointSet2D::<f64>::new(vec![]).is_err());
        assert!(PointSet2D::new(vec![(f64::NAN, 0.0)]).is_err());
        assert!(matches!(
            dimension_fit(&synthetic_counts(2, 4), Some((3, 4))),
            Err(Error::InsufficientScales { available: 2 })
        ));
    }

    #[test]
    fn segment_and_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg: Vec<(f64, f64)> = (0..100_000)
            .map(|_| {
                let t: f64 = rng.random();
                (t, 0.3 * t + 2.0)
            })
            .collect();
        let r = box_dimension(&PointSet2D::new(seg).unwrap(), 12, None).unwrap();
        assert!((r.fit.dimension - 1.0).abs() < 0.05, "{:?}", r.fit);

        let sq: Vec<(f64, f64)> = (0..1_000_000).map(|_| (rng.random(), rng.random())).collect();
        // A filled set needs 4^levels well below the point count to avoid undersampling.
        let r = box_dimension(&PointSet2D::new(sq).unwrap(), 9, None).unwrap();
        assert!((r.fit.dimension - 2.0).abs() < 0.05, "{:?}", r.fit);
        assert!(r.counts.counts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_precision_points() {
        let pts: Vec<(f32, f32)> = (0..4096).map(|i| (i as f32 / 4096.0, 0.0)).collect();
        let c = box_count(&PointSet2D::new(pts).unwrap(), 8).unwrap();
        assert_eq!(c.counts, (1..=8).map(|j| 1u64 << j).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn affine_maps_preserve_counts(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..300),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let p = PointSet2D::new(pts.clone()).unwrap();
            prop_assume!(p.side() > 1e-6);
            let base = box_count(&p, 8).unwrap();
            prop_assert!(base.counts.windows(2).all(|w| w[0] <= w[1]));
            // Dyadic scale factors keep the arithmetic exact.
            let a = 2f64.powi(a.log2().round() as i32);
            let mapped: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (a * x + b.round(), a * y - b.round())).collect();
            let moved = box_count(&PointSet2D::new(mapped).unwrap(), 8).unwrap();
            prop_assert_eq!(base.counts, moved.counts);
        }
    }
}
