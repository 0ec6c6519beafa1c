//! Central moments, sample skewness/kurtosis and the `R` ratio of one block.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// One block of finite real values.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBlock<T> {
    values: Vec<T>,
}

impl<T: Scalar> SampleBlock<T> {
    /// Validates that `values` is non-empty and entirely finite.
    pub fn new(values: Vec<T>) -> Result<Self> {
        validate(&values)?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn central_moments(&self) -> CentralMoments<T> {
        raw_sums(&self.values).moments()
    }

    pub fn summarize(&self) -> Result<MomentSummary<T>> {
        summarize(&self.values)
    }
}

fn validate<T: Scalar>(values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    Ok(())
}

/// Mean and the population central moments `m_r = (1/n) Σ (xᵢ − x̄)^r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentralMoments<T> {
    pub mean: T,
    pub m2: T,
    pub m3: T,
    pub m4: T,
}

/// Sums of powered deviations from the mean; everything else derives from these.
#[derive(Clone, Copy, Debug)]
struct DeviationSums<T> {
    n: usize,
    mean: T,
    s2: T,
    s3: T,
    s4: T,
    constant: bool,
}

impl<T: Scalar> DeviationSums<T> {
    fn moments(&self) -> CentralMoments<T> {
        let n = T::of_usize(self.n);
        CentralMoments { mean: self.mean, m2: self.s2 / n, m3: self.s3 / n, m4: self.s4 / n }
    }
}

/// Two passes: the mean (with one refinement step), then powered deviations.
fn raw_sums<T: Scalar>(values: &[T]) -> DeviationSums<T> {
    let zero = T::zero();
    let first = values[0];
    let constant = values.iter().all(|&v| v == first);
    if constant {
        return DeviationSums { n: values.len(), mean: first, s2: zero, s3: zero, s4: zero, constant };
    }

    let n = T::of_usize(values.len());
    let mut mean = values.iter().fold(zero, |acc, &v| acc + v) / n;
    // Residual of the rounded mean, folded back in.
    mean = mean + values.iter().fold(zero, |acc, &v| acc + (v - mean)) / n;

    let (mut s2, mut s3, mut s4) = (zero, zero, zero);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        s2 = s2 + d2;
        s3 = s3 + d2 * d;
        s4 = s4 + d2 * d2;
    }
    DeviationSums { n: values.len(), mean, s2: s2.max(zero), s3, s4: s4.max(zero), constant }
}

/// Central moments of a slice.
///
/// Fails on an empty slice or on any non-finite value.
pub fn central_moments<T: Scalar>(values: &[T]) -> Result<CentralMoments<T>> {
    validate(values)?;
    Ok(raw_sums(values).moments())
}

/// Statistics of one block: the point `(S, K)` in the skewness–kurtosis
/// plane together with the ratio `R`.
///
/// When `degenerate` is set (all values equal, `m2 = 0`) the fields `s`, `k`
/// and `r` are NaN and the block must be excluded from downstream
/// statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary<T> {
    pub n: usize,
    pub mean: T,
    pub m2: T,
    pub m3: T,
    pub m4: T,
    pub s: T,
    pub k: T,
    pub r: T,
    pub degenerate: bool,
}

impl<T: Scalar> MomentSummary<T> {
    /// Right-hand side of `K·R = n^(1/3)·|S|^(4/3)` for this block.
    pub fn power_law_rhs(&self) -> T {
        power_law_rhs(self.n, self.s)
    }

    /// Relative error of the structural identity `K·R = n^(1/3)|S|^(4/3)`.
    pub fn identity_error(&self) -> T {
        let lhs = self.k * self.r;
        let rhs = self.power_law_rhs();
        let scale = lhs.abs().max(rhs.abs());
        if scale == T::zero() {
            T::zero()
        } else {
            (lhs - rhs).abs() / scale
        }
    }
}

/// `t^(4/3)` taken as the fourth power of the real cube root, so it is
/// non-negative for negative `t`.
#[inline]
pub fn four_thirds_power<T: Scalar>(t: T) -> T {
    let c = t.cbrt();
    let c2 = c * c;
    c2 * c2
}

/// Computes `(mean, m2, m3, m4, S, K, R)` for a block of size `n ≥ 2`.
pub fn summarize<T: Scalar>(values: &[T]) -> Result<MomentSummary<T>> {
    validate(values)?;
    if values.len() < 2 {
        return Err(Error::SampleTooSmall { n: values.len(), min: 2 });
    }
    let sums = raw_sums(values);
    let CentralMoments { mean, m2, m3, m4 } = sums.moments();
    let n = values.len();

    if sums.constant || m2 == T::zero() {
        let nan = T::nan();
        return Ok(MomentSummary {
            n,
            mean,
            m2: T::zero(),
            m3: T::zero(),
            m4: T::zero(),
            s: nan,
            k: nan,
            r: nan,
            degenerate: true,
        });
    }

    let s = m3 / (m2 * m2.sqrt());
    let k = m4 / (m2 * m2);
    let r = four_thirds_power(sums.s3) / sums.s4;
    Ok(MomentSummary { n, mean, m2, m3, m4, s, k, r, degenerate: false })
}

/// `n^(1/3)·|S|^(4/3)`: the kurtosis predicted by the 4/3 power law when `R = 1`.
pub fn power_law_rhs<T: Scalar>(n: usize, s: T) -> T {
    T::of_usize(n).cbrt() * four_thirds_power(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation of the definitions, one sum per moment.
    fn naive(values: &[f64]) -> (f64, f64, f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let m = |r: i32| values.iter().map(|x| (x - mean).powi(r)).sum::<f64>() / n;
        (mean, m(2), m(3), m(4))
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn moments_of_single_spike() {
        let cm = central_moments(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(cm.mean, 0.25);
        assert_eq!(cm.m2, 0.1875);
        assert_eq!(cm.m3, 0.09375);
        assert_eq!(cm.m4, 0.08203125);
        let (mean, m2, m3, m4) = naive(&[0.0, 0.0, 0.0, 1.0]);
        assert_eq!((mean, m2, m3, m4), (cm.mean, cm.m2, cm.m3, cm.m4));
    }

    #[test]
    fn constant_block_has_zero_moments() {
        for c in [0.1, -3.7, 1e12, 7.0] {
            let cm = central_moments(&[c; 9]).unwrap();
            assert_eq!((cm.m2, cm.m3, cm.m4), (0.0, 0.0, 0.0));
            assert_eq!(cm.mean, c);
            assert!(summarize(&[c; 9]).unwrap().degenerate);
        }
    }

    #[test]
    fn symmetric_two_point_block() {
        let cm = central_moments(&[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!((cm.mean, cm.m2, cm.m3, cm.m4), (0.0, 1.0, 0.0, 1.0));
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(central_moments::<f64>(&[]), Err(Error::EmptySample)));
        assert!(matches!(central_moments(&[1.0, f64::NAN]), Err(Error::NonFinite(1))));
        assert!(matches!(summarize(&[1.0, f64::INFINITY]), Err(Error::NonFinite(1))));
        assert!(matches!(summarize(&[1.0]), Err(Error::SampleTooSmall { .. })));
        assert!(SampleBlock::new(vec![0.0, f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn summary_of_single_spike() {
        let s = summarize(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(!s.degenerate);
        assert!((s.s - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((s.k - 7.0 / 3.0).abs() < 1e-12);
        // Frozen from a numpy evaluation of the definition.
        assert!((s.r - 0.824_142_611_604_233_2).abs() < 1e-12);
    }

    #[test]
    fn symmetric_blocks_have_zero_skew_and_ratio() {
        let s = summarize(&[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!((s.s, s.k, s.r), (0.0, 1.0, 0.0));
        let s = summarize(&[0.0, 1.0]).unwrap();
        assert_eq!((s.s, s.k, s.r), (0.0, 1.0, 0.0));
    }

    #[test]
    fn rounded_constant_block_is_degenerate() {
        // The rounded mean of these differs from 0.1.
        let s = summarize(&[0.1f64, 0.1, 0.1]).unwrap();
        assert!(s.degenerate);
        assert!(s.s.is_nan() && s.k.is_nan() && s.r.is_nan());
    }

    #[test]
    fn power_law_rhs_values() {
        assert_eq!(power_law_rhs(4, 0.0), 0.0);
        assert!((power_law_rhs(1, 1.0f64) - 1.0).abs() < 1e-15);
        let rhs = power_law_rhs(4, 2.0 / 3f64.sqrt());
        assert!((rhs - 1.922_999_427_076_544_7).abs() < 1e-12);
        let spike = summarize(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(((rhs / spike.k) - spike.r).abs() < 1e-12);
        assert_eq!(power_law_rhs(8, -1.0), power_law_rhs(8, 1.0));
    }

    #[test]
    fn single_precision_agrees() {
        let s = summarize(&[0.0f32, 0.0, 0.0, 1.0]).unwrap();
        assert!((s.k - 7.0 / 3.0).abs() < 1e-5);
        assert!(s.identity_error() < 1e-5);
    }

    fn block(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 2..=max_len)
    }

    proptest! {
        #[test]
        fn two_pass_matches_naive(values in block(16)) {
            let cm = central_moments(&values).unwrap();
            let (mean, m2, m3, m4) = naive(&values);
            let spread = values.iter().cloned().fold(f64::MIN, f64::max)
                - values.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-6);
            prop_assert!(close(cm.mean, mean, 1e-12) || (cm.mean - mean).abs() < 1e-12 * spread);
            prop_assert!(close(cm.m2, m2, 1e-12));
            prop_assert!(close(cm.m4, m4, 1e-12));
            // m3 can cancel to ~0; compare on the scale of m2^(3/2).
            prop_assert!((cm.m3 - m3).abs() <= 1e-12 * m2.powf(1.5));
        }

        #[test]
        fn structural_identity_and_pearson(values in block(64)) {
            let s = summarize(&values).unwrap();
            prop_assume!(!s.degenerate);
            prop_assert!(s.identity_error() <= 1e-9);
            prop_assert!(s.k >= 1.0 + s.s * s.s - 1e-12);
            prop_assert!(s.r >= 0.0);
        }

        #[test]
        fn affine_invariance(values in block(32), a in 0.01f64..100.0, b in -1e3f64..1e3, flip in any::<bool>()) {
            let base = summarize(&values).unwrap();
            prop_assume!(!base.degenerate && base.m2 > 1e-6);
            let sign = if flip { -1.0 } else { 1.0 };
            let mapped: Vec<f64> = values.iter().map(|x| sign * a * x + b).collect();
            let t = summarize(&mapped).unwrap();
            let tol = |x: f64| 1e-9 * x.abs().max(1e-3);
            prop_assert!((t.s - sign * base.s).abs() <= tol(base.s));
            prop_assert!((t.k - base.k).abs() <= tol(base.k));
            prop_assert!((t.r - base.r).abs() <= tol(base.r));
        }
    }
}
