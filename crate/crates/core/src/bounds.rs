//! Closed-form skewness/kurtosis bounds and the empirical piecewise-parabolic
//! lower kurtosis envelope for small blocks.

use serde::Serialize;

use crate::moments::MomentSummary;
use crate::{Error, Result, Scalar};

/// Absolute slack allowed on the closed-form bounds (floating error only).
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Absolute slack below the tabulated envelope; its coefficients are rounded
/// to five decimals.
pub const ENVELOPE_TOLERANCE: f64 = 0.01;

/// All closed-form bounds for block size `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundSet<T> {
    pub n: usize,
    /// `√(n−1)`
    pub skew_abs_max_loose: T,
    /// `(n−2)/√(n−1)`
    pub skew_abs_max: T,
    /// `n`
    pub kurt_max_loose: T,
    /// `(n²−3n+3)/(n−1)`
    pub kurt_max_dalen: T,
}

impl<T: Scalar> BoundSet<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::SampleTooSmall { n, min: 2 });
        }
        let nf = T::of_usize(n);
        let one = T::one();
        let two = T::of(2.0);
        let three = T::of(3.0);
        let root = (nf - one).sqrt();
        Ok(Self {
            n,
            skew_abs_max_loose: root,
            skew_abs_max: (nf - two) / root,
            kurt_max_loose: nf,
            kurt_max_dalen: (nf * nf - three * nf + three) / (nf - one),
        })
    }

    /// `½·((n−3)/(n−2))·S² + n/2`; undefined for `n < 3`.
    pub fn sharma_upper(&self, s: T) -> Result<T> {
        if self.n < 3 {
            return Err(Error::SampleTooSmall { n: self.n, min: 3 });
        }
        let nf = T::of_usize(self.n);
        let half = T::of(0.5);
        Ok(half * (nf - T::of(3.0)) / (nf - T::of(2.0)) * s * s + half * nf)
    }

    /// Pearson's bound `1 + S²`.
    pub fn pearson_lower(&self, s: T) -> T {
        T::one() + s * s
    }
}

/// Convenience wrapper around [`BoundSet::new`].
pub fn bound_set<T: Scalar>(n: usize) -> Result<BoundSet<T>> {
    BoundSet::new(n)
}

/// One piece `K = a·S² + b·S + c` of the lower envelope on `[s_lo, s_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParabolaSegment<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub s_lo: T,
    pub s_hi: T,
}

impl<T: Scalar> ParabolaSegment<T> {
    pub fn eval(&self, s: T) -> T {
        (self.a * s + self.b) * s + self.c
    }

    pub fn contains(&self, s: T) -> bool {
        self.s_lo <= s && s <= self.s_hi
    }
}

/// Left half (`S ≤ 0`) of the lower envelope for one block size; the right
/// half is its mirror image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerEnvelopeSpec<T> {
    pub n: usize,
    /// Ordered from the most negative `S` range towards zero.
    pub segments: Vec<ParabolaSegment<T>>,
}

impl<T: Scalar> LowerEnvelopeSpec<T> {
    /// Evaluates at `−|s|`. At a shared endpoint the outer segment wins.
    pub fn eval(&self, s: T) -> Result<T> {
        let x = -s.abs();
        let lo = self.segments[0].s_lo;
        if x < lo - T::of(BOUND_TOLERANCE) {
            return Err(Error::SkewOutOfRange { s: s.abs().as_f64(), max: (-lo).as_f64() });
        }
        let x = x.max(lo);
        let seg = self.segments.iter().find(|seg| seg.contains(x)).expect("segments tile [s_lo, 0]");
        Ok(seg.eval(x))
    }
}

/// `(a, b, c, s_lo, s_hi)` of one tabulated segment.
type Row = (f64, f64, f64, f64, f64);

// Exactly as tabulated, outermost segment first.
const TABLE1: [&[Row]; 6] = [
    &[(-0.16930, -1.35019, 1.0, -1.1547, 0.0)],
    &[(-0.27282, -2.42886, 0.22056, -1.5, -0.40825), (-0.5, 0.0, 1.25, -0.40825, 0.0)],
    &[(-0.39975, -3.49778, -0.7778, -1.78885, -0.71), (-0.72619, -1.2256, 1.0, -0.71, 0.0)],
    &[
        (-0.46626, -4.39171, -1.85513, -2.04124, -0.95394),
        (-0.89555, -2.35544, 0.47801, -0.95394, -0.28868),
        (-1.0, 0.0, 1.16667, -0.28868, 0.0),
    ],
    &[
        (-0.49653, -5.12229, -2.91984, -2.26779, -1.155),
        (-0.88454, -3.14719, -0.12097, -1.155, -0.515),
        (-1.30395, -1.18653, 1.0, -0.515, 0.0),
    ],
    &[
        (-0.47074, -5.59352, -3.83497, -2.47487, -1.325),
        (-1.25168, -4.55704, -1.0906, -1.325, -0.705),
        (-1.58841, -2.43419, 0.57337, -0.705, -0.234),
        (-1.16882, 0.0, 1.12, -0.234, 0.0),
    ],
];

/// The tabulated lower envelope for `n ∈ 4..=9`.
///
/// The outer endpoint of the first segment is the exact skewness bound
/// `−(n−2)/√(n−1)` rather than its rounded printed value.
pub fn table1_envelope<T: Scalar>(n: usize) -> Result<LowerEnvelopeSpec<T>> {
    if !(4..=9).contains(&n) {
        return Err(Error::NoEnvelope(n));
    }
    let skew_max = BoundSet::<T>::new(n)?.skew_abs_max;
    let segments = TABLE1[n - 4]
        .iter()
        .enumerate()
        .map(|(i, &(a, b, c, s_lo, s_hi))| ParabolaSegment {
            a: T::of(a),
            b: T::of(b),
            c: T::of(c),
            s_lo: if i == 0 { -skew_max } else { T::of(s_lo) },
            s_hi: T::of(s_hi),
        })
        .collect();
    Ok(LowerEnvelopeSpec { n, segments })
}

/// Lower kurtosis envelope at skewness `s` for `n ∈ 4..=9`.
pub fn table1_lower<T: Scalar>(n: usize, s: T) -> Result<T> {
    table1_envelope(n)?.eval(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    /// `|S| ≤ √(n−1)`
    SkewLoose,
    /// `|S| ≤ (n−2)/√(n−1)`
    SkewSharp,
    /// `K ≤ n`
    KurtLoose,
    /// `K ≤ (n²−3n+3)/(n−1)`
    KurtDalen,
    /// `K ≥ 1 + S²`
    PearsonLower,
    /// `K ≤ ½((n−3)/(n−2))S² + n/2`
    SharmaUpper,
    /// `K ≥` tabulated envelope, `n ∈ 4..=9`
    EnvelopeLower,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub bound: BoundKind,
    /// The bound value the summary was compared against.
    pub limit: f64,
    /// The summary's value of the bounded quantity.
    pub value: f64,
}

/// Lists every bound the summary violates beyond tolerance.
pub fn check_summary<T: Scalar>(summary: &MomentSummary<T>) -> Result<Vec<Violation>> {
    if summary.degenerate {
        return Err(Error::DegenerateBlock);
    }
    let b = BoundSet::<T>::new(summary.n)?;
    let s = summary.s.as_f64();
    let k = summary.k.as_f64();
    let s_abs = s.abs();
    let tol = BOUND_TOLERANCE;

    let mut out = Vec::new();
    let mut upper = |bound, limit: f64, value: f64, tol: f64| {
        if value > limit + tol {
            out.push(Violation { bound, limit, value });
        }
    };
    upper(BoundKind::SkewLoose, b.skew_abs_max_loose.as_f64(), s_abs, tol);
    upper(BoundKind::SkewSharp, b.skew_abs_max.as_f64(), s_abs, tol);
    upper(BoundKind::KurtLoose, b.kurt_max_loose.as_f64(), k, tol);
    upper(BoundKind::KurtDalen, b.kurt_max_dalen.as_f64(), k, tol);
    if summary.n >= 3 {
        let limit = b.sharma_upper(summary.s)?.as_f64();
        upper(BoundKind::SharmaUpper, limit, k, tol);
    }

    let pearson = 1.0 + s * s;
    if k < pearson - tol {
        out.push(Violation { bound: BoundKind::PearsonLower, limit: pearson, value: k });
    }
    if (4..=9).contains(&summary.n) {
        let env = table1_envelope::<f64>(summary.n)?;
        // Out-of-range skewness is already reported as SkewSharp.
        let clamped = s_abs.min(-env.segments[0].s_lo);
        let limit = env.eval(clamped)?;
        if k < limit - ENVELOPE_TOLERANCE {
            out.push(Violation { bound: BoundKind::EnvelopeLower, limit, value: k });
        }
    }
    Ok(out)
}
