//! Deterministic, stream-splittable variates for the reference distributions.
//!
//! Every block is drawn from its own ChaCha8 stream keyed by
//! `(master_seed, stream_id)`, so block `i` is the same whichever thread
//! draws it and in whatever order.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, Geometric, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::moments::SampleBlock;
use crate::{Error, Result};

/// What a count variable counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountConvention {
    /// Failures before the target number of successes (support starts at 0).
    #[default]
    Failures,
    /// Total trials up to and including the target success.
    Trials,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Lognormal { meanlog: f64, sdlog: f64 },
    Gamma { shape: f64, rate: f64 },
    Pareto { shape: f64, scale: f64 },
    Binomial { trials: u64, p: f64 },
    NegativeBinomial { successes: f64, p: f64, count: CountConvention },
    Poisson { rate: f64 },
    Geometric { p: f64, count: CountConvention },
    Zipf { shape: f64, xmin: u64 },
}

impl DistributionSpec {
    pub const FAMILIES: [&'static str; 10] = [
        "gaussian",
        "exponential",
        "lognormal",
        "gamma",
        "pareto",
        "binomial",
        "negative_binomial",
        "poisson",
        "geometric",
        "zipf",
    ];

    /// The family with its reference parameters.
    pub fn default_for(family: &str) -> Result<Self> {
        use CountConvention::Failures;
        Ok(match normalize(family).as_str() {
            "gaussian" | "normal" => Self::Gaussian { mean: 0.0, sd: 1.0 },
            "exponential" => Self::Exponential { rate: 1.0 },
            "lognormal" => Self::Lognormal { meanlog: 0.0, sdlog: 1.0 },
            "gamma" => Self::Gamma { shape: 2.0, rate: 1.0 },
            "pareto" => Self::Pareto { shape: 5.0, scale: 1.0 },
            "binomial" => Self::Binomial { trials: 20, p: 0.8 },
            "negative_binomial" | "negbinomial" | "nbinom" => {
                Self::NegativeBinomial { successes: 20.0, p: 0.8, count: Failures }
            }
            "poisson" => Self::Poisson { rate: 20.0 },
            "geometric" => Self::Geometric { p: 0.8, count: Failures },
            "zipf" => Self::Zipf { shape: 5.0, xmin: 1 },
            _ => return Err(Error::UnknownDistribution(family.to_string())),
        })
    }

    /// The ten reference distributions, continuous first.
    pub fn reference_defaults() -> Vec<Self> {
        Self::FAMILIES.iter().map(|f| Self::default_for(f).expect("known family")).collect()
    }

    /// Parses a family name and `key=value,...` overrides of its defaults.
    ///
    /// Accepted keys: `mean sd rate meanlog sdlog shape scale trials p
    /// successes xmin count`; `count` takes `failures` or `trials`.
    pub fn parse(family: &str, params: &str) -> Result<Self> {
        let mut spec = Self::default_for(family)?;
        for pair in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got `{pair}`")))?;
            spec.set(key.trim(), value.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let family = self.family();
        let bad = || Error::InvalidParameter(format!("{key}={value} for {family}"));
        let real = || value.parse::<f64>().map_err(|_| bad());
        let int = || value.parse::<u64>().map_err(|_| bad());
        let conv = || match value {
            "failures" => Ok(CountConvention::Failures),
            "trials" => Ok(CountConvention::Trials),
            _ => Err(bad()),
        };
        use DistributionSpec::*;
        match (self, key) {
            (Gaussian { mean, .. }, "mean") => *mean = real()?,
            (Gaussian { sd, .. }, "sd") => *sd = real()?,
            (Exponential { rate }, "rate") => *rate = real()?,
            (Lognormal { meanlog, .. }, "meanlog") => *meanlog = real()?,
            (Lognormal { sdlog, .. }, "sdlog") => *sdlog = real()?,
            (Gamma { shape, .. }, "shape") => *shape = real()?,
            (Gamma { rate, .. }, "rate") => *rate = real()?,
            (Pareto { shape, .. }, "shape") => *shape = real()?,
            (Pareto { scale, .. }, "scale") => *scale = real()?,
            (Binomial { trials, .. }, "trials") => *trials = int()?,
            (Binomial { p, .. }, "p") => *p = real()?,
            (NegativeBinomial { successes, .. }, "successes" | "trials" | "size") => *successes = real()?,
            (NegativeBinomial { p, .. }, "p") => *p = real()?,
            (NegativeBinomial { count, .. }, "count") => *count = conv()?,
            (Poisson { rate }, "rate" | "lambda") => *rate = real()?,
            (Geometric { p, .. }, "p") => *p = real()?,
            (Geometric { count, .. }, "count") => *count = conv()?,
            (Zipf { shape, .. }, "shape" | "s") => *shape = real()?,
            (Zipf { xmin, .. }, "xmin") => *xmin = int()?,
            _ => return Err(Error::InvalidParameter(format!("unknown key `{key}` for {family}"))),
        }
        Ok(())
    }

    pub fn family(&self) -> &'static str {
        use DistributionSpec::*;
        match self {
            Gaussian { .. } => "gaussian",
            Exponential { .. } => "exponential",
            Lognormal { .. } => "lognormal",
            Gamma { .. } => "gamma",
            Pareto { .. } => "pareto",
            Binomial { .. } => "binomial",
            NegativeBinomial { .. } => "negative_binomial",
            Poisson { .. } => "poisson",
            Geometric { .. } => "geometric",
            Zipf { .. } => "zipf",
        }
    }

    pub fn is_discrete(&self) -> bool {
        use DistributionSpec::*;
        matches!(self, Binomial { .. } | NegativeBinomial { .. } | Poisson { .. } | Geometric { .. } | Zipf { .. })
    }

    pub fn validate(&self) -> Result<()> {
        use DistributionSpec::*;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let prob = |v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {v}")))
            }
        };
        match *self {
            Gaussian { mean, sd } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidParameter(format!("mean must be finite, got {mean}")));
                }
                positive("sd", sd)
            }
            Exponential { rate } => positive("rate", rate),
            Lognormal { meanlog, sdlog } => {
                if !meanlog.is_finite() {
                    return Err(Error::InvalidParameter(format!("meanlog must be finite, got {meanlog}")));
                }
                positive("sdlog", sdlog)
            }
            Gamma { shape, rate } => positive("shape", shape).and(positive("rate", rate)),
            Pareto { shape, scale } => positive("shape", shape).and(positive("scale", scale)),
            Binomial { trials, p } => {
                if trials == 0 {
                    return Err(Error::InvalidParameter("trials must be positive".into()));
                }
                prob(p)
            }
            NegativeBinomial { successes, p, .. } => positive("successes", successes).and(prob(p)),
            Poisson { rate } => positive("rate", rate),
            Geometric { p, .. } => prob(p),
            Zipf { shape, xmin } => {
                if xmin == 0 {
                    return Err(Error::InvalidParameter("xmin must be at least 1".into()));
                }
                if !(shape > 1.0 && shape.is_finite()) {
                    return Err(Error::InvalidParameter(format!("zipf shape must exceed 1, got {shape}")));
                }
                Ok(())
            }
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(self)
    }

    /// Population skewness and kurtosis, or `None` where the fourth moment
    /// diverges.
    pub fn theoretical_skew_kurt(&self) -> Option<(f64, f64)> {
        use DistributionSpec::*;
        match *self {
            Gaussian { .. } => Some((0.0, 3.0)),
            Exponential { .. } => Some((2.0, 9.0)),
            Lognormal { sdlog, .. } => {
                let w = (sdlog * sdlog).exp();
                let skew = (w + 2.0) * (w - 1.0).sqrt();
                let excess = w.powi(4) + 2.0 * w.powi(3) + 3.0 * w.powi(2) - 6.0;
                Some((skew, 3.0 + excess))
            }
            Gamma { shape, .. } => Some((2.0 / shape.sqrt(), 3.0 + 6.0 / shape)),
            Pareto { shape: a, .. } => {
                if a <= 4.0 {
                    return None;
                }
                let skew = 2.0 * (1.0 + a) / (a - 3.0) * ((a - 2.0) / a).sqrt();
                let excess = 6.0 * (a.powi(3) + a * a - 6.0 * a - 2.0) / (a * (a - 3.0) * (a - 4.0));
                Some((skew, 3.0 + excess))
            }
            Binomial { trials, p } => {
                let v = trials as f64 * p * (1.0 - p);
                Some(((1.0 - 2.0 * p) / v.sqrt(), 3.0 + (1.0 - 6.0 * p * (1.0 - p)) / v))
            }
            NegativeBinomial { successes: r, p, .. } => {
                let q = 1.0 - p;
                Some(((2.0 - p) / (r * q).sqrt(), 3.0 + 6.0 / r + p * p / (r * q)))
            }
            Poisson { rate } => Some((rate.powf(-0.5), 3.0 + 1.0 / rate)),
            Geometric { p, .. } => {
                let q = 1.0 - p;
                Some(((2.0 - p) / q.sqrt(), 9.0 + p * p / q))
            }
            Zipf { shape, xmin } => {
                // Raw moment k exists iff shape − k > 1.
                if shape <= 5.0 {
                    return None;
                }
                let z = |k: f64| hurwitz_zeta(shape - k, xmin as f64);
                let z0 = z(0.0);
                let (e1, e2, e3, e4) = (z(1.0) / z0, z(2.0) / z0, z(3.0) / z0, z(4.0) / z0);
                let var = e2 - e1 * e1;
                let mu3 = e3 - 3.0 * e1 * e2 + 2.0 * e1.powi(3);
                let mu4 = e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1.powi(4);
                Some((mu3 / var.powf(1.5), mu4 / (var * var)))
            }
        }
    }
}

/// Free-function form of [`DistributionSpec::theoretical_skew_kurt`].
pub fn theoretical_skew_kurt(spec: &DistributionSpec) -> Option<(f64, f64)> {
    spec.theoretical_skew_kurt()
}

fn normalize(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace(['-', ' '], "_")
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use DistributionSpec::*;
        let conv = |c: &CountConvention| match c {
            CountConvention::Failures => "failures",
            CountConvention::Trials => "trials",
        };
        match self {
            Gaussian { mean, sd } => write!(f, "Gaussian(mean={mean}, sd={sd})"),
            Exponential { rate } => write!(f, "Exponential(rate={rate})"),
            Lognormal { meanlog, sdlog } => write!(f, "Lognormal(meanlog={meanlog}, sdlog={sdlog})"),
            Gamma { shape, rate } => write!(f, "Gamma(shape={shape}, rate={rate})"),
            Pareto { shape, scale } => write!(f, "Pareto(shape={shape}, scale={scale})"),
            Binomial { trials, p } => write!(f, "Binomial(trials={trials}, p={p})"),
            NegativeBinomial { successes, p, count } => {
                write!(f, "NegativeBinomial(trials={successes}, p={p}, count={})", conv(count))
            }
            Poisson { rate } => write!(f, "Poisson(rate={rate})"),
            Geometric { p, count } => write!(f, "Geometric(p={p}, count={})", conv(count)),
            Zipf { shape, xmin } => write!(f, "Zipf(shape={shape}, xmin={xmin})"),
        }
    }
}

/// Identifies the random stream of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// ChaCha8 keyed by the master seed, positioned on stream `stream_id`.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Derives an independent master seed for a named sub-experiment.
pub fn derive_seed(master_seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// A ready-to-draw distribution (parameters validated, tables built).
#[derive(Clone, Debug)]
pub struct Sampler {
    spec: DistributionSpec,
    kind: Kind,
}

#[derive(Clone, Debug)]
enum Kind {
    Normal(Normal<f64>),
    Exp(Exp<f64>),
    LogNormal(LogNormal<f64>),
    Gamma(Gamma<f64>),
    Pareto { scale: f64, inv_shape: f64 },
    Binomial(Binomial),
    NegBinomial { mixing: Gamma<f64>, offset: f64 },
    Poisson(Poisson<f64>),
    Geometric { dist: Geometric, offset: f64 },
    Table { cdf: Arc<[f64]>, xmin: f64 },
}

/// Table size cap for inverse-transform Zipf sampling.
const ZIPF_MAX_SUPPORT: usize = 1 << 24;
/// Tail mass beyond the last tabulated value.
const ZIPF_TAIL_MASS: f64 = 1e-12;

impl Sampler {
    pub fn new(spec: &DistributionSpec) -> Result<Self> {
        spec.validate()?;
        let err = |e: &dyn fmt::Display| Error::InvalidParameter(format!("{spec}: {e}"));
        use DistributionSpec as D;
        let kind = match *spec {
            D::Gaussian { mean, sd } => Kind::Normal(Normal::new(mean, sd).map_err(|e| err(&e))?),
            D::Exponential { rate } => Kind::Exp(Exp::new(rate).map_err(|e| err(&e))?),
            D::Lognormal { meanlog, sdlog } => Kind::LogNormal(LogNormal::new(meanlog, sdlog).map_err(|e| err(&e))?),
            D::Gamma { shape, rate } => Kind::Gamma(Gamma::new(shape, 1.0 / rate).map_err(|e| err(&e))?),
            D::Pareto { shape, scale } => Kind::Pareto { scale, inv_shape: 1.0 / shape },
            D::Binomial { trials, p } => Kind::Binomial(Binomial::new(trials, p).map_err(|e| err(&e))?),
            D::NegativeBinomial { successes, p, count } => Kind::NegBinomial {
                mixing: Gamma::new(successes, (1.0 - p) / p).map_err(|e| err(&e))?,
                offset: match count {
                    CountConvention::Failures => 0.0,
                    CountConvention::Trials => successes,
                },
            },
            D::Poisson { rate } => Kind::Poisson(Poisson::new(rate).map_err(|e| err(&e))?),
            D::Geometric { p, count } => Kind::Geometric {
                dist: Geometric::new(p).map_err(|e| err(&e))?,
                offset: match count {
                    CountConvention::Failures => 0.0,
                    CountConvention::Trials => 1.0,
                },
            },
            D::Zipf { shape, xmin } => Kind::Table { cdf: zipf_cdf(shape, xmin)?.into(), xmin: xmin as f64 },
        };
        Ok(Self { spec: spec.clone(), kind })
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    /// Draws one variate from `rng`.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            Kind::Normal(d) => d.sample(rng),
            Kind::Exp(d) => d.sample(rng),
            Kind::LogNormal(d) => d.sample(rng),
            Kind::Gamma(d) => d.sample(rng),
            Kind::Pareto { scale, inv_shape } => {
                // 1 − U lies in (0, 1].
                let u = 1.0 - rng.random::<f64>();
                scale * u.powf(-inv_shape)
            }
            Kind::Binomial(d) => d.sample(rng) as f64,
            Kind::NegBinomial { mixing, offset } => {
                let lambda = mixing.sample(rng);
                let k = match Poisson::new(lambda) {
                    Ok(p) => p.sample(rng),
                    // λ underflowed to 0.
                    Err(_) => 0.0,
                };
                k + offset
            }
            Kind::Poisson(d) => d.sample(rng),
            Kind::Geometric { dist, offset } => dist.sample(rng) as f64 + offset,
            Kind::Table { cdf, xmin } => {
                let u = rng.random::<f64>();
                cdf.partition_point(|&c| c <= u) as f64 + xmin
            }
        }
    }

    /// Fills `out` with the block identified by `seed`.
    pub fn fill(&self, seed: SeedSpec, out: &mut [f64]) {
        let mut rng = seed.rng();
        for v in out.iter_mut() {
            *v = self.draw(&mut rng);
        }
    }

    pub fn draw_block(&self, n: usize, seed: SeedSpec) -> Result<SampleBlock<f64>> {
        if n == 0 {
            return Err(Error::SampleTooSmall { n, min: 1 });
        }
        let mut values = vec![0.0; n];
        self.fill(seed, &mut values);
        SampleBlock::new(values)
    }
}

/// `n` i.i.d. variates from `spec` on the stream `seed`.
pub fn draw_block(spec: &DistributionSpec, n: usize, seed: SeedSpec) -> Result<SampleBlock<f64>> {
    Sampler::new(spec)?.draw_block(n, seed)
}

/// Hurwitz zeta `Σ_{k≥0} (a+k)^(−s)` for `s > 1`, by direct summation plus
/// an Euler–Maclaurin tail.
pub(crate) fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    const TERMS: usize = 64;
    let head: f64 = (0..TERMS).map(|k| (a + k as f64).powf(-s)).sum();
    let x = a + TERMS as f64;
    let tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s) + s * x.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * x.powf(-s - 3.0) / 720.0;
    head + tail
}

/// Cumulative probabilities `P(X ≤ xmin + i)` for `p(k) ∝ k^(−shape)`,
/// truncated once the remaining tail mass drops below [`ZIPF_TAIL_MASS`];
/// the last entry absorbs that tail and equals 1.
fn zipf_cdf(shape: f64, xmin: u64) -> Result<Vec<f64>> {
    let total = hurwitz_zeta(shape, xmin as f64);
    let mut cdf = Vec::new();
    let mut partial = 0.0;
    let mut k = xmin as f64;
    loop {
        partial += k.powf(-shape);
        cdf.push(partial / total);
        let tail = hurwitz_zeta(shape, k + 1.0) / total;
        if tail < ZIPF_TAIL_MASS {
            break;
        }
        if cdf.len() >= ZIPF_MAX_SUPPORT {
            return Err(Error::InvalidParameter(format!("zipf shape {shape} too heavy-tailed for tabulated sampling")));
        }
        k += 1.0;
    }
    *cdf.last_mut().expect("non-empty") = 1.0;
    Ok(cdf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults_are_valid() {
        let specs = DistributionSpec::reference_defaults();
        assert_eq!(specs.len(), 10);
        for s in &specs {
            s.validate().unwrap();
            Sampler::new(s).unwrap();
        }
        assert_eq!(specs[4].to_string(), "Pareto(shape=5, scale=1)");
        assert_eq!(specs.iter().filter(|s| s.is_discrete()).count(), 5);
    }

    #[test]
    fn parse_overrides() {
        let s = DistributionSpec::parse("Pareto", "shape=3, scale=2").unwrap();
        assert_eq!(s, DistributionSpec::Pareto { shape: 3.0, scale: 2.0 });
        let s = DistributionSpec::parse("negative-binomial", "count=trials").unwrap();
        assert!(matches!(s, DistributionSpec::NegativeBinomial { count: CountConvention::Trials, .. }));
        assert!(matches!(DistributionSpec::parse("cauchy", ""), Err(Error::UnknownDistribution(_))));
        for bad in ["rate=-1", "rate=x", "shape=2", "rate"] {
            assert!(matches!(DistributionSpec::parse("poisson", bad), Err(Error::InvalidParameter(_))), "{bad}");
        }
        assert!(DistributionSpec::parse("geometric", "p=1").is_err());
        assert!(DistributionSpec::parse("zipf", "shape=1").is_err());
    }

    #[test]
    fn theoretical_values() {
        let d = |f| DistributionSpec::default_for(f).unwrap().theoretical_skew_kurt();
        assert_eq!(d("gaussian"), Some((0.0, 3.0)));
        assert_eq!(d("exponential"), Some((2.0, 9.0)));
        let (s, k) = d("pareto").unwrap();
        assert!((s - 4.647_580_015_448_9).abs() < 1e-9, "{s}");
        assert!((k - 73.8).abs() < 1e-9, "{k}");
        let (s, k) = d("poisson").unwrap();
        assert!((s - 0.223_606_797_749_979).abs() < 1e-12);
        assert!((k - 3.05).abs() < 1e-12);
        assert_eq!(d("zipf"), None);
        assert_eq!(DistributionSpec::Pareto { shape: 4.0, scale: 1.0 }.theoretical_skew_kurt(), None);
    }

    #[test]
    fn zeta_matches_known_values() {
        // ζ(2) = π²/6, ζ(5) (Apéry-like constant, tabulated).
        assert!((hurwitz_zeta(2.0, 1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
        assert!((hurwitz_zeta(5.0, 1.0) - 1.036_927_755_143_37).abs() < 1e-14);
        assert!((hurwitz_zeta(4.0, 3.0) - (std::f64::consts::PI.powi(4) / 90.0 - 1.0 - 1.0 / 16.0)).abs() < 1e-13);
    }

    #[test]
    fn zipf_table_is_a_cdf() {
        let cdf = zipf_cdf(5.0, 1).unwrap();
        assert_eq!(*cdf.last().unwrap(), 1.0);
        assert!(cdf.windows(2).all(|w| w[0] < w[1]));
        assert!((cdf[0] - 1.0 / 1.036_927_755_143_37).abs() < 1e-14);
        // tail beyond K is ~K⁻⁴/(4ζ(5)) < 1e-12 ⇒ K ≈ 700
        assert!((600..800).contains(&cdf.len()), "{}", cdf.len());
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let sampler = DistributionSpec::default_for("lognormal").unwrap().sampler().unwrap();
        let a = sampler.draw_block(32, SeedSpec::new(7, 3)).unwrap();
        let b = sampler.draw_block(32, SeedSpec::new(7, 3)).unwrap();
        let c = sampler.draw_block(32, SeedSpec::new(7, 4)).unwrap();
        let d = sampler.draw_block(32, SeedSpec::new(8, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }

    #[test]
    fn count_conventions_shift_support() {
        let seed = SeedSpec::new(1, 1);
        let fail = draw_block(&DistributionSpec::parse("geometric", "").unwrap(), 50, seed).unwrap();
        let trial = draw_block(&DistributionSpec::parse("geometric", "count=trials").unwrap(), 50, seed).unwrap();
        for (f, t) in fail.values().iter().zip(trial.values()) {
            assert_eq!(f + 1.0, *t);
        }
        assert!(fail.values().contains(&0.0));
    }

    #[test]
    fn supports_are_respected() {
        let seed = SeedSpec::new(99, 0);
        for spec in DistributionSpec::reference_defaults() {
            let block = draw_block(&spec, 10_000, seed).unwrap();
            let v = block.values();
            match spec {
                DistributionSpec::Pareto { scale, .. } => assert!(v.iter().all(|&x| x >= scale)),
                DistributionSpec::Zipf { xmin, .. } => assert!(v.iter().all(|&x| x >= xmin as f64)),
                DistributionSpec::Binomial { trials, .. } => {
                    assert!(v.iter().all(|&x| x >= 0.0 && x <= trials as f64 && x.fract() == 0.0))
                }
                DistributionSpec::Exponential { .. }
                | DistributionSpec::Lognormal { .. }
                | DistributionSpec::Gamma { .. } => {
                    assert!(v.iter().all(|&x| x > 0.0))
                }
                _ if spec.is_discrete() => assert!(v.iter().all(|&x| x >= 0.0 && x.fract() == 0.0)),
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod goodness_of_fit {
    use super::*;
    use statrs::distribution::{
        Binomial, ChiSquared, ContinuousCDF, Discrete, Exp, Gamma, Geometric, LogNormal, NegativeBinomial, Normal,
        Pareto, Poisson,
    };

    const DRAWS: usize = 1_000_000;

    type Cdf = Box<dyn Fn(f64) -> f64>;
    type Pmf = Box<dyn Fn(u64) -> f64>;
    const ALPHA: f64 = 1e-6;

    fn draws(family: &str) -> Vec<f64> {
        let spec = DistributionSpec::default_for(family).unwrap();
        let mut v = vec![0.0; DRAWS];
        spec.sampler().unwrap().fill(SeedSpec::new(derive_seed(2024, family), 0), &mut v);
        v
    }

    /// Asymptotic Kolmogorov tail `P(√m·D > x)`.
    fn kolmogorov_tail(x: f64) -> f64 {
        if x < 0.2 {
            return 1.0;
        }
        let s: f64 = (1..=100)
            .map(|k| {
                let k = k as f64;
                let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * k * k * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }

    fn ks_p_value(mut v: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let m = v.len() as f64;
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / m).max((i + 1) as f64 / m - f)
            })
            .fold(0.0, f64::max);
        kolmogorov_tail(m.sqrt() * d)
    }

    /// Chi-square over integer cells, merging the tails until every cell
    /// expects at least five draws.
    fn chi_square_p_value(v: &[f64], pmf: impl Fn(u64) -> f64) -> f64 {
        let m = v.len() as f64;
        let max = v.iter().fold(0.0f64, |a, &b| a.max(b)) as u64;
        let mut observed = vec![0u64; max as usize + 1];
        for &x in v {
            assert_eq!(x.fract(), 0.0);
            observed[x as usize] += 1;
        }
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let (mut obs, mut exp) = (0.0, 0.0);
        for (k, &o) in observed.iter().enumerate() {
            obs += o as f64;
            exp += m * pmf(k as u64);
            if exp >= 5.0 {
                cells.push((obs, exp));
                obs = 0.0;
                exp = 0.0;
            }
        }
        // Everything beyond the largest draw joins the last cell.
        let seen: f64 = cells.iter().map(|c| c.1).sum::<f64>() + exp;
        let last = cells.last_mut().unwrap();
        last.0 += obs;
        last.1 += exp + (m - seen).max(0.0);
        let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let dof = (cells.len() - 1) as f64;
        1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
    }

    #[test]
    fn continuous_families_pass_ks() {
        let cases: Vec<(&str, Cdf)> = vec![
            ("gaussian", Box::new(|x| Normal::new(0.0, 1.0).unwrap().cdf(x))),
            ("exponential", Box::new(|x| Exp::new(1.0).unwrap().cdf(x))),
            ("lognormal", Box::new(|x| LogNormal::new(0.0, 1.0).unwrap().cdf(x))),
            ("gamma", Box::new(|x| Gamma::new(2.0, 1.0).unwrap().cdf(x))),
            ("pareto", Box::new(|x| Pareto::new(1.0, 5.0).unwrap().cdf(x))),
        ];
        for (family, cdf) in cases {
            let p = ks_p_value(draws(family), cdf);
            assert!(p > ALPHA, "{family}: KS p = {p}");
        }
    }

    #[test]
    fn discrete_families_pass_chi_square() {
        let zeta5 = hurwitz_zeta(5.0, 1.0);
        let cases: Vec<(&str, Pmf)> = vec![
            ("binomial", Box::new(|k| Binomial::new(0.8, 20).unwrap().pmf(k))),
            ("negative_binomial", Box::new(|k| NegativeBinomial::new(20.0, 0.8).unwrap().pmf(k))),
            ("poisson", Box::new(|k| Poisson::new(20.0).unwrap().pmf(k))),
            // The reference geometric counts trials; ours counts failures.
            ("geometric", Box::new(|k| Geometric::new(0.8).unwrap().pmf(k + 1))),
            ("zipf", Box::new(move |k| if k == 0 { 0.0 } else { (k as f64).powi(-5) / zeta5 })),
        ];
        for (family, pmf) in cases {
            let p = chi_square_p_value(&draws(family), pmf);
            assert!(p > ALPHA, "{family}: chi-square p = {p}");
        }
    }

    #[test]
    fn detector_catches_a_wrong_distribution() {
        let p = ks_p_value(draws("gaussian"), |x| Normal::new(0.0, 1.02).unwrap().cdf(x));
        assert!(p < ALPHA, "{p}");
        let p = chi_square_p_value(&draws("poisson"), |k| Poisson::new(20.2).unwrap().pmf(k));
        assert!(p < ALPHA, "{p}");
    }

    #[test]
    fn sample_moments_match_theory() {
        // family, (S tolerance, K tolerance); Zipf is covered by the PMF fit.
        let cases = [
            ("gaussian", 0.02, Some(0.05)),
            ("exponential", 0.1, Some(0.5)),
            ("poisson", 0.02, Some(0.05)),
            ("pareto", 0.5, None),
        ];
        for (family, ts, tk) in cases {
            let spec = DistributionSpec::default_for(family).unwrap();
            let (s0, k0) = spec.theoretical_skew_kurt().unwrap();
            let s = crate::moments::summarize(&draws(family)).unwrap();
            assert!((s.s - s0).abs() <= ts, "{family}: S = {} vs {s0}", s.s);
            if let Some(tk) = tk {
                assert!((s.k - k0).abs() <= tk, "{family}: K = {} vs {k0}", s.k);
            }
        }
    }
}
