//! Monte Carlo checks of the canonical-pair condition
//! `sup_λ E[exp(λA - λ²B²/2)] <= 1`, of the self-normalized tail bounds it
//! implies, and of the subgaussian-from-exponential-moment claim.
//!
//! Pairs are drawn once per check and reused for every grid point. `E[B]`
//! for the first tail bound is always supplied by the caller, never estimated
//! from the draws being tested.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{nonneg, positive};
use crate::distributions::{sample_product_keyed, ProductDistribution};
use crate::error::{Error, Result};
use crate::estimate::{EstimateWithError, RunningStats};
use crate::estimators::{variance_breakdown, VarianceMethod};
use crate::rng::{purpose, StreamKey};
use crate::statistics::{closed_form_mean, monte_carlo_mean, ExpectationMethod, Statistic};
use crate::verdict::{binomial_threshold, Verdict, MARGIN_STDERRS};

/// Default λ grid standing in for the supremum over the real line.
pub const DEFAULT_LAMBDA_GRID: [f64; 9] = [0.0, -0.5, 0.5, -1.0, 1.0, -2.0, 2.0, -3.0, 3.0];

/// `(Δ, sqrt(V^KS))` for one statistic and product law.
#[derive(Clone, Debug)]
pub struct DeltaVPair {
    pub stat: Statistic,
    pub pd: ProductDistribution,
    pub method: VarianceMethod,
    /// `E[f(S)]`, computed once.
    pub mean: EstimateWithError,
}

impl DeltaVPair {
    pub fn new(
        stat: Statistic,
        pd: ProductDistribution,
        method: VarianceMethod,
        expectation: ExpectationMethod,
        key: StreamKey,
    ) -> Result<Self> {
        stat.check_arity(pd.len())?;
        let mean = match expectation {
            ExpectationMethod::ClosedForm => {
                EstimateWithError::exact(closed_form_mean(&stat, &pd)?)
            }
            ExpectationMethod::MonteCarlo { replicates } => {
                monte_carlo_mean(&stat, &pd, replicates, key)?
            }
        };
        Ok(DeltaVPair {
            stat,
            pd,
            method,
            mean,
        })
    }
}

#[derive(Clone, Debug)]
pub enum PairSampler {
    /// `(σ g, σ)` with `g` standard normal.
    GaussianScale {
        sigma: f64,
    },
    DeltaV(Box<DeltaVPair>),
    /// `(A, c B)`; with `c < 1` this is a negative control.
    ScaledControl {
        base: Box<PairSampler>,
        b_multiplier: f64,
    },
}

impl PairSampler {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        nonneg("sigma", sigma)?;
        Ok(PairSampler::GaussianScale { sigma })
    }

    pub fn scaled(base: PairSampler, b_multiplier: f64) -> Result<Self> {
        positive("b_multiplier", b_multiplier)?;
        Ok(PairSampler::ScaledControl {
            base: Box::new(base),
            b_multiplier,
        })
    }

    /// Draws one `(A, B)` from the streams under `key`.
    pub fn draw(&self, key: StreamKey) -> Result<(f64, f64)> {
        match self {
            PairSampler::GaussianScale { sigma } => {
                let g: f64 = rand::Rng::sample(&mut key.rng(), rand_distr::StandardNormal);
                Ok((sigma * g, *sigma))
            }
            PairSampler::DeltaV(p) => {
                let s = sample_product_keyed(&p.pd, key.child(purpose::SAMPLE));
                let a = p.stat.evaluate(&s.values)? - p.mean.value;
                let v = variance_breakdown(
                    &p.stat,
                    &p.pd,
                    &s.values,
                    &p.method,
                    key.child(purpose::INNER),
                )?;
                Ok((a, v.total.value.sqrt()))
            }
            PairSampler::ScaledControl { base, b_multiplier } => {
                let (a, b) = base.draw(key)?;
                Ok((a, b_multiplier * b))
            }
        }
    }

    /// `E[B]` when it is known exactly.
    pub fn exact_mean_b(&self) -> Option<f64> {
        match self {
            PairSampler::GaussianScale { sigma } => Some(*sigma),
            PairSampler::DeltaV(_) => None,
            PairSampler::ScaledControl { base, b_multiplier } => {
                base.exact_mean_b().map(|b| b * b_multiplier)
            }
        }
    }
}

/// `n` pairs, pair `i` drawn under `key.child(i)`.
pub fn draw_pairs(pair: &PairSampler, n: u64, key: StreamKey) -> Result<Vec<(f64, f64)>> {
    (0..n)
        .into_par_iter()
        .map(|i| pair.draw(key.child(i)))
        .collect()
}

/// Monte Carlo estimate of `E[B]` from its own draws.
pub fn estimate_mean_b(pair: &PairSampler, n: u64, key: StreamKey) -> Result<EstimateWithError> {
    if n < 2 {
        return Err(Error::invalid("samples", "must be >= 2"));
    }
    let pairs = draw_pairs(pair, n, key)?;
    Ok(pairs
        .iter()
        .map(|&(_, b)| b)
        .collect::<RunningStats>()
        .estimate())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgfRow {
    pub lambda: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub verdict: Verdict,
    /// The exponential average overflowed.
    pub unstable: bool,
    /// Relative stderr above 20%.
    pub heavy_tail: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgfReport {
    pub n_samples: u64,
    pub rows: Vec<MgfRow>,
    pub verdict: Verdict,
}

fn check_samples(n: u64, min: u64) -> Result<()> {
    if n < min {
        return Err(Error::invalid(
            "samples",
            format!("must be >= {min}, got {n}"),
        ));
    }
    Ok(())
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(name, "grid is empty"));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(
            name,
            format!("grid values must be finite, got {v}"),
        ));
    }
    Ok(())
}

/// MGF rows for pre-drawn pairs.
pub fn mgf_report(pairs: &[(f64, f64)], lambda_grid: &[f64]) -> MgfReport {
    let rows: Vec<MgfRow> = lambda_grid
        .iter()
        .map(|&lambda| {
            let stats: RunningStats = pairs
                .iter()
                .map(|&(a, b)| (lambda * a - 0.5 * lambda * lambda * b * b).exp())
                .collect();
            let e = stats.estimate();
            let unstable = !e.value.is_finite() || !e.stderr.is_finite();
            let verdict = if unstable {
                Verdict::Inconclusive
            } else if e.value <= 1.0 + MARGIN_STDERRS * e.stderr {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            MgfRow {
                lambda,
                estimate: e.value,
                stderr: e.stderr,
                verdict,
                unstable,
                heavy_tail: !unstable && e.relative_stderr() > 0.2,
            }
        })
        .collect();
    // An overflowing row makes the whole report inconclusive rather than failed.
    let verdict = if rows.iter().any(|r| r.unstable) {
        Verdict::Inconclusive
    } else {
        Verdict::combine(rows.iter().map(|r| r.verdict))
    };
    MgfReport {
        n_samples: pairs.len() as u64,
        rows,
        verdict,
    }
}

pub fn check_canonical_mgf(
    pair: &PairSampler,
    lambda_grid: &[f64],
    n_samples: u64,
    key: StreamKey,
) -> Result<MgfReport> {
    check_samples(n_samples, 100)?;
    check_grid("lambda_grid", lambda_grid)?;
    let pairs = draw_pairs(pair, n_samples, key)?;
    Ok(mgf_report(&pairs, lambda_grid))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailTest {
    /// `P(|A| / sqrt(B² + (E B)²) >= t) <= sqrt(2) e^{-t²/4}`
    ExpectedScale,
    /// `P(|A| / sqrt((B² + y)(1 + log(1 + B²/y)/2)) >= t) <= e^{-t²/2}`, `t >= sqrt 2`
    LogCorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub exceedances: u64,
    pub frequency: f64,
    pub bound: f64,
    pub margin: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub test: TailTest,
    /// `E[B]` as used (upper band if estimated) for the first test, `y` for the second.
    pub parameter: f64,
    pub n_samples: u64,
    pub rows: Vec<TailRow>,
    pub verdict: Verdict,
}

fn tail_rows(ratios: &[f64], t_grid: &[f64], bound: impl Fn(f64) -> f64) -> Vec<TailRow> {
    let n = ratios.len() as u64;
    t_grid
        .iter()
        .map(|&t| {
            let exceedances = ratios.iter().filter(|&&r| r >= t).count() as u64;
            let frequency = exceedances as f64 / n as f64;
            let nominal = bound(t);
            let (threshold, _) = binomial_threshold(nominal, n, MARGIN_STDERRS);
            let verdict = if nominal >= 1.0 {
                Verdict::Vacuous
            } else if frequency <= threshold {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            TailRow {
                t,
                exceedances,
                frequency,
                bound: nominal,
                margin: threshold - nominal,
                verdict,
            }
        })
        .collect()
}

#[inline]
fn ratio(a: f64, denom: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.abs() / denom
    }
}

/// Tail check with the expected-scale normalization. `eb` is `E[B]`; when it
/// carries a stderr the upper 3-stderr band is used, so estimation error in
/// `E[B]` cannot produce a spurious failure.
pub fn check_tail_i(
    pair: &PairSampler,
    eb: EstimateWithError,
    t_grid: &[f64],
    n_samples: u64,
    key: StreamKey,
) -> Result<TailReport> {
    nonneg("eb", eb.value)?;
    check_samples(n_samples, 1)?;
    check_grid("t_grid", t_grid)?;
    if let Some(t) = t_grid.iter().find(|&&t| t <= 0.0) {
        return Err(Error::invalid("t_grid", format!("t must be > 0, got {t}")));
    }
    let eb_used = eb.upper(MARGIN_STDERRS);
    let pairs = draw_pairs(pair, n_samples, key)?;
    let ratios: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| ratio(a, (b * b + eb_used * eb_used).sqrt()))
        .collect();
    let rows = tail_rows(&ratios, t_grid, |t| {
        std::f64::consts::SQRT_2 * (-t * t / 4.0).exp()
    });
    Ok(TailReport {
        test: TailTest::ExpectedScale,
        parameter: eb_used,
        n_samples,
        verdict: Verdict::combine(rows.iter().map(|r| r.verdict)),
        rows,
    })
}

pub fn check_tail_ii(
    pair: &PairSampler,
    y: f64,
    t_grid: &[f64],
    n_samples: u64,
    key: StreamKey,
) -> Result<TailReport> {
    positive("y", y)?;
    check_samples(n_samples, 1)?;
    check_grid("t_grid", t_grid)?;
    if let Some(t) = t_grid.iter().find(|&&t| t < std::f64::consts::SQRT_2) {
        return Err(Error::invalid(
            "t_grid",
            format!("t must be >= sqrt(2), got {t}"),
        ));
    }
    let pairs = draw_pairs(pair, n_samples, key)?;
    let ratios: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| {
            let b2 = b * b;
            ratio(a, ((b2 + y) * (1.0 + 0.5 * (b2 / y).ln_1p())).sqrt())
        })
        .collect();
    let rows = tail_rows(&ratios, t_grid, |t| (-t * t / 2.0).exp());
    Ok(TailReport {
        test: TailTest::LogCorrected,
        parameter: y,
        n_samples,
        verdict: Verdict::combine(rows.iter().map(|r| r.verdict)),
        rows,
    })
}

/// Non-negative random variable for the subgaussian claim.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "USamplerRecord", into = "USamplerRecord")]
pub enum USampler {
    Zero,
    /// `|σ g|`
    AbsGaussian {
        sigma: f64,
    },
    /// `E exp(α U²)` is infinite for every `α > 0`; a divergence control.
    Exponential {
        rate: f64,
    },
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum USamplerRecord {
    Zero {},
    AbsGaussian { sigma: f64 },
    Exponential { rate: f64 },
}

impl From<USamplerRecord> for USampler {
    fn from(r: USamplerRecord) -> Self {
        match r {
            USamplerRecord::Zero {} => USampler::Zero,
            USamplerRecord::AbsGaussian { sigma } => USampler::AbsGaussian { sigma },
            USamplerRecord::Exponential { rate } => USampler::Exponential { rate },
        }
    }
}

impl From<USampler> for USamplerRecord {
    fn from(u: USampler) -> Self {
        match u {
            USampler::Zero => USamplerRecord::Zero {},
            USampler::AbsGaussian { sigma } => USamplerRecord::AbsGaussian { sigma },
            USampler::Exponential { rate } => USamplerRecord::Exponential { rate },
        }
    }
}

impl USampler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            USampler::Zero => Ok(()),
            USampler::AbsGaussian { sigma } => nonneg("sigma", sigma),
            USampler::Exponential { rate } => positive("rate", rate),
        }
    }

    fn draw(&self, key: StreamKey) -> f64 {
        use rand::Rng;
        match *self {
            USampler::Zero => 0.0,
            USampler::AbsGaussian { sigma } => {
                let g: f64 = key.rng().sample(rand_distr::StandardNormal);
                (sigma * g).abs()
            }
            USampler::Exponential { rate } => {
                let u = 1.0 - key.rng().random::<f64>();
                -u.ln() / rate
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimRow {
    pub x: f64,
    /// `E[exp(x U)]`
    pub lhs: EstimateWithError,
    /// `Ĉ(α) exp(x² / 4α)`
    pub rhs: f64,
    /// 3 stderr of the paired difference `lhs - rhs`.
    pub margin: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub alpha: f64,
    /// `Ĉ(α) = E[exp(α U²)]`
    pub c_alpha: EstimateWithError,
    pub n_samples: u64,
    pub rows: Vec<ClaimRow>,
    pub verdict: Verdict,
}

pub fn check_subgaussian_claim(
    sampler: &USampler,
    alpha: f64,
    x_grid: &[f64],
    n_samples: u64,
    key: StreamKey,
) -> Result<ClaimReport> {
    sampler.validate()?;
    positive("alpha", alpha)?;
    check_samples(n_samples, 2)?;
    check_grid("x_grid", x_grid)?;
    if let Some(x) = x_grid.iter().find(|&&x| x < 0.0) {
        return Err(Error::invalid("x_grid", format!("x must be >= 0, got {x}")));
    }
    let us: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| sampler.draw(key.child(i)))
        .collect();
    let c_alpha = us
        .iter()
        .map(|u| (alpha * u * u).exp())
        .collect::<RunningStats>()
        .estimate();
    let diverging = !c_alpha.value.is_finite()
        || !c_alpha.stderr.is_finite()
        || c_alpha.relative_stderr() > 0.5;

    let rows: Vec<ClaimRow> = x_grid
        .iter()
        .map(|&x| {
            let factor = (x * x / (4.0 * alpha)).exp();
            let lhs = us
                .iter()
                .map(|u| (x * u).exp())
                .collect::<RunningStats>()
                .estimate();
            let diff = us
                .iter()
                .map(|u| (x * u).exp() - factor * (alpha * u * u).exp())
                .collect::<RunningStats>()
                .estimate();
            let rhs = c_alpha.value * factor;
            let margin = MARGIN_STDERRS * diff.stderr;
            let verdict = if diverging || !rhs.is_finite() || !lhs.value.is_finite() {
                Verdict::Inconclusive
            } else if lhs.value <= rhs + margin {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            ClaimRow {
                x,
                lhs,
                rhs,
                margin,
                verdict,
            }
        })
        .collect();
    let verdict = if diverging {
        Verdict::Inconclusive
    } else {
        Verdict::combine(rows.iter().map(|r| r.verdict))
    };
    Ok(ClaimReport {
        alpha,
        c_alpha,
        n_samples,
        rows,
        verdict,
    })
}
