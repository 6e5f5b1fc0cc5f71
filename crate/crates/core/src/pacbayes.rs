//! Finite hypothesis classes: priors, Gibbs posteriors, exact KL, posterior
//! averages, the posterior-averaged confidence radii and the two
//! exponential-moment inequalities behind them.
//!
//! `E[V_S(θ)]` in the scale-free radius is the total expectation over
//! `S ~ P_n` and `θ ~ Q_S`, a single constant. It depends on the posterior
//! kernel and is estimated once per setup unless the posterior is data-free.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{at_least_one, nonneg, positive, BoundId, BoundResult};
use crate::distributions::{sample_product_keyed, ProductDistribution};
use crate::error::{Error, Result};
use crate::estimate::{EstimateWithError, RunningStats};
use crate::estimators::{mean_variance, variance_breakdown, VarianceMethod};
use crate::rng::{purpose, StreamKey};
use crate::statistics::{closed_form_mean, monte_carlo_mean, ExpectationMethod, Statistic};
use crate::verdict::{Verdict, MARGIN_STDERRS};

const NORMALIZATION_TOL: f64 = 1e-12;

fn check_distribution(field: &str, w: &[f64]) -> Result<()> {
    if let Some(v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(
            field,
            format!("weights must be finite and >= 0, got {v}"),
        ));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::invalid(
            field,
            format!("weights sum to {total}, not 1"),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteHypothesisClass {
    hypotheses: Vec<Statistic>,
    prior: Vec<f64>,
}

impl FiniteHypothesisClass {
    pub fn new(hypotheses: Vec<Statistic>, prior: Vec<f64>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::invalid("hypotheses", "need at least one hypothesis"));
        }
        if prior.len() != hypotheses.len() {
            return Err(Error::Arity {
                expected: hypotheses.len(),
                got: prior.len(),
            });
        }
        check_distribution("prior", &prior)?;
        if let Some(i) = prior.iter().position(|&p| p <= 0.0) {
            return Err(Error::invalid(
                "prior",
                format!("entry {i} is zero; the prior needs full support"),
            ));
        }
        for h in &hypotheses {
            h.validate()?;
        }
        Ok(FiniteHypothesisClass { hypotheses, prior })
    }

    pub fn uniform(hypotheses: Vec<Statistic>) -> Result<Self> {
        let m = hypotheses.len().max(1);
        Self::new(hypotheses, vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn hypotheses(&self) -> &[Statistic] {
        &self.hypotheses
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn check_arity(&self, n: usize) -> Result<()> {
        self.hypotheses.iter().try_for_each(|h| h.check_arity(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDistribution {
    pub weights: Vec<f64>,
}

impl PosteriorDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_distribution("posterior", &weights)?;
        Ok(PosteriorDistribution { weights })
    }
}

/// Weights `∝ q0(θ) exp(-β score(θ))`, computed in log space with a max shift.
pub fn gibbs_posterior(
    class: &FiniteHypothesisClass,
    scores: &[f64],
    beta: f64,
) -> Result<PosteriorDistribution> {
    if scores.len() != class.len() {
        return Err(Error::Arity {
            expected: class.len(),
            got: scores.len(),
        });
    }
    nonneg("beta", beta)?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid("scores", format!("must be finite, got {s}")));
    }
    if beta == 0.0 {
        return Ok(PosteriorDistribution {
            weights: class.prior.clone(),
        });
    }
    let logw: Vec<f64> = class
        .prior
        .iter()
        .zip(scores)
        .map(|(q, s)| q.ln() - beta * s)
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let weights: Vec<f64> = unnorm.iter().map(|w| w / total).collect();
    if let Some(i) = weights.iter().position(|&w| w == 0.0 || !w.is_finite()) {
        return Err(Error::DegeneratePosterior(format!(
            "weight of hypothesis {i} underflowed (beta = {beta})"
        )));
    }
    Ok(PosteriorDistribution { weights })
}

/// `KL(q || q0) = Σ q ln(q/q0)` with `0 ln 0 = 0`.
pub fn kl_divergence(q: &PosteriorDistribution, q0: &[f64]) -> Result<f64> {
    if q.weights.len() != q0.len() {
        return Err(Error::Arity {
            expected: q0.len(),
            got: q.weights.len(),
        });
    }
    let mut kl = 0.0;
    for (i, (&qi, &pi)) in q.weights.iter().zip(q0).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(Error::AbsoluteContinuity(i));
        }
        kl += qi * (qi / pi).ln();
    }
    if (-NORMALIZATION_TOL..0.0).contains(&kl) {
        kl = 0.0;
    }
    Ok(kl)
}

pub fn posterior_average(q: &PosteriorDistribution, values: &[f64]) -> Result<f64> {
    if q.weights.len() != values.len() {
        return Err(Error::Arity {
            expected: q.weights.len(),
            got: values.len(),
        });
    }
    Ok(q.weights.iter().zip(values).map(|(w, v)| w * v).sum())
}

/// `sqrt(2 (E V + Q_S V)(KL + 2x))`, failure probability `2 e^{-x}`.
pub fn pb_bound_scale_free(qv: f64, ev: f64, kl: f64, x: f64) -> Result<BoundResult> {
    nonneg("qv", qv)?;
    nonneg("ev", ev)?;
    nonneg("kl", kl)?;
    positive("x", x)?;
    Ok(BoundResult::new(
        BoundId::PbScaleFree,
        (2.0 * (ev + qv) * (kl + 2.0 * x)).sqrt(),
        2.0 * (-x).exp(),
    ))
}

/// `sqrt(2 (Q_S V + y)(KL + x + (x/2) log(1 + Q_S V / y)))`, failure probability `e^{-x}`.
pub fn pb_bound_logarithmic(qv: f64, kl: f64, y: f64, x: f64) -> Result<BoundResult> {
    nonneg("qv", qv)?;
    nonneg("kl", kl)?;
    positive("y", y)?;
    at_least_one(x)?;
    let radius = (2.0 * (qv + y) * (kl + x + 0.5 * x * (qv / y).ln_1p())).sqrt();
    Ok(BoundResult::new(BoundId::PbLogarithmic, radius, (-x).exp()))
}

/// What the Gibbs posterior penalizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    /// `f_θ(S)`
    Value,
    /// `Δ_S(θ)`
    Gap,
    /// `-|Δ_S(θ)|`: favours the hypotheses that deviate most.
    #[default]
    NegAbsGap,
}

impl ScoreRule {
    fn score(self, value: f64, gap: f64) -> f64 {
        match self {
            ScoreRule::Value => value,
            ScoreRule::Gap => gap,
            ScoreRule::NegAbsGap => -gap.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerThetaQuantities {
    pub values: Vec<f64>,
    pub gaps: Vec<f64>,
    pub variances: Vec<f64>,
    pub variance_stderrs: Vec<f64>,
    pub mean_variances: Vec<f64>,
}

/// Everything about a hypothesis class that is computed once, before trials.
#[derive(Clone, Debug)]
pub struct PacBayesSetup {
    pub class: FiniteHypothesisClass,
    pub pd: ProductDistribution,
    pub beta: f64,
    pub score: ScoreRule,
    pub method: VarianceMethod,
    /// `E f_θ(S)` per hypothesis.
    pub means: Vec<EstimateWithError>,
    /// `E V_S(θ)` per hypothesis.
    pub mean_variances: Vec<EstimateWithError>,
    /// `E[V_S(θ)]` with `θ ~ Q_S`, `S ~ P_n`.
    pub total_mean_variance: EstimateWithError,
}

/// Per-trial posterior summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrial {
    pub q_gap: f64,
    pub q_var: f64,
    /// Upper bound on the stderr of `q_var` (posterior average of per-θ stderrs).
    pub q_var_stderr: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct SetupOptions {
    pub expectation: ExpectationMethod,
    /// Outer samples for per-θ `E V` when it has no closed form.
    pub mean_variance_outer: u64,
    /// Samples for the total expectation when the posterior is data dependent.
    pub total_mean_samples: u64,
}

impl PacBayesSetup {
    pub fn new(
        class: FiniteHypothesisClass,
        pd: ProductDistribution,
        beta: f64,
        score: ScoreRule,
        method: VarianceMethod,
        options: &SetupOptions,
        key: StreamKey,
    ) -> Result<Self> {
        class.check_arity(pd.len())?;
        nonneg("beta", beta)?;
        let means = class
            .hypotheses()
            .iter()
            .enumerate()
            .map(|(t, h)| match options.expectation {
                ExpectationMethod::ClosedForm => {
                    closed_form_mean(h, &pd).map(EstimateWithError::exact)
                }
                ExpectationMethod::MonteCarlo { replicates } => {
                    monte_carlo_mean(h, &pd, replicates, key.child(purpose::MEAN).child(t as u64))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_variances = class
            .hypotheses()
            .iter()
            .enumerate()
            .map(|(t, h)| {
                mean_variance(
                    h,
                    &pd,
                    &method,
                    options.mean_variance_outer,
                    key.child(purpose::MEAN_V).child(t as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut setup = PacBayesSetup {
            class,
            pd,
            beta,
            score,
            method,
            means,
            mean_variances,
            total_mean_variance: EstimateWithError::exact(0.0),
        };
        setup.total_mean_variance = if beta == 0.0 || setup.class.len() == 1 {
            // Data-free posterior: the total expectation is the prior average.
            let mut value = 0.0;
            let mut var = 0.0;
            for (q, e) in setup.class.prior().iter().zip(&setup.mean_variances) {
                value += q * e.value;
                var += (q * e.stderr) * (q * e.stderr);
            }
            EstimateWithError {
                value,
                stderr: var.sqrt(),
                replicates: setup
                    .mean_variances
                    .iter()
                    .map(|e| e.replicates)
                    .max()
                    .unwrap_or(0),
            }
        } else {
            if options.total_mean_samples < 2 {
                return Err(Error::invalid("ev_samples", "must be >= 2"));
            }
            let trials = setup.trials(
                options.total_mean_samples,
                key.child(purpose::MEAN_V).child(u64::MAX),
            )?;
            trials
                .iter()
                .map(|t| t.q_var)
                .collect::<RunningStats>()
                .estimate()
        };
        Ok(setup)
    }

    pub fn per_theta(&self, s: &[f64], key: StreamKey) -> Result<PerThetaQuantities> {
        let m = self.class.len();
        let mut out = PerThetaQuantities {
            values: Vec::with_capacity(m),
            gaps: Vec::with_capacity(m),
            variances: Vec::with_capacity(m),
            variance_stderrs: Vec::with_capacity(m),
            mean_variances: self.mean_variances.iter().map(|e| e.value).collect(),
        };
        // Same inner key for every θ: common random numbers across the class.
        let inner = key.child(purpose::INNER);
        for (h, mean) in self.class.hypotheses().iter().zip(&self.means) {
            let value = h.evaluate(s)?;
            let v = variance_breakdown(h, &self.pd, s, &self.method, inner)?;
            out.values.push(value);
            out.gaps.push(value - mean.value);
            out.variances.push(v.total.value);
            out.variance_stderrs.push(v.total.stderr);
        }
        Ok(out)
    }

    /// Draws `S` under `key` and summarizes the resulting posterior.
    pub fn trial(&self, key: StreamKey) -> Result<(PosteriorTrial, PosteriorDistribution)> {
        let s = sample_product_keyed(&self.pd, key.child(purpose::SAMPLE));
        let q = self.per_theta(&s.values, key)?;
        let scores: Vec<f64> = q
            .values
            .iter()
            .zip(&q.gaps)
            .map(|(&v, &g)| self.score.score(v, g))
            .collect();
        let posterior = gibbs_posterior(&self.class, &scores, self.beta)?;
        let kl = kl_divergence(&posterior, self.class.prior())?;
        let trial = PosteriorTrial {
            q_gap: posterior_average(&posterior, &q.gaps)?,
            q_var: posterior_average(&posterior, &q.variances)?,
            q_var_stderr: posterior_average(&posterior, &q.variance_stderrs)?,
            kl,
        };
        Ok((trial, posterior))
    }

    /// `n` independent trials, trial `i` under `key.child(i)`, in index order.
    pub fn trials(&self, n: u64, key: StreamKey) -> Result<Vec<PosteriorTrial>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                self.trial(key.child(i))
                    .map(|(t, _)| t)
                    .map_err(|e| Error::Trial {
                        index: i,
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentPart {
    /// `E exp{x sqrt((Q[Δ]²/(E V + Q V) - 2 KL)_+)} <= 2 e^{x²}`
    MixtureTail,
    /// `E[(y/sqrt(y² + Q V)) exp{Q[Δ]²/(2(y² + Q V)) - KL}] <= 1`
    GaussianMixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub part: MomentPart,
    /// `x` for the mixture-tail part, `y` for the Gaussian-mixture part.
    pub parameter: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
    pub heavy_tail: bool,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n_samples: u64,
    pub total_mean_variance: f64,
    pub rows: Vec<MomentRow>,
    pub verdict: Verdict,
}

fn expectation_row(
    part: MomentPart,
    parameter: f64,
    values: impl Iterator<Item = f64>,
    bound: f64,
) -> MomentRow {
    let e = values.collect::<RunningStats>().estimate();
    let heavy_tail = e.relative_stderr() > 0.2;
    let verdict = if !e.value.is_finite() || !e.stderr.is_finite() || heavy_tail {
        Verdict::Inconclusive
    } else if e.value <= bound + MARGIN_STDERRS * e.stderr {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    MomentRow {
        part,
        parameter,
        estimate: e.value,
        stderr: e.stderr,
        bound,
        heavy_tail,
        verdict,
    }
}

fn mixture_tail_row(trials: &[PosteriorTrial], ev: f64, x: f64) -> MomentRow {
    let values = trials.iter().map(|t| {
        let denom = ev + t.q_var;
        let ratio = if t.q_gap == 0.0 {
            0.0
        } else {
            t.q_gap * t.q_gap / denom
        };
        (x * (ratio - 2.0 * t.kl).max(0.0).sqrt()).exp()
    });
    expectation_row(MomentPart::MixtureTail, x, values, 2.0 * (x * x).exp())
}

fn gaussian_mixture_row(trials: &[PosteriorTrial], y: f64) -> MomentRow {
    let y2 = y * y;
    let values = trials.iter().map(|t| {
        let s = y2 + t.q_var;
        y / s.sqrt() * (t.q_gap * t.q_gap / (2.0 * s) - t.kl).exp()
    });
    expectation_row(MomentPart::GaussianMixture, y, values, 1.0)
}

/// Both expectation checks over one set of trials.
pub fn moment_report(
    trials: &[PosteriorTrial],
    ev: f64,
    x_grid: &[f64],
    y_grid: &[f64],
) -> Result<MomentReport> {
    for &x in x_grid {
        nonneg("x", x)?;
    }
    for &y in y_grid {
        positive("y", y)?;
    }
    let rows: Vec<MomentRow> = x_grid
        .iter()
        .map(|&x| mixture_tail_row(trials, ev, x))
        .chain(y_grid.iter().map(|&y| gaussian_mixture_row(trials, y)))
        .collect();
    Ok(MomentReport {
        n_samples: trials.len() as u64,
        total_mean_variance: ev,
        verdict: Verdict::combine(rows.iter().map(|r| r.verdict)),
        rows,
    })
}

pub fn check_mixture_tail(
    setup: &PacBayesSetup,
    x_grid: &[f64],
    n_samples: u64,
    key: StreamKey,
) -> Result<MomentReport> {
    let trials = setup.trials(n_samples, key)?;
    moment_report(&trials, setup.total_mean_variance.value, x_grid, &[])
}

/// Uses `y²` inside the expectation, as in the mixture identity.
pub fn check_gaussian_mixture(
    setup: &PacBayesSetup,
    y: f64,
    n_samples: u64,
    key: StreamKey,
) -> Result<MomentReport> {
    let trials = setup.trials(n_samples, key)?;
    moment_report(&trials, setup.total_mean_variance.value, &[], &[y])
}
