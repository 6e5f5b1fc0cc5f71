//! Scenario records: everything a run needs, with defaults that are filled
//! in by [`Scenario::resolve`] so the resolved record reproduces the run.

use serde::{Deserialize, Deserializer, Serialize};

use crate::bounds::{inverse_square_y, BoundId};
use crate::canonical::{USampler, DEFAULT_LAMBDA_GRID};
use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use crate::estimators::{NestedMcConfig, VarianceMethod};
use crate::pacbayes::ScoreRule;
use crate::statistics::{ExpectationMethod, Statistic};

/// Replicates used for `E f(S)` when the statistic has no closed-form mean.
pub const DEFAULT_MEAN_REPLICATES: u64 = 200_000;

fn default_trials() -> u64 {
    10_000
}
fn default_outer() -> u64 {
    2000
}
fn default_samples() -> u64 {
    100_000
}
fn default_beta() -> f64 {
    1.0
}
fn default_ev_samples() -> u64 {
    10_000
}
fn default_one() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.25
}
fn default_lambda_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}
fn default_t_grid_i() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}
fn default_t_grid_ii() -> Vec<f64> {
    vec![std::f64::consts::SQRT_2, 2.0]
}
fn default_claim_x_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0]
}
fn default_moment_x_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}
fn default_moment_y_grid() -> Vec<f64> {
    vec![0.1, 1.0]
}

/// Accepts a single value or a list.
fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

fn opt_one_or_many<'de, D, T>(d: D) -> std::result::Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    one_or_many(d).map(Some)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    ExactClosedForm,
    NestedMc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YRule {
    /// `y = 1/n²`
    InvNSquared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum YValue {
    Value(f64),
    Rule(YRule),
}

impl YValue {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            YValue::Value(y) => y,
            YValue::Rule(YRule::InvNSquared) => inverse_square_y(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub kind: BoundId,
    #[serde(deserialize_with = "one_or_many")]
    pub x: Vec<f64>,
    #[serde(
        default,
        deserialize_with = "opt_one_or_many",
        skip_serializing_if = "Option::is_none"
    )]
    pub y: Option<Vec<YValue>>,
}

impl BoundSpec {
    fn needs_y(&self) -> bool {
        matches!(self.kind, BoundId::Logarithmic | BoundId::PbLogarithmic)
    }

    fn validate(&self, path: &str, n: usize) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::invalid(
                format!("{path}.x"),
                "at least one value required",
            ));
        }
        for &x in &self.x {
            if !x.is_finite() || x <= 0.0 {
                return Err(Error::invalid(
                    format!("{path}.x"),
                    format!("must be > 0, got {x}"),
                ));
            }
            if self.needs_y() && x < 1.0 {
                return Err(Error::invalid(
                    format!("{path}.x"),
                    format!(
                        "x >= 1 required for the {} bound, got {x}",
                        self.kind.as_str()
                    ),
                ));
            }
        }
        match (&self.y, self.needs_y()) {
            (None, true) => Err(Error::invalid(
                format!("{path}.y"),
                "required for this bound",
            )),
            (Some(_), false) => Err(Error::invalid(
                format!("{path}.y"),
                "not used by this bound",
            )),
            (Some(ys), true) => {
                if ys.is_empty() {
                    return Err(Error::invalid(
                        format!("{path}.y"),
                        "at least one value required",
                    ));
                }
                for y in ys {
                    let v = y.resolve(n);
                    if !v.is_finite() || v <= 0.0 {
                        return Err(Error::invalid(
                            format!("{path}.y"),
                            format!("must be > 0, got {v}"),
                        ));
                    }
                }
                Ok(())
            }
            (None, false) => Ok(()),
        }
    }

    /// The `(x, y)` cells this entry expands to, x-major.
    pub fn cells(&self, n: usize) -> Vec<(f64, Option<f64>)> {
        match &self.y {
            None => self.x.iter().map(|&x| (x, None)).collect(),
            Some(ys) => self
                .x
                .iter()
                .flat_map(|&x| ys.iter().map(move |y| (x, Some(y.resolve(n)))))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisClassConfig {
    pub hypotheses: Vec<Statistic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub score: ScoreRule,
    /// Trials used to estimate the total expectation of the variance when
    /// the posterior depends on the data.
    #[serde(default = "default_ev_samples")]
    pub ev_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanVarianceConfig {
    #[serde(default = "default_outer")]
    pub outer: u64,
}

impl Default for MeanVarianceConfig {
    fn default() -> Self {
        MeanVarianceConfig {
            outer: default_outer(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairConfig {
    GaussianScale {
        sigma: f64,
    },
    /// `(Δ, sqrt(V))` for the scenario statistic.
    DeltaV {},
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalConfig {
    pub pair: PairConfig,
    #[serde(default = "default_one")]
    pub b_multiplier: f64,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsConfig {
    pub pair: PairConfig,
    #[serde(default = "default_one")]
    pub b_multiplier: f64,
    #[serde(default = "default_t_grid_i")]
    pub t_grid_i: Vec<f64>,
    #[serde(default = "default_t_grid_ii")]
    pub t_grid_ii: Vec<f64>,
    #[serde(default = "default_one")]
    pub y: f64,
    /// Exact `E[B]`; estimated from separate draws when absent and unknown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_b: Option<f64>,
    #[serde(default = "default_samples")]
    pub mean_b_samples: u64,
    #[serde(default = "default_samples")]
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimConfig {
    pub sampler: USampler,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_claim_x_grid")]
    pub x_grid: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentConfig {
    #[serde(default = "default_moment_x_grid")]
    pub x_grid: Vec<f64>,
    #[serde(default = "default_moment_y_grid")]
    pub y_grid: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    pub distribution: ProductDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<Statistic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_class: Option<HypothesisClassConfig>,
    /// Nested Monte Carlo settings, used wherever `V` is estimated.
    #[serde(default)]
    pub estimator: NestedMcConfig,
    /// How `V` is obtained. Defaults to the closed form when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleMode>,
    /// How `E f(S)` is obtained. Defaults to the closed form when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expectation: Option<ExpectationMethod>,
    #[serde(default)]
    pub mean_variance: MeanVarianceConfig,
    #[serde(default)]
    pub bounds: Vec<BoundSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<CanonicalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<ClaimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentConfig>,
    /// Explicit sample for single-sample estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<Vec<f64>>,
}

fn field(path: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => {
            Error::invalid(format!("{path}.{field}"), reason)
        }
        Error::Arity { expected, got } => {
            Error::invalid(path, format!("expected {expected} values, got {got}"))
        }
        other => Error::invalid(path, other.to_string()),
    }
}

fn check_grid(path: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(path, "at least one value required"));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(
            path,
            format!("values must be finite, got {v}"),
        ));
    }
    Ok(())
}

fn check_positive(path: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::invalid(path, format!("must be > 0, got {v}")));
    }
    Ok(())
}

fn check_pair(path: &str, pair: &PairConfig, b_multiplier: f64, has_statistic: bool) -> Result<()> {
    match *pair {
        PairConfig::GaussianScale { sigma } => {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::invalid(
                    format!("{path}.pair.sigma"),
                    format!("must be >= 0, got {sigma}"),
                ));
            }
        }
        PairConfig::DeltaV {} if !has_statistic => {
            return Err(Error::invalid(
                format!("{path}.pair"),
                "delta_v needs a statistic",
            ));
        }
        PairConfig::DeltaV {} => {}
    }
    check_positive(&format!("{path}.b_multiplier"), b_multiplier)
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.distribution.len()
    }

    /// Fills every defaulted choice and validates the result. Idempotent.
    pub fn resolve(mut self) -> Result<Scenario> {
        let n = self.n();
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be >= 1"));
        }
        self.estimator
            .validate()
            .map_err(|e| field("estimator", e))?;
        if self.mean_variance.outer < 2 {
            return Err(Error::invalid("mean_variance.outer", "must be >= 2"));
        }
        if let Some(stat) = &self.statistic {
            stat.validate().map_err(|e| field("statistic", e))?;
            stat.check_arity(n).map_err(|e| field("statistic", e))?;
            let exact_v =
                crate::estimators::vks_closed_form(stat, &self.distribution, &vec![0.0; n]).is_ok();
            match self.oracle {
                None => {
                    self.oracle = Some(if exact_v {
                        OracleMode::ExactClosedForm
                    } else {
                        OracleMode::NestedMc
                    })
                }
                Some(OracleMode::ExactClosedForm) if !exact_v => {
                    return Err(Error::invalid(
                        "oracle",
                        format!(
                            "no closed-form variance for {} over this distribution",
                            stat.name()
                        ),
                    ))
                }
                Some(_) => {}
            }
            let exact_mean = crate::statistics::closed_form_mean(stat, &self.distribution).is_ok();
            match self.expectation {
                None => {
                    self.expectation = Some(if exact_mean {
                        ExpectationMethod::ClosedForm
                    } else {
                        ExpectationMethod::MonteCarlo {
                            replicates: DEFAULT_MEAN_REPLICATES,
                        }
                    })
                }
                Some(ExpectationMethod::ClosedForm) if !exact_mean => {
                    return Err(Error::invalid(
                        "expectation",
                        format!(
                            "no closed-form mean for {} over this distribution",
                            stat.name()
                        ),
                    ))
                }
                Some(ExpectationMethod::MonteCarlo { replicates }) if replicates < 2 => {
                    return Err(Error::invalid("expectation.replicates", "must be >= 2"))
                }
                Some(_) => {}
            }
        }
        if let Some(class) = &mut self.hypothesis_class {
            if class.hypotheses.is_empty() {
                return Err(Error::invalid(
                    "hypothesis_class.hypotheses",
                    "need at least one hypothesis",
                ));
            }
            let mut all_exact_v = true;
            let mut all_exact_mean = true;
            for (i, h) in class.hypotheses.iter().enumerate() {
                let path = format!("hypothesis_class.hypotheses[{i}]");
                h.validate().map_err(|e| field(&path, e))?;
                h.check_arity(n).map_err(|e| field(&path, e))?;
                all_exact_v &=
                    crate::estimators::vks_closed_form(h, &self.distribution, &vec![0.0; n])
                        .is_ok();
                all_exact_mean &=
                    crate::statistics::closed_form_mean(h, &self.distribution).is_ok();
            }
            let m = class.hypotheses.len();
            let prior = class.prior.get_or_insert_with(|| vec![1.0 / m as f64; m]);
            crate::pacbayes::FiniteHypothesisClass::new(class.hypotheses.clone(), prior.clone())
                .map_err(|e| field("hypothesis_class.prior", e))?;
            if !class.beta.is_finite() || class.beta < 0.0 {
                return Err(Error::invalid(
                    "hypothesis_class.beta",
                    format!("must be >= 0, got {}", class.beta),
                ));
            }
            if class.ev_samples < 2 {
                return Err(Error::invalid(
                    "hypothesis_class.ev_samples",
                    "must be >= 2",
                ));
            }
            if self.statistic.is_none() {
                match self.oracle {
                    None => {
                        self.oracle = Some(if all_exact_v {
                            OracleMode::ExactClosedForm
                        } else {
                            OracleMode::NestedMc
                        })
                    }
                    Some(OracleMode::ExactClosedForm) if !all_exact_v => {
                        return Err(Error::invalid(
                            "oracle",
                            "some hypothesis has no closed-form variance",
                        ))
                    }
                    Some(_) => {}
                }
                match self.expectation {
                    None => {
                        self.expectation = Some(if all_exact_mean {
                            ExpectationMethod::ClosedForm
                        } else {
                            ExpectationMethod::MonteCarlo {
                                replicates: DEFAULT_MEAN_REPLICATES,
                            }
                        })
                    }
                    Some(ExpectationMethod::ClosedForm) if !all_exact_mean => {
                        return Err(Error::invalid(
                            "expectation",
                            "some hypothesis has no closed-form mean",
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        for (i, b) in self.bounds.iter().enumerate() {
            b.validate(&format!("bounds[{i}]"), n)?;
        }
        let has_stat = self.statistic.is_some();
        if let Some(c) = &self.canonical {
            check_pair("canonical", &c.pair, c.b_multiplier, has_stat)?;
            check_grid("canonical.lambda_grid", &c.lambda_grid)?;
            if c.samples < 100 {
                return Err(Error::invalid("canonical.samples", "must be >= 100"));
            }
        }
        if let Some(t) = &self.tails {
            check_pair("tails", &t.pair, t.b_multiplier, has_stat)?;
            check_grid("tails.t_grid_i", &t.t_grid_i)?;
            check_grid("tails.t_grid_ii", &t.t_grid_ii)?;
            if let Some(v) = t.t_grid_i.iter().find(|&&v| v <= 0.0) {
                return Err(Error::invalid(
                    "tails.t_grid_i",
                    format!("t must be > 0, got {v}"),
                ));
            }
            if let Some(v) = t.t_grid_ii.iter().find(|&&v| v < std::f64::consts::SQRT_2) {
                return Err(Error::invalid(
                    "tails.t_grid_ii",
                    format!("t >= sqrt(2) required, got {v}"),
                ));
            }
            check_positive("tails.y", t.y)?;
            if let Some(eb) = t.mean_b {
                if !eb.is_finite() || eb < 0.0 {
                    return Err(Error::invalid(
                        "tails.mean_b",
                        format!("must be >= 0, got {eb}"),
                    ));
                }
            }
            if t.samples == 0 {
                return Err(Error::invalid("tails.samples", "must be >= 1"));
            }
            if t.mean_b_samples < 2 {
                return Err(Error::invalid("tails.mean_b_samples", "must be >= 2"));
            }
        }
        if let Some(c) = &self.claim {
            c.sampler
                .validate()
                .map_err(|e| field("claim.sampler", e))?;
            check_positive("claim.alpha", c.alpha)?;
            check_grid("claim.x_grid", &c.x_grid)?;
            if let Some(x) = c.x_grid.iter().find(|&&x| x < 0.0) {
                return Err(Error::invalid(
                    "claim.x_grid",
                    format!("x must be >= 0, got {x}"),
                ));
            }
            if c.samples < 2 {
                return Err(Error::invalid("claim.samples", "must be >= 2"));
            }
        }
        if let Some(l) = &self.moments {
            check_grid("moments.x_grid", &l.x_grid)?;
            if let Some(x) = l.x_grid.iter().find(|&&x| x < 0.0) {
                return Err(Error::invalid(
                    "moments.x_grid",
                    format!("x must be >= 0, got {x}"),
                ));
            }
            check_grid("moments.y_grid", &l.y_grid)?;
            for &y in &l.y_grid {
                check_positive("moments.y_grid", y)?;
            }
            if l.samples < 2 {
                return Err(Error::invalid("moments.samples", "must be >= 2"));
            }
        }
        if let Some(s) = &self.sample {
            if s.len() != n {
                return Err(Error::invalid(
                    "sample",
                    format!("expected {n} values, got {}", s.len()),
                ));
            }
            if let Some(v) = s.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "sample",
                    format!("values must be finite, got {v}"),
                ));
            }
        }
        Ok(self)
    }

    /// The variance method selected by the oracle mode.
    pub fn variance_method(&self) -> VarianceMethod {
        match self.oracle {
            Some(OracleMode::ExactClosedForm) => VarianceMethod::ClosedForm,
            _ => VarianceMethod::NestedMc(self.estimator),
        }
    }

    pub fn expectation_method(&self) -> ExpectationMethod {
        self.expectation.unwrap_or(ExpectationMethod::MonteCarlo {
            replicates: DEFAULT_MEAN_REPLICATES,
        })
    }

    pub fn require_statistic(&self) -> Result<&Statistic> {
        self.statistic
            .as_ref()
            .ok_or_else(|| Error::invalid("statistic", "required for this run"))
    }
}
