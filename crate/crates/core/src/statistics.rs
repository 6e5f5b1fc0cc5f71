//! The closed catalog of statistics `f : R^n -> R`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_product_keyed, ProductDistribution, Sample};
use crate::error::{Error, Result};
use crate::estimate::{EstimateWithError, RunningStats};
use crate::rng::{SeedSpec, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKernel {
    /// `h(a, b) = (a - b)^2`
    SquaredDifference,
    /// `h(a, b) = a * b`
    Product,
}

impl PairKernel {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            PairKernel::SquaredDifference => (a - b) * (a - b),
            PairKernel::Product => a * b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "StatisticRecord", into = "StatisticRecord")]
pub enum Statistic {
    WeightedSum {
        weights: Vec<f64>,
    },
    Mean,
    Max,
    /// `t * log(sum_i exp(z_i / t))`
    #[serde(rename = "softmax")]
    SoftMax {
        temperature: f64,
    },
    /// Kernel averaged over the `n(n-1)` ordered pairs `i != j`.
    #[serde(rename = "pairwise_ustat")]
    PairwiseUStat {
        kernel: PairKernel,
    },
    Constant {
        value: f64,
    },
}

// Internally tagged unit variants silently accept extra keys, so the wire
// form uses empty struct variants instead.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum StatisticRecord {
    WeightedSum {
        weights: Vec<f64>,
    },
    Mean {},
    Max {},
    #[serde(rename = "softmax")]
    SoftMax {
        temperature: f64,
    },
    #[serde(rename = "pairwise_ustat")]
    PairwiseUStat {
        kernel: PairKernel,
    },
    Constant {
        value: f64,
    },
}

impl From<StatisticRecord> for Statistic {
    fn from(r: StatisticRecord) -> Self {
        match r {
            StatisticRecord::WeightedSum { weights } => Statistic::WeightedSum { weights },
            StatisticRecord::Mean {} => Statistic::Mean,
            StatisticRecord::Max {} => Statistic::Max,
            StatisticRecord::SoftMax { temperature } => Statistic::SoftMax { temperature },
            StatisticRecord::PairwiseUStat { kernel } => Statistic::PairwiseUStat { kernel },
            StatisticRecord::Constant { value } => Statistic::Constant { value },
        }
    }
}

impl From<Statistic> for StatisticRecord {
    fn from(s: Statistic) -> Self {
        match s {
            Statistic::WeightedSum { weights } => StatisticRecord::WeightedSum { weights },
            Statistic::Mean => StatisticRecord::Mean {},
            Statistic::Max => StatisticRecord::Max {},
            Statistic::SoftMax { temperature } => StatisticRecord::SoftMax { temperature },
            Statistic::PairwiseUStat { kernel } => StatisticRecord::PairwiseUStat { kernel },
            Statistic::Constant { value } => StatisticRecord::Constant { value },
        }
    }
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::WeightedSum { .. } => "weighted_sum",
            Statistic::Mean => "mean",
            Statistic::Max => "max",
            Statistic::SoftMax { .. } => "softmax",
            Statistic::PairwiseUStat { .. } => "pairwise_ustat",
            Statistic::Constant { .. } => "constant",
        }
    }

    /// Parameter checks that do not depend on `n`.
    pub fn validate(&self) -> Result<()> {
        match self {
            Statistic::WeightedSum { weights } => {
                if weights.iter().all(|w| w.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::invalid("weights", "must be finite"))
                }
            }
            Statistic::SoftMax { temperature } => {
                if temperature.is_finite() && *temperature > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(
                        "temperature",
                        format!("must be > 0, got {temperature}"),
                    ))
                }
            }
            Statistic::Constant { value } if !value.is_finite() => {
                Err(Error::invalid("value", "must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Checks that the statistic can be evaluated on `n` coordinates.
    pub fn check_arity(&self, n: usize) -> Result<()> {
        let expected = match self {
            Statistic::WeightedSum { weights } => weights.len(),
            Statistic::PairwiseUStat { .. } if n < 2 => 2,
            _ if n == 0 => 1,
            _ => n,
        };
        if expected == n {
            Ok(())
        } else {
            Err(Error::Arity { expected, got: n })
        }
    }

    pub fn evaluate(&self, values: &[f64]) -> Result<f64> {
        self.check_arity(values.len())?;
        Ok(self.evaluate_unchecked(values))
    }

    /// Evaluation without the arity check, for inner loops that have already
    /// validated dimensions.
    #[inline]
    pub(crate) fn evaluate_unchecked(&self, values: &[f64]) -> f64 {
        match self {
            Statistic::WeightedSum { weights } => {
                weights.iter().zip(values).map(|(w, z)| w * z).sum()
            }
            Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Statistic::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Statistic::SoftMax { temperature } => {
                let t = *temperature;
                let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = values.iter().map(|z| ((z - top) / t).exp()).sum();
                top + t * s.ln()
            }
            Statistic::PairwiseUStat { kernel } => {
                let n = values.len();
                let mut acc = 0.0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        acc += kernel.apply(values[i], values[j]);
                    }
                }
                // Both kernels are symmetric: the ordered-pair sum is twice this.
                2.0 * acc / (n * (n - 1)) as f64
            }
            Statistic::Constant { value } => *value,
        }
    }

    /// Effective per-coordinate weights for the separable members of the
    /// catalog (`WeightedSum`, `Mean`, `Constant` with all-zero weights).
    pub fn linear_weights(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            Statistic::WeightedSum { weights } => Some(weights.clone()),
            Statistic::Mean => Some(vec![1.0 / n as f64; n]),
            Statistic::Constant { .. } => Some(vec![0.0; n]),
            _ => None,
        }
    }

    pub fn has_closed_form_mean(&self) -> bool {
        !matches!(self, Statistic::Max | Statistic::SoftMax { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ExpectationRecord", into = "ExpectationRecord")]
pub enum ExpectationMethod {
    ClosedForm,
    MonteCarlo { replicates: u64 },
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
enum ExpectationRecord {
    ClosedForm {},
    MonteCarlo { replicates: u64 },
}

impl From<ExpectationRecord> for ExpectationMethod {
    fn from(r: ExpectationRecord) -> Self {
        match r {
            ExpectationRecord::ClosedForm {} => ExpectationMethod::ClosedForm,
            ExpectationRecord::MonteCarlo { replicates } => {
                ExpectationMethod::MonteCarlo { replicates }
            }
        }
    }
}

impl From<ExpectationMethod> for ExpectationRecord {
    fn from(m: ExpectationMethod) -> Self {
        match m {
            ExpectationMethod::ClosedForm => ExpectationRecord::ClosedForm {},
            ExpectationMethod::MonteCarlo { replicates } => {
                ExpectationRecord::MonteCarlo { replicates }
            }
        }
    }
}

fn weighted_mean_sum(weights: &[f64], pd: &ProductDistribution) -> Result<f64> {
    let mut acc = 0.0;
    for (w, c) in weights.iter().zip(pd.coordinates()) {
        if *w == 0.0 {
            continue;
        }
        let m = c.mean();
        if !m.is_finite() {
            return Err(Error::NoClosedForm(format!("infinite mean in {c:?}")));
        }
        acc += w * m;
    }
    Ok(acc)
}

/// `E[f(S)]` under the closed-form rules of the catalog.
pub fn closed_form_mean(stat: &Statistic, pd: &ProductDistribution) -> Result<f64> {
    let n = pd.len();
    stat.check_arity(n)?;
    match stat {
        Statistic::Constant { value } => Ok(*value),
        Statistic::WeightedSum { weights } => weighted_mean_sum(weights, pd),
        Statistic::Mean => weighted_mean_sum(&vec![1.0 / n as f64; n], pd),
        Statistic::PairwiseUStat { kernel } => {
            let cs = pd.coordinates();
            let mut acc = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let (mi, mj) = (cs[i].mean(), cs[j].mean());
                    let term = match kernel {
                        PairKernel::Product => mi * mj,
                        PairKernel::SquaredDifference => {
                            cs[i].variance() + cs[j].variance() + (mi - mj) * (mi - mj)
                        }
                    };
                    if !term.is_finite() {
                        return Err(Error::NoClosedForm(
                            "pairwise_ustat with infinite moments".into(),
                        ));
                    }
                    acc += term;
                }
            }
            Ok(2.0 * acc / (n * (n - 1)) as f64)
        }
        Statistic::Max | Statistic::SoftMax { .. } => Err(Error::NoClosedForm(stat.name().into())),
    }
}

/// Sample mean of `f` over independent draws `S_r` taken from `key.child(r)`.
pub fn monte_carlo_mean(
    stat: &Statistic,
    pd: &ProductDistribution,
    replicates: u64,
    key: StreamKey,
) -> Result<EstimateWithError> {
    stat.check_arity(pd.len())?;
    if replicates == 0 {
        return Err(Error::invalid("replicates", "must be >= 1"));
    }
    let values: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| stat.evaluate_unchecked(&sample_product_keyed(pd, key.child(r)).values))
        .collect();
    Ok(values.into_iter().collect::<RunningStats>().estimate())
}

pub fn expected_value(
    stat: &Statistic,
    pd: &ProductDistribution,
    method: ExpectationMethod,
    seed: &SeedSpec,
) -> Result<EstimateWithError> {
    match method {
        ExpectationMethod::ClosedForm => closed_form_mean(stat, pd).map(EstimateWithError::exact),
        ExpectationMethod::MonteCarlo { replicates } => {
            monte_carlo_mean(stat, pd, replicates, seed.key())
        }
    }
}

/// `f(s) - mean_value`.
pub fn gap(stat: &Statistic, s: &Sample, mean_value: f64) -> Result<f64> {
    Ok(stat.evaluate(&s.values)? - mean_value)
}

/// Bounded-difference constants `c_k` with `|f(s) - f(s^(k))| <= c_k` over
/// the support of `pd`.
pub fn bounded_differences(stat: &Statistic, pd: &ProductDistribution) -> Result<Vec<f64>> {
    let n = pd.len();
    stat.check_arity(n)?;
    if let Statistic::Constant { .. } = stat {
        return Ok(vec![0.0; n]);
    }
    let support = |k: usize, needed: bool| -> Result<(f64, f64)> {
        match pd.coordinate(k).bounded_support() {
            Some(s) => Ok(s),
            None if !needed => Ok((0.0, 0.0)),
            None => Err(Error::NoBoundedDifferences(format!(
                "{} over unbounded coordinate {k}",
                stat.name()
            ))),
        }
    };
    match stat {
        Statistic::WeightedSum { weights } => (0..n)
            .map(|k| {
                let (lo, hi) = support(k, weights[k] != 0.0)?;
                Ok(weights[k].abs() * (hi - lo))
            })
            .collect(),
        Statistic::Mean => (0..n)
            .map(|k| support(k, true).map(|(lo, hi)| (hi - lo) / n as f64))
            .collect(),
        Statistic::Max | Statistic::SoftMax { .. } => (0..n)
            .map(|k| support(k, true).map(|(lo, hi)| hi - lo))
            .collect(),
        Statistic::PairwiseUStat { kernel } => {
            let sup: Vec<(f64, f64)> = (0..n).map(|k| support(k, true)).collect::<Result<_>>()?;
            let norm = (n * (n - 1)) as f64;
            Ok((0..n)
                .map(|k| {
                    let (ak, bk) = sup[k];
                    let per_pair: f64 = (0..n)
                        .filter(|&j| j != k)
                        .map(|j| {
                            let (aj, bj) = sup[j];
                            match kernel {
                                PairKernel::SquaredDifference => {
                                    let d = bk.max(bj) - ak.min(aj);
                                    d * d
                                }
                                PairKernel::Product => (bk - ak) * aj.abs().max(bj.abs()),
                            }
                        })
                        .sum();
                    2.0 * per_pair / norm
                })
                .collect())
        }
        Statistic::Constant { .. } => unreachable!(),
    }
}
