//! Per-coordinate laws and independent product sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedSpec, StreamKey};

/// Law of a single real coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoordinateDistribution {
    Normal {
        mu: f64,
        sigma: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Exponential {
        rate: f64,
    },
    /// `scale` with probability `p`, otherwise 0.
    ScaledBernoulli {
        p: f64,
        scale: f64,
    },
    /// Pareto type I: support `[scale, ∞)`, tail index `shape`.
    Pareto {
        shape: f64,
        scale: f64,
    },
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    finite(field, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be > 0, got {v}")))
    }
}

impl CoordinateDistribution {
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        let d = CoordinateDistribution::Normal { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = CoordinateDistribution::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        let d = CoordinateDistribution::Exponential { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn scaled_bernoulli(p: f64, scale: f64) -> Result<Self> {
        let d = CoordinateDistribution::ScaledBernoulli { p, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn pareto(shape: f64, scale: f64) -> Result<Self> {
        let d = CoordinateDistribution::Pareto { shape, scale };
        d.validate()?;
        Ok(d)
    }

    /// Checks the parameter domain. Deserialized values must pass through here
    /// before use.
    pub fn validate(&self) -> Result<()> {
        match *self {
            CoordinateDistribution::Normal { mu, sigma } => {
                finite("mu", mu)?;
                positive("sigma", sigma)
            }
            CoordinateDistribution::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if lo < hi {
                    Ok(())
                } else {
                    Err(Error::invalid(
                        "hi",
                        format!("need lo < hi, got [{lo}, {hi}]"),
                    ))
                }
            }
            CoordinateDistribution::Exponential { rate } => positive("rate", rate),
            CoordinateDistribution::ScaledBernoulli { p, scale } => {
                finite("scale", scale)?;
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(Error::invalid("p", format!("must lie in [0, 1], got {p}")))
                }
            }
            CoordinateDistribution::Pareto { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
        }
    }

    /// Exact mean; `+∞` for Pareto with `shape <= 1`.
    pub fn mean(&self) -> f64 {
        match *self {
            CoordinateDistribution::Normal { mu, .. } => mu,
            CoordinateDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            CoordinateDistribution::Exponential { rate } => 1.0 / rate,
            CoordinateDistribution::ScaledBernoulli { p, scale } => p * scale,
            CoordinateDistribution::Pareto { shape, scale } => {
                if shape <= 1.0 {
                    f64::INFINITY
                } else {
                    shape * scale / (shape - 1.0)
                }
            }
        }
    }

    /// Exact variance; `+∞` for Pareto with `shape <= 2`.
    pub fn variance(&self) -> f64 {
        match *self {
            CoordinateDistribution::Normal { sigma, .. } => sigma * sigma,
            CoordinateDistribution::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            CoordinateDistribution::Exponential { rate } => 1.0 / (rate * rate),
            CoordinateDistribution::ScaledBernoulli { p, scale } => p * (1.0 - p) * scale * scale,
            CoordinateDistribution::Pareto { shape, scale } => {
                if shape <= 2.0 {
                    f64::INFINITY
                } else {
                    scale * scale * shape / ((shape - 1.0) * (shape - 1.0) * (shape - 2.0))
                }
            }
        }
    }

    /// Closed support interval for bounded families.
    pub fn bounded_support(&self) -> Option<(f64, f64)> {
        match *self {
            CoordinateDistribution::Uniform { lo, hi } => Some((lo, hi)),
            CoordinateDistribution::ScaledBernoulli { scale, .. } => {
                Some((scale.min(0.0), scale.max(0.0)))
            }
            _ => None,
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CoordinateDistribution::Normal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            }
            CoordinateDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            CoordinateDistribution::Exponential { rate } => {
                // 1 - U lies in (0, 1], so the log is finite.
                let u = 1.0 - rng.random::<f64>();
                -u.ln() / rate
            }
            CoordinateDistribution::ScaledBernoulli { p, scale } => {
                if rng.random::<f64>() < p {
                    scale
                } else {
                    0.0
                }
            }
            CoordinateDistribution::Pareto { shape, scale } => {
                let u = 1.0 - rng.random::<f64>();
                scale * u.powf(-1.0 / shape)
            }
        }
    }
}

/// Draws one value from `dist` using the stream for `seed`.
pub fn sample_coordinate(dist: &CoordinateDistribution, seed: &SeedSpec) -> f64 {
    dist.sample(&mut seed.key().rng())
}

/// An ordered list of independent coordinate laws, `n >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProductDistribution {
    coordinates: Vec<CoordinateDistribution>,
}

impl ProductDistribution {
    pub fn new(coordinates: Vec<CoordinateDistribution>) -> Result<Self> {
        if coordinates.is_empty() {
            return Err(Error::invalid(
                "distribution",
                "needs at least one coordinate",
            ));
        }
        for (i, c) in coordinates.iter().enumerate() {
            c.validate().map_err(|e| match e {
                Error::InvalidParameter { field, reason } => {
                    Error::invalid(format!("distribution[{i}].{field}"), reason)
                }
                other => other,
            })?;
        }
        Ok(ProductDistribution { coordinates })
    }

    pub fn iid(dist: CoordinateDistribution, n: usize) -> Result<Self> {
        Self::new(vec![dist; n])
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    pub fn coordinates(&self) -> &[CoordinateDistribution] {
        &self.coordinates
    }

    pub fn coordinate(&self, k: usize) -> &CoordinateDistribution {
        &self.coordinates[k]
    }

    pub fn has_infinite_variance(&self) -> bool {
        self.coordinates.iter().any(|c| c.variance().is_infinite())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProductRepr {
    List(Vec<CoordinateDistribution>),
    Iid(IidRepr),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IidRepr {
    iid: CoordinateDistribution,
    n: usize,
}

impl<'de> Deserialize<'de> for ProductDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let coordinates = match ProductRepr::deserialize(d)? {
            ProductRepr::List(v) => v,
            ProductRepr::Iid(IidRepr { iid, n }) => vec![iid; n],
        };
        ProductDistribution::new(coordinates).map_err(serde::de::Error::custom)
    }
}

/// A realized sample `(z_1, ..., z_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sample {
    pub values: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Self {
        Sample { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Draws coordinate `i` from the stream `key.child(i)`, so a single
/// coordinate can be redrawn without touching the others.
pub fn sample_product_keyed(pd: &ProductDistribution, key: StreamKey) -> Sample {
    let values = pd
        .coordinates
        .iter()
        .enumerate()
        .map(|(i, c)| c.sample(&mut key.child(i as u64).rng()))
        .collect();
    Sample { values }
}

pub fn sample_product(pd: &ProductDistribution, seed: &SeedSpec) -> Sample {
    sample_product_keyed(pd, seed.key())
}
