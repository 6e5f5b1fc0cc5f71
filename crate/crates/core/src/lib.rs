//! Variance-aware concentration: semi-empirical and Efron–Stein variance
//! estimators for functions of independent variables, the confidence radii
//! built on them, canonical-pair checks, finite-class PAC-Bayes certificates
//! and a reproducible Monte Carlo coverage harness.

pub mod bounds;
pub mod canonical;
pub mod distributions;
pub mod error;
pub mod estimate;
pub mod estimators;
pub mod harness;
pub mod pacbayes;
pub mod rng;
pub mod scenario;
pub mod statistics;
pub mod verdict;

pub use bounds::{BoundId, BoundResult};
pub use distributions::{CoordinateDistribution, ProductDistribution, Sample};
pub use error::{Error, Result};
pub use estimate::{EstimateWithError, RunningStats};
pub use estimators::{NestedMcConfig, VarianceBreakdown, VarianceMethod};
pub use pacbayes::{FiniteHypothesisClass, PosteriorDistribution};
pub use rng::{SeedSpec, StreamKey};
pub use statistics::{ExpectationMethod, PairKernel, Statistic};
pub use verdict::Verdict;
