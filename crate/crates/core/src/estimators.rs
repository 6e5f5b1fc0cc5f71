//! Variance estimators.
//!
//! `V_k = E[(f(S) - f(S^(k)))^2 | Z_1..Z_k]` is estimated by holding the
//! realized prefix fixed and drawing, per replicate, one fresh suffix
//! `Z_{k+1..n}` and one replacement `Z'_k`. Both evaluations of a replicate
//! share that suffix; drawing it twice would estimate a different, larger
//! quantity.
//!
//! The Efron-Stein variant conditions on the whole sample and only redraws
//! `Z'_k`, keeping the positive part of the difference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_product_keyed, ProductDistribution};
use crate::error::{Error, Result};
use crate::estimate::{EstimateWithError, RunningStats};
use crate::rng::{purpose, StreamKey};
use crate::statistics::Statistic;

fn default_inner_replicates() -> u64 {
    2000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedMcConfig {
    #[serde(default = "default_inner_replicates")]
    pub inner_replicates: u64,
    /// Share replicate draws across coordinates (common random numbers).
    #[serde(default)]
    pub reuse_suffix: bool,
}

impl Default for NestedMcConfig {
    fn default() -> Self {
        NestedMcConfig {
            inner_replicates: default_inner_replicates(),
            reuse_suffix: false,
        }
    }
}

impl NestedMcConfig {
    pub fn new(inner_replicates: u64) -> Self {
        NestedMcConfig {
            inner_replicates,
            reuse_suffix: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_replicates < 2 {
            return Err(Error::invalid(
                "inner_replicates",
                format!("must be >= 2, got {}", self.inner_replicates),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceMethod {
    ClosedForm,
    NestedMc(NestedMcConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceBreakdown {
    pub per_k: Vec<EstimateWithError>,
    pub total: EstimateWithError,
    /// Set when some coordinate has infinite variance: the reported stderr
    /// is then not a reliable error bar.
    pub heavy_tail: bool,
}

impl VarianceBreakdown {
    fn from_independent(per_k: Vec<EstimateWithError>, heavy_tail: bool) -> Self {
        let mut value = 0.0;
        let mut var = 0.0;
        for e in &per_k {
            value += e.value;
            var += e.stderr * e.stderr;
        }
        let replicates = per_k.iter().map(|e| e.replicates).max().unwrap_or(0);
        VarianceBreakdown {
            total: EstimateWithError {
                value,
                stderr: var.sqrt(),
                replicates,
            },
            per_k,
            heavy_tail,
        }
    }

    fn from_shared(per_k: Vec<EstimateWithError>, totals: &RunningStats, heavy_tail: bool) -> Self {
        // Same fixed-order sum as the independent case; only the stderr differs.
        let mut b = Self::from_independent(per_k, heavy_tail);
        b.total.stderr = totals.estimate().stderr;
        b
    }
}

fn check_inputs(stat: &Statistic, pd: &ProductDistribution, s: &[f64]) -> Result<()> {
    stat.check_arity(pd.len())?;
    if s.len() != pd.len() {
        return Err(Error::Arity {
            expected: pd.len(),
            got: s.len(),
        });
    }
    Ok(())
}

/// Nested Monte Carlo estimate of the semi-empirical variance `V^KS`.
///
/// Replicate `r` of coordinate `k` draws from `key.child(k).child(r)`, or from
/// `key.child(REUSE).child(r)` when `reuse_suffix` is set.
pub fn estimate_vks(
    stat: &Statistic,
    pd: &ProductDistribution,
    s: &[f64],
    cfg: &NestedMcConfig,
    key: StreamKey,
) -> Result<VarianceBreakdown> {
    check_inputs(stat, pd, s)?;
    cfg.validate()?;
    let n = pd.len();
    let m = cfg.inner_replicates;
    let heavy_tail = pd.has_infinite_variance();

    if cfg.reuse_suffix {
        return Ok(vks_shared(
            stat,
            pd,
            s,
            m,
            key.child(purpose::REUSE),
            heavy_tail,
        ));
    }

    let per_k: Vec<EstimateWithError> = (0..n)
        .into_par_iter()
        .map(|k| {
            let kkey = key.child(k as u64);
            let replaced = pd.coordinate(k);
            let suffix = &pd.coordinates()[k + 1..];
            let mut kept = s.to_vec();
            let mut swapped = s.to_vec();
            let mut acc = RunningStats::new();
            for r in 0..m {
                let mut rng = kkey.child(r).rng();
                swapped[k] = replaced.sample(&mut rng);
                for (j, c) in suffix.iter().enumerate() {
                    let z = c.sample(&mut rng);
                    kept[k + 1 + j] = z;
                    swapped[k + 1 + j] = z;
                }
                let d = stat.evaluate_unchecked(&kept) - stat.evaluate_unchecked(&swapped);
                acc.push(d * d);
            }
            acc.estimate()
        })
        .collect();
    Ok(VarianceBreakdown::from_independent(per_k, heavy_tail))
}

fn vks_shared(
    stat: &Statistic,
    pd: &ProductDistribution,
    s: &[f64],
    m: u64,
    key: StreamKey,
    heavy_tail: bool,
) -> VarianceBreakdown {
    let n = pd.len();
    let mut per_k = vec![RunningStats::new(); n];
    let mut totals = RunningStats::new();
    let mut fresh = vec![0.0; n];
    let mut replacement = vec![0.0; n];
    let mut kept = vec![0.0; n];
    let mut swapped = vec![0.0; n];
    for r in 0..m {
        let mut rng = key.child(r).rng();
        for (z, c) in fresh.iter_mut().zip(pd.coordinates()) {
            *z = c.sample(&mut rng);
        }
        for (z, c) in replacement.iter_mut().zip(pd.coordinates()) {
            *z = c.sample(&mut rng);
        }
        let mut total = 0.0;
        for k in 0..n {
            kept[..=k].copy_from_slice(&s[..=k]);
            kept[k + 1..].copy_from_slice(&fresh[k + 1..]);
            swapped.copy_from_slice(&kept);
            swapped[k] = replacement[k];
            let d = stat.evaluate_unchecked(&kept) - stat.evaluate_unchecked(&swapped);
            per_k[k].push(d * d);
            total += d * d;
        }
        totals.push(total);
    }
    VarianceBreakdown::from_shared(
        per_k.iter().map(RunningStats::estimate).collect(),
        &totals,
        heavy_tail,
    )
}

/// Replace-one Monte Carlo estimate of the Efron-Stein variance proxy.
pub fn estimate_ves(
    stat: &Statistic,
    pd: &ProductDistribution,
    s: &[f64],
    cfg: &NestedMcConfig,
    key: StreamKey,
) -> Result<VarianceBreakdown> {
    check_inputs(stat, pd, s)?;
    cfg.validate()?;
    let n = pd.len();
    let m = cfg.inner_replicates;
    let heavy_tail = pd.has_infinite_variance();
    let f_s = stat.evaluate_unchecked(s);
    let shared = key.child(purpose::REUSE);

    let per_k: Vec<(EstimateWithError, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let kkey = key.child(k as u64);
            let mut swapped = s.to_vec();
            let mut acc = RunningStats::new();
            let mut draws = Vec::new();
            for r in 0..m {
                swapped[k] = if cfg.reuse_suffix {
                    // Coordinates 0..=k drawn in order, so draw k is common to every k' >= k.
                    let mut rng = shared.child(r).rng();
                    let mut z = 0.0;
                    for c in &pd.coordinates()[..=k] {
                        z = c.sample(&mut rng);
                    }
                    z
                } else {
                    pd.coordinate(k).sample(&mut kkey.child(r).rng())
                };
                let d = (f_s - stat.evaluate_unchecked(&swapped)).max(0.0);
                acc.push(d * d);
                if cfg.reuse_suffix {
                    draws.push(d * d);
                }
            }
            (acc.estimate(), draws)
        })
        .collect();

    if cfg.reuse_suffix {
        let mut totals = RunningStats::new();
        for r in 0..m as usize {
            totals.push(per_k.iter().map(|(_, d)| d[r]).sum());
        }
        let est = per_k.into_iter().map(|(e, _)| e).collect();
        Ok(VarianceBreakdown::from_shared(est, &totals, heavy_tail))
    } else {
        let est = per_k.into_iter().map(|(e, _)| e).collect();
        Ok(VarianceBreakdown::from_independent(est, heavy_tail))
    }
}

fn separable_weights(stat: &Statistic, pd: &ProductDistribution) -> Result<Vec<f64>> {
    stat.check_arity(pd.len())?;
    let weights = stat
        .linear_weights(pd.len())
        .ok_or_else(|| Error::NoClosedForm(format!("variance of {}", stat.name())))?;
    if let Some(c) = pd.coordinates().iter().find(|c| c.variance().is_infinite()) {
        return Err(Error::InfiniteVariance(format!("{c:?}")));
    }
    Ok(weights)
}

/// Closed-form `V^KS` for separable statistics:
/// `V_k = w_k^2 [(s_k - E Z_k)^2 + Var Z_k]`.
pub fn vks_closed_form(
    stat: &Statistic,
    pd: &ProductDistribution,
    s: &[f64],
) -> Result<VarianceBreakdown> {
    check_inputs(stat, pd, s)?;
    let weights = separable_weights(stat, pd)?;
    let per_k = weights
        .iter()
        .zip(pd.coordinates())
        .zip(s)
        .map(|((w, c), z)| {
            let centered = z - c.mean();
            EstimateWithError::exact(w * w * (centered * centered + c.variance()))
        })
        .collect();
    Ok(VarianceBreakdown::from_independent(per_k, false))
}

/// Closed-form `E[V^KS] = 2 sum_k w_k^2 Var Z_k` for separable statistics.
pub fn mean_vks_closed_form(stat: &Statistic, pd: &ProductDistribution) -> Result<f64> {
    let weights = separable_weights(stat, pd)?;
    Ok(weights
        .iter()
        .zip(pd.coordinates())
        .map(|(w, c)| 2.0 * w * w * c.variance())
        .sum())
}

/// Average of `V^KS` totals over `outer` independent samples. Sample `o` is
/// drawn from `key.child(o).child(SAMPLE)`, its inner replicates from
/// `key.child(o).child(INNER)`.
pub fn estimate_mean_vks(
    stat: &Statistic,
    pd: &ProductDistribution,
    outer: u64,
    cfg: &NestedMcConfig,
    key: StreamKey,
) -> Result<EstimateWithError> {
    if outer < 2 {
        return Err(Error::invalid(
            "outer",
            format!("must be >= 2, got {outer}"),
        ));
    }
    stat.check_arity(pd.len())?;
    cfg.validate()?;
    let totals: Vec<f64> = (0..outer)
        .into_par_iter()
        .map(|o| {
            let okey = key.child(o);
            let s = sample_product_keyed(pd, okey.child(purpose::SAMPLE));
            estimate_vks(stat, pd, &s.values, cfg, okey.child(purpose::INNER))
                .map(|b| b.total.value)
        })
        .collect::<Result<_>>()?;
    Ok(totals.into_iter().collect::<RunningStats>().estimate())
}

/// `V^KS` by the requested method.
pub fn variance_breakdown(
    stat: &Statistic,
    pd: &ProductDistribution,
    s: &[f64],
    method: &VarianceMethod,
    key: StreamKey,
) -> Result<VarianceBreakdown> {
    match method {
        VarianceMethod::ClosedForm => vks_closed_form(stat, pd, s),
        VarianceMethod::NestedMc(cfg) => estimate_vks(stat, pd, s, cfg, key),
    }
}

/// `E[V^KS]` by the requested method; `outer` is ignored for the closed form.
pub fn mean_variance(
    stat: &Statistic,
    pd: &ProductDistribution,
    method: &VarianceMethod,
    outer: u64,
    key: StreamKey,
) -> Result<EstimateWithError> {
    match method {
        VarianceMethod::ClosedForm => mean_vks_closed_form(stat, pd).map(EstimateWithError::exact),
        VarianceMethod::NestedMc(cfg) => estimate_mean_vks(stat, pd, outer, cfg, key),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::CoordinateDistribution;

    fn normals(n: usize) -> ProductDistribution {
        ProductDistribution::iid(CoordinateDistribution::normal(0.0, 1.0).unwrap(), n).unwrap()
    }

    fn sum_of(n: usize) -> Statistic {
        Statistic::WeightedSum {
            weights: vec![1.0; n],
        }
    }

    #[test]
    fn constant_has_zero_variance() {
        let pd = normals(3);
        let c = Statistic::Constant { value: 2.0 };
        let s = [0.3, -1.0, 2.0];
        let cfg = NestedMcConfig::new(50);
        for b in [
            estimate_vks(&c, &pd, &s, &cfg, StreamKey::root(1)).unwrap(),
            estimate_ves(&c, &pd, &s, &cfg, StreamKey::root(1)).unwrap(),
            vks_closed_form(&c, &pd, &s).unwrap(),
        ] {
            assert_eq!(b.total.value, 0.0);
            assert!(b.per_k.iter().all(|e| e.value == 0.0));
        }
        assert_eq!(mean_vks_closed_form(&c, &pd).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_sum_closed_form() {
        let b = vks_closed_form(&sum_of(2), &normals(2), &[1.0, -1.0]).unwrap();
        assert_eq!(b.per_k[0].value, 2.0);
        assert_eq!(b.per_k[1].value, 2.0);
        assert_eq!(b.total.value, 4.0);
        assert_eq!(b.total.stderr, 0.0);
        assert_eq!(
            mean_vks_closed_form(&sum_of(10), &normals(10)).unwrap(),
            20.0
        );
    }

    #[test]
    fn gaussian_sum_monte_carlo_matches_closed_form() {
        let cfg = NestedMcConfig::new(100_000);
        let b = estimate_vks(
            &sum_of(2),
            &normals(2),
            &[1.0, -1.0],
            &cfg,
            StreamKey::root(3),
        )
        .unwrap();
        for e in &b.per_k {
            assert!((e.value - 2.0).abs() <= 3.0 * e.stderr, "{e:?}");
        }
    }

    #[test]
    fn half_gaussian_second_moment() {
        let cfg = NestedMcConfig::new(100_000);
        let b = estimate_ves(
            &sum_of(2),
            &normals(2),
            &[0.0, 0.0],
            &cfg,
            StreamKey::root(4),
        )
        .unwrap();
        for e in &b.per_k {
            assert!((e.value - 0.5).abs() <= 3.0 * e.stderr, "{e:?}");
        }
        assert!((b.total.value - 1.0).abs() <= 3.0 * b.total.stderr);
    }

    #[test]
    fn prefix_measurability() {
        let pd = ProductDistribution::iid(CoordinateDistribution::uniform(0.0, 1.0).unwrap(), 4)
            .unwrap();
        let stat = Statistic::SoftMax { temperature: 0.3 };
        let cfg = NestedMcConfig::new(200);
        let a = estimate_vks(&stat, &pd, &[0.1, 0.5, 0.9, 0.2], &cfg, StreamKey::root(5)).unwrap();
        let b = estimate_vks(&stat, &pd, &[0.1, 0.5, 0.0, 0.7], &cfg, StreamKey::root(5)).unwrap();
        // V_1 and V_2 only read coordinates 1..=2.
        assert_eq!(a.per_k[0], b.per_k[0]);
        assert_eq!(a.per_k[1], b.per_k[1]);
        assert_ne!(a.per_k[2], b.per_k[2]);
    }

    #[test]
    fn suffix_is_shared_within_a_replicate() {
        // For a sum, the shared suffix cancels: V_1 = (s_1 - Z')^2 exactly per
        // replicate. An uncoupled implementation would add 2 Var(Z_2) = 2.
        let cfg = NestedMcConfig::new(20_000);
        let b = estimate_vks(
            &sum_of(2),
            &normals(2),
            &[0.0, 0.0],
            &cfg,
            StreamKey::root(6),
        )
        .unwrap();
        assert!((b.per_k[0].value - 1.0).abs() < 0.05, "{:?}", b.per_k[0]);
    }

    #[test]
    fn reuse_suffix_consistent() {
        let pd = normals(3);
        let cfg = NestedMcConfig {
            inner_replicates: 50_000,
            reuse_suffix: true,
        };
        let s = [0.5, -0.5, 1.0];
        let b = estimate_vks(&sum_of(3), &pd, &s, &cfg, StreamKey::root(8)).unwrap();
        let exact = vks_closed_form(&sum_of(3), &pd, &s).unwrap();
        for (e, x) in b.per_k.iter().zip(&exact.per_k) {
            assert!((e.value - x.value).abs() <= 4.0 * e.stderr);
        }
        assert!((b.total.value - exact.total.value).abs() <= 4.0 * b.total.stderr);
        let total: f64 = b.per_k.iter().map(|e| e.value).sum();
        assert_eq!(total, b.total.value);
        let v = estimate_ves(&sum_of(3), &pd, &s, &cfg, StreamKey::root(8)).unwrap();
        assert!(v.total.value > 0.0);
    }

    #[test]
    fn total_is_fixed_order_sum() {
        let pd = normals(5);
        let cfg = NestedMcConfig::new(100);
        let b = estimate_vks(
            &Statistic::Max,
            &pd,
            &[0.1, 0.2, -0.3, 1.0, 0.0],
            &cfg,
            StreamKey::root(2),
        )
        .unwrap();
        let mut sum = 0.0;
        for e in &b.per_k {
            assert!(e.value >= 0.0);
            sum += e.value;
        }
        assert_eq!(sum, b.total.value);
    }

    #[test]
    fn infinite_variance_refuses_fast_path() {
        let pd = ProductDistribution::new(vec![
            CoordinateDistribution::normal(0.0, 1.0).unwrap(),
            CoordinateDistribution::pareto(1.5, 1.0).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            vks_closed_form(&sum_of(2), &pd, &[0.0, 1.0]),
            Err(Error::InfiniteVariance(_))
        ));
        assert!(matches!(
            mean_vks_closed_form(&sum_of(2), &pd),
            Err(Error::InfiniteVariance(_))
        ));
        let b = estimate_vks(
            &sum_of(2),
            &pd,
            &[0.0, 1.0],
            &NestedMcConfig::new(100),
            StreamKey::root(1),
        )
        .unwrap();
        assert!(b.heavy_tail);
    }

    #[test]
    fn no_closed_form_for_max() {
        assert!(matches!(
            vks_closed_form(&Statistic::Max, &normals(2), &[0.0, 0.0]),
            Err(Error::NoClosedForm(_))
        ));
    }

    #[test]
    fn parameter_errors() {
        let pd = normals(2);
        assert!(estimate_vks(
            &sum_of(2),
            &pd,
            &[0.0],
            &NestedMcConfig::new(10),
            StreamKey::root(0)
        )
        .is_err());
        assert!(estimate_vks(
            &sum_of(2),
            &pd,
            &[0.0, 0.0],
            &NestedMcConfig::new(1),
            StreamKey::root(0)
        )
        .is_err());
        assert!(estimate_mean_vks(
            &sum_of(2),
            &pd,
            1,
            &NestedMcConfig::new(10),
            StreamKey::root(0)
        )
        .is_err());
    }

    #[test]
    fn mean_vks_monte_carlo() {
        let e = estimate_mean_vks(
            &sum_of(3),
            &normals(3),
            2000,
            &NestedMcConfig::new(200),
            StreamKey::root(7),
        )
        .unwrap();
        assert!((e.value - 6.0).abs() <= 4.0 * e.stderr, "{e:?}");
    }
}
