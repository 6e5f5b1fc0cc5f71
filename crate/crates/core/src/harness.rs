//! Coverage experiments and the other scenario-driven runs.
//!
//! Every run derives all randomness from the scenario seed. Trial `t` uses
//! the streams under `[TRIAL, t]`; per-scenario constants (`E f(S)`, `E V`)
//! use their own labels and are computed once before any trial. Results are
//! collected by index and reduced in index order, so the output does not
//! depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_logarithmic, bound_mcdiarmid, bound_scale_free, BoundId, BoundResult};
use crate::canonical::{
    check_canonical_mgf, check_subgaussian_claim, check_tail_i, check_tail_ii, estimate_mean_b,
    ClaimReport, DeltaVPair, MgfReport, PairSampler, TailReport,
};
use crate::distributions::sample_product_keyed;
use crate::error::{Error, Result};
use crate::estimate::EstimateWithError;
use crate::estimators::{
    estimate_ves, estimate_vks, mean_variance, variance_breakdown, vks_closed_form,
    VarianceBreakdown, VarianceMethod,
};
use crate::pacbayes::{
    moment_report, pb_bound_logarithmic, pb_bound_scale_free, FiniteHypothesisClass, MomentReport,
    PacBayesSetup, PosteriorTrial, SetupOptions,
};
use crate::rng::{purpose, StreamKey};
use crate::scenario::{BoundSpec, OracleMode, PairConfig, Scenario};
use crate::statistics::{
    bounded_differences, closed_form_mean, monte_carlo_mean, ExpectationMethod, Statistic,
};
use crate::verdict::{binomial_threshold, frequency_verdict, Verdict, MARGIN_STDERRS};

/// Runs `f` on a pool of exactly `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::invalid("workers", "must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    Ok(pool.install(f))
}

fn trial_key(root: StreamKey, t: u64) -> StreamKey {
    root.child(purpose::TRIAL).child(t)
}

fn run_trials<T: Send>(trials: u64, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            f(t).map_err(|e| Error::Trial {
                index: t,
                source: Box::new(e),
            })
        })
        .collect()
}

/// One `(bound, x, y)` combination of a coverage run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub bound: BoundId,
    pub x: f64,
    pub y: Option<f64>,
}

fn expand_cells(bounds: &[BoundSpec], n: usize) -> Vec<CellSpec> {
    bounds
        .iter()
        .flat_map(|b| {
            b.cells(n).into_iter().map(move |(x, y)| CellSpec {
                bound: b.kind,
                x,
                y,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundOutcome {
    pub radius: f64,
    pub violated: bool,
    /// Still violated after widening `V` and `E V` by three stderr and
    /// shrinking `|Δ|` by three stderr of `E f(S)`.
    pub robust_violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub gap: f64,
    pub v: f64,
    pub v_stderr: f64,
    pub ev: Option<f64>,
    pub outcomes: Vec<BoundOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub bound: BoundId,
    pub x: f64,
    pub y: Option<f64>,
    pub trials: u64,
    pub violations: u64,
    pub robust_violations: u64,
    pub rate: f64,
    pub nominal: f64,
    pub stderr: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub oracle: OracleMode,
    pub mean: EstimateWithError,
    pub mean_variance: Option<EstimateWithError>,
    pub cells: Vec<CoverageCell>,
    pub verdict: Verdict,
}

fn aggregate(
    cells: &[CellSpec],
    nominals: &[f64],
    outcomes: &[Vec<BoundOutcome>],
    robust: bool,
) -> Vec<CoverageCell> {
    let trials = outcomes.len() as u64;
    cells
        .iter()
        .zip(nominals)
        .enumerate()
        .map(|(c, (spec, &nominal))| {
            let violations = outcomes.iter().filter(|o| o[c].violated).count() as u64;
            let robust_violations = outcomes.iter().filter(|o| o[c].robust_violated).count() as u64;
            let counted = if robust {
                robust_violations
            } else {
                violations
            };
            let rate = counted as f64 / trials as f64;
            let (threshold, stderr) = binomial_threshold(nominal, trials, MARGIN_STDERRS);
            CoverageCell {
                bound: spec.bound,
                x: spec.x,
                y: spec.y,
                trials,
                violations,
                robust_violations,
                rate: violations as f64 / trials as f64,
                nominal,
                stderr,
                threshold,
                verdict: frequency_verdict(rate, nominal, trials, MARGIN_STDERRS),
            }
        })
        .collect()
}

fn scenario_mean(stat: &Statistic, scn: &Scenario, root: StreamKey) -> Result<EstimateWithError> {
    match scn.expectation_method() {
        ExpectationMethod::ClosedForm => {
            closed_form_mean(stat, &scn.distribution).map(EstimateWithError::exact)
        }
        ExpectationMethod::MonteCarlo { replicates } => monte_carlo_mean(
            stat,
            &scn.distribution,
            replicates,
            root.child(purpose::MEAN),
        ),
    }
}

fn oracle(scn: &Scenario) -> OracleMode {
    scn.oracle.unwrap_or(OracleMode::NestedMc)
}

/// Per-trial records and aggregate report for a single-statistic scenario.
pub fn coverage_trials(scn: &Scenario) -> Result<(CoverageReport, Vec<TrialRecord>)> {
    let stat = scn.require_statistic()?;
    let pd = &scn.distribution;
    if scn.bounds.is_empty() {
        return Err(Error::invalid("bounds", "at least one bound required"));
    }
    let root = StreamKey::root(scn.seed);
    let method = scn.variance_method();
    let cells = expand_cells(&scn.bounds, pd.len());
    if let Some(i) = scn
        .bounds
        .iter()
        .position(|b| matches!(b.kind, BoundId::PbScaleFree | BoundId::PbLogarithmic))
    {
        return Err(Error::invalid(
            format!("bounds[{i}].kind"),
            "needs a hypothesis class",
        ));
    }

    let mean = scenario_mean(stat, scn, root)?;
    let needs_ev = cells.iter().any(|c| c.bound == BoundId::ScaleFree);
    let ev = if needs_ev {
        Some(mean_variance(
            stat,
            pd,
            &method,
            scn.mean_variance.outer,
            root.child(purpose::MEAN_V),
        )?)
    } else {
        None
    };
    let diff_bounds = if cells.iter().any(|c| c.bound == BoundId::Mcdiarmid) {
        let i = scn
            .bounds
            .iter()
            .position(|b| b.kind == BoundId::Mcdiarmid)
            .unwrap_or(0);
        Some(
            bounded_differences(stat, pd)
                .map_err(|e| Error::invalid(format!("bounds[{i}].kind"), e.to_string()))?,
        )
    } else {
        None
    };
    let nominals: Vec<f64> = cells
        .iter()
        .map(|c| {
            cell_bound(
                c,
                0.0,
                ev.map(|e| e.value).unwrap_or(0.0),
                diff_bounds.as_deref(),
            )
            .map(|b| b.failure_probability)
        })
        .collect::<Result<_>>()?;
    let robust = method != VarianceMethod::ClosedForm;
    let ev_value = ev.map(|e| e.value);
    let ev_upper = ev.map(|e| e.upper(MARGIN_STDERRS));
    let mean_slack = MARGIN_STDERRS * mean.stderr;

    let records = run_trials(scn.trials, |t| {
        let key = trial_key(root, t);
        let s = sample_product_keyed(pd, key.child(purpose::SAMPLE));
        let gap = stat.evaluate(&s.values)? - mean.value;
        let v = variance_breakdown(stat, pd, &s.values, &method, key.child(purpose::INNER))?;
        let v_upper = v.total.upper(MARGIN_STDERRS);
        let outcomes = cells
            .iter()
            .map(|c| {
                let radius = cell_bound(
                    c,
                    v.total.value,
                    ev_value.unwrap_or(0.0),
                    diff_bounds.as_deref(),
                )?
                .radius;
                let wide =
                    cell_bound(c, v_upper, ev_upper.unwrap_or(0.0), diff_bounds.as_deref())?.radius;
                Ok(BoundOutcome {
                    radius,
                    violated: gap.abs() > radius,
                    robust_violated: gap.abs() - mean_slack > wide,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrialRecord {
            index: t,
            gap,
            v: v.total.value,
            v_stderr: v.total.stderr,
            ev: ev_value,
            outcomes,
        })
    })?;

    let outcomes: Vec<Vec<BoundOutcome>> = records.iter().map(|r| r.outcomes.clone()).collect();
    let cells = aggregate(&cells, &nominals, &outcomes, robust);
    let report = CoverageReport {
        oracle: oracle(scn),
        mean,
        mean_variance: ev,
        verdict: Verdict::combine(cells.iter().map(|c| c.verdict)),
        cells,
    };
    Ok((report, records))
}

fn cell_bound(c: &CellSpec, v: f64, ev: f64, diff_bounds: Option<&[f64]>) -> Result<BoundResult> {
    match c.bound {
        BoundId::ScaleFree => bound_scale_free(v, ev, c.x),
        BoundId::Logarithmic => bound_logarithmic(v, c.y.unwrap_or(f64::NAN), c.x),
        BoundId::Mcdiarmid => bound_mcdiarmid(diff_bounds.unwrap_or(&[]), c.x),
        BoundId::PbScaleFree | BoundId::PbLogarithmic => Err(Error::invalid(
            "bound",
            "posterior-averaged bound outside a hypothesis-class run",
        )),
    }
}

pub fn run_coverage(scn: &Scenario) -> Result<CoverageReport> {
    coverage_trials(scn).map(|(r, _)| r)
}

fn pacbayes_setup(scn: &Scenario, root: StreamKey) -> Result<PacBayesSetup> {
    let cfg = scn
        .hypothesis_class
        .as_ref()
        .ok_or_else(|| Error::invalid("hypothesis_class", "required for this run"))?;
    let m = cfg.hypotheses.len();
    let prior = cfg.prior.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
    let class = FiniteHypothesisClass::new(cfg.hypotheses.clone(), prior)?;
    PacBayesSetup::new(
        class,
        scn.distribution.clone(),
        cfg.beta,
        cfg.score,
        scn.variance_method(),
        &SetupOptions {
            expectation: scn.expectation_method(),
            mean_variance_outer: scn.mean_variance.outer,
            total_mean_samples: cfg.ev_samples,
        },
        root,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacBayesReport {
    pub coverage: Option<CoverageReport>,
    pub moments: Option<MomentReport>,
    pub verdict: Verdict,
}

fn pb_cell(c: &CellSpec, t: &PosteriorTrial, qv: f64, ev: f64) -> Result<BoundResult> {
    match c.bound {
        BoundId::PbScaleFree => pb_bound_scale_free(qv, ev, t.kl, c.x),
        BoundId::PbLogarithmic => pb_bound_logarithmic(qv, t.kl, c.y.unwrap_or(f64::NAN), c.x),
        _ => Err(Error::invalid(
            "bound",
            "only posterior-averaged bounds apply",
        )),
    }
}

/// Posterior-averaged coverage for a hypothesis-class scenario.
pub fn run_pacbayes_coverage(scn: &Scenario) -> Result<CoverageReport> {
    let root = StreamKey::root(scn.seed);
    let setup = pacbayes_setup(scn, root.child(purpose::MEAN))?;
    pacbayes_coverage_with(scn, &setup, root)
}

fn pacbayes_coverage_with(
    scn: &Scenario,
    setup: &PacBayesSetup,
    root: StreamKey,
) -> Result<CoverageReport> {
    if scn.bounds.is_empty() {
        return Err(Error::invalid("bounds", "at least one bound required"));
    }
    if let Some(i) = scn
        .bounds
        .iter()
        .position(|b| !matches!(b.kind, BoundId::PbScaleFree | BoundId::PbLogarithmic))
    {
        return Err(Error::invalid(
            format!("bounds[{i}].kind"),
            "only pb_scale_free and pb_logarithmic apply",
        ));
    }
    let cells = expand_cells(&scn.bounds, scn.n());
    let ev = setup.total_mean_variance;
    let robust = setup.method != VarianceMethod::ClosedForm || ev.stderr > 0.0;
    let ev_upper = ev.upper(MARGIN_STDERRS);
    let zero = PosteriorTrial {
        q_gap: 0.0,
        q_var: 0.0,
        q_var_stderr: 0.0,
        kl: 0.0,
    };
    let nominals: Vec<f64> = cells
        .iter()
        .map(|c| pb_cell(c, &zero, 0.0, 0.0).map(|b| b.failure_probability))
        .collect::<Result<_>>()?;
    let mean_slack = MARGIN_STDERRS * setup.means.iter().map(|m| m.stderr).fold(0.0, f64::max);
    let outcomes = run_trials(scn.trials, |t| {
        let (trial, _) = setup.trial(trial_key(root, t))?;
        let gap = trial.q_gap.abs();
        let qv_upper = trial.q_var + MARGIN_STDERRS * trial.q_var_stderr;
        cells
            .iter()
            .map(|c| {
                let radius = pb_cell(c, &trial, trial.q_var, ev.value)?.radius;
                let wide = pb_cell(c, &trial, qv_upper, ev_upper)?.radius;
                Ok(BoundOutcome {
                    radius,
                    violated: gap > radius,
                    robust_violated: gap - mean_slack > wide,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let cells = aggregate(&cells, &nominals, &outcomes, robust);
    Ok(CoverageReport {
        oracle: oracle(scn),
        mean: EstimateWithError::exact(0.0),
        mean_variance: Some(ev),
        verdict: Verdict::combine(cells.iter().map(|c| c.verdict)),
        cells,
    })
}

/// Coverage (when bounds are given) and the exponential-moment checks (when
/// configured) for a hypothesis-class scenario, sharing one setup.
pub fn run_pacbayes(scn: &Scenario) -> Result<PacBayesReport> {
    let root = StreamKey::root(scn.seed);
    let setup = pacbayes_setup(scn, root.child(purpose::MEAN))?;
    let coverage = if scn.bounds.is_empty() {
        None
    } else {
        Some(pacbayes_coverage_with(scn, &setup, root)?)
    };
    let moments = match &scn.moments {
        None => None,
        Some(cfg) => {
            let trials = setup.trials(cfg.samples, root.child(purpose::MOMENTS))?;
            Some(moment_report(
                &trials,
                setup.total_mean_variance.value,
                &cfg.x_grid,
                &cfg.y_grid,
            )?)
        }
    };
    if coverage.is_none() && moments.is_none() {
        return Err(Error::invalid(
            "bounds",
            "nothing to run: give bounds or a moments section",
        ));
    }
    let verdict = Verdict::combine(
        coverage
            .iter()
            .map(|c| c.verdict)
            .chain(moments.iter().map(|l| l.verdict)),
    );
    Ok(PacBayesReport {
        coverage,
        moments,
        verdict,
    })
}

fn build_pair(
    scn: &Scenario,
    pair: &PairConfig,
    b_multiplier: f64,
    root: StreamKey,
) -> Result<PairSampler> {
    let base = match *pair {
        PairConfig::GaussianScale { sigma } => PairSampler::gaussian(sigma)?,
        PairConfig::DeltaV {} => {
            let stat = scn.require_statistic()?.clone();
            let p = DeltaVPair::new(
                stat,
                scn.distribution.clone(),
                scn.variance_method(),
                scn.expectation_method(),
                root.child(purpose::MEAN),
            )?;
            PairSampler::DeltaV(Box::new(p))
        }
    };
    if b_multiplier == 1.0 {
        Ok(base)
    } else {
        PairSampler::scaled(base, b_multiplier)
    }
}

pub fn run_canonical(scn: &Scenario) -> Result<MgfReport> {
    let cfg = scn
        .canonical
        .as_ref()
        .ok_or_else(|| Error::invalid("canonical", "required for this run"))?;
    let root = StreamKey::root(scn.seed);
    let pair = build_pair(scn, &cfg.pair, cfg.b_multiplier, root)?;
    check_canonical_mgf(
        &pair,
        &cfg.lambda_grid,
        cfg.samples,
        root.child(purpose::PAIR),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailsReport {
    pub mean_b: EstimateWithError,
    pub expected_scale: TailReport,
    pub log_corrected: TailReport,
    pub verdict: Verdict,
}

pub fn run_tails(scn: &Scenario) -> Result<TailsReport> {
    let cfg = scn
        .tails
        .as_ref()
        .ok_or_else(|| Error::invalid("tails", "required for this run"))?;
    let root = StreamKey::root(scn.seed);
    let pair = build_pair(scn, &cfg.pair, cfg.b_multiplier, root)?;
    let mean_b = match cfg.mean_b.or_else(|| pair.exact_mean_b()) {
        Some(eb) => EstimateWithError::exact(eb),
        None => estimate_mean_b(&pair, cfg.mean_b_samples, root.child(purpose::MEAN_B))?,
    };
    let key = root.child(purpose::TAIL);
    let expected_scale = check_tail_i(&pair, mean_b, &cfg.t_grid_i, cfg.samples, key)?;
    let log_corrected = check_tail_ii(&pair, cfg.y, &cfg.t_grid_ii, cfg.samples, key)?;
    let verdict = Verdict::combine([expected_scale.verdict, log_corrected.verdict]);
    Ok(TailsReport {
        mean_b,
        expected_scale,
        log_corrected,
        verdict,
    })
}

pub fn run_claim(scn: &Scenario) -> Result<ClaimReport> {
    let cfg = scn
        .claim
        .as_ref()
        .ok_or_else(|| Error::invalid("claim", "required for this run"))?;
    let key = StreamKey::root(scn.seed).child(purpose::CLAIM);
    check_subgaussian_claim(&cfg.sampler, cfg.alpha, &cfg.x_grid, cfg.samples, key)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    pub bound: BoundId,
    pub x: f64,
    pub y: Option<f64>,
    pub radius: f64,
    pub failure_probability: f64,
    pub vacuous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub sample: Vec<f64>,
    pub value: f64,
    pub mean: EstimateWithError,
    pub gap: f64,
    /// Semi-empirical variance by nested Monte Carlo.
    pub vks: VarianceBreakdown,
    /// Semi-empirical variance in closed form, when it exists.
    pub vks_exact: Option<VarianceBreakdown>,
    /// Efron-Stein variance by Monte Carlo.
    pub ves: VarianceBreakdown,
    pub mean_variance: Option<EstimateWithError>,
    pub bounds: Vec<BoundEvaluation>,
}

/// Variance breakdowns for the configured sample, or one drawn from the seed.
pub fn run_estimate(scn: &Scenario) -> Result<EstimateReport> {
    let stat = scn.require_statistic()?;
    let pd = &scn.distribution;
    let root = StreamKey::root(scn.seed);
    let key = root.child(purpose::ESTIMATE);
    let sample = match &scn.sample {
        Some(s) => s.clone(),
        None => sample_product_keyed(pd, key.child(purpose::SAMPLE)).values,
    };
    let value = stat.evaluate(&sample)?;
    let mean = scenario_mean(stat, scn, root)?;
    let vks = estimate_vks(stat, pd, &sample, &scn.estimator, key.child(purpose::INNER))?;
    let ves = estimate_ves(stat, pd, &sample, &scn.estimator, key.child(purpose::VES))?;
    let vks_exact = vks_closed_form(stat, pd, &sample).ok();
    let method = scn.variance_method();
    let v = match &vks_exact {
        Some(b) if method == VarianceMethod::ClosedForm => b.total.value,
        _ => vks.total.value,
    };
    let cells = expand_cells(&scn.bounds, pd.len());
    let mean_variance = if cells.iter().any(|c| c.bound == BoundId::ScaleFree) {
        Some(mean_variance(
            stat,
            pd,
            &method,
            scn.mean_variance.outer,
            root.child(purpose::MEAN_V),
        )?)
    } else {
        None
    };
    let diff_bounds = if cells.iter().any(|c| c.bound == BoundId::Mcdiarmid) {
        Some(bounded_differences(stat, pd)?)
    } else {
        None
    };
    let bounds = cells
        .iter()
        .map(|c| {
            let b = cell_bound(
                c,
                v,
                mean_variance.map(|e| e.value).unwrap_or(0.0),
                diff_bounds.as_deref(),
            )?;
            Ok(BoundEvaluation {
                bound: c.bound,
                x: c.x,
                y: c.y,
                radius: b.radius,
                failure_probability: b.failure_probability,
                vacuous: b.vacuous,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport {
        sample,
        value,
        gap: value - mean.value,
        mean,
        vks,
        vks_exact,
        ves,
        mean_variance,
        bounds,
    })
}
