//! Acceptance suite. Prints one PASS/FAIL line per criterion; run with
//! `--nocapture` to see them.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use varbound_core::bounds::{bound_logarithmic, bound_scale_free, inverse_square_y};
use varbound_core::canonical::TailReport;
use varbound_core::estimators::{estimate_vks, vks_closed_form};
use varbound_core::harness::{
    run_canonical, run_claim, run_coverage, run_pacbayes, run_tails, with_workers, CoverageReport,
};
use varbound_core::pacbayes::{pb_bound_scale_free, MomentPart};
use varbound_core::rng::purpose;
use varbound_core::scenario::Scenario;
use varbound_core::{
    distributions::sample_product_keyed, BoundId, CoordinateDistribution, NestedMcConfig,
    ProductDistribution, Statistic, StreamKey, Verdict,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn load(text: &str) -> Scenario {
    serde_json::from_str::<Scenario>(text)
        .unwrap()
        .resolve()
        .unwrap()
}

macro_rules! config {
    ($name:literal) => {
        load(include_str!(concat!("../../../configs/", $name)))
    };
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn cells_for(r: &CoverageReport, bound: BoundId) -> Vec<String> {
    r.cells
        .iter()
        .filter(|c| c.bound == bound)
        .map(|c| {
            format!(
                "x={} rate={:.5} nominal={:.5} {}",
                c.x,
                c.rate,
                c.nominal,
                c.verdict.as_str()
            )
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let n = 10;
    let pd =
        ProductDistribution::iid(CoordinateDistribution::normal(0.0, 1.0).unwrap(), n).unwrap();
    let stat = Statistic::WeightedSum {
        weights: vec![1.0; n],
    };
    let cfg = NestedMcConfig::new(20_000);
    let root = StreamKey::root(101);
    let samples = 1000u64;
    let good = (0..samples)
        .into_par_iter()
        .map(|i| {
            let key = root.child(i);
            let s = sample_product_keyed(&pd, key.child(purpose::SAMPLE)).values;
            let exact = vks_closed_form(&stat, &pd, &s).unwrap().total.value;
            let direct: f64 = s.iter().map(|z| z * z + 1.0).sum();
            assert!((exact - direct).abs() <= 1e-12 * direct);
            let mc = estimate_vks(&stat, &pd, &s, &cfg, key.child(purpose::INNER))
                .unwrap()
                .total;
            let err = (mc.value - exact).abs();
            err <= 4.0 * mc.stderr && err <= 0.02 * exact
        })
        .filter(|&ok| ok)
        .count() as u64;
    let frac = good as f64 / samples as f64;
    ensure(frac >= 0.99, format!("only {good}/{samples} samples agree"))?;
    Ok(format!("{good}/{samples} samples within 4 stderr and 2%"))
}

fn logarithmic_coverage(r: &CoverageReport) -> Outcome {
    let cells: Vec<_> = r
        .cells
        .iter()
        .filter(|c| c.bound == BoundId::Logarithmic)
        .collect();
    ensure(cells.len() == 3, "expected three cells")?;
    for c in &cells {
        ensure(c.y == Some(0.01), format!("y = {:?}", c.y))?;
        ensure((c.nominal - (-c.x).exp()).abs() < 1e-15, "nominal")?;
        ensure(
            c.verdict == Verdict::Pass,
            format!("x = {}: rate {} > {}", c.x, c.rate, c.threshold),
        )?;
    }
    Ok(cells_for(r, BoundId::Logarithmic).join("; "))
}

fn scale_free_coverage(r: &CoverageReport) -> Outcome {
    ensure(
        r.mean_variance.map(|e| e.value) == Some(20.0),
        "E V is not exactly 20",
    )?;
    let cells: Vec<_> = r
        .cells
        .iter()
        .filter(|c| c.bound == BoundId::ScaleFree)
        .collect();
    ensure(cells.len() == 3, "expected three cells")?;
    for c in &cells {
        ensure((c.nominal - SQRT_2 * (-c.x).exp()).abs() < 1e-15, "nominal")?;
        ensure(
            c.verdict == Verdict::Pass,
            format!("x = {}: rate {} > {}", c.x, c.rate, c.threshold),
        )?;
    }
    Ok(cells_for(r, BoundId::ScaleFree).join("; "))
}

fn canonical_pairs() -> Outcome {
    let mut lines = vec![];
    for (name, scn) in [
        ("weighted_sum", config!("canonical_sum.json")),
        ("max", config!("canonical_max.json")),
        ("softmax", config!("canonical_softmax.json")),
    ] {
        let r = run_canonical(&scn).map_err(|e| e.to_string())?;
        let worst = r
            .rows
            .iter()
            .filter(|row| row.lambda != 0.0)
            .map(|row| row.estimate)
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(r.verdict == Verdict::Pass, format!("{name}: {:?}", r.rows))?;
        lines.push(format!("{name} pass (largest moment off zero {worst:.4})"));
    }
    let r = run_canonical(&config!("negctrl.json")).map_err(|e| e.to_string())?;
    for row in r.rows.iter().filter(|row| row.lambda.abs() == 2.0) {
        ensure(
            row.verdict == Verdict::Fail,
            format!("negative control not flagged at {}", row.lambda),
        )?;
    }
    ensure(r.verdict == Verdict::Fail, "negative control passed")?;
    let at2 = r.rows.iter().find(|row| row.lambda == 2.0).unwrap();
    lines.push(format!(
        "negative control fails at |lambda|=2 (estimate {:.3})",
        at2.estimate
    ));
    Ok(lines.join("; "))
}

fn tails() -> Outcome {
    let r = run_tails(&config!("tails.json")).map_err(|e| e.to_string())?;
    ensure(
        r.mean_b.value == 1.0 && r.mean_b.is_closed_form(),
        "E B should be exact",
    )?;
    let show = |t: &TailReport| {
        t.rows
            .iter()
            .map(|row| {
                format!(
                    "t={:.3} freq={:.5} bound={:.5}",
                    row.t, row.frequency, row.bound
                )
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    ensure(
        r.expected_scale.verdict == Verdict::Pass,
        show(&r.expected_scale),
    )?;
    ensure(
        r.log_corrected.verdict == Verdict::Pass,
        show(&r.log_corrected),
    )?;
    ensure(
        r.expected_scale.rows.len() == 3 && r.log_corrected.rows.len() == 2,
        "grid sizes",
    )?;
    Ok(format!(
        "{}; {}",
        show(&r.expected_scale),
        show(&r.log_corrected)
    ))
}

fn claim() -> Outcome {
    let r = run_claim(&config!("claim.json")).map_err(|e| e.to_string())?;
    let c = r.c_alpha;
    ensure(
        (c.value - SQRT_2).abs() <= 3.0 * c.stderr,
        format!("C(1/4) = {} +- {} vs sqrt 2", c.value, c.stderr),
    )?;
    ensure(r.verdict == Verdict::Pass, format!("{:?}", r.rows))?;
    Ok(format!(
        "C(1/4) = {:.5} +- {:.5}; all x pass",
        c.value, c.stderr
    ))
}

fn pacbayes_weights_dimension(scn: &Scenario) -> Result<(), String> {
    let class = scn.hypothesis_class.as_ref().ok_or("no class")?;
    ensure(
        class.hypotheses.len() == 8 && scn.n() == 10,
        "expected M = 8, n = 10",
    )?;
    ensure(class.beta == 1.0, "expected beta = 1")
}

fn pacbayes_coverage(r: &varbound_core::harness::PacBayesReport) -> Outcome {
    let cov = r.coverage.as_ref().ok_or("no coverage")?;
    for c in &cov.cells {
        let nominal = match c.bound {
            BoundId::PbScaleFree => 2.0 * (-c.x).exp(),
            _ => (-c.x).exp(),
        };
        ensure((c.nominal - nominal).abs() < 1e-15, "nominal")?;
        ensure(
            c.verdict == Verdict::Pass,
            format!("{:?} x={}: {} > {}", c.bound, c.x, c.rate, c.threshold),
        )?;
    }
    let mut rng = StreamKey::root(7).rng();
    for _ in 0..1000 {
        let qv = rng.random_range(0.0..50.0);
        let ev = rng.random_range(0.0..50.0);
        let x = rng.random_range(0.01..10.0);
        let pb = pb_bound_scale_free(qv, ev, 0.0, x).unwrap().radius;
        let t1 = bound_scale_free(qv, ev, x).unwrap().radius;
        ensure(
            (pb - t1).abs() <= 4.0 * f64::EPSILON * t1,
            format!("degeneracy {pb} vs {t1}"),
        )?;
    }
    let mut lines = cells_for(cov, BoundId::PbScaleFree);
    lines.extend(cells_for(cov, BoundId::PbLogarithmic));
    Ok(format!(
        "E V = {:.4} +- {:.4}; {}; M=1 degeneracy exact",
        cov.mean_variance.unwrap().value,
        cov.mean_variance.unwrap().stderr,
        lines.join("; ")
    ))
}

fn moment_checks(r: &varbound_core::harness::PacBayesReport) -> Outcome {
    let l = r.moments.as_ref().ok_or("no moment report")?;
    ensure(l.n_samples == 100_000, "expected 1e5 trials")?;
    ensure(l.rows.len() == 5, "expected 3 x values and 2 y values")?;
    for row in &l.rows {
        ensure(
            row.verdict == Verdict::Pass,
            format!(
                "{:?} at {}: {} +- {} vs {}",
                row.part, row.parameter, row.estimate, row.stderr, row.bound
            ),
        )?;
    }
    Ok(l.rows
        .iter()
        .map(|row| {
            let tag = match row.part {
                MomentPart::MixtureTail => "x",
                MomentPart::GaussianMixture => "y",
            };
            format!(
                "{tag}={}: {:.4} <= {:.4}",
                row.parameter, row.estimate, row.bound
            )
        })
        .collect::<Vec<_>>()
        .join("; "))
}

fn shrink(mut scn: Scenario) -> Scenario {
    scn.trials = scn.trials.min(1000);
    if let Some(c) = &mut scn.canonical {
        c.samples = c.samples.min(2000);
    }
    if let Some(t) = &mut scn.tails {
        t.samples = t.samples.min(5000);
    }
    if let Some(c) = &mut scn.claim {
        c.samples = c.samples.min(5000);
    }
    if let Some(l) = &mut scn.moments {
        l.samples = l.samples.min(5000);
    }
    if let Some(h) = &mut scn.hypothesis_class {
        h.ev_samples = h.ev_samples.min(2000);
    }
    scn
}

fn payload<T: Serialize + Send>(
    workers: usize,
    f: impl FnOnce() -> varbound_core::Result<T> + Send,
) -> Result<String, String> {
    let r = with_workers(workers, f)
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&r).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let scenarios: Vec<(&str, Scenario)> = vec![
        ("gauss_sum", config!("gauss_sum.json")),
        ("max_uniform_mc", config!("max_uniform_mc.json")),
        ("canonical_sum", config!("canonical_sum.json")),
        ("canonical_max", config!("canonical_max.json")),
        ("canonical_softmax", config!("canonical_softmax.json")),
        ("negctrl", config!("negctrl.json")),
        ("tails", config!("tails.json")),
        ("claim", config!("claim.json")),
        ("pacbayes", config!("pacbayes.json")),
    ];
    let mut checked = 0;
    for (name, scn) in scenarios {
        let scn = shrink(scn);
        let run = |w: usize| -> Result<String, String> {
            let s = &scn;
            if s.canonical.is_some() {
                payload(w, || run_canonical(s))
            } else if s.tails.is_some() {
                payload(w, || run_tails(s))
            } else if s.claim.is_some() {
                payload(w, || run_claim(s))
            } else if s.hypothesis_class.is_some() {
                payload(w, || run_pacbayes(s))
            } else {
                payload(w, || run_coverage(s))
            }
        };
        let one = run(1)?;
        for w in [2, 8] {
            ensure(
                run(w)? == one,
                format!("{name}: payload differs with {w} workers"),
            )?;
        }
        checked += 1;
    }
    Ok(format!(
        "{checked} scenarios byte-identical under 1, 2 and 8 workers"
    ))
}

fn formula_identities() -> Outcome {
    let mut rng = StreamKey::root(10).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = 10f64.powf(rng.random_range(-6.0..4.0));
        let n = rng.random_range(1..=10_000usize);
        let x = rng.random_range(1.0..20.0);
        let got = bound_logarithmic(v, inverse_square_y(n), x).unwrap().radius;
        let nf = n as f64;
        let want =
            (2.0 * (v + 1.0 / (nf * nf)) * (1.0 + 0.5 * (1.0 + nf * nf * v).ln()) * x).sqrt();
        let rel = (got - want).abs() / want;
        worst = worst.max(rel);
        ensure(rel <= 1e-12, format!("v={v} n={n} x={x}: {got} vs {want}"))?;
    }
    for c in [1e-3, 1.0, 1e3] {
        for _ in 0..200 {
            let v = rng.random_range(0.0..100.0);
            let ev = rng.random_range(0.0..100.0);
            let x = rng.random_range(0.01..10.0);
            let scaled = bound_scale_free(c * c * v, c * c * ev, x).unwrap().radius;
            let base = c * bound_scale_free(v, ev, x).unwrap().radius;
            ensure(
                (scaled - base).abs() <= 1e-12 * base.max(f64::MIN_POSITIVE),
                format!("c={c}: {scaled} vs {base}"),
            )?;
        }
    }
    Ok(format!("1000 specialization triples (worst rel err {worst:.1e}); scale equivariance at c in {{1e-3, 1, 1e3}}"))
}

#[test]
fn acceptance() {
    let gauss = run_coverage(&config!("gauss_sum.json"));
    let pacbayes_scn = config!("pacbayes.json");
    let pacbayes = pacbayes_weights_dimension(&pacbayes_scn)
        .and_then(|_| run_pacbayes(&pacbayes_scn).map_err(|e| e.to_string()));

    let criteria: Vec<Criterion> = vec![
        (
            "semi-empirical variance oracle equivalence",
            Box::new(oracle_equivalence),
        ),
        (
            "logarithmic bound coverage",
            Box::new(|| {
                gauss
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(logarithmic_coverage)
            }),
        ),
        (
            "scale-free bound coverage",
            Box::new(|| {
                gauss
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(scale_free_coverage)
            }),
        ),
        ("canonical pair moment condition", Box::new(canonical_pairs)),
        ("self-normalized tail checks", Box::new(tails)),
        ("subgaussian claim", Box::new(claim)),
        (
            "posterior-averaged coverage",
            Box::new(|| {
                pacbayes
                    .as_ref()
                    .map_err(|e| e.clone())
                    .and_then(pacbayes_coverage)
            }),
        ),
        (
            "exponential-moment expectations",
            Box::new(|| {
                pacbayes
                    .as_ref()
                    .map_err(|e| e.clone())
                    .and_then(moment_checks)
            }),
        ),
        ("determinism across worker counts", Box::new(determinism)),
        ("formula identities", Box::new(formula_identities)),
    ];

    let mut failed = vec![];
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
