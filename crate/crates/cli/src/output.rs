//! Report payloads, CSV tables and the human summary.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, in both JSON and CSV.

use std::fmt::Write;

use serde::Serialize;
use varbound_core::canonical::{ClaimReport, MgfReport, TailReport};
use varbound_core::harness::{CoverageReport, EstimateReport, PacBayesReport, TailsReport};
use varbound_core::pacbayes::{MomentPart, MomentReport};
use varbound_core::{EstimateWithError, Verdict};

#[derive(Serialize)]
#[serde(untagged)]
pub enum Report {
    Estimate(EstimateReport),
    Coverage(CoverageReport),
    Canonical(MgfReport),
    Pacbayes(PacBayesReport),
    Tails(TailsReport),
    Claim(ClaimReport),
}

pub struct Table {
    name: &'static str,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Table {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = format!("# {}\n{}\n", self.name, self.header.join(","));
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Same digits serde_json would write for a finite value.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn verdict(v: Verdict) -> String {
    v.as_str().into()
}

fn coverage_table(r: &CoverageReport) -> Vec<Table> {
    let mut cells = Table::new(
        "coverage",
        &[
            "bound",
            "x",
            "y",
            "trials",
            "violations",
            "robust_violations",
            "rate",
            "nominal",
            "stderr",
            "threshold",
            "verdict",
        ],
    );
    for c in &r.cells {
        cells.push(vec![
            c.bound.as_str().into(),
            num(c.x),
            opt(c.y),
            c.trials.to_string(),
            c.violations.to_string(),
            c.robust_violations.to_string(),
            num(c.rate),
            num(c.nominal),
            num(c.stderr),
            num(c.threshold),
            verdict(c.verdict),
        ]);
    }
    let mut summary = Table::new(
        "coverage_summary",
        &[
            "mean",
            "mean_stderr",
            "mean_variance",
            "mean_variance_stderr",
            "verdict",
        ],
    );
    summary.push(vec![
        num(r.mean.value),
        num(r.mean.stderr),
        opt(r.mean_variance.map(|e| e.value)),
        opt(r.mean_variance.map(|e| e.stderr)),
        verdict(r.verdict),
    ]);
    vec![cells, summary]
}

fn moment_table(r: &MomentReport) -> Table {
    let mut t = Table::new(
        "moments",
        &[
            "part",
            "parameter",
            "estimate",
            "stderr",
            "bound",
            "heavy_tail",
            "verdict",
        ],
    );
    for row in &r.rows {
        t.push(vec![
            part_name(row.part).into(),
            num(row.parameter),
            num(row.estimate),
            num(row.stderr),
            num(row.bound),
            row.heavy_tail.to_string(),
            verdict(row.verdict),
        ]);
    }
    t
}

fn part_name(p: MomentPart) -> &'static str {
    match p {
        MomentPart::MixtureTail => "mixture_tail",
        MomentPart::GaussianMixture => "gaussian_mixture",
    }
}

fn tail_rows(t: &mut Table, r: &TailReport, name: &str) {
    for row in &r.rows {
        t.push(vec![
            name.into(),
            num(r.parameter),
            num(row.t),
            row.exceedances.to_string(),
            num(row.frequency),
            num(row.bound),
            num(row.margin),
            verdict(row.verdict),
        ]);
    }
}

fn estimate_rows(t: &mut Table, label: &str, e: &EstimateWithError) {
    t.push(vec![
        label.into(),
        num(e.value),
        num(e.stderr),
        e.replicates.to_string(),
    ]);
}

impl Report {
    pub fn verdict(&self) -> Verdict {
        match self {
            Report::Estimate(_) => Verdict::Pass,
            Report::Coverage(r) => r.verdict,
            Report::Canonical(r) => r.verdict,
            Report::Pacbayes(r) => r.verdict,
            Report::Tails(r) => r.verdict,
            Report::Claim(r) => r.verdict,
        }
    }

    pub fn tables(&self) -> Vec<Table> {
        match self {
            Report::Coverage(r) => coverage_table(r),
            Report::Pacbayes(r) => {
                let mut out = r.coverage.as_ref().map(coverage_table).unwrap_or_default();
                out.extend(r.moments.as_ref().map(moment_table));
                out
            }
            Report::Canonical(r) => {
                let mut t = Table::new(
                    "mgf",
                    &[
                        "lambda",
                        "estimate",
                        "stderr",
                        "unstable",
                        "heavy_tail",
                        "verdict",
                    ],
                );
                for row in &r.rows {
                    t.push(vec![
                        num(row.lambda),
                        num(row.estimate),
                        num(row.stderr),
                        row.unstable.to_string(),
                        row.heavy_tail.to_string(),
                        verdict(row.verdict),
                    ]);
                }
                vec![t]
            }
            Report::Tails(r) => {
                let mut t = Table::new(
                    "tails",
                    &[
                        "test",
                        "parameter",
                        "t",
                        "exceedances",
                        "frequency",
                        "bound",
                        "margin",
                        "verdict",
                    ],
                );
                tail_rows(&mut t, &r.expected_scale, "expected_scale");
                tail_rows(&mut t, &r.log_corrected, "log_corrected");
                let mut eb = Table::new("mean_b", &["quantity", "value", "stderr", "replicates"]);
                estimate_rows(&mut eb, "mean_b", &r.mean_b);
                vec![t, eb]
            }
            Report::Claim(r) => {
                let mut t = Table::new(
                    "claim",
                    &["x", "lhs", "lhs_stderr", "rhs", "margin", "verdict"],
                );
                for row in &r.rows {
                    t.push(vec![
                        num(row.x),
                        num(row.lhs.value),
                        num(row.lhs.stderr),
                        num(row.rhs),
                        num(row.margin),
                        verdict(row.verdict),
                    ]);
                }
                let mut c = Table::new("c_alpha", &["alpha", "value", "stderr", "replicates"]);
                c.push(vec![
                    num(r.alpha),
                    num(r.c_alpha.value),
                    num(r.c_alpha.stderr),
                    r.c_alpha.replicates.to_string(),
                ]);
                vec![t, c]
            }
            Report::Estimate(r) => {
                let mut v = Table::new(
                    "variance",
                    &[
                        "k",
                        "sample",
                        "vks",
                        "vks_stderr",
                        "vks_exact",
                        "ves",
                        "ves_stderr",
                    ],
                );
                for k in 0..r.sample.len() {
                    v.push(vec![
                        k.to_string(),
                        num(r.sample[k]),
                        num(r.vks.per_k[k].value),
                        num(r.vks.per_k[k].stderr),
                        opt(r.vks_exact.as_ref().map(|b| b.per_k[k].value)),
                        num(r.ves.per_k[k].value),
                        num(r.ves.per_k[k].stderr),
                    ]);
                }
                let mut s = Table::new("totals", &["quantity", "value", "stderr", "replicates"]);
                s.push(vec!["value".into(), num(r.value), num(0.0), "0".into()]);
                s.push(vec![
                    "gap".into(),
                    num(r.gap),
                    num(r.mean.stderr),
                    r.mean.replicates.to_string(),
                ]);
                estimate_rows(&mut s, "mean", &r.mean);
                estimate_rows(&mut s, "vks", &r.vks.total);
                if let Some(b) = &r.vks_exact {
                    estimate_rows(&mut s, "vks_exact", &b.total);
                }
                estimate_rows(&mut s, "ves", &r.ves.total);
                if let Some(e) = &r.mean_variance {
                    estimate_rows(&mut s, "mean_variance", e);
                }
                let mut b = Table::new(
                    "bounds",
                    &[
                        "bound",
                        "x",
                        "y",
                        "radius",
                        "failure_probability",
                        "vacuous",
                    ],
                );
                for e in &r.bounds {
                    b.push(vec![
                        e.bound.as_str().into(),
                        num(e.x),
                        opt(e.y),
                        num(e.radius),
                        num(e.failure_probability),
                        e.vacuous.to_string(),
                    ]);
                }
                vec![v, s, b]
            }
        }
    }

    /// Short human-readable account for standard error.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let cov = |out: &mut String, r: &CoverageReport| {
            for c in &r.cells {
                let y = c.y.map(|y| format!(" y={y:.4e}")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{:<15} x={:<5}{y}: {}/{} violations (robust {}), rate {:.5} vs nominal {:.5} -> {}",
                    c.bound.as_str(),
                    c.x,
                    c.violations,
                    c.trials,
                    c.robust_violations,
                    c.rate,
                    c.nominal,
                    c.verdict.as_str()
                );
            }
        };
        match self {
            Report::Coverage(r) => cov(&mut out, r),
            Report::Pacbayes(r) => {
                if let Some(c) = &r.coverage {
                    cov(&mut out, c);
                }
                if let Some(l) = &r.moments {
                    for row in &l.rows {
                        let _ = writeln!(
                            out,
                            "{} at {}: {:.5} +- {:.5} vs {:.5} -> {}",
                            part_name(row.part),
                            row.parameter,
                            row.estimate,
                            row.stderr,
                            row.bound,
                            row.verdict.as_str()
                        );
                    }
                }
            }
            Report::Canonical(r) => {
                for row in &r.rows {
                    let _ = writeln!(
                        out,
                        "lambda={:<5} E exp(..) = {:.5} +- {:.5} -> {}",
                        row.lambda,
                        row.estimate,
                        row.stderr,
                        row.verdict.as_str()
                    );
                }
            }
            Report::Tails(r) => {
                for (name, t) in [
                    ("expected_scale", &r.expected_scale),
                    ("log_corrected", &r.log_corrected),
                ] {
                    for row in &t.rows {
                        let _ = writeln!(
                            out,
                            "{name} t={:.4}: frequency {:.5} vs bound {:.5} -> {}",
                            row.t,
                            row.frequency,
                            row.bound,
                            row.verdict.as_str()
                        );
                    }
                }
            }
            Report::Claim(r) => {
                let _ = writeln!(
                    out,
                    "C({}) = {:.5} +- {:.5}",
                    r.alpha, r.c_alpha.value, r.c_alpha.stderr
                );
                for row in &r.rows {
                    let _ = writeln!(
                        out,
                        "x={}: {:.5} vs {:.5} + {:.5} -> {}",
                        row.x,
                        row.lhs.value,
                        row.rhs,
                        row.margin,
                        row.verdict.as_str()
                    );
                }
            }
            Report::Estimate(r) => {
                let _ = writeln!(out, "f(S) = {:.6}, gap = {:.6}", r.value, r.gap);
                let _ = writeln!(
                    out,
                    "V^KS = {:.6} +- {:.6}",
                    r.vks.total.value, r.vks.total.stderr
                );
                if let Some(b) = &r.vks_exact {
                    let _ = writeln!(out, "V^KS exact = {:.6}", b.total.value);
                }
                let _ = writeln!(
                    out,
                    "V^ES = {:.6} +- {:.6}",
                    r.ves.total.value, r.ves.total.stderr
                );
                for b in &r.bounds {
                    let _ = writeln!(
                        out,
                        "{} x={}: radius {:.6}, failure probability {:.5}",
                        b.bound.as_str(),
                        b.x,
                        b.radius,
                        b.failure_probability
                    );
                }
            }
        }
        out
    }
}
