use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The nominal failure probability is at least one; nothing to check.
    Vacuous,
    /// Monte Carlo error too large (or non-finite) to decide.
    Inconclusive,
}

impl Verdict {
    /// Fail dominates inconclusive, which dominates pass. Vacuous cells count as passing.
    pub fn combine<I: IntoIterator<Item = Verdict>>(verdicts: I) -> Verdict {
        let mut out = Verdict::Pass;
        for v in verdicts {
            match v {
                Verdict::Fail => return Verdict::Fail,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Pass | Verdict::Vacuous => {}
            }
        }
        out
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Vacuous => "vacuous",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Upper acceptance threshold for an empirical frequency against a nominal
/// probability: `nominal + width * sqrt(nominal (1 - nominal) / trials)`.
pub fn binomial_threshold(nominal: f64, trials: u64, width: f64) -> (f64, f64) {
    let p = nominal.clamp(0.0, 1.0);
    let stderr = (p * (1.0 - p) / trials as f64).sqrt();
    (nominal + width * stderr, stderr)
}

/// Verdict for an empirical rate against a nominal failure probability.
pub fn frequency_verdict(rate: f64, nominal: f64, trials: u64, width: f64) -> Verdict {
    if nominal >= 1.0 {
        return Verdict::Vacuous;
    }
    let (threshold, _) = binomial_threshold(nominal, trials, width);
    if rate <= threshold {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Width, in standard errors, of every one-sided acceptance band.
pub const MARGIN_STDERRS: f64 = 3.0;
