//! Confidence radii for `|f(S) - E f(S)|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    /// `2 sqrt((V + E V) x)`, failure probability `sqrt(2) e^{-x}`.
    ScaleFree,
    /// `sqrt(2 (V + y)(1 + log(1 + V/y)/2) x)`, failure probability `e^{-x}`.
    Logarithmic,
    /// Bounded-differences baseline with `delta = e^{-x}`.
    Mcdiarmid,
    PbScaleFree,
    PbLogarithmic,
}

impl BoundId {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundId::ScaleFree => "scale_free",
            BoundId::Logarithmic => "logarithmic",
            BoundId::Mcdiarmid => "mcdiarmid",
            BoundId::PbScaleFree => "pb_scale_free",
            BoundId::PbLogarithmic => "pb_logarithmic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub bound: BoundId,
    pub radius: f64,
    pub failure_probability: f64,
    /// The failure probability is at least one, so the bound asserts nothing.
    pub vacuous: bool,
}

impl BoundResult {
    pub(crate) fn new(bound: BoundId, radius: f64, failure_probability: f64) -> Self {
        BoundResult {
            bound,
            radius,
            failure_probability,
            vacuous: failure_probability >= 1.0,
        }
    }
}

pub(crate) fn nonneg(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be finite and >= 0, got {v}"),
        ))
    }
}

pub(crate) fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

pub(crate) fn at_least_one(v: f64) -> Result<()> {
    if v.is_finite() && v >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "x",
            format!("x below 1 invalidates the logarithmic tail regime (x >= 1 required), got {v}"),
        ))
    }
}

pub fn bound_scale_free(v: f64, ev: f64, x: f64) -> Result<BoundResult> {
    nonneg("v", v)?;
    nonneg("ev", ev)?;
    positive("x", x)?;
    Ok(BoundResult::new(
        BoundId::ScaleFree,
        2.0 * ((v + ev) * x).sqrt(),
        std::f64::consts::SQRT_2 * (-x).exp(),
    ))
}

pub fn bound_logarithmic(v: f64, y: f64, x: f64) -> Result<BoundResult> {
    nonneg("v", v)?;
    positive("y", y)?;
    at_least_one(x)?;
    let radius = (2.0 * (v + y) * (1.0 + 0.5 * (v / y).ln_1p()) * x).sqrt();
    Ok(BoundResult::new(BoundId::Logarithmic, radius, (-x).exp()))
}

/// `y = 1/n^2`.
pub fn inverse_square_y(n: usize) -> f64 {
    let n = n as f64;
    1.0 / (n * n)
}

/// Two-sided McDiarmid radius `sqrt(sum c_k^2 ln(2/delta) / 2)`.
pub fn mcdiarmid_radius(diff_bounds: &[f64], delta: f64) -> Result<f64> {
    for (k, c) in diff_bounds.iter().enumerate() {
        nonneg(&format!("diff_bounds[{k}]"), *c)?;
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(
            "delta",
            format!("must lie in (0, 1), got {delta}"),
        ));
    }
    let sum_sq: f64 = diff_bounds.iter().map(|c| c * c).sum();
    Ok((0.5 * sum_sq * (2.0 / delta).ln()).sqrt())
}

/// McDiarmid baseline at `delta = e^{-x}`.
pub fn bound_mcdiarmid(diff_bounds: &[f64], x: f64) -> Result<BoundResult> {
    positive("x", x)?;
    let delta = (-x).exp();
    Ok(BoundResult::new(
        BoundId::Mcdiarmid,
        mcdiarmid_radius(diff_bounds, delta)?,
        delta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn scale_free_examples() {
        assert_eq!(bound_scale_free(0.0, 0.0, 1.0).unwrap().radius, 0.0);
        assert_eq!(bound_scale_free(1.0, 1.0, 2.0).unwrap().radius, 4.0);
        assert!(close(
            bound_scale_free(4.0, 2.0, 1.0).unwrap().radius,
            4.898979485566356,
            1e-14
        ));
    }

    #[test]
    fn scale_free_vacuous_region() {
        let half_ln2 = 0.5 * 2f64.ln();
        assert!(bound_scale_free(1.0, 1.0, half_ln2 * 0.99).unwrap().vacuous);
        assert!(!bound_scale_free(1.0, 1.0, half_ln2 * 1.01).unwrap().vacuous);
    }

    #[test]
    fn scale_free_errors() {
        assert!(bound_scale_free(1.0, 1.0, 0.0).is_err());
        assert!(bound_scale_free(-1.0, 1.0, 1.0).is_err());
        assert!(bound_scale_free(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn logarithmic_examples() {
        let r = bound_logarithmic(0.0, 1.0, 1.0).unwrap();
        assert!(close(r.radius, 2f64.sqrt(), 1e-15));
        assert!(close(r.failure_probability, (-1f64).exp(), 1e-15));
        assert!(close(
            bound_logarithmic(4.0, 1.0, 1.0).unwrap().radius,
            4.24819839016147,
            1e-13
        ));
    }

    #[test]
    fn logarithmic_errors() {
        assert!(matches!(
            bound_logarithmic(1.0, 1.0, 0.5),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(bound_logarithmic(1.0, 0.0, 1.0).is_err());
        assert!(bound_logarithmic(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn logarithmic_uses_log1p() {
        // v/y = 1e-18: the naive ln(1 + v/y) rounds to zero, log1p does not.
        let r = bound_logarithmic(1e-18, 1.0, 1.0).unwrap();
        let expected = (2.0_f64 * (1.0 + 1e-18) * (1.0 + 0.5e-18)).sqrt();
        assert!(close(r.radius, expected, 1e-15));
    }

    #[test]
    fn inverse_square_specialization() {
        let (v, n, x) = (0.37, 12usize, 2.5);
        let y = inverse_square_y(n);
        let nf = n as f64;
        let intro =
            (2.0 * (v + 1.0 / (nf * nf)) * (1.0 + 0.5 * (1.0 + nf * nf * v).ln()) * x).sqrt();
        assert!(close(
            bound_logarithmic(v, y, x).unwrap().radius,
            intro,
            1e-12
        ));
    }

    #[test]
    fn mcdiarmid_examples() {
        let two_e2 = 2.0 * (-2f64).exp();
        assert!(close(
            mcdiarmid_radius(&[1.0; 4], two_e2).unwrap(),
            2.0,
            1e-14
        ));
        assert_eq!(mcdiarmid_radius(&[0.0; 3], 0.1).unwrap(), 0.0);
        let two_over_e = 2.0 / std::f64::consts::E;
        assert!(close(
            mcdiarmid_radius(&[2.0, 0.0], two_over_e).unwrap(),
            2f64.sqrt(),
            1e-14
        ));
        assert!(mcdiarmid_radius(&[1.0], 1.0).is_err());
        assert!(mcdiarmid_radius(&[-1.0], 0.5).is_err());
    }
}
