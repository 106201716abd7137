//! The four training objectives and their derivatives in the prediction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions are floored here before any loss that divides by or takes
/// the log of the prediction.
pub const EPSILON_PRED: f64 = 1e-6;

pub const DEFAULT_TWEEDIE_POWER: f64 = 1.5;

/// One training example, derived from a session event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub title_id: usize,
    pub click_label: bool,
    /// Watch time in normalized units (seconds / watch scale).
    pub watch: f64,
    pub weight: f64,
}

impl Sample {
    /// Clicked samples are weighted by their normalized watch time, the
    /// others get unit weight.
    pub fn new(title_id: usize, click_label: bool, watch: f64) -> Self {
        let watch = if click_label { watch } else { 0.0 };
        let weight = if click_label { watch } else { 1.0 };
        Sample {
            title_id,
            click_label,
            watch,
            weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.click_label && self.watch != 0.0 {
            return Err(Error::InvalidParams(
                "unclicked sample with nonzero watch".into(),
            ));
        }
        if !(self.watch >= 0.0) || !(self.weight >= 0.0) {
            return Err(Error::InvalidParams(
                "watch and weight must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Map from raw network score to the prediction a loss consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Sigmoid,
    Exp,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    TweediePow { p: f64 },
    LogLoss,
    WeightedLogLoss,
    MeanSquared,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::TweediePow {
            p: DEFAULT_TWEEDIE_POWER,
        }
    }
}

impl LossKind {
    pub fn tweedie(p: f64) -> Result<Self> {
        check_power(p)?;
        Ok(LossKind::TweediePow { p })
    }

    pub fn link(&self) -> Link {
        match self {
            LossKind::TweediePow { .. } => Link::Exp,
            LossKind::LogLoss | LossKind::WeightedLogLoss => Link::Sigmoid,
            LossKind::MeanSquared => Link::Identity,
        }
    }

    /// Short name used on the command line and in reports.
    pub fn label(&self) -> &'static str {
        match self {
            LossKind::TweediePow { .. } => "tweedie",
            LossKind::LogLoss => "logloss",
            LossKind::WeightedLogLoss => "weighted",
            LossKind::MeanSquared => "mse",
        }
    }

    pub fn all(p: f64) -> [LossKind; 4] {
        [
            LossKind::TweediePow { p },
            LossKind::LogLoss,
            LossKind::WeightedLogLoss,
            LossKind::MeanSquared,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::TweediePow { p } => check_power(*p),
            _ => Ok(()),
        }
    }

    /// Parses a label, using `p` for the Tweedie power.
    pub fn parse_with_power(s: &str, p: f64) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tweedie" => LossKind::tweedie(p),
            "logloss" | "pointwise" => Ok(LossKind::LogLoss),
            "weighted" => Ok(LossKind::WeightedLogLoss),
            "mse" | "regression" => Ok(LossKind::MeanSquared),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss kind {other:?} (expected tweedie, logloss, weighted or mse)"
            ))),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::parse_with_power(s, DEFAULT_TWEEDIE_POWER)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::TweediePow { p } => write!(f, "tweedie(p={p})"),
            other => f.write_str(other.label()),
        }
    }
}

fn check_power(p: f64) -> Result<()> {
    if p > 1.0 && p < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "Tweedie power must lie in (1, 2), got {p}"
        )))
    }
}

fn check_positive_pred(pred: f64) -> Result<()> {
    if pred >= EPSILON_PRED && pred.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "prediction {pred} below {EPSILON_PRED}"
        )))
    }
}

fn check_probability(pred: f64) -> Result<()> {
    if (EPSILON_PRED..=1.0 - EPSILON_PRED).contains(&pred) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "probability {pred} outside [{EPSILON_PRED}, 1 - {EPSILON_PRED}]"
        )))
    }
}

/// Negative Tweedie log-likelihood without the normalizer:
/// `-y * mu^(1-p) / (1-p) + mu^(2-p) / (2-p)`.
pub fn tweedie_loss(pred: f64, target: f64, p: f64) -> Result<f64> {
    check_positive_pred(pred)?;
    check_power(p)?;
    if !(target >= 0.0) {
        return Err(Error::Domain(format!(
            "Tweedie target must be >= 0, got {target}"
        )));
    }
    Ok(-target * pred.powf(1.0 - p) / (1.0 - p) + pred.powf(2.0 - p) / (2.0 - p))
}

pub fn tweedie_grad(pred: f64, target: f64, p: f64) -> Result<f64> {
    check_positive_pred(pred)?;
    check_power(p)?;
    if !(target >= 0.0) {
        return Err(Error::Domain(format!(
            "Tweedie target must be >= 0, got {target}"
        )));
    }
    Ok(-target * pred.powf(-p) + pred.powf(1.0 - p))
}

pub fn logloss(pred: f64, click_label: bool) -> Result<f64> {
    check_probability(pred)?;
    Ok(if click_label {
        -pred.ln()
    } else {
        -(1.0 - pred).ln()
    })
}

pub fn logloss_grad(pred: f64, click_label: bool) -> Result<f64> {
    check_probability(pred)?;
    Ok(if click_label {
        -1.0 / pred
    } else {
        1.0 / (1.0 - pred)
    })
}

pub fn weighted_logloss(pred: f64, click_label: bool, weight: f64) -> Result<f64> {
    check_weight(weight)?;
    Ok(weight * logloss(pred, click_label)?)
}

pub fn weighted_logloss_grad(pred: f64, click_label: bool, weight: f64) -> Result<f64> {
    check_weight(weight)?;
    Ok(weight * logloss_grad(pred, click_label)?)
}

fn check_weight(weight: f64) -> Result<()> {
    if weight >= 0.0 && weight.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "sample weight must be >= 0, got {weight}"
        )))
    }
}

pub fn mse_loss(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    d * d
}

pub fn mse_grad(pred: f64, target: f64) -> f64 {
    2.0 * (pred - target)
}

/// Loss and its derivative in `pred` for one sample. Regression kinds
/// regress on `sample.watch`.
pub fn loss_and_grad(kind: &LossKind, pred: f64, sample: &Sample) -> Result<(f64, f64)> {
    match *kind {
        LossKind::TweediePow { p } => Ok((
            tweedie_loss(pred, sample.watch, p)?,
            tweedie_grad(pred, sample.watch, p)?,
        )),
        LossKind::LogLoss => Ok((
            logloss(pred, sample.click_label)?,
            logloss_grad(pred, sample.click_label)?,
        )),
        LossKind::WeightedLogLoss => Ok((
            weighted_logloss(pred, sample.click_label, sample.weight)?,
            weighted_logloss_grad(pred, sample.click_label, sample.weight)?,
        )),
        LossKind::MeanSquared => Ok((mse_loss(pred, sample.watch), mse_grad(pred, sample.watch))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn tweedie_values() {
        assert!((tweedie_loss(1.0, 0.0, 1.5).unwrap() - 2.0).abs() < 1e-15);
        assert!((tweedie_loss(1.0, 1.0, 1.5).unwrap() - 4.0).abs() < 1e-15);
        assert!((tweedie_loss(0.25, 1.0, 1.5).unwrap() - 5.0).abs() < 1e-14);
        assert!((tweedie_grad(1.0, 2.0, 1.5).unwrap() + 1.0).abs() < 1e-15);
        for &p in &[1.1, 1.5, 1.9] {
            for &t in &[0.01, 1.0, 7.3] {
                assert!(tweedie_grad(t, t, p).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tweedie_domain() {
        assert!(matches!(
            tweedie_loss(1e-7, 1.0, 1.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(tweedie_grad(0.0, 1.0, 1.5), Err(Error::Domain(_))));
        assert!(tweedie_loss(1.0, -1.0, 1.5).is_err());
        assert!(tweedie_loss(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn logloss_values() {
        assert!((logloss(0.5, true).unwrap() - LN2).abs() < 1e-15);
        assert!((logloss(0.5, false).unwrap() - LN2).abs() < 1e-15);
        assert!((logloss(0.9, true).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-14);
        assert!(logloss(0.0, true).is_err());
        assert!(logloss(1.0, false).is_err());
        assert!(logloss(1.5, false).is_err());
    }

    #[test]
    fn weighted_values() {
        assert!((weighted_logloss(0.5, true, 10.0).unwrap() - 10.0 * LN2).abs() < 1e-14);
        assert!((weighted_logloss(0.5, false, 1.0).unwrap() - LN2).abs() < 1e-15);
        assert_eq!(weighted_logloss(0.3, true, 0.0).unwrap(), 0.0);
        assert_eq!(weighted_logloss(0.3, false, 0.0).unwrap(), 0.0);
        assert!(weighted_logloss(0.3, false, -1.0).is_err());
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse_loss(3.0, 1.0), 4.0);
        assert_eq!(mse_loss(-2.5, -2.5), 0.0);
        assert_eq!(mse_grad(3.0, 1.0), 4.0);
    }

    #[test]
    fn dispatch() {
        let kind = LossKind::tweedie(1.5).unwrap();
        let (l, g) = loss_and_grad(&kind, 1.0, &Sample::new(0, false, 0.0)).unwrap();
        assert!((l - 2.0).abs() < 1e-15 && (g - 1.0).abs() < 1e-15);

        let (l, g) = loss_and_grad(&LossKind::LogLoss, 0.5, &Sample::new(0, true, 1.0)).unwrap();
        assert!((l - LN2).abs() < 1e-15 && (g + 2.0).abs() < 1e-15);

        let (l, g) =
            loss_and_grad(&LossKind::MeanSquared, 0.0, &Sample::new(0, false, 0.0)).unwrap();
        assert_eq!((l, g), (0.0, 0.0));
    }

    #[test]
    fn sample_weighting() {
        let s = Sample::new(3, true, 1.7);
        assert_eq!((s.watch, s.weight), (1.7, 1.7));
        let s = Sample::new(3, false, 1.7);
        assert_eq!((s.watch, s.weight), (0.0, 1.0));
        assert!(s.validate().is_ok());
        let bad = Sample { watch: 1.0, ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kind_labels_round_trip() {
        for kind in LossKind::all(1.5) {
            assert_eq!(kind.label().parse::<LossKind>().unwrap(), kind);
        }
        assert!("hinge".parse::<LossKind>().is_err());
        assert!(LossKind::parse_with_power("tweedie", 2.5).is_err());
        assert_eq!(LossKind::default(), LossKind::TweediePow { p: 1.5 });
    }

    #[test]
    fn tweedie_minimum_at_target() {
        // golden-section search over log(pred)
        for &p in &[1.2, 1.5, 1.8] {
            for &target in &[0.05, 0.7, 3.0] {
                let f = |u: f64| tweedie_loss(u.exp(), target, p).unwrap();
                let (mut lo, mut hi) = ((target / 50.0).ln(), (target * 50.0).ln());
                let r = (5f64.sqrt() - 1.0) / 2.0;
                for _ in 0..200 {
                    let a = hi - r * (hi - lo);
                    let b = lo + r * (hi - lo);
                    if f(a) < f(b) {
                        hi = b;
                    } else {
                        lo = a;
                    }
                }
                let arg = (0.5 * (lo + hi)).exp();
                assert!(
                    (arg - target).abs() < 1e-6,
                    "p={p} target={target} argmin={arg}"
                );
            }
        }
    }

    #[test]
    fn tweedie_increasing_at_zero_target() {
        for &p in &[1.2, 1.5, 1.8] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..2000 {
                let pred = EPSILON_PRED * 1.01f64.powi(i);
                let l = tweedie_loss(pred, 0.0, p).unwrap();
                assert!(l > prev);
                prev = l;
            }
        }
    }

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn close(analytic: f64, numeric: f64, tol: f64) -> bool {
        (analytic - numeric).abs() <= tol * analytic.abs().max(numeric.abs()).max(1e-8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn tweedie_grad_matches_finite_difference(pred in 0.01f64..20.0, target in 0.0f64..10.0, p in 1.05f64..1.95) {
            let h = 1e-5 * pred;
            let num = central_diff(|x| tweedie_loss(x, target, p).unwrap(), pred, h);
            let ana = tweedie_grad(pred, target, p).unwrap();
            prop_assert!(close(ana, num, 1e-6), "{ana} vs {num}");
        }

        #[test]
        fn logloss_grad_matches_finite_difference(pred in 0.01f64..0.99, y in any::<bool>(), w in 0.0f64..10.0) {
            let h = 1e-5 * pred.min(1.0 - pred);
            let num = central_diff(|x| logloss(x, y).unwrap(), pred, h);
            prop_assert!(close(logloss_grad(pred, y).unwrap(), num, 1e-6));
            let num = central_diff(|x| weighted_logloss(x, y, w).unwrap(), pred, h);
            prop_assert!(close(weighted_logloss_grad(pred, y, w).unwrap(), num, 1e-6));
        }

        #[test]
        fn mse_grad_matches_finite_difference(pred in -10.0f64..10.0, target in -10.0f64..10.0) {
            let num = central_diff(|x| mse_loss(x, target), pred, 1e-5);
            prop_assert!((mse_grad(pred, target) - num).abs() < 1e-6 * (1.0 + num.abs()));
        }

        #[test]
        fn unit_weight_is_plain_logloss(pred in 0.001f64..0.999, y in any::<bool>()) {
            prop_assert_eq!(weighted_logloss(pred, y, 1.0).unwrap(), logloss(pred, y).unwrap());
        }
    }
}
