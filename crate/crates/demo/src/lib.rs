//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers and returns a JSON string; the `*_json` functions are the same
//! operations for native callers.

use serde_json::{json, Value};
use tweedie_lab::decompose::{sensitivity_compare, taylor_coeffs, TaylorOptions};
use tweedie_lab::fit::Ecdf;
use tweedie_lab::losses::{loss_and_grad, LossKind, Sample, EPSILON_PRED};
use tweedie_lab::tweedie::{self, to_compound, CdfSeries, TweedieParams};
use wasm_bindgen::prelude::*;

pub const MAX_DRAWS: usize = 1_000_000;
const CURVE_POINTS: usize = 200;

/// Draws `n` variates and returns the histogram of positive values, the
/// empirical zero fraction, and the series CDF next to the ECDF.
pub fn distribution_json(
    mu: f64,
    phi: f64,
    p: f64,
    n: usize,
    seed: u64,
    bins: usize,
) -> Result<String, String> {
    if n == 0 || n > MAX_DRAWS || bins == 0 {
        return Err(format!("need 1 <= n <= {MAX_DRAWS} and bins >= 1"));
    }
    let params = TweedieParams::new(mu, phi, p).map_err(|e| e.to_string())?;
    let compound = to_compound(&params).map_err(|e| e.to_string())?;
    let draws = tweedie::sample(&params, n, seed).map_err(|e| e.to_string())?;
    let zeros = draws.iter().filter(|&&x| x == 0.0).count();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;

    // histogram range: a high quantile of the sample, so long tails do not
    // flatten the picture
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let hi = sorted[((n as f64 * 0.995) as usize).min(n - 1)].max(1e-9);
    let width = hi / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in draws.iter().filter(|&&x| x > 0.0 && x <= hi) {
        counts[((x / width) as usize).min(bins - 1)] += 1;
    }

    let series = CdfSeries::new(&params).map_err(|e| e.to_string())?;
    let ecdf = Ecdf::new(&draws).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = (0..=CURVE_POINTS)
        .map(|i| hi * i as f64 / CURVE_POINTS as f64)
        .collect();
    let cdf: Vec<f64> = xs
        .iter()
        .map(|&x| series.eval(x))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let emp: Vec<f64> = xs.iter().map(|&x| ecdf.eval(x)).collect();
    let ks = ecdf
        .ks_distance(|x| series.eval(x))
        .map_err(|e| e.to_string())?;

    Ok(json!({
        "params": params,
        "compound": compound,
        "zero_mass": compound.zero_mass(),
        "sample_zero_fraction": zeros as f64 / n as f64,
        "sample_mean": mean,
        "sample_variance": var,
        "variance": phi * mu.powf(p),
        "histogram": { "bin_width": width, "counts": counts },
        "cdf": { "x": xs, "series": cdf, "empirical": emp },
        "ks": ks,
    })
    .to_string())
}

fn kind_for(name: &str, p: f64) -> Result<LossKind, String> {
    LossKind::parse_with_power(name, p).map_err(|e| e.to_string())
}

/// Loss and gradient of each kind over a prediction grid for one sample.
pub fn loss_curves_json(
    target: f64,
    p: f64,
    clicked: bool,
    pred_max: f64,
) -> Result<String, String> {
    if target.is_nan() || target < 0.0 || (!clicked && target != 0.0) {
        return Err("target must be >= 0, and 0 when not clicked".into());
    }
    if !(pred_max > 0.0 && pred_max.is_finite()) {
        return Err("pred_max must be positive".into());
    }
    let sample = Sample::new(0, clicked, target);
    let mut curves = serde_json::Map::new();
    for name in ["tweedie", "logloss", "weighted", "mse"] {
        let kind = kind_for(name, p)?;
        // log-loss predictions live in (0, 1)
        let top = match kind {
            LossKind::LogLoss | LossKind::WeightedLogLoss => 1.0 - EPSILON_PRED,
            _ => pred_max,
        };
        let mut preds = Vec::with_capacity(CURVE_POINTS);
        let mut losses = Vec::with_capacity(CURVE_POINTS);
        let mut grads = Vec::with_capacity(CURVE_POINTS);
        for i in 1..=CURVE_POINTS {
            let pred = (top * i as f64 / CURVE_POINTS as f64)
                .max(EPSILON_PRED)
                .min(top);
            let (l, g) = loss_and_grad(&kind, pred, &sample).map_err(|e| e.to_string())?;
            preds.push(pred);
            losses.push(l);
            grads.push(g);
        }
        curves.insert(
            name.to_string(),
            json!({ "pred": preds, "loss": losses, "grad": grads }),
        );
    }
    Ok(json!({ "target": target, "clicked": clicked, "weight": sample.weight, "curves": Value::Object(curves) }).to_string())
}

/// Coefficients on `f, f^2, f^3` with `f = 1 - sqrt(pred)` for every kind.
pub fn taylor_json(p: f64, target: f64, window: f64) -> Result<String, String> {
    let opts = TaylorOptions {
        window,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for name in ["tweedie", "logloss", "weighted", "mse"] {
        let kind = kind_for(name, p)?;
        let c = taylor_coeffs(&kind, target, &opts).map_err(|e| e.to_string())?;
        rows.push(json!({ "loss": name, "coeffs": c.coeffs, "residual": c.residual }));
    }
    let (tweedie_c2, logloss_c2) = sensitivity_compare(p).map_err(|e| e.to_string())?;
    Ok(json!({
        "p": p,
        "target": target,
        "window": window,
        "rows": rows,
        "sensitivity": { "tweedie_c2": tweedie_c2, "logloss_c2": logloss_c2 },
    })
    .to_string())
}

#[wasm_bindgen]
pub fn distribution(
    mu: f64,
    phi: f64,
    p: f64,
    n: u32,
    seed: u32,
    bins: u32,
) -> Result<String, JsError> {
    distribution_json(mu, phi, p, n as usize, seed as u64, bins as usize)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn loss_curves(target: f64, p: f64, clicked: bool, pred_max: f64) -> Result<String, JsError> {
    loss_curves_json(target, p, clicked, pred_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn taylor(p: f64, target: f64, window: f64) -> Result<String, JsError> {
    taylor_json(p, target, window).map_err(|e| JsError::new(&e))
}
