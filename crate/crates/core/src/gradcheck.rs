//! Finite-difference verification of every loss gradient and of the
//! ranker's backpropagation over randomly drawn configurations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{loss_and_grad, LossKind, Sample};
use crate::ranker::{compare_grads, numeric_grad, relative_error, RankerModel};
use crate::rng;

pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Central differences are meaningless across a rectifier kink, so random
/// configurations keep every hidden input at least this far from zero.
const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub cases: usize,
    pub seed: u64,
    pub p: f64,
    pub tolerance: f64,
    /// Scales every analytic gradient by `1 + corrupt`; a negative control.
    pub corrupt: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            cases: 100,
            seed: 0,
            p: 1.5,
            tolerance: DEFAULT_TOLERANCE,
            corrupt: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn random_sample<R: Rng>(rng: &mut R, title_id: usize) -> Sample {
    let clicked = rng.random_bool(0.5);
    let watch = if clicked {
        rng.random_range(0.05..3.0)
    } else {
        0.0
    };
    Sample::new(title_id, clicked, watch)
}

fn random_pred<R: Rng>(rng: &mut R, kind: &LossKind) -> f64 {
    match kind {
        LossKind::LogLoss | LossKind::WeightedLogLoss => rng.random_range(0.02..0.98),
        LossKind::TweediePow { .. } => rng.random_range(0.05..4.0),
        LossKind::MeanSquared => rng.random_range(-3.0..3.0),
    }
}

fn loss_row(kind: &LossKind, opts: &SuiteOptions) -> Result<SuiteRow> {
    let mut rng = rng::stream(opts.seed, "gradcheck-loss", &[]);
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let sample = random_sample(&mut rng, 0);
        let pred = random_pred(&mut rng, kind);
        let h = 1e-5 * pred.abs().max(1e-2);
        let (_, grad) = loss_and_grad(kind, pred, &sample)?;
        let up = loss_and_grad(kind, pred + h, &sample)?.0;
        let down = loss_and_grad(kind, pred - h, &sample)?.0;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(grad * (1.0 + opts.corrupt), numeric));
    }
    Ok(SuiteRow {
        name: format!("loss/{}", kind.label()),
        cases: opts.cases,
        max_rel_error: worst,
        passed: worst < opts.tolerance,
    })
}

fn ranker_row(kind: &LossKind, opts: &SuiteOptions) -> Result<SuiteRow> {
    let mut rng = rng::stream(opts.seed, "gradcheck-ranker", &[]);
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let (model, title) = loop {
            let n_titles = rng.random_range(1..=8);
            let model = RankerModel::new(n_titles, *kind, rng.random());
            let title = rng.random_range(0..n_titles);
            if model
                .hidden_preactivations(title)?
                .iter()
                .all(|a| a.abs() > KINK_MARGIN)
            {
                break (model, title);
            }
        };
        let sample = random_sample(&mut rng, title);
        let analytic: Vec<f64> = model
            .sample_grad(&sample)?
            .1
            .values()
            .iter()
            .map(|g| g * (1.0 + opts.corrupt))
            .collect();
        let numeric = numeric_grad(&model, &sample)?;
        worst = worst.max(compare_grads(&analytic, &numeric).max_rel_error);
    }
    Ok(SuiteRow {
        name: format!("ranker/{}", kind.label()),
        cases: opts.cases,
        max_rel_error: worst,
        passed: worst < opts.tolerance,
    })
}

/// One row per loss kind for the loss derivative, then one per kind for
/// the full network.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let kinds = LossKind::all(opts.p);
    for k in &kinds {
        k.validate()?;
    }
    let mut rows = Vec::with_capacity(2 * kinds.len());
    for kind in &kinds {
        rows.push(loss_row(kind, opts)?);
    }
    for kind in &kinds {
        rows.push(ranker_row(kind, opts)?);
    }
    Ok(rows)
}
