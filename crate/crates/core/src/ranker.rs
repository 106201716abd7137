//! Title-embedding ranker: `embedding(16) -> dense(8) + relu -> dense(1)`,
//! trained by mini-batch SGD with hand-written backpropagation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_and_grad, Link, LossKind, Sample, EPSILON_PRED};
use crate::rng;

pub const EMBED_DIM: usize = 16;
pub const HIDDEN_DIM: usize = 8;

/// Raw scores are clamped to this range before the exponential link.
pub const EXP_LINK_CLAMP: f64 = 30.0;

const EMBED_INIT_SD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 256,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // a zero rate is allowed: it freezes the model
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub kind: LossKind,
    /// `n_titles x EMBED_DIM`, row-major.
    pub embeddings: Vec<f64>,
    /// `HIDDEN_DIM x EMBED_DIM`, row-major (output unit major).
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, Copy)]
struct Activations {
    pre: [f64; HIDDEN_DIM],
    hidden: [f64; HIDDEN_DIM],
    z: f64,
}

/// Parameter gradient with the same layout as [`RankerModel::flat_params`],
/// except that only the embedding row of `title_id` is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub title_id: usize,
    pub embedding: [f64; EMBED_DIM],
    pub w1: [f64; HIDDEN_DIM * EMBED_DIM],
    pub b1: [f64; HIDDEN_DIM],
    pub w2: [f64; HIDDEN_DIM],
    pub b2: f64,
}

impl ParamGrad {
    fn zero(title_id: usize) -> Self {
        ParamGrad {
            title_id,
            embedding: [0.0; EMBED_DIM],
            w1: [0.0; HIDDEN_DIM * EMBED_DIM],
            b1: [0.0; HIDDEN_DIM],
            w2: [0.0; HIDDEN_DIM],
            b2: 0.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(EMBED_DIM + HIDDEN_DIM * (EMBED_DIM + 2) + 1);
        out.extend_from_slice(&self.embedding);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }
}

/// Prediction for a raw score under `link`.
pub fn apply_link(link: Link, z: f64) -> f64 {
    match link {
        Link::Sigmoid => sigmoid(z),
        Link::Exp => z.clamp(-EXP_LINK_CLAMP, EXP_LINK_CLAMP).exp(),
        Link::Identity => z,
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Prediction fed to the loss and its derivative in `z`. Predictions are
/// kept inside the loss domain; where a clamp is active the derivative is 0.
fn loss_pred(link: Link, z: f64) -> (f64, f64) {
    match link {
        Link::Sigmoid => {
            let s = sigmoid(z);
            if s < EPSILON_PRED {
                (EPSILON_PRED, 0.0)
            } else if s > 1.0 - EPSILON_PRED {
                (1.0 - EPSILON_PRED, 0.0)
            } else {
                (s, s * (1.0 - s))
            }
        }
        Link::Exp => {
            if z.abs() >= EXP_LINK_CLAMP {
                (apply_link(link, z).max(EPSILON_PRED), 0.0)
            } else {
                let e = z.exp();
                if e < EPSILON_PRED {
                    (EPSILON_PRED, 0.0)
                } else {
                    (e, e)
                }
            }
        }
        Link::Identity => (z, 1.0),
    }
}

impl RankerModel {
    /// Fresh model: embeddings `N(0, 0.01^2)`, dense weights Glorot-uniform,
    /// biases zero.
    pub fn new(n_titles: usize, kind: LossKind, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "ranker-init", &[n_titles as u64]);
        let embeddings = (0..n_titles * EMBED_DIM)
            .map(|_| EMBED_INIT_SD * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let limit1 = (6.0 / (EMBED_DIM + HIDDEN_DIM) as f64).sqrt();
        let w1 = (0..HIDDEN_DIM * EMBED_DIM)
            .map(|_| rng.random_range(-limit1..limit1))
            .collect();
        let limit2 = (6.0 / (HIDDEN_DIM + 1) as f64).sqrt();
        let w2 = (0..HIDDEN_DIM)
            .map(|_| rng.random_range(-limit2..limit2))
            .collect();
        RankerModel {
            kind,
            embeddings,
            w1,
            b1: vec![0.0; HIDDEN_DIM],
            w2,
            b2: 0.0,
        }
    }

    /// All parameters zero.
    pub fn zeros(n_titles: usize, kind: LossKind) -> Self {
        RankerModel {
            kind,
            embeddings: vec![0.0; n_titles * EMBED_DIM],
            w1: vec![0.0; HIDDEN_DIM * EMBED_DIM],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; HIDDEN_DIM],
            b2: 0.0,
        }
    }

    pub fn n_titles(&self) -> usize {
        self.embeddings.len() / EMBED_DIM
    }

    fn check_title(&self, title_id: usize) -> Result<()> {
        if title_id < self.n_titles() {
            Ok(())
        } else {
            Err(Error::UnknownTitle(title_id))
        }
    }

    fn embedding(&self, title_id: usize) -> &[f64] {
        &self.embeddings[title_id * EMBED_DIM..(title_id + 1) * EMBED_DIM]
    }

    fn activations(&self, title_id: usize) -> Activations {
        let e = self.embedding(title_id);
        let mut pre = [0.0; HIDDEN_DIM];
        let mut hidden = [0.0; HIDDEN_DIM];
        let mut z = self.b2;
        for j in 0..HIDDEN_DIM {
            let row = &self.w1[j * EMBED_DIM..(j + 1) * EMBED_DIM];
            let mut acc = self.b1[j];
            for i in 0..EMBED_DIM {
                acc += row[i] * e[i];
            }
            pre[j] = acc;
            hidden[j] = acc.max(0.0);
            z += self.w2[j] * hidden[j];
        }
        Activations { pre, hidden, z }
    }

    /// Hidden-layer inputs before rectification.
    pub fn hidden_preactivations(&self, title_id: usize) -> Result<[f64; HIDDEN_DIM]> {
        self.check_title(title_id)?;
        Ok(self.activations(title_id).pre)
    }

    /// Raw score of a title.
    pub fn forward(&self, title_id: usize) -> Result<f64> {
        self.check_title(title_id)?;
        Ok(self.activations(title_id).z)
    }

    /// Score mapped through the loss kind's output link.
    pub fn predict(&self, title_id: usize) -> Result<f64> {
        Ok(apply_link(self.kind.link(), self.forward(title_id)?))
    }

    pub fn predict_all(&self) -> Vec<f64> {
        let link = self.kind.link();
        (0..self.n_titles())
            .map(|t| apply_link(link, self.activations(t).z))
            .collect()
    }

    /// `title_ids` ordered by descending prediction, ties by ascending id.
    pub fn rank(&self, title_ids: &[usize]) -> Result<Vec<usize>> {
        let mut scored = title_ids
            .iter()
            .map(|&t| Ok((t, self.predict(t)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().map(|(t, _)| t).collect())
    }

    /// The whole catalog in ranked order.
    pub fn rank_catalog(&self) -> Vec<usize> {
        let preds = self.predict_all();
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].total_cmp(&preds[a]).then(a.cmp(&b)));
        order
    }

    /// Loss of one sample at the current parameters.
    pub fn sample_loss(&self, sample: &Sample) -> Result<f64> {
        self.check_title(sample.title_id)?;
        let (pred, _) = loss_pred(self.kind.link(), self.activations(sample.title_id).z);
        Ok(loss_and_grad(&self.kind, pred, sample)?.0)
    }

    fn backprop(&self, title_id: usize, act: &Activations, dz: f64, grad: &mut ParamGrad) {
        let e = self.embedding(title_id);
        grad.b2 += dz;
        for j in 0..HIDDEN_DIM {
            grad.w2[j] += dz * act.hidden[j];
            if act.pre[j] <= 0.0 {
                continue;
            }
            let dpre = dz * self.w2[j];
            grad.b1[j] += dpre;
            let row = &self.w1[j * EMBED_DIM..(j + 1) * EMBED_DIM];
            let grow = &mut grad.w1[j * EMBED_DIM..(j + 1) * EMBED_DIM];
            for i in 0..EMBED_DIM {
                grow[i] += dpre * e[i];
                grad.embedding[i] += dpre * row[i];
            }
        }
    }

    /// Loss of one sample and its gradient in every parameter it touches.
    pub fn sample_grad(&self, sample: &Sample) -> Result<(f64, ParamGrad)> {
        self.check_title(sample.title_id)?;
        let act = self.activations(sample.title_id);
        let (pred, dpred_dz) = loss_pred(self.kind.link(), act.z);
        let (loss, dloss_dpred) = loss_and_grad(&self.kind, pred, sample)?;
        let mut grad = ParamGrad::zero(sample.title_id);
        self.backprop(sample.title_id, &act, dloss_dpred * dpred_dz, &mut grad);
        Ok((loss, grad))
    }

    /// Mini-batch SGD on the mean batch loss. Returns the mean loss of each
    /// epoch, measured while the epoch runs.
    pub fn train(&mut self, samples: &[Sample], config: &TrainConfig) -> Result<Vec<f64>> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n_titles = self.n_titles();
        if let Some(bad) = samples.iter().find(|s| s.title_id >= n_titles) {
            return Err(Error::UnknownTitle(bad.title_id));
        }
        let link = self.kind.link();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = rng::stream(
            config.shuffle_seed,
            "ranker-shuffle",
            &[samples.len() as u64],
        );

        // Samples of a batch that share a title share one forward pass; their
        // score gradients are summed before a single backward pass.
        let mut slot_of_title = vec![usize::MAX; n_titles];
        let mut slots: Vec<(usize, Activations, f64)> = Vec::new();
        let mut emb_grads: Vec<[f64; EMBED_DIM]> = Vec::new();
        let mut trace = Vec::with_capacity(config.epochs);

        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                slots.clear();
                for &idx in batch {
                    let sample = &samples[idx];
                    let t = sample.title_id;
                    if slot_of_title[t] == usize::MAX {
                        slot_of_title[t] = slots.len();
                        slots.push((t, self.activations(t), 0.0));
                    }
                    let slot = &mut slots[slot_of_title[t]];
                    let (pred, dpred_dz) = loss_pred(link, slot.1.z);
                    let (loss, dloss_dpred) = loss_and_grad(&self.kind, pred, sample)?;
                    epoch_loss += loss;
                    slot.2 += dloss_dpred * dpred_dz;
                }

                let mut dense = ParamGrad::zero(0);
                emb_grads.clear();
                for (t, act, dz) in &slots {
                    dense.embedding = [0.0; EMBED_DIM];
                    self.backprop(*t, act, *dz, &mut dense);
                    emb_grads.push(dense.embedding);
                    slot_of_title[*t] = usize::MAX;
                }

                let step = config.learning_rate / batch.len() as f64;
                for ((t, _, _), g) in slots.iter().zip(&emb_grads) {
                    let row = &mut self.embeddings[t * EMBED_DIM..(t + 1) * EMBED_DIM];
                    for i in 0..EMBED_DIM {
                        row[i] -= step * g[i];
                    }
                }
                for (w, g) in self.w1.iter_mut().zip(&dense.w1) {
                    *w -= step * g;
                }
                for (w, g) in self.b1.iter_mut().zip(&dense.b1) {
                    *w -= step * g;
                }
                for (w, g) in self.w2.iter_mut().zip(&dense.w2) {
                    *w -= step * g;
                }
                self.b2 -= step * dense.b2;
            }
            trace.push(epoch_loss / samples.len() as f64);
        }
        Ok(trace)
    }

    /// Flat parameter vector: embeddings (row-major), `w1` (row-major,
    /// output unit major), `b1`, `w2`, `b2`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.embeddings.len() + self.w1.len() + 2 * HIDDEN_DIM + 1);
        out.extend_from_slice(&self.embeddings);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn from_flat_params(kind: LossKind, values: &[f64]) -> Result<Self> {
        let dense = HIDDEN_DIM * EMBED_DIM + 2 * HIDDEN_DIM + 1;
        if values.len() < dense || !(values.len() - dense).is_multiple_of(EMBED_DIM) {
            return Err(Error::InvalidParams(format!(
                "{} values do not describe a ranker",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite parameter {v}")));
        }
        let n_emb = values.len() - dense;
        let (embeddings, rest) = values.split_at(n_emb);
        let (w1, rest) = rest.split_at(HIDDEN_DIM * EMBED_DIM);
        let (b1, rest) = rest.split_at(HIDDEN_DIM);
        let (w2, rest) = rest.split_at(HIDDEN_DIM);
        Ok(RankerModel {
            kind,
            embeddings: embeddings.to_vec(),
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: rest[0],
        })
    }

    /// One parameter per line, in [`RankerModel::flat_params`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in self.flat_params() {
            out.push_str(&format!("{v:e}\n"));
        }
        out
    }

    pub fn from_text(kind: LossKind, text: &str) -> Result<Self> {
        let values = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParams(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        RankerModel::from_flat_params(kind, &values)
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }
}

/// Outcome of comparing analytic and finite-difference parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub n_params: usize,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Relative error with a small floor on the denominator so that two
/// vanishing gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central differences of the sample loss in every parameter the sample
/// touches, laid out like [`ParamGrad::values`].
pub fn numeric_grad(model: &RankerModel, sample: &Sample) -> Result<Vec<f64>> {
    model.check_title(sample.title_id)?;
    let h = GRAD_CHECK_STEP;
    let mut probe = model.clone();
    let mut out = Vec::new();
    let t = sample.title_id;

    fn diff(
        probe: &mut RankerModel,
        sample: &Sample,
        h: f64,
        get: impl Fn(&mut RankerModel) -> &mut f64,
    ) -> Result<f64> {
        let orig = *get(probe);
        *get(probe) = orig + h;
        let up = probe.sample_loss(sample)?;
        *get(probe) = orig - h;
        let down = probe.sample_loss(sample)?;
        *get(probe) = orig;
        Ok((up - down) / (2.0 * h))
    }

    for i in 0..EMBED_DIM {
        out.push(diff(&mut probe, sample, h, |m| {
            &mut m.embeddings[t * EMBED_DIM + i]
        })?);
    }
    for k in 0..HIDDEN_DIM * EMBED_DIM {
        out.push(diff(&mut probe, sample, h, |m| &mut m.w1[k])?);
    }
    for j in 0..HIDDEN_DIM {
        out.push(diff(&mut probe, sample, h, |m| &mut m.b1[j])?);
    }
    for j in 0..HIDDEN_DIM {
        out.push(diff(&mut probe, sample, h, |m| &mut m.w2[j])?);
    }
    out.push(diff(&mut probe, sample, h, |m| &mut m.b2)?);
    Ok(out)
}

pub fn compare_grads(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let mut check = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        n_params: analytic.len(),
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        check.max_rel_error = check.max_rel_error.max(relative_error(a, n));
        check.max_abs_error = check.max_abs_error.max((a - n).abs());
    }
    check
}

/// Backprop gradient against central differences. Embedding rows of other
/// titles are structurally zero on both sides and are not compared.
pub fn grad_check(model: &RankerModel, sample: &Sample) -> Result<GradCheck> {
    let (_, analytic) = model.sample_grad(sample)?;
    let numeric = numeric_grad(model, sample)?;
    Ok(compare_grads(&analytic.values(), &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tweedie() -> LossKind {
        LossKind::TweediePow { p: 1.5 }
    }

    #[test]
    fn zero_model_scores_zero() {
        let m = RankerModel::zeros(5, LossKind::LogLoss);
        for t in 0..5 {
            assert_eq!(m.forward(t).unwrap(), 0.0);
            assert_eq!(m.predict(t).unwrap(), 0.5);
        }
        let m = RankerModel::zeros(5, tweedie());
        assert_eq!(m.predict(2).unwrap(), 1.0);
        assert_eq!(m.rank(&[4, 2, 0, 3, 1]).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(m.rank_catalog(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn output_bias_passes_through() {
        let mut m = RankerModel::new(4, LossKind::MeanSquared, 3);
        m.w2 = vec![0.0; HIDDEN_DIM];
        m.b2 = -1.25;
        assert_eq!(m.forward(3).unwrap(), -1.25);
        assert_eq!(m.predict(3).unwrap(), -1.25);
    }

    #[test]
    fn exp_link_is_clamped() {
        assert_eq!(apply_link(Link::Exp, -100.0), (-30.0f64).exp());
        assert_eq!(apply_link(Link::Exp, 100.0), 30.0f64.exp());
        assert_eq!(apply_link(Link::Sigmoid, 0.0), 0.5);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let m = RankerModel::new(7, LossKind::LogLoss, 42);
        let mut rng = rng::stream(1, "perturb", &[]);
        let mut m = m;
        for v in m.b1.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in m.embeddings.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for t in 0..7 {
            let mut z = m.b2;
            for j in 0..HIDDEN_DIM {
                let mut a = m.b1[j];
                for i in 0..EMBED_DIM {
                    a += m.w1[j * EMBED_DIM + i] * m.embeddings[t * EMBED_DIM + i];
                }
                z += m.w2[j] * if a > 0.0 { a } else { 0.0 };
            }
            assert!((m.forward(t).unwrap() - z).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_title() {
        let m = RankerModel::new(3, LossKind::LogLoss, 0);
        assert!(matches!(m.forward(3), Err(Error::UnknownTitle(3))));
        assert!(matches!(m.rank(&[0, 9]), Err(Error::UnknownTitle(9))));
        let mut m = m;
        let cfg = TrainConfig::default();
        assert!(matches!(m.train(&[], &cfg), Err(Error::EmptyDataset)));
        assert!(matches!(
            m.train(&[Sample::new(5, false, 0.0)], &cfg),
            Err(Error::UnknownTitle(5))
        ));
    }

    #[test]
    fn rank_orders_by_prediction() {
        let mut m = RankerModel::zeros(3, LossKind::MeanSquared);
        // give each title its own score through b1/w2 and the embedding
        m.w1[0] = 1.0;
        m.w2[0] = 1.0;
        m.embeddings[0] = 0.1;
        m.embeddings[EMBED_DIM] = 0.9;
        m.embeddings[2 * EMBED_DIM] = 0.5;
        assert_eq!(m.rank(&[0, 1, 2]).unwrap(), vec![1, 2, 0]);
        assert_eq!(m.rank_catalog(), vec![1, 2, 0]);
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let mut m = RankerModel::new(4, LossKind::LogLoss, 9);
        let before = m.clone();
        let samples = vec![Sample::new(1, true, 0.5), Sample::new(2, false, 0.0)];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            batch_size: 1,
            shuffle_seed: 1,
        };
        let trace = m.train(&samples, &cfg).unwrap();
        assert_eq!(m, before);
        assert_eq!(trace.len(), 5);
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn single_sample_logloss_goes_to_zero() {
        let mut m = RankerModel::new(2, LossKind::LogLoss, 5);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 300,
            batch_size: 1,
            shuffle_seed: 2,
        };
        let trace = m.train(&[Sample::new(0, true, 1.0)], &cfg).unwrap();
        assert!(trace[1..].windows(2).all(|w| w[1] < w[0]));
        assert!(
            *trace.last().unwrap() < 0.02,
            "final loss {}",
            trace.last().unwrap()
        );
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<Sample> = (0..500)
            .map(|i| Sample::new(i % 13, i % 3 == 0, (i % 7) as f64 * 0.1))
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 4,
            batch_size: 32,
            shuffle_seed: 77,
        };
        for kind in LossKind::all(1.5) {
            let mut a = RankerModel::new(13, kind, 1);
            let mut b = RankerModel::new(13, kind, 1);
            let ta = a.train(&samples, &cfg).unwrap();
            let tb = b.train(&samples, &cfg).unwrap();
            assert_eq!(ta, tb);
            assert_eq!(a.flat_params(), b.flat_params());
            assert!(a.is_finite());
        }
    }

    #[test]
    fn batched_update_equals_summed_sample_gradients() {
        // one full batch: the update must equal the mean of per-sample gradients
        let samples: Vec<Sample> = (0..40)
            .map(|i| Sample::new(i % 4, i % 5 == 0, if i % 5 == 0 { 0.8 } else { 0.0 }))
            .collect();
        for kind in LossKind::all(1.5) {
            let mut m = RankerModel::new(4, kind, 8);
            for v in m.embeddings.iter_mut() {
                *v *= 50.0;
            }
            let start = m.clone();
            let lr = 0.1;
            m.train(
                &samples,
                &TrainConfig {
                    learning_rate: lr,
                    epochs: 1,
                    batch_size: 64,
                    shuffle_seed: 0,
                },
            )
            .unwrap();
            let mut expect = start.flat_params();
            let n_emb = start.embeddings.len();
            for s in &samples {
                let (_, g) = start.sample_grad(s).unwrap();
                let vals = g.values();
                for i in 0..EMBED_DIM {
                    expect[s.title_id * EMBED_DIM + i] -= lr / 40.0 * vals[i];
                }
                for (k, v) in vals[EMBED_DIM..].iter().enumerate() {
                    expect[n_emb + k] -= lr / 40.0 * v;
                }
            }
            for (a, b) in m.flat_params().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, kind) in LossKind::all(1.5).into_iter().enumerate() {
            let mut m = RankerModel::new(6, kind, seed as u64);
            for v in m.embeddings.iter_mut() {
                *v *= 60.0;
            }
            for sample in [Sample::new(2, true, 0.7), Sample::new(4, false, 0.0)] {
                let check = grad_check(&m, &sample).unwrap();
                assert!(check.max_rel_error < 1e-5, "{kind}: {check:?}");
            }
        }
    }

    #[test]
    fn zero_gradient_point() {
        let mut m = RankerModel::new(3, LossKind::MeanSquared, 4);
        let z = m.forward(1).unwrap();
        m.b2 += 0.4 - z;
        let check = grad_check(&m, &Sample::new(1, true, 0.4)).unwrap();
        assert!(check.max_abs_error < 1e-8, "{check:?}");
    }

    #[test]
    fn text_dump_round_trips() {
        let m = RankerModel::new(5, tweedie(), 12);
        let back = RankerModel::from_text(tweedie(), &m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(RankerModel::from_text(tweedie(), "1\n2\n").is_err());
        assert!(RankerModel::from_text(tweedie(), "x\n").is_err());
    }
}
