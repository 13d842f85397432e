//! Loss, Adam, learning-rate schedule and the mini-batch training loop.

use std::fmt;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use yieldnet_autodiff::{BatchStats, GradMode, Tape, Tensor};

use crate::data::{Purpose, SequenceSample};
use crate::model::{BatchInputs, CnnRnnModel, DfnnModel};

pub use crate::model::xavier_init;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub halve_every: u64,
    pub max_iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss-curve row interval; 0 disables the curve.
    pub log_every: u64,
    /// Average the loss over every unrolled step instead of the last one.
    pub all_step_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 3e-4,
            halve_every: 60_000,
            max_iters: 20_000,
            batch_size: 25,
            seed: 0,
            log_every: 500,
            all_step_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(format!("learning rate must be positive, got {}", self.base_lr));
        }
        if self.halve_every == 0 || self.batch_size == 0 {
            return Err("halve_every and batch_size must be positive".into());
        }
        Ok(())
    }
}

/// `base_lr / 2^floor(iter / halve_every)`.
pub fn lr_schedule(iter: u64, config: &TrainConfig) -> f64 {
    let halvings = (iter / config.halve_every).min(1023) as i32;
    config.base_lr * 0.5f64.powi(halvings)
}

/// Mean squared difference.
///
/// # Panics
///
/// Panics on empty or unequal inputs.
pub fn mse(predictions: &[f64], targets: &[f64]) -> f64 {
    assert!(!predictions.is_empty(), "mse of empty vectors");
    assert_eq!(predictions.len(), targets.len(), "mse length mismatch");
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NonFiniteGradient {
    pub param: usize,
}

/// One Adam update with bias correction. Nothing is modified when any
/// gradient is non-finite.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NonFiniteGradient> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for parameter {i}");
        if !g.is_finite() {
            return Err(NonFiniteGradient { param: i });
        }
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - BETA2.powi(state.t.min(i32::MAX as u64) as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub iter: u64,
    pub lr: f64,
    /// Mean mini-batch loss since the previous row.
    pub train_loss: f64,
    pub monitor_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<CurveRow>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,lr,train_loss,monitor_loss\n");
        for r in &self.rows {
            let monitor = r.monitor_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.iter, r.lr, r.train_loss, monitor));
        }
        out
    }
}

/// Loss and gradients of one mini-batch, plus model-specific state to commit
/// once the update is known to be finite.
pub struct BatchOutcome<A> {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub pending: A,
}

/// A model the generic loop can train.
pub trait Trainable: Sized {
    type Data;
    type Pending;

    fn sample_count(data: &Self::Data) -> usize;
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    fn batch(&self, data: &Self::Data, indices: &[usize], config: &TrainConfig) -> BatchOutcome<Self::Pending>;
    fn commit(&mut self, pending: Self::Pending);
    /// Inference-mode loss over a whole data set.
    fn eval_loss(&self, data: &Self::Data) -> f64;
}

pub struct Trained<M> {
    pub model: M,
    pub curve: LossCurve,
}

#[derive(Debug)]
pub enum TrainError<M> {
    EmptyDataset,
    InvalidConfig(String),
    /// Loss or gradient became non-finite; `last_good` holds the parameters
    /// before the failing update.
    NonFinite {
        iteration: u64,
        last_good: Box<M>,
        curve: LossCurve,
    },
}

impl<M> fmt::Display for TrainError<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyDataset => f.write_str("training set is empty"),
            TrainError::InvalidConfig(m) => write!(f, "invalid training config: {m}"),
            TrainError::NonFinite { iteration, .. } => {
                write!(f, "non-finite loss or gradient at iteration {iteration}")
            }
        }
    }
}

impl<M: fmt::Debug> std::error::Error for TrainError<M> {}

/// Mini-batch Adam on samples drawn with replacement from a seeded generator.
pub fn train<M: Trainable>(
    mut model: M,
    data: &M::Data,
    monitor: Option<&M::Data>,
    config: &TrainConfig,
) -> Result<Trained<M>, TrainError<M>> {
    config.validate().map_err(TrainError::InvalidConfig)?;
    let n = M::sample_count(data);
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params());
    let mut curve = LossCurve::default();
    let mut window = (0.0, 0u64);
    let mut indices = vec![0usize; config.batch_size];
    for iter in 0..config.max_iters {
        for i in indices.iter_mut() {
            *i = rng.random_range(0..n);
        }
        let lr = lr_schedule(iter, config);
        let outcome = model.batch(data, &indices, config);
        let fail = |model: M, curve: LossCurve| TrainError::NonFinite {
            iteration: iter,
            last_good: Box::new(model),
            curve,
        };
        if !outcome.loss.is_finite() {
            return Err(fail(model, curve));
        }
        if adam_step(model.params_mut(), &outcome.grads, &mut adam, lr).is_err() {
            return Err(fail(model, curve));
        }
        model.commit(outcome.pending);
        window.0 += outcome.loss;
        window.1 += 1;
        if config.log_every > 0 && (iter % config.log_every == 0 || iter + 1 == config.max_iters) {
            let monitor_loss = monitor.map(|m| model.eval_loss(m));
            let train_loss = window.0 / window.1 as f64;
            info!(
                "iter {iter} lr {lr:.3e} train {train_loss:.4}{}",
                monitor_loss.map(|m| format!(" monitor {m:.4}")).unwrap_or_default()
            );
            curve.rows.push(CurveRow {
                iter,
                lr,
                train_loss,
                monitor_loss,
            });
            window = (0.0, 0);
        }
    }
    Ok(Trained { model, curve })
}

/// Standardized CNN-RNN inputs and targets.
pub struct SequenceData {
    pub prepared: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub step_targets: Vec<Vec<Option<f64>>>,
}

impl SequenceData {
    /// Prepares samples with the model's transform.
    ///
    /// # Panics
    ///
    /// Panics if a sample has no target.
    pub fn new(model: &CnnRnnModel, samples: &[SequenceSample]) -> Self {
        let targets = samples
            .iter()
            .map(|s| s.target(Purpose::Fit).expect("training sample without a target"))
            .collect();
        Self {
            prepared: samples.iter().map(|s| model.prepare(s)).collect(),
            targets,
            step_targets: samples.iter().map(|s| s.step_targets(Purpose::Fit)).collect(),
        }
    }
}

impl Trainable for CnnRnnModel {
    type Data = SequenceData;
    type Pending = ();

    fn sample_count(data: &SequenceData) -> usize {
        data.prepared.len()
    }

    fn params(&self) -> &[Tensor] {
        CnnRnnModel::params(self)
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        CnnRnnModel::params_mut(self)
    }

    fn batch(&self, data: &SequenceData, indices: &[usize], config: &TrainConfig) -> BatchOutcome<()> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| data.prepared[i].as_slice()).collect();
        let inputs = BatchInputs::new(self.layout(), self.config.steps(), &rows);
        let mut tape = Tape::new(GradMode::Standard);
        let params = self.bind(&mut tape);
        let trace = self.forward(&mut tape, &params, &inputs, false);
        let loss = if config.all_step_loss {
            let steps = trace.predictions.len();
            let mut total = None;
            for (s, &pred) in trace.predictions.iter().enumerate() {
                // Unknown yields target the prediction itself, contributing nothing.
                let current = tape.value(pred).data().to_vec();
                let targets: Vec<f64> = indices
                    .iter()
                    .zip(&current)
                    .map(|(&i, &p)| data.step_targets[i][s].unwrap_or(p))
                    .collect();
                let l = tape.mse_loss(pred, &targets);
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l),
                });
            }
            tape.scale(total.unwrap(), 1.0 / steps as f64)
        } else {
            let targets: Vec<f64> = indices.iter().map(|&i| data.targets[i]).collect();
            tape.mse_loss(*trace.predictions.last().unwrap(), &targets)
        };
        let grads = tape.backward_scalar(loss);
        BatchOutcome {
            loss: tape.value(loss).item(),
            grads: params.iter().map(|&p| grads.get_or_zeros(p)).collect(),
            pending: (),
        }
    }

    fn commit(&mut self, _: ()) {}

    fn eval_loss(&self, data: &SequenceData) -> f64 {
        let rows: Vec<&[f64]> = data.prepared.iter().map(Vec::as_slice).collect();
        let preds: Vec<f64> = self
            .predict_prepared(&rows)
            .into_iter()
            .map(|p| *p.last().unwrap())
            .collect();
        mse(&preds, &data.targets)
    }
}

/// Standardized flat feature rows and targets.
pub struct FlatData {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl FlatData {
    pub fn new(model: &DfnnModel, raw_rows: &[Vec<f64>], targets: Vec<f64>) -> Self {
        assert_eq!(raw_rows.len(), targets.len());
        Self {
            rows: raw_rows.iter().map(|r| model.transform.apply(r)).collect(),
            targets,
        }
    }
}

impl Trainable for DfnnModel {
    type Data = FlatData;
    type Pending = Vec<BatchStats>;

    fn sample_count(data: &FlatData) -> usize {
        data.rows.len()
    }

    fn params(&self) -> &[Tensor] {
        DfnnModel::params(self)
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        DfnnModel::params_mut(self)
    }

    fn batch(&self, data: &FlatData, indices: &[usize], _config: &TrainConfig) -> BatchOutcome<Vec<BatchStats>> {
        let mut x = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            x.extend_from_slice(&data.rows[i]);
        }
        let mut tape = Tape::new(GradMode::Standard);
        let params = self.bind(&mut tape);
        let input = tape.constant(Tensor::new(&[indices.len(), self.input_dim], x));
        let trace = self.forward(&mut tape, &params, input, true);
        let targets: Vec<f64> = indices.iter().map(|&i| data.targets[i]).collect();
        let loss = tape.mse_loss(trace.output, &targets);
        let grads = tape.backward_scalar(loss);
        BatchOutcome {
            loss: tape.value(loss).item(),
            grads: params.iter().map(|&p| grads.get_or_zeros(p)).collect(),
            pending: trace.batch_stats,
        }
    }

    fn commit(&mut self, pending: Vec<BatchStats>) {
        self.update_running(&pending);
    }

    fn eval_loss(&self, data: &FlatData) -> f64 {
        let mut tape = Tape::default();
        let params: Vec<_> = self.params().iter().map(|p| tape.constant(p.clone())).collect();
        let mut x = Vec::with_capacity(data.rows.len() * self.input_dim);
        for r in &data.rows {
            x.extend_from_slice(r);
        }
        let input = tape.constant(Tensor::new(&[data.rows.len(), self.input_dim], x));
        let trace = self.forward(&mut tape, &params, input, false);
        mse(tape.value(trace.output).data(), &data.targets)
    }
}
