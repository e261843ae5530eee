use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{backward, dropout_mask, forward_train};
use super::{CriticArch, CriticParams, LabeledExample, Scalar, BN_MOMENTUM, CLASSES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub increment_epochs: usize,
    pub retrain_epochs: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            dropout: 0.25,
            batch_size: 16,
            increment_epochs: 2,
            retrain_epochs: 20,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid trainer settings: {self:?}")))
        }
    }
}

/// Adam moments, in the critic's flat parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar = f32> {
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

const OPT_MAGIC: &[u8; 8] = b"DRUMADAM";

impl<T: Scalar> OptimizerState<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn apply(&mut self, values: &mut [T], grad: &[T], cfg: &TrainerConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..values.len() {
            let g = grad[i].f64();
            let m = b1 * self.m[i].f64() + (1.0 - b1) * g;
            let v = b2 * self.v[i].f64() + (1.0 - b2) * g * g;
            self.m[i] = T::of(m);
            self.v[i] = T::of(v);
            let update = cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
            values[i] -= T::of(update);
        }
    }

    /// `DRUMADAM`, step (u64), length (u64), then both moment vectors as
    /// little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.m.len());
        out.extend_from_slice(OPT_MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::Checkpoint(format!("optimizer state: {r}"));
        if bytes.len() < 24 || &bytes[..8] != OPT_MAGIC {
            return Err(bad("bad header"));
        }
        let step = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if bytes.len() != 24 + 8 * n {
            return Err(bad("length mismatch"));
        }
        let vals: Vec<T> = bytes[24..]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let (m, v) = vals.split_at(n);
        Ok(Self {
            step,
            m: m.to_vec(),
            v: v.to_vec(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    /// Mean minibatch loss for each epoch.
    pub epoch_losses: Vec<f64>,
}

fn prepare<T: Scalar>(params: &CriticParams<T>, batch: &[&LabeledExample]) -> Result<Vec<Vec<T>>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    batch.iter().map(|ex| params.check_features(&ex.features)).collect()
}

fn weight_penalty<T: Scalar>(params: &CriticParams<T>, weight_decay: f64) -> f64 {
    let v = params.values();
    let sq: f64 = params
        .layout()
        .decayed()
        .into_iter()
        .flat_map(|r| v[r].iter())
        .map(|w| w.f64() * w.f64())
        .sum();
    0.5 * weight_decay * sq
}

fn cross_entropy<T: Scalar>(logits: &[T], batch: &[&LabeledExample]) -> f64 {
    let total: f64 = logits
        .chunks(CLASSES)
        .zip(batch)
        .map(|(z, ex)| {
            let (z0, z1) = (z[0].f64(), z[1].f64());
            let hi = z0.max(z1);
            let lse = hi + ((z0 - hi).exp() + (z1 - hi).exp()).ln();
            lse - z[ex.label.index()].f64()
        })
        .sum();
    total / batch.len() as f64
}

/// Training-mode minibatch loss (mean cross-entropy plus
/// `weight_decay / 2 * |w|^2` over the weight tensors). A fixed dropout
/// mask (`batch x dense_units`) makes the value deterministic.
pub fn batch_loss<T: Scalar>(
    params: &CriticParams<T>,
    batch: &[&LabeledExample],
    weight_decay: f64,
    dropout_mask: Option<&[T]>,
) -> Result<f64> {
    let inputs = prepare(params, batch)?;
    let refs: Vec<&[T]> = inputs.iter().map(Vec::as_slice).collect();
    let pass = forward_train(params, &refs, dropout_mask.map(<[T]>::to_vec));
    Ok(cross_entropy(&pass.logits, batch) + weight_penalty(params, weight_decay))
}

struct Step<T> {
    loss: f64,
    grad: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
}

fn compute<T: Scalar>(
    params: &CriticParams<T>,
    batch: &[&LabeledExample],
    weight_decay: f64,
    mask: Option<Vec<T>>,
) -> Result<Step<T>> {
    let inputs = prepare(params, batch)?;
    let refs: Vec<&[T]> = inputs.iter().map(Vec::as_slice).collect();
    let pass = forward_train(params, &refs, mask);
    let n = batch.len() as f64;
    let mut dlogits = Vec::with_capacity(batch.len() * CLASSES);
    for (p, ex) in pass.probs.iter().zip(batch) {
        for (c, &pc) in p.iter().enumerate() {
            let target = if c == ex.label.index() { 1.0 } else { 0.0 };
            dlogits.push(T::of((pc - target) / n));
        }
    }
    let mut grad = backward(params, &pass, &dlogits);
    let v = params.values();
    for r in params.layout().decayed() {
        for i in r {
            grad[i] += T::of(weight_decay) * v[i];
        }
    }
    let loss = cross_entropy(&pass.logits, batch) + weight_penalty(params, weight_decay);
    let (batch_mean, batch_var) = pass
        .layers
        .iter()
        .map(|l| (l.batch_mean.clone(), l.batch_var.clone()))
        .unzip::<_, _, Vec<_>, Vec<_>>();
    Ok(Step {
        loss,
        grad,
        batch_mean: batch_mean.concat(),
        batch_var: batch_var.concat(),
    })
}

/// Loss and its exact gradient in the flat parameter layout. Pure: running
/// statistics are not touched.
pub fn loss_and_gradients<T: Scalar>(
    params: &CriticParams<T>,
    batch: &[&LabeledExample],
    weight_decay: f64,
    dropout_mask: Option<&[T]>,
) -> Result<(f64, Vec<T>)> {
    let s = compute(params, batch, weight_decay, dropout_mask.map(<[T]>::to_vec))?;
    Ok((s.loss, s.grad))
}

fn run_epochs<T: Scalar, R: Rng + ?Sized>(
    params: &mut CriticParams<T>,
    opt: &mut OptimizerState<T>,
    dataset: &[LabeledExample],
    cfg: &TrainerConfig,
    epochs: usize,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    if opt.len() != params.param_count() {
        return Err(Error::Contract("optimizer state does not match critic".into()));
    }
    let mut report = TrainReport::default();
    if dataset.is_empty() {
        return Ok(report);
    }
    let bs = cfg.batch_size.min(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let momentum = T::of(BN_MOMENTUM);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut losses = Vec::new();
        for idx in order.chunks(bs) {
            let batch: Vec<&LabeledExample> = idx.iter().map(|&i| &dataset[i]).collect();
            let mask = dropout_mask(batch.len(), params.layout().dense, cfg.dropout, rng);
            let step = compute(params, &batch, cfg.weight_decay, mask)?;
            opt.apply(&mut params.values, &step.grad, cfg);
            for (r, b) in params.running_mean.iter_mut().zip(&step.batch_mean) {
                *r = momentum * *r + (T::one() - momentum) * *b;
            }
            for (r, b) in params.running_var.iter_mut().zip(&step.batch_var) {
                *r = momentum * *r + (T::one() - momentum) * *b;
            }
            losses.push(step.loss);
            report.steps += 1;
        }
        report.epochs += 1;
        report.epoch_losses.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(report)
}

/// Incremental update after a new rating: a few shuffled epochs over the
/// whole dataset, continuing the existing optimizer state.
pub fn train_increment<T: Scalar, R: Rng + ?Sized>(
    params: &mut CriticParams<T>,
    opt: &mut OptimizerState<T>,
    dataset: &[LabeledExample],
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Contract("incremental update needs at least one example".into()));
    }
    run_epochs(params, opt, dataset, cfg, cfg.increment_epochs, rng)
}

/// Fresh initialization followed by `retrain_epochs` epochs. An empty
/// dataset yields the untrained initialization.
pub fn retrain_from_scratch<R: Rng + ?Sized>(
    arch: &CriticArch,
    dataset: &[LabeledExample],
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<(CriticParams<f32>, OptimizerState<f32>, TrainReport)> {
    let mut params = CriticParams::init(arch, rng)?;
    let mut opt = OptimizerState::new(params.param_count());
    let report = run_epochs(&mut params, &mut opt, dataset, cfg, cfg.retrain_epochs, rng)?;
    Ok((params, opt, report))
}
