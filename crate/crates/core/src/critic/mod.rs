//! The per-user preference critic: a small 2D CNN over MFCC features that
//! outputs the probability the user will like a loop.
//!
//! Four conv blocks (conv -> batch norm -> leaky ReLU) with kernel 4x8 and
//! stride 2x4 under "same" padding, a 128-unit dense layer with dropout,
//! and a two-way softmax head (index 0 = dislike, 1 = like). With the
//! default 32x345 input the learnable parameter count is 285,658.
//!
//! All learnable values live in one flat vector in declaration order
//! (per conv layer: weight, bias, bn scale, bn shift; then dense weight,
//! dense bias, head weight, head bias). Gradients and optimizer moments
//! share that layout, and checkpoints serialize it directly.

mod checkpoint;
mod net;
pub mod scalar;
mod train;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use scalar::Scalar;
pub use train::{
    batch_loss, loss_and_gradients, retrain_from_scratch, train_increment, OptimizerState, TrainReport,
    TrainerConfig,
};

use crate::audio::BAR_SAMPLES;
use crate::error::{Error, Result};
use crate::features::{MfccMatrix, MfccSettings};

pub const KERNEL: (usize, usize) = (4, 8);
pub const STRIDE: (usize, usize) = (2, 4);
pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Dislike,
    Like,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Dislike => 0,
            Label::Like => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledExample {
    pub features: MfccMatrix,
    pub label: Label,
    pub loop_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CriticArch {
    pub input_coeffs: usize,
    pub input_frames: usize,
    pub channels: Vec<usize>,
    pub dense_units: usize,
}

impl Default for CriticArch {
    fn default() -> Self {
        Self::for_settings(&MfccSettings::default())
    }
}

/// Geometry of one "same"-padded strided convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c_in * KERNEL.0 * KERNEL.1
    }

    pub fn out_positions(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn in_size(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    pub fn out_size(&self) -> usize {
        self.c_out * self.out_positions()
    }
}

/// Output length and leading pad for "same" padding: `ceil(n / stride)`.
fn same_padding(n: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(n);
    (out, total / 2)
}

impl CriticArch {
    /// Full-size architecture for a 2 s bar under `settings`.
    pub fn for_settings(settings: &MfccSettings) -> Self {
        Self {
            input_coeffs: settings.n_mfcc,
            input_frames: settings.frames_for(BAR_SAMPLES),
            channels: vec![64, 64, 64, 8],
            dense_units: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_coeffs == 0 || self.input_frames == 0 {
            return Err(Error::Config("critic input must be non-empty".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.dense_units == 0 {
            return Err(Error::Config("critic layers must be non-empty".into()));
        }
        Ok(())
    }

    pub fn conv_geometry(&self) -> Vec<ConvGeom> {
        let (mut c, mut h, mut w) = (1, self.input_coeffs, self.input_frames);
        self.channels
            .iter()
            .map(|&c_out| {
                let (h_out, pad_top) = same_padding(h, KERNEL.0, STRIDE.0);
                let (w_out, pad_left) = same_padding(w, KERNEL.1, STRIDE.1);
                let g = ConvGeom {
                    c_in: c,
                    h_in: h,
                    w_in: w,
                    c_out,
                    h_out,
                    w_out,
                    pad_top,
                    pad_left,
                };
                (c, h, w) = (c_out, h_out, w_out);
                g
            })
            .collect()
    }

    pub fn flat_features(&self) -> usize {
        self.conv_geometry().last().map_or(0, |g| g.out_size())
    }

    pub fn input_size(&self) -> usize {
        self.input_coeffs * self.input_frames
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }

    pub fn bn_channels(&self) -> usize {
        self.channels.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ConvSlots {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
    /// Offset of this layer's channels in the running statistics.
    pub stats: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub geoms: Vec<ConvGeom>,
    pub convs: Vec<ConvSlots>,
    pub dense_w: Range<usize>,
    pub dense_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub flat: usize,
    pub dense: usize,
    pub total: usize,
}

impl Layout {
    fn new(arch: &CriticArch) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let geoms = arch.conv_geometry();
        let mut stats = 0;
        let convs = geoms
            .iter()
            .map(|g| {
                let slots = ConvSlots {
                    weight: take(g.c_out * g.patch()),
                    bias: take(g.c_out),
                    gamma: take(g.c_out),
                    beta: take(g.c_out),
                    stats,
                };
                stats += g.c_out;
                slots
            })
            .collect();
        let flat = geoms.last().map_or(0, |g| g.out_size());
        let dense = arch.dense_units;
        let dense_w = take(dense * flat);
        let dense_b = take(dense);
        let head_w = take(CLASSES * dense);
        let head_b = take(CLASSES);
        Self {
            geoms,
            convs,
            dense_w,
            dense_b,
            head_w,
            head_b,
            flat,
            dense,
            total: at,
        }
    }

    /// Ranges subject to weight decay (conv, dense and head weights).
    pub fn decayed(&self) -> Vec<Range<usize>> {
        let mut r: Vec<_> = self.convs.iter().map(|c| c.weight.clone()).collect();
        r.push(self.dense_w.clone());
        r.push(self.head_w.clone());
        r
    }
}

/// Every learnable weight and statistic of the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams<T: Scalar = f32> {
    arch: CriticArch,
    layout: Layout,
    values: Vec<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
}

impl<T: Scalar> CriticParams<T> {
    /// Fan-in-scaled uniform weights (He bound `sqrt(6 / fan_in)` ahead of
    /// leaky units, `sqrt(3 / fan_in)` for the head), zero biases, identity
    /// batch norm.
    pub fn init<R: Rng + ?Sized>(arch: &CriticArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(arch);
        let mut values = vec![T::zero(); layout.total];
        let mut fill = |range: Range<usize>, bound: f64| {
            for v in &mut values[range] {
                *v = T::of(rng.random_range(-bound..bound));
            }
        };
        for (g, slots) in layout.geoms.iter().zip(&layout.convs) {
            fill(slots.weight.clone(), (6.0 / g.patch() as f64).sqrt());
        }
        fill(layout.dense_w.clone(), (6.0 / layout.flat as f64).sqrt());
        fill(layout.head_w.clone(), (3.0 / layout.dense as f64).sqrt());
        for slots in &layout.convs {
            values[slots.gamma.clone()].fill(T::one());
        }
        let bn = arch.bn_channels();
        Ok(Self {
            arch: arch.clone(),
            layout,
            values,
            running_mean: vec![T::zero(); bn],
            running_var: vec![T::one(); bn],
        })
    }

    pub(crate) fn from_parts(arch: CriticArch, values: Vec<T>, running_mean: Vec<T>, running_var: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let bn = arch.bn_channels();
        if values.len() != layout.total || running_mean.len() != bn || running_var.len() != bn {
            return Err(Error::Checkpoint("tensor sizes do not match architecture".into()));
        }
        if running_var.iter().any(|v| v.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Checkpoint("running variances must be positive".into()));
        }
        Ok(Self {
            arch,
            layout,
            values,
            running_mean,
            running_var,
        })
    }

    pub fn arch(&self) -> &CriticArch {
        &self.arch
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Learnable parameters, flat, in declaration order.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn running_mean(&self) -> &[T] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[T] {
        &self.running_var
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Zero the head weights and set its bias so every input scores `p`.
    pub fn set_constant_output(&mut self, p: f64) {
        let (w, b) = (self.layout.head_w.clone(), self.layout.head_b.clone());
        self.values[w].fill(T::zero());
        self.values[b.start] = T::zero();
        self.values[b.start + 1] = T::of((p / (1.0 - p)).ln());
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> CriticParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        CriticParams {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            values: conv(&self.values),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
        }
    }

    fn check_features(&self, features: &MfccMatrix) -> Result<Vec<T>> {
        let expected = (self.arch.input_coeffs, self.arch.input_frames);
        if features.shape() != expected {
            return Err(Error::Contract(format!(
                "critic expects {}x{} features, got {}x{}",
                expected.0,
                expected.1,
                features.n_coeffs(),
                features.n_frames()
            )));
        }
        Ok(features.values().iter().map(|&v| T::of(v)).collect())
    }

    /// `[dislike, like]` probabilities in eval mode.
    pub fn probabilities(&self, features: &MfccMatrix) -> Result<[f64; 2]> {
        let input = self.check_features(features)?;
        Ok(softmax(net::eval_logits(self, &input)))
    }

    /// Eval-mode like-probability. Pure in `(self, features)`.
    pub fn predict(&self, features: &MfccMatrix) -> Result<f64> {
        Ok(self.probabilities(features)?[1])
    }
}

pub(crate) fn softmax<T: Scalar>(logits: [T; 2]) -> [f64; 2] {
    let (z0, z1) = (logits[0].f64(), logits[1].f64());
    let like = 1.0 / (1.0 + (z0 - z1).exp());
    [1.0 - like, like]
}

/// Fresh full-size critic for the default feature settings.
pub fn init_critic<R: Rng + ?Sized>(rng: &mut R) -> CriticParams<f32> {
    CriticParams::init(&CriticArch::default(), rng).expect("default architecture is valid")
}

/// Like-probability in either mode. Train mode uses the example's own batch
/// statistics and applies dropout with `dropout` rate; running statistics
/// are left untouched.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    params: &CriticParams<T>,
    features: &MfccMatrix,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> Result<f64> {
    match mode {
        Mode::Eval => params.predict(features),
        Mode::Train => {
            let input = params.check_features(features)?;
            let mask = net::dropout_mask::<T, R>(1, params.layout.dense, dropout, rng);
            let pass = net::forward_train(params, &[input.as_slice()], mask);
            Ok(pass.probs[0][1])
        }
    }
}
