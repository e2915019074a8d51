//! Small convolutional network over trajectory images:
//! `[conv3×3 → relu → maxpool2] × 2 → dense → relu → dropout → dense → sigmoid`.
//!
//! Parameters live in one flat vector (see [`Layout`]) so that optimizers,
//! gradient checks and the model file can treat them uniformly. The network
//! is generic over `f32` (training) and `f64` (gradient checking).

mod io;
mod layers;
mod train;

pub use io::write_training_log;
pub use train::{car_samples, day_samples, train_cnn, Sample, TrainConfig, TrainMeta};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageStack;
use layers::{conv3x3, conv3x3_backward, maxpool2, maxpool2_backward, pooled};

pub trait Real: Float + Sum + Send + Sync + Debug + Default + 'static {
    fn of(x: f64) -> Self;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnnKind {
    /// One-channel input per day; a car's score is the mean over its days.
    DayLevel,
    /// All days stacked as channels of a single input.
    CarLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl CnnSpec {
    pub fn new(input_channels: usize, height: usize, width: usize) -> Self {
        Self {
            input_channels,
            height,
            width,
            conv1: 8,
            conv2: 16,
            hidden: 64,
            dropout: 0.5,
        }
    }

    pub fn day_level(height: usize, width: usize) -> Self {
        Self::new(1, height, width)
    }

    pub fn car_level(days: usize, height: usize, width: usize) -> Self {
        Self::new(days, height, width)
    }

    pub fn with_widths(self, conv1: usize, conv2: usize, hidden: usize) -> Self {
        Self {
            conv1,
            conv2,
            hidden,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_channels,
            self.height,
            self.width,
            self.conv1,
            self.conv2,
            self.hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero-sized network dimension in {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.height * self.width
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Offsets of each parameter tensor within the flat parameter vector, in
/// declaration order: conv1 weights `[c1][cin][3][3]`, conv1 bias, conv2
/// weights `[c2][c1][3][3]`, conv2 bias, hidden weights `[h][flat]`, hidden
/// bias, output weights `[h]`, output bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub h1: usize,
    pub w1: usize,
    pub h2: usize,
    pub w2: usize,
    pub flat: usize,
    pub conv1_w: usize,
    pub conv1_b: usize,
    pub conv2_w: usize,
    pub conv2_b: usize,
    pub dense_w: usize,
    pub dense_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl Layout {
    fn new(s: &CnnSpec) -> Self {
        let (h1, w1) = (pooled(s.height), pooled(s.width));
        let (h2, w2) = (pooled(h1), pooled(w1));
        let flat = s.conv2 * h2 * w2;
        let conv1_w = 0;
        let conv1_b = conv1_w + s.conv1 * s.input_channels * 9;
        let conv2_w = conv1_b + s.conv1;
        let conv2_b = conv2_w + s.conv2 * s.conv1 * 9;
        let dense_w = conv2_b + s.conv2;
        let dense_b = dense_w + s.hidden * flat;
        let out_w = dense_b + s.hidden;
        let out_b = out_w + s.hidden;
        Self {
            h1,
            w1,
            h2,
            w2,
            flat,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense_w,
            dense_b,
            out_w,
            out_b,
            total: out_b + 1,
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations<F> {
    a1: Vec<F>,
    p1: Vec<F>,
    arg1: Vec<usize>,
    a2: Vec<F>,
    p2: Vec<F>,
    arg2: Vec<usize>,
    /// Hidden relu outputs before dropout.
    pub hidden: Vec<F>,
    /// Per-unit dropout multiplier: 0 or `1 / (1 - rate)`; all ones at inference.
    pub keep_scale: Vec<F>,
    pub logit: F,
    pub probability: F,
}

impl<F: Real> Activations<F> {
    /// Hidden activations after dropout.
    pub fn dropped_hidden(&self) -> Vec<F> {
        self.hidden
            .iter()
            .zip(&self.keep_scale)
            .map(|(&a, &k)| a * k)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<F> {
    pub spec: CnnSpec,
    pub params: Vec<F>,
    pub meta: TrainMeta,
}

pub(crate) fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Binary cross-entropy computed from the logit for numerical stability.
/// Binary cross-entropy against a target probability `t`.
pub(crate) fn bce_from_logit<F: Real>(z: F, t: F) -> F {
    z.max(F::zero()) - z * t + (-z.abs()).exp().ln_1p()
}

pub(crate) fn hard_target<F: Real>(y: bool) -> F {
    if y {
        F::one()
    } else {
        F::zero()
    }
}

impl<F: Real> CnnModel<F> {
    /// Fan-in scaled uniform initialization (He-uniform for relu layers).
    pub fn init(spec: CnnSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let l = spec.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![F::zero(); l.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, gain: f64| {
            let bound = (gain / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = F::of(rng.random_range(-bound..bound));
            }
        };
        fill(l.conv1_w..l.conv1_b, spec.input_channels * 9, 6.0);
        fill(l.conv2_w..l.conv2_b, spec.conv1 * 9, 6.0);
        fill(l.dense_w..l.dense_b, l.flat, 6.0);
        fill(l.out_w..l.out_b, spec.hidden, 3.0);
        Ok(Self {
            spec,
            params,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
        })
    }

    pub fn layout(&self) -> Layout {
        self.spec.layout()
    }

    fn check_input(&self, x: &[F]) -> Result<()> {
        if x.len() != self.spec.input_len() {
            return Err(Error::Shape(format!(
                "network expects {}x{}x{} input ({} values), got {}",
                self.spec.input_channels,
                self.spec.height,
                self.spec.width,
                self.spec.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Full forward pass. Dropout is applied only when `dropout_rng` is given
    /// (training mode), as inverted dropout.
    pub fn forward_with(&self, x: &[F], dropout_rng: Option<&mut dyn RngCore>) -> Result<Activations<F>> {
        self.check_input(x)?;
        let s = &self.spec;
        let l = self.layout();
        let p = &self.params;
        let (h0, w0) = (s.height, s.width);

        let mut a1 = vec![F::zero(); s.conv1 * h0 * w0];
        conv3x3(x, s.input_channels, h0, w0, &p[l.conv1_w..l.conv1_b], &p[l.conv1_b..l.conv2_w], s.conv1, &mut a1);
        relu_in_place(&mut a1);
        let mut p1 = vec![F::zero(); s.conv1 * l.h1 * l.w1];
        let mut arg1 = vec![0; p1.len()];
        maxpool2(&a1, s.conv1, h0, w0, &mut p1, &mut arg1);

        let mut a2 = vec![F::zero(); s.conv2 * l.h1 * l.w1];
        conv3x3(&p1, s.conv1, l.h1, l.w1, &p[l.conv2_w..l.conv2_b], &p[l.conv2_b..l.dense_w], s.conv2, &mut a2);
        relu_in_place(&mut a2);
        let mut p2 = vec![F::zero(); l.flat];
        let mut arg2 = vec![0; l.flat];
        maxpool2(&a2, s.conv2, l.h1, l.w1, &mut p2, &mut arg2);

        let dense_w = &p[l.dense_w..l.dense_b];
        let hidden: Vec<F> = (0..s.hidden)
            .map(|j| {
                let row = &dense_w[j * l.flat..(j + 1) * l.flat];
                let z = p[l.dense_b + j] + dot(row, &p2);
                z.max(F::zero())
            })
            .collect();

        let keep_scale = match dropout_rng {
            Some(rng) if s.dropout > 0.0 => {
                let scale = F::of(1.0 / (1.0 - s.dropout));
                (0..s.hidden)
                    .map(|_| if rng.random::<f64>() < s.dropout { F::zero() } else { scale })
                    .collect()
            }
            _ => vec![F::one(); s.hidden],
        };

        let mut logit = p[l.out_b];
        for j in 0..s.hidden {
            logit = logit + p[l.out_w + j] * hidden[j] * keep_scale[j];
        }
        Ok(Activations {
            a1,
            p1,
            arg1,
            a2,
            p2,
            arg2,
            hidden,
            keep_scale,
            logit,
            probability: sigmoid(logit),
        })
    }

    /// Probability of the positive class. `train_mode` draws a dropout mask
    /// from `rng`; otherwise the pass is deterministic.
    pub fn forward(&self, x: &[F], train_mode: bool, rng: &mut dyn RngCore) -> Result<F> {
        let acts = self.forward_with(x, train_mode.then_some(rng))?;
        Ok(acts.probability)
    }

    /// Inference-mode probability.
    pub fn predict(&self, x: &[F]) -> Result<F> {
        Ok(self.forward_with(x, None)?.probability)
    }

    /// Adds the gradient of the binary cross-entropy of one sample, scaled by
    /// `weight`, into `grad`. Returns the unweighted loss.
    pub fn accumulate_gradient(
        &self,
        x: &[F],
        target: F,
        weight: F,
        dropout_rng: Option<&mut dyn RngCore>,
        grad: &mut [F],
    ) -> Result<F> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let acts = self.forward_with(x, dropout_rng)?;
        let s = &self.spec;
        let l = self.layout();
        let p = &self.params;
        let dlogit = (acts.probability - target) * weight;
        grad[l.out_b] = grad[l.out_b] + dlogit;
        let mut dz3 = vec![F::zero(); s.hidden];
        for j in 0..s.hidden {
            let dropped = acts.hidden[j] * acts.keep_scale[j];
            grad[l.out_w + j] = grad[l.out_w + j] + dlogit * dropped;
            if acts.hidden[j] > F::zero() {
                dz3[j] = dlogit * p[l.out_w + j] * acts.keep_scale[j];
            }
        }

        let mut dp2 = vec![F::zero(); l.flat];
        for (j, &dz) in dz3.iter().enumerate() {
            if dz == F::zero() {
                continue;
            }
            grad[l.dense_b + j] = grad[l.dense_b + j] + dz;
            let row = l.dense_w + j * l.flat;
            for k in 0..l.flat {
                grad[row + k] = grad[row + k] + dz * acts.p2[k];
                dp2[k] = dp2[k] + dz * p[row + k];
            }
        }

        let mut da2 = vec![F::zero(); acts.a2.len()];
        maxpool2_backward(&dp2, &acts.arg2, &mut da2);
        relu_backward(&mut da2, &acts.a2);
        let mut dp1 = vec![F::zero(); acts.p1.len()];
        {
            let (head, tail) = grad.split_at_mut(l.conv2_b);
            conv3x3_backward(
                &acts.p1,
                s.conv1,
                l.h1,
                l.w1,
                &p[l.conv2_w..l.conv2_b],
                s.conv2,
                &da2,
                &mut head[l.conv2_w..],
                &mut tail[..s.conv2],
                Some(&mut dp1),
            );
        }

        let mut da1 = vec![F::zero(); acts.a1.len()];
        maxpool2_backward(&dp1, &acts.arg1, &mut da1);
        relu_backward(&mut da1, &acts.a1);
        {
            let (head, tail) = grad.split_at_mut(l.conv1_b);
            conv3x3_backward(
                x,
                s.input_channels,
                s.height,
                s.width,
                &p[l.conv1_w..l.conv1_b],
                s.conv1,
                &da1,
                &mut head[l.conv1_w..],
                &mut tail[..s.conv1],
                None,
            );
        }
        Ok(bce_from_logit(acts.logit, target))
    }

    /// Gradient of the summed loss over a batch, evaluated in inference mode.
    pub fn backward(&self, batch: &[(&[F], bool)]) -> Result<Vec<F>> {
        let mut grad = vec![F::zero(); self.params.len()];
        for &(x, y) in batch {
            self.accumulate_gradient(x, hard_target(y), F::one(), None, &mut grad)?;
        }
        Ok(grad)
    }

    /// Mean binary cross-entropy in inference mode.
    pub fn loss(&self, batch: &[(&[F], bool)]) -> Result<F> {
        let mut total = F::zero();
        for &(x, y) in batch {
            total = total + bce_from_logit(self.forward_with(x, None)?.logit, hard_target(y));
        }
        Ok(total / F::of(batch.len().max(1) as f64))
    }
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

fn relu_in_place<F: Real>(v: &mut [F]) {
    for x in v {
        *x = x.max(F::zero());
    }
}

/// Zeroes gradients where the relu output was not positive.
fn relu_backward<F: Real>(grad: &mut [F], out: &[F]) {
    for (g, &a) in grad.iter_mut().zip(out) {
        if a <= F::zero() {
            *g = F::zero();
        }
    }
}

fn stack_input<F: Real>(stack: &ImageStack) -> Vec<F> {
    stack.normalized().iter().map(|&v| F::of(v)).collect()
}

/// Per-day inputs for the non-missing days of a stack.
pub fn day_inputs<F: Real>(stack: &ImageStack) -> Vec<Vec<F>> {
    stack
        .channels
        .iter()
        .zip(&stack.missing)
        .filter(|(_, &m)| !m)
        .map(|(ch, _)| ch.pixels.iter().map(|&v| F::of(v / 255.0)).collect())
        .collect()
}

pub fn car_input<F: Real>(stack: &ImageStack) -> Vec<F> {
    stack_input(stack)
}

/// Mean inference probability over the stack's non-missing days.
pub fn predict_day_level<F: Real>(model: &CnnModel<F>, stack: &ImageStack) -> Result<f64> {
    if model.spec.input_channels != 1 {
        return Err(Error::Shape("day-level prediction needs a one-channel model".into()));
    }
    let days = day_inputs::<F>(stack);
    if days.is_empty() {
        return Err(Error::MissingData(format!(
            "vehicle {} has no trajectory images",
            stack.vehicle_id
        )));
    }
    let mut total = 0.0;
    for x in &days {
        total += model.predict(x)?.to_f64().unwrap_or(f64::NAN);
    }
    Ok(total / days.len() as f64)
}

/// Single inference pass over the full multi-day tensor.
pub fn predict_car_level<F: Real>(model: &CnnModel<F>, stack: &ImageStack) -> Result<f64> {
    if model.spec.input_channels != stack.days() {
        return Err(Error::Shape(format!(
            "car-level model expects {} days, stack has {}",
            model.spec.input_channels,
            stack.days()
        )));
    }
    Ok(model.predict(&car_input(stack))?.to_f64().unwrap_or(f64::NAN))
}

/// Average of the day-level and car-level probabilities.
pub fn predict_cnn_ensemble<F: Real>(
    day_model: &CnnModel<F>,
    car_model: &CnnModel<F>,
    stack: &ImageStack,
) -> Result<f64> {
    let day = predict_day_level(day_model, stack)?;
    let car = predict_car_level(car_model, stack)?;
    Ok((day + car) / 2.0)
}
