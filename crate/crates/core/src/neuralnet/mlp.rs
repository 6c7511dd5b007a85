//! Dense multilayer perceptron with hand-written backpropagation.

use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floating-point element of a network. Training runs in `f32`; the
/// finite-difference oracle runs in `f64`.
pub trait Real:
    LinalgScalar + ScalarOperand + PartialOrd + Debug + Display + Send + Sync + std::ops::AddAssign
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln_1p(self) -> Self {
                <$t>::ln_1p(self)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

impl Activation {
    fn apply<T: Real>(self, z: &mut Array2<T>) {
        match self {
            Activation::Relu => z.mapv_inplace(|x| if x > T::zero() { x } else { T::zero() }),
            Activation::Tanh => z.mapv_inplace(Real::tanh),
        }
    }

    /// Multiplies `delta` by the derivative, expressed through the activation output `a`.
    fn backprop<T: Real>(self, delta: &mut Array2<T>, a: &Array2<T>) {
        match self {
            Activation::Relu => Zip::from(delta).and(a).for_each(|d, &a| {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }),
            Activation::Tanh => Zip::from(delta).and(a).for_each(|d, &a| {
                *d = *d * (T::one() - a * a);
            }),
        }
    }
}

/// Layer `l` maps `x` (a row) to `x W_l + b_l`; `W_l` is `n_l x n_{l+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub(crate) sizes: Vec<usize>,
    pub(crate) weights: Vec<Array2<T>>,
    pub(crate) biases: Vec<Array1<T>>,
    pub(crate) activation: Activation,
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

pub fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

impl<T: Real> Mlp<T> {
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|p| Array2::zeros((p[0], p[1]))).collect(),
            biases: sizes.windows(2).map(|p| Array1::zeros(p[1])).collect(),
            activation,
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn glorot(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut net.weights {
            let (fan_in, fan_out) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| T::from_f64(rng.random_range(-limit..limit)));
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.sizes)
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut Array2<T>, &mut Array1<T>) {
        (&mut self.weights[l], &mut self.biases[l])
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| w.mapv(|x| U::from_f64(x.to_f64()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|x| U::from_f64(x.to_f64()))).collect(),
            activation: self.activation,
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_size() {
            return Err(Error::DimensionMismatch { expected: self.input_size(), found: x.ncols() });
        }
        Ok(())
    }

    /// Raw (unclamped) outputs; one row per input row.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut a = x.dot(&self.weights[0]) + &self.biases[0];
        for l in 1..=last {
            self.activation.apply(&mut a);
            a = a.dot(&self.weights[l]) + &self.biases[l];
        }
        Ok(a)
    }

    /// Mean LogCosh loss over all elements and its parameter gradients,
    /// with the mean taken over `denom` elements instead of this batch's own
    /// count so chunked batches can be summed.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<T>,
        target: ArrayView2<T>,
        denom: usize,
    ) -> Result<(f64, Gradients<T>)> {
        self.check_input(&x)?;
        if target.dim() != (x.nrows(), self.output_size()) {
            return Err(Error::DimensionMismatch {
                expected: x.nrows() * self.output_size(),
                found: target.len(),
            });
        }
        let layers = self.weights.len();
        // acts[l] is the input to layer l.
        let mut acts: Vec<Array2<T>> = Vec::with_capacity(layers);
        let mut a = x.dot(&self.weights[0]) + &self.biases[0];
        for l in 1..layers {
            self.activation.apply(&mut a);
            acts.push(a);
            a = acts[l - 1].dot(&self.weights[l]) + &self.biases[l];
        }
        let scale = T::from_f64(1.0 / denom as f64);
        let mut loss = 0.0;
        let mut delta = a;
        Zip::from(&mut delta).and(&target).for_each(|d, &t| {
            let r = *d - t;
            loss += logcosh(r.to_f64());
            *d = r.tanh() * scale;
        });
        let mut grads = Gradients::zeros_like(self);
        for l in (0..layers).rev() {
            let input = if l == 0 { x } else { acts[l - 1].view() };
            grads.weights[l] = input.t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l].t());
                self.activation.backprop(&mut prev, &acts[l - 1]);
                delta = prev;
            }
        }
        Ok((loss / denom as f64, grads))
    }

    /// Mean LogCosh loss of the raw outputs.
    pub fn loss(&self, x: ArrayView2<T>, target: ArrayView2<T>) -> Result<f64> {
        let pred = self.forward(x)?;
        if pred.dim() != target.dim() {
            return Err(Error::DimensionMismatch { expected: pred.len(), found: target.len() });
        }
        let sum: f64 = pred.iter().zip(target.iter()).map(|(p, t)| logcosh((*p - *t).to_f64())).sum();
        Ok(sum / pred.len() as f64)
    }

    pub(crate) fn parameters_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }
}

/// `log(cosh(x))` in the overflow-safe form `|x| + log(1 + e^(-2|x|)) - log 2`.
#[inline]
pub fn logcosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Mean elementwise LogCosh between equal-length slices.
pub fn logcosh_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), found: target.len() });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| logcosh(p - t)).sum::<f64>() / pred.len() as f64)
}

/// Largest relative disagreement between backprop and central differences.
///
/// The relative error of each parameter is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(net: &Mlp<f64>, x: ArrayView2<f64>, target: ArrayView2<f64>, h: f64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::invalid(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    gradient_error(net, x, target, h)
}

pub(crate) fn gradient_error(net: &Mlp<f64>, x: ArrayView2<f64>, target: ArrayView2<f64>, h: f64) -> Result<f64> {
    let denom = x.nrows() * net.output_size();
    let (_, grads) = net.loss_and_gradients(x, target, denom)?;
    let analytic = grads.flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let count = analytic.len();
    for (i, &a) in analytic.iter().enumerate().take(count) {
        let orig = *probe.parameters_mut().nth(i).unwrap();
        *probe.parameters_mut().nth(i).unwrap() = orig + h;
        let up = probe.loss(x, target)?;
        *probe.parameters_mut().nth(i).unwrap() = orig - h;
        let down = probe.loss(x, target)?;
        *probe.parameters_mut().nth(i).unwrap() = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
