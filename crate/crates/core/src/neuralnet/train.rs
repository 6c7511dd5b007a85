//! Mini-batch training with Adam and a reduce-on-plateau learning rate.
//!
//! A batch is cut into fixed-size row chunks whose gradients are computed in
//! parallel and then summed in chunk order, so the result is the same for any
//! thread count.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use super::NetworkModel;
use crate::featencode::EncodingSpec;
use crate::rangetransform::RangeTransformSpec;
use crate::sampling::{self, DataSplit, ReflectanceGrid};
use crate::{Error, Result};

const GRAD_CHUNK: usize = 256;
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub plateau_patience: usize,
    pub decay_factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler { plateau_patience: 10, decay_factor: 0.5, min_lr: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub scheduler: PlateauScheduler,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4096,
            max_epochs: 200,
            scheduler: PlateauScheduler::default(),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sch = &self.scheduler;
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && sch.min_lr > 0.0
            && sch.decay_factor > 0.0
            && sch.decay_factor < 1.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_epsilon > 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub initial_test_loss: Option<f64>,
    pub epochs: Vec<EpochStats>,
    pub final_learning_rate: f64,
    pub wall_time_s: f64,
    pub batch_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_train_loss, |e| e.train_loss)
    }

    pub fn final_test_loss(&self) -> Option<f64> {
        self.epochs.last().map_or(self.initial_test_loss, |e| e.test_loss)
    }
}

/// Encoded features and range-compressed targets, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Array2<f32>,
    pub targets: Array2<f32>,
}

impl TrainingSet {
    pub fn from_grid(
        grid: &ReflectanceGrid,
        indices: &[usize],
        encoding: &EncodingSpec,
        range: &RangeTransformSpec,
    ) -> Result<Self> {
        let layout = grid.layout();
        let width = encoding.input_size();
        let parts: Vec<(Vec<f32>, Vec<f32>)> = indices
            .par_chunks(EVAL_CHUNK)
            .map(|idx| {
                let mut f = vec![0.0f32; idx.len() * width];
                let mut t = Vec::with_capacity(idx.len() * 3);
                for (row, &i) in f.chunks_exact_mut(width).zip(idx) {
                    if !grid.valid[i] {
                        return Err(Error::invalid(format!("sample {i} is invalid and cannot be trained on")));
                    }
                    encoding.encode_into(&layout.key_at(i), row)?;
                    let y = range.forward_xyz(grid.xyz[i].map(f64::from))?;
                    t.extend(y.iter().map(|&v| v as f32));
                }
                Ok((f, t))
            })
            .collect::<Result<_>>()?;
        let (mut fs, mut ts) = (Vec::with_capacity(indices.len() * width), Vec::with_capacity(indices.len() * 3));
        for (f, t) in parts {
            fs.extend_from_slice(&f);
            ts.extend_from_slice(&t);
        }
        let shape_err = |e: ndarray::ShapeError| Error::invalid(e.to_string());
        let features = Array2::from_shape_vec((indices.len(), width), fs).map_err(shape_err)?;
        let targets = Array2::from_shape_vec((indices.len(), 3), ts).map_err(shape_err)?;
        Ok(TrainingSet { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_encoding(grid: &ReflectanceGrid, enc: &EncodingSpec) -> Result<()> {
    let m = &grid.meta;
    let res_uv = m.res_u.max(m.res_v);
    if enc.m_uv > 0 && enc.grid_res_uv != res_uv {
        return Err(Error::invalid(format!(
            "encoding selected for u/v resolution {}, dataset has {res_uv}",
            enc.grid_res_uv
        )));
    }
    if enc.m_w > 0 && enc.grid_res_w != m.res_w {
        return Err(Error::invalid(format!(
            "encoding selected for w resolution {}, dataset has {}",
            enc.grid_res_w, m.res_w
        )));
    }
    Ok(())
}

/// Trains `model` on the training part of `split` and reports per-epoch losses.
pub fn train(
    grid: &ReflectanceGrid,
    split: &DataSplit,
    model: NetworkModel,
    config: &TrainConfig,
) -> Result<(NetworkModel, TrainReport)> {
    train_with_progress(grid, split, model, config, |_| {})
}

pub fn train_with_progress(
    grid: &ReflectanceGrid,
    split: &DataSplit,
    model: NetworkModel,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(NetworkModel, TrainReport)> {
    check_encoding(grid, &model.encoding)?;
    let (train_idx, test_idx) = sampling::split(grid, split)?;
    if train_idx.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let train_set = TrainingSet::from_grid(grid, &train_idx, &model.encoding, &model.range)?;
    let test_set = if test_idx.is_empty() {
        None
    } else {
        Some(TrainingSet::from_grid(grid, &test_idx, &model.encoding, &model.range)?)
    };
    train_on_sets(model, &train_set, test_set.as_ref(), config, on_epoch)
}

/// Mean loss over a whole set, evaluated in a fixed chunk order.
pub(crate) fn evaluate(net: &Mlp<f32>, set: &TrainingSet) -> Result<f64> {
    let n = set.len();
    let sums: Vec<f64> = (0..n.div_ceil(EVAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let r = c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(n);
            let rows = r.len();
            Ok(net.loss(set.features.slice(s![r.clone(), ..]), set.targets.slice(s![r, ..]))? * rows as f64)
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / n as f64)
}

struct PlateauState {
    cfg: PlateauScheduler,
    best: f64,
    bad_epochs: usize,
}

impl PlateauState {
    fn new(cfg: PlateauScheduler) -> Self {
        PlateauState { cfg, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Learning rate for the next epoch given this epoch's monitored loss.
    fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.cfg.plateau_patience {
            return lr;
        }
        self.bad_epochs = 0;
        if lr > self.cfg.min_lr {
            (lr * self.cfg.decay_factor).max(self.cfg.min_lr)
        } else {
            lr
        }
    }
}

struct Adam {
    m: Gradients<f32>,
    v: Gradients<f32>,
    t: i32,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    fn new(net: &Mlp<f32>, cfg: &TrainConfig) -> Self {
        Adam {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            eps: cfg.adam_epsilon as f32,
        }
    }

    fn step(&mut self, net: &mut Mlp<f32>, g: &Gradients<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - (b1 as f64).powi(self.t);
        let c2 = 1.0 - (b2 as f64).powi(self.t);
        // Bias corrections folded into the step size.
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps_hat = eps * c2.sqrt() as f32;
        let update = |p: &mut f32, &g: &f32, m: &mut f32, v: &mut f32| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps_hat);
        };
        for l in 0..net.weights.len() {
            Zip::from(&mut net.weights[l])
                .and(&g.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(update);
            Zip::from(&mut net.biases[l])
                .and(&g.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(update);
        }
    }
}

fn batch_gradients(net: &Mlp<f32>, x: ArrayView2<f32>, t: ArrayView2<f32>) -> Result<(f64, Gradients<f32>)> {
    let rows = x.nrows();
    let denom = rows * net.output_size();
    let parts: Vec<(f64, Gradients<f32>)> = (0..rows.div_ceil(GRAD_CHUNK))
        .into_par_iter()
        .map(|c| {
            let r = c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(rows);
            net.loss_and_gradients(x.slice(s![r.clone(), ..]), t.slice(s![r, ..]), denom)
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

pub(crate) fn train_on_sets(
    mut model: NetworkModel,
    train_set: &TrainingSet,
    test_set: Option<&TrainingSet>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(NetworkModel, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let n = train_set.len();
    let width = model.net.input_size();
    if train_set.features.ncols() != width {
        return Err(Error::DimensionMismatch { expected: width, found: train_set.features.ncols() });
    }
    let initial_train_loss = evaluate(&model.net, train_set)?;
    let initial_test_loss = test_set.map(|t| evaluate(&model.net, t)).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(&model.net, config);
    let mut lr = config.learning_rate;
    let mut plateau = PlateauState::new(config.scheduler);
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let bs = config.batch_size.min(n);
    let mut xb = Array2::<f32>::zeros((bs, width));
    let mut tb = Array2::<f32>::zeros((bs, 3));

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(bs) {
            let rows = batch.len();
            for (r, &i) in batch.iter().enumerate() {
                xb.row_mut(r).assign(&train_set.features.row(i));
                tb.row_mut(r).assign(&train_set.targets.row(i));
            }
            let (loss, grads) =
                batch_gradients(&model.net, xb.slice(s![..rows, ..]), tb.slice(s![..rows, ..]))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("batch loss became {loss} at learning rate {lr}") });
            }
            loss_sum += loss * rows as f64;
            adam.step(&mut model.net, &grads, lr);
        }
        let train_loss = loss_sum / n as f64;
        let test_loss = test_set.map(|t| evaluate(&model.net, t)).transpose()?;
        let monitored = test_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("monitored loss became {monitored}") });
        }
        let stats = EpochStats { epoch, train_loss, test_loss, learning_rate: lr };
        on_epoch(&stats);
        epochs.push(stats);

        lr = plateau.observe(monitored, lr);
    }

    let report = TrainReport {
        initial_train_loss,
        initial_test_loss,
        epochs,
        final_learning_rate: lr,
        wall_time_s: started.elapsed().as_secs_f64(),
        batch_size: config.batch_size,
        n_train: n,
        n_test: test_set.map_or(0, TrainingSet::len),
        seed: config.seed,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{Activation, Architecture};
    use rand::Rng;

    fn toy_sets(seed: u64) -> (NetworkModel, TrainingSet, TrainingSet) {
        let enc = EncodingSpec::raw();
        let model = NetworkModel::init(
            enc,
            RangeTransformSpec::default(),
            &Architecture::Explicit { hidden: vec![32, 16] },
            Activation::Relu,
            seed,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let make = |rng: &mut ChaCha8Rng, n: usize| {
            let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0f32..1.0));
            let t = Array2::from_shape_fn((n, 3), |(r, c)| {
                (0.5 + 0.3 * (x[[r, c]] * 2.0).sin() * x[[r, (c + 1) % 3]]).clamp(0.0, 1.0)
            });
            TrainingSet { features: x, targets: t }
        };
        let a = make(&mut rng, 700);
        let b = make(&mut rng, 200);
        (model, a, b)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { max_epochs: epochs, batch_size: 64, learning_rate: 3e-3, seed: 5, ..Default::default() }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (model, tr, te) = toy_sets(1);
        let (out, report) = train_on_sets(model.clone(), &tr, Some(&te), &cfg(0), |_| {}).unwrap();
        assert_eq!(out, model);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn loss_decreases() {
        let (model, tr, te) = toy_sets(2);
        let (_, report) = train_on_sets(model, &tr, Some(&te), &cfg(30), |_| {}).unwrap();
        assert!(report.final_train_loss() < report.initial_train_loss);
        assert!(report.final_test_loss().unwrap() < report.initial_test_loss.unwrap());
        let avg = |s: &[EpochStats]| s.iter().map(|e| e.train_loss).sum::<f64>() / s.len() as f64;
        assert!(avg(&report.epochs[20..]) <= avg(&report.epochs[..10]));
    }

    #[test]
    fn deterministic_curves() {
        let (model, tr, te) = toy_sets(3);
        let (m1, r1) = train_on_sets(model.clone(), &tr, Some(&te), &cfg(5), |_| {}).unwrap();
        let (m2, r2) = train_on_sets(model, &tr, Some(&te), &cfg(5), |_| {}).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.epochs, r2.epochs);
    }

    #[test]
    fn chunked_gradients_match_whole_batch() {
        let (model, tr, _) = toy_sets(4);
        let x = tr.features.slice(s![..600, ..]);
        let t = tr.targets.slice(s![..600, ..]);
        let (l1, g1) = batch_gradients(&model.net, x, t).unwrap();
        let (l2, g2) = model.net.loss_and_gradients(x, t, 1800).unwrap();
        assert!((l1 - l2).abs() < 1e-9);
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn plateau_decays_learning_rate() {
        let cfg = PlateauScheduler { plateau_patience: 2, decay_factor: 0.5, min_lr: 0.1 };
        let mut p = PlateauState::new(cfg);
        let mut lr = 1.0;
        let mut seen = Vec::new();
        for loss in [5.0, 4.0, 4.0, 4.5, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0] {
            lr = p.observe(loss, lr);
            seen.push(lr);
        }
        assert_eq!(seen, vec![1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125, 0.1, 0.1, 0.1]);
    }

    #[test]
    fn divergence_is_reported() {
        let (mut model, tr, _) = toy_sets(6);
        let last = model.net.biases.len() - 1;
        model.net.biases[last].fill(f32::NAN);
        let err = train_on_sets(model, &tr, None, &cfg(2), |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn bad_config_rejected() {
        let (model, tr, _) = toy_sets(7);
        let mut c = cfg(1);
        c.scheduler.decay_factor = 1.0;
        assert!(train_on_sets(model, &tr, None, &c, |_| {}).is_err());
    }
}
