//! Network container, synthetic tasks, optimizers and the training loop.
//!
//! Per-item gradients run in parallel and are summed in item order, so a run
//! is bit-for-bit reproducible from its seed regardless of thread count.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::displacement::distance_to_gm;
use crate::dsl::parse_group;
use crate::error::{Error, Result};
use crate::group::{ElemId, FiniteGroup, Subgroup};
use crate::group_matrix::{densify, gm_from_coeffs, Dense};
use crate::layers::{
    equivariance_error_with, right_translation_actions, DenseReadout, ErrorSpec, GMConvLayer, GMPoolLayer,
    IndexAction, Layer, PRelu, PoolMode, Signal, StrideLayer,
};
use crate::sampling::{normal_dense, normal_vec, stream};

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const PERTURB_STREAM: u64 = 4;
const TARGET_STREAM: u64 = 5;

/// One entry of an architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerConfig {
    Conv {
        /// Must describe the group the signal currently lives on.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group: Option<String>,
        k: usize,
        channels: usize,
        #[serde(default = "default_error")]
        error: String,
        #[serde(default)]
        residual: bool,
    },
    Pool {
        /// Subgroup generators as element labels or ids; empty pools over all of G.
        generators: Vec<String>,
        mode: PoolMode,
    },
    Stride {
        generators: Vec<String>,
        k: usize,
        channels: usize,
        #[serde(default = "default_error")]
        error: String,
    },
    Prelu,
    Readout {
        outputs: usize,
    },
}

fn default_error() -> String {
    "none".into()
}

fn resolve(group: &FiniteGroup, names: &[String]) -> Result<Vec<ElemId>> {
    names
        .iter()
        .map(|n| {
            group
                .find(n)
                .ok_or_else(|| Error::Config(format!("unknown group element '{n}'")))
        })
        .collect()
}

#[derive(Debug)]
struct Slot {
    layer: Box<dyn Layer>,
    residual: bool,
}

/// An ordered stack of layers with a flat parameter view.
#[derive(Debug)]
pub struct Network {
    slots: Vec<Slot>,
    input_group: Arc<FiniteGroup>,
    output_group: Option<Arc<FiniteGroup>>,
}

/// Layer summary used by reports and the parameter manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub index: usize,
    pub kind: String,
    pub offset: usize,
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_per_pair: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_params: Option<usize>,
}

fn with_layer_index<T>(r: Result<T>, index: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::LayerShape { msg, .. } => Error::LayerShape { layer: index, msg },
        other => other,
    })
}

impl Network {
    /// Builds the stack for inputs with `in_channels` channels over `group`,
    /// checking that consecutive layers agree on group and channel count.
    pub fn build(group: &Arc<FiniteGroup>, in_channels: usize, layers: &[LayerConfig], rng: &mut impl Rng) -> Result<Self> {
        let mut slots = Vec::new();
        let mut current: Option<Arc<FiniteGroup>> = Some(group.clone());
        let mut shape = (in_channels, group.order());
        for (index, cfg) in layers.iter().enumerate() {
            let bad = |msg: String| Error::Config(format!("layer {index}: {msg}"));
            let here = current.clone();
            let need_group = || here.clone().ok_or_else(|| bad("no group left after the readout".into()));
            let layer: Box<dyn Layer> = match cfg {
                LayerConfig::Conv {
                    group: spec,
                    k,
                    channels,
                    error,
                    residual,
                } => {
                    let g = need_group()?;
                    if let Some(spec) = spec {
                        let named = parse_group(spec)?;
                        if named.table() != g.table() {
                            return Err(bad(format!("group '{spec}' does not match the incoming signal")));
                        }
                    }
                    if *residual && *channels != shape.0 {
                        return Err(bad("residual connections need equal in/out channels".into()));
                    }
                    Box::new(GMConvLayer::new(&g, *k, shape.0, *channels, ErrorSpec::parse(error)?, rng)?)
                }
                LayerConfig::Pool { generators, mode } => {
                    let g = need_group()?;
                    let h = Subgroup::from_generators(g.clone(), &resolve(&g, generators)?)?;
                    let pool = GMPoolLayer::new(&h, *mode, shape.0);
                    current = Some(pool.output_group().clone());
                    Box::new(pool)
                }
                LayerConfig::Stride {
                    generators,
                    k,
                    channels,
                    error,
                } => {
                    let g = need_group()?;
                    let h = Subgroup::from_generators(g.clone(), &resolve(&g, generators)?)?;
                    let conv = GMConvLayer::new(&g, *k, shape.0, *channels, ErrorSpec::parse(error)?, rng)?;
                    let s = StrideLayer::new(&h, conv)?;
                    current = Some(s.output_group().clone());
                    Box::new(s)
                }
                LayerConfig::Prelu => Box::new(PRelu::new(shape.0, shape.1)),
                LayerConfig::Readout { outputs } => {
                    current = None;
                    Box::new(DenseReadout::new(shape, *outputs, rng))
                }
            };
            if layer.in_shape() != shape {
                return Err(bad(format!("expects {:?}, receives {:?}", layer.in_shape(), shape)));
            }
            let residual = matches!(cfg, LayerConfig::Conv { residual: true, .. });
            shape = layer.out_shape();
            slots.push(Slot { layer, residual });
        }
        Ok(Network {
            slots,
            input_group: group.clone(),
            output_group: current,
        })
    }

    pub fn input_group(&self) -> &Arc<FiniteGroup> {
        &self.input_group
    }

    /// Group indexing the output, `None` after a readout.
    pub fn output_group(&self) -> Option<&Arc<FiniteGroup>> {
        self.output_group.as_ref()
    }

    pub fn in_shape(&self) -> (usize, usize) {
        self.slots.first().map_or((0, 0), |s| s.layer.in_shape())
    }

    pub fn out_shape(&self) -> (usize, usize) {
        self.slots.last().map_or((0, 0), |s| s.layer.out_shape())
    }

    pub fn layers(&self) -> impl Iterator<Item = &dyn Layer> {
        self.slots.iter().map(|s| s.layer.as_ref())
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut (dyn Layer + 'static)> {
        self.slots.get_mut(index).map(|s| s.layer.as_mut())
    }

    pub fn param_count(&self) -> usize {
        self.slots.iter().map(|s| s.layer.params().len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.slots.iter().flat_map(|s| s.layer.params().iter().copied()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a network with {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for s in &mut self.slots {
            let p = s.layer.params_mut();
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        }
        Ok(())
    }

    pub fn summary(&self) -> Vec<LayerSummary> {
        let mut off = 0;
        self.slots
            .iter()
            .enumerate()
            .map(|(index, s)| {
                let len = s.layer.params().len();
                let mut row = LayerSummary {
                    index,
                    kind: s.layer.kind().to_string(),
                    offset: off,
                    len,
                    weights_per_pair: None,
                    channel_pairs: None,
                    error_params: None,
                };
                if let Some(c) = s.layer.as_gconv() {
                    let (ci, co) = c.channels();
                    row.weights_per_pair = Some(c.weights_per_pair());
                    row.channel_pairs = Some(ci * co);
                    row.error_params = Some(c.error_count());
                }
                off += len;
                row
            })
            .collect()
    }

    /// Inputs to every layer followed by the network output.
    pub fn forward_tape(&self, x: &Signal) -> Result<Vec<Signal>> {
        let mut tape = Vec::with_capacity(self.slots.len() + 1);
        tape.push(x.clone());
        for (i, s) in self.slots.iter().enumerate() {
            let input = tape.last().unwrap();
            let mut y = with_layer_index(s.layer.forward(input), i)?;
            if s.residual {
                for (yc, xc) in y.iter_mut().zip(input) {
                    for (a, b) in yc.iter_mut().zip(xc) {
                        *a += b;
                    }
                }
            }
            tape.push(y);
        }
        Ok(tape)
    }

    pub fn forward(&self, x: &Signal) -> Result<Signal> {
        Ok(self.forward_tape(x)?.pop().unwrap())
    }

    /// Flat parameter gradient for an upstream gradient on the output.
    pub fn backward(&self, tape: &[Signal], dy: &Signal) -> Result<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.slots.len());
        let mut d = dy.clone();
        for (i, s) in self.slots.iter().enumerate().rev() {
            let g = with_layer_index(s.layer.backward(&tape[i], &d), i)?;
            let mut dx = g.dx;
            if s.residual {
                for (a, b) in dx.iter_mut().zip(&d) {
                    for (u, v) in a.iter_mut().zip(b) {
                        *u += v;
                    }
                }
            }
            grads.push(g.dparams);
            d = dx;
        }
        grads.reverse();
        Ok(grads.concat())
    }

    /// Right-translation actions on inputs paired with the matching action on
    /// outputs: the same translation when the output lives on the input
    /// group, the identity when the output is a readout (invariance).
    pub fn equivariance_actions(&self) -> Option<(Vec<IndexAction>, Vec<IndexAction>)> {
        let g = &self.input_group;
        let ins = right_translation_actions(g);
        match &self.output_group {
            Some(out) if out.table() == g.table() => Some((ins.clone(), ins)),
            None => {
                let (_, len) = self.out_shape();
                let id: IndexAction = (0..len).map(Some).collect();
                Some((ins, vec![id; g.order()]))
            }
            Some(_) => None,
        }
    }

    pub fn equivariance_error(&self, samples: &[Signal]) -> Result<Option<f64>> {
        let Some((ins, outs)) = self.equivariance_actions() else {
            return Ok(None);
        };
        equivariance_error_with(|x| self.forward(x), &ins, &outs, samples).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Values(Signal),
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

/// Loss and gradient with respect to the output for one item.
pub fn item_loss(loss: Loss, out: &Signal, target: &Target) -> Result<(f64, Signal)> {
    match (loss, target) {
        (Loss::Mse, Target::Values(t)) => {
            let count = t.iter().map(Vec::len).sum::<usize>().max(1) as f64;
            let mut total = 0.0;
            let grad = out
                .iter()
                .zip(t)
                .map(|(oc, tc)| {
                    oc.iter()
                        .zip(tc)
                        .map(|(o, tv)| {
                            let d = o - tv;
                            total += d * d;
                            2.0 * d / count
                        })
                        .collect()
                })
                .collect();
            Ok((total / count, grad))
        }
        (Loss::CrossEntropy, Target::Class(c)) => {
            let logits: Vec<f64> = out.iter().map(|v| v[0]).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            let loss = -(exps[*c] / z).ln();
            let grad = exps
                .iter()
                .enumerate()
                .map(|(i, e)| vec![e / z - if i == *c { 1.0 } else { 0.0 }])
                .collect();
            Ok((loss, grad))
        }
        _ => Err(Error::Config("loss does not match the target type".into())),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Signal>,
    pub targets: Vec<Target>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mean loss of `net` over `data`.
pub fn evaluate(net: &Network, data: &Dataset, loss: Loss) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let losses = data
        .inputs
        .par_iter()
        .zip(&data.targets)
        .map(|(x, t)| Ok(item_loss(loss, &net.forward(x)?, t)?.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Mean loss and summed-then-averaged gradient over the given items.
pub fn batch_gradient(net: &Network, data: &Dataset, items: &[usize], loss: Loss) -> Result<(f64, Vec<f64>)> {
    let per_item = items
        .par_iter()
        .map(|&i| {
            let tape = net.forward_tape(&data.inputs[i])?;
            let (l, dy) = item_loss(loss, tape.last().unwrap(), &data.targets[i])?;
            Ok((l, net.backward(&tape, &dy)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; net.param_count()];
    let mut total = 0.0;
    for (l, g) in &per_item {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = items.len().max(1) as f64;
    grad.iter_mut().for_each(|v| *v /= n);
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn default_lr() -> f64 {
    0.003
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epochs() -> usize {
    2000
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Decoupled (AdamW-style) decay for Adam, L2 for SGD.
    #[serde(default)]
    pub weight_decay: f64,
    /// 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement; 0 disables.
    #[serde(default)]
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: default_optimizer(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            weight_decay: 0.0,
            batch_size: 0,
            max_epochs: default_epochs(),
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if !ok {
            return Err(Error::Config(
                "learning_rate must be positive, weight_decay non-negative, betas in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Adam (decoupled weight decay) or plain SGD over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: TrainConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: usize) -> Self {
        Optimizer {
            cfg: cfg.clone(),
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = &self.cfg;
        let lr = c.learning_rate;
        match c.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * (g + c.weight_decay * *p);
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let b1t = 1.0 - c.beta1.powi(self.t);
                let b2t = 1.0 - c.beta2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let update = (*m / b1t) / ((*v / b2t).sqrt() + 1e-8);
                    *p -= lr * (update + c.weight_decay * *p);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ExactGconvTarget,
    PerturbedGconvTarget,
    InvariantClassification,
}

fn default_samples() -> usize {
    128
}
fn default_task_k() -> usize {
    1
}
fn default_rank() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Training samples; validation and test sets get a quarter each (at least 8).
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Standard deviation of additive target noise.
    #[serde(default)]
    pub noise: f64,
    /// Radius of the hidden kernel's support.
    #[serde(default = "default_task_k")]
    pub k: usize,
    /// Perturbation size relative to ‖T‖_F.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_rank")]
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// The map generating regression targets.
    pub target_map: Option<Dense>,
    pub loss: Loss,
}

/// Rank-`rank` perturbation orthogonal-ish to the group matrices with
/// Frobenius norm `sigma·‖t‖_F`: a random matrix minus its group-matrix
/// projection, truncated by SVD.
pub fn gm_free_perturbation(
    group: &Arc<FiniteGroup>,
    t: &Dense,
    sigma: f64,
    rank: usize,
    rng: &mut impl Rng,
) -> Result<Dense> {
    let n = group.order();
    let raw = normal_dense(rng, n, n);
    let proj = distance_to_gm(&raw, group)?.projection;
    let off = raw - densify(&proj);
    let svd = off.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut d = Dense::zeros(n, n);
    for &i in order.iter().take(rank.min(n)) {
        d += svd.singular_values[i] * u.column(i) * vt.row(i);
    }
    let norm = d.norm();
    if norm == 0.0 || sigma == 0.0 {
        return Ok(Dense::zeros(n, n));
    }
    Ok(d * (sigma * t.norm() / norm))
}

/// Generates train/val/test splits. The same seed always yields the same data;
/// the perturbation uses its own stream so `sigma = 0` reproduces the exact task.
pub fn make_task(task: &TaskConfig, group: &Arc<FiniteGroup>, seed: u64) -> Result<TaskData> {
    let n = group.order();
    let held_out = (task.samples / 4).max(8);
    let mut data_rng = stream(seed, DATA_STREAM);
    let mut draw = |count: usize| -> Vec<Signal> { (0..count).map(|_| vec![normal_vec(&mut data_rng, n)]).collect() };
    let inputs = [draw(task.samples), draw(held_out), draw(held_out)];

    let (target_map, loss) = match task.kind {
        TaskKind::InvariantClassification => (None, Loss::CrossEntropy),
        TaskKind::ExactGconvTarget | TaskKind::PerturbedGconvTarget => {
            let mut trng = stream(seed, TARGET_STREAM);
            let mut phi = vec![0.0; n];
            for g in group.word_ball(task.k) {
                phi[g] = trng.random_range(-1.0..=1.0);
            }
            let mut t = densify(&gm_from_coeffs(group, &phi)?);
            if task.kind == TaskKind::PerturbedGconvTarget {
                let mut prng = stream(seed, PERTURB_STREAM);
                t += gm_free_perturbation(group, &t, task.sigma, task.rank, &mut prng)?;
            }
            (Some(t), Loss::Mse)
        }
    };

    let mut noise_rng = stream(seed, TARGET_STREAM + 100);
    let mut label = |x: &Signal| -> Target {
        match &target_map {
            None => Target::Class(usize::from(x[0].iter().map(|v| v * v * v).sum::<f64>() > 0.0)),
            Some(t) => {
                let y = t * nalgebra::DVector::from_column_slice(&x[0]);
                let mut y: Vec<f64> = y.iter().copied().collect();
                if task.noise > 0.0 {
                    for (v, e) in y.iter_mut().zip(normal_vec(&mut noise_rng, n)) {
                        *v += task.noise * e;
                    }
                }
                Target::Values(vec![y])
            }
        }
    };
    let [train, val, test] = inputs.map(|xs| {
        let targets = xs.iter().map(&mut label).collect();
        Dataset { inputs: xs, targets }
    });
    Ok(TaskData {
        train,
        val,
        test,
        target_map,
        loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub equivariance_error: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub test_loss: f64,
    pub equivariance_error: Option<f64>,
    pub epochs_run: usize,
}

/// Samples used for the per-epoch equivariance measurement.
const EQUIV_SAMPLES: usize = 4;

/// Trains `net` in place. Metrics record equivariance every `equiv_every`
/// epochs (and on the last), 0 disables the per-epoch measurement.
pub fn train(net: &mut Network, data: &TaskData, cfg: &TrainConfig, seed: u64, equiv_every: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut opt = Optimizer::new(cfg, net.param_count());
    let mut shuffle_rng = stream(seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let batch = if cfg.batch_size == 0 { order.len().max(1) } else { cfg.batch_size };
    let probe: Vec<Signal> = data.val.inputs.iter().take(EQUIV_SAMPLES).cloned().collect();
    let mut metrics = Vec::new();
    let mut best = (f64::INFINITY, net.params(), 0usize);
    let mut params = net.params();

    for epoch in 0..cfg.max_epochs {
        if batch < order.len() {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            let (l, g) = batch_gradient(net, &data.train, chunk, data.loss)?;
            opt.step(&mut params, &g);
            net.set_params(&params)?;
            loss_sum += l;
            batches += 1;
        }
        let val_loss = evaluate(net, &data.val, data.loss)?;
        let last = epoch + 1 == cfg.max_epochs;
        let equiv = if equiv_every > 0 && (epoch % equiv_every == 0 || last) {
            net.equivariance_error(&probe)?
        } else {
            None
        };
        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_loss,
            equivariance_error: equiv,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
        }
        if cfg.patience > 0 && epoch - best.2 >= cfg.patience {
            params = best.1.clone();
            net.set_params(&params)?;
            break;
        }
    }

    Ok(TrainOutcome {
        epochs_run: metrics.len(),
        metrics,
        final_train_loss: evaluate(net, &data.train, data.loss)?,
        final_val_loss: evaluate(net, &data.val, data.loss)?,
        test_loss: evaluate(net, &data.test, data.loss)?,
        equivariance_error: net.equivariance_error(&probe)?,
    })
}

fn default_sweep_models() -> Vec<String> {
    vec!["none".into(), "full".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Data perturbation levels (task `sigma`).
    pub levels: Vec<f64>,
    /// Error term applied to every conv layer for each model variant.
    #[serde(default = "default_sweep_models")]
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub model: String,
    pub equivariance_error: f64,
    pub test_loss: f64,
}

/// Copy of `layers` with every conv/stride error term replaced by `error`.
pub fn with_error_term(layers: &[LayerConfig], error: &str) -> Vec<LayerConfig> {
    layers
        .iter()
        .cloned()
        .map(|mut l| {
            match &mut l {
                LayerConfig::Conv { error: e, .. } | LayerConfig::Stride { error: e, .. } => *e = error.to_string(),
                _ => {}
            }
            l
        })
        .collect()
}

/// Trains each model variant on the perturbed task at every level and
/// measures the trained model's equivariance error on test inputs.
pub fn run_equivariance_sweep(cfg: &ExperimentConfig, sweep: &SweepConfig) -> Result<Vec<SweepRow>> {
    let group = Arc::new(parse_group(&cfg.group)?);
    let mut rows = Vec::new();
    for &level in &sweep.levels {
        let mut task = cfg.task.clone();
        task.kind = TaskKind::PerturbedGconvTarget;
        task.sigma = level;
        let data = make_task(&task, &group, cfg.seed)?;
        let samples: Vec<Signal> = data.test.inputs.iter().take(EQUIV_SAMPLES).cloned().collect();
        for model in &sweep.models {
            let arch = with_error_term(&cfg.architecture, model);
            let mut net = Network::build(&group, 1, &arch, &mut stream(cfg.seed, INIT_STREAM))?;
            let out = train(&mut net, &data, &cfg.train, cfg.seed, 0)?;
            let err = net
                .equivariance_error(&samples)?
                .ok_or_else(|| Error::Config("sweep needs outputs on the input group or a readout".into()))?;
            rows.push(SweepRow {
                level,
                model: model.clone(),
                equivariance_error: err,
                test_loss: out.test_loss,
            });
        }
    }
    Ok(rows)
}

/// A full experiment: group, architecture, task, optimizer, optional sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub group: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub architecture: Vec<LayerConfig>,
    pub task: TaskConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.train.validate()?;
        if cfg.architecture.is_empty() {
            return Err(Error::Config("architecture is empty".into()));
        }
        if cfg.task.samples == 0 {
            return Err(Error::Config("task.samples must be positive".into()));
        }
        if cfg.task.sigma < 0.0 || cfg.task.noise < 0.0 {
            return Err(Error::Config("task.sigma and task.noise must be non-negative".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub group: String,
    pub seed: u64,
    pub task: TaskKind,
    pub parameter_count: usize,
    pub layers: Vec<LayerSummary>,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub test_loss: f64,
    pub equivariance_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
}

/// Trains the configured model and returns the network with its report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Network, TrainOutcome, TrainReport)> {
    let group = Arc::new(parse_group(&cfg.group)?);
    let data = make_task(&cfg.task, &group, cfg.seed)?;
    let mut net = Network::build(&group, 1, &cfg.architecture, &mut stream(cfg.seed, INIT_STREAM))?;
    let expected = match data.loss {
        Loss::Mse => (1, group.order()),
        Loss::CrossEntropy => (2, 1),
    };
    if net.out_shape() != expected {
        return Err(Error::Config(format!(
            "architecture outputs {:?}, task needs {:?}",
            net.out_shape(),
            expected
        )));
    }
    let outcome = train(&mut net, &data, &cfg.train, cfg.seed, 10)?;
    let sweep = cfg.sweep.as_ref().map(|s| run_equivariance_sweep(cfg, s)).transpose()?;
    let report = TrainReport {
        group: cfg.group.clone(),
        seed: cfg.seed,
        task: cfg.task.kind,
        parameter_count: net.param_count(),
        layers: net.summary(),
        epochs_run: outcome.epochs_run,
        final_train_loss: outcome.final_train_loss,
        final_val_loss: outcome.final_val_loss,
        test_loss: outcome.test_loss,
        equivariance_error: outcome.equivariance_error,
        sweep,
    };
    Ok((net, outcome, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamManifest {
    pub group: String,
    pub parameter_count: usize,
    pub layers: Vec<LayerSummary>,
}

/// Writes `metrics.csv`, `report.json`, `params.gmat` with its `params.json`
/// manifest, and `sweep.csv` when a sweep ran.
pub fn write_outputs(dir: &Path, net: &Network, outcome: &TrainOutcome, report: &TrainReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    for m in &outcome.metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let p = net.params();
    crate::io::save_matrix(&Dense::from_row_slice(1, p.len(), &p), &dir.join("params.gmat"))?;
    let manifest = ParamManifest {
        group: report.group.clone(),
        parameter_count: p.len(),
        layers: report.layers.clone(),
    };
    fs::write(dir.join("params.json"), serde_json::to_string_pretty(&manifest)?)?;
    if let Some(rows) = &report.sweep {
        write_sweep_csv(&dir.join("sweep.csv"), rows)?;
    }
    Ok(())
}

/// One row per level with `<model>_equivariance_error` and `<model>_test_loss`
/// columns for each model, in first-seen order.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut models: Vec<&str> = Vec::new();
    let mut levels: Vec<f64> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        if !levels.contains(&r.level) {
            levels.push(r.level);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["level".to_string()];
    for m in &models {
        header.push(format!("{m}_equivariance_error"));
        header.push(format!("{m}_test_loss"));
    }
    w.write_record(&header)?;
    for level in levels {
        let mut rec = vec![level.to_string()];
        for m in &models {
            match rows.iter().find(|r| r.level == level && r.model == *m) {
                Some(r) => {
                    rec.push(r.equivariance_error.to_string());
                    rec.push(r.test_loss.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
