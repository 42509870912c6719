//! Momentum SGD, the inverse-decay learning-rate schedule and the training
//! and evaluation loops.

use std::time::{Duration, Instant};

use log::{debug, info};

use crate::data::{epoch_permutation, make_batches, Dataset};
use crate::init::{precision_adjustment, whole_network_adjustment, InitAlgorithm, InitReport};
use crate::network::Network;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitEvent {
    pub algorithm: InitAlgorithm,
    /// Iteration before which the algorithm runs.
    pub at: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub weight_decay: f64,
    pub gamma: f64,
    pub power: f64,
    pub seed: u64,
    /// Evaluate on the test set every this many iterations; 0 only at the end.
    pub eval_every: usize,
    pub init_schedule: Vec<InitEvent>,
    /// Samples drawn from the training set for precision adjustment.
    pub init_batch: usize,
    /// Chunk size for test-set evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            momentum: 0.9,
            batch_size: 100,
            max_iters: 18_000,
            weight_decay: 0.0,
            gamma: 1e-4,
            power: 0.75,
            seed: 1000,
            eval_every: 0,
            init_schedule: Vec::new(),
            init_batch: 1000,
            eval_batch: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weight_decay != 0.0 {
            return Err(Error::Unimplemented(format!(
                "weight decay ({}) is not supported; it must be 0",
                self.weight_decay
            )));
        }
        let rates = [
            ("base_lr", self.base_lr),
            ("momentum", self.momentum),
            ("gamma", self.gamma),
            ("power", self.power),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be a nonnegative number, got {v}")));
        }
        if self.batch_size == 0 || self.eval_batch == 0 || self.init_batch == 0 {
            return Err(Error::invalid("batch sizes must be at least 1"));
        }
        Ok(())
    }
}

/// `base_lr / (1 + gamma·n)^power`
pub fn lr_at(n: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr / (1.0 + cfg.gamma * n as f64).powf(cfg.power)
}

/// Velocity-form momentum SGD: `v ← μv − lr·m·g`, `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(net: &Network) -> Self {
        Sgd {
            velocity: net.params().into_iter().map(|(_, p)| Tensor::zeros_like(&p.value)).collect(),
        }
    }

    pub fn reset(&mut self) {
        for v in &mut self.velocity {
            v.fill(0.0);
        }
    }

    pub fn step(&mut self, net: &mut Network, lr: f64, momentum: f64) -> Result<()> {
        let params = net.params_mut();
        if params.len() != self.velocity.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, network has {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for ((key, p), v) in params.into_iter().zip(&mut self.velocity) {
            if v.shape() != p.value.shape() {
                return Err(Error::shape(format!("optimizer state for `{key}` has the wrong shape")));
            }
            if p.lr_mult == 0.0 {
                continue;
            }
            let rate = lr * p.lr_mult;
            for ((vi, th), g) in v.data_mut().iter_mut().zip(p.value.data_mut()).zip(p.grad.data()) {
                *vi = momentum * *vi - rate * g;
                *th += *vi;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub iteration: usize,
    pub lr: f64,
    /// Mean training loss since the previous evaluation point.
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub points: Vec<EvalPoint>,
    pub final_accuracy: f64,
    pub seed: u64,
    pub wall_time: Duration,
    pub init_reports: Vec<InitReport>,
}

/// Test-set accuracy in chunks of `batch`; parameters are not touched.
pub fn evaluate(net: &mut Network, ds: &Dataset, batch: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let batch = batch.max(1);
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch) {
        let (x, labels) = ds.batch(chunk)?;
        let logits = net.logits(&x)?;
        let classes = logits.len() / chunk.len();
        for (row, &label) in logits.data().chunks_exact(classes).zip(&labels) {
            let arg = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0;
            correct += usize::from(arg == label);
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stream.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Runs one data-dependent initializer on samples drawn from `train`.
pub fn run_init(
    net: &mut Network,
    algorithm: &InitAlgorithm,
    train: &Dataset,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<InitReport> {
    let seed = derived_seed(cfg.seed, stream);
    match algorithm {
        InitAlgorithm::Xavier => Ok(InitReport {
            algorithm: algorithm.to_string(),
            ..Default::default()
        }),
        InitAlgorithm::PrecisionAdjustment { target_std } => {
            let order = epoch_permutation(train.len(), seed);
            let (x, _) = train.batch(&order[..cfg.init_batch.min(train.len())])?;
            precision_adjustment(net, &x, *target_std)
        }
        InitAlgorithm::WholeNetwork(opts) => {
            let size = cfg.batch_size.min(train.len());
            let batches: Vec<_> = make_batches(train, size, seed)?.take(opts.max_iters + 1).collect();
            whole_network_adjustment(net, &batches, opts)
        }
    }
}

/// Trains for `cfg.max_iters` iterations over reshuffled epochs, calling
/// `sink` with every evaluation point as soon as it is available.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&EvalPoint) -> Result<()>,
) -> Result<RunResult> {
    cfg.validate()?;
    if train_set.sample_shape() != net.spec().input || test_set.sample_shape() != net.spec().input {
        return Err(Error::shape(format!(
            "data samples are {:?}, network expects {:?}",
            train_set.sample_shape(),
            net.spec().input
        )));
    }
    if cfg.batch_size > train_set.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds the {} training samples",
            cfg.batch_size,
            train_set.len()
        )));
    }
    let start = Instant::now();
    let mut sgd = Sgd::new(net);
    let mut init_reports = Vec::new();
    let mut points = Vec::new();
    let mut window = (0.0, 0usize);
    let mut epoch = 0u64;
    let mut batches = make_batches(train_set, cfg.batch_size, derived_seed(cfg.seed, 1 << 32))?;

    let mut emit = |iteration: usize, window: &mut (f64, usize), net: &mut Network| -> Result<()> {
        let acc = evaluate(net, test_set, cfg.eval_batch)?;
        let point = EvalPoint {
            iteration,
            lr: lr_at(iteration, cfg),
            train_loss: if window.1 == 0 { f64::NAN } else { window.0 / window.1 as f64 },
            test_accuracy: acc,
        };
        *window = (0.0, 0);
        info!(
            "seed {} iter {iteration}: lr {:.6} loss {:.5} acc {:.4}",
            cfg.seed, point.lr, point.train_loss, acc
        );
        sink(&point)?;
        points.push(point);
        Ok(())
    };

    for n in 0..cfg.max_iters {
        for (k, event) in cfg.init_schedule.iter().enumerate().filter(|(_, e)| e.at == n) {
            let report = run_init(net, &event.algorithm, train_set, cfg, k as u64)?;
            debug!("{report}");
            init_reports.push(report);
            sgd.reset();
        }
        let (x, labels) = match batches.next() {
            Some(b) => b,
            None => {
                epoch += 1;
                batches = make_batches(train_set, cfg.batch_size, derived_seed(cfg.seed, (1 << 32) + epoch))?;
                batches.next().expect("non-empty epoch")
            }
        };
        let out = net.forward(&x, &labels)?;
        if !out.loss.is_finite() {
            return Err(Error::invalid(format!("loss diverged at iteration {n}")));
        }
        net.backward()?;
        sgd.step(net, lr_at(n, cfg), cfg.momentum)?;
        window.0 += out.loss;
        window.1 += 1;
        if cfg.eval_every > 0 && (n + 1) % cfg.eval_every == 0 && n + 1 != cfg.max_iters {
            emit(n + 1, &mut window, net)?;
        }
    }
    if cfg.max_iters == 0 {
        for (k, event) in cfg.init_schedule.iter().enumerate().filter(|(_, e)| e.at == 0) {
            init_reports.push(run_init(net, &event.algorithm, train_set, cfg, k as u64)?);
        }
    }
    emit(cfg.max_iters, &mut window, net)?;
    let final_accuracy = points.last().map_or(0.0, |p| p.test_accuracy);
    Ok(RunResult {
        points,
        final_accuracy,
        seed: cfg.seed,
        wall_time: start.elapsed(),
        init_reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, Split};
    use crate::layers::ActivationKind;
    use crate::network::{ConvType, NetworkSpec};

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.01);
        assert!((lr_at(10_000, &cfg) - 0.0059460).abs() < 1e-7);
        let mut last = f64::INFINITY;
        for n in (0..40_000).step_by(500) {
            let lr = lr_at(n, &cfg);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn weight_decay_is_unimplemented() {
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Unimplemented(_))));
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { momentum: -0.1, ..Default::default() }.validate().is_err());
    }

    fn tiny_net() -> Network {
        Network::build(&NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU), 1).unwrap()
    }

    fn set_grads(net: &mut Network, value: f64) {
        for (_, p) in net.params_mut() {
            p.grad.fill(value);
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut net = tiny_net();
        let before = net.param("fc1.weight").unwrap().value.clone();
        let mut sgd = Sgd::new(&net);
        set_grads(&mut net, 0.5);
        net.param_mut("fc1.weight").unwrap().lr_mult = 10.0;
        sgd.step(&mut net, 0.01, 0.0).unwrap();
        let after = &net.param("fc1.weight").unwrap().value;
        for (a, b) in after.data().iter().zip(before.data()) {
            assert_eq!(*a, b - 0.01 * 10.0 * 0.5);
        }
    }

    #[test]
    fn momentum_unrolls() {
        let mut net = tiny_net();
        let before = net.param("conv1.bias").unwrap().value.data()[0];
        let mut sgd = Sgd::new(&net);
        for _ in 0..2 {
            set_grads(&mut net, 1.0);
            sgd.step(&mut net, 0.01, 0.9).unwrap();
        }
        let delta = net.param("conv1.bias").unwrap().value.data()[0] - before;
        assert!((delta + 0.01 * 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_multiplier_freezes() {
        let mut net = tiny_net();
        net.param_mut("conv2.weight").unwrap().lr_mult = 0.0;
        let frozen = net.param("conv2.weight").unwrap().value.clone();
        let mut sgd = Sgd::new(&net);
        for _ in 0..5 {
            set_grads(&mut net, 3.0);
            sgd.step(&mut net, 0.1, 0.9).unwrap();
        }
        assert_eq!(net.param("conv2.weight").unwrap().value, frozen);
    }

    #[test]
    fn registry_mismatch_is_an_error() {
        let mut big = Network::build(&NetworkSpec::tiny(ConvType::WL2, ActivationKind::ReLU), 1).unwrap();
        let mut sgd = Sgd::new(&tiny_net());
        assert!(sgd.step(&mut big, 0.1, 0.0).is_err());
    }

    fn tiny_data() -> (Dataset, Dataset) {
        let shrink = |ds: Dataset| {
            let n = ds.len();
            let mut data = Vec::with_capacity(n * 64);
            for s in 0..n {
                for i in 0..8 {
                    for j in 0..8 {
                        data.push(ds.images.data()[s * 784 + (3 * i + 2) * 28 + 3 * j + 2]);
                    }
                }
            }
            Dataset {
                images: Tensor::new(vec![n, 1, 8, 8], data).unwrap(),
                labels: ds.labels,
                split: ds.split,
            }
        };
        (shrink(synthetic(300, 1, Split::Train)), shrink(synthetic(100, 2, Split::Test)))
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            max_iters: 60,
            batch_size: 20,
            eval_every: 25,
            init_batch: 100,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_streams_points() {
        let (train_set, test_set) = tiny_data();
        let run = || {
            let mut net = tiny_net();
            let mut streamed = Vec::new();
            let result = train(&mut net, &train_set, &test_set, &tiny_cfg(), &mut |p| {
                streamed.push(*p);
                Ok(())
            })
            .unwrap();
            assert_eq!(streamed, result.points);
            (result.points, net.checksum())
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(ca, cb);
        assert_eq!(a.len(), 3);
        assert_eq!(a.iter().map(|p| p.iteration).collect::<Vec<_>>(), vec![25, 50, 60]);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.train_loss.to_bits(), q.train_loss.to_bits());
            assert_eq!(p.test_accuracy, q.test_accuracy);
        }
    }

    #[test]
    fn training_reduces_loss() {
        let (train_set, test_set) = tiny_data();
        let mut net = tiny_net();
        let cfg = TrainConfig {
            max_iters: 300,
            eval_every: 30,
            base_lr: 0.05,
            ..tiny_cfg()
        };
        let result = train(&mut net, &train_set, &test_set, &cfg, &mut |_| Ok(())).unwrap();
        let first = result.points.first().unwrap().train_loss;
        let last = result.points.last().unwrap().train_loss;
        assert!(last < 0.8 * first, "{first} -> {last}");
        assert!(result.final_accuracy > 0.3);
    }

    #[test]
    fn zero_iterations_evaluates_untrained_net() {
        let (train_set, test_set) = tiny_data();
        let mut net = tiny_net();
        let before = net.checksum();
        let cfg = TrainConfig { max_iters: 0, ..tiny_cfg() };
        let result = train(&mut net, &train_set, &test_set, &cfg, &mut |_| Ok(())).unwrap();
        assert_eq!(result.points.len(), 1);
        assert!(result.points[0].train_loss.is_nan());
        assert!(result.final_accuracy < 0.4);
        assert_eq!(net.checksum(), before);
    }

    #[test]
    fn evaluation_has_no_side_effects() {
        let (_, test_set) = tiny_data();
        let mut net = tiny_net();
        let before = net.checksum();
        let a = evaluate(&mut net, &test_set, 7).unwrap();
        let b = evaluate(&mut net, &test_set, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.checksum(), before);
    }

    #[test]
    fn frozen_convolutions_survive_training() {
        let (train_set, test_set) = tiny_data();
        let mut spec = NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU);
        for name in ["conv1", "conv2"] {
            spec.conv_mut(name).unwrap().lr_mult = 0.0;
        }
        let mut net = Network::build(&spec, 3).unwrap();
        let conv: Vec<Tensor> = ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"]
            .iter()
            .map(|k| net.param(k).unwrap().value.clone())
            .collect();
        let fc = net.param("fc1.weight").unwrap().value.clone();
        train(&mut net, &train_set, &test_set, &tiny_cfg(), &mut |_| Ok(())).unwrap();
        for (k, t) in ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"].iter().zip(&conv) {
            assert_eq!(&net.param(k).unwrap().value, t);
        }
        assert_ne!(net.param("fc1.weight").unwrap().value, fc);
    }

    #[test]
    fn init_schedule_runs_mid_training() {
        let (train_set, test_set) = tiny_data();
        let mut spec = NetworkSpec::tiny(ConvType::WL2, ActivationKind::ReLU);
        spec.conv_mut("conv1").unwrap().constraint = crate::layers::Constraint::Abs;
        let mut net = Network::build(&spec, 3).unwrap();
        let cfg = TrainConfig {
            init_schedule: vec![
                InitEvent {
                    algorithm: InitAlgorithm::PrecisionAdjustment { target_std: 0.5 },
                    at: 0,
                },
                InitEvent {
                    algorithm: InitAlgorithm::WholeNetwork(Default::default()),
                    at: 30,
                },
            ],
            ..tiny_cfg()
        };
        let result = train(&mut net, &train_set, &test_set, &cfg, &mut |_| Ok(())).unwrap();
        assert_eq!(result.init_reports.len(), 2);
        assert!(result.init_reports[1].algorithm.starts_with("whole_network"));
    }
}
