//! End-to-end training on the synthetic stroke dataset.

use gcnn::data::{synthetic, Split};
use gcnn::init::{InitAlgorithm, WholeNetworkOptions};
use gcnn::layers::{Constraint, Norm};
use gcnn::optim::{train, EvalPoint, InitEvent, TrainConfig};
use gcnn::{Network, NetworkSpec};

fn config(iters: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 20,
        max_iters: iters,
        eval_every: iters / 2,
        ..Default::default()
    }
}

fn small(spec: &mut NetworkSpec) {
    spec.conv_mut("conv1").unwrap().planes = 4;
    spec.conv_mut("conv2").unwrap().planes = 6;
    spec.fc_mut("fc1").unwrap().outputs = 32;
}

#[test]
fn cnn_learns_synthetic_strokes() {
    let (tr, te) = (synthetic(1000, 1, Split::Train), synthetic(300, 2, Split::Test));
    let mut spec = NetworkSpec::mnist_cnn();
    small(&mut spec);
    let mut net = Network::build(&spec, 1000).unwrap();
    let mut seen: Vec<EvalPoint> = Vec::new();
    let res = train(&mut net, &tr, &te, &config(150), &mut |p| {
        seen.push(*p);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen, res.points);
    assert!(res.final_accuracy > 0.5, "{}", res.final_accuracy);
}

#[test]
fn gcnn_with_precision_adjustment_learns() {
    let (tr, te) = (synthetic(1000, 1, Split::Train), synthetic(300, 2, Split::Test));
    let mut spec = NetworkSpec::mnist_gcnn(Norm::L2);
    small(&mut spec);
    let mut net = Network::build(&spec, 1000).unwrap();
    let mut cfg = config(150);
    cfg.init_batch = 200;
    cfg.init_schedule = vec![InitEvent {
        algorithm: InitAlgorithm::PrecisionAdjustment { target_std: 1.0 },
        at: 0,
    }];
    let res = train(&mut net, &tr, &te, &cfg, &mut |_| Ok(())).unwrap();
    assert_eq!(res.init_reports.len(), 1);
    assert!(res.final_accuracy > 0.4, "{}", res.final_accuracy);
    for (_, p) in net.params() {
        assert!(p.value.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn positive_weight_schedule_runs_both_initializers() {
    let (tr, te) = (synthetic(600, 1, Split::Train), synthetic(200, 2, Split::Test));
    let mut spec = NetworkSpec::mnist_cnn();
    small(&mut spec);
    for name in ["conv1", "conv2"] {
        spec.conv_mut(name).unwrap().constraint = Constraint::Abs;
    }
    let mut net = Network::build(&spec, 7).unwrap();
    let mut cfg = config(60);
    cfg.init_batch = 200;
    cfg.init_schedule = vec![
        InitEvent {
            algorithm: InitAlgorithm::PrecisionAdjustment { target_std: 0.5 },
            at: 0,
        },
        InitEvent {
            algorithm: InitAlgorithm::WholeNetwork(WholeNetworkOptions { max_iters: 3, ..Default::default() }),
            at: 30,
        },
    ];
    let res = train(&mut net, &tr, &te, &cfg, &mut |_| Ok(())).unwrap();
    assert_eq!(res.init_reports.len(), 2);
    assert!(res.init_reports[0].algorithm.starts_with("precision_adjustment"));
    assert!(!res.init_reports[1].ratios.is_empty());
    assert!(res.final_accuracy.is_finite());
}

#[test]
fn frozen_layers_do_not_move() {
    let (tr, te) = (synthetic(400, 1, Split::Train), synthetic(100, 2, Split::Test));
    let mut spec = NetworkSpec::mnist_cnn();
    small(&mut spec);
    spec.conv_mut("conv1").unwrap().lr_mult = 0.0;
    let mut net = Network::build(&spec, 3).unwrap();
    let before = net.param("conv1.weight").unwrap().value.clone();
    let fc_before = net.param("fc1.weight").unwrap().value.clone();
    train(&mut net, &tr, &te, &config(20), &mut |_| Ok(())).unwrap();
    assert_eq!(net.param("conv1.weight").unwrap().value, before);
    assert_ne!(net.param("fc1.weight").unwrap().value, fc_before);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (tr, te) = (synthetic(300, 1, Split::Train), synthetic(100, 2, Split::Test));
    let mut spec = NetworkSpec::mnist_gcnn(Norm::L1);
    small(&mut spec);
    let run = || {
        let mut net = Network::build(&spec, 11).unwrap();
        let mut cfg = config(20);
        cfg.init_batch = 100;
        cfg.init_schedule = vec![InitEvent {
            algorithm: InitAlgorithm::PrecisionAdjustment { target_std: 1.0 },
            at: 0,
        }];
        let res = train(&mut net, &tr, &te, &cfg, &mut |_| Ok(())).unwrap();
        (net.checksum(), res.points)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(
        a.1.iter().map(|p| p.train_loss.to_bits()).collect::<Vec<_>>(),
        b.1.iter().map(|p| p.train_loss.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn snapshot_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.gcnn");
    let spec = NetworkSpec::mnist_gcnn(Norm::L2);
    let a = Network::build(&spec, 1).unwrap();
    a.save_snapshot(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..5], b"GCNN1");
    let mut b = Network::build(&spec, 2).unwrap();
    b.load_snapshot(&path).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let mut other = Network::build(&NetworkSpec::mnist_cnn(), 2).unwrap();
    assert!(other.load_snapshot(&path).is_err());
}
