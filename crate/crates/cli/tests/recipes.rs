//! Every shipped recipe parses, round-trips and describes what its name says.

use std::path::{Path, PathBuf};

use gcnn::init::InitAlgorithm;
use gcnn::layers::{ActivationKind, Constraint};
use gcnn::network::ConvType;
use gcnn::LayerSpec;
use gcnn_cli::{parse_file, parse_str, ExperimentConfig};

fn recipes() -> Vec<(String, ExperimentConfig)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "cfg"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let cfg = parse_file(&p).unwrap_or_else(|e| panic!("{e}"));
            (p.file_stem().unwrap().to_string_lossy().into_owned(), cfg)
        })
        .collect()
}

fn convs(cfg: &ExperimentConfig) -> Vec<&gcnn::network::ConvSpec> {
    cfg.network
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Conv(c) => Some(c),
            _ => None,
        })
        .collect()
}

#[test]
fn all_recipes_parse_and_round_trip() {
    let all = recipes();
    assert!(all.len() >= 30, "{}", all.len());
    for (name, cfg) in &all {
        assert_eq!(&parse_str(&cfg.dump()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn table_rows_are_covered() {
    let names: Vec<String> = recipes().into_iter().map(|r| r.0).collect();
    for init in ["xavier", "precadj", "whlnetadj"] {
        assert!(names.contains(&format!("table1_{init}")));
        for lr in [1, 10] {
            assert!(names.contains(&format!("table3_cnn_{init}_lr{lr}")));
            if init != "xavier" {
                assert!(names.contains(&format!("table3_wl1_{init}_lr{lr}")));
                assert!(names.contains(&format!("table3_wl2_{init}_lr{lr}")));
            }
        }
    }
    for act in ["none", "sigmoid", "tanh", "relu", "retanh", "resine", "sine"] {
        assert!(names.contains(&format!("table2_{act}")), "{act}");
    }
}

#[test]
fn recipes_match_their_names() {
    for (name, cfg) in recipes() {
        let c = convs(&cfg);
        if name.starts_with("table1") || name.starts_with("table2") {
            assert_eq!(cfg.train.max_iters, 18_000, "{name}");
            assert_eq!(cfg.repeat, 25, "{name}");
        }
        if let Some(rest) = name.strip_prefix("table3_") {
            assert_eq!(cfg.train.max_iters, 36_000, "{name}");
            let want = match &rest[..3] {
                "cnn" => ConvType::Standard,
                "wl1" => ConvType::WL1,
                _ => ConvType::WL2,
            };
            assert!(c.iter().all(|s| s.conv_type == want), "{name}");
            let lr = if rest.ends_with("lr10") { 10.0 } else { 1.0 };
            assert!(c.iter().all(|s| s.lr_mult == lr), "{name}");
            let init_ok = match cfg.init {
                InitAlgorithm::Xavier => rest.contains("xavier"),
                InitAlgorithm::PrecisionAdjustment { .. } => rest.contains("precadj"),
                InitAlgorithm::WholeNetwork(_) => rest.contains("whlnetadj"),
            };
            assert!(init_ok, "{name}");
        }
        if let Some(act) = name.strip_prefix("table2_") {
            let kind: ActivationKind = act.parse().unwrap();
            assert!(c.iter().all(|s| s.activation == kind), "{name}");
        }
        if name.contains("frozen") {
            assert!(c.iter().all(|s| s.lr_mult == 0.0), "{name}");
        }
        if name.starts_with("desk") {
            assert_eq!(cfg.train.max_iters, 600, "{name}");
        }
    }
}

#[test]
fn positive_weight_recipe() {
    let (_, cfg) = recipes().into_iter().find(|r| r.0 == "positive_weights").unwrap();
    assert!(convs(&cfg).iter().all(|s| s.constraint == Constraint::Abs));
    assert_eq!(cfg.init, InitAlgorithm::PrecisionAdjustment { target_std: 0.5 });
    assert_eq!(cfg.init_schedule.len(), 1);
    assert_eq!(cfg.init_schedule[0].at, 600);
    assert!(matches!(cfg.init_schedule[0].algorithm, InitAlgorithm::WholeNetwork(_)));
}
