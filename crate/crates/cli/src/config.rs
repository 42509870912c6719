//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment. Layer-scoped settings use a
//! dotted key (`conv1.type = wl2`). An empty file gives the ordinary CNN with
//! Xavier init trained for 18000 iterations, 25 repetitions.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gcnn::init::{FillerSpec, InitAlgorithm};
use gcnn::layers::{ActivationKind, Constraint, Norm};
use gcnn::network::{ConvSpec, ConvType, FcSpec};
use gcnn::optim::{InitEvent, TrainConfig};
use gcnn::{LayerSpec, Network, NetworkSpec};

/// Overrides `mnist_dir` when set.
pub const MNIST_DIR_ENV: &str = gcnn::data::MNIST_DIR_ENV;
/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "GCNN_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line number; 0 when the problem is not tied to one line.
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// IDX files in `mnist_dir`.
    Mnist,
    /// The seeded stroke dataset from `gcnn::data::synthetic`.
    Synthetic,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Mnist => "mnist",
            DataSource::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Overridden by `$GCNN_MNIST_DIR`; `None` means `data/mnist`.
    pub mnist_dir: Option<PathBuf>,
    /// Use only the first n samples; 0 keeps everything.
    pub train_limit: usize,
    pub test_limit: usize,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Mnist,
            mnist_dir: None,
            train_limit: 0,
            test_limit: 0,
            synthetic_train: 10_000,
            synthetic_test: 2_000,
        }
    }
}

impl DataConfig {
    /// Environment first, then the config value, then the default directory.
    pub fn resolved_mnist_dir(&self) -> PathBuf {
        match std::env::var_os(MNIST_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self
                .mnist_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from(gcnn::data::DEFAULT_MNIST_DIR)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Prefix for output files; defaults to the config file stem.
    pub name: Option<String>,
    pub network: NetworkSpec,
    /// `seed` and `init_schedule` are filled in per run.
    pub train: TrainConfig,
    /// Runs before the first iteration.
    pub init: InitAlgorithm,
    /// Further initializer runs during training.
    pub init_schedule: Vec<InitEvent>,
    pub repeat: usize,
    pub base_seed: u64,
    /// Concurrent runs for `repeat`.
    pub workers: usize,
    pub data: DataConfig,
    pub output_dir: PathBuf,
    /// Write a parameter snapshot at the end of each run.
    pub snapshot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            network: NetworkSpec::mnist_cnn(),
            train: TrainConfig::default(),
            init: InitAlgorithm::Xavier,
            init_schedule: Vec::new(),
            repeat: 25,
            base_seed: 1000,
            workers: 1,
            data: DataConfig::default(),
            output_dir: PathBuf::from("runs"),
            snapshot: false,
        }
    }
}

impl ExperimentConfig {
    pub fn seed(&self, run: usize) -> u64 {
        self.base_seed + run as u64
    }

    /// Training settings for run `run`, including the full init schedule.
    pub fn train_config(&self, run: usize) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = self.seed(run);
        cfg.init_schedule = std::iter::once(InitEvent {
            algorithm: self.init,
            at: 0,
        })
        .chain(self.init_schedule.iter().copied())
        .collect();
        cfg
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("experiment")
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(name) = &self.name {
            put("name", name);
        }
        let [c, h, w] = self.network.input;
        put("input", &format!("{c}x{h}x{w}"));
        let names: Vec<&str> = self
            .network
            .layers
            .iter()
            .filter(|l| !matches!(l, LayerSpec::SoftmaxLoss))
            .map(LayerSpec::name)
            .collect();
        put("layers", &names.join(", "));
        for layer in &self.network.layers {
            match layer {
                LayerSpec::Conv(s) => {
                    let n = &s.name;
                    put(&format!("{n}.type"), &s.conv_type);
                    put(&format!("{n}.planes"), &s.planes);
                    put(&format!("{n}.window"), &s.window);
                    put(&format!("{n}.stride"), &s.stride);
                    put(&format!("{n}.pad"), &s.pad);
                    put(&format!("{n}.activation"), &s.activation);
                    put(&format!("{n}.adaptive_linear"), &s.adaptive_linear);
                    put(&format!("{n}.lr_mult"), &s.lr_mult);
                    put(&format!("{n}.adaptive_lr_mult"), &s.adaptive_lr_mult);
                    put(&format!("{n}.constraint"), &s.constraint);
                    put(&format!("{n}.weight_filler"), &s.weight_filler);
                    put(&format!("{n}.bias_filler"), &s.bias_filler);
                    put(&format!("{n}.precision_filler"), &s.precision_filler);
                    if let Some(p) = s.p_low {
                        put(&format!("{n}.p_low"), &p);
                    }
                    if let Some(p) = s.p_high {
                        put(&format!("{n}.p_high"), &p);
                    }
                    put(&format!("{n}.pool"), &s.pool_window);
                    put(&format!("{n}.pool_stride"), &s.pool_stride);
                }
                LayerSpec::FullyConnected(s) => {
                    let n = &s.name;
                    put(&format!("{n}.type"), &"fc");
                    put(&format!("{n}.outputs"), &s.outputs);
                    put(&format!("{n}.activation"), &s.activation);
                    put(&format!("{n}.lr_mult"), &s.lr_mult);
                    put(&format!("{n}.weight_filler"), &s.weight_filler);
                    put(&format!("{n}.bias_filler"), &s.bias_filler);
                }
                LayerSpec::SoftmaxLoss => {}
            }
        }
        let t = &self.train;
        put("base_lr", &t.base_lr);
        put("momentum", &t.momentum);
        put("batch_size", &t.batch_size);
        put("max_iters", &t.max_iters);
        put("weight_decay", &t.weight_decay);
        put("gamma", &t.gamma);
        put("power", &t.power);
        put("eval_every", &t.eval_every);
        put("init_batch", &t.init_batch);
        put("eval_batch", &t.eval_batch);
        put("init", &self.init);
        let schedule: Vec<String> = self
            .init_schedule
            .iter()
            .map(|e| format!("{}:{}", e.at, e.algorithm))
            .collect();
        put("init_schedule", &schedule.join("; "));
        put("repeat", &self.repeat);
        put("base_seed", &self.base_seed);
        put("workers", &self.workers);
        put("dataset", &self.data.source);
        if let Some(dir) = &self.data.mnist_dir {
            put("mnist_dir", &dir.display());
        }
        put("train_limit", &self.data.train_limit);
        put("test_limit", &self.data.test_limit);
        put("synthetic_train", &self.data.synthetic_train);
        put("synthetic_test", &self.data.synthetic_test);
        put("output_dir", &self.output_dir.display());
        put("snapshot", &self.snapshot);
        out
    }
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

fn value<T: FromStr>(e: &Entry) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    e.value
        .parse()
        .map_err(|err| ConfigError::at(e.line, format!("bad value `{}` for `{}`: {err}", e.value, e.key)))
}

fn positive(e: &Entry) -> Result<usize, ConfigError> {
    match value::<usize>(e)? {
        0 => Err(ConfigError::at(e.line, format!("`{}` must be at least 1", e.key))),
        n => Ok(n),
    }
}

fn probability(e: &Entry) -> Result<f64, ConfigError> {
    let p: f64 = value(e)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(ConfigError::at(e.line, format!("`{}` must lie in (0, 1), got {p}", e.key)));
    }
    Ok(p)
}

fn flag(e: &Entry) -> Result<bool, ConfigError> {
    match e.value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(ConfigError::at(e.line, format!("bad value `{v}` for `{}`: expected true or false", e.key))),
    }
}

fn preset(e: &Entry) -> Result<NetworkSpec, ConfigError> {
    match e.value {
        "cnn" => Ok(NetworkSpec::mnist_cnn()),
        "gcnn_wl1" => Ok(NetworkSpec::mnist_gcnn(Norm::L1)),
        "gcnn_wl2" => Ok(NetworkSpec::mnist_gcnn(Norm::L2)),
        v => Err(ConfigError::at(
            e.line,
            format!("unknown network `{v}` (expected cnn, gcnn_wl1 or gcnn_wl2)"),
        )),
    }
}

fn input_shape(e: &Entry) -> Result<[usize; 3], ConfigError> {
    let dims: Vec<usize> = e
        .value
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| ConfigError::at(e.line, format!("bad input shape `{}` (expected CxHxW)", e.value)))?;
    match dims.as_slice() {
        &[c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(ConfigError::at(e.line, format!("bad input shape `{}` (expected CxHxW)", e.value))),
    }
}

fn schedule(e: &Entry) -> Result<Vec<InitEvent>, ConfigError> {
    e.value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (at, alg) = item.split_once(':').ok_or_else(|| {
                ConfigError::at(e.line, format!("bad schedule entry `{item}` (expected ITER:ALGORITHM)"))
            })?;
            let at = at
                .trim()
                .parse()
                .map_err(|_| ConfigError::at(e.line, format!("bad iteration `{}` in `{item}`", at.trim())))?;
            let algorithm = alg
                .trim()
                .parse()
                .map_err(|err| ConfigError::at(e.line, format!("bad schedule entry `{item}`: {err}")))?;
            Ok(InitEvent { algorithm, at })
        })
        .collect()
}

fn layer_kind(e: &Entry) -> Result<Option<ConvType>, ConfigError> {
    match e.value {
        "fc" => Ok(None),
        v => v.parse().map(Some).map_err(|_| {
            ConfigError::at(e.line, format!("bad value `{v}` for `{}`: expected conv, wl1, wl2 or fc", e.key))
        }),
    }
}

fn retype(layer: &LayerSpec, kind: Option<ConvType>) -> LayerSpec {
    let name = layer.name().to_string();
    match (layer, kind) {
        (LayerSpec::Conv(old), Some(t)) => {
            if old.conv_type == t {
                return layer.clone();
            }
            let mut new = ConvSpec::new(name, t, old.planes, old.window);
            new.stride = old.stride;
            new.pad = old.pad;
            new.activation = old.activation;
            new.pool_window = old.pool_window;
            new.pool_stride = old.pool_stride;
            LayerSpec::Conv(new)
        }
        (LayerSpec::FullyConnected(_), None) => layer.clone(),
        (LayerSpec::FullyConnected(f), Some(t)) => {
            let mut new = ConvSpec::new(name, t, 0, 0);
            new.activation = f.activation;
            LayerSpec::Conv(new)
        }
        (_, Some(t)) => LayerSpec::Conv(ConvSpec::new(name, t, 0, 0)),
        (_, None) => LayerSpec::FullyConnected(FcSpec::new(name, 0, ActivationKind::ReLU)),
    }
}

fn set_conv(s: &mut ConvSpec, field: &str, e: &Entry) -> Result<bool, ConfigError> {
    match field {
        "planes" => s.planes = positive(e)?,
        "window" => s.window = positive(e)?,
        "stride" => s.stride = positive(e)?,
        "pad" => s.pad = value(e)?,
        "activation" => s.activation = value(e)?,
        "adaptive_linear" => s.adaptive_linear = flag(e)?,
        "lr_mult" => s.lr_mult = nonnegative(e)?,
        "adaptive_lr_mult" => s.adaptive_lr_mult = nonnegative(e)?,
        "constraint" => s.constraint = value::<Constraint>(e)?,
        "weight_filler" => s.weight_filler = value::<FillerSpec>(e)?,
        "bias_filler" => s.bias_filler = value::<FillerSpec>(e)?,
        "precision_filler" => s.precision_filler = value::<FillerSpec>(e)?,
        "p_low" => s.p_low = Some(probability(e)?),
        "p_high" => s.p_high = Some(probability(e)?),
        "pool" => s.pool_window = value(e)?,
        "pool_stride" => s.pool_stride = positive(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_fc(s: &mut FcSpec, field: &str, e: &Entry) -> Result<bool, ConfigError> {
    match field {
        "outputs" => s.outputs = positive(e)?,
        "activation" => s.activation = value(e)?,
        "lr_mult" => s.lr_mult = nonnegative(e)?,
        "weight_filler" => s.weight_filler = value::<FillerSpec>(e)?,
        "bias_filler" => s.bias_filler = value::<FillerSpec>(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn nonnegative(e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = value(e)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(ConfigError::at(e.line, format!("`{}` must be a nonnegative number, got {v}", e.key)));
    }
    Ok(v)
}

fn set_global(cfg: &mut ExperimentConfig, e: &Entry) -> Result<bool, ConfigError> {
    let t = &mut cfg.train;
    match e.key {
        "name" => cfg.name = Some(e.value.to_string()),
        "base_lr" => t.base_lr = nonnegative(e)?,
        "momentum" => t.momentum = nonnegative(e)?,
        "batch_size" => t.batch_size = positive(e)?,
        "max_iters" => t.max_iters = value(e)?,
        "weight_decay" => {
            let wd: f64 = value(e)?;
            if wd != 0.0 {
                return Err(ConfigError::at(
                    e.line,
                    format!("unimplemented: weight_decay = {wd}; only 0 is supported"),
                ));
            }
            t.weight_decay = wd;
        }
        "gamma" => t.gamma = nonnegative(e)?,
        "power" => t.power = nonnegative(e)?,
        "eval_every" => t.eval_every = value(e)?,
        "init_batch" => t.init_batch = positive(e)?,
        "eval_batch" => t.eval_batch = positive(e)?,
        "init" => cfg.init = value(e)?,
        "init_schedule" => cfg.init_schedule = schedule(e)?,
        "repeat" => cfg.repeat = positive(e)?,
        "base_seed" => cfg.base_seed = value(e)?,
        "workers" => cfg.workers = positive(e)?,
        "dataset" => {
            cfg.data.source = match e.value {
                "mnist" => DataSource::Mnist,
                "synthetic" => DataSource::Synthetic,
                v => {
                    return Err(ConfigError::at(
                        e.line,
                        format!("bad value `{v}` for `dataset`: expected mnist or synthetic"),
                    ))
                }
            }
        }
        "mnist_dir" => cfg.data.mnist_dir = Some(PathBuf::from(e.value)),
        "train_limit" => cfg.data.train_limit = value(e)?,
        "test_limit" => cfg.data.test_limit = value(e)?,
        "synthetic_train" => cfg.data.synthetic_train = positive(e)?,
        "synthetic_test" => cfg.data.synthetic_test = positive(e)?,
        "output_dir" => cfg.output_dir = PathBuf::from(e.value),
        "snapshot" => cfg.snapshot = flag(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Keys whose value may be left empty.
const MAY_BE_EMPTY: &[&str] = &["init_schedule"];

fn entries(text: &str) -> Result<Vec<Entry<'_>>, ConfigError> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::at(line, "missing key before `=`"));
        }
        if value.is_empty() && !MAY_BE_EMPTY.contains(&key) {
            return Err(ConfigError::at(line, format!("missing value for `{key}`")));
        }
        if let Some(first) = seen.insert(key, line) {
            return Err(ConfigError::at(line, format!("`{key}` already set on line {first}")));
        }
        out.push(Entry { line, key, value });
    }
    Ok(out)
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let entries = entries(text)?;
    let mut cfg = ExperimentConfig::default();
    let find = |key: &str| entries.iter().find(|e| e.key == key);

    // Structure first, so per-layer keys may appear in any order.
    if let Some(e) = find("network") {
        cfg.network = preset(e)?;
    }
    let mut structure_line = find("network").map_or(0, |e| e.line);
    if let Some(e) = find("input") {
        cfg.network.input = input_shape(e)?;
        structure_line = structure_line.max(e.line);
    }
    if let Some(e) = find("layers") {
        let mut layers = Vec::new();
        for name in e.value.split(',').map(str::trim) {
            if name.is_empty() || name.contains('.') || name.contains(char::is_whitespace) {
                return Err(ConfigError::at(e.line, format!("bad layer name `{name}`")));
            }
            if name == "loss" {
                return Err(ConfigError::at(e.line, "the loss layer is implicit; do not list it"));
            }
            if layers.iter().any(|l: &LayerSpec| l.name() == name) {
                return Err(ConfigError::at(e.line, format!("layer `{name}` listed twice")));
            }
            let existing = cfg.network.layers.iter().find(|l| l.name() == name).cloned();
            match existing {
                Some(l) => layers.push(l),
                None => {
                    let typed = find(&format!("{name}.type")).ok_or_else(|| {
                        ConfigError::at(e.line, format!("new layer `{name}` needs a `{name}.type` key"))
                    })?;
                    layers.push(retype(&LayerSpec::SoftmaxLoss, layer_kind(typed)?).renamed(name));
                }
            }
        }
        layers.push(LayerSpec::SoftmaxLoss);
        cfg.network.layers = layers;
        structure_line = structure_line.max(e.line);
    }
    let mut layer_lines: HashMap<String, usize> = HashMap::new();
    for e in entries.iter().filter(|e| e.key.ends_with(".type")) {
        let name = &e.key[..e.key.len() - ".type".len()];
        let kind = layer_kind(e)?;
        let layer = cfg
            .network
            .layers
            .iter_mut()
            .find(|l| l.name() == name && !matches!(l, LayerSpec::SoftmaxLoss))
            .ok_or_else(|| ConfigError::at(e.line, format!("unknown layer `{name}`")))?;
        *layer = retype(layer, kind);
        layer_lines.insert(name.to_string(), e.line);
    }

    for e in &entries {
        if matches!(e.key, "network" | "input" | "layers") || e.key.ends_with(".type") {
            continue;
        }
        if let Some((name, field)) = e.key.split_once('.') {
            let layer = cfg
                .network
                .layers
                .iter_mut()
                .find(|l| l.name() == name && !matches!(l, LayerSpec::SoftmaxLoss))
                .ok_or_else(|| ConfigError::at(e.line, format!("unknown layer `{name}` in key `{}`", e.key)))?;
            let known = match layer {
                LayerSpec::Conv(s) => set_conv(s, field, e)?,
                LayerSpec::FullyConnected(s) => set_fc(s, field, e)?,
                LayerSpec::SoftmaxLoss => false,
            };
            if !known {
                return Err(ConfigError::at(e.line, format!("unknown key `{}`", e.key)));
            }
            layer_lines.insert(name.to_string(), e.line);
        } else if !set_global(&mut cfg, e)? {
            return Err(ConfigError::at(e.line, format!("unknown key `{}`", e.key)));
        }
    }

    check_network(&cfg.network, &layer_lines, structure_line)?;
    if let Some(e) = find("max_iters") {
        if let Some(bad) = cfg.init_schedule.iter().find(|ev| ev.at >= cfg.train.max_iters && ev.at > 0) {
            return Err(ConfigError::at(
                e.line,
                format!("init_schedule entry at {} is past max_iters {}", bad.at, cfg.train.max_iters),
            ));
        }
    }
    Ok(cfg)
}

/// Builds the network once so contradictory geometry surfaces at parse time,
/// reported on the last line that touched the offending layer.
fn check_network(spec: &NetworkSpec, layer_lines: &HashMap<String, usize>, structure_line: usize) -> Result<(), ConfigError> {
    for layer in &spec.layers {
        let missing = match layer {
            LayerSpec::Conv(c) if c.planes == 0 => Some("planes"),
            LayerSpec::Conv(c) if c.window == 0 => Some("window"),
            LayerSpec::FullyConnected(f) if f.outputs == 0 => Some("outputs"),
            _ => None,
        };
        if let Some(field) = missing {
            let line = layer_lines.get(layer.name()).copied().unwrap_or(structure_line);
            return Err(ConfigError::at(line, format!("layer `{}` needs `{}.{field}`", layer.name(), layer.name())));
        }
    }
    if let Err(err) = Network::build(spec, 0) {
        let message = err.to_string();
        let line = spec
            .layers
            .iter()
            .filter(|l| message.contains(&format!("`{}", l.name())) || message.contains(l.name()))
            .filter_map(|l| layer_lines.get(l.name()).copied())
            .max()
            .unwrap_or(structure_line);
        return Err(ConfigError::at(line, message));
    }
    Ok(())
}

trait Renamed {
    fn renamed(self, name: &str) -> Self;
}

impl Renamed for LayerSpec {
    fn renamed(mut self, name: &str) -> Self {
        match &mut self {
            LayerSpec::Conv(c) => c.name = name.to_string(),
            LayerSpec::FullyConnected(f) => f.name = name.to_string(),
            LayerSpec::SoftmaxLoss => {}
        }
        self
    }
}

pub fn parse_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at(0, format!("{}: {e}", path.display())))?;
    let mut cfg = parse_str(&text).map_err(|e| ConfigError {
        line: e.line,
        message: format!("{}: {}", path.display(), e.message),
    })?;
    if cfg.name.is_none() {
        cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    Ok(cfg)
}
