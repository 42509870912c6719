//! Layer stacks built from a declarative spec, with a flat parameter registry
//! and binary snapshots.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::init::{fill, FillerSpec};
use crate::kernels::threshold_affine;
use crate::layers::{
    softmax_loss, Activation, ActivationKind, AdaptiveLinear, Constraint, Conv, FullyConnected,
    GenConv, Layer, LossOutput, MaxPool, Norm, Param,
};
use crate::tensor::Fnv;
use crate::{Error, Result, Tensor};

const SNAPSHOT_MAGIC: &[u8; 5] = b"GCNN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvType {
    Standard,
    WL1,
    WL2,
}

impl ConvType {
    pub fn name(self) -> &'static str {
        match self {
            ConvType::Standard => "conv",
            ConvType::WL1 => "wl1",
            ConvType::WL2 => "wl2",
        }
    }

    pub fn norm(self) -> Option<Norm> {
        match self {
            ConvType::Standard => None,
            ConvType::WL1 => Some(Norm::L1),
            ConvType::WL2 => Some(Norm::L2),
        }
    }
}

impl fmt::Display for ConvType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConvType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(ConvType::Standard),
            "wl1" => Ok(ConvType::WL1),
            "wl2" => Ok(ConvType::WL2),
            _ => Err(Error::invalid(format!("unknown convolution type `{s}` (expected conv, wl1 or wl2)"))),
        }
    }
}

/// One convolution module: (generalized) convolution, optional
/// AdaptiveLinear, activation, optional max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub conv_type: ConvType,
    pub planes: usize,
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: ActivationKind,
    pub adaptive_linear: bool,
    /// Multiplier for the weights/bias, or the mean patterns and precisions.
    pub lr_mult: f64,
    pub adaptive_lr_mult: f64,
    /// Constraint on the weights (or mean patterns).
    pub constraint: Constraint,
    /// Filler for the weights, or the mean patterns.
    pub weight_filler: FillerSpec,
    pub bias_filler: FillerSpec,
    pub precision_filler: FillerSpec,
    /// Chi-squared probabilities for a DoubleThreshold module.
    pub p_low: Option<f64>,
    pub p_high: Option<f64>,
    /// 0 disables pooling.
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl ConvSpec {
    pub fn new(name: impl Into<String>, conv_type: ConvType, planes: usize, window: usize) -> Self {
        let generalized = conv_type != ConvType::Standard;
        ConvSpec {
            name: name.into(),
            conv_type,
            planes,
            window,
            stride: 1,
            pad: 0,
            activation: ActivationKind::ReLU,
            adaptive_linear: generalized,
            lr_mult: 1.0,
            adaptive_lr_mult: 1.0,
            constraint: Constraint::None,
            weight_filler: if generalized {
                FillerSpec::Uniform { lo: 0.0, hi: 1.0 }
            } else {
                FillerSpec::Xavier
            },
            bias_filler: FillerSpec::Constant(0.0),
            precision_filler: FillerSpec::AbsGaussian { std: 1.0 },
            p_low: None,
            p_high: None,
            pool_window: 2,
            pool_stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcSpec {
    pub name: String,
    pub outputs: usize,
    pub activation: ActivationKind,
    pub lr_mult: f64,
    pub weight_filler: FillerSpec,
    pub bias_filler: FillerSpec,
}

impl FcSpec {
    pub fn new(name: impl Into<String>, outputs: usize, activation: ActivationKind) -> Self {
        FcSpec {
            name: name.into(),
            outputs,
            activation,
            lr_mult: 1.0,
            weight_filler: FillerSpec::Xavier,
            bias_filler: FillerSpec::Constant(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    FullyConnected(FcSpec),
    SoftmaxLoss,
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv(c) => &c.name,
            LayerSpec::FullyConnected(f) => &f.name,
            LayerSpec::SoftmaxLoss => "loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Channels, height, width of one sample.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// conv(12,5) → ReLU → pool → conv(48,5) → ReLU → pool → fc 500 → ReLU →
    /// fc 10 → softmax, on 1×28×28 inputs.
    pub fn mnist_cnn() -> Self {
        Self::mnist(ConvType::Standard)
    }

    /// Same stack with distance convolutions, each followed by AdaptiveLinear.
    pub fn mnist_gcnn(norm: Norm) -> Self {
        Self::mnist(match norm {
            Norm::L1 => ConvType::WL1,
            Norm::L2 => ConvType::WL2,
        })
    }

    fn mnist(conv_type: ConvType) -> Self {
        NetworkSpec {
            input: [1, 28, 28],
            layers: vec![
                LayerSpec::Conv(ConvSpec::new("conv1", conv_type, 12, 5)),
                LayerSpec::Conv(ConvSpec::new("conv2", conv_type, 48, 5)),
                LayerSpec::FullyConnected(FcSpec::new("fc1", 500, ActivationKind::ReLU)),
                LayerSpec::FullyConnected(FcSpec::new("fc2", 10, ActivationKind::None)),
                LayerSpec::SoftmaxLoss,
            ],
        }
    }

    /// 1×8×8 inputs, 2 then 3 planes, one fc layer with 10 outputs.
    pub fn tiny(conv_type: ConvType, activation: ActivationKind) -> Self {
        let mut conv1 = ConvSpec::new("conv1", conv_type, 2, 3);
        conv1.activation = activation;
        let mut conv2 = ConvSpec::new("conv2", conv_type, 3, 2);
        conv2.activation = activation;
        conv2.pool_window = 0;
        NetworkSpec {
            input: [1, 8, 8],
            layers: vec![
                LayerSpec::Conv(conv1),
                LayerSpec::Conv(conv2),
                LayerSpec::FullyConnected(FcSpec::new("fc1", 10, ActivationKind::None)),
                LayerSpec::SoftmaxLoss,
            ],
        }
    }

    pub fn conv_mut(&mut self, name: &str) -> Option<&mut ConvSpec> {
        self.layers.iter_mut().find_map(|l| match l {
            LayerSpec::Conv(c) if c.name == name => Some(c),
            _ => None,
        })
    }

    pub fn fc_mut(&mut self, name: &str) -> Option<&mut FcSpec> {
        self.layers.iter_mut().find_map(|l| match l {
            LayerSpec::FullyConnected(f) if f.name == name => Some(f),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let losses = self.layers.iter().filter(|l| matches!(l, LayerSpec::SoftmaxLoss)).count();
        if losses != 1 || !matches!(self.layers.last(), Some(LayerSpec::SoftmaxLoss)) {
            return Err(Error::invalid("a network needs exactly one loss layer, at the end"));
        }
        if self.input.contains(&0) {
            return Err(Error::invalid(format!("zero extent in input shape {:?}", self.input)));
        }
        for (i, a) in self.layers.iter().enumerate() {
            if self.layers[..i].iter().any(|b| b.name() == a.name()) {
                return Err(Error::invalid(format!("duplicate layer name `{}`", a.name())));
            }
        }
        Ok(())
    }
}

/// A parameterized stage of the stack, with the layer whose output is the
/// signal entering its nonlinearity. Used by the data-dependent initializers.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub name: String,
    /// Index of the convolution, distance convolution or fully connected layer.
    pub main: usize,
    pub adaptive: Option<usize>,
    /// Index of the layer producing the pre-nonlinearity signal.
    pub signal: usize,
    pub is_conv: bool,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    seed: u64,
    layers: Vec<Layer>,
    names: Vec<String>,
    units: Vec<Unit>,
    loss_grad: Option<Tensor>,
}

fn geometry_error(from: &str, to: &str, err: Error) -> Error {
    Error::Geometry {
        from: from.to_string(),
        to: to.to_string(),
        detail: err.to_string(),
    }
}

impl Network {
    /// Builds the stack and runs every filler from a ChaCha8 stream seeded
    /// with `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network {
            spec: spec.clone(),
            seed,
            layers: Vec::new(),
            names: Vec::new(),
            units: Vec::new(),
            loss_grad: None,
        };
        let mut shape = vec![1, spec.input[0], spec.input[1], spec.input[2]];
        let mut prev = "input".to_string();

        for entry in &spec.layers {
            match entry {
                LayerSpec::Conv(cs) => {
                    if shape.len() != 4 {
                        return Err(geometry_error(
                            &prev,
                            &cs.name,
                            Error::shape("convolution needs a spatial input"),
                        ));
                    }
                    let channels = shape[1];
                    let mut layer = match cs.conv_type.norm() {
                        None => {
                            let mut conv = Conv::new(channels, cs.planes, cs.window, cs.stride, cs.pad);
                            conv.weight.constraint = cs.constraint;
                            Layer::Conv(conv)
                        }
                        Some(norm) => {
                            let mut g = GenConv::new(norm, channels, cs.planes, cs.window, cs.stride, cs.pad);
                            g.mean.constraint = cs.constraint;
                            Layer::GenConv(g)
                        }
                    };
                    shape = layer.output_shape(&shape).map_err(|e| geometry_error(&prev, &cs.name, e))?;
                    for p in layer.params_mut() {
                        p.lr_mult = cs.lr_mult;
                        let filler = match p.name {
                            "weight" | "mean" => &cs.weight_filler,
                            "precision" => &cs.precision_filler,
                            _ => &cs.bias_filler,
                        };
                        fill(&mut p.value, filler, &mut rng)?;
                    }
                    let main = net.push(&cs.name, layer);
                    let mut adaptive = None;
                    if cs.adaptive_linear {
                        let mut al = AdaptiveLinear::new(cs.planes);
                        al.slope.lr_mult = cs.adaptive_lr_mult;
                        al.bias.lr_mult = cs.adaptive_lr_mult;
                        if cs.activation == ActivationKind::DoubleThreshold {
                            let (Some(lo), Some(hi)) = (cs.p_low, cs.p_high) else {
                                return Err(Error::invalid(format!(
                                    "{}: a double_threshold module needs p_low and p_high",
                                    cs.name
                                )));
                            };
                            let dof = channels * cs.window * cs.window;
                            let ta = threshold_affine(dof, lo, hi)?;
                            al.slope.value.fill(ta.slope);
                            al.bias.value.fill(ta.bias);
                        } else if cs.conv_type != ConvType::Standard {
                            al.slope.value.fill(-1.0);
                        }
                        adaptive = Some(net.push(&format!("{}.al", cs.name), Layer::AdaptiveLinear(al)));
                    }
                    let signal = net.layers.len() - 1;
                    if cs.activation != ActivationKind::None {
                        net.push(&format!("{}.act", cs.name), Layer::Activation(Activation::new(cs.activation)));
                    }
                    if cs.pool_window > 0 {
                        let pool = Layer::MaxPool(MaxPool::new(cs.pool_window, cs.pool_stride));
                        shape = pool
                            .output_shape(&shape)
                            .map_err(|e| geometry_error(&cs.name, &format!("{}.pool", cs.name), e))?;
                        net.push(&format!("{}.pool", cs.name), pool);
                    }
                    net.units.push(Unit {
                        name: cs.name.clone(),
                        main,
                        adaptive,
                        signal,
                        is_conv: true,
                    });
                }
                LayerSpec::FullyConnected(fs) => {
                    let inputs: usize = shape[1..].iter().product();
                    if fs.outputs == 0 {
                        return Err(geometry_error(&prev, &fs.name, Error::invalid("zero outputs")));
                    }
                    let mut layer = Layer::FullyConnected(FullyConnected::new(inputs, fs.outputs));
                    shape = layer.output_shape(&shape).map_err(|e| geometry_error(&prev, &fs.name, e))?;
                    for p in layer.params_mut() {
                        p.lr_mult = fs.lr_mult;
                        let filler = if p.name == "weight" { &fs.weight_filler } else { &fs.bias_filler };
                        fill(&mut p.value, filler, &mut rng)?;
                    }
                    let main = net.push(&fs.name, layer);
                    if fs.activation != ActivationKind::None {
                        net.push(&format!("{}.act", fs.name), Layer::Activation(Activation::new(fs.activation)));
                    }
                    net.units.push(Unit {
                        name: fs.name.clone(),
                        main,
                        adaptive: None,
                        signal: main,
                        is_conv: false,
                    });
                }
                LayerSpec::SoftmaxLoss => {}
            }
            prev = entry.name().to_string();
        }
        if net.layers.is_empty() {
            return Err(Error::invalid("network has no layers before the loss"));
        }
        Ok(net)
    }

    fn push(&mut self, name: &str, layer: Layer) -> usize {
        self.layers.push(layer);
        self.names.push(name.to_string());
        self.layers.len() - 1
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.spec.input {
            return Err(Error::shape(format!(
                "batch shape {s:?} does not match network input {:?}",
                self.spec.input
            )));
        }
        Ok(())
    }

    /// Output of layer `last` (inclusive).
    pub fn forward_to(&mut self, batch: &Tensor, last: usize) -> Result<Tensor> {
        self.check_input(batch)?;
        if last >= self.layers.len() {
            return Err(Error::invalid(format!("layer index {last} out of range")));
        }
        let mut x = self.layers[0].forward(batch)?;
        for layer in &mut self.layers[1..=last] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Class scores before the softmax.
    pub fn logits(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.forward_to(batch, self.layers.len() - 1)
    }

    /// Full forward pass including the loss; caches what `backward` needs.
    pub fn forward(&mut self, batch: &Tensor, labels: &[usize]) -> Result<LossOutput> {
        if labels.len() != batch.shape()[0] {
            return Err(Error::shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.shape()[0]
            )));
        }
        let logits = self.logits(batch)?;
        let out = softmax_loss(&logits, labels)?;
        self.loss_grad = Some(out.grad.clone());
        Ok(out)
    }

    /// Back-propagates the gradient of the last `forward`, filling every
    /// parameter gradient.
    pub fn backward(&mut self) -> Result<()> {
        self.backward_with(|_, _| {})
    }

    /// Like [`Network::backward`], calling `hook` on each layer and the
    /// gradient it just returned, before that gradient flows further down.
    pub fn backward_with(&mut self, mut hook: impl FnMut(&mut Layer, &mut Tensor)) -> Result<()> {
        let mut grad = self.loss_grad.take().ok_or(Error::BackwardBeforeForward)?;
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad)?;
            hook(layer, &mut grad);
        }
        Ok(())
    }

    /// `(layer.param, param)` for every trainable tensor, in network order.
    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (layer, name) in self.layers.iter().zip(&self.names) {
            for p in layer.params() {
                out.push((format!("{name}.{}", p.name), p));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (layer, name) in self.layers.iter_mut().zip(&self.names) {
            for p in layer.params_mut() {
                out.push((format!("{name}.{}", p.name), p));
            }
        }
        out
    }

    pub fn param(&self, key: &str) -> Option<&Param> {
        self.params().into_iter().find(|(k, _)| k == key).map(|(_, p)| p)
    }

    pub fn param_mut(&mut self, key: &str) -> Option<&mut Param> {
        self.params_mut().into_iter().find(|(k, _)| k == key).map(|(_, p)| p)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// FNV-1a over parameter names and value bits.
    pub fn checksum(&self) -> u64 {
        let mut hash = Fnv::default();
        for (key, p) in self.params() {
            hash.write(key.as_bytes());
            hash.write(&p.value.checksum().to_le_bytes());
        }
        hash.0
    }

    /// Combined piecewise-region signature of every layer after the last
    /// forward pass.
    pub fn kink_signature(&self) -> u64 {
        let mut hash = Fnv::default();
        for layer in &self.layers {
            hash.write(&layer.kink_signature().to_le_bytes());
        }
        hash.0
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.snapshot_bytes()).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = SNAPSHOT_MAGIC.to_vec();
        for (key, p) in self.params() {
            buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
            buf.extend_from_slice(key.as_bytes());
            buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    /// Overwrites parameter values from a snapshot taken from a network with
    /// the same registry.
    pub fn load_snapshot(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.restore_snapshot(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn restore_snapshot(&mut self, bytes: &[u8]) -> std::result::Result<(), String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(SNAPSHOT_MAGIC.len())? != SNAPSHOT_MAGIC {
            return Err("not a GCNN1 snapshot".into());
        }
        let mut entries = Vec::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let key = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "parameter name is not UTF-8")?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
            entries.push((key, shape, data));
        }
        let mut params = self.params_mut();
        if entries.len() != params.len() {
            return Err(format!(
                "snapshot holds {} parameters, network has {}",
                entries.len(),
                params.len()
            ));
        }
        for ((key, shape, data), (expected, p)) in entries.iter().zip(params.iter()) {
            if key != expected || shape.as_slice() != p.value.shape() {
                return Err(format!(
                    "snapshot parameter `{key}` {shape:?} does not match `{expected}` {:?}",
                    p.value.shape()
                ));
            }
            debug_assert_eq!(data.len(), p.value.len());
        }
        for ((_, _, data), (_, p)) in entries.into_iter().zip(params.iter_mut()) {
            p.value.data_mut().copy_from_slice(&data);
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!(
                "truncated snapshot: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerKind;
    use rand::Rng;

    fn random_batch(n: usize, input: [usize; 3], seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[n, input[0], input[1], input[2]], |_| rng.random_range(0.0..1.0));
        let labels = (0..n).map(|_| rng.random_range(0..10)).collect();
        (x, labels)
    }

    #[test]
    fn mnist_cnn_shapes() {
        let mut net = Network::build(&NetworkSpec::mnist_cnn(), 1).unwrap();
        let kinds: Vec<LayerKind> = net.layers().iter().map(Layer::kind).collect();
        assert_eq!(
            kinds,
            vec![
                LayerKind::Conv,
                LayerKind::Activation(ActivationKind::ReLU),
                LayerKind::MaxPool,
                LayerKind::Conv,
                LayerKind::Activation(ActivationKind::ReLU),
                LayerKind::MaxPool,
                LayerKind::FullyConnected,
                LayerKind::Activation(ActivationKind::ReLU),
                LayerKind::FullyConnected,
            ]
        );
        let (x, _) = random_batch(2, [1, 28, 28], 0);
        let spatial: Vec<usize> = [0, 2, 3, 5]
            .iter()
            .map(|&i| net.forward_to(&x, i).unwrap().shape()[2])
            .collect();
        assert_eq!(spatial, vec![24, 12, 8, 4]);
        assert_eq!(net.logits(&x).unwrap().shape(), &[2, 10]);
        assert_eq!(net.param("fc1.weight").unwrap().value.shape(), &[500, 768]);
    }

    #[test]
    fn gcnn_inserts_adaptive_linear() {
        let net = Network::build(&NetworkSpec::mnist_gcnn(Norm::L2), 1).unwrap();
        let kinds: Vec<LayerKind> = net.layers().iter().map(Layer::kind).collect();
        assert_eq!(&kinds[..3], &[LayerKind::GenConvWL2, LayerKind::AdaptiveLinear, LayerKind::Activation(ActivationKind::ReLU)]);
        assert_eq!(kinds[4], LayerKind::GenConvWL2);
        assert_eq!(kinds[5], LayerKind::AdaptiveLinear);
        let mean = &net.param("conv1.mean").unwrap().value;
        assert!(mean.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(net.param("conv2.precision").unwrap().value.data().iter().all(|&v| v >= 0.0));
        assert_eq!(net.units()[0].signal, 1);
    }

    #[test]
    fn registry_lists_each_tensor_once() {
        let net = Network::build(&NetworkSpec::mnist_gcnn(Norm::L1), 3).unwrap();
        let keys: Vec<String> = net.params().into_iter().map(|(k, _)| k).collect();
        assert_eq!(
            keys,
            vec![
                "conv1.mean", "conv1.precision", "conv1.al.slope", "conv1.al.bias",
                "conv2.mean", "conv2.precision", "conv2.al.slope", "conv2.al.bias",
                "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
            ]
        );
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = NetworkSpec::mnist_cnn();
        let a = Network::build(&spec, 42).unwrap();
        let b = Network::build(&spec, 42).unwrap();
        let c = Network::build(&spec, 43).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn geometry_errors_name_both_layers() {
        let mut spec = NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU);
        spec.conv_mut("conv2").unwrap().window = 4;
        let err = Network::build(&spec, 0).unwrap_err().to_string();
        assert!(err.contains("conv1") && err.contains("conv2"), "{err}");
    }

    #[test]
    fn loss_layer_must_be_last_and_unique() {
        let mut spec = NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU);
        spec.layers.pop();
        assert!(Network::build(&spec, 0).is_err());
        spec.layers.insert(0, LayerSpec::SoftmaxLoss);
        spec.layers.push(LayerSpec::SoftmaxLoss);
        assert!(Network::build(&spec, 0).is_err());
    }

    #[test]
    fn double_threshold_requires_probabilities() {
        let mut spec = NetworkSpec::tiny(ConvType::WL2, ActivationKind::DoubleThreshold);
        assert!(Network::build(&spec, 0).is_err());
        for name in ["conv1", "conv2"] {
            let c = spec.conv_mut(name).unwrap();
            c.p_low = Some(0.05);
            c.p_high = Some(0.95);
        }
        let net = Network::build(&spec, 0).unwrap();
        let ta = threshold_affine(9, 0.05, 0.95).unwrap();
        assert_eq!(net.param("conv1.al.slope").unwrap().value.data()[0], ta.slope);
        assert_eq!(net.param("conv1.al.bias").unwrap().value.data()[1], ta.bias);
    }

    #[test]
    fn untrained_loss_near_ln10() {
        for spec in [NetworkSpec::mnist_cnn(), NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU)] {
            let mut net = Network::build(&spec, 5).unwrap();
            let (x, y) = random_batch(8, spec.input, 1);
            let out = net.forward(&x, &y).unwrap();
            assert!((out.loss - 10f64.ln()).abs() < 0.5, "{}", out.loss);
        }
    }

    #[test]
    fn forward_is_repeatable() {
        let spec = NetworkSpec::tiny(ConvType::WL2, ActivationKind::ReLU);
        let mut net = Network::build(&spec, 5).unwrap();
        let (x, y) = random_batch(4, spec.input, 2);
        let a = net.forward(&x, &y).unwrap().loss;
        let b = net.forward(&x, &y).unwrap().loss;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut net = Network::build(&NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU), 0).unwrap();
        assert!(matches!(net.backward(), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn label_count_must_match() {
        let spec = NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU);
        let mut net = Network::build(&spec, 0).unwrap();
        let (x, _) = random_batch(3, spec.input, 0);
        assert!(net.forward(&x, &[1, 2]).is_err());
    }

    #[test]
    fn duplicated_batch_gives_single_sample_gradients() {
        let spec = NetworkSpec::tiny(ConvType::WL1, ActivationKind::TanH);
        let mut net = Network::build(&spec, 9).unwrap();
        let (x, y) = random_batch(1, spec.input, 3);
        net.forward(&x, &y).unwrap();
        net.backward().unwrap();
        let single: Vec<Tensor> = net.params().into_iter().map(|(_, p)| p.grad.clone()).collect();

        let dup = x.select(&[0, 0, 0]).unwrap();
        let out = net.forward(&dup, &[y[0]; 3]).unwrap();
        let logits = net.logits(&dup).unwrap();
        assert_eq!(logits.data()[..10], logits.data()[10..20]);
        assert_eq!(out.predictions[0], out.predictions[2]);
        net.forward(&dup, &[y[0]; 3]).unwrap();
        net.backward().unwrap();
        for ((key, p), g) in net.params().into_iter().zip(&single) {
            for (a, b) in p.grad.data().iter().zip(g.data()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3), "{key}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_lr_params_still_get_gradients() {
        let mut spec = NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU);
        spec.conv_mut("conv1").unwrap().lr_mult = 0.0;
        let mut net = Network::build(&spec, 2).unwrap();
        let (x, y) = random_batch(4, spec.input, 4);
        net.forward(&x, &y).unwrap();
        net.backward().unwrap();
        let p = net.param("conv1.weight").unwrap();
        assert_eq!(p.lr_mult, 0.0);
        assert!(p.grad.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn snapshot_round_trip() {
        let spec = NetworkSpec::tiny(ConvType::WL2, ActivationKind::ReLU);
        let a = Network::build(&spec, 1).unwrap();
        let mut b = Network::build(&spec, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.snap");
        a.save_snapshot(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"GCNN1");
        b.load_snapshot(&path).unwrap();
        assert_eq!(a.checksum(), b.checksum());

        let mut other = Network::build(&NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU), 0).unwrap();
        assert!(other.load_snapshot(&path).is_err());
        assert!(b.restore_snapshot(&bytes[..bytes.len() - 3]).unwrap_err().contains("truncated"));
        assert!(b.restore_snapshot(b"GCNN2").is_err());
    }
}
