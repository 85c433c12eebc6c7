//! Model families built from a [`ModelSpec`]: a fully-connected network over
//! window statistics, an LSTM and ResNet-/DenseNet-style CNNs over raw
//! windows, the latter with optional per-channel input embeddings.
//!
//! Depth counts convolutional and dense layers on the trunk (stem through
//! head). Normalization, activation and pooling layers are not counted, and
//! embedding modules are reported separately as `embedding_depth`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    BoxLayer, Conv1d, ConvGeom, Dense, DenseConcat, Dropout, GlobalAvgPool, LayerGraph, Lstm, Mode, PerChannel, Relu, Residual, Scalar, Sequential, Tensor,
};
use crate::nn::{BatchNorm, InstanceNorm};
use crate::primitive::N_PRIMITIVES;
use crate::rng::{self, Rng};

pub const MODEL_SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Fcnn,
    Lstm,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CnnStyle {
    Resnet,
    Densenet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcnnSpec {
    pub depth: usize,
    pub width: usize,
    pub dropout: f64,
}

impl Default for FcnnSpec {
    fn default() -> Self {
        FcnnSpec {
            depth: 8,
            width: 900,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmSpec {
    pub hidden: usize,
}

impl Default for LstmSpec {
    fn default() -> Self {
        LstmSpec { hidden: 4000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingModuleConfig {
    pub blocks_per_channel: usize,
    pub growth: usize,
    pub kernel_size: usize,
    pub embedding_dim: usize,
}

impl Default for EmbeddingModuleConfig {
    fn default() -> Self {
        EmbeddingModuleConfig {
            blocks_per_channel: 2,
            growth: 4,
            kernel_size: 3,
            embedding_dim: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSpec {
    pub style: CnnStyle,
    pub norm: NormKind,
    pub input_embedding: bool,
    /// Total convolutional + dense layers on the trunk.
    pub depth: usize,
    pub stages: usize,
    /// Channels of the first stage; doubled at each later stage.
    pub width: usize,
    /// Channels added per DenseNet layer.
    pub growth: usize,
    pub kernel_size: usize,
    /// Kernel size of the stem convolution.
    pub stem_kernel: usize,
    pub stem_bias: bool,
    pub embedding: EmbeddingModuleConfig,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            style: CnnStyle::Resnet,
            norm: NormKind::Instance,
            input_embedding: true,
            depth: 44,
            stages: 3,
            width: 32,
            growth: 12,
            kernel_size: 3,
            stem_kernel: 3,
            stem_bias: true,
            embedding: EmbeddingModuleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "spec_version")]
    pub version: u32,
    pub family: Family,
    /// Channels per timestep for sequence models, feature count for the FCNN.
    /// Filled in from the data when zero.
    #[serde(default)]
    pub n_inputs: usize,
    /// Window length in samples (sequence models).
    #[serde(default)]
    pub window_len: usize,
    #[serde(default = "n_labels")]
    pub n_labels: usize,
    #[serde(default)]
    pub fcnn: FcnnSpec,
    #[serde(default)]
    pub lstm: LstmSpec,
    #[serde(default)]
    pub cnn: CnnSpec,
}

fn spec_version() -> u32 {
    MODEL_SPEC_VERSION
}

fn n_labels() -> usize {
    N_PRIMITIVES
}

impl ModelSpec {
    fn base(family: Family, n_inputs: usize, window_len: usize) -> Self {
        ModelSpec {
            version: MODEL_SPEC_VERSION,
            family,
            n_inputs,
            window_len,
            n_labels: N_PRIMITIVES,
            fcnn: FcnnSpec::default(),
            lstm: LstmSpec::default(),
            cnn: CnnSpec::default(),
        }
    }

    pub fn fcnn(n_features: usize) -> Self {
        Self::base(Family::Fcnn, n_features, 0)
    }

    pub fn lstm(channels: usize, window_len: usize) -> Self {
        Self::base(Family::Lstm, channels, window_len)
    }

    pub fn cnn(channels: usize, window_len: usize, style: CnnStyle, norm: NormKind, input_embedding: bool) -> Self {
        let mut s = Self::base(Family::Cnn, channels, window_len);
        s.cnn.style = style;
        s.cnn.norm = norm;
        s.cnn.input_embedding = input_embedding;
        s
    }

    /// Reduced sizes suitable for a laptop CPU.
    pub fn desk(mut self) -> Self {
        self.fcnn = FcnnSpec {
            depth: 2,
            width: 64,
            dropout: 0.5,
        };
        self.lstm = LstmSpec { hidden: 16 };
        self.cnn.depth = 8;
        self.cnn.stages = 2;
        self.cnn.width = 8;
        self.cnn.growth = 4;
        self
    }

    pub fn uses_features(&self) -> bool {
        self.family == Family::Fcnn
    }

    /// Short human-readable tag, e.g. `cnn-resnet-in-emb`.
    pub fn tag(&self) -> String {
        match self.family {
            Family::Fcnn => format!("fcnn-d{}-w{}", self.fcnn.depth, self.fcnn.width),
            Family::Lstm => format!("lstm-h{}", self.lstm.hidden),
            Family::Cnn => format!(
                "cnn-{}-{}-{}",
                match self.cnn.style {
                    CnnStyle::Resnet => "resnet",
                    CnnStyle::Densenet => "densenet",
                },
                match self.cnn.norm {
                    NormKind::Batch => "bn",
                    NormKind::Instance => "in",
                },
                if self.cnn.input_embedding { "emb" } else { "noemb" }
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_labels != N_PRIMITIVES {
            return Err(Error::Config(format!("n_labels must be {N_PRIMITIVES}")));
        }
        if self.n_inputs == 0 {
            return Err(Error::Config("n_inputs must be positive".into()));
        }
        match self.family {
            Family::Fcnn => {
                if self.fcnn.depth == 0 || self.fcnn.width == 0 {
                    return Err(Error::Config("fcnn depth and width must be positive".into()));
                }
                crate::nn::activation::check_dropout_rate(self.fcnn.dropout)?;
            }
            Family::Lstm => {
                if self.lstm.hidden == 0 {
                    return Err(Error::Config("lstm hidden size must be positive".into()));
                }
                if self.window_len == 0 {
                    return Err(Error::Config("window_len must be positive".into()));
                }
            }
            Family::Cnn => {
                cnn_plan(self)?;
            }
        }
        Ok(())
    }
}

/// Layer allocation of a CNN trunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnPlan {
    /// Convolutions in the stem (1 or 2).
    pub stem_convs: usize,
    /// Residual blocks (resnet) or dense layers (densenet) per stage.
    pub per_stage: Vec<usize>,
    pub widths: Vec<usize>,
    /// Time length entering each stage.
    pub lengths: Vec<usize>,
}

impl CnnPlan {
    pub fn depth(&self, style: CnnStyle) -> usize {
        let blocks: usize = self.per_stage.iter().sum();
        let per = match style {
            CnnStyle::Resnet => 2,
            CnnStyle::Densenet => 1,
        };
        self.stem_convs + (self.per_stage.len() - 1) + per * blocks + 1
    }
}

pub fn cnn_plan(spec: &ModelSpec) -> Result<CnnPlan> {
    let c = &spec.cnn;
    if c.stages == 0 || c.width == 0 || c.kernel_size == 0 || c.stem_kernel == 0 {
        return Err(Error::Config("cnn stages, width and kernel sizes must be positive".into()));
    }
    if spec.window_len == 0 {
        return Err(Error::Config("window_len must be positive".into()));
    }
    // stem + transitions + head
    let fixed = 1 + (c.stages - 1) + 1;
    if c.depth < fixed + c.stages {
        return Err(Error::Config(format!(
            "depth {} too small for {} stages",
            c.depth, c.stages
        )));
    }
    let budget = c.depth - fixed;
    let (stem_convs, blocks) = match c.style {
        CnnStyle::Resnet => (1 + budget % 2, budget / 2),
        CnnStyle::Densenet => (1, budget),
    };
    if blocks < c.stages {
        return Err(Error::Config(format!(
            "depth {} leaves fewer blocks than stages",
            c.depth
        )));
    }
    let per_stage: Vec<usize> = (0..c.stages)
        .map(|s| blocks / c.stages + usize::from(s < blocks % c.stages))
        .collect();
    let widths: Vec<usize> = (0..c.stages).map(|s| c.width << s).collect();
    let mut lengths = vec![spec.window_len];
    let down = ConvGeom::new(c.kernel_size, 2, 1);
    for s in 1..c.stages {
        let prev = lengths[s - 1];
        match down.out_len(prev) {
            Some(n) if n >= 2 => lengths.push(n),
            _ => {
                return Err(Error::Config(format!(
                    "time length collapses below 2 at stage {s} (from {prev})"
                )))
            }
        }
    }
    if c.embedding.embedding_dim == 0 && c.input_embedding {
        return Err(Error::Config("embedding_dim must be positive".into()));
    }
    Ok(CnnPlan {
        stem_convs,
        per_stage,
        widths,
        lengths,
    })
}

fn norm<T: Scalar>(kind: NormKind, channels: usize) -> BoxLayer<T> {
    match kind {
        NormKind::Batch => Box::new(BatchNorm::new(channels)),
        NormKind::Instance => Box::new(InstanceNorm::new(channels)),
    }
}

fn conv_block<T: Scalar>(c_in: usize, c_out: usize, k: usize, stride: usize, nk: NormKind, rng: &mut Rng) -> Vec<BoxLayer<T>> {
    vec![
        Box::new(Conv1d::new(c_in, c_out, k, stride, rng)),
        norm(nk, c_out),
        Box::new(Relu::new()),
    ]
}

pub fn build_fcnn<T: Scalar>(spec: &ModelSpec, rng: &mut Rng) -> Result<Vec<BoxLayer<T>>> {
    if spec.family != Family::Fcnn {
        return Err(Error::Config("build_fcnn needs family fcnn".into()));
    }
    spec.validate()?;
    let f = &spec.fcnn;
    let mut layers: Vec<BoxLayer<T>> = Vec::new();
    let mut c = spec.n_inputs;
    for _ in 0..f.depth {
        layers.push(Box::new(Dense::new(c, f.width, rng)));
        layers.push(Box::new(Relu::new()));
        layers.push(Box::new(Dropout::new(f.dropout)?));
        c = f.width;
    }
    layers.push(Box::new(Dense::new(c, spec.n_labels, rng)));
    Ok(layers)
}

pub fn build_lstm<T: Scalar>(spec: &ModelSpec, rng: &mut Rng) -> Result<Vec<BoxLayer<T>>> {
    if spec.family != Family::Lstm {
        return Err(Error::Config("build_lstm needs family lstm".into()));
    }
    spec.validate()?;
    let h = spec.lstm.hidden;
    Ok(vec![
        Box::new(Lstm::new(spec.n_inputs, h, rng)),
        Box::new(Dense::new(h, spec.n_labels, rng)),
    ])
}

/// One unshared embedding module for a single input channel: an entry
/// conv → norm → relu, further DenseNet-style blocks that each append
/// `growth` maps, and a linear 1×1 projection to `embedding_dim` channels.
pub fn build_embedding_module<T: Scalar>(cfg: &EmbeddingModuleConfig, nk: NormKind, rng: &mut Rng) -> Sequential<T> {
    let mut layers: Vec<BoxLayer<T>> = Vec::new();
    let mut c = 1;
    if cfg.blocks_per_channel > 0 {
        layers.extend(conv_block(1, cfg.growth, cfg.kernel_size, 1, nk, rng));
        c = cfg.growth;
        for _ in 1..cfg.blocks_per_channel {
            layers.push(Box::new(DenseConcat::new(conv_block(c, cfg.growth, cfg.kernel_size, 1, nk, rng))));
            c += cfg.growth;
        }
    }
    layers.push(Box::new(Conv1d::new(c, cfg.embedding_dim, 1, 1, rng)));
    Sequential::new(layers)
}

pub fn build_embedding_front<T: Scalar>(spec: &ModelSpec, rng: &mut Rng) -> Result<PerChannel<T>> {
    if spec.family != Family::Cnn {
        return Err(Error::Config("input embeddings are only defined for the cnn family".into()));
    }
    if !spec.cnn.input_embedding {
        return Err(Error::Config("spec has input_embedding = false".into()));
    }
    let modules = (0..spec.n_inputs)
        .map(|_| build_embedding_module(&spec.cnn.embedding, spec.cnn.norm, rng))
        .collect();
    Ok(PerChannel::new(modules))
}

pub fn build_cnn<T: Scalar>(spec: &ModelSpec, rng: &mut Rng) -> Result<Vec<BoxLayer<T>>> {
    if spec.family != Family::Cnn {
        return Err(Error::Config("build_cnn needs family cnn".into()));
    }
    let plan = cnn_plan(spec)?;
    let c = &spec.cnn;
    let k = c.kernel_size;
    let mut layers: Vec<BoxLayer<T>> = Vec::new();
    let mut ch = spec.n_inputs;
    if c.input_embedding {
        layers.push(Box::new(build_embedding_front(spec, rng)?));
        ch = spec.n_inputs * c.embedding.embedding_dim;
    }
    let stem = Conv1d::new(ch, plan.widths[0], c.stem_kernel, 1, rng);
    if c.stem_bias {
        layers.push(Box::new(stem));
    } else {
        layers.push(Box::new(BiasFree::new(stem)));
    }
    layers.push(norm(c.norm, plan.widths[0]));
    layers.push(Box::new(Relu::new()));
    if plan.stem_convs > 1 {
        layers.extend(conv_block(plan.widths[0], plan.widths[0], k, 1, c.norm, rng));
    }
    ch = plan.widths[0];
    for (s, &n) in plan.per_stage.iter().enumerate() {
        if s > 0 {
            let w = plan.widths[s];
            layers.extend(conv_block(ch, w, k, 2, c.norm, rng));
            ch = w;
        }
        for _ in 0..n {
            match c.style {
                CnnStyle::Resnet => {
                    let body: Vec<BoxLayer<T>> = vec![
                        Box::new(Conv1d::new(ch, ch, k, 1, rng)),
                        norm(c.norm, ch),
                        Box::new(Relu::new()),
                        Box::new(Conv1d::new(ch, ch, k, 1, rng)),
                        norm(c.norm, ch),
                    ];
                    layers.push(Box::new(Residual::new(body)));
                }
                CnnStyle::Densenet => {
                    layers.push(Box::new(DenseConcat::new(conv_block(ch, c.growth, k, 1, c.norm, rng))));
                    ch += c.growth;
                }
            }
        }
    }
    layers.push(Box::new(GlobalAvgPool::new()));
    layers.push(Box::new(Dense::new(ch, spec.n_labels, rng)));
    Ok(layers)
}

/// A convolution whose bias is pinned at zero.
struct BiasFree<T: Scalar>(Conv1d<T>);

impl<T: Scalar> BiasFree<T> {
    fn new(mut conv: Conv1d<T>) -> Self {
        conv.bias.value.fill(T::zero());
        BiasFree(conv)
    }
}

impl<T: Scalar> crate::nn::Layer<T> for BiasFree<T> {
    fn kind(&self) -> crate::nn::LayerKind {
        crate::nn::LayerKind::Conv1d
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut crate::nn::Ctx<'_>) -> Result<Tensor<T>> {
        self.0.bias.value.fill(T::zero());
        self.0.forward(x, ctx)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let dx = self.0.backward(grad)?;
        self.0.bias.grad.fill(T::zero());
        Ok(dx)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<crate::nn::Named<'a, T>>) {
        out.push(crate::nn::Named {
            name: format!("{prefix}weight"),
            slot: crate::nn::Slot::Param(&mut self.0.weight),
        });
    }

    fn depth(&self) -> usize {
        1
    }
}

/// A built network together with the spec it came from.
pub struct Model<T: Scalar = f32> {
    pub spec: ModelSpec,
    pub graph: LayerGraph<T>,
}

impl<T: Scalar> Model<T> {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = rng::stream(seed, "init", 0);
        let layers = match spec.family {
            Family::Fcnn => build_fcnn(spec, &mut init)?,
            Family::Lstm => build_lstm(spec, &mut init)?,
            Family::Cnn => build_cnn(spec, &mut init)?,
        };
        Ok(Model {
            spec: spec.clone(),
            graph: LayerGraph::new(layers, seed),
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.graph.set_mode(mode);
    }

    pub fn param_count(&mut self) -> usize {
        self.graph.param_count()
    }

    /// Convolutional + dense layers on the trunk.
    pub fn depth(&self) -> usize {
        self.graph.depth()
    }

    /// Softmax probabilities, `B×5`. Errors in train mode.
    pub fn predict_proba(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        self.graph.predict_proba(batch)
    }

    pub fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let ok = match (self.spec.family, batch.shape()) {
            (Family::Fcnn, [_, f]) => *f == self.spec.n_inputs,
            (Family::Lstm | Family::Cnn, [_, c, t]) => *c == self.spec.n_inputs && *t == self.spec.window_len,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            let expect = if self.spec.uses_features() {
                vec![self.spec.n_inputs]
            } else {
                vec![self.spec.n_inputs, self.spec.window_len]
            };
            Err(Error::dims("model input", batch.shape(), &expect))
        }
    }
}

/// Convolutional layers in one embedding module (0 without embeddings).
pub fn embedding_depth(spec: &ModelSpec) -> usize {
    if spec.family == Family::Cnn && spec.cnn.input_embedding {
        spec.cnn.embedding.blocks_per_channel + 1
    } else {
        0
    }
}

/// Stage width for a model without embeddings whose parameter count is
/// closest to `target`.
pub fn match_width(spec: &ModelSpec, target: usize) -> Result<usize> {
    let mut best = (usize::MAX, spec.cnn.width);
    for w in 1..=256 {
        let mut s = spec.clone();
        s.cnn.width = w;
        let n = Model::<f32>::build(&s, 0)?.param_count();
        let gap = n.abs_diff(target);
        if gap < best.0 {
            best = (gap, w);
        }
        if n > target {
            break;
        }
    }
    Ok(best.1)
}
