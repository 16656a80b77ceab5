//! Learnable parameter containers: construction, seeded initialization,
//! named traversal (for the optimizer and checkpoints), and tape tracking.
//! Traversal order is construction order and therefore deterministic.

use expnet_core::{ops, Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{FusionMode, ModelConfig};

/// Hidden channel width of the saliency field convolutions.
pub const FIELD_WIDTH: usize = 16;
/// Conditioning head bias at init: unit amplitude, mild frequency. Keeps the
/// sine path responsive from the first step.
const HEAD_BIAS: [f64; 2] = [1.0, 1.5];
/// Initial bias of the last field convolution; sigmoid(2.2) puts initial
/// scores near 0.9. Early masks keep every patch focal, so the classifier
/// first trains on the whole canvas; patches only leave the focus set once
/// accumulated gradient pressure actually pushes them out. A mask that
/// starts undecided contracts irreversibly before the classifier can learn,
/// because zeroed patches receive no canvas gradient to bring them back.
const HIGH_BIAS: f64 = 2.2;

fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

pub(crate) trait ParamVisit: Sized {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);
    fn track(&self, tape: &mut Tape) -> Self;
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    /// False for kernels whose bias would be provably absorbed by a
    /// following mean-subtracting normalization; the zero bias then stays
    /// constant and unregistered.
    pub learn_bias: bool,
}

impl Conv {
    pub fn init(rng: &mut ChaCha8Rng, kh: usize, kw: usize, c_in: usize, c_out: usize) -> Self {
        Conv {
            weight: he_uniform(rng, &[kh, kw, c_in, c_out], kh * kw * c_in),
            bias: Tensor::zeros(&[c_out]),
            learn_bias: true,
        }
    }

    pub fn init_unbiased(
        rng: &mut ChaCha8Rng,
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        Conv { learn_bias: false, ..Conv::init(rng, kh, kw, c_in, c_out) }
    }

    /// All-zero kernel and bias; used by offset predictors so deformable
    /// convolutions start as their standard counterparts.
    pub fn zeroed(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Self {
        Conv {
            weight: Tensor::zeros(&[kh, kw, c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
            learn_bias: true,
        }
    }

    /// Conditioning head: small weights, bias pinned at `HEAD_BIAS`.
    pub fn cond_head(rng: &mut ChaCha8Rng, c_in: usize) -> Self {
        let limit = 0.1 * (1.0 / c_in as f64).sqrt();
        Conv {
            weight: Tensor::from_fn(&[1, 1, c_in, 2], |_| rng.gen_range(-limit..limit)),
            bias: Tensor::new(&[2], HEAD_BIAS.to_vec()).expect("pair"),
            learn_bias: true,
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor, TensorError> {
        ops::conv2d(tape, x, &self.weight, &self.bias, stride, padding)
    }
}

impl ParamVisit for Conv {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        if self.learn_bias {
            out.push((format!("{prefix}.bias"), &self.bias));
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        if self.learn_bias {
            out.push((format!("{prefix}.bias"), &mut self.bias));
        }
    }
    fn track(&self, tape: &mut Tape) -> Self {
        Conv {
            weight: tape.leaf(&self.weight),
            bias: if self.learn_bias { tape.leaf(&self.bias) } else { self.bias.clone() },
            learn_bias: self.learn_bias,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Norm {
    pub fn init(channels: usize) -> Self {
        Norm { gamma: Tensor::filled(&[channels], 1.0), beta: Tensor::zeros(&[channels]) }
    }

    pub fn apply(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        ops::channel_norm(tape, x, &self.gamma, &self.beta)
    }
}

impl ParamVisit for Norm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
    fn track(&self, tape: &mut Tape) -> Self {
        Norm { gamma: tape.leaf(&self.gamma), beta: tape.leaf(&self.beta) }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        // Glorot bound: embedding/attention projections have no rectifier
        // behind them, so a unit-gain init keeps magnitudes level.
        let limit = (6.0 / (input + output) as f64).sqrt();
        Linear {
            weight: Tensor::from_fn(&[input, output], |_| rng.gen_range(-limit..limit)),
            bias: Tensor::zeros(&[output]),
        }
    }

    /// Near-zero init for the classifier head: first-step logits stay close
    /// to uniform while gradients remain nonzero.
    pub fn init_small(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::from_fn(&[input, output], |_| rng.gen_range(-0.01..0.01)),
            bias: Tensor::zeros(&[output]),
        }
    }

    /// Applies to a `[n, input]` matrix of row vectors.
    pub fn apply(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        let y = ops::matmul(tape, x, &self.weight)?;
        ops::add_row_bias(tape, &y, &self.bias)
    }

    /// Applies to a rank-1 embedding, returning a rank-1 embedding.
    pub fn apply_vec(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        let row = ops::reshape(tape, x, &[1, x.numel()])?;
        let y = self.apply(tape, &row)?;
        let width = y.numel();
        ops::reshape(tape, &y, &[width])
    }
}

impl ParamVisit for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
    fn track(&self, tape: &mut Tape) -> Self {
        Linear { weight: tape.leaf(&self.weight), bias: tape.leaf(&self.bias) }
    }
}

/// Pre-activation residual block: x + conv(relu(norm(conv(relu(norm(x)))))).
/// A zeroed second convolution makes the block an exact identity.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub norm1: Norm,
    pub conv1: Conv,
    pub norm2: Norm,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn init(rng: &mut ChaCha8Rng, width: usize) -> Self {
        ResBlock {
            norm1: Norm::init(width),
            // conv1's bias would be absorbed by norm2 and never learn.
            conv1: Conv::init_unbiased(rng, 3, 3, width, width),
            norm2: Norm::init(width),
            conv2: Conv::init(rng, 3, 3, width, width),
        }
    }
}

impl ParamVisit for ResBlock {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.norm1.visit(&format!("{prefix}.norm1"), out);
        self.conv1.visit(&format!("{prefix}.conv1"), out);
        self.norm2.visit(&format!("{prefix}.norm2"), out);
        self.conv2.visit(&format!("{prefix}.conv2"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), out);
        self.conv1.visit_mut(&format!("{prefix}.conv1"), out);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), out);
        self.conv2.visit_mut(&format!("{prefix}.conv2"), out);
    }
    fn track(&self, tape: &mut Tape) -> Self {
        ResBlock {
            norm1: self.norm1.track(tape),
            conv1: self.conv1.track(tape),
            norm2: self.norm2.track(tape),
            conv2: self.conv2.track(tape),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageParams {
    pub blocks: Vec<ResBlock>,
}

impl ParamVisit for StageParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.block{i}"), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.block{i}"), out);
        }
    }
    fn track(&self, tape: &mut Tape) -> Self {
        StageParams { blocks: self.blocks.iter().map(|b| b.track(tape)).collect() }
    }
}

/// Six field convolutions (one low, four middle, one high) plus one
/// conditioning head per activation site. Never shared across stages.
#[derive(Debug, Clone)]
pub struct NefirfParams {
    pub low: Conv,
    pub mid: Vec<Conv>,
    pub high: Conv,
    pub heads: Vec<Conv>,
}

impl NefirfParams {
    pub fn init(rng: &mut ChaCha8Rng, feature_channels: usize) -> Self {
        let mut high = Conv::init(rng, 3, 3, FIELD_WIDTH, 1);
        // Damped output weights keep the initial field contribution well
        // inside the HIGH_BIAS margin.
        high.weight = Tensor::new(
            high.weight.shape(),
            high.weight.values().iter().map(|w| 0.3 * w).collect(),
        )
        .expect("same shape");
        high.bias = Tensor::new(&[1], vec![HIGH_BIAS]).expect("scalar bias");
        NefirfParams {
            low: Conv::init(rng, 3, 3, 2, FIELD_WIDTH),
            mid: (0..4).map(|_| Conv::init(rng, 3, 3, FIELD_WIDTH, FIELD_WIDTH)).collect(),
            high,
            heads: (0..6).map(|_| Conv::cond_head(rng, feature_channels)).collect(),
        }
    }
}

impl ParamVisit for NefirfParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.low.visit(&format!("{prefix}.low"), out);
        for (i, c) in self.mid.iter().enumerate() {
            c.visit(&format!("{prefix}.mid{i}"), out);
        }
        self.high.visit(&format!("{prefix}.high"), out);
        for (i, c) in self.heads.iter().enumerate() {
            c.visit(&format!("{prefix}.head{i}"), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.low.visit_mut(&format!("{prefix}.low"), out);
        for (i, c) in self.mid.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}.mid{i}"), out);
        }
        self.high.visit_mut(&format!("{prefix}.high"), out);
        for (i, c) in self.heads.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}.head{i}"), out);
        }
    }
    fn track(&self, tape: &mut Tape) -> Self {
        NefirfParams {
            low: self.low.track(tape),
            mid: self.mid.iter().map(|c| c.track(tape)).collect(),
            high: self.high.track(tape),
            heads: self.heads.iter().map(|c| c.track(tape)).collect(),
        }
    }
}

/// Saliency generator: the conditional sine field, or a plain spatial
/// attention head when the sine toggle is off.
#[derive(Debug, Clone)]
pub enum SaliencyParams {
    Field(NefirfParams),
    Spatial(Conv),
}

impl ParamVisit for SaliencyParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            SaliencyParams::Field(p) => p.visit(&format!("{prefix}.field"), out),
            SaliencyParams::Spatial(c) => c.visit(&format!("{prefix}.spatial"), out),
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            SaliencyParams::Field(p) => p.visit_mut(&format!("{prefix}.field"), out),
            SaliencyParams::Spatial(c) => c.visit_mut(&format!("{prefix}.spatial"), out),
        }
    }
    fn track(&self, tape: &mut Tape) -> Self {
        match self {
            SaliencyParams::Field(p) => SaliencyParams::Field(p.track(tape)),
            SaliencyParams::Spatial(c) => SaliencyParams::Spatial(c.track(tape)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttnParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl AttnParams {
    pub fn init(
        rng: &mut ChaCha8Rng,
        query_in: usize,
        kv_in: usize,
        hidden: usize,
        heads: usize,
    ) -> Self {
        AttnParams {
            query: Linear::init(rng, query_in, hidden),
            key: Linear::init(rng, kv_in, hidden),
            value: Linear::init(rng, kv_in, hidden),
            output: Linear::init(rng, hidden, hidden),
            heads,
        }
    }
}

impl ParamVisit for AttnParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.query.visit(&format!("{prefix}.query"), out);
        self.key.visit(&format!("{prefix}.key"), out);
        self.value.visit(&format!("{prefix}.value"), out);
        self.output.visit(&format!("{prefix}.output"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.query.visit_mut(&format!("{prefix}.query"), out);
        self.key.visit_mut(&format!("{prefix}.key"), out);
        self.value.visit_mut(&format!("{prefix}.value"), out);
        self.output.visit_mut(&format!("{prefix}.output"), out);
    }
    fn track(&self, tape: &mut Tape) -> Self {
        AttnParams {
            query: self.query.track(tape),
            key: self.key.track(tape),
            value: self.value.track(tape),
            output: self.output.track(tape),
            heads: self.heads,
        }
    }
}

/// Context branch of a gaze shift: tile embedding, conditional position
/// encoding generator, and the cross-attention stack.
#[derive(Debug, Clone)]
pub struct ContextParams {
    pub token_proj: Linear,
    pub pos_gen: Conv,
    pub attn: AttnParams,
}

impl ParamVisit for ContextParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.token_proj.visit(&format!("{prefix}.token_proj"), out);
        self.pos_gen.visit(&format!("{prefix}.pos_gen"), out);
        self.attn.visit(&format!("{prefix}.attn"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.token_proj.visit_mut(&format!("{prefix}.token_proj"), out);
        self.pos_gen.visit_mut(&format!("{prefix}.pos_gen"), out);
        self.attn.visit_mut(&format!("{prefix}.attn"), out);
    }
    fn track(&self, tape: &mut Tape) -> Self {
        ContextParams {
            token_proj: self.token_proj.track(tape),
            pos_gen: self.pos_gen.track(tape),
            attn: self.attn.track(tape),
        }
    }
}

/// Channel-doubling deformable convolution: the sampled kernel plus its
/// zero-initialized offset predictor.
#[derive(Debug, Clone)]
pub struct DeformParams {
    pub main: Conv,
    pub offsets: Conv,
}

impl DeformParams {
    pub fn init(rng: &mut ChaCha8Rng, c_in: usize) -> Self {
        DeformParams {
            main: Conv::init(rng, 3, 3, c_in, 2 * c_in),
            offsets: Conv::zeroed(3, 3, c_in, 18),
        }
    }
}

impl ParamVisit for DeformParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.main.visit(&format!("{prefix}.main"), out);
        self.offsets.visit(&format!("{prefix}.offsets"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.main.visit_mut(&format!("{prefix}.main"), out);
        self.offsets.visit_mut(&format!("{prefix}.offsets"), out);
    }
    fn track(&self, tape: &mut Tape) -> Self {
        DeformParams { main: self.main.track(tape), offsets: self.offsets.track(tape) }
    }
}

#[derive(Debug, Clone)]
pub struct GazeShiftParams {
    pub saliency: SaliencyParams,
    /// Absent when the context-impression toggle is off.
    pub context: Option<ContextParams>,
    pub deform: DeformParams,
}

impl ParamVisit for GazeShiftParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.saliency.visit(&format!("{prefix}.saliency"), out);
        if let Some(ctx) = &self.context {
            ctx.visit(&format!("{prefix}.context"), out);
        }
        self.deform.visit(&format!("{prefix}.deform"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.saliency.visit_mut(&format!("{prefix}.saliency"), out);
        if let Some(ctx) = &mut self.context {
            ctx.visit_mut(&format!("{prefix}.context"), out);
        }
        self.deform.visit_mut(&format!("{prefix}.deform"), out);
    }
    fn track(&self, tape: &mut Tape) -> Self {
        GazeShiftParams {
            saliency: self.saliency.track(tape),
            context: self.context.as_ref().map(|c| c.track(tape)),
            deform: self.deform.track(tape),
        }
    }
}

/// Inter-stage downsampling: a gaze shift, or the plain max-pool plus
/// channel-doubling convolution used as the ablation baseline.
#[derive(Debug, Clone)]
pub enum DownsampleParams {
    Gaze(Box<GazeShiftParams>),
    Plain(Conv),
}

impl ParamVisit for DownsampleParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            DownsampleParams::Gaze(g) => g.visit(prefix, out),
            DownsampleParams::Plain(c) => c.visit(&format!("{prefix}.plain"), out),
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            DownsampleParams::Gaze(g) => g.visit_mut(prefix, out),
            DownsampleParams::Plain(c) => c.visit_mut(&format!("{prefix}.plain"), out),
        }
    }
    fn track(&self, tape: &mut Tape) -> Self {
        match self {
            DownsampleParams::Gaze(g) => DownsampleParams::Gaze(Box::new(g.track(tape))),
            DownsampleParams::Plain(c) => DownsampleParams::Plain(c.track(tape)),
        }
    }
}

/// Two-layer perceptron adapter used by additive fusion.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, width: usize) -> Self {
        Mlp { first: Linear::init(rng, input, width), second: Linear::init(rng, width, width) }
    }

    pub fn apply_vec(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        let h = self.first.apply_vec(tape, x)?;
        let h = ops::relu(tape, &h)?;
        self.second.apply_vec(tape, &h)
    }
}

impl ParamVisit for Mlp {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.first.visit(&format!("{prefix}.first"), out);
        self.second.visit(&format!("{prefix}.second"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.first.visit_mut(&format!("{prefix}.first"), out);
        self.second.visit_mut(&format!("{prefix}.second"), out);
    }
    fn track(&self, tape: &mut Tape) -> Self {
        Mlp { first: self.first.track(tape), second: self.second.track(tape) }
    }
}

#[derive(Debug, Clone)]
pub enum FuseParams {
    /// One perceptron per embedding source (focal first), outputs summed.
    MlpAdd { adapters: Vec<Mlp> },
    /// Projected focal embedding queries the impression tokens.
    CrossAttention { focal_proj: Linear, attn: AttnParams },
}

impl ParamVisit for FuseParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            FuseParams::MlpAdd { adapters } => {
                for (i, a) in adapters.iter().enumerate() {
                    a.visit(&format!("{prefix}.adapter{i}"), out);
                }
            }
            FuseParams::CrossAttention { focal_proj, attn } => {
                focal_proj.visit(&format!("{prefix}.focal_proj"), out);
                attn.visit(&format!("{prefix}.attn"), out);
            }
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            FuseParams::MlpAdd { adapters } => {
                for (i, a) in adapters.iter_mut().enumerate() {
                    a.visit_mut(&format!("{prefix}.adapter{i}"), out);
                }
            }
            FuseParams::CrossAttention { focal_proj, attn } => {
                focal_proj.visit_mut(&format!("{prefix}.focal_proj"), out);
                attn.visit_mut(&format!("{prefix}.attn"), out);
            }
        }
    }
    fn track(&self, tape: &mut Tape) -> Self {
        match self {
            FuseParams::MlpAdd { adapters } => FuseParams::MlpAdd {
                adapters: adapters.iter().map(|a| a.track(tape)).collect(),
            },
            FuseParams::CrossAttention { focal_proj, attn } => FuseParams::CrossAttention {
                focal_proj: focal_proj.track(tape),
                attn: attn.track(tape),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExpNetParams {
    pub stem: Conv,
    pub stages: Vec<StageParams>,
    pub shifts: Vec<DownsampleParams>,
    pub fuse: FuseParams,
    pub head: Linear,
}

impl ExpNetParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let stem = Conv::init(rng, 3, 3, 3, config.widths[0]);
        let stages = config
            .widths
            .iter()
            .zip(&config.blocks)
            .map(|(&w, &n)| StageParams {
                blocks: (0..n).map(|_| ResBlock::init(rng, w)).collect(),
            })
            .collect();
        let shifts = (0..config.gaze_count())
            .map(|s| {
                let c = config.widths[s];
                if !config.toggles.focal {
                    return DownsampleParams::Plain(Conv::init(rng, 3, 3, c, 2 * c));
                }
                let saliency = if config.toggles.cond_sine {
                    SaliencyParams::Field(NefirfParams::init(rng, c))
                } else {
                    let mut head = Conv::init(rng, 1, 1, c, 1);
                    head.bias = Tensor::new(&[1], vec![HIGH_BIAS]).expect("scalar bias");
                    SaliencyParams::Spatial(head)
                };
                let context = config.toggles.context_impression.then(|| {
                    let tile = config.patch_k(s) * config.patch_k(s) * c;
                    ContextParams {
                        token_proj: Linear::init(rng, tile, config.hidden),
                        pos_gen: Conv::init(rng, 3, 3, config.hidden, config.hidden),
                        attn: AttnParams::init(
                            rng,
                            config.hidden,
                            config.hidden,
                            config.hidden,
                            config.heads,
                        ),
                    }
                });
                DownsampleParams::Gaze(Box::new(GazeShiftParams {
                    saliency,
                    context,
                    deform: DeformParams::init(rng, c),
                }))
            })
            .collect();
        let focal_width = *config.widths.last().expect("validated");
        let impression_sources = if config.toggles.focal && config.toggles.context_impression {
            config.gaze_count()
        } else {
            0
        };
        // With no impressions to fuse (ablated variants) only the focal
        // adapter exists, whatever the configured fusion mode.
        let fuse = match config.fusion {
            _ if impression_sources == 0 => FuseParams::MlpAdd {
                adapters: vec![Mlp::init(rng, focal_width, config.fusion_width)],
            },
            FusionMode::MlpAdd => {
                let mut adapters = vec![Mlp::init(rng, focal_width, config.fusion_width)];
                adapters.extend(
                    (0..impression_sources)
                        .map(|_| Mlp::init(rng, config.hidden, config.fusion_width)),
                );
                FuseParams::MlpAdd { adapters }
            }
            FusionMode::CrossAttention => FuseParams::CrossAttention {
                focal_proj: Linear::init(rng, focal_width, config.fusion_width),
                attn: AttnParams::init(
                    rng,
                    config.fusion_width,
                    config.hidden,
                    config.fusion_width,
                    config.heads,
                ),
            },
        };
        let head = Linear::init_small(rng, config.fusion_width, config.classes);
        ExpNetParams { stem, stages, shifts, fuse, head }
    }

    /// All parameters as (name, tensor), in deterministic order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Tracked mirror for one tape step; values are shared, not copied.
    pub fn track(&self, tape: &mut Tape) -> Self {
        ParamVisit::track(self, tape)
    }
}

impl ParamVisit for ExpNetParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.stem.visit(&format!("{prefix}stem"), out);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&format!("{prefix}stage{i}"), out);
        }
        for (i, s) in self.shifts.iter().enumerate() {
            s.visit(&format!("{prefix}shift{i}"), out);
        }
        self.fuse.visit(&format!("{prefix}fuse"), out);
        self.head.visit(&format!("{prefix}head"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.stem.visit_mut(&format!("{prefix}stem"), out);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&format!("{prefix}stage{i}"), out);
        }
        for (i, s) in self.shifts.iter_mut().enumerate() {
            s.visit_mut(&format!("{prefix}shift{i}"), out);
        }
        self.fuse.visit_mut(&format!("{prefix}fuse"), out);
        self.head.visit_mut(&format!("{prefix}head"), out);
    }
    fn track(&self, tape: &mut Tape) -> Self {
        ExpNetParams {
            stem: self.stem.track(tape),
            stages: self.stages.iter().map(|s| ParamVisit::track(s, tape)).collect(),
            shifts: self.shifts.iter().map(|s| ParamVisit::track(s, tape)).collect(),
            fuse: ParamVisit::track(&self.fuse, tape),
            head: ParamVisit::track(&self.head, tape),
        }
    }
}
