//! Declarative layer trees in RON.
//!
//! A pipeline file looks like
//!
//! ```text
//! (
//!     input_spec: "f32[8]",
//!     layer: Serial(children: [
//!         Conv1D(filters: 8, kernel_size: 3, padding: causal),
//!         Relu(),
//!     ]),
//! )
//! ```
//!
//! A bare layer expression is accepted too. Enumerated options such as
//! `padding` are bare snake_case identifiers. Every config struct rejects
//! unknown fields.

use serde::{Deserialize, Serialize};

use crate::combinators::CombineMode;
use crate::error::{Error, Result};
use crate::layer::build::child_names;
use crate::layer::{BuildCtx, Layer};
use crate::layers::attention::AttentionConfig;
use crate::layers::basic::{
    AxisConfig, EmitConfig, FlattenConfig, IdentityConfig, MoveAxisConfig, ReshapeConfig, TransposeConfig,
};
use crate::layers::conditioning::ConditioningConfig;
use crate::layers::conv::{Conv1DConfig, PoolKind, Pooling1DConfig, PoolingSpec};
use crate::layers::dense::DenseConfig;
use crate::layers::dropout::DropoutConfig;
use crate::layers::frame::{FrameConfig, WindowConfig};
use crate::layers::lstm::LstmConfig;
use crate::layers::norm::{NormConfig, NormKind, NormSpec};
use crate::layers::pointwise::{
    ActivationConfig, EluConfig, LeakyReluConfig, PointwiseKind, PointwiseSpec, ScalarConfig, SoftmaxConfig,
};
use crate::layers::resample::{RateConfig, ShiftConfig};
use crate::layers::transpose::{Conv1DTransposeConfig, OverlapAddConfig};
use crate::layers::BuildLayer;
use crate::sequence::ChannelSpec;
use crate::verify::sabotage::SabotageConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerConfig {
    Identity(IdentityConfig),
    Emit(EmitConfig),
    Dense(DenseConfig),
    LayerNormalization(NormConfig),
    #[serde(rename = "RMSNormalization")]
    RmsNormalization(NormConfig),
    Dropout(DropoutConfig),
    Relu(ActivationConfig),
    Gelu(ActivationConfig),
    Sigmoid(ActivationConfig),
    Tanh(ActivationConfig),
    Swish(ActivationConfig),
    Softplus(ActivationConfig),
    LeakyRelu(LeakyReluConfig),
    Elu(EluConfig),
    Abs(ActivationConfig),
    Exp(ActivationConfig),
    Log(ActivationConfig),
    Power(ScalarConfig),
    Maximum(ScalarConfig),
    Minimum(ScalarConfig),
    Mod(ScalarConfig),
    Scale(ScalarConfig),
    Add(ScalarConfig),
    Softmax(SoftmaxConfig),
    Reshape(ReshapeConfig),
    Flatten(FlattenConfig),
    ExpandDims(AxisConfig),
    Squeeze(AxisConfig),
    MoveAxis(MoveAxisConfig),
    Transpose(TransposeConfig),
    Conv1D(Conv1DConfig),
    Conv1DTranspose(Conv1DTransposeConfig),
    MaxPooling1D(Pooling1DConfig),
    AveragePooling1D(Pooling1DConfig),
    MinPooling1D(Pooling1DConfig),
    Upsample1D(RateConfig),
    Downsample1D(RateConfig),
    Delay(ShiftConfig),
    Lookahead(ShiftConfig),
    Frame(FrameConfig),
    Window(WindowConfig),
    OverlapAdd(OverlapAddConfig),
    DotProductSelfAttention(AttentionConfig),
    #[serde(rename = "LSTM")]
    Lstm(LstmConfig),
    Conditioning(ConditioningConfig),
    Serial(SerialConfig),
    Parallel(ParallelConfig),
    Residual(ResidualConfig),
    Repeat(RepeatConfig),
    Bidirectional(BidirectionalConfig),
    Blockwise(BlockwiseConfig),
    Sabotaged(SabotageConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(alias = "layers")]
    pub children: Vec<LayerConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(alias = "layers")]
    pub children: Vec<LayerConfig>,
    #[serde(default)]
    pub combine: CombineMode,
}

/// `body(x) + shortcut(x)`; the body is a serial chain and the shortcut
/// defaults to the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(alias = "layers")]
    pub children: Vec<LayerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<Box<LayerConfig>>,
}

/// `num_repeats` independently parameterized copies of `layer`, in series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub layer: Box<LayerConfig>,
    pub num_repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidirectionalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub forward: Box<LayerConfig>,
    pub backward: Box<LayerConfig>,
    #[serde(default = "default_bidirectional_combine")]
    pub combine: CombineMode,
}

fn default_bidirectional_combine() -> CombineMode {
    CombineMode::Concat
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockwiseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub layer: Box<LayerConfig>,
    pub block_size: usize,
}

/// Root of a pipeline file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_spec: Option<String>,
    pub layer: LayerConfig,
}

impl LayerConfig {
    /// Kind string of the layer this config builds; also the default name.
    pub fn kind(&self) -> &'static str {
        use LayerConfig::*;
        match self {
            Identity(_) => "identity",
            Emit(_) => "emit",
            Dense(_) => "dense",
            LayerNormalization(_) => "layer_norm",
            RmsNormalization(_) => "rms_norm",
            Dropout(_) => "dropout",
            Relu(_) => "relu",
            Gelu(_) => "gelu",
            Sigmoid(_) => "sigmoid",
            Tanh(_) => "tanh",
            Swish(_) => "swish",
            Softplus(_) => "softplus",
            LeakyRelu(_) => "leaky_relu",
            Elu(_) => "elu",
            Abs(_) => "abs",
            Exp(_) => "exp",
            Log(_) => "log",
            Power(_) => "power",
            Maximum(_) => "maximum",
            Minimum(_) => "minimum",
            Mod(_) => "mod",
            Scale(_) => "scale",
            Add(_) => "add",
            Softmax(_) => "softmax",
            Reshape(_) => "reshape",
            Flatten(_) => "flatten",
            ExpandDims(_) => "expand_dims",
            Squeeze(_) => "squeeze",
            MoveAxis(_) => "move_axis",
            Transpose(_) => "transpose",
            Conv1D(_) => "conv1d",
            Conv1DTranspose(_) => "conv1d_transpose",
            MaxPooling1D(_) => "max_pooling1d",
            AveragePooling1D(_) => "average_pooling1d",
            MinPooling1D(_) => "min_pooling1d",
            Upsample1D(_) => "upsample1d",
            Downsample1D(_) => "downsample1d",
            Delay(_) => "delay",
            Lookahead(_) => "lookahead",
            Frame(_) => "frame",
            Window(_) => "window",
            OverlapAdd(_) => "overlap_add",
            DotProductSelfAttention(_) => "self_attention",
            Lstm(_) => "lstm",
            Conditioning(_) => "conditioning",
            Serial(_) => "serial",
            Parallel(_) => "parallel",
            Residual(_) => "residual",
            Repeat(_) => "repeat",
            Bidirectional(_) => "bidirectional",
            Blockwise(_) => "blockwise",
            Sabotaged(_) => "sabotaged",
        }
    }

    /// Explicit name, if any.
    pub fn name(&self) -> Option<&str> {
        use LayerConfig::*;
        let name = match self {
            Identity(c) => &c.name,
            Emit(c) => &c.name,
            Dense(c) => &c.name,
            LayerNormalization(c) | RmsNormalization(c) => &c.name,
            Dropout(c) => &c.name,
            Relu(c) | Gelu(c) | Sigmoid(c) | Tanh(c) | Swish(c) | Softplus(c) | Abs(c) | Exp(c) | Log(c) => &c.name,
            LeakyRelu(c) => &c.name,
            Elu(c) => &c.name,
            Power(c) | Maximum(c) | Minimum(c) | Mod(c) | Scale(c) | Add(c) => &c.name,
            Softmax(c) => &c.name,
            Reshape(c) => &c.name,
            Flatten(c) => &c.name,
            ExpandDims(c) | Squeeze(c) => &c.name,
            MoveAxis(c) => &c.name,
            Transpose(c) => &c.name,
            Conv1D(c) => &c.name,
            Conv1DTranspose(c) => &c.name,
            MaxPooling1D(c) | AveragePooling1D(c) | MinPooling1D(c) => &c.name,
            Upsample1D(c) | Downsample1D(c) => &c.name,
            Delay(c) | Lookahead(c) => &c.name,
            Frame(c) => &c.name,
            Window(c) => &c.name,
            OverlapAdd(c) => &c.name,
            DotProductSelfAttention(c) => &c.name,
            Lstm(c) => &c.name,
            Conditioning(c) => &c.name,
            Serial(c) => &c.name,
            Parallel(c) => &c.name,
            Residual(c) => &c.name,
            Repeat(c) => &c.name,
            Bidirectional(c) => &c.name,
            Blockwise(c) => &c.name,
            Sabotaged(c) => &c.name,
        };
        name.as_deref()
    }

    fn set_name(&mut self, name: String) {
        use LayerConfig::*;
        let slot = match self {
            Identity(c) => &mut c.name,
            Emit(c) => &mut c.name,
            Dense(c) => &mut c.name,
            LayerNormalization(c) | RmsNormalization(c) => &mut c.name,
            Dropout(c) => &mut c.name,
            Relu(c) | Gelu(c) | Sigmoid(c) | Tanh(c) | Swish(c) | Softplus(c) | Abs(c) | Exp(c) | Log(c) => {
                &mut c.name
            }
            LeakyRelu(c) => &mut c.name,
            Elu(c) => &mut c.name,
            Power(c) | Maximum(c) | Minimum(c) | Mod(c) | Scale(c) | Add(c) => &mut c.name,
            Softmax(c) => &mut c.name,
            Reshape(c) => &mut c.name,
            Flatten(c) => &mut c.name,
            ExpandDims(c) | Squeeze(c) => &mut c.name,
            MoveAxis(c) => &mut c.name,
            Transpose(c) => &mut c.name,
            Conv1D(c) => &mut c.name,
            Conv1DTranspose(c) => &mut c.name,
            MaxPooling1D(c) | AveragePooling1D(c) | MinPooling1D(c) => &mut c.name,
            Upsample1D(c) | Downsample1D(c) => &mut c.name,
            Delay(c) | Lookahead(c) => &mut c.name,
            Frame(c) => &mut c.name,
            Window(c) => &mut c.name,
            OverlapAdd(c) => &mut c.name,
            DotProductSelfAttention(c) => &mut c.name,
            Lstm(c) => &mut c.name,
            Conditioning(c) => &mut c.name,
            Serial(c) => &mut c.name,
            Parallel(c) => &mut c.name,
            Residual(c) => &mut c.name,
            Repeat(c) => &mut c.name,
            Bidirectional(c) => &mut c.name,
            Blockwise(c) => &mut c.name,
            Sabotaged(c) => &mut c.name,
        };
        *slot = Some(name);
    }

    /// Builds the layer inside the current scope of `ctx`, which must
    /// already name this layer.
    fn build_here(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        use LayerConfig::*;
        let pw = |op: PointwiseKind, ctx: &mut BuildCtx| PointwiseSpec(op).build(input, ctx);
        match self {
            Identity(c) => c.build(input, ctx),
            Emit(c) => c.build(input, ctx),
            Dense(c) => c.build(input, ctx),
            LayerNormalization(c) => NormSpec(NormKind::Layer, c).build(input, ctx),
            RmsNormalization(c) => NormSpec(NormKind::Rms, c).build(input, ctx),
            Dropout(c) => c.build(input, ctx),
            Relu(_) => pw(PointwiseKind::Relu, ctx),
            Gelu(_) => pw(PointwiseKind::Gelu, ctx),
            Sigmoid(_) => pw(PointwiseKind::Sigmoid, ctx),
            Tanh(_) => pw(PointwiseKind::Tanh, ctx),
            Swish(_) => pw(PointwiseKind::Swish, ctx),
            Softplus(_) => pw(PointwiseKind::Softplus, ctx),
            LeakyRelu(c) => pw(PointwiseKind::LeakyRelu(c.negative_slope), ctx),
            Elu(c) => pw(PointwiseKind::Elu(c.alpha), ctx),
            Abs(_) => pw(PointwiseKind::Abs, ctx),
            Exp(_) => pw(PointwiseKind::Exp, ctx),
            Log(_) => pw(PointwiseKind::Log, ctx),
            Power(c) => pw(PointwiseKind::Power(c.value), ctx),
            Maximum(c) => pw(PointwiseKind::Maximum(c.value), ctx),
            Minimum(c) => pw(PointwiseKind::Minimum(c.value), ctx),
            Mod(c) => pw(PointwiseKind::Mod(c.value), ctx),
            Scale(c) => pw(PointwiseKind::Scale(c.value), ctx),
            Add(c) => pw(PointwiseKind::Add(c.value), ctx),
            Softmax(c) => pw(PointwiseKind::Softmax(c.axis), ctx),
            Reshape(c) => c.build(input, ctx),
            Flatten(c) => c.build(input, ctx),
            ExpandDims(c) => crate::layers::basic::ExpandDims(c).build(input, ctx),
            Squeeze(c) => crate::layers::basic::Squeeze(c).build(input, ctx),
            MoveAxis(c) => c.build(input, ctx),
            Transpose(c) => c.build(input, ctx),
            Conv1D(c) => c.build(input, ctx),
            Conv1DTranspose(c) => c.build(input, ctx),
            MaxPooling1D(c) => PoolingSpec(PoolKind::Max, c).build(input, ctx),
            AveragePooling1D(c) => PoolingSpec(PoolKind::Average, c).build(input, ctx),
            MinPooling1D(c) => PoolingSpec(PoolKind::Min, c).build(input, ctx),
            Upsample1D(c) => (true, c).build(input, ctx),
            Downsample1D(c) => (false, c).build(input, ctx),
            Delay(c) => (false, c).build(input, ctx),
            Lookahead(c) => (true, c).build(input, ctx),
            Frame(c) => c.build(input, ctx),
            Window(c) => c.build(input, ctx),
            OverlapAdd(c) => c.build(input, ctx),
            DotProductSelfAttention(c) => c.build(input, ctx),
            Lstm(c) => c.build(input, ctx),
            Conditioning(c) => c.build(input, ctx),
            Sabotaged(c) => c.build(input, ctx),
            Serial(c) => {
                let children = build_chain(&c.children, "children", input, ctx)?;
                crate::combinators::Serial::build("serial", ctx, input.clone(), children)
            }
            Parallel(c) => {
                let children = build_branches(&c.children, "children", input, ctx)?;
                crate::combinators::Parallel::build("parallel", ctx, input.clone(), children, c.combine)
            }
            Residual(c) => {
                let body = ctx.scoped("body", "", |ctx| {
                    let children = build_chain(&c.children, "children", input, ctx)?;
                    crate::combinators::Serial::build("serial", ctx, input.clone(), children)
                })?;
                let identity = LayerConfig::Identity(IdentityConfig::default());
                let shortcut = c.shortcut.as_deref().unwrap_or(&identity);
                let name = shortcut.name().unwrap_or("shortcut").to_string();
                let shortcut = ctx.scoped(&name, "shortcut", |ctx| shortcut.build_here(input, ctx))?;
                crate::combinators::Parallel::build("residual", ctx, input.clone(), vec![body, shortcut], CombineMode::Add)
            }
            Repeat(c) => {
                if c.num_repeats == 0 {
                    return Err(ctx.error("num_repeats", "must be at least 1"));
                }
                let base = c.layer.name().unwrap_or(c.layer.kind()).to_string();
                let copies: Vec<LayerConfig> = (0..c.num_repeats)
                    .map(|i| {
                        let mut copy = (*c.layer).clone();
                        copy.set_name(format!("{base}_{i}"));
                        copy
                    })
                    .collect();
                let children = build_chain(&copies, "layer", input, ctx)?;
                crate::combinators::Serial::build("repeat", ctx, input.clone(), children)
            }
            Bidirectional(c) => {
                let f = ctx.scoped(c.forward.name().unwrap_or("forward"), "forward", |ctx| {
                    c.forward.build_here(input, ctx)
                })?;
                let b = ctx.scoped(c.backward.name().unwrap_or("backward"), "backward", |ctx| {
                    c.backward.build_here(input, ctx)
                })?;
                crate::combinators::Bidirectional::build(ctx, input.clone(), f, b, c.combine)
            }
            Blockwise(c) => {
                let child = ctx.scoped(c.layer.name().unwrap_or(c.layer.kind()), "layer", |ctx| {
                    c.layer.build_here(input, ctx)
                })?;
                crate::combinators::Blockwise::build(ctx, child, c.block_size)
            }
        }
    }
}

/// Config path segment for child `i` under `field`. Repeat copies all share
/// the single `layer` field.
fn segment(field: &str, i: usize) -> String {
    match field {
        "layer" => "layer".to_string(),
        _ => format!("{field}[{i}]"),
    }
}

fn names(configs: &[LayerConfig], field: &str, ctx: &BuildCtx) -> Result<Vec<String>> {
    let pairs: Vec<(Option<&str>, &str)> = configs.iter().map(|c| (c.name(), c.kind())).collect();
    child_names(ctx, field, &pairs)
}

fn build_chain(
    configs: &[LayerConfig],
    field: &str,
    input: &ChannelSpec,
    ctx: &mut BuildCtx,
) -> Result<Vec<Box<dyn Layer>>> {
    let names = names(configs, field, ctx)?;
    let mut spec = input.clone();
    let mut out = Vec::with_capacity(configs.len());
    for (i, (cfg, name)) in configs.iter().zip(&names).enumerate() {
        let layer = ctx.scoped(name, &segment(field, i), |ctx| cfg.build_here(&spec, ctx))?;
        spec = layer.output_spec().clone();
        out.push(layer);
    }
    Ok(out)
}

fn build_branches(
    configs: &[LayerConfig],
    field: &str,
    input: &ChannelSpec,
    ctx: &mut BuildCtx,
) -> Result<Vec<Box<dyn Layer>>> {
    let names = names(configs, field, ctx)?;
    configs
        .iter()
        .zip(&names)
        .enumerate()
        .map(|(i, (cfg, name))| ctx.scoped(name, &segment(field, i), |ctx| cfg.build_here(input, ctx)))
        .collect()
}

/// Builds a whole tree. The root is named by its config name or kind, and
/// error paths start with the root kind.
pub fn build_root(config: &LayerConfig, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
    let name = config.name().unwrap_or(config.kind()).to_string();
    ctx.scoped(&name, config.kind(), |ctx| config.build_here(input, ctx))
}

/// Builds with random parameters and checks nothing is left over.
pub fn build_random(config: &LayerConfig, input: &ChannelSpec, seed: u64) -> Result<Box<dyn Layer>> {
    let mut ctx = BuildCtx::random(seed);
    let layer = build_root(config, input, &mut ctx)?;
    ctx.finish()?;
    Ok(layer)
}

fn ron_options() -> ron::Options {
    ron::Options::default()
        .with_default_extension(ron::extensions::Extensions::IMPLICIT_SOME)
        .with_default_extension(ron::extensions::Extensions::UNWRAP_VARIANT_NEWTYPES)
}

fn parse_ron<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = ron::Deserializer::from_str_with_options(text, ron_options())
        .map_err(|e| Error::Format(format!("{}: {}", e.position, e.code)))?;
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let spanned = de.span_error(e.into_inner());
        let at = if path.is_empty() || path == "." {
            String::new()
        } else {
            format!(" at `{path}`")
        };
        Error::Format(format!("{}{at}: {}", spanned.position, spanned.code))
    })?;
    de.end().map_err(|e| {
        let spanned = de.span_error(e);
        Error::Format(format!("{}: {}", spanned.position, spanned.code))
    })?;
    Ok(value)
}

/// Parses a pipeline file, or a bare layer expression with no input spec.
pub fn parse_pipeline(text: &str) -> Result<PipelineSpec> {
    let body = strip_comments(text);
    if body.trim_start().starts_with('(') {
        parse_ron(text)
    } else {
        Ok(PipelineSpec {
            input_spec: None,
            layer: parse_ron(text)?,
        })
    }
}

pub fn parse_layer(text: &str) -> Result<LayerConfig> {
    parse_ron(text)
}

/// Drops `//` line comments so the leading token can be inspected.
fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| l.trim_start())
        .filter(|l| !l.starts_with("//") && !l.starts_with("#!["))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Pretty RON without the `#![enable(..)]` header; the parser always
/// enables those extensions.
fn to_ron<T: serde::Serialize>(value: &T) -> String {
    let pretty = ron::ser::PrettyConfig::new()
        .indentor("    ".to_string())
        .extensions(ron::extensions::Extensions::IMPLICIT_SOME | ron::extensions::Extensions::UNWRAP_VARIANT_NEWTYPES);
    let text = ron::ser::to_string_pretty(value, pretty).expect("configs serialize");
    text.lines()
        .filter(|l| !l.starts_with("#!["))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Canonical RON text for a config.
pub fn render(config: &LayerConfig) -> String {
    to_ron(config)
}

pub fn render_pipeline(spec: &PipelineSpec) -> String {
    to_ron(spec)
}

impl PipelineSpec {
    /// Input spec from the file, or `fallback` when absent.
    pub fn resolve_input(&self, fallback: Option<&str>) -> Result<ChannelSpec> {
        match self.input_spec.as_deref().or(fallback) {
            Some(s) => s.parse(),
            None => Err(Error::config("input_spec", "not given in the spec file or on the command line")),
        }
    }
}
