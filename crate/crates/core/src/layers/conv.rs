//! Strided sliding-window layers: Conv1D and 1D pooling.
//!
//! Output `t` reads the window starting at input `t * stride - left` and is
//! valid iff input `t * stride` is valid. Step mode prepends a buffer of
//! `latency * stride + left` past inputs to each block, so both modes call
//! the same kernel on identically laid out data.

use std::collections::BTreeMap;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::{default_true, require_f32, require_positive, require_rank, BuildLayer};
use crate::error::Result;
use crate::exec;
use crate::layer::{
    finish, impl_meta, BuildCtx, Constants, Emits, Interval, Layer, LayerMeta, LayerProperties,
    ReceptiveField, State,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Causal,
    ReverseCausal,
    Same,
}

/// Window geometry shared by every strided sliding-window layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Windowing {
    /// Input steps covered by one window.
    pub span: usize,
    pub stride: usize,
    /// Window start relative to the anchor, as a non-negative offset back.
    pub left: usize,
}

impl Windowing {
    pub fn for_padding(span: usize, stride: usize, padding: Padding) -> Windowing {
        let left = match padding {
            Padding::Causal => span - 1,
            Padding::ReverseCausal => 0,
            Padding::Same => (span - 1) / 2,
        };
        Windowing { span, stride, left }
    }

    pub fn right(&self) -> usize {
        self.span - 1 - self.left
    }

    /// Output steps by which step mode trails layer mode.
    pub fn latency(&self) -> usize {
        (self.right() + self.stride) / self.stride - 1
    }

    /// Past inputs kept between steps.
    pub fn buffer_len(&self) -> usize {
        self.latency() * self.stride + self.left
    }

    pub fn properties(&self) -> LayerProperties {
        LayerProperties {
            output_ratio: Rational64::new(1, self.stride as i64),
            block_size: self.stride,
            output_latency: self.latency(),
            receptive_field: ReceptiveField::uniform(Interval::new(
                -(self.left as i64),
                self.right() as i64,
            )),
            ..LayerProperties::pointwise()
        }
    }

    /// Pads a whole sequence so output `t`'s window starts at `t * stride`.
    /// Returns the padded input and the number of outputs.
    pub fn layer_input(&self, x: &Sequence) -> (Sequence, usize) {
        let t = x.time();
        let n_out = t.div_ceil(self.stride);
        let back = if n_out == 0 {
            0
        } else {
            ((n_out - 1) * self.stride + self.span).saturating_sub(self.left + t)
        };
        (x.pad_time(self.left, back, false), n_out)
    }

    pub fn initial_buffer(&self, batch: usize, spec: &ChannelSpec) -> State {
        State::Buffer(Sequence::invalid(batch, self.buffer_len(), spec))
    }

    /// Joins the buffer with a block. Returns the joined input, the number
    /// of outputs, and the next buffer.
    pub fn step_input(&self, buffer: &Sequence, block: &Sequence) -> Result<(Sequence, usize, State)> {
        let joined = Sequence::concatenate(&[buffer.clone(), block.clone()])?;
        let keep = self.buffer_len();
        let next = joined.slice_time(joined.time() - keep, joined.time())?;
        Ok((joined, block.time() / self.stride, State::Buffer(next)))
    }

    /// Output mask: valid iff the anchor input is valid.
    pub fn output_mask(&self, joined: &Sequence, n_out: usize) -> Tensor {
        let (b, t) = (joined.batch(), joined.time());
        let m = joined.mask_slice();
        let mask = (0..b)
            .flat_map(|row| (0..n_out).map(move |j| m[row * t + j * self.stride + self.left]))
            .collect();
        Tensor::from_bool(vec![b, n_out], mask).expect("mask shape")
    }
}

/// Shared step driver for window layers. `kernel` maps a joined input and
/// an output count to the output sequence.
fn window_step(
    w: &Windowing,
    name: &str,
    x: &Sequence,
    state: State,
    masked_input: bool,
    kernel: impl Fn(&Sequence, usize) -> Result<Sequence>,
) -> Result<(Sequence, State, Emits)> {
    let buffer = state.into_buffer(name)?;
    if buffer.batch() != x.batch() {
        return Err(crate::Error::StateMismatch(name.to_string()));
    }
    let block = if masked_input { x.mask_invalid() } else { x.clone() };
    let (joined, n_out, next) = w.step_input(&buffer, &block)?;
    Ok((kernel(&joined, n_out)?, next, Emits::Empty))
}

#[derive(Debug)]
pub struct Conv1D {
    meta: LayerMeta,
    window: Windowing,
    dilation: usize,
    kernel_size: usize,
    /// `[kernel_size, in, filters]`
    kernel: Tensor,
    bias: Option<Tensor>,
}

impl Conv1D {
    fn compute(&self, joined: &Sequence, n_out: usize) -> Result<Sequence> {
        let (batch, t) = (joined.batch(), joined.time());
        let cin = joined.step_width();
        let filters = self.meta.output_spec.last_dim();
        let x = joined.values().as_f32()?;
        let w = self.kernel.as_f32()?;
        let bias = self.bias.as_ref().map(|b| b.as_f32()).transpose()?;
        let stride = self.window.stride;
        let work = batch * n_out * self.kernel_size * cin * filters;
        let rows = exec::map_range(batch * n_out, work > 1 << 15, |r| {
            let (b, j) = (r / n_out, r % n_out);
            let mut acc = vec![0.0f32; filters];
            for tap in 0..self.kernel_size {
                let pos = j * stride + tap * self.dilation;
                let xs = &x[(b * t + pos) * cin..(b * t + pos + 1) * cin];
                for (c, &xv) in xs.iter().enumerate() {
                    let ws = &w[(tap * cin + c) * filters..(tap * cin + c + 1) * filters];
                    for (a, &wv) in acc.iter_mut().zip(ws) {
                        *a += xv * wv;
                    }
                }
            }
            if let Some(bias) = bias {
                for (a, &bv) in acc.iter_mut().zip(bias) {
                    *a += bv;
                }
            }
            acc
        });
        let values = Tensor::new(vec![batch, n_out, filters], TensorData::F32(rows.concat()))?;
        Sequence::new(values, self.window.output_mask(joined, n_out))
    }
}

impl Layer for Conv1D {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        self.window.properties()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let (padded, n_out) = self.window.layer_input(&x.mask_invalid());
        Ok((self.compute(&padded, n_out)?, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(self.window.initial_buffer(batch, &self.meta.input_spec))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        _training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        window_step(&self.window, self.name(), x, state, true, |j, n| self.compute(j, n))
    }

    fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert(self.meta.param_name("kernel"), self.kernel.clone());
        if let Some(b) = &self.bias {
            out.insert(self.meta.param_name("bias"), b.clone());
        }
        out
    }
}

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conv1DConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub filters: usize,
    pub kernel_size: usize,
    #[serde(default = "default_one", alias = "strides")]
    pub stride: usize,
    #[serde(default = "default_one", alias = "dilation_rate")]
    pub dilation: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

impl BuildLayer for Conv1DConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "Conv1D")?;
        require_rank(ctx, input, 1, "Conv1D")?;
        require_positive(ctx, "filters", self.filters)?;
        require_positive(ctx, "kernel_size", self.kernel_size)?;
        require_positive(ctx, "stride", self.stride)?;
        require_positive(ctx, "dilation", self.dilation)?;
        let span = (self.kernel_size - 1) * self.dilation + 1;
        let kernel = ctx.param("kernel", &[self.kernel_size, input.last_dim(), self.filters])?;
        let bias = if self.use_bias {
            Some(ctx.param("bias", &[self.filters])?)
        } else {
            None
        };
        Ok(finish(Conv1D {
            meta: LayerMeta::new("conv1d", ctx, input.clone(), ChannelSpec::f32(vec![self.filters])),
            window: Windowing::for_padding(span, self.stride, self.padding),
            dilation: self.dilation,
            kernel_size: self.kernel_size,
            kernel,
            bias,
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Average,
    Min,
}

/// Reduction over the valid members of each window. A window with no valid
/// member yields zero at an invalid output step.
#[derive(Debug)]
pub struct Pooling1D {
    meta: LayerMeta,
    kind: PoolKind,
    window: Windowing,
}

impl Pooling1D {
    fn compute(&self, joined: &Sequence, n_out: usize) -> Result<Sequence> {
        let (batch, t, width) = (joined.batch(), joined.time(), joined.step_width());
        let x = joined.values().as_f32()?;
        let m = joined.mask_slice();
        let mut out = Vec::with_capacity(batch * n_out * width);
        for b in 0..batch {
            for j in 0..n_out {
                for c in 0..width {
                    let mut acc: Option<f32> = None;
                    let mut count = 0usize;
                    for i in 0..self.window.span {
                        let pos = b * t + j * self.window.stride + i;
                        if !m[pos] {
                            continue;
                        }
                        let v = x[pos * width + c];
                        count += 1;
                        acc = Some(match (acc, self.kind) {
                            (None, _) => v,
                            (Some(a), PoolKind::Max) => a.max(v),
                            (Some(a), PoolKind::Min) => a.min(v),
                            (Some(a), PoolKind::Average) => a + v,
                        });
                    }
                    out.push(match (acc, self.kind) {
                        (None, _) => 0.0,
                        (Some(a), PoolKind::Average) => a / count as f32,
                        (Some(a), _) => a,
                    });
                }
            }
        }
        let mut shape = vec![batch, n_out];
        shape.extend(&self.meta.output_spec.shape);
        Sequence::new(
            Tensor::new(shape, TensorData::F32(out))?,
            self.window.output_mask(joined, n_out),
        )
    }
}

impl Layer for Pooling1D {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        self.window.properties()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let (padded, n_out) = self.window.layer_input(x);
        Ok((self.compute(&padded, n_out)?, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(self.window.initial_buffer(batch, &self.meta.input_spec))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        _training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        window_step(&self.window, self.name(), x, state, false, |j, n| self.compute(j, n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pooling1DConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub pool_size: usize,
    #[serde(default = "default_one", alias = "strides")]
    pub stride: usize,
    #[serde(default)]
    pub padding: Padding,
}

pub struct PoolingSpec<'a>(pub PoolKind, pub &'a Pooling1DConfig);

impl BuildLayer for PoolingSpec<'_> {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let (kind, cfg) = (self.0, self.1);
        require_f32(ctx, input, "Pooling1D")?;
        require_positive(ctx, "pool_size", cfg.pool_size)?;
        require_positive(ctx, "stride", cfg.stride)?;
        let kind_name = match kind {
            PoolKind::Max => "max_pooling1d",
            PoolKind::Average => "average_pooling1d",
            PoolKind::Min => "min_pooling1d",
        };
        Ok(finish(Pooling1D {
            meta: LayerMeta::new(kind_name, ctx, input.clone(), input.clone()),
            kind,
            window: Windowing::for_padding(cfg.pool_size, cfg.stride, cfg.padding),
        }))
    }
}
