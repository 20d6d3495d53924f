//! Upsampling by scatter-add: Conv1DTranspose and OverlapAdd.
//!
//! Both are computed as a gather. Output `j` sums input `c` through kernel
//! tap `j + shift - c * stride` when that tap exists. Layer mode uses
//! `shift = offset`; step mode prepends `history` past inputs and uses
//! `shift = history * stride`. Output `j` is valid iff input
//! `floor((j + shift - offset) / stride)` is.

use std::collections::BTreeMap;

use num_integer::Integer;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::conv::Padding;
use super::{default_true, require_f32, require_positive, require_rank, BuildLayer};
use crate::error::{Error, Result};
use crate::exec;
use crate::layer::{
    finish, impl_meta, BuildCtx, Constants, Emits, Interval, Layer, LayerMeta, LayerProperties,
    ReceptiveField, State,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Scatter {
    taps: usize,
    stride: usize,
    /// Output steps by which the kernel is shifted back.
    offset: usize,
}

impl Scatter {
    fn history(&self) -> usize {
        ((self.taps - 1) / self.stride).max(self.offset.div_ceil(self.stride))
    }

    fn properties(&self) -> LayerProperties {
        let (k, s, off) = (self.taps as i64, self.stride as i64, self.offset as i64);
        let per_step = (0..s)
            .map(|j| {
                let lo = Integer::div_ceil(&(j + off - k + 1), &s);
                let hi = Integer::div_floor(&(j + off), &s);
                (lo <= hi).then(|| Interval::new(lo, hi))
            })
            .collect();
        LayerProperties {
            output_ratio: Rational64::from_integer(s),
            block_size: 1,
            output_latency: self.offset,
            receptive_field: ReceptiveField::new(per_step),
            ..LayerProperties::pointwise()
        }
    }

    /// Runs the gather over `joined` (masked), producing `n_out` outputs of
    /// width `out_width`. `accumulate(acc, input_step, tap)` adds one term.
    fn gather(
        &self,
        joined: &Sequence,
        n_out: usize,
        shift: usize,
        out_width: usize,
        accumulate: impl Fn(&mut [f32], &[f32], usize) + Sync + Send,
        finalize: impl Fn(&mut [f32]) + Sync + Send,
    ) -> Result<(Vec<f32>, Tensor)> {
        let (batch, nc, width) = (joined.batch(), joined.time(), joined.step_width());
        let x = joined.values().as_f32()?;
        let m = joined.mask_slice();
        let (k, s) = (self.taps as i64, self.stride as i64);
        let rows = exec::map_range(batch * n_out, batch * n_out * width * out_width > 1 << 15, |r| {
            let (b, j) = (r / n_out, (r % n_out) as i64);
            let pos = j + shift as i64;
            let lo = Integer::div_ceil(&(pos - k + 1), &s).max(0);
            let hi = Integer::div_floor(&pos, &s).min(nc as i64 - 1);
            let mut acc = vec![0.0f32; out_width];
            for c in lo..=hi {
                let c = c as usize;
                let xs = &x[(b * nc + c) * width..(b * nc + c + 1) * width];
                accumulate(&mut acc, xs, (pos - c as i64 * s) as usize);
            }
            finalize(&mut acc);
            acc
        });
        let mask = (0..batch * n_out)
            .map(|r| {
                let (b, j) = (r / n_out, (r % n_out) as i64);
                let mi = Integer::div_floor(&(j + shift as i64 - self.offset as i64), &s);
                (0..nc as i64).contains(&mi) && m[b * nc + mi as usize]
            })
            .collect();
        Ok((rows.concat(), Tensor::from_bool(vec![batch, n_out], mask)?))
    }

    fn layer_shift(&self) -> usize {
        self.offset
    }

    fn initial_state(&self, batch: usize, spec: &ChannelSpec) -> State {
        State::Buffer(Sequence::invalid(batch, self.history(), spec))
    }

    /// Joins history and block, returning the joined input, the gather
    /// shift and the next history.
    fn step_input(&self, state: State, x: &Sequence, name: &str) -> Result<(Sequence, usize, State)> {
        let history = state.into_buffer(name)?;
        if history.batch() != x.batch() {
            return Err(Error::StateMismatch(name.to_string()));
        }
        let joined = Sequence::concatenate(&[history, x.mask_invalid()])?;
        let h = self.history();
        let next = joined.slice_time(joined.time() - h, joined.time())?;
        Ok((joined, h * self.stride, State::Buffer(next)))
    }
}

fn output_sequence(batch: usize, n_out: usize, channel: &[usize], data: Vec<f32>, mask: Tensor) -> Result<Sequence> {
    let mut shape = vec![batch, n_out];
    shape.extend(channel);
    Sequence::new(Tensor::new(shape, TensorData::F32(data))?, mask)
}

#[derive(Debug)]
pub struct Conv1DTranspose {
    meta: LayerMeta,
    scatter: Scatter,
    /// `[kernel_size, in, filters]`
    kernel: Tensor,
    bias: Option<Tensor>,
}

impl Conv1DTranspose {
    fn compute(&self, joined: &Sequence, n_out: usize, shift: usize) -> Result<Sequence> {
        let cin = joined.step_width();
        let filters = self.meta.output_spec.last_dim();
        let w = self.kernel.as_f32()?;
        let bias = self.bias.as_ref().map(|b| b.as_f32()).transpose()?;
        let (data, mask) = self.scatter.gather(
            joined,
            n_out,
            shift,
            filters,
            |acc, xs, tap| {
                for (c, &xv) in xs.iter().enumerate() {
                    let ws = &w[(tap * cin + c) * filters..(tap * cin + c + 1) * filters];
                    for (a, &wv) in acc.iter_mut().zip(ws) {
                        *a += xv * wv;
                    }
                }
            },
            |acc| {
                if let Some(bias) = bias {
                    for (a, &bv) in acc.iter_mut().zip(bias) {
                        *a += bv;
                    }
                }
            },
        )?;
        output_sequence(joined.batch(), n_out, &[filters], data, mask)
    }
}

impl Layer for Conv1DTranspose {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        self.scatter.properties()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let n_out = x.time() * self.scatter.stride;
        let y = self.compute(&x.mask_invalid(), n_out, self.scatter.layer_shift())?;
        Ok((y, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(self.scatter.initial_state(batch, &self.meta.input_spec))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        _training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let (joined, shift, next) = self.scatter.step_input(state, x, self.name())?;
        let y = self.compute(&joined, x.time() * self.scatter.stride, shift)?;
        Ok((y, next, Emits::Empty))
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
pub struct Conv1DTransposeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub filters: usize,
    pub kernel_size: usize,
    #[serde(default = "default_one", alias = "strides")]
    pub stride: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

/// Output shift for a transposed convolution. `same` follows the usual
/// convention of padding `k - 1` when the stride exceeds it and
/// `ceil((k + s - 2) / 2)` otherwise.
pub fn transpose_offset(kernel_size: usize, stride: usize, padding: Padding) -> usize {
    let k = kernel_size;
    match padding {
        Padding::Causal => 0,
        Padding::ReverseCausal => k - 1,
        Padding::Same => {
            let pad = if stride > k - 1 { k - 1 } else { (k + stride - 2).div_ceil(2) };
            k - 1 - pad
        }
    }
}

impl BuildLayer for Conv1DTransposeConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "Conv1DTranspose")?;
        require_rank(ctx, input, 1, "Conv1DTranspose")?;
        require_positive(ctx, "filters", self.filters)?;
        require_positive(ctx, "kernel_size", self.kernel_size)?;
        require_positive(ctx, "stride", self.stride)?;
        let kernel = ctx.param("kernel", &[self.kernel_size, input.last_dim(), self.filters])?;
        let bias = if self.use_bias {
            Some(ctx.param("bias", &[self.filters])?)
        } else {
            None
        };
        Ok(finish(Conv1DTranspose {
            meta: LayerMeta::new("conv1d_transpose", ctx, input.clone(), ChannelSpec::f32(vec![self.filters])),
            scatter: Scatter {
                taps: self.kernel_size,
                stride: self.stride,
                offset: transpose_offset(self.kernel_size, self.stride, self.padding),
            },
            kernel,
            bias,
        }))
    }
}

/// Inverse of framing: sums frames of `frame_length` spaced `frame_step`
/// apart. Input channels are `[frame_length, ...]`.
#[derive(Debug)]
pub struct OverlapAdd {
    meta: LayerMeta,
    scatter: Scatter,
}

impl OverlapAdd {
    fn compute(&self, joined: &Sequence, n_out: usize, shift: usize) -> Result<Sequence> {
        let w = self.meta.output_spec.num_elements();
        let (data, mask) = self.scatter.gather(
            joined,
            n_out,
            shift,
            w,
            |acc, xs, tap| {
                for (a, &v) in acc.iter_mut().zip(&xs[tap * w..(tap + 1) * w]) {
                    *a += v;
                }
            },
            |_| {},
        )?;
        output_sequence(joined.batch(), n_out, &self.meta.output_spec.shape, data, mask)
    }
}

impl Layer for OverlapAdd {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        self.scatter.properties()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let n_out = x.time() * self.scatter.stride;
        let y = self.compute(&x.mask_invalid(), n_out, self.scatter.layer_shift())?;
        Ok((y, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(self.scatter.initial_state(batch, &self.meta.input_spec))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        _training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let (joined, shift, next) = self.scatter.step_input(state, x, self.name())?;
        let y = self.compute(&joined, x.time() * self.scatter.stride, shift)?;
        Ok((y, next, Emits::Empty))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapAddConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub frame_length: usize,
    pub frame_step: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl BuildLayer for OverlapAddConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "OverlapAdd")?;
        require_positive(ctx, "frame_length", self.frame_length)?;
        require_positive(ctx, "frame_step", self.frame_step)?;
        if input.shape.first() != Some(&self.frame_length) {
            return Err(ctx.error(
                "frame_length",
                format!("input channels {input} do not start with {}", self.frame_length),
            ));
        }
        if self.frame_step > self.frame_length {
            return Err(ctx.error("frame_step", "must not exceed frame_length"));
        }
        let offset = match self.padding {
            Padding::Causal => self.frame_length - self.frame_step,
            Padding::ReverseCausal => 0,
            Padding::Same => return Err(ctx.error("padding", "OverlapAdd supports causal or reverse_causal")),
        };
        Ok(finish(OverlapAdd {
            meta: LayerMeta::new(
                "overlap_add",
                ctx,
                input.clone(),
                ChannelSpec::f32(input.shape[1..].to_vec()),
            ),
            scatter: Scatter {
                taps: self.frame_length,
                stride: self.frame_step,
                offset,
            },
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_offsets() {
        assert_eq!(transpose_offset(6, 4, Padding::Same), 1);
        assert_eq!(transpose_offset(2, 4, Padding::Same), 0);
        assert_eq!(transpose_offset(3, 1, Padding::Same), 1);
    }

    #[test]
    fn overlap_add_of_ones_counts_frames() {
        let cfg = OverlapAddConfig { name: None, frame_length: 4, frame_step: 2, padding: Padding::ReverseCausal };
        let layer = cfg.build(&ChannelSpec::f32(vec![4]), &mut BuildCtx::random(0)).unwrap();
        let x = Sequence::from_values(Tensor::full(&[1, 3, 4], crate::Scalar::F32(1.0))).unwrap();
        let y = layer.layer(&x, false, &Constants::new()).unwrap();
        assert_eq!(y.values().as_f32().unwrap(), &[1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
