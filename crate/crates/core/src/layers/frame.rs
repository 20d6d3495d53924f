//! Framing and window functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::conv::{Padding, Windowing};
use super::{default_true, require_f32, require_positive, BuildLayer};
use crate::error::{Error, Result};
use crate::layer::{
    finish, impl_meta, stateless_step, BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties, State,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

/// Splits the stream into frames of `frame_length` steps every
/// `frame_step` steps. Output channels are `[frame_length, ...input]`.
/// Invalid input steps appear as zeros inside a frame.
#[derive(Debug)]
pub struct Frame {
    meta: LayerMeta,
    window: Windowing,
}

impl Frame {
    fn compute(&self, joined: &Sequence, n_out: usize) -> Result<Sequence> {
        let (batch, t, width) = (joined.batch(), joined.time(), joined.step_width());
        let x = joined.values().as_f32()?;
        let (span, stride) = (self.window.span, self.window.stride);
        let mut out = Vec::with_capacity(batch * n_out * span * width);
        for b in 0..batch {
            for j in 0..n_out {
                let start = (b * t + j * stride) * width;
                out.extend_from_slice(&x[start..start + span * width]);
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

impl Layer for Frame {
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
        let buffer = state.into_buffer(self.name())?;
        if buffer.batch() != x.batch() {
            return Err(Error::StateMismatch(self.name().to_string()));
        }
        let (joined, n_out, next) = self.window.step_input(&buffer, &x.mask_invalid())?;
        Ok((self.compute(&joined, n_out)?, next, Emits::Empty))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub frame_length: usize,
    pub frame_step: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl BuildLayer for FrameConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "Frame")?;
        require_positive(ctx, "frame_length", self.frame_length)?;
        require_positive(ctx, "frame_step", self.frame_step)?;
        if self.frame_step > self.frame_length {
            return Err(ctx.error("frame_step", "must not exceed frame_length"));
        }
        let left = match self.padding {
            Padding::Causal => self.frame_length - self.frame_step,
            Padding::ReverseCausal => 0,
            Padding::Same => return Err(ctx.error("padding", "Frame supports causal or reverse_causal")),
        };
        let mut out_shape = vec![self.frame_length];
        out_shape.extend(&input.shape);
        Ok(finish(Frame {
            meta: LayerMeta::new("frame", ctx, input.clone(), ChannelSpec::f32(out_shape)),
            window: Windowing {
                span: self.frame_length,
                stride: self.frame_step,
                left,
            },
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    Hamming,
    Rectangular,
}

/// Window curve of `length` points. Periodic windows have period `length`;
/// symmetric ones have equal endpoints.
pub fn window_curve(kind: WindowKind, length: usize, periodic: bool) -> Vec<f32> {
    let denom = if periodic { length } else { length.saturating_sub(1) }.max(1) as f64;
    (0..length)
        .map(|i| {
            let c = (2.0 * PI * i as f64 / denom).cos();
            (match kind {
                WindowKind::Hann => 0.5 - 0.5 * c,
                WindowKind::Hamming => 0.54 - 0.46 * c,
                WindowKind::Rectangular => 1.0,
            }) as f32
        })
        .collect()
}

/// Multiplies channels by a window curve along one channel axis.
#[derive(Debug)]
pub struct Window {
    meta: LayerMeta,
    /// Curve broadcast to the full channel shape.
    weights: Vec<f32>,
}

impl Layer for Window {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let y = x.apply_values(
            |v| {
                let data = v
                    .as_f32()?
                    .chunks(self.weights.len().max(1))
                    .flat_map(|row| row.iter().zip(&self.weights).map(|(a, w)| a * w))
                    .collect();
                Tensor::new(v.shape().to_vec(), TensorData::F32(data))
            },
            true,
        )?;
        Ok((y, Emits::Empty))
    }

    stateless_step!();
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_window")]
    pub window: WindowKind,
    /// Channel axis the curve runs along.
    #[serde(default)]
    pub axis: i64,
    #[serde(default = "default_true")]
    pub periodic: bool,
}

fn default_window() -> WindowKind {
    WindowKind::Hann
}

impl BuildLayer for WindowConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "Window")?;
        let rank = input.shape.len() as i64;
        let axis = if self.axis < 0 { self.axis + rank } else { self.axis };
        if !(0..rank).contains(&axis) {
            return Err(ctx.error("axis", format!("{} is out of range for {input}", self.axis)));
        }
        let axis = axis as usize;
        let curve = window_curve(self.window, input.shape[axis], self.periodic);
        let inner: usize = input.shape[axis + 1..].iter().product();
        let outer: usize = input.shape[..axis].iter().product();
        let weights = (0..outer)
            .flat_map(|_| curve.iter().flat_map(|&w| std::iter::repeat_n(w, inner)))
            .collect();
        Ok(finish(Window {
            meta: LayerMeta::new("window", ctx, input.clone(), input.clone()),
            weights,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_closed_form() {
        let w = window_curve(WindowKind::Hann, 4, true);
        let expected = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7);
        }
        let s = window_curve(WindowKind::Hann, 5, false);
        assert!(s[0].abs() < 1e-7 && s[4].abs() < 1e-7 && (s[2] - 1.0).abs() < 1e-7);
        assert!((s[1] - s[3]).abs() < 1e-7);
    }

    #[test]
    fn causal_frame_layout() {
        let cfg = FrameConfig { name: None, frame_length: 3, frame_step: 1, padding: Padding::Causal };
        let layer = cfg.build(&ChannelSpec::f32(vec![]), &mut BuildCtx::random(0)).unwrap();
        assert_eq!(layer.output_spec(), &ChannelSpec::f32(vec![3]));
        let x = Sequence::from_values(Tensor::from_f32(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let y = layer.layer(&x, false, &Constants::new()).unwrap();
        assert_eq!(
            y.values().as_f32().unwrap(),
            &[0.0, 0.0, 1.0, 0.0, 1.0, 2.0, 1.0, 2.0, 3.0]
        );
    }
}
