//! Time resampling and shifting: Upsample1D, Downsample1D, Delay, Lookahead.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::{require_positive, BuildLayer};
use crate::error::{Error, Result};
use crate::layer::{
    finish, impl_meta, stateless_step, BuildCtx, Constants, Emits, Interval, Layer, LayerMeta,
    LayerProperties, ReceptiveField, State,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub length: usize,
}

/// Repeats every step `rate` times.
#[derive(Debug)]
pub struct Upsample1D {
    meta: LayerMeta,
    rate: usize,
}

impl Layer for Upsample1D {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties {
            output_ratio: Rational64::from_integer(self.rate as i64),
            receptive_field: ReceptiveField::new(vec![Some(Interval::point(0)); self.rate]),
            ..LayerProperties::pointwise()
        }
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let index: Vec<usize> = (0..x.time() * self.rate).map(|t| t / self.rate).collect();
        Ok((x.select_time(&index)?, Emits::Empty))
    }

    stateless_step!();
}

/// Keeps every `rate`-th step, starting with the first.
#[derive(Debug)]
pub struct Downsample1D {
    meta: LayerMeta,
    rate: usize,
}

impl Layer for Downsample1D {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties {
            output_ratio: Rational64::new(1, self.rate as i64),
            block_size: self.rate,
            ..LayerProperties::pointwise()
        }
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let index: Vec<usize> = (0..x.time()).step_by(self.rate).collect();
        Ok((x.select_time(&index)?, Emits::Empty))
    }

    stateless_step!();
}

impl BuildLayer for (bool, &RateConfig) {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let (up, cfg) = *self;
        require_positive(ctx, "rate", cfg.rate)?;
        Ok(if up {
            finish(Upsample1D {
                meta: LayerMeta::new("upsample1d", ctx, input.clone(), input.clone()),
                rate: cfg.rate,
            })
        } else {
            finish(Downsample1D {
                meta: LayerMeta::new("downsample1d", ctx, input.clone(), input.clone()),
                rate: cfg.rate,
            })
        })
    }
}

/// Shifts the sequence later in time by `length` invalid steps. An output
/// step is valid only where the input step at the same position is valid
/// too, so the delayed data never runs past the end of its row. Without
/// that, step mode would flush valid steps that layer mode has cut off.
#[derive(Debug)]
pub struct Delay {
    meta: LayerMeta,
    length: usize,
}

impl Layer for Delay {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        let n = -(self.length as i64);
        LayerProperties {
            receptive_field: ReceptiveField::uniform(Interval::point(n)),
            ..LayerProperties::pointwise()
        }
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let y = x.pad_time(self.length, 0, false).slice_time(0, x.time())?;
        Ok((clip_to(&y, x)?, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(State::Buffer(Sequence::invalid(batch, self.length, &self.meta.input_spec)))
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
        let joined = Sequence::concatenate(&[buffer, x.clone()])?;
        let y = joined.slice_time(0, x.time())?;
        let next = joined.slice_time(x.time(), joined.time())?;
        Ok((clip_to(&y, x)?, State::Buffer(next), Emits::Empty))
    }
}

/// `y` with its mask intersected with the mask of `x`.
fn clip_to(y: &Sequence, x: &Sequence) -> Result<Sequence> {
    let mask = y.mask_slice().iter().zip(x.mask_slice()).map(|(&a, &b)| a && b).collect();
    let mask = Tensor::from_bool(vec![x.batch(), x.time()], mask)?;
    Ok(Sequence::new(y.values().clone(), mask)?.mask_invalid())
}

/// Reads `length` steps ahead. Step mode emits its input unchanged but
/// marks the first `length` stream positions invalid, which realizes the
/// shift as output latency.
#[derive(Debug)]
pub struct Lookahead {
    meta: LayerMeta,
    length: usize,
}

impl Layer for Lookahead {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties {
            output_latency: self.length,
            receptive_field: ReceptiveField::uniform(Interval::point(self.length as i64)),
            position_sensitive: true,
            ..LayerProperties::pointwise()
        }
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let start = self.length.min(x.time());
        let y = x.slice_time(start, x.time())?.pad_time(0, start, false);
        Ok((y, Emits::Empty))
    }

    fn make_state(&self, _batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(State::Tensor(Tensor::from_i32(vec![], vec![0])?))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        _training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let position = state.into_tensor(self.name())?.as_i32()?[0] as usize;
        let (batch, time) = (x.batch(), x.time());
        let m = x.mask_slice();
        let mask = (0..batch * time)
            .map(|i| m[i] && position + i % time >= self.length)
            .collect();
        let y = Sequence::new(x.values().clone(), Tensor::from_bool(vec![batch, time], mask)?)?;
        let next = (position + time).min(self.length) as i32;
        Ok((y, State::Tensor(Tensor::from_i32(vec![], vec![next])?), Emits::Empty))
    }
}

impl BuildLayer for (bool, &ShiftConfig) {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let (ahead, cfg) = *self;
        Ok(if ahead {
            finish(Lookahead {
                meta: LayerMeta::new("lookahead", ctx, input.clone(), input.clone()),
                length: cfg.length,
            })
        } else {
            finish(Delay {
                meta: LayerMeta::new("delay", ctx, input.clone(), input.clone()),
                length: cfg.length,
            })
        })
    }
}
