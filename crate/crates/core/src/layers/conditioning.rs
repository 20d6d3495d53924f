//! Time-synchronized conditioning from a sequence constant.
//!
//! The `k`-th valid step of each input row is combined with step `k` of the
//! same row of the conditioning sequence. Step mode keeps the per-row valid
//! count in its state.

use serde::{Deserialize, Serialize};

use super::{require_f32, BuildLayer};
use crate::error::{Error, Result};
use crate::layer::{finish, impl_meta, BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties, State};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineKind {
    Add,
    Concat,
}

#[derive(Debug)]
pub struct Conditioning {
    meta: LayerMeta,
    key: String,
    mode: CombineKind,
    cond_spec: ChannelSpec,
}

impl Conditioning {
    fn apply(&self, x: &Sequence, constants: &Constants, counts: &mut [i32]) -> Result<Sequence> {
        let cond = constants.sequence(&self.key)?;
        if cond.channel_spec() != self.cond_spec || cond.batch() != x.batch() {
            return Err(Error::SpecMismatch {
                layer: self.meta.path.clone(),
                expected: format!("batch {} {}", x.batch(), self.cond_spec),
                actual: format!("batch {} {}", cond.batch(), cond.channel_spec()),
            });
        }
        let cond = cond.mask_invalid();
        let cv = cond.values().as_f32()?;
        let cmask = cond.mask_slice();
        let xv = x.values().as_f32()?;
        let xmask = x.mask_slice();
        let (batch, time, ct) = (x.batch(), x.time(), cond.time());
        let (xw, cw) = (x.step_width(), cond.step_width());
        let ow = self.meta.output_spec.num_elements();
        let mut out = Vec::with_capacity(batch * time * ow);
        let mut mask = Vec::with_capacity(batch * time);
        for b in 0..batch {
            for t in 0..time {
                let xs = &xv[(b * time + t) * xw..(b * time + t + 1) * xw];
                let valid = xmask[b * time + t];
                let k = counts[b] as usize;
                let cs: Option<&[f32]> = if valid {
                    if k >= ct {
                        return Err(Error::invalid(format!(
                            "conditioning `{}` has {ct} steps, row {b} needs step {k}",
                            self.key
                        )));
                    }
                    counts[b] += 1;
                    Some(&cv[(b * ct + k) * cw..(b * ct + k + 1) * cw])
                } else {
                    None
                };
                mask.push(valid && cmask[b * ct + k]);
                match self.mode {
                    CombineKind::Add => match cs {
                        Some(cs) => out.extend(xs.iter().zip(cs).map(|(a, c)| a + c)),
                        None => out.extend_from_slice(xs),
                    },
                    CombineKind::Concat => {
                        // Interleave along the last axis.
                        let (xl, cl) = (self.meta.input_spec.last_dim(), self.cond_spec.last_dim());
                        for r in 0..xw / xl.max(1) {
                            out.extend_from_slice(&xs[r * xl..(r + 1) * xl]);
                            match cs {
                                Some(cs) => out.extend_from_slice(&cs[r * cl..(r + 1) * cl]),
                                None => out.extend(std::iter::repeat_n(0.0, cl)),
                            }
                        }
                    }
                }
            }
        }
        let mut shape = vec![batch, time];
        shape.extend(&self.meta.output_spec.shape);
        Sequence::new(
            Tensor::new(shape, TensorData::F32(out))?,
            Tensor::from_bool(vec![batch, time], mask)?,
        )
    }
}

impl Layer for Conditioning {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, constants: &Constants) -> Result<(Sequence, Emits)> {
        let mut counts = vec![0; x.batch()];
        Ok((self.apply(x, constants, &mut counts)?, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(State::Tensor(Tensor::from_i32(vec![batch], vec![0; batch])?))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        _training: bool,
        constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let mut counts = state.into_tensor(self.name())?.as_i32()?.to_vec();
        if counts.len() != x.batch() {
            return Err(Error::StateMismatch(self.name().to_string()));
        }
        let y = self.apply(x, constants, &mut counts)?;
        let state = State::Tensor(Tensor::from_i32(vec![x.batch()], counts)?);
        Ok((y, state, Emits::Empty))
    }

    fn required_constants(&self) -> Vec<(String, ChannelSpec)> {
        vec![(self.key.clone(), self.cond_spec.clone())]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Constants key holding the conditioning sequence.
    pub key: String,
    pub mode: CombineKind,
    /// Last-axis extent of the conditioning channels. Defaults to the
    /// input's; `add` requires them equal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
}

impl BuildLayer for ConditioningConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "Conditioning")?;
        if input.shape.is_empty() {
            return Err(ctx.error("", format!("Conditioning needs a channel axis, got {input}")));
        }
        let channels = self.channels.unwrap_or(input.last_dim());
        let mut cond_shape = input.shape.clone();
        *cond_shape.last_mut().expect("non-empty") = channels;
        let out_shape = match self.mode {
            CombineKind::Add => {
                if channels != input.last_dim() {
                    return Err(ctx.error("channels", "add requires matching channels"));
                }
                input.shape.clone()
            }
            CombineKind::Concat => {
                let mut s = input.shape.clone();
                *s.last_mut().expect("non-empty") += channels;
                s
            }
        };
        Ok(finish(Conditioning {
            meta: LayerMeta::new("conditioning", ctx, input.clone(), ChannelSpec::f32(out_shape)),
            key: self.key.clone(),
            mode: self.mode,
            cond_spec: ChannelSpec::f32(cond_shape),
        }))
    }
}
