//! Counter-keyed dropout.
//!
//! The keep decision for element `(b, v, c)` hashes the seed, the batch row,
//! the row's valid-step index `v` and the flat channel index. Draws therefore
//! do not depend on how the stream is cut into blocks, nor on how many
//! invalid steps precede the data.

use serde::{Deserialize, Serialize};

use super::{require_f32, BuildLayer};
use crate::error::Result;
use crate::layer::{finish, impl_meta, BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties, State};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) for one element.
pub fn uniform_key(seed: u64, row: u64, index: u64, channel: u64) -> f64 {
    let h = splitmix(splitmix(splitmix(seed ^ splitmix(row)) ^ index) ^ channel);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug)]
pub struct Dropout {
    meta: LayerMeta,
    rate: f32,
    seed: u64,
}

impl Dropout {
    /// Applies dropout, advancing `counts` (valid steps seen per row).
    fn apply(&self, x: &Sequence, seed: u64, counts: &mut [i32]) -> Result<Sequence> {
        let (batch, time, width) = (x.batch(), x.time(), x.step_width());
        let v = x.values().as_f32()?;
        let mask = x.mask_slice();
        let scale = 1.0 / (1.0 - self.rate);
        let mut out = Vec::with_capacity(v.len());
        for b in 0..batch {
            for t in 0..time {
                let index = counts[b] as u64;
                let base = (b * time + t) * width;
                for c in 0..width {
                    let keep = uniform_key(seed, b as u64, index, c as u64) >= self.rate as f64;
                    out.push(if keep { v[base + c] * scale } else { 0.0 });
                }
                if mask[b * time + t] {
                    counts[b] += 1;
                }
            }
        }
        Ok(x.with_values(Tensor::new(x.values().shape().to_vec(), TensorData::F32(out))?, x.is_masked()))
    }
}

impl Layer for Dropout {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        if !training || self.rate == 0.0 {
            return Ok((x.clone(), Emits::Empty));
        }
        let mut counts = vec![0; x.batch()];
        Ok((self.apply(x, self.seed, &mut counts)?, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(State::Tuple(vec![
            State::RngCounter {
                seed: self.seed,
                offset: 0,
            },
            State::Tensor(Tensor::from_i32(vec![batch], vec![0; batch])?),
        ]))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let name = self.name();
        let mut parts = state.into_tuple(2, name)?.into_iter();
        let (seed, offset) = parts.next().expect("two parts").into_rng(name)?;
        let counts_t = parts.next().expect("two parts").into_tensor(name)?;
        let mut counts = counts_t.as_i32()?.to_vec();
        if counts.len() != x.batch() {
            return Err(crate::Error::StateMismatch(name.to_string()));
        }
        let y = if training && self.rate > 0.0 {
            self.apply(x, seed, &mut counts)?
        } else {
            // Counting continues in eval mode so a stream may switch modes.
            for b in 0..x.batch() {
                counts[b] += x.mask_slice()[b * x.time()..(b + 1) * x.time()]
                    .iter()
                    .filter(|&&m| m)
                    .count() as i32;
            }
            x.clone()
        };
        let state = State::Tuple(vec![
            State::RngCounter {
                seed,
                offset: offset + x.time() as u64,
            },
            State::Tensor(Tensor::from_i32(vec![x.batch()], counts)?),
        ]);
        Ok((y, state, Emits::Empty))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub rate: f32,
    /// Defaults to a seed derived from the build seed and the layer path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BuildLayer for DropoutConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "Dropout")?;
        if !(0.0..1.0).contains(&self.rate) {
            return Err(ctx.error("rate", format!("{} is outside [0, 1)", self.rate)));
        }
        Ok(finish(Dropout {
            meta: LayerMeta::new("dropout", ctx, input.clone(), input.clone()),
            rate: self.rate,
            seed: self.seed.unwrap_or_else(|| ctx.derived_seed()),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Scalar;

    fn layer(rate: f32) -> Box<dyn Layer> {
        let cfg = DropoutConfig { name: None, rate, seed: Some(11) };
        cfg.build(&ChannelSpec::f32(vec![8]), &mut BuildCtx::random(0)).unwrap()
    }

    #[test]
    fn identity_when_disabled() {
        let x = Sequence::from_values(Tensor::full(&[2, 5, 8], Scalar::F32(1.5))).unwrap();
        let c = Constants::new();
        assert_eq!(layer(0.5).layer(&x, false, &c).unwrap(), x);
        assert_eq!(layer(0.0).layer(&x, true, &c).unwrap(), x);
    }

    #[test]
    fn keeps_about_half_and_rescales() {
        let x = Sequence::from_values(Tensor::full(&[4, 64, 8], Scalar::F32(1.0))).unwrap();
        let y = layer(0.5).layer(&x, true, &Constants::new()).unwrap();
        let v = y.values().as_f32().unwrap();
        assert!(v.iter().all(|&a| a == 0.0 || a == 2.0));
        let kept = v.iter().filter(|&&a| a == 2.0).count() as f64 / v.len() as f64;
        assert!((kept - 0.5).abs() < 0.05, "kept fraction {kept}");
    }

    #[test]
    fn rejects_rate_one() {
        let cfg = DropoutConfig { name: None, rate: 1.0, seed: None };
        let err = cfg.build(&ChannelSpec::f32(vec![2]), &mut BuildCtx::random(0)).unwrap_err();
        assert!(err.to_string().contains("rate"));
    }
}
