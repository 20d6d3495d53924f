//! Deliberately broken layers, one per contract check. Used to show that
//! each check catches the fault it exists for.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layer::{
    finish, impl_meta, BuildCtx, Constants, Emits, Interval, Layer, LayerMeta, LayerProperties, ReceptiveField,
    State,
};
use crate::layers::{require_f32, BuildLayer};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SabotageKind {
    /// Causal two-tap filter whose step mode drops the previous block.
    ForgetfulConv,
    /// Causal two-tap filter that carries the first step of each block
    /// instead of the last. Correct only at block size 1.
    StaleCarry,
    /// Identity that declares one more output channel than it produces.
    WrongSpec,
    /// Causal three-tap filter declaring a receptive field of (-1, 0).
    MisdeclaredField,
    /// Adds the batch row index to every value.
    RowIndex,
    /// Anticausal two-tap filter that reads invalid steps unmasked.
    LeakyConv,
    /// Emits the input in layer mode and nothing in step mode.
    EmitsDrift,
    /// Dropout drawn from a generator reseeded on every step call.
    StepSeededDropout,
}

impl SabotageKind {
    pub const ALL: [SabotageKind; 8] = [
        SabotageKind::ForgetfulConv,
        SabotageKind::StaleCarry,
        SabotageKind::WrongSpec,
        SabotageKind::MisdeclaredField,
        SabotageKind::RowIndex,
        SabotageKind::LeakyConv,
        SabotageKind::EmitsDrift,
        SabotageKind::StepSeededDropout,
    ];

    /// The check expected to catch this fault.
    pub fn target_check(self) -> &'static str {
        use SabotageKind::*;
        match self {
            ForgetfulConv => "layer_step_equal_1x",
            StaleCarry => "layer_step_equal_2x",
            WrongSpec => "metadata_consistency",
            MisdeclaredField => "receptive_field_empirical",
            RowIndex => "batching_invariance",
            LeakyConv => "padding_invariance",
            EmitsDrift => "emits_consistency",
            StepSeededDropout => "rng_equivalence",
        }
    }

    /// Filter taps and the offset of the first tap.
    fn taps(self) -> (i64, &'static [f32]) {
        match self {
            SabotageKind::ForgetfulConv | SabotageKind::StaleCarry => (-1, &[0.5, 1.0]),
            SabotageKind::MisdeclaredField => (-2, &[0.25, 0.5, 1.0]),
            SabotageKind::LeakyConv => (0, &[1.0, 0.5]),
            _ => (0, &[1.0]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SabotageConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: SabotageKind,
}

#[derive(Debug)]
pub struct Sabotaged {
    meta: LayerMeta,
    fault: SabotageKind,
    seed: u64,
}

impl BuildLayer for SabotageConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "sabotaged")?;
        let mut output = input.clone();
        if self.kind == SabotageKind::WrongSpec {
            let mut shape = output.shape.clone();
            match shape.last_mut() {
                Some(d) => *d += 1,
                None => shape.push(2),
            }
            output = ChannelSpec::f32(shape);
        }
        let meta = LayerMeta::new("sabotaged", ctx, input.clone(), output);
        Ok(finish(Sabotaged {
            meta,
            fault: self.kind,
            seed: ctx.derived_seed(),
        }))
    }
}

/// `y[t] = sum_i taps[i] * x[t + lo + i]` over the given rows, treating
/// out-of-range steps as zero.
fn fir(values: &[f32], batch: usize, time: usize, width: usize, lo: i64, taps: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(batch * time * width);
    for b in 0..batch {
        for t in 0..time {
            for c in 0..width {
                let mut acc = 0.0;
                for (i, w) in taps.iter().enumerate() {
                    let u = t as i64 + lo + i as i64;
                    if (0..time as i64).contains(&u) {
                        acc += w * values[(b * time + u as usize) * width + c];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

impl Sabotaged {
    fn filter(&self, x: &Sequence, from: usize, until: usize) -> Result<Sequence> {
        let (lo, taps) = self.fault.taps();
        let input = if self.fault == SabotageKind::LeakyConv { x.clone() } else { x.mask_invalid() };
        let (batch, time, width) = (x.batch(), x.time(), x.step_width());
        let all = fir(input.values().as_f32()?, batch, time, width, lo, taps);
        let y = Tensor::new(x.values().shape().to_vec(), TensorData::F32(all))?;
        Sequence::new_masked(y, x.mask().clone())?.slice_time(from, until)
    }

    fn dropout(&self, x: &Sequence, seed: u64) -> Result<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = x
            .values()
            .as_f32()?
            .iter()
            .map(|&a| if rng.gen::<f32>() >= 0.5 { 2.0 * a } else { 0.0 })
            .collect();
        Sequence::new_masked(Tensor::new(x.values().shape().to_vec(), TensorData::F32(v))?, x.mask().clone())
    }

    fn add_row_index(&self, x: &Sequence) -> Result<Sequence> {
        let per_row = x.time() * x.step_width();
        let v: Vec<f32> = x
            .values()
            .as_f32()?
            .iter()
            .enumerate()
            .map(|(i, &a)| a + (i / per_row.max(1)) as f32)
            .collect();
        Sequence::new_masked(Tensor::new(x.values().shape().to_vec(), TensorData::F32(v))?, x.mask().clone())
    }

    /// Steps of input history kept in step mode.
    fn history(&self) -> usize {
        match self.fault {
            SabotageKind::StaleCarry | SabotageKind::LeakyConv => 1,
            SabotageKind::MisdeclaredField => 2,
            _ => 0,
        }
    }
}

impl Layer for Sabotaged {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        let mut props = LayerProperties::pointwise();
        match self.fault {
            SabotageKind::ForgetfulConv | SabotageKind::StaleCarry | SabotageKind::MisdeclaredField => {
                props.receptive_field = ReceptiveField::uniform(Interval::new(-1, 0));
            }
            SabotageKind::LeakyConv => {
                props.receptive_field = ReceptiveField::uniform(Interval::new(0, 1));
                props.output_latency = 1;
            }
            _ => {}
        }
        props
    }

    fn forward(&self, x: &Sequence, training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let y = match self.fault {
            SabotageKind::RowIndex => self.add_row_index(x)?,
            SabotageKind::StepSeededDropout if training => self.dropout(x, self.seed)?,
            SabotageKind::WrongSpec | SabotageKind::EmitsDrift | SabotageKind::StepSeededDropout => x.mask_invalid(),
            _ => self.filter(x, 0, x.time())?,
        };
        let emits = match self.fault {
            SabotageKind::EmitsDrift => Emits::Sequence(x.mask_invalid()),
            _ => Emits::Empty,
        };
        Ok((y, emits))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(match self.fault {
            SabotageKind::StepSeededDropout => State::Tensor(Tensor::from_i32(vec![], vec![0])?),
            _ => State::Buffer(Sequence::invalid(batch, self.history(), self.input_spec())),
        })
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        training: bool,
        constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let name = self.name().to_string();
        if self.fault == SabotageKind::StepSeededDropout {
            let calls = state.into_tensor(&name)?.as_i32()?[0];
            let y = if training {
                self.dropout(x, self.seed.wrapping_add(calls as u64))?
            } else {
                x.mask_invalid()
            };
            return Ok((y, State::Tensor(Tensor::from_i32(vec![], vec![calls + 1])?), Emits::Empty));
        }
        let buffer = state.into_buffer(&name)?;
        let h = buffer.time();
        let joined = Sequence::concatenate(&[buffer, x.clone()])?;
        let (y, next) = match self.fault {
            SabotageKind::ForgetfulConv => (self.filter(x, 0, x.time())?, joined.slice_time(0, 0)?),
            SabotageKind::StaleCarry => (self.filter(&joined, h, joined.time())?, joined.slice_time(h, h + 1)?),
            SabotageKind::MisdeclaredField => (
                self.filter(&joined, h, joined.time())?,
                joined.slice_time(joined.time() - h, joined.time())?,
            ),
            SabotageKind::LeakyConv => {
                // Output lags the input by one step.
                let y = self.filter(&joined, 0, x.time())?;
                (y, joined.slice_time(joined.time() - h, joined.time())?)
            }
            _ => {
                let (y, _) = self.forward(x, training, constants)?;
                (y, joined.slice_time(0, 0)?)
            }
        };
        let emits = match self.fault {
            SabotageKind::EmitsDrift => Emits::Tuple(vec![]),
            _ => Emits::Empty,
        };
        Ok((y, State::Buffer(next), emits))
    }
}

/// Builds a sabotaged layer for `input` with a fixed seed.
pub fn build(kind: SabotageKind, input: &ChannelSpec, seed: u64) -> Result<Box<dyn Layer>> {
    let mut ctx = BuildCtx::random(seed);
    let cfg = SabotageConfig {
        name: Some("sabotaged".into()),
        kind,
    };
    let layer = ctx.scoped("sabotaged", "", |ctx| cfg.build(input, ctx))?;
    ctx.finish()?;
    Ok(layer)
}
