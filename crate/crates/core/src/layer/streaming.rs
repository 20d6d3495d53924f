//! Driving a layer step-wise over a whole sequence.

use num_rational::Rational64;

use super::{Constants, Emits, Layer, State};
use crate::error::{Error, Result};
use crate::sequence::Sequence;

/// Raw result of stepping through a sequence.
#[derive(Debug)]
pub struct StepRun {
    /// Concatenated step outputs, including latency and flush steps.
    pub output: Sequence,
    /// Emits of every step call, in order.
    pub emits: Vec<Emits>,
    /// Step calls that consumed input (as opposed to flush) come first.
    pub input_steps: usize,
    pub state: State,
    /// Input length after padding to the block size, before flushing.
    pub padded_time: usize,
}

/// Smallest multiple of `block` that is at least `n`.
pub fn round_up(n: usize, block: usize) -> usize {
    n.div_ceil(block) * block
}

/// Length of a layer-mode output for `time` input steps.
pub fn output_length(layer: &dyn Layer, time: usize) -> usize {
    let t = Rational64::from_integer(time as i64) * layer.properties().output_ratio;
    t.ceil().to_integer() as usize
}

/// Steps `layer` over `x` in blocks of `block` steps, padding the end to a
/// whole block and then flushing with enough invalid steps to release
/// every output held back by latency.
pub fn step_through(
    layer: &dyn Layer,
    x: &Sequence,
    block: usize,
    training: bool,
    constants: &Constants,
) -> Result<StepRun> {
    let props = layer.properties();
    if block == 0 || !block.is_multiple_of(props.block_size) {
        return Err(Error::BlockSize {
            layer: layer.name().to_string(),
            len: block,
            block_size: props.block_size,
        });
    }
    let padded_time = round_up(x.time(), block);
    let flush = round_up(props.input_latency(), block);
    let input = x.pad_time(0, padded_time - x.time() + flush, false);
    let mut state = layer.initial_state(x.batch(), training, constants)?;
    let mut outputs = Vec::new();
    let mut emits = Vec::new();
    for start in (0..input.time()).step_by(block) {
        let chunk = input.slice_time(start, start + block)?;
        let (y, next, e) = layer.step_with_emits(&chunk, state, training, constants)?;
        state = next;
        outputs.push(y);
        emits.push(e);
    }
    let output = if outputs.is_empty() {
        Sequence::empty(x.batch(), layer.output_spec())
    } else {
        Sequence::concatenate(&outputs)?
    };
    Ok(StepRun {
        output,
        emits,
        input_steps: padded_time / block,
        state,
        padded_time,
    })
}

/// Step-wise equivalent of `layer.layer(x)`: steps through, drops the
/// latency prefix and keeps as many steps as layer mode produces.
pub fn layer_by_steps(
    layer: &dyn Layer,
    x: &Sequence,
    block: usize,
    training: bool,
    constants: &Constants,
) -> Result<(Sequence, StepRun)> {
    let run = step_through(layer, x, block, training, constants)?;
    let skip = layer.properties().output_latency;
    let keep = output_length(layer, x.time());
    let y = run.output.slice_time(skip, skip + keep)?;
    Ok((y, run))
}
