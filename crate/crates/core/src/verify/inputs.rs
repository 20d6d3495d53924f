//! Random inputs for the harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layer::{Constant, Constants, Layer};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{DType, Tensor, TensorData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_data(dtype: DType, n: usize, rng: &mut ChaCha8Rng) -> TensorData {
    match dtype {
        DType::F32 => TensorData::F32((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()),
        DType::I32 => TensorData::I32((0..n).map(|_| rng.gen_range(-8..8)).collect()),
        DType::Bool => TensorData::Bool((0..n).map(|_| rng.gen_bool(0.5)).collect()),
    }
}

fn random_values(spec: &ChannelSpec, batch: usize, time: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut shape = vec![batch, time];
    shape.extend(&spec.shape);
    let n = batch * time * spec.num_elements();
    Tensor::new(shape, random_data(spec.dtype, n, rng)).expect("shape matches data")
}

/// Row 0 is fully valid; other rows get a random length in `[time/2, time]`.
/// Invalid positions hold random values, not zeros.
pub fn random_input(spec: &ChannelSpec, batch: usize, time: usize, rng: &mut ChaCha8Rng) -> Sequence {
    let values = random_values(spec, batch, time, rng);
    let lengths: Vec<usize> = (0..batch)
        .map(|b| if b == 0 { time } else { rng.gen_range(time / 2..=time) })
        .collect();
    Sequence::from_lengths(values, &lengths).expect("lengths fit")
}

/// Fully valid random sequence.
pub fn random_valid(spec: &ChannelSpec, batch: usize, time: usize, rng: &mut ChaCha8Rng) -> Sequence {
    Sequence::from_values(random_values(spec, batch, time, rng)).expect("rank >= 2")
}

/// Rows with random values and an all-invalid mask.
pub fn garbage_rows(spec: &ChannelSpec, rows: usize, time: usize, rng: &mut ChaCha8Rng) -> Sequence {
    let values = random_values(spec, rows, time, rng);
    Sequence::from_lengths(values, &vec![0; rows]).expect("lengths fit")
}

/// One fully valid sequence per constant the layer tree needs. Constants
/// are four times as long as the input so flushing never runs out.
pub fn random_constants(layer: &dyn Layer, batch: usize, time: usize, rng: &mut ChaCha8Rng) -> Constants {
    let mut constants = Constants::new();
    for (key, spec) in layer.required_constants() {
        if constants.get(&key).is_none() {
            constants.insert(key, Constant::Sequence(random_valid(&spec, batch, 4 * time.max(1), rng)));
        }
    }
    constants
}

/// Channel element perturbed at step `u`. Spread over the channels so no
/// single element (say, one a window zeroes) hides a whole step.
pub fn probe_element(u: usize, width: usize) -> usize {
    (7 * u + 3) % width.max(1)
}

/// Adds `eps` to one element of row 0 at step `u` (flips a bool, adds one
/// to an int). Perturbing a whole step would be invisible to layers that
/// are shift invariant over channels, such as normalization or softmax.
pub fn perturb(x: &Sequence, u: usize, eps: f32) -> Sequence {
    let width = x.step_width();
    let k = u * width + probe_element(u, width);
    let range = k..k + 1;
    let data = match x.values().data().clone() {
        TensorData::F32(mut v) => {
            v[range].iter_mut().for_each(|a| *a += eps);
            TensorData::F32(v)
        }
        TensorData::I32(mut v) => {
            v[range].iter_mut().for_each(|a| *a += 1);
            TensorData::I32(v)
        }
        TensorData::Bool(mut v) => {
            v[range].iter_mut().for_each(|a| *a = !*a);
            TensorData::Bool(v)
        }
    };
    let values = Tensor::new(x.values().shape().to_vec(), data).expect("same shape");
    Sequence::new(values, x.mask().clone()).expect("same extents")
}

/// Overwrites every invalid position: NaN for floats, 10^9 for ints, true
/// for bools.
pub fn poison(x: &Sequence) -> Sequence {
    let width = x.step_width();
    let mask = x.mask_slice();
    fn fill<T: Copy>(v: &mut [T], mask: &[bool], width: usize, value: T) {
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                v[i * width..(i + 1) * width].fill(value);
            }
        }
    }
    let data = match x.values().data().clone() {
        TensorData::F32(mut v) => {
            fill(&mut v, mask, width, f32::NAN);
            TensorData::F32(v)
        }
        TensorData::I32(mut v) => {
            fill(&mut v, mask, width, 1_000_000_000);
            TensorData::I32(v)
        }
        TensorData::Bool(mut v) => {
            fill(&mut v, mask, width, true);
            TensorData::Bool(v)
        }
    };
    let values = Tensor::new(x.values().shape().to_vec(), data).expect("same shape");
    Sequence::new(values, x.mask().clone()).expect("same extents")
}
