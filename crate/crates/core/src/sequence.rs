//! Batched masked sequences.
//!
//! A [`Sequence`] pairs `values` of shape `[batch, time, ...channel]` with a
//! boolean `mask` of shape `[batch, time]`. A sequence whose `masked` flag is
//! set additionally guarantees that every invalid timestep holds zeros; this
//! is the stand-in for a `MaskedSequence` marker type.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::{DType, Scalar, Tensor, TensorData};

pub const SEQUENCE_MAGIC: &[u8; 4] = b"SLS1";

/// Channel shape and dtype of a sequence, excluding batch and time.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl ChannelSpec {
    pub fn new(shape: impl Into<Vec<usize>>, dtype: DType) -> Self {
        ChannelSpec {
            shape: shape.into(),
            dtype,
        }
    }

    pub fn f32(shape: impl Into<Vec<usize>>) -> Self {
        ChannelSpec::new(shape, DType::F32)
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    /// Extent of the last channel axis. Scalar channels report 1.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        write!(f, "{}[{}]", self.dtype, dims.join(","))
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    /// Parses `f32[4]`, `i32[2,3]`, `bool[]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("invalid channel spec `{s}` (expected e.g. f32[4])"));
        let open = s.find('[').ok_or_else(bad)?;
        if !s.ends_with(']') {
            return Err(bad());
        }
        let dtype = match &s[..open] {
            "f32" | "float32" => DType::F32,
            "i32" | "int32" => DType::I32,
            "bool" => DType::Bool,
            _ => return Err(bad()),
        };
        let inner = s[open + 1..s.len() - 1].trim();
        let shape = if inner.is_empty() {
            vec![]
        } else {
            inner
                .split(',')
                .map(|d| d.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<_>>()?
        };
        Ok(ChannelSpec { shape, dtype })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    values: Tensor,
    mask: Tensor,
    masked: bool,
}

impl Sequence {
    /// Pairs values with a mask. The result is not marked as masked.
    pub fn new(values: Tensor, mask: Tensor) -> Result<Sequence> {
        if values.rank() < 2 {
            return Err(Error::invalid(format!(
                "sequence values need rank >= 2, got shape {:?}",
                values.shape()
            )));
        }
        if mask.dtype() != DType::Bool || mask.shape() != &values.shape()[..2] {
            return Err(Error::ShapeMismatch {
                op: "sequence mask",
                lhs: values.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        Ok(Sequence {
            values,
            mask,
            masked: false,
        })
    }

    /// Like [`Sequence::new`] but zeroes invalid positions so the result is
    /// marked masked.
    pub fn new_masked(values: Tensor, mask: Tensor) -> Result<Sequence> {
        Ok(Sequence::new(values, mask)?.mask_invalid())
    }

    /// All timesteps valid.
    pub fn from_values(values: Tensor) -> Result<Sequence> {
        if values.rank() < 2 {
            return Err(Error::invalid(format!(
                "sequence values need rank >= 2, got shape {:?}",
                values.shape()
            )));
        }
        let mask = Tensor::full(&values.shape()[..2], Scalar::Bool(true));
        Ok(Sequence {
            values,
            mask,
            masked: true,
        })
    }

    /// Row `b` is valid for `t < lengths[b]`.
    pub fn from_lengths(values: Tensor, lengths: &[usize]) -> Result<Sequence> {
        if values.rank() < 2 {
            return Err(Error::invalid("sequence values need rank >= 2"));
        }
        let (batch, time) = (values.shape()[0], values.shape()[1]);
        if lengths.len() != batch {
            return Err(Error::invalid(format!(
                "{} lengths for batch {batch}",
                lengths.len()
            )));
        }
        if let Some(&bad) = lengths.iter().find(|&&l| l > time) {
            return Err(Error::invalid(format!(
                "length {bad} exceeds time extent {time}"
            )));
        }
        let mask: Vec<bool> = lengths
            .iter()
            .flat_map(|&l| (0..time).map(move |t| t < l))
            .collect();
        Sequence::new(values, Tensor::from_bool(vec![batch, time], mask)?)
    }

    /// Empty-time sequence with the given batch and channel spec.
    pub fn empty(batch: usize, spec: &ChannelSpec) -> Sequence {
        let mut shape = vec![batch, 0];
        shape.extend(&spec.shape);
        Sequence {
            values: Tensor::zeros(spec.dtype, &shape),
            mask: Tensor::zeros(DType::Bool, &[batch, 0]),
            masked: true,
        }
    }

    /// All-invalid, all-zero sequence.
    pub fn invalid(batch: usize, time: usize, spec: &ChannelSpec) -> Sequence {
        let mut shape = vec![batch, time];
        shape.extend(&spec.shape);
        Sequence {
            values: Tensor::zeros(spec.dtype, &shape),
            mask: Tensor::zeros(DType::Bool, &[batch, time]),
            masked: true,
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn mask_slice(&self) -> &[bool] {
        self.mask.as_bool().expect("mask is bool by construction")
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.values, self.mask)
    }

    pub fn is_masked(&self) -> bool {
        self.masked
    }

    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn time(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dtype(&self) -> DType {
        self.values.dtype()
    }

    pub fn channel_shape(&self) -> &[usize] {
        &self.values.shape()[2..]
    }

    pub fn channel_spec(&self) -> ChannelSpec {
        ChannelSpec::new(self.channel_shape().to_vec(), self.dtype())
    }

    /// Number of channel elements per timestep.
    pub fn step_width(&self) -> usize {
        self.channel_shape().iter().product()
    }

    /// Number of valid timesteps per row.
    pub fn lengths(&self) -> Tensor {
        let time = self.time();
        let counts: Vec<i32> = self
            .mask_slice()
            .chunks(time.max(1))
            .take(self.batch())
            .map(|row| row.iter().filter(|&&v| v).count() as i32)
            .collect();
        let counts = if time == 0 {
            vec![0; self.batch()]
        } else {
            counts
        };
        Tensor::from_i32(vec![self.batch()], counts).expect("one length per row")
    }

    /// Zeroes all invalid timesteps. A no-op for already-masked sequences.
    pub fn mask_invalid(&self) -> Sequence {
        if self.masked {
            return self.clone();
        }
        let width = self.step_width();
        let mask = self.mask_slice();
        let data = match self.values.data() {
            TensorData::F32(v) => TensorData::F32(zero_invalid(v, mask, width, 0.0)),
            TensorData::I32(v) => TensorData::I32(zero_invalid(v, mask, width, 0)),
            TensorData::Bool(v) => TensorData::Bool(zero_invalid(v, mask, width, false)),
        };
        Sequence {
            values: Tensor::new(self.values.shape().to_vec(), data).expect("shape unchanged"),
            mask: self.mask.clone(),
            masked: true,
        }
    }

    /// Pads the time axis with zero values. Padded steps carry `valid` in the
    /// mask. The masked flag survives only invalid padding.
    pub fn pad_time(&self, front: usize, back: usize, valid: bool) -> Sequence {
        if front == 0 && back == 0 {
            return self.clone();
        }
        let values = self
            .values
            .pad(1, front, back, Scalar::zero(self.dtype()))
            .expect("time axis exists");
        let mask = self
            .mask
            .pad(1, front, back, Scalar::Bool(valid))
            .expect("time axis exists");
        Sequence {
            values,
            mask,
            masked: self.masked && !valid,
        }
    }

    /// Time-axis concatenation. Masked iff every input is masked.
    pub fn concatenate(parts: &[Sequence]) -> Result<Sequence> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concatenate of zero sequences"))?;
        let spec = first.channel_spec();
        for p in &parts[1..] {
            if p.batch() != first.batch() || p.channel_spec() != spec {
                return Err(Error::SpecMismatch {
                    layer: "concatenate".into(),
                    expected: format!("batch {} {}", first.batch(), spec),
                    actual: format!("batch {} {}", p.batch(), p.channel_spec()),
                });
            }
        }
        let values: Vec<&Tensor> = parts.iter().map(|p| &p.values).collect();
        let masks: Vec<&Tensor> = parts.iter().map(|p| &p.mask).collect();
        Ok(Sequence {
            values: Tensor::concat(&values, 1)?,
            mask: Tensor::concat(&masks, 1)?,
            masked: parts.iter().all(|p| p.masked),
        })
    }

    /// Timesteps `start..end`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Sequence> {
        Ok(Sequence {
            values: self.values.slice(1, start, end)?,
            mask: self.mask.slice(1, start, end)?,
            masked: self.masked,
        })
    }

    /// Gathers timesteps by index, with repetition allowed.
    pub fn select_time(&self, steps: &[usize]) -> Result<Sequence> {
        Ok(Sequence {
            values: self.values.index_select(1, steps)?,
            mask: self.mask.index_select(1, steps)?,
            masked: self.masked,
        })
    }

    /// Selects batch rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Sequence> {
        Ok(Sequence {
            values: self.values.index_select(0, rows)?,
            mask: self.mask.index_select(0, rows)?,
            masked: self.masked,
        })
    }

    /// Concatenates along the batch axis.
    pub fn concat_rows(parts: &[Sequence]) -> Result<Sequence> {
        let values: Vec<&Tensor> = parts.iter().map(|p| &p.values).collect();
        let masks: Vec<&Tensor> = parts.iter().map(|p| &p.mask).collect();
        Ok(Sequence {
            values: Tensor::concat(&values, 0)?,
            mask: Tensor::concat(&masks, 0)?,
            masked: parts.iter().all(|p| p.masked),
        })
    }

    /// Transforms the values tensor, keeping batch/time extents. The result
    /// stays masked only if the input was masked and `zero_preserving` is
    /// declared (f(0) == 0 for every element).
    pub fn apply_values(
        &self,
        f: impl FnOnce(&Tensor) -> Result<Tensor>,
        zero_preserving: bool,
    ) -> Result<Sequence> {
        let values = f(&self.values)?;
        if values.rank() < 2 || values.shape()[..2] != self.values.shape()[..2] {
            return Err(Error::ShapeMismatch {
                op: "apply_values",
                lhs: self.values.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        Ok(Sequence {
            values,
            mask: self.mask.clone(),
            masked: self.masked && zero_preserving,
        })
    }

    /// Replaces the values, asserting the caller upholds the masked
    /// invariant when `masked` is set.
    pub(crate) fn with_values(&self, values: Tensor, masked: bool) -> Sequence {
        debug_assert_eq!(&values.shape()[..2], &self.values.shape()[..2]);
        Sequence {
            values,
            mask: self.mask.clone(),
            masked,
        }
    }

    pub(crate) fn from_parts_unchecked(values: Tensor, mask: Tensor, masked: bool) -> Sequence {
        debug_assert_eq!(&values.shape()[..2], mask.shape());
        Sequence {
            values,
            mask,
            masked,
        }
    }

    /// Drops the masked marker without touching data.
    pub fn unmarked(mut self) -> Sequence {
        self.masked = false;
        self
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SEQUENCE_MAGIC)?;
        write_tensor(w, &self.values)?;
        write_tensor(w, &self.mask)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Sequence> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated sequence".into()))?;
        if &magic != SEQUENCE_MAGIC {
            return Err(Error::Format(format!("bad sequence magic {magic:?}")));
        }
        let values = read_tensor(r)?;
        let mask = read_tensor(r)?;
        Sequence::new(values, mask)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Sequence> {
        let mut cursor = bytes;
        let s = Sequence::read(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
        }
        Ok(s)
    }
}

fn zero_invalid<T: Copy>(values: &[T], mask: &[bool], width: usize, zero: T) -> Vec<T> {
    let mut out = values.to_vec();
    for (i, &valid) in mask.iter().enumerate() {
        if !valid {
            out[i * width..(i + 1) * width].fill(zero);
        }
    }
    out
}
