//! Layers built from layers.

pub mod bidirectional;
pub mod blockwise;
pub mod parallel;
pub mod serial;

pub use bidirectional::Bidirectional;
pub use blockwise::Blockwise;
pub use parallel::Parallel;
pub use serial::Serial;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{DType, Tensor, TensorData};

/// How branch outputs are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// New leading channel axis with one entry per branch.
    Stack,
    /// Concatenation along the last channel axis.
    Concat,
    #[default]
    Add,
    Mean,
}

impl CombineMode {
    /// Output spec for branch specs, or a message describing the conflict.
    pub fn output_spec(self, specs: &[&ChannelSpec]) -> std::result::Result<ChannelSpec, String> {
        let first = specs.first().ok_or("no branches to combine")?;
        if let Some(other) = specs.iter().find(|s| s.dtype != first.dtype) {
            return Err(format!("dtype mismatch: {first} vs {other}"));
        }
        match self {
            CombineMode::Add | CombineMode::Mean => {
                if first.dtype != DType::F32 {
                    return Err(format!("{self:?} needs f32 branches, got {first}"));
                }
                match specs.iter().find(|s| s != &first) {
                    Some(other) => Err(format!("branch specs differ: {first} vs {other}")),
                    None => Ok((*first).clone()),
                }
            }
            CombineMode::Stack => match specs.iter().find(|s| s != &first) {
                Some(other) => Err(format!("branch specs differ: {first} vs {other}")),
                None => {
                    let mut shape = vec![specs.len()];
                    shape.extend(&first.shape);
                    Ok(ChannelSpec::new(shape, first.dtype))
                }
            },
            CombineMode::Concat => {
                if first.shape.is_empty() {
                    return Err(format!("concat needs a channel axis, got {first}"));
                }
                let lead = &first.shape[..first.shape.len() - 1];
                let mut last = 0;
                for s in specs {
                    if s.shape.len() != first.shape.len() || &s.shape[..s.shape.len() - 1] != lead {
                        return Err(format!("leading channel axes differ: {first} vs {s}"));
                    }
                    last += s.last_dim();
                }
                let mut shape = lead.to_vec();
                shape.push(last);
                Ok(ChannelSpec::new(shape, first.dtype))
            }
        }
    }

    /// Merges branch outputs. Masks are intersected.
    pub fn combine(self, parts: &[Sequence], spec: &ChannelSpec) -> Result<Sequence> {
        let first = &parts[0];
        let (batch, time) = (first.batch(), first.time());
        if let Some(p) = parts.iter().find(|p| p.batch() != batch || p.time() != time) {
            return Err(Error::invalid(format!(
                "branch outputs differ in extent: [{batch}, {time}] vs [{}, {}]",
                p.batch(),
                p.time()
            )));
        }
        let mask: Vec<bool> = (0..batch * time)
            .map(|i| parts.iter().all(|p| p.mask_slice()[i]))
            .collect();
        let mask = Tensor::from_bool(vec![batch, time], mask)?;
        let mut shape = vec![batch, time];
        shape.extend(&spec.shape);
        let values = match self {
            CombineMode::Add | CombineMode::Mean => {
                let mut acc = first.values().as_f32()?.to_vec();
                for p in &parts[1..] {
                    for (a, b) in acc.iter_mut().zip(p.values().as_f32()?) {
                        *a += b;
                    }
                }
                if self == CombineMode::Mean {
                    let n = parts.len() as f32;
                    acc.iter_mut().for_each(|a| *a /= n);
                }
                Tensor::new(shape, TensorData::F32(acc))?
            }
            CombineMode::Stack => {
                let stacked: Vec<Tensor> = parts
                    .iter()
                    .map(|p| {
                        let mut s = p.values().shape().to_vec();
                        s.insert(2, 1);
                        p.values().reshape(&s)
                    })
                    .collect::<Result<_>>()?;
                Tensor::concat(&stacked.iter().collect::<Vec<_>>(), 2)?
            }
            CombineMode::Concat => {
                let axis = first.values().rank() - 1;
                Tensor::concat(&parts.iter().map(|p| p.values()).collect::<Vec<_>>(), axis)?
            }
        };
        Sequence::new(values, mask)
    }
}
