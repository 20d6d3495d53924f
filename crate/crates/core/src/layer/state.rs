use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sequence::Sequence;
use crate::tensor::Tensor;

/// Per-stream memory threaded through `step`. Layers never keep state
/// internally.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Empty,
    Tensor(Tensor),
    Buffer(Sequence),
    Tuple(Vec<State>),
    Map(BTreeMap<String, State>),
    RngCounter { seed: u64, offset: u64 },
}

impl State {
    /// Tree structure with leaf shapes and dtypes but no values.
    pub fn signature(&self) -> String {
        let mut out = String::new();
        self.write_signature(&mut out);
        out
    }

    fn write_signature(&self, out: &mut String) {
        match self {
            State::Empty => out.push_str("()"),
            State::Tensor(t) => {
                let _ = write!(out, "{}{:?}", t.dtype(), t.shape());
            }
            State::Buffer(s) => {
                let _ = write!(out, "buf:{}{:?}", s.dtype(), s.values().shape());
            }
            State::Tuple(items) => {
                out.push('(');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_signature(out);
                }
                out.push(')');
            }
            State::Map(items) => {
                out.push('{');
                for (i, (k, v)) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{k}:");
                    v.write_signature(out);
                }
                out.push('}');
            }
            State::RngCounter { .. } => out.push_str("rng"),
        }
    }

    pub fn into_tuple(self, len: usize, layer: &str) -> Result<Vec<State>> {
        match self {
            State::Tuple(items) if items.len() == len => Ok(items),
            _ => Err(Error::StateMismatch(layer.to_string())),
        }
    }

    pub fn into_tensor(self, layer: &str) -> Result<Tensor> {
        match self {
            State::Tensor(t) => Ok(t),
            _ => Err(Error::StateMismatch(layer.to_string())),
        }
    }

    pub fn into_buffer(self, layer: &str) -> Result<Sequence> {
        match self {
            State::Buffer(s) => Ok(s),
            _ => Err(Error::StateMismatch(layer.to_string())),
        }
    }

    pub fn into_rng(self, layer: &str) -> Result<(u64, u64)> {
        match self {
            State::RngCounter { seed, offset } => Ok((seed, offset)),
            _ => Err(Error::StateMismatch(layer.to_string())),
        }
    }

    pub fn expect_empty(self, layer: &str) -> Result<()> {
        match self {
            State::Empty => Ok(()),
            _ => Err(Error::StateMismatch(layer.to_string())),
        }
    }
}
