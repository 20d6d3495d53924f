use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sequence::Sequence;
use crate::tensor::Tensor;

/// Auxiliary outputs produced alongside a layer's primary output.
/// Combinators nest their children's emits in composition order.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Emits {
    #[default]
    Empty,
    Tensor(Tensor),
    Sequence(Sequence),
    Tuple(Vec<Emits>),
    Map(BTreeMap<String, Emits>),
}

impl Emits {
    /// Structure with channel specs; time extents are excluded so layer and
    /// step emits are comparable.
    pub fn structure(&self) -> String {
        let mut out = String::new();
        self.write_structure(&mut out);
        out
    }

    fn write_structure(&self, out: &mut String) {
        match self {
            Emits::Empty => out.push_str("()"),
            Emits::Tensor(t) => {
                let _ = write!(out, "t:{}{:?}", t.dtype(), t.shape());
            }
            Emits::Sequence(s) => {
                let _ = write!(out, "s:{}", s.channel_spec());
            }
            Emits::Tuple(items) => {
                out.push('(');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_structure(out);
                }
                out.push(')');
            }
            Emits::Map(items) => {
                out.push('{');
                for (i, (k, v)) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{k}:");
                    v.write_structure(out);
                }
                out.push('}');
            }
        }
    }

    /// Sequence leaves in depth-first order.
    pub fn sequences(&self) -> Vec<&Sequence> {
        let mut out = Vec::new();
        self.collect_sequences(&mut out);
        out
    }

    fn collect_sequences<'a>(&'a self, out: &mut Vec<&'a Sequence>) {
        match self {
            Emits::Sequence(s) => out.push(s),
            Emits::Tuple(items) => items.iter().for_each(|e| e.collect_sequences(out)),
            Emits::Map(items) => items.values().for_each(|e| e.collect_sequences(out)),
            Emits::Empty | Emits::Tensor(_) => {}
        }
    }

    /// Joins per-step emits along time: sequence leaves are concatenated,
    /// other leaves keep the value from the last step.
    pub fn concat_steps(steps: &[Emits]) -> Result<Emits> {
        let Some(first) = steps.first() else {
            return Ok(Emits::Empty);
        };
        match first {
            Emits::Empty => Ok(Emits::Empty),
            Emits::Tensor(_) => Ok(steps[steps.len() - 1].clone()),
            Emits::Sequence(_) => {
                let parts = steps
                    .iter()
                    .map(|e| match e {
                        Emits::Sequence(s) => Ok(s.clone()),
                        _ => Err(structure_changed()),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Emits::Sequence(Sequence::concatenate(&parts)?))
            }
            Emits::Tuple(items) => {
                let columns = (0..items.len())
                    .map(|i| {
                        let column = steps
                            .iter()
                            .map(|e| match e {
                                Emits::Tuple(xs) if xs.len() == items.len() => Ok(xs[i].clone()),
                                _ => Err(structure_changed()),
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Emits::concat_steps(&column)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Emits::Tuple(columns))
            }
            Emits::Map(items) => {
                let mut out = BTreeMap::new();
                for key in items.keys() {
                    let column = steps
                        .iter()
                        .map(|e| match e {
                            Emits::Map(m) => m.get(key).cloned().ok_or_else(structure_changed),
                            _ => Err(structure_changed()),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    out.insert(key.clone(), Emits::concat_steps(&column)?);
                }
                Ok(Emits::Map(out))
            }
        }
    }
}

fn structure_changed() -> Error {
    Error::invalid("emits structure changed between steps")
}
