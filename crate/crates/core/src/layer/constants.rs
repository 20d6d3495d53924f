use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sequence::Sequence;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Constant {
    Tensor(Tensor),
    Sequence(Sequence),
}

/// Flat, string-keyed auxiliary inputs shared by every layer in a tree.
/// Key clashes are the caller's responsibility.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constants {
    entries: BTreeMap<String, Constant>,
}

impl Constants {
    pub fn new() -> Constants {
        Constants::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Constant) -> Option<Constant> {
        self.entries.insert(key.into(), value)
    }

    pub fn with_sequence(mut self, key: impl Into<String>, value: Sequence) -> Constants {
        self.insert(key, Constant::Sequence(value));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Constant> {
        self.entries.get(key)
    }

    pub fn sequence(&self, key: &str) -> Result<&Sequence> {
        match self.entries.get(key) {
            Some(Constant::Sequence(s)) => Ok(s),
            Some(Constant::Tensor(_)) => Err(Error::invalid(format!(
                "constant `{key}` is a tensor, expected a sequence"
            ))),
            None => Err(Error::MissingConstant(key.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Constant)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies `f` to every sequence constant, leaving tensors untouched.
    pub fn map_sequences(&self, f: impl Fn(&Sequence) -> Result<Sequence>) -> Result<Constants> {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Constant::Sequence(s) => Constant::Sequence(f(s)?),
                    other => other.clone(),
                };
                Ok((k.clone(), v))
            })
            .collect::<Result<_>>()?;
        Ok(Constants { entries })
    }
}
