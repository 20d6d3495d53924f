//! Dense row-major n-dimensional arrays.
//!
//! Tensors are immutable values. Every operation returns a freshly
//! materialized tensor; there are no strided views. Shape arithmetic lives in
//! [`shape`] as pure functions so it can be tested without touching data.

pub mod io;
mod ops;
pub mod shape;

pub use ops::{BinaryOp, ReduceOp, UnaryOp};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type. Declaration order is the promotion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Bool,
    I32,
    F32,
}

impl DType {
    pub fn promote(self, other: DType) -> DType {
        self.max(other)
    }

    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I32 => 1,
            DType::Bool => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<DType> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::I32),
            2 => Ok(DType::Bool),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I32 => "i32",
            DType::Bool => "bool",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// A single element of any dtype, used for fill values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scalar {
    F32(f32),
    I32(i32),
    Bool(bool),
}

impl Scalar {
    pub fn zero(dtype: DType) -> Scalar {
        match dtype {
            DType::F32 => Scalar::F32(0.0),
            DType::I32 => Scalar::I32(0),
            DType::Bool => Scalar::Bool(false),
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            Scalar::F32(_) => DType::F32,
            Scalar::I32(_) => DType::I32,
            Scalar::Bool(_) => DType::Bool,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::Bool(_) => DType::Bool,
        }
    }

    fn filled(dtype: DType, len: usize, fill: Scalar) -> Result<TensorData> {
        Ok(match (dtype, fill) {
            (DType::F32, Scalar::F32(v)) => TensorData::F32(vec![v; len]),
            (DType::I32, Scalar::I32(v)) => TensorData::I32(vec![v; len]),
            (DType::Bool, Scalar::Bool(v)) => TensorData::Bool(vec![v; len]),
            (dtype, fill) => {
                return Err(Error::invalid(format!(
                    "fill value {fill:?} does not match dtype {dtype}"
                )))
            }
        })
    }

    /// Gathers elements by flat index into a new buffer of the same dtype.
    pub(crate) fn gather(&self, indices: impl Iterator<Item = usize>) -> TensorData {
        match self {
            TensorData::F32(v) => TensorData::F32(indices.map(|i| v[i]).collect()),
            TensorData::I32(v) => TensorData::I32(indices.map(|i| v[i]).collect()),
            TensorData::Bool(v) => TensorData::Bool(indices.map(|i| v[i]).collect()),
        }
    }
}

/// Immutable dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Tensor> {
        let expected = shape::num_elements(&shape);
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} requires {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        Tensor::new(shape, TensorData::F32(data))
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>) -> Result<Tensor> {
        Tensor::new(shape, TensorData::I32(data))
    }

    pub fn from_bool(shape: Vec<usize>, data: Vec<bool>) -> Result<Tensor> {
        Tensor::new(shape, TensorData::Bool(data))
    }

    pub fn scalar(value: Scalar) -> Tensor {
        Tensor::full(&[], value)
    }

    pub fn full(shape: &[usize], value: Scalar) -> Tensor {
        let len = shape::num_elements(shape);
        let data = TensorData::filled(value.dtype(), len, value).expect("dtype taken from value");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(dtype: DType, shape: &[usize]) -> Tensor {
        Tensor::full(shape, Scalar::zero(dtype))
    }

    pub fn ones_like(other: &Tensor) -> Tensor {
        let one = match other.dtype() {
            DType::F32 => Scalar::F32(1.0),
            DType::I32 => Scalar::I32(1),
            DType::Bool => Scalar::Bool(true),
        };
        Tensor::full(other.shape(), one)
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data: TensorData::F32(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(Error::UnsupportedDType {
                op: "as_f32",
                dtype: self.dtype(),
            }),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Ok(v),
            _ => Err(Error::UnsupportedDType {
                op: "as_i32",
                dtype: self.dtype(),
            }),
        }
    }

    pub fn as_bool(&self) -> Result<&[bool]> {
        match &self.data {
            TensorData::Bool(v) => Ok(v),
            _ => Err(Error::UnsupportedDType {
                op: "as_bool",
                dtype: self.dtype(),
            }),
        }
    }

    pub fn cast(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype() {
            return self.clone();
        }
        let data = match (&self.data, dtype) {
            (TensorData::Bool(v), DType::I32) => {
                TensorData::I32(v.iter().map(|&b| b as i32).collect())
            }
            (TensorData::Bool(v), DType::F32) => {
                TensorData::F32(v.iter().map(|&b| b as i32 as f32).collect())
            }
            (TensorData::I32(v), DType::F32) => {
                TensorData::F32(v.iter().map(|&x| x as f32).collect())
            }
            (TensorData::I32(v), DType::Bool) => TensorData::Bool(v.iter().map(|&x| x != 0).collect()),
            (TensorData::F32(v), DType::I32) => TensorData::I32(v.iter().map(|&x| x as i32).collect()),
            (TensorData::F32(v), DType::Bool) => {
                TensorData::Bool(v.iter().map(|&x| x != 0.0).collect())
            }
            _ => unreachable!("same-dtype cast handled above"),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Applies `f` to every element of a float tensor.
    pub fn map_f32(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        let v = self.as_f32()?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: TensorData::F32(v.iter().map(|&x| f(x)).collect()),
        })
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        if shape::num_elements(new_shape) != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: new_shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Reads the element at a multi-index as f64, whatever the dtype.
    pub fn get_f64(&self, index: &[usize]) -> Result<f64> {
        let flat = shape::flat_index(&self.shape, index)?;
        Ok(match &self.data {
            TensorData::F32(v) => v[flat] as f64,
            TensorData::I32(v) => v[flat] as f64,
            TensorData::Bool(v) => v[flat] as i32 as f64,
        })
    }

    /// Largest absolute element difference between two float tensors of the
    /// same shape. NaN in either operand yields NaN.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let a = self.cast(DType::F32);
        let b = other.cast(DType::F32);
        let mut worst = 0.0f32;
        for (x, y) in a.as_f32()?.iter().zip(b.as_f32()?) {
            let d = (x - y).abs();
            if d.is_nan() {
                return Ok(f32::NAN);
            }
            worst = worst.max(d);
        }
        Ok(worst)
    }
}
