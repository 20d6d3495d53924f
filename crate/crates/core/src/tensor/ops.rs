use super::shape::{self, num_elements};
use super::{DType, Scalar, Tensor, TensorData};
use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
    /// Floored modulo: the result has the sign of the divisor.
    Rem,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Log,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    Min,
    Mean,
}

fn floor_mod_f32(x: f32, y: f32) -> f32 {
    x - y * (x / y).floor()
}

fn apply_f32(op: BinaryOp, x: f32, y: f32) -> f32 {
    match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => x / y,
        BinaryOp::Max => x.max(y),
        BinaryOp::Min => x.min(y),
        BinaryOp::Rem => floor_mod_f32(x, y),
        BinaryOp::Pow => x.powf(y),
    }
}

fn apply_i32(op: BinaryOp, x: i32, y: i32) -> Result<i32> {
    Ok(match op {
        BinaryOp::Add => x.wrapping_add(y),
        BinaryOp::Sub => x.wrapping_sub(y),
        BinaryOp::Mul => x.wrapping_mul(y),
        BinaryOp::Div | BinaryOp::Rem if y == 0 => {
            return Err(Error::invalid("integer division by zero"))
        }
        BinaryOp::Div => x.wrapping_div(y),
        BinaryOp::Rem => ((x % y) + y) % y,
        BinaryOp::Max => x.max(y),
        BinaryOp::Min => x.min(y),
        BinaryOp::Pow => {
            let exp = u32::try_from(y)
                .map_err(|_| Error::invalid("negative integer exponent"))?;
            x.wrapping_pow(exp)
        }
    })
}

fn apply_bool(op: BinaryOp, x: bool, y: bool) -> Result<bool> {
    match op {
        BinaryOp::Add | BinaryOp::Max => Ok(x || y),
        BinaryOp::Mul | BinaryOp::Min => Ok(x && y),
        _ => Err(Error::UnsupportedDType {
            op: "binary",
            dtype: DType::Bool,
        }),
    }
}

/// Flat source indices for reading `shape` broadcast to `target`.
fn broadcast_source_indices(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let bstrides = shape::broadcast_strides(shape, target);
    let total = num_elements(target);
    let mut out = Vec::with_capacity(total);
    let mut counter = vec![0usize; target.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(offset);
        for axis in (0..target.len()).rev() {
            counter[axis] += 1;
            offset += bstrides[axis];
            if counter[axis] < target[axis] {
                break;
            }
            offset -= bstrides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    out
}

impl Tensor {
    pub fn binary(&self, op: BinaryOp, other: &Tensor) -> Result<Tensor> {
        let out_shape = shape::broadcast(self.shape(), other.shape())?;
        let dtype = self.dtype().promote(other.dtype());
        let a = self.cast(dtype);
        let b = other.cast(dtype);
        let ia = broadcast_source_indices(a.shape(), &out_shape);
        let ib = broadcast_source_indices(b.shape(), &out_shape);
        let data = match (a.data(), b.data()) {
            (TensorData::F32(x), TensorData::F32(y)) => TensorData::F32(
                ia.iter()
                    .zip(&ib)
                    .map(|(&i, &j)| apply_f32(op, x[i], y[j]))
                    .collect(),
            ),
            (TensorData::I32(x), TensorData::I32(y)) => TensorData::I32(
                ia.iter()
                    .zip(&ib)
                    .map(|(&i, &j)| apply_i32(op, x[i], y[j]))
                    .collect::<Result<_>>()?,
            ),
            (TensorData::Bool(x), TensorData::Bool(y)) => TensorData::Bool(
                ia.iter()
                    .zip(&ib)
                    .map(|(&i, &j)| apply_bool(op, x[i], y[j]))
                    .collect::<Result<_>>()?,
            ),
            _ => unreachable!("operands promoted to a common dtype"),
        };
        Tensor::new(out_shape, data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Tensor> {
        let data = match (self.data(), op) {
            (TensorData::F32(v), op) => TensorData::F32(
                v.iter()
                    .map(|&x| match op {
                        UnaryOp::Neg => -x,
                        UnaryOp::Abs => x.abs(),
                        UnaryOp::Exp => x.exp(),
                        UnaryOp::Log => x.ln(),
                        UnaryOp::Sqrt => x.sqrt(),
                    })
                    .collect(),
            ),
            (TensorData::I32(v), UnaryOp::Neg) => {
                TensorData::I32(v.iter().map(|x| x.wrapping_neg()).collect())
            }
            (TensorData::I32(v), UnaryOp::Abs) => {
                TensorData::I32(v.iter().map(|x| x.wrapping_abs()).collect())
            }
            (data, _) => {
                return Err(Error::UnsupportedDType {
                    op: "unary",
                    dtype: data.dtype(),
                })
            }
        };
        Tensor::new(self.shape().to_vec(), data)
    }

    /// Batched matrix product `[..., m, k] x [..., k, n]`, float32 only.
    /// Each output element sums over `k` in ascending order.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let out_shape = shape::matmul(self.shape(), other.shape())?;
        let a = self.as_f32()?;
        let b = other.as_f32()?;
        let (m, k) = (self.shape()[self.rank() - 2], self.shape()[self.rank() - 1]);
        let n = other.shape()[other.rank() - 1];
        let batch_shape = &out_shape[..out_shape.len() - 2];
        let a_batch = broadcast_source_indices(&self.shape()[..self.rank() - 2], batch_shape);
        let b_batch = broadcast_source_indices(&other.shape()[..other.rank() - 2], batch_shape);
        let rows = a_batch.len() * m;
        let row_values = exec::map_range(rows, rows * n * k >= 1 << 16, |row| {
            let (batch, i) = (row / m, row % m);
            let a_off = a_batch[batch] * m * k + i * k;
            let b_off = b_batch[batch] * k * n;
            let mut out = vec![0.0f32; n];
            for (j, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += a[a_off + p] * b[b_off + p * n + j];
                }
                *slot = acc;
            }
            out
        });
        Tensor::from_f32(out_shape, row_values.concat())
    }

    pub fn reduce(&self, op: ReduceOp, axes: &[usize], keepdims: bool) -> Result<Tensor> {
        let out_shape = shape::reduce(self.shape(), axes, keepdims)?;
        let kept_shape = shape::reduce(self.shape(), axes, true)?;
        let out_len = num_elements(&out_shape);
        let window: usize = axes.iter().map(|&a| self.shape()[a]).product();
        if window == 0 && matches!(op, ReduceOp::Max | ReduceOp::Min | ReduceOp::Mean) {
            return Err(Error::invalid(format!(
                "{op:?} over an empty reduction window"
            )));
        }
        let targets = broadcast_source_indices(&kept_shape, self.shape());
        let data = match (self.data(), op) {
            (TensorData::F32(v), _) => {
                let init = match op {
                    ReduceOp::Sum | ReduceOp::Mean => 0.0,
                    ReduceOp::Max => f32::NEG_INFINITY,
                    ReduceOp::Min => f32::INFINITY,
                };
                let mut acc = vec![init; out_len];
                for (&x, &t) in v.iter().zip(&targets) {
                    acc[t] = match op {
                        ReduceOp::Sum | ReduceOp::Mean => acc[t] + x,
                        ReduceOp::Max => acc[t].max(x),
                        ReduceOp::Min => acc[t].min(x),
                    };
                }
                if op == ReduceOp::Mean {
                    acc.iter_mut().for_each(|a| *a /= window as f32);
                }
                TensorData::F32(acc)
            }
            (TensorData::I32(_) | TensorData::Bool(_), ReduceOp::Mean) => {
                return self.cast(DType::F32).reduce(op, axes, keepdims)
            }
            (TensorData::Bool(_), ReduceOp::Sum) => {
                return self.cast(DType::I32).reduce(op, axes, keepdims)
            }
            (TensorData::I32(v), _) => {
                let init = match op {
                    ReduceOp::Max => i32::MIN,
                    ReduceOp::Min => i32::MAX,
                    _ => 0,
                };
                let mut acc = vec![init; out_len];
                for (&x, &t) in v.iter().zip(&targets) {
                    acc[t] = match op {
                        ReduceOp::Max => acc[t].max(x),
                        ReduceOp::Min => acc[t].min(x),
                        _ => acc[t].wrapping_add(x),
                    };
                }
                TensorData::I32(acc)
            }
            (TensorData::Bool(v), _) => {
                let any = op == ReduceOp::Max;
                let mut acc = vec![!any; out_len];
                for (&x, &t) in v.iter().zip(&targets) {
                    acc[t] = if any { acc[t] || x } else { acc[t] && x };
                }
                TensorData::Bool(acc)
            }
        };
        Tensor::new(out_shape, data)
    }

    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let shapes: Vec<&[usize]> = tensors.iter().map(|t| t.shape()).collect();
        let out_shape = shape::concat(&shapes, axis)?;
        let dtype = tensors
            .iter()
            .map(|t| t.dtype())
            .max()
            .expect("concat checked non-empty");
        let cast: Vec<Tensor> = tensors.iter().map(|t| t.cast(dtype)).collect();
        let outer: usize = out_shape[..axis].iter().product();
        let chunks: Vec<usize> = cast
            .iter()
            .map(|t| t.shape()[axis..].iter().product())
            .collect();
        let mut indices: Vec<(usize, usize)> = Vec::with_capacity(num_elements(&out_shape));
        for o in 0..outer {
            for (ti, &chunk) in chunks.iter().enumerate() {
                indices.extend((0..chunk).map(|e| (ti, o * chunk + e)));
            }
        }
        let data = match dtype {
            DType::F32 => {
                let srcs: Vec<&[f32]> = cast.iter().map(|t| t.as_f32().unwrap()).collect();
                TensorData::F32(indices.iter().map(|&(t, i)| srcs[t][i]).collect())
            }
            DType::I32 => {
                let srcs: Vec<&[i32]> = cast.iter().map(|t| t.as_i32().unwrap()).collect();
                TensorData::I32(indices.iter().map(|&(t, i)| srcs[t][i]).collect())
            }
            DType::Bool => {
                let srcs: Vec<&[bool]> = cast.iter().map(|t| t.as_bool().unwrap()).collect();
                TensorData::Bool(indices.iter().map(|&(t, i)| srcs[t][i]).collect())
            }
        };
        Tensor::new(out_shape, data)
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let out_shape = shape::slice(self.shape(), axis, start, end)?;
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let extent = self.shape()[axis];
        let indices = (0..outer).flat_map(move |o| {
            (start * inner..end * inner).map(move |i| o * extent * inner + i)
        });
        Tensor::new(out_shape, self.data().gather(indices))
    }

    /// Pads `axis` with `before`/`after` copies of `fill`, which must match
    /// the tensor's dtype.
    pub fn pad(&self, axis: usize, before: usize, after: usize, fill: Scalar) -> Result<Tensor> {
        if fill.dtype() != self.dtype() {
            return Err(Error::invalid(format!(
                "pad fill {fill:?} does not match dtype {}",
                self.dtype()
            )));
        }
        let out_shape = shape::pad(self.shape(), axis, before, after)?;
        let fill_tensor = |n: usize| {
            let mut s = self.shape().to_vec();
            s[axis] = n;
            Tensor::full(&s, fill)
        };
        Tensor::concat(&[&fill_tensor(before), self, &fill_tensor(after)], axis)
            .inspect(|t| {
                debug_assert_eq!(t.shape(), &out_shape[..]);
            })
    }

    pub fn transpose(&self, perm: &[usize]) -> Result<Tensor> {
        let out_shape = shape::transpose(self.shape(), perm)?;
        let in_strides = shape::strides(self.shape());
        let permuted: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let total = self.len();
        let mut indices = Vec::with_capacity(total);
        let mut counter = vec![0usize; out_shape.len()];
        let mut offset = 0usize;
        for _ in 0..total {
            indices.push(offset);
            for axis in (0..out_shape.len()).rev() {
                counter[axis] += 1;
                offset += permuted[axis];
                if counter[axis] < out_shape[axis] {
                    break;
                }
                offset -= permuted[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
        Tensor::new(out_shape, self.data().gather(indices.into_iter()))
    }

    /// Selects entries along `axis` in the given order (indices may repeat).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        let extent = self.shape()[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(Error::invalid(format!(
                "index {bad} out of range for extent {extent}"
            )));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = indices.len();
        let flat = (0..outer).flat_map(|o| {
            indices
                .iter()
                .flat_map(move |&i| (0..inner).map(move |e| (o * extent + i) * inner + e))
        });
        Tensor::new(out_shape, self.data().gather(flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::from_f32(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn add_componentwise_and_broadcast() {
        let a = f(&[2], &[1.0, 2.0]);
        let b = f(&[2], &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().as_f32().unwrap(), &[4.0, 6.0]);

        let col = f(&[2, 1], &[1.0, 2.0]);
        let row = f(&[2], &[10.0, 20.0]);
        let out = col.add(&row).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        // Brute-force loop over broadcast indices.
        let mut expected = vec![];
        for i in 0..2 {
            for j in 0..2 {
                expected.push([1.0, 2.0][i] + [10.0, 20.0][j]);
            }
        }
        assert_eq!(out.as_f32().unwrap(), &expected[..]);
        assert_eq!(expected, vec![11.0, 21.0, 12.0, 22.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = f(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 7.0, -1.25]);
        assert_eq!(x.mul(&Tensor::ones_like(&x)).unwrap(), x);
    }

    #[test]
    fn mismatched_shapes_name_both() {
        let err = f(&[2, 3], &[0.0; 6]).add(&f(&[4], &[0.0; 4])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn dtype_promotion() {
        let i = Tensor::from_i32(vec![2], vec![1, 2]).unwrap();
        let b = Tensor::from_bool(vec![2], vec![true, false]).unwrap();
        let x = f(&[2], &[0.5, 0.5]);
        assert_eq!(i.add(&b).unwrap().dtype(), DType::I32);
        assert_eq!(b.add(&x).unwrap().dtype(), DType::F32);
        assert_eq!(i.add(&b).unwrap().as_i32().unwrap(), &[2, 2]);
        assert_eq!(
            b.add(&Tensor::from_bool(vec![2], vec![false, false]).unwrap())
                .unwrap()
                .as_bool()
                .unwrap(),
            &[true, false]
        );
        assert!(b.binary(BinaryOp::Div, &b).is_err());
    }

    #[test]
    fn floored_modulo() {
        let a = Tensor::from_i32(vec![3], vec![-7, 7, 5]).unwrap();
        let b = Tensor::from_i32(vec![1], vec![3]).unwrap();
        assert_eq!(a.binary(BinaryOp::Rem, &b).unwrap().as_i32().unwrap(), &[2, 1, 2]);
        let x = f(&[2], &[-7.0, 7.5]);
        let out = x.binary(BinaryOp::Rem, &f(&[1], &[3.0])).unwrap();
        assert_eq!(out.as_f32().unwrap(), &[2.0, 1.5]);
    }

    #[test]
    fn matmul_small_cases() {
        let x = f(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(Tensor::eye(3).matmul(&x).unwrap(), x);
        let row = f(&[1, 2], &[1.0, 2.0]);
        let col = f(&[2, 1], &[3.0, 4.0]);
        assert_eq!(row.matmul(&col).unwrap().as_f32().unwrap(), &[11.0]);
    }

    #[test]
    fn reduce_cases() {
        let x = f(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            x.reduce(ReduceOp::Sum, &[1], false).unwrap().as_f32().unwrap(),
            &[3.0, 7.0]
        );
        let empty = Tensor::zeros(DType::F32, &[2, 0]);
        assert!(empty.reduce(ReduceOp::Max, &[1], false).is_err());
        assert_eq!(
            empty.reduce(ReduceOp::Sum, &[1], false).unwrap().as_f32().unwrap(),
            &[0.0, 0.0]
        );
        assert!(x.reduce(ReduceOp::Sum, &[2], false).is_err());
    }

    #[test]
    fn manipulation_cases() {
        let x = f(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = x.reshape(&[3, 2]).unwrap();
        assert_eq!(r.as_f32().unwrap(), x.as_f32().unwrap());
        assert_eq!(r.shape(), &[3, 2]);

        let p = f(&[1, 3], &[1.0, 2.0, 3.0])
            .pad(1, 0, 2, Scalar::F32(0.0))
            .unwrap();
        assert_eq!(p.shape(), &[1, 5]);
        assert_eq!(p.as_f32().unwrap(), &[1.0, 2.0, 3.0, 0.0, 0.0]);

        let t = x.transpose(&[1, 0]).unwrap();
        assert_eq!(t.as_f32().unwrap(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);

        let s = x.slice(1, 1, 3).unwrap();
        assert_eq!(s.as_f32().unwrap(), &[1.0, 2.0, 4.0, 5.0]);
        assert!(x.slice(1, 2, 4).is_err());

        let sel = x.index_select(0, &[1, 1, 0]).unwrap();
        assert_eq!(sel.shape(), &[3, 3]);
        assert_eq!(&sel.as_f32().unwrap()[..3], &[3.0, 4.0, 5.0]);
    }
}
