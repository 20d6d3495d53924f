//! Elementwise activations and scalar arithmetic.

use serde::{Deserialize, Serialize};

use super::{require_f32, BuildLayer};
use crate::error::Result;
use crate::layer::{
    finish, impl_meta, stateless_step, BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{BinaryOp, DType, ReduceOp, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PointwiseKind {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Swish,
    Softplus,
    LeakyRelu(f32),
    Elu(f32),
    Abs,
    Exp,
    Log,
    Power(f32),
    Maximum(f32),
    Minimum(f32),
    Mod(f32),
    Scale(f32),
    Add(f32),
    /// Softmax over one channel axis.
    Softmax(i64),
}

impl PointwiseKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PointwiseKind::Relu => "relu",
            PointwiseKind::Gelu => "gelu",
            PointwiseKind::Sigmoid => "sigmoid",
            PointwiseKind::Tanh => "tanh",
            PointwiseKind::Swish => "swish",
            PointwiseKind::Softplus => "softplus",
            PointwiseKind::LeakyRelu(_) => "leaky_relu",
            PointwiseKind::Elu(_) => "elu",
            PointwiseKind::Abs => "abs",
            PointwiseKind::Exp => "exp",
            PointwiseKind::Log => "log",
            PointwiseKind::Power(_) => "power",
            PointwiseKind::Maximum(_) => "maximum",
            PointwiseKind::Minimum(_) => "minimum",
            PointwiseKind::Mod(_) => "mod",
            PointwiseKind::Scale(_) => "scale",
            PointwiseKind::Add(_) => "add",
            PointwiseKind::Softmax(_) => "softmax",
        }
    }

    /// Whether f(0) == 0, so masked inputs stay masked.
    pub fn zero_preserving(&self) -> bool {
        match *self {
            PointwiseKind::Relu
            | PointwiseKind::Gelu
            | PointwiseKind::Tanh
            | PointwiseKind::Swish
            | PointwiseKind::LeakyRelu(_)
            | PointwiseKind::Elu(_)
            | PointwiseKind::Abs
            | PointwiseKind::Mod(_)
            | PointwiseKind::Scale(_) => true,
            PointwiseKind::Power(p) => p > 0.0,
            PointwiseKind::Maximum(v) => v <= 0.0,
            PointwiseKind::Minimum(v) => v >= 0.0,
            PointwiseKind::Add(v) => v == 0.0,
            PointwiseKind::Sigmoid
            | PointwiseKind::Softplus
            | PointwiseKind::Exp
            | PointwiseKind::Log
            | PointwiseKind::Softmax(_) => false,
        }
    }

    fn supports_int(&self) -> bool {
        matches!(
            self,
            PointwiseKind::Abs | PointwiseKind::Maximum(_) | PointwiseKind::Minimum(_) | PointwiseKind::Mod(_)
        )
    }

    /// Scalar form of the float activations.
    pub fn apply_scalar(&self, x: f32) -> f32 {
        match *self {
            PointwiseKind::Relu => x.max(0.0),
            PointwiseKind::Gelu => gelu(x),
            PointwiseKind::Sigmoid => sigmoid(x),
            PointwiseKind::Tanh => x.tanh(),
            PointwiseKind::Swish => x * sigmoid(x),
            PointwiseKind::Softplus => softplus(x),
            PointwiseKind::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            PointwiseKind::Elu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
            PointwiseKind::Abs => x.abs(),
            PointwiseKind::Exp => x.exp(),
            PointwiseKind::Log => x.ln(),
            PointwiseKind::Power(p) => x.powf(p),
            PointwiseKind::Maximum(v) => x.max(v),
            PointwiseKind::Minimum(v) => x.min(v),
            PointwiseKind::Mod(d) => x - d * (x / d).floor(),
            PointwiseKind::Scale(s) => x * s,
            PointwiseKind::Add(v) => x + v,
            PointwiseKind::Softmax(_) => unreachable!("softmax is not elementwise"),
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Tanh approximation of GELU.
fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[derive(Debug)]
pub struct Pointwise {
    meta: LayerMeta,
    op: PointwiseKind,
    /// Softmax axis resolved against the full values shape.
    softmax_axis: usize,
}

impl Pointwise {
    pub fn build(op: PointwiseKind, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        if !(input.dtype == DType::F32 || (input.dtype == DType::I32 && op.supports_int())) {
            require_f32(ctx, input, op.kind_name())?;
        }
        let mut softmax_axis = 0;
        if let PointwiseKind::Softmax(axis) = op {
            let rank = input.shape.len() as i64;
            let resolved = if axis < 0 { axis + rank } else { axis };
            if rank == 0 || !(0..rank).contains(&resolved) {
                return Err(ctx.error("axis", format!("axis {axis} out of range for {input}")));
            }
            softmax_axis = resolved as usize + 2;
        }
        if let PointwiseKind::Mod(d) = op {
            if d == 0.0 {
                return Err(ctx.error("divisor", "must be nonzero"));
            }
            if input.dtype == DType::I32 && d.fract() != 0.0 {
                return Err(ctx.error("divisor", "must be integral for i32 input"));
            }
        }
        Ok(finish(Pointwise {
            meta: LayerMeta::new(op.kind_name(), ctx, input.clone(), input.clone()),
            op,
            softmax_axis,
        }))
    }

    pub fn kind(&self) -> PointwiseKind {
        self.op
    }

    fn apply(&self, values: &Tensor) -> Result<Tensor> {
        if values.dtype() == DType::I32 {
            let (op, v) = match self.op {
                PointwiseKind::Abs => return Ok(int_abs(values)),
                PointwiseKind::Maximum(v) => (BinaryOp::Max, v),
                PointwiseKind::Minimum(v) => (BinaryOp::Min, v),
                PointwiseKind::Mod(v) => (BinaryOp::Rem, v),
                _ => unreachable!("checked at build"),
            };
            return values.binary(op, &Tensor::scalar(Scalar::I32(v as i32)));
        }
        match self.op {
            PointwiseKind::Softmax(_) => softmax(values, self.softmax_axis),
            op => values.map_f32(|x| op.apply_scalar(x)),
        }
    }
}

fn int_abs(values: &Tensor) -> Tensor {
    let v = values.as_i32().expect("i32 checked");
    Tensor::from_i32(values.shape().to_vec(), v.iter().map(|x| x.wrapping_abs()).collect())
        .expect("same shape")
}

fn softmax(values: &Tensor, axis: usize) -> Result<Tensor> {
    let max = values.reduce(ReduceOp::Max, &[axis], true)?;
    let e = values.binary(BinaryOp::Sub, &max)?.map_f32(f32::exp)?;
    let sum = e.reduce(ReduceOp::Sum, &[axis], true)?;
    e.binary(BinaryOp::Div, &sum)
}

impl Layer for Pointwise {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        Ok((x.apply_values(|v| self.apply(v), self.op.zero_preserving())?, Emits::Empty))
    }

    stateless_step!();
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakyReluConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_negative_slope")]
    pub negative_slope: f32,
}

fn default_negative_slope() -> f32 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EluConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f32,
}

fn default_alpha() -> f32 {
    1.0
}

/// Configs carrying one scalar operand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub value: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_axis")]
    pub axis: i64,
}

fn default_axis() -> i64 {
    -1
}

/// Pairs a config with the kind it builds.
pub struct PointwiseSpec(pub PointwiseKind);

impl BuildLayer for PointwiseSpec {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        Pointwise::build(self.0, input, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(op: PointwiseKind, values: Tensor) -> Sequence {
        let spec = ChannelSpec::new(values.shape()[2..].to_vec(), values.dtype());
        let layer = Pointwise::build(op, &spec, &mut BuildCtx::random(0)).unwrap();
        layer
            .layer(&Sequence::from_values(values).unwrap(), false, &Constants::new())
            .unwrap()
    }

    #[test]
    fn relu_and_softmax() {
        let y = run(PointwiseKind::Relu, Tensor::from_f32(vec![1, 2, 1], vec![-1.0, 2.0]).unwrap());
        assert_eq!(y.values().as_f32().unwrap(), &[0.0, 2.0]);
        assert!(y.is_masked());
        let y = run(PointwiseKind::Softmax(-1), Tensor::full(&[1, 1, 4], Scalar::F32(1.0)));
        assert_eq!(y.values().as_f32().unwrap(), &[0.25; 4]);
        assert!(!y.is_masked());
    }

    #[test]
    fn gelu_matches_f64_formula() {
        let xs: Vec<f32> = (-40..=40).map(|i| i as f32 * 0.1).collect();
        let y = run(PointwiseKind::Gelu, Tensor::from_f32(vec![1, xs.len(), 1], xs.clone()).unwrap());
        for (&x, &g) in xs.iter().zip(y.values().as_f32().unwrap()) {
            let x = x as f64;
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let oracle = 0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh());
            assert!((g as f64 - oracle).abs() < 1e-6, "gelu({x}) = {g}, want {oracle}");
        }
    }

    #[test]
    fn int_kinds_use_integer_arithmetic() {
        let v = Tensor::from_i32(vec![1, 3, 1], vec![-7, 5, 0]).unwrap();
        let y = run(PointwiseKind::Mod(3.0), v.clone());
        assert_eq!(y.values().as_i32().unwrap(), &[2, 2, 0]);
        let y = run(PointwiseKind::Abs, v);
        assert_eq!(y.values().as_i32().unwrap(), &[7, 5, 0]);
        let spec = ChannelSpec::new(vec![1], DType::I32);
        assert!(Pointwise::build(PointwiseKind::Exp, &spec, &mut BuildCtx::random(0)).is_err());
    }

    #[test]
    fn zero_preservation_table() {
        for op in [PointwiseKind::Relu, PointwiseKind::Tanh, PointwiseKind::Gelu, PointwiseKind::Swish, PointwiseKind::Elu(1.0)] {
            assert!(op.zero_preserving());
            assert_eq!(op.apply_scalar(0.0), 0.0, "{op:?}");
        }
        for op in [PointwiseKind::Sigmoid, PointwiseKind::Exp, PointwiseKind::Softplus] {
            assert!(!op.zero_preserving());
            assert_ne!(op.apply_scalar(0.0), 0.0, "{op:?}");
        }
    }
}
