//! Identity, Emit and channel-shape manipulation.

use serde::{Deserialize, Serialize};

use super::BuildLayer;
use crate::error::Result;
use crate::layer::{
    finish, impl_meta, stateless_step, BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties,
};
use crate::sequence::{ChannelSpec, Sequence};

#[derive(Debug)]
pub struct Identity {
    meta: LayerMeta,
}

impl Identity {
    pub fn build(input: &ChannelSpec, ctx: &BuildCtx) -> Box<dyn Layer> {
        finish(Identity {
            meta: LayerMeta::new("identity", ctx, input.clone(), input.clone()),
        })
    }
}

impl Layer for Identity {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        Ok((x.clone(), Emits::Empty))
    }

    stateless_step!();
}

/// Passes its input through and also emits it.
#[derive(Debug)]
pub struct Emit {
    meta: LayerMeta,
}

impl Layer for Emit {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        Ok((x.clone(), Emits::Sequence(x.clone())))
    }

    stateless_step!();
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl BuildLayer for IdentityConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        Ok(Identity::build(input, ctx))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl BuildLayer for EmitConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        Ok(finish(Emit {
            meta: LayerMeta::new("emit", ctx, input.clone(), input.clone()),
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum ShapeOp {
    Reshape(Vec<usize>),
    /// Channel permutation, in channel-axis indices.
    Transpose(Vec<usize>),
}

/// Channel-only reshapes and permutations. Batch and time are untouched.
#[derive(Debug)]
pub struct ShapeLayer {
    meta: LayerMeta,
    op: ShapeOp,
}

impl Layer for ShapeLayer {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let y = x.apply_values(
            |v| match &self.op {
                ShapeOp::Reshape(channel) => {
                    let mut shape = v.shape()[..2].to_vec();
                    shape.extend(channel);
                    v.reshape(&shape)
                }
                ShapeOp::Transpose(perm) => {
                    let mut full = vec![0, 1];
                    full.extend(perm.iter().map(|p| p + 2));
                    v.transpose(&full)
                }
            },
            true,
        )?;
        Ok((y, Emits::Empty))
    }

    stateless_step!();
}

fn resolve_axis(ctx: &BuildCtx, field: &str, axis: i64, rank: usize) -> Result<usize> {
    let r = rank as i64;
    let resolved = if axis < 0 { axis + r } else { axis };
    if !(0..r).contains(&resolved) {
        return Err(ctx.error(field, format!("axis {axis} out of range for channel rank {rank}")));
    }
    Ok(resolved as usize)
}

fn shape_layer(kind: &'static str, op: ShapeOp, input: &ChannelSpec, output: Vec<usize>, ctx: &BuildCtx) -> Box<dyn Layer> {
    finish(ShapeLayer {
        meta: LayerMeta::new(kind, ctx, input.clone(), ChannelSpec::new(output, input.dtype)),
        op,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReshapeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Target channel shape; at most one entry may be -1.
    pub shape: Vec<i64>,
}

impl BuildLayer for ReshapeConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let total = input.num_elements();
        let known: i64 = self.shape.iter().filter(|&&d| d != -1).product();
        let wildcards = self.shape.iter().filter(|&&d| d == -1).count();
        if self.shape.iter().any(|&d| d < -1) || wildcards > 1 {
            return Err(ctx.error("shape", format!("invalid target shape {:?}", self.shape)));
        }
        let shape: Vec<usize> = self
            .shape
            .iter()
            .map(|&d| {
                if d == -1 {
                    if known == 0 { 0 } else { total / known as usize }
                } else {
                    d as usize
                }
            })
            .collect();
        if shape.iter().product::<usize>() != total {
            return Err(ctx.error(
                "shape",
                format!("cannot reshape {input} to {:?}", self.shape),
            ));
        }
        Ok(shape_layer("reshape", ShapeOp::Reshape(shape.clone()), input, shape, ctx))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlattenConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl BuildLayer for FlattenConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let shape = vec![input.num_elements()];
        Ok(shape_layer("flatten", ShapeOp::Reshape(shape.clone()), input, shape, ctx))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub axis: i64,
}

pub struct ExpandDims<'a>(pub &'a AxisConfig);
pub struct Squeeze<'a>(pub &'a AxisConfig);

impl BuildLayer for ExpandDims<'_> {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let axis = resolve_axis(ctx, "axis", self.0.axis, input.shape.len() + 1)?;
        let mut shape = input.shape.clone();
        shape.insert(axis, 1);
        Ok(shape_layer("expand_dims", ShapeOp::Reshape(shape.clone()), input, shape, ctx))
    }
}

impl BuildLayer for Squeeze<'_> {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let axis = resolve_axis(ctx, "axis", self.0.axis, input.shape.len())?;
        if input.shape[axis] != 1 {
            return Err(ctx.error("axis", format!("axis {axis} of {input} has extent != 1")));
        }
        let mut shape = input.shape.clone();
        shape.remove(axis);
        Ok(shape_layer("squeeze", ShapeOp::Reshape(shape.clone()), input, shape, ctx))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveAxisConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub source: i64,
    pub destination: i64,
}

impl BuildLayer for MoveAxisConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let rank = input.shape.len();
        let src = resolve_axis(ctx, "source", self.source, rank)?;
        let dst = resolve_axis(ctx, "destination", self.destination, rank)?;
        let mut perm: Vec<usize> = (0..rank).filter(|&a| a != src).collect();
        perm.insert(dst, src);
        permute(input, perm, "move_axis", ctx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransposeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub perm: Vec<usize>,
}

impl BuildLayer for TransposeConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let mut sorted = self.perm.clone();
        sorted.sort_unstable();
        if sorted != (0..input.shape.len()).collect::<Vec<_>>() {
            return Err(ctx.error(
                "perm",
                format!("{:?} is not a permutation of the channel axes of {input}", self.perm),
            ));
        }
        permute(input, self.perm.clone(), "transpose", ctx)
    }
}

fn permute(input: &ChannelSpec, perm: Vec<usize>, kind: &'static str, ctx: &BuildCtx) -> Result<Box<dyn Layer>> {
    let shape = perm.iter().map(|&p| input.shape[p]).collect();
    Ok(shape_layer(kind, ShapeOp::Transpose(perm), input, shape, ctx))
}
