//! Leaf layers.

pub mod attention;
pub mod basic;
pub mod conditioning;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod frame;
pub mod lstm;
pub mod norm;
pub mod pointwise;
pub mod resample;
pub mod transpose;

use crate::error::Result;
use crate::layer::{BuildCtx, Layer};
use crate::sequence::ChannelSpec;
use crate::tensor::DType;

/// A layer configuration that can be materialized for a known input spec.
/// `build` runs inside the name scope of the layer being built.
pub trait BuildLayer {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>>;
}

pub(crate) fn require_f32(ctx: &BuildCtx, input: &ChannelSpec, what: &str) -> Result<()> {
    if input.dtype != DType::F32 {
        return Err(ctx.error("", format!("{what} expects f32 channels, got {input}")));
    }
    Ok(())
}

pub(crate) fn require_rank(ctx: &BuildCtx, input: &ChannelSpec, rank: usize, what: &str) -> Result<()> {
    if input.shape.len() != rank {
        return Err(ctx.error(
            "",
            format!("{what} expects channel rank {rank}, got {input}"),
        ));
    }
    Ok(())
}

pub(crate) fn require_positive(ctx: &BuildCtx, field: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(ctx.error(field, "must be at least 1"));
    }
    Ok(())
}

pub(crate) fn default_true() -> bool {
    true
}
