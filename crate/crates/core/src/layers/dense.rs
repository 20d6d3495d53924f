use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{default_true, require_f32, require_positive, BuildLayer};
use crate::error::Result;
use crate::layer::{
    finish, impl_meta, stateless_step, BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::Tensor;

/// Affine map over the last channel axis, applied independently per
/// timestep.
#[derive(Debug)]
pub struct Dense {
    meta: LayerMeta,
    kernel: Tensor,
    bias: Option<Tensor>,
}

impl Dense {
    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }
}

impl Layer for Dense {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let zero_preserving = self.bias.is_none();
        let y = x.apply_values(
            |v| {
                let y = v.matmul(&self.kernel)?;
                match &self.bias {
                    Some(b) => y.add(b),
                    None => Ok(y),
                }
            },
            zero_preserving,
        )?;
        Ok((y, Emits::Empty))
    }

    stateless_step!();

    fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert(self.meta.param_name("kernel"), self.kernel.clone());
        if let Some(b) = &self.bias {
            out.insert(self.meta.param_name("bias"), b.clone());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub units: usize,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

impl BuildLayer for DenseConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "Dense")?;
        require_positive(ctx, "units", self.units)?;
        if input.shape.is_empty() {
            return Err(ctx.error("", format!("Dense needs a channel axis, got {input}")));
        }
        let mut out_shape = input.shape.clone();
        *out_shape.last_mut().expect("non-empty") = self.units;
        let kernel = ctx.param("kernel", &[input.last_dim(), self.units])?;
        let bias = if self.use_bias {
            Some(ctx.param("bias", &[self.units])?)
        } else {
            None
        };
        Ok(finish(Dense {
            meta: LayerMeta::new("dense", ctx, input.clone(), ChannelSpec::f32(out_shape)),
            kernel,
            bias,
        }))
    }
}
