//! Per-timestep normalization over the last channel axis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{require_f32, BuildLayer};
use crate::error::Result;
use crate::layer::{
    finish, impl_meta, stateless_step, BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Layer,
    Rms,
}

#[derive(Debug)]
pub struct Normalization {
    meta: LayerMeta,
    kind: NormKind,
    epsilon: f32,
    scale: Tensor,
    bias: Option<Tensor>,
}

impl Normalization {
    fn normalize(&self, v: &Tensor) -> Result<Tensor> {
        let x = v.as_f32()?;
        let n = *v.shape().last().expect("channel rank >= 1");
        let scale = self.scale.as_f32()?;
        let bias = self.bias.as_ref().map(|b| b.as_f32()).transpose()?;
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(n) {
            let (center, denom) = match self.kind {
                NormKind::Layer => {
                    let mean = row.iter().sum::<f32>() / n as f32;
                    let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<f32>() / n as f32;
                    (mean, (var + self.epsilon).sqrt())
                }
                NormKind::Rms => {
                    let ms = row.iter().map(|&a| a * a).sum::<f32>() / n as f32;
                    (0.0, (ms + self.epsilon).sqrt())
                }
            };
            for (i, &a) in row.iter().enumerate() {
                let mut y = (a - center) / denom * scale[i];
                if let Some(b) = bias {
                    y += b[i];
                }
                out.push(y);
            }
        }
        Tensor::new(v.shape().to_vec(), TensorData::F32(out))
    }
}

impl Layer for Normalization {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties::pointwise()
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let zero_preserving = self.bias.is_none();
        Ok((x.apply_values(|v| self.normalize(v), zero_preserving)?, Emits::Empty))
    }

    stateless_step!();

    fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert(self.meta.param_name("scale"), self.scale.clone());
        if let Some(b) = &self.bias {
            out.insert(self.meta.param_name("bias"), b.clone());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f32,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            name: None,
            epsilon: default_epsilon(),
        }
    }
}

fn default_epsilon() -> f32 {
    1e-6
}

pub struct NormSpec<'a>(pub NormKind, pub &'a NormConfig);

impl BuildLayer for NormSpec<'_> {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        let (kind, cfg) = (self.0, self.1);
        let what = match kind {
            NormKind::Layer => "LayerNormalization",
            NormKind::Rms => "RMSNormalization",
        };
        require_f32(ctx, input, what)?;
        if input.shape.is_empty() || input.last_dim() == 0 {
            return Err(ctx.error("", format!("{what} needs a non-empty channel axis, got {input}")));
        }
        if !(cfg.epsilon > 0.0) {
            return Err(ctx.error("epsilon", "must be positive"));
        }
        let d = input.last_dim();
        let scale = ctx.param("scale", &[d])?;
        let bias = match kind {
            NormKind::Layer => Some(ctx.param("bias", &[d])?),
            NormKind::Rms => None,
        };
        let kind_name = match kind {
            NormKind::Layer => "layer_norm",
            NormKind::Rms => "rms_norm",
        };
        Ok(finish(Normalization {
            meta: LayerMeta::new(kind_name, ctx, input.clone(), input.clone()),
            kind,
            epsilon: cfg.epsilon,
            scale,
            bias,
        }))
    }
}
