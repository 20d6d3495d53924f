use num_rational::Rational64;

use super::CombineMode;
use crate::error::Result;
use crate::exec;
use crate::layer::{receptive, BuildCtx, Constants, Emits, Interval, Layer, LayerMeta, LayerProperties, ReceptiveField};
use crate::sequence::{ChannelSpec, Sequence};

/// Runs `forward` on the input and `backward` on each row's valid region
/// reversed in time, then merges the two. Layer-wise only.
#[derive(Debug)]
pub struct Bidirectional {
    meta: LayerMeta,
    forward: Box<dyn Layer>,
    backward: Box<dyn Layer>,
    mode: CombineMode,
}

/// Reverses `[0, end)` of every row, where `end` is one past the row's last
/// valid step. Applying it twice is the identity.
pub fn reverse_valid(x: &Sequence) -> Result<Sequence> {
    let (batch, time) = (x.batch(), x.time());
    let m = x.mask_slice();
    let mut index = Vec::with_capacity(batch * time);
    for b in 0..batch {
        let end = (0..time).rev().find(|&t| m[b * time + t]).map_or(0, |t| t + 1);
        index.extend((0..time).map(|t| b * time + if t < end { end - 1 - t } else { t }));
    }
    let mut flat = vec![batch * time];
    flat.extend(x.channel_shape());
    let values = x
        .values()
        .reshape(&flat)?
        .index_select(0, &index)?
        .reshape(x.values().shape())?;
    let mask = x.mask().reshape(&[batch * time])?.index_select(0, &index)?.reshape(&[batch, time])?;
    let y = Sequence::new(values, mask)?;
    Ok(if x.is_masked() { y.mask_invalid() } else { y })
}

impl Bidirectional {
    pub fn build(
        ctx: &BuildCtx,
        input: ChannelSpec,
        forward: Box<dyn Layer>,
        backward: Box<dyn Layer>,
        mode: CombineMode,
    ) -> Result<Box<dyn Layer>> {
        let one = Rational64::from_integer(1);
        for (field, child) in [("forward", &forward), ("backward", &backward)] {
            if child.input_spec() != &input {
                return Err(ctx.error(
                    field,
                    format!("expects {} but receives {input}", child.input_spec()),
                ));
            }
            if child.properties().output_ratio != one {
                return Err(ctx.error(field, "Bidirectional children must have output ratio 1"));
            }
        }
        let output = mode
            .output_spec(&[forward.output_spec(), backward.output_spec()])
            .map_err(|m| ctx.error("combine", m))?;
        let meta = LayerMeta::new("bidirectional", ctx, input, output);
        Ok(crate::layer::finish(Bidirectional {
            meta,
            forward,
            backward,
            mode,
        }))
    }
}

impl Layer for Bidirectional {
    crate::layer::impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        let one = Rational64::from_integer(1);
        let fwd = self.forward.properties().receptive_field.overall(one);
        let bwd = self.backward.properties().receptive_field.overall(one).map(Interval::mirror);
        let rf = receptive::hull(fwd, bwd);
        LayerProperties {
            receptive_field: ReceptiveField::new(vec![rf]),
            supports_step: false,
            ..LayerProperties::pointwise()
        }
    }

    fn forward(&self, x: &Sequence, training: bool, constants: &Constants) -> Result<(Sequence, Emits)> {
        let (fwd, bwd) = exec::join(
            true,
            || self.forward.layer_with_emits(x, training, constants),
            || -> Result<(Sequence, Emits)> {
                let (y, e) = self.backward.layer_with_emits(&reverse_valid(x)?, training, constants)?;
                Ok((reverse_valid(&y)?, e))
            },
        );
        let ((f, fe), (b, be)) = (fwd?, bwd?);
        Ok((self.mode.combine(&[f, b], self.output_spec())?, Emits::Tuple(vec![fe, be])))
    }

    fn children(&self) -> Vec<&dyn Layer> {
        vec![self.forward.as_ref(), self.backward.as_ref()]
    }
}
