use crate::error::Result;
use crate::layer::streaming::layer_by_steps;
use crate::layer::{BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties, State};
use crate::sequence::Sequence;

/// Fixes the step block size of a child. Layer mode steps the child in
/// blocks of that size, flushes, and trims by the child's latency.
#[derive(Debug)]
pub struct Blockwise {
    meta: LayerMeta,
    child: Box<dyn Layer>,
    block_size: usize,
}

impl Blockwise {
    pub fn build(ctx: &BuildCtx, child: Box<dyn Layer>, block_size: usize) -> Result<Box<dyn Layer>> {
        let props = child.properties();
        if !props.supports_step {
            return Err(ctx.error("layer", format!("`{}` is not steppable", child.name())));
        }
        if block_size == 0 || !block_size.is_multiple_of(props.block_size) {
            return Err(ctx.error(
                "block_size",
                format!("{block_size} is not a positive multiple of {}", props.block_size),
            ));
        }
        let meta = LayerMeta::new("blockwise", ctx, child.input_spec().clone(), child.output_spec().clone());
        Ok(crate::layer::finish(Blockwise {
            meta,
            child,
            block_size,
        }))
    }
}

impl Layer for Blockwise {
    crate::layer::impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties {
            block_size: self.block_size,
            ..self.child.properties().clone()
        }
    }

    fn forward(&self, x: &Sequence, training: bool, constants: &Constants) -> Result<(Sequence, Emits)> {
        let (y, run) = layer_by_steps(self.child.as_ref(), x, self.block_size, training, constants)?;
        let emits = Emits::concat_steps(&run.emits[..run.input_steps])?;
        Ok((y, emits))
    }

    fn make_state(&self, batch: usize, training: bool, constants: &Constants) -> Result<State> {
        self.child.initial_state(batch, training, constants)
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        training: bool,
        constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        self.child.step_with_emits(x, state, training, constants)
    }

    fn children(&self) -> Vec<&dyn Layer> {
        vec![self.child.as_ref()]
    }
}
