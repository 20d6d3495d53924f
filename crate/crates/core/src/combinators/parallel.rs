use num_integer::Integer;

use super::CombineMode;
use crate::error::{Error, Result};
use crate::exec;
use crate::layer::{BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties, ReceptiveField, State};
use crate::sequence::{ChannelSpec, Sequence};

/// Branches fed the same input, merged by a [`CombineMode`]. In step mode
/// each branch's output passes through a delay line so all branches share
/// the largest branch latency.
#[derive(Debug)]
pub struct Parallel {
    meta: LayerMeta,
    children: Vec<Box<dyn Layer>>,
    mode: CombineMode,
}

impl Parallel {
    /// `kind` is `"parallel"` or a layer that is parallel underneath, such
    /// as `"residual"`.
    pub fn build(
        kind: &'static str,
        ctx: &BuildCtx,
        input: ChannelSpec,
        children: Vec<Box<dyn Layer>>,
        mode: CombineMode,
    ) -> Result<Box<dyn Layer>> {
        let Some(first) = children.first() else {
            return Err(ctx.error("children", "needs at least one branch"));
        };
        let ratio = first.properties().output_ratio;
        for (i, child) in children.iter().enumerate() {
            if child.input_spec() != &input {
                return Err(ctx.error(
                    &format!("children[{i}]"),
                    format!("expects {} but receives {input}", child.input_spec()),
                ));
            }
            if child.properties().output_ratio != ratio {
                return Err(ctx.error(
                    &format!("children[{i}]"),
                    format!(
                        "output ratio {} differs from {}",
                        child.properties().output_ratio,
                        ratio
                    ),
                ));
            }
        }
        let specs: Vec<&ChannelSpec> = children.iter().map(|c| c.output_spec()).collect();
        let output = mode.output_spec(&specs).map_err(|m| ctx.error("combine", m))?;
        let meta = LayerMeta::new(kind, ctx, input, output);
        Ok(crate::layer::finish(Parallel { meta, children, mode }))
    }

    fn run_children<T: Send>(&self, f: impl Fn(&dyn Layer) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        exec::map_range(self.children.len(), true, |i| f(self.children[i].as_ref()))
            .into_iter()
            .collect()
    }
}

impl Layer for Parallel {
    crate::layer::impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        let props: Vec<&LayerProperties> = self.children.iter().map(|c| c.properties()).collect();
        let ratio = props[0].output_ratio;
        let fields: Vec<&ReceptiveField> = props.iter().map(|p| &p.receptive_field).collect();
        LayerProperties {
            output_ratio: ratio,
            block_size: props.iter().fold(1, |acc, p| acc.lcm(&p.block_size)),
            output_latency: props.iter().map(|p| p.output_latency).max().unwrap_or(0),
            receptive_field: ReceptiveField::union_all(ratio, &fields),
            supports_step: props.iter().all(|p| p.supports_step),
            grows_state: props.iter().any(|p| p.grows_state),
            position_sensitive: props.iter().any(|p| p.position_sensitive),
        }
    }

    fn forward(&self, x: &Sequence, training: bool, constants: &Constants) -> Result<(Sequence, Emits)> {
        let results = self.run_children(|c| c.layer_with_emits(x, training, constants))?;
        let (outs, emits): (Vec<Sequence>, Vec<Emits>) = results.into_iter().unzip();
        Ok((self.mode.combine(&outs, self.output_spec())?, Emits::Tuple(emits)))
    }

    fn make_state(&self, batch: usize, training: bool, constants: &Constants) -> Result<State> {
        let latency = self.properties().output_latency;
        let mut states = Vec::with_capacity(self.children.len());
        for child in &self.children {
            let lag = latency - child.properties().output_latency;
            states.push(State::Tuple(vec![
                child.initial_state(batch, training, constants)?,
                State::Buffer(Sequence::invalid(batch, lag, child.output_spec())),
            ]));
        }
        Ok(State::Tuple(states))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        training: bool,
        constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let name = self.name().to_string();
        let states = state.into_tuple(self.children.len(), &name)?;
        let mut pairs = Vec::with_capacity(states.len());
        for s in states {
            let mut parts = s.into_tuple(2, &name)?.into_iter();
            let child_state = parts.next().expect("two parts");
            let line = parts.next().expect("two parts").into_buffer(&name)?;
            pairs.push((child_state, line));
        }
        let mut outs = Vec::with_capacity(pairs.len());
        let mut next = Vec::with_capacity(pairs.len());
        let mut emits = Vec::with_capacity(pairs.len());
        for (child, (s, line)) in self.children.iter().zip(pairs) {
            let (y, s, e) = child.step_with_emits(x, s, training, constants)?;
            if line.batch() != y.batch() {
                return Err(Error::StateMismatch(name));
            }
            let lag = line.time();
            let joined = Sequence::concatenate(&[line, y])?;
            let n = joined.time() - lag;
            outs.push(joined.slice_time(0, n)?);
            next.push(State::Tuple(vec![s, State::Buffer(joined.slice_time(n, joined.time())?)]));
            emits.push(e);
        }
        Ok((self.mode.combine(&outs, self.output_spec())?, State::Tuple(next), Emits::Tuple(emits)))
    }

    fn children(&self) -> Vec<&dyn Layer> {
        self.children.iter().map(|c| c.as_ref()).collect()
    }
}
