use num_integer::Integer;
use num_rational::Rational64;

use crate::error::Result;
use crate::layer::{BuildCtx, Constants, Emits, Layer, LayerMeta, LayerProperties, ReceptiveField, State};
use crate::sequence::{ChannelSpec, Sequence};

/// Children applied in order. Step mode threads a tuple of child states.
///
/// A child fed by upstream latency sees its input shifted in time. When the
/// shift is not a multiple of the child's block size, an internal delay
/// line rounds it up so every child stays block aligned.
#[derive(Debug)]
pub struct Serial {
    meta: LayerMeta,
    children: Vec<Box<dyn Layer>>,
    /// Extra delay inserted before each child in step mode.
    align: Vec<usize>,
}

impl Serial {
    /// `kind` is `"serial"` or a layer that is serial underneath, such as
    /// `"repeat"`.
    pub fn build(
        kind: &'static str,
        ctx: &BuildCtx,
        input: ChannelSpec,
        children: Vec<Box<dyn Layer>>,
    ) -> Result<Box<dyn Layer>> {
        let mut spec = input.clone();
        for (i, child) in children.iter().enumerate() {
            if child.input_spec() != &spec {
                return Err(ctx.error(
                    &format!("children[{i}]"),
                    format!("expects {} but receives {spec}", child.input_spec()),
                ));
            }
            spec = child.output_spec().clone();
        }
        let mut align = vec![0; children.len()];
        if children.iter().all(|c| c.properties().supports_step) {
            let mut delay = Rational64::from_integer(0);
            for (i, child) in children.iter().enumerate() {
                let p = child.properties();
                let d = delay.ceil().to_integer() as usize;
                if p.position_sensitive && d > 0 {
                    return Err(ctx.error(
                        &format!("children[{i}]"),
                        format!(
                            "`{}` depends on stream position and cannot follow {d} steps of latency",
                            child.name()
                        ),
                    ));
                }
                align[i] = d.next_multiple_of(p.block_size) - d;
                delay = Rational64::from_integer((d + align[i]) as i64) * p.output_ratio
                    + Rational64::from_integer(p.output_latency as i64);
            }
        }
        let meta = LayerMeta::new(kind, ctx, input, spec);
        Ok(crate::layer::finish(Serial { meta, children, align }))
    }

    /// Delay inserted before each child in step mode.
    pub fn alignment(&self) -> &[usize] {
        &self.align
    }
}

impl Layer for Serial {
    crate::layer::impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        let mut props = LayerProperties::pointwise();
        let mut ratio = Rational64::from_integer(1);
        let mut block = 1i64;
        let mut latency = Rational64::from_integer(0);
        let mut rf = ReceptiveField::pointwise();
        let blocks = self
            .children
            .iter()
            .map(|c| c.properties().block_size)
            .chain(std::iter::once(1));
        for (i, b) in blocks.enumerate() {
            // Smallest n with n * ratio a multiple of b.
            let (p, q) = (*ratio.numer(), *ratio.denom());
            let bq = b as i64 * q;
            block = block.lcm(&(bq / p.gcd(&bq)));
            let Some(child) = self.children.get(i) else { break };
            let c = child.properties();
            latency = (latency + Rational64::from_integer(self.align[i] as i64)) * c.output_ratio
                + Rational64::from_integer(c.output_latency as i64);
            rf = rf.then(ratio, &c.receptive_field, c.output_ratio);
            ratio *= c.output_ratio;
            props.supports_step &= c.supports_step;
            props.grows_state |= c.grows_state;
            props.position_sensitive |= c.position_sensitive;
        }
        props.output_ratio = ratio;
        props.block_size = block as usize;
        props.output_latency = latency.ceil().to_integer() as usize;
        props.receptive_field = rf;
        props
    }

    fn forward(&self, x: &Sequence, training: bool, constants: &Constants) -> Result<(Sequence, Emits)> {
        let mut y = x.clone();
        let mut emits = Vec::with_capacity(self.children.len());
        for child in &self.children {
            let (next, e) = child.layer_with_emits(&y, training, constants)?;
            y = next;
            emits.push(e);
        }
        Ok((y, Emits::Tuple(emits)))
    }

    fn make_state(&self, batch: usize, training: bool, constants: &Constants) -> Result<State> {
        let mut states = Vec::with_capacity(self.children.len());
        for (child, &align) in self.children.iter().zip(&self.align) {
            let s = child.initial_state(batch, training, constants)?;
            states.push(if align > 0 {
                State::Tuple(vec![
                    State::Buffer(Sequence::invalid(batch, align, child.input_spec())),
                    s,
                ])
            } else {
                s
            });
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
        let mut y = x.clone();
        let mut next_states = Vec::with_capacity(states.len());
        let mut emits = Vec::with_capacity(states.len());
        for ((child, &align), s) in self.children.iter().zip(&self.align).zip(states) {
            let (s, line) = if align > 0 {
                let mut parts = s.into_tuple(2, &name)?.into_iter();
                let line = parts.next().expect("two parts").into_buffer(&name)?;
                (parts.next().expect("two parts"), Some(line))
            } else {
                (s, None)
            };
            let line = match line {
                Some(line) => {
                    let joined = Sequence::concatenate(&[line, y.clone()])?;
                    y = joined.slice_time(0, y.time())?;
                    Some(joined.slice_time(joined.time() - align, joined.time())?)
                }
                None => None,
            };
            let (out, s, e) = child.step_with_emits(&y, s, training, constants)?;
            y = out;
            emits.push(e);
            next_states.push(match line {
                Some(line) => State::Tuple(vec![State::Buffer(line), s]),
                None => s,
            });
        }
        Ok((y, State::Tuple(next_states), Emits::Tuple(emits)))
    }

    fn children(&self) -> Vec<&dyn Layer> {
        self.children.iter().map(|c| c.as_ref()).collect()
    }
}
