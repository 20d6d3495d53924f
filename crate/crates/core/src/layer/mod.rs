//! The sequence-layer contract.
//!
//! Every layer can run layer-wise over a whole [`Sequence`] or step-wise over
//! blocks of it, threading an explicit [`State`]. The two modes agree once the
//! step output is trimmed by the layer's output latency.

pub mod build;
pub mod constants;
pub mod emits;
pub mod properties;
pub mod receptive;
pub mod state;
pub mod streaming;

use std::collections::BTreeMap;
use std::fmt;

pub use build::BuildCtx;
pub use constants::{Constant, Constants};
pub use emits::Emits;
pub use properties::LayerProperties;
pub use receptive::{Bound, Interval, ReceptiveField};
pub use state::State;

use crate::error::{Error, Result};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::Tensor;

/// Identity, specs and cached properties shared by every layer.
#[derive(Clone, Debug)]
pub struct LayerMeta {
    pub kind: &'static str,
    /// Full `/`-joined path; the last segment is the layer's name.
    pub path: String,
    pub input_spec: ChannelSpec,
    pub output_spec: ChannelSpec,
    pub properties: LayerProperties,
}

impl LayerMeta {
    /// Properties start as pointwise and are replaced by [`finish`].
    pub fn new(kind: &'static str, ctx: &BuildCtx, input: ChannelSpec, output: ChannelSpec) -> Self {
        LayerMeta {
            kind,
            path: ctx.path(),
            input_spec: input,
            output_spec: output,
            properties: LayerProperties::pointwise(),
        }
    }

    pub fn param_name(&self, name: &str) -> String {
        format!("{}/{}", self.path, name)
    }
}

pub trait Layer: Send + Sync + fmt::Debug {
    fn meta(&self) -> &LayerMeta;

    #[doc(hidden)]
    fn meta_mut(&mut self) -> &mut LayerMeta;

    /// Derives properties from configuration and children. The result is
    /// cached in [`LayerMeta`].
    fn compute_properties(&self) -> LayerProperties;

    /// Layer-wise execution without input validation.
    fn forward(&self, x: &Sequence, training: bool, constants: &Constants) -> Result<(Sequence, Emits)>;

    fn make_state(&self, _batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        Ok(State::Empty)
    }

    /// Step-wise execution without input validation.
    fn forward_step(
        &self,
        _x: &Sequence,
        _state: State,
        _training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        Err(Error::NotSteppable(self.name().to_string()))
    }

    /// Parameters keyed by full path.
    fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for child in self.children() {
            out.extend(child.parameters());
        }
        out
    }

    fn children(&self) -> Vec<&dyn Layer> {
        vec![]
    }

    /// Sequence constants this layer reads, with their channel specs.
    fn required_constants(&self) -> Vec<(String, ChannelSpec)> {
        self.children()
            .iter()
            .flat_map(|c| c.required_constants())
            .collect()
    }

    fn kind(&self) -> &'static str {
        self.meta().kind
    }

    fn name(&self) -> &str {
        let path = &self.meta().path;
        path.rsplit('/').next().unwrap_or(path)
    }

    fn properties(&self) -> &LayerProperties {
        &self.meta().properties
    }

    fn input_spec(&self) -> &ChannelSpec {
        &self.meta().input_spec
    }

    fn output_spec(&self) -> &ChannelSpec {
        &self.meta().output_spec
    }

    /// Output spec for `input`, which must be the spec the layer was built for.
    fn output_spec_for(&self, input: &ChannelSpec) -> Result<ChannelSpec> {
        if input != self.input_spec() {
            return Err(self.spec_error(input));
        }
        Ok(self.output_spec().clone())
    }

    fn layer_with_emits(
        &self,
        x: &Sequence,
        training: bool,
        constants: &Constants,
    ) -> Result<(Sequence, Emits)> {
        self.check_input(x)?;
        self.forward(x, training, constants)
    }

    fn layer(&self, x: &Sequence, training: bool, constants: &Constants) -> Result<Sequence> {
        Ok(self.layer_with_emits(x, training, constants)?.0)
    }

    fn initial_state(&self, batch: usize, training: bool, constants: &Constants) -> Result<State> {
        if !self.properties().supports_step {
            return Err(Error::NotSteppable(self.name().to_string()));
        }
        self.make_state(batch, training, constants)
    }

    fn step_with_emits(
        &self,
        x: &Sequence,
        state: State,
        training: bool,
        constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let props = self.properties();
        if !props.supports_step {
            return Err(Error::NotSteppable(self.name().to_string()));
        }
        self.check_input(x)?;
        if x.time() == 0 || !x.time().is_multiple_of(props.block_size) {
            return Err(Error::BlockSize {
                layer: self.name().to_string(),
                len: x.time(),
                block_size: props.block_size,
            });
        }
        self.forward_step(x, state, training, constants)
    }

    fn step(
        &self,
        x: &Sequence,
        state: State,
        training: bool,
        constants: &Constants,
    ) -> Result<(Sequence, State)> {
        let (y, state, _) = self.step_with_emits(x, state, training, constants)?;
        Ok((y, state))
    }

    fn check_input(&self, x: &Sequence) -> Result<()> {
        let spec = x.channel_spec();
        if &spec != self.input_spec() {
            return Err(self.spec_error(&spec));
        }
        Ok(())
    }

    fn spec_error(&self, actual: &ChannelSpec) -> Error {
        Error::SpecMismatch {
            layer: self.meta().path.clone(),
            expected: self.input_spec().to_string(),
            actual: actual.to_string(),
        }
    }
}

/// Computes and caches properties, then boxes the layer.
pub fn finish<L: Layer + 'static>(mut layer: L) -> Box<dyn Layer> {
    let props = layer.compute_properties();
    layer.meta_mut().properties = props;
    Box::new(layer)
}

/// Indented `name (kind)` tree.
pub fn name_tree(layer: &dyn Layer) -> String {
    fn walk(layer: &dyn Layer, depth: usize, out: &mut String) {
        out.push_str(&"  ".repeat(depth));
        out.push_str(&format!("{} ({})\n", layer.name(), layer.kind()));
        for c in layer.children() {
            walk(c, depth + 1, out);
        }
    }
    let mut out = String::new();
    walk(layer, 0, &mut out);
    out
}

/// Implements `meta` and `meta_mut` for a struct with a `meta` field.
macro_rules! impl_meta {
    () => {
        fn meta(&self) -> &$crate::layer::LayerMeta {
            &self.meta
        }
        fn meta_mut(&mut self) -> &mut $crate::layer::LayerMeta {
            &mut self.meta
        }
    };
}
pub(crate) use impl_meta;

/// `forward_step` for layers whose step is their layer-wise map.
macro_rules! stateless_step {
    () => {
        fn forward_step(
            &self,
            x: &$crate::sequence::Sequence,
            state: $crate::layer::State,
            training: bool,
            constants: &$crate::layer::Constants,
        ) -> $crate::error::Result<($crate::sequence::Sequence, $crate::layer::State, $crate::layer::Emits)> {
            let (y, emits) = self.forward(x, training, constants)?;
            Ok((y, state, emits))
        }
    };
}
pub(crate) use stateless_step;
