use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pointwise::sigmoid;
use super::{require_f32, require_positive, require_rank, BuildLayer};
use crate::error::{Error, Result};
use crate::exec;
use crate::layer::{
    finish, impl_meta, Bound, BuildCtx, Constants, Emits, Interval, Layer, LayerMeta, LayerProperties,
    ReceptiveField, State,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

/// Long short-term memory. Gates are laid out as input, forget, cell,
/// output along the last kernel axis. Invalid steps hold the state and
/// produce zeros.
#[derive(Debug)]
pub struct Lstm {
    meta: LayerMeta,
    units: usize,
    forget_bias: f32,
    /// `[in + units, 4 * units]`
    kernel: Tensor,
    bias: Tensor,
}

impl Lstm {
    /// Runs row `b` over its steps from state `(c, h)`, writing outputs.
    fn run_row(&self, x: &[f32], mask: &[bool], c: &mut [f32], h: &mut [f32]) -> Result<Vec<f32>> {
        let (u, d) = (self.units, self.meta.input_spec.last_dim());
        let w = self.kernel.as_f32()?;
        let bias = self.bias.as_f32()?;
        let mut out = Vec::with_capacity(mask.len() * u);
        let mut z = vec![0.0f32; 4 * u];
        for (t, &valid) in mask.iter().enumerate() {
            if !valid {
                out.extend(std::iter::repeat_n(0.0, u));
                continue;
            }
            z.copy_from_slice(bias);
            let inputs = x[t * d..(t + 1) * d].iter().chain(h.iter());
            for (i, &a) in inputs.enumerate() {
                for (zv, &wv) in z.iter_mut().zip(&w[i * 4 * u..(i + 1) * 4 * u]) {
                    *zv += a * wv;
                }
            }
            for k in 0..u {
                let ig = sigmoid(z[k]);
                let fg = sigmoid(z[u + k] + self.forget_bias);
                let cand = z[2 * u + k].tanh();
                let og = sigmoid(z[3 * u + k]);
                c[k] = fg * c[k] + ig * cand;
                h[k] = og * c[k].tanh();
            }
            out.extend_from_slice(h);
        }
        Ok(out)
    }

    fn run(&self, x: &Sequence, c: &mut [f32], h: &mut [f32]) -> Result<Sequence> {
        let (batch, time, d, u) = (x.batch(), x.time(), x.step_width(), self.units);
        let xv = x.values().as_f32()?;
        let m = x.mask_slice();
        let mut states: Vec<(Vec<f32>, Vec<f32>)> =
            (0..batch).map(|b| (c[b * u..(b + 1) * u].to_vec(), h[b * u..(b + 1) * u].to_vec())).collect();
        let results = exec::map_range(batch, batch > 1 && time * u * d > 1 << 14, |b| {
            let (mut cb, mut hb) = states[b].clone();
            let out = self.run_row(
                &xv[b * time * d..(b + 1) * time * d],
                &m[b * time..(b + 1) * time],
                &mut cb,
                &mut hb,
            );
            out.map(|o| (o, cb, hb))
        });
        let mut out = Vec::with_capacity(batch * time * u);
        for (b, r) in results.into_iter().enumerate() {
            let (o, cb, hb) = r?;
            out.extend(o);
            states[b] = (cb, hb);
        }
        for (b, (cb, hb)) in states.into_iter().enumerate() {
            c[b * u..(b + 1) * u].copy_from_slice(&cb);
            h[b * u..(b + 1) * u].copy_from_slice(&hb);
        }
        Sequence::new(
            Tensor::new(vec![batch, time, u], TensorData::F32(out))?,
            x.mask().clone(),
        )
    }
}

impl Layer for Lstm {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        LayerProperties {
            receptive_field: ReceptiveField::uniform(Interval::with_bounds(Bound::NegInf, Bound::At(0))),
            ..LayerProperties::pointwise()
        }
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let n = x.batch() * self.units;
        let (mut c, mut h) = (vec![0.0; n], vec![0.0; n]);
        Ok((self.run(x, &mut c, &mut h)?, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        let zeros = Tensor::from_f32(vec![batch, self.units], vec![0.0; batch * self.units])?;
        Ok(State::Tuple(vec![State::Tensor(zeros.clone()), State::Tensor(zeros)]))
    }

    fn forward_step(
        &self,
        x: &Sequence,
        state: State,
        _training: bool,
        _constants: &Constants,
    ) -> Result<(Sequence, State, Emits)> {
        let name = self.name();
        let mut parts = state.into_tuple(2, name)?.into_iter();
        let c = parts.next().expect("two parts").into_tensor(name)?;
        let h = parts.next().expect("two parts").into_tensor(name)?;
        let shape = vec![x.batch(), self.units];
        if c.shape() != shape.as_slice() || h.shape() != shape.as_slice() {
            return Err(Error::StateMismatch(name.to_string()));
        }
        let (mut c, mut h) = (c.as_f32()?.to_vec(), h.as_f32()?.to_vec());
        let y = self.run(x, &mut c, &mut h)?;
        let state = State::Tuple(vec![
            State::Tensor(Tensor::from_f32(shape.clone(), c)?),
            State::Tensor(Tensor::from_f32(shape, h)?),
        ]);
        Ok((y, state, Emits::Empty))
    }

    fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert(self.meta.param_name("kernel"), self.kernel.clone());
        out.insert(self.meta.param_name("bias"), self.bias.clone());
        out
    }
}

fn default_forget_bias() -> f32 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub units: usize,
    #[serde(default = "default_forget_bias")]
    pub forget_bias: f32,
}

impl BuildLayer for LstmConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "LSTM")?;
        require_rank(ctx, input, 1, "LSTM")?;
        require_positive(ctx, "units", self.units)?;
        let kernel = ctx.param("kernel", &[input.last_dim() + self.units, 4 * self.units])?;
        let bias = ctx.param("bias", &[4 * self.units])?;
        Ok(finish(Lstm {
            meta: LayerMeta::new("lstm", ctx, input.clone(), ChannelSpec::f32(vec![self.units])),
            units: self.units,
            forget_bias: self.forget_bias,
            kernel,
            bias,
        }))
    }
}
