//! Multi-headed dot-product self-attention with past and future horizons.
//!
//! Query step `t` attends over valid steps `u` with
//! `t - max_past <= u <= t + max_future` (all past when unbounded). Step
//! mode keeps projected entries for the past horizon plus `max_future`
//! staged steps whose queries are still waiting for their future keys.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{require_f32, require_positive, require_rank, BuildLayer};
use crate::error::{Error, Result};
use crate::exec;
use crate::layer::{
    finish, impl_meta, Bound, BuildCtx, Constants, Emits, Interval, Layer, LayerMeta, LayerProperties,
    ReceptiveField, State,
};
use crate::sequence::{ChannelSpec, Sequence};
use crate::tensor::{Tensor, TensorData};

#[derive(Debug)]
pub struct DotProductSelfAttention {
    meta: LayerMeta,
    heads: usize,
    units: usize,
    /// `None` for an unbounded past.
    max_past: Option<usize>,
    max_future: usize,
    q_proj: Tensor,
    k_proj: Tensor,
    v_proj: Tensor,
}

/// Softmax-weighted sum of `entries` (key, value) for one query.
pub fn attend(q: &[f32], entries: &[(&[f32], &[f32])], heads: usize, units: usize) -> Vec<f32> {
    let scale = 1.0 / (units as f32).sqrt();
    let mut out = vec![0.0f32; heads * units];
    if entries.is_empty() {
        return out;
    }
    let mut logits = vec![0.0f32; entries.len()];
    for h in 0..heads {
        let qh = &q[h * units..(h + 1) * units];
        for (l, (k, _)) in logits.iter_mut().zip(entries) {
            let kh = &k[h * units..(h + 1) * units];
            *l = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
        }
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f32;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        let oh = &mut out[h * units..(h + 1) * units];
        for (&w, (_, v)) in logits.iter().zip(entries) {
            let p = w / total;
            for (o, &vv) in oh.iter_mut().zip(&v[h * units..(h + 1) * units]) {
                *o += p * vv;
            }
        }
    }
    out
}

impl DotProductSelfAttention {
    fn width(&self) -> usize {
        self.heads * self.units
    }

    /// Projects every step to `[3, heads, units]` (query, key, value).
    fn project(&self, x: &Sequence) -> Result<Sequence> {
        let (batch, time, d) = (x.batch(), x.time(), x.step_width());
        let xv = x.values().as_f32()?;
        let w = self.width();
        let mut out = Vec::with_capacity(batch * time * 3 * w);
        for row in xv.chunks(d.max(1)).take(batch * time) {
            for proj in [&self.q_proj, &self.k_proj, &self.v_proj] {
                let p = proj.as_f32()?;
                let mut acc = vec![0.0f32; w];
                for (i, &a) in row.iter().enumerate() {
                    for (o, &pv) in acc.iter_mut().zip(&p[i * w..(i + 1) * w]) {
                        *o += a * pv;
                    }
                }
                out.extend(acc);
            }
        }
        let values = Tensor::new(vec![batch, time, 3, self.heads, self.units], TensorData::F32(out))?;
        Ok(Sequence::from_parts_unchecked(values, x.mask().clone(), false))
    }

    fn output(&self, batch: usize, time: usize, rows: Vec<Vec<f32>>, mask: Tensor) -> Result<Sequence> {
        let values = Tensor::new(vec![batch, time, self.heads, self.units], TensorData::F32(rows.concat()))?;
        Sequence::new(values, mask)
    }
}

/// Accessor for `[batch, time, 3, heads, units]` projections.
struct Projected<'a> {
    data: &'a [f32],
    mask: &'a [bool],
    time: usize,
    width: usize,
}

impl<'a> Projected<'a> {
    fn new(s: &'a Sequence, width: usize) -> Result<Projected<'a>> {
        Ok(Projected {
            data: s.values().as_f32()?,
            mask: s.mask_slice(),
            time: s.time(),
            width,
        })
    }

    fn part(&self, b: usize, t: usize, which: usize) -> &'a [f32] {
        let base = ((b * self.time + t) * 3 + which) * self.width;
        &self.data[base..base + self.width]
    }

    fn valid(&self, b: usize, t: usize) -> bool {
        self.mask[b * self.time + t]
    }

    /// Valid (key, value) pairs of row `b` over `range`, in time order.
    fn entries(&self, b: usize, range: std::ops::Range<usize>, out: &mut Vec<(&'a [f32], &'a [f32])>) {
        for u in range {
            if self.valid(b, u) {
                out.push((self.part(b, u, 1), self.part(b, u, 2)));
            }
        }
    }
}

impl Layer for DotProductSelfAttention {
    impl_meta!();

    fn compute_properties(&self) -> LayerProperties {
        let start = match self.max_past {
            Some(p) => Bound::At(-(p as i64)),
            None => Bound::NegInf,
        };
        LayerProperties {
            output_latency: self.max_future,
            receptive_field: ReceptiveField::uniform(Interval::with_bounds(
                start,
                Bound::At(self.max_future as i64),
            )),
            grows_state: self.max_past.is_none(),
            ..LayerProperties::pointwise()
        }
    }

    fn forward(&self, x: &Sequence, _training: bool, _constants: &Constants) -> Result<(Sequence, Emits)> {
        let (batch, time) = (x.batch(), x.time());
        let projected = self.project(x)?;
        let p = Projected::new(&projected, self.width())?;
        let work = batch * time * time * self.width();
        let rows = exec::map_range(batch * time, work > 1 << 16, |r| {
            let (b, t) = (r / time, r % time);
            if !p.valid(b, t) {
                return vec![0.0; self.width()];
            }
            let lo = self.max_past.map_or(0, |m| t.saturating_sub(m));
            let hi = (t + self.max_future + 1).min(time);
            let mut entries = Vec::new();
            p.entries(b, lo..hi, &mut entries);
            attend(p.part(b, t, 0), &entries, self.heads, self.units)
        });
        Ok((self.output(batch, time, rows, x.mask().clone())?, Emits::Empty))
    }

    fn make_state(&self, batch: usize, _training: bool, _constants: &Constants) -> Result<State> {
        let spec = ChannelSpec::f32(vec![3, self.heads, self.units]);
        Ok(State::Tuple(vec![
            State::Buffer(Sequence::invalid(batch, self.max_past.unwrap_or(0), &spec)),
            State::Buffer(Sequence::invalid(batch, self.max_future, &spec)),
        ]))
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
        let past = parts.next().expect("two parts").into_buffer(name)?;
        let staged = parts.next().expect("two parts").into_buffer(name)?;
        let (batch, n, f) = (x.batch(), x.time(), self.max_future);
        if past.batch() != batch || staged.batch() != batch {
            return Err(Error::StateMismatch(name.to_string()));
        }
        // Query j of this block is window step j; its future keys end at j + f.
        let window = Sequence::concatenate(&[staged, self.project(x)?])?;
        let w = Projected::new(&window, self.width())?;
        let pp = Projected::new(&past, self.width())?;
        let rows = exec::map_range(batch * n, false, |r| {
            let (b, j) = (r / n, r % n);
            if !w.valid(b, j) {
                return vec![0.0; self.width()];
            }
            let mut entries = Vec::new();
            match self.max_past {
                Some(m) => {
                    // past covers the m steps before the window.
                    pp.entries(b, j.min(m)..m, &mut entries);
                    w.entries(b, j.saturating_sub(m)..j + f + 1, &mut entries);
                }
                None => {
                    pp.entries(b, 0..past.time(), &mut entries);
                    w.entries(b, 0..j + f + 1, &mut entries);
                }
            }
            attend(w.part(b, j, 0), &entries, self.heads, self.units)
        });
        let mask: Vec<bool> = (0..batch * n).map(|r| w.valid(r / n, r % n)).collect();
        let y = self.output(batch, n, rows, Tensor::from_bool(vec![batch, n], mask)?)?;

        let leaving = window.slice_time(0, n)?;
        let next_past = match self.max_past {
            Some(m) => {
                let all = Sequence::concatenate(&[past, leaving])?;
                all.slice_time(all.time() - m, all.time())?
            }
            None => append_valid(&past, &leaving)?,
        };
        let next_staged = window.slice_time(n, n + f)?;
        Ok((y, State::Tuple(vec![State::Buffer(next_past), State::Buffer(next_staged)]), Emits::Empty))
    }

    fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert(self.meta.param_name("q_proj"), self.q_proj.clone());
        out.insert(self.meta.param_name("k_proj"), self.k_proj.clone());
        out.insert(self.meta.param_name("v_proj"), self.v_proj.clone());
        out
    }
}

/// Appends the valid steps of `new` to the per-row compacted cache `past`.
/// Rows are left-aligned; slots past a row's count are invalid.
fn append_valid(past: &Sequence, new: &Sequence) -> Result<Sequence> {
    let batch = past.batch();
    let width = past.step_width();
    let gather = |s: &Sequence, b: usize| -> Result<Vec<f32>> {
        let v = s.values().as_f32()?;
        let m = s.mask_slice();
        let t = s.time();
        Ok((0..t)
            .filter(|&u| m[b * t + u])
            .flat_map(|u| v[(b * t + u) * width..(b * t + u + 1) * width].iter().copied())
            .collect())
    };
    let mut rows = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut row = gather(past, b)?;
        row.extend(gather(new, b)?);
        rows.push(row);
    }
    let time = rows.iter().map(|r| r.len() / width.max(1)).max().unwrap_or(0);
    let mut data = Vec::with_capacity(batch * time * width);
    let mut mask = Vec::with_capacity(batch * time);
    for row in rows {
        let count = row.len() / width.max(1);
        data.extend(row);
        data.extend(std::iter::repeat_n(0.0, (time - count) * width));
        mask.extend((0..time).map(|u| u < count));
    }
    let mut shape = vec![batch, time];
    shape.extend(past.channel_shape());
    Sequence::new(Tensor::new(shape, TensorData::F32(data))?, Tensor::from_bool(vec![batch, time], mask)?)
}

fn default_unbounded() -> i64 {
    -1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub num_heads: usize,
    pub units_per_head: usize,
    /// -1 for an unbounded past.
    #[serde(default = "default_unbounded")]
    pub max_past_horizon: i64,
    #[serde(default)]
    pub max_future_horizon: i64,
}

impl BuildLayer for AttentionConfig {
    fn build(&self, input: &ChannelSpec, ctx: &mut BuildCtx) -> Result<Box<dyn Layer>> {
        require_f32(ctx, input, "DotProductSelfAttention")?;
        require_rank(ctx, input, 1, "DotProductSelfAttention")?;
        require_positive(ctx, "num_heads", self.num_heads)?;
        require_positive(ctx, "units_per_head", self.units_per_head)?;
        let max_past = match self.max_past_horizon {
            -1 => None,
            p if p >= 0 => Some(p as usize),
            p => return Err(ctx.error("max_past_horizon", format!("{p} is neither -1 nor >= 0"))),
        };
        if self.max_future_horizon < 0 {
            return Err(ctx.error("max_future_horizon", "an unbounded future cannot be streamed"));
        }
        let shape = [input.last_dim(), self.num_heads, self.units_per_head];
        let q_proj = ctx.param("q_proj", &shape)?;
        let k_proj = ctx.param("k_proj", &shape)?;
        let v_proj = ctx.param("v_proj", &shape)?;
        Ok(finish(DotProductSelfAttention {
            meta: LayerMeta::new(
                "self_attention",
                ctx,
                input.clone(),
                ChannelSpec::f32(vec![self.num_heads, self.units_per_head]),
            ),
            heads: self.num_heads,
            units: self.units_per_head,
            max_past,
            max_future: self.max_future_horizon as usize,
            q_proj,
            k_proj,
            v_proj,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_returns_its_value() {
        let k = [1.0, 2.0];
        let v = [3.0, -4.0];
        let out = attend(&[0.5, 0.5], &[(&k, &v)], 1, 2);
        assert_eq!(out, vec![3.0, -4.0]);
    }

    #[test]
    fn weights_sum_to_one() {
        let ks: Vec<[f32; 2]> = (0..5).map(|i| [i as f32 * 0.3, -(i as f32) * 0.1]).collect();
        let ones = [1.0f32, 1.0];
        let entries: Vec<(&[f32], &[f32])> = ks.iter().map(|k| (&k[..], &ones[..])).collect();
        let out = attend(&[0.7, -0.2], &entries, 1, 2);
        assert!((out[0] - 1.0).abs() < 1e-6 && (out[1] - 1.0).abs() < 1e-6);
    }
}
