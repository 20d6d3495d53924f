//! Explicit-loop float64 references for the layers with nontrivial
//! arithmetic, written from the layer definitions rather than the
//! implementations. Inputs are `x[b][t][c]` with invalid steps zeroed and
//! `mask[b][t]`; outputs come back in the same layout.

#![allow(dead_code)]

pub type Rows = Vec<Vec<Vec<f64>>>;
pub type Mask = Vec<Vec<bool>>;

/// Steps before the anchor where a window of `span` starts.
pub fn left_pad(span: usize, padding: &str) -> usize {
    match padding {
        "causal" => span - 1,
        "reverse_causal" => 0,
        _ => (span - 1) / 2,
    }
}

/// Kernel layout `[tap, in, filters]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d(x: &Rows, mask: &Mask, w: &[f64], bias: &[f64], k: usize, s: usize, d: usize, padding: &str) -> (Rows, Mask) {
    let (time, cin, filters) = (mask[0].len(), x[0].first().map_or(0, Vec::len), bias.len());
    let left = left_pad((k - 1) * d + 1, padding) as i64;
    let n_out = time.div_ceil(s);
    let mut out = vec![vec![vec![0.0; filters]; n_out]; x.len()];
    let mut out_mask = vec![vec![false; n_out]; x.len()];
    for b in 0..x.len() {
        for t in 0..n_out {
            out_mask[b][t] = mask[b][t * s];
            for f in 0..filters {
                let mut acc = bias[f];
                for tap in 0..k {
                    let u = (t * s) as i64 - left + (tap * d) as i64;
                    if u < 0 || u >= time as i64 {
                        continue;
                    }
                    for c in 0..cin {
                        acc += x[b][u as usize][c] * w[(tap * cin + c) * filters + f];
                    }
                }
                out[b][t][f] = acc;
            }
        }
    }
    (out, out_mask)
}

/// Each input step scatters `k` taps starting at `c * s`, shifted back by
/// what the padding mode trims from the front.
pub fn conv1d_transpose(x: &Rows, mask: &Mask, w: &[f64], bias: &[f64], k: usize, s: usize, padding: &str) -> (Rows, Mask) {
    let (time, cin, filters) = (mask[0].len(), x[0].first().map_or(0, Vec::len), bias.len());
    let trim = match padding {
        "causal" => 0,
        "reverse_causal" => k - 1,
        _ => {
            let total = if s > k - 1 { k - 1 } else { (k + s - 2).div_ceil(2) };
            k - 1 - total
        }
    };
    let n_out = time * s;
    let mut out = vec![vec![bias.to_vec(); n_out]; x.len()];
    let mut out_mask = vec![vec![false; n_out]; x.len()];
    for b in 0..x.len() {
        for j in 0..n_out {
            out_mask[b][j] = mask[b][j / s];
        }
        for c in 0..time {
            for tap in 0..k {
                let j = (c * s + tap) as i64 - trim as i64;
                if j < 0 || j >= n_out as i64 {
                    continue;
                }
                for ci in 0..cin {
                    for f in 0..filters {
                        out[b][j as usize][f] += x[b][c][ci] * w[(tap * cin + ci) * filters + f];
                    }
                }
            }
        }
    }
    (out, out_mask)
}

/// Max or mean over the valid members of each window.
pub fn pool(x: &Rows, mask: &Mask, max: bool, p: usize, s: usize, padding: &str) -> (Rows, Mask) {
    let (time, cin) = (mask[0].len(), x[0].first().map_or(0, Vec::len));
    let left = left_pad(p, padding) as i64;
    let n_out = time.div_ceil(s);
    let mut out = vec![vec![vec![0.0; cin]; n_out]; x.len()];
    let mut out_mask = vec![vec![false; n_out]; x.len()];
    for b in 0..x.len() {
        for t in 0..n_out {
            out_mask[b][t] = mask[b][t * s];
            let members: Vec<usize> = (0..p as i64)
                .map(|i| (t * s) as i64 - left + i)
                .filter(|&u| u >= 0 && u < time as i64 && mask[b][u as usize])
                .map(|u| u as usize)
                .collect();
            for c in 0..cin {
                let vals = members.iter().map(|&u| x[b][u][c]);
                out[b][t][c] = if members.is_empty() {
                    0.0
                } else if max {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.sum::<f64>() / members.len() as f64
                };
            }
        }
    }
    (out, out_mask)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Kernel `[in + units, 4 * units]`, gates input, forget, candidate,
/// output, forget bias 1. Invalid steps leave the state alone.
pub fn lstm(x: &Rows, mask: &Mask, w: &[f64], bias: &[f64], u: usize) -> (Rows, Mask) {
    let time = mask[0].len();
    let mut out = vec![vec![vec![0.0; u]; time]; x.len()];
    for b in 0..x.len() {
        let (mut c, mut h) = (vec![0.0f64; u], vec![0.0f64; u]);
        for t in 0..time {
            if !mask[b][t] {
                continue;
            }
            let input: Vec<f64> = x[b][t].iter().chain(h.iter()).copied().collect();
            let gate = |g: usize, k: usize| -> f64 {
                let col = g * u + k;
                bias[col] + input.iter().enumerate().map(|(i, a)| a * w[i * 4 * u + col]).sum::<f64>()
            };
            let mut next_h = vec![0.0; u];
            for k in 0..u {
                let i_g = sigmoid(gate(0, k));
                let f_g = sigmoid(gate(1, k) + 1.0);
                let cand = gate(2, k).tanh();
                let o_g = sigmoid(gate(3, k));
                c[k] = f_g * c[k] + i_g * cand;
                next_h[k] = o_g * c[k].tanh();
            }
            h = next_h;
            out[b][t] = h.clone();
        }
    }
    (out, mask.clone())
}

/// Projections `[d, heads * units]`; `past < 0` means unlimited. Output
/// is heads and units flattened.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    x: &Rows,
    mask: &Mask,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    heads: usize,
    units: usize,
    past: i64,
    future: i64,
) -> (Rows, Mask) {
    let (time, d) = (mask[0].len(), x[0].first().map_or(0, Vec::len));
    let width = heads * units;
    let project = |w: &[f64], xt: &[f64]| -> Vec<f64> {
        (0..width).map(|o| (0..d).map(|i| xt[i] * w[i * width + o]).sum()).collect()
    };
    let mut out = vec![vec![vec![0.0; width]; time]; x.len()];
    for b in 0..x.len() {
        let q: Vec<Vec<f64>> = x[b].iter().map(|xt| project(wq, xt)).collect();
        let k: Vec<Vec<f64>> = x[b].iter().map(|xt| project(wk, xt)).collect();
        let v: Vec<Vec<f64>> = x[b].iter().map(|xt| project(wv, xt)).collect();
        for t in 0..time {
            if !mask[b][t] {
                continue;
            }
            let keys: Vec<usize> = (0..time)
                .filter(|&s| mask[b][s])
                .filter(|&s| past < 0 || s as i64 >= t as i64 - past)
                .filter(|&s| s as i64 <= t as i64 + future)
                .collect();
            for h in 0..heads {
                let hs = h * units..(h + 1) * units;
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|&s| hs.clone().map(|i| q[t][i] * k[s][i]).sum::<f64>() / (units as f64).sqrt())
                    .collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let total: f64 = weights.iter().sum();
                for i in hs.clone() {
                    out[b][t][i] = keys.iter().zip(&weights).map(|(&s, w)| w * v[s][i]).sum::<f64>() / total;
                }
            }
        }
    }
    (out, mask.clone())
}

/// Largest difference at valid positions, or why the two cannot be
/// compared.
pub fn max_error(got: &Rows, got_mask: &Mask, want: &Rows, want_mask: &Mask) -> Result<f64, String> {
    if got_mask != want_mask {
        return Err(format!("mask {got_mask:?} vs {want_mask:?}"));
    }
    let mut worst = 0.0f64;
    for b in 0..want.len() {
        for t in 0..want[b].len() {
            if !want_mask[b][t] {
                continue;
            }
            if got[b][t].len() != want[b][t].len() {
                return Err(format!("width {} vs {}", got[b][t].len(), want[b][t].len()));
            }
            for (g, w) in got[b][t].iter().zip(&want[b][t]) {
                let e = (g - w).abs();
                if e.is_nan() {
                    return Err(format!("NaN at [{b}, {t}]"));
                }
                worst = worst.max(e);
            }
        }
    }
    Ok(worst)
}
