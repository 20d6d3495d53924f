//! Pure shape arithmetic for every tensor operation.

use crate::error::{Error, Result};

pub fn num_elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides in elements.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    let mut acc = 1;
    for (i, &extent) in shape.iter().enumerate().rev() {
        out[i] = acc;
        acc *= extent;
    }
    out
}

pub fn flat_index(shape: &[usize], index: &[usize]) -> Result<usize> {
    if index.len() != shape.len() {
        return Err(Error::invalid(format!(
            "index {index:?} has wrong rank for shape {shape:?}"
        )));
    }
    let mut flat = 0;
    for (&i, (&extent, stride)) in index.iter().zip(shape.iter().zip(strides(shape))) {
        if i >= extent {
            return Err(Error::invalid(format!(
                "index {index:?} out of range for shape {shape:?}"
            )));
        }
        flat += i * stride;
    }
    Ok(flat)
}

/// Trailing-dimension broadcasting: ranks are aligned on the right and
/// extents must be equal or 1.
pub fn broadcast(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides for reading `shape` as if broadcast to `target`; broadcast
/// dimensions get stride 0.
pub fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = target.len() - shape.len();
    (0..target.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

pub fn matmul(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k1) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k1 != k2 {
        return Err(mismatch());
    }
    let mut out = broadcast(&a[..a.len() - 2], &b[..b.len() - 2]).map_err(|_| mismatch())?;
    out.push(m);
    out.push(n);
    Ok(out)
}

pub fn check_axes(rank: usize, axes: &[usize]) -> Result<()> {
    for (i, &axis) in axes.iter().enumerate() {
        if axis >= rank {
            return Err(Error::InvalidAxis { axis, rank });
        }
        if axes[..i].contains(&axis) {
            return Err(Error::invalid(format!("duplicate axis {axis}")));
        }
    }
    Ok(())
}

pub fn reduce(shape: &[usize], axes: &[usize], keepdims: bool) -> Result<Vec<usize>> {
    check_axes(shape.len(), axes)?;
    Ok(shape
        .iter()
        .enumerate()
        .filter_map(|(i, &d)| match (axes.contains(&i), keepdims) {
            (false, _) => Some(d),
            (true, true) => Some(1),
            (true, false) => None,
        })
        .collect())
}

pub fn concat(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    if axis >= first.len() {
        return Err(Error::InvalidAxis {
            axis,
            rank: first.len(),
        });
    }
    let mut out = first.to_vec();
    for s in &shapes[1..] {
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(first.iter())
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.to_vec(),
                rhs: s.to_vec(),
            });
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

pub fn slice(shape: &[usize], axis: usize, start: usize, end: usize) -> Result<Vec<usize>> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    if start > end || end > shape[axis] {
        return Err(Error::invalid(format!(
            "slice {start}..{end} out of range for extent {} on axis {axis}",
            shape[axis]
        )));
    }
    let mut out = shape.to_vec();
    out[axis] = end - start;
    Ok(out)
}

pub fn pad(shape: &[usize], axis: usize, before: usize, after: usize) -> Result<Vec<usize>> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    let mut out = shape.to_vec();
    out[axis] += before + after;
    Ok(out)
}

pub fn transpose(shape: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    if perm.len() != shape.len() {
        return Err(Error::invalid(format!(
            "permutation {perm:?} has wrong rank for shape {shape:?}"
        )));
    }
    check_axes(shape.len(), perm)?;
    Ok(perm.iter().map(|&p| shape[p]).collect())
}
