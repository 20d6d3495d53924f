use std::fmt;

use serde::Serialize;

use crate::sequence::Sequence;
use crate::tensor::TensorData;

/// Where two sequences first disagree.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub batch: usize,
    pub time: usize,
    /// Flat channel element index; `None` when the masks differ.
    pub element: Option<usize>,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.element {
            Some(c) => write!(
                f,
                "[batch {}, time {}, element {c}] expected {} got {}",
                self.batch, self.time, self.expected, self.actual
            ),
            None => write!(
                f,
                "[batch {}, time {}] mask expected {} got {}",
                self.batch, self.time, self.expected, self.actual
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceDiff {
    /// Largest absolute difference over positions valid in both. NaN
    /// against a number counts as infinite.
    pub max_abs_diff: f64,
    pub masks_equal: bool,
    pub first_mismatch: Option<Mismatch>,
}

impl SequenceDiff {
    pub fn within(&self, tol: f64) -> bool {
        self.masks_equal && self.max_abs_diff <= tol
    }
}

/// Full comparison of two sequences with the same extents and spec.
/// Mismatches are mask differences or values further apart than `tol`.
pub fn diff_sequences(expected: &Sequence, actual: &Sequence, tol: f64) -> Result<SequenceDiff, String> {
    if expected.batch() != actual.batch() || expected.time() != actual.time() {
        return Err(format!(
            "extent [{}, {}] vs [{}, {}]",
            expected.batch(),
            expected.time(),
            actual.batch(),
            actual.time()
        ));
    }
    if expected.channel_spec() != actual.channel_spec() {
        return Err(format!("spec {} vs {}", expected.channel_spec(), actual.channel_spec()));
    }
    let (em, am) = (expected.mask_slice(), actual.mask_slice());
    let width = expected.step_width();
    let time = expected.time().max(1);
    let mut out = SequenceDiff {
        max_abs_diff: 0.0,
        masks_equal: true,
        first_mismatch: None,
    };
    for i in 0..em.len() {
        let (b, t) = (i / time, i % time);
        if em[i] != am[i] {
            out.masks_equal = false;
            out.first_mismatch.get_or_insert(Mismatch {
                batch: b,
                time: t,
                element: None,
                expected: em[i].to_string(),
                actual: am[i].to_string(),
            });
            continue;
        }
        if !em[i] {
            continue;
        }
        for c in 0..width {
            let k = i * width + c;
            let (d, e, a) = match (expected.values().data(), actual.values().data()) {
                (TensorData::F32(x), TensorData::F32(y)) => {
                    let d = if x[k].is_nan() && y[k].is_nan() {
                        0.0
                    } else {
                        let d = (x[k] as f64 - y[k] as f64).abs();
                        if d.is_nan() { f64::INFINITY } else { d }
                    };
                    (d, x[k].to_string(), y[k].to_string())
                }
                (TensorData::I32(x), TensorData::I32(y)) => {
                    ((x[k] as f64 - y[k] as f64).abs(), x[k].to_string(), y[k].to_string())
                }
                (TensorData::Bool(x), TensorData::Bool(y)) => {
                    (f64::from(u8::from(x[k] != y[k])), x[k].to_string(), y[k].to_string())
                }
                _ => return Err("dtype mismatch".into()),
            };
            out.max_abs_diff = out.max_abs_diff.max(d);
            if d > tol && out.first_mismatch.is_none() {
                out.first_mismatch = Some(Mismatch {
                    batch: b,
                    time: t,
                    element: Some(c),
                    expected: e,
                    actual: a,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn seq(v: Vec<f32>, lengths: &[usize]) -> Sequence {
        let t = v.len() / lengths.len();
        Sequence::from_lengths(Tensor::from_f32(vec![lengths.len(), t, 1], v).unwrap(), lengths).unwrap()
    }

    #[test]
    fn reports_largest_gap_and_first_mismatch() {
        let a = seq(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = seq(vec![1.0, 2.5, 3.0, 5.0], &[2, 2]);
        let d = diff_sequences(&a, &b, 0.75).unwrap();
        assert_eq!(d.max_abs_diff, 1.0);
        let m = d.first_mismatch.unwrap();
        assert_eq!((m.batch, m.time, m.element), (1, 1, Some(0)));
        assert!(!diff_sequences(&a, &b, 0.75).unwrap().within(0.75));
    }

    #[test]
    fn mask_difference_is_a_mismatch_even_with_equal_values() {
        let a = seq(vec![1.0, 2.0], &[2]);
        let b = seq(vec![1.0, 2.0], &[1]);
        let d = diff_sequences(&a, &b, 1.0).unwrap();
        assert!(!d.masks_equal);
        assert_eq!(d.first_mismatch.unwrap().time, 1);
    }

    #[test]
    fn invalid_positions_are_ignored() {
        let a = seq(vec![1.0, f32::NAN], &[1]);
        let b = seq(vec![1.0, 7.0], &[1]);
        assert!(diff_sequences(&a, &b, 0.0).unwrap().within(0.0));
    }
}
