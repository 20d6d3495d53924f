//! Receptive-field intervals and their composition.
//!
//! A layer with output ratio `r` describes its dependencies with one optional
//! interval per output step in a period of `P` output steps, where `P / r` is
//! an integer. Output step `n` is anchored at input step
//! `(n div P) * (P / r)`, and `per_step[n mod P]` is relative to that anchor.

use std::cmp::Ordering;
use std::fmt;

use num_integer::Integer;
use num_rational::Rational64;
use serde::{Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bound {
    NegInf,
    At(i64),
    PosInf,
}

impl Bound {
    pub fn shift(self, delta: i64) -> Bound {
        match self {
            Bound::At(v) => Bound::At(v + delta),
            other => other,
        }
    }

    pub fn negate(self) -> Bound {
        match self {
            Bound::NegInf => Bound::PosInf,
            Bound::At(v) => Bound::At(-v),
            Bound::PosInf => Bound::NegInf,
        }
    }

    pub fn finite(self) -> Option<i64> {
        match self {
            Bound::At(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::NegInf => write!(f, "-inf"),
            Bound::At(v) => write!(f, "{v}"),
            Bound::PosInf => write!(f, "inf"),
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bound::At(v) => s.serialize_i64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

/// Closed interval of input steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Interval {
    pub start: Bound,
    pub end: Bound,
}

impl Interval {
    pub fn new(start: i64, end: i64) -> Interval {
        assert!(start <= end, "interval ({start}, {end}) is reversed");
        Interval {
            start: Bound::At(start),
            end: Bound::At(end),
        }
    }

    pub fn with_bounds(start: Bound, end: Bound) -> Interval {
        assert!(start <= end && start != Bound::PosInf && end != Bound::NegInf);
        Interval { start, end }
    }

    pub fn point(at: i64) -> Interval {
        Interval::new(at, at)
    }

    pub fn shift(self, delta: i64) -> Interval {
        Interval {
            start: self.start.shift(delta),
            end: self.end.shift(delta),
        }
    }

    /// Smallest interval covering both.
    pub fn hull(self, other: Interval) -> Interval {
        Interval {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    /// Time-reversed dependencies: `(a, b)` becomes `(-b, -a)`.
    pub fn mirror(self) -> Interval {
        Interval {
            start: self.end.negate(),
            end: self.start.negate(),
        }
    }

    pub fn contains(&self, v: i64) -> bool {
        self.start <= Bound::At(v) && Bound::At(v) <= self.end
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

pub fn hull(a: Option<Interval>, b: Option<Interval>) -> Option<Interval> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.hull(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

pub fn fmt_optional(iv: &Option<Interval>) -> String {
    match iv {
        Some(iv) => iv.to_string(),
        None => "None".to_string(),
    }
}

/// Per-step receptive field over one period of output steps.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct ReceptiveField {
    per_step: Vec<Option<Interval>>,
}


/// Converts `value` to an integer, panicking if it is not one.
fn integral(value: Rational64, what: &str) -> i64 {
    assert!(value.is_integer(), "{what} {value} is not integral");
    value.to_integer()
}

impl ReceptiveField {
    pub fn new(per_step: Vec<Option<Interval>>) -> ReceptiveField {
        assert!(!per_step.is_empty(), "receptive field period must be positive");
        ReceptiveField { per_step }
    }

    /// Output step `t` depends on input steps `t + start ..= t + end`.
    pub fn uniform(iv: Interval) -> ReceptiveField {
        ReceptiveField::new(vec![Some(iv)])
    }

    pub fn pointwise() -> ReceptiveField {
        ReceptiveField::uniform(Interval::point(0))
    }

    pub fn period(&self) -> usize {
        self.per_step.len()
    }

    pub fn per_step(&self) -> &[Option<Interval>] {
        &self.per_step
    }

    /// Input-step span of one period.
    pub fn input_period(&self, ratio: Rational64) -> i64 {
        integral(Rational64::from_integer(self.period() as i64) / ratio, "input period")
    }

    /// Anchor input step of output step `n`.
    pub fn anchor(&self, ratio: Rational64, n: i64) -> i64 {
        Integer::div_floor(&n, &(self.period() as i64)) * self.input_period(ratio)
    }

    /// Absolute input interval that output step `n` depends on.
    pub fn absolute(&self, ratio: Rational64, n: i64) -> Option<Interval> {
        let p = self.period() as i64;
        self.per_step[n.rem_euclid(p) as usize].map(|iv| iv.shift(self.anchor(ratio, n)))
    }

    /// Union of all per-step intervals, each taken relative to
    /// `floor(step / ratio)`.
    pub fn overall(&self, ratio: Rational64) -> Option<Interval> {
        self.per_step
            .iter()
            .enumerate()
            .fold(None, |acc, (j, iv)| {
                let offset = (Rational64::from_integer(j as i64) / ratio).floor().to_integer();
                hull(acc, iv.map(|iv| iv.shift(-offset)))
            })
    }

    /// Same dependencies expressed over a longer period, which must be a
    /// multiple of the current one.
    pub fn with_period(&self, ratio: Rational64, period: usize) -> ReceptiveField {
        assert_eq!(period % self.period(), 0, "period must be a multiple");
        ReceptiveField::new(
            (0..period as i64)
                .map(|n| self.absolute(ratio, n))
                .collect(),
        )
    }

    /// Receptive field of `second` applied to the output of `self`.
    pub fn then(
        &self,
        first_ratio: Rational64,
        second: &ReceptiveField,
        second_ratio: Rational64,
    ) -> ReceptiveField {
        let mid_period = integral(
            Rational64::from_integer(second.period() as i64) / second_ratio,
            "intermediate period",
        );
        let mid = (self.period() as i64).lcm(&mid_period);
        let period = integral(Rational64::from_integer(mid) * second_ratio, "composite period");
        ReceptiveField::new(
            (0..period)
                .map(|n| {
                    second
                        .absolute(second_ratio, n)
                        .and_then(|iv| self.union_over(first_ratio, iv))
                })
                .collect(),
        )
    }

    /// Union of the absolute intervals of all output steps in `range`. An
    /// infinite end of `range` is represented by one period at the finite
    /// end, then extended to infinity.
    fn union_over(&self, ratio: Rational64, range: Interval) -> Option<Interval> {
        let p = self.period() as i64;
        let (lo, hi) = match (range.start, range.end) {
            (Bound::At(a), Bound::At(b)) => (a, b),
            (Bound::NegInf, Bound::At(b)) => (b - p + 1, b),
            (Bound::At(a), Bound::PosInf) => (a, a + p - 1),
            _ => (0, p - 1),
        };
        let acc = (lo..=hi).fold(None, |acc, u| hull(acc, self.absolute(ratio, u)));
        acc.map(|mut iv| {
            if range.start == Bound::NegInf {
                iv.start = Bound::NegInf;
            }
            if range.end == Bound::PosInf {
                iv.end = Bound::PosInf;
            }
            iv
        })
    }

    /// Per-step union of branches sharing the same ratio.
    pub fn union_all(ratio: Rational64, fields: &[&ReceptiveField]) -> ReceptiveField {
        let period = fields
            .iter()
            .fold(1usize, |acc, rf| acc.lcm(&rf.period()));
        let expanded: Vec<ReceptiveField> =
            fields.iter().map(|rf| rf.with_period(ratio, period)).collect();
        ReceptiveField::new(
            (0..period)
                .map(|j| {
                    expanded
                        .iter()
                        .fold(None, |acc, rf| hull(acc, rf.per_step[j]))
                })
                .collect(),
        )
    }
}

impl fmt::Display for ReceptiveField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entries: Vec<String> = self
            .per_step
            .iter()
            .enumerate()
            .map(|(j, iv)| format!("{j}: {}", fmt_optional(iv)))
            .collect();
        write!(f, "{{{}}}", entries.join(", "))
    }
}

impl PartialOrd for Interval {
    /// Subset ordering.
    fn partial_cmp(&self, other: &Interval) -> Option<Ordering> {
        let le = self.start >= other.start && self.end <= other.end;
        let ge = self.start <= other.start && self.end >= other.end;
        match (le, ge) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}
