//! Contract checks that any layer can be run against.
//!
//! [`verify_contract`] runs the whole battery and returns a
//! [`ContractReport`]; failures are recorded, never raised.

pub mod diff;
pub mod inputs;
pub mod report;
pub mod sabotage;

use std::collections::BTreeSet;

use serde_json::json;

use crate::error::Result;
use crate::exec;
use crate::layer::streaming::{layer_by_steps, output_length, round_up, step_through};
use crate::layer::{Bound, Constants, Emits, Interval, Layer, State};
use crate::sequence::Sequence;
use crate::tensor::{DType, TensorData};

pub use diff::{diff_sequences, Mismatch, SequenceDiff};
pub use inputs::{poison, random_constants, random_input};
pub use report::{CheckResult, CheckStatus, ContractReport};

/// Names of the checks, in execution order.
pub const CHECKS: [&str; 8] = [
    "layer_step_equal_1x",
    "layer_step_equal_2x",
    "metadata_consistency",
    "receptive_field_empirical",
    "batching_invariance",
    "padding_invariance",
    "emits_consistency",
    "rng_equivalence",
];

/// Listed in every report but never run: there is no autodiff here.
pub const GRADIENT_CHECK: &str = "gradient_equality";

#[derive(Clone, Debug)]
pub struct HarnessConfig {
    pub batch: usize,
    /// Input length; derived from the layer when `None`.
    pub time: Option<usize>,
    pub seed: u64,
    /// Float tolerance for comparing two execution paths; 1e-6, or 1e-5
    /// for trees containing attention, when `None`.
    pub tolerance: Option<f64>,
    /// Perturbation size for the receptive field probe.
    pub epsilon: f32,
    /// Probe distance used to confirm an unbounded receptive field.
    pub probe_cap: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            batch: 3,
            time: None,
            seed: 0,
            tolerance: None,
            epsilon: 1e-3,
            probe_cap: 16,
        }
    }
}

fn contains_kind(layer: &dyn Layer, kind: &str) -> bool {
    layer.kind() == kind || layer.children().iter().any(|c| contains_kind(*c, kind))
}

const BASE_TOLERANCE: f64 = 1e-6;

pub fn default_tolerance(layer: &dyn Layer) -> f64 {
    if contains_kind(layer, "self_attention") {
        1e-5
    } else {
        BASE_TOLERANCE
    }
}

/// Input length covering the latency and a few receptive field periods.
pub fn harness_time(layer: &dyn Layer, probe_cap: usize) -> usize {
    let props = layer.properties();
    let period = props.receptive_field.input_period(props.output_ratio).max(1) as usize;
    let span = match props.overall_receptive_field() {
        Some(iv) => {
            let cap = probe_cap as i64;
            let s = iv.start.finite().map_or(cap, |v| v.abs().min(4 * cap));
            let e = iv.end.finite().map_or(cap, |v| v.abs().min(4 * cap));
            (s + e) as usize
        }
        None => 0,
    };
    let base = 24.max(2 * (span + props.input_latency()) + 2 * period + 8);
    let unit = num_integer::lcm(2 * props.block_size, period);
    round_up(base, unit)
}

/// Compares two sequences: identical extents and masks, values equal at
/// valid positions within `tol` (exactly for int and bool). Returns the
/// largest difference.
pub fn compare(expected: &Sequence, actual: &Sequence, tol: f64) -> std::result::Result<f64, String> {
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
    if let Some(i) = (0..em.len()).find(|&i| em[i] != am[i]) {
        let t = expected.time();
        return Err(format!("mask differs at [{}, {}]", i / t, i % t));
    }
    let width = expected.step_width();
    let mut max_diff = 0.0f64;
    let time = expected.time().max(1);
    for (i, &valid) in em.iter().enumerate() {
        if !valid {
            continue;
        }
        for c in 0..width {
            let k = i * width + c;
            let d = match (expected.values().data(), actual.values().data()) {
                (TensorData::F32(a), TensorData::F32(b)) => (a[k] as f64 - b[k] as f64).abs(),
                (TensorData::I32(a), TensorData::I32(b)) => (a[k] as f64 - b[k] as f64).abs(),
                (TensorData::Bool(a), TensorData::Bool(b)) => f64::from(u8::from(a[k] != b[k])),
                _ => return Err("dtype mismatch".into()),
            };
            let exact = expected.dtype() != DType::F32;
            if d.is_nan() || d > tol || (exact && d > 0.0) {
                return Err(format!(
                    "value differs at [{}, {}] channel {c}: diff {d:e} > {tol:e}",
                    i / time,
                    i % time
                ));
            }
            max_diff = max_diff.max(d);
        }
    }
    Ok(max_diff)
}

struct Harness<'a> {
    layer: &'a dyn Layer,
    cfg: &'a HarnessConfig,
    tol: f64,
    time: usize,
    x: Sequence,
    constants: Constants,
}

/// Runs every check against `layer`.
pub fn verify_contract(layer: &dyn Layer, cfg: &HarnessConfig) -> ContractReport {
    let tol = cfg.tolerance.unwrap_or_else(|| default_tolerance(layer));
    let time = cfg.time.unwrap_or_else(|| harness_time(layer, cfg.probe_cap));
    let mut rng = inputs::rng(cfg.seed);
    let x = random_input(layer.input_spec(), cfg.batch, time, &mut rng);
    let constants = random_constants(layer, cfg.batch, time, &mut rng);
    let h = Harness {
        layer,
        cfg,
        tol,
        time,
        x,
        constants,
    };
    let steppable = layer.properties().supports_step;
    let not_steppable = || CheckStatus::Skipped("layer is not steppable".into());
    let block = layer.properties().block_size;
    let mut checks = Vec::new();
    let mut record = |name: &'static str, outcome: Result<CheckResult>| {
        checks.push(outcome.unwrap_or_else(|e| CheckResult::new(name, CheckStatus::Fail(format!("error: {e}")))));
    };
    record(
        CHECKS[0],
        if steppable { h.layer_step_equal(CHECKS[0], block) } else { Ok(CheckResult::new(CHECKS[0], not_steppable())) },
    );
    record(
        CHECKS[1],
        if steppable {
            h.layer_step_equal(CHECKS[1], 2 * block)
        } else {
            Ok(CheckResult::new(CHECKS[1], not_steppable()))
        },
    );
    record(CHECKS[2], h.metadata());
    record(CHECKS[3], h.receptive_field());
    record(CHECKS[4], h.batching());
    record(CHECKS[5], h.padding());
    record(CHECKS[6], h.emits());
    record(
        CHECKS[7],
        if steppable { h.rng() } else { Ok(CheckResult::new(CHECKS[7], not_steppable())) },
    );
    checks.push(CheckResult::new(
        GRADIENT_CHECK,
        CheckStatus::Skipped("no gradients; sensitivity is covered by receptive_field_empirical".into()),
    ));
    ContractReport {
        layer: layer.meta().path.clone(),
        kind: layer.kind().to_string(),
        tolerance: tol,
        time,
        batch: cfg.batch,
        seed: cfg.seed,
        checks,
    }
}

/// Steps through `x` one block at a time and records the state signature
/// after each call.
fn drive(
    layer: &dyn Layer,
    x: &Sequence,
    block: usize,
    training: bool,
    constants: &Constants,
) -> Result<(Vec<Sequence>, Vec<Emits>, Vec<String>)> {
    let mut state: State = layer.initial_state(x.batch(), training, constants)?;
    let mut signatures = vec![state.signature()];
    let (mut outs, mut emits) = (Vec::new(), Vec::new());
    for start in (0..x.time()).step_by(block) {
        let (y, next, e) = layer.step_with_emits(&x.slice_time(start, start + block)?, state, training, constants)?;
        state = next;
        signatures.push(state.signature());
        outs.push(y);
        emits.push(e);
    }
    Ok((outs, emits, signatures))
}

impl Harness<'_> {
    /// Garbage rows and poisoned padding must not move valid outputs at
    /// all, so these checks never take the widened attention tolerance.
    fn invariance_tol(&self) -> f64 {
        match self.layer.output_spec().dtype {
            DType::F32 => self.cfg.tolerance.unwrap_or(BASE_TOLERANCE),
            _ => 0.0,
        }
    }

    fn fail(name: &'static str, msg: impl Into<String>) -> Result<CheckResult> {
        Ok(CheckResult::new(name, CheckStatus::Fail(msg.into())))
    }

    /// Layer output vs flushed, trimmed step output.
    fn step_matches(
        &self,
        x: &Sequence,
        block: usize,
        training: bool,
        constants: &Constants,
    ) -> Result<std::result::Result<f64, String>> {
        let y = self.layer.layer(x, training, constants)?;
        let (ys, _) = layer_by_steps(self.layer, x, block, training, constants)?;
        Ok(compare(&y, &ys, self.tol))
    }

    fn layer_step_equal(&self, name: &'static str, block: usize) -> Result<CheckResult> {
        Ok(match self.step_matches(&self.x, block, false, &self.constants)? {
            Ok(d) => CheckResult::pass(name).metric("block", block).metric("max_diff", d),
            Err(e) => CheckResult::new(name, CheckStatus::Fail(e)).metric("block", block),
        })
    }

    fn metadata(&self) -> Result<CheckResult> {
        const NAME: &str = CHECKS[2];
        let layer = self.layer;
        let props = layer.properties();
        if &layer.compute_properties() != props {
            return Self::fail(NAME, "recomputed properties differ from the cached ones");
        }
        let (y, _) = layer.layer_with_emits(&self.x, false, &self.constants)?;
        if &y.channel_spec() != layer.output_spec() {
            return Self::fail(
                NAME,
                format!("declared output spec {} but produced {}", layer.output_spec(), y.channel_spec()),
            );
        }
        let expected_time = props.output_time(self.time);
        if expected_time != Some(y.time()) {
            return Self::fail(
                NAME,
                format!("{} input steps gave {} outputs, ratio implies {expected_time:?}", self.time, y.time()),
            );
        }
        let mut result = CheckResult::pass(NAME).metric("output_time", y.time());
        if !props.supports_step {
            return Ok(result);
        }
        let block = props.block_size;
        let first = layer.initial_state(self.x.batch(), false, &self.constants)?;
        let (y1, _) = layer.step(&self.x.slice_time(0, block)?, first, false, &self.constants)?;
        if Some(y1.time()) != props.output_time(block) {
            return Self::fail(NAME, format!("one block of {block} gave {} outputs", y1.time()));
        }
        if &y1.channel_spec() != layer.output_spec() {
            return Self::fail(NAME, format!("step produced {}", y1.channel_spec()));
        }

        // Measured latency: the first shift at which step output matches.
        let declared = props.output_latency;
        let extended = self.x.pad_time(0, 4 * block, false);
        let run = step_through(layer, &extended, block, false, &self.constants)?;
        let measured = (0..=declared + 3).find(|&shift| {
            shift + y.time() <= run.output.time()
                && run
                    .output
                    .slice_time(shift, shift + y.time())
                    .map(|s| compare(&y, &s, self.tol).is_ok())
                    .unwrap_or(false)
        });
        result = result.metric("declared_latency", declared).metric(
            "measured_latency",
            measured.map_or(json!(null), |m| json!(m)),
        );
        if measured != Some(declared) {
            return Ok(result.status(CheckStatus::Fail(format!(
                "declared output latency {declared}, measured {measured:?}"
            ))));
        }
        let (_, _, signatures) = drive(layer, &self.x, block, false, &self.constants)?;
        let distinct: BTreeSet<&String> = signatures.iter().collect();
        if !props.grows_state && distinct.len() > 1 {
            return Ok(result.status(CheckStatus::Fail(format!(
                "state signature changed across steps: {:?}",
                distinct
            ))));
        }
        Ok(result.metric("state_signature", signatures[0].clone()))
    }

    fn receptive_field(&self) -> Result<CheckResult> {
        const NAME: &str = CHECKS[3];
        let layer = self.layer;
        let props = layer.properties();
        let rf = &props.receptive_field;
        let ratio = props.output_ratio;
        let time = self.time;
        let x = self.x.select_rows(&[0])?;
        let constants = self.constants.map_sequences(|s| s.select_rows(&[0]))?;
        let base = layer.layer(&x, false, &constants)?;
        // Both runs take the same path, so unaffected outputs are bit-equal
        // and the threshold does not need the widened attention tolerance.
        let threshold = 10.0 * self.cfg.tolerance.unwrap_or(BASE_TOLERANCE);
        let eps = self.cfg.epsilon;
        let probes: Vec<Result<Vec<bool>>> = exec::map_range(time, true, |u| {
            let y = layer.layer(&inputs::perturb(&x, u, eps), false, &constants)?;
            Ok(changed_outputs(&base, &y, threshold))
        });
        // deps[n] = input steps that output n depends on.
        let n_out = base.time();
        let mut deps: Vec<Vec<i64>> = vec![Vec::new(); n_out];
        for (u, probe) in probes.into_iter().enumerate() {
            for (n, hit) in probe?.into_iter().enumerate() {
                if hit {
                    deps[n].push(u as i64);
                }
            }
        }
        let valid = base.mask_slice();
        let period = rf.period();
        let mut measured: Vec<Option<Interval>> = vec![None; period];
        for (n, d) in deps.iter().enumerate() {
            if !valid[n] || d.is_empty() {
                continue;
            }
            let declared = rf.absolute(ratio, n as i64);
            let anchor = rf.anchor(ratio, n as i64);
            let lo = Interval::new(*d.first().unwrap(), *d.last().unwrap()).shift(-anchor);
            let j = n % period;
            measured[j] = crate::layer::receptive::hull(measured[j], Some(lo));
            match declared {
                None => return Self::fail(NAME, format!("output {n} declared independent but depends on {d:?}")),
                Some(iv) => {
                    if let Some(u) = d.iter().find(|&&u| !iv.contains(u)) {
                        return Self::fail(
                            NAME,
                            format!("output {n} depends on input {u}, outside declared {iv}"),
                        );
                    }
                }
            }
        }
        let rendered: Vec<String> = measured.iter().map(crate::layer::receptive::fmt_optional).collect();
        let mut result = CheckResult::pass(NAME)
            .metric("declared", rf.to_string())
            .metric("measured_relative", rendered);
        let cap = self.cfg.probe_cap as i64;
        if let Some(overall) = props.overall_receptive_field() {
            // Longest dependence seen within the probe cap, per unbounded side.
            let reach = |past: bool| {
                deps.iter()
                    .enumerate()
                    .flat_map(|(n, d)| {
                        let anchor = rf.anchor(ratio, n as i64);
                        d.iter().map(move |&u| if past { anchor - u } else { u - anchor })
                    })
                    .filter(|&dist| dist <= cap)
                    .max()
                    .unwrap_or(0)
            };
            if overall.start == Bound::NegInf {
                result = result.metric("past_reach", format!(">= {}", reach(true)));
            }
            if overall.end == Bound::PosInf {
                result = result.metric("future_reach", format!(">= {}", reach(false)));
            }
        }

        // Finite endpoints must be attained by some interior output of each class.
        let t = time as i64;
        for j in 0..period {
            let Some(decl) = rf.per_step()[j] else { continue };
            let interior: Vec<usize> = (0..n_out)
                .filter(|&n| n % period == j && valid[n])
                .filter(|&n| {
                    let iv = rf.absolute(ratio, n as i64).expect("declared");
                    let anchor = rf.anchor(ratio, n as i64);
                    let start_ok = match iv.start {
                        Bound::At(s) => s >= 0,
                        _ => anchor >= cap,
                    };
                    let end_ok = match iv.end {
                        Bound::At(e) => e < t,
                        _ => anchor + cap < t,
                    };
                    start_ok && end_ok
                })
                .collect();
            if interior.is_empty() {
                return Ok(result.status(CheckStatus::Fail(format!(
                    "no interior output of class {j} within {time} input steps"
                ))));
            }
            let attained = |want: &dyn Fn(usize) -> bool| interior.iter().any(|&n| want(n));
            let start_ok = attained(&|n| {
                let anchor = rf.anchor(ratio, n as i64);
                match decl.start {
                    Bound::At(s) => deps[n].first() == Some(&(anchor + s)),
                    // Unbounded ends cannot be measured; the probe only
                    // reports how far dependence reached.
                    _ => true,
                }
            });
            let end_ok = attained(&|n| {
                let anchor = rf.anchor(ratio, n as i64);
                match decl.end {
                    Bound::At(e) => deps[n].last() == Some(&(anchor + e)),
                    _ => true,
                }
            });
            if !start_ok || !end_ok {
                return Ok(result.status(CheckStatus::Fail(format!(
                    "class {j}: declared {decl} but measured {}",
                    crate::layer::receptive::fmt_optional(&measured[j])
                ))));
            }
        }
        Ok(result)
    }

    fn batching(&self) -> Result<CheckResult> {
        const NAME: &str = CHECKS[4];
        let layer = self.layer;
        let b = self.x.batch();
        let extra = 2;
        // Reverse the rows and append garbage rows.
        let order: Vec<usize> = (0..b).rev().collect();
        let mut rng = inputs::rng(self.cfg.seed ^ 0x5eed);
        let garbage = inputs::garbage_rows(layer.input_spec(), extra, self.time, &mut rng);
        let x2 = Sequence::concat_rows(&[self.x.select_rows(&order)?, garbage])?;
        let c2 = self.constants.map_sequences(|s| {
            let pad = inputs::random_valid(&s.channel_spec(), extra, s.time(), &mut inputs::rng(self.cfg.seed));
            Sequence::concat_rows(&[s.select_rows(&order)?, pad])
        })?;
        let back: Vec<usize> = (0..b).map(|i| b - 1 - i).collect();
        let tol = self.invariance_tol();
        let y = layer.layer(&self.x, false, &self.constants)?;
        let y2 = layer.layer(&x2, false, &c2)?.select_rows(&back)?;
        let mut worst = match compare(&y, &y2, tol) {
            Ok(d) => d,
            Err(e) => return Self::fail(NAME, format!("layer mode: {e}")),
        };
        if layer.properties().supports_step {
            let block = layer.properties().block_size;
            let (ys, _) = layer_by_steps(layer, &self.x, block, false, &self.constants)?;
            let (ys2, _) = layer_by_steps(layer, &x2, block, false, &c2)?;
            match compare(&ys, &ys2.select_rows(&back)?, tol) {
                Ok(d) => worst = worst.max(d),
                Err(e) => return Self::fail(NAME, format!("step mode: {e}")),
            }
        }
        Ok(CheckResult::pass(NAME).metric("garbage_rows", extra).metric("max_diff", worst))
    }

    fn padding(&self) -> Result<CheckResult> {
        const NAME: &str = CHECKS[5];
        let layer = self.layer;
        let block = layer.properties().block_size;
        let extra = 2 * block;
        let poisoned = poison(&self.x.pad_time(0, extra, false));
        let tol = self.invariance_tol();
        let y = layer.layer(&self.x, false, &self.constants)?;
        let yp = layer.layer(&poisoned, false, &self.constants)?;
        let head = yp.slice_time(0, y.time())?;
        let mut worst = match compare(&y, &head, tol) {
            Ok(d) => d,
            Err(e) => return Self::fail(NAME, format!("layer mode: {e}")),
        };
        if layer.properties().supports_step {
            let (ys, _) = layer_by_steps(layer, &self.x, block, false, &self.constants)?;
            let (yps, _) = layer_by_steps(layer, &poisoned, block, false, &self.constants)?;
            match compare(&ys, &yps.slice_time(0, ys.time())?, tol) {
                Ok(d) => worst = worst.max(d),
                Err(e) => return Self::fail(NAME, format!("step mode: {e}")),
            }
        }
        Ok(CheckResult::pass(NAME).metric("extra_steps", extra).metric("max_diff", worst))
    }

    fn emits(&self) -> Result<CheckResult> {
        const NAME: &str = CHECKS[6];
        let layer = self.layer;
        let (_, layer_emits) = layer.layer_with_emits(&self.x, false, &self.constants)?;
        let structure = layer_emits.structure();
        let result = CheckResult::pass(NAME).metric("structure", structure.clone());
        let props = layer.properties();
        if !props.supports_step {
            return Ok(result);
        }
        let block = props.block_size;
        let (_, step_emits, _) = drive(layer, &self.x, block, false, &self.constants)?;
        if let Some(e) = step_emits.iter().find(|e| e.structure() != structure) {
            return Self::fail(NAME, format!("step emits {} but layer emits {structure}", e.structure()));
        }
        if props.output_latency == 0 {
            let joined = Emits::concat_steps(&step_emits)?;
            for (a, b) in layer_emits.sequences().iter().zip(joined.sequences()) {
                let b = if b.time() >= a.time() { b.slice_time(0, a.time())? } else { b.clone() };
                if let Err(e) = compare(a, &b, self.tol) {
                    return Self::fail(NAME, format!("emitted sequence differs: {e}"));
                }
            }
        }
        Ok(result)
    }

    fn rng(&self) -> Result<CheckResult> {
        const NAME: &str = CHECKS[7];
        let block = self.layer.properties().block_size;
        let mut result = CheckResult::pass(NAME);
        for b in [block, 2 * block] {
            if let Err(e) = self.step_matches(&self.x, b, true, &self.constants)? {
                return Self::fail(NAME, format!("training at block {b}: {e}"));
            }
        }
        result = result.metric("stochastic", contains_kind(self.layer, "dropout"));
        Ok(result)
    }
}

/// Per output step, whether any element or the mask changed by more than
/// `threshold`.
fn changed_outputs(base: &Sequence, y: &Sequence, threshold: f64) -> Vec<bool> {
    let width = base.step_width();
    let (bm, ym) = (base.mask_slice(), y.mask_slice());
    (0..base.time())
        .map(|n| {
            if bm[n] != ym.get(n).copied().unwrap_or(false) {
                return true;
            }
            (0..width).any(|c| {
                let k = n * width + c;
                let d = match (base.values().data(), y.values().data()) {
                    (TensorData::F32(a), TensorData::F32(b)) => (a[k] as f64 - b[k] as f64).abs(),
                    (TensorData::I32(a), TensorData::I32(b)) => (a[k] as f64 - b[k] as f64).abs(),
                    (TensorData::Bool(a), TensorData::Bool(b)) => f64::from(u8::from(a[k] != b[k])),
                    _ => f64::INFINITY,
                };
                d.is_nan() || d > threshold
            })
        })
        .collect()
}

/// Output of `layer` computed step-wise in blocks of `block`, trimmed to the
/// layer-mode extent.
pub fn step_by_step(
    layer: &dyn Layer,
    x: &Sequence,
    block: usize,
    training: bool,
    constants: &Constants,
) -> Result<Sequence> {
    Ok(layer_by_steps(layer, x, block, training, constants)?.0)
}

/// Layer-mode output length for `time` input steps.
pub fn expected_output_time(layer: &dyn Layer, time: usize) -> usize {
    output_length(layer, time)
}
