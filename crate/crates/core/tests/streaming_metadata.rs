//! Declared metadata of single layers and compositions, and the streaming
//! protocol built on it.

use num_rational::Rational64;

use seqlayers::config::{build_random, build_root, parse_layer};
use seqlayers::layer::streaming::{layer_by_steps, step_through};
use seqlayers::layer::{Bound, Interval};
use seqlayers::verify::inputs::{random_input, random_valid, rng};
use seqlayers::verify::{compare, verify_contract, HarnessConfig};
use seqlayers::{BuildCtx, ChannelSpec, Constants, Layer, Sequence};

fn build(spec: &str, input: &str) -> Box<dyn Layer> {
    let cfg = parse_layer(spec).unwrap_or_else(|e| panic!("{spec}: {e}"));
    build_random(&cfg, &input.parse().unwrap(), 5).unwrap_or_else(|e| panic!("{spec}: {e}"))
}

fn overall(layer: &dyn Layer) -> Option<Interval> {
    layer.properties().overall_receptive_field()
}

fn iv(a: i64, b: i64) -> Option<Interval> {
    Some(Interval::new(a, b))
}

#[test]
fn receptive_field_table() {
    let conv = |padding: &str| format!("Conv1D(filters: 3, kernel_size: 5, padding: {padding})");
    assert_eq!(overall(build(&conv("causal"), "f32[2]").as_ref()), iv(-4, 0));
    assert_eq!(overall(build(&conv("reverse_causal"), "f32[2]").as_ref()), iv(0, 4));
    assert_eq!(overall(build(&conv("same"), "f32[2]").as_ref()), iv(-2, 2));

    let stack = format!("Serial(children: [{0}, {0}, {0}, {0}])", conv("same"));
    assert_eq!(overall(build(&stack, "f32[2]").as_ref()), iv(-8, 8));

    let lstm = build("LSTM(units: 3)", "f32[2]");
    assert_eq!(
        overall(lstm.as_ref()),
        Some(Interval::with_bounds(Bound::NegInf, Bound::At(0)))
    );

    let sparse = build("Conv1DTranspose(filters: 1, kernel_size: 1, stride: 2, padding: same)", "f32[1]");
    assert_eq!(sparse.properties().receptive_field.per_step().to_vec(), vec![iv(0, 0), None]);
    assert_eq!(overall(sparse.as_ref()), iv(0, 0));

    let mixed = build(
        "Serial(children: [
            Conv1D(filters: 1, kernel_size: 5, strides: 2, padding: same),
            Conv1DTranspose(filters: 1, kernel_size: 6, strides: 4, padding: same),
        ])",
        "f32[1]",
    );
    assert_eq!(
        mixed.properties().receptive_field.per_step().to_vec(),
        vec![iv(-4, 2), iv(-2, 2), iv(-2, 2), iv(-2, 4)]
    );
    assert_eq!(overall(mixed.as_ref()), iv(-4, 3));
}

#[test]
fn strided_serial_decimates_by_six() {
    let model = build(
        "Serial(children: [
            Conv1D(filters: 5, kernel_size: 3, stride: 2, padding: causal),
            Conv1D(filters: 8, kernel_size: 5, stride: 3, padding: causal),
        ])",
        "f32[4]",
    );
    let props = model.properties();
    assert_eq!(props.output_ratio, Rational64::new(1, 6));
    assert_eq!(props.block_size, 6);
    for t in [6, 12, 36] {
        let x = random_valid(&ChannelSpec::f32([4]), 2, t, &mut rng(t as u64));
        let y = model.layer(&x, true, &Constants::new()).unwrap();
        assert_eq!(y.values().shape(), &[2, t / 6, 8]);
        let (y_step, _) = layer_by_steps(model.as_ref(), &x, 6, true, &Constants::new()).unwrap();
        assert_eq!(compare(&y, &y_step, 0.0), Ok(0.0));
    }
}

#[test]
fn lookahead_conv_flush_and_trim() {
    let model = build("Conv1D(filters: 3, kernel_size: 5, padding: reverse_causal)", "f32[3]");
    let props = model.properties();
    assert_eq!(props.input_latency(), 4);
    assert_eq!(props.output_latency, 4);

    let x = random_valid(&ChannelSpec::f32([3]), 2, 24, &mut rng(3));
    let y = model.layer(&x, true, &Constants::new()).unwrap();
    // Pad with input_latency invalid steps, step once per timestep, drop
    // the first output_latency outputs.
    let padded = x.pad_time(0, props.input_latency(), false);
    let mut state = model.initial_state(2, false, &Constants::new()).unwrap();
    let mut outs = Vec::new();
    for t in 0..padded.time() {
        let (o, s) = model.step(&padded.slice_time(t, t + 1).unwrap(), state, false, &Constants::new()).unwrap();
        outs.push(o);
        state = s;
    }
    let y_step = Sequence::concatenate(&outs).unwrap();
    let y_step = y_step.slice_time(props.output_latency, y_step.time()).unwrap();
    let diff = compare(&y, &y_step, 1e-6).unwrap();
    assert!(diff <= 1e-6);
}

#[test]
fn empty_serial_is_identity() {
    let model = build("Serial(children: [])", "f32[3]");
    let x = random_input(&ChannelSpec::f32([3]), 2, 9, &mut rng(1));
    let y = model.layer(&x, false, &Constants::new()).unwrap();
    assert_eq!(compare(&x.mask_invalid(), &y, 0.0), Ok(0.0));
    let p = model.properties();
    assert_eq!((p.block_size, p.output_latency), (1, 0));
    assert_eq!(overall(model.as_ref()), iv(0, 0));
}

#[test]
fn recurrent_output_depends_on_inputs_eight_steps_back() {
    let model = build("LSTM(units: 4)", "f32[3]");
    let x = random_valid(&ChannelSpec::f32([3]), 1, 16, &mut rng(8));
    let y = model.layer(&x, false, &Constants::new()).unwrap();
    let mut bumped = x.values().as_f32().unwrap().to_vec();
    bumped[2 * 3] += 1e-3;
    let x2 = Sequence::from_values(seqlayers::Tensor::from_f32(vec![1, 16, 3], bumped).unwrap()).unwrap();
    let y2 = model.layer(&x2, false, &Constants::new()).unwrap();
    let (a, b) = (y.values().as_f32().unwrap(), y2.values().as_f32().unwrap());
    let step = |t: usize| (0..4).map(|c| (a[t * 4 + c] - b[t * 4 + c]).abs()).fold(0.0f32, f32::max);
    // Perturbing step 2 moves step 10 but nothing before step 2.
    assert!(step(10) > 0.0, "no dependence at distance 8");
    assert!((0..2).all(|t| step(t) == 0.0), "dependence on the future");
}

#[test]
fn dropout_streams_identically_for_any_partition() {
    let model = build("Dropout(rate: 0.5)", "f32[3]");
    let x = random_input(&ChannelSpec::f32([3]), 2, 64, &mut rng(64));
    let y = model.layer(&x, true, &Constants::new()).unwrap();
    let mask = y.mask_slice();
    let kept: Vec<bool> = y
        .values()
        .as_f32()
        .unwrap()
        .chunks(3)
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|(v, _)| v.iter().map(|&a| a != 0.0))
        .collect();
    let dropped = kept.iter().filter(|&&k| !k).count() as f64 / kept.len() as f64;
    assert!((0.35..0.65).contains(&dropped), "rate 0.5 dropped {dropped}");
    let block = model.properties().block_size;
    for partition in [1, 3, 2 * block] {
        let (y_step, _) = layer_by_steps(model.as_ref(), &x, partition, true, &Constants::new()).unwrap();
        assert_eq!(compare(&y, &y_step, 0.0), Ok(0.0), "block {partition}");
    }
}

#[test]
fn blockwise_at_four_times_native_block() {
    let cases = [
        ("Conv1D(filters: 2, kernel_size: 3, padding: causal)", "f32[3]"),
        ("Conv1D(filters: 2, kernel_size: 3, stride: 2)", "f32[2]"),
        ("LSTM(units: 3)", "f32[2]"),
        ("DotProductSelfAttention(num_heads: 2, units_per_head: 2, max_past_horizon: 3)", "f32[3]"),
        ("Serial(children: [Conv1D(filters: 2, kernel_size: 2, stride: 2), Conv1D(filters: 2, kernel_size: 2, stride: 3)])", "f32[2]"),
    ];
    for (inner, input) in cases {
        let native = build(inner, input).properties().block_size;
        let wrapped = build(&format!("Blockwise(layer: {inner}, block_size: {})", 4 * native), input);
        // Same parameters for the bare child, loaded from the wrapper's.
        let archive = wrapped
            .parameters()
            .into_iter()
            .map(|(k, v)| (k.trim_start_matches("blockwise/").to_string(), v))
            .collect();
        let mut ctx = BuildCtx::from_archive(archive, 5);
        let child = build_root(&parse_layer(inner).unwrap(), &input.parse().unwrap(), &mut ctx).unwrap();
        ctx.finish().unwrap();
        assert_eq!(wrapped.properties().block_size, 4 * native, "{inner}");
        let t = 16 * native;
        let x = random_input(&input.parse().unwrap(), 2, t, &mut rng(t as u64));
        let a = child.layer(&x, false, &Constants::new()).unwrap();
        let b = wrapped.layer(&x, false, &Constants::new()).unwrap();
        let diff = compare(&a, &b, 1e-6).unwrap_or_else(|e| panic!("{inner}: {e}"));
        assert!(diff <= 1e-6);
    }
}

#[test]
fn blockwise_reports_the_wrapped_block_size() {
    let model = build(
        "Blockwise(layer: Residual(children: [LayerNormalization(), Dense(units: 4)]), block_size: 1024)",
        "f32[4]",
    );
    assert_eq!(model.properties().block_size, 1024);
}

#[test]
fn bidirectional_refuses_to_step() {
    let model = build("Bidirectional(forward: LSTM(units: 2), backward: LSTM(units: 2))", "f32[2]");
    assert!(!model.properties().supports_step);
    let x = random_valid(&ChannelSpec::f32([2]), 1, 4, &mut rng(0));
    assert!(step_through(model.as_ref(), &x, 1, false, &Constants::new()).is_err());
    let report = verify_contract(model.as_ref(), &HarnessConfig::default());
    assert!(report.passed());
    for name in ["layer_step_equal_1x", "layer_step_equal_2x", "rng_equivalence"] {
        assert_eq!(report.check(name).unwrap().status.label(), "skipped", "{name}");
    }
}

#[test]
fn every_report_lists_the_gradient_check_as_skipped() {
    let model = build("Identity()", "f32[1]");
    let report = verify_contract(model.as_ref(), &HarnessConfig::default());
    assert_eq!(report.check("gradient_equality").unwrap().status.label(), "skipped");
    assert_eq!(report.checks.len(), 9);
}
