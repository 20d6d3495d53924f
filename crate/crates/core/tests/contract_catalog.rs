//! Every layer in the catalog, alone and in compositions, passes the full
//! contract battery.

use seqlayers::config::{build_random, parse_layer};
use seqlayers::verify::{verify_contract, HarnessConfig};
use seqlayers::ChannelSpec;

fn check(spec: &str, input: &str) {
    let cfg = parse_layer(spec).unwrap_or_else(|e| panic!("{spec}: {e}"));
    let input: ChannelSpec = input.parse().unwrap();
    let layer = build_random(&cfg, &input, 11).unwrap_or_else(|e| panic!("{spec}: {e}"));
    let report = verify_contract(layer.as_ref(), &HarnessConfig::default());
    assert!(report.passed(), "{spec}\n{}", report.render_text());
}

macro_rules! catalog {
    ($($name:ident: $spec:expr, $input:expr;)*) => {
        $(
            #[test]
            fn $name() {
                check($spec, $input);
            }
        )*
    };
}

catalog! {
    identity: "Identity()", "f32[3]";
    emit: "Emit()", "f32[3]";
    dense: "Dense(units: 4)", "f32[3]";
    dense_rank2: "Dense(units: 2)", "f32[2, 3]";
    layer_norm: "LayerNormalization()", "f32[5]";
    rms_norm: "RMSNormalization()", "f32[5]";
    dropout: "Dropout(rate: 0.3)", "f32[4]";
    relu: "Relu()", "f32[3]";
    gelu: "Gelu()", "f32[3]";
    sigmoid: "Sigmoid()", "f32[3]";
    tanh: "Tanh()", "f32[3]";
    swish: "Swish()", "f32[3]";
    softplus: "Softplus()", "f32[3]";
    leaky_relu: "LeakyRelu()", "f32[3]";
    elu: "Elu()", "f32[3]";
    abs_int: "Abs()", "i32[3]";
    exp: "Exp()", "f32[3]";
    scale: "Scale(value: 2.5)", "f32[3]";
    add: "Add(value: -1.0)", "f32[3]";
    mod_int: "Mod(value: 3.0)", "i32[2]";
    maximum: "Maximum(value: 0.1)", "f32[2]";
    softmax: "Softmax()", "f32[4]";
    reshape: "Reshape(shape: [2, -1])", "f32[6]";
    flatten: "Flatten()", "f32[2, 3]";
    expand_dims: "ExpandDims(axis: 0)", "f32[3]";
    squeeze: "Squeeze(axis: 1)", "f32[3, 1]";
    move_axis: "MoveAxis(source: 0, destination: 1)", "f32[2, 3]";
    transpose: "Transpose(perm: [1, 0])", "f32[2, 3]";
    conv_causal: "Conv1D(filters: 3, kernel_size: 5)", "f32[2]";
    conv_reverse: "Conv1D(filters: 3, kernel_size: 5, padding: reverse_causal)", "f32[2]";
    conv_same: "Conv1D(filters: 2, kernel_size: 4, padding: same)", "f32[2]";
    conv_strided: "Conv1D(filters: 2, kernel_size: 3, stride: 2, padding: same)", "f32[2]";
    conv_dilated: "Conv1D(filters: 2, kernel_size: 3, dilation: 2)", "f32[2]";
    conv_stride_gt_kernel: "Conv1D(filters: 2, kernel_size: 2, stride: 3, padding: reverse_causal)", "f32[1]";
    transpose_causal: "Conv1DTranspose(filters: 2, kernel_size: 4, stride: 2)", "f32[3]";
    transpose_same: "Conv1DTranspose(filters: 2, kernel_size: 3, stride: 2, padding: same)", "f32[3]";
    transpose_reverse: "Conv1DTranspose(filters: 2, kernel_size: 5, stride: 3, padding: reverse_causal)", "f32[2]";
    transpose_sparse: "Conv1DTranspose(filters: 1, kernel_size: 1, stride: 2, padding: same)", "f32[2]";
    max_pool: "MaxPooling1D(pool_size: 3, stride: 2)", "f32[2]";
    avg_pool: "AveragePooling1D(pool_size: 2, stride: 2, padding: same)", "f32[2]";
    min_pool: "MinPooling1D(pool_size: 3, padding: reverse_causal)", "f32[2]";
    upsample: "Upsample1D(rate: 3)", "f32[2]";
    downsample: "Downsample1D(rate: 2)", "f32[2]";
    delay: "Delay(length: 3)", "f32[2]";
    lookahead: "Lookahead(length: 2)", "f32[2]";
    frame: "Frame(frame_length: 4, frame_step: 2)", "f32[2]";
    frame_reverse: "Frame(frame_length: 3, frame_step: 1, padding: reverse_causal)", "f32[1]";
    window: "Window()", "f32[4, 2]";
    overlap_add: "OverlapAdd(frame_length: 4, frame_step: 2)", "f32[4, 2]";
    attention_causal: "DotProductSelfAttention(num_heads: 2, units_per_head: 3)", "f32[4]";
    attention_local: "DotProductSelfAttention(num_heads: 1, units_per_head: 4, max_past_horizon: 3, max_future_horizon: 2)", "f32[4]";
    attention_future: "DotProductSelfAttention(num_heads: 2, units_per_head: 2, max_past_horizon: 0, max_future_horizon: 3)", "f32[3]";
    lstm: "LSTM(units: 4)", "f32[3]";
    conditioning_add: "Conditioning(key: \"speaker\", mode: add)", "f32[3]";
    conditioning_concat: "Conditioning(key: \"speaker\", mode: concat, channels: 2)", "f32[3]";
    serial_mixed: "Serial(children: [Conv1D(filters: 4, kernel_size: 3, stride: 2, padding: same), Conv1DTranspose(filters: 2, kernel_size: 4, stride: 2, padding: same)])", "f32[2]";
    serial_latency_then_block: "Serial(children: [Conv1D(filters: 2, kernel_size: 3, padding: reverse_causal), Conv1D(filters: 2, kernel_size: 2, stride: 2)])", "f32[2]";
    serial_same_stack: "Serial(children: [Conv1D(filters: 4, kernel_size: 5, padding: same), Conv1D(filters: 4, kernel_size: 5, padding: same), Conv1D(filters: 4, kernel_size: 5, padding: same), Conv1D(filters: 4, kernel_size: 5, padding: same)])", "f32[4]";
    parallel_concat: "Parallel(children: [Conv1D(filters: 2, kernel_size: 3, padding: reverse_causal), Dense(units: 3)], combine: concat)", "f32[2]";
    parallel_stack: "Parallel(children: [Delay(length: 2), Identity()], combine: stack)", "f32[2]";
    parallel_mean: "Parallel(children: [LSTM(units: 2), Dense(units: 2)], combine: mean)", "f32[3]";
    residual: "Residual(children: [LayerNormalization(), Conv1D(filters: 3, kernel_size: 3, padding: same), Relu()])", "f32[3]";
    repeat: "Repeat(layer: Conv1D(filters: 2, kernel_size: 2, padding: reverse_causal), num_repeats: 3)", "f32[2]";
    bidirectional: "Bidirectional(forward: LSTM(units: 2), backward: LSTM(units: 3))", "f32[2]";
    blockwise: "Blockwise(layer: Conv1D(filters: 2, kernel_size: 3, stride: 2), block_size: 8)", "f32[2]";
    frame_mix_overlap_add: "Serial(children: [Frame(frame_length: 4, frame_step: 2), Flatten(), Dense(units: 8), Reshape(shape: [4, 2]), OverlapAdd(frame_length: 4, frame_step: 2)])", "f32[2]";
    downsample_upsample: "Serial(children: [Downsample1D(rate: 2), Dense(units: 2), Upsample1D(rate: 2)])", "f32[2]";
}
