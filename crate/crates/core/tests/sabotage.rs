//! Each deliberately broken layer is caught by the check meant for it.

use seqlayers::config::{build_random, parse_layer};
use seqlayers::verify::sabotage::{build, SabotageKind};
use seqlayers::verify::{verify_contract, HarnessConfig, CHECKS};
use seqlayers::ChannelSpec;

#[test]
fn every_check_catches_its_fault() {
    for kind in SabotageKind::ALL {
        let layer = build(kind, &ChannelSpec::f32([3]), 5).unwrap();
        let report = verify_contract(layer.as_ref(), &HarnessConfig::default());
        let target = kind.target_check();
        let failed = report.failed();
        println!("{kind:?}: {failed:?}");
        assert!(failed.contains(&target), "{kind:?} slipped past {target}\n{}", report.render_text());
        assert!(!report.passed());
    }
}

#[test]
fn every_check_has_a_fault() {
    let mut targets: Vec<&str> = SabotageKind::ALL.iter().map(|k| k.target_check()).collect();
    targets.sort();
    let mut checks = CHECKS.to_vec();
    checks.sort();
    assert_eq!(targets, checks);
}

#[test]
fn misdeclared_field_fails_only_the_field_check() {
    let layer = build(SabotageKind::MisdeclaredField, &ChannelSpec::f32([2]), 0).unwrap();
    let report = verify_contract(layer.as_ref(), &HarnessConfig::default());
    assert_eq!(report.failed(), vec!["receptive_field_empirical"], "{}", report.render_text());
}

#[test]
fn leaky_conv_fails_only_padding() {
    let layer = build(SabotageKind::LeakyConv, &ChannelSpec::f32([2]), 0).unwrap();
    let report = verify_contract(layer.as_ref(), &HarnessConfig::default());
    assert_eq!(report.failed(), vec!["padding_invariance"], "{}", report.render_text());
}

#[test]
fn sabotage_is_reachable_from_config() {
    let cfg = parse_layer("Sabotaged(kind: row_index)").unwrap();
    let layer = build_random(&cfg, &ChannelSpec::f32([2]), 0).unwrap();
    let report = verify_contract(layer.as_ref(), &HarnessConfig::default());
    assert_eq!(report.failed(), vec!["batching_invariance"]);
}

#[test]
fn reports_are_deterministic() {
    let layer = build(SabotageKind::StaleCarry, &ChannelSpec::f32([2]), 1).unwrap();
    let cfg = HarnessConfig { seed: 9, ..HarnessConfig::default() };
    let a = verify_contract(layer.as_ref(), &cfg);
    let b = verify_contract(layer.as_ref(), &cfg);
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
}
