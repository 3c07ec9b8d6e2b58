//! Property suites: spike binarity, reset arithmetic, inference prefix,
//! event-count conservation, checkpoint round trip and seed determinism.

mod common;

use common::props;

fn check(outcome: props::Outcome) {
    if let Err(e) = outcome {
        panic!("{e}");
    }
}

#[test]
fn spikes_are_binary() {
    check(props::spikes_are_binary(10_000));
}

#[test]
fn soft_reset_arithmetic() {
    check(props::soft_reset_arithmetic(512));
}

#[test]
fn sequence_prefix_is_stable() {
    check(props::sequence_prefix_is_stable(512));
}

#[test]
fn integration_conserves_events() {
    check(props::integration_conserves_events(512));
}

#[test]
fn checkpoint_round_trip() {
    check(props::checkpoint_round_trip(256));
}

#[test]
fn inference_prefix_property() {
    check(props::inference_prefix(16));
}

#[test]
fn seed_determinism() {
    check(props::seed_determinism());
}
