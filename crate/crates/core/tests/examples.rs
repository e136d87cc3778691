//! The quick examples, compiled into this test and run as they are.

#[path = "../examples/inspect_model.rs"]
mod inspect_model;

#[path = "../examples/frame_and_trace.rs"]
mod frame_and_trace;

#[path = "../examples/continuity_replay.rs"]
mod continuity_replay;

#[test]
fn inspect_model_example() {
    inspect_model::main().unwrap();
}

#[test]
fn frame_and_trace_example() {
    frame_and_trace::main().unwrap();
}

#[test]
fn continuity_replay_example() {
    continuity_replay::main().unwrap();
}
