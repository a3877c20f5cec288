mod oracles;

use std::time::Instant;

use oracles::grad::{model_error, op_errors};

#[test]
fn every_tape_op_matches_finite_differences() {
    for (name, err) in op_errors(20, 7) {
        assert!(err < 1e-2, "{name}: worst relative error {err:.2e}");
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let start = Instant::now();
    let err = model_error(20, 3);
    assert!(err < 1e-2, "worst relative error {err:.2e}");
    assert!(start.elapsed().as_secs() < 120);
}
