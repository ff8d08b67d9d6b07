mod common;

use common::{max_gradient_error, tiny_episode};
use tent_core::harness::Variant;

fn shape(i: u64) -> (usize, usize, usize) {
    let n = 2 + (i as usize % 2);
    let k = 1 + (i as usize / 2 % 2);
    (n, k, (4 + i as usize % 5).max(n + 2))
}

#[test]
fn full_episode_gradients_match_finite_differences() {
    for i in 0..6 {
        let (n, k, dim) = shape(i);
        let t = tiny_episode(100 + i, n, k, dim, 0.3);
        let (err, at) = max_gradient_error(&t.model, &t.graph, &t.task, Variant::Full, 1.0, 1e-6);
        assert!(err < 1e-4, "episode {i}: {err:e} at {at}");
    }
}

#[test]
fn every_variant_has_correct_gradients() {
    for variant in Variant::ALL {
        let t = tiny_episode(11, 3, 2, 5, 0.3);
        let (err, at) = max_gradient_error(&t.model, &t.graph, &t.task, variant, 1.0, 1e-6);
        assert!(err < 1e-4, "{variant}: {err:e} at {at}");
    }
}
