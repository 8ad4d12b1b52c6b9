mod common;

use common::{check_stack, random_case, random_tensor, seeded, Probe, KINDS};
use gpfr_core::nn::{Activation, Layer, Sequential};
use rand::Rng as _;

#[test]
fn every_layer_kind_matches_finite_differences() {
    let mut rng = seeded(11);
    for kind in KINDS {
        for _ in 0..5 {
            let (stack, x, probe) = random_case(kind, &mut rng);
            let out = check_stack(&stack, &x, &probe, 5, &mut rng);
            assert!(out.worst <= 1e-4, "{kind}: relative error {}", out.worst);
        }
    }
}

#[test]
fn softmax_layer_backward_matches_finite_differences() {
    let mut rng = seeded(5);
    for _ in 0..10 {
        let k = rng.gen_range(2..=6);
        let stack = Sequential::new(vec![k], vec![Layer::Softmax]).unwrap();
        let x = random_tensor(vec![2, k], &mut rng);
        let probe = Probe::Project((0..2 * k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let out = check_stack(&stack, &x, &probe, 5, &mut rng);
        assert!(out.worst <= 1e-4, "softmax: {}", out.worst);
    }
}

#[test]
fn small_encoder_stack_matches_finite_differences() {
    let mut rng = seeded(21);
    let stack = Sequential::new(
        vec![2, 7, 7],
        vec![
            Layer::conv2d(2, 3, (3, 3), &mut rng),
            Layer::Activation(Activation::Tanh),
            Layer::conv2d(3, 2, (2, 2), &mut rng),
            Layer::Activation(Activation::Tanh),
            Layer::Dropout { rate: 0.25 },
            Layer::Flatten,
            Layer::dense(32, 4, &mut rng),
        ],
    )
    .unwrap();
    let x = random_tensor(vec![2, 2, 7, 7], &mut rng);
    let out = check_stack(&stack, &x, &Probe::CrossEntropy(vec![1, 3]), 8, &mut rng);
    assert!(out.worst <= 1e-4, "stack: {}", out.worst);
}
