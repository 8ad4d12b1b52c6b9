//! Test-only oracles shared by integration tests and the acceptance suite.
#![allow(dead_code)]

use gpfr_core::nn::{softmax_cross_entropy, Layer, Rng, Sequential, Tensor};
use rand::{seq::SliceRandom, Rng as _, SeedableRng};

pub const FD_STEP: f64 = 1e-4;

/// Relative error with a floor on the denominator so that two vanishing
/// gradients compare equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Objective used to probe a stack: either a fixed random projection of
/// the output, or mean softmax cross-entropy against labels.
pub enum Probe {
    Project(Vec<f64>),
    CrossEntropy(Vec<usize>),
}

impl Probe {
    fn value(&self, y: &Tensor<f64>) -> f64 {
        match self {
            Probe::Project(r) => y.data().iter().zip(r).map(|(a, b)| a * b).sum(),
            Probe::CrossEntropy(l) => softmax_cross_entropy(y, l).unwrap().0,
        }
    }

    fn grad(&self, y: &Tensor<f64>) -> Tensor<f64> {
        match self {
            Probe::Project(r) => Tensor::new(y.shape().to_vec(), r.clone()).unwrap(),
            Probe::CrossEntropy(l) => softmax_cross_entropy(y, l).unwrap().1,
        }
    }
}

pub struct CheckOutcome {
    pub worst: f64,
    pub checked: usize,
}

/// Compare analytic gradients (input and every parameter tensor) against
/// central differences on `samples` random coordinates per tensor.
pub fn check_stack(stack: &Sequential<f64>, x: &Tensor<f64>, probe: &Probe, samples: usize, rng: &mut Rng) -> CheckOutcome {
    let (y, trace) = stack.forward_train(x.clone(), None).unwrap();
    let (dx, grads) = stack.backward(&trace, probe.grad(&y)).unwrap();
    let loss = |s: &Sequential<f64>, inp: &Tensor<f64>| probe.value(&s.forward(inp.clone()).unwrap());

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut coords: Vec<usize> = (0..x.len()).collect();
    coords.shuffle(rng);
    for &i in coords.iter().take(samples) {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus.data_mut()[i] += FD_STEP;
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (loss(stack, &plus) - loss(stack, &minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dx.data()[i], numeric));
        checked += 1;
    }
    for (p, g) in grads.iter().enumerate() {
        let mut coords: Vec<usize> = (0..g.len()).collect();
        coords.shuffle(rng);
        for &i in coords.iter().take(samples) {
            let eval = |delta: f64| {
                let mut s = stack.clone();
                s.params_mut()[p].data_mut()[i] += delta;
                loss(&s, x)
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[i], numeric));
            checked += 1;
        }
    }
    CheckOutcome { worst, checked }
}

/// Values bounded away from zero (relu kink) and pairwise separated by far
/// more than the finite-difference step (max-pool ties).
pub fn separated_values(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let mag = 0.05 + 0.9 * (i as f64 + 0.5) / n as f64;
            if rng.gen_bool(0.5) { mag } else { -mag }
        })
        .collect();
    v.shuffle(rng);
    v
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Layer kinds under test and a random single-kind configuration for each.
pub const KINDS: [&str; 7] = ["dense", "conv2d", "maxpool2d", "dropout-eval", "tanh", "relu", "softmax+ce"];

pub fn random_case(kind: &str, rng: &mut Rng) -> (Sequential<f64>, Tensor<f64>, Probe) {
    let batch = rng.gen_range(1..=3);
    let project = |shape: &[usize], rng: &mut Rng| {
        let n: usize = shape.iter().product::<usize>() * batch;
        Probe::Project((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    match kind {
        "dense" => {
            let (i, o) = (rng.gen_range(1..=7), rng.gen_range(1..=6));
            let s = Sequential::new(vec![i], vec![Layer::dense(i, o, rng)]).unwrap();
            let p = project(&[o], rng);
            (s, random_tensor(vec![batch, i], rng), p)
        }
        "conv2d" => {
            let (c, oc) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(kh..=kh + 4), rng.gen_range(kw..=kw + 4));
            let mut layer = Layer::conv2d(c, oc, (kh, kw), rng);
            let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            if let Layer::Conv2d { stride: s, bias, .. } = &mut layer {
                *s = stride;
                bias.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            }
            let s = Sequential::new(vec![c, h, w], vec![layer]).unwrap();
            let p = project(s.output_shape(), rng);
            (s, random_tensor(vec![batch, c, h, w], rng), p)
        }
        "maxpool2d" => {
            let c = rng.gen_range(1..=3);
            let size = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(size.0..=size.0 + 5), rng.gen_range(size.1..=size.1 + 5));
            let s = Sequential::new(vec![c, h, w], vec![Layer::max_pool(size)]).unwrap();
            let p = project(s.output_shape(), rng);
            let x = Tensor::new(vec![batch, c, h, w], separated_values(batch * c * h * w, rng)).unwrap();
            (s, x, p)
        }
        "dropout-eval" => {
            let n = rng.gen_range(1..=10);
            let s = Sequential::new(vec![n], vec![Layer::Dropout { rate: rng.gen_range(0.0..0.9) }]).unwrap();
            let p = project(&[n], rng);
            (s, random_tensor(vec![batch, n], rng), p)
        }
        "tanh" | "relu" => {
            let n = rng.gen_range(1..=10);
            let act = gpfr_core::nn::Activation::parse(kind).unwrap();
            let s = Sequential::new(vec![n], vec![Layer::Activation(act)]).unwrap();
            let p = project(&[n], rng);
            let x = Tensor::new(vec![batch, n], separated_values(batch * n, rng)).unwrap();
            (s, x, p)
        }
        "softmax+ce" => {
            let (i, k) = (rng.gen_range(1..=6), rng.gen_range(2..=6));
            let s = Sequential::new(vec![i], vec![Layer::dense(i, k, rng)]).unwrap();
            let labels = (0..batch).map(|_| rng.gen_range(0..k)).collect();
            (s, random_tensor(vec![batch, i], rng), Probe::CrossEntropy(labels))
        }
        other => panic!("unknown kind {other}"),
    }
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
