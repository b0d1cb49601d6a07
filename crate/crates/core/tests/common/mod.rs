//! Helpers shared by several test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vehiclescan::classifier::{Architecture, BranchInput, MultiBranchModel, PATCH_H, PATCH_W, WINDOW};
use vehiclescan::netcore::{weighted_bce, Cache, LayerSpec, Sequential, Tensor};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// `|a - n|` relative to the larger magnitude, with a floor so that two tiny
/// values do not count as a large relative error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Single-layer stacks covering every layer kind, with their input shapes.
pub fn layer_cases() -> Vec<(&'static str, Vec<LayerSpec>, Vec<usize>)> {
    vec![
        ("conv 3x3 pad 1", vec![LayerSpec::Conv { out_ch: 3, k: 3, stride: 1, pad: 1 }], vec![2, 6, 5]),
        ("conv 3x3 stride 2", vec![LayerSpec::Conv { out_ch: 2, k: 3, stride: 2, pad: 0 }], vec![3, 7, 7]),
        ("max pool 2", vec![LayerSpec::MaxPool(2)], vec![2, 6, 4]),
        ("roi pool 3x2", vec![LayerSpec::RoiPool { out_h: 3, out_w: 2 }], vec![2, 7, 5]),
        ("fully connected", vec![LayerSpec::Fc(4)], vec![2, 3, 2]),
        ("relu", vec![LayerSpec::Relu], vec![3, 4, 4]),
        ("sigmoid", vec![LayerSpec::Sigmoid], vec![10]),
    ]
}

fn weighted_sum(out: &Tensor<f64>, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn routing_same(a: &[Cache<f64>], b: &[Cache<f64>]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.same_routing(y))
}

/// Largest relative error over parameters and inputs of `L = sum(r * f(x))`,
/// skipping coordinates whose perturbation flips a ReLU or pooling decision.
/// Returns `(max error, coordinates compared)`.
pub fn check_sequential(net: &mut Sequential<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let (out, caches) = net.forward(x).unwrap();
    let r: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = Tensor::from_vec(out.shape(), r.clone()).unwrap();
    let mut grads = net.zero_grads();
    let gin = net.backward(&caches, &g, &mut grads, true).unwrap().unwrap();
    let mut worst = 0.0f64;
    let mut compared = 0;
    let eval = |net: &Sequential<f64>, x: &Tensor<f64>| {
        let (o, c) = net.forward(x).unwrap();
        (weighted_sum(&o, &r), c)
    };
    for p in 0..grads.len() {
        for i in 0..grads[p].len() {
            let orig = net.params()[p].values[i];
            net.params_mut()[p].values[i] = orig + STEP;
            let (lp, cp) = eval(net, x);
            net.params_mut()[p].values[i] = orig - STEP;
            let (lm, cm) = eval(net, x);
            net.params_mut()[p].values[i] = orig;
            if !routing_same(&cp, &caches) || !routing_same(&cm, &caches) {
                continue;
            }
            worst = worst.max(rel_err(grads[p][i], (lp - lm) / (2.0 * STEP)));
            compared += 1;
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let (lp, cp) = eval(net, &xp);
        let (lm, cm) = eval(net, &xm);
        if !routing_same(&cp, &caches) || !routing_same(&cm, &caches) {
            continue;
        }
        worst = worst.max(rel_err(gin.data()[i], (lp - lm) / (2.0 * STEP)));
        compared += 1;
    }
    (worst, compared)
}

/// Gradient check for every layer kind on one seed.
pub fn check_all_layers(seed: u64) -> Vec<(&'static str, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layer_cases()
        .into_iter()
        .map(|(name, specs, shape)| {
            let mut net = Sequential::<f64>::new(&specs, &shape, "t", &mut rng).unwrap();
            for p in net.params_mut() {
                for v in &mut p.values {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
            let x = random_tensor(&shape, &mut rng);
            let (err, n) = check_sequential(&mut net, &x, &mut rng);
            (name, err, n)
        })
        .collect()
}

pub fn random_input(rng: &mut ChaCha8Rng) -> BranchInput<f64> {
    BranchInput {
        window: random_tensor(&[4, WINDOW, WINDOW], rng),
        subwindow: random_tensor(&[4, PATCH_H, PATCH_W], rng),
        anchor: random_tensor(&[4, PATCH_H, PATCH_W], rng),
    }
}

fn value(m: &mut MultiBranchModel<f64>, net: usize, p: usize, i: usize) -> &mut f64 {
    let n = m.nets_mut().into_iter().nth(net).unwrap();
    &mut n.params_mut().into_iter().nth(p).unwrap().values[i]
}

/// Full three-branch model in f64 with the zeroed output layer re-randomised
/// so gradients reach every branch. Checks `samples` coordinates per array.
pub fn check_full_model(seed: u64, samples: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MultiBranchModel::<f32>::new(&Architecture::default(), &mut rng).unwrap().cast::<f64>();
    for p in model.head.params_mut() {
        if p.values.iter().all(|&v| v == 0.0) {
            for v in &mut p.values {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let x = random_input(&mut rng);
    let vehicle = rng.random_bool(0.5);
    let weight = rng.random_range(0.5..2.0);
    let loss = |m: &MultiBranchModel<f64>| -> (f64, _) {
        let c = m.forward(&x).unwrap();
        (weighted_bce(c.prob, vehicle, weight).0, c)
    };
    let (_, caches) = loss(&model);
    let (_, dl_dp) = weighted_bce(caches.prob, vehicle, weight);
    let mut grads = model.zero_grads();
    model.backward(&caches, dl_dp, &mut grads, true).unwrap();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for net in 0..4 {
        for p in 0..grads[net].len() {
            let len = grads[net][p].len();
            for _ in 0..samples.min(len) {
                let i = rng.random_range(0..len);
                let orig = *value(&mut model, net, p, i);
                *value(&mut model, net, p, i) = orig + STEP;
                let (lp, cp) = loss(&model);
                *value(&mut model, net, p, i) = orig - STEP;
                let (lm, cm) = loss(&model);
                *value(&mut model, net, p, i) = orig;
                if !cp.same_routing(&caches) || !cm.same_routing(&caches) {
                    continue;
                }
                worst = worst.max(rel_err(grads[net][p][i], (lp - lm) / (2.0 * STEP)));
                compared += 1;
            }
        }
    }
    (worst, compared)
}

/// Every file under `dir`, keyed by relative path.
pub fn tree_bytes(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, d: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A study small enough to train in seconds.
pub fn tiny_study() -> vehiclescan::study::StudyParams {
    let mut p = vehiclescan::study::StudyParams {
        n_cities: 2,
        n_train_scenes: 2,
        train_vehicles: 12,
        city_vehicles: 12,
        epochs: Some(2),
        ..Default::default()
    };
    p.layout.width = 256;
    p.layout.height = 256;
    p.sampling.random_negatives = 6;
    p
}
