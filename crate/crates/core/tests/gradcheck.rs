//! Central finite differences against the reverse-mode gradients, for every
//! layer kind and for both architectures at reduced width.
//!
//! The probe loss is `sum((f(x) - target)^2)`. ReLU makes the network only
//! piecewise smooth; a coordinate whose `±h` probes land on different sides
//! of a ReLU kink has no meaningful central difference and is skipped (the
//! count is bounded below).

use aecf::model::{AeModel, Architecture, Layer};
use aecf::tensor::{Activation, GradientTape, LayerSpec};
use aecf::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1.0)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn with(t: &Tensor, i: usize, delta: f64) -> Tensor {
    let mut d = t.data().to_vec();
    d[i] += delta;
    Tensor::new(t.shape().to_vec(), d).unwrap()
}

fn sq_err(out: &Tensor, target: &Tensor) -> f64 {
    out.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Forward through `layers`, returning the output and the sign pattern of
/// every ReLU input.
fn run(layers: &[Layer], x: &Tensor) -> (Tensor, Vec<bool>) {
    let mut cur = x.clone();
    let mut pattern = Vec::new();
    for l in layers {
        if let LayerSpec::Activation {
            function: Activation::Relu,
        } = l.spec
        {
            pattern.extend(cur.data().iter().map(|v| *v > 0.0));
        }
        let p = l.params.as_ref().map(|(w, b)| (w, b));
        cur = l.spec.forward(p, &cur).unwrap();
    }
    (cur, pattern)
}

/// Analytic gradients of the probe loss w.r.t. the input and every
/// parameter tensor, in layer order (weight then bias).
fn analytic(layers: &[Layer], x: &Tensor, target: &Tensor) -> (Tensor, Vec<Tensor>) {
    let mut tape = GradientTape::new();
    let input = tape.leaf_ref(x, true);
    let mut cur = input;
    let mut params = Vec::new();
    for l in layers {
        let p = l
            .params
            .as_ref()
            .map(|(w, b)| (tape.leaf_ref(w, true), tape.leaf_ref(b, true)));
        cur = tape.forward_layer(&l.spec, p, cur).unwrap();
        if let Some((w, b)) = p {
            params.extend([w, b]);
        }
    }
    let t = tape.leaf_ref(target, false);
    let mse = tape.mse(cur, t).unwrap();
    let loss = tape.scale(mse, target.len() as f64).unwrap();
    let mut g = tape.backward(loss).unwrap();
    let gx = g.take(input).unwrap();
    let gp = params.into_iter().map(|v| g.take(v).unwrap()).collect();
    (gx, gp)
}

#[derive(Default, Debug)]
struct Tally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

impl Tally {
    fn probe(&mut self, what: &str, a: f64, plus: (Tensor, Vec<bool>), minus: (Tensor, Vec<bool>), target: &Tensor) {
        if plus.1 != minus.1 {
            self.skipped += 1;
            return;
        }
        let fd = (sq_err(&plus.0, target) - sq_err(&minus.0, target)) / (2.0 * H);
        let e = rel_err(a, fd);
        assert!(e < TOL, "{what}: analytic {a} vs numeric {fd} (rel err {e:.3e})");
        self.checked += 1;
        self.worst = self.worst.max(e);
    }

    fn assert_mostly_smooth(&self, what: &str) {
        assert!(self.checked > 0, "{what}: nothing checked");
        assert!(
            self.skipped * 20 <= self.checked + self.skipped,
            "{what}: {} of {} coordinates straddle a ReLU kink",
            self.skipped,
            self.checked + self.skipped
        );
    }
}

/// Check input and parameter gradients; `stride` subsamples parameter
/// coordinates of large models.
fn check_layers(what: &str, layers: &[Layer], x: &Tensor, target: &Tensor, stride: usize) -> Tally {
    let (gx, gp) = analytic(layers, x, target);
    let mut tally = Tally::default();
    for i in 0..x.len() {
        tally.probe(
            &format!("{what} input[{i}]"),
            gx.data()[i],
            run(layers, &with(x, i, H)),
            run(layers, &with(x, i, -H)),
            target,
        );
    }
    let mut slot = 0;
    for (li, layer) in layers.iter().enumerate() {
        let Some((w, b)) = &layer.params else { continue };
        for (which, t) in [("weight", w), ("bias", b)] {
            for i in (0..t.len()).step_by(stride) {
                let perturb = |delta: f64| {
                    let mut ls = layers.to_vec();
                    let p = ls[li].params.as_mut().unwrap();
                    if which == "weight" {
                        p.0 = with(t, i, delta);
                    } else {
                        p.1 = with(t, i, delta);
                    }
                    run(&ls, x)
                };
                tally.probe(
                    &format!("{what} layer {li} {which}[{i}]"),
                    gp[slot].data()[i],
                    perturb(H),
                    perturb(-H),
                    target,
                );
            }
            slot += 1;
        }
    }
    tally
}

fn single(spec: LayerSpec, input: &[usize], seed: u64) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .param_shapes()
        .map(|(ws, bs)| (random(&ws, &mut rng, -1.0, 1.0), random(&bs, &mut rng, -0.5, 0.5)));
    let layers = vec![Layer { spec, params }];
    let x = random(input, &mut rng, -1.0, 1.0);
    let out_shape = spec.output_shape(input).unwrap();
    let target = random(&out_shape, &mut rng, -1.0, 1.0);
    let t = check_layers(spec.name(), &layers, &x, &target, 1);
    t.assert_mostly_smooth(spec.name());
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv1d(cin in 1usize..4, cout in 1usize..4, k in 1usize..6, s in 1usize..3, p in 0usize..3, extra in 0usize..6, seed in any::<u64>()) {
        let l = k + extra;
        single(LayerSpec::conv1d(cin, cout, k, s, p), &[cin, l], seed);
    }

    #[test]
    fn conv1d_transpose(cin in 1usize..4, cout in 1usize..4, k in 1usize..6, s in 1usize..3, p in 0usize..2, l in 2usize..7, seed in any::<u64>()) {
        prop_assume!(p < k);
        single(LayerSpec::conv1d_transpose(cin, cout, k, s, p), &[cin, l], seed);
    }

    #[test]
    fn dense(i in 1usize..12, o in 1usize..12, seed in any::<u64>()) {
        single(LayerSpec::dense(i, o), &[i], seed);
    }

    #[test]
    fn activations(rows in 1usize..4, cols in 1usize..8, which in 0usize..4, seed in any::<u64>()) {
        let function = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity][which];
        single(LayerSpec::Activation { function }, &[rows, cols], seed);
    }

    #[test]
    fn flatten_and_reshape(c in 1usize..4, l in 1usize..6, seed in any::<u64>()) {
        single(LayerSpec::Flatten, &[c, l], seed);
        single(LayerSpec::Reshape { channels: c, length: l }, &[c * l], seed);
    }

    #[test]
    fn trim(c in 1usize..4, l in 1usize..8, to in 1usize..10, seed in any::<u64>()) {
        single(LayerSpec::Trim { length: to }, &[c, l], seed);
    }
}

fn model_check(arch: &Architecture, seed: u64, stride: usize) {
    let model = AeModel::build(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    // nonzero biases so every code path carries signal
    let layers: Vec<Layer> = model
        .layers()
        .iter()
        .map(|l| Layer {
            spec: l.spec,
            params: l.params.as_ref().map(|(w, b)| (w.clone(), random(b.shape(), &mut rng, -0.1, 0.1))),
        })
        .collect();
    let (n, l) = model.input_shape();
    let x = random(&[n, l], &mut rng, 0.0, 1.0);
    let target = random(&[n, l], &mut rng, 0.0, 1.0);
    let t = check_layers(&arch.name, &layers, &x, &target, stride);
    t.assert_mostly_smooth(&arch.name);
    println!("{}: {t:?}", arch.name);
}

#[test]
fn skab_reduced_width() {
    for seed in [1, 2, 3] {
        model_check(&Architecture::skab_scaled(3, 16, [8, 4], 4), seed, 1);
    }
}

#[test]
fn industrial_reduced_width() {
    for seed in [1, 2] {
        model_check(
            &Architecture::industrial_scaled(3, 16, [8, 4], &[8, 6, 4, 3], [4, 8]),
            seed,
            3,
        );
    }
}

#[test]
fn score_input_gradient_matches_differences() {
    let model = AeModel::build(&Architecture::skab_scaled(2, 16, [8, 4], 3), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[2, 16], &mut rng, 0.0, 1.0);
    let (_, g) = model.score_with_input_grad(&x).unwrap();
    let mut checked = 0;
    for i in 0..x.len() {
        let (p, m) = (with(&x, i, H), with(&x, i, -H));
        let layers = model.layers();
        if run(layers, &p).1 != run(layers, &m).1 {
            continue;
        }
        let fd = (model.score(&p).unwrap() - model.score(&m).unwrap()) / (2.0 * H);
        assert!(rel_err(g.data()[i], fd) < TOL, "input[{i}]: {} vs {fd}", g.data()[i]);
        checked += 1;
    }
    assert!(checked >= 30);
}

#[test]
fn loss_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 7], &mut rng, 0.0, 1.0);
    let y = random(&[3, 7], &mut rng, 0.0, 1.0);
    type Loss = fn(&mut GradientTape, aecf::tensor::Var, aecf::tensor::Var) -> aecf::tensor::Var;
    let cases: [(&str, Loss, fn(&Tensor, &Tensor) -> f64); 4] = [
        ("huber 1.0", |t, a, b| t.huber(a, b, 1.0).unwrap(), |a, b| aecf::tensor::huber_loss(a, b, 1.0).unwrap()),
        ("huber 0.05", |t, a, b| t.huber(a, b, 0.05).unwrap(), |a, b| aecf::tensor::huber_loss(a, b, 0.05).unwrap()),
        ("anomaly score", |t, a, b| t.anomaly_score(a, b).unwrap(), |a, b| aecf::tensor::anomaly_score(a, b).unwrap()),
        ("mean abs diff", |t, a, b| t.mean_abs_diff(a, b).unwrap(), |a, b| aecf::tensor::mean_abs_diff(a, b).unwrap()),
    ];
    for (name, on_tape, plain) in cases {
        let mut tape = GradientTape::new();
        let a = tape.leaf_ref(&x, true);
        let b = tape.leaf_ref(&y, true);
        let loss = on_tape(&mut tape, a, b);
        let mut g = tape.backward(loss).unwrap();
        let (ga, gb) = (g.take(a).unwrap(), g.take(b).unwrap());
        for i in 0..x.len() {
            let fa = (plain(&with(&x, i, H), &y) - plain(&with(&x, i, -H), &y)) / (2.0 * H);
            let fb = (plain(&x, &with(&y, i, H)) - plain(&x, &with(&y, i, -H))) / (2.0 * H);
            assert!(rel_err(ga.data()[i], fa) < TOL, "{name} d/dx[{i}]");
            assert!(rel_err(gb.data()[i], fb) < TOL, "{name} d/dy[{i}]");
        }
    }
}
