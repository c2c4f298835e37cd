use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::gradcheck::{grad_check, CheckKind};
use super::layers::{gru_forward, GruParams};
use super::*;
use crate::graph::{build_graph, Activation, Attrs, LayerKind, NodeSpec, Shape};
use crate::rng::{seeded, standard_normal};

fn chain(input: Shape, kind: LayerKind, attrs: Attrs) -> Network {
    let g = build_graph(vec![NodeSpec::new(1, LayerKind::Input, Attrs::shape(input)), NodeSpec::new(2, kind, attrs)], vec![(1, 2)], 2).unwrap();
    Network::new(g, &mut seeded(1)).unwrap()
}

fn run(net: &Network, x: &Tensor) -> Tensor {
    net.forward(x, Mode::Eval, &mut seeded(0)).unwrap().output().clone()
}

#[test]
fn identity_dense_passes_input_through() {
    let mut net = chain(Shape::Flat(3), LayerKind::Dense, Attrs::units(3));
    let p = net.params_mut().get_mut(&2).unwrap();
    p[0].value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let x = Tensor::from_data(2, Shape::Flat(3), vec![1.5, -2.0, 0.25, 3.0, 4.0, -5.0]);
    assert_eq!(run(&net, &x), x);
}

#[test]
fn add_doubles_and_zero_branch_is_identity() {
    let nodes = vec![
        NodeSpec::new(1, LayerKind::Input, Attrs::shape(Shape::seq(4, 2))),
        NodeSpec::new(2, LayerKind::Activation, Attrs::activation(Activation::Linear)),
        NodeSpec::new(3, LayerKind::Add, Attrs::default()),
    ];
    let net = Network::new(build_graph(nodes, vec![(1, 2), (1, 3), (2, 3)], 3).unwrap(), &mut seeded(0)).unwrap();
    let x = Tensor::from_data(1, Shape::seq(4, 2), vec![0.1, 0.2, 0.3, -0.4, 5.0, 6.0, 7.0, 8.0]);
    let y = run(&net, &x);
    assert!(y.data.iter().zip(&x.data).all(|(a, b)| *a == 2.0 * b));

    let nodes = vec![
        NodeSpec::new(1, LayerKind::Input, Attrs::shape(Shape::seq(4, 2))),
        NodeSpec::new(2, LayerKind::Dense, Attrs::units(2)),
        NodeSpec::new(3, LayerKind::Add, Attrs::default()),
    ];
    let mut net = Network::new(build_graph(nodes, vec![(1, 2), (1, 3), (2, 3)], 3).unwrap(), &mut seeded(0)).unwrap();
    net.params_mut().get_mut(&2).unwrap()[0].value.iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(run(&net, &x), x);
}

#[test]
fn dilated_conv_impulse_response() {
    for (k, d) in [(3, 2), (3, 1), (2, 4), (5, 3)] {
        let mut net = chain(Shape::seq(16, 1), LayerKind::Conv1D, Attrs::conv(1, k, d));
        net.params_mut().get_mut(&2).unwrap()[0].value.iter_mut().for_each(|v| *v = 1.0);
        let mut x = Tensor::zeros(1, Shape::seq(16, 1));
        x.data[8] = 1.0;
        let y = run(&net, &x);
        assert_eq!(y.shape, Shape::seq(16, 1));
        let nz: Vec<usize> = (0..16).filter(|&i| y.data[i] != 0.0).collect();
        assert_eq!(nz.len(), k);
        assert_eq!(nz[nz.len() - 1] - nz[0] + 1, (k - 1) * d + 1);
    }
}

#[test]
fn gru_zero_weights_stay_at_zero() {
    let x = Tensor::from_data(2, Shape::seq(5, 3), (0..30).map(|i| i as f64 - 7.0).collect());
    let (w, u, b) = (vec![0.0; 3 * 12], vec![0.0; 4 * 12], vec![0.0; 12]);
    let (h, _) = gru_forward(&x, GruParams { w: &w, u: &u, b: &b, hidden: 4 });
    assert!(h.data.iter().all(|v| *v == 0.0));
}

#[test]
fn gru_single_step_matches_one_cell() {
    let mut rng = seeded(3);
    let (c, hd) = (2, 3);
    let w: Vec<f64> = (0..c * 3 * hd).map(|_| standard_normal(&mut rng)).collect();
    let u: Vec<f64> = (0..hd * 3 * hd).map(|_| standard_normal(&mut rng)).collect();
    let b: Vec<f64> = (0..3 * hd).map(|_| standard_normal(&mut rng)).collect();
    let x = [0.7, -1.2];
    let (h, _) = gru_forward(&Tensor::from_data(1, Shape::seq(1, c), x.to_vec()), GruParams { w: &w, u: &u, b: &b, hidden: hd });
    for j in 0..hd {
        let a = |g: usize| (0..c).map(|i| x[i] * w[i * 3 * hd + g * hd + j]).sum::<f64>() + b[g * hd + j];
        let z = 1.0 / (1.0 + (-a(0)).exp());
        let n = a(2).tanh();
        assert!((h.data[j] - (1.0 - z) * n).abs() < 1e-14);
    }
}

#[test]
fn gradient_checks_meet_tolerances() {
    for kind in CheckKind::all() {
        for seed in 0..3 {
            let err = grad_check(kind, seed);
            let tol = match kind {
                CheckKind::Dense => 1e-6,
                CheckKind::DilatedConv | CheckKind::Gru => 1e-5,
                _ => 1e-4,
            };
            assert!(err <= tol, "{kind:?} seed {seed}: {err:e}");
        }
    }
}

fn tokens(n: usize, dt: usize, data: Vec<f64>) -> Tensor {
    Tensor::from_data(1, Shape::seq(n, dt), data)
}

#[test]
fn single_token_attends_to_itself() {
    let head = FusionHead::new(1, 4, &FusionConfig { hidden: (4, 4), ..FusionConfig::default() }, &mut seeded(2)).unwrap();
    let s = head.attend(&[0.3, -1.0, 2.0, 0.5]);
    let d = head.model_dim;
    for g in &s.gamma {
        assert_eq!(g, &vec![1.0]);
    }
    assert!(s.o.iter().zip(&s.v[..d]).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn identical_tokens_share_attention_equally() {
    let head = FusionHead::new(2, 3, &FusionConfig { hidden: (4, 4), ..FusionConfig::default() }, &mut seeded(5)).unwrap();
    let s = head.attend(&[0.3, -1.0, 2.0, 0.3, -1.0, 2.0]);
    for g in &s.gamma {
        assert_eq!(g, &vec![0.5; 4]);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = seeded(11);
    let head = FusionHead::new(4, 6, &FusionConfig { hidden: (8, 8), ..FusionConfig::default() }, &mut rng).unwrap();
    let x = tokens(4, 6, (0..24).map(|_| 3.0 * standard_normal(&mut rng)).collect());
    let (_, cache) = head.forward(&x).unwrap();
    let s = &cache.samples[0];
    assert_eq!(s.gamma.len(), 2);
    for g in &s.gamma {
        for row in g.chunks_exact(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
    let received = cache.attention_received(0);
    assert!((received.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn token_shape_is_checked() {
    let head = FusionHead::new(4, 6, &FusionConfig::default(), &mut seeded(0)).unwrap();
    assert!(matches!(head.forward(&tokens(3, 6, vec![0.0; 18])), Err(NnError::TokenDimMismatch { .. })));
    assert_eq!(FusionHead::new(2, 3, &FusionConfig { heads: 5, ..FusionConfig::default() }, &mut seeded(0)).unwrap_err(), NnError::InvalidFusionConfig);
}

#[test]
fn untrained_attention_pool_is_uniform() {
    let net = chain(Shape::seq(5, 3), LayerKind::AttentionPool, Attrs::default());
    let mut rng = seeded(4);
    let x = Tensor::from_data(3, Shape::seq(5, 3), (0..45).map(|_| standard_normal(&mut rng)).collect());
    let trace = net.forward(&x, Mode::Eval, &mut rng).unwrap();
    assert!(trace.attention_weights(2).unwrap().iter().all(|w| (w - 0.2).abs() < 1e-15));
}

#[test]
fn input_shape_mismatch_names_the_input() {
    let net = chain(Shape::Flat(3), LayerKind::Dense, Attrs::units(2));
    let err = net.forward(&Tensor::zeros(1, Shape::Flat(4)), Mode::Eval, &mut seeded(0)).unwrap_err();
    assert_eq!(err, NnError::ShapeMismatch { node: 1, expected: Shape::Flat(3), found: Shape::Flat(4) });
}

fn small_net(seed: u64) -> Network {
    let mut h = Attrs::units(8);
    h.activation = Some(Activation::Tanh);
    let nodes = vec![
        NodeSpec::new(1, LayerKind::Input, Attrs::shape(Shape::Flat(2))),
        NodeSpec::new(2, LayerKind::Dense, h),
        NodeSpec::new(3, LayerKind::Dense, Attrs::units(2)),
        NodeSpec::new(4, LayerKind::Output, Attrs::default()),
    ];
    Network::new(build_graph(nodes, vec![(1, 2), (2, 3), (3, 4)], 4).unwrap(), &mut seeded(seed)).unwrap()
}

/// Two Gaussian blobs on either side of the line x + y = 0.
fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let c = if y == 1 { 1.5 } else { -1.5 };
        samples.push(vec![c + 0.5 * standard_normal(&mut rng), c + 0.5 * standard_normal(&mut rng)]);
        labels.push(y);
    }
    Dataset::new(Shape::Flat(2), samples, labels).unwrap()
}

/// Least-squares linear probe: fits w to +-1 targets and reports accuracy.
#[allow(clippy::needless_range_loop)]
fn linear_probe_accuracy(train_set: &Dataset, test: &Dataset) -> f64 {
    let mut a = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for (s, y) in train_set.samples.iter().zip(&train_set.labels) {
        let f = [s[0], s[1], 1.0];
        let t = if *y == 1 { 1.0 } else { -1.0 };
        for i in 0..3 {
            r[i] += f[i] * t;
            for j in 0..3 {
                a[i][j] += f[i] * f[j];
            }
        }
    }
    for i in 0..3 {
        for k in i + 1..3 {
            let m = a[k][i] / a[i][i];
            for j in 0..3 {
                a[k][j] -= m * a[i][j];
            }
            r[k] -= m * r[i];
        }
    }
    let mut w = [0.0; 3];
    for i in (0..3).rev() {
        w[i] = (r[i] - (i + 1..3).map(|j| a[i][j] * w[j]).sum::<f64>()) / a[i][i];
    }
    let hits = test.samples.iter().zip(&test.labels).filter(|(s, y)| ((w[0] * s[0] + w[1] * s[1] + w[2] > 0.0) as usize) == **y).count();
    hits as f64 / test.labels.len() as f64
}

#[test]
fn separable_toy_set_is_learned() {
    let (tr, va) = (separable(400, 1), separable(100, 2));
    assert!(linear_probe_accuracy(&tr, &va) >= 0.95);
    let mut net = small_net(3);
    let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
    let report = train(&mut net, &tr, &va, &cfg).unwrap();
    assert!(report.accuracy >= 0.95, "{}", report.accuracy);
    assert_eq!(report.loss_curve.len(), 50);
    assert!(report.loss_curve[49] < report.loss_curve[0]);
}

#[test]
fn random_labels_stay_at_chance() {
    let mut rng = seeded(9);
    let make = |rng: &mut crate::rng::SeededRng, n: usize| {
        let samples = (0..n).map(|_| vec![standard_normal(rng), standard_normal(rng)]).collect();
        let labels = (0..n).map(|_| rng.gen_range(0..2)).collect();
        Dataset::new(Shape::Flat(2), samples, labels).unwrap()
    };
    let (tr, va) = (make(&mut rng, 400), make(&mut rng, 400));
    let mut net = small_net(0);
    let report = train(&mut net, &tr, &va, &TrainConfig { epochs: 20, ..TrainConfig::default() }).unwrap();
    assert!((report.accuracy - 0.5).abs() <= 0.1, "{}", report.accuracy);
}

#[test]
fn training_is_deterministic_per_seed() {
    let (tr, va) = (separable(128, 1), separable(32, 2));
    let cfg = TrainConfig { epochs: 3, seed: 42, ..TrainConfig::default() };
    let a = train(&mut small_net(1), &tr, &va, &cfg).unwrap();
    let b = train(&mut small_net(1), &tr, &va, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_adam_step_lowers_first_batch_loss() {
    let data = separable(64, 5);
    let idx: Vec<usize> = (0..64).collect();
    let mut improved = 0;
    for seed in 0..40 {
        let mut net = small_net(seed);
        let mut rng = seeded(seed);
        let (before, grads) = net.loss_and_grads(&data, &idx, &mut rng).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(net.all_params_mut(), &grads, 1e-3);
        let (after, _) = net.loss_and_grads(&data, &idx, &mut rng).unwrap();
        improved += (after < before) as usize;
    }
    assert!(improved >= 38, "{improved}/40");
}

#[test]
fn single_class_training_is_rejected() {
    let d = Dataset::new(Shape::Flat(2), vec![vec![0.0, 1.0]; 4], vec![1; 4]).unwrap();
    assert_eq!(train(&mut small_net(0), &d, &d, &TrainConfig::default()).unwrap_err(), NnError::SingleClass);
}

#[test]
fn step_decay_schedule() {
    let cfg = TrainConfig { lr_decay: Some(StepDecay::default()), ..TrainConfig::default() };
    assert_eq!(cfg.lr_at(4), 1e-3);
    assert!((cfg.lr_at(5) - 2e-4).abs() < 1e-18);
    assert!((cfg.lr_at(10) - 4e-5).abs() < 1e-18);
}
