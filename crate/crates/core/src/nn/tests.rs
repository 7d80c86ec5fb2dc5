use super::*;
use alloc::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Scalar-by-scalar reference forward pass (no layer norm).
fn oracle_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for layer in net.layers() {
        let mut next = vec![0.0; layer.outputs()];
        for o in 0..layer.outputs() {
            let mut z = layer.bias()[o];
            for i in 0..layer.inputs() {
                z += layer.weight()[o * layer.inputs() + i] * cur[i];
            }
            next[o] = match layer.activation() {
                Activation::Relu => z.max(0.0),
                Activation::LeakyRelu => {
                    if z > 0.0 {
                        z
                    } else {
                        0.01 * z
                    }
                }
                Activation::Tanh => z.tanh(),
                Activation::Identity => z,
            };
        }
        cur = next;
    }
    cur
}

/// Loss = sum(weights .* output); returns (loss, analytic grads).
fn weighted_loss(net: &mut Mlp<f64>, x: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    let y = net.forward(x).unwrap();
    y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

/// Central finite differences on `count` random coordinates.
pub(crate) fn fd_check(net: &mut Mlp<f64>, x: &Matrix<f64>, count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let w = random_matrix(x.rows(), net.output_width(), &mut r);
    net.zero_grad();
    net.forward_train(x).unwrap();
    net.backward(&w).unwrap();
    let analytic = net.grads();
    let base = net.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let k = r.random_range(0..base.len());
        let mut p = base.clone();
        p[k] += h;
        net.set_params(&p).unwrap();
        let lp = weighted_loss(net, x, &w);
        p[k] -= 2.0 * h;
        net.set_params(&p).unwrap();
        let lm = weighted_loss(net, x, &w);
        let numeric = (lp - lm) / (2.0 * h);
        let err = (numeric - analytic[k]).abs() / (numeric.abs() + analytic[k].abs()).max(1e-6);
        worst = worst.max(err);
    }
    net.set_params(&base).unwrap();
    worst
}

#[test]
fn zero_net_with_tanh_head_outputs_zero() {
    let spec = MlpSpec::uniform(3, 8, 2, 1, Activation::Relu, Activation::Tanh);
    let net = Mlp::<f64>::zeros(&spec).unwrap();
    let y = net.forward(&random_matrix(5, 3, &mut rng(0))).unwrap();
    assert!(y.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn identity_layer_passes_input_through() {
    let spec = MlpSpec::new(vec![3, 3], Activation::Identity, Activation::Identity);
    let mut net = Mlp::<f64>::zeros(&spec).unwrap();
    for i in 0..3 {
        net.layer_mut(0).weight_mut()[i * 3 + i] = 1.0;
    }
    let x = random_matrix(4, 3, &mut rng(1));
    assert_eq!(net.forward(&x).unwrap(), x);
}

#[test]
fn forward_matches_scalar_oracle() {
    let mut r = rng(2);
    for (hidden, out) in [
        (Activation::Relu, Activation::Identity),
        (Activation::LeakyRelu, Activation::Tanh),
        (Activation::Tanh, Activation::Identity),
    ] {
        let spec = MlpSpec::new(vec![4, 7, 5, 3], hidden, out);
        let net = Mlp::<f64>::new(&spec, &mut r).unwrap();
        let x = random_matrix(6, 4, &mut r);
        let y = net.forward(&x).unwrap();
        for b in 0..6 {
            let want = oracle_forward(&net, x.row(b));
            for (a, e) in y.row(b).iter().zip(&want) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn forward_is_pure_and_deterministic() {
    let spec = MlpSpec::uniform(2, 16, 2, 2, Activation::Relu, Activation::Identity);
    let net = Mlp::<f32>::new(&spec, &mut rng(3)).unwrap();
    let before = net.clone();
    let x = Matrix::from_rows(&[[0.3f32, -0.2], [1.0, 2.0]]).unwrap();
    assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    assert_eq!(net, before);
}

#[test]
fn shape_mismatch_is_input_error() {
    let spec = MlpSpec::uniform(2, 4, 1, 1, Activation::Relu, Activation::Identity);
    let mut net = Mlp::<f32>::zeros(&spec).unwrap();
    let x = Matrix::<f32>::zeros(3, 5);
    assert!(matches!(net.forward(&x), Err(Error::InputContract(_))));
    assert!(matches!(net.forward_train(&x), Err(Error::InputContract(_))));
}

#[test]
fn backward_without_forward_is_state_error() {
    let spec = MlpSpec::uniform(2, 4, 1, 1, Activation::Relu, Activation::Identity);
    let mut net = Mlp::<f32>::zeros(&spec).unwrap();
    let g = Matrix::<f32>::zeros(1, 1);
    assert!(matches!(net.backward(&g), Err(Error::State(_))));
}

#[test]
fn linear_net_weight_gradient_is_column_sum() {
    let spec = MlpSpec::new(vec![3, 2], Activation::Identity, Activation::Identity);
    let mut net = Mlp::<f64>::new(&spec, &mut rng(4)).unwrap();
    let x = random_matrix(5, 3, &mut rng(5));
    net.forward_train(&x).unwrap();
    let ones = Matrix::from_vec(5, 2, vec![1.0; 10]).unwrap();
    net.backward(&ones).unwrap();
    let gw = net.layers()[0].grad_weight();
    for o in 0..2 {
        for i in 0..3 {
            let col: f64 = (0..5).map(|b| x.get(b, i)).sum();
            assert!((gw[o * 3 + i] - col).abs() < 1e-12);
        }
    }
    assert!(net.layers()[0].grad_bias().iter().all(|g| (*g - 5.0).abs() < 1e-12));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let spec = MlpSpec::uniform(3, 8, 2, 2, Activation::Relu, Activation::Identity).with_layer_norm();
    let mut net = Mlp::<f64>::new(&spec, &mut rng(6)).unwrap();
    let x = random_matrix(4, 3, &mut rng(7));
    net.forward_train(&x).unwrap();
    net.backward(&Matrix::zeros(4, 2)).unwrap();
    assert!(net.grads().iter().all(|g| *g == 0.0));
}

#[test]
fn gradients_match_finite_differences() {
    let configs = [
        MlpSpec::uniform(4, 16, 2, 1, Activation::Relu, Activation::Identity),
        MlpSpec::uniform(4, 16, 3, 1, Activation::LeakyRelu, Activation::Tanh),
        MlpSpec::uniform(2, 16, 2, 3, Activation::Relu, Activation::Identity).with_layer_norm(),
        MlpSpec::uniform(2, 12, 2, 4, Activation::Tanh, Activation::Identity),
    ];
    for (i, spec) in configs.iter().enumerate() {
        let mut net = Mlp::<f64>::new(spec, &mut rng(10 + i as u64)).unwrap();
        let x = random_matrix(8, spec.widths[0], &mut rng(20 + i as u64));
        let err = fd_check(&mut net, &x, 100, 30 + i as u64);
        assert!(err < 1e-4, "config {i}: worst relative error {err}");
    }
}

#[test]
fn backward_input_gradient_matches_finite_differences() {
    let spec = MlpSpec::uniform(3, 10, 2, 1, Activation::Tanh, Activation::Identity).with_layer_norm();
    let mut net = Mlp::<f64>::new(&spec, &mut rng(40)).unwrap();
    let x = random_matrix(1, 3, &mut rng(41));
    net.forward_train(&x).unwrap();
    let dx = net.backward_input(&Matrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
    assert!(net.grads().iter().all(|g| *g == 0.0));
    for i in 0..3 {
        let mut xp = x.clone();
        xp.set(0, i, x.get(0, i) + 1e-6);
        let mut xm = x.clone();
        xm.set(0, i, x.get(0, i) - 1e-6);
        let num = (net.forward(&xp).unwrap().get(0, 0) - net.forward(&xm).unwrap().get(0, 0)) / 2e-6;
        assert!((num - dx.get(0, i)).abs() < 1e-6);
    }
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let spec = MlpSpec::uniform(2, 4, 1, 1, Activation::Relu, Activation::Identity);
    let mut net = Mlp::<f64>::new(&spec, &mut rng(8)).unwrap();
    let before = net.params();
    let mut opt = Adam::new(AdamConfig::default());
    opt.step(&mut net).unwrap();
    assert_eq!(net.params(), before);
    assert_eq!(opt.steps(), 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // m = 0.1, v = 0.001; bias-corrected both equal 1, so the step is lr / (1 + eps).
    let mut w = [0.0f64];
    let mut g = [1.0f64];
    let mut opt = Adam::new(AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    });
    opt.apply(&mut [(&mut w[..], &mut g[..])]);
    assert!((w[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let spec = MlpSpec::uniform(1, 3, 1, 1, Activation::Relu, Activation::Identity);
    let mut net = Mlp::<f32>::zeros(&spec).unwrap();
    net.forward_train(&Matrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
    net.backward(&Matrix::from_vec(1, 1, vec![f32::NAN]).unwrap()).unwrap();
    let before = net.params();
    let mut opt = Adam::new(AdamConfig::default());
    assert_eq!(opt.step(&mut net), Err(Error::NonFiniteGradient { layer: 0 }));
    assert_eq!(net.params(), before);
}

#[test]
fn adam_descends_a_convex_quadratic() {
    // f(x) = sum_i c_i (x_i - t_i)^2 on a linear layer's parameters.
    let spec = MlpSpec::new(vec![2, 2], Activation::Identity, Activation::Identity);
    let mut net = Mlp::<f64>::new(&spec, &mut rng(9)).unwrap();
    let target: Vec<f64> = (0..net.param_count()).map(|k| k as f64 * 0.3 - 0.5).collect();
    let scale: Vec<f64> = (0..net.param_count()).map(|k| 1.0 + k as f64).collect();
    let loss = |p: &[f64]| -> f64 { p.iter().zip(&target).zip(&scale).map(|((a, t), c)| c * (a - t) * (a - t)).sum() };
    let mut opt = Adam::new(AdamConfig::with_lr(0.01));
    let mut history = Vec::new();
    for _ in 0..300 {
        let p = net.params();
        history.push(loss(&p));
        let g: Vec<f64> = p.iter().zip(&target).zip(&scale).map(|((a, t), c)| 2.0 * c * (a - t)).collect();
        let mut groups = net.param_groups();
        let mut i = 0;
        for (_, _, gs) in groups.iter_mut() {
            gs.copy_from_slice(&g[i..i + gs.len()]);
            i += gs.len();
        }
        drop(groups);
        opt.step(&mut net).unwrap();
    }
    for w in history[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
    assert!(history.last().unwrap() < &(history[0] * 0.05));
}

#[test]
fn polyak_distance_shrinks() {
    let spec = MlpSpec::uniform(2, 8, 2, 1, Activation::Relu, Activation::Identity);
    let online = Mlp::<f32>::new(&spec, &mut rng(11)).unwrap();
    let mut target = Mlp::<f32>::new(&spec, &mut rng(12)).unwrap();
    let mut last = target.param_distance(&online);
    for _ in 0..50 {
        target.polyak_from(&online, 0.005).unwrap();
        let d = target.param_distance(&online);
        assert!(d < last);
        last = d;
    }
}

#[test]
fn training_steps_are_deterministic() {
    let run = || {
        let spec = MlpSpec::uniform(3, 8, 2, 2, Activation::Relu, Activation::Identity).with_layer_norm();
        let mut net = Mlp::<f32>::new(&spec, &mut rng(13)).unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        let mut r = rng(14);
        for _ in 0..20 {
            let x: Vec<f32> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
            net.forward_train(&Matrix::from_vec(4, 3, x).unwrap()).unwrap();
            net.backward(&Matrix::from_vec(4, 2, vec![0.5; 8]).unwrap()).unwrap();
            opt.step(&mut net).unwrap();
        }
        net.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn snapshot_rejects_corruption() {
    let spec = MlpSpec::uniform(2, 4, 1, 1, Activation::Relu, Activation::Tanh);
    let net = Mlp::<f32>::new(&spec, &mut rng(15)).unwrap();
    let bytes = net.to_bytes();
    assert_eq!(Mlp::<f32>::from_bytes(&bytes[..bytes.len() - 1]), Err(SnapshotError::Truncated));
    let mut extra = bytes.clone();
    extra.push(0);
    assert_eq!(Mlp::<f32>::from_bytes(&extra), Err(SnapshotError::Trailing(1)));
    let mut bad = bytes;
    bad[4 + 3 * 4] = 9;
    assert_eq!(Mlp::<f32>::from_bytes(&bad), Err(SnapshotError::BadActivation(9)));
}

proptest! {
    #[test]
    fn snapshot_roundtrip(seed in 0u64..1000, width in 1usize..20, depth in 1usize..4, ln in any::<bool>()) {
        let mut spec = MlpSpec::uniform(3, width, depth, 2, Activation::LeakyRelu, Activation::Tanh);
        spec.hidden_layer_norm = ln;
        let net = Mlp::<f32>::new(&spec, &mut rng(seed)).unwrap();
        let back = Mlp::<f32>::from_bytes(&net.to_bytes()).unwrap();
        prop_assert_eq!(back.spec(), net.spec());
        prop_assert_eq!(back.params(), net.params());
    }

    #[test]
    fn forward_backward_preserves_shapes(seed in 0u64..1000, rows in 1usize..6) {
        let spec = MlpSpec::uniform(3, 5, 2, 2, Activation::Relu, Activation::Identity).with_layer_norm();
        let mut net = Mlp::<f64>::new(&spec, &mut rng(seed)).unwrap();
        let shapes: Vec<usize> = net.layers().iter().map(|l| l.weight().len()).collect();
        let x = random_matrix(rows, 3, &mut rng(seed + 1));
        let y = net.forward_train(&x).unwrap();
        prop_assert_eq!((y.rows(), y.cols()), (rows, 2));
        let dx = net.backward(&y).unwrap();
        prop_assert_eq!((dx.rows(), dx.cols()), (rows, 3));
        let after: Vec<usize> = net.layers().iter().map(|l| l.weight().len()).collect();
        prop_assert_eq!(shapes, after);
        prop_assert_eq!(net.grads().len(), net.param_count());
    }
}
