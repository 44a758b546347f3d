use proptest::prelude::*;
use segqa_nnet::*;

fn conv(ic: usize, oc: usize, k: usize, s: usize, p: usize) -> LayerSpec {
    LayerSpec::Conv3d {
        in_channels: ic,
        out_channels: oc,
        kernel: k,
        stride: s,
        padding: p,
    }
}

fn ramp(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| (i as f64 * 0.37).sin()).collect())
}

#[test]
fn identity_kernel_reproduces_interior() {
    let mut net = Network::<f64>::new(&[1, 5, 5, 5], vec![conv(1, 1, 3, 1, 0)], 0).unwrap();
    for p in net.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    net.params_mut().next().unwrap().data_mut()[13] = 1.0;
    let x = ramp(&[1, 5, 5, 5]);
    let y = net.forward(&x).unwrap();
    assert_eq!(y.shape(), &[1, 3, 3, 3]);
    for z in 0..3 {
        for yy in 0..3 {
            for xx in 0..3 {
                let got = y.data()[(z * 3 + yy) * 3 + xx];
                let want = x.data()[((z + 1) * 5 + yy + 1) * 5 + xx + 1];
                assert_eq!(got, want);
            }
        }
    }
}

#[test]
fn softmax_channels_sum_to_one() {
    let net = Network::<f64>::new(&[4, 3, 3, 3], vec![LayerSpec::Softmax], 0).unwrap();
    let y = net.forward(&ramp(&[4, 3, 3, 3])).unwrap();
    for i in 0..27 {
        let s: f64 = (0..4).map(|c| y.data()[c * 27 + i]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn relu_is_identity_on_nonnegative_input() {
    let net = Network::<f64>::new(&[8], vec![LayerSpec::Relu], 0).unwrap();
    let x = Tensor::from_vec(&[8], vec![0.0, 0.5, 1.0, 2.0, 3.5, 0.1, 7.0, 0.0]);
    assert_eq!(net.forward(&x).unwrap().data(), x.data());
}

#[test]
fn shape_mismatch_is_reported() {
    let net = Network::<f64>::new(&[1, 4, 4, 4], vec![conv(1, 2, 3, 1, 1)], 0).unwrap();
    let err = net.forward(&Tensor::zeros(&[1, 4, 4, 5])).unwrap_err();
    assert!(matches!(err, NnError::ShapeMismatch { .. }));
    assert!(Network::<f64>::new(&[2, 4, 4, 4], vec![conv(1, 2, 3, 1, 1)], 0).is_err());
}

#[test]
fn backward_requires_forward() {
    let mut net = Network::<f64>::new(&[3], vec![LayerSpec::Dense { inputs: 3, outputs: 2 }], 0).unwrap();
    assert!(matches!(
        net.backward(&Tensor::zeros(&[2])),
        Err(NnError::NoForwardPass)
    ));
    net.forward_train(&Tensor::zeros(&[3]), Mode::Eval).unwrap();
    net.backward(&Tensor::zeros(&[2])).unwrap();
    // the retained pass is consumed
    assert!(net.backward(&Tensor::zeros(&[2])).is_err());
}

fn param_grads(net: &mut Network<f64>, x: &Tensor<f64>, g: &Tensor<f64>) -> Vec<f64> {
    net.zero_grad();
    net.forward_train(x, Mode::Eval).unwrap();
    net.backward(g).unwrap();
    net.params().flat_map(|p| p.grad().unwrap().to_vec()).collect()
}

#[test]
fn gradients_are_linear_in_loss_gradient() {
    let specs = vec![
        conv(1, 2, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 128, outputs: 4 },
    ];
    let mut net = Network::<f64>::new(&[1, 4, 4, 4], specs, 5).unwrap();
    let x = ramp(&[1, 4, 4, 4]);
    let zero = param_grads(&mut net, &x, &Tensor::zeros(&[4]));
    assert!(zero.iter().all(|&v| v == 0.0));
    let g = Tensor::from_vec(&[4], vec![0.3, -0.2, 0.7, 0.1]);
    let once = param_grads(&mut net, &x, &g);
    let twice = param_grads(&mut net, &x, &g.map(|v| 2.0 * v));
    for (a, b) in once.iter().zip(&twice) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn adam_zero_gradient_leaves_state_untouched() {
    let mut p = vec![0.5f64, -1.0, 2.0];
    let mut st = AdamState::new(3);
    adam_step(&mut p, &[0.0; 3], &mut st, &AdamConfig::default()).unwrap();
    assert_eq!(p, vec![0.5, -1.0, 2.0]);
    assert!(st.m.iter().chain(&st.v).all(|&v| v == 0.0));
}

#[test]
fn adam_first_step_moves_by_lr_times_sign() {
    let cfg = AdamConfig::default();
    let g = [0.3f64, -2.0, 1e-3];
    let mut p = vec![0.0f64; 3];
    let mut st = AdamState::new(3);
    adam_step(&mut p, &g, &mut st, &cfg).unwrap();
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    for (pi, gi) in p.iter().zip(g) {
        let expect = -cfg.lr * gi / (gi.abs() + cfg.eps);
        assert!((pi - expect).abs() < 1e-15);
        assert!((pi.abs() - cfg.lr).abs() < 1e-7);
    }
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut p = vec![1.0f64];
    let mut st = AdamState::new(1);
    assert!(adam_step(&mut p, &[f64::NAN], &mut st, &AdamConfig::default()).is_err());
    assert_eq!(p, vec![1.0]);
}

#[test]
fn sample_gaussian_degenerate_sigma_returns_mean() {
    let mu = vec![0.25f64, -3.0, 7.5];
    let (z, _) = sample_gaussian(&mu, &[-20.0; 3], 4);
    for (a, b) in z.iter().zip(&mu) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn sample_gaussian_standard_moments() {
    let n = 100_000;
    let (z, _) = sample_gaussian(&vec![0.0f64; n], &vec![0.0; n], 2024);
    let mean = z.iter().sum::<f64>() / n as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn sample_gaussian_mean_gradient_is_one() {
    let eps = 1e-4;
    let ls = [0.3f64];
    let (zp, _) = sample_gaussian(&[0.5 + eps], &ls, 9);
    let (zm, _) = sample_gaussian(&[0.5 - eps], &ls, 9);
    assert!(((zp[0] - zm[0]) / (2.0 * eps) - 1.0).abs() < 1e-9);
}

fn memorization_net(seed: u64) -> Network<f32> {
    Network::new(
        &[1, 4, 4, 4],
        vec![
            conv(1, 4, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 32, outputs: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 16, outputs: 2 },
        ],
        seed,
    )
    .unwrap()
}

fn train_memorization(seed: u64) -> (Network<f32>, f64) {
    let inputs: Vec<Tensor<f32>> = (0..10)
        .map(|k| {
            Tensor::from_vec(
                &[1, 4, 4, 4],
                (0..64).map(|i| ((i * (k + 1)) as f32 * 0.11).cos()).collect(),
            )
        })
        .collect();
    let targets: Vec<Tensor<f32>> = (0..10)
        .map(|k| Tensor::from_vec(&[2], vec![(k as f32 * 0.7).sin() * 0.5, (k % 3) as f32 * 0.2]))
        .collect();
    let mut net = memorization_net(seed);
    let mut adam = Adam::new(&net, AdamConfig { lr: 1e-2, ..Default::default() });
    let mut loss = f64::INFINITY;
    for _ in 0..500 {
        net.zero_grad();
        loss = 0.0;
        for (x, t) in inputs.iter().zip(&targets) {
            let y = net.forward_train(x, Mode::Eval).unwrap();
            let (l, g) = mse_loss(&y, t);
            loss += l / 10.0;
            net.backward(&g).unwrap();
        }
        net.scale_grads(0.1);
        adam.step(&mut net).unwrap();
    }
    (net, loss)
}

#[test]
fn memorizes_ten_samples() {
    let (net, loss) = train_memorization(17);
    assert!(loss < 1e-3, "final loss {loss}");
    let (again, loss2) = train_memorization(17);
    assert_eq!(loss, loss2);
    assert_eq!(save_checkpoint(&net), save_checkpoint(&again));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let net = memorization_net(3);
    let bytes = save_checkpoint(&net);
    let back: Network<f32> = load_checkpoint(&bytes).unwrap();
    assert_eq!(back, net);
    assert_eq!(save_checkpoint(&back), bytes);
    let x = Tensor::from_vec(&[1, 4, 4, 4], (0..64).map(|i| i as f32 / 64.0).collect());
    assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
}

#[test]
fn checkpoint_rejects_corruption() {
    let bytes = save_checkpoint(&memorization_net(3));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(load_checkpoint::<f32>(&bad).is_err());
    assert!(load_checkpoint::<f32>(&bytes[..bytes.len() - 4]).is_err());
}

proptest! {
    #[test]
    fn softmax_output_is_a_distribution(vals in proptest::collection::vec(-30.0f64..30.0, 3 * 8)) {
        let net = Network::<f64>::new(&[3, 2, 2, 2], vec![LayerSpec::Softmax], 0).unwrap();
        let y = net.forward(&Tensor::from_vec(&[3, 2, 2, 2], vals)).unwrap();
        for i in 0..8 {
            let s: f64 = (0..3).map(|c| y.data()[c * 8 + i]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
