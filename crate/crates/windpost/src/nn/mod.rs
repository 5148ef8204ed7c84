//! Minimal reverse-mode tensor engine: exactly the layers the architectures
//! need (dense, 3x3 same-padding convolution, 2x2 max pooling, batch norm,
//! dropout, activations, flatten, concat), Adam, and the training loop.

mod adam;
mod io;
mod layers;
mod net;
mod tensor;
mod train;

pub use adam::Adam;
pub use io::{read_network, save_epoch_log, write_network};
pub use layers::{ActivationKind, Layer, LayerSpec, Mode};
pub use net::{Network, Node, NodeInput, NodeSpec};
pub use tensor::Tensor;
pub use train::{
    evaluate, train, train_fixed, train_with_metric, EpochRecord, LossFn, ModelInputs,
    TrainConfig, TrainOutcome,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::math::seed_stream;
    use rand::Rng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        seed_stream(seed, "nn-test", 0)
    }

    fn random_tensor(shape: &[usize], r: &mut ChaCha12Rng, scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_values(shape, (0..n).map(|_| (r.random::<f64>() * 2.0 - 1.0) * scale).collect())
    }

    /// Scalar probe loss: a fixed random linear functional of the output.
    fn probe_loss(net: &mut Network, inputs: &[Tensor], probe: &[f64], rng_seed: u64) -> f64 {
        let mut r = seed_stream(rng_seed, "probe", 0);
        let out = net.forward(inputs, Mode::Train, &mut r).unwrap();
        out.values.iter().zip(probe).map(|(a, b)| a * b).sum()
    }

    /// Central finite-difference check of parameter and input gradients.
    /// Large tensors are sampled at a deterministic subset of coordinates.
    fn grad_check(mut net: Network, inputs: Vec<Tensor>, seed: u64, tol: f64) {
        let mut r = rng(seed);
        // Forward once to learn the output size, then fix the probe.
        let out = {
            let mut rr = seed_stream(seed, "probe", 0);
            net.forward(&inputs, Mode::Train, &mut rr).unwrap()
        };
        let probe: Vec<f64> = (0..out.numel()).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();

        // Analytic gradients.
        let _ = probe_loss(&mut net, &inputs, &probe, seed);
        net.zero_grads();
        let input_grads = net.backward(&Tensor::from_values(&out.shape, probe.clone())).unwrap();
        let analytic_params: Vec<Vec<f64>> =
            net.params_and_grads().iter().map(|(_, g)| g.to_vec()).collect();

        let eps = 1e-4;
        // Parameter coordinates.
        let n_tensors = net.params_and_grads().len();
        for t in 0..n_tensors {
            let len = net.params_and_grads()[t].0.len();
            let coords: Vec<usize> = if len <= 24 {
                (0..len).collect()
            } else {
                (0..24).map(|k| (k * 7919) % len).collect()
            };
            for &c in &coords {
                let orig = net.params_and_grads()[t].0[c];
                net.params_and_grads()[t].0[c] = orig + eps;
                let lp = probe_loss(&mut net, &inputs, &probe, seed);
                net.params_and_grads()[t].0[c] = orig - eps;
                let lm = probe_loss(&mut net, &inputs, &probe, seed);
                net.params_and_grads()[t].0[c] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let a = analytic_params[t][c];
                assert!(
                    (a - fd).abs() <= tol * a.abs().max(fd.abs()).max(1.0),
                    "param tensor {t} coord {c}: analytic {a}, fd {fd}"
                );
            }
        }
        // Input coordinates.
        for (k, g) in input_grads.iter().enumerate() {
            let len = inputs[k].numel();
            let coords: Vec<usize> = if len <= 24 {
                (0..len).collect()
            } else {
                (0..24).map(|q| (q * 5003) % len).collect()
            };
            for &c in &coords {
                let mut pert = inputs.clone();
                pert[k].values[c] += eps;
                let lp = probe_loss(&mut net, &pert, &probe, seed);
                pert[k].values[c] -= 2.0 * eps;
                let lm = probe_loss(&mut net, &pert, &probe, seed);
                let fd = (lp - lm) / (2.0 * eps);
                let a = g.values[c];
                assert!(
                    (a - fd).abs() <= tol * a.abs().max(fd.abs()).max(1.0),
                    "input {k} coord {c}: analytic {a}, fd {fd}"
                );
            }
        }
    }

    fn single_node(spec: LayerSpec, seed: u64) -> Network {
        let mut r = rng(seed);
        Network::build(
            &[NodeSpec { spec, inputs: vec![NodeInput::External(0)] }],
            1,
            &mut r,
        )
        .unwrap()
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut net = single_node(LayerSpec::Conv2D { in_channels: 1, filters: 1 }, 1);
        if let Layer::Conv2D(c) = &mut net.nodes[0].layer {
            c.weights = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
            c.bias = vec![0.0];
        }
        let mut r = rng(2);
        let x = random_tensor(&[1, 1, 5, 7], &mut r, 2.0);
        let out = net.forward(&[x.clone()], Mode::Infer, &mut r).unwrap();
        assert_eq!(out.shape, x.shape);
        for (a, b) in out.values.iter().zip(&x.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn maxpool_two_by_two() {
        let mut net = single_node(LayerSpec::MaxPool, 1);
        let x = Tensor::from_values(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let mut r = rng(0);
        let out = net.forward(&[x], Mode::Infer, &mut r).unwrap();
        assert_eq!(out.shape, vec![1, 1, 1, 1]);
        assert_eq!(out.values, vec![4.0]);
    }

    #[test]
    fn pooling_chain_shapes_match_the_architecture_tables() {
        // Same padding keeps conv extents; three pools map 60 -> 30 -> 15 -> 7
        // and 100 -> 50 -> 25 -> 12.
        for (side, expect) in [(60usize, 7usize), (100, 12)] {
            let mut net = {
                let mut r = rng(3);
                Network::build(
                    &[
                        NodeSpec { spec: LayerSpec::MaxPool, inputs: vec![NodeInput::External(0)] },
                        NodeSpec { spec: LayerSpec::MaxPool, inputs: vec![NodeInput::Node(0)] },
                        NodeSpec { spec: LayerSpec::MaxPool, inputs: vec![NodeInput::Node(1)] },
                    ],
                    1,
                    &mut r,
                )
                .unwrap()
            };
            let mut r = rng(4);
            let x = random_tensor(&[1, 1, side, side], &mut r, 1.0);
            let out = net.forward(&[x], Mode::Infer, &mut r).unwrap();
            assert_eq!(out.shape, vec![1, 1, expect, expect]);
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity_in_both_modes() {
        let mut net = single_node(LayerSpec::Dropout { rate: 0.0 }, 1);
        let mut r = rng(5);
        let x = random_tensor(&[3, 8], &mut r, 1.0);
        let train = net.forward(&[x.clone()], Mode::Train, &mut r).unwrap();
        let infer = net.forward(&[x.clone()], Mode::Infer, &mut r).unwrap();
        assert_eq!(train, infer);
        assert_eq!(train.values, x.values);
    }

    #[test]
    fn zero_upstream_gradient_zeroes_parameter_gradients() {
        let mut net = single_node(LayerSpec::Dense { inputs: 6, units: 4 }, 7);
        let mut r = rng(8);
        let x = random_tensor(&[5, 6], &mut r, 1.0);
        let out = net.forward(&[x], Mode::Train, &mut r).unwrap();
        net.zero_grads();
        net.backward(&Tensor::zeros(&out.shape)).unwrap();
        for (_, g) in net.params_and_grads() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dense_on_scalar_input_is_the_chain_rule() {
        let mut net = single_node(LayerSpec::Dense { inputs: 1, units: 1 }, 9);
        let (w, b) = (1.7, -0.3);
        if let Layer::Dense(d) = &mut net.nodes[0].layer {
            d.weights = vec![w];
            d.bias = vec![b];
        }
        let x = 0.8;
        let mut r = rng(10);
        let out = net
            .forward(&[Tensor::from_values(&[1, 1], vec![x])], Mode::Train, &mut r)
            .unwrap();
        assert!((out.values[0] - (w * x + b)).abs() < 1e-15);
        net.zero_grads();
        let gin = net.backward(&Tensor::from_values(&[1, 1], vec![1.0])).unwrap();
        // dy/dx = w, dy/dw = x, dy/db = 1.
        assert!((gin[0].values[0] - w).abs() < 1e-15);
        let pg = net.params_and_grads();
        assert!((pg[0].1[0] - x).abs() < 1e-15);
        assert!((pg[1].1[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradcheck_dense() {
        let net = single_node(LayerSpec::Dense { inputs: 4, units: 5 }, 11);
        let mut r = rng(12);
        let x = random_tensor(&[3, 4], &mut r, 1.0);
        grad_check(net, vec![x], 12, 1e-4);
    }

    #[test]
    fn gradcheck_conv2d() {
        let net = single_node(LayerSpec::Conv2D { in_channels: 2, filters: 3 }, 13);
        let mut r = rng(14);
        let x = random_tensor(&[2, 2, 5, 6], &mut r, 1.0);
        grad_check(net, vec![x], 14, 1e-4);
    }

    #[test]
    fn gradcheck_maxpool() {
        let net = single_node(LayerSpec::MaxPool, 15);
        let mut r = rng(16);
        // Well-separated values keep the argmax stable under the probe eps.
        let mut x = random_tensor(&[2, 1, 4, 4], &mut r, 1.0);
        for (i, v) in x.values.iter_mut().enumerate() {
            *v += i as f64 * 0.01;
        }
        grad_check(net, vec![x], 16, 1e-4);
    }

    #[test]
    fn gradcheck_batchnorm_2d_and_4d() {
        let net = single_node(LayerSpec::BatchNorm { size: 5, momentum: 0.99, eps: 1e-5 }, 17);
        let mut r = rng(18);
        let x = random_tensor(&[6, 5], &mut r, 1.5);
        grad_check(net, vec![x], 18, 1e-4);

        let net = single_node(LayerSpec::BatchNorm { size: 3, momentum: 0.99, eps: 1e-5 }, 19);
        let x = random_tensor(&[2, 3, 4, 4], &mut r, 1.5);
        grad_check(net, vec![x], 20, 1e-4);
    }

    #[test]
    fn gradcheck_dropout_with_fixed_mask() {
        let net = single_node(LayerSpec::Dropout { rate: 0.35 }, 21);
        let mut r = rng(22);
        let x = random_tensor(&[4, 6], &mut r, 1.0);
        grad_check(net, vec![x], 22, 1e-4);
    }

    #[test]
    fn gradcheck_activations() {
        for kind in [
            ActivationKind::Relu,
            ActivationKind::Softplus,
            ActivationKind::Softmax,
            ActivationKind::Linear,
        ] {
            let net = single_node(LayerSpec::Activation(kind), 23);
            let mut r = rng(24);
            let mut x = random_tensor(&[3, 7], &mut r, 1.0);
            if kind == ActivationKind::Relu {
                // Keep inputs away from the kink.
                for v in &mut x.values {
                    if v.abs() < 0.05 {
                        *v += 0.1;
                    }
                }
            }
            grad_check(net, vec![x], 24, 1e-4);
        }
    }

    #[test]
    fn gradcheck_concat_and_flatten_graph() {
        let mut r = rng(25);
        let net = Network::build(
            &[
                NodeSpec { spec: LayerSpec::Flatten, inputs: vec![NodeInput::External(1)] },
                NodeSpec {
                    spec: LayerSpec::Dense { inputs: 9, units: 4 },
                    inputs: vec![NodeInput::Node(0)],
                },
                NodeSpec {
                    spec: LayerSpec::Dense { inputs: 5, units: 3 },
                    inputs: vec![NodeInput::External(0)],
                },
                NodeSpec { spec: LayerSpec::Concat, inputs: vec![NodeInput::Node(2), NodeInput::Node(1)] },
                NodeSpec {
                    spec: LayerSpec::Dense { inputs: 7, units: 2 },
                    inputs: vec![NodeInput::Node(3)],
                },
            ],
            2,
            &mut r,
        )
        .unwrap();
        let tab = random_tensor(&[2, 5], &mut r, 1.0);
        let patch = random_tensor(&[2, 1, 3, 3], &mut r, 1.0);
        grad_check(net, vec![tab, patch], 26, 1e-4);
    }

    #[test]
    fn batchnorm_train_output_is_normalized_before_scale_shift() {
        // gamma starts at 1 and beta at 0, so the raw output is normalized.
        let mut net = single_node(LayerSpec::BatchNorm { size: 4, momentum: 0.99, eps: 1e-5 }, 27);
        let mut r = rng(28);
        let x = random_tensor(&[64, 4], &mut r, 3.0);
        let out = net.forward(&[x], Mode::Train, &mut r).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = (0..64).map(|b| out.values[b * 4 + c]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 64.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-12, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut r = rng(29);
        let mut net = Network::build(
            &[
                NodeSpec {
                    spec: LayerSpec::Dense { inputs: 6, units: 8 },
                    inputs: vec![NodeInput::External(0)],
                },
                NodeSpec {
                    spec: LayerSpec::Dropout { rate: 0.4 },
                    inputs: vec![NodeInput::Node(0)],
                },
            ],
            1,
            &mut r,
        )
        .unwrap();
        let x = random_tensor(&[4, 6], &mut r, 1.0);
        let a = net.forward(&[x.clone()], Mode::Infer, &mut rng(1)).unwrap();
        let b = net.forward(&[x.clone()], Mode::Infer, &mut rng(2)).unwrap();
        assert_eq!(a, b);
        let t1 = net.forward(&[x.clone()], Mode::Train, &mut rng(3)).unwrap();
        let t2 = net.forward(&[x.clone()], Mode::Train, &mut rng(3)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let mut net = single_node(LayerSpec::Dense { inputs: 4, units: 2 }, 30);
        let mut r = rng(31);
        let x = random_tensor(&[2, 5], &mut r, 1.0);
        match net.forward(&[x], Mode::Infer, &mut r) {
            Err(crate::Error::ShapeError { layer, .. }) => assert!(layer.contains("dense")),
            other => panic!("expected ShapeError, got {other:?}"),
        }
    }

    #[test]
    fn network_binary_round_trips() {
        let mut r = rng(32);
        let mut net = Network::build(
            &[
                NodeSpec {
                    spec: LayerSpec::Conv2D { in_channels: 1, filters: 2 },
                    inputs: vec![NodeInput::External(1)],
                },
                NodeSpec { spec: LayerSpec::MaxPool, inputs: vec![NodeInput::Node(0)] },
                NodeSpec { spec: LayerSpec::Flatten, inputs: vec![NodeInput::Node(1)] },
                NodeSpec {
                    spec: LayerSpec::Dense { inputs: 8, units: 3 },
                    inputs: vec![NodeInput::Node(2)],
                },
                NodeSpec {
                    spec: LayerSpec::Dense { inputs: 4, units: 3 },
                    inputs: vec![NodeInput::External(0)],
                },
                NodeSpec { spec: LayerSpec::Concat, inputs: vec![NodeInput::Node(4), NodeInput::Node(3)] },
                NodeSpec {
                    spec: LayerSpec::BatchNorm { size: 6, momentum: 0.99, eps: 1e-5 },
                    inputs: vec![NodeInput::Node(5)],
                },
            ],
            2,
            &mut r,
        )
        .unwrap();
        // Touch the running statistics so they round-trip nontrivially.
        let tab = random_tensor(&[3, 4], &mut r, 1.0);
        let patch = random_tensor(&[3, 1, 4, 4], &mut r, 1.0);
        net.forward(&[tab.clone(), patch.clone()], Mode::Train, &mut rng(33)).unwrap();
        net.clear_state();

        let mut buf = Vec::new();
        write_network(&mut buf, &net).unwrap();
        let mut back =
            read_network(&mut buf.as_slice(), std::path::Path::new("<memory>")).unwrap();
        assert_eq!(net, back);
        let a = net.forward(&[tab.clone(), patch.clone()], Mode::Infer, &mut rng(34)).unwrap();
        let b = back.forward(&[tab, patch], Mode::Infer, &mut rng(34)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_early_stops_with_zero_patience() {
        // The network starts at the validation optimum while the training
        // targets pull it elsewhere, so validation loss worsens every epoch.
        let mut r = rng(35);
        let mut net = single_node(LayerSpec::Dense { inputs: 2, units: 1 }, 36);
        if let Layer::Dense(d) = &mut net.nodes[0].layer {
            d.weights = vec![1.0, 1.0];
            d.bias = vec![0.0];
        }
        let tabular: Vec<Vec<f64>> = (0..32).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let val_targets: Vec<f64> = tabular.iter().map(|v| v[0] + v[1]).collect();
        let train_targets: Vec<f64> = tabular.iter().map(|v| v[0] - v[1] + 5.0).collect();
        let offsets = vec![0.0; 32];
        let train_data = ModelInputs {
            tabular: &tabular,
            patches: None,
            targets: &train_targets,
            offsets: &offsets,
        };
        let val_data = ModelInputs {
            tabular: &tabular,
            patches: None,
            targets: &val_targets,
            offsets: &offsets,
        };
        // Squared-error loss on the single raw output.
        let loss: &LossFn = &|raw, t, _| {
            let d = raw[0] - t;
            Ok((d * d, vec![2.0 * d], false))
        };
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 10,
            patience: 0,
            learning_rate: 0.01,
            ..Default::default()
        };
        let out = train(net, &train_data, &val_data, loss, &cfg).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.epochs.len(), 2, "one epoch past the best, then stop");
        assert!(out.epochs[1].val_loss > out.epochs[0].val_loss);
    }

    #[test]
    fn l1_hook_shrinks_weights_and_defaults_to_a_no_op() {
        let mut r = rng(40);
        let tabular: Vec<Vec<f64>> = (0..64).map(|_| vec![r.random::<f64>() * 2.0]).collect();
        let targets: Vec<f64> = tabular.iter().map(|v| 3.0 * v[0] - 1.0).collect();
        let offsets = vec![0.0; 64];
        let data = ModelInputs { tabular: &tabular, patches: None, targets: &targets, offsets: &offsets };
        let loss: &LossFn = &|raw, t, _| {
            let d = raw[0] - t;
            Ok((d * d, vec![2.0 * d], false))
        };
        let fit = |l1: f64| {
            let net = single_node(LayerSpec::Dense { inputs: 1, units: 1 }, 41);
            let cfg = TrainConfig {
                batch_size: 16,
                max_epochs: 80,
                learning_rate: 0.05,
                l1,
                ..Default::default()
            };
            let (mut trained, _) = train_fixed(net, &data, loss, &cfg, 80).unwrap();
            trained.params_and_grads()[0].0[0]
        };
        let plain = fit(0.0);
        let plain_again = fit(0.0);
        let shrunk = fit(2.0);
        assert_eq!(plain.to_bits(), plain_again.to_bits());
        assert!(
            shrunk.abs() < plain.abs(),
            "l1 did not shrink the weight: {shrunk} vs {plain}"
        );
    }

    #[test]
    fn zero_noise_leaves_targets_untouched_and_training_fits() {
        let mut r = rng(37);
        let net = single_node(LayerSpec::Dense { inputs: 1, units: 1 }, 38);
        let tabular: Vec<Vec<f64>> = (0..64).map(|_| vec![r.random::<f64>() * 2.0]).collect();
        let targets: Vec<f64> = tabular.iter().map(|v| 3.0 * v[0] - 1.0).collect();
        let offsets = vec![0.0; 64];
        let data = ModelInputs { tabular: &tabular, patches: None, targets: &targets, offsets: &offsets };
        let loss: &LossFn = &|raw, t, _| {
            let d = raw[0] - t;
            Ok((d * d, vec![2.0 * d], false))
        };
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 300,
            patience: 300,
            learning_rate: 0.05,
            noise_sigma: 0.0,
            ..Default::default()
        };
        let out = train(net, &data, &data, loss, &cfg).unwrap();
        let final_val = out.epochs.last().unwrap().val_loss;
        assert!(final_val < 1e-3, "val loss {final_val}");
    }
}
