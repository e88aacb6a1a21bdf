//! Small differentiable numerics: tensors, layers with hand-written backward
//! rules, AdamW, and a finite-difference gradient checker.

mod gradcheck;
mod layers;
mod network;
mod optim;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layers::{sinusoidal_embedding, LayerSpec, PoolMode};
pub use network::Network;
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::{Param, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::groups::{rotate_image, CyclicGroup, Image, Representation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn randomize_biases(net: &mut Network, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params_mut() {
            if p.name.ends_with("bias") {
                p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
    }

    #[test]
    fn zero_dense_gives_zero_output() {
        let mut net = Network::new("d", vec![3], vec![LayerSpec::Dense { input: 3, output: 2 }], 1).unwrap();
        for p in net.params_mut() {
            p.value.fill(0.0);
        }
        let y = net.infer(&random_tensor(vec![4, 3], 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clamps_negatives() {
        let net = Network::new("r", vec![2], vec![LayerSpec::Relu], 0).unwrap();
        let y = net.infer(&Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn identity_pointwise_conv_passes_input_through() {
        let spec = LayerSpec::Conv2d {
            in_ch: 3,
            out_ch: 3,
            kernel: 1,
            stride: 1,
            pad: 0,
        };
        let mut net = Network::new("c", vec![3, 5, 5], vec![spec], 0).unwrap();
        net.params_mut()[0].value.data_mut().copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = random_tensor(vec![2, 3, 5, 5], 3);
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let (ci, co, k, s, p, h) = (2, 3, 3, 2, 1, 7);
        let spec = LayerSpec::Conv2d {
            in_ch: ci,
            out_ch: co,
            kernel: k,
            stride: s,
            pad: p,
        };
        let mut net = Network::new("c", vec![ci, h, h], vec![spec], 5).unwrap();
        randomize_biases(&mut net, 6);
        let x = random_tensor(vec![1, ci, h, h], 7);
        let y = net.infer(&x).unwrap();
        let w = net.params()[0].value.data().to_vec();
        let b = net.params()[1].value.data().to_vec();
        let ho = (h + 2 * p - k) / s + 1;
        assert_eq!(y.shape(), &[1, co, ho, ho]);
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..ho {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < h {
                                    acc += w[((o * ci + c) * k + ky) * k + kx]
                                        * x.data()[(c * h + iy as usize) * h + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data()[(o * ho + oy) * ho + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batched_conv_matches_single_items() {
        let specs = vec![
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 5,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                in_ch: 5,
                out_ch: 3,
                kernel: 6,
                stride: 1,
                pad: 0,
            },
            LayerSpec::Flatten,
        ];
        let mut net = Network::new("b", vec![2, 6, 6], specs, 13).unwrap();
        randomize_biases(&mut net, 14);
        let x = random_tensor(vec![3, 2, 6, 6], 15);
        let g = random_tensor(vec![3, 3], 16);
        let y = net.infer(&x).unwrap();
        net.zero_grad();
        net.forward(&x).unwrap();
        let gx = net.backward(&g).unwrap();
        let batch_grads: Vec<f64> = net.params().iter().flat_map(|p| p.grad.data().to_vec()).collect();
        let mut item_grads = vec![0.0; batch_grads.len()];
        net.zero_grad();
        for i in 0..3 {
            let xi = Tensor::new(vec![1, 2, 6, 6], x.item(i).to_vec()).unwrap();
            let yi = net.infer(&xi).unwrap();
            assert!(max_abs(yi.data(), y.item(i)) < 1e-12);
            net.zero_grad();
            net.forward(&xi).unwrap();
            let gi = net.backward(&Tensor::new(vec![1, 3], g.item(i).to_vec()).unwrap()).unwrap();
            assert!(max_abs(gi.data(), gx.item(i)) < 1e-12);
            for (acc, p) in item_grads.iter_mut().zip(net.params().iter().flat_map(|p| p.grad.data().to_vec())) {
                *acc += p;
            }
        }
        assert!(max_abs(&item_grads, &batch_grads) < 1e-12);
    }

    fn max_abs(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn lifting_with_trivial_group_is_plain_conv() {
        let lift = Network::new(
            "l",
            vec![2, 6, 6],
            vec![LayerSpec::LiftingConv {
                order: 1,
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                pad: 1,
            }],
            11,
        )
        .unwrap();
        let plain = Network::new(
            "l",
            vec![2, 6, 6],
            vec![LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 1,
                pad: 1,
            }],
            11,
        )
        .unwrap();
        let x = random_tensor(vec![1, 2, 6, 6], 12);
        assert_eq!(lift.infer(&x).unwrap(), plain.infer(&x).unwrap());
    }

    fn rotate_chw(x: &[f64], c: usize, n: usize, g: &crate::groups::GroupElement) -> Vec<f64> {
        let mut hwc = vec![0.0; x.len()];
        for ch in 0..c {
            for p in 0..n * n {
                hwc[p * c + ch] = x[ch * n * n + p];
            }
        }
        rotate_image(g, &Image::new(n, n, c, hwc).unwrap()).unwrap().to_chw()
    }

    #[test]
    fn lifting_conv_is_equivariant_for_quarter_turns() {
        let (u, n, co) = (4, 8, 2);
        let mut net = Network::new(
            "l",
            vec![1, n, n],
            vec![LayerSpec::LiftingConv {
                order: u,
                in_ch: 1,
                out_ch: co,
                kernel: 3,
                pad: 1,
            }],
            21,
        )
        .unwrap();
        randomize_biases(&mut net, 22);
        let x = random_tensor(vec![1, 1, n, n], 23);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, co * u, n, n]);
        let group = CyclicGroup::new(u).unwrap();
        let g = group.element(1);
        let gx = Tensor::new(vec![1, 1, n, n], rotate_chw(x.data(), 1, n, &g)).unwrap();
        let y_gx = net.infer(&gx).unwrap();
        // Rotate spatially, then shift the orbit index of every channel.
        let spatial = rotate_chw(y.data(), co * u, n, &g);
        let mut want = vec![0.0; spatial.len()];
        for o in 0..co {
            for v in 0..u {
                let src = (o * u + v) * n * n;
                let dst = (o * u + (v + 1) % u) * n * n;
                want[dst..dst + n * n].copy_from_slice(&spatial[src..src + n * n]);
            }
        }
        let err = want.iter().zip(y_gx.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn lifting_on_constant_image_is_constant_along_orbit() {
        let u = 4;
        let net = Network::new(
            "l",
            vec![1, 6, 6],
            vec![LayerSpec::LiftingConv {
                order: u,
                in_ch: 1,
                out_ch: 2,
                kernel: 3,
                pad: 0,
            }],
            31,
        )
        .unwrap();
        let x = Tensor::new(vec![1, 1, 6, 6], vec![0.8; 36]).unwrap();
        let y = net.infer(&x).unwrap();
        let hw = 16;
        for o in 0..2 {
            for v in 1..u {
                for s in 0..hw {
                    let a = y.data()[(o * u) * hw + s];
                    let b = y.data()[(o * u + v) * hw + s];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lift_group_pool_stack_is_invariant() {
        let u = 4;
        let n = 8;
        let specs = vec![
            LayerSpec::LiftingConv {
                order: u,
                in_ch: 1,
                out_ch: 2,
                kernel: 3,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::GroupConv {
                order: u,
                in_ch: 2,
                out_ch: 2,
                kernel: 3,
                pad: 1,
            },
            LayerSpec::GroupPool {
                order: u,
                mode: PoolMode::Mean,
            },
        ];
        let net = Network::new("e", vec![1, n, n], specs, 41).unwrap();
        let x = random_tensor(vec![1, 1, n, n], 42);
        let y = net.infer(&x).unwrap();
        let g = CyclicGroup::new(u).unwrap().element(1);
        let gx = Tensor::new(vec![1, 1, n, n], rotate_chw(x.data(), 1, n, &g)).unwrap();
        let y_gx = net.infer(&gx).unwrap();
        let want = rotate_chw(y.data(), 2, n, &g);
        let err = want.iter().zip(y_gx.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn group_conv_regular_output_under_global_pool() {
        // After spatial averaging the feature vector must transform by the
        // regular representation.
        let u = 4;
        let n = 8;
        let specs = vec![
            LayerSpec::LiftingConv {
                order: u,
                in_ch: 1,
                out_ch: 2,
                kernel: 3,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool2,
            LayerSpec::GroupConv {
                order: u,
                in_ch: 2,
                out_ch: 3,
                kernel: 4,
                pad: 0,
            },
            LayerSpec::Flatten,
        ];
        let net = Network::new("e", vec![1, n, n], specs, 51).unwrap();
        let x = random_tensor(vec![1, 1, n, n], 52);
        let group = CyclicGroup::new(u).unwrap();
        let rho = Representation::regular(u, 3);
        for g in group.elements() {
            let gx = Tensor::new(vec![1, 1, n, n], rotate_chw(x.data(), 1, n, &g)).unwrap();
            let lhs = net.infer(&gx).unwrap();
            let rhs = rho.apply(&g, net.infer(&x).unwrap().data()).unwrap();
            let err = rhs.iter().zip(lhs.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    fn check(specs: Vec<LayerSpec>, input: Vec<usize>, seed: u64) -> GradCheckReport {
        let mut net = Network::new("g", input.clone(), specs, seed).unwrap();
        randomize_biases(&mut net, seed + 1);
        let mut shape = vec![2];
        shape.extend(input);
        let x = random_tensor(shape, seed + 2);
        finite_diff_check(&mut net, &x, 1e-4).unwrap()
    }

    #[test]
    fn linear_net_gradients_are_exact() {
        let r = check(
            vec![LayerSpec::Dense { input: 4, output: 3 }, LayerSpec::Dense { input: 3, output: 2 }],
            vec![4],
            60,
        );
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert!(!r.worst.is_empty());
    }

    #[test]
    fn every_layer_kind_passes_gradient_check() {
        let cases: Vec<(Vec<LayerSpec>, Vec<usize>)> = vec![
            (
                vec![
                    LayerSpec::Dense { input: 5, output: 6 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { input: 6, output: 3 },
                ],
                vec![5],
            ),
            (
                vec![
                    LayerSpec::Conv2d {
                        in_ch: 2,
                        out_ch: 3,
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::AvgPool2,
                    LayerSpec::Flatten,
                ],
                vec![2, 8, 8],
            ),
            (
                vec![
                    LayerSpec::LiftingConv {
                        order: 4,
                        in_ch: 1,
                        out_ch: 2,
                        kernel: 3,
                        pad: 1,
                    },
                    LayerSpec::GroupConv {
                        order: 4,
                        in_ch: 2,
                        out_ch: 1,
                        kernel: 3,
                        pad: 0,
                    },
                    LayerSpec::GroupPool {
                        order: 4,
                        mode: PoolMode::Max,
                    },
                    LayerSpec::Flatten,
                ],
                vec![1, 5, 5],
            ),
            (
                vec![
                    LayerSpec::LiftingConv {
                        order: 8,
                        in_ch: 1,
                        out_ch: 1,
                        kernel: 3,
                        pad: 1,
                    },
                    LayerSpec::GroupPool {
                        order: 8,
                        mode: PoolMode::Mean,
                    },
                    LayerSpec::Flatten,
                ],
                vec![1, 4, 4],
            ),
            (
                vec![
                    LayerSpec::SinusoidalTimeEmbed { dim: 8 },
                    LayerSpec::Dense { input: 8, output: 2 },
                ],
                vec![1],
            ),
        ];
        for (i, (specs, input)) in cases.into_iter().enumerate() {
            let r = check(specs, input, 70 + 10 * i as u64);
            assert!(r.max_rel_error < 1e-4, "case {i}: {r:?}");
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut net = Network::new(
            "z",
            vec![3],
            vec![LayerSpec::Dense { input: 3, output: 4 }, LayerSpec::Relu, LayerSpec::Dense { input: 4, output: 2 }],
            3,
        )
        .unwrap();
        let x = random_tensor(vec![2, 3], 4);
        net.forward(&x).unwrap();
        let gx = net.backward(&Tensor::zeros(vec![2, 2])).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(net.params().iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let specs = vec![
            LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: 2,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
        ];
        let mut net = Network::new("d", vec![1, 4, 4], specs, 8).unwrap();
        let x = random_tensor(vec![3, 1, 4, 4], 9);
        let g = random_tensor(vec![3, 32], 10);
        let mut grads = Vec::new();
        for _ in 0..2 {
            net.zero_grad();
            net.forward(&x).unwrap();
            net.backward(&g).unwrap();
            let bits: Vec<u64> = net.params().iter().flat_map(|p| p.grad.data().iter().map(|v| v.to_bits())).collect();
            grads.push(bits);
        }
        assert_eq!(grads[0], grads[1]);
    }

    #[test]
    fn backward_without_forward_is_stale() {
        let mut net = Network::new("s", vec![2], vec![LayerSpec::Dense { input: 2, output: 1 }], 0).unwrap();
        assert!(matches!(net.backward(&Tensor::zeros(vec![1, 1])), Err(Error::StaleActivations)));
        net.forward(&Tensor::zeros(vec![1, 2])).unwrap();
        net.params_mut()[0].value.fill(1.0);
        assert!(matches!(net.backward(&Tensor::zeros(vec![1, 1])), Err(Error::StaleActivations)));
    }

    #[test]
    fn shape_errors_are_reported() {
        let r = Network::new(
            "x",
            vec![3],
            vec![LayerSpec::Dense { input: 3, output: 2 }, LayerSpec::Dense { input: 3, output: 1 }],
            0,
        );
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
        let net = Network::new("x", vec![3], vec![LayerSpec::Relu], 0).unwrap();
        assert!(matches!(net.infer(&Tensor::zeros(vec![1, 4])), Err(Error::ShapeMismatch(_))));
    }
}
