use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsd_autograd::gradcheck::{self, check_gradients, FD_STEP, GRAD_TOLERANCE};
use rsd_autograd::{Graph, Param, Tensor, TensorError};

#[test]
fn sum_root_gives_ones() {
    let g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2, 3, 2]));
    g.backward(x.sum()).unwrap();
    assert_eq!(g.grad(x).unwrap(), Tensor::ones(&[2, 3, 2]));
}

#[test]
fn square_sum_hand_derivative() {
    let g = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
    g.backward(x.mul(&x).unwrap().sum()).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn non_scalar_root_is_rejected() {
    let g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x.exp()), Err(TensorError::NonScalarRoot(_))));
}

#[test]
fn repeated_backward_accumulates() {
    let g = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
    let y = x.square().sum();
    g.backward(y).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn diamond_graph_sums_both_paths() {
    // f(x) = exp(x) * sin-free path: f = x^2 + 3x with x reused; f' = 2x + 3
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(1.5));
    let left = x.square();
    let right = x.scale(3.0);
    let f = left.add(&right).unwrap();
    g.backward(f).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 2.0 * 1.5 + 3.0);

    // x used twice inside one product: d(x*x*x)/dx = 3x^2
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0));
    let f = x.mul(&x).unwrap().mul(&x).unwrap();
    g.backward(f).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 12.0);
}

#[test]
fn constants_receive_no_gradient() {
    let g = Graph::new();
    let x = g.leaf(Tensor::ones(&[2]));
    let c = g.constant(Tensor::ones(&[2]));
    g.backward(x.mul(&c).unwrap().sum()).unwrap();
    assert!(g.grad(c).is_none());
    assert!(g.grad(x).is_some());
}

#[test]
fn frozen_param_gets_no_grad() {
    let mut live = Param::new("w", Tensor::ones(&[2]));
    let mut frozen = Param::new("f", Tensor::ones(&[2]));
    frozen.set_frozen(true);
    let g = Graph::new();
    let a = g.param(&live);
    let b = g.param(&frozen);
    g.backward(a.mul(&b).unwrap().sum()).unwrap();
    assert!(live.accumulate_grad(&g));
    assert!(!frozen.accumulate_grad(&g));
    assert!(frozen.grad().is_none());
    assert_eq!(live.grad().unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn param_bound_twice_shares_node() {
    let mut p = Param::new("w", Tensor::scalar(3.0));
    let g = Graph::new();
    let a = g.param(&p);
    let b = g.param(&p);
    g.backward(a.mul(&b).unwrap()).unwrap();
    p.accumulate_grad(&g);
    assert_eq!(p.grad().unwrap().item(), 6.0);
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = Tensor::randn(&[3, 4], &mut rng);
    let b = Tensor::randn(&[4, 2], &mut rng);
    let r = check_gradients("matmul", &[a, b], FD_STEP, |_g, v| Ok(v[0].matmul(&v[1])?.sum())).unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn product_gradient_equals_other_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::randn(&[3, 3], &mut rng);
    let y = Tensor::randn(&[3, 3], &mut rng);
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    let yv = g.constant(y.clone());
    g.backward(xv.mul(&yv).unwrap().sum()).unwrap();
    assert_eq!(g.grad(xv).unwrap(), y);
    let r = check_gradients("mul", &[x, y], FD_STEP, |_g, v| Ok(v[0].mul(&v[1])?.sum())).unwrap();
    assert!(r.passed(GRAD_TOLERANCE), "{r:?}");
}

#[test]
fn gelu_gradient_on_hundred_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = Tensor::uniform(&[100], -4.0, 4.0, &mut rng);
    let r = check_gradients("gelu", &[x], FD_STEP, |_g, v| Ok(v[0].gelu().sum())).unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn conv_gradient_on_small_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::randn(&[2, 2, 4, 4], &mut rng);
    let w = Tensor::randn(&[3, 2, 3, 3], &mut rng);
    let b = Tensor::randn(&[3], &mut rng);
    let weights = Tensor::randn(&[2, 3, 2, 2], &mut rng);
    let r = check_gradients("conv2d", &[x, w, b], FD_STEP, move |g, v| {
        let y = v[0].conv2d(&v[1], Some(&v[2]), 2, 1)?;
        Ok(y.mul(&g.constant(weights.clone()))?.sum())
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn every_primitive_passes_gradcheck() {
    let results = gradcheck::primitive_suite(2024, 5).unwrap();
    assert_eq!(results.len(), gradcheck::PRIMITIVE_OPS.len());
    for r in &results {
        assert!(r.passed(GRAD_TOLERANCE), "{r:?}");
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Tensor::randn(&[4, 3], &mut rng);
        let w = Tensor::randn(&[3, 5], &mut rng);
        let g = Graph::new();
        let xv = g.leaf(x);
        let wv = g.leaf(w);
        let y = xv.matmul(&wv).unwrap().gelu().log_softmax().sum();
        g.backward(y).unwrap();
        (y.item().to_bits(), g.grad(xv).unwrap(), g.grad(wv).unwrap())
    };
    let (a, ga, wa) = run();
    let (b, gb, wb) = run();
    assert_eq!(a, b);
    assert!(ga.data().iter().zip(gb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(wa.data().iter().zip(wb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}
