use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsd_autograd::gradcheck::GRAD_TOLERANCE;
use rsd_autograd::nn::Mode;
use rsd_autograd::{Graph, Tensor};
use rsd_core::layers::{Linear, Module};
use rsd_core::rsd::*;
use rsd_core::Error;

/// Pearson correlation by explicit summation.
fn pearson_oracle(zt: &Tensor, zs: &Tensor) -> Vec<Vec<f64>> {
    let (b, d) = (zt.shape()[0], zt.shape()[1]);
    let mean = |x: &Tensor, j: usize| (0..b).map(|i| x.at2(i, j)).sum::<f64>() / b as f64;
    let mut out = vec![vec![0.0; d]; d];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (mt, ms) = (mean(zt, i), mean(zs, j));
            let mut num = 0.0;
            let mut st = 0.0;
            let mut ss = 0.0;
            for k in 0..b {
                let a = zt.at2(k, i) - mt;
                let c = zs.at2(k, j) - ms;
                num += a * c;
                st += a * a;
                ss += c * c;
            }
            *cell = num / (st.sqrt() * ss.sqrt());
        }
    }
    out
}

fn loss_oracle(p: &[Vec<f64>], kappa: f64) -> f64 {
    let d = p.len();
    let mut acc = 0.0;
    for (i, row) in p.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            acc += if i == j { (v - 1.0).powi(2) } else { kappa * v * v };
        }
    }
    acc / (d * d) as f64
}

fn corr(zt: &Tensor, zs: &Tensor) -> Tensor {
    let g = Graph::new();
    let t = EmbeddingBatch::teacher(g.constant(zt.clone()), Layer::Penultimate).unwrap();
    let s = EmbeddingBatch::student(g.constant(zs.clone()), Layer::Penultimate).unwrap();
    pearson_matrix(&t, &s).unwrap().values()
}

fn matrix_var<'g>(g: &'g Graph, rows: &[Vec<f64>]) -> CorrelationMatrix<'g> {
    CorrelationMatrix {
        p: g.constant(Tensor::from_rows(rows)),
        batch_size: 8,
        degenerate_teacher: vec![],
        degenerate_student: vec![],
    }
}

#[test]
fn standardize_hand_column() {
    let g = Graph::new();
    let x = g.constant(Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]));
    let y = standardize_columns(&x).unwrap().value();
    let r = 1.0 / 2f64.sqrt();
    for (a, b) in y.data().iter().zip([-r, 0.0, r]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn standardize_constant_column_is_near_zero() {
    let g = Graph::new();
    let x = g.constant(Tensor::from_vec(&[3, 1], vec![5.0, 5.0, 5.0]));
    let y = standardize_columns(&x).unwrap().value();
    assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    assert_eq!(degenerate_columns(&x.value()), vec![0]);
}

#[test]
fn standardize_gives_unit_norm_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Graph::new();
    let x = g.constant(Tensor::randn(&[8, 3], &mut rng));
    let y = standardize_columns(&x).unwrap().value();
    for j in 0..3 {
        let norm: f64 = (0..8).map(|i| y.at2(i, j).powi(2)).sum::<f64>().sqrt();
        let mean: f64 = (0..8).map(|i| y.at2(i, j)).sum::<f64>() / 8.0;
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn standardize_rejects_single_row() {
    let g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3]));
    assert!(standardize_columns(&x).is_err());
}

#[test]
fn self_correlation_has_unit_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = Tensor::randn(&[10, 5], &mut rng);
    let p = corr(&z, &z);
    for i in 0..5 {
        assert!((p.at2(i, i) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn perfect_anticorrelation() {
    let zt = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]);
    let zs = Tensor::from_vec(&[3, 1], vec![-1.0, -2.0, -3.0]);
    assert!((corr(&zt, &zs).item() + 1.0).abs() < 1e-12);
}

#[test]
fn integer_batch_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut int = |n| Tensor::from_vec(&[4, 2], (0..n).map(|_| rng.gen_range(-5..=5) as f64).collect());
    let (zt, zs) = (int(8), int(8));
    let p = corr(&zt, &zs);
    let o = pearson_oracle(&zt, &zs);
    for i in 0..2 {
        for j in 0..2 {
            assert!((p.at2(i, j) - o[i][j]).abs() < 1e-12, "{i},{j}");
        }
    }
}

#[test]
fn dimension_mismatch_asks_to_adapt_student() {
    let g = Graph::new();
    let t = EmbeddingBatch::teacher(g.constant(Tensor::zeros(&[4, 6])), Layer::Penultimate).unwrap();
    let s = EmbeddingBatch::student(g.constant(Tensor::zeros(&[4, 3])), Layer::Penultimate).unwrap();
    match pearson_matrix(&t, &s) {
        Err(e @ Error::AdaptStudentFirst { teacher: 6, student: 3 }) => {
            let msg = e.to_string();
            assert!(msg.contains('6') && msg.contains('3') && msg.contains("adapt student first"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn embedding_batch_invariants() {
    let g = Graph::new();
    assert!(EmbeddingBatch::teacher(g.constant(Tensor::zeros(&[1, 3])), Layer::Logits).is_err());
    let mut bad = Tensor::zeros(&[3, 2]);
    bad.data_mut()[1] = f64::NAN;
    assert!(matches!(
        EmbeddingBatch::student(g.constant(bad), Layer::Logits),
        Err(Error::Numerical(_))
    ));
}

#[test]
fn loss_at_identity_is_zero() {
    let g = Graph::new();
    for kappa in [0.0, 5e-3, 1.0] {
        let l = rsd_loss(&matrix_var(&g, &[vec![1.0, 0.0], vec![0.0, 1.0]]), kappa).unwrap();
        assert_eq!(l.total.item(), 0.0);
    }
}

#[test]
fn loss_hand_arithmetic() {
    let g = Graph::new();
    let rows = [vec![1.0, 0.5], vec![0.5, 1.0]];
    let full = rsd_loss(&matrix_var(&g, &rows), 1.0).unwrap();
    assert!((full.total.item() - 0.125).abs() < 1e-15);
    let corr_only = rsd_loss(&matrix_var(&g, &rows), 0.0).unwrap();
    assert_eq!(corr_only.total.item(), 0.0);
}

#[test]
fn loss_split_matches_total() {
    let g = Graph::new();
    let rows = [vec![0.7, -0.2, 0.1], vec![0.3, 0.9, 0.0], vec![-0.5, 0.4, 0.2]];
    let l = rsd_loss(&matrix_var(&g, &rows), 0.3).unwrap();
    assert!((l.diag + l.offdiag - l.total.item()).abs() < 1e-15);
    assert!((l.total.item() - loss_oracle(&rows, 0.3)).abs() < 1e-15);
}

#[test]
fn target_matrix_is_identity() {
    let t = TargetMatrix { dim: 3 };
    assert_eq!(t.to_tensor(), Tensor::eye(3));
    assert_eq!(t.at(1, 1), 1.0);
    assert_eq!(t.at(0, 2), 0.0);
}

/// Gram-Schmidt on centered columns gives a batch whose self-correlation is exactly I.
fn orthogonal_batch(b: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for _ in 0..d {
        let mut v: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = v.iter().sum::<f64>() / b as f64;
        v.iter_mut().for_each(|x| *x -= m);
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        cols.push(v);
    }
    let mut t = Tensor::zeros(&[b, d]);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            t.data_mut()[i * d + j] = x;
        }
    }
    t
}

#[test]
fn orthogonal_self_batch_has_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let z = orthogonal_batch(12, 5, &mut rng);
    let g = Graph::new();
    let t = EmbeddingBatch::teacher(g.constant(z.clone()), Layer::Penultimate).unwrap();
    let s = EmbeddingBatch::student(g.constant(z), Layer::Penultimate).unwrap();
    let l = rsd_loss(&pearson_matrix(&t, &s).unwrap(), DEFAULT_KAPPA).unwrap();
    assert!(l.total.item() < 1e-18, "{}", l.total.item());
}

#[test]
fn correlated_batch_has_positive_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut z = Tensor::randn(&[10, 3], &mut rng);
    for i in 0..10 {
        z.data_mut()[i * 3 + 1] = z.at2(i, 0) + 0.1 * z.at2(i, 1);
    }
    let g = Graph::new();
    let l = rsd_on_logits(&g.constant(z.clone()), &g.constant(z), 0.5).unwrap();
    assert!(l.total.item() > 1e-3);
}

#[test]
fn logits_self_distillation_leaves_only_offdiag() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let z = Tensor::randn(&[6, 4], &mut rng);
    let kappa = 0.2;
    let g = Graph::new();
    let l = rsd_on_logits(&g.constant(z.clone()), &g.constant(z.clone()), kappa).unwrap();
    assert!(l.diag < 1e-20);
    let o = pearson_oracle(&z, &z);
    let mut off = 0.0;
    for (i, row) in o.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                off += v * v;
            }
        }
    }
    assert!((l.total.item() - kappa * off / 16.0).abs() < 1e-12);
}

#[test]
fn logits_affine_student_with_zero_kappa_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let zt = Tensor::randn(&[7, 3], &mut rng);
    let mut zs = zt.clone();
    for i in 0..7 {
        for j in 0..3 {
            zs.data_mut()[i * 3 + j] = (j as f64 + 0.5) * zt.at2(i, j) - 2.0 * j as f64;
        }
    }
    let g = Graph::new();
    let l = rsd_on_logits(&g.constant(zt), &g.constant(zs), 0.0).unwrap();
    assert!(l.total.item() < 1e-9);
}

#[test]
fn logits_random_batch_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let zt = Tensor::randn(&[4, 3], &mut rng);
    let zs = Tensor::randn(&[4, 3], &mut rng);
    let g = Graph::new();
    let l = rsd_on_logits(&g.constant(zt.clone()), &g.constant(zs.clone()), DEFAULT_KAPPA).unwrap();
    let expect = loss_oracle(&pearson_oracle(&zt, &zs), DEFAULT_KAPPA);
    assert!((l.total.item() - expect).abs() < 1e-12);
}

#[test]
fn logits_class_mismatch_is_shape_error() {
    let g = Graph::new();
    let r = rsd_on_logits(&g.constant(Tensor::zeros(&[4, 3])), &g.constant(Tensor::zeros(&[4, 5])), 0.1);
    assert!(matches!(r, Err(Error::Tensor(rsd_autograd::TensorError::Shape { .. }))));
}

#[test]
fn aad_zero_weights_give_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = AadModule::new(4, 3, 2.0, &mut rng).unwrap();
    for p in m.params_mut() {
        let shape = p.value().shape().to_vec();
        *p.value_mut() = Tensor::zeros(&shape);
    }
    let g = Graph::new();
    let x = g.constant(Tensor::randn(&[5, 4], &mut rng));
    let y = m.forward(&g, &x, Mode::Train).unwrap();
    assert_eq!(y.shape(), vec![5, 3]);
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn aad_identity_maps_give_gelu_of_standardized_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = AadModule::new(4, 4, 1.0, &mut rng).unwrap();
    m.expander = Linear::identity("e", 4);
    m.adaptor = Linear::identity("a", 4);
    let x = Tensor::randn(&[6, 4], &mut rng);
    let g = Graph::new();
    let y = m.forward(&g, &g.constant(x.clone()), Mode::Train).unwrap().value();
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());
    for j in 0..4 {
        let mean = (0..6).map(|i| x.at2(i, j)).sum::<f64>() / 6.0;
        let var = (0..6).map(|i| (x.at2(i, j) - mean).powi(2)).sum::<f64>() / 6.0;
        for i in 0..6 {
            let expect = gelu((x.at2(i, j) - mean) / (var + 1e-5).sqrt());
            assert!((y.at2(i, j) - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn aad_shape_and_param_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = AadModule::new(8, 12, 4.0, &mut rng).unwrap();
    assert_eq!(m.d_e(), 32);
    let g = Graph::new();
    let y = m.forward(&g, &g.constant(Tensor::randn(&[4, 8], &mut rng)), Mode::Train).unwrap();
    assert_eq!(y.shape(), vec![4, 12]);
    assert_eq!(m.param_count(), 8 * 32 + 32 + 2 * 32 + 32 * 12 + 12);
}

#[test]
fn aad_rejects_single_row_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = AadModule::new(3, 3, 2.0, &mut rng).unwrap();
    let g = Graph::new();
    let r = m.forward(&g, &g.constant(Tensor::zeros(&[1, 3])), Mode::Train);
    assert!(matches!(
        r,
        Err(Error::Tensor(rsd_autograd::TensorError::BatchTooSmall { .. }))
    ));
    assert!(m.forward(&g, &g.constant(Tensor::zeros(&[1, 3])), Mode::Eval).is_ok());
    assert!(m.forward(&g, &g.constant(Tensor::zeros(&[4, 5])), Mode::Train).is_err());
}

#[test]
fn expansion_rounds() {
    assert_eq!(expanded_dim(10, 1.5), 15);
    assert_eq!(expanded_dim(3, 0.5), 2);
    assert_eq!(expanded_dim(1, 0.1), 1);
}

#[test]
fn ce_of_uniform_logits_is_log_classes() {
    let g = Graph::new();
    let l = ce_loss(&g.constant(Tensor::zeros(&[3, 7])), &[0, 3, 6]).unwrap();
    assert!((l.item() - 7f64.ln()).abs() < 1e-12);
}

#[test]
fn ce_rejects_out_of_range_label() {
    let g = Graph::new();
    let r = ce_loss(&g.constant(Tensor::zeros(&[2, 3])), &[0, 3]);
    assert!(matches!(r, Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
}

#[test]
fn kd_of_equal_logits_is_zero_and_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let zt = Tensor::randn(&[3, 4], &mut rng);
    let zs = Tensor::randn(&[3, 4], &mut rng);
    let g = Graph::new();
    let same = kd_kld_loss(&g.constant(zt.clone()), &g.constant(zt.clone()), 4.0).unwrap();
    assert!(same.item().abs() < 1e-15);

    let tau = 2.0;
    let softmax = |row: &[f64]| {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| ((v - m) / tau).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let mut expect = 0.0;
    for i in 0..3 {
        let pt = softmax(&zt.data()[i * 4..i * 4 + 4]);
        let ps = softmax(&zs.data()[i * 4..i * 4 + 4]);
        expect += pt.iter().zip(&ps).map(|(p, q)| p * (p / q).ln()).sum::<f64>();
    }
    expect *= tau * tau / 3.0;
    let got = kd_kld_loss(&g.constant(zs), &g.constant(zt), tau).unwrap();
    assert!((got.item() - expect).abs() < 1e-12);
}

#[test]
fn feature_mse_identity_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let f = Tensor::randn(&[4, 5], &mut rng);
    let g = Graph::new();
    let psi = Linear::identity("psi", 5);
    let l = feature_mse_loss(&g.constant(f.clone()), &g.constant(f), &psi).unwrap();
    assert_eq!(l.item(), 0.0);
}

#[test]
fn zero_lambda_is_plain_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let logits = Tensor::randn(&[5, 3], &mut rng);
    let labels = [0, 1, 2, 0, 1];
    let cfg = RsdConfig {
        lambda: 0.0,
        ..RsdConfig::default()
    };
    let g = Graph::new();
    let lv = g.leaf(logits.clone());
    let zt = g.constant(Tensor::randn(&[5, 4], &mut rng));
    let zs = g.leaf(Tensor::randn(&[5, 2], &mut rng));
    let mut aad = AadModule::new(2, 4, 4.0, &mut rng).unwrap();
    let (total, br) = full_objective(&lv, &labels, &zt, &zs, Some(&mut aad), &cfg, Mode::Train).unwrap();
    g.backward(total).unwrap();

    let h = Graph::new();
    let lv2 = h.leaf(logits);
    let ce = ce_loss(&lv2, &labels).unwrap();
    h.backward(ce).unwrap();
    assert_eq!(total.item().to_bits(), ce.item().to_bits());
    assert_eq!(g.grad(lv).unwrap(), h.grad(lv2).unwrap());
    assert_eq!(br.rsd_diag, 0.0);
    assert!(g.grad(zs).is_none());
}

#[test]
fn perfect_prediction_and_identity_correlation_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let z = orthogonal_batch(9, 3, &mut rng);
    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let mut logits = Tensor::zeros(&[9, 3]);
    for (i, &y) in labels.iter().enumerate() {
        logits.data_mut()[i * 3 + y] = 60.0;
    }
    let g = Graph::new();
    let (total, _) = full_objective(
        &g.constant(logits),
        &labels,
        &g.constant(z.clone()),
        &g.constant(z),
        None,
        &RsdConfig::default(),
        Mode::Train,
    )
    .unwrap();
    assert!(total.item() < 1e-20, "{}", total.item());
}

#[test]
fn objective_recomposes_from_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let logits = Tensor::randn(&[8, 4], &mut rng);
    let labels = [0, 1, 2, 3, 3, 2, 1, 0];
    let zt = Tensor::randn(&[8, 6], &mut rng);
    let zs_raw = Tensor::randn(&[8, 3], &mut rng);
    let aad = AadModule::new(3, 6, 4.0, &mut rng).unwrap();
    let cfg = RsdConfig {
        lambda: 1.7,
        kappa: 0.05,
        ..RsdConfig::default()
    };
    let g = Graph::new();
    let mut m1 = aad.clone();
    let (total, br) = full_objective(
        &g.constant(logits.clone()),
        &labels,
        &g.constant(zt.clone()),
        &g.constant(zs_raw.clone()),
        Some(&mut m1),
        &cfg,
        Mode::Train,
    )
    .unwrap();

    let mut m2 = aad.clone();
    let h = Graph::new();
    let zs = m2.forward(&h, &h.constant(zs_raw), Mode::Train).unwrap().value();
    let ce_expect: f64 = (0..8)
        .map(|i| {
            let row = &logits.data()[i * 4..i * 4 + 4];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - row[labels[i]]
        })
        .sum::<f64>()
        / 8.0;
    let rsd_expect = loss_oracle(&pearson_oracle(&zt, &zs), cfg.kappa);
    assert!((br.ce - ce_expect).abs() < 1e-12);
    assert!((total.item() - (ce_expect + cfg.lambda * rsd_expect)).abs() < 1e-12);
    assert!((br.total - br.ce - cfg.lambda * (br.rsd_diag + br.rsd_offdiag)).abs() < 1e-12);
}

#[test]
fn objective_without_decoupler_needs_matching_width() {
    let g = Graph::new();
    let r = full_objective(
        &g.constant(Tensor::zeros(&[4, 2])),
        &[0, 1, 0, 1],
        &g.constant(Tensor::randn(&[4, 5], &mut ChaCha8Rng::seed_from_u64(0))),
        &g.constant(Tensor::randn(&[4, 3], &mut ChaCha8Rng::seed_from_u64(1))),
        None,
        &RsdConfig::default(),
        Mode::Train,
    );
    assert!(matches!(r, Err(Error::AdaptStudentFirst { teacher: 5, student: 3 })));
}

#[test]
fn objective_gradient_matches_finite_differences() {
    for (seed, kappa) in [(1, DEFAULT_KAPPA), (2, 0.0), (3, 1.0)] {
        let r = objective_gradcheck(seed, kappa, DEFAULT_LAMBDA).unwrap();
        assert!(r.passed(GRAD_TOLERANCE), "{r:?}");
    }
}

#[test]
fn one_step_reduces_offdiagonal_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut z = Tensor::randn(&[16, 4], &mut rng);
    for i in 0..16 {
        z.data_mut()[i * 4 + 1] += 0.8 * z.at2(i, 0);
        z.data_mut()[i * 4 + 3] -= 0.5 * z.at2(i, 2);
    }
    let off_mass = |p: &Tensor| {
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    s += p.at2(i, j).powi(2);
                }
            }
        }
        s
    };
    let g = Graph::new();
    let zt = g.constant(z.clone());
    let zs = g.leaf(z.clone());
    let l = rsd_on_logits(&zt, &zs, 1.0).unwrap();
    g.backward(l.total).unwrap();
    let before = off_mass(&corr(&z, &z));
    let grad = g.grad(zs).unwrap();
    let stepped = z.zip_map(&grad, |a, b| a - 1e-3 * b);
    let after = off_mass(&corr(&z, &stepped));
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn config_validation() {
    assert!(RsdConfig::default().validate().is_ok());
    for bad in [
        RsdConfig {
            lambda: -1.0,
            ..RsdConfig::default()
        },
        RsdConfig {
            kappa: f64::NAN,
            ..RsdConfig::default()
        },
        RsdConfig {
            temperature: 0.0,
            ..RsdConfig::default()
        },
        RsdConfig {
            expansion_factor: 0.0,
            ..RsdConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn breakdown_serializes_expected_keys() {
    let br = LossBreakdown {
        ce: 1.0,
        rsd_diag: 0.5,
        rsd_offdiag: 0.25,
        total: 2.5,
        baseline: None,
    };
    let v: serde_json::Value = serde_json::to_value(br).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 4);
    for k in ["ce", "rsd_diag", "rsd_offdiag", "total"] {
        assert!(keys.contains(&k));
    }
}

fn batch(b: usize, d: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, b * d).prop_map(move |v| Tensor::from_vec(&[b, d], v))
}

fn well_conditioned(t: &Tensor) -> bool {
    degenerate_columns(t).is_empty()
        && (0..t.shape()[1]).all(|j| {
            let col: Vec<f64> = (0..t.shape()[0]).map(|i| t.at2(i, j)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            col.iter().map(|x| (x - m).powi(2)).sum::<f64>() > 1e-3
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlations_are_bounded(zt in batch(6, 3), zs in batch(6, 3)) {
        let p = corr(&zt, &zs);
        prop_assert!(p.data().iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn matches_oracle(zt in batch(5, 3), zs in batch(5, 3)) {
        prop_assume!(well_conditioned(&zt) && well_conditioned(&zs));
        let p = corr(&zt, &zs);
        let o = pearson_oracle(&zt, &zs);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((p.at2(i, j) - o[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn affine_invariance(
        zt in batch(6, 3),
        zs in batch(6, 3),
        a in prop::collection::vec(0.1f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        c in prop::collection::vec(0.1f64..5.0, 3),
        d in prop::collection::vec(-5.0f64..5.0, 3),
        flip in 0usize..3,
    ) {
        prop_assume!(well_conditioned(&zt) && well_conditioned(&zs));
        let base = corr(&zt, &zs);
        let map = |x: &Tensor, s: &[f64], o: &[f64]| {
            let mut y = x.clone();
            for i in 0..6 {
                for j in 0..3 {
                    y.data_mut()[i * 3 + j] = s[j] * x.at2(i, j) + o[j];
                }
            }
            y
        };
        let moved = corr(&map(&zt, &a, &b), &map(&zs, &c, &d));
        prop_assert!(base.max_abs_diff(&moved) < 1e-9);

        let mut flipped = zt.clone();
        for i in 0..6 {
            flipped.data_mut()[i * 3 + flip] = -zt.at2(i, flip);
        }
        let pf = corr(&flipped, &zs);
        for i in 0..3 {
            for j in 0..3 {
                let sign = if i == flip { -1.0 } else { 1.0 };
                prop_assert_eq!(pf.at2(i, j), sign * base.at2(i, j));
            }
        }
    }

    #[test]
    fn batch_permutation_invariance(zt in batch(7, 3), zs in batch(7, 3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..7).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = corr(&zt, &zs);
        let q = corr(&zt.select_rows(&idx), &zs.select_rows(&idx));
        prop_assert!(p.max_abs_diff(&q) <= 1e-12);
    }

    #[test]
    fn loss_decomposition(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 4), kappa in 0.0f64..1.0) {
        let g = Graph::new();
        let p = matrix_var(&g, &rows);
        let l = rsd_loss(&p, kappa).unwrap().total.item();
        let diag: f64 = (0..4).map(|i| (rows[i][i] - 1.0).powi(2)).sum::<f64>() / 16.0;
        let full: f64 = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| (rows[i][j] - if i == j { 1.0 } else { 0.0 }).powi(2))
            .sum::<f64>() / 16.0;
        prop_assert!((l - ((1.0 - kappa) * diag + kappa * full)).abs() < 1e-12);
        let at_one = rsd_loss(&p, 1.0).unwrap().total.item();
        prop_assert!((at_one - full).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_only_at_identity(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 3), kappa in 1e-3f64..1.0) {
        let is_identity = (0..3).all(|i| (0..3).all(|j| rows[i][j] == if i == j { 1.0 } else { 0.0 }));
        prop_assume!(!is_identity);
        let g = Graph::new();
        prop_assert!(rsd_loss(&matrix_var(&g, &rows), kappa).unwrap().total.item() > 0.0);
    }
}
