use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsd_autograd::nn::Mode;
use rsd_autograd::{Graph, Tensor, TensorError};
use rsd_core::layers::Module;
use rsd_core::models::*;
use rsd_core::rsd::{rsd_loss, pearson_matrix, EmbeddingBatch, Layer};
use rsd_core::Error;

fn spec(family: Family) -> ModelSpec {
    ModelSpec::default_for(family, 3, 1, 16, 5)
}

fn input(spec: &ModelSpec, b: usize, seed: u64) -> Tensor {
    Tensor::randn(&spec.input_shape(b), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

/// Parameter count written out from the architecture description.
fn closed_form(s: &ModelSpec) -> usize {
    let d = s.embed_dim;
    let head = linear(d, s.num_classes);
    match s.family {
        Family::Cnn => {
            let mut c_in = s.in_channels;
            let mut total = head;
            for i in 0..s.depth {
                let c_out = if i + 1 == s.depth { d } else { s.width * (1 << i) };
                total += c_in * 9 * c_out + c_out;
                c_in = c_out;
            }
            total
        }
        Family::Transformer => {
            let block = 2 * d + 4 * linear(d, d) + 2 * d + linear(d, s.width) + linear(s.width, d);
            linear(s.patch_dim(), d) + s.num_patches() * d + s.depth * block + 2 * d + head
        }
        Family::Mixer => {
            let n = s.num_patches();
            let block = 2 * d + linear(n, s.width) + linear(s.width, n) + 2 * d + linear(d, s.width) + linear(s.width, d);
            linear(s.patch_dim(), d) + s.depth * block + 2 * d + head
        }
    }
}

#[test]
fn same_seed_gives_identical_parameters() {
    for f in Family::ALL {
        let a = Model::build(&spec(f)).unwrap();
        let b = Model::build(&spec(f)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let c = Model::build(&spec(f).with_seed(6)).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }
}

#[test]
fn cnn_on_mnist_geometry() {
    let mut s = ModelSpec::default_for(Family::Cnn, 10, 1, 28, 0);
    s.width = 8;
    let m = Model::build(&s).unwrap();
    let (logits, pen) = m.predict(&input(&s, 3, 1)).unwrap();
    assert_eq!(logits.shape(), &[3, 10]);
    assert_eq!(pen.shape(), &[3, 32]);
    assert_eq!(s.cnn_channels(), vec![8, 16, 32]);
}

#[test]
fn parameter_counts_match_closed_form() {
    for f in Family::ALL {
        for d in [DEFAULT_EMBED_DIM, NARROW_EMBED_DIM] {
            let s = spec(f).with_embed_dim(d);
            let m = Model::build(&s).unwrap();
            assert_eq!(m.param_count(), closed_form(&s), "{f} D={d}");
        }
    }
}

#[test]
fn zero_head_gives_zero_logits() {
    for f in Family::ALL {
        let s = spec(f);
        let mut m = Model::build(&s).unwrap();
        for p in m.head.params_mut() {
            let shape = p.value().shape().to_vec();
            *p.value_mut() = Tensor::zeros(&shape);
        }
        let (logits, _) = m.predict(&Tensor::zeros(&s.input_shape(2))).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn eval_forward_is_bit_deterministic() {
    for f in Family::ALL {
        let s = spec(f);
        let m = Model::build(&s).unwrap();
        let x = input(&s, 4, 2);
        let (a, pa) = m.predict(&x).unwrap();
        let (b, pb) = m.predict(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }
}

#[test]
fn logits_are_head_of_penultimate() {
    for f in Family::ALL {
        let s = spec(f);
        let m = Model::build(&s).unwrap();
        let (logits, pen) = m.predict(&input(&s, 5, 3)).unwrap();
        let w = m.head.weight.value();
        let b = m.head.bias.value();
        for i in 0..5 {
            for c in 0..3 {
                let expect: f64 = (0..s.embed_dim).map(|k| pen.at2(i, k) * w.at2(k, c)).sum::<f64>() + b.data()[c];
                assert!((logits.at2(i, c) - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let s = spec(Family::Transformer);
    let m = Model::build(&s).unwrap();
    let r = m.predict(&Tensor::zeros(&[2, 1, 12, 12]));
    assert!(matches!(r, Err(Error::Tensor(TensorError::Shape { .. }))));
}

#[test]
fn indivisible_patch_is_a_spec_error() {
    let mut s = spec(Family::Mixer);
    s.image_size = 18;
    assert!(matches!(Model::build(&s), Err(Error::Spec(_))));
    let mut s = spec(Family::Cnn);
    s.num_classes = 1;
    assert!(matches!(Model::build(&s), Err(Error::Spec(_))));
    assert!("resnet".parse::<Family>().is_err());
}

#[test]
fn frozen_teacher_is_untouched_by_distillation_step() {
    let ts = spec(Family::Transformer);
    let teacher = Model::build(&ts).unwrap().freeze();
    let before = teacher.checksum();
    let student = Model::build(&spec(Family::Cnn)).unwrap();
    let x = input(&ts, 6, 4);

    let g = Graph::new();
    let xv = g.constant(x.clone());
    let t = teacher.forward(&g, &xv).unwrap();
    let s = student.forward(&g, &xv, Mode::Train).unwrap();
    let p = pearson_matrix(
        &EmbeddingBatch::teacher(t.penultimate, Layer::Penultimate).unwrap(),
        &EmbeddingBatch::student(s.penultimate, Layer::Penultimate).unwrap(),
    )
    .unwrap();
    let loss = rsd_loss(&p, 0.1).unwrap().total;
    g.backward(loss).unwrap();

    let mut teacher_model = teacher.clone().into_inner();
    for p in teacher_model.params_mut() {
        assert!(!p.accumulate_grad(&g), "{} received a gradient", p.name());
        assert!(p.grad().is_none());
    }
    let mut student = student;
    assert!(student.params_mut().iter_mut().any(|p| p.accumulate_grad(&g)));
    assert_eq!(teacher.checksum(), before);

    let unfrozen = Model::build(&ts).unwrap();
    assert_eq!(teacher.predict(&x).unwrap(), unfrozen.predict(&x).unwrap());
}

fn census(f: Family) -> Vec<&'static str> {
    let s = spec(f);
    let m = Model::build(&s).unwrap();
    let g = Graph::new();
    m.forward(&g, &g.constant(input(&s, 2, 0)), Mode::Eval).unwrap();
    g.op_census()
}

#[test]
fn op_census_shows_family_heterogeneity() {
    let cnn = census(Family::Cnn);
    assert!(cnn.contains(&"conv2d"));
    for op in ["bmm", "softmax", "permute"] {
        assert!(!cnn.contains(&op), "cnn uses {op}");
    }
    let tr = census(Family::Transformer);
    assert!(tr.contains(&"bmm") && tr.contains(&"softmax"));
    assert!(!tr.contains(&"conv2d"));
    let mx = census(Family::Mixer);
    assert!(mx.contains(&"permute"));
    for op in ["conv2d", "bmm", "softmax"] {
        assert!(!mx.contains(&op), "mixer uses {op}");
    }
}

/// Reorders the patch grid so that new patch `i` is old patch `perm[i]`.
fn shuffle_patches(x: &Tensor, p: usize, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let gw = w / p;
    let mut out = x.clone();
    for bi in 0..b {
        for ci in 0..c {
            for (new, &old) in perm.iter().enumerate() {
                let (nr, nc) = (new / gw, new % gw);
                let (or, oc) = (old / gw, old % gw);
                for dy in 0..p {
                    for dx in 0..p {
                        let src = ((bi * c + ci) * h + or * p + dy) * w + oc * p + dx;
                        let dst = ((bi * c + ci) * h + nr * p + dy) * w + nc * p + dx;
                        out.data_mut()[dst] = x.data()[src];
                    }
                }
            }
        }
    }
    out
}

#[test]
fn transformer_without_positions_is_patch_permutation_invariant() {
    let s = spec(Family::Transformer);
    let mut m = Model::build(&s).unwrap();
    if let Body::Tokens(body) = &mut m.body {
        let pos = body.pos.as_mut().unwrap();
        let shape = pos.value().shape().to_vec();
        *pos.value_mut() = Tensor::zeros(&shape);
    }
    let x = input(&s, 3, 9);
    let mut perm: Vec<usize> = (0..s.num_patches()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let (_, a) = m.predict(&x).unwrap();
    let (_, b) = m.predict(&shuffle_patches(&x, s.patch_size, &perm)).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-9);
}

#[test]
fn mixer_with_permuted_token_weights_is_patch_permutation_invariant() {
    let s = spec(Family::Mixer);
    let m = Model::build(&s).unwrap();
    let n = s.num_patches();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let mut permuted = m.clone();
    if let Body::Tokens(TokenBody {
        blocks: Blocks::Mixer(blocks),
        ..
    }) = &mut permuted.body
    {
        for blk in blocks {
            let w1 = blk.token_mlp.fc1.weight.value().clone();
            let w2 = blk.token_mlp.fc2.weight.value().clone();
            let b2 = blk.token_mlp.fc2.bias.value().clone();
            let hidden = w1.shape()[1];
            let w1n = blk.token_mlp.fc1.weight.value_mut();
            for (i, &pi) in perm.iter().enumerate() {
                for k in 0..hidden {
                    w1n.data_mut()[i * hidden + k] = w1.at2(pi, k);
                }
            }
            let w2n = blk.token_mlp.fc2.weight.value_mut();
            for k in 0..hidden {
                for (i, &pi) in perm.iter().enumerate() {
                    w2n.data_mut()[k * n + i] = w2.at2(k, pi);
                }
            }
            let b2n = blk.token_mlp.fc2.bias.value_mut();
            for (i, &pi) in perm.iter().enumerate() {
                b2n.data_mut()[i] = b2.data()[pi];
            }
        }
    } else {
        panic!("mixer body expected");
    }
    let x = input(&s, 3, 10);
    let (_, a) = m.predict(&x).unwrap();
    let (_, b) = permuted.predict(&shuffle_patches(&x, s.patch_size, &perm)).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-9);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for f in Family::ALL {
        let s = spec(f).with_embed_dim(NARROW_EMBED_DIM);
        let m = Model::build(&s.clone().with_seed(11)).unwrap();
        let path = dir.path().join(format!("{f}.ckpt"));
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.spec(), m.spec());
        assert_eq!(back.checksum(), m.checksum());
    }
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let m = Model::build(&spec(Family::Cnn)).unwrap();
    let mut bytes = Vec::new();
    m.write_checkpoint(&mut bytes).unwrap();
    let path = std::path::Path::new("mem.ckpt");
    for cut in [2, 10, bytes.len() - 3] {
        let r = Model::read_checkpoint(&mut &bytes[..cut], path);
        assert!(matches!(r, Err(Error::Format { .. })), "cut {cut}: {r:?}");
    }
    let mut extra = bytes.clone();
    rsd_autograd::record::write_record(&mut extra, "bogus", &Tensor::zeros(&[1])).unwrap();
    assert!(matches!(Model::read_checkpoint(&mut &extra[..], path), Err(Error::Format { .. })));
}
