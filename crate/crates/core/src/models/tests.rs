use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::error::Error;
use crate::imaging::Standardizer;

fn input(shape: [usize; 3], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random::<f64>())
}

#[test]
fn output_shapes_follow_the_head() {
    for arch in Arch::NETWORKS {
        for (head, size) in [(Head::Classify4, 64), (Head::RegressPosForce, 32)] {
            let spec = ModelSpec::new(arch, head).unwrap();
            let net = Network::<f64>::build(&spec, [3, size, size]).unwrap();
            let mut batch = input([3, size, size], 1).into_data();
            batch.extend(input([3, size, size], 2).into_data());
            let out = net.predict_batch(&Tensor::new(vec![2, 3, size, size], batch).unwrap()).unwrap();
            assert_eq!(out.shape(), &[2, head.outputs()], "{arch}");
        }
    }
}

#[test]
fn cnn3_classifies_a_single_image() {
    let spec = ModelSpec::new(Arch::Cnn3, Head::Classify4).unwrap();
    let net = Network::<f64>::build(&spec, [3, 64, 64]).unwrap();
    match net.predict(&input([3, 64, 64], 0)).unwrap() {
        Prediction::Class { class, logits } => {
            assert_eq!(logits.len(), 4);
            assert_eq!(class, argmax(&logits));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(net.predict(&input([3, 32, 64], 0)), Err(Error::Shape { .. })));
}

#[test]
fn classical_learners_reject_regression() {
    for arch in [Arch::SvmPoly, Arch::SvmRbf, Arch::Knn] {
        assert!(matches!(ModelSpec::new(arch, Head::RegressPosForce), Err(Error::InvalidArgument(_))));
    }
    let svm = ModelSpec::new(Arch::SvmRbf, Head::Classify4).unwrap();
    assert!(Network::<f64>::build(&svm, [3, 64, 64]).is_err());
    assert!(ModelSpec::new(Arch::Knn, Head::Classify4).unwrap().with("k", 4.0).validate().is_err());
}

#[test]
fn initialization_is_seeded() {
    let spec = ModelSpec::new(Arch::MicroInception, Head::Classify4).unwrap();
    let a = Network::<f64>::build(&spec, [3, 32, 32]).unwrap();
    let b = Network::<f64>::build(&spec, [3, 32, 32]).unwrap();
    let bits = |n: &Network<f64>| -> Vec<u64> {
        n.params().iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    let c = Network::<f64>::build(&spec.clone().with("seed", 1.0), [3, 32, 32]).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn he_initialization_scale() {
    let spec = ModelSpec::new(Arch::Cnn5, Head::Classify4).unwrap();
    let net = Network::<f64>::build(&spec, [3, 64, 64]).unwrap();
    let w = net.param("conv3.w").unwrap();
    let fan_in = (w.shape()[1] * 9) as f64;
    let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var * fan_in / 2.0 - 1.0).abs() < 0.15, "{var}");
    assert!(net.param("conv3.b").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_residual_branch_is_identity() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(input([16, 8, 8], 3).reshape(vec![1, 16, 8, 8]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w1 = g.param(Tensor::from_fn(vec![16, 16, 3, 3], |_| rng.random::<f64>() - 0.5));
    let b1 = g.param(Tensor::from_fn(vec![16], |_| rng.random::<f64>()));
    let w2 = g.param(Tensor::zeros(vec![16, 16, 3, 3]));
    let b2 = g.param(Tensor::zeros(vec![16]));
    let y = residual_block(&mut g, x, [w1, b1, w2, b2]).unwrap();
    let diff = g.value(x).data().iter().zip(g.value(y).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12);
}

#[test]
fn branch_energies_track_each_inception_branch() {
    let spec = ModelSpec::new(Arch::MicroInception, Head::Classify4).unwrap();
    let mut net = Network::<f64>::build(&spec, [3, 32, 32]).unwrap();
    let img = input([3, 32, 32], 4);
    let before = net.branch_energies(&img).unwrap();
    assert_eq!(before.len(), 2);
    assert!(before.iter().flatten().all(|&e| e.is_finite() && e >= 0.0));
    // silencing every branch but 5x5 in the first block leaves only its energy
    for p in net.params_mut() {
        if ["inc0.b1.", "inc0.b3.", "inc0.bp."].iter().any(|b| p.name.starts_with(b)) {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let after = net.branch_energies(&img).unwrap();
    assert_eq!([after[0][0], after[0][1], after[0][3]], [0.0; 3]);
    assert_eq!(after[0][2], before[0][2]);
    let cnn = Network::<f64>::build(&ModelSpec::new(Arch::Cnn3, Head::Classify4).unwrap(), [3, 32, 32]).unwrap();
    assert!(matches!(cnn.branch_energies(&img), Err(Error::InvalidArgument(_))));
}

#[test]
fn zeroed_resnet_computes_its_skip_path() {
    let spec = ModelSpec::new(Arch::MicroResNet, Head::Classify4).unwrap();
    let mut net = Network::<f64>::build(&spec, [3, 32, 32]).unwrap();
    for p in net.params_mut() {
        if p.name.contains(".conv2.") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let img = input([3, 32, 32], 9);
    let full = net.predict_batch(&img.clone().reshape(vec![1, 3, 32, 32]).unwrap()).unwrap();

    let mut g = Graph::<f64>::new();
    let mut h = g.constant(img.reshape(vec![1, 3, 32, 32]).unwrap());
    for stage in ["conv1", "conv2"] {
        let w = g.constant(net.param(&format!("{stage}.w")).unwrap().clone());
        let b = g.constant(net.param(&format!("{stage}.b")).unwrap().clone());
        h = g.conv2d(h, w, 1, 1).unwrap();
        h = g.channel_bias(h, b).unwrap();
        h = g.relu(h).unwrap();
        h = g.maxpool2d(h, 2, 2, 0).unwrap();
    }
    let h = g.global_avg_pool(h).unwrap();
    let w = g.constant(net.param("fc.w").unwrap().clone());
    let b = g.constant(net.param("fc.b").unwrap().clone());
    let skip = g.dense(h, w, b).unwrap();
    for (a, b) in full.data().iter().zip(g.value(skip).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn regression_outputs_map_to_the_label_box() {
    assert_eq!(denormalize(0.0, 0.0), (10.0, 0.0));
    assert_eq!(denormalize(1.0, 1.0), (50.0, 25.0));
    assert_eq!(denormalize(-0.3, 1.7), (10.0, 25.0));
    assert_eq!(normalize(30.0, 12.5), (0.5, 0.5));
    assert_eq!(argmax(&[0.1, 2.0, -1.0, 0.0]), 1);
    assert_eq!(argmax(&[1.0, 1.0]), 0);
}

#[test]
fn symmetric_pair_splits_at_zero() {
    let x = vec![vec![-1.0], vec![1.0]];
    let y = [-1.0, 1.0];
    let kernel = Kernel::Poly { gamma: 1.0, degree: 1, coef0: 0.0 };
    let (svm, sol) = BinarySvm::train(&x, &y, kernel, 10.0, 1e-3, 1000).unwrap();
    assert!(sol.converged);
    assert!(svm.decision(&[0.0]).unwrap().abs() < 1e-9);
    assert_eq!(svm.predict(&[-1.0]).unwrap(), -1.0);
    assert_eq!(svm.predict(&[1.0]).unwrap(), 1.0);
    assert!(svm.predict(&[0.2]).unwrap() > 0.0);
    for sv in &svm.support {
        assert_eq!(svm.predict(sv).unwrap(), if sv[0] > 0.0 { 1.0 } else { -1.0 });
    }
}

fn xor() -> (Vec<Vec<f64>>, Vec<f64>) {
    (vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]], vec![-1.0, -1.0, 1.0, 1.0])
}

#[test]
fn rbf_separates_xor() {
    let (x, y) = xor();
    let kernel = Kernel::Rbf { gamma: 1.0 };
    let (svm, sol) = BinarySvm::train(&x, &y, kernel, 10.0, 1e-3, 10_000).unwrap();
    for (xi, &yi) in x.iter().zip(&y) {
        assert_eq!(svm.predict(xi).unwrap(), yi);
    }
    let gram = kernel.gram(&x);
    assert!(sol.kkt_violation(&gram, &y, 10.0) <= 1e-3);
    assert!((sol.dual_from_scratch(&gram, &y) - sol.dual_objective).abs() < 1e-6);
    assert!(dual_is_monotone(&sol.dual_history));
    assert!(sol.alpha.iter().all(|&a| (0.0..=10.0).contains(&a)));
}

#[test]
fn single_class_is_degenerate() {
    let x = vec![vec![0.0], vec![1.0]];
    let k = Kernel::Rbf { gamma: 1.0 };
    assert!(matches!(BinarySvm::train(&x, &[1.0, 1.0], k, 1.0, 1e-3, 10), Err(Error::DegenerateData(_))));
    assert!(matches!(SvmModel::train(&x, &[2, 2], k, 1.0, 1e-3), Err(Error::DegenerateData(_))));
}

fn blobs(n_per_class: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n_per_class * classes {
        let c = i % classes;
        x.push(centers[c].iter().map(|m| m + spread * (rng.random::<f64>() - 0.5)).collect());
        y.push(c);
    }
    (x, y)
}

#[test]
fn multiclass_svm_fits_separated_blobs() {
    let (x, y) = blobs(20, 4, 5, 1.0, 4);
    for kernel in [Kernel::Rbf { gamma: 0.5 }, Kernel::Poly { gamma: 0.2, degree: 3, coef0: 1.0 }] {
        let (model, report) = SvmModel::train(&x, &y, kernel, 10.0, 1e-3).unwrap();
        assert!(report.all_converged && report.dual_monotone);
        assert!(report.max_kkt_violation <= 1e-3);
        assert_eq!(model.pairs.len(), 6);
        let correct = x.iter().zip(&y).filter(|(xi, &yi)| model.predict(xi).unwrap() == yi).count();
        assert_eq!(correct, x.len());
        assert!(model.predict(&[0.0; 4]).is_err());
    }
}

#[test]
fn ovo_majority_and_ties() {
    // class 0 beats everyone, 1 beats 2 and 3, 2 beats 3: wins (3, 2, 1, 0)
    let d = [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)];
    assert_eq!(ovo_vote(4, &d), 0);
    // 3-class cycle: one vote each, margins decide
    let cycle = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, -1.0)];
    assert_eq!(ovo_vote(3, &cycle), 0);
    let perturbed = [(0, 1, 1.0), (1, 2, 1.5), (0, 2, -1.0)];
    assert_eq!(ovo_vote(3, &perturbed), 1);
}

#[test]
fn knn_basics() {
    let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![10.0], vec![11.0]];
    let y = vec![0, 0, 0, 1, 2, 3];
    let one = KnnModel::new(1, x.clone(), y.clone()).unwrap();
    assert_eq!(one.classify(&[3.0]).unwrap(), 1);
    assert_eq!(one.classify(&[10.0]).unwrap(), 2);
    let x6 = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0], vec![6.0], vec![7.0], vec![8.0]];
    let all = KnnModel::new(7, x6, vec![0, 0, 0, 1, 2, 3, 0]).unwrap();
    assert_eq!(all.classify(&[7.0]).unwrap(), 0);
    // distance tie between indices 0 and 1 at 0.5: lower index wins
    let tie = KnnModel::new(1, vec![vec![0.0], vec![1.0]], vec![1, 0]).unwrap();
    assert_eq!(tie.classify(&[0.5]).unwrap(), 1);
    // vote tie among k=3 with three classes: smallest class
    let vt = KnnModel::new(3, vec![vec![0.0], vec![1.0], vec![-1.0]], vec![2, 1, 3]).unwrap();
    assert_eq!(vt.classify(&[0.0]).unwrap(), 1);
    assert!(KnnModel::new(2, x.clone(), y.clone()).is_err());
    assert!(KnnModel::new(7, x, y).is_err());
}

fn brute_force(x: &[Vec<f64>], y: &[usize], k: usize, q: &[f64]) -> usize {
    let mut order: Vec<(f64, usize)> =
        x.iter().enumerate().map(|(i, xi)| (xi.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(), i)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = [0usize; 4];
    for &(_, i) in &order[..k] {
        votes[y[i]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == top).unwrap()
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // a coarse lattice produces many exact distance ties
    let x: Vec<Vec<f64>> = (0..150).map(|_| (0..3).map(|_| rng.random_range(0..4) as f64).collect()).collect();
    let y: Vec<usize> = (0..150).map(|_| rng.random_range(0..4)).collect();
    for k in [1, 3, 5, 7] {
        let model = KnnModel::new(k, x.clone(), y.clone()).unwrap();
        for _ in 0..200 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(0..8) as f64 / 2.0).collect();
            assert_eq!(model.classify(&q).unwrap(), brute_force(&x, &y, k, &q));
        }
    }
}

#[test]
fn network_checkpoint_round_trips() {
    let spec = ModelSpec::new(Arch::MicroInception, Head::RegressPosForce).unwrap().with("seed", 3.0);
    let norm = InputNorm { mean: vec![0.5, 0.25, 0.1], std: vec![0.2, 1.0 / 3.0, 0.05] };
    let net = Network::<f64>::build(&spec, [3, 16, 24]).unwrap().with_input_norm(norm).unwrap();
    let mut ck = Checkpoint::new(spec, Learner::Network(net));
    ck.info.insert("best_epoch".into(), "4".into());
    let bytes = ck.to_bytes();
    assert!(bytes.starts_with(b"FTCKPT1\narch=micro_inception\nhead=regress_pos_force\n"));
    let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);
    let single = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(single.spec, ck.spec);
}

#[test]
fn input_norm_matches_manual_standardization() {
    let spec = ModelSpec::new(Arch::Cnn3, Head::Classify4).unwrap();
    let norm = InputNorm { mean: vec![0.4, 0.5, 0.6], std: vec![0.1, 0.2, 0.4] };
    let plain = Network::<f64>::build(&spec, [3, 8, 8]).unwrap();
    let normed = plain.clone().with_input_norm(norm.clone()).unwrap();
    let x = Tensor::from_fn(vec![1, 3, 8, 8], |i| (i as f64 * 0.37).sin() * 0.5 + 0.5);
    let manual = Tensor::from_fn(vec![1, 3, 8, 8], |i| (x.data()[i] - norm.mean[i / 64]) / norm.std[i / 64]);
    let a = normed.predict_batch(&x).unwrap();
    let b = plain.predict_batch(&manual).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-12);
    }
    assert!(plain.clone().with_input_norm(InputNorm { mean: vec![0.0; 3], std: vec![0.0; 3] }).is_err());
}

#[test]
fn classical_checkpoints_round_trip() {
    let (x, y) = blobs(6, 4, 3, 1.0, 2);
    let features = FeatureStage { size: (4, 4), standardizer: Standardizer::fit(&x).unwrap() };
    let (svm, _) = SvmModel::train(&x, &y, Kernel::Poly { gamma: 0.3, degree: 3, coef0: 1.0 }, 10.0, 1e-3).unwrap();
    let spec = ModelSpec::new(Arch::SvmPoly, Head::Classify4).unwrap().with("gamma", 0.3);
    let ck = Checkpoint::<f64>::new(spec, Learner::Svm { features: features.clone(), model: svm });
    assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    let knn = KnnModel::new(3, x, y).unwrap();
    let spec = ModelSpec::new(Arch::Knn, Head::Classify4).unwrap().with("k", 3.0);
    let ck = Checkpoint::<f64>::new(spec, Learner::Knn { features, model: knn });
    assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let spec = ModelSpec::new(Arch::Cnn3, Head::Classify4).unwrap();
    let bytes =
        Checkpoint::new(spec.clone(), Learner::Network(Network::<f64>::build(&spec, [3, 8, 8]).unwrap())).to_bytes();
    let mut v2 = bytes.clone();
    v2[6] = b'2';
    assert!(matches!(Checkpoint::<f64>::from_bytes(&v2), Err(Error::UnsupportedVersion { .. })));
    assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::<f64>::from_bytes(b"hello").is_err());
}

proptest! {
    #[test]
    fn rbf_self_similarity_is_one(x in prop::collection::vec(-1e3..1e3f64, 1..20), gamma in 1e-4..10.0f64) {
        prop_assert_eq!(Kernel::Rbf { gamma }.eval(&x, &x), 1.0);
    }

    #[test]
    fn smo_meets_kkt_and_tracks_dual(seed in any::<u64>(), c in 0.1..20.0f64, gamma in 0.05..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|v| if v[0] * v[1] + 0.3 * v[2] > 0.0 { 1.0 } else { -1.0 }).collect();
        prop_assume!(y.contains(&1.0) && y.contains(&-1.0));
        let kernel = Kernel::Rbf { gamma };
        let gram = kernel.gram(&x);
        let sol = smo_solve(&gram, &y, c, 1e-3, 100_000).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.kkt_violation(&gram, &y, c) <= 1e-3);
        prop_assert!((sol.dual_from_scratch(&gram, &y) - sol.dual_objective).abs() < 1e-6);
        prop_assert!(dual_is_monotone(&sol.dual_history));
        prop_assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
    }

    #[test]
    fn knn_neighbors_are_sorted_and_minimal(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(0..3) as f64, rng.random::<f64>()]).collect();
        let model = KnnModel::new(k, x.clone(), vec![0; 20]).unwrap();
        let q = [1.0, 0.5];
        let nn = model.neighbors(&q).unwrap();
        let d = |i: usize| (x[i][0] - q[0]).powi(2) + (x[i][1] - q[1]).powi(2);
        prop_assert_eq!(nn.len(), k);
        let worst = d(*nn.last().unwrap());
        for i in 0..20 {
            if !nn.contains(&i) {
                prop_assert!(d(i) >= worst);
            }
        }
    }
}

#[test]
fn arch_names_agree_across_parsing_and_serde() {
    for arch in Arch::ALL {
        assert_eq!(serde_json::to_string(&arch).unwrap(), format!("\"{}\"", arch.key()));
        assert_eq!(arch.key().parse::<Arch>().unwrap(), arch);
        assert_eq!(arch.key().to_uppercase().replace('_', "-").parse::<Arch>().unwrap(), arch);
    }
    assert!(matches!("lenet".parse::<Arch>(), Err(Error::Config(_))));
}
