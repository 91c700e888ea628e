mod common;

use efy_core::calibration::{enumerate_labels, hamming_decomposition, hamming_loss, hamming_sigma};
use efy_core::data::{parse_libsvm_multilabel, split, write_libsvm_multilabel, LabelBase, ParseOptions};
use efy_core::losses::gfy_loss;
use efy_core::numerics::relative_error;
use efy_core::regularizers::project_simplex;
use efy_core::{
    conjugate, Architecture, Energy, EnergyInput, Matrix, Model, ModelSpec, MultilabelDataset, OutputSet, Regularizer,
    SolverConfig, Standardizer, Vector,
};
use proptest::prelude::*;

fn vec_strategy(k: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vector> {
    proptest::collection::vec(lo..hi, k).prop_map(Vector::from_vec)
}

fn nsd_strategy(k: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-1.0f64..1.0, k * k).prop_map(move |xs| {
        let b = Matrix::from_vec(k, k, xs);
        let m = -(&b * b.transpose());
        (&m + m.transpose()) * 0.5
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn simplex_projection_is_idempotent(x in vec_strategy(4, -3.0, 3.0)) {
        let p = project_simplex(&x);
        prop_assert!(OutputSet::simplex(4).contains(&p, 1e-12));
        prop_assert!((project_simplex(&p) - &p).amax() < 1e-12);
    }

    #[test]
    fn box_projection_is_nearest(x in vec_strategy(3, -2.0, 3.0), q in vec_strategy(3, 0.0, 1.0)) {
        let set = OutputSet::box01(3);
        let p = set.project(&x);
        prop_assert!(set.contains(&p, 0.0));
        prop_assert!((&x - &p).norm() <= (&x - &q).norm() + 1e-12);
    }

    #[test]
    fn gfy_loss_is_nonnegative_and_vanishes_at_argmax(
        u in vec_strategy(3, -3.0, 3.0),
        m in nsd_strategy(3),
        y in vec_strategy(3, 0.0, 1.0),
        gamma in 0.1f64..2.0,
    ) {
        let energy = Energy::pairwise(3);
        let reg = Regularizer::gini_binary(gamma, 3).unwrap();
        let v = EnergyInput::Pairwise { unary: u, pairwise: m };
        let cfg = SolverConfig::default();
        let l = gfy_loss(&energy, &reg, &v, &y, &cfg).unwrap();
        prop_assert!(l.value >= -1e-9);
        let star = l.conjugate.unwrap().argmax;
        prop_assert!(gfy_loss(&energy, &reg, &v, &star, &cfg).unwrap().value <= 1e-8);
    }

    #[test]
    fn conjugate_value_matches_objective_at_argmax(v in vec_strategy(4, -3.0, 3.0), gamma in 0.1f64..2.0) {
        let energy = Energy::bilinear(Matrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64).sin()));
        for reg in [
            Regularizer::shannon_binary(gamma, 3).unwrap(),
            Regularizer::gini_binary(gamma, 3).unwrap(),
            Regularizer::shannon_simplex(gamma, 3).unwrap(),
        ] {
            let input = EnergyInput::Dense(v.clone());
            let r = conjugate(&energy, &reg, &input, &SolverConfig::default()).unwrap();
            prop_assert!(reg.domain().contains(&r.argmax, 1e-12));
            let direct = energy.value(&input, &r.argmax).unwrap() - reg.value(&r.argmax);
            prop_assert!((r.value - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn decode_minimizes_the_decomposed_loss(p in vec_strategy(3, 0.0, 1.0)) {
        let d = hamming_decomposition(3).unwrap();
        let decoded = d.decode(&p);
        let score = |y: &Vector| y.dot(&(&d.v * &p + &d.b));
        let best = enumerate_labels(3).unwrap().iter().map(score).fold(f64::INFINITY, f64::min);
        prop_assert!(score(&decoded) <= best + 1e-12);
    }

    #[test]
    fn model_vjp_matches_finite_differences(
        arch in prop_oneof![Just(Architecture::Unary), Just(Architecture::Pairwise), Just(Architecture::Spen)],
        seed in 0u64..1000,
        x in vec_strategy(4, -2.0, 2.0),
        w in vec_strategy(64, -1.0, 1.0),
    ) {
        let model = Model::init(ModelSpec::new(arch, 4, 3), seed).unwrap();
        let out = model.forward(&x).unwrap();
        // random cotangent with the output's shape
        let cot = out.with_flat(&w.as_slice()[..out.len()]);
        let pairing = |m: &Model| -> f64 {
            m.forward(&x).unwrap().to_flat().iter().zip(cot.to_flat()).map(|(a, b)| a * b).sum()
        };
        let analytic = model.vjp(&x, &cot).unwrap();
        let mut numeric = vec![0.0; model.theta.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let h = 1e-6 * (1.0 + model.theta[i].abs());
            let mut plus = model.clone();
            plus.theta[i] += h;
            let mut minus = model.clone();
            minus.theta[i] -= h;
            *slot = (pairing(&plus) - pairing(&minus)) / (2.0 * h);
        }
        prop_assert!(relative_error(&analytic, &numeric) <= 1e-5);
    }
}

#[test]
fn hamming_decomposition_reproduces_the_loss() {
    for k in 1..=3 {
        let d = hamming_decomposition(k).unwrap();
        let labels = enumerate_labels(k).unwrap();
        for a in &labels {
            for b in &labels {
                assert!((d.loss(a, b) - hamming_loss(a, b)).abs() < 1e-15);
            }
        }
        assert!((d.sigma().unwrap() - hamming_sigma(k)).abs() < 1e-12);
    }
}

fn toy_dataset() -> MultilabelDataset {
    let x = Matrix::from_fn(12, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin() * (j + 1) as f64);
    let y = Matrix::from_fn(12, 4, |i, j| ((i + j) % 3 == 0) as u8 as f64);
    MultilabelDataset::new(x, y).unwrap()
}

#[test]
fn libsvm_round_trip() {
    let data = toy_dataset();
    for base in [LabelBase::Zero, LabelBase::One] {
        let mut buf = Vec::new();
        write_libsvm_multilabel(&data, base, &mut buf).unwrap();
        let opts = ParseOptions { label_base: base, n_labels: Some(4), n_features: Some(3) };
        let back = parse_libsvm_multilabel(buf.as_slice(), &opts).unwrap();
        assert_eq!(back.y, data.y);
        assert!((&back.x - &data.x).amax() < 1e-12);
    }
}

#[test]
fn split_partitions_rows_reproducibly() {
    let data = toy_dataset();
    let a = split(&data, &[0.5, 0.25, 0.25], 9).unwrap();
    let b = split(&data, &[0.5, 0.25, 0.25], 9).unwrap();
    assert_eq!(a.iter().map(|p| p.len()).sum::<usize>(), data.len());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.x, q.x);
    }
}

#[test]
fn standardized_training_columns_are_centered() {
    let data = toy_dataset();
    let scaled = Standardizer::fit(&data.x).unwrap().apply(&data).unwrap();
    for j in 0..scaled.n_features() {
        let col = scaled.x.column(j);
        let mean = col.mean();
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn parameters_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.bin");
    let model = Model::init(ModelSpec::new(Architecture::Spen, 5, 3), 11).unwrap();
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.theta, model.theta);
    assert_eq!(back.spec, model.spec);
    let x = Vector::from_element(5, 0.3);
    assert_eq!(back.forward(&x).unwrap(), model.forward(&x).unwrap());
}
