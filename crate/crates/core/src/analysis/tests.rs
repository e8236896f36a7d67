use super::*;
use crate::features::random_embeddings;
use crate::model::{ClassifierDepth, ModelDims, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct density product: prior times product of Gaussian pdfs, normalized.
fn density_oracle(model: &GaussianNb, x: &[f64]) -> Vec<f64> {
    let joint: Vec<f64> = (0..model.classes())
        .map(|c| {
            let mut p = model.log_prior[c].exp();
            for (j, xj) in x.iter().enumerate() {
                let (m, v) = (model.means[c][j], model.variances[c][j]);
                p *= (-(xj - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
            }
            p
        })
        .collect();
    let z: f64 = joint.iter().sum();
    joint.iter().map(|p| (p / z).ln()).collect()
}

fn two_class_fixture() -> (Vec<Vec<f64>>, Vec<usize>) {
    let x = vec![
        vec![0.9, 0.1, -0.3],
        vec![1.2, 0.0, -0.1],
        vec![1.1, 0.3, -0.4],
        vec![0.7, -0.2, 0.0],
        vec![1.0, 0.2, -0.2],
        vec![-0.8, 0.4, 0.3],
        vec![-1.1, 0.1, 0.5],
        vec![-0.9, 0.6, 0.2],
        vec![-1.3, 0.2, 0.4],
        vec![-0.6, 0.5, 0.1],
    ];
    (x, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
}

#[test]
fn log_posteriors_match_density_oracle() {
    let (x, y) = two_class_fixture();
    let nb = nb_train(&x, &y, 2).unwrap();
    for probe in x.iter().chain([vec![0.1, 0.2, 0.0], vec![-0.2, 0.3, 0.25]].iter()) {
        let got = nb_predict(&nb, probe).unwrap();
        let want = density_oracle(&nb, probe);
        for (g, w) in got.log_posteriors.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }
    for (xi, &yi) in x.iter().zip(&y) {
        assert_eq!(nb_predict(&nb, xi).unwrap().class, yi);
    }
}

#[test]
fn moments_are_maximum_likelihood() {
    let x = vec![vec![1.0], vec![3.0], vec![10.0], vec![14.0]];
    let nb = nb_train(&x, &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(nb.means, vec![vec![2.0], vec![12.0]]);
    assert_eq!(nb.variances, vec![vec![1.0], vec![4.0]]);
}

#[test]
fn two_point_boundary_near_zero() {
    let x = vec![vec![-1.0], vec![-1.001], vec![1.0], vec![1.001]];
    let nb = nb_train(&x, &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(nb_predict(&nb, &[-0.01]).unwrap().class, 0);
    assert_eq!(nb_predict(&nb, &[0.01]).unwrap().class, 1);
    assert_eq!(nb_predict(&nb, &[-1.0]).unwrap().class, 0);
    assert_eq!(nb_predict(&nb, &[1.0]).unwrap().class, 1);
}

#[test]
fn priors_count_labels() {
    let x = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0]];
    let nb = nb_train(&x, &[0, 0, 0, 1], 2).unwrap();
    let priors: Vec<f64> = nb.log_prior.iter().map(|l| l.exp()).collect();
    assert!((priors[0] - 0.75).abs() < 1e-15 && (priors[1] - 0.25).abs() < 1e-15);
}

#[test]
fn missing_class_and_dim_errors() {
    let x = vec![vec![0.0], vec![1.0]];
    assert!(matches!(nb_train(&x, &[0, 0], 2), Err(AnalysisError::MissingClass(1))));
    let nb = nb_train(&x, &[0, 1], 2).unwrap();
    assert!(matches!(nb_predict(&nb, &[0.0, 1.0]), Err(AnalysisError::DimMismatch { .. })));
}

#[test]
fn variance_floor_applies_to_constant_features() {
    // Feature 1 is constant inside each class.
    let x = vec![vec![0.0, 2.0], vec![2.0, 2.0], vec![4.0, 5.0], vec![6.0, 5.0]];
    let nb = nb_train(&x, &[0, 0, 1, 1], 2).unwrap();
    // Overall variance of feature 0 is 5, feature 1 is 2.25.
    assert!((nb.floor - 5e-9).abs() < 1e-20);
    assert_eq!(nb.variances[0][1], nb.floor);
    assert!(nb.variances.iter().flatten().all(|&v| v >= nb.floor));
    // All-constant data falls back to an absolute floor.
    let flat = nb_train(&[vec![1.0], vec![1.0]], &[0, 1], 2).unwrap();
    assert_eq!(flat.floor, VARIANCE_FLOOR);
}

#[test]
fn identical_classes_tie_to_lowest() {
    let x = vec![vec![1.0], vec![2.0], vec![1.0], vec![2.0]];
    let nb = nb_train(&x, &[1, 1, 0, 0], 2).unwrap();
    assert_eq!(nb_predict(&nb, &[1.5]).unwrap().class, 0);
}

#[test]
fn f_measures() {
    assert_eq!(class_f_measures(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), vec![1.0; 3]);
    assert_eq!(class_f_measures(&[0, 0, 1], &[0, 1, 0], 3).unwrap()[0], 0.5);
    assert_eq!(class_f_measures(&[0, 1], &[0, 1], 3).unwrap()[2], 0.0);
    assert!(class_f_measures(&[0], &[0, 1], 2).is_err());
}

#[test]
fn majority_and_ties() {
    assert_eq!(majority_vote(&[0, 0, 1], 2).unwrap(), 0);
    assert_eq!(majority_vote(&[1, 0, 1], 2).unwrap(), 1);
    assert_eq!(majority_vote(&[2, 1], 3).unwrap(), 1);
    assert_eq!(majority_vote(&[2, 0, 1], 3).unwrap(), 0);
    assert!(majority_vote(&[], 2).is_err());
}

fn ex(id: usize, label: usize) -> Example {
    Example { ids: vec![id], label }
}

#[test]
fn hand_specified_ensemble() {
    // Three predictors over ids 0..10; gold labels alternate 0/1.
    let data: Vec<Example> = (0..10).map(|i| ex(i, i % 2)).collect();
    type Rule = dyn Fn(&[usize]) -> usize;
    let p1 = |ids: &[usize]| ids[0] % 2; // always right
    let p2 = |ids: &[usize]| usize::from(ids[0] >= 5); // right on 0, 2, 4, 5, 7, 9
    let p3 = |_: &[usize]| 1; // right on odd ids
    let models: Vec<Box<Rule>> = vec![Box::new(p1), Box::new(p2), Box::new(p3)];
    let report = ensemble_vote(&models, &data, 2).unwrap();
    // Hand tally per id: votes (p1,p2,p3) -> majority
    // 0:(0,0,1)->0 1:(1,0,1)->1 2:(0,0,1)->0 3:(1,0,1)->1 4:(0,0,1)->0
    // 5:(1,1,1)->1 6:(0,1,1)->1 7:(1,1,1)->1 8:(0,1,1)->1 9:(1,1,1)->1
    assert_eq!(report.predictions, vec![0, 1, 0, 1, 0, 1, 1, 1, 1, 1]);
    assert_eq!(report.accuracy, 0.8);
    assert_eq!(report.learner_accuracies, vec![1.0, 0.6, 0.5]);
}

#[test]
fn mean_stdev_format() {
    let s = mean_stdev(&[0.493, 0.495, 0.497]);
    assert!((s.mean - 0.495).abs() < 1e-12);
    assert!((s.stdev - 0.002).abs() < 1e-12);
    assert_eq!(s.to_string(), "49.50 ± 0.20");
    assert_eq!(mean_stdev(&[0.5]).stdev, 0.0);
}

fn tiny_params(views: usize, variant: Variant, seed: u64) -> MvnParameters {
    let dims = ModelDims {
        vocab_size: 12,
        embed_dim: 5,
        view_dim: 4,
        attention_dim: 3,
        hidden_dim: 6,
        views,
        classes: 2,
        variant,
        conv_features: true,
        depth: ClassifierDepth::TwoLayer,
        dropout: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = random_embeddings(12, 5, &mut rng);
    MvnParameters::init(dims, table, &mut rng).unwrap()
}

fn random_docs(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Example {
            ids: (0..rng.gen_range(1..7)).map(|_| rng.gen_range(0..12)).collect(),
            label: i % 2,
        })
        .collect()
}

#[test]
fn extraction_shape_and_determinism() {
    let params = tiny_params(4, Variant::Full, 1);
    let data = random_docs(9, 2);
    let a = extract_view_representations(&params, &data).unwrap();
    let b = extract_view_representations(&params, &data).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 9);
    assert!(a.records.iter().all(|r| r.views.len() == 4 && r.views.iter().all(|v| v.len() == 4)));
}

#[test]
fn no_links_views_equal_selections() {
    let params = tiny_params(4, Variant::NoLinks, 3);
    let data = random_docs(5, 4);
    for b in extract_bundles(&params, &data).unwrap() {
        assert_eq!(b.views, b.selections);
    }
}

#[test]
fn view_matrix_shape() {
    let params = tiny_params(3, Variant::Chain, 5);
    let m = analyze_views(&params, &random_docs(20, 6), &random_docs(10, 7)).unwrap();
    assert_eq!(m.f1.len(), 3);
    assert!(m.f1.iter().all(|r| r.len() == 2));
    let csv = m.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "view,class0_f1,class1_f1,accuracy");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn copies_of_one_model_match_it() {
    let params = tiny_params(2, Variant::Full, 8);
    let data = random_docs(15, 9);
    let single = ensemble_vote(std::slice::from_ref(&params), &data, 2).unwrap();
    let five = ensemble_vote(&vec![params.clone(); 5], &data, 2).unwrap();
    assert_eq!(single.accuracy, five.accuracy);
    assert_eq!(single.predictions, five.predictions);
}

#[test]
fn sweep_rows_sorted() {
    let vocab = crate::features::build_vocab(&[vec!["a", "b", "c", "d"]], 1).unwrap();
    let docs: Vec<Example> = (0..8).map(|i| ex(2 + i % 4, i % 2)).collect();
    let corpus = Corpus {
        vocab: &vocab,
        classes: 2,
        embeddings: None,
        train: &docs,
        dev: &docs,
        test: &docs,
    };
    let config = TrainConfig {
        view_dim: 3,
        embed_dim: 4,
        max_epochs: 2,
        batch_size: 4,
        ..TrainConfig::sst()
    };
    let rows = view_sweep(&config, &[3, 1, 2, 3], &corpus).unwrap();
    assert_eq!(rows.iter().map(|r| r.views).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.test_accuracy)));
    assert_eq!(rows, view_sweep(&config, &[1, 2, 3], &corpus).unwrap());
    assert_eq!(sweep_csv(&rows).lines().next().unwrap(), "views,dev_acc,test_acc");
    assert!(matches!(view_sweep(&config, &[0], &corpus), Err(AnalysisError::ZeroViews)));
}

proptest! {
    #[test]
    fn prediction_ignores_shift_of_log_joint(
        shift in -50.0f64..50.0,
        probe in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let (x, y) = two_class_fixture();
        let nb = nb_train(&x, &y, 2).unwrap();
        let mut shifted = nb.clone();
        shifted.log_prior.iter_mut().for_each(|l| *l += shift);
        let a = nb_predict(&nb, &probe).unwrap();
        let b = nb_predict(&shifted, &probe).unwrap();
        prop_assert_eq!(a.class, b.class);
        for (p, q) in a.log_posteriors.iter().zip(&b.log_posteriors) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn f_measures_permutation_invariant(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..30),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
        let (p1, g1) = split(&pairs);
        let (p2, g2) = split(&shuffled);
        prop_assert_eq!(class_f_measures(&p1, &g1, 3).unwrap(), class_f_measures(&p2, &g2, 3).unwrap());
    }
}
