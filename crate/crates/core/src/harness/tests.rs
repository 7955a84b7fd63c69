use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::corpus::split_by_user;
use crate::corpus::Label::{Negative as N, Positive as P};
use crate::dataset::{FeaturePipeline, Featurized};
use crate::synth::{generate, SynthConfig};

#[test]
fn tfidf_idf_by_hand() {
    let t = Tfidf::fit(["a b", "a"], 300).unwrap();
    assert_eq!(t.terms(), ["a", "b"]);
    assert_eq!(t.idf("a"), Some(1.0));
    assert!((t.idf("b").unwrap() - (1.5f64.ln() + 1.0)).abs() < 1e-15);
    assert_eq!(t.transform("b")[0], 0.0);
    assert_eq!(t.transform("b b"), vec![0.0, 1.0]);
    assert_eq!(t.transform("zzz"), vec![0.0, 0.0]);
    let v = t.transform("a b");
    assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(Tfidf::fit(["", " "], 10).is_err());
}

#[test]
fn tfidf_keeps_most_frequent_terms() {
    let t = Tfidf::fit(["x y z", "x y", "x w"], 2).unwrap();
    assert_eq!(t.terms(), ["x", "y"]);
    let t = Tfidf::fit(["c b", "a d"], 2).unwrap();
    assert_eq!(t.terms(), ["a", "b"]);
    assert_eq!(Tfidf::fit(["c b", "a d"], 2).unwrap(), t);
}

#[test]
fn naive_bayes_by_hand() {
    // Class means 0 and 10, equal variances and priors: the boundary is 5.
    let x: Vec<Vec<f64>> = [-1.0, 0.0, 1.0, 9.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
    let y = [N, N, N, P, P, P];
    let nb = GaussianNb::fit(&x, &y).unwrap();
    assert_eq!(nb.predict(&[4.9]), N);
    assert_eq!(nb.predict(&[5.1]), P);
    assert_eq!(nb.predict(&[5.0]), N);
    let p = nb.predict_proba(&[3.0]);
    // Equal variance 2/3: log-odds = ((3-0)² - (3-10)²) / (2·2/3) = -30.
    assert!(((p[1] / p[0]).ln() + 30.0).abs() < 1e-9);
    assert!((p[0] + p[1] - 1.0).abs() < 1e-12);

    let flat: Vec<Vec<f64>> = vec![vec![1.0]; 5];
    let nb = GaussianNb::fit(&flat, &[N, P, P, P, N]).unwrap();
    assert_eq!(nb.predict(&[1.0]), P);
    assert_eq!(nb.predict(&[-7.0]), P);
    assert!(GaussianNb::fit(&flat, &[P; 5]).is_err());
}

#[test]
fn tree_picks_the_clean_midpoint() {
    let x: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0].iter().map(|&v| vec![v]).collect();
    let y = [N, N, N, P, P, P];
    let t = DecisionTree::fit(&x, &y, 8).unwrap();
    assert_eq!(t.root_split(), Some((0, 6.5)));
    assert_eq!(t.depth(), 1);
    let pure = DecisionTree::fit(&x[..3], &y[..3], 8).unwrap();
    assert_eq!(pure.root_split(), None);
    // Equal-quality splits on two features: the lower index wins.
    let x2: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
    assert_eq!(DecisionTree::fit(&x2, &[N, P], 3).unwrap().root_split(), Some((0, 0.5)));
}

#[test]
fn shallow_tree_cannot_fit_xor() {
    let x: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let y = [N, P, P, N];
    let acc = |depth| {
        let t = DecisionTree::fit(&x, &y, depth).unwrap();
        x.iter().zip(&y).filter(|(r, &l)| t.predict(r) == l).count() as f64 / 4.0
    };
    assert!(acc(1) <= 0.75);
    assert_eq!(acc(2), 1.0);
}

pub(crate) fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    (0..n)
        .map(|i| {
            let l = if i % 2 == 0 { P } else { N };
            let c = if l == P { 2.0 } else { -2.0 };
            (vec![c + noise.sample(&mut rng), -c + noise.sample(&mut rng)], l)
        })
        .unzip()
}

#[test]
fn classic_learners_on_separable_data() {
    let (xtr, ytr) = separable(200, 1);
    let (xte, yte) = separable(200, 2);
    let acc = |pred: Vec<Label>| pred.iter().zip(&yte).filter(|(a, b)| a == b).count() as f64 / yte.len() as f64;
    let nb = GaussianNb::fit(&xtr, &ytr).unwrap();
    assert!(acc(xte.iter().map(|r| nb.predict(r)).collect()) >= 0.9);
    let dt = DecisionTree::fit(&xtr, &ytr, 8).unwrap();
    assert!(acc(xte.iter().map(|r| dt.predict(r)).collect()) >= 0.9);
}

fn small_cfg() -> HarnessConfig {
    let mut cfg = HarnessConfig::default();
    cfg.model.encoder = EncoderConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_multiplier: 2,
        dropout: 0.0,
        capacity: 16,
    };
    cfg.model.fusion_dim = 8;
    cfg.model.mlp_division = 1;
    cfg.train = TrainConfig {
        learning_rate: 0.01,
        epochs: 4,
        batch_size: 16,
        dropout: false,
        ..TrainConfig::default()
    };
    cfg
}

fn featurized(seed: u64, n_users: usize) -> Featurized<f64> {
    let corpus = generate(&SynthConfig { n_users, ..SynthConfig::context_mix(seed) }).unwrap();
    let (tr, te) = split_by_user(&corpus, 0.75, seed).unwrap();
    let mut pipe = FeaturePipeline::builtin();
    pipe.capacity = 16;
    pipe.build(&tr, &te).unwrap()
}

#[test]
fn setups_and_learners() {
    let f = featurized(4, 16);
    let cfg = small_cfg();
    for setup in Setup::ALL {
        for learner in [Learner::Nb, Learner::Dt] {
            let r = run_setup(setup, learner, &f.train, &f.test, &cfg, 1).unwrap();
            assert_eq!(r.confusion.total() as usize, f.test.len());
        }
    }
    // Classic learners see the cue words in text setups.
    let text = run_setup(Setup::TextOnly, Learner::Nb, &f.train, &f.test, &cfg, 1).unwrap();
    assert!(text.accuracy > 0.6, "{}", text.accuracy);
    let r = run_setup(Setup::TextTabular, Learner::Transformer, &f.train, &f.test, &cfg, 1).unwrap();
    assert_eq!(r.confusion.total() as usize, f.test.len());
    assert!(matches!(
        run_setup(Setup::TabularOnly, Learner::Transformer, &f.train, &f.test, &cfg, 1),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn ablation_plan_and_csv() {
    let f = featurized(5, 12);
    let layout = f.fitted.transform.layout();
    let names: Vec<String> = layout.iter().map(|s| s.name.clone()).collect();
    let mut cfg = small_cfg();
    cfg.train.epochs = 1;
    let empty = AblationPlan {
        seeds: vec![1, 2],
        ..AblationPlan::default()
    };
    let rows = run_ablation(&empty, &f.train, &f.test, &layout, &cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].variant, BASELINE_VARIANT);
    assert_eq!(rows[0].per_seed.len(), 2);

    let mut plan = AblationPlan::drop_one(&names[..2], vec![7]);
    let seq = run_ablation(&plan, &f.train, &f.test, &layout, &cfg).unwrap();
    plan.parallel = true;
    let par = run_ablation(&plan, &f.train, &f.test, &layout, &cfg).unwrap();
    assert_eq!(seq, par);
    let got: Vec<&str> = seq.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(got, ["text_tabular", "text_only", &format!("drop_{}", names[0]), &format!("drop_{}", names[1])]);

    let bad = AblationPlan {
        variants: vec![AblationVariant {
            name: "x".into(),
            kind: VariantKind::Drop(vec!["nope".into()]),
        }],
        ..AblationPlan::default()
    };
    assert!(run_ablation(&bad, &f.train, &f.test, &layout, &cfg).is_err());

    let mut buf = Vec::new();
    let row = AblationRow {
        variant: "text_only".into(),
        f1: MeanStd { mean: 0.5, std: 0.25 },
        seeds: vec![1, 2, 3],
        per_seed: vec![],
    };
    write_ablation_csv(&[row], &mut buf, Some("seed=1")).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "# seed=1\nvariant,f1_mean,f1_std,seed_list\ntext_only,0.5,0.25,1;2;3\n");
}

mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn tree_accuracy_grows_with_depth(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
            let y: Vec<Label> = x.iter().map(|r| if (r[0] > 0.5) ^ (r[1] > 0.3) ^ rng.gen_bool(0.1) { P } else { N }).collect();
            let mut last = 0.0;
            for depth in 1..8 {
                let t = DecisionTree::fit(&x, &y, depth).unwrap();
                let acc = x.iter().zip(&y).filter(|(r, &l)| t.predict(r) == l).count() as f64;
                prop_assert!(acc >= last);
                last = acc;
            }
        }

        #[test]
        fn nb_posterior_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 2)) {
            let (x, y) = separable(30, 3);
            let nb = GaussianNb::fit(&x, &y).unwrap();
            let p = nb.predict_proba(&v);
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }
}
