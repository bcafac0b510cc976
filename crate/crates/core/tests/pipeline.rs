mod common;

use ndarray::Array2;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use wisdom::aggregator::{self, posterior_weight_jacobian};
use wisdom::bilevel::{hypergradient, Checkpoint, HypergradMode, SplitData, Trainer};
use wisdom::config::{Config, SEED_ENV};
use wisdom::corpus::{Document, LabelMap};
use wisdom::harness::{
    aggregate_runs, configure_method, induce_for_split, load_runs, run_method, save_run, text_experiment,
    text_setup, Method, ReportTable,
};
use wisdom::lf::{load_lfs, save_lfs};
use wisdom::model::{FeatureModel, MlpShape};
use wisdom::objective::ObjectiveConfig;
use wisdom::synthetic::{planted_noise, PlantedNoiseConfig};

fn small_config() -> Config {
    Config {
        hidden: vec![16],
        dropout: 0.2,
        epochs: 3,
        ..Config::default()
    }
}

fn small_generator() -> PlantedNoiseConfig {
    PlantedNoiseConfig {
        labeled: 80,
        unlabeled: 300,
        test: 100,
        ..PlantedNoiseConfig::default()
    }
}

#[test]
fn first_order_hypergradient_tracks_exact() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, d) = (4, 3, 4);
        let agg = random_params(&mut rng, m, k, false);
        let model = FeatureModel::init(MlpShape::new(d, vec![6], k), 0.0, rng.gen()).unwrap();
        let model = model.with_params(model.params.mapv(|v| v + rng.gen_range(-0.1..0.1)));
        let batch = random_batch(&mut rng, 4, 4, d, m, k);
        let validation = SplitData {
            x: Array2::from_shape_fn((5, d), |_| rng.gen_range(0.0..2.0)),
            fired: Array2::zeros((5, m)),
            labels: vec![0, 1, 2, 0, 1],
        };
        let cfg = ObjectiveConfig::default();
        let exact = hypergradient(&agg, &model, &batch, None, &validation, &cfg, 0.1, HypergradMode::Exact).unwrap();
        let approx =
            hypergradient(&agg, &model, &batch, None, &validation, &cfg, 0.1, HypergradMode::FirstOrder).unwrap();
        let gap = (&exact - &approx).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        let scale = exact.mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b)).max(1e-8);
        assert!(gap / scale < 1e-2, "seed {seed}: {exact} vs {approx}");
    }
}

#[test]
fn posterior_weight_jacobian_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let agg = random_params(&mut rng, 5, 3, false);
    let fired = random_fired(&mut rng, 8, 5);
    let jac = posterior_weight_jacobian(&agg, fired.view());
    let h = 1e-6;
    for (j, dj) in jac.iter().enumerate() {
        let (mut p, mut q) = (agg.clone(), agg.clone());
        p.weights[j] += h;
        q.weights[j] -= h;
        let fd = (aggregator::posteriors(&p, fired.view()) - aggregator::posteriors(&q, fired.view())) / (2.0 * h);
        for (a, b) in dj.iter().zip(fd.iter()) {
            assert!(rel_err(*a, *b, 1e-6) < 1e-6, "lf {j}: {a} vs {b}");
        }
    }
}

#[test]
fn every_method_runs_and_reports() {
    let exp = planted_noise(&small_generator(), 1).unwrap();
    let cfg = small_config();
    let mut runs = Vec::new();
    for seed in [0, 1] {
        for method in Method::ALL {
            let run = run_method(method, &exp, &cfg, seed).unwrap();
            assert!((0.0..=1.0).contains(&run.test_macro_f1));
            assert!(run.best_epoch <= cfg.epochs);
            assert_eq!(run.weights.is_some(), method.uses_lfs());
            if let Some(w) = &run.weights {
                assert_eq!(w.len(), exp.data.lfs.len());
                assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            runs.push(run);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    for (i, run) in runs.iter().enumerate() {
        save_run(run, dir.path().join(format!("run{i}.json"))).unwrap();
    }
    let mut loaded = load_runs(dir.path()).unwrap();
    loaded.sort_by_key(|r| (r.seed, r.method));
    let mut expected = runs.clone();
    expected.sort_by_key(|r| (r.seed, r.method));
    assert_eq!(loaded, expected);

    let table = aggregate_runs(&runs, true).unwrap();
    assert_eq!(table.rows.len(), Method::ALL.len());
    let sup = table.rows.iter().find(|r| r.method == Method::Supervised).unwrap();
    assert_eq!(sup.delta, Some(0.0));
    for row in &table.rows {
        let f1: Vec<f64> = runs.iter().filter(|r| r.method == row.method).map(|r| r.test_macro_f1).collect();
        let mean = f1.iter().sum::<f64>() / 2.0;
        assert!((row.mean - mean).abs() < 1e-12);
        assert!((row.std - (f1[0] - f1[1]).abs() / 2.0).abs() < 1e-12);
    }
    assert_eq!(ReportTable::from_csv(&table.to_csv().unwrap()).unwrap(), table);
    assert!(table.to_markdown().lines().count() == 2 + table.rows.len());
}

#[test]
fn snuba_leaves_label_model_untouched() {
    let exp = planted_noise(&small_generator(), 2).unwrap();
    let trainer = configure_method(Method::Snuba, &small_config().trainer(0));
    assert!(trainer.freeze_aggregator && !trainer.reweight);
    let agg = wisdom::aggregator::AggregatorParams::init(&exp.data.lfs, 2, &mut ChaCha8Rng::seed_from_u64(0));
    let out = Trainer::with_aggregator(&exp.data, trainer, Some(agg.clone()))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(out.last.aggregator, agg);
}

#[test]
fn checkpoint_file_restores_state() {
    let exp = planted_noise(&small_generator(), 3).unwrap();
    let cfg = configure_method(Method::Wisdom, &small_config().trainer(5));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let out = Trainer::new(&exp.data, cfg.clone()).unwrap().checkpoint_to(&path).run().unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.state, out.last);
    let trace = dir.path().join("trace.csv");
    out.trace.save_csv(&trace).unwrap();
    let text = std::fs::read_to_string(trace).unwrap();
    assert!(text.starts_with("kind,epoch,step,ce_supervised,"));
    assert_eq!(text.lines().count(), 1 + out.trace.steps.len() + out.trace.epochs.len());
}

#[test]
fn config_rejects_unknown_keys_and_reads_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"epochs": 7, "hidden": [32], "methods": ["auto_spear"]}"#).unwrap();
    std::env::set_var(SEED_ENV, "41");
    let cfg = Config::load(&good).unwrap();
    std::env::remove_var(SEED_ENV);
    assert_eq!((cfg.epochs, cfg.seed), (7, 41));
    assert_eq!(cfg.hidden, vec![32]);
    assert_eq!(cfg.methods, vec![Method::AutoSpear]);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"epochs": 7, "learning_rate": 0.1}"#).unwrap();
    assert!(Config::load(&bad).is_err());
}

fn toy_corpus(n: usize, seed: u64) -> Vec<Document> {
    let spam = ["check out my channel", "subscribe to my channel", "free gift card click here", "check my new video"];
    let ham = ["love this song", "this song is so good", "great video love it", "best song ever"];
    let filler = ["wow", "haha", "really", "so", "the", "again"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let y = i % 2;
            let base = if y == 1 { spam } else { ham };
            let mut text = base.choose(&mut rng).unwrap().to_string();
            for _ in 0..rng.gen_range(0..3) {
                text.push(' ');
                text.push_str(filler.choose(&mut rng).unwrap());
            }
            Document::new(i as u64, text, Some(y))
        })
        .collect()
}

#[test]
fn text_pipeline_induces_and_trains() {
    let labels = LabelMap::new(["ham", "spam"]).unwrap();
    let pool = toy_corpus(400, 0);
    let test = toy_corpus(100, 1);
    let cfg = Config {
        labeled_fraction: 0.2,
        epochs: 20,
        lr_phi: 0.003,
        ..small_config()
    };
    let setup = text_setup(&pool, 2, &cfg, 0).unwrap();
    let lfs = induce_for_split(&setup, &cfg).unwrap();
    assert!(!lfs.is_empty());
    assert!(lfs.iter().all(|lf| lf.train_precision >= cfg.min_precision));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lfs.json");
    save_lfs(&path, &lfs, &setup.vocab, &labels).unwrap();
    assert_eq!(load_lfs(&path, &setup.vocab, &labels).unwrap(), lfs);

    let exp = text_experiment(&setup, &lfs, &test, &cfg).unwrap();
    let run = run_method(Method::Wisdom, &exp, &cfg, 0).unwrap();
    assert!(run.test_macro_f1 > 0.9, "macro-F1 {}", run.test_macro_f1);
}
