use std::collections::BTreeMap;
use std::path::Path;

use framecl::data::{synth_generate, Dataset, LabelVocabulary, LanguageSpec, SynthConfig};
use framecl::losses::ContrastiveConfig;
use framecl::metrics::evaluate;
use framecl::model::{predict_batch, BatchInput, ModelConfig, ModelParams};
use framecl::thresholds::ThresholdTable;
use framecl::train::{batch_gradients, train, train_from, TrainConfig};
use framecl::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_corpus(seed: u64) -> (Dataset, Dataset, Dataset) {
    let languages = ["en", "fr"]
        .iter()
        .zip([0x61, 0x101])
        .map(|(tag, script_start)| LanguageSpec {
            tag: tag.to_string(),
            train: 40,
            dev: 16,
            test: 12,
            script_start,
        })
        .collect();
    let c = synth_generate(&SynthConfig {
        languages,
        seed,
        ..Default::default()
    })
    .unwrap();
    (
        Dataset::hashed(c.train, 256).unwrap(),
        Dataset::hashed(c.dev, 256).unwrap(),
        Dataset::hashed(c.test, 256).unwrap(),
    )
}

fn small_model() -> ModelConfig {
    ModelConfig {
        d_in: 256,
        d_h: 16,
        d_p: 8,
        ..Default::default()
    }
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::synthetic()
    }
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let (tr, dev, _) = small_corpus(1);
    let cfg = small_model();
    let init = ModelParams::init(&cfg).unwrap();
    let t = TrainConfig {
        learning_rate: 0.0,
        ..small_train(3)
    };
    let out = train_from(init.clone(), &tr, &dev, &cfg, &ContrastiveConfig::default(), &t).unwrap();
    assert_eq!(out.params, init);
    let f1: Vec<f64> = out.report.epochs.iter().map(|e| e.dev_mean_f1).collect();
    assert!(f1.windows(2).all(|w| w[0] == w[1]), "{f1:?}");
}

#[test]
fn alpha_extremes_silence_one_head() {
    let (tr, _, _) = small_corpus(2);
    let cfg = small_model();
    let params = ModelParams::init(&cfg).unwrap();
    let batch = BatchInput::gather(&tr, &[0, 1, 2, 3], &cfg).unwrap();
    let grads = |alpha: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        batch_gradients(&params, &batch, &cfg, &ContrastiveConfig::default(), alpha, &mut rng)
            .unwrap()
            .1
    };
    let zero = |a: &framecl::dcore::DArray| a.data().iter().all(|&x| x == 0.0);
    let nonzero = |a: &framecl::dcore::DArray| a.data().iter().any(|&x| x != 0.0);
    // order: encoder W/b, contrastive W/b, classifier W/b
    let g1 = grads(1.0);
    assert!(zero(&g1[2]) && zero(&g1[3]));
    assert!(nonzero(&g1[4]) && nonzero(&g1[0]));
    let g0 = grads(0.0);
    assert!(zero(&g0[4]) && zero(&g0[5]));
    assert!(nonzero(&g0[2]) && nonzero(&g0[0]));
}

#[test]
fn synthetic_preset_loss_falls_over_first_epochs() {
    let c = synth_generate(&SynthConfig::default()).unwrap();
    let cfg = ModelConfig {
        d_in: 4096,
        ..Default::default()
    };
    let tr = Dataset::hashed(c.train, 4096).unwrap();
    let dev = Dataset::hashed(c.dev, 4096).unwrap();
    let out = train(&tr, &dev, &cfg, &ContrastiveConfig::default(), &small_train(5)).unwrap();
    let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.mean_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn training_is_deterministic() {
    let (tr, dev, _) = small_corpus(3);
    let cfg = small_model();
    let run = || train(&tr, &dev, &cfg, &ContrastiveConfig::default(), &small_train(2)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert_eq!(a.report, b.report);
    assert_eq!(a.thresholds, b.thresholds);
}

#[test]
fn report_has_one_record_per_epoch() {
    let (tr, dev, _) = small_corpus(4);
    let out = train(&tr, &dev, &small_model(), &ContrastiveConfig::default(), &small_train(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    out.report.write_jsonl(&path).unwrap();
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), out.report.epochs.len() + 1);
    assert_eq!(lines.last().unwrap()["record"], "summary");
    assert_eq!(lines[0]["dev_micro_f1"].as_object().unwrap().len(), 2);
    assert!(out.report.selected_epoch >= 1 && out.report.selected_epoch <= 3);
}

#[test]
fn diverging_run_reports_numeric_failure() {
    let (tr, dev, _) = small_corpus(5);
    let t = TrainConfig {
        learning_rate: f64::MAX,
        ..small_train(3)
    };
    match train(&tr, &dev, &small_model(), &ContrastiveConfig::default(), &t) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("epoch"), "{msg}"),
        other => panic!("expected a numeric failure, got {other:?}"),
    }
}

#[test]
fn evaluation_routes_and_aggregates() {
    let (tr, dev, test) = small_corpus(6);
    let cfg = small_model();
    let out = train(&tr, &dev, &cfg, &ContrastiveConfig::default(), &small_train(2)).unwrap();
    let names = LabelVocabulary::default().names().to_vec();

    let en: Vec<_> = test.examples.iter().filter(|e| e.language == "en").cloned().collect();
    let en = Dataset::hashed(en, 256).unwrap();
    let r = evaluate(&en, &out.params, &cfg, &out.thresholds, &names).unwrap();
    assert_eq!(r.per_language.len(), 1);
    assert_eq!(r.per_language["en"].micro_f1, r.micro_f1);
    assert!(!r.per_language["en"].zero_shot);

    let only_fr = ThresholdTable::new(BTreeMap::from([("fr".to_string(), out.thresholds.per_language["fr"])]), 0.01).unwrap();
    let r = evaluate(&test, &out.params, &cfg, &only_fr, &names).unwrap();
    assert!(r.per_language["en"].zero_shot);
    assert_eq!(r.per_language["en"].threshold, only_fr.zero_shot);
    assert!(!r.per_language["fr"].zero_shot);

    let mut broken = test.clone();
    broken.features[0].title.indices = vec![9999];
    broken.features[0].title.values = vec![1.0];
    let r = evaluate(&broken, &out.params, &cfg, &out.thresholds, &names).unwrap();
    assert_eq!(r.failures, 1);
    assert_eq!(r.examples, test.len() - 1);
}

#[test]
fn tuned_thresholds_dominate_fixed_ones_on_tuning_data() {
    let (tr, dev, _) = small_corpus(7);
    let cfg = small_model();
    let out = train(&tr, &dev, &cfg, &ContrastiveConfig::default(), &small_train(2)).unwrap();
    let names = LabelVocabulary::default().names().to_vec();
    for lang in dev.languages() {
        let sub: Vec<_> = dev.examples.iter().filter(|e| e.language == lang).cloned().collect();
        let sub = Dataset::hashed(sub, 256).unwrap();
        let tuned = evaluate(&sub, &out.params, &cfg, &out.thresholds, &names).unwrap().micro_f1;
        for k in 1..100 {
            let fixed = ThresholdTable::new(BTreeMap::from([(lang.clone(), k as f64 / 100.0)]), 0.01).unwrap();
            let f = evaluate(&sub, &out.params, &cfg, &fixed, &names).unwrap().micro_f1;
            assert!(f <= tuned + 1e-15, "{lang} θ={k}: {f} > {tuned}");
        }
    }
}

const FIXTURE: &str = "tests/fixtures/predict_regression.json";

/// Probabilities of a seeded small training run, frozen. Regenerate with
/// `FRAMECL_UPDATE_FIXTURES=1 cargo test --test training`.
#[test]
fn predictions_match_regression_fixture() {
    let (tr, dev, test) = small_corpus(11);
    let cfg = ModelConfig {
        init_seed: 11,
        ..small_model()
    };
    let t = TrainConfig {
        seed: 11,
        ..small_train(3)
    };
    let out = train(&tr, &dev, &cfg, &ContrastiveConfig::default(), &t).unwrap();
    let idx: Vec<usize> = (0..6).collect();
    let probs = predict_batch(&test, &idx, &out.params, &cfg).unwrap();
    let ids: Vec<&str> = idx.iter().map(|&i| test.examples[i].id.as_str()).collect();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(FIXTURE);
    if std::env::var_os("FRAMECL_UPDATE_FIXTURES").is_some() {
        let doc = serde_json::json!({ "ids": ids, "probabilities": probs, "thresholds": out.thresholds });
        std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap() + "\n").unwrap();
    }
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["ids"], serde_json::json!(ids));
    let want: Vec<Vec<f64>> = serde_json::from_value(doc["probabilities"].clone()).unwrap();
    for (a, b) in probs.iter().flatten().zip(want.iter().flatten()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let table: ThresholdTable = serde_json::from_value(doc["thresholds"].clone()).unwrap();
    assert_eq!(table, out.thresholds);
}
