//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Oracles here are written independently of the library's own
//! checking helpers.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use framecl::dcore::{DArray, Graph, Var};
use framecl::losses::{
    bce_with_logits, multilabel_supcon, nt_xent, supcon, ContrastiveConfig, DenominatorConvention,
    LabelSet, WeightFn,
};
use framecl::model::{BatchInput, ModelConfig, ModelParams};
use framecl::thresholds::{tune_threshold, zero_shot_threshold};
use framecl::train::batch_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn ls(v: &[usize]) -> LabelSet {
    LabelSet::new(v.iter().copied())
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DArray {
    DArray::matrix(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

type LossFn = Box<dyn Fn(&mut Graph, Var) -> framecl::Result<Var>>;

fn value_at(f: &LossFn, x: &DArray) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v).unwrap();
    g.scalar(out)
}

/// Max relative error between backward and a central difference.
fn fd_check(f: &LossFn, x: &DArray) -> f64 {
    let mut g = Graph::new();
    let v = g.parameter(x.clone());
    let out = f(&mut g, v).unwrap();
    let grads = g.backward(out).unwrap();
    let analytic = grads[&v.id()].data().to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += EPS;
        let mut minus = x.clone();
        minus.data_mut()[i] -= EPS;
        let numeric = (value_at(f, &plus) - value_at(f, &minus)) / (2.0 * EPS);
        worst = worst.max(rel(analytic[i], numeric));
    }
    worst
}

fn loss_cases(rng: &mut ChaCha8Rng) -> Vec<(String, DArray, LossFn)> {
    let n = 2 * rng.gen_range(2..=4);
    let d = rng.gen_range(2..=16);
    let tau = [0.05, 0.1, 0.5, 1.0][rng.gen_range(0..4)];
    let z = rand_matrix(rng, n, d, -1.0, 1.0);
    let base = ContrastiveConfig {
        temperature: tau,
        ..Default::default()
    };
    let mut out: Vec<(String, DArray, LossFn)> = Vec::new();
    let c = base.clone();
    out.push(("nt_xent".into(), z.clone(), Box::new(move |g, v| Ok(nt_xent(g, v, &c)?.loss))));
    let classes: Vec<LabelSet> = (0..n).map(|_| ls(&[rng.gen_range(0..3)])).collect();
    let pool = [ls(&[0]), ls(&[1, 2]), ls(&[0, 2]), ls(&[0, 1, 2, 3])];
    let sets: Vec<LabelSet> = (0..n).map(|_| pool[rng.gen_range(0..4)].clone()).collect();
    for denom in [DenominatorConvention::NegativesOnly, DenominatorConvention::AllOthers] {
        let c = ContrastiveConfig {
            denominator: denom,
            ..base.clone()
        };
        let labels = classes.clone();
        out.push((
            format!("supcon {denom:?}"),
            z.clone(),
            Box::new(move |g, v| Ok(supcon(g, v, &labels, &c)?.loss)),
        ));
        for wf in [WeightFn::Identity, WeightFn::Constant] {
            let c = ContrastiveConfig {
                denominator: denom,
                weight_fn: wf.clone(),
                ..base.clone()
            };
            let labels = sets.clone();
            out.push((
                format!("multilabel {denom:?} {wf:?}"),
                z.clone(),
                Box::new(move |g, v| Ok(multilabel_supcon(g, v, &labels, &c)?.loss)),
            ));
        }
    }
    let l = rng.gen_range(1..=5);
    let logits = rand_matrix(rng, n, l, -3.0, 3.0);
    let targets = DArray::matrix(n, l, (0..n * l).map(|_| rng.gen_range(0..2) as f64).collect()).unwrap();
    out.push(("bce".into(), logits, Box::new(move |g, v| bce_with_logits(g, v, &targets))));
    out
}

fn composite_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let cfg = ModelConfig {
        d_in: 16,
        d_h: rng.gen_range(2..=6),
        d_p: rng.gen_range(2..=5),
        num_labels: 4,
        init_seed: seed,
        ..Default::default()
    };
    let b = rng.gen_range(2..=4);
    let pool = [ls(&[0]), ls(&[1, 3]), ls(&[0, 2])];
    let batch = BatchInput {
        title: rand_matrix(&mut rng, b, 16, 0.0, 1.0),
        body: rand_matrix(&mut rng, b, 16, 0.0, 1.0),
        labels: (0..b).map(|_| pool[rng.gen_range(0..3)].clone()).collect(),
    };
    let cl = ContrastiveConfig::default();
    let params = ModelParams::init(&cfg).unwrap();
    let objective = |p: &ModelParams| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        batch_gradients(p, &batch, &cfg, &cl, 0.5, &mut r).unwrap()
    };
    let (_, analytic) = objective(&params);
    let mut worst = 0.0f64;
    for a in 0..6 {
        for i in 0..params.arrays()[a].len() {
            let mut plus = params.clone();
            plus.arrays_mut()[a].data_mut()[i] += EPS;
            let mut minus = params.clone();
            minus.arrays_mut()[a].data_mut()[i] -= EPS;
            let numeric = (objective(&plus).0.breakdown.combined
                - objective(&minus).0.breakdown.combined)
                / (2.0 * EPS);
            worst = worst.max(rel(analytic[a].data()[i], numeric));
        }
    }
    worst
}

fn criterion_1() -> (bool, String) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, x, f) in loss_cases(&mut rng) {
            let e = fd_check(&f, &x);
            if e > worst {
                worst = e;
                worst_case = format!("{name} seed {seed}");
            }
        }
        let e = composite_check(seed);
        if e > worst {
            worst = e;
            worst_case = format!("composite seed {seed}");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < TOL && secs < 60.0,
        format!("max rel err {worst:.2e} ({worst_case}), {secs:.1}s"),
    )
}

fn constant_loss(z: &DArray, f: impl Fn(&mut Graph, Var) -> framecl::Result<Var>) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(z.clone());
    let out = f(&mut g, v).unwrap();
    g.scalar(out)
}

fn criterion_2() -> (bool, String) {
    let z = DArray::from_rows(&vec![vec![0.3, -1.2, 0.5, 2.0]; 4]).unwrap();
    let single = [ls(&[1]), ls(&[1]), ls(&[2]), ls(&[2])];
    let multi = [ls(&[1]), ls(&[1]), ls(&[2, 3]), ls(&[2, 3])];
    let mut worst = 0.0f64;
    for tau in [0.05, 0.1, 1.0] {
        let neg = ContrastiveConfig {
            temperature: tau,
            ..Default::default()
        };
        let all = ContrastiveConfig {
            denominator: DenominatorConvention::AllOthers,
            ..neg.clone()
        };
        let got = [
            (constant_loss(&z, |g, v| Ok(nt_xent(g, v, &neg)?.loss)), 3f64.ln()),
            (constant_loss(&z, |g, v| Ok(supcon(g, v, &single, &neg)?.loss)), 2f64.ln()),
            (constant_loss(&z, |g, v| Ok(supcon(g, v, &single, &all)?.loss)), 3f64.ln()),
            (constant_loss(&z, |g, v| Ok(multilabel_supcon(g, v, &multi, &neg)?.loss)), 6f64.ln()),
        ];
        for (a, b) in got {
            worst = worst.max((a - b).abs());
        }
    }
    (worst < 1e-9, format!("max |loss − closed form| {worst:.1e}"))
}

fn criterion_3() -> (bool, String) {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = 2 * rng.gen_range(1..=4);
        let d = rng.gen_range(2..=16);
        let z = rand_matrix(&mut rng, n, d, -1.0, 1.0);
        let singles: Vec<LabelSet> = (0..n).map(|_| ls(&[rng.gen_range(0..3)])).collect();
        for denom in [DenominatorConvention::NegativesOnly, DenominatorConvention::AllOthers] {
            let c = ContrastiveConfig {
                denominator: denom,
                weight_fn: WeightFn::Constant,
                temperature: rng.gen_range(0.05..1.0),
                ..Default::default()
            };
            let a = constant_loss(&z, |g, v| Ok(multilabel_supcon(g, v, &singles, &c)?.loss));
            let b = constant_loss(&z, |g, v| Ok(supcon(g, v, &singles, &c)?.loss));
            worst = worst.max((a - b).abs());
        }
        let twins: Vec<LabelSet> = (0..n).map(|i| ls(&[i / 2])).collect();
        let c = ContrastiveConfig {
            denominator: DenominatorConvention::AllOthers,
            temperature: rng.gen_range(0.05..1.0),
            ..Default::default()
        };
        let a = constant_loss(&z, |g, v| Ok(supcon(g, v, &twins, &c)?.loss));
        let b = constant_loss(&z, |g, v| Ok(nt_xent(g, v, &c)?.loss));
        worst = worst.max((a - b).abs());
    }
    (worst < 1e-10, format!("max |difference| {worst:.1e} over 50 batches"))
}

fn criterion_4() -> (bool, String) {
    let mut violations = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1300 + seed);
        // distinct label sets, each duplicated so every anchor has a positive
        let labels = loop {
            let k = rng.gen_range(2..=4);
            let mut sets: Vec<LabelSet> = Vec::new();
            while sets.len() < k {
                let s: LabelSet = (0..6).filter(|_| rng.gen_bool(0.35)).collect();
                if !s.is_empty() && !sets.contains(&s) {
                    sets.push(s);
                }
            }
            let far = sets.iter().any(|a| {
                sets.iter()
                    .any(|b| a.iter().filter(|l| !b.contains(*l)).count() + b.iter().filter(|l| !a.contains(*l)).count() >= 2)
            });
            if far {
                break sets.iter().flat_map(|s| [s.clone(), s.clone()]).collect::<Vec<_>>();
            }
        };
        let d = rng.gen_range(2..=16);
        let z = rand_matrix(&mut rng, labels.len(), d, -1.0, 1.0);
        let tau = rng.gen_range(0.05..1.0);
        let with = |wf: WeightFn| {
            let c = ContrastiveConfig {
                weight_fn: wf,
                temperature: tau,
                ..Default::default()
            };
            constant_loss(&z, |g, v| Ok(multilabel_supcon(g, v, &labels, &c)?.loss))
        };
        if !(with(WeightFn::Identity) > with(WeightFn::Constant)) {
            violations += 1;
        }
    }
    (violations == 0, format!("{violations} of 100 batches violate strict ordering"))
}

/// Micro-F1 with strict `p > θ`, counted directly.
fn oracle_f1(probs: &[Vec<f64>], gold: &[Vec<bool>], theta: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (row, g) in probs.iter().zip(gold) {
        for (p, &y) in row.iter().zip(g) {
            match (*p > theta, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn criterion_5() -> (bool, String) {
    let worked = tune_threshold(&[vec![0.9, 0.1], vec![0.4, 0.8]], &[ls(&[0]), ls(&[1])], 0.01).unwrap();
    let mut disagree = 0;
    for seed in 0..500 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let m = rng.gen_range(1..=8);
        let l = rng.gen_range(1..=3);
        let probs: Vec<Vec<f64>> = (0..m).map(|_| (0..l).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let gold: Vec<Vec<bool>> = (0..m).map(|_| (0..l).map(|_| rng.gen_bool(0.4)).collect()).collect();
        let sets: Vec<LabelSet> = gold
            .iter()
            .map(|g| g.iter().enumerate().filter(|(_, &y)| y).map(|(i, _)| i).collect())
            .collect();
        let scores: Vec<f64> = (1..100).map(|k| oracle_f1(&probs, &gold, k as f64 / 100.0)).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let smallest = (scores.iter().position(|&s| s == best).unwrap() + 1) as f64 / 100.0;
        let theta = tune_threshold(&probs, &sets, 0.01).unwrap();
        if oracle_f1(&probs, &gold, theta) != best || theta != smallest {
            disagree += 1;
        }
    }
    (
        worked == 0.41 && disagree == 0,
        format!("worked example {worked:.2}; {disagree} of 500 disagree with exhaustive grid"),
    )
}

fn criterion_6() -> (bool, String) {
    let mut bad = 0;
    for seed in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(11_000 + seed);
        let n = rng.gen_range(1..=12);
        let ks: Vec<u32> = (0..n).map(|_| rng.gen_range(1..100)).collect();
        let thetas: Vec<f64> = ks.iter().map(|&k| k as f64 / 100.0).collect();
        let mean = ks.iter().sum::<u32>() as f64 / n as f64;
        let lower = mean.floor();
        // nearest grid index, ties to the lower one
        let k = if mean - lower > 0.5 + 1e-9 { lower + 1.0 } else { lower };
        if zero_shot_threshold(&thetas, 0.01).unwrap() != k / 100.0 {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad} of 1000 random tables off the grid-rounded mean"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_framecl")
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "framecl {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn micro_from_report(path: &Path) -> Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["micro_f1"].as_f64().ok_or_else(|| "no micro_f1".into())
}

struct Pipeline {
    dev_f1: f64,
    test_f1: f64,
    elapsed: Duration,
    run_dir: PathBuf,
    dev_dir: PathBuf,
    test_dir: PathBuf,
}

fn pipeline(root: &Path, tag: &str, extra: &[&str]) -> Result<Pipeline, String> {
    let start = Instant::now();
    let p = |s: &str| root.join(format!("{tag}-{s}")).to_string_lossy().into_owned();
    let data = p("data");
    run(&["synth", "--out", &data, "--seed", "0"])?;
    let run_dir = p("run");
    let mut train = vec!["train", "--data", &data, "--out", &run_dir, "--seed", "0"];
    train.extend_from_slice(extra);
    run(&train)?;
    let ck = format!("{run_dir}/checkpoint.json");
    let tuned = p("tuned");
    run(&["tune-thresholds", "--checkpoint", &ck, "--dev", &format!("{data}/dev.jsonl"), "--out", &tuned])?;
    let tuned_ck = format!("{tuned}/checkpoint.json");
    let (dev_dir, test_dir) = (p("eval-dev"), p("eval-test"));
    run(&["eval", "--checkpoint", &tuned_ck, "--data", &format!("{data}/dev.jsonl"), "--out", &dev_dir])?;
    run(&["eval", "--checkpoint", &tuned_ck, "--data", &format!("{data}/test.jsonl"), "--out", &test_dir])?;
    Ok(Pipeline {
        dev_f1: micro_from_report(&Path::new(&dev_dir).join("report.json"))?,
        test_f1: micro_from_report(&Path::new(&test_dir).join("report.json"))?,
        elapsed: start.elapsed(),
        run_dir: run_dir.into(),
        dev_dir: dev_dir.into(),
        test_dir: test_dir.into(),
    })
}

fn criterion_7(root: &Path) -> ((bool, String), Option<Pipeline>) {
    let main = match pipeline(root, "a", &["--alpha", "0.5", "--weight-fn", "identity"]) {
        Ok(p) => p,
        Err(e) => return ((false, e), None),
    };
    let ablation = pipeline(root, "nocl", &["--alpha", "1.0"]);
    let ablation_note = match &ablation {
        Ok(p) => format!("; alpha=1: dev {:.4} test {:.4} ({:.0}s)", p.dev_f1, p.test_f1, p.elapsed.as_secs_f64()),
        Err(e) => format!("; alpha=1 run failed: {e}"),
    };
    let ok = main.dev_f1 >= 0.85
        && main.test_f1 >= 0.80
        && main.elapsed < Duration::from_secs(600)
        && ablation.is_ok();
    let detail = format!(
        "alpha=0.5: dev {:.4} test {:.4} ({:.0}s){ablation_note}",
        main.dev_f1,
        main.test_f1,
        main.elapsed.as_secs_f64()
    );
    ((ok, detail), Some(main))
}

fn criterion_8(root: &Path, first: &Pipeline) -> (bool, String) {
    let again = match pipeline(root, "b", &["--alpha", "0.5", "--weight-fn", "identity"]) {
        Ok(p) => p,
        Err(e) => return (false, e),
    };
    let files = [
        (first.run_dir.join("checkpoint.json"), again.run_dir.join("checkpoint.json")),
        (first.run_dir.join("metrics.jsonl"), again.run_dir.join("metrics.jsonl")),
        (first.run_dir.join("thresholds.json"), again.run_dir.join("thresholds.json")),
        (first.dev_dir.join("report.json"), again.dev_dir.join("report.json")),
        (first.test_dir.join("report.json"), again.test_dir.join("report.json")),
    ];
    let differing: Vec<String> = files
        .iter()
        .filter(|(a, b)| std::fs::read(a).ok() != std::fs::read(b).ok())
        .map(|(a, _)| a.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    (
        differing.is_empty(),
        if differing.is_empty() {
            "checkpoint, metrics, thresholds and reports byte-identical".into()
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn criterion_9() -> (bool, String) {
    match Command::new(bin()).arg("verify").output() {
        Ok(out) => {
            let lines = String::from_utf8_lossy(&out.stdout).lines().count();
            (
                out.status.code() == Some(0),
                format!("exit {:?}, {lines} properties reported", out.status.code()),
            )
        }
        Err(e) => (false, e.to_string()),
    }
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(usize, (bool, String))> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
    ];
    let (r7, first) = criterion_7(root.path());
    results.push((7, r7));
    results.push((
        8,
        match &first {
            Some(p) => criterion_8(root.path(), p),
            None => (false, "end-to-end run did not complete".into()),
        },
    ));
    results.push((9, criterion_9()));

    let mut failed = 0;
    for (n, (ok, detail)) in &results {
        println!("criterion {n}: {} - {detail}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
