//! Self-checks run by the `verify` command: gradient fidelity, closed-form
//! loss values, reduction equivalences, weight monotonicity, threshold
//! optimality and the zero-shot rounding rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dcore::{check_gradients, compare_gradients, DArray, Graph, Var};
use crate::error::Result;
use crate::losses::{
    bce_with_logits, multilabel_supcon, nt_xent, supcon, ContrastiveConfig, DenominatorConvention,
    LabelSet, WeightFn,
};
use crate::metrics::micro_f1;
use crate::model::{BatchInput, ModelConfig, ModelParams, ParamVars};
use crate::thresholds::{apply_threshold, tune_threshold, zero_shot_threshold};
use crate::train::batch_objective;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-6;
pub const SEEDS: std::ops::Range<u64> = 0..10;

/// A deliberate fault used to confirm the suite notices broken gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Flip the sign of the multi-label contrastive gradient.
    NegateMultilabelGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.as_str())
            .collect()
    }

    pub fn table(&self) -> String {
        let width = self.results.iter().map(|r| r.name.len()).max().unwrap_or(8);
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&format!(
                "{:<width$}  {}  {}\n",
                r.name,
                if r.passed { "PASS" } else { "FAIL" },
                r.detail
            ));
        }
        out
    }
}

pub fn run_all() -> VerifyReport {
    let mut results = gradient_fidelity(Mutation::None);
    results.extend(closed_forms());
    results.extend(reduction_equivalences());
    results.push(weight_monotonicity(100));
    results.push(threshold_oracle(500));
    results.push(zero_shot_rule(500));
    VerifyReport { results }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DArray {
    DArray::raw(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn random_labelsets(rng: &mut ChaCha8Rng, n: usize, pool: &[LabelSet]) -> Vec<LabelSet> {
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}

fn ls(v: &[usize]) -> LabelSet {
    LabelSet::new(v.iter().copied())
}

fn multilabel_pool() -> Vec<LabelSet> {
    vec![ls(&[0]), ls(&[0, 1]), ls(&[1, 2]), ls(&[0, 1, 2])]
}

type LossBuilder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Named gradient-check cases for one seed: `(name, params, build)`.
fn gradient_cases(seed: u64) -> Vec<(String, Vec<DArray>, LossBuilder)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * rng.gen_range(2..=4);
    let d = rng.gen_range(2..=16);
    let tau = [0.1, 0.5, 1.0][rng.gen_range(0..3)];
    let z = uniform(&mut rng, n, d);
    let mut cases: Vec<(String, Vec<DArray>, LossBuilder)> = Vec::new();

    let cfg = ContrastiveConfig {
        temperature: tau,
        ..Default::default()
    };
    let c = cfg.clone();
    cases.push((
        "nt_xent".into(),
        vec![z.clone()],
        Box::new(move |g, v| Ok(nt_xent(g, v[0], &c)?.loss)),
    ));

    let classes: Vec<LabelSet> = (0..n).map(|_| ls(&[rng.gen_range(0..3)])).collect();
    for denom in [DenominatorConvention::NegativesOnly, DenominatorConvention::AllOthers] {
        let c = ContrastiveConfig {
            denominator: denom,
            ..cfg.clone()
        };
        let labels = classes.clone();
        cases.push((
            format!("supcon/{}", denom_name(denom)),
            vec![z.clone()],
            Box::new(move |g, v| Ok(supcon(g, v[0], &labels, &c)?.loss)),
        ));
    }

    let sets = random_labelsets(&mut rng, n, &multilabel_pool());
    for denom in [DenominatorConvention::NegativesOnly, DenominatorConvention::AllOthers] {
        for wf in [WeightFn::Identity, WeightFn::Constant] {
            let c = ContrastiveConfig {
                denominator: denom,
                weight_fn: wf.clone(),
                ..cfg.clone()
            };
            let labels = sets.clone();
            cases.push((
                format!("multilabel_supcon/{}/{}", denom_name(denom), weight_name(&wf)),
                vec![z.clone()],
                Box::new(move |g, v| Ok(multilabel_supcon(g, v[0], &labels, &c)?.loss)),
            ));
        }
    }

    let l = rng.gen_range(1..=4);
    let logits = DArray::raw(n, l, (0..n * l).map(|_| rng.gen_range(-4.0..4.0)).collect());
    let targets = DArray::raw(n, l, (0..n * l).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect());
    cases.push((
        "bce_with_logits".into(),
        vec![logits],
        Box::new(move |g, v| bce_with_logits(g, v[0], &targets)),
    ));

    let model_cfg = ModelConfig {
        d_in: 16,
        d_h: 4,
        d_p: 3,
        num_labels: 3,
        init_seed: seed,
        ..Default::default()
    };
    let b = n / 2;
    let mut features = |_: ()| {
        DArray::raw(
            b,
            model_cfg.d_in,
            (0..b * model_cfg.d_in)
                .map(|_| if rng.gen_bool(0.4) { rng.gen_range(0.0..1.0) } else { 0.0 })
                .collect(),
        )
    };
    let batch = BatchInput {
        title: features(()),
        body: features(()),
        labels: sets[..b].to_vec(),
    };
    let params = ModelParams::init(&model_cfg).expect("valid tiny config");
    let alpha = 0.5;
    let c = cfg.clone();
    cases.push((
        "composite_through_model".into(),
        params.arrays().into_iter().cloned().collect(),
        Box::new(move |g, v| {
            let vars = ParamVars::from_vars(v.try_into().expect("six parameters"));
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(batch_objective(g, &vars, &batch, &model_cfg, &c, alpha, &mut mask_rng)?.root)
        }),
    ));
    cases
}

fn denom_name(d: DenominatorConvention) -> &'static str {
    match d {
        DenominatorConvention::NegativesOnly => "negatives_only",
        DenominatorConvention::AllOthers => "all_others",
    }
}

fn weight_name(w: &WeightFn) -> &'static str {
    match w {
        WeightFn::Identity => "identity",
        WeightFn::Constant => "constant",
        WeightFn::Table(_) => "table",
    }
}

/// Worst relative error per gradient case over all seeds.
pub fn gradient_fidelity(mutation: Mutation) -> Vec<PropertyResult> {
    let mut worst: Vec<(String, f64, Option<String>)> = Vec::new();
    for seed in SEEDS {
        for (i, (name, params, build)) in gradient_cases(seed).into_iter().enumerate() {
            if worst.len() <= i {
                worst.push((name.clone(), 0.0, None));
            }
            match check_gradients(&build, &params, FD_EPS) {
                Ok(mut check) => {
                    if mutation == Mutation::NegateMultilabelGradient && name.starts_with("multilabel") {
                        let flipped = check
                            .analytic
                            .iter()
                            .map(|a| DArray::raw(a.rows(), a.cols(), a.data().iter().map(|x| -x).collect()))
                            .collect();
                        check = compare_gradients(flipped, check.numeric);
                    }
                    if check.max_relative_error > worst[i].1 {
                        worst[i].1 = check.max_relative_error;
                    }
                }
                Err(e) => worst[i].2 = Some(format!("seed {seed}: {e}")),
            }
        }
    }
    worst
        .into_iter()
        .map(|(name, err, failure)| match failure {
            Some(msg) => PropertyResult::new(format!("gradient/{name}"), false, msg),
            None => PropertyResult::new(
                format!("gradient/{name}"),
                err < GRADIENT_TOLERANCE,
                format!("max rel err {err:.2e} over seeds 0..9"),
            ),
        })
        .collect()
}

fn identical_rows(n: usize) -> DArray {
    DArray::raw(n, 3, [0.6, -0.3, 0.2].repeat(n))
}

fn loss_value(build: impl Fn(&mut Graph, Var) -> Result<Var>, z: &DArray) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(z.clone());
    let out = build(&mut g, v)?;
    Ok(g.scalar(out))
}

/// Identical embeddings make every similarity 1, leaving only counts.
pub fn closed_forms() -> Vec<PropertyResult> {
    let z = identical_rows(4);
    let single = [ls(&[0]), ls(&[0]), ls(&[1]), ls(&[1])];
    let multi = [ls(&[1]), ls(&[1]), ls(&[2, 3]), ls(&[2, 3])];
    type Case = (&'static str, f64, Box<dyn Fn(&mut Graph, Var, &ContrastiveConfig) -> Result<Var>>);
    let cases: Vec<Case> = vec![
        ("nt_xent", 3f64.ln(), Box::new(|g, v, c| Ok(nt_xent(g, v, c)?.loss))),
        (
            "supcon/negatives_only",
            2f64.ln(),
            Box::new(move |g, v, c| Ok(supcon(g, v, &single, c)?.loss)),
        ),
        (
            "supcon/all_others",
            3f64.ln(),
            Box::new(move |g, v, c| {
                let single = [ls(&[0]), ls(&[0]), ls(&[1]), ls(&[1])];
                let c = ContrastiveConfig {
                    denominator: DenominatorConvention::AllOthers,
                    ..c.clone()
                };
                Ok(supcon(g, v, &single, &c)?.loss)
            }),
        ),
        (
            "multilabel_supcon/identity",
            6f64.ln(),
            Box::new(move |g, v, c| Ok(multilabel_supcon(g, v, &multi, c)?.loss)),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, want, build)| {
            let r = (|| {
                let mut worst = 0.0f64;
                for tau in [0.05, 0.1, 1.0] {
                    let c = ContrastiveConfig {
                        temperature: tau,
                        ..Default::default()
                    };
                    let got = loss_value(|g, v| build(g, v, &c), &z)?;
                    worst = worst.max((got - want).abs());
                }
                Ok((worst < 1e-9, format!("|loss − {want:.6}| ≤ {worst:.1e}")))
            })();
            PropertyResult::from_result(&format!("closed_form/{name}"), r)
        })
        .collect()
}

/// Weight-one multi-label loss on singletons equals the single-label loss;
/// single-label loss with one class per view pair equals the SimCLR loss.
pub fn reduction_equivalences() -> Vec<PropertyResult> {
    let mut worst_ml = 0.0f64;
    let mut worst_nt = 0.0f64;
    let r = (|| -> Result<()> {
        for seed in SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 2 * rng.gen_range(2..=4);
            let d = rng.gen_range(2..=16);
            let z = uniform(&mut rng, n, d);
            let classes: Vec<LabelSet> = (0..n).map(|_| ls(&[rng.gen_range(0..3)])).collect();
            for denom in [DenominatorConvention::NegativesOnly, DenominatorConvention::AllOthers] {
                let c = ContrastiveConfig {
                    denominator: denom,
                    weight_fn: WeightFn::Constant,
                    ..Default::default()
                };
                let a = loss_value(|g, v| Ok(multilabel_supcon(g, v, &classes, &c)?.loss), &z)?;
                let b = loss_value(|g, v| Ok(supcon(g, v, &classes, &c)?.loss), &z)?;
                worst_ml = worst_ml.max((a - b).abs());
            }
            let twins: Vec<LabelSet> = (0..n).map(|i| ls(&[i / 2])).collect();
            let c = ContrastiveConfig {
                denominator: DenominatorConvention::AllOthers,
                ..Default::default()
            };
            let a = loss_value(|g, v| Ok(supcon(g, v, &twins, &c)?.loss), &z)?;
            let b = loss_value(|g, v| Ok(nt_xent(g, v, &c)?.loss), &z)?;
            worst_nt = worst_nt.max((a - b).abs());
        }
        Ok(())
    })();
    match r {
        Ok(()) => vec![
            PropertyResult::new(
                "reduction/multilabel_w1_eq_supcon",
                worst_ml < 1e-10,
                format!("max |diff| {worst_ml:.1e}"),
            ),
            PropertyResult::new(
                "reduction/supcon_all_others_eq_nt_xent",
                worst_nt < 1e-10,
                format!("max |diff| {worst_nt:.1e}"),
            ),
        ],
        Err(e) => vec![PropertyResult::new("reduction", false, format!("error: {e}"))],
    }
}

/// Labels for a monotonicity batch: every row has a positive twin, every
/// negative pair has Δ ≥ 1 and at least one pair has Δ ≥ 2.
fn monotonicity_labels(rng: &mut ChaCha8Rng) -> Vec<LabelSet> {
    loop {
        let groups = rng.gen_range(2..=4);
        let mut distinct: Vec<LabelSet> = Vec::new();
        while distinct.len() < groups {
            let s: LabelSet = (0..5).filter(|_| rng.gen_bool(0.4)).collect();
            if !s.is_empty() && !distinct.contains(&s) {
                distinct.push(s);
            }
        }
        let has_far = distinct
            .iter()
            .enumerate()
            .any(|(i, a)| distinct[i + 1..].iter().any(|b| crate::losses::delta(a, b) >= 2));
        if has_far {
            return distinct.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
        }
    }
}

pub fn weight_monotonicity(batches: usize) -> PropertyResult {
    let r = (|| {
        let mut violations = 0;
        let mut min_gap = f64::INFINITY;
        for b in 0..batches {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + b as u64);
            let labels = monotonicity_labels(&mut rng);
            let d = rng.gen_range(2..=16);
            let z = uniform(&mut rng, labels.len(), d);
            let loss = |wf: WeightFn| {
                let c = ContrastiveConfig {
                    weight_fn: wf,
                    ..Default::default()
                };
                loss_value(|g, v| Ok(multilabel_supcon(g, v, &labels, &c)?.loss), &z)
            };
            let gap = loss(WeightFn::Identity)? - loss(WeightFn::Constant)?;
            min_gap = min_gap.min(gap);
            if !(gap > 0.0) {
                violations += 1;
            }
        }
        Ok((
            violations == 0,
            format!("{batches} batches, {violations} violations, min gap {min_gap:.3e}"),
        ))
    })();
    PropertyResult::from_result("weight_monotonicity", r)
}

pub fn threshold_oracle(instances: usize) -> PropertyResult {
    let r = (|| {
        let worked = tune_threshold(&[vec![0.9, 0.1], vec![0.4, 0.8]], &[ls(&[0]), ls(&[1])], 0.01)?;
        let mut bad = Vec::new();
        for t in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + t as u64);
            let m = rng.gen_range(1..=8);
            let l = rng.gen_range(1..=3);
            let probs: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..l).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let gold: Vec<LabelSet> = (0..m)
                .map(|_| (0..l).filter(|_| rng.gen_bool(0.4)).collect())
                .collect();
            let theta = tune_threshold(&probs, &gold, 0.01)?;
            let mut best = (f64::NEG_INFINITY, 0.0);
            for k in 1..100 {
                let th = k as f64 / 100.0;
                let f = micro_f1(&apply_threshold(&probs, th), &gold)?;
                if f > best.0 {
                    best = (f, th);
                }
            }
            let f = micro_f1(&apply_threshold(&probs, theta), &gold)?;
            if f != best.0 || theta != best.1 {
                bad.push(t);
            }
        }
        Ok((
            worked == 0.41 && bad.is_empty(),
            format!(
                "worked example θ={worked:.2}; {} of {instances} instances disagree",
                bad.len()
            ),
        ))
    })();
    PropertyResult::from_result("threshold_oracle", r)
}

pub fn zero_shot_rule(tables: usize) -> PropertyResult {
    let r = (|| {
        let mut bad = 0;
        for t in 0..tables {
            let mut rng = ChaCha8Rng::seed_from_u64(4000 + t as u64);
            let ks: Vec<i64> = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(1..100)).collect();
            let thetas: Vec<f64> = ks.iter().map(|&k| k as f64 / 100.0).collect();
            let (sum, n) = (ks.iter().sum::<i64>(), ks.len() as i64);
            // nearest k to sum/n, smaller k on ties
            let want = (1..100)
                .min_by_key(|&k: &i64| ((k * n - sum).abs(), k))
                .expect("grid non-empty");
            if zero_shot_threshold(&thetas, 0.01)? != want as f64 / 100.0 {
                bad += 1;
            }
        }
        Ok((bad == 0, format!("{bad} of {tables} random tables disagree")))
    })();
    PropertyResult::from_result("zero_shot_rule", r)
}
