// Acceptance run. One PASS/FAIL line per criterion; exits non-zero on any failure.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lens_cli::config::TrainFile;
use lens_core::advantage::{compute_advantages, AdvantageConfig, AdvantageMode};
use lens_core::calibration::{calibrate_group, CalibrationConfig};
use lens_core::simulator::task::{generate_task, measure_negative_fraction, SyntheticTask};
use lens_core::simulator::{pass_at_k_single, train, train_with, Algorithm, TrainConfig};
use lens_core::theory::{consistency_check, run_suite, EnumerableTask, Suite, VerifyConfig};
use lens_core::types::{make_group, GroupKind, GroupSample, Question, ResponseGroup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn crate_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn hardtail() -> (SyntheticTask, TrainConfig) {
    let text = std::fs::read_to_string(crate_path("configs/hardtail.toml")).unwrap();
    let file = TrainFile::parse(&text).unwrap();
    let task = generate_task(&file.task_spec().unwrap()).unwrap();
    (task, file.train_config().unwrap())
}

fn loss_gradient() -> Outcome {
    let start = Instant::now();
    let report = run_suite(Suite::Theorem1, &VerifyConfig::default()).unwrap();
    let took = start.elapsed();
    let e = report.loss_gradient.unwrap();
    outcome(
        e.value <= 1e-6 && took < Duration::from_secs(10),
        format!("{} tabular trials, max rel err {:.2e}, {:.2}s", e.trials, e.value, took.as_secs_f64()),
    )
}

fn value_gradient() -> Outcome {
    let start = Instant::now();
    let cfg = VerifyConfig::default();
    let grad = run_suite(Suite::Theorem2, &cfg).unwrap().value_gradient.unwrap();
    let weight = run_suite(Suite::Weight, &cfg).unwrap().weight_identity.unwrap();
    let took = start.elapsed();
    outcome(
        grad.value <= 1e-4 && weight.value <= 1e-6 && weight.trials == 999 && took < Duration::from_secs(30),
        format!(
            "max rel err {:.2e} over {} tasks, weight identity {:.2e} over {} points, {:.2}s",
            grad.value,
            grad.trials,
            weight.value,
            weight.trials,
            took.as_secs_f64()
        ),
    )
}

fn consistency() -> Outcome {
    let c = consistency_check(&EnumerableTask::multiple_choice_toy(), 1e-8, 1e-6).unwrap();
    outcome(
        c.entry.passed,
        format!(
            "uniform {:.2e}, on-policy {:.2e} at eps 1e-6; unsmoothed {:.2e}",
            c.uniform_norm, c.on_policy_norm, c.exact_norm
        ),
    )
}

/// Random group of size `g`; `kind` forces mixed or negative rewards.
fn random_group(rng: &mut ChaCha8Rng, g: usize, kind: Option<GroupKind>) -> ResponseGroup {
    let p: f64 = rng.random();
    let mut rewards: Vec<f64> = (0..g).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect();
    match kind {
        Some(GroupKind::Mixed) => {
            let i = rng.random_range(0..g);
            let j = (i + rng.random_range(1..g)) % g;
            rewards[i] = 1.0;
            rewards[j] = 0.0;
        }
        Some(GroupKind::Negative) => rewards.iter_mut().for_each(|r| *r = 0.0),
        _ => {}
    }
    let samples = rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let len = rng.random_range(1..200usize);
            let per_token = -rng.random::<f64>() * 3.0;
            GroupSample::new(format!("s{i}"), per_token * len as f64, len, r)
        })
        .collect();
    make_group(Question::opaque("q"), samples).unwrap()
}

fn fuzz_corpus(seed: u64, n: usize, kind: Option<GroupKind>) -> Vec<ResponseGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let g = rng.random_range(2..=64usize);
            random_group(&mut rng, g, kind)
        })
        .collect()
}

fn sign_invariance() -> Outcome {
    let corpus = fuzz_corpus(11, 10_000, Some(GroupKind::Mixed));
    let mut violations = 0;
    for g in &corpus {
        let cal = compute_advantages(calibrate_group(g, &CalibrationConfig::default()).unwrap(), &AdvantageConfig::default());
        for (s, a) in g.samples().iter().zip(&cal.advantages) {
            let ok = if s.reward == 1.0 { *a > 0.0 } else { *a < 0.0 };
            violations += usize::from(!ok);
        }
    }
    outcome(violations == 0, format!("{} groups, {violations} violations", corpus.len()))
}

fn boundedness() -> Outcome {
    let mut corpus = fuzz_corpus(11, 10_000, Some(GroupKind::Mixed));
    corpus.extend(fuzz_corpus(12, 10_000, Some(GroupKind::Negative)));
    let mut out_of_range = 0;
    let mut worst_top = 0.0f64;
    for g in &corpus {
        let size = g.size() as f64;
        let cal = calibrate_group(g, &CalibrationConfig::default()).unwrap();
        for (s, r) in g.samples().iter().zip(&cal.calibrated_rewards) {
            if s.reward != 1.0 && !(*r >= -1.0 / size && *r < 0.0) {
                out_of_range += 1;
            }
        }
        if g.kind() == GroupKind::Negative {
            let top = (0..g.size())
                .max_by(|&a, &b| cal.normalized_probs[a].total_cmp(&cal.normalized_probs[b]))
                .unwrap();
            worst_top = worst_top.max((cal.calibrated_rewards[top] + 1.0 / size).abs());
        }
    }
    outcome(
        out_of_range == 0 && worst_top <= 1e-12,
        format!("{} groups, {out_of_range} out of range, top-sample gap {worst_top:.1e}", corpus.len()),
    )
}

// z-scores with population std, zeros on a degenerate group
fn reference_grpo(rewards: &[f64], eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < eps || std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

fn grpo_reduction() -> Outcome {
    let corpus = fuzz_corpus(13, 1_000, None);
    let cfg = AdvantageConfig { mode: AdvantageMode::GrpoBaseline, ..Default::default() };
    let mut mismatches = 0;
    let mut negative = 0;
    for g in &corpus {
        let cal = compute_advantages(calibrate_group(g, &CalibrationConfig::default()).unwrap(), &cfg);
        let raw: Vec<f64> = g.rewards().collect();
        let expected = if g.kind() == GroupKind::Negative {
            negative += 1;
            vec![0.0; raw.len()]
        } else {
            reference_grpo(&raw, cfg.std_epsilon)
        };
        mismatches += usize::from(cal.advantages != expected);
    }
    outcome(mismatches == 0, format!("{} groups ({negative} negative), {mismatches} mismatches", corpus.len()))
}

fn dichotomy() -> Outcome {
    let (task, mut cfg) = hardtail();
    let initial = measure_negative_fraction(&task.initial_policy, &task.task, cfg.group_size, 4096, 1).unwrap();
    cfg.eval_interval = cfg.steps;

    let mut grpo_nonzero = 0;
    let mut grpo_steps = 0;
    train_with(&task, &cfg, Algorithm::Grpo, |m| {
        grpo_steps += 1;
        grpo_nonzero += usize::from(m.grad_norm_from_negative_groups != 0.0);
        Ok(())
    })
    .unwrap();

    let mut first = TrainConfig { steps: 1, eval_interval: 1, ..cfg.clone() };
    first.eval_samples = 1;
    let lens = train(&task, &first, Algorithm::Lens).unwrap();
    let lens_first = lens.metrics[0].grad_norm_from_negative_groups;

    outcome(
        initial >= 0.3 && grpo_nonzero == 0 && lens_first > 0.0,
        format!(
            "initial negative fraction {initial:.3}; GRPO nonzero on {grpo_nonzero}/{grpo_steps} steps; LENS step-1 norm {lens_first:.3e}"
        ),
    )
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

fn pass_at_k_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut cases = 0;
    for n in 1..=8usize {
        for c in 0..=n {
            // first c positions are correct
            for k in 1..=n {
                let (mut hit, mut total) = (0u64, 0u64);
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize == k {
                        total += 1;
                        hit += u64::from(mask & ((1u32 << c) - 1) != 0);
                    }
                }
                let brute = hit as f64 / total as f64;
                cases += 1;
                mismatches += usize::from(pass_at_k_single(n, c, k).unwrap() != brute);
            }
        }
    }
    let worked = pass_at_k_single(16, 4, 8).unwrap();
    let expected = 1.0 - binomial(12, 8) as f64 / binomial(16, 8) as f64;
    let gap = (worked - expected).abs();
    outcome(
        mismatches == 0 && gap <= 1e-10,
        format!("{cases} cases, {mismatches} mismatches; n=16 c=4 k=8 gives {worked:.10}"),
    )
}

fn directional() -> Outcome {
    let start = Instant::now();
    let (task, cfg) = hardtail();
    let mut pass8 = [0.0f64; 2];
    let mut hard = [0.0f64; 2];
    let seeds = 5u64;
    for seed in 0..seeds {
        for (i, alg) in [Algorithm::Lens, Algorithm::Grpo].into_iter().enumerate() {
            let run = train(&task, &TrainConfig { seed, ..cfg.clone() }, alg).unwrap();
            let last = run.final_eval().unwrap();
            pass8[i] += last.pass_at_k[&8] / seeds as f64;
            hard[i] += last.hard_mean_reward.unwrap() / seeds as f64;
        }
    }
    let took = start.elapsed();
    outcome(
        pass8[0] >= pass8[1] && hard[0] > hard[1] && took <= Duration::from_secs(600),
        format!(
            "pass@8 LENS {:.4} vs GRPO {:.4}; hard reward LENS {:.4} vs GRPO {:.4}; {:.1}s",
            pass8[0],
            pass8[1],
            hard[0],
            hard[1],
            took.as_secs_f64()
        ),
    )
}

fn golden_and_verify() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_lens");
    let out = Command::new(bin)
        .arg("calibrate")
        .arg("-i")
        .arg(crate_path("tests/fixtures/trajectories.jsonl"))
        .output()
        .unwrap();
    let golden = std::fs::read(crate_path("tests/fixtures/advantages.golden.jsonl")).unwrap();
    let same = out.status.success() && out.stdout == golden;
    let verify = Command::new(bin).args(["verify", "--suite", "all"]).output().unwrap();
    outcome(
        same && verify.status.code() == Some(0),
        format!("golden match {same}; verify exit {:?}", verify.status.code()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("likelihood loss gradient vs finite differences", loss_gradient),
        ("population gradient vs value gradient, weight identity", value_gradient),
        ("stationary at the smoothed optimum", consistency),
        ("sign invariance on mixed groups", sign_invariance),
        ("calibrated reward bounds", boundedness),
        ("baseline mode equals plain z-scores", grpo_reduction),
        ("negative-group gradient dichotomy", dichotomy),
        ("pass@k vs subset enumeration", pass_at_k_oracle),
        ("hard-tail learning, LENS vs GRPO", directional),
        ("golden advantages and verify", golden_and_verify),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        failed += usize::from(!r.passed);
        println!("[{}] {:>2} {name}: {}", if r.passed { "PASS" } else { "FAIL" }, i + 1, r.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
