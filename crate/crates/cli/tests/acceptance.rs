//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line with the measured margin. Run with:
//!
//! ```bash
//! cargo test -p edgegame-cli --test acceptance -- --nocapture
//! ```
//!
//! Headline comparisons are directional and property-based at desk scale;
//! every tolerance is pinned here in code.

use std::path::PathBuf;
use std::time::Instant;

use edgegame::belief::{update_belief, BeliefParams, BeliefState, ObservationContext, ResponseClass};
use edgegame::cost::{
    detection_time, flops_per_token, memory_latency, ModelProfile, ServerSpec,
};
use edgegame::defender::{predict_malicious_count, solve_allocation, PromptCost};
use edgegame::detector::{analytic_f1, detect, f1_score, ConfusionRates};
use edgegame::game::{epsilon_best_response_check, softmin_strategy, Direction};
use edgegame::oracle::{brute_force_allocation, sorted_prefix_count};
use edgegame::rng::stream;
use edgegame::sim::{compare_strategies, SimConfig, Strategy};
use edgegame::vdb::SimilarityPair;
use edgegame::workload::{count_tokens, Label, PlayerKind};
use rand::Rng;
use sha2::{Digest, Sha256};

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario_config() -> SimConfig {
    let path = workspace_root().join("configs/players20.json");
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_str(&text).expect("scenario config parses")
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn criterion_1_cost_model_exactness() {
    let start = Instant::now();
    let rel = |got: f64, want: f64| {
        if want == 0.0 {
            assert_eq!(got, 0.0);
            0.0
        } else {
            let r = ((got - want) / want).abs();
            assert!(r <= 1e-12, "got {got}, want {want}");
            r
        }
    };

    rel(flops_per_token(&ModelProfile::new(0, 0, 0, 0)), 0.0);
    rel(flops_per_token(&ModelProfile::new(500, 1, 2, 3)), 1012.0);
    rel(
        flops_per_token(&ModelProfile::new(1_000_000_000, 12, 512, 768)),
        2_009_437_184.0,
    );

    let spec = ServerSpec::new(1e13, 1e12);
    rel(memory_latency(&ModelProfile::new(0, 0, 0, 0), &spec).unwrap(), 0.0);
    rel(memory_latency(&ModelProfile::new(1_000_000_000, 0, 0, 0), &spec).unwrap(), 0.002);

    // Memory-bound: per-token 0.002 s; compute-bound: per-token 1e-3 s.
    rel(
        detection_time(100, &ModelProfile::new(1_000_000_000, 0, 0, 0), &spec).unwrap(),
        0.2,
    );
    rel(
        detection_time(10, &ModelProfile::new(5_000_000, 0, 0, 0), &ServerSpec::new(1e10, 1e12))
            .unwrap(),
        0.01,
    );
    rel(detection_time(0, &ModelProfile::new(5_000_000, 0, 0, 0), &spec).unwrap(), 0.0);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("[PASS] criterion 1: cost-model hand oracles reproduced to rel 1e-12 in {elapsed:?}");
}

#[test]
fn criterion_2_allocation_optimality() {
    let start = Instant::now();
    let instances = 1000;
    for i in 0..instances {
        let mut rng = stream(0xA110C, &[i]);
        let n = rng.random_range(0..=12usize);
        // Integer-valued coefficients in [-1e6, 1e6]: every subset sum is
        // exact in f64, so "exact equality" is meaningful.
        let coefficients: Vec<f64> =
            (0..n).map(|_| f64::from(rng.random_range(-1_000_000..=1_000_000))).collect();
        let budget = rng.random_range(0..=n);
        let costs: Vec<PromptCost> = coefficients
            .iter()
            .enumerate()
            .map(|(t, &c)| PromptCost { task_ref: t, coefficient: c, belief_mu: 0.5 })
            .collect();
        let greedy = solve_allocation(&costs, budget).unwrap().objective;
        let (exhaustive, _) = brute_force_allocation(&coefficients, budget).unwrap();
        assert_eq!(
            greedy, exhaustive,
            "instance {i}: greedy {greedy} != exhaustive {exhaustive} on {coefficients:?}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 2: {instances} allocation instances matched the exhaustive optimum \
         exactly in {elapsed:?}"
    );
}

#[test]
fn criterion_3_budget_prediction_equivalence() {
    let instances = 1000;
    let mut mismatches = 0;
    for i in 0..instances {
        let mut rng = stream(0xB4D6E7, &[i]);
        let n = rng.random_range(0..=14usize);
        let coefficients: Vec<f64> =
            (0..n).map(|_| rng.random_range(-1e6..1e6)).collect();
        let u_cost = rng.random_range(-1e6..1e6);
        let costs: Vec<PromptCost> = coefficients
            .iter()
            .enumerate()
            .map(|(t, &c)| PromptCost { task_ref: t, coefficient: c, belief_mu: 0.5 })
            .collect();

        let predicted = predict_malicious_count(&costs, u_cost).unwrap();
        let prefix = sorted_prefix_count(&coefficients, u_cost);
        let trace = edgegame::oracle::marginal_trace_count(&costs, u_cost).unwrap();
        if predicted != prefix || predicted != trace {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
    println!(
        "[PASS] criterion 3: budget prediction equals sorted-prefix and marginal-trace rules on \
         {instances} instances, zero mismatches"
    );
}

#[test]
fn criterion_4_belief_correctness() {
    let params = BeliefParams {
        gamma1: 0.8,
        gamma2: 0.4,
        gamma3: 0.7,
        gamma4: 0.3,
        gamma5: 0.9,
        gamma6: 0.2,
        d_epsilon: 0.01,
    };

    // Benign trace: response benign, per-token latency exactly ideal.
    let benign = ObservationContext {
        role: PlayerKind::Benign,
        response_class: ResponseClass::Benign,
        d_prev: 1.0,
        o_prompt_prev: 0,
        o_resp_prev: 100,
        o_pred: 0,
        sim: SimilarityPair::NEUTRAL,
    };
    let out = update_belief(&BeliefState::uniform(), &benign, &params).unwrap();
    assert!((out.mu - 2.0 / 3.0).abs() <= 1e-9, "benign trace gave {}", out.mu);

    // Defender trace: blocked response, similarity (0.3, 0.7).
    let defender = ObservationContext {
        role: PlayerKind::Defender,
        response_class: ResponseClass::Blocked,
        d_prev: 0.0,
        o_prompt_prev: 0,
        o_resp_prev: 0,
        o_pred: 0,
        sim: SimilarityPair { p_safe: 0.3, p_unsafe: 0.7 },
    };
    let out = update_belief(&BeliefState::uniform(), &defender, &params).unwrap();
    assert!((out.mu - 0.27 / 0.41).abs() <= 1e-9, "defender trace gave {}", out.mu);

    // Attacker trace: blocked, expected 50 tokens, saw 100, prompt was 20.
    let malicious = ObservationContext {
        role: PlayerKind::Malicious,
        response_class: ResponseClass::Blocked,
        d_prev: 0.0,
        o_prompt_prev: 20,
        o_resp_prev: 100,
        o_pred: 50,
        sim: SimilarityPair::NEUTRAL,
    };
    let out = update_belief(&BeliefState::uniform(), &malicious, &params).unwrap();
    assert!((out.mu - 0.35 / 0.59).abs() <= 1e-9, "attacker trace gave {}", out.mu);

    // 1e5 randomized updates stay in [0,1]; extreme priors absorb.
    let mut rng = stream(0xBE11EF, &[0]);
    for i in 0..100_000u32 {
        let role = match i % 3 {
            0 => PlayerKind::Benign,
            1 => PlayerKind::Malicious,
            _ => PlayerKind::Defender,
        };
        let ctx = ObservationContext {
            role,
            response_class: if rng.random_range(0..2) == 0 {
                ResponseClass::Benign
            } else {
                ResponseClass::Blocked
            },
            d_prev: rng.random_range(0.0..10.0),
            o_prompt_prev: rng.random_range(0..500),
            o_resp_prev: rng.random_range(1..500),
            o_pred: rng.random_range(0..500),
            sim: SimilarityPair {
                p_safe: rng.random_range(0.0..1.0),
                p_unsafe: rng.random_range(0.0..1.0),
            },
        };
        let prior = BeliefState::new(rng.random_range(0.0..=1.0));
        let posterior = update_belief(&prior, &ctx, &params).unwrap();
        assert!((0.0..=1.0).contains(&posterior.mu));
        assert_eq!(update_belief(&BeliefState::new(0.0), &ctx, &params).unwrap().mu, 0.0);
        assert_eq!(update_belief(&BeliefState::new(1.0), &ctx, &params).unwrap().mu, 1.0);
    }
    println!(
        "[PASS] criterion 4: hand-traced posteriors within 1e-9; 1e5 random updates bounded \
         with absorbing extremes"
    );
}

#[test]
fn criterion_5_detector_calibration() {
    let rates = ConfusionRates { tpr: 0.9, fpr: 0.05 };
    let n = 10_000u64;
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        // Balanced corpus: even indices malicious, odd benign.
        let label = if i % 2 == 0 { Label::Malicious } else { Label::Benign };
        let mut rng = stream(0xDE7EC7, &[i]);
        let verdict = detect(label, &rates, &mut rng);
        match (label, verdict.malicious) {
            (Label::Malicious, true) => tp += 1,
            (Label::Malicious, false) => fn_ += 1,
            (Label::Benign, true) => fp += 1,
            (Label::Benign, false) => tn += 1,
        }
    }
    let empirical_tpr = tp as f64 / (tp + fn_) as f64;
    let empirical_fpr = fp as f64 / (fp + tn) as f64;
    assert!((empirical_tpr - 0.9).abs() <= 0.02, "empirical tpr {empirical_tpr}");
    assert!((empirical_fpr - 0.05).abs() <= 0.02, "empirical fpr {empirical_fpr}");

    let realized_f1 = f1_score(tp, fp, fn_).unwrap();
    let expected_f1 = analytic_f1(&rates, 0.5).unwrap();
    assert!(
        (realized_f1 - expected_f1).abs() <= 0.02,
        "realized f1 {realized_f1} vs analytic {expected_f1}"
    );
    println!(
        "[PASS] criterion 5: calibration on 10k prompts: tpr {empirical_tpr:.4} fpr \
         {empirical_fpr:.4} f1 {realized_f1:.4} (analytic {expected_f1:.4})"
    );
}

#[test]
fn criterion_6_directional_reproduction() {
    let start = Instant::now();
    let root = workspace_root();
    let base = scenario_config();

    // Scenario preconditions: 20 players (4 malicious), 5 stages, 3 edges,
    // expected-savings costs, and demand at least 100x detection compute
    // for every prompt in both corpora.
    assert_eq!(base.benign_players + base.malicious_players, 20);
    assert_eq!(base.malicious_players, 4);
    assert_eq!(base.stages, 5);
    assert_eq!(base.edges.len(), 3);
    assert_eq!(base.cost_mode, edgegame::defender::CostMode::ExpectedSavings);
    let cf_det = flops_per_token(&base.edges[0].detector);
    let cf_llm = flops_per_token(&base.cloud.llm);
    for file in ["data/benign.jsonl", "data/malicious.jsonl"] {
        for prompt in edgegame::workload::load_dataset(&root.join(file)).unwrap() {
            let o_k = count_tokens(&prompt.text, base.token_mode);
            let f_k = (o_k + u64::from(base.expected_output_tokens)) as f64 * cf_llm;
            assert!(
                f_k >= 100.0 * o_k as f64 * cf_det,
                "demand dominance violated for {:?}",
                prompt.text
            );
        }
    }

    let strategies = [
        Strategy::Gmdra,
        Strategy::None,
        Strategy::Full,
        Strategy::Random(0.5),
        Strategy::Genetic,
    ];
    // Dataset paths inside the config are relative to its own directory.
    let config_dir = root.join("configs");
    for seed in 1..=5u64 {
        let config = SimConfig { seed, ..base.clone() };
        let runs = compare_strategies(&config, &config_dir, &strategies).unwrap();
        let report = |s: Strategy| &runs.iter().find(|(x, _)| *x == s).unwrap().1;
        let gmdra = report(Strategy::Gmdra);
        let none = report(Strategy::None);
        let full = report(Strategy::Full);

        // (a) cumulative benign latency per token.
        let cum = |r: &edgegame::sim::RunReport| {
            r.stages.last().unwrap().cum_avg_latency_per_token_s
        };
        assert!(
            cum(gmdra) <= cum(none),
            "seed {seed}: latency {} vs none {}",
            cum(gmdra),
            cum(none)
        );
        assert!(
            cum(gmdra) <= cum(full),
            "seed {seed}: latency {} vs full {}",
            cum(gmdra),
            cum(full)
        );

        // (b) resource proxies against none-detection.
        assert!(
            gmdra.cumulative.gpu_mem_proxy_bytes <= none.cumulative.gpu_mem_proxy_bytes,
            "seed {seed}: mem {} vs none {}",
            gmdra.cumulative.gpu_mem_proxy_bytes,
            none.cumulative.gpu_mem_proxy_bytes
        );
        assert!(
            gmdra.cumulative.gpu_util_proxy <= none.cumulative.gpu_util_proxy,
            "seed {seed}: util {} vs none {}",
            gmdra.cumulative.gpu_util_proxy,
            none.cumulative.gpu_util_proxy
        );

        // (c) objective against every baseline.
        for baseline in [Strategy::None, Strategy::Full, Strategy::Random(0.5), Strategy::Genetic]
        {
            let other = report(baseline);
            assert!(
                gmdra.cumulative.objective <= other.cumulative.objective + 1e-6,
                "seed {seed}: objective {} vs {} {}",
                gmdra.cumulative.objective,
                baseline,
                other.cumulative.objective
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 6: gmdra dominates on latency, memory, utilization, and objective \
         across 5 seeds in {elapsed:?}"
    );
}

#[test]
fn criterion_7_equilibrium_diagnostics() {
    // Exact solver: zero-gap best response against every same-budget subset.
    for i in 0..100u64 {
        let mut rng = stream(0xE9B57, &[i]);
        let n = rng.random_range(1..=10usize);
        let coefficients: Vec<f64> =
            (0..n).map(|_| f64::from(rng.random_range(-1_000_000..=1_000_000))).collect();
        let budget = rng.random_range(0..=n);
        let costs: Vec<PromptCost> = coefficients
            .iter()
            .enumerate()
            .map(|(t, &c)| PromptCost { task_ref: t, coefficient: c, belief_mu: 0.5 })
            .collect();
        let current = solve_allocation(&costs, budget).unwrap().objective;
        let mut deviations = Vec::new();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == budget {
                deviations.push(
                    (0..n).filter(|b| mask & (1 << b) != 0).map(|b| coefficients[b]).sum(),
                );
            }
        }
        let report =
            epsilon_best_response_check(current, &deviations, Direction::Minimize, 0.0);
        assert!(report.pass, "instance {i}: gap {}", report.gap);
        assert_eq!(report.gap, 0.0);
    }

    // Softmin at vanishing temperature is within 1e-6 of the pure best
    // response.
    let mut worst_gap: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = stream(0x50F7, &[i]);
        let edges = rng.random_range(2..=5usize);
        let latencies: Vec<f64> = (0..edges).map(|_| rng.random_range(0.01..2.0)).collect();
        let strategy = softmin_strategy(&latencies, 1e-6).unwrap();
        let value: f64 = strategy.weights.iter().zip(&latencies).map(|(w, d)| w * d).sum();
        let report = epsilon_best_response_check(value, &latencies, Direction::Minimize, 1e-6);
        assert!(report.pass, "instance {i}: softmin gap {}", report.gap);
        worst_gap = worst_gap.max(report.gap);
    }
    println!(
        "[PASS] criterion 7: solver best-response gap exactly 0; softmin worst gap {worst_gap:.3e} \
         <= 1e-6"
    );
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let root = workspace_root();
    let config = root.join("configs/players20.json");
    let bin = env!("CARGO_BIN_EXE_edgegame");
    let mut reports = Vec::new();
    for run_dir in ["acc-determinism-1", "acc-determinism-2"] {
        let out = std::env::temp_dir().join(run_dir);
        let status = std::process::Command::new(bin)
            .args(["run", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--out"])
            .arg(&out)
            .status()
            .expect("binary runs");
        assert!(status.success());
        reports.push(std::fs::read(out.join("report.json")).expect("report written"));
    }
    assert_eq!(reports[0], reports[1], "report.json bytes differ between identical runs");
    let hash = sha256_hex(&reports[0]);
    println!("[PASS] criterion 8: byte-identical report.json across runs, sha256 {hash}");
}

#[test]
fn criterion_9_mixed_equals_pure() {
    // Linear objective over a box-and-budget polytope: the best mixed
    // (fractional) strategy value equals the best pure one. The exact
    // solver optimizes over the full relaxation; integer coefficients make
    // the equality bit-exact.
    for i in 0..200u64 {
        let mut rng = stream(0x7E0, &[i]);
        let n = rng.random_range(1..=12usize);
        let coefficients: Vec<f64> =
            (0..n).map(|_| f64::from(rng.random_range(-1_000_000..=1_000_000))).collect();
        let budget = rng.random_range(0..=n);
        let costs: Vec<PromptCost> = coefficients
            .iter()
            .enumerate()
            .map(|(t, &c)| PromptCost { task_ref: t, coefficient: c, belief_mu: 0.5 })
            .collect();
        let mixed_optimum = solve_allocation(&costs, budget).unwrap().objective;
        let (pure_optimum, _) = brute_force_allocation(&coefficients, budget).unwrap();
        assert_eq!(mixed_optimum, pure_optimum, "instance {i}");

        // Random interior feasible strategies never beat it.
        for _ in 0..20 {
            let mut pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = pi.iter().sum();
            if total > 0.0 {
                let scale = budget as f64 / total;
                for p in &mut pi {
                    *p = (*p * scale).min(1.0);
                }
            }
            // Repair any mass lost to the [0,1] cap.
            let mut deficit = budget as f64 - pi.iter().sum::<f64>();
            for p in &mut pi {
                if deficit <= 0.0 {
                    break;
                }
                let headroom = 1.0 - *p;
                let add = headroom.min(deficit);
                *p += add;
                deficit -= add;
            }
            let value: f64 = pi.iter().zip(&coefficients).map(|(p, c)| p * c).sum();
            assert!(
                value >= mixed_optimum - 1e-6,
                "instance {i}: fractional strategy value {value} beat optimum {mixed_optimum}"
            );
        }
    }
    println!(
        "[PASS] criterion 9: best mixed value equals best pure value on 200 instances, exact \
         match"
    );
}
