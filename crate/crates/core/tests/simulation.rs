//! Cross-module integration on the repo's committed corpora: determinism,
//! conservation, and the dominance property under the ground-truth belief
//! fixture.

use std::path::PathBuf;

use edgegame::belief::BeliefParams;
use edgegame::cost::{ModelProfile, ObjectiveWeights, ServerSpec};
use edgegame::defender::{CostMode, GaParams};
use edgegame::detector::ConfusionRates;
use edgegame::sim::{
    compare_strategies, run_simulation, CloudConfig, DatasetPaths, EdgeConfig,
    OutputLengthConfig, SimConfig, SimState, Strategy, VdbConfig,
};
use edgegame::workload::TokenMode;
use sha2::{Digest, Sha256};

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(seed: u64, strategy: Strategy) -> SimConfig {
    let edge = EdgeConfig {
        server: ServerSpec::new(1e13, 1e11),
        detector: ModelProfile::new(20_000_000, 12, 512, 768),
    };
    SimConfig {
        stages: 5,
        benign_players: 16,
        malicious_players: 4,
        malicious_send_count: 4,
        edges: vec![edge, edge, edge],
        cloud: CloudConfig {
            server: ServerSpec::new(8e13, 1e12),
            llm: ModelProfile::new(7_000_000_000, 32, 4096, 4096),
        },
        weights: ObjectiveWeights { alpha1: 1.0, alpha2: 1.0, alpha3: 1.0, alpha4: 1.0 },
        belief: BeliefParams {
            gamma1: 0.8,
            gamma2: 0.4,
            gamma3: 0.7,
            gamma4: 0.3,
            gamma5: 0.3,
            gamma6: 0.7,
            d_epsilon: 0.03,
        },
        u_cost: Some(-4.5e11),
        detector_rates: ConfusionRates { tpr: 0.9, fpr: 0.0 },
        strategy,
        output_length: OutputLengthConfig { mu_log: 4.0, sigma_log: 0.5 },
        expected_output_tokens: 62,
        token_mode: TokenMode::Bytes4,
        cost_mode: CostMode::ExpectedSavings,
        datasets: DatasetPaths {
            benign: "data/benign.jsonl".into(),
            malicious: "data/malicious.jsonl".into(),
        },
        vdb_datasets: DatasetPaths {
            benign: "data/vdb_benign.jsonl".into(),
            malicious: "data/vdb_malicious.jsonl".into(),
        },
        vdb: VdbConfig { dimension: 4096, top_k: 5 },
        stage_wall_seconds: 75.0,
        ga: GaParams::default(),
        seed,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn identical_runs_hash_identically() {
    let config = scenario(7, Strategy::Gmdra);
    let a = run_simulation(&config, &workspace_root()).unwrap().to_json_pretty();
    let b = run_simulation(&config, &workspace_root()).unwrap().to_json_pretty();
    let ha = sha256_hex(a.as_bytes());
    assert_eq!(ha, sha256_hex(b.as_bytes()));
    println!("run hash (seed 7, gmdra): {ha}");
}

#[test]
fn different_seeds_differ() {
    let a = run_simulation(&scenario(1, Strategy::Gmdra), &workspace_root()).unwrap();
    let b = run_simulation(&scenario(2, Strategy::Gmdra), &workspace_root()).unwrap();
    assert_ne!(a.to_json_pretty(), b.to_json_pretty());
}

#[test]
fn conservation_holds_per_stage_for_every_strategy() {
    let strategies = [
        Strategy::None,
        Strategy::Full,
        Strategy::Random(0.5),
        Strategy::Genetic,
        Strategy::Gmdra,
        Strategy::GmdraNoVdb,
    ];
    let runs =
        compare_strategies(&scenario(3, Strategy::Gmdra), &workspace_root(), &strategies).unwrap();
    for (strategy, report) in &runs {
        for stage in &report.stages {
            assert_eq!(
                stage.dropped + stage.answered,
                20,
                "{strategy} stage {}: prompts in != dropped + answered",
                stage.stage
            );
            assert_eq!(
                stage.tp + stage.fp + stage.tn + stage.fn_,
                stage.detected,
                "{strategy} stage {}: confusion counts must sum to detections",
                stage.stage
            );
            assert_eq!(stage.dropped, stage.tp + stage.fp);
            assert!(stage.gpu_mem_proxy_bytes >= 0.0);
            assert!((0.0..=1.0).contains(&stage.gpu_util_proxy));
        }
    }
}

#[test]
fn identical_strategies_give_identical_columns() {
    let runs = compare_strategies(
        &scenario(4, Strategy::Gmdra),
        &workspace_root(),
        &[Strategy::Full, Strategy::Full],
    )
    .unwrap();
    assert_eq!(runs[0].1, runs[1].1);
}

#[test]
fn single_strategy_comparison_equals_its_run() {
    let config = scenario(5, Strategy::Genetic);
    let direct = run_simulation(&config, &workspace_root()).unwrap();
    let table =
        compare_strategies(&config, &workspace_root(), &[Strategy::Genetic]).unwrap();
    assert_eq!(table.len(), 1);
    assert_eq!(table[0].1, direct);
}

#[test]
fn dominance_under_ground_truth_beliefs() {
    // Calibration fixture: defender beliefs pinned to ground truth, which is
    // absorbing, isolating the allocation quality from belief dynamics.
    let config = scenario(6, Strategy::Gmdra);
    let root = workspace_root();
    let mut state = SimState::new(&config, &root).unwrap();
    state.seed_ground_truth_beliefs();
    let gmdra = state.run().unwrap();

    let none = run_simulation(&SimConfig { strategy: Strategy::None, ..config.clone() }, &root)
        .unwrap();
    let full = run_simulation(&SimConfig { strategy: Strategy::Full, ..config }, &root).unwrap();

    let bound = none.cumulative.objective.min(full.cumulative.objective) + 1e-6;
    assert!(
        gmdra.cumulative.objective <= bound,
        "gmdra {} exceeded min(none {}, full {})",
        gmdra.cumulative.objective,
        none.cumulative.objective,
        full.cumulative.objective
    );
}

#[test]
fn workload_satisfies_demand_dominance() {
    // The scenario keeps every task's LLM demand at least 100x its
    // detection compute, the regime where selective detection pays off.
    let config = scenario(8, Strategy::None);
    let report = run_simulation(&config, &workspace_root()).unwrap();
    assert_eq!(report.stages.len(), 5);
    let cf_det = 2.0 * 20_000_000.0 + 2.0 * 12.0 * 512.0 * 768.0;
    let cf_llm = 2.0 * 7_000_000_000.0 + 2.0 * 32.0 * 4096.0 * 4096.0;
    // Shortest prompt in the corpus is ~20 tokens; demand adds 62 expected
    // output tokens at the LLM's per-token cost.
    let worst_ratio = (20.0 + 62.0) * cf_llm / (20.0 * cf_det);
    assert!(worst_ratio >= 100.0, "demand/detection ratio too small: {worst_ratio}");
}
