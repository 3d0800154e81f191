//! Brute-force self-checks, kept independent of the solvers they verify.
//!
//! These back the `oracle` CLI command and the test suites: exhaustive
//! subset enumeration for the allocation optimum, the sorted-prefix rule for
//! budget prediction, and the algebraic identity between the two printed
//! forms of the attacker utility.

use rand::Rng;

use crate::defender::{predict_malicious_count, solve_allocation, PromptCost};
use crate::error::Error;
use crate::game;
use crate::rng::stream;
use crate::Result;

/// Largest instance the exhaustive enumerator accepts (2^14 subsets).
pub const MAX_BRUTE_FORCE: usize = 14;

/// Exhaustive minimum of the coefficient sum over all `{0,1}^n` vectors with
/// exactly `budget` ones. Returns the optimum value and one optimal mask.
pub fn brute_force_allocation(coefficients: &[f64], budget: usize) -> Result<(f64, Vec<bool>)> {
    let n = coefficients.len();
    if n > MAX_BRUTE_FORCE {
        return Err(Error::InvalidInput(format!(
            "exhaustive search capped at {MAX_BRUTE_FORCE} items, got {n}"
        )));
    }
    if budget > n {
        return Err(Error::BudgetOutOfRange { budget, n });
    }
    let mut best: Option<(f64, u32)> = None;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != budget {
            continue;
        }
        let value: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| coefficients[i])
            .sum();
        match best {
            Some((b, _)) if b <= value => {}
            _ => best = Some((value, mask)),
        }
    }
    let (value, mask) = best.expect("at least one subset of every cardinality exists");
    let selected = (0..n).map(|i| mask & (1 << i) != 0).collect();
    Ok((value, selected))
}

/// Prefix rule: the predicted budget equals the number of coefficients at or
/// below the threshold, taken in sorted order.
pub fn sorted_prefix_count(coefficients: &[f64], u_cost: f64) -> usize {
    let mut sorted = coefficients.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite coefficients"));
    sorted.iter().take_while(|&&c| c <= u_cost).count()
}

/// Literal marginal trace of the budget prediction: solve the allocation at
/// every budget and stop at the first marginal above the threshold.
pub fn marginal_trace_count(costs: &[PromptCost], u_cost: f64) -> Result<usize> {
    let mut previous = 0.0;
    for budget in 1..=costs.len() {
        let current = solve_allocation(costs, budget)?.objective;
        if current - previous > u_cost {
            return Ok(budget - 1);
        }
        previous = current;
    }
    Ok(costs.len())
}

/// A failed oracle check, printable verbatim.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub check: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Counterexample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.check, self.detail)
    }
}

/// Summary of a passed oracle run.
#[derive(Debug, Clone, Copy)]
pub struct OracleReport {
    pub instances: usize,
    pub allocation_checks: usize,
    pub prediction_checks: usize,
    pub identity_checks: usize,
}

/// Run `instances` randomized self-checks with instance sizes up to
/// `max_size`. `inject_fault` perturbs one greedy objective to prove the
/// harness catches disagreements.
pub fn run_oracle_suite(
    instances: usize,
    max_size: usize,
    seed: u64,
    inject_fault: bool,
) -> Result<std::result::Result<OracleReport, Counterexample>> {
    if max_size > MAX_BRUTE_FORCE {
        return Err(Error::InvalidInput(format!(
            "max instance size is {MAX_BRUTE_FORCE} (exponential enumeration), got {max_size}"
        )));
    }
    let mut allocation_checks = 0;
    let mut prediction_checks = 0;
    let mut identity_checks = 0;
    let mut fault_pending = inject_fault;

    for instance in 0..instances {
        let mut rng = stream(seed, &[0xC0FFEE, instance as u64]);
        let n = rng.random_range(0..=max_size);
        let coefficients: Vec<f64> =
            (0..n).map(|_| rng.random_range(-1e6..1e6)).collect();
        let costs: Vec<PromptCost> = coefficients
            .iter()
            .enumerate()
            .map(|(i, &c)| PromptCost { task_ref: i, coefficient: c, belief_mu: 0.5 })
            .collect();

        // Greedy vs exhaustive at a random budget.
        let budget = rng.random_range(0..=n);
        let mut greedy = solve_allocation(&costs, budget)?.objective;
        if fault_pending && n > 0 {
            greedy += 1.0;
            fault_pending = false;
        }
        let (exhaustive, mask) = brute_force_allocation(&coefficients, budget)?;
        if (greedy - exhaustive).abs() > 1e-6 {
            return Ok(Err(Counterexample {
                check: "allocation-optimality",
                detail: format!(
                    "coefficients {coefficients:?} budget {budget}: greedy {greedy} vs \
                     exhaustive {exhaustive} (optimal mask {mask:?})"
                ),
            }));
        }
        allocation_checks += 1;

        // Marginal-rule prediction vs sorted prefix vs literal trace.
        let u_cost = rng.random_range(-1e6..1e6);
        let predicted = predict_malicious_count(&costs, u_cost)?;
        let prefix = sorted_prefix_count(&coefficients, u_cost);
        let trace = marginal_trace_count(&costs, u_cost)?;
        if predicted != prefix || predicted != trace {
            return Ok(Err(Counterexample {
                check: "budget-prediction-equivalence",
                detail: format!(
                    "coefficients {coefficients:?} u_cost {u_cost}: predicted {predicted}, \
                     sorted-prefix {prefix}, marginal-trace {trace}"
                ),
            }));
        }
        prediction_checks += 1;

        // Attacker-utility identity between its two algebraic forms.
        let edges = rng.random_range(1..6usize);
        let pd: f64 = rng.random_range(0.0..=1.0);
        let f_k: f64 = rng.random_range(0.0..1e13);
        let o_k: u64 = rng.random_range(0..2000);
        let cf: f64 = rng.random_range(0.0..1e10);
        let raw: Vec<f64> = (0..edges).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let pi: Vec<f64> = if total == 0.0 {
            vec![1.0 / edges as f64; edges]
        } else {
            raw.iter().map(|w| w / total).collect()
        };
        let direct = game::malicious_utility_expanded(&pi, pd, f_k, o_k, cf);
        let rearranged = game::malicious_utility_linear(&pi, pd, f_k, o_k, cf);
        let scale = direct.abs().max(rearranged.abs()).max(1.0);
        if ((direct - rearranged) / scale).abs() > 1e-12 {
            return Ok(Err(Counterexample {
                check: "attacker-utility-identity",
                detail: format!(
                    "pi {pi:?} pd {pd} f_k {f_k} o_k {o_k} cf {cf}: \
                     expanded {direct} vs linear {rearranged}"
                ),
            }));
        }
        identity_checks += 1;
    }

    Ok(Ok(OracleReport { instances, allocation_checks, prediction_checks, identity_checks }))
}
