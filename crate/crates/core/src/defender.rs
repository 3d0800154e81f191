//! Detection resource allocation.
//!
//! Per-prompt cost coefficients, the exact solver for the defender's
//! detection allocation, marginal-analysis budget selection, and a genetic
//! baseline.
//!
//! The allocation relaxation — minimize the weighted coefficient sum over
//! `pi in [0,1]^n` with `sum(pi) = budget` — has an integral optimum at the
//! `budget` smallest coefficients, so the solver is an exact O(n log n)
//! sort-and-select with stable tie-breaking on task order. The budget itself
//! comes from sequential marginal analysis: grow it until the marginal
//! objective change exceeds the configured cost threshold.

use serde::{Deserialize, Serialize};

use crate::cost::{detection_time, flops_per_token, ModelProfile, ObjectiveWeights, ServerSpec};
use crate::error::Error;
use crate::rng::SimRng;
use crate::workload::Task;
use crate::Result;
use rand::Rng;

/// How the belief enters the per-prompt cost coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// `alpha4 * (o_k*cf + (mu - 1)*f_k)`: detecting a prompt believed safe
    /// with probability `mu` saves `(1 - mu)*f_k` LLM compute in
    /// expectation. Negative coefficients mean detection is beneficial.
    #[default]
    ExpectedSavings,
    /// `alpha4 * (o_k*cf + mu*f_k)`: the utility function's stated form,
    /// weighting the demand term by the belief directly.
    MuWeighted,
}

/// Marginal objective contribution of detecting one prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptCost {
    /// Index of the task in its stage queue.
    pub task_ref: usize,
    pub coefficient: f64,
    pub belief_mu: f64,
}

/// Solved detection allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// Detection probability per prompt, aligned with the input order.
    pub pi: Vec<f64>,
    /// Sum of selected coefficients.
    pub objective: f64,
    pub budget_used: usize,
}

/// Cost coefficient for detecting `task` given the safety belief `mu`:
/// `alpha3 * d_det + alpha4 * (o_k*cf + belief term)` with the belief term
/// picked by `mode`.
pub fn prompt_cost_coefficient(
    task: &Task,
    mu: f64,
    weights: &ObjectiveWeights,
    detector: &ModelProfile,
    spec: &ServerSpec,
    mode: CostMode,
) -> Result<f64> {
    weights.validate()?;
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidInput(format!("belief mu must be in [0,1], got {mu}")));
    }
    let d_det = detection_time(task.o_k, detector, spec)?;
    let cf = flops_per_token(detector);
    let belief_term = match mode {
        CostMode::ExpectedSavings => (mu - 1.0) * task.f_k,
        CostMode::MuWeighted => mu * task.f_k,
    };
    Ok(weights.alpha3 * d_det + weights.alpha4 * (task.o_k as f64 * cf + belief_term))
}

/// Indices of the `budget` smallest coefficients, ties broken by task_ref.
fn selection_order(costs: &[PromptCost]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| {
        costs[a]
            .coefficient
            .partial_cmp(&costs[b].coefficient)
            .expect("coefficients are finite")
            .then(costs[a].task_ref.cmp(&costs[b].task_ref))
    });
    order
}

/// Exact allocation: set `pi = 1` on the `budget` smallest coefficients.
pub fn solve_allocation(costs: &[PromptCost], budget: usize) -> Result<AllocationResult> {
    if budget > costs.len() {
        return Err(Error::BudgetOutOfRange { budget, n: costs.len() });
    }
    for c in costs {
        if !c.coefficient.is_finite() {
            return Err(Error::InvalidInput(format!(
                "coefficient for task {} is not finite",
                c.task_ref
            )));
        }
    }
    let order = selection_order(costs);
    let mut pi = vec![0.0; costs.len()];
    let mut objective = 0.0;
    for &idx in order.iter().take(budget) {
        pi[idx] = 1.0;
        objective += costs[idx].coefficient;
    }
    Ok(AllocationResult { pi, objective, budget_used: budget })
}

/// Sequential marginal analysis: grow the budget while each additional
/// detection changes the optimum by at most `u_cost`; return the last budget
/// before the marginal exceeded it.
pub fn predict_malicious_count(costs: &[PromptCost], u_cost: f64) -> Result<usize> {
    if !u_cost.is_finite() {
        return Err(Error::InvalidInput(format!("u_cost must be finite, got {u_cost}")));
    }
    let mut previous = solve_allocation(costs, 0)?.objective;
    for budget in 1..=costs.len() {
        let current = solve_allocation(costs, budget)?.objective;
        let marginal = current - previous;
        if marginal > u_cost {
            return Ok(budget - 1);
        }
        previous = current;
    }
    Ok(costs.len())
}

/// Full defender decision for one stage queue.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDecision {
    pub allocation: AllocationResult,
    /// Queue indices of the prompts to detect, in queue order.
    pub selected: Vec<usize>,
    pub budget: usize,
}

/// Compose coefficients, budget prediction, and the exact solver over a
/// stage queue. `beliefs[i]` is the defender's safety belief for the source
/// of `queue[i]`.
pub fn gmdra_decide(
    queue: &[Task],
    beliefs: &[f64],
    weights: &ObjectiveWeights,
    detector: &ModelProfile,
    spec: &ServerSpec,
    u_cost: f64,
    mode: CostMode,
) -> Result<DetectionDecision> {
    if queue.len() != beliefs.len() {
        return Err(Error::InvalidInput(format!(
            "queue has {} tasks but {} beliefs were supplied",
            queue.len(),
            beliefs.len()
        )));
    }
    let costs: Vec<PromptCost> = queue
        .iter()
        .zip(beliefs)
        .enumerate()
        .map(|(i, (task, &mu))| {
            Ok(PromptCost {
                task_ref: i,
                coefficient: prompt_cost_coefficient(task, mu, weights, detector, spec, mode)?,
                belief_mu: mu,
            })
        })
        .collect::<Result<_>>()?;
    let budget = predict_malicious_count(&costs, u_cost)?;
    let allocation = solve_allocation(&costs, budget)?;
    let selected = allocation
        .pi
        .iter()
        .enumerate()
        .filter(|(_, &p)| p == 1.0)
        .map(|(i, _)| i)
        .collect();
    Ok(DetectionDecision { allocation, selected, budget })
}

/// Default cost threshold when a config does not pin one:
/// `alpha4 * mean(o_k * cf)` over the queue.
pub fn default_u_cost(queue: &[Task], weights: &ObjectiveWeights, detector: &ModelProfile) -> f64 {
    if queue.is_empty() {
        return 0.0;
    }
    let cf = flops_per_token(detector);
    let mean: f64 =
        queue.iter().map(|t| t.o_k as f64 * cf).sum::<f64>() / queue.len() as f64;
    weights.alpha4 * mean
}

/// Knobs for the genetic baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self { population: 40, generations: 60, mutation_rate: 0.3 }
    }
}

/// Genetic baseline: evolve fixed-cardinality detection sets minimizing the
/// selected coefficient sum. Deterministic under the rng stream. Never
/// better than [`solve_allocation`], usually equal on small queues.
pub fn ga_allocate(
    costs: &[PromptCost],
    budget: usize,
    params: &GaParams,
    rng: &mut SimRng,
) -> Result<AllocationResult> {
    if budget > costs.len() {
        return Err(Error::BudgetOutOfRange { budget, n: costs.len() });
    }
    let n = costs.len();
    if budget == 0 || n == 0 {
        return Ok(AllocationResult { pi: vec![0.0; n], objective: 0.0, budget_used: budget });
    }
    if budget == n {
        let objective = costs.iter().map(|c| c.coefficient).sum();
        return Ok(AllocationResult { pi: vec![1.0; n], objective, budget_used: budget });
    }

    let fitness = |member: &Vec<usize>| -> f64 {
        member.iter().map(|&i| costs[i].coefficient).sum()
    };
    let random_member = |rng: &mut SimRng| -> Vec<usize> {
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..budget {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        let mut member = indices[..budget].to_vec();
        member.sort_unstable();
        member
    };

    let pop_size = params.population.max(2);
    let mut population: Vec<Vec<usize>> = (0..pop_size).map(|_| random_member(rng)).collect();
    let mut best = population[0].clone();
    let mut best_fit = fitness(&best);

    for _ in 0..params.generations {
        for member in &population {
            let fit = fitness(member);
            if fit < best_fit {
                best_fit = fit;
                best = member.clone();
            }
        }
        let mut next = Vec::with_capacity(pop_size);
        next.push(best.clone()); // elitism
        while next.len() < pop_size {
            let a = &population[rng.random_range(0..pop_size)];
            let b = &population[rng.random_range(0..pop_size)];
            let parent = if fitness(a) <= fitness(b) { a } else { b };
            let mut child = crossover(parent, &population[rng.random_range(0..pop_size)], budget, rng);
            if rng.random::<f64>() < params.mutation_rate {
                mutate(&mut child, n, rng);
            }
            next.push(child);
        }
        population = next;
    }
    for member in &population {
        let fit = fitness(member);
        if fit < best_fit {
            best_fit = fit;
            best = member.clone();
        }
    }

    let mut pi = vec![0.0; n];
    for &i in &best {
        pi[i] = 1.0;
    }
    Ok(AllocationResult { pi, objective: best_fit, budget_used: budget })
}

/// Sample `budget` indices from the union of two parents.
fn crossover(a: &[usize], b: &[usize], budget: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut union: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
    union.sort_unstable();
    union.dedup();
    for i in 0..budget.min(union.len()) {
        let j = rng.random_range(i..union.len());
        union.swap(i, j);
    }
    let mut child = union[..budget.min(union.len())].to_vec();
    child.sort_unstable();
    child
}

/// Swap one selected index for an unselected one.
fn mutate(member: &mut [usize], n: usize, rng: &mut SimRng) {
    if member.len() == n || member.is_empty() {
        return;
    }
    let out_pos = rng.random_range(0..member.len());
    loop {
        let candidate = rng.random_range(0..n);
        if !member.contains(&candidate) {
            member[out_pos] = candidate;
            break;
        }
    }
    member.sort_unstable();
}
