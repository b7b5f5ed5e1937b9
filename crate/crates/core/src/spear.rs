//! The end-to-end repair procedure.
//!
//! A coach with the true reward function watches an agent whose reward
//! function is malformed. The coach simulates the agent's policy, marks the
//! transition where the accumulated true reward first drops through the
//! reward floor, and solves the penalized set cover for the cheapest set of
//! predicates that covers the divergent states without touching the path the
//! repaired agent should take. When every available cover collides with
//! that path (case three), the colliding states are penalized in a working
//! copy of the true reward and the whole procedure reruns, producing an
//! alternate route; the loop is bounded.
//!
//! All planning and simulated rollouts here run on one movement model shared
//! by agent and coach (the agent does not know where the hazards are, so
//! hazard cells are ordinary floor to it); hazard terminality matters only
//! when episodes are evaluated in the real environment, which is the
//! benchmark harness's job.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::bitset::BitSet;
use crate::mdp::{
    rollout, value_iteration, Mdp, PlanError, Policy, RewardFunction, RolloutMode, Trajectory,
    DEFAULT_GAMMA, DEFAULT_TOL,
};
use crate::predicates::{build_coverage_matrices, PredicateSet};
use crate::rng::SeededRng;
use crate::setcover::{solve_spear_ip, CoverCase, IpInstance, SetCoverSolution, SolverError};

/// Tuning knobs for a repair run.
#[derive(Clone, Debug, PartialEq)]
pub struct SpearConfig {
    /// Reward floor: crossing it during a simulated rollout marks the
    /// transition as divergence-relevant.
    pub reward_floor: f64,
    /// Number of forward rollouts per divergence scan.
    pub n_rollouts: usize,
    /// Bound on contingency reruns.
    pub max_outer_loops: usize,
    /// Reward value communicated for covered states.
    pub feedback_reward: f64,
    /// Acceptance bound on the repaired policy's return gap.
    pub epsilon: f64,
    /// Seed for all sampled rollouts inside the run.
    pub rng_seed: u64,
}

impl Default for SpearConfig {
    fn default() -> Self {
        SpearConfig {
            reward_floor: -50.0,
            n_rollouts: 10,
            max_outer_loops: 10,
            feedback_reward: -100.0,
            epsilon: 5.0,
            rng_seed: 0,
        }
    }
}

/// The reward update to communicate: selected predicates, their rendered
/// message, and the states the update covers.
#[derive(Clone, Debug, PartialEq)]
pub struct Feedback {
    /// Ids of the selected predicates in the predicate set of the run.
    pub selected: Vec<usize>,
    /// Descriptions of the selected predicates, in id order.
    pub descriptions: Vec<String>,
    pub communicated_reward: f64,
    /// Union of the selected predicates' extensions.
    pub covered: BitSet,
    pub message: String,
}

impl Feedback {
    pub fn empty(n_states: usize, communicated_reward: f64) -> Self {
        Feedback {
            selected: Vec::new(),
            descriptions: Vec::new(),
            communicated_reward,
            covered: BitSet::new(n_states),
            message: String::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpearError {
    /// The agent is not known to have observed any exit.
    NoKnownExit,
    /// Case two: some divergent state has no covering predicate.
    NoSolution {
        loop_index: usize,
    },
    /// The contingency loop exhausted its bound.
    LoopLimitExceeded {
        loops: usize,
    },
    Plan(PlanError),
    Solver(SolverError),
}

impl core::fmt::Display for SpearError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SpearError::NoKnownExit => write!(f, "no observed exits to anchor the agent's reward"),
            SpearError::NoSolution { loop_index } => {
                write!(f, "no set cover exists (loop {loop_index})")
            }
            SpearError::LoopLimitExceeded { loops } => {
                write!(
                    f,
                    "contingency loop did not resolve within {loops} iterations"
                )
            }
            SpearError::Plan(e) => write!(f, "planning failed: {e}"),
            SpearError::Solver(e) => write!(f, "solver failed: {e}"),
        }
    }
}

impl core::error::Error for SpearError {}

impl From<PlanError> for SpearError {
    fn from(e: PlanError) -> Self {
        SpearError::Plan(e)
    }
}

impl From<SolverError> for SpearError {
    fn from(e: SolverError) -> Self {
        SpearError::Solver(e)
    }
}

/// One contingency iteration of a run, kept for the structured run record.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopRecord {
    pub s_bar: Vec<usize>,
    /// Desired trajectory states (start included, visit order).
    pub desired_path: Vec<usize>,
    pub instance: IpInstance,
    pub case: CoverCase,
    pub objective: f64,
    pub selected: Vec<usize>,
}

/// Full record of a repair run: the feedback plus everything needed to
/// replay or audit it.
#[derive(Clone, Debug, PartialEq)]
pub struct SpearRun {
    pub feedback: Feedback,
    pub loops: Vec<LoopRecord>,
    /// True when the case-three contingency altered the working copy of the
    /// true reward, i.e. the optimality guarantee is relative to that copy.
    pub reward_modified: bool,
}

impl SpearRun {
    pub fn case_sequence(&self) -> Vec<CoverCase> {
        self.loops.iter().map(|l| l.case).collect()
    }

    pub fn loop_count(&self) -> usize {
        self.loops.len()
    }
}

/// The agent's estimated reward function: the true rewards restricted to
/// what the agent has seen. Exit bonuses survive only at observed exits;
/// every other special entry (unobserved exits, hazard penalties) falls back
/// to the default step reward, since the agent does not know about them.
pub fn estimate_agent_reward(
    true_reward: &RewardFunction,
    observed_exits: &[usize],
) -> Result<RewardFunction, SpearError> {
    if observed_exits.is_empty() {
        return Err(SpearError::NoKnownExit);
    }
    let observed: BTreeSet<usize> = observed_exits.iter().copied().collect();
    let mut out = RewardFunction::new(true_reward.default_reward());
    for ((s, a, sp), r) in true_reward.entries() {
        if observed.contains(&sp) {
            out.set(s, a, sp, r);
        }
    }
    Ok(out)
}

/// Simulates the agent's policy under the true reward and collects the
/// divergence-relevant states.
///
/// Runs `cfg.n_rollouts` sampled rollouts of the policy trained on `r_h`.
/// Each rollout stops the moment its accumulated true reward falls to the
/// reward floor; the successor state of that transition joins the divergent
/// set and the best-repairable reward gets the true value for exactly that
/// transition. Returns the divergent states (ascending) and the repaired
/// copy of `r_h`.
pub fn find_divergent_states(
    mdp: &Mdp,
    r_true: &RewardFunction,
    r_h: &RewardFunction,
    cfg: &SpearConfig,
    start: usize,
) -> Result<(Vec<usize>, RewardFunction), SpearError> {
    assert!(start < mdp.n_states());
    let (_, pi_h) = value_iteration(mdp, r_h, DEFAULT_GAMMA, DEFAULT_TOL)?;
    let mut s_bar: BTreeSet<usize> = BTreeSet::new();
    let mut r_h_star = r_h.clone();
    let horizon = mdp.default_horizon();
    for i in 0..cfg.n_rollouts {
        let mut rng = SeededRng::derived(cfg.rng_seed, i as u64);
        let mut s = start;
        let mut r_c = 0.0;
        for _ in 0..horizon {
            if mdp.is_terminal(s) {
                break;
            }
            let a = pi_h.action(s).expect("policy total on non-terminals");
            let sp = mdp.sample_successor(s, a, &mut rng);
            r_c += r_true.get(s, a, sp);
            if r_c <= cfg.reward_floor {
                s_bar.insert(sp);
                r_h_star.set(s, a, sp, r_true.get(s, a, sp));
                break;
            }
            s = sp;
        }
    }
    Ok((s_bar.into_iter().collect(), r_h_star))
}

/// The path we want the agent to take: an optimistic (most likely
/// transition) rollout of the given policy, start state included. Uses no
/// randomness.
pub fn desired_trajectory(mdp: &Mdp, policy: &Policy, start: usize) -> Trajectory {
    let zero = RewardFunction::new(0.0);
    rollout(
        mdp,
        policy,
        &zero,
        start,
        RolloutMode::Deterministic,
        0,
        mdp.default_horizon(),
    )
}

/// Assembles a feedback message from a predicate selection: covered set,
/// descriptions, and the rendered string.
pub fn feedback_from_selection(
    selected: &[usize],
    predicates: &PredicateSet,
    communicated_reward: f64,
) -> Feedback {
    let mut covered = BitSet::new(predicates.n_states());
    let mut descriptions = Vec::with_capacity(selected.len());
    for &j in selected {
        covered.union_with(&predicates.get(j).extension);
        descriptions.push(predicates.get(j).description.clone());
    }
    let mut fb = Feedback {
        selected: selected.to_vec(),
        descriptions,
        communicated_reward,
        covered,
        message: String::new(),
    };
    fb.message = render_feedback(&fb);
    fb
}

fn build_feedback(
    sol: &SetCoverSolution,
    predicates: &PredicateSet,
    communicated_reward: f64,
) -> Feedback {
    feedback_from_selection(&sol.selected, predicates, communicated_reward)
}

/// Renders the update as a disjunction of predicate descriptions. Composite
/// descriptions already carry their " AND " joins. Empty feedback renders
/// as an empty string.
pub fn render_feedback(fb: &Feedback) -> String {
    if fb.descriptions.is_empty() {
        return String::new();
    }
    let mut out = String::from("There is a bad reward when ");
    out.push_str(&fb.descriptions.join(" OR "));
    out
}

/// Applies a feedback message to the agent's reward function: every
/// transition of `mdp` entering a covered state is set to the communicated
/// reward value. Empty feedback returns the reward unchanged.
pub fn apply_feedback(mdp: &Mdp, r_h: &RewardFunction, fb: &Feedback) -> RewardFunction {
    let mut out = r_h.clone();
    if fb.is_empty() {
        return out;
    }
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let (succs, _) = mdp.transitions(s, a);
            for &sp in succs {
                if fb.covered.contains(sp as usize) {
                    out.set(s, a, sp as usize, fb.communicated_reward);
                }
            }
        }
    }
    out
}

/// Runs the full single-shot repair procedure and returns the feedback plus
/// its run record.
///
/// Per outer iteration: find the divergent states and the best-repairable
/// agent reward, train the repaired agent policy and the optimal policy,
/// build the coverage matrices against the repaired agent's desired
/// trajectory, and solve the penalized cover. Case one returns the
/// feedback; case two fails; case three penalizes the covered states along
/// the optimal policy's rollouts in a working copy of the true reward and
/// reruns. The caller's rewards are never mutated.
pub fn run_spear(
    mdp: &Mdp,
    r_true: &RewardFunction,
    r_h: &RewardFunction,
    predicates: &PredicateSet,
    cfg: &SpearConfig,
    start: usize,
) -> Result<SpearRun, SpearError> {
    assert_eq!(
        predicates.n_states(),
        mdp.n_states(),
        "predicates not precomputed over this model's states"
    );
    let mut r_mod = r_true.clone();
    let mut reward_modified = false;
    let mut loops: Vec<LoopRecord> = Vec::new();
    let horizon = mdp.default_horizon();

    for loop_index in 0..cfg.max_outer_loops {
        let (s_bar, r_h_star) = find_divergent_states(mdp, &r_mod, r_h, cfg, start)?;
        if s_bar.is_empty() {
            // nothing to communicate
            return Ok(SpearRun {
                feedback: Feedback::empty(mdp.n_states(), cfg.feedback_reward),
                loops,
                reward_modified,
            });
        }
        let (_, pi_h_star) = value_iteration(mdp, &r_h_star, DEFAULT_GAMMA, DEFAULT_TOL)?;
        let (_, pi_star) = value_iteration(mdp, &r_mod, DEFAULT_GAMMA, DEFAULT_TOL)?;
        let desired = desired_trajectory(mdp, &pi_h_star, start);
        let matrices = build_coverage_matrices(&s_bar, &desired, predicates);
        let instance = IpInstance::new(&matrices, predicates.costs())?;
        let sol = solve_spear_ip(&instance);
        loops.push(LoopRecord {
            s_bar: s_bar.clone(),
            desired_path: desired.visited_states(),
            instance: instance.clone(),
            case: sol.case,
            objective: sol.objective,
            selected: sol.selected.clone(),
        });
        match sol.case {
            CoverCase::Two => return Err(SpearError::NoSolution { loop_index }),
            CoverCase::One => {
                let feedback = build_feedback(&sol, predicates, cfg.feedback_reward);
                return Ok(SpearRun {
                    feedback,
                    loops,
                    reward_modified,
                });
            }
            CoverCase::Three => {
                // penalize the colliding cover along the optimal policy's
                // rollouts and rerun from scratch on the modified reward
                let mut covered = BitSet::new(predicates.n_states());
                for &j in &sol.selected {
                    covered.union_with(&predicates.get(j).extension);
                }
                for i in 0..cfg.n_rollouts {
                    let mut rng = SeededRng::derived(
                        cfg.rng_seed ^ 0x5bd1_e995,
                        (loop_index * cfg.n_rollouts + i) as u64,
                    );
                    let mut s = start;
                    for _ in 0..horizon {
                        if mdp.is_terminal(s) {
                            break;
                        }
                        let a = pi_star.action(s).expect("policy total on non-terminals");
                        let sp = mdp.sample_successor(s, a, &mut rng);
                        if covered.contains(sp) {
                            r_mod.set(s, a, sp, -instance.l());
                        }
                        s = sp;
                    }
                }
                reward_modified = true;
            }
        }
    }
    Err(SpearError::LoopLimitExceeded {
        loops: cfg.max_outer_loops,
    })
}
