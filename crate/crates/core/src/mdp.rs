//! Episodic tabular MDPs: value-iteration planning, policy extraction, and
//! trajectory rollouts.
//!
//! States and actions are dense indices. Transition distributions are stored
//! CSR-style per `(state, action)` pair; terminal states simply have no
//! outgoing transitions. All tie-breaking (greedy actions, most-likely
//! successors) favors the lowest index so that planning and rollouts are
//! fully reproducible.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SeededRng;

/// Default discount factor for planners.
pub const DEFAULT_GAMMA: f64 = 0.99;
/// Default Bellman residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Probability mass mismatch tolerated in a transition distribution.
const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum MdpError {
    /// A `(state, action)` distribution does not sum to 1.
    BadDistribution {
        state: usize,
        action: usize,
        sum: f64,
    },
    /// A state has no outgoing transitions on every action but was used as
    /// a non-terminal (or vice versa).
    InvalidStructure(String),
}

impl core::fmt::Display for MdpError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MdpError::BadDistribution { state, action, sum } => write!(
                f,
                "transition distribution at state {state}, action {action} sums to {sum}"
            ),
            MdpError::InvalidStructure(msg) => write!(f, "invalid MDP structure: {msg}"),
        }
    }
}

impl core::error::Error for MdpError {}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanError {
    /// Residual still above tolerance after the sweep cap.
    NonConvergence { sweeps: usize, residual: f64 },
    /// Discount factor outside `(0, 1]` or non-positive tolerance.
    BadParams(String),
}

impl core::fmt::Display for PlanError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PlanError::NonConvergence { sweeps, residual } => {
                write!(f, "value iteration did not converge after {sweeps} sweeps (residual {residual:e})")
            }
            PlanError::BadParams(msg) => write!(f, "bad planner parameters: {msg}"),
        }
    }
}

impl core::error::Error for PlanError {}

/// Discrete MDP over dense state and action indices.
///
/// Houses the state space, action set, and transition model; rewards are a
/// separate [`RewardFunction`] so that one model can be planned under many
/// reward hypotheses.
#[derive(Clone, Debug)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    // CSR layout: slots for (s, a) are offsets[s*n_actions+a]..offsets[s*n_actions+a+1]
    offsets: Vec<u32>,
    succs: Vec<u32>,
    probs: Vec<f64>,
    deterministic: bool,
}

/// Incremental construction for [`Mdp`]; validates distributions on `build`.
pub struct MdpBuilder {
    n_states: usize,
    n_actions: usize,
    entries: BTreeMap<(u32, u32), BTreeMap<u32, f64>>,
}

impl MdpBuilder {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        MdpBuilder {
            n_states,
            n_actions,
            entries: BTreeMap::new(),
        }
    }

    /// Adds probability mass to `(state, action) -> successor`. Mass for the
    /// same successor accumulates, so callers may emit duplicate branches.
    pub fn transition(
        &mut self,
        state: usize,
        action: usize,
        successor: usize,
        p: f64,
    ) -> &mut Self {
        assert!(state < self.n_states && successor < self.n_states && action < self.n_actions);
        if p > 0.0 {
            *self
                .entries
                .entry((state as u32, action as u32))
                .or_default()
                .entry(successor as u32)
                .or_insert(0.0) += p;
        }
        self
    }

    pub fn build(self) -> Result<Mdp, MdpError> {
        let mut offsets = Vec::with_capacity(self.n_states * self.n_actions + 1);
        let mut succs = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0u32);
        let mut deterministic = true;
        for s in 0..self.n_states as u32 {
            for a in 0..self.n_actions as u32 {
                if let Some(dist) = self.entries.get(&(s, a)) {
                    let sum: f64 = dist.values().sum();
                    if (sum - 1.0).abs() > PROB_TOL {
                        return Err(MdpError::BadDistribution {
                            state: s as usize,
                            action: a as usize,
                            sum,
                        });
                    }
                    if dist.len() > 1 {
                        deterministic = false;
                    }
                    for (&sp, &p) in dist {
                        succs.push(sp);
                        probs.push(p);
                    }
                }
                offsets.push(succs.len() as u32);
            }
        }
        Ok(Mdp {
            n_states: self.n_states,
            n_actions: self.n_actions,
            offsets,
            succs,
            probs,
            deterministic,
        })
    }
}

impl Mdp {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn slot(&self, s: usize, a: usize) -> (usize, usize) {
        let i = s * self.n_actions + a;
        (self.offsets[i] as usize, self.offsets[i + 1] as usize)
    }

    /// Successor/probability slices for `(s, a)`; empty for illegal actions.
    pub fn transitions(&self, s: usize, a: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = self.slot(s, a);
        (&self.succs[lo..hi], &self.probs[lo..hi])
    }

    /// A state is terminal iff it has no outgoing transitions on any action.
    pub fn is_terminal(&self, s: usize) -> bool {
        let lo = self.offsets[s * self.n_actions] as usize;
        let hi = self.offsets[(s + 1) * self.n_actions] as usize;
        lo == hi
    }

    /// Actions with a defined distribution in `s`, ascending.
    pub fn legal_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| {
            let (lo, hi) = self.slot(s, a);
            lo < hi
        })
    }

    /// True when every defined distribution has a single successor.
    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Most likely successor of `(s, a)`; ties broken by lowest state index.
    pub fn most_likely(&self, s: usize, a: usize) -> usize {
        let (succs, probs) = self.transitions(s, a);
        debug_assert!(!succs.is_empty(), "most_likely on a terminal/illegal pair");
        let mut best = 0usize;
        for i in 1..succs.len() {
            // successors are stored in ascending index order, so strict
            // comparison keeps the lowest index among ties
            if probs[i] > probs[best] {
                best = i;
            }
        }
        succs[best] as usize
    }

    /// Samples a successor of `(s, a)` from the transition distribution.
    pub fn sample_successor(&self, s: usize, a: usize, rng: &mut SeededRng) -> usize {
        let (succs, probs) = self.transitions(s, a);
        debug_assert!(!succs.is_empty());
        let draw = rng.next_f64();
        let mut acc = 0.0;
        for i in 0..succs.len() {
            acc += probs[i];
            if draw < acc {
                return succs[i] as usize;
            }
        }
        succs[succs.len() - 1] as usize
    }

    /// Default rollout horizon: generous enough that any sensible policy
    /// terminates first, small enough to bound pathological loops.
    pub fn default_horizon(&self) -> usize {
        4 * self.n_states.max(1)
    }

    /// Sweep cap for value iteration: `10 * |S|`, floored at 4096 because
    /// geometric contraction at gamma near 1 needs ~2000 sweeps to push the
    /// residual below 1e-6 no matter how few states there are.
    fn sweep_cap(&self) -> usize {
        (10 * self.n_states.max(1)).max(4096)
    }
}

/// Reward table over `(state, action, successor)` triples with a default for
/// unlisted transitions. Lookup is total; mutation touches only the
/// addressed entry.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardFunction {
    default: f64,
    entries: BTreeMap<(u32, u32, u32), f64>,
}

impl RewardFunction {
    pub fn new(default: f64) -> Self {
        RewardFunction {
            default,
            entries: BTreeMap::new(),
        }
    }

    pub fn default_reward(&self) -> f64 {
        self.default
    }

    pub fn get(&self, s: usize, a: usize, sp: usize) -> f64 {
        *self
            .entries
            .get(&(s as u32, a as u32, sp as u32))
            .unwrap_or(&self.default)
    }

    pub fn set(&mut self, s: usize, a: usize, sp: usize, r: f64) {
        self.entries.insert((s as u32, a as u32, sp as u32), r);
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        self.entries
            .iter()
            .map(|(&(s, a, sp), &r)| ((s as usize, a as usize, sp as usize), r))
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    /// Rewards for every transition slot of `mdp`, in CSR slot order.
    /// Planning and rollouts use this to avoid per-step map lookups.
    fn compile(&self, mdp: &Mdp) -> Vec<f64> {
        let mut out = Vec::with_capacity(mdp.succs.len());
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let (lo, hi) = mdp.slot(s, a);
                for k in lo..hi {
                    out.push(self.get(s, a, mdp.succs[k] as usize));
                }
            }
        }
        out
    }
}

/// Deterministic state -> action table, defined on all non-terminal states.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    actions: Vec<Option<u32>>,
}

impl Policy {
    pub fn action(&self, s: usize) -> Option<usize> {
        self.actions[s].map(|a| a as usize)
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }
}

/// One rollout step: `(state, action, successor, reward)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub successor: usize,
    pub reward: f64,
}

/// An ordered rollout record. `truncated` is set when the horizon cap ended
/// the episode before a terminal state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start: usize,
    pub steps: Vec<Step>,
    pub cumulative_reward: f64,
    pub truncated: bool,
}

impl Trajectory {
    /// States in visit order, starting with the start state.
    pub fn visited_states(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.steps.len() + 1);
        v.push(self.start);
        v.extend(self.steps.iter().map(|st| st.successor));
        v
    }

    pub fn last_state(&self) -> usize {
        self.steps.last().map_or(self.start, |st| st.successor)
    }
}

/// State values produced by value iteration.
pub type ValueTable = Vec<f64>;

/// Solves for optimal values and the greedy policy by synchronous value
/// iteration. Greedy ties break toward the lowest action index.
///
/// Fails with [`PlanError::NonConvergence`] if the Bellman residual is still
/// above `tol` after `10 * |S|` sweeps.
pub fn value_iteration(
    mdp: &Mdp,
    reward: &RewardFunction,
    gamma: f64,
    tol: f64,
) -> Result<(ValueTable, Policy), PlanError> {
    if gamma.is_nan() || gamma <= 0.0 || gamma > 1.0 {
        return Err(PlanError::BadParams(alloc::format!("gamma = {gamma}")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(PlanError::BadParams(alloc::format!("tol = {tol}")));
    }
    let flat = reward.compile(mdp);
    let n = mdp.n_states;
    let mut v: Vec<f64> = vec![0.0; n];
    let mut v_next: Vec<f64> = vec![0.0; n];
    let cap = mdp.sweep_cap();
    let mut residual = f64::INFINITY;
    for _sweep in 0..cap {
        residual = 0.0;
        for s in 0..n {
            if mdp.is_terminal(s) {
                v_next[s] = 0.0;
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let (lo, hi) = mdp.slot(s, a);
                if lo == hi {
                    continue;
                }
                let mut q = 0.0;
                for k in lo..hi {
                    q += mdp.probs[k] * (flat[k] + gamma * v[mdp.succs[k] as usize]);
                }
                if q > best {
                    best = q;
                }
            }
            v_next[s] = best;
            let d = (v_next[s] - v[s]).abs();
            if d > residual {
                residual = d;
            }
        }
        core::mem::swap(&mut v, &mut v_next);
        if residual < tol {
            let policy = greedy_policy(mdp, &flat, &v, gamma);
            return Ok((v, policy));
        }
    }
    Err(PlanError::NonConvergence {
        sweeps: cap,
        residual,
    })
}

fn greedy_policy(mdp: &Mdp, flat: &[f64], v: &[f64], gamma: f64) -> Policy {
    let mut actions = vec![None; mdp.n_states];
    for (s, slot_action) in actions.iter_mut().enumerate() {
        if mdp.is_terminal(s) {
            continue;
        }
        let mut best_a = None;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..mdp.n_actions {
            let (lo, hi) = mdp.slot(s, a);
            if lo == hi {
                continue;
            }
            let mut q = 0.0;
            for k in lo..hi {
                q += mdp.probs[k] * (flat[k] + gamma * v[mdp.succs[k] as usize]);
            }
            if q > best_q {
                best_q = q;
                best_a = Some(a as u32);
            }
        }
        *slot_action = best_a;
    }
    Policy { actions }
}

/// Rollout successor selection mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    /// Always follow the most likely successor (ties: lowest state index).
    /// Uses no randomness.
    Deterministic,
    /// Sample successors from the transition distribution.
    Stochastic,
}

/// Runs `policy` from `start` until a terminal state or the horizon cap,
/// scoring each transition with `reward`.
pub fn rollout(
    mdp: &Mdp,
    policy: &Policy,
    reward: &RewardFunction,
    start: usize,
    mode: RolloutMode,
    rng_seed: u64,
    horizon: usize,
) -> Trajectory {
    assert!(start < mdp.n_states(), "rollout start out of range");
    assert!(horizon >= 1, "rollout horizon must be >= 1");
    let mut rng = SeededRng::new(rng_seed);
    let mut steps = Vec::new();
    let mut total = 0.0;
    let mut s = start;
    let mut truncated = false;
    for t in 0..=horizon {
        if mdp.is_terminal(s) {
            break;
        }
        if t == horizon {
            truncated = true;
            break;
        }
        let a = policy
            .action(s)
            .expect("policy undefined on a non-terminal state");
        let sp = match mode {
            RolloutMode::Deterministic => mdp.most_likely(s, a),
            RolloutMode::Stochastic => mdp.sample_successor(s, a, &mut rng),
        };
        let r = reward.get(s, a, sp);
        total += r;
        steps.push(Step {
            state: s,
            action: a,
            successor: sp,
            reward: r,
        });
        s = sp;
    }
    Trajectory {
        start,
        steps,
        cumulative_reward: total,
        truncated,
    }
}

/// Mean cumulative reward of `policy` from `start`.
///
/// Deterministic MDPs are evaluated with a single most-likely rollout;
/// stochastic ones average `n_rollouts` sampled episodes on derived seeds.
pub fn expected_return(
    mdp: &Mdp,
    policy: &Policy,
    reward: &RewardFunction,
    start: usize,
    n_rollouts: usize,
    rng_seed: u64,
) -> f64 {
    assert!(n_rollouts >= 1);
    let horizon = mdp.default_horizon();
    if mdp.is_deterministic() {
        return rollout(
            mdp,
            policy,
            reward,
            start,
            RolloutMode::Deterministic,
            0,
            horizon,
        )
        .cumulative_reward;
    }
    let mut sum = 0.0;
    for i in 0..n_rollouts {
        let mut stream = SeededRng::derived(rng_seed, i as u64);
        let seed = stream.next_u64();
        sum += rollout(
            mdp,
            policy,
            reward,
            start,
            RolloutMode::Stochastic,
            seed,
            horizon,
        )
        .cumulative_reward;
    }
    sum / n_rollouts as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Corridor of `n` cells: cell n-1 is a terminal exit. Two actions:
    /// 0 = left, 1 = right. Walking into the closed left end stays put.
    pub(crate) fn corridor(n: usize, exit_reward: f64, step_reward: f64) -> (Mdp, RewardFunction) {
        let mut b = MdpBuilder::new(n, 2);
        for s in 0..n - 1 {
            let left = s.saturating_sub(1);
            b.transition(s, 0, left, 1.0);
            b.transition(s, 1, s + 1, 1.0);
        }
        let mdp = b.build().unwrap();
        let mut r = RewardFunction::new(step_reward);
        // entering the exit earns the terminal bonus on top of the step
        r.set(n - 2, 1, n - 1, exit_reward + step_reward);
        (mdp, r)
    }

    #[test]
    fn single_terminal_state() {
        let mdp = MdpBuilder::new(1, 1).build().unwrap();
        assert!(mdp.is_terminal(0));
        let r = RewardFunction::new(0.0);
        let (v, pi) = value_iteration(&mdp, &r, 1.0, 1e-9).unwrap();
        assert_eq!(v, alloc::vec![0.0]);
        assert_eq!(pi.action(0), None);
    }

    #[test]
    fn corridor_values_match_hand_enumeration() {
        // 4 states, exit at 3: hand enumeration of both stationary policies
        // per state gives V(s) = 100 - distance(s).
        let (mdp, r) = corridor(4, 100.0, -1.0);
        let (v, pi) = value_iteration(&mdp, &r, 1.0, 1e-9).unwrap();
        assert!((v[0] - 97.0).abs() < 1e-7);
        assert!((v[1] - 98.0).abs() < 1e-7);
        assert!((v[2] - 99.0).abs() < 1e-7);
        assert_eq!(v[3], 0.0);
        for s in 0..3 {
            assert_eq!(pi.action(s), Some(1), "policy should point at the exit");
        }
    }

    #[test]
    fn bad_distribution_rejected() {
        let mut b = MdpBuilder::new(2, 1);
        b.transition(0, 0, 1, 0.5);
        match b.build() {
            Err(MdpError::BadDistribution { sum, .. }) => assert!((sum - 0.5).abs() < 1e-12),
            other => panic!("expected BadDistribution, got {other:?}"),
        }
    }

    #[test]
    fn rollout_from_terminal_is_empty() {
        let (mdp, r) = corridor(4, 100.0, -1.0);
        let (_, pi) = value_iteration(&mdp, &r, 1.0, 1e-9).unwrap();
        let t = rollout(&mdp, &pi, &r, 3, RolloutMode::Deterministic, 0, 16);
        assert!(t.steps.is_empty());
        assert_eq!(t.cumulative_reward, 0.0);
        assert!(!t.truncated);
    }

    #[test]
    fn corridor_rollout_reward_97() {
        let (mdp, r) = corridor(4, 100.0, -1.0);
        let (_, pi) = value_iteration(&mdp, &r, 1.0, 1e-9).unwrap();
        let t = rollout(&mdp, &pi, &r, 0, RolloutMode::Deterministic, 0, 16);
        assert_eq!(t.steps.len(), 3);
        assert!((t.cumulative_reward - 97.0).abs() < 1e-9);
        assert_eq!(t.visited_states(), alloc::vec![0, 1, 2, 3]);
    }

    #[test]
    fn stochastic_rollout_reproducible() {
        let mdp = noisy_corridor(6, 0.85);
        let r = RewardFunction::new(-1.0);
        let pi = always_right(&mdp);
        let a = rollout(&mdp, &pi, &r, 0, RolloutMode::Stochastic, 42, 64);
        let b = rollout(&mdp, &pi, &r, 0, RolloutMode::Stochastic, 42, 64);
        assert_eq!(a, b);
    }

    #[test]
    fn horizon_cap_sets_truncated() {
        // policy that walks left forever never terminates
        let (mdp, r) = corridor(4, 100.0, -1.0);
        let pi = Policy {
            actions: alloc::vec![Some(0), Some(0), Some(0), None],
        };
        let t = rollout(&mdp, &pi, &r, 2, RolloutMode::Deterministic, 0, 10);
        assert!(t.truncated);
        assert_eq!(t.steps.len(), 10);
    }

    #[test]
    fn expected_return_deterministic_is_exact() {
        let (mdp, r) = corridor(4, 100.0, -1.0);
        let (_, pi) = value_iteration(&mdp, &r, 1.0, 1e-9).unwrap();
        for n in [1, 7, 100] {
            let e = expected_return(&mdp, &pi, &r, 0, n, 9);
            assert!((e - 97.0).abs() < 1e-9);
        }
    }

    #[test]
    fn expected_return_single_rollout_is_one_episode() {
        let mdp = noisy_corridor(6, 0.85);
        let r = RewardFunction::new(-1.0);
        let pi = always_right(&mdp);
        let seed = 31;
        let e = expected_return(&mdp, &pi, &r, 0, 1, seed);
        let episode_seed = SeededRng::derived(seed, 0).next_u64();
        let t = rollout(
            &mdp,
            &pi,
            &r,
            0,
            RolloutMode::Stochastic,
            episode_seed,
            mdp.default_horizon(),
        );
        assert_eq!(e, t.cumulative_reward);
    }

    /// Corridor with slip: action right moves right with probability p and
    /// left otherwise (clamped at 0); state n-1 terminal.
    pub(crate) fn noisy_corridor(n: usize, p: f64) -> Mdp {
        let mut b = MdpBuilder::new(n, 2);
        for s in 0..n - 1 {
            let left = s.saturating_sub(1);
            b.transition(s, 0, left, p);
            b.transition(s, 0, s + 1, 1.0 - p);
            b.transition(s, 1, s + 1, p);
            b.transition(s, 1, left, 1.0 - p);
        }
        b.build().unwrap()
    }

    pub(crate) fn always_right(mdp: &Mdp) -> Policy {
        Policy {
            actions: (0..mdp.n_states())
                .map(|s| if mdp.is_terminal(s) { None } else { Some(1) })
                .collect(),
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn expected_return_matches_markov_chain_solution() {
        // Solve the chain induced by always-right on the 85% corridor by
        // Gaussian elimination: E[s] = -1 + p E[s+1] + (1-p) E[s-1].
        let n = 5;
        let p = 0.85;
        let mdp = noisy_corridor(n, p);
        let pi = always_right(&mdp);
        let r = RewardFunction::new(-1.0);

        // linear system solved directly on the tridiagonal structure
        let m = n - 1; // non-terminal states 0..m
        let mut a = alloc::vec![alloc::vec![0.0f64; m + 1]; m];
        for s in 0..m {
            a[s][s] = 1.0;
            let left = s.saturating_sub(1);
            let right = s + 1;
            if right < m {
                a[s][right] -= p;
            }
            if left < m && s > 0 {
                a[s][left] -= 1.0 - p;
            } else if s == 0 {
                a[s][0] -= 1.0 - p; // bounces back to itself at the wall
            }
            a[s][m] = -1.0;
        }
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for x in a[col].iter_mut() {
                *x /= d;
            }
            for row in 0..m {
                if row != col {
                    let f = a[row][col];
                    for k in 0..=m {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        let exact = a[0][m];

        let n_rollouts = 10_000;
        let est = expected_return(&mdp, &pi, &r, 0, n_rollouts, 123);
        // crude variance bound: episode lengths are small geometric-ish sums
        let se = 3.0 * 6.0 / (n_rollouts as f64).sqrt();
        assert!(
            (est - exact).abs() < se.max(0.5),
            "estimate {est} vs exact {exact}"
        );
    }

    #[test]
    fn bellman_residual_after_convergence() {
        let mdp = noisy_corridor(8, 0.85);
        let mut r = RewardFunction::new(-1.0);
        r.set(6, 1, 7, 99.0);
        let gamma = 0.99;
        let (v, pi) = value_iteration(&mdp, &r, gamma, 1e-8).unwrap();
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in mdp.legal_actions(s) {
                let (succs, probs) = mdp.transitions(s, a);
                let q: f64 = succs
                    .iter()
                    .zip(probs)
                    .map(|(&sp, &p)| p * (r.get(s, a, sp as usize) + gamma * v[sp as usize]))
                    .sum();
                if q > best {
                    best = q;
                }
            }
            assert!((best - v[s]).abs() < 1e-6, "residual at {s}");
            // greedy one-step lookahead of the returned policy matches V
            let a = pi.action(s).unwrap();
            let (succs, probs) = mdp.transitions(s, a);
            let q: f64 = succs
                .iter()
                .zip(probs)
                .map(|(&sp, &p)| p * (r.get(s, a, sp as usize) + gamma * v[sp as usize]))
                .sum();
            assert!((q - v[s]).abs() < 1e-6);
        }
    }

    #[test]
    fn nonconvergence_reported() {
        // two states chasing each other with positive reward and gamma 1
        let mut b = MdpBuilder::new(3, 1);
        b.transition(0, 0, 1, 1.0);
        b.transition(1, 0, 0, 1.0);
        let mdp = b.build().unwrap();
        let r = RewardFunction::new(1.0);
        match value_iteration(&mdp, &r, 1.0, 1e-9) {
            Err(PlanError::NonConvergence { .. }) => {}
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
