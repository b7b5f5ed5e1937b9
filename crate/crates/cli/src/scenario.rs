//! Scenario assembly and the repair pipeline.
//!
//! A scenario pairs two MDPs over the same state space: the `world` built
//! from the burning map (fire cells terminal, true rewards) and the agent's
//! `model` built from the fire-free map (hazards are ordinary floor there).
//! Policies are planned on the model; episodes are scored in the world.

use anyhow::{bail, Result};
use serde::Serialize;
use spear_core::evac::{generate_map, place_fires, to_mdp, CellType, DomainParams, EvacMap};
use spear_core::mdp::{
    rollout, value_iteration, Mdp, Policy, RewardFunction, RolloutMode, DEFAULT_GAMMA, DEFAULT_TOL,
};
use spear_core::predicates::{build_coverage_matrices, PredicateSet};
use spear_core::rng::SeededRng;
use spear_core::setcover::{dump_instance, solve_spear_ip, CoverCase, IpInstance};
use spear_core::spear::{
    apply_feedback, desired_trajectory, estimate_agent_reward, feedback_from_selection,
    find_divergent_states, run_spear, Feedback, SpearConfig, SpearError, SpearRun,
};

// independent seed streams per scenario ingredient
const STREAM_FIRE: u64 = 0xF14E;
const STREAM_START: u64 = 0x57A7;
const STREAM_OBS: u64 = 0x0B5E;

/// Everything needed to run and evaluate one repair.
pub struct Scenario {
    pub clean: EvacMap,
    pub burnt: EvacMap,
    pub params: DomainParams,
    /// Shared movement model (fires walkable): all planning happens here.
    pub model: Mdp,
    /// True environment (fires terminal): all episodes are scored here.
    pub world: Mdp,
    pub r_true: RewardFunction,
    pub r_h: RewardFunction,
    /// Observed exit state ids.
    pub observed: Vec<usize>,
    /// Start state id.
    pub start: usize,
}

impl Scenario {
    /// Builds a scenario from an already-burning map. `observed_exits` are
    /// indices into `burnt.exit_cells`; `start_cell` must be a floor cell
    /// (picked at random from `seed` when absent).
    pub fn from_burnt_map(
        burnt: EvacMap,
        params: DomainParams,
        observed_exits: &[usize],
        start_cell: Option<(usize, usize)>,
        seed: u64,
    ) -> Result<Scenario> {
        let clean = burnt.without_fires();
        let idx = clean.state_index();
        let (model, _) = to_mdp(&clean, &params)?;
        let (world, r_true) = to_mdp(&burnt, &params)?;

        let mut observed = Vec::new();
        for &i in observed_exits {
            let Some(&(x, y)) = burnt.exit_cells.get(i) else {
                bail!(
                    "observed exit index {i} out of range ({} exits)",
                    burnt.exit_cells.len()
                );
            };
            observed.push(idx.id(x, y).unwrap());
        }
        if observed.is_empty() {
            bail!("at least one observed exit is required");
        }

        let start = match start_cell {
            Some((x, y)) => {
                if x >= burnt.width || y >= burnt.height || burnt.cell(x, y) != CellType::Floor {
                    bail!("start cell {x},{y} is not a floor cell");
                }
                idx.id(x, y).unwrap()
            }
            None => pick_floor_start(&burnt, seed),
        };

        let r_h = estimate_agent_reward(&r_true, &observed)?;
        Ok(Scenario {
            clean,
            burnt,
            params,
            model,
            world,
            r_true,
            r_h,
            observed,
            start,
        })
    }

    /// Generates a full scenario from a map seed: layout, fires, and a
    /// random floor start. With `observe_all` the agent knows every exit and
    /// its divergence is purely fire-ignorance; otherwise it has seen a
    /// single randomly chosen exit.
    pub fn generate(params: &DomainParams, map_seed: u64, observe_all: bool) -> Result<Scenario> {
        let clean = generate_map(params, map_seed)?;
        let burnt = place_fires(
            &clean,
            params.fire_seeds,
            params.fire_expansion_steps,
            SeededRng::derived(map_seed, STREAM_FIRE).next_u64(),
        );
        let observed = if observe_all {
            (0..burnt.exit_cells.len()).collect()
        } else {
            let mut obs_rng = SeededRng::derived(map_seed, STREAM_OBS);
            vec![obs_rng.next_below(burnt.exit_cells.len())]
        };
        Scenario::from_burnt_map(burnt, params.clone(), &observed, None, map_seed)
    }
}

fn pick_floor_start(burnt: &EvacMap, seed: u64) -> usize {
    let idx = burnt.state_index();
    let floor = burnt.cells_of(CellType::Floor);
    let mut rng = SeededRng::derived(seed, STREAM_START);
    let (x, y) = floor[rng.next_below(floor.len())];
    idx.id(x, y).unwrap()
}

/// Per-map outcome classification for reports. A map that needed the
/// contingency loop counts as case three even though its final solve is
/// case one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseLabel {
    /// No divergence found: nothing to repair.
    None,
    One,
    Two,
    Three,
    LoopLimit,
}

impl CaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseLabel::None => "none",
            CaseLabel::One => "one",
            CaseLabel::Two => "two",
            CaseLabel::Three => "three",
            CaseLabel::LoopLimit => "loop_limit",
        }
    }
}

/// A finished repair attempt with the policies needed for evaluation.
pub struct RepairOutcome {
    pub label: CaseLabel,
    /// Total contingency loops across all coaching rounds.
    pub loops: usize,
    /// Every round that produced feedback, in order.
    pub rounds: Vec<SpearRun>,
    pub error: Option<SpearError>,
    /// Agent policy before any update (trained on the malformed reward).
    pub pre_policy: Policy,
    /// Agent policy after all updates were applied and retrained (equals
    /// `pre_policy` when there was nothing to apply).
    pub post_policy: Policy,
}

impl RepairOutcome {
    /// The run whose feedback was communicated first, if any.
    pub fn run(&self) -> Option<&SpearRun> {
        self.rounds.first()
    }
}

/// Upper bound on coaching rounds per episode; each round covers at least
/// one new region, so this is never reached on sane maps.
const MAX_COACHING_ROUNDS: usize = 32;

/// Runs the coaching protocol on a scenario: plan the agent, then
/// repeatedly run the repair procedure, apply its feedback to the agent's
/// reward function, and retrain, until no divergence remains. The evaluation
/// protocol updates the agent's policy after each communicated update.
pub fn run_repair(
    sc: &Scenario,
    predicates: &PredicateSet,
    cfg: &SpearConfig,
) -> Result<RepairOutcome> {
    let (_, pre_policy) = value_iteration(&sc.model, &sc.r_h, DEFAULT_GAMMA, DEFAULT_TOL)
        .map_err(|e| anyhow::anyhow!("planning the agent policy failed: {e}"))?;

    let mut r_h_current = sc.r_h.clone();
    let mut rounds: Vec<SpearRun> = Vec::new();
    let mut label = CaseLabel::None;
    let mut error = None;
    let mut loops = 0;

    for round in 0..MAX_COACHING_ROUNDS {
        let round_cfg = SpearConfig {
            rng_seed: SeededRng::derived(cfg.rng_seed, round as u64).next_u64(),
            ..cfg.clone()
        };
        match run_spear(
            &sc.model,
            &sc.r_true,
            &r_h_current,
            predicates,
            &round_cfg,
            sc.start,
        ) {
            Ok(run) if run.feedback.is_empty() => break,
            Ok(run) => {
                let updated = apply_feedback(&sc.model, &r_h_current, &run.feedback);
                if updated == r_h_current {
                    // nothing new communicated: further rounds cannot help
                    label = CaseLabel::LoopLimit;
                    break;
                }
                r_h_current = updated;
                loops += run.loop_count();
                if run.loop_count() > 1 {
                    label = CaseLabel::Three;
                } else if label == CaseLabel::None {
                    label = CaseLabel::One;
                }
                rounds.push(run);
                if round + 1 == MAX_COACHING_ROUNDS {
                    label = CaseLabel::LoopLimit;
                }
            }
            Err(e @ SpearError::NoSolution { .. }) => {
                label = CaseLabel::Two;
                error = Some(e);
                break;
            }
            Err(SpearError::LoopLimitExceeded { .. }) => {
                // the contingency cannot produce a clean cover here;
                // a suboptimal (overlapping) cover is still preferable to no
                // update, so communicate the plain case-three solution
                match case3_fallback(sc, predicates, &round_cfg, &r_h_current)? {
                    Some(fb) => {
                        let updated = apply_feedback(&sc.model, &r_h_current, &fb);
                        if updated == r_h_current {
                            label = CaseLabel::LoopLimit;
                            break;
                        }
                        r_h_current = updated;
                        label = CaseLabel::Three;
                        loops += 1;
                    }
                    None => {
                        label = CaseLabel::LoopLimit;
                        error = Some(SpearError::LoopLimitExceeded {
                            loops: cfg.max_outer_loops,
                        });
                        break;
                    }
                }
            }
            Err(e) => bail!("repair failed: {e}"),
        }
    }

    let post_policy = if rounds.is_empty() {
        pre_policy.clone()
    } else {
        value_iteration(&sc.model, &r_h_current, DEFAULT_GAMMA, DEFAULT_TOL)
            .map_err(|e| anyhow::anyhow!("retraining on the update failed: {e}"))?
            .1
    };
    Ok(RepairOutcome {
        label,
        loops,
        rounds,
        error,
        pre_policy,
        post_policy,
    })
}

/// One fresh divergence scan and solve against the un-penalized true
/// reward, accepting the overlapping (case-three) cover as the update.
fn case3_fallback(
    sc: &Scenario,
    predicates: &PredicateSet,
    cfg: &SpearConfig,
    r_h_current: &spear_core::mdp::RewardFunction,
) -> Result<Option<Feedback>> {
    let (s_bar, r_h_star) =
        find_divergent_states(&sc.model, &sc.r_true, r_h_current, cfg, sc.start)
            .map_err(|e| anyhow::anyhow!("divergence scan failed: {e}"))?;
    if s_bar.is_empty() {
        return Ok(None);
    }
    let (_, pi_h_star) = value_iteration(&sc.model, &r_h_star, DEFAULT_GAMMA, DEFAULT_TOL)
        .map_err(|e| anyhow::anyhow!("planning failed: {e}"))?;
    let desired = desired_trajectory(&sc.model, &pi_h_star, sc.start);
    let cm = build_coverage_matrices(&s_bar, &desired, predicates);
    let inst = IpInstance::new(&cm, predicates.costs())
        .map_err(|e| anyhow::anyhow!("bad instance: {e}"))?;
    let sol = solve_spear_ip(&inst);
    if sol.case == CoverCase::Two {
        return Ok(None);
    }
    Ok(Some(feedback_from_selection(
        &sol.selected,
        predicates,
        cfg.feedback_reward,
    )))
}

/// One communicated update only (no coaching iteration): run the procedure
/// once, apply its feedback, retrain. This is what `run-scenario` reports.
pub fn run_single_repair(
    sc: &Scenario,
    predicates: &PredicateSet,
    cfg: &SpearConfig,
) -> Result<RepairOutcome> {
    let (_, pre_policy) = value_iteration(&sc.model, &sc.r_h, DEFAULT_GAMMA, DEFAULT_TOL)
        .map_err(|e| anyhow::anyhow!("planning the agent policy failed: {e}"))?;
    match run_spear(&sc.model, &sc.r_true, &sc.r_h, predicates, cfg, sc.start) {
        Ok(run) => {
            let label = if run.loops.is_empty() {
                CaseLabel::None
            } else if run.loop_count() == 1 {
                CaseLabel::One
            } else {
                CaseLabel::Three
            };
            let post_policy = if run.feedback.is_empty() {
                pre_policy.clone()
            } else {
                let repaired = apply_feedback(&sc.model, &sc.r_h, &run.feedback);
                value_iteration(&sc.model, &repaired, DEFAULT_GAMMA, DEFAULT_TOL)
                    .map_err(|e| anyhow::anyhow!("retraining on the update failed: {e}"))?
                    .1
            };
            Ok(RepairOutcome {
                label,
                loops: run.loop_count(),
                rounds: vec![run],
                error: None,
                pre_policy,
                post_policy,
            })
        }
        Err(e @ SpearError::NoSolution { .. }) => Ok(RepairOutcome {
            label: CaseLabel::Two,
            loops: 0,
            rounds: Vec::new(),
            error: Some(e),
            pre_policy: pre_policy.clone(),
            post_policy: pre_policy,
        }),
        Err(e @ SpearError::LoopLimitExceeded { .. }) => Ok(RepairOutcome {
            label: CaseLabel::LoopLimit,
            loops: 0,
            rounds: Vec::new(),
            error: Some(e),
            pre_policy: pre_policy.clone(),
            post_policy: pre_policy,
        }),
        Err(e) => bail!("repair failed: {e}"),
    }
}

/// Single deterministic episode return in the world.
pub fn det_return(world: &Mdp, policy: &Policy, r_true: &RewardFunction, start: usize) -> f64 {
    rollout(
        world,
        policy,
        r_true,
        start,
        RolloutMode::Deterministic,
        0,
        world.default_horizon(),
    )
    .cumulative_reward
}

/// Single sampled episode return in the world.
pub fn episode_return(
    world: &Mdp,
    policy: &Policy,
    r_true: &RewardFunction,
    start: usize,
    seed: u64,
) -> f64 {
    rollout(
        world,
        policy,
        r_true,
        start,
        RolloutMode::Stochastic,
        seed,
        world.default_horizon(),
    )
    .cumulative_reward
}

/// Optimal policy for the true environment.
pub fn optimal_policy(sc: &Scenario) -> Result<Policy> {
    value_iteration(&sc.world, &sc.r_true, DEFAULT_GAMMA, DEFAULT_TOL)
        .map(|(_, p)| p)
        .map_err(|e| anyhow::anyhow!("planning the optimal policy failed: {e}"))
}

// ---------------------------------------------------------------------------
// Structured run record (JSON)
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct RunRecordJson {
    pub map_seed: u64,
    pub start: usize,
    pub observed_exits: Vec<usize>,
    pub reward_floor: f64,
    pub n_rollouts: usize,
    pub case_sequence: Vec<String>,
    pub loops: Vec<LoopJson>,
    pub feedback: FeedbackJson,
    pub reward_modified: bool,
    pub return_pre: f64,
    pub return_post: f64,
    pub return_optimal: f64,
}

#[derive(Serialize)]
pub struct LoopJson {
    pub s_bar: Vec<usize>,
    pub desired_path: Vec<usize>,
    pub case: String,
    pub objective: f64,
    pub selected: Vec<usize>,
    pub instance: String,
}

#[derive(Serialize)]
pub struct FeedbackJson {
    pub selected: Vec<usize>,
    pub descriptions: Vec<String>,
    pub communicated_reward: f64,
    pub covered_states: Vec<usize>,
    pub message: String,
}

fn case_str(c: CoverCase) -> String {
    match c {
        CoverCase::One => "one",
        CoverCase::Two => "two",
        CoverCase::Three => "three",
    }
    .to_string()
}

pub fn run_record_json(
    map_seed: u64,
    sc: &Scenario,
    cfg: &SpearConfig,
    run: &SpearRun,
    return_pre: f64,
    return_post: f64,
    return_optimal: f64,
) -> RunRecordJson {
    RunRecordJson {
        map_seed,
        start: sc.start,
        observed_exits: sc.observed.clone(),
        reward_floor: cfg.reward_floor,
        n_rollouts: cfg.n_rollouts,
        case_sequence: run.case_sequence().into_iter().map(case_str).collect(),
        loops: run
            .loops
            .iter()
            .map(|l| LoopJson {
                s_bar: l.s_bar.clone(),
                desired_path: l.desired_path.clone(),
                case: case_str(l.case),
                objective: l.objective,
                selected: l.selected.clone(),
                instance: dump_instance(&l.instance),
            })
            .collect(),
        feedback: FeedbackJson {
            selected: run.feedback.selected.clone(),
            descriptions: run.feedback.descriptions.clone(),
            communicated_reward: run.feedback.communicated_reward,
            covered_states: run.feedback.covered.to_vec(),
            message: run.feedback.message.clone(),
        },
        reward_modified: run.reward_modified,
        return_pre,
        return_post,
        return_optimal,
    }
}
