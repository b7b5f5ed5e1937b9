//! The penalized weighted set cover behind the repair procedure.
//!
//! Minimize  sum_j c_j x_j + L * sum_k sum_j v_kj x_j
//! subject to sum_j u_ij x_j >= 1 for every divergent-state row i.
//!
//! Because the penalty term is linear in x, each predicate simply carries an
//! effective cost c_j + L * (number of desired-trajectory rows it touches),
//! and the problem is an ordinary weighted set cover over the U rows. It is
//! solved exactly by branch and bound with a greedy incumbent; greedy,
//! exhaustive, and exact-cover baselines share the representation.
//!
//! Outcomes are classified per the three cases: a cover with objective below
//! L (case one), no cover at all (case two), or a cover whose objective
//! reaches L because it overlaps the desired trajectory (case three).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bitset::BitSet;
use crate::evac::ParseError;
use crate::predicates::{CoverageMatrices, PredicateSet};

/// Default predicate-count bound for the exhaustive oracle.
pub const BRUTE_FORCE_LIMIT: usize = 20;
/// Default predicate-count bound for the exact-cover baseline.
pub const QM_LIMIT: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    /// Instance invariants violated (non-positive cost, L too small, shape).
    BadInstance(String),
    /// Exhaustive enumeration refused: too many predicates.
    SizeLimit { size: usize, limit: usize },
}

impl core::fmt::Display for SolverError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SolverError::BadInstance(m) => write!(f, "bad instance: {m}"),
            SolverError::SizeLimit { size, limit } => {
                write!(
                    f,
                    "instance has {size} predicates, exhaustive limit is {limit}"
                )
            }
        }
    }
}

impl core::error::Error for SolverError {}

/// One solver instance: the two coverage matrices, predicate costs, and the
/// overlap penalty L (strictly larger than the sum of all costs).
#[derive(Clone, Debug, PartialEq)]
pub struct IpInstance {
    u_rows: Vec<BitSet>,
    v_rows: Vec<BitSet>,
    costs: Vec<f64>,
    l: f64,
}

impl IpInstance {
    /// Builds an instance, deriving `L = 1 + sum of costs`.
    pub fn new(cm: &CoverageMatrices, costs: Vec<f64>) -> Result<Self, SolverError> {
        let l = 1.0 + costs.iter().sum::<f64>();
        Self::with_l(cm, costs, l)
    }

    pub fn with_l(cm: &CoverageMatrices, costs: Vec<f64>, l: f64) -> Result<Self, SolverError> {
        Self::from_rows(cm.u_rows.clone(), cm.v_rows.clone(), costs, l)
    }

    pub fn from_rows(
        u_rows: Vec<BitSet>,
        v_rows: Vec<BitSet>,
        costs: Vec<f64>,
        l: f64,
    ) -> Result<Self, SolverError> {
        let n_cols = costs.len();
        for row in u_rows.iter().chain(v_rows.iter()) {
            if row.len() != n_cols {
                return Err(SolverError::BadInstance(format!(
                    "row width {} != {} costs",
                    row.len(),
                    n_cols
                )));
            }
        }
        if costs.iter().any(|&c| c.is_nan() || c <= 0.0) {
            return Err(SolverError::BadInstance(
                "costs must be strictly positive".into(),
            ));
        }
        let total: f64 = costs.iter().sum();
        if l.is_nan() || l <= total {
            return Err(SolverError::BadInstance(format!(
                "L = {l} must exceed the cost sum {total}"
            )));
        }
        Ok(IpInstance {
            u_rows,
            v_rows,
            costs,
            l,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.costs.len()
    }

    pub fn n_rows(&self) -> usize {
        self.u_rows.len()
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn u_rows(&self) -> &[BitSet] {
        &self.u_rows
    }

    pub fn v_rows(&self) -> &[BitSet] {
        &self.v_rows
    }

    /// Number of desired-trajectory rows each column touches.
    fn overlap_counts(&self) -> Vec<usize> {
        let mut w = vec![0usize; self.n_cols()];
        for row in &self.v_rows {
            for j in row.iter() {
                w[j] += 1;
            }
        }
        w
    }

    /// Per-column masks over the U rows.
    fn column_masks(&self) -> Vec<BitSet> {
        let n_rows = self.u_rows.len();
        let mut masks = vec![BitSet::new(n_rows); self.n_cols()];
        for (i, row) in self.u_rows.iter().enumerate() {
            for j in row.iter() {
                masks[j].insert(i);
            }
        }
        masks
    }

    /// Eq. objective of a selection, recomputed from scratch.
    pub fn objective_of(&self, selected: &[usize]) -> f64 {
        let w = self.overlap_counts();
        selected
            .iter()
            .map(|&j| self.costs[j] + self.l * w[j] as f64)
            .sum()
    }

    /// True when `selected` covers every U row.
    pub fn is_feasible(&self, selected: &[usize]) -> bool {
        self.u_rows
            .iter()
            .all(|row| selected.iter().any(|&j| row.contains(j)))
    }
}

/// Outcome classification for a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoverCase {
    /// Cover found with objective below L: usable as-is.
    One,
    /// No cover exists for some row.
    Two,
    /// Cover found but it overlaps the desired trajectory (objective >= L).
    Three,
}

/// A solve result: chosen predicate columns (ascending), the objective
/// value, and the case. Case two carries an empty selection and an infinite
/// objective.
#[derive(Clone, Debug, PartialEq)]
pub struct SetCoverSolution {
    pub selected: Vec<usize>,
    pub objective: f64,
    pub case: CoverCase,
}

impl SetCoverSolution {
    fn infeasible() -> Self {
        SetCoverSolution {
            selected: Vec::new(),
            objective: f64::INFINITY,
            case: CoverCase::Two,
        }
    }

    fn classified(inst: &IpInstance, selected: Vec<usize>) -> Self {
        let objective = inst.objective_of(&selected);
        let case = if objective >= inst.l {
            CoverCase::Three
        } else {
            CoverCase::One
        };
        SetCoverSolution {
            selected,
            objective,
            case,
        }
    }
}

/// How trajectory overlap is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OverlapMode {
    /// Overlapping predicates pay the L penalty in the objective.
    #[default]
    SoftPenalty,
    /// Overlapping predicates may not be selected at all.
    HardExclusion,
}

/// `(objective, count, lexicographic selection)` preference between two
/// candidate solutions; all ties resolved deterministically.
fn better(obj_a: f64, sel_a: &[usize], obj_b: f64, sel_b: &[usize]) -> bool {
    if obj_a != obj_b {
        return obj_a < obj_b;
    }
    if sel_a.len() != sel_b.len() {
        return sel_a.len() < sel_b.len();
    }
    sel_a < sel_b
}

/// Exact solve of the penalized cover by branch and bound. Uses the greedy
/// solution as the incumbent, branches on the column with the best
/// rows-per-cost ratio, and bounds with a fractional completion estimate.
pub fn solve_spear_ip(inst: &IpInstance) -> SetCoverSolution {
    solve_with_mode(inst, OverlapMode::SoftPenalty)
}

pub fn solve_with_mode(inst: &IpInstance, mode: OverlapMode) -> SetCoverSolution {
    let w = inst.overlap_counts();
    let masks = inst.column_masks();
    let eff: Vec<f64> = match mode {
        OverlapMode::SoftPenalty => (0..inst.n_cols())
            .map(|j| inst.costs[j] + inst.l * w[j] as f64)
            .collect(),
        OverlapMode::HardExclusion => inst.costs.clone(),
    };
    let active: Vec<usize> = (0..inst.n_cols())
        .filter(|&j| match mode {
            OverlapMode::SoftPenalty => !masks[j].is_empty(),
            OverlapMode::HardExclusion => !masks[j].is_empty() && w[j] == 0,
        })
        .collect();

    let n_rows = inst.n_rows();
    if n_rows == 0 {
        return SetCoverSolution {
            selected: Vec::new(),
            objective: 0.0,
            case: CoverCase::One,
        };
    }

    // feasibility: every row needs at least one active column
    let mut reachable = BitSet::new(n_rows);
    for &j in &active {
        reachable.union_with(&masks[j]);
    }
    if reachable.count() < n_rows {
        return SetCoverSolution::infeasible();
    }

    // drop duplicate columns: same mask, keep cheapest (then lowest id)
    let active = dedupe_columns(&active, &masks, &eff);

    // greedy incumbent
    let mut best = greedy_on(&active, &masks, &eff, n_rows)
        .expect("feasible instance must have a greedy cover");

    // exact search
    let all_rows = BitSet::from_indices(n_rows, 0..n_rows);
    let mut chosen: Vec<usize> = Vec::new();
    branch(
        &active,
        &masks,
        &eff,
        &all_rows,
        &mut chosen,
        0.0,
        &mut best,
    );

    let mut selected = best.0;
    selected.sort_unstable();
    match mode {
        OverlapMode::SoftPenalty => SetCoverSolution::classified(inst, selected),
        OverlapMode::HardExclusion => {
            // overlapping columns were excluded a priori, so the raw cost is
            // the objective and the outcome is always case one
            let objective = inst.objective_of(&selected);
            SetCoverSolution {
                selected,
                objective,
                case: CoverCase::One,
            }
        }
    }
}

fn dedupe_columns(active: &[usize], masks: &[BitSet], eff: &[f64]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(active.len());
    'outer: for &j in active {
        for &k in &kept {
            if masks[k] == masks[j] {
                // equal coverage: keep the cheaper column (ids ascend, so a
                // tie keeps the earlier id)
                if eff[j] < eff[k] {
                    let pos = kept.iter().position(|&x| x == k).unwrap();
                    kept[pos] = j;
                }
                continue 'outer;
            }
        }
        kept.push(j);
    }
    kept.sort_unstable();
    kept
}

fn greedy_on(
    active: &[usize],
    masks: &[BitSet],
    eff: &[f64],
    n_rows: usize,
) -> Option<(Vec<usize>, f64)> {
    let mut uncovered = BitSet::from_indices(n_rows, 0..n_rows);
    let mut selected = Vec::new();
    let mut total = 0.0;
    while uncovered.count() > 0 {
        let mut best_j = None;
        let mut best_ratio = f64::INFINITY;
        for &j in active {
            let gain = masks[j].intersection_count(&uncovered);
            if gain == 0 {
                continue;
            }
            let ratio = eff[j] / gain as f64;
            if ratio < best_ratio {
                best_ratio = ratio;
                best_j = Some(j);
            }
        }
        let j = best_j?;
        selected.push(j);
        total += eff[j];
        uncovered.difference_with(&masks[j]);
    }
    selected.sort_unstable();
    Some((selected, total))
}

/// DFS branch and bound. `best` holds `(selection, objective)` and is
/// updated in place whenever a strictly better `(objective, count, lex)`
/// solution is found. `chosen` is restored to its entry length on return.
fn branch(
    active: &[usize],
    masks: &[BitSet],
    eff: &[f64],
    uncovered: &BitSet,
    chosen: &mut Vec<usize>,
    cost: f64,
    best: &mut (Vec<usize>, f64),
) {
    let entry_len = chosen.len();
    let mut uncovered = uncovered.clone();
    let mut cost = cost;

    // keep only columns still covering something
    let mut live: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&j| masks[j].intersection_count(&uncovered) > 0)
        .collect();

    // rows with a single remaining cover force that column in; rows with
    // none kill the node
    'reduce: while !uncovered.is_empty() {
        for row in uncovered.clone().iter() {
            let mut covering = live.iter().copied().filter(|&j| masks[j].contains(row));
            let first = covering.next();
            let second = covering.next();
            match (first, second) {
                (None, _) => {
                    chosen.truncate(entry_len);
                    return;
                }
                (Some(j), None) => {
                    chosen.push(j);
                    cost += eff[j];
                    uncovered.difference_with(&masks[j]);
                    live.retain(|&k| k != j && masks[k].intersection_count(&uncovered) > 0);
                    continue 'reduce;
                }
                _ => {}
            }
        }
        break;
    }

    if uncovered.is_empty() {
        let mut sel = chosen.clone();
        sel.sort_unstable();
        if better(cost, &sel, best.1, &best.0) {
            *best = (sel, cost);
        }
        chosen.truncate(entry_len);
        return;
    }

    // fractional completion bound: each uncovered row pays at least the best
    // cost-per-newly-covered-row of any column that covers it
    let mut lb = cost;
    for row in uncovered.iter() {
        let mut price = f64::INFINITY;
        for &j in &live {
            if masks[j].contains(row) {
                let k = masks[j].intersection_count(&uncovered);
                let p = eff[j] / k as f64;
                if p < price {
                    price = p;
                }
            }
        }
        lb += price;
    }
    // any completion needs at least one more column, so an equal-bound node
    // that is already at the incumbent's size cannot improve the tie-break
    if lb > best.1 || (lb == best.1 && chosen.len() + 1 > best.0.len()) {
        chosen.truncate(entry_len);
        return;
    }

    // branch on the best cover-per-cost column (ties: lowest id), include
    // branch first
    let mut pick = live[0];
    let mut pick_ratio = -1.0;
    for &j in &live {
        let gain = masks[j].intersection_count(&uncovered) as f64;
        let ratio = gain / eff[j];
        if ratio > pick_ratio {
            pick_ratio = ratio;
            pick = j;
        }
    }

    chosen.push(pick);
    let mut remaining = uncovered.clone();
    remaining.difference_with(&masks[pick]);
    branch(
        &live,
        masks,
        eff,
        &remaining,
        chosen,
        cost + eff[pick],
        best,
    );
    chosen.pop();

    let without: Vec<usize> = live.iter().copied().filter(|&j| j != pick).collect();
    branch(&without, masks, eff, &uncovered, chosen, cost, best);

    chosen.truncate(entry_len);
}

/// Classic greedy cover on the penalized costs: repeatedly select the column
/// minimizing effective cost per newly covered row. Feasible whenever the
/// exact solver is; objective is an upper bound on the optimum.
pub fn greedy_cover(inst: &IpInstance) -> SetCoverSolution {
    let w = inst.overlap_counts();
    let masks = inst.column_masks();
    let eff: Vec<f64> = (0..inst.n_cols())
        .map(|j| inst.costs[j] + inst.l * w[j] as f64)
        .collect();
    let active: Vec<usize> = (0..inst.n_cols())
        .filter(|&j| !masks[j].is_empty())
        .collect();
    if inst.n_rows() == 0 {
        return SetCoverSolution {
            selected: Vec::new(),
            objective: 0.0,
            case: CoverCase::One,
        };
    }
    match greedy_on(&active, &masks, &eff, inst.n_rows()) {
        Some((selected, _)) => SetCoverSolution::classified(inst, selected),
        None => SetCoverSolution::infeasible(),
    }
}

/// Exhaustive oracle: enumerates all subsets. Only for small instances;
/// errors above [`BRUTE_FORCE_LIMIT`] predicates.
pub fn brute_force_cover(inst: &IpInstance) -> Result<SetCoverSolution, SolverError> {
    let n = inst.n_cols();
    if n > BRUTE_FORCE_LIMIT {
        return Err(SolverError::SizeLimit {
            size: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let w = inst.overlap_counts();
    let masks = inst.column_masks();
    let eff: Vec<f64> = (0..n)
        .map(|j| inst.costs[j] + inst.l * w[j] as f64)
        .collect();
    let n_rows = inst.n_rows();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in 0..(1u32 << n) {
        let mut covered = BitSet::new(n_rows);
        let mut obj = 0.0;
        let mut sel = Vec::new();
        for j in 0..n {
            if subset & (1 << j) != 0 {
                covered.union_with(&masks[j]);
                obj += eff[j];
                sel.push(j);
            }
        }
        if covered.count() < n_rows {
            continue;
        }
        let replace = match &best {
            None => true,
            Some((bsel, bobj)) => better(obj, &sel, *bobj, bsel),
        };
        if replace {
            best = Some((sel, obj));
        }
    }
    Ok(match best {
        Some((selected, _)) => SetCoverSolution::classified(inst, selected),
        None => SetCoverSolution::infeasible(),
    })
}

/// Result of the exact-cover baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum QmOutcome {
    /// Minimum-cost selection whose extensions union to exactly the target.
    Exact { selected: Vec<usize>, cost: f64 },
    /// No selection unions to exactly the target set.
    NoExactSolution,
}

/// Exact-cover baseline in the style of prime-implicant covering: the union
/// of the selected extensions must equal `cover_states` exactly, with no
/// state over-covered outside it. Minimizes `(cost, count, lex)` by
/// exhaustive search over the admissible predicates.
pub fn qm_exact_cover(
    cover_states: &BitSet,
    predicates: &PredicateSet,
) -> Result<QmOutcome, SolverError> {
    qm_exact_cover_limited(cover_states, predicates, QM_LIMIT)
}

pub fn qm_exact_cover_limited(
    cover_states: &BitSet,
    predicates: &PredicateSet,
    limit: usize,
) -> Result<QmOutcome, SolverError> {
    if predicates.len() > limit {
        return Err(SolverError::SizeLimit {
            size: predicates.len(),
            limit,
        });
    }
    // only predicates fully inside the target can appear in an exact cover
    let candidates: Vec<usize> = predicates
        .iter()
        .filter(|p| !p.extension.is_empty() && p.extension.is_subset_of(cover_states))
        .map(|p| p.id)
        .collect();

    let mut union_all = BitSet::new(cover_states.len());
    for &j in &candidates {
        union_all.union_with(&predicates.get(j).extension);
    }
    if union_all != *cover_states {
        return Ok(QmOutcome::NoExactSolution);
    }

    let search = QmSearch {
        candidates: &candidates,
        preds: predicates,
        target: cover_states,
    };
    let mut best = None;
    let mut sel = Vec::new();
    let covered = BitSet::new(cover_states.len());
    search.rec(0, &covered, &mut sel, 0.0, &mut best);
    Ok(match best {
        Some((selected, cost)) => QmOutcome::Exact { selected, cost },
        None => QmOutcome::NoExactSolution,
    })
}

/// Exhaustive exact-cover DFS with cost pruning.
struct QmSearch<'a> {
    candidates: &'a [usize],
    preds: &'a PredicateSet,
    target: &'a BitSet,
}

impl QmSearch<'_> {
    fn rec(
        &self,
        i: usize,
        covered: &BitSet,
        sel: &mut Vec<usize>,
        cost: f64,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if covered == self.target {
            let replace = match best {
                None => true,
                Some((bsel, bobj)) => better(cost, sel, *bobj, bsel),
            };
            if replace {
                *best = Some((sel.clone(), cost));
            }
            return;
        }
        if i == self.candidates.len() {
            return;
        }
        if let Some((_, bobj)) = best {
            if cost > *bobj {
                return;
            }
        }
        // include candidate i
        let j = self.candidates[i];
        let mut with = covered.clone();
        with.union_with(&self.preds.get(j).extension);
        sel.push(j);
        self.rec(i + 1, &with, sel, cost + self.preds.get(j).cost, best);
        sel.pop();
        // exclude candidate i
        self.rec(i + 1, covered, sel, cost, best);
    }
}

// ---------------------------------------------------------------------------
// Debug dump format
// ---------------------------------------------------------------------------

/// Text dump of an instance (U rows, V rows, costs, L) for debugging and
/// fixture capture.
pub fn dump_instance(inst: &IpInstance) -> String {
    let mut out = String::from("ipinstance v1\n");
    out.push_str(&format!("l {}\n", inst.l));
    let costs: Vec<String> = inst.costs.iter().map(|c| format!("{c}")).collect();
    out.push_str(&format!("costs {}\n", costs.join(" ")));
    for row in &inst.u_rows {
        out.push_str(&format!("u {}\n", row_bits(row)));
    }
    for row in &inst.v_rows {
        out.push_str(&format!("v {}\n", row_bits(row)));
    }
    out.push_str("end\n");
    out
}

fn row_bits(row: &BitSet) -> String {
    let mut s = String::with_capacity(row.len() * 2);
    for j in 0..row.len() {
        if j > 0 {
            s.push(' ');
        }
        s.push(if row.contains(j) { '1' } else { '0' });
    }
    s
}

pub fn parse_instance(text: &str) -> Result<IpInstance, ParseError> {
    let fail = |line: usize, msg: String| ParseError {
        line: line + 1,
        msg,
    };
    let mut l = None;
    let mut costs: Option<Vec<f64>> = None;
    let mut u_rows = Vec::new();
    let mut v_rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if ln == 0 {
            if line != "ipinstance v1" {
                return Err(fail(ln, format!("expected 'ipinstance v1', got {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if line == "end" {
            break;
        }
        let (key, rest) = line
            .split_once(' ')
            .ok_or_else(|| fail(ln, format!("unexpected line {line:?}")))?;
        match key {
            "l" => {
                l = Some(rest.trim().parse().map_err(|_| fail(ln, "bad L".into()))?);
            }
            "costs" => {
                let parsed: Result<Vec<f64>, _> =
                    rest.split_whitespace().map(|t| t.parse()).collect();
                costs = Some(parsed.map_err(|_| fail(ln, "bad cost".into()))?);
            }
            "u" | "v" => {
                let n = costs
                    .as_ref()
                    .ok_or_else(|| fail(ln, "costs must precede rows".into()))?
                    .len();
                let mut row = BitSet::new(n);
                for (j, tok) in rest.split_whitespace().enumerate() {
                    if j >= n {
                        return Err(fail(ln, "row wider than cost vector".into()));
                    }
                    match tok {
                        "1" => row.insert(j),
                        "0" => {}
                        _ => return Err(fail(ln, format!("expected 0/1, got {tok:?}"))),
                    }
                }
                if key == "u" {
                    u_rows.push(row);
                } else {
                    v_rows.push(row);
                }
            }
            _ => return Err(fail(ln, format!("unknown key {key:?}"))),
        }
    }
    let costs = costs.ok_or_else(|| fail(0, "missing costs".into()))?;
    let l = l.ok_or_else(|| fail(0, "missing l".into()))?;
    IpInstance::from_rows(u_rows, v_rows, costs, l).map_err(|e| fail(0, format!("{e}")))
}
