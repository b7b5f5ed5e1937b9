//! Communicable predicates: boolean state classifiers with a natural-language
//! description and a cost, plus the binary coverage matrices the solver
//! consumes.
//!
//! Extensions are precomputed once into bitsets over the state index range;
//! after construction no classifier is ever re-evaluated, and membership
//! checks are word-parallel.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::bitset::BitSet;
use crate::evac::{EvacMap, ParseError};
use crate::mdp::Trajectory;
use crate::rng::SeededRng;

/// Default cap on the number of predicates `compose` may produce.
pub const DEFAULT_COMPOSE_CAP: usize = 1_000_000;

/// A boolean state classifier with a description and a communication cost.
/// `members` lists the base predicates it conjoins (a singleton for base
/// predicates themselves).
#[derive(Clone, Debug, PartialEq)]
pub struct Predicate {
    pub id: usize,
    pub description: String,
    pub cost: f64,
    pub extension: BitSet,
    pub members: Vec<usize>,
}

/// An immutable collection of predicates over a fixed state space.
#[derive(Clone, Debug, PartialEq)]
pub struct PredicateSet {
    n_states: usize,
    preds: Vec<Predicate>,
}

impl PredicateSet {
    pub fn new(n_states: usize) -> Self {
        PredicateSet {
            n_states,
            preds: Vec::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn get(&self, id: usize) -> &Predicate {
        &self.preds[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Predicate> {
        self.preds.iter()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.preds.iter().map(|p| p.cost).collect()
    }

    /// Appends a base predicate, assigning the next id. Cost defaults to the
    /// description length when `cost` is `None`.
    pub fn push_base(&mut self, description: &str, cells: BitSet, cost: Option<f64>) -> usize {
        assert!(!description.is_empty(), "predicate description is empty");
        assert_eq!(cells.len(), self.n_states);
        let id = self.preds.len();
        let cost = cost.unwrap_or_else(|| default_cost(description));
        assert!(cost > 0.0, "predicate cost must be positive");
        self.preds.push(Predicate {
            id,
            description: description.to_string(),
            cost,
            extension: cells,
            members: alloc::vec![id],
        });
        id
    }
}

/// Default predicate cost: the length of its description string (at least 1).
pub fn default_cost(description: &str) -> f64 {
    description.chars().count().max(1) as f64
}

/// One base predicate per named room, hallway, and exit, grounded in the
/// building layout. Descriptions read "in room 3", "in the center hallway",
/// "at exit 1".
pub fn layout_predicates(map: &EvacMap) -> PredicateSet {
    let idx = map.state_index();
    let mut set = PredicateSet::new(idx.n_states());
    let cells_to_bits = |cells: &[(usize, usize)]| {
        BitSet::from_indices(
            idx.n_states(),
            cells.iter().filter_map(|&(x, y)| idx.id(x, y)),
        )
    };
    for r in &map.room_regions {
        set.push_base(&format!("in {}", r.name), cells_to_bits(&r.cells), None);
    }
    for r in &map.hallway_regions {
        set.push_base(&format!("in {}", r.name), cells_to_bits(&r.cells), None);
    }
    for (i, &(x, y)) in map.exit_cells.iter().enumerate() {
        let bits = BitSet::from_indices(idx.n_states(), idx.id(x, y));
        set.push_base(&format!("at exit {}", i + 1), bits, None);
    }
    set
}

/// `n` ball-shaped predicates: each picks a uniform random non-wall center
/// and a uniform radius in `[r_min, r_max]`, and holds on the non-wall cells
/// within that Manhattan radius. Deterministic in `seed`.
pub fn ball_predicates(
    map: &EvacMap,
    n: usize,
    r_min: usize,
    r_max: usize,
    seed: u64,
) -> PredicateSet {
    assert!(n >= 1 && r_min <= r_max);
    let idx = map.state_index();
    let mut set = PredicateSet::new(idx.n_states());
    let mut rng = SeededRng::new(seed);
    for _ in 0..n {
        let center = rng.next_below(idx.n_states());
        let (cx, cy) = idx.cell(center);
        let r = rng.next_range(r_min, r_max);
        let mut bits = BitSet::new(idx.n_states());
        let x0 = cx.saturating_sub(r);
        let y0 = cy.saturating_sub(r);
        for y in y0..=(cy + r).min(map.height - 1) {
            for x in x0..=(cx + r).min(map.width - 1) {
                let dist = cx.abs_diff(x) + cy.abs_diff(y);
                if dist <= r {
                    if let Some(s) = idx.id(x, y) {
                        bits.insert(s);
                    }
                }
            }
        }
        set.push_base(&format!("within {r} of ({cx}, {cy})"), bits, None);
    }
    set
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComposeError {
    /// Output would exceed the configured predicate cap.
    CombinatorialLimit { cap: usize },
}

impl core::fmt::Display for ComposeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ComposeError::CombinatorialLimit { cap } => {
                write!(f, "composite predicate count exceeds the cap of {cap}")
            }
        }
    }
}

impl core::error::Error for ComposeError {}

/// All conjunctions of up to `max_order` base predicates with a non-empty
/// intersection extension. Size-1 subsets reproduce the input, so the output
/// always contains the base set. Composite cost is the sum of member costs;
/// composite descriptions join members with " AND ".
pub fn compose(base: &PredicateSet, max_order: usize) -> Result<PredicateSet, ComposeError> {
    compose_capped(base, max_order, DEFAULT_COMPOSE_CAP)
}

pub fn compose_capped(
    base: &PredicateSet,
    max_order: usize,
    cap: usize,
) -> Result<PredicateSet, ComposeError> {
    assert!(max_order >= 1);
    let mut out = PredicateSet::new(base.n_states());
    let mut full = BitSet::new(base.n_states());
    for i in 0..base.n_states() {
        full.insert(i);
    }
    // subsets ordered by size, then lexicographically by member ids
    let mut members: Vec<usize> = Vec::new();
    for order in 1..=max_order.min(base.len().max(1)) {
        emit_combos(base, order, 0, &mut members, &full, &mut out, cap)?;
    }
    Ok(out)
}

fn emit_combos(
    base: &PredicateSet,
    order: usize,
    start: usize,
    members: &mut Vec<usize>,
    inter: &BitSet,
    out: &mut PredicateSet,
    cap: usize,
) -> Result<(), ComposeError> {
    if members.len() == order {
        if out.len() >= cap {
            return Err(ComposeError::CombinatorialLimit { cap });
        }
        let id = out.preds.len();
        let desc: Vec<&str> = members
            .iter()
            .map(|&m| base.get(m).description.as_str())
            .collect();
        let cost: f64 = members.iter().map(|&m| base.get(m).cost).sum();
        out.preds.push(Predicate {
            id,
            description: desc.join(" AND "),
            cost,
            extension: inter.clone(),
            members: members.clone(),
        });
        return Ok(());
    }
    for next in start..base.len() {
        let ext = inter.intersection(&base.get(next).extension);
        if ext.is_empty() {
            continue; // supersets of this prefix are empty too; siblings may not be
        }
        members.push(next);
        emit_combos(base, order, next + 1, members, &ext, out, cap)?;
        members.pop();
    }
    Ok(())
}

/// The binary coverage matrices for one solver instance.
///
/// Row `i` of `U` corresponds to the `i`-th divergent state (ascending state
/// index); row `k` of `V` to the `k`-th state of the desired trajectory in
/// visit order. Entry `(row, j)` is set iff that state lies in predicate
/// `j`'s extension.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageMatrices {
    /// Rows over predicates: `u_rows[i].contains(j)` == u_ij.
    pub u_rows: Vec<BitSet>,
    pub v_rows: Vec<BitSet>,
    /// State id of each U row.
    pub state_index_of_row: Vec<usize>,
    /// State id of each V row (trajectory order, duplicates kept).
    pub state_index_of_v_row: Vec<usize>,
    /// Predicate id of each column (identity mapping, kept for dumps).
    pub predicate_index_of_column: Vec<usize>,
}

impl CoverageMatrices {
    pub fn n_cols(&self) -> usize {
        self.predicate_index_of_column.len()
    }
}

/// Builds `U` from the divergent states and `V` from the desired trajectory,
/// per the definitions above. U rows are sorted by ascending state index; V
/// rows follow the trajectory's visit order (start state included).
pub fn build_coverage_matrices(
    cover_states: &[usize],
    desired_traj: &Trajectory,
    predicates: &PredicateSet,
) -> CoverageMatrices {
    assert!(!predicates.is_empty(), "predicate set is empty");
    let n_cols = predicates.len();
    let mut s_sorted: Vec<usize> = cover_states.to_vec();
    s_sorted.sort_unstable();
    s_sorted.dedup();

    let row_for = |state: usize| {
        let mut row = BitSet::new(n_cols);
        for p in predicates.iter() {
            if p.extension.contains(state) {
                row.insert(p.id);
            }
        }
        row
    };

    let u_rows: Vec<BitSet> = s_sorted.iter().map(|&s| row_for(s)).collect();
    let v_states = desired_traj.visited_states();
    let v_rows: Vec<BitSet> = v_states.iter().map(|&s| row_for(s)).collect();

    CoverageMatrices {
        u_rows,
        v_rows,
        state_index_of_row: s_sorted,
        state_index_of_v_row: v_states,
        predicate_index_of_column: (0..n_cols).collect(),
    }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

/// Serializes a predicate set next to its map: one line per predicate with
/// cost, members, description, and the extension as a cell list.
pub fn encode_predicates(set: &PredicateSet, map: &EvacMap) -> String {
    let idx = map.state_index();
    let mut out = String::from("predset v1\n");
    for p in set.iter() {
        let cells: Vec<String> = p
            .extension
            .iter()
            .map(|s| {
                let (x, y) = idx.cell(s);
                format!("{x},{y}")
            })
            .collect();
        let members: Vec<String> = p.members.iter().map(|m| m.to_string()).collect();
        out.push_str(&format!(
            "pred {} | {} | {} | {}\n",
            p.cost,
            members.join(","),
            p.description,
            cells.join(" ")
        ));
    }
    out.push_str("end\n");
    out
}

/// Parses the [`encode_predicates`] format against a map (cells must be
/// non-wall and in bounds).
pub fn parse_predicates(text: &str, map: &EvacMap) -> Result<PredicateSet, ParseError> {
    let idx = map.state_index();
    let mut set = PredicateSet::new(idx.n_states());
    let mut lines = text.lines().enumerate();
    let fail = |line: usize, msg: String| ParseError {
        line: line + 1,
        msg,
    };

    match lines.next() {
        Some((_, h)) if h.trim() == "predset v1" => {}
        Some((ln, h)) => return Err(fail(ln, format!("expected 'predset v1', got {h:?}"))),
        None => return Err(fail(0, "empty predicate file".into())),
    }

    for (ln, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if line == "end" {
            break;
        }
        let body = line
            .strip_prefix("pred ")
            .ok_or_else(|| fail(ln, format!("unexpected line {line:?}")))?;
        let mut fields = body.splitn(4, " | ");
        let cost: f64 = fields
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| fail(ln, "bad cost field".into()))?;
        let members_tok = fields
            .next()
            .ok_or_else(|| fail(ln, "missing members field".into()))?;
        let desc = fields
            .next()
            .ok_or_else(|| fail(ln, "missing description field".into()))?;
        let cells_tok = fields
            .next()
            .ok_or_else(|| fail(ln, "missing cells field".into()))?;
        if desc.is_empty() {
            return Err(fail(ln, "empty description".into()));
        }
        if cost.is_nan() || cost <= 0.0 {
            return Err(fail(ln, format!("cost must be positive, got {cost}")));
        }
        let mut bits = BitSet::new(idx.n_states());
        for tok in cells_tok.split_whitespace() {
            let (x, y) = crate::evac::parse_cell_pair(tok, ln + 1)?;
            if x >= map.width || y >= map.height || map.is_wall(x, y) {
                return Err(fail(ln, format!("cell {x},{y} is not a state")));
            }
            bits.insert(idx.id(x, y).unwrap());
        }
        let id = set.preds.len();
        let members: Vec<usize> = if members_tok.trim().is_empty() {
            alloc::vec![id]
        } else {
            members_tok
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| fail(ln, format!("bad member id {t:?}")))
                })
                .collect::<Result<_, _>>()?
        };
        set.preds.push(Predicate {
            id,
            description: desc.to_string(),
            cost,
            extension: bits,
            members,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evac::{generate_map, DomainParams};
    use crate::mdp::Trajectory;

    fn open_map(n: usize) -> EvacMap {
        let p = DomainParams {
            width: n,
            height: n,
            n_rooms: 0,
            n_hallways: 0,
            n_exits: 1,
            ..DomainParams::default()
        };
        generate_map(&p, 7).unwrap()
    }

    #[test]
    fn default_cost_is_description_length() {
        assert_eq!(default_cost("A"), 1.0);
        assert_eq!(default_cost("in the center hallway"), 21.0);
    }

    #[test]
    fn layout_predicates_one_per_region() {
        let map = open_map(5); // no rooms/hallways, one exit
        let set = layout_predicates(&map);
        assert_eq!(set.len(), 1);
        assert!(set.get(0).description.starts_with("at exit"));
    }

    #[test]
    fn layout_room_predicates_pairwise_disjoint() {
        let p = DomainParams {
            width: 30,
            height: 30,
            ..DomainParams::default()
        };
        let map = generate_map(&p, 5).unwrap();
        let set = layout_predicates(&map);
        let n_rooms = map.room_regions.len();
        assert!(n_rooms >= 10 && set.len() >= n_rooms);
        // room predicates come first, one per region, mutually disjoint
        for i in 0..n_rooms {
            for j in i + 1..n_rooms {
                assert!(set.get(i).extension.is_disjoint(&set.get(j).extension));
            }
        }
    }

    #[test]
    fn ball_radius_zero_is_center_only() {
        let map = open_map(5);
        let set = ball_predicates(&map, 1, 0, 0, 3);
        assert_eq!(set.len(), 1);
        assert_eq!(set.get(0).extension.count(), 1);
    }

    #[test]
    fn ball_radius_one_is_plus_shape() {
        let map = open_map(5);
        // deterministically find a seed whose single ball is centered at (2,2)
        let idx = map.state_index();
        let center = idx.id(2, 2).unwrap();
        let mut found = false;
        for seed in 0..500 {
            let set = ball_predicates(&map, 1, 1, 1, seed);
            if set.get(0).extension.contains(center) && set.get(0).extension.count() == 5 {
                let cells: alloc::vec::Vec<(usize, usize)> =
                    set.get(0).extension.iter().map(|s| idx.cell(s)).collect();
                if cells.contains(&(2, 1))
                    && cells.contains(&(1, 2))
                    && cells.contains(&(2, 2))
                    && cells.contains(&(3, 2))
                    && cells.contains(&(2, 3))
                {
                    found = true;
                    break;
                }
            }
        }
        assert!(found, "no seed produced the (2,2) radius-1 plus");
    }

    #[test]
    fn ball_count_and_nonempty() {
        let map = open_map(9);
        let set = ball_predicates(&map, 100, 1, 3, 11);
        assert_eq!(set.len(), 100);
        for p in set.iter() {
            assert!(!p.extension.is_empty());
        }
    }

    #[test]
    fn compose_identity_at_order_one() {
        let map = open_map(5);
        let base = ball_predicates(&map, 4, 1, 2, 5);
        let out = compose(&base, 1).unwrap();
        assert_eq!(out.len(), base.len());
        for (a, b) in base.iter().zip(out.iter()) {
            assert_eq!(a.description, b.description);
            assert_eq!(a.extension, b.extension);
            assert_eq!(a.cost, b.cost);
        }
    }

    #[test]
    fn compose_power_set_when_all_intersect() {
        // three overlapping predicates on a tiny space
        let mut base = PredicateSet::new(4);
        base.push_base("a", BitSet::from_indices(4, [0, 1, 2, 3]), None);
        base.push_base("b", BitSet::from_indices(4, [0, 1, 2]), None);
        base.push_base("c", BitSet::from_indices(4, [0, 3, 2]), None);
        let out = compose(&base, 3).unwrap();
        assert_eq!(out.len(), 7); // 2^3 - 1
        let last = out.get(6);
        assert_eq!(last.description, "a AND b AND c");
        assert_eq!(last.cost, 3.0);
        assert_eq!(last.extension.to_vec(), alloc::vec![0, 2]);
        assert_eq!(last.members, alloc::vec![0, 1, 2]);
    }

    #[test]
    fn compose_prunes_empty_intersections() {
        let mut base = PredicateSet::new(4);
        base.push_base("a", BitSet::from_indices(4, [0, 1]), None);
        base.push_base("b", BitSet::from_indices(4, [2, 3]), None);
        let out = compose(&base, 2).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn compose_cap_enforced() {
        let mut base = PredicateSet::new(4);
        for name in ["a", "b", "c", "d"] {
            base.push_base(name, BitSet::from_indices(4, [0, 1, 2, 3]), None);
        }
        match compose_capped(&base, 3, 5) {
            Err(ComposeError::CombinatorialLimit { cap: 5 }) => {}
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn composite_extension_subset_of_members() {
        let map = open_map(7);
        let base = ball_predicates(&map, 6, 1, 3, 13);
        let out = compose(&base, 2).unwrap();
        for p in out.iter() {
            for &m in &p.members {
                assert!(p.extension.is_subset_of(&base.get(m).extension));
            }
        }
    }

    fn traj_of(states: &[usize]) -> Trajectory {
        // synthetic trajectory visiting the given states in order
        let steps = states
            .windows(2)
            .map(|w| crate::mdp::Step {
                state: w[0],
                action: 0,
                successor: w[1],
                reward: 0.0,
            })
            .collect();
        Trajectory {
            start: states[0],
            steps,
            cumulative_reward: 0.0,
            truncated: false,
        }
    }

    #[test]
    fn coverage_matrices_match_membership() {
        let mut set = PredicateSet::new(5);
        set.push_base("p0", BitSet::from_indices(5, [0, 1]), None);
        set.push_base("p1", BitSet::from_indices(5, [1, 2, 4]), None);
        let traj = traj_of(&[4, 3, 0]);
        let cm = build_coverage_matrices(&[2, 0, 1], &traj, &set);
        assert_eq!(cm.state_index_of_row, alloc::vec![0, 1, 2]);
        // u: state 0 -> p0; state 1 -> p0,p1; state 2 -> p1
        assert_eq!(cm.u_rows[0].to_vec(), alloc::vec![0]);
        assert_eq!(cm.u_rows[1].to_vec(), alloc::vec![0, 1]);
        assert_eq!(cm.u_rows[2].to_vec(), alloc::vec![1]);
        // v rows follow the trajectory order 4,3,0
        assert_eq!(cm.state_index_of_v_row, alloc::vec![4, 3, 0]);
        assert_eq!(cm.v_rows[0].to_vec(), alloc::vec![1]);
        assert!(cm.v_rows[1].is_empty());
        assert_eq!(cm.v_rows[2].to_vec(), alloc::vec![0]);
    }

    #[test]
    fn coverage_empty_cover_states() {
        let mut set = PredicateSet::new(3);
        set.push_base("p0", BitSet::from_indices(3, [0]), None);
        let traj = traj_of(&[0, 1]);
        let cm = build_coverage_matrices(&[], &traj, &set);
        assert!(cm.u_rows.is_empty());
        assert_eq!(cm.v_rows.len(), 2);
    }

    #[test]
    fn predicate_roundtrip() {
        let map = open_map(7);
        let base = ball_predicates(&map, 5, 1, 2, 3);
        let set = compose(&base, 2).unwrap();
        let text = encode_predicates(&set, &map);
        let back = parse_predicates(&text, &map).unwrap();
        assert_eq!(back.len(), set.len());
        for (a, b) in set.iter().zip(back.iter()) {
            assert_eq!(a.description, b.description);
            assert_eq!(a.cost, b.cost);
            assert_eq!(a.extension, b.extension);
            assert_eq!(a.members, b.members);
        }
    }
}
