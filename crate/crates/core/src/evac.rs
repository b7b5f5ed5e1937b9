//! Emergency-evacuation gridworld: procedural rooms, hallways, and exits,
//! random fire placement with expansion, and conversion to an MDP with the
//! slippery four-direction movement dynamics.
//!
//! Maps have a diffable text form (one character per cell plus a header of
//! named regions) so fixtures can be hand-authored and checked in.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::mdp::{Mdp, MdpBuilder, MdpError, RewardFunction};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellType {
    Wall,
    Floor,
    Exit,
    Fire,
}

impl CellType {
    pub fn to_char(self) -> char {
        match self {
            CellType::Wall => '#',
            CellType::Floor => '.',
            CellType::Exit => 'E',
            CellType::Fire => 'F',
        }
    }

    pub fn from_char(c: char) -> Option<CellType> {
        match c {
            '#' => Some(CellType::Wall),
            '.' => Some(CellType::Floor),
            'E' => Some(CellType::Exit),
            'F' => Some(CellType::Fire),
            _ => None,
        }
    }
}

/// A named set of cells (a room or a hallway), cells sorted row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub cells: Vec<(usize, usize)>,
}

/// Procedurally generated building: grid cells plus the named regions the
/// layout predicates are grounded in.
#[derive(Clone, Debug, PartialEq)]
pub struct EvacMap {
    pub width: usize,
    pub height: usize,
    cells: Vec<CellType>,
    pub room_regions: Vec<Region>,
    pub hallway_regions: Vec<Region>,
    pub exit_cells: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Reward values for the evacuation task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardSpec {
    pub exit: f64,
    pub fire: f64,
    pub step: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            exit: 100.0,
            fire: -100.0,
            step: -1.0,
        }
    }
}

/// Generation and dynamics parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainParams {
    pub width: usize,
    pub height: usize,
    pub n_rooms: usize,
    pub n_hallways: usize,
    pub n_exits: usize,
    pub fire_seeds: usize,
    pub fire_expansion_steps: usize,
    pub move_success_prob: f64,
    pub rewards: RewardSpec,
}

impl Default for DomainParams {
    fn default() -> Self {
        DomainParams {
            width: 40,
            height: 40,
            n_rooms: 10,
            n_hallways: 40,
            n_exits: 5,
            fire_seeds: 3,
            fire_expansion_steps: 3,
            move_success_prob: 0.85,
            rewards: RewardSpec::default(),
        }
    }
}

impl DomainParams {
    pub fn sized(width: usize, height: usize) -> Self {
        DomainParams {
            width,
            height,
            ..DomainParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.width * self.height < 9 {
            return Err(GenError::BadParams(
                "grid must have at least 9 cells".into(),
            ));
        }
        if self.n_exits < 1 {
            return Err(GenError::BadParams("need at least one exit".into()));
        }
        if !(self.move_success_prob > 0.0 && self.move_success_prob <= 1.0) {
            return Err(GenError::BadParams(format!(
                "move_success_prob {} outside (0, 1]",
                self.move_success_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenError {
    BadParams(String),
    /// Connectivity (every floor cell reaching an exit) could not be achieved.
    GenerationFailure {
        attempts: usize,
    },
}

impl core::fmt::Display for GenError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GenError::BadParams(m) => write!(f, "bad domain parameters: {m}"),
            GenError::GenerationFailure { attempts } => {
                write!(f, "map generation failed after {attempts} attempts")
            }
        }
    }
}

impl core::error::Error for GenError {}

/// Parse failure for the map / predicate text formats.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl core::fmt::Display for ParseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

impl core::error::Error for ParseError {}

/// Movement actions, in tie-break order.
pub const ACTIONS: [(&str, i32, i32); 4] = [
    ("up", 0, -1),
    ("down", 0, 1),
    ("left", -1, 0),
    ("right", 1, 0),
];

impl EvacMap {
    pub fn cell(&self, x: usize, y: usize) -> CellType {
        self.cells[y * self.width + x]
    }

    fn set_cell(&mut self, x: usize, y: usize, t: CellType) {
        self.cells[y * self.width + x] = t;
    }

    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        self.cell(x, y) == CellType::Wall
    }

    /// Cells of the given type, row-major.
    pub fn cells_of(&self, t: CellType) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.cell(x, y) == t {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn fire_cells(&self) -> Vec<(usize, usize)> {
        self.cells_of(CellType::Fire)
    }

    /// Number of MDP states (non-wall cells).
    pub fn n_states(&self) -> usize {
        self.cells.iter().filter(|&&c| c != CellType::Wall).count()
    }

    /// Dense state index over non-wall cells in row-major order.
    pub fn state_index(&self) -> StateIndex {
        let mut id_of_cell = vec![None; self.width * self.height];
        let mut cell_of_id = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.cell(x, y) != CellType::Wall {
                    id_of_cell[y * self.width + x] = Some(cell_of_id.len() as u32);
                    cell_of_id.push((x as u32, y as u32));
                }
            }
        }
        StateIndex {
            width: self.width,
            id_of_cell,
            cell_of_id,
        }
    }

    fn four_neighbors(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        ACTIONS.iter().filter_map(move |&(_, dx, dy)| {
            let nx = x as i64 + dx as i64;
            let ny = y as i64 + dy as i64;
            if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                Some((nx as usize, ny as usize))
            } else {
                None
            }
        })
    }

    /// The same building with every fire cell reverted to floor: the world
    /// as an agent unaware of the hazards believes it to be.
    pub fn without_fires(&self) -> EvacMap {
        let mut out = self.clone();
        for c in out.cells.iter_mut() {
            if *c == CellType::Fire {
                *c = CellType::Floor;
            }
        }
        out
    }

    /// True when every floor cell reaches an exit through non-wall cells,
    /// ignoring fire.
    pub fn fully_connected(&self) -> bool {
        if self.exit_cells.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.width * self.height];
        let mut queue: Vec<(usize, usize)> = self.exit_cells.clone();
        for &(x, y) in &queue {
            seen[y * self.width + x] = true;
        }
        while let Some((x, y)) = queue.pop() {
            for (nx, ny) in self.four_neighbors(x, y) {
                if !seen[ny * self.width + nx] && !self.is_wall(nx, ny) {
                    seen[ny * self.width + nx] = true;
                    queue.push((nx, ny));
                }
            }
        }
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.is_wall(x, y) && !seen[y * self.width + x] {
                    return false;
                }
            }
        }
        true
    }
}

/// Cell <-> state-id mapping shared by the MDP and the predicate system.
#[derive(Clone, Debug)]
pub struct StateIndex {
    width: usize,
    id_of_cell: Vec<Option<u32>>,
    cell_of_id: Vec<(u32, u32)>,
}

impl StateIndex {
    pub fn n_states(&self) -> usize {
        self.cell_of_id.len()
    }

    pub fn id(&self, x: usize, y: usize) -> Option<usize> {
        self.id_of_cell[y * self.width + x].map(|i| i as usize)
    }

    pub fn cell(&self, id: usize) -> (usize, usize) {
        let (x, y) = self.cell_of_id[id];
        (x as usize, y as usize)
    }
}

/// Generates a connected building layout. Deterministic in `(params, seed)`;
/// no fires are placed here.
pub fn generate_map(params: &DomainParams, seed: u64) -> Result<EvacMap, GenError> {
    params.validate()?;
    const MAX_ATTEMPTS: usize = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = SeededRng::derived(seed, attempt as u64);
        if let Some(map) = try_generate(params, seed, &mut rng) {
            if map.fully_connected() {
                return Ok(map);
            }
        }
    }
    Err(GenError::GenerationFailure {
        attempts: MAX_ATTEMPTS,
    })
}

fn try_generate(params: &DomainParams, seed: u64, rng: &mut SeededRng) -> Option<EvacMap> {
    let (w, h) = (params.width, params.height);
    let open_arena = params.n_rooms == 0 && params.n_hallways == 0;
    let mut map = EvacMap {
        width: w,
        height: h,
        cells: vec![
            if open_arena {
                CellType::Floor
            } else {
                CellType::Wall
            };
            w * h
        ],
        room_regions: Vec::new(),
        hallway_regions: Vec::new(),
        exit_cells: Vec::new(),
        seed,
    };

    if !open_arena {
        carve_rooms(&mut map, params, rng)?;
        carve_hallways(&mut map, params, rng)?;
    }

    place_exits(&mut map, params.n_exits, rng)?;
    Some(map)
}

fn carve_rooms(map: &mut EvacMap, params: &DomainParams, rng: &mut SeededRng) -> Option<()> {
    let (w, h) = (map.width, map.height);
    if params.n_rooms == 0 {
        return Some(());
    }
    // rooms stay off the border ring so the outer wall survives
    if w < 4 || h < 4 {
        return None;
    }
    let max_side = |dim: usize| (dim.saturating_sub(2) / 2).clamp(2, 8);
    let mut occupied = vec![false; w * h];
    for i in 0..params.n_rooms {
        let mut placed = false;
        for _try in 0..80 {
            let rw = rng.next_range(2, max_side(w));
            let rh = rng.next_range(2, max_side(h));
            if rw + 2 > w || rh + 2 > h {
                continue;
            }
            let x0 = rng.next_range(1, w - rw - 1);
            let y0 = rng.next_range(1, h - rh - 1);
            let overlaps = (y0..y0 + rh).any(|y| (x0..x0 + rw).any(|x| occupied[y * w + x]));
            if overlaps {
                continue;
            }
            let mut cells = Vec::with_capacity(rw * rh);
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    occupied[y * w + x] = true;
                    map.set_cell(x, y, CellType::Floor);
                    cells.push((x, y));
                }
            }
            map.room_regions.push(Region {
                name: format!("room {}", i + 1),
                cells,
            });
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(())
}

fn carve_hallways(map: &mut EvacMap, params: &DomainParams, rng: &mut SeededRng) -> Option<()> {
    let n_rooms = map.room_regions.len();
    for i in 0..params.n_hallways {
        let (from, to) = if n_rooms >= 2 && i < n_rooms - 1 {
            // first connect the rooms into a spanning chain
            let a = rng.next_below(i + 1);
            (
                random_room_cell(map, a, rng),
                random_room_cell(map, i + 1, rng),
            )
        } else if n_rooms >= 2 {
            let a = rng.next_below(n_rooms);
            let mut b = rng.next_below(n_rooms);
            if a == b {
                b = (b + 1) % n_rooms;
            }
            (random_room_cell(map, a, rng), random_room_cell(map, b, rng))
        } else {
            // no rooms: connect to previously carved floor when it exists
            let floor = map.cells_of(CellType::Floor);
            let from = if floor.is_empty() {
                random_interior_cell(map, rng)
            } else {
                floor[rng.next_below(floor.len())]
            };
            (from, random_interior_cell(map, rng))
        };
        let cells = carve_l_path(map, from, to, rng);
        if cells.is_empty() {
            continue;
        }
        map.hallway_regions.push(Region {
            name: format!("hallway {}", map.hallway_regions.len() + 1),
            cells,
        });
    }
    Some(())
}

fn random_room_cell(map: &EvacMap, room: usize, rng: &mut SeededRng) -> (usize, usize) {
    let cells = &map.room_regions[room].cells;
    cells[rng.next_below(cells.len())]
}

fn random_interior_cell(map: &EvacMap, rng: &mut SeededRng) -> (usize, usize) {
    (
        rng.next_range(1, map.width - 2),
        rng.next_range(1, map.height - 2),
    )
}

/// Carves a 1-cell-wide axis-aligned L-path and returns its cells sorted
/// row-major (including endpoints, also when they pass through rooms).
fn carve_l_path(
    map: &mut EvacMap,
    from: (usize, usize),
    to: (usize, usize),
    rng: &mut SeededRng,
) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let horizontal_first = rng.next_below(2) == 0;
    let elbow = if horizontal_first {
        (to.0, from.1)
    } else {
        (from.0, to.1)
    };
    for (a, b) in [(from, elbow), (elbow, to)] {
        let (x0, x1) = (a.0.min(b.0), a.0.max(b.0));
        let (y0, y1) = (a.1.min(b.1), a.1.max(b.1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                map.set_cell(x, y, CellType::Floor);
                cells.push((x, y));
            }
        }
    }
    cells.sort_by_key(|&(x, y)| (y, x));
    cells.dedup();
    cells
}

fn place_exits(map: &mut EvacMap, n_exits: usize, rng: &mut SeededRng) -> Option<()> {
    // exits sit on the outermost ring of floor: minimal distance to the
    // grid border, widening ring by ring if a ring runs out of cells
    let (w, h) = (map.width, map.height);
    let border_dist = |x: usize, y: usize| x.min(y).min(w - 1 - x).min(h - 1 - y);
    let floor = map.cells_of(CellType::Floor);
    if floor.len() < n_exits {
        return None;
    }
    let mut by_ring: Vec<Vec<(usize, usize)>> = Vec::new();
    for &(x, y) in &floor {
        let d = border_dist(x, y);
        if by_ring.len() <= d {
            by_ring.resize(d + 1, Vec::new());
        }
        by_ring[d].push((x, y));
    }
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for ring in by_ring.iter_mut() {
        while !ring.is_empty() && chosen.len() < n_exits {
            let i = rng.next_below(ring.len());
            chosen.push(ring.swap_remove(i));
        }
        if chosen.len() == n_exits {
            break;
        }
    }
    if chosen.len() < n_exits {
        return None;
    }
    chosen.sort_by_key(|&(x, y)| (y, x));
    for &(x, y) in &chosen {
        map.set_cell(x, y, CellType::Exit);
    }
    map.exit_cells = chosen;
    Some(())
}

/// Turns `fire_seeds` floor cells into fire, then runs `expansion_steps`
/// rounds in which each floor cell 4-adjacent to fire ignites with
/// probability 1/2. Exits never burn. Deterministic in `seed`.
pub fn place_fires(map: &EvacMap, fire_seeds: usize, expansion_steps: usize, seed: u64) -> EvacMap {
    assert!(
        map.fire_cells().is_empty(),
        "place_fires expects a fire-free map"
    );
    let mut out = map.clone();
    let mut rng = SeededRng::new(seed);
    let mut floor = out.cells_of(CellType::Floor);
    let n = fire_seeds.min(floor.len());
    for _ in 0..n {
        let i = rng.next_below(floor.len());
        let (x, y) = floor.swap_remove(i);
        out.set_cell(x, y, CellType::Fire);
    }
    for _ in 0..expansion_steps {
        let mut ignite: Vec<(usize, usize)> = Vec::new();
        for y in 0..out.height {
            for x in 0..out.width {
                if out.cell(x, y) != CellType::Floor {
                    continue;
                }
                let near_fire = out
                    .four_neighbors(x, y)
                    .any(|(nx, ny)| out.cell(nx, ny) == CellType::Fire);
                if near_fire && rng.next_f64() < 0.5 {
                    ignite.push((x, y));
                }
            }
        }
        for (x, y) in ignite {
            out.set_cell(x, y, CellType::Fire);
        }
    }
    out
}

/// Converts a map into the movement MDP and its reward function.
///
/// States are the non-wall cells. The chosen direction succeeds with
/// `move_success_prob`; the remaining mass splits evenly over the other
/// three directions. Moves into walls (or off-grid) stay in place. Exit and
/// fire cells are terminal. Every transition pays the step reward, and
/// transitions entering an exit or fire cell add that cell's reward.
pub fn to_mdp(map: &EvacMap, params: &DomainParams) -> Result<(Mdp, RewardFunction), MdpError> {
    let idx = map.state_index();
    let n = idx.n_states();
    let mut builder = MdpBuilder::new(n, ACTIONS.len());
    let mut reward = RewardFunction::new(params.rewards.step);
    let p = params.move_success_prob;
    let slip = (1.0 - p) / 3.0;

    for s in 0..n {
        let (x, y) = idx.cell(s);
        match map.cell(x, y) {
            CellType::Exit | CellType::Fire => continue, // terminal
            CellType::Floor => {}
            CellType::Wall => unreachable!(),
        }
        for (a, &(_, adx, ady)) in ACTIONS.iter().enumerate() {
            for &(_, dx, dy) in ACTIONS.iter() {
                let prob = if (dx, dy) == (adx, ady) { p } else { slip };
                if prob == 0.0 {
                    continue;
                }
                let nx = x as i64 + dx as i64;
                let ny = y as i64 + dy as i64;
                let target = if nx >= 0
                    && ny >= 0
                    && (nx as usize) < map.width
                    && (ny as usize) < map.height
                    && !map.is_wall(nx as usize, ny as usize)
                {
                    idx.id(nx as usize, ny as usize).unwrap()
                } else {
                    s // bounce off the wall
                };
                builder.transition(s, a, target, prob);
                let (tx, ty) = idx.cell(target);
                match map.cell(tx, ty) {
                    CellType::Exit => {
                        reward.set(s, a, target, params.rewards.exit + params.rewards.step)
                    }
                    CellType::Fire => {
                        reward.set(s, a, target, params.rewards.fire + params.rewards.step)
                    }
                    _ => {}
                }
            }
        }
    }
    Ok((builder.build()?, reward))
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

/// Canonical text encoding of a map. `parse_map(encode_map(m)) == m`.
pub fn encode_map(map: &EvacMap) -> String {
    let mut out = String::new();
    out.push_str("evacmap v1\n");
    out.push_str(&format!("size {} {}\n", map.width, map.height));
    out.push_str(&format!("seed {}\n", map.seed));
    out.push_str("grid\n");
    for y in 0..map.height {
        for x in 0..map.width {
            out.push(map.cell(x, y).to_char());
        }
        out.push('\n');
    }
    for r in &map.room_regions {
        out.push_str(&encode_region("room", r));
    }
    for r in &map.hallway_regions {
        out.push_str(&encode_region("hallway", r));
    }
    out.push_str("end\n");
    out
}

fn encode_region(kind: &str, r: &Region) -> String {
    let cells: Vec<String> = r.cells.iter().map(|&(x, y)| format!("{x},{y}")).collect();
    format!("{kind} {} = {}\n", r.name, cells.join(" "))
}

pub(crate) fn parse_cell_pair(tok: &str, line: usize) -> Result<(usize, usize), ParseError> {
    let mut it = tok.split(',');
    let err = || ParseError {
        line,
        msg: format!("expected x,y cell, got {tok:?}"),
    };
    let x = it.next().ok_or_else(err)?.parse().map_err(|_| err())?;
    let y = it.next().ok_or_else(err)?.parse().map_err(|_| err())?;
    if it.next().is_some() {
        return Err(err());
    }
    Ok((x, y))
}

/// Parses the text form produced by [`encode_map`] (or hand-written
/// fixtures). Validates cell characters, grid shape, region cells, and that
/// at least one exit exists.
pub fn parse_map(text: &str) -> Result<EvacMap, ParseError> {
    let mut lines = text.lines().enumerate().peekable();
    let fail = |line: usize, msg: String| ParseError {
        line: line + 1,
        msg,
    };

    let (ln, header) = lines
        .next()
        .ok_or_else(|| fail(0, "empty map file".into()))?;
    if header.trim() != "evacmap v1" {
        return Err(fail(
            ln,
            format!("expected 'evacmap v1' header, got {header:?}"),
        ));
    }

    let (ln, size_line) = lines
        .next()
        .ok_or_else(|| fail(1, "missing size line".into()))?;
    let mut parts = size_line.split_whitespace();
    if parts.next() != Some("size") {
        return Err(fail(ln, "expected 'size W H'".into()));
    }
    let width: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fail(ln, "bad width".into()))?;
    let height: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| fail(ln, "bad height".into()))?;

    let (ln, seed_line) = lines
        .next()
        .ok_or_else(|| fail(2, "missing seed line".into()))?;
    let seed: u64 = seed_line
        .strip_prefix("seed ")
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| fail(ln, "expected 'seed N'".into()))?;

    let (ln, grid_line) = lines
        .next()
        .ok_or_else(|| fail(3, "missing grid block".into()))?;
    if grid_line.trim() != "grid" {
        return Err(fail(ln, "expected 'grid'".into()));
    }

    let mut cells = Vec::with_capacity(width * height);
    for row in 0..height {
        let (ln, row_line) = lines
            .next()
            .ok_or_else(|| fail(4 + row, "grid ended early".into()))?;
        if row_line.chars().count() != width {
            return Err(fail(
                ln,
                format!(
                    "grid row has {} cells, expected {width}",
                    row_line.chars().count()
                ),
            ));
        }
        for c in row_line.chars() {
            cells.push(
                CellType::from_char(c)
                    .ok_or_else(|| fail(ln, format!("unknown cell character {c:?}")))?,
            );
        }
    }

    let mut map = EvacMap {
        width,
        height,
        cells,
        room_regions: Vec::new(),
        hallway_regions: Vec::new(),
        exit_cells: Vec::new(),
        seed,
    };

    for (ln, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if line == "end" {
            break;
        }
        let (kind, rest) = line
            .split_once(' ')
            .ok_or_else(|| fail(ln, format!("unexpected line {line:?}")))?;
        if kind != "room" && kind != "hallway" {
            return Err(fail(ln, format!("unknown section {kind:?}")));
        }
        let (name, cell_list) = rest
            .split_once(" = ")
            .ok_or_else(|| fail(ln, "expected '<name> = <cells>'".into()))?;
        let mut region = Region {
            name: name.to_string(),
            cells: Vec::new(),
        };
        for tok in cell_list.split_whitespace() {
            let (x, y) = parse_cell_pair(tok, ln + 1)?;
            if x >= width || y >= height {
                return Err(fail(ln, format!("region cell {x},{y} out of bounds")));
            }
            if map.is_wall(x, y) {
                return Err(fail(ln, format!("region cell {x},{y} is a wall")));
            }
            region.cells.push((x, y));
        }
        if kind == "room" {
            map.room_regions.push(region);
        } else {
            map.hallway_regions.push(region);
        }
    }

    map.exit_cells = map.cells_of(CellType::Exit);
    if map.exit_cells.is_empty() {
        return Err(ParseError {
            line: 0,
            msg: "map has no exit cells".into(),
        });
    }
    Ok(map)
}
