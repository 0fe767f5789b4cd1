//! Multi-robot warehouse.
//!
//! Robots fetch requested shelves, carry them to a goal cell on the bottom
//! row, and bring them back to an empty shelf slot. Each delivery earns +1
//! and immediately marks a different shelf as requested, so the number of
//! requested shelves stays at `n_agents`.
//!
//! Canonical layouts (the shelf count comes from the number of shelf
//! column groups; each group is two shelves wide):
//!
//! ```text
//! tiny (7 x 12)      row 0 aisle, rows 1-4 shelves, row 5 aisle,
//! .......            rows 6-9 shelves, row 10 aisle, row 11 goals
//! .##.##.
//! .##.##.            small (16 x 12) uses the same rows with five
//! ...                column groups.
//! ..GG...
//! ```
//!
//! Observations are sized for a `(2 * max_sight + 1)^2` window centered on
//! the robot. A 5-value self block `[carrying, facing N/E/S/W]` comes first,
//! then 7 values per cell in row-major order:
//! `[has_agent, agent facing N/E/S/W, has_shelf, shelf_requested]`.
//! Cells beyond the selected sight range, or off the map, are all zeros.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_joint_action, check_observe, EnvError, Environment, StepResult};
use crate::swucb::SightRange;

pub const NOOP: usize = 0;
pub const FORWARD: usize = 1;
pub const ROTATE_LEFT: usize = 2;
pub const ROTATE_RIGHT: usize = 3;
pub const TOGGLE_LOAD: usize = 4;
pub const ACTION_COUNT: usize = 5;

const CELL_FEATURES: usize = 7;
const SELF_FEATURES: usize = 5;
const BLOCK_ROWS: usize = 4;
const BLOCKS: usize = 2;
const GOALS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RwareLayout {
    /// Two shelf column groups.
    Tiny,
    /// Five shelf column groups.
    Small,
}

impl RwareLayout {
    pub fn shelf_groups(self) -> usize {
        match self {
            RwareLayout::Tiny => 2,
            RwareLayout::Small => 5,
        }
    }

    pub fn width(self) -> usize {
        3 * self.shelf_groups() + 1
    }

    pub fn height(self) -> usize {
        1 + BLOCKS * (BLOCK_ROWS + 1) + 1
    }

    /// Whether `(row, col)` is a shelf slot.
    pub fn is_shelf_home(self, row: usize, col: usize) -> bool {
        let in_block = row >= 1 && row < self.height() - 2 && (row - 1) % (BLOCK_ROWS + 1) < BLOCK_ROWS;
        in_block && col % 3 != 0 && col < self.width()
    }

    pub fn goals(self) -> Vec<(usize, usize)> {
        let row = self.height() - 1;
        let first = self.width() / 2 - 1;
        (first..first + GOALS).map(|c| (row, c)).collect()
    }
}

fn default_max_steps() -> u32 {
    500
}

fn default_max_sight() -> SightRange {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RwareConfig {
    pub layout: RwareLayout,
    pub n_agents: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_max_sight")]
    pub max_sight: SightRange,
}

impl RwareConfig {
    pub fn new(layout: RwareLayout, n_agents: usize) -> Self {
        Self {
            layout,
            n_agents,
            max_steps: default_max_steps(),
            max_sight: default_max_sight(),
        }
    }

    /// Requested shelves equal the number of robots.
    pub fn n_requests(&self) -> usize {
        self.n_agents
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        let (h, w) = (self.layout.height(), self.layout.width());
        let homes = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| self.layout.is_shelf_home(r, c))
            .count();
        let free = h * w - homes;
        if self.n_agents > free {
            return bad(format!("{} robots need free cells but only {free} exist", self.n_agents));
        }
        if self.n_requests() >= homes {
            return bad(format!("{} requests need more than {homes} shelves", self.n_requests()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    fn index(self) -> usize {
        self as usize
    }

    fn left(self) -> Self {
        Self::ALL[(self.index() + 3) % 4]
    }

    fn right(self) -> Self {
        Self::ALL[(self.index() + 1) % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Robot {
    pub row: usize,
    pub col: usize,
    pub dir: Direction,
    pub carrying: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shelf {
    pub home: (usize, usize),
    pub cell: (usize, usize),
    pub requested: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RwareState {
    pub agents: Vec<Robot>,
    pub shelves: Vec<Shelf>,
    pub goals: Vec<(usize, usize)>,
    pub step: u32,
    pub deliveries: u64,
}

#[derive(Debug, Clone)]
pub struct Rware {
    cfg: RwareConfig,
    state: RwareState,
    rng: ChaCha8Rng,
    agent_at: Vec<Option<usize>>,
    shelf_at: Vec<Option<usize>>,
}

impl Rware {
    pub fn new(cfg: RwareConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut env = Self {
            state: RwareState {
                agents: Vec::new(),
                shelves: Vec::new(),
                goals: cfg.layout.goals(),
                step: 0,
                deliveries: 0,
            },
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            agent_at: Vec::new(),
            shelf_at: Vec::new(),
        };
        env.reset(seed);
        Ok(env)
    }

    /// Replaces robot placements and the requested set; shelves start at home.
    pub fn with_placement(
        cfg: RwareConfig,
        seed: u64,
        agents: Vec<Robot>,
        requested: &[usize],
    ) -> Result<Self, EnvError> {
        let mut env = Self::new(cfg, seed)?;
        if agents.len() != env.cfg.n_agents || requested.len() != env.cfg.n_requests() {
            return Err(EnvError::InvalidConfig("placement does not match config".into()));
        }
        for s in env.state.shelves.iter_mut() {
            s.requested = false;
            s.cell = s.home;
        }
        for &i in requested {
            let shelf = env
                .state
                .shelves
                .get_mut(i)
                .ok_or_else(|| EnvError::InvalidConfig(format!("no shelf {i}")))?;
            shelf.requested = true;
        }
        for (i, a) in agents.iter().enumerate() {
            if let Some(s) = a.carrying {
                let shelf = env
                    .state
                    .shelves
                    .get_mut(s)
                    .ok_or_else(|| EnvError::InvalidConfig(format!("robot {i} carries missing shelf {s}")))?;
                shelf.cell = (a.row, a.col);
            }
        }
        env.state.agents = agents;
        env.rebuild_index();
        if env.agent_at.iter().flatten().count() != env.cfg.n_agents {
            return Err(EnvError::InvalidConfig("robots overlap or leave the grid".into()));
        }
        Ok(env)
    }

    pub fn config(&self) -> &RwareConfig {
        &self.cfg
    }

    pub fn state(&self) -> &RwareState {
        &self.state
    }

    pub fn width(&self) -> usize {
        self.cfg.layout.width()
    }

    pub fn height(&self) -> usize {
        self.cfg.layout.height()
    }

    pub fn requested_count(&self) -> usize {
        self.state.shelves.iter().filter(|s| s.requested).count()
    }

    /// Shelf whose home is `cell`, if any.
    pub fn shelf_with_home(&self, cell: (usize, usize)) -> Option<usize> {
        self.state.shelves.iter().position(|s| s.home == cell)
    }

    /// Shelf currently standing on (or carried through) `cell`.
    pub fn shelf_at(&self, cell: (usize, usize)) -> Option<usize> {
        self.shelf_at[cell.0 * self.width() + cell.1]
    }

    fn rebuild_index(&mut self) {
        let n = self.width() * self.height();
        let w = self.width();
        self.agent_at = vec![None; n];
        self.shelf_at = vec![None; n];
        for (i, a) in self.state.agents.iter().enumerate() {
            if a.row < self.height() && a.col < w {
                self.agent_at[a.row * w + a.col] = Some(i);
            }
        }
        for (i, s) in self.state.shelves.iter().enumerate() {
            self.shelf_at[s.cell.0 * w + s.cell.1] = Some(i);
        }
    }

    fn is_carried(&self, shelf: usize) -> bool {
        self.state.agents.iter().any(|a| a.carrying == Some(shelf))
    }

    fn request_new_shelf(&mut self) {
        let candidates: Vec<usize> = (0..self.state.shelves.len())
            .filter(|&i| !self.state.shelves[i].requested && !self.is_carried(i))
            .collect();
        if let Some(&pick) = candidates.choose(&mut self.rng) {
            self.state.shelves[pick].requested = true;
        }
    }

    fn info(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([("deliveries", self.state.deliveries)])
    }
}

impl Environment for Rware {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn obs_len(&self) -> usize {
        let side = 2 * self.cfg.max_sight as usize + 1;
        CELL_FEATURES * side * side + SELF_FEATURES
    }

    fn max_sight(&self) -> SightRange {
        self.cfg.max_sight
    }

    fn max_steps(&self) -> u32 {
        self.cfg.max_steps
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = self.cfg.layout;
        let (h, w) = (layout.height(), layout.width());
        let shelves: Vec<Shelf> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| layout.is_shelf_home(r, c))
            .map(|cell| Shelf {
                home: cell,
                cell,
                requested: false,
            })
            .collect();
        let mut free: Vec<(usize, usize)> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| !layout.is_shelf_home(r, c))
            .collect();
        let mut state = RwareState {
            agents: Vec::new(),
            shelves,
            goals: layout.goals(),
            step: 0,
            deliveries: 0,
        };
        for i in index::sample(&mut self.rng, state.shelves.len(), self.cfg.n_requests()) {
            state.shelves[i].requested = true;
        }
        let (picked, _) = free.partial_shuffle(&mut self.rng, self.cfg.n_agents);
        let picked = picked.to_vec();
        state.agents = picked
            .into_iter()
            .map(|(row, col)| Robot {
                row,
                col,
                dir: Direction::ALL[self.rng.gen_range(0..4)],
                carrying: None,
            })
            .collect();
        self.state = state;
        self.rebuild_index();
    }

    fn steps(&self) -> u32 {
        self.state.step
    }

    fn is_done(&self) -> bool {
        self.state.step >= self.cfg.max_steps
    }

    fn observe_into(&self, agent: usize, d: SightRange, out: &mut [f64]) -> Result<(), EnvError> {
        check_observe(agent, self.cfg.n_agents, d, self.cfg.max_sight, out.len(), self.obs_len())?;
        out.fill(0.0);
        let me = self.state.agents[agent];
        out[0] = me.carrying.is_some() as u8 as f64;
        out[1 + me.dir.index()] = 1.0;

        let reach = self.cfg.max_sight as i64;
        let sight = d as i64;
        let (h, w) = (self.height() as i64, self.width() as i64);
        let mut offset = SELF_FEATURES;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (me.row as i64 + dr, me.col as i64 + dc);
                let visible = dr.abs().max(dc.abs()) <= sight && (0..h).contains(&r) && (0..w).contains(&c);
                if visible {
                    let cell = r as usize * self.width() + c as usize;
                    let slot = &mut out[offset..offset + CELL_FEATURES];
                    if let Some(i) = self.agent_at[cell] {
                        slot[0] = 1.0;
                        slot[1 + self.state.agents[i].dir.index()] = 1.0;
                    }
                    if let Some(s) = self.shelf_at[cell] {
                        slot[5] = 1.0;
                        slot[6] = self.state.shelves[s].requested as u8 as f64;
                    }
                }
                offset += CELL_FEATURES;
            }
        }
        Ok(())
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        check_joint_action(actions, self.cfg.n_agents, ACTION_COUNT)?;
        let (h, w) = (self.height(), self.width());

        // Forward moves are resolved against start-of-tick positions.
        let targets: Vec<Option<(usize, usize)>> = self
            .state
            .agents
            .iter()
            .zip(actions)
            .map(|(a, &act)| {
                if act != FORWARD {
                    return None;
                }
                let (r, c) = (a.row, a.col);
                let cell = match a.dir {
                    Direction::N if r > 0 => (r - 1, c),
                    Direction::S if r + 1 < h => (r + 1, c),
                    Direction::W if c > 0 => (r, c - 1),
                    Direction::E if c + 1 < w => (r, c + 1),
                    _ => return None,
                };
                let idx = cell.0 * w + cell.1;
                if self.agent_at[idx].is_some() {
                    return None;
                }
                if a.carrying.is_some() && self.shelf_at[idx].is_some() {
                    return None;
                }
                Some(cell)
            })
            .collect();

        for (i, &act) in actions.iter().enumerate() {
            let robot = self.state.agents[i];
            match act {
                ROTATE_LEFT => self.state.agents[i].dir = robot.dir.left(),
                ROTATE_RIGHT => self.state.agents[i].dir = robot.dir.right(),
                FORWARD => {
                    let Some(cell) = targets[i] else { continue };
                    let contested = targets.iter().enumerate().any(|(j, t)| j != i && *t == Some(cell));
                    if contested {
                        continue;
                    }
                    self.state.agents[i].row = cell.0;
                    self.state.agents[i].col = cell.1;
                    if let Some(s) = robot.carrying {
                        self.state.shelves[s].cell = cell;
                    }
                }
                TOGGLE_LOAD => {
                    let cell = (robot.row, robot.col);
                    match robot.carrying {
                        None => {
                            if let Some(s) = self.shelf_at[cell.0 * w + cell.1] {
                                self.state.agents[i].carrying = Some(s);
                            }
                        }
                        Some(_) => {
                            let stationed = self
                                .state
                                .shelves
                                .iter()
                                .enumerate()
                                .any(|(s, shelf)| shelf.cell == cell && Some(s) != robot.carrying);
                            if self.cfg.layout.is_shelf_home(cell.0, cell.1) && !stationed {
                                self.state.agents[i].carrying = None;
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        self.rebuild_index();

        let mut reward = 0.0;
        for i in 0..self.state.agents.len() {
            let a = self.state.agents[i];
            let Some(s) = a.carrying else { continue };
            if self.state.shelves[s].requested && self.state.goals.contains(&(a.row, a.col)) {
                self.state.shelves[s].requested = false;
                self.state.deliveries += 1;
                reward += 1.0;
                self.request_new_shelf();
            }
        }

        self.state.step += 1;
        Ok(StepResult {
            reward,
            done: self.is_done(),
            info: self.info(),
        })
    }

    fn state_json(&self) -> String {
        serde_json::to_string(&self.state).expect("state serializes")
    }
}
