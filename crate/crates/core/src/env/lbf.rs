//! Level-based foraging.
//!
//! Agents with integer levels walk a grid and load leveled food. A food item
//! is collected when the levels of the orthogonally adjacent agents that
//! chose `Load` in the same tick add up to at least the food's level. The team
//! reward for a tick is the collected level mass divided by the total food
//! level placed at reset, so an episode return always lies in `[0, 1]`.
//!
//! Observations list `(row, col, level)` triples in a fixed entity order:
//! the observing agent, then every food in creation order, then the other
//! agents in index order. Entities farther than the sight range (Chebyshev
//! distance) and collected food encode as `(-1, -1, 0)`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_joint_action, check_observe, chebyshev, EnvError, Environment, StepResult};
use crate::swucb::SightRange;

pub const NOOP: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const RIGHT: usize = 4;
pub const LOAD: usize = 5;
pub const ACTION_COUNT: usize = 6;

const HIDDEN: [f64; 3] = [-1.0, -1.0, 0.0];

fn default_max_steps() -> u32 {
    50
}

fn default_max_agent_level() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_foods: usize,
    pub coop: bool,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_max_agent_level")]
    pub max_agent_level: u32,
}

impl LbfConfig {
    /// `WxH-Np-Ff[-coop]` with the default step limit and agent levels.
    pub fn new(width: usize, height: usize, n_agents: usize, n_foods: usize, coop: bool) -> Self {
        Self {
            width,
            height,
            n_agents,
            n_foods,
            coop,
            max_steps: default_max_steps(),
            max_agent_level: default_max_agent_level(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.width == 0 || self.height == 0 {
            return bad("grid must be at least 1x1".into());
        }
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        if self.n_foods == 0 {
            return bad("n_foods must be at least 1".into());
        }
        if self.n_agents + self.n_foods > self.width * self.height {
            return bad(format!(
                "{} agents and {} foods do not fit on a {}x{} grid",
                self.n_agents, self.n_foods, self.width, self.height
            ));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        if self.max_agent_level == 0 {
            return bad("max_agent_level must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfAgent {
    pub row: usize,
    pub col: usize,
    pub level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Food {
    pub row: usize,
    pub col: usize,
    pub level: u32,
    pub collected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfState {
    pub agents: Vec<LbfAgent>,
    pub foods: Vec<Food>,
    pub step: u32,
    pub total_food_level: u32,
}

impl LbfState {
    pub fn collected_level(&self) -> u32 {
        self.foods.iter().filter(|f| f.collected).map(|f| f.level).sum()
    }

    pub fn foods_collected(&self) -> usize {
        self.foods.iter().filter(|f| f.collected).count()
    }
}

#[derive(Debug, Clone)]
pub struct Lbf {
    cfg: LbfConfig,
    state: LbfState,
}

impl Lbf {
    pub fn new(cfg: LbfConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut env = Self {
            state: LbfState {
                agents: Vec::new(),
                foods: Vec::new(),
                step: 0,
                total_food_level: 0,
            },
            cfg,
        };
        env.reset(seed);
        Ok(env)
    }

    /// Builds an environment from explicit entity placements.
    pub fn from_state(cfg: LbfConfig, agents: Vec<LbfAgent>, foods: Vec<Food>) -> Result<Self, EnvError> {
        cfg.validate()?;
        if agents.len() != cfg.n_agents || foods.len() != cfg.n_foods {
            return Err(EnvError::InvalidConfig("entity counts do not match config".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let cells = agents
            .iter()
            .map(|a| (a.row, a.col))
            .chain(foods.iter().filter(|f| !f.collected).map(|f| (f.row, f.col)));
        for cell in cells {
            if cell.0 >= cfg.height || cell.1 >= cfg.width || !seen.insert(cell) {
                return Err(EnvError::InvalidConfig(format!("cell {cell:?} out of bounds or shared")));
            }
        }
        let total_food_level = foods.iter().map(|f| f.level).sum();
        if total_food_level == 0 {
            return Err(EnvError::InvalidConfig("total food level must be positive".into()));
        }
        Ok(Self {
            cfg,
            state: LbfState {
                agents,
                foods,
                step: 0,
                total_food_level,
            },
        })
    }

    pub fn config(&self) -> &LbfConfig {
        &self.cfg
    }

    pub fn state(&self) -> &LbfState {
        &self.state
    }

    /// Episode return so far.
    pub fn return_so_far(&self) -> f64 {
        self.state.collected_level() as f64 / self.state.total_food_level as f64
    }

    /// Whether `agent` sees `cell` at sight range `d`.
    pub fn visible(&self, agent: usize, cell: (usize, usize), d: SightRange) -> bool {
        let a = &self.state.agents[agent];
        chebyshev((a.row, a.col), cell) <= d as usize
    }

    fn info(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([
            ("foods_collected", self.state.foods_collected() as u64),
            ("collected_level", self.state.collected_level() as u64),
            ("total_food_level", self.state.total_food_level as u64),
        ])
    }
}

impl Environment for Lbf {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn obs_len(&self) -> usize {
        3 * (self.cfg.n_agents + self.cfg.n_foods)
    }

    fn max_sight(&self) -> SightRange {
        self.cfg.width.max(self.cfg.height) as SightRange
    }

    fn max_steps(&self) -> u32 {
        self.cfg.max_steps
    }

    fn reset(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.cfg;
        let mut cells: Vec<(usize, usize)> = (0..cfg.height)
            .flat_map(|r| (0..cfg.width).map(move |c| (r, c)))
            .collect();
        let n = cfg.n_agents + cfg.n_foods;
        let (picked, _) = cells.partial_shuffle(&mut rng, n);
        let picked = picked.to_vec();

        let agents: Vec<LbfAgent> = picked[..cfg.n_agents]
            .iter()
            .map(|&(row, col)| LbfAgent {
                row,
                col,
                level: rng.gen_range(1..=cfg.max_agent_level),
            })
            .collect();
        let team_level: u32 = agents.iter().map(|a| a.level).sum();
        let foods: Vec<Food> = picked[cfg.n_agents..]
            .iter()
            .map(|&(row, col)| {
                let level = if cfg.coop {
                    team_level
                } else {
                    let pair = if agents.len() == 1 {
                        agents[0].level
                    } else {
                        let idx = rand::seq::index::sample(&mut rng, agents.len(), 2);
                        agents[idx.index(0)].level + agents[idx.index(1)].level
                    };
                    rng.gen_range(1..=pair)
                };
                Food {
                    row,
                    col,
                    level,
                    collected: false,
                }
            })
            .collect();
        let total_food_level = foods.iter().map(|f| f.level).sum();
        self.state = LbfState {
            agents,
            foods,
            step: 0,
            total_food_level,
        };
    }

    fn steps(&self) -> u32 {
        self.state.step
    }

    fn is_done(&self) -> bool {
        self.state.step >= self.cfg.max_steps || self.state.foods.iter().all(|f| f.collected)
    }

    fn observe_into(&self, agent: usize, d: SightRange, out: &mut [f64]) -> Result<(), EnvError> {
        check_observe(agent, self.cfg.n_agents, d, self.max_sight(), out.len(), self.obs_len())?;
        let me = self.state.agents[agent];
        let origin = (me.row, me.col);
        let reach = d as usize;
        let mut slots = out.chunks_exact_mut(3);
        let mut write = |visible: bool, row: usize, col: usize, level: u32| {
            let slot = slots.next().expect("slot count matches obs_len");
            if visible {
                slot.copy_from_slice(&[row as f64, col as f64, level as f64]);
            } else {
                slot.copy_from_slice(&HIDDEN);
            }
        };
        write(true, me.row, me.col, me.level);
        for f in &self.state.foods {
            let visible = !f.collected && chebyshev(origin, (f.row, f.col)) <= reach;
            write(visible, f.row, f.col, f.level);
        }
        for (i, a) in self.state.agents.iter().enumerate() {
            if i != agent {
                write(chebyshev(origin, (a.row, a.col)) <= reach, a.row, a.col, a.level);
            }
        }
        Ok(())
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        check_joint_action(actions, self.cfg.n_agents, ACTION_COUNT)?;
        let (h, w) = (self.cfg.height, self.cfg.width);

        // Occupancy as of the start of the tick.
        let mut occupied = vec![false; h * w];
        for a in &self.state.agents {
            occupied[a.row * w + a.col] = true;
        }
        for f in self.state.foods.iter().filter(|f| !f.collected) {
            occupied[f.row * w + f.col] = true;
        }

        let mut gained = 0;
        for f in self.state.foods.iter_mut().filter(|f| !f.collected) {
            let load: u32 = self
                .state
                .agents
                .iter()
                .zip(actions)
                .filter(|(a, &act)| act == LOAD && a.row.abs_diff(f.row) + a.col.abs_diff(f.col) == 1)
                .map(|(a, _)| a.level)
                .sum();
            if load >= f.level {
                f.collected = true;
                gained += f.level;
            }
        }

        let targets: Vec<Option<(usize, usize)>> = self
            .state
            .agents
            .iter()
            .zip(actions)
            .map(|(a, &act)| {
                let (r, c) = (a.row, a.col);
                let cell = match act {
                    UP if r > 0 => (r - 1, c),
                    DOWN if r + 1 < h => (r + 1, c),
                    LEFT if c > 0 => (r, c - 1),
                    RIGHT if c + 1 < w => (r, c + 1),
                    _ => return None,
                };
                (!occupied[cell.0 * w + cell.1]).then_some(cell)
            })
            .collect();
        for (i, target) in targets.iter().enumerate() {
            if let Some(cell) = *target {
                let contested = targets
                    .iter()
                    .enumerate()
                    .any(|(j, t)| j != i && *t == Some(cell));
                if !contested {
                    self.state.agents[i].row = cell.0;
                    self.state.agents[i].col = cell.1;
                }
            }
        }

        self.state.step += 1;
        Ok(StepResult {
            reward: gained as f64 / self.state.total_food_level as f64,
            done: self.is_done(),
            info: self.info(),
        })
    }

    fn state_json(&self) -> String {
        serde_json::to_string(&self.state).expect("state serializes")
    }
}
