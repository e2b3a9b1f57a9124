//! Concrete MDPs and an episodic interaction driver.

use alloc::{format, string::String, vec, vec::Vec};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mdp::{MdpBuilder, TabularMdp};
use crate::rng::{self, sample_categorical, ChaCha8Rng, Stream};
use crate::table::PolicyTable;
use crate::{Error, Result};

/// Action ids of the chain MDP.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// The five-state chain: `s0..s2` can go left (+2, episode ends) or right
/// (+1, next state); `s3` has a single action worth +2 that ends the
/// episode; state 4 is terminal. Undiscounted, starting in `s0`.
///
/// Following `right` everywhere collects 1 + 1 + 1 + 2 = 5.
pub fn chain_mdp() -> TabularMdp {
    let terminal = 4;
    let mut b = MdpBuilder::new(5, 1.0);
    for s in 0..3 {
        b = b.action(s, 2.0, &[(terminal, 1.0)]).action(s, 1.0, &[(s + 1, 1.0)]);
    }
    b.action(3, 2.0, &[(terminal, 1.0)])
        .terminal(terminal)
        .initial_state(0)
        .build()
        .expect("chain MDP is well formed")
}

/// Bundled FourRooms layout.
pub const FOUR_ROOMS: &str = include_str!("../layouts/four_rooms.txt");
/// Bundled Maze layout.
pub const MAZE: &str = include_str!("../layouts/maze.txt");

/// Grid moves.
pub const UP: usize = 0;
pub const GRID_RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const GRID_LEFT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Floor,
    Start,
    Goal,
}

/// A parsed rectangular character grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

impl GridLayout {
    /// Parses `#` wall, `.` floor, `S` start, `G` goal. Trailing blank lines
    /// are ignored. Errors carry 1-based row/column.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        let used = lines.iter().rposition(|l| !l.trim().is_empty()).map_or(0, |i| i + 1);
        let lines = &lines[..used];
        let err = |row: usize, col: usize, message: String| Error::Layout { row, col, message };
        if lines.is_empty() {
            return Err(err(1, 1, "empty layout".into()));
        }
        let width = lines[0].chars().count();
        let mut cells = Vec::with_capacity(width * lines.len());
        let mut start = None;
        let mut goal = None;
        for (r, line) in lines.iter().enumerate() {
            let len = line.chars().count();
            if len != width {
                return Err(err(
                    r + 1,
                    len.min(width) + 1,
                    format!("row has {len} cells, expected {width}"),
                ));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Floor,
                    'S' => Cell::Start,
                    'G' => Cell::Goal,
                    other => return Err(err(r + 1, c + 1, format!("unexpected character {other:?}"))),
                };
                let slot = match cell {
                    Cell::Start => Some(&mut start),
                    Cell::Goal => Some(&mut goal),
                    _ => None,
                };
                if let Some(slot) = slot {
                    if slot.is_some() {
                        return Err(err(r + 1, c + 1, format!("second {ch:?} cell")));
                    }
                    *slot = Some((r, c));
                }
                cells.push(cell);
            }
        }
        if start.is_none() {
            return Err(err(1, 1, "no start cell 'S'".into()));
        }
        if goal.is_none() {
            return Err(err(1, 1, "no goal cell 'G'".into()));
        }
        Ok(Self {
            width,
            height: lines.len(),
            cells,
        })
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    fn find(&self, target: Cell) -> (usize, usize) {
        let i = self
            .cells
            .iter()
            .position(|&c| c == target)
            .expect("validated at parse");
        (i / self.width, i % self.width)
    }

    pub fn start(&self) -> (usize, usize) {
        self.find(Cell::Start)
    }

    pub fn goal(&self) -> (usize, usize) {
        self.find(Cell::Goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub gamma: f64,
    pub goal_reward: f64,
    pub step_reward: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            goal_reward: 1.0,
            step_reward: 0.0,
        }
    }
}

/// A deterministic four-action navigation MDP built from a [`GridLayout`].
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub mdp: TabularMdp,
    pub layout: GridLayout,
    /// `(row, col)` of each state.
    pub positions: Vec<(usize, usize)>,
    pub start: usize,
    pub goal: usize,
}

impl Gridworld {
    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        self.positions.iter().position(|&p| p == (row, col))
    }
}

/// Builds the navigation MDP: every non-wall cell is a state, the goal is
/// terminal, moving into a wall or off the grid leaves the agent in place.
/// Entering the goal pays `goal_reward`; every other move pays `step_reward`.
pub fn build_gridworld(layout: &GridLayout, opts: GridOptions) -> Result<Gridworld> {
    let mut positions = Vec::new();
    let mut index = vec![usize::MAX; layout.width * layout.height];
    for r in 0..layout.height {
        for c in 0..layout.width {
            if layout.cell(r, c) != Cell::Wall {
                index[r * layout.width + c] = positions.len();
                positions.push((r, c));
            }
        }
    }
    let (sr, sc) = layout.start();
    let (gr, gc) = layout.goal();
    let start = index[sr * layout.width + sc];
    let goal = index[gr * layout.width + gc];
    let mut b = MdpBuilder::new(positions.len(), opts.gamma);
    for (s, &(r, c)) in positions.iter().enumerate() {
        if s == goal {
            b = b.terminal(s);
            continue;
        }
        for action in [UP, GRID_RIGHT, DOWN, GRID_LEFT] {
            let (dr, dc): (isize, isize) = match action {
                UP => (-1, 0),
                GRID_RIGHT => (0, 1),
                DOWN => (1, 0),
                _ => (0, -1),
            };
            let nr = r as isize + dr;
            let nc = c as isize + dc;
            let inside = nr >= 0 && nc >= 0 && (nr as usize) < layout.height && (nc as usize) < layout.width;
            let next = if inside && layout.cell(nr as usize, nc as usize) != Cell::Wall {
                index[nr as usize * layout.width + nc as usize]
            } else {
                s
            };
            let reward = if next == goal {
                opts.goal_reward
            } else {
                opts.step_reward
            };
            b = b.action(s, reward, &[(next, 1.0)]);
        }
    }
    let mdp = b.initial_state(start).build()?;
    Ok(Gridworld {
        mdp,
        layout: layout.clone(),
        positions,
        start,
        goal,
    })
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    /// The episode reached a terminal state.
    pub done: bool,
    /// The episode was cut by the step limit; distances are measured from the cut.
    pub censored: bool,
    pub trajectory_id: u64,
    pub step_index: u32,
    /// Steps remaining until the episode's last transition, set once the episode ends.
    pub distance_to_end: Option<u32>,
}

/// Sets `distance_to_end = last_step − step_index` and the censored flag on
/// one finished episode.
pub fn backfill_distances(episode: &mut [Transition], censored: bool) {
    let Some(last) = episode.last().map(|t| t.step_index) else {
        return;
    };
    for t in episode.iter_mut() {
        t.distance_to_end = Some(last - t.step_index);
        t.censored = censored;
    }
}

/// Steps an agent through episodes of a [`TabularMdp`].
///
/// Dynamics (initial state, next state, policy draws in [`run_episode`]) and
/// reward noise use separate random streams, so the noise level never changes
/// which states and actions are visited.
#[derive(Debug, Clone)]
pub struct EpisodeDriver<'m> {
    mdp: &'m TabularMdp,
    dynamics: ChaCha8Rng,
    noise: ChaCha8Rng,
    max_episode_steps: u32,
    reward_noise_sigma: f64,
    state: Option<usize>,
    step: u32,
    trajectory_id: u64,
    next_trajectory_id: u64,
}

impl<'m> EpisodeDriver<'m> {
    pub fn new(mdp: &'m TabularMdp, seed: u64, max_episode_steps: u32, reward_noise_sigma: f64) -> Result<Self> {
        if max_episode_steps == 0 {
            return Err(Error::Contract("max_episode_steps must be positive".into()));
        }
        if !(reward_noise_sigma >= 0.0) || !reward_noise_sigma.is_finite() {
            return Err(Error::Contract(format!(
                "reward noise sigma {reward_noise_sigma} must be >= 0"
            )));
        }
        if mdp
            .initial_distribution()
            .iter()
            .enumerate()
            .any(|(s, &p)| p > 0.0 && mdp.is_terminal(s))
        {
            return Err(Error::Contract(
                "initial distribution puts mass on a terminal state".into(),
            ));
        }
        Ok(Self {
            mdp,
            dynamics: rng::stream(seed, Stream::Dynamics),
            noise: rng::stream(seed, Stream::RewardNoise),
            max_episode_steps,
            reward_noise_sigma,
            state: None,
            step: 0,
            trajectory_id: 0,
            next_trajectory_id: 0,
        })
    }

    pub fn mdp(&self) -> &'m TabularMdp {
        self.mdp
    }

    /// Current state, `None` between episodes.
    pub fn state(&self) -> Option<usize> {
        self.state
    }

    pub fn trajectory_id(&self) -> u64 {
        self.trajectory_id
    }

    /// Starts a new episode and returns its initial state.
    pub fn reset(&mut self) -> usize {
        let s = sample_categorical(&mut self.dynamics, self.mdp.initial_distribution());
        self.state = Some(s);
        self.step = 0;
        self.trajectory_id = self.next_trajectory_id;
        self.next_trajectory_id += 1;
        s
    }

    /// Takes action `a`. The returned transition has no distance yet; once
    /// it is `done` or `censored` the episode is over and [`reset`](Self::reset)
    /// must be called.
    pub fn step(&mut self, a: usize) -> Transition {
        let s = self.state.expect("step called between episodes; call reset first");
        let outcomes = self.mdp.outcomes(s, a);
        let next = if outcomes.len() == 1 {
            outcomes[0].0
        } else {
            let probs: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
            outcomes[sample_categorical(&mut self.dynamics, &probs)].0
        };
        let mut r = self.mdp.reward(s, a);
        if self.reward_noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.noise);
            r += self.reward_noise_sigma * z;
        }
        let done = self.mdp.is_terminal(next);
        let censored = !done && self.step + 1 >= self.max_episode_steps;
        let t = Transition {
            s,
            a,
            r,
            s_next: next,
            done,
            censored,
            trajectory_id: self.trajectory_id,
            step_index: self.step,
            distance_to_end: None,
        };
        self.step += 1;
        self.state = if done || censored { None } else { Some(next) };
        t
    }

    /// Draws an action from `pi` at the current state using the dynamics stream.
    pub fn sample_action(&mut self, pi: &PolicyTable) -> usize {
        let s = self.state.expect("no current state");
        sample_categorical(&mut self.dynamics, pi.row(s))
    }

    /// Uniform draw from the dynamics stream, for callers that need one.
    pub fn uniform(&mut self) -> f64 {
        self.dynamics.random()
    }
}

/// Runs one full episode under `pi` and backfills distances to end.
pub fn run_episode(driver: &mut EpisodeDriver<'_>, pi: &PolicyTable) -> Result<Vec<Transition>> {
    pi.ensure_layout(driver.mdp().layout())?;
    driver.reset();
    let mut episode = Vec::new();
    loop {
        let a = driver.sample_action(pi);
        let t = driver.step(a);
        let over = t.done || t.censored;
        episode.push(t);
        if over {
            break;
        }
    }
    let censored = episode.last().is_some_and(|t| t.censored);
    backfill_distances(&mut episode, censored);
    Ok(episode)
}
