//! Gridworlds parsed from text maps.
//!
//! Map characters: `S` start, `G` goal, `H` hazard, `#` wall, `.` free.
//! Every non-wall cell becomes a state, numbered in row-major order.

use std::fmt;

use super::TabularMdp;
use crate::error::{Error, Result};
use crate::ot::{CostMatrix, DiscreteDistribution, StateEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Wall,
    Start,
    Goal,
    Hazard,
}

impl Cell {
    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '.' => Cell::Free,
            '#' => Cell::Wall,
            'S' => Cell::Start,
            'G' => Cell::Goal,
            'H' => Cell::Hazard,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    fn perpendicular(self) -> [Action; 2] {
        match self {
            Action::Up | Action::Down => [Action::Left, Action::Right],
            Action::Left | Action::Right => [Action::Up, Action::Down],
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridworldSpec {
    pub cells: Vec<Vec<Cell>>,
    /// Reward for landing on a free or start cell (including bumping in place).
    pub step_reward: f64,
    /// Reward for entering a goal; goals are absorbing with zero reward afterwards.
    pub goal_reward: f64,
    /// Reward for landing on a hazard cell.
    pub hazard_reward: f64,
    /// Probability mass moved to the two perpendicular directions, split evenly.
    pub slip_prob: f64,
    pub discount: f64,
}

impl GridworldSpec {
    /// Parses a map with default parameters: step −1, goal +10, hazard −1,
    /// no slip, discount 0.9.
    pub fn parse(map: &str) -> Result<Self> {
        let lines: Vec<&str> = map
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty())
            .collect();
        Self::from_rows(&lines)
    }

    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "map is empty".into(),
            });
        }
        let mut cells = Vec::with_capacity(rows.len());
        let mut start = None;
        let mut goals = 0;
        let width = rows[0].as_ref().chars().count();
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            let mut parsed = Vec::with_capacity(width);
            for (c, ch) in row.chars().enumerate() {
                let cell = Cell::from_char(ch).ok_or_else(|| Error::Parse {
                    line: r + 1,
                    column: c + 1,
                    message: format!("unknown map character {ch:?}"),
                })?;
                match cell {
                    Cell::Start if start.is_some() => {
                        return Err(Error::Parse {
                            line: r + 1,
                            column: c + 1,
                            message: "second start cell".into(),
                        })
                    }
                    Cell::Start => start = Some((r, c)),
                    Cell::Goal => goals += 1,
                    _ => {}
                }
                parsed.push(cell);
            }
            if parsed.len() != width {
                return Err(Error::Parse {
                    line: r + 1,
                    column: parsed.len().min(width) + 1,
                    message: format!("row has {} cells, expected {width}", parsed.len()),
                });
            }
            cells.push(parsed);
        }
        if start.is_none() {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "map has no start cell".into(),
            });
        }
        if goals == 0 {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "map has no goal cell".into(),
            });
        }
        Ok(Self {
            cells,
            step_reward: -1.0,
            goal_reward: 10.0,
            hazard_reward: -1.0,
            slip_prob: 0.0,
            discount: 0.9,
        })
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }
}

/// A built gridworld: the MDP plus the geometry and labels needed for risk analysis.
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub mdp: TabularMdp,
    pub embedding: StateEmbedding,
    /// Uniform over states that are neither hazards nor walls.
    pub risk: DiscreteDistribution,
    pub start: usize,
    pub goals: Vec<usize>,
    pub hazards: Vec<usize>,
    /// `(row, col)` of every state.
    pub coords: Vec<(usize, usize)>,
    state_of_cell: Vec<Option<usize>>,
    cols: usize,
}

impl Gridworld {
    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        if col >= self.cols {
            return None;
        }
        self.state_of_cell.get(row * self.cols + col).copied().flatten()
    }

    pub fn cost_matrix(&self) -> CostMatrix {
        self.embedding.cost_matrix()
    }
}

pub fn build_gridworld(spec: &GridworldSpec) -> Result<Gridworld> {
    if !(0.0..=1.0).contains(&spec.slip_prob) {
        return Err(Error::invalid(format!(
            "slip probability must lie in [0, 1], got {}",
            spec.slip_prob
        )));
    }
    let (rows, cols) = (spec.rows(), spec.cols());
    if rows == 0 || cols == 0 || spec.cells.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("grid must be nonempty and rectangular"));
    }

    let mut state_of_cell = vec![None; rows * cols];
    let mut coords = Vec::new();
    let mut kinds = Vec::new();
    for (r, row) in spec.cells.iter().enumerate() {
        for (c, &cell) in row.iter().enumerate() {
            if cell != Cell::Wall {
                state_of_cell[r * cols + c] = Some(coords.len());
                coords.push((r, c));
                kinds.push(cell);
            }
        }
    }
    let n = coords.len();
    let na = Action::ALL.len();
    let state_of = |r: usize, c: usize| state_of_cell[r * cols + c];

    let destination = |s: usize, action: Action| -> usize {
        let (r, c) = coords[s];
        let (dr, dc) = action.delta();
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
            return s;
        }
        state_of(nr as usize, nc as usize).unwrap_or(s)
    };
    let landing_reward = |s: usize| match kinds[s] {
        Cell::Goal => spec.goal_reward,
        Cell::Hazard => spec.hazard_reward,
        _ => spec.step_reward,
    };

    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na];
    for s in 0..n {
        for action in Action::ALL {
            let a = action as usize;
            let row = &mut transition[(s * na + a) * n..(s * na + a + 1) * n];
            if kinds[s] == Cell::Goal {
                row[s] = 1.0;
                continue;
            }
            let mut moves = vec![(destination(s, action), 1.0 - spec.slip_prob)];
            for side in action.perpendicular() {
                moves.push((destination(s, side), spec.slip_prob / 2.0));
            }
            let mut expected = 0.0;
            for (next, p) in moves {
                if p > 0.0 {
                    row[next] += p;
                    expected += p * landing_reward(next);
                }
            }
            reward[s * na + a] = expected;
        }
    }

    let start = kinds.iter().position(|&k| k == Cell::Start).expect("validated start");
    let goals: Vec<usize> = (0..n).filter(|&s| kinds[s] == Cell::Goal).collect();
    let hazards: Vec<usize> = (0..n).filter(|&s| kinds[s] == Cell::Hazard).collect();
    let safe: Vec<usize> = (0..n).filter(|&s| kinds[s] != Cell::Hazard).collect();
    if safe.is_empty() {
        return Err(Error::invalid("grid has no non-hazard cells"));
    }

    let mdp = TabularMdp::new(
        n,
        na,
        transition,
        reward,
        spec.discount,
        DiscreteDistribution::dirac(n, start)?,
    )?;
    let embedding = StateEmbedding::new(
        coords
            .iter()
            .map(|&(r, c)| vec![r as f64, c as f64])
            .collect(),
    )?;
    let risk = DiscreteDistribution::uniform_over(n, &safe)?;
    Ok(Gridworld {
        mdp,
        embedding,
        risk,
        start,
        goals,
        hazards,
        coords,
        state_of_cell,
        cols,
    })
}
