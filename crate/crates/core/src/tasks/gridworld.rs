use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, derive_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
    None,
}

impl Direction {
    pub const MOVES: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    /// Row and column offset.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
            Direction::None => (0, 0),
        }
    }

    /// Index into [`Direction::MOVES`], `None` for no push.
    pub fn index(self) -> Option<usize> {
        Direction::MOVES.iter().position(|&d| d == self)
    }
}

pub type Position = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridWorldState {
    pub grid_size: usize,
    pub positions: Vec<Position>,
    pub actions: Vec<Direction>,
}

impl GridWorldState {
    pub fn validate(&self) -> Result<()> {
        if self.actions.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} actions for {} objects",
                self.actions.len(),
                self.positions.len()
            )));
        }
        for (i, &(r, c)) in self.positions.iter().enumerate() {
            if r >= self.grid_size || c >= self.grid_size {
                return Err(Error::invalid(format!("object {i} at ({r}, {c}) is off a {0}x{0} grid", self.grid_size)));
            }
            if self.positions[..i].contains(&(r, c)) {
                return Err(Error::invalid(format!("object {i} shares cell ({r}, {c})")));
            }
        }
        Ok(())
    }
}

/// Moves objects one at a time in index order. An object steps one cell in
/// its direction unless that cell is off the grid or holds another object
/// (at its already-updated position), in which case it stays.
pub fn gridworld_transition(state: &GridWorldState) -> Result<Vec<Position>> {
    state.validate()?;
    let n = state.grid_size as isize;
    let mut pos = state.positions.clone();
    for i in 0..pos.len() {
        let (dr, dc) = state.actions[i].delta();
        if (dr, dc) == (0, 0) {
            continue;
        }
        let (r, c) = (pos[i].0 as isize + dr, pos[i].1 as isize + dc);
        if r < 0 || c < 0 || r >= n || c >= n {
            continue;
        }
        let target = (r as usize, c as usize);
        if !pos.contains(&target) {
            pos[i] = target;
        }
    }
    Ok(pos)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridWorldConfig {
    pub num_objects: usize,
    pub grid_size: usize,
    pub steps: usize,
    pub episodes: usize,
}

impl GridWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::config("grid_size must be positive"));
        }
        if self.num_objects == 0 || self.num_objects > self.grid_size * self.grid_size {
            return Err(Error::config(format!(
                "cannot place {} objects on a {1}x{1} grid",
                self.num_objects, self.grid_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<Position>,
    pub actions: Vec<Direction>,
    pub next: Vec<Position>,
}

/// Random collision-free placements, then `steps` transitions per episode.
/// Each step pushes one uniformly chosen object in a uniformly chosen
/// direction; every other object receives no push. Episode `e` draws from
/// its own seed derived from `(seed, e)`.
pub fn gen_gridworld_episodes(num_objects: usize, grid_size: usize, steps: usize, episodes: usize, seed: u64) -> Result<Vec<Transition>> {
    gen_gridworld(
        &GridWorldConfig {
            num_objects,
            grid_size,
            steps,
            episodes,
        },
        seed,
    )
}

pub fn gen_gridworld(config: &GridWorldConfig, seed: u64) -> Result<Vec<Transition>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.episodes * config.steps);
    for e in 0..config.episodes {
        let mut rng = seed::stream_rng(derive_seed(seed, e as u64), Stream::Data);
        let mut positions = place(config, &mut rng);
        for _ in 0..config.steps {
            let mut actions = vec![Direction::None; config.num_objects];
            actions[rng.random_range(0..config.num_objects)] = Direction::MOVES[rng.random_range(0..4)];
            let state = GridWorldState {
                grid_size: config.grid_size,
                positions,
                actions,
            };
            let next = gridworld_transition(&state)?;
            out.push(Transition {
                state: state.positions,
                actions: state.actions,
                next: next.clone(),
            });
            positions = next;
        }
    }
    Ok(out)
}

fn place<R: Rng + ?Sized>(config: &GridWorldConfig, rng: &mut R) -> Vec<Position> {
    let g = config.grid_size;
    index::sample(rng, g * g, config.num_objects)
        .into_iter()
        .map(|cell| (cell / g, cell % g))
        .collect()
}

/// One-hot row followed by one-hot column, `2 * grid_size` values.
pub fn object_features(grid_size: usize, pos: Position) -> Vec<f64> {
    let mut f = vec![0.0; 2 * grid_size];
    f[pos.0] = 1.0;
    f[grid_size + pos.1] = 1.0;
    f
}

/// One-hot over the four pushes; all zeros for no push.
pub fn action_features(action: Direction) -> Vec<f64> {
    let mut f = vec![0.0; 4];
    if let Some(i) = action.index() {
        f[i] = 1.0;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(grid: usize, positions: Vec<Position>, actions: Vec<Direction>) -> Vec<Position> {
        gridworld_transition(&GridWorldState {
            grid_size: grid,
            positions,
            actions,
        })
        .unwrap()
    }

    #[test]
    fn wall_blocks() {
        assert_eq!(step(5, vec![(0, 0)], vec![Direction::Up]), vec![(0, 0)]);
        assert_eq!(step(5, vec![(4, 4)], vec![Direction::Right]), vec![(4, 4)]);
    }

    #[test]
    fn occupied_cell_blocks() {
        let out = step(5, vec![(1, 1), (1, 2)], vec![Direction::Right, Direction::None]);
        assert_eq!(out, vec![(1, 1), (1, 2)]);
    }

    #[test]
    fn earlier_objects_move_first() {
        let out = step(5, vec![(1, 2), (1, 1)], vec![Direction::Right, Direction::Right]);
        assert_eq!(out, vec![(1, 3), (1, 2)]);
        let out = step(5, vec![(1, 1), (1, 2)], vec![Direction::Right, Direction::Right]);
        assert_eq!(out, vec![(1, 1), (1, 3)]);
    }

    #[test]
    fn invalid_states_rejected() {
        let s = GridWorldState {
            grid_size: 3,
            positions: vec![(0, 0), (0, 0)],
            actions: vec![Direction::None; 2],
        };
        assert!(gridworld_transition(&s).is_err());
        assert!(gen_gridworld_episodes(10, 3, 1, 1, 0).is_err());
    }

    #[test]
    fn packed_grid_never_moves() {
        for t in gen_gridworld_episodes(9, 3, 20, 3, 4).unwrap() {
            assert_eq!(t.state, t.next);
        }
    }

    #[test]
    fn features() {
        assert_eq!(object_features(3, (2, 0)), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(action_features(Direction::Left), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(action_features(Direction::None), vec![0.0; 4]);
    }
}
