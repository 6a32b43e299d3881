//! Desk-scale data generators and ranking metrics.

mod adding;
mod dataset;
mod gridworld;
mod ranking;
mod sequence;

pub use adding::{gen_adding, gen_adding_with, AddingConfig, AddingSample, AddingSamples};
pub use dataset::{Dataset, ADDING_COLUMNS, GRIDWORLD_COLUMNS};
pub use gridworld::{
    action_features, gen_gridworld, gen_gridworld_episodes, gridworld_transition, object_features, Direction,
    GridWorldConfig, GridWorldState, Position, Transition,
};
pub use ranking::{hits_at_k, mrr, rank_next_state};
pub use sequence::{gen_majority, MajorityConfig, MajoritySamples};
