pub mod error;
pub mod linalg;
pub mod model;
pub mod superop;
pub mod generators;
pub mod thermo;
pub mod counting;
pub mod trajectories;
pub mod output_states;
pub mod renewal;
