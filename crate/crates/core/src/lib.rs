//! Isovist sequences along indoor trajectories, and a convolutional-recurrent
//! variational auto-encoder that learns unsupervised encodings of them.

pub mod annotate;
pub mod exec;
pub mod gridworld;
pub mod neuralnet;
pub mod pathgen;
pub mod sequences;
pub mod vae;
pub mod visibility;

pub use exec::Execution;
pub use gridworld::{Cell, GridCoord, OccupancyGrid};
