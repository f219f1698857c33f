//! A neural computer with coupled computational/data memories, hard-attention
//! addressing and usage linkage, trained with natural evolution strategies to
//! run breadth-first search and plan extraction over symbolic planning domains.
//!
//! Module map:
//!
//! - [`smallnet`]: dense networks, flat genomes, Adam-based supervised training.
//! - [`memory`]: the dual memory with its five read attention mechanisms.
//! - [`domains`]: Sokoban, sliding puzzle and block manipulation, plus the BFS oracle.
//! - [`data_modules`]: Input, Transform_D, ALU and Output (oracle and learned).
//! - [`engine`]: the output-input computation loop and the scripted reference program.
//! - [`training`]: fitness, rank utilities, NES and the curriculum.
//! - [`experiment`]: run configuration, presets and the artifacts behind the CLI.

pub mod data_modules;
pub mod domains;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod memory;
pub mod smallnet;
pub mod training;
pub mod word;

pub use error::{Error, Result};
pub use word::DataWord;
