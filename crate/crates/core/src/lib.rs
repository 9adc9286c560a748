//! Iterative deep-Q channel scheduling for networked control systems with
//! packet-loss-aware LQR control.
//!
//! The crate covers the plant and channel simulators, the lossy Riccati
//! machinery, a small dense Q-network with replay, the iterative scheduler,
//! and a harness that trains and evaluates it against reference schedulers.

pub mod channel;
pub mod dira;
pub mod dqn;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lqr;
pub mod plant;
pub mod textfmt;

pub use channel::{ChannelNetwork, GilbertElliotParams, MarkovChannel};
pub use dira::{Exploration, RepresentationVector, ScheduleAction, StorageMode};
pub use dqn::{AdamConfig, QNetwork, ReplayBuffer, Transition};
pub use error::{Error, Result};
pub use lqr::{ClosureProbabilities, RiccatiOptions, SteadyStateFailure};
pub use plant::{GenerationConfig, PlantModel, SuccessMask};
pub use textfmt::MatrixFile;
