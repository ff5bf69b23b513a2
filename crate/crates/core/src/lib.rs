//! Simulator and client-selection strategies for federated learning on
//! serverless platforms.
//!
//! Clients are stateless functions with heterogeneous hardware, cold starts
//! and unreliable completion. The crate provides the building blocks
//! (staleness-aware aggregation, efficiency-score selection, clustering-based
//! tiered selection, buffered asynchronous aggregation), a deterministic
//! discrete-event simulator that runs them on a synthetic quadratic task, and
//! the metrics and file formats used to compare strategies.
//!
//! ```no_run
//! let scenario = fedsim::scenario::bundled("homogeneous").unwrap().remove(0);
//! let result = fedsim::sim::simulate(&scenario).unwrap();
//! println!("final loss {}", result.summary.final_loss);
//! ```

pub mod aggregation;
pub mod cli;
pub mod clustering;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod sim;
pub mod strategy;
pub mod task;

pub use model::{ClientHistory, ClientId, ClientProfile, HardwareClass, ModelParams, UpdateRecord};
pub use scenario::Scenario;
pub use sim::{simulate, RunResult};
pub use strategy::StrategyKind;
