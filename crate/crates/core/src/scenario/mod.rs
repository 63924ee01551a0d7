// SPDX-License-Identifier: Apache-2.0

//! Multi-node scenarios: a TOML description of nodes, dispatchers, links,
//! traffic and expectations, plus a runner that plays it out with real
//! processes.

pub mod check;
pub mod runner;
pub mod spec;
pub mod trace;

use thiserror::Error;

pub use check::{evaluate, Check};
pub use runner::{run, Outcome, RunOptions};
pub use spec::{AppSpec, BdmSpec, ContactSpec, Expectation, LinkSpec, NodeSpec, Scenario, SendSpec};
pub use trace::{DeliveryRecord, SentRecord, Trace};

#[derive(Error, Debug)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("process: {0}")]
    Spawn(String),
    #[error("client: {0}")]
    Client(String),
}
