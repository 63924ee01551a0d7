// SPDX-License-Identifier: Apache-2.0

//! The bundle protocol agent: store, action engine, event bus and the
//! daemon serving them.

pub mod agent;
pub mod bus;
pub mod config;
pub mod control;
pub mod node;

pub use agent::{Agent, IngestError, IngestSource, Output, Step, Transmission, UpdateError};
pub use bus::Bus;
pub use config::{ConfigError, NodeConfig};
pub use node::{start, NodeError, NodeHandle};
