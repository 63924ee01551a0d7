// SPDX-License-Identifier: Apache-2.0

//! A DTN bundle protocol agent whose forwarding decisions are made by
//! external dispatcher modules.
//!
//! The node publishes events (connectivity changes, bundles needing a
//! decision, expiries, outcomes) to subscribers and accepts per-bundle
//! action lists over RPC. Reference dispatchers, a TCP convergence layer,
//! an application interface and a scenario runner are included.

pub mod bdm;
pub mod bpa;
pub mod bundle;
pub mod cla;
pub mod client;
pub mod conformance;
pub mod protocol;
pub mod scenario;
pub mod wirelog;
