// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::bdm::ContactPlanEntry;
use crate::bundle::is_valid_node_name;
use crate::protocol::{Action, Topic};

fn one() -> u64 {
    1
}
fn default_duration() -> u64 {
    5000
}
fn default_payload_size() -> usize {
    32
}
fn default_lifetime() -> u64 {
    60_000
}

/// A scenario file. All `*-ms` times are relative to the scenario start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// How long the scenario runs after its start.
    #[serde(default = "default_duration")]
    pub duration_ms: u64,
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, rename = "bdm")]
    pub bdms: Vec<BdmSpec>,
    #[serde(default, rename = "link")]
    pub links: Vec<LinkSpec>,
    #[serde(default, rename = "app")]
    pub apps: Vec<AppSpec>,
    #[serde(default, rename = "send")]
    pub sends: Vec<SendSpec>,
    #[serde(default, rename = "expect")]
    pub expects: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub default_actions: Vec<Action>,
    #[serde(default)]
    pub expiry_scan_period_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ContactSpec {
    pub from: String,
    pub to: String,
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default)]
    pub owlt_ms: u64,
}

impl ContactSpec {
    /// The contact with absolute times for a scenario started at `t0`.
    pub fn absolute(&self, t0: u64) -> Result<ContactPlanEntry, ScenarioError> {
        ContactPlanEntry::new(&self.from, &self.to, t0 + self.start_ms, t0 + self.end_ms, self.owlt_ms)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", rename_all_fields = "kebab-case", deny_unknown_fields)]
pub enum BdmSpec {
    Static {
        node: String,
        /// Destination node (or `*`) to next hop.
        routes: BTreeMap<String, String>,
    },
    Opportunistic {
        node: String,
        /// `single-copy` or `flood`.
        mode: String,
    },
    Contact {
        node: String,
        #[serde(rename = "contact")]
        contacts: Vec<ContactSpec>,
    },
}

impl BdmSpec {
    pub fn node(&self) -> &str {
        match self {
            BdmSpec::Static { node, .. } | BdmSpec::Opportunistic { node, .. } | BdmSpec::Contact { node, .. } => node,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BdmSpec::Static { .. } => "static",
            BdmSpec::Opportunistic { .. } => "opportunistic",
            BdmSpec::Contact { .. } => "contact",
        }
    }
}

/// A link dialed by `from` at `at-ms`, optionally closed at `close-ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub at_ms: u64,
    #[serde(default)]
    pub close_ms: Option<u64>,
}

/// An application registration that collects deliveries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AppSpec {
    pub node: String,
    pub demux: String,
}

/// Traffic submitted on node `from`'s application listener.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SendSpec {
    pub from: String,
    pub destination: String,
    #[serde(default)]
    pub at_ms: u64,
    #[serde(default = "one")]
    pub count: u64,
    #[serde(default)]
    pub interval_ms: u64,
    #[serde(default = "default_payload_size")]
    pub payload_size: usize,
    #[serde(default = "default_lifetime")]
    pub lifetime_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", rename_all_fields = "kebab-case", deny_unknown_fields)]
pub enum Expectation {
    /// Exactly `count` deliveries (duplicates included) to `node`/`demux`,
    /// each within `within-ms` of its submission if given.
    Delivered {
        node: String,
        demux: String,
        count: u64,
        #[serde(default)]
        within_ms: Option<u64>,
    },
    /// For every submitted bundle, `node` published these topics in this order.
    EventOrder { node: String, topics: Vec<Topic> },
    /// Exactly `count` frames sent from `from` to `to` in total.
    Transmissions { from: String, to: String, count: u64 },
    /// Exactly `count` RPC requests arrived on `node`'s dispatch listener.
    RpcCount { node: String, count: u64 },
    /// Every submitted bundle expired at `node` between `min-ms` and
    /// `max-ms` after its expiry time.
    Expired { node: String, min_ms: u64, max_ms: u64 },
    /// Every submitted bundle was stored at `node` at `at-ms`.
    Retained { node: String, at_ms: u64 },
    /// Every submitted bundle was forwarded by `node` no earlier than
    /// `not-before-ms` and at most `within-ms` after it.
    ForwardedAfter {
        node: String,
        not_before_ms: u64,
        within_ms: u64,
    },
    /// No payload bytes appear on any dispatch connection or bus record.
    NoPayloadLeak,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        for (i, n) in self.nodes.iter().enumerate() {
            if !is_valid_node_name(&n.name) {
                return bad(format!("invalid node name {:?}", n.name));
            }
            if self.nodes[..i].iter().any(|m| m.name == n.name) {
                return bad(format!("duplicate node {:?}", n.name));
            }
        }
        let known = |name: &str| self.node(name).is_some();
        let mut refs: Vec<&str> = Vec::new();
        refs.extend(self.bdms.iter().map(BdmSpec::node));
        refs.extend(self.links.iter().flat_map(|l| [l.from.as_str(), l.to.as_str()]));
        refs.extend(self.apps.iter().map(|a| a.node.as_str()));
        refs.extend(self.sends.iter().map(|s| s.from.as_str()));
        for e in &self.expects {
            match e {
                Expectation::Delivered { node, .. }
                | Expectation::EventOrder { node, .. }
                | Expectation::RpcCount { node, .. }
                | Expectation::Expired { node, .. }
                | Expectation::Retained { node, .. }
                | Expectation::ForwardedAfter { node, .. } => refs.push(node),
                Expectation::Transmissions { from, to, .. } => refs.extend([from.as_str(), to.as_str()]),
                Expectation::NoPayloadLeak => {}
            }
        }
        if let Some(r) = refs.into_iter().find(|r| !known(r)) {
            return bad(format!("unknown node {r:?}"));
        }
        for b in &self.bdms {
            match b {
                BdmSpec::Opportunistic { mode, .. } => {
                    mode.parse::<crate::bdm::FloodMode>().map_err(ScenarioError::Invalid)?;
                }
                BdmSpec::Contact { contacts, .. } => {
                    for c in contacts {
                        c.absolute(0)?;
                    }
                }
                BdmSpec::Static { routes, .. } => {
                    if let Some((d, h)) = routes
                        .iter()
                        .find(|(d, h)| (*d != "*" && !is_valid_node_name(d)) || !is_valid_node_name(h))
                    {
                        return bad(format!("invalid route {d:?} -> {h:?}"));
                    }
                }
            }
        }
        for l in &self.links {
            if l.from == l.to {
                return bad(format!("self link on {:?}", l.from));
            }
            if l.close_ms.is_some_and(|c| c < l.at_ms) {
                return bad(format!("link {} -> {} closes before it opens", l.from, l.to));
            }
        }
        Ok(())
    }
}
