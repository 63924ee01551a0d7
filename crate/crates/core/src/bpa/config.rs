// SPDX-License-Identifier: Apache-2.0

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::is_valid_node_name;
use crate::protocol::{core_verbs, validate_action_list, Action};

pub const DEFAULT_DISPATCH_ADDR: &str = "127.0.0.1:4550";
pub const DEFAULT_APP_ADDR: &str = "127.0.0.1:4560";
pub const DEFAULT_CLA_ADDR: &str = "127.0.0.1:4556";

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("bad-config: {0}")]
    Bad(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Startup configuration of one node, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NodeConfig {
    pub node_name: String,
    #[serde(default)]
    pub default_actions: Vec<Action>,
    #[serde(default = "default_dispatch")]
    pub dispatch_listen: SocketAddr,
    #[serde(default = "default_app")]
    pub app_listen: SocketAddr,
    #[serde(default = "default_cla")]
    pub cla_listen: SocketAddr,
    /// Second dispatch listener on a Unix socket at this path.
    #[serde(default)]
    pub dispatch_socket: Option<PathBuf>,
    #[serde(default = "default_scan_ms")]
    pub expiry_scan_period_ms: u64,
    #[serde(default = "default_queue_cap")]
    pub subscriber_queue_cap: usize,
    /// CLA addresses dialed at startup.
    #[serde(default)]
    pub peers: Vec<String>,
    /// JSON-lines log of every protocol message, bus event and CLA frame.
    #[serde(default)]
    pub wire_log: Option<PathBuf>,
}

fn default_dispatch() -> SocketAddr {
    DEFAULT_DISPATCH_ADDR.parse().unwrap()
}
fn default_app() -> SocketAddr {
    DEFAULT_APP_ADDR.parse().unwrap()
}
fn default_cla() -> SocketAddr {
    DEFAULT_CLA_ADDR.parse().unwrap()
}
fn default_scan_ms() -> u64 {
    100
}
fn default_queue_cap() -> usize {
    1024
}

impl NodeConfig {
    pub fn new(node_name: &str) -> Self {
        NodeConfig {
            node_name: node_name.to_string(),
            default_actions: vec![],
            dispatch_listen: default_dispatch(),
            app_listen: default_app(),
            cla_listen: default_cla(),
            dispatch_socket: None,
            expiry_scan_period_ms: default_scan_ms(),
            subscriber_queue_cap: default_queue_cap(),
            peers: vec![],
            wire_log: None,
        }
    }

    /// All listeners on ephemeral loopback ports.
    pub fn ephemeral(node_name: &str) -> Self {
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        NodeConfig {
            dispatch_listen: any,
            app_listen: any,
            cla_listen: any,
            ..Self::new(node_name)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: NodeConfig = toml::from_str(text).map_err(|e| ConfigError::Bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn expiry_scan_period(&self) -> Duration {
        Duration::from_millis(self.expiry_scan_period_ms)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !is_valid_node_name(&self.node_name) {
            return Err(ConfigError::Bad(format!("invalid node-name {:?}", self.node_name)));
        }
        validate_action_list(&self.default_actions, &core_verbs())
            .map_err(|e| ConfigError::Bad(format!("default-actions: {e}")))?;
        let ports = [self.dispatch_listen, self.app_listen, self.cla_listen];
        for (i, a) in ports.iter().enumerate() {
            for b in &ports[i + 1..] {
                if a.port() != 0 && a.port() == b.port() {
                    return Err(ConfigError::Bad(format!("duplicate listener port {}", a.port())));
                }
            }
        }
        if self.expiry_scan_period_ms == 0 {
            return Err(ConfigError::Bad("expiry-scan-period-ms must be > 0".into()));
        }
        if self.subscriber_queue_cap == 0 {
            return Err(ConfigError::Bad("subscriber-queue-cap must be > 0".into()));
        }
        Ok(())
    }
}
