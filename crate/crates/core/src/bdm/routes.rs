// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::bundle::is_valid_node_name;

#[derive(Error, Debug)]
pub enum RoutesError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Destination node name to next-hop node name, with an optional `*` fallback.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StaticRouteTable {
    routes: BTreeMap<String, String>,
    fallback: Option<String>,
}

impl StaticRouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dest: &str, next_hop: &str) {
        if dest == "*" {
            self.fallback = Some(next_hop.to_string());
        } else {
            self.routes.insert(dest.to_string(), next_hop.to_string());
        }
    }

    pub fn with(mut self, dest: &str, next_hop: &str) -> Self {
        self.insert(dest, next_hop);
        self
    }

    pub fn next_hop(&self, dest: &str) -> Option<&str> {
        self.routes.get(dest).or(self.fallback.as_ref()).map(String::as_str)
    }

    /// Parses `dest next-hop` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RoutesError> {
        let mut table = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| RoutesError::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [dest, hop] = fields[..] else {
                return Err(err(format!("expected 2 fields, got {}", fields.len())));
            };
            if (dest != "*" && !is_valid_node_name(dest)) || !is_valid_node_name(hop) {
                return Err(err(format!("bad node name in {line:?}")));
            }
            table.insert(dest, hop);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, RoutesError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
