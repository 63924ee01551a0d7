// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::bundle::is_valid_node_name;

pub const SEND_TO: &str = "send-to";
pub const DROP: &str = "drop";

/// One bundle processing action: a verb plus verb-specific arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub verb: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl Action {
    pub fn send_to(node: &str) -> Self {
        let mut args = Map::new();
        args.insert("node".into(), Value::String(node.to_string()));
        Action {
            verb: SEND_TO.into(),
            args,
        }
    }

    pub fn drop() -> Self {
        Action {
            verb: DROP.into(),
            args: Map::new(),
        }
    }

    /// Target node of a `send-to`, if this is one and the argument is a string.
    pub fn send_to_target(&self) -> Option<&str> {
        if self.verb != SEND_TO {
            return None;
        }
        self.args.get("node").and_then(Value::as_str)
    }

    pub fn is_drop(&self) -> bool {
        self.verb == DROP
    }
}

/// Announces one supported verb, its argument schema and a valid example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerbDescriptor {
    pub verb: String,
    /// Argument name to a short type description.
    pub args: BTreeMap<String, String>,
    pub example: Action,
}

/// Descriptors for the verbs every node supports.
pub fn core_verbs() -> Vec<VerbDescriptor> {
    vec![
        VerbDescriptor {
            verb: SEND_TO.into(),
            args: BTreeMap::from([("node".to_string(), "node-name".to_string())]),
            example: Action::send_to("B"),
        },
        VerbDescriptor {
            verb: DROP.into(),
            args: BTreeMap::new(),
            example: Action::drop(),
        },
    ]
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ActionError {
    #[error("unknown-verb at index {index}: {verb:?}")]
    UnknownVerb { index: usize, verb: String },
    #[error("bad-args at index {index}: {reason}")]
    BadArgs { index: usize, reason: String },
}

impl ActionError {
    pub fn index(&self) -> usize {
        match self {
            ActionError::UnknownVerb { index, .. } | ActionError::BadArgs { index, .. } => *index,
        }
    }
}

/// Checks a list against the core verbs plus any announced extensions.
pub fn validate_action_list(
    actions: &[Action],
    supported: &[VerbDescriptor],
) -> Result<(), ActionError> {
    for (index, action) in actions.iter().enumerate() {
        match action.verb.as_str() {
            SEND_TO => {
                let node = action.args.get("node").and_then(Value::as_str);
                match node {
                    Some(n) if is_valid_node_name(n) => {}
                    Some(n) => {
                        return Err(ActionError::BadArgs {
                            index,
                            reason: format!("invalid node name {n:?}"),
                        })
                    }
                    None => {
                        return Err(ActionError::BadArgs {
                            index,
                            reason: "send-to requires a string \"node\" argument".into(),
                        })
                    }
                }
                if action.args.len() != 1 {
                    return Err(ActionError::BadArgs {
                        index,
                        reason: "send-to takes only \"node\"".into(),
                    });
                }
            }
            DROP => {
                if !action.args.is_empty() {
                    return Err(ActionError::BadArgs {
                        index,
                        reason: "drop takes no arguments".into(),
                    });
                }
            }
            verb => {
                let descriptor = supported.iter().find(|d| d.verb == verb).ok_or_else(|| {
                    ActionError::UnknownVerb {
                        index,
                        verb: verb.to_string(),
                    }
                })?;
                if let Some(missing) = descriptor.args.keys().find(|k| !action.args.contains_key(*k)) {
                    return Err(ActionError::BadArgs {
                        index,
                        reason: format!("missing argument {missing:?}"),
                    });
                }
            }
        }
    }
    Ok(())
}
