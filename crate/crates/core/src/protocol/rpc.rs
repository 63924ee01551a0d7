// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::{Action, VerbDescriptor};
use crate::bundle::{BundleId, BundleMetadata, EndpointId, ExtensionBlock};

/// Method names. The first five are served on the dispatch listener, the
/// last two on the application listener.
pub mod method {
    pub const UPDATE_ACTIONS: &str = "update-actions";
    pub const QUERY_SUPPORTED_ACTIONS: &str = "query-supported-actions";
    pub const LIST_BUNDLES: &str = "list-bundles";
    pub const GET_BUNDLE: &str = "get-bundle";
    pub const SET_DEFAULT_ACTIONS: &str = "set-default-actions";

    pub const REGISTER: &str = "register";
    pub const SEND: &str = "send";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpcRequest {
    pub id: String,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpcError {
    pub code: String,
    pub message: String,
}

impl RpcError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        RpcError {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for RpcError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for RpcError {}

/// Response to a request. `id` is absent only on the unsolicited
/// protocol-error response sent right before the server closes a connection.
#[derive(Debug, Clone, PartialEq)]
pub struct RpcResponse {
    pub id: Option<String>,
    pub outcome: Result<Value, RpcError>,
}

impl RpcResponse {
    pub fn ok(id: &str, result: Value) -> Self {
        RpcResponse {
            id: Some(id.to_string()),
            outcome: Ok(result),
        }
    }

    pub fn err(id: &str, error: RpcError) -> Self {
        RpcResponse {
            id: Some(id.to_string()),
            outcome: Err(error),
        }
    }

    pub fn protocol_error(message: impl Into<String>) -> Self {
        RpcResponse {
            id: None,
            outcome: Err(RpcError::new("protocol-error", message)),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "some_value")]
    result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<RpcError>,
}

// Distinguishes `"result": null` from an absent field.
fn some_value<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl Serialize for RpcResponse {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (result, error) = match &self.outcome {
            Ok(v) => (Some(v.clone()), None),
            Err(e) => (None, Some(e.clone())),
        };
        RawResponse {
            id: self.id.clone(),
            result,
            error,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RpcResponse {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawResponse::deserialize(deserializer)?;
        let outcome = match (raw.result, raw.error) {
            (Some(v), None) => Ok(v),
            (None, Some(e)) => Err(e),
            _ => return Err(D::Error::custom("exactly one of result/error required")),
        };
        Ok(RpcResponse {
            id: raw.id,
            outcome,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct UpdateActionsParams {
    pub id: BundleId,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BundleIdParams {
    pub id: BundleId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SetDefaultActionsParams {
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ListBundlesResult {
    pub bundles: Vec<BundleMetadata>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BundleResult {
    pub bundle: BundleMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SupportedActionsResult {
    pub actions: Vec<VerbDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RegisterParams {
    pub demux: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RegisterResult {
    pub endpoint: EndpointId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SendAduParams {
    pub destination: String,
    #[serde(with = "super::base64_bytes")]
    pub payload: Vec<u8>,
    pub lifetime: u64,
    #[serde(default)]
    pub extension_blocks: Vec<ExtensionBlock>,
    #[serde(default)]
    pub report_to: Option<EndpointId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SendAduResult {
    pub id: BundleId,
}
