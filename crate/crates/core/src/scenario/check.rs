// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use base64::Engine;
use serde_json::Value;

use super::{Expectation, Trace};
use crate::bundle::BundleId;
use crate::protocol::Topic;
use crate::wirelog::Channel;

/// Outcome of one expectation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.description, self.detail)
    }
}

fn check(description: String, passed: bool, detail: String) -> Check {
    Check {
        description,
        passed,
        detail,
    }
}

pub fn evaluate(expectation: &Expectation, trace: &Trace) -> Check {
    match expectation {
        Expectation::Delivered {
            node,
            demux,
            count,
            within_ms,
        } => {
            let got = trace.deliveries_to(node, demux);
            let mut worst = 0;
            let mut unmatched = 0;
            for d in &got {
                match trace.sent.iter().find(|s| s.id == d.id) {
                    Some(s) => worst = worst.max(d.t.saturating_sub(s.t)),
                    None => unmatched += 1,
                }
            }
            let in_time = within_ms.is_none_or(|w| worst <= w);
            check(
                format!("delivered {node}/{demux} count={count}"),
                got.len() as u64 == *count && in_time && unmatched == 0,
                format!(
                    "{} deliveries, slowest {worst} ms{}{}",
                    got.len(),
                    within_ms.map(|w| format!(" (limit {w} ms)")).unwrap_or_default(),
                    if unmatched > 0 { format!(", {unmatched} unknown bundles") } else { String::new() }
                ),
            )
        }
        Expectation::EventOrder { node, topics } => {
            let names: Vec<&str> = topics.iter().map(|t| t.as_str()).collect();
            let mut failures = Vec::new();
            for s in &trace.sent {
                let seen: Vec<Topic> = trace.bundle_events(node, &s.id).into_iter().map(|(_, e)| e.topic).collect();
                let mut it = seen.iter();
                if !topics.iter().all(|t| it.any(|x| x == t)) {
                    failures.push(format!("{:?}: saw {:?}", s.id, seen.iter().map(|t| t.as_str()).collect::<Vec<_>>()));
                }
            }
            check(
                format!("event order on {node}: {}", names.join(" < ")),
                failures.is_empty() && !trace.sent.is_empty(),
                if failures.is_empty() {
                    format!("{} bundles in order", trace.sent.len())
                } else {
                    failures.join("; ")
                },
            )
        }
        Expectation::Transmissions { from, to, count } => {
            let n = trace.frames(from, to).len() as u64;
            check(
                format!("transmissions {from} -> {to} = {count}"),
                n == *count,
                format!("{n} frames"),
            )
        }
        Expectation::RpcCount { node, count } => {
            let n = trace.rpc_requests(node) as u64;
            check(format!("rpc requests on {node} = {count}"), n == *count, format!("{n} requests"))
        }
        Expectation::Expired { node, min_ms, max_ms } => {
            let mut lags = Vec::new();
            let mut missing = 0;
            for s in &trace.sent {
                match trace.first_event(node, Topic::BundleExpired, &s.id) {
                    Some(t) => lags.push(t as i64 - (s.id.creation_time + s.lifetime) as i64),
                    None => missing += 1,
                }
            }
            let ok = missing == 0
                && !lags.is_empty()
                && lags.iter().all(|&l| l >= *min_ms as i64 && l <= *max_ms as i64);
            check(
                format!("expired on {node} {min_ms}..{max_ms} ms after expiry"),
                ok,
                format!("lags {lags:?} ms, {missing} not expired"),
            )
        }
        Expectation::Retained { node, at_ms } => {
            let t = trace.t0 + at_ms;
            let held = trace.sent.iter().filter(|s| trace.held_at(node, &s.id, t)).count();
            check(
                format!("retained on {node} at {at_ms} ms"),
                held == trace.sent.len() && held > 0,
                format!("{held}/{} held", trace.sent.len()),
            )
        }
        Expectation::ForwardedAfter {
            node,
            not_before_ms,
            within_ms,
        } => {
            let start = trace.t0 + not_before_ms;
            let mut lags = Vec::new();
            let mut missing = 0;
            for s in &trace.sent {
                match trace.first_event(node, Topic::BundleForwarded, &s.id) {
                    Some(t) => lags.push(t as i64 - start as i64),
                    None => missing += 1,
                }
            }
            let ok = missing == 0 && !lags.is_empty() && lags.iter().all(|&l| l >= 0 && l <= *within_ms as i64);
            check(
                format!("forwarded by {node} within {within_ms} ms after {not_before_ms} ms"),
                ok,
                format!("lags {lags:?} ms, {missing} never forwarded"),
            )
        }
        Expectation::NoPayloadLeak => {
            let b64 = base64::engine::general_purpose::STANDARD;
            let mut needles: Vec<String> = trace.sent.iter().map(|s| b64.encode(&s.payload)).collect();
            needles.extend(trace.sent.iter().filter_map(|s| String::from_utf8(s.payload.clone()).ok()));
            let lengths: HashMap<&BundleId, u64> = trace.sent.iter().map(|s| (&s.id, s.payload.len() as u64)).collect();
            let mut leaks = 0;
            let mut scanned = 0;
            let mut sizes = 0;
            let mut wrong_sizes = 0;
            for records in trace.records.values() {
                for r in records.iter().filter(|r| matches!(r.ch, Channel::Dispatch | Channel::Bus)) {
                    let Some(line) = &r.line else { continue };
                    scanned += 1;
                    if needles.iter().any(|n| !n.is_empty() && line.contains(n.as_str())) {
                        leaks += 1;
                    }
                    if let Ok(doc) = serde_json::from_str::<Value>(line) {
                        for (id, len) in payload_lengths(&doc) {
                            if let Some(&want) = lengths.get(&id) {
                                sizes += 1;
                                if len != want {
                                    wrong_sizes += 1;
                                }
                            }
                        }
                    }
                }
            }
            check(
                "no payload on dispatch connections or bus".to_string(),
                leaks == 0 && wrong_sizes == 0,
                format!("{leaks} leaking of {scanned} records, {wrong_sizes} wrong of {sizes} payload lengths"),
            )
        }
    }
}

/// Every `(id, payload-length)` pair in bundle metadata anywhere in `doc`.
fn payload_lengths(doc: &Value) -> Vec<(BundleId, u64)> {
    let mut out = Vec::new();
    let mut stack = vec![doc];
    while let Some(v) = stack.pop() {
        match v {
            Value::Object(map) => {
                if let (Some(id), Some(len)) = (map.get("id"), map.get("payload-length").and_then(Value::as_u64)) {
                    if let Ok(id) = serde_json::from_value::<BundleId>(id.clone()) {
                        out.push((id, len));
                    }
                }
                stack.extend(map.values());
            }
            Value::Array(items) => stack.extend(items),
            _ => {}
        }
    }
    out
}
