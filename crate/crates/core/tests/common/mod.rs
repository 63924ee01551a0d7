// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use proptest::prelude::*;
use serde_json::{Map, Value};

use bpa_dispatch::bdm::ContactPlanEntry;
use bpa_dispatch::bundle::{parse_endpoint, Bundle, BundleId, BundleMetadata, EndpointId, ExtensionBlock, Retention};
use bpa_dispatch::protocol::{
    Action, Envelope, Event, EventPayload, Hello, Message, Role, RpcError, RpcRequest, RpcResponse, Subscribe, Topic,
};

pub const NODES: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Exhaustive search over time-respecting sequences of distinct contacts.
/// Returns the lexicographic minimum of (arrival, hops, next hop).
pub fn oracle(plan: &[ContactPlanEntry], source: &str, dest: &str, t0: u64) -> Option<(String, u64, usize)> {
    if source == dest {
        return Some((source.to_string(), t0, 0));
    }
    fn walk(
        plan: &[ContactPlanEntry],
        used: &mut Vec<bool>,
        at: &str,
        t: u64,
        first: Option<&str>,
        depth: usize,
        dest: &str,
        best: &mut Option<(u64, usize, String)>,
    ) {
        for (i, c) in plan.iter().enumerate() {
            if used[i] || c.from != at || t > c.end {
                continue;
            }
            let arrival = t.max(c.start) + c.one_way_light_time;
            let hop = first.unwrap_or(c.to.as_str());
            if c.to == dest {
                let cand = (arrival, depth + 1, hop.to_string());
                if best.as_ref().is_none_or(|b| cand < *b) {
                    *best = Some(cand);
                }
            }
            used[i] = true;
            walk(plan, used, &c.to, arrival, Some(hop), depth + 1, dest, best);
            used[i] = false;
        }
    }
    let mut best = None;
    walk(plan, &mut vec![false; plan.len()], source, t0, None, 0, dest, &mut best);
    best.map(|(a, h, n)| (n, a, h))
}

pub fn contact() -> impl Strategy<Value = ContactPlanEntry> {
    (0..5usize, 1..5usize, 0..100u64, 1..=100u64, 0..=10u64).prop_map(|(f, d, s, len, owlt)| {
        let t = (f + d) % 5;
        let start = s.min(99);
        let end = (start + len).min(100).max(start + 1);
        ContactPlanEntry::new(NODES[f], NODES[t], start, end, owlt).unwrap()
    })
}

pub fn plan() -> impl Strategy<Value = Vec<ContactPlanEntry>> {
    prop::collection::vec(contact(), 0..=8)
}

pub fn node() -> impl Strategy<Value = &'static str> {
    prop::sample::select(NODES.to_vec())
}

fn name() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9._-]{0,8}"
}

fn endpoint() -> impl Strategy<Value = EndpointId> {
    (name(), "[a-z0-9/_-]{0,8}").prop_map(|(n, d)| parse_endpoint(&format!("dtn://{n}/{d}")).unwrap())
}

pub fn bundle_id() -> impl Strategy<Value = BundleId> {
    (endpoint(), any::<u64>(), any::<u64>()).prop_map(|(source, creation_time, sequence)| BundleId {
        source,
        creation_time,
        sequence,
    })
}

fn json_scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        any::<String>().prop_map(Value::String),
    ]
}

pub fn json() -> impl Strategy<Value = Value> {
    json_scalar().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-z-]{1,6}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect::<Map<String, Value>>())),
        ]
    })
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        name().prop_map(|n| Action::send_to(&n)),
        Just(Action::drop()),
        ("[a-z-]{1,8}", prop::collection::btree_map("[a-z]{1,4}", json_scalar(), 0..3)).prop_map(|(verb, args)| {
            Action {
                verb,
                args: args.into_iter().collect(),
            }
        }),
    ]
}

fn ext_block() -> impl Strategy<Value = ExtensionBlock> {
    (any::<u64>(), any::<u64>(), prop::collection::vec(any::<u8>(), 0..16)).prop_map(|(block_type, flags, data)| {
        ExtensionBlock { block_type, flags, data }
    })
}

fn metadata() -> impl Strategy<Value = BundleMetadata> {
    (
        bundle_id(),
        endpoint(),
        prop::option::of(endpoint()),
        prop::option::of(endpoint()),
        (any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>()),
        prop::collection::vec(ext_block(), 0..2),
        prop::collection::vec(action(), 0..3),
        prop::sample::subsequence(vec![Retention::ForwardPending, Retention::DispatchPending], 0..=2),
    )
        .prop_map(
            |(id, destination, report_to, previous_node, (lifetime, payload_length, arrival_time, update_seq), extension_blocks, current_actions, retention)| BundleMetadata {
                id,
                destination,
                report_to,
                previous_node,
                lifetime,
                payload_length,
                extension_blocks,
                arrival_time,
                current_actions,
                update_seq,
                retention,
            },
        )
}

fn bundle() -> impl Strategy<Value = Bundle> {
    (
        bundle_id(),
        endpoint(),
        prop::option::of(endpoint()),
        any::<u64>(),
        prop::option::of(endpoint()),
        prop::collection::vec(ext_block(), 0..2),
        prop::collection::vec(any::<u8>(), 0..64),
    )
        .prop_map(|(id, destination, report_to, lifetime, previous_node, extension_blocks, payload)| Bundle {
            id,
            destination,
            report_to,
            lifetime,
            previous_node,
            extension_blocks,
            payload,
        })
}

fn bundle_topic() -> impl Strategy<Value = Topic> {
    prop::sample::select(vec![
        Topic::BundleReceived,
        Topic::ForwardingRequired,
        Topic::BundleExpired,
        Topic::BundleDelivered,
    ])
}

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        (bundle_topic(), any::<u64>(), metadata()).prop_map(|(t, ts, md)| Event::bundle(t, ts, md)),
        (
            prop::sample::select(vec![Topic::BundleForwarded, Topic::ActionFailed]),
            any::<u64>(),
            metadata(),
            0..16usize,
            any::<String>()
        )
            .prop_map(|(t, ts, md, i, r)| Event::outcome(t, ts, md, i, r)),
        (
            prop::sample::select(vec![Topic::LinkUp, Topic::LinkDown]),
            any::<u64>(),
            name(),
            any::<String>()
        )
            .prop_map(|(t, ts, p, a)| Event::link(t, ts, &p, &a)),
        (any::<u64>(), bundle()).prop_map(|(ts, b)| Event {
            topic: Topic::Delivery,
            timestamp: ts,
            payload: EventPayload::Delivery { bundle: b },
        }),
    ]
}

fn role() -> impl Strategy<Value = Role> {
    prop::sample::select(vec![Role::Bpa, Role::Bdm, Role::App, Role::Monitor, Role::Cla])
}

pub fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (any::<u32>(), role(), any::<String>()).prop_map(|(v, role, node)| Message::Hello(Hello {
            protocol_version: v,
            role,
            node
        })),
        event().prop_map(Message::Event),
        (any::<String>(), "[a-z-]{1,24}", json()).prop_map(|(id, method, params)| Message::RpcRequest(RpcRequest {
            id,
            method,
            params
        })),
        (prop::option::of(any::<String>()), json()).prop_map(|(id, v)| Message::RpcResponse(RpcResponse {
            id,
            outcome: Ok(v)
        })),
        (prop::option::of(any::<String>()), "[a-z-]{1,16}", any::<String>()).prop_map(|(id, code, msg)| {
            Message::RpcResponse(RpcResponse {
                id,
                outcome: Err(RpcError::new(&code, msg)),
            })
        }),
        prop::collection::vec(prop::sample::select(Topic::BUS.to_vec()), 0..8)
            .prop_map(|topics| Message::Subscribe(Subscribe { topics })),
    ]
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    (any::<u64>(), message()).prop_map(|(seq, m)| Envelope::new(seq, m))
}
