// SPDX-License-Identifier: Apache-2.0

//! Contact plans and earliest-arrival next-hop selection.
//!
//! A bundle at node `n` at time `t` can use contact `(n -> m, [start, end], owlt)`
//! iff `t <= end`; it departs at `max(t, start)` and arrives at
//! `max(t, start) + owlt`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::bundle::{is_valid_node_name, Instant};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactPlanEntry {
    pub from: String,
    pub to: String,
    pub start: Instant,
    pub end: Instant,
    pub one_way_light_time: u64,
}

impl ContactPlanEntry {
    pub fn new(from: &str, to: &str, start: Instant, end: Instant, owlt: u64) -> Result<Self, PlanError> {
        let entry = ContactPlanEntry {
            from: from.to_string(),
            to: to.to_string(),
            start,
            end,
            one_way_light_time: owlt,
        };
        entry.validate()?;
        Ok(entry)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !is_valid_node_name(&self.from) || !is_valid_node_name(&self.to) {
            return Err(PlanError::Invalid(format!("bad node name in {self}")));
        }
        if self.from == self.to {
            return Err(PlanError::Invalid(format!("self contact {self}")));
        }
        if self.start >= self.end {
            return Err(PlanError::Invalid(format!("start must precede end in {self}")));
        }
        Ok(())
    }

    /// True while the contact window is open at `now`.
    pub fn is_active(&self, now: Instant) -> bool {
        self.start <= now && now <= self.end
    }

    /// Returns the contact shifted by `offset` milliseconds.
    pub fn shifted(&self, offset: u64) -> Self {
        ContactPlanEntry {
            start: self.start + offset,
            end: self.end + offset,
            ..self.clone()
        }
    }
}

impl fmt::Display for ContactPlanEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.from, self.to, self.start, self.end, self.one_way_light_time
        )
    }
}

#[derive(Error, Debug)]
pub enum PlanError {
    #[error("invalid contact: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses a plan file: one `from to start-ms end-ms [owlt-ms]` entry per
/// line; blank lines and `#` comments are ignored.
pub fn parse_plan(text: &str) -> Result<Vec<ContactPlanEntry>, PlanError> {
    let mut plan = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PlanError::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(err(format!("expected 4 or 5 fields, got {}", fields.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
        let owlt = match fields.get(4) {
            Some(s) => num(s)?,
            None => 0,
        };
        let entry = ContactPlanEntry::new(fields[0], fields[1], num(fields[2])?, num(fields[3])?, owlt)
            .map_err(|e| err(e.to_string()))?;
        plan.push(entry);
    }
    Ok(plan)
}

pub fn load_plan(path: &Path) -> Result<Vec<ContactPlanEntry>, PlanError> {
    parse_plan(&std::fs::read_to_string(path)?)
}

pub fn format_plan(plan: &[ContactPlanEntry]) -> String {
    plan.iter().map(|c| format!("{c}\n")).collect()
}

/// Best route found by [`earliest_arrival`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub next_hop: String,
    pub arrival: Instant,
    /// Number of contacts on the path; 0 for the identity route.
    pub hops: usize,
    /// When the bundle leaves the source on the first contact.
    pub departure: Instant,
    /// First contact of the path; `None` for the identity route.
    pub first_contact: Option<ContactPlanEntry>,
}

/// Next hop on a path minimizing arrival time at `dest` for a bundle at
/// `source` at `t0`. Ties are broken by fewer contacts, then by the
/// lexicographically smallest next hop, then by the earliest departure.
///
/// Bellman-Ford over hop counts, run separately per first contact: for a
/// fixed first contact, the arrival label at each node using at most `k`
/// contacts is monotone under extension, so round `k` yields the exact
/// optimum for paths of at most `k` contacts.
pub fn earliest_arrival(plan: &[ContactPlanEntry], source: &str, dest: &str, t0: Instant) -> Option<Route> {
    if source == dest {
        return Some(Route {
            next_hop: source.to_string(),
            arrival: t0,
            hops: 0,
            departure: t0,
            first_contact: None,
        });
    }
    let max_rounds = plan.len();
    // (arrival, hops, next hop, departure, first contact index)
    let mut best: Option<(Instant, usize, &str, Instant, usize)> = None;

    for (first_idx, first) in plan.iter().enumerate() {
        if first.from != source || t0 > first.end {
            continue;
        }
        let departure = t0.max(first.start);
        let mut labels: HashMap<&str, Instant> = HashMap::new();
        labels.insert(first.to.as_str(), departure + first.one_way_light_time);
        let mut found: Option<(Instant, usize)> = labels.get(dest).map(|&a| (a, 1));

        for round in 2..=max_rounds {
            let mut next = labels.clone();
            let mut changed = false;
            for c in plan {
                let Some(&at) = labels.get(c.from.as_str()) else { continue };
                if at > c.end {
                    continue;
                }
                let arrive = at.max(c.start) + c.one_way_light_time;
                let slot = next.entry(c.to.as_str()).or_insert(Instant::MAX);
                if arrive < *slot {
                    *slot = arrive;
                    changed = true;
                }
            }
            labels = next;
            if let Some(&a) = labels.get(dest) {
                if found.is_none_or(|(fa, _)| a < fa) {
                    found = Some((a, round));
                }
            }
            if !changed {
                break;
            }
        }

        if let Some((arrival, hops)) = found {
            let candidate = (arrival, hops, first.to.as_str(), departure, first_idx);
            let better = match best {
                None => true,
                Some(b) => (candidate.0, candidate.1, candidate.2, candidate.3) < (b.0, b.1, b.2, b.3),
            };
            if better {
                best = Some(candidate);
            }
        }
    }

    best.map(|(arrival, hops, next_hop, departure, idx)| Route {
        next_hop: next_hop.to_string(),
        arrival,
        hops,
        departure,
        first_contact: Some(plan[idx].clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(from: &str, to: &str, s: u64, e: u64) -> ContactPlanEntry {
        ContactPlanEntry::new(from, to, s, e, 0).unwrap()
    }

    #[test]
    fn two_hop_example() {
        let plan = vec![c("A", "B", 10, 20), c("B", "C", 15, 30)];
        let r = earliest_arrival(&plan, "A", "C", 5).unwrap();
        assert_eq!((r.next_hop.as_str(), r.arrival, r.hops), ("B", 15, 2));
        assert_eq!(r.departure, 10);
    }

    #[test]
    fn no_time_respecting_order() {
        let plan = vec![c("A", "B", 10, 20), c("B", "C", 5, 8)];
        assert!(earliest_arrival(&plan, "A", "C", 5).is_none());
    }

    #[test]
    fn identity_route() {
        let r = earliest_arrival(&[], "A", "A", 42).unwrap();
        assert_eq!((r.next_hop.as_str(), r.arrival, r.hops), ("A", 42, 0));
    }

    #[test]
    fn owlt_and_end_boundary() {
        let plan = vec![ContactPlanEntry::new("A", "B", 0, 10, 7).unwrap()];
        assert_eq!(earliest_arrival(&plan, "A", "B", 10).unwrap().arrival, 17);
        assert!(earliest_arrival(&plan, "A", "B", 11).is_none());
    }

    #[test]
    fn fewer_hops_wins_ties() {
        // direct contact and a two-hop path both arrive at 20
        let plan = vec![c("A", "Z", 20, 30), c("A", "B", 0, 5), c("B", "Z", 20, 30)];
        let r = earliest_arrival(&plan, "A", "Z", 0).unwrap();
        assert_eq!((r.next_hop.as_str(), r.arrival, r.hops), ("Z", 20, 1));
    }

    #[test]
    fn smaller_name_wins_remaining_ties() {
        let plan = vec![c("A", "C", 0, 5), c("A", "B", 0, 5), c("C", "Z", 10, 20), c("B", "Z", 10, 20)];
        let r = earliest_arrival(&plan, "A", "Z", 0).unwrap();
        assert_eq!(r.next_hop, "B");
    }

    #[test]
    fn hop_count_of_late_arrival_path_not_reused() {
        // A label that arrives earlier via more hops must not hide a shorter
        // path that reaches the same wait-bound arrival.
        let plan = vec![
            c("A", "B", 0, 100),
            c("B", "C", 0, 100),
            c("C", "D", 0, 100),
            c("A", "D", 5, 100),
            c("D", "Z", 50, 60),
        ];
        let r = earliest_arrival(&plan, "A", "Z", 0).unwrap();
        assert_eq!((r.arrival, r.hops), (50, 2));
        assert_eq!(r.next_hop, "D");
    }

    #[test]
    fn parse_plan_file() {
        let plan = parse_plan("# comment\nA B 10 20\n\nB C 15 30 5 # trailing\n").unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[1].one_way_light_time, 5);
        assert_eq!(parse_plan(&format_plan(&plan)).unwrap(), plan);
        assert!(parse_plan("A A 1 2").is_err());
        assert!(parse_plan("A B 5 5").is_err());
        assert!(parse_plan("A B x 5").is_err());
        assert!(parse_plan("A B 1").is_err());
    }
}
