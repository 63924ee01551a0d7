// SPDX-License-Identifier: Apache-2.0

mod common;

use proptest::prelude::*;

use bpa_dispatch::bdm::{earliest_arrival, ContactPlanEntry};
use common::{node, oracle, plan};

fn c(from: &str, to: &str, s: u64, e: u64, owlt: u64) -> ContactPlanEntry {
    ContactPlanEntry::new(from, to, s, e, owlt).unwrap()
}

#[test]
fn oracle_agrees_on_hand_built_plans() {
    let plans = vec![
        vec![c("A", "B", 10, 20, 0), c("B", "C", 15, 30, 0)],
        vec![c("A", "B", 10, 20, 0), c("B", "C", 5, 8, 0)],
        vec![c("A", "B", 0, 10, 5), c("A", "C", 0, 10, 1), c("C", "B", 0, 10, 1)],
        vec![c("A", "B", 0, 1, 0), c("B", "A", 2, 3, 0), c("A", "C", 4, 5, 0)],
    ];
    for p in plans {
        for t0 in [0, 5, 12] {
            let got = earliest_arrival(&p, "A", "C", t0).map(|r| (r.next_hop, r.arrival, r.hops));
            assert_eq!(got, oracle(&p, "A", "C", t0), "plan {p:?} t0 {t0}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force(p in plan(), src in node(), dst in node(), t0 in 0..=100u64) {
        let got = earliest_arrival(&p, src, dst, t0).map(|r| (r.next_hop, r.arrival, r.hops));
        prop_assert_eq!(got, oracle(&p, src, dst, t0));
    }

    #[test]
    fn arrival_never_improves_with_later_start(p in plan(), src in node(), dst in node(), t0 in 0..=100u64, dt in 0..=50u64) {
        let early = earliest_arrival(&p, src, dst, t0);
        let late = earliest_arrival(&p, src, dst, t0 + dt);
        if let (Some(e), Some(l)) = (&early, &late) {
            prop_assert!(l.arrival >= e.arrival);
        }
        // anything reachable later was reachable earlier
        if late.is_some() {
            prop_assert!(early.is_some());
        }
    }

    #[test]
    fn route_is_consistent(p in plan(), src in node(), dst in node(), t0 in 0..=100u64) {
        if let Some(r) = earliest_arrival(&p, src, dst, t0) {
            prop_assert!(r.arrival >= t0);
            if src != dst {
                let first = r.first_contact.unwrap();
                prop_assert_eq!(&first.from, src);
                prop_assert_eq!(&first.to, &r.next_hop);
                prop_assert!(r.departure >= t0 && r.departure >= first.start && r.departure <= first.end);
            }
        }
    }
}
