//! Randomized invariants for partitioning, exchange planning and cost
//! attribution.

use approx::assert_relative_eq;
use proptest::prelude::*;
use sfc_balance::balance::{
    build_exchange_plan, compute_imbalance, moved_elements, repartition_sfc, Partition,
    PartitionMode,
};
use sfc_balance::timing::{attribute_costs, TimerSet};

fn arb_weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, 1..40)
}

proptest! {
    #[test]
    fn partitions_are_valid_and_cover(weights in arb_weights(), k in 1usize..6) {
        for mode in [PartitionMode::Greedy, PartitionMode::Exact] {
            let p = repartition_sfc(&weights, k, mode).unwrap();
            prop_assert_eq!(p.n_ranks(), k);
            prop_assert_eq!(p.n_elems(), weights.len());
            let mut covered = 0;
            for r in 0..k {
                covered += p.range(r).len();
            }
            prop_assert_eq!(covered, weights.len());
        }
    }

    #[test]
    fn exact_never_worse_than_greedy(weights in arb_weights(), k in 1usize..6) {
        let g = repartition_sfc(&weights, k, PartitionMode::Greedy).unwrap();
        let e = repartition_sfc(&weights, k, PartitionMode::Exact).unwrap();
        prop_assert!(e.bottleneck(&weights) <= g.bottleneck(&weights) + 1e-12);
    }

    #[test]
    fn imbalance_at_least_one(weights in arb_weights(), k in 1usize..6) {
        let p = repartition_sfc(&weights, k, PartitionMode::Greedy).unwrap();
        let imb = compute_imbalance(&p.loads(&weights));
        prop_assert!(imb >= 1.0 - 1e-12);
    }

    #[test]
    fn exchange_plans_are_consistent(
        n in 1usize..64,
        k in 2usize..6,
        seed_old in prop::collection::vec(0usize..64, 5),
        seed_new in prop::collection::vec(0usize..64, 5),
    ) {
        let clamp = |cuts: &[usize], k: usize| {
            let mut c: Vec<usize> = cuts.iter().take(k - 1).map(|&x| x % (n + 1)).collect();
            c.sort_unstable();
            let mut offsets = vec![0];
            offsets.extend(c);
            offsets.push(n);
            Partition::new(offsets)
        };
        let old = clamp(&seed_old, k);
        let new = clamp(&seed_new, k);

        // Every element sent by some rank is received from that rank, and
        // each rank's receives reassemble exactly its new range.
        let mut sent_total = 0;
        let mut recv_total = 0;
        for rank in 0..k {
            let plan = build_exchange_plan(&old, &new, rank);
            for (dst, r) in plan.send.iter().enumerate() {
                sent_total += r.len();
                let peer = build_exchange_plan(&old, &new, dst);
                prop_assert_eq!(peer.recv[rank].clone(), r.clone());
            }
            let mut recvd: usize = plan.recv.iter().map(|r| r.len()).sum();
            prop_assert_eq!(recvd, new.range(rank).len());
            recv_total += std::mem::take(&mut recvd);
        }
        prop_assert_eq!(sent_total, n);
        prop_assert_eq!(recv_total, n);
        prop_assert!(moved_elements(&old, &new) <= n);
    }

    #[test]
    fn attribution_total_matches_sections(
        totals in prop::array::uniform3(0.0f64..5.0),
        flags in prop::collection::vec(any::<bool>(), 1..30),
        master_seed in prop::collection::vec(0usize..30, 0..60),
    ) {
        let n = flags.len();
        let mut totals = totals;
        if !flags.iter().any(|&m| m) {
            totals[2] = 0.0;
        }
        let masters: Vec<usize> = master_seed.iter().map(|&m| m % n).collect();
        let costs = attribute_costs(&TimerSet::with_totals(totals), &flags, &masters).unwrap();
        let sum: f64 = costs.iter().sum();
        assert_relative_eq!(sum, totals.iter().sum::<f64>(), max_relative = 1e-12, epsilon = 1e-15);
        prop_assert!(costs.iter().all(|&c| c >= 0.0));
    }
}
