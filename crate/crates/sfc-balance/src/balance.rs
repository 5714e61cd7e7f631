//! Load balancing over the SFC-ordered element list: imbalance metrics,
//! contiguous repartitioning by per-element weights, and state
//! redistribution between partitions.
//!
//! Partitions are cut points into the element list, so every rank owns a
//! contiguous curve segment and redistribution reduces to interval
//! intersections between the old and new cuts.

use crate::cluster::{ClusterError, Comm};
use serde::Serialize;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("empty weight vector")]
    EmptyWeights,
    #[error("partition has {offsets} offsets for {ranks} ranks")]
    BadPartition { offsets: usize, ranks: usize },
    #[error("state length {got} does not match {elems} elements of slot {slot}")]
    StateLength { got: usize, elems: usize, slot: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Contiguous partition of `0..n` elements into rank segments.
/// `offsets` has `n_ranks + 1` entries, starts at 0, ends at n, and is
/// non-decreasing; rank r owns `offsets[r]..offsets[r+1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub offsets: Vec<usize>,
}

impl Partition {
    pub fn new(offsets: Vec<usize>) -> Self {
        assert!(offsets.len() >= 2);
        assert_eq!(offsets[0], 0);
        assert!(offsets.windows(2).all(|w| w[0] <= w[1]));
        Partition { offsets }
    }

    /// Even split of `n` elements over `n_ranks` (remainder spread over the
    /// leading ranks).
    pub fn even(n: usize, n_ranks: usize) -> Self {
        let mut offsets = Vec::with_capacity(n_ranks + 1);
        let base = n / n_ranks;
        let rem = n % n_ranks;
        offsets.push(0);
        for r in 0..n_ranks {
            offsets.push(offsets[r] + base + usize::from(r < rem));
        }
        Partition { offsets }
    }

    pub fn n_ranks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_elems(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, rank: usize) -> Range<usize> {
        self.offsets[rank]..self.offsets[rank + 1]
    }

    /// Per-rank load sums for the given element weights.
    pub fn loads(&self, weights: &[f64]) -> Vec<f64> {
        (0..self.n_ranks())
            .map(|r| weights[self.range(r)].iter().sum())
            .collect()
    }

    /// Largest per-rank load.
    pub fn bottleneck(&self, weights: &[f64]) -> f64 {
        self.loads(weights).into_iter().fold(0.0, f64::max)
    }
}

/// Max-over-mean load ratio; 1.0 is perfect. An all-zero (or empty) load
/// vector counts as perfectly balanced.
pub fn compute_imbalance(rank_loads: &[f64]) -> f64 {
    if rank_loads.is_empty() {
        return 1.0;
    }
    let sum: f64 = rank_loads.iter().sum();
    if sum <= 0.0 {
        return 1.0;
    }
    let mean = sum / rank_loads.len() as f64;
    let max = rank_loads.iter().fold(0.0f64, |a, &b| a.max(b));
    max / mean
}

/// Strictly above threshold triggers a rebalance.
pub fn should_rebalance(imbalance: f64, threshold: f64) -> bool {
    imbalance > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Prefix-sum cuts plus a boundary refinement pass.
    Greedy,
    /// Dynamic program minimizing the bottleneck load exactly.
    Exact,
}

/// Partition SFC-ordered element weights into contiguous rank segments.
pub fn repartition_sfc(
    weights: &[f64],
    n_ranks: usize,
    mode: PartitionMode,
) -> Result<Partition, BalanceError> {
    if weights.is_empty() {
        return Err(BalanceError::EmptyWeights);
    }
    assert!(n_ranks >= 1);
    Ok(match mode {
        PartitionMode::Greedy => greedy_partition(weights, n_ranks),
        PartitionMode::Exact => exact_partition(weights, n_ranks),
    })
}

fn prefix_sums(weights: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(weights.len() + 1);
    p.push(0.0);
    for &w in weights {
        p.push(p.last().unwrap() + w);
    }
    p
}

fn greedy_partition(weights: &[f64], n_ranks: usize) -> Partition {
    let n = weights.len();
    let prefix = prefix_sums(weights);
    let total = prefix[n];
    let mut offsets = vec![0usize; n_ranks + 1];
    offsets[n_ranks] = n;
    // Initial cuts: prefix sum closest to each ideal fraction.
    let mut lo = 0;
    for r in 1..n_ranks {
        let target = total * r as f64 / n_ranks as f64;
        let mut cut = lo;
        while cut < n && prefix[cut] < target {
            cut += 1;
        }
        if cut > lo && (prefix[cut] - target) > (target - prefix[cut - 1]) {
            cut -= 1;
        }
        offsets[r] = cut;
        lo = cut;
    }
    refine_boundaries(&prefix, &mut offsets);
    Partition::new(offsets)
}

/// Repeatedly shift single cut points while doing so lowers the larger of
/// the two adjacent segment loads.
fn refine_boundaries(prefix: &[f64], offsets: &mut [usize]) {
    let k = offsets.len() - 1;
    let seg = |offsets: &[usize], r: usize| prefix[offsets[r + 1]] - prefix[offsets[r]];
    let mut changed = true;
    let mut rounds = 0;
    while changed && rounds < 64 {
        changed = false;
        rounds += 1;
        for b in 1..k {
            loop {
                let left = seg(offsets, b - 1);
                let right = seg(offsets, b);
                let cur = left.max(right);
                // Try moving the cut towards the heavier side.
                let candidate = if left > right && offsets[b] > offsets[b - 1] {
                    offsets[b] - 1
                } else if right > left && offsets[b] < offsets[b + 1] {
                    offsets[b] + 1
                } else {
                    break;
                };
                let old = offsets[b];
                offsets[b] = candidate;
                let new_max = seg(offsets, b - 1).max(seg(offsets, b));
                if new_max < cur {
                    changed = true;
                } else {
                    offsets[b] = old;
                    break;
                }
            }
        }
    }
}

/// O(k n^2) dynamic program over prefix sums: minimal possible bottleneck
/// with r segments over the first i elements.
fn exact_partition(weights: &[f64], n_ranks: usize) -> Partition {
    let n = weights.len();
    let prefix = prefix_sums(weights);
    let seg = |j: usize, i: usize| prefix[i] - prefix[j];
    // best[r][i], cut[r][i]: last cut position achieving it.
    let mut best = vec![vec![f64::INFINITY; n + 1]; n_ranks + 1];
    let mut cut = vec![vec![0usize; n + 1]; n_ranks + 1];
    best[0][0] = 0.0;
    for r in 1..=n_ranks {
        for i in 0..=n {
            for j in 0..=i {
                if best[r - 1][j].is_finite() {
                    let cand = best[r - 1][j].max(seg(j, i));
                    if cand < best[r][i] {
                        best[r][i] = cand;
                        cut[r][i] = j;
                    }
                }
            }
        }
    }
    let mut offsets = vec![0usize; n_ranks + 1];
    offsets[n_ranks] = n;
    let mut i = n;
    for r in (1..n_ranks).rev() {
        i = cut[r + 1][i];
        offsets[r] = i;
    }
    Partition::new(offsets)
}

/// Reference bottleneck optimum by exhaustive cut enumeration. Exponential;
/// for oracle tests on small instances only.
pub fn brute_force_bottleneck(weights: &[f64], n_ranks: usize) -> f64 {
    fn rec(prefix: &[f64], start: usize, ranks_left: usize, n: usize) -> f64 {
        if ranks_left == 1 {
            return prefix[n] - prefix[start];
        }
        let mut best = f64::INFINITY;
        for cut in start..=n {
            let head = prefix[cut] - prefix[start];
            let rest = rec(prefix, cut, ranks_left - 1, n);
            best = best.min(head.max(rest));
        }
        best
    }
    let prefix = prefix_sums(weights);
    rec(&prefix, 0, n_ranks, weights.len())
}

/// One rank's send/receive layout for moving from `old` to `new` cuts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExchangePlan {
    pub rank: usize,
    /// Element ranges (global indices) sent to each destination rank.
    pub send: Vec<Range<usize>>,
    /// Element ranges received from each source rank.
    pub recv: Vec<Range<usize>>,
}

fn intersect(a: &Range<usize>, b: &Range<usize>) -> Range<usize> {
    let s = a.start.max(b.start);
    let e = a.end.min(b.end);
    if s >= e {
        0..0
    } else {
        s..e
    }
}

pub fn build_exchange_plan(old: &Partition, new: &Partition, rank: usize) -> ExchangePlan {
    assert_eq!(old.n_ranks(), new.n_ranks());
    assert_eq!(old.n_elems(), new.n_elems());
    let mine_old = old.range(rank);
    let mine_new = new.range(rank);
    let send = (0..old.n_ranks())
        .map(|d| intersect(&mine_old, &new.range(d)))
        .collect();
    let recv = (0..old.n_ranks())
        .map(|s| intersect(&old.range(s), &mine_new))
        .collect();
    ExchangePlan {
        rank,
        send,
        recv,
    }
}

/// Move per-element state (fixed `slot` values per element) from the old to
/// the new partition. Receives are assembled in ascending source-rank order,
/// which equals ascending SFC order because both partitions are contiguous.
/// On success returns the new local state; on failure the old state is
/// returned untouched alongside the error.
pub fn execute_exchange(
    comm: &Comm,
    old: &Partition,
    new: &Partition,
    slot: usize,
    u_local: &[f64],
) -> Result<Vec<f64>, BalanceError> {
    let rank = comm.rank();
    let mine_old = old.range(rank);
    if u_local.len() != mine_old.len() * slot {
        return Err(BalanceError::StateLength {
            got: u_local.len(),
            elems: mine_old.len(),
            slot,
        });
    }
    let plan = build_exchange_plan(old, new, rank);
    let send: Vec<Vec<f64>> = plan
        .send
        .iter()
        .map(|r| {
            if r.is_empty() {
                return Vec::new();
            }
            let lo = (r.start - mine_old.start) * slot;
            let hi = (r.end - mine_old.start) * slot;
            u_local[lo..hi].to_vec()
        })
        .collect();
    let recv = comm.all_to_all_v(send)?;
    let mut out = Vec::with_capacity(new.range(rank).len() * slot);
    for (src, block) in recv.iter().enumerate() {
        debug_assert_eq!(block.len(), plan.recv[src].len() * slot);
        out.extend_from_slice(block);
    }
    debug_assert_eq!(out.len(), new.range(rank).len() * slot);
    Ok(out)
}

/// Record of one rebalancing decision, for the event log.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceEvent {
    pub step: usize,
    pub imbalance_before: f64,
    pub imbalance_after: f64,
    pub moved_elements: usize,
    pub old_offsets: Vec<usize>,
    pub new_offsets: Vec<usize>,
}

/// Elements that change owner between two partitions.
pub fn moved_elements(old: &Partition, new: &Partition) -> usize {
    let mut moved = 0;
    for r in 0..old.n_ranks() {
        let kept = intersect(&old.range(r), &new.range(r)).len();
        moved += old.range(r).len() - kept;
    }
    moved
}
