//! Simulated multi-rank cluster: each rank is a thread, collectives are
//! rendezvous operations on shared state, and reductions use a fixed
//! combination tree so results are bit-identical regardless of arrival
//! order or rank count asymmetries.
//!
//! All payloads travel as byte vectors; typed helpers convert `f64` slices
//! losslessly. Every blocking wait carries a timeout; on expiry the whole
//! cluster is aborted and each rank returns an error naming the rank that
//! first timed out.

pub mod wire;

use byteorder::{ByteOrder, LittleEndian};
use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("collective timed out on rank {rank} after {after_ms} ms")]
    Timeout { rank: usize, after_ms: u64 },
    #[error("cluster aborted (first failure on rank {origin})")]
    Aborted { origin: usize },
    #[error("rank {0} panicked")]
    RankPanicked(usize),
    #[error("invalid peer rank {0} (cluster size {1})")]
    BadRank(usize, usize),
}

#[derive(PartialEq)]
enum Phase {
    Filling,
    Draining,
}

struct SlotState {
    contributions: Vec<Option<Vec<u8>>>,
    deposited: usize,
    drained: usize,
    phase: Phase,
}

struct Mailbox {
    queues: Mutex<HashMap<(usize, u64), VecDeque<Vec<u8>>>>,
    cv: Condvar,
}

struct Shared {
    n_ranks: usize,
    timeout: Duration,
    slot: Mutex<SlotState>,
    slot_cv: Condvar,
    mailboxes: Vec<Mailbox>,
    abort: AtomicBool,
    abort_origin: AtomicUsize,
}

impl Shared {
    fn raise_abort(&self, origin: usize) {
        if self
            .abort
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
        {
            self.abort_origin.store(origin, Ordering::SeqCst);
        }
        self.slot_cv.notify_all();
        for m in &self.mailboxes {
            m.cv.notify_all();
        }
    }

    fn abort_error(&self) -> ClusterError {
        ClusterError::Aborted {
            origin: self.abort_origin.load(Ordering::SeqCst),
        }
    }
}

/// Per-rank communicator handle.
pub struct Comm {
    rank: usize,
    shared: Arc<Shared>,
}

impl Comm {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.n_ranks
    }

    /// All-gather of opaque byte blobs; index `r` of the result is rank
    /// `r`'s contribution. This is the primitive every collective builds on.
    pub fn all_gather_bytes(&self, data: Vec<u8>) -> Result<Vec<Vec<u8>>, ClusterError> {
        let sh = &self.shared;
        let deadline = Instant::now() + sh.timeout;
        let mut st = sh.slot.lock().unwrap();
        // Phase 1: deposit once the slot is accepting contributions.
        loop {
            if sh.abort.load(Ordering::SeqCst) {
                return Err(sh.abort_error());
            }
            if st.phase == Phase::Filling && st.contributions[self.rank].is_none() {
                break;
            }
            st = self.wait(st, deadline)?;
        }
        st.contributions[self.rank] = Some(data);
        st.deposited += 1;
        if st.deposited == sh.n_ranks {
            st.phase = Phase::Draining;
            sh.slot_cv.notify_all();
        }
        // Phase 2: wait for everyone, then copy the full set out.
        loop {
            if sh.abort.load(Ordering::SeqCst) {
                return Err(sh.abort_error());
            }
            if st.phase == Phase::Draining {
                break;
            }
            st = self.wait(st, deadline)?;
        }
        let out: Vec<Vec<u8>> = st
            .contributions
            .iter()
            .map(|c| c.as_ref().unwrap().clone())
            .collect();
        st.drained += 1;
        if st.drained == sh.n_ranks {
            for c in &mut st.contributions {
                *c = None;
            }
            st.deposited = 0;
            st.drained = 0;
            st.phase = Phase::Filling;
            sh.slot_cv.notify_all();
        }
        Ok(out)
    }

    fn wait<'a>(
        &self,
        guard: std::sync::MutexGuard<'a, SlotState>,
        deadline: Instant,
    ) -> Result<std::sync::MutexGuard<'a, SlotState>, ClusterError> {
        let now = Instant::now();
        if now >= deadline {
            drop(guard);
            self.shared.raise_abort(self.rank);
            return Err(ClusterError::Timeout {
                rank: self.rank,
                after_ms: self.shared.timeout.as_millis() as u64,
            });
        }
        let (g, _) = self
            .shared
            .slot_cv
            .wait_timeout(guard, deadline - now)
            .unwrap();
        Ok(g)
    }

    pub fn barrier(&self) -> Result<(), ClusterError> {
        self.all_gather_bytes(Vec::new()).map(|_| ())
    }

    pub fn all_gather_f64(&self, data: &[f64]) -> Result<Vec<Vec<f64>>, ClusterError> {
        let blobs = self.all_gather_bytes(f64s_to_bytes(data))?;
        Ok(blobs.iter().map(|b| bytes_to_f64s(b)).collect())
    }

    pub fn all_gather_usize(&self, v: usize) -> Result<Vec<usize>, ClusterError> {
        let blobs = self.all_gather_bytes((v as u64).to_le_bytes().to_vec())?;
        Ok(blobs
            .iter()
            .map(|b| LittleEndian::read_u64(b) as usize)
            .collect())
    }

    /// Deterministic sum: every rank combines the gathered values with the
    /// same fixed stride-doubling tree.
    pub fn all_reduce_sum(&self, v: f64) -> Result<f64, ClusterError> {
        let all: Vec<f64> = self.all_gather_f64(&[v])?.iter().map(|x| x[0]).collect();
        Ok(tree_reduce(&all, |a, b| a + b))
    }

    pub fn all_reduce_max(&self, v: f64) -> Result<f64, ClusterError> {
        let all: Vec<f64> = self.all_gather_f64(&[v])?.iter().map(|x| x[0]).collect();
        Ok(tree_reduce(&all, f64::max))
    }

    pub fn all_reduce_min(&self, v: f64) -> Result<f64, ClusterError> {
        let all: Vec<f64> = self.all_gather_f64(&[v])?.iter().map(|x| x[0]).collect();
        Ok(tree_reduce(&all, f64::min))
    }

    /// Variable all-to-all: `send[d]` goes to rank `d`; the result's entry
    /// `s` is what rank `s` sent here.
    pub fn all_to_all_v(&self, send: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, ClusterError> {
        assert_eq!(send.len(), self.size());
        // Pack all destination blocks into one blob: per block a u64 length
        // prefix, then the payload.
        let mut blob = Vec::new();
        for block in &send {
            let mut len = [0u8; 8];
            LittleEndian::write_u64(&mut len, block.len() as u64);
            blob.extend_from_slice(&len);
            blob.extend_from_slice(&f64s_to_bytes(block));
        }
        let gathered = self.all_gather_bytes(blob)?;
        let mut recv = Vec::with_capacity(self.size());
        for src_blob in &gathered {
            // Walk to this rank's block inside src's blob.
            let mut off = 0usize;
            let mut block = Vec::new();
            for d in 0..self.size() {
                let len = LittleEndian::read_u64(&src_blob[off..off + 8]) as usize;
                off += 8;
                if d == self.rank {
                    block = bytes_to_f64s(&src_blob[off..off + 8 * len]);
                }
                off += 8 * len;
            }
            recv.push(block);
        }
        Ok(recv)
    }

    /// Non-blocking tagged point-to-point send.
    pub fn send(&self, dst: usize, tag: u64, data: &[f64]) -> Result<(), ClusterError> {
        if dst >= self.size() {
            return Err(ClusterError::BadRank(dst, self.size()));
        }
        if self.shared.abort.load(Ordering::SeqCst) {
            return Err(self.shared.abort_error());
        }
        let mb = &self.shared.mailboxes[dst];
        mb.queues
            .lock()
            .unwrap()
            .entry((self.rank, tag))
            .or_default()
            .push_back(f64s_to_bytes(data));
        mb.cv.notify_all();
        Ok(())
    }

    /// Blocking tagged receive from a specific source rank.
    pub fn recv(&self, src: usize, tag: u64) -> Result<Vec<f64>, ClusterError> {
        if src >= self.size() {
            return Err(ClusterError::BadRank(src, self.size()));
        }
        let sh = &self.shared;
        let mb = &sh.mailboxes[self.rank];
        let deadline = Instant::now() + sh.timeout;
        let mut q = mb.queues.lock().unwrap();
        loop {
            if sh.abort.load(Ordering::SeqCst) {
                return Err(sh.abort_error());
            }
            if let Some(dq) = q.get_mut(&(src, tag)) {
                if let Some(msg) = dq.pop_front() {
                    return Ok(bytes_to_f64s(&msg));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                drop(q);
                sh.raise_abort(self.rank);
                return Err(ClusterError::Timeout {
                    rank: self.rank,
                    after_ms: sh.timeout.as_millis() as u64,
                });
            }
            let (g, _) = mb.cv.wait_timeout(q, deadline - now).unwrap();
            q = g;
        }
    }
}

/// Fixed stride-doubling combination tree over rank-ordered values.
pub fn tree_reduce(values: &[f64], op: impl Fn(f64, f64) -> f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    let mut stride = 1;
    while stride < v.len() {
        let mut i = 0;
        while i + stride < v.len() {
            v[i] = op(v[i], v[i + stride]);
            i += 2 * stride;
        }
        stride *= 2;
    }
    v[0]
}

fn f64s_to_bytes(data: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; data.len() * 8];
    LittleEndian::write_f64_into(data, &mut out);
    out
}

fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    assert_eq!(bytes.len() % 8, 0);
    let mut out = vec![0.0; bytes.len() / 8];
    LittleEndian::read_f64_into(bytes, &mut out);
    out
}

/// Run `f` on `n_ranks` simulated ranks and collect the per-rank results
/// in rank order.
pub fn run_cluster<T, F>(
    n_ranks: usize,
    timeout: Duration,
    f: F,
) -> Vec<Result<T, ClusterError>>
where
    T: Send,
    F: Fn(Comm) -> Result<T, ClusterError> + Sync,
{
    assert!(n_ranks >= 1);
    let shared = Arc::new(Shared {
        n_ranks,
        timeout,
        slot: Mutex::new(SlotState {
            contributions: vec![None; n_ranks],
            deposited: 0,
            drained: 0,
            phase: Phase::Filling,
        }),
        slot_cv: Condvar::new(),
        mailboxes: (0..n_ranks)
            .map(|_| Mailbox {
                queues: Mutex::new(HashMap::new()),
                cv: Condvar::new(),
            })
            .collect(),
        abort: AtomicBool::new(false),
        abort_origin: AtomicUsize::new(usize::MAX),
    });
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_ranks)
            .map(|rank| {
                let shared = Arc::clone(&shared);
                let f = &f;
                scope.spawn(move || f(Comm { rank, shared }))
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| match h.join() {
                Ok(res) => res,
                Err(_) => {
                    shared.raise_abort(rank);
                    Err(ClusterError::RankPanicked(rank))
                }
            })
            .collect()
    })
}

/// Like [`run_cluster`] but fails if any rank failed.
pub fn run_cluster_all<T, F>(
    n_ranks: usize,
    timeout: Duration,
    f: F,
) -> Result<Vec<T>, ClusterError>
where
    T: Send,
    F: Fn(Comm) -> Result<T, ClusterError> + Sync,
{
    run_cluster(n_ranks, timeout, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gather_orders_by_rank() {
        let out = run_cluster_all(4, DEFAULT_TIMEOUT, |c| {
            c.all_gather_f64(&[c.rank() as f64 * 10.0])
        })
        .unwrap();
        for ranks in out {
            let flat: Vec<f64> = ranks.iter().map(|v| v[0]).collect();
            assert_eq!(flat, vec![0.0, 10.0, 20.0, 30.0]);
        }
    }

    #[test]
    fn repeated_collectives_do_not_cross() {
        let out = run_cluster_all(3, DEFAULT_TIMEOUT, |c| {
            let mut sums = Vec::new();
            for round in 0..50 {
                sums.push(c.all_reduce_sum((c.rank() + round) as f64)?);
            }
            Ok(sums)
        })
        .unwrap();
        for sums in &out {
            for (round, &s) in sums.iter().enumerate() {
                assert_eq!(s, (3 * round + 3) as f64);
            }
        }
    }

    #[test]
    fn reduce_is_identical_across_ranks() {
        // Values chosen so naive left-to-right and tree orders differ in
        // the last ulp; all ranks must still agree exactly.
        let vals = [1e16, 1.0, -1e16, 1.0, 3.0, 7.0, 1e-3];
        let out = run_cluster_all(7, DEFAULT_TIMEOUT, |c| {
            c.all_reduce_sum(vals[c.rank()])
        })
        .unwrap();
        for w in out.windows(2) {
            assert_eq!(w[0].to_bits(), w[1].to_bits());
        }
        assert_eq!(out[0], tree_reduce(&vals, |a, b| a + b));
    }

    #[test]
    fn all_to_all_v_roundtrip() {
        let out = run_cluster_all(3, DEFAULT_TIMEOUT, |c| {
            // Rank r sends [r*10 + d; d+1] to destination d.
            let send: Vec<Vec<f64>> = (0..3)
                .map(|d| vec![(c.rank() * 10 + d) as f64; d + 1])
                .collect();
            c.all_to_all_v(send)
        })
        .unwrap();
        for (rank, recv) in out.iter().enumerate() {
            for (src, block) in recv.iter().enumerate() {
                assert_eq!(block.len(), rank + 1);
                assert!(block.iter().all(|&x| x == (src * 10 + rank) as f64));
            }
        }
    }

    #[test]
    fn p2p_tags_keep_streams_separate() {
        let out = run_cluster_all(2, DEFAULT_TIMEOUT, |c| {
            if c.rank() == 0 {
                c.send(1, 7, &[1.0, 2.0])?;
                c.send(1, 9, &[3.0])?;
                Ok(Vec::new())
            } else {
                // Receive in the opposite order of sending.
                let b = c.recv(0, 9)?;
                let a = c.recv(0, 7)?;
                Ok(vec![a, b])
            }
        })
        .unwrap();
        assert_eq!(out[1], vec![vec![1.0, 2.0], vec![3.0]]);
    }

    #[test]
    fn missing_peer_deadlock_is_detected() {
        let results = run_cluster(2, Duration::from_millis(200), |c| {
            if c.rank() == 0 {
                // Rank 1 never sends: this recv must time out, and the
                // barrier on rank 1 must observe the abort.
                c.recv(1, 0)?;
            }
            c.barrier()
        });
        assert!(matches!(
            results[0],
            Err(ClusterError::Timeout { rank: 0, .. })
        ));
        assert!(matches!(
            results[1],
            Err(ClusterError::Aborted { origin: 0 }) | Err(ClusterError::Timeout { .. })
        ));
    }

    #[test]
    fn single_rank_cluster_works() {
        let out = run_cluster_all(1, DEFAULT_TIMEOUT, |c| {
            c.barrier()?;
            c.all_reduce_max(5.0)
        })
        .unwrap();
        assert_eq!(out, vec![5.0]);
    }
}
