//! Section timers and per-element cost attribution.
//!
//! The solver brackets its three hot loops (element volume work, side flux
//! work, modal projection work) with a [`TimerSet`]. Measured section times
//! are then spread over the local elements: element time uniformly over all
//! elements, modal time uniformly over the modal (non-hex) elements, and
//! side time via the side-to-element table onto each side's master element.
//!
//! Timers read the per-thread CPU clock, not wall time: simulated ranks are
//! threads that may share cores, and scheduling gaps must not show up as
//! element cost.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TimingError {
    #[error("modal section time {0} s recorded but no modal elements exist")]
    ModalTimeWithoutModalElems(f64),
    #[error("side master index {index} out of range for {n_elems} elements")]
    SideMasterOutOfRange { index: usize, n_elems: usize },
    #[error("cost vector length mismatch: {got} vs {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// The three instrumented sections of a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Section {
    /// Per-element volume kernels.
    ElemWork = 0,
    /// Per-side flux kernels.
    SideWork = 1,
    /// Modal projection / reconstruction.
    ModalWork = 2,
}

pub const N_SECTIONS: usize = 3;

/// CPU time consumed by the calling thread, in seconds.
pub fn thread_cpu_time_s() -> f64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime(CLOCK_THREAD_CPUTIME_ID) failed");
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

/// Accumulating stopwatch over the three sections. At most one section may
/// be active at a time.
#[derive(Debug, Clone, Default)]
pub struct TimerSet {
    totals: [f64; N_SECTIONS],
    active: Option<(Section, f64)>,
}

impl TimerSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, section: Section) {
        assert!(
            self.active.is_none(),
            "timer section started while {:?} is active",
            self.active.unwrap().0
        );
        self.active = Some((section, thread_cpu_time_s()));
    }

    pub fn stop(&mut self, section: Section) {
        let (active, t0) = self.active.take().expect("stop without start");
        assert_eq!(active, section, "stopped section differs from started one");
        self.totals[section as usize] += thread_cpu_time_s() - t0;
    }

    /// Run `f` inside the given section.
    pub fn section<T>(&mut self, section: Section, f: impl FnOnce() -> T) -> T {
        self.start(section);
        let out = f();
        self.stop(section);
        out
    }

    pub fn total(&self, section: Section) -> f64 {
        self.totals[section as usize]
    }

    pub fn totals(&self) -> [f64; N_SECTIONS] {
        self.totals
    }

    pub fn sum(&self) -> f64 {
        self.totals.iter().sum()
    }

    pub fn reset(&mut self) {
        assert!(self.active.is_none(), "reset while a section is active");
        self.totals = [0.0; N_SECTIONS];
    }

    /// Inject section totals directly (tests, replay).
    pub fn with_totals(totals: [f64; N_SECTIONS]) -> Self {
        TimerSet {
            totals,
            active: None,
        }
    }
}

/// Spread measured section times onto elements.
///
/// `is_modal[e]` marks elements carrying modal work; `side_masters[s]` is
/// the local element owning side `s`. Sides and modal work are attributed
/// uniformly within their section; the sum over all elements equals the
/// sum of the section totals exactly up to rounding.
pub fn attribute_costs(
    timers: &TimerSet,
    is_modal: &[bool],
    side_masters: &[usize],
) -> Result<Vec<f64>, TimingError> {
    let n_elems = is_modal.len();
    let n_modal = is_modal.iter().filter(|&&m| m).count();
    let t_elem = timers.total(Section::ElemWork);
    let t_side = timers.total(Section::SideWork);
    let t_modal = timers.total(Section::ModalWork);

    if n_modal == 0 && t_modal > 0.0 {
        return Err(TimingError::ModalTimeWithoutModalElems(t_modal));
    }
    let mut costs = vec![0.0; n_elems];
    if n_elems == 0 {
        return Ok(costs);
    }
    let per_elem = t_elem / n_elems as f64;
    for c in &mut costs {
        *c += per_elem;
    }
    if n_modal > 0 {
        let per_modal = t_modal / n_modal as f64;
        for (c, &m) in costs.iter_mut().zip(is_modal) {
            if m {
                *c += per_modal;
            }
        }
    }
    if !side_masters.is_empty() {
        let per_side = t_side / side_masters.len() as f64;
        for &m in side_masters {
            if m >= n_elems {
                return Err(TimingError::SideMasterOutOfRange {
                    index: m,
                    n_elems,
                });
            }
            costs[m] += per_side;
        }
    } else {
        // A rank can own elements while mastering none of their sides; the
        // side-loop time it still spent must not vanish from the books.
        let per_elem = t_side / n_elems as f64;
        for c in &mut costs {
            *c += per_elem;
        }
    }
    Ok(costs)
}

/// Exponential smoothing of per-element costs across measurement windows.
#[derive(Debug, Clone)]
pub struct CostSmoother {
    /// Weight of the fresh measurement; 1.0 disables smoothing.
    pub weight: f64,
    state: Option<Vec<f64>>,
}

impl CostSmoother {
    pub fn new(weight: f64) -> Self {
        assert!((0.0..=1.0).contains(&weight) && weight > 0.0);
        CostSmoother {
            weight,
            state: None,
        }
    }

    /// Fold in a fresh measurement and return the smoothed costs.
    pub fn update(&mut self, fresh: &[f64]) -> Result<&[f64], TimingError> {
        match &mut self.state {
            None => self.state = Some(fresh.to_vec()),
            Some(s) => {
                if s.len() != fresh.len() {
                    return Err(TimingError::LengthMismatch {
                        got: fresh.len(),
                        expected: s.len(),
                    });
                }
                for (old, &f) in s.iter_mut().zip(fresh) {
                    *old = self.weight * f + (1.0 - self.weight) * *old;
                }
            }
        }
        Ok(self.state.as_deref().unwrap())
    }

    /// Replace the state wholesale (after elements moved between ranks the
    /// old per-element history no longer lines up).
    pub fn reset_to(&mut self, costs: &[f64]) {
        self.state = Some(costs.to_vec());
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn current(&self) -> Option<&[f64]> {
        self.state.as_deref()
    }
}

/// Append per-element costs as CSV rows `window,elem,cost`.
pub fn write_costs_csv<W: std::io::Write>(
    mut w: W,
    window: usize,
    costs: &[f64],
) -> std::io::Result<()> {
    for (i, c) in costs.iter().enumerate() {
        writeln!(w, "{window},{i},{c:.9e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_clock_is_monotone() {
        let a = thread_cpu_time_s();
        let mut acc = 0.0f64;
        for i in 0..200_000 {
            acc += (i as f64).sqrt();
        }
        std::hint::black_box(acc);
        let b = thread_cpu_time_s();
        assert!(b >= a);
    }

    #[test]
    fn timer_accumulates_only_active_section() {
        let mut t = TimerSet::new();
        t.section(Section::ElemWork, || {
            let mut acc = 0.0f64;
            for i in 0..100_000 {
                acc += (i as f64).sin();
            }
            std::hint::black_box(acc);
        });
        assert!(t.total(Section::ElemWork) > 0.0);
        assert_eq!(t.total(Section::SideWork), 0.0);
        assert_eq!(t.total(Section::ModalWork), 0.0);
    }

    /// Hand-computed fixture: totals (10, 6, 4) over 5 elements of which
    /// elements 1 and 3 are modal, and 3 sides mastered by (0, 0, 1).
    /// Element share 10/5 = 2 each; side share 6/3 = 2 per side; modal
    /// share 4/2 = 2 per modal element. Expected (6, 6, 2, 4, 2).
    #[test]
    fn attribution_fixture() {
        let t = TimerSet::with_totals([10.0, 6.0, 4.0]);
        let is_modal = [false, true, false, true, false];
        let masters = [0, 0, 1];
        let costs = attribute_costs(&t, &is_modal, &masters).unwrap();
        assert_eq!(costs, vec![6.0, 6.0, 2.0, 4.0, 2.0]);
    }

    #[test]
    fn attribution_conserves_total() {
        let t = TimerSet::with_totals([3.7, 1.9, 2.4]);
        let is_modal = [true, false, true, true, false, false, true];
        let masters = [0, 1, 1, 2, 6, 5, 5, 0];
        let costs = attribute_costs(&t, &is_modal, &masters).unwrap();
        let sum: f64 = costs.iter().sum();
        assert!((sum - t.sum()).abs() < 1e-12 * t.sum());
        assert!(costs.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn modal_time_without_modal_elems_is_error() {
        let t = TimerSet::with_totals([1.0, 0.0, 0.5]);
        let err = attribute_costs(&t, &[false, false], &[]).unwrap_err();
        assert_eq!(err, TimingError::ModalTimeWithoutModalElems(0.5));
    }

    #[test]
    fn smoother_halves_towards_fresh() {
        let mut s = CostSmoother::new(0.5);
        assert_eq!(s.update(&[4.0, 0.0]).unwrap(), &[4.0, 0.0]);
        assert_eq!(s.update(&[0.0, 2.0]).unwrap(), &[2.0, 1.0]);
        assert_eq!(s.update(&[0.0, 2.0]).unwrap(), &[1.0, 1.5]);
    }

    #[test]
    fn smoother_rejects_length_change() {
        let mut s = CostSmoother::new(0.5);
        s.update(&[1.0]).unwrap();
        assert!(matches!(
            s.update(&[1.0, 2.0]),
            Err(TimingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_costs_csv(&mut buf, 3, &[1.0, 0.5]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("3,0,1.0"));
        assert_eq!(text.lines().count(), 2);
    }
}
