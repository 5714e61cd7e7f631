//! Run records, the performance index, and scaling reports.

use serde::Serialize;
use std::io::Write;

/// Performance index: wall-clock seconds times ranks per DOF-stage update.
pub fn compute_pid(wall_s: f64, n_ranks: usize, n_dof: usize, steps: usize, stages: usize) -> f64 {
    wall_s * n_ranks as f64 / (n_dof as f64 * steps as f64 * stages as f64)
}

/// Outcome of one benchmark run; one CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub mode: String,
    pub n_ranks: usize,
    pub n_hex: usize,
    pub n_tet: usize,
    pub n_prism: usize,
    pub n_pyramid: usize,
    pub degree: usize,
    pub n_dof: usize,
    pub steps: usize,
    pub stages: usize,
    pub wall_s: f64,
    /// Sum of per-rank compute (CPU) seconds.
    pub simulated_s: f64,
    pub pid_s: f64,
    pub efficiency: f64,
    pub imbalance_before: f64,
    pub imbalance_after: f64,
    pub n_rebalances: usize,
}

pub const CSV_HEADER: &str = "run_id,mode,n_ranks,n_hex,n_tet,n_prism,n_pyramid,degree,n_dof,\
steps,stages,wall_s,simulated_s,pid_s,efficiency,imbalance_before,imbalance_after,n_rebalances";

pub fn write_csv<W: Write>(mut w: W, records: &[RunRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6},{:.6},{:.6},{}",
            r.run_id,
            r.mode,
            r.n_ranks,
            r.n_hex,
            r.n_tet,
            r.n_prism,
            r.n_pyramid,
            r.degree,
            r.n_dof,
            r.steps,
            r.stages,
            r.wall_s,
            r.simulated_s,
            r.pid_s,
            r.efficiency,
            r.imbalance_before,
            r.imbalance_after,
            r.n_rebalances
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScalingMode {
    /// Fixed total problem size.
    Strong,
    /// Fixed per-rank problem size.
    Weak,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingPoint {
    pub n_ranks: usize,
    pub wall_s: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub mode: ScalingMode,
    pub points: Vec<ScalingPoint>,
}

/// Build a scaling report from (ranks, mean wall seconds) samples, sorted
/// ascending by rank count. Efficiencies are normalized to the smallest
/// rank count, whose efficiency is exactly 1.0 by construction.
pub fn scaling_report(mode: ScalingMode, samples: &[(usize, f64)]) -> ScalingReport {
    assert!(!samples.is_empty());
    let mut s = samples.to_vec();
    s.sort_by_key(|&(r, _)| r);
    let (r0, t0) = s[0];
    let points = s
        .iter()
        .map(|&(r, t)| {
            let efficiency = if r == r0 && t == t0 {
                1.0
            } else {
                match mode {
                    // Strong: same total work, ideal time scales as 1/ranks.
                    ScalingMode::Strong => (t0 * r0 as f64) / (t * r as f64),
                    // Weak: same per-rank work, ideal time is constant.
                    ScalingMode::Weak => t0 / t,
                }
            };
            ScalingPoint {
                n_ranks: r,
                wall_s: t,
                efficiency,
            }
        })
        .collect();
    ScalingReport { mode, points }
}

/// Mean of repeated wall-time measurements.
pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pid_hand_value() {
        // 1 s wall, 1 rank, 1000 DOF, 10 steps, 5 stages -> 2.0e-5 s.
        assert_eq!(compute_pid(1.0, 1, 1000, 10, 5), 2.0e-5);
    }

    #[test]
    fn pid_scales_linearly_with_ranks() {
        assert_eq!(
            compute_pid(0.5, 4, 1000, 10, 5),
            4.0 * compute_pid(0.5, 1, 1000, 10, 5)
        );
    }

    #[test]
    fn scaling_baseline_is_exactly_one() {
        for mode in [ScalingMode::Strong, ScalingMode::Weak] {
            let rep = scaling_report(mode, &[(4, 0.37), (1, 1.11), (2, 0.6)]);
            assert_eq!(rep.points[0].n_ranks, 1);
            assert_eq!(rep.points[0].efficiency, 1.0);
            assert!(rep.points.windows(2).all(|w| w[0].n_ranks < w[1].n_ranks));
        }
    }

    #[test]
    fn strong_efficiency_formula() {
        // Perfect halving of time with doubled ranks -> efficiency 1.
        let rep = scaling_report(ScalingMode::Strong, &[(1, 1.0), (2, 0.5), (4, 0.5)]);
        assert!((rep.points[1].efficiency - 1.0).abs() < 1e-12);
        assert!((rep.points[2].efficiency - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weak_efficiency_formula() {
        let rep = scaling_report(ScalingMode::Weak, &[(1, 1.0), (4, 1.25)]);
        assert!((rep.points[1].efficiency - 0.8).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_shape() {
        let rec = RunRecord {
            run_id: "t1".into(),
            mode: "fixed".into(),
            n_ranks: 2,
            n_hex: 128,
            n_tet: 894,
            n_prism: 224,
            n_pyramid: 738,
            degree: 5,
            n_dof: 1000,
            steps: 10,
            stages: 5,
            wall_s: 1.0,
            simulated_s: 1.9,
            pid_s: compute_pid(1.0, 2, 1000, 10, 5),
            efficiency: 1.0,
            imbalance_before: 1.3,
            imbalance_after: 1.05,
            n_rebalances: 2,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("t1,fixed,2,128,894,224,738,5,1000,10,5,"));
    }
}
