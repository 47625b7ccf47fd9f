//! Trajectory evaluation: per-axis RMSE, orientation error decomposition,
//! and 2σ consistency coverage, with Monte Carlo aggregation over runs.
//!
//! Estimates are aligned to ground truth by nearest timestamp within half a
//! window. Orientation error is the rotation vector of `R_truthᵀ·R_est`;
//! the reported per-axis angles are the intrinsic Z-Y-X Euler angles
//! (φ about x, θ about y, ψ about z) of that error rotation.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::filter::TrajectoryRecord;
use crate::lie::log_so3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("estimate and ground-truth time ranges do not overlap")]
    NoOverlap,
    #[error("empty trajectory")]
    Empty,
}

fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

/// Intrinsic Z-Y-X Euler angles (φ, θ, ψ) of a rotation matrix.
pub fn euler_zyx(r: &Matrix3<f64>) -> Vector3<f64> {
    let theta = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let psi = r[(1, 0)].atan2(r[(0, 0)]);
    let phi = r[(2, 1)].atan2(r[(2, 2)]);
    Vector3::new(phi, theta, psi)
}

/// One aligned estimate/truth pair.
#[derive(Clone, Copy, Debug)]
pub struct AlignedError {
    pub t_us: i64,
    /// Position error per axis (m).
    pub pos: Vector3<f64>,
    /// Orientation error as a body-frame rotation vector (rad).
    pub rot_vec: Vector3<f64>,
    /// Orientation error as intrinsic Z-Y-X Euler angles (rad).
    pub euler: Vector3<f64>,
    /// Filter-reported standard deviations (position, orientation).
    pub sigma: [f64; 6],
}

/// Aligned error series of a single run.
#[derive(Clone, Debug)]
pub struct RunErrors {
    pub samples: Vec<AlignedError>,
}

/// Aligns an estimated trajectory to ground truth (nearest neighbor within
/// `window_us / 2`) and computes per-sample errors.
pub fn align_errors(
    estimate: &[TrajectoryRecord],
    truth: &[TrajectoryRecord],
    window_us: i64,
) -> Result<RunErrors, EvalError> {
    if estimate.is_empty() || truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let half = window_us / 2;
    let mut samples = Vec::with_capacity(estimate.len());
    for est in estimate {
        // Nearest truth record by timestamp.
        let idx = truth.partition_point(|r| r.t_us < est.t_us);
        let mut best: Option<&TrajectoryRecord> = None;
        for cand in [idx.checked_sub(1).and_then(|i| truth.get(i)), truth.get(idx)]
            .into_iter()
            .flatten()
        {
            if (cand.t_us - est.t_us).abs() <= half {
                best = match best {
                    Some(b) if (b.t_us - est.t_us).abs() <= (cand.t_us - est.t_us).abs() => {
                        Some(b)
                    }
                    _ => Some(cand),
                };
            }
        }
        let Some(gt) = best else {
            continue;
        };
        let r_truth = quat_to_matrix(&gt.quat);
        let r_est = quat_to_matrix(&est.quat);
        let err_mat = r_truth.transpose() * r_est;
        let rot_vec = log_so3(&err_mat).expect("error rotation is orthonormal");
        samples.push(AlignedError {
            t_us: est.t_us,
            pos: est.pos - gt.pos,
            rot_vec,
            euler: euler_zyx(&err_mat),
            sigma: est.sigma,
        });
    }
    if samples.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok(RunErrors { samples })
}

/// Evaluation summary in the shape of the benchmark tables: per-axis RMSE,
/// 2σ coverage, and optional throughput figures filled in by the caller.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub runs: usize,
    pub samples: usize,
    /// RMSE of x, y, z (m), averaged over runs.
    pub rmse_pos: [f64; 3],
    /// RMSE of φ, θ, ψ (rad), averaged over runs.
    pub rmse_rot: [f64; 3],
    /// Percentage of timesteps whose RMS error lies under the 2σ bound,
    /// per axis: x, y, z, θx, θy, θz.
    pub coverage_pct: [f64; 6],
    pub t_proc_mean_us: Option<f64>,
    pub n_events_pct: Option<f64>,
}

impl EvalReport {
    pub fn mean_position_rmse(&self) -> f64 {
        (self.rmse_pos[0] + self.rmse_pos[1] + self.rmse_pos[2]) / 3.0
    }
}

fn per_run_rmse(run: &RunErrors) -> ([f64; 3], [f64; 3]) {
    let n = run.samples.len() as f64;
    let mut pos = [0.0; 3];
    let mut rot = [0.0; 3];
    for s in &run.samples {
        for k in 0..3 {
            pos[k] += s.pos[k] * s.pos[k];
            rot[k] += s.euler[k] * s.euler[k];
        }
    }
    for k in 0..3 {
        pos[k] = (pos[k] / n).sqrt();
        rot[k] = (rot[k] / n).sqrt();
    }
    (pos, rot)
}

/// Aggregates Monte Carlo runs: RMSE is the mean of per-run RMSEs (so run
/// order is irrelevant); coverage compares the cross-run RMS error at each
/// timestep against the cross-run RMS 2σ bound.
pub fn aggregate(runs: &[RunErrors]) -> Result<EvalReport, EvalError> {
    if runs.is_empty() || runs.iter().any(|r| r.samples.is_empty()) {
        return Err(EvalError::Empty);
    }
    let mut rmse_pos = [0.0; 3];
    let mut rmse_rot = [0.0; 3];
    for run in runs {
        let (p, r) = per_run_rmse(run);
        for k in 0..3 {
            rmse_pos[k] += p[k] / runs.len() as f64;
            rmse_rot[k] += r[k] / runs.len() as f64;
        }
    }

    // Coverage over the timestamps common to all runs.
    let min_len = runs.iter().map(|r| r.samples.len()).min().unwrap();
    let mut covered = [0u64; 6];
    let mut total = 0u64;
    for i in 0..min_len {
        let t = runs[0].samples[i].t_us;
        if runs.iter().any(|r| r.samples[i].t_us != t) {
            continue;
        }
        total += 1;
        let mut err2 = [0.0f64; 6];
        let mut sig2 = [0.0f64; 6];
        for run in runs {
            let s = &run.samples[i];
            for k in 0..3 {
                err2[k] += s.pos[k] * s.pos[k];
                err2[3 + k] += s.rot_vec[k] * s.rot_vec[k];
            }
            for k in 0..6 {
                sig2[k] += s.sigma[k] * s.sigma[k];
            }
        }
        for k in 0..6 {
            let rms_err = (err2[k] / runs.len() as f64).sqrt();
            let rms_sig = (sig2[k] / runs.len() as f64).sqrt();
            if rms_err <= 2.0 * rms_sig {
                covered[k] += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::NoOverlap);
    }
    let mut coverage_pct = [0.0; 6];
    for k in 0..6 {
        coverage_pct[k] = 100.0 * covered[k] as f64 / total as f64;
    }
    Ok(EvalReport {
        runs: runs.len(),
        samples: runs.iter().map(|r| r.samples.len()).sum(),
        rmse_pos,
        rmse_rot,
        coverage_pct,
        t_proc_mean_us: None,
        n_events_pct: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::lie::exp_so3;

    fn record(t_us: i64, pos: Vector3<f64>, rot: &Matrix3<f64>, sigma: f64) -> TrajectoryRecord {
        let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
            *rot,
        ));
        TrajectoryRecord {
            t_us,
            pos,
            quat: [q.w, q.i, q.j, q.k],
            sigma: [sigma; 6],
        }
    }

    fn straight_run(n: usize, offset: Vector3<f64>, sigma: f64) -> (Vec<TrajectoryRecord>, Vec<TrajectoryRecord>) {
        let mut truth = Vec::new();
        let mut est = Vec::new();
        for i in 0..n {
            let t = i as i64 * 100;
            let pos = Vector3::new(0.001 * i as f64, 0.0, -0.2);
            let rot = exp_so3(&Vector3::new(0.0, 0.0, 0.001 * i as f64));
            truth.push(record(t, pos, &rot, 0.0));
            est.push(record(t, pos + offset, &rot, sigma));
        }
        (truth, est)
    }

    #[test]
    fn identical_trajectories_have_zero_error_full_coverage() {
        let (truth, est) = straight_run(100, Vector3::zeros(), 0.01);
        let run = align_errors(&est, &truth, 100).unwrap();
        let report = aggregate(&[run]).unwrap();
        for k in 0..3 {
            assert_eq!(report.rmse_pos[k], 0.0);
            assert_eq!(report.rmse_rot[k], 0.0);
        }
        for k in 0..6 {
            assert_eq!(report.coverage_pct[k], 100.0);
        }
    }

    #[test]
    fn constant_offset_gives_exact_rmse() {
        let (truth, est) = straight_run(50, Vector3::new(0.01, 0.0, 0.0), 0.02);
        let run = align_errors(&est, &truth, 100).unwrap();
        let report = aggregate(&[run]).unwrap();
        assert_relative_eq!(report.rmse_pos[0], 0.01, epsilon = 1e-15);
        assert_eq!(report.rmse_pos[1], 0.0);
        // 2σ bound = 0.04 > 0.01 error: full x coverage.
        assert_eq!(report.coverage_pct[0], 100.0);
    }

    #[test]
    fn rmse_invariant_under_run_reordering() {
        let (truth, est_a) = straight_run(50, Vector3::new(0.01, 0.0, 0.0), 0.02);
        let (_, est_b) = straight_run(50, Vector3::new(0.0, 0.02, 0.0), 0.02);
        let ra = align_errors(&est_a, &truth, 100).unwrap();
        let rb = align_errors(&est_b, &truth, 100).unwrap();
        let fwd = aggregate(&[ra.clone(), rb.clone()]).unwrap();
        let rev = aggregate(&[rb, ra]).unwrap();
        assert_eq!(fwd.rmse_pos, rev.rmse_pos);
        assert_eq!(fwd.coverage_pct, rev.coverage_pct);
    }

    #[test]
    fn disjoint_ranges_report_no_overlap() {
        let (truth, mut est) = straight_run(10, Vector3::zeros(), 0.01);
        for e in &mut est {
            e.t_us += 1_000_000;
        }
        assert!(matches!(
            align_errors(&est, &truth, 100),
            Err(EvalError::NoOverlap)
        ));
    }

    #[test]
    fn euler_of_small_z_rotation() {
        let e = euler_zyx(&exp_so3(&Vector3::new(0.0, 0.0, 0.1)));
        assert_relative_eq!(e.z, 0.1, epsilon = 1e-9);
        assert!(e.x.abs() < 1e-12 && e.y.abs() < 1e-12);
    }
}
