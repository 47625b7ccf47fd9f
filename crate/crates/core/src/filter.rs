//! Window-based tracking loop and the scalar error-state Kalman update.
//!
//! Per window: one prediction to the window's central time, one projection
//! of the visible map segments, one tessellation-grid rebuild, then a
//! matched scalar update per event. The innovation is the signed pixel
//! distance to the matched line; each update costs a handful of 3×3 block
//! products because the measurement row is nonzero only in the position and
//! orientation blocks.

use std::time::Instant;

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{
    line_jacobians, visible_segments_into, CameraCalib, Event, InnovationRow, LineJacobians,
    ProjectionMode, Pose, Segment3D, VisibleLine,
};
use crate::matcher::{match_event, rebuild_grid, should_skip, MatcherConfig, TessellationGrid};
use crate::motion::{
    build_process_noise, propagate_covariance, transition_jacobian, BlockCov, BlockVec,
    FilterState, NoiseParams, RotationRepr,
};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("innovation variance is not positive at window {window} (covariance corrupted)")]
    NonPositiveInnovationVariance { window: u64 },
    #[error("filter diverged at window {window}: position covariance trace {trace:.3e} m²")]
    Diverged { window: u64, trace: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct WindowConfig {
    /// Temporal event-window size (µs).
    pub dt_us: i64,
    /// Measurement noise of the distance innovation (pixels).
    pub sigma_d: f64,
    /// Mahalanobis gate multiplier.
    pub n_sigma: f64,
    /// Differentiate the 1/√(a²+b²) normalizer in the measurement Jacobian.
    pub full_normalizer: bool,
    /// Re-project segments and rebuild the grid every k applied updates
    /// inside a window (0 keeps the single projection at the window center).
    pub reproject_every: u32,
    /// Divergence bound on the position covariance trace (m²).
    pub divergence_trace: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            dt_us: 100,
            sigma_d: 3.5,
            n_sigma: 2.0,
            full_normalizer: true,
            reproject_every: 0,
            divergence_trace: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    Gated,
}

/// Scalar Kalman update with the Mahalanobis compatibility gate.
///
/// `S = J P Jᵀ + σ_d²`; the event is rejected when `z²/S ≥ n_σ²`. Otherwise
/// `k = P Jᵀ / S`, the state moves by `k·z` (right-plus on orientation), and
/// `P ← P − k S kᵀ` re-symmetrized.
pub fn update_event<R: RotationRepr>(
    state: &mut FilterState<R>,
    cov: &mut BlockCov,
    z: f64,
    row: &InnovationRow,
    sigma_d: f64,
    n_sigma: f64,
) -> Result<UpdateOutcome, TrackError> {
    let n = cov.n_blocks();
    let jp = row.j_pos;
    let jr = row.j_rot;
    let mut t = [Vector3::zeros(); 6];
    for i in 0..n {
        t[i] = cov.block(i, 0) * jp + cov.block(i, 1) * jr;
    }
    let s = jp.dot(&t[0]) + jr.dot(&t[1]) + sigma_d * sigma_d;
    if !(s > 0.0) {
        return Err(TrackError::NonPositiveInnovationVariance { window: 0 });
    }
    if z * z >= n_sigma * n_sigma * s {
        return Ok(UpdateOutcome::Gated);
    }
    let inv_s = 1.0 / s;
    let mut delta = BlockVec::zeros(state.model());
    for (i, ti) in t.iter().enumerate().take(n) {
        delta.set_block(i, ti * (inv_s * z));
    }
    state.apply_error(&delta);
    // P ← P − (t tᵀ)/S on the upper triangle, mirrored below.
    for i in 0..n {
        for j in i..n {
            *cov.block_mut(i, j) -= t[i] * t[j].transpose() * inv_s;
        }
    }
    cov.mirror_lower();
    Ok(UpdateOutcome::Applied)
}

/// Per-window bookkeeping for the run statistics.
#[derive(Clone, Copy, Debug, Default)]
pub struct WindowStats {
    pub received: u64,
    pub skipped: u64,
    pub matched: u64,
    pub gated: u64,
    pub updated: u64,
}

/// Aggregated counters and phase times for a tracking run.
#[derive(Clone, Debug, Default)]
pub struct RunStats {
    pub windows: u64,
    pub empty_windows: u64,
    pub received: u64,
    pub skipped: u64,
    pub matched: u64,
    pub gated: u64,
    pub updated: u64,
    pub predict_ns: u64,
    pub project_ns: u64,
    pub match_ns: u64,
    pub update_ns: u64,
    /// Per-event (match + update) cost samples in ns, kept when timing is on.
    pub event_cost_ns: Vec<u32>,
}

impl RunStats {
    fn absorb(&mut self, w: &WindowStats) {
        self.windows += 1;
        if w.received == 0 {
            self.empty_windows += 1;
        }
        self.received += w.received;
        self.skipped += w.skipped;
        self.matched += w.matched;
        self.gated += w.gated;
        self.updated += w.updated;
    }

    /// Fraction of incoming events that were not skipped, in percent.
    pub fn events_processed_pct(&self) -> f64 {
        if self.received == 0 {
            100.0
        } else {
            100.0 * (self.received - self.skipped) as f64 / self.received as f64
        }
    }

    pub fn phase_total_ns(&self) -> u64 {
        self.predict_ns + self.project_ns + self.match_ns + self.update_ns
    }
}

/// One pose record per window.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryRecord {
    pub t_us: i64,
    pub pos: Vector3<f64>,
    /// Orientation as (w, x, y, z).
    pub quat: [f64; 4],
    /// Standard deviations of the six pose error components.
    pub sigma: [f64; 6],
}

pub struct TrackerOutput {
    pub records: Vec<TrajectoryRecord>,
    pub stats: RunStats,
}

/// Single-filter tracking engine; one instance per thread.
pub struct Tracker<'a, R: RotationRepr> {
    map: &'a [Segment3D],
    calib: CameraCalib,
    mode: ProjectionMode,
    wcfg: WindowConfig,
    mcfg: MatcherConfig,
    noise: NoiseParams,
    pub state: FilterState<R>,
    pub cov: BlockCov,
    lines: Vec<VisibleLine>,
    line_jacs: Vec<LineJacobians>,
    grid: TessellationGrid,
    timing: bool,
    clock_us: f64,
    window_index: u64,
    pub stats: RunStats,
}

impl<'a, R: RotationRepr> Tracker<'a, R> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        map: &'a [Segment3D],
        calib: CameraCalib,
        mode: ProjectionMode,
        wcfg: WindowConfig,
        mcfg: MatcherConfig,
        noise: NoiseParams,
        state: FilterState<R>,
        cov: BlockCov,
        timing: bool,
    ) -> Self {
        let grid = TessellationGrid::new(
            mcfg.grid_m,
            mcfg.grid_n,
            calib.width as f64,
            calib.height as f64,
        );
        Self {
            map,
            calib,
            mode,
            wcfg,
            mcfg,
            noise,
            state,
            cov,
            lines: Vec::new(),
            line_jacs: Vec::new(),
            grid,
            timing,
            clock_us: f64::NEG_INFINITY,
            window_index: 0,
            stats: RunStats::default(),
        }
    }

    fn instrumented(&self) -> bool {
        self.timing || self.mcfg.skip_lag_us.is_some()
    }

    fn project_and_grid(&mut self) {
        let pose = Pose {
            pos: self.state.pos,
            rot: self.state.rotation_matrix(),
        };
        visible_segments_into(self.map, &pose, self.mode, &self.calib, &mut self.lines);
        self.line_jacs.clear();
        for vl in &self.lines {
            let seg = &self.map[vl.proj.seg_id as usize];
            self.line_jacs
                .push(line_jacobians(seg, &pose, self.mode, &self.calib, &vl.proj));
        }
        rebuild_grid(&mut self.grid, &self.lines, &self.mcfg);
    }

    /// Runs one event window ending the prediction at its central time `t0`.
    /// Events must lie inside the window and be time-ordered.
    pub fn process_window(&mut self, t0_us: i64, events: &[Event]) -> Result<WindowStats, TrackError> {
        let mut w = WindowStats {
            received: events.len() as u64,
            ..Default::default()
        };
        let instrument = self.instrumented();
        let t_begin = instrument.then(Instant::now);

        let dt = (t0_us - self.state.stamp_us) as f64 * 1e-6;
        if dt > 0.0 {
            self.state = self.state.predict(dt);
            let f = transition_jacobian(&self.state, dt);
            let q = build_process_noise(&self.noise, dt, self.state.model());
            propagate_covariance(&mut self.cov, &f, &q);
        }
        let t_predicted = instrument.then(Instant::now);

        self.project_and_grid();
        let t_projected = instrument.then(Instant::now);

        if let (Some(b), Some(p), Some(j)) = (t_begin, t_predicted, t_projected) {
            self.stats.predict_ns += (p - b).as_nanos() as u64;
            self.stats.project_ns += (j - p).as_nanos() as u64;
            if self.mcfg.skip_lag_us.is_some() {
                let window_start = t0_us as f64 - self.wcfg.dt_us as f64 * 0.5;
                self.clock_us = self.clock_us.max(window_start) + (j - b).as_secs_f64() * 1e6;
            }
        }

        let mut since_reproject = 0u32;
        let mut prev = t_projected;
        for ev in events {
            if should_skip(ev.t_us as f64, self.clock_us, &self.mcfg) {
                w.skipped += 1;
                continue;
            }
            let matched = match_event(ev.u, ev.v, &self.grid, &self.lines, &self.mcfg);
            let t_matched = instrument.then(Instant::now);
            let mut t_updated = t_matched;
            if let Some((idx, z)) = matched {
                w.matched += 1;
                let d_z = crate::camera::innovation_row(
                    ev.u,
                    ev.v,
                    &self.lines[idx as usize].proj,
                    &self.line_jacs[idx as usize],
                    self.wcfg.full_normalizer,
                )
                .expect("registered lines are non-degenerate")
                .1;
                // The measurement row is the sensitivity of the predicted
                // line position along the event's normal, which is minus the
                // sensitivity of z at fixed event: moving the state toward
                // the event shrinks z.
                let row = InnovationRow {
                    j_pos: -d_z.j_pos,
                    j_rot: -d_z.j_rot,
                };
                match update_event(
                    &mut self.state,
                    &mut self.cov,
                    z,
                    &row,
                    self.wcfg.sigma_d,
                    self.wcfg.n_sigma,
                ) {
                    Ok(UpdateOutcome::Applied) => {
                        w.updated += 1;
                        since_reproject += 1;
                        if self.wcfg.reproject_every > 0
                            && since_reproject >= self.wcfg.reproject_every
                        {
                            since_reproject = 0;
                            self.project_and_grid();
                        }
                    }
                    Ok(UpdateOutcome::Gated) => w.gated += 1,
                    Err(_) => {
                        return Err(TrackError::NonPositiveInnovationVariance {
                            window: self.window_index,
                        })
                    }
                }
                t_updated = instrument.then(Instant::now);
            }
            if let (Some(p), Some(m), Some(u)) = (prev, t_matched, t_updated) {
                let match_ns = (m - p).as_nanos() as u64;
                let update_ns = (u - m).as_nanos() as u64;
                self.stats.match_ns += match_ns;
                self.stats.update_ns += update_ns;
                if self.timing {
                    self.stats.event_cost_ns.push((match_ns + update_ns) as u32);
                }
                if self.mcfg.skip_lag_us.is_some() {
                    self.clock_us = self.clock_us.max(ev.t_us as f64)
                        + (match_ns + update_ns) as f64 * 1e-3;
                }
                prev = t_updated;
            }
        }

        self.window_index += 1;
        self.stats.absorb(&w);
        Ok(w)
    }

    pub fn record(&self, t_us: i64) -> TrajectoryRecord {
        let q = self.state.rot.quaternion_wxyz();
        let diag = self.cov.diagonal();
        let mut sigma = [0.0; 6];
        for (k, s) in sigma.iter_mut().enumerate() {
            *s = diag[k].max(0.0).sqrt();
        }
        TrajectoryRecord {
            t_us,
            pos: self.state.pos,
            quat: q,
            sigma,
        }
    }

    pub fn diverged(&self) -> Option<f64> {
        let trace = self.cov.position_trace();
        (trace > self.wcfg.divergence_trace).then_some(trace)
    }
}

/// Drives the tracker over `duration_us / dt_us` consecutive windows,
/// emitting one trajectory record per window. Events must be undistorted,
/// inside the image, and sorted by timestamp.
#[allow(clippy::too_many_arguments)]
pub fn run_tracker<R: RotationRepr>(
    events: &[Event],
    t_start_us: i64,
    duration_us: i64,
    map: &[Segment3D],
    calib: &CameraCalib,
    mode: ProjectionMode,
    wcfg: WindowConfig,
    mcfg: MatcherConfig,
    noise: NoiseParams,
    init_state: FilterState<R>,
    init_cov: BlockCov,
    timing: bool,
) -> Result<TrackerOutput, TrackError> {
    let dt = wcfg.dt_us;
    assert!(dt > 0, "window size must be positive");
    let n_windows = ((duration_us + dt - 1) / dt).max(0) as u64;
    let mut tracker = Tracker::new(
        map, *calib, mode, wcfg, mcfg, noise, init_state, init_cov, timing,
    );
    let mut records = Vec::with_capacity(n_windows as usize);
    let mut idx = 0usize;
    // Ignore events before the start of tracking.
    while idx < events.len() && events[idx].t_us < t_start_us {
        idx += 1;
    }
    for k in 0..n_windows {
        let w_start = t_start_us + k as i64 * dt;
        let w_end = w_start + dt;
        let t0 = w_start + dt / 2;
        let lo = idx;
        while idx < events.len() && events[idx].t_us < w_end {
            idx += 1;
        }
        tracker.process_window(t0, &events[lo..idx]).map_err(|e| match e {
            TrackError::NonPositiveInnovationVariance { .. } => {
                TrackError::NonPositiveInnovationVariance { window: k }
            }
            other => other,
        })?;
        if let Some(trace) = tracker.diverged() {
            return Err(TrackError::Diverged { window: k, trace });
        }
        records.push(tracker.record(t0));
    }
    Ok(TrackerOutput {
        records,
        stats: tracker.stats,
    })
}
