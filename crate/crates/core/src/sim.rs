//! Synthetic ground-truth trajectories and event-stream generation.
//!
//! Two main motion sources: a hand-shake-style chirp whose frequency ramps
//! over the run, and a planar four-bar crank-rocker whose coupler carries
//! the tracked target through a high-acceleration closed curve. Events are
//! drawn along the projected map segments at the exact pose of their own
//! timestamp, with transverse Gaussian noise and a configurable fraction of
//! uniform outliers.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{
    clip_to_rect, distort_pixel, project_segment, CameraCalib, Event, Pose, ProjectionMode,
    Segment3D,
};
use crate::lie::{exp_so3, log_so3, right_jacobian};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("four-bar linkage has no assembly configuration at crank angle {angle:.4} rad")]
    NoAssembly { angle: f64 },
    #[error("dimensions do not form a Grashof crank-rocker: {reason}")]
    NotCrankRocker { reason: String },
}

/// Planar four-bar link lengths and the tracked point on the coupler.
///
/// The crank pivot sits at the origin, the rocker pivot at `(ground, 0)`.
/// The coupler point is expressed in the coupler frame: `along` metres from
/// the crank pin towards the rocker pin, `perp` metres to its left.
#[derive(Clone, Copy, Debug)]
pub struct FourBarDims {
    pub ground: f64,
    pub crank: f64,
    pub coupler: f64,
    pub rocker: f64,
    pub along: f64,
    pub perp: f64,
}

impl FourBarDims {
    /// Crank-rocker requires the crank to be the shortest link and the
    /// Grashof sum condition to hold.
    pub fn validate(&self) -> Result<(), SimError> {
        let links = [self.ground, self.crank, self.coupler, self.rocker];
        if links.iter().any(|&l| l <= 0.0) {
            return Err(SimError::NotCrankRocker {
                reason: "all links must have positive length".into(),
            });
        }
        let shortest = links.iter().cloned().fold(f64::INFINITY, f64::min);
        let longest = links.iter().cloned().fold(0.0f64, f64::max);
        let sum: f64 = links.iter().sum();
        if self.crank > shortest {
            return Err(SimError::NotCrankRocker {
                reason: "crank must be the shortest link".into(),
            });
        }
        if shortest + longest > sum - shortest - longest {
            return Err(SimError::NotCrankRocker {
                reason: "shortest + longest exceeds the sum of the other links".into(),
            });
        }
        Ok(())
    }
}

/// Defaults reconstructed to reach a ~4.7 cm peak-to-peak coupler-point
/// excursion with peak speed above 2.59 m/s and peak acceleration above
/// 253 m/s² when the crank turns at 950 rpm.
impl Default for FourBarDims {
    fn default() -> Self {
        Self {
            ground: 0.085,
            crank: 0.024,
            coupler: 0.075,
            rocker: 0.065,
            along: 0.045,
            perp: 0.040,
        }
    }
}

/// Pose of the coupler-mounted target frame in the mechanism plane.
#[derive(Clone, Copy, Debug)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    /// Sum of the link-length violations of the computed joint positions.
    pub closure_residual: f64,
}

/// Position analysis of the crank-rocker at a given crank angle.
pub fn fourbar_pose(crank_angle: f64, dims: &FourBarDims) -> Result<PlanarPose, SimError> {
    let a = Vector2::new(
        dims.crank * crank_angle.cos(),
        dims.crank * crank_angle.sin(),
    );
    let o4 = Vector2::new(dims.ground, 0.0);
    let d = (o4 - a).norm();
    if d > dims.coupler + dims.rocker || d < (dims.coupler - dims.rocker).abs() {
        return Err(SimError::NoAssembly { angle: crank_angle });
    }
    // Circle-circle intersection, keeping the elbow-up branch throughout.
    let along = (dims.coupler * dims.coupler - dims.rocker * dims.rocker + d * d) / (2.0 * d);
    let h = (dims.coupler * dims.coupler - along * along).max(0.0).sqrt();
    let dir = (o4 - a) / d;
    let perp = Vector2::new(-dir.y, dir.x);
    let b = a + dir * along + perp * h;

    let t_hat = (b - a) / (b - a).norm();
    let n_hat = Vector2::new(-t_hat.y, t_hat.x);
    let c = a + t_hat * dims.along + n_hat * dims.perp;
    let closure_residual =
        ((b - a).norm() - dims.coupler).abs() + ((b - o4).norm() - dims.rocker).abs();
    Ok(PlanarPose {
        x: c.x,
        y: c.y,
        theta: t_hat.y.atan2(t_hat.x),
        closure_residual,
    })
}

/// Chirp-style hand-shake motion: each axis oscillates with the same phase
/// ramp whose instantaneous frequency climbs from `f0` to `f1` over the run.
#[derive(Clone, Copy, Debug)]
pub struct HandshakeParams {
    pub center: Vector3<f64>,
    pub amp_pos: Vector3<f64>,
    pub amp_rot: Vector3<f64>,
    pub f0: f64,
    pub f1: f64,
    pub duration_s: f64,
    pub phase_pos: Vector3<f64>,
    pub phase_rot: Vector3<f64>,
}

impl HandshakeParams {
    fn phase(&self, t: f64) -> (f64, f64, f64) {
        let sweep = (self.f1 - self.f0) / self.duration_s;
        let phi = std::f64::consts::TAU * (self.f0 * t + 0.5 * sweep * t * t);
        let dphi = std::f64::consts::TAU * (self.f0 + sweep * t);
        let ddphi = std::f64::consts::TAU * sweep;
        (phi, dphi, ddphi)
    }
}

/// Four-bar target motion embedded fronto-parallel at a standoff depth,
/// centered on the mean of the coupler-point curve.
#[derive(Clone, Debug)]
pub struct FourBarMotion {
    pub dims: FourBarDims,
    pub rpm: f64,
    pub standoff: f64,
    center: Vector2<f64>,
}

impl FourBarMotion {
    pub fn new(dims: FourBarDims, rpm: f64, standoff: f64) -> Result<Self, SimError> {
        dims.validate()?;
        let samples = 4096;
        let mut center = Vector2::zeros();
        for i in 0..samples {
            let angle = std::f64::consts::TAU * i as f64 / samples as f64;
            let p = fourbar_pose(angle, &dims)?;
            center += Vector2::new(p.x, p.y);
        }
        Ok(Self {
            dims,
            rpm,
            standoff,
            center: center / samples as f64,
        })
    }

    pub fn crank_rate(&self) -> f64 {
        self.rpm * std::f64::consts::TAU / 60.0
    }
}

/// A timestamped pose key for piecewise trajectories.
#[derive(Clone, Copy, Debug)]
pub struct Waypoint {
    pub t_s: f64,
    pub pos: Vector3<f64>,
    pub rot: Matrix3<f64>,
}

/// Ground-truth motion of the tracked body (camera or object).
#[derive(Clone, Debug)]
pub enum Trajectory {
    Static { pose: Pose },
    Handshake(HandshakeParams),
    FourBar(FourBarMotion),
    Waypoints(Vec<Waypoint>),
}

/// Pose plus first derivatives (body-frame angular velocity) and linear
/// acceleration at a sample time.
#[derive(Clone, Copy, Debug)]
pub struct TrajSample {
    pub pose: Pose,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub a: Vector3<f64>,
}

impl Trajectory {
    pub fn sample(&self, t_s: f64) -> Pose {
        match self {
            Trajectory::Static { pose } => *pose,
            Trajectory::Handshake(p) => {
                let (phi, _, _) = p.phase(t_s);
                let pos = p.center
                    + Vector3::new(
                        p.amp_pos.x * (phi + p.phase_pos.x).sin(),
                        p.amp_pos.y * (phi + p.phase_pos.y).sin(),
                        p.amp_pos.z * (phi + p.phase_pos.z).sin(),
                    );
                let theta = Vector3::new(
                    p.amp_rot.x * (phi + p.phase_rot.x).sin(),
                    p.amp_rot.y * (phi + p.phase_rot.y).sin(),
                    p.amp_rot.z * (phi + p.phase_rot.z).sin(),
                );
                Pose {
                    pos,
                    rot: exp_so3(&theta),
                }
            }
            Trajectory::FourBar(fb) => {
                let angle = fb.crank_rate() * t_s;
                let p = fourbar_pose(angle, &fb.dims).expect("crank-rocker assembles everywhere");
                Pose {
                    pos: Vector3::new(p.x - fb.center.x, p.y - fb.center.y, fb.standoff),
                    rot: exp_so3(&Vector3::new(0.0, 0.0, p.theta)),
                }
            }
            Trajectory::Waypoints(points) => {
                assert!(!points.is_empty());
                if t_s <= points[0].t_s {
                    return Pose {
                        pos: points[0].pos,
                        rot: points[0].rot,
                    };
                }
                let last = points.len() - 1;
                if t_s >= points[last].t_s {
                    return Pose {
                        pos: points[last].pos,
                        rot: points[last].rot,
                    };
                }
                let hi = points.partition_point(|w| w.t_s <= t_s).min(last);
                let (a, b) = (&points[hi - 1], &points[hi]);
                let s = (t_s - a.t_s) / (b.t_s - a.t_s);
                let step = log_so3(&(a.rot.transpose() * b.rot)).expect("valid waypoint rotations");
                Pose {
                    pos: a.pos + (b.pos - a.pos) * s,
                    rot: a.rot * exp_so3(&(step * s)),
                }
            }
        }
    }

    /// Pose with derivatives: analytic for the closed-form trajectories,
    /// central finite differences otherwise.
    pub fn sample_kinematics(&self, t_s: f64) -> TrajSample {
        match self {
            Trajectory::Static { pose } => TrajSample {
                pose: *pose,
                v: Vector3::zeros(),
                omega: Vector3::zeros(),
                a: Vector3::zeros(),
            },
            Trajectory::Handshake(p) => {
                let (phi, dphi, ddphi) = p.phase(t_s);
                let mut pos = p.center;
                let mut v = Vector3::zeros();
                let mut a = Vector3::zeros();
                let mut theta = Vector3::zeros();
                let mut dtheta = Vector3::zeros();
                for k in 0..3 {
                    let sp = (phi + p.phase_pos[k]).sin();
                    let cp = (phi + p.phase_pos[k]).cos();
                    pos[k] += p.amp_pos[k] * sp;
                    v[k] = p.amp_pos[k] * cp * dphi;
                    a[k] = p.amp_pos[k] * (cp * ddphi - sp * dphi * dphi);
                    theta[k] = p.amp_rot[k] * (phi + p.phase_rot[k]).sin();
                    dtheta[k] = p.amp_rot[k] * (phi + p.phase_rot[k]).cos() * dphi;
                }
                TrajSample {
                    pose: Pose {
                        pos,
                        rot: exp_so3(&theta),
                    },
                    v,
                    // d/dt Exp(θ(t)) = Exp(θ)·[J_r(θ)·θ̇]×
                    omega: right_jacobian(&theta) * dtheta,
                    a,
                }
            }
            _ => self.fd_kinematics(t_s, 1e-6),
        }
    }

    fn fd_kinematics(&self, t_s: f64, h: f64) -> TrajSample {
        let pose = self.sample(t_s);
        let before = self.sample(t_s - h);
        let after = self.sample(t_s + h);
        let v = (after.pos - before.pos) / (2.0 * h);
        let a = (after.pos - 2.0 * pose.pos + before.pos) / (h * h);
        let omega = log_so3(&(before.rot.transpose() * after.rot))
            .expect("trajectory rotations stay valid")
            / (2.0 * h);
        TrajSample { pose, v, omega, a }
    }
}

/// Peak kinematics of a trajectory found by a dense time sweep.
#[derive(Clone, Copy, Debug)]
pub struct MotionEnvelope {
    /// Per-axis peak-to-peak position excursion (m).
    pub p2p: Vector3<f64>,
    pub max_speed: f64,
    pub max_accel: f64,
}

pub fn motion_envelope(traj: &Trajectory, duration_s: f64, samples: usize) -> MotionEnvelope {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut max_speed = 0.0f64;
    let mut max_accel = 0.0f64;
    for i in 0..samples {
        let t = duration_s * i as f64 / samples as f64;
        let s = traj.sample_kinematics(t);
        for k in 0..3 {
            lo[k] = lo[k].min(s.pose.pos[k]);
            hi[k] = hi[k].max(s.pose.pos[k]);
        }
        max_speed = max_speed.max(s.v.norm());
        max_accel = max_accel.max(s.a.norm());
    }
    MotionEnvelope {
        p2p: hi - lo,
        max_speed,
        max_accel,
    }
}

/// Event generator configuration. The generator draws inlier events along
/// projected segments at the true pose of each event's own timestamp.
#[derive(Clone, Copy, Debug)]
pub struct EventGenConfig {
    /// Peak total event rate (events/s).
    pub rate: f64,
    /// Transverse noise of inlier events (pixels).
    pub sigma_g: f64,
    /// Fraction of events replaced by uniform image-plane outliers.
    pub outlier_frac: f64,
    /// Modulate the instantaneous rate by image-plane edge speed.
    pub modulate_by_motion: bool,
    /// Floor edge speed (px/s) so static scenes still emit events.
    pub speed_floor_px_s: f64,
    /// Internal sampling step (µs).
    pub step_us: i64,
    pub seed: u64,
}

impl Default for EventGenConfig {
    fn default() -> Self {
        Self {
            rate: 2e5,
            sigma_g: 0.7,
            outlier_frac: 0.05,
            modulate_by_motion: true,
            speed_floor_px_s: 2000.0,
            step_us: 25,
            seed: 1,
        }
    }
}

struct SegmentActivity {
    index: usize,
    weight: f64,
}

fn visible_weights(
    map: &[Segment3D],
    pose: &Pose,
    mode: ProjectionMode,
    calib: &CameraCalib,
    edge_speed: Option<(&Pose, &Pose, f64)>,
    floor_px_s: f64,
    out: &mut Vec<SegmentActivity>,
) -> f64 {
    out.clear();
    let (w, h) = (calib.width as f64, calib.height as f64);
    let mut total = 0.0;
    for (i, seg) in map.iter().enumerate() {
        let Ok(proj) = project_segment(seg, pose, mode, calib) else {
            continue;
        };
        let p1 = proj.endpoint1_px();
        let p2 = proj.endpoint2_px();
        let Some((c1, c2)) = clip_to_rect(p1, p2, w, h) else {
            continue;
        };
        let len = (c2 - c1).norm();
        if len < 1e-9 {
            continue;
        }
        let weight = match edge_speed {
            Some((before, after, dt)) => {
                let n2 = proj.line.x * proj.line.x + proj.line.y * proj.line.y;
                let n_hat = Vector2::new(proj.line.x, proj.line.y) / n2.sqrt();
                let mid = seg.p1 * 0.5 + seg.p2 * 0.5;
                let speed = match (
                    project_segment(&Segment3D { id: seg.id, p1: mid, p2: seg.p2 }, before, mode, calib),
                    project_segment(&Segment3D { id: seg.id, p1: mid, p2: seg.p2 }, after, mode, calib),
                ) {
                    (Ok(pb), Ok(pa)) => {
                        let vb = pb.endpoint1_px();
                        let va = pa.endpoint1_px();
                        ((va - vb) / dt).dot(&n_hat).abs()
                    }
                    _ => 0.0,
                };
                len * (speed + floor_px_s)
            }
            None => len,
        };
        total += weight;
        out.push(SegmentActivity { index: i, weight });
    }
    total
}

/// Generated stream: undistorted sub-pixel events plus the peak total weight
/// used for rate normalization (diagnostics).
pub struct GeneratedStream {
    pub events: Vec<Event>,
    pub peak_weight: f64,
}

/// Draws a time-ordered synthetic event stream over `[0, duration_us)`.
/// Event positions are exact for the pose at their own timestamp; the
/// per-step pose only selects which segment fires.
pub fn generate_events(
    map: &[Segment3D],
    traj: &Trajectory,
    calib: &CameraCalib,
    mode: ProjectionMode,
    gen: &EventGenConfig,
    duration_us: i64,
) -> GeneratedStream {
    let mut rng = SplitMix64::new(gen.seed).fork(0x6576);
    let (w, h) = (calib.width as f64, calib.height as f64);
    let mut activities = Vec::new();
    let speed_h = 1e-4;

    // Pre-scan for the peak total weight so the configured rate is the peak.
    let mut peak_weight = 0.0f64;
    if gen.modulate_by_motion {
        let prescan_step = 1000i64.min(duration_us.max(1));
        let mut t = 0i64;
        while t < duration_us {
            let ts = t as f64 * 1e-6;
            let pose = traj.sample(ts);
            let before = traj.sample(ts - speed_h);
            let after = traj.sample(ts + speed_h);
            let total = visible_weights(
                map,
                &pose,
                mode,
                calib,
                Some((&before, &after, 2.0 * speed_h)),
                gen.speed_floor_px_s,
                &mut activities,
            );
            peak_weight = peak_weight.max(total);
            t += prescan_step;
        }
        if peak_weight <= 0.0 {
            peak_weight = 1.0;
        }
    }

    let mut events = Vec::new();
    let mut step_buf: Vec<Event> = Vec::new();
    let mut t = 0i64;
    while t < duration_us {
        let step = gen.step_us.min(duration_us - t);
        let t_mid = (t + step / 2) as f64 * 1e-6;
        let pose = traj.sample(t_mid);
        let (total, lambda) = if gen.modulate_by_motion {
            let before = traj.sample(t_mid - speed_h);
            let after = traj.sample(t_mid + speed_h);
            let total = visible_weights(
                map,
                &pose,
                mode,
                calib,
                Some((&before, &after, 2.0 * speed_h)),
                gen.speed_floor_px_s,
                &mut activities,
            );
            (total, gen.rate * (total / peak_weight) * step as f64 * 1e-6)
        } else {
            let total = visible_weights(map, &pose, mode, calib, None, 0.0, &mut activities);
            let lambda = if total > 0.0 {
                gen.rate * step as f64 * 1e-6
            } else {
                0.0
            };
            (total, lambda)
        };
        let count = rng.poisson(lambda);
        step_buf.clear();
        'events: for _ in 0..count {
            // Segment by weight, then exact geometry at the event's own time.
            let mut pick = rng.uniform() * total;
            let mut chosen = activities.last().map(|a| a.index);
            for act in &activities {
                if pick < act.weight {
                    chosen = Some(act.index);
                    break;
                }
                pick -= act.weight;
            }
            let Some(seg_idx) = chosen else {
                continue 'events;
            };
            let t_ev = t + (rng.uniform() * step as f64) as i64;
            let ev_pose = traj.sample(t_ev as f64 * 1e-6);
            let is_outlier = rng.uniform() < gen.outlier_frac;
            let polarity: i8 = if rng.uniform() < 0.5 { 1 } else { -1 };
            let (u, v) = if is_outlier {
                (rng.uniform_in(0.0, w), rng.uniform_in(0.0, h))
            } else {
                let Ok(proj) = project_segment(&map[seg_idx], &ev_pose, mode, calib) else {
                    continue 'events;
                };
                let Some((c1, c2)) = clip_to_rect(proj.endpoint1_px(), proj.endpoint2_px(), w, h)
                else {
                    continue 'events;
                };
                let s = rng.uniform();
                let p = c1 + (c2 - c1) * s;
                let n2 = proj.line.x * proj.line.x + proj.line.y * proj.line.y;
                if n2 <= 1e-12 {
                    continue 'events;
                }
                let n_hat = Vector2::new(proj.line.x, proj.line.y) / n2.sqrt();
                let noisy = p + n_hat * (rng.normal() * gen.sigma_g);
                (noisy.x, noisy.y)
            };
            if u >= 0.0 && u < w && v >= 0.0 && v < h {
                step_buf.push(Event {
                    t_us: t_ev,
                    u,
                    v,
                    polarity,
                });
            }
        }
        step_buf.sort_by_key(|e| e.t_us);
        events.extend_from_slice(&step_buf);
        t += step;
    }
    GeneratedStream {
        events,
        peak_weight,
    }
}

/// Applies the forward lens distortion to ideal generated events, dropping
/// any that leave the sensor, to produce what the camera would emit.
pub fn to_sensor_events(events: &[Event], calib: &CameraCalib) -> Vec<Event> {
    let (w, h) = (calib.width as f64, calib.height as f64);
    events
        .iter()
        .filter_map(|e| {
            let d = distort_pixel(calib, Vector2::new(e.u, e.v));
            (d.x >= 0.0 && d.x < w && d.y >= 0.0 && d.y < h).then_some(Event {
                t_us: e.t_us,
                u: d.x,
                v: d.y,
                polarity: e.polarity,
            })
        })
        .collect()
}

/// Ground-truth pose samples at a fixed cadence, with derivatives.
pub fn sample_truth(traj: &Trajectory, duration_us: i64, dt_us: i64) -> Vec<(i64, TrajSample)> {
    let mut out = Vec::new();
    let mut t = 0i64;
    while t < duration_us {
        out.push((t, traj.sample_kinematics(t as f64 * 1e-6)));
        t += dt_us;
    }
    out
}

/// Default wire-frame target: nested closed polygons in the z = 0 plane of
/// the map frame, spanning roughly 12 cm. Shapes are spaced so that no two
/// non-adjacent edges come within the matcher's ambiguity threshold at a
/// 20-25 cm standoff.
pub fn default_wireframe_map() -> Vec<Segment3D> {
    let mut segments = Vec::new();
    let mut id = 0u32;
    let mut polygon = |pts: &[(f64, f64)], segs: &mut Vec<Segment3D>| {
        for i in 0..pts.len() {
            let (x1, y1) = pts[i];
            let (x2, y2) = pts[(i + 1) % pts.len()];
            segs.push(Segment3D {
                id,
                p1: Vector3::new(x1, y1, 0.0),
                p2: Vector3::new(x2, y2, 0.0),
            });
            id += 1;
        }
    };
    // Outer square.
    polygon(
        &[(-0.06, -0.06), (0.06, -0.06), (0.06, 0.06), (-0.06, 0.06)],
        &mut segments,
    );
    // Rotated inner square (diamond).
    polygon(
        &[(0.0, -0.04), (0.04, 0.0), (0.0, 0.04), (-0.04, 0.0)],
        &mut segments,
    );
    // Triangle in the upper-left corner band.
    polygon(
        &[(-0.052, 0.032), (-0.028, 0.032), (-0.040, 0.053)],
        &mut segments,
    );
    // Small rectangle in the lower-right corner band.
    polygon(
        &[(0.030, -0.053), (0.051, -0.053), (0.051, -0.030), (0.030, -0.030)],
        &mut segments,
    );
    // Tilted square in the lower-left corner band.
    polygon(
        &[(-0.041, -0.054), (-0.028, -0.041), (-0.041, -0.028), (-0.054, -0.041)],
        &mut segments,
    );
    // Chevron in the upper-right corner band.
    polygon(
        &[(0.030, 0.030), (0.052, 0.030), (0.052, 0.052), (0.041, 0.043), (0.030, 0.052)],
        &mut segments,
    );
    segments
}
