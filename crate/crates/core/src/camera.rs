//! Camera model: radial distortion correction, endpoint and line-segment
//! projection under the moving-camera and moving-object models, the signed
//! point-to-line innovation, and its Jacobians with respect to the pose
//! error state.
//!
//! Projections are kept in homogeneous coordinates; the line through a
//! segment's endpoint projections is their cross product `l = u1 × u2`,
//! and the event innovation is `z = eᵀl / √(a² + b²)` with `e = (u, v, 1)`.

use nalgebra::{Matrix3, RowVector3, Vector2, Vector3};
use thiserror::Error;

use crate::lie::hat;
use crate::motion::{BlockVec, MotionModel};

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("point has non-positive depth")]
    NonPositiveDepth,
    #[error("projected line is degenerate (a² + b² ≈ 0)")]
    DegenerateLine,
}

/// Pinhole intrinsics with two radial distortion coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraCalib {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraCalib {
    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    #[inline]
    fn to_normalized(&self, p: Vector2<f64>) -> Vector2<f64> {
        Vector2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    #[inline]
    fn to_pixel(&self, n: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(n.x * self.fx + self.cx, n.y * self.fy + self.cy)
    }

    #[inline]
    fn radial_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }
}

/// Forward radial distortion: ideal (undistorted) pixel to sensor pixel.
pub fn distort_pixel(calib: &CameraCalib, ideal: Vector2<f64>) -> Vector2<f64> {
    let n = calib.to_normalized(ideal);
    let r2 = n.norm_squared();
    calib.to_pixel(n * calib.radial_factor(r2))
}

const UNDISTORT_MAX_ITER: usize = 10;
const UNDISTORT_TOL_PX: f64 = 1e-8;

/// Inverse of [`distort_pixel`] by Newton iteration on the normalized plane,
/// converging to 1e-8 px in at most 10 iterations.
pub fn undistort_pixel(calib: &CameraCalib, sensor: Vector2<f64>) -> Vector2<f64> {
    let target = calib.to_normalized(sensor);
    let tol = UNDISTORT_TOL_PX / calib.fx.max(calib.fy);
    let mut n = target;
    for _ in 0..UNDISTORT_MAX_ITER {
        let r2 = n.norm_squared();
        let g = calib.radial_factor(r2);
        let dg = calib.k1 + 2.0 * calib.k2 * r2;
        let residual = n * g - target;
        // d(n·g)/dn = g·I + 2·dg·n nᵀ
        let j00 = g + 2.0 * dg * n.x * n.x;
        let j11 = g + 2.0 * dg * n.y * n.y;
        let j01 = 2.0 * dg * n.x * n.y;
        let det = j00 * j11 - j01 * j01;
        let step = Vector2::new(
            (j11 * residual.x - j01 * residual.y) / det,
            (j00 * residual.y - j01 * residual.x) / det,
        );
        n -= step;
        if step.norm() < tol {
            break;
        }
    }
    calib.to_pixel(n)
}

/// Dense per-pixel undistortion table sampled at integer pixel corners and
/// interpolated bilinearly, replacing the iterative inverse on the event path.
pub struct UndistortLut {
    width: usize,
    height: usize,
    map: Vec<Vector2<f64>>,
}

impl UndistortLut {
    pub fn new(calib: &CameraCalib) -> Self {
        let width = calib.width as usize;
        let height = calib.height as usize;
        let mut map = Vec::with_capacity((width + 1) * (height + 1));
        for iv in 0..=height {
            for iu in 0..=width {
                map.push(undistort_pixel(calib, Vector2::new(iu as f64, iv as f64)));
            }
        }
        Self { width, height, map }
    }

    #[inline]
    pub fn lookup(&self, u: f64, v: f64) -> Vector2<f64> {
        let uc = u.clamp(0.0, self.width as f64);
        let vc = v.clamp(0.0, self.height as f64);
        let iu = (uc as usize).min(self.width - 1);
        let iv = (vc as usize).min(self.height - 1);
        let fu = uc - iu as f64;
        let fv = vc - iv as f64;
        let stride = self.width + 1;
        let p00 = self.map[iv * stride + iu];
        let p10 = self.map[iv * stride + iu + 1];
        let p01 = self.map[(iv + 1) * stride + iu];
        let p11 = self.map[(iv + 1) * stride + iu + 1];
        let top = p00 + (p10 - p00) * fu;
        let bot = p01 + (p11 - p01) * fu;
        top + (bot - top) * fv
    }
}

/// A brightness-change event after undistortion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t_us: i64,
    pub u: f64,
    pub v: f64,
    pub polarity: i8,
}

/// 3D line segment given by its endpoints in the map frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment3D {
    pub id: u32,
    pub p1: Vector3<f64>,
    pub p2: Vector3<f64>,
}

/// Which rigid body the state describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProjectionMode {
    /// Camera moves in a static world: `u = K Rᵀ (p − r)`.
    MovingCamera,
    /// Object moves in front of a static camera: `u = K (r + R p)`.
    MovingObject,
}

impl ProjectionMode {
    pub fn tag(self) -> &'static str {
        match self {
            ProjectionMode::MovingCamera => "cam",
            ProjectionMode::MovingObject => "obj",
        }
    }
}

/// A rigid pose (position plus rotation matrix).
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    pub pos: Vector3<f64>,
    pub rot: Matrix3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            pos: Vector3::zeros(),
            rot: Matrix3::identity(),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            pos: -(self.rot.transpose() * self.pos),
            rot: self.rot.transpose(),
        }
    }
}

/// Homogeneous projection of one endpoint under the selected model. No
/// normalization is applied; the third coordinate is the depth.
#[inline]
pub fn project_endpoint(
    p: &Vector3<f64>,
    pose: &Pose,
    mode: ProjectionMode,
    calib: &CameraCalib,
) -> Result<Vector3<f64>, CameraError> {
    let x = match mode {
        ProjectionMode::MovingCamera => pose.rot.transpose() * (p - pose.pos),
        ProjectionMode::MovingObject => pose.pos + pose.rot * p,
    };
    if x.z <= 0.0 {
        return Err(CameraError::NonPositiveDepth);
    }
    Ok(Vector3::new(
        calib.fx * x.x + calib.cx * x.z,
        calib.fy * x.y + calib.cy * x.z,
        x.z,
    ))
}

/// Projection of a segment: homogeneous endpoints and the line through them.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedLine {
    pub seg_id: u32,
    pub u1: Vector3<f64>,
    pub u2: Vector3<f64>,
    /// Line coefficients (a, b, c) = u1 × u2, unnormalized.
    pub line: Vector3<f64>,
}

impl ProjectedLine {
    pub fn endpoint1_px(&self) -> Vector2<f64> {
        Vector2::new(self.u1.x / self.u1.z, self.u1.y / self.u1.z)
    }

    pub fn endpoint2_px(&self) -> Vector2<f64> {
        Vector2::new(self.u2.x / self.u2.z, self.u2.y / self.u2.z)
    }
}

pub fn project_segment(
    seg: &Segment3D,
    pose: &Pose,
    mode: ProjectionMode,
    calib: &CameraCalib,
) -> Result<ProjectedLine, CameraError> {
    let u1 = project_endpoint(&seg.p1, pose, mode, calib)?;
    let u2 = project_endpoint(&seg.p2, pose, mode, calib)?;
    Ok(ProjectedLine {
        seg_id: seg.id,
        u1,
        u2,
        line: u1.cross(&u2),
    })
}

/// Signed pixel distance from an (undistorted) image point to the line.
#[inline]
pub fn point_line_distance(u: f64, v: f64, line: &Vector3<f64>) -> Result<f64, CameraError> {
    let n2 = line.x * line.x + line.y * line.y;
    if n2 <= 1e-12 {
        return Err(CameraError::DegenerateLine);
    }
    Ok((line.x * u + line.y * v + line.z) / n2.sqrt())
}

/// Jacobians of the line coefficients with respect to the pose error state.
#[derive(Clone, Copy, Debug)]
pub struct LineJacobians {
    /// ∂l/∂δr
    pub j_line_pos: Matrix3<f64>,
    /// ∂l/∂δθ (right perturbation of R)
    pub j_line_rot: Matrix3<f64>,
}

/// Chain rule through both endpoints: `J_l^x = J_l^{u1} J_{u1}^x + J_l^{u2}
/// J_{u2}^x` with `J_l^{u1} = −[u2]×` and `J_l^{u2} = [u1]×`.
pub fn line_jacobians(
    seg: &Segment3D,
    pose: &Pose,
    mode: ProjectionMode,
    calib: &CameraCalib,
    proj: &ProjectedLine,
) -> LineJacobians {
    let k = calib.k_matrix();
    let hat_u1 = hat(&proj.u1);
    let hat_u2 = hat(&proj.u2);
    match mode {
        ProjectionMode::MovingCamera => {
            let rt = pose.rot.transpose();
            let j_u_pos = -(k * rt);
            let j_u1_rot = k * hat(&(rt * (seg.p1 - pose.pos)));
            let j_u2_rot = k * hat(&(rt * (seg.p2 - pose.pos)));
            LineJacobians {
                j_line_pos: (hat_u1 - hat_u2) * j_u_pos,
                j_line_rot: -hat_u2 * j_u1_rot + hat_u1 * j_u2_rot,
            }
        }
        ProjectionMode::MovingObject => {
            let kr = k * pose.rot;
            let j_u1_rot = -(kr * hat(&seg.p1));
            let j_u2_rot = -(kr * hat(&seg.p2));
            LineJacobians {
                j_line_pos: (hat_u1 - hat_u2) * k,
                j_line_rot: -hat_u2 * j_u1_rot + hat_u1 * j_u2_rot,
            }
        }
    }
}

/// Innovation row: nonzero position and orientation blocks of the 1×m
/// measurement Jacobian.
#[derive(Clone, Copy, Debug)]
pub struct InnovationRow {
    pub j_pos: Vector3<f64>,
    pub j_rot: Vector3<f64>,
}

impl InnovationRow {
    /// Full sparse row as a block vector (velocity and acceleration blocks
    /// are zero).
    pub fn to_block_vec(&self, model: MotionModel) -> BlockVec {
        let mut row = BlockVec::zeros(model);
        row.set_block(0, self.j_pos);
        row.set_block(1, self.j_rot);
        row
    }
}

/// Innovation and its Jacobian row for one event against one projected line.
///
/// With `full_normalizer` the derivative of the 1/√(a²+b²) factor is carried
/// through the product rule; otherwise the normalizer is treated as locally
/// constant (`J_z^l = eᵀ/√(a²+b²)`).
#[inline]
pub fn innovation_row(
    u: f64,
    v: f64,
    proj: &ProjectedLine,
    jac: &LineJacobians,
    full_normalizer: bool,
) -> Result<(f64, InnovationRow), CameraError> {
    let (a, b, c) = (proj.line.x, proj.line.y, proj.line.z);
    let n2 = a * a + b * b;
    if n2 <= 1e-12 {
        return Err(CameraError::DegenerateLine);
    }
    let inv_n = 1.0 / n2.sqrt();
    let z = (a * u + b * v + c) * inv_n;
    let j_z_line = if full_normalizer {
        let zn2 = z / n2;
        RowVector3::new(u * inv_n - zn2 * a, v * inv_n - zn2 * b, inv_n)
    } else {
        RowVector3::new(u * inv_n, v * inv_n, inv_n)
    };
    Ok((
        z,
        InnovationRow {
            j_pos: (j_z_line * jac.j_line_pos).transpose(),
            j_rot: (j_z_line * jac.j_line_rot).transpose(),
        },
    ))
}

/// One-call innovation Jacobian for an event against a 3D segment.
pub fn innovation_jacobian(
    event: &Event,
    seg: &Segment3D,
    pose: &Pose,
    mode: ProjectionMode,
    calib: &CameraCalib,
    full_normalizer: bool,
) -> Result<(f64, InnovationRow), CameraError> {
    let proj = project_segment(seg, pose, mode, calib)?;
    let jac = line_jacobians(seg, pose, mode, calib, &proj);
    innovation_row(event.u, event.v, &proj, &jac, full_normalizer)
}

/// Liang-Barsky clip of the segment `p1 → p2` to `[0, w] × [0, h]`.
pub fn clip_to_rect(
    p1: Vector2<f64>,
    p2: Vector2<f64>,
    w: f64,
    h: f64,
) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let d = p2 - p1;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-d.x, p1.x),       // left: x >= 0
        (d.x, w - p1.x),    // right: x <= w
        (-d.y, p1.y),       // bottom: y >= 0
        (d.y, h - p1.y),    // top: y <= h
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                if r > t1 {
                    return None;
                }
                if r > t0 {
                    t0 = r;
                }
            } else {
                if r < t0 {
                    return None;
                }
                if r < t1 {
                    t1 = r;
                }
            }
        }
    }
    Some((p1 + d * t0, p1 + d * t1))
}

/// A projected segment that survived the visibility test, with the cached
/// quantities the matcher consumes per event: true pixel endpoints for the
/// interior-projection and segment-distance tests, clipped endpoints for
/// grid registration, and the inverse line norm 1/√(a²+b²).
#[derive(Clone, Copy, Debug)]
pub struct VisibleLine {
    pub proj: ProjectedLine,
    pub px1: Vector2<f64>,
    pub px2: Vector2<f64>,
    pub clip1: Vector2<f64>,
    pub clip2: Vector2<f64>,
    pub inv_line_norm: f64,
    /// 1 / |px2 − px1|²
    pub inv_dir_norm_sq: f64,
}

impl VisibleLine {
    /// Signed distance of an image point to the infinite line.
    #[inline]
    pub fn distance(&self, u: f64, v: f64) -> f64 {
        let l = &self.proj.line;
        (l.x * u + l.y * v + l.z) * self.inv_line_norm
    }

    /// Projection parameter of an image point onto the segment (0 at
    /// endpoint 1, 1 at endpoint 2, unclamped).
    #[inline]
    pub fn projection_parameter(&self, u: f64, v: f64) -> f64 {
        let dir = self.px2 - self.px1;
        let rel = Vector2::new(u, v) - self.px1;
        rel.dot(&dir) * self.inv_dir_norm_sq
    }

    /// Squared Euclidean distance of an image point to the segment itself
    /// (endpoints included).
    #[inline]
    pub fn segment_distance_sq(&self, u: f64, v: f64) -> f64 {
        let t = self.projection_parameter(u, v).clamp(0.0, 1.0);
        let closest = self.px1 + (self.px2 - self.px1) * t;
        (Vector2::new(u, v) - closest).norm_squared()
    }
}

/// Projects every map segment and keeps those with both endpoints at
/// positive depth whose image crosses the sensor rectangle.
pub fn visible_segments(
    map: &[Segment3D],
    pose: &Pose,
    mode: ProjectionMode,
    calib: &CameraCalib,
) -> Vec<VisibleLine> {
    let mut out = Vec::with_capacity(map.len());
    visible_segments_into(map, pose, mode, calib, &mut out);
    out
}

/// Allocation-free variant of [`visible_segments`] for the window loop.
pub fn visible_segments_into(
    map: &[Segment3D],
    pose: &Pose,
    mode: ProjectionMode,
    calib: &CameraCalib,
    out: &mut Vec<VisibleLine>,
) {
    out.clear();
    let (w, h) = (calib.width as f64, calib.height as f64);
    for seg in map {
        let Ok(proj) = project_segment(seg, pose, mode, calib) else {
            continue;
        };
        let n2 = proj.line.x * proj.line.x + proj.line.y * proj.line.y;
        if n2 <= 1e-12 {
            // Segment seen edge-on through the projection center.
            continue;
        }
        let px1 = proj.endpoint1_px();
        let px2 = proj.endpoint2_px();
        let dir_sq = (px2 - px1).norm_squared();
        if dir_sq <= 1e-12 {
            continue;
        }
        let Some((clip1, clip2)) = clip_to_rect(px1, px2, w, h) else {
            continue;
        };
        out.push(VisibleLine {
            proj,
            px1,
            px2,
            clip1,
            clip2,
            inv_line_norm: 1.0 / n2.sqrt(),
            inv_dir_norm_sq: 1.0 / dir_sq,
        });
    }
}
