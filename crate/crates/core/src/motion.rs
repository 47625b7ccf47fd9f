//! Motion models, state representation, and covariance propagation.
//!
//! Three models are supported: constant position (CP), constant velocity
//! (CV), and constant acceleration (CA), with error-state dimensions 6, 12
//! and 18. The error state is partitioned in 3×3 blocks ordered
//! (position, orientation, velocity, angular velocity, acceleration,
//! angular acceleration), and the covariance is stored and propagated
//! block-wise so that multiplications by zero or identity blocks are never
//! performed.
//!
//! Orientation is generic over [`RotationRepr`]: [`LieRotation`] stores a
//! rotation matrix and uses exact exponential-map Jacobians, while
//! [`QuatRotation`] stores a unit quaternion and uses the first-order
//! Jacobians and error composition of a conventional error-state EKF.

use nalgebra::{DMatrix, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::lie::{exp_so3, hat, log_so3, right_jacobian};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MotionModel {
    ConstantPosition,
    ConstantVelocity,
    ConstantAcceleration,
}

impl MotionModel {
    /// Number of 3×3 blocks along one side of the error state.
    pub fn block_count(self) -> usize {
        match self {
            MotionModel::ConstantPosition => 2,
            MotionModel::ConstantVelocity => 4,
            MotionModel::ConstantAcceleration => 6,
        }
    }

    /// Error-state dimension m.
    pub fn error_dim(self) -> usize {
        3 * self.block_count()
    }

    pub fn tag(self) -> &'static str {
        match self {
            MotionModel::ConstantPosition => "cp",
            MotionModel::ConstantVelocity => "cv",
            MotionModel::ConstantAcceleration => "ca",
        }
    }
}

/// Orientation representation used by the filter.
pub trait RotationRepr: Copy + Clone + std::fmt::Debug {
    const NAME: &'static str;

    fn identity() -> Self;
    fn from_matrix(m: &Matrix3<f64>) -> Self;
    fn matrix(&self) -> Matrix3<f64>;

    /// Exact right composition with a rotation vector (prediction step).
    fn integrate(&self, theta: &Vector3<f64>) -> Self;

    /// Error-state composition used in the correction step.
    fn apply_error(&self, dtheta: &Vector3<f64>) -> Self;

    /// Orientation blocks of the transition Jacobian for an integrated
    /// rotation vector `theta`: returns (dδθ'/dδθ, dδθ'/dδω).
    fn transition_blocks(theta: &Vector3<f64>, dt: f64) -> (Matrix3<f64>, Matrix3<f64>);

    /// Orientation as (w, x, y, z) for trajectory output.
    fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
            self.matrix(),
        ));
        [q.w, q.i, q.j, q.k]
    }
}

/// Rotation-matrix representation with exact manifold Jacobians.
#[derive(Clone, Copy, Debug)]
pub struct LieRotation(Matrix3<f64>);

impl RotationRepr for LieRotation {
    const NAME: &'static str = "lie";

    fn identity() -> Self {
        Self(Matrix3::identity())
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self(*m)
    }

    fn matrix(&self) -> Matrix3<f64> {
        self.0
    }

    fn integrate(&self, theta: &Vector3<f64>) -> Self {
        Self(self.0 * exp_so3(theta))
    }

    fn apply_error(&self, dtheta: &Vector3<f64>) -> Self {
        Self(self.0 * exp_so3(dtheta))
    }

    fn transition_blocks(theta: &Vector3<f64>, dt: f64) -> (Matrix3<f64>, Matrix3<f64>) {
        (exp_so3(theta).transpose(), right_jacobian(theta) * dt)
    }
}

/// Unit-quaternion representation with first-order Jacobians and error
/// composition, renormalized after every composition.
#[derive(Clone, Copy, Debug)]
pub struct QuatRotation(UnitQuaternion<f64>);

impl QuatRotation {
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        self.0
    }

    pub fn norm_error(&self) -> f64 {
        (self.0.as_ref().norm() - 1.0).abs()
    }
}

impl RotationRepr for QuatRotation {
    const NAME: &'static str = "classic";

    fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self(UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(*m),
        ))
    }

    fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    fn integrate(&self, theta: &Vector3<f64>) -> Self {
        let dq = UnitQuaternion::from_scaled_axis(*theta);
        Self(UnitQuaternion::from_quaternion(
            self.0.into_inner() * dq.into_inner(),
        ))
    }

    fn apply_error(&self, dtheta: &Vector3<f64>) -> Self {
        let dq = Quaternion::new(1.0, 0.5 * dtheta.x, 0.5 * dtheta.y, 0.5 * dtheta.z);
        Self(UnitQuaternion::from_quaternion(self.0.into_inner() * dq))
    }

    fn transition_blocks(theta: &Vector3<f64>, dt: f64) -> (Matrix3<f64>, Matrix3<f64>) {
        (Matrix3::identity() - hat(theta), Matrix3::identity() * dt)
    }

    fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.0;
        [q.w, q.i, q.j, q.k]
    }
}

/// Kinematic blocks beyond the pose; variants match the motion model so that
/// unused blocks do not exist rather than being zeroed.
#[derive(Clone, Copy, Debug)]
pub enum Kinematics {
    Constant,
    Velocity {
        v: Vector3<f64>,
        omega: Vector3<f64>,
    },
    Acceleration {
        v: Vector3<f64>,
        omega: Vector3<f64>,
        a: Vector3<f64>,
        alpha: Vector3<f64>,
    },
}

impl Kinematics {
    pub fn zeros(model: MotionModel) -> Self {
        match model {
            MotionModel::ConstantPosition => Kinematics::Constant,
            MotionModel::ConstantVelocity => Kinematics::Velocity {
                v: Vector3::zeros(),
                omega: Vector3::zeros(),
            },
            MotionModel::ConstantAcceleration => Kinematics::Acceleration {
                v: Vector3::zeros(),
                omega: Vector3::zeros(),
                a: Vector3::zeros(),
                alpha: Vector3::zeros(),
            },
        }
    }

    pub fn model(&self) -> MotionModel {
        match self {
            Kinematics::Constant => MotionModel::ConstantPosition,
            Kinematics::Velocity { .. } => MotionModel::ConstantVelocity,
            Kinematics::Acceleration { .. } => MotionModel::ConstantAcceleration,
        }
    }
}

/// Full filter state: pose plus the model's kinematic blocks.
#[derive(Clone, Copy, Debug)]
pub struct FilterState<R: RotationRepr> {
    pub pos: Vector3<f64>,
    pub rot: R,
    pub kin: Kinematics,
    pub stamp_us: i64,
}

/// Convenience alias for the manifold parameterization.
pub type LieState = FilterState<LieRotation>;
/// Convenience alias for the quaternion parameterization.
pub type ClassicState = FilterState<QuatRotation>;

impl<R: RotationRepr> FilterState<R> {
    pub fn new(pos: Vector3<f64>, rot_matrix: &Matrix3<f64>, model: MotionModel, stamp_us: i64) -> Self {
        Self {
            pos,
            rot: R::from_matrix(rot_matrix),
            kin: Kinematics::zeros(model),
            stamp_us,
        }
    }

    pub fn model(&self) -> MotionModel {
        self.kin.model()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rot.matrix()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        match self.kin {
            Kinematics::Constant => Vector3::zeros(),
            Kinematics::Velocity { v, .. } | Kinematics::Acceleration { v, .. } => v,
        }
    }

    pub fn omega(&self) -> Vector3<f64> {
        match self.kin {
            Kinematics::Constant => Vector3::zeros(),
            Kinematics::Velocity { omega, .. } | Kinematics::Acceleration { omega, .. } => omega,
        }
    }

    pub fn accel(&self) -> Vector3<f64> {
        match self.kin {
            Kinematics::Acceleration { a, .. } => a,
            _ => Vector3::zeros(),
        }
    }

    pub fn alpha(&self) -> Vector3<f64> {
        match self.kin {
            Kinematics::Acceleration { alpha, .. } => alpha,
            _ => Vector3::zeros(),
        }
    }

    /// Rotation vector integrated over `dt` by the model's kinematics.
    pub fn integrated_rotation(&self, dt: f64) -> Vector3<f64> {
        match self.kin {
            Kinematics::Constant => Vector3::zeros(),
            Kinematics::Velocity { omega, .. } => omega * dt,
            Kinematics::Acceleration { omega, alpha, .. } => omega * dt + alpha * (0.5 * dt * dt),
        }
    }

    /// State mean propagated over `dt` seconds (process noise at its mean).
    pub fn predict(&self, dt: f64) -> Self {
        let mut out = *self;
        out.stamp_us += (dt * 1e6).round() as i64;
        match self.kin {
            Kinematics::Constant => {}
            Kinematics::Velocity { v, omega } => {
                out.pos += v * dt;
                out.rot = self.rot.integrate(&(omega * dt));
            }
            Kinematics::Acceleration { v, omega, a, alpha } => {
                out.pos += v * dt + a * (0.5 * dt * dt);
                out.rot = self.rot.integrate(&(omega * dt + alpha * (0.5 * dt * dt)));
                out.kin = Kinematics::Acceleration {
                    v: v + a * dt,
                    omega: omega + alpha * dt,
                    a,
                    alpha,
                };
            }
        }
        out
    }

    /// Right-composes an error-state vector onto the state: regular sums for
    /// the vector blocks, the representation's composition for orientation.
    pub fn apply_error(&mut self, delta: &BlockVec) {
        assert_eq!(delta.n_blocks(), self.model().block_count());
        self.pos += delta.block(0);
        self.rot = self.rot.apply_error(&delta.block(1));
        match &mut self.kin {
            Kinematics::Constant => {}
            Kinematics::Velocity { v, omega } => {
                *v += delta.block(2);
                *omega += delta.block(3);
            }
            Kinematics::Acceleration { v, omega, a, alpha } => {
                *v += delta.block(2);
                *omega += delta.block(3);
                *a += delta.block(4);
                *alpha += delta.block(5);
            }
        }
    }
}

/// Error-state difference `b ⊖ a` in block form.
pub fn state_diff<R: RotationRepr>(b: &FilterState<R>, a: &FilterState<R>) -> BlockVec {
    let model = a.model();
    let mut d = BlockVec::zeros(model);
    d.set_block(0, b.pos - a.pos);
    let dr = log_so3(&(a.rotation_matrix().transpose() * b.rotation_matrix()))
        .expect("valid rotations");
    d.set_block(1, dr);
    if model != MotionModel::ConstantPosition {
        d.set_block(2, b.velocity() - a.velocity());
        d.set_block(3, b.omega() - a.omega());
    }
    if model == MotionModel::ConstantAcceleration {
        d.set_block(4, b.accel() - a.accel());
        d.set_block(5, b.alpha() - a.alpha());
    }
    d
}

/// Continuous-time perturbation densities; variances enter the process noise
/// as σ²·Δt.
#[derive(Clone, Copy, Debug)]
pub struct NoiseParams {
    pub sigma_r: f64,
    pub sigma_theta: f64,
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub sigma_a: f64,
    pub sigma_alpha: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_r: 0.03,
            sigma_theta: 0.3,
            sigma_v: 3.0,
            sigma_omega: 10.0,
            sigma_a: 80.0,
            sigma_alpha: 300.0,
        }
    }
}

/// Block-diagonal process noise for one prediction step.
#[derive(Clone, Copy, Debug)]
pub struct ProcessNoise {
    pub model: MotionModel,
    /// Per-block diagonal variance (already multiplied by Δt).
    pub block_var: [f64; 6],
}

impl ProcessNoise {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.model.error_dim();
        let mut q = DMatrix::zeros(m, m);
        for b in 0..self.model.block_count() {
            for k in 0..3 {
                q[(3 * b + k, 3 * b + k)] = self.block_var[b];
            }
        }
        q
    }
}

/// Process noise per model: the perturbation enters the lowest-order blocks
/// of the model only.
pub fn build_process_noise(p: &NoiseParams, dt: f64, model: MotionModel) -> ProcessNoise {
    let mut block_var = [0.0; 6];
    match model {
        MotionModel::ConstantPosition => {
            block_var[0] = p.sigma_r * p.sigma_r * dt;
            block_var[1] = p.sigma_theta * p.sigma_theta * dt;
        }
        MotionModel::ConstantVelocity => {
            block_var[2] = p.sigma_v * p.sigma_v * dt;
            block_var[3] = p.sigma_omega * p.sigma_omega * dt;
        }
        MotionModel::ConstantAcceleration => {
            block_var[4] = p.sigma_a * p.sigma_a * dt;
            block_var[5] = p.sigma_alpha * p.sigma_alpha * dt;
        }
    }
    ProcessNoise { model, block_var }
}

/// Nonzero, non-structural blocks of the transition Jacobian. The position
/// rows carry I, I·Δt and ½I·Δt² and are implicit.
#[derive(Clone, Copy, Debug)]
pub struct TransitionBlocks {
    pub model: MotionModel,
    pub dt: f64,
    /// dδθ'/dδθ
    pub j_rot_rot: Matrix3<f64>,
    /// dδθ'/dδω
    pub j_omega_rot: Matrix3<f64>,
    /// dδθ'/dδα
    pub j_alpha_rot: Matrix3<f64>,
}

impl TransitionBlocks {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.model.block_count();
        let m = self.model.error_dim();
        let dt = self.dt;
        let mut f = DMatrix::zeros(m, m);
        let mut set = |bi: usize, bj: usize, m3: Matrix3<f64>| {
            f.view_mut((3 * bi, 3 * bj), (3, 3)).copy_from(&m3);
        };
        let eye = Matrix3::identity();
        for b in 0..n {
            set(b, b, eye);
        }
        set(1, 1, self.j_rot_rot);
        if n >= 4 {
            set(0, 2, eye * dt);
            set(1, 3, self.j_omega_rot);
        }
        if n >= 6 {
            set(0, 4, eye * (0.5 * dt * dt));
            set(1, 5, self.j_alpha_rot);
            set(2, 4, eye * dt);
            set(3, 5, eye * dt);
        }
        f
    }
}

/// Transition Jacobian of the error state over `dt`, differentiated around
/// the current state under the representation's conventions.
pub fn transition_jacobian<R: RotationRepr>(x: &FilterState<R>, dt: f64) -> TransitionBlocks {
    let model = x.model();
    match model {
        MotionModel::ConstantPosition => TransitionBlocks {
            model,
            dt,
            j_rot_rot: Matrix3::identity(),
            j_omega_rot: Matrix3::zeros(),
            j_alpha_rot: Matrix3::zeros(),
        },
        _ => {
            let theta = x.integrated_rotation(dt);
            let (j_rot_rot, j_omega_rot) = R::transition_blocks(&theta, dt);
            TransitionBlocks {
                model,
                dt,
                j_rot_rot,
                j_omega_rot,
                j_alpha_rot: j_omega_rot * (0.5 * dt),
            }
        }
    }
}

const MAX_BLOCKS: usize = 6;

/// Error-state vector stored as 3-vectors per block.
#[derive(Clone, Copy, Debug)]
pub struct BlockVec {
    n: usize,
    b: [Vector3<f64>; MAX_BLOCKS],
}

impl BlockVec {
    pub fn zeros(model: MotionModel) -> Self {
        Self {
            n: model.block_count(),
            b: [Vector3::zeros(); MAX_BLOCKS],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n
    }

    pub fn block(&self, i: usize) -> Vector3<f64> {
        assert!(i < self.n);
        self.b[i]
    }

    pub fn set_block(&mut self, i: usize, v: Vector3<f64>) {
        assert!(i < self.n);
        self.b[i] = v;
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        for i in 0..self.n {
            out.b[i] *= s;
        }
        out
    }

    pub fn as_dense(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(3 * self.n, 1);
        for i in 0..self.n {
            for k in 0..3 {
                v[(3 * i + k, 0)] = self.b[i][k];
            }
        }
        v
    }
}

/// Error-state covariance stored as a grid of 3×3 blocks.
#[derive(Clone, Debug)]
pub struct BlockCov {
    n: usize,
    blocks: [[Matrix3<f64>; MAX_BLOCKS]; MAX_BLOCKS],
}

impl BlockCov {
    pub fn zeros(model: MotionModel) -> Self {
        Self {
            n: model.block_count(),
            blocks: [[Matrix3::zeros(); MAX_BLOCKS]; MAX_BLOCKS],
        }
    }

    /// Diagonal covariance from per-block standard deviations.
    pub fn from_diag_stds(model: MotionModel, stds: &[f64; 6]) -> Self {
        let mut p = Self::zeros(model);
        for i in 0..p.n {
            p.blocks[i][i] = Matrix3::identity() * (stds[i] * stds[i]);
        }
        p
    }

    pub fn n_blocks(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        3 * self.n
    }

    #[inline]
    pub fn block(&self, i: usize, j: usize) -> &Matrix3<f64> {
        &self.blocks[i][j]
    }

    #[inline]
    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut Matrix3<f64> {
        &mut self.blocks[i][j]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m, m);
        for i in 0..self.n {
            for j in 0..self.n {
                out.view_mut((3 * i, 3 * j), (3, 3)).copy_from(&self.blocks[i][j]);
            }
        }
        out
    }

    pub fn from_dense(m: &DMatrix<f64>, model: MotionModel) -> Self {
        assert_eq!(m.nrows(), model.error_dim());
        assert_eq!(m.ncols(), model.error_dim());
        let mut p = Self::zeros(model);
        for i in 0..p.n {
            for j in 0..p.n {
                p.blocks[i][j] = m.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
            }
        }
        p
    }

    /// Largest |P_ij − P_jiᵀ| entry.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i..self.n {
                let d = self.blocks[i][j] - self.blocks[j][i].transpose();
                worst = worst.max(d.abs().max());
            }
        }
        worst
    }

    /// Trace of the position block.
    pub fn position_trace(&self) -> f64 {
        self.blocks[0][0].trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.dim());
        for i in 0..self.n {
            for k in 0..3 {
                d.push(self.blocks[i][i][(k, k)]);
            }
        }
        d
    }

    /// Smallest eigenvalue of the symmetrized dense matrix (diagnostics).
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.to_dense();
        let sym = (&m + m.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        eig.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn mirror_lower(&mut self) {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                self.blocks[j][i] = self.blocks[i][j].transpose();
            }
            let d = self.blocks[i][i];
            self.blocks[i][i] = (d + d.transpose()) * 0.5;
        }
    }
}

/// Propagates `P ← F P Fᵀ + Q` block-wise, skipping all zero and identity
/// block products and filling the lower triangle by transposition.
pub fn propagate_covariance(p: &mut BlockCov, f: &TransitionBlocks, q: &ProcessNoise) {
    assert_eq!(p.n, f.model.block_count(), "covariance does not match model");
    assert_eq!(q.model, f.model, "noise does not match model");
    let n = p.n;
    let dt = f.dt;
    let hdt2 = 0.5 * dt * dt;
    let a = &f.j_rot_rot;
    let b = &f.j_omega_rot;
    let c = &f.j_alpha_rot;

    if f.model != MotionModel::ConstantPosition {
        // G = F·P, exploiting the row structure of F.
        let mut g = [[Matrix3::<f64>::zeros(); MAX_BLOCKS]; MAX_BLOCKS];
        for j in 0..n {
            g[0][j] = p.blocks[0][j] + p.blocks[2][j] * dt;
            g[1][j] = a * p.blocks[1][j] + b * p.blocks[3][j];
            g[2][j] = p.blocks[2][j];
            g[3][j] = p.blocks[3][j];
            if n == 6 {
                g[0][j] += p.blocks[4][j] * hdt2;
                g[1][j] += c * p.blocks[5][j];
                g[2][j] += p.blocks[4][j] * dt;
                g[3][j] += p.blocks[5][j] * dt;
                g[4][j] = p.blocks[4][j];
                g[5][j] = p.blocks[5][j];
            }
        }
        // Upper triangle of H = G·Fᵀ; the (0,0) block is filled after the loop.
        for i in 0..n {
            for j in i.max(1)..n {
                p.blocks[i][j] = match j {
                    1 => {
                        let mut h = g[i][1] * a.transpose() + g[i][3] * b.transpose();
                        if n == 6 {
                            h += g[i][5] * c.transpose();
                        }
                        h
                    }
                    2 => {
                        let mut h = g[i][2];
                        if n == 6 {
                            h += g[i][4] * dt;
                        }
                        h
                    }
                    3 => {
                        let mut h = g[i][3];
                        if n == 6 {
                            h += g[i][5] * dt;
                        }
                        h
                    }
                    _ => g[i][j],
                };
            }
        }
        // j == 0 only occurs for i == 0.
        let mut h00 = g[0][0] + g[0][2] * dt;
        if n == 6 {
            h00 += g[0][4] * hdt2;
        }
        p.blocks[0][0] = h00;
        p.mirror_lower();
    }

    for k in 0..n {
        let var = q.block_var[k];
        if var != 0.0 {
            let d = p.block_mut(k, k);
            d[(0, 0)] += var;
            d[(1, 1)] += var;
            d[(2, 2)] += var;
        }
    }
}
