//! Kinematic building blocks that stack into a [`SystemModel`].
//!
//! Each block owns one factor of the state manifold and reports its own
//! velocity and Jacobian from its local state and a shared rigid-body
//! input. [`StackedModel`] concatenates them; blocks do not couple.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::filter::SystemModel;
use crate::manifold::so3::skew;
use crate::manifold::{sphere, Manifold, ManifoldError, StatePoint};

/// Angular and linear velocity of the moving body, both in the frame each
/// block expects (see the block docs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicInput {
    pub angular_velocity: Vector3<f64>,
    pub linear_velocity: Vector3<f64>,
}

pub trait MotionBlock {
    fn manifold(&self) -> Manifold;

    /// Velocity in control coordinates of the block.
    fn velocity(&self, x: &StatePoint, input: &KinematicInput) -> DVector<f64>;

    /// `control_dim x tangent_dim` Jacobian of [`MotionBlock::velocity`].
    fn jacobian(&self, x: &StatePoint, input: &KinematicInput) -> DMatrix<f64>;
}

/// Attitude with angular velocity expressed in the fixed frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalAttitude;

impl MotionBlock for GlobalAttitude {
    fn manifold(&self) -> Manifold {
        Manifold::rotation()
    }

    fn velocity(&self, x: &StatePoint, input: &KinematicInput) -> DVector<f64> {
        let w = x.mat3(0).transpose() * input.angular_velocity;
        DVector::from_column_slice(w.as_slice())
    }

    fn jacobian(&self, x: &StatePoint, input: &KinematicInput) -> DMatrix<f64> {
        let s = skew(&(x.mat3(0).transpose() * input.angular_velocity));
        DMatrix::from_fn(3, 3, |r, c| s[(r, c)])
    }
}

/// Attitude with angular velocity expressed in the body frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct BodyAttitude;

impl MotionBlock for BodyAttitude {
    fn manifold(&self) -> Manifold {
        Manifold::rotation()
    }

    fn velocity(&self, _x: &StatePoint, input: &KinematicInput) -> DVector<f64> {
        DVector::from_column_slice(input.angular_velocity.as_slice())
    }

    fn jacobian(&self, _x: &StatePoint, _input: &KinematicInput) -> DMatrix<f64> {
        DMatrix::zeros(3, 3)
    }
}

/// Gravity fixed in the world frame.
#[derive(Debug, Clone, Copy)]
pub struct GlobalGravity {
    pub magnitude: f64,
}

impl MotionBlock for GlobalGravity {
    fn manifold(&self) -> Manifold {
        Manifold::sphere(self.magnitude).expect("gravity magnitude must be positive")
    }

    fn velocity(&self, _x: &StatePoint, _input: &KinematicInput) -> DVector<f64> {
        DVector::zeros(3)
    }

    fn jacobian(&self, _x: &StatePoint, _input: &KinematicInput) -> DMatrix<f64> {
        DMatrix::zeros(3, 2)
    }
}

/// Gravity expressed in the rotating body frame (body-frame angular velocity).
#[derive(Debug, Clone, Copy)]
pub struct BodyGravity {
    pub magnitude: f64,
}

impl MotionBlock for BodyGravity {
    fn manifold(&self) -> Manifold {
        Manifold::sphere(self.magnitude).expect("gravity magnitude must be positive")
    }

    fn velocity(&self, _x: &StatePoint, input: &KinematicInput) -> DVector<f64> {
        DVector::from_column_slice((-input.angular_velocity).as_slice())
    }

    fn jacobian(&self, _x: &StatePoint, _input: &KinematicInput) -> DMatrix<f64> {
        DMatrix::zeros(3, 2)
    }
}

/// Map from a scalar depth parameter to metric depth.
pub trait DepthParam {
    fn depth(&self, rho: f64) -> f64;
    /// First derivative of [`DepthParam::depth`].
    fn slope(&self, rho: f64) -> f64;
    /// Second derivative of [`DepthParam::depth`].
    fn curvature(&self, rho: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Depth;

impl DepthParam for Depth {
    fn depth(&self, rho: f64) -> f64 {
        rho
    }
    fn slope(&self, _rho: f64) -> f64 {
        1.0
    }
    fn curvature(&self, _rho: f64) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InverseDepth;

impl DepthParam for InverseDepth {
    fn depth(&self, rho: f64) -> f64 {
        1.0 / rho
    }
    fn slope(&self, rho: f64) -> f64 {
        -1.0 / (rho * rho)
    }
    fn curvature(&self, rho: f64) -> f64 {
        2.0 / (rho * rho * rho)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogDepth;

impl DepthParam for LogDepth {
    fn depth(&self, rho: f64) -> f64 {
        rho.exp()
    }
    fn slope(&self, rho: f64) -> f64 {
        rho.exp()
    }
    fn curvature(&self, rho: f64) -> f64 {
        rho.exp()
    }
}

/// Static point seen from a moving camera, stored as a unit bearing and a
/// depth parameter. Inputs are camera-frame angular and linear velocity.
#[derive(Debug, Clone, Copy, Default)]
pub struct BearingLandmark<D> {
    pub param: D,
}

impl<D: DepthParam> BearingLandmark<D> {
    pub fn new(param: D) -> Self {
        BearingLandmark { param }
    }

    /// Landmark position in the camera frame.
    pub fn position(&self, x: &StatePoint) -> Vector3<f64> {
        x.vec3(0) * self.param.depth(x.as_vector()[3])
    }

    /// Block state from a (not necessarily unit) bearing and a depth parameter.
    pub fn state(&self, bearing: &Vector3<f64>, rho: f64) -> StatePoint {
        let b = bearing.normalize();
        StatePoint::from_slice(&[b.x, b.y, b.z, rho])
    }
}

impl<D: DepthParam> MotionBlock for BearingLandmark<D> {
    fn manifold(&self) -> Manifold {
        Manifold::compound(vec![
            Manifold::sphere(1.0).expect("unit sphere"),
            Manifold::euclidean(1).expect("scalar"),
        ])
        .expect("non-empty")
    }

    fn velocity(&self, x: &StatePoint, input: &KinematicInput) -> DVector<f64> {
        let b = x.vec3(0);
        let rho = x.as_vector()[3];
        let (w, v) = (input.angular_velocity, input.linear_velocity);
        let d = self.param.depth(rho);
        let rot = -w - b.cross(&v) / d;
        let rho_dot = -b.dot(&v) / self.param.slope(rho);
        DVector::from_column_slice(&[rot.x, rot.y, rot.z, rho_dot])
    }

    fn jacobian(&self, x: &StatePoint, input: &KinematicInput) -> DMatrix<f64> {
        let b = x.vec3(0);
        let rho = x.as_vector()[3];
        let v = input.linear_velocity;
        let (d, d1, d2) = (self.param.depth(rho), self.param.slope(rho), self.param.curvature(rho));
        let basis = sphere::basis(&b);
        let tb = -skew(&b) * basis;
        let rot_b = skew(&v) * tb / d;
        let rot_rho = b.cross(&v) * (d1 / (d * d));
        let rho_b = -v.transpose() * tb / d1;
        let rho_rho = b.dot(&v) * d2 / (d1 * d1);
        let mut j = DMatrix::zeros(4, 3);
        j.view_mut((0, 0), (3, 2)).copy_from(&rot_b);
        j.view_mut((0, 2), (3, 1)).copy_from(&rot_rho);
        j.view_mut((3, 0), (1, 2)).copy_from(&rho_b);
        j[(3, 2)] = rho_rho;
        j
    }
}

/// Independent blocks stacked into a single model with additive white
/// noise on every control coordinate. It has no measurement.
pub struct StackedModel {
    blocks: Vec<Box<dyn MotionBlock>>,
    manifold: Manifold,
    dt: f64,
    noise: DMatrix<f64>,
}

impl StackedModel {
    pub fn new(blocks: Vec<Box<dyn MotionBlock>>, dt: f64, noise_std: f64) -> Result<Self, ManifoldError> {
        let manifold = Manifold::compound(blocks.iter().map(|b| b.manifold()).collect())?;
        let c = manifold.control_dim();
        Ok(StackedModel { blocks, manifold, dt, noise: DMatrix::identity(c, c) * (noise_std * noise_std) })
    }

    fn split(&self, x: &StatePoint) -> Vec<StatePoint> {
        let parts = self.manifold.parts().expect("compound");
        let mut offset = 0;
        parts
            .iter()
            .map(|p| {
                let s = StatePoint::from_slice(&x.as_vector().as_slice()[offset..offset + p.rep_dim()]);
                offset += p.rep_dim();
                s
            })
            .collect()
    }
}

impl SystemModel for StackedModel {
    type Input = KinematicInput;
    type Context = ();

    fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn noise_dim(&self) -> usize {
        self.manifold.control_dim()
    }

    fn f(&self, x: &StatePoint, u: &KinematicInput, w: &DVector<f64>) -> DVector<f64> {
        let parts: Vec<f64> = self
            .blocks
            .iter()
            .zip(self.split(x))
            .flat_map(|(b, xb)| b.velocity(&xb, u).iter().copied().collect::<Vec<_>>())
            .collect();
        DVector::from_vec(parts) + w
    }

    fn df_dx(&self, x: &StatePoint, u: &KinematicInput) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.manifold.control_dim(), self.manifold.tangent_dim());
        let (mut r, mut c) = (0, 0);
        for (b, xb) in self.blocks.iter().zip(self.split(x)) {
            let j = b.jacobian(&xb, u);
            out.view_mut((r, c), j.shape()).copy_from(&j);
            r += j.nrows();
            c += j.ncols();
        }
        out
    }

    fn df_dw(&self, _x: &StatePoint, _u: &KinematicInput) -> DMatrix<f64> {
        let c = self.manifold.control_dim();
        DMatrix::identity(c, c)
    }

    fn process_noise(&self) -> DMatrix<f64> {
        self.noise.clone()
    }

    fn measurement_dim(&self, _ctx: &()) -> usize {
        0
    }

    fn measurement_noise_dim(&self, _ctx: &()) -> usize {
        0
    }

    fn h(&self, _x: &StatePoint, _v: &DVector<f64>, _ctx: &()) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn dh_dx(&self, _x: &StatePoint, _ctx: &()) -> DMatrix<f64> {
        DMatrix::zeros(0, self.manifold.tangent_dim())
    }

    fn dh_dv(&self, _x: &StatePoint, _ctx: &()) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }

    fn measurement_noise(&self, _ctx: &()) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }
}
