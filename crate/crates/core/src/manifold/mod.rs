//! State manifolds built from R^n, SO(3) and S^2 primitives.
//!
//! A [`Manifold`] is a tree of primitives. Operators act on points stored as
//! flat vectors ([`StatePoint`]) and on flat tangent/control vectors, with
//! every primitive owning a contiguous slice of each. Rotation matrices are
//! stored row-major.

pub mod so3;
pub mod sphere;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Tolerance used by [`Manifold::check_point`] unless overridden.
pub const DEFAULT_POINT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("{what} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("points are antipodal on the sphere; no unique geodesic")]
    CutLocus,
    #[error("component {leaf} is off the manifold: {reason}")]
    NotOnManifold { leaf: usize, reason: String },
    #[error("compound manifold needs at least one component")]
    EmptyCompound,
    #[error("euclidean component must have positive dimension")]
    ZeroDimension,
    #[error("sphere radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A single primitive manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Euclidean(usize),
    Rotation,
    Sphere { radius: f64 },
}

impl Primitive {
    pub fn tangent_dim(&self) -> usize {
        match self {
            Primitive::Euclidean(n) => *n,
            Primitive::Rotation => 3,
            Primitive::Sphere { .. } => 2,
        }
    }

    /// Dimension of the increment accepted by `oplus`.
    pub fn control_dim(&self) -> usize {
        match self {
            Primitive::Euclidean(n) => *n,
            Primitive::Rotation | Primitive::Sphere { .. } => 3,
        }
    }

    /// Number of stored coordinates.
    pub fn rep_dim(&self) -> usize {
        match self {
            Primitive::Euclidean(n) => *n,
            Primitive::Rotation => 9,
            Primitive::Sphere { .. } => 3,
        }
    }
}

/// A primitive together with its offsets inside the flattened compound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leaf {
    pub primitive: Primitive,
    pub tangent: usize,
    pub control: usize,
    pub rep: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Primitive(Primitive),
    Compound(Vec<Manifold>),
}

/// Descriptor of a (possibly compound) state manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    node: Node,
    leaves: Vec<Leaf>,
    tangent_dim: usize,
    control_dim: usize,
    rep_dim: usize,
}

/// A point on some [`Manifold`], stored as its flat representation.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint(DVector<f64>);

impl StatePoint {
    pub fn from_vec(rep: DVector<f64>) -> Self {
        StatePoint(rep)
    }

    pub fn from_slice(rep: &[f64]) -> Self {
        StatePoint(DVector::from_column_slice(rep))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_vector_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vec3(&self, offset: usize) -> Vector3<f64> {
        Vector3::new(self.0[offset], self.0[offset + 1], self.0[offset + 2])
    }

    pub fn set_vec3(&mut self, offset: usize, v: &Vector3<f64>) {
        self.0.rows_mut(offset, 3).copy_from(v);
    }

    /// Reads a row-major 3x3 block.
    pub fn mat3(&self, offset: usize) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.0.as_slice()[offset..offset + 9])
    }

    pub fn set_mat3(&mut self, offset: usize, m: &Matrix3<f64>) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[offset + 3 * r + c] = m[(r, c)];
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), ManifoldError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ManifoldError::DimensionMismatch { what, expected, actual })
    }
}

fn check_finite(what: &'static str, v: &DVector<f64>) -> Result<(), ManifoldError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ManifoldError::NonFinite(what))
    }
}

fn slice3(v: &DVector<f64>, offset: usize) -> Vector3<f64> {
    Vector3::new(v[offset], v[offset + 1], v[offset + 2])
}

impl Manifold {
    fn primitive(p: Primitive) -> Self {
        Manifold {
            node: Node::Primitive(p),
            leaves: vec![Leaf { primitive: p, tangent: 0, control: 0, rep: 0 }],
            tangent_dim: p.tangent_dim(),
            control_dim: p.control_dim(),
            rep_dim: p.rep_dim(),
        }
    }

    pub fn euclidean(n: usize) -> Result<Self, ManifoldError> {
        if n == 0 {
            return Err(ManifoldError::ZeroDimension);
        }
        Ok(Self::primitive(Primitive::Euclidean(n)))
    }

    pub fn rotation() -> Self {
        Self::primitive(Primitive::Rotation)
    }

    pub fn sphere(radius: f64) -> Result<Self, ManifoldError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ManifoldError::InvalidRadius(radius));
        }
        Ok(Self::primitive(Primitive::Sphere { radius }))
    }

    /// Cartesian product of `parts`, in order.
    pub fn compound(parts: Vec<Manifold>) -> Result<Self, ManifoldError> {
        if parts.is_empty() {
            return Err(ManifoldError::EmptyCompound);
        }
        let mut leaves = Vec::new();
        let (mut t, mut c, mut r) = (0, 0, 0);
        for part in &parts {
            for leaf in &part.leaves {
                leaves.push(Leaf {
                    primitive: leaf.primitive,
                    tangent: t + leaf.tangent,
                    control: c + leaf.control,
                    rep: r + leaf.rep,
                });
            }
            t += part.tangent_dim;
            c += part.control_dim;
            r += part.rep_dim;
        }
        Ok(Manifold {
            node: Node::Compound(parts),
            leaves,
            tangent_dim: t,
            control_dim: c,
            rep_dim: r,
        })
    }

    pub fn tangent_dim(&self) -> usize {
        self.tangent_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_dim
    }

    /// Primitive components in storage order.
    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    /// Direct children of a compound, or `None` for a primitive.
    pub fn parts(&self) -> Option<&[Manifold]> {
        match &self.node {
            Node::Compound(parts) => Some(parts),
            Node::Primitive(_) => None,
        }
    }

    /// Zero vector, identity rotation, and the sphere's `+z` pole.
    pub fn origin(&self) -> StatePoint {
        let mut x = StatePoint(DVector::zeros(self.rep_dim));
        for leaf in &self.leaves {
            match leaf.primitive {
                Primitive::Euclidean(_) => {}
                Primitive::Rotation => x.set_mat3(leaf.rep, &Matrix3::identity()),
                Primitive::Sphere { radius } => x.0[leaf.rep + 2] = radius,
            }
        }
        x
    }

    /// Verifies the length, finiteness and constraints of `x`.
    pub fn check_point(&self, x: &StatePoint, tol: f64) -> Result<(), ManifoldError> {
        check_len("state", self.rep_dim, x.len())?;
        if !x.is_finite() {
            return Err(ManifoldError::NonFinite("state"));
        }
        for (i, leaf) in self.leaves.iter().enumerate() {
            match leaf.primitive {
                Primitive::Euclidean(_) => {}
                Primitive::Rotation => {
                    let r = x.mat3(leaf.rep);
                    if !so3::is_rotation(&r, tol) {
                        return Err(ManifoldError::NotOnManifold {
                            leaf: i,
                            reason: "rotation block is not orthonormal".into(),
                        });
                    }
                }
                Primitive::Sphere { radius } => {
                    let n = x.vec3(leaf.rep).norm();
                    if (n - radius).abs() > tol * radius {
                        return Err(ManifoldError::NotOnManifold {
                            leaf: i,
                            reason: format!("sphere point has norm {n}, expected {radius}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Moves `x` by the tangent vector `u`.
    pub fn boxplus(&self, x: &StatePoint, u: &DVector<f64>) -> Result<StatePoint, ManifoldError> {
        check_len("state", self.rep_dim, x.len())?;
        check_len("tangent vector", self.tangent_dim, u.len())?;
        check_finite("tangent vector", u)?;
        let mut out = x.clone();
        for leaf in &self.leaves {
            match leaf.primitive {
                Primitive::Euclidean(n) => {
                    for k in 0..n {
                        out.0[leaf.rep + k] += u[leaf.tangent + k];
                    }
                }
                Primitive::Rotation => {
                    let r = x.mat3(leaf.rep) * so3::exp(&slice3(u, leaf.tangent));
                    out.set_mat3(leaf.rep, &r);
                }
                Primitive::Sphere { .. } => {
                    let du = Vector2::new(u[leaf.tangent], u[leaf.tangent + 1]);
                    out.set_vec3(leaf.rep, &sphere::boxplus(&x.vec3(leaf.rep), &du));
                }
            }
        }
        Ok(out)
    }

    /// Tangent vector at `x` pointing to `y`, so that `x.boxplus(y.boxminus(x)) == y`.
    pub fn boxminus(&self, y: &StatePoint, x: &StatePoint) -> Result<DVector<f64>, ManifoldError> {
        check_len("state", self.rep_dim, x.len())?;
        check_len("state", self.rep_dim, y.len())?;
        let mut out = DVector::zeros(self.tangent_dim);
        for leaf in &self.leaves {
            match leaf.primitive {
                Primitive::Euclidean(n) => {
                    for k in 0..n {
                        out[leaf.tangent + k] = y.0[leaf.rep + k] - x.0[leaf.rep + k];
                    }
                }
                Primitive::Rotation => {
                    let w = so3::log(&(x.mat3(leaf.rep).transpose() * y.mat3(leaf.rep)));
                    out.rows_mut(leaf.tangent, 3).copy_from(&w);
                }
                Primitive::Sphere { .. } => {
                    let d = sphere::boxminus(&y.vec3(leaf.rep), &x.vec3(leaf.rep))?;
                    out.rows_mut(leaf.tangent, 2).copy_from(&d);
                }
            }
        }
        Ok(out)
    }

    /// Moves `x` by the control increment `v` (rotation applied on the
    /// right for SO(3) and on the left for S^2).
    pub fn oplus(&self, x: &StatePoint, v: &DVector<f64>) -> Result<StatePoint, ManifoldError> {
        check_len("state", self.rep_dim, x.len())?;
        check_len("control increment", self.control_dim, v.len())?;
        check_finite("control increment", v)?;
        let mut out = x.clone();
        for leaf in &self.leaves {
            match leaf.primitive {
                Primitive::Euclidean(n) => {
                    for k in 0..n {
                        out.0[leaf.rep + k] += v[leaf.control + k];
                    }
                }
                Primitive::Rotation => {
                    let r = x.mat3(leaf.rep) * so3::exp(&slice3(v, leaf.control));
                    out.set_mat3(leaf.rep, &r);
                }
                Primitive::Sphere { .. } => {
                    out.set_vec3(leaf.rep, &sphere::oplus(&x.vec3(leaf.rep), &slice3(v, leaf.control)));
                }
            }
        }
        Ok(out)
    }

    /// Jacobians of `((x boxplus u) oplus v) boxminus y` with respect to
    /// `u` and `v`, evaluated where that expression is zero.
    ///
    /// Both are block diagonal over the leaves.
    pub fn operator_jacobians(
        &self,
        x: &StatePoint,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), ManifoldError> {
        check_len("state", self.rep_dim, x.len())?;
        check_len("tangent vector", self.tangent_dim, u.len())?;
        check_len("control increment", self.control_dim, v.len())?;
        check_finite("tangent vector", u)?;
        check_finite("control increment", v)?;
        let n = self.tangent_dim;
        let mut du = DMatrix::zeros(n, n);
        let mut dv = DMatrix::zeros(n, self.control_dim);
        for leaf in &self.leaves {
            let (t, c) = (leaf.tangent, leaf.control);
            match leaf.primitive {
                Primitive::Euclidean(k) => {
                    for i in 0..k {
                        du[(t + i, t + i)] = 1.0;
                        dv[(t + i, c + i)] = 1.0;
                    }
                }
                Primitive::Rotation => {
                    let uu = slice3(u, t);
                    let vv = slice3(v, c);
                    let ju = so3::exp(&-vv) * so3::jacobian(&uu).transpose();
                    let jv = so3::jacobian(&vv).transpose();
                    du.fixed_view_mut::<3, 3>(t, t).copy_from(&ju);
                    dv.fixed_view_mut::<3, 3>(t, c).copy_from(&jv);
                }
                Primitive::Sphere { .. } => {
                    let uu = Vector2::new(u[t], u[t + 1]);
                    let vv = slice3(v, c);
                    let (ju, jv) = sphere::operator_jacobians(&x.vec3(leaf.rep), &uu, &vv);
                    du.fixed_view_mut::<2, 2>(t, t).copy_from(&ju);
                    dv.fixed_view_mut::<2, 3>(t, c).copy_from(&jv);
                }
            }
        }
        Ok((du, dv))
    }

    /// Jacobian with respect to `u` only; see [`Manifold::operator_jacobians`].
    pub fn diff_u(&self, x: &StatePoint, u: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>, ManifoldError> {
        Ok(self.operator_jacobians(x, u, v)?.0)
    }

    /// Jacobian with respect to `v` only; see [`Manifold::operator_jacobians`].
    pub fn diff_v(&self, x: &StatePoint, u: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>, ManifoldError> {
        Ok(self.operator_jacobians(x, u, v)?.1)
    }

    /// Restores exact orthonormality and radii after accumulated roundoff.
    pub fn normalize(&self, x: &mut StatePoint) {
        for leaf in &self.leaves {
            match leaf.primitive {
                Primitive::Euclidean(_) => {}
                Primitive::Rotation => {
                    let r = so3::project_to_rotation(&x.mat3(leaf.rep));
                    x.set_mat3(leaf.rep, &r);
                }
                Primitive::Sphere { radius } => {
                    let p = x.vec3(leaf.rep);
                    x.set_vec3(leaf.rep, &(p * (radius / p.norm())));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifold {
        Manifold::compound(vec![
            Manifold::euclidean(2).unwrap(),
            Manifold::compound(vec![Manifold::rotation(), Manifold::sphere(2.0).unwrap()]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn offsets_accumulate_through_nesting() {
        let m = sample();
        assert_eq!((m.tangent_dim(), m.control_dim(), m.rep_dim()), (7, 8, 14));
        let offsets: Vec<_> = m.leaves().iter().map(|l| (l.tangent, l.control, l.rep)).collect();
        assert_eq!(offsets, vec![(0, 0, 0), (2, 2, 2), (5, 5, 11)]);
    }

    #[test]
    fn constructors_reject_degenerate_input() {
        assert_eq!(Manifold::compound(vec![]), Err(ManifoldError::EmptyCompound));
        assert_eq!(Manifold::euclidean(0), Err(ManifoldError::ZeroDimension));
        assert!(matches!(Manifold::sphere(-1.0), Err(ManifoldError::InvalidRadius(_))));
        assert!(matches!(Manifold::sphere(f64::NAN), Err(ManifoldError::InvalidRadius(_))));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = sample();
        let x = m.origin();
        let err = m.boxplus(&x, &DVector::zeros(6)).unwrap_err();
        assert_eq!(err, ManifoldError::DimensionMismatch { what: "tangent vector", expected: 7, actual: 6 });
    }

    #[test]
    fn origin_is_on_manifold_and_roundtrips() {
        let m = sample();
        let x = m.origin();
        m.check_point(&x, 1e-12).unwrap();
        let u = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, -0.7]);
        let y = m.boxplus(&x, &u).unwrap();
        m.check_point(&y, 1e-12).unwrap();
        assert!((m.boxminus(&y, &x).unwrap() - u).norm() < 1e-12);
    }

    #[test]
    fn zero_increments_give_identity_jacobian() {
        let m = sample();
        let x = m.boxplus(&m.origin(), &DVector::from_element(7, 0.3)).unwrap();
        let du = m.diff_u(&x, &DVector::zeros(7), &DVector::zeros(8)).unwrap();
        assert_eq!(du, DMatrix::identity(7, 7));
    }

    #[test]
    fn non_finite_increment_is_rejected() {
        let m = sample();
        let mut u = DVector::zeros(7);
        u[3] = f64::NAN;
        assert_eq!(m.boxplus(&m.origin(), &u), Err(ManifoldError::NonFinite("tangent vector")));
    }

    #[test]
    fn check_point_flags_bad_blocks() {
        let m = sample();
        let mut x = m.origin();
        x.set_vec3(11, &Vector3::new(0.0, 0.0, 3.0));
        assert!(matches!(m.check_point(&x, 1e-9), Err(ManifoldError::NotOnManifold { leaf: 2, .. })));
    }
}
