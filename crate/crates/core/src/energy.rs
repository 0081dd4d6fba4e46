//! Integrands of the discrete energies `Σ_T |T| F_T(∇u|_T)`.

use crate::error::{Error, Result};
use crate::lagrangian::{LagrangianRealization, NonlinearityKind, NonlinearitySpec, PointEval};
use crate::linalg::SmallMat;
use crate::mesh::{MeshDomain, VectorField};

/// Per-element integrand `p ↦ F_T(p)` with its first two derivatives.
pub trait EnergyDensity: Send + Sync {
    fn dimension(&self) -> usize;

    fn eval(&self, element: usize, p: &[f64], out: &mut PointEval);

    /// Quadratic integrands are minimized by a single exact Newton step.
    fn is_quadratic(&self) -> bool {
        false
    }
}

/// A spatially homogeneous Lagrangian `p ↦ L̄(p)`.
pub trait EffectiveLagrangian: Send + Sync {
    fn dimension(&self) -> usize;

    fn eval(&self, p: &[f64], out: &mut PointEval);

    fn is_quadratic(&self) -> bool {
        false
    }

    /// Box of slopes on which the Lagrangian is known, if bounded.
    fn coverage(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

/// The random Lagrangian frozen on a mesh: one coefficient per element,
/// evaluated at the element barycenter.
#[derive(Clone, Debug)]
pub struct HeterogeneousDensity {
    pub nonlinearity: NonlinearitySpec,
    pub coefficients: Vec<f64>,
    dim: usize,
}

impl HeterogeneousDensity {
    pub fn new(realization: &LagrangianRealization, mesh: &MeshDomain) -> Result<Self> {
        if mesh.dimension() != realization.dimension() {
            return Err(Error::Domain(format!(
                "mesh dimension {} differs from realization dimension {}",
                mesh.dimension(),
                realization.dimension()
            )));
        }
        let coefficients = (0..mesh.element_count())
            .map(|e| realization.coefficient(mesh.barycenter(e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nonlinearity: realization.nonlinearity,
            coefficients,
            dim: mesh.dimension(),
        })
    }

    /// `D_p^2 L(∇u|_T, x_T)` on every element.
    pub fn hessian_field(&self, gradient: &VectorField) -> Vec<SmallMat> {
        let mut out = PointEval::default();
        (0..self.coefficients.len())
            .map(|e| {
                self.eval(e, gradient.element(e), &mut out);
                out.hess
            })
            .collect()
    }

    /// `D_p L(∇u|_T, x_T)` on every element.
    pub fn flux(&self, gradient: &VectorField) -> VectorField {
        let mut out = PointEval::default();
        let mut flux = VectorField::zeros(self.dim, self.coefficients.len());
        for e in 0..self.coefficients.len() {
            self.eval(e, gradient.element(e), &mut out);
            flux.element_mut(e).copy_from_slice(&out.grad[..self.dim]);
        }
        flux
    }
}

impl EnergyDensity for HeterogeneousDensity {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn eval(&self, element: usize, p: &[f64], out: &mut PointEval) {
        self.nonlinearity.eval(self.coefficients[element], p, out);
    }

    fn is_quadratic(&self) -> bool {
        self.nonlinearity.kind == NonlinearityKind::Quadratic
    }
}

/// Linear-equation energy `½ p·A_T p` with one symmetric matrix per element.
#[derive(Clone, Debug)]
pub struct QuadraticFormDensity {
    pub matrices: Vec<SmallMat>,
    dim: usize,
}

impl QuadraticFormDensity {
    pub fn new(dim: usize, matrices: Vec<SmallMat>) -> Self {
        Self { matrices, dim }
    }

    /// `A_T ∇w|_T` on every element.
    pub fn flux(&self, gradient: &VectorField) -> VectorField {
        let d = self.dim;
        let mut flux = VectorField::zeros(d, self.matrices.len());
        for (e, a) in self.matrices.iter().enumerate() {
            let g = gradient.element(e);
            let dst = flux.element_mut(e);
            for i in 0..d {
                dst[i] = (0..d).map(|j| a[i][j] * g[j]).sum();
            }
        }
        flux
    }
}

impl EnergyDensity for QuadraticFormDensity {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn eval(&self, element: usize, p: &[f64], out: &mut PointEval) {
        quadratic_eval(&self.matrices[element], self.dim, p, out);
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

/// The same effective Lagrangian on every element.
pub struct UniformDensity<'a> {
    pub lagrangian: &'a dyn EffectiveLagrangian,
}

impl EnergyDensity for UniformDensity<'_> {
    fn dimension(&self) -> usize {
        self.lagrangian.dimension()
    }

    fn eval(&self, _element: usize, p: &[f64], out: &mut PointEval) {
        self.lagrangian.eval(p, out);
    }

    fn is_quadratic(&self) -> bool {
        self.lagrangian.is_quadratic()
    }
}

/// `L(p) = L(p, ·)` for a spatially constant coefficient `a`; this is the
/// exact effective Lagrangian of a deterministic law.
#[derive(Clone, Copy, Debug)]
pub struct ClosedFormLagrangian {
    pub nonlinearity: NonlinearitySpec,
    pub coefficient: f64,
    pub dim: usize,
}

impl EffectiveLagrangian for ClosedFormLagrangian {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn eval(&self, p: &[f64], out: &mut PointEval) {
        self.nonlinearity.eval(self.coefficient, p, out);
    }

    fn is_quadratic(&self) -> bool {
        self.nonlinearity.kind == NonlinearityKind::Quadratic
    }
}

/// Constant-matrix quadratic Lagrangian `½ p·A p`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantQuadratic {
    pub matrix: SmallMat,
    pub dim: usize,
}

impl EffectiveLagrangian for ConstantQuadratic {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn eval(&self, p: &[f64], out: &mut PointEval) {
        quadratic_eval(&self.matrix, self.dim, p, out);
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

fn quadratic_eval(a: &SmallMat, d: usize, p: &[f64], out: &mut PointEval) {
    *out = PointEval::default();
    let mut v = 0.0;
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += a[i][j] * p[j];
            out.hess[i][j] = a[i][j];
        }
        out.grad[i] = s;
        v += s * p[i];
    }
    out.value = 0.5 * v;
}
