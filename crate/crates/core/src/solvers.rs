//! Minimization of discrete convex energies and SPD linear solves.
//!
//! Nonlinear Dirichlet problems are solved by damped Newton: the full step
//! is tried first and halved until the Armijo condition (constant `1e-4`)
//! holds. Each Newton system is solved by Jacobi-preconditioned CG.
//!
//! Convergence is measured by the interior energy gradient scaled by
//! `(1 + |ξ|) · sqrt(#elements) · |T|`, where `|ξ|` is the mean slope of the
//! initial data and `|T|` the element volume. This makes one tolerance
//! usable across box sizes, mesh widths and slopes.

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyDensity, HeterogeneousDensity, QuadraticFormDensity};
use crate::error::{Error, Result};
use crate::lagrangian::{LagrangianRealization, PointEval};
use crate::mesh::{MeshDomain, ScalarField, VectorField};
use crate::sparse::{default_cg_cap, dot, norm, pcg, CsrMatrix};

pub const DEFAULT_TOL: f64 = 1e-9;
const ARMIJO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub energy: f64,
    pub converged: bool,
    pub cg_iterations: usize,
    /// Energies after every accepted step, starting with the initial one.
    pub energy_history: Vec<f64>,
    /// Floating-point resolution of the energy sums.
    pub energy_roundoff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_newton: 100,
            max_halvings: 60,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Energy, its roundoff scale, and (optionally) the interior gradient.
fn energy_and_gradient(
    mesh: &MeshDomain,
    density: &dyn EnergyDensity,
    u: &[f64],
    mut grad: Option<&mut [f64]>,
) -> (f64, f64) {
    let asm = mesh.assembler();
    let d = mesh.dimension();
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut p = [0.0; 3];
    let mut eval = PointEval::default();
    let mut energy = 0.0;
    let mut magnitude = 0.0;
    for e in 0..mesh.element_count() {
        mesh.element_gradient(u, e, &mut p);
        density.eval(e, &p[..d], &mut eval);
        let vol = mesh.element_volume(e);
        energy += vol * eval.value;
        magnitude += (vol * eval.value).abs();
        if let Some(g) = grad.as_deref_mut() {
            let lg = mesh.element_gradients(e);
            for (a, &node) in mesh.element_nodes(e).iter().enumerate() {
                let dof = asm.dof_of_node[node as usize];
                if dof != u32::MAX {
                    let mut s = 0.0;
                    for i in 0..d {
                        s += eval.grad[i] * lg[a * d + i];
                    }
                    g[dof as usize] += vol * s;
                }
            }
        }
    }
    (energy, magnitude * f64::EPSILON * 64.0 + f64::MIN_POSITIVE)
}

fn assemble_hessian(mesh: &MeshDomain, density: &dyn EnergyDensity, u: &[f64]) -> CsrMatrix {
    let asm = mesh.assembler();
    let d = mesh.dimension();
    let n = d + 1;
    let mut mat = asm.zero_matrix();
    let mut p = [0.0; 3];
    let mut eval = PointEval::default();
    let mut local = vec![0.0; n * n];
    let mut ag = [0.0; 3];
    for e in 0..mesh.element_count() {
        mesh.element_gradient(u, e, &mut p);
        density.eval(e, &p[..d], &mut eval);
        let vol = mesh.element_volume(e);
        let lg = mesh.element_gradients(e);
        for b in 0..n {
            for i in 0..d {
                ag[i] = (0..d).map(|j| eval.hess[i][j] * lg[b * d + j]).sum();
            }
            for a in 0..n {
                local[a * n + b] = vol * (0..d).map(|i| lg[a * d + i] * ag[i]).sum::<f64>();
            }
        }
        asm.add_element(&mut mat, e, &local);
    }
    mat
}

/// Energy `Σ_T |T| F_T(∇u|_T)` of a nodal field.
pub fn energy(mesh: &MeshDomain, density: &dyn EnergyDensity, u: &ScalarField) -> f64 {
    energy_and_gradient(mesh, density, &u.values, None).0
}

/// Interior gradient of the discrete energy.
pub fn energy_gradient(mesh: &MeshDomain, density: &dyn EnergyDensity, u: &ScalarField) -> Vec<f64> {
    let mut g = vec![0.0; mesh.assembler().dof_count()];
    energy_and_gradient(mesh, density, &u.values, Some(&mut g));
    g
}

/// Normalization of the energy gradient used by the stopping rule.
pub fn residual_scale(mesh: &MeshDomain, slope: f64) -> f64 {
    (1.0 + slope) * (mesh.element_count() as f64).sqrt() * mesh.element_volume(0)
}

fn mean_slope(mesh: &MeshDomain, u: &ScalarField) -> Result<f64> {
    let g = mesh.gradient(u)?;
    mesh.norm_l2_mean_vector(&g, &mesh.full())
}

/// Minimizes the discrete energy over fields equal to `initial` on the
/// boundary; interior values of `initial` are the starting guess.
pub fn minimize_energy(
    mesh: &MeshDomain,
    density: &dyn EnergyDensity,
    initial: &ScalarField,
    opts: &SolveOptions,
) -> Result<(ScalarField, SolveReport)> {
    if initial.len() != mesh.node_count() {
        return Err(Error::Domain("boundary data does not match the mesh".into()));
    }
    if density.dimension() != mesh.dimension() {
        return Err(Error::Domain("energy density dimension does not match the mesh".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let asm = mesh.assembler();
    let ndof = asm.dof_count();
    let scale = residual_scale(mesh, mean_slope(mesh, initial)?);
    let target = opts.tol * scale;

    let mut u = initial.values.clone();
    let mut grad = vec![0.0; ndof];
    let (mut e, mut roundoff) = energy_and_gradient(mesh, density, &u, Some(&mut grad));
    let mut report = SolveReport {
        iterations: 0,
        final_gradient_norm: norm(&grad) / scale,
        energy: e,
        converged: false,
        cg_iterations: 0,
        energy_history: vec![e],
        energy_roundoff: roundoff,
    };
    let g0 = norm(&grad).max(f64::MIN_POSITIVE);
    let mut step = vec![0.0; ndof];
    let mut trial = u.clone();
    let mut trial_grad = vec![0.0; ndof];
    loop {
        let gnorm = norm(&grad);
        report.final_gradient_norm = gnorm / scale;
        report.energy = e;
        report.energy_roundoff = roundoff;
        if gnorm <= target {
            report.converged = true;
            return Ok((ScalarField::new(u), report));
        }
        if report.iterations >= opts.max_newton {
            return Err(Error::NonConvergence(report));
        }
        let hess = assemble_hessian(mesh, density, &u);
        let exact = (0.5 * target / gnorm).clamp(1e-15, 0.5);
        let rel = if density.is_quadratic() {
            exact
        } else {
            exact.max((gnorm / g0).min(1e-2))
        };
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        step.iter_mut().for_each(|v| *v = 0.0);
        let cg = pcg(&hess, &rhs, &mut step, rel, default_cg_cap(ndof))?;
        report.cg_iterations += cg.iterations;

        let slope = dot(&grad, &step);
        if !(slope < 0.0) {
            return Err(Error::Numerical(format!(
                "Newton direction is not a descent direction (g.s = {slope:e})"
            )));
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            trial.copy_from_slice(&u);
            for (k, &node) in asm.node_of_dof.iter().enumerate() {
                trial[node as usize] += alpha * step[k];
            }
            let (et, rt) = energy_and_gradient(mesh, density, &trial, Some(&mut trial_grad));
            if et <= e + ARMIJO * alpha * slope + roundoff.max(rt) {
                std::mem::swap(&mut u, &mut trial);
                std::mem::swap(&mut grad, &mut trial_grad);
                e = et;
                roundoff = rt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::Numerical(format!(
                "line search failed after {} halvings at residual {:.3e}",
                opts.max_halvings,
                gnorm / scale
            )));
        }
        report.iterations += 1;
        report.energy_history.push(e);
    }
}

/// Solves `A x = b` for a symmetric positive definite sparse `A` by
/// preconditioned CG to relative residual `tol`.
pub fn solve_spd(matrix: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let asym = matrix.asymmetry();
    if asym > 1e-12 {
        return Err(Error::Numerical(format!("assembled operator is not symmetric (relative asymmetry {asym:e})")));
    }
    let mut x = vec![0.0; rhs.len()];
    pcg(matrix, rhs, &mut x, tol, default_cg_cap(rhs.len()))?;
    Ok(x)
}

/// Solves the linear Dirichlet problem `-∇·(A_T ∇w) = 0`, `w = f` on the
/// boundary, to CG relative residual `tol`.
pub fn solve_linear_dirichlet(
    mesh: &MeshDomain,
    density: &QuadraticFormDensity,
    boundary_data: &ScalarField,
    tol: f64,
) -> Result<ScalarField> {
    if boundary_data.len() != mesh.node_count() {
        return Err(Error::Domain("boundary data does not match the mesh".into()));
    }
    let asm = mesh.assembler();
    let mut w = boundary_data.values.clone();
    for &node in &asm.node_of_dof {
        w[node as usize] = 0.0;
    }
    let mut grad = vec![0.0; asm.dof_count()];
    energy_and_gradient(mesh, density, &w, Some(&mut grad));
    let k = assemble_hessian(mesh, density, &w);
    let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
    let x = solve_spd(&k, &rhs, tol)?;
    asm.scatter(&x, &mut w);
    Ok(ScalarField::new(w))
}

/// Linearized equation `-∇·(D_p^2 L(∇u, x) ∇w) = 0` around the base
/// gradient field, with `w = f` on the boundary.
pub fn solve_linearized(
    realization: &LagrangianRealization,
    mesh: &MeshDomain,
    base_gradient: &VectorField,
    boundary_data: &ScalarField,
    tol: f64,
) -> Result<ScalarField> {
    let density = HeterogeneousDensity::new(realization, mesh)?;
    solve_linearized_with(&density, mesh, base_gradient, boundary_data, tol)
}

pub fn solve_linearized_with(
    density: &HeterogeneousDensity,
    mesh: &MeshDomain,
    base_gradient: &VectorField,
    boundary_data: &ScalarField,
    tol: f64,
) -> Result<ScalarField> {
    if base_gradient.len() != mesh.element_count() {
        return Err(Error::Domain("base gradient does not match the mesh".into()));
    }
    let lin = QuadraticFormDensity::new(mesh.dimension(), density.hessian_field(base_gradient));
    solve_linear_dirichlet(mesh, &lin, boundary_data, tol)
}

/// Minimizer of the heterogeneous energy of `realization` with the given
/// boundary data.
pub fn minimize_realization(
    realization: &LagrangianRealization,
    mesh: &MeshDomain,
    boundary_data: &ScalarField,
    opts: &SolveOptions,
) -> Result<(ScalarField, SolveReport)> {
    let density = HeterogeneousDensity::new(realization, mesh)?;
    minimize_energy(mesh, &density, boundary_data, opts)
}
