//! Normalized negative Sobolev norms through a discrete Poisson solve.
//!
//! For a load functional `r` on the interior nodes, the normalized norm is
//! `|U|^{-1/2} (r · K^{-1} r)^{1/2}` with `K` the stiffness matrix of `-Δ`
//! with zero boundary values. This equals `‖∇φ‖_{L̲²(U)}` for the discrete
//! solution `φ` of `-Δφ = g`.

use crate::error::{Error, Result};
use crate::mesh::{MeshDomain, ScalarField, VectorField};
use crate::solvers::solve_spd;
use crate::sparse::dot;

/// Relative residual for the Poisson solves.
pub const POISSON_TOL: f64 = 1e-12;

/// `H̲^{-1}` norm of a load functional given on the interior dofs.
pub fn hminus1_functional(mesh: &MeshDomain, load: &[f64]) -> Result<f64> {
    let asm = mesh.assembler();
    if load.len() != asm.dof_count() {
        return Err(Error::Domain("load vector does not match the interior nodes".into()));
    }
    if asm.dof_count() == 0 {
        return Ok(0.0);
    }
    let phi = solve_spd(mesh.laplacian(), load, POISSON_TOL)?;
    Ok((dot(load, &phi).max(0.0) / mesh.total_volume()).sqrt())
}

/// `H̲^{-1}` norm of a nodal field, integrated against test functions with
/// the exact P1 mass matrix.
pub fn hminus1_nodal(mesh: &MeshDomain, field: &ScalarField) -> Result<f64> {
    if field.len() != mesh.node_count() {
        return Err(Error::Domain("field does not match the mesh".into()));
    }
    let asm = mesh.assembler();
    let d = mesh.dimension();
    let diag = 2.0 / ((d + 1) * (d + 2)) as f64;
    let off = 1.0 / ((d + 1) * (d + 2)) as f64;
    let mut load = vec![0.0; asm.dof_count()];
    for e in 0..mesh.element_count() {
        let nodes = mesh.element_nodes(e);
        let vol = mesh.element_volume(e);
        let sum: f64 = nodes.iter().map(|&v| field.values[v as usize]).sum();
        for &a in nodes {
            let dof = asm.dof_of_node[a as usize];
            if dof != u32::MAX {
                let ga = field.values[a as usize];
                load[dof as usize] += vol * ((diag - off) * ga + off * sum);
            }
        }
    }
    hminus1_functional(mesh, &load)
}

/// `H̲^{-1}` norm of a per-element scalar field.
pub fn hminus1_elementwise(mesh: &MeshDomain, values: &[f64]) -> Result<f64> {
    if values.len() != mesh.element_count() {
        return Err(Error::Domain("elementwise field does not match the mesh".into()));
    }
    let asm = mesh.assembler();
    let share = 1.0 / (mesh.dimension() + 1) as f64;
    let mut load = vec![0.0; asm.dof_count()];
    for (e, &g) in values.iter().enumerate() {
        let w = g * mesh.element_volume(e) * share;
        for &a in mesh.element_nodes(e) {
            let dof = asm.dof_of_node[a as usize];
            if dof != u32::MAX {
                load[dof as usize] += w;
            }
        }
    }
    hminus1_functional(mesh, &load)
}

/// Componentwise `H̲^{-1}` norm of a per-element vector field, combined in
/// `ℓ²`.
pub fn hminus1_vector(mesh: &MeshDomain, field: &VectorField) -> Result<f64> {
    if field.dim != mesh.dimension() || field.len() != mesh.element_count() {
        return Err(Error::Domain("vector field does not match the mesh".into()));
    }
    let mut total = 0.0;
    for c in 0..field.dim {
        total += hminus1_elementwise(mesh, &field.component(c))?.powi(2);
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_load_on_unit_interval() {
        let exact = 1.0 / 12f64.sqrt();
        let errs: Vec<f64> = [0.125, 0.0625, 0.03125]
            .iter()
            .map(|&h| {
                let mesh = MeshDomain::cube(0, h, 1).unwrap();
                let g = mesh.interpolate(|_| 1.0);
                (hminus1_nodal(&mesh, &g).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs[0] < 1e-2);
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn zero_load_has_zero_norm() {
        let mesh = MeshDomain::cube(1, 0.5, 2).unwrap();
        assert_eq!(hminus1_nodal(&mesh, &ScalarField::zeros(mesh.node_count())).unwrap(), 0.0);
    }

    #[test]
    fn cosine_eigenfunction_on_centered_interval() {
        // On (-1/2, 1/2), -φ'' = cos(πx) with zero ends gives φ = cos(πx)/π²
        // and ‖φ'‖_{L²} = 1/(π√2).
        let exact = 1.0 / (PI * 2f64.sqrt());
        let vals: Vec<f64> = [1.0 / 32.0, 1.0 / 64.0]
            .iter()
            .map(|&h| {
                let mesh = MeshDomain::cube(0, h, 1).unwrap();
                let g = mesh.interpolate(|x| (PI * x[0]).cos());
                hminus1_nodal(&mesh, &g).unwrap()
            })
            .collect();
        let extrapolated = (4.0 * vals[1] - vals[0]) / 3.0;
        assert!((extrapolated - exact).abs() < 1e-6, "{vals:?}");
    }

    #[test]
    fn elementwise_matches_nodal_for_constants() {
        let mesh = MeshDomain::cube(1, 0.5, 2).unwrap();
        let a = hminus1_nodal(&mesh, &mesh.interpolate(|_| 2.0)).unwrap();
        let b = hminus1_elementwise(&mesh, &vec![2.0; mesh.element_count()]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn poincare_type_bound() {
        // ‖g‖_{H̲^{-1}} ≤ diam/π · ‖g‖_{L̲²} on a cube of side s (diam = s√d).
        let mesh = MeshDomain::cube(1, 0.25, 2).unwrap();
        let side = 3.0;
        for k in 0..5 {
            let g = mesh.interpolate(|x| (x[0] * (k as f64 + 0.5)).sin() + (x[1] * k as f64).cos());
            let lhs = hminus1_nodal(&mesh, &g).unwrap();
            let rhs = side * 2f64.sqrt() / PI * mesh.norm_l2_mean(&g, &mesh.full()).unwrap();
            assert!(lhs <= rhs);
        }
    }

    #[test]
    fn vector_norm_combines_components() {
        let mesh = MeshDomain::cube(1, 0.5, 2).unwrap();
        let mut v = VectorField::zeros(2, mesh.element_count());
        for e in 0..mesh.element_count() {
            v.element_mut(e).copy_from_slice(&[3.0, 4.0]);
        }
        let one = hminus1_elementwise(&mesh, &vec![1.0; mesh.element_count()]).unwrap();
        assert!((hminus1_vector(&mesh, &v).unwrap() - 5.0 * one).abs() < 1e-12);
    }
}
