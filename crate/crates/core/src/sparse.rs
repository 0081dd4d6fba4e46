//! CSR matrices over the interior nodes of a mesh and a Jacobi-preconditioned
//! conjugate gradient solver.

use crate::error::{Error, Result};
use crate::mesh::MeshDomain;

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j as u32, v));
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut r in rows {
            r.sort_by_key(|&(c, _)| c);
            let mut last = NONE;
            for (c, v) in r {
                if c == last {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = c;
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.vals[p])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&(j as u32)).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = s;
        }
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                if j > i {
                    worst = worst.max((self.vals[k] - self.get(j, i)).abs());
                }
            }
        }
        worst / scale
    }
}

/// Interior-node numbering and the CSR pattern of a P1 stiffness matrix,
/// with the CSR slot of every element-local entry precomputed.
#[derive(Debug)]
pub struct Assembler {
    pub dof_of_node: Vec<u32>,
    pub node_of_dof: Vec<u32>,
    pattern: CsrMatrix,
    slots: Vec<u32>,
    local: usize,
}

impl Assembler {
    pub fn new(mesh: &MeshDomain) -> Self {
        let mut dof_of_node = vec![NONE; mesh.node_count()];
        let mut node_of_dof = Vec::new();
        for i in 0..mesh.node_count() {
            if !mesh.is_boundary(i) {
                dof_of_node[i] = node_of_dof.len() as u32;
                node_of_dof.push(i as u32);
            }
        }
        let n = node_of_dof.len();
        let local = mesh.dimension() + 1;
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        for e in 0..mesh.element_count() {
            let nodes = mesh.element_nodes(e);
            for &a in nodes {
                let da = dof_of_node[a as usize];
                if da == NONE {
                    continue;
                }
                for &b in nodes {
                    let db = dof_of_node[b as usize];
                    if db != NONE {
                        rows[da as usize].push(db);
                    }
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(&r);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        let pattern = CsrMatrix { n, row_ptr, cols, vals };
        let mut slots = vec![NONE; mesh.element_count() * local * local];
        for e in 0..mesh.element_count() {
            let nodes = mesh.element_nodes(e);
            for (a, &na) in nodes.iter().enumerate() {
                let da = dof_of_node[na as usize];
                if da == NONE {
                    continue;
                }
                for (b, &nb) in nodes.iter().enumerate() {
                    let db = dof_of_node[nb as usize];
                    if db != NONE {
                        slots[(e * local + a) * local + b] =
                            pattern.position(da as usize, db as usize).unwrap() as u32;
                    }
                }
            }
        }
        Self {
            dof_of_node,
            node_of_dof,
            pattern,
            slots,
            local,
        }
    }

    pub fn dof_count(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn zero_matrix(&self) -> CsrMatrix {
        self.pattern.clone()
    }

    /// Adds the dense local matrix (row-major, `(d+1)^2`) of element `e`;
    /// entries touching boundary nodes are dropped.
    pub fn add_element(&self, mat: &mut CsrMatrix, e: usize, local: &[f64]) {
        let n = self.local;
        let slots = &self.slots[e * n * n..(e + 1) * n * n];
        for (k, &s) in slots.iter().enumerate() {
            if s != NONE {
                mat.vals[s as usize] += local[k];
            }
        }
    }

    /// Interior part of a nodal vector.
    pub fn gather(&self, nodal: &[f64]) -> Vec<f64> {
        self.node_of_dof.iter().map(|&i| nodal[i as usize]).collect()
    }

    /// Writes interior values back into a nodal vector.
    pub fn scatter(&self, dofs: &[f64], nodal: &mut [f64]) {
        for (d, &i) in self.node_of_dof.iter().enumerate() {
            nodal[i as usize] = dofs[d];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Iteration cap `50 sqrt(n)` (at least 50).
pub fn default_cg_cap(n: usize) -> usize {
    ((50.0 * (n as f64).sqrt()).ceil() as usize).max(50)
}

/// Jacobi-preconditioned CG for `A x = b` to relative residual `rel_tol`,
/// starting from the given `x`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<CgReport> {
    let n = a.size();
    if b.len() != n || x.len() != n {
        return Err(Error::LinearSolver(format!(
            "dimension mismatch: matrix {n}, rhs {}, unknowns {}",
            b.len(),
            x.len()
        )));
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = rel_tol * b_norm;
    let mut res = norm(&r);
    let mut it = 0;
    while res > target {
        if it >= max_iter {
            return Err(Error::LinearSolver(format!(
                "conjugate gradients stagnated after {it} iterations (relative residual {:.3e}, target {rel_tol:.1e})",
                res / b_norm
            )));
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver(format!(
                "operator is not positive definite (p.Ap = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm(&r);
        it += 1;
    }
    Ok(CgReport {
        iterations: it,
        relative_residual: res / b_norm,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + i as f64 * 0.1));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn cg_solves_tridiagonal_system() {
        let a = tridiagonal(40);
        let x_true: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 40];
        a.mul_vec(&x_true, &mut b);
        let mut x = vec![0.0; 40];
        let rep = pcg(&a, &b, &mut x, 1e-12, 1000).unwrap();
        assert!(rep.relative_residual <= 1e-12);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-9);
        }
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = tridiagonal(5);
        let mut x = vec![1.0; 5];
        pcg(&a, &[0.0; 5], &mut x, 1e-10, 10).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stagnation_is_reported() {
        let a = tridiagonal(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        assert!(matches!(pcg(&a, &b, &mut x, 1e-14, 3), Err(Error::LinearSolver(_))));
    }

    #[test]
    fn indefinite_operator_is_reported() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        let mut x = vec![0.0; 2];
        assert!(pcg(&a, &[1.0, 1.0], &mut x, 1e-10, 10).is_err());
    }

    #[test]
    fn assembler_pattern_matches_mesh() {
        let mesh = MeshDomain::cube(1, 0.5, 2).unwrap();
        let asm = mesh.assembler();
        assert_eq!(asm.dof_count(), 25);
        let k = mesh.laplacian();
        assert_eq!(k.size(), 25);
        assert!(k.asymmetry() < 1e-15);
        // Interior row of the Kuhn Laplacian: 4 on the diagonal, -1 on axes.
        let center = asm.dof_of_node[mesh.node_at(&[0.0, 0.0]).unwrap()] as usize;
        assert!((k.get(center, center) - 4.0).abs() < 1e-12);
        let nodal: Vec<f64> = (0..mesh.node_count()).map(|i| i as f64).collect();
        let mut back = vec![0.0; mesh.node_count()];
        asm.scatter(&asm.gather(&nodal), &mut back);
        for i in 0..mesh.node_count() {
            assert_eq!(back[i], if mesh.is_boundary(i) { 0.0 } else { i as f64 });
        }
    }
}
