//! Tabulated effective Lagrangian with a C¹ tensor Hermite interpolant.
//!
//! Each node of a rectangular slope grid carries estimates of `L̄`, `DL̄` and
//! `D²L̄`. On every grid cell the interpolant is the tensor product of cubic
//! Hermite polynomials fed with the value, the gradient and the mixed
//! second derivatives; mixed derivatives of order three are taken to be
//! zero. Outside the grid the table is continued by the convex quadratic
//! extension `L̄(π p) + DL̄(π p)·(p − π p) + ½|p − π p|²`, with `π` the
//! projection onto the grid box.

use serde::{Deserialize, Serialize};

use crate::cell::{estimate_lbar_point, LbarPointEstimate, LbarSettings};
use crate::energy::EffectiveLagrangian;
use crate::error::{Error, Result};
use crate::lagrangian::{NonlinearityKind, PointEval, MAX_DIM};
use crate::linalg::{from_rows, symmetric_eigenvalues};

/// Largest admissible grid spacing.
pub const MAX_SPACING: f64 = 0.25;
/// Relative slack on the Hessian bounds of the interpolant.
pub const HESSIAN_SLACK: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedLagrangian {
    pub dimension: usize,
    pub lambda_max: f64,
    pub quadratic: bool,
    /// Grid coordinates per axis, increasing.
    pub axes: Vec<Vec<f64>>,
    /// Node data in lexicographic order with axis 0 fastest.
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    pub hessians: Vec<Vec<Vec<f64>>>,
    pub value_stderr: Vec<f64>,
    pub gradient_stderr: Vec<Vec<f64>>,
    pub hessian_stderr: Vec<Vec<Vec<f64>>>,
    pub value_uncertainty: Vec<f64>,
    pub hessian_uncertainty: Vec<Vec<Vec<f64>>>,
}

/// Cubic Hermite basis on `[0, 1]`: `(value, first, second)` derivatives
/// in `t` of the four shape functions `h00, h10, h01, h11`.
fn hermite(t: f64) -> [[f64; 3]; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        [2.0 * t3 - 3.0 * t2 + 1.0, 6.0 * t2 - 6.0 * t, 12.0 * t - 6.0],
        [t3 - 2.0 * t2 + t, 3.0 * t2 - 4.0 * t + 1.0, 6.0 * t - 4.0],
        [-2.0 * t3 + 3.0 * t2, -6.0 * t2 + 6.0 * t, -12.0 * t + 6.0],
        [t3 - t2, 3.0 * t2 - 2.0 * t, 6.0 * t - 2.0],
    ]
}

impl HomogenizedLagrangian {
    /// Builds the table from per-node estimates listed in grid order.
    pub fn from_estimates(
        axes: Vec<Vec<f64>>,
        estimates: &[LbarPointEstimate],
        lambda_max: f64,
        quadratic: bool,
    ) -> Result<Self> {
        let d = axes.len();
        let count: usize = axes.iter().map(Vec::len).product();
        if estimates.len() != count {
            return Err(Error::Consistency(format!(
                "{} estimates for a grid of {count} nodes",
                estimates.len()
            )));
        }
        let table = Self {
            dimension: d,
            lambda_max,
            quadratic,
            values: estimates.iter().map(|e| e.value).collect(),
            gradients: estimates.iter().map(|e| e.gradient.clone()).collect(),
            hessians: estimates.iter().map(|e| e.hessian.clone()).collect(),
            value_stderr: estimates.iter().map(|e| e.value_stderr).collect(),
            gradient_stderr: estimates.iter().map(|e| e.gradient_stderr.clone()).collect(),
            hessian_stderr: estimates.iter().map(|e| e.hessian_stderr.clone()).collect(),
            value_uncertainty: estimates.iter().map(|e| e.value_uncertainty).collect(),
            hessian_uncertainty: estimates.iter().map(|e| e.hessian_uncertainty.clone()).collect(),
            axes,
        };
        table.validate_grid()?;
        for (i, e) in estimates.iter().enumerate() {
            let node = table.node(i);
            if e.xi.iter().zip(&node).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(Error::Consistency(format!("estimate at {:?} listed for node {node:?}", e.xi)));
            }
        }
        Ok(table)
    }

    /// Table filled from exact values of a known Lagrangian.
    pub fn from_function(
        axes: Vec<Vec<f64>>,
        lagrangian: &dyn EffectiveLagrangian,
        lambda_max: f64,
    ) -> Result<Self> {
        let d = axes.len();
        let count: usize = axes.iter().map(Vec::len).product();
        let mut table = Self {
            dimension: d,
            lambda_max,
            quadratic: lagrangian.is_quadratic(),
            axes,
            values: Vec::with_capacity(count),
            gradients: Vec::with_capacity(count),
            hessians: Vec::with_capacity(count),
            value_stderr: vec![0.0; count],
            gradient_stderr: vec![vec![0.0; d]; count],
            hessian_stderr: vec![vec![vec![0.0; d]; d]; count],
            value_uncertainty: vec![0.0; count],
            hessian_uncertainty: vec![vec![vec![0.0; d]; d]; count],
        };
        table.validate_grid()?;
        let mut out = PointEval::default();
        for i in 0..count {
            lagrangian.eval(&table.node(i), &mut out);
            table.values.push(out.value);
            table.gradients.push(out.grad[..d].to_vec());
            table.hessians.push((0..d).map(|r| out.hess[r][..d].to_vec()).collect());
        }
        Ok(table)
    }

    fn validate_grid(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.dimension) || self.axes.len() != self.dimension {
            return Err(Error::Config(format!("invalid table dimension {}", self.dimension)));
        }
        for (i, axis) in self.axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::Config(format!("axis {i} needs at least two grid points")));
            }
            for w in axis.windows(2) {
                let s = w[1] - w[0];
                if !(s > 0.0) || s > MAX_SPACING + 1e-12 {
                    return Err(Error::Config(format!(
                        "axis {i} spacing {s} must be positive and at most {MAX_SPACING}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    /// Slope of node `i`.
    pub fn node(&self, mut i: usize) -> Vec<f64> {
        self.axes
            .iter()
            .map(|axis| {
                let v = axis[i % axis.len()];
                i /= axis.len();
                v
            })
            .collect()
    }

    fn node_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for i in (0..self.dimension).rev() {
            idx = idx * self.axes[i].len() + multi[i];
        }
        idx
    }

    pub fn lower(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[0]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.axes.iter().map(|a| *a.last().unwrap()).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.axes)
            .all(|(&x, a)| x >= a[0] - 1e-12 && x <= a[a.len() - 1] + 1e-12)
    }

    /// Mixed derivative data `∂^α L̄` at a node for `α ∈ {0,1}^d`.
    fn derivative_data(&self, node: usize, alpha: &[usize]) -> f64 {
        let dirs: Vec<usize> = (0..self.dimension).filter(|&i| alpha[i] == 1).collect();
        match dirs.len() {
            0 => self.values[node],
            1 => self.gradients[node][dirs[0]],
            2 => self.hessians[node][dirs[0]][dirs[1]],
            _ => 0.0,
        }
    }

    /// Interpolant inside the grid box (`p` must be inside).
    fn interpolate(&self, p: &[f64], out: &mut PointEval) {
        let d = self.dimension;
        let mut base = [0usize; MAX_DIM];
        let mut width = [0.0; MAX_DIM];
        let mut basis = [[[0.0; 3]; 4]; MAX_DIM];
        for i in 0..d {
            let axis = &self.axes[i];
            let x = p[i].clamp(axis[0], axis[axis.len() - 1]);
            let mut k = axis.partition_point(|&v| v <= x).saturating_sub(1);
            k = k.min(axis.len() - 2);
            base[i] = k;
            width[i] = axis[k + 1] - axis[k];
            basis[i] = hermite((x - axis[k]) / width[i]);
        }
        *out = PointEval::default();
        let mut multi = [0usize; MAX_DIM];
        let mut alpha = [0usize; MAX_DIM];
        for corner in 0..(1usize << d) {
            for i in 0..d {
                multi[i] = base[i] + ((corner >> i) & 1);
            }
            let node = self.node_index(&multi[..d]);
            for a in 0..(1usize << d) {
                for i in 0..d {
                    alpha[i] = (a >> i) & 1;
                }
                let data = self.derivative_data(node, &alpha[..d]);
                if data == 0.0 {
                    continue;
                }
                // Shape function index per axis and its scaling by the width.
                let mut f = [[0.0; 3]; MAX_DIM];
                for i in 0..d {
                    let c = (corner >> i) & 1;
                    let which = 2 * c + alpha[i];
                    let scale = if alpha[i] == 1 { width[i] } else { 1.0 };
                    f[i] = [
                        basis[i][which][0] * scale,
                        basis[i][which][1] * scale / width[i],
                        basis[i][which][2] * scale / (width[i] * width[i]),
                    ];
                }
                let prod_except = |skip: &[usize], order: &[usize; MAX_DIM]| -> f64 {
                    let mut v = 1.0;
                    for i in 0..d {
                        v *= if skip.contains(&i) { f[i][order[i]] } else { f[i][0] };
                    }
                    v
                };
                out.value += data * prod_except(&[], &[0; MAX_DIM]);
                for k in 0..d {
                    let mut ord = [0; MAX_DIM];
                    ord[k] = 1;
                    out.grad[k] += data * prod_except(&[k], &ord);
                    for l in 0..d {
                        let mut ord2 = [0; MAX_DIM];
                        if k == l {
                            ord2[k] = 2;
                            out.hess[k][l] += data * prod_except(&[k], &ord2);
                        } else {
                            ord2[k] = 1;
                            ord2[l] = 1;
                            out.hess[k][l] += data * prod_except(&[k, l], &ord2);
                        }
                    }
                }
            }
        }
    }

    /// Extremal eigenvalues of the tabulated Hessians.
    pub fn tabulated_eigenvalue_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for h in &self.hessians {
            for e in symmetric_eigenvalues(&from_rows(h), self.dimension) {
                lo = lo.min(e);
                hi = hi.max(e);
            }
        }
        (lo, hi)
    }

    /// Probes the interpolant on a grid refined `refine` times per cell and
    /// along node-to-node segments; any Hessian outside
    /// `[(1 − 0.05) Id, (1 + 0.05) Λ Id]` or any failure of midpoint
    /// convexity is a consistency error.
    pub fn check_invariants(&self, refine: usize) -> Result<()> {
        let d = self.dimension;
        let refine = refine.max(1);
        let probes: Vec<Vec<f64>> = self
            .axes
            .iter()
            .map(|axis| {
                let mut pts = Vec::new();
                for w in axis.windows(2) {
                    for s in 0..refine {
                        pts.push(w[0] + (w[1] - w[0]) * s as f64 / refine as f64);
                    }
                }
                pts.push(*axis.last().unwrap());
                pts
            })
            .collect();
        let total: usize = probes.iter().map(Vec::len).product();
        let mut out = PointEval::default();
        let (lo_bound, hi_bound) = (1.0 - HESSIAN_SLACK, (1.0 + HESSIAN_SLACK) * self.lambda_max);
        for flat in 0..total {
            let mut rem = flat;
            let p: Vec<f64> = probes
                .iter()
                .map(|pts| {
                    let v = pts[rem % pts.len()];
                    rem /= pts.len();
                    v
                })
                .collect();
            self.interpolate(&p, &mut out);
            for e in symmetric_eigenvalues(&out.hess, d) {
                if e < lo_bound || e > hi_bound {
                    return Err(Error::Consistency(format!(
                        "interpolated Hessian at xi = {p:?} has eigenvalue {e:.6} outside [{lo_bound:.4}, {hi_bound:.4}]"
                    )));
                }
            }
        }
        // Midpoint convexity between each node and its forward neighbours
        // (axis steps of one and two nodes and the diagonal step).
        let scale = self.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut steps: Vec<Vec<usize>> = Vec::new();
        for i in 0..d {
            for s in [1, 2] {
                let mut v = vec![0; d];
                v[i] = s;
                steps.push(v);
            }
        }
        steps.push(vec![1; d]);
        for a in 0..self.node_count() {
            let ma = self.multi_index(a);
            for step in &steps {
                let mb: Vec<usize> = ma.iter().zip(step).map(|(x, s)| x + s).collect();
                if mb.iter().zip(&self.axes).any(|(&x, axis)| x >= axis.len()) {
                    continue;
                }
                let b = self.node_index(&mb);
                let (pa, pb) = (self.node(a), self.node(b));
                let mid: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| 0.5 * (x + y)).collect();
                self.interpolate(&mid, &mut out);
                let chord = 0.5 * (self.values[a] + self.values[b]);
                if out.value > chord + 1e-12 * scale {
                    return Err(Error::Consistency(format!(
                        "effective Lagrangian fails midpoint convexity between xi = {pa:?} and {pb:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn multi_index(&self, mut i: usize) -> Vec<usize> {
        self.axes
            .iter()
            .map(|axis| {
                let k = i % axis.len();
                i /= axis.len();
                k
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate_grid()?;
        if t.values.len() != t.axes.iter().map(Vec::len).product::<usize>() {
            return Err(Error::Consistency("table size does not match its grid".into()));
        }
        Ok(t)
    }

    /// Least-squares fit `L̄(ξ) ≈ c + ½ ξ·A ξ`; returns `A` and the root
    /// mean square residual.
    pub fn fit_quadratic_form(&self) -> Result<(Vec<Vec<f64>>, f64)> {
        let d = self.dimension;
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
        let cols = pairs.len() + 1;
        let rows = self.node_count();
        let design = nalgebra::DMatrix::from_fn(rows, cols, |r, c| {
            if c == pairs.len() {
                return 1.0;
            }
            let p = self.node(r);
            let (i, j) = pairs[c];
            if i == j {
                0.5 * p[i] * p[i]
            } else {
                p[i] * p[j]
            }
        });
        let rhs = nalgebra::DVector::from_column_slice(&self.values);
        let sol = design
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numerical(format!("quadratic fit failed: {e}")))?;
        let resid = &design * &sol - &rhs;
        let mut a = vec![vec![0.0; d]; d];
        for (c, &(i, j)) in pairs.iter().enumerate() {
            a[i][j] = sol[c];
            a[j][i] = sol[c];
        }
        Ok((a, (resid.norm_squared() / rows as f64).sqrt()))
    }
}

impl EffectiveLagrangian for HomogenizedLagrangian {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval(&self, p: &[f64], out: &mut PointEval) {
        let d = self.dimension;
        if self.contains(p) {
            self.interpolate(p, out);
            return;
        }
        let lo = self.lower();
        let hi = self.upper();
        let proj: Vec<f64> = (0..d).map(|i| p[i].clamp(lo[i], hi[i])).collect();
        let mut inner = PointEval::default();
        self.interpolate(&proj, &mut inner);
        let off: Vec<f64> = (0..d).map(|i| p[i] - proj[i]).collect();
        let normal: Vec<bool> = off.iter().map(|&o| o != 0.0).collect();
        *out = PointEval::default();
        out.value = inner.value
            + (0..d).map(|i| inner.grad[i] * off[i] + 0.5 * off[i] * off[i]).sum::<f64>();
        for j in 0..d {
            out.grad[j] = inner.grad[j]
                + if normal[j] {
                    off[j]
                } else {
                    (0..d).filter(|&i| normal[i]).map(|i| inner.hess[j][i] * off[i]).sum()
                };
            for k in 0..d {
                out.hess[j][k] = match (normal[j], normal[k]) {
                    (true, true) => {
                        if j == k {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => inner.hess[j][k],
                };
            }
        }
    }

    fn is_quadratic(&self) -> bool {
        self.quadratic
    }

    fn coverage(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((self.lower(), self.upper()))
    }
}

/// Uniform axis from `lo` to `hi` with the given spacing.
pub fn uniform_axis(lo: f64, hi: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(hi > lo) || !(spacing > 0.0) {
        return Err(Error::Config(format!("invalid axis [{lo}, {hi}] with spacing {spacing}")));
    }
    let steps = ((hi - lo) / spacing).round() as usize;
    if ((hi - lo) - steps as f64 * spacing).abs() > 1e-9 * spacing {
        return Err(Error::Config(format!("spacing {spacing} does not divide [{lo}, {hi}]")));
    }
    Ok((0..=steps).map(|k| lo + k as f64 * spacing).collect())
}

/// Monte-Carlo table over the tensor grid `axes`, with invariant checks.
pub fn tabulate_lbar(
    settings: &LbarSettings,
    axes: Vec<Vec<f64>>,
) -> Result<(HomogenizedLagrangian, Vec<LbarPointEstimate>)> {
    if axes.len() != settings.law.dimension {
        return Err(Error::Config(format!(
            "grid of dimension {} for a {}-dimensional law",
            axes.len(),
            settings.law.dimension
        )));
    }
    let count: usize = axes.iter().map(Vec::len).product();
    let mut estimates = Vec::with_capacity(count);
    for i in 0..count {
        let mut rem = i;
        let xi: Vec<f64> = axes
            .iter()
            .map(|axis| {
                let v = axis[rem % axis.len()];
                rem /= axis.len();
                v
            })
            .collect();
        estimates.push(estimate_lbar_point(settings, &xi)?);
    }
    let table = HomogenizedLagrangian::from_estimates(
        axes,
        &estimates,
        settings.nonlinearity.lambda_max,
        settings.nonlinearity.kind == NonlinearityKind::Quadratic,
    )?;
    table.check_invariants(4)?;
    Ok((table, estimates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{ClosedFormLagrangian, ConstantQuadratic};
    use crate::lagrangian::{CoefficientLaw, NonlinearitySpec};
    use crate::solvers::SolveOptions;
    use proptest::prelude::*;

    fn closed(a: f64, dim: usize) -> ClosedFormLagrangian {
        ClosedFormLagrangian {
            nonlinearity: NonlinearitySpec::perturbed_sqrt(2.0),
            coefficient: a,
            dim,
        }
    }

    #[test]
    fn interpolant_reproduces_node_data() {
        let axes = vec![uniform_axis(-1.0, 1.0, 0.25).unwrap(), uniform_axis(-0.5, 0.5, 0.25).unwrap()];
        let t = HomogenizedLagrangian::from_function(axes, &closed(0.7, 2), 2.0).unwrap();
        let mut out = PointEval::default();
        for i in 0..t.node_count() {
            t.eval(&t.node(i), &mut out);
            assert!((out.value - t.values[i]).abs() < 1e-14);
            for k in 0..2 {
                assert!((out.grad[k] - t.gradients[i][k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quadratics_are_reproduced_exactly() {
        let q = ConstantQuadratic {
            matrix: from_rows(&[vec![1.5, 0.2, 0.0], vec![0.2, 1.2, 0.1], vec![0.0, 0.1, 1.1]]),
            dim: 3,
        };
        let axes = vec![uniform_axis(-0.5, 0.5, 0.25).unwrap(); 3];
        let t = HomogenizedLagrangian::from_function(axes, &q, 2.0).unwrap();
        let (mut a, mut b) = (PointEval::default(), PointEval::default());
        for p in [[0.1, -0.33, 0.41], [-0.49, 0.02, 0.2], [0.3, 0.3, -0.1]] {
            t.eval(&p, &mut a);
            q.eval(&p, &mut b);
            assert!((a.value - b.value).abs() < 1e-13);
            for i in 0..3 {
                assert!((a.grad[i] - b.grad[i]).abs() < 1e-12);
                for j in 0..3 {
                    assert!((a.hess[i][j] - b.hess[i][j]).abs() < 1e-11);
                }
            }
        }
        let (fit, resid) = t.fit_quadratic_form().unwrap();
        assert!(resid < 1e-12);
        assert!((fit[0][1] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn interpolant_is_close_to_smooth_lagrangian() {
        let l = closed(1.0, 2);
        let axes = vec![uniform_axis(-1.0, 1.0, 0.25).unwrap(); 2];
        let t = HomogenizedLagrangian::from_function(axes, &l, 2.0).unwrap();
        t.check_invariants(4).unwrap();
        let (mut a, mut b) = (PointEval::default(), PointEval::default());
        for p in [[0.13, -0.71], [0.9, 0.05], [-0.4, 0.4]] {
            t.eval(&p, &mut a);
            l.eval(&p, &mut b);
            assert!((a.value - b.value).abs() < 1e-4);
            assert!((a.grad[0] - b.grad[0]).abs() < 1e-3);
            assert!((a.hess[0][0] - b.hess[0][0]).abs() < 0.05);
        }
    }

    proptest! {
        #[test]
        fn extension_is_continuous_and_convex(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let axes = vec![uniform_axis(-1.0, 1.0, 0.25).unwrap(); 2];
            let t = HomogenizedLagrangian::from_function(axes, &closed(0.5, 2), 2.0).unwrap();
            let mut a = PointEval::default();
            let mut b = PointEval::default();
            let eps = 1e-7;
            t.eval(&[x, y], &mut a);
            t.eval(&[x + eps, y], &mut b);
            prop_assert!(((b.value - a.value) / eps - a.grad[0]).abs() < 1e-4);
            prop_assert!(symmetric_eigenvalues(&a.hess, 2).iter().all(|&e| e > 0.9));
        }
    }

    #[test]
    fn gradient_jump_free_across_cells() {
        let axes = vec![uniform_axis(0.0, 1.0, 0.25).unwrap()];
        let mut t = HomogenizedLagrangian::from_function(axes, &closed(0.5, 1), 2.0).unwrap();
        // Perturb one node's data; the interpolant must remain C¹.
        t.gradients[2][0] += 0.01;
        let (mut l, mut r) = (PointEval::default(), PointEval::default());
        t.eval(&[0.5 - 1e-9], &mut l);
        t.eval(&[0.5 + 1e-9], &mut r);
        assert!((l.value - r.value).abs() < 1e-8);
        assert!((l.grad[0] - r.grad[0]).abs() < 1e-7);
    }

    #[test]
    fn nonconvex_table_is_rejected() {
        let axes = vec![uniform_axis(0.0, 1.0, 0.25).unwrap()];
        let mut t = HomogenizedLagrangian::from_function(axes, &closed(0.5, 1), 2.0).unwrap();
        t.values[2] += 0.1;
        let err = t.check_invariants(4).unwrap_err();
        assert!(matches!(err, Error::Consistency(ref m) if m.contains("xi")), "{err}");
    }

    #[test]
    fn coarse_grids_are_rejected() {
        let axes = vec![vec![0.0, 0.5]];
        assert!(matches!(
            HomogenizedLagrangian::from_function(axes, &closed(0.5, 1), 2.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn json_roundtrip() {
        let axes = vec![uniform_axis(0.0, 0.5, 0.25).unwrap(); 2];
        let t = HomogenizedLagrangian::from_function(axes, &closed(0.5, 2), 2.0).unwrap();
        assert_eq!(HomogenizedLagrangian::from_json(&t.to_json().unwrap()).unwrap(), t);
    }

    #[test]
    fn constant_law_table_matches_closed_form() {
        let settings = LbarSettings {
            law: CoefficientLaw::constant(0.5, 1),
            nonlinearity: NonlinearitySpec::perturbed_sqrt(2.0),
            n_list: vec![1],
            ensemble_size: 2,
            master_seed: 4,
            h: 0.5,
            solve: SolveOptions::default(),
        };
        let (t, _) = tabulate_lbar(&settings, vec![uniform_axis(-0.5, 0.5, 0.25).unwrap()]).unwrap();
        let mut exact = PointEval::default();
        for i in 0..t.node_count() {
            closed(0.5, 1).eval(&t.node(i), &mut exact);
            assert!((t.values[i] - exact.value).abs() < 1e-12);
            assert!((t.hessians[i][0][0] - exact.hess[0][0]).abs() < 1e-10);
        }
    }
}
