//! Cell problems: the mean minimal energy `ν(U, ξ)` with affine boundary
//! data, its first two derivatives in `ξ`, Monte-Carlo estimates of the
//! effective Lagrangian, and frozen-gradient effective matrices.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{HeterogeneousDensity, QuadraticFormDensity};
use crate::error::{Error, Result};
use crate::lagrangian::{sample_realization, CellBox, CoefficientLaw, LagrangianRealization, NonlinearitySpec};
use crate::linalg::SmallMat;
use crate::mesh::{MeshDomain, ScalarField};
use crate::solvers::{minimize_energy, solve_linear_dirichlet, SolveOptions, SolveReport};
use crate::stats::{mean, run_ensemble, stderr};

/// Relative residual for the linear solves behind `D²ν`.
pub const LINEAR_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct CellProblemResult {
    pub nu_value: f64,
    pub xi: Vec<f64>,
    pub minimizer: ScalarField,
    pub d_nu: Vec<f64>,
    pub d2_nu: Vec<Vec<f64>>,
    pub report: SolveReport,
}

pub fn affine(mesh: &MeshDomain, xi: &[f64]) -> ScalarField {
    mesh.interpolate(|x| x.iter().zip(xi).map(|(a, b)| a * b).sum())
}

fn unit_vector(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

fn check_slope(mesh: &MeshDomain, xi: &[f64]) -> Result<()> {
    if xi.len() != mesh.dimension() {
        return Err(Error::Domain(format!(
            "slope of dimension {} on a {}-dimensional mesh",
            xi.len(),
            mesh.dimension()
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("slope {xi:?} is not finite")));
    }
    Ok(())
}

/// Energy minimizer with affine data `ℓ_ξ` and its mean energy.
pub fn nu_value_on_mesh(
    realization: &LagrangianRealization,
    mesh: &MeshDomain,
    xi: &[f64],
    opts: &SolveOptions,
) -> Result<(f64, ScalarField, SolveReport)> {
    check_slope(mesh, xi)?;
    let density = HeterogeneousDensity::new(realization, mesh)?;
    let (v, report) = minimize_energy(mesh, &density, &affine(mesh, xi), opts)?;
    Ok((report.energy / mesh.total_volume(), v, report))
}

/// `ν`, `D_ξ ν` and `D²_ξ ν` on an arbitrary mesh.
///
/// The second derivative is `⨍ ∇w_i · A ∇w_j` where `A = D²_p L(∇v, ·)` and
/// `w_i` solves the linear equation with coefficients `A` and data `ℓ_{e_i}`.
pub fn nu_on_mesh(
    realization: &LagrangianRealization,
    mesh: &MeshDomain,
    xi: &[f64],
    opts: &SolveOptions,
) -> Result<CellProblemResult> {
    check_slope(mesh, xi)?;
    let d = mesh.dimension();
    let density = HeterogeneousDensity::new(realization, mesh)?;
    let (v, report) = minimize_energy(mesh, &density, &affine(mesh, xi), opts)?;
    let grad = mesh.gradient(&v)?;
    let full = mesh.full();
    let d_nu = mesh.mean_vector(&density.flux(&grad), &full)?;
    let lin = QuadraticFormDensity::new(d, density.hessian_field(&grad));
    let d2_nu = effective_matrix(mesh, &lin)?;
    Ok(CellProblemResult {
        nu_value: report.energy / mesh.total_volume(),
        xi: xi.to_vec(),
        minimizer: v,
        d_nu,
        d2_nu,
        report,
    })
}

/// `⨍ ∇w_i · A ∇w_j` for the linear Dirichlet solutions `w_i` with data
/// `ℓ_{e_i}`; the energy form of the effective matrix on the mesh.
pub fn effective_matrix(mesh: &MeshDomain, lin: &QuadraticFormDensity) -> Result<Vec<Vec<f64>>> {
    let d = mesh.dimension();
    let full = mesh.full();
    let mut grads = Vec::with_capacity(d);
    let mut fluxes = Vec::with_capacity(d);
    for i in 0..d {
        let w = solve_linear_dirichlet(mesh, lin, &affine(mesh, &unit_vector(d, i)), LINEAR_TOL)?;
        let g = mesh.gradient(&w)?;
        fluxes.push(lin.flux(&g));
        grads.push(g);
    }
    let mut m = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let s: f64 = grads[i].values.iter().zip(&fluxes[j].values).map(|(a, b)| a * b).sum();
            let v = s * mesh.element_volume(0) / full.volume;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

/// Cell problem on the cube `□_n`.
pub fn nu(
    realization: &LagrangianRealization,
    n: u32,
    xi: &[f64],
    h: f64,
    opts: &SolveOptions,
) -> Result<CellProblemResult> {
    let mesh = MeshDomain::cube(n, h, realization.dimension())?;
    nu_on_mesh(realization, &mesh, xi, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// Compares `ν(□_{n+1}, ξ)` with the average of `ν` over its `3^d`
/// subcubes `z + □_n`.
pub fn subadditivity_check(
    realization: &LagrangianRealization,
    n: u32,
    xi: &[f64],
    h: f64,
    opts: &SolveOptions,
) -> Result<SubadditivityCheck> {
    let d = realization.dimension();
    let big = MeshDomain::cube(n + 1, h, d)?;
    let (lhs, _, _) = nu_value_on_mesh(realization, &big, xi, opts)?;
    let side = 3usize.pow(n);
    let count = 3usize.pow(d as u32);
    let mut total = 0.0;
    for k in 0..count {
        let mut rem = k;
        let center: Vec<i64> = (0..d)
            .map(|_| {
                let c = (rem % 3) as i64 - 1;
                rem /= 3;
                c * side as i64
            })
            .collect();
        let mesh = MeshDomain::centered_cube(&center, side, h)?;
        total += nu_value_on_mesh(realization, &mesh, xi, opts)?.0;
    }
    let rhs = total / count as f64;
    Ok(SubadditivityCheck { lhs, rhs, slack: rhs - lhs })
}

/// One realization's contribution to an effective-Lagrangian estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSample {
    pub seed: u64,
    pub n: u32,
    pub xi: Vec<f64>,
    pub nu: f64,
    pub d_nu: Vec<f64>,
    pub d2_nu: Vec<Vec<f64>>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    pub n: u32,
    pub count: usize,
    pub failures: usize,
    pub nu_mean: f64,
    pub nu_stderr: f64,
    pub d_nu_mean: Vec<f64>,
    pub d_nu_stderr: Vec<f64>,
    pub d2_nu_mean: Vec<Vec<f64>>,
    pub d2_nu_stderr: Vec<Vec<f64>>,
}

/// Effective-Lagrangian estimate at one slope with per-level statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbarPointEstimate {
    pub xi: Vec<f64>,
    pub levels: Vec<LevelEstimate>,
    pub value: f64,
    pub value_uncertainty: f64,
    pub gradient: Vec<f64>,
    pub gradient_uncertainty: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    pub hessian_uncertainty: Vec<Vec<f64>>,
    /// Standard errors at the largest level.
    pub value_stderr: f64,
    pub gradient_stderr: Vec<f64>,
    pub hessian_stderr: Vec<Vec<f64>>,
    /// Whether the level means of `ν` are non-increasing up to twice the
    /// combined standard error.
    pub monotone: bool,
    #[serde(skip)]
    pub samples: Vec<CellSample>,
}

fn level_statistics(n: u32, samples: &[CellSample], failures: usize, d: usize) -> LevelEstimate {
    let col = |f: &dyn Fn(&CellSample) -> f64| -> (f64, f64) {
        let v: Vec<f64> = samples.iter().map(f).collect();
        (mean(&v), stderr(&v))
    };
    let (nu_mean, nu_stderr) = col(&|s| s.nu);
    let mut d_nu_mean = vec![0.0; d];
    let mut d_nu_stderr = vec![0.0; d];
    let mut d2_nu_mean = vec![vec![0.0; d]; d];
    let mut d2_nu_stderr = vec![vec![0.0; d]; d];
    for i in 0..d {
        (d_nu_mean[i], d_nu_stderr[i]) = col(&|s| s.d_nu[i]);
        for j in 0..d {
            (d2_nu_mean[i][j], d2_nu_stderr[i][j]) = col(&|s| s.d2_nu[i][j]);
        }
    }
    LevelEstimate {
        n,
        count: samples.len(),
        failures,
        nu_mean,
        nu_stderr,
        d_nu_mean,
        d_nu_stderr,
        d2_nu_mean,
        d2_nu_stderr,
    }
}

/// Settings shared by the Monte-Carlo estimators of the effective
/// Lagrangian.
#[derive(Clone, Debug, PartialEq)]
pub struct LbarSettings {
    pub law: CoefficientLaw,
    pub nonlinearity: NonlinearitySpec,
    pub n_list: Vec<u32>,
    pub ensemble_size: usize,
    pub master_seed: u64,
    pub h: f64,
    pub solve: SolveOptions,
}

impl LbarSettings {
    fn validate(&self) -> Result<()> {
        self.law.validate(&self.nonlinearity)?;
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("n_list must be non-empty and increasing, got {:?}", self.n_list)));
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of `L̄`, `DL̄` and `D²L̄` at `ξ`. Every level and
/// every slope uses the same derived seeds.
pub fn estimate_lbar_point(settings: &LbarSettings, xi: &[f64]) -> Result<LbarPointEstimate> {
    settings.validate()?;
    let d = settings.law.dimension;
    let mut levels = Vec::new();
    let mut samples = Vec::new();
    for &n in &settings.n_list {
        let mesh = MeshDomain::cube(n, settings.h, d)?;
        mesh.assembler();
        let outcome = run_ensemble(settings.master_seed, settings.ensemble_size, |seed| {
            let r = sample_realization(settings.law, settings.nonlinearity, CellBox::cube(n, d), seed)?;
            let c = nu_on_mesh(&r, &mesh, xi, &settings.solve)?;
            Ok(CellSample {
                seed,
                n,
                xi: xi.to_vec(),
                nu: c.nu_value,
                d_nu: c.d_nu,
                d2_nu: c.d2_nu,
                iterations: c.report.iterations,
            })
        })?;
        let level: Vec<CellSample> = outcome.values().cloned().collect();
        levels.push(level_statistics(n, &level, outcome.failures.len(), d));
        samples.extend(level);
    }
    let last = levels.last().expect("n_list is non-empty");
    let prev = if levels.len() > 1 { Some(&levels[levels.len() - 2]) } else { None };
    let spread = |a: f64, b: Option<f64>, se: f64| b.map_or(0.0, |b| (a - b).abs()) + 2.0 * se;
    let value_uncertainty = spread(last.nu_mean, prev.map(|p| p.nu_mean), last.nu_stderr);
    let gradient_uncertainty = (0..d)
        .map(|i| spread(last.d_nu_mean[i], prev.map(|p| p.d_nu_mean[i]), last.d_nu_stderr[i]))
        .collect();
    let hessian_uncertainty = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| spread(last.d2_nu_mean[i][j], prev.map(|p| p.d2_nu_mean[i][j]), last.d2_nu_stderr[i][j]))
                .collect()
        })
        .collect();
    let monotone = levels.windows(2).all(|w| {
        w[1].nu_mean <= w[0].nu_mean + 2.0 * (w[0].nu_stderr.powi(2) + w[1].nu_stderr.powi(2)).sqrt()
    });
    Ok(LbarPointEstimate {
        xi: xi.to_vec(),
        value: last.nu_mean,
        value_uncertainty,
        gradient: last.d_nu_mean.clone(),
        gradient_uncertainty,
        hessian: last.d2_nu_mean.clone(),
        hessian_uncertainty,
        value_stderr: last.nu_stderr,
        gradient_stderr: last.d_nu_stderr.clone(),
        hessian_stderr: last.d2_nu_stderr.clone(),
        monotone,
        levels,
        samples,
    })
}

/// Integer key of an element barycenter, shared by all meshes with the
/// same width.
pub(crate) fn barycenter_key(b: &[f64], h: f64) -> Vec<i64> {
    let scale = (b.len() + 1) as f64 / h;
    b.iter().map(|&x| ((x - 0.5) * scale).round() as i64).collect()
}

/// Center `3^k · round(x / 3^k)` of the `k`-cube containing `x`.
pub fn mesocube_center(x: &[f64], k: u32) -> Vec<i64> {
    let s = 3f64.powi(k as i32);
    x.iter().map(|&v| (v / s).round() as i64 * s as i64).collect()
}

/// Coefficients `D²_p L(∇v(·, z + □_k, ξ_z), ·)` on every element of
/// `mesh`, where `z` runs over the `k`-cubes `3^k ℤ^d + □_k` that tile the
/// mesh and `ξ_z = slope(z)`.
pub fn frozen_coefficients(
    realization: &LagrangianRealization,
    mesh: &MeshDomain,
    k: u32,
    slope: impl Fn(&[i64]) -> Vec<f64> + Sync,
    opts: &SolveOptions,
) -> Result<Vec<SmallMat>> {
    let h = mesh.mesh_width();
    let mut groups: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for e in 0..mesh.element_count() {
        groups.entry(mesocube_center(mesh.barycenter(e), k)).or_default().push(e);
    }
    let side = 3usize.pow(k);
    let entries: Vec<(&Vec<i64>, &Vec<usize>)> = groups.iter().collect();
    let local: Vec<Result<Vec<(usize, SmallMat)>>> = entries
        .par_iter()
        .map(|(center, elements)| {
            let sub = MeshDomain::centered_cube(center, side, h)?;
            if sub.element_count() != elements.len() {
                return Err(Error::Domain(format!(
                    "mesh is not tiled by {side}-cubes (cube at {center:?} is cut)"
                )));
            }
            let density = HeterogeneousDensity::new(realization, &sub)?;
            let xi = slope(center);
            check_slope(&sub, &xi)?;
            let (v, _) = minimize_energy(&sub, &density, &affine(&sub, &xi), opts)?;
            let mats = density.hessian_field(&sub.gradient(&v)?);
            let mut index = BTreeMap::new();
            for (le, m) in mats.into_iter().enumerate() {
                index.insert(barycenter_key(sub.barycenter(le), h), m);
            }
            elements
                .iter()
                .map(|&e| {
                    index
                        .get(&barycenter_key(mesh.barycenter(e), h))
                        .map(|m| (e, *m))
                        .ok_or_else(|| Error::Domain("element not found in its mesocube".into()))
                })
                .collect()
        })
        .collect();
    let mut out = vec![[[0.0; 3]; 3]; mesh.element_count()];
    for block in local {
        for (e, m) in block? {
            out[e] = m;
        }
    }
    Ok(out)
}

/// Effective matrix of the frozen-gradient coefficient field `a_ξ` on `□_n`
/// built from local solves on the `k`-cubes.
pub fn ahom_frozen(
    realization: &LagrangianRealization,
    n: u32,
    xi: &[f64],
    k: u32,
    h: f64,
    opts: &SolveOptions,
) -> Result<Vec<Vec<f64>>> {
    if k >= n {
        return Err(Error::Config(format!("frozen scale k = {k} must be below n = {n}")));
    }
    let d = realization.dimension();
    let mesh = MeshDomain::cube(n, h, d)?;
    check_slope(&mesh, xi)?;
    let mats = frozen_coefficients(realization, &mesh, k, |_| xi.to_vec(), opts)?;
    effective_matrix(&mesh, &QuadraticFormDensity::new(d, mats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::NonlinearityKind;
    use crate::linalg::{from_rows, symmetric_eigenvalues};
    use crate::rng::derived_seed;

    fn opts() -> SolveOptions {
        SolveOptions::with_tol(1e-11)
    }

    fn checkerboard(n: u32, nl: NonlinearitySpec, seed: u64) -> LagrangianRealization {
        let (lo, hi) = nl.coefficient_range();
        sample_realization(CoefficientLaw::iid_two_point(lo, hi.min(lo + 1.0), 2), nl, CellBox::cube(n, 2), seed).unwrap()
    }

    #[test]
    fn constant_coefficient_nu_is_closed_form() {
        let r = sample_realization(
            CoefficientLaw::constant(1.0, 2),
            NonlinearitySpec::perturbed_sqrt(2.0),
            CellBox::cube(1, 2),
            3,
        )
        .unwrap();
        let c = nu(&r, 1, &[1.0, 0.0], 0.5, &opts()).unwrap();
        assert!((c.nu_value - (0.5 + 2f64.sqrt())).abs() < 1e-12);
        assert!((c.d_nu[0] - (1.0 + 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!(c.d_nu[1].abs() < 1e-12);
        // D²L(ξ) = I + (I/s - ξξᵀ/s³) with s = √2.
        let s = 2f64.sqrt();
        assert!((c.d2_nu[0][0] - (1.0 + 1.0 / s - 1.0 / (s * s * s))).abs() < 1e-10);
        assert!((c.d2_nu[1][1] - (1.0 + 1.0 / s)).abs() < 1e-10);
        assert!(c.d2_nu[0][1].abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_harmonic_mean() {
        // Two cells with coefficients 1 and 4, h = 1, ξ = 1.
        let nl = NonlinearitySpec::quadratic(4.0);
        let law = CoefficientLaw::iid_two_point(1.0, 4.0, 1);
        let seed = (0..1000u64)
            .find(|&s| {
                let r = sample_realization(law, nl, CellBox::centered(&[2]), s).unwrap();
                r.cell_values()[0] != r.cell_values()[1]
            })
            .unwrap();
        let r = sample_realization(law, nl, CellBox::centered(&[2]), seed).unwrap();
        let mesh = MeshDomain::cell_box(&r.cell_box, 1.0).unwrap();
        let c = nu_on_mesh(&r, &mesh, &[1.0], &opts()).unwrap();
        assert!((c.nu_value - 0.8).abs() < 1e-12);
        assert!((c.d2_nu[0][0] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let r = checkerboard(1, NonlinearitySpec::perturbed_sqrt(2.0), 17);
        let xi = [0.7, -0.4];
        let c = nu(&r, 1, &xi, 0.5, &opts()).unwrap();
        let step = 1e-3;
        for i in 0..2 {
            let mut p = xi;
            let mut m = xi;
            p[i] += step;
            m[i] -= step;
            let fd = (nu(&r, 1, &p, 0.5, &opts()).unwrap().nu_value - nu(&r, 1, &m, 0.5, &opts()).unwrap().nu_value)
                / (2.0 * step);
            assert!((fd - c.d_nu[i]).abs() <= 1e-4 * c.d_nu[i].abs().max(1e-2), "{fd} {}", c.d_nu[i]);
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let r = checkerboard(1, NonlinearitySpec::perturbed_sqrt(2.0), 5);
        let xi = [0.3, 0.9];
        let c = nu(&r, 1, &xi, 0.5, &opts()).unwrap();
        let step = 1e-2;
        for j in 0..2 {
            let mut p = xi;
            let mut m = xi;
            p[j] += step;
            m[j] -= step;
            let dp = nu(&r, 1, &p, 0.5, &opts()).unwrap().d_nu;
            let dm = nu(&r, 1, &m, 0.5, &opts()).unwrap().d_nu;
            for i in 0..2 {
                let fd = (dp[i] - dm[i]) / (2.0 * step);
                let scale = c.d2_nu[i][j].abs().max(1.0);
                assert!((fd - c.d2_nu[i][j]).abs() <= 1e-3 * scale, "{fd} {}", c.d2_nu[i][j]);
            }
        }
        let eig = symmetric_eigenvalues(&from_rows(&c.d2_nu), 2);
        assert!(eig[0] >= 1.0 - 1e-9 && eig[1] <= 2.0 + 1e-9);
    }

    #[test]
    fn subadditivity_holds_per_realization() {
        for seed in 0..3 {
            let r = checkerboard(2, NonlinearitySpec::perturbed_sqrt(3.0), seed);
            let s = subadditivity_check(&r, 1, &[1.0, 0.5], 0.5, &opts()).unwrap();
            assert!(s.slack >= -1e-8, "{s:?}");
        }
        let c = sample_realization(
            CoefficientLaw::constant(0.5, 2),
            NonlinearitySpec::perturbed_sqrt(2.0),
            CellBox::cube(1, 2),
            0,
        )
        .unwrap();
        let s = subadditivity_check(&c, 0, &[0.2, 0.1], 0.5, &opts()).unwrap();
        assert!(s.slack.abs() < 1e-12);
    }

    #[test]
    fn lbar_point_for_constant_law_is_exact() {
        let settings = LbarSettings {
            law: CoefficientLaw::constant(0.5, 2),
            nonlinearity: NonlinearitySpec::perturbed_sqrt(2.0),
            n_list: vec![0, 1],
            ensemble_size: 3,
            master_seed: 1,
            h: 0.5,
            solve: opts(),
        };
        let est = estimate_lbar_point(&settings, &[1.0, 1.0]).unwrap();
        let exact = 1.0 + 0.5 * 3f64.sqrt();
        assert!((est.value - exact).abs() < 1e-12);
        assert!(est.value_stderr < 1e-14);
        assert!(est.monotone);
        assert_eq!(est.samples.len(), 6);
        assert_eq!(est.samples[0].seed, derived_seed(1, 0));
    }

    #[test]
    fn frozen_matrix_for_constant_coefficients_is_hessian() {
        let nl = NonlinearitySpec::perturbed_sqrt(2.0);
        let r = sample_realization(CoefficientLaw::constant(1.0, 2), nl, CellBox::cube(2, 2), 0).unwrap();
        let xi = [0.5, -1.0];
        let a = ahom_frozen(&r, 2, &xi, 1, 0.5, &opts()).unwrap();
        let mut exact = crate::lagrangian::PointEval::default();
        nl.eval(1.0, &xi, &mut exact);
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - exact.hess[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn frozen_matrix_is_independent_of_slope_for_quadratic() {
        let r = checkerboard(2, NonlinearitySpec::quadratic(2.0), 9);
        assert_eq!(r.nonlinearity.kind, NonlinearityKind::Quadratic);
        let a = ahom_frozen(&r, 2, &[0.0, 0.0], 1, 0.5, &opts()).unwrap();
        let b = ahom_frozen(&r, 2, &[2.0, -1.0], 1, 0.5, &opts()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn frozen_scale_must_be_below_box_scale() {
        let r = checkerboard(1, NonlinearitySpec::quadratic(2.0), 1);
        assert!(matches!(ahom_frozen(&r, 1, &[1.0, 0.0], 1, 0.5, &opts()), Err(Error::Config(_))));
    }
}
