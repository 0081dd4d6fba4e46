//! Large-scale regularity experiments on lattice balls and cubes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cell::affine;
use crate::energy::HeterogeneousDensity;
use crate::error::{Error, Result};
use crate::experiments::homog::BoundaryProfile;
use crate::lagrangian::{sample_realization, CellBox, CoefficientLaw, LagrangianRealization, NonlinearitySpec};
use crate::mesh::{MeshDomain, ScalarField};
use crate::solvers::{minimize_energy, solve_linearized_with, SolveOptions};
use crate::stats::{extended_float, fit_osigma, fmt_f64, linear_fit, median, CsvTable, TailFit};

const LINEAR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusScan {
    pub experiment_id: String,
    pub seed: u64,
    pub big_r: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub reference: f64,
    /// Smallest scanned radius from which the Lipschitz ratio stays below
    /// the threshold, or `+∞` when it never does.
    #[serde(with = "extended_float")]
    pub minimal_scale_hat: f64,
}

impl RadiusScan {
    pub fn csv_header() -> CsvTable {
        CsvTable::new(["seed", "R", "r", "value", "reference", "minimal_scale_hat", "experiment_id"])
    }

    pub fn push_rows(&self, table: &mut CsvTable) -> Result<()> {
        for (r, v) in self.radii.iter().zip(&self.values) {
            table.push(vec![
                self.seed.to_string(),
                fmt_f64(self.big_r),
                fmt_f64(*r),
                fmt_f64(*v),
                fmt_f64(self.reference),
                fmt_f64(self.minimal_scale_hat),
                self.experiment_id.clone(),
            ])?;
        }
        Ok(())
    }
}

/// Radii `h 2^j` inside `[4h, R/2]`.
pub fn dyadic_radii(h: f64, big_r: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = h;
    while r <= 0.5 * big_r + 1e-12 {
        if r >= 4.0 * h - 1e-12 {
            out.push(r);
        }
        r *= 2.0;
    }
    out
}

/// Smallest radius from which every value stays at or below
/// `k_ratio · reference`.
pub fn minimal_scale(radii: &[f64], values: &[f64], reference: f64, k_ratio: f64) -> f64 {
    let mut best = f64::INFINITY;
    for j in (0..radii.len()).rev() {
        if values[j] <= k_ratio * reference {
            best = radii[j];
        } else {
            break;
        }
    }
    best
}

/// Cells covering the lattice ball of radius `big_r`.
pub fn ball_cells(big_r: f64, d: usize) -> CellBox {
    let side = 2 * (big_r.ceil() as usize + 1) + 1;
    CellBox::centered(&vec![side; d])
}

fn validate_scan(big_r: f64, h: f64, k_ratio: f64) -> Result<Vec<f64>> {
    if !(k_ratio > 0.0) {
        return Err(Error::Config(format!("K_ratio must be positive, got {k_ratio}")));
    }
    let radii = dyadic_radii(h, big_r);
    if radii.is_empty() {
        return Err(Error::Config(format!("no dyadic radius in [4h, R/2] for R = {big_r}, h = {h}")));
    }
    Ok(radii)
}

fn gradient_profile(mesh: &MeshDomain, field: &ScalarField, radii: &[f64]) -> Result<Vec<f64>> {
    let grad = mesh.gradient(field)?;
    let origin = vec![0.0; mesh.dimension()];
    radii
        .iter()
        .map(|&r| mesh.norm_l2_mean_vector(&grad, &mesh.ball(&origin, r)))
        .collect()
}

/// Lipschitz scan of `u − v`, where `u`, `v` minimize the energy in `B_R`
/// with boundary data `g` and `g + f`.
pub fn difference_lipschitz_scan(
    realization: &LagrangianRealization,
    big_r: f64,
    g: &BoundaryProfile,
    f: &BoundaryProfile,
    k_ratio: f64,
    h: f64,
    opts: &SolveOptions,
) -> Result<RadiusScan> {
    let radii = validate_scan(big_r, h, k_ratio)?;
    let mesh = MeshDomain::lattice_ball(big_r, h, realization.dimension())?;
    let gv = g.interpolate(&mesh, big_r);
    let gf = gv.add_scaled(&f.interpolate(&mesh, big_r), 1.0);
    let density = HeterogeneousDensity::new(realization, &mesh)?;
    let (u, _) = minimize_energy(&mesh, &density, &gv, opts)?;
    let (v, _) = minimize_energy(&mesh, &density, &gf, opts)?;
    let diff = u.sub(&v);
    let values = gradient_profile(&mesh, &diff, &radii)?;
    let reference = mesh.norm_l2_mean(&diff, &mesh.full())? / big_r;
    Ok(RadiusScan {
        experiment_id: "diffreg".into(),
        seed: realization.seed,
        big_r,
        minimal_scale_hat: minimal_scale(&radii, &values, reference, k_ratio),
        radii,
        values,
        reference,
    })
}

/// Lipschitz scan of the solution `w` of the equation linearized around
/// the minimizer with data `g`, with `w = f` on `∂B_R`.
pub fn linearized_lipschitz_scan(
    realization: &LagrangianRealization,
    big_r: f64,
    g: &BoundaryProfile,
    f: &BoundaryProfile,
    k_ratio: f64,
    h: f64,
    opts: &SolveOptions,
) -> Result<RadiusScan> {
    let radii = validate_scan(big_r, h, k_ratio)?;
    let mesh = MeshDomain::lattice_ball(big_r, h, realization.dimension())?;
    let density = HeterogeneousDensity::new(realization, &mesh)?;
    let (u, _) = minimize_energy(&mesh, &density, &g.interpolate(&mesh, big_r), opts)?;
    let w = solve_linearized_with(&density, &mesh, &mesh.gradient(&u)?, &f.interpolate(&mesh, big_r), LINEAR_TOL)?;
    let values = gradient_profile(&mesh, &w, &radii)?;
    let full = mesh.full();
    let mean = mesh.mean(&w, &full)?;
    let centered = ScalarField::new(w.values.iter().map(|x| x - mean).collect());
    let reference = mesh.norm_l2_mean(&centered, &full)? / big_r;
    Ok(RadiusScan {
        experiment_id: "linreg".into(),
        seed: realization.seed,
        big_r,
        minimal_scale_hat: minimal_scale(&radii, &values, reference, k_ratio),
        radii,
        values,
        reference,
    })
}

/// Tail summary of the minimal scales of an ensemble of scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalScaleSummary {
    pub count: usize,
    pub finite_fraction: f64,
    /// Fraction of seeds with minimal scale beyond `R/4` (infinite ones
    /// included).
    pub beyond_quarter_fraction: f64,
    /// Tail fit with infinite values censored at `R`.
    pub tail: TailFit,
    pub censored: usize,
}

pub fn summarize_minimal_scales(scans: &[RadiusScan], sigma: f64) -> Result<MinimalScaleSummary> {
    if scans.is_empty() {
        return Err(Error::InsufficientData("no scans to summarize".into()));
    }
    let n = scans.len() as f64;
    let finite = scans.iter().filter(|s| s.minimal_scale_hat.is_finite()).count();
    let beyond = scans
        .iter()
        .filter(|s| s.minimal_scale_hat > 0.25 * s.big_r)
        .count();
    let samples: Vec<f64> = scans
        .iter()
        .map(|s| if s.minimal_scale_hat.is_finite() { s.minimal_scale_hat } else { s.big_r })
        .collect();
    Ok(MinimalScaleSummary {
        count: scans.len(),
        finite_fraction: finite as f64 / n,
        beyond_quarter_fraction: beyond as f64 / n,
        tail: fit_osigma(&samples, sigma)?,
        censored: scans.len() - finite,
    })
}

// ---------------------------------------------------------------------------
// Corrector differences

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorDifference {
    pub seed: u64,
    pub big_n: u32,
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub radii: Vec<f64>,
    /// `‖∇v(·, ξ₁) − ∇v(·, ξ₂)‖_{L̲²(B_r)} / |ξ₁ − ξ₂|` per radius.
    pub ratios: Vec<f64>,
}

/// Normalized differences of the finite-volume correctors on `□_N` for two
/// slopes, on interior balls of radius at most `3^N / 4`.
#[allow(clippy::too_many_arguments)]
pub fn corrector_difference(
    law: CoefficientLaw,
    nonlinearity: NonlinearitySpec,
    big_n: u32,
    xi1: &[f64],
    xi2: &[f64],
    seed: u64,
    h: f64,
    opts: &SolveOptions,
) -> Result<CorrectorDifference> {
    let d = law.dimension;
    if xi1.len() != d || xi2.len() != d {
        return Err(Error::Config("slopes must match the dimension of the law".into()));
    }
    let dist = xi1.iter().zip(xi2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if !(dist > 0.0) {
        return Err(Error::Config("corrector differences need distinct slopes".into()));
    }
    let realization = sample_realization(law, nonlinearity, CellBox::cube(big_n, d), seed)?;
    let mesh = MeshDomain::cube(big_n, h, d)?;
    let density = HeterogeneousDensity::new(&realization, &mesh)?;
    let (v1, _) = minimize_energy(&mesh, &density, &affine(&mesh, xi1), opts)?;
    let (v2, _) = minimize_energy(&mesh, &density, &affine(&mesh, xi2), opts)?;
    let radii = dyadic_radii(h, 0.5 * 3f64.powi(big_n as i32));
    if radii.is_empty() {
        return Err(Error::Config(format!("box exponent N = {big_n} leaves no interior radius")));
    }
    let ratios = gradient_profile(&mesh, &v1.sub(&v2), &radii)?
        .into_iter()
        .map(|v| v / dist)
        .collect();
    Ok(CorrectorDifference {
        seed,
        big_n,
        xi1: xi1.to_vec(),
        xi2: xi2.to_vec(),
        radii,
        ratios,
    })
}

// ---------------------------------------------------------------------------
// Linearization error

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperlinearResult {
    pub seed: u64,
    pub s_list: Vec<f64>,
    /// `‖∇u[g + s f] − ∇u[g] − s ∇w‖_{L̲²}` per `s`.
    pub errors: Vec<f64>,
    pub slope: Option<f64>,
    pub inconclusive: bool,
}

/// Log-log slope of `errors` against `s`, over the points above the noise
/// floor `100 · tol` with the largest perturbation dropped when at least
/// four points remain. `None` when fewer than three points qualify.
pub fn superlinear_slope(s_list: &[f64], errors: &[f64], tol: f64) -> Result<Option<f64>> {
    let mut pts: Vec<(f64, f64)> = s_list
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e >= 100.0 * tol)
        .map(|(&s, &e)| (s, e))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() >= 4 {
        pts.pop();
    }
    if pts.len() < 3 {
        return Ok(None);
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    Ok(Some(linear_fit(&x, &y)?.0))
}

/// Geometric list `1, ½, …, 2^{-k}`.
pub fn geometric_s_list(k: u32) -> Vec<f64> {
    (0..=k).map(|j| 0.5f64.powi(j as i32)).collect()
}

/// Linearization error on `□_n` for the perturbations `s f`.
#[allow(clippy::too_many_arguments)]
pub fn superlinear_linearization(
    realization: &LagrangianRealization,
    n: u32,
    g: &BoundaryProfile,
    f: &BoundaryProfile,
    s_list: &[f64],
    h: f64,
    opts: &SolveOptions,
) -> Result<SuperlinearResult> {
    if s_list.is_empty() || s_list.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("s_list must be a non-empty list of positive numbers".into()));
    }
    let mesh = MeshDomain::cube(n, h, realization.dimension())?;
    let r = 3f64.powi(n as i32);
    let gv = g.interpolate(&mesh, r);
    let fv = f.interpolate(&mesh, r);
    let density = HeterogeneousDensity::new(realization, &mesh)?;
    let (u, _) = minimize_energy(&mesh, &density, &gv, opts)?;
    let grad_u = mesh.gradient(&u)?;
    let grad_w = mesh.gradient(&solve_linearized_with(&density, &mesh, &grad_u, &fv, LINEAR_TOL)?)?;
    let full = mesh.full();
    let errors = s_list
        .iter()
        .map(|&s| {
            let (us, _) = minimize_energy(&mesh, &density, &gv.add_scaled(&fv, s), opts)?;
            let diff = mesh.gradient(&us)?.sub(&grad_u).add_scaled(&grad_w, -s);
            mesh.norm_l2_mean_vector(&diff, &full)
        })
        .collect::<Result<Vec<f64>>>()?;
    let slope = superlinear_slope(s_list, &errors, opts.tol)?;
    Ok(SuperlinearResult {
        seed: realization.seed,
        s_list: s_list.to_vec(),
        errors,
        inconclusive: slope.is_none(),
        slope,
    })
}

/// Per-`s` medians over an ensemble and their log-log slope.
pub fn superlinear_medians(results: &[SuperlinearResult], tol: f64) -> Result<(Vec<f64>, Option<f64>)> {
    let first = results
        .first()
        .ok_or_else(|| Error::InsufficientData("no linearization results".into()))?;
    let medians: Vec<f64> = (0..first.s_list.len())
        .map(|j| median(&results.iter().map(|r| r.errors[j]).collect::<Vec<_>>()))
        .collect();
    let slope = superlinear_slope(&first.s_list, &medians, tol)?;
    Ok((medians, slope))
}

// ---------------------------------------------------------------------------
// Excess decay

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessDecay {
    pub seed: u64,
    pub big_r: f64,
    pub xi0: Vec<f64>,
    pub radii: Vec<f64>,
    /// `inf_φ ‖u − φ‖_{L̲²(B_r)}` over the surrogate family.
    pub excess: Vec<f64>,
    /// Minimizing slope at each radius.
    pub xi_min: Vec<Vec<f64>>,
    pub exponent: Option<f64>,
    pub degenerate: bool,
}

/// Surrogate family `c + Σ_i ξ_i w_i + (v_{ξ0} − Σ_i ξ0_i w_i)` on the
/// mesh of `u`, where `v_{ξ0}` is the finite-volume corrector on `□_N`
/// and `w_i` its linearized responses to `ℓ_{e_i}`. The family is exact
/// for quadratic Lagrangians and first-order accurate in `ξ − ξ0` in
/// general.
struct SurrogateBasis {
    offset: ScalarField,
    w: Vec<ScalarField>,
}

fn surrogate_basis(
    realization: &LagrangianRealization,
    target: &MeshDomain,
    xi0: &[f64],
    big_n: u32,
    h: f64,
    opts: &SolveOptions,
) -> Result<SurrogateBasis> {
    let d = realization.dimension();
    let mesh = MeshDomain::cube(big_n, h, d)?;
    let density = HeterogeneousDensity::new(realization, &mesh)?;
    let (v, _) = minimize_energy(&mesh, &density, &affine(&mesh, xi0), opts)?;
    let grad_v = mesh.gradient(&v)?;
    let mut offset = target.transfer_from(&mesh, &v)?;
    let mut w = Vec::with_capacity(d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let wi = solve_linearized_with(&density, &mesh, &grad_v, &affine(&mesh, &e), LINEAR_TOL)?;
        let wi = target.transfer_from(&mesh, &wi)?;
        offset = offset.add_scaled(&wi, -xi0[i]);
        w.push(wi);
    }
    Ok(SurrogateBasis { offset, w })
}

/// Best surrogate fit of `u` on `B_r` in the exact P1 `L²` inner product.
fn fit_surrogate(mesh: &MeshDomain, u: &ScalarField, basis: &SurrogateBasis, r: f64) -> Result<(f64, Vec<f64>)> {
    let d = mesh.dimension();
    let sub = mesh.ball(&vec![0.0; d], r);
    if sub.elements.is_empty() {
        return Err(Error::Domain(format!("ball of radius {r} contains no element")));
    }
    let target: Vec<f64> = u.values.iter().zip(&basis.offset.values).map(|(a, b)| a - b).collect();
    let m = d + 1;
    let field = |k: usize, v: usize| if k == 0 { 1.0 } else { basis.w[k - 1].values[v] };
    // Exact P1 mass: ∫_T f g = |T| / ((d+1)(d+2)) · (Σ f_v g_v + Σ f_v Σ g_v).
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for &e in &sub.elements {
        let nodes = mesh.element_nodes(e as usize);
        let mut sums = vec![0.0; m + 1];
        for &v in nodes {
            for k in 0..m {
                sums[k] += field(k, v as usize);
            }
            sums[m] += target[v as usize];
        }
        for a in 0..m {
            for b in 0..m {
                let dotp: f64 = nodes.iter().map(|&v| field(a, v as usize) * field(b, v as usize)).sum();
                gram[(a, b)] += dotp + sums[a] * sums[b];
            }
            let dotp: f64 = nodes.iter().map(|&v| field(a, v as usize) * target[v as usize]).sum();
            rhs[a] += dotp + sums[a] * sums[m];
        }
    }
    let coef = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("surrogate Gram matrix is singular".into()))?
        .solve(&rhs);
    let resid: Vec<f64> = (0..mesh.node_count())
        .map(|v| target[v] - (0..m).map(|k| coef[k] * field(k, v)).sum::<f64>())
        .collect();
    let excess = mesh.norm_l2_mean(&ScalarField::new(resid), &sub)?;
    Ok((excess, (1..m).map(|k| coef[k]).collect()))
}

/// Excess decay of the minimizer `u` (given on a lattice ball of radius
/// `big_r`) relative to the surrogate family, over radii in `[R/16, R/2]`.
#[allow(clippy::too_many_arguments)]
pub fn excess_decay_of(
    realization: &LagrangianRealization,
    mesh: &MeshDomain,
    u: &ScalarField,
    big_r: f64,
    xi0: Option<Vec<f64>>,
    big_n: u32,
    opts: &SolveOptions,
) -> Result<ExcessDecay> {
    if big_r > 0.25 * 3f64.powi(big_n as i32) {
        return Err(Error::Config(format!(
            "R = {big_r} exceeds a quarter of the corrector box side 3^{big_n}"
        )));
    }
    let h = mesh.mesh_width();
    let xi0 = match xi0 {
        Some(x) => x,
        None => mesh.mean_vector(&mesh.gradient(u)?, &mesh.full())?,
    };
    let basis = surrogate_basis(realization, mesh, &xi0, big_n, h, opts)?;
    let radii: Vec<f64> = dyadic_radii(h, big_r)
        .into_iter()
        .filter(|&r| r >= big_r / 16.0 - 1e-12)
        .collect();
    if radii.len() < 2 {
        return Err(Error::Config(format!("fewer than two radii in [R/16, R/2] for R = {big_r}")));
    }
    let mut excess = Vec::with_capacity(radii.len());
    let mut xi_min = Vec::with_capacity(radii.len());
    for &r in &radii {
        let (e, xi) = fit_surrogate(mesh, u, &basis, r)?;
        excess.push(e);
        xi_min.push(xi);
    }
    let floor = 1e3 * f64::EPSILON * (1.0 + mesh.norm_l2_mean(u, &mesh.full())?);
    let degenerate = excess.iter().any(|&e| e <= floor);
    let exponent = if degenerate {
        None
    } else {
        let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let y: Vec<f64> = excess.iter().map(|e| e.ln()).collect();
        Some(linear_fit(&x, &y)?.0)
    };
    Ok(ExcessDecay {
        seed: realization.seed,
        big_r,
        xi0,
        radii,
        excess,
        xi_min,
        exponent,
        degenerate,
    })
}

/// Minimizes the energy on `B_R` with data `g` and measures its excess
/// decay.
#[allow(clippy::too_many_arguments)]
pub fn excess_decay_fit(
    realization: &LagrangianRealization,
    big_r: f64,
    g: &BoundaryProfile,
    xi0: Option<Vec<f64>>,
    big_n: u32,
    h: f64,
    opts: &SolveOptions,
) -> Result<ExcessDecay> {
    let mesh = MeshDomain::lattice_ball(big_r, h, realization.dimension())?;
    let density = HeterogeneousDensity::new(realization, &mesh)?;
    let (u, _) = minimize_energy(&mesh, &density, &g.interpolate(&mesh, big_r), opts)?;
    excess_decay_of(realization, &mesh, &u, big_r, xi0, big_n, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::CoefficientLaw;

    fn opts() -> SolveOptions {
        SolveOptions::with_tol(1e-11)
    }

    fn bump() -> (BoundaryProfile, BoundaryProfile) {
        (
            BoundaryProfile::QuadraticBump {
                slope: vec![0.4, 0.1],
                amplitude: 0.3,
            },
            BoundaryProfile::Sinusoidal {
                slope: vec![0.2, -0.1],
                amplitude: 0.5,
                frequency: 1.0,
            },
        )
    }

    #[test]
    fn dyadic_radii_respect_bounds() {
        assert_eq!(dyadic_radii(0.5, 16.0), vec![2.0, 4.0, 8.0]);
        assert_eq!(dyadic_radii(0.5, 27.0), vec![2.0, 4.0, 8.0]);
        assert!(dyadic_radii(0.5, 3.0).is_empty());
    }

    #[test]
    fn minimal_scale_requires_every_larger_radius() {
        let radii = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(minimal_scale(&radii, &[5.0, 0.5, 0.5, 0.5], 0.1, 10.0), 2.0);
        assert_eq!(minimal_scale(&radii, &[0.5, 5.0, 0.5, 0.5], 0.1, 10.0), 4.0);
        assert_eq!(minimal_scale(&radii, &[0.5, 0.5, 0.5, 5.0], 0.1, 10.0), f64::INFINITY);
    }

    #[test]
    fn quadratic_difference_and_linearized_scans_agree() {
        let nl = NonlinearitySpec::quadratic(3.0);
        let r = sample_realization(CoefficientLaw::iid_two_point(1.0, 3.0, 2), nl, ball_cells(8.0, 2), 5).unwrap();
        let (g, f) = bump();
        let a = difference_lipschitz_scan(&r, 8.0, &g, &f, 10.0, 0.5, &opts()).unwrap();
        let b = linearized_lipschitz_scan(&r, 8.0, &g, &f, 10.0, 0.5, &opts()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-8 * (1.0 + x), "{x} vs {y}");
        }
        // u − v = −w, which has a different mean but the same gradient.
        assert!(a.reference > 0.0 && b.reference > 0.0);
    }

    #[test]
    fn constant_coefficients_scan_is_regular_from_the_smallest_radius() {
        let nl = NonlinearitySpec::perturbed_sqrt(3.0);
        let r = sample_realization(CoefficientLaw::constant(1.0, 2), nl, ball_cells(16.0, 2), 0).unwrap();
        let (g, f) = bump();
        let s = difference_lipschitz_scan(&r, 16.0, &g, &f, 10.0, 0.5, &opts()).unwrap();
        assert_eq!(s.minimal_scale_hat, s.radii[0], "{s:?}");
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<RadiusScan>(&json).unwrap(), s);
    }

    #[test]
    fn infinite_minimal_scale_roundtrips_through_json() {
        let s = RadiusScan {
            experiment_id: "diffreg".into(),
            seed: 1,
            big_r: 8.0,
            radii: vec![2.0],
            values: vec![1.0],
            reference: 0.01,
            minimal_scale_hat: f64::INFINITY,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<RadiusScan>(&json).unwrap(), s);
    }

    #[test]
    fn constant_corrector_differences_are_one() {
        let c = corrector_difference(
            CoefficientLaw::constant(1.0, 2),
            NonlinearitySpec::perturbed_sqrt(3.0),
            2,
            &[0.3, 0.0],
            &[0.3, 1.0],
            0,
            0.5,
            &opts(),
        )
        .unwrap();
        for r in &c.ratios {
            assert!((r - 1.0).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn quadratic_corrector_differences_are_linear_in_the_slope() {
        let law = CoefficientLaw::iid_two_point(1.0, 3.0, 2);
        let nl = NonlinearitySpec::quadratic(3.0);
        let a = corrector_difference(law, nl, 2, &[0.0, 0.0], &[1.0, 0.0], 9, 0.5, &opts()).unwrap();
        let b = corrector_difference(law, nl, 2, &[0.5, 0.7], &[0.6, 0.7], 9, 0.5, &opts()).unwrap();
        for (x, y) in a.ratios.iter().zip(&b.ratios) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn quadratic_linearization_is_exact() {
        let nl = NonlinearitySpec::quadratic(3.0);
        let r = sample_realization(CoefficientLaw::iid_two_point(1.0, 3.0, 2), nl, CellBox::cube(1, 2), 2).unwrap();
        let (g, f) = bump();
        let res = superlinear_linearization(&r, 1, &g, &f, &geometric_s_list(4), 0.5, &opts()).unwrap();
        assert!(res.errors.iter().all(|&e| e <= 1e-8), "{:?}", res.errors);
        assert!(res.inconclusive && res.slope.is_none());
    }

    #[test]
    fn superlinear_slope_of_exact_power_law() {
        let s = geometric_s_list(8);
        let e: Vec<f64> = s.iter().map(|x| 0.3 * x * x).collect();
        let slope = superlinear_slope(&s, &e, 1e-9).unwrap().unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn member_of_the_surrogate_family_has_no_excess() {
        let nl = NonlinearitySpec::perturbed_sqrt(3.0);
        let r = sample_realization(CoefficientLaw::iid_two_point(0.0, 2.0, 2), nl, CellBox::cube(4, 2), 4).unwrap();
        let xi0 = vec![0.5, -0.25];
        let big = MeshDomain::cube(4, 0.5, 2).unwrap();
        let density = HeterogeneousDensity::new(&r, &big).unwrap();
        let (v, _) = minimize_energy(&big, &density, &affine(&big, &xi0), &opts()).unwrap();
        let ball = MeshDomain::lattice_ball(16.0, 0.5, 2).unwrap();
        let u = ball.transfer_from(&big, &v).unwrap();
        let ex = excess_decay_of(&r, &ball, &u, 16.0, Some(xi0.clone()), 4, &opts()).unwrap();
        assert!(ex.excess.iter().all(|&e| e <= 1e-8), "{:?}", ex.excess);
        for xi in &ex.xi_min {
            assert!((xi[0] - xi0[0]).abs() < 1e-6 && (xi[1] - xi0[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_coefficient_excess_decays_quadratically() {
        let nl = NonlinearitySpec::perturbed_sqrt(3.0);
        let r = sample_realization(CoefficientLaw::constant(1.0, 2), nl, CellBox::cube(4, 2), 0).unwrap();
        let g = BoundaryProfile::QuadraticBump {
            slope: vec![0.3, 0.2],
            amplitude: 0.5,
        };
        let ex = excess_decay_fit(&r, 16.0, &g, None, 4, 0.5, &opts()).unwrap();
        let p = ex.exponent.unwrap();
        assert!((p - 2.0).abs() < 0.1, "{p} {:?}", ex.excess);
    }
}
