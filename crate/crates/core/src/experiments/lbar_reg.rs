//! Regularity of the homogenized Lagrangian: Hessian bounds, Hölder
//! quotients of its Hessian on a ball, and cross-validation of two
//! Hessian estimators.

use serde::{Deserialize, Serialize};

use crate::cell::{ahom_frozen, estimate_lbar_point, LbarSettings};
use crate::error::{Error, Result};
use crate::homogenized::HomogenizedLagrangian;
use crate::lagrangian::{sample_realization, CellBox};
use crate::linalg::{from_rows, sub, symmetric_eigenvalues, symmetric_norm};
use crate::stats::{mean, run_ensemble, stderr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianBounds {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    pub lambda_max: f64,
    /// Nodes whose eigenvalues leave `[1 − 3 s, Λ + 3 s]`, with `s` the
    /// largest Hessian standard error at that node.
    pub violations: Vec<Vec<f64>>,
}

pub fn hessian_bounds_scan(table: &HomogenizedLagrangian) -> HessianBounds {
    let d = table.dimension;
    let mut out = HessianBounds {
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        argmin: Vec::new(),
        argmax: Vec::new(),
        lambda_max: table.lambda_max,
        violations: Vec::new(),
    };
    for i in 0..table.node_count() {
        let eig = symmetric_eigenvalues(&from_rows(&table.hessians[i]), d);
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let node = table.node(i);
        if lo < out.min_eigenvalue {
            out.min_eigenvalue = lo;
            out.argmin = node.clone();
        }
        if hi > out.max_eigenvalue {
            out.max_eigenvalue = hi;
            out.argmax = node.clone();
        }
        let s = table.hessian_stderr[i].iter().flatten().cloned().fold(0.0, f64::max);
        if lo < 1.0 - 3.0 * s || hi > table.lambda_max + 3.0 * s {
            out.violations.push(node);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub gamma: f64,
    pub radius: f64,
    pub max_quotient: f64,
    pub arg_pair: (Vec<f64>, Vec<f64>),
    pub grid_spacing: f64,
    /// Minimum separation of the pairs entering the maximum.
    pub noise_floor: f64,
    /// Size of the quotient that Monte-Carlo noise alone can produce.
    pub noise_quotient: f64,
    pub pair_count: usize,
}

/// Largest `|D²L̄(ξ₁) − D²L̄(ξ₂)| / |ξ₁ − ξ₂|^γ` over tabulated nodes in
/// the closed ball of radius `radius`, for pairs at least two grid
/// spacings apart.
pub fn holder_quotient_scan(table: &HomogenizedLagrangian, gamma: f64, radius: f64) -> Result<HolderReport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let spacing = table
        .axes
        .iter()
        .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
        .fold(0.0, f64::max);
    let d = table.dimension;
    let floor = 2.0 * spacing - 1e-12;
    let nodes: Vec<(usize, Vec<f64>)> = (0..table.node_count())
        .map(|i| (i, table.node(i)))
        .filter(|(_, x)| x.iter().map(|v| v * v).sum::<f64>() <= radius * radius + 1e-12)
        .collect();
    let mats: Vec<_> = nodes.iter().map(|(i, _)| from_rows(&table.hessians[*i])).collect();
    let mut best = (0.0, 0usize, 0usize);
    let mut pairs = 0;
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            let dist = nodes[a].1.iter().zip(&nodes[b].1).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if dist < floor {
                continue;
            }
            pairs += 1;
            let q = symmetric_norm(&sub(&mats[a], &mats[b]), d) / dist.powf(gamma);
            if q > best.0 {
                best = (q, a, b);
            }
        }
    }
    if pairs == 0 {
        return Err(Error::InsufficientData(format!(
            "no node pairs at separation >= {} inside the ball of radius {radius}",
            2.0 * spacing
        )));
    }
    let max_stderr = nodes
        .iter()
        .flat_map(|(i, _)| table.hessian_stderr[*i].iter().flatten().cloned())
        .fold(0.0, f64::max);
    Ok(HolderReport {
        gamma,
        radius,
        max_quotient: best.0,
        arg_pair: (nodes[best.1].1.clone(), nodes[best.2].1.clone()),
        grid_spacing: spacing,
        noise_floor: 2.0 * spacing,
        noise_quotient: 2.0 * 3.0 * d as f64 * max_stderr / (2.0 * spacing).powf(gamma),
        pair_count: pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub xi: Vec<f64>,
    pub n: u32,
    pub k: u32,
    pub fd_step: f64,
    /// Mean of the frozen-coefficient effective matrices.
    pub ahom: Vec<Vec<f64>>,
    pub ahom_uncertainty: Vec<Vec<f64>>,
    /// Central differences of the estimated `DL̄`.
    pub d2_fd: Vec<Vec<f64>>,
    pub d2_fd_uncertainty: Vec<Vec<f64>>,
    /// Largest entrywise discrepancy and the combined uncertainty of that
    /// entry.
    pub discrepancy: f64,
    pub combined_uncertainty: f64,
    /// Every entry lies within its combined uncertainty.
    pub within_uncertainty: bool,
}

/// Compares the effective matrix of the frozen-gradient coefficients on
/// `□_n` (built from `k`-cube solves) with central differences of the
/// Monte-Carlo gradient of `L̄` at levels `n − 1` and `n`. Both use the
/// seeds of `settings`.
///
/// The difference estimator's uncertainty is the level difference plus two
/// paired standard errors; the frozen estimator's is two standard errors.
pub fn cross_validate_d2(settings: &LbarSettings, xi: &[f64], n: u32, k: u32, fd_step: f64) -> Result<CrossValidation> {
    let d = settings.law.dimension;
    if xi.len() != d {
        return Err(Error::Config("slope must match the dimension of the law".into()));
    }
    if n == 0 || k >= n {
        return Err(Error::Config(format!("cross-validation needs 0 < k < n, got k = {k}, n = {n}")));
    }
    if !(fd_step > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let levels = vec![n - 1, n];
    let lbar = LbarSettings {
        n_list: levels.clone(),
        ..settings.clone()
    };
    // Per seed and level: the central-difference matrix.
    let mut plus = Vec::with_capacity(d);
    let mut minus = Vec::with_capacity(d);
    for i in 0..d {
        let mut xp = xi.to_vec();
        xp[i] += fd_step;
        let mut xm = xi.to_vec();
        xm[i] -= fd_step;
        plus.push(estimate_lbar_point(&lbar, &xp)?);
        minus.push(estimate_lbar_point(&lbar, &xm)?);
    }
    let mut d2_fd = vec![vec![0.0; d]; d];
    let mut d2_fd_unc = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut level_means = Vec::new();
            let mut last_stderr = 0.0;
            for &level in &levels {
                let fd: Vec<f64> = plus[i]
                    .samples
                    .iter()
                    .filter(|s| s.n == level)
                    .map(|sp| {
                        minus[i]
                            .samples
                            .iter()
                            .find(|sm| sm.n == level && sm.seed == sp.seed)
                            .map(|sm| (sp.d_nu[j] - sm.d_nu[j]) / (2.0 * fd_step))
                            .ok_or_else(|| Error::Consistency("unpaired difference samples".into()))
                    })
                    .collect::<Result<_>>()?;
                level_means.push(mean(&fd));
                last_stderr = stderr(&fd);
            }
            d2_fd[i][j] = level_means[1];
            d2_fd_unc[i][j] = (level_means[1] - level_means[0]).abs() + 2.0 * last_stderr;
        }
    }

    let outcome = run_ensemble(settings.master_seed, settings.ensemble_size, |seed| {
        let r = sample_realization(settings.law, settings.nonlinearity, CellBox::cube(n, d), seed)?;
        ahom_frozen(&r, n, xi, k, settings.h, &settings.solve)
    })?;
    let mats: Vec<&Vec<Vec<f64>>> = outcome.values().collect();
    let mut ahom = vec![vec![0.0; d]; d];
    let mut ahom_unc = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let v: Vec<f64> = mats.iter().map(|m| m[i][j]).collect();
            ahom[i][j] = mean(&v);
            ahom_unc[i][j] = 2.0 * stderr(&v);
        }
    }

    let mut discrepancy = 0.0;
    let mut combined = 0.0;
    let mut within = true;
    for i in 0..d {
        for j in 0..d {
            let delta = (ahom[i][j] - d2_fd[i][j]).abs();
            let unc = ahom_unc[i][j] + d2_fd_unc[i][j];
            within &= delta <= unc;
            if delta > discrepancy {
                discrepancy = delta;
                combined = unc;
            }
        }
    }
    if discrepancy == 0.0 {
        combined = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| ahom_unc[i][j] + d2_fd_unc[i][j])
            .fold(0.0, f64::max);
    }
    Ok(CrossValidation {
        xi: xi.to_vec(),
        n,
        k,
        fd_step,
        ahom,
        ahom_uncertainty: ahom_unc,
        d2_fd,
        d2_fd_uncertainty: d2_fd_unc,
        discrepancy,
        combined_uncertainty: combined,
        within_uncertainty: within,
    })
}
