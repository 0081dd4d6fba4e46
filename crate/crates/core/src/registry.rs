//! Named experiments selectable at run time.
//!
//! Every experiment reads a [`Config`], runs its ensemble, and returns the
//! tables, JSON documents and acceptance checks of the run. Rendering is a
//! pure function of the config, so reruns produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::cell::{estimate_lbar_point, LbarSettings};
use crate::config::Config;
use crate::energy::{ClosedFormLagrangian, EffectiveLagrangian};
use crate::error::{Error, Result};
use crate::experiments::homog::{
    commutativity_ensemble, solve_homogenized, two_scale_expansion, CommuteSettings, Mesoscales, TwoScaleOptions,
};
use crate::experiments::lbar_reg::{cross_validate_d2, hessian_bounds_scan, holder_quotient_scan};
use crate::experiments::regularity::{
    ball_cells, corrector_difference, difference_lipschitz_scan, excess_decay_fit, geometric_s_list,
    linearized_lipschitz_scan, summarize_minimal_scales, superlinear_linearization, superlinear_medians,
    RadiusScan,
};
use crate::homogenized::{tabulate_lbar, uniform_axis, HomogenizedLagrangian};
use crate::lagrangian::{sample_realization, CellBox, NonlinearityKind};
use crate::mesh::MeshDomain;
use crate::rng::derived_seed;
use crate::stats::{fit_osigma, fit_rate, fmt_f64, median, run_ensemble, CsvTable, ScaleSample};

/// One acceptance check of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Everything an experiment produces.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub tables: Vec<(String, CsvTable)>,
    pub documents: Vec<(String, Value)>,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// File name and contents of every output, `summary.json` last.
    pub fn render(&self, experiment: &str) -> Result<Vec<(String, String)>> {
        let mut files = Vec::new();
        for (name, table) in &self.tables {
            files.push((name.clone(), table.to_string()?));
        }
        for (name, doc) in &self.documents {
            files.push((name.clone(), pretty(doc)?));
        }
        let summary = json!({
            "experiment": experiment,
            "passed": self.all_passed(),
            "checks": self.checks,
            "files": files.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
        });
        files.push(("summary.json".into(), pretty(&summary)?));
        Ok(files)
    }

    pub fn write_to(&self, experiment: &str, dir: &Path) -> Result<()> {
        for (name, contents) in self.render(experiment)? {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

fn pretty(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn run(&self, cfg: &Config) -> Result<RunOutput>;
}

pub struct Registry {
    entries: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// All built-in experiments.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(SampleExperiment));
        r.register(Box::new(CellExperiment));
        r.register(Box::new(LbarExperiment));
        r.register(Box::new(CommuteExperiment));
        r.register(Box::new(TwoScaleExperiment));
        r.register(Box::new(ScanExperiment { linearized: false }));
        r.register(Box::new(ScanExperiment { linearized: true }));
        r.register(Box::new(SuperlinearExperiment));
        r.register(Box::new(ExcessExperiment));
        r.register(Box::new(LbarRegExperiment));
        r
    }

    /// Adds an experiment, replacing any previous one of the same name.
    pub fn register(&mut self, e: Box<dyn Experiment>) {
        self.entries.insert(e.name(), e);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Experiment> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn run(&self, name: &str, cfg: &Config) -> Result<RunOutput> {
        let e = self.get(name).ok_or_else(|| {
            Error::Config(format!("unknown experiment '{name}', expected one of {:?}", self.names()))
        })?;
        e.run(cfg)
    }
}

fn to_doc<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn lbar_settings(cfg: &Config, n_list: Vec<u32>, ensemble_size: usize, master_seed: u64) -> LbarSettings {
    LbarSettings {
        law: cfg.law,
        nonlinearity: cfg.nonlinearity,
        n_list,
        ensemble_size,
        master_seed,
        h: cfg.mesh.h,
        solve: cfg.solver,
    }
}

fn table_axes(cfg: &Config) -> Result<Vec<Vec<f64>>> {
    let t = &cfg.experiment.table;
    let d = cfg.law.dimension;
    if t.lo.len() != d || t.hi.len() != d {
        return Err(Error::Config(format!("experiment.table.lo/hi must have {d} entries")));
    }
    (0..d).map(|i| uniform_axis(t.lo[i], t.hi[i], t.spacing)).collect()
}

/// The configured table: loaded from `experiment.table.path`, exact for
/// deterministic laws, or estimated by Monte Carlo.
fn homogenized_table(cfg: &Config) -> Result<HomogenizedLagrangian> {
    let t = &cfg.experiment.table;
    if let Some(path) = &t.path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read table {path}: {e}")))?;
        return HomogenizedLagrangian::from_json(&text);
    }
    let axes = table_axes(cfg)?;
    if cfg.law.is_deterministic() {
        return HomogenizedLagrangian::from_function(axes, &closed_form(cfg), cfg.nonlinearity.lambda_max);
    }
    let settings = lbar_settings(cfg, t.n_list.clone(), t.ensemble_size, t.master_seed);
    Ok(tabulate_lbar(&settings, axes)?.0)
}

fn closed_form(cfg: &Config) -> ClosedFormLagrangian {
    ClosedFormLagrangian {
        nonlinearity: cfg.nonlinearity,
        coefficient: cfg.law.range_low,
        dim: cfg.law.dimension,
    }
}

/// Effective Lagrangian for the homogenized solves; exact for
/// deterministic laws.
fn effective_lagrangian(cfg: &Config) -> Result<Box<dyn EffectiveLagrangian>> {
    if cfg.law.is_deterministic() && cfg.experiment.table.path.is_none() {
        Ok(Box::new(closed_form(cfg)))
    } else {
        Ok(Box::new(homogenized_table(cfg)?))
    }
}

fn slope_columns(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

// ---------------------------------------------------------------------------

struct SampleExperiment;

impl Experiment for SampleExperiment {
    fn name(&self) -> &'static str {
        "sample"
    }

    fn description(&self) -> &'static str {
        "sample one realization of the coefficient field on the cube of exponent n"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let d = cfg.law.dimension;
        let cell_box = CellBox::cube(cfg.experiment.n, d);
        let seed = derived_seed(cfg.ensemble.master_seed, 0);
        let r = sample_realization(cfg.law, cfg.nonlinearity, cell_box.clone(), seed)?;
        let mut cols = slope_columns("z", d);
        cols.push("a".into());
        let mut table = CsvTable::new(cols);
        for (idx, &a) in r.cell_values().iter().enumerate() {
            let mut rem = idx;
            let mut row: Vec<String> = (0..d)
                .map(|i| {
                    let z = cell_box.origin[i] + (rem % cell_box.extents[i]) as i64;
                    rem /= cell_box.extents[i];
                    z.to_string()
                })
                .collect();
            row.push(fmt_f64(a));
            table.push(row)?;
        }
        let (lo, hi) = cfg.nonlinearity.coefficient_range();
        let in_range = r.cell_values().iter().all(|&a| a >= lo && a <= hi);
        Ok(RunOutput {
            tables: vec![("cells.csv".into(), table)],
            documents: vec![("realization.json".into(), to_doc(&r.spec())?)],
            checks: vec![Check::new(
                "coefficients_in_range",
                in_range,
                format!("{} cells inside [{lo}, {hi}]", r.cell_values().len()),
            )],
        })
    }
}

// ---------------------------------------------------------------------------

struct CellExperiment;

impl Experiment for CellExperiment {
    fn name(&self) -> &'static str {
        "cell"
    }

    fn description(&self) -> &'static str {
        "ensemble of cell problems nu(cube_n, xi) with first and second slope derivatives"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let d = cfg.law.dimension;
        let xi = &cfg.experiment.xi;
        let settings = lbar_settings(cfg, cfg.experiment.n_list.clone(), cfg.ensemble.size, cfg.ensemble.master_seed);
        let est = estimate_lbar_point(&settings, xi)?;
        let mut cols = vec!["seed".to_string(), "n".to_string()];
        cols.extend(slope_columns("xi", d));
        cols.push("nu".into());
        cols.extend(slope_columns("d_nu", d));
        for i in 1..=d {
            for j in 1..=d {
                cols.push(format!("d2_nu_{i}{j}"));
            }
        }
        cols.push("newton_iterations".into());
        let mut table = CsvTable::new(cols);
        for s in &est.samples {
            let mut row = vec![s.seed.to_string(), s.n.to_string()];
            row.extend(s.xi.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(s.nu));
            row.extend(s.d_nu.iter().map(|v| fmt_f64(*v)));
            row.extend(s.d2_nu.iter().flatten().map(|v| fmt_f64(*v)));
            row.push(s.iterations.to_string());
            table.push(row)?;
        }
        let mut checks = vec![Check::new(
            "finite_estimates",
            est.value.is_finite() && est.gradient.iter().all(|v| v.is_finite()),
            format!("L̄ estimate {} ± {}", est.value, est.value_uncertainty),
        )];
        if d == 1 && cfg.nonlinearity.kind == NonlinearityKind::Quadratic {
            if let Some(hm) = cfg.law.harmonic_mean() {
                let exact = 0.5 * hm * xi[0] * xi[0];
                let tol = 2.0 * est.value_stderr + 10.0 * cfg.solver.tol;
                checks.push(Check::new(
                    "harmonic_mean",
                    (est.value - exact).abs() <= tol,
                    format!("estimate {} vs closed form {exact} (tolerance {tol})", est.value),
                ));
            }
        }
        Ok(RunOutput {
            tables: vec![("cells.csv".into(), table)],
            documents: vec![("estimate.json".into(), to_doc(&est)?)],
            checks,
        })
    }
}

// ---------------------------------------------------------------------------

struct LbarExperiment;

impl Experiment for LbarExperiment {
    fn name(&self) -> &'static str {
        "lbar"
    }

    fn description(&self) -> &'static str {
        "tabulate the homogenized Lagrangian and its derivatives on a slope grid"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let t = &cfg.experiment.table;
        let d = cfg.law.dimension;
        let settings = lbar_settings(cfg, t.n_list.clone(), t.ensemble_size, t.master_seed);
        let (table, estimates) = tabulate_lbar(&settings, table_axes(cfg)?)?;
        let mut cols = slope_columns("xi", d);
        cols.extend(["value".to_string(), "value_uncertainty".to_string()]);
        cols.extend(slope_columns("grad", d));
        for i in 1..=d {
            for j in 1..=d {
                cols.push(format!("hess_{i}{j}"));
            }
        }
        cols.push("hess_uncertainty_max".into());
        cols.push("monotone".into());
        let mut csv = CsvTable::new(cols);
        for e in &estimates {
            let mut row: Vec<String> = e.xi.iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(e.value));
            row.push(fmt_f64(e.value_uncertainty));
            row.extend(e.gradient.iter().map(|v| fmt_f64(*v)));
            row.extend(e.hessian.iter().flatten().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(e.hessian_uncertainty.iter().flatten().cloned().fold(0.0, f64::max)));
            row.push(e.monotone.to_string());
            csv.push(row)?;
        }
        let bounds = hessian_bounds_scan(&table);
        Ok(RunOutput {
            tables: vec![("lbar_points.csv".into(), csv)],
            documents: vec![
                ("table.json".into(), serde_json::from_str(&table.to_json()?)?),
                ("hessian_bounds.json".into(), to_doc(&bounds)?),
            ],
            checks: vec![Check::new(
                "hessian_bounds",
                bounds.violations.is_empty(),
                format!(
                    "eigenvalues in [{}, {}], {} nodes outside [1, Λ] beyond 3 standard errors",
                    bounds.min_eigenvalue,
                    bounds.max_eigenvalue,
                    bounds.violations.len()
                ),
            )],
        })
    }
}

// ---------------------------------------------------------------------------

struct CommuteExperiment;

impl Experiment for CommuteExperiment {
    fn name(&self) -> &'static str {
        "commute"
    }

    fn description(&self) -> &'static str {
        "homogenization errors of the linearized and nonlinear Dirichlet problems across scales"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let lagrangian = effective_lagrangian(cfg)?;
        let settings = CommuteSettings {
            law: cfg.law,
            nonlinearity: cfg.nonlinearity,
            n_list: cfg.experiment.n_list.clone(),
            ensemble_size: cfg.ensemble.size,
            master_seed: cfg.ensemble.master_seed,
            g: cfg.experiment.g.clone(),
            f: cfg.experiment.f.clone(),
            h: cfg.mesh.h,
            solve: cfg.solver,
            record_timing: cfg.output.record_timing,
        };
        let summary = commutativity_ensemble(&settings, lagrangian.as_ref())?;
        let mut checks = Vec::new();
        if cfg.law.is_deterministic() {
            let bound = 10.0 * cfg.solver.tol;
            let worst = summary
                .samples
                .iter()
                .map(|s| s.err_grad_hm1.max(s.err_flux_hm1).max(s.err_nonlinear_hm1))
                .fold(0.0, f64::max);
            checks.push(Check::new(
                "constant_coefficient_control",
                worst <= bound,
                format!("largest error {worst:e} (bound {bound:e})"),
            ));
        } else {
            let dec = |f: fn(&(u32, f64, f64, f64)) -> f64| summary.medians.windows(2).all(|w| f(&w[1]) < f(&w[0]));
            checks.push(Check::new(
                "median_gradient_error_decreases",
                dec(|m| m.1),
                format!("{:?}", summary.medians.iter().map(|m| m.1).collect::<Vec<_>>()),
            ));
            checks.push(Check::new(
                "median_flux_error_decreases",
                dec(|m| m.2),
                format!("{:?}", summary.medians.iter().map(|m| m.2).collect::<Vec<_>>()),
            ));
            let rate_ok = summary.grad_rate.as_ref().is_some_and(|r| r.alpha_hat > 0.0 && r.ci_low > 0.0);
            checks.push(Check::new(
                "positive_rate",
                rate_ok,
                match &summary.grad_rate {
                    Some(r) => format!("alpha_hat {} in [{}, {}]", r.alpha_hat, r.ci_low, r.ci_high),
                    None => "rate fit unavailable".into(),
                },
            ));
        }
        let rates = json!({
            "grad": summary.grad_rate,
            "flux": summary.flux_rate,
            "nonlinear": summary.nonlinear_rate,
            "medians": summary.medians,
            "failures": summary.failures,
        });
        Ok(RunOutput {
            tables: vec![("commute.csv".into(), summary.csv()?)],
            documents: vec![("rates.json".into(), rates)],
            checks,
        })
    }
}

// ---------------------------------------------------------------------------

struct TwoScaleExperiment;

impl Experiment for TwoScaleExperiment {
    fn name(&self) -> &'static str {
        "twoscale"
    }

    fn description(&self) -> &'static str {
        "two-scale expansion ledger of the locally stationary linearized problem"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let lagrangian = effective_lagrangian(cfg)?;
        let ex = &cfg.experiment;
        let n = ex.n;
        let meso = ex.mesoscales.unwrap_or_else(|| Mesoscales::default_for(n));
        meso.validate(n)?;
        let d = cfg.law.dimension;
        let h = cfg.mesh.h;
        let mesh = MeshDomain::cube(n, h, d)?;
        let r = 3f64.powi(n as i32);
        let u_hom = solve_homogenized(&mesh, lagrangian.as_ref(), &ex.g.interpolate(&mesh, r), &cfg.solver)?;
        let f = ex.f.interpolate(&mesh, r);
        let opts = TwoScaleOptions {
            mollify: ex.mollify,
            cutoff: ex.cutoff,
        };
        let outcome = run_ensemble(cfg.ensemble.master_seed, cfg.ensemble.size, |seed| {
            let real = sample_realization(cfg.law, cfg.nonlinearity, CellBox::cube(n, d), seed)?;
            two_scale_expansion(&real, lagrangian.as_ref(), n, meso, &u_hom, &f, h, &cfg.solver, opts)
        })?;
        let mut csv = CsvTable::new(["seed", "n", "k", "l", "m", "term", "value"]);
        let mut finite = true;
        for ledger in outcome.values() {
            for (term, v) in &ledger.terms {
                finite &= v.is_finite();
                csv.push(vec![
                    ledger.seed.to_string(),
                    n.to_string(),
                    meso.k.to_string(),
                    meso.l.to_string(),
                    meso.m.to_string(),
                    term.clone(),
                    fmt_f64(*v),
                ])?;
            }
        }
        let mut medians = BTreeMap::new();
        if let Some(first) = outcome.values().next() {
            for term in first.terms.keys() {
                let vals: Vec<f64> = outcome.values().map(|l| l.terms[term]).collect();
                medians.insert(term.clone(), median(&vals));
            }
        }
        let keys_ok = ["glue_error", "expansion_residual", "flux_residual"]
            .iter()
            .all(|k| medians.contains_key(*k));
        Ok(RunOutput {
            tables: vec![("twoscale.csv".into(), csv)],
            documents: vec![(
                "ledger.json".into(),
                json!({"mesoscales": meso, "n": n, "medians": medians, "failures": outcome.failures}),
            )],
            checks: vec![Check::new(
                "ledger_complete",
                finite && keys_ok,
                format!("median terms {medians:?}"),
            )],
        })
    }
}

// ---------------------------------------------------------------------------

struct ScanExperiment {
    linearized: bool,
}

impl Experiment for ScanExperiment {
    fn name(&self) -> &'static str {
        if self.linearized {
            "linreg"
        } else {
            "diffreg"
        }
    }

    fn description(&self) -> &'static str {
        if self.linearized {
            "large-scale Lipschitz scan of linearized solutions on lattice balls"
        } else {
            "large-scale Lipschitz scan of differences of minimizers, plus corrector differences"
        }
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let ex = &cfg.experiment;
        let d = cfg.law.dimension;
        let outcome = run_ensemble(cfg.ensemble.master_seed, cfg.ensemble.size, |seed| {
            let real = sample_realization(cfg.law, cfg.nonlinearity, ball_cells(ex.big_r, d), seed)?;
            if self.linearized {
                linearized_lipschitz_scan(&real, ex.big_r, &ex.g, &ex.f, ex.k_ratio, cfg.mesh.h, &cfg.solver)
            } else {
                difference_lipschitz_scan(&real, ex.big_r, &ex.g, &ex.f, ex.k_ratio, cfg.mesh.h, &cfg.solver)
            }
        })?;
        let scans: Vec<RadiusScan> = outcome.values().cloned().collect();
        let mut csv = RadiusScan::csv_header();
        for s in &scans {
            s.push_rows(&mut csv)?;
        }
        let summary = summarize_minimal_scales(&scans, ex.sigma)?;
        let mut checks = vec![
            Check::new(
                "minimal_scale_mostly_finite",
                summary.finite_fraction >= 0.9,
                format!("finite fraction {}", summary.finite_fraction),
            ),
            Check::new(
                "tail_beyond_quarter_radius",
                summary.beyond_quarter_fraction <= 0.1,
                format!("fraction beyond R/4: {}", summary.beyond_quarter_fraction),
            ),
        ];
        let mut tables = vec![("scans.csv".to_string(), csv)];
        let mut documents = vec![("minimal_scale.json".to_string(), to_doc(&summary)?)];
        if !self.linearized && !ex.corrector_gaps.is_empty() {
            let mut ccsv = CsvTable::new(["seed", "gap", "r", "ratio"]);
            let mut worst: f64 = 0.0;
            let mut medians = Vec::new();
            for &gap in &ex.corrector_gaps {
                let mut xi2 = ex.xi.clone();
                if xi2.is_empty() {
                    return Err(Error::Config("experiment.xi must not be empty".into()));
                }
                xi2[0] += gap;
                let out = run_ensemble(cfg.ensemble.master_seed, cfg.ensemble.size, |seed| {
                    corrector_difference(cfg.law, cfg.nonlinearity, ex.n, &ex.xi, &xi2, seed, cfg.mesh.h, &cfg.solver)
                })?;
                let diffs: Vec<_> = out.values().collect();
                for c in &diffs {
                    for (r, q) in c.radii.iter().zip(&c.ratios) {
                        worst = worst.max(*q);
                        ccsv.push(vec![c.seed.to_string(), fmt_f64(gap), fmt_f64(*r), fmt_f64(*q)])?;
                    }
                }
                if let Some(first) = diffs.first() {
                    let m: Vec<f64> = (0..first.radii.len())
                        .map(|j| median(&diffs.iter().map(|c| c.ratios[j]).collect::<Vec<_>>()))
                        .collect();
                    medians.push(json!({"gap": gap, "radii": first.radii, "median_ratios": m}));
                }
            }
            checks.push(Check::new(
                "corrector_difference_ratio_bounded",
                worst <= ex.ratio_bound,
                format!("largest ratio {worst} (bound {})", ex.ratio_bound),
            ));
            tables.push(("correctors.csv".into(), ccsv));
            documents.push(("correctors.json".into(), Value::Array(medians)));
        }
        Ok(RunOutput {
            tables,
            documents,
            checks,
        })
    }
}

// ---------------------------------------------------------------------------

struct SuperlinearExperiment;

impl Experiment for SuperlinearExperiment {
    fn name(&self) -> &'static str {
        "superlin"
    }

    fn description(&self) -> &'static str {
        "superlinear decay of the linearization error in the perturbation size"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let ex = &cfg.experiment;
        let d = cfg.law.dimension;
        let s_list = geometric_s_list(ex.s_levels);
        let outcome = run_ensemble(cfg.ensemble.master_seed, cfg.ensemble.size, |seed| {
            let real = sample_realization(cfg.law, cfg.nonlinearity, CellBox::cube(ex.n, d), seed)?;
            superlinear_linearization(&real, ex.n, &ex.g, &ex.f, &s_list, cfg.mesh.h, &cfg.solver)
        })?;
        let results: Vec<_> = outcome.values().cloned().collect();
        let mut csv = CsvTable::new(["seed", "s", "error"]);
        for r in &results {
            for (s, e) in r.s_list.iter().zip(&r.errors) {
                csv.push(vec![r.seed.to_string(), fmt_f64(*s), fmt_f64(*e)])?;
            }
        }
        let (medians, slope) = superlinear_medians(&results, cfg.solver.tol)?;
        let check = if cfg.nonlinearity.kind == NonlinearityKind::Quadratic {
            let worst = results.iter().flat_map(|r| r.errors.iter().cloned()).fold(0.0, f64::max);
            Check::new(
                "exact_linearization",
                worst <= 10.0 * cfg.solver.tol,
                format!("largest error {worst:e}"),
            )
        } else {
            Check::new(
                "superlinear_slope",
                slope.is_some_and(|p| p >= ex.min_slope),
                format!("median slope {slope:?} (threshold {})", ex.min_slope),
            )
        };
        Ok(RunOutput {
            tables: vec![("superlin.csv".into(), csv)],
            documents: vec![(
                "slope.json".into(),
                json!({"s_list": s_list, "median_errors": medians, "slope": slope, "inconclusive": slope.is_none()}),
            )],
            checks: vec![check],
        })
    }
}

// ---------------------------------------------------------------------------

struct ExcessExperiment;

impl Experiment for ExcessExperiment {
    fn name(&self) -> &'static str {
        "excess"
    }

    fn description(&self) -> &'static str {
        "first-order excess decay against finite-volume corrector surrogates"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let ex = &cfg.experiment;
        let d = cfg.law.dimension;
        let outcome = run_ensemble(cfg.ensemble.master_seed, cfg.ensemble.size, |seed| {
            let real = sample_realization(cfg.law, cfg.nonlinearity, CellBox::cube(ex.big_n, d), seed)?;
            excess_decay_fit(&real, ex.big_r, &ex.g, ex.xi0.clone(), ex.big_n, cfg.mesh.h, &cfg.solver)
        })?;
        let fits: Vec<_> = outcome.values().cloned().collect();
        let mut csv = CsvTable::new(["seed", "R", "r", "excess"]);
        for f in &fits {
            for (r, e) in f.radii.iter().zip(&f.excess) {
                csv.push(vec![f.seed.to_string(), fmt_f64(f.big_r), fmt_f64(*r), fmt_f64(*e)])?;
            }
        }
        let exps: Vec<f64> = fits.iter().filter_map(|f| f.exponent).collect();
        let med = if exps.is_empty() { f64::NAN } else { median(&exps) };
        let check = if cfg.law.is_deterministic() {
            Check::new("quadratic_excess_decay", (med - 2.0).abs() <= 0.1, format!("exponent {med}"))
        } else {
            Check::new(
                "median_excess_exponent",
                med >= ex.min_exponent,
                format!("median exponent {med} (threshold {})", ex.min_exponent),
            )
        };
        Ok(RunOutput {
            tables: vec![("excess.csv".into(), csv)],
            documents: vec![(
                "exponents.json".into(),
                json!({"exponents": exps, "median": if med.is_finite() { Some(med) } else { None }, "fits": fits}),
            )],
            checks: vec![check],
        })
    }
}

// ---------------------------------------------------------------------------

struct LbarRegExperiment;

impl Experiment for LbarRegExperiment {
    fn name(&self) -> &'static str {
        "lbarreg"
    }

    fn description(&self) -> &'static str {
        "Hessian bounds, Hölder quotients and cross-validation of the homogenized Hessian"
    }

    fn run(&self, cfg: &Config) -> Result<RunOutput> {
        let ex = &cfg.experiment;
        let table = homogenized_table(cfg)?;
        let bounds = hessian_bounds_scan(&table);
        let holder = holder_quotient_scan(&table, ex.gamma, ex.holder_radius)?;
        let mut checks = vec![Check::new(
            "hessian_bounds",
            bounds.violations.is_empty(),
            format!("eigenvalues in [{}, {}]", bounds.min_eigenvalue, bounds.max_eigenvalue),
        )];
        let mut csv = CsvTable::new(["n", "k", "discrepancy", "combined_uncertainty", "within_uncertainty"]);
        let mut cvs = Vec::new();
        let settings = lbar_settings(cfg, vec![ex.n], cfg.ensemble.size, cfg.ensemble.master_seed);
        for &k in &ex.k_list {
            let cv = cross_validate_d2(&settings, &ex.xi, ex.n, k, ex.fd_step)?;
            csv.push(vec![
                ex.n.to_string(),
                k.to_string(),
                fmt_f64(cv.discrepancy),
                fmt_f64(cv.combined_uncertainty),
                cv.within_uncertainty.to_string(),
            ])?;
            cvs.push(cv);
        }
        if let Some(last) = cvs.iter().max_by_key(|c| c.k) {
            checks.push(Check::new(
                "cross_validation",
                last.within_uncertainty,
                format!(
                    "k = {}: discrepancy {} vs combined uncertainty {}",
                    last.k, last.discrepancy, last.combined_uncertainty
                ),
            ));
        }
        Ok(RunOutput {
            tables: vec![("crossval.csv".into(), csv)],
            documents: vec![
                (
                    "holder.json".into(),
                    json!({
                        "gamma": holder.gamma,
                        "max_quotient": holder.max_quotient,
                        "arg_pair": holder.arg_pair,
                        "grid_spacing": holder.grid_spacing,
                        "noise_floor": holder.noise_floor,
                        "noise_quotient": holder.noise_quotient,
                    }),
                ),
                ("hessian_bounds.json".into(), to_doc(&bounds)?),
                ("crossval.json".into(), to_doc(&cvs)?),
            ],
            checks,
        })
    }
}

// ---------------------------------------------------------------------------
// Reports

/// Rate fits and tail fits recomputed from the CSV files of a run
/// directory.
pub fn report(dir: &Path) -> Result<Value> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut rate_fits = serde_json::Map::new();
    let mut tail_fits = serde_json::Map::new();
    for name in &names {
        let table = CsvTable::read(&dir.join(name))?;
        if table.column("err_grad_Hm1").is_some() {
            let ns = table.numeric_column("n")?;
            let seeds = table.numeric_column("seed")?;
            let mut fits = serde_json::Map::new();
            for (key, col) in [
                ("grad", "err_grad_Hm1"),
                ("flux", "err_flux_Hm1"),
                ("nonlinear", "err_nonlinear_Hm1"),
            ] {
                let vals = table.numeric_column(col)?;
                let samples: Vec<ScaleSample> = (0..vals.len())
                    .map(|i| ScaleSample {
                        n: ns[i] as u32,
                        seed: table.rows[i][table.column("seed").expect("checked")].parse().unwrap_or(seeds[i] as u64),
                        value: vals[i],
                    })
                    .collect();
                fits.insert(
                    key.into(),
                    match fit_rate(&samples) {
                        Ok(f) => json!({"alpha_hat": f.alpha_hat, "ci": f.ci, "n_list": f.n_list, "count": f.count}),
                        Err(e) => json!({"error": e.to_string()}),
                    },
                );
            }
            rate_fits.insert(name.clone(), Value::Object(fits));
        }
        if table.column("minimal_scale_hat").is_some() {
            let seed_col = table.column("seed").ok_or_else(|| Error::Consistency("missing seed column".into()))?;
            let scale = table.numeric_column("minimal_scale_hat")?;
            let big_r = table.numeric_column("R")?;
            let mut per_seed = BTreeMap::new();
            for (i, row) in table.rows.iter().enumerate() {
                let v = if scale[i].is_finite() { scale[i] } else { big_r[i] };
                per_seed.insert(row[seed_col].clone(), v);
            }
            let samples: Vec<f64> = per_seed.values().cloned().collect();
            tail_fits.insert(
                name.clone(),
                match fit_osigma(&samples, 1.0) {
                    Ok(f) => to_doc(&f)?,
                    Err(e) => json!({"error": e.to_string()}),
                },
            );
        }
    }
    let summary = match std::fs::read_to_string(dir.join("summary.json")) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => Value::Null,
    };
    Ok(json!({
        "run": dir.file_name().map(|n| n.to_string_lossy().into_owned()),
        "csv_files": names,
        "rate_fits": rate_fits,
        "tail_fits": tail_fits,
        "summary": summary,
    }))
}
