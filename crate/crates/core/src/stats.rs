//! Ensemble driver, stretched-exponential tail fits, rate fits and the
//! versioned CSV/JSON emitters.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_seed;

pub const CSV_HEADER: &str = "nlhomog-csv v1";
pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const BOOTSTRAP_SEED: u64 = 0x5eed_b007;
/// Largest tolerated fraction of failed realizations.
pub const FAILURE_FRACTION: f64 = 0.10;

// ---------------------------------------------------------------------------
// Elementary statistics

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (zero for fewer than two samples).
pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile of the sorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Ordinary least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData("a line fit needs at least two points".into()));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("a line fit needs two distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

// ---------------------------------------------------------------------------
// Tail fits

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFraction {
    pub lambda: f64,
    /// Fraction of samples exceeding `lambda * theta_hat`.
    pub empirical: f64,
    /// Chebyshev bound `2 exp(-lambda^sigma)`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub sigma: f64,
    #[serde(with = "extended_float")]
    pub theta_hat: f64,
    pub sample_count: usize,
    pub degenerate: bool,
    pub tail_fractions: Vec<TailFraction>,
}

fn empirical_moment(scaled: &[f64], t: f64, sigma: f64) -> f64 {
    scaled.iter().map(|&x| (x / t).powf(sigma).exp()).sum::<f64>() / scaled.len() as f64
}

/// Smallest `θ` with empirical mean of `exp((X₊/θ)^σ)` at most 2.
///
/// The search runs on `θ / max X₊`, so rescaling every sample by a power of
/// two rescales the result exactly.
pub fn fit_osigma(samples: &[f64], sigma: f64) -> Result<TailFit> {
    if samples.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "tail fits need at least 8 samples, got {}",
            samples.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Numerical("tail fit received NaN samples".into()));
    }
    let pos: Vec<f64> = samples.iter().map(|&x| x.max(0.0)).collect();
    let max = pos.iter().cloned().fold(0.0, f64::max);
    let n = samples.len() as f64;
    let lambdas = [1.0, 2.0, 4.0];
    if max == 0.0 || max.is_infinite() {
        let theta = if max == 0.0 { 0.0 } else { f64::INFINITY };
        return Ok(TailFit {
            sigma,
            theta_hat: theta,
            sample_count: samples.len(),
            degenerate: true,
            tail_fractions: lambdas
                .iter()
                .map(|&lambda| TailFraction {
                    lambda,
                    empirical: pos.iter().filter(|&&x| x > lambda * theta).count() as f64 / n,
                    bound: 2.0 * (-lambda.powf(sigma)).exp(),
                })
                .collect(),
        });
    }
    let scaled: Vec<f64> = pos.iter().map(|&x| x / max).collect();
    let mut lo = 0.99 / (2.0 * n).ln().powf(1.0 / sigma);
    let mut hi = 1.0 / 2f64.ln().powf(1.0 / sigma);
    for _ in 0..200 {
        if (hi - lo) <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if empirical_moment(&scaled, mid, sigma) <= 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let theta = hi * max;
    Ok(TailFit {
        sigma,
        theta_hat: theta,
        sample_count: samples.len(),
        degenerate: false,
        tail_fractions: lambdas
            .iter()
            .map(|&lambda| TailFraction {
                lambda,
                empirical: pos.iter().filter(|&&x| x > lambda * theta).count() as f64 / n,
                bound: 2.0 * (-lambda.powf(sigma)).exp(),
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Rate fits

/// One error measurement at scale `n` for the realization `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSample {
    pub n: u32,
    pub seed: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub alpha_hat: f64,
    /// Half-width of the 95% percentile bootstrap interval.
    pub ci: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_list: Vec<u32>,
    pub count: usize,
    pub medians: Vec<f64>,
}

fn median_slope(samples: &[ScaleSample], n_list: &[u32], weights: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut medians = Vec::new();
    for &n in n_list {
        let mut vals = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if s.n == n {
                let w = weights.map_or(1, |w| w[i]);
                vals.extend(std::iter::repeat(s.value).take(w));
            }
        }
        if vals.is_empty() {
            return Err(Error::InsufficientData(format!("no samples at n = {n}")));
        }
        let m = median(&vals);
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InsufficientData(format!("median error at n = {n} is not positive ({m})")));
        }
        xs.push(-(n as f64) * 3f64.ln());
        ys.push(m.ln());
        medians.push(m);
    }
    Ok((linear_fit(&xs, &ys)?.0, medians))
}

/// Slope of `log(median error)` against `log(3^{-n})` with a seed-level
/// bootstrap band.
pub fn fit_rate(samples: &[ScaleSample]) -> Result<RateFit> {
    let n_list: Vec<u32> = samples.iter().map(|s| s.n).collect::<BTreeSet<_>>().into_iter().collect();
    if n_list.len() < 3 {
        return Err(Error::InsufficientData(format!("rate fits need 3 distinct scales, got {}", n_list.len())));
    }
    for &n in &n_list {
        let c = samples.iter().filter(|s| s.n == n).count();
        if c < 8 {
            return Err(Error::InsufficientData(format!("rate fits need 8 samples per scale, n = {n} has {c}")));
        }
    }
    let (alpha, medians) = median_slope(samples, &n_list, None)?;
    let seeds: Vec<u64> = samples.iter().map(|s| s.seed).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut boots = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut weights = vec![0usize; samples.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut draws = vec![0usize; seeds.len()];
        for _ in 0..seeds.len() {
            draws[rng.gen_range(0..seeds.len())] += 1;
        }
        for (w, s) in weights.iter_mut().zip(samples) {
            *w = draws[seeds.binary_search(&s.seed).unwrap()];
        }
        if let Ok((a, _)) = median_slope(samples, &n_list, Some(&weights)) {
            boots.push(a);
        }
    }
    if boots.len() < BOOTSTRAP_RESAMPLES / 2 {
        return Err(Error::InsufficientData("too few valid bootstrap resamples".into()));
    }
    let ci_low = quantile(&boots, 0.025);
    let ci_high = quantile(&boots, 0.975);
    Ok(RateFit {
        alpha_hat: alpha,
        ci: 0.5 * (ci_high - ci_low),
        ci_low,
        ci_high,
        n_list,
        count: samples.len(),
        medians,
    })
}

// ---------------------------------------------------------------------------
// Ensembles

#[derive(Clone, Debug)]
pub struct EnsembleMember<T> {
    pub index: u64,
    pub seed: u64,
    pub value: T,
}

#[derive(Clone, Debug)]
pub struct EnsembleOutcome<T> {
    pub members: Vec<EnsembleMember<T>>,
    /// `(index, seed, message)` for every failed realization.
    pub failures: Vec<(u64, u64, String)>,
}

impl<T> EnsembleOutcome<T> {
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.members.iter().map(|m| &m.value)
    }
}

/// Runs `trial` on `count` derived seeds, in parallel, and returns the
/// results ordered by realization index. More than 10% failures is an
/// ensemble error.
pub fn run_ensemble<T, F>(master_seed: u64, count: usize, trial: F) -> Result<EnsembleOutcome<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    run_ensemble_indexed(master_seed, count, |_, seed| trial(seed))
}

pub fn run_ensemble_indexed<T, F>(master_seed: u64, count: usize, trial: F) -> Result<EnsembleOutcome<T>>
where
    T: Send,
    F: Fn(u64, u64) -> Result<T> + Sync,
{
    if count == 0 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    let results: Vec<(u64, u64, Result<T>)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derived_seed(master_seed, i);
            (i, seed, trial(i, seed))
        })
        .collect();
    let mut members = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (index, seed, r) in results {
        match r {
            Ok(value) => members.push(EnsembleMember { index, seed, value }),
            Err(e) => failures.push((index, seed, e.to_string())),
        }
    }
    if failures.len() as f64 > FAILURE_FRACTION * count as f64 {
        return Err(Error::Ensemble {
            failed: failures.len(),
            total: count,
            diagnostics: failures
                .iter()
                .take(8)
                .map(|(i, s, m)| format!("#{i} seed {s}: {m}"))
                .collect(),
        });
    }
    Ok(EnsembleOutcome { members, failures })
}

/// Runs `f` on a dedicated pool with the given number of threads
/// (`None` uses the global pool).
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

// ---------------------------------------------------------------------------
// Emitters

/// Rows of formatted values under a fixed header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip decimal form; `inf` for the +∞ sentinel.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

impl CsvTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Consistency(format!(
                "row has {} fields, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn to_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Parses a table written by [`CsvTable::write_to`].
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let body = text
            .strip_prefix(CSV_HEADER)
            .and_then(|s| s.strip_prefix('\n'))
            .ok_or_else(|| Error::Consistency(format!("{} lacks the '{CSV_HEADER}' header", path.display())))?;
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let columns = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column; `inf` parses as +∞.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::Consistency(format!("missing column '{name}'")))?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse::<f64>()
                    .map_err(|_| Error::Consistency(format!("non-numeric value '{}' in column '{name}'", r[c])))
            })
            .collect()
    }
}

/// Serde adapter for floats that may be infinite: finite values are
/// written as JSON numbers, infinities as the strings `"inf"`/`"-inf"`.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::fmt_f64(*x))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("invalid float '{t}'"))),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_samples_give_theta_over_ln2() {
        let fit = fit_osigma(&[3.0; 10], 1.0).unwrap();
        assert!((fit.theta_hat / (3.0 / 2f64.ln()) - 1.0).abs() < 1e-6);
        assert!(!fit.degenerate);
    }

    #[test]
    fn nonpositive_samples_are_degenerate() {
        let fit = fit_osigma(&[0.0, -1.0, -2.0, 0.0, -3.0, 0.0, -0.5, -1.5], 1.0).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.theta_hat, 0.0);
    }

    #[test]
    fn two_point_samples_give_theta_over_ln3() {
        let mut s = vec![0.0; 6];
        s.extend([2.0; 6]);
        let fit = fit_osigma(&s, 1.0).unwrap();
        assert!((fit.theta_hat / (2.0 / 3f64.ln()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tail_fit_needs_eight_samples() {
        assert!(matches!(fit_osigma(&[1.0; 7], 1.0), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn doubling_samples_doubles_theta(xs in prop::collection::vec(-1.0f64..10.0, 8..40), sigma in 0.3f64..3.0) {
            let a = fit_osigma(&xs, sigma).unwrap();
            let doubled: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
            let b = fit_osigma(&doubled, sigma).unwrap();
            prop_assert_eq!(b.theta_hat, 2.0 * a.theta_hat);
        }

        #[test]
        fn zero_samples_never_increase_theta(xs in prop::collection::vec(0.01f64..10.0, 8..30), k in 1usize..20) {
            let a = fit_osigma(&xs, 1.0).unwrap();
            let mut more = xs.clone();
            more.extend(std::iter::repeat(0.0).take(k));
            let b = fit_osigma(&more, 1.0).unwrap();
            prop_assert!(b.theta_hat <= a.theta_hat * (1.0 + 1e-9));
        }
    }

    fn synthetic(alpha: f64, noise: Option<(f64, u64)>) -> Vec<ScaleSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.map_or(0, |n| n.1));
        let normal = Normal::new(0.0, noise.map_or(0.0, |n| n.0)).unwrap();
        let mut out = Vec::new();
        for n in 1..=4u32 {
            for seed in 0..12u64 {
                let eps: f64 = if noise.is_some() { normal.sample(&mut rng) } else { 0.0 };
                out.push(ScaleSample {
                    n,
                    seed,
                    value: 2.0 * 3f64.powf(-(n as f64) * alpha) * eps.exp(),
                });
            }
        }
        out
    }

    #[test]
    fn exact_power_law_rate() {
        let fit = fit_rate(&synthetic(0.5, None)).unwrap();
        assert!((fit.alpha_hat - 0.5).abs() < 1e-12);
        assert!(fit.ci < 1e-12);
    }

    #[test]
    fn constant_errors_have_zero_rate() {
        let s: Vec<ScaleSample> = (1..=3)
            .flat_map(|n| (0..8).map(move |seed| ScaleSample { n, seed, value: 0.3 }))
            .collect();
        assert!(fit_rate(&s).unwrap().alpha_hat.abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law_is_covered_by_bootstrap_band() {
        let trials = 100;
        let hits = (0..trials)
            .filter(|&t| {
                let fit = fit_rate(&synthetic(0.5, Some((0.2, 1000 + t)))).unwrap();
                fit.ci_low <= 0.5 && 0.5 <= fit.ci_high
            })
            .count();
        assert!(hits as f64 >= 0.9 * trials as f64, "{hits}/{trials}");
    }

    #[test]
    fn rate_fit_rejects_thin_data() {
        let s: Vec<ScaleSample> = (1..=2)
            .flat_map(|n| (0..8).map(move |seed| ScaleSample { n, seed, value: 1.0 }))
            .collect();
        assert!(matches!(fit_rate(&s), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ensemble_is_ordered_and_worker_independent() {
        let f = |seed: u64| -> Result<f64> { Ok((seed % 1000) as f64 / 7.0) };
        let a = with_workers(Some(1), || run_ensemble(42, 50, f)).unwrap().unwrap();
        let b = with_workers(Some(4), || run_ensemble(42, 50, f)).unwrap().unwrap();
        let va: Vec<f64> = a.values().cloned().collect();
        let vb: Vec<f64> = b.values().cloned().collect();
        assert_eq!(va, vb);
        assert!(a.members.windows(2).all(|w| w[0].index < w[1].index));
        assert_eq!(a.members[0].seed, derived_seed(42, 0));
    }

    #[test]
    fn ensemble_tolerates_few_failures_only() {
        let few = run_ensemble_indexed(1, 20, |i, _| if i == 3 { Err(Error::Numerical("x".into())) } else { Ok(i) }).unwrap();
        assert_eq!(few.failures.len(), 1);
        assert_eq!(few.members.len(), 19);
        let many = run_ensemble_indexed(1, 20, |i, _| if i < 3 { Err(Error::Numerical("x".into())) } else { Ok(i) });
        assert!(matches!(many, Err(Error::Ensemble { failed: 3, total: 20, .. })));
    }

    #[test]
    fn csv_roundtrip_keeps_header_and_infinity() {
        let mut t = CsvTable::new(["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(f64::INFINITY)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("nlhomog-csv v1\na,b\n"));
        let back = CsvTable::read(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.numeric_column("b").unwrap(), vec![f64::INFINITY]);
    }

    #[test]
    fn quantiles_and_fits() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (s, c) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-15 && (c - 1.0).abs() < 1e-15);
    }
}
