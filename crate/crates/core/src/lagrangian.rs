//! Random uniformly convex Lagrangians `L(p, x)`.
//!
//! A realization assigns one random parameter `a_z` to every unit lattice
//! cell `z + [-1/2, 1/2)^d`. Cell values are a pure function of
//! `(seed, z)`, so the field restricted to any box does not depend on the
//! box that was sampled or on traversal order. The Lagrangian is either
//!
//! * `quadratic`:      `L(p, x) = a(x) |p|^2 / 2` with `a(x) in [1, Λ]`, or
//! * `perturbed_sqrt`: `L(p, x) = |p|^2 / 2 + a(x) sqrt(1 + |p|^2)` with
//!   `a(x) in [0, Λ - 1]`,
//!
//! and in both cases `Id <= D^2_p L <= Λ Id` holds exactly.

use serde::{Deserialize, Serialize};

use crate::bump;
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_DIM: usize = 3;

/// Value, gradient and Hessian of a function of `p` in at most three
/// dimensions. Only the leading `d` entries are meaningful.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointEval {
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: [[f64; MAX_DIM]; MAX_DIM],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    Quadratic,
    PerturbedSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKind,
    /// Ellipticity ceiling Λ.
    pub lambda_max: f64,
}

impl NonlinearitySpec {
    pub fn quadratic(lambda_max: f64) -> Self {
        Self {
            kind: NonlinearityKind::Quadratic,
            lambda_max,
        }
    }

    pub fn perturbed_sqrt(lambda_max: f64) -> Self {
        Self {
            kind: NonlinearityKind::PerturbedSqrt,
            lambda_max,
        }
    }

    /// Admissible range of the cell parameter `a`.
    pub fn coefficient_range(&self) -> (f64, f64) {
        match self.kind {
            NonlinearityKind::Quadratic => (1.0, self.lambda_max),
            NonlinearityKind::PerturbedSqrt => (0.0, self.lambda_max - 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max >= 1.0) || !self.lambda_max.is_finite() {
            return Err(Error::Config(format!(
                "lambda_max must be a finite number >= 1, got {}",
                self.lambda_max
            )));
        }
        Ok(())
    }

    /// Evaluates `L(p, ·)`, `D_p L` and `D_p^2 L` for cell parameter `a`.
    pub fn eval(&self, a: f64, p: &[f64], out: &mut PointEval) {
        let d = p.len();
        *out = PointEval::default();
        let p2: f64 = p.iter().map(|v| v * v).sum();
        match self.kind {
            NonlinearityKind::Quadratic => {
                out.value = 0.5 * a * p2;
                for i in 0..d {
                    out.grad[i] = a * p[i];
                    out.hess[i][i] = a;
                }
            }
            NonlinearityKind::PerturbedSqrt => {
                let s = (1.0 + p2).sqrt();
                let inv_s = 1.0 / s;
                let inv_s3 = inv_s * inv_s * inv_s;
                out.value = 0.5 * p2 + a * s;
                for i in 0..d {
                    out.grad[i] = p[i] + a * p[i] * inv_s;
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out.hess[i][j] = delta + a * (delta * inv_s - p[i] * p[j] * inv_s3);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    IidUniform,
    IidTwoPoint,
    /// Two-point iid cell field convolved with a tensor bump.
    MollifiedIid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientLaw {
    pub kind: LawKind,
    pub range_low: f64,
    pub range_high: f64,
    #[serde(default)]
    pub mollifier_width: Option<f64>,
    pub dimension: usize,
}

impl CoefficientLaw {
    pub fn iid_uniform(low: f64, high: f64, dimension: usize) -> Self {
        Self {
            kind: LawKind::IidUniform,
            range_low: low,
            range_high: high,
            mollifier_width: None,
            dimension,
        }
    }

    pub fn iid_two_point(low: f64, high: f64, dimension: usize) -> Self {
        Self {
            kind: LawKind::IidTwoPoint,
            range_low: low,
            range_high: high,
            mollifier_width: None,
            dimension,
        }
    }

    pub fn mollified(low: f64, high: f64, width: f64, dimension: usize) -> Self {
        Self {
            kind: LawKind::MollifiedIid,
            range_low: low,
            range_high: high,
            mollifier_width: Some(width),
            dimension,
        }
    }

    /// Deterministic constant field `a ≡ value`.
    pub fn constant(value: f64, dimension: usize) -> Self {
        Self::iid_uniform(value, value, dimension)
    }

    pub fn is_deterministic(&self) -> bool {
        self.range_low == self.range_high
    }

    /// Mean of the cell parameter.
    pub fn mean(&self) -> f64 {
        0.5 * (self.range_low + self.range_high)
    }

    /// Harmonic mean of the cell parameter, when the law has independent
    /// cells (the effective coefficient of one-dimensional quadratic
    /// problems).
    pub fn harmonic_mean(&self) -> Option<f64> {
        let (lo, hi) = (self.range_low, self.range_high);
        if !(lo > 0.0) {
            return None;
        }
        if self.is_deterministic() {
            return Some(lo);
        }
        match self.kind {
            LawKind::IidUniform => Some((hi - lo) / (hi / lo).ln()),
            LawKind::IidTwoPoint => Some(2.0 / (1.0 / lo + 1.0 / hi)),
            LawKind::MollifiedIid => None,
        }
    }

    pub fn validate(&self, nonlinearity: &NonlinearitySpec) -> Result<()> {
        nonlinearity.validate()?;
        if !(1..=MAX_DIM).contains(&self.dimension) {
            return Err(Error::Config(format!(
                "dimension must be 1, 2 or 3, got {}",
                self.dimension
            )));
        }
        if !(self.range_low <= self.range_high) {
            return Err(Error::Config(format!(
                "range_low {} exceeds range_high {}",
                self.range_low, self.range_high
            )));
        }
        let (lo, hi) = nonlinearity.coefficient_range();
        if self.range_low < lo || self.range_high > hi {
            return Err(Error::Config(format!(
                "coefficient range [{}, {}] is not inside [{lo}, {hi}] required by {:?} with lambda_max = {}",
                self.range_low, self.range_high, nonlinearity.kind, nonlinearity.lambda_max
            )));
        }
        match (self.kind, self.mollifier_width) {
            (LawKind::MollifiedIid, Some(w)) if w > 0.0 && w <= 0.5 => Ok(()),
            (LawKind::MollifiedIid, w) => Err(Error::Config(format!(
                "mollified_iid requires mollifier_width in (0, 1/2], got {w:?}"
            ))),
            (_, Some(_)) => Err(Error::Config(
                "mollifier_width is only meaningful for mollified_iid".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// Parameter of lattice cell `z`, a pure function of `(seed, z)`.
    pub fn cell_value(&self, seed: u64, cell: &[i64]) -> f64 {
        if self.is_deterministic() {
            return self.range_low;
        }
        let u = rng::cell_uniform(seed, cell);
        match self.kind {
            LawKind::IidUniform => self.range_low + (self.range_high - self.range_low) * u,
            LawKind::IidTwoPoint | LawKind::MollifiedIid => {
                if u < 0.5 {
                    self.range_low
                } else {
                    self.range_high
                }
            }
        }
    }
}

/// Axis-aligned block of lattice cells `origin_i <= z_i < origin_i + extents_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellBox {
    pub origin: Vec<i64>,
    pub extents: Vec<usize>,
}

impl CellBox {
    /// Cells covering the cube `(-3^n/2, 3^n/2)^d`.
    pub fn cube(n: u32, dimension: usize) -> Self {
        let side = 3usize.pow(n);
        Self::centered(&vec![side; dimension])
    }

    /// Box with the given extents whose cells are centered around the
    /// origin (for odd extents the box is symmetric).
    pub fn centered(extents: &[usize]) -> Self {
        Self {
            origin: extents.iter().map(|&e| -((e as i64 - 1) / 2) - ((e as i64 + 1) % 2)).collect(),
            extents: extents.to_vec(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.extents.len()
    }

    pub fn cell_count(&self) -> usize {
        self.extents.iter().product()
    }

    /// Physical bounds `[lo, hi]` per axis.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.origin.iter().map(|&o| o as f64 - 0.5).collect();
        let hi = self
            .origin
            .iter()
            .zip(&self.extents)
            .map(|(&o, &e)| o as f64 + e as f64 - 0.5)
            .collect();
        (lo, hi)
    }

    pub fn contains_cell(&self, cell: &[i64]) -> bool {
        cell.iter()
            .zip(&self.origin)
            .zip(&self.extents)
            .all(|((&z, &o), &e)| z >= o && z < o + e as i64)
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        let (lo, hi) = self.bounds();
        x.iter()
            .enumerate()
            .all(|(i, &xi)| xi >= lo[i] - 1e-12 && xi <= hi[i] + 1e-12)
    }

    fn linear_index(&self, cell: &[i64]) -> usize {
        let mut idx = 0usize;
        for i in (0..cell.len()).rev() {
            idx = idx * self.extents[i] + (cell[i] - self.origin[i]) as usize;
        }
        idx
    }

    fn cell_of_linear(&self, mut idx: usize) -> Vec<i64> {
        let mut cell = vec![0i64; self.extents.len()];
        for i in 0..self.extents.len() {
            cell[i] = self.origin[i] + (idx % self.extents[i]) as i64;
            idx /= self.extents[i];
        }
        cell
    }
}

/// Lattice cell containing `x` (cells are `z + [-1/2, 1/2)^d`).
pub fn cell_of_point(x: &[f64]) -> Vec<i64> {
    x.iter().map(|&v| (v + 0.5).floor() as i64).collect()
}

/// One sample of the random Lagrangian restricted to a box of cells.
#[derive(Clone, Debug)]
pub struct LagrangianRealization {
    pub law: CoefficientLaw,
    pub nonlinearity: NonlinearitySpec,
    pub cell_box: CellBox,
    pub seed: u64,
    cell_values: Vec<f64>,
}

/// JSON form of a realization; cell values are regenerated from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationSpec {
    pub law: CoefficientLaw,
    pub nonlinearity: NonlinearitySpec,
    #[serde(rename = "box")]
    pub cell_box: CellBox,
    pub seed: u64,
}

pub fn sample_realization(
    law: CoefficientLaw,
    nonlinearity: NonlinearitySpec,
    cell_box: CellBox,
    seed: u64,
) -> Result<LagrangianRealization> {
    law.validate(&nonlinearity)?;
    if cell_box.dimension() != law.dimension || cell_box.origin.len() != law.dimension {
        return Err(Error::Config(format!(
            "box dimension {} does not match law dimension {}",
            cell_box.dimension(),
            law.dimension
        )));
    }
    if cell_box.extents.iter().any(|&e| e == 0) {
        return Err(Error::Config("box extents must be >= 1 per axis".into()));
    }
    let cell_values = (0..cell_box.cell_count())
        .map(|i| law.cell_value(seed, &cell_box.cell_of_linear(i)))
        .collect();
    Ok(LagrangianRealization {
        law,
        nonlinearity,
        cell_box,
        seed,
        cell_values,
    })
}

impl LagrangianRealization {
    pub fn from_spec(spec: &RealizationSpec) -> Result<Self> {
        sample_realization(spec.law, spec.nonlinearity, spec.cell_box.clone(), spec.seed)
    }

    pub fn spec(&self) -> RealizationSpec {
        RealizationSpec {
            law: self.law,
            nonlinearity: self.nonlinearity,
            cell_box: self.cell_box.clone(),
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.spec())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_spec(&serde_json::from_str(text)?)
    }

    pub fn dimension(&self) -> usize {
        self.law.dimension
    }

    pub fn cell_values(&self) -> &[f64] {
        &self.cell_values
    }

    /// Parameter of cell `z`; cells outside the box are generated from the
    /// same counter-based stream.
    pub fn cell_value(&self, cell: &[i64]) -> f64 {
        if self.cell_box.contains_cell(cell) {
            self.cell_values[self.cell_box.linear_index(cell)]
        } else {
            self.law.cell_value(self.seed, cell)
        }
    }

    /// Coefficient `a(x)`.
    pub fn coefficient(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension() {
            return Err(Error::Domain(format!(
                "point of dimension {} for a {}-dimensional realization",
                x.len(),
                self.dimension()
            )));
        }
        if !self.cell_box.contains_point(x) {
            return Err(Error::Domain(format!("point {x:?} lies outside the realization box")));
        }
        Ok(self.coefficient_unchecked(x))
    }

    pub(crate) fn coefficient_unchecked(&self, x: &[f64]) -> f64 {
        match (self.law.kind, self.law.mollifier_width) {
            (LawKind::MollifiedIid, Some(w)) => self.mollified_coefficient(x, w),
            _ => self.cell_value(&cell_of_point(x)),
        }
    }

    fn mollified_coefficient(&self, x: &[f64], width: f64) -> f64 {
        let d = x.len();
        let center = cell_of_point(x);
        // Per-axis weights of the cells z-1, z, z+1.
        let mut weights = [[0.0; 3]; MAX_DIM];
        for i in 0..d {
            for (k, off) in (-1i64..=1).enumerate() {
                let z = (center[i] + off) as f64;
                weights[i][k] = bump::smooth_indicator(x[i], z - 0.5, z + 0.5, width);
            }
        }
        let mut total = 0.0;
        let mut cell = vec![0i64; d];
        for flat in 0..3usize.pow(d as u32) {
            let mut rem = flat;
            let mut w = 1.0;
            for i in 0..d {
                let k = rem % 3;
                rem /= 3;
                w *= weights[i][k];
                cell[i] = center[i] + k as i64 - 1;
            }
            if w != 0.0 {
                total += w * self.cell_value(&cell);
            }
        }
        total
    }

    /// `(L, D_p L, D_p^2 L)` at gradient `p` and point `x`.
    pub fn eval(&self, p: &[f64], x: &[f64]) -> Result<PointEval> {
        if p.len() != self.dimension() {
            return Err(Error::Domain(format!(
                "gradient of dimension {} for a {}-dimensional realization",
                p.len(),
                self.dimension()
            )));
        }
        let a = self.coefficient(x)?;
        let mut out = PointEval::default();
        self.nonlinearity.eval(a, p, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use proptest::prelude::*;

    #[test]
    fn two_point_sampling_is_reproducible() {
        let law = CoefficientLaw::iid_two_point(0.0, 1.0, 2);
        let nl = NonlinearitySpec::perturbed_sqrt(2.0);
        let a = sample_realization(law, nl, CellBox::centered(&[2, 2]), 7).unwrap();
        let b = sample_realization(law, nl, CellBox::centered(&[2, 2]), 7).unwrap();
        assert_eq!(a.cell_values().len(), 4);
        assert!(a.cell_values().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(
            a.cell_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.cell_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn degenerate_uniform_law_is_constant() {
        let law = CoefficientLaw::iid_uniform(0.5, 0.5, 2);
        let r = sample_realization(law, NonlinearitySpec::perturbed_sqrt(3.0), CellBox::centered(&[5, 3]), 99)
            .unwrap();
        assert!(r.cell_values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn inconsistent_range_is_rejected() {
        let law = CoefficientLaw::iid_uniform(0.0, 1.5, 2);
        let err = sample_realization(law, NonlinearitySpec::perturbed_sqrt(2.0), CellBox::centered(&[2, 2]), 1)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let law = CoefficientLaw::iid_uniform(0.5, 2.0, 2);
        assert!(law.validate(&NonlinearitySpec::quadratic(2.0)).is_err());
        let law = CoefficientLaw::mollified(0.0, 1.0, 0.75, 2);
        assert!(law.validate(&NonlinearitySpec::perturbed_sqrt(2.0)).is_err());
    }

    #[test]
    fn point_outside_box_is_a_domain_error() {
        let r = sample_realization(
            CoefficientLaw::constant(1.0, 2),
            NonlinearitySpec::perturbed_sqrt(2.0),
            CellBox::cube(0, 2),
            0,
        )
        .unwrap();
        assert!(matches!(r.eval(&[0.0, 0.0], &[0.7, 0.0]), Err(Error::Domain(_))));
        assert!(r.eval(&[0.0, 0.0], &[0.5, -0.5]).is_ok());
    }

    #[test]
    fn perturbed_sqrt_at_zero_slope() {
        let r = sample_realization(
            CoefficientLaw::constant(1.0, 2),
            NonlinearitySpec::perturbed_sqrt(2.0),
            CellBox::cube(0, 2),
            0,
        )
        .unwrap();
        let e = r.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(&e.grad[..2], &[0.0, 0.0]);
        assert_eq!(e.hess[0][0], 2.0);
        assert_eq!(e.hess[1][1], 2.0);
        assert_eq!(e.hess[0][1], 0.0);
    }

    #[test]
    fn quadratic_hessian_is_scalar() {
        let nl = NonlinearitySpec::quadratic(4.0);
        let mut out = PointEval::default();
        nl.eval(3.0, &[1.3, -2.0, 0.4], &mut out);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(out.hess[i][j], if i == j { 3.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn perturbed_sqrt_hessian_eigenvalues_at_unit_slope() {
        // D^2 sqrt(1+|p|^2) = I/s - p p^T / s^3 with s = sqrt(2): eigenvalues
        // 1/s (perpendicular) and 1/s^3 (parallel).
        let nl = NonlinearitySpec::perturbed_sqrt(2.0);
        let mut out = PointEval::default();
        nl.eval(1.0, &[1.0, 0.0], &mut out);
        let mut ev = symmetric_eigenvalues(&out.hess, 2);
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - (1.0 + 2f64.powf(-1.5))).abs() < 1e-14);
        assert!((ev[1] - (1.0 + 2f64.powf(-0.5))).abs() < 1e-14);
    }

    #[test]
    fn mollified_field_matches_quadrature() {
        let w = 0.25;
        let law = CoefficientLaw::mollified(0.0, 1.0, w, 2);
        let r = sample_realization(law, NonlinearitySpec::perturbed_sqrt(2.0), CellBox::centered(&[8, 8]), 1)
            .unwrap();
        let base = CoefficientLaw::iid_two_point(0.0, 1.0, 2);
        // Midpoint quadrature of the convolution on a fine sub-grid.
        let m = 400;
        let dy = 2.0 * w / m as f64;
        for &x in &[[0.1, 0.2], [0.45, -0.38], [-1.52, 2.49], [0.0, 0.0], [3.3, -3.1]] {
            let mut q = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let y0 = x[0] - w + (i as f64 + 0.5) * dy;
                    let y1 = x[1] - w + (j as f64 + 0.5) * dy;
                    let k = bump::density(x[0] - y0, w) * bump::density(x[1] - y1, w);
                    q += k * base.cell_value(1, &cell_of_point(&[y0, y1])) * dy * dy;
                }
            }
            let exact = r.coefficient(&x).unwrap();
            assert!((exact - q).abs() < 2e-4, "{x:?}: {exact} vs {q}");
            assert!((0.0..=1.0).contains(&exact));
        }
    }

    #[test]
    fn json_roundtrip_regenerates_values() {
        let law = CoefficientLaw::iid_uniform(0.1, 0.9, 3);
        let r = sample_realization(law, NonlinearitySpec::perturbed_sqrt(2.0), CellBox::centered(&[3, 2, 4]), 42)
            .unwrap();
        let text = r.to_json().unwrap();
        assert!(!text.contains("cell_values"));
        let back = LagrangianRealization::from_json(&text).unwrap();
        assert_eq!(back.cell_values(), r.cell_values());
    }

    proptest! {
        #[test]
        fn hessian_bounds_hold(
            p in proptest::collection::vec(-10.0f64..10.0, 3),
            a in 0.0f64..2.0,
        ) {
            let nl = NonlinearitySpec::perturbed_sqrt(3.0);
            let mut out = PointEval::default();
            nl.eval(a, &p, &mut out);
            let ev = symmetric_eigenvalues(&out.hess, 3);
            for e in ev {
                prop_assert!(e >= 1.0 - 1e-12 && e <= 3.0 + 1e-12);
            }
        }

        #[test]
        fn derivatives_match_finite_differences(
            p in proptest::collection::vec(-3.0f64..3.0, 2),
            a in 0.0f64..1.0,
        ) {
            let nl = NonlinearitySpec::perturbed_sqrt(2.0);
            let step = 1e-4;
            let mut base = PointEval::default();
            nl.eval(a, &p, &mut base);
            for i in 0..2 {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[i] += step;
                minus[i] -= step;
                let (mut ep, mut em) = (PointEval::default(), PointEval::default());
                nl.eval(a, &plus, &mut ep);
                nl.eval(a, &minus, &mut em);
                let fd = (ep.value - em.value) / (2.0 * step);
                prop_assert!((fd - base.grad[i]).abs() <= 1e-6 * base.grad[i].abs().max(1.0));
                for j in 0..2 {
                    let fd2 = (ep.grad[j] - em.grad[j]) / (2.0 * step);
                    prop_assert!((fd2 - base.hess[j][i]).abs() <= 1e-6 * base.hess[j][i].abs().max(1.0));
                }
            }
        }

        #[test]
        fn lattice_shift_is_stationary(
            seed in any::<u64>(),
            shift in proptest::collection::vec(-50i64..50, 2),
        ) {
            let law = CoefficientLaw::iid_uniform(0.0, 1.0, 2);
            let nl = NonlinearitySpec::perturbed_sqrt(2.0);
            let a = sample_realization(law, nl, CellBox::centered(&[4, 4]), seed).unwrap();
            let shifted_box = CellBox {
                origin: a.cell_box.origin.iter().zip(&shift).map(|(o, s)| o + s).collect(),
                extents: vec![4, 4],
            };
            let b = sample_realization(law, nl, shifted_box, seed).unwrap();
            for i in 0..4i64 {
                for j in 0..4i64 {
                    let z = [a.cell_box.origin[0] + i, a.cell_box.origin[1] + j];
                    let zs = [z[0] + shift[0], z[1] + shift[1]];
                    prop_assert_eq!(b.cell_value(&zs).to_bits(), law.cell_value(seed, &zs).to_bits());
                    prop_assert_eq!(a.cell_value(&z).to_bits(), law.cell_value(seed, &z).to_bits());
                }
            }
        }
    }
}
