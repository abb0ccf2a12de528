//! Functional data as basis coefficients.
//!
//! A curve `x(t) = sum_h b_h B_h(t)` is stored as its coefficient vector `b`.
//! The integrated squared norm is `b' W b` with `W` the Gram matrix of the
//! basis. Fitting pre-multiplies every coefficient block by the Cholesky
//! factor of `W` (with `W = L L'`, the row `b L` has Euclidean norm equal to
//! the `W`-norm of `b`), so the plain Euclidean fitters apply unchanged.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archetypes::{self, ArchetypalModel, FitOptions};
use crate::archetypoids;
use crate::data::{self, DataMatrix};
use crate::error::{Error, Result};
use crate::robust::{self, LossSpec};

/// Nodes used for composite Simpson integration of B-spline products.
pub const SIMPSON_NODES: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    /// Orthonormal `1, sin, cos, sin, cos, ...` on the domain.
    Fourier,
    /// Clamped cubic B-splines with equally spaced interior knots.
    CubicBspline,
}

impl BasisFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(BasisFamily::Fourier),
            "bspline" | "cubic_bspline" => Ok(BasisFamily::CubicBspline),
            other => Err(Error::input(format!("unknown basis family '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BasisFamily::Fourier => "fourier",
            BasisFamily::CubicBspline => "cubic_bspline",
        }
    }

    fn min_size(&self) -> usize {
        match self {
            BasisFamily::Fourier => 1,
            BasisFamily::CubicBspline => 4,
        }
    }
}

/// Serializable description of a basis; the Gram matrix is recomputed on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub m: usize,
    pub domain: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct BasisSystem {
    family: BasisFamily,
    m: usize,
    domain: (f64, f64),
    knots: Vec<f64>,
    gram: DMatrix<f64>,
}

impl BasisSystem {
    pub fn new(family: BasisFamily, m: usize, domain: (f64, f64)) -> Result<Self> {
        check_basis_args(family, m, domain)?;
        let knots = match family {
            BasisFamily::Fourier => Vec::new(),
            BasisFamily::CubicBspline => clamped_knots(m, domain),
        };
        let mut basis = BasisSystem { family, m, domain, knots, gram: DMatrix::zeros(0, 0) };
        basis.gram = match family {
            BasisFamily::Fourier => DMatrix::identity(m, m),
            BasisFamily::CubicBspline => simpson_gram(&basis, SIMPSON_NODES),
        };
        Ok(basis)
    }

    pub fn fourier(m: usize, domain: (f64, f64)) -> Result<Self> {
        Self::new(BasisFamily::Fourier, m, domain)
    }

    pub fn cubic_bspline(m: usize, domain: (f64, f64)) -> Result<Self> {
        Self::new(BasisFamily::CubicBspline, m, domain)
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        Self::new(spec.family, spec.m, (spec.domain[0], spec.domain[1]))
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec { family: self.family, m: self.m, domain: [self.domain.0, self.domain.1] }
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Lower Cholesky factor `L` of the Gram matrix.
    pub fn gram_factor(&self) -> Result<DMatrix<f64>> {
        self.gram
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Numeric("basis Gram matrix is not positive definite".into()))
    }

    /// Values of all `m` basis functions at `t` (clamped into the domain).
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let (a, b) = self.domain;
        let t = t.clamp(a, b);
        let mut out = DVector::zeros(self.m);
        match self.family {
            BasisFamily::Fourier => {
                let len = b - a;
                out[0] = 1.0 / len.sqrt();
                let amp = (2.0 / len).sqrt();
                for h in 1..self.m {
                    let r = h.div_ceil(2) as f64;
                    let arg = 2.0 * std::f64::consts::PI * r * (t - a) / len;
                    out[h] = amp * if h % 2 == 1 { arg.sin() } else { arg.cos() };
                }
            }
            BasisFamily::CubicBspline => {
                let (span, vals) = bspline_nonzero(&self.knots, self.m, t);
                for (r, v) in vals.iter().enumerate() {
                    out[span - 3 + r] = *v;
                }
            }
        }
        out
    }

    /// `len(ts) x m` matrix of basis values.
    pub fn eval_matrix(&self, ts: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(ts.len(), self.m);
        for (i, &t) in ts.iter().enumerate() {
            out.row_mut(i).copy_from(&self.eval(t).transpose());
        }
        out
    }

    /// Value at `t` of the curve with coefficients `coef`.
    pub fn curve_at(&self, coef: &[f64], t: f64) -> f64 {
        self.eval(t).iter().zip(coef).map(|(b, c)| b * c).sum()
    }
}

impl PartialEq for BasisSystem {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.m == other.m && self.domain == other.domain
    }
}

fn check_basis_args(family: BasisFamily, m: usize, domain: (f64, f64)) -> Result<()> {
    let (a, b) = domain;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::input(format!("invalid domain [{a}, {b}]")));
    }
    if m < family.min_size() {
        return Err(Error::input(format!("{} basis needs m >= {}, got {m}", family.name(), family.min_size())));
    }
    Ok(())
}

/// Gram matrix `W[p][q] = integral of B_p B_q` over the domain.
pub fn gram_matrix(family: BasisFamily, m: usize, domain: (f64, f64)) -> Result<DMatrix<f64>> {
    Ok(BasisSystem::new(family, m, domain)?.gram)
}

fn clamped_knots(m: usize, (a, b): (f64, f64)) -> Vec<f64> {
    let interior = m - 4;
    let mut knots = vec![a; 4];
    for i in 1..=interior {
        knots.push(a + (b - a) * i as f64 / (interior + 1) as f64);
    }
    knots.extend([b; 4]);
    knots
}

/// Span index and the four cubic B-spline values that may be nonzero at `t`.
fn bspline_nonzero(knots: &[f64], m: usize, t: f64) -> (usize, [f64; 4]) {
    let span = if t >= knots[m] {
        m - 1
    } else {
        // Largest s in [3, m-1] with knots[s] <= t.
        let mut s = 3;
        while s + 1 < m && knots[s + 1] <= t {
            s += 1;
        }
        s
    };
    let mut n = [0.0; 4];
    let mut left = [0.0; 4];
    let mut right = [0.0; 4];
    n[0] = 1.0;
    for j in 1..=3 {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    (span, n)
}

fn simpson_gram(basis: &BasisSystem, nodes: usize) -> DMatrix<f64> {
    let nodes = if nodes.is_multiple_of(2) { nodes + 1 } else { nodes };
    let (a, b) = basis.domain;
    let h = (b - a) / (nodes - 1) as f64;
    let m = basis.m;
    let mut g = DMatrix::zeros(m, m);
    for q in 0..nodes {
        let w = if q == 0 || q == nodes - 1 {
            1.0
        } else if q % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        let t = if q == nodes - 1 { b } else { a + q as f64 * h };
        let v = basis.eval(t);
        g.ger(w, &v, &v, 1.0);
    }
    (&g + g.transpose()) * 0.5
}

/// A discretized curve: observation times and values.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    pub label: String,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl SampledCurve {
    pub fn new(label: impl Into<String>, t: Vec<f64>, y: Vec<f64>) -> Self {
        SampledCurve { label: label.into(), t, y }
    }

    /// Curves sharing one time grid, one per row of `values`.
    pub fn from_grid(grid: &[f64], values: &DMatrix<f64>, labels: &[String]) -> Result<Vec<SampledCurve>> {
        if values.ncols() != grid.len() || labels.len() != values.nrows() {
            return Err(Error::input("grid, values and labels disagree in size"));
        }
        Ok((0..values.nrows())
            .map(|i| SampledCurve::new(labels[i].clone(), grid.to_vec(), values.row(i).iter().copied().collect()))
            .collect())
    }
}

/// Per-record least-squares coefficients, `n x m`.
pub fn smooth(records: &[SampledCurve], basis: &BasisSystem) -> Result<DMatrix<f64>> {
    let fits: Vec<(DVector<f64>, f64, usize)> =
        records.par_iter().map(|r| smooth_one(r, basis)).collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(records.len(), basis.m);
    for (i, (c, _, _)) in fits.iter().enumerate() {
        out.row_mut(i).copy_from(&c.transpose());
    }
    Ok(out)
}

/// Coefficients, residual sum of squares and point count of one record.
fn smooth_one(record: &SampledCurve, basis: &BasisSystem) -> Result<(DVector<f64>, f64, usize)> {
    let m = basis.m;
    let (a, b) = basis.domain;
    if record.t.len() != record.y.len() {
        return Err(Error::input(format!("record '{}': times and values differ in length", record.label)));
    }
    if record.t.len() < m {
        return Err(Error::input(format!(
            "record '{}' has {} points, fewer than the {m} basis functions",
            record.label,
            record.t.len()
        )));
    }
    let span = b - a;
    for (&t, &y) in record.t.iter().zip(&record.y) {
        if !y.is_finite() || !t.is_finite() || t < a - 1e-12 * span || t > b + 1e-12 * span {
            return Err(Error::input(format!(
                "record '{}': point ({t}, {y}) is outside the domain or not finite",
                record.label
            )));
        }
    }
    let phi = basis.eval_matrix(&record.t);
    let y = DVector::from_column_slice(&record.y);
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let coef = svd.solve(&y, smax * 1e-12).map_err(|e| Error::Numeric(format!("record '{}': {e}", record.label)))?;
    let rss = (&y - &phi * &coef).norm_squared();
    Ok((coef, rss, record.t.len()))
}

/// Residual variance curve over candidate basis sizes and the chosen size.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSelection {
    pub m: usize,
    /// `(m, pooled unbiased residual variance)` for every feasible size.
    pub curve: Vec<(usize, f64)>,
}

/// Relative decrease below which adding a basis function is not worth it.
pub const SELECTION_THRESHOLD: f64 = 0.05;

/// Chooses the number of basis functions from the pooled unbiased residual
/// variance `sum rss / sum (points - m)`: the smallest `m` after which one
/// more function lowers the variance by less than 5%.
pub fn select_basis_count(
    records: &[SampledCurve],
    family: BasisFamily,
    domain: (f64, f64),
    m_range: std::ops::RangeInclusive<usize>,
) -> Result<BasisSelection> {
    if records.is_empty() {
        return Err(Error::input("no records to smooth"));
    }
    let min_points = records.iter().map(|r| r.t.len()).min().unwrap_or(0);
    let lo = (*m_range.start()).max(family.min_size());
    let hi = (*m_range.end()).min(min_points.saturating_sub(1));
    if lo > hi {
        return Err(Error::input(format!(
            "no feasible basis size in {m_range:?} for records with {min_points} points"
        )));
    }
    let scale = records.iter().flat_map(|r| r.y.iter()).map(|y| y * y).sum::<f64>()
        / records.iter().map(|r| r.y.len()).sum::<usize>() as f64;
    let mut curve = Vec::with_capacity(hi - lo + 1);
    for m in lo..=hi {
        let basis = BasisSystem::new(family, m, domain)?;
        let fits: Vec<(DVector<f64>, f64, usize)> =
            records.par_iter().map(|r| smooth_one(r, &basis)).collect::<Result<_>>()?;
        let rss: f64 = fits.iter().map(|f| f.1).sum();
        let dof: usize = fits.iter().map(|f| f.2 - m).sum();
        curve.push((m, rss / dof as f64));
    }
    let floor = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let mut chosen = curve.last().expect("non-empty range").0;
    for w in curve.windows(2) {
        let (m, v) = w[0];
        let next = w[1].1;
        let rel = if v <= floor { 0.0 } else { (v - next) / v };
        if rel < SELECTION_THRESHOLD {
            chosen = m;
            break;
        }
    }
    Ok(BasisSelection { m: chosen, curve })
}

/// Centering and scaling applied to one variable block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableScale {
    pub variable: String,
    pub mean: Vec<f64>,
    pub scale: f64,
}

/// `n` records of `P` functional variables sharing one basis; each row holds
/// `P` contiguous blocks of `m` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    coefficients: DMatrix<f64>,
    basis: BasisSystem,
    variable_labels: Vec<String>,
    record_labels: Vec<String>,
    scales: Option<Vec<VariableScale>>,
}

impl FunctionalDataset {
    pub fn new(
        coefficients: DMatrix<f64>,
        basis: BasisSystem,
        variable_labels: Vec<String>,
        record_labels: Vec<String>,
    ) -> Result<Self> {
        let p = variable_labels.len();
        if p == 0 {
            return Err(Error::input("at least one functional variable is required"));
        }
        if coefficients.ncols() != p * basis.m {
            return Err(Error::input(format!(
                "{} coefficient columns, expected {p} variables x {} basis functions",
                coefficients.ncols(),
                basis.m
            )));
        }
        if coefficients.nrows() == 0 || record_labels.len() != coefficients.nrows() {
            return Err(Error::input("record labels must match a non-empty coefficient matrix"));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("coefficients must be finite"));
        }
        // Reuse the DataMatrix label checks.
        DataMatrix::new(DMatrix::zeros(record_labels.len(), 1), record_labels.clone(), vec!["_".into()])?;
        Ok(FunctionalDataset { coefficients, basis, variable_labels, record_labels, scales: None })
    }

    /// Smooths each variable's curves with `basis` and joins the blocks.
    /// `variables[v][i]` is record `i` of variable `v`.
    pub fn from_samples(
        variables: &[(String, Vec<SampledCurve>)],
        basis: BasisSystem,
        record_labels: Vec<String>,
    ) -> Result<Self> {
        let m = basis.m;
        let n = record_labels.len();
        let mut coef = DMatrix::zeros(n, variables.len() * m);
        for (v, (name, curves)) in variables.iter().enumerate() {
            if curves.len() != n {
                return Err(Error::input(format!("variable '{name}' has {} records, expected {n}", curves.len())));
            }
            let block = smooth(curves, &basis)?;
            coef.view_mut((0, v * m), (n, m)).copy_from(&block);
        }
        let labels = variables.iter().map(|(name, _)| name.clone()).collect();
        Self::new(coef, basis, labels, record_labels)
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn variable_labels(&self) -> &[String] {
        &self.variable_labels
    }

    pub fn record_labels(&self) -> &[String] {
        &self.record_labels
    }

    pub fn scales(&self) -> Option<&[VariableScale]> {
        self.scales.as_deref()
    }

    pub fn n(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn p(&self) -> usize {
        self.variable_labels.len()
    }

    pub fn m(&self) -> usize {
        self.basis.m
    }

    /// Coefficients of record `i`, variable `v`.
    pub fn block(&self, i: usize, v: usize) -> Vec<f64> {
        let m = self.m();
        self.coefficients.row(i).columns(v * m, m).iter().copied().collect()
    }

    /// `sum over blocks of v' W v` for a row of length `P m`.
    pub fn w_norm_sq(&self, v: &[f64]) -> f64 {
        let m = self.m();
        v.chunks(m)
            .map(|blk| {
                let b = DVector::from_column_slice(blk);
                (self.basis.gram() * &b).dot(&b)
            })
            .sum()
    }

    /// Coefficients with each block multiplied on the right by `L`.
    pub fn rotated(&self) -> Result<DMatrix<f64>> {
        let l = self.basis.gram_factor()?;
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n, self.p() * m);
        for v in 0..self.p() {
            let blk = self.coefficients.columns(v * m, m) * &l;
            out.columns_mut(v * m, m).copy_from(&blk);
        }
        Ok(out)
    }

    /// `W`-norm residual of each record against a model fitted on this dataset.
    pub fn residual_norms(&self, model: &ArchetypalModel) -> Result<Vec<f64>> {
        if model.archetypes.ncols() != self.coefficients.ncols() || model.alpha.nrows() != self.n() {
            return Err(Error::input("model does not match the functional dataset"));
        }
        let r = &self.coefficients - model.reconstruction();
        Ok((0..self.n())
            .map(|i| {
                let row: Vec<f64> = r.row(i).iter().copied().collect();
                self.w_norm_sq(&row).max(0.0).sqrt()
            })
            .collect())
    }

    /// Centers each variable block and scales it to unit mean integrated
    /// squared deviation.
    pub fn standardize(&self) -> Result<(FunctionalDataset, Vec<VariableScale>)> {
        let (n, m) = (self.n(), self.m());
        let mut out = self.coefficients.clone();
        let mut scales = Vec::with_capacity(self.p());
        for (v, name) in self.variable_labels.iter().enumerate() {
            let mut blk = out.columns_mut(v * m, m);
            let mean: Vec<f64> = (0..m).map(|h| blk.column(h).sum() / n as f64).collect();
            for (h, mu) in mean.iter().enumerate() {
                blk.column_mut(h).add_scalar_mut(-mu);
            }
            let ms = (0..n)
                .map(|i| {
                    let a = blk.row(i).transpose();
                    (self.basis.gram() * &a).dot(&a)
                })
                .sum::<f64>()
                / n as f64;
            let mean_sq: f64 = mean.iter().map(|x| x * x).sum::<f64>() + 1.0;
            if !(ms > 1e-24 * mean_sq) {
                return Err(Error::input(format!("variable '{name}' has zero variance")));
            }
            let scale = ms.sqrt();
            blk /= scale;
            scales.push(VariableScale { variable: name.clone(), mean, scale });
        }
        let mut ds = self.clone();
        ds.coefficients = out;
        ds.scales = Some(scales.clone());
        Ok((ds, scales))
    }

    /// Undoes [`standardize`](Self::standardize) given its scale record.
    pub fn unstandardize(&self, scales: &[VariableScale]) -> Result<FunctionalDataset> {
        if scales.len() != self.p() {
            return Err(Error::input("scale record does not match the variable count"));
        }
        let m = self.m();
        let mut out = self.coefficients.clone();
        for (v, s) in scales.iter().enumerate() {
            if s.mean.len() != m {
                return Err(Error::input(format!("scale record for '{}' has the wrong length", s.variable)));
            }
            let mut blk = out.columns_mut(v * m, m);
            blk *= s.scale;
            for h in 0..m {
                blk.column_mut(h).add_scalar_mut(s.mean[h]);
            }
        }
        let mut ds = self.clone();
        ds.coefficients = out;
        ds.scales = None;
        Ok(ds)
    }

    /// `{variable}_b{h}` for each variable and 1-based basis index.
    pub fn column_labels(&self) -> Vec<String> {
        self.variable_labels.iter().flat_map(|v| (1..=self.m()).map(move |h| format!("{v}_b{h}"))).collect()
    }

    /// Writes `path` (record label plus `P m` coefficient columns) and the
    /// basis sidecar `<stem>.basis.json` next to it.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        data::write_labelled_matrix(file, "label", &self.column_labels(), &self.record_labels, &self.coefficients)?;
        let sidecar =
            Sidecar { basis: self.basis.spec(), variables: self.variable_labels.clone(), scales: self.scales.clone() };
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let basis = BasisSystem::from_spec(&sidecar.basis)?;
        let table = DataMatrix::read_csv(path)?;
        let mut ds = Self::new(table.values().clone(), basis, sidecar.variables, table.row_labels().to_vec())?;
        ds.scales = sidecar.scales;
        Ok(ds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    basis: BasisSpec,
    variables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scales: Option<Vec<VariableScale>>,
}

/// `<dir>/<stem>.basis.json` for a coefficient CSV at `<dir>/<stem>.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.basis.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Aa,
    Ada,
}

impl FitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aa" => Ok(FitMode::Aa),
            "ada" => Ok(FitMode::Ada),
            other => Err(Error::input(format!("unknown mode '{other}', expected aa or ada"))),
        }
    }
}

/// Functional AA or ADA under the `W`-norm. Archetype rows come back as
/// coefficient vectors in the dataset's own coordinates.
pub fn functional_fit(
    dataset: &FunctionalDataset,
    k: usize,
    opts: &FitOptions,
    loss: LossSpec,
    mode: FitMode,
) -> Result<ArchetypalModel> {
    let y = dataset.rotated()?;
    let mut model = match (mode, loss.is_robust()) {
        (FitMode::Aa, false) => archetypes::fit_aa_values(&y, k, opts)?,
        (FitMode::Aa, true) => {
            robust::robust_aa_values(&y, k, opts, loss, robust::TuningSchedule::EveryIteration)?.model
        }
        (FitMode::Ada, _) => archetypoids::ada_values(&y, k, opts, loss)?.model,
    };
    model.archetypes = &model.beta * dataset.coefficients();
    if let Some(members) = &model.member_indices {
        for (j, &s) in members.iter().enumerate() {
            model.archetypes.row_mut(j).copy_from(&dataset.coefficients().row(s));
        }
    }
    Ok(model)
}
