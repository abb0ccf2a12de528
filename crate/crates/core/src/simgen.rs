//! Seeded generators for the simulation designs: waveform mixtures,
//! Gaussian-process curves with a contaminating mean, and a synthetic
//! stock market for exercising the finance pipeline.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finance::{Bar, OhlcvPanel, Sector, SymbolSeries};

/// Triangle peaking at 6 when `t = 11`.
pub fn h1(t: f64) -> f64 {
    (6.0 - (t - 11.0).abs()).max(0.0)
}

pub fn h2(t: f64) -> f64 {
    h1(t - 4.0)
}

pub fn h3(t: f64) -> f64 {
    h1(t + 4.0)
}

type Triangle = fn(f64) -> f64;

/// The pair of triangles mixed in each waveform class (1-based).
pub fn class_pair(class: u8) -> (Triangle, Triangle) {
    match class {
        1 => (h1, h2),
        2 => (h1, h3),
        3 => (h2, h3),
        _ => panic!("waveform classes are 1, 2 and 3"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub n_per_class: usize,
    pub seed: u64,
    /// Standard deviation of the pointwise noise; 1 unless a test wants it off.
    pub noise_sd: f64,
}

impl WaveformSpec {
    pub fn new(n_per_class: usize, seed: u64) -> Self {
        WaveformSpec { n_per_class, seed, noise_sd: 1.0 }
    }

    /// `t = 1, 1.2, ..., 21`.
    pub fn grid() -> Vec<f64> {
        (0..101).map(|i| 1.0 + 0.2 * i as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::input("n_per_class must be at least 1"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::input("noise_sd must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WaveformData {
    pub grid: Vec<f64>,
    /// `3 n_per_class x 101`, classes in blocks.
    pub curves: DMatrix<f64>,
    pub classes: Vec<u8>,
    pub mixing: Vec<f64>,
    /// Rows `h1, h2, h3` on the grid.
    pub templates: DMatrix<f64>,
}

/// One waveform curve: `u a(t) + (1 - u) b(t) + noise`.
pub fn waveform_curve(class: u8, u: f64, grid: &[f64], noise: &[f64]) -> Vec<f64> {
    let (a, b) = class_pair(class);
    grid.iter().zip(noise).map(|(&t, e)| u * a(t) + (1.0 - u) * b(t) + e).collect()
}

pub fn gen_waveform(spec: &WaveformSpec) -> Result<WaveformData> {
    spec.validate()?;
    let grid = WaveformSpec::grid();
    let g = grid.len();
    let n = 3 * spec.n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut curves = DMatrix::zeros(n, g);
    let mut classes = Vec::with_capacity(n);
    let mut mixing = Vec::with_capacity(n);
    for class in 1..=3u8 {
        for _ in 0..spec.n_per_class {
            let u: f64 = rng.random();
            let noise: Vec<f64> = (0..g).map(|_| spec.noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let row = classes.len();
            for (j, v) in waveform_curve(class, u, &grid, &noise).into_iter().enumerate() {
                curves[(row, j)] = v;
            }
            classes.push(class);
            mixing.push(u);
        }
    }
    let templates = DMatrix::from_fn(3, g, |r, j| [h1, h2, h3][r](grid[j]));
    Ok(WaveformData { grid, curves, classes, mixing, templates })
}

/// Mean of the regular curves.
pub fn main_mean(t: f64) -> f64 {
    30.0 * t * (1.0 - t).powf(1.5)
}

/// Mean of the contaminating curves.
pub fn contaminated_mean(t: f64) -> f64 {
    30.0 * t.powf(1.5) * (1.0 - t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub n: usize,
    pub cr: f64,
    pub grid_points: usize,
    pub gp_scale: f64,
    pub gp_range: f64,
    pub seed: u64,
}

impl ContaminationSpec {
    pub fn new(n: usize, cr: f64, seed: u64) -> Self {
        ContaminationSpec { n, cr, grid_points: 50, gp_scale: 0.3, gp_range: 0.3, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ContaminationSpec { seed, ..self.clone() }
    }

    /// `ceil(cr n)`, ignoring floating-point dust above an integer.
    pub fn n_outliers(&self) -> usize {
        (self.cr * self.n as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn grid(&self) -> Vec<f64> {
        let g = self.grid_points;
        (0..g).map(|i| i as f64 / (g - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cr) {
            return Err(Error::input(format!("contamination rate {} outside [0, 1)", self.cr)));
        }
        if self.n == 0 || self.n_outliers() >= self.n {
            return Err(Error::input("contamination leaves no regular curves"));
        }
        if self.grid_points < 2 {
            return Err(Error::input("at least two grid points are needed"));
        }
        if !(self.gp_scale > 0.0 && self.gp_range > 0.0) {
            return Err(Error::input("covariance scale and range must be positive"));
        }
        Ok(())
    }

    /// `gp_scale exp(-|s - t| / gp_range)` on the grid.
    pub fn covariance(&self) -> DMatrix<f64> {
        let grid = self.grid();
        let g = grid.len();
        DMatrix::from_fn(g, g, |i, j| self.gp_scale * (-(grid[i] - grid[j]).abs() / self.gp_range).exp())
    }
}

#[derive(Debug, Clone)]
pub struct ContaminatedData {
    pub grid: Vec<f64>,
    /// `n x grid_points`.
    pub curves: DMatrix<f64>,
    pub outlier: Vec<bool>,
}

/// Lower Cholesky factor of `cov` after adding `1e-10` to the diagonal.
pub fn jittered_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = cov.nrows();
    let jittered = cov + DMatrix::identity(g, g) * 1e-10;
    jittered.cholesky().map(|c| c.l()).ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))
}

pub fn gen_contaminated(spec: &ContaminationSpec) -> Result<ContaminatedData> {
    spec.validate()?;
    let grid = spec.grid();
    let l = jittered_cholesky(&spec.covariance())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut outlier = vec![false; spec.n];
    outlier[..spec.n_outliers()].fill(true);
    outlier.shuffle(&mut rng);
    let g = grid.len();
    let main: Vec<f64> = grid.iter().map(|&t| main_mean(t)).collect();
    let cont: Vec<f64> = grid.iter().map(|&t| contaminated_mean(t)).collect();
    let mut curves = DMatrix::zeros(spec.n, g);
    for i in 0..spec.n {
        let z = DVector::from_fn(g, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = &l * z;
        let mean = if outlier[i] { &cont } else { &main };
        for j in 0..g {
            curves[(i, j)] = mean[j] + eps[j];
        }
    }
    Ok(ContaminatedData { grid, curves, outlier })
}

/// A synthetic market whose stocks follow the index with smoothly varying
/// sensitivities, with gaps, a late listing and one sparse symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub n_symbols: usize,
    pub n_days: usize,
    pub start: NaiveDate,
    pub seed: u64,
    /// Fraction of days each symbol misses at random.
    pub gap_rate: f64,
}

impl MarketSpec {
    pub fn new(n_symbols: usize, n_days: usize, seed: u64) -> Self {
        MarketSpec {
            n_symbols,
            n_days,
            start: NaiveDate::from_ymd_opt(1999, 1, 4).expect("valid date"),
            seed,
            gap_rate: 0.03,
        }
    }
}

/// Weekdays from `start` on.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.checked_add_days(Days::new(1)).expect("date in range");
    }
    out
}

/// Symbol `i`'s true sensitivity at fraction `s` of the sample.
pub fn market_beta(i: usize, s: f64) -> f64 {
    let phase = i as f64 * 0.7;
    0.6 + 0.08 * (i % 7) as f64 + 0.4 * (2.0 * std::f64::consts::PI * s + phase).sin()
}

pub fn gen_market(spec: &MarketSpec) -> Result<OhlcvPanel> {
    if spec.n_symbols == 0 || spec.n_days < 2 {
        return Err(Error::input("market needs at least one symbol and two days"));
    }
    if !(0.0..0.5).contains(&spec.gap_rate) {
        return Err(Error::input("gap_rate must lie in [0, 0.5)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dates = business_days(spec.start, spec.n_days);
    let index_ret: Vec<f64> = (0..spec.n_days).map(|_| 0.0003 + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
    let index = SymbolSeries::new("INDEX", price_bars(&dates, &index_ret, 1000.0, &vec![true; spec.n_days], &mut rng));

    let sectors = Sector::ALL;
    let mut symbols = Vec::with_capacity(spec.n_symbols);
    let mut sector_map = std::collections::BTreeMap::new();
    for i in 0..spec.n_symbols {
        let name = format!("S{:03}", i + 1);
        let vol = 0.006 + 0.002 * (i % 5) as f64;
        let ret: Vec<f64> = (0..spec.n_days)
            .map(|t| {
                let s = t as f64 / spec.n_days as f64;
                market_beta(i, s) * index_ret[t] + vol * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mut present: Vec<bool> = (0..spec.n_days).map(|_| rng.random::<f64>() >= spec.gap_rate).collect();
        if i == 1 && spec.n_symbols > 2 {
            // Listed a tenth of the way in.
            present[..spec.n_days / 10].fill(false);
        }
        if i == spec.n_symbols - 1 && spec.n_symbols > 2 {
            // Too sparse to keep.
            for p in present.iter_mut() {
                *p = *p && rng.random::<f64>() >= 0.4;
            }
        }
        symbols.push(SymbolSeries::new(&name, price_bars(&dates, &ret, 50.0 + i as f64, &present, &mut rng)));
        sector_map.insert(name, sectors[i % sectors.len()]);
    }
    OhlcvPanel::new(symbols, index, sector_map)
}

fn price_bars(dates: &[NaiveDate], log_ret: &[f64], start: f64, present: &[bool], rng: &mut ChaCha8Rng) -> Vec<Bar> {
    let mut close = start;
    let mut bars = Vec::new();
    for (t, &d) in dates.iter().enumerate() {
        let prev = close;
        close *= log_ret[t].exp();
        let spread = 1.0 + 0.005 * rng.random::<f64>();
        if present[t] {
            bars.push(Bar {
                date: d,
                open: Some(prev),
                high: Some(prev.max(close) * spread),
                low: Some(prev.min(close) / spread),
                close,
                volume: Some((1e5 * (1.0 + rng.random::<f64>())).round()),
            });
        }
    }
    bars
}
