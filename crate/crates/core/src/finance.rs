//! Daily price panels and the return/sensitivity features built from them.
//!
//! Features live on the index's trading calendar: position `t` is the
//! `t`-th index trading day. `r_N(t)` compares prices `N` positions apart and
//! `beta_N(t)` is the ratio of sample covariance to sample index variance
//! over the last `N` positions where both return series are defined.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdbasis::{BasisFamily, BasisSystem, FunctionalDataset, SampledCurve};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Ten market sectors plus a bucket for anything unrecognized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sector {
    CD,
    CS,
    E,
    F,
    HC,
    I,
    M,
    RE,
    T,
    U,
    #[serde(rename = "unknown")]
    Unknown,
}

impl Sector {
    pub const ALL: [Sector; 10] = [
        Sector::CD,
        Sector::CS,
        Sector::E,
        Sector::F,
        Sector::HC,
        Sector::I,
        Sector::M,
        Sector::RE,
        Sector::T,
        Sector::U,
    ];

    /// Unrecognized codes map to [`Sector::Unknown`].
    pub fn parse(code: &str) -> Sector {
        let code = code.trim();
        Sector::ALL.into_iter().find(|s| s.code().eq_ignore_ascii_case(code)).unwrap_or(Sector::Unknown)
    }

    pub fn code(&self) -> &'static str {
        match self {
            Sector::CD => "CD",
            Sector::CS => "CS",
            Sector::E => "E",
            Sector::F => "F",
            Sector::HC => "HC",
            Sector::I => "I",
            Sector::M => "M",
            Sector::RE => "RE",
            Sector::T => "T",
            Sector::U => "U",
            Sector::Unknown => "unknown",
        }
    }
}

/// One trading day. Only the close is required.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: Option<f64>,
    pub high: Option<f64>,
    pub low: Option<f64>,
    pub close: f64,
    pub volume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSeries {
    pub symbol: String,
    pub bars: Vec<Bar>,
}

impl SymbolSeries {
    pub fn new(symbol: impl Into<String>, bars: Vec<Bar>) -> Self {
        SymbolSeries { symbol: symbol.into(), bars }
    }

    /// Sorts by date; fails on a repeated date or a non-positive close.
    fn normalize(mut self) -> Result<Self> {
        self.bars.sort_by_key(|b| b.date);
        for w in self.bars.windows(2) {
            if w[0].date == w[1].date {
                return Err(Error::input(format!("duplicate date {} for symbol {}", w[0].date, self.symbol)));
            }
        }
        if let Some(b) = self.bars.iter().find(|b| !(b.close > 0.0 && b.close.is_finite())) {
            return Err(Error::input(format!("non-positive close on {} for symbol {}", b.date, self.symbol)));
        }
        Ok(self)
    }

    /// Closes aligned to `calendar`; `None` where the symbol did not trade.
    pub fn aligned_closes(&self, calendar: &[NaiveDate]) -> Vec<Option<f64>> {
        let by_date: BTreeMap<NaiveDate, f64> = self.bars.iter().map(|b| (b.date, b.close)).collect();
        calendar.iter().map(|d| by_date.get(d).copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OhlcvPanel {
    symbols: Vec<SymbolSeries>,
    index: SymbolSeries,
    sectors: BTreeMap<String, Sector>,
}

impl OhlcvPanel {
    /// Symbols are kept sorted by name.
    pub fn new(symbols: Vec<SymbolSeries>, index: SymbolSeries, sectors: BTreeMap<String, Sector>) -> Result<Self> {
        let mut symbols = symbols.into_iter().map(SymbolSeries::normalize).collect::<Result<Vec<_>>>()?;
        symbols.sort_by(|a, b| a.symbol.cmp(&b.symbol));
        for w in symbols.windows(2) {
            if w[0].symbol == w[1].symbol {
                return Err(Error::input(format!("symbol {} appears twice", w[0].symbol)));
            }
        }
        let index = index.normalize()?;
        if index.bars.is_empty() {
            return Err(Error::input("index series is empty"));
        }
        Ok(OhlcvPanel { symbols, index, sectors })
    }

    pub fn symbols(&self) -> &[SymbolSeries] {
        &self.symbols
    }

    pub fn index(&self) -> &SymbolSeries {
        &self.index
    }

    pub fn sectors(&self) -> &BTreeMap<String, Sector> {
        &self.sectors
    }

    pub fn sector(&self, symbol: &str) -> Sector {
        self.sectors.get(symbol).copied().unwrap_or(Sector::Unknown)
    }

    /// The index's trading days.
    pub fn calendar(&self) -> Vec<NaiveDate> {
        self.index.bars.iter().map(|b| b.date).collect()
    }

    /// Writes `prices/<SYMBOL>.csv`, `index.csv` and `sectors.csv` under `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<PanelSource> {
        let dir = dir.as_ref();
        let prices = dir.join("prices");
        std::fs::create_dir_all(&prices).map_err(|e| Error::io(&prices, e))?;
        for s in &self.symbols {
            write_bars(&prices.join(format!("{}.csv", s.symbol)), &s.bars)?;
        }
        let index = dir.join("index.csv");
        write_bars(&index, &self.index.bars)?;
        let sectors = dir.join("sectors.csv");
        let mut w = csv::Writer::from_path(&sectors)?;
        w.write_record(["symbol", "sector"])?;
        for (sym, sec) in &self.sectors {
            w.write_record([sym.as_str(), sec.code()])?;
        }
        w.flush().map_err(|e| Error::io(&sectors, e))?;
        Ok(PanelSource { prices, format: PanelFormat::PerSymbol, index, sectors: Some(sectors) })
    }

    /// Writes all symbols to one long-format CSV.
    pub fn write_long(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["symbol", "date", "open", "high", "low", "close", "volume"])?;
        for s in &self.symbols {
            for b in &s.bars {
                let mut rec = vec![s.symbol.clone()];
                rec.extend(bar_fields(b));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn bar_fields(b: &Bar) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    vec![
        b.date.format(DATE_FORMAT).to_string(),
        opt(b.open),
        opt(b.high),
        opt(b.low),
        b.close.to_string(),
        opt(b.volume),
    ]
}

fn write_bars(path: &Path, bars: &[Bar]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "open", "high", "low", "close", "volume"])?;
    for b in bars {
        w.write_record(bar_fields(b))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PanelFormat {
    /// A directory with one `<SYMBOL>.csv` per stock.
    #[serde(rename = "csv-per-symbol")]
    PerSymbol,
    /// One file with a leading `symbol` column.
    #[serde(rename = "single-csv")]
    SingleCsv,
}

impl PanelFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv-per-symbol" | "per-symbol" => Ok(PanelFormat::PerSymbol),
            "single-csv" | "long" => Ok(PanelFormat::SingleCsv),
            other => Err(Error::input(format!("unknown panel format '{other}'"))),
        }
    }
}

/// Where a panel's files live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSource {
    pub prices: PathBuf,
    pub format: PanelFormat,
    pub index: PathBuf,
    pub sectors: Option<PathBuf>,
}

/// A row that could not be parsed, with its location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: OhlcvPanel,
    pub rejects: Vec<RejectedRow>,
}

pub fn load_panel(source: &PanelSource) -> Result<LoadedPanel> {
    let mut rejects = Vec::new();
    if !source.index.is_file() {
        return Err(Error::input(format!("index series not found at {}", source.index.display())));
    }
    let index_rows = read_price_file(&source.index, false, &mut rejects)?;
    let index = SymbolSeries::new("INDEX", index_rows.into_iter().map(|(_, b)| b).collect());

    let mut grouped: BTreeMap<String, Vec<Bar>> = BTreeMap::new();
    match source.format {
        PanelFormat::PerSymbol => {
            let entries = std::fs::read_dir(&source.prices).map_err(|e| Error::io(&source.prices, e))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            files.sort();
            for f in files {
                let sym = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let rows = read_price_file(&f, false, &mut rejects)?;
                grouped.entry(sym).or_default().extend(rows.into_iter().map(|(_, b)| b));
            }
        }
        PanelFormat::SingleCsv => {
            for (sym, bar) in read_price_file(&source.prices, true, &mut rejects)? {
                grouped.entry(sym.expect("symbol column")).or_default().push(bar);
            }
        }
    }
    let sectors = match &source.sectors {
        Some(p) => read_sectors(p)?,
        None => BTreeMap::new(),
    };
    let symbols = grouped.into_iter().map(|(s, b)| SymbolSeries::new(s, b)).collect();
    Ok(LoadedPanel { panel: OhlcvPanel::new(symbols, index, sectors)?, rejects })
}

fn header_position(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

/// Parses one price file; malformed rows go to `rejects`.
fn read_price_file(
    path: &Path,
    with_symbol: bool,
    rejects: &mut Vec<RejectedRow>,
) -> Result<Vec<(Option<String>, Bar)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let need = |name: &str| {
        header_position(&headers, name)
            .ok_or_else(|| Error::input(format!("{}: missing '{name}' column", path.display())))
    };
    let date_col = need("date")?;
    let close_col = need("close")?;
    let sym_col = if with_symbol { Some(need("symbol")?) } else { None };
    let optional: Vec<Option<usize>> =
        ["open", "high", "low", "volume"].iter().map(|n| header_position(&headers, n)).collect();

    let file_name = path.display().to_string();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut reject = |reason: String| {
            rejects.push(RejectedRow { file: file_name.clone(), line, reason });
        };
        if rec.len() != headers.len() {
            reject(format!("expected {} fields, found {}", headers.len(), rec.len()));
            continue;
        }
        let date = match NaiveDate::parse_from_str(rec[date_col].trim(), DATE_FORMAT) {
            Ok(d) => d,
            Err(_) => {
                reject(format!("unparseable date '{}'", &rec[date_col]));
                continue;
            }
        };
        let close = match rec[close_col].trim().parse::<f64>() {
            Ok(c) if c > 0.0 && c.is_finite() => c,
            _ => {
                reject(format!("invalid close '{}'", &rec[close_col]));
                continue;
            }
        };
        let mut extras = [None; 4];
        let mut bad = None;
        for (slot, col) in extras.iter_mut().zip(&optional) {
            if let Some(c) = *col {
                let raw = rec[c].trim();
                if raw.is_empty() {
                    continue;
                }
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => *slot = Some(v),
                    _ => bad = Some(raw.to_string()),
                }
            }
        }
        if let Some(raw) = bad {
            reject(format!("invalid number '{raw}'"));
            continue;
        }
        let symbol = sym_col.map(|c| rec[c].trim().to_string());
        if symbol.as_deref() == Some("") {
            reject("empty symbol".into());
            continue;
        }
        let [open, high, low, volume] = extras;
        out.push((symbol, Bar { date, open, high, low, close, volume }));
    }
    Ok(out)
}

/// Reads a `symbol,sector` map; unrecognized codes become `unknown`.
pub fn read_sectors(path: &Path) -> Result<BTreeMap<String, Sector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let sym = header_position(&headers, "symbol").ok_or_else(|| Error::input("sector map needs a 'symbol' column"))?;
    let sec = header_position(&headers, "sector").ok_or_else(|| Error::input("sector map needs a 'sector' column"))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let (Some(s), Some(c)) = (rec.get(sym), rec.get(sec)) {
            out.insert(s.trim().to_string(), Sector::parse(c));
        }
    }
    Ok(out)
}

/// A symbol removed from the analysis and why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedSymbol {
    pub symbol: String,
    pub reason: String,
}

/// Keeps dates on or after `start` and drops symbols missing more than
/// `max_missing` of the index's trading days.
pub fn filter_missing(
    panel: &OhlcvPanel,
    start: NaiveDate,
    max_missing: f64,
) -> Result<(OhlcvPanel, Vec<DroppedSymbol>)> {
    if !(0.0..1.0).contains(&max_missing) {
        return Err(Error::input(format!("missing-fraction threshold {max_missing} outside [0, 1)")));
    }
    let index_bars: Vec<Bar> = panel.index.bars.iter().filter(|b| b.date >= start).cloned().collect();
    if index_bars.is_empty() {
        return Err(Error::input(format!("no index observations on or after {start}")));
    }
    let calendar: HashSet<NaiveDate> = index_bars.iter().map(|b| b.date).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for s in &panel.symbols {
        let bars: Vec<Bar> = s.bars.iter().filter(|b| calendar.contains(&b.date)).cloned().collect();
        let missing = 1.0 - bars.len() as f64 / calendar.len() as f64;
        if missing > max_missing {
            dropped.push(DroppedSymbol {
                symbol: s.symbol.clone(),
                reason: format!("missing fraction {missing:.4} exceeds {max_missing}"),
            });
        } else {
            kept.push(SymbolSeries::new(s.symbol.clone(), bars));
        }
    }
    if kept.is_empty() {
        return Err(Error::input("no symbol survives the missing-data filter"));
    }
    let index = SymbolSeries::new(panel.index.symbol.clone(), index_bars);
    Ok((OhlcvPanel::new(kept, index, panel.sectors.clone())?, dropped))
}

/// `(x_t - x_{t-N}) / x_{t-N}` on a position-indexed series. Empty when the
/// series is not longer than `n`.
pub fn aggregate_returns(series: &[Option<f64>], n: usize) -> Vec<Option<f64>> {
    assert!(n >= 1, "window must be at least 1");
    if n >= series.len() {
        log::warn!("return window {n} does not fit a series of length {}", series.len());
        return Vec::new();
    }
    (0..series.len())
        .map(|t| match (t.checked_sub(n).and_then(|s| series[s]), series[t]) {
            (Some(prev), Some(now)) => Some((now - prev) / prev),
            _ => None,
        })
        .collect()
}

/// Rolling sensitivity of `stock` to `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingBeta {
    pub values: Vec<Option<f64>>,
    /// Positions left undefined because the index did not vary in the window.
    pub zero_variance: Vec<usize>,
}

/// At each position where both returns exist, sample covariance over sample
/// index variance across the last `n` such positions.
pub fn rolling_beta(stock: &[Option<f64>], index: &[Option<f64>], n: usize) -> Result<RollingBeta> {
    if n < 2 {
        return Err(Error::input("beta window must be at least 2"));
    }
    if stock.len() != index.len() {
        return Err(Error::input("stock and index returns are not aligned"));
    }
    let mut values = vec![None; stock.len()];
    let mut zero_variance = Vec::new();
    let mut window: VecDeque<(f64, f64)> = VecDeque::with_capacity(n + 1);
    for t in 0..stock.len() {
        let (Some(s), Some(x)) = (stock[t], index[t]) else { continue };
        window.push_back((s, x));
        if window.len() > n {
            window.pop_front();
        }
        if window.len() < n {
            continue;
        }
        let nf = n as f64;
        let ms = window.iter().map(|p| p.0).sum::<f64>() / nf;
        let mx = window.iter().map(|p| p.1).sum::<f64>() / nf;
        let cov = window.iter().map(|p| (p.0 - ms) * (p.1 - mx)).sum::<f64>() / (nf - 1.0);
        let var = window.iter().map(|p| (p.1 - mx) * (p.1 - mx)).sum::<f64>() / (nf - 1.0);
        let scale = window.iter().map(|p| p.1 * p.1).sum::<f64>() / nf;
        if var <= 1e-12 * scale || var <= 0.0 {
            zero_variance.push(t);
        } else {
            values[t] = Some(cov / var);
        }
    }
    Ok(RollingBeta { values, zero_variance })
}

/// Per-symbol `r_N` and `beta_N` on the index calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    pub window: usize,
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub sectors: Vec<Sector>,
    pub returns: Vec<Vec<Option<f64>>>,
    pub betas: Vec<Vec<Option<f64>>>,
    /// First position at which the index's own beta is defined.
    pub first_position: usize,
    /// `(symbol, date)` pairs where beta was undefined for lack of index variance.
    pub flagged: Vec<(String, NaiveDate)>,
}

pub fn compute_features(panel: &OhlcvPanel, window: usize) -> Result<FeaturePanel> {
    if window < 2 {
        return Err(Error::input("window must be at least 2"));
    }
    let dates = panel.calendar();
    let len = dates.len();
    let index_ret = aggregate_returns(&panel.index.aligned_closes(&dates), window);
    if index_ret.is_empty() {
        return Err(Error::input(format!("window {window} is longer than the {len}-day calendar")));
    }
    let index_beta = rolling_beta(&index_ret, &index_ret, window)?;
    let first_position = index_beta
        .values
        .iter()
        .position(Option::is_some)
        .filter(|&p| p + 1 < len)
        .ok_or_else(|| Error::input(format!("calendar of {len} days is too short for window {window}")))?;

    let per_symbol: Vec<(Vec<Option<f64>>, RollingBeta)> = panel
        .symbols
        .iter()
        .map(|s| {
            let r = aggregate_returns(&s.aligned_closes(&dates), window);
            let b = rolling_beta(&r, &index_ret, window)?;
            Ok((r, b))
        })
        .collect::<Result<_>>()?;
    let mut flagged = Vec::new();
    let mut returns = Vec::new();
    let mut betas = Vec::new();
    for (s, (r, b)) in panel.symbols.iter().zip(per_symbol) {
        flagged.extend(b.zero_variance.iter().map(|&t| (s.symbol.clone(), dates[t])));
        returns.push(r);
        betas.push(b.values);
    }
    Ok(FeaturePanel {
        window,
        symbols: panel.symbols.iter().map(|s| s.symbol.clone()).collect(),
        sectors: panel.symbols.iter().map(|s| panel.sector(&s.symbol)).collect(),
        dates,
        returns,
        betas,
        first_position,
        flagged,
    })
}

/// Standardized bivariate functional dataset plus what had to be left out.
#[derive(Debug, Clone)]
pub struct FunctionalPanel {
    pub dataset: FunctionalDataset,
    pub sectors: Vec<Sector>,
    pub dropped: Vec<DroppedSymbol>,
}

/// Default number of basis functions per variable.
pub const DEFAULT_BASIS_COUNT: usize = 13;

impl FeaturePanel {
    /// Smoothing domain in calendar positions.
    pub fn domain(&self) -> (f64, f64) {
        (self.first_position as f64, (self.dates.len() - 1) as f64)
    }

    /// Observed `(position, value)` pairs of a series within the domain.
    pub fn observed(&self, series: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
        series.iter().enumerate().skip(self.first_position).filter_map(|(t, v)| v.map(|v| (t as f64, v))).unzip()
    }
}

/// Smooths each symbol's two series and standardizes the joined coefficients.
/// Columns `0..m` hold return coefficients, `m..2m` beta coefficients.
pub fn build_functional_panel(features: &FeaturePanel, family: BasisFamily, m: usize) -> Result<FunctionalPanel> {
    let basis = BasisSystem::new(family, m, features.domain())?;
    let mut dropped = Vec::new();
    let mut ret_curves = Vec::new();
    let mut beta_curves = Vec::new();
    let mut labels = Vec::new();
    let mut sectors = Vec::new();
    for (i, sym) in features.symbols.iter().enumerate() {
        let (tr, yr) = features.observed(&features.returns[i]);
        let (tb, yb) = features.observed(&features.betas[i]);
        if tr.len() < m || tb.len() < m {
            dropped.push(DroppedSymbol {
                symbol: sym.clone(),
                reason: format!("{} return and {} beta points, need {m}", tr.len(), tb.len()),
            });
            continue;
        }
        ret_curves.push(SampledCurve::new(sym.clone(), tr, yr));
        beta_curves.push(SampledCurve::new(sym.clone(), tb, yb));
        labels.push(sym.clone());
        sectors.push(features.sectors[i]);
    }
    if labels.is_empty() {
        return Err(Error::input("no symbol has enough observations to smooth"));
    }
    let n = features.window;
    let raw = FunctionalDataset::from_samples(
        &[(format!("r{n}"), ret_curves), (format!("beta{n}"), beta_curves)],
        basis,
        labels,
    )?;
    let (dataset, _) = raw.standardize()?;
    Ok(FunctionalPanel { dataset, sectors, dropped })
}

/// Dates that appear for a symbol but not on the index calendar.
pub fn off_calendar_dates(panel: &OhlcvPanel, symbol: &str) -> Vec<NaiveDate> {
    let cal: BTreeSet<NaiveDate> = panel.calendar().into_iter().collect();
    panel
        .symbols
        .iter()
        .find(|s| s.symbol == symbol)
        .map(|s| s.bars.iter().map(|b| b.date).filter(|d| !cal.contains(d)).collect())
        .unwrap_or_default()
}
