//! Command-line front end. Every subcommand computes into a staging
//! directory next to `--out` and moves the files over only when the whole
//! run succeeded, so a failed run leaves no partial outputs behind.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::archetypes::{self, FitOptions};
use crate::archetypoids;
use crate::data::DataMatrix;
use crate::detect::{self, CurveRepresentation, ExperimentConfig};
use crate::error::{Error, Result};
use crate::export::ModelExport;
use crate::fdbasis::{self, BasisFamily, BasisSystem, FitMode, FunctionalDataset, SampledCurve};
use crate::finance::{self, PanelFormat, PanelSource, Sector};
use crate::robust::{self, LossSpec, TuningPolicy};
use crate::simgen::{self, ContaminationSpec, MarketSpec, WaveformSpec};
use crate::taxonomy::{self, NetworkFormat, TaxonomyConfig};

pub const TOOL: &str = "archetypal";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "archetypal", version, about = "Archetypal and archetypoid analysis, robust and functional")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit archetypes or archetypoids to a data or coefficient CSV.
    Fit(FitArgs),
    /// Generate synthetic data or run a replicated experiment.
    Simulate(SimulateArgs),
    /// Run the market pipeline from OHLCV files to taxonomy exports.
    Finance(FinanceArgs),
    /// Flag outlying records from robust archetypoid residuals.
    Detect(DetectArgs),
    /// Cluster a fitted model's mixture weights and export the network.
    Taxonomy(TaxonomyArgs),
    /// Smooth sampled curves onto a basis.
    Smooth(SmoothArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Aa,
    Ada,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Squared,
    Bisquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisArg {
    CubicBspline,
    Fourier,
}

impl From<BasisArg> for BasisFamily {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::CubicBspline => BasisFamily::CubicBspline,
            BasisArg::Fourier => BasisFamily::Fourier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentArg {
    /// Three-class waveform curves.
    Waveform,
    /// Contaminated Gaussian-process curves with outlier flags.
    Contamination,
    /// Outlier inclusion rates of squared and robust archetypoids.
    ContaminationInclusion,
    /// Detector TPR, FPR and MCC over replicates.
    RadabMetrics,
    /// A synthetic OHLCV panel for the finance pipeline.
    Market,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationArg {
    Raw,
    CubicBspline,
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanelFormatArg {
    CsvPerSymbol,
    SingleCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkArg {
    Dot,
    Json,
    Both,
}

impl NetworkArg {
    fn formats(self) -> Vec<NetworkFormat> {
        match self {
            NetworkArg::Dot => vec![NetworkFormat::Dot],
            NetworkArg::Json => vec![NetworkFormat::Json],
            NetworkArg::Both => vec![NetworkFormat::Dot, NetworkFormat::Json],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutArg {
    /// `record,variable,t,value` rows.
    Long,
    /// One row per record, one column per grid point (numeric headers).
    Wide,
}

/// Restart and convergence settings.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Seed for all randomness in the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Weight of the sum-to-one penalty row in the simplex solver.
    #[arg(long, default_value_t = crate::nnls::DEFAULT_PENALTY)]
    pub penalty: f64,
}

impl SolverArgs {
    pub fn options(&self) -> Result<FitOptions> {
        let opts = FitOptions {
            restarts: self.restarts,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            seed: self.seed,
            penalty_weight: self.penalty,
        };
        opts.validate()?;
        Ok(opts)
    }
}

fn loss_spec(loss: LossArg, policy: &str) -> Result<LossSpec> {
    match loss {
        LossArg::Squared => Ok(LossSpec::squared()),
        LossArg::Bisquare => Ok(LossSpec::bisquare(TuningPolicy::parse(policy)?)),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Data CSV (label column plus values). A `<stem>.basis.json` sidecar
    /// marks it as functional coefficients.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Aa)]
    pub mode: ModeArg,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    pub loss: LossArg,
    /// Tuning policy for the bisquare loss: median6, p25/p50/p75,
    /// 6p25/6p50/6p75 or fixed<c>.
    #[arg(long, default_value = "median6")]
    pub policy: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = "fit-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub experiment: ExperimentArg,
    /// Number of replicates; replicate r uses seed + r.
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Contamination rates, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub cr: Vec<f64>,
    /// Curves per contaminated sample.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Archetypoids per fit.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Robust policies compared in the inclusion experiment.
    #[arg(long, value_delimiter = ',', default_value = "median6,p25,p50,p75,6p25,6p50,6p75")]
    pub policies: Vec<String>,
    /// How curves enter the fit.
    #[arg(long, value_enum, default_value_t = RepresentationArg::Raw)]
    pub representation: RepresentationArg,
    /// Basis size for a basis representation.
    #[arg(long, default_value_t = 10)]
    pub basis_m: usize,
    #[arg(long, default_value_t = 150)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub symbols: usize,
    #[arg(long, default_value_t = 750)]
    pub days: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = "simulate-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinanceArgs {
    /// Directory of per-symbol CSVs, or one long CSV with a symbol column.
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long, value_enum, default_value_t = PanelFormatArg::CsvPerSymbol)]
    pub format: PanelFormatArg,
    /// Index close series.
    #[arg(long)]
    pub index: PathBuf,
    /// `symbol,sector` map; symbols without an entry get sector `unknown`.
    #[arg(long)]
    pub sectors: Option<PathBuf>,
    #[arg(long, default_value = "2000-01-01")]
    pub start: NaiveDate,
    #[arg(long, default_value_t = 0.2)]
    pub max_missing: f64,
    /// Return and beta window in trading days.
    #[arg(long, default_value_t = 250)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = BasisArg::CubicBspline)]
    pub basis: BasisArg,
    #[arg(long, default_value_t = finance::DEFAULT_BASIS_COUNT)]
    pub m: usize,
    /// Choose m from this range (`LO..HI`) instead of using --m.
    #[arg(long)]
    pub select_m: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub k_min: usize,
    #[arg(long, default_value_t = 5)]
    pub k_max: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Ada)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = LossArg::Bisquare)]
    pub loss: LossArg,
    #[arg(long, default_value = "median6")]
    pub policy: String,
    /// Clustering threshold U.
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Model used for the taxonomy; defaults to the largest k.
    #[arg(long)]
    pub taxonomy_k: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = "finance-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectArgs {
    /// Data or functional coefficient CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Optional `record,outlier` CSV with known labels, for scoring.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = "detect-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TaxonomyArgs {
    /// Model JSON written by `fit` or `finance`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sectors: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = NetworkArg::Both)]
    pub format: NetworkArg,
    /// Output directory.
    #[arg(long, default_value = "taxonomy-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmoothArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = LayoutArg::Long)]
    pub layout: LayoutArg,
    /// Variable name for wide input.
    #[arg(long, default_value = "x")]
    pub variable: String,
    #[arg(long, value_enum, default_value_t = BasisArg::CubicBspline)]
    pub basis: BasisArg,
    #[arg(long, default_value_t = 13)]
    pub m: usize,
    /// Choose m from this range (`LO..HI`) instead of using --m.
    #[arg(long)]
    pub select_m: Option<String>,
    /// Domain `a,b`; defaults to the range of observed times.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub domain: Option<Vec<f64>>,
    /// Center and scale each variable block.
    #[arg(long)]
    pub standardize: bool,
    /// Output directory.
    #[arg(long, default_value = "smooth-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                3
            } else {
                2
            }
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Finance(a) => cmd_finance(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Taxonomy(a) => cmd_taxonomy(a),
        Command::Smooth(a) => cmd_smooth(a),
    }
}

/// Output directory under construction. Dropped without `commit`, it
/// removes everything written so far.
struct Staging {
    target: PathBuf,
    dir: PathBuf,
}

impl Staging {
    fn new(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| Error::input(format!("output path '{}' has no directory name", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !parent.is_dir() {
            return Err(Error::input(format!("parent of output directory '{}' does not exist", target.display())));
        }
        if target.exists() && !target.is_dir() {
            return Err(Error::input(format!("output path '{}' is not a directory", target.display())));
        }
        let dir = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging { target: target.to_path_buf(), dir })
    }

    /// Path of `rel` inside the staging area; parent directories are created.
    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    /// Directory `rel` inside the staging area, created if needed.
    fn dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn files(&self) -> Result<Vec<String>> {
        fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
            for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                let p = entry.map_err(|e| Error::io(dir, e))?.path();
                if p.is_dir() {
                    walk(root, &p, out)?;
                } else {
                    let rel = p.strip_prefix(root).expect("inside root");
                    out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        walk(&self.dir, &self.dir, &mut out)?;
        out.sort();
        Ok(out)
    }

    /// Writes the manifest and moves every staged file into the target.
    fn commit<A: Serialize>(self, command: &str, args: &A, seeds: Vec<u64>, summary: serde_json::Value) -> Result<()> {
        let mut outputs = self.files()?;
        outputs.push("manifest.json".into());
        outputs.sort();
        let manifest = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": command,
            "args": args,
            "seeds": seeds,
            "outputs": outputs,
            "summary": summary,
        });
        let mpath = self.path("manifest.json")?;
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&mpath, e))?;
        std::fs::create_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        for rel in &outputs {
            let from = self.dir.join(rel);
            let to = self.target.join(rel);
            if let Some(parent) = to.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::input(format!("{what} '{}' does not exist", path.display())))
    }
}

/// A plain data table or a functional coefficient table with its sidecar.
enum Input {
    Plain(DataMatrix),
    Functional(FunctionalDataset),
}

impl Input {
    fn read(path: &Path) -> Result<Self> {
        require_file(path, "input file")?;
        if fdbasis::sidecar_path(path).exists() {
            Ok(Input::Functional(FunctionalDataset::read_csv(path)?))
        } else {
            Ok(Input::Plain(DataMatrix::read_csv(path)?))
        }
    }

    fn labels(&self) -> (Vec<String>, Vec<String>) {
        match self {
            Input::Plain(d) => (d.row_labels().to_vec(), d.col_labels().to_vec()),
            Input::Functional(f) => (f.record_labels().to_vec(), f.column_labels()),
        }
    }
}

fn fit_input(
    input: &Input,
    mode: ModeArg,
    k: usize,
    opts: &FitOptions,
    loss: LossSpec,
) -> Result<archetypes::ArchetypalModel> {
    match (input, mode) {
        (Input::Functional(ds), ModeArg::Aa) => fdbasis::functional_fit(ds, k, opts, loss, FitMode::Aa),
        (Input::Functional(ds), ModeArg::Ada) => fdbasis::functional_fit(ds, k, opts, loss, FitMode::Ada),
        (Input::Plain(d), ModeArg::Aa) if loss.is_robust() => robust::fit_robust_aa(d, k, opts, loss),
        (Input::Plain(d), ModeArg::Aa) => archetypes::fit_aa(d, k, opts),
        (Input::Plain(d), ModeArg::Ada) => archetypoids::fit_ada(d, k, opts, loss),
    }
}

fn write_model(staging: &Staging, prefix: &str, export: &ModelExport) -> Result<()> {
    export.write_json(staging.path(&format!("{prefix}model.json"))?)?;
    export.write_alpha_csv(staging.path(&format!("{prefix}alpha.csv"))?)?;
    export.write_beta_csv(staging.path(&format!("{prefix}beta.csv"))?)?;
    export.write_archetypes_csv(staging.path(&format!("{prefix}archetypes.csv"))?)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let opts = args.solver.options()?;
    let loss = loss_spec(args.loss, &args.policy)?;
    let input = Input::read(&args.input)?;
    let staging = Staging::new(&args.out)?;
    let model = fit_input(&input, args.mode, args.k, &opts, loss)?;
    let (records, columns) = input.labels();
    let export = ModelExport::new(&model, &records, &columns)?;
    write_model(&staging, "", &export)?;
    let summary = json!({ "objective": export.objective, "members": export.members, "loss": export.loss });
    staging.commit("fit", args, vec![args.solver.seed], summary)
}

fn representation(args: &SimulateArgs) -> CurveRepresentation {
    match args.representation {
        RepresentationArg::Raw => CurveRepresentation::Raw,
        RepresentationArg::CubicBspline => {
            CurveRepresentation::Basis { family: BasisFamily::CubicBspline, m: args.basis_m }
        }
        RepresentationArg::Fourier => CurveRepresentation::Basis { family: BasisFamily::Fourier, m: args.basis_m },
    }
}

fn grid_labels(grid: &[f64]) -> Vec<String> {
    grid.iter().map(|t| format!("t{t}")).collect()
}

fn write_curves(path: &Path, prefix: &str, grid: &[f64], curves: &DMatrix<f64>) -> Result<Vec<String>> {
    let labels: Vec<String> = (1..=curves.nrows()).map(|i| format!("{prefix}{i:04}")).collect();
    DataMatrix::new(curves.clone(), labels.clone(), grid_labels(grid))?.write_csv(path)?;
    Ok(labels)
}

fn write_csv_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cr_tag(cr: f64) -> String {
    format!("cr{cr}")
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let seed = args.solver.seed;
    let opts = args.solver.options()?;
    let mut config = ExperimentConfig::new(args.k, args.replicates, seed);
    config.representation = representation(args);
    config.fit = opts;
    let policies: Vec<TuningPolicy> = args.policies.iter().map(|p| TuningPolicy::parse(p)).collect::<Result<_>>()?;
    let specs: Vec<ContaminationSpec> = args.cr.iter().map(|&cr| ContaminationSpec::new(args.n, cr, seed)).collect();
    for s in &specs {
        s.validate()?;
    }
    if args.replicates == 0 {
        return Err(Error::input("replicates must be at least 1"));
    }

    let staging = Staging::new(&args.out)?;
    let mut seeds = vec![seed];
    let summary = match args.experiment {
        ExperimentArg::Waveform => {
            let spec = WaveformSpec::new(args.n_per_class, seed);
            let data = simgen::gen_waveform(&spec)?;
            let labels = write_curves(&staging.path("curves.csv")?, "w", &data.grid, &data.curves)?;
            write_csv_rows(
                &staging.path("truth.csv")?,
                &["record", "class", "u"],
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| vec![l.clone(), data.classes[i].to_string(), data.mixing[i].to_string()]),
            )?;
            let names = vec!["h1".to_string(), "h2".into(), "h3".into()];
            DataMatrix::new(data.templates.clone(), names, grid_labels(&data.grid))?
                .write_csv(staging.path("templates.csv")?)?;
            json!({ "records": labels.len(), "grid_points": data.grid.len(), "spec": spec })
        }
        ExperimentArg::Contamination => {
            let mut counts = Vec::new();
            for spec in &specs {
                let data = simgen::gen_contaminated(spec)?;
                let tag = cr_tag(spec.cr);
                let labels = write_curves(&staging.path(&format!("curves_{tag}.csv"))?, "c", &data.grid, &data.curves)?;
                write_csv_rows(
                    &staging.path(&format!("truth_{tag}.csv"))?,
                    &["record", "outlier"],
                    labels.iter().zip(&data.outlier).map(|(l, &o)| vec![l.clone(), u8::from(o).to_string()]),
                )?;
                counts.push(json!({ "cr": spec.cr, "outliers": spec.n_outliers() }));
            }
            json!({ "samples": counts })
        }
        ExperimentArg::ContaminationInclusion => {
            seeds = config.seeds();
            let labels = detect::inclusion_labels(&policies);
            let mut rows = Vec::new();
            let mut outcomes = Vec::new();
            for spec in &specs {
                let (r, o) = detect::inclusion_experiment(spec, &policies, &config)?;
                rows.extend(r);
                outcomes.extend(o.into_iter().map(|o| (spec.cr, o)));
            }
            detect::write_rows(staging.path("table.csv")?, &rows)?;
            let mut header = vec!["cr", "seed"];
            header.extend(labels.iter().map(String::as_str));
            write_csv_rows(
                &staging.path("replicates.csv")?,
                &header,
                outcomes.iter().map(|(cr, o)| {
                    let mut r = vec![cr.to_string(), o.seed.to_string()];
                    r.extend(o.included.iter().map(|&b| u8::from(b).to_string()));
                    r
                }),
            )?;
            json!({ "rows": rows.len() })
        }
        ExperimentArg::RadabMetrics => {
            seeds = config.seeds();
            let mut rows = Vec::new();
            let mut per = Vec::new();
            for spec in &specs {
                let (r, p) = detect::radab_metrics(spec, &config)?;
                rows.extend(r);
                per.extend(config.seeds().into_iter().zip(p).map(|(s, m)| (spec.cr, s, m)));
            }
            detect::write_rows(staging.path("table.csv")?, &rows)?;
            write_csv_rows(
                &staging.path("replicates.csv")?,
                &["cr", "seed", "tpr", "fpr", "mcc"],
                per.iter().map(|(cr, s, m)| {
                    vec![cr.to_string(), s.to_string(), m.tpr.to_string(), m.fpr.to_string(), m.mcc.to_string()]
                }),
            )?;
            json!({ "rows": rows.len() })
        }
        ExperimentArg::Market => {
            let spec = MarketSpec::new(args.symbols, args.days, seed);
            let panel = simgen::gen_market(&spec)?;
            panel.write_dir(staging.dir("market")?)?;
            json!({ "spec": spec })
        }
    };
    staging.commit("simulate", args, seeds, summary)
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let bad = || Error::input(format!("expected a range LO..HI, got '{s}'"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

pub fn cmd_finance(args: &FinanceArgs) -> Result<()> {
    let opts = args.solver.options()?;
    let loss = loss_spec(args.loss, &args.policy)?;
    let tax = TaxonomyConfig::new(args.threshold)?;
    if args.k_min < 1 || args.k_min > args.k_max {
        return Err(Error::input(format!("invalid k range {}..{}", args.k_min, args.k_max)));
    }
    let taxonomy_k = args.taxonomy_k.unwrap_or(args.k_max);
    if !(args.k_min..=args.k_max).contains(&taxonomy_k) {
        return Err(Error::input(format!("taxonomy k {taxonomy_k} is outside {}..{}", args.k_min, args.k_max)));
    }
    if !(0.0..1.0).contains(&args.max_missing) {
        return Err(Error::input("max-missing must lie in [0, 1)"));
    }
    let select = args.select_m.as_deref().map(parse_range).transpose()?;
    require_file(&args.prices, "prices")?;
    require_file(&args.index, "index file")?;
    if let Some(s) = &args.sectors {
        require_file(s, "sector map")?;
    }
    let source = PanelSource {
        prices: args.prices.clone(),
        format: match args.format {
            PanelFormatArg::CsvPerSymbol => PanelFormat::PerSymbol,
            PanelFormatArg::SingleCsv => PanelFormat::SingleCsv,
        },
        index: args.index.clone(),
        sectors: args.sectors.clone(),
    };

    let loaded = finance::load_panel(&source).map_err(|e| e.in_stage("load"))?;
    let (panel, mut dropped) =
        finance::filter_missing(&loaded.panel, args.start, args.max_missing).map_err(|e| e.in_stage("filter"))?;
    let features = finance::compute_features(&panel, args.window).map_err(|e| e.in_stage("features"))?;
    let family: BasisFamily = args.basis.into();
    let (m, selection) = match select {
        None => (args.m, None),
        Some(range) => {
            let sel = select_for_features(&features, family, range).map_err(|e| e.in_stage("basis selection"))?;
            (sel.0, Some(sel.1))
        }
    };
    let fpanel = finance::build_functional_panel(&features, family, m).map_err(|e| e.in_stage("smooth"))?;
    dropped.extend(fpanel.dropped.iter().cloned());
    let ds = &fpanel.dataset;
    let records = ds.record_labels().to_vec();
    let columns = ds.column_labels();
    let sectors: Vec<String> = fpanel.sectors.iter().map(|s| s.code().to_string()).collect();

    let mode = match args.mode {
        ModeArg::Aa => FitMode::Aa,
        ModeArg::Ada => FitMode::Ada,
    };
    let mut exports = BTreeMap::new();
    for k in args.k_min..=args.k_max {
        let model = fdbasis::functional_fit(ds, k, &opts, loss, mode).map_err(|e| e.in_stage(format!("fit k={k}")))?;
        exports.insert(k, ModelExport::new(&model, &records, &columns)?);
    }

    let staging = Staging::new(&args.out)?;
    ds.write_csv(staging.path("dataset.csv")?)?;
    write_csv_rows(
        &staging.path("rejects.csv")?,
        &["file", "line", "reason"],
        loaded.rejects.iter().map(|r| vec![r.file.clone(), r.line.to_string(), r.reason.clone()]),
    )?;
    write_csv_rows(
        &staging.path("dropped.csv")?,
        &["symbol", "reason"],
        dropped.iter().map(|d| vec![d.symbol.clone(), d.reason.clone()]),
    )?;
    if let Some(curve) = &selection {
        write_csv_rows(
            &staging.path("basis_selection.csv")?,
            &["m", "variance"],
            curve.iter().map(|(m, v)| vec![m.to_string(), v.to_string()]),
        )?;
    }
    let sector_of: BTreeMap<&str, &str> =
        records.iter().map(String::as_str).zip(sectors.iter().map(String::as_str)).collect();
    let mut summary_rows = Vec::new();
    for (k, export) in &exports {
        write_model(&staging, &format!("models/k{k}_"), export)?;
        let names = export.archetype_names();
        summary_rows.push(vec![
            k.to_string(),
            export.objective.to_string(),
            names.join(" "),
            names.iter().map(|n| sector_of.get(n.as_str()).copied().unwrap_or("-")).collect::<Vec<_>>().join(" "),
        ]);
    }
    write_csv_rows(&staging.path("summary.csv")?, &["k", "objective", "archetypes", "sectors"], summary_rows)?;

    let export = &exports[&taxonomy_k];
    let model = export.to_model()?;
    write_taxonomy(&staging, "taxonomy/", &model, export, &records, &sectors, &tax, NetworkArg::Both)
        .map_err(|e| e.in_stage("taxonomy"))?;

    let summary = json!({
        "symbols_loaded": loaded.panel.symbols().len(),
        "rejected_rows": loaded.rejects.len(),
        "dropped_symbols": dropped.len(),
        "records": ds.n(),
        "columns": ds.coefficients().ncols(),
        "m": m,
        "zero_variance_flags": features.flagged.len(),
        "taxonomy_k": taxonomy_k,
    });
    staging.commit("finance", args, vec![args.solver.seed], summary)
}

/// Picks `m` separately for the return and the beta curves and keeps the
/// larger, so both variables are represented at least as finely as chosen.
fn select_for_features(
    features: &finance::FeaturePanel,
    family: BasisFamily,
    range: std::ops::RangeInclusive<usize>,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let domain = features.domain();
    let curves = |series: &[Vec<Option<f64>>]| -> Vec<SampledCurve> {
        features
            .symbols
            .iter()
            .zip(series)
            .map(|(s, v)| {
                let (t, y) = features.observed(v);
                SampledCurve::new(s.clone(), t, y)
            })
            .filter(|c| c.t.len() > *range.end())
            .collect()
    };
    let r = fdbasis::select_basis_count(&curves(&features.returns), family, domain, range.clone())?;
    let b = fdbasis::select_basis_count(&curves(&features.betas), family, domain, range)?;
    Ok(if r.m >= b.m { (r.m, r.curve) } else { (b.m, b.curve) })
}

#[allow(clippy::too_many_arguments)]
fn write_taxonomy(
    staging: &Staging,
    prefix: &str,
    model: &archetypes::ArchetypalModel,
    export: &ModelExport,
    records: &[String],
    sectors: &[String],
    config: &TaxonomyConfig,
    format: NetworkArg,
) -> Result<taxonomy::ClusterAssignment> {
    let assignment = taxonomy::assign_clusters(&model.alpha, config)?;
    write_csv_rows(
        &staging.path(&format!("{prefix}clusters.csv"))?,
        &["record", "sector", "kind", "cluster"],
        records.iter().enumerate().map(|(i, r)| {
            let l = assignment.labels[i];
            vec![r.clone(), sectors[i].clone(), l.kind().into(), l.name()]
        }),
    )?;
    let network = taxonomy::build_network(&assignment, model, records, Some(sectors))?;
    for f in format.formats() {
        let ext = match f {
            NetworkFormat::Dot => "dot",
            NetworkFormat::Json => "json",
        };
        network.write(staging.path(&format!("{prefix}network.{ext}"))?, f)?;
    }
    let weights = taxonomy::sector_weights(&model.alpha, sectors)?;
    taxonomy::write_sector_weights(
        staging.path(&format!("{prefix}sector_weights.csv"))?,
        &weights,
        &export.archetype_names(),
    )?;
    Ok(assignment)
}

fn read_truth(path: &Path, records: &[String]) -> Result<Vec<bool>> {
    require_file(path, "truth file")?;
    let mut rdr = csv::Reader::from_path(path)?;
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::input("truth rows need record and outlier columns"));
        }
        let flag = match rec[1].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::input(format!("bad outlier flag '{other}'"))),
        };
        map.insert(rec[0].to_string(), flag);
    }
    records
        .iter()
        .map(|r| map.get(r).copied().ok_or_else(|| Error::input(format!("no truth label for record '{r}'"))))
        .collect()
}

pub fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let opts = args.solver.options()?;
    let input = Input::read(&args.input)?;
    let (records, columns) = input.labels();
    let truth = args.truth.as_deref().map(|p| read_truth(p, &records)).transpose()?;
    let staging = Staging::new(&args.out)?;
    let report = match &input {
        Input::Functional(ds) => detect::radab(ds, args.k, &opts)?,
        Input::Plain(d) => detect::radab_values(d.values(), args.k, &opts)?,
    };
    write_csv_rows(
        &staging.path("residuals.csv")?,
        &["record", "residual_norm", "flagged"],
        records
            .iter()
            .enumerate()
            .map(|(i, r)| vec![r.clone(), report.residual_norms[i].to_string(), u8::from(report.flags[i]).to_string()]),
    )?;
    let export = ModelExport::new(&report.model, &records, &columns)?;
    export.write_json(staging.path("model.json")?)?;
    let metrics = truth.as_ref().map(|t| detect::score(&report.flags, t)).transpose()?;
    let flagged: Vec<&String> = records.iter().zip(&report.flags).filter(|(_, &f)| f).map(|(r, _)| r).collect();
    let summary = json!({
        "fence": report.fence,
        "flagged": flagged,
        "members": export.members,
        "metrics": metrics,
    });
    std::fs::write(staging.path("report.json")?, serde_json::to_string_pretty(&summary)? + "\n")
        .map_err(|e| Error::io("report.json", e))?;
    staging.commit("detect", args, vec![args.solver.seed], summary)
}

pub fn cmd_taxonomy(args: &TaxonomyArgs) -> Result<()> {
    let config = TaxonomyConfig::new(args.threshold)?;
    require_file(&args.model, "model file")?;
    let export = ModelExport::read_json(&args.model)?;
    let model = export.to_model()?;
    let sector_map = match &args.sectors {
        Some(p) => {
            require_file(p, "sector map")?;
            finance::read_sectors(p)?
        }
        None => BTreeMap::new(),
    };
    let sectors: Vec<String> = export
        .record_labels
        .iter()
        .map(|r| sector_map.get(r).copied().unwrap_or(Sector::Unknown).code().to_string())
        .collect();
    let staging = Staging::new(&args.out)?;
    let assignment =
        write_taxonomy(&staging, "", &model, &export, &export.record_labels, &sectors, &config, args.format)?;
    let summary = json!({
        "threshold": args.threshold,
        "pure": assignment.pure.iter().map(Vec::len).sum::<usize>(),
        "pair": assignment.pairs.iter().map(|(_, m)| m.len()).sum::<usize>(),
        "mixture": assignment.mixtures.len(),
        "unassigned": assignment.unassigned.len(),
    });
    staging.commit("taxonomy", args, Vec::new(), summary)
}

/// Record labels and, per variable, one sampled curve per record.
type Samples = (Vec<String>, Vec<(String, Vec<SampledCurve>)>);

/// Reads `record,variable,t,value` rows. Records and variables keep their
/// order of first appearance; every record needs every variable.
fn read_long(path: &Path) -> Result<Samples> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::input(format!("long input needs a '{name}' column")))
    };
    let (ci, cv, ct, cy) = (col("record")?, col("variable")?, col("t")?, col("value")?);
    let mut records: Vec<String> = Vec::new();
    let mut variables: Vec<String> = Vec::new();
    let mut points: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::input(format!("line {}: bad number in column {}", line + 2, &headers[c])))
        };
        let (t, y) = (num(ct)?, num(cy)?);
        let pos = |list: &mut Vec<String>, key: &str| match list.iter().position(|x| x == key) {
            Some(p) => p,
            None => {
                list.push(key.to_string());
                list.len() - 1
            }
        };
        let i = pos(&mut records, &rec[ci]);
        let v = pos(&mut variables, &rec[cv]);
        let e = points.entry((v, i)).or_default();
        e.0.push(t);
        e.1.push(y);
    }
    if records.is_empty() {
        return Err(Error::input("input has no rows"));
    }
    let vars = variables
        .iter()
        .enumerate()
        .map(|(v, name)| {
            let curves = records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let (t, y) = points
                        .remove(&(v, i))
                        .ok_or_else(|| Error::input(format!("record '{r}' has no samples of variable '{name}'")))?;
                    Ok(SampledCurve::new(r.clone(), t, y))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((name.clone(), curves))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, vars))
}

fn read_wide(path: &Path, variable: &str) -> Result<Samples> {
    let table = DataMatrix::read_csv(path)?;
    let grid = table
        .col_labels()
        .iter()
        .map(|c| {
            c.trim_start_matches('t')
                .parse::<f64>()
                .map_err(|_| Error::input(format!("wide input column '{c}' is not a time value")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let curves = SampledCurve::from_grid(&grid, table.values(), table.row_labels())?;
    Ok((table.row_labels().to_vec(), vec![(variable.to_string(), curves)]))
}

pub fn cmd_smooth(args: &SmoothArgs) -> Result<()> {
    require_file(&args.input, "input file")?;
    let select = args.select_m.as_deref().map(parse_range).transpose()?;
    let (records, variables) = match args.layout {
        LayoutArg::Long => read_long(&args.input)?,
        LayoutArg::Wide => read_wide(&args.input, &args.variable)?,
    };
    let domain = match &args.domain {
        Some(d) => (d[0], d[1]),
        None => {
            let ts = variables.iter().flat_map(|(_, c)| c.iter().flat_map(|c| c.t.iter().copied()));
            let (lo, hi) = ts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
            (lo, hi)
        }
    };
    let family: BasisFamily = args.basis.into();
    let mut selection = Vec::new();
    let m = match select {
        None => args.m,
        Some(range) => {
            let mut chosen = 0;
            for (name, curves) in &variables {
                let s = fdbasis::select_basis_count(curves, family, domain, range.clone())?;
                selection.extend(s.curve.iter().map(|&(m, v)| (name.clone(), m, v)));
                chosen = chosen.max(s.m);
            }
            chosen
        }
    };
    let basis = BasisSystem::new(family, m, domain)?;
    let mut ds = FunctionalDataset::from_samples(&variables, basis, records)?;
    if args.standardize {
        ds = ds.standardize()?.0;
    }
    let staging = Staging::new(&args.out)?;
    ds.write_csv(staging.path("dataset.csv")?)?;
    if !selection.is_empty() {
        write_csv_rows(
            &staging.path("basis_selection.csv")?,
            &["variable", "m", "variance"],
            selection.iter().map(|(n, m, v)| vec![n.clone(), m.to_string(), v.to_string()]),
        )?;
    }
    let summary =
        json!({ "m": m, "domain": [domain.0, domain.1], "records": ds.n(), "variables": ds.variable_labels() });
    staging.commit("smooth", args, Vec::new(), summary)
}
