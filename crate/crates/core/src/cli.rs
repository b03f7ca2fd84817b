//! Command-line front end: simulate, fit, estimate, diagnose, recommend.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diagnostics::{
    fraction_of_max, general_response, impulse_impact, positivity_report, responses_to_csv, step_response,
    RESPONSE_CSV_HEADER,
};
use crate::error::Error;
use crate::estimands::{
    admissible_times, estimand_series, exposure_label, CoefficientFrame, Estimand, EstimandSeries,
    IntervalOptions, Method, SystemLayout, CSV_HEADER,
};
use crate::gformula::{mc_estimand, recommend_strategy, McConfig};
use crate::series::{csv_record, DagConfig, Schema, Series};
use crate::ssm::{
    fit_mle, infer_change_points, ChangePointOptions, FitOptions, FittedSsm, Regime, SegmentEstimate, SsmSpec,
};
use crate::synthgen::{generate, TruthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "nof1", version, about = "Dynamic causal effects for single-subject time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (a truth spec for `simulate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed` and `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Estimate by Monte Carlo instead of closed forms.
    #[arg(long, global = true)]
    mc: bool,
    /// Cross-check closed forms against Monte Carlo.
    #[arg(long, global = true)]
    verify: bool,
    /// Interval level in (0, 1).
    #[arg(long, global = true)]
    level: Option<f64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic series with known coefficients.
    Simulate,
    /// Fit the outcome and covariate state-space models.
    Fit,
    /// Evaluate causal estimands from fitted models.
    Estimate,
    /// Positivity and effect-trajectory outputs.
    Diagnose,
    /// Rank intervention strategies.
    Recommend,
}

/// Everything a run needs besides the subcommand. Relative paths resolve
/// against the directory holding the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Directory holding fitted models; defaults to the configured `out`.
    #[serde(default)]
    pub fits: Option<PathBuf>,
    #[serde(default)]
    pub estimands: Vec<EstimandRequest>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Coefficient draws behind closed-form intervals.
    #[serde(default = "default_interval_draws")]
    pub interval_draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub diagnose: Option<DiagnoseRequest>,
    #[serde(default)]
    pub recommend: Option<RecommendRequest>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub verbosity: Option<String>,
}

fn default_level() -> f64 {
    0.90
}

fn default_interval_draws() -> usize {
    2000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_ten() -> usize {
    10
}

fn default_fractions() -> Vec<f64> {
    vec![0.8, 0.95]
}

fn default_q() -> usize {
    6
}

fn default_active() -> usize {
    3
}

/// Regimes and change-point searches per response variable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub dag: Option<DagConfig>,
    /// Response column name -> coefficient name -> regime.
    #[serde(default)]
    pub regimes: BTreeMap<String, BTreeMap<String, Regime>>,
    #[serde(default)]
    pub change_points: Vec<ChangePointSearch>,
    #[serde(default)]
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangePointSearch {
    pub response: String,
    pub coefficient: String,
    #[serde(default)]
    pub options: ChangePointOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimandRequest {
    pub estimand: Estimand,
    pub exposure: String,
    /// Every admissible time when absent.
    #[serde(default)]
    pub times: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseRequest {
    pub exposure: String,
    pub t: usize,
    #[serde(default = "default_ten")]
    pub max_q: usize,
    #[serde(default = "default_ten")]
    pub max_duration: usize,
    #[serde(default)]
    pub strategies: Vec<Vec<u8>>,
    #[serde(default)]
    pub tail: usize,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub exposure: String,
    pub t: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_active")]
    pub max_active: usize,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Numerical(String),
    Verify(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Numerical(_) => EXIT_NUMERICAL,
            Failure::Verify(_) => EXIT_VERIFY,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) | Failure::Verify(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    if cli.verbose > 0 || cli.config.is_none() {
        init_logging(verbosity_level(cli.verbose));
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn verbosity_level(verbose: u8) -> log::LevelFilter {
    match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    }
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Some(l) = cli.level {
        if !(l > 0.0 && l < 1.0) {
            return Err(invalid(format!("--level {l} not in (0, 1)")));
        }
    }
    if let Command::Simulate = cli.command {
        return cmd_simulate(cli);
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| invalid("--config is required"))?;
    let ctx = Context::load(path, cli)?;
    match cli.command {
        Command::Simulate => unreachable!(),
        Command::Fit => cmd_fit(&ctx),
        Command::Estimate => cmd_estimate(&ctx, cli.mc, cli.verify),
        Command::Diagnose => cmd_diagnose(&ctx),
        Command::Recommend => cmd_recommend(&ctx),
    }
}

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(json))
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct Output {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: PathBuf, hash: String) -> Self {
        Output {
            dir,
            hash,
            written: Vec::new(),
        }
    }

    fn csv(&mut self, name: &str, body: &str) -> CliResult<()> {
        let text = format!("# config_hash={}\n{body}", self.hash);
        self.raw(name, text.as_bytes())
    }

    /// JSON object with a leading `config_hash` field.
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            config_hash: &'a str,
            #[serde(flatten)]
            value: &'a T,
        }
        let text = serde_json::to_string_pretty(&Tagged {
            config_hash: &self.hash,
            value,
        })
        .map_err(Error::from)?;
        self.raw(name, format!("{text}\n").as_bytes())
    }

    fn raw(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(|e| invalid(format!("writing {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    fn report(&self) {
        for p in &self.written {
            println!("{}", p.display());
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("parsing {what} {}: {e}", path.display())))
}

fn cmd_simulate(cli: &Cli) -> CliResult<()> {
    let mut spec = match &cli.config {
        Some(p) => read_json::<TruthSpec>(p, "truth spec")?,
        None => TruthSpec::demo(0),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let hash = config_hash(&spec);
    let syn = generate(&spec)?;
    let mut out = Output::new(cli.out.clone().unwrap_or_else(default_out), hash);
    out.csv("series.csv", &syn.series.to_csv_string())?;
    out.json("schema.json", syn.series.schema())?;
    #[derive(Serialize)]
    struct Truth<'a> {
        spec: &'a TruthSpec,
        coefficients: &'a CoefficientFrame,
        propensities: &'a [Vec<f64>],
        signal_to_noise: f64,
    }
    out.json(
        "truth.json",
        &Truth {
            spec: &spec,
            coefficients: &syn.truth,
            propensities: &syn.propensities,
            signal_to_noise: syn.signal_to_noise(),
        },
    )?;
    out.report();
    Ok(())
}

struct Context {
    config: RunConfig,
    schema: Schema,
    series: Series,
    model: ModelSpec,
    dag: DagConfig,
    layout: SystemLayout,
    out: PathBuf,
    fits_dir: PathBuf,
    hash: String,
}

impl Context {
    fn load(path: &Path, cli: &Cli) -> CliResult<Context> {
        let mut config: RunConfig = read_json(path, "run config")?;
        let level = match (&config.verbosity, cli.verbose) {
            (Some(v), 0) => v
                .parse::<log::LevelFilter>()
                .map_err(|_| invalid(format!("unknown verbosity `{v}`")))?,
            _ => verbosity_level(cli.verbose),
        };
        init_logging(level);
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        if let Some(l) = cli.level {
            config.level = l;
        }
        config.mc.seed = config.seed;
        config.mc.level = config.level;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let out = match &cli.out {
            Some(o) => o.clone(),
            None => resolve(&config.out),
        };
        let fits_dir = resolve(config.fits.as_deref().unwrap_or(&config.out));

        let schema = Schema::from_json_file(resolve(&config.schema))
            .map_err(|e| invalid(format!("schema {}: {e}", config.schema.display())))?;
        let input = resolve(&config.input);
        if !input.exists() {
            return Err(invalid(format!("input {} does not exist", input.display())));
        }
        let series = Series::load_csv(&input, &schema)?;
        let model: ModelSpec = match &config.model {
            Some(p) => read_json(&resolve(p), "model spec")?,
            None => ModelSpec::default(),
        };
        let dag = model
            .dag
            .clone()
            .unwrap_or_else(|| DagConfig::standard(schema.exposures.len(), schema.covariates.len()));
        dag.validate(schema.exposures.len(), schema.covariates.len())?;
        let layout = SystemLayout::from_dag(&dag, &schema)?;

        for r in &config.estimands {
            r.estimand.validate()?;
            exposure_index(&schema, &r.exposure)?;
        }
        if let Some(d) = &config.diagnose {
            exposure_index(&schema, &d.exposure)?;
        }
        if let Some(r) = &config.recommend {
            exposure_index(&schema, &r.exposure)?;
        }
        if config.interval_draws == 0 {
            return Err(invalid("interval_draws must be positive"));
        }
        config.mc.validate()?;

        // The output location does not affect results.
        let mut hashed = config.clone();
        hashed.out = PathBuf::new();
        hashed.verbosity = None;
        let hash = config_hash(&(&hashed, &model));
        Ok(Context {
            config,
            schema,
            series,
            model,
            dag,
            layout,
            out,
            fits_dir,
            hash,
        })
    }

    fn output(&self) -> Output {
        Output::new(self.out.clone(), self.hash.clone())
    }

    fn interval_options(&self) -> IntervalOptions {
        IntervalOptions {
            level: self.config.level,
            draws: self.config.interval_draws,
            seed: self.config.seed,
            method: Method::Auto,
        }
    }

    fn response_names(&self) -> Vec<String> {
        (0..self.layout.n_models())
            .map(|m| self.schema.name_of(self.layout.response(m)).to_string())
            .collect()
    }

    fn frame(&self) -> CliResult<CoefficientFrame> {
        let names = self.response_names();
        let mut fits = Vec::with_capacity(names.len());
        for name in &names {
            let path = self.fits_dir.join(fit_file(name));
            let file: FitFile = read_json(&path, "fitted model")?;
            fits.push(file.fit);
        }
        let (outcome, covariates) = fits.split_first().expect("outcome model");
        Ok(CoefficientFrame::from_fits(self.layout.clone(), outcome, covariates)?)
    }
}

fn exposure_index(schema: &Schema, name: &str) -> CliResult<usize> {
    schema
        .exposure_index(name)
        .ok_or_else(|| invalid(format!("`{name}` is not a declared exposure")))
}

fn fit_file(response: &str) -> String {
    format!("fit_{response}.json")
}

#[derive(Debug, Serialize, Deserialize)]
struct FitFile {
    fit: FittedSsm,
}

#[derive(Debug, Serialize)]
struct ChangePointFile<'a> {
    response: &'a str,
    coefficient: &'a str,
    change_points: &'a [usize],
    bic: f64,
    candidates_evaluated: usize,
    segments: &'a [SegmentEstimate],
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub model: String,
    pub coefficient: String,
    pub regime: String,
    /// `(k)` for the k-th segment of a periodic-stable coefficient.
    pub segment: String,
    pub start: usize,
    pub end: usize,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub significant: bool,
}

/// Static and periodic-stable coefficients by segment; random-walk
/// coefficients at the last fitted time.
pub fn coefficient_table(model: &str, fit: &FittedSsm, level: f64) -> Vec<TableRow> {
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let mut rows = Vec::new();
    for track in &fit.coefficients {
        let at = |t: usize| {
            let i = t - fit.first_time;
            (track.mean[i], track.se[i])
        };
        let mut push = |segment: String, start: usize, end: usize, (estimate, se): (f64, f64)| {
            let (lower, upper) = (estimate - z * se, estimate + z * se);
            rows.push(TableRow {
                model: model.to_string(),
                coefficient: track.name.clone(),
                regime: track.regime.label().to_string(),
                segment,
                start,
                end,
                estimate,
                se,
                lower,
                upper,
                significant: lower > 0.0 || upper < 0.0,
            });
        };
        match &track.regime {
            Regime::PeriodicStable { change_points } if !change_points.is_empty() => {
                let mut start = fit.first_time;
                for (k, end) in change_points.iter().copied().chain([fit.last_time]).enumerate() {
                    push(format!("({})", k + 1), start, end, at(end));
                    start = end + 1;
                }
            }
            Regime::RandomWalk => push(String::new(), fit.last_time, fit.last_time, at(fit.last_time)),
            _ => push(String::new(), fit.first_time, fit.last_time, at(fit.last_time)),
        }
    }
    rows
}

fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("model,coefficient,regime,segment,start,end,estimate,se,lower,upper,significant\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.model, r.coefficient, r.regime, r.segment, r.start, r.end, r.estimate, r.se, r.lower, r.upper, r.significant
        );
    }
    s
}

fn table_text(rows: &[TableRow], level: f64) -> String {
    let pct = format!("{}%", level * 100.0);
    let mut s = format!(
        "{:<8} {:<16} {:>10} {:>9} {:>22}  {:<9}\n",
        "Model",
        "Coefficient",
        "Estimate",
        "SE",
        format!("{pct} interval"),
        "Times"
    );
    for r in rows {
        let name = if r.segment.is_empty() {
            r.coefficient.clone()
        } else {
            format!("{} {}", r.coefficient, r.segment)
        };
        let star = if r.significant { "*" } else { "" };
        let _ = writeln!(
            s,
            "{:<8} {:<16} {:>10.4} {:>9.4} {:>22}  {}-{}",
            r.model,
            format!("{name}{star}"),
            r.estimate,
            r.se,
            format!("({:.4}, {:.4})", r.lower, r.upper),
            r.start,
            r.end
        );
    }
    let _ = writeln!(s, "* interval excludes zero");
    s
}

fn cmd_fit(ctx: &Context) -> CliResult<()> {
    let names = ctx.response_names();
    for key in ctx.model.regimes.keys() {
        if !names.contains(key) {
            return Err(invalid(format!("regimes given for unknown response `{key}`")));
        }
    }
    let mut out = ctx.output();
    let mut rows = Vec::new();
    for (m, name) in names.iter().enumerate() {
        let mut spec = SsmSpec::from_dag(&ctx.dag, ctx.layout.response(m), &ctx.schema)?;
        if let Some(regimes) = ctx.model.regimes.get(name) {
            for (coef, regime) in regimes {
                spec.set_regime(coef, regime.clone())?;
            }
        }
        let searches: Vec<&ChangePointSearch> = ctx.model.change_points.iter().filter(|c| &c.response == name).collect();
        let fit = match searches.as_slice() {
            [] => fit_mle(&spec, &ctx.series, &ctx.model.fit)?,
            [search] => {
                if !matches!(spec.regimes.get(spec.index_of(&search.coefficient).unwrap_or(usize::MAX)), Some(Regime::PeriodicStable { .. })) {
                    spec.set_regime(&search.coefficient, Regime::PeriodicStable { change_points: vec![] })?;
                }
                let res = infer_change_points(&spec, &ctx.series, &search.coefficient, &search.options)?;
                log::info!("{name}: change points {:?} for {}", res.change_points, search.coefficient);
                out.json(
                    &format!("changepoints_{name}.json"),
                    &ChangePointFile {
                        response: name,
                        coefficient: &res.coefficient,
                        change_points: &res.change_points,
                        bic: res.bic,
                        candidates_evaluated: res.candidates_evaluated,
                        segments: &res.segments,
                    },
                )?;
                res.fitted
            }
            _ => return Err(invalid(format!("more than one change-point search for `{name}`"))),
        };
        if !fit.converged {
            log::warn!("{name}: optimizer did not converge");
        }
        rows.extend(coefficient_table(name, &fit, ctx.config.level));
        out.json(&fit_file(name), &FitFile { fit })?;
    }
    out.csv("coefficients.csv", &table_csv(&rows))?;
    let text = format!("# config_hash={}\n{}", ctx.hash, table_text(&rows, ctx.config.level));
    out.raw("coefficients.txt", text.as_bytes())?;
    out.report();
    Ok(())
}

#[derive(Debug, Serialize)]
struct VerifyRow {
    t: usize,
    name: String,
    closed: f64,
    mc: f64,
    mc_se: f64,
    passed: bool,
}

fn cmd_estimate(ctx: &Context, use_mc: bool, verify: bool) -> CliResult<()> {
    if ctx.config.estimands.is_empty() {
        return Err(invalid("no estimand requests in the configuration"));
    }
    let frame = ctx.frame()?;
    let opts = ctx.interval_options();
    let mut all = Vec::new();
    let mut checks = Vec::new();
    for req in &ctx.config.estimands {
        let e = exposure_index(&ctx.schema, &req.exposure)?;
        let times = match &req.times {
            Some(ts) => ts.clone(),
            None => admissible_times(&frame, &req.estimand, e),
        };
        if times.is_empty() {
            return Err(invalid(format!("{} has no admissible times", req.estimand.label())));
        }
        let closed = estimand_series(&frame, &req.estimand, e, Some(&times), &opts)?;
        let mc = if use_mc || verify {
            Some(
                times
                    .iter()
                    .map(|&t| mc_estimand(&frame, &ctx.series, e, &req.estimand, t, &ctx.config.mc))
                    .collect::<crate::error::Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        if verify {
            let mc = mc.as_ref().expect("computed when verifying");
            for (p, m) in closed.points.iter().zip(mc) {
                let tol = (3.0 * m.mc_se).max(1e-9 * (1.0 + p.estimate.abs()));
                checks.push(VerifyRow {
                    t: p.t,
                    name: closed.csv_name(),
                    closed: p.estimate,
                    mc: m.estimate,
                    mc_se: m.mc_se,
                    passed: (p.estimate - m.estimate).abs() <= tol,
                });
            }
        }
        let series = match (use_mc, mc) {
            (true, Some(mc)) => EstimandSeries {
                name: req.estimand.label(),
                estimand: req.estimand.clone(),
                exposure: exposure_label(&frame.layout, e),
                q: req.estimand.q(),
                level: ctx.config.level,
                draws: ctx.config.mc.draws,
                points: mc.iter().map(|m| m.point()).collect(),
            },
            _ => closed,
        };
        all.push(series);
    }
    let mut out = ctx.output();
    let mut csv = format!("{CSV_HEADER}\n");
    for s in &all {
        s.write_csv_rows(&mut csv);
    }
    out.csv("estimands.csv", &csv)?;
    #[derive(Serialize)]
    struct Estimates<'a> {
        method: &'a str,
        series: &'a [EstimandSeries],
    }
    out.json(
        "estimands.json",
        &Estimates {
            method: if use_mc { "monte_carlo" } else { "closed_form" },
            series: &all,
        },
    )?;
    let mut failed = 0;
    if verify {
        let mut s = String::from("t,name,closed,mc,mc_se,passed\n");
        for c in &checks {
            s.push_str(&csv_record(&[
                c.t.to_string(),
                c.name.clone(),
                c.closed.to_string(),
                c.mc.to_string(),
                c.mc_se.to_string(),
                c.passed.to_string(),
            ]));
        }
        out.csv("verify.csv", &s)?;
        failed = checks.iter().filter(|c| !c.passed).count();
    }
    out.report();
    if failed > 0 {
        let worst = checks
            .iter()
            .map(|c| (c.closed - c.mc).abs() / c.mc_se.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        return Err(Failure::Verify(format!(
            "{failed} of {} closed-form values differ from Monte Carlo by more than 3 MC standard errors (worst {worst:.2} SE)",
            checks.len()
        )));
    }
    Ok(())
}

fn cmd_diagnose(ctx: &Context) -> CliResult<()> {
    let req = ctx
        .config
        .diagnose
        .as_ref()
        .ok_or_else(|| invalid("no `diagnose` section in the configuration"))?;
    let e = exposure_index(&ctx.schema, &req.exposure)?;
    let frame = ctx.frame()?;
    let opts = ctx.interval_options();
    let mut out = ctx.output();

    let positivity = positivity_report(&ctx.series, e, req.max_duration)?;
    out.csv("positivity.csv", &positivity.to_csv_string())?;
    out.json("positivity.json", &positivity)?;

    let impulse = impulse_impact(&frame, e, req.t, req.max_q, &opts)?;
    let step = step_response(&frame, e, req.t, req.max_q, &opts)?;
    let mut s = format!("{RESPONSE_CSV_HEADER}\n");
    responses_to_csv("impulse", &impulse, &mut s);
    out.csv("impulse.csv", &s)?;
    let mut s = format!("{RESPONSE_CSV_HEADER}\n");
    responses_to_csv("step", &step, &mut s);
    out.csv("step.csv", &s)?;

    if !req.strategies.is_empty() {
        let general = general_response(&frame, e, req.t, &req.strategies, req.tail, &opts)?;
        let mut s = format!("{RESPONSE_CSV_HEADER}\n");
        for g in &general {
            responses_to_csv(&crate::diagnostics::pattern_string(&g.strategy), &g.points, &mut s);
        }
        out.csv("general.csv", &s)?;
    }

    let mut s = String::from("series,fraction,q\n");
    for (label, pts) in [("impulse", &impulse), ("step", &step)] {
        for (f, q) in fraction_of_max(pts, &req.fractions) {
            let q = q.map(|q| q.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{label},{f},{q}");
        }
    }
    out.csv("fraction_of_max.csv", &s)?;
    out.report();
    Ok(())
}

fn cmd_recommend(ctx: &Context) -> CliResult<()> {
    let req = ctx
        .config
        .recommend
        .as_ref()
        .ok_or_else(|| invalid("no `recommend` section in the configuration"))?;
    let e = exposure_index(&ctx.schema, &req.exposure)?;
    let frame = ctx.frame()?;
    let positivity = positivity_report(&ctx.series, e, req.q + 1)?;
    let rec = recommend_strategy(&frame, &ctx.series, e, req.t, req.q, req.max_active, &positivity, &ctx.config.mc)?;
    let mut out = ctx.output();
    let mut s = String::from("rank,pattern,active,estimate,lower,upper,mc_se,observed\n");
    for r in &rec.ranked {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.rank, r.pattern, r.active, r.estimate, r.lower, r.upper, r.mc_se, r.observed
        );
    }
    out.csv("recommend.csv", &s)?;
    out.json("recommend.json", &rec)?;
    out.report();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&TruthSpec::demo(1));
        assert_eq!(a, config_hash(&TruthSpec::demo(1)));
        assert_ne!(a, config_hash(&TruthSpec::demo(2)));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn unknown_config_fields_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"input":"a","schema":"b","bogus":1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn bad_level_is_validation_error() {
        assert_eq!(run(["nof1", "simulate", "--level", "1.5"]), EXIT_VALIDATION);
    }
}
