//! Command-line front end.
//!
//! Exit codes: 0 success, 1 error, 2 criterion not met, 3 no certified
//! periodic solution, 4 positivity breach.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    check_attractivity, check_corollary_31, check_corollary_33, check_hypotheses_with,
    convergence_experiment, delta_of_x, estimate_permanence, AttractivityReport, Corollary33Report,
    CorollaryCheck, HypothesisReport, PermanenceEstimate,
};
use crate::error::{Error, Result};
use crate::integrator::{integrate, HistoryFunction, SolverConfig};
use crate::linalg::fundamental_matrix;
use crate::model::{load_model_file, SystemModel, DEFAULT_QUAD_NODES, VERIFICATION_GRID};
use crate::periodic::{
    dde_residual, default_initial_profile, delays_are_period_multiples, find_equilibrium,
    find_periodic_fixed_point, find_periodic_poincare, lemma52_bound, FixedPointDiagnostics,
    FixedPointOptions, PeriodicProfile, PoincareDiagnostics,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_MET: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_BREACH: i32 = 4;

/// `dde_residual` below this certifies a periodic profile.
pub const CERTIFICATE_TOL: f64 = 1e-5;
/// A certified profile must stay above this (it is not the trivial solution).
pub const POSITIVITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "perisolve",
    version,
    about = "Periodic solutions of delayed patch-structured population systems"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalFlags {
    /// Solver steps per period (also the profile grid).
    #[arg(long, global = true, default_value_t = 256)]
    pub grid: usize,
    /// Convergence tolerance for iterative routes.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for reports, CSV files and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads for sweeps and experiments (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Trapezoid nodes for distributed delays.
    #[arg(long, global = true, default_value_t = DEFAULT_QUAD_NODES)]
    pub quad_nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedPoint,
    Poincare,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAnalysis {
    Attract,
    Check,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify the standing hypotheses and applicable corollaries.
    Check {
        model: String,
        /// Also estimate permanence from seeded random histories.
        #[arg(long)]
        permanence: bool,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        #[arg(long, default_value_t = 20)]
        tail: usize,
    },
    /// Compute a positive periodic solution.
    Periodic {
        model: String,
        #[arg(long, value_enum, default_value_t = Method::FixedPoint)]
        method: Method,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long, default_value_t = 2000)]
        max_periods: usize,
    },
    /// Integrate from an initial history.
    Simulate {
        model: String,
        /// `const:<v>[,<v>...]` or `csv:<path>` with columns t,x1..xn on [-tauMax, 0].
        #[arg(long, default_value = "const:1")]
        history: String,
        #[arg(long, default_value_t = 50)]
        periods: usize,
        /// Resample the output at this spacing instead of writing every knot.
        #[arg(long)]
        sample: Option<f64>,
    },
    /// Check the global-attractivity criterion.
    Attract {
        model: String,
        /// `auto` (H5 witness) or a comma-separated vector.
        #[arg(long, default_value = "auto")]
        v: String,
        /// Confirm by simulating from two constant histories for K periods.
        #[arg(long)]
        confirm_periods: Option<usize>,
    },
    /// Tabulate δ(x) = max_{y>=m} |G_x(y)| against e^{-x}.
    Delta {
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        m: f64,
        #[arg(long, default_value_t = 50.0)]
        y_max: f64,
    },
    /// Positive equilibrium of an autonomous model.
    Equilibrium { model: String },
    /// Re-run an analysis over values of one named parameter.
    Sweep {
        model: String,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value_t = SweepAnalysis::Attract)]
        analysis: SweepAnalysis,
    },
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub command: String,
    pub model_path: Option<String>,
    pub config: SolverConfig,
    pub tol: f64,
    pub seed: u64,
    pub tool_version: &'static str,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
}

/// Model path as given, else relative to `PERISOLVE_FIXTURES`, else relative
/// to the bundled fixtures directory.
pub fn resolve_model_path(arg: &str) -> PathBuf {
    let direct = PathBuf::from(arg);
    if direct.exists() {
        return direct;
    }
    let name = direct
        .file_name()
        .map(PathBuf::from)
        .unwrap_or_else(|| direct.clone());
    let dirs = [
        std::env::var_os("PERISOLVE_FIXTURES").map(PathBuf::from),
        Some(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")),
    ];
    for dir in dirs.into_iter().flatten() {
        for candidate in [dir.join(&direct), dir.join(&name)] {
            if candidate.exists() {
                return candidate;
            }
        }
    }
    direct
}

struct Outcome {
    code: i32,
    /// Report printed to stdout and saved as `<command>.<ext>`.
    report: String,
    /// Extra artifacts `(file name, contents)`.
    files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(code: i32, report: String) -> Self {
        Self {
            code,
            report,
            files: Vec::new(),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    if g.jobs > 0 {
        // ignore the error when a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(g.jobs)
            .build_global();
    }
    let config = SolverConfig {
        steps_per_period: g.grid,
        quad_nodes: g.quad_nodes,
        ..SolverConfig::default()
    };
    config.validate()?;
    let start = Instant::now();
    let (name, model_arg) = match &cli.command {
        Command::Check { model, .. } => ("check", Some(model)),
        Command::Periodic { model, .. } => ("periodic", Some(model)),
        Command::Simulate { model, .. } => ("simulate", Some(model)),
        Command::Attract { model, .. } => ("attract", Some(model)),
        Command::Delta { .. } => ("delta", None),
        Command::Equilibrium { model } => ("equilibrium", Some(model)),
        Command::Sweep { model, .. } => ("sweep", Some(model)),
    };
    let model_path = model_arg.map(|m| resolve_model_path(m));
    if let Some(p) = model_path.as_ref().filter(|p| !p.exists()) {
        return Err(Error::InvalidInput(format!(
            "model file not found: {}",
            p.display()
        )));
    }
    let model = model_path.as_ref().map(load_model_file).transpose()?;
    let outcome = match (&cli.command, &model) {
        (
            Command::Check {
                permanence,
                trials,
                horizon,
                tail,
                ..
            },
            Some(m),
        ) => {
            let perm = permanence.then_some((*trials, *horizon, *tail));
            cmd_check(m, g, &config, perm)?
        }
        (
            Command::Periodic {
                method,
                max_iter,
                max_periods,
                ..
            },
            Some(m),
        ) => cmd_periodic(m, g, &config, *method, *max_iter, *max_periods)?,
        (
            Command::Simulate {
                history,
                periods,
                sample,
                ..
            },
            Some(m),
        ) => match cmd_simulate(m, &config, history, *periods, *sample) {
            Err(Error::PositivityBreach {
                t,
                component,
                value,
            }) => {
                eprintln!("error: positivity breach at t = {t}: x{component} = {value:e}");
                return Ok(EXIT_BREACH);
            }
            other => other?,
        },
        (
            Command::Attract {
                v, confirm_periods, ..
            },
            Some(m),
        ) => cmd_attract(m, g, &config, v, *confirm_periods)?,
        (Command::Delta { x, m, y_max }, _) => cmd_delta(x, *m, *y_max, g.format)?,
        (Command::Equilibrium { .. }, Some(m)) => cmd_equilibrium(m, &config)?,
        (
            Command::Sweep {
                param,
                values,
                analysis,
                ..
            },
            Some(m),
        ) => cmd_sweep(m, g, param, values, *analysis)?,
        _ => unreachable!("every model command loads its model"),
    };
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let mut stdout = std::io::stdout().lock();
    let newline = if outcome.report.ends_with('\n') {
        ""
    } else {
        "\n"
    };
    let _ = write!(stdout, "{}{newline}", outcome.report).and_then(|_| stdout.flush());
    drop(stdout);
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir)?;
        let ext = match g.format {
            Format::Json => "json",
            Format::Csv => "csv",
        };
        let mut outputs = Vec::new();
        let report_name = format!("{name}.{ext}");
        fs::write(dir.join(&report_name), &outcome.report)?;
        outputs.push(report_name);
        for (file, bytes) in &outcome.files {
            fs::write(dir.join(file), bytes)?;
            outputs.push(file.clone());
        }
        let manifest = RunManifest {
            command: name.to_string(),
            model_path: model_path.map(|p| p.display().to_string()),
            config,
            tol: g.tol,
            seed: g.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_time_secs: start.elapsed().as_secs_f64(),
            outputs,
        };
        fs::write(dir.join("manifest.json"), to_json(&manifest)?)?;
    }
    Ok(outcome.code)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct CheckReport<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    hypotheses: HypothesisReport,
    all_satisfied: bool,
    weak: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    scalar_existence: Option<CorollaryCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    planar_existence: Option<Corollary33Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permanence: Option<PermanenceEstimate>,
}

fn cmd_check(
    model: &SystemModel,
    g: &GlobalFlags,
    config: &SolverConfig,
    permanence: Option<(usize, usize, usize)>,
) -> Result<Outcome> {
    let hypotheses = check_hypotheses_with(model, VERIFICATION_GRID, g.quad_nodes)?;
    let scalar_existence = (model.n == 1)
        .then(|| check_corollary_31(model))
        .transpose()?;
    let planar_existence = if model.n == 2 {
        match check_corollary_33(model) {
            Ok(r) => Some(r),
            Err(Error::InvalidInput(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let permanence = permanence
        .map(|(trials, horizon, tail)| {
            estimate_permanence(model, trials, horizon, tail, g.seed, config)
        })
        .transpose()?;
    let all = hypotheses.all_satisfied();
    if hypotheses.any_weak() {
        eprintln!("note: some hypotheses hold only in the weak (non-strict) sense");
    }
    let code = if all { EXIT_OK } else { EXIT_NOT_MET };
    let report = match g.format {
        Format::Json => to_json(&CheckReport {
            model: model.name.as_deref(),
            all_satisfied: all,
            weak: hypotheses.any_weak(),
            hypotheses,
            scalar_existence,
            planar_existence,
            permanence,
        })?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = hypotheses
                .entries()
                .iter()
                .map(|(name, e)| {
                    vec![
                        name.to_string(),
                        serde_json::to_value(e.status)
                            .ok()
                            .and_then(|v| v.as_str().map(String::from))
                            .unwrap_or_default(),
                        fmt_opt(e.margin),
                        fmt_opt(e.worst_t),
                    ]
                })
                .collect();
            csv_text(&["hypothesis", "status", "margin", "worst_t"], &rows)?
        }
    };
    Ok(Outcome::new(code, report))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct ProfileSummary {
    min: f64,
    max: Vec<f64>,
    periodicity_gap: f64,
    dde_residual: f64,
}

fn summarize(
    model: &SystemModel,
    phi: &PeriodicProfile,
    config: &SolverConfig,
) -> Result<ProfileSummary> {
    let dde = if phi.min() > 0.0 {
        dde_residual(model, phi, config)?
    } else {
        f64::INFINITY
    };
    Ok(ProfileSummary {
        min: phi.min(),
        max: (0..phi.n()).map(|i| phi.component_max(i)).collect(),
        periodicity_gap: phi.periodicity_gap(),
        dde_residual: dde,
    })
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct BoundCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<Vec<f64>>,
    /// The bound is derived for delays that are multiples of the period.
    delays_are_multiples: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    respected: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

/// Tightest a-priori bound over the available witness vectors.
fn bound_check(
    model: &SystemModel,
    phi: &PeriodicProfile,
    hyp: &HypothesisReport,
) -> Result<BoundCheck> {
    let ones = vec![1.0; model.n];
    let mut bound: Option<Vec<f64>> = None;
    let mut notes = Vec::new();
    for v in [hyp.witness_v.as_ref(), hyp.witness_u.as_ref(), Some(&ones)]
        .into_iter()
        .flatten()
    {
        match lemma52_bound(model, v) {
            Ok(b) => {
                bound = Some(match bound {
                    Some(old) => old.iter().zip(&b).map(|(x, y)| x.min(*y)).collect(),
                    None => b,
                })
            }
            Err(Error::Hypothesis(msg)) => notes.push(msg),
            Err(e) => return Err(e),
        }
    }
    if bound.is_some() {
        notes.clear();
    }
    let respected = bound
        .as_ref()
        .map(|b| (0..model.n).all(|i| phi.component_max(i) <= b[i] + 1e-9));
    Ok(BoundCheck {
        bound,
        delays_are_multiples: delays_are_period_multiples(model)?,
        respected,
        notes,
    })
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct PeriodicReport<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    method: Method,
    h5_satisfied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed_point: Option<(FixedPointDiagnostics, ProfileSummary)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    poincare: Option<(PoincareDiagnostics, ProfileSummary)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    poincare_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_difference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    a_priori_bound: Option<BoundCheck>,
    certified: bool,
}

fn profile_csv(phi: &PeriodicProfile) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    phi.write_csv(&mut buf)?;
    Ok(buf)
}

fn cmd_periodic(
    model: &SystemModel,
    g: &GlobalFlags,
    config: &SolverConfig,
    method: Method,
    max_iter: usize,
    max_periods: usize,
) -> Result<Outcome> {
    let hyp = check_hypotheses_with(model, VERIFICATION_GRID, g.quad_nodes)?;
    let h5 = hyp.h5.status.holds();
    if !h5 {
        eprintln!("warning: H5 fails; no periodic solution is guaranteed");
    }
    let witness = hyp.witness_v.clone();
    let init = default_initial_profile(model, config.steps_per_period, witness.as_deref());
    let mut files = Vec::new();
    let mut certified = true;
    let mut fixed = None;
    let mut poincare = None;
    let mut poincare_error = None;
    if matches!(method, Method::FixedPoint | Method::Both) {
        let cache = fundamental_matrix(model, config)?;
        let options = FixedPointOptions {
            max_iter,
            tol: g.tol,
            ..FixedPointOptions::default()
        };
        let (phi, diag) = find_periodic_fixed_point(model, &cache, init.clone(), options, config)?;
        certified &=
            diag.converged && diag.dde_residual <= CERTIFICATE_TOL && phi.min() > POSITIVITY_FLOOR;
        files.push(("profile_fixed_point.csv".to_string(), profile_csv(&phi)?));
        let summary = summarize(model, &phi, config)?;
        fixed = Some((phi, diag, summary));
    }
    if matches!(method, Method::Poincare | Method::Both) {
        let hist = init.to_history(model, config);
        match find_periodic_poincare(model, hist, config, max_periods, g.tol) {
            Ok((phi, diag)) => {
                let summary = summarize(model, &phi, config)?;
                certified &=
                    summary.dde_residual <= CERTIFICATE_TOL && phi.min() > POSITIVITY_FLOOR;
                files.push(("profile_poincare.csv".to_string(), profile_csv(&phi)?));
                poincare = Some((phi, diag, summary));
            }
            Err(Error::NonConvergence(msg)) => {
                certified = false;
                poincare_error = Some(msg);
            }
            Err(e) => return Err(e),
        }
    }
    let cross_difference = match (&fixed, &poincare) {
        (Some(a), Some(b)) => Some(a.0.sup_distance(&b.0)),
        _ => None,
    };
    let best = fixed
        .as_ref()
        .map(|f| &f.0)
        .or(poincare.as_ref().map(|p| &p.0));
    let a_priori_bound = match (best, model.all_ricker()) {
        (Some(phi), true) => Some(bound_check(model, phi, &hyp)?),
        _ => None,
    };
    let report = PeriodicReport {
        model: model.name.as_deref(),
        method,
        h5_satisfied: h5,
        fixed_point: fixed.map(|(_, d, s)| (d, s)),
        poincare: poincare.map(|(_, d, s)| (d, s)),
        poincare_error,
        cross_difference,
        a_priori_bound,
        certified,
    };
    let text = match g.format {
        Format::Json => to_json(&report)?,
        Format::Csv => String::from_utf8_lossy(&files[0].1).into_owned(),
    };
    let mut out = Outcome::new(
        if certified {
            EXIT_OK
        } else {
            EXIT_NOT_CONVERGED
        },
        text,
    );
    out.files = files;
    Ok(out)
}

/// Piecewise-linear history from CSV rows `t,x1..xn`.
fn csv_history(model: &SystemModel, config: &SolverConfig, path: &Path) -> Result<HistoryFunction> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidInput(format!("history CSV: {e}")))?;
        if row.len() != model.n + 1 {
            return Err(Error::InvalidInput(format!(
                "history CSV rows need {} columns",
                model.n + 1
            )));
        }
        rows.push(row);
    }
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let Some(first) = rows.first() else {
        return Err(Error::InvalidInput("history CSV is empty".into()));
    };
    let last = rows.last().expect("non-empty");
    if first[0] > -model.tau_max + 1e-12 || (last[0]).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "history CSV must cover [-{}, 0]",
            model.tau_max
        )));
    }
    Ok(HistoryFunction::initial(model, config, |t, v, d| {
        let t = t.max(rows[0][0]).min(0.0);
        let k = rows.partition_point(|r| r[0] <= t).clamp(1, rows.len() - 1);
        let (a, b) = (&rows[k - 1], &rows[k]);
        let w = if b[0] > a[0] {
            (t - a[0]) / (b[0] - a[0])
        } else {
            0.0
        };
        for i in 0..v.len() {
            v[i] = a[i + 1] + w * (b[i + 1] - a[i + 1]);
            d[i] = if b[0] > a[0] {
                (b[i + 1] - a[i + 1]) / (b[0] - a[0])
            } else {
                0.0
            };
        }
    }))
}

fn parse_vector(s: &str, n: usize) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidInput(format!("bad vector '{s}': {e}")))?;
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        l if l == n => Ok(v),
        l => Err(Error::InvalidInput(format!(
            "vector has {l} entries, expected {n}"
        ))),
    }
}

fn cmd_simulate(
    model: &SystemModel,
    config: &SolverConfig,
    history: &str,
    periods: usize,
    sample: Option<f64>,
) -> Result<Outcome> {
    let initial = if let Some(v) = history.strip_prefix("const:") {
        HistoryFunction::constant(model, config, &parse_vector(v, model.n)?)
    } else if let Some(p) = history.strip_prefix("csv:") {
        csv_history(model, config, Path::new(p))?
    } else {
        return Err(Error::InvalidInput(format!(
            "history must be const:<v> or csv:<path>, got '{history}'"
        )));
    };
    let traj = integrate(model, initial, periods as f64 * model.omega, config)?;
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    let mut buf = Vec::new();
    match sample {
        Some(dt) => traj.write_sampled_csv(dt, &mut buf)?,
        None => traj.write_csv(&mut buf)?,
    }
    let mut out = Outcome::new(EXIT_OK, String::from_utf8_lossy(&buf).into_owned());
    out.files.push(("trajectory.csv".into(), buf));
    Ok(out)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Confirmation {
    periods: usize,
    low_start: f64,
    high_start: f64,
    tail_difference: f64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct AttractReport<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    v_source: &'static str,
    attractivity: AttractivityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    confirmation: Option<Confirmation>,
}

fn cmd_attract(
    model: &SystemModel,
    g: &GlobalFlags,
    config: &SolverConfig,
    v_arg: &str,
    confirm: Option<usize>,
) -> Result<Outcome> {
    if !model.all_ricker() {
        return Err(Error::Hypothesis(
            "the attractivity criterion needs Ricker nonlinearities".into(),
        ));
    }
    let (v, v_source) = if v_arg == "auto" {
        let hyp = check_hypotheses_with(model, VERIFICATION_GRID, g.quad_nodes)?;
        match hyp.witness_v {
            Some(w) => (w, "h5-witness"),
            None => {
                eprintln!("warning: no H5 witness; using v = 1");
                (vec![1.0; model.n], "ones")
            }
        }
    } else {
        (parse_vector(v_arg, model.n)?, "user")
    };
    let attractivity = check_attractivity(model, &v)?;
    let confirmation = confirm
        .map(|periods| -> Result<Confirmation> {
            let (lo, hi) = (0.5, 5.0);
            let a = HistoryFunction::constant(model, config, &vec![lo; model.n]);
            let b = HistoryFunction::constant(model, config, &vec![hi; model.n]);
            Ok(Confirmation {
                periods,
                low_start: lo,
                high_start: hi,
                tail_difference: convergence_experiment(model, a, b, periods, config)?,
            })
        })
        .transpose()?;
    let code = if attractivity.condition_met {
        EXIT_OK
    } else {
        EXIT_NOT_MET
    };
    let report = AttractReport {
        model: model.name.as_deref(),
        v_source,
        attractivity,
        confirmation,
    };
    let text = match g.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let a = &report.attractivity;
            let rows: Vec<Vec<String>> = (0..model.n)
                .map(|i| {
                    vec![
                        (i + 1).to_string(),
                        a.v[i].to_string(),
                        fmt_opt(a.alpha_i.as_ref().map(|x| x[i])),
                        fmt_opt(a.gamma_i.as_ref().map(|x| x[i])),
                        a.threshold.to_string(),
                        a.condition_met.to_string(),
                    ]
                })
                .collect();
            csv_text(
                &[
                    "equation",
                    "v",
                    "alpha",
                    "gamma",
                    "threshold",
                    "condition_met",
                ],
                &rows,
            )?
        }
    };
    Ok(Outcome::new(code, text))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct DeltaRow {
    x: f64,
    delta: f64,
    exp_neg_x: f64,
    holds: bool,
}

fn cmd_delta(xs: &[f64], m: f64, y_max: f64, format: Format) -> Result<Outcome> {
    let rows = xs
        .iter()
        .map(|&x| {
            let delta = delta_of_x(x, m, y_max)?;
            let e = (-x).exp();
            Ok(DeltaRow {
                x,
                delta,
                exp_neg_x: e,
                holds: delta < e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let code = if rows.iter().all(|r| r.holds) {
        EXIT_OK
    } else {
        EXIT_NOT_MET
    };
    let text = match format {
        Format::Json => to_json(&rows)?,
        Format::Csv => {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.x.to_string(),
                        r.delta.to_string(),
                        r.exp_neg_x.to_string(),
                        r.holds.to_string(),
                    ]
                })
                .collect();
            csv_text(&["x", "delta", "exp_neg_x", "holds"], &table)?
        }
    };
    Ok(Outcome::new(code, text))
}

fn cmd_equilibrium(model: &SystemModel, config: &SolverConfig) -> Result<Outcome> {
    let r = find_equilibrium(model, config.quad_nodes)?;
    Ok(Outcome::new(EXIT_OK, to_json(&r)?))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepRow {
    value: f64,
    condition_met: Option<bool>,
    all_satisfied: Option<bool>,
    max_gamma: Option<f64>,
    min_alpha: Option<f64>,
    threshold: Option<f64>,
    error: Option<String>,
}

fn cmd_sweep(
    model: &SystemModel,
    g: &GlobalFlags,
    param: &str,
    values: &[f64],
    analysis: SweepAnalysis,
) -> Result<Outcome> {
    if !model.document.params.contains_key(param) {
        return Err(Error::InvalidInput(format!(
            "model has no parameter '{param}'"
        )));
    }
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|&value| {
            let mut row = SweepRow {
                value,
                condition_met: None,
                all_satisfied: None,
                max_gamma: None,
                min_alpha: None,
                threshold: None,
                error: None,
            };
            let res = (|| -> Result<()> {
                let m = model.with_param(param, value)?;
                match analysis {
                    SweepAnalysis::Check => {
                        row.all_satisfied = Some(
                            check_hypotheses_with(&m, VERIFICATION_GRID, g.quad_nodes)?
                                .all_satisfied(),
                        );
                    }
                    SweepAnalysis::Attract => {
                        let v = check_hypotheses_with(&m, VERIFICATION_GRID, g.quad_nodes)?
                            .witness_v
                            .unwrap_or_else(|| vec![1.0; m.n]);
                        let a = check_attractivity(&m, &v)?;
                        row.condition_met = Some(a.condition_met);
                        row.threshold = Some(a.threshold);
                        row.max_gamma = a
                            .gamma_i
                            .map(|g| g.into_iter().fold(f64::NEG_INFINITY, f64::max));
                        row.min_alpha = a
                            .alpha_i
                            .map(|a| a.into_iter().fold(f64::INFINITY, f64::min));
                    }
                }
                Ok(())
            })();
            if let Err(e) = res {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect();
    let text = match g.format {
        Format::Json => to_json(&rows)?,
        Format::Csv => {
            let b = |x: Option<bool>| x.map(|v| v.to_string()).unwrap_or_default();
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.value.to_string(),
                        b(r.condition_met),
                        b(r.all_satisfied),
                        fmt_opt(r.min_alpha),
                        fmt_opt(r.max_gamma),
                        fmt_opt(r.threshold),
                        r.error.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            csv_text(
                &[
                    "value",
                    "condition_met",
                    "all_satisfied",
                    "min_alpha",
                    "max_gamma",
                    "threshold",
                    "error",
                ],
                &table,
            )?
        }
    };
    Ok(Outcome::new(EXIT_OK, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_vectors() {
        assert_eq!(parse_vector("1,2", 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(parse_vector("3", 3).unwrap(), vec![3.0; 3]);
        assert!(parse_vector("1,2,3", 2).is_err());
        assert!(parse_vector("x", 1).is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn fixtures_resolve_by_name() {
        assert!(resolve_model_path("example_3_1.json").exists());
    }
}
