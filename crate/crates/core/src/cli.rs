//! Command-line front end.
//!
//! Exit codes: 0 success, 1 bad configuration or input, 2 model error
//! (disconnected graph or subset, non-SPD noise, ill-conditioning),
//! 3 failed statistical gate.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::beamform::{self, BeamformScenario, KernelPair};
use crate::calibrate::{CalibrationProblem, Estimator, GeneralizedLaplacian};
use crate::error::Error;
use crate::io::{self, format_f64};
use crate::mc::{self, McCase, McConfig, McReport, Sampling};
use crate::noise::NoiseModel;
use crate::spectra::{self, ClosedFormKind};
use crate::topology::{subset_rows, SubsetSpec, Topology};

/// Gate thresholds applied by `mc --gate`.
pub const GATE_COV_GAP: f64 = 0.03;
pub const GATE_BIAS_SIGMAS: f64 = 4.0;
pub const GATE_VAR_G_GAP: f64 = 0.05;

/// Stream index reserved for drawing the beamforming scenario.
const SCENARIO_STREAM: u64 = u64::MAX;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("statistical gate failed: {0}")]
    Gate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Lib(e) if e.is_model_error() => 2,
            CliError::Lib(_) => 1,
            CliError::Gate(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "phasecal", version, about = "Phase calibration and null-steering analysis for distributed arrays")]
pub struct Cli {
    /// JSON file with default values for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Describe a topology or print its edge list.
    Topo(TopoArgs),
    /// Estimate phases from given or synthesized measurements.
    Calibrate(CalibrateArgs),
    /// Monte Carlo check of estimator moments and leakage variance.
    Mc(McArgs),
    /// Plot-ready data tables.
    #[command(subcommand)]
    Figure(FigureCommand),
    /// Closed-form spectra of named topologies.
    #[command(subcommand)]
    Spectra(SpectraCommand),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Topo(_) => "topo",
            Command::Calibrate(_) => "calibrate",
            Command::Mc(_) => "mc",
            Command::Figure(FigureCommand::LineVar(_)) => "figure line-var",
            Command::Figure(FigureCommand::LisVar(_)) => "figure lis-var",
            Command::Figure(FigureCommand::LisGap(_)) => "figure lis-gap",
            Command::Spectra(SpectraCommand::Report(_)) => "spectra report",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum FigureCommand {
    /// Per-antenna variance along a line: columns N, n, variance.
    LineVar(LineVarArgs),
    /// Antenna-0 variance on square grids, both calibration cases.
    LisVar(LisArgs),
    /// Relative kernel gap on square grids.
    LisGap(LisArgs),
}

#[derive(Debug, Subcommand)]
pub enum SpectraCommand {
    /// Closed-form eigenvalues and variances against the numeric ones.
    Report(SpectraArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    Full,
    Subset,
}

impl From<CaseArg> for McCase {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Full => McCase::Full,
            CaseArg::Subset => McCase::Subset,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProblemArgs {
    /// line:N, ring:N, grid8:RxC, complete:N or file:PATH (edge list).
    #[arg(long)]
    pub topology: Option<String>,
    /// scalar:SIGMA2, diag:PATH or full:PATH (CSV). Default scalar:1.
    #[arg(long)]
    pub noise: Option<String>,
    /// Node list ("0,1,4"), corner:K for grid8 topologies, or file:PATH.
    #[arg(long)]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct TopoArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// True phases (CSV vector) used to synthesize measurements.
    #[arg(long)]
    pub phi_true: Option<PathBuf>,
    /// Measured phase differences (CSV vector, one per topology edge).
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub case: Option<CaseArg>,
    /// Directory for phi_hat.csv, covariance.csv and metadata.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub phi_true: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub case: Option<CaseArg>,
    /// Also simulate a random null-steering scenario over the subset.
    #[arg(long)]
    pub beamform: bool,
    /// Exit with code 3 when the statistical checks fail.
    #[arg(long)]
    pub gate: bool,
    /// Write every trial's estimate to this CSV file.
    #[arg(long)]
    pub dump_trials: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LineVarArgs {
    /// Line lengths, comma separated.
    #[arg(long = "n", value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LisArgs {
    /// Grid side lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sides: Option<Vec<usize>>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Side of the participating corner block.
    #[arg(long)]
    pub corner: Option<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SpectraArgs {
    #[arg(long, value_enum)]
    pub kind: Option<SpectraKindArg>,
    #[arg(long = "n")]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpectraKindArg {
    Line,
    Ring,
    Complete,
}

impl From<SpectraKindArg> for ClosedFormKind {
    fn from(k: SpectraKindArg) -> Self {
        match k {
            SpectraKindArg::Line => ClosedFormKind::Line,
            SpectraKindArg::Ring => ClosedFormKind::Ring,
            SpectraKindArg::Complete => ClosedFormKind::Complete,
        }
    }
}

/// Values read from `--config`; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub topology: Option<String>,
    pub noise: Option<String>,
    pub subset: Option<String>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub phi_true: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    pub case: Option<McCase>,
    pub gate: Option<bool>,
    pub beamform: Option<bool>,
    pub dump_trials: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub sigma2: Option<f64>,
    pub sides: Option<Vec<usize>>,
    pub n: Option<Vec<usize>>,
    pub corner: Option<usize>,
    pub kind: Option<ClosedFormKind>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

/// Parse arguments, run, report errors on stderr and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("phasecal: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(cmd) = &cfg.command {
        if cmd != cli.command.name() {
            return Err(CliError::Config(format!(
                "config is for `{cmd}` but `{}` was invoked",
                cli.command.name()
            )));
        }
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Topo(a) => cmd_topo(a, &cfg),
        Command::Calibrate(a) => cmd_calibrate(a, &cfg),
        Command::Mc(a) => cmd_mc(a, &cfg),
        Command::Figure(FigureCommand::LineVar(a)) => cmd_figure_line_var(a, &cfg),
        Command::Figure(FigureCommand::LisVar(a)) => cmd_figure_lis(a, &cfg, false),
        Command::Figure(FigureCommand::LisGap(a)) => cmd_figure_lis(a, &cfg, true),
        Command::Spectra(SpectraCommand::Report(a)) => cmd_spectra_report(a, &cfg),
    }
}

fn emit(output: Option<&Path>, text: &str) -> CliResult<()> {
    match output {
        Some(path) => io::write_text(path, text).map_err(|e| {
            CliError::Config(format!("cannot write {}: {e}", path.display()))
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn parse_count(s: &str, what: &str) -> CliResult<usize> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{what}: `{s}` is not a non-negative integer")))
}

/// Grid dimensions when the spec names a grid8 topology.
fn grid_dims(spec: &str) -> CliResult<Option<(usize, usize)>> {
    match spec.split_once(':') {
        Some(("grid8", dims)) => {
            let (r, c) = dims
                .split_once('x')
                .ok_or_else(|| CliError::Config(format!("grid8 size must be RxC, got `{dims}`")))?;
            Ok(Some((parse_count(r, "grid rows")?, parse_count(c, "grid columns")?)))
        }
        _ => Ok(None),
    }
}

pub fn parse_topology(spec: &str) -> CliResult<Topology> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("topology `{spec}` must look like kind:params")))?;
    let t = match kind {
        "line" => Topology::line(parse_count(arg, "line size")?)?,
        "ring" => Topology::ring(parse_count(arg, "ring size")?)?,
        "complete" => Topology::complete(parse_count(arg, "complete graph size")?)?,
        "grid8" => {
            let (r, c) = grid_dims(spec)?.expect("grid8 spec");
            Topology::grid8(r, c)?
        }
        "file" => Topology::parse_edge_list(&fs::read_to_string(arg)?)?,
        other => return Err(CliError::Config(format!("unknown topology kind `{other}`"))),
    };
    Ok(t)
}

pub fn parse_subset(spec: &str, topology_spec: &str, node_count: usize) -> CliResult<SubsetSpec> {
    if let Some(k) = spec.strip_prefix("corner:") {
        let (r, c) = grid_dims(topology_spec)?
            .ok_or_else(|| CliError::Config("corner subsets need a grid8 topology".into()))?;
        return Ok(SubsetSpec::grid_corner(r, c, parse_count(k, "corner size")?)?);
    }
    let text = match spec.strip_prefix("file:") {
        Some(path) => fs::read_to_string(path)?,
        None => spec.to_string(),
    };
    Ok(SubsetSpec::parse(node_count, &text.replace(',', " "))?)
}

/// Noise model plus whether it is the noiseless limit `scalar:0`, which
/// keeps the equal-weight estimator and a zero covariance.
pub fn parse_noise(spec: &str, edge_count: usize) -> CliResult<(NoiseModel, bool)> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("noise `{spec}` must look like kind:value")))?;
    match kind {
        "scalar" => {
            let sigma2: f64 = arg
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("noise variance `{arg}` is not a number")))?;
            if sigma2 == 0.0 {
                Ok((NoiseModel::scalar(edge_count, 1.0)?, true))
            } else {
                Ok((NoiseModel::scalar(edge_count, sigma2)?, false))
            }
        }
        "diag" => {
            let v = io::read_vector_csv(Path::new(arg))?;
            if v.len() != edge_count {
                return Err(CliError::Config(format!(
                    "noise variances: expected M = {edge_count} values, found {}",
                    v.len()
                )));
            }
            Ok((NoiseModel::diagonal(v.iter().copied().collect())?, false))
        }
        "full" => {
            let q = io::read_matrix_csv(Path::new(arg))?;
            if q.shape() != (edge_count, edge_count) {
                return Err(CliError::Config(format!(
                    "noise covariance: expected {edge_count}x{edge_count}, found {}x{}",
                    q.nrows(),
                    q.ncols()
                )));
            }
            Ok((NoiseModel::full(q)?, false))
        }
        other => Err(CliError::Config(format!("unknown noise kind `{other}`"))),
    }
}

struct Problem {
    topology_spec: String,
    noise_spec: String,
    problem: CalibrationProblem,
    noiseless: bool,
}

fn build_problem(p: &ProblemArgs, cfg: &RunConfig, force_subset: bool) -> CliResult<Problem> {
    let topology_spec = p
        .topology
        .clone()
        .or_else(|| cfg.topology.clone())
        .ok_or_else(|| CliError::Config("--topology is required".into()))?;
    let topology = parse_topology(&topology_spec)?;
    let noise_spec = p.noise.clone().or_else(|| cfg.noise.clone()).unwrap_or_else(|| "scalar:1".into());
    let (noise, noiseless) = parse_noise(&noise_spec, topology.edge_count())?;
    let subset = match p.subset.as_ref().or(cfg.subset.as_ref()) {
        Some(s) => Some(parse_subset(s, &topology_spec, topology.node_count())?),
        None if force_subset => Some(SubsetSpec::all(topology.node_count())),
        None => None,
    };
    let problem = CalibrationProblem::new(topology, noise, subset)?;
    Ok(Problem {
        topology_spec,
        noise_spec,
        problem,
        noiseless,
    })
}

fn read_phases(path: Option<&PathBuf>, n: usize) -> CliResult<DVector<f64>> {
    match path {
        Some(path) => {
            let v = io::read_vector_csv(path)?;
            if v.len() != n {
                return Err(CliError::Config(format!(
                    "true phases: expected N = {n} values, found {}",
                    v.len()
                )));
            }
            Ok(v)
        }
        None => Ok(DVector::zeros(n)),
    }
}

fn resolve_case(arg: Option<CaseArg>, cfg: &RunConfig, problem: &CalibrationProblem) -> CliResult<McCase> {
    let case = arg.map(McCase::from).or(cfg.case).unwrap_or(McCase::Full);
    if case == McCase::Subset && problem.restricted().is_none() {
        return Err(CliError::Config("--case subset needs --subset".into()));
    }
    Ok(case)
}

fn cmd_topo(a: &TopoArgs, cfg: &RunConfig) -> CliResult<()> {
    let spec = a
        .problem
        .topology
        .clone()
        .or_else(|| cfg.topology.clone())
        .ok_or_else(|| CliError::Config("--topology is required".into()))?;
    let t = parse_topology(&spec)?;
    let subset = match a.problem.subset.as_ref().or(cfg.subset.as_ref()) {
        Some(s) => Some(parse_subset(s, &spec, t.node_count())?),
        None => None,
    };
    let output = a.out.output.as_deref().or(cfg.output.as_deref());
    let text = match a.out.format.or(cfg.format) {
        Some(Format::Json) => {
            let edges: Vec<[usize; 2]> = t.edges().iter().map(|e| [e.lo, e.hi]).collect();
            let mut v = json!({
                "N": t.node_count(),
                "M": t.edge_count(),
                "connected": t.is_connected(),
                "tree": t.is_tree(),
                "degrees": t.degrees(),
                "edges": edges,
            });
            if let Some(s) = &subset {
                v["omega"] = json!(s.members());
                v["omega_connected"] = json!(t.omega_connected(s));
                v["omega_edge_count"] = json!(match subset_rows(&t, s) {
                    Ok((b, _)) => Some(b.edge_count()),
                    Err(_) => None,
                });
            }
            serde_json::to_string_pretty(&v).expect("json value") + "\n"
        }
        _ => t.to_edge_list_text(),
    };
    emit(output, &text)
}

fn cmd_calibrate(a: &CalibrateArgs, cfg: &RunConfig) -> CliResult<()> {
    let built = build_problem(&a.problem, cfg, false)?;
    let problem = &built.problem;
    let case = resolve_case(a.case, cfg, problem)?;
    let n = problem.node_count();
    let m = problem.topology().edge_count();
    let seed = a.seed.or(cfg.seed).unwrap_or(0);

    let measurements = a.measurements.as_ref().or(cfg.measurements.as_ref());
    let (x, synthesized) = match measurements {
        Some(path) => {
            let x = io::read_vector_csv(path)?;
            if x.len() != m {
                return Err(CliError::Config(format!(
                    "measurements: expected M = {m} values (one per edge), found {}",
                    x.len()
                )));
            }
            (x, false)
        }
        None => {
            let phi = read_phases(a.phi_true.as_ref().or(cfg.phi_true.as_ref()), n)?;
            let clean = problem.incidence().matrix() * phi;
            let x = if built.noiseless {
                clean
            } else {
                clean + problem.noise().sample(&mut mc::trial_rng(seed, 0))
            };
            (x, true)
        }
    };

    let (estimator, x_used): (&Estimator, DVector<f64>) = match (case, problem.restricted()) {
        (McCase::Subset, Some(r)) => (
            &r.estimator,
            DVector::from_iterator(r.row_map.len(), r.row_map.iter().map(|&k| x[k])),
        ),
        _ => (problem.full(), x),
    };
    let phi_hat = estimator.estimate(&x_used)?;
    let covariance = if built.noiseless {
        DMatrix::zeros(n, n)
    } else {
        estimator.covariance().clone()
    };

    let dir = a
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    io::write_vector_csv(&dir.join("phi_hat.csv"), &phi_hat)?;
    io::write_matrix_csv(&dir.join("covariance.csv"), &covariance)?;
    let meta = json!({
        "topology": built.topology_spec,
        "noise": built.noise_spec,
        "N": n,
        "M": m,
        "case": case,
        "omega": problem.restricted().map(|r| r.subset.members().to_vec()),
        "measurements_used": x_used.len(),
        "synthesized": synthesized,
        "seed": if synthesized && !built.noiseless { Some(seed) } else { None },
        "condition_number": estimator.laplacian().condition_number(),
    });
    io::write_text(
        &dir.join("metadata.json"),
        &(serde_json::to_string_pretty(&meta).expect("json value") + "\n"),
    )?;
    Ok(())
}

/// Gate failures for a report; empty when every check passes.
pub fn gate_failures(report: &McReport) -> Vec<String> {
    let mut failures = Vec::new();
    if report.cov_rel_frobenius_gap > GATE_COV_GAP {
        failures.push(format!(
            "covariance gap {:.4} > {GATE_COV_GAP}",
            report.cov_rel_frobenius_gap
        ));
    }
    if report.max_abs_bias_sigmas > GATE_BIAS_SIGMAS {
        failures.push(format!(
            "bias {:.3} standard errors > {GATE_BIAS_SIGMAS}",
            report.max_abs_bias_sigmas
        ));
    }
    if let Some(gap) = report.var_g_rel_gap {
        if gap > GATE_VAR_G_GAP {
            failures.push(format!("var(g) gap {gap:.4} > {GATE_VAR_G_GAP}"));
        }
    }
    failures
}

fn cmd_mc(a: &McArgs, cfg: &RunConfig) -> CliResult<()> {
    let beamform = a.beamform || cfg.beamform.unwrap_or(false);
    let built = build_problem(&a.problem, cfg, beamform)?;
    let problem = &built.problem;
    let n = problem.node_count();
    let case = resolve_case(a.case, cfg, problem)?;
    let phi_true = read_phases(a.phi_true.as_ref().or(cfg.phi_true.as_ref()), n)?;
    let trials = a.trials.or(cfg.trials).unwrap_or(10_000);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);

    let scenario = if beamform {
        let r = problem.restricted().expect("subset forced for beamforming");
        let mut rng = mc::trial_rng(seed, SCENARIO_STREAM);
        let h = beamform::unit_modulus_channel(n, &mut rng);
        Some(BeamformScenario::random_null_steering(
            h,
            r.estimator.laplacian().basis(),
            &r.subset,
            &mut rng,
        )?)
    } else {
        None
    };
    let mc_cfg = McConfig {
        master_seed: seed,
        trials,
        phi_true,
        problem,
        case,
        scenario: scenario.as_ref(),
        sampling: if built.noiseless { Sampling::Noiseless } else { Sampling::Model },
    };
    let log = mc::run_trials(&mc_cfg)?;
    if let Some(path) = a.dump_trials.as_ref().or(cfg.dump_trials.as_ref()) {
        let f = fs::File::create(path)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        log.write_csv(std::io::BufWriter::new(f))?;
    }
    let report = mc::summarize(&mc_cfg, &log)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(a.output.as_deref().or(cfg.output.as_deref()), &text)?;

    if a.gate || cfg.gate.unwrap_or(false) {
        let failures = gate_failures(&report);
        if !failures.is_empty() {
            return Err(CliError::Gate(failures.join("; ")));
        }
    }
    Ok(())
}

fn render_table(format: Format, header: &[&str], rows: &[Vec<String>]) -> String {
    match format {
        Format::Csv => {
            let mut out = header.join(",") + "\n";
            for row in rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            // cells are already formatted numbers
            let items: Vec<String> = rows
                .iter()
                .map(|row| {
                    let fields: Vec<String> =
                        header.iter().zip(row).map(|(h, v)| format!("\"{h}\": {v}")).collect();
                    format!("  {{{}}}", fields.join(", "))
                })
                .collect();
            format!("[\n{}\n]\n", items.join(",\n"))
        }
    }
}

fn positive_sigma2(a: Option<f64>, cfg: &RunConfig) -> CliResult<f64> {
    let s = a.or(cfg.sigma2).unwrap_or(1e-4);
    if !(s > 0.0 && s.is_finite()) {
        return Err(CliError::Config(format!("--sigma2 must be positive, got {s}")));
    }
    Ok(s)
}

/// Per-antenna variances of a line of `n` antennas with `Q = sigma2 I`.
pub fn line_variances(n: usize, sigma2: f64) -> crate::Result<Vec<f64>> {
    let t = Topology::line(n)?;
    let q = NoiseModel::scalar(t.edge_count(), sigma2)?;
    let gl = GeneralizedLaplacian::full(&t.incidence(), &q)?;
    Ok(gl.covariance().diagonal().iter().copied().collect())
}

fn cmd_figure_line_var(a: &LineVarArgs, cfg: &RunConfig) -> CliResult<()> {
    let sigma2 = positive_sigma2(a.sigma2, cfg)?;
    let ns = a.n.clone().or_else(|| cfg.n.clone()).unwrap_or_else(|| vec![16]);
    let mut rows = Vec::new();
    for &n in &ns {
        for (i, v) in line_variances(n, sigma2)?.into_iter().enumerate() {
            rows.push(vec![n.to_string(), i.to_string(), format_f64(v)]);
        }
    }
    let format = a.out.format.or(cfg.format).unwrap_or(Format::Csv);
    let text = render_table(format, &["N", "n", "variance"], &rows);
    emit(a.out.output.as_deref().or(cfg.output.as_deref()), &text)
}

/// Full- and subset-case estimators for a `side x side` grid8 with the
/// lower-left `corner x corner` block participating.
pub fn lis_laplacians(side: usize, corner: usize, sigma2: f64) -> crate::Result<(GeneralizedLaplacian, GeneralizedLaplacian)> {
    let t = Topology::grid8(side, side)?;
    let omega = SubsetSpec::grid_corner(side, side, corner)?;
    let q = NoiseModel::scalar(t.edge_count(), sigma2)?;
    let full = GeneralizedLaplacian::full(&t.incidence(), &q)?;
    let (b_omega, row_map) = subset_rows(&t, &omega)?;
    let sub = GeneralizedLaplacian::subset(&b_omega, &q.restrict(&row_map)?, &omega)?;
    Ok((full, sub))
}

/// `(var at antenna 0 using all measurements, using only those inside Ω)`.
pub fn lis_variances(side: usize, corner: usize, sigma2: f64) -> crate::Result<(f64, f64)> {
    let (full, sub) = lis_laplacians(side, corner, sigma2)?;
    Ok((full.covariance()[(0, 0)], sub.covariance()[(0, 0)]))
}

pub fn lis_gap(side: usize, corner: usize, sigma2: f64) -> crate::Result<f64> {
    let (full, sub) = lis_laplacians(side, corner, sigma2)?;
    beamform::kernel_gap(&KernelPair::new(&full, &sub)?)
}

pub const DEFAULT_SIDES: [usize; 12] = [3, 4, 5, 6, 7, 10, 12, 15, 17, 20, 25, 30];

fn cmd_figure_lis(a: &LisArgs, cfg: &RunConfig, gap: bool) -> CliResult<()> {
    let sigma2 = positive_sigma2(a.sigma2, cfg)?;
    let corner = a.corner.or(cfg.corner).unwrap_or(3);
    let sides = a.sides.clone().or_else(|| cfg.sides.clone()).unwrap_or_else(|| DEFAULT_SIDES.to_vec());
    let mut rows = Vec::new();
    for &s in &sides {
        if s < corner {
            return Err(CliError::Config(format!("grid side {s} is smaller than the {corner}x{corner} corner")));
        }
        let n = (s * s).to_string();
        if gap {
            rows.push(vec![n, format_f64(lis_gap(s, corner, sigma2)?)]);
        } else {
            let (va, vb) = lis_variances(s, corner, sigma2)?;
            rows.push(vec![n, format_f64(va), format_f64(vb)]);
        }
    }
    let header: &[&str] = if gap { &["N", "gap"] } else { &["N", "var_a_0", "var_b_0"] };
    let format = a.out.format.or(cfg.format).unwrap_or(Format::Csv);
    emit(a.out.output.as_deref().or(cfg.output.as_deref()), &render_table(format, header, &rows))
}

fn cmd_spectra_report(a: &SpectraArgs, cfg: &RunConfig) -> CliResult<()> {
    let kind = a
        .kind
        .map(ClosedFormKind::from)
        .or(cfg.kind)
        .ok_or_else(|| CliError::Config("--kind is required".into()))?;
    let n = match a.n {
        Some(n) => n,
        None => match cfg.n.as_deref() {
            Some([n]) => *n,
            Some(_) => return Err(CliError::Config("config `n` must hold one size for spectra report".into())),
            None => return Err(CliError::Config("--n is required".into())),
        },
    };
    let sigma2 = a.sigma2.or(cfg.sigma2).unwrap_or(1.0);
    let report = spectra::closed_form_report(kind, n, sigma2)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(a.output.as_deref().or(cfg.output.as_deref()), &text)
}
