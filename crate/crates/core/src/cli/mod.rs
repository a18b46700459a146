//! `pst` command-line front end: solve, simulate, analyze, nudge.
//!
//! Every command validates the whole configuration first, computes into
//! memory, and only then writes its files, so a rejected config leaves the
//! output directory untouched. Floats are written in shortest round-trip
//! form, which makes repeated runs byte-identical.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    energy_normalized_sms_chain, eigenvalue_perturbation_study, eigenvector_mixing_study,
    mixed_hamiltonian, mixing_fidelity, noise_scaling_study, pipelined_protocol,
    predicted_commutator_norm, rate_scaling_study, timing_study,
};
use crate::dynamics::{
    amplitudes, fidelity_curve, symmetry_commutator, time_grid, transfer_fidelity, OverlapSpectrum,
};
use crate::error::{Error, Result};
use crate::iep::{
    nearest_neighbor_guess, power_law_guess, solve, solve_least_squares, SolveResult,
};
use crate::linalg::{eig_sym, EigenSystem};
use crate::model::{
    uniform_parameters, HamiltonianModel, MaskedModel, NearestNeighbor, ParamLabel, PowerLawChain,
};
use crate::spectrum::{
    model_uniform_spectrum, sms, truncate_and_nudge, uniform_chain_spectrum, NudgedSpectrum, Spectrum,
};

use config::{
    AnalyzeSpec, ChainKind, ChainSpec, ExponentCheck, InitialKind, InitialSpec, ModelKindSpec,
    NudgeSource, RunConfig, SimulateSpec, SpectrumSpec, StudyName, TimeUnits,
};

#[derive(Debug, Parser)]
#[command(name = "pst", version, about = "Engineer and test perfect-state-transfer spin chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Simulate,
    Analyze,
    Nudge,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the inverse eigenvalue problem; writes solution.json.
    Solve(CommonArgs),
    /// Time-evolve a chain; writes transfer.csv and simulation.json.
    Simulate(CommonArgs),
    /// Run robustness and throughput studies; writes one CSV per study and summary.json.
    Analyze(CommonArgs),
    /// Truncate and nudge a spectrum onto a decimal grid; writes spectrum.json.
    Nudge(CommonArgs),
}

impl Command {
    pub fn split(&self) -> (CommandKind, &CommonArgs) {
        match self {
            Command::Solve(a) => (CommandKind::Solve, a),
            Command::Simulate(a) => (CommandKind::Simulate, a),
            Command::Analyze(a) => (CommandKind::Analyze, a),
            Command::Nudge(a) => (CommandKind::Nudge, a),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for stochastic studies (overrides `seed` in the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress console output.
    #[arg(long)]
    pub quiet: bool,
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub passed: bool,
    pub requirement: String,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, passed: bool, requirement: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            passed,
            requirement: requirement.into(),
        }
    }
}

/// Everything a command produced, held in memory until written.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub console: String,
    pub checks: Vec<Check>,
    /// False for unconverged solves even when no explicit check failed.
    pub success: bool,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.success && self.checks.iter().all(|c| c.passed)
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = Vec<f64>>) {
        let mut text = String::from(header);
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.files.push((name.to_string(), text.into_bytes()));
    }
}

/// Parses arguments, runs, writes files and maps the outcome to an exit code:
/// 0 when everything passed, 1 when a solve failed to converge or a check
/// failed, 2 when the configuration was rejected or a computation errored.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, common) = cli.command.split();
    let result = RunConfig::load(&common.config).and_then(|cfg| {
        let overrides = Overrides {
            out: common.out.clone(),
            seed: common.seed,
        };
        let dir = output_dir(&cfg, &overrides);
        let out = execute(kind, &cfg, &overrides)?;
        out.write_to(&dir)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            if !common.quiet {
                print!("{}", out.console);
            }
            if out.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn output_dir(cfg: &RunConfig, overrides: &Overrides) -> PathBuf {
    overrides
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn execute(kind: CommandKind, cfg: &RunConfig, overrides: &Overrides) -> Result<RunOutput> {
    let setup = Setup::new(cfg)?;
    match kind {
        CommandKind::Solve => cmd_solve(&setup),
        CommandKind::Simulate => {
            let spec = cfg
                .simulate
                .as_ref()
                .ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
            cmd_simulate(&setup, spec)
        }
        CommandKind::Analyze => {
            let spec = cfg
                .analyze
                .as_ref()
                .ok_or_else(|| Error::Config("missing [analyze] section".into()))?;
            let seed = overrides.seed.or(cfg.seed).unwrap_or(0);
            cmd_analyze(&setup, spec, seed)
        }
        CommandKind::Nudge => cmd_nudge(&setup),
    }
}

/// Validated model and spectrum.
struct Setup {
    cfg: RunConfig,
    model: Option<ModelSetup>,
    spectrum: Option<Spectrum>,
    nudged: Option<NudgedSpectrum>,
}

struct ModelSetup {
    kind: ModelKindSpec,
    exponent: f64,
    full: Box<dyn HamiltonianModel>,
    power: Option<PowerLawChain>,
    mask: Option<Vec<bool>>,
}

impl ModelSetup {
    fn labels(&self) -> Vec<ParamLabel> {
        self.full.labels()
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKindSpec::NearestNeighbor => "nearest_neighbor",
            ModelKindSpec::PowerLaw => "power_law",
        }
    }

    fn fresh(&self) -> Result<Box<dyn HamiltonianModel>> {
        Ok(match &self.power {
            None => Box::new(NearestNeighbor::new(self.full.n_sites())?),
            Some(p) => Box::new(*p),
        })
    }

    fn uniform(&self) -> Vec<f64> {
        uniform_parameters(&self.labels()).expect("chain labels are fields and bonds")
    }
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.solver.validate()?;
        let model = cfg.model.as_ref().map(build_model).transpose()?;
        let (spectrum, nudged) = match &cfg.spectrum {
            None => (None, None),
            Some(spec) => {
                let (s, nudged) = build_spectrum(spec, model.as_ref())?;
                if let Some(m) = &model {
                    if s.len() != m.full.n_sites() {
                        return Err(Error::Config(format!(
                            "spectrum has {} levels but the model has {} sites",
                            s.len(),
                            m.full.n_sites()
                        )));
                    }
                }
                s.resolve_t0()?;
                (Some(s), nudged)
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            model,
            spectrum,
            nudged,
        })
    }

    fn model(&self) -> Result<&ModelSetup> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("missing [model] section".into()))
    }

    fn spectrum(&self) -> Result<&Spectrum> {
        self.spectrum
            .as_ref()
            .ok_or_else(|| Error::Config("missing [spectrum] section".into()))
    }

    fn t0(&self) -> Result<f64> {
        self.spectrum()?.resolve_t0()
    }

    /// Initial full parameter vector; the nearest-neighbour-derived guess
    /// needs the target spectrum.
    fn initial(&self) -> Result<Vec<f64>> {
        let m = self.model()?;
        let spec = &self.cfg.model.as_ref().expect("model present").initial;
        match spec {
            InitialSpec::Values(v) => Ok(v.clone()),
            InitialSpec::Named(InitialKind::Uniform) => Ok(m.uniform()),
            InitialSpec::Named(InitialKind::Guess) => {
                let target = self.spectrum()?;
                match &m.power {
                    None => Ok(nearest_neighbor_guess(target)),
                    Some(p) => power_law_guess(p, target, &self.cfg.solver),
                }
            }
        }
    }
}

fn build_model(spec: &config::ModelSpec) -> Result<ModelSetup> {
    if !(spec.exponent > 0.0 && spec.exponent.is_finite()) {
        return Err(Error::Config(format!("exponent must be positive, got {}", spec.exponent)));
    }
    let (full, power): (Box<dyn HamiltonianModel>, _) = match spec.kind {
        ModelKindSpec::NearestNeighbor => (Box::new(NearestNeighbor::new(spec.sites)?), None),
        ModelKindSpec::PowerLaw => {
            let p = PowerLawChain::new(spec.sites, spec.exponent)?;
            (Box::new(p), Some(p))
        }
    };
    let np = full.n_params();
    if let Some(mask) = &spec.free {
        if mask.len() != np {
            return Err(Error::Config(format!(
                "free mask has {} entries but the model has {np} parameters",
                mask.len()
            )));
        }
        if !mask.iter().any(|f| *f) {
            return Err(Error::Config("free mask leaves no parameter to solve for".into()));
        }
    }
    if let InitialSpec::Values(v) = &spec.initial {
        full.validate(v)?;
    }
    Ok(ModelSetup {
        kind: spec.kind,
        exponent: spec.exponent,
        full,
        power,
        mask: spec.free.clone(),
    })
}

fn build_spectrum(spec: &SpectrumSpec, model: Option<&ModelSetup>) -> Result<(Spectrum, Option<NudgedSpectrum>)> {
    let sites = || {
        model
            .map(|m| m.full.n_sites())
            .ok_or_else(|| Error::Config("this spectrum needs a [model] section for its size".into()))
    };
    match spec {
        SpectrumSpec::Sms { spacing, max_level } => {
            let n = sites()?;
            let spacing = match (spacing, max_level) {
                (Some(d), None) => *d,
                (None, Some(e)) => 2.0 * e / (n as f64 - 1.0),
                _ => {
                    return Err(Error::Config(
                        "sms spectrum needs exactly one of `spacing` and `max_level`".into(),
                    ))
                }
            };
            Ok((sms(n, spacing)?, None))
        }
        SpectrumSpec::Explicit { values, t0 } => {
            let s = Spectrum::new(values.clone())?;
            Ok((
                match t0 {
                    Some(t) if !(*t > 0.0 && t.is_finite()) => {
                        return Err(Error::Config(format!("t0 must be positive, got {t}")))
                    }
                    Some(t) => s.with_t0(*t),
                    None => s,
                },
                None,
            ))
        }
        SpectrumSpec::UniformChain => Ok((uniform_chain_spectrum(sites()?)?, None)),
        SpectrumSpec::Nudged { decimals, source } => {
            if *decimals > 12 {
                return Err(Error::Config(format!("decimals must be at most 12, got {decimals}")));
            }
            let base = match source {
                NudgeSource::UniformChain => uniform_chain_spectrum(sites()?)?,
                NudgeSource::ModelUniform => {
                    let m = model.ok_or_else(|| {
                        Error::Config("nudged spectrum from model_uniform needs a [model] section".into())
                    })?;
                    model_uniform_spectrum(m.full.as_ref())?
                }
            };
            let nudged = truncate_and_nudge(&base, *decimals)?;
            Ok((nudged.nudged.clone(), Some(nudged)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kind: String,
    pub sites: usize,
    pub exponent: Option<f64>,
}

/// Schema of solution.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub model: ModelSummary,
    pub labels: Vec<String>,
    pub alpha_star: Vec<f64>,
    pub free: Vec<bool>,
    /// Nearest-neighbour chains only: `r = J^(-1/p)`.
    pub spacings_from_couplings: Option<Vec<f64>>,
    pub target: Vec<f64>,
    pub achieved: Vec<f64>,
    pub t0: f64,
    pub residual_history: Vec<f64>,
    pub residual_norm_history: Vec<f64>,
    pub step_scales: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub succeeded: bool,
    pub termination: crate::iep::Termination,
    pub least_squares: bool,
    pub trace: f64,
    pub fidelity_at_t0: f64,
}

/// A solved chain in full-parameter form.
struct SolvedChain {
    alpha: Vec<f64>,
    result: SolveResult,
}

fn run_solver(setup: &Setup) -> Result<SolvedChain> {
    let m = setup.model()?;
    let target = setup.spectrum()?;
    let initial = setup.initial()?;
    m.full.validate(&initial)?;
    let n = m.full.n_sites();
    let cfg = &setup.cfg.solver;
    match &m.mask {
        None => {
            let result = if m.full.n_params() == n {
                solve(m.full.as_ref(), &initial, target, cfg)?
            } else {
                solve_least_squares(m.full.as_ref(), &initial, target, cfg)?
            };
            Ok(SolvedChain {
                alpha: result.alpha_star.values.clone(),
                result,
            })
        }
        Some(mask) => {
            let masked = MaskedModel::new(m.fresh()?, initial.clone(), mask)?;
            let start = masked.restrict(&initial);
            let result = if masked.n_params() == n {
                solve(&masked, &start, target, cfg)?
            } else {
                solve_least_squares(&masked, &start, target, cfg)?
            };
            Ok(SolvedChain {
                alpha: masked.expand(&result.alpha_star.values)?,
                result,
            })
        }
    }
}

fn solution_report(setup: &Setup, solved: &SolvedChain) -> Result<SolutionReport> {
    let m = setup.model()?;
    let h = m.full.build(&solved.alpha)?;
    let es = eig_sym(&h)?;
    let t0 = setup.t0()?;
    let labels = m.labels();
    let spacings = (m.kind == ModelKindSpec::NearestNeighbor).then(|| {
        labels
            .iter()
            .zip(&solved.alpha)
            .filter(|(l, _)| matches!(l, ParamLabel::Coupling(_)))
            .map(|(_, j)| j.abs().powf(-1.0 / m.exponent))
            .collect()
    });
    let r = &solved.result;
    Ok(SolutionReport {
        model: ModelSummary {
            kind: m.kind_name().into(),
            sites: m.full.n_sites(),
            exponent: m.power.as_ref().map(|p| p.exponent()),
        },
        labels: labels.iter().map(|l| l.to_string()).collect(),
        alpha_star: solved.alpha.clone(),
        free: m.mask.clone().unwrap_or_else(|| vec![true; labels.len()]),
        spacings_from_couplings: spacings,
        target: r.target.values().to_vec(),
        achieved: es.eigenvalues().iter().copied().collect(),
        t0,
        residual_history: r.residual_history.clone(),
        residual_norm_history: r.residual_norm_history.clone(),
        step_scales: r.step_scales.clone(),
        iterations: r.iterations,
        converged: r.converged,
        succeeded: r.succeeded(),
        termination: r.termination,
        least_squares: r.least_squares,
        trace: h.trace(),
        fidelity_at_t0: transfer_fidelity(&es, t0),
    })
}

fn parameter_table(report: &SolutionReport, exponent: f64) -> String {
    let mut out = String::new();
    let nn = report.spacings_from_couplings.is_some();
    if nn {
        let _ = writeln!(out, "{:>6} {:>14} {:>14}", "param", "value", format!("J^(-1/{exponent})"));
    } else {
        let _ = writeln!(out, "{:>6} {:>14}", "param", "value");
    }
    let mut spacing = report.spacings_from_couplings.iter().flatten();
    for (label, value) in report.labels.iter().zip(&report.alpha_star) {
        if nn && label.starts_with('J') {
            let r = spacing.next().copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "{label:>6} {value:>14.6} {r:>14.6}");
        } else {
            let _ = writeln!(out, "{label:>6} {value:>14.6}");
        }
    }
    out
}

fn cmd_solve(setup: &Setup) -> Result<RunOutput> {
    let m = setup.model()?;
    let solved = run_solver(setup)?;
    let report = solution_report(setup, &solved)?;
    let mut out = RunOutput {
        success: report.succeeded,
        ..RunOutput::default()
    };
    out.console.push_str(&parameter_table(&report, m.exponent));
    let _ = writeln!(
        out.console,
        "{} after {} iterations, max residual {:e}, fidelity at t0 = {:.12}",
        if report.succeeded { "solved" } else { "NOT CONVERGED" },
        report.iterations,
        report.residual_history.last().copied().unwrap_or(f64::NAN),
        report.fidelity_at_t0
    );
    out.json("solution.json", &report)?;
    Ok(out)
}

/// Chain parameters and eigensystem for simulate/analyze, plus the solve
/// report when the chain had to be solved here.
fn resolve_chain(setup: &Setup, spec: &ChainSpec) -> Result<(Vec<f64>, EigenSystem, Option<SolutionReport>)> {
    let m = setup.model()?;
    let (alpha, report) = match spec.chain {
        ChainKind::Solve => {
            let solved = run_solver(setup)?;
            let report = solution_report(setup, &solved)?;
            if !report.succeeded {
                return Err(Error::IllPosed(format!(
                    "solve did not converge (max residual {:e})",
                    report.residual_history.last().copied().unwrap_or(f64::NAN)
                )));
            }
            (solved.alpha, Some(report))
        }
        ChainKind::Uniform => (m.uniform(), None),
        ChainKind::Inline => (
            spec.parameters
                .clone()
                .ok_or_else(|| Error::Config("chain = \"inline\" needs `parameters`".into()))?,
            None,
        ),
        ChainKind::File => {
            let path = spec
                .solution
                .as_ref()
                .ok_or_else(|| Error::Config("chain = \"file\" needs `solution`".into()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let report: SolutionReport = serde_json::from_str(&text)?;
            if report.model.sites != m.full.n_sites() || report.model.kind != m.kind_name() {
                return Err(Error::Config(format!(
                    "{} holds a {}-site {} chain, config describes a {}-site {} chain",
                    path.display(),
                    report.model.sites,
                    report.model.kind,
                    m.full.n_sites(),
                    m.kind_name()
                )));
            }
            (report.alpha_star, None)
        }
    };
    m.full.validate(&alpha)?;
    let es = eig_sym(&m.full.build(&alpha)?)?;
    Ok((alpha, es, report))
}

fn check_chain_spec(spec: &ChainSpec) -> Result<()> {
    match spec.chain {
        ChainKind::Inline if spec.parameters.is_none() => {
            Err(Error::Config("chain = \"inline\" needs `parameters`".into()))
        }
        ChainKind::File if spec.solution.is_none() => {
            Err(Error::Config("chain = \"file\" needs `solution`".into()))
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SimulationSummary {
    t0: Option<f64>,
    samples: usize,
    peak_time: f64,
    peak_fidelity: f64,
    window: Option<[f64; 2]>,
    window_peak_time: Option<f64>,
    window_peak_fidelity: Option<f64>,
    fidelity_at_t0: Option<f64>,
    fwhm_around_t0: Option<f64>,
    checks: Vec<Check>,
}

fn cmd_simulate(setup: &Setup, spec: &SimulateSpec) -> Result<RunOutput> {
    setup.model()?;
    let chain = spec.chain_spec();
    check_chain_spec(&chain)?;
    let t0 = setup.spectrum.as_ref().map(|s| s.resolve_t0()).transpose()?;
    let scale = match spec.units {
        TimeUnits::Absolute => 1.0,
        TimeUnits::T0 => t0.ok_or_else(|| Error::Config("units = \"t0\" needs a [spectrum]".into()))?,
    };
    let times = time_grid(spec.start * scale, spec.end * scale, spec.step * scale)?;
    if let Some(w) = spec.window {
        if !(w > 0.0) || t0.is_none() {
            return Err(Error::Config("`window` needs a positive fraction and a [spectrum]".into()));
        }
    }

    let (_, es, report) = resolve_chain(setup, &chain)?;
    let record = fidelity_curve(&es, &times)?;
    let (peak_time, peak_fidelity) = record.peak().expect("grid is non-empty");
    let window = spec.window.zip(t0).map(|(w, t)| [t - w * t, t + w * t]);
    let window_peak = window.and_then(|[lo, hi]| record.peak_within(lo, hi));

    let mut out = RunOutput {
        success: true,
        ..RunOutput::default()
    };
    let judged = window_peak.map(|p| p.1).unwrap_or(peak_fidelity);
    if let Some(min) = spec.expect_peak_min {
        out.checks.push(Check::new("peak_fidelity_min", judged, judged >= min, format!(">= {min}")));
    }
    if let Some(max) = spec.expect_peak_max {
        out.checks.push(Check::new("peak_fidelity_max", judged, judged < max, format!("< {max}")));
    }

    let summary = SimulationSummary {
        t0,
        samples: record.len(),
        peak_time,
        peak_fidelity,
        window,
        window_peak_time: window_peak.map(|p| p.0),
        window_peak_fidelity: window_peak.map(|p| p.1),
        fidelity_at_t0: t0.map(|t| transfer_fidelity(&es, t)),
        fwhm_around_t0: t0.and_then(|t| record.fwhm_around(t)),
        checks: out.checks.clone(),
    };
    let _ = writeln!(
        out.console,
        "peak fidelity {:.9} at t = {:.6} over {} samples",
        peak_fidelity,
        peak_time,
        record.len()
    );
    if let (Some([lo, hi]), Some((t, f))) = (window, window_peak) {
        let _ = writeln!(out.console, "peak in [{lo:.4}, {hi:.4}]: {f:.9} at t = {t:.6}");
    }
    for c in &out.checks {
        let _ = writeln!(out.console, "{}: {} ({:?} {})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.requirement);
    }

    let mut csv = Vec::new();
    record.write_csv(&mut csv)?;
    out.files.push(("transfer.csv".into(), csv));
    out.json("simulation.json", &summary)?;
    if let Some(r) = report {
        out.json("solution.json", &r)?;
    }
    Ok(out)
}

fn exponent_check(name: &str, fitted: Option<f64>, check: &Option<ExponentCheck>) -> Option<Check> {
    check.as_ref().map(|c| {
        let v = fitted.unwrap_or(f64::NAN);
        Check::new(
            format!("{name}_exponent"),
            v,
            (v - c.expect).abs() <= c.tol,
            format!("{} +- {}", c.expect, c.tol),
        )
    })
}

fn validate_analyze(setup: &Setup, spec: &AnalyzeSpec) -> Result<()> {
    if spec.studies.is_empty() {
        return Err(Error::Config("no studies selected".into()));
    }
    if spec.studies.iter().any(|s| s.needs_chain()) {
        setup.model()?;
        setup.spectrum()?;
        check_chain_spec(&spec.chain_spec())?;
    }
    let t = &spec.timing;
    if !(t.max_fraction > 0.0 && t.fit_fraction > 0.0) || t.points < 3 {
        return Err(Error::Config("timing study needs positive fractions and at least 3 points".into()));
    }
    if spec.noise.trials == 0 {
        return Err(Error::Config("noise study needs at least one trial".into()));
    }
    if spec.protocol.points == 0 && spec.protocol.reset_times.is_none() {
        return Err(Error::Config("protocol study needs reset times".into()));
    }
    let r = &spec.rate;
    if r.n_list.iter().any(|n| *n < 2) || r.n_list.is_empty() {
        return Err(Error::Config("rate study needs chain sizes of at least 2".into()));
    }
    if !(r.epsilon > 0.0 && r.epsilon < 1.0) || !(r.e_max > 0.0) {
        return Err(Error::Config("rate study needs epsilon in (0, 1) and positive e_max".into()));
    }
    Ok(())
}

fn cmd_analyze(setup: &Setup, spec: &AnalyzeSpec, seed: u64) -> Result<RunOutput> {
    validate_analyze(setup, spec)?;
    let mut out = RunOutput {
        success: true,
        ..RunOutput::default()
    };
    let chain = if spec.studies.iter().any(|s| s.needs_chain()) {
        let (alpha, es, report) = resolve_chain(setup, &spec.chain_spec())?;
        if let Some(r) = &report {
            out.json("solution.json", r)?;
        }
        Some((alpha, es, setup.t0()?))
    } else {
        None
    };

    let mut studies = serde_json::Map::new();
    for &name in &spec.studies {
        let before = out.checks.len();
        let summary = match (name, &chain) {
            (StudyName::Rate, _) => study_rate(setup, spec, &mut out)?,
            (_, Some((alpha, es, t0))) => match name {
                StudyName::Timing => study_timing(es, *t0, spec, &mut out)?,
                StudyName::Eigenvalue => {
                    let e = &spec.eigenvalue;
                    let st = eigenvalue_perturbation_study(es, *t0, e.level, &e.deltas)?;
                    out.csv(
                        "eigenvalue.csv",
                        "delta,fidelity_loss",
                        st.deltas.iter().zip(&st.fidelity_loss).map(|(d, l)| vec![*d, *l]),
                    );
                    out.checks.extend(exponent_check("eigenvalue", Some(st.fitted_exponent), &e.exponent));
                    json!({ "level": e.level, "fitted_exponent": st.fitted_exponent })
                }
                StudyName::Mixing => study_mixing(es, *t0, spec, &mut out)?,
                StudyName::Noise => {
                    let n = &spec.noise;
                    let model = setup.model()?.full.as_ref();
                    let (st, stats) =
                        noise_scaling_study(model, alpha, *t0, &n.sigmas, n.trials, seed, n.symmetric)?;
                    out.csv(
                        "noise.csv",
                        "sigma,mean_fidelity,mean_loss,min_fidelity,q05,q50,q95",
                        stats.iter().map(|s| {
                            vec![s.sigma, s.mean_fidelity, s.mean_loss, s.min_fidelity, s.q05, s.q50, s.q95]
                        }),
                    );
                    out.checks.extend(exponent_check("noise", Some(st.fitted_exponent), &n.exponent));
                    json!({
                        "trials": n.trials,
                        "symmetric": n.symmetric,
                        "seed": seed,
                        "fitted_exponent": st.fitted_exponent,
                    })
                }
                StudyName::Protocol => study_protocol(es, *t0, spec, &mut out)?,
                StudyName::Rate => unreachable!(),
            },
            (_, None) => unreachable!("chain resolved for chain studies"),
        };
        let mut summary = summary;
        summary["checks"] = serde_json::to_value(&out.checks[before..])?;
        studies.insert(name.as_str().into(), summary);
    }

    for c in &out.checks {
        let _ = writeln!(out.console, "{}: {} = {:?} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.requirement);
    }
    let summary = json!({
        "t0": chain.as_ref().map(|c| c.2),
        "seed": seed,
        "studies": Value::Object(studies),
        "passed": out.checks.iter().all(|c| c.passed),
    });
    out.json("summary.json", &summary)?;
    Ok(out)
}

fn symmetric_grid(half_width: f64, points: usize) -> Vec<f64> {
    let m = points - 1;
    (0..points)
        .map(|k| -half_width + 2.0 * half_width * k as f64 / m as f64)
        .map(|v| if v.abs() < 1e-15 * half_width { 0.0 } else { v })
        .collect()
}

fn study_timing(es: &EigenSystem, t0: f64, spec: &AnalyzeSpec, out: &mut RunOutput) -> Result<Value> {
    let t = &spec.timing;
    let os = OverlapSpectrum::from_eigensystem(es);
    // dense symmetric grid plus a geometric run of small offsets for the fit
    let mut dts = symmetric_grid(t.max_fraction * t0, t.points);
    let fit_max = t.fit_fraction * t0;
    dts.extend((0..8).map(|k| fit_max * 0.5f64.powi(k)));
    dts.sort_by(f64::total_cmp);
    dts.dedup();
    let st = timing_study(&os, t0, &dts, fit_max);
    out.csv(
        "timing.csv",
        "dt,exact,bound,holds",
        st.points.iter().map(|p| vec![p.dt, p.exact, p.bound, if p.holds { 1.0 } else { 0.0 }]),
    );
    let worst = st
        .points
        .iter()
        .map(|p| p.exact - p.bound)
        .fold(f64::INFINITY, f64::min);
    out.checks.push(Check::new("timing_bound_holds", worst, st.all_hold(), "exact - bound >= -1e-9"));
    out.checks.extend(exponent_check("timing", st.fitted_exponent, &t.exponent));
    Ok(json!({ "fit_max": fit_max, "fitted_exponent": st.fitted_exponent, "min_margin": worst }))
}

fn study_mixing(es: &EigenSystem, t0: f64, spec: &AnalyzeSpec, out: &mut RunOutput) -> Result<Value> {
    let m = &spec.mixing;
    let st = eigenvector_mixing_study(es, t0, &m.deltas)?;
    let mut all: Vec<f64> = m.deltas.iter().chain(&m.commutator_deltas).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut rows = Vec::with_capacity(all.len());
    let mut worst: f64 = 0.0;
    for &d in &all {
        let loss = 1.0 - mixing_fidelity(es, t0, d)?;
        let norm = symmetry_commutator(&mixed_hamiltonian(es, d)?).frobenius;
        let predicted = predicted_commutator_norm(es, d);
        worst = worst.max((norm - predicted).abs());
        rows.push(vec![d, loss, norm, predicted]);
    }
    out.csv("mixing.csv", "delta,fidelity_loss,commutator_norm,predicted_norm", rows);
    out.checks.push(Check::new(
        "mixing_commutator",
        worst,
        worst <= m.commutator_tol,
        format!("<= {}", m.commutator_tol),
    ));
    out.checks.extend(exponent_check("mixing", Some(st.study.fitted_exponent), &m.exponent));
    Ok(json!({ "fitted_exponent": st.study.fitted_exponent, "max_commutator_error": worst }))
}

fn study_protocol(es: &EigenSystem, t0: f64, spec: &AnalyzeSpec, out: &mut RunOutput) -> Result<Value> {
    let p = &spec.protocol;
    let times: Vec<f64> = match &p.reset_times {
        Some(v) => v.clone(),
        None => (1..=p.points).map(|k| t0 * k as f64 / (p.points + 1) as f64).collect(),
    };
    let n = es.dim();
    let mut rows = Vec::with_capacity(times.len());
    let (mut worst, mut worst_mirror): (f64, f64) = (0.0, 0.0);
    for &t_d in &times {
        let r = pipelined_protocol(es, t0, t_d)?;
        let mirror = (amplitudes(es, t0 - t_d)[n - 1].norm() - r.leak.sqrt()).abs();
        worst = worst.max(r.max_discrepancy());
        worst_mirror = worst_mirror.max(mirror);
        rows.push(vec![r.t_d, r.leak, r.f0, r.f1, r.f0_simulated, r.f1_simulated, mirror]);
    }
    out.csv("protocol.csv", "t_d,leak,f0,f1,f0_sim,f1_sim,mirror_defect", rows);
    out.checks.push(Check::new("protocol_agreement", worst, worst <= p.tol, format!("<= {}", p.tol)));
    out.checks.push(Check::new("mirror_identity", worst_mirror, worst_mirror <= p.tol, format!("<= {}", p.tol)));
    Ok(json!({ "max_discrepancy": worst, "max_mirror_defect": worst_mirror }))
}

fn study_rate(setup: &Setup, spec: &AnalyzeSpec, out: &mut RunOutput) -> Result<Value> {
    let r = &spec.rate;
    let solver = setup.cfg.solver.clone();
    let st = rate_scaling_study(
        |n| energy_normalized_sms_chain(n, r.e_max, &solver),
        &r.n_list,
        r.epsilon,
        r.samples,
    )?;
    let nan = f64::NAN;
    out.csv(
        "rate.csv",
        "n,t0,t_d,rate",
        st.rows
            .iter()
            .map(|row| vec![row.n as f64, row.t0, row.t_d.unwrap_or(nan), row.rate.unwrap_or(nan)]),
    );
    if let Some([lo, hi]) = r.exponent_range {
        let v = st.fitted_exponent.unwrap_or(nan);
        out.checks.push(Check::new("rate_exponent", v, v >= lo && v <= hi, format!("in [{lo}, {hi}]")));
    }
    Ok(json!({
        "epsilon": r.epsilon,
        "e_max": r.e_max,
        "fitted_exponent": st.fitted_exponent,
        "excluded": st.rows.iter().filter(|row| row.excluded.is_some()).map(|row| row.n).collect::<Vec<_>>(),
    }))
}

#[derive(Debug, Clone, Serialize)]
struct SpectrumReport<'a> {
    decimals: u32,
    grid: f64,
    original: &'a [f64],
    truncated: &'a [f64],
    nudged: &'a [f64],
    t0: f64,
    steps: &'a [i64],
    nudges: Vec<f64>,
    shifts: Vec<f64>,
}

fn cmd_nudge(setup: &Setup) -> Result<RunOutput> {
    let nudged = setup
        .nudged
        .as_ref()
        .ok_or_else(|| Error::Config("nudge needs a spectrum of kind \"nudged\"".into()))?;
    let report = SpectrumReport {
        decimals: nudged.decimals,
        grid: nudged.grid,
        original: &nudged.original,
        truncated: &nudged.truncated,
        nudged: nudged.nudged.values(),
        t0: nudged.t0,
        steps: &nudged.steps,
        nudges: nudged.nudges(),
        shifts: nudged.shifts(),
    };
    let mut out = RunOutput {
        success: true,
        ..RunOutput::default()
    };
    let moved = nudged.steps.iter().filter(|s| **s != 0).count();
    let largest = report.nudges.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let _ = writeln!(
        out.console,
        "{} levels on grid {}: {moved} nudged (largest {largest:.3e}), t0 = {:.6}",
        nudged.original.len(),
        nudged.grid,
        nudged.t0
    );
    out.json("spectrum.json", &report)?;
    Ok(out)
}
