//! Run configuration: one TOML document per run, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::iep::SolveConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out` wins.
    pub output: Option<PathBuf>,
    /// Seed for stochastic studies; `--seed` wins.
    pub seed: Option<u64>,
    pub model: Option<ModelSpec>,
    pub spectrum: Option<SpectrumSpec>,
    #[serde(default)]
    pub solver: SolveConfig,
    pub simulate: Option<SimulateSpec>,
    pub analyze: Option<AnalyzeSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindSpec {
    NearestNeighbor,
    PowerLaw,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKindSpec,
    pub sites: usize,
    /// Power-law exponent; for nearest-neighbour chains it only sets the
    /// coupling-to-spacing map in the printed table.
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    /// Which parameters the solver may move; the rest stay at `initial`.
    pub free: Option<Vec<bool>>,
    #[serde(default)]
    pub initial: InitialSpec,
}

fn default_exponent() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Named(InitialKind),
    Values(Vec<f64>),
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Named(InitialKind::Guess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// Zero fields with matched nearest-neighbour couplings.
    Guess,
    /// Zero fields, unit couplings or spacings.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NudgeSource {
    /// Eigenvalues of the configured model at uniform parameters.
    ModelUniform,
    /// `2 cos(k pi / (n + 1))`.
    UniformChain,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumSpec {
    /// Equally spaced levels, given by spacing or by largest level.
    Sms {
        spacing: Option<f64>,
        max_level: Option<f64>,
    },
    Explicit {
        values: Vec<f64>,
        t0: Option<f64>,
    },
    UniformChain,
    Nudged {
        decimals: u32,
        source: NudgeSource,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    /// Solve the configured model against the configured spectrum.
    #[default]
    Solve,
    /// The model at uniform parameters.
    Uniform,
    /// Parameters listed in `parameters`.
    Inline,
    /// `alpha_star` from a previous solution.json.
    File,
}

/// Where a simulated or analysed chain comes from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainSpec {
    pub chain: ChainKind,
    pub parameters: Option<Vec<f64>>,
    pub solution: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnits {
    #[default]
    Absolute,
    /// Multiples of the spectrum's transfer time.
    T0,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default)]
    pub chain: ChainKind,
    pub parameters: Option<Vec<f64>>,
    pub solution: Option<PathBuf>,
    #[serde(default)]
    pub start: f64,
    pub end: f64,
    pub step: f64,
    #[serde(default)]
    pub units: TimeUnits,
    /// Half-width, as a fraction of t0, of the window in which the peak
    /// around t0 is reported.
    pub window: Option<f64>,
    pub expect_peak_min: Option<f64>,
    pub expect_peak_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyName {
    Timing,
    Eigenvalue,
    Mixing,
    Noise,
    Protocol,
    Rate,
}

impl StudyName {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyName::Timing => "timing",
            StudyName::Eigenvalue => "eigenvalue",
            StudyName::Mixing => "mixing",
            StudyName::Noise => "noise",
            StudyName::Protocol => "protocol",
            StudyName::Rate => "rate",
        }
    }

    /// Rate studies build their own chain family.
    pub fn needs_chain(self) -> bool {
        self != StudyName::Rate
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentCheck {
    pub expect: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    /// Offsets span `[-max_fraction t0, max_fraction t0]`.
    #[serde(default = "default_timing_max")]
    pub max_fraction: f64,
    #[serde(default = "default_timing_points")]
    pub points: usize,
    /// Exponent fit uses `|dt| <= fit_fraction t0`.
    #[serde(default = "default_timing_fit")]
    pub fit_fraction: f64,
    pub exponent: Option<ExponentCheck>,
}

fn default_timing_max() -> f64 {
    0.1
}
fn default_timing_points() -> usize {
    41
}
fn default_timing_fit() -> f64 {
    0.005
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            max_fraction: default_timing_max(),
            points: default_timing_points(),
            fit_fraction: default_timing_fit(),
            exponent: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenvalueSpec {
    #[serde(default = "default_level")]
    pub level: usize,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    pub exponent: Option<ExponentCheck>,
}

fn default_level() -> usize {
    1
}
fn default_deltas() -> Vec<f64> {
    vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3]
}

impl Default for EigenvalueSpec {
    fn default() -> Self {
        Self {
            level: default_level(),
            deltas: default_deltas(),
            exponent: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSpec {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Extra amplitudes at which only the commutator norm is checked.
    #[serde(default)]
    pub commutator_deltas: Vec<f64>,
    #[serde(default = "default_tight")]
    pub commutator_tol: f64,
    pub exponent: Option<ExponentCheck>,
}

fn default_tight() -> f64 {
    1e-9
}

impl Default for MixingSpec {
    fn default() -> Self {
        Self {
            deltas: default_deltas(),
            commutator_deltas: Vec::new(),
            commutator_tol: default_tight(),
            exponent: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_true")]
    pub symmetric: bool,
    pub exponent: Option<ExponentCheck>,
}

fn default_sigmas() -> Vec<f64> {
    vec![1e-4, 3e-4, 1e-3, 3e-3]
}
fn default_trials() -> usize {
    200
}
fn default_true() -> bool {
    true
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigmas: default_sigmas(),
            trials: default_trials(),
            symmetric: true,
            exponent: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    /// Interior sweep points in (0, t0), unless `reset_times` is given.
    #[serde(default = "default_protocol_points")]
    pub points: usize,
    pub reset_times: Option<Vec<f64>>,
    #[serde(default = "default_tight")]
    pub tol: f64,
}

fn default_protocol_points() -> usize {
    49
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            points: default_protocol_points(),
            reset_times: None,
            tol: default_tight(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Largest eigenvalue shared by every chain in the family.
    #[serde(default = "default_e_max")]
    pub e_max: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub exponent_range: Option<[f64; 2]>,
}

fn default_n_list() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_e_max() -> f64 {
    1.0
}
fn default_samples() -> usize {
    crate::analysis::DEFAULT_SCAN_SAMPLES
}

impl Default for RateSpec {
    fn default() -> Self {
        Self {
            n_list: default_n_list(),
            epsilon: default_epsilon(),
            e_max: default_e_max(),
            samples: default_samples(),
            exponent_range: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSpec {
    pub studies: Vec<StudyName>,
    #[serde(default)]
    pub chain: ChainKind,
    pub parameters: Option<Vec<f64>>,
    pub solution: Option<PathBuf>,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default)]
    pub eigenvalue: EigenvalueSpec,
    #[serde(default)]
    pub mixing: MixingSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub rate: RateSpec,
}

impl SimulateSpec {
    pub fn chain_spec(&self) -> ChainSpec {
        ChainSpec {
            chain: self.chain,
            parameters: self.parameters.clone(),
            solution: self.solution.clone(),
        }
    }
}

impl AnalyzeSpec {
    pub fn chain_spec(&self) -> ChainSpec {
        ChainSpec {
            chain: self.chain,
            parameters: self.parameters.clone(),
            solution: self.solution.clone(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative solution paths are taken from the config's directory
        let base = path.parent().unwrap_or(Path::new(""));
        for solution in [
            cfg.simulate.as_mut().and_then(|s| s.solution.as_mut()),
            cfg.analyze.as_mut().and_then(|a| a.solution.as_mut()),
        ]
        .into_iter()
        .flatten()
        {
            if solution.is_relative() {
                *solution = base.join(&*solution);
            }
        }
        Ok(cfg)
    }
}
