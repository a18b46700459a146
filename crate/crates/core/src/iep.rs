//! Newton iteration for the inverse eigenvalue problem.
//!
//! Each step pairs the current eigenvalues with the target in ascending
//! order, builds the Hellmann-Feynman sensitivity matrix
//! `K[n][i] = u_n^T (dH/d alpha_i) u_n`, and solves `K d = target - mu`
//! (exactly, or in the least-squares sense when there are fewer parameters
//! than levels). Eigenvector changes only affect off-diagonal terms, so they
//! never enter the update.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_sym, solve_least_squares as lsq, solve_linear, EigenSystem, SymMatrix};
use crate::model::{HamiltonianModel, NearestNeighbor, ParamVector, PowerLawChain};
use crate::spectrum::Spectrum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Target max |mu_n - l_n|.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step scale in (0, 1].
    pub damping: f64,
    /// Fraction of the target's minimum gap below which the current spectrum
    /// counts as degenerate.
    pub min_gap_guard: f64,
    pub max_halvings: usize,
    /// Adds `c * 1` to every matrix before diagonalizing. Eigenvectors and
    /// pairings are unchanged; kept for parity with shift-based orderings.
    pub identity_shift: Option<f64>,
    /// Least-squares mode stops when the residual norm changes by less than
    /// this fraction over `stagnation_window` iterations.
    pub stagnation_rtol: f64,
    pub stagnation_window: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 60,
            damping: 1.0,
            min_gap_guard: 0.01,
            max_halvings: 20,
            identity_shift: None,
            stagnation_rtol: 1e-8,
            stagnation_window: 3,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.min_gap_guard >= 0.0 && self.min_gap_guard < 1.0) {
            return Err(Error::InvalidInput("min_gap_guard must lie in [0, 1)".into()));
        }
        if self.stagnation_window < 1 {
            return Err(Error::InvalidInput("stagnation_window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Residual reached `tol`.
    Converged,
    /// Least-squares residual stopped improving.
    Stagnated,
    MaxIterations,
    /// No backtracked step reduced the residual.
    StepRejected,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub alpha_star: ParamVector,
    /// Max |mu_n - l_n| at the start and after every accepted step.
    pub residual_history: Vec<f64>,
    /// Euclidean norm of the same residuals.
    pub residual_norm_history: Vec<f64>,
    /// Step scale accepted at each iteration.
    pub step_scales: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub least_squares: bool,
    pub target: Spectrum,
    pub final_eigensystem: EigenSystem,
}

impl SolveResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::INFINITY)
    }

    pub fn achieved(&self) -> Vec<f64> {
        self.final_eigensystem.eigenvalues().iter().copied().collect()
    }

    /// Exact convergence, or a stationary least-squares fit.
    pub fn succeeded(&self) -> bool {
        self.converged || (self.least_squares && self.termination == Termination::Stagnated)
    }
}

/// Ascending-order pairing `(actual index, target index)`. For two sorted
/// sequences this minimizes the sum of squared differences.
pub fn match_eigenvalues(actual: &[f64], target: &[f64]) -> Result<Vec<(usize, usize)>> {
    if actual.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "cannot pair {} eigenvalues with {} targets",
            actual.len(),
            target.len()
        )));
    }
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        idx
    };
    Ok(order(actual).into_iter().zip(order(target)).collect())
}

/// Hellmann-Feynman sensitivities `d mu_n / d alpha_i`, rows in ascending
/// eigenvalue order.
pub fn jacobian<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha: &[f64],
    es: &EigenSystem,
) -> Result<DMatrix<f64>> {
    if es.has_ties() {
        return Err(Error::Degenerate(
            "tied eigenvalues make the sensitivity matrix undefined".into(),
        ));
    }
    let n = es.dim();
    let u = es.eigenvectors();
    let mut k = DMatrix::zeros(n, model.n_params());
    for i in 0..model.n_params() {
        let du = model.derivative(alpha, i)?.as_matrix() * u;
        for level in 0..n {
            k[(level, i)] = u.column(level).dot(&du.column(level));
        }
    }
    Ok(k)
}

fn decompose<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha: &[f64],
    shift: Option<f64>,
) -> Result<EigenSystem> {
    let h = model.build(alpha)?;
    match shift {
        None => eig_sym(&h),
        Some(c) => {
            let shifted = SymMatrix::from_fn(h.dim(), |i, j| {
                h.get(i, j) + if i == j { c } else { 0.0 }
            })?;
            let es = eig_sym(&shifted)?;
            es.with_eigenvalues(es.eigenvalues().map(|v| v - c))
        }
    }
}

fn residual(target: &Spectrum, es: &EigenSystem) -> DVector<f64> {
    DVector::from_iterator(
        target.len(),
        target
            .values()
            .iter()
            .zip(es.eigenvalues().iter())
            .map(|(l, mu)| l - mu),
    )
}

fn check_gap(es: &EigenSystem, target: &Spectrum, guard: f64) -> Result<()> {
    let floor = guard * target.min_gap();
    if es.has_ties() || es.min_gap() < floor {
        return Err(Error::Degenerate(format!(
            "current minimum gap {:e} is below {:e}",
            es.min_gap(),
            floor
        )));
    }
    Ok(())
}

/// Full-rank solve: requires as many parameters as sites.
pub fn solve<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha0: &[f64],
    target: &Spectrum,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    if model.n_params() != model.n_sites() {
        return Err(Error::InvalidInput(format!(
            "full-rank solve needs {} parameters, model has {}",
            model.n_sites(),
            model.n_params()
        )));
    }
    iterate(model, alpha0, target, cfg, false)
}

/// Gauss-Newton fit with fewer parameters than levels.
pub fn solve_least_squares<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha0: &[f64],
    target: &Spectrum,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    if model.n_params() > model.n_sites() {
        return Err(Error::InvalidInput(format!(
            "model has {} parameters for {} levels",
            model.n_params(),
            model.n_sites()
        )));
    }
    iterate(model, alpha0, target, cfg, true)
}

fn iterate<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha0: &[f64],
    target: &Spectrum,
    cfg: &SolveConfig,
    least_squares: bool,
) -> Result<SolveResult> {
    cfg.validate()?;
    if target.len() != model.n_sites() {
        return Err(Error::InvalidInput(format!(
            "target has {} levels for a {}-site model",
            target.len(),
            model.n_sites()
        )));
    }
    model.validate(alpha0)?;

    let mut alpha = alpha0.to_vec();
    let mut es = decompose(model, &alpha, cfg.identity_shift)?;
    check_gap(&es, target, cfg.min_gap_guard)?;

    let mut residual_history = Vec::new();
    let mut residual_norm_history = Vec::new();
    let mut step_scales = Vec::new();
    let mut e = residual(target, &es);

    let termination = loop {
        let r = e.amax();
        let rn = e.norm();
        residual_history.push(r);
        residual_norm_history.push(rn);

        if r <= cfg.tol {
            break Termination::Converged;
        }
        if least_squares && stagnated(&residual_norm_history, cfg) {
            break Termination::Stagnated;
        }
        if step_scales.len() >= cfg.max_iter {
            break Termination::MaxIterations;
        }

        let k = jacobian(model, &alpha, &es)?;
        let delta = if least_squares {
            lsq(&k, &e)?.x
        } else {
            match solve_linear(&k, &e) {
                Ok(sol) => sol.x,
                Err(Error::Singular { rank, dim }) => {
                    return Err(Error::IllPosed(format!(
                        "sensitivity matrix has rank {rank} < {dim}"
                    )))
                }
                Err(other) => return Err(other),
            }
        };

        let current = if least_squares { rn } else { r };
        match backtrack(model, &alpha, &delta, target, cfg, current, least_squares) {
            Some((scale, next_alpha, next_es, next_e)) => {
                step_scales.push(scale);
                alpha = next_alpha;
                es = next_es;
                e = next_e;
            }
            None if least_squares => break Termination::Stagnated,
            None => break Termination::StepRejected,
        }
    };

    let final_eigensystem = if cfg.identity_shift.is_some() {
        eig_sym(&model.build(&alpha)?)?
    } else {
        es
    };
    Ok(SolveResult {
        alpha_star: model.params(alpha)?,
        iterations: step_scales.len(),
        converged: termination == Termination::Converged,
        residual_history,
        residual_norm_history,
        step_scales,
        termination,
        least_squares,
        target: target.clone(),
        final_eigensystem,
    })
}

fn stagnated(norms: &[f64], cfg: &SolveConfig) -> bool {
    let w = cfg.stagnation_window;
    if norms.len() <= w {
        return false;
    }
    let last = norms[norms.len() - 1];
    let before = norms[norms.len() - 1 - w];
    (before - last).abs() <= cfg.stagnation_rtol * before
}

type Accepted = (f64, Vec<f64>, EigenSystem, DVector<f64>);

/// Halves the step until the residual decreases with the iterate in-domain.
/// Out-of-domain trials are rejected, never clamped.
fn backtrack<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha: &[f64],
    delta: &DVector<f64>,
    target: &Spectrum,
    cfg: &SolveConfig,
    current: f64,
    least_squares: bool,
) -> Option<Accepted> {
    let mut scale = cfg.damping;
    for _ in 0..=cfg.max_halvings {
        let trial: Vec<f64> = alpha
            .iter()
            .zip(delta.iter())
            .map(|(a, d)| a + scale * d)
            .collect();
        if model.validate(&trial).is_ok() {
            if let Ok(es) = decompose(model, &trial, cfg.identity_shift) {
                if check_gap(&es, target, cfg.min_gap_guard).is_ok() {
                    let e = residual(target, &es);
                    let r = if least_squares { e.norm() } else { e.amax() };
                    if r < current {
                        return Some((scale, trial, es, e));
                    }
                }
            }
        }
        scale *= 0.5;
    }
    None
}

/// Starting point for a nearest-neighbour chain: uniform couplings sized to
/// the target bandwidth, fields at the target mean.
pub fn nearest_neighbor_guess(target: &Spectrum) -> Vec<f64> {
    let n = target.len();
    let v = target.values();
    let mean = v.iter().sum::<f64>() / n as f64;
    let width = v[n - 1] - v[0];
    let j = width / (4.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos());
    let nf = n.div_ceil(2);
    (0..n).map(|i| if i < nf { mean } else { j }).collect()
}

/// Starting point for a power-law chain: solve the nearest-neighbour problem
/// for the same target, map couplings to spacings `r = |J|^(-1/p)`, zero
/// fields.
pub fn power_law_guess(model: &PowerLawChain, target: &Spectrum, cfg: &SolveConfig) -> Result<Vec<f64>> {
    let n = model.n_sites();
    let nn = NearestNeighbor::new(n)?;
    let sol = solve(&nn, &nearest_neighbor_guess(target), target, cfg)?;
    let nf = n.div_ceil(2);
    let p = model.exponent();
    Ok(sol
        .alpha_star
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| if i < nf { 0.0 } else { v.abs().powf(-1.0 / p) })
        .collect())
}
