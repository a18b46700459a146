//! Robustness and throughput studies on perfect-transfer chains.
//!
//! Timing errors, single-eigenvalue shifts, two-level eigenvector mixing and
//! manufacturing noise all degrade the fidelity at second order; the studies
//! here measure that as a log-log slope. The pipelined protocol resets site 1
//! at `t_d < t0` and compares closed-form fidelities against direct
//! simulation in the zero-, one- and two-excitation sectors.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    amplitudes, evolve_two_excitations, return_probability, symmetry_commutator,
    transfer_fidelity, OverlapSpectrum, TwoExcitationState,
};
use crate::error::{Error, Result};
use crate::iep::{nearest_neighbor_guess, solve, SolveConfig};
use crate::linalg::{eig_sym, evolve, ComplexMatrix, EigenSystem, SymMatrix, C64};
use crate::model::{HamiltonianModel, NearestNeighbor};
use crate::spectrum::sms;

/// Slack allowed when comparing an exact fidelity with its lower bound.
pub const BOUND_SLACK: f64 = 1e-9;

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_exponent(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("exponent fit needs at least two paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("exponent fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("exponent fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

fn check_deltas(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::InvalidInput("no perturbation sizes given".into()));
    }
    if deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) || deltas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("perturbation sizes must be positive and ascending".into()));
    }
    Ok(())
}

/// Fidelity `|<N| exp(-iHt) |1>|^2` for a spectral decomposition with
/// arbitrary (not necessarily sorted) eigenvalues.
fn spectral_fidelity(values: &DVector<f64>, vectors: &DMatrix<f64>, t: f64) -> f64 {
    let n = values.len();
    let amp: C64 = (0..n)
        .map(|m| C64::from_polar(vectors[(n - 1, m)] * vectors[(0, m)], -values[m] * t))
        .sum();
    amp.norm_sqr()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingPoint {
    pub dt: f64,
    pub exact: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Exact fidelity at `t0 + dt` from the overlap weights, and the lower bound
/// `1 - dt^2/2 sum_n |a_n|^2 (l_n - l_1)^2`.
pub fn timing_error_bound(os: &OverlapSpectrum, t0: f64, dt: f64) -> TimingPoint {
    let l1 = os.eigenvalues[0];
    let mut amp = C64::new(0.0, 0.0);
    let mut second_moment = 0.0;
    for (k, (a, l)) in os.a.iter().zip(&os.eigenvalues).enumerate() {
        let w = a * a;
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        amp += C64::from_polar(sign * w, -l * (t0 + dt));
        second_moment += w * (l - l1).powi(2);
    }
    let exact = amp.norm_sqr();
    let bound = 1.0 - 0.5 * dt * dt * second_moment;
    TimingPoint {
        dt,
        exact,
        bound,
        holds: exact >= bound - BOUND_SLACK,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStudy {
    pub points: Vec<TimingPoint>,
    /// Slope of `ln(1 - f)` against `ln |dt|` over the nonzero offsets with
    /// `|dt| <= fit_max`.
    pub fitted_exponent: Option<f64>,
}

impl TimingStudy {
    pub fn all_hold(&self) -> bool {
        self.points.iter().all(|p| p.holds)
    }
}

pub fn timing_study(os: &OverlapSpectrum, t0: f64, dts: &[f64], fit_max: f64) -> TimingStudy {
    let points: Vec<TimingPoint> = dts.iter().map(|&dt| timing_error_bound(os, t0, dt)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.dt != 0.0 && p.dt.abs() <= fit_max && 1.0 - p.exact > 0.0)
        .map(|p| (p.dt.abs(), 1.0 - p.exact))
        .unzip();
    TimingStudy {
        fitted_exponent: fit_exponent(&x, &y).ok(),
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationStudy {
    pub deltas: Vec<f64>,
    pub fidelity_loss: Vec<f64>,
    pub fitted_exponent: f64,
}

fn finish_study(deltas: &[f64], fidelity_loss: Vec<f64>) -> Result<PerturbationStudy> {
    let fitted_exponent = fit_exponent(deltas, &fidelity_loss)?;
    Ok(PerturbationStudy {
        deltas: deltas.to_vec(),
        fidelity_loss,
        fitted_exponent,
    })
}

/// Fidelity at `t0` after shifting eigenvalue `level` (1-based) by `delta`.
pub fn eigenvalue_shift_fidelity(es: &EigenSystem, t0: f64, level: usize, delta: f64) -> Result<f64> {
    if level == 0 || level > es.dim() {
        return Err(Error::IndexOutOfRange {
            index: level,
            len: es.dim(),
        });
    }
    let mut values = es.eigenvalues().clone();
    values[level - 1] += delta;
    Ok(spectral_fidelity(&values, es.eigenvectors(), t0))
}

pub fn eigenvalue_perturbation_study(
    es: &EigenSystem,
    t0: f64,
    level: usize,
    deltas: &[f64],
) -> Result<PerturbationStudy> {
    check_deltas(deltas)?;
    let loss = deltas
        .iter()
        .map(|&d| eigenvalue_shift_fidelity(es, t0, level, d).map(|f| 1.0 - f))
        .collect::<Result<Vec<_>>>()?;
    finish_study(deltas, loss)
}

/// Eigenvectors after mixing the two lowest levels:
/// `|1> -> sqrt(1-d^2)|1> + d|2>`, `|2> -> d|1> - sqrt(1-d^2)|2>`.
pub fn mixed_eigenvectors(es: &EigenSystem, delta: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidInput(format!("mixing amplitude must lie in [0, 1], got {delta}")));
    }
    let c = (1.0 - delta * delta).sqrt();
    let u = es.eigenvectors();
    let mut v = u.clone();
    let u1 = u.column(0).clone_owned();
    let u2 = u.column(1).clone_owned();
    v.set_column(0, &(&u1 * c + &u2 * delta));
    v.set_column(1, &(&u1 * delta - &u2 * c));
    Ok(v)
}

/// `H' = sum_n mu_n |l_n'><l_n'|` with the mixed pair.
pub fn mixed_hamiltonian(es: &EigenSystem, delta: f64) -> Result<SymMatrix> {
    let v = mixed_eigenvectors(es, delta)?;
    let h = &v * DMatrix::from_diagonal(es.eigenvalues()) * v.transpose();
    SymMatrix::symmetrize(&h)
}

/// `2 d sqrt(1 - d^2) |l_1 - l_2| sqrt(2)`, the Frobenius norm of `[H', S]`.
pub fn predicted_commutator_norm(es: &EigenSystem, delta: f64) -> f64 {
    let gap = (es.eigenvalues()[0] - es.eigenvalues()[1]).abs();
    2.0 * delta * (1.0 - delta * delta).sqrt() * gap * 2f64.sqrt()
}

pub fn mixing_fidelity(es: &EigenSystem, t0: f64, delta: f64) -> Result<f64> {
    let v = mixed_eigenvectors(es, delta)?;
    Ok(spectral_fidelity(es.eigenvalues(), &v, t0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingStudy {
    pub study: PerturbationStudy,
    pub commutator_norms: Vec<f64>,
    pub predicted_norms: Vec<f64>,
}

impl MixingStudy {
    pub fn max_commutator_error(&self) -> f64 {
        self.commutator_norms
            .iter()
            .zip(&self.predicted_norms)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn eigenvector_mixing_study(es: &EigenSystem, t0: f64, deltas: &[f64]) -> Result<MixingStudy> {
    check_deltas(deltas)?;
    let mut loss = Vec::with_capacity(deltas.len());
    let mut commutator_norms = Vec::with_capacity(deltas.len());
    for &d in deltas {
        loss.push(1.0 - mixing_fidelity(es, t0, d)?);
        commutator_norms.push(symmetry_commutator(&mixed_hamiltonian(es, d)?).frobenius);
    }
    Ok(MixingStudy {
        study: finish_study(deltas, loss)?,
        commutator_norms,
        predicted_norms: deltas.iter().map(|&d| predicted_commutator_norm(es, d)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseConfig {
    /// Relative standard deviation of each multiplicative factor `1 + sigma xi`.
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    /// Perturb mirror-shared parameters once (true) or every site and bond
    /// independently (false).
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseStatistics {
    pub sigma: f64,
    pub trials: usize,
    pub symmetric: bool,
    pub mean_fidelity: f64,
    pub mean_loss: f64,
    pub min_fidelity: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Trial `k` draws from its own ChaCha stream `(seed, k)`, so results do not
/// depend on scheduling.
pub fn coupling_noise_monte_carlo<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha: &[f64],
    t0: f64,
    cfg: &NoiseConfig,
) -> Result<NoiseStatistics> {
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise level must be non-negative, got {}", cfg.sigma)));
    }
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    model.validate(alpha)?;
    let layout = if cfg.symmetric {
        None
    } else {
        Some(model.layout(alpha).ok_or_else(|| {
            Error::InvalidInput("model has no per-site layout for asymmetric noise".into())
        })?)
    };

    let fidelities = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(trial as u64);
            let mut factor = || {
                let xi: f64 = StandardNormal.sample(&mut rng);
                1.0 + cfg.sigma * xi
            };
            let h = match &layout {
                None => {
                    let noisy: Vec<f64> = alpha.iter().map(|a| a * factor()).collect();
                    model.build(&noisy)?
                }
                Some(base) => {
                    let mut l = base.clone();
                    l.fields.iter_mut().for_each(|f| *f *= factor());
                    l.bonds.iter_mut().for_each(|b| *b *= factor());
                    l.build()?
                }
            };
            Ok(transfer_fidelity(&eig_sym(&h)?, t0))
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut sorted = fidelities.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| sorted[((q * (sorted.len() - 1) as f64).round()) as usize];
    let mean_fidelity = fidelities.iter().sum::<f64>() / fidelities.len() as f64;
    Ok(NoiseStatistics {
        sigma: cfg.sigma,
        trials: cfg.trials,
        symmetric: cfg.symmetric,
        mean_fidelity,
        mean_loss: fidelities.iter().map(|f| 1.0 - f).sum::<f64>() / fidelities.len() as f64,
        min_fidelity: sorted[0],
        q05: quantile(0.05),
        q50: quantile(0.5),
        q95: quantile(0.95),
    })
}

/// Mean fidelity loss against noise level, with its log-log slope.
pub fn noise_scaling_study<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha: &[f64],
    t0: f64,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
    symmetric: bool,
) -> Result<(PerturbationStudy, Vec<NoiseStatistics>)> {
    check_deltas(sigmas)?;
    let stats = sigmas
        .iter()
        .map(|&sigma| {
            coupling_noise_monte_carlo(
                model,
                alpha,
                t0,
                &NoiseConfig {
                    sigma,
                    trials,
                    seed,
                    symmetric,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = stats.iter().map(|s| s.mean_loss).collect();
    Ok((finish_study(sigmas, loss)?, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reset {
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolResult {
    pub t_d: f64,
    /// `|beta_1(t_d)|^2`.
    pub leak: f64,
    pub f0: f64,
    pub f1: f64,
    pub f0_simulated: f64,
    pub f1_simulated: f64,
}

impl ProtocolResult {
    /// `(formula, simulated)` for the chosen reset.
    pub fn fidelity(&self, reset: Reset) -> (f64, f64) {
        match reset {
            Reset::Zero => (self.f0, self.f0_simulated),
            Reset::One => (self.f1, self.f1_simulated),
        }
    }

    pub fn max_discrepancy(&self) -> f64 {
        (self.f0 - self.f0_simulated)
            .abs()
            .max((self.f1 - self.f1_simulated).abs())
    }
}

/// `f0 = (1 - leak)^2`, `f1 = f0 + leak`.
pub fn protocol_formulas(leak: f64) -> (f64, f64) {
    let f0 = (1.0 - leak).powi(2);
    (f0, f0 + leak)
}

/// Resets site 1 at `t_d` and reads site `N` at `t0`.
///
/// Reset to |0>: the state becomes `leak |vac><vac| + |phi><phi|` with
/// `phi = exp(-iHt_d)|1> - beta_1|1>`, propagated in the vacuum-plus-one
/// sector. Reset to |1>: with probability `1 - leak` the pair state
/// `|1> ^ phi` is propagated in the two-excitation sector; otherwise the
/// single excitation restarts from site 1.
pub fn pipelined_protocol(es: &EigenSystem, t0: f64, t_d: f64) -> Result<ProtocolResult> {
    if !(t_d > 0.0 && t_d < t0) {
        return Err(Error::InvalidInput(format!("reset time {t_d} must lie in (0, {t0})")));
    }
    let n = es.dim();
    let beta = amplitudes(es, t_d);
    let leak = beta[0].norm_sqr();
    let (f0, f1) = protocol_formulas(leak);

    let mut phi = beta.clone();
    phi[0] = C64::new(0.0, 0.0);
    let rest = t0 - t_d;
    let v = evolve(es, rest);

    // vacuum + one-excitation density matrix, vacuum at index 0
    let mut rho = ComplexMatrix::zeros(n + 1, n + 1);
    rho[(0, 0)] = C64::new(leak, 0.0);
    for i in 0..n {
        for j in 0..n {
            rho[(i + 1, j + 1)] = phi[i] * phi[j].conj();
        }
    }
    let mut w = ComplexMatrix::identity(n + 1, n + 1);
    w.view_mut((1, 1), (n, n)).copy_from(&v);
    let rho_end = &w * rho * w.adjoint();
    let f0_simulated = rho_end[(n, n)].re;

    let mut e1 = vec![C64::new(0.0, 0.0); n];
    e1[0] = C64::new(1.0, 0.0);
    let pair_branch = if leak < 1.0 {
        let pair = TwoExcitationState::wedge(&e1, &phi)?.normalized()?;
        evolve_two_excitations(es, &pair, rest)?.occupation(n - 1)
    } else {
        0.0
    };
    let restart_branch = v[(n - 1, 0)].norm_sqr();
    let f1_simulated = (1.0 - leak) * pair_branch + leak * restart_branch;

    Ok(ProtocolResult {
        t_d,
        leak,
        f0,
        f1,
        f0_simulated,
        f1_simulated,
    })
}

/// Earliest `t_d` after which `|beta_1|^2` stays at or below `eps` until
/// `t0`, located on a uniform scan and refined by bisection.
pub fn earliest_reset_time(es: &EigenSystem, t0: f64, eps: f64, samples: usize) -> Option<f64> {
    let samples = samples.max(2);
    let step = t0 / samples as f64;
    let leak = |t: f64| return_probability(es, t);
    let last_above = (0..samples)
        .rev()
        .find(|&k| leak(k as f64 * step) > eps)?;
    let mut lo = last_above as f64 * step;
    let mut hi = (last_above + 1) as f64 * step;
    if leak(hi) > eps {
        return None;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if leak(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi < t0).then_some(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub t0: f64,
    pub t_d: Option<f64>,
    pub rate: Option<f64>,
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudy {
    pub epsilon: f64,
    pub rows: Vec<RateRow>,
    /// Slope of `ln(rate)` against `ln(n)` over the included chains.
    pub fitted_exponent: Option<f64>,
}

pub const DEFAULT_SCAN_SAMPLES: usize = 20_000;

/// `family(n)` yields a chain and its transfer time.
pub fn rate_scaling_study(
    family: impl Fn(usize) -> Result<(EigenSystem, f64)>,
    n_list: &[usize],
    eps: f64,
    samples: usize,
) -> Result<RateStudy> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("leak budget must lie in (0, 1), got {eps}")));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let (es, t0) = family(n)?;
        let row = match earliest_reset_time(&es, t0, eps, samples) {
            Some(t_d) => RateRow {
                n,
                t0,
                t_d: Some(t_d),
                rate: Some(1.0 / t_d),
                excluded: None,
            },
            None => RateRow {
                n,
                t0,
                t_d: None,
                rate: None,
                excluded: Some(format!("site-1 population never settles below {eps} before t0")),
            },
        };
        rows.push(row);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.rate.map(|rate| (r.n as f64, rate)))
        .unzip();
    Ok(RateStudy {
        epsilon: eps,
        fitted_exponent: fit_exponent(&x, &y).ok(),
        rows,
    })
}

/// Nearest-neighbour chain with an equally spaced spectrum whose largest
/// eigenvalue is `e_max`, solved by the inverse eigenvalue iteration.
pub fn energy_normalized_sms_chain(n: usize, e_max: f64, cfg: &SolveConfig) -> Result<(EigenSystem, f64)> {
    if n < 2 {
        return Err(Error::InvalidInput("chain needs at least 2 sites".into()));
    }
    let spacing = 2.0 * e_max / (n as f64 - 1.0);
    let target = sms(n, spacing)?;
    let model = NearestNeighbor::new(n)?;
    let result = solve(&model, &nearest_neighbor_guess(&target), &target, cfg)?;
    if !result.converged {
        return Err(Error::IllPosed(format!(
            "equally spaced {n}-site chain did not converge (residual {:e})",
            result.final_residual()
        )));
    }
    Ok((result.final_eigensystem, target.t0().expect("sms sets t0")))
}
