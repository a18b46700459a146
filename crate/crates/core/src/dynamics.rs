//! Exact transfer dynamics and mirror-symmetry diagnostics.
//!
//! One excitation starting on site 1 evolves as `beta_n(t) = <n|exp(-iHt)|1>`;
//! the transfer fidelity is `|beta_N(t)|^2`. Two excitations are tracked as an
//! antisymmetric pair table `psi[i][j] = -psi[j][i]`, which evolves as
//! `V psi V^T` with `V = exp(-iHt)`.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{evolve, ComplexMatrix, EigenSystem, SymMatrix, C64};

/// End amplitudes smaller than this make a level invisible from site 1.
const ZERO_OVERLAP: f64 = 1e-12;

/// Mirror-magnitude tolerance used by [`parity_check`].
pub const PARITY_TOL: f64 = 1e-10;

/// `beta_n(t)` for every site `n`.
pub fn amplitudes(es: &EigenSystem, t: f64) -> Vec<C64> {
    let n = es.dim();
    let u = es.eigenvectors();
    let weights: Vec<C64> = (0..n)
        .map(|m| C64::from_polar(u[(0, m)], -es.eigenvalues()[m] * t))
        .collect();
    (0..n)
        .map(|site| (0..n).map(|m| weights[m] * u[(site, m)]).sum())
        .collect()
}

fn end_amplitudes(es: &EigenSystem, t: f64) -> (C64, C64) {
    let n = es.dim();
    let u = es.eigenvectors();
    let mut b1 = C64::new(0.0, 0.0);
    let mut bn = C64::new(0.0, 0.0);
    for m in 0..n {
        let w = C64::from_polar(u[(0, m)], -es.eigenvalues()[m] * t);
        b1 += w * u[(0, m)];
        bn += w * u[(n - 1, m)];
    }
    (b1, bn)
}

/// `|<N|exp(-iHt)|1>|^2`.
pub fn transfer_fidelity(es: &EigenSystem, t: f64) -> f64 {
    end_amplitudes(es, t).1.norm_sqr()
}

/// `|<1|exp(-iHt)|1>|^2`, the probability of still finding the excitation on site 1.
pub fn return_probability(es: &EigenSystem, t: f64) -> f64 {
    end_amplitudes(es, t).0.norm_sqr()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub times: Vec<f64>,
    pub beta1: Vec<C64>,
    pub beta_n: Vec<C64>,
    pub fidelity: Vec<f64>,
}

impl TransferRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(time, fidelity)` of the largest sample.
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.peak_within(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn peak_within(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        self.times
            .iter()
            .zip(&self.fidelity)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .fold(None, |best: Option<(f64, f64)>, (&t, &f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((t, f)),
            })
    }

    /// Full width at half maximum of the fidelity peak nearest `centre`.
    /// Crossings are located by linear interpolation between samples; `None`
    /// if the peak does not fall below half height inside the record.
    pub fn fwhm_around(&self, centre: f64) -> Option<f64> {
        let f = &self.fidelity;
        let t = &self.times;
        if f.len() < 3 {
            return None;
        }
        let mut i = t
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - centre).abs().total_cmp(&(b.1 - centre).abs()))?
            .0;
        loop {
            if i + 1 < f.len() && f[i + 1] > f[i] {
                i += 1;
            } else if i > 0 && f[i - 1] > f[i] {
                i -= 1;
            } else {
                break;
            }
        }
        let half = 0.5 * f[i];
        let cross = |a: usize, b: usize| {
            let s = (half - f[a]) / (f[b] - f[a]);
            t[a] + s * (t[b] - t[a])
        };
        let left = (0..i).rev().find(|&k| f[k] < half).map(|k| cross(k, k + 1))?;
        let right = (i + 1..f.len()).find(|&k| f[k] < half).map(|k| cross(k - 1, k))?;
        Some(right - left)
    }

    /// Columns `time, re_beta1, im_beta1, re_betaN, im_betaN, fidelity`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,re_beta1,im_beta1,re_betaN,im_betaN,fidelity")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{:?},{:?},{:?},{:?},{:?},{:?}",
                self.times[k],
                self.beta1[k].re,
                self.beta1[k].im,
                self.beta_n[k].re,
                self.beta_n[k].im,
                self.fidelity[k]
            )?;
        }
        Ok(())
    }
}

/// Samples `beta_1`, `beta_N` and the fidelity on a caller-supplied grid.
pub fn fidelity_curve(es: &EigenSystem, times: &[f64]) -> Result<TransferRecord> {
    if times.is_empty() {
        return Err(Error::InvalidInput("time grid is empty".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("time grid"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("time grid must be ascending".into()));
    }
    let samples: Vec<(C64, C64)> = times.par_iter().map(|&t| end_amplitudes(es, t)).collect();
    Ok(TransferRecord {
        times: times.to_vec(),
        beta1: samples.iter().map(|s| s.0).collect(),
        beta_n: samples.iter().map(|s| s.1).collect(),
        fidelity: samples.iter().map(|s| s.1.norm_sqr()).collect(),
    })
}

/// Evenly spaced grid `start, start + step, ..` up to `end` inclusive.
pub fn time_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid time grid [{start}, {end}] with step {step}"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    let mut grid: Vec<f64> = (0..count).map(|k| start + k as f64 * step).collect();
    // close the grid on `end` when it is not a whole number of steps away
    let last = grid[count - 1];
    if end - last > 1e-9 * step {
        grid.push(end);
    } else {
        grid[count - 1] = end;
    }
    Ok(grid)
}

/// Overlaps `a_n = <l_n|1>` of the initial state with each eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSpectrum {
    pub a: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl OverlapSpectrum {
    pub fn from_eigensystem(es: &EigenSystem) -> Self {
        Self {
            a: (0..es.dim()).map(|m| es.component(0, m)).collect(),
            eigenvalues: es.eigenvalues().iter().copied().collect(),
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.a.iter().map(|a| a * a).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityReport {
    /// `sign(<1|l_n> <N|l_n>)` per level; 0 where the end overlap vanishes.
    pub signs: Vec<i8>,
    pub alternates: bool,
    /// Max over sites and levels of `||<i|l_n>| - |<N+1-i|l_n>||`.
    pub max_mirror_mismatch: f64,
    /// 1-based levels with no weight on site 1; transfer through them is impossible.
    pub zero_overlap_levels: Vec<usize>,
    pub passes: bool,
}

pub fn parity_check(es: &EigenSystem) -> ParityReport {
    let n = es.dim();
    let mut signs = Vec::with_capacity(n);
    let mut zero_overlap_levels = Vec::new();
    let mut mismatch = 0.0f64;
    for level in 0..n {
        let first = es.component(0, level);
        let last = es.component(n - 1, level);
        if first.abs() < ZERO_OVERLAP {
            zero_overlap_levels.push(level + 1);
            signs.push(0);
        } else {
            signs.push(if first * last > 0.0 { 1 } else { -1 });
        }
        for site in 0..n {
            let d = es.component(site, level).abs() - es.component(n - 1 - site, level).abs();
            mismatch = mismatch.max(d.abs());
        }
    }
    let alternates =
        signs.iter().all(|s| *s != 0) && signs.windows(2).all(|w| w[0] == -w[1]);
    ParityReport {
        passes: alternates && mismatch <= PARITY_TOL && zero_overlap_levels.is_empty(),
        signs,
        alternates,
        max_mirror_mismatch: mismatch,
        zero_overlap_levels,
    }
}

/// The exchange operator `S[i][j] = delta(i, N+1-j)`.
pub fn exchange_operator(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i + j == n - 1 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Commutator {
    pub matrix: DMatrix<f64>,
    pub frobenius: f64,
    pub max_abs: f64,
}

/// `[H, S] = HS - SH`; vanishes exactly for centrosymmetric `H`.
pub fn symmetry_commutator(h: &SymMatrix) -> Commutator {
    let s = exchange_operator(h.dim());
    let m = h.as_matrix();
    let matrix = m * &s - &s * m;
    Commutator {
        frobenius: matrix.norm(),
        max_abs: matrix.amax(),
        matrix,
    }
}

/// Antisymmetric two-excitation amplitudes over site pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoExcitationState {
    table: ComplexMatrix,
}

const ANTISYMMETRY_TOL: f64 = 1e-12;

impl TwoExcitationState {
    pub fn new(table: ComplexMatrix) -> Result<Self> {
        if !table.is_square() {
            return Err(Error::InvalidInput("pair table must be square".into()));
        }
        let n = table.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max(table[(i, i)].norm());
            for j in (i + 1)..n {
                worst = worst.max((table[(i, j)] + table[(j, i)]).norm());
            }
        }
        if worst > ANTISYMMETRY_TOL {
            return Err(Error::NotAntisymmetric(worst));
        }
        Ok(Self { table })
    }

    /// `|i> ^ |j>` for 0-based sites `i != j`.
    pub fn basis(n: usize, i: usize, j: usize) -> Result<Self> {
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidInput(format!("invalid site pair ({i}, {j}) for n = {n}")));
        }
        let mut table = ComplexMatrix::zeros(n, n);
        table[(i, j)] = C64::new(1.0, 0.0);
        table[(j, i)] = C64::new(-1.0, 0.0);
        Ok(Self { table })
    }

    /// `a ^ b`: `psi[i][j] = a_i b_j - a_j b_i`. Not normalized.
    pub fn wedge(a: &[C64], b: &[C64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::InvalidInput("wedge factors have different lengths".into()));
        }
        let n = a.len();
        Ok(Self {
            table: ComplexMatrix::from_fn(n, n, |i, j| a[i] * b[j] - a[j] * b[i]),
        })
    }

    pub fn dim(&self) -> usize {
        self.table.nrows()
    }

    pub fn table(&self) -> &ComplexMatrix {
        &self.table
    }

    /// Amplitude on the unordered pair `{i, j}` with `i < j`.
    pub fn pair(&self, i: usize, j: usize) -> C64 {
        self.table[(i, j)]
    }

    /// Sum of `|psi[i][j]|^2` over pairs `i < j`.
    pub fn norm_sqr(&self) -> f64 {
        self.table.iter().map(|z| z.norm_sqr()).sum::<f64>() / 2.0
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput("cannot normalize a zero pair state".into()));
        }
        Ok(Self {
            table: self.table.map(|z| z / norm),
        })
    }

    /// Probability that `site` is excited.
    pub fn occupation(&self, site: usize) -> f64 {
        self.table.row(site).iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Applies `exp(-iHt)` to both excitations.
pub fn evolve_two_excitations(
    es: &EigenSystem,
    state: &TwoExcitationState,
    t: f64,
) -> Result<TwoExcitationState> {
    if state.dim() != es.dim() {
        return Err(Error::InvalidInput(format!(
            "pair table is {n}x{n} for a {m}-site chain",
            n = state.dim(),
            m = es.dim()
        )));
    }
    TwoExcitationState::new(state.table.clone())?;
    let v = evolve(es, t);
    Ok(TwoExcitationState {
        table: &v * &state.table * v.transpose(),
    })
}
