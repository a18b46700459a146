//! Target spectra and the phase condition for perfect transfer.
//!
//! A strictly ascending spectrum `l_1 < ... < l_N` transfers perfectly at `t0`
//! when `exp(-i l_n t0) (-1)^n` is the same phase for every level, i.e. when
//! `l_n t0 / pi - n` agrees modulo 2 across levels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eig_sym;
use crate::model::{uniform_parameters, HamiltonianModel};

/// Phase tolerance (in units of pi) for admissibility.
pub const PST_TOL: f64 = 1e-9;

/// Default upper bound on the transfer-time search.
pub const DEFAULT_MAX_T0: f64 = 1e4 * PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t0: Option<f64>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "spectrum needs at least 2 levels, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum"));
        }
        if let Some(k) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Degenerate(format!(
                "levels {} and {} are not strictly ascending ({} >= {})",
                k + 1,
                k + 2,
                values[k],
                values[k + 1]
            )));
        }
        Ok(Self { values, t0: None })
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = Some(t0);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t0(&self) -> Option<f64> {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min_gap(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `l -> c l`; a known `t0` becomes `t0 / c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("scale factor must be positive, got {c}")));
        }
        let mut s = Self::new(self.values.iter().map(|v| v * c).collect())?;
        s.t0 = self.t0.map(|t| t / c);
        Ok(s)
    }

    /// The `t0` carried by this spectrum, or the smallest admissible one.
    pub fn resolve_t0(&self) -> Result<f64> {
        match self.t0 {
            Some(t) => Ok(t),
            None => transfer_time(self),
        }
    }
}

/// Equally spaced levels centred on zero, `l_k = spacing (k - (n+1)/2)`,
/// with `t0 = pi / spacing`.
pub fn sms(n: usize, spacing: f64) -> Result<Spectrum> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidInput(format!("level spacing must be positive, got {spacing}")));
    }
    let centre = (n as f64 + 1.0) / 2.0;
    let values = (1..=n).map(|k| spacing * (k as f64 - centre)).collect();
    Ok(Spectrum::new(values)?.with_t0(PI / spacing))
}

/// `2 cos(k pi / (n+1))`, the uniform nearest-neighbour chain, ascending.
pub fn uniform_chain_spectrum(n: usize) -> Result<Spectrum> {
    let mut values: Vec<f64> = (1..=n)
        .map(|k| 2.0 * (k as f64 * PI / (n as f64 + 1.0)).cos())
        .collect();
    values.reverse();
    Spectrum::new(values)
}

/// Spectrum of the uniform member of a chain family (zero fields, unit
/// couplings or spacings).
pub fn model_uniform_spectrum<M: HamiltonianModel + ?Sized>(model: &M) -> Result<Spectrum> {
    let alpha = uniform_parameters(&model.labels())
        .ok_or_else(|| Error::InvalidInput("model has no uniform configuration".into()))?;
    let es = eig_sym(&model.build(&alpha)?)?;
    Spectrum::new(es.eigenvalues().iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PstReport {
    pub t0: f64,
    pub admissible: bool,
    /// 1-based level whose phase is used as the common reference.
    pub reference_level: usize,
    /// Per-level phase deviation from the reference, in units of pi.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

fn wrap_mod2(x: f64) -> f64 {
    x - 2.0 * (x / 2.0).round()
}

/// Tests the phase condition at `t0`. The reference phase is taken from the
/// level that agrees with the most other levels, so a single outlier shows up
/// as one nonzero deviation.
pub fn check_pst(s: &Spectrum, t0: f64) -> Result<PstReport> {
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::InvalidInput(format!("transfer time must be positive, got {t0}")));
    }
    let offsets: Vec<f64> = s
        .values
        .iter()
        .enumerate()
        .map(|(k, l)| l * t0 / PI - (k + 1) as f64)
        .collect();

    let mut reference = 0;
    let mut best = 0;
    for (j, oj) in offsets.iter().enumerate() {
        let agree = offsets
            .iter()
            .filter(|o| wrap_mod2(*o - oj).abs() <= PST_TOL)
            .count();
        if agree > best {
            best = agree;
            reference = j;
        }
    }
    let deviations: Vec<f64> = offsets
        .iter()
        .map(|o| wrap_mod2(o - offsets[reference]).abs())
        .collect();
    let max_deviation = deviations.iter().cloned().fold(0.0, f64::max);
    Ok(PstReport {
        t0,
        admissible: max_deviation <= PST_TOL,
        reference_level: reference + 1,
        deviations,
        max_deviation,
    })
}

/// Smallest admissible `t0` up to [`DEFAULT_MAX_T0`].
pub fn transfer_time(s: &Spectrum) -> Result<f64> {
    transfer_time_within(s, DEFAULT_MAX_T0)
}

/// Every consecutive gap must satisfy `gap t0 / pi` odd, so candidates are
/// odd multiples of `pi / min_gap`.
pub fn transfer_time_within(s: &Spectrum, max_t0: f64) -> Result<f64> {
    let gap = s.min_gap();
    let base = PI / gap;
    let mut m = 1u64;
    loop {
        let t0 = base * m as f64;
        if t0 > max_t0 * (1.0 + 1e-12) {
            return Err(Error::Inadmissible(format!(
                "no admissible transfer time up to {max_t0}"
            )));
        }
        if check_pst(s, t0)?.admissible {
            return Ok(t0);
        }
        m += 2;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NudgedSpectrum {
    pub decimals: u32,
    pub grid: f64,
    pub original: Vec<f64>,
    pub truncated: Vec<f64>,
    pub nudged: Spectrum,
    /// Signed grid steps applied to each truncated level.
    pub steps: Vec<i64>,
    pub t0: f64,
}

impl NudgedSpectrum {
    /// `nudged - truncated` per level.
    pub fn nudges(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| s as f64 * self.grid).collect()
    }

    /// `nudged - original` per level.
    pub fn shifts(&self) -> Vec<f64> {
        self.nudged
            .values()
            .iter()
            .zip(&self.original)
            .map(|(n, o)| n - o)
            .collect()
    }
}

/// Rounds every level to the grid `10^-decimals`, then moves levels by whole
/// grid steps so that consecutive levels differ by an odd number of steps.
/// The result is admissible at `t0 = pi / grid`.
///
/// Among the two global parity classes and the up/down choice for each
/// misaligned level, the assignment with the least total displacement from
/// the original values that stays strictly ascending is chosen.
pub fn truncate_and_nudge(s: &Spectrum, decimals: u32) -> Result<NudgedSpectrum> {
    let scale = 10f64.powi(decimals as i32);
    let grid = 1.0 / scale;
    let lam = s.values();
    let q: Vec<i64> = lam.iter().map(|l| (l * scale).round() as i64).collect();
    if let Some(k) = q.windows(2).position(|w| w[0] == w[1]) {
        return Err(Error::Degenerate(format!(
            "levels {} and {} coincide after truncation to {decimals} decimals",
            k + 1,
            k + 2
        )));
    }

    let cost = |k: usize, v: i64| (v as f64 / scale - lam[k]).abs();
    let mut best: Option<(f64, Vec<i64>)> = None;
    for class in 0..2i64 {
        let options: Vec<Vec<i64>> = q
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if (v - (k as i64 + 1) - class).rem_euclid(2) == 0 {
                    vec![v]
                } else {
                    vec![v - 1, v + 1]
                }
            })
            .collect();
        if let Some(found) = cheapest_ascending(&options, cost) {
            if best.as_ref().is_none_or(|b| found.0 < b.0) {
                best = Some(found);
            }
        }
    }
    let (_, chosen) = best.ok_or_else(|| {
        Error::Degenerate(format!(
            "no strictly ascending parity assignment at {decimals} decimals"
        ))
    })?;

    let t0 = PI * scale;
    let nudged = Spectrum::new(chosen.iter().map(|&v| v as f64 / scale).collect())?.with_t0(t0);
    Ok(NudgedSpectrum {
        decimals,
        grid,
        original: lam.to_vec(),
        truncated: q.iter().map(|&v| v as f64 / scale).collect(),
        steps: chosen.iter().zip(&q).map(|(c, v)| c - v).collect(),
        nudged,
        t0,
    })
}

/// Dynamic program over per-level options (at most two each), minimizing
/// total cost subject to strict ascent.
fn cheapest_ascending(
    options: &[Vec<i64>],
    cost: impl Fn(usize, i64) -> f64,
) -> Option<(f64, Vec<i64>)> {
    // table[k][o] = (best cost ending with option o at level k, predecessor option)
    let mut table: Vec<Vec<Option<(f64, usize)>>> = Vec::with_capacity(options.len());
    table.push(options[0].iter().map(|&v| Some((cost(0, v), 0))).collect());
    for k in 1..options.len() {
        let row = options[k]
            .iter()
            .map(|&v| {
                options[k - 1]
                    .iter()
                    .enumerate()
                    .filter_map(|(p, &pv)| {
                        let (c, _) = table[k - 1][p]?;
                        (pv < v).then_some((c, p))
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(c, p)| (c + cost(k, v), p))
            })
            .collect();
        table.push(row);
    }

    let last = options.len() - 1;
    let (mut o, total) = table[last]
        .iter()
        .enumerate()
        .filter_map(|(o, e)| e.map(|(c, _)| (o, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let mut chosen = vec![0; options.len()];
    for k in (0..=last).rev() {
        chosen[k] = options[k][o];
        o = table[k][o].map(|(_, p)| p).unwrap_or(0);
    }
    Some((total, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sms_examples() {
        let s = sms(6, 1.0).unwrap();
        assert!(close(s.values(), &[-2.5, -1.5, -0.5, 0.5, 1.5, 2.5], 0.0));
        assert_eq!(s.t0(), Some(PI));
        let s = sms(2, 2.0).unwrap();
        assert!(close(s.values(), &[-1.0, 1.0], 0.0));
        assert_eq!(s.t0(), Some(PI / 2.0));
        let s = sms(5, 2.0).unwrap();
        assert!(close(s.values(), &[-4.0, -2.0, 0.0, 2.0, 4.0], 0.0));
        assert_eq!(s.t0(), Some(PI / 2.0));
        assert!(sms(4, 0.0).is_err());
    }

    #[test]
    fn rejects_non_ascending() {
        assert!(matches!(Spectrum::new(vec![1.0, 1.0]), Err(Error::Degenerate(_))));
        assert!(Spectrum::new(vec![2.0, 1.0]).is_err());
        assert!(Spectrum::new(vec![1.0]).is_err());
    }

    #[test]
    fn check_pst_on_sms_and_single_violation() {
        let s = sms(6, 1.0).unwrap();
        let r = check_pst(&s, PI).unwrap();
        assert!(r.admissible);
        assert!(r.deviations.iter().all(|d| *d < 1e-15));

        let mut v = s.values().to_vec();
        v[0] += 0.01;
        let r = check_pst(&Spectrum::new(v).unwrap(), PI).unwrap();
        assert!(!r.admissible);
        assert!((r.deviations[0] - 0.01).abs() < 1e-12);
        assert!(r.deviations[1..].iter().all(|d| *d < 1e-12));
        assert!(check_pst(&s, 0.0).is_err());
    }

    #[test]
    fn uniform_spectrum_closed_form() {
        let s = uniform_chain_spectrum(2).unwrap();
        assert!(close(s.values(), &[-1.0, 1.0], 1e-15));
        let s = uniform_chain_spectrum(3).unwrap();
        assert!(close(s.values(), &[-2f64.sqrt(), 0.0, 2f64.sqrt()], 1e-15));
    }

    #[test]
    fn transfer_time_examples() {
        assert!((transfer_time(&sms(6, 1.0).unwrap()).unwrap() - PI).abs() < 1e-12);
        assert!((transfer_time(&sms(6, 2.0).unwrap()).unwrap() - PI / 2.0).abs() < 1e-12);
        // 0, 1, 4: gaps 1 and 3, admissible at pi
        let s = Spectrum::new(vec![0.0, 1.0, 4.0]).unwrap();
        assert!((transfer_time(&s).unwrap() - PI).abs() < 1e-12);
        // gaps 1 and 2 can never both be odd multiples
        let s = Spectrum::new(vec![0.0, 1.0, 3.0]).unwrap();
        assert!(matches!(transfer_time(&s), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn nudge_symmetric_pair_needs_one_step() {
        // -100 and 100 grid units differ by an even count
        let n = truncate_and_nudge(&Spectrum::new(vec![-1.004, 1.004]).unwrap(), 2).unwrap();
        assert!(close(&n.truncated, &[-1.0, 1.0], 1e-15));
        assert_eq!(n.steps.iter().map(|s| s.abs()).sum::<i64>(), 1);
        assert!((n.t0 - 100.0 * PI).abs() < 1e-9);
        assert!(check_pst(&n.nudged, n.t0).unwrap().max_deviation <= 1e-12);
    }

    #[test]
    fn nudge_odd_pair_already_admissible() {
        let n = truncate_and_nudge(&Spectrum::new(vec![-1.01, 1.00]).unwrap(), 2).unwrap();
        assert_eq!(n.steps, vec![0, 0]);
        assert!(close(n.nudged.values(), &[-1.01, 1.0], 1e-15));
        assert!(check_pst(&n.nudged, n.t0).unwrap().admissible);
    }

    #[test]
    fn nudge_collision_is_degenerate() {
        let s = Spectrum::new(vec![0.1, 0.2, 1.3]).unwrap();
        assert!(matches!(truncate_and_nudge(&s, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn nudge_keeps_order_when_both_neighbours_move() {
        // adjacent grid points in the same parity class must not swap
        let s = Spectrum::new(vec![0.0, 0.014, 0.026]).unwrap();
        let n = truncate_and_nudge(&s, 2).unwrap();
        let v = n.nudged.values();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert!(check_pst(&n.nudged, n.t0).unwrap().admissible);
    }

    #[test]
    fn scaling_rescales_t0() {
        let s = sms(6, 1.0).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled = s.scaled(c).unwrap();
            assert!((scaled.t0().unwrap() - PI / c).abs() < 1e-12);
            let found = transfer_time(&Spectrum::new(scaled.values().to_vec()).unwrap()).unwrap();
            assert!((found - PI / c).abs() < 1e-12);
        }
    }
}
