//! Parameterized single-excitation Hamiltonians `alpha -> H(alpha)`.
//!
//! Built-in chains share parameters between mirror-image sites and bonds, so
//! every matrix they produce is centrosymmetric by construction. Parameters
//! are ordered fields first (`B_1 .. B_ceil(n/2)`), then bonds
//! (`J_k` or `r_k`, `k = 1 .. floor(n/2)`), counted from the chain end.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NearestNeighbor,
    PowerLawPositions,
    CustomCentrosymmetric,
}

/// Semantic tag of one parameter; indices are 1-based as in a printed table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ParamLabel {
    Field(usize),
    Spacing(usize),
    Coupling(usize),
    Other(usize),
}

impl fmt::Display for ParamLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamLabel::Field(k) => write!(f, "B{k}"),
            ParamLabel::Spacing(k) => write!(f, "r{k}"),
            ParamLabel::Coupling(k) => write!(f, "J{k}"),
            ParamLabel::Other(k) => write!(f, "a{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub labels: Vec<ParamLabel>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, labels: Vec<ParamLabel>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::ParameterCount {
                expected: labels.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, labels })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, label: ParamLabel) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| *l == label)
            .map(|i| self.values[i])
    }
}

/// A family of real symmetric, centrosymmetric matrices indexed by a real
/// parameter vector.
pub trait HamiltonianModel: Send + Sync {
    fn n_sites(&self) -> usize;

    fn labels(&self) -> Vec<ParamLabel>;

    fn kind(&self) -> ModelKind;

    fn build(&self, alpha: &[f64]) -> Result<SymMatrix>;

    /// `dH/d alpha_i`. Defaults to a central finite difference.
    fn derivative(&self, alpha: &[f64], i: usize) -> Result<SymMatrix> {
        let h = 1e-6 * alpha.get(i).map_or(1.0, |a| a.abs().max(1.0));
        finite_difference_derivative(self, alpha, i, h)
    }

    /// Rejects parameter vectors outside the model's domain.
    fn validate(&self, alpha: &[f64]) -> Result<()> {
        check_len(alpha, self.n_params())?;
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(())
    }

    /// Unshared per-site/per-bond description, when the model has one. Used to
    /// apply noise that breaks mirror symmetry.
    fn layout(&self, _alpha: &[f64]) -> Option<ChainLayout> {
        None
    }

    fn n_params(&self) -> usize {
        self.labels().len()
    }

    fn params(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::new(values, self.labels())
    }
}

fn check_len(alpha: &[f64], expected: usize) -> Result<()> {
    if alpha.len() != expected {
        return Err(Error::ParameterCount {
            expected,
            got: alpha.len(),
        });
    }
    Ok(())
}

fn check_index(i: usize, len: usize) -> Result<()> {
    if i >= len {
        return Err(Error::IndexOutOfRange { index: i, len });
    }
    Ok(())
}

/// Mirror-shared field index for 0-based site `i`.
pub fn mirror_site(n: usize, i: usize) -> usize {
    i.min(n - 1 - i)
}

/// Mirror-shared bond index for the 0-based bond between sites `k` and `k+1`.
pub fn mirror_bond(n: usize, k: usize) -> usize {
    k.min(n - 2 - k)
}

fn n_fields(n: usize) -> usize {
    n.div_ceil(2)
}

fn n_bonds(n: usize) -> usize {
    n / 2
}

fn chain_labels(n: usize, bond: fn(usize) -> ParamLabel) -> Vec<ParamLabel> {
    (1..=n_fields(n))
        .map(ParamLabel::Field)
        .chain((1..=n_bonds(n)).map(bond))
        .collect()
}

fn check_sites(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("chain needs at least 2 sites, got {n}")));
    }
    Ok(())
}

/// Tridiagonal chain: fields on the diagonal, couplings between neighbours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestNeighbor {
    n: usize,
}

impl NearestNeighbor {
    pub fn new(n: usize) -> Result<Self> {
        check_sites(n)?;
        Ok(Self { n })
    }
}

impl HamiltonianModel for NearestNeighbor {
    fn n_sites(&self) -> usize {
        self.n
    }

    fn labels(&self) -> Vec<ParamLabel> {
        chain_labels(self.n, ParamLabel::Coupling)
    }

    fn kind(&self) -> ModelKind {
        ModelKind::NearestNeighbor
    }

    fn build(&self, alpha: &[f64]) -> Result<SymMatrix> {
        self.validate(alpha)?;
        let n = self.n;
        let (fields, couplings) = alpha.split_at(n_fields(n));
        SymMatrix::from_fn(n, |i, j| {
            if i == j {
                fields[mirror_site(n, i)]
            } else if j == i + 1 {
                couplings[mirror_bond(n, i)]
            } else {
                0.0
            }
        })
    }

    fn derivative(&self, alpha: &[f64], i: usize) -> Result<SymMatrix> {
        self.validate(alpha)?;
        check_index(i, self.n_params())?;
        let n = self.n;
        let nf = n_fields(n);
        SymMatrix::from_fn(n, |r, c| {
            let hit = if i < nf {
                r == c && mirror_site(n, r) == i
            } else {
                c == r + 1 && mirror_bond(n, r) == i - nf
            };
            if hit {
                1.0
            } else {
                0.0
            }
        })
    }

    fn layout(&self, alpha: &[f64]) -> Option<ChainLayout> {
        self.validate(alpha).ok()?;
        let n = self.n;
        let (fields, couplings) = alpha.split_at(n_fields(n));
        Some(ChainLayout {
            fields: (0..n).map(|i| fields[mirror_site(n, i)]).collect(),
            bonds: (0..n - 1).map(|k| couplings[mirror_bond(n, k)]).collect(),
            law: BondLaw::Coupling,
        })
    }
}

/// Sites on a line with all-to-all couplings `1/d^p`, where `d` is built up
/// from mirror-symmetric spacings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawChain {
    n: usize,
    exponent: f64,
}

impl PowerLawChain {
    pub fn new(n: usize, exponent: f64) -> Result<Self> {
        check_sites(n)?;
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidInput(format!(
                "coupling exponent must be positive, got {exponent}"
            )));
        }
        Ok(Self { n, exponent })
    }

    /// Dipolar chain, `p = 3`.
    pub fn dipolar(n: usize) -> Result<Self> {
        Self::new(n, 3.0)
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Distance between sites `i < j`, always evaluated on the mirror
    /// representative so that mirrored entries are bitwise equal.
    fn distance(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let n = self.n;
        let (a, b) = if i <= n - 1 - j { (i, j) } else { (n - 1 - j, n - 1 - i) };
        x[b] - x[a]
    }

    /// Site coordinates with site 1 at the origin.
    pub fn positions(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.validate(alpha)?;
        let n = self.n;
        let spacings = &alpha[n_fields(n)..];
        let mut x = Vec::with_capacity(n);
        x.push(0.0);
        for k in 0..n - 1 {
            x.push(x[k] + spacings[mirror_bond(n, k)]);
        }
        Ok(x)
    }
}

impl HamiltonianModel for PowerLawChain {
    fn n_sites(&self) -> usize {
        self.n
    }

    fn labels(&self) -> Vec<ParamLabel> {
        chain_labels(self.n, ParamLabel::Spacing)
    }

    fn kind(&self) -> ModelKind {
        ModelKind::PowerLawPositions
    }

    fn validate(&self, alpha: &[f64]) -> Result<()> {
        check_len(alpha, self.n_params())?;
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        let nf = n_fields(self.n);
        if let Some((k, r)) = alpha[nf..].iter().enumerate().find(|(_, r)| **r <= 0.0) {
            return Err(Error::Domain(format!("spacing r{} = {r} is not positive", k + 1)));
        }
        Ok(())
    }

    fn build(&self, alpha: &[f64]) -> Result<SymMatrix> {
        let x = self.positions(alpha)?;
        let n = self.n;
        let fields = &alpha[..n_fields(n)];
        let p = self.exponent;
        SymMatrix::from_fn(n, |i, j| {
            if i == j {
                fields[mirror_site(n, i)]
            } else {
                self.distance(&x, i, j).powf(-p)
            }
        })
    }

    fn derivative(&self, alpha: &[f64], i: usize) -> Result<SymMatrix> {
        self.validate(alpha)?;
        check_index(i, self.n_params())?;
        let n = self.n;
        let nf = n_fields(n);
        if i < nf {
            return SymMatrix::from_fn(n, |r, c| {
                if r == c && mirror_site(n, r) == i {
                    1.0
                } else {
                    0.0
                }
            });
        }
        let s = i - nf;
        let x = self.positions(alpha)?;
        let p = self.exponent;
        SymMatrix::from_fn(n, |r, c| {
            if r == c {
                return 0.0;
            }
            // number of bonds in [r, c) that share spacing s
            let hits = (r..c).filter(|&k| mirror_bond(n, k) == s).count();
            if hits == 0 {
                0.0
            } else {
                let d = self.distance(&x, r, c);
                -p * hits as f64 * d.powf(-p - 1.0)
            }
        })
    }

    fn layout(&self, alpha: &[f64]) -> Option<ChainLayout> {
        self.validate(alpha).ok()?;
        let n = self.n;
        let (fields, spacings) = alpha.split_at(n_fields(n));
        Some(ChainLayout {
            fields: (0..n).map(|i| fields[mirror_site(n, i)]).collect(),
            bonds: (0..n - 1).map(|k| spacings[mirror_bond(n, k)]).collect(),
            law: BondLaw::PowerLaw {
                exponent: self.exponent,
            },
        })
    }
}

/// How the bond entries of a [`ChainLayout`] turn into matrix elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BondLaw {
    /// Bonds are nearest-neighbour couplings.
    Coupling,
    /// Bonds are spacings; every pair couples as `1/d^p`.
    PowerLaw { exponent: f64 },
}

/// Per-site fields and per-bond values with no mirror sharing.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLayout {
    pub fields: Vec<f64>,
    pub bonds: Vec<f64>,
    pub law: BondLaw,
}

impl ChainLayout {
    /// The resulting matrix; centrosymmetric only if the layout is.
    pub fn build(&self) -> Result<SymMatrix> {
        let n = self.fields.len();
        if self.bonds.len() + 1 != n {
            return Err(Error::InvalidInput("layout needs n-1 bonds for n sites".into()));
        }
        match self.law {
            BondLaw::Coupling => SymMatrix::from_fn(n, |i, j| {
                if i == j {
                    self.fields[i]
                } else if j == i + 1 {
                    self.bonds[i]
                } else {
                    0.0
                }
            }),
            BondLaw::PowerLaw { exponent } => {
                if let Some(r) = self.bonds.iter().find(|r| **r <= 0.0) {
                    return Err(Error::Domain(format!("spacing {r} is not positive")));
                }
                let mut x = vec![0.0; n];
                for k in 0..n - 1 {
                    x[k + 1] = x[k] + self.bonds[k];
                }
                SymMatrix::from_fn(n, |i, j| {
                    if i == j {
                        self.fields[i]
                    } else {
                        (x[j] - x[i]).powf(-exponent)
                    }
                })
            }
        }
    }
}

pub type BuildFn = dyn Fn(&[f64]) -> Result<SymMatrix> + Send + Sync;
pub type DerivativeFn = dyn Fn(&[f64], usize) -> Result<SymMatrix> + Send + Sync;

/// User-supplied family. Outputs are checked for centrosymmetry; derivatives
/// fall back to finite differences when no callback is given.
#[derive(Clone)]
pub struct CustomCentrosymmetric {
    n: usize,
    labels: Vec<ParamLabel>,
    build: Arc<BuildFn>,
    derivative: Option<Arc<DerivativeFn>>,
}

impl fmt::Debug for CustomCentrosymmetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCentrosymmetric")
            .field("n", &self.n)
            .field("labels", &self.labels)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl CustomCentrosymmetric {
    pub fn new(
        n: usize,
        labels: Vec<ParamLabel>,
        build: impl Fn(&[f64]) -> Result<SymMatrix> + Send + Sync + 'static,
    ) -> Result<Self> {
        check_sites(n)?;
        Ok(Self {
            n,
            labels,
            build: Arc::new(build),
            derivative: None,
        })
    }

    pub fn with_derivative(
        mut self,
        derivative: impl Fn(&[f64], usize) -> Result<SymMatrix> + Send + Sync + 'static,
    ) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }
}

/// Relative tolerance on the mirror symmetry of user-built matrices.
const CUSTOM_MIRROR_TOL: f64 = 1e-12;

impl HamiltonianModel for CustomCentrosymmetric {
    fn n_sites(&self) -> usize {
        self.n
    }

    fn labels(&self) -> Vec<ParamLabel> {
        self.labels.clone()
    }

    fn kind(&self) -> ModelKind {
        ModelKind::CustomCentrosymmetric
    }

    fn build(&self, alpha: &[f64]) -> Result<SymMatrix> {
        self.validate(alpha)?;
        let h = (self.build)(alpha)?;
        if h.dim() != self.n {
            return Err(Error::InvalidInput(format!(
                "custom model produced a {d}x{d} matrix, expected {n}",
                d = h.dim(),
                n = self.n
            )));
        }
        let scale = h.as_matrix().abs().max().max(1.0);
        if h.centrosymmetry_defect() > CUSTOM_MIRROR_TOL * scale {
            return Err(Error::InvalidInput("custom model is not centrosymmetric".into()));
        }
        Ok(h)
    }

    fn derivative(&self, alpha: &[f64], i: usize) -> Result<SymMatrix> {
        check_index(i, self.n_params())?;
        match &self.derivative {
            Some(d) => {
                self.validate(alpha)?;
                d(alpha, i)
            }
            None => {
                let h = 1e-6 * alpha.get(i).map_or(1.0, |a| a.abs().max(1.0));
                finite_difference_derivative(self, alpha, i, h)
            }
        }
    }
}

/// Exposes a subset of another model's parameters; the rest stay at fixed
/// values.
#[derive(Debug, Clone)]
pub struct MaskedModel<M> {
    inner: M,
    base: Vec<f64>,
    free: Vec<usize>,
}

impl<M: HamiltonianModel> MaskedModel<M> {
    /// `base` supplies the full parameter vector; `mask[i]` marks entry `i` free.
    pub fn new(inner: M, base: Vec<f64>, mask: &[bool]) -> Result<Self> {
        check_len(&base, inner.n_params())?;
        if mask.len() != inner.n_params() {
            return Err(Error::ParameterCount {
                expected: inner.n_params(),
                got: mask.len(),
            });
        }
        let free: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.then_some(i))
            .collect();
        if free.is_empty() {
            return Err(Error::InvalidInput("mask leaves no free parameters".into()));
        }
        Ok(Self { inner, base, free })
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    /// The full parameter vector for the inner model.
    pub fn expand(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        check_len(alpha, self.free.len())?;
        let mut full = self.base.clone();
        for (&i, &a) in self.free.iter().zip(alpha) {
            full[i] = a;
        }
        Ok(full)
    }

    /// The free entries of a full parameter vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }
}

impl<M: HamiltonianModel> HamiltonianModel for MaskedModel<M> {
    fn n_sites(&self) -> usize {
        self.inner.n_sites()
    }

    fn labels(&self) -> Vec<ParamLabel> {
        let all = self.inner.labels();
        self.free.iter().map(|&i| all[i]).collect()
    }

    fn kind(&self) -> ModelKind {
        self.inner.kind()
    }

    fn validate(&self, alpha: &[f64]) -> Result<()> {
        self.inner.validate(&self.expand(alpha)?)
    }

    fn build(&self, alpha: &[f64]) -> Result<SymMatrix> {
        self.inner.build(&self.expand(alpha)?)
    }

    fn derivative(&self, alpha: &[f64], i: usize) -> Result<SymMatrix> {
        check_index(i, self.free.len())?;
        self.inner.derivative(&self.expand(alpha)?, self.free[i])
    }

    fn layout(&self, alpha: &[f64]) -> Option<ChainLayout> {
        self.inner.layout(&self.expand(alpha).ok()?)
    }
}

impl<T: HamiltonianModel + ?Sized> HamiltonianModel for Box<T> {
    fn n_sites(&self) -> usize {
        (**self).n_sites()
    }
    fn labels(&self) -> Vec<ParamLabel> {
        (**self).labels()
    }
    fn kind(&self) -> ModelKind {
        (**self).kind()
    }
    fn build(&self, alpha: &[f64]) -> Result<SymMatrix> {
        (**self).build(alpha)
    }
    fn derivative(&self, alpha: &[f64], i: usize) -> Result<SymMatrix> {
        (**self).derivative(alpha, i)
    }
    fn validate(&self, alpha: &[f64]) -> Result<()> {
        (**self).validate(alpha)
    }
    fn layout(&self, alpha: &[f64]) -> Option<ChainLayout> {
        (**self).layout(alpha)
    }
}

/// `(H(alpha + h e_i) - H(alpha - h e_i)) / 2h`.
pub fn finite_difference_derivative<M: HamiltonianModel + ?Sized>(
    model: &M,
    alpha: &[f64],
    i: usize,
    h: f64,
) -> Result<SymMatrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    check_len(alpha, model.n_params())?;
    check_index(i, alpha.len())?;
    let mut plus = alpha.to_vec();
    let mut minus = alpha.to_vec();
    plus[i] += h;
    minus[i] -= h;
    let hp = model.build(&plus)?;
    let hm = model.build(&minus)?;
    let diff = (hp.as_matrix() - hm.as_matrix()) / (2.0 * h);
    SymMatrix::from_fn(model.n_sites(), |r, c| diff[(r, c)])
}

/// Zero fields, unit couplings or spacings: the uniform chain of a built-in
/// family. `None` when a label has no uniform meaning.
pub fn uniform_parameters(labels: &[ParamLabel]) -> Option<Vec<f64>> {
    labels
        .iter()
        .map(|l| match l {
            ParamLabel::Field(_) => Some(0.0),
            ParamLabel::Spacing(_) | ParamLabel::Coupling(_) => Some(1.0),
            ParamLabel::Other(_) => None,
        })
        .collect()
}
