//! Separable linear operators `L = Σ_q α_q L_1^q ⋯ L_N^q` and the
//! Crank–Nicolson pair built from them.

use nalgebra::DMatrix;

use crate::basis::{FactorKind, C64};
use crate::cp::CPTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTerm {
    pub alpha: C64,
    pub factors: Vec<FactorKind>,
}

impl OperatorTerm {
    pub fn is_identity(&self) -> bool {
        self.factors.iter().all(|&f| f == FactorKind::Identity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableOperator {
    ndims: usize,
    terms: Vec<OperatorTerm>,
}

impl SeparableOperator {
    pub fn new(ndims: usize, terms: Vec<OperatorTerm>) -> Result<Self> {
        if ndims == 0 {
            return Err(Error::ShapeMismatch("operator needs at least one dimension".into()));
        }
        if terms.is_empty() {
            return Err(Error::InvalidParameter("operator needs at least one term".into()));
        }
        for (q, t) in terms.iter().enumerate() {
            if t.factors.len() != ndims {
                return Err(Error::ShapeMismatch(format!(
                    "term {q} has {} factors, operator has {ndims} dimensions",
                    t.factors.len()
                )));
            }
            if !t.alpha.re.is_finite() || !t.alpha.im.is_finite() {
                return Err(Error::InvalidParameter(format!("term {q} has a non-finite weight")));
            }
        }
        Ok(Self { ndims, terms })
    }

    pub fn identity(ndims: usize, alpha: C64) -> Self {
        Self { ndims, terms: vec![OperatorTerm { alpha, factors: vec![FactorKind::Identity; ndims] }] }
    }

    pub fn ndims(&self) -> usize {
        self.ndims
    }

    pub fn terms(&self) -> &[OperatorTerm] {
        &self.terms
    }

    pub fn separation_rank(&self) -> usize {
        self.terms.len()
    }

    /// Galerkin application; output term `q·r_f + l` is term `q` applied to term `l`.
    pub fn apply(&self, f: &CPTensor) -> Result<CPTensor> {
        if f.ndims() != self.ndims {
            return Err(Error::ShapeMismatch(format!(
                "operator has {} dimensions, tensor has {}",
                self.ndims,
                f.ndims()
            )));
        }
        let r = f.rank();
        let rl = self.terms.len();
        let mut factors = Vec::with_capacity(self.ndims);
        for (k, spec) in f.specs().iter().enumerate() {
            let mut out = DMatrix::zeros(spec.modes(), rl * r);
            for (q, term) in self.terms.iter().enumerate() {
                let mut block = match term.factors[k] {
                    FactorKind::Identity => f.factor(k).clone(),
                    kind => spec.factor_matrix(kind) * f.factor(k),
                };
                if k == 0 {
                    block *= term.alpha;
                }
                out.columns_mut(q * r, r).copy_from(&block);
            }
            factors.push(out);
        }
        CPTensor::from_factors(f.specs().to_vec(), factors)
    }
}

/// `dz/dt`-advection generator `-Σ_{jk} C_jk z_k ∂_j`, terms ordered `q = j·N + k`.
pub fn advection_operator(c: &DMatrix<f64>) -> Result<SeparableOperator> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(Error::ShapeMismatch("advection matrix must be square".into()));
    }
    let mut terms = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            let mut factors = vec![FactorKind::Identity; n];
            if j == k {
                factors[j] = FactorKind::CoordTimesDerivative;
            } else {
                factors[j] = FactorKind::Derivative;
                factors[k] = FactorKind::CoordMultiply;
            }
            terms.push(OperatorTerm { alpha: C64::new(-c[(j, k)], 0.0), factors });
        }
    }
    SeparableOperator::new(n, terms)
}

/// Linearized BGK generator on `(x1, x2, x3, v1, v2, v3)`: `-ν I - Σ_i v_i ∂_{x_i}`.
pub fn bgk_operator(nu: f64) -> Result<SeparableOperator> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidParameter(format!("collision frequency must be positive, got {nu}")));
    }
    let mut terms = vec![OperatorTerm { alpha: C64::new(-nu, 0.0), factors: vec![FactorKind::Identity; 6] }];
    for i in 0..3 {
        let mut factors = vec![FactorKind::Identity; 6];
        factors[i] = FactorKind::Derivative;
        factors[3 + i] = FactorKind::CoordMultiply;
        terms.push(OperatorTerm { alpha: C64::new(-1.0, 0.0), factors });
    }
    SeparableOperator::new(6, terms)
}

/// `A = I − (dt/2) L` and `B = I + (dt/2) L`. All-identity terms of `L` fold into
/// the leading identity term, so `A` and `B` share factor lists term by term.
#[derive(Debug, Clone, PartialEq)]
pub struct CrankNicolsonPair {
    pub a: SeparableOperator,
    pub b: SeparableOperator,
    pub dt: f64,
}

impl CrankNicolsonPair {
    /// `η_q`, the weights of `A`.
    pub fn eta(&self) -> Vec<C64> {
        self.a.terms.iter().map(|t| t.alpha).collect()
    }

    /// `ζ_q`, the weights of `B`.
    pub fn zeta(&self) -> Vec<C64> {
        self.b.terms.iter().map(|t| t.alpha).collect()
    }
}

pub fn crank_nicolson_pair(l: &SeparableOperator, dt: f64) -> Result<CrankNicolsonPair> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let h = C64::new(dt / 2.0, 0.0);
    let id_weight: C64 = l.terms.iter().filter(|t| t.is_identity()).map(|t| t.alpha).sum();
    let one = C64::new(1.0, 0.0);
    let ident = vec![FactorKind::Identity; l.ndims];
    let mut a = vec![OperatorTerm { alpha: one - h * id_weight, factors: ident.clone() }];
    let mut b = vec![OperatorTerm { alpha: one + h * id_weight, factors: ident }];
    for t in l.terms.iter().filter(|t| !t.is_identity()) {
        a.push(OperatorTerm { alpha: -h * t.alpha, factors: t.factors.clone() });
        b.push(OperatorTerm { alpha: h * t.alpha, factors: t.factors.clone() });
    }
    Ok(CrankNicolsonPair {
        a: SeparableOperator::new(l.ndims, a)?,
        b: SeparableOperator::new(l.ndims, b)?,
        dt,
    })
}
