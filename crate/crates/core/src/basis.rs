//! One-dimensional periodic Fourier basis on `[-b, b]`.
//!
//! Basis functions are `φ_s(z) = exp(iπ s z / b) / sqrt(2b)` for the symmetric
//! frequency set `s ∈ {-(Q-1)/2, …, (Q-1)/2}`. They are orthonormal under the
//! conjugated `L2(-b, b)` inner product, and every Galerkin integral needed by
//! the operator factors has a closed form.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::CompositeRule;

pub type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSpec {
    modes: usize,
    half_width: f64,
}

impl BasisSpec {
    pub fn new(modes: usize, half_width: f64) -> Result<Self> {
        if modes == 0 || modes % 2 == 0 {
            return Err(Error::InvalidBasis(format!(
                "mode count must be a positive odd integer, got {modes}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidBasis(format!(
                "half-width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Self { modes, half_width })
    }

    /// Number of modes `Q`.
    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Domain half-width `b`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn max_frequency(&self) -> i64 {
        (self.modes as i64 - 1) / 2
    }

    pub fn frequencies(&self) -> impl Iterator<Item = i64> {
        let m = self.max_frequency();
        -m..=m
    }

    /// Frequency stored at position `idx` of a coefficient vector.
    pub fn frequency(&self, idx: usize) -> i64 {
        idx as i64 - self.max_frequency()
    }

    pub fn index_of(&self, freq: i64) -> Result<usize> {
        let m = self.max_frequency();
        if freq.abs() > m {
            return Err(Error::FrequencyOutOfRange { freq, max: m });
        }
        Ok((freq + m) as usize)
    }

    /// `π s / b`, the angular wavenumber of mode `s`.
    pub fn wavenumber(&self, freq: i64) -> f64 {
        PI * freq as f64 / self.half_width
    }

    fn norm(&self) -> f64 {
        1.0 / (2.0 * self.half_width).sqrt()
    }

    /// Evaluates `φ_s(z)`.
    pub fn eval(&self, freq: i64, z: f64) -> Result<C64> {
        self.index_of(freq)?;
        Ok(C64::from_polar(self.norm(), self.wavenumber(freq) * z))
    }

    /// All basis functions at `z`, in coefficient order.
    pub fn eval_all(&self, z: f64) -> Vec<C64> {
        let step = C64::from_polar(1.0, PI * z / self.half_width);
        let mut v = C64::from_polar(self.norm(), -(self.max_frequency() as f64) * PI * z / self.half_width);
        let mut out = Vec::with_capacity(self.modes);
        for _ in 0..self.modes {
            out.push(v);
            v *= step;
        }
        // Recurrence drift is ~Q ulps; refresh the endpoint from the closed form.
        let last = self.modes - 1;
        out[last] = C64::from_polar(self.norm(), self.wavenumber(self.frequency(last)) * z);
        out
    }

    /// Evaluates the expansion `Σ_s c_s φ_s(z)`.
    pub fn eval_expansion(&self, coeffs: &[C64], z: f64) -> C64 {
        debug_assert_eq!(coeffs.len(), self.modes);
        self.eval_all(z).iter().zip(coeffs).map(|(p, c)| p * c).sum()
    }

    /// Galerkin projection `c_s = ∫ conj(φ_s) f dz` by composite Gauss–Legendre quadrature.
    pub fn project<F: Fn(f64) -> C64>(&self, f: F) -> DVector<C64> {
        let b = self.half_width;
        let rule = CompositeRule::new(-b, b, (4 * self.modes).max(32), 16);
        let mut out = DVector::zeros(self.modes);
        for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
            let fz = f(z) * w;
            for (c, p) in out.iter_mut().zip(self.eval_all(z)) {
                *c += p.conj() * fz;
            }
        }
        out
    }

    /// `∫ z^p φ_s dz` for every mode, `p ∈ {0, 1, 2}`. Used for moment integrals.
    pub fn monomial_integrals(&self, power: u8) -> Result<Vec<C64>> {
        if power > 2 {
            return Err(Error::InvalidParameter(format!("monomial power {power} > 2")));
        }
        // ∫ z^p φ_s = sqrt(2b) · ∫ conj(φ_0) z^p φ_s = sqrt(2b) · X_p[0, s]
        let kernel = moment_kernel(self, power);
        let zero = self.index_of(0)?;
        let scale = (2.0 * self.half_width).sqrt();
        Ok((0..self.modes).map(|h| kernel[(zero, h)] * scale).collect())
    }

    /// Closed-form Galerkin matrix `[F]_{sh} = ∫ conj(φ_s) (E φ_h) dz` of a factor.
    pub fn factor_matrix(&self, kind: FactorKind) -> DMatrix<C64> {
        let q = self.modes;
        match kind {
            FactorKind::Identity => DMatrix::identity(q, q),
            FactorKind::Derivative => DMatrix::from_diagonal(&self.derivative_diagonal()),
            FactorKind::CoordMultiply => moment_kernel(self, 1),
            FactorKind::CoordTimesDerivative => {
                let z = moment_kernel(self, 1);
                let d = self.derivative_diagonal();
                DMatrix::from_fn(q, q, |s, h| z[(s, h)] * d[h])
            }
        }
    }

    /// `iπh/b` for each mode `h`.
    pub fn derivative_diagonal(&self) -> DVector<C64> {
        DVector::from_fn(self.modes, |h, _| I * self.wavenumber(self.frequency(h)))
    }

    /// Pairwise integral of two factor images of the basis.
    ///
    /// `Sesquilinear`: `∫ conj(E^e φ_s) (E^z φ_h)`; used for all assembly so
    /// that normal-equation matrices are Hermitian.
    /// `Bilinear`: `∫ (E^e φ_s)(E^z φ_h)` without conjugation.
    pub fn pair_matrix(&self, e: FactorKind, z: FactorKind, pairing: Pairing) -> DMatrix<C64> {
        let kernel = moment_kernel(self, e.coord_power() + z.coord_power());
        let sesq = self.scale_pair(&kernel, e, z);
        match pairing {
            Pairing::Sesquilinear => sesq,
            Pairing::Bilinear => {
                // E real-valued and φ_s = conj(φ_{-s}) => bilinear[s] = sesq[-s].
                let q = self.modes;
                DMatrix::from_fn(q, q, |s, h| sesq[(q - 1 - s, h)])
            }
        }
    }

    pub(crate) fn scale_pair(&self, kernel: &DMatrix<C64>, e: FactorKind, z: FactorKind) -> DMatrix<C64> {
        let d = self.derivative_diagonal();
        let q = self.modes;
        DMatrix::from_fn(q, q, |s, h| {
            let mut v = kernel[(s, h)];
            if e.has_derivative() {
                v *= d[s].conj();
            }
            if z.has_derivative() {
                v *= d[h];
            }
            v
        })
    }

    fn key(&self) -> (usize, u64) {
        (self.modes, self.half_width.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorKind {
    Identity,
    Derivative,
    CoordMultiply,
    CoordTimesDerivative,
}

impl FactorKind {
    pub fn coord_power(self) -> u8 {
        match self {
            FactorKind::Identity | FactorKind::Derivative => 0,
            FactorKind::CoordMultiply | FactorKind::CoordTimesDerivative => 1,
        }
    }

    pub fn has_derivative(self) -> bool {
        matches!(self, FactorKind::Derivative | FactorKind::CoordTimesDerivative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    Sesquilinear,
    Bilinear,
}

/// `[X_p]_{sh} = ∫ z^p conj(φ_s) φ_h dz`, exact for `p ≤ 2`.
pub fn moment_kernel(spec: &BasisSpec, power: u8) -> DMatrix<C64> {
    let q = spec.modes();
    let b = spec.half_width();
    DMatrix::from_fn(q, q, |s, h| {
        let m = h as i64 - s as i64;
        let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        match (power, m) {
            (0, 0) => C64::new(1.0, 0.0),
            (0, _) => C64::new(0.0, 0.0),
            (1, 0) => C64::new(0.0, 0.0),
            (1, _) => C64::new(0.0, -b * sign / (PI * m as f64)),
            (2, 0) => C64::new(b * b / 3.0, 0.0),
            (2, _) => C64::new(2.0 * b * b * sign / (PI * PI * (m * m) as f64), 0.0),
            _ => panic!("moment kernel of order {power} is not closed-form here"),
        }
    })
}

/// Shared store of moment kernels. Pair matrices differ from these only by
/// the derivative prefactors `iπh/b`, so one kernel per (spec, moment order)
/// is all that is ever computed.
#[derive(Debug, Default, Clone)]
pub struct KernelCache {
    inner: Arc<Mutex<HashMap<((usize, u64), u8), Arc<DMatrix<C64>>>>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moment(&self, spec: &BasisSpec, power: u8) -> Arc<DMatrix<C64>> {
        let mut map = self.inner.lock().expect("kernel cache poisoned");
        map.entry((spec.key(), power))
            .or_insert_with(|| Arc::new(moment_kernel(spec, power)))
            .clone()
    }

    pub fn pair(&self, spec: &BasisSpec, e: FactorKind, z: FactorKind) -> DMatrix<C64> {
        let kernel = self.moment(spec, e.coord_power() + z.coord_power());
        spec.scale_pair(&kernel, e, z)
    }

    /// Number of distinct kernels computed so far.
    pub fn len(&self) -> usize {
        self.inner.lock().expect("kernel cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn quad(spec: &BasisSpec, f: impl Fn(f64) -> C64) -> C64 {
        let b = spec.half_width();
        let rule = CompositeRule::new(-b, b, 200, 10);
        let re = rule.integrate(|z| f(z).re);
        let im = rule.integrate(|z| f(z).im);
        C64::new(re, im)
    }

    #[test]
    fn rejects_even_or_empty_mode_counts() {
        assert!(BasisSpec::new(4, 1.0).is_err());
        assert!(BasisSpec::new(0, 1.0).is_err());
        assert!(BasisSpec::new(5, 0.0).is_err());
        assert!(BasisSpec::new(5, -1.0).is_err());
    }

    #[test]
    fn frequencies_are_symmetric() {
        let spec = BasisSpec::new(7, 1.0).unwrap();
        let f: Vec<_> = spec.frequencies().collect();
        assert_eq!(f, vec![-3, -2, -1, 0, 1, 2, 3]);
        assert_eq!(spec.index_of(-3).unwrap(), 0);
        assert!(spec.index_of(4).is_err());
    }

    #[test]
    fn eval_examples() {
        let spec = BasisSpec::new(11, 1.0).unwrap();
        let v = spec.eval(0, 0.37).unwrap();
        assert!(close(v, C64::new(0.5f64.sqrt(), 0.0), 1e-15));
        let v = spec.eval(3, 0.0).unwrap();
        assert!(close(v, C64::new(0.5f64.sqrt(), 0.0), 1e-15));
        assert!(matches!(spec.eval(6, 0.0), Err(Error::FrequencyOutOfRange { .. })));
        for z in [-0.9, 0.1, 0.77] {
            for s in spec.frequencies() {
                assert!((spec.eval(s, z).unwrap().norm() - 0.5f64.sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn eval_all_matches_eval() {
        let spec = BasisSpec::new(21, 2.5).unwrap();
        for z in [-2.5, -1.3, 0.0, 0.4, 2.49] {
            let all = spec.eval_all(z);
            for (i, s) in spec.frequencies().enumerate() {
                assert!(close(all[i], spec.eval(s, z).unwrap(), 1e-14));
            }
        }
    }

    #[test]
    fn phi_one_quadrature_normalization() {
        let spec = BasisSpec::new(5, 2.0).unwrap();
        let v = quad(&spec, |z| spec.eval(1, z).unwrap().conj() * spec.eval(1, z).unwrap());
        assert!(close(v, C64::new(1.0, 0.0), 1e-10));
        // value at z = 1 is e^{iπ/2}/2
        assert!(close(spec.eval(1, 1.0).unwrap(), C64::new(0.0, 0.5), 1e-15));
    }

    #[test]
    fn derivative_matrix_example() {
        let spec = BasisSpec::new(5, 2.0).unwrap();
        let d = spec.factor_matrix(FactorKind::Derivative);
        let expect = [-PI, -PI / 2.0, 0.0, PI / 2.0, PI];
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { C64::new(0.0, expect[i]) } else { C64::new(0.0, 0.0) };
                assert!(close(d[(i, j)], e, 1e-15));
            }
        }
    }

    #[test]
    fn identity_is_identity() {
        let spec = BasisSpec::new(9, 3.0).unwrap();
        assert_eq!(spec.factor_matrix(FactorKind::Identity), DMatrix::identity(9, 9));
    }

    #[test]
    fn coord_times_derivative_factorizes() {
        let spec = BasisSpec::new(9, 1.7).unwrap();
        let zd = spec.factor_matrix(FactorKind::CoordTimesDerivative);
        let prod = spec.factor_matrix(FactorKind::CoordMultiply) * spec.factor_matrix(FactorKind::Derivative);
        assert_eq!(zd, prod);
    }

    #[test]
    fn derivative_consistency_pointwise() {
        let spec = BasisSpec::new(7, 1.5).unwrap();
        let d = spec.factor_matrix(FactorKind::Derivative);
        for h in 0..7 {
            let mut c = DVector::zeros(7);
            c[h] = C64::new(1.0, 0.0);
            let dc = &d * &c;
            for i in 0..100 {
                let z = -1.5 + 3.0 * i as f64 / 99.0;
                let got = spec.eval_expansion(dc.as_slice(), z);
                let s = spec.frequency(h);
                let want = I * spec.wavenumber(s) * spec.eval(s, z).unwrap();
                assert!(close(got, want, 1e-8));
            }
        }
    }

    #[test]
    fn kernel_cache_counts_distinct() {
        let cache = KernelCache::new();
        let a = BasisSpec::new(5, 1.0).unwrap();
        let b = BasisSpec::new(5, 2.0).unwrap();
        cache.pair(&a, FactorKind::Identity, FactorKind::Derivative);
        cache.pair(&a, FactorKind::Derivative, FactorKind::Derivative);
        assert_eq!(cache.len(), 1);
        cache.pair(&b, FactorKind::CoordMultiply, FactorKind::Identity);
        cache.pair(&b, FactorKind::Identity, FactorKind::CoordMultiply);
        assert_eq!(cache.len(), 2);
        assert_eq!(
            cache.pair(&b, FactorKind::CoordMultiply, FactorKind::CoordMultiply),
            b.pair_matrix(FactorKind::CoordMultiply, FactorKind::CoordMultiply, Pairing::Sesquilinear)
        );
        assert_eq!(cache.len(), 3);
    }

    #[test]
    fn monomial_integrals_match_quadrature() {
        let spec = BasisSpec::new(7, 1.3).unwrap();
        for p in 0..=2u8 {
            let ints = spec.monomial_integrals(p).unwrap();
            for (i, s) in spec.frequencies().enumerate() {
                let want = quad(&spec, |z| z.powi(p as i32) * spec.eval(s, z).unwrap());
                assert!(close(ints[i], want, 1e-10), "p={p} s={s}");
            }
        }
    }
}
