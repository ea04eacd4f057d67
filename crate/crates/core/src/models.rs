//! Problem definitions: linear advection with a Gaussian initial condition,
//! and the linearized BGK model around a global Maxwellian.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, C64};
use crate::cp::CPTensor;
use crate::error::{Error, Result};
use crate::implicit::Forcing;
use crate::operator::{advection_operator, bgk_operator, crank_nicolson_pair, CrankNicolsonPair, SeparableOperator};

/// Probe coordinate used for the advection error series.
pub const PROBE_H: f64 = 0.698835274542439;

/// `∂_t f + Σ_{jk} C_jk z_k ∂_j f = 0` with `f(z, 0) = exp(−‖z‖²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvectionSpec {
    pub c: DMatrix<f64>,
    pub half_width: f64,
    pub modes: usize,
}

impl AdvectionSpec {
    pub fn new(c: DMatrix<f64>, half_width: f64, modes: usize) -> Result<Self> {
        if c.nrows() != c.ncols() || c.nrows() == 0 {
            return Err(Error::ShapeMismatch("advection matrix must be square and non-empty".into()));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("advection matrix must be finite".into()));
        }
        BasisSpec::new(modes, half_width)?;
        Ok(Self { c, half_width, modes })
    }

    /// Spiral flow `C = [[1/2, 1], [−1/4, 1/2]]`; extra dims get `1/2` on the
    /// diagonal and a `1/4` coupling to the previous dim.
    pub fn spiral(n: usize, half_width: f64, modes: usize) -> Result<Self> {
        let mut c = DMatrix::from_diagonal_element(n, n, 0.5);
        if n >= 2 {
            c[(0, 1)] = 1.0;
            c[(1, 0)] = -0.25;
        }
        for k in 2..n {
            c[(k, k - 1)] = 0.25;
        }
        Self::new(c, half_width, modes)
    }

    pub fn ndims(&self) -> usize {
        self.c.nrows()
    }

    pub fn specs(&self) -> Vec<BasisSpec> {
        vec![BasisSpec::new(self.modes, self.half_width).expect("validated"); self.ndims()]
    }

    pub fn operator(&self) -> Result<SeparableOperator> {
        advection_operator(&self.c)
    }

    /// All eigenvalues of `C` have positive real part.
    pub fn is_contracting(&self) -> bool {
        self.c.complex_eigenvalues().iter().all(|l| l.re > 0.0)
    }

    /// Rank-1 projection of `exp(−‖z‖²)`.
    pub fn initial_condition(&self) -> Result<CPTensor> {
        let specs = self.specs();
        let v = specs[0].project(|z| C64::new((-z * z).exp(), 0.0));
        CPTensor::rank_one(specs.clone(), vec![v; self.ndims()])
    }

    pub fn probe(&self) -> Vec<f64> {
        vec![PROBE_H; self.ndims()]
    }
}

/// `f_0(exp(−tC) z)` with `f_0(y) = exp(−‖y‖²)`.
pub fn advection_analytic(z: &[f64], t: f64, spec: &AdvectionSpec) -> Result<f64> {
    if z.len() != spec.ndims() {
        return Err(Error::ShapeMismatch("point dimension differs from the model".into()));
    }
    let m = (&spec.c * -t).exp();
    let y = m * DVector::from_column_slice(z);
    Ok((-y.norm_squared()).exp())
}

/// Bracket on the half-width of the smallest centred cube holding the set where
/// the solution at time `t` is at least `eps`.
pub fn enclosing_box(eps: f64, t: f64, spec: &AdvectionSpec) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    let m = (&spec.c * -t).exp();
    let g = m.transpose() * m;
    let lam = g.symmetric_eigenvalues().min();
    if !(lam > 0.0) {
        return Err(Error::InvalidState("propagator lost rank".into()));
    }
    let l = -eps.ln();
    let n = spec.ndims() as f64;
    Ok(((l / (n * lam)).sqrt(), (l / lam).sqrt()))
}

/// Physical parameters of the linearized BGK runs (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BGKSpec {
    pub temperature: f64,
    /// Number density; kept as metadata only.
    pub number_density: f64,
    pub gas_constant: f64,
    pub tau_r: f64,
    pub b_x: f64,
    pub b_v: f64,
    pub dt: f64,
    pub n_iter: usize,
    pub eps_tol: f64,
    pub modes: usize,
    pub rho: f64,
}

impl Default for BGKSpec {
    fn default() -> Self {
        let (t, r, tau) = (300.0, 208.0, 0.40034);
        Self {
            temperature: t,
            number_density: 2.4143e25,
            gas_constant: r,
            tau_r: tau,
            b_x: 500.0,
            b_v: 5.0 * (r * t).sqrt(),
            dt: 0.01 * tau,
            n_iter: 1000,
            eps_tol: 1e-8,
            modes: 11,
            rho: 1.0,
        }
    }
}

impl BGKSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("temperature", self.temperature),
            ("number_density", self.number_density),
            ("gas_constant", self.gas_constant),
            ("tau_r", self.tau_r),
            ("b_x", self.b_x),
            ("b_v", self.b_v),
            ("dt", self.dt),
            ("eps_tol", self.eps_tol),
            ("rho", self.rho),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_iter == 0 {
            return Err(Error::InvalidParameter("n_iter must be positive".into()));
        }
        BasisSpec::new(self.modes, self.b_x)?;
        if self.modes < 5 {
            return Err(Error::InvalidParameter("the BGK runs need at least 5 modes".into()));
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        1.0 / self.tau_r
    }

    pub fn rt(&self) -> f64 {
        self.gas_constant * self.temperature
    }

    pub fn x_spec(&self) -> BasisSpec {
        BasisSpec::new(self.modes, self.b_x).expect("validated")
    }

    pub fn v_spec(&self) -> BasisSpec {
        BasisSpec::new(self.modes, self.b_v).expect("validated")
    }

    /// `(x1, x2, x3, v1, v2, v3)`.
    pub fn specs(&self) -> Vec<BasisSpec> {
        let (x, v) = (self.x_spec(), self.v_spec());
        vec![x.clone(), x.clone(), x, v.clone(), v.clone(), v]
    }

    pub fn operator(&self) -> Result<SeparableOperator> {
        bgk_operator(self.nu())
    }

    pub fn cn_pair(&self) -> Result<CrankNicolsonPair> {
        crank_nicolson_pair(&self.operator()?, self.dt)
    }

    /// The relaxation source `ν f_eq`.
    pub fn forcing(&self) -> Result<Forcing> {
        Ok(Forcing { scale: self.nu(), source: maxwellian_cp(self)? })
    }

    /// One velocity factor of the separated Maxwellian.
    pub fn maxwellian_factor(&self, v: f64) -> f64 {
        let rt = self.rt();
        self.rho.cbrt() * (2.0 * PI * rt).powf(-0.5) * (-v * v / (2.0 * rt)).exp()
    }
}

/// `ρ (2πRT)^{−3/2} exp(−‖v‖²/2RT)`.
pub fn maxwellian(v: [f64; 3], spec: &BGKSpec) -> f64 {
    let rt = spec.rt();
    let v2 = v.iter().map(|c| c * c).sum::<f64>();
    spec.rho * (2.0 * PI * rt).powf(-1.5) * (-v2 / (2.0 * rt)).exp()
}

/// Coefficients of the constant function 1 in a Fourier basis.
fn constant_coeffs(spec: &BasisSpec) -> DVector<C64> {
    let mut c = DVector::zeros(spec.modes());
    c[spec.index_of(0).expect("mode 0 exists")] = C64::new((2.0 * spec.half_width()).sqrt(), 0.0);
    c
}

/// Velocity-only rank-1 Maxwellian over `(v1, v2, v3)`.
pub fn maxwellian_velocity_cp(spec: &BGKSpec) -> Result<CPTensor> {
    let vs = spec.v_spec();
    let g = vs.project(|v| C64::new(spec.maxwellian_factor(v), 0.0));
    CPTensor::rank_one(vec![vs.clone(), vs.clone(), vs], vec![g.clone(), g.clone(), g])
}

/// Rank-1 Maxwellian over `(x, v)`, uniform in `x`.
pub fn maxwellian_cp(spec: &BGKSpec) -> Result<CPTensor> {
    let xs = spec.x_spec();
    let one = constant_coeffs(&xs);
    let v = maxwellian_velocity_cp(spec)?;
    let mut vecs = vec![one.clone(), one.clone(), one];
    for k in 0..3 {
        vecs.push(v.factor(k).column(0).into_owned());
    }
    CPTensor::rank_one(spec.specs(), vecs)
}

/// `f_eq(v)·(1 + ε Π_k cos(2π x_k / b_x))` as a rank-2 tensor.
pub fn perturbed_ic(spec: &BGKSpec, epsilon: f64) -> Result<CPTensor> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    let base = maxwellian_cp(spec)?;
    let cosine = cosine_coeffs(&spec.x_spec());
    let mut vecs = vec![&cosine * C64::new(epsilon, 0.0), cosine.clone(), cosine];
    for k in 3..6 {
        vecs.push(base.factor(k).column(0).into_owned());
    }
    let pert = CPTensor::rank_one(spec.specs(), vecs)?;
    base.add(&pert)
}

/// `cos(2πx/b) = (φ_2 + φ_{−2})·sqrt(2b)/2`.
fn cosine_coeffs(xs: &BasisSpec) -> DVector<C64> {
    let amp = C64::new((2.0 * xs.half_width()).sqrt() / 2.0, 0.0);
    let mut c = DVector::zeros(xs.modes());
    c[xs.index_of(2).expect("validated Q >= 5")] = amp;
    c[xs.index_of(-2).expect("validated Q >= 5")] = amp;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_at_t0_and_c0() {
        let s = AdvectionSpec::new(DMatrix::zeros(2, 2), 10.0, 9).unwrap();
        let z = [0.3, -0.8];
        let want = (-(0.09 + 0.64f64)).exp();
        assert!((advection_analytic(&z, 0.0, &s).unwrap() - want).abs() < 1e-15);
        assert!((advection_analytic(&z, 3.0, &s).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn box_without_flow() {
        let s = AdvectionSpec::new(DMatrix::zeros(3, 3), 10.0, 9).unwrap();
        let (lo, hi) = enclosing_box(1e-6, 1.0, &s).unwrap();
        let l = -(1e-6f64).ln();
        assert!((lo - (l / 3.0).sqrt()).abs() < 1e-12);
        assert!((hi - l.sqrt()).abs() < 1e-12);
        let s1 = AdvectionSpec::new(DMatrix::from_element(1, 1, 0.7), 10.0, 9).unwrap();
        let (lo, hi) = enclosing_box(1e-3, 2.0, &s1).unwrap();
        assert!((lo - hi).abs() < 1e-12);
    }

    #[test]
    fn bgk_defaults() {
        let s = BGKSpec::default();
        s.validate().unwrap();
        assert!((s.b_v - 5.0 * (62400f64).sqrt()).abs() < 1e-9);
        assert!((s.dt - 0.0040034).abs() < 1e-15);
        let v0 = maxwellian([0.0; 3], &s);
        assert!((v0 - (2.0 * PI * 62400.0).powf(-1.5)).abs() < 1e-20);
    }

    #[test]
    fn perturbed_at_origin() {
        let s = BGKSpec::default();
        let f = perturbed_ic(&s, 0.3).unwrap();
        let g = maxwellian_cp(&s).unwrap();
        assert_eq!(f.rank(), 2);
        let p = [0.0, 0.0, 0.0, 40.0, -100.0, 10.0];
        let (a, b) = (f.evaluate(&p).unwrap(), g.evaluate(&p).unwrap());
        assert!((a - b * 1.3).norm() < 1e-12 * b.norm());
    }

    #[test]
    fn spiral_contracts() {
        assert!(AdvectionSpec::spiral(2, 10.0, 9).unwrap().is_contracting());
        assert!(AdvectionSpec::spiral(3, 10.0, 9).unwrap().is_contracting());
    }
}
