//! Canonical polyadic (CP) tensors over a product of Fourier bases.
//!
//! `f(z) = Σ_l Π_k G_k^l(z_k)` with `G_k^l = Σ_s β[l][k][s] φ_s`. Coefficients
//! are stored per dimension as `Q_k × r` matrices (column `l` is term `l`),
//! which is the matricization the ALS normal equations are written in.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSpec, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CPTensor {
    specs: Vec<BasisSpec>,
    factors: Vec<DMatrix<C64>>,
}

impl CPTensor {
    /// Builds a tensor from per-dimension `Q_k × r` coefficient matrices.
    pub fn from_factors(specs: Vec<BasisSpec>, factors: Vec<DMatrix<C64>>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::ShapeMismatch("tensor needs at least one dimension".into()));
        }
        if specs.len() != factors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} specs but {} factor matrices",
                specs.len(),
                factors.len()
            )));
        }
        let rank = factors[0].ncols();
        if rank == 0 {
            return Err(Error::InvalidRank(0));
        }
        for (k, (spec, f)) in specs.iter().zip(&factors).enumerate() {
            if f.nrows() != spec.modes() || f.ncols() != rank {
                return Err(Error::ShapeMismatch(format!(
                    "factor {k} is {}x{}, expected {}x{rank}",
                    f.nrows(),
                    f.ncols(),
                    spec.modes()
                )));
            }
            if f.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::InvalidState(format!("non-finite coefficient in factor {k}")));
            }
        }
        Ok(Self { specs, factors })
    }

    pub fn zeros(specs: Vec<BasisSpec>, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidRank(0));
        }
        let factors = specs.iter().map(|s| DMatrix::zeros(s.modes(), rank)).collect();
        Self::from_factors(specs, factors)
    }

    /// Rank-1 tensor from one coefficient vector per dimension.
    pub fn rank_one(specs: Vec<BasisSpec>, vectors: Vec<DVector<C64>>) -> Result<Self> {
        let factors = vectors
            .into_iter()
            .map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
            .collect();
        Self::from_factors(specs, factors)
    }

    pub fn ndims(&self) -> usize {
        self.specs.len()
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn specs(&self) -> &[BasisSpec] {
        &self.specs
    }

    pub fn factor(&self, k: usize) -> &DMatrix<C64> {
        &self.factors[k]
    }

    pub fn factors(&self) -> &[DMatrix<C64>] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<DMatrix<C64>> {
        self.factors
    }

    /// `β[l][k][s]`.
    pub fn coeff(&self, l: usize, k: usize, s_idx: usize) -> C64 {
        self.factors[k][(s_idx, l)]
    }

    pub fn check_compatible(&self, other: &CPTensor) -> Result<()> {
        if self.specs != other.specs {
            return Err(Error::ShapeMismatch("tensors live on different bases".into()));
        }
        Ok(())
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<C64> {
        if z.len() != self.ndims() {
            return Err(Error::ShapeMismatch(format!(
                "point has {} coordinates, tensor has {} dimensions",
                z.len(),
                self.ndims()
            )));
        }
        let mut prod = vec![C64::new(1.0, 0.0); self.rank()];
        for (k, (&zk, spec)) in z.iter().zip(&self.specs).enumerate() {
            let phi = spec.eval_all(zk);
            let f = &self.factors[k];
            for (l, p) in prod.iter_mut().enumerate() {
                let g: C64 = f.column(l).iter().zip(&phi).map(|(c, p)| c * p).sum();
                *p *= g;
            }
        }
        Ok(prod.into_iter().sum())
    }

    /// Term-concatenation sum; rank is `r_f + r_g`.
    pub fn add(&self, other: &CPTensor) -> Result<CPTensor> {
        self.check_compatible(other)?;
        Ok(self.scaled_sum(C64::new(1.0, 0.0), other, C64::new(1.0, 0.0)))
    }

    /// `a·self + b·other`, folding each scalar into the first dimension.
    pub fn scaled_sum(&self, a: C64, other: &CPTensor, b: C64) -> CPTensor {
        let (r1, r2) = (self.rank(), other.rank());
        let factors = self
            .factors
            .iter()
            .zip(&other.factors)
            .enumerate()
            .map(|(k, (f, g))| {
                let mut m = DMatrix::zeros(f.nrows(), r1 + r2);
                m.columns_mut(0, r1).copy_from(f);
                m.columns_mut(r1, r2).copy_from(g);
                if k == 0 {
                    for c in m.columns_mut(0, r1).iter_mut() {
                        *c *= a;
                    }
                    for c in m.columns_mut(r1, r2).iter_mut() {
                        *c *= b;
                    }
                }
                m
            })
            .collect();
        CPTensor { specs: self.specs.clone(), factors }
    }

    pub fn scale(&self, a: C64) -> CPTensor {
        let mut out = self.clone();
        out.factors[0] *= a;
        out
    }

    /// `⟨f, g⟩ = ∫ conj(f) g`, computed from per-dimension Gram products.
    pub fn inner_product(&self, other: &CPTensor) -> Result<C64> {
        self.check_compatible(other)?;
        let mut acc = DMatrix::from_element(self.rank(), other.rank(), C64::new(1.0, 0.0));
        for (f, g) in self.factors.iter().zip(&other.factors) {
            acc.component_mul_assign(&(f.adjoint() * g));
        }
        Ok(acc.sum())
    }

    pub fn norm(&self) -> f64 {
        self.inner_product(self).map(|v| v.re.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Materializes the full coefficient tensor, first dimension fastest.
    pub fn to_dense(&self) -> Vec<C64> {
        let dims: Vec<usize> = self.specs.iter().map(|s| s.modes()).collect();
        let total: usize = dims.iter().product();
        let mut out = vec![C64::new(0.0, 0.0); total];
        let mut idx = vec![0usize; dims.len()];
        for v in out.iter_mut() {
            let mut sum = C64::new(0.0, 0.0);
            for l in 0..self.rank() {
                let mut p = C64::new(1.0, 0.0);
                for (k, &i) in idx.iter().enumerate() {
                    p *= self.factors[k][(i, l)];
                }
                sum += p;
            }
            *v = sum;
            for (k, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < dims[k] {
                    break;
                }
                *i = 0;
            }
        }
        out
    }

    /// Drops terms whose coefficient product is exactly zero. Keeps at least one term.
    pub fn without_zero_terms(&self) -> CPTensor {
        let keep: Vec<usize> = (0..self.rank())
            .filter(|&l| self.factors.iter().all(|f| f.column(l).iter().any(|c| *c != C64::new(0.0, 0.0))))
            .collect();
        if keep.len() == self.rank() {
            return self.clone();
        }
        if keep.is_empty() {
            return CPTensor::zeros(self.specs.clone(), 1).expect("rank 1 is valid");
        }
        let factors = self.factors.iter().map(|f| f.select_columns(keep.iter())).collect();
        CPTensor { specs: self.specs.clone(), factors }
    }

    /// Pads with zero terms up to `rank`; no-op when already at least that rank.
    pub fn padded_to_rank(&self, rank: usize) -> CPTensor {
        let r = self.rank();
        if r >= rank {
            return self.clone();
        }
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let mut m = DMatrix::zeros(f.nrows(), rank);
                m.columns_mut(0, r).copy_from(f);
                m
            })
            .collect();
        CPTensor { specs: self.specs.clone(), factors }
    }

    /// Largest relative imaginary part of `f` over the given points; `0` for a
    /// real-valued field. Realness is checked, never enforced.
    pub fn realness_defect(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in points {
            let v = self.evaluate(p)?;
            if v.norm() > 0.0 {
                worst = worst.max(v.im.abs() / v.norm());
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs(n: usize, q: usize) -> Vec<BasisSpec> {
        (0..n).map(|k| BasisSpec::new(q, 1.0 + k as f64).unwrap()).collect()
    }

    #[test]
    fn rejects_bad_shapes() {
        let s = specs(2, 3);
        assert!(CPTensor::from_factors(s.clone(), vec![DMatrix::zeros(3, 2)]).is_err());
        assert!(CPTensor::from_factors(s.clone(), vec![DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)]).is_err());
        assert!(CPTensor::from_factors(s.clone(), vec![DMatrix::zeros(3, 0), DMatrix::zeros(3, 0)]).is_err());
        assert!(CPTensor::zeros(s, 0).is_err());
    }

    #[test]
    fn zero_tensor_evaluates_to_zero() {
        let t = CPTensor::zeros(specs(3, 5), 2).unwrap();
        assert_eq!(t.evaluate(&[0.1, -0.5, 2.0]).unwrap(), C64::new(0.0, 0.0));
        assert!(t.evaluate(&[0.1]).is_err());
    }

    #[test]
    fn add_concatenates_ranks() {
        let a = CPTensor::zeros(specs(2, 3), 2).unwrap();
        let b = CPTensor::zeros(specs(2, 3), 3).unwrap();
        assert_eq!(a.add(&b).unwrap().rank(), 5);
        let c = CPTensor::zeros(specs(2, 5), 1).unwrap();
        assert!(a.add(&c).is_err());
    }

    #[test]
    fn pad_and_strip_zero_terms() {
        let s = specs(2, 3);
        let v = DVector::from_element(3, C64::new(1.0, 0.0));
        let t = CPTensor::rank_one(s, vec![v.clone(), v]).unwrap();
        let p = t.padded_to_rank(3);
        assert_eq!(p.rank(), 3);
        assert_eq!(p.without_zero_terms(), t);
    }
}
