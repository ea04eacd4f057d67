//! ALS fitting of CP tensors: approximation of functions and rank reduction.
//!
//! Each sweep solves the convex least-squares problem for one dimension at a
//! time (Gauss–Seidel order). Because the Fourier basis is orthonormal, the
//! normal matrix of dimension `j` is `conj(V_j) ⊗ I_Q` with the `r × r` Gram
//! Hadamard product `V_j = ⊙_{k≠j} B_kᴴ B_k`, so every solve is `r × r`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{BasisSpec, C64};
use crate::cp::CPTensor;
use crate::error::{Error, Result};
use crate::quadrature::CompositeRule;

#[derive(Debug, Clone, PartialEq)]
pub struct ALSApproxConfig {
    pub max_sweeps: usize,
    /// Stop when the relative change of the residual between sweeps drops below this.
    pub tol: f64,
    /// Stop as soon as `residual / ‖target‖` reaches this.
    pub target_relative: f64,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for ALSApproxConfig {
    fn default() -> Self {
        Self { max_sweeps: 500, tol: 1e-12, target_relative: 0.0, seed: 0, init: InitStrategy::RandomNormal }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// i.i.d. complex standard normal coefficients, each term column unit-normalized.
    RandomNormal,
    /// The `r` largest-norm terms of a CP target, padded with random terms.
    LeadingTerms,
    /// Start from the given tensor (truncated or randomly padded to the requested rank).
    Warm(CPTensor),
}

/// One additive term `weight · Π_k f_k(z_k)` of a separable target.
pub struct SeparableTerm<'a> {
    pub weight: C64,
    pub factors: Vec<Box<dyn Fn(f64) -> C64 + Sync + 'a>>,
}

pub enum Target<'a> {
    Cp(&'a CPTensor),
    Separable { specs: &'a [BasisSpec], terms: &'a [SeparableTerm<'a>] },
    /// A general function of all coordinates, projected on a dense grid.
    Dense { specs: &'a [BasisSpec], f: &'a (dyn Fn(&[f64]) -> C64 + Sync) },
}

#[derive(Debug, Clone)]
pub struct ALSResult {
    pub tensor: CPTensor,
    /// `‖target − tensor‖_{L2}`.
    pub residual: f64,
    pub target_norm: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Residual after every full sweep, starting with the initial guess.
    pub history: Vec<f64>,
}

impl ALSResult {
    pub fn relative_residual(&self) -> f64 {
        if self.target_norm > 0.0 {
            self.residual / self.target_norm
        } else {
            self.residual
        }
    }
}

/// Projects each term of a separable target onto the basis, giving an exact
/// CP representation of the target's Galerkin projection.
pub fn project_separable(specs: &[BasisSpec], terms: &[SeparableTerm<'_>]) -> Result<CPTensor> {
    if terms.is_empty() {
        return CPTensor::zeros(specs.to_vec(), 1);
    }
    let mut factors: Vec<DMatrix<C64>> = specs.iter().map(|s| DMatrix::zeros(s.modes(), terms.len())).collect();
    for (l, term) in terms.iter().enumerate() {
        if term.factors.len() != specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "separable term {l} has {} factors for {} dimensions",
                term.factors.len(),
                specs.len()
            )));
        }
        for (k, (spec, f)) in specs.iter().zip(&term.factors).enumerate() {
            let mut c = spec.project(f);
            if k == 0 {
                c *= term.weight;
            }
            factors[k].set_column(l, &c);
        }
    }
    CPTensor::from_factors(specs.to_vec(), factors)
}

/// Full coefficient tensor (first dimension fastest) of a general function.
pub fn project_dense(specs: &[BasisSpec], f: &(dyn Fn(&[f64]) -> C64 + Sync)) -> DenseCoeffs {
    let rules: Vec<CompositeRule> = specs
        .iter()
        .map(|s| CompositeRule::new(-s.half_width(), s.half_width(), (2 * s.modes()).max(24), 8))
        .collect();
    let npts: Vec<usize> = rules.iter().map(|r| r.nodes.len()).collect();
    let total: usize = npts.iter().product();
    let mut values = Vec::with_capacity(total);
    let mut idx = vec![0usize; specs.len()];
    let mut z = vec![0.0; specs.len()];
    for _ in 0..total {
        let mut w = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            z[k] = rules[k].nodes[i];
            w *= rules[k].weights[i];
        }
        values.push(f(&z) * w);
        for (k, i) in idx.iter_mut().enumerate() {
            *i += 1;
            if *i < npts[k] {
                break;
            }
            *i = 0;
        }
    }
    // contract one mode at a time with conj(φ_s(node))
    let mut shape = npts.clone();
    let mut data = values;
    for (k, spec) in specs.iter().enumerate() {
        let proj = DMatrix::from_fn(spec.modes(), npts[k], |s, i| {
            spec.eval(spec.frequency(s), rules[k].nodes[i]).expect("valid frequency").conj()
        });
        data = mode_product(&data, &shape, k, &proj);
        shape[k] = spec.modes();
    }
    DenseCoeffs { dims: shape, data }
}

/// Dense coefficient tensor, first index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCoeffs {
    pub dims: Vec<usize>,
    pub data: Vec<C64>,
}

impl DenseCoeffs {
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `out[.., s, ..] = Σ_i m[s, i] · t[.., i, ..]` along mode `k`.
pub(crate) fn mode_product(t: &[C64], shape: &[usize], k: usize, m: &DMatrix<C64>) -> Vec<C64> {
    let inner: usize = shape[..k].iter().product();
    let n = shape[k];
    let outer: usize = shape[k + 1..].iter().product();
    let rows = m.nrows();
    let mut out = vec![C64::new(0.0, 0.0); inner * rows * outer];
    for o in 0..outer {
        for i in 0..n {
            let src = &t[(o * n + i) * inner..(o * n + i + 1) * inner];
            for s in 0..rows {
                let w = m[(s, i)];
                if w == C64::new(0.0, 0.0) {
                    continue;
                }
                let dst = &mut out[(o * rows + s) * inner..(o * rows + s + 1) * inner];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

/// The thing ALS fits against, after projection.
enum Fitted<'a> {
    Cp(&'a CPTensor),
    Dense(&'a DenseCoeffs),
}

impl Fitted<'_> {
    fn norm_sqr(&self) -> f64 {
        match self {
            Fitted::Cp(t) => t.inner_product(t).map(|v| v.re.max(0.0)).unwrap_or(0.0),
            Fitted::Dense(d) => d.data.iter().map(|c| c.norm_sqr()).sum(),
        }
    }

    /// `rhs[:, l] = Σ_{other idx} T · Π_{k≠j} conj(B_k[i_k, l])`, a `Q_j × r` matrix.
    fn rhs(&self, model: &[DMatrix<C64>], j: usize) -> DMatrix<C64> {
        let r = model[0].ncols();
        match self {
            Fitted::Cp(t) => {
                let mut w = DMatrix::from_element(r, t.rank(), C64::new(1.0, 0.0));
                for (k, (b, f)) in model.iter().zip(t.factors()).enumerate() {
                    if k != j {
                        w.component_mul_assign(&(b.adjoint() * f));
                    }
                }
                t.factor(j) * w.transpose()
            }
            Fitted::Dense(d) => {
                let mut out = DMatrix::zeros(d.dims[j], r);
                for l in 0..r {
                    let mut data = d.data.clone();
                    let mut shape = d.dims.clone();
                    for (k, b) in model.iter().enumerate() {
                        if k == j {
                            continue;
                        }
                        let row = b.column(l).adjoint();
                        let row = DMatrix::from_row_slice(1, b.nrows(), row.as_slice());
                        data = mode_product(&data, &shape, k, &row);
                        shape[k] = 1;
                    }
                    out.set_column(l, &DVector::from_vec(data));
                }
                out
            }
        }
    }

    /// `⟨B, T⟩ = ∫ conj(B) T`.
    fn inner_with(&self, model: &[DMatrix<C64>]) -> C64 {
        // ⟨B,T⟩ = Σ_l Σ_h conj(B_0[h,l]) rhs_0[h,l]
        let rhs = self.rhs(model, 0);
        model[0].iter().zip(rhs.iter()).map(|(b, g)| b.conj() * g).sum()
    }
}

fn gram_product(model: &[DMatrix<C64>], skip: Option<usize>) -> DMatrix<C64> {
    let r = model[0].ncols();
    let mut v = DMatrix::from_element(r, r, C64::new(1.0, 0.0));
    for (k, b) in model.iter().enumerate() {
        if Some(k) != skip {
            v.component_mul_assign(&(b.adjoint() * b));
        }
    }
    v
}

fn residual_sqr(target: &Fitted<'_>, target_sqr: f64, model: &[DMatrix<C64>]) -> f64 {
    let bb = gram_product(model, None).sum().re;
    let bt = target.inner_with(model).re;
    (target_sqr - 2.0 * bt + bb).max(0.0)
}

/// Solves `X · conj(V) = G` for `X` (`Q × r`), with a small Tikhonov shift.
fn solve_factor(v: &DMatrix<C64>, g: &DMatrix<C64>, dim: usize) -> Result<DMatrix<C64>> {
    let r = v.nrows();
    let trace: f64 = (0..r).map(|i| v[(i, i)].re).sum();
    let lambda = 1e-12 * trace / r as f64;
    // X conj(V) = G  <=>  Vᴴ-free form: conj(V)ᵀ Xᵀ = Gᵀ; conj(V)ᵀ = V (Hermitian)
    let mut a = v.clone();
    for i in 0..r {
        a[(i, i)] += C64::new(lambda, 0.0);
    }
    let rhs = g.transpose();
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a.lu().solve(&rhs).ok_or(Error::Conditioning { dim })?,
    };
    if sol.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Conditioning { dim });
    }
    Ok(sol.transpose())
}

fn random_factors(specs: &[BasisSpec], rank: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<C64>> {
    specs
        .iter()
        .map(|s| {
            let mut m = DMatrix::from_fn(s.modes(), rank, |_, _| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im)
            });
            for mut col in m.column_iter_mut() {
                let n = col.norm();
                if n > 0.0 {
                    col /= C64::new(n, 0.0);
                }
            }
            m
        })
        .collect()
}

fn initial_factors(
    specs: &[BasisSpec],
    rank: usize,
    cfg: &ALSApproxConfig,
    cp_target: Option<&CPTensor>,
) -> Vec<DMatrix<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut factors = random_factors(specs, rank, &mut rng);
    let source: Option<(CPTensor, Vec<usize>)> = match (&cfg.init, cp_target) {
        (InitStrategy::Warm(w), _) if w.specs() == specs => Some((w.clone(), (0..w.rank()).collect())),
        (InitStrategy::LeadingTerms, Some(t)) => {
            let mut order: Vec<(usize, f64)> = (0..t.rank())
                .map(|l| (l, t.factors().iter().map(|f| f.column(l).norm()).product()))
                .collect();
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            Some((t.clone(), order.into_iter().filter(|o| o.1 > 0.0).map(|o| o.0).collect()))
        }
        _ => None,
    };
    if let Some((src, cols)) = source {
        for (dst, &l) in cols.iter().take(rank).enumerate() {
            for (k, f) in factors.iter_mut().enumerate() {
                f.set_column(dst, &src.factor(k).column(l));
            }
        }
    }
    factors
}

/// Fits a rank-`rank` CP tensor to `target` by Gauss–Seidel ALS sweeps.
pub fn cp_approx_als(target: Target<'_>, rank: usize, cfg: &ALSApproxConfig) -> Result<ALSResult> {
    if rank == 0 {
        return Err(Error::InvalidRank(0));
    }
    let projected;
    let dense;
    let (specs, fitted): (Vec<BasisSpec>, Fitted<'_>) = match target {
        Target::Cp(t) => (t.specs().to_vec(), Fitted::Cp(t)),
        Target::Separable { specs, terms } => {
            projected = project_separable(specs, terms)?;
            (specs.to_vec(), Fitted::Cp(&projected))
        }
        Target::Dense { specs, f } => {
            dense = project_dense(specs, f);
            (specs.to_vec(), Fitted::Dense(&dense))
        }
    };
    let target_sqr = fitted.norm_sqr();
    let target_norm = target_sqr.sqrt();
    if target_sqr == 0.0 {
        return Ok(ALSResult {
            tensor: CPTensor::zeros(specs, rank)?,
            residual: 0.0,
            target_norm: 0.0,
            sweeps: 0,
            converged: true,
            history: vec![0.0],
        });
    }
    let cp_target = match &fitted {
        Fitted::Cp(t) => Some(*t),
        Fitted::Dense(_) => None,
    };
    let mut model = initial_factors(&specs, rank, cfg, cp_target);
    let n = specs.len();
    let mut res = residual_sqr(&fitted, target_sqr, &model).sqrt();
    let mut history = vec![res];
    let mut best = (res, model.clone());
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        for j in 0..n {
            let v = gram_product(&model, Some(j));
            let g = fitted.rhs(&model, j);
            model[j] = solve_factor(&v, &g, j)?;
        }
        // balance term norms across dimensions; the product is unchanged
        balance(&mut model);
        let new_res = residual_sqr(&fitted, target_sqr, &model).sqrt();
        history.push(new_res);
        if new_res > res * (1.0 + 1e-9) + 1e-12 * target_norm {
            log::debug!("ALS residual increased: {res:e} -> {new_res:e}");
        }
        let change = (res - new_res).abs() / target_norm;
        res = new_res;
        if res < best.0 {
            best = (res, model.clone());
        }
        if res / target_norm <= cfg.target_relative || change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ALS stopped at {sweeps} sweeps, relative residual {:e}", best.0 / target_norm);
    }
    Ok(ALSResult {
        tensor: CPTensor::from_factors(specs, best.1)?,
        residual: best.0,
        target_norm,
        sweeps,
        converged,
        history,
    })
}

fn balance(model: &mut [DMatrix<C64>]) {
    let n = model.len() as f64;
    let r = model[0].ncols();
    for l in 0..r {
        let norms: Vec<f64> = model.iter().map(|f| f.column(l).norm()).collect();
        if norms.iter().any(|&x| x == 0.0) {
            continue;
        }
        let geo = norms.iter().map(|x| x.ln()).sum::<f64>() / n;
        for (f, nk) in model.iter_mut().zip(&norms) {
            let s = (geo - nk.ln()).exp();
            f.column_mut(l).scale_mut(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReduceConfig {
    pub als: ALSApproxConfig,
    /// Raise the rank from `start_rank` until the relative error is at most `eps`.
    pub adaptive: bool,
    pub start_rank: usize,
}

impl Default for RankReduceConfig {
    fn default() -> Self {
        Self { als: ALSApproxConfig::default(), adaptive: true, start_rank: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub tensor: CPTensor,
    /// `‖f − reduced‖ / ‖f‖` (absolute when `f = 0`).
    pub relative_error: f64,
    pub absolute_error: f64,
    pub converged: bool,
}

/// Reduces `f` to rank at most `r_target`, reporting the relative L2 error.
pub fn rank_reduce_als(f: &CPTensor, r_target: usize, eps: f64, cfg: &RankReduceConfig) -> Result<Reduction> {
    if r_target == 0 {
        return Err(Error::InvalidRank(0));
    }
    let f = f.without_zero_terms();
    let norm = f.norm();
    if norm == 0.0 {
        return Ok(Reduction {
            tensor: CPTensor::zeros(f.specs().to_vec(), 1)?,
            relative_error: 0.0,
            absolute_error: 0.0,
            converged: true,
        });
    }
    if f.rank() <= r_target && (!cfg.adaptive || f.rank() <= cfg.start_rank.max(1)) {
        return Ok(Reduction { tensor: f, relative_error: 0.0, absolute_error: 0.0, converged: true });
    }
    let ranks: Vec<usize> = if cfg.adaptive {
        (cfg.start_rank.clamp(1, r_target)..=r_target).collect()
    } else {
        vec![r_target]
    };
    let mut best: Option<ALSResult> = None;
    for r in ranks {
        if r >= f.rank() {
            return Ok(Reduction { tensor: f, relative_error: 0.0, absolute_error: 0.0, converged: true });
        }
        let mut als = cfg.als.clone();
        als.target_relative = eps;
        let res = cp_approx_als(Target::Cp(&f), r, &als)?;
        let rel = res.relative_residual();
        let better = best.as_ref().is_none_or(|b| res.residual < b.residual);
        if better {
            best = Some(res);
        }
        if rel <= eps {
            break;
        }
    }
    let best = best.expect("at least one rank tried");
    Ok(Reduction {
        relative_error: best.residual / norm,
        absolute_error: best.residual,
        converged: best.converged || best.residual / norm <= eps,
        tensor: best.tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs(n: usize, q: usize) -> Vec<BasisSpec> {
        (0..n).map(|_| BasisSpec::new(q, 3.0).unwrap()).collect()
    }

    #[test]
    fn zero_target_returns_zero_tensor() {
        let z = CPTensor::zeros(specs(3, 5), 2).unwrap();
        let res = cp_approx_als(Target::Cp(&z), 3, &ALSApproxConfig::default()).unwrap();
        assert_eq!(res.sweeps, 0);
        assert_eq!(res.tensor.rank(), 3);
        assert_eq!(res.tensor.norm(), 0.0);
    }

    #[test]
    fn rejects_rank_zero() {
        let z = CPTensor::zeros(specs(2, 3), 1).unwrap();
        assert!(cp_approx_als(Target::Cp(&z), 0, &ALSApproxConfig::default()).is_err());
        assert!(rank_reduce_als(&z, 0, 1e-6, &RankReduceConfig::default()).is_err());
    }

    #[test]
    fn mode_product_matches_manual() {
        // 2x3 tensor, contract mode 1 with a 1x3 row
        let t: Vec<C64> = (0..6).map(|i| C64::new(i as f64, 0.0)).collect();
        let m = DMatrix::from_row_slice(1, 3, &[C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0)]);
        let out = mode_product(&t, &[2, 3], 1, &m);
        // out[i] = Σ_j m[j] t[i + 2j]
        assert_eq!(out, vec![C64::new(0.0 + 4.0 + 12.0, 0.0), C64::new(1.0 + 6.0 + 15.0, 0.0)]);
    }

    #[test]
    fn seeds_reproduce_bit_for_bit() {
        let s = specs(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = CPTensor::from_factors(s.clone(), random_factors(&s, 4, &mut rng)).unwrap();
        let cfg = ALSApproxConfig { seed: 3, max_sweeps: 30, ..Default::default() };
        let a = cp_approx_als(Target::Cp(&t), 2, &cfg).unwrap();
        let b = cp_approx_als(Target::Cp(&t), 2, &cfg).unwrap();
        assert_eq!(a.tensor, b.tensor);
        assert_eq!(a.history, b.history);
    }
}
