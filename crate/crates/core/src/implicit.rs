//! Implicit Crank–Nicolson stepping by ALS minimization of the step residual
//! `‖A f_{n+1} − B f_n − dt·c·g‖_{L2}` over the coefficients of `f_{n+1}`.
//!
//! For dimension `q` the normal equations read `M_q β_q = γ_q` with
//!
//! ```text
//! M_q = Σ_{e,z} conj(η_e) η_z [⊙_{k≠q} β_kᴴ P_k^{ez} β_k] ⊗ P_q^{ez}
//! ```
//!
//! where `P^{ez}[s][h] = ∫ conj(L_e φ_s) L_z φ_h` are exact pair integrals and
//! unknowns are ordered term-major, mode-minor.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::basis::{BasisSpec, FactorKind, KernelCache, C64};
use crate::cp::CPTensor;
use crate::error::{Error, Result};
use crate::lsqr::lsqr;
use crate::operator::CrankNicolsonPair;

/// Right-hand side source: the step solves `A f_{n+1} = B f_n + dt·scale·source`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub scale: f64,
    pub source: CPTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Assemble every dimension from the same snapshot, solve all, then damp.
    Parallel,
    /// Gauss–Seidel: each dimension sees the already-updated ones.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ALSStepConfig {
    pub eps_tol: f64,
    pub max_sweeps: usize,
    pub delta_beta: f64,
    pub lsqr_tol: f64,
    pub lsqr_maxit: usize,
    pub workers: usize,
    pub seed: u64,
    /// Relative size of a random perturbation of the warm start; 0 disables it.
    pub perturbation: f64,
    pub schedule: Schedule,
}

impl Default for ALSStepConfig {
    fn default() -> Self {
        Self {
            eps_tol: 1e-8,
            max_sweeps: 500,
            delta_beta: 4.0,
            lsqr_tol: 1e-13,
            lsqr_maxit: 400,
            workers: 1,
            seed: 0,
            perturbation: 0.0,
            schedule: Schedule::Parallel,
        }
    }
}

impl ALSStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_tol > 0.0) {
            return Err(Error::InvalidParameter("eps_tol must be positive".into()));
        }
        if !(self.delta_beta >= 1.0) {
            return Err(Error::InvalidParameter("delta_beta must be at least 1".into()));
        }
        if self.max_sweeps == 0 || self.lsqr_maxit == 0 {
            return Err(Error::InvalidParameter("iteration caps must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::InvalidParameter("perturbation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Pair integrals for every `(A-term, A-term)`, `(A-term, B-term)` and
/// `(A-term, identity)` combination in every dimension, plus the `K` weights.
#[derive(Debug, Clone)]
pub struct OperatorTables {
    specs: Vec<BasisSpec>,
    /// `aa[k][e * n_a + z]`
    aa: Vec<Vec<DMatrix<C64>>>,
    /// `ab[k][e * n_b + z]`
    ab: Vec<Vec<DMatrix<C64>>>,
    /// `af[k][e]`
    af: Vec<Vec<DMatrix<C64>>>,
    k_left: DMatrix<C64>,
    k_right: DMatrix<C64>,
    eta: Vec<C64>,
    dt: f64,
    cache: KernelCache,
}

impl OperatorTables {
    pub fn new(pair: &CrankNicolsonPair, specs: &[BasisSpec]) -> Result<Self> {
        Self::with_cache(pair, specs, KernelCache::new())
    }

    pub fn with_cache(pair: &CrankNicolsonPair, specs: &[BasisSpec], cache: KernelCache) -> Result<Self> {
        let n = specs.len();
        if pair.a.ndims() != n || pair.b.ndims() != n {
            return Err(Error::ShapeMismatch(format!(
                "operator has {} dimensions, basis has {n}",
                pair.a.ndims()
            )));
        }
        let ta = pair.a.terms();
        let tb = pair.b.terms();
        let mut aa = Vec::with_capacity(n);
        let mut ab = Vec::with_capacity(n);
        let mut af = Vec::with_capacity(n);
        for (k, spec) in specs.iter().enumerate() {
            let mut row = Vec::new();
            for e in ta {
                for z in ta {
                    row.push(cache.pair(spec, e.factors[k], z.factors[k]));
                }
            }
            aa.push(row);
            let mut row = Vec::new();
            for e in ta {
                for z in tb {
                    row.push(cache.pair(spec, e.factors[k], z.factors[k]));
                }
            }
            ab.push(row);
            af.push(ta.iter().map(|e| cache.pair(spec, e.factors[k], FactorKind::Identity)).collect());
        }
        let eta = pair.eta();
        let zeta = pair.zeta();
        let k_left = DMatrix::from_fn(eta.len(), eta.len(), |e, z| eta[e].conj() * eta[z]);
        let k_right = DMatrix::from_fn(eta.len(), zeta.len(), |e, z| eta[e].conj() * zeta[z]);
        Ok(Self { specs: specs.to_vec(), aa, ab, af, k_left, k_right, eta, dt: pair.dt, cache })
    }

    pub fn specs(&self) -> &[BasisSpec] {
        &self.specs
    }

    pub fn k_left(&self) -> &DMatrix<C64> {
        &self.k_left
    }

    pub fn k_right(&self) -> &DMatrix<C64> {
        &self.k_right
    }

    /// Number of distinct moment kernels behind the pair tables.
    pub fn kernel_count(&self) -> usize {
        self.cache.len()
    }

    fn n_a(&self) -> usize {
        self.k_left.nrows()
    }

    fn n_b(&self) -> usize {
        self.k_right.ncols()
    }
}

/// Per-dimension reduced Gram blocks `β_kᴴ P_k β'_k` for one iterate.
struct Blocks {
    /// `[k][e * n_a + z]`, `r × r`
    aa: Vec<Vec<DMatrix<C64>>>,
    /// `[k][e * n_b + z]`, `r × r_old`
    ab: Vec<Vec<DMatrix<C64>>>,
    /// `[k][e]`, `r × r_src`
    af: Vec<Vec<DMatrix<C64>>>,
}

fn blocks_for(
    k: usize,
    tables: &OperatorTables,
    beta: &DMatrix<C64>,
    old: &DMatrix<C64>,
    source: Option<&DMatrix<C64>>,
) -> (Vec<DMatrix<C64>>, Vec<DMatrix<C64>>, Vec<DMatrix<C64>>) {
    let bh = beta.adjoint();
    let aa = tables.aa[k].iter().map(|p| &bh * p * beta).collect();
    let ab = tables.ab[k].iter().map(|p| &bh * p * old).collect();
    let af = match source {
        Some(s) => tables.af[k].iter().map(|p| &bh * p * s).collect(),
        None => Vec::new(),
    };
    (aa, ab, af)
}

fn compute_blocks(
    tables: &OperatorTables,
    beta: &[DMatrix<C64>],
    old: &[DMatrix<C64>],
    forcing: Option<&Forcing>,
    par: bool,
) -> Blocks {
    let one = |k: usize| blocks_for(k, tables, &beta[k], &old[k], forcing.map(|f| f.source.factor(k)));
    let per_k: Vec<_> = if par {
        (0..beta.len()).into_par_iter().map(one).collect()
    } else {
        (0..beta.len()).map(one).collect()
    };
    let mut b = Blocks { aa: Vec::new(), ab: Vec::new(), af: Vec::new() };
    for (aa, ab, af) in per_k {
        b.aa.push(aa);
        b.ab.push(ab);
        b.af.push(af);
    }
    b
}

fn hadamard_except(blocks: &[Vec<DMatrix<C64>>], idx: usize, skip: usize, rows: usize, cols: usize) -> DMatrix<C64> {
    let mut w = DMatrix::from_element(rows, cols, C64::new(1.0, 0.0));
    for (k, b) in blocks.iter().enumerate() {
        if k != skip {
            w.component_mul_assign(&b[idx]);
        }
    }
    w
}

fn assemble_m(q: usize, tables: &OperatorTables, blocks: &Blocks, r: usize) -> DMatrix<C64> {
    let qn = tables.specs[q].modes();
    let na = tables.n_a();
    let mut m = DMatrix::zeros(r * qn, r * qn);
    for e in 0..na {
        for z in 0..na {
            let kl = tables.k_left[(e, z)];
            if kl == C64::new(0.0, 0.0) {
                continue;
            }
            let idx = e * na + z;
            let w = hadamard_except(&blocks.aa, idx, q, r, r) * kl;
            m += w.kronecker(&tables.aa[q][idx]);
        }
    }
    m
}

fn assemble_gamma(
    q: usize,
    tables: &OperatorTables,
    blocks: &Blocks,
    r: usize,
    old_q: &DMatrix<C64>,
    forcing: Option<&Forcing>,
) -> DVector<C64> {
    let qn = tables.specs[q].modes();
    let (na, nb) = (tables.n_a(), tables.n_b());
    let mut g = DMatrix::zeros(qn, r);
    for e in 0..na {
        for z in 0..nb {
            let kr = tables.k_right[(e, z)];
            if kr == C64::new(0.0, 0.0) {
                continue;
            }
            let idx = e * nb + z;
            let w = hadamard_except(&blocks.ab, idx, q, r, old_q.ncols());
            g += (&tables.ab[q][idx] * old_q) * w.transpose() * kr;
        }
    }
    if let Some(f) = forcing {
        let rs = f.source.rank();
        let c = C64::new(tables.dt * f.scale, 0.0);
        for e in 0..na {
            let w = hadamard_except(&blocks.af, e, q, r, rs);
            g += (&tables.af[q][e] * f.source.factor(q)) * w.transpose() * (tables.eta[e].conj() * c);
        }
    }
    DVector::from_column_slice(g.as_slice())
}

fn check_shapes(beta: &[DMatrix<C64>], tables: &OperatorTables) -> Result<usize> {
    if beta.len() != tables.specs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficient blocks for {} dimensions",
            beta.len(),
            tables.specs.len()
        )));
    }
    let r = beta[0].ncols();
    for (b, s) in beta.iter().zip(&tables.specs) {
        if b.nrows() != s.modes() || b.ncols() != r {
            return Err(Error::ShapeMismatch("coefficient block has the wrong shape".into()));
        }
    }
    Ok(r)
}

/// `M_q` for the current iterate, `(rQ) × (rQ)`.
pub fn build_m(q: usize, beta_new: &[DMatrix<C64>], tables: &OperatorTables) -> Result<DMatrix<C64>> {
    let r = check_shapes(beta_new, tables)?;
    let blocks = compute_blocks(tables, beta_new, beta_new, None, false);
    Ok(assemble_m(q, tables, &blocks, r))
}

/// `γ_q`, the right-hand side matching [`build_m`].
pub fn build_gamma(
    q: usize,
    beta_new: &[DMatrix<C64>],
    beta_old: &[DMatrix<C64>],
    tables: &OperatorTables,
    forcing: Option<&Forcing>,
) -> Result<DVector<C64>> {
    let r = check_shapes(beta_new, tables)?;
    check_shapes(beta_old, tables)?;
    if let Some(f) = forcing {
        if f.source.specs() != tables.specs() {
            return Err(Error::ShapeMismatch("forcing lives on a different basis".into()));
        }
    }
    let blocks = compute_blocks(tables, beta_new, beta_old, forcing, false);
    Ok(assemble_gamma(q, tables, &blocks, r, &beta_old[q], forcing))
}

#[derive(Debug, Clone)]
pub struct BetaSolve {
    pub beta: DVector<C64>,
    pub residual: f64,
    pub capped: bool,
}

/// Least-squares solve of `M β = γ`, warm-started at `beta_init`.
pub fn solve_beta(m: &DMatrix<C64>, gamma: &DVector<C64>, beta_init: &DVector<C64>, tol: f64, maxit: usize) -> BetaSolve {
    let r = lsqr(m, gamma, beta_init, tol, maxit);
    BetaSolve { beta: r.x, residual: r.residual, capped: r.hit_cap }
}

/// `max_k ‖β_new_k − β_int_k‖ / ‖β_int_k‖`; a zero snapshot counts as converged
/// only when the new block is zero too, otherwise `+∞`.
pub fn converged(beta_int: &[DMatrix<C64>], beta_new: &[DMatrix<C64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, b) in beta_int.iter().zip(beta_new) {
        let na = a.norm();
        let d = (b - a).norm();
        let e = if na == 0.0 {
            if b.norm() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / na
        };
        worst = worst.max(e);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub sweeps: usize,
    pub eps_conv: f64,
    pub converged: bool,
    pub lsqr_capped: usize,
    pub wall: f64,
    pub assembly_time: f64,
    pub solve_time: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "step,sweeps,eps_conv,converged,lsqr_capped,wall_s,assembly_s,solve_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6e},{},{},{:.6},{:.6},{:.6}",
            self.step,
            self.sweeps,
            self.eps_conv,
            self.converged,
            self.lsqr_capped,
            self.wall,
            self.assembly_time,
            self.solve_time
        )
    }
}

/// Owns the operator tables and the worker pool across steps.
pub struct ImplicitStepper {
    tables: OperatorTables,
    config: ALSStepConfig,
    pool: rayon::ThreadPool,
    steps_taken: usize,
}

impl ImplicitStepper {
    pub fn new(pair: &CrankNicolsonPair, specs: &[BasisSpec], config: ALSStepConfig) -> Result<Self> {
        config.validate()?;
        let tables = OperatorTables::new(pair, specs)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(Self { tables, config, pool, steps_taken: 0 })
    }

    pub fn tables(&self) -> &OperatorTables {
        &self.tables
    }

    pub fn config(&self) -> &ALSStepConfig {
        &self.config
    }

    /// One CN step at the rank of `f_n`.
    pub fn step(&mut self, f_n: &CPTensor, forcing: Option<&Forcing>) -> Result<(CPTensor, StepReport)> {
        if f_n.specs() != self.tables.specs() {
            return Err(Error::ShapeMismatch("state lives on a different basis than the operator tables".into()));
        }
        if let Some(f) = forcing {
            if f.source.specs() != self.tables.specs() {
                return Err(Error::ShapeMismatch("forcing lives on a different basis".into()));
            }
        }
        let start = Instant::now();
        let cfg = self.config.clone();
        let old: Vec<DMatrix<C64>> = f_n.factors().to_vec();
        let mut beta = old.clone();
        if cfg.perturbation > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(self.steps_taken as u64));
            for b in beta.iter_mut() {
                let scale = cfg.perturbation * b.norm() / ((b.len() as f64).sqrt());
                for c in b.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *c += C64::new(re, im) * scale;
                }
            }
        }
        let r = f_n.rank();
        let n = beta.len();
        let tables = &self.tables;
        let par = cfg.workers > 1;
        let mut report = StepReport {
            step: self.steps_taken,
            sweeps: 0,
            eps_conv: f64::INFINITY,
            converged: false,
            lsqr_capped: 0,
            wall: 0.0,
            assembly_time: 0.0,
            solve_time: 0.0,
        };
        let solve_one = |q: usize, m: &DMatrix<C64>, g: &DVector<C64>, init: &DMatrix<C64>| {
            let x0 = DVector::from_column_slice(init.as_slice());
            let s = solve_beta(m, g, &x0, cfg.lsqr_tol, cfg.lsqr_maxit);
            (DMatrix::from_column_slice(tables.specs[q].modes(), r, s.beta.as_slice()), s.capped)
        };
        let damp = 1.0 / cfg.delta_beta;
        while report.sweeps < cfg.max_sweeps {
            report.sweeps += 1;
            let beta_int = beta.clone();
            let eps = match cfg.schedule {
                Schedule::Parallel => {
                    let t0 = Instant::now();
                    let systems: Vec<(DMatrix<C64>, DVector<C64>)> = self.pool.install(|| {
                        let blocks = compute_blocks(tables, &beta_int, &old, forcing, par);
                        let build = |q: usize| {
                            (assemble_m(q, tables, &blocks, r), assemble_gamma(q, tables, &blocks, r, &old[q], forcing))
                        };
                        if par {
                            (0..n).into_par_iter().map(build).collect()
                        } else {
                            (0..n).map(build).collect()
                        }
                    });
                    let t1 = Instant::now();
                    let solved: Vec<(DMatrix<C64>, bool)> = self.pool.install(|| {
                        let go = |q: usize| solve_one(q, &systems[q].0, &systems[q].1, &beta_int[q]);
                        if par {
                            (0..n).into_par_iter().map(go).collect()
                        } else {
                            (0..n).map(go).collect()
                        }
                    });
                    report.assembly_time += (t1 - t0).as_secs_f64();
                    report.solve_time += t1.elapsed().as_secs_f64();
                    let new: Vec<DMatrix<C64>> = solved.iter().map(|s| s.0.clone()).collect();
                    report.lsqr_capped += solved.iter().filter(|s| s.1).count();
                    let eps = converged(&beta_int, &new);
                    for (b, (nb, bi)) in beta.iter_mut().zip(new.iter().zip(&beta_int)) {
                        *b = bi + (nb - bi) * C64::new(damp, 0.0);
                    }
                    eps
                }
                Schedule::Sequential => {
                    let mut eps: f64 = 0.0;
                    for q in 0..n {
                        let t0 = Instant::now();
                        let blocks = compute_blocks(tables, &beta, &old, forcing, false);
                        let m = assemble_m(q, tables, &blocks, r);
                        let g = assemble_gamma(q, tables, &blocks, r, &old[q], forcing);
                        let t1 = Instant::now();
                        let (nb, capped) = solve_one(q, &m, &g, &beta[q]);
                        report.assembly_time += (t1 - t0).as_secs_f64();
                        report.solve_time += t1.elapsed().as_secs_f64();
                        report.lsqr_capped += capped as usize;
                        let prev = beta[q].clone();
                        eps = eps.max(converged(std::slice::from_ref(&prev), std::slice::from_ref(&nb)));
                        beta[q] = &prev + (nb - &prev) * C64::new(damp, 0.0);
                    }
                    eps
                }
            };
            report.eps_conv = eps;
            if eps <= cfg.eps_tol {
                report.converged = true;
                break;
            }
        }
        if !report.converged {
            log::warn!(
                "implicit step {} did not converge in {} sweeps (eps_conv = {:e})",
                report.step,
                report.sweeps,
                report.eps_conv
            );
        }
        report.wall = start.elapsed().as_secs_f64();
        self.steps_taken += 1;
        Ok((CPTensor::from_factors(f_n.specs().to_vec(), beta)?, report))
    }
}

/// One-off step; builds the tables and pool each call.
pub fn step(
    f_n: &CPTensor,
    pair: &CrankNicolsonPair,
    forcing: Option<&Forcing>,
    config: &ALSStepConfig,
) -> Result<(CPTensor, StepReport)> {
    ImplicitStepper::new(pair, f_n.specs(), config.clone())?.step(f_n, forcing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{crank_nicolson_pair, SeparableOperator};

    fn random_beta(specs: &[BasisSpec], r: usize, seed: u64) -> Vec<DMatrix<C64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        specs
            .iter()
            .map(|s| {
                DMatrix::from_fn(s.modes(), r, |_, _| {
                    C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
                })
            })
            .collect()
    }

    #[test]
    fn one_dimensional_m_is_weighted_pairs() {
        let spec = BasisSpec::new(5, 1.0).unwrap();
        let l = SeparableOperator::identity(1, C64::new(-0.5, 0.0));
        let pair = crank_nicolson_pair(&l, 0.1).unwrap();
        let t = OperatorTables::new(&pair, &[spec]).unwrap();
        let beta = random_beta(t.specs(), 1, 1);
        let m = build_m(0, &beta, &t).unwrap();
        let eta = 1.0 + 0.025;
        assert!((m - DMatrix::<C64>::identity(5, 5) * C64::new(eta * eta, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn identity_operator_gives_gram() {
        let specs = vec![BasisSpec::new(3, 1.0).unwrap(), BasisSpec::new(5, 2.0).unwrap()];
        let l = SeparableOperator::identity(2, C64::new(0.0, 0.0));
        let t = OperatorTables::new(&crank_nicolson_pair(&l, 0.1).unwrap(), &specs).unwrap();
        let beta = random_beta(&specs, 1, 2);
        let m = build_m(1, &beta, &t).unwrap();
        let g = beta[0].norm_squared();
        assert!((&m - DMatrix::<C64>::identity(5, 5) * C64::new(g, 0.0)).norm() < 1e-12 * g);
        assert!((&m - m.adjoint()).norm() == 0.0);
    }

    #[test]
    fn converged_cases() {
        let a = vec![DMatrix::from_element(2, 2, C64::new(1.0, 0.0))];
        assert_eq!(converged(&a, &a), 0.0);
        let b: Vec<_> = a.iter().map(|m| m * C64::new(2.0, 0.0)).collect();
        assert!((converged(&a, &b) - 1.0).abs() < 1e-15);
        let z = vec![DMatrix::zeros(2, 2)];
        assert_eq!(converged(&z, &z), 0.0);
        assert_eq!(converged(&z, &a), f64::INFINITY);
    }

    #[test]
    fn zero_operator_step_is_identity() {
        let specs = vec![BasisSpec::new(5, 1.0).unwrap(); 3];
        let l = SeparableOperator::identity(3, C64::new(0.0, 0.0));
        let pair = crank_nicolson_pair(&l, 0.1).unwrap();
        let f = CPTensor::from_factors(specs, random_beta(&[BasisSpec::new(5, 1.0).unwrap(); 3], 2, 4)).unwrap();
        let (g, rep) = step(&f, &pair, None, &ALSStepConfig::default()).unwrap();
        assert_eq!(rep.sweeps, 1);
        assert!(rep.converged);
        let d = g.scaled_sum(C64::new(1.0, 0.0), &f, C64::new(-1.0, 0.0)).norm();
        assert!(d < 1e-10 * f.norm(), "{d}");
    }

    #[test]
    fn step_report_row_has_all_columns() {
        let rep = StepReport {
            step: 3,
            sweeps: 7,
            eps_conv: 1e-9,
            converged: true,
            lsqr_capped: 0,
            wall: 0.5,
            assembly_time: 0.1,
            solve_time: 0.2,
        };
        assert_eq!(rep.csv_row().split(',').count(), StepReport::CSV_HEADER.split(',').count());
    }
}
