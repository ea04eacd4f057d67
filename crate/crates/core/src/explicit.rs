//! Second-order Adams–Bashforth stepping with rank reduction after every
//! arithmetic stage, generic over the tensor format.

use crate::basis::C64;
use crate::cp::CPTensor;
use crate::cp_als::{rank_reduce_als, RankReduceConfig};
use crate::error::{Error, Result};
use crate::ht::HTTensor;
use crate::operator::SeparableOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitConfig {
    pub dt: f64,
    pub r_max: usize,
    /// Relative tolerance handed to every reduction.
    pub eps_rank: f64,
    /// Settings for the CP backend; ignored by HT.
    pub cp: RankReduceConfig,
}

impl ExplicitConfig {
    pub fn new(dt: f64, r_max: usize, eps_rank: f64) -> Self {
        Self { dt, r_max, eps_rank, cp: RankReduceConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.r_max == 0 {
            return Err(Error::InvalidRank(0));
        }
        if !(self.eps_rank >= 0.0) {
            return Err(Error::InvalidParameter("eps_rank must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRecord {
    pub stage: &'static str,
    pub rank_before: usize,
    pub rank_after: usize,
    pub abs_error: f64,
    pub rel_error: f64,
}

/// Tensor formats the explicit stepper can drive.
pub trait LowRankFormat: Clone + Send + Sync {
    fn scaled_sum(&self, a: C64, other: &Self, b: C64) -> Result<Self>;
    fn apply(&self, l: &SeparableOperator) -> Result<Self>;
    fn reduce(&self, cfg: &ExplicitConfig) -> Result<(Self, f64)>;
    fn rank(&self) -> usize;
    fn norm(&self) -> f64;
    fn evaluate(&self, z: &[f64]) -> Result<C64>;
}

impl LowRankFormat for CPTensor {
    fn scaled_sum(&self, a: C64, other: &Self, b: C64) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(CPTensor::scaled_sum(self, a, other, b))
    }

    fn apply(&self, l: &SeparableOperator) -> Result<Self> {
        l.apply(self)
    }

    fn reduce(&self, cfg: &ExplicitConfig) -> Result<(Self, f64)> {
        let r = rank_reduce_als(self, cfg.r_max, cfg.eps_rank, &cfg.cp)?;
        Ok((r.tensor, r.absolute_error))
    }

    fn rank(&self) -> usize {
        CPTensor::rank(self)
    }

    fn norm(&self) -> f64 {
        CPTensor::norm(self)
    }

    fn evaluate(&self, z: &[f64]) -> Result<C64> {
        CPTensor::evaluate(self, z)
    }
}

impl LowRankFormat for HTTensor {
    fn scaled_sum(&self, a: C64, other: &Self, b: C64) -> Result<Self> {
        HTTensor::scaled_sum(self, a, other, b)
    }

    fn apply(&self, l: &SeparableOperator) -> Result<Self> {
        self.apply_operator(l)
    }

    fn reduce(&self, cfg: &ExplicitConfig) -> Result<(Self, f64)> {
        let t = self.truncate(cfg.r_max, cfg.eps_rank)?;
        Ok((t.tensor, t.error_estimate))
    }

    fn rank(&self) -> usize {
        self.max_rank()
    }

    fn norm(&self) -> f64 {
        HTTensor::norm(self)
    }

    fn evaluate(&self, z: &[f64]) -> Result<C64> {
        HTTensor::evaluate(self, z)
    }
}

fn reduce_logged<F: LowRankFormat>(f: F, stage: &'static str, cfg: &ExplicitConfig, log: &mut Vec<ReductionRecord>) -> Result<F> {
    let before = f.rank();
    let norm = f.norm();
    let (g, err) = f.reduce(cfg)?;
    let rec = ReductionRecord {
        stage,
        rank_before: before,
        rank_after: g.rank(),
        abs_error: err,
        rel_error: if norm > 0.0 { err / norm } else { err },
    };
    log::trace!("{stage}: rank {} -> {}, rel err {:e}", rec.rank_before, rec.rank_after, rec.rel_error);
    log.push(rec);
    Ok(g)
}

const ONE: C64 = C64::new(1.0, 0.0);

/// `f_{n+2} = f_{n+1} + (dt/2)·L(3 f_{n+1} − f_n)`.
pub fn ab2_step<F: LowRankFormat>(
    f_n: &F,
    f_n1: &F,
    l: &SeparableOperator,
    cfg: &ExplicitConfig,
) -> Result<(F, Vec<ReductionRecord>)> {
    cfg.validate()?;
    let mut log = Vec::with_capacity(3);
    let w = f_n1.scaled_sum(C64::new(3.0, 0.0), f_n, C64::new(-1.0, 0.0))?;
    let w = reduce_logged(w, "combine", cfg, &mut log)?;
    let lw = reduce_logged(w.apply(l)?, "operator", cfg, &mut log)?;
    let next = f_n1.scaled_sum(ONE, &lw, C64::new(cfg.dt / 2.0, 0.0))?;
    let next = reduce_logged(next, "update", cfg, &mut log)?;
    Ok((next, log))
}

/// One explicit midpoint step, reducing after every stage.
pub fn startup_step<F: LowRankFormat>(f_0: &F, l: &SeparableOperator, cfg: &ExplicitConfig) -> Result<(F, Vec<ReductionRecord>)> {
    cfg.validate()?;
    let mut log = Vec::with_capacity(4);
    let k1 = reduce_logged(f_0.apply(l)?, "operator", cfg, &mut log)?;
    let half = f_0.scaled_sum(ONE, &k1, C64::new(cfg.dt / 2.0, 0.0))?;
    let half = reduce_logged(half, "midpoint", cfg, &mut log)?;
    let k2 = reduce_logged(half.apply(l)?, "operator", cfg, &mut log)?;
    let next = f_0.scaled_sum(ONE, &k2, C64::new(cfg.dt, 0.0))?;
    let next = reduce_logged(next, "update", cfg, &mut log)?;
    Ok((next, log))
}

/// Per-step record for the CSV log.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitStepLog {
    pub step: usize,
    pub time: f64,
    pub reductions: Vec<ReductionRecord>,
}

impl ExplicitStepLog {
    pub const CSV_HEADER: &'static str = "step,time,stage,rank_before,rank_after,abs_error,rel_error";

    pub fn csv_rows(&self) -> Vec<String> {
        self.reductions
            .iter()
            .map(|r| {
                format!(
                    "{},{:.9},{},{},{},{:.6e},{:.6e}",
                    self.step, self.time, r.stage, r.rank_before, r.rank_after, r.abs_error, r.rel_error
                )
            })
            .collect()
    }
}

/// Runs `steps` steps from `f_0` (RK2 startup, then AB2), calling `observe`
/// with `(step, time, state)` after the initial state and every step.
pub fn integrate<F, O>(f_0: &F, l: &SeparableOperator, cfg: &ExplicitConfig, steps: usize, mut observe: O) -> Result<(F, Vec<ExplicitStepLog>)>
where
    F: LowRankFormat,
    O: FnMut(usize, f64, &F) -> Result<()>,
{
    cfg.validate()?;
    let mut logs = Vec::with_capacity(steps);
    observe(0, 0.0, f_0)?;
    if steps == 0 {
        return Ok((f_0.clone(), logs));
    }
    let (mut cur, rec) = startup_step(f_0, l, cfg)?;
    logs.push(ExplicitStepLog { step: 1, time: cfg.dt, reductions: rec });
    observe(1, cfg.dt, &cur)?;
    let mut prev = f_0.clone();
    for n in 2..=steps {
        let (next, rec) = ab2_step(&prev, &cur, l, cfg)?;
        let t = n as f64 * cfg.dt;
        logs.push(ExplicitStepLog { step: n, time: t, reductions: rec });
        observe(n, t, &next)?;
        prev = std::mem::replace(&mut cur, next);
    }
    Ok((cur, logs))
}
