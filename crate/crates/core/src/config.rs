//! Experiment configuration (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::implicit::{ALSStepConfig, Schedule};
use crate::models::{AdvectionSpec, BGKSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BgkSteady,
    BgkRelax,
    AdvectionError,
    MaxwellianApprox,
    Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatKind {
    Cp,
    Ht,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Implicit solver rank (BGK) or explicit rank cap (advection).
    pub rank: usize,
    /// Time step; in units of `τ_R` for BGK runs.
    pub dt: Option<f64>,
    pub eps_tol: f64,
    pub max_sweeps: usize,
    pub delta_beta: f64,
    pub lsqr_tol: f64,
    pub lsqr_maxit: usize,
    pub schedule: ScheduleKind,
    pub perturbation: f64,
    pub eps_rank: f64,
    pub format: FormatKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = ALSStepConfig::default();
        Self {
            rank: 2,
            dt: None,
            eps_tol: d.eps_tol,
            max_sweeps: d.max_sweeps,
            delta_beta: d.delta_beta,
            lsqr_tol: d.lsqr_tol,
            lsqr_maxit: d.lsqr_maxit,
            schedule: ScheduleKind::Parallel,
            perturbation: 0.0,
            eps_rank: 1e-12,
            format: FormatKind::Ht,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvectionConfig {
    pub n: usize,
    /// Row-major `N × N`; the spiral default when absent.
    pub c: Option<Vec<Vec<f64>>>,
    pub half_width: f64,
    pub modes: usize,
    pub t_end: f64,
    /// Record the probe error every this many steps.
    pub sample_every: usize,
}

impl Default for AdvectionConfig {
    fn default() -> Self {
        Self { n: 2, c: None, half_width: 10.0, modes: 65, t_end: 1.0, sample_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxConfig {
    pub epsilon: f64,
    /// Sample the NMAE every this many steps.
    pub sample_every: usize,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self { epsilon: 0.3, sample_every: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub modes: Vec<usize>,
    /// `b_v / sqrt(RT)` values.
    pub widths: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { modes: vec![5, 7, 9, 11, 13, 15, 17, 21, 25], widths: (6..=20).map(|w| w as f64 / 2.0).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub modes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub workers: Vec<usize>,
    /// Sweeps timed per configuration.
    pub sweeps: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { modes: vec![5, 9, 13, 17], ranks: vec![1, 2, 4], workers: vec![1, 2, 4], sweeps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub bgk: BGKSpec,
    #[serde(default)]
    pub advection: AdvectionConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub relax: RelaxConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

fn one() -> usize {
    1
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    pub rank: Option<usize>,
    pub q_modes: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.steps {
            self.steps = Some(v);
        }
        if let Some(v) = o.dt {
            self.solver.dt = Some(v);
        }
        if let Some(v) = o.rank {
            self.solver.rank = v;
        }
        if let Some(v) = o.q_modes {
            self.bgk.modes = v;
            self.advection.modes = v;
        }
    }

    /// BGK parameters with the solver `dt` (in `τ_R`) folded in.
    pub fn bgk_spec(&self) -> BGKSpec {
        let mut s = self.bgk.clone();
        if let Some(dt) = self.solver.dt {
            s.dt = dt * s.tau_r;
        }
        s
    }

    pub fn advection_spec(&self) -> Result<AdvectionSpec> {
        let a = &self.advection;
        match &a.c {
            None => AdvectionSpec::spiral(a.n, a.half_width, a.modes),
            Some(rows) => {
                if rows.len() != a.n || rows.iter().any(|r| r.len() != a.n) {
                    return Err(Error::Config(format!("advection.c must be {0}x{0}", a.n)));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                AdvectionSpec::new(DMatrix::from_row_slice(a.n, a.n, &flat), a.half_width, a.modes)
            }
        }
    }

    pub fn als_step(&self) -> ALSStepConfig {
        let s = &self.solver;
        ALSStepConfig {
            eps_tol: s.eps_tol,
            max_sweeps: s.max_sweeps,
            delta_beta: s.delta_beta,
            lsqr_tol: s.lsqr_tol,
            lsqr_maxit: s.lsqr_maxit,
            workers: self.workers,
            seed: self.seed,
            perturbation: s.perturbation,
            schedule: match s.schedule {
                ScheduleKind::Parallel => Schedule::Parallel,
                ScheduleKind::Sequential => Schedule::Sequential,
            },
        }
    }

    /// Number of steps, with per-experiment defaults.
    pub fn step_count(&self) -> usize {
        if let Some(s) = self.steps {
            return s;
        }
        match self.kind {
            ExperimentKind::BgkSteady => 100,
            ExperimentKind::BgkRelax => (5.0 / self.solver.dt.unwrap_or(0.01)).round() as usize,
            ExperimentKind::AdvectionError => (self.advection.t_end / self.advection_dt()).round() as usize,
            ExperimentKind::MaxwellianApprox | ExperimentKind::Scaling => 0,
        }
    }

    pub fn advection_dt(&self) -> f64 {
        self.solver.dt.unwrap_or(1e-3)
    }

    /// Checks every field the selected experiment uses, before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.solver.rank == 0 {
            return Err(Error::Config("solver.rank must be at least 1".into()));
        }
        if let Some(dt) = self.solver.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::Config(format!("solver.dt must be positive, got {dt}")));
            }
        }
        if !(self.solver.eps_rank >= 0.0) {
            return Err(Error::Config("solver.eps_rank must be non-negative".into()));
        }
        let cfg_err = |e: Error| Error::Config(e.to_string());
        match self.kind {
            ExperimentKind::BgkSteady | ExperimentKind::BgkRelax => {
                self.bgk_spec().validate().map_err(cfg_err)?;
                self.als_step().validate().map_err(cfg_err)?;
                if !(0.0..1.0).contains(&self.relax.epsilon) {
                    return Err(Error::Config("relax.epsilon must lie in [0, 1)".into()));
                }
                if self.relax.sample_every == 0 {
                    return Err(Error::Config("relax.sample_every must be positive".into()));
                }
            }
            ExperimentKind::AdvectionError => {
                self.advection_spec().map_err(cfg_err)?;
                if !(self.advection.t_end > 0.0) {
                    return Err(Error::Config("advection.t_end must be positive".into()));
                }
                if self.advection.sample_every == 0 {
                    return Err(Error::Config("advection.sample_every must be positive".into()));
                }
            }
            ExperimentKind::MaxwellianApprox => {
                self.bgk.validate().map_err(cfg_err)?;
                if self.sweep.modes.is_empty() || self.sweep.widths.is_empty() {
                    return Err(Error::Config("sweep.modes and sweep.widths must be non-empty".into()));
                }
                if self.sweep.modes.iter().any(|q| q % 2 == 0 || *q == 0) {
                    return Err(Error::Config("sweep.modes must be odd".into()));
                }
                if self.sweep.widths.iter().any(|w| !(*w > 0.0)) {
                    return Err(Error::Config("sweep.widths must be positive".into()));
                }
            }
            ExperimentKind::Scaling => {
                self.bgk.validate().map_err(cfg_err)?;
                let s = &self.scaling;
                if s.modes.is_empty() || s.ranks.is_empty() || s.workers.is_empty() || s.sweeps == 0 {
                    return Err(Error::Config("scaling lists must be non-empty and sweeps positive".into()));
                }
                if s.modes.iter().any(|q| q % 2 == 0 || *q < 5) || s.ranks.contains(&0) || s.workers.contains(&0) {
                    return Err(Error::Config("scaling.modes must be odd and >= 5, ranks and workers positive".into()));
                }
            }
        }
        Ok(())
    }
}
