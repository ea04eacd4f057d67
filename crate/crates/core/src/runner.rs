//! Experiment harness behind the `lrk` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::basis::C64;
use crate::config::{ExperimentConfig, ExperimentKind, FormatKind};
use crate::cp::CPTensor;
use crate::cp_als::{cp_approx_als, ALSApproxConfig, SeparableTerm, Target};
use crate::diagnostics::{
    error_row, fit_decay_rate, moments, nmae, nmae_vs_maxwellian, radial_samples, sample, write_csv, MomentReport,
    ERROR_CSV_HEADER,
};
use crate::error::{Error, Result};
use crate::explicit::{integrate, ExplicitConfig, ExplicitStepLog, LowRankFormat};
use crate::ht::HTTensor;
use crate::implicit::{ImplicitStepper, StepReport};
use crate::models::{advection_analytic, maxwellian, maxwellian_cp, perturbed_ic, AdvectionSpec, BGKSpec};

pub const BUILD_ID: &str = env!("LRK_BUILD_ID");

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    /// False when any implicit step hit its sweep cap.
    pub converged: bool,
    pub results: Value,
}

fn csv_file(dir: &Path, name: &str, schema: &str, header: &str, rows: &[String]) -> Result<()> {
    let f = BufWriter::new(File::create(dir.join(name))?);
    write_csv(f, schema, header, rows)
}

/// Runs one experiment, writing CSVs and `manifest.json` into the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("lrk-out").join(kind_name(cfg.kind)));
    fs::create_dir_all(&out)?;
    let start = Instant::now();
    let (converged, results) = match cfg.kind {
        ExperimentKind::BgkSteady => run_bgk(cfg, &out, false)?,
        ExperimentKind::BgkRelax => run_bgk(cfg, &out, true)?,
        ExperimentKind::AdvectionError => run_advection(cfg, &out)?,
        ExperimentKind::MaxwellianApprox => (true, run_sweep(cfg, &out)?),
        ExperimentKind::Scaling => (true, run_scaling(cfg, &out)?),
    };
    let manifest = json!({
        "kind": kind_name(cfg.kind),
        "build_id": BUILD_ID,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(cfg).map_err(|e| Error::Format(e.to_string()))?,
        "wall_seconds": start.elapsed().as_secs_f64(),
        "converged": converged,
        "results": results,
    });
    let mut f = BufWriter::new(File::create(out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(f)?;
    Ok(RunOutcome { out_dir: out, converged, results })
}

pub fn kind_name(k: ExperimentKind) -> &'static str {
    match k {
        ExperimentKind::BgkSteady => "bgk-steady",
        ExperimentKind::BgkRelax => "bgk-relax",
        ExperimentKind::AdvectionError => "advection-error",
        ExperimentKind::MaxwellianApprox => "maxwellian-approx",
        ExperimentKind::Scaling => "scaling",
    }
}

/// Initial state padded to the solver rank.
fn bgk_initial(spec: &BGKSpec, relax: bool, epsilon: f64, rank: usize) -> Result<CPTensor> {
    let f = if relax { perturbed_ic(spec, epsilon)? } else { maxwellian_cp(spec)? };
    if f.rank() > rank {
        return Err(Error::Config(format!("solver.rank {rank} is below the initial rank {}", f.rank())));
    }
    Ok(f.padded_to_rank(rank))
}

fn run_bgk(cfg: &ExperimentConfig, out: &Path, relax: bool) -> Result<(bool, Value)> {
    let spec = cfg.bgk_spec();
    let steps = cfg.step_count();
    let every = if relax { cfg.relax.sample_every } else { 1 };
    let forcing = spec.forcing()?;
    let mut f = bgk_initial(&spec, relax, cfg.relax.epsilon, cfg.solver.rank)?;
    let floor = nmae_vs_maxwellian(&maxwellian_cp(&spec)?, &spec)?;
    let pts = radial_samples(&spec);
    let exact: Vec<f64> = pts.iter().map(|p| maxwellian([p[3], p[4], p[5]], &spec)).collect();
    let mut stepper = ImplicitStepper::new(&spec.cn_pair()?, &spec.specs(), cfg.als_step())?;

    let mut moment_rows = Vec::new();
    let mut error_rows = Vec::new();
    let mut timing_rows = Vec::new();
    let (mut times, mut series) = (Vec::new(), Vec::new());
    let m0 = moments(&f, &spec, 0.0)?;
    let mut max_drift: f64 = 0.0;
    let mut max_nmae: f64 = 0.0;
    let mut unconverged = 0usize;
    let mut record = |n: usize, f: &CPTensor, rep: Option<&StepReport>| -> Result<()> {
        let t = n as f64 * spec.dt;
        if let Some(r) = rep {
            timing_rows.push(r.csv_row());
            unconverged += (!r.converged) as usize;
        }
        if n % every != 0 && n != steps {
            return Ok(());
        }
        let m: MomentReport = moments(f, &spec, t)?;
        max_drift = max_drift.max(m.max_drift(&m0, &spec));
        moment_rows.push(m.csv_row());
        let e = nmae(&sample(f, &pts)?, &exact)?;
        max_nmae = max_nmae.max(e);
        error_rows.push(error_row(t, Some(e), None));
        times.push(t);
        series.push(e);
        Ok(())
    };
    record(0, &f, None)?;
    for n in 1..=steps {
        let (g, rep) = stepper.step(&f, Some(&forcing))?;
        f = g;
        record(n, &f, Some(&rep))?;
    }
    csv_file(out, "moments.csv", "moments", MomentReport::CSV_HEADER, &moment_rows)?;
    csv_file(out, "error.csv", "error", ERROR_CSV_HEADER, &error_rows)?;
    csv_file(out, "timing_steps.csv", "timing-steps", StepReport::CSV_HEADER, &timing_rows)?;
    let mut results = json!({
        "steps": steps,
        "dt_seconds": spec.dt,
        "approximation_floor": floor,
        "max_nmae": max_nmae,
        "max_moment_drift": max_drift,
        "unconverged_steps": unconverged,
    });
    if relax {
        let rate = fit_decay_rate(&times, &series, floor).ok();
        results["decay_rate"] = json!(rate);
        results["decay_rate_times_tau"] = json!(rate.map(|r| r * spec.tau_r));
    }
    Ok((unconverged == 0, results))
}

fn run_advection(cfg: &ExperimentConfig, out: &Path) -> Result<(bool, Value)> {
    let spec = cfg.advection_spec()?;
    let ecfg = ExplicitConfig::new(cfg.advection_dt(), cfg.solver.rank, cfg.solver.eps_rank);
    let steps = cfg.step_count();
    let f0 = spec.initial_condition()?;
    let (rows, logs) = match cfg.solver.format {
        FormatKind::Ht => advection_series(&spec, HTTensor::from_cp(&f0)?, &ecfg, steps, cfg.advection.sample_every)?,
        FormatKind::Cp => advection_series(&spec, f0, &ecfg, steps, cfg.advection.sample_every)?,
    };
    let mut errs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let err_rows: Vec<String> = rows.iter().map(|&(t, e)| error_row(t, None, Some(e))).collect();
    csv_file(out, "error.csv", "error", ERROR_CSV_HEADER, &err_rows)?;
    let rank_rows: Vec<String> = logs.iter().flat_map(|l| l.csv_rows()).collect();
    csv_file(out, "ranks.csv", "ranks", ExplicitStepLog::CSV_HEADER, &rank_rows)?;
    let max = errs.iter().copied().fold(0.0, f64::max);
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    Ok((true, json!({"steps": steps, "max_relative_error": max, "median_relative_error": median})))
}

/// Probe error `(t, |f − f̂|/|f|)` every `every` steps, plus the reduction log.
pub fn advection_series<F: LowRankFormat>(
    spec: &AdvectionSpec,
    f0: F,
    cfg: &ExplicitConfig,
    steps: usize,
    every: usize,
) -> Result<(Vec<(f64, f64)>, Vec<ExplicitStepLog>)> {
    let l = spec.operator()?;
    let z = spec.probe();
    let mut rows = Vec::new();
    let (_, logs) = integrate(&f0, &l, cfg, steps, |n, t, f| {
        if n % every == 0 || n == steps {
            let exact = advection_analytic(&z, t, spec)?;
            rows.push((t, (C64::new(exact, 0.0) - f.evaluate(&z)?).norm() / exact));
        }
        Ok(())
    })?;
    Ok((rows, logs))
}

/// NMAE of the rank-1 ALS fit of the Maxwellian on a `(Q, b_v)` grid.
pub fn maxwellian_nmae(spec: &BGKSpec, modes: usize, width: f64) -> Result<f64> {
    let mut s = spec.clone();
    s.modes = modes;
    s.b_v = width * spec.rt().sqrt();
    let vs = vec![s.v_spec(); 3];
    let term = SeparableTerm {
        weight: C64::new(1.0, 0.0),
        factors: (0..3)
            .map(|_| {
                let s = s.clone();
                Box::new(move |v: f64| C64::new(s.maxwellian_factor(v), 0.0)) as Box<dyn Fn(f64) -> C64 + Sync>
            })
            .collect(),
    };
    let fit = cp_approx_als(Target::Separable { specs: &vs, terms: std::slice::from_ref(&term) }, 1, &ALSApproxConfig::default())?;
    let pts = radial_samples(&s);
    let approx: Vec<f64> = pts
        .iter()
        .map(|p| fit.tensor.evaluate(&p[3..]).map(|v| v.re))
        .collect::<Result<_>>()?;
    let exact: Vec<f64> = pts.iter().map(|p| maxwellian([p[3], p[4], p[5]], &s)).collect();
    nmae(&approx, &exact)
}

fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &q in &cfg.sweep.modes {
        for &w in &cfg.sweep.widths {
            let e = maxwellian_nmae(&cfg.bgk, q, w)?;
            rows.push(format!("{q},{w},{:.9e},{e:.9e}", q as f64 / w));
            table.push(json!({"modes": q, "width": w, "nmae": e}));
        }
    }
    csv_file(out, "nmae_heatmap.csv", "nmae-heatmap", "modes,width,ratio,nmae", &rows)?;
    Ok(json!({"grid": table}))
}

fn run_scaling(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let mut rows = Vec::new();
    for &q in &cfg.scaling.modes {
        for &r in &cfg.scaling.ranks {
            for &w in &cfg.scaling.workers {
                let secs = time_bgk_sweeps(&cfg.bgk, q, r, w, cfg.scaling.sweeps, cfg.seed)?;
                rows.push(format!("{q},{r},{},{w},{:.6e}", 6 * q * r, secs));
            }
        }
    }
    csv_file(out, "scaling.csv", "scaling", "modes,rank,dofs,workers,seconds_per_sweep", &rows)?;
    Ok(json!({"rows": rows.len()}))
}

/// Wall seconds per ALS sweep of one BGK step from the perturbed state.
pub fn time_bgk_sweeps(base: &BGKSpec, modes: usize, rank: usize, workers: usize, sweeps: usize, seed: u64) -> Result<f64> {
    let mut spec = base.clone();
    spec.modes = modes;
    let f0 = perturbed_ic(&spec, 0.3)?;
    let f0 = if rank >= 2 { f0.padded_to_rank(rank) } else { maxwellian_cp(&spec)? };
    let mut als = crate::implicit::ALSStepConfig {
        workers,
        seed,
        max_sweeps: sweeps,
        eps_tol: f64::MIN_POSITIVE,
        ..Default::default()
    };
    // a small warm-start perturbation keeps padded zero terms from making every solve trivial
    als.perturbation = 1e-3;
    let mut st = ImplicitStepper::new(&spec.cn_pair()?, &spec.specs(), als)?;
    let (_, rep) = st.step(&f0, Some(&spec.forcing()?))?;
    Ok((rep.assembly_time + rep.solve_time) / rep.sweeps as f64)
}
