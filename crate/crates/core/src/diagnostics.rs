//! Error metrics, velocity moments and decay-rate fits.

use std::io::Write;

use crate::basis::C64;
use crate::cp::CPTensor;
use crate::error::{Error, Result};
use crate::models::{maxwellian, BGKSpec};

/// `(1/N)·‖X − Y‖₁ / (max X − min Y)`. Not symmetric in its arguments.
pub fn nmae(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch(format!("nmae needs equal non-empty inputs, got {} and {}", x.len(), y.len())));
    }
    let max_x = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_y = y.iter().copied().fold(f64::INFINITY, f64::min);
    let den = max_x - min_y;
    if !(den.abs() >= 1e-300) {
        return Err(Error::UndefinedMetric(format!("nmae denominator is {den:e}")));
    }
    let l1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    Ok(l1 / x.len() as f64 / den)
}

/// `|f − f̂| / |f|` at the point `z`.
pub fn relative_pointwise_error<E>(exact: E, approx: C64, z: &[f64], t: f64) -> Result<f64>
where
    E: Fn(&[f64], f64) -> Result<f64>,
{
    let f = exact(z, t)?;
    if f == 0.0 {
        return Err(Error::UndefinedMetric("exact value is zero at the probe".into()));
    }
    Ok((C64::new(f, 0.0) - approx).norm() / f.abs())
}

/// 200 points `(x = 0, v = s·(1,1,1)/√3)` with speeds `s = i·b_v/200`.
pub fn radial_samples(spec: &BGKSpec) -> Vec<[f64; 6]> {
    radial_samples_n(spec.b_v, 200)
}

pub fn radial_samples_n(b_v: f64, n: usize) -> Vec<[f64; 6]> {
    let d = 1.0 / 3f64.sqrt();
    (0..n)
        .map(|i| {
            let c = i as f64 * b_v / n as f64 * d;
            [0.0, 0.0, 0.0, c, c, c]
        })
        .collect()
}

/// Real parts of `f` at the given 6D points.
pub fn sample(f: &CPTensor, points: &[[f64; 6]]) -> Result<Vec<f64>> {
    points.iter().map(|p| f.evaluate(p).map(|v| v.re)).collect()
}

/// NMAE of `f` against the analytic Maxwellian on the radial sample set.
pub fn nmae_vs_maxwellian(f: &CPTensor, spec: &BGKSpec) -> Result<f64> {
    let pts = radial_samples(spec);
    let approx = sample(f, &pts)?;
    let exact: Vec<f64> = pts.iter().map(|p| maxwellian([p[3], p[4], p[5]], spec)).collect();
    nmae(&approx, &exact)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub time: f64,
    pub mean_density: f64,
    pub mean_velocity: [f64; 3],
    pub mean_temperature: f64,
}

impl MomentReport {
    pub const CSV_HEADER: &'static str = "t,rho,ux,uy,uz,T";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.9e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.time,
            self.mean_density,
            self.mean_velocity[0],
            self.mean_velocity[1],
            self.mean_velocity[2],
            self.mean_temperature
        )
    }

    /// Largest relative drift of density, speed and temperature against `base`.
    /// Speed drift is measured in units of `sqrt(RT)`.
    pub fn max_drift(&self, base: &MomentReport, spec: &BGKSpec) -> f64 {
        let speed = |u: &[f64; 3]| u.iter().map(|c| c * c).sum::<f64>().sqrt();
        let d_rho = (self.mean_density - base.mean_density).abs() / base.mean_density.abs();
        let d_u = (speed(&self.mean_velocity) - speed(&base.mean_velocity)).abs() / spec.rt().sqrt();
        let d_t = (self.mean_temperature - base.mean_temperature).abs() / base.mean_temperature.abs();
        d_rho.max(d_u).max(d_t)
    }
}

/// Unnormalized integrals `(∫f, ∫v_i f, ∫|v|² f)` over the whole box.
pub fn raw_moments(f: &CPTensor) -> Result<(f64, [f64; 3], f64)> {
    if f.ndims() != 6 {
        return Err(Error::ShapeMismatch(format!("moments need a 6D tensor, got {}D", f.ndims())));
    }
    let r = f.rank();
    let mut ints = vec![[vec![C64::new(0.0, 0.0); r], vec![C64::new(0.0, 0.0); r], vec![C64::new(0.0, 0.0); r]]; 6];
    for (k, spec) in f.specs().iter().enumerate() {
        let maxp = if k < 3 { 0 } else { 2 };
        for p in 0..=maxp {
            let m = spec.monomial_integrals(p)?;
            for l in 0..r {
                ints[k][p as usize][l] = f.factor(k).column(l).iter().zip(&m).map(|(c, w)| c * w).sum();
            }
        }
    }
    let prod_except = |l: usize, skip: Option<usize>, p: usize| {
        let mut v = C64::new(1.0, 0.0);
        for (k, ik) in ints.iter().enumerate() {
            v *= if Some(k) == skip { ik[p][l] } else { ik[0][l] };
        }
        v
    };
    let mut mass = C64::new(0.0, 0.0);
    let mut mom = [C64::new(0.0, 0.0); 3];
    let mut e2 = C64::new(0.0, 0.0);
    for l in 0..r {
        mass += prod_except(l, None, 0);
        for i in 0..3 {
            mom[i] += prod_except(l, Some(3 + i), 1);
            e2 += prod_except(l, Some(3 + i), 2);
        }
    }
    Ok((mass.re, [mom[0].re, mom[1].re, mom[2].re], e2.re))
}

/// Box-averaged density, bulk velocity and temperature.
pub fn moments(f: &CPTensor, spec: &BGKSpec, time: f64) -> Result<MomentReport> {
    let (mass, mom, e2) = raw_moments(f)?;
    let vol = (2.0 * spec.b_x).powi(3);
    let rho = mass / vol;
    if !(rho > 0.0) {
        return Err(Error::InvalidState(format!("mean density {rho:e} is not positive")));
    }
    let u = [mom[0] / mass, mom[1] / mass, mom[2] / mass];
    let u2: f64 = u.iter().map(|c| c * c).sum();
    let udotm: f64 = u.iter().zip(&mom).map(|(a, b)| a * b).sum();
    let thermal = e2 - 2.0 * udotm + u2 * mass;
    let temp = thermal / (3.0 * mass * spec.gas_constant);
    Ok(MomentReport { time, mean_density: rho, mean_velocity: u, mean_temperature: temp })
}

/// Decay rate `λ` from a least-squares fit of `log(series) ≈ c − λ t`, using only
/// points at or above `2·floor`.
pub fn fit_decay_rate(times: &[f64], series: &[f64], floor: f64) -> Result<f64> {
    if times.len() != series.len() {
        return Err(Error::ShapeMismatch("times and series differ in length".into()));
    }
    if series.len() < 5 {
        return Err(Error::InvalidParameter(format!("need at least 5 points, got {}", series.len())));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .filter(|(_, &y)| y > 0.0 && y >= 2.0 * floor)
        .map(|(&t, &y)| (t, y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::UndefinedMetric("fewer than two points above the floor".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::UndefinedMetric("all fit points share one time".into()));
    }
    let rate = -sxy / sxx;
    Ok(if rate == 0.0 { 0.0 } else { rate })
}

/// Writes `# schema <name> v1`, the header, then the rows.
pub fn write_csv<W: Write>(mut w: W, schema: &str, header: &str, rows: &[String]) -> Result<()> {
    writeln!(w, "# schema {schema} v1")?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

pub const ERROR_CSV_HEADER: &str = "t,nmae,relative_error";

pub fn error_row(t: f64, nmae: Option<f64>, rel: Option<f64>) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    format!("{t:.9e},{},{}", f(nmae), f(rel))
}
