//! Material-parameter fitting from probing and sliding records.
//!
//! The elastic modulus `E` fitted and consumed here is the reduced modulus of
//! the tool/surface pair, i.e. the `E` of `d = (9F²/(16E²R))^(1/3)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PROBE_SAMPLES: usize = 10;
pub const MIN_SLIDING_SAMPLES: usize = 20;
/// Consistency constant that turns the median absolute deviation into σ for Gaussian noise.
const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub f_n: f64,
    pub d_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeRecord {
    pub samples: Vec<ProbeSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingSample {
    pub f_fric_n: f64,
    pub v_mps: f64,
    pub f_z_n: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlidingRecord {
    pub samples: Vec<SlidingSample>,
}

fn read_samples<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

impl ProbeRecord {
    pub fn from_csv(path: &Path) -> Result<Self> {
        let rec = Self {
            samples: read_samples(path)?,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.iter().any(|s| !(s.f_n >= 0.0) || !(s.d_m >= 0.0)) {
            return Err(Error::Fit("probe samples need F >= 0 and d >= 0".into()));
        }
        Ok(())
    }
}

impl SlidingRecord {
    pub fn from_csv(path: &Path) -> Result<Self> {
        let rec = Self {
            samples: read_samples(path)?,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .samples
            .iter()
            .any(|s| !(s.f_z_n >= 0.0) || !(s.v_mps >= 0.0) || !s.f_fric_n.is_finite())
        {
            return Err(Error::Fit("sliding samples need F_z >= 0 and V_e >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    /// `None` when the data cannot determine the parameter.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub parameters: Vec<FitParameter>,
    pub r_squared: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest and mean robust weight of the final pass (1 for unweighted fits).
    pub weight_min: f64,
    pub weight_mean: f64,
}

impl FitReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).and_then(|p| p.value)
    }

    /// Header and one data row.
    pub fn summary_csv(&self) -> String {
        let mut header = Vec::new();
        let mut row = Vec::new();
        for p in &self.parameters {
            header.push(p.name.clone());
            row.push(p.value.map_or_else(|| "nan".to_string(), |v| format!("{v:.16e}")));
        }
        header.extend(["r_squared", "iterations", "converged"].map(String::from));
        row.push(format!("{:.16e}", self.r_squared));
        row.push(self.iterations.to_string());
        row.push(self.converged.to_string());
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// `1 − SS_res / SS_tot` with a mean-centred total sum of squares.
pub fn r_squared(residuals: &[f64], observations: &[f64]) -> f64 {
    let n = observations.len() as f64;
    let mean = observations.iter().sum::<f64>() / n;
    let ss_tot: f64 = observations.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    1.0 - ss_res / ss_tot
}

fn hertz_indentation(force: f64, modulus: f64, radius: f64) -> f64 {
    (9.0 * force * force / (16.0 * modulus * modulus * radius)).cbrt()
}

/// Least-squares fit of the reduced modulus to `(F, d)` pairs by damped
/// Gauss–Newton on `log E`.
pub fn fit_young_modulus(rec: &ProbeRecord, radius: f64) -> Result<FitReport> {
    rec.validate()?;
    if rec.samples.len() < MIN_PROBE_SAMPLES {
        return Err(Error::Fit(format!(
            "{} probe samples, at least {MIN_PROBE_SAMPLES} required",
            rec.samples.len()
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Fit("tip radius must be positive".into()));
    }
    if rec.samples.iter().all(|s| s.f_n == 0.0) {
        return Err(Error::Fit("all probe forces are zero".into()));
    }
    // d_i = c_i · E^(-2/3)
    let c: Vec<f64> = rec
        .samples
        .iter()
        .map(|s| (9.0 * s.f_n * s.f_n / (16.0 * radius)).cbrt())
        .collect();
    let d: Vec<f64> = rec.samples.iter().map(|s| s.d_m).collect();

    let mut starts: Vec<f64> = c
        .iter()
        .zip(&d)
        .filter(|(ci, di)| **ci > 0.0 && **di > 0.0)
        .map(|(ci, di)| 1.5 * (ci / di).ln())
        .collect();
    if starts.is_empty() {
        return Err(Error::Fit("no sample with positive force and indentation".into()));
    }
    starts.sort_by(f64::total_cmp);
    let mut theta = starts[starts.len() / 2];

    let sse = |theta: f64| -> f64 {
        let s = (-2.0 * theta / 3.0).exp();
        c.iter().zip(&d).map(|(ci, di)| (di - ci * s).powi(2)).sum()
    };
    let mut lambda = 1e-3;
    let mut cost = sse(theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 200 {
        iterations += 1;
        let s = (-2.0 * theta / 3.0).exp();
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for (ci, di) in c.iter().zip(&d) {
            let model = ci * s;
            let jac = -2.0 / 3.0 * model;
            jtj += jac * jac;
            jtr += jac * (di - model);
        }
        if jtj == 0.0 {
            break;
        }
        let step = jtr / (jtj * (1.0 + lambda));
        let trial = sse(theta + step);
        if trial <= cost {
            theta += step;
            cost = trial;
            lambda = (lambda * 0.1).max(1e-12);
            if step.abs() < 1e-14 * theta.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // no descent left: stationary to working precision
                converged = true;
                break;
            }
        }
    }
    let e = theta.exp();
    let residuals: Vec<f64> = d.iter().zip(&c).map(|(di, ci)| di - ci * e.powf(-2.0 / 3.0)).collect();
    let r2 = r_squared(&residuals, &d);
    Ok(FitReport {
        parameters: vec![FitParameter {
            name: "young_modulus_pa".into(),
            value: Some(e),
        }],
        r_squared: if r2.is_nan() { 1.0 } else { r2 },
        iterations,
        converged,
        weight_min: 1.0,
        weight_mean: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrictionFitOptions {
    /// Ignore samples with normal load above this value.
    pub fz_cap: Option<f64>,
    pub reweight_iters: usize,
    /// Plain least squares when false.
    pub robust: bool,
}

impl Default for FrictionFitOptions {
    fn default() -> Self {
        Self {
            fz_cap: None,
            reweight_iters: 10,
            robust: true,
        }
    }
}

/// Logistic weight `tanh(t)/t` with `t = e/σ`.
pub fn logistic_weight(e: f64, sigma: f64) -> f64 {
    let t = e / sigma;
    if t.abs() < 1e-8 {
        1.0
    } else {
        t.tanh() / t
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Regressor multiplying μ: `F_z [1 + (2ν−1) 3 d(F_z) / (10 R)]`.
pub fn friction_regressor(fz: f64, nu: f64, radius: f64, modulus: f64) -> f64 {
    let d = hertz_indentation(fz, modulus, radius);
    fz * (1.0 + (2.0 * nu - 1.0) * 3.0 * d / (10.0 * radius))
}

fn weighted_lstsq(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let sw = w.map(f64::sqrt);
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= sw[i];
    }
    let yw = y.component_mul(&sw);
    let svd = xw.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Rank("design matrix is rank deficient".into()));
    }
    svd.solve(&yw, 0.0).map_err(|e| Error::Rank(e.to_string()))
}

/// Fits `(μ, k_d)` of `F_fric = μ F_z [1 + (2ν−1) 3a²/(10R²)] + k_d V_e`.
pub fn fit_friction(
    rec: &SlidingRecord,
    nu: f64,
    radius: f64,
    modulus: f64,
    opts: &FrictionFitOptions,
) -> Result<FitReport> {
    rec.validate()?;
    if !(radius > 0.0) || !(modulus > 0.0) {
        return Err(Error::Fit("radius and modulus must be positive".into()));
    }
    let samples: Vec<&SlidingSample> = rec
        .samples
        .iter()
        .filter(|s| opts.fz_cap.is_none_or(|cap| s.f_z_n <= cap))
        .collect();
    if samples.len() < MIN_SLIDING_SAMPLES {
        return Err(Error::Fit(format!(
            "{} sliding samples, at least {MIN_SLIDING_SAMPLES} required",
            samples.len()
        )));
    }
    let n = samples.len();
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.f_fric_n));
    let x1: Vec<f64> = samples
        .iter()
        .map(|s| friction_regressor(s.f_z_n, nu, radius, modulus))
        .collect();
    let mu_identifiable = x1.iter().any(|&v| v != 0.0);
    let x = if mu_identifiable {
        DMatrix::from_fn(n, 2, |i, j| if j == 0 { x1[i] } else { samples[i].v_mps })
    } else {
        DMatrix::from_fn(n, 1, |i, _| samples[i].v_mps)
    };

    let mut w = DVector::from_element(n, 1.0);
    let mut beta = weighted_lstsq(&x, &y, &w)?;
    let mut iterations = 1;
    if opts.robust {
        for _ in 0..opts.reweight_iters {
            let resid = &y - &x * &beta;
            let mut abs: Vec<f64> = resid.iter().map(|e| e.abs()).collect();
            let sigma = MAD_SCALE * median(&mut abs);
            if !(sigma > 0.0) {
                break;
            }
            w = resid.map(|e| logistic_weight(e, sigma));
            let next = weighted_lstsq(&x, &y, &w)?;
            let change = (&next - &beta).amax();
            beta = next;
            iterations += 1;
            if change <= 1e-15 * beta.amax() {
                break;
            }
        }
    }
    let resid = &y - &x * &beta;
    let r2 = r_squared(resid.as_slice(), y.as_slice());
    let (mu, kd) = if mu_identifiable {
        (Some(beta[0]), beta[1])
    } else {
        (None, beta[0])
    };
    Ok(FitReport {
        parameters: vec![
            FitParameter {
                name: "mu".into(),
                value: mu,
            },
            FitParameter {
                name: "k_d".into(),
                value: Some(kd),
            },
        ],
        r_squared: r2,
        iterations,
        converged: true,
        weight_min: w.min(),
        weight_mean: w.mean(),
    })
}

/// Plain least squares on the same friction model (no reweighting).
pub fn fit_friction_plain(rec: &SlidingRecord, nu: f64, radius: f64, modulus: f64) -> Result<FitReport> {
    fit_friction(
        rec,
        nu,
        radius,
        modulus,
        &FrictionFitOptions {
            robust: false,
            ..Default::default()
        },
    )
}

/// Friction magnitude predicted by the sliding model.
pub fn friction_model(fz: f64, v: f64, mu: f64, kd: f64, nu: f64, radius: f64, modulus: f64) -> f64 {
    mu * friction_regressor(fz, nu, radius, modulus) + kd * v
}

/// 2×2 normal-equation solve used by tests as an independent route.
pub fn normal_equations_2(x1: &[f64], x2: &[f64], y: &[f64]) -> Option<Vector2<f64>> {
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for i in 0..y.len() {
        a[(0, 0)] += x1[i] * x1[i];
        a[(0, 1)] += x1[i] * x2[i];
        a[(1, 1)] += x2[i] * x2[i];
        b[0] += x1[i] * y[i];
        b[1] += x2[i] * y[i];
    }
    a[(1, 0)] = a[(0, 1)];
    a.try_inverse().map(|inv| inv * b)
}
