//! Steady-state averages over trajectory ensembles and the curve fits applied
//! to them: a generalized Lorentzian in `γ` and a straight line in `L`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::monitoring::TrajectoryRecord;

/// Trajectory-and-time average of a sampled series over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyAverage {
    pub mean: f64,
    /// RMS deviation of per-trajectory window means divided by `√N_r`.
    pub stderr: f64,
    pub n_traj: usize,
    pub window: (f64, f64),
    pub first_half: f64,
    pub second_half: f64,
    /// `None` when fewer than two trajectories make the check meaningless.
    pub stationary: Option<bool>,
}

impl SteadyAverage {
    pub fn warning(&self) -> Option<String> {
        match self.stationary {
            Some(false) => Some(format!(
                "window [{}, {}] may not be stationary: first-half mean {:.6e} vs second-half mean {:.6e}",
                self.window.0, self.window.1, self.first_half, self.second_half
            )),
            _ => None,
        }
    }
}

/// One `(γ, L)` entry of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub sites: usize,
    pub mean_sre: f64,
    pub stderr: f64,
    pub n_traj: usize,
    pub window: (f64, f64),
}

impl SweepPoint {
    pub fn new(gamma: f64, sites: usize, avg: &SteadyAverage) -> Self {
        Self {
            gamma,
            sites,
            mean_sre: avg.mean,
            stderr: avg.stderr,
            n_traj: avg.n_traj,
            window: avg.window,
        }
    }
}

/// Mean and `RMS deviation / √n` of `values`.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let rms = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, rms / n.sqrt())
}

fn window_means(times: &[f64], series: &[f64], t0: f64, t1: f64) -> Option<(f64, f64, f64)> {
    let tol = 1e-9 * t1.abs().max(1.0);
    let inside: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .filter(|(&t, _)| t >= t0 - tol && t <= t1 + tol)
        .map(|(&t, &v)| (t, v))
        .collect();
    if inside.is_empty() {
        return None;
    }
    let mid = 0.5 * (t0 + t1);
    let avg = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    };
    let all = avg(&mut inside.iter().map(|p| p.1));
    let first = avg(&mut inside.iter().filter(|p| p.0 < mid).map(|p| p.1));
    let second = avg(&mut inside.iter().filter(|p| p.0 >= mid).map(|p| p.1));
    Some((all, first, second))
}

/// Averages each record's `M₂` over `[t0, t1]`, then over records.
pub fn steady_average(records: &[TrajectoryRecord], t0: f64, t1: f64) -> Result<SteadyAverage> {
    steady_average_series(
        records
            .iter()
            .map(|r| (r.times.as_slice(), r.sre.as_slice())),
        t0,
        t1,
    )
}

/// [`steady_average`] for arbitrary `(times, values)` series.
pub fn steady_average_series<'a, I>(series: I, t0: f64, t1: f64) -> Result<SteadyAverage>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    if !(t1 > t0) {
        return invalid(format!("averaging window needs t1 > t0, got [{t0}, {t1}]"));
    }
    let mut whole = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (times, values) in series {
        if times.len() != values.len() {
            return invalid("series has mismatched time and value lengths");
        }
        let Some((w, f, s)) = window_means(times, values, t0, t1) else {
            return invalid(format!(
                "no samples inside the averaging window [{t0}, {t1}]"
            ));
        };
        whole.push(w);
        first.push(f);
        second.push(s);
    }
    if whole.is_empty() {
        return invalid("steady average needs at least one record");
    }
    let (mean, stderr) = mean_and_stderr(&whole);
    let n_traj = whole.len();
    let halves_defined = first.iter().chain(&second).all(|v| v.is_finite());
    let (first_half, first_err) = if halves_defined {
        mean_and_stderr(&first)
    } else {
        (f64::NAN, 0.0)
    };
    let (second_half, second_err) = if halves_defined {
        mean_and_stderr(&second)
    } else {
        (f64::NAN, 0.0)
    };
    let stationary = if n_traj >= 2 && halves_defined {
        let combined = (first_err * first_err + second_err * second_err).sqrt();
        Some((first_half - second_half).abs() <= 2.0 * combined)
    } else {
        None
    };
    Ok(SteadyAverage {
        mean,
        stderr,
        n_traj,
        window: (t0, t1),
        first_half,
        second_half,
        stationary,
    })
}

/// `A / (1 + (γ/γ₀)^b)`.
pub fn generalized_lorentzian(gamma: f64, amplitude: f64, gamma0: f64, exponent: f64) -> f64 {
    amplitude / (1.0 + (gamma / gamma0).powf(exponent))
}

/// Weighted data point `(x, y, σ_y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl DataPoint {
    pub fn new(x: f64, y: f64, sigma: f64) -> Self {
        Self { x, y, sigma }
    }
}

/// Result of a generalized-Lorentzian fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub gamma0: f64,
    pub exponent: f64,
    /// Covariance of `(A, γ₀, b)`.
    pub covariance: [[f64; 3]; 3],
    /// `sqrt(χ²/n)` with `χ² = Σ ((f(γ_i) − y_i)/σ_i)²`.
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `χ²` after each accepted step, starting from the initial guess.
    pub objective_history: Vec<f64>,
}

impl FitResult {
    pub fn amplitude_err(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn gamma0_err(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn exponent_err(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }

    pub fn eval(&self, gamma: f64) -> f64 {
        generalized_lorentzian(gamma, self.amplitude, self.gamma0, self.exponent)
    }
}

/// Largest cosine between the residual vector and a Jacobian column at a
/// converged fit.
pub const FIT_GRADIENT_TOL: f64 = 1e-10;
/// Relative `χ²` reduction below which an accepted step ends the fit.
pub const FIT_OBJECTIVE_TOL: f64 = 1e-12;
/// Relative step length below which an accepted step ends the fit.
pub const FIT_STEP_TOL: f64 = 1e-12;
pub const FIT_MAX_ITERATIONS: usize = 200;

/// Residuals and Jacobian with respect to `(ln A, ln γ₀, ln b)`.
fn lorentzian_residuals(points: &[DataPoint], theta: &Vector3<f64>) -> (Vec<f64>, Vec<[f64; 3]>) {
    let (a, g0, b) = (theta[0].exp(), theta[1].exp(), theta[2].exp());
    let mut r = Vec::with_capacity(points.len());
    let mut jac = Vec::with_capacity(points.len());
    for p in points {
        let log_ratio = p.x.ln() - g0.ln();
        let u = (b * log_ratio).exp();
        let f = a / (1.0 + u);
        let d = a * b * u / ((1.0 + u) * (1.0 + u));
        r.push((f - p.y) / p.sigma);
        jac.push([f / p.sigma, d / p.sigma, -d * log_ratio / p.sigma]);
    }
    (r, jac)
}

fn chi_square(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn normal_equations(r: &[f64], jac: &[[f64; 3]]) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (ri, row) in r.iter().zip(jac) {
        for a in 0..3 {
            jtr[a] += row[a] * ri;
            for b in 0..3 {
                jtj[(a, b)] += row[a] * row[b];
            }
        }
    }
    (jtj, jtr)
}

/// `max_k |J_kᵀ r| / (‖J_k‖ ‖r‖)`, zero when the residual vanishes.
fn gradient_cosine(r: &[f64], jac: &[[f64; 3]]) -> f64 {
    let r_norm = chi_square(r).sqrt();
    if r_norm == 0.0 {
        return 0.0;
    }
    (0..3)
        .map(|k| {
            let col_norm = jac.iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
            let dot: f64 = jac.iter().zip(r).map(|(row, ri)| row[k] * ri).sum();
            if col_norm == 0.0 {
                0.0
            } else {
                dot.abs() / (col_norm * r_norm)
            }
        })
        .fold(0.0, f64::max)
}

/// Initial `(A, γ₀, b)`: `A` from the smallest `γ`, `γ₀` where the data
/// first fall below `A/2` (log-interpolated), `b = 2`.
fn initial_guess(sorted: &[DataPoint]) -> (f64, f64, f64) {
    let a = sorted[0].y.max(f64::MIN_POSITIVE);
    let half = 0.5 * a;
    let mut g0 = sorted[sorted.len() - 1].x;
    for w in sorted.windows(2) {
        if w[1].y < half {
            let (x0, x1) = (w[0].x.ln(), w[1].x.ln());
            let (y0, y1) = (w[0].y, w[1].y);
            let frac = if (y0 - y1).abs() > 0.0 {
                ((y0 - half) / (y0 - y1)).clamp(0.0, 1.0)
            } else {
                0.5
            };
            g0 = (x0 + frac * (x1 - x0)).exp();
            break;
        }
    }
    (a, g0, 2.0)
}

/// Weighted least-squares fit of `A / (1 + (γ/γ₀)^b)` by Levenberg-Marquardt
/// on log-parameters, which keeps `A`, `γ₀`, `b` positive.
///
/// Never fails silently: when the iteration budget runs out the best iterate
/// is returned with `converged = false`.
pub fn fit_generalized_lorentzian(points: &[DataPoint]) -> Result<FitResult> {
    if points.len() < 4 {
        return invalid(format!("need at least 4 points, got {}", points.len()));
    }
    if points
        .iter()
        .any(|p| !(p.x > 0.0 && p.sigma > 0.0 && p.y.is_finite()))
    {
        return invalid("every point needs gamma > 0, finite mean and stderr > 0");
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    if sorted[sorted.len() - 1].x / sorted[0].x < 10.0 {
        return invalid("gamma values must span at least one decade");
    }
    let (a0, g0, b0) = initial_guess(&sorted);
    let mut theta = Vector3::new(a0.ln(), g0.ln(), b0.ln());
    let (mut r, mut jac) = lorentzian_residuals(&sorted, &theta);
    let mut chi2 = chi_square(&r);
    let mut history = vec![chi2];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        if gradient_cosine(&r, &jac) <= FIT_GRADIENT_TOL {
            converged = true;
            break;
        }
        let (jtj, jtr) = normal_equations(&r, &jac);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = theta + step;
            let (r_trial, jac_trial) = lorentzian_residuals(&sorted, &trial);
            let chi2_trial = chi_square(&r_trial);
            if chi2_trial.is_finite() && chi2_trial < chi2 {
                let rel_change = (chi2 - chi2_trial) / chi2.max(f64::MIN_POSITIVE);
                theta = trial;
                r = r_trial;
                jac = jac_trial;
                chi2 = chi2_trial;
                history.push(chi2);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_change <= FIT_OBJECTIVE_TOL
                    || step.norm() <= FIT_STEP_TOL * (1.0 + theta.norm())
                {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at working precision; a minimum only if the
            // gradient is already negligible
            converged = gradient_cosine(&r, &jac) <= FIT_GRADIENT_TOL.sqrt();
            break;
        }
    }
    let (jtj, _) = normal_equations(&r, &jac);
    let cov_log = jtj
        .try_inverse()
        .unwrap_or_else(|| Matrix3::from_element(f64::NAN));
    let scale = Vector3::new(theta[0].exp(), theta[1].exp(), theta[2].exp());
    let mut covariance = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            covariance[a][b] = scale[a] * scale[b] * cov_log[(a, b)];
        }
    }
    Ok(FitResult {
        amplitude: scale[0],
        gamma0: scale[1],
        exponent: scale[2],
        covariance,
        residual_rms: (chi2 / sorted.len() as f64).sqrt(),
        converged,
        iterations,
        objective_history: history,
    })
}

/// Weighted straight-line fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

/// Least-squares line through `points`, weighted by `1/σ²` when every `σ > 0`
/// (uniform weights otherwise). Parameter errors are scaled by the residual
/// variance, so exactly collinear data give zero error.
pub fn fit_linear(points: &[DataPoint]) -> Result<LinearFit> {
    if points.len() < 3 {
        return invalid(format!("need at least 3 points, got {}", points.len()));
    }
    let weighted = points.iter().all(|p| p.sigma > 0.0);
    let w = |p: &DataPoint| {
        if weighted {
            1.0 / (p.sigma * p.sigma)
        } else {
            1.0
        }
    };
    let s: f64 = points.iter().map(w).sum();
    let sx: f64 = points.iter().map(|p| w(p) * p.x).sum();
    let sy: f64 = points.iter().map(|p| w(p) * p.y).sum();
    let sxx: f64 = points.iter().map(|p| w(p) * p.x * p.x).sum();
    let sxy: f64 = points.iter().map(|p| w(p) * p.x * p.y).sum();
    let delta = s * sxx - sx * sx;
    if !(delta > 1e-12 * s * sxx.max(1.0)) {
        return invalid("abscissae are degenerate");
    }
    let slope = (s * sxy - sx * sy) / delta;
    let intercept = (sxx * sy - sx * sxy) / delta;
    let chi2: f64 = points
        .iter()
        .map(|p| w(p) * (p.y - slope * p.x - intercept).powi(2))
        .sum();
    let dof = (points.len() - 2) as f64;
    let factor = chi2 / dof;
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (factor * s / delta).sqrt(),
        intercept_stderr: (factor * sxx / delta).sqrt(),
    })
}
