//! Period-2 point of the one-year map, the Jacobian of `T^2` and its
//! spectrum.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Model, ModelParams, StateVector};

/// Tabulated period-2 point for the default parameters, `N_0..N_200`.
pub const REFERENCE_POINT_TEXT: &str = include_str!("../data/period2_point.txt");

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

#[derive(Clone, Debug)]
pub struct FixedPointResult {
    pub point: StateVector,
    /// Sup norm of `T^2(point) - point`.
    pub sup_residual: f64,
    pub l1_residual: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

impl FixedPointResult {
    fn measure(model: &Model, point: StateVector, iterations_used: usize, converged: bool) -> Result<Self> {
        let image = model.advance_two(&point)?;
        Ok(Self {
            sup_residual: point.sup_distance(&image),
            l1_residual: point.l1_distance(&image),
            point,
            iterations_used,
            converged,
        })
    }

    /// `(sup, l1)` residuals evaluated afresh.
    pub fn recompute_residuals(&self, model: &Model) -> Result<(f64, f64)> {
        let image = model.advance_two(&self.point)?;
        Ok((self.point.sup_distance(&image), self.point.l1_distance(&image)))
    }
}

/// Parses one coordinate per line; blank lines and `#` comments are skipped.
pub fn parse_state_text(text: &str) -> Result<StateVector> {
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|e| Error::Format {
            what: "fixed-point file",
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        values.push(v);
    }
    StateVector::new(values)
}

pub fn read_state_text(path: &Path) -> Result<StateVector> {
    parse_state_text(&std::fs::read_to_string(path)?)
}

/// Writes one coordinate per line with 17 significant digits.
pub fn format_state_text(state: &StateVector) -> String {
    state.iter().map(|v| format!("{v:.16e}\n")).collect()
}

/// The shipped period-2 point; only meaningful for the default parameters.
pub fn reference_point() -> StateVector {
    parse_state_text(REFERENCE_POINT_TEXT).expect("bundled fixed-point asset is well formed")
}

/// Iterates `T^2` from `seed` until successive iterates differ by less
/// than `tol` in sup norm.
///
/// The period-2 point is a saddle, so this lands on the attractor rather
/// than on the point itself unless the seed is already there. On
/// exhaustion the iterate with the smallest observed change is returned
/// with `converged == false`.
pub fn find_period2_point(model: &Model, seed: &StateVector, tol: f64, max_iter: usize) -> Result<FixedPointResult> {
    let mut x = seed.clone();
    let mut best: Option<(f64, StateVector)> = None;
    for k in 0..max_iter {
        let next = model.advance_two(&x)?;
        let change = x.sup_distance(&next);
        if change < tol {
            return FixedPointResult::measure(model, x, k + 1, true);
        }
        if best.as_ref().map_or(true, |(b, _)| change < *b) {
            best = Some((change, x));
        }
        x = next;
    }
    let point = best.map(|(_, p)| p).unwrap_or(x);
    FixedPointResult::measure(model, point, max_iter, false)
}

/// Damped Newton on `T^2(x) - x = 0` with the analytic Jacobian.
pub fn newton_polish(model: &Model, guess: &StateVector, tol: f64, max_iter: usize) -> Result<FixedPointResult> {
    let n = model.dim();
    let mut x = guess.clone();
    let mut fx = residual_vector(model, &x)?;
    let mut r = sup(&fx);
    for k in 0..max_iter {
        if r <= tol {
            return FixedPointResult::measure(model, x, k, true);
        }
        let jac = jacobian_analytic(model, &x)?;
        let a = jac.matrix - DMatrix::<f64>::identity(n, n);
        let rhs = nalgebra::DVector::from_iterator(n, fx.iter().map(|v| -v));
        let step = a.lu().solve(&rhs).ok_or(Error::SingularNewton { iteration: k })?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularNewton { iteration: k });
        }

        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda >= 1.0 / 1024.0 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            if trial.iter().all(|v| v.is_finite() && *v > 0.0) {
                let trial = StateVector::new(trial)?;
                let ft = residual_vector(model, &trial)?;
                let rt = sup(&ft);
                if rt < r {
                    accepted = Some((trial, ft, rt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((nx, nf, nr)) => {
                x = nx;
                fx = nf;
                r = nr;
            }
            // No damped step reduces the residual.
            None => return FixedPointResult::measure(model, x, k + 1, false),
        }
    }
    let converged = r <= tol;
    FixedPointResult::measure(model, x, max_iter, converged)
}

fn residual_vector(model: &Model, x: &StateVector) -> Result<Vec<f64>> {
    let image = model.advance_two(x)?;
    Ok(image.iter().zip(x.iter()).map(|(a, b)| a - b).collect())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Derivative of `N m(N)`, with a flag set when `N` sits on the kink at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slope {
    pub value: f64,
    pub at_kink: bool,
}

/// `d(N m(N))/dN`: `m0` below 1, `m0 (1 - gamma) N^-gamma` above. At
/// `N = 1` the left value is returned and flagged.
pub fn h_derivative(n: f64, params: &ModelParams) -> Result<Slope> {
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Domain { index: 0, value: n });
    }
    let m0 = params.fecundity_cap;
    let gamma = params.decay_exponent;
    Ok(if n <= 1.0 {
        Slope {
            value: m0,
            at_kink: n == 1.0,
        }
    } else {
        Slope {
            value: m0 * (1.0 - gamma) * n.powf(-gamma),
            at_kink: false,
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JacobianScheme {
    /// Central differences of `T^2` with the given step.
    FiniteDifference(f64),
    /// Forward-mode chain rule through the recurrence.
    AnalyticChain,
}

#[derive(Clone, Debug)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    /// Some value along the two-year trajectory sits on (analytic) or within
    /// one step of (finite differences) the kink at `N = 1`.
    pub kink_warning: bool,
}

pub fn jacobian_t2(model: &Model, point: &StateVector, scheme: JacobianScheme) -> Result<Jacobian> {
    match scheme {
        JacobianScheme::AnalyticChain => jacobian_analytic(model, point),
        JacobianScheme::FiniteDifference(step) => jacobian_fd(model, point, step),
    }
}

/// Analytic Jacobian of the one-year map `T`.
pub fn jacobian_t(model: &Model, point: &StateVector) -> Result<Jacobian> {
    jacobian_years(model, point, 1)
}

fn jacobian_analytic(model: &Model, point: &StateVector) -> Result<Jacobian> {
    jacobian_years(model, point, 2)
}

fn jacobian_years(model: &Model, point: &StateVector, years: usize) -> Result<Jacobian> {
    let n = model.dim();
    let p = model.steps_per_year();
    let params = model.params();
    let series = model.simulate(point, years * p)?;
    let total = series.len();

    // Row k holds d(series[k]) / d(point).
    let mut rows = vec![0.0; total * n];
    for k in 0..n {
        rows[k * n + k] = 1.0;
    }
    let mut slopes = Vec::with_capacity(total);
    let mut kink = false;
    for (k, &v) in series.iter().enumerate().take(n) {
        let s = h_derivative(v, params)?;
        kink |= s.at_kink;
        slopes.push(s.value * model.gate_at_index(k));
    }
    let lags = params.min_lag()..=params.max_lag();
    let scale = p as f64;
    for t in n..total {
        let mut acc = vec![0.0; n];
        for h in lags.clone() {
            let c = slopes[t - h] * params.survival(h as i64);
            if c == 0.0 {
                continue;
            }
            let src = &rows[(t - h) * n..(t - h + 1) * n];
            for (a, s) in acc.iter_mut().zip(src) {
                *a += c * s;
            }
        }
        for (dst, a) in rows[t * n..(t + 1) * n].iter_mut().zip(&acc) {
            *dst = a / scale;
        }
        let s = h_derivative(series[t], params)?;
        kink |= s.at_kink;
        slopes.push(s.value * model.gate_at_index(t));
    }
    let offset = years * p;
    let matrix = DMatrix::from_fn(n, n, |i, j| rows[(offset + i) * n + j]);
    Ok(Jacobian {
        matrix,
        kink_warning: kink,
    })
}

fn jacobian_fd(model: &Model, point: &StateVector, step: f64) -> Result<Jacobian> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Precondition(format!("finite-difference step {step} must be positive")));
    }
    let n = model.dim();
    let series = model.simulate(point, 2 * model.steps_per_year())?;
    let kink_warning = series.iter().any(|v| (v - 1.0).abs() < step);
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut plus = point.to_vec();
            let mut minus = point.to_vec();
            plus[j] += step;
            minus[j] -= step;
            let fp = model.advance_two(&plus)?;
            let fm = model.advance_two(&minus)?;
            Ok(fp.iter().zip(fm.iter()).map(|(a, b)| (a - b) / (2.0 * step)).collect())
        })
        .collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(n, n, |i, j| columns[j][i]);
    Ok(Jacobian { matrix, kink_warning })
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    /// Signed dominant eigenvalue from power iteration.
    pub dominant: f64,
    pub subdominant_modulus: f64,
    /// Moduli of all eigenvalues, descending.
    pub all_moduli: Vec<f64>,
    pub power_iterations: usize,
    /// Power iteration stalled and the dense spectrum supplied `dominant`.
    pub fallback_used: bool,
    /// `|dominant|` agrees with `all_moduli[0]` to 1e-6.
    pub consistent: bool,
}

impl SpectrumReport {
    /// Number of eigenvalues with modulus above 1.
    pub fn unstable_count(&self) -> usize {
        self.all_moduli.iter().filter(|&&m| m > 1.0).count()
    }
}

pub fn spectrum(matrix: &DMatrix<f64>) -> Result<SpectrumReport> {
    let n = matrix.nrows();
    if n != matrix.ncols() || n % 2 == 0 {
        return Err(Error::Precondition(format!(
            "spectrum needs a square matrix of odd order, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    let eigen = matrix.complex_eigenvalues();
    let mut all_moduli: Vec<f64> = eigen.iter().map(|z| z.norm()).collect();
    all_moduli.sort_by(|a, b| b.total_cmp(a));

    let (power, iterations) = power_iteration(matrix);
    let (dominant, fallback_used) = match power {
        Some(v) => (v, false),
        None => {
            let z = eigen
                .iter()
                .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                .copied()
                .unwrap_or_default();
            (if z.re < 0.0 { -z.norm() } else { z.norm() }, true)
        }
    };
    Ok(SpectrumReport {
        dominant,
        subdominant_modulus: all_moduli.get(1).copied().unwrap_or(0.0),
        consistent: (dominant.abs() - all_moduli[0]).abs() < 1e-6,
        all_moduli,
        power_iterations: iterations,
        fallback_used,
    })
}

/// Signed Rayleigh quotient of power iteration from the all-ones vector.
fn power_iteration(matrix: &DMatrix<f64>) -> (Option<f64>, usize) {
    let n = matrix.nrows();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut prev = f64::NAN;
    for k in 1..=POWER_MAX_ITER {
        let w = matrix * &v;
        let rq = v.dot(&w) / v.dot(&v);
        let norm = w.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return (None, k);
        }
        v = w / norm;
        if (rq - prev).abs() < POWER_TOL {
            return (Some(rq), k);
        }
        prev = rq;
    }
    (None, POWER_MAX_ITER)
}

/// Smallest singular value of `matrix`.
pub fn smallest_singular_value(matrix: &DMatrix<f64>) -> f64 {
    matrix
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
