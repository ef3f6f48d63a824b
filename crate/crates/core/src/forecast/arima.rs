//! ARIMA(p, d, q) fitted by Hannan–Rissanen initialization and conditional
//! least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSS_TOLERANCE: f64 = 1e-8;
pub const CSS_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub intercept: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Last value of each differencing level 0..d, used to integrate forecasts.
    pub levels: Vec<f64>,
    /// Tail of the differenced series (at least `p` values).
    pub history: Vec<f64>,
    /// Tail of the in-sample residuals (at least `q` values).
    pub residuals: Vec<f64>,
    /// CSS objective after each accepted iteration, starting from the
    /// Hannan–Rissanen estimate.
    pub objective_trace: Vec<f64>,
    /// False when the Hannan–Rissanen estimate had an AR root on or inside
    /// the unit circle (the search then starts from a shrunk estimate).
    pub stationary: bool,
    /// As `stationary`, for the MA polynomial.
    pub invertible: bool,
}

/// `x[t] - x[t-1]` applied `d` times; returns the differenced series and the
/// last value of every level before each differencing.
pub fn difference(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cur = x.to_vec();
    let mut levels = Vec::with_capacity(d);
    for _ in 0..d {
        levels.push(*cur.last().unwrap_or(&0.0));
        cur = cur.windows(2).map(|w| w[1] - w[0]).collect();
    }
    (cur, levels)
}

fn lstsq(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    if rows.len() < k {
        return None;
    }
    let a = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

/// Residuals and their Jacobian for parameters `[c, phi.., theta..]`.
fn css_residuals(x: &[f64], p: usize, q: usize, beta: &[f64], jac: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = 1 + p + q;
    let (c, phi, theta) = (beta[0], &beta[1..1 + p], &beta[1 + p..]);
    let n = x.len();
    let mut e = vec![0.0; n];
    let mut de: Vec<Vec<f64>> = if jac { vec![vec![0.0; k]; n] } else { Vec::new() };
    for t in p..n {
        let mut v = x[t] - c;
        for i in 0..p {
            v -= phi[i] * x[t - 1 - i];
        }
        for j in 0..q {
            if t > j && t - 1 - j >= p {
                v -= theta[j] * e[t - 1 - j];
            }
        }
        e[t] = v;
        if jac {
            let mut g = vec![0.0; k];
            g[0] = -1.0;
            for i in 0..p {
                g[1 + i] = -x[t - 1 - i];
            }
            for j in 0..q {
                if t > j && t - 1 - j >= p {
                    g[1 + p + j] -= e[t - 1 - j];
                    for (m, gm) in g.iter_mut().enumerate() {
                        *gm -= theta[j] * de[t - 1 - j][m];
                    }
                }
            }
            de[t] = g;
        }
    }
    (e, de)
}

fn css(x: &[f64], p: usize, q: usize, beta: &[f64]) -> f64 {
    css_residuals(x, p, q, beta, false).0[p..].iter().map(|v| v * v).sum()
}

/// Long-AR residuals, then a joint regression on lagged values and lagged
/// residuals.
fn hannan_rissanen(x: &[f64], p: usize, q: usize) -> Vec<f64> {
    let n = x.len();
    let mut beta = vec![0.0; 1 + p + q];
    let mean = x.iter().sum::<f64>() / n as f64;
    beta[0] = mean;
    if p + q == 0 {
        return beta;
    }
    let mut resid = vec![0.0; n];
    let mut start = p;
    if q > 0 {
        let m = (p + q + 1).max(2 * (n as f64).ln().ceil() as usize).min(n / 4).max(p + q);
        let rows: Vec<Vec<f64>> =
            (m..n).map(|t| std::iter::once(1.0).chain((1..=m).map(|i| x[t - i])).collect()).collect();
        if let Some(a) = lstsq(&rows, &x[m..]) {
            for t in m..n {
                resid[t] = x[t] - a[0] - (1..=m).map(|i| a[i] * x[t - i]).sum::<f64>();
            }
        }
        start = m + q.max(p);
    }
    if start >= n {
        return beta;
    }
    let rows: Vec<Vec<f64>> = (start..n)
        .map(|t| {
            std::iter::once(1.0)
                .chain((1..=p).map(|i| x[t - i]))
                .chain((1..=q).map(|j| resid[t - j]))
                .collect()
        })
        .collect();
    if let Some(b) = lstsq(&rows, &x[start..]) {
        beta = b;
    } else {
        beta[1..].iter_mut().for_each(|v| *v = 0.0);
    }
    beta
}

/// Roots of `1 - a1 z - a2 z^2 ...` (sign `s = -1`) or `1 + a1 z + ...`
/// (`s = 1`) all lie outside the unit circle.
fn roots_outside_unit_circle(coef: &[f64], s: f64) -> bool {
    max_reciprocal_root(coef, s) < 1.0 - 1e-9
}

fn max_reciprocal_root(coef: &[f64], s: f64) -> f64 {
    let k = coef.len();
    if k == 0 {
        return 0.0;
    }
    // Companion matrix of z^k + s*a1 z^(k-1) + ...; its eigenvalues are the
    // reciprocals of the polynomial's roots.
    let mut m = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        m[(0, j)] = -s * coef[j];
    }
    for i in 1..k {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest reciprocal-root modulus the CSS search may visit.
pub const ROOT_MARGIN: f64 = 1e-3;

fn admissible(beta: &[f64], p: usize) -> bool {
    let bound = 1.0 - ROOT_MARGIN;
    max_reciprocal_root(&beta[1..1 + p], -1.0) < bound && max_reciprocal_root(&beta[1 + p..], 1.0) < bound
}

/// Fits ARIMA(p, d, q) with intercept on `series`. The CSS search stays in
/// the stationary and invertible region.
pub fn arima_fit(series: &[f64], p: usize, d: usize, q: usize) -> Result<ArimaModel> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Forecast("series contains non-finite values".into()));
    }
    let (x, levels) = difference(series, d);
    let need = (10 * (p + q)).max(2);
    if x.len() < need {
        return Err(Error::Forecast(format!(
            "ARIMA({p},{d},{q}) needs {need} values after differencing, got {}",
            x.len()
        )));
    }
    let mut beta = hannan_rissanen(&x, p, q);
    let stationary = roots_outside_unit_circle(&beta[1..1 + p], -1.0);
    let invertible = roots_outside_unit_circle(&beta[1 + p..], 1.0);
    if !stationary || !invertible {
        log::debug!("ARIMA({p},{d},{q}) initial estimate has unstable roots (stationary={stationary}, invertible={invertible})");
    }
    for _ in 0..200 {
        if admissible(&beta, p) {
            break;
        }
        beta[1..].iter_mut().for_each(|v| *v *= 0.9);
    }
    let mut obj = css(&x, p, q, &beta);
    if !obj.is_finite() || !admissible(&beta, p) {
        beta = vec![0.0; 1 + p + q];
        beta[0] = x.iter().sum::<f64>() / x.len() as f64;
        obj = css(&x, p, q, &beta);
    }
    let mut trace = vec![obj];
    let k = beta.len();
    let mut converged = false;
    for _ in 0..CSS_MAX_ITERATIONS {
        if obj <= f64::MIN_POSITIVE {
            converged = true;
            break;
        }
        let (e, de) = css_residuals(&x, p, q, &beta, true);
        let mut jtj = DMatrix::<f64>::zeros(k, k);
        let mut jte = DVector::<f64>::zeros(k);
        for t in p..x.len() {
            for a in 0..k {
                jte[a] += de[t][a] * e[t];
                for b in 0..k {
                    jtj[(a, b)] += de[t][a] * de[t][b];
                }
            }
        }
        let damping = 1e-10 * (0..k).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-300);
        for i in 0..k {
            jtj[(i, i)] += damping;
        }
        let Some(step) = jtj.clone().cholesky().map(|c| c.solve(&(-&jte))) else {
            converged = true;
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + alpha * s).collect();
            let o = css(&x, p, q, &cand);
            if o.is_finite() && o <= obj && admissible(&cand, p) {
                accepted = Some((cand, o));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, o)) = accepted else {
            converged = true;
            break;
        };
        let decrease = obj - o;
        beta = cand;
        obj = o;
        trace.push(obj);
        if decrease <= CSS_TOLERANCE * obj.max(f64::MIN_POSITIVE) || decrease <= CSS_TOLERANCE * 1e-8 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "ARIMA({p},{d},{q}) CSS did not converge in {CSS_MAX_ITERATIONS} iterations; objective trace {:?}",
            trace
        )));
    }
    let (e, _) = css_residuals(&x, p, q, &beta, false);
    let ar = beta[1..1 + p].to_vec();
    let ma = beta[1 + p..].to_vec();
    let tail = p.max(q).max(1);
    Ok(ArimaModel {
        p,
        d,
        q,
        intercept: beta[0],
        ar,
        ma,
        levels,
        history: x[x.len().saturating_sub(tail)..].to_vec(),
        residuals: e[e.len().saturating_sub(tail)..].to_vec(),
        objective_trace: trace,
        stationary,
        invertible,
    })
}

/// Iterated one-step forecasts with future shocks at zero, integrated `d`
/// times.
pub fn arima_forecast(model: &ArimaModel, h: usize) -> Vec<f64> {
    if h == 0 {
        return Vec::new();
    }
    let mut x = model.history.clone();
    let mut e = model.residuals.clone();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        let n = x.len();
        let mut v = model.intercept;
        for (i, phi) in model.ar.iter().enumerate() {
            v += phi * x[n - 1 - i];
        }
        for (j, theta) in model.ma.iter().enumerate() {
            v += theta * e[e.len() - 1 - j];
        }
        x.push(v);
        e.push(0.0);
        out.push(v);
    }
    for level in model.levels.iter().rev() {
        let mut acc = *level;
        for v in out.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    out
}
