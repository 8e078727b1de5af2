//! Least-squares helpers shared by the metastability and dynamics fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinary least squares `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_err: f64,
    pub slope_err: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InvalidData(format!("linear fit needs >= 2 paired points, got {} and {}", n, y.len())));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidData("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s2 = if n > 2 { sse / (nf - 2.0) } else { 0.0 };
    let slope_err = (s2 / sxx).sqrt();
    let intercept_err = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LinearFit { intercept, slope, intercept_err, slope_err, r2 })
}

/// Result of a nonlinear least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub params: Vec<f64>,
    pub errors: Vec<f64>,
    pub r2: f64,
    pub sse: f64,
}

/// Levenberg–Marquardt on `model(x, params)` with forward-difference Jacobian.
/// Standard errors come from `s²(JᵀJ)⁻¹` at the optimum.
pub fn curve_fit<F>(model: F, x: &[f64], y: &[f64], p0: &[f64]) -> Result<CurveFit>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let np = p0.len();
    let n = x.len();
    if n <= np || y.len() != n {
        return Err(Error::InvalidData(format!("{n} points cannot constrain {np} parameters")));
    }
    let sse_of = |p: &[f64]| -> f64 { x.iter().zip(y).map(|(&xi, &yi)| (yi - model(xi, p)).powi(2)).sum() };
    let jacobian = |p: &[f64]| -> Vec<Vec<f64>> {
        let base: Vec<f64> = x.iter().map(|&xi| model(xi, p)).collect();
        (0..np)
            .map(|k| {
                let h = 1e-7 * p[k].abs().max(1e-7);
                let mut q = p.to_vec();
                q[k] += h;
                x.iter().zip(&base).map(|(&xi, b)| (model(xi, &q) - b) / h).collect()
            })
            .collect()
    };
    let mut p = p0.to_vec();
    let mut sse = sse_of(&p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let jac = jacobian(&p);
        let resid: Vec<f64> = x.iter().zip(y).map(|(&xi, &yi)| yi - model(xi, &p)).collect();
        let mut jtj = vec![vec![0.0; np]; np];
        let mut jtr = vec![0.0; np];
        for a in 0..np {
            for b in 0..np {
                jtj[a][b] = jac[a].iter().zip(&jac[b]).map(|(u, v)| u * v).sum();
            }
            jtr[a] = jac[a].iter().zip(&resid).map(|(u, r)| u * r).sum();
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj.clone();
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve_small(m, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            let s = sse_of(&trial);
            if s.is_finite() && s <= sse {
                let rel = (sse - s) / sse.max(1e-300);
                p = trial;
                sse = s;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let jac = jacobian(&p);
    let mut jtj = vec![vec![0.0; np]; np];
    for a in 0..np {
        for b in 0..np {
            jtj[a][b] = jac[a].iter().zip(&jac[b]).map(|(u, v)| u * v).sum();
        }
    }
    let s2 = sse / (n - np) as f64;
    let errors = (0..np)
        .map(|k| {
            let mut e = vec![0.0; np];
            e[k] = 1.0;
            solve_small(jtj.clone(), e).map(|c| (s2 * c[k]).max(0.0).sqrt()).unwrap_or(f64::INFINITY)
        })
        .collect();
    let my = y.iter().sum::<f64>() / n as f64;
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 0.0 };
    Ok(CurveFit { params: p, errors, r2, sse })
}

/// Gaussian elimination with partial pivoting for tiny dense systems.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}
