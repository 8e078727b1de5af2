//! Photon statistics, quadratures, Wigner grids and lobe-model fitting.

use std::f64::consts::{PI, TAU};

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, SqueezedStateParams, StateVector};
use crate::linalg::{self, CMat, C64, ZERO};
use crate::liouvillian::{self, ModelParams};
use crate::meanfield;

/// `Tr[ρ A]`.
pub fn expect(rho: &CMat, op: &CMat) -> C64 {
    linalg::hs_inner(&linalg::adjoint(rho), op)
}

pub fn photon_distribution(rho: &CMat) -> Vec<f64> {
    (0..rho.nrows()).map(|k| rho[(k, k)].re).collect()
}

/// Mandel `Q = (⟨(Δn̂)²⟩ − ⟨n̂⟩) / ⟨n̂⟩`.
pub fn mandel_q(rho: &CMat) -> Result<f64> {
    let p = photon_distribution(rho);
    let mean: f64 = p.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
    if mean < 1e-12 {
        return Err(Error::UndefinedQ);
    }
    let second: f64 = p.iter().enumerate().map(|(k, w)| (k * k) as f64 * w).sum();
    Ok((second - mean * mean - mean) / mean)
}

/// `⟨a⟩`.
pub fn mean_field_of(rho: &CMat) -> C64 {
    (1..rho.nrows()).map(|k| rho[(k, k - 1)] * (k as f64).sqrt()).sum()
}

/// `⟨aⁿ⟩`.
pub fn moment(rho: &CMat, n: usize) -> C64 {
    let d = rho.nrows();
    (n..d)
        .map(|k| {
            let c: f64 = ((k - n + 1)..=k).map(|l| l as f64).product();
            rho[(k, k - n)] * c.sqrt()
        })
        .sum()
}

/// `⟨X_φ²⟩ − ⟨X_φ⟩²` with `X_φ = (a e^{−iφ} + a† e^{iφ}) / 2`.
pub fn quadrature_variance(rho: &CMat, phi: f64) -> f64 {
    let x = fock::quadrature(phi, rho.nrows()).expect("density matrix has dim >= 2");
    let mean = expect(rho, &x).re;
    let x2 = &x * &x;
    expect(rho, &x2).re - mean * mean
}

/// Quadrature variance of a pure state.
pub fn state_quadrature_variance(psi: &StateVector, phi: f64) -> f64 {
    let x = fock::quadrature(phi, psi.dim()).expect("state has dim >= 2");
    let xpsi = linalg::matvec(&x, psi.amplitudes());
    let mean = linalg::vdot(psi.amplitudes(), &xpsi).re;
    linalg::vdot(&xpsi, &xpsi).re - mean * mean
}

/// Minimum quadrature variance and its angle in `[0, π)`.
///
/// The variance is `A + B cos 2φ + C sin 2φ`, so three angles fix it exactly.
pub fn min_quadrature_variance(rho: &CMat) -> (f64, f64) {
    let v0 = quadrature_variance(rho, 0.0);
    let v45 = quadrature_variance(rho, PI / 4.0);
    let v90 = quadrature_variance(rho, PI / 2.0);
    let a = 0.5 * (v0 + v90);
    let b = 0.5 * (v0 - v90);
    let c = v45 - a;
    let phi = (0.5 * (c.atan2(b) + PI)).rem_euclid(PI);
    (a - b.hypot(c), phi)
}

/// `10 log₁₀(v / 0.25)`.
pub fn variance_to_db(v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::InvalidParameter(format!("variance {v} must be positive")));
    }
    Ok(10.0 * (v / 0.25).log10())
}

/// Wigner function sampled on a rectangular grid.
///
/// Coordinates are `x = √2 Re β`, `p = √2 Im β`: a coherent state `|β⟩` peaks
/// at `(√2 Re β, √2 Im β)` and the vacuum peak is `1/π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// `values[i][j]` at `(x[j], p[i])`.
    pub values: Vec<Vec<f64>>,
}

impl WignerGrid {
    /// Riemann sum over the grid.
    pub fn integral(&self) -> f64 {
        let dx = step(&self.x);
        let dp = step(&self.p);
        self.values.iter().flatten().sum::<f64>() * dx * dp
    }

    /// Phase-space amplitude `β = (x + ip)/√2` at the grid maximum.
    pub fn peak(&self) -> C64 {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        C64::new(self.x[best.2], self.p[best.1]) / 2f64.sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

fn step(v: &[f64]) -> f64 {
    if v.len() < 2 {
        1.0
    } else {
        (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn wigner_point(rho: &CMat, a: C64) -> f64 {
    let d = rho.nrows();
    let mut w = vec![ZERO; d];
    w[0] = (-2.0 * a.norm_sqr()).exp() / PI * C64::new(1.0, 0.0);
    let mut acc = rho[(0, 0)].re * w[0].re;
    for n in 1..d {
        w[n] = 2.0 * a * w[n - 1] / (n as f64).sqrt();
        acc += 2.0 * (rho[(0, n)] * w[n]).re;
    }
    for m in 1..d {
        let sm = (m as f64).sqrt();
        let mut temp = w[m];
        w[m] = (2.0 * a.conj() * temp - sm * w[m - 1]) / sm;
        acc += (rho[(m, m)] * w[m]).re;
        for n in (m + 1)..d {
            let t2 = (2.0 * a * w[n - 1] - sm * temp) / (n as f64).sqrt();
            temp = w[n];
            w[n] = t2;
            acc += 2.0 * (rho[(m, n)] * w[n]).re;
        }
    }
    acc
}

/// Wigner function by the displaced-parity Laguerre recursion, rows in parallel.
pub fn wigner(rho: &CMat, x: &[f64], p: &[f64]) -> WignerGrid {
    let values: Vec<Vec<f64>> = p
        .par_iter()
        .map(|&pv| x.iter().map(|&xv| wigner_point(rho, C64::new(xv, pv) / 2f64.sqrt())).collect())
        .collect();
    let grid = WignerGrid { x: x.to_vec(), p: p.to_vec(), values };
    let total = grid.integral();
    if (total - 1.0).abs() > 1e-3 {
        log::warn!("Wigner grid integrates to {total:.5}; grid may not cover the state");
    }
    grid
}

/// Squeezed-coherent lobe descriptors `(r, θⱼ, s, φⱼ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobeParams {
    pub r: f64,
    pub theta: Vec<f64>,
    pub s: f64,
    pub phi: Vec<f64>,
}

impl LobeParams {
    /// Lobes at `θⱼ = θ_first + 2πj/n` squeezed along `θⱼ` (amplitude, `n ≤ m`)
    /// or `θⱼ + π/2` (phase, `n > m`).
    pub fn symmetric(n: usize, m: usize, r: f64, s: f64, theta_first: f64) -> Self {
        let off = fock::squeeze_offset(n, m);
        let theta: Vec<f64> = (0..n).map(|j| (theta_first + TAU * j as f64 / n as f64).rem_euclid(TAU)).collect();
        let phi = theta.iter().map(|t| (2.0 * (t + off)).rem_euclid(TAU)).collect();
        Self { r: r.abs(), theta, s: s.abs(), phi }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn states(&self) -> Vec<SqueezedStateParams> {
        self.theta
            .iter()
            .zip(&self.phi)
            .map(|(&t, &f)| SqueezedStateParams::new(C64::from_polar(self.r, t), C64::from_polar(self.s, f)))
            .collect()
    }

    pub fn vectors(&self, dim: usize) -> Result<Vec<StateVector>> {
        self.states().iter().map(|s| fock::squeezed_coherent(s, dim)).collect()
    }

    /// Equal-weight lobe mixture `(1/n) Σⱼ |αⱼ, ξⱼ⟩⟨αⱼ, ξⱼ|`.
    pub fn mixture(&self, dim: usize) -> Result<CMat> {
        let vs = self.vectors(dim)?;
        let w = C64::new(1.0 / vs.len() as f64, 0.0);
        let mut rho = linalg::zeros(dim, dim);
        for v in &vs {
            rho = linalg::axpy(&rho, w, &v.density());
        }
        Ok(rho)
    }

    /// Fidelity of `rho` with the lobe mixture.
    pub fn mixture_fidelity(&self, rho: &CMat) -> Result<f64> {
        let vs = self.vectors(rho.nrows())?;
        let refs: Vec<&[C64]> = vs.iter().map(|v| v.amplitudes()).collect();
        let w = vec![1.0 / vs.len() as f64; vs.len()];
        Ok(linalg::fidelity_low_rank(rho, &refs, &w))
    }
}

/// Result of [`fit_lobe_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobeFit {
    pub lobes: LobeParams,
    pub fidelity: f64,
    /// Set when the best fidelity stays below 0.8.
    pub poor_model: bool,
}

/// Phase of the first lobe in `[0, 2π/n)`, read from `arg⟨aⁿ⟩` and resolved
/// against the mean-field phases.
pub fn lobe_phase(rho: &CMat, n: usize, theta0: f64) -> f64 {
    let mf = meanfield::lobe_phases(n, theta0)[0];
    let z = moment(rho, n);
    if z.norm() < 1e-12 {
        return mf;
    }
    let base = z.arg() / n as f64;
    let sector = TAU / n as f64;
    let mut best = base;
    for k in -(n as i64)..=(n as i64) {
        let cand = base + k as f64 * sector;
        if (cand - mf).abs() < (best - mf).abs() {
            best = cand;
        }
    }
    best.rem_euclid(sector)
}

/// Downhill simplex maximization of `f` over two variables.
pub(crate) fn nelder_mead_max<F>(f: F, x0: [f64; 2], step: [f64; 2], tol: f64, max_iter: usize) -> ([f64; 2], f64)
where
    F: Fn([f64; 2]) -> f64,
{
    let g = |x: [f64; 2]| -f(x);
    let mut pts = [x0, [x0[0] + step[0], x0[1]], [x0[0], x0[1] + step[1]]];
    let mut vals = pts.map(g);
    for _ in 0..max_iter {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.map(|i| pts[i]);
        vals = idx.map(|i| vals[i]);
        let size = (0..2).map(|k| (pts[1][k] - pts[0][k]).abs().max((pts[2][k] - pts[0][k]).abs())).fold(0.0, f64::max);
        if size < tol {
            break;
        }
        let c = [(pts[0][0] + pts[1][0]) / 2.0, (pts[0][1] + pts[1][1]) / 2.0];
        let along = |t: f64| [c[0] + t * (pts[2][0] - c[0]), c[1] + t * (pts[2][1] - c[1])];
        let xr = along(-1.0);
        let fr = g(xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = g(xe);
            if fe < fr {
                pts[2] = xe;
                vals[2] = fe;
            } else {
                pts[2] = xr;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            pts[2] = xr;
            vals[2] = fr;
        } else {
            let xc = if fr < vals[2] { along(-0.5) } else { along(0.5) };
            let fc = g(xc);
            if fc < vals[2].min(fr) {
                pts[2] = xc;
                vals[2] = fc;
            } else {
                for i in 1..3 {
                    pts[i] = [(pts[0][0] + pts[i][0]) / 2.0, (pts[0][1] + pts[i][1]) / 2.0];
                    vals[i] = g(pts[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (pts[best], -vals[best])
}

/// Fits `(r, s)` of the equal-weight lobe mixture to a weak-symmetry steady state.
///
/// Lobe phases come from [`lobe_phase`]; squeezing directions follow the
/// amplitude/phase rule of [`LobeParams::symmetric`].
pub fn fit_lobe_params(rho: &CMat, params: &ModelParams) -> Result<LobeFit> {
    let (n, m) = (params.n, params.m);
    let theta1 = lobe_phase(rho, n, params.theta0);
    let n_mean = liouvillian::mean_photon_number(rho);
    let r0 = match meanfield::fixed_point_amplitude(params) {
        Ok(r) if r > 0.0 && (r * r - n_mean).abs() < 0.5 * n_mean => r,
        _ => n_mean.sqrt(),
    };
    let model = |x: [f64; 2]| LobeParams::symmetric(n, m, x[0], x[1], theta1);
    let fid = |x: [f64; 2]| model(x).mixture_fidelity(rho).unwrap_or(0.0);
    let mut best = ([r0, 0.0], f64::NEG_INFINITY);
    for s0 in [0.05, 0.3] {
        let (x, f) = nelder_mead_max(fid, [r0, s0], [0.2, 0.1], 1e-8, 400);
        if f > best.1 {
            best = (x, f);
        }
    }
    let (x, f) = nelder_mead_max(fid, best.0, [0.02, 0.02], 1e-9, 400);
    let lobes = model(x);
    Ok(LobeFit { lobes, fidelity: f, poor_model: f < 0.8 })
}

/// Matrix of all `Tr[ρ Πᵢ]`-style overlaps `|⟨ψᵢ|ψⱼ⟩|²` for a set of states.
pub fn overlap_matrix(states: &[StateVector]) -> CMat {
    let n = states.len();
    Mat::from_fn(n, n, |i, j| C64::new(states[i].inner(&states[j]).norm_sqr(), 0.0))
}
