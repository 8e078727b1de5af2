//! Time evolution, quantum-jump trajectories and the bit-/phase-flip fits.

use std::collections::HashMap;

use faer::linalg::solvers::DenseSolveCore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting;
use crate::fock::{self, StateVector};
use crate::linalg::{self, CMat, C64, I, ONE, ZERO};
use crate::liouvillian::{self, LiouvillianBlock, ModelParams, SectorLabel, SpectrumOptions};
use crate::metastability;
use crate::observables;

/// A validated density matrix.
#[derive(Debug, Clone)]
pub struct DensityMatrix(CMat);

impl DensityMatrix {
    pub fn new(rho: CMat) -> Result<Self> {
        Self::check(&rho)?;
        Ok(Self(rho))
    }

    /// Unit trace (1e−9), Hermitian (1e−10), eigenvalues above −1e−8.
    pub fn check(rho: &CMat) -> Result<()> {
        if rho.nrows() != rho.ncols() {
            return Err(Error::DimensionMismatch { expected: rho.nrows(), found: rho.ncols() });
        }
        let tr = linalg::trace(rho);
        if (tr - ONE).norm() > 1e-9 {
            return Err(Error::InvalidParameter(format!("trace {tr:.3e} differs from 1")));
        }
        let herm = linalg::max_abs_diff(rho, &linalg::adjoint(rho));
        if herm > 1e-10 {
            return Err(Error::InvalidParameter(format!("not Hermitian (max deviation {herm:.3e})")));
        }
        let min = linalg::eigvalsh(&linalg::hermitian_part(rho))[0];
        if min < -1e-8 {
            return Err(Error::InvalidParameter(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    Exponential,
    SectorDecay,
    Linear,
    /// Value read from `−1/Re λ₂` instead of a time-domain fit.
    SpectralGap,
}

/// A fitted rate, time or slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub value: f64,
    pub std_error: f64,
    pub r2: f64,
    pub model: FitModel,
}

/// Propagation backend for [`evolve_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Spectral for `dim ≤ 15`, block exponentials otherwise.
    Auto,
    /// Full eigendecomposition of `ℒ`.
    Spectral,
    /// Adaptive Dormand–Prince integration of the vectorized master equation.
    Ode,
    /// Dense `exp(ℒ_b Δt)` per symmetry block.
    BlockExpm,
}

/// Tolerances of the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-11, max_steps: 20_000_000 }
    }
}

pub fn evolve(rho0: &CMat, params: &ModelParams, times: &[f64]) -> Result<Vec<CMat>> {
    evolve_with(rho0, params, times, Method::Auto)
}

/// `ρ(t)` at each of the ascending `times`.
pub fn evolve_with(rho0: &CMat, params: &ModelParams, times: &[f64], method: Method) -> Result<Vec<CMat>> {
    params.validate()?;
    if rho0.nrows() != params.dim || rho0.ncols() != params.dim {
        return Err(Error::DimensionMismatch { expected: params.dim, found: rho0.nrows() });
    }
    check_times(times)?;
    let method = match method {
        Method::Auto if params.dim <= 15 => Method::Spectral,
        Method::Auto => Method::BlockExpm,
        m => m,
    };
    match method {
        Method::Spectral => {
            let d = params.dim;
            let opts = SpectrumOptions { count: d * d, dense_max: usize::MAX, ..SpectrumOptions::new(d * d) };
            let spec = liouvillian::spectrum_with(params, &opts)?;
            let c = spec.coefficients(rho0);
            Ok(times.iter().map(|&t| spec.propagate(&c, t)).collect())
        }
        Method::Ode => {
            let lv = liouvillian::build_liouvillian(params)?;
            let ys = dopri5(|y| lv.apply(y), &liouvillian::vec_of(rho0), times, &OdeOptions::default())?;
            Ok(ys.iter().map(|y| liouvillian::unvec(y, params.dim)).collect())
        }
        _ => {
            let mut ev = BlockEvolver::new(params, rho0)?;
            let mut out = Vec::with_capacity(times.len());
            let mut now = 0.0;
            for &t in times {
                ev.advance(t - now);
                now = t;
                out.push(ev.state());
            }
            Ok(out)
        }
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidParameter("times must be finite and non-negative".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("times must be sorted ascending".into()));
    }
    Ok(())
}

/// Exact propagation of the nonzero symmetry components of a state.
pub struct BlockEvolver {
    dim: usize,
    parts: Vec<(LiouvillianBlock, Vec<C64>)>,
    cache: HashMap<u64, Vec<CMat>>,
}

impl BlockEvolver {
    pub fn new(params: &ModelParams, rho0: &CMat) -> Result<Self> {
        Self::restricted(params, rho0, None)
    }

    /// Like [`BlockEvolver::new`] but keeps only the listed sectors.
    pub fn restricted(params: &ModelParams, rho0: &CMat, only: Option<&[SectorLabel]>) -> Result<Self> {
        let lv = liouvillian::build_liouvillian(params)?;
        let (labels, modulus) = liouvillian::sector_labels(params);
        let scale = linalg::max_abs(rho0).max(1e-300);
        let parts = labels
            .into_iter()
            .filter(|l| only.map_or(true, |o| o.contains(l)))
            .filter_map(|label| {
                let block = liouvillian::block_for(&lv, label, modulus);
                let v = block.gather(rho0);
                let big = v.iter().any(|x| x.norm() > 1e-15 * scale);
                big.then_some((block, v))
            })
            .collect();
        Ok(Self { dim: params.dim, parts, cache: HashMap::new() })
    }

    fn ensure(&mut self, dt: f64) {
        if !self.cache.contains_key(&dt.to_bits()) {
            let props =
                self.parts.par_iter().map(|(b, _)| linalg::expm(&linalg::scaled(&b.matrix, C64::new(dt, 0.0)))).collect();
            self.cache.insert(dt.to_bits(), props);
        }
    }

    pub fn advance(&mut self, dt: f64) {
        if dt == 0.0 {
            return;
        }
        self.ensure(dt);
        let props = &self.cache[&dt.to_bits()];
        for ((_, v), e) in self.parts.iter_mut().zip(props) {
            *v = linalg::matvec(e, v);
        }
    }

    /// Advances by `dt`, then replaces the cached `exp(ℒ dt)` by its square
    /// and returns `2 dt`.
    fn advance_doubling(&mut self, dt: f64) -> f64 {
        self.advance(dt);
        let props = self.cache.remove(&dt.to_bits()).expect("propagator cached by advance");
        let squared: Vec<CMat> = props.par_iter().map(|e| e * e).collect();
        self.cache.insert((2.0 * dt).to_bits(), squared);
        2.0 * dt
    }

    pub fn state(&self) -> CMat {
        let mut rho = linalg::zeros(self.dim, self.dim);
        for (b, v) in &self.parts {
            for (&g, x) in b.indices.iter().zip(v) {
                rho[(g % self.dim, g / self.dim)] = *x;
            }
        }
        rho
    }

    /// `Tr[ρ A]` for an operator given by its nonzero entries.
    fn expect_sparse(&self, entries: &[(usize, usize, C64)]) -> C64 {
        let mut lookup: HashMap<usize, C64> = HashMap::new();
        for (b, v) in &self.parts {
            for (&g, x) in b.indices.iter().zip(v) {
                lookup.insert(g, *x);
            }
        }
        // Tr[ρA] = Σ_{k,l} ρ[k,l] A[l,k]
        entries.iter().map(|&(l, k, a)| lookup.get(&(k + l * self.dim)).copied().unwrap_or(ZERO) * a).sum()
    }
}

fn nonzeros(a: &CMat) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != ZERO {
                out.push((i, j, a[(i, j)]));
            }
        }
    }
    out
}

/// Dormand–Prince 5(4) with step-size control, stepping exactly onto each output time.
pub fn dopri5<F>(f: F, y0: &[C64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<C64>>>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    check_times(times)?;
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] =
        [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut k1 = f(&y);
    let ynorm = linalg::vnorm(&y).max(1e-300);
    let fnorm = linalg::vnorm(&k1).max(1e-300);
    let mut h = (0.01 * ynorm / fnorm).min(times.last().copied().unwrap_or(0.0).max(1e-12));
    let mut out = Vec::with_capacity(times.len());
    let mut steps = 0usize;
    for &target in times {
        while t < target {
            if steps >= opts.max_steps {
                return Err(Error::StiffnessFailure(format!(
                    "step budget {} exhausted at t = {t:.6e} (h = {h:.3e}); use the spectral or block-exponential path",
                    opts.max_steps
                )));
            }
            let last = target - t <= h;
            let step = if last { target - t } else { h };
            let mut ks: Vec<Vec<C64>> = Vec::with_capacity(7);
            ks.push(k1.clone());
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, kj) in ks.iter().enumerate() {
                    let a = A[s][j];
                    if a != 0.0 {
                        for (yi, ki) in ys.iter_mut().zip(kj) {
                            *yi += ki * (step * a);
                        }
                    }
                }
                ks.push(f(&ys));
            }
            // stage 7 is evaluated at the 5th-order solution (FSAL)
            let mut ynew = y.clone();
            for (j, kj) in ks.iter().take(6).enumerate() {
                let a = A[6][j];
                if a != 0.0 {
                    for (yi, ki) in ynew.iter_mut().zip(kj) {
                        *yi += ki * (step * a);
                    }
                }
            }
            let mut err = 0.0;
            for i in 0..n {
                let e: C64 = (0..7).map(|j| ks[j][i] * E[j]).sum::<C64>() * step;
                let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
                err += (e.norm() / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            steps += 1;
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = ynew;
                k1 = ks.pop().expect("seven stages");
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            let proposal = step * fac;
            // a clipped final step says nothing about the natural step size
            if err > 1.0 || !last || proposal < h {
                h = proposal;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StiffnessFailure(format!(
                    "step size underflow at t = {t:.6e} (h = {h:.3e}, error ratio {err:.3e}); use the spectral or block-exponential path"
                )));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Result of [`bit_flip_time`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BitFlip {
    pub fit: FitResult,
    /// `−1/Re λ₂`.
    pub tau2: f64,
    /// Fitted component of `⟨a⟩`: `"imag"` or `"real"`.
    pub component: String,
    /// `(t, signal)` samples used in the fit (empty on the spectral path).
    pub series: Vec<(f64, f64)>,
}

/// Bit-flip times above this are taken from the spectral gap.
pub const DIRECT_FIT_LIMIT: f64 = 1e3;

/// Decay time of `⟨a⟩` starting from extreme metastable state `lobe_index`.
pub fn bit_flip_time(params: &ModelParams, lobe_index: usize) -> Result<BitFlip> {
    bit_flip_time_with(params, lobe_index, false)
}

/// As [`bit_flip_time`]; `force_fit` runs the time-domain fit regardless of `τ₂`.
pub fn bit_flip_time_with(params: &ModelParams, lobe_index: usize, force_fit: bool) -> Result<BitFlip> {
    let n = params.n;
    let spec = liouvillian::spectrum(params, n + 1)?;
    let tau2 = spec.tau(2);
    if tau2 > DIRECT_FIT_LIMIT && !force_fit {
        let fit = FitResult { value: tau2, std_error: 0.0, r2: 1.0, model: FitModel::SpectralGap };
        return Ok(BitFlip { fit, tau2, component: "imag".into(), series: vec![] });
    }
    let man = metastability::extreme_metastable_states(&spec, n)?;
    let rho0 = man
        .states
        .get(lobe_index)
        .ok_or(Error::InvalidParameter(format!("lobe index {lobe_index} out of range 0..{n}")))?;
    let t_start = spec.tau(n + 1);
    let a = fock::annihilation(params.dim)?;
    let a_nz = nonzeros(&a);
    let sector = SectorLabel::Weak(1 % n);
    let mut ev = BlockEvolver::restricted(params, rho0, Some(&[sector]))?;
    ev.advance(t_start);
    let a0 = ev.expect_sparse(&a_nz);
    let imag = a0.im.abs() >= 1e-3 * a0.norm();
    let pick = |z: C64| if imag { z.im } else { z.re };
    let dt = tau2 / 25.0;
    let mut series = vec![(t_start, pick(a0))];
    let y0 = pick(a0).abs();
    let mut t = t_start;
    while series.len() < 400 {
        ev.advance(dt);
        t += dt;
        let y = pick(ev.expect_sparse(&a_nz));
        series.push((t, y));
        if y.abs() < 1e-3 * y0 {
            break;
        }
    }
    let fit = fit_exponential(&series)?;
    Ok(BitFlip { fit, tau2, component: if imag { "imag" } else { "real" }.into(), series })
}

/// Fits `y = A e^{−t/T}` and reports `T`.
pub fn fit_exponential(series: &[(f64, f64)]) -> Result<FitResult> {
    if series.len() < 3 {
        return Err(Error::FitFailure("need at least 3 samples".into()));
    }
    let (t0, y0) = series[0];
    let (t1, y1) = series[series.len() / 2];
    let ratio = y0 / y1;
    let tau0 = if ratio > 1.0 { (t1 - t0) / ratio.ln() } else { (t1 - t0).max(1e-12) };
    let x: Vec<f64> = series.iter().map(|p| p.0 - t0).collect();
    let y: Vec<f64> = series.iter().map(|p| p.1).collect();
    let f = fitting::curve_fit(|t, p| p[0] * (-t / p[1]).exp(), &x, &y, &[y0, tau0])?;
    if !(f.params[1] > 0.0) {
        return Err(Error::FitFailure(format!("non-positive decay time {:.3e}", f.params[1])));
    }
    Ok(FitResult { value: f.params[1], std_error: f.errors[1], r2: f.r2, model: FitModel::Exponential })
}

/// `T_bf = x·K^{⟨n̂⟩}` fitted in log space; reports `K`.
pub fn bit_flip_scale_factor(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::InvalidData(format!("scale factor needs >= 4 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::InvalidData(format!("non-positive bit-flip time {} at n = {}", p.1, p.0)));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let f = fitting::linear_fit(&x, &y)?;
    let k = f.slope.exp();
    Ok(FitResult { value: k, std_error: k * f.slope_err, r2: f.r2, model: FitModel::Exponential })
}

/// Result of [`phase_flip_rate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseFlip {
    pub fit: FitResult,
    /// `(t, ⟨P̂_μ⟩)` samples used in the fit.
    pub series: Vec<(f64, f64)>,
}

/// `⟨P̂_μ⟩ = [(n−1)e^{−Γt} + 1]/n`.
pub fn sector_decay_model(t: f64, gamma: f64, n: usize) -> f64 {
    ((n as f64 - 1.0) * (-gamma * t).exp() + 1.0) / n as f64
}

/// Least-squares `Γ` of the sector-decay model.
pub fn fit_sector_decay(series: &[(f64, f64)], n: usize) -> Result<FitResult> {
    if series.len() < 3 {
        return Err(Error::FitFailure("need at least 3 samples".into()));
    }
    let x: Vec<f64> = series.iter().map(|p| p.0).collect();
    let y: Vec<f64> = series.iter().map(|p| p.1).collect();
    // seed from the first sample that has lost a third of its excess
    let excess = |v: f64| (n as f64 * v - 1.0) / (n as f64 - 1.0);
    let g0 = series
        .iter()
        .find(|p| p.0 > 0.0 && excess(p.1) < 0.67 && excess(p.1) > 0.0)
        .map(|p| -excess(p.1).ln() / p.0)
        .unwrap_or(1.0 / x[x.len() - 1].max(1e-12));
    let f = fitting::curve_fit(|t, p| sector_decay_model(t, p[0], n), &x, &y, &[g0])?;
    Ok(FitResult { value: f.params[0], std_error: f.errors[0], r2: f.r2, model: FitModel::SectorDecay })
}

/// Phase-flip rate of the sector-`μ` cat of coherent lobes `|√⟨n̂⟩_ss e^{iθⱼ}⟩`,
/// with `θⱼ` read from the steady state.
pub fn phase_flip_rate(params: &ModelParams, mu: usize) -> Result<PhaseFlip> {
    let n = params.n;
    if mu >= n {
        return Err(Error::InvalidSector { mu, n });
    }
    let rho_ss = liouvillian::steady_state(params)?;
    let r = liouvillian::mean_photon_number(&rho_ss).sqrt();
    let theta = observables::lobe_phase(&rho_ss, n, params.theta0);
    let lobes = fock::symmetric_lobes(n, r, theta, 0.0, 0.0);
    let cats = fock::cat_states(&lobes, params.dim)?;
    phase_flip_from(params, &cats[mu].density(), mu)
}

/// Phase-flip fit for an arbitrary initial state.
pub fn phase_flip_from(params: &ModelParams, rho0: &CMat, mu: usize) -> Result<PhaseFlip> {
    let n = params.n;
    let proj = fock::sector_projector(mu, n, params.dim)?;
    let p_nz = nonzeros(&proj);
    let mut ev = BlockEvolver::new(params, rho0)?;
    let p0 = ev.expect_sparse(&p_nz).re;
    let threshold = (1.0 + (n as f64 - 1.0) * (-1.0f64).exp()) / n as f64;
    if p0 < threshold {
        return Err(Error::WindowTooLate { start: p0, threshold });
    }
    let excess = |v: f64| (n as f64 * v - 1.0) / (n as f64 - 1.0);
    let e0 = excess(p0);
    // coarse doubling pass to locate the 1/e time
    let mut dt = 1e-5;
    let mut t = 0.0;
    let mut t_e = None;
    for _ in 0..40 {
        let step = dt;
        dt = ev.advance_doubling(step);
        t += step;
        if excess(ev.expect_sparse(&p_nz).re) < e0 * (-1.0f64).exp() {
            t_e = Some(t);
            break;
        }
    }
    let t_e = t_e.ok_or_else(|| Error::FitFailure(format!("no sector decay within t = {t:.3e}")))?;
    let mut ev = BlockEvolver::new(params, rho0)?;
    let h = t_e / 20.0;
    let mut series = vec![(0.0, p0)];
    let mut t = 0.0;
    while series.len() < 300 {
        ev.advance(h);
        t += h;
        let v = ev.expect_sparse(&p_nz).re;
        series.push((t, v));
        if excess(v).abs() < 1e-3 * e0 {
            break;
        }
    }
    let fit = fit_sector_decay(&series, n)?;
    Ok(PhaseFlip { fit, series })
}

/// Slope `y` of `Γ_pf = x + y⟨n̂⟩`.
pub fn phase_flip_slope(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::InvalidData(format!("slope fit needs >= 3 points, got {}", points.len())));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let f = fitting::linear_fit(&x, &y)?;
    Ok(FitResult { value: f.slope, std_error: f.slope_err, r2: f.r2, model: FitModel::Linear })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    SinglePhoton,
    MultiPhoton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub channel: Channel,
}

/// One quantum-jump trajectory with normalized states at the sample times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub jumps: Vec<Jump>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<C64>>,
}

impl TrajectoryRecord {
    /// `⟨ψ(t)|A|ψ(t)⟩` at each sample time.
    pub fn expectation(&self, op: &CMat) -> Vec<C64> {
        self.states.iter().map(|s| linalg::vdot(s, &linalg::matvec(op, s))).collect()
    }
}

/// Quantum-jump unravelling with jumps `√γ₁ a` and `√γₘ aᵐ`.
///
/// The no-jump evolution `exp(−iH_eff t)` is applied through an
/// eigendecomposition of `H_eff`, so the norm can be evaluated at any time
/// and jump times are located by bracketing and bisection.
pub struct Trajectories {
    dim: usize,
    jumps: [(CMat, f64, Channel); 2],
    vecs: CMat,
    inv: CMat,
    evals: Vec<C64>,
}

impl Trajectories {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let d = params.dim;
        let h = liouvillian::hamiltonian(params)?;
        let a = fock::annihilation(d)?;
        let am = fock::annihilation_power(params.m, d)?;
        let k1 = linalg::scaled(&(&linalg::adjoint(&a) * &a), C64::new(params.gamma1, 0.0));
        let km = linalg::scaled(&(&linalg::adjoint(&am) * &am), C64::new(params.gamma_m, 0.0));
        let heff = &h - &linalg::scaled(&(&k1 + &km), C64::new(0.0, 0.5));
        let (evals, vecs) = linalg::eig(&heff)?;
        let inv = vecs.partial_piv_lu().inverse();
        let recon = &(&vecs * &faer::Mat::from_fn(d, d, |i, j| if i == j { evals[i] } else { ZERO })) * &inv;
        let residual = linalg::max_abs_diff(&recon, &heff) / linalg::max_abs(&heff).max(1e-300);
        if !(residual < 1e-8) {
            return Err(Error::StiffnessFailure(format!(
                "effective Hamiltonian eigenbasis ill-conditioned (reconstruction residual {residual:.3e})"
            )));
        }
        Ok(Self {
            dim: d,
            jumps: [(a, params.gamma1, Channel::SinglePhoton), (am, params.gamma_m, Channel::MultiPhoton)],
            vecs,
            inv,
            evals,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn unnormalized(&self, c: &[C64], tau: f64) -> Vec<C64> {
        let w: Vec<C64> = c.iter().zip(&self.evals).map(|(ci, l)| ci * (-I * l * tau).exp()).collect();
        linalg::matvec(&self.vecs, &w)
    }

    fn norm2(&self, c: &[C64], tau: f64) -> f64 {
        linalg::vnorm(&self.unnormalized(c, tau)).powi(2)
    }

    /// Runs one trajectory from `psi0`, recording states at `sample_times`.
    pub fn run(&self, psi0: &[C64], sample_times: &[f64], seed: u64) -> Result<TrajectoryRecord> {
        check_times(sample_times)?;
        if psi0.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: psi0.len() });
        }
        let nrm = linalg::vnorm(psi0);
        if (nrm - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!("initial state norm {nrm:.6} is not 1")));
        }
        let t_max = sample_times.last().copied().unwrap_or(0.0);
        let tol = 1e-6 * t_max.max(1e-300);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = psi0.to_vec();
        let mut t = 0.0;
        let mut next = 0;
        let mut rec = TrajectoryRecord { seed, jumps: vec![], times: sample_times.to_vec(), states: vec![] };
        loop {
            let c = linalg::matvec(&self.inv, &psi);
            let r: f64 = rng.gen();
            let horizon = t_max - t;
            let rate: f64 =
                self.jumps.iter().map(|(j, g, _)| g * linalg::vnorm(&linalg::matvec(j, &psi)).powi(2)).sum();
            let jump_at = if horizon <= 0.0 || self.norm2(&c, horizon) > r {
                None
            } else {
                let mut lo = 0.0;
                let mut hi = (0.1 / rate.max(1e-300)).min(horizon).max(tol.min(horizon));
                while self.norm2(&c, hi) > r {
                    lo = hi;
                    hi = (2.0 * hi).min(horizon);
                }
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    if self.norm2(&c, mid) > r {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(hi)
            };
            let seg_end = jump_at.map_or(t_max, |tau| t + tau);
            while next < sample_times.len() && sample_times[next] <= seg_end {
                let v = self.unnormalized(&c, sample_times[next] - t);
                let s = linalg::vnorm(&v);
                rec.states.push(v.into_iter().map(|x| x / s).collect());
                next += 1;
            }
            let Some(tau) = jump_at else { break };
            let pre = self.unnormalized(&c, tau);
            let cands: Vec<(Vec<C64>, f64, Channel)> = self
                .jumps
                .iter()
                .map(|(j, g, ch)| {
                    let v = linalg::matvec(j, &pre);
                    let w = g * linalg::vnorm(&v).powi(2);
                    (v, w, *ch)
                })
                .collect();
            let total: f64 = cands.iter().map(|c| c.1).sum();
            if !(total > 0.0) {
                return Err(Error::StiffnessFailure(format!("jump requested at t = {:.6e} with zero jump weight", t + tau)));
            }
            let u = rng.gen::<f64>() * total;
            let pick = if u < cands[0].1 { 0 } else { 1 };
            let (v, _, ch) = &cands[pick];
            let s = linalg::vnorm(v);
            psi = v.iter().map(|x| x / s).collect();
            t += tau;
            rec.jumps.push(Jump { time: t, channel: *ch });
        }
        Ok(rec)
    }
}

pub fn mc_trajectory(psi0: &StateVector, params: &ModelParams, sample_times: &[f64], seed: u64) -> Result<TrajectoryRecord> {
    Trajectories::new(params)?.run(psi0.amplitudes(), sample_times, seed)
}

/// Ensemble mean and standard error of `⟨A⟩(t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Runs one trajectory per seed in parallel; results are reduced in seed order.
pub fn ensemble_expectation(
    psi0: &StateVector,
    params: &ModelParams,
    sample_times: &[f64],
    op: &CMat,
    seeds: &[u64],
) -> Result<EnsembleStats> {
    let traj = Trajectories::new(params)?;
    let runs: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| traj.run(psi0.amplitudes(), sample_times, s).map(|r| r.expectation(op).iter().map(|z| z.re).collect()))
        .collect::<Result<_>>()?;
    let n = runs.len().max(1) as f64;
    let k = sample_times.len();
    let mut mean = vec![0.0; k];
    for r in &runs {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; k];
    for r in &runs {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let stderr = var.iter().map(|s| if n > 1.0 { (s / (n - 1.0) / n).sqrt() } else { 0.0 }).collect();
    Ok(EnsembleStats { times: sample_times.to_vec(), mean, stderr, seeds: seeds.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn evolve_at_zero_returns_initial_state() {
        let p = ModelParams::new(2, 3, 1.0, 8);
        let rho0 = StateVector::fock(1, 8).unwrap().density();
        for m in [Method::Spectral, Method::Ode, Method::BlockExpm] {
            let out = evolve_with(&rho0, &p, &[0.0], m).unwrap();
            assert!(linalg::max_abs_diff(&out[0], &rho0) < 1e-12, "{m:?}");
        }
        assert!(evolve_with(&rho0, &p, &[1.0, 0.5], Method::Ode).is_err());
    }

    #[test]
    fn paths_agree_on_small_system() {
        let p = ModelParams::new(2, 2, 1.2, 10);
        let rho0 = fock::squeezed_coherent(&fock::SqueezedStateParams::coherent(C64::new(1.0, 0.5)), 10).unwrap().density();
        let times = [0.1, 0.7, 2.0];
        let a = evolve_with(&rho0, &p, &times, Method::Spectral).unwrap();
        let b = evolve_with(&rho0, &p, &times, Method::Ode).unwrap();
        let c = evolve_with(&rho0, &p, &times, Method::BlockExpm).unwrap();
        for i in 0..3 {
            assert!(linalg::max_abs_diff(&a[i], &b[i]) < 1e-8);
            assert!(linalg::max_abs_diff(&a[i], &c[i]) < 1e-10);
        }
    }

    #[test]
    fn linear_loss_decays_number() {
        let mut p = ModelParams::new(2, 2, 0.0, 12);
        p.gamma_m = 0.0;
        p.delta = 0.0;
        let rho0 = StateVector::fock(3, 12).unwrap().density();
        let out = evolve(&rho0, &p, &[0.5]).unwrap();
        assert_abs_diff_eq!(liouvillian::mean_photon_number(&out[0]), 3.0 * (-0.5f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn sector_decay_fit_recovers_rate() {
        let series: Vec<(f64, f64)> = (0..50).map(|k| (k as f64 * 0.05, sector_decay_model(k as f64 * 0.05, 1.7, 2))).collect();
        let f = fit_sector_decay(&series, 2).unwrap();
        assert_abs_diff_eq!(f.value, 1.7, epsilon = 1e-7);
        assert_abs_diff_eq!(sector_decay_model(0.0, 3.0, 3), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sector_decay_model(1e6, 3.0, 3), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn mixed_sectors_are_rejected() {
        let p = ModelParams::new(2, 2, 1.0, 10);
        let rho = linalg::scaled(&linalg::identity(10), C64::new(0.1, 0.0));
        assert!(matches!(phase_flip_from(&p, &rho, 0), Err(Error::WindowTooLate { .. })));
        let flat: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.5)).collect();
        assert!(fit_sector_decay(&flat, 2).unwrap().r2 < 1e-6);
    }

    #[test]
    fn scale_factor_and_slope_recover_generators() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 2.0 * 3f64.powi(k))).collect();
        assert_abs_diff_eq!(bit_flip_scale_factor(&pts).unwrap().value, 3.0, epsilon = 1e-12);
        let lin: Vec<(f64, f64)> = (0..4).map(|k| (k as f64, 0.5 + 2.0 * k as f64)).collect();
        assert_abs_diff_eq!(phase_flip_slope(&lin).unwrap().value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_trajectory_keeps_norm_and_matches_schrodinger() {
        let mut p = ModelParams::new(2, 2, 0.7, 12);
        p.gamma1 = 0.0;
        p.gamma_m = 0.0;
        let psi0 = StateVector::fock(2, 12).unwrap();
        let times = [0.0, 0.5, 1.3];
        let rec = mc_trajectory(&psi0, &p, &times, 7).unwrap();
        assert!(rec.jumps.is_empty());
        let h = liouvillian::hamiltonian(&p).unwrap();
        for (s, &t) in rec.states.iter().zip(&times) {
            let u = linalg::unitary_from_hermitian(&h, t);
            let exact = linalg::matvec(&u, psi0.amplitudes());
            assert_abs_diff_eq!(linalg::vnorm(s), 1.0, epsilon = 1e-8);
            assert!(linalg::vdot(&exact, s).norm() > 1.0 - 1e-8);
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let p = ModelParams::new(2, 3, 1.0, 10);
        let psi0 = StateVector::fock(4, 10).unwrap();
        let times = [0.0, 0.2, 0.4];
        let a = mc_trajectory(&psi0, &p, &times, 11).unwrap();
        let b = mc_trajectory(&psi0, &p, &times, 11).unwrap();
        assert_eq!(a.jumps, b.jumps);
        assert_eq!(a.states, b.states);
        assert!(a.jumps.windows(2).all(|w| w[0].time <= w[1].time));
    }
}
