//! Mean-field amplitude equation, fixed points and their stability, and the
//! map between drive strength and steady-state photon number.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, I};
use crate::liouvillian::{self, ModelParams};

/// `α̇ = −(γ₁/2)α − iΔα − nη(α*)^{n−1}e^{−inθ₀} − (m/2)γₘ|α|^{2(m−1)}α`.
pub fn mf_rhs(alpha: C64, p: &ModelParams) -> C64 {
    let n = p.n as i32;
    let drive = if p.n == 1 { C64::new(1.0, 0.0) } else { alpha.conj().powi(n - 1) };
    -0.5 * p.gamma1 * alpha - I * p.delta * alpha
        - p.n as f64 * p.eta * drive * C64::from_polar(1.0, -(p.n as f64) * p.theta0)
        - 0.5 * p.m as f64 * p.gamma_m * alpha.norm_sqr().powi(p.m as i32 - 1) * alpha
}

/// Mean-field lobe amplitude `R`.
///
/// Uses the closed form specific to `n = 2` or `m = n − 1` when it applies,
/// otherwise `R^{2m−n} = 2nη/(mγₘ)`. Returns 0 when the drive is below threshold.
pub fn fixed_point_amplitude(p: &ModelParams) -> Result<f64> {
    let (n, m) = (p.n, p.m);
    if 2 * m <= n {
        return Err(Error::OutOfValidity { n, m });
    }
    let g = p.gamma_m;
    if !(g > 0.0) {
        return Err(Error::InvalidParameter("mean-field amplitude needs gamma_m > 0".into()));
    }
    let r = if n == 2 && m > 1 {
        let x = 2.0 / (m as f64 * g) * (((2.0 * p.eta).powi(2) + p.delta.powi(2)).sqrt() - 0.5 * p.gamma1);
        x.max(0.0).powf(1.0 / (2 * m - 2) as f64)
    } else if n >= 3 && m == n - 1 {
        let nm1g = (n - 1) as f64 * g;
        let b = 2.0 * (n as f64 * p.eta).powi(2) - nm1g * p.gamma1;
        let disc = b * b - nm1g * nm1g * (p.gamma1.powi(2) + 4.0 * p.delta.powi(2));
        if disc < 0.0 {
            0.0
        } else {
            ((b + disc.sqrt()) / (nm1g * nm1g)).max(0.0).powf(1.0 / (2 * n - 4) as f64)
        }
    } else {
        (2.0 * n as f64 * p.eta / (m as f64 * g)).powf(1.0 / (2 * m - n) as f64)
    };
    Ok(r)
}

/// One mean-field fixed point `α = R e^{iθ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPoint {
    pub r: f64,
    pub theta: f64,
    pub stable: bool,
    /// Jacobian eigenvalues in the `γ₁ = Δ = 0` analytic branch form.
    pub jacobian: [f64; 2],
}

impl MeanFieldPoint {
    pub fn alpha(&self) -> C64 {
        C64::from_polar(self.r, self.theta)
    }
}

/// Lobe phases `−θ₀ + (2j+1)π/n` in `[0, 2π)`, ascending.
pub fn lobe_phases(n: usize, theta0: f64) -> Vec<f64> {
    let mut ph: Vec<f64> = (0..n)
        .map(|j| (-theta0 + (2 * j + 1) as f64 * PI / n as f64).rem_euclid(TAU))
        .collect();
    ph.sort_by(f64::total_cmp);
    ph
}

/// The `n` symmetric fixed points at the mean-field amplitude.
pub fn fixed_points(p: &ModelParams) -> Result<Vec<MeanFieldPoint>> {
    let r = fixed_point_amplitude(p)?;
    lobe_phases(p.n, p.theta0)
        .into_iter()
        .map(|theta| {
            let proto = MeanFieldPoint { r, theta, stable: false, jacobian: [0.0; 2] };
            let (jacobian, stable) = jacobian_stability(&proto, p)?;
            Ok(MeanFieldPoint { jacobian, stable, ..proto })
        })
        .collect()
}

/// Eigenvalues `{−γ₁/2 + nηR^{n−2}(n−2m), −n²ηR^{n−2}}` and stability.
///
/// At the fixed points the polar Jacobian of [`mf_rhs`] (with `γ₁ = Δ = 0`
/// in the amplitude relation) is triangular, so these are its diagonal.
pub fn jacobian_stability(point: &MeanFieldPoint, p: &ModelParams) -> Result<([f64; 2], bool)> {
    if point.r == 0.0 && p.n < 2 {
        return Err(Error::SingularJacobian);
    }
    let k = p.n as f64 * p.eta * point.r.powi(p.n as i32 - 2);
    let ev = [-0.5 * p.gamma1 + k * (p.n as f64 - 2.0 * p.m as f64), -(p.n as f64) * k];
    Ok((ev, ev[0] < 0.0 && ev[1] < 0.0))
}

/// Real eigenvalues (or real parts) of the finite-difference Jacobian of
/// [`mf_rhs`] in Cartesian coordinates, ascending.
pub fn numerical_jacobian(alpha: C64, p: &ModelParams) -> [C64; 2] {
    let h = 1e-6 * alpha.norm().max(1.0);
    let d = |dz: C64| (mf_rhs(alpha + dz, p) - mf_rhs(alpha - dz, p)) / (2.0 * h);
    let dx = d(C64::new(h, 0.0));
    let dy = d(C64::new(0.0, h));
    let (a, b, c, e) = (dx.re, dy.re, dx.im, dy.im);
    let tr = a + e;
    let det = a * e - b * c;
    let disc = C64::new(tr * tr / 4.0 - det, 0.0).sqrt();
    let mut ev = [tr / 2.0 - disc, tr / 2.0 + disc];
    ev.sort_by(|x, y| x.re.total_cmp(&y.re));
    ev
}

/// Drive strength reaching a target steady-state photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSolution {
    /// Mean-field seed from `⟨n̂⟩ ≈ R²`.
    pub seed: f64,
    pub eta: f64,
    /// `Tr[n̂ ρ_ss]` at `eta`.
    pub n_ss: f64,
    pub iterations: usize,
}

/// Mean photon number of the steady state (averaged over degenerate states).
pub fn steady_photon_number(p: &ModelParams) -> Result<f64> {
    if p.is_strong() {
        let states = liouvillian::steady_states(p)?;
        Ok(states.iter().map(liouvillian::mean_photon_number).sum::<f64>() / states.len() as f64)
    } else {
        Ok(liouvillian::mean_photon_number(&liouvillian::steady_state(p)?))
    }
}

/// η whose mean-field amplitude satisfies `R² = target` (bisection in log η).
pub fn mean_field_seed(target: f64, p: &ModelParams) -> Result<f64> {
    let r2 = |eta: f64| fixed_point_amplitude(&p.with_eta(eta)).map(|r| r * r);
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while r2(hi)? < target {
        hi *= 10.0;
        if hi > 1e12 {
            return Err(Error::NonConvergence { iterations: 0, lo, hi });
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if r2(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Finds η with `Tr[n̂ ρ_ss(η)]` within `rel_tol` of the target.
///
/// Seeds from the mean-field amplitude, then refines by secant steps in
/// log–log space. When the mean-field formula does not apply the seed is 1.
pub fn eta_for_photon_number_tol(target: f64, p: &ModelParams, rel_tol: f64) -> Result<EtaSolution> {
    if !(target > 0.0) {
        return Err(Error::InvalidParameter(format!("target photon number {target} must be positive")));
    }
    let seed = match mean_field_seed(target, p) {
        Ok(s) => s,
        Err(Error::OutOfValidity { .. }) => 1.0,
        Err(e) => return Err(e),
    };
    let f = |ln_eta: f64| -> Result<f64> {
        let n = steady_photon_number(&p.with_eta(ln_eta.exp()))?;
        Ok(n.max(1e-300).ln() - target.ln())
    };
    let mut x0 = seed.ln();
    let mut f0 = f(x0)?;
    let done = |fx: f64| fx.abs() < (1.0 + rel_tol).ln();
    if done(f0) {
        return Ok(EtaSolution { seed, eta: seed, n_ss: target * f0.exp(), iterations: 0 });
    }
    let mut x1 = x0 - f0.signum() * 0.3;
    let mut f1 = f(x1)?;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (x, fx) in [(x0, f0), (x1, f1)] {
        if fx < 0.0 { lo = lo.max(x) } else { hi = hi.min(x) }
    }
    for it in 1..=30 {
        if done(f1) {
            return Ok(EtaSolution { seed, eta: x1.exp(), n_ss: target * f1.exp(), iterations: it });
        }
        let mut x2 = if (f1 - f0).abs() > 1e-14 { x1 - f1 * (x1 - x0) / (f1 - f0) } else { x1 - f1.signum() * 0.3 };
        // keep steps bounded and inside any known bracket
        x2 = x2.clamp(x1 - 2.0, x1 + 2.0);
        // a flat or non-monotonic response can point the secant away from the root
        if f1 > 0.0 && lo == f64::NEG_INFINITY && x2 >= x1 {
            x2 = x1 - 1.0;
        } else if f1 < 0.0 && hi == f64::INFINITY && x2 <= x1 {
            x2 = x1 + 1.0;
        }
        if lo.is_finite() && hi.is_finite() && !(x2 > lo.min(hi) && x2 < lo.max(hi)) {
            x2 = 0.5 * (lo + hi);
        }
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f(x1)?;
        if f1 < 0.0 { lo = lo.max(x1) } else { hi = hi.min(x1) }
    }
    if done(f1) {
        return Ok(EtaSolution { seed, eta: x1.exp(), n_ss: target * f1.exp(), iterations: 30 });
    }
    Err(Error::NonConvergence { iterations: 30, lo: lo.exp(), hi: hi.exp() })
}

/// [`eta_for_photon_number_tol`] at the 1% tolerance.
pub fn eta_for_photon_number(target: f64, p: &ModelParams) -> Result<EtaSolution> {
    eta_for_photon_number_tol(target, p, 0.01)
}

/// Params at the η and Fock dimension reproducing a target photon number.
///
/// A tighter 0.2% tolerance is used so that sweeps land on the nominal grid.
pub fn params_for_photon_number(n: usize, m: usize, target: f64, dim: Option<usize>) -> Result<ModelParams> {
    let dim = dim.unwrap_or_else(|| liouvillian::recommended_dim(target));
    let base = ModelParams::new(n, m, 1.0, dim);
    let sol = eta_for_photon_number_tol(target, &base, 0.002)?;
    Ok(base.with_eta(sol.eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bare(n: usize, m: usize, eta: f64) -> ModelParams {
        ModelParams { gamma1: 0.0, delta: 0.0, ..ModelParams::new(n, m, eta, 20) }
    }

    #[test]
    fn origin_is_fixed_and_linear_limit() {
        let p = ModelParams::new(2, 3, 1.0, 10);
        assert_eq!(mf_rhs(C64::new(0.0, 0.0), &p), C64::new(0.0, 0.0));
        let lin = ModelParams { eta: 0.0, delta: 0.0, m: 1, ..p };
        let a = C64::new(0.7, -0.2);
        assert!((mf_rhs(a, &lin) + (0.5 + 0.1) * a).norm() < 1e-15);
    }

    #[test]
    fn generic_amplitude() {
        let r = fixed_point_amplitude(&bare(2, 2, 1.0)).unwrap();
        assert_abs_diff_eq!(r * r, 10.0, epsilon = 1e-12);
        assert_eq!(fixed_point_amplitude(&bare(4, 2, 1.0)), Err(Error::OutOfValidity { n: 4, m: 2 }));
    }

    #[test]
    fn two_photon_branch() {
        let p = ModelParams::new(2, 3, 1.0, 10);
        let r = fixed_point_amplitude(&p).unwrap();
        let expect = (2.0 / 0.6) * ((4.0f64 + 0.16).sqrt() - 0.5);
        assert_abs_diff_eq!(r.powi(4), expect, epsilon = 1e-12);
    }

    #[test]
    fn special_branches_reduce_to_generic() {
        for (n, m) in [(2, 3), (2, 4), (3, 2), (4, 3)] {
            let p = bare(n, m, 0.7);
            let special = fixed_point_amplitude(&p).unwrap();
            let generic = (2.0 * n as f64 * 0.7 / (m as f64 * 0.2)).powf(1.0 / (2 * m - n) as f64);
            assert_abs_diff_eq!(special, generic, epsilon = 1e-8);
        }
    }

    #[test]
    fn fixed_points_zero_the_field() {
        for (n, m) in [(2, 2), (2, 3), (3, 4), (4, 5), (3, 6)] {
            let p = bare(n, m, 0.9);
            let pts = fixed_points(&p).unwrap();
            assert_eq!(pts.len(), n);
            for pt in &pts {
                assert!(mf_rhs(pt.alpha(), &p).norm() < 1e-8, "({n},{m})");
            }
        }
        let ph = lobe_phases(2, 0.0);
        assert_abs_diff_eq!(ph[0], PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ph[1], 1.5 * PI, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        for (n, m) in [(2, 3), (3, 4), (2, 2), (3, 6)] {
            let p = bare(n, m, 0.8);
            for pt in fixed_points(&p).unwrap() {
                let num = numerical_jacobian(pt.alpha(), &p);
                let mut ana = pt.jacobian;
                ana.sort_by(f64::total_cmp);
                for (x, y) in num.iter().zip(ana) {
                    assert!((x.re - y).abs() < 1e-6 * (1.0 + y.abs()) && x.im.abs() < 1e-6, "({n},{m}) {num:?} {ana:?}");
                }
                assert!(pt.stable);
            }
        }
    }

    #[test]
    fn marginal_case_keeps_only_linear_loss() {
        let p = ModelParams::new(4, 2, 1.0, 10);
        let pt = MeanFieldPoint { r: 2.0, theta: 0.0, stable: false, jacobian: [0.0; 2] };
        let (ev, _) = jacobian_stability(&pt, &p).unwrap();
        assert_abs_diff_eq!(ev[0], -0.5);
        let origin = MeanFieldPoint { r: 0.0, ..pt };
        assert_eq!(jacobian_stability(&origin, &ModelParams::new(1, 2, 1.0, 10)), Err(Error::SingularJacobian));
    }

    #[test]
    fn seed_inverts_generic_formula() {
        let eta = mean_field_seed(10.0, &bare(2, 2, 1.0)).unwrap();
        assert_abs_diff_eq!(eta, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn refined_eta_hits_target() {
        let p = ModelParams::new(2, 2, 1.0, 30);
        let sol = eta_for_photon_number(4.0, &p).unwrap();
        let n = steady_photon_number(&p.with_eta(sol.eta)).unwrap();
        assert!((n / 4.0 - 1.0).abs() < 0.01);
    }
}
