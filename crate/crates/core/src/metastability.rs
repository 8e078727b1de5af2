//! Spectral separation, extreme metastable states and the `(4,6)` manifold.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting;
use crate::fock::{self, StateVector};
use crate::linalg::{self, CMat, C64};
use crate::liouvillian::{self, ModelParams, SectorLabel, Spectrum};
use crate::meanfield;
use crate::observables::{self, LobeParams};

/// Default gap ratio below which a metastable manifold is declared.
pub const GAP_THRESHOLD: f64 = 0.2;

/// Extreme metastable states spanning the slowest `l` modes.
#[derive(Debug, Clone)]
pub struct MetastableManifold {
    pub states: Vec<CMat>,
    /// `(τ_{l+1}, τ₂)`.
    pub window: (f64, f64),
    /// `Re λ_l / Re λ_{l+1}`.
    pub gap_ratio: f64,
    pub l: usize,
}

impl MetastableManifold {
    /// `(1/l) Σⱼ μⱼ`.
    pub fn average(&self) -> CMat {
        let d = self.states[0].nrows();
        let w = C64::new(1.0 / self.states.len() as f64, 0.0);
        self.states.iter().fold(linalg::zeros(d, d), |acc, s| linalg::axpy(&acc, w, s))
    }
}

/// `Re λ_l / Re λ_{l+1}` (1-based `l`), in `(0, 1]` for an ordered spectrum.
pub fn gap_ratio(spec: &Spectrum, l: usize) -> Result<f64> {
    if l == 0 || spec.len() < l + 1 {
        return Err(Error::InvalidParameter(format!("gap ratio at l = {l} needs {} eigenvalues, have {}", l + 1, spec.len())));
    }
    let a = spec.eigenvalues[l - 1].re;
    let b = spec.eigenvalues[l].re;
    if b.abs() < 1e-300 {
        return Err(Error::IllDefinedRatio { index: l + 1 });
    }
    Ok(a / b)
}

/// Fit of `ratio = a·10^{b·⟨n̂⟩}`; the scale factor is `k = 10^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactor {
    pub k: f64,
    pub k_err: f64,
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

pub fn scale_factor_fit(points: &[(f64, f64)]) -> Result<ScaleFactor> {
    if points.len() < 4 {
        return Err(Error::InvalidData(format!("scale factor fit needs >= 4 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::InvalidData(format!("non-positive ratio {} at n = {}", p.1, p.0)));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let f = fitting::linear_fit(&x, &y)?;
    let k = 10f64.powf(f.slope);
    Ok(ScaleFactor { k, k_err: k * std::f64::consts::LN_10 * f.slope_err, a: 10f64.powf(f.intercept), b: f.slope, r2: f.r2 })
}

/// `Σ_{j ≤ l} Tr[Lⱼ† ρ] Rⱼ`: projection onto the slow manifold.
pub fn project(spec: &Spectrum, l: usize, rho: &CMat) -> CMat {
    let d = rho.nrows();
    (0..l).fold(linalg::zeros(d, d), |acc, j| linalg::axpy(&acc, linalg::hs_inner(&spec.left[j], rho), &spec.right[j]))
}

/// Extreme metastable states of the slowest `l` modes with the default threshold.
pub fn extreme_metastable_states(spec: &Spectrum, l: usize) -> Result<MetastableManifold> {
    extreme_metastable_states_with(spec, l, GAP_THRESHOLD)
}

/// Builds `l` unit-trace Hermitian states in `span{R₁..R_l}`.
///
/// For `l = 2` these are `ρ_ss + c^{M/m} R₂` with `c^{M/m}` the extreme
/// eigenvalues of `L₂`. For larger `l` the left modes are rotated to their
/// numerical radius, a discrete search over relative phases picks the
/// combination whose top eigenvector is most extreme, and the resulting state
/// is projected onto the manifold. When the modes occupy `l` distinct weak
/// sectors the remaining states are exact `Z_l` rotations of the first one;
/// otherwise the `l` most mutually distant candidates are kept.
pub fn extreme_metastable_states_with(spec: &Spectrum, l: usize, threshold: f64) -> Result<MetastableManifold> {
    let ratio = gap_ratio(spec, l)?;
    if ratio > threshold {
        return Err(Error::NoMetastableManifold { ratio, threshold });
    }
    let window = (spec.tau(l + 1), spec.tau(2.min(l + 1)));
    let rho_ss = spec.right[0].clone();
    let states = match l {
        1 => vec![rho_ss],
        2 => {
            let r2 = linalg::hermitian_part(&spec.right[1]);
            let ev = linalg::eigvalsh(&linalg::hermitian_part(&spec.left[1]));
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            [hi, lo].iter().map(|&c| linalg::axpy(&rho_ss, C64::new(c, 0.0), &r2)).collect()
        }
        _ => search_states(spec, l)?,
    };
    Ok(MetastableManifold { states, window, gap_ratio: ratio, l })
}

/// `½(e^{−iφ} L + e^{iφ} L†)`.
fn rotated_hermitian(l: &CMat, phi: f64) -> CMat {
    linalg::hermitian_part(&linalg::scaled(l, C64::from_polar(1.0, -phi)))
}

fn top_eigen(h: &CMat) -> (f64, Vec<C64>) {
    let (vals, vecs) = linalg::eigh(h);
    let k = vals.len() - 1;
    (vals[k], (0..h.nrows()).map(|i| vecs[(i, k)]).collect())
}

/// Phase maximizing the top eigenvalue of `½(e^{−iφ}L + h.c.)`, and that eigenvalue.
fn numerical_radius(l: &CMat) -> (f64, f64) {
    let f = |phi: f64| top_eigen(&rotated_hermitian(l, phi)).0;
    let grid = 72;
    let h = TAU / grid as f64;
    let (mut best_phi, mut best) = (0.0, f64::NEG_INFINITY);
    for k in 0..grid {
        let v = f(k as f64 * h);
        if v > best + 1e-12 {
            best = v;
            best_phi = k as f64 * h;
        }
    }
    // golden-section refinement on the bracketing cell pair
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best_phi - h, best_phi + h);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let phi = 0.5 * (a + b);
    let v = f(phi);
    if v >= best {
        (phi.rem_euclid(TAU), v)
    } else {
        (best_phi, best)
    }
}

fn search_states(spec: &Spectrum, l: usize) -> Result<Vec<CMat>> {
    let d = spec.right[0].nrows();
    let radii: Vec<(f64, f64)> = (1..l).map(|j| numerical_radius(&spec.left[j])).collect();
    if radii.iter().any(|r| r.1 <= 0.0) {
        return Err(Error::SolverFailure { reason: "left mode with vanishing numerical radius".into(), residual: 0.0 });
    }
    let combos = (l as u64).pow((l - 1) as u32);
    let candidate = |code: u64| -> (f64, Vec<C64>) {
        let mut g = linalg::zeros(d, d);
        let mut c = code;
        for (j, &(phi, r)) in radii.iter().enumerate() {
            let t = (c % l as u64) as f64;
            c /= l as u64;
            let h = rotated_hermitian(&spec.left[j + 1], phi + TAU * t / l as f64);
            g = linalg::axpy(&g, C64::new(1.0 / r, 0.0), &h);
        }
        top_eigen(&g)
    };
    let scored: Vec<(f64, Vec<C64>)> = (0..combos).into_par_iter().map(candidate).collect();
    let to_state = |v: &[C64]| linalg::hermitian_part(&project(spec, l, &linalg::outer(v, v)));

    let weak: Vec<Option<usize>> = spec.sectors[..l]
        .iter()
        .map(|s| match s {
            SectorLabel::Weak(mu) => Some(*mu),
            _ => None,
        })
        .collect();
    let mut mus: Vec<usize> = weak.iter().flatten().copied().collect();
    mus.sort_unstable();
    let rotational = weak.iter().all(Option::is_some) && mus == (0..l).collect::<Vec<_>>();

    if rotational {
        let mut best = 0;
        for (i, s) in scored.iter().enumerate() {
            if s.0 > scored[best].0 + 1e-10 * scored[best].0.abs() {
                best = i;
            }
        }
        let mu0 = to_state(&scored[best].1);
        let u = fock::symmetry_operator(l, d)?;
        let ud = linalg::adjoint(&u);
        let mut states = vec![mu0];
        for k in 1..l {
            let prev = &states[k - 1];
            states.push(linalg::hermitian_part(&(&(&u * prev) * &ud)));
        }
        sort_by_lobe_angle(&mut states);
        return Ok(states);
    }

    // distinct candidates, then greedy max-min trace distance
    let mut cands: Vec<(f64, CMat)> = scored.iter().map(|(s, v)| (*s, to_state(v))).collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut chosen = vec![cands[0].1.clone()];
    while chosen.len() < l {
        let mut best: Option<(f64, usize)> = None;
        for (i, (_, c)) in cands.iter().enumerate() {
            let dmin = chosen.iter().map(|s| trace_distance(s, c)).fold(f64::INFINITY, f64::min);
            if best.map_or(true, |b| dmin > b.0 + 1e-12) {
                best = Some((dmin, i));
            }
        }
        let (dmin, i) = best.expect("candidate list is non-empty");
        if dmin < 1e-8 {
            return Err(Error::SolverFailure { reason: "phase search found fewer distinct extreme states than modes".into(), residual: dmin });
        }
        chosen.push(cands[i].1.clone());
    }
    sort_by_lobe_angle(&mut chosen);
    Ok(chosen)
}

fn sort_by_lobe_angle(states: &mut [CMat]) {
    states.sort_by(|a, b| {
        let fa = observables::mean_field_of(a).arg().rem_euclid(TAU);
        let fb = observables::mean_field_of(b).arg().rem_euclid(TAU);
        fa.total_cmp(&fb)
    });
}

/// `½ ‖a − b‖₁` for Hermitian arguments.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    0.5 * linalg::trace_norm_hermitian(&(a - b))
}

/// Even/odd metastable pair of the `(4,6)` oscillator built from four lobes:
/// `μ₀ = ½(|C₊ᵉ⟩⟨C₊ᵉ| + |C₊ᵒ⟩⟨C₊ᵒ|)`, `μ₁` likewise with `C₋`, where
/// `C±ᵉ ∝ ψ₀ ± ψ₂` and `C±ᵒ ∝ ψ₁ ± ψ₃`.
pub fn four_six_manifold(params: &ModelParams, spec: &Spectrum, lobes: &LobeParams) -> Result<MetastableManifold> {
    if params.n != 4 || params.m != 6 {
        return Err(Error::WrongModel(format!("four-six manifold needs (n, m) = (4, 6), got ({}, {})", params.n, params.m)));
    }
    if lobes.n() != 4 {
        return Err(Error::WrongModel(format!("expected 4 lobes, got {}", lobes.n())));
    }
    let psi = lobes.vectors(params.dim)?;
    let combo = |i: usize, j: usize, sign: f64| -> Result<StateVector> {
        let amps = psi[i].amplitudes().iter().zip(psi[j].amplitudes()).map(|(a, b)| a + b * sign).collect();
        StateVector::new(amps)
    };
    let mixed = |sign: f64| -> Result<CMat> {
        let e = combo(0, 2, sign)?.density();
        let o = combo(1, 3, sign)?.density();
        Ok(linalg::scaled(&(&e + &o), C64::new(0.5, 0.0)))
    };
    let states = vec![mixed(1.0)?, mixed(-1.0)?];
    let gap = gap_ratio(spec, 2).unwrap_or(f64::NAN);
    Ok(MetastableManifold { states, window: (spec.tau(3), spec.tau(2)), gap_ratio: gap, l: 2 })
}

/// Parity `⟨(−1)^{n̂}⟩`.
pub fn parity(rho: &CMat) -> f64 {
    (0..rho.nrows()).map(|k| if k % 2 == 0 { rho[(k, k)].re } else { -rho[(k, k)].re }).sum()
}

/// Lobes of a weak-symmetry steady state from the lobe-model fit.
pub fn fitted_lobes(params: &ModelParams) -> Result<LobeParams> {
    let rho = liouvillian::steady_state(params)?;
    Ok(observables::fit_lobe_params(&rho, params)?.lobes)
}

/// One point of an eigenvalue scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpScanRow {
    pub n_ss: f64,
    pub eta: f64,
    pub dim: usize,
    /// `λ₂, λ₃, λ₄`.
    pub lambdas: [C64; 3],
    /// `λ₂ = λ₃*` with nonzero imaginary part.
    pub conjugate_pair: bool,
    /// `|Im λⱼ| < REAL_TOL` for `j = 2, 3, 4`.
    pub all_real: bool,
}

/// Absolute imaginary-part threshold for calling an eigenvalue real.
pub const REAL_TOL: f64 = 1e-8;

/// Slow eigenvalues of the `(4,6)` Liouvillian over a photon-number sweep.
///
/// The Fock dimension is chosen per point unless `dim` is given.
pub fn exceptional_point_scan(params: &ModelParams, n_ss: &[f64], dim: Option<usize>) -> Result<Vec<EpScanRow>> {
    if params.n != 4 || params.m != 6 {
        return Err(Error::WrongModel(format!("exceptional-point scan needs (4, 6), got ({}, {})", params.n, params.m)));
    }
    n_ss.par_iter()
        .map(|&target| {
            let dim = dim.unwrap_or_else(|| liouvillian::recommended_dim(target));
            let base = ModelParams { dim, ..params.clone() };
            let sol = meanfield::eta_for_photon_number(target, &base)?;
            let p = base.with_eta(sol.eta);
            let spec = liouvillian::spectrum(&p, 4)?;
            let lambdas = [spec.eigenvalues[1], spec.eigenvalues[2], spec.eigenvalues[3]];
            Ok(classify(sol.n_ss, sol.eta, dim, lambdas))
        })
        .collect()
}

fn classify(n_ss: f64, eta: f64, dim: usize, lambdas: [C64; 3]) -> EpScanRow {
    let [l2, l3, _] = lambdas;
    let scale = l2.norm().max(1e-300);
    let conjugate_pair = (l2 - l3.conj()).norm() < 1e-6 * scale && l2.im.abs() > REAL_TOL;
    let all_real = lambdas.iter().all(|l| l.im.abs() < REAL_TOL);
    EpScanRow { n_ss, eta, dim, lambdas, conjugate_pair, all_real }
}

/// First scanned photon number at which the slow pair is complex conjugate.
pub fn exceptional_point(rows: &[EpScanRow]) -> Option<f64> {
    let mut sorted: Vec<&EpScanRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.n_ss.total_cmp(&b.n_ss));
    sorted.iter().find(|r| r.conjugate_pair).map(|r| r.n_ss)
}

/// Steady-state sector weight check used by tests: `Tr[P_μ ρ]`.
pub fn sector_weight(rho: &CMat, mu: usize, n: usize) -> Result<f64> {
    let p = fock::sector_projector(mu, n, rho.nrows())?;
    Ok(observables::expect(rho, &p).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec_from(vals: &[f64]) -> Spectrum {
        let d = 2;
        Spectrum {
            eigenvalues: vals.iter().map(|&v| C64::new(v, 0.0)).collect(),
            right: vals.iter().map(|_| linalg::identity(d)).collect(),
            left: vals.iter().map(|_| linalg::identity(d)).collect(),
            sectors: vals.iter().map(|_| SectorLabel::Weak(0)).collect(),
        }
    }

    #[test]
    fn equal_eigenvalues_give_unit_ratio() {
        let s = spec_from(&[0.0, -0.5, -0.5]);
        assert_abs_diff_eq!(gap_ratio(&s, 2).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(gap_ratio(&spec_from(&[0.0, 0.0]), 1), Err(Error::IllDefinedRatio { .. })));
    }

    #[test]
    fn scale_factor_recovers_generator() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 3.0 * 10f64.powf(-0.2 * i as f64))).collect();
        let f = scale_factor_fit(&pts).unwrap();
        assert_abs_diff_eq!(f.k, 10f64.powf(-0.2), epsilon = 1e-12);
        assert_abs_diff_eq!(f.a, 3.0, epsilon = 1e-12);
        let flat: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, 0.3)).collect();
        assert_abs_diff_eq!(scale_factor_fit(&flat).unwrap().k, 1.0, epsilon = 1e-12);
        assert!(scale_factor_fit(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn two_mode_manifold_reconstructs_steady_state() {
        let p = ModelParams::new(2, 2, 0.9, 18);
        let spec = liouvillian::spectrum(&p, 3).unwrap();
        let man = extreme_metastable_states_with(&spec, 2, 1.0).unwrap();
        for s in &man.states {
            assert_abs_diff_eq!(linalg::trace(s).re, 1.0, epsilon = 1e-9);
            assert!(linalg::max_abs_diff(s, &linalg::adjoint(s)) < 1e-12);
        }
        assert!(linalg::max_abs_diff(&man.average(), &spec.right[0]) < 1e-6);
    }

    #[test]
    fn three_lobe_manifold_is_symmetric() {
        let p = ModelParams::new(3, 3, 2.0, 24);
        let spec = liouvillian::spectrum(&p, 4).unwrap();
        let man = extreme_metastable_states_with(&spec, 3, 1.0).unwrap();
        assert_eq!(man.states.len(), 3);
        assert!(linalg::max_abs_diff(&man.average(), &spec.right[0]) < 1e-6);
        for s in &man.states {
            let back = project(&spec, 3, s);
            assert!(linalg::max_abs_diff(&back, s) < 1e-8);
        }
    }

    #[test]
    fn four_six_needs_right_model() {
        let p = ModelParams::new(2, 2, 1.0, 10);
        let spec = liouvillian::spectrum(&p, 3).unwrap();
        let lobes = LobeParams::symmetric(4, 6, 1.0, 0.1, 0.3);
        assert!(matches!(four_six_manifold(&p, &spec, &lobes), Err(Error::WrongModel(_))));
    }
}
