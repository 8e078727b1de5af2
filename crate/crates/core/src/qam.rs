//! Quantum associative memory on the metastable lobes.
//!
//! A random squeezed-coherent input is assigned the nearest stored memory
//! `k̄`, evolved by one quantum-jump trajectory until the metastable window
//! opens, and scored by the time-averaged weight of the POVM element `Π_k̄`
//! over the window.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{TrajectoryRecord, Trajectories};
use crate::error::{Error, Result};
use crate::fock::{self, SqueezedStateParams};
use crate::linalg::{self, CMat, C64};
use crate::liouvillian::{self, ModelParams, Spectrum};
use crate::metastability;
use crate::observables::LobeParams;

/// Most negative eigenvalue of `Π_?` tolerated before the POVM is flagged.
pub const POVM_TOLERANCE: f64 = 1e-3;

/// The window opens this many `τ_{n+1}` after the start.
pub const WINDOW_DELAY: f64 = 3.0;

/// Lobe projectors `Πⱼ` and the remainder `Π_? = I − Σⱼ Πⱼ`.
#[derive(Debug, Clone)]
pub struct Povm {
    pub elements: Vec<CMat>,
    pub unknown: CMat,
    /// Smallest eigenvalue of `Π_?`.
    pub min_eigenvalue: f64,
    /// Largest `|⟨ψⱼ|ψₖ⟩|²` over distinct lobes.
    pub max_overlap: f64,
}

impl Povm {
    pub fn is_positive(&self) -> bool {
        self.min_eigenvalue >= -POVM_TOLERANCE
    }
}

pub fn build_povm(lobes: &LobeParams, dim: usize) -> Result<Povm> {
    let states = lobes
        .states()
        .iter()
        .map(|s| fock::squeezed_coherent(s, dim))
        .collect::<Result<Vec<_>>>()?;
    let elements: Vec<CMat> = states.iter().map(|s| s.density()).collect();
    let mut unknown = linalg::identity(dim);
    for e in &elements {
        unknown -= e;
    }
    let min_eigenvalue = linalg::eigvalsh(&unknown).into_iter().fold(f64::INFINITY, f64::min);
    let mut max_overlap = 0.0f64;
    for j in 0..states.len() {
        for k in j + 1..states.len() {
            max_overlap = max_overlap.max(states[j].inner(&states[k]).norm_sqr());
        }
    }
    if min_eigenvalue < -POVM_TOLERANCE {
        log::warn!("non-positive POVM: min eigenvalue of the remainder is {min_eigenvalue:.3e}");
    }
    Ok(Povm { elements, unknown, min_eigenvalue, max_overlap })
}

/// Random input `|β, ζ⟩` with `|β|²` uniform on `[n_ss/2, 2 n_ss]`, `|ζ|`
/// uniform on `[0, 1]`, `arg β` uniform on `[0, 2π)` and the squeezed
/// quadrature angle uniform on `[0, π)`.
pub fn sample_initial_state<R: Rng + ?Sized>(n_ss: f64, rng: &mut R) -> SqueezedStateParams {
    let r2 = rng.gen_range(0.5 * n_ss..=2.0 * n_ss);
    let theta = rng.gen_range(0.0..TAU);
    let s = rng.gen_range(0.0..=1.0);
    let quad = rng.gen_range(0.0..PI);
    SqueezedStateParams::new(C64::from_polar(r2.sqrt(), theta), C64::from_polar(s, 2.0 * quad))
}

/// Index of the memory closest in trace distance; ties go to the lowest index.
pub fn nearest_memory(state: &CMat, memories: &[CMat]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, mu) in memories.iter().enumerate() {
        let d = metastability::trace_distance(state, mu);
        if d < best.1 - 1e-12 {
            best = (k, d);
        }
    }
    best.0
}

/// Memory states: the extreme metastable states when the `n`-state manifold
/// exists, else the pure lobes.
pub fn memory_states(params: &ModelParams, spec: &Spectrum, lobes: &LobeParams) -> Result<Vec<CMat>> {
    match metastability::extreme_metastable_states(spec, params.n) {
        Ok(m) => Ok(m.states),
        Err(Error::NoMetastableManifold { .. }) => {
            lobes.states().iter().map(|s| Ok(fock::squeezed_coherent(s, params.dim)?.density())).collect()
        }
        Err(e) => Err(e),
    }
}

/// `(3 τ_{n+1}, τ₂)`.
pub fn qam_window(spec: &Spectrum, n: usize) -> Result<(f64, f64)> {
    if spec.len() < n + 1 {
        return Err(Error::InvalidParameter(format!("window needs {} eigenvalues, have {}", n + 1, spec.len())));
    }
    let start = WINDOW_DELAY * spec.tau(n + 1);
    let tau2 = spec.tau(2);
    if !(tau2 > start) {
        return Err(Error::NoWindow { start, tau2 });
    }
    Ok((start, tau2))
}

/// Trapezoidal time average of `Tr[Π_k̄ ρ(t)]` over the record's samples.
pub fn success_probability(record: &TrajectoryRecord, target: usize, povm: &Povm) -> Result<f64> {
    let op = povm
        .elements
        .get(target)
        .ok_or_else(|| Error::InvalidParameter(format!("no POVM element {target}")))?;
    let w: Vec<f64> = record.expectation(op).iter().map(|z| z.re).collect();
    let t = &record.times;
    match t.len() {
        0 => Err(Error::InvalidData("empty trajectory record".into())),
        1 => Ok(w[0]),
        _ => {
            let span = t[t.len() - 1] - t[0];
            if !(span > 0.0) {
                return Err(Error::NoWindow { start: t[0], tau2: t[t.len() - 1] });
            }
            let area: f64 = (1..t.len()).map(|i| 0.5 * (w[i] + w[i - 1]) * (t[i] - t[i - 1])).sum();
            Ok(area / span)
        }
    }
}

/// `(1/T) ∫₀ᵀ Tr[A ρ(t)] dt` for `ρ(0) = rho`, from the retained modes.
pub fn spectral_time_average(spec: &Spectrum, rho: &CMat, op: &CMat, span: f64) -> f64 {
    let coeffs = spec.coefficients(rho);
    let mut total = C64::new(0.0, 0.0);
    for ((c, l), r) in coeffs.iter().zip(&spec.eigenvalues).zip(&spec.right) {
        let z = l * span;
        let integral = if z.norm() < 1e-8 { span * (1.0 + 0.5 * z) } else { (z.exp() - 1.0) / l };
        total += c * linalg::hs_inner(op, r) * integral;
    }
    total.re / span
}

/// One realization of the protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QamOutcome {
    pub index: usize,
    /// Seed of the trajectory.
    pub seed: u64,
    pub beta: C64,
    pub zeta: C64,
    pub target: usize,
    pub probability: f64,
    /// `Tr[Π_k̄ ρ]` on the trajectory state at the window opening.
    pub opening_weight: f64,
    pub window: (f64, f64),
    pub jumps: usize,
}

/// Everything shared by the realizations at one parameter point.
pub struct QamSetup {
    pub params: ModelParams,
    pub n_ss: f64,
    pub spectrum: Spectrum,
    pub lobes: LobeParams,
    pub povm: Povm,
    pub memories: Vec<CMat>,
    /// POVM element carrying the largest weight of each memory.
    pub element_of: Vec<usize>,
    pub window: (f64, f64),
    trajectories: Trajectories,
}

impl QamSetup {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let n = params.n;
        let spectrum = liouvillian::spectrum(params, n + 1)?;
        let window = qam_window(&spectrum, n)?;
        let lobes = metastability::fitted_lobes(params)?;
        let povm = build_povm(&lobes, params.dim)?;
        let memories = memory_states(params, &spectrum, &lobes)?;
        let element_of = memories
            .iter()
            .map(|mu| {
                let w: Vec<f64> = povm.elements.iter().map(|e| linalg::hs_inner(e, mu).re).collect();
                (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0)
            })
            .collect();
        let n_ss = liouvillian::mean_photon_number(&liouvillian::steady_state(params)?);
        let trajectories = Trajectories::new(params)?;
        Ok(Self { params: *params, n_ss, spectrum, lobes, povm, memories, element_of, window, trajectories })
    }

    /// Realization `index` of the run seeded by `seed`.
    ///
    /// The trajectory is followed up to the window opening; across the
    /// window the state is continued by the master equation, which is the
    /// trajectory average conditioned on the state at the opening.
    pub fn realization(&self, seed: u64, index: usize) -> Result<QamOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let input = sample_initial_state(self.n_ss, &mut rng);
        let traj_seed: u64 = rng.gen();
        let psi0 = fock::squeezed_coherent(&input, self.params.dim)?;
        let target = nearest_memory(&psi0.density(), &self.memories);
        let (start, end) = self.window;
        let record = self.trajectories.run(psi0.amplitudes(), &[start], traj_seed)?;
        let rho = linalg::outer(&record.states[0], &record.states[0]);
        let op = &self.povm.elements[self.element_of[target]];
        let p = spectral_time_average(&self.spectrum, &rho, op, end - start);
        Ok(QamOutcome {
            index,
            seed: traj_seed,
            beta: input.alpha,
            zeta: input.xi,
            target,
            probability: p.clamp(0.0, 1.0),
            opening_weight: linalg::hs_inner(op, &rho).re,
            window: self.window,
            jumps: record.jumps.len(),
        })
    }
}

/// Box-plot statistics with whiskers at the furthest data within 1.5·IQR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("box statistics need finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let std = if s.len() > 1 { (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let whisker_low = s.iter().copied().find(|&v| v >= lo_fence).unwrap_or(q1);
    let whisker_high = s.iter().rev().copied().find(|&v| v <= hi_fence).unwrap_or(q3);
    let outliers = s.iter().filter(|&&v| v < lo_fence || v > hi_fence).count();
    Ok(BoxStats { count: s.len(), mean, std, stderr: std / n.sqrt(), q1, median, q3, whisker_low, whisker_high, outliers })
}

/// All realizations at one parameter point, in index order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QamRun {
    pub params: ModelParams,
    pub n_ss: f64,
    pub seed: u64,
    pub outcomes: Vec<QamOutcome>,
    pub summary: BoxStats,
    pub povm_min_eigenvalue: f64,
    pub povm_positive: bool,
}

pub fn run_experiment(params: &ModelParams, realizations: usize, seed: u64) -> Result<QamRun> {
    if realizations == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    let setup = QamSetup::new(params)?;
    let outcomes = (0..realizations)
        .into_par_iter()
        .map(|i| setup.realization(seed, i))
        .collect::<Result<Vec<_>>>()?;
    let probs: Vec<f64> = outcomes.iter().map(|o| o.probability).collect();
    Ok(QamRun {
        params: *params,
        n_ss: setup.n_ss,
        seed,
        summary: box_stats(&probs)?,
        outcomes,
        povm_min_eigenvalue: setup.povm.min_eigenvalue,
        povm_positive: setup.povm.is_positive(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_lobe_povm_is_complete_and_positive() {
        let lobes = LobeParams { r: 1.5, theta: vec![0.3], s: 0.2, phi: vec![0.6] };
        let povm = build_povm(&lobes, 30).unwrap();
        let total = &povm.elements[0] + &povm.unknown;
        assert!(linalg::max_abs_diff(&total, &linalg::identity(30)) < 1e-14);
        assert!(povm.min_eigenvalue > -1e-12);
        assert_eq!(povm.max_overlap, 0.0);
    }

    #[test]
    fn antipodal_coherent_lobes_barely_overlap() {
        let lobes = LobeParams { r: 3.0, theta: vec![0.0, PI], s: 0.0, phi: vec![0.0, 0.0] };
        let povm = build_povm(&lobes, 60).unwrap();
        assert_abs_diff_eq!(povm.max_overlap, (-4.0 * 9.0f64).exp(), epsilon = 1e-12);
        // two projectors with overlap c leave I − Π₁ − Π₂ with eigenvalue −|c|
        assert_abs_diff_eq!(povm.min_eigenvalue, -(-18.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn sampler_respects_bounds_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let s = sample_initial_state(9.0, &mut rng);
            let ratio = s.r().powi(2) / 9.0;
            assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&ratio));
            assert!(s.s() <= 1.0);
        }
        let a = sample_initial_state(9.0, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_initial_state(9.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_phases_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut u: Vec<f64> = (0..10_000).map(|_| sample_initial_state(4.0, &mut rng).theta() / TAU).collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn nearest_memory_ties_go_low() {
        let d = 20;
        let left = fock::squeezed_coherent(&SqueezedStateParams::coherent(C64::new(-2.0, 0.0)), d).unwrap().density();
        let right = fock::squeezed_coherent(&SqueezedStateParams::coherent(C64::new(2.0, 0.0)), d).unwrap().density();
        let vac = fock::StateVector::fock(0, d).unwrap().density();
        let mems = [left.clone(), right.clone()];
        assert_eq!(nearest_memory(&right, &mems), 1);
        assert_eq!(nearest_memory(&left, &mems), 0);
        assert_eq!(nearest_memory(&vac, &mems), 0);
    }

    #[test]
    fn constant_record_gives_its_weight() {
        let lobes = LobeParams { r: 2.0, theta: vec![0.0, PI], s: 0.0, phi: vec![0.0, 0.0] };
        let povm = build_povm(&lobes, 30).unwrap();
        let psi = fock::squeezed_coherent(&lobes.states()[1], 30).unwrap();
        let record = TrajectoryRecord {
            seed: 0,
            jumps: vec![],
            times: vec![0.0, 0.5, 2.0],
            states: vec![psi.amplitudes().to_vec(); 3],
        };
        assert_abs_diff_eq!(success_probability(&record, 1, &povm).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn box_stats_match_hand_values() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!((b.whisker_low, b.whisker_high, b.outliers), (1.0, 4.0, 1));
        assert_abs_diff_eq!(b.mean, 22.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_state_averages_to_its_weight() {
        let p = ModelParams::new(2, 2, 1.0, 24);
        let spec = liouvillian::spectrum(&p, 3).unwrap();
        let rho = liouvillian::steady_state(&p).unwrap();
        let op = fock::number(24).unwrap();
        let direct = liouvillian::mean_photon_number(&rho);
        assert_abs_diff_eq!(spectral_time_average(&spec, &rho, &op, 5.0), direct, epsilon = 1e-8);
    }
}
