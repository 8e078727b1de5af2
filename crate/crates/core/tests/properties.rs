use std::f64::consts::PI;

use proptest::prelude::*;

use nmosc::dynamics::{self, Method};
use nmosc::fock::{self, SqueezedStateParams, StateVector};
use nmosc::linalg::{self, CMat, C64, ONE};
use nmosc::liouvillian::{self, SectorLabel, SpectrumOptions};
use nmosc::meanfield::params_for_photon_number;
use nmosc::metastability;
use nmosc::observables;
use nmosc::qam;
use nmosc::ModelParams;

fn random_matrix(d: usize, entries: &[(f64, f64)]) -> CMat {
    CMat::from_fn(d, d, |i, j| {
        let (re, im) = entries[i * d + j];
        C64::new(re, im)
    })
}

fn random_state(d: usize, entries: &[(f64, f64)]) -> CMat {
    let a = random_matrix(d, entries);
    let rho = &a * linalg::adjoint(&a);
    let tr = linalg::trace(&rho);
    linalg::scaled(&rho, ONE / tr)
}

fn small_params() -> impl Strategy<Value = ModelParams> {
    (1usize..=4, 1usize..=4, 0.2f64..2.0, 0.0f64..1.5, 0.05f64..0.5, -1.0f64..1.0, 0.0f64..PI, 6usize..=12).prop_map(
        |(n, m, eta, gamma1, gamma_m, delta, theta0, dim)| ModelParams {
            n: n + 1,
            m,
            gamma1,
            gamma_m,
            eta,
            delta,
            theta0,
            dim,
        },
    )
}

fn entries(d: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d * d)
}

fn params_and_entries() -> impl Strategy<Value = (ModelParams, Vec<(f64, f64)>)> {
    small_params().prop_flat_map(|p| (Just(p), entries(p.dim)))
}

// operator algebra

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ladder_action_on_fock_states(dim in 2usize..=70, k in 0usize..70) {
        let k = k % dim;
        let a = fock::annihilation(dim).unwrap();
        let out = linalg::matvec(&a, StateVector::fock(k, dim).unwrap().amplitudes());
        for (j, z) in out.iter().enumerate() {
            let expected = if k > 0 && j == k - 1 { (k as f64).sqrt() } else { 0.0 };
            prop_assert_eq!(*z, C64::new(expected, 0.0));
        }
        let ad = fock::creation(dim).unwrap();
        let comm = linalg::commutator(&a, &ad);
        for j in 0..dim - 1 {
            prop_assert!((comm[(j, j)] - ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn displacement_and_squeeze_are_unitary(
        dim in 20usize..=70,
        frac in 0.0f64..0.5,
        theta in 0.0f64..(2.0 * PI),
        s in 0.0f64..1.0,
        phi in 0.0f64..(2.0 * PI),
    ) {
        let alpha = C64::from_polar((frac * dim as f64).sqrt(), theta);
        let id = linalg::identity(dim);
        for u in [fock::displacement(alpha, dim).unwrap(), fock::squeeze(C64::from_polar(s, phi), dim).unwrap()] {
            let prod = linalg::adjoint(&u) * &u;
            prop_assert!(linalg::max_abs_diff(&prod, &id) < 1e-10);
        }
    }

    #[test]
    fn sector_projectors_are_orthogonal_idempotents(n in 1usize..=6, dim in 2usize..=40) {
        let ps: Vec<CMat> = (0..n).map(|mu| fock::sector_projector(mu, n, dim).unwrap()).collect();
        let mut sum = linalg::zeros(dim, dim);
        for (i, p) in ps.iter().enumerate() {
            prop_assert!(linalg::max_abs_diff(&(p * p), p) < 1e-14);
            for q in &ps[i + 1..] {
                prop_assert!(linalg::max_abs(&(p * q)) < 1e-14);
            }
            sum = &sum + p;
        }
        prop_assert!(linalg::max_abs_diff(&sum, &linalg::identity(dim)) < 1e-14);
    }

    #[test]
    fn symmetry_operator_commutes_with_drive_iff_order_divides(p in 1usize..=6, n in 1usize..=6) {
        let dim = 16;
        let z = fock::symmetry_operator(p, dim).unwrap();
        let an = fock::annihilation_power(n, dim).unwrap();
        let c = linalg::max_abs(&linalg::commutator(&z, &an));
        prop_assert_eq!(c < 1e-10, n % p == 0);
    }
}

#[test]
fn squeezed_vacuum_variance_identity() {
    // at s = 1 the truncation tail beyond 60 levels shifts the variance by ~1e-7
    for (s, dim) in [(0.0, 60), (0.25, 60), (0.5, 60), (1.0, 70)] {
        for phi in [0.0, 0.7, 2.0, 4.5] {
            let psi = fock::squeezed_coherent(&SqueezedStateParams::polar(0.0, 0.0, s, phi).unwrap(), dim).unwrap();
            let along = observables::state_quadrature_variance(&psi, phi / 2.0);
            assert!((along - (-2.0 * s).exp() / 4.0).abs() < 1e-8, "s = {s}, phi = {phi}: {along}");
            let across = observables::state_quadrature_variance(&psi, phi / 2.0 + PI / 2.0);
            // the anti-squeezed axis carries the truncation tail, so compare relatively
            let wide = (2.0 * s).exp() / 4.0;
            assert!((across - wide).abs() < 1e-7 * wide, "s = {s}, phi = {phi}: {across}");
            let (vmin, _) = observables::min_quadrature_variance(&psi.density());
            assert!((vmin - (-2.0 * s).exp() / 4.0).abs() < 1e-8);
        }
    }
}

// generator invariants

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn generator_preserves_trace_and_hermiticity((p, e) in params_and_entries()) {
        let lv = liouvillian::build_liouvillian(&p).unwrap();
        let a = random_matrix(p.dim, &e);
        let scale = linalg::max_abs(&a).max(1.0) * linalg::max_abs(&lv.to_dense()).max(1.0);
        let la = lv.apply_to_matrix(&a);
        prop_assert!(linalg::trace(&la).norm() < 1e-10 * scale);
        let lad = lv.apply_to_matrix(&linalg::adjoint(&a));
        prop_assert!(linalg::max_abs_diff(&lad, &linalg::adjoint(&la)) < 1e-10 * scale);
    }

    #[test]
    fn steady_state_is_physical_and_stationary(p in small_params()) {
        let lv = liouvillian::build_liouvillian(&p).unwrap();
        for rho in liouvillian::steady_states(&p).unwrap() {
            prop_assert!((linalg::trace(&rho) - ONE).norm() < 1e-9);
            prop_assert!(linalg::max_abs_diff(&rho, &linalg::adjoint(&rho)) < 1e-10);
            prop_assert!(linalg::eigvalsh(&rho)[0] > -1e-8);
            prop_assert!(linalg::max_abs(&lv.apply_to_matrix(&rho)) < 1e-9);
        }
    }

    #[test]
    fn spectra_are_biorthonormal_and_ordered(p in small_params()) {
        let spec = liouvillian::spectrum(&p, 6).unwrap();
        prop_assert!(spec.biorthonormality_error() < 1e-8);
        prop_assert!(spec.eigenvalues[0].norm() < 1e-8);
        for w in spec.eigenvalues.windows(2) {
            prop_assert!(w[1].re <= w[0].re + 1e-9);
        }
        prop_assert!(spec.eigenvalues.iter().all(|l| l.re < 1e-9));
    }

    #[test]
    fn block_sizes_cover_the_space(p in small_params()) {
        let blocks = liouvillian::block_decompose(&p).unwrap();
        let expected = if p.is_strong() { p.p() * p.p() } else { p.n };
        prop_assert_eq!(blocks.len(), expected);
        prop_assert_eq!(blocks.iter().map(|b| b.size()).sum::<usize>(), p.dim * p.dim);
    }

    #[test]
    fn gap_ratio_is_scale_invariant(p in small_params(), c in 0.3f64..3.0) {
        let spec = liouvillian::spectrum(&p, 4).unwrap();
        // η enters the Hamiltonian linearly, so scaling every rate by c scales ℒ by c
        let q = ModelParams { gamma1: c * p.gamma1, gamma_m: c * p.gamma_m, eta: c * p.eta, delta: c * p.delta, ..p };
        let scaled = liouvillian::spectrum(&q, 4).unwrap();
        for (a, b) in spec.eigenvalues.iter().zip(&scaled.eigenvalues) {
            prop_assert!((c * a - b).norm() < 1e-7 * b.norm().max(1.0));
        }
        if spec.eigenvalues[2].re < -1e-8 {
            let r1 = metastability::gap_ratio(&spec, 2).unwrap();
            let r2 = metastability::gap_ratio(&scaled, 2).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-6);
        }
    }
}

fn match_spectra(a: &[C64], b: &[C64], tol: f64) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm() / x.norm().max(1.0)))
            .min_by(|u, v| u.1.total_cmp(&v.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d);
    }
    assert!(worst < tol, "largest eigenvalue mismatch {worst:e}");
    worst
}

#[test]
fn block_spectra_union_equals_full_spectrum() {
    for p in [ModelParams::new(2, 2, 1.0, 20), ModelParams::new(3, 2, 0.8, 20), ModelParams::new(2, 4, 1.5, 20).with_gamma1(0.0)] {
        let d = p.dim;
        let (full, _) = linalg::eig(&liouvillian::build_liouvillian(&p).unwrap().to_dense()).unwrap();
        let opts = SpectrumOptions { dense_max: usize::MAX, ..SpectrumOptions::new(d * d) };
        let blocks = liouvillian::spectrum_with(&p, &opts).unwrap();
        assert_eq!(blocks.len(), d * d);
        match_spectra(&blocks.eigenvalues, &full, 1e-8);
    }
}

#[test]
fn strong_symmetry_blocks_hold_parity_states() {
    let p = ModelParams::new(2, 4, 2.0, 24).with_gamma1(0.0);
    let spec = liouvillian::spectrum(&p, 2).unwrap();
    assert!(spec.eigenvalues.iter().all(|l| l.norm() < 1e-9));
    let mut sectors = spec.sectors.clone();
    sectors.sort();
    assert_eq!(sectors, vec![SectorLabel::Strong(0, 0), SectorLabel::Strong(1, 1)]);
}

// dynamics oracles

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5))]

    #[test]
    fn spectral_propagation_matches_ode(
        (n, m) in (2usize..=3, 1usize..=4),
        eta in 0.3f64..1.5,
        gamma1 in 0.2f64..1.2,
        alpha in (0.0f64..1.5, 0.0f64..(2.0 * PI)),
    ) {
        let d = 15;
        let p = ModelParams { gamma1, ..ModelParams::new(n, m, eta, d) };
        let psi = fock::squeezed_coherent(&SqueezedStateParams::coherent(C64::from_polar(alpha.0, alpha.1)), d).unwrap();
        let times = [0.0, 0.3, 1.0, 4.0];
        let a = dynamics::evolve_with(&psi.density(), &p, &times, Method::Spectral).unwrap();
        let b = dynamics::evolve_with(&psi.density(), &p, &times, Method::Ode).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(linalg::max_abs_diff(x, y) < 1e-8, "{}", linalg::max_abs_diff(x, y));
        }
    }

    #[test]
    fn evolution_keeps_states_physical((p, e) in params_and_entries()) {
        let rho0 = random_state(p.dim, &e);
        for rho in dynamics::evolve_with(&rho0, &p, &[0.5, 3.0], Method::BlockExpm).unwrap() {
            prop_assert!((linalg::trace(&rho) - ONE).norm() < 1e-9);
            prop_assert!(linalg::max_abs_diff(&rho, &linalg::adjoint(&rho)) < 1e-10);
            prop_assert!(linalg::eigvalsh(&rho)[0] > -1e-8);
        }
    }
}

#[test]
fn sector_decay_model_asymptotes() {
    for n in 2..=6 {
        assert!((dynamics::sector_decay_model(0.0, 0.7, n) - 1.0).abs() < 1e-15);
        assert!((dynamics::sector_decay_model(1e4, 0.7, n) - 1.0 / n as f64).abs() < 1e-12);
    }
}

#[test]
fn trajectory_error_falls_as_inverse_square_root() {
    let p = ModelParams::new(2, 2, 1.0, 10);
    let psi = fock::squeezed_coherent(&SqueezedStateParams::coherent(C64::new(1.2, 0.3)), 10).unwrap();
    let times = [0.5, 1.0, 2.0];
    let num = fock::number(10).unwrap();
    let exact: Vec<f64> = dynamics::evolve(&psi.density(), &p, &times)
        .unwrap()
        .iter()
        .map(|r| observables::expect(r, &num).re)
        .collect();
    let batches = 40u64;
    let sizes = [10u64, 20, 40, 80, 160];
    let mut next = 0u64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &size in &sizes {
        let mut sq = 0.0;
        for _ in 0..batches {
            let seeds: Vec<u64> = (next..next + size).collect();
            next += size;
            let stats = dynamics::ensemble_expectation(&psi, &p, &times, &num, &seeds).unwrap();
            sq += stats.mean.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        xs.push((size as f64).ln());
        ys.push((sq / batches as f64).sqrt().ln());
    }
    let fit = nmosc::fitting::linear_fit(&xs, &ys).unwrap();
    assert!((-0.6..=-0.4).contains(&fit.slope), "slope {}", fit.slope);
}

// metastable manifold

#[test]
fn extreme_states_reconstruct_steady_state() {
    for (n, m, target) in [(2, 2, 6.0), (2, 3, 6.0), (3, 3, 8.0), (3, 4, 9.0)] {
        let p = params_for_photon_number(n, m, target, Some(40)).unwrap();
        let spec = liouvillian::spectrum(&p, n + 1).unwrap();
        let manifold = metastability::extreme_metastable_states(&spec, n).unwrap();
        assert_eq!(manifold.states.len(), n);
        let rho_ss = liouvillian::steady_state(&p).unwrap();
        let err = linalg::max_abs_diff(&manifold.average(), &rho_ss);
        assert!(err < 1e-6, "({n},{m}): {err:e}");
        for mu in &manifold.states {
            assert!((linalg::trace(mu) - ONE).norm() < 1e-9);
            let resid = linalg::max_abs_diff(&metastability::project(&spec, n, mu), mu);
            assert!(resid < 1e-8, "({n},{m}) span residual {resid:e}");
        }
    }
}

#[test]
fn two_lobe_extremes_are_the_most_distant_pair() {
    let p = params_for_photon_number(2, 3, 6.0, Some(40)).unwrap();
    let spec = liouvillian::spectrum(&p, 3).unwrap();
    let manifold = metastability::extreme_metastable_states(&spec, 2).unwrap();
    let best = metastability::trace_distance(&manifold.states[0], &manifold.states[1]);
    let r2 = &spec.right[1];
    let rho_ss = &spec.right[0];
    let c_ext: Vec<f64> = manifold
        .states
        .iter()
        .map(|mu| linalg::hs_inner(&spec.left[1], mu).re)
        .collect();
    let (lo, hi) = (c_ext[0].min(c_ext[1]), c_ext[0].max(c_ext[1]));
    let state = |c: f64| linalg::axpy(rho_ss, C64::new(c, 0.0), r2);
    for k in 0..=20 {
        let a = lo + (hi - lo) * k as f64 / 20.0;
        for j in k..=20 {
            let b = lo + (hi - lo) * j as f64 / 20.0;
            assert!(metastability::trace_distance(&state(a), &state(b)) <= best + 1e-9);
        }
    }
    // stepping beyond either extreme leaves the state space
    let step = 0.01 * (hi - lo);
    assert!(linalg::eigvalsh(&linalg::hermitian_part(&state(hi + step)))[0] < -1e-8);
    assert!(linalg::eigvalsh(&linalg::hermitian_part(&state(lo - step)))[0] < -1e-8);
}

// associative memory

#[test]
fn qam_outcomes_are_deterministic_and_bounded() {
    let p = params_for_photon_number(2, 3, 4.0, Some(28)).unwrap();
    let a = qam::run_experiment(&p, 6, 17).unwrap();
    let b = qam::run_experiment(&p, 6, 17).unwrap();
    assert_eq!(serde_json::to_string(&a.outcomes).unwrap(), serde_json::to_string(&b.outcomes).unwrap());

    let setup = qam::QamSetup::new(&p).unwrap();
    let full = liouvillian::spectrum_with(&p, &SpectrumOptions { dense_max: usize::MAX, ..SpectrumOptions::new(p.dim * p.dim) }).unwrap();
    let (start, end) = setup.window;
    for o in &a.outcomes {
        assert!((0.0..=1.0).contains(&o.probability));
        let psi0 = fock::squeezed_coherent(&SqueezedStateParams::new(o.beta, o.zeta), p.dim).unwrap();
        assert_eq!(o.target, qam::nearest_memory(&psi0.density(), &setup.memories));
        // rebuild the window curve from the state at the opening
        let rec = dynamics::Trajectories::new(&p).unwrap().run(psi0.amplitudes(), &[start], o.seed).unwrap();
        let rho = linalg::outer(&rec.states[0], &rec.states[0]);
        let op = &setup.povm.elements[setup.element_of[o.target]];
        let c = full.coefficients(&rho);
        let curve: Vec<f64> = (0..=400)
            .map(|k| linalg::hs_inner(op, &full.propagate(&c, (end - start) * k as f64 / 400.0)).re)
            .collect();
        let (lo, hi) = curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(o.probability >= lo - 1e-6 && o.probability <= hi + 1e-6, "{} not in [{lo}, {hi}]", o.probability);
    }
}

#[test]
fn povm_is_complete() {
    let lobes = observables::LobeParams::symmetric(3, 4, 2.5, 0.3, 0.2);
    let povm = qam::build_povm(&lobes, 40).unwrap();
    let mut sum = povm.unknown.clone();
    for e in &povm.elements {
        sum = &sum + e;
    }
    assert!(linalg::max_abs_diff(&sum, &linalg::identity(40)) < 1e-12);
}
