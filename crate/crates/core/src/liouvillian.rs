//! Hamiltonian, vectorized Liouvillian, symmetry blocks, steady states and spectra.
//!
//! Density matrices are column-stacked: element `ρ[k, l]` sits at index
//! `k + l·D`. A term `c · A ρ B` contributes `c · (Bᵀ ⊗ A)` to the
//! superoperator.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, FockMatrix};
use crate::linalg::{self, CMat, Lu, C64, I, ONE, ZERO};

/// Full parameterization of the oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Drive degree.
    pub n: usize,
    /// Dissipation degree.
    pub m: usize,
    pub gamma1: f64,
    pub gamma_m: f64,
    pub eta: f64,
    pub delta: f64,
    pub theta0: f64,
    /// Fock truncation.
    pub dim: usize,
}

impl ModelParams {
    /// Default rates `γ₁ = 1`, `γₘ = 0.2`, `Δ = 0.4`, `θ₀ = 0`.
    pub fn new(n: usize, m: usize, eta: f64, dim: usize) -> Self {
        Self { n, m, gamma1: 1.0, gamma_m: 0.2, eta, delta: 0.4, theta0: 0.0, dim }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        Self { eta, ..self }
    }

    pub fn with_dim(self, dim: usize) -> Self {
        Self { dim, ..self }
    }

    pub fn with_gamma1(self, gamma1: f64) -> Self {
        Self { gamma1, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidDimension(self.dim));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParameter(format!("n = {}, m = {} must be positive", self.n, self.m)));
        }
        let finite = [self.gamma1, self.gamma_m, self.eta, self.delta, self.theta0].iter().all(|x| x.is_finite());
        if !finite || self.gamma1 < 0.0 || self.gamma_m < 0.0 || self.eta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "need gamma1 >= 0, gamma_m >= 0, eta >= 0 (got {}, {}, {})",
                self.gamma1, self.gamma_m, self.eta
            )));
        }
        Ok(())
    }

    /// `gcd(n, m)`.
    pub fn p(&self) -> usize {
        gcd(self.n, self.m)
    }

    /// Strong symmetry holds when there is no single-photon loss and `gcd(n, m) > 1`.
    pub fn is_strong(&self) -> bool {
        self.gamma1 == 0.0 && self.p() > 1
    }
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `H = Δ n̂ + iη [aⁿ e^{inθ₀} − a†ⁿ e^{−inθ₀}]`.
pub fn hamiltonian(params: &ModelParams) -> Result<FockMatrix> {
    params.validate()?;
    let d = params.dim;
    let an = fock::annihilation_power(params.n, d)?;
    let ph = C64::from_polar(1.0, params.theta0 * params.n as f64);
    Ok(Mat::from_fn(d, d, |i, j| {
        let det = if i == j { C64::new(params.delta * i as f64, 0.0) } else { ZERO };
        det + I * params.eta * (an[(i, j)] * ph - an[(j, i)].conj() * ph.conj())
    }))
}

/// Sparse superoperator in compressed-row form acting on column-stacked matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

type Triplet = (usize, usize, C64);

fn nonzeros(a: &CMat) -> Vec<Triplet> {
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

/// Pushes the triplets of `c · (Bᵀ ⊗ A)`, i.e. the map `ρ ↦ c A ρ B`.
fn push_sandwich(trip: &mut Vec<Triplet>, d: usize, a: &[Triplet], b: &[Triplet], c: C64) {
    for &(k, kp, av) in a {
        for &(lp, l, bv) in b {
            trip.push((k + l * d, kp + lp * d, c * av * bv));
        }
    }
}

fn identity_nz(d: usize) -> Vec<Triplet> {
    (0..d).map(|i| (i, i, ONE)).collect()
}

impl SuperOperator {
    fn from_triplets(dim: usize, mut trip: Vec<Triplet>) -> Self {
        let n = dim * dim;
        trip.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<C64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { dim, row_ptr, cols, vals }
    }

    /// Fock dimension `D` of the matrices acted on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        (0..self.dim * self.dim).map(|r| self.row(r).map(|(c, x)| x * v[c]).sum()).collect()
    }

    pub fn apply_to_matrix(&self, rho: &CMat) -> CMat {
        unvec(&self.apply(&vec_of(rho)), self.dim)
    }

    pub fn to_dense(&self) -> CMat {
        let n = self.dim * self.dim;
        let mut m = Mat::zeros(n, n);
        for r in 0..n {
            for (c, x) in self.row(r) {
                m[(r, c)] = x;
            }
        }
        m
    }

    /// Dense restriction to a set of vectorized indices.
    pub fn restrict(&self, indices: &[usize]) -> CMat {
        let mut local = vec![usize::MAX; self.dim * self.dim];
        for (i, &g) in indices.iter().enumerate() {
            local[g] = i;
        }
        let n = indices.len();
        let mut m = Mat::zeros(n, n);
        for (i, &g) in indices.iter().enumerate() {
            for (c, x) in self.row(g) {
                let j = local[c];
                if j != usize::MAX {
                    m[(i, j)] = x;
                }
            }
        }
        m
    }
}

pub fn vec_of(rho: &CMat) -> Vec<C64> {
    let d = rho.nrows();
    (0..d * d).map(|i| rho[(i % d, i / d)]).collect()
}

pub fn unvec(v: &[C64], d: usize) -> CMat {
    Mat::from_fn(d, d, |i, j| v[i + j * d])
}

/// Unit-rate dissipator `𝒟[O]ρ = OρO† − ½{O†O, ρ}`.
pub fn dissipator(jump: &FockMatrix) -> SuperOperator {
    let d = jump.nrows();
    let mut trip = Vec::new();
    push_dissipator(&mut trip, jump, 1.0);
    SuperOperator::from_triplets(d, trip)
}

fn push_dissipator(trip: &mut Vec<Triplet>, jump: &FockMatrix, rate: f64) {
    let d = jump.nrows();
    let o = nonzeros(jump);
    let odag = nonzeros(&linalg::adjoint(jump));
    let ood = nonzeros(&(jump.adjoint() * jump));
    let id = identity_nz(d);
    let r = C64::new(rate, 0.0);
    push_sandwich(trip, d, &o, &odag, r);
    push_sandwich(trip, d, &ood, &id, -0.5 * r);
    push_sandwich(trip, d, &id, &ood, -0.5 * r);
}

/// `ℒ = −i[H, ·] + γ₁𝒟[a] + γₘ𝒟[aᵐ]`.
pub fn build_liouvillian(params: &ModelParams) -> Result<SuperOperator> {
    let d = params.dim;
    let h = nonzeros(&hamiltonian(params)?);
    let id = identity_nz(d);
    let mut trip = Vec::new();
    push_sandwich(&mut trip, d, &h, &id, -I);
    push_sandwich(&mut trip, d, &id, &h, I);
    if params.gamma1 > 0.0 {
        push_dissipator(&mut trip, &fock::annihilation(d)?, params.gamma1);
    }
    push_dissipator(&mut trip, &fock::annihilation_power(params.m, d)?, params.gamma_m);
    trip.retain(|t| t.2 != ZERO);
    Ok(SuperOperator::from_triplets(d, trip))
}

/// Symmetry sector of a Liouvillian block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectorLabel {
    /// `(row − column) mod n = μ`.
    Weak(usize),
    /// `(row mod p, column mod p) = (μ, ν)`.
    Strong(usize, usize),
}

impl SectorLabel {
    /// Whether density matrices (unit trace) can live in this sector.
    pub fn holds_states(&self) -> bool {
        match *self {
            SectorLabel::Weak(mu) => mu == 0,
            SectorLabel::Strong(mu, nu) => mu == nu,
        }
    }

    pub fn contains(&self, k: usize, l: usize, modulus: usize) -> bool {
        match *self {
            SectorLabel::Weak(mu) => (k + modulus - l % modulus) % modulus == mu,
            SectorLabel::Strong(mu, nu) => k % modulus == mu && l % modulus == nu,
        }
    }
}

/// Sector labels and modulus used to block-diagonalize `ℒ` for these params.
pub fn sector_labels(params: &ModelParams) -> (Vec<SectorLabel>, usize) {
    if params.is_strong() {
        let p = params.p();
        let labels = (0..p).flat_map(|mu| (0..p).map(move |nu| SectorLabel::Strong(mu, nu))).collect();
        (labels, p)
    } else {
        ((0..params.n).map(SectorLabel::Weak).collect(), params.n)
    }
}

/// Vectorized indices of a sector, ascending.
pub fn sector_indices(label: SectorLabel, modulus: usize, dim: usize) -> Vec<usize> {
    (0..dim * dim).filter(|&g| label.contains(g % dim, g / dim, modulus)).collect()
}

/// One symmetry block of `ℒ`.
#[derive(Debug, Clone)]
pub struct LiouvillianBlock {
    pub label: SectorLabel,
    pub modulus: usize,
    pub dim: usize,
    /// Column-stacked indices covered by this block.
    pub indices: Vec<usize>,
    pub matrix: CMat,
}

impl LiouvillianBlock {
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// Restricts a `D × D` matrix to this block's coordinates.
    pub fn gather(&self, rho: &CMat) -> Vec<C64> {
        self.indices.iter().map(|&g| rho[(g % self.dim, g / self.dim)]).collect()
    }

    /// Embeds block coordinates into a `D × D` matrix (zero elsewhere).
    pub fn scatter(&self, v: &[C64]) -> CMat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for (&g, &x) in self.indices.iter().zip(v) {
            m[(g % self.dim, g / self.dim)] = x;
        }
        m
    }
}

pub fn block_for(lv: &SuperOperator, label: SectorLabel, modulus: usize) -> LiouvillianBlock {
    let dim = lv.dim();
    let indices = sector_indices(label, modulus, dim);
    let matrix = lv.restrict(&indices);
    LiouvillianBlock { label, modulus, dim, indices, matrix }
}

/// All symmetry blocks; their sizes sum to `D²`.
pub fn block_decompose(params: &ModelParams) -> Result<Vec<LiouvillianBlock>> {
    let lv = build_liouvillian(params)?;
    let (labels, modulus) = sector_labels(params);
    Ok(labels.into_iter().map(|l| block_for(&lv, l, modulus)).collect())
}

/// Eigen-solver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumOptions {
    /// Number of eigentriples returned.
    pub count: usize,
    /// Blocks up to this size use a dense eigendecomposition.
    pub dense_max: usize,
    /// Real shift for shift-invert Arnoldi.
    pub shift: f64,
    pub tol: f64,
    /// Restrict to these sectors (all when `None`).
    pub sectors: Option<Vec<SectorLabel>>,
}

impl SpectrumOptions {
    pub fn new(count: usize) -> Self {
        Self { count, dense_max: 500, shift: 1e-3, tol: 1e-10, sectors: None }
    }

    pub fn in_sectors(mut self, sectors: Vec<SectorLabel>) -> Self {
        self.sectors = Some(sectors);
        self
    }
}

/// Ordered eigentriples `(λⱼ, Rⱼ, Lⱼ)` with `Tr[Lⱼ† R_k] = δⱼₖ`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<C64>,
    pub right: Vec<CMat>,
    pub left: Vec<CMat>,
    pub sectors: Vec<SectorLabel>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `τⱼ = −1/Re λⱼ` (infinite for the steady state).
    pub fn lifetimes(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| if l.re < 0.0 { -1.0 / l.re } else { f64::INFINITY }).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.im).collect()
    }

    /// Lifetime of the 1-based mode `j`.
    pub fn tau(&self, j: usize) -> f64 {
        let l = self.eigenvalues[j - 1];
        if l.re < 0.0 {
            -1.0 / l.re
        } else {
            f64::INFINITY
        }
    }

    /// Largest `|Tr[Lⱼ† R_k] − δⱼₖ|`.
    pub fn biorthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (j, l) in self.left.iter().enumerate() {
            for (k, r) in self.right.iter().enumerate() {
                let target = if j == k { ONE } else { ZERO };
                worst = worst.max((linalg::hs_inner(l, r) - target).norm());
            }
        }
        worst
    }

    /// Coefficients `Tr[Lⱼ† ρ]`.
    pub fn coefficients(&self, rho: &CMat) -> Vec<C64> {
        self.left.iter().map(|l| linalg::hs_inner(l, rho)).collect()
    }

    /// `Σⱼ cⱼ e^{λⱼ t} Rⱼ` for the retained modes.
    pub fn propagate(&self, coeffs: &[C64], t: f64) -> CMat {
        let d = self.right[0].nrows();
        let mut out = linalg::zeros(d, d);
        for ((c, l), r) in coeffs.iter().zip(&self.eigenvalues).zip(&self.right) {
            let w = c * (l * t).exp();
            out = linalg::axpy(&out, w, r);
        }
        out
    }
}

/// Eigenpairs (value, right vector, left vector) of one block, slowest first.
struct BlockModes {
    values: Vec<C64>,
    right: Vec<Vec<C64>>,
    left: Vec<Vec<C64>>,
}

fn dense_block_modes(a: &CMat, count: usize) -> Result<BlockModes> {
    let (vals, u) = linalg::eig(a)?;
    let n = a.nrows();
    let w = u.partial_piv_lu().inverse();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| vals[y].re.total_cmp(&vals[x].re));
    let mut out = BlockModes { values: vec![], right: vec![], left: vec![] };
    for &i in order.iter().take(count) {
        out.values.push(vals[i]);
        out.right.push((0..n).map(|k| u[(k, i)]).collect());
        out.left.push((0..n).map(|k| w[(i, k)].conj()).collect());
    }
    Ok(out)
}

fn shift_invert_modes(a: &CMat, count: usize, shift: f64, tol: f64) -> Result<BlockModes> {
    let n = a.nrows();
    let shifted = Mat::from_fn(n, n, |i, j| if i == j { a[(i, j)] - shift } else { a[(i, j)] });
    let lu = Lu::new(&shifted);
    let want = (count + 6).min(n);
    let kdim = (3 * want + 20).min(n);
    let right = linalg::arnoldi(n, |v| lu.solve(v), want, kdim, tol)?;
    let left = linalg::arnoldi(n, |v| lu.solve_adjoint(v), want, kdim, tol)?;
    let lam = |theta: C64| ONE / theta + shift;
    let r_vals: Vec<C64> = right.values.iter().map(|&t| lam(t)).collect();
    let l_vals: Vec<C64> = left.values.iter().map(|&t| lam(t.conj())).collect();

    let mut order: Vec<usize> = (0..r_vals.len()).collect();
    order.sort_by(|&x, &y| r_vals[y].re.total_cmp(&r_vals[x].re));
    order.truncate(count);
    let rs: Vec<Vec<C64>> = order.iter().map(|&i| right.vectors[i].clone()).collect();
    // match each right mode to the nearest left eigenvalue
    let mut used = vec![false; l_vals.len()];
    let mut ls = Vec::with_capacity(rs.len());
    for &i in &order {
        let best = (0..l_vals.len())
            .filter(|&j| !used[j])
            .min_by(|&x, &y| (l_vals[x] - r_vals[i]).norm().total_cmp(&(l_vals[y] - r_vals[i]).norm()))
            .ok_or_else(|| Error::SolverFailure { reason: "left/right mode mismatch".into(), residual: f64::NAN })?;
        used[best] = true;
        ls.push(left.vectors[best].clone());
    }
    let ls = biorthonormalize(&rs, ls)?;
    let values = rs
        .iter()
        .zip(&ls)
        .map(|(r, l)| linalg::vdot(l, &linalg::matvec(a, r)) / linalg::vdot(l, r))
        .collect();
    Ok(BlockModes { values, right: rs, left: ls })
}

/// Rescales left vectors so that `Lᴴ R = I`, mixing within near-degenerate sets.
fn biorthonormalize(rs: &[Vec<C64>], ls: Vec<Vec<C64>>) -> Result<Vec<Vec<C64>>> {
    let k = rs.len();
    let m = Mat::from_fn(k, k, |i, j| linalg::vdot(&ls[i], &rs[j]));
    let minv = m.partial_piv_lu().inverse();
    if !(0..k).all(|i| (0..k).all(|j| minv[(i, j)].is_finite())) {
        return Err(Error::SolverFailure { reason: "singular left/right overlap".into(), residual: f64::NAN });
    }
    // L_new = L (M⁻¹)ᴴ, column i = Σ_j L_j conj(M⁻¹[i, j])
    let n = rs.first().map_or(0, |r| r.len());
    Ok((0..k)
        .map(|i| {
            let mut v = vec![ZERO; n];
            for (j, lj) in ls.iter().enumerate() {
                let c = minv[(i, j)].conj();
                for (x, y) in v.iter_mut().zip(lj) {
                    *x += c * y;
                }
            }
            v
        })
        .collect())
}

fn block_modes(block: &LiouvillianBlock, opts: &SpectrumOptions) -> Result<BlockModes> {
    let count = opts.count.min(block.size());
    if block.size() <= opts.dense_max {
        dense_block_modes(&block.matrix, count)
    } else {
        shift_invert_modes(&block.matrix, count, opts.shift, opts.tol)
    }
}

/// Fixes the gauge of a mode pair: unit trace for steady states, otherwise
/// unit Frobenius norm with a deterministic phase (Hermitian when possible).
fn normalize_mode(lambda: C64, r: &mut CMat, l: &mut CMat) {
    let tr = linalg::trace(r);
    let scale = if lambda.norm() < 1e-9 && tr.norm() > 1e-8 * linalg::frobenius(r) {
        ONE / tr
    } else {
        let f = linalg::frobenius(r);
        let phase = if lambda.im.abs() < 1e-9 * lambda.norm().max(1e-12) {
            // R = e^{iφ} H with H Hermitian: Tr[R R] = e^{2iφ} ‖H‖²
            let w = linalg::hs_inner(&linalg::adjoint(r), r);
            if w.norm() > 0.5 * f * f {
                (w / w.norm()).sqrt()
            } else {
                largest_entry_phase(r)
            }
        } else {
            largest_entry_phase(r)
        };
        let mut s = ONE / (phase * f);
        let rr = linalg::scaled(r, s);
        if sign_flip(&rr) {
            s = -s;
        }
        s
    };
    *r = linalg::scaled(r, scale);
    *l = linalg::scaled(l, ONE / scale.conj());
}

fn largest_entry_phase(r: &CMat) -> C64 {
    let mut best = ZERO;
    let max = linalg::max_abs(r);
    'outer: for j in 0..r.ncols() {
        for i in 0..r.nrows() {
            if r[(i, j)].norm() > 0.9 * max {
                best = r[(i, j)];
                break 'outer;
            }
        }
    }
    if best == ZERO {
        ONE
    } else {
        best / best.norm()
    }
}

fn sign_flip(r: &CMat) -> bool {
    let max = linalg::max_abs(r);
    for j in 0..r.ncols() {
        for i in 0..r.nrows() {
            let x = r[(i, j)];
            if x.norm() > 0.5 * max {
                return if x.re.abs() > 1e-3 * max { x.re < 0.0 } else { x.im < 0.0 };
            }
        }
    }
    false
}

/// Sorts by descending real part; near-equal real parts keep positive frequency first.
fn order_modes(vals: &[C64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].re.total_cmp(&vals[a].re));
    let mut changed = true;
    while changed {
        changed = false;
        for i in 1..order.len() {
            let (x, y) = (vals[order[i - 1]], vals[order[i]]);
            let close = (x.re - y.re).abs() <= 1e-9 * (1.0 + x.re.abs());
            if close && y.im > x.im + 1e-12 {
                order.swap(i - 1, i);
                changed = true;
            }
        }
    }
    order
}

/// First `options.count` eigentriples of `ℒ`, ordered by descending real part.
pub fn spectrum_with(params: &ModelParams, options: &SpectrumOptions) -> Result<Spectrum> {
    let lv = build_liouvillian(params)?;
    let (mut labels, modulus) = sector_labels(params);
    if let Some(only) = &options.sectors {
        labels.retain(|l| only.contains(l));
    }
    let d = params.dim;
    let per_block: Vec<Result<(SectorLabel, BlockModes)>> = labels
        .par_iter()
        .map(|&label| {
            let block = block_for(&lv, label, modulus);
            let modes = block_modes(&block, options)?;
            let right = modes.right.iter().map(|v| vec_of(&block.scatter(v))).collect();
            let left = modes.left.iter().map(|v| vec_of(&block.scatter(v))).collect();
            Ok((label, BlockModes { values: modes.values, right, left }))
        })
        .collect();
    let mut vals = Vec::new();
    let mut rights = Vec::new();
    let mut lefts = Vec::new();
    let mut secs = Vec::new();
    for res in per_block {
        let (label, modes) = res?;
        for ((v, r), l) in modes.values.into_iter().zip(modes.right).zip(modes.left) {
            vals.push(v);
            rights.push(r);
            lefts.push(l);
            secs.push(label);
        }
    }
    let order = order_modes(&vals);
    let mut spec = Spectrum { eigenvalues: vec![], right: vec![], left: vec![], sectors: vec![] };
    for &i in order.iter().take(options.count) {
        let mut r = unvec(&rights[i], d);
        let mut l = unvec(&lefts[i], d);
        normalize_mode(vals[i], &mut r, &mut l);
        spec.eigenvalues.push(vals[i]);
        spec.right.push(r);
        spec.left.push(l);
        spec.sectors.push(secs[i]);
    }
    Ok(spec)
}

pub fn spectrum(params: &ModelParams, count: usize) -> Result<Spectrum> {
    spectrum_with(params, &SpectrumOptions::new(count))
}

/// Projects a numerical null vector onto a physical state: Hermitian part,
/// clipped negative eigenvalues, unit trace.
pub fn physical_state(rho: &CMat) -> Result<CMat> {
    let tr = linalg::trace(rho);
    let r = if tr.norm() > 1e-14 { linalg::scaled(rho, ONE / tr) } else { rho.clone() };
    let (vals, u) = linalg::eigh(&r);
    let d = r.nrows();
    let clipped: Vec<f64> = vals.iter().map(|&v| if v < -1e-10 { 0.0 } else { v }).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::SolverFailure { reason: "null vector has no positive part".into(), residual: total });
    }
    let scaled_u = Mat::from_fn(d, d, |i, j| u[(i, j)] * (clipped[j] / total));
    Ok(&scaled_u * u.adjoint())
}

/// Number of eigenvalues in the zero cluster given values sorted by `|λ|`.
fn zero_cluster(sorted: &[C64]) -> Result<usize> {
    for c in 1..sorted.len() {
        let thr = 1e-9f64.max(1e-3 * sorted[c].re.abs());
        if sorted[c - 1].norm() < thr && sorted[c].norm() >= thr {
            return Ok(c);
        }
    }
    let next = sorted.last().map_or(0.0, |l| l.re.abs());
    Err(Error::IllResolvedDegeneracy { next })
}

/// Solves `Bx = 0` with the trace row imposed, for a block with a unique null vector.
fn unique_null_state(block: &LiouvillianBlock) -> Result<CMat> {
    let d = block.dim;
    let n = block.size();
    let mut a = block.matrix.clone();
    let diag: Vec<usize> = (0..n).filter(|&i| block.indices[i] % d == block.indices[i] / d).collect();
    let row = diag[0];
    for j in 0..n {
        a[(row, j)] = ZERO;
    }
    for &i in &diag {
        a[(row, i)] = ONE;
    }
    let mut rhs = vec![ZERO; n];
    rhs[row] = ONE;
    let x = Lu::new(&a).solve(&rhs);
    physical_state(&block.scatter(&x))
}

/// Steady states: one per zero eigenvalue of the state-carrying blocks.
///
/// Under strong symmetry the states are returned in the symmetry eigenbasis,
/// one per diagonal block `(μ, μ)`.
pub fn steady_states(params: &ModelParams) -> Result<Vec<CMat>> {
    let lv = build_liouvillian(params)?;
    let (labels, modulus) = sector_labels(params);
    let opts = SpectrumOptions::new(6);
    let per_block: Vec<Result<Vec<CMat>>> = labels
        .par_iter()
        .filter(|l| l.holds_states())
        .map(|&label| {
            let block = block_for(&lv, label, modulus);
            let modes = block_modes(&block, &opts)?;
            let mut idx: Vec<usize> = (0..modes.values.len()).collect();
            idx.sort_by(|&a, &b| modes.values[a].norm().total_cmp(&modes.values[b].norm()));
            let sorted: Vec<C64> = idx.iter().map(|&i| modes.values[i]).collect();
            let count = zero_cluster(&sorted)?;
            if count == 1 {
                Ok(vec![unique_null_state(&block)?])
            } else {
                idx.iter()
                    .take(count)
                    .map(|&i| physical_state(&block.scatter(&modes.right[i])))
                    .collect()
            }
        })
        .collect();
    let mut out = Vec::new();
    for r in per_block {
        out.extend(r?);
    }
    Ok(out)
}

/// The unique steady state; errors if there are several.
pub fn steady_state(params: &ModelParams) -> Result<CMat> {
    if !params.is_strong() {
        let lv = build_liouvillian(params)?;
        let (_, modulus) = sector_labels(params);
        return unique_null_state(&block_for(&lv, SectorLabel::Weak(0), modulus));
    }
    let mut states = steady_states(params)?;
    if states.len() != 1 {
        return Err(Error::InvalidParameter(format!("{} steady states, expected one", states.len())));
    }
    Ok(states.remove(0))
}

/// `Tr[n̂ ρ]`.
pub fn mean_photon_number(rho: &CMat) -> f64 {
    (0..rho.nrows()).map(|k| k as f64 * rho[(k, k)].re).sum()
}

/// Fock dimension adequate for a steady state of mean photon number `n_ss`.
pub fn recommended_dim(n_ss: f64) -> usize {
    (2.5 * n_ss + 30.0).ceil().max(40.0) as usize
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    data: Vec<[f64; 2]>,
}

impl MatrixJson {
    fn of(m: &CMat) -> Self {
        let d = m.nrows();
        let data = (0..d * d).map(|i| m[(i / d, i % d)]).map(|z| [z.re, z.im]).collect();
        Self { dim: d, data }
    }
}

/// JSON form: eigenvalues as `[re, im]`, matrices as `{dim, data}` row-major `[re, im]`.
pub fn spectrum_to_json(spec: &Spectrum, params: &ModelParams) -> serde_json::Value {
    serde_json::json!({
        "params": params,
        "eigenvalues": spec.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "sectors": spec.sectors,
        "right": spec.right.iter().map(MatrixJson::of).collect::<Vec<_>>(),
        "left": spec.left.iter().map(MatrixJson::of).collect::<Vec<_>>(),
    })
}

pub fn matrix_to_json(m: &CMat) -> serde_json::Value {
    serde_json::to_value(MatrixJson::of(m)).expect("matrix serializes")
}

pub fn matrix_from_json(v: &serde_json::Value) -> Result<CMat> {
    let mj: MatrixJson = serde_json::from_value(v.clone()).map_err(|e| Error::InvalidData(e.to_string()))?;
    if mj.data.len() != mj.dim * mj.dim {
        return Err(Error::DimensionMismatch { expected: mj.dim * mj.dim, found: mj.data.len() });
    }
    Ok(Mat::from_fn(mj.dim, mj.dim, |i, j| {
        let [re, im] = mj.data[i * mj.dim + j];
        C64::new(re, im)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_matrix(d: usize, seed: u64) -> CMat {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        Mat::from_fn(d, d, |_, _| C64::new(next(), next()))
    }

    #[test]
    fn hamiltonian_entries() {
        let p = ModelParams::new(2, 3, 0.7, 4);
        let h = hamiltonian(&p).unwrap();
        assert!((h[(2, 0)] - C64::new(0.0, -0.7 * 2f64.sqrt())).norm() < 1e-14);
        assert!((h[(0, 2)] - C64::new(0.0, 0.7 * 2f64.sqrt())).norm() < 1e-14);
        assert!(linalg::max_abs_diff(&h, &linalg::adjoint(&h)) < 1e-14);
        let h0 = hamiltonian(&p.with_eta(0.0)).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(h0[(k, k)].re, 0.4 * k as f64);
        }
    }

    #[test]
    fn single_photon_decay_action() {
        let d = 4;
        let a = fock::annihilation(d).unwrap();
        let mut rho = linalg::zeros(d, d);
        rho[(1, 1)] = ONE;
        let out = dissipator(&a).apply_to_matrix(&rho);
        assert_abs_diff_eq!(out[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out[(1, 1)].re, -1.0, epsilon = 1e-14);
        let id = dissipator(&linalg::identity(d));
        assert!(linalg::max_abs(&id.apply_to_matrix(&random_matrix(d, 3))) < 1e-14);
    }

    #[test]
    fn trace_and_hermiticity_preserved() {
        let p = ModelParams::new(3, 4, 0.9, 8);
        let lv = build_liouvillian(&p).unwrap();
        for seed in 0..5 {
            let x = random_matrix(8, seed);
            let y = lv.apply_to_matrix(&x);
            assert!(linalg::trace(&y).norm() < 1e-10);
            let lhs = linalg::adjoint(&y);
            let rhs = lv.apply_to_matrix(&linalg::adjoint(&x));
            assert!(linalg::max_abs_diff(&lhs, &rhs) < 1e-10);
        }
    }

    #[test]
    fn closed_system_spectrum_is_detuning_differences() {
        let mut p = ModelParams::new(2, 2, 0.0, 6);
        p.gamma1 = 0.0;
        p.gamma_m = 1e-14;
        let dense = build_liouvillian(&p).unwrap().to_dense();
        let (vals, _) = linalg::eig(&dense).unwrap();
        for v in vals {
            assert!(v.re.abs() < 1e-9);
            let k = v.im / 0.4;
            assert!((k - k.round()).abs() < 1e-9 && k.round().abs() <= 5.0);
        }
    }

    #[test]
    fn blocks_partition_the_space() {
        let p = ModelParams::new(3, 4, 1.0, 9);
        let blocks = block_decompose(&p).unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks.iter().map(|b| b.size()).sum::<usize>(), 81);
        let strong = ModelParams::new(2, 4, 1.0, 8).with_gamma1(0.0);
        assert_eq!(block_decompose(&strong).unwrap().len(), 4);
    }

    #[test]
    fn weak_steady_state_is_unique_and_stationary() {
        let p = ModelParams::new(2, 3, 0.5, 20);
        let states = steady_states(&p).unwrap();
        assert_eq!(states.len(), 1);
        let lv = build_liouvillian(&p).unwrap();
        assert!(linalg::max_abs(&lv.apply_to_matrix(&states[0])) < 1e-9);
        assert_abs_diff_eq!(linalg::trace(&states[0]).re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_cluster_rule() {
        let v = |x: f64| C64::new(-x, 0.0);
        assert_eq!(zero_cluster(&[v(1e-13), v(1e-2), v(1.0)]).unwrap(), 1);
        assert_eq!(zero_cluster(&[v(1e-13), v(1e-12), v(0.5)]).unwrap(), 2);
        assert!(zero_cluster(&[v(1e-5), v(2e-5)]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let m = random_matrix(3, 9);
        let back = matrix_from_json(&matrix_to_json(&m)).unwrap();
        assert!(linalg::max_abs_diff(&m, &back) < 1e-15);
    }
}
