//! Dense complex linear algebra helpers on top of `faer`.
//!
//! Everything in the crate stores operators as column-major `faer::Mat<C64>`.
//! This module collects the handful of routines the physics modules need:
//! Hermitian diagonalisation, Padé matrix exponentials, trace norms and
//! fidelities, and a shift-invert Arnoldi iteration for the slow end of a
//! Liouvillian spectrum.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, Side};

use crate::error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMat = Mat<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}

pub fn zeros(n: usize, m: usize) -> CMat {
    Mat::zeros(n, m)
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn scaled(a: &CMat, c: C64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * c)
}

/// `a + c * b`
pub fn axpy(a: &CMat, c: C64, b: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + c * b[(i, j)])
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Hilbert-Schmidt inner product `Tr[a† b]`.
pub fn hs_inner(a: &CMat, b: &CMat) -> C64 {
    let mut acc = ZERO;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)].conj() * b[(i, j)];
        }
    }
    acc
}

pub fn frobenius(a: &CMat) -> f64 {
    hs_inner(a, a).re.sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn hermitian_part(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    let ab = a * b;
    let ba = b * a;
    axpy(&ab, -ONE, &ba)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let h = hermitian_part(a);
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .expect("hermitian eigendecomposition does not fail on finite input");
    let vals = (0..h.nrows()).map(|i| evd.S()[i].re).collect();
    (vals, evd.U().to_owned())
}

pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    eigh(a).0
}

/// General complex eigendecomposition `A = U diag(S) U⁻¹`.
pub fn eig(a: &CMat) -> Result<(Vec<C64>, CMat)> {
    let evd = a.eigen().map_err(|e| Error::SolverFailure {
        reason: format!("dense eigendecomposition: {e:?}"),
        residual: f64::NAN,
    })?;
    let vals = (0..a.nrows()).map(|i| evd.S()[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

/// `exp(-i t H)` for Hermitian `H`, exactly unitary up to rounding.
pub fn unitary_from_hermitian(h: &CMat, t: f64) -> CMat {
    let (vals, u) = eigh(h);
    let n = h.nrows();
    let phased = Mat::from_fn(n, n, |i, j| u[(i, j)] * C64::from_polar(1.0, -t * vals[j]));
    &phased * u.adjoint()
}

fn norm_one(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &CMat) -> CMat {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm = norm_one(a);
    let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = scaled(a, C64::new(0.5f64.powi(squarings), 0.0));

    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let comb = |c6: f64, c4: f64, c2: f64| {
        Mat::from_fn(n, n, |i, j| a6[(i, j)] * c6 + a4[(i, j)] * c4 + a2[(i, j)] * c2)
    };
    let inner_u = comb(B[13], B[11], B[9]);
    let mut u = &a6 * &inner_u;
    let tail_u = comb(B[7], B[5], B[3]);
    u = Mat::from_fn(n, n, |i, j| u[(i, j)] + tail_u[(i, j)] + id[(i, j)] * B[1]);
    let u = &a * &u;
    let inner_v = comb(B[12], B[10], B[8]);
    let mut v = &a6 * &inner_v;
    let tail_v = comb(B[6], B[4], B[2]);
    v = Mat::from_fn(n, n, |i, j| v[(i, j)] + tail_v[(i, j)] + id[(i, j)] * B[0]);

    let p = axpy(&v, ONE, &u);
    let q = axpy(&v, -ONE, &u);
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Trace norm of a Hermitian matrix (sum of absolute eigenvalues).
pub fn trace_norm_hermitian(a: &CMat) -> f64 {
    eigvalsh(a).iter().map(|x| x.abs()).sum()
}

/// Matrix with entries `v w†`.
pub fn outer(v: &[C64], w: &[C64]) -> CMat {
    Mat::from_fn(v.len(), w.len(), |i, j| v[i] * w[j].conj())
}

pub fn matvec(a: &CMat, v: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; a.nrows()];
    for j in 0..a.ncols() {
        let x = v[j];
        if x == ZERO {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += a[(i, j)] * x;
        }
    }
    out
}

pub fn vdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vnorm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²` between a density matrix and a
/// low-rank state `σ = Σ_j w_j |ψ_j⟩⟨ψ_j|`.
///
/// With `V = [√w_j ψ_j]` the fidelity reduces to `(Σ √eig(V† ρ V))²`, so only an
/// `r × r` Hermitian problem is solved.
pub fn fidelity_low_rank(rho: &CMat, states: &[&[C64]], weights: &[f64]) -> f64 {
    let d = rho.nrows();
    let r = states.len();
    let v = Mat::from_fn(d, r, |i, j| states[j][i] * weights[j].max(0.0).sqrt());
    let g = v.adjoint() * (rho * &v);
    let s = sqrt_trace(&eigvalsh(&g));
    s * s
}

/// Uhlmann fidelity between two general density matrices.
pub fn fidelity(rho: &CMat, sigma: &CMat) -> f64 {
    let (vals, u) = eigh(rho);
    let n = rho.nrows();
    let sq = Mat::from_fn(n, n, |i, j| u[(i, j)] * vals[j].max(0.0).sqrt());
    let sqrt_rho = &sq * u.adjoint();
    let inner = &sqrt_rho * (sigma * &sqrt_rho);
    let s = sqrt_trace(&eigvalsh(&inner));
    s * s
}

/// `Σ √λ` over eigenvalues, discarding rounding noise around zero.
fn sqrt_trace(vals: &[f64]) -> f64 {
    let top = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    vals.iter().filter(|&&x| x > 1e-13 * top).map(|x| x.sqrt()).sum()
}

/// LU factorisation of a dense complex matrix with vector solves.
pub struct Lu {
    lu: PartialPivLu<C64>,
    n: usize,
}

impl Lu {
    pub fn new(a: &CMat) -> Self {
        Self { lu: a.partial_piv_lu(), n: a.nrows() }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solves `A† x = b`.
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let mut rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_adjoint_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }
}

/// Ritz pairs returned by [`arnoldi`].
#[derive(Debug, Clone)]
pub struct RitzPairs {
    pub values: Vec<C64>,
    pub vectors: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
}

fn start_vector(n: usize) -> Vec<C64> {
    // fixed pseudo-random pattern keeps every solve deterministic
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let v: Vec<C64> = (0..n).map(|_| C64::new(1.0 + next(), next())).collect();
    let nv = vnorm(&v);
    v.into_iter().map(|x| x / nv).collect()
}

/// Arnoldi iteration returning the `nev` Ritz pairs of largest modulus of the
/// operator `op` (typically a shift-inverted Liouvillian block).
///
/// The Krylov space is grown to `kdim` and doubled until every requested pair
/// has relative residual below `tol`, or the full space is reached.
pub fn arnoldi<F>(n: usize, mut op: F, nev: usize, kdim: usize, tol: f64) -> Result<RitzPairs>
where
    F: FnMut(&[C64]) -> Vec<C64>,
{
    let nev = nev.min(n);
    let mut kdim = kdim.max(nev + 10).min(n);
    loop {
        let pairs = arnoldi_pass(n, &mut op, nev, kdim)?;
        let worst = pairs
            .residuals
            .iter()
            .zip(&pairs.values)
            .map(|(r, v)| r / v.norm().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if worst <= tol || kdim == n {
            return Ok(pairs);
        }
        if kdim >= 1200 {
            return Err(Error::SolverFailure {
                reason: "Arnoldi did not converge".into(),
                residual: worst,
            });
        }
        kdim = (kdim * 2).min(n);
    }
}

fn arnoldi_pass<F>(n: usize, op: &mut F, nev: usize, kdim: usize) -> Result<RitzPairs>
where
    F: FnMut(&[C64]) -> Vec<C64>,
{
    let mut basis: Vec<Vec<C64>> = vec![start_vector(n)];
    let mut h = zeros(kdim + 1, kdim);
    let mut m = kdim;
    let mut hnorm = 0.0f64;
    for j in 0..kdim {
        let mut w = op(&basis[j]);
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = vdot(q, &w);
                for (wk, qk) in w.iter_mut().zip(q) {
                    *wk -= c * qk;
                }
                h[(i, j)] += c;
            }
        }
        let beta = vnorm(&w);
        hnorm = hnorm.max(h[(j, j)].norm()).max(beta);
        h[(j + 1, j)] = C64::new(beta, 0.0);
        if beta <= 1e-13 * hnorm.max(1.0) {
            m = j + 1;
            break;
        }
        if j + 1 < kdim {
            basis.push(w.into_iter().map(|x| x / beta).collect());
        }
    }
    let hm = Mat::from_fn(m, m, |i, j| h[(i, j)]);
    let (vals, y) = eig(&hm)?;
    let beta = h[(m, m - 1)].norm();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[b].norm().total_cmp(&vals[a].norm()));
    let mut out = RitzPairs { values: vec![], vectors: vec![], residuals: vec![] };
    for &idx in order.iter().take(nev) {
        let ycol: Vec<C64> = (0..m).map(|i| y[(i, idx)]).collect();
        let ny = vnorm(&ycol);
        let mut v = vec![ZERO; n];
        for (k, q) in basis.iter().enumerate().take(m) {
            let c = ycol[k] / ny;
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi += c * qi;
            }
        }
        let nv = vnorm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        out.values.push(vals[idx]);
        out.residuals.push(beta * (ycol[m - 1] / ny).norm());
        out.vectors.push(v);
    }
    Ok(out)
}
