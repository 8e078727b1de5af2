//! Truncated Fock-space operators and states.
//!
//! Operators are plain dense matrices ([`FockMatrix`]); states are normalized
//! amplitude vectors ([`StateVector`]). The squeeze operator uses
//! `S(ξ) = exp[½(ξ* a² − ξ a†²)]`, for which `ξ = s e^{iφ}` squeezes the
//! quadrature `X_{φ/2}` down to `e^{−2s}/4`.

use std::f64::consts::{PI, TAU};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64, I, ONE, ZERO};

pub type FockMatrix = CMat;

/// Extra levels used when constructing states before truncating to `dim`.
const PAD: usize = 40;

/// Leakage threshold over the top 10% of Fock levels.
pub const LEAKAGE_TOL: f64 = 1e-6;

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    Ok(())
}

pub fn annihilation(dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    Ok(Mat::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    }))
}

pub fn creation(dim: usize) -> Result<FockMatrix> {
    Ok(linalg::adjoint(&annihilation(dim)?))
}

pub fn number(dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    Ok(diagonal(dim, |k| C64::new(k as f64, 0.0)))
}

pub(crate) fn diagonal(dim: usize, f: impl Fn(usize) -> C64) -> FockMatrix {
    Mat::from_fn(dim, dim, |i, j| if i == j { f(i) } else { ZERO })
}

/// `a^k` without forming repeated products.
pub fn annihilation_power(k: usize, dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    Ok(Mat::from_fn(dim, dim, |i, j| {
        if j == i + k {
            let mut c = 1.0;
            for l in (i + 1)..=j {
                c *= l as f64;
            }
            C64::new(c.sqrt(), 0.0)
        } else {
            ZERO
        }
    }))
}

/// Quadrature `X_φ = (a e^{−iφ} + a† e^{iφ}) / 2`.
pub fn quadrature(phi: f64, dim: usize) -> Result<FockMatrix> {
    let a = annihilation(dim)?;
    let e = C64::from_polar(1.0, -phi);
    Ok(Mat::from_fn(dim, dim, |i, j| (a[(i, j)] * e + a[(j, i)] * e.conj()) * 0.5))
}

/// Displacement `D(α) = exp(α a† − α* a)`.
pub fn displacement(alpha: C64, dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite displacement {alpha}")));
    }
    if alpha.norm_sqr() > 0.5 * dim as f64 {
        log::warn!("displacement |α|² = {:.2} exceeds half the Fock dimension {dim}", alpha.norm_sqr());
    }
    let a = annihilation(dim)?;
    // exp(G) with G anti-Hermitian equals exp(-i H) for H = iG
    let h = Mat::from_fn(dim, dim, |i, j| I * (alpha * a[(j, i)].conj() - alpha.conj() * a[(i, j)]));
    Ok(linalg::unitary_from_hermitian(&h, 1.0))
}

/// Squeeze operator `S(ξ) = exp[½(ξ* a² − ξ a†²)]`.
pub fn squeeze(xi: C64, dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    if !xi.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite squeezing {xi}")));
    }
    if xi.norm() > 1.5 || (xi.norm() > 1.0 && dim < 40) {
        log::warn!("squeezing s = {:.2} is large for Fock dimension {dim}", xi.norm());
    }
    let a2 = annihilation_power(2, dim)?;
    let h = Mat::from_fn(dim, dim, |i, j| {
        I * 0.5 * (xi.conj() * a2[(i, j)] - xi * a2[(j, i)].conj())
    });
    Ok(linalg::unitary_from_hermitian(&h, 1.0))
}

/// Diagonal symmetry unitary `exp(−i 2π n̂ / p)`.
pub fn symmetry_operator(p: usize, dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    if p == 0 {
        return Err(Error::InvalidParameter("symmetry order p must be positive".into()));
    }
    Ok(diagonal(dim, |k| C64::from_polar(1.0, -TAU * ((k % p) as f64) / p as f64)))
}

/// Projector onto Fock levels `k ≡ μ (mod n)`.
pub fn sector_projector(mu: usize, n: usize, dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    if n == 0 || mu >= n {
        return Err(Error::InvalidSector { mu, n });
    }
    Ok(diagonal(dim, |k| if k % n == mu { ONE } else { ZERO }))
}

/// Normalized pure state in a truncated Fock basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    /// Normalizes `amps`; fails on a zero vector.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        check_dim(amps.len())?;
        let norm = linalg::vnorm(&amps);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("state vector has zero or non-finite norm".into()));
        }
        Ok(Self { amps: amps.into_iter().map(|x| x / norm).collect() })
    }

    pub fn fock(k: usize, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if k >= dim {
            return Err(Error::InvalidParameter(format!("Fock level {k} outside dimension {dim}")));
        }
        let mut amps = vec![ZERO; dim];
        amps[k] = ONE;
        Ok(Self { amps })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        linalg::vdot(&self.amps, &other.amps)
    }

    pub fn expect(&self, op: &FockMatrix) -> C64 {
        linalg::vdot(&self.amps, &linalg::matvec(op, &self.amps))
    }

    pub fn density(&self) -> CMat {
        linalg::outer(&self.amps, &self.amps)
    }

    /// Population in the top 10% of Fock levels.
    pub fn leakage(&self) -> f64 {
        let d = self.dim();
        let top = (d / 10).max(1);
        self.amps[d - top..].iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn is_truncation_safe(&self) -> bool {
        self.leakage() < LEAKAGE_TOL
    }
}

/// Population of a density matrix in the top 10% of Fock levels.
pub fn density_leakage(rho: &CMat) -> f64 {
    let d = rho.nrows();
    let top = (d / 10).max(1);
    (d - top..d).map(|k| rho[(k, k)].re).sum()
}

/// Displacement `α = r e^{iθ}` and squeezing `ξ = s e^{iφ}` of a squeezed-coherent state.
///
/// Phases are stored in `[0, 2π)`; with the squeeze convention of this module
/// the squeezed quadrature angle `φ/2` then covers `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezedStateParams {
    pub alpha: C64,
    pub xi: C64,
}

fn canonical_phase(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y >= TAU { 0.0 } else { y }
}

impl SqueezedStateParams {
    pub fn new(alpha: C64, xi: C64) -> Self {
        Self { alpha, xi }
    }

    pub fn polar(r: f64, theta: f64, s: f64, phi: f64) -> Result<Self> {
        if !(r >= 0.0) || !(s >= 0.0) || !theta.is_finite() || !phi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "squeezed-state parameters r = {r}, s = {s} must be non-negative and finite"
            )));
        }
        Ok(Self { alpha: C64::from_polar(r, theta), xi: C64::from_polar(s, phi) })
    }

    pub fn coherent(alpha: C64) -> Self {
        Self { alpha, xi: ZERO }
    }

    pub fn r(&self) -> f64 {
        self.alpha.norm()
    }

    pub fn theta(&self) -> f64 {
        canonical_phase(self.alpha.arg())
    }

    pub fn s(&self) -> f64 {
        self.xi.norm()
    }

    pub fn phi(&self) -> f64 {
        canonical_phase(self.xi.arg())
    }
}

/// `|α, ξ⟩ = D(α) S(ξ) |0⟩`, built in a padded basis then truncated to `dim`.
pub fn squeezed_coherent(params: &SqueezedStateParams, dim: usize) -> Result<StateVector> {
    check_dim(dim)?;
    let big = dim + PAD;
    let mut vac = vec![ZERO; big];
    vac[0] = ONE;
    let sq = linalg::matvec(&squeeze(params.xi, big)?, &vac);
    let full = linalg::matvec(&displacement(params.alpha, big)?, &sq);
    let state = StateVector::new(full[..dim].to_vec())?;
    if !state.is_truncation_safe() {
        log::warn!(
            "squeezed-coherent state r = {:.3}, s = {:.3} leaks {:.2e} into the top levels of dim {dim}",
            params.r(),
            params.s(),
            state.leakage()
        );
    }
    Ok(state)
}

/// The `n` symmetry-sector cat states built from `n` symmetric lobes.
///
/// State `μ` is `Σ_j e^{−i2πμj/n} |ψ_j⟩` projected onto levels `≡ μ (mod n)`
/// and normalized numerically.
pub fn cat_states(lobes: &[SqueezedStateParams], dim: usize) -> Result<Vec<StateVector>> {
    let n = lobes.len();
    if n == 0 {
        return Err(Error::InvalidParameter("cat_states needs at least one lobe".into()));
    }
    let psi = lobes.iter().map(|l| squeezed_coherent(l, dim)).collect::<Result<Vec<_>>>()?;
    for i in 0..n {
        for j in (i + 1)..n {
            let overlap = psi[i].inner(&psi[j]).norm();
            if overlap > 0.99 {
                return Err(Error::IllConditionedSuperposition { overlap });
            }
        }
    }
    (0..n)
        .map(|mu| {
            let mut amps = vec![ZERO; dim];
            for (j, p) in psi.iter().enumerate() {
                let w = C64::from_polar(1.0, -TAU * (mu * j) as f64 / n as f64);
                for (a, x) in amps.iter_mut().zip(p.amplitudes()) {
                    *a += w * x;
                }
            }
            for (k, a) in amps.iter_mut().enumerate() {
                if k % n != mu {
                    *a = ZERO;
                }
            }
            if linalg::vnorm(&amps) < 1e-12 {
                return Err(Error::IllConditionedSuperposition { overlap: 1.0 });
            }
            StateVector::new(amps)
        })
        .collect()
}

/// Lobes `α_j = r e^{iθ_j}` at `θ_j = θ_first + 2πj/n`, all with squeezing `s`
/// along the given quadrature offset relative to the lobe direction.
pub fn symmetric_lobes(n: usize, r: f64, theta_first: f64, s: f64, quad_offset: f64) -> Vec<SqueezedStateParams> {
    (0..n)
        .map(|j| {
            let th = theta_first + TAU * j as f64 / n as f64;
            SqueezedStateParams {
                alpha: C64::from_polar(r, th),
                xi: C64::from_polar(s, 2.0 * (th + quad_offset)),
            }
        })
        .collect()
}

/// Squeezed-quadrature offset from the radial direction: a quarter turn for
/// phase squeezing (`n > m`), zero for amplitude squeezing.
pub fn squeeze_offset(n: usize, m: usize) -> f64 {
    if n > m {
        PI / 2.0
    } else {
        0.0
    }
}
