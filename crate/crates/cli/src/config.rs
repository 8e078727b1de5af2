//! Experiment configuration, read from TOML or assembled from flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nmosc::liouvillian::recommended_dim;
use nmosc::meanfield::eta_for_photon_number_tol;
use nmosc::ModelParams;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Spectrum,
    Steady,
    Wigner,
    Mandel,
    Quadrature,
    Bitflip,
    Phaseflip,
    Qam,
    Meanfield,
    EpScan,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Spectrum => "spectrum",
            Kind::Steady => "steady",
            Kind::Wigner => "wigner",
            Kind::Mandel => "mandel",
            Kind::Quadrature => "quadrature",
            Kind::Bitflip => "bitflip",
            Kind::Phaseflip => "phaseflip",
            Kind::Qam => "qam",
            Kind::Meanfield => "meanfield",
            Kind::EpScan => "ep-scan",
        }
    }
}

/// Rates shared by every point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rates {
    pub gamma1: f64,
    pub gamma_m: f64,
    pub delta: f64,
    pub theta0: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { gamma1: 1.0, gamma_m: 0.2, delta: 0.4, theta0: 0.0 }
    }
}

fn default_seed() -> u64 {
    42
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_realizations() -> usize {
    100
}

fn default_grid() -> usize {
    81
}

fn default_extent() -> f64 {
    6.0
}

/// A full experiment description.
///
/// Sweep points are target photon numbers `n_ss`, each resolved to a drive
/// strength `η`; `eta` gives drive strengths directly instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// `(n, m)` pairs.
    pub pairs: Vec<(usize, usize)>,
    #[serde(default)]
    pub n_ss: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Fock dimension for every point; chosen from `n_ss` when absent.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Eigenvalues per spectrum; `n + 2` when absent.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    /// Extreme metastable state used as the bit-flip initial state.
    #[serde(default)]
    pub lobe: usize,
    /// Symmetry sector of the phase-flip cat.
    #[serde(default)]
    pub mu: usize,
    /// Wigner grid points per axis.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Wigner grid half-width.
    #[serde(default = "default_extent")]
    pub extent: f64,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.pairs.is_empty() {
            return Err(CliError::Config("no (n, m) pairs given".into()));
        }
        if self.n_ss.is_empty() && self.eta.is_empty() {
            return Err(CliError::Config("give target photon numbers (n_ss) or drive strengths (eta)".into()));
        }
        if !self.n_ss.is_empty() && !self.eta.is_empty() {
            return Err(CliError::Config("n_ss and eta are mutually exclusive".into()));
        }
        if self.n_ss.iter().chain(&self.eta).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::Config("sweep values must be positive and finite".into()));
        }
        if self.eta.len() > 0 && self.dim.is_none() {
            return Err(CliError::Config("a fixed-eta sweep needs an explicit dim".into()));
        }
        if self.grid < 2 || !(self.extent > 0.0) {
            return Err(CliError::Config("wigner grid needs >= 2 points and a positive extent".into()));
        }
        Ok(())
    }

    /// Sweep values, either photon-number targets or drive strengths.
    pub fn sweep(&self) -> &[f64] {
        if self.n_ss.is_empty() {
            &self.eta
        } else {
            &self.n_ss
        }
    }

    pub fn base_params(&self, n: usize, m: usize, eta: f64, dim: usize) -> ModelParams {
        let r = self.rates;
        ModelParams { n, m, gamma1: r.gamma1, gamma_m: r.gamma_m, eta, delta: r.delta, theta0: r.theta0, dim }
    }

    /// Model parameters of one sweep point.
    pub fn resolve(&self, n: usize, m: usize, value: f64) -> Result<ModelParams, CliError> {
        let base = |eta: f64, dim: usize| self.base_params(n, m, eta, dim);
        if self.n_ss.is_empty() {
            let p = base(value, self.dim.unwrap_or(2));
            p.validate()?;
            return Ok(p);
        }
        let p = base(1.0, self.dim.unwrap_or_else(|| recommended_dim(value)));
        p.validate()?;
        let sol = eta_for_photon_number_tol(value, &p, 0.002)?;
        Ok(p.with_eta(sol.eta))
    }
}
