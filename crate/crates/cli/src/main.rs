//! `nmosc`: run oscillator experiments and write CSV/JSON artifacts.

mod config;
mod experiments;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{ExperimentConfig, Kind, Rates};
use output::Writer;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io { path: PathBuf, message: String },
    Csv(String),
    Model(nmosc::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Csv(_) => 3,
            CliError::Model(_) => 4,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config(m) => json!({"error": "config", "message": m}),
            CliError::Io { path, message } => json!({"error": "io", "path": path, "message": message}),
            CliError::Csv(m) => json!({"error": "output", "message": m}),
            CliError::Model(e) => json!({"error": "model", "variant": format!("{e:?}"), "message": e.to_string()}),
        }
    }
}

impl From<nmosc::Error> for CliError {
    fn from(e: nmosc::Error) -> Self {
        CliError::Model(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "nmosc", version, about = "Driven-dissipative oscillator with n-photon drive and m-photon loss")]
struct Cli {
    /// RNG seed for stochastic experiments.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fock dimension for every sweep point.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Slowest Liouvillian eigenvalues and the gap ratio.
    Spectrum(Sweep),
    /// Steady states, photon distributions and parity.
    Steady(Sweep),
    /// Wigner grids of the steady and extreme metastable states.
    Wigner(Sweep),
    /// Mandel Q of the steady state.
    Mandel(Sweep),
    /// Minimal quadrature variance of the extreme metastable states.
    Quadrature(Sweep),
    /// Bit-flip times and their scale factor.
    Bitflip(Sweep),
    /// Phase-flip rates and their slope in the photon number.
    Phaseflip(Sweep),
    /// Associative-memory success statistics.
    Qam(Sweep),
    /// Mean-field fixed points and their stability.
    Meanfield(Sweep),
    /// Exceptional-point scan of the (4,6) model.
    EpScan(Sweep),
}

#[derive(Args, Debug)]
struct Sweep {
    /// `n,m` pair; repeat for several.
    #[arg(long = "pair", value_parser = parse_pair, required = true)]
    pairs: Vec<(usize, usize)>,
    /// Target steady-state photon numbers.
    #[arg(long, value_delimiter = ',')]
    n_ss: Vec<f64>,
    /// Drive strengths (instead of --n-ss).
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    gamma1: f64,
    #[arg(long, default_value_t = 0.2)]
    gamma_m: f64,
    #[arg(long, default_value_t = 0.4)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    theta0: f64,
    /// Eigenvalues per spectrum.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 100)]
    realizations: usize,
    /// Bit-flip initial lobe.
    #[arg(long, default_value_t = 0)]
    lobe: usize,
    /// Phase-flip cat sector.
    #[arg(long, default_value_t = 0)]
    mu: usize,
    #[arg(long, default_value_t = 81)]
    grid: usize,
    #[arg(long, default_value_t = 6.0)]
    extent: f64,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected n,m, got {s:?}"))?;
    let n = a.trim().parse().map_err(|e| format!("bad n in {s:?}: {e}"))?;
    let m = b.trim().parse().map_err(|e| format!("bad m in {s:?}: {e}"))?;
    Ok((n, m))
}

impl Sweep {
    fn into_config(self, kind: Kind) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            pairs: self.pairs,
            n_ss: self.n_ss,
            eta: self.eta,
            rates: Rates { gamma1: self.gamma1, gamma_m: self.gamma_m, delta: self.delta, theta0: self.theta0 },
            seed: 42,
            out: PathBuf::from("out"),
            dim: None,
            count: self.count,
            realizations: self.realizations,
            lobe: self.lobe,
            mu: self.mu,
            grid: self.grid,
            extent: self.extent,
        }
    }
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match cli.command {
        Command::Run { config } => ExperimentConfig::from_file(&config)?,
        Command::Spectrum(s) => s.into_config(Kind::Spectrum),
        Command::Steady(s) => s.into_config(Kind::Steady),
        Command::Wigner(s) => s.into_config(Kind::Wigner),
        Command::Mandel(s) => s.into_config(Kind::Mandel),
        Command::Quadrature(s) => s.into_config(Kind::Quadrature),
        Command::Bitflip(s) => s.into_config(Kind::Bitflip),
        Command::Phaseflip(s) => s.into_config(Kind::Phaseflip),
        Command::Qam(s) => s.into_config(Kind::Qam),
        Command::Meanfield(s) => s.into_config(Kind::Meanfield),
        Command::EpScan(s) => s.into_config(Kind::EpScan),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dim) = cli.dim {
        cfg.dim = Some(dim);
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let outcome = experiments::execute(cfg)?;
    let mut writer = Writer::new(&cfg.out)?;
    let header = vec![
        ("kind".to_string(), cfg.kind.name().to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("sweep".to_string(), if cfg.n_ss.is_empty() { "eta" } else { "n_ss" }.to_string()),
        ("rates".to_string(), serde_json::to_string(&cfg.rates).expect("rates serialize")),
    ];
    for t in &outcome.tables {
        writer.table(t, &header)?;
    }
    writer.json("summary.json", &outcome.summary)?;
    let points: Vec<_> = outcome
        .points
        .iter()
        .map(|p| json!({"n": p.n, "m": p.m, "target": p.target, "params": p.params}))
        .collect();
    writer.finish(json!({
        "version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.kind.name(),
        "seed": cfg.seed,
        "config": cfg,
        "points": points,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match build_config(cli).and_then(|cfg| run(&cfg)) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code())
        }
    }
}
