//! One function per experiment kind, each turning a resolved sweep point
//! into table rows and a JSON record.

use rayon::prelude::*;
use serde_json::{json, Value};

use nmosc::dynamics::{bit_flip_scale_factor, bit_flip_time, phase_flip_rate, phase_flip_slope};
use nmosc::liouvillian::{self, mean_photon_number, steady_states};
use nmosc::metastability::{self, exceptional_point, exceptional_point_scan, extreme_metastable_states, gap_ratio};
use nmosc::observables::{self, fit_lobe_params, linspace, mandel_q, min_quadrature_variance, variance_to_db, wigner};
use nmosc::{meanfield, qam, Error, ModelParams};

use crate::config::{ExperimentConfig, Kind};
use crate::output::Table;
use crate::{row, CliError};

/// A resolved sweep point.
#[derive(Debug, Clone, Copy)]
pub struct Point {
    pub n: usize,
    pub m: usize,
    /// Sweep value: target photon number or drive strength.
    pub target: f64,
    pub params: ModelParams,
}

pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    pub points: Vec<Point>,
}

struct PointOut {
    tables: Vec<Table>,
    record: Value,
}

/// Errors that mean "nothing to measure here" rather than a failed solve.
fn skippable(e: &Error) -> bool {
    matches!(e, Error::NoWindow { .. } | Error::NoMetastableManifold { .. })
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    if cfg.kind == Kind::EpScan {
        return ep_scan(cfg);
    }
    let jobs: Vec<(usize, usize, f64)> =
        cfg.pairs.iter().flat_map(|&(n, m)| cfg.sweep().iter().map(move |&v| (n, m, v))).collect();
    let points = jobs
        .par_iter()
        .map(|&(n, m, v)| Ok(Point { n, m, target: v, params: cfg.resolve(n, m, v)? }))
        .collect::<Result<Vec<Point>, CliError>>()?;
    let results: Vec<Result<PointOut, Error>> = points.par_iter().map(|pt| run_point(cfg, pt)).collect();
    let mut tables: Vec<Table> = Vec::new();
    let mut records = Vec::new();
    for (pt, res) in points.iter().zip(results) {
        match res {
            Ok(out) => {
                for t in out.tables {
                    match tables.iter_mut().find(|x| x.name == t.name) {
                        Some(existing) => existing.extend(t),
                        None => tables.push(t),
                    }
                }
                records.push(out.record);
            }
            Err(e) if skippable(&e) => {
                records.push(json!({"n": pt.n, "m": pt.m, "target": pt.target, "skipped": e.to_string()}));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let summary = json!({ "points": records, "fits": pair_fits(cfg, &records) });
    Ok(Outcome { tables, summary, points })
}

fn run_point(cfg: &ExperimentConfig, pt: &Point) -> Result<PointOut, Error> {
    match cfg.kind {
        Kind::Spectrum => spectrum(cfg, pt),
        Kind::Steady => steady(pt),
        Kind::Wigner => wigner_point(cfg, pt),
        Kind::Mandel => mandel(pt),
        Kind::Quadrature => quadrature(pt),
        Kind::Bitflip => bitflip(cfg, pt),
        Kind::Phaseflip => phaseflip(cfg, pt),
        Kind::Qam => qam_point(cfg, pt),
        Kind::Meanfield => meanfield_point(pt),
        Kind::EpScan => unreachable!("handled as a whole sweep"),
    }
}

fn base(pt: &Point) -> Vec<String> {
    row![pt.n, pt.m, pt.target, pt.params.eta, pt.params.dim]
}

macro_rules! cols {
    ($($c:expr),* $(,)?) => { &["n", "m", "target", "eta", "dim", $($c),*] };
}

fn with(pt: &Point, rest: Vec<String>) -> Vec<String> {
    let mut r = base(pt);
    r.extend(rest);
    r
}

fn spectrum(cfg: &ExperimentConfig, pt: &Point) -> Result<PointOut, Error> {
    let count = cfg.count.unwrap_or(pt.n + 2);
    let spec = liouvillian::spectrum(&pt.params, count)?;
    let mut t = Table::new("spectrum", cols!["index", "re", "im", "sector"]);
    for (j, (l, s)) in spec.eigenvalues.iter().zip(&spec.sectors).enumerate() {
        t.push(with(pt, row![j + 1, l.re, l.im, format!("{s:?}")]));
    }
    let ratio = gap_ratio(&spec, pt.n).ok();
    let mut g = Table::new("gap_ratio", cols!["l", "ratio"]);
    if let Some(r) = ratio {
        g.push(with(pt, row![pt.n, r]));
    }
    Ok(PointOut {
        tables: vec![t, g],
        record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "eta": pt.params.eta, "gap_ratio": ratio,
                       "biorthonormality_error": spec.biorthonormality_error()}),
    })
}

fn steady(pt: &Point) -> Result<PointOut, Error> {
    let states = steady_states(&pt.params)?;
    let mut t = Table::new("steady", cols!["state", "mean_n", "mandel_q", "parity", "count"]);
    let mut d = Table::new("photon_distribution", cols!["state", "k", "p"]);
    for (i, rho) in states.iter().enumerate() {
        let q = mandel_q(rho).map_or(f64::NAN, |q| q);
        t.push(with(pt, row![i, mean_photon_number(rho), q, metastability::parity(rho), states.len()]));
        for (k, p) in observables::photon_distribution(rho).into_iter().enumerate() {
            d.push(with(pt, row![i, k, p]));
        }
    }
    Ok(PointOut {
        tables: vec![t, d],
        record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "steady_states": states.len()}),
    })
}

fn wigner_point(cfg: &ExperimentConfig, pt: &Point) -> Result<PointOut, Error> {
    let axis = linspace(-cfg.extent, cfg.extent, cfg.grid);
    let mut named = vec![("ss".to_string(), liouvillian::steady_state(&pt.params)?)];
    let spec = liouvillian::spectrum(&pt.params, pt.n + 1)?;
    match extreme_metastable_states(&spec, pt.n) {
        Ok(man) => named.extend(man.states.into_iter().enumerate().map(|(k, s)| (format!("mu{k}"), s))),
        Err(e) if skippable(&e) => {}
        Err(e) => return Err(e),
    }
    let mut t = Table::new("wigner", cols!["state", "x", "p", "w"]);
    for (name, rho) in &named {
        let w = wigner(rho, &axis, &axis);
        for (i, p) in w.p.iter().enumerate() {
            for (j, x) in w.x.iter().enumerate() {
                t.push(with(pt, row![name, x, p, w.values[i][j]]));
            }
        }
    }
    Ok(PointOut { tables: vec![t], record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "states": named.len()}) })
}

fn mandel(pt: &Point) -> Result<PointOut, Error> {
    let rho = liouvillian::steady_state(&pt.params)?;
    let (nbar, q) = (mean_photon_number(&rho), mandel_q(&rho)?);
    let mut t = Table::new("mandel", cols!["mean_n", "q"]);
    t.push(with(pt, row![nbar, q]));
    Ok(PointOut { tables: vec![t], record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "mean_n": nbar, "q": q}) })
}

fn quadrature(pt: &Point) -> Result<PointOut, Error> {
    let spec = liouvillian::spectrum(&pt.params, pt.n + 1)?;
    let man = extreme_metastable_states(&spec, pt.n)?;
    let fit = fit_lobe_params(&liouvillian::steady_state(&pt.params)?, &pt.params)?;
    let mut t = Table::new("quadrature", cols!["state", "variance", "angle", "db", "fit_r", "fit_s", "fit_fidelity"]);
    let mut vars = Vec::new();
    for (k, mu) in man.states.iter().enumerate() {
        let (v, angle) = min_quadrature_variance(mu);
        vars.push(v);
        t.push(with(pt, row![k, v, angle, variance_to_db(v)?, fit.lobes.r, fit.lobes.s, fit.fidelity]));
    }
    let mean = vars.iter().sum::<f64>() / vars.len() as f64;
    Ok(PointOut {
        tables: vec![t],
        record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "min_variance": mean, "fit_fidelity": fit.fidelity}),
    })
}

fn bitflip(cfg: &ExperimentConfig, pt: &Point) -> Result<PointOut, Error> {
    let bf = bit_flip_time(&pt.params, cfg.lobe)?;
    let mut t = Table::new("bitflip", cols!["tau2", "t_bf", "std_error", "r2", "model", "component"]);
    t.push(with(pt, row![bf.tau2, bf.fit.value, bf.fit.std_error, bf.fit.r2, json!(bf.fit.model).as_str().unwrap_or(""), bf.component]));
    let mut s = Table::new("bitflip_series", cols!["t", "signal"]);
    for (time, v) in &bf.series {
        s.push(with(pt, row![time, v]));
    }
    Ok(PointOut {
        tables: vec![t, s],
        record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "t_bf": bf.fit.value, "tau2": bf.tau2}),
    })
}

fn phaseflip(cfg: &ExperimentConfig, pt: &Point) -> Result<PointOut, Error> {
    let pf = phase_flip_rate(&pt.params, cfg.mu)?;
    let mut t = Table::new("phaseflip", cols!["gamma_pf", "std_error", "r2"]);
    t.push(with(pt, row![pf.fit.value, pf.fit.std_error, pf.fit.r2]));
    let mut s = Table::new("phaseflip_series", cols!["t", "population"]);
    for (time, v) in &pf.series {
        s.push(with(pt, row![time, v]));
    }
    Ok(PointOut {
        tables: vec![t, s],
        record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "gamma_pf": pf.fit.value}),
    })
}

fn qam_point(cfg: &ExperimentConfig, pt: &Point) -> Result<PointOut, Error> {
    let run = qam::run_experiment(&pt.params, cfg.realizations, cfg.seed)?;
    let mut t = Table::new(
        "qam_outcomes",
        cols!["index", "seed", "beta_re", "beta_im", "zeta_re", "zeta_im", "target_lobe", "probability", "opening_weight", "jumps"],
    );
    for o in &run.outcomes {
        t.push(with(
            pt,
            row![o.index, o.seed, o.beta.re, o.beta.im, o.zeta.re, o.zeta.im, o.target, o.probability, o.opening_weight, o.jumps],
        ));
    }
    let window = run.outcomes[0].window;
    Ok(PointOut {
        tables: vec![t],
        record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "n_ss": run.n_ss, "window": window,
                       "summary": run.summary, "povm_min_eigenvalue": run.povm_min_eigenvalue,
                       "povm_positive": run.povm_positive, "random_guess": 1.0 / pt.n as f64}),
    })
}

fn meanfield_point(pt: &Point) -> Result<PointOut, Error> {
    let mut t = Table::new("meanfield", cols!["r", "theta", "stable", "jac1", "jac2"]);
    let fps = meanfield::fixed_points(&pt.params)?;
    for f in &fps {
        t.push(with(pt, row![f.r, f.theta, f.stable, f.jacobian[0], f.jacobian[1]]));
    }
    let r = fps.first().map(|f| f.r);
    Ok(PointOut { tables: vec![t], record: json!({"n": pt.n, "m": pt.m, "target": pt.target, "r": r}) })
}

fn ep_scan(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    if cfg.n_ss.is_empty() {
        return Err(CliError::Config("ep-scan sweeps target photon numbers (n_ss)".into()));
    }
    let mut t = Table::new(
        "ep_scan",
        &["n", "m", "target", "eta", "dim", "l2_re", "l2_im", "l3_re", "l3_im", "l4_re", "l4_im", "conjugate_pair", "all_real"],
    );
    let mut records = Vec::new();
    let mut points = Vec::new();
    for &(n, m) in &cfg.pairs {
        let p = cfg.base_params(n, m, 1.0, cfg.dim.unwrap_or(2));
        let rows = exceptional_point_scan(&p, &cfg.n_ss, cfg.dim)?;
        for r in &rows {
            let [a, b, c] = r.lambdas;
            t.push(row![n, m, r.n_ss, r.eta, r.dim, a.re, a.im, b.re, b.im, c.re, c.im, r.conjugate_pair, r.all_real]);
            points.push(Point { n, m, target: r.n_ss, params: ModelParams { eta: r.eta, dim: r.dim, ..p } });
        }
        records.push(json!({"n": n, "m": m, "exceptional_point": exceptional_point(&rows)}));
    }
    Ok(Outcome { tables: vec![t], summary: json!({ "fits": records }), points })
}

/// Per-pair fits across the sweep.
fn pair_fits(cfg: &ExperimentConfig, records: &[Value]) -> Vec<Value> {
    let series = |n: usize, m: usize, key: &str| -> Vec<(f64, f64)> {
        records
            .iter()
            .filter(|r| r["n"] == n && r["m"] == m)
            .filter_map(|r| Some((r["target"].as_f64()?, r[key].as_f64()?)))
            .collect()
    };
    let fit_json = |res: Result<Value, Error>| res.unwrap_or_else(|e| json!({"error": e.to_string()}));
    cfg.pairs
        .iter()
        .filter_map(|&(n, m)| {
            let fit = match cfg.kind {
                Kind::Spectrum if !cfg.n_ss.is_empty() => fit_json(
                    metastability::scale_factor_fit(&series(n, m, "gap_ratio")).map(|f| json!({"scale_factor": f})),
                ),
                Kind::Bitflip if !cfg.n_ss.is_empty() => {
                    fit_json(bit_flip_scale_factor(&series(n, m, "t_bf")).map(|f| json!({"scale_factor": f})))
                }
                Kind::Phaseflip if !cfg.n_ss.is_empty() => {
                    fit_json(phase_flip_slope(&series(n, m, "gamma_pf")).map(|f| json!({"slope": f})))
                }
                Kind::Quadrature => {
                    let v = series(n, m, "min_variance");
                    let mean = v.iter().map(|x| x.1).sum::<f64>() / v.len().max(1) as f64;
                    json!({"mean_min_variance": mean})
                }
                _ => return None,
            };
            Some(json!({"n": n, "m": m, "fit": fit}))
        })
        .collect()
}
