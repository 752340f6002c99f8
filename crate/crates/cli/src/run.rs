//! Experiment drivers and their on-disk artifacts.
//!
//! Every run writes `summary.json` into the output directory. Ensemble runs
//! also write one CSV per arm with a row per path, from which every number
//! in the summary can be recomputed.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};
use spde_lab::coefficients::{CoefficientSet, InitialCondition};
use spde_lab::grid::{sample_noise, Grid};
use spde_lab::law::{
    compare_levels, run_direct, run_reweighted, tau_coverage, ArmSpec, CompareOptions, EnsembleResult,
};
use spde_lab::sde::{simulate_oracle, summarize_oracle};
use spde_lab::solver::{simulate_path, weak_form_residual, SchemeConfig};
use spde_lab::stats::mean_and_stderr;
use spde_lab::LabError;

use crate::config::{Experiment, RunConfig};
use crate::error::CliError;

/// Accepted band of `Var W(T, L) / (T L)` for the noise self-test.
pub const NOISE_VARIANCE_BAND: (f64, f64) = (0.95, 1.05);

const LAW_DISCLAIMER: &str = "Equality in law is probed through a finite battery of terminal-time \
functionals with a weighted KS test on each; agreement on the battery does not establish \
equality of the laws on path space.";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Value,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs `config.experiment` on the current rayon pool.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    config.validate()?;
    let started = Instant::now();
    let mut art = Artifacts::new(Path::new(&config.output_dir))?;
    let mut summary = match config.experiment {
        Experiment::NoiseSelftest => noise_selftest(config, &mut art)?,
        Experiment::ResidualCheck => residual_check(config, &mut art)?,
        Experiment::SdeOracle => sde_oracle(config, &mut art)?,
        Experiment::Simulate => simulate(config, &mut art)?,
        Experiment::CompareLaws => compare_laws(config, &mut art)?,
    };
    let obj = summary.as_object_mut().expect("summaries are objects");
    obj.insert("experiment".into(), json!(config.experiment.name()));
    obj.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    obj.insert("master_seed".into(), json!(config.master_seed));
    obj.insert(
        "wall_clock_seconds".into(),
        json!(started.elapsed().as_secs_f64()),
    );
    art.write(
        "summary.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(RunOutcome {
        summary,
        out_dir: art.dir,
        files: art.files,
    })
}

fn noise_selftest(config: &RunConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let grid = config.grid()?;
    let totals: Vec<f64> = (0..config.noise_samples as u64)
        .into_par_iter()
        .map(|p| sample_noise(&grid, config.master_seed, p).sheet_total())
        .collect();
    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let variance = totals.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ratio = variance / (grid.t_final() * grid.length());

    let mut csv = String::from("path_index,sheet_total\n");
    for (p, w) in totals.iter().enumerate() {
        writeln!(csv, "{p},{w}").unwrap();
    }
    art.write("noise_samples.csv", &csv)?;
    Ok(json!({
        "samples": totals.len(),
        "sheet_mean": mean,
        "sheet_variance": variance,
        "variance_ratio": ratio,
        "accepted_band": [NOISE_VARIANCE_BAND.0, NOISE_VARIANCE_BAND.1],
        "within_band": (NOISE_VARIANCE_BAND.0..=NOISE_VARIANCE_BAND.1).contains(&ratio),
    }))
}

/// Weak-form residual at mode 1 of one path.
fn path_residual(
    coeffs: &CoefficientSet,
    grid: &Grid,
    scheme: &SchemeConfig,
    seed: u64,
    path_index: u64,
) -> Result<f64, LabError> {
    let noise = sample_noise(grid, seed, path_index);
    let path = simulate_path(coeffs, true, grid, &noise, scheme)?;
    weak_form_residual(&path, &noise, coeffs, true, grid, 1)
}

fn residual_check(config: &RunConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let coarse = config.grid()?;
    let fine = coarse.refined(4, 2).map_err(|e| CliError::Config {
        key: "nt".into(),
        message: format!("refined grid is invalid: {e}"),
    })?;
    let scheme = config.scheme();
    let eigen = CoefficientSet::constant(
        0.0,
        0.0,
        0.0,
        InitialCondition::Cosine {
            amplitude: 1.0,
            mode: 1,
            length: coarse.length(),
        },
    )?;
    let additive = CoefficientSet::constant(1.0, 0.0, 0.0, InitialCondition::Constant(0.0))?;

    let mut csv = String::from("case,nt,nx,path_index,residual\n");
    let mut eigen_res = Vec::new();
    for g in [&coarse, &fine] {
        let r = path_residual(&eigen, g, &scheme, config.master_seed, 0)?;
        writeln!(csv, "eigenfunction,{},{},0,{r}", g.nt(), g.nx()).unwrap();
        eigen_res.push(r);
    }
    let mut rms = Vec::new();
    for g in [&coarse, &fine] {
        let res: Vec<f64> = (0..config.residual_paths as u64)
            .into_par_iter()
            .map(|p| path_residual(&additive, g, &scheme, config.master_seed, p))
            .collect::<Result<_, _>>()?;
        for (p, r) in res.iter().enumerate() {
            writeln!(csv, "additive,{},{},{p},{r}", g.nt(), g.nx()).unwrap();
        }
        rms.push((res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt());
    }
    art.write("residuals.csv", &csv)?;
    Ok(json!({
        "mode": 1,
        "coarse_grid": {"nt": coarse.nt(), "nx": coarse.nx()},
        "fine_grid": {"nt": fine.nt(), "nx": fine.nx()},
        "eigenfunction": {
            "coarse": eigen_res[0],
            "fine": eigen_res[1],
            "reduction": eigen_res[0] / eigen_res[1],
        },
        "additive": {
            "paths": config.residual_paths,
            "coarse_rms": rms[0],
            "fine_rms": rms[1],
        },
    }))
}

fn sde_oracle(config: &RunConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let oracle = config.oracle();
    let samples = simulate_oracle(&oracle)?;
    let report = summarize_oracle(&oracle, &samples)?;

    let mut direct = String::from("path_index,blow_up,terminal\n");
    for (p, v) in samples.direct_terminal.iter().enumerate() {
        writeln!(direct, "{p},0,{v}").unwrap();
    }
    art.write("ensemble_direct.csv", &direct)?;
    let mut rew = String::from("path_index,blow_up,terminal,log_xi\n");
    for (p, (v, w)) in samples
        .reweighted_terminal
        .iter()
        .zip(&samples.reweighted_log_xi)
        .enumerate()
    {
        writeln!(rew, "{p},0,{v},{w}").unwrap();
    }
    art.write("ensemble_reweighted.csv", &rew)?;
    Ok(json!({ "report": report }))
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

/// One row per path: identity, functionals, stopped log-weights, `int R^2`
/// and the `tau_n = T` flags.
pub fn ensemble_csv(ens: &EnsembleResult) -> String {
    let mut out = String::from("path_index,blow_up");
    for f in &ens.functionals {
        write!(out, ",{}", f.name()).unwrap();
    }
    for n in &ens.levels {
        write!(out, ",log_xi_n{n}").unwrap();
    }
    out.push_str(",r2_terminal");
    for n in &ens.levels {
        write!(out, ",tau_n{n}").unwrap();
    }
    out.push('\n');
    for r in &ens.records {
        write!(out, "{},{}", r.path_index, flag(r.blow_up)).unwrap();
        for v in r.values.iter().chain(&r.log_xi).chain([&r.r2_terminal]) {
            write!(out, ",{v}").unwrap();
        }
        for &t in &r.tau_terminal {
            write!(out, ",{}", flag(t)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn coverage_json(direct: Option<&EnsembleResult>, reweighted: Option<&EnsembleResult>, levels: &[u32]) -> Value {
    let d = direct.map(|e| tau_coverage(e, levels));
    let r = reweighted.map(|e| tau_coverage(e, levels));
    levels
        .iter()
        .enumerate()
        .map(|(i, n)| {
            json!({
                "n": n,
                "direct": d.as_ref().map(|c| c[i].1),
                "reweighted": r.as_ref().map(|c| c[i].1),
            })
        })
        .collect()
}

fn export_paths(
    config: &RunConfig,
    coeffs: &CoefficientSet,
    include_d: bool,
    seed: u64,
    arm: &str,
    art: &mut Artifacts,
) -> Result<(), CliError> {
    let grid = config.grid()?;
    let scheme = config.scheme();
    for p in 0..config.export_path_count.min(config.paths) as u64 {
        let noise = sample_noise(&grid, seed, p);
        let path = match simulate_path(coeffs, include_d, &grid, &noise, &scheme) {
            Ok(path) => path,
            Err(LabError::BlowUp { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let name = format!("paths/{arm}_{p:05}.csv");
        let full = art.dir.join(&name);
        fs::create_dir_all(full.parent().unwrap()).map_err(|e| CliError::io(&full, e))?;
        let file = fs::File::create(&full).map_err(|e| CliError::io(&full, e))?;
        path.write_csv(&grid, BufWriter::new(file))
            .map_err(|e| CliError::io(&full, e))?;
        art.files.push(full);
    }
    Ok(())
}

fn simulate(config: &RunConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let grid = config.grid()?;
    let coeffs = config.coefficients()?;
    let scheme = config.scheme();
    let functionals = config.functionals();
    let spec = ArmSpec {
        coeffs: &coeffs,
        grid: &grid,
        scheme: &scheme,
        paths: config.paths,
        master_seed: config.direct_seed(),
        functionals: &functionals,
        levels: &config.levels,
    };
    let direct = run_direct(&spec)?;
    art.write("ensemble_direct.csv", &ensemble_csv(&direct))?;
    if config.export_paths {
        export_paths(config, &coeffs, true, config.direct_seed(), "direct", art)?;
    }
    let means: Vec<Value> = functionals
        .iter()
        .enumerate()
        .map(|(c, f)| {
            let v: Vec<f64> = direct.accepted().map(|r| r.values[c]).collect();
            let (mean, stderr) = mean_and_stderr(&v);
            json!({"functional": f.name(), "mean": mean, "stderr": stderr})
        })
        .collect();
    Ok(json!({
        "seeds": {"direct": config.direct_seed()},
        "coefficients": {"preset": coeffs.preset(), "notes": coeffs.modeling_notes()},
        "paths": config.paths,
        "blow_ups": {"direct": direct.blow_ups},
        "functionals": means,
        "coverage": coverage_json(Some(&direct), None, &config.levels),
    }))
}

fn compare_laws(config: &RunConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let grid = config.grid()?;
    let coeffs = config.coefficients()?;
    let reweighting = config.reweighting_coefficients()?;
    let scheme = config.scheme();
    let functionals = config.functionals();
    let spec = |coeffs, seed| ArmSpec {
        coeffs,
        grid: &grid,
        scheme: &scheme,
        paths: config.paths,
        master_seed: seed,
        functionals: &functionals,
        levels: &config.levels,
    };
    let direct = run_direct(&spec(&coeffs, config.direct_seed()))?;
    let reweighted = run_reweighted(&spec(&reweighting, config.resolved_reweighted_seed()))?;
    art.write("ensemble_direct.csv", &ensemble_csv(&direct))?;
    art.write("ensemble_reweighted.csv", &ensemble_csv(&reweighted))?;
    if config.export_paths {
        export_paths(config, &coeffs, true, config.direct_seed(), "direct", art)?;
        export_paths(config, &reweighting, false, config.resolved_reweighted_seed(), "reweighted", art)?;
    }

    let options = CompareOptions {
        bootstrap_resamples: config.bootstrap_resamples,
        report_seed: config.resolved_report_seed(),
    };
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let mut last_error = None;
    for (&n, result) in config
        .levels
        .iter()
        .zip(compare_levels(&direct, &reweighted, &config.levels, &options)?)
    {
        match result {
            Ok(r) => reports.push(r),
            Err(e @ LabError::InsufficientCoverage { .. }) => {
                skipped.push(json!({"n": n, "reason": e.to_string()}));
                last_error = Some(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let (true, Some(e)) = (reports.is_empty(), last_error) {
        return Err(e.into());
    }
    Ok(json!({
        "seeds": {
            "direct": config.direct_seed(),
            "reweighted": config.resolved_reweighted_seed(),
            "report": config.resolved_report_seed(),
        },
        "coefficients": {
            "preset": coeffs.preset(),
            "notes": coeffs.modeling_notes(),
            "reweighting_perturbation": format!("{:?}", reweighting.perturbation()),
        },
        "paths": config.paths,
        "functionals": functionals.iter().map(|f| f.name()).collect::<Vec<_>>(),
        "blow_ups": {"direct": direct.blow_ups, "reweighted": reweighted.blow_ups},
        "coverage": coverage_json(Some(&direct), Some(&reweighted), &config.levels),
        "reports": reports,
        "skipped_levels": skipped,
        "disclaimer": LAW_DISCLAIMER,
    }))
}
