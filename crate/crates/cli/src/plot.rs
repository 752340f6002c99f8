//! Tidy CSV series extracted from run summaries, for any plotting tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::CliError;

/// The three series derived from a set of summaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotSeries {
    /// `seed,arm,n,coverage`
    pub coverage: String,
    /// `seed,gamma,n,paths,ess`
    pub ess: String,
    /// `seed,paths,n,functional,z_score,ks_p_value`
    pub zscores: String,
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, CliError> {
    v.get(key)
        .ok_or_else(|| CliError::Schema(format!("missing field `{key}`")))
}

fn number(v: &Value, key: &str) -> Result<f64, CliError> {
    let x = field(v, key)?;
    if x.is_null() {
        return Ok(f64::NAN);
    }
    x.as_f64()
        .ok_or_else(|| CliError::Schema(format!("`{key}` is not a number")))
}

fn array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>, CliError> {
    field(v, key)?
        .as_array()
        .ok_or_else(|| CliError::Schema(format!("`{key}` is not an array")))
}

/// Builds the series; summaries without coverage or reports contribute no
/// rows, so every CSV always has its header.
pub fn plot_series(summaries: &[Value]) -> Result<PlotSeries, CliError> {
    let mut coverage = String::from("seed,arm,n,coverage\n");
    let mut ess = String::from("seed,gamma,n,paths,ess\n");
    let mut zscores = String::from("seed,paths,n,functional,z_score,ks_p_value\n");
    for s in summaries {
        field(s, "experiment")?
            .as_str()
            .ok_or_else(|| CliError::Schema("`experiment` is not a string".into()))?;
        let seed = field(s, "master_seed")?
            .as_u64()
            .ok_or_else(|| CliError::Schema("`master_seed` is not an integer".into()))?;
        let config = field(s, "config")?;
        let gamma = number(config, "gamma")?;
        let paths = number(config, "paths")?;
        if let Some(curve) = s.get("coverage") {
            let curve = curve
                .as_array()
                .ok_or_else(|| CliError::Schema("`coverage` is not an array".into()))?;
            for point in curve {
                let n = number(point, "n")?;
                for arm in ["direct", "reweighted"] {
                    if let Some(c) = point.get(arm).and_then(Value::as_f64) {
                        writeln!(coverage, "{seed},{arm},{n},{c}").unwrap();
                    }
                }
            }
        }
        if s.get("reports").is_some() {
            for report in array(s, "reports")? {
                let n = number(report, "level")?;
                writeln!(ess, "{seed},{gamma},{n},{paths},{}", number(report, "ess")?).unwrap();
                for f in array(report, "functionals")? {
                    let name = field(f, "functional")?
                        .as_str()
                        .ok_or_else(|| CliError::Schema("`functional` is not a string".into()))?;
                    writeln!(
                        zscores,
                        "{seed},{paths},{n},{name},{},{}",
                        number(f, "z_score")?,
                        number(f, "ks_p_value")?
                    )
                    .unwrap();
                }
            }
        }
    }
    Ok(PlotSeries {
        coverage,
        ess,
        zscores,
    })
}

/// Writes `coverage.csv`, `ess.csv` and `zscores.csv` into `out_dir`.
pub fn emit_plot_data(summaries: &[Value], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let series = plot_series(summaries)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, body) in [
        ("coverage.csv", &series.coverage),
        ("ess.csv", &series.ess),
        ("zscores.csv", &series.zscores),
    ] {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
