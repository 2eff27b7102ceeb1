//! Delimited tables with a `# key=value` comment header.
//!
//! ```text
//! # rdmc fit
//! # target=g0
//! # h=0.84
//! x,ghat,slope,variance
//! 2,231.4,51.9,
//! ```
//!
//! Absent values are written as empty cells.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use crate::bandwidth::BandwidthSelection;
use crate::data::{TargetOutcome, Thresholds};
use crate::error::{Error, Result};
use crate::inference::EffectCurve;
use crate::kernels::KernelSpec;
use crate::llr::{Curve, EstimatorMethod, PointFailure};
use crate::simulation::BenchmarkReport;
use crate::threshold::ThresholdResult;

/// A numeric table with a title line and ordered metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub title: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(title: &str, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.rows.iter().map(|row| {
            row.iter()
                .map(|v| v.map(|v| v.to_string()).unwrap_or_default())
                .collect()
        });
        write_text(w, &self.title, &self.meta, &self.columns, rows)
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut table = Table::default();
        let mut header_seen = false;
        for (lineno, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| Error::Io {
                path: "<table>".into(),
                source: e,
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                let c = c.trim();
                match c.split_once('=') {
                    Some((k, v)) if !k.contains(' ') => table.meta.push((k.into(), v.into())),
                    _ if table.title.is_empty() => table.title = c.into(),
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                table.columns = line.split(',').map(|s| s.trim().to_string()).collect();
                header_seen = true;
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != table.columns.len() {
                return Err(Error::Parse {
                    row: lineno,
                    column: String::new(),
                    message: format!("expected {} cells, found {}", table.columns.len(), cells.len()),
                });
            }
            let row = cells
                .iter()
                .zip(&table.columns)
                .map(|(c, name)| {
                    let c = c.trim();
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                            row: lineno,
                            column: name.clone(),
                            message: format!("`{c}` is not a number"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            table.rows.push(row);
        }
        if !header_seen {
            return Err(Error::Schema("table has no column header".into()));
        }
        Ok(table)
    }
}

fn write_text<W: Write>(
    mut w: W,
    title: &str,
    meta: &[(String, String)],
    columns: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: "<table>".into(),
        source: e,
    };
    writeln!(w, "# {title}").map_err(io)?;
    for (k, v) in meta {
        writeln!(w, "# {k}={v}").map_err(io)?;
    }
    writeln!(w, "{}", columns.join(",")).map_err(io)?;
    for cells in rows {
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn curve_table(curve: &Curve, title: &str) -> Table {
    let mut t = Table::new(title, &["x", "ghat", "slope", "variance"])
        .with_meta("target", curve.target)
        .with_meta("method", curve.method.label())
        .with_meta("h", curve.bandwidth)
        .with_meta("kernel", curve.kernel)
        .with_meta("c0", curve.thresholds.c0)
        .with_meta("c1", curve.thresholds.c1)
        .with_meta("failed_points", curve.failures.len());
    for k in 0..curve.len() {
        let var = curve.variance.as_ref().and_then(|v| v[k]);
        t.rows.push(vec![Some(curve.grid[k]), curve.values[k], curve.slopes[k], var]);
    }
    t
}

fn required<'a>(meta: &'a BTreeMap<&str, &str>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .copied()
        .ok_or_else(|| Error::Schema(format!("curve table lacks `{key}` in its header")))
}

fn number(meta: &BTreeMap<&str, &str>, key: &str) -> Result<f64> {
    required(meta, key)?
        .parse()
        .map_err(|_| Error::Schema(format!("header value `{key}` is not a number")))
}

/// Rebuilds a curve written by [`curve_table`].
pub fn curve_from_table(table: &Table) -> Result<Curve> {
    let meta: BTreeMap<&str, &str> = table
        .meta
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let target = match required(&meta, "target")? {
        "g0" => TargetOutcome::Y0,
        "g1" => TargetOutcome::Y1,
        other => return Err(Error::Schema(format!("unknown target `{other}`"))),
    };
    let method: EstimatorMethod = required(&meta, "method")?.parse()?;
    let kernel: KernelSpec = required(&meta, "kernel")?.parse()?;
    let thresholds = Thresholds::new(number(&meta, "c0")?, number(&meta, "c1")?)?;
    let bandwidth = number(&meta, "h")?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::Schema(format!("curve table lacks column `{name}`")))
    };
    let grid = col("x")?
        .into_iter()
        .map(|x| x.ok_or_else(|| Error::Schema("empty grid cell".into())))
        .collect::<Result<Vec<f64>>>()?;
    let values = col("ghat")?;
    let slopes = col("slope")?;
    let variance = table.column("variance").filter(|v| v.iter().any(Option::is_some));
    let failures = grid
        .iter()
        .zip(&values)
        .filter(|(_, v)| v.is_none())
        .map(|(&x, _)| PointFailure {
            x,
            message: "absent in input table".into(),
        })
        .collect();
    Ok(Curve {
        grid,
        values,
        slopes,
        variance,
        target,
        bandwidth,
        method,
        kernel,
        thresholds,
        failures,
    })
}

pub fn effect_table(effect: &EffectCurve, title: &str) -> Table {
    let mut t = Table::new(title, &["x", "tau", "se", "lo", "hi"]);
    if let Some(level) = effect.level {
        t = t.with_meta("level", level);
    }
    let se = effect.standard_errors();
    for k in 0..effect.grid.len() {
        let pick = |v: &Option<Vec<Option<f64>>>| v.as_ref().and_then(|v| v[k]);
        t.rows.push(vec![
            Some(effect.grid[k]),
            effect.tau[k],
            pick(&se),
            pick(&effect.ci_lower),
            pick(&effect.ci_upper),
        ]);
    }
    t
}

pub fn threshold_table(result: &ThresholdResult, title: &str) -> Table {
    let mut t = Table::new(title, &["c", "objective"])
        .with_meta("c_opt", result.c_opt)
        .with_meta("objective_at_opt", result.objective_at_opt)
        .with_meta("boundary", result.boundary_flag.label());
    t.rows = result
        .objective_profile
        .iter()
        .map(|&(c, v)| vec![Some(c), Some(v)])
        .collect();
    t
}

pub fn bandwidth_table(selection: &BandwidthSelection, title: &str) -> Table {
    let mut t = Table::new(title, &["h", "score", "n_excluded"])
        .with_meta("h_selected", selection.h)
        .with_meta("score_selected", selection.score);
    t.rows = selection
        .profile
        .iter()
        .map(|e| vec![Some(e.h), e.score, Some(e.n_excluded as f64)])
        .collect();
    t
}

/// Writes one row per benchmark cell. Labels are text, so this does not go
/// through [`Table`].
pub fn write_bench_report<W: Write>(
    report: &BenchmarkReport,
    title: &str,
    meta: &[(String, String)],
    w: W,
) -> Result<()> {
    let columns: Vec<String> = [
        "cell", "target", "method", "nuisance", "mise", "ise_sd", "mean_h", "replications", "failed", "degraded",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut all_meta = vec![
        ("replications".to_string(), report.replications.to_string()),
        ("base_seed".to_string(), report.base_seed.to_string()),
        ("n".to_string(), report.config.n.to_string()),
        ("degraded".to_string(), report.degraded.to_string()),
    ];
    all_meta.extend(meta.iter().cloned());
    let rows = report.records.iter().map(|r| {
        vec![
            r.label.clone(),
            r.target.to_string(),
            r.method.clone(),
            r.nuisance.clone(),
            r.mise.to_string(),
            r.ise_sd.map(|v| v.to_string()).unwrap_or_default(),
            r.mean_bandwidth.to_string(),
            r.replications.to_string(),
            r.failed.to_string(),
            r.degraded.to_string(),
        ]
    });
    write_text(w, title, &all_meta, &columns, rows)
}
