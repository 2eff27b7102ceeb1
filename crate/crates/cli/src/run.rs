use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rdmc::bandwidth::{select_bandwidth, BandwidthSearch};
use rdmc::data::{load_dataset, write_dataset, Dataset, Schema, TargetOutcome};
use rdmc::inference::{dr_variance, effect_curve};
use rdmc::io::{bandwidth_table, curve_from_table, curve_table, effect_table, threshold_table, write_bench_report, Table};
use rdmc::llr::{estimate_curve, linspace, Curve, MethodKind, Nuisance, PointFailure};
use rdmc::nuisance::{fit_outcome, fit_propensity, FeatureSpec, OutcomeFit, PropensityFit};
use rdmc::simulation::{generate, run_benchmark, BenchOptions};
use rdmc::threshold::{optimize_threshold, CostSpec};
use rdmc::Error;
use serde::Serialize;

use crate::manifest::{BandwidthChoice, CommandSpec, CostSource, FeatureChoice, RunManifest};
use crate::{EXIT_COMPUTE, EXIT_OK};

/// Files written by one run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Artifacts {
    pub tables: Vec<PathBuf>,
    pub diagnostics: Option<PathBuf>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    manifest: &'a RunManifest,
    manifest_sha256: String,
    created_unix: u64,
    outputs: &'a [PathBuf],
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    command: &'static str,
    manifest_sha256: String,
    error: Option<String>,
    point_failures: Vec<(String, &'a [PointFailure])>,
}

const CURVE_UNITS: &str = "x: running variable; ghat: outcome; slope: outcome per unit x; variance: outcome squared";

struct Context<'a> {
    manifest: &'a RunManifest,
    hash: String,
    artifacts: Artifacts,
}

impl Context<'_> {
    fn title(&self) -> String {
        format!("rdmc {}", self.manifest.name())
    }

    fn write_table(&mut self, table: Table, units: &str, path: PathBuf) -> rdmc::Result<()> {
        let table = table.with_meta("units", units).with_meta("manifest", &self.hash);
        table.write(BufWriter::new(create(&path)?))?;
        self.artifacts.tables.push(path);
        Ok(())
    }
}

fn create(path: &Path) -> rdmc::Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn open(path: &Path) -> rdmc::Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `fit.csv` -> `fit_g0.csv`.
fn per_target(path: &Path, target: TargetOutcome) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{target}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{target}"),
    };
    path.with_file_name(name)
}

fn read_data(path: &Path, covariates: &Option<Vec<String>>, m: &RunManifest) -> rdmc::Result<Dataset> {
    let file = open(path)?;
    let header = BufReader::new(file)
        .lines()
        .map_while(|l| l.ok())
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::Schema(format!("{} has no header row", path.display())))?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let covariates = covariates.clone().unwrap_or_else(|| {
        columns
            .iter()
            .filter(|c| !["x", "d", "z", "y"].contains(&c.as_str()))
            .cloned()
            .collect()
    });
    let refs: Vec<&str> = covariates.iter().map(String::as_str).collect();
    let mut schema = Schema::new("x", "d", "y", &refs);
    if columns.iter().any(|c| c == "z") {
        schema = schema.with_z("z");
    }
    load_dataset(path, &schema, m.thresholds)
}

fn nuisance_fits(
    ds: &Dataset,
    target: TargetOutcome,
    kind: MethodKind,
    propensity: &FeatureChoice,
    outcome: &FeatureChoice,
) -> rdmc::Result<(Option<PropensityFit>, Option<OutcomeFit>)> {
    let m = ds.dim();
    let p = match kind {
        MethodKind::Naive => None,
        _ => Some(fit_propensity(ds, &propensity.resolve(FeatureSpec::full_propensity(m))?)?),
    };
    let o = match kind {
        MethodKind::Dr => Some(fit_outcome(ds, target, &outcome.resolve(FeatureSpec::full_outcome(m))?)?),
        _ => None,
    };
    Ok((p, o))
}

fn read_curve(path: &Path) -> rdmc::Result<Curve> {
    curve_from_table(&Table::read(BufReader::new(open(path)?))?)
}

fn run(ctx: &mut Context<'_>, failures: &mut Vec<(String, Vec<PointFailure>)>) -> rdmc::Result<()> {
    let m = ctx.manifest;
    let t = m.thresholds;
    let grid = linspace(t.c0, t.c1, m.grid_points);
    match &m.command {
        CommandSpec::Simulate { config } => {
            let ds = generate(config, m.seed)?;
            let comment = format!(
                "{} seed={} n={} units=x: running variable, y: outcome manifest={}",
                ctx.title(),
                m.seed,
                config.n,
                ctx.hash
            );
            write_dataset(&ds, BufWriter::new(create(&m.output)?), Some(&comment))?;
            ctx.artifacts.tables.push(m.output.clone());
        }
        CommandSpec::Fit {
            data,
            covariates,
            targets,
            method,
            bandwidth,
            propensity_spec,
            outcome_spec,
            density,
            variance,
        } => {
            let ds = read_data(data, covariates, m)?;
            let xs: Vec<f64> = ds.units().iter().map(|u| u.x).collect();
            let density = if *variance { Some(density.build(Some(&xs))?) } else { None };
            for &target in targets {
                let (p, o) = nuisance_fits(&ds, target, method.kind, propensity_spec, outcome_spec)?;
                let nu = Nuisance::new(p.as_ref(), o.as_ref());
                let h = match *bandwidth {
                    BandwidthChoice::Fixed { h } => h,
                    BandwidthChoice::Lscv { refine } => {
                        let mut search = BandwidthSearch::default_for(&ds, target)?;
                        search.refine = refine;
                        select_bandwidth(&ds, target, *method, &search, nu, m.kernel)?.h
                    }
                };
                let mut curve = estimate_curve(&ds, target, *method, h, nu, &grid, m.kernel)?;
                if let (Some(f), Some(p), Some(o)) = (&density, &p, &o) {
                    let v = dr_variance(&ds, target, &curve, p, o, m.kernel, h, f.as_ref())?;
                    curve.failures.extend(v.failures);
                    curve.variance = Some(v.values);
                }
                if !curve.failures.is_empty() {
                    failures.push((target.to_string(), curve.failures.clone()));
                }
                if curve.values.iter().all(Option::is_none) {
                    return Err(Error::BandwidthInfeasible { h });
                }
                let path = if targets.len() == 1 {
                    m.output.clone()
                } else {
                    per_target(&m.output, target)
                };
                let table = curve_table(&curve, &ctx.title()).with_meta("density", density_label(variance, &m.command));
                ctx.write_table(table, CURVE_UNITS, path)?;
            }
        }
        CommandSpec::Bandwidth {
            data,
            covariates,
            target,
            method,
            h_grid,
            refine,
            propensity_spec,
            outcome_spec,
        } => {
            let ds = read_data(data, covariates, m)?;
            let (p, o) = nuisance_fits(&ds, *target, method.kind, propensity_spec, outcome_spec)?;
            let search = match h_grid {
                Some(g) => BandwidthSearch::new(g.clone(), *refine)?,
                None => {
                    let mut s = BandwidthSearch::default_for(&ds, *target)?;
                    s.refine = *refine;
                    s
                }
            };
            let sel = select_bandwidth(&ds, *target, *method, &search, Nuisance::new(p.as_ref(), o.as_ref()), m.kernel)?;
            let table = bandwidth_table(&sel, &ctx.title())
                .with_meta("target", target)
                .with_meta("method", method.label());
            ctx.write_table(table, "h: running variable; score: outcome squared", m.output.clone())?;
        }
        CommandSpec::Effect { g0, g1, level } => {
            let (c0, c1) = (read_curve(g0)?.interior(), read_curve(g1)?.interior());
            let mut effect = effect_curve(&c0, &c1)?;
            if effect.variance.is_some() {
                effect = effect.with_band(*level)?;
            }
            let table = effect_table(&effect, &ctx.title());
            ctx.write_table(table, "x: running variable; tau, se, lo, hi: outcome", m.output.clone())?;
        }
        CommandSpec::Threshold {
            g0,
            g1,
            cost,
            density,
            data,
            resolution,
        } => {
            let (c0, c1) = (read_curve(g0)?, read_curve(g1)?);
            let xs = match data {
                Some(path) => Some(
                    read_data(path, &None, m)?
                        .units()
                        .iter()
                        .map(|u| u.x)
                        .collect::<Vec<f64>>(),
                ),
                None => None,
            };
            let f = density.build(xs.as_deref())?;
            let cost = match cost {
                CostSource::Constant { value } => CostSpec::constant(*value),
                CostSource::Table { path } => {
                    let table = Table::read(BufReader::new(open(path)?))?;
                    let column = |name: &str| -> rdmc::Result<Vec<f64>> {
                        table
                            .column(name)
                            .ok_or_else(|| Error::Schema(format!("{} lacks column `{name}`", path.display())))?
                            .into_iter()
                            .map(|v| v.ok_or_else(|| Error::Schema(format!("empty `{name}` cell in {}", path.display()))))
                            .collect()
                    };
                    CostSpec::tabulated(column("x")?, column("mc")?)?
                }
            };
            let result = optimize_threshold(&c0, &c1, f.as_ref(), &cost, *resolution)?;
            let table = threshold_table(&result, &ctx.title()).with_meta("density", density);
            ctx.write_table(table, "c: running variable; objective: outcome per unit", m.output.clone())?;
        }
        CommandSpec::Bench {
            config,
            replications,
            cells,
            bandwidth,
        } => {
            let options = BenchOptions {
                kernel: m.kernel,
                grid_points: m.grid_points,
                fixed_bandwidth: *bandwidth,
            };
            let report = run_benchmark(config, *replications, m.seed, &cells.cells(), &options)?;
            for r in report.records.iter().filter(|r| !r.failures.is_empty()) {
                let as_points = r
                    .failures
                    .iter()
                    .map(|msg| PointFailure {
                        x: f64::NAN,
                        message: msg.clone(),
                    })
                    .collect();
                failures.push((format!("{} {}", r.label, r.target), as_points));
            }
            let meta = vec![
                ("units".to_string(), "mise: outcome squared; mean_h: running variable".to_string()),
                ("manifest".to_string(), ctx.hash.clone()),
            ];
            write_bench_report(&report, &ctx.title(), &meta, BufWriter::new(create(&m.output)?))?;
            ctx.artifacts.tables.push(m.output.clone());
        }
    }
    Ok(())
}

fn density_label(variance: &bool, command: &CommandSpec) -> String {
    match command {
        CommandSpec::Fit { density, .. } if *variance => density.to_string(),
        _ => "none".into(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> rdmc::Result<()> {
    let file = create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e.into(),
    })
}

/// Runs the manifest, writing its tables and the manifest sidecar. Returns
/// the process exit code and the files written.
pub fn execute_with_artifacts(manifest: &RunManifest) -> (i32, Artifacts) {
    let mut ctx = Context {
        manifest,
        hash: manifest.hash(),
        artifacts: Artifacts::default(),
    };
    let mut failures = Vec::new();
    let outcome = run(&mut ctx, &mut failures);

    if outcome.is_err() || !failures.is_empty() {
        let path = sibling(&manifest.output, ".diagnostics.json");
        let diag = Diagnostics {
            command: manifest.name(),
            manifest_sha256: ctx.hash.clone(),
            error: outcome.as_ref().err().map(ToString::to_string),
            point_failures: failures.iter().map(|(k, v)| (k.clone(), v.as_slice())).collect(),
        };
        if write_json(&path, &diag).is_ok() {
            ctx.artifacts.diagnostics = Some(path);
        }
    }
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        return (EXIT_COMPUTE, ctx.artifacts);
    }
    for (what, f) in &failures {
        eprintln!("warning: {what}: {} grid point(s) without an estimate", f.len());
    }

    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let sidecar = Sidecar {
        manifest,
        manifest_sha256: ctx.hash.clone(),
        created_unix,
        outputs: &ctx.artifacts.tables,
    };
    if let Err(e) = write_json(&sibling(&manifest.output, ".manifest.json"), &sidecar) {
        eprintln!("error: {e}");
        return (EXIT_COMPUTE, ctx.artifacts);
    }
    (EXIT_OK, ctx.artifacts)
}

pub fn execute(manifest: &RunManifest) -> i32 {
    execute_with_artifacts(manifest).0
}
