//! Observational units and the two-threshold sharp design.
//!
//! A unit belongs to group `d` (false for the low-threshold group with cutoff
//! `c0`, true for the high-threshold group with cutoff `c1`) and is treated
//! exactly when `x > c_d`. Only the realized outcome `y` is stored; which
//! potential outcome it realizes follows from `z`.
//!
//! Identification of the counterfactual curves between the thresholds rests on
//! group membership being ignorable given `(x, w)`. That assumption is not
//! testable from the data and is not checked here.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cutoffs of the two groups, `c0 < c1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub c0: f64,
    pub c1: f64,
}

impl Thresholds {
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        if !(c0.is_finite() && c1.is_finite()) || c0 >= c1 {
            return Err(Error::Domain(format!(
                "thresholds must satisfy c0 < c1, got c0 = {c0}, c1 = {c1}"
            )));
        }
        Ok(Self { c0, c1 })
    }

    /// Cutoff of group `d`.
    pub fn cutoff(&self, d: bool) -> f64 {
        if d {
            self.c1
        } else {
            self.c0
        }
    }

    /// Sharp assignment rule `1(x > c_d)`; a unit exactly at its cutoff is untreated.
    pub fn assign(&self, d: bool, x: f64) -> bool {
        x > self.cutoff(d)
    }

    /// Whether `x` lies in the range used to estimate `g_j`:
    /// `x < c1` for `g_0`, `x > c0` for `g_1`.
    pub fn in_range(&self, target: TargetOutcome, x: f64) -> bool {
        match target {
            TargetOutcome::Y0 => x < self.c1,
            TargetOutcome::Y1 => x > self.c0,
        }
    }

    pub fn width(&self) -> f64 {
        self.c1 - self.c0
    }
}

/// Which counterfactual regression function is the estimand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum TargetOutcome {
    /// `g_0(x) = E[Y_0 | X = x]`
    Y0,
    /// `g_1(x) = E[Y_1 | X = x]`
    Y1,
}

impl TargetOutcome {
    pub const BOTH: [TargetOutcome; 2] = [TargetOutcome::Y0, TargetOutcome::Y1];

    pub fn index(self) -> u8 {
        match self {
            TargetOutcome::Y0 => 0,
            TargetOutcome::Y1 => 1,
        }
    }

    /// The realized outcome is `Y_j` exactly when the treatment flag equals `j`.
    pub fn observed_when(self, z: bool) -> bool {
        z == (self == TargetOutcome::Y1)
    }
}

impl From<TargetOutcome> for u8 {
    fn from(t: TargetOutcome) -> u8 {
        t.index()
    }
}

impl TryFrom<u8> for TargetOutcome {
    type Error = Error;

    fn try_from(j: u8) -> Result<Self> {
        match j {
            0 => Ok(TargetOutcome::Y0),
            1 => Ok(TargetOutcome::Y1),
            _ => Err(Error::Domain(format!("target outcome must be 0 or 1, got {j}"))),
        }
    }
}

impl fmt::Display for TargetOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.index())
    }
}

/// One observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub x: f64,
    pub w: Vec<f64>,
    pub d: bool,
    pub z: bool,
    pub y: f64,
}

impl UnitRecord {
    /// Builds a unit with the treatment flag derived from the sharp rule.
    pub fn derived(x: f64, w: Vec<f64>, d: bool, y: f64, thresholds: &Thresholds) -> Self {
        let z = thresholds.assign(d, x);
        Self { x, w, d, z, y }
    }

    pub fn region(&self) -> Region {
        Region::of(self.d, self.z)
    }
}

/// The four observability regions of the design, indexed by `(d, z)`.
///
/// | region | group | treated | observed outcome |
/// |--------|-------|---------|------------------|
/// | (a)    | 1     | no      | `Y_0`, `x <= c1` |
/// | (b)    | 0     | yes     | `Y_1`, `x > c0`  |
/// | (c)    | 0     | no      | `Y_0`, `x <= c0` |
/// | (d)    | 1     | yes     | `Y_1`, `x > c1`  |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    A,
    B,
    C,
    D,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::A, Region::B, Region::C, Region::D];

    pub fn of(d: bool, z: bool) -> Self {
        match (d, z) {
            (true, false) => Region::A,
            (false, true) => Region::B,
            (false, false) => Region::C,
            (true, true) => Region::D,
        }
    }

    pub fn label(self) -> char {
        match self {
            Region::A => 'a',
            Region::B => 'b',
            Region::C => 'c',
            Region::D => 'd',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
    /// Offending unit indices (0-based), empty when the finding is global.
    pub rows: Vec<usize>,
}

impl Finding {
    fn fatal(message: impl Into<String>, rows: Vec<usize>) -> Self {
        Self {
            severity: Severity::Fatal,
            message: message.into(),
            rows,
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
            rows: Vec::new(),
        }
    }
}

/// A collection of units sharing one covariate dimension and one pair of cutoffs.
///
/// Immutable once built, so it can be shared freely across estimation threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    units: Vec<UnitRecord>,
    thresholds: Thresholds,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, rejecting it if [`validate`] reports any fatal finding.
    pub fn new(
        units: Vec<UnitRecord>,
        thresholds: Thresholds,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self::from_parts_unchecked(units, thresholds, covariate_names);
        if let Some(f) = validate(&ds)
            .into_iter()
            .find(|f| f.severity == Severity::Fatal)
        {
            return Err(Error::Validation {
                message: f.message,
                rows: f.rows,
            });
        }
        Ok(ds)
    }

    /// Builds a dataset without checking any invariant. Use [`validate`] to
    /// inspect what is wrong with it.
    pub fn from_parts_unchecked(
        units: Vec<UnitRecord>,
        thresholds: Thresholds,
        covariate_names: Vec<String>,
    ) -> Self {
        Self {
            units,
            thresholds,
            covariate_names,
        }
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Covariate dimension `m`.
    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Copy of the dataset with one unit removed.
    pub fn without_unit(&self, i: usize) -> Self {
        let mut units = self.units.clone();
        units.remove(i);
        Self {
            units,
            thresholds: self.thresholds,
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Copy of the dataset with covariate column `k` removed.
    pub fn without_covariate(&self, k: usize) -> Self {
        let mut names = self.covariate_names.clone();
        names.remove(k);
        let units = self
            .units
            .iter()
            .map(|u| {
                let mut u = u.clone();
                u.w.remove(k);
                u
            })
            .collect();
        Self {
            units,
            thresholds: self.thresholds,
            covariate_names: names,
        }
    }

    /// Count of units per observability region, in [`Region::ALL`] order.
    pub fn region_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for u in &self.units {
            counts[u.region() as usize] += 1;
        }
        counts
    }
}

/// Checks every structural invariant of the design. An empty list means the
/// dataset is fully consistent; findings are data, never errors.
pub fn validate(dataset: &Dataset) -> Vec<Finding> {
    let mut findings = Vec::new();
    let t = dataset.thresholds;
    let ordered = t.c0.is_finite() && t.c1.is_finite() && t.c0 < t.c1;
    if !ordered {
        findings.push(Finding::fatal(
            format!("thresholds out of order: c0 = {}, c1 = {}", t.c0, t.c1),
            Vec::new(),
        ));
    }

    let m = dataset.dim();
    let bad_dim: Vec<usize> = indices_where(&dataset.units, |u| u.w.len() != m);
    if !bad_dim.is_empty() {
        findings.push(Finding::fatal(
            format!("covariate dimension differs from {m}"),
            bad_dim,
        ));
    }

    let non_finite = indices_where(&dataset.units, |u| {
        !(u.x.is_finite() && u.y.is_finite() && u.w.iter().all(|v| v.is_finite()))
    });
    if !non_finite.is_empty() {
        findings.push(Finding::fatal("non-finite value", non_finite));
    }

    if ordered {
        let inconsistent = indices_where(&dataset.units, |u| u.z != t.assign(u.d, u.x));
        if !inconsistent.is_empty() {
            findings.push(Finding::fatal(
                "treatment flag disagrees with 1(x > c_d)",
                inconsistent,
            ));
        }
    }

    let counts = dataset.region_counts();
    for r in Region::ALL {
        if counts[r as usize] == 0 {
            findings.push(Finding::warning(format!("region ({}) empty", r.label())));
        }
    }

    if ordered {
        for (name, c) in [("c0", t.c0), ("c1", t.c1)] {
            let below = dataset.units.iter().any(|u| u.x <= c);
            let above = dataset.units.iter().any(|u| u.x > c);
            if !below {
                findings.push(Finding::warning(format!("no unit at or below {name} = {c}")));
            }
            if !above {
                findings.push(Finding::warning(format!("no unit above {name} = {c}")));
            }
        }
    }
    findings
}

fn indices_where(units: &[UnitRecord], pred: impl Fn(&UnitRecord) -> bool) -> Vec<usize> {
    units
        .iter()
        .enumerate()
        .filter(|(_, u)| pred(u))
        .map(|(i, _)| i)
        .collect()
}

/// Explicit column mapping for delimited input. Nothing is inferred from
/// column positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub x: String,
    pub d: String,
    pub y: String,
    pub w: Vec<String>,
    pub z: Option<String>,
    pub delimiter: u8,
}

impl Schema {
    pub fn new(x: &str, d: &str, y: &str, w: &[&str]) -> Self {
        Self {
            x: x.into(),
            d: d.into(),
            y: y.into(),
            w: w.iter().map(|s| s.to_string()).collect(),
            z: None,
            delimiter: b',',
        }
    }

    pub fn with_z(mut self, z: &str) -> Self {
        self.z = Some(z.into());
        self
    }

    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }

    /// The layout written by [`write_dataset`]: `x, <covariates>, d, z, y`.
    pub fn standard(covariate_names: &[String]) -> Self {
        Self {
            x: "x".into(),
            d: "d".into(),
            y: "y".into(),
            w: covariate_names.to_vec(),
            z: Some("z".into()),
            delimiter: b',',
        }
    }
}

pub fn load_dataset(path: &Path, schema: &Schema, thresholds: Thresholds) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file, schema, thresholds)
}

/// Parses delimited text with a header row. Lines starting with `#` are
/// comments. If the schema names a `z` column it is cross-checked against the
/// sharp rule, otherwise `z` is derived.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema, thresholds: Thresholds) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let ix = col(&schema.x)?;
    let id = col(&schema.d)?;
    let iy = col(&schema.y)?;
    let iw = schema.w.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let iz = schema.z.as_deref().map(col).transpose()?;

    let mut units = Vec::new();
    let mut inconsistent = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let num = |i: usize, name: &str| parse_real(record.get(i).unwrap_or(""), row, name);
        let x = num(ix, &schema.x)?;
        let y = num(iy, &schema.y)?;
        let d = parse_flag(record.get(id).unwrap_or(""), row, &schema.d)?;
        let w = iw
            .iter()
            .zip(&schema.w)
            .map(|(&i, name)| num(i, name))
            .collect::<Result<Vec<_>>>()?;
        let unit = UnitRecord::derived(x, w, d, y, &thresholds);
        if let (Some(i), Some(name)) = (iz, schema.z.as_deref()) {
            let z = parse_flag(record.get(i).unwrap_or(""), row, name)?;
            if z != unit.z {
                inconsistent.push(row);
            }
        }
        units.push(unit);
    }
    if !inconsistent.is_empty() {
        return Err(Error::Validation {
            message: "treatment column disagrees with 1(x > c_d)".into(),
            rows: inconsistent,
        });
    }
    Dataset::new(units, thresholds, schema.w.clone())
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        row,
        column: column.into(),
        message: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.into(),
            message: format!("`{cell}` is not finite"),
        });
    }
    Ok(v)
}

fn parse_flag(cell: &str, row: usize, column: &str) -> Result<bool> {
    match parse_real(cell, row, column)? {
        0.0 => Ok(false),
        1.0 => Ok(true),
        v => Err(Error::Parse {
            row,
            column: column.into(),
            message: format!("flag must be 0 or 1, got {v}"),
        }),
    }
}

/// Writes the dataset in the [`Schema::standard`] layout. Every real is
/// written in shortest round-trip form, so reading it back is bit-exact.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W, comment: Option<&str>) -> Result<()> {
    let io = |source| Error::Io {
        path: "<dataset writer>".into(),
        source,
    };
    let mut writer = writer;
    if let Some(c) = comment {
        writeln!(writer, "# {c}").map_err(io)?;
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["x".to_string()];
    header.extend(dataset.covariate_names.iter().cloned());
    header.extend(["d".into(), "z".into(), "y".into()]);
    wtr.write_record(&header).map_err(csv_io)?;
    for u in &dataset.units {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(u.x.to_string());
        rec.extend(u.w.iter().map(|v| v.to_string()));
        rec.push(u8::from(u.d).to_string());
        rec.push(u8::from(u.z).to_string());
        rec.push(u.y.to_string());
        wtr.write_record(&rec).map_err(csv_io)?;
    }
    wtr.flush().map_err(io)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io {
        path: "<dataset writer>".into(),
        source: std::io::Error::other(e.to_string()),
    }
}
