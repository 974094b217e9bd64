//! Hail events, covariates and the validated [`Dataset`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::date::DayDate;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Minimum calibrated size for a day to count as a hail day.
pub const HAIL_DAY_THRESHOLD_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HailEventRecord {
    pub cell_index: usize,
    pub date: DayDate,
    pub size_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateRow {
    pub cell_index: usize,
    pub date: DayDate,
    pub values: Vec<f64>,
}

/// Ordered covariate column names; the network input width equals its length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    names: Vec<String>,
}

impl CovariateSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("covariate schema is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n == "cell_index" || n == "date" {
                return Err(Error::Config(format!("schema may not redeclare {n:?}")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Config(format!("duplicate schema column {n:?}")));
            }
        }
        Ok(CovariateSchema { names })
    }

    /// The default 18 inputs: four space/time columns, daily max and median
    /// of six surface parameters, CAPE and lightning amplitude maxima.
    pub fn standard() -> Self {
        let names = [
            "lon",
            "lat",
            "year",
            "doy",
            "t2m_max",
            "t2m_median",
            "td2m_max",
            "td2m_median",
            "rh2m_max",
            "rh2m_median",
            "snowfall_border_max",
            "snowfall_border_median",
            "wind_max",
            "wind_median",
            "gust_max",
            "gust_median",
            "cape_max",
            "lightning_amplitude_max",
        ];
        CovariateSchema::new(names).expect("static schema is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn new(first: i32, last: i32) -> Result<Self> {
        if last < first {
            return Err(Error::Invalid(format!("empty year range {first}..={last}")));
        }
        Ok(YearRange { first, last })
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }
}

/// How covariate gaps (empty, `NA` or `NaN` cells) are handled at load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    ImputeColumnMean,
}

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub grid: PathBuf,
    pub events: PathBuf,
    pub covariates: PathBuf,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub schema: CovariateSchema,
    /// Declared record period; inferred from the data when `None`.
    pub years: Option<YearRange>,
    pub missing: MissingPolicy,
}

/// Validated, immutable dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    grid: GridSpec,
    schema: CovariateSchema,
    events: Vec<HailEventRecord>,
    covariates: BTreeMap<(usize, DayDate), Vec<f64>>,
    years: YearRange,
}

impl Dataset {
    /// Validates and assembles a dataset from in-memory parts.
    pub fn new(
        grid: GridSpec,
        schema: CovariateSchema,
        mut events: Vec<HailEventRecord>,
        covariates: Vec<CovariateRow>,
        years: Option<YearRange>,
    ) -> Result<Self> {
        let mut cov = BTreeMap::new();
        for row in covariates {
            check_covariate_row(&grid, &schema, &row)?;
            if cov.insert((row.cell_index, row.date), row.values).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate covariate row for cell {} on {}",
                    row.cell_index, row.date
                )));
            }
        }
        events.sort_by_key(|e| (e.cell_index, e.date));
        for w in events.windows(2) {
            if (w[0].cell_index, w[0].date) == (w[1].cell_index, w[1].date) {
                return Err(Error::Invalid(format!(
                    "duplicate event for cell {} on {}",
                    w[0].cell_index, w[0].date
                )));
            }
        }
        for e in &events {
            check_event(&grid, e)?;
            if !cov.contains_key(&(e.cell_index, e.date)) {
                return Err(Error::Invalid(format!(
                    "event at cell {} on {} has no covariate row",
                    e.cell_index, e.date
                )));
            }
        }
        let years = resolve_years(years, &events, &cov)?;
        if let Some(e) = events.iter().find(|e| !years.contains(e.date.year)) {
            return Err(Error::Invalid(format!(
                "event on {} outside year range {}..={}",
                e.date, years.first, years.last
            )));
        }
        Ok(Dataset {
            grid,
            schema,
            events,
            covariates: cov,
            years,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    /// All events, sorted by `(cell_index, date)`.
    pub fn events(&self) -> &[HailEventRecord] {
        &self.events
    }

    pub fn years(&self) -> YearRange {
        self.years
    }

    pub fn covariates(&self, cell: usize, date: DayDate) -> Option<&[f64]> {
        self.covariates.get(&(cell, date)).map(Vec::as_slice)
    }

    pub fn covariate_rows(&self) -> impl Iterator<Item = CovariateRow> + '_ {
        self.covariates.iter().map(|(&(c, d), v)| CovariateRow {
            cell_index: c,
            date: d,
            values: v.clone(),
        })
    }

    pub fn events_at(&self, cell: usize) -> &[HailEventRecord] {
        let lo = self.events.partition_point(|e| e.cell_index < cell);
        let hi = self.events.partition_point(|e| e.cell_index <= cell);
        &self.events[lo..hi]
    }

    /// Number of hail days recorded at every cell.
    pub fn hail_day_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grid.n_cells()];
        for e in &self.events {
            counts[e.cell_index] += 1;
        }
        counts
    }

    /// Hail days `A_j` per record year at `cell`; years without hail map to
    /// the empty set, so the map always spans the full record.
    pub fn hail_days_per_year(&self, cell: usize) -> BTreeMap<i32, BTreeSet<u16>> {
        let mut out: BTreeMap<i32, BTreeSet<u16>> =
            self.years.iter().map(|y| (y, BTreeSet::new())).collect();
        for e in self.events_at(cell) {
            out.entry(e.date.year).or_default().insert(e.date.doy);
        }
        out
    }

    pub fn load(paths: &DatasetPaths, opts: &LoadOptions) -> Result<Self> {
        load_dataset(paths, opts)
    }

    /// Writes grid, events and covariates to the three CSV files.
    pub fn write(&self, paths: &DatasetPaths) -> Result<()> {
        self.grid.write_csv(&paths.grid)?;
        write_events(&paths.events, &self.events)?;
        let mut w = csv::Writer::from_path(&paths.covariates)?;
        let mut header = vec!["cell_index".to_string(), "date".to_string()];
        header.extend(self.schema.names().iter().cloned());
        w.write_record(&header)?;
        for (&(c, d), vals) in &self.covariates {
            let mut rec = vec![c.to_string(), d.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&paths.covariates, e))?;
        Ok(())
    }
}

fn check_event(grid: &GridSpec, e: &HailEventRecord) -> Result<()> {
    if !grid.contains(e.cell_index) {
        return Err(Error::Invalid(format!(
            "cell_index {} outside grid of {} cells",
            e.cell_index,
            grid.n_cells()
        )));
    }
    if !e.size_mm.is_finite() || e.size_mm < HAIL_DAY_THRESHOLD_MM {
        return Err(Error::Invalid(format!(
            "size {} mm is below the {HAIL_DAY_THRESHOLD_MM} mm hail-day threshold",
            e.size_mm
        )));
    }
    Ok(())
}

fn check_covariate_row(grid: &GridSpec, schema: &CovariateSchema, row: &CovariateRow) -> Result<()> {
    if !grid.contains(row.cell_index) {
        return Err(Error::Invalid(format!(
            "covariate cell_index {} outside grid",
            row.cell_index
        )));
    }
    if row.values.len() != schema.len() {
        return Err(Error::Dimension {
            expected: schema.len(),
            actual: row.values.len(),
        });
    }
    if let Some(i) = row.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!(
            "non-finite covariate {:?} for cell {} on {}",
            schema.names()[i],
            row.cell_index,
            row.date
        )));
    }
    Ok(())
}

fn resolve_years(
    declared: Option<YearRange>,
    events: &[HailEventRecord],
    cov: &BTreeMap<(usize, DayDate), Vec<f64>>,
) -> Result<YearRange> {
    if let Some(y) = declared {
        return Ok(y);
    }
    let years = events
        .iter()
        .map(|e| e.date.year)
        .chain(cov.keys().map(|(_, d)| d.year));
    let (lo, hi) = years.fold((i32::MAX, i32::MIN), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if lo > hi {
        return Err(Error::Invalid(
            "cannot infer the year range from an empty dataset; declare it".into(),
        ));
    }
    YearRange::new(lo, hi)
}

#[derive(Debug, Deserialize, Serialize)]
struct EventRow {
    cell_index: usize,
    date: String,
    size_mm: f64,
}

pub fn read_events(path: &Path) -> Result<Vec<(usize, HailEventRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != ["cell_index", "date", "size_mm"] {
        return Err(Error::Schema {
            path: path.into(),
            message: format!("expected header cell_index,date,size_mm, got {}", headers.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<EventRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::row(path, line, e.to_string()))?;
        let date: DayDate = row.date.parse().map_err(|e: Error| Error::row(path, line, e.to_string()))?;
        out.push((
            line,
            HailEventRecord {
                cell_index: row.cell_index,
                date,
                size_mm: row.size_mm,
            },
        ));
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &[HailEventRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["cell_index", "date", "size_mm"])?;
    for e in events {
        w.write_record(&[e.cell_index.to_string(), e.date.to_string(), e.size_mm.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn parse_covariate(field: &str) -> Option<f64> {
    match field {
        "" | "NA" | "NaN" | "nan" => None,
        s => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

pub fn read_covariates(
    path: &Path,
    schema: &CovariateSchema,
    missing: MissingPolicy,
) -> Result<Vec<(usize, CovariateRow)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.first().map(String::as_str) != Some("cell_index")
        || headers.get(1).map(String::as_str) != Some("date")
    {
        return Err(Error::Schema {
            path: path.into(),
            message: "covariate header must start with cell_index,date".into(),
        });
    }
    let mut columns = Vec::with_capacity(schema.len());
    for name in schema.names() {
        match headers.iter().position(|h| h == name) {
            Some(i) => columns.push(i),
            None => {
                return Err(Error::Schema {
                    path: path.into(),
                    message: format!("missing covariate column {name:?}"),
                })
            }
        }
    }
    for h in &headers[2..] {
        if !schema.names().contains(h) {
            log::warn!("{}: ignoring covariate column {h:?} not in schema", path.display());
        }
    }

    let mut raw: Vec<(usize, usize, DayDate, Vec<Option<f64>>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::row(path, line, e.to_string()))?;
        let cell: usize = rec[0]
            .parse()
            .map_err(|_| Error::row(path, line, format!("bad cell_index {:?}", &rec[0])))?;
        let date: DayDate = rec[1].parse().map_err(|e: Error| Error::row(path, line, e.to_string()))?;
        let vals: Vec<Option<f64>> = columns.iter().map(|&c| parse_covariate(&rec[c])).collect();
        if missing == MissingPolicy::Reject {
            if let Some(j) = vals.iter().position(Option::is_none) {
                return Err(Error::row(
                    path,
                    line,
                    format!("missing value in covariate column {:?}", schema.names()[j]),
                ));
            }
        }
        raw.push((line, cell, date, vals));
    }

    let mut means = vec![0.0; schema.len()];
    if missing == MissingPolicy::ImputeColumnMean {
        for (j, m) in means.iter_mut().enumerate() {
            let present: Vec<f64> = raw.iter().filter_map(|r| r.3[j]).collect();
            if present.is_empty() && !raw.is_empty() {
                return Err(Error::Schema {
                    path: path.into(),
                    message: format!("column {:?} has no values to impute from", schema.names()[j]),
                });
            }
            *m = present.iter().sum::<f64>() / present.len().max(1) as f64;
        }
    }
    Ok(raw
        .into_iter()
        .map(|(line, cell, date, vals)| {
            let values = vals
                .iter()
                .enumerate()
                .map(|(j, v)| v.unwrap_or(means[j]))
                .collect();
            (
                line,
                CovariateRow {
                    cell_index: cell,
                    date,
                    values,
                },
            )
        })
        .collect())
}

/// Reads and validates the three dataset files; errors name the file and row.
pub fn load_dataset(paths: &DatasetPaths, opts: &LoadOptions) -> Result<Dataset> {
    let grid = GridSpec::read_csv(&paths.grid)?;
    let cov_rows = read_covariates(&paths.covariates, &opts.schema, opts.missing)?;
    let mut keys = BTreeSet::new();
    for (line, row) in &cov_rows {
        if !grid.contains(row.cell_index) {
            return Err(Error::row(
                &paths.covariates,
                *line,
                format!("cell_index {} outside grid", row.cell_index),
            ));
        }
        if !keys.insert((row.cell_index, row.date)) {
            return Err(Error::row(
                &paths.covariates,
                *line,
                format!("duplicate covariate row for cell {} on {}", row.cell_index, row.date),
            ));
        }
    }
    let events = read_events(&paths.events)?;
    let mut seen = BTreeSet::new();
    for (line, e) in &events {
        check_event(&grid, e).map_err(|err| Error::row(&paths.events, *line, err.to_string()))?;
        if !seen.insert((e.cell_index, e.date)) {
            return Err(Error::row(
                &paths.events,
                *line,
                format!("duplicate event for cell {} on {}", e.cell_index, e.date),
            ));
        }
        if !keys.contains(&(e.cell_index, e.date)) {
            return Err(Error::row(
                &paths.events,
                *line,
                format!("event at cell {} on {} has no covariate row", e.cell_index, e.date),
            ));
        }
        if let Some(y) = opts.years {
            if !y.contains(e.date.year) {
                return Err(Error::row(
                    &paths.events,
                    *line,
                    format!("date {} outside year range {}..={}", e.date, y.first, y.last),
                ));
            }
        }
    }
    Dataset::new(
        grid,
        opts.schema.clone(),
        events.into_iter().map(|(_, e)| e).collect(),
        cov_rows.into_iter().map(|(_, r)| r).collect(),
        opts.years,
    )
}
