//! From radar MEHS fields and hail reports to calibrated daily maximum
//! hailstone sizes.
//!
//! The chain is: radar QC against the thunderstorm mask and the date
//! blacklist, report QC against the mask in a 3x3 neighbourhood, matching
//! reports to the daily maximum MEHS within 2 km, MEHS to LEHA mapping, a
//! linear calibration fitted on binned medians, report reintegration with a
//! 3 km maximum filter, and finally daily-maximum event extraction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{HailEventRecord, HAIL_DAY_THRESHOLD_MM};
use crate::date::DayDate;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Footprint of one radar measurement volume.
pub const RADAR_FOOTPRINT_M2: f64 = 1.0e6;
/// Reference area of the LEHA mapping (a house roof).
pub const DEFAULT_LEHA_AREA_M2: f64 = 100.0;
/// Default calibration coefficients (mm).
pub const REFERENCE_SLOPE: f64 = 1.47;
pub const REFERENCE_OFFSET_MM: f64 = -3.4;
/// Reported-size range used for fitting the calibration line.
pub const FIT_RANGE_MM: (f64, f64) = (10.0, 50.0);
pub const FIT_BIN_WIDTH_MM: f64 = 5.0;
pub const MATCH_RADIUS_KM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RadarDailyField {
    pub date: DayDate,
    pub mehs_mm: Vec<f64>,
    pub thunderstorm: Vec<bool>,
}

impl RadarDailyField {
    pub fn new(date: DayDate, mehs_mm: Vec<f64>, thunderstorm: Vec<bool>) -> Result<Self> {
        if mehs_mm.len() != thunderstorm.len() {
            return Err(Error::Dimension {
                expected: mehs_mm.len(),
                actual: thunderstorm.len(),
            });
        }
        if let Some(v) = mehs_mm.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Invalid(format!("MEHS value {v} on {date} must be finite and >= 0")));
        }
        Ok(RadarDailyField {
            date,
            mehs_mm,
            thunderstorm,
        })
    }

    pub fn zeros(date: DayDate, n_cells: usize) -> Self {
        RadarDailyField {
            date,
            mehs_mm: vec![0.0; n_cells],
            thunderstorm: vec![false; n_cells],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HailReport {
    pub lon: f64,
    pub lat: f64,
    pub date: DayDate,
    pub reported_size_mm: f64,
}

/// A quality-controlled report, reduced to the daily maximum per cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRecord {
    pub cell_index: usize,
    pub date: DayDate,
    pub size_mm: f64,
}

/// Zeroes MEHS outside the thunderstorm mask, and everywhere on blacklisted dates.
pub fn qc_filter_radar(field: &RadarDailyField, blacklist: &BTreeSet<DayDate>) -> RadarDailyField {
    let blacklisted = blacklist.contains(&field.date);
    let mehs_mm = field
        .mehs_mm
        .iter()
        .zip(&field.thunderstorm)
        .map(|(&v, &storm)| if storm && !blacklisted { v } else { 0.0 })
        .collect();
    RadarDailyField {
        date: field.date,
        mehs_mm,
        thunderstorm: field.thunderstorm.clone(),
    }
}

/// Keeps reports with a thunderstorm detection in the same or an adjacent
/// cell on the report date, aggregated to one daily maximum per cell.
pub fn qc_filter_reports(
    reports: &[HailReport],
    fields: &BTreeMap<DayDate, RadarDailyField>,
    grid: &GridSpec,
) -> Vec<ReportRecord> {
    let mut best: BTreeMap<(usize, DayDate), f64> = BTreeMap::new();
    for r in reports {
        if !(r.reported_size_mm > 0.0) {
            log::warn!("dropping report on {} with non-positive size", r.date);
            continue;
        }
        let Some(cell) = grid.nearest_cell(r.lon, r.lat) else {
            log::warn!(
                "dropping report at ({:.4}, {:.4}) on {}: outside grid",
                r.lon,
                r.lat,
                r.date
            );
            continue;
        };
        let Some(field) = fields.get(&r.date) else {
            log::warn!("dropping report on {}: no radar field for that date", r.date);
            continue;
        };
        let storm = grid
            .moore_neighborhood(cell)
            .into_iter()
            .any(|c| field.thunderstorm[c]);
        if storm {
            let e = best.entry((cell, r.date)).or_insert(0.0);
            *e = e.max(r.reported_size_mm);
        }
    }
    best.into_iter()
        .map(|((cell_index, date), size_mm)| ReportRecord {
            cell_index,
            date,
            size_mm,
        })
        .collect()
}

/// Pairs each report with the largest MEHS within `radius_km` of its cell on
/// that date. Returns `(reported_mm, mehs_mm)`.
pub fn match_reports_to_mehs(
    reports: &[ReportRecord],
    fields: &BTreeMap<DayDate, RadarDailyField>,
    grid: &GridSpec,
    radius_km: f64,
) -> Vec<(f64, f64)> {
    let radius_cells = radius_km * 1000.0 / grid.cell_size_m();
    reports
        .iter()
        .filter_map(|r| {
            let field = fields.get(&r.date)?;
            let mehs = grid
                .neighbors_within(r.cell_index, radius_cells)
                .into_iter()
                .map(|c| field.mehs_mm[c])
                .fold(0.0, f64::max);
            Some((r.size_mm, mehs))
        })
        .collect()
}

/// Maps the largest stone in a radar volume (MEHS) to the expected largest
/// stone on a smaller area (LEHA).
pub trait LehaMapping: Send + Sync {
    fn leha(&self, mehs_mm: f64, area_m2: f64) -> Result<f64>;
}

/// Default LEHA mapping.
///
/// The radar footprint holds `K0 = density * 1e6` stones with exponentially
/// distributed sizes, the largest of which is the MEHS `m`. The exponential
/// mean is `m / (ln K0 + γ)`, the value that makes the expected maximum of
/// `K0` draws equal `m`. An area holding `k = density * area` stones contains
/// the largest stone with probability `k / K0`; otherwise its largest stone
/// is the maximum of `k` draws truncated at `m`:
///
/// `LEHA = (k/K0) m + (1 - k/K0) ∫₀ᵐ (1 - G(x)ᵏ) dx`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedExponentialLeha {
    pub stones_per_m2: f64,
}

impl Default for TruncatedExponentialLeha {
    fn default() -> Self {
        TruncatedExponentialLeha { stones_per_m2: 1.0 }
    }
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

impl TruncatedExponentialLeha {
    /// Mean grain size (mm) of the exponential distribution behind a given MEHS.
    pub fn grain_mean(&self, mehs_mm: f64) -> f64 {
        let k0 = self.stones_per_m2 * RADAR_FOOTPRINT_M2;
        mehs_mm / (k0.ln() + EULER_GAMMA)
    }
}

impl LehaMapping for TruncatedExponentialLeha {
    fn leha(&self, mehs_mm: f64, area_m2: f64) -> Result<f64> {
        if !(area_m2 > 0.0 && area_m2 <= RADAR_FOOTPRINT_M2) {
            return Err(Error::Invalid(format!(
                "LEHA area {area_m2} m² must lie in (0, {RADAR_FOOTPRINT_M2}]"
            )));
        }
        if !(mehs_mm >= 0.0 && mehs_mm.is_finite()) {
            return Err(Error::Invalid(format!("MEHS {mehs_mm} must be finite and >= 0")));
        }
        if mehs_mm == 0.0 || area_m2 == RADAR_FOOTPRINT_M2 {
            return Ok(mehs_mm);
        }
        let k0 = self.stones_per_m2 * RADAR_FOOTPRINT_M2;
        let k = self.stones_per_m2 * area_m2;
        let p_max = k / k0;
        let mu = self.grain_mean(mehs_mm);
        let m = mehs_mm;
        let ln_norm = (-(-m / mu).exp_m1()).ln();
        let integrand = |x: f64| {
            if x <= 0.0 {
                return 1.0;
            }
            let ln_g = (-(-x / mu).exp_m1()).ln() - ln_norm;
            -(k * ln_g).exp_m1()
        };
        let expected_max = gauss_legendre(integrand, 0.0, m, 512);
        Ok(p_max * m + (1.0 - p_max) * expected_max)
    }
}

/// Composite 5-point Gauss-Legendre quadrature.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let mid = a + (i as f64 + 0.5) * h;
            NODES
                .iter()
                .zip(WEIGHTS)
                .map(|(t, w)| w * f(mid + 0.5 * h * t))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

/// LEHA with the default mapping.
pub fn mehs_to_leha(mehs_mm: f64, area_m2: f64) -> Result<f64> {
    TruncatedExponentialLeha::default().leha(mehs_mm, area_m2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLine {
    pub slope: f64,
    pub offset_mm: f64,
    pub valid_range_mm: (f64, f64),
}

impl CalibrationLine {
    pub fn reference() -> Self {
        CalibrationLine {
            slope: REFERENCE_SLOPE,
            offset_mm: REFERENCE_OFFSET_MM,
            valid_range_mm: FIT_RANGE_MM,
        }
    }

    /// Calibrated size for a LEHA value, floored at zero.
    pub fn apply(&self, leha_mm: f64) -> f64 {
        (self.slope * leha_mm + self.offset_mm).max(0.0)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits `reported ≈ slope * leha + offset` by least squares through the
/// per-bin medians of 5 mm reported-size bins on `[10, 50]` mm, so that the
/// median calibrated LEHA follows the identity.
pub fn fit_calibration(pairs: &[(f64, f64)]) -> Result<CalibrationLine> {
    let (lo, hi) = FIT_RANGE_MM;
    let n_bins = ((hi - lo) / FIT_BIN_WIDTH_MM).round() as usize;
    let mut bins: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_bins];
    let mut in_range = 0;
    for &(reported, leha) in pairs {
        if !(lo..=hi).contains(&reported) || !leha.is_finite() {
            continue;
        }
        let b = (((reported - lo) / FIT_BIN_WIDTH_MM) as usize).min(n_bins - 1);
        bins[b].0.push(reported);
        bins[b].1.push(leha);
        in_range += 1;
    }
    if in_range < 2 {
        return Err(Error::Degenerate(format!(
            "{in_range} report pairs inside [{lo}, {hi}] mm; need at least 2"
        )));
    }
    let points: Vec<(f64, f64)> = bins
        .iter_mut()
        .filter(|(r, _)| !r.is_empty())
        .map(|(r, l)| (median(l), median(r)))
        .collect();
    if points.len() < 2 {
        return Err(Error::Degenerate(
            "all report pairs fall in one size bin; cannot fit a line".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("binned LEHA medians are all equal".into()));
    }
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(Error::Degenerate(format!("fitted slope {slope} is not positive")));
    }
    Ok(CalibrationLine {
        slope,
        offset_mm: my - slope * mx,
        valid_range_mm: FIT_RANGE_MM,
    })
}

/// A per-cell field of calibrated sizes on one date.
pub type CalibratedFields = BTreeMap<DayDate, Vec<f64>>;

/// Stamps reports on their cells, spreads them with a 3x3 (3 km) maximum
/// filter and merges them into the calibrated fields by taking the maximum.
pub fn reintegrate_reports(
    calibrated: &CalibratedFields,
    reports: &[ReportRecord],
    grid: &GridSpec,
) -> CalibratedFields {
    let mut out = calibrated.clone();
    let mut stamped: BTreeMap<DayDate, Vec<f64>> = BTreeMap::new();
    for r in reports {
        let layer = stamped
            .entry(r.date)
            .or_insert_with(|| vec![0.0; grid.n_cells()]);
        layer[r.cell_index] = layer[r.cell_index].max(r.size_mm);
    }
    for (date, layer) in stamped {
        let field = out
            .entry(date)
            .or_insert_with(|| vec![0.0; grid.n_cells()]);
        for (cell, v) in field.iter_mut().enumerate() {
            let filtered = grid
                .moore_neighborhood(cell)
                .into_iter()
                .map(|c| layer[c])
                .fold(0.0, f64::max);
            *v = v.max(filtered);
        }
    }
    out
}

/// Daily-maximum events: sizes rounded to whole millimetres, kept when at
/// least 1 mm.
pub fn extract_events(fields: &CalibratedFields) -> Vec<HailEventRecord> {
    let mut events = Vec::new();
    for (&date, field) in fields {
        for (cell, &v) in field.iter().enumerate() {
            let size = v.round();
            if size >= HAIL_DAY_THRESHOLD_MM {
                events.push(HailEventRecord {
                    cell_index: cell,
                    date,
                    size_mm: size,
                });
            }
        }
    }
    events.sort_by_key(|e| (e.cell_index, e.date));
    events
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub blacklist: BTreeSet<DayDate>,
    pub leha_area_m2: f64,
    /// Fit the line from matched reports; otherwise use `line`.
    pub fit_line: bool,
    pub line: CalibrationLine,
    pub match_radius_km: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            blacklist: BTreeSet::from([DayDate::from_ymd(2017, 9, 26).expect("valid date")]),
            leha_area_m2: DEFAULT_LEHA_AREA_M2,
            fit_line: false,
            line: CalibrationLine::reference(),
            match_radius_km: MATCH_RADIUS_KM,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationOutput {
    pub line: CalibrationLine,
    pub reports_kept: Vec<ReportRecord>,
    pub matched_pairs: usize,
    pub events: Vec<HailEventRecord>,
}

/// Runs the full calibration chain.
pub fn calibrate(
    radar: &BTreeMap<DayDate, RadarDailyField>,
    reports: &[HailReport],
    grid: &GridSpec,
    mapping: &dyn LehaMapping,
    opts: &CalibrationOptions,
) -> Result<CalibrationOutput> {
    let filtered: BTreeMap<DayDate, RadarDailyField> = radar
        .iter()
        .map(|(&d, f)| (d, qc_filter_radar(f, &opts.blacklist)))
        .collect();
    // a blacklisted date is dropped entirely, reports included
    let kept: Vec<ReportRecord> = qc_filter_reports(reports, radar, grid)
        .into_iter()
        .filter(|r| !opts.blacklist.contains(&r.date))
        .collect();
    let pairs = match_reports_to_mehs(&kept, &filtered, grid, opts.match_radius_km);
    let line = if opts.fit_line {
        let leha_pairs = pairs
            .iter()
            .map(|&(r, m)| Ok((r, mapping.leha(m, opts.leha_area_m2)?)))
            .collect::<Result<Vec<_>>>()?;
        fit_calibration(&leha_pairs)?
    } else {
        opts.line
    };
    let mut calibrated = CalibratedFields::new();
    for (&date, f) in &filtered {
        let values = f
            .mehs_mm
            .iter()
            .map(|&m| {
                if m > 0.0 {
                    Ok(line.apply(mapping.leha(m, opts.leha_area_m2)?))
                } else {
                    Ok(0.0)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        calibrated.insert(date, values);
    }
    let reintegrated = reintegrate_reports(&calibrated, &kept, grid);
    Ok(CalibrationOutput {
        line,
        matched_pairs: pairs.len(),
        reports_kept: kept,
        events: extract_events(&reintegrated),
    })
}

#[derive(Debug, Deserialize)]
struct RadarRow {
    cell_index: usize,
    date: String,
    mehs_mm: f64,
    thunderstorm: u8,
}

/// Reads `cell_index,date,mehs_mm,thunderstorm` rows into full per-date
/// fields. Cells without a row on a date get MEHS 0 and no thunderstorm.
pub fn read_radar_csv(path: &Path, grid: &GridSpec) -> Result<BTreeMap<DayDate, RadarDailyField>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != ["cell_index", "date", "mehs_mm", "thunderstorm"] {
        return Err(Error::Schema {
            path: path.into(),
            message: format!(
                "expected header cell_index,date,mehs_mm,thunderstorm, got {}",
                headers.join(",")
            ),
        });
    }
    let mut out: BTreeMap<DayDate, RadarDailyField> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<RadarRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::row(path, line, e.to_string()))?;
        let date: DayDate = row.date.parse().map_err(|e: Error| Error::row(path, line, e.to_string()))?;
        if !grid.contains(row.cell_index) {
            return Err(Error::row(path, line, format!("cell_index {} outside grid", row.cell_index)));
        }
        if !(row.mehs_mm.is_finite() && row.mehs_mm >= 0.0) {
            return Err(Error::row(path, line, format!("MEHS {} must be >= 0", row.mehs_mm)));
        }
        if row.thunderstorm > 1 {
            return Err(Error::row(path, line, "thunderstorm flag must be 0 or 1"));
        }
        let f = out
            .entry(date)
            .or_insert_with(|| RadarDailyField::zeros(date, grid.n_cells()));
        f.mehs_mm[row.cell_index] = f.mehs_mm[row.cell_index].max(row.mehs_mm);
        f.thunderstorm[row.cell_index] |= row.thunderstorm == 1;
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct ReportRow {
    lon: f64,
    lat: f64,
    date: String,
    size_mm: f64,
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<HailReport>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != ["lon", "lat", "date", "size_mm"] {
        return Err(Error::Schema {
            path: path.into(),
            message: format!("expected header lon,lat,date,size_mm, got {}", headers.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<ReportRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::row(path, line, e.to_string()))?;
        let date: DayDate = row.date.parse().map_err(|e: Error| Error::row(path, line, e.to_string()))?;
        if !(row.size_mm > 0.0) {
            return Err(Error::row(path, line, format!("reported size {} must be > 0", row.size_mm)));
        }
        out.push(HailReport {
            lon: row.lon,
            lat: row.lat,
            date,
            reported_size_mm: row.size_mm,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Normal};

    fn grid() -> GridSpec {
        GridSpec::regular(5, 5, 13.0, 47.0, |_, _| 400.0).unwrap()
    }

    fn d(s: &str) -> DayDate {
        s.parse().unwrap()
    }

    fn field(date: &str, mehs: f64, mask: impl Fn(usize) -> bool) -> RadarDailyField {
        let n = 25;
        RadarDailyField::new(d(date), vec![mehs; n], (0..n).map(mask).collect()).unwrap()
    }

    #[test]
    fn radar_qc_mask() {
        let none = BTreeSet::new();
        let f = field("2012-07-01", 20.0, |_| true);
        assert_eq!(qc_filter_radar(&f, &none), f);
        let f = field("2012-07-01", 20.0, |_| false);
        assert!(qc_filter_radar(&f, &none).mehs_mm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn radar_qc_blacklist() {
        let f = field("2017-09-26", 30.0, |_| true);
        let out = qc_filter_radar(&f, &CalibrationOptions::default().blacklist);
        assert!(out.mehs_mm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn report_qc_neighbourhood() {
        let g = grid();
        let centre = g.index_of(2, 2).unwrap();
        let diag = g.index_of(3, 3).unwrap();
        let p = *g.cell(centre).unwrap();
        let mut fields = BTreeMap::new();
        fields.insert(d("2012-07-01"), field("2012-07-01", 0.0, |c| c == diag));
        fields.insert(d("2012-07-02"), field("2012-07-02", 0.0, |c| c == centre));
        fields.insert(d("2012-07-03"), field("2012-07-03", 0.0, |c| c == 0));
        let rep = |date: &str, s: f64| HailReport {
            lon: p.lon,
            lat: p.lat,
            date: d(date),
            reported_size_mm: s,
        };
        let reports = [
            rep("2012-07-01", 15.0),
            rep("2012-07-02", 20.0),
            rep("2012-07-02", 35.0),
            rep("2012-07-03", 25.0),
        ];
        let kept = qc_filter_reports(&reports, &fields, &g);
        assert_eq!(
            kept,
            vec![
                ReportRecord { cell_index: centre, date: d("2012-07-01"), size_mm: 15.0 },
                ReportRecord { cell_index: centre, date: d("2012-07-02"), size_mm: 35.0 },
            ]
        );
    }

    #[test]
    fn report_outside_grid_dropped() {
        let g = grid();
        let mut fields = BTreeMap::new();
        fields.insert(d("2012-07-01"), field("2012-07-01", 0.0, |_| true));
        let r = HailReport { lon: 20.0, lat: 47.0, date: d("2012-07-01"), reported_size_mm: 10.0 };
        assert!(qc_filter_reports(&[r], &fields, &g).is_empty());
    }

    #[test]
    fn match_radius_two_km() {
        let g = grid();
        let centre = g.index_of(2, 2).unwrap();
        let mut f = RadarDailyField::zeros(d("2012-07-01"), 25);
        f.mehs_mm[g.index_of(4, 2).unwrap()] = 30.0;
        f.mehs_mm[g.index_of(4, 3).unwrap()] = 50.0;
        let fields = BTreeMap::from([(f.date, f)]);
        let r = ReportRecord { cell_index: centre, date: d("2012-07-01"), size_mm: 20.0 };
        assert_eq!(match_reports_to_mehs(&[r], &fields, &g, 2.0), vec![(20.0, 30.0)]);
    }

    #[test]
    fn leha_edge_cases() {
        assert_eq!(mehs_to_leha(0.0, 100.0).unwrap(), 0.0);
        assert_eq!(mehs_to_leha(37.0, RADAR_FOOTPRINT_M2).unwrap(), 37.0);
        assert!(mehs_to_leha(10.0, 0.0).is_err());
        assert!(mehs_to_leha(10.0, -5.0).is_err());
        assert!(mehs_to_leha(10.0, 2e6).is_err());
    }

    #[test]
    fn leha_reference_value() {
        // Same integral evaluated with adaptive quadrature (scipy.integrate.quad).
        let v = mehs_to_leha(40.0, 100.0).unwrap();
        assert!(v > 0.0 && v < 40.0);
        assert!((v - 14.417630193119885).abs() < 1e-8, "{v}");
    }

    #[test]
    fn leha_matches_order_statistics_monte_carlo() {
        // Draw the stones on a 100 m² area directly: with probability k/K0 the
        // area holds the radar-volume maximum, otherwise its largest stone is
        // the maximum of k exponential draws conditioned to lie below MEHS.
        let mapping = TruncatedExponentialLeha::default();
        let (m, area) = (40.0, 100.0);
        let k = 100usize;
        let p_max = k as f64 / 1e6;
        let exp = Exp::new(1.0 / mapping.grain_mean(m)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reps = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..reps {
            let v = if rng.gen::<f64>() < p_max {
                m
            } else {
                (0..k)
                    .map(|_| loop {
                        let x: f64 = exp.sample(&mut rng);
                        if x <= m {
                            break x;
                        }
                    })
                    .fold(0.0, f64::max)
            };
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / reps as f64;
        let se = ((sum2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        let v = mapping.leha(m, area).unwrap();
        assert!((v - mean).abs() < 4.0 * se, "quadrature {v}, MC {mean} ± {se}");
    }

    #[test]
    fn leha_monotone() {
        let areas = [1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6];
        for mehs in [1.0, 5.0, 10.0, 25.0, 40.0, 60.0, 90.0] {
            let vals: Vec<f64> = areas.iter().map(|&a| mehs_to_leha(mehs, a).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{mehs}: {vals:?}");
        }
        for area in areas {
            let vals: Vec<f64> = (0..=100).map(|m| mehs_to_leha(m as f64, area).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{area}");
        }
    }

    #[test]
    fn calibration_identity() {
        let pairs: Vec<(f64, f64)> = (10..=50).map(|s| (s as f64, s as f64)).collect();
        let line = fit_calibration(&pairs).unwrap();
        assert!((line.slope - 1.0).abs() < 1e-12);
        assert!(line.offset_mm.abs() < 1e-10);
    }

    #[test]
    fn calibration_recovers_generating_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let pairs: Vec<(f64, f64)> = (0..20_000)
            .map(|_| {
                let leha: f64 = rng.gen_range(3.0..40.0);
                (1.47 * leha - 3.4 + noise.sample(&mut rng), leha)
            })
            .collect();
        let line = fit_calibration(&pairs).unwrap();
        assert!((line.slope - 1.47).abs() < 0.05, "{line:?}");
        assert!((line.offset_mm + 3.4).abs() < 1.0, "{line:?}");
    }

    #[test]
    fn calibration_reference_coefficients() {
        assert!((CalibrationLine::reference().apply(30.0) - 40.7).abs() < 1e-12);
    }

    #[test]
    fn calibration_needs_pairs_in_range() {
        assert!(fit_calibration(&[(5.0, 5.0), (60.0, 30.0)]).is_err());
        assert!(fit_calibration(&[(11.0, 5.0), (12.0, 6.0)]).is_err());
    }

    #[test]
    fn reintegration() {
        let g = grid();
        let date = d("2015-06-10");
        let centre = g.index_of(2, 2).unwrap();
        let zero = CalibratedFields::from([(date, vec![0.0; 25])]);
        assert_eq!(reintegrate_reports(&zero, &[], &g), zero);

        let rep = ReportRecord { cell_index: centre, date, size_mm: 50.0 };
        let out = reintegrate_reports(&zero, &[rep], &g);
        let hit: BTreeSet<usize> = (0..25).filter(|&c| out[&date][c] == 50.0).collect();
        assert_eq!(hit, g.moore_neighborhood(centre).into_iter().collect());
        assert_eq!(hit.len(), 9);
        assert_eq!(out[&date].iter().filter(|&&v| v == 0.0).count(), 16);

        let thirty = CalibratedFields::from([(date, vec![30.0; 25])]);
        let rep = ReportRecord { size_mm: 20.0, ..rep };
        assert_eq!(reintegrate_reports(&thirty, &[rep], &g), thirty);
    }

    #[test]
    fn events_are_rounded_daily_maxima() {
        let date = d("2015-06-10");
        let fields = CalibratedFields::from([(date, vec![0.0, 0.4, 0.6, 12.4, 12.6])]);
        let ev = extract_events(&fields);
        let sizes: Vec<(usize, f64)> = ev.iter().map(|e| (e.cell_index, e.size_mm)).collect();
        assert_eq!(sizes, vec![(2, 1.0), (3, 12.0), (4, 13.0)]);
    }

    #[test]
    fn full_chain_respects_mask_and_reports() {
        let g = grid();
        let date = d("2013-07-04");
        let storm = g.index_of(1, 1).unwrap();
        let mut f = RadarDailyField::zeros(date, 25);
        f.mehs_mm.iter_mut().for_each(|v| *v = 40.0);
        f.thunderstorm[storm] = true;
        let radar = BTreeMap::from([(date, f)]);
        let far = *g.cell(g.index_of(4, 4).unwrap()).unwrap();
        let near = *g.cell(g.index_of(2, 2).unwrap()).unwrap();
        let reports = [
            HailReport { lon: near.lon, lat: near.lat, date, reported_size_mm: 45.0 },
            HailReport { lon: far.lon, lat: far.lat, date, reported_size_mm: 45.0 },
        ];
        let out = calibrate(&radar, &reports, &g, &TruncatedExponentialLeha::default(), &CalibrationOptions::default()).unwrap();
        let expected_storm = CalibrationLine::reference().apply(mehs_to_leha(40.0, 100.0).unwrap()).round();
        let mut cells: BTreeMap<usize, f64> = BTreeMap::new();
        for e in &out.events {
            cells.insert(e.cell_index, e.size_mm);
        }
        // report at (2,2) spreads over its 3x3 block; the far report is rejected
        let mut expected: BTreeMap<usize, f64> = g
            .moore_neighborhood(g.index_of(2, 2).unwrap())
            .into_iter()
            .map(|c| (c, 45.0))
            .collect();
        expected.entry(storm).and_modify(|v| *v = v.max(expected_storm)).or_insert(expected_storm);
        assert_eq!(cells, expected);
    }
}
