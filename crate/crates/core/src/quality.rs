//! Data-quality indices: radar geometry quality, data availability and the
//! overall confidence rating with its six categories.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::date::DayDate;
use crate::error::{Error, Result};
use crate::grid::{ground_distance_m, GridSpec};

/// Cells above this elevation (m) get confidence 0.
pub const ELEVATION_CUTOFF_M: f64 = 1500.0;
/// Cap applied to cells flagged as suspicious.
pub const SUSPICIOUS_CAP: f64 = 0.15;
/// Hail days needed for full data availability.
pub const FULL_AVAILABILITY_DAYS: f64 = 15.0;

fn ramp(v: f64, lo: f64, hi: f64) -> f64 {
    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Minimum beam height above ground (m): 1 at 1500 m, 0 at 6000 m.
pub fn q_hmin(h_min_m: f64) -> f64 {
    1.0 - ramp(h_min_m, 1500.0, 6000.0)
}

/// Maximum beam height above ground (m): 0 at 2500 m, 1 at 6000 m.
pub fn q_hmax(h_max_m: f64) -> f64 {
    ramp(h_max_m, 2500.0, 6000.0)
}

/// Vertical extent of the radar view (m): 0 at 1000 m, 1 at 4500 m.
pub fn q_hext(h_ext_m: f64) -> f64 {
    ramp(h_ext_m, 1000.0, 4500.0)
}

/// Distance to the nearest active radar (km): 0 at 15 km, 1 at 100 km.
pub fn q_dist(radar_dist_km: f64) -> f64 {
    ramp(radar_dist_km, 15.0, 100.0)
}

pub fn q_numstat(nr_haildays: usize) -> f64 {
    (nr_haildays as f64 / FULL_AVAILABILITY_DAYS).min(1.0)
}

/// Per-cell radar view geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarGeometry {
    pub h_min_m: f64,
    pub h_max_m: f64,
    pub radar_dist_km: f64,
}

impl RadarGeometry {
    pub fn new(h_min_m: f64, h_max_m: f64, radar_dist_km: f64) -> Result<Self> {
        if ![h_min_m, h_max_m, radar_dist_km].iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("radar geometry must be finite".into()));
        }
        if !(h_max_m >= h_min_m && h_min_m >= 0.0 && radar_dist_km >= 0.0) {
            return Err(Error::Invalid(format!(
                "need h_max >= h_min >= 0 and distance >= 0 (got {h_min_m}, {h_max_m}, {radar_dist_km})"
            )));
        }
        Ok(RadarGeometry {
            h_min_m,
            h_max_m,
            radar_dist_km,
        })
    }

    pub fn h_ext_m(&self) -> f64 {
        self.h_max_m - self.h_min_m
    }
}

/// `q_hmin · (q_hext + q_dist) / 2`.
pub fn q_radar(geom: &RadarGeometry) -> f64 {
    q_radar_from_components(q_hmin(geom.h_min_m), q_hext(geom.h_ext_m()), q_dist(geom.radar_dist_km))
}

pub fn q_radar_from_components(q_hmin: f64, q_hext: f64, q_dist: f64) -> f64 {
    q_hmin * (q_hext + q_dist) / 2.0
}

/// Confidence category for a rating in `[0, 1]`: 0 for exactly zero, then
/// one category per left-open fifth of the unit interval.
pub fn category(q: f64) -> u8 {
    if q <= 0.0 {
        0
    } else if q <= 0.2 {
        1
    } else if q <= 0.4 {
        2
    } else if q <= 0.6 {
        3
    } else if q <= 0.8 {
        4
    } else {
        5
    }
}

/// Final rating from the preliminary product `Q_numstat · Q_radar`.
pub fn confidence_from_prelim(q_prelim: f64, elevation_m: f64, suspicious: bool) -> (f64, u8) {
    let q = if elevation_m > ELEVATION_CUTOFF_M {
        0.0
    } else if suspicious {
        q_prelim.min(SUSPICIOUS_CAP)
    } else {
        q_prelim
    };
    (q, category(q))
}

pub fn confidence(
    geom: &RadarGeometry,
    nr_haildays: usize,
    elevation_m: f64,
    suspicious: bool,
) -> (f64, u8) {
    confidence_from_prelim(q_numstat(nr_haildays) * q_radar(geom), elevation_m, suspicious)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub cell_index: usize,
    pub q_radar: f64,
    pub q_numstat: f64,
    pub q: f64,
    pub category: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfidenceMap {
    pub rows: Vec<ConfidenceRow>,
}

impl ConfidenceMap {
    pub fn compute(
        grid: &GridSpec,
        geometry: &[RadarGeometry],
        hail_day_counts: &[usize],
        suspicious: &BTreeSet<usize>,
    ) -> Result<Self> {
        for len in [geometry.len(), hail_day_counts.len()] {
            if len != grid.n_cells() {
                return Err(Error::Dimension {
                    expected: grid.n_cells(),
                    actual: len,
                });
            }
        }
        let rows = grid
            .cells()
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let qr = q_radar(&geometry[i]);
                let qn = q_numstat(hail_day_counts[i]);
                let (q, category) =
                    confidence_from_prelim(qr * qn, cell.elevation_m, suspicious.contains(&i));
                ConfidenceRow {
                    cell_index: i,
                    q_radar: qr,
                    q_numstat: qn,
                    q,
                    category,
                }
            })
            .collect();
        Ok(ConfidenceMap { rows })
    }

    /// Writes `cell_index,q_radar,q_numstat,Q,category`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell_index", "q_radar", "q_numstat", "Q", "category"])?;
        for r in &self.rows {
            w.write_record([
                r.cell_index.to_string(),
                r.q_radar.to_string(),
                r.q_numstat.to_string(),
                r.q.to_string(),
                r.category.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct GeometryRow {
    cell_index: usize,
    h_min: f64,
    h_max: f64,
    radar_dist_km: f64,
}

/// Reads `cell_index,h_min,h_max,radar_dist_km`; every grid cell must appear
/// exactly once.
pub fn read_geometry_csv(path: &Path, grid: &GridSpec) -> Result<Vec<RadarGeometry>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema {
            path: path.into(),
            message: format!("{other:?}"),
        },
    })?;
    let mut out: Vec<Option<RadarGeometry>> = vec![None; grid.n_cells()];
    for (i, rec) in reader.deserialize::<GeometryRow>().enumerate() {
        let row_no = i + 2;
        let r = rec.map_err(|e| Error::row(path, row_no, e.to_string()))?;
        if !grid.contains(r.cell_index) {
            return Err(Error::row(path, row_no, format!("cell {} is outside the grid", r.cell_index)));
        }
        let g = RadarGeometry::new(r.h_min, r.h_max, r.radar_dist_km)
            .map_err(|e| Error::row(path, row_no, e.to_string()))?;
        if out[r.cell_index].replace(g).is_some() {
            return Err(Error::row(path, row_no, format!("duplicate cell {}", r.cell_index)));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, g)| {
            g.ok_or_else(|| Error::Schema {
                path: path.into(),
                message: format!("no geometry for cell {i}"),
            })
        })
        .collect()
}

/// A radar site with an optional activity window (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSite {
    pub name: String,
    pub lon: f64,
    pub lat: f64,
    #[serde(default)]
    pub active_from: Option<DayDate>,
    #[serde(default)]
    pub active_until: Option<DayDate>,
}

impl RadarSite {
    pub fn is_active(&self, date: DayDate) -> bool {
        self.active_from.is_none_or(|d| date >= d) && self.active_until.is_none_or(|d| date <= d)
    }
}

/// Ground distance (km) from a cell to the nearest site active on `date`;
/// `None` if no site is active.
pub fn nearest_radar_km(grid: &GridSpec, cell: usize, sites: &[RadarSite], date: DayDate) -> Option<f64> {
    let c = grid.cell(cell)?;
    sites
        .iter()
        .filter(|s| s.is_active(date))
        .map(|s| ground_distance_m(c.lon, c.lat, s.lon, s.lat) / 1000.0)
        .min_by(f64::total_cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundary_values() {
        assert_eq!(q_hmin(1500.0), 1.0);
        assert_eq!(q_hmin(6000.0), 0.0);
        assert_eq!(q_hmin(9000.0), 0.0);
        assert_eq!(q_hmin(3750.0), 0.5);
        assert_eq!(q_dist(15.0), 0.0);
        assert_eq!(q_dist(100.0), 1.0);
        assert_eq!(q_dist(57.5), 0.5);
        assert_eq!(q_hmax(6000.0), 1.0);
        assert_eq!(q_hmax(2500.0), 0.0);
        assert_eq!(q_hext(1000.0), 0.0);
        assert_eq!(q_hext(4500.0), 1.0);
        assert_eq!(q_numstat(0), 0.0);
        assert_eq!(q_numstat(15), 1.0);
        assert!((q_numstat(7) - 7.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn radar_quality() {
        assert_eq!(q_radar_from_components(1.0, 1.0, 1.0), 1.0);
        assert_eq!(q_radar_from_components(0.0, 1.0, 1.0), 0.0);
        assert_eq!(q_radar_from_components(1.0, 0.5, 0.5), 0.5);
        let g = RadarGeometry::new(1500.0, 6000.0, 100.0).unwrap();
        assert_eq!(q_radar(&g), 1.0);
        assert!(RadarGeometry::new(2000.0, 1000.0, 5.0).is_err());
    }

    #[test]
    fn confidence_rules() {
        let g = RadarGeometry::new(1500.0, 6000.0, 100.0).unwrap();
        assert_eq!(confidence(&g, 30, 2000.0, false), (0.0, 0));
        assert_eq!(confidence_from_prelim(0.9, 500.0, true), (0.15, 1));
        assert_eq!(confidence_from_prelim(0.35, 500.0, false), (0.35, 2));
        assert_eq!(confidence_from_prelim(0.9, 1500.0, false), (0.9, 5));
    }

    #[test]
    fn category_boundaries() {
        let cases = [
            (0.0, 0),
            (1e-12, 1),
            (0.2, 1),
            (0.2 + 1e-12, 2),
            (0.4, 2),
            (0.6, 3),
            (0.8, 4),
            (0.8 + 1e-12, 5),
            (1.0, 5),
        ];
        for (q, c) in cases {
            assert_eq!(category(q), c, "{q}");
        }
    }

    #[test]
    fn site_activity_and_distance() {
        let grid = GridSpec::regular(2, 1, 10.0, 47.0, |_, _| 500.0).unwrap();
        let until = DayDate::from_ymd(2015, 12, 31).unwrap();
        let sites = vec![
            RadarSite {
                name: "near".into(),
                lon: 10.0,
                lat: 47.0,
                active_from: None,
                active_until: Some(until),
            },
            RadarSite {
                name: "far".into(),
                lon: 11.0,
                lat: 47.0,
                active_from: None,
                active_until: None,
            },
        ];
        let before = DayDate::from_ymd(2012, 6, 1).unwrap();
        let after = DayDate::from_ymd(2018, 6, 1).unwrap();
        assert!(nearest_radar_km(&grid, 0, &sites, before).unwrap() < 1e-9);
        let d = nearest_radar_km(&grid, 0, &sites, after).unwrap();
        assert!(d > 70.0 && d < 80.0, "{d}");
        assert_eq!(nearest_radar_km(&grid, 0, &sites[..1], after), None);
    }

    #[test]
    fn map_and_csv() {
        let grid = GridSpec::regular(2, 1, 10.0, 47.0, |ix, _| if ix == 0 { 500.0 } else { 1800.0 })
            .unwrap();
        let geom = vec![RadarGeometry::new(1500.0, 6000.0, 100.0).unwrap(); 2];
        let map = ConfidenceMap::compute(&grid, &geom, &[15, 15], &BTreeSet::new()).unwrap();
        assert_eq!((map.rows[0].q, map.rows[0].category), (1.0, 5));
        assert_eq!((map.rows[1].q, map.rows[1].category), (0.0, 0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        map.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("cell_index,q_radar,q_numstat,Q,category\n0,1,1,1,5\n"));
    }

    proptest! {
        #[test]
        fn indices_clamp(v in -1e9f64..1e9) {
            for q in [q_hmin(v), q_hmax(v), q_hext(v), q_dist(v)] {
                prop_assert!((0.0..=1.0).contains(&q));
            }
        }

        #[test]
        fn confidence_monotone(
            h_min in 0.0f64..8000.0, ext in 0.0f64..8000.0, dist in 0.0f64..200.0,
            days in 0usize..40, elev in 0.0f64..1500.0,
        ) {
            let base = RadarGeometry::new(h_min, h_min + ext, dist).unwrap();
            let (q, cat) = confidence(&base, days, elev, false);
            prop_assert!((0.0..=1.0).contains(&q));
            prop_assert_eq!(q == 0.0, cat == 0);
            prop_assert!(confidence(&base, days + 1, elev, false).0 >= q);
            let lower = RadarGeometry::new((h_min - 100.0).max(0.0), h_min + ext, dist).unwrap();
            prop_assert!(confidence(&lower, days, elev, false).0 >= q);
            let wider = RadarGeometry::new(h_min, h_min + ext + 100.0, dist).unwrap();
            prop_assert!(confidence(&wider, days, elev, false).0 >= q);
            let further = RadarGeometry::new(h_min, h_min + ext, dist + 5.0).unwrap();
            prop_assert!(confidence(&further, days, elev, false).0 >= q);
        }

        #[test]
        fn categories_partition(q in 0.0f64..=1.0) {
            let c = category(q);
            prop_assert!(c <= 5);
            prop_assert_eq!(c == 0, q == 0.0);
        }
    }
}
