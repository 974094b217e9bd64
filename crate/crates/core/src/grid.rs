//! The 1 km analysis raster.
//!
//! Cells are indexed row-major: `cell_index = iy * n_x + ix`, with projected
//! coordinates `x = origin.0 + ix * 1000`, `y = origin.1 + iy * 1000`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CELL_SIZE_M: f64 = 1000.0;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub lon: f64,
    pub lat: f64,
    pub elevation_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    n_x: usize,
    n_y: usize,
    origin: (f64, f64),
    cells: Vec<GridPoint>,
}

#[derive(Debug, Deserialize, Serialize)]
struct GridRow {
    cell_index: usize,
    x: f64,
    y: f64,
    lon: f64,
    lat: f64,
    elevation_m: f64,
}

impl GridSpec {
    /// Builds a grid from per-cell points in cell-index order.
    pub fn new(n_x: usize, n_y: usize, origin: (f64, f64), cells: Vec<GridPoint>) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::Invalid("grid dimensions must be positive".into()));
        }
        if cells.len() != n_x * n_y {
            return Err(Error::Invalid(format!(
                "grid {n_x}x{n_y} needs {} cells, got {}",
                n_x * n_y,
                cells.len()
            )));
        }
        let grid = GridSpec {
            n_x,
            n_y,
            origin,
            cells,
        };
        for (i, c) in grid.cells.iter().enumerate() {
            let (ex, ey) = grid.projected(i);
            if (c.x - ex).abs() > 1e-6 || (c.y - ey).abs() > 1e-6 {
                return Err(Error::Invalid(format!(
                    "cell {i} at ({}, {}) is off the 1 km lattice, expected ({ex}, {ey})",
                    c.x, c.y
                )));
            }
            if ![c.lon, c.lat, c.elevation_m].iter().all(|v| v.is_finite()) {
                return Err(Error::Invalid(format!("cell {i} has non-finite metadata")));
            }
        }
        Ok(grid)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_size_m(&self) -> f64 {
        CELL_SIZE_M
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cell(&self, index: usize) -> Option<&GridPoint> {
        self.cells.get(index)
    }

    pub fn cells(&self) -> &[GridPoint] {
        &self.cells
    }

    pub fn contains(&self, index: usize) -> bool {
        index < self.cells.len()
    }

    pub fn index_of(&self, ix: usize, iy: usize) -> Option<usize> {
        (ix < self.n_x && iy < self.n_y).then_some(iy * self.n_x + ix)
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index % self.n_x, index / self.n_x)
    }

    fn projected(&self, index: usize) -> (f64, f64) {
        let (ix, iy) = self.position(index);
        (
            self.origin.0 + ix as f64 * CELL_SIZE_M,
            self.origin.1 + iy as f64 * CELL_SIZE_M,
        )
    }

    /// Cells whose lattice offset `(dx, dy)` from `index` satisfies
    /// `dx² + dy² <= radius_cells²`, including `index` itself.
    pub fn neighbors_within(&self, index: usize, radius_cells: f64) -> Vec<usize> {
        let (ix, iy) = self.position(index);
        let r = radius_cells.floor() as isize;
        let r2 = radius_cells * radius_cells;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if (dx * dx + dy * dy) as f64 > r2 + 1e-9 {
                    continue;
                }
                let (nx, ny) = (ix as isize + dx, iy as isize + dy);
                if nx < 0 || ny < 0 {
                    continue;
                }
                if let Some(j) = self.index_of(nx as usize, ny as usize) {
                    out.push(j);
                }
            }
        }
        out
    }

    /// The 3x3 block centred on `index` (clipped at the grid border).
    pub fn moore_neighborhood(&self, index: usize) -> Vec<usize> {
        let (ix, iy) = self.position(index);
        let mut out = Vec::with_capacity(9);
        for ny in iy.saturating_sub(1)..=(iy + 1).min(self.n_y - 1) {
            for nx in ix.saturating_sub(1)..=(ix + 1).min(self.n_x - 1) {
                out.push(ny * self.n_x + nx);
            }
        }
        out
    }

    /// Nearest cell centre to a geographic position, or `None` when the
    /// position lies more than one cell width from every centre.
    pub fn nearest_cell(&self, lon: f64, lat: f64) -> Option<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.cells.iter().enumerate() {
            let d = ground_distance_m(lon, lat, c.lon, c.lat);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        best.filter(|_| best_d <= CELL_SIZE_M)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Schema {
                path: path.into(),
                message: e.to_string(),
            })?;
        let headers = rdr.headers()?.clone();
        let expected = ["cell_index", "x", "y", "lon", "lat", "elevation_m"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schema {
                path: path.into(),
                message: format!(
                    "expected header {:?}, got {:?}",
                    expected.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<GridRow>().enumerate() {
            let row = rec.map_err(|e| Error::row(path, i + 2, e.to_string()))?;
            rows.push((i + 2, row));
        }
        if rows.is_empty() {
            return Err(Error::Schema {
                path: path.into(),
                message: "grid has no cells".into(),
            });
        }
        let min_x = rows.iter().map(|(_, r)| r.x).fold(f64::INFINITY, f64::min);
        let min_y = rows.iter().map(|(_, r)| r.y).fold(f64::INFINITY, f64::min);
        let max_x = rows.iter().map(|(_, r)| r.x).fold(f64::NEG_INFINITY, f64::max);
        let max_y = rows.iter().map(|(_, r)| r.y).fold(f64::NEG_INFINITY, f64::max);
        let n_x = ((max_x - min_x) / CELL_SIZE_M).round() as usize + 1;
        let n_y = ((max_y - min_y) / CELL_SIZE_M).round() as usize + 1;
        if rows.len() != n_x * n_y {
            return Err(Error::Schema {
                path: path.into(),
                message: format!(
                    "{} rows do not fill the {n_x}x{n_y} lattice spanned by the coordinates",
                    rows.len()
                ),
            });
        }
        let mut cells: Vec<Option<GridPoint>> = vec![None; n_x * n_y];
        for (line, r) in rows {
            if r.cell_index >= cells.len() {
                return Err(Error::row(
                    path,
                    line,
                    format!("cell_index {} out of range", r.cell_index),
                ));
            }
            if cells[r.cell_index].is_some() {
                return Err(Error::row(
                    path,
                    line,
                    format!("duplicate cell_index {}", r.cell_index),
                ));
            }
            cells[r.cell_index] = Some(GridPoint {
                x: r.x,
                y: r.y,
                lon: r.lon,
                lat: r.lat,
                elevation_m: r.elevation_m,
            });
        }
        let cells = cells.into_iter().map(|c| c.expect("filled")).collect();
        GridSpec::new(n_x, n_y, (min_x, min_y), cells).map_err(|e| Error::Schema {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (i, c) in self.cells.iter().enumerate() {
            w.serialize(GridRow {
                cell_index: i,
                x: c.x,
                y: c.y,
                lon: c.lon,
                lat: c.lat,
                elevation_m: c.elevation_m,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// A regular grid with geographic coordinates laid out around
    /// `(lon0, lat0)` at 1 km spacing; elevations from `elevation(ix, iy)`.
    pub fn regular(
        n_x: usize,
        n_y: usize,
        lon0: f64,
        lat0: f64,
        elevation: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let deg_lat = CELL_SIZE_M / (EARTH_RADIUS_M.to_radians());
        let deg_lon = deg_lat / lat0.to_radians().cos();
        let mut cells = Vec::with_capacity(n_x * n_y);
        for iy in 0..n_y {
            for ix in 0..n_x {
                cells.push(GridPoint {
                    x: ix as f64 * CELL_SIZE_M,
                    y: iy as f64 * CELL_SIZE_M,
                    lon: lon0 + ix as f64 * deg_lon,
                    lat: lat0 + iy as f64 * deg_lat,
                    elevation_m: elevation(ix, iy),
                });
            }
        }
        GridSpec::new(n_x, n_y, (0.0, 0.0), cells)
    }
}

/// Equirectangular ground distance in metres; accurate at grid scales.
pub fn ground_distance_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let mean_lat = (0.5 * (lat1 + lat2)).to_radians();
    let dx = (lon2 - lon1).to_radians() * mean_lat.cos();
    let dy = (lat2 - lat1).to_radians();
    EARTH_RADIUS_M * (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_x: usize, n_y: usize) -> GridSpec {
        GridSpec::regular(n_x, n_y, 13.0, 47.5, |_, _| 400.0).unwrap()
    }

    #[test]
    fn row_major_indexing() {
        let g = grid(4, 3);
        assert_eq!(g.n_cells(), 12);
        assert_eq!(g.index_of(1, 2), Some(9));
        assert_eq!(g.position(9), (1, 2));
        assert_eq!(g.index_of(4, 0), None);
    }

    #[test]
    fn moore_neighborhood_clips_border() {
        let g = grid(4, 3);
        assert_eq!(g.moore_neighborhood(5).len(), 9);
        assert_eq!(g.moore_neighborhood(0), vec![0, 1, 4, 5]);
    }

    #[test]
    fn two_km_radius() {
        let g = grid(7, 7);
        let n = g.neighbors_within(g.index_of(3, 3).unwrap(), 2.0);
        // centre, 4 at distance 1, 4 diagonals, 4 at distance 2
        assert_eq!(n.len(), 13);
    }

    #[test]
    fn nearest_cell_and_bounds() {
        let g = grid(5, 5);
        let c = *g.cell(7).unwrap();
        assert_eq!(g.nearest_cell(c.lon + 1e-4, c.lat - 1e-4), Some(7));
        assert_eq!(g.nearest_cell(c.lon + 1.0, c.lat), None);
        // neighbouring centres are one cell apart
        let d = g.cell(8).unwrap();
        let dist = ground_distance_m(c.lon, c.lat, d.lon, d.lat);
        assert!((dist - 1000.0).abs() < 1.0, "{dist}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        let g = grid(3, 2);
        g.write_csv(&p).unwrap();
        assert_eq!(GridSpec::read_csv(&p).unwrap(), g);
    }

    #[test]
    fn rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        std::fs::write(&p, "cell,x,y,lon,lat,elev\n0,0,0,13,47,100\n").unwrap();
        assert!(matches!(GridSpec::read_csv(&p), Err(Error::Schema { .. })));
    }
}
