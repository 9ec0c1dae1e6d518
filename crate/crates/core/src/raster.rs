//! ESRI ASCII grid parsing, normalized-difference indices, point sampling and
//! gap filling of per-tree index time series.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

use crate::calendar::YearRange;

pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing header key `{0}`")]
    MissingHeader(String),
    #[error("cell count mismatch: header declares {expected}, found {found}")]
    CellCount { expected: usize, found: usize },
    #[error("grid shape/georeference mismatch: {0}")]
    GridMismatch(String),
    #[error("index {index} requires band `{band}`")]
    MissingBand { index: IndexKind, band: Band },
    #[error("point ({y}, {x}) outside grid extent x[{x0}, {x1}] y[{y0}, {y1}]")]
    OutOfExtent { x: f64, y: f64, x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("duplicate sample for {0}")]
    DuplicateSample(NaiveDate),
    #[error("tree `{tree_id}` {kind}: {found} usable samples in range, need at least 2")]
    TooFewSamples { tree_id: String, kind: IndexKind, found: usize },
    #[error("unknown index kind `{0}`")]
    UnknownIndexKind(String),
    #[error("unknown band `{0}`")]
    UnknownBand(String),
}

/// Normalized-difference vegetation indices supported by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum IndexKind {
    Ndvi,
    Ndwi,
    Ndmi,
}

impl IndexKind {
    pub const ALL: [IndexKind; 3] = [IndexKind::Ndvi, IndexKind::Ndwi, IndexKind::Ndmi];

    /// Band pair (a, b) feeding `(a - b) / (a + b)`.
    pub fn bands(self) -> (Band, Band) {
        match self {
            IndexKind::Ndvi => (Band::Nir, Band::Red),
            IndexKind::Ndwi => (Band::Green, Band::Nir),
            IndexKind::Ndmi => (Band::Nir, Band::Swir),
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            IndexKind::Ndvi => "NDVI",
            IndexKind::Ndwi => "NDWI",
            IndexKind::Ndmi => "NDMI",
        };
        f.write_str(name)
    }
}

impl FromStr for IndexKind {
    type Err = RasterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NDVI" => Ok(IndexKind::Ndvi),
            "NDWI" => Ok(IndexKind::Ndwi),
            "NDMI" => Ok(IndexKind::Ndmi),
            other => Err(RasterError::UnknownIndexKind(other.to_string())),
        }
    }
}

/// Spectral bands used to compute the indices locally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Band {
    Nir,
    Red,
    Green,
    Swir,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Band::Nir => "NIR",
            Band::Red => "RED",
            Band::Green => "GREEN",
            Band::Swir => "SWIR",
        };
        f.write_str(name)
    }
}

impl FromStr for Band {
    type Err = RasterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NIR" => Ok(Band::Nir),
            "RED" => Ok(Band::Red),
            "GREEN" => Ok(Band::Green),
            "SWIR" => Ok(Band::Swir),
            other => Err(RasterError::UnknownBand(other.to_string())),
        }
    }
}

/// Georeferenced grid of band or index values, row-major with the top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct BandGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xll: f64,
    pub yll: f64,
    pub cellsize: f64,
    pub nodata: f64,
    cells: Vec<Option<f64>>,
}

impl BandGrid {
    pub fn new(
        ncols: usize,
        nrows: usize,
        xll: f64,
        yll: f64,
        cellsize: f64,
        nodata: f64,
        cells: Vec<Option<f64>>,
    ) -> Result<Self, RasterError> {
        if cells.len() != ncols * nrows {
            return Err(RasterError::CellCount {
                expected: ncols * nrows,
                found: cells.len(),
            });
        }
        assert!(cellsize > 0.0, "cellsize must be positive");
        Ok(Self { ncols, nrows, xll, yll, cellsize, nodata, cells })
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }

    /// Cell value by (row, col) with row 0 at the top.
    pub fn cell(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.ncols + col]
    }

    pub fn x_max(&self) -> f64 {
        self.xll + self.cellsize * self.ncols as f64
    }

    pub fn y_max(&self) -> f64 {
        self.yll + self.cellsize * self.nrows as f64
    }

    fn same_georeference(&self, other: &BandGrid) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.xll == other.xll
            && self.yll == other.yll
            && self.cellsize == other.cellsize
    }

    /// Serializes back to the ESRI ASCII layout; round-trips cell-exact.
    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("ncols {}\n", self.ncols));
        out.push_str(&format!("nrows {}\n", self.nrows));
        out.push_str(&format!("xllcorner {}\n", self.xll));
        out.push_str(&format!("yllcorner {}\n", self.yll));
        out.push_str(&format!("cellsize {}\n", self.cellsize));
        out.push_str(&format!("NODATA_value {}\n", self.nodata));
        for row in 0..self.nrows {
            let line: Vec<String> = (0..self.ncols)
                .map(|col| match self.cell(row, col) {
                    Some(v) => v.to_string(),
                    None => self.nodata.to_string(),
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// One raster reading at a tree on a date; `None` where clouds or sensor
/// nodata obscured the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSample {
    pub date: NaiveDate,
    pub kind: IndexKind,
    pub value: Option<f64>,
}

/// Gap-filled daily index values for one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    pub tree_id: String,
    pub kind: IndexKind,
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
}

/// Parses an ESRI ASCII grid.
///
/// Header keys are matched case-insensitively; `NODATA_value` is optional and
/// defaults to -9999.
pub fn parse_ascii_grid(text: &str) -> Result<BandGrid, RasterError> {
    let mut ncols: Option<usize> = None;
    let mut nrows: Option<usize> = None;
    let mut xll: Option<f64> = None;
    let mut yll: Option<f64> = None;
    let mut cellsize: Option<f64> = None;
    let mut nodata: Option<f64> = None;

    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut in_header = true;
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if in_header && trimmed.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_lowercase();
            let value = parts.next().ok_or_else(|| RasterError::Parse {
                line: line_no,
                message: format!("header key `{key}` has no value"),
            })?;
            let parse_f64 = |v: &str| {
                v.parse::<f64>().map_err(|_| RasterError::Parse {
                    line: line_no,
                    message: format!("`{v}` is not a number"),
                })
            };
            match key.as_str() {
                "ncols" => {
                    ncols = Some(value.parse().map_err(|_| RasterError::Parse {
                        line: line_no,
                        message: format!("`{value}` is not a positive integer"),
                    })?)
                }
                "nrows" => {
                    nrows = Some(value.parse().map_err(|_| RasterError::Parse {
                        line: line_no,
                        message: format!("`{value}` is not a positive integer"),
                    })?)
                }
                "xllcorner" => xll = Some(parse_f64(value)?),
                "yllcorner" => yll = Some(parse_f64(value)?),
                "cellsize" => cellsize = Some(parse_f64(value)?),
                "nodata_value" => nodata = Some(parse_f64(value)?),
                other => {
                    return Err(RasterError::Parse {
                        line: line_no,
                        message: format!("unknown header key `{other}`"),
                    })
                }
            }
            continue;
        }
        in_header = false;
        let nodata_value = nodata.unwrap_or(DEFAULT_NODATA);
        for token in trimmed.split_whitespace() {
            let value: f64 = token.parse().map_err(|_| RasterError::Parse {
                line: line_no,
                message: format!("non-numeric cell `{token}`"),
            })?;
            cells.push(if value == nodata_value { None } else { Some(value) });
        }
    }

    let ncols = ncols.ok_or_else(|| RasterError::MissingHeader("ncols".into()))?;
    let nrows = nrows.ok_or_else(|| RasterError::MissingHeader("nrows".into()))?;
    let xll = xll.ok_or_else(|| RasterError::MissingHeader("xllcorner".into()))?;
    let yll = yll.ok_or_else(|| RasterError::MissingHeader("yllcorner".into()))?;
    let cellsize = cellsize.ok_or_else(|| RasterError::MissingHeader("cellsize".into()))?;
    if cellsize <= 0.0 {
        return Err(RasterError::Parse {
            line: 0,
            message: format!("cellsize {cellsize} must be positive"),
        });
    }
    BandGrid::new(ncols, nrows, xll, yll, cellsize, nodata.unwrap_or(DEFAULT_NODATA), cells)
}

/// Cellwise `(a - b) / (a + b)`; missing where either input is missing or the
/// denominator is zero.
pub fn normalized_difference(a: &BandGrid, b: &BandGrid) -> Result<BandGrid, RasterError> {
    if !a.same_georeference(b) {
        return Err(RasterError::GridMismatch(format!(
            "{}x{} vs {}x{}",
            a.ncols, a.nrows, b.ncols, b.nrows
        )));
    }
    let cells = a
        .cells
        .iter()
        .zip(&b.cells)
        .map(|(&x, &y)| match (x, y) {
            (Some(x), Some(y)) if x + y != 0.0 => Some((x - y) / (x + y)),
            _ => None,
        })
        .collect();
    BandGrid::new(a.ncols, a.nrows, a.xll, a.yll, a.cellsize, a.nodata, cells)
}

/// Computes a vegetation index from its required bands.
pub fn compute_index(
    kind: IndexKind,
    bands: &BTreeMap<Band, BandGrid>,
) -> Result<BandGrid, RasterError> {
    let (a, b) = kind.bands();
    let grid_a = bands.get(&a).ok_or(RasterError::MissingBand { index: kind, band: a })?;
    let grid_b = bands.get(&b).ok_or(RasterError::MissingBand { index: kind, band: b })?;
    normalized_difference(grid_a, grid_b)
}

/// Nearest-neighbor sample at a point (`y` northing/latitude, `x` easting/
/// longitude). Points exactly on a boundary midline resolve to the cell with
/// the lower row / lower column index.
pub fn sample_at(grid: &BandGrid, y: f64, x: f64) -> Result<Option<f64>, RasterError> {
    let t = (x - grid.xll) / grid.cellsize;
    let u = (y - grid.yll) / grid.cellsize;
    if t < 0.0 || t > grid.ncols as f64 || u < 0.0 || u > grid.nrows as f64 {
        return Err(RasterError::OutOfExtent {
            x,
            y,
            x0: grid.xll,
            x1: grid.x_max(),
            y0: grid.yll,
            y1: grid.y_max(),
        });
    }
    // Columns: a point on the boundary between columns k-1 and k belongs to
    // k-1 (lower column index), hence ceil - 1.
    let col = (t.ceil() as isize - 1).max(0) as usize;
    let col = col.min(grid.ncols - 1);
    // Rows: the tie goes to the upper cell, which has the lower top-first row
    // index; floor picks the cell above the boundary.
    let row_from_bottom = (u.floor() as usize).min(grid.nrows - 1);
    let row = grid.nrows - 1 - row_from_bottom;
    Ok(grid.cell(row, col))
}

/// Builds a gap-free daily series from sparse samples of one tree and kind.
///
/// Gaps between usable samples are linearly interpolated; before the first
/// and after the last usable sample the nearest value is held.
pub fn build_index_series(
    tree_id: &str,
    kind: IndexKind,
    samples: &[IndexSample],
    range: YearRange,
) -> Result<IndexSeries, RasterError> {
    let mut usable: Vec<(NaiveDate, f64)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for sample in samples {
        debug_assert_eq!(sample.kind, kind);
        if range.day_index(sample.date).is_none() {
            continue;
        }
        if !seen.insert(sample.date) {
            return Err(RasterError::DuplicateSample(sample.date));
        }
        if let Some(value) = sample.value {
            usable.push((sample.date, value));
        }
    }
    usable.sort_by_key(|(date, _)| *date);
    if usable.len() < 2 {
        return Err(RasterError::TooFewSamples {
            tree_id: tree_id.to_string(),
            kind,
            found: usable.len(),
        });
    }

    let mut values = Vec::with_capacity(range.num_days());
    let mut cursor = 0usize; // index of the first usable sample with date >= day
    for day in range.days() {
        while cursor < usable.len() && usable[cursor].0 < day {
            cursor += 1;
        }
        let value = if cursor == 0 {
            usable[0].1
        } else if cursor == usable.len() {
            usable[usable.len() - 1].1
        } else if usable[cursor].0 == day {
            usable[cursor].1
        } else {
            let (d0, v0) = usable[cursor - 1];
            let (d1, v1) = usable[cursor];
            let span = (d1 - d0).num_days() as f64;
            let offset = (day - d0).num_days() as f64;
            v0 + (v1 - v0) * offset / span
        };
        values.push(value);
    }

    Ok(IndexSeries {
        tree_id: tree_id.to_string(),
        kind,
        start_date: range.start_date(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn uniform_grid(ncols: usize, nrows: usize, value: f64) -> BandGrid {
        BandGrid::new(ncols, nrows, 0.0, 0.0, 1.0, DEFAULT_NODATA, vec![Some(value); ncols * nrows])
            .unwrap()
    }

    #[test]
    fn parse_reads_cells_row_major() {
        let text = "ncols 2\nnrows 2\nxllcorner 0.0\nyllcorner 0.0\ncellsize 1.0\n1 2\n3 4\n";
        let grid = parse_ascii_grid(text).unwrap();
        assert_eq!(grid.cells(), &[Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
        assert_eq!(grid.nodata, DEFAULT_NODATA);
    }

    #[test]
    fn parse_marks_nodata_cells_missing() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n-9999 5\n";
        let grid = parse_ascii_grid(text).unwrap();
        assert_eq!(grid.cells(), &[None, Some(5.0)]);
    }

    #[test]
    fn parse_rejects_cell_count_mismatch() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n";
        let err = parse_ascii_grid(text).unwrap_err();
        assert!(matches!(err, RasterError::CellCount { expected: 6, found: 4 }));
    }

    #[test]
    fn parse_rejects_non_numeric_cell_with_line() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 oops\n";
        let err = parse_ascii_grid(text).unwrap_err();
        match err {
            RasterError::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn parse_requires_header_keys() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\ncellsize 1\n1 2\n";
        let err = parse_ascii_grid(text).unwrap_err();
        assert!(matches!(err, RasterError::MissingHeader(k) if k == "yllcorner"));
    }

    #[test]
    fn ascii_round_trip_is_cell_exact() {
        let text = "ncols 3\nnrows 2\nxllcorner -72.19\nyllcorner 42.53\ncellsize 0.0001\nNODATA_value -9999\n0.123456789012345 -9999 0.5\n1 2 3\n";
        let grid = parse_ascii_grid(text).unwrap();
        let reparsed = parse_ascii_grid(&grid.to_ascii()).unwrap();
        assert_eq!(grid, reparsed);
    }

    #[test]
    fn normalized_difference_arithmetic() {
        let a = uniform_grid(1, 1, 0.5);
        let b = uniform_grid(1, 1, 0.25);
        let nd = normalized_difference(&a, &b).unwrap();
        assert!((nd.cell(0, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let same = normalized_difference(&a, &a).unwrap();
        assert_eq!(same.cell(0, 0), Some(0.0));

        let zero = uniform_grid(1, 1, 0.0);
        let undefined = normalized_difference(&zero, &zero).unwrap();
        assert_eq!(undefined.cell(0, 0), None);
    }

    #[test]
    fn normalized_difference_rejects_mismatched_grids() {
        let a = uniform_grid(2, 1, 0.5);
        let b = uniform_grid(1, 2, 0.5);
        assert!(matches!(
            normalized_difference(&a, &b),
            Err(RasterError::GridMismatch(_))
        ));
    }

    #[test]
    fn compute_index_band_wiring() {
        let mut bands = BTreeMap::new();
        bands.insert(Band::Nir, uniform_grid(1, 1, 0.6));
        bands.insert(Band::Red, uniform_grid(1, 1, 0.2));
        let ndvi = compute_index(IndexKind::Ndvi, &bands).unwrap();
        assert!((ndvi.cell(0, 0).unwrap() - 0.5).abs() < 1e-15);

        bands.insert(Band::Green, uniform_grid(1, 1, 0.6));
        let ndwi = compute_index(IndexKind::Ndwi, &bands).unwrap();
        assert_eq!(ndwi.cell(0, 0), Some(0.0));

        let err = compute_index(IndexKind::Ndmi, &bands).unwrap_err();
        assert!(matches!(err, RasterError::MissingBand { band: Band::Swir, .. }));
    }

    #[test]
    fn sample_single_cell_grid() {
        let grid = uniform_grid(1, 1, 7.0);
        assert_eq!(sample_at(&grid, 0.25, 0.75).unwrap(), Some(7.0));
        assert_eq!(sample_at(&grid, 1.0, 1.0).unwrap(), Some(7.0));
    }

    #[test]
    fn sample_boundary_ties_prefer_lower_indices() {
        // 2x2 grid, cells valued by (row, col) position: top row 0,1; bottom 2,3.
        let grid = BandGrid::new(
            2, 2, 0.0, 0.0, 1.0, DEFAULT_NODATA,
            vec![Some(0.0), Some(1.0), Some(2.0), Some(3.0)],
        )
        .unwrap();
        // Vertical midline x=1: lower column index wins.
        assert_eq!(sample_at(&grid, 0.5, 1.0).unwrap(), Some(2.0));
        assert_eq!(sample_at(&grid, 1.5, 1.0).unwrap(), Some(0.0));
        // Horizontal midline y=1: lower (top-first) row index wins.
        assert_eq!(sample_at(&grid, 1.0, 0.5).unwrap(), Some(0.0));
        assert_eq!(sample_at(&grid, 1.0, 1.5).unwrap(), Some(1.0));
    }

    #[test]
    fn sample_outside_extent_errors() {
        let grid = uniform_grid(1, 1, 7.0);
        assert!(matches!(
            sample_at(&grid, 0.5, 2.0),
            Err(RasterError::OutOfExtent { .. })
        ));
        assert!(matches!(
            sample_at(&grid, -0.5, 0.5),
            Err(RasterError::OutOfExtent { .. })
        ));
    }

    #[test]
    fn sample_nodata_cell_is_missing() {
        let grid = BandGrid::new(1, 1, 0.0, 0.0, 1.0, DEFAULT_NODATA, vec![None]).unwrap();
        assert_eq!(sample_at(&grid, 0.5, 0.5).unwrap(), None);
    }

    fn sample(date: NaiveDate, value: Option<f64>) -> IndexSample {
        IndexSample { date, kind: IndexKind::Ndvi, value }
    }

    #[test]
    fn series_midpoint_interpolation() {
        let range = YearRange::new(2015, 2015);
        let samples = vec![
            sample(d(2015, 1, 1), Some(0.8)),
            sample(d(2015, 1, 5), Some(0.2)),
        ];
        let series = build_index_series("T1", IndexKind::Ndvi, &samples, range).unwrap();
        assert!((series.values[2] - 0.5).abs() < 1e-15); // Jan 3
        assert_eq!(series.values[0], 0.8);
        assert_eq!(series.values[4], 0.2);
        // held at the edges
        assert_eq!(series.values[10], 0.2);
    }

    #[test]
    fn series_ignores_missing_samples_in_interpolation() {
        let range = YearRange::new(2015, 2015);
        let samples = vec![
            sample(d(2015, 1, 1), Some(0.8)),
            sample(d(2015, 1, 3), None),
            sample(d(2015, 1, 5), Some(0.2)),
        ];
        let series = build_index_series("T1", IndexKind::Ndvi, &samples, range).unwrap();
        assert!((series.values[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn series_requires_two_usable_samples() {
        let range = YearRange::new(2015, 2015);
        let samples = vec![sample(d(2015, 1, 1), Some(0.8)), sample(d(2015, 1, 3), None)];
        let err = build_index_series("T1", IndexKind::Ndvi, &samples, range).unwrap_err();
        assert!(matches!(err, RasterError::TooFewSamples { found: 1, .. }));
    }

    proptest! {
        /// nd(a, b) == -nd(b, a) where defined.
        #[test]
        fn normalized_difference_antisymmetry(
            a in proptest::collection::vec(0.0f64..2.0, 4),
            b in proptest::collection::vec(0.0f64..2.0, 4),
        ) {
            let ga = BandGrid::new(2, 2, 0.0, 0.0, 1.0, DEFAULT_NODATA, a.into_iter().map(Some).collect()).unwrap();
            let gb = BandGrid::new(2, 2, 0.0, 0.0, 1.0, DEFAULT_NODATA, b.into_iter().map(Some).collect()).unwrap();
            let ab = normalized_difference(&ga, &gb).unwrap();
            let ba = normalized_difference(&gb, &ga).unwrap();
            for (x, y) in ab.cells().iter().zip(ba.cells()) {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x + y).abs() < 1e-12),
                    (None, None) => {}
                    _ => prop_assert!(false, "definedness must match"),
                }
                if let Some(x) = x {
                    prop_assert!((-1.0..=1.0).contains(x), "index in [-1,1] for non-negative bands");
                }
            }
        }

        /// Padding rows/columns that do not contain the point's nearest cell
        /// leaves the sampled value unchanged.
        #[test]
        fn sampling_invariant_under_padding(x in 0.01f64..1.99, y in 0.01f64..1.99) {
            let base = BandGrid::new(
                2, 2, 0.0, 0.0, 1.0, DEFAULT_NODATA,
                vec![Some(0.0), Some(1.0), Some(2.0), Some(3.0)],
            ).unwrap();
            // Pad one column to the right and one row on top.
            let padded = BandGrid::new(
                3, 3, 0.0, 0.0, 1.0, DEFAULT_NODATA,
                vec![
                    Some(9.0), Some(9.0), Some(9.0),
                    Some(0.0), Some(1.0), Some(9.0),
                    Some(2.0), Some(3.0), Some(9.0),
                ],
            ).unwrap();
            prop_assert_eq!(sample_at(&base, y, x).unwrap(), sample_at(&padded, y, x).unwrap());
        }

        /// Random sparse fixtures match a brute-force per-day linear filler.
        #[test]
        fn series_matches_brute_force(
            samples in proptest::collection::btree_map(0u32..365, proptest::option::of(-1.0f64..1.0), 2..20)
        ) {
            let range = YearRange::new(2015, 2015);
            let fixtures: Vec<IndexSample> = samples
                .iter()
                .map(|(&offset, &value)| sample(
                    d(2015, 1, 1).checked_add_days(chrono::Days::new(u64::from(offset))).unwrap(),
                    value,
                ))
                .collect();
            let usable: Vec<(NaiveDate, f64)> = fixtures
                .iter()
                .filter_map(|s| s.value.map(|v| (s.date, v)))
                .collect();
            prop_assume!(usable.len() >= 2);

            let series = build_index_series("T1", IndexKind::Ndvi, &fixtures, range).unwrap();

            // Brute force: scan all days, hold at edges, lerp between.
            for (i, day) in range.days().enumerate() {
                let expected = if day <= usable[0].0 {
                    usable[0].1
                } else if day >= usable[usable.len() - 1].0 {
                    usable[usable.len() - 1].1
                } else {
                    let hi = usable.iter().position(|(date, _)| *date >= day).unwrap();
                    let (d1, v1) = usable[hi];
                    if d1 == day {
                        v1
                    } else {
                        let (d0, v0) = usable[hi - 1];
                        v0 + (v1 - v0) * (day - d0).num_days() as f64 / (d1 - d0).num_days() as f64
                    }
                };
                prop_assert_eq!(series.values[i], expected);
            }
        }
    }
}
