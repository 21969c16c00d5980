//! Study-region geometry: point patterns, grids, cell assignment and
//! covariate preprocessing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned bounding box `(xmin, xmax, ymin, ymax)` in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let bbox = Self { xmin, xmax, ymin, ymax };
        if ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!("non-finite bounding box {bbox:?}")));
        }
        if xmax <= xmin || ymax <= ymin {
            return Err(Error::Geometry(format!("degenerate bounding box {bbox:?}")));
        }
        Ok(bbox)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    fn enclosing(points: impl Iterator<Item = Point>) -> Option<Self> {
        let mut it = points.peekable();
        it.peek()?;
        let (mut xmin, mut xmax, mut ymin, mut ymax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in it {
            xmin = xmin.min(p.x);
            xmax = xmax.max(p.x);
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
        Some(Self { xmin, xmax, ymin, ymax })
    }
}

/// An ordered set of locations in km. Patterns read against a membership grid
/// also carry the cell id of every point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointPattern {
    pub points: Vec<Point>,
    pub cell_ids: Option<Vec<usize>>,
    pub region_id: String,
}

impl PointPattern {
    pub fn new(points: Vec<Point>, region_id: impl Into<String>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Geometry(format!("point {i} has non-finite coordinates")));
        }
        Ok(Self {
            points,
            cell_ids: None,
            region_id: region_id.into(),
        })
    }

    pub fn with_cell_ids(mut self, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.points.len() {
            return Err(Error::Dimension(format!(
                "{} cell ids for {} points",
                ids.len(),
                self.points.len()
            )));
        }
        self.cell_ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-pattern made of the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            cell_ids: self
                .cell_ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i]).collect()),
            region_id: self.region_id.clone(),
        }
    }
}

/// Theft locations with their recovery locations; unrecovered thefts carry `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedPattern {
    pub ids: Vec<String>,
    pub thefts: Vec<Point>,
    pub recoveries: Vec<Option<Point>>,
}

impl PairedPattern {
    pub fn new(ids: Vec<String>, thefts: Vec<Point>, recoveries: Vec<Option<Point>>) -> Result<Self> {
        if ids.len() != thefts.len() || recoveries.len() != thefts.len() {
            return Err(Error::Dimension(format!(
                "{} ids, {} thefts, {} recovery marks",
                ids.len(),
                thefts.len(),
                recoveries.len()
            )));
        }
        let bad = thefts
            .iter()
            .chain(recoveries.iter().flatten())
            .position(|p| !p.is_finite());
        if let Some(i) = bad {
            return Err(Error::Geometry(format!("pair coordinate {i} is not finite")));
        }
        Ok(Self { ids, thefts, recoveries })
    }

    /// Pairs from parallel theft and recovery sequences, ids `0..m`.
    pub fn complete(thefts: Vec<Point>, recoveries: Vec<Point>) -> Result<Self> {
        let ids = (0..thefts.len()).map(|i| i.to_string()).collect();
        Self::new(ids, thefts, recoveries.into_iter().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.thefts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thefts.is_empty()
    }

    /// Indices of the thefts with an observed recovery.
    pub fn complete_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.recoveries[i].is_some()).collect()
    }

    /// `(theft, recovery)` for every complete pair, in order.
    pub fn complete_pairs(&self) -> Vec<(Point, Point)> {
        self.thefts
            .iter()
            .zip(&self.recoveries)
            .filter_map(|(t, r)| r.map(|r| (*t, r)))
            .collect()
    }

    pub fn theft_pattern(&self) -> PointPattern {
        PointPattern {
            points: self.thefts.clone(),
            cell_ids: None,
            region_id: String::new(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            thefts: indices.iter().map(|&i| self.thefts[i]).collect(),
            recoveries: indices.iter().map(|&i| self.recoveries[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub representative: Point,
    pub raw_area: f64,
    pub std_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridKind {
    Regular { nx: usize, ny: usize },
    Membership,
}

/// K cells with representative points and areas standardized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells: Vec<Cell>,
    pub bbox: BBox,
    pub kind: GridKind,
}

impl GridSpec {
    /// Regular `nx × ny` partition of `bbox`; cell `k = iy·nx + ix`.
    pub fn regular(bbox: BBox, nx: usize, ny: usize) -> Result<Self> {
        let bbox = BBox::new(bbox.xmin, bbox.xmax, bbox.ymin, bbox.ymax)?;
        if nx == 0 || ny == 0 {
            return Err(Error::Geometry(format!("grid needs nx, ny >= 1 (got {nx}x{ny})")));
        }
        let k = nx * ny;
        let w = bbox.width() / nx as f64;
        let h = bbox.height() / ny as f64;
        let std_area = 1.0 / k as f64;
        let cells = (0..k)
            .map(|id| {
                let (ix, iy) = (id % nx, id / nx);
                Cell {
                    id,
                    representative: Point::new(
                        bbox.xmin + (ix as f64 + 0.5) * w,
                        bbox.ymin + (iy as f64 + 0.5) * h,
                    ),
                    raw_area: w * h,
                    std_area,
                }
            })
            .collect();
        Ok(Self {
            cells,
            bbox,
            kind: GridKind::Regular { nx, ny },
        })
    }

    /// Grid over irregular blocks given as a membership table. Representative
    /// points come from `representatives` when supplied, otherwise from the
    /// centroid of the points of `pattern` falling in each block.
    pub fn from_membership(
        areas: &[f64],
        representatives: Option<Vec<Point>>,
        pattern: Option<&PointPattern>,
    ) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::Geometry("membership grid needs at least one cell".into()));
        }
        if let Some((i, a)) = areas.iter().enumerate().find(|(_, a)| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::Geometry(format!("cell {i} has nonpositive area {a}")));
        }
        let k = areas.len();
        let reps = match representatives {
            Some(reps) => {
                if reps.len() != k {
                    return Err(Error::Dimension(format!(
                        "{} representative points for {k} cells",
                        reps.len()
                    )));
                }
                reps
            }
            None => {
                let pattern = pattern.ok_or_else(|| {
                    Error::Geometry("membership grid needs representative points or a pattern".into())
                })?;
                let ids = pattern.cell_ids.as_ref().ok_or_else(|| {
                    Error::Geometry("pattern carries no cell ids for a membership grid".into())
                })?;
                let mut sums = vec![(0.0, 0.0, 0usize); k];
                for (i, (p, &c)) in pattern.points.iter().zip(ids).enumerate() {
                    let s = sums.get_mut(c).ok_or_else(|| {
                        Error::Geometry(format!("point {i} references missing cell id {c}"))
                    })?;
                    s.0 += p.x;
                    s.1 += p.y;
                    s.2 += 1;
                }
                sums.iter()
                    .enumerate()
                    .map(|(c, &(sx, sy, n))| {
                        if n == 0 {
                            Err(Error::Geometry(format!(
                                "cell {c} has no points and no representative point"
                            )))
                        } else {
                            Ok(Point::new(sx / n as f64, sy / n as f64))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        if let Some(i) = reps.iter().position(|p| !p.is_finite()) {
            return Err(Error::Geometry(format!("representative point {i} is not finite")));
        }
        for i in 0..k {
            for j in 0..i {
                if reps[i] == reps[j] {
                    return Err(Error::Geometry(format!(
                        "cells {j} and {i} share representative point {:?}",
                        reps[i]
                    )));
                }
            }
        }
        let total: f64 = areas.iter().sum();
        let cells = reps
            .iter()
            .zip(areas)
            .enumerate()
            .map(|(id, (&representative, &raw_area))| Cell {
                id,
                representative,
                raw_area,
                std_area: raw_area / total,
            })
            .collect();
        let mut bbox = BBox::enclosing(reps.iter().copied()).expect("nonempty");
        if let Some(p) = pattern {
            if let Some(b) = BBox::enclosing(p.points.iter().copied().chain(reps.iter().copied())) {
                bbox = b;
            }
        }
        Ok(Self {
            cells,
            bbox,
            kind: GridKind::Membership,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn std_areas(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.std_area).collect()
    }

    pub fn representatives(&self) -> Vec<Point> {
        self.cells.iter().map(|c| c.representative).collect()
    }

    /// Bounds `(xmin, xmax, ymin, ymax)` of a regular-grid cell.
    pub fn cell_bounds(&self, k: usize) -> Option<BBox> {
        match self.kind {
            GridKind::Regular { nx, ny } if k < nx * ny => {
                let (ix, iy) = (k % nx, k / nx);
                let b = &self.bbox;
                // same edge formula as `locate`
                let ex = |i: usize| b.xmin + b.width() * i as f64 / nx as f64;
                let ey = |i: usize| b.ymin + b.height() * i as f64 / ny as f64;
                Some(BBox {
                    xmin: ex(ix),
                    xmax: ex(ix + 1),
                    ymin: ey(iy),
                    ymax: ey(iy + 1),
                })
            }
            _ => None,
        }
    }

    /// Cell containing `p` on a regular grid. Intervals are half-open `[lo, hi)`
    /// except the last one along each axis, which is closed.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        let GridKind::Regular { nx, ny } = self.kind else {
            return None;
        };
        if !p.is_finite() || !self.bbox.contains(p) {
            return None;
        }
        let ix = axis_index(p.x, self.bbox.xmin, self.bbox.xmax, nx);
        let iy = axis_index(p.y, self.bbox.ymin, self.bbox.ymax, ny);
        Some(iy * nx + ix)
    }

    /// Index of the cell whose representative point is nearest to `p`
    /// (lowest index on ties).
    pub fn nearest(&self, p: &Point) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.cells.iter().enumerate() {
            let d = c.representative.dist2(p);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    /// Cell of point `index` of `pattern`, from geometry or the membership table.
    fn cell_of(&self, pattern: &PointPattern, index: usize) -> Result<usize> {
        let p = pattern.points[index];
        let outside = || Error::Assignment { index, x: p.x, y: p.y };
        match self.kind {
            GridKind::Regular { .. } => self.locate(&p).ok_or_else(outside),
            GridKind::Membership => {
                let ids = pattern.cell_ids.as_ref().ok_or_else(outside)?;
                let c = ids[index];
                if c < self.len() {
                    Ok(c)
                } else {
                    Err(outside())
                }
            }
        }
    }

    /// Cell index of every point of `pattern`.
    pub fn assign(&self, pattern: &PointPattern) -> Result<Vec<usize>> {
        (0..pattern.len()).map(|i| self.cell_of(pattern, i)).collect()
    }
}

fn axis_index(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    let span = hi - lo;
    let edge = |i: usize| lo + span * i as f64 / n as f64;
    let mut i = (((v - lo) / span * n as f64).floor().max(0.0) as usize).min(n - 1);
    // correct floating error at shared edges
    if i + 1 < n && v >= edge(i + 1) {
        i += 1;
    } else if i > 0 && v < edge(i) {
        i -= 1;
    }
    i
}

/// Number of points of `pattern` in each cell of `grid`.
pub fn assign_counts(pattern: &PointPattern, grid: &GridSpec) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; grid.len()];
    for c in grid.assign(pattern)? {
        counts[c] += 1;
    }
    Ok(counts)
}

/// Per-cell covariates. Columns flagged as intercept are left untouched by
/// standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
    pub intercept: Vec<bool>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub standardized: bool,
}

pub const INTERCEPT: &str = "intercept";

impl CovariateTable {
    pub fn new(names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Covariate("non-finite covariate value".into()));
        }
        let p = names.len();
        let intercept = names.iter().map(|n| n == INTERCEPT).collect();
        Ok(Self {
            names,
            values,
            intercept,
            means: vec![0.0; p],
            scales: vec![1.0; p],
            standardized: false,
        })
    }

    /// Intercept-only table for `k` cells.
    pub fn intercept_only(k: usize) -> Self {
        Self::new(vec![INTERCEPT.into()], DMatrix::from_element(k, 1, 1.0)).expect("valid")
    }

    /// Copy with an intercept column of ones prepended (no-op if present).
    pub fn with_intercept(&self) -> Self {
        if self.intercept.iter().any(|&b| b) {
            return self.clone();
        }
        let k = self.values.nrows();
        let values = self.values.clone().insert_column(0, 1.0);
        debug_assert_eq!(values.nrows(), k);
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(self.names.iter().cloned());
        let mut intercept = vec![true];
        intercept.extend(&self.intercept);
        let mut means = vec![0.0];
        means.extend(&self.means);
        let mut scales = vec![1.0];
        scales.extend(&self.scales);
        Self {
            names,
            values,
            intercept,
            means,
            scales,
            standardized: self.standardized,
        }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Covariate(format!("unknown covariate `{name}`")))
    }

    /// Design matrix made of the named columns, in the given order.
    pub fn design(&self, columns: &[String]) -> Result<DMatrix<f64>> {
        let idx = columns
            .iter()
            .map(|c| self.column_index(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.values.select_columns(idx.iter()))
    }

    /// Center and scale every non-intercept column with the sample standard
    /// deviation (divisor K−1). Means and scales are composed with any earlier
    /// transform so `destandardize` recovers the original values.
    pub fn standardize(&self) -> Result<Self> {
        let k = self.nrows();
        let mut out = self.clone();
        for j in 0..self.ncols() {
            if self.intercept[j] {
                continue;
            }
            if k < 2 {
                return Err(Error::Covariate(format!(
                    "column `{}` cannot be standardized over {k} cell(s)",
                    self.names[j]
                )));
            }
            let col = self.values.column(j);
            let mean = col.iter().sum::<f64>() / k as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 0.0) || sd <= 1e-14 * mean.abs().max(1.0) {
                return Err(Error::Covariate(format!(
                    "column `{}` has zero variance",
                    self.names[j]
                )));
            }
            for v in out.values.column_mut(j).iter_mut() {
                *v = (*v - mean) / sd;
            }
            out.means[j] = self.means[j] + self.scales[j] * mean;
            out.scales[j] = self.scales[j] * sd;
        }
        out.standardized = true;
        Ok(out)
    }

    /// Undo all standardization: `x = z·scale + mean` per column.
    pub fn destandardize(&self) -> Self {
        let mut out = self.clone();
        for j in 0..self.ncols() {
            let (m, s) = (self.means[j], self.scales[j]);
            for v in out.values.column_mut(j).iter_mut() {
                *v = *v * s + m;
            }
            out.means[j] = 0.0;
            out.scales[j] = 1.0;
        }
        out.standardized = false;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> BBox {
        BBox::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn regular_two_by_two() {
        let g = GridSpec::regular(unit(), 2, 2).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.cells.iter().all(|c| c.std_area == 0.25));
        assert_eq!(g.cells[0].representative, Point::new(0.25, 0.25));
        assert_eq!(g.cells[1].representative, Point::new(0.75, 0.25));
        assert_eq!(g.cells[3].representative, Point::new(0.75, 0.75));
    }

    #[test]
    fn regular_single_cell() {
        let g = GridSpec::regular(BBox::new(0.0, 2.0, 0.0, 1.0).unwrap(), 1, 1).unwrap();
        assert_eq!(g.cells[0].std_area, 1.0);
        assert_eq!(g.cells[0].representative, Point::new(1.0, 0.5));
        assert_eq!(g.cells[0].raw_area, 2.0);
    }

    #[test]
    fn regular_305_cells_sum_to_one() {
        let g = GridSpec::regular(unit(), 61, 5).unwrap();
        assert_eq!(g.len(), 305);
        let s: f64 = g.std_areas().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let raw = g.cells[0].raw_area;
        assert!(g.cells.iter().all(|c| c.raw_area == raw));
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(matches!(BBox::new(0.0, 0.0, 0.0, 1.0), Err(Error::Geometry(_))));
        assert!(matches!(BBox::new(0.0, 1.0, 2.0, 2.0), Err(Error::Geometry(_))));
        assert!(GridSpec::regular(unit(), 0, 3).is_err());
    }

    #[test]
    fn membership_normalization() {
        let reps = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        let g = GridSpec::from_membership(&[3.0, 1.0], Some(reps), None).unwrap();
        assert_eq!(g.std_areas(), vec![0.75, 0.25]);

        let reps: Vec<Point> = (0..90).map(|i| Point::new(i as f64, 0.0)).collect();
        let g = GridSpec::from_membership(&vec![2.5; 90], Some(reps), None).unwrap();
        assert!(g.cells.iter().all(|c| (c.std_area - 1.0 / 90.0).abs() < 1e-15));
    }

    #[test]
    fn membership_errors() {
        let reps = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        assert!(GridSpec::from_membership(&[1.0, 0.0], Some(reps.clone()), None).is_err());
        let pat = PointPattern::new(vec![Point::new(0.0, 0.0)], "r")
            .unwrap()
            .with_cell_ids(vec![5])
            .unwrap();
        assert!(GridSpec::from_membership(&[1.0, 1.0], None, Some(&pat)).is_err());
        let g = GridSpec::from_membership(&[1.0, 1.0], Some(reps), None).unwrap();
        assert!(matches!(assign_counts(&pat, &g), Err(Error::Assignment { index: 0, .. })));
    }

    #[test]
    fn membership_centroids_from_points() {
        let pat = PointPattern::new(
            vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(5.0, 5.0)],
            "r",
        )
        .unwrap()
        .with_cell_ids(vec![0, 0, 1])
        .unwrap();
        let g = GridSpec::from_membership(&[1.0, 1.0], None, Some(&pat)).unwrap();
        assert_eq!(g.cells[0].representative, Point::new(1.0, 0.0));
        assert_eq!(assign_counts(&pat, &g).unwrap(), vec![2, 1]);
    }

    #[test]
    fn split_region_grids_are_independent() {
        let north: Vec<Point> = (0..22).map(|i| Point::new(i as f64, 1.0)).collect();
        let south: Vec<Point> = (0..68).map(|i| Point::new(i as f64, -1.0)).collect();
        let gn = GridSpec::from_membership(&[1.0; 22], Some(north), None).unwrap();
        let gs = GridSpec::from_membership(&[1.0; 68], Some(south), None).unwrap();
        assert_eq!((gn.len(), gs.len()), (22, 68));
        assert!((gn.std_areas().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((gs.std_areas().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn counts_basic() {
        let g = GridSpec::regular(unit(), 2, 2).unwrap();
        let empty = PointPattern::default();
        assert_eq!(assign_counts(&empty, &g).unwrap(), vec![0; 4]);
        let one = PointPattern::new(vec![Point::new(0.7, 0.2)], "r").unwrap();
        assert_eq!(assign_counts(&one, &g).unwrap(), vec![0, 1, 0, 0]);
        let out = PointPattern::new(vec![Point::new(0.5, 0.5), Point::new(1.5, 0.5)], "r").unwrap();
        assert!(matches!(
            assign_counts(&out, &g),
            Err(Error::Assignment { index: 1, .. })
        ));
    }

    #[test]
    fn edge_ties_go_to_larger_index_and_last_cell_is_closed() {
        let g = GridSpec::regular(unit(), 2, 2).unwrap();
        assert_eq!(g.locate(&Point::new(0.5, 0.1)), Some(1));
        assert_eq!(g.locate(&Point::new(0.1, 0.5)), Some(2));
        assert_eq!(g.locate(&Point::new(0.5, 0.5)), Some(3));
        assert_eq!(g.locate(&Point::new(1.0, 1.0)), Some(3));
        assert_eq!(g.locate(&Point::new(0.0, 0.0)), Some(0));
        let g10 = GridSpec::regular(unit(), 10, 10).unwrap();
        for i in 1..10 {
            let x = i as f64 / 10.0;
            assert_eq!(g10.locate(&Point::new(x, 0.05)), Some(i), "x = {x}");
        }
    }

    #[test]
    fn standardize_hand_values() {
        let t = CovariateTable::new(
            vec!["a".into()],
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
        )
        .unwrap()
        .with_intercept();
        let s = t.standardize().unwrap();
        // sample sd of (1,2,3) is 1
        assert_abs_diff_eq!(s.values[(0, 1)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values[(1, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values[(2, 1)], 1.0, epsilon = 1e-12);
        assert!(s.values.column(0).iter().all(|&v| v == 1.0));
        let again = s.standardize().unwrap();
        for (a, b) in again.values.iter().zip(s.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let back = again.destandardize();
        for (a, b) in back.values.iter().zip(t.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_variance_column_rejected() {
        let t = CovariateTable::new(vec!["c".into()], DMatrix::from_element(4, 1, 2.0)).unwrap();
        assert!(matches!(t.standardize(), Err(Error::Covariate(_))));
    }
}
