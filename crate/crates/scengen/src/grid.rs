//! Bird's-eye-view rasters: grid indexing and per-class occupancy grids.

use crate::geom::Vec2;
use serde::{Deserialize, Serialize};

/// Square BEV raster over the AV-centered field of view.
///
/// Cells are half-open `[lo, hi)` in both axes, y increases upward, and
/// row 0 sits at the top edge so the raster matches image conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub fov_extent: f64,
}

impl GridSpec {
    pub fn square(side: usize, fov_extent: f64) -> Self {
        Self { rows: side, cols: side, fov_extent }
    }

    /// Side length of one cell in meters.
    pub fn cell_size(&self) -> f64 {
        self.fov_extent / self.cols as f64
    }

    /// Map a scene position to `(row, col)`, or `None` when outside the FOV.
    /// `col = floor((x + fov/2)/cell)`, `row = floor((fov/2 - y)/cell)`.
    pub fn grid_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cell = self.cell_size();
        let half = self.fov_extent / 2.0;
        let col = ((x + half) / cell).floor();
        let row = ((half - y) / cell).floor();
        if col < 0.0 || row < 0.0 || col >= self.cols as f64 || row >= self.rows as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Geometric center of a cell, the inverse of [`GridSpec::grid_index`].
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        let cell = self.cell_size();
        let half = self.fov_extent / 2.0;
        Vec2::new(
            (col as f64 + 0.5) * cell - half,
            half - (row as f64 + 0.5) * cell,
        )
    }

    /// True iff the position falls in some cell (the half-open FOV test).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.grid_index(x, y).is_some()
    }
}

/// C x H x W raster of occupancy values: probabilities in `[0, 1]` for
/// predictions, `{0, 1}` for ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub classes: usize,
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl OccupancyGrid {
    pub fn zeros(classes: usize, rows: usize, cols: usize) -> Self {
        Self { classes, rows, cols, data: vec![0.0; classes * rows * cols] }
    }

    pub fn from_values(classes: usize, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), classes * rows * cols, "occupancy grid size mismatch");
        assert!(
            data.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "occupancy values must lie in [0, 1]"
        );
        Self { classes, rows, cols, data }
    }

    fn idx(&self, class: usize, row: usize, col: usize) -> usize {
        debug_assert!(class < self.classes && row < self.rows && col < self.cols);
        (class * self.rows + row) * self.cols + col
    }

    pub fn get(&self, class: usize, row: usize, col: usize) -> f64 {
        self.data[self.idx(class, row, col)]
    }

    pub fn set(&mut self, class: usize, row: usize, col: usize, value: f64) {
        let i = self.idx(class, row, col);
        self.data[i] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Cell with the largest value in one class channel (ties: first in
    /// row-major order).
    pub fn argmax_cell(&self, class: usize) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.get(class, r, c);
                if v > best_v {
                    best_v = v;
                    best = (r, c);
                }
            }
        }
        best
    }
}
