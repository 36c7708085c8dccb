//! Patch-grid geometry and the dispatcher that feeds the two pipeline branches.
//!
//! Patches are addressed by `(row, col)`. The dispatcher walks them in
//! column-major order: all rows of column 0, then all rows of column 1, and
//! so on. At step `t` the inference branch receives the patch at linear index
//! `t` and the prefetch branch the patch at `t + lag`, with `lag = rows + 2`
//! for a 3x3 neighborhood. Steps run from `-lag` to `rows * cols - 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch coordinate: `row` indexes patch rows (vertical), `col` patch columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Geometry of a padded image cut into square patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height_px: usize,
    pub width_px: usize,
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
}

pub(crate) fn check_patch_size(patch_size: usize) -> Result<()> {
    if patch_size < 2 || !patch_size.is_multiple_of(2) {
        return Err(Error::OddPatchSize(patch_size));
    }
    Ok(())
}

impl GridSpec {
    pub fn new(height_px: usize, width_px: usize, patch_size: usize) -> Result<Self> {
        check_patch_size(patch_size)?;
        if height_px == 0
            || width_px == 0
            || !height_px.is_multiple_of(patch_size)
            || !width_px.is_multiple_of(patch_size)
        {
            return Err(Error::NonMultipleDimensions {
                height: height_px,
                width: width_px,
                patch_size,
            });
        }
        Ok(Self {
            height_px,
            width_px,
            patch_size,
            rows: height_px / patch_size,
            cols: width_px / patch_size,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, coord: Coord) -> bool {
        coord.row < self.rows && coord.col < self.cols
    }

    pub fn check(&self, coord: Coord) -> Result<()> {
        if self.contains(coord) {
            Ok(())
        } else {
            Err(Error::OutOfGrid(coord, self.rows, self.cols))
        }
    }

    /// Column-major linear index: `col * rows + row`.
    pub fn linear_index(&self, coord: Coord) -> Result<usize> {
        self.check(coord)?;
        Ok(coord.col * self.rows + coord.row)
    }

    pub fn coord_of(&self, index: usize) -> Option<Coord> {
        (index < self.num_patches()).then(|| Coord::new(index % self.rows, index / self.rows))
    }

    /// All coordinates in dispatch order.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.num_patches()).map(|i| Coord::new(i % self.rows, i / self.rows))
    }

    /// Prefetch lead needed so every patch within `radius` (Chebyshev) of the
    /// inference patch was prefetched at a strictly earlier step.
    pub fn dispatch_lag(&self, radius: usize) -> usize {
        radius * (self.rows + 1) + 1
    }

    /// The dispatch order for a 3x3 neighborhood (lag `rows + 2`).
    pub fn dispatch_sequence(&self) -> Dispatch {
        self.dispatch_sequence_with_radius(1)
    }

    pub fn dispatch_sequence_with_radius(&self, radius: usize) -> Dispatch {
        let lag = self.dispatch_lag(radius) as i64;
        Dispatch {
            grid: *self,
            lag,
            next: -lag,
            end: self.num_patches() as i64,
        }
    }
}

/// One dispatcher tick. `None` plays the role of the empty image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DispatchStep {
    pub step: i64,
    pub inference: Option<Coord>,
    pub prefetch: Option<Coord>,
}

/// Replayable iterator over the dispatch schedule.
#[derive(Debug, Clone)]
pub struct Dispatch {
    grid: GridSpec,
    lag: i64,
    next: i64,
    end: i64,
}

impl Dispatch {
    pub fn lag(&self) -> usize {
        self.lag as usize
    }

    fn at(&self, index: i64) -> Option<Coord> {
        usize::try_from(index)
            .ok()
            .and_then(|i| self.grid.coord_of(i))
    }
}

impl Iterator for Dispatch {
    type Item = DispatchStep;

    fn next(&mut self) -> Option<DispatchStep> {
        if self.next >= self.end {
            return None;
        }
        let t = self.next;
        self.next += 1;
        Some(DispatchStep {
            step: t,
            inference: self.at(t),
            prefetch: self.at(t + self.lag),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.end - self.next).max(0) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Dispatch {}
