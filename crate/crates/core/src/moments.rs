//! Per-patch channel moments, the coordinate-keyed cache table they are
//! stored in, and clamped 3x3 neighborhood queries against it.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Coord, GridSpec};
use crate::raster::Image;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Mean and standard deviation per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMoments {
    pub mean: Vec<f64>,
    #[serde(rename = "std")]
    pub stddev: Vec<f64>,
}

impl ChannelMoments {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn uniform(channels: usize, mean: f64, stddev: f64) -> Self {
        Self {
            mean: vec![mean; channels],
            stddev: vec![stddev; channels],
        }
    }
}

pub(crate) fn add_channel_sums(img: &Image, sums: &mut [f64]) {
    let c = img.channels();
    for px in img.data().chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
}

pub(crate) fn add_centered_squares(img: &Image, means: &[f64], sums: &mut [f64]) {
    let c = img.channels();
    for px in img.data().chunks_exact(c) {
        for ((s, &v), &m) in sums.iter_mut().zip(px).zip(means) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
}

/// Two-pass population moments; `stddev = sqrt(var + epsilon)`.
pub fn compute_moments(patch: &Image, epsilon: f64) -> Result<ChannelMoments> {
    if patch.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let c = patch.channels();
    let n = (patch.height() * patch.width()) as f64;
    let mut sums = vec![0.0; c];
    add_channel_sums(patch, &mut sums);
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; c];
    add_centered_squares(patch, &mean, &mut sq);
    let stddev = sq.iter().map(|s| (s / n + epsilon).sqrt()).collect();
    Ok(ChannelMoments { mean, stddev })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

/// A stamped table access, recorded when the table is instrumented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AccessEvent {
    pub step: i64,
    pub coord: Coord,
    pub kind: AccessKind,
}

/// Cache table of patch moments keyed by patch coordinate.
///
/// Entries are write-once. Each entry carries the dispatcher step at which it
/// was written; a stamped read at step `s` only sees entries written at a
/// step strictly before `s`.
#[derive(Debug)]
pub struct MomentTable {
    grid: GridSpec,
    entries: Vec<OnceLock<ChannelMoments>>,
    written_at: Vec<AtomicI64>,
    log: Option<Mutex<Vec<AccessEvent>>>,
}

const UNSTAMPED: i64 = i64::MIN;

impl MomentTable {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.num_patches();
        Self {
            grid,
            entries: (0..n).map(|_| OnceLock::new()).collect(),
            written_at: (0..n).map(|_| AtomicI64::new(UNSTAMPED)).collect(),
            log: None,
        }
    }

    /// A table that records every stamped access.
    pub fn instrumented(grid: GridSpec) -> Self {
        Self {
            log: Some(Mutex::new(Vec::new())),
            ..Self::new(grid)
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.get().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn store(&self, coord: Coord, moments: ChannelMoments) -> Result<()> {
        self.store_at(coord, moments, UNSTAMPED)
    }

    pub fn store_at(&self, coord: Coord, moments: ChannelMoments, step: i64) -> Result<()> {
        let i = self.grid.linear_index(coord)?;
        // The stamp is published before the value; OnceLock::set is the release.
        if self.entries[i].get().is_some() {
            return Err(Error::DuplicateWrite(coord));
        }
        self.written_at[i].store(step, Ordering::Relaxed);
        self.entries[i]
            .set(moments)
            .map_err(|_| Error::DuplicateWrite(coord))?;
        self.record(step, coord, AccessKind::Write);
        Ok(())
    }

    pub fn get(&self, coord: Coord) -> Result<&ChannelMoments> {
        let i = self.grid.linear_index(coord)?;
        self.entries[i].get().ok_or(Error::MissingEntry(coord))
    }

    /// Read as of dispatcher step `step`.
    pub fn get_at(&self, coord: Coord, step: i64) -> Result<&ChannelMoments> {
        let i = self.grid.linear_index(coord)?;
        self.record(step, coord, AccessKind::Read);
        let value = self.entries[i].get().ok_or(Error::MissingEntry(coord))?;
        if self.written_at[i].load(Ordering::Relaxed) >= step {
            return Err(Error::MissingEntry(coord));
        }
        Ok(value)
    }

    /// View whose reads are all stamped with `step`.
    pub fn at_step(&self, step: i64) -> StepView<'_> {
        StepView { table: self, step }
    }

    fn record(&self, step: i64, coord: Coord, kind: AccessKind) {
        if let Some(log) = &self.log {
            log.lock()
                .expect("access log poisoned")
                .push(AccessEvent { step, coord, kind });
        }
    }

    pub fn access_log(&self) -> Vec<AccessEvent> {
        self.log
            .as_ref()
            .map(|l| l.lock().expect("access log poisoned").clone())
            .unwrap_or_default()
    }

    /// Reads in the access log whose key had not been written at a strictly
    /// earlier step.
    pub fn read_before_write_events(&self) -> Vec<AccessEvent> {
        let log = self.access_log();
        let mut written = std::collections::HashMap::new();
        for e in log.iter().filter(|e| e.kind == AccessKind::Write) {
            written.insert(e.coord, e.step);
        }
        log.into_iter()
            .filter(|e| e.kind == AccessKind::Read)
            .filter(|e| written.get(&e.coord).is_none_or(|&w| w >= e.step))
            .collect()
    }

    /// Serializes as `{"(row,col)": {"mean": [...], "std": [...]}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for coord in self.grid.coords() {
            if let Ok(m) = self.get(coord) {
                map.insert(
                    coord.to_string(),
                    serde_json::to_value(m).expect("moments serialize"),
                );
            }
        }
        serde_json::Value::Object(map)
    }

    pub fn from_json(grid: GridSpec, value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::MalformedTable("expected a JSON object".into()))?;
        let table = Self::new(grid);
        for (key, v) in obj {
            let coord = parse_coord(key)
                .ok_or_else(|| Error::MalformedTable(format!("bad key {key:?}")))?;
            let m: ChannelMoments = serde_json::from_value(v.clone())
                .map_err(|e| Error::MalformedTable(format!("{key}: {e}")))?;
            if m.mean.len() != m.stddev.len() {
                return Err(Error::MalformedTable(format!(
                    "{key}: channel count differs"
                )));
            }
            table.store(coord, m)?;
        }
        Ok(table)
    }
}

fn parse_coord(key: &str) -> Option<Coord> {
    let inner = key.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some(Coord::new(a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Read access to patch moments.
pub trait MomentLookup {
    fn grid(&self) -> &GridSpec;
    fn lookup(&self, coord: Coord) -> Result<&ChannelMoments>;
}

impl MomentLookup for MomentTable {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn lookup(&self, coord: Coord) -> Result<&ChannelMoments> {
        self.get(coord)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    table: &'a MomentTable,
    step: i64,
}

impl MomentLookup for StepView<'_> {
    fn grid(&self) -> &GridSpec {
        &self.table.grid
    }

    fn lookup(&self, coord: Coord) -> Result<&ChannelMoments> {
        self.table.get_at(coord, self.step)
    }
}

/// Clamp-to-edge neighbor of `coord` at offset `(dr, dc)`.
pub(crate) fn clamped(grid: &GridSpec, coord: Coord, dr: isize, dc: isize) -> Coord {
    let r = (coord.row as isize + dr).clamp(0, grid.rows as isize - 1);
    let c = (coord.col as isize + dc).clamp(0, grid.cols as isize - 1);
    Coord::new(r as usize, c as usize)
}

/// Patch moments around a coordinate, `[channel][row offset][col offset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood3x3 {
    pub mean: Vec<[[f64; 3]; 3]>,
    pub stddev: Vec<[[f64; 3]; 3]>,
}

impl Neighborhood3x3 {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Neighborhood whose nine cells all carry `m`.
    pub fn uniform(m: &ChannelMoments) -> Self {
        Self {
            mean: m.mean.iter().map(|&v| [[v; 3]; 3]).collect(),
            stddev: m.stddev.iter().map(|&v| [[v; 3]; 3]).collect(),
        }
    }
}

/// Gathers the 3x3 moment neighborhood of `coord`, replicating edge patches
/// for positions outside the grid.
pub fn query_neighborhood(table: &impl MomentLookup, coord: Coord) -> Result<Neighborhood3x3> {
    let grid = *table.grid();
    grid.check(coord)?;
    let center = table.lookup(coord)?;
    let channels = center.channels();
    let mut hood = Neighborhood3x3 {
        mean: vec![[[0.0; 3]; 3]; channels],
        stddev: vec![[[0.0; 3]; 3]; channels],
    };
    for (a, dr) in (-1..=1).enumerate() {
        for (b, dc) in (-1..=1).enumerate() {
            let m = table.lookup(clamped(&grid, coord, dr, dc))?;
            if m.channels() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "neighbor has {} channels, center has {channels}",
                    m.channels()
                )));
            }
            for ch in 0..channels {
                hood.mean[ch][a][b] = m.mean[ch];
                hood.stddev[ch][a][b] = m.stddev[ch];
            }
        }
    }
    Ok(hood)
}
