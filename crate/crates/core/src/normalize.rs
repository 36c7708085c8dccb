//! Normalization strategies: patch-wise instance normalization, shared global
//! statistics (TIN), kernel-smoothed patch statistics (KIN) and dense
//! per-pixel statistics (DN).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Coord;
use crate::interp::PixelMomentField;
use crate::moments::{
    add_centered_squares, add_channel_sums, clamped, ChannelMoments, MomentLookup, DEFAULT_EPSILON,
};
use crate::raster::Image;

/// Per-channel scale and shift applied after normalization.
///
/// Empty vectors mean the identity; a single value is broadcast to every
/// channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
}

fn per_channel(values: &[f64], c: usize, default: f64) -> f64 {
    match values.len() {
        0 => default,
        1 => values[0],
        _ => values[c],
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { gamma, beta }
    }

    #[inline]
    pub fn gamma(&self, c: usize) -> f64 {
        per_channel(&self.gamma, c, 1.0)
    }

    #[inline]
    pub fn beta(&self, c: usize) -> f64 {
        per_channel(&self.beta, c, 0.0)
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [("gamma", &self.gamma), ("beta", &self.beta)] {
            if v.len() > 1 && v.len() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {} values for {channels} channels",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "in")]
    PatchIn,
    #[serde(rename = "tin")]
    Tin,
    #[serde(rename = "kin")]
    Kin,
    #[serde(rename = "dn")]
    Dn,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::PatchIn, Self::Tin, Self::Kin, Self::Dn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PatchIn => "in",
            Self::Tin => "tin",
            Self::Kin => "kin",
            Self::Dn => "dn",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "in" | "patch_in" | "patch-in" => Ok(Self::PatchIn),
            "tin" => Ok(Self::Tin),
            "kin" => Ok(Self::Kin),
            "dn" => Ok(Self::Dn),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

pub const DEFAULT_KIN_KERNEL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub epsilon: f64,
    /// Window size for KIN, odd.
    pub kin_kernel: usize,
    /// Block size at which DN holds its fields constant; 1 is per pixel.
    pub granularity: usize,
    /// Interpolate reciprocal standard deviations (DN). Off interpolates the
    /// deviations and inverts afterwards.
    pub reciprocal_sigma: bool,
    pub affine: AffineParams,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            epsilon: DEFAULT_EPSILON,
            kin_kernel: DEFAULT_KIN_KERNEL,
            granularity: 1,
            reciprocal_sigma: true,
            affine: AffineParams::identity(),
        }
    }

    pub fn patch_in() -> Self {
        Self::new(StrategyKind::PatchIn)
    }

    pub fn tin() -> Self {
        Self::new(StrategyKind::Tin)
    }

    pub fn kin(kernel: usize) -> Self {
        Self {
            kin_kernel: kernel,
            ..Self::new(StrategyKind::Kin)
        }
    }

    pub fn dn(granularity: usize) -> Self {
        Self {
            granularity,
            ..Self::new(StrategyKind::Dn)
        }
    }

    pub fn validate(&self, patch_size: usize) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.kin_kernel == 0 || self.kin_kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "KIN kernel must be odd, got {}",
                self.kin_kernel
            )));
        }
        if self.granularity == 0 || !patch_size.is_multiple_of(self.granularity) {
            return Err(Error::BadGranularity {
                granularity: self.granularity,
                patch_size,
            });
        }
        Ok(())
    }

    /// Chebyshev radius of the patch neighborhood this strategy reads.
    pub fn neighborhood_radius(&self) -> usize {
        match self.kind {
            StrategyKind::PatchIn | StrategyKind::Tin => 0,
            StrategyKind::Kin => self.kin_kernel / 2,
            StrategyKind::Dn => 1,
        }
    }

    /// Whether the strategy reads cached patch moments.
    pub fn uses_table(&self) -> bool {
        matches!(self.kind, StrategyKind::Kin | StrategyKind::Dn)
    }
}

/// `gamma * (x - mean) / stddev + beta` per channel.
pub fn instance_normalize(patch: &Image, moments: &ChannelMoments, affine: &AffineParams) -> Image {
    let c = patch.channels();
    assert_eq!(moments.channels(), c, "moment/patch channel mismatch");
    let mut out = patch.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for (ch, v) in px.iter_mut().enumerate() {
            let norm = (*v as f64 - moments.mean[ch]) / moments.stddev[ch];
            *v = (affine.gamma(ch) * norm + affine.beta(ch)) as f32;
        }
    }
    out
}

/// `gamma * ((x - mean_hat) * inv_std_hat) + beta` per pixel.
pub fn dense_normalize(
    patch: &Image,
    field: &PixelMomentField,
    affine: &AffineParams,
) -> Result<Image> {
    let c = patch.channels();
    if patch.height() != field.n() || patch.width() != field.n() || field.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "patch {}x{}x{} vs field {n}x{n}x{}",
            patch.height(),
            patch.width(),
            c,
            field.channels(),
            n = field.n()
        )));
    }
    let mut out = patch.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = i % c;
        let norm = (*v as f64 - field.mean[i]) * field.inv_std[i];
        *v = (affine.gamma(ch) * norm + affine.beta(ch)) as f32;
    }
    Ok(out)
}

/// Moments over every pixel of `image`, computed like a single patch.
pub fn tin_global_stats(image: &Image, epsilon: f64) -> Result<ChannelMoments> {
    global_moments_with(|visit| visit(image), epsilon)
}

/// Population moments pooled over a sequence of rasters, in two passes.
///
/// `for_each_tile` is called twice and must hand every tile to the visitor in
/// the same order both times, so tiles can be streamed without being held.
pub fn global_moments_with<F>(mut for_each_tile: F, epsilon: f64) -> Result<ChannelMoments>
where
    F: FnMut(&mut dyn FnMut(&Image) -> Result<()>) -> Result<()>,
{
    let mut count = 0usize;
    let mut sums: Vec<f64> = Vec::new();
    for_each_tile(&mut |tile: &Image| {
        if sums.is_empty() {
            sums = vec![0.0; tile.channels()];
        } else if sums.len() != tile.channels() {
            return Err(Error::ShapeMismatch(
                "tiles disagree on channel count".into(),
            ));
        }
        count += tile.height() * tile.width();
        add_channel_sums(tile, &mut sums);
        Ok(())
    })?;
    if count == 0 || sums.is_empty() {
        return Err(Error::EmptyImage);
    }
    let n = count as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; mean.len()];
    for_each_tile(&mut |tile: &Image| {
        add_centered_squares(tile, &mean, &mut sq);
        Ok(())
    })?;
    let stddev = sq.iter().map(|s| (s / n + epsilon).sqrt()).collect();
    Ok(ChannelMoments { mean, stddev })
}

/// Box-filtered patch moments over the `kernel x kernel` window centered at
/// `coord`, replicating edge patches outside the grid.
pub fn kin_filtered_stats(
    table: &impl MomentLookup,
    coord: Coord,
    kernel: usize,
) -> Result<ChannelMoments> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "KIN kernel must be odd, got {kernel}"
        )));
    }
    let grid = *table.grid();
    grid.check(coord)?;
    let channels = table.lookup(coord)?.channels();
    let r = (kernel / 2) as isize;
    let mut mean = vec![0.0; channels];
    let mut stddev = vec![0.0; channels];
    for dr in -r..=r {
        for dc in -r..=r {
            let m = table.lookup(clamped(&grid, coord, dr, dc))?;
            for ch in 0..channels {
                mean[ch] += m.mean[ch];
                stddev[ch] += m.stddev[ch];
            }
        }
    }
    let count = (kernel * kernel) as f64;
    mean.iter_mut().for_each(|v| *v /= count);
    stddev.iter_mut().for_each(|v| *v /= count);
    Ok(ChannelMoments { mean, stddev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::interp::{densify, precompute_basis};
    use crate::moments::{compute_moments, query_neighborhood, MomentTable, Neighborhood3x3};
    use proptest::prelude::*;

    fn small() -> Image {
        Image::from_vec(2, 2, 1, vec![1.0, 3.0, 3.0, 5.0]).unwrap()
    }

    #[test]
    fn instance_normalize_by_hand() {
        let p = small();
        let m = compute_moments(&p, 1e-5).unwrap();
        let out = instance_normalize(&p, &m, &AffineParams::identity());
        let want = [
            -std::f64::consts::SQRT_2,
            0.0,
            0.0,
            std::f64::consts::SQRT_2,
        ];
        for (a, b) in out.data().iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
        let out = instance_normalize(&p, &m, &AffineParams::new(vec![2.0], vec![1.0]));
        let want = [-1.82843, 1.0, 1.0, 3.82843];
        for (a, b) in out.data().iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_patch_normalizes_to_beta() {
        let p = Image::from_vec(2, 2, 1, vec![0.4; 4]).unwrap();
        let m = compute_moments(&p, 1e-5).unwrap();
        let out = instance_normalize(&p, &m, &AffineParams::new(vec![3.0], vec![0.25]));
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn dense_with_constant_field_is_instance_norm() {
        let p = Image::from_fn(4, 4, 2, |y, x, c| ((y * 7 + x * 3 + c) % 5) as f32 / 5.0);
        let m = compute_moments(&p, 1e-5).unwrap();
        let inv: Vec<f64> = m.stddev.iter().map(|s| 1.0 / s).collect();
        let field = PixelMomentField::constant(4, &m.mean, &inv);
        let affine = AffineParams::new(vec![1.5, 0.5], vec![0.1, -0.2]);
        let a = dense_normalize(&p, &field, &affine).unwrap();
        let b = instance_normalize(&p, &m, &affine);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        // Single-patch grid: the clamped neighborhood is uniform.
        let basis = precompute_basis(4).unwrap();
        let f = densify(&Neighborhood3x3::uniform(&m), &basis, true).unwrap();
        let c = dense_normalize(&p, &f, &affine).unwrap();
        for (x, y) in c.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_at_mean_gives_beta() {
        let field = PixelMomentField::constant(2, &[0.3f32 as f64], &[4.0]);
        let p = Image::from_vec(2, 2, 1, vec![0.3; 4]).unwrap();
        let out = dense_normalize(&p, &field, &AffineParams::new(vec![2.0], vec![0.7])).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
        let wrong = Image::new(4, 4, 1);
        assert!(matches!(
            dense_normalize(&wrong, &field, &AffineParams::identity()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn global_stats_examples() {
        let img = Image::from_fn(2, 4, 1, |_, x, _| if x < 2 { 0.0 } else { 2.0 });
        let m = tin_global_stats(&img, 1e-5).unwrap();
        assert_eq!(m.mean, vec![1.0]);
        assert!((m.stddev[0] - (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);

        let k = Image::from_vec(3, 3, 1, vec![0.6; 9]).unwrap();
        let m = tin_global_stats(&k, 1e-5).unwrap();
        assert!((m.mean[0] - 0.6).abs() < 1e-7);
        assert!((m.stddev[0] - 1e-5f64.sqrt()).abs() < 1e-9);

        let p = small();
        assert_eq!(
            tin_global_stats(&p, 1e-5).unwrap(),
            compute_moments(&p, 1e-5).unwrap()
        );
        assert!(matches!(
            tin_global_stats(&Image::new(0, 0, 1), 1e-5),
            Err(Error::EmptyImage)
        ));
    }

    fn table_from(rows: usize, cols: usize, f: impl Fn(Coord) -> (f64, f64)) -> MomentTable {
        let g = GridSpec::new(rows * 2, cols * 2, 2).unwrap();
        let t = MomentTable::new(g);
        for c in g.coords() {
            let (m, s) = f(c);
            t.store(c, ChannelMoments::uniform(1, m, s)).unwrap();
        }
        t
    }

    #[test]
    fn kin_examples() {
        let t = table_from(3, 4, |_| (0.2, 0.1));
        for k in [1, 3, 5, 9] {
            let m = kin_filtered_stats(&t, Coord::new(1, 2), k).unwrap();
            assert!((m.mean[0] - 0.2).abs() < 1e-12);
            assert!((m.stddev[0] - 0.1).abs() < 1e-12);
        }
        let t = table_from(5, 5, |c| ((c.row * 5 + c.col + 1) as f64, 1.0));
        assert_eq!(
            kin_filtered_stats(&t, Coord::new(2, 2), 5).unwrap().mean[0],
            13.0
        );
        let one = kin_filtered_stats(&t, Coord::new(3, 1), 1).unwrap();
        assert_eq!(&one, t.get(Coord::new(3, 1)).unwrap());
        assert!(kin_filtered_stats(&t, Coord::new(0, 0), 4).is_err());
    }

    #[test]
    fn kin_with_covering_window_averages_everything_at_the_center() {
        // A window that spans the table from the middle sees each patch once.
        let t = table_from(3, 3, |c| ((c.row * 3 + c.col) as f64, 1.0 + c.row as f64));
        let m = kin_filtered_stats(&t, Coord::new(1, 1), 3).unwrap();
        assert!((m.mean[0] - 4.0).abs() < 1e-12);
        assert!((m.stddev[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kin_missing_entry() {
        let g = GridSpec::new(4, 4, 2).unwrap();
        let t = MomentTable::new(g);
        t.store(Coord::new(0, 0), ChannelMoments::uniform(1, 0.0, 1.0))
            .unwrap();
        assert!(matches!(
            kin_filtered_stats(&t, Coord::new(0, 0), 3),
            Err(Error::MissingEntry(_))
        ));
    }

    #[test]
    fn strategy_validation() {
        assert!(StrategyConfig::dn(3).validate(8).is_err());
        assert!(StrategyConfig::dn(4).validate(8).is_ok());
        assert!(StrategyConfig::kin(4).validate(8).is_err());
        let mut c = StrategyConfig::patch_in();
        c.epsilon = 0.0;
        assert!(c.validate(8).is_err());
        assert_eq!("DN".parse::<StrategyKind>().unwrap(), StrategyKind::Dn);
        assert!("bn".parse::<StrategyKind>().is_err());
    }

    proptest! {
        #[test]
        fn affine_is_linear(
            vals in prop::collection::vec(0.0f32..1.0, 16),
            gamma in -3.0f64..3.0,
            beta in -1.0f64..1.0,
            hood_means in prop::array::uniform3(prop::array::uniform3(0.0f64..1.0)),
            hood_sds in prop::array::uniform3(prop::array::uniform3(0.05f64..0.5)),
        ) {
            let p = Image::from_vec(4, 4, 1, vals).unwrap();
            let m = compute_moments(&p, 1e-5).unwrap();
            let affine = AffineParams::new(vec![gamma], vec![beta]);
            let id = AffineParams::identity();
            let a = instance_normalize(&p, &m, &affine);
            let b = instance_normalize(&p, &m, &id);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((*x as f64 - (gamma * *y as f64 + beta)).abs() < 1e-4);
            }
            let hood = Neighborhood3x3 { mean: vec![hood_means], stddev: vec![hood_sds] };
            let f = densify(&hood, &precompute_basis(4).unwrap(), true).unwrap();
            let a = dense_normalize(&p, &f, &affine).unwrap();
            let b = dense_normalize(&p, &f, &id).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((*x as f64 - (gamma * *y as f64 + beta)).abs() < 1e-4 * (1.0 + y.abs() as f64));
            }
        }
    }

    #[test]
    fn coarsest_granularity_is_instance_norm_with_corner_moments() {
        let g = GridSpec::new(8, 8, 4).unwrap();
        let t = MomentTable::new(g);
        for (i, c) in g.coords().enumerate() {
            t.store(
                c,
                ChannelMoments::uniform(1, 0.1 * i as f64, 0.2 + 0.05 * i as f64),
            )
            .unwrap();
        }
        let basis = precompute_basis(4).unwrap();
        let p = Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f32 / 16.0);
        let coord = Coord::new(1, 0);
        let field = densify(&query_neighborhood(&t, coord).unwrap(), &basis, true)
            .unwrap()
            .quantize(4)
            .unwrap();
        let corner = ChannelMoments {
            mean: vec![field.mean[0]],
            stddev: vec![1.0 / field.inv_std[0]],
        };
        let a = dense_normalize(&p, &field, &AffineParams::identity()).unwrap();
        let b = instance_normalize(&p, &corner, &AffineParams::identity());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
