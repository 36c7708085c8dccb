//! Tiling-artifact scores, a brute-force reference for the dense moment
//! field, and timing harnesses.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_patch_size, GridSpec};
use crate::interp::{
    fast_interp_cell, naive_bilinear_cell, reformulated_cell, BasisMatrices, Cell,
};
use crate::moments::MomentLookup;
use crate::normalize::StrategyConfig;
use crate::pipeline::{run, translate_image, DigestSink, Executor, PassOptions, StylizerSpec};
use crate::raster::Image;
use crate::synthetic::{unit, Synthetic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// A boundary between horizontally adjacent patches.
    Vertical,
    /// A boundary between vertically adjacent patches.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStat {
    pub orientation: Orientation,
    /// Pixel offset of the first row or column after the boundary.
    pub offset: usize,
    pub mean_absdiff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    pub boundary_mean_absdiff: f64,
    pub interior_mean_absdiff: f64,
    pub seam_ratio: f64,
    pub boundaries: Vec<BoundaryStat>,
}

/// Mean absolute first differences across patch boundaries versus inside
/// patches, over all 4-adjacent pixel pairs and all channels.
pub fn seam_energy(image: &Image, patch_size: usize) -> Result<SeamReport> {
    let grid = GridSpec::new(image.height(), image.width(), patch_size)?;
    let (h, w, ch) = image.shape();
    let n = patch_size;
    let data = image.data();
    let px = |y: usize, x: usize| &data[(y * w + x) * ch..(y * w + x + 1) * ch];
    let pair = |a: &[f32], b: &[f32]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (*p as f64 - *q as f64).abs())
            .sum()
    };

    let mut vertical = vec![0.0; grid.cols.saturating_sub(1)];
    let mut horizontal = vec![0.0; grid.rows.saturating_sub(1)];
    let mut interior = 0.0;
    let mut interior_pairs = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let d = pair(px(y, x), px(y, x + 1));
                if (x + 1) % n == 0 {
                    vertical[(x + 1) / n - 1] += d;
                } else {
                    interior += d;
                    interior_pairs += 1;
                }
            }
            if y + 1 < h {
                let d = pair(px(y, x), px(y + 1, x));
                if (y + 1) % n == 0 {
                    horizontal[(y + 1) / n - 1] += d;
                } else {
                    interior += d;
                    interior_pairs += 1;
                }
            }
        }
    }

    let mut boundaries = Vec::with_capacity(vertical.len() + horizontal.len());
    let mut boundary = 0.0;
    for (k, s) in vertical.iter().enumerate() {
        boundary += s;
        boundaries.push(BoundaryStat {
            orientation: Orientation::Vertical,
            offset: (k + 1) * n,
            mean_absdiff: s / (h * ch) as f64,
        });
    }
    for (k, s) in horizontal.iter().enumerate() {
        boundary += s;
        boundaries.push(BoundaryStat {
            orientation: Orientation::Horizontal,
            offset: (k + 1) * n,
            mean_absdiff: s / (w * ch) as f64,
        });
    }
    let boundary_pairs = vertical.len() * h + horizontal.len() * w;
    let mean = |sum: f64, pairs: usize| {
        if pairs == 0 {
            0.0
        } else {
            sum / (pairs * ch) as f64
        }
    };
    let boundary_mean_absdiff = mean(boundary, boundary_pairs);
    let interior_mean_absdiff = mean(interior, interior_pairs);
    Ok(SeamReport {
        boundary_mean_absdiff,
        interior_mean_absdiff,
        seam_ratio: boundary_mean_absdiff / (interior_mean_absdiff + 1e-12),
        boundaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Mean,
    /// Reciprocal standard deviation.
    InvStd,
}

/// Lattice coordinate of pixel `p` along one axis, in units of patches,
/// where integer `u` is the centre of patch `u`.
///
/// Pixel `i` of a patch is the `N/2 + i`-th sample of the cell above/left of
/// the centre when `i < N/2`, otherwise the `i - N/2`-th sample of the cell
/// below/right, with samples spaced `1 / (N - 1)` apart.
pub fn lattice_coordinate(p: usize, n: usize) -> f64 {
    let (patch, i) = ((p / n) as f64, p % n);
    let step = 1.0 / (n - 1) as f64;
    if i < n / 2 {
        patch - 1.0 + (n / 2 + i) as f64 * step
    } else {
        patch + (i - n / 2) as f64 * step
    }
}

fn bracket(u: f64, len: usize) -> (usize, usize, f64) {
    let last = len as f64 - 1.0;
    let u = u.clamp(0.0, last);
    let lo = u.floor();
    let hi = (lo + 1.0).min(last);
    (lo as usize, hi as usize, u - lo)
}

/// Whole-image field from plain bilinear interpolation over the lattice of
/// patch-centre moments, with edge nodes extended outside the lattice.
///
/// Evaluated pixel by pixel without any of the cell machinery. Returned
/// interleaved `H x W x channels`.
pub fn global_field_oracle(table: &impl MomentLookup, kind: FieldKind) -> Result<Vec<f64>> {
    let grid = *table.grid();
    let n = grid.patch_size;
    let mut nodes = Vec::with_capacity(grid.num_patches());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let m = table.lookup(crate::grid::Coord::new(r, c))?;
            nodes.push(match kind {
                FieldKind::Mean => m.mean.clone(),
                FieldKind::InvStd => m.stddev.iter().map(|s| 1.0 / s).collect(),
            });
        }
    }
    let channels = nodes[0].len();
    let node = |r: usize, c: usize, ch: usize| nodes[r * grid.cols + c][ch];
    let mut out = vec![0.0; grid.height_px * grid.width_px * channels];
    for y in 0..grid.height_px {
        let (r0, r1, ty) = bracket(lattice_coordinate(y, n), grid.rows);
        for x in 0..grid.width_px {
            let (c0, c1, tx) = bracket(lattice_coordinate(x, n), grid.cols);
            for ch in 0..channels {
                let top = (1.0 - tx) * node(r0, c0, ch) + tx * node(r0, c1, ch);
                let bottom = (1.0 - tx) * node(r1, c0, ch) + tx * node(r1, c1, ch);
                out[(y * grid.width_px + x) * channels + ch] = (1.0 - ty) * top + ty * bottom;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Naive,
    Reformulated,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub per_cell_ms: f64,
    pub per_patch_ms: f64,
    pub whole_image_ms: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: u32,
    pub n: usize,
    pub iterations: usize,
    /// Cell interpolations needed per single-channel patch: four corners for
    /// each of the two moments.
    pub cells_per_patch: usize,
    pub patches: usize,
    /// Largest relative deviation from the naive output seen in the gate.
    pub max_rel_error: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, variant: Variant) -> &BenchRow {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .expect("every variant is benchmarked")
    }
}

pub const CELLS_PER_PATCH: usize = 8;

fn random_cells(count: usize, seed: u64) -> Vec<Cell> {
    (0..count as u64)
        .map(|i| {
            let u = |k| unit(seed, i * 4 + k);
            [[u(0), u(1)], [u(2), u(3)]]
        })
        .collect()
}

fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-12))
        .fold(0.0, f64::max)
}

/// Times the three interpolation variants on the same random cells, after
/// checking that they agree with the naive output.
///
/// Each variant runs `iterations` cells per round; the fastest of three
/// rounds is kept. `patches` scales the per-patch time to a whole image.
pub fn bench_interpolation(n: usize, iterations: usize, patches: usize) -> Result<BenchReport> {
    check_patch_size(n)?;
    if iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    let cells = random_cells(iterations, 0x5EED ^ n as u64);
    let basis = BasisMatrices::new(n)?;

    let mut worst = 0.0f64;
    for q in cells.iter().take(8) {
        let naive = naive_bilinear_cell(q, n);
        worst = worst.max(max_rel_error(&reformulated_cell(q, n), &naive));
        worst = worst.max(max_rel_error(&fast_interp_cell(q, &basis), &naive));
    }
    if worst > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "interpolation variants disagree (relative error {worst:e})"
        )));
    }

    let time = |f: &dyn Fn(&Cell) -> Vec<f64>| {
        (0..3)
            .map(|_| {
                let t = Instant::now();
                for q in &cells {
                    black_box(f(black_box(q)));
                }
                t.elapsed().as_secs_f64() * 1e3 / iterations as f64
            })
            .fold(f64::INFINITY, f64::min)
    };
    let timings = [
        (Variant::Naive, time(&|q| naive_bilinear_cell(q, n))),
        (Variant::Reformulated, time(&|q| reformulated_cell(q, n))),
        (Variant::Precomputed, time(&|q| fast_interp_cell(q, &basis))),
    ];
    let naive_ms = timings[0].1;
    let rows = timings
        .iter()
        .map(|&(variant, per_cell_ms)| {
            let per_patch_ms = per_cell_ms * CELLS_PER_PATCH as f64;
            BenchRow {
                variant,
                per_cell_ms,
                per_patch_ms,
                whole_image_ms: per_patch_ms * patches as f64,
                speedup: naive_ms / per_cell_ms,
            }
        })
        .collect();
    Ok(BenchReport {
        schema: 1,
        n,
        iterations,
        cells_per_patch: CELLS_PER_PATCH,
        patches,
        max_rel_error: worst,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub granularity: usize,
    pub report: SeamReport,
}

/// DN translation at each granularity, scored on the clamped output.
/// Epsilon, affine and sigma handling are taken from `base`.
pub fn ablate_granularity(
    image: &Image,
    patch_size: usize,
    stylizer: &StylizerSpec,
    granularities: &[usize],
    base: &StrategyConfig,
) -> Result<Vec<AblationRow>> {
    GridSpec::new(image.height(), image.width(), patch_size)?;
    for &g in granularities {
        if g == 0 || !patch_size.is_multiple_of(g) {
            return Err(Error::BadGranularity {
                granularity: g,
                patch_size,
            });
        }
    }
    granularities
        .iter()
        .map(|&g| {
            let strategy = StrategyConfig {
                kind: crate::normalize::StrategyKind::Dn,
                granularity: g,
                ..base.clone()
            };
            let report = translated_seams(image, patch_size, stylizer, &strategy)?;
            Ok(AblationRow {
                granularity: g,
                report,
            })
        })
        .collect()
}

/// Seam score of one translation, measured on the clamped output.
pub fn translated_seams(
    image: &Image,
    patch_size: usize,
    stylizer: &StylizerSpec,
    strategy: &StrategyConfig,
) -> Result<SeamReport> {
    let (mut out, _) = translate_image(
        image,
        patch_size,
        Executor::TwoStage,
        strategy,
        stylizer,
        PassOptions::default(),
    )?;
    out.clamp_unit();
    seam_energy(&out, patch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineBench {
    pub schema: u32,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub threads: usize,
    pub repeats: usize,
    pub single_pass_ms: f64,
    pub two_stage_ms: f64,
    pub outputs_match: bool,
}

/// Wall time of both executors over a lazily generated synthetic image.
/// Output tiles are digested rather than stored. Keeps the fastest run.
pub fn bench_pipeline(
    image: &Synthetic,
    patch_size: usize,
    strategy: &StrategyConfig,
    stylizer: &StylizerSpec,
    threads: usize,
    repeats: usize,
) -> Result<PipelineBench> {
    let source = image.tiles(patch_size)?;
    let mut single = f64::INFINITY;
    let mut two = f64::INFINITY;
    let mut digests = (DigestSink::default(), DigestSink::default());
    let options = PassOptions {
        threads,
        instrument: false,
    };
    for _ in 0..repeats.max(1) {
        let mut sink = DigestSink::default();
        let t = Instant::now();
        run(
            Executor::Single,
            &source,
            strategy,
            stylizer,
            &mut sink,
            options,
        )?;
        single = single.min(t.elapsed().as_secs_f64() * 1e3);
        digests.0 = sink;

        let mut sink = DigestSink::default();
        let t = Instant::now();
        run(
            Executor::TwoStage,
            &source,
            strategy,
            stylizer,
            &mut sink,
            options,
        )?;
        two = two.min(t.elapsed().as_secs_f64() * 1e3);
        digests.1 = sink;
    }
    Ok(PipelineBench {
        schema: 1,
        height: image.height,
        width: image.width,
        patch_size,
        threads,
        repeats: repeats.max(1),
        single_pass_ms: single,
        two_stage_ms: two,
        outputs_match: digests.0 == digests.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Coord;
    use crate::interp::densify;
    use crate::moments::{query_neighborhood, ChannelMoments, MomentTable};

    #[test]
    fn seam_examples() {
        let flat = Image::from_vec(8, 8, 1, vec![0.4; 64]).unwrap();
        let r = seam_energy(&flat, 4).unwrap();
        assert_eq!(
            (r.boundary_mean_absdiff, r.interior_mean_absdiff),
            (0.0, 0.0)
        );
        assert!(r.seam_ratio.is_finite());

        let two = Image::from_fn(4, 8, 1, |_, x, _| if x < 4 { 0.0 } else { 1.0 });
        let r = seam_energy(&two, 4).unwrap();
        assert_eq!(r.boundary_mean_absdiff, 1.0);
        assert_eq!(r.interior_mean_absdiff, 0.0);
        assert_eq!(r.boundaries.len(), 1);
        assert_eq!(r.boundaries[0].offset, 4);

        let s = 1.0 / 64.0;
        let ramp = Image::from_fn(16, 16, 2, |y, x, _| (s * (x + y) as f64) as f32);
        let r = seam_energy(&ramp, 4).unwrap();
        assert!((r.boundary_mean_absdiff - s).abs() < 1e-6);
        assert!((r.interior_mean_absdiff - s).abs() < 1e-6);

        assert!(matches!(
            seam_energy(&Image::new(6, 8, 1), 4),
            Err(Error::NonMultipleDimensions { .. })
        ));
    }

    #[test]
    fn untouched_texture_has_no_seams() {
        let img = Synthetic::texture(64, 64, 3).render();
        let r = seam_energy(&img, 16).unwrap();
        assert!((0.5..=2.0).contains(&r.seam_ratio), "{}", r.seam_ratio);
    }

    #[test]
    fn lattice_coordinates() {
        // Pixel N/2 of each patch sits exactly on its centre node.
        assert_eq!(lattice_coordinate(4, 8), 0.0);
        assert_eq!(lattice_coordinate(12, 8), 1.0);
        assert_eq!(lattice_coordinate(0, 8), -1.0 + 4.0 / 7.0);
        assert_eq!(lattice_coordinate(7, 8), 3.0 / 7.0);
    }

    fn random_table(grid: GridSpec, seed: u64) -> MomentTable {
        let t = MomentTable::new(grid);
        for (i, c) in grid.coords().enumerate() {
            let u = |k: u64| unit(seed, i as u64 * 8 + k);
            t.store(
                c,
                ChannelMoments {
                    mean: vec![u(0), 4.0 * u(1) - 2.0],
                    stddev: vec![0.1 + u(2), 0.5 + 3.0 * u(3)],
                },
            )
            .unwrap();
        }
        t
    }

    #[test]
    fn oracle_degenerate_cases() {
        let grid = GridSpec::new(8, 8, 8).unwrap();
        let t = random_table(grid, 1);
        let m = t.get(Coord::new(0, 0)).unwrap().clone();
        let f = global_field_oracle(&t, FieldKind::Mean).unwrap();
        assert!(f.chunks(2).all(|p| p == m.mean.as_slice()));

        let grid = GridSpec::new(16, 24, 8).unwrap();
        let t = MomentTable::new(grid);
        for c in grid.coords() {
            t.store(c, ChannelMoments::uniform(1, 0.25, 2.0)).unwrap();
        }
        let f = global_field_oracle(&t, FieldKind::InvStd).unwrap();
        assert!(f.iter().all(|&v| (v - 0.5).abs() < 1e-15));

        assert!(matches!(
            global_field_oracle(&MomentTable::new(grid), FieldKind::Mean),
            Err(Error::MissingEntry(_))
        ));
    }

    #[test]
    fn stitched_fields_match_oracle() {
        let grid = GridSpec::new(64, 64, 16).unwrap();
        let t = random_table(grid, 9);
        let basis = BasisMatrices::new(16).unwrap();
        let mean = global_field_oracle(&t, FieldKind::Mean).unwrap();
        let inv = global_field_oracle(&t, FieldKind::InvStd).unwrap();
        for c in grid.coords() {
            let f = densify(&query_neighborhood(&t, c).unwrap(), &basis, true).unwrap();
            for i in 0..16 {
                for j in 0..16 {
                    for ch in 0..2 {
                        let g = ((c.row * 16 + i) * 64 + c.col * 16 + j) * 2 + ch;
                        let k = f.index(i, j, ch);
                        assert!((f.mean[k] - mean[g]).abs() < 1e-12);
                        assert!((f.inv_std[k] - inv[g]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bench_report_shape() {
        let r = bench_interpolation(16, 20, 12).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.row(Variant::Naive).speedup, 1.0);
        for row in &r.rows {
            assert!(row.per_cell_ms > 0.0);
            assert_eq!(row.per_patch_ms, row.per_cell_ms * 8.0);
            assert_eq!(row.whole_image_ms, row.per_patch_ms * 12.0);
        }
        let json = serde_json::to_value(&r).unwrap();
        for key in ["variant", "per_patch_ms", "speedup"] {
            assert!(json["rows"][0].get(key).is_some());
        }
        assert!(bench_interpolation(3, 1, 1).is_err());
        assert!(bench_interpolation(4, 0, 1).is_err());
    }

    #[test]
    fn ablation_on_gradient() {
        // 16x16 patches: the clamped first and last boundaries, where g=N
        // samples a neighbour-weighted mean, are a small share of all seams.
        let img = Synthetic::gradient(512, 512, 4).render();
        let spec = StylizerSpec::default();
        let gs = [32, 16, 8, 4, 2, 1];
        let rows = ablate_granularity(&img, 32, &spec, &gs, &StrategyConfig::dn(1)).unwrap();
        let pin = translated_seams(&img, 32, &spec, &StrategyConfig::patch_in()).unwrap();
        let ratios: Vec<f64> = rows.iter().map(|r| r.report.seam_ratio).collect();
        for w in ratios.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{ratios:?}");
        }
        assert!(ratios[5] < ratios[0]);
        assert!(ratios[5] < pin.seam_ratio);
        let rel = (ratios[0] - pin.seam_ratio).abs() / pin.seam_ratio;
        assert!(rel <= 0.1, "g=N {} vs IN {}", ratios[0], pin.seam_ratio);
        assert!(matches!(
            ablate_granularity(&img, 32, &spec, &[3], &StrategyConfig::dn(1)),
            Err(Error::BadGranularity { .. })
        ));
    }

    #[test]
    fn pipeline_bench_outputs_match() {
        let img = Synthetic::texture(64, 96, 2);
        let b = bench_pipeline(
            &img,
            32,
            &StrategyConfig::dn(1),
            &StylizerSpec::default(),
            2,
            1,
        )
        .unwrap();
        assert!(b.outputs_match);
        assert!(b.single_pass_ms > 0.0 && b.two_stage_ms > 0.0);
    }
}
