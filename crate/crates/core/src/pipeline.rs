//! Whole-image translation.
//!
//! Every patch is normalized by the configured strategy and then recolored
//! by a moment-matching stylizer. Two executors produce bit-identical output:
//!
//! * [`run_single_pass`] walks the dispatch schedule once. At step `t` the
//!   prefetch branch caches the moments of patch `t + lag` while the inference
//!   branch translates patch `t`. With two threads the branches run
//!   concurrently and meet at a barrier after every step, so the inference
//!   read at step `t` observes every prefetch write of steps `<= t - 1`.
//! * [`run_two_stage`] caches all moments first and translates afterwards.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Coord, GridSpec};
use crate::imageio::{pad_reflect, Assembler, ImageTiles, TileSink, TileSource};
use crate::interp::{densify, BasisMatrices};
use crate::moments::{
    compute_moments, query_neighborhood, ChannelMoments, MomentLookup, MomentTable,
};
use crate::normalize::{
    dense_normalize, global_moments_with, instance_normalize, kin_filtered_stats, StrategyConfig,
    StrategyKind,
};
use crate::raster::Image;

/// Moment-matching recolor `y = target_std * x_norm + target_mean`.
///
/// Single-element vectors broadcast over channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizerSpec {
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Default for StylizerSpec {
    fn default() -> Self {
        Self {
            target_mean: vec![0.5],
            target_std: vec![0.2],
        }
    }
}

impl StylizerSpec {
    pub fn new(target_mean: Vec<f64>, target_std: Vec<f64>) -> Self {
        Self {
            target_mean,
            target_std,
        }
    }

    /// Target moments taken from a reference image.
    pub fn from_reference(image: &Image, epsilon: f64) -> Result<Self> {
        let m = crate::normalize::tin_global_stats(image, epsilon)?;
        Ok(Self::new(m.mean, m.stddev))
    }

    fn at(values: &[f64], c: usize) -> f64 {
        if values.len() == 1 {
            values[0]
        } else {
            values[c]
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("target_mean", &self.target_mean),
            ("target_std", &self.target_std),
        ] {
            if v.len() != 1 && v.len() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {} values for {channels} channels",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self.target_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("target_std must be positive".into()));
        }
        Ok(())
    }
}

/// Recolors a normalized patch. `patch` is the untouched input, used only to
/// check shapes.
pub fn stylize_patch(patch: &Image, normalized: &Image, spec: &StylizerSpec) -> Result<Image> {
    if !patch.same_shape(normalized) {
        return Err(Error::ShapeMismatch(format!(
            "patch {:?} vs normalized {:?}",
            patch.shape(),
            normalized.shape()
        )));
    }
    let c = normalized.channels();
    spec.validate(c)?;
    let mut out = normalized.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for (ch, v) in px.iter_mut().enumerate() {
            let std = StylizerSpec::at(&spec.target_std, ch);
            let mean = StylizerSpec::at(&spec.target_mean, ch);
            *v = (std * *v as f64 + mean) as f32;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Executor {
    Single,
    TwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassOptions {
    /// 1 runs both branches on the calling thread; 2 gives each branch its own.
    pub threads: usize,
    /// Record every table access with its step stamp.
    pub instrument: bool,
}

impl Default for PassOptions {
    fn default() -> Self {
        Self {
            threads: 2,
            instrument: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub schema: u32,
    pub executor: Executor,
    pub threads: usize,
    pub grid: GridSpec,
    pub dispatch_lag: usize,
    pub steps_executed: usize,
    pub patches_translated: usize,
    pub stages: Vec<StageTime>,
    pub total_ms: f64,
    pub strategy: StrategyConfig,
}

#[derive(Debug)]
pub struct PassOutput {
    pub report: PassReport,
    /// The moment cache, for strategies that use one.
    pub table: Option<MomentTable>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Per-patch normalization plus stylization, shared by both executors.
struct Translator<'a> {
    strategy: &'a StrategyConfig,
    stylizer: &'a StylizerSpec,
    basis: Option<BasisMatrices>,
    global: Option<ChannelMoments>,
}

impl<'a> Translator<'a> {
    fn new(
        source: &dyn TileSource,
        strategy: &'a StrategyConfig,
        stylizer: &'a StylizerSpec,
    ) -> Result<Self> {
        let grid = source.grid();
        strategy.validate(grid.patch_size)?;
        strategy.affine.validate(source.channels())?;
        stylizer.validate(source.channels())?;
        let basis = match strategy.kind {
            StrategyKind::Dn => Some(BasisMatrices::new(grid.patch_size)?),
            _ => None,
        };
        let global = match strategy.kind {
            StrategyKind::Tin => Some(streamed_global_moments(source, strategy.epsilon)?),
            _ => None,
        };
        Ok(Self {
            strategy,
            stylizer,
            basis,
            global,
        })
    }

    fn prefetch(&self, patch: &Image) -> Result<ChannelMoments> {
        compute_moments(patch, self.strategy.epsilon)
    }

    fn translate(&self, coord: Coord, patch: &Image, table: &impl MomentLookup) -> Result<Image> {
        let s = self.strategy;
        let normalized = match s.kind {
            StrategyKind::PatchIn => {
                instance_normalize(patch, &compute_moments(patch, s.epsilon)?, &s.affine)
            }
            StrategyKind::Tin => instance_normalize(
                patch,
                self.global.as_ref().expect("global moments"),
                &s.affine,
            ),
            StrategyKind::Kin => instance_normalize(
                patch,
                &kin_filtered_stats(table, coord, s.kin_kernel)?,
                &s.affine,
            ),
            StrategyKind::Dn => {
                let basis = self.basis.as_ref().expect("basis");
                let hood = query_neighborhood(table, coord)?;
                let mut field = densify(&hood, basis, s.reciprocal_sigma)?;
                if s.granularity > 1 {
                    field = field.quantize(s.granularity)?;
                }
                dense_normalize(patch, &field, &s.affine)?
            }
        };
        stylize_patch(patch, &normalized, self.stylizer)
    }
}

fn streamed_global_moments(source: &dyn TileSource, epsilon: f64) -> Result<ChannelMoments> {
    let grid = source.grid();
    global_moments_with(
        |visit| {
            for c in grid.coords() {
                visit(&source.read_tile(c)?)?;
            }
            Ok(())
        },
        epsilon,
    )
}

fn new_table(grid: GridSpec, instrument: bool) -> MomentTable {
    if instrument {
        MomentTable::instrumented(grid)
    } else {
        MomentTable::new(grid)
    }
}

fn global_stage(strategy: &StrategyConfig, setup: Duration) -> Vec<StageTime> {
    if strategy.kind == StrategyKind::Tin {
        vec![StageTime {
            stage: "global".into(),
            ms: ms(setup),
        }]
    } else {
        Vec::new()
    }
}

/// Translates every patch in one walk over the dispatch schedule.
pub fn run_single_pass(
    source: &dyn TileSource,
    strategy: &StrategyConfig,
    stylizer: &StylizerSpec,
    sink: &mut dyn TileSink,
    options: PassOptions,
) -> Result<PassOutput> {
    let start = Instant::now();
    let translator = Translator::new(source, strategy, stylizer)?;
    let setup = start.elapsed();
    let grid = source.grid();
    let radius = strategy.neighborhood_radius().max(1);
    let dispatch = grid.dispatch_sequence_with_radius(radius);
    let lag = dispatch.lag();
    let table = new_table(grid, options.instrument);
    let uses_table = strategy.uses_table();

    let prefetch_step = |step: i64, coord: Coord| -> Result<()> {
        if uses_table {
            let patch = source.read_tile(coord)?;
            table.store_at(coord, translator.prefetch(&patch)?, step)?;
        }
        Ok(())
    };
    let inference_step = |step: i64, coord: Coord, sink: &mut dyn TileSink| -> Result<()> {
        let patch = source.read_tile(coord)?;
        let out = translator.translate(coord, &patch, &table.at_step(step))?;
        sink.put(coord, out)
    };

    let mut steps = 0usize;
    let mut translated = 0usize;
    let (prefetch_busy, inference_busy);
    if options.threads <= 1 {
        let (mut pb, mut ib) = (Duration::ZERO, Duration::ZERO);
        for s in dispatch {
            steps += 1;
            if let Some(c) = s.prefetch {
                let t = Instant::now();
                prefetch_step(s.step, c)?;
                pb += t.elapsed();
            }
            if let Some(c) = s.inference {
                let t = Instant::now();
                inference_step(s.step, c, sink)?;
                ib += t.elapsed();
                translated += 1;
            }
        }
        prefetch_busy = pb;
        inference_busy = ib;
    } else {
        let barrier = Barrier::new(2);
        // Earliest step at which either branch failed. A branch stops after
        // the barrier of step `s` only for failures at steps `<= s`, which
        // both branches are guaranteed to see, so they always stop together.
        let failed_at = AtomicI64::new(i64::MAX);
        let first_error: Mutex<Option<Error>> = Mutex::new(None);
        let fail = |step: i64, e: Error| {
            first_error.lock().expect("error slot").get_or_insert(e);
            failed_at.fetch_min(step, Ordering::SeqCst);
        };
        let (pb, (ib, n_steps, n_done)) = std::thread::scope(|scope| {
            let prefetcher = scope.spawn(|| {
                let mut busy = Duration::ZERO;
                for s in dispatch.clone() {
                    if let Some(c) = s.prefetch {
                        let t = Instant::now();
                        if let Err(e) = prefetch_step(s.step, c) {
                            fail(s.step, e);
                        }
                        busy += t.elapsed();
                    }
                    barrier.wait();
                    if failed_at.load(Ordering::SeqCst) <= s.step {
                        break;
                    }
                }
                busy
            });
            let mut busy = Duration::ZERO;
            let (mut n_steps, mut n_done) = (0usize, 0usize);
            for s in dispatch.clone() {
                n_steps += 1;
                if let Some(c) = s.inference {
                    let t = Instant::now();
                    match inference_step(s.step, c, sink) {
                        Ok(()) => n_done += 1,
                        Err(e) => fail(s.step, e),
                    }
                    busy += t.elapsed();
                }
                barrier.wait();
                if failed_at.load(Ordering::SeqCst) <= s.step {
                    break;
                }
            }
            let pb = prefetcher.join().expect("prefetch worker panicked");
            (pb, (busy, n_steps, n_done))
        });
        if let Some(e) = first_error.into_inner().expect("error slot") {
            return Err(e);
        }
        prefetch_busy = pb;
        inference_busy = ib;
        steps = n_steps;
        translated = n_done;
    }

    let mut stages = global_stage(strategy, setup);
    stages.push(StageTime {
        stage: "prefetch".into(),
        ms: ms(prefetch_busy),
    });
    stages.push(StageTime {
        stage: "inference".into(),
        ms: ms(inference_busy),
    });
    Ok(PassOutput {
        report: PassReport {
            schema: 1,
            executor: Executor::Single,
            threads: options.threads.clamp(1, 2),
            grid,
            dispatch_lag: lag,
            steps_executed: steps,
            patches_translated: translated,
            stages,
            total_ms: ms(start.elapsed()),
            strategy: strategy.clone(),
        },
        table: uses_table.then_some(table),
    })
}

/// Caches every patch's moments, then translates every patch.
pub fn run_two_stage(
    source: &dyn TileSource,
    strategy: &StrategyConfig,
    stylizer: &StylizerSpec,
    sink: &mut dyn TileSink,
    options: PassOptions,
) -> Result<PassOutput> {
    let start = Instant::now();
    let translator = Translator::new(source, strategy, stylizer)?;
    let setup = start.elapsed();
    let grid = source.grid();
    let table = new_table(grid, options.instrument);
    let uses_table = strategy.uses_table();
    let total = grid.num_patches();

    let t = Instant::now();
    for (i, coord) in grid.coords().enumerate() {
        if uses_table {
            let patch = source.read_tile(coord)?;
            table.store_at(coord, translator.prefetch(&patch)?, i as i64)?;
        }
    }
    let caching = t.elapsed();

    let t = Instant::now();
    for (i, coord) in grid.coords().enumerate() {
        let patch = source.read_tile(coord)?;
        let out = translator.translate(coord, &patch, &table.at_step((total + i) as i64))?;
        sink.put(coord, out)?;
    }
    let inference = t.elapsed();

    let mut stages = global_stage(strategy, setup);
    stages.push(StageTime {
        stage: "caching".into(),
        ms: ms(caching),
    });
    stages.push(StageTime {
        stage: "inference".into(),
        ms: ms(inference),
    });
    Ok(PassOutput {
        report: PassReport {
            schema: 1,
            executor: Executor::TwoStage,
            threads: 1,
            grid,
            dispatch_lag: 0,
            steps_executed: 2 * total,
            patches_translated: total,
            stages,
            total_ms: ms(start.elapsed()),
            strategy: strategy.clone(),
        },
        table: uses_table.then_some(table),
    })
}

pub fn run(
    executor: Executor,
    source: &dyn TileSource,
    strategy: &StrategyConfig,
    stylizer: &StylizerSpec,
    sink: &mut dyn TileSink,
    options: PassOptions,
) -> Result<PassOutput> {
    match executor {
        Executor::Single => run_single_pass(source, strategy, stylizer, sink, options),
        Executor::TwoStage => run_two_stage(source, strategy, stylizer, sink, options),
    }
}

/// Pads, translates and crops an in-memory image. The result is unclamped.
pub fn translate_image(
    image: &Image,
    patch_size: usize,
    executor: Executor,
    strategy: &StrategyConfig,
    stylizer: &StylizerSpec,
    options: PassOptions,
) -> Result<(Image, PassOutput)> {
    let padded = pad_reflect(image, patch_size)?;
    let source = ImageTiles::new(&padded.pixels, patch_size)?;
    let mut asm = Assembler::new(source.grid(), image.channels());
    let out = run(executor, &source, strategy, stylizer, &mut asm, options)?;
    let full = asm.finish()?;
    Ok((padded.crop_to_original(&full)?, out))
}

/// Discards tiles, keeping a count and an order-independent checksum.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct DigestSink {
    pub tiles: usize,
    pub checksum: u64,
}

impl TileSink for DigestSink {
    fn put(&mut self, coord: Coord, tile: Image) -> Result<()> {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ ((coord.row as u64) << 32 | coord.col as u64);
        for v in tile.data() {
            h = (h ^ v.to_bits() as u64).wrapping_mul(0x0100_0000_01b3);
        }
        self.tiles += 1;
        self.checksum = self.checksum.wrapping_add(h);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::extract_tile;
    use crate::synthetic::Synthetic;

    fn all_strategies() -> Vec<StrategyConfig> {
        vec![
            StrategyConfig::patch_in(),
            StrategyConfig::tin(),
            StrategyConfig::kin(5),
            StrategyConfig::kin(3),
            StrategyConfig::dn(1),
            StrategyConfig::dn(4),
        ]
    }

    #[test]
    fn stylize_examples() {
        let p = Image::new(2, 2, 1);
        let spec = StylizerSpec::new(vec![0.5], vec![0.2]);
        let out = stylize_patch(&p, &Image::new(2, 2, 1), &spec).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        let n = Image::from_vec(2, 2, 1, vec![1.5, -1.0, 0.0, 2.0]).unwrap();
        let id = StylizerSpec::new(vec![0.0], vec![1.0]);
        assert_eq!(stylize_patch(&p, &n, &id).unwrap(), n);
        let out = stylize_patch(&p, &n, &spec).unwrap();
        assert!((out.data()[0] - 0.8).abs() < 1e-7);
        assert!(matches!(
            stylize_patch(&p, &Image::new(3, 3, 1), &spec),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(StylizerSpec::new(vec![0.5], vec![0.0]).validate(1).is_err());
        assert!(StylizerSpec::new(vec![0.5, 0.5], vec![0.1])
            .validate(3)
            .is_err());
    }

    #[test]
    fn executors_agree_bit_for_bit() {
        let img = Synthetic::texture(24, 40, 11).render();
        let spec = StylizerSpec::new(vec![0.4, 0.5, 0.6], vec![0.1, 0.2, 0.15]);
        for strategy in all_strategies() {
            let mut outs = Vec::new();
            for (exec, threads) in [
                (Executor::Single, 1),
                (Executor::Single, 2),
                (Executor::TwoStage, 1),
            ] {
                let opts = PassOptions {
                    threads,
                    instrument: true,
                };
                let (out, pass) = translate_image(&img, 8, exec, &strategy, &spec, opts).unwrap();
                if let Some(t) = &pass.table {
                    assert!(t.read_before_write_events().is_empty());
                }
                assert_eq!(pass.report.patches_translated, 15);
                outs.push(out);
            }
            assert_eq!(outs[0], outs[1], "{:?}", strategy.kind);
            assert_eq!(outs[0], outs[2], "{:?}", strategy.kind);
        }
    }

    #[test]
    fn step_counts() {
        let img = Synthetic::texture(24, 16, 2).render();
        let spec = StylizerSpec::default();
        let s = StrategyConfig::dn(1);
        let (_, single) =
            translate_image(&img, 8, Executor::Single, &s, &spec, PassOptions::default()).unwrap();
        assert_eq!(single.report.steps_executed, 6 + 3 + 2);
        let (_, two) = translate_image(
            &img,
            8,
            Executor::TwoStage,
            &s,
            &spec,
            PassOptions::default(),
        )
        .unwrap();
        assert_eq!(two.report.steps_executed, 12);
        // A 5x5 KIN window needs a deeper lead.
        let (_, kin) = translate_image(
            &img,
            8,
            Executor::Single,
            &StrategyConfig::kin(5),
            &spec,
            PassOptions::default(),
        )
        .unwrap();
        assert_eq!(kin.report.dispatch_lag, 2 * 4 + 1);
    }

    #[test]
    fn patch_in_is_independent_per_patch() {
        let img = Synthetic::texture(16, 16, 5).render();
        let spec = StylizerSpec::new(vec![0.5], vec![0.2]);
        let s = StrategyConfig::patch_in();
        let (out, _) =
            translate_image(&img, 8, Executor::Single, &s, &spec, PassOptions::default()).unwrap();
        let grid = GridSpec::new(16, 16, 8).unwrap();
        for c in grid.coords() {
            let p = extract_tile(&img, &grid, c).unwrap();
            let m = compute_moments(&p, s.epsilon).unwrap();
            let want = stylize_patch(&p, &instance_normalize(&p, &m, &s.affine), &spec).unwrap();
            assert_eq!(extract_tile(&out, &grid, c).unwrap(), want);
        }
    }

    #[test]
    fn single_patch_dn_is_instance_norm() {
        let img = Synthetic::texture(8, 8, 9).render();
        let spec = StylizerSpec::new(vec![0.5], vec![0.2]);
        let (dn, _) = translate_image(
            &img,
            8,
            Executor::Single,
            &StrategyConfig::dn(1),
            &spec,
            PassOptions::default(),
        )
        .unwrap();
        let (pin, _) = translate_image(
            &img,
            8,
            Executor::Single,
            &StrategyConfig::patch_in(),
            &spec,
            PassOptions::default(),
        )
        .unwrap();
        for (a, b) in dn.data().iter().zip(pin.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_gives_constant_output() {
        let img = Image::from_vec(16, 24, 1, vec![0.3; 16 * 24]).unwrap();
        let spec = StylizerSpec::new(vec![0.6], vec![0.2]);
        for strategy in all_strategies() {
            let (out, _) = translate_image(
                &img,
                8,
                Executor::TwoStage,
                &strategy,
                &spec,
                PassOptions::default(),
            )
            .unwrap();
            assert!(
                out.data().iter().all(|&v| (v - 0.6).abs() < 1e-5),
                "{:?}",
                strategy.kind
            );
        }
    }

    #[test]
    fn bad_config_is_rejected_before_work() {
        let img = Synthetic::texture(16, 16, 5).render();
        let spec = StylizerSpec::default();
        assert!(matches!(
            translate_image(
                &img,
                8,
                Executor::Single,
                &StrategyConfig::dn(3),
                &spec,
                PassOptions::default()
            ),
            Err(Error::BadGranularity { .. })
        ));
    }

    #[test]
    fn dense_narrows_the_seam_between_two_patches() {
        let img = Image::from_fn(16, 32, 1, |y, x, _| {
            0.1 + 0.02 * x as f32 + 0.005 * y as f32
        });
        let spec = StylizerSpec::default();
        let boundary = |strategy: StrategyConfig| {
            let (out, _) = translate_image(
                &img,
                16,
                Executor::TwoStage,
                &strategy,
                &spec,
                PassOptions::default(),
            )
            .unwrap();
            (0..16)
                .map(|y| (out.get(y, 16, 0) - out.get(y, 15, 0)).abs())
                .sum::<f32>()
        };
        assert!(boundary(StrategyConfig::dn(1)) < boundary(StrategyConfig::patch_in()));
    }

    struct Failing;
    impl TileSource for Failing {
        fn grid(&self) -> GridSpec {
            GridSpec::new(8, 8, 4).unwrap()
        }
        fn channels(&self) -> usize {
            1
        }
        fn read_tile(&self, coord: Coord) -> Result<Image> {
            if coord == Coord::new(1, 1) {
                Err(Error::Io(std::io::Error::other("boom")))
            } else {
                Ok(Image::new(4, 4, 1))
            }
        }
    }

    #[test]
    fn source_errors_stop_both_threads() {
        for threads in [1, 2] {
            let mut sink = DigestSink::default();
            let r = run_single_pass(
                &Failing,
                &StrategyConfig::dn(1),
                &StylizerSpec::default(),
                &mut sink,
                PassOptions {
                    threads,
                    instrument: false,
                },
            );
            assert!(matches!(r, Err(Error::Io(_))));
        }
    }

    #[test]
    fn digest_is_order_independent() {
        let a = Image::from_vec(1, 1, 1, vec![0.5]).unwrap();
        let b = Image::from_vec(1, 1, 1, vec![0.25]).unwrap();
        let mut s1 = DigestSink::default();
        s1.put(Coord::new(0, 0), a.clone()).unwrap();
        s1.put(Coord::new(0, 1), b.clone()).unwrap();
        let mut s2 = DigestSink::default();
        s2.put(Coord::new(0, 1), b).unwrap();
        s2.put(Coord::new(0, 0), a).unwrap();
        assert_eq!(s1, s2);
    }
}
