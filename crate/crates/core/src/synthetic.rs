//! Deterministic synthetic images, evaluated per pixel so that arbitrarily
//! large inputs can be streamed tile by tile.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Coord, GridSpec};
use crate::imageio::TileSource;
use crate::raster::Image;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform value in `[0, 1)` from a seed and a key.
pub(crate) fn unit(seed: u64, key: u64) -> f64 {
    (mix(seed ^ mix(key)) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Smooth global linear ramp, different per channel.
    Gradient,
    /// Every patch constant, alternating dark and light.
    Checkerboard,
    /// Low-frequency waves plus per-pixel noise.
    Texture,
}

/// A synthetic image of fixed size, sampled on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic {
    pub pattern: Pattern,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
    /// Cell size of the checkerboard.
    pub cell: usize,
}

impl Synthetic {
    pub fn new(pattern: Pattern, height: usize, width: usize, channels: usize, seed: u64) -> Self {
        Self {
            pattern,
            height,
            width,
            channels,
            seed,
            cell: 512,
        }
    }

    pub fn gradient(height: usize, width: usize, seed: u64) -> Self {
        Self::new(Pattern::Gradient, height, width, 3, seed)
    }

    pub fn checkerboard(height: usize, width: usize, cell: usize, seed: u64) -> Self {
        Self {
            cell,
            ..Self::new(Pattern::Checkerboard, height, width, 3, seed)
        }
    }

    pub fn texture(height: usize, width: usize, seed: u64) -> Self {
        Self::new(Pattern::Texture, height, width, 3, seed)
    }

    fn param(&self, c: usize, slot: u64) -> f64 {
        unit(self.seed, (c as u64) << 8 | slot)
    }

    pub fn sample(&self, y: usize, x: usize, c: usize) -> f32 {
        let (fy, fx) = (y as f64 / self.height as f64, x as f64 / self.width as f64);
        let v = match self.pattern {
            Pattern::Gradient => {
                let offset = 0.1 + 0.1 * self.param(c, 0);
                let row_slope = 0.25 + 0.15 * self.param(c, 1);
                let col_slope = 0.25 + 0.15 * self.param(c, 2);
                offset + row_slope * fy + col_slope * fx
            }
            Pattern::Checkerboard => {
                let (r, k) = (y / self.cell, x / self.cell);
                let jitter = 0.1 * self.param(c, 3);
                if (r + k) % 2 == 0 {
                    0.2 + jitter
                } else {
                    0.7 + jitter
                }
            }
            Pattern::Texture => {
                let ky = 2.0 + 6.0 * self.param(c, 4);
                let kx = 2.0 + 6.0 * self.param(c, 5);
                let phase = std::f64::consts::TAU * self.param(c, 6);
                let wave = (std::f64::consts::TAU * ky * fy + phase).sin()
                    * (std::f64::consts::TAU * kx * fx).cos();
                let key = ((y * self.width + x) * self.channels + c) as u64;
                let noise = unit(self.seed ^ 0xA5A5_A5A5, key) - 0.5;
                0.5 + 0.25 * wave + 0.15 * noise
            }
        };
        v as f32
    }

    pub fn render(&self) -> Image {
        Image::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.sample(y, x, c)
        })
    }

    /// A lazily sampled tile source over this image.
    pub fn tiles(&self, patch_size: usize) -> Result<SyntheticTiles> {
        let grid = GridSpec::new(self.height, self.width, patch_size)?;
        Ok(SyntheticTiles { image: *self, grid })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticTiles {
    image: Synthetic,
    grid: GridSpec,
}

impl TileSource for SyntheticTiles {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn channels(&self) -> usize {
        self.image.channels
    }

    fn read_tile(&self, coord: Coord) -> Result<Image> {
        self.grid.check(coord)?;
        let n = self.grid.patch_size;
        let (y0, x0) = (coord.row * n, coord.col * n);
        Ok(Image::from_fn(n, n, self.image.channels, |y, x, c| {
            self.image.sample(y0 + y, x0 + x, c)
        }))
    }
}
