//! Image files, reflection padding to a patch multiple, and the tile
//! source/sink plumbing the executors stream through.

use std::collections::BTreeMap;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::grid::{Coord, GridSpec};
use crate::raster::Image;

/// Loads an 8-bit grayscale or RGB PNG/PPM as samples in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(Error::UnsupportedFormat(path.display().to_string())),
    }
    let decoded = reader.decode().map_err(|e| Error::DecodeError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{:?} pixels (expected 8-bit gray or RGB)",
                other.color()
            )))
        }
    };
    let data = raw.into_iter().map(|v| v as f32 / 255.0).collect();
    Image::from_vec(h, w, channels, data)
}

/// `round(clamp(v, 0, 1) * 255)`, rounding halves away from zero.
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG or binary PPM, chosen by file extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let format = match ext.as_str() {
        "png" => ImageFormat::Png,
        "ppm" | "pnm" | "pgm" => ImageFormat::Pnm,
        _ => return Err(Error::UnsupportedFormat(format!("extension {ext:?}"))),
    };
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        ),
        3 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        ),
        c => return Err(Error::UnsupportedFormat(format!("{c}-channel output"))),
    };
    // Gray output in a PNM container is written as P5.
    write_encoded(dynamic, path, format)
}

fn write_encoded(img: DynamicImage, path: &Path, format: ImageFormat) -> Result<()> {
    img.save_with_format(path, format).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    })
}

/// An image reflect-padded at the bottom and right to a patch-size multiple.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedImage {
    pub pixels: Image,
    pub original_h: usize,
    pub original_w: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl PaddedImage {
    pub fn grid(&self, patch_size: usize) -> Result<GridSpec> {
        GridSpec::new(self.pixels.height(), self.pixels.width(), patch_size)
    }

    /// The top-left `original_h x original_w` region of `img`.
    pub fn crop_to_original(&self, img: &Image) -> Result<Image> {
        img.crop(0, 0, self.original_h, self.original_w)
    }
}

/// Mirror index without repeating the edge: `len + k` maps to `len - 2 - k`.
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

pub fn pad_amount(len: usize, n: usize) -> usize {
    (n - len % n) % n
}

pub fn pad_reflect(image: &Image, n: usize) -> Result<PaddedImage> {
    crate::grid::check_patch_size(n)?;
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage);
    }
    let pad_bottom = pad_amount(h, n);
    let pad_right = pad_amount(w, n);
    if (pad_bottom > 0 && pad_bottom > h - 1) || (pad_right > 0 && pad_right > w - 1) {
        return Err(Error::TooSmallToPad {
            height: h,
            width: w,
            pad_bottom,
            pad_right,
        });
    }
    let pixels = if pad_bottom == 0 && pad_right == 0 {
        image.clone()
    } else {
        let c = image.channels();
        Image::from_fn(h + pad_bottom, w + pad_right, c, |y, x, ch| {
            image.get(reflect(y, h), reflect(x, w), ch)
        })
    };
    Ok(PaddedImage {
        pixels,
        original_h: h,
        original_w: w,
        pad_bottom,
        pad_right,
    })
}

/// Something that can hand out patches by coordinate, possibly lazily.
pub trait TileSource: Sync {
    fn grid(&self) -> GridSpec;
    fn channels(&self) -> usize;
    fn read_tile(&self, coord: Coord) -> Result<Image>;
}

/// Receives translated patches.
pub trait TileSink: Send {
    fn put(&mut self, coord: Coord, tile: Image) -> Result<()>;
}

/// Tiles cut on demand from an in-memory image.
#[derive(Debug, Clone, Copy)]
pub struct ImageTiles<'a> {
    image: &'a Image,
    grid: GridSpec,
}

impl<'a> ImageTiles<'a> {
    pub fn new(image: &'a Image, patch_size: usize) -> Result<Self> {
        let grid = GridSpec::new(image.height(), image.width(), patch_size)?;
        Ok(Self { image, grid })
    }
}

impl TileSource for ImageTiles<'_> {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn channels(&self) -> usize {
        self.image.channels()
    }

    fn read_tile(&self, coord: Coord) -> Result<Image> {
        extract_tile(self.image, &self.grid, coord)
    }
}

/// Tile `coord` covers rows `[row*N, (row+1)*N)` and columns `[col*N, (col+1)*N)`.
pub fn extract_tile(image: &Image, grid: &GridSpec, coord: Coord) -> Result<Image> {
    grid.check(coord)?;
    let n = grid.patch_size;
    image.crop(coord.row * n, coord.col * n, n, n)
}

pub fn extract_tiles(padded: &PaddedImage, grid: &GridSpec) -> Result<BTreeMap<Coord, Image>> {
    if padded.pixels.height() != grid.height_px || padded.pixels.width() != grid.width_px {
        return Err(Error::ShapeMismatch(
            "grid does not match padded image".into(),
        ));
    }
    grid.coords()
        .map(|c| Ok((c, extract_tile(&padded.pixels, grid, c)?)))
        .collect()
}

/// Collects tiles, in any order, into the full padded image.
#[derive(Debug)]
pub struct Assembler {
    grid: GridSpec,
    image: Image,
    filled: Vec<bool>,
}

impl Assembler {
    pub fn new(grid: GridSpec, channels: usize) -> Self {
        Self {
            grid,
            image: Image::new(grid.height_px, grid.width_px, channels),
            filled: vec![false; grid.num_patches()],
        }
    }

    pub fn insert(&mut self, coord: Coord, tile: &Image) -> Result<()> {
        let i = self.grid.linear_index(coord)?;
        let n = self.grid.patch_size;
        if tile.height() != n || tile.width() != n || tile.channels() != self.image.channels() {
            return Err(Error::ShapeMismatch(format!(
                "tile {coord} is {}x{}x{}",
                tile.height(),
                tile.width(),
                tile.channels()
            )));
        }
        if self.filled[i] {
            return Err(Error::DuplicateTile(coord));
        }
        self.image.paste(tile, coord.row * n, coord.col * n)?;
        self.filled[i] = true;
        Ok(())
    }

    pub fn finish(self) -> Result<Image> {
        if let Some(i) = self.filled.iter().position(|f| !f) {
            return Err(Error::MissingTile(
                self.grid.coord_of(i).expect("index in grid"),
            ));
        }
        Ok(self.image)
    }
}

impl TileSink for Assembler {
    fn put(&mut self, coord: Coord, tile: Image) -> Result<()> {
        self.insert(coord, &tile)
    }
}

/// Reassembles `tiles` and crops away the padding. Samples are left
/// unclamped; quantization happens in [`save_image`].
pub fn assemble_and_crop<'a>(
    tiles: impl IntoIterator<Item = (Coord, &'a Image)>,
    padded: &PaddedImage,
    grid: &GridSpec,
) -> Result<Image> {
    let mut asm = Assembler::new(*grid, padded.pixels.channels());
    for (c, t) in tiles {
        asm.insert(c, t)?;
    }
    padded.crop_to_original(&asm.finish()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scaling() {
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.7), 255);
        assert_eq!(quantize_u8(-0.2), 0);
        assert_eq!(quantize_u8(0.5 / 255.0), 1);
        for k in 0..=255u8 {
            assert_eq!(quantize_u8(k as f32 / 255.0), k);
        }
    }

    #[test]
    fn reflect_row() {
        let one_row = Image::from_vec(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            pad_reflect(&one_row, 2),
            Err(Error::TooSmallToPad { .. })
        ));
        let img = Image::from_vec(3, 3, 1, (1..=9).map(|v| v as f32).collect()).unwrap();
        assert!(matches!(
            pad_reflect(&img, 6),
            Err(Error::TooSmallToPad { .. })
        ));
        let img = Image::from_fn(4, 3, 1, |_, x, _| [1.0, 2.0, 3.0][x]);
        let p = pad_reflect(&img, 4).unwrap();
        assert_eq!(p.pad_right, 1);
        let row: Vec<f32> = (0..4).map(|x| p.pixels.get(0, x, 0)).collect();
        assert_eq!(row, vec![1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn reflect_by_two() {
        let img = Image::from_fn(6, 3, 1, |_, x, _| [10.0, 20.0, 30.0][x]);
        let padded = {
            let c = img.channels();
            let (h, w) = (img.height(), img.width());
            Image::from_fn(h, w + 2, c, |y, x, ch| img.get(y, reflect(x, w), ch))
        };
        let row: Vec<f32> = (0..5).map(|x| padded.get(0, x, 0)).collect();
        assert_eq!(row, vec![10.0, 20.0, 30.0, 20.0, 10.0]);
    }

    #[test]
    fn pad_amounts() {
        assert_eq!(pad_amount(1000, 512), 24);
        assert_eq!(pad_amount(512, 512), 0);
        let img = Image::new(1000, 512, 1);
        let p = pad_reflect(&img, 512).unwrap();
        assert_eq!((p.pad_bottom, p.pixels.height()), (24, 1024));
        let img = Image::from_fn(8, 8, 2, |y, x, c| (y + x + c) as f32);
        assert_eq!(pad_reflect(&img, 8).unwrap().pixels, img);
    }

    #[test]
    fn tiles_cover_rows() {
        let img = Image::from_fn(8, 12, 1, |y, x, _| (y * 100 + x) as f32);
        let grid = GridSpec::new(8, 12, 4).unwrap();
        let t = extract_tile(&img, &grid, Coord::new(1, 2)).unwrap();
        assert_eq!(t.get(0, 0, 0), 408.0);
        assert_eq!(t.get(3, 3, 0), 711.0);
    }

    #[test]
    fn assembler_errors() {
        let grid = GridSpec::new(2, 4, 2).unwrap();
        let mut asm = Assembler::new(grid, 1);
        asm.insert(Coord::new(0, 0), &Image::new(2, 2, 1)).unwrap();
        assert!(matches!(
            asm.insert(Coord::new(0, 0), &Image::new(2, 2, 1)),
            Err(Error::DuplicateTile(_))
        ));
        assert!(matches!(
            asm.insert(Coord::new(0, 1), &Image::new(3, 3, 1)),
            Err(Error::ShapeMismatch(_))
        ));
        match asm.finish() {
            Err(Error::MissingTile(c)) => assert_eq!(c, Coord::new(0, 1)),
            other => panic!("expected MissingTile, got {other:?}"),
        }
    }

    #[test]
    fn extract_assemble_crop_round_trip() {
        let img = Image::from_fn(10, 7, 3, |y, x, c| {
            ((y * 31 + x * 7 + c * 3) % 17) as f32 / 17.0
        });
        let padded = pad_reflect(&img, 4).unwrap();
        let grid = padded.grid(4).unwrap();
        let tiles = extract_tiles(&padded, &grid).unwrap();
        let back = assemble_and_crop(tiles.iter().map(|(c, t)| (*c, t)), &padded, &grid).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 6, 3, |y, x, c| {
            ((y * 50 + x * 20 + c * 70) % 256) as f32 / 255.0
        });
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(back, img);
        }
        let gray = Image::from_fn(3, 4, 1, |y, x, _| (y * 4 + x) as f32 / 255.0);
        let p = dir.path().join("g.png");
        save_image(&gray, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), gray);
    }

    #[test]
    fn unsupported_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, b"hello world, not an image").unwrap();
        assert!(matches!(load_image(&p), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            save_image(&Image::new(2, 2, 1), dir.path().join("x.bmp")),
            Err(Error::UnsupportedFormat(_))
        ));
        let rgba = image::RgbaImage::new(2, 2);
        let p = dir.path().join("rgba.png");
        rgba.save(&p).unwrap();
        assert!(matches!(load_image(&p), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io(_))
        ));
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\n garbage").unwrap();
        assert!(matches!(load_image(&p), Err(Error::DecodeError { .. })));
    }
}
