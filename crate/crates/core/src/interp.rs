//! Fast bilinear interpolation of 2x2 cells onto N x N blocks, and the
//! densification that turns a 3x3 lattice of patch moments into per-pixel
//! moment fields.
//!
//! A cell `q` is expanded to `Q'[i][j] = sum_kl q[k][l] * M_kl[i][j]` with
//!
//! ```text
//! M_00 = (N - v_i)(N - v_j) / N^2     M_01 = (N - v_i) v_j / N^2
//! M_10 = v_i (N - v_j) / N^2          M_11 = v_i v_j / N^2
//! v_k  = k N / (N - 1)
//! ```
//!
//! so `Q'` reproduces `q[0][0]` at its top-left and `q[1][1]` at its
//! bottom-right sample. The four matrices depend only on `N` and are built
//! once per run.

use crate::error::{Error, Result};
use crate::grid::check_patch_size;
use crate::moments::Neighborhood3x3;

/// A 2x2 cell of lattice values, `[row][col]`.
pub type Cell = [[f64; 2]; 2];

/// Sample position `v_k` along one axis of an `n`-pixel block.
#[inline]
pub fn sample_position(k: usize, n: usize) -> f64 {
    (k * n) as f64 / (n - 1) as f64
}

/// The four precomputed interpolation weight matrices for one patch size.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrices {
    n: usize,
    v: Vec<f64>,
    m00: Vec<f64>,
    m01: Vec<f64>,
    m10: Vec<f64>,
    m11: Vec<f64>,
}

impl BasisMatrices {
    pub fn new(n: usize) -> Result<Self> {
        check_patch_size(n)?;
        let nf = n as f64;
        let n2 = nf * nf;
        let v: Vec<f64> = (0..n).map(|k| sample_position(k, n)).collect();
        let mut m00 = vec![0.0; n * n];
        let mut m01 = vec![0.0; n * n];
        let mut m10 = vec![0.0; n * n];
        let mut m11 = vec![0.0; n * n];
        for (i, &vi) in v.iter().enumerate() {
            let (a, b) = (nf - vi, vi);
            for (j, &vj) in v.iter().enumerate() {
                let (c, d) = (nf - vj, vj);
                let idx = i * n + j;
                m00[idx] = a * c / n2;
                m01[idx] = a * d / n2;
                m10[idx] = b * c / n2;
                m11[idx] = b * d / n2;
            }
        }
        Ok(Self {
            n,
            v,
            m00,
            m01,
            m10,
            m11,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample_positions(&self) -> &[f64] {
        &self.v
    }

    /// Matrix `M_kl`, row-major `n x n`.
    pub fn matrix(&self, k: usize, l: usize) -> &[f64] {
        match (k, l) {
            (0, 0) => &self.m00,
            (0, 1) => &self.m01,
            (1, 0) => &self.m10,
            (1, 1) => &self.m11,
            _ => panic!("basis index ({k},{l}) out of range"),
        }
    }

    /// Weighted sum of the basis over rows `rows` and columns `cols` of the
    /// block, written to `out` with the given element stride.
    #[inline]
    fn expand_window(
        &self,
        q: &Cell,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
        out: &mut [f64],
        out_row_stride: usize,
        out_col_stride: usize,
    ) {
        let n = self.n;
        let width = cols.len();
        for (oi, i) in rows.enumerate() {
            let base = i * n + cols.start;
            let m00 = &self.m00[base..base + width];
            let m01 = &self.m01[base..base + width];
            let m10 = &self.m10[base..base + width];
            let m11 = &self.m11[base..base + width];
            let row = &mut out[oi * out_row_stride..];
            if out_col_stride == 1 {
                let dst = &mut row[..width];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = q[0][0] * m00[j] + q[0][1] * m01[j] + q[1][0] * m10[j] + q[1][1] * m11[j];
                }
            } else {
                for j in 0..width {
                    row[j * out_col_stride] =
                        q[0][0] * m00[j] + q[0][1] * m01[j] + q[1][0] * m10[j] + q[1][1] * m11[j];
                }
            }
        }
    }
}

pub fn precompute_basis(n: usize) -> Result<BasisMatrices> {
    BasisMatrices::new(n)
}

/// Fast interpolation of one cell using the cached basis.
pub fn fast_interp_cell(q: &Cell, basis: &BasisMatrices) -> Vec<f64> {
    let n = basis.n;
    let mut out = vec![0.0; n * n];
    basis.expand_window(q, 0..n, 0..n, &mut out, n, 1);
    out
}

/// Plain bilinear form evaluated pixel by pixel, recomputing every weight.
///
/// Deliberately slow; used as the reference the fast path is checked against.
pub fn naive_bilinear_cell(q: &Cell, n: usize) -> Vec<f64> {
    assert!(n >= 2, "naive_bilinear_cell needs n >= 2");
    let nf = n as f64;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let vi = sample_position(i, n);
            let vj = sample_position(j, n);
            let left = [nf - vi, vi];
            let right = [nf - vj, vj];
            let mut acc = 0.0;
            for (k, lw) in left.iter().enumerate() {
                let mut inner = 0.0;
                for (l, rw) in right.iter().enumerate() {
                    inner += q[k][l] * rw;
                }
                acc += lw * inner;
            }
            out[i * n + j] = acc / (nf * nf);
        }
    }
    out
}

/// Frobenius-product form with the 2x2 weight block rebuilt for every pixel
/// from sample positions computed once per call.
pub fn reformulated_cell(q: &Cell, n: usize) -> Vec<f64> {
    assert!(n >= 2, "reformulated_cell needs n >= 2");
    let nf = n as f64;
    let n2 = nf * nf;
    let v: Vec<f64> = (0..n).map(|k| sample_position(k, n)).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let w = [
                [(nf - v[i]) * (nf - v[j]) / n2, (nf - v[i]) * v[j] / n2],
                [v[i] * (nf - v[j]) / n2, v[i] * v[j] / n2],
            ];
            out[i * n + j] =
                w[0][0] * q[0][0] + w[0][1] * q[0][1] + w[1][0] * q[1][0] + w[1][1] * q[1][1];
        }
    }
    out
}

/// Per-pixel moment estimates for one patch, interleaved `n x n x channels`.
///
/// `inv_std` holds interpolated reciprocals of the patch standard deviations,
/// so normalization is `(x - mean) * inv_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMomentField {
    n: usize,
    channels: usize,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl PixelMomentField {
    pub fn constant(n: usize, mean: &[f64], inv_std: &[f64]) -> Self {
        let channels = mean.len();
        let mut m = Vec::with_capacity(n * n * channels);
        let mut s = Vec::with_capacity(n * n * channels);
        for _ in 0..n * n {
            m.extend_from_slice(mean);
            s.extend_from_slice(inv_std);
        }
        Self {
            n,
            channels,
            mean: m,
            inv_std: s,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.n + j) * self.channels + c
    }

    /// Holds both fields piecewise constant over `g x g` blocks.
    pub fn quantize(&self, g: usize) -> Result<Self> {
        Ok(Self {
            n: self.n,
            channels: self.channels,
            mean: quantize_granularity(&self.mean, self.n, self.channels, g)?,
            inv_std: quantize_granularity(&self.inv_std, self.n, self.channels, g)?,
        })
    }
}

/// Expands a 3x3 neighborhood into an `n x n` field per channel: each of the
/// four overlapping 2x2 corner cells is interpolated to `n x n`, the four
/// blocks tile a `2n x 2n` square, and the central `n x n` window is kept.
///
/// Only the kept quarter of each block is evaluated.
fn densify_lattice(lattices: &[[[f64; 3]; 3]], basis: &BasisMatrices) -> Vec<f64> {
    let n = basis.n;
    let half = n / 2;
    let channels = lattices.len();
    let mut out = vec![0.0; n * n * channels];
    for (ch, lat) in lattices.iter().enumerate() {
        for cell_row in 0..2 {
            for cell_col in 0..2 {
                let q = [
                    [lat[cell_row][cell_col], lat[cell_row][cell_col + 1]],
                    [lat[cell_row + 1][cell_col], lat[cell_row + 1][cell_col + 1]],
                ];
                // Top cells contribute their bottom half, left cells their right half.
                let rows = if cell_row == 0 { half..n } else { 0..half };
                let cols = if cell_col == 0 { half..n } else { 0..half };
                let out_row0 = cell_row * half;
                let out_col0 = cell_col * half;
                let start = (out_row0 * n + out_col0) * channels + ch;
                basis.expand_window(&q, rows, cols, &mut out[start..], n * channels, channels);
            }
        }
    }
    out
}

/// Per-pixel moment fields for one patch from its 3x3 neighborhood.
///
/// With `reciprocal_sigma` the standard deviations are inverted before
/// interpolation, making the normalization multiplier itself bilinear. Without
/// it the deviations are interpolated first and inverted afterwards.
pub fn densify(
    hood: &Neighborhood3x3,
    basis: &BasisMatrices,
    reciprocal_sigma: bool,
) -> Result<PixelMomentField> {
    let channels = hood.channels();
    if hood.stddev.len() != channels {
        return Err(Error::ShapeMismatch(
            "mean/stddev channel counts differ".into(),
        ));
    }
    for lat in &hood.stddev {
        for &s in lat.iter().flatten() {
            if s.is_nan() || s <= 0.0 {
                return Err(Error::NonPositiveSigma(s));
            }
        }
    }
    let mean = densify_lattice(&hood.mean, basis);
    let inv_std = if reciprocal_sigma {
        let inv: Vec<[[f64; 3]; 3]> = hood
            .stddev
            .iter()
            .map(|lat| lat.map(|row| row.map(|s| 1.0 / s)))
            .collect();
        densify_lattice(&inv, basis)
    } else {
        densify_lattice(&hood.stddev, basis)
            .into_iter()
            .map(|s| 1.0 / s)
            .collect()
    };
    Ok(PixelMomentField {
        n: basis.n,
        channels,
        mean,
        inv_std,
    })
}

/// Makes an interleaved `n x n x channels` field piecewise constant over
/// `g x g` blocks, each block taking its top-left sample.
pub fn quantize_granularity(
    field: &[f64],
    n: usize,
    channels: usize,
    g: usize,
) -> Result<Vec<f64>> {
    if g == 0 || !n.is_multiple_of(g) {
        return Err(Error::BadGranularity {
            granularity: g,
            patch_size: n,
        });
    }
    if field.len() != n * n * channels {
        return Err(Error::ShapeMismatch(format!(
            "field of {} values is not {n}x{n}x{channels}",
            field.len()
        )));
    }
    if g == 1 {
        return Ok(field.to_vec());
    }
    let mut out = vec![0.0; field.len()];
    for i in 0..n {
        let si = i - i % g;
        for j in 0..n {
            let sj = j - j % g;
            let dst = (i * n + j) * channels;
            let src = (si * n + sj) * channels;
            out[dst..dst + channels].copy_from_slice(&field[src..src + channels]);
        }
    }
    Ok(out)
}
