//! Multi-channel ERP rasters, wrap-aware bilinear sampling and the
//! primitive/orthogonal view transforms.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{ErpGrid, PixelCoord, Rotation, ViewDirection, ViewTag};
use crate::sampling::{bilinear_taps, VerticalBoundary};
use crate::scalar::Real;

/// Row-major raster with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage<T> {
    grid: ErpGrid,
    channels: usize,
    data: Vec<T>,
    view: ViewTag,
}

impl<T: Real> ErpImage<T> {
    pub fn new(grid: ErpGrid, channels: usize, data: Vec<T>, view: ViewTag) -> Result<Self> {
        if channels == 0 || data.len() != grid.len() * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {}x{}x{channels} image",
                data.len(),
                grid.width(),
                grid.height()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Self { grid, channels, data, view })
    }

    pub fn filled(grid: ErpGrid, channels: usize, value: T, view: ViewTag) -> Self {
        Self { grid, channels, data: vec![value; grid.len() * channels], view }
    }

    /// Builds an image by evaluating `f(i, j, out)` for every pixel, rows in parallel.
    pub fn from_fn<F>(grid: ErpGrid, channels: usize, view: ViewTag, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [T]) + Sync,
    {
        let w = grid.width();
        let mut data = vec![T::zero(); grid.len() * channels];
        data.par_chunks_mut(w * channels).enumerate().for_each(|(j, row)| {
            for (i, px) in row.chunks_mut(channels).enumerate() {
                f(i, j, px);
            }
        });
        Self { grid, channels, data, view }
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn view(&self) -> ViewTag {
        self.view
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn with_view(mut self, view: ViewTag) -> Self {
        self.view = view;
        self
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> T {
        self.data[self.grid.index(i, j) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[T] {
        let k = self.grid.index(i, j) * self.channels;
        &self.data[k..k + self.channels]
    }

    /// Writes the bilinear sample at `p` into `out` (one value per channel).
    #[inline]
    pub fn sample_into(&self, p: PixelCoord<T>, out: &mut [T]) {
        let taps = bilinear_taps(self.grid.width(), self.grid.height(), p, VerticalBoundary::PoleReflect);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = taps.apply_channel(&self.data, self.channels, c);
        }
    }

    /// Channel mean; single-channel images are returned unchanged.
    pub fn to_grayscale(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let n = T::from_usize_lossy(self.channels);
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().copied().sum::<T>() / n)
            .collect();
        Self { grid: self.grid, channels: 1, data, view: self.view }
    }

    /// Resamples into `grid`: output pixel `x` reads `self` at `map(x)`.
    pub fn remap<F>(&self, grid: ErpGrid, view: ViewTag, map: F) -> Self
    where
        F: Fn(PixelCoord<T>) -> PixelCoord<T> + Sync,
    {
        Self::from_fn(grid, self.channels, view, |i, j, out| {
            self.sample_into(map(grid.center(i, j)), out)
        })
    }

    /// Rolls the raster `k` columns to the right (a pure yaw).
    pub fn roll_columns(&self, k: i64) -> Self {
        let w = self.grid.width() as i64;
        Self::from_fn(self.grid, self.channels, self.view, |i, j, out| {
            let src = (i as i64 - k).rem_euclid(w) as usize;
            out.copy_from_slice(self.pixel(src, j));
        })
    }

    /// Spherical-area-weighted mean of channel `c` (weights `cos(latitude)`).
    pub fn area_weighted_mean(&self, c: usize) -> T {
        let mut num = T::zero();
        let mut den = T::zero();
        for j in 0..self.grid.height() {
            let wgt = self.grid.row_latitude::<T>(j).cos();
            for i in 0..self.grid.width() {
                num += wgt * self.get(i, j, c);
                den += wgt;
            }
        }
        num / den
    }
}

/// Bilinear interpolation with horizontal wrap and pole reflection.
pub fn bilinear_sample<T: Real>(img: &ErpImage<T>, p: PixelCoord<T>) -> Vec<T> {
    let mut out = vec![T::zero(); img.channels()];
    img.sample_into(p, &mut out);
    out
}

/// Re-projects `img` into the other view. Primitive-to-orthogonal samples the
/// source at `R(-90 deg, x)`; the inverse direction uses `R(+90 deg, x)`.
pub fn view_transform_image<T: Real>(img: &ErpImage<T>, direction: ViewDirection) -> ErpImage<T> {
    let grid = img.grid();
    let rot: Rotation<T> = direction.sampling_rotation();
    img.remap(grid, direction.target(), |x| rot.rotate_pixel(&grid, x))
}

/// Horizontal stretch `1/cos(phi)` of the ERP projection, capped at the value
/// of the outermost pixel-center row.
pub fn distortion_factor<T: Real>(grid: &ErpGrid, phi: T) -> T {
    let cap = T::one() / grid.row_latitude::<T>(0).cos();
    let c = phi.cos();
    if c <= T::zero() {
        cap
    } else {
        (T::one() / c).min(cap)
    }
}

/// Per-pixel primitive-frame stretch factor.
pub fn distortion_map<T: Real>(grid: &ErpGrid) -> ErpImage<T> {
    distortion_map_in_view(grid, ViewTag::Primitive)
}

/// Primitive-frame stretch factor expressed on the raster of `view`.
pub fn distortion_map_in_view<T: Real>(grid: &ErpGrid, view: ViewTag) -> ErpImage<T> {
    let g = *grid;
    let to_prim: Option<Rotation<T>> = match view {
        ViewTag::Primitive => None,
        ViewTag::Orthogonal => Some(ViewDirection::PrimToOrtho.sampling_rotation()),
    };
    ErpImage::from_fn(g, 1, view, |i, j, out| {
        let phi = match &to_prim {
            None => g.row_latitude(j),
            Some(rot) => {
                let p = rot.rotate_pixel(&g, g.center(i, j));
                crate::geom::pixel_to_sph(&g, p).phi
            }
        };
        out[0] = distortion_factor(&g, phi);
    })
}

/// Peak signal-to-noise ratio over channel 0 of rows `rows`.
pub fn psnr_rows<T: Real>(a: &ErpImage<T>, b: &ErpImage<T>, peak: f64, rows: std::ops::Range<usize>) -> f64 {
    assert_eq!(a.grid(), b.grid());
    let w = a.grid().width();
    let mut se = 0.0;
    let mut n = 0usize;
    for j in rows {
        for i in 0..w {
            for c in 0..a.channels() {
                let d = (a.get(i, j, c) - b.get(i, j, c)).to_f64_lossy();
                se += d * d;
                n += 1;
            }
        }
    }
    if se == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / (se / n as f64)).log10()
}
