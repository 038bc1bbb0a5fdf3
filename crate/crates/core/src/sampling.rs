//! Bilinear tap computation on wrapped ERP rasters.

use crate::geom::PixelCoord;
use crate::scalar::Real;

/// How rows outside `[0, H)` are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerticalBoundary {
    /// Continue across the pole onto the antipodal meridian (row mirrored,
    /// column shifted by `W/2`).
    PoleReflect,
    /// Repeat the outermost row.
    Clamp,
}

/// Maps an integer cell `(i, j)` of a `w x h` raster into range.
#[inline]
pub fn resolve_cell(w: usize, h: usize, i: i64, j: i64, boundary: VerticalBoundary) -> usize {
    let (wi, hi) = (w as i64, h as i64);
    let (mut i, j) = match boundary {
        VerticalBoundary::Clamp => (i, j.clamp(0, hi - 1)),
        VerticalBoundary::PoleReflect => {
            let jm = j.rem_euclid(2 * hi);
            if jm >= hi {
                (i + wi / 2, 2 * hi - 1 - jm)
            } else {
                (i, jm)
            }
        }
    };
    i = i.rem_euclid(wi);
    (j as usize) * w + i as usize
}

/// Four raster cells and their bilinear weights.
#[derive(Debug, Clone, Copy)]
pub struct Taps<T> {
    pub index: [usize; 4],
    pub weight: [T; 4],
}

impl<T: Real> Taps<T> {
    /// Interpolates a single-channel buffer.
    #[inline]
    pub fn apply(&self, data: &[T]) -> T {
        self.weight[0] * data[self.index[0]]
            + self.weight[1] * data[self.index[1]]
            + self.weight[2] * data[self.index[2]]
            + self.weight[3] * data[self.index[3]]
    }

    /// Interpolates channel `c` of an interleaved buffer.
    #[inline]
    pub fn apply_channel(&self, data: &[T], channels: usize, c: usize) -> T {
        self.weight[0] * data[self.index[0] * channels + c]
            + self.weight[1] * data[self.index[1] * channels + c]
            + self.weight[2] * data[self.index[2] * channels + c]
            + self.weight[3] * data[self.index[3] * channels + c]
    }
}

/// Bilinear taps for a continuous coordinate on a `w x h` raster whose pixel
/// centers sit at half-integers. Columns always wrap.
#[inline]
pub fn bilinear_taps<T: Real>(w: usize, h: usize, p: PixelCoord<T>, boundary: VerticalBoundary) -> Taps<T> {
    let half = T::lit(0.5);
    let x = p.u - half;
    let y = p.v - half;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let i0 = x0.to_i64().unwrap_or(0);
    let j0 = y0.to_i64().unwrap_or(0);
    let gx = T::one() - fx;
    let gy = T::one() - fy;
    Taps {
        index: [
            resolve_cell(w, h, i0, j0, boundary),
            resolve_cell(w, h, i0 + 1, j0, boundary),
            resolve_cell(w, h, i0, j0 + 1, boundary),
            resolve_cell(w, h, i0 + 1, j0 + 1, boundary),
        ],
        weight: [gx * gy, fx * gy, gx * fy, fx * fy],
    }
}
