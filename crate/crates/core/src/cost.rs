//! Patch descriptors, all-pairs correlation volumes, their average-pooled
//! pyramid and wrap-aware lookups into it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geom::{ErpGrid, PixelCoord, ViewTag};
use crate::image::ErpImage;
use crate::sampling::{bilinear_taps, resolve_cell, VerticalBoundary};
use crate::scalar::Real;

/// Descriptor side length in feature cells.
pub const PATCH_SIDE: usize = 5;
/// Descriptor depth.
pub const DESCRIPTOR_DEPTH: usize = PATCH_SIDE * PATCH_SIDE;
/// Levels in a correlation pyramid.
pub const PYRAMID_LEVELS: usize = 4;

/// Per-pixel descriptors at feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    map: ErpImage<T>,
    downsample: usize,
}

impl<T: Real> FeatureMap<T> {
    /// Wraps an arbitrary multi-channel raster as a feature map.
    pub fn from_image(map: ErpImage<T>, downsample: usize) -> Self {
        Self { map, downsample }
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.map.grid()
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.map.channels()
    }

    /// Image pixels per feature pixel along each axis.
    #[inline]
    pub fn downsample(&self) -> usize {
        self.downsample
    }

    #[inline]
    pub fn view(&self) -> ViewTag {
        self.map.view()
    }

    #[inline]
    pub fn descriptor(&self, k: usize) -> &[T] {
        let d = self.depth();
        &self.map.data()[k * d..(k + 1) * d]
    }

    pub fn as_image(&self) -> &ErpImage<T> {
        &self.map
    }

    /// Zero-pads the depth to a multiple of `groups`, spreading the padding so
    /// each contiguous group keeps `floor(D/G)` or `ceil(D/G)` real channels.
    pub fn padded_for_groups(&self, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::InvalidParameter("zero groups".into()));
        }
        let d = self.depth();
        if d % groups == 0 {
            return Ok(self.clone());
        }
        let per = d.div_ceil(groups);
        let (base, extra) = (d / groups, d % groups);
        // source channel for each padded slot, None for padding
        let mut layout = Vec::with_capacity(per * groups);
        let mut src = 0;
        for g in 0..groups {
            let real = base + usize::from(g < extra);
            for s in 0..per {
                layout.push(if s < real {
                    src += 1;
                    Some(src - 1)
                } else {
                    None
                });
            }
        }
        let grid = self.grid();
        let map = ErpImage::from_fn(grid, per * groups, self.view(), |i, j, out| {
            let px = self.map.pixel(i, j);
            for (o, l) in out.iter_mut().zip(&layout) {
                *o = l.map_or(T::zero(), |c| px[c]);
            }
        });
        Ok(Self { map, downsample: self.downsample })
    }
}

/// Deterministic descriptors: the 5x5 grid of `s x s` block means around each
/// feature pixel (wrap horizontally, pole-reflect vertically), mean-removed
/// and unit-normalized. Flat neighborhoods give the zero vector.
pub fn extract_features<T: Real>(img: &ErpImage<T>, downsample: usize) -> Result<FeatureMap<T>> {
    if !matches!(downsample, 1 | 2 | 4) {
        return Err(Error::InvalidParameter(format!("downsample factor {downsample} not in {{1, 2, 4}}")));
    }
    let gray = img.to_grayscale();
    let fgrid = img.grid().downsample(downsample)?;
    let s = downsample;
    let norm = T::from_usize_lossy(s * s);
    let blocks = ErpImage::from_fn(fgrid, 1, img.view(), |i, j, out| {
        let mut acc = T::zero();
        for dj in 0..s {
            for di in 0..s {
                acc += gray.get(i * s + di, j * s + dj, 0);
            }
        }
        out[0] = acc / norm;
    });
    let (fw, fh) = (fgrid.width(), fgrid.height());
    let half = (PATCH_SIDE / 2) as i64;
    let depth = T::from_usize_lossy(DESCRIPTOR_DEPTH);
    let map = ErpImage::from_fn(fgrid, DESCRIPTOR_DEPTH, img.view(), |i, j, out| {
        let mut n = 0;
        for dj in -half..=half {
            for di in -half..=half {
                let k = resolve_cell(fw, fh, i as i64 + di, j as i64 + dj, VerticalBoundary::PoleReflect);
                out[n] = blocks.data()[k];
                n += 1;
            }
        }
        let mean = out.iter().copied().sum::<T>() / depth;
        let scale = T::one() + mean.abs();
        for x in out.iter_mut() {
            *x -= mean;
        }
        let len = out.iter().map(|&x| x * x).sum::<T>().sqrt();
        if len <= T::lit(1e-6) * scale {
            out.iter_mut().for_each(|x| *x = T::zero());
        } else {
            out.iter_mut().for_each(|x| *x /= len);
        }
    });
    Ok(FeatureMap { map, downsample })
}

/// One pyramid level: for every query pixel a `height x width` plane of
/// correlations against the second frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLevel<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> CostLevel<T> {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn plane(&self, q: usize) -> &[T] {
        let n = self.width * self.height;
        &self.data[q * n..(q + 1) * n]
    }

    #[inline]
    pub fn get(&self, q: usize, k: usize, l: usize) -> T {
        self.plane(q)[l * self.width + k]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Bilinear sample of query `q`'s plane at a level-scaled coordinate.
    #[inline]
    pub fn sample(&self, q: usize, p: PixelCoord<T>) -> T {
        bilinear_taps(self.width, self.height, p, VerticalBoundary::PoleReflect).apply(self.plane(q))
    }


    /// Euclidean norm of the bilinearly interpolated vector when the planes
    /// hold the channels of a feature map.
    #[inline]
    pub fn interpolated_norm(&self, p: PixelCoord<T>) -> T {
        let taps = bilinear_taps(self.width, self.height, p, VerticalBoundary::PoleReflect);
        let planes = self.data.len() / (self.width * self.height);
        (0..planes).map(|c| taps.apply(self.plane(c)).powi(2)).sum::<T>().sqrt()
    }

    /// 2x2 average pooling of the target dimensions. Odd sizes are padded by
    /// wrapping columns and reflecting rows over the pole.
    fn pooled(&self, queries: usize) -> Self {
        let (w, h) = (self.width, self.height);
        let (pw, ph) = (w.div_ceil(2), h.div_ceil(2));
        let quarter = T::lit(0.25);
        let mut data = vec![T::zero(); queries * pw * ph];
        data.par_chunks_mut(pw * ph).enumerate().for_each(|(q, out)| {
            let src = self.plane(q);
            for l in 0..ph {
                for k in 0..pw {
                    let mut acc = T::zero();
                    for b in 0..2 {
                        for a in 0..2 {
                            let idx = if 2 * k + a < w && 2 * l + b < h {
                                (2 * l + b) * w + 2 * k + a
                            } else {
                                resolve_cell(w, h, (2 * k + a) as i64, (2 * l + b) as i64, VerticalBoundary::PoleReflect)
                            };
                            acc += src[idx];
                        }
                    }
                    out[l * pw + k] = acc * quarter;
                }
            }
        });
        Self { width: pw, height: ph, data }
    }
}

/// Dense 4D correlation volume (query grid x target grid).
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume<T> {
    query_grid: ErpGrid,
    level: CostLevel<T>,
    view: ViewTag,
}

impl<T: Real> CostVolume<T> {
    /// Wraps raw data laid out as `[query][target row][target col]`.
    pub fn from_raw(query_grid: ErpGrid, target_grid: ErpGrid, data: Vec<T>, view: ViewTag) -> Result<Self> {
        if data.len() != query_grid.len() * target_grid.len() {
            return Err(Error::DimensionMismatch("cost volume length".into()));
        }
        let level = CostLevel { width: target_grid.width(), height: target_grid.height(), data };
        Ok(Self { query_grid, level, view })
    }

    pub fn query_grid(&self) -> ErpGrid {
        self.query_grid
    }

    #[inline]
    pub fn get(&self, q: usize, k: usize, l: usize) -> T {
        self.level.get(q, k, l)
    }

    pub fn data(&self) -> &[T] {
        &self.level.data
    }

    /// Multiplies every entry by `factor` in place.
    pub fn scale(&mut self, factor: T) {
        self.level.data.par_iter_mut().for_each(|x| *x *= factor);
    }
}

/// `C[i,j,k,l] = sum_h f1[h,i,j] * f2[h,k,l]`.
pub fn all_pairs_correlation<T: Real>(f1: &FeatureMap<T>, f2: &FeatureMap<T>) -> Result<CostVolume<T>> {
    if f1.grid() != f2.grid() || f1.depth() != f2.depth() {
        return Err(Error::DimensionMismatch(format!(
            "features {}x{}x{} vs {}x{}x{}",
            f1.grid().width(),
            f1.grid().height(),
            f1.depth(),
            f2.grid().width(),
            f2.grid().height(),
            f2.depth()
        )));
    }
    let grid = f1.grid();
    let n = grid.len();
    let d = f1.depth();
    let a = f1.as_image().data();
    let b = f2.as_image().data();
    let mut data = vec![T::zero(); n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(q, row)| {
        let x = &a[q * d..(q + 1) * d];
        for (t, out) in row.iter_mut().enumerate() {
            let y = &b[t * d..(t + 1) * d];
            let mut acc = T::zero();
            for h in 0..d {
                acc += x[h] * y[h];
            }
            *out = acc;
        }
    });
    CostVolume::from_raw(grid, grid, data, f1.view())
}

/// Correlation pyramid: level `i` is the 2x2 average pool of level `i - 1`
/// over the target dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPyramid<T> {
    query_grid: ErpGrid,
    levels: Vec<CostLevel<T>>,
    view: ViewTag,
    targets: Option<Vec<CostLevel<T>>>,
}

pub fn build_pyramid<T: Real>(level1: CostVolume<T>) -> CostPyramid<T> {
    let queries = level1.query_grid.len();
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    levels.push(level1.level);
    for _ in 1..PYRAMID_LEVELS {
        let next = levels.last().expect("non-empty").pooled(queries);
        levels.push(next);
    }
    CostPyramid { query_grid: level1.query_grid, levels, view: level1.view, targets: None }
}

/// Second-frame descriptors laid out channel by channel and pooled like the
/// correlation planes, so level `i` of the pyramid equals `f1` dotted with
/// level `i` of these.
fn target_levels<T: Real>(f2: &FeatureMap<T>) -> Vec<CostLevel<T>> {
    let grid = f2.grid();
    let (n, d) = (grid.len(), f2.depth());
    let src = f2.as_image().data();
    let mut data = vec![T::zero(); n * d];
    for (k, px) in src.chunks(d).enumerate() {
        for (c, &x) in px.iter().enumerate() {
            data[c * n + k] = x;
        }
    }
    let mut levels = vec![CostLevel { width: grid.width(), height: grid.height(), data }];
    for _ in 1..PYRAMID_LEVELS {
        let next = levels.last().expect("non-empty").pooled(d);
        levels.push(next);
    }
    levels
}

impl<T: Real> CostPyramid<T> {
    /// Correlation of two feature maps divided by `sqrt(D)`, then pooled.
    pub fn from_features(f1: &FeatureMap<T>, f2: &FeatureMap<T>) -> Result<Self> {
        let mut vol = all_pairs_correlation(f1, f2)?;
        vol.scale(T::one() / T::from_usize_lossy(f1.depth()).sqrt());
        let mut pyr = build_pyramid(vol);
        pyr.targets = Some(target_levels(f2));
        Ok(pyr)
    }

    /// Norm of the interpolated second-frame descriptor at a level-scaled
    /// coordinate, when the pyramid was built from features.
    #[inline]
    pub fn target_norm(&self, level: usize, p: PixelCoord<T>) -> Option<T> {
        self.targets.as_ref().map(|t| t[level].interpolated_norm(p))
    }

    #[inline]
    pub fn query_grid(&self) -> ErpGrid {
        self.query_grid
    }

    #[inline]
    pub fn view(&self) -> ViewTag {
        self.view
    }

    #[inline]
    pub fn levels(&self) -> &[CostLevel<T>] {
        &self.levels
    }

    #[inline]
    pub fn level(&self, i: usize) -> &CostLevel<T> {
        &self.levels[i]
    }
}

/// Shape of the integer lookup neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LookupGrid {
    /// `(2r+1)^2` offsets with `max(|dx|, |dy|) <= r`.
    #[default]
    Square,
    /// Offsets with `|dx| + |dy| <= r`.
    Diamond,
}

impl LookupGrid {
    /// Offsets ordered row by row (dy outer, dx inner).
    pub fn offsets(self, radius: usize) -> Vec<(i32, i32)> {
        let r = radius as i32;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self == LookupGrid::Square || dx.abs() + dy.abs() <= r {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

/// Correlations sampled around each pixel's current correspondence,
/// laid out per pixel as `[level][offset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPatch<T> {
    grid: ErpGrid,
    offsets: Vec<(i32, i32)>,
    levels: usize,
    data: Vec<T>,
}

impl<T: Real> CorrelationPatch<T> {
    pub(crate) fn from_parts(grid: ErpGrid, offsets: Vec<(i32, i32)>, levels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), grid.len() * offsets.len() * levels);
        Self { grid, offsets, levels, data }
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    #[inline]
    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    #[inline]
    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn per_pixel(&self) -> usize {
        self.offsets.len() * self.levels
    }

    #[inline]
    pub fn pixel(&self, k: usize) -> &[T] {
        let n = self.per_pixel();
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn level(&self, k: usize, level: usize) -> &[T] {
        let m = self.offsets.len();
        &self.pixel(k)[level * m..(level + 1) * m]
    }

    /// Index of the zero offset within a level.
    pub fn center_index(&self) -> usize {
        self.offsets.iter().position(|&o| o == (0, 0)).expect("grid contains the origin")
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Element-wise sum of two patches with the same layout.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid || self.offsets != other.offsets || self.levels != other.levels {
            return Err(Error::DimensionMismatch("patch layouts differ".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Ok(Self { grid: self.grid, offsets: self.offsets.clone(), levels: self.levels, data })
    }
}

/// Correspondence of pixel `k`: its center displaced by the flow, horizontal
/// coordinate taken modulo the width.
#[inline]
pub(crate) fn correspondence<T: Real>(flow: &FlowField<T>, k: usize) -> PixelCoord<T> {
    flow.endpoint(k)
}

/// Level-`level` coordinate of a level-0 coordinate.
#[inline]
pub(crate) fn level_scale<T: Real>(level: usize) -> T {
    T::one() / T::from_usize_lossy(1 << level)
}

/// Samples every pyramid level around each pixel's correspondence.
pub fn lookup<T: Real>(
    pyr: &CostPyramid<T>,
    flow: &FlowField<T>,
    radius: usize,
    shape: LookupGrid,
) -> Result<CorrelationPatch<T>> {
    lookup_levels(pyr, flow, radius, shape, PYRAMID_LEVELS)
}

/// [`lookup`] restricted to the first `levels` pyramid levels.
pub fn lookup_levels<T: Real>(
    pyr: &CostPyramid<T>,
    flow: &FlowField<T>,
    radius: usize,
    shape: LookupGrid,
    levels: usize,
) -> Result<CorrelationPatch<T>> {
    let grid = pyr.query_grid();
    if flow.grid() != grid {
        return Err(Error::DimensionMismatch("flow grid differs from the pyramid's query grid".into()));
    }
    let levels = levels.clamp(1, pyr.levels().len());
    let offsets = shape.offsets(radius);
    let m = offsets.len();
    let mut data = vec![T::zero(); grid.len() * m * levels];
    data.par_chunks_mut(m * levels).enumerate().for_each(|(k, out)| {
        let c = correspondence(flow, k);
        for l in 0..levels {
            let s = level_scale::<T>(l);
            let lvl = pyr.level(l);
            for (n, &(dx, dy)) in offsets.iter().enumerate() {
                let p = PixelCoord::new(c.u + T::from_i32(dx).unwrap(), c.v + T::from_i32(dy).unwrap());
                out[l * m + n] = lvl.sample(k, p.scaled(s));
            }
        }
    });
    Ok(CorrelationPatch::from_parts(grid, offsets, levels, data))
}
