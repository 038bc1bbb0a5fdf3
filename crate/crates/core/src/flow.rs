//! Dense displacement fields on ERP rasters, cross-view conversion and
//! analytic ground truth for pure camera rotations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{ErpGrid, PixelCoord, Rotation, RotationSpec, ViewDirection, ViewTag};
use crate::image::ErpImage;
use crate::sampling::{bilinear_taps, VerticalBoundary};
use crate::scalar::Real;

/// Representative of `du mod W` in `[-W/2, W/2)`.
#[inline]
pub fn wrap_displacement<T: Real>(du: T, grid: &ErpGrid) -> T {
    let w = T::from_usize_lossy(grid.width());
    let half = w / T::lit(2.0);
    if du >= -half && du < half {
        return du;
    }
    let mut r = du + half;
    r = r - w * (r / w).floor();
    if r >= w {
        r -= w;
    }
    r - half
}

/// Two-component displacement field in pixels of its own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    grid: ErpGrid,
    u: Vec<T>,
    v: Vec<T>,
    view: ViewTag,
}

impl<T: Real> FlowField<T> {
    /// Builds a field and canonicalizes the horizontal component.
    pub fn new(grid: ErpGrid, u: Vec<T>, v: Vec<T>, view: ViewTag) -> Result<Self> {
        let mut f = Self::from_raw_parts(grid, u, v, view)?;
        for x in f.u.iter_mut() {
            *x = wrap_displacement(*x, &grid);
        }
        Ok(f)
    }

    /// Builds a field keeping horizontal components as given. Lookups and
    /// metrics treat `u` and `u + W` identically.
    pub fn from_raw_parts(grid: ErpGrid, u: Vec<T>, v: Vec<T>, view: ViewTag) -> Result<Self> {
        if u.len() != grid.len() || v.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "flow components of length {}/{} for a {}x{} grid",
                u.len(),
                v.len(),
                grid.width(),
                grid.height()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("flow field"));
        }
        Ok(Self { grid, u, v, view })
    }

    pub fn zeros(grid: ErpGrid, view: ViewTag) -> Self {
        Self { grid, u: vec![T::zero(); grid.len()], v: vec![T::zero(); grid.len()], view }
    }

    /// Evaluates `f(i, j)` per pixel in parallel.
    pub fn from_fn<F>(grid: ErpGrid, view: ViewTag, f: F) -> Self
    where
        F: Fn(usize, usize) -> (T, T) + Sync,
    {
        let w = grid.width();
        let (u, v): (Vec<T>, Vec<T>) = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (du, dv) = f(k % w, k / w);
                (wrap_displacement(du, &grid), dv)
            })
            .unzip();
        Self { grid, u, v, view }
    }

    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    #[inline]
    pub fn view(&self) -> ViewTag {
        self.view
    }

    pub fn with_view(mut self, view: ViewTag) -> Self {
        self.view = view;
        self
    }

    #[inline]
    pub fn u(&self) -> &[T] {
        &self.u
    }

    #[inline]
    pub fn v(&self) -> &[T] {
        &self.v
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> (T, T) {
        let k = self.grid.index(i, j);
        (self.u[k], self.v[k])
    }

    #[inline]
    pub fn at(&self, k: usize) -> (T, T) {
        (self.u[k], self.v[k])
    }

    /// Bilinear read; columns wrap, rows clamp.
    #[inline]
    pub fn sample(&self, p: PixelCoord<T>) -> (T, T) {
        let taps = bilinear_taps(self.grid.width(), self.grid.height(), p, VerticalBoundary::Clamp);
        (taps.apply(&self.u), taps.apply(&self.v))
    }

    /// Endpoint of pixel `k`, horizontal coordinate in `[0, W)`.
    #[inline]
    pub fn endpoint(&self, k: usize) -> PixelCoord<T> {
        let w = self.grid.width();
        let c = self.grid.center::<T>(k % w, k / w);
        PixelCoord::new(self.grid.wrap_u(c.u + self.u[k]), c.v + self.v[k])
    }

    /// Largest displacement magnitude.
    pub fn max_magnitude(&self) -> T {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(a, b)| (*a * *a + *b * *b).sqrt())
            .fold(T::zero(), T::max)
    }

    /// Multiplies both components by `factor` (vertical untouched by wrap).
    pub fn scaled(&self, factor: T) -> Self {
        let grid = self.grid;
        Self {
            grid,
            u: self.u.iter().map(|&x| wrap_displacement(x * factor, &grid)).collect(),
            v: self.v.iter().map(|&x| x * factor).collect(),
            view: self.view,
        }
    }

    /// Rolls the field `k` columns to the right.
    pub fn roll_columns(&self, k: i64) -> Self {
        let w = self.grid.width() as i64;
        Self::from_fn(self.grid, self.view, |i, j| {
            let src = (i as i64 - k).rem_euclid(w) as usize;
            self.get(src, j)
        })
    }

    /// Bilinear upsampling by an integer factor; vectors are scaled by it.
    pub fn upsample(&self, factor: usize) -> Self {
        let fine = ErpGrid::new(self.grid.width() * factor, self.grid.height() * factor)
            .expect("upsampled grid is valid");
        let s = T::from_usize_lossy(factor);
        let inv = T::one() / s;
        Self::from_fn(fine, self.view, |i, j| {
            let (du, dv) = self.sample(fine.center::<T>(i, j).scaled(inv));
            (du * s, dv * s)
        })
    }

    /// Inverse of [`upsample`](Self::upsample) by block averaging.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let coarse = self.grid.downsample(factor)?;
        let s = T::from_usize_lossy(factor);
        let n = s * s;
        Ok(Self::from_fn(coarse, self.view, |i, j| {
            let (mut su, mut sv) = (T::zero(), T::zero());
            for dj in 0..factor {
                for di in 0..factor {
                    let (a, b) = self.get(i * factor + di, j * factor + dj);
                    su += a;
                    sv += b;
                }
            }
            (su / n / s, sv / n / s)
        }))
    }
}

/// Backward warp: output pixel `x` reads `img` at `x + flow(x)`.
pub fn warp_image<T: Real>(img: &ErpImage<T>, flow: &FlowField<T>) -> Result<ErpImage<T>> {
    if img.grid() != flow.grid() {
        return Err(Error::DimensionMismatch("image and flow grids differ".into()));
    }
    let grid = img.grid();
    let w = grid.width();
    Ok(ErpImage::from_fn(grid, img.channels(), img.view(), |i, j, out| {
        img.sample_into(flow.endpoint(j * w + i), out)
    }))
}

/// Re-expresses a flow field in the other view by conjugating endpoints.
///
/// For every target pixel `x`: `y = R_sample(x)` is its source-view position,
/// the source flow is read bilinearly at `y`, the endpoint `y + F(y)` is
/// rotated forward into the target view and the wrapped difference to `x`
/// becomes the output vector.
pub fn flow_view_transform<T: Real>(flow: &FlowField<T>, direction: ViewDirection) -> FlowField<T> {
    let grid = flow.grid();
    let back: Rotation<T> = direction.sampling_rotation();
    let fwd: Rotation<T> = direction.forward_rotation();
    FlowField::from_fn(grid, direction.target(), |i, j| {
        let x = grid.center::<T>(i, j);
        let y = back.rotate_pixel(&grid, x);
        let (du, dv) = flow.sample(y);
        let end = fwd.rotate_pixel(&grid, PixelCoord::new(y.u + du, y.v + dv));
        (end.u - x.u, end.v - x.v)
    })
}

/// Ground-truth flow of a static scene seen by a camera whose view rotates by
/// `rotation`: each pixel moves to `R(x)`. Valid for `|angle| < pi/2`.
pub fn analytic_rotation_flow<T: Real>(grid: &ErpGrid, rotation: RotationSpec<T>) -> FlowField<T> {
    if rotation.angle == T::zero() {
        return FlowField::zeros(*grid, ViewTag::Primitive);
    }
    analytic_flow_for(grid, &Rotation::from_spec(rotation), ViewTag::Primitive)
}

/// Same as [`analytic_rotation_flow`] for an arbitrary rotation matrix.
pub fn analytic_flow_for<T: Real>(grid: &ErpGrid, rot: &Rotation<T>, view: ViewTag) -> FlowField<T> {
    let g = *grid;
    FlowField::from_fn(g, view, |i, j| {
        let x = g.center::<T>(i, j);
        let y = rot.rotate_pixel(&g, x);
        (y.u - x.u, y.v - x.v)
    })
}

/// Latitude band of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Poles,
    Equator,
}

/// Pixel partition into polar (`|lat| > 45 deg`) and equatorial regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: ErpGrid,
    regions: Vec<Region>,
}

impl RegionMask {
    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    #[inline]
    pub fn region(&self, k: usize) -> Region {
        self.regions[k]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn count(&self, r: Region) -> usize {
        self.regions.iter().filter(|&&x| x == r).count()
    }

    /// Polar fraction weighted by `cos(latitude)`.
    pub fn area_weighted_pole_fraction(&self) -> f64 {
        let w = self.grid.width();
        let (mut num, mut den) = (0.0, 0.0);
        for (k, r) in self.regions.iter().enumerate() {
            let wgt = self.grid.row_latitude::<f64>(k / w).cos();
            den += wgt;
            if *r == Region::Poles {
                num += wgt;
            }
        }
        num / den
    }
}

pub fn region_mask(grid: &ErpGrid) -> RegionMask {
    let w = grid.width();
    let limit = std::f64::consts::FRAC_PI_4;
    let regions = (0..grid.len())
        .map(|k| {
            if grid.row_latitude::<f64>(k / w).abs() > limit {
                Region::Poles
            } else {
                Region::Equator
            }
        })
        .collect();
    RegionMask { grid: *grid, regions }
}
