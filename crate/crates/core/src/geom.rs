//! Equirectangular raster geometry: pixel/sphere/Cartesian conversions and
//! rigid rotations of the sphere expressed on the ERP plane.
//!
//! Continuous pixel coordinates are corner based: the raster spans
//! `[0, W) x [0, H]` and the center of pixel `(i, j)` sits at
//! `(i + 0.5, j + 0.5)`. Longitude grows with `u`, latitude decreases with `v`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Panorama raster geometry with horizontal wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErpGrid {
    width: usize,
    height: usize,
}

impl ErpGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 4 || width % 2 != 0 || height < 2 {
            return Err(Error::InvalidGrid { width, height });
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// Continuous coordinate of the center of pixel `(i, j)`.
    #[inline]
    pub fn center<T: Real>(&self, i: usize, j: usize) -> PixelCoord<T> {
        let half = T::lit(0.5);
        PixelCoord::new(T::from_usize_lossy(i) + half, T::from_usize_lossy(j) + half)
    }

    /// Latitude of the centers of row `j`.
    pub fn row_latitude<T: Real>(&self, j: usize) -> T {
        let v = T::from_usize_lossy(j) + T::lit(0.5);
        T::FRAC_PI_2() - T::PI() * v / T::from_usize_lossy(self.height)
    }

    /// Grid reduced by an integer factor, as used for feature maps.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid {}x{} is not divisible by {factor}",
                self.width, self.height
            )));
        }
        Self::new(self.width / factor, self.height / factor)
    }

    /// Reduces a horizontal coordinate into `[0, W)`.
    #[inline]
    pub fn wrap_u<T: Real>(&self, u: T) -> T {
        let w = T::from_usize_lossy(self.width);
        let mut r = u - w * (u / w).floor();
        if r >= w {
            r -= w;
        }
        if r < T::zero() {
            r = T::zero();
        }
        r
    }
}

/// Continuous ERP coordinate (corner convention).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelCoord<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> PixelCoord<T> {
    #[inline]
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    /// Scales both coordinates, e.g. between raster resolutions.
    #[inline]
    pub fn scaled(self, factor: T) -> Self {
        Self::new(self.u * factor, self.v * factor)
    }

    /// Distance to `other` with the horizontal component taken modulo `W`.
    pub fn wrapped_distance(self, other: Self, grid: &ErpGrid) -> T {
        let w = T::from_usize_lossy(grid.width());
        let mut du = grid.wrap_u(self.u - other.u);
        if du > w / T::lit(2.0) {
            du = w - du;
        }
        let dv = self.v - other.v;
        (du * du + dv * dv).sqrt()
    }
}

/// Longitude/latitude pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SphCoord<T> {
    pub theta: T,
    pub phi: T,
}

/// Reduces an angle into `[-pi, pi)`.
#[inline]
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::TAU();
    let mut r = a - two_pi * ((a + T::PI()) / two_pi).floor();
    if r >= T::PI() {
        r -= two_pi;
    }
    if r < -T::PI() {
        r = -T::PI();
    }
    r
}

impl<T: Real> SphCoord<T> {
    #[inline]
    pub fn new(theta: T, phi: T) -> Self {
        Self { theta, phi }
    }

    /// Folds latitude into `[-pi/2, pi/2]` (crossing a pole shifts longitude by
    /// pi) and wraps longitude into `[-pi, pi)`.
    pub fn normalized(self) -> Self {
        let (mut theta, mut phi) = (self.theta, self.phi);
        if phi.abs() > T::FRAC_PI_2() {
            // into (-pi, pi]
            phi = -wrap_angle(-phi);
            if phi > T::FRAC_PI_2() {
                phi = T::PI() - phi;
                theta += T::PI();
            } else if phi < -T::FRAC_PI_2() {
                phi = -T::PI() - phi;
                theta += T::PI();
            }
        }
        Self::new(wrap_angle(theta), phi)
    }
}

/// Point on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> UnitVec3<T> {
    /// Normalizes `(x, y, z)`; fails on vectors shorter than `1e-9`.
    pub fn new(x: T, y: T, z: T) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n >= T::lit(1e-9)) {
            return Err(Error::ZeroVector);
        }
        Ok(Self { x: x / n, y: y / n, z: z / n })
    }

    /// Wraps components already known to have unit norm.
    #[inline]
    pub fn new_unchecked(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> [T; 3] {
        [
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        ]
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Great-circle angle to `other`, accurate at all separations.
    pub fn angle_to(&self, other: &Self) -> T {
        let c = self.cross(other);
        let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        s.atan2(self.dot(other))
    }
}

/// Inverse of the ERP linear map, evaluated at a continuous pixel coordinate.
pub fn pixel_to_sph<T: Real>(grid: &ErpGrid, p: PixelCoord<T>) -> SphCoord<T> {
    let w = T::from_usize_lossy(grid.width());
    let h = T::from_usize_lossy(grid.height());
    let theta = T::TAU() * p.u / w - T::PI();
    let phi = T::FRAC_PI_2() - T::PI() * p.v / h;
    SphCoord::new(theta, phi).normalized()
}

/// ERP linear map `u = W/(2pi) theta + W/2`, `v = -H/pi phi + H/2`.
pub fn sph_to_pixel<T: Real>(grid: &ErpGrid, s: SphCoord<T>) -> PixelCoord<T> {
    let w = T::from_usize_lossy(grid.width());
    let h = T::from_usize_lossy(grid.height());
    let u = w * (s.theta + T::PI()) / T::TAU();
    let v = h * (T::FRAC_PI_2() - s.phi) / T::PI();
    PixelCoord::new(u, v)
}

pub fn sph_to_cart<T: Real>(s: SphCoord<T>) -> UnitVec3<T> {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    UnitVec3::new_unchecked(cp * ct, cp * st, sp)
}

/// Longitude is pinned to 0 at the poles.
pub fn cart_to_sph<T: Real>(v: UnitVec3<T>) -> SphCoord<T> {
    let rho = (v.x * v.x + v.y * v.y).sqrt();
    let phi = v.z.atan2(rho);
    let n = (rho * rho + v.z * v.z).sqrt();
    let theta = if (v.z / n).abs() >= T::one() - T::lit(1e-12) || rho == T::zero() {
        T::zero()
    } else {
        wrap_angle(v.y.atan2(v.x))
    };
    SphCoord::new(theta, phi)
}

#[inline]
pub fn pixel_to_cart<T: Real>(grid: &ErpGrid, p: PixelCoord<T>) -> UnitVec3<T> {
    sph_to_cart(pixel_to_sph(grid, p))
}

#[inline]
pub fn cart_to_pixel<T: Real>(grid: &ErpGrid, v: UnitVec3<T>) -> PixelCoord<T> {
    let mut p = sph_to_pixel(grid, cart_to_sph(v));
    p.u = grid.wrap_u(p.u);
    p
}

/// Rotation axis of the camera/world frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Single-axis rotation, angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSpec<T> {
    pub axis: Axis,
    pub angle: T,
}

impl<T: Real> RotationSpec<T> {
    pub fn new(axis: Axis, angle: T) -> Self {
        Self { axis, angle }
    }

    pub fn from_degrees(axis: Axis, degrees: T) -> Self {
        Self::new(axis, degrees.to_radians())
    }

    pub fn inverse(self) -> Self {
        Self::new(self.axis, -self.angle)
    }

    pub fn identity() -> Self {
        Self::new(Axis::X, T::zero())
    }
}

/// 3x3 rotation matrix acting on unit vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self { m: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    pub fn from_spec(spec: RotationSpec<T>) -> Self {
        let (s, c) = spec.angle.sin_cos();
        Self::from_axis_sin_cos(spec.axis, s, c)
    }

    /// Exact quarter turn about the x-axis: `+1` for +90 degrees, `-1` for -90.
    pub fn quarter_turn_x(sign: i8) -> Self {
        let s = if sign >= 0 { T::one() } else { -T::one() };
        Self::from_axis_sin_cos(Axis::X, s, T::zero())
    }

    fn from_axis_sin_cos(axis: Axis, s: T, c: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        let m = match axis {
            Axis::X => [[o, z, z], [z, c, -s], [z, s, c]],
            Axis::Y => [[c, z, s], [z, o, z], [-s, z, c]],
            Axis::Z => [[c, -s, z], [s, c, z], [z, z, o]],
        };
        Self { m }
    }

    pub fn matrix(&self) -> [[T; 3]; 3] {
        self.m
    }

    pub fn transpose(&self) -> Self {
        let m = self.m;
        let mut t = m;
        for (r, row) in t.iter_mut().enumerate() {
            for (c, val) in row.iter_mut().enumerate() {
                *val = m[c][r];
            }
        }
        Self { m: t }
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, val) in row.iter_mut().enumerate() {
                *val = (0..3).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        Self { m: out }
    }

    #[inline]
    pub fn apply(&self, v: UnitVec3<T>) -> UnitVec3<T> {
        let m = &self.m;
        UnitVec3::new_unchecked(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// Pixel -> sphere -> rotate -> sphere -> pixel, horizontal output in `[0, W)`.
    #[inline]
    pub fn rotate_pixel(&self, grid: &ErpGrid, p: PixelCoord<T>) -> PixelCoord<T> {
        cart_to_pixel(grid, self.apply(pixel_to_cart(grid, p)))
    }
}

impl<T: Real> From<RotationSpec<T>> for Rotation<T> {
    fn from(spec: RotationSpec<T>) -> Self {
        Self::from_spec(spec)
    }
}

/// Spherical rotation of an ERP coordinate: `P^-1(R . P(x))`.
pub fn sph_rotate<T: Real>(spec: RotationSpec<T>, p: PixelCoord<T>, grid: &ErpGrid) -> PixelCoord<T> {
    Rotation::from_spec(spec).rotate_pixel(grid, p)
}

/// Which ERP frame a raster is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ViewTag {
    #[default]
    Primitive,
    Orthogonal,
}

impl ViewTag {
    pub fn other(self) -> Self {
        match self {
            ViewTag::Primitive => ViewTag::Orthogonal,
            ViewTag::Orthogonal => ViewTag::Primitive,
        }
    }

    /// Maps a point expressed in this view to the same sphere point in the
    /// other view.
    pub fn to_other_rotation<T: Real>(self) -> Rotation<T> {
        match self {
            ViewTag::Primitive => Rotation::quarter_turn_x(1),
            ViewTag::Orthogonal => Rotation::quarter_turn_x(-1),
        }
    }
}

/// Direction of a view change between the primitive and orthogonal frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewDirection {
    PrimToOrtho,
    OrthoToPrim,
}

impl ViewDirection {
    pub fn source(self) -> ViewTag {
        match self {
            ViewDirection::PrimToOrtho => ViewTag::Primitive,
            ViewDirection::OrthoToPrim => ViewTag::Orthogonal,
        }
    }

    pub fn target(self) -> ViewTag {
        self.source().other()
    }

    pub fn from_source(source: ViewTag) -> Self {
        match source {
            ViewTag::Primitive => ViewDirection::PrimToOrtho,
            ViewTag::Orthogonal => ViewDirection::OrthoToPrim,
        }
    }

    pub fn inverse(self) -> Self {
        Self::from_source(self.target())
    }

    /// Target-view pixel -> source-view pixel (the inverse warp):
    /// -90 degrees about x for primitive-to-orthogonal.
    pub fn sampling_rotation<T: Real>(self) -> Rotation<T> {
        self.target().to_other_rotation()
    }

    /// Source-view point -> target-view point.
    pub fn forward_rotation<T: Real>(self) -> Rotation<T> {
        self.source().to_other_rotation()
    }
}
