//! Synthetic panoramas whose textures are functions on the sphere, camera
//! rotation pairs with analytic ground-truth flow, and polar noise injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{analytic_rotation_flow, FlowField};
use crate::geom::{pixel_to_cart, Axis, ErpGrid, Rotation, RotationSpec, UnitVec3, ViewTag};
use crate::image::ErpImage;
use crate::scalar::Real;

const OCTAVES: usize = 4;
const PERSISTENCE: f64 = 0.5;
const BASE_FREQUENCY: f64 = 2.0;
const DOT_COUNT: usize = 600;

/// Procedural texture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    /// Multiscale 3D value noise sampled on the unit sphere.
    #[default]
    ValueNoise,
    /// Longitude/latitude checkerboard.
    Checker,
    /// Gaussian blobs at random sphere points.
    RandomDots,
}

/// Additive Gaussian noise restricted to high latitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarNoise {
    pub threshold_deg: f64,
    pub sigma: f64,
}

/// Scene description, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    #[serde(default)]
    pub texture: TextureKind,
    pub width: usize,
    pub height: usize,
    pub axis: Axis,
    /// Camera rotation in degrees.
    pub angle_deg: f64,
    #[serde(default)]
    pub polar_noise: Option<PolarNoise>,
}

impl SceneSpec {
    pub fn new(seed: u64, texture: TextureKind, grid: ErpGrid, axis: Axis, angle_deg: f64) -> Self {
        Self {
            seed,
            texture,
            width: grid.width(),
            height: grid.height(),
            axis,
            angle_deg,
            polar_noise: None,
        }
    }

    pub fn grid(&self) -> Result<ErpGrid> {
        ErpGrid::new(self.width, self.height)
    }

    pub fn rotation<T: Real>(&self) -> RotationSpec<T> {
        RotationSpec::from_degrees(self.axis, T::lit(self.angle_deg))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("scene spec: {}", e.message())))
    }
}

/// Deterministic texture defined on the unit sphere, intensities in `[0, 255]`.
#[derive(Debug, Clone)]
pub struct SphereTexture {
    kind: TextureKind,
    seed: u64,
    offsets: [[f64; 3]; OCTAVES],
    dots: Vec<([f64; 3], f64, f64)>,
}

fn hash3(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= (v as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = h.rotate_left(27).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let cell = p.map(|c| c.floor());
    let f = [fade(p[0] - cell[0]), fade(p[1] - cell[1]), fade(p[2] - cell[2])];
    let c = cell.map(|c| c as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
            * (if dy == 1 { f[1] } else { 1.0 - f[1] })
            * (if dz == 1 { f[2] } else { 1.0 - f[2] });
        acc += w * hash3(seed, c[0] + dx, c[1] + dy, c[2] + dz);
    }
    acc
}

impl SphereTexture {
    pub fn new(kind: TextureKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets = [[0.0; 3]; OCTAVES];
        for o in offsets.iter_mut() {
            *o = [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)];
        }
        let dots = if kind == TextureKind::RandomDots {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            (0..DOT_COUNT)
                .map(|_| {
                    let v: [f64; 3] = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                    let sigma = rng.gen_range(0.02..0.06);
                    let amp = rng.gen_range(80.0..180.0) * if rng.gen_bool(0.5) { 1.0 } else { -0.6 };
                    (v.map(|c| c / n), sigma, amp)
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { kind, seed, offsets, dots }
    }

    /// Intensity at a point of the unit sphere.
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match self.kind {
            TextureKind::ValueNoise => {
                let (mut acc, mut amp, mut freq, mut norm) = (0.0, 1.0, BASE_FREQUENCY, 0.0);
                for o in &self.offsets {
                    let q = [p[0] * freq + o[0], p[1] * freq + o[1], p[2] * freq + o[2]];
                    acc += amp * value_noise(self.seed, q);
                    norm += amp;
                    amp *= PERSISTENCE;
                    freq *= 2.0;
                }
                (127.5 + 2.2 * 255.0 * (acc / norm - 0.5)).clamp(0.0, 255.0)
            }
            TextureKind::Checker => {
                let cell = 15f64.to_radians();
                let theta = p[1].atan2(p[0]) + self.offsets[0][0];
                let phi = p[2].clamp(-1.0, 1.0).asin() + self.offsets[0][1];
                if ((theta / cell).floor() as i64 + (phi / cell).floor() as i64).rem_euclid(2) == 0 {
                    64.0
                } else {
                    192.0
                }
            }
            TextureKind::RandomDots => {
                let mut acc = 110.0;
                for (c, sigma, amp) in &self.dots {
                    let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    if d2 < 25.0 * sigma * sigma {
                        acc += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
                acc.clamp(0.0, 255.0)
            }
        }
    }

    /// Renders the texture: ERP pixel `y` of `view` shows the scene at
    /// `to_scene . P(y)`.
    pub fn render<T: Real>(&self, grid: ErpGrid, to_scene: &Rotation<f64>, view: ViewTag) -> ErpImage<T> {
        ErpImage::from_fn(grid, 1, view, |i, j, out| {
            let v = to_scene.apply(pixel_to_cart(&grid, grid.center::<f64>(i, j)));
            out[0] = T::lit(self.eval([v.x, v.y, v.z]));
        })
    }
}

/// A generated frame pair with its ground-truth flow.
#[derive(Debug, Clone)]
pub struct ScenePair<T> {
    pub frame1: ErpImage<T>,
    pub frame2: ErpImage<T>,
    pub flow: FlowField<T>,
}

/// Renders the scene before and after the camera rotation. Frame 2 shows the
/// scene point `R^T P(y)` at pixel `y`, so pixel `x` of frame 1 moves to `R(x)`.
pub fn generate_pair<T: Real>(spec: &SceneSpec) -> Result<ScenePair<T>> {
    let grid = spec.grid()?;
    if spec.angle_deg.to_radians().abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::InvalidParameter(format!("rotation of {} degrees", spec.angle_deg)));
    }
    let tex = SphereTexture::new(spec.texture, spec.seed);
    let rot = Rotation::from_spec(spec.rotation::<f64>());
    let mut frame1 = tex.render(grid, &Rotation::identity(), ViewTag::Primitive);
    let mut frame2 = tex.render(grid, &rot.transpose(), ViewTag::Primitive);
    if let Some(noise) = spec.polar_noise {
        let t = noise.threshold_deg.to_radians();
        frame1 = inject_polar_noise(&frame1, T::lit(t), T::lit(noise.sigma), spec.seed.wrapping_add(1));
        frame2 = inject_polar_noise(&frame2, T::lit(t), T::lit(noise.sigma), spec.seed.wrapping_add(2));
    }
    let flow = analytic_rotation_flow(&grid, spec.rotation::<T>());
    Ok(ScenePair { frame1, frame2, flow })
}

/// Adds seeded Gaussian noise of standard deviation `sigma` to every pixel
/// whose center latitude exceeds `threshold` in magnitude.
pub fn inject_polar_noise<T: Real>(img: &ErpImage<T>, threshold: T, sigma: T, seed: u64) -> ErpImage<T> {
    let sigma = sigma.max(T::zero()).to_f64_lossy();
    if sigma == 0.0 {
        return img.clone();
    }
    let grid = img.grid();
    let c = img.channels();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = img.data().to_vec();
    for j in 0..grid.height() {
        if grid.row_latitude::<T>(j).abs() <= threshold {
            continue;
        }
        let row = &mut data[j * grid.width() * c..(j + 1) * grid.width() * c];
        for x in row.iter_mut() {
            *x += T::lit(normal.sample(&mut rng));
        }
    }
    ErpImage::new(grid, c, data, img.view()).expect("same layout")
}

/// Scene rotation about `axis` expressed as a unit vector, for diagnostics.
pub fn axis_vector(axis: Axis) -> UnitVec3<f64> {
    match axis {
        Axis::X => UnitVec3::new_unchecked(1.0, 0.0, 0.0),
        Axis::Y => UnitVec3::new_unchecked(0.0, 1.0, 0.0),
        Axis::Z => UnitVec3::new_unchecked(0.0, 0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::warp_image;
    use crate::geom::ViewDirection;
    use crate::image::{psnr_rows, view_transform_image};

    fn spec(texture: TextureKind, axis: Axis, angle: f64) -> SceneSpec {
        SceneSpec::new(7, texture, ErpGrid::new(256, 128).unwrap(), axis, angle)
    }

    #[test]
    fn zero_rotation_gives_identical_frames() {
        let pair = generate_pair::<f64>(&spec(TextureKind::ValueNoise, Axis::Y, 0.0)).unwrap();
        assert_eq!(pair.frame1, pair.frame2);
        assert_eq!(pair.flow.max_magnitude(), 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [TextureKind::ValueNoise, TextureKind::Checker, TextureKind::RandomDots] {
            let s = spec(kind, Axis::Y, 10.0);
            let a = generate_pair::<f64>(&s).unwrap();
            let b = generate_pair::<f64>(&s).unwrap();
            assert_eq!(a.frame1, b.frame1);
            assert_eq!(a.frame2, b.frame2);
            assert_eq!(a.flow, b.flow);
        }
    }

    #[test]
    fn rejects_large_rotations() {
        assert!(generate_pair::<f64>(&spec(TextureKind::ValueNoise, Axis::Y, 95.0)).is_err());
    }

    #[test]
    fn warping_frame2_by_ground_truth_recovers_frame1() {
        for kind in [TextureKind::ValueNoise, TextureKind::RandomDots] {
            let pair = generate_pair::<f64>(&spec(kind, Axis::Y, 10.0)).unwrap();
            let warped = warp_image(&pair.frame2, &pair.flow).unwrap();
            let p = psnr_rows(&pair.frame1, &warped, 255.0, 4..124);
            assert!(p > 35.0, "{kind:?}: {p} dB");
        }
    }

    #[test]
    fn orthogonal_view_equals_direct_rendering() {
        let s = spec(TextureKind::ValueNoise, Axis::Y, 10.0);
        let pair = generate_pair::<f64>(&s).unwrap();
        let tex = SphereTexture::new(s.texture, s.seed);
        let direct: ErpImage<f64> = tex.render(
            pair.frame1.grid(),
            &ViewDirection::PrimToOrtho.sampling_rotation(),
            ViewTag::Orthogonal,
        );
        let resampled = view_transform_image(&pair.frame1, ViewDirection::PrimToOrtho);
        let mad: f64 = direct.data().iter().zip(resampled.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / direct.data().len() as f64;
        assert!(mad < 1.0, "{mad}");
    }

    #[test]
    fn polar_noise_is_confined() {
        let pair = generate_pair::<f64>(&spec(TextureKind::ValueNoise, Axis::Z, 0.0)).unwrap();
        let img = pair.frame1;
        assert_eq!(inject_polar_noise(&img, 0.7, 0.0, 1), img);
        assert_eq!(inject_polar_noise(&img, std::f64::consts::FRAC_PI_2, 20.0, 1), img);
        let noisy = inject_polar_noise(&img, std::f64::consts::FRAC_PI_4, 20.0, 1);
        let grid = img.grid();
        for j in 0..grid.height() {
            let changed = (0..grid.width()).any(|i| noisy.get(i, j, 0) != img.get(i, j, 0));
            assert_eq!(changed, grid.row_latitude::<f64>(j).abs() > std::f64::consts::FRAC_PI_4, "row {j}");
        }
        assert_eq!(noisy, inject_polar_noise(&img, std::f64::consts::FRAC_PI_4, 20.0, 1));
    }

    #[test]
    fn spec_parses_from_toml() {
        let s = SceneSpec::from_toml(
            "seed = 3\ntexture = \"random-dots\"\nwidth = 64\nheight = 32\naxis = \"Y\"\nangle_deg = 10.0\n",
        )
        .unwrap();
        assert_eq!(s.texture, TextureKind::RandomDots);
        assert_eq!(s.axis, Axis::Y);
        assert!(SceneSpec::from_toml("seed = 3").is_err());
    }
}
