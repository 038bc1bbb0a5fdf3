//! Dual-cost collaborative lookup: each lookup grid is sampled both in its own
//! view's pyramid and, after rotating the grid points over the sphere, in the
//! other view's pyramid.
//!
//! The cross-view cost is indexed directly from own-view pixels. Each of the
//! four other-view pixels around the rotated pixel center is looked up at the
//! displacement that carries the rotated center onto the rotated grid point,
//! and the results are blended bilinearly, so the returned patch is already in
//! own-view layout.

use rayon::prelude::*;

use crate::cost::{correspondence, level_scale, lookup_levels, CorrelationPatch, CostPyramid, LookupGrid, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::flow::{wrap_displacement, FlowField};
use crate::geom::{PixelCoord, Rotation};
use crate::sampling::{bilinear_taps, VerticalBoundary};
use crate::scalar::Real;

/// Same-view and cross-view correlation cues for one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCorrelation<T> {
    pub own: CorrelationPatch<T>,
    pub cross: CorrelationPatch<T>,
}

impl<T: Real> DualCorrelation<T> {
    /// `own + cross`, the pre-fusion used before decoding an update.
    pub fn summed(&self) -> CorrelationPatch<T> {
        self.own.sum(&self.cross).expect("patches share a layout")
    }
}

fn check_views<T: Real>(own: &CostPyramid<T>, other: &CostPyramid<T>, flow: &FlowField<T>) -> Result<()> {
    if flow.view() != own.view() {
        return Err(Error::ViewMismatch(format!(
            "flow is {:?} but the own pyramid is {:?}",
            flow.view(),
            own.view()
        )));
    }
    if other.view() != own.view().other() {
        return Err(Error::ViewMismatch(format!(
            "both pyramids are {:?}",
            own.view()
        )));
    }
    if own.query_grid() != other.query_grid() || flow.grid() != own.query_grid() {
        return Err(Error::DimensionMismatch("pyramid and flow grids differ".into()));
    }
    Ok(())
}

/// Joint lookup over all pyramid levels.
pub fn dccl<T: Real>(
    own_pyr: &CostPyramid<T>,
    other_pyr: &CostPyramid<T>,
    flow: &FlowField<T>,
    radius: usize,
    shape: LookupGrid,
) -> Result<DualCorrelation<T>> {
    dccl_levels(own_pyr, other_pyr, flow, radius, shape, PYRAMID_LEVELS)
}

/// [`dccl`] restricted to the first `levels` pyramid levels.
pub fn dccl_levels<T: Real>(
    own_pyr: &CostPyramid<T>,
    other_pyr: &CostPyramid<T>,
    flow: &FlowField<T>,
    radius: usize,
    shape: LookupGrid,
    levels: usize,
) -> Result<DualCorrelation<T>> {
    check_views(own_pyr, other_pyr, flow)?;
    let own = lookup_levels(own_pyr, flow, radius, shape, levels)?;
    let cross = cross_lookup(other_pyr, flow, radius, shape, levels.clamp(1, PYRAMID_LEVELS));
    Ok(DualCorrelation { own, cross })
}

fn cross_lookup<T: Real>(
    other_pyr: &CostPyramid<T>,
    flow: &FlowField<T>,
    radius: usize,
    shape: LookupGrid,
    levels: usize,
) -> CorrelationPatch<T> {
    let grid = flow.grid();
    let (w, h) = (grid.width(), grid.height());
    let rot: Rotation<T> = flow.view().to_other_rotation();
    let offsets = shape.offsets(radius);
    let m = offsets.len();
    let mut data = vec![T::zero(); grid.len() * m * levels];
    data.par_chunks_mut(m * levels).enumerate().for_each(|(k, out)| {
        let query = rot.rotate_pixel(&grid, grid.center(k % w, k / w));
        let qtaps = bilinear_taps(w, h, query, VerticalBoundary::PoleReflect);
        let centers = qtaps.index.map(|q| grid.center::<T>(q % w, q / w));
        let c = correspondence(flow, k);
        for (n, &(dx, dy)) in offsets.iter().enumerate() {
            let g = PixelCoord::new(c.u + T::from_i32(dx).unwrap(), c.v + T::from_i32(dy).unwrap());
            let g_other = rot.rotate_pixel(&grid, g);
            let du = wrap_displacement(g_other.u - query.u, &grid);
            let dv = g_other.v - query.v;
            for l in 0..levels {
                let lvl = other_pyr.level(l);
                let scale = level_scale(l);
                let mut acc = T::zero();
                for ((&q, &wt), p) in qtaps.index.iter().zip(&qtaps.weight).zip(&centers) {
                    if wt != T::zero() {
                        let t = PixelCoord::new(p.u + du, p.v + dv).scaled(scale);
                        let v = lvl.sample(q, t);
                        acc += wt * match other_pyr.target_norm(l, t) {
                            Some(norm) if norm > T::lit(1e-12) => v / norm,
                            Some(_) => T::zero(),
                            None => v,
                        };
                    }
                }
                out[l * m + n] = acc;
            }
        }
    });
    CorrelationPatch::from_parts(grid, offsets, levels, data)
}

/// Lookup points of pixel `k`: each own-view grid point paired with the
/// other-view coordinate it is sampled at (level 0).
pub fn lookup_points<T: Real>(
    flow: &FlowField<T>,
    k: usize,
    radius: usize,
    shape: LookupGrid,
) -> Vec<(PixelCoord<T>, PixelCoord<T>)> {
    let grid = flow.grid();
    let rot: Rotation<T> = flow.view().to_other_rotation();
    let c = correspondence(flow, k);
    shape
        .offsets(radius)
        .into_iter()
        .map(|(dx, dy)| {
            let g = PixelCoord::new(c.u + T::from_i32(dx).unwrap(), c.v + T::from_i32(dy).unwrap());
            (g, rot.rotate_pixel(&grid, g))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{all_pairs_correlation, build_pyramid, extract_features};
    use crate::geom::{pixel_to_cart, ErpGrid, ViewDirection, ViewTag};
    use crate::image::{view_transform_image, ErpImage};
    use approx::assert_abs_diff_eq;

    fn smooth_texture(g: ErpGrid) -> ErpImage<f64> {
        ErpImage::from_fn(g, 1, ViewTag::Primitive, |i, j, out| {
            let p = pixel_to_cart(&g, g.center::<f64>(i, j));
            out[0] = 128.0
                + 40.0 * (5.0 * p.x + 2.0 * p.y).sin()
                + 40.0 * (4.0 * p.y - 3.0 * p.z).cos()
                + 30.0 * (6.0 * p.z + p.x).sin();
        })
    }

    fn pyramids(g: ErpGrid) -> (CostPyramid<f64>, CostPyramid<f64>) {
        let img = smooth_texture(g);
        let ortho = view_transform_image(&img, ViewDirection::PrimToOrtho);
        let fp = extract_features(&img, 4).unwrap();
        let fo = extract_features(&ortho, 4).unwrap();
        (
            build_pyramid(all_pairs_correlation(&fp, &fp).unwrap()),
            build_pyramid(all_pairs_correlation(&fo, &fo).unwrap()),
        )
    }

    #[test]
    fn rejects_inconsistent_views() {
        let (p, o) = pyramids(ErpGrid::new(64, 32).unwrap());
        let fg = p.query_grid();
        let flow_p = FlowField::zeros(fg, ViewTag::Primitive);
        let flow_o = FlowField::zeros(fg, ViewTag::Orthogonal);
        assert!(matches!(dccl(&p, &o, &flow_o, 1, LookupGrid::Square), Err(Error::ViewMismatch(_))));
        assert!(matches!(dccl(&p, &p, &flow_p, 1, LookupGrid::Square), Err(Error::ViewMismatch(_))));
        assert!(dccl(&o, &p, &flow_o, 1, LookupGrid::Square).is_ok());
    }

    #[test]
    fn identical_pair_zero_flow() {
        let g = ErpGrid::new(256, 128).unwrap();
        let (p, o) = pyramids(g);
        let fg = p.query_grid();
        let flow = FlowField::zeros(fg, ViewTag::Primitive);
        let dual = dccl(&p, &o, &flow, 2, LookupGrid::Square).unwrap();
        let c = dual.own.center_index();
        let mut equator = Vec::new();
        for k in 0..fg.len() {
            assert_abs_diff_eq!(dual.own.level(k, 0)[c], 1.0, epsilon = 1e-12);
            if fg.row_latitude::<f64>(k / fg.width()).abs() < std::f64::consts::FRAC_PI_4 {
                equator.push(dual.cross.level(k, 0)[c]);
            }
        }
        let good = equator.iter().filter(|&&x| x >= 0.9).count();
        assert!(good as f64 >= 0.9 * equator.len() as f64, "{good}/{}", equator.len());
    }

    #[test]
    fn normalized_cross_cue_peaks_at_zero_displacement() {
        let g = ErpGrid::new(256, 128).unwrap();
        let img = smooth_texture(g);
        let ortho = view_transform_image(&img, ViewDirection::PrimToOrtho);
        let fp = extract_features(&img, 4).unwrap();
        let fo = extract_features(&ortho, 4).unwrap();
        let p = CostPyramid::from_features(&fp, &fp).unwrap();
        let o = CostPyramid::from_features(&fo, &fo).unwrap();
        let fg = p.query_grid();
        let flow = FlowField::zeros(fg, ViewTag::Primitive);
        let dual = dccl(&p, &o, &flow, 2, LookupGrid::Square).unwrap();
        let c = dual.cross.center_index();
        let peaked = (0..fg.len())
            .filter(|&k| {
                let row = dual.cross.level(k, 0);
                row.iter().enumerate().all(|(n, &x)| n == c || x < row[c])
            })
            .count();
        assert!(peaked as f64 >= 0.99 * fg.len() as f64, "{peaked}/{}", fg.len());
    }

    #[test]
    fn grid_points_coincide_on_the_sphere() {
        let fg = ErpGrid::new(64, 32).unwrap();
        let flow = FlowField::from_fn(fg, ViewTag::Primitive, |i, j| ((i as f64 * 0.37).sin() * 3.0, (j as f64 * 0.21).cos()));
        let back: Rotation<f64> = ViewTag::Orthogonal.to_other_rotation();
        for k in (0..fg.len()).step_by(7) {
            for (own, other) in lookup_points(&flow, k, 4, LookupGrid::Square) {
                let a = pixel_to_cart(&fg, own);
                let b = pixel_to_cart(&fg, back.rotate_pixel(&fg, other));
                assert!(a.angle_to(&b) < 1e-9);
            }
        }
    }

    #[test]
    fn shifted_flow_gives_identical_patches() {
        let (p, o) = pyramids(ErpGrid::new(128, 64).unwrap());
        let fg = p.query_grid();
        let base = FlowField::from_fn(fg, ViewTag::Primitive, |i, j| (((i + 2 * j) % 9) as f64 / 4.0 - 1.0, ((i * j) % 7) as f64 / 8.0 - 0.25));
        let a = dccl(&p, &o, &base, 2, LookupGrid::Square).unwrap();
        let moved = FlowField::from_raw_parts(fg, base.u().iter().map(|x| x + 32.0).collect(), base.v().to_vec(), ViewTag::Primitive).unwrap();
        let b = dccl(&p, &o, &moved, 2, LookupGrid::Square).unwrap();
        assert_eq!(a, b);
    }
}
