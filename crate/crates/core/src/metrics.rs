//! Flow error metrics, training losses and region-split evaluation.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_view_transform, region_mask, wrap_displacement, FlowField, Region};
use crate::geom::{pixel_to_cart, ErpGrid, ViewDirection};
use crate::scalar::Real;

fn check_grids<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<ErpGrid> {
    if pred.grid() != gt.grid() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.grid().width(),
            pred.grid().height(),
            gt.grid().width(),
            gt.grid().height()
        )));
    }
    Ok(pred.grid())
}

/// Per-pixel values, reduced in index order so results do not depend on the
/// thread count.
fn per_pixel<T: Real, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

fn masked_mean<T: Real>(values: &[T], grid: &ErpGrid, region: Option<Region>) -> Result<T> {
    let (sum, count) = match region {
        None => (values.iter().copied().sum::<T>(), values.len()),
        Some(r) => {
            let mask = region_mask(grid);
            let mut sum = T::zero();
            let mut count = 0usize;
            for (k, &x) in values.iter().enumerate() {
                if mask.region(k) == r {
                    sum += x;
                    count += 1;
                }
            }
            (sum, count)
        }
    };
    if count == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(sum / T::from_usize_lossy(count))
}

/// End-point error at every pixel, with the horizontal difference wrapped.
pub fn epe_map<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<Vec<T>> {
    let grid = check_grids(pred, gt)?;
    Ok(per_pixel(grid.len(), |k| {
        let (pu, pv) = pred.at(k);
        let (gu, gv) = gt.at(k);
        let du = wrap_displacement(pu - gu, &grid);
        let dv = pv - gv;
        (du * du + dv * dv).sqrt()
    }))
}

/// Geodesic distance (radians) between predicted and true endpoints at every pixel.
pub fn sepe_map<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<Vec<T>> {
    let grid = check_grids(pred, gt)?;
    Ok(per_pixel(grid.len(), |k| {
        let a = pixel_to_cart(&grid, pred.endpoint(k));
        let b = pixel_to_cart(&grid, gt.endpoint(k));
        a.angle_to(&b)
    }))
}

/// Mean end-point error in pixels, optionally restricted to one region.
pub fn epe<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>, region: Option<Region>) -> Result<T> {
    masked_mean(&epe_map(pred, gt)?, &pred.grid(), region)
}

/// Mean spherical end-point error in radians, optionally restricted to one region.
pub fn sepe<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>, region: Option<Region>) -> Result<T> {
    masked_mean(&sepe_map(pred, gt)?, &pred.grid(), region)
}

/// L1 flow error weighted by `cos(latitude)` of each pixel row.
pub fn sphere_weighted_l1<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<T> {
    let grid = check_grids(pred, gt)?;
    let w = grid.width();
    let weights: Vec<T> = (0..grid.height()).map(|j| grid.row_latitude::<T>(j).cos()).collect();
    let terms = per_pixel(grid.len(), |k| {
        let (pu, pv) = pred.at(k);
        let (gu, gv) = gt.at(k);
        weights[k / w] * (wrap_displacement(pu - gu, &grid).abs() + (pv - gv).abs())
    });
    let den = weights.iter().copied().sum::<T>() * T::from_usize_lossy(w);
    Ok(terms.into_iter().sum::<T>() / den)
}

/// `sum_i gamma^(N - i) * sphere_weighted_l1(preds[i], gt)` over iterates `i = 1..N`.
pub fn sequence_loss<T: Real>(preds: &[FlowField<T>], gt: &FlowField<T>, gamma: T) -> Result<T> {
    if preds.is_empty() {
        return Err(Error::InvalidParameter("sequence loss needs at least one iterate".into()));
    }
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::InvalidParameter("gamma must lie in (0, 1]".into()));
    }
    let n = preds.len();
    let mut total = T::zero();
    for (i, p) in preds.iter().enumerate() {
        total += gamma.powi((n - 1 - i) as i32) * sphere_weighted_l1(p, gt)?;
    }
    Ok(total)
}

/// Sequence loss of both branches; the orthogonal target is the primitive
/// ground truth transferred to the orthogonal view.
pub fn dual_sequence_loss<T: Real>(
    primitive: &[FlowField<T>],
    orthogonal: &[FlowField<T>],
    gt: &FlowField<T>,
    gamma: T,
) -> Result<T> {
    let gt_o = flow_view_transform(gt, ViewDirection::from_source(gt.view()));
    Ok(sequence_loss(primitive, gt, gamma)? + sequence_loss(orthogonal, &gt_o, gamma)?)
}

/// EPE and SEPE split into equatorial, polar and all pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epe_all: f64,
    pub sepe_all: f64,
    pub epe_poles: f64,
    pub sepe_poles: f64,
    pub epe_equator: f64,
    pub sepe_equator: f64,
    pub pixels_all: usize,
    pub pixels_poles: usize,
    pub pixels_equator: usize,
}

/// Region means; a region with no pixels reports 0 alongside a count of 0.
pub fn evaluate<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<EvalReport> {
    let grid = check_grids(pred, gt)?;
    let e = epe_map(pred, gt)?;
    let s = sepe_map(pred, gt)?;
    let mask = region_mask(&grid);
    let mut sums = [[0.0f64; 2]; 2];
    let mut counts = [0usize; 2];
    for k in 0..grid.len() {
        let r = match mask.region(k) {
            Region::Equator => 0,
            Region::Poles => 1,
        };
        sums[r][0] += e[k].to_f64_lossy();
        sums[r][1] += s[k].to_f64_lossy();
        counts[r] += 1;
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let n = grid.len();
    Ok(EvalReport {
        epe_all: (sums[0][0] + sums[1][0]) / n as f64,
        sepe_all: (sums[0][1] + sums[1][1]) / n as f64,
        epe_poles: mean(sums[1][0], counts[1]),
        sepe_poles: mean(sums[1][1], counts[1]),
        epe_equator: mean(sums[0][0], counts[0]),
        sepe_equator: mean(sums[0][1], counts[0]),
        pixels_all: n,
        pixels_poles: counts[1],
        pixels_equator: counts[0],
    })
}

impl fmt::Display for EvalReport {
    /// Plain-text table with one row per region.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>10} {:>10} {:>12}", "Region", "Pixels", "EPE", "SEPE (rad)")?;
        let rows = [
            ("Equator", self.pixels_equator, self.epe_equator, self.sepe_equator),
            ("Poles", self.pixels_poles, self.epe_poles, self.sepe_poles),
            ("All", self.pixels_all, self.epe_all, self.sepe_all),
        ];
        for (name, n, e, s) in rows {
            writeln!(f, "{name:<8} {n:>10} {e:>10.4} {s:>12.6}")?;
        }
        Ok(())
    }
}
