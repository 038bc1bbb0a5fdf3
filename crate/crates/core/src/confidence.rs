//! Group-wise correlation between frame-1 features and flow-warped frame-2
//! features, used as a per-pixel warp-consistency score.

use rayon::prelude::*;

use crate::cost::FeatureMap;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geom::ErpGrid;
use crate::scalar::Real;

/// Per-pixel vector of `groups` normalized correlations in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap<T> {
    grid: ErpGrid,
    groups: usize,
    data: Vec<T>,
}

impl<T: Real> ConfidenceMap<T> {
    #[inline]
    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    #[inline]
    pub fn groups(&self) -> usize {
        self.groups
    }

    #[inline]
    pub fn pixel(&self, k: usize) -> &[T] {
        &self.data[k * self.groups..(k + 1) * self.groups]
    }

    /// Mean over groups at pixel `k`.
    #[inline]
    pub fn pixel_mean(&self, k: usize) -> T {
        self.pixel(k).iter().copied().sum::<T>() / T::from_usize_lossy(self.groups)
    }

    /// Mean over all pixels and groups.
    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Cosine similarity of `f1(x)` and `f2` sampled at `x + flow(x)` (horizontal
/// coordinate modulo `W`), computed separately for each contiguous channel
/// group. A group with a zero-length sub-vector scores 0.
pub fn groupwise_correlation<T: Real>(
    f1: &FeatureMap<T>,
    f2: &FeatureMap<T>,
    flow: &FlowField<T>,
    groups: usize,
) -> Result<ConfidenceMap<T>> {
    let grid = f1.grid();
    if f2.grid() != grid || flow.grid() != grid || f1.depth() != f2.depth() {
        return Err(Error::DimensionMismatch("features and flow must share a grid and depth".into()));
    }
    let d = f1.depth();
    if groups == 0 || d % groups != 0 {
        return Err(Error::DimensionMismatch(format!("{groups} groups do not divide depth {d}")));
    }
    let per = d / groups;
    let tiny = T::lit(1e-12);
    let mut data = vec![T::zero(); grid.len() * groups];
    data.par_chunks_mut(groups).enumerate().for_each_init(
        || vec![T::zero(); d],
        |warped, (k, out)| {
            f2.as_image().sample_into(flow.endpoint(k), warped);
            let a = f1.descriptor(k);
            for (g, o) in out.iter_mut().enumerate() {
                let (x, y) = (&a[g * per..(g + 1) * per], &warped[g * per..(g + 1) * per]);
                let (mut xy, mut xx, mut yy) = (T::zero(), T::zero(), T::zero());
                for (p, q) in x.iter().zip(y) {
                    xy += *p * *q;
                    xx += *p * *p;
                    yy += *q * *q;
                }
                let n = (xx * yy).sqrt();
                *o = if n <= tiny { T::zero() } else { (xy / n).max(-T::one()).min(T::one()) };
            }
        },
    );
    Ok(ConfidenceMap { grid, groups, data })
}

/// Confidence of the own-view flow and of the converted other-view flow
/// against the same feature pair.
pub fn confidence_pair<T: Real>(
    f1: &FeatureMap<T>,
    f2: &FeatureMap<T>,
    own_flow: &FlowField<T>,
    other_flow_converted: &FlowField<T>,
    groups: usize,
) -> Result<(ConfidenceMap<T>, ConfidenceMap<T>)> {
    Ok((
        groupwise_correlation(f1, f2, own_flow, groups)?,
        groupwise_correlation(f1, f2, other_flow_converted, groups)?,
    ))
}
