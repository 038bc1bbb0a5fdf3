//! Training-free dual-branch flow estimator.
//!
//! Each branch refines its flow with a soft-argmax over the level-1 lookup
//! patch (own and cross-view cues summed). After every update the
//! orthogonal flow is converted into the primitive view and the two
//! candidates are blended per pixel with weights driven by their group-wise
//! warp confidence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{confidence_pair, ConfidenceMap};
use crate::cost::{extract_features, lookup_levels, CorrelationPatch, CostPyramid, FeatureMap, LookupGrid};
use crate::dccl::dccl_levels;
use crate::error::{Error, Result};
use crate::flow::{flow_view_transform, wrap_displacement, FlowField};
use crate::geom::{ViewDirection, ViewTag};
use crate::image::{view_transform_image, ErpImage};
use crate::scalar::Real;

/// Which branches take part in estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Primitive and orthogonal branches with cross-view lookup and fusion.
    #[default]
    Dual,
    /// Primitive branch alone: plain lookup, no fusion.
    PrimitiveOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig<T> {
    pub iterations: usize,
    pub radius: usize,
    /// Soft-argmax temperature, applied to the summed correlation cues.
    pub temperature: T,
    /// Fusion sharpness; 0 averages the two candidates.
    pub fusion_sharpness: T,
    pub groups: usize,
    /// Image pixels per feature pixel.
    pub downsample: usize,
    pub mode: EstimatorMode,
    /// Also fuse the converted primitive flow into the orthogonal branch.
    pub symmetric_fusion: bool,
    pub lookup_grid: LookupGrid,
}

impl<T: Real> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            iterations: 12,
            radius: 4,
            temperature: T::lit(1e-5),
            fusion_sharpness: T::lit(1e5),
            groups: 8,
            downsample: 4,
            mode: EstimatorMode::Dual,
            symmetric_fusion: false,
            lookup_grid: LookupGrid::Square,
        }
    }
}

impl<T: Real> EstimatorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if !(self.temperature > T::zero()) {
            return Err(Error::InvalidParameter("temperature must be > 0".into()));
        }
        if !(self.fusion_sharpness >= T::zero()) {
            return Err(Error::InvalidParameter("fusion sharpness must be >= 0".into()));
        }
        if self.groups == 0 {
            return Err(Error::InvalidParameter("groups must be >= 1".into()));
        }
        Ok(())
    }
}

/// Current flow of one branch, at feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchState<T> {
    pub flow: FlowField<T>,
}

impl<T: Real> BranchState<T> {
    pub fn zero(grid: crate::geom::ErpGrid, view: ViewTag) -> Self {
        Self { flow: FlowField::zeros(grid, view) }
    }

    pub fn view(&self) -> ViewTag {
        self.flow.view()
    }
}

/// Expected offset under `softmax(scores / tau)`.
pub fn soft_argmax_update<T: Real>(scores: &[T], offsets: &[(i32, i32)], tau: T) -> (T, T) {
    debug_assert_eq!(scores.len(), offsets.len());
    let peak = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let (mut z, mut du, mut dv) = (T::zero(), T::zero(), T::zero());
    for (&s, &(dx, dy)) in scores.iter().zip(offsets) {
        let w = ((s - peak) / tau).exp();
        z += w;
        du += w * T::from_i32(dx).unwrap();
        dv += w * T::from_i32(dy).unwrap();
    }
    (du / z, dv / z)
}

/// Applies [`soft_argmax_update`] to level 0 of every pixel's patch.
pub fn apply_update<T: Real>(flow: &FlowField<T>, patch: &CorrelationPatch<T>, tau: T) -> FlowField<T> {
    let offsets = patch.offsets();
    FlowField::from_fn(flow.grid(), flow.view(), |i, j| {
        let k = flow.grid().index(i, j);
        let (du, dv) = soft_argmax_update(patch.level(k, 0), offsets, tau);
        let (u, v) = flow.at(k);
        (u + du, v + dv)
    })
}

/// Per-pixel convex blend `w_own * own + w_other * other` with
/// `(w_own, w_other) = softmax(beta * mean(conf_own), beta * mean(conf_other))`.
/// Horizontal components are blended along the shorter wrap direction.
pub fn fuse_branches<T: Real>(
    own: &FlowField<T>,
    other_converted: &FlowField<T>,
    conf_own: &ConfidenceMap<T>,
    conf_other: &ConfidenceMap<T>,
    beta: T,
) -> Result<FlowField<T>> {
    let grid = own.grid();
    if other_converted.grid() != grid || conf_own.grid() != grid || conf_other.grid() != grid {
        return Err(Error::DimensionMismatch("fusion inputs must share a grid".into()));
    }
    if other_converted.view() != own.view() {
        return Err(Error::ViewMismatch("the other flow must be converted to the own view".into()));
    }
    Ok(FlowField::from_fn(grid, own.view(), |i, j| {
        let k = grid.index(i, j);
        let w = fusion_weight(conf_own.pixel_mean(k), conf_other.pixel_mean(k), beta);
        let (a, b) = own.at(k);
        let (c, d) = other_converted.at(k);
        (a + w * wrap_displacement(c - a, &grid), b + w * (d - b))
    }))
}

/// Weight of the other candidate.
#[inline]
fn fusion_weight<T: Real>(own: T, other: T, beta: T) -> T {
    T::one() / (T::one() + (beta * (own - other)).exp())
}

/// Flows after one iteration, at feature resolution.
#[derive(Debug, Clone)]
pub struct IterationTrace<T> {
    pub primitive: FlowField<T>,
    pub orthogonal: Option<FlowField<T>>,
    /// Mean weight given to the converted orthogonal flow during fusion.
    pub mean_fusion_weight: Option<T>,
}

#[derive(Debug, Clone)]
pub struct Estimate<T> {
    /// Primitive-view flow at image resolution.
    pub primitive: FlowField<T>,
    /// Orthogonal-branch flow at image resolution (dual mode only).
    pub orthogonal: Option<FlowField<T>>,
    pub trace: Vec<IterationTrace<T>>,
    pub downsample: usize,
}

impl<T: Real> Estimate<T> {
    /// Primitive flow after iteration `n` (1-based), upsampled to image resolution.
    pub fn primitive_after(&self, n: usize) -> Option<FlowField<T>> {
        let t = self.trace.get(n.checked_sub(1)?)?;
        Some(t.primitive.upsample(self.downsample))
    }
}

struct Branch<T> {
    f1: FeatureMap<T>,
    f2: FeatureMap<T>,
    pyramid: CostPyramid<T>,
    state: BranchState<T>,
}

impl<T: Real> Branch<T> {
    fn new(frame1: &ErpImage<T>, frame2: &ErpImage<T>, cfg: &EstimatorConfig<T>) -> Result<Self> {
        let f1 = extract_features(frame1, cfg.downsample)?;
        let f2 = extract_features(frame2, cfg.downsample)?;
        let pyramid = CostPyramid::from_features(&f1, &f2)?;
        let f1 = f1.padded_for_groups(cfg.groups)?;
        let f2 = f2.padded_for_groups(cfg.groups)?;
        let state = BranchState::zero(f1.grid(), frame1.view());
        Ok(Self { f1, f2, pyramid, state })
    }

    fn refine(&self, other: Option<&CostPyramid<T>>, cfg: &EstimatorConfig<T>) -> Result<FlowField<T>> {
        let flow = &self.state.flow;
        let patch = match other {
            Some(o) => dccl_levels(&self.pyramid, o, flow, cfg.radius, cfg.lookup_grid, 1)?.summed(),
            None => lookup_levels(&self.pyramid, flow, cfg.radius, cfg.lookup_grid, 1)?,
        };
        Ok(apply_update(flow, &patch, cfg.temperature))
    }

    /// Blends `candidate` (already in this view) into `updated`.
    fn fuse(&self, updated: &FlowField<T>, candidate: &FlowField<T>, cfg: &EstimatorConfig<T>) -> Result<(FlowField<T>, T)> {
        let (c_own, c_other) = confidence_pair(&self.f1, &self.f2, updated, candidate, cfg.groups)?;
        let fused = fuse_branches(updated, candidate, &c_own, &c_other, cfg.fusion_sharpness)?;
        let n = updated.grid().len();
        let mean_w = (0..n)
            .into_par_iter()
            .map(|k| fusion_weight(c_own.pixel_mean(k), c_other.pixel_mean(k), cfg.fusion_sharpness))
            .collect::<Vec<_>>()
            .into_iter()
            .sum::<T>()
            / T::from_usize_lossy(n);
        Ok((fused, mean_w))
    }
}

/// Estimates primitive-view flow from `frame1` to `frame2`.
pub fn estimate<T: Real>(frame1: &ErpImage<T>, frame2: &ErpImage<T>, cfg: &EstimatorConfig<T>) -> Result<Estimate<T>> {
    cfg.validate()?;
    if frame1.grid() != frame2.grid() {
        return Err(Error::DimensionMismatch("frames have different sizes".into()));
    }
    let frame1 = frame1.clone().with_view(ViewTag::Primitive);
    let frame2 = frame2.clone().with_view(ViewTag::Primitive);
    let dual = cfg.mode == EstimatorMode::Dual;

    let mut prim = Branch::new(&frame1, &frame2, cfg)?;
    let mut ortho = if dual {
        let o1 = view_transform_image(&frame1, ViewDirection::PrimToOrtho);
        let o2 = view_transform_image(&frame2, ViewDirection::PrimToOrtho);
        Some(Branch::new(&o1, &o2, cfg)?)
    } else {
        None
    };

    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let prim_updated = prim.refine(ortho.as_ref().map(|o| &o.pyramid), cfg)?;
        let mut weight = None;
        match ortho.as_mut() {
            None => prim.state.flow = prim_updated,
            Some(o) => {
                let ortho_updated = o.refine(Some(&prim.pyramid), cfg)?;
                let o2p = flow_view_transform(&ortho_updated, ViewDirection::OrthoToPrim);
                let (fused_p, w) = prim.fuse(&prim_updated, &o2p, cfg)?;
                weight = Some(w);
                o.state.flow = if cfg.symmetric_fusion {
                    let p2o = flow_view_transform(&prim_updated, ViewDirection::PrimToOrtho);
                    o.fuse(&ortho_updated, &p2o, cfg)?.0
                } else {
                    ortho_updated
                };
                prim.state.flow = fused_p;
            }
        }
        trace.push(IterationTrace {
            primitive: prim.state.flow.clone(),
            orthogonal: ortho.as_ref().map(|o| o.state.flow.clone()),
            mean_fusion_weight: weight,
        });
    }

    Ok(Estimate {
        primitive: prim.state.flow.upsample(cfg.downsample),
        orthogonal: ortho.map(|o| o.state.flow.upsample(cfg.downsample)),
        trace,
        downsample: cfg.downsample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::groupwise_correlation;
    use crate::geom::ErpGrid;
    use approx::assert_abs_diff_eq;

    fn offsets(r: i32) -> Vec<(i32, i32)> {
        LookupGrid::Square.offsets(r as usize)
    }

    #[test]
    fn sharp_peak_recovers_its_offset() {
        let off = offsets(3);
        let scores: Vec<f64> = off.iter().map(|&o| if o == (2, 1) { 1.0 } else { 0.0 }).collect();
        let (du, dv) = soft_argmax_update(&scores, &off, 1e-3);
        assert_abs_diff_eq!(du, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(dv, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_scores_give_no_update() {
        let off = offsets(4);
        let flat = vec![0.3f64; off.len()];
        let (du, dv) = soft_argmax_update(&flat, &off, 0.1);
        assert_abs_diff_eq!(du, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dv, 0.0, epsilon = 1e-12);
        let twin: Vec<f64> = off.iter().map(|&o| if o == (2, 0) || o == (-2, 0) { 1.0 } else { 0.0 }).collect();
        let (du, dv) = soft_argmax_update(&twin, &off, 0.01);
        assert_abs_diff_eq!(du, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dv, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn update_is_bounded_by_the_radius() {
        let off = offsets(4);
        let scores: Vec<f64> = off.iter().map(|&(x, y)| (x * 7 + y * 3) as f64).collect();
        let (du, dv) = soft_argmax_update(&scores, &off, 0.5);
        assert!((du * du + dv * dv).sqrt() <= 4.0 * 2f64.sqrt() + 1e-12);
    }

    fn conf(grid: ErpGrid, value: f64) -> ConfidenceMap<f64> {
        let flow = FlowField::zeros(grid, ViewTag::Primitive);
        let img = ErpImage::from_fn(grid, 4, ViewTag::Primitive, |i, j, out| {
            out[0] = 1.0;
            out[1] = ((i + j) % 3) as f64;
            out[2] = 0.5;
            out[3] = -1.0;
        });
        let f = FeatureMap::from_image(img.clone(), 1);
        let mut other = img.into_data();
        // blend the second descriptor towards an orthogonal direction
        for px in other.chunks_mut(4) {
            px[0] = value;
        }
        let g = FeatureMap::from_image(ErpImage::new(grid, 4, other, ViewTag::Primitive).unwrap(), 1);
        groupwise_correlation(&f, &g, &flow, 4).unwrap()
    }

    #[test]
    fn fusion_rules() {
        let grid = ErpGrid::new(16, 8).unwrap();
        let a = FlowField::from_fn(grid, ViewTag::Primitive, |_, _| (1.0, 2.0));
        let b = FlowField::from_fn(grid, ViewTag::Primitive, |_, _| (3.0, -2.0));
        let same = conf(grid, 1.0);
        let fused = fuse_branches(&a, &b, &same, &same, 10.0).unwrap();
        for k in 0..grid.len() {
            assert_abs_diff_eq!(fused.at(k).0, 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(fused.at(k).1, 0.0, epsilon = 1e-12);
        }
        let low = conf(grid, -1.0);
        let sharp = fuse_branches(&a, &b, &low, &same, 1e3).unwrap();
        for k in 0..grid.len() {
            assert_abs_diff_eq!(sharp.at(k).0, 3.0, epsilon = 1e-9);
        }
        // beta = 0 is the plain average regardless of confidence
        let avg = fuse_branches(&a, &b, &low, &same, 0.0).unwrap();
        assert_abs_diff_eq!(avg.at(0).0, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fusion_blends_across_the_seam() {
        let grid = ErpGrid::new(16, 8).unwrap();
        let a = FlowField::from_fn(grid, ViewTag::Primitive, |_, _| (7.5, 0.0));
        let b = FlowField::from_fn(grid, ViewTag::Primitive, |_, _| (-7.5, 0.0));
        let c = conf(grid, 1.0);
        let fused = fuse_branches(&a, &b, &c, &c, 1.0).unwrap();
        assert_abs_diff_eq!(fused.at(3).0.abs(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EstimatorConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        cfg.iterations = 1;
        cfg.temperature = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = ErpImage::filled(ErpGrid::new(64, 32).unwrap(), 1, 0.0f64, ViewTag::Primitive);
        let b = ErpImage::filled(ErpGrid::new(128, 64).unwrap(), 1, 0.0f64, ViewTag::Primitive);
        assert!(matches!(estimate(&a, &b, &EstimatorConfig::default()), Err(Error::DimensionMismatch(_))));
    }
}
