//! Dual-view optical-flow geometry for equirectangular (ERP) panoramas.
//!
//! Every frame is seen in two views: the primitive view and an orthogonal
//! view whose poles lie on the primitive equator. The crate provides the
//! sphere geometry linking them, wrap-aware correlation volumes, a joint
//! lookup that indexes both views' costs at the same sphere points,
//! confidence-weighted fusion of the two branches, a non-learned iterative
//! estimator, spherical metrics and synthetic scenes with analytic flow.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the `*64` and
//! `*32` aliases name the common instantiations.

pub mod confidence;
pub mod cost;
pub mod datagen;
pub mod dccl;
pub mod error;
pub mod estimator;
pub mod flow;
pub mod geom;
pub mod image;
pub mod io;
pub mod metrics;
pub mod sampling;
pub mod scalar;

pub use crate::confidence::{confidence_pair, groupwise_correlation, ConfidenceMap};
pub use crate::cost::{
    all_pairs_correlation, build_pyramid, extract_features, lookup, CorrelationPatch, CostPyramid, CostVolume,
    FeatureMap, LookupGrid,
};
pub use crate::datagen::{generate_pair, inject_polar_noise, SceneSpec, ScenePair, TextureKind};
pub use crate::dccl::{dccl, DualCorrelation};
pub use crate::error::{Error, Result};
pub use crate::estimator::{estimate, fuse_branches, soft_argmax_update, Estimate, EstimatorConfig, EstimatorMode};
pub use crate::flow::{analytic_rotation_flow, flow_view_transform, region_mask, wrap_displacement, FlowField, Region};
pub use crate::geom::{Axis, ErpGrid, PixelCoord, Rotation, RotationSpec, SphCoord, UnitVec3, ViewDirection, ViewTag};
pub use crate::image::{distortion_map, view_transform_image, ErpImage};
pub use crate::io::{flow_to_color, read_flo, read_png, write_flo, write_png};
pub use crate::metrics::{epe, evaluate, sepe, sequence_loss, sphere_weighted_l1, EvalReport};
pub use crate::scalar::Real;

pub type FlowField64 = FlowField<f64>;
pub type FlowField32 = FlowField<f32>;
pub type ErpImage64 = ErpImage<f64>;
pub type ErpImage32 = ErpImage<f32>;
pub type EstimatorConfig64 = EstimatorConfig<f64>;
pub type EstimatorConfig32 = EstimatorConfig<f32>;
pub type Estimate64 = Estimate<f64>;
pub type Estimate32 = Estimate<f32>;
