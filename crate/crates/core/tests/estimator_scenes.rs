use erpflow::confidence::confidence_pair;
use erpflow::cost::extract_features;
use erpflow::datagen::{generate_pair, inject_polar_noise, SceneSpec, TextureKind};
use erpflow::estimator::{estimate, fuse_branches, EstimatorConfig, EstimatorMode};
use erpflow::flow::{FlowField, Region};
use erpflow::geom::{Axis, ErpGrid, ViewTag};
use erpflow::metrics::epe;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64, w: usize, h: usize, axis: Axis, deg: f64) -> erpflow::ScenePair<f64> {
    let spec = SceneSpec::new(seed, TextureKind::ValueNoise, ErpGrid::new(w, h).unwrap(), axis, deg);
    generate_pair(&spec).unwrap()
}

fn config(mode: EstimatorMode, iterations: usize) -> EstimatorConfig<f64> {
    EstimatorConfig { mode, iterations, ..Default::default() }
}

#[test]
fn identical_frames_stay_still() {
    let pair = scene(5, 128, 64, Axis::Z, 0.0);
    for mode in [EstimatorMode::Dual, EstimatorMode::PrimitiveOnly] {
        let est = estimate(&pair.frame1, &pair.frame1, &config(mode, 6)).unwrap();
        assert!(est.primitive.max_magnitude() < 0.1, "{mode:?}: {}", est.primitive.max_magnitude());
    }
}

#[test]
fn small_yaw_is_recovered() {
    let pair = scene(2, 256, 128, Axis::Z, 8.0 * 360.0 / 256.0);
    let est = estimate(&pair.frame1, &pair.frame2, &config(EstimatorMode::Dual, 4)).unwrap();
    let e = epe(&est.primitive, &pair.flow, None).unwrap();
    assert!(e < 1.0, "{e}");
}

#[test]
fn column_roll_equivariance_in_primitive_only_mode() {
    let pair = scene(8, 128, 64, Axis::Z, 6.0);
    let cfg = config(EstimatorMode::PrimitiveOnly, 3);
    let base = estimate(&pair.frame1, &pair.frame2, &cfg).unwrap();
    let k = 3 * cfg.downsample as i64;
    let rolled = estimate(&pair.frame1.roll_columns(k), &pair.frame2.roll_columns(k), &cfg).unwrap();
    let expect = base.primitive.roll_columns(k);
    for i in 0..expect.grid().len() {
        let (a, b) = (rolled.primitive.at(i), expect.at(i));
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9, "pixel {i}: {a:?} vs {b:?}");
    }
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let pair = scene(9, 128, 64, Axis::Y, 5.0);
    let cfg = config(EstimatorMode::Dual, 2);
    let a = estimate(&pair.frame1, &pair.frame2, &cfg).unwrap();
    let b = estimate(&pair.frame1, &pair.frame2, &cfg).unwrap();
    assert_eq!(a.primitive, b.primitive);
    assert_eq!(a.orthogonal, b.orthogonal);
}

#[test]
fn per_iteration_change_is_bounded() {
    let pair = scene(4, 128, 64, Axis::Y, 12.0);
    let cfg = config(EstimatorMode::PrimitiveOnly, 5);
    let est = estimate(&pair.frame1, &pair.frame2, &cfg).unwrap();
    let bound = cfg.radius as f64 * 2f64.sqrt() + 1e-9;
    let g = est.trace[0].primitive.grid();
    let mut prev = FlowField::zeros(g, ViewTag::Primitive);
    for t in &est.trace {
        let step = epe(&t.primitive, &prev, None).unwrap();
        assert!(step <= bound);
        for k in 0..g.len() {
            let (a, b) = (t.primitive.at(k), prev.at(k));
            let du = erpflow::wrap_displacement(a.0 - b.0, &g);
            assert!(du.hypot(a.1 - b.1) <= bound);
        }
        prev = t.primitive.clone();
    }
}

#[test]
fn trace_has_one_entry_per_iteration() {
    let pair = scene(1, 128, 64, Axis::Z, 3.0);
    let est = estimate(&pair.frame1, &pair.frame2, &config(EstimatorMode::Dual, 3)).unwrap();
    assert_eq!(est.trace.len(), 3);
    assert!(est.trace.iter().all(|t| t.orthogonal.is_some() && t.mean_fusion_weight.is_some()));
    assert_eq!(est.primitive_after(3).unwrap(), est.primitive);
    assert!(est.primitive_after(0).is_none());
    assert!(est.primitive_after(4).is_none());
}

#[test]
fn single_precision_instantiation_runs() {
    let spec = SceneSpec::new(3, TextureKind::Checker, ErpGrid::new(128, 64).unwrap(), Axis::Z, 0.0);
    let pair = generate_pair::<f32>(&spec).unwrap();
    let cfg = EstimatorConfig::<f32> { iterations: 2, ..Default::default() };
    let est = estimate(&pair.frame1, &pair.frame2, &cfg).unwrap();
    assert!(est.primitive.max_magnitude() < 0.1);
}

#[test]
fn fusion_with_true_other_flow_repairs_polar_noise() {
    let pair = scene(12, 256, 128, Axis::Y, 10.0);
    let threshold = std::f64::consts::FRAC_PI_4;
    let f1 = extract_features(&pair.frame1, 4).unwrap().padded_for_groups(8).unwrap();
    let f2 = extract_features(&pair.frame2, 4).unwrap().padded_for_groups(8).unwrap();
    let fg = f1.grid();
    let gt = pair.flow.downsample(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let own = FlowField::new(
        fg,
        (0..fg.len())
            .map(|k| {
                let lat = fg.row_latitude::<f64>(k / fg.width());
                gt.u()[k] + if lat.abs() > threshold { rng.gen_range(-6.0..6.0) } else { 0.0 }
            })
            .collect(),
        gt.v().to_vec(),
        ViewTag::Primitive,
    )
    .unwrap();
    let (c_own, c_other) = confidence_pair(&f1, &f2, &own, &gt, 8).unwrap();
    let fused = fuse_branches(&own, &gt, &c_own, &c_other, 1e5).unwrap();
    let own_polar = epe(&own, &gt, Some(Region::Poles)).unwrap();
    let fused_polar = epe(&fused, &gt, Some(Region::Poles)).unwrap();
    assert!(fused_polar <= own_polar, "{fused_polar} vs {own_polar}");
    assert!(fused_polar < 0.5 * own_polar, "{fused_polar} vs {own_polar}");
}

#[test]
fn polar_noise_leaves_the_equator_untouched() {
    let pair = scene(6, 128, 64, Axis::Z, 0.0);
    let noisy = inject_polar_noise(&pair.frame1, std::f64::consts::FRAC_PI_4, 20.0, 1);
    let g = noisy.grid();
    for j in 0..g.height() {
        let polar = g.row_latitude::<f64>(j).abs() > std::f64::consts::FRAC_PI_4;
        let same = (0..g.width()).all(|i| noisy.get(i, j, 0) == pair.frame1.get(i, j, 0));
        assert_eq!(same, !polar, "row {j}");
    }
}

fn conf_field(fg: ErpGrid, seed: u64) -> (FlowField<f64>, FlowField<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = || {
        FlowField::new(
            fg,
            (0..fg.len()).map(|_| rng.gen_range(-20.0..20.0)).collect(),
            (0..fg.len()).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            ViewTag::Primitive,
        )
        .unwrap()
    };
    (field(), field())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn fused_flow_lies_between_the_candidates(seed in 0u64..1000, beta in 0.0f64..50.0) {
        let pair = scene(seed % 7, 64, 32, Axis::Z, 0.0);
        let f1 = extract_features(&pair.frame1, 4).unwrap().padded_for_groups(8).unwrap();
        let fg = f1.grid();
        let (a, b) = conf_field(fg, seed);
        let (ca, cb) = confidence_pair(&f1, &f1, &a, &b, 8).unwrap();
        let fused = fuse_branches(&a, &b, &ca, &cb, beta).unwrap();
        for k in 0..fg.len() {
            let (fu, fv) = fused.at(k);
            let (au, av) = a.at(k);
            let (bu, bv) = b.at(k);
            let du = erpflow::wrap_displacement(bu - au, &fg);
            let t = erpflow::wrap_displacement(fu - au, &fg);
            prop_assert!(t * du.signum() >= -1e-9 && t.abs() <= du.abs() + 1e-9);
            prop_assert!(fv >= av.min(bv) - 1e-9 && fv <= av.max(bv) + 1e-9);
        }
    }
}
