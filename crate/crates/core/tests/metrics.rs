mod common;

use proptest::prelude::*;
use rand::Rng;
use rtmd::eval::{
    aggregate, compute_metrics, depth_to_png16_value, load_depth_png16, save_depth_png16, Crop,
    DepthMap, EvalOptions,
};
use rtmd::EvalError;

use common::{metrics_close, metrics_oracle, random_depth_map, rng};

fn opts() -> EvalOptions {
    EvalOptions::kitti()
}

#[test]
fn identity_gives_exact_zeros_and_ones() {
    let mut r = rng(1);
    for _ in 0..20 {
        let gt = random_depth_map(&mut r, 12, 20, 0.3);
        let m = compute_metrics(&gt, &gt, &opts()).unwrap();
        assert_eq!(
            (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
    }
}

#[test]
fn four_pixel_hand_case() {
    let gt = DepthMap::new(2, 2, vec![2.0, 4.0, 8.0, 80.0]);
    let pred = DepthMap::new(2, 2, vec![1.0, 4.0, 16.0, 40.0]);
    let m = compute_metrics(&pred, &gt, &opts()).unwrap();
    assert_eq!(m.n_pixels, 4);
    assert!((m.abs_rel - 0.5).abs() < 1e-9);
    assert!((m.sq_rel - 7.125).abs() < 1e-9);
    assert!((m.rmse - 416.25f64.sqrt()).abs() < 1e-9);
    assert!((m.rmse_log - 2f64.log10() * 0.75f64.sqrt()).abs() < 1e-9);
    assert!((m.delta1 - 0.25).abs() < 1e-9);
    assert!((m.delta2 - 0.25).abs() < 1e-9);
    assert!((m.delta3 - 0.25).abs() < 1e-9);
}

#[test]
fn matches_oracle_on_random_maps() {
    let mut r = rng(2);
    for _ in 0..200 {
        let gt = random_depth_map(&mut r, 16, 16, 0.2);
        let pred = random_depth_map(&mut r, 16, 16, 0.0);
        let m = compute_metrics(&pred, &gt, &opts()).unwrap();
        let o = metrics_oracle(&pred, &gt, 1e-3, 80.0);
        assert!(metrics_close(&m, &o, 1e-9), "{m:?} vs {o:?}");
    }
}

#[test]
fn delta_monotone_and_median_scale_invariant_on_1000_maps() {
    let mut r = rng(3);
    let median = EvalOptions {
        median_scale: true,
        ..opts()
    };
    for i in 0..1000 {
        let gt = random_depth_map(&mut r, 8, 8, 0.1);
        let pred = DepthMap::new(8, 8, (0..64).map(|_| r.gen_range(0.5f32..60.0)).collect());
        let m = compute_metrics(&pred, &gt, &opts()).unwrap();
        assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3, "map {i}");

        let base = compute_metrics(&pred, &gt, &median).unwrap();
        assert!(base.delta1 <= base.delta2 && base.delta2 <= base.delta3);
        // power-of-two factors are exact in f32, so invariance is exact up to f64 rounding
        let k = [0.125f32, 0.5, 2.0, 16.0][i % 4];
        let scaled = DepthMap::new(8, 8, pred.values().iter().map(|v| v * k).collect());
        let s = compute_metrics(&scaled, &gt, &median).unwrap();
        assert!(
            metrics_close(&base, &s, 1e-12),
            "map {i}: {base:?} vs {s:?}"
        );
        // arbitrary factors only lose f32 precision in the scaled input
        let k = r.gen_range(0.01f32..100.0);
        let scaled = DepthMap::new(8, 8, pred.values().iter().map(|v| v * k).collect());
        let s = compute_metrics(&scaled, &gt, &median).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-12);
        assert!(rel(base.abs_rel, s.abs_rel) < 1e-5, "map {i} k={k}");
        assert!(rel(base.sq_rel, s.sq_rel) < 1e-5, "map {i} k={k}");
        assert!(rel(base.rmse, s.rmse) < 1e-5, "map {i} k={k}");
        assert!(rel(base.rmse_log, s.rmse_log) < 1e-4, "map {i} k={k}");
    }
}

#[test]
fn range_filter_and_clamping() {
    // gt 0 is invalid, 90 is beyond max, 1e-4 below min
    let gt = DepthMap::new(1, 5, vec![0.0, 90.0, 1e-4, 10.0, 80.0]);
    let pred = DepthMap::new(1, 5, vec![5.0, 5.0, 5.0, 200.0, 0.0]);
    let m = compute_metrics(&pred, &gt, &opts()).unwrap();
    assert_eq!(m.n_pixels, 2);
    // 200 clamps to 80 and 0 clamps to 1e-3
    let expected = ((80.0f64 - 10.0) / 10.0 + (80.0 - 1e-3) / 80.0) / 2.0;
    assert!((m.abs_rel - expected).abs() < 1e-9);
}

#[test]
fn empty_evaluation_and_mismatch_are_errors() {
    let gt = DepthMap::new(2, 2, vec![0.0; 4]);
    assert!(matches!(
        compute_metrics(&gt, &gt, &opts()),
        Err(EvalError::EmptyEvaluation { .. })
    ));
    let other = DepthMap::new(2, 3, vec![1.0; 6]);
    assert!(matches!(
        compute_metrics(&other, &gt, &opts()),
        Err(EvalError::SizeMismatch { .. })
    ));
    assert!(matches!(aggregate(&[]), Err(EvalError::EmptyAggregate)));
}

#[test]
fn crop_restricts_evaluation() {
    let (h, w) = (375, 1242);
    let gt = DepthMap::new(h, w, vec![10.0; h * w]);
    let pred = DepthMap::new(h, w, vec![10.0; h * w]);
    let crop = Crop::garg(h, w);
    let m = compute_metrics(
        &pred,
        &gt,
        &EvalOptions {
            crop: Some(crop),
            ..opts()
        },
    )
    .unwrap();
    assert_eq!(
        m.n_pixels as usize,
        (crop.bottom - crop.top) * (crop.right - crop.left)
    );
    assert!(crop.top > 0 && crop.bottom < h && crop.left > 0 && crop.right < w);
}

#[test]
fn aggregate_is_unweighted_mean() {
    let a = compute_metrics(
        &DepthMap::new(1, 1, vec![1.0]),
        &DepthMap::new(1, 1, vec![2.0]),
        &opts(),
    )
    .unwrap();
    let gt = DepthMap::new(1, 3, vec![2.0; 3]);
    let b = compute_metrics(&gt, &gt, &opts()).unwrap();
    let agg = aggregate(&[a, b]).unwrap();
    assert_eq!(agg.n_pixels, 4);
    assert!((agg.abs_rel - 0.25).abs() < 1e-12);
    assert!((agg.delta1 - 0.5).abs() < 1e-12);
}

#[test]
fn png16_round_trip_and_scale() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gt.png");
    let file = std::fs::File::create(&path).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 3, 1);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let raw: Vec<u8> = [25600u16, 0, 65535]
        .iter()
        .flat_map(|v| v.to_be_bytes())
        .collect();
    let mut writer = enc.write_header().unwrap();
    writer.write_image_data(&raw).unwrap();
    writer.finish().unwrap();

    let map = load_depth_png16(&path).unwrap();
    assert_eq!(map.values(), &[100.0, 0.0, 65535.0 / 256.0]);
    assert!(map.is_valid(0, 0) && !map.is_valid(0, 1));

    let out = dir.path().join("out.png");
    save_depth_png16(&map, &out).unwrap();
    assert_eq!(load_depth_png16(&out).unwrap(), map);
    assert_eq!(depth_to_png16_value(100.0), 25600);
    assert_eq!(depth_to_png16_value(1e6), u16::MAX);
    assert_eq!(depth_to_png16_value(-1.0), 0);
}

proptest! {
    #[test]
    fn abs_rel_nonnegative_and_deltas_bounded(
        gt in prop::collection::vec(0.01f32..80.0, 1..64),
        noise in prop::collection::vec(0.5f32..2.0, 64),
    ) {
        let n = gt.len();
        let pred: Vec<f32> = gt.iter().zip(&noise).map(|(g, k)| g * k).collect();
        let m = compute_metrics(&DepthMap::new(1, n, pred), &DepthMap::new(1, n, gt), &opts()).unwrap();
        prop_assert!(m.abs_rel >= 0.0 && m.rmse >= 0.0 && m.rmse_log >= 0.0);
        prop_assert!(0.0 <= m.delta1 && m.delta3 <= 1.0);
        prop_assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3);
    }

    #[test]
    fn delta_is_symmetric_in_pred_and_gt(
        a in prop::collection::vec(0.01f32..80.0, 1..32),
        b in prop::collection::vec(0.01f32..80.0, 32),
    ) {
        let n = a.len();
        let b = b[..n].to_vec();
        let ab = compute_metrics(&DepthMap::new(1, n, a.clone()), &DepthMap::new(1, n, b.clone()), &opts()).unwrap();
        let ba = compute_metrics(&DepthMap::new(1, n, b), &DepthMap::new(1, n, a), &opts()).unwrap();
        prop_assert_eq!((ab.delta1, ab.delta2, ab.delta3), (ba.delta1, ba.delta2, ba.delta3));
        prop_assert!((ab.rmse - ba.rmse).abs() < 1e-9);
    }
}
