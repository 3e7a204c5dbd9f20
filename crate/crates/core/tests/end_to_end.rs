use proptest::prelude::*;
use wildmvs::benchmark::{depth_metrics, depth_range_from_sparse, precision_recall, select_source_views, SparseModel};
use wildmvs::benchmark::{DEFAULT_MIN_SELECTION_ANGLE, DEFAULT_MIN_SHARED_POINTS};
use wildmvs::fusion::{fuse, FusionParams, PointCloud};
use wildmvs::geometry::{read_cameras, sample_hypotheses, DepthRange, Point3};
use wildmvs::imagery::{load_depth_pfm, load_image, DepthMap, GroundTruthDepth, Grid};
use wildmvs::pipeline::{estimate_depth, PipelineConfig};
use wildmvs::synthdata::{generate, write_scene, Geometry, SceneSpec};

fn small(geometry: Geometry) -> SceneSpec {
    SceneSpec {
        geometry,
        width: 64,
        height: 64,
        ..SceneSpec::default()
    }
}

#[test]
fn scene_survives_disk_round_trip() {
    let scene = generate(&small(Geometry::sphere())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &scene).unwrap();

    let cams = read_cameras(&dir.path().join("cameras.txt")).unwrap();
    assert_eq!(cams.len(), scene.cameras.len());
    for (a, b) in cams.iter().zip(&scene.cameras) {
        assert_eq!(a.name, b.name);
        assert!((a.camera.rotation - b.camera.rotation).abs().max() < 1e-12);
        assert!((a.camera.center() - b.camera.center()).norm() < 1e-9);
    }
    for (nc, img) in scene.cameras.iter().zip(&scene.images) {
        let back = load_image(&dir.path().join("images").join(format!("{}.ppm", nc.name))).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (img.width(), img.height(), img.channels()));
        let worst = back.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12, "8-bit quantization error {worst}");
    }
    let d0 = load_depth_pfm(&dir.path().join("depths").join(format!("{}.pfm", scene.cameras[0].name))).unwrap();
    assert_eq!(d0.validity(), scene.gt_depths[0].depth.validity());
    for (a, b) in d0.values().iter().zip(scene.gt_depths[0].depth.values()) {
        if a.is_finite() && *a > 0.0 {
            assert!((a - b).abs() <= 1e-6 * b.abs());
        }
    }
    let sparse = SparseModel::read(&dir.path().join("points3d.txt"), cams).unwrap();
    assert_eq!(sparse.points3d.len(), scene.sparse.points3d.len());
    let all: Vec<usize> = (0..scene.cameras.len()).collect();
    let (r0, r1) = (
        depth_range_from_sparse(&sparse, 0, &all).unwrap(),
        depth_range_from_sparse(&scene.sparse, 0, &all).unwrap(),
    );
    assert!((r0.d_min - r1.d_min).abs() < 1e-6 && (r0.d_max - r1.d_max).abs() < 1e-6);
    let cloud = PointCloud::read_ply(&dir.path().join("gt_cloud.ply")).unwrap();
    assert_eq!(cloud.len(), scene.gt_cloud.len());
}

#[test]
fn sphere_depth_then_fusion() {
    let scene = generate(&SceneSpec {
        geometry: Geometry::sphere(),
        width: 128,
        height: 128,
        ..SceneSpec::default()
    })
    .unwrap();
    let cams = scene.plain_cameras();
    let cfg = PipelineConfig {
        hypotheses: 96,
        ..PipelineConfig::default()
    };
    let mut depths = Vec::new();
    for r in 0..cams.len() {
        let mut src = select_source_views(&scene.sparse, r, DEFAULT_MIN_SHARED_POINTS, DEFAULT_MIN_SELECTION_ANGLE).unwrap();
        src.truncate(cfg.source_views);
        let views: Vec<usize> = std::iter::once(r).chain(src.iter().copied()).collect();
        // The background sits at the far end of the sparse range, where the
        // soft-argmin is pulled inward; pad the range to keep it interior.
        let tight = depth_range_from_sparse(&scene.sparse, r, &views).unwrap();
        let range = DepthRange::new(tight.d_min * 0.9, tight.d_max * 1.2).unwrap();
        let d = estimate_depth(&scene.images, &cams, r, &src, range, &cfg).unwrap();
        // Upsampled coarse depth smears across the silhouette, so the mean
        // is dominated by that band; the median reflects the surfaces.
        let gt = &scene.gt_depths[r].depth;
        let mut errs: Vec<f64> = d.values().iter().zip(gt.values()).map(|(a, b)| (a - b).abs() / b).collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        assert!(median < 0.02, "view {r}: median relative error {median}");
        depths.push(d);
    }
    let cloud = fuse(&depths, &cams, Some(&scene.images), &FusionParams::default()).unwrap();
    assert!(cloud.len() > 1000, "{} points", cloud.len());
    let r = precision_recall(&cloud, &scene.gt_cloud, 0.15).unwrap();
    assert!(r.precision > 80.0 && r.recall > 50.0, "{r:?}");
}

proptest! {
    #[test]
    fn hypotheses_span_range_in_order(d_min in 0.1f64..10.0, span in 0.01f64..50.0, n in 2usize..300) {
        let h = sample_hypotheses(DepthRange::new(d_min, d_min + span).unwrap(), n).unwrap();
        prop_assert_eq!(h.count(), n);
        prop_assert!((h.first() - d_min).abs() <= 1e-12 * d_min.max(1.0));
        prop_assert!((h.last() - (d_min + span)).abs() <= 1e-9 * (d_min + span));
        prop_assert!(h.values().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn precision_and_recall_swap(seed in 0u64..500, n in 1usize..60, m in 1usize..60, t in 0.05f64..1.0) {
        let pts = |k: usize, off: u64| -> Vec<Point3> {
            (0..k).map(|i| {
                let x = ((i as u64 * 2654435761 + seed * 97 + off) % 1000) as f64 / 250.0;
                let y = ((i as u64 * 40503 + seed * 31 + off * 7) % 1000) as f64 / 250.0;
                Point3::new(x, y, 0.5 * x)
            }).collect()
        };
        let a = PointCloud::from_points(pts(n, 1));
        let b = PointCloud::from_points(pts(m, 2));
        let ab = precision_recall(&a, &b, t).unwrap();
        let ba = precision_recall(&b, &a, t).unwrap();
        prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
        prop_assert!((ab.recall - ba.precision).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.f_score));
    }

    #[test]
    fn depth_metrics_exact_under_power_of_two_scale(seed in 0u64..1000, k in -4i32..5) {
        let s = 2f64.powi(k);
        let vals = |off: u64| -> Vec<f64> {
            (0..48).map(|i| 2.0 + ((i as u64 * 7919 + seed * 13 + off) % 4000) as f64 / 1000.0).collect()
        };
        let range = DepthRange::new(2.0, 6.0).unwrap();
        let pred = DepthMap::from_values(8, 6, vals(1)).unwrap();
        let gt = GroundTruthDepth::from_depth(DepthMap::from_values(8, 6, vals(2)).unwrap());
        let a = depth_metrics(&pred, &gt, range).unwrap();
        let b = depth_metrics(&pred.scaled(s), &gt.scaled(s), range.scaled(s).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}
