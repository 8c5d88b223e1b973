//! Integration checks of the evaluation surface: report emission from a
//! trained-state-shaped bundle, and the documented file formats.

use meshnerf::autodiff::ParamStore;
use meshnerf::camera::{sample_library_poses, CameraPose};
use meshnerf::fields::{EncodingConfig, FieldParams};
use meshnerf::geom::Vec3;
use meshnerf::img::ImageRgb;
use meshnerf::metrics::{evaluate_run, HeldoutView};
use meshnerf::render::RenderConfig;

fn tiny_fields() -> (ParamStore, FieldParams, EncodingConfig) {
    let mut store = ParamStore::new();
    let encoding = EncodingConfig::full(3, 2);
    let fields = FieldParams::new(&mut store, &encoding, 12, 9);
    (store, fields, encoding)
}

fn flat_image(width: usize, height: usize, rgb: [f64; 3]) -> ImageRgb {
    let mut img = ImageRgb::new(width, height);
    for y in 0..height {
        for x in 0..width {
            img.set_pixel(x, y, rgb);
        }
    }
    img
}

#[test]
fn evaluate_run_writes_reports_and_counts_rows() {
    let (store, fields, encoding) = tiny_fields();
    let render_cfg = RenderConfig {
        n_samples: 6,
        bounds: (1.0, 3.0),
        density_scale: 20.0,
    };
    let poses = sample_library_poses(6, 2.0, 16);
    let heldout: Vec<HeldoutView> = poses
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, p)| (format!("h{i}"), p.clone(), flat_image(16, 16, [0.2, 0.3, 0.4])))
        .collect();
    let out_dir = std::env::temp_dir().join("meshnerf_evaluate_run");
    std::fs::remove_dir_all(&out_dir).ok();

    // pose errors against an identical set must vanish
    let estimated: Vec<CameraPose> = poses.iter().skip(1).take(4).cloned().collect();
    let (rows, pose_errors) = evaluate_run(
        &fields,
        &store,
        &encoding,
        &render_cfg,
        true,
        &heldout,
        None,
        Some((&estimated, &estimated)),
        &out_dir,
    )
    .unwrap();

    assert_eq!(rows.len(), heldout.len(), "one row per held-out view");
    for row in &rows {
        assert!(row.lpips.is_none() && row.average.is_none());
        assert!(out_dir.join(format!("render_{}.png", row.view)).is_file());
    }
    let (rot, trans) = pose_errors.unwrap();
    assert!(rot.abs() < 1e-5 && trans.abs() < 1e-5, "self comparison: {rot} {trans}");
    assert!(out_dir.join("metrics.csv").is_file());
    assert!(out_dir.join("pose_errors.csv").is_file());

    // with LPIPS supplied, the average column appears
    let mut lpips = std::collections::BTreeMap::new();
    for row in &rows {
        lpips.insert(row.view.clone(), 0.25);
    }
    let (rows_with, _) = evaluate_run(
        &fields,
        &store,
        &encoding,
        &render_cfg,
        true,
        &heldout,
        Some(&lpips),
        None,
        &out_dir,
    )
    .unwrap();
    for row in &rows_with {
        assert_eq!(row.lpips, Some(0.25));
        assert!(row.average.is_some());
    }
    std::fs::remove_dir_all(&out_dir).ok();
}

#[test]
fn ray_and_query_validation() {
    use meshnerf::camera::Ray;
    use meshnerf::mesh::OccupancyQuery;
    // non-unit direction
    assert!(Ray::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 0.0), (0.0, 1.0)).is_err());
    // inverted bounds
    assert!(Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), (2.0, 1.0)).is_err());
    // occupancy queries must have unit, non-empty directions
    assert!(OccupancyQuery::new(Vec3::ZERO, vec![]).is_err());
    assert!(OccupancyQuery::new(Vec3::ZERO, vec![Vec3::new(0.5, 0.0, 0.0)]).is_err());
    assert!(OccupancyQuery::new(Vec3::ZERO, vec![Vec3::new(0.0, 0.0, 1.0)]).is_ok());
}
