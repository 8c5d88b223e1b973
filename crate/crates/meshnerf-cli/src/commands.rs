//! Subcommand implementations.

use crate::{stem_name, CliError, CliResult, Flags};
use meshnerf::autodiff::{load_checkpoint, restore_into};
use meshnerf::camera::{load_poses, pose_registration_error, CameraPose};
use meshnerf::error::Error;
use meshnerf::img::{load_mask_png, load_rgb_png, save_rgb_png, ImageRgb};
use meshnerf::library::{self, Library, SamplingParams};
use meshnerf::mask::MaskRaster;
use meshnerf::mesh::load_mesh;
use meshnerf::metrics;
use meshnerf::render::{render_image, NetField, RenderConfig};
use meshnerf::retrieval::{self, RetrievalReport};
use meshnerf::trainer::{self, TrainConfig, TrainState, TrainView};
use std::path::{Path, PathBuf};

pub fn build_library(flags: &mut Flags) -> CliResult<()> {
    let out = flags.take_path("out")?;
    let meshes_dir = flags.take_path_opt("meshes")?;
    let starter = flags.take_bool("starter-shapes")?;
    let pose_count = flags.take_parsed("poses", library::DEFAULT_POSE_COUNT)?;
    let radius = flags.take_parsed("radius", library::DEFAULT_RADIUS)?;
    let resolution = flags.take_parsed("resolution", library::DEFAULT_MASK_RESOLUTION)?;
    let _seed: u64 = flags.take_parsed("seed", 0)?;
    flags.reject_unknown()?;

    let sampling = SamplingParams {
        pose_count,
        radius,
        resolution,
    };
    let lib = match (meshes_dir, starter) {
        (Some(dir), false) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "obj"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::Pipeline(Error::InvalidInput(format!(
                    "no .obj files in {}",
                    dir.display()
                ))));
            }
            let mut named = Vec::new();
            for path in &paths {
                named.push((stem_name(path), load_mesh(path)?));
            }
            Library::build(named, sampling)?
        }
        (None, true) => Library::build(library::shapes::starter_meshes(), sampling)?,
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --meshes DIR or --starter-shapes".into(),
            ))
        }
    };
    lib.save(&out)?;
    let total: usize = lib.entries.iter().map(|e| e.masks.len()).sum();
    println!(
        "library written to {}: {} models, {} masks",
        out.display(),
        lib.entries.len(),
        total
    );
    Ok(())
}

fn load_view_masks(
    images: Option<&[PathBuf]>,
    masks: Option<&[PathBuf]>,
    matte_threshold: f64,
) -> CliResult<(Vec<String>, Vec<MaskRaster>, Vec<ImageRgb>)> {
    match (images, masks) {
        (Some(images), Some(masks)) => {
            if images.len() != masks.len() {
                return Err(CliError::Usage(format!(
                    "{} images but {} masks",
                    images.len(),
                    masks.len()
                )));
            }
            let mut names = Vec::new();
            let mut out_masks = Vec::new();
            let mut out_images = Vec::new();
            for (img_path, mask_path) in images.iter().zip(masks) {
                names.push(stem_name(img_path));
                out_images.push(load_rgb_png(img_path)?);
                out_masks.push(load_mask_png(mask_path)?);
            }
            Ok((names, out_masks, out_images))
        }
        (Some(images), None) => {
            let mut names = Vec::new();
            let mut out_masks = Vec::new();
            let mut out_images = Vec::new();
            for img_path in images {
                let image = load_rgb_png(img_path)?;
                names.push(stem_name(img_path));
                out_masks.push(image.luminance_matte(matte_threshold));
                out_images.push(image);
            }
            Ok((names, out_masks, out_images))
        }
        (None, Some(masks)) => {
            let mut names = Vec::new();
            let mut out_masks = Vec::new();
            let mut out_images = Vec::new();
            for mask_path in masks {
                let mask = load_mask_png(mask_path)?;
                names.push(stem_name(mask_path));
                out_images.push(ImageRgb::new(mask.width, mask.height));
                out_masks.push(mask);
            }
            Ok((names, out_masks, out_images))
        }
        (None, None) => Err(CliError::Usage("pass --images and/or --masks".into())),
    }
}

pub fn retrieve(flags: &mut Flags) -> CliResult<()> {
    let library_dir = flags.take_path("library")?;
    let images = flags.take_path_list_opt("images")?;
    let masks = flags.take_path_list_opt("masks")?;
    let k = flags.take_parsed("k", retrieval::DEFAULT_TOP_K)?;
    let max_discard = flags.take_parsed("max-discard", retrieval::DEFAULT_MAX_DISCARD)?;
    let matte_threshold = flags.take_parsed("matte-threshold", 0.05)?;
    let _seed: u64 = flags.take_parsed("seed", 0)?;
    flags.reject_unknown()?;
    if max_discard > 2 {
        return Err(CliError::Usage("--max-discard must be 0, 1, or 2".into()));
    }

    let lib = library::load_library(&library_dir)?;
    let (_names, view_masks, _images) =
        load_view_masks(images.as_deref(), masks.as_deref(), matte_threshold)?;
    let result = retrieval::retrieve(&view_masks, &lib, k, max_discard)?;
    let report = RetrievalReport::new(&result, &lib);
    println!(
        "{}",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::InvalidInput(format!("report serialization: {e}")))?
    );
    Ok(())
}

pub fn train(flags: &mut Flags) -> CliResult<()> {
    let library_dir = flags.take_path("library")?;
    let out = flags.take_path("out")?;
    let images = flags.take_path_list("images")?;
    let masks = flags.take_path_list_opt("masks")?;
    let matte_threshold = flags.take_parsed("matte-threshold", 0.05)?;
    let config_file = flags.take_path_opt("config")?;

    let mut config = TrainConfig::default();
    if let Some(path) = &config_file {
        config.apply_file(path)?;
    }
    flags.drain_into_config(&mut config)?;

    let lib = library::load_library(&library_dir)?;
    let (names, view_masks, view_images) =
        load_view_masks(Some(&images), masks.as_deref(), matte_threshold)?;
    let views: Vec<TrainView> = names
        .into_iter()
        .zip(view_masks.into_iter().zip(view_images))
        .map(|(name, (mask, image))| TrainView { name, image, mask })
        .collect();

    let (state, report) = trainer::run_full(&views, &lib, &config, &out)?;
    println!(
        "retrieved model {:?}; trained {} views ({} discarded); PSNR after phase2 {:.2} dB, after phase3 {:.2} dB",
        report.retrieval.model_id,
        report.kept_views.len(),
        report.retrieval.discarded_views.len(),
        report.psnr_after_phase2,
        report.psnr_after_phase3,
    );
    println!(
        "artifacts in {}: retrieval.json, phase checkpoints, loss_history.csv, metrics.csv, optimized_poses.json, renders",
        out.display()
    );
    let _ = state;
    Ok(())
}

/// Rebuild a renderable state from a checkpoint's parameters and metadata.
pub fn restore_for_render(path: &Path) -> CliResult<(TrainConfig, TrainState)> {
    let data = load_checkpoint(path)?;
    let meta = &data.meta;
    let get = |key: &str| -> CliResult<String> {
        meta.get(key)
            .cloned()
            .ok_or_else(|| CliError::Pipeline(Error::InvalidInput(format!(
                "checkpoint is missing metadata key {key:?}"
            ))))
    };
    let parse_usize = |key: &str| -> CliResult<usize> {
        get(key)?
            .parse()
            .map_err(|e| CliError::Pipeline(Error::InvalidInput(format!("meta {key}: {e}"))))
    };
    let parse_f64 = |key: &str| -> CliResult<f64> {
        get(key)?
            .parse()
            .map_err(|e| CliError::Pipeline(Error::InvalidInput(format!("meta {key}: {e}"))))
    };
    let config = TrainConfig {
        hidden_width: parse_usize("hidden_width")?,
        position_freqs: parse_usize("position_freqs")?,
        direction_freqs: parse_usize("direction_freqs")?,
        samples_per_ray: parse_usize("samples_per_ray")?,
        density_scale: parse_f64("density_scale")?,
        scene_radius: parse_f64("scene_radius")?,
        use_deformation: get("use_deformation")? == "true",
        seed: get("seed")?
            .parse()
            .map_err(|e| CliError::Pipeline(Error::InvalidInput(format!("meta seed: {e}"))))?,
        ..TrainConfig::default()
    };
    let n_views = parse_usize("n_views")?;

    let placeholder = CameraPose::look_at(
        meshnerf::geom::Vec3::new(config.scene_radius, 0.0, 0.0),
        meshnerf::geom::Vec3::ZERO,
        meshnerf::geom::Vec3::new(0.0, 0.0, 1.0),
        100.0,
        64,
        64,
    )?;
    let mut state = TrainState::new(&config, vec![placeholder; n_views])?;
    restore_into(&data, &mut state.store)?;
    state.iteration = data.step as usize;
    Ok((config, state))
}

pub fn render(flags: &mut Flags) -> CliResult<()> {
    let checkpoint = flags.take_path("checkpoint")?;
    let poses_path = flags.take_path("poses")?;
    let out = flags.take_path("out")?;
    let _seed: u64 = flags.take_parsed("seed", 0)?;
    flags.reject_unknown()?;

    let (config, state) = restore_for_render(&checkpoint)?;
    let poses = load_poses(&poses_path)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for (i, pose) in poses.iter().enumerate() {
        let image = state.render_view(pose);
        save_rgb_png(&out.join(format!("view_{i:03}.png")), &image)?;
    }
    println!(
        "rendered {} views at {} samples/ray into {}",
        poses.len(),
        config.samples_per_ray,
        out.display()
    );
    Ok(())
}

pub fn eval(flags: &mut Flags) -> CliResult<()> {
    let checkpoint = flags.take_path("checkpoint")?;
    let poses_path = flags.take_path("poses")?;
    let images = flags.take_path_list("images")?;
    let out = flags.take_path("out")?;
    let lpips_path = flags.take_path_opt("lpips")?;
    let opt_poses_path = flags.take_path_opt("opt-poses")?;
    let gt_poses_path = flags.take_path_opt("gt-poses")?;
    let _seed: u64 = flags.take_parsed("seed", 0)?;
    flags.reject_unknown()?;

    let (config, state) = restore_for_render(&checkpoint)?;
    let poses = load_poses(&poses_path)?;
    if poses.len() != images.len() {
        return Err(CliError::Usage(format!(
            "{} poses but {} images",
            poses.len(),
            images.len()
        )));
    }
    let lpips = match &lpips_path {
        Some(p) => Some(metrics::read_lpips_csv(p)?),
        None => None,
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let render_cfg = RenderConfig {
        n_samples: config.samples_per_ray,
        bounds: (config.scene_radius - 1.0, config.scene_radius + 1.0),
        density_scale: config.density_scale,
    };
    let encoding = config.encoding(config.position_freqs as f64);
    let field = NetField {
        params: &state.fields,
        store: &state.store,
        encoding,
        use_deformation: config.use_deformation,
    };
    let mut names = Vec::new();
    let mut rendered = Vec::new();
    let mut reference = Vec::new();
    for (pose, img_path) in poses.iter().zip(&images) {
        let name = stem_name(img_path);
        let img = render_image(pose, &field, &render_cfg, render_cfg.n_samples);
        save_rgb_png(&out.join(format!("render_{name}.png")), &img)?;
        names.push(name);
        rendered.push(img);
        reference.push(load_rgb_png(img_path)?);
    }
    let rows = metrics::score_views(&names, &rendered, &reference, lpips.as_ref())?;
    metrics::write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    for row in &rows {
        match row.average {
            Some(avg) => println!(
                "{}: psnr {:.3} ssim {:.4} lpips {:.4} average {:.4}",
                row.view,
                row.psnr,
                row.ssim,
                row.lpips.unwrap(),
                avg
            ),
            None => println!("{}: psnr {:.3} ssim {:.4}", row.view, row.psnr, row.ssim),
        }
    }

    match (opt_poses_path, gt_poses_path) {
        (Some(opt), Some(gt)) => {
            let estimated = load_poses(&opt)?;
            let reference_poses = load_poses(&gt)?;
            let (rot, trans) = pose_registration_error(&estimated, &reference_poses)?;
            metrics::write_pose_errors_csv(&out.join("pose_errors.csv"), rot, trans)?;
            println!("pose errors: rotation {rot:.3} deg, translation (x100) {trans:.3}");
        }
        (None, None) => {}
        _ => {
            return Err(CliError::Usage(
                "--opt-poses and --gt-poses must be given together".into(),
            ))
        }
    }
    Ok(())
}
