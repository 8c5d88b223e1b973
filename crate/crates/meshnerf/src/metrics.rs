//! Image-quality metrics (PSNR, SSIM, and their combined average), pose
//! error reporting, and CSV report emission.

use crate::autodiff::ParamStore;
use crate::camera::{pose_registration_error, CameraPose};
use crate::error::{Error, Result};
use crate::fields::{EncodingConfig, FieldParams};
use crate::img::{save_rgb_png, ImageRgb};
use crate::render::{render_image, NetField, RenderConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// PSNR reported for bit-identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(1 / MSE)` over all pixels and channels of [0,1] images.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "psnr image sizes {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5) at every fully
/// interior position, averaged over the three channels.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "ssim image sizes {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let window = gaussian_window();
    let mut channel_means = [0.0; 3];
    for (ch, mean_slot) in channel_means.iter_mut().enumerate() {
        let mut total = 0.0;
        let mut count = 0usize;
        for y0 in 0..=(a.height - SSIM_WINDOW) {
            for x0 in 0..=(a.width - SSIM_WINDOW) {
                let (mut mu_x, mut mu_y) = (0.0, 0.0);
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let w = window[wy * SSIM_WINDOW + wx];
                        let i = ((y0 + wy) * a.width + (x0 + wx)) * 3 + ch;
                        mu_x += w * a.data[i];
                        mu_y += w * b.data[i];
                    }
                }
                let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let w = window[wy * SSIM_WINDOW + wx];
                        let i = ((y0 + wy) * a.width + (x0 + wx)) * 3 + ch;
                        let dx = a.data[i] - mu_x;
                        let dy = b.data[i] - mu_y;
                        var_x += w * dx * dx;
                        var_y += w * dy * dy;
                        cov += w * dx * dy;
                    }
                }
                let num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
        *mean_slot = total / count as f64;
    }
    Ok((channel_means[0] + channel_means[1] + channel_means[2]) / 3.0)
}

/// Geometric mean of MSE (`10^(-PSNR/10)`), `sqrt(1-SSIM)`, and LPIPS.
/// A perfect image (capped PSNR or SSIM of 1) maps to 0.
pub fn average_metric(psnr_db: f64, ssim_value: f64, lpips: f64) -> f64 {
    if ssim_value >= 1.0 || psnr_db >= PSNR_CAP {
        return 0.0;
    }
    let mse = 10f64.powf(-psnr_db / 10.0);
    (mse * (1.0 - ssim_value).sqrt() * lpips).powf(1.0 / 3.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    /// Present only when LPIPS is supplied.
    pub average: Option<f64>,
}

/// Score rendered views against references; LPIPS values, when supplied
/// (it is a learned metric computed externally), enable the average column.
pub fn score_views(
    names: &[String],
    rendered: &[ImageRgb],
    reference: &[ImageRgb],
    lpips: Option<&BTreeMap<String, f64>>,
) -> Result<Vec<MetricsRow>> {
    if names.len() != rendered.len() || rendered.len() != reference.len() {
        return Err(Error::InvalidInput("view/name count mismatch".into()));
    }
    names
        .iter()
        .zip(rendered.iter().zip(reference))
        .map(|(name, (r, gt))| {
            let p = psnr(r, gt)?;
            let s = ssim(r, gt)?;
            let l = lpips.and_then(|m| m.get(name)).copied();
            Ok(MetricsRow {
                view: name.clone(),
                psnr: p,
                ssim: s,
                lpips: l,
                average: l.map(|l| average_metric(p, s, l)),
            })
        })
        .collect()
}

/// `metrics.csv`: view, psnr, ssim, lpips, average. The average column is
/// computed per view and then averaged in the summary row.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# average = geometric mean of 10^(-psnr/10), sqrt(1-ssim), lpips; computed per view, then meaned\n");
    out.push_str("view,psnr,ssim,lpips,average\n");
    for r in rows {
        let lp = r.lpips.map(|v| v.to_string()).unwrap_or_default();
        let avg = r.average.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.view, r.psnr, r.ssim, lp, avg).unwrap();
    }
    if !rows.is_empty() {
        let mean = |f: &dyn Fn(&MetricsRow) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = rows.iter().filter_map(f).collect();
            (vals.len() == rows.len()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let mp = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
        let ms = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
        let ml = mean(&|r| r.lpips).map(|v| v.to_string()).unwrap_or_default();
        let ma = mean(&|r| r.average).map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "mean,{mp},{ms},{ml},{ma}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_pose_errors_csv(path: &Path, rotation_deg: f64, translation_x100: f64) -> Result<()> {
    let text = format!("rotation_deg,translation_x100\n{rotation_deg},{translation_x100}\n");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Optional per-view LPIPS input: `view,lpips` lines.
pub fn read_lpips_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("view") {
            continue;
        }
        let (view, value) = line.split_once(',').ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected view,lpips".into(),
        })?;
        let value: f64 = value.trim().parse().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad lpips value: {e}"),
        })?;
        map.insert(view.trim().to_string(), value);
    }
    Ok(map)
}

/// A held-out evaluation view: name, reference camera, reference image.
pub type HeldoutView = (String, CameraPose, ImageRgb);

/// Render every held-out view with the trained fields, score it, emit
/// `metrics.csv` / `pose_errors.csv` / per-view renders, and return the rows
/// plus pose errors when reference poses are given.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_run(
    params: &FieldParams,
    store: &ParamStore,
    encoding: &EncodingConfig,
    render_cfg: &RenderConfig,
    use_deformation: bool,
    heldout: &[HeldoutView],
    lpips: Option<&BTreeMap<String, f64>>,
    pose_sets: Option<(&[CameraPose], &[CameraPose])>,
    out_dir: &Path,
) -> Result<(Vec<MetricsRow>, Option<(f64, f64)>)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let field = NetField {
        params,
        store,
        encoding: *encoding,
        use_deformation,
    };
    let mut names = Vec::new();
    let mut rendered = Vec::new();
    let mut reference = Vec::new();
    for (name, pose, image) in heldout {
        let img = render_image(pose, &field, render_cfg, render_cfg.n_samples);
        save_rgb_png(&out_dir.join(format!("render_{name}.png")), &img)?;
        names.push(name.clone());
        rendered.push(img);
        reference.push(image.clone());
    }
    let rows = score_views(&names, &rendered, &reference, lpips)?;
    write_metrics_csv(&out_dir.join("metrics.csv"), &rows)?;
    let pose_errors = match pose_sets {
        Some((estimated, gt)) => {
            let (rot, trans) = pose_registration_error(estimated, gt)?;
            write_pose_errors_csv(&out_dir.join("pose_errors.csv"), rot, trans)?;
            Some((rot, trans))
        }
        None => None,
    };
    Ok((rows, pose_errors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(w: usize, h: usize, level: [f64; 3]) -> ImageRgb {
        let mut img = ImageRgb::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, level);
            }
        }
        img
    }

    fn checkerboard(w: usize, h: usize) -> ImageRgb {
        let mut img = ImageRgb::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = ((x / 4 + y / 4) % 2) as f64;
                img.set_pixel(x, y, [v, v, v]);
            }
        }
        img
    }

    #[test]
    fn psnr_worked_examples() {
        let a = constant_image(16, 16, [0.5, 0.5, 0.5]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        // constant offset 0.1 -> MSE 0.01 -> 20 dB
        let b = constant_image(16, 16, [0.6, 0.6, 0.6]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        // offset sqrt(0.001)
        let d = 0.001f64.sqrt();
        let c = constant_image(16, 16, [0.5 + d, 0.5 + d, 0.5 + d]);
        assert!((psnr(&a, &c).unwrap() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_and_ssim_are_symmetric() {
        let a = checkerboard(32, 32);
        let mut b = checkerboard(32, 32);
        b.set_pixel(3, 3, [0.2, 0.4, 0.9]);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn metrics_survive_simultaneous_mirroring() {
        let a = checkerboard(32, 32);
        let mut b = checkerboard(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let [r, g, bl] = b.pixel(x, y);
                b.set_pixel(x, y, [r * 0.9, g, bl * 0.8 + 0.1]);
            }
        }
        let flip = |img: &ImageRgb| {
            let mut out = ImageRgb::new(img.width, img.height);
            for y in 0..img.height {
                for x in 0..img.width {
                    out.set_pixel(img.width - 1 - x, y, img.pixel(x, y));
                }
            }
            out
        };
        let pa = psnr(&a, &b).unwrap();
        let pb = psnr(&flip(&a), &flip(&b)).unwrap();
        assert!((pa - pb).abs() < 1e-12);
        let sa = ssim(&a, &b).unwrap();
        let sb = ssim(&flip(&a), &flip(&b)).unwrap();
        assert!((sa - sb).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = checkerboard(24, 24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negated_checkerboard_is_low() {
        let a = checkerboard(32, 32);
        let mut b = ImageRgb::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let [r, g, bl] = a.pixel(x, y);
                b.set_pixel(x, y, [1.0 - r, 1.0 - g, 1.0 - bl]);
            }
        }
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.2, "negated checkerboard ssim {s}");
    }

    #[test]
    fn ssim_of_constants_matches_closed_form() {
        let a = constant_image(16, 16, [0.2, 0.2, 0.2]);
        let b = constant_image(16, 16, [0.8, 0.8, 0.8]);
        // zero variance: luminance term only
        let want = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2 * 0.2 + 0.8 * 0.8 + SSIM_C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = constant_image(8, 8, [0.5; 3]);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn average_metric_worked_example() {
        let v = average_metric(20.0, 0.91, 0.1);
        assert!((v - 0.0669).abs() < 1e-4, "average {v}");
    }

    #[test]
    fn average_metric_scales_with_cbrt_of_lpips() {
        let base = average_metric(22.0, 0.9, 0.1);
        let scaled = average_metric(22.0, 0.9, 0.8);
        assert!((scaled / base - 8f64.powf(1.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn average_metric_perfect_image_is_zero() {
        assert_eq!(average_metric(PSNR_CAP, 1.0, 0.5), 0.0);
        assert_eq!(average_metric(PSNR_CAP, 0.9, 0.5), 0.0);
        assert_eq!(average_metric(40.0, 1.0, 0.5), 0.0);
    }

    #[test]
    fn average_metric_improves_when_any_input_improves() {
        let base = average_metric(20.0, 0.9, 0.2);
        assert!(average_metric(25.0, 0.9, 0.2) < base);
        assert!(average_metric(20.0, 0.95, 0.2) < base);
        assert!(average_metric(20.0, 0.9, 0.1) < base);
    }

    #[test]
    fn csv_report_and_lpips_roundtrip() {
        let rows = vec![
            MetricsRow {
                view: "v0".into(),
                psnr: 21.5,
                ssim: 0.93,
                lpips: Some(0.08),
                average: Some(average_metric(21.5, 0.93, 0.08)),
            },
            MetricsRow {
                view: "v1".into(),
                psnr: 24.0,
                ssim: 0.95,
                lpips: Some(0.06),
                average: Some(average_metric(24.0, 0.95, 0.06)),
            },
        ];
        let dir = std::env::temp_dir().join("meshnerf_metrics_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().count() == 2 + rows.len() + 1, "header + rows + mean");
        assert!(text.contains("v0,21.5,0.93,0.08"));

        let lpips_path = dir.join("lpips.csv");
        std::fs::write(&lpips_path, "view,lpips\nv0,0.08\nv1,0.06\n").unwrap();
        let map = read_lpips_csv(&lpips_path).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map["v1"], 0.06);
        std::fs::remove_dir_all(&dir).ok();
    }
}
