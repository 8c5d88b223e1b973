//! Synthetic posed test scenes: ray-cast renders of a mesh with per-facet
//! colors, so the pipeline can be demonstrated and tested without captured
//! data. Images are exact (hard silhouettes, no shading model).

use crate::camera::CameraPose;
use crate::geom::Vec3;
use crate::img::ImageRgb;
use crate::mask::MaskRaster;
use crate::mesh::TriangleMesh;
use crate::trainer::TrainView;
use rayon::prelude::*;

/// Distinct bright colors keyed by the dominant normal axis, with a mild
/// positional gradient so faces are not perfectly flat.
pub fn facet_color(normal: Vec3, point: Vec3) -> [f64; 3] {
    let base: [f64; 3] = {
        let ax = normal.x.abs();
        let ay = normal.y.abs();
        let az = normal.z.abs();
        if ax >= ay && ax >= az {
            if normal.x >= 0.0 {
                [0.90, 0.15, 0.10]
            } else {
                [0.95, 0.80, 0.10]
            }
        } else if ay >= az {
            if normal.y >= 0.0 {
                [0.15, 0.80, 0.20]
            } else {
                [0.85, 0.20, 0.80]
            }
        } else if normal.z >= 0.0 {
            [0.15, 0.35, 0.90]
        } else {
            [0.10, 0.80, 0.85]
        }
    };
    let shade = 0.85 + 0.3 * (point.x + point.y + point.z);
    [
        (base[0] * shade).clamp(0.0, 1.0),
        (base[1] * shade).clamp(0.0, 1.0),
        (base[2] * shade).clamp(0.0, 1.0),
    ]
}

/// Ray-cast the mesh from a pose: facet-colored image over black plus the
/// exact silhouette.
pub fn render_facet_scene(mesh: &TriangleMesh, pose: &CameraPose) -> (ImageRgb, MaskRaster) {
    let (w, h) = (pose.width, pose.height);
    let rows: Vec<Vec<Option<[f64; 3]>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let ray = pose.pixel_center_ray(x, y, (0.0, 1.0));
                    mesh.first_hit(ray.origin, ray.direction).map(|(t, tri)| {
                        facet_color(mesh.triangle_normal(tri), ray.at(t))
                    })
                })
                .collect()
        })
        .collect();
    let mut image = ImageRgb::new(w, h);
    let mut mask = MaskRaster::new(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, hit) in row.into_iter().enumerate() {
            if let Some(rgb) = hit {
                image.set_pixel(x, y, rgb);
                mask.set(x, y, 1);
            }
        }
    }
    (image, mask)
}

/// Training views of a mesh taken at the given library pose indices.
pub fn views_at_library_poses(
    mesh: &TriangleMesh,
    poses: &[CameraPose],
    indices: &[usize],
) -> Vec<TrainView> {
    indices
        .iter()
        .map(|&i| {
            let (image, mask) = render_facet_scene(mesh, &poses[i]);
            TrainView {
                name: format!("pose{i:03}"),
                image,
                mask,
            }
        })
        .collect()
}
