//! The template library: per-model posed silhouettes plus pose records,
//! with deterministic builds and an integrity-checked on-disk layout.
//!
//! Layout:
//!
//! ```text
//! library/
//!   manifest.json
//!   <model_id>/
//!     model.obj
//!     poses.json
//!     masks/<pose_index>.png
//! ```

use crate::camera::{load_poses, sample_library_poses, save_poses, CameraPose};
use crate::error::{Error, Result};
use crate::img::{load_mask_png, save_mask_png};
use crate::mask::MaskRaster;
use crate::mesh::{load_mesh, TriangleMesh};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const LIBRARY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_POSE_COUNT: usize = 100;
pub const DEFAULT_RADIUS: f64 = 2.0;
pub const DEFAULT_MASK_RESOLUTION: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub pose_count: usize,
    pub radius: f64,
    pub resolution: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            pose_count: DEFAULT_POSE_COUNT,
            radius: DEFAULT_RADIUS,
            resolution: DEFAULT_MASK_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LibraryEntry {
    pub model_id: String,
    pub mesh: TriangleMesh,
    /// Sorted by (azimuth, elevation); the list position is the pose index.
    pub poses: Vec<CameraPose>,
    pub masks: Vec<MaskRaster>,
}

#[derive(Debug, Clone)]
pub struct Library {
    pub entries: Vec<LibraryEntry>,
    pub sampling: SamplingParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    sampling: SamplingParams,
    models: Vec<String>,
}

impl Library {
    pub fn entry(&self, model_id: &str) -> Option<&LibraryEntry> {
        self.entries.iter().find(|e| e.model_id == model_id)
    }

    /// Render one silhouette per sampled pose for every model. All models
    /// share one pose lattice, so a pose index means the same viewpoint in
    /// every entry.
    pub fn build(named_meshes: Vec<(String, TriangleMesh)>, sampling: SamplingParams) -> Result<Library> {
        if named_meshes.is_empty() {
            return Err(Error::InvalidInput("library needs at least one model".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, mesh) in &named_meshes {
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate model id {id:?}")));
            }
            if !mesh.watertight {
                return Err(Error::NotWatertight(format!(
                    "library model {id:?} is not watertight"
                )));
            }
        }
        let poses = sample_library_poses(sampling.pose_count, sampling.radius, sampling.resolution);
        let mut entries = Vec::with_capacity(named_meshes.len());
        for (model_id, mesh) in named_meshes {
            let mut masks = Vec::with_capacity(poses.len());
            for (index, pose) in poses.iter().enumerate() {
                let mask = mesh.render_silhouette(pose, sampling.resolution)?;
                if mask.is_empty() {
                    return Err(Error::EmptySilhouette(format!(
                        "model {model_id:?} produced an empty mask at pose {index} (object escaped the frustum)"
                    )));
                }
                masks.push(mask);
            }
            entries.push(LibraryEntry {
                model_id,
                mesh,
                poses: poses.clone(),
                masks,
            });
        }
        Ok(Library { entries, sampling })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let manifest = Manifest {
            format_version: LIBRARY_FORMAT_VERSION,
            sampling: self.sampling,
            models: self.entries.iter().map(|e| e.model_id.clone()).collect(),
        };
        let manifest_path = root.join("manifest.json");
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest)
                .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?,
        )
        .map_err(|e| Error::io(&manifest_path, e))?;
        for entry in &self.entries {
            let dir = root.join(&entry.model_id);
            let masks_dir = dir.join("masks");
            std::fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
            entry.mesh.save_obj(&dir.join("model.obj"))?;
            save_poses(&dir.join("poses.json"), &entry.poses)?;
            for (index, mask) in entry.masks.iter().enumerate() {
                save_mask_png(&masks_dir.join(format!("{index}.png")), mask)?;
            }
        }
        Ok(())
    }
}

/// Build a library from OBJ files; model ids are the file stems.
pub fn build_library(
    mesh_paths: &[std::path::PathBuf],
    pose_count: usize,
    radius: f64,
    resolution: usize,
) -> Result<Library> {
    let mut named = Vec::with_capacity(mesh_paths.len());
    for path in mesh_paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("bad mesh path {}", path.display())))?
            .to_string();
        named.push((id, load_mesh(path)?));
    }
    Library::build(
        named,
        SamplingParams {
            pose_count,
            radius,
            resolution,
        },
    )
}

pub fn load_library(root: &Path) -> Result<Library> {
    let manifest_path = root.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| Error::CorruptLibrary(format!("missing manifest {}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptLibrary(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != LIBRARY_FORMAT_VERSION {
        return Err(Error::CorruptLibrary(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let mut entries = Vec::with_capacity(manifest.models.len());
    for model_id in &manifest.models {
        let dir = root.join(model_id);
        let mesh = load_mesh(&dir.join("model.obj"))?;
        let poses = load_poses(&dir.join("poses.json"))?;
        if poses.len() != manifest.sampling.pose_count {
            return Err(Error::CorruptLibrary(format!(
                "{model_id}: manifest says {} poses but poses.json has {}",
                manifest.sampling.pose_count,
                poses.len()
            )));
        }
        let mut masks = Vec::with_capacity(poses.len());
        for index in 0..poses.len() {
            let mask_path = dir.join("masks").join(format!("{index}.png"));
            let mask = load_mask_png(&mask_path).map_err(|_| {
                Error::CorruptLibrary(format!("missing or unreadable mask {}", mask_path.display()))
            })?;
            if mask.width != manifest.sampling.resolution || mask.height != manifest.sampling.resolution
            {
                return Err(Error::CorruptLibrary(format!(
                    "{}: expected {}x{} mask",
                    mask_path.display(),
                    manifest.sampling.resolution,
                    manifest.sampling.resolution
                )));
            }
            if mask.is_empty() {
                return Err(Error::CorruptLibrary(format!(
                    "{}: empty mask",
                    mask_path.display()
                )));
            }
            masks.push(mask);
        }
        entries.push(LibraryEntry {
            model_id: model_id.clone(),
            mesh,
            poses,
            masks,
        });
    }
    Ok(Library {
        entries,
        sampling: manifest.sampling,
    })
}

/// Parametric watertight meshes so the pipeline can be exercised without
/// external data. Dimensions are pre-normalization; every generator returns
/// a mesh already normalized to unit extent.
pub mod shapes {
    use super::*;
    use crate::geom::Vec3;

    pub fn cuboid(wx: f64, wy: f64, wz: f64) -> TriangleMesh {
        let (x, y, z) = (wx / 2.0, wy / 2.0, wz / 2.0);
        let vertices = vec![
            Vec3::new(-x, -y, -z),
            Vec3::new(x, -y, -z),
            Vec3::new(x, y, -z),
            Vec3::new(-x, y, -z),
            Vec3::new(-x, -y, z),
            Vec3::new(x, -y, z),
            Vec3::new(x, y, z),
            Vec3::new(-x, y, z),
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriangleMesh::from_parts(vertices, triangles).expect("cuboid is valid")
    }

    /// Icosphere: subdivided icosahedron projected to a sphere.
    pub fn icosphere(subdivisions: usize) -> TriangleMesh {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices = vec![
            Vec3::new(-1.0, phi, 0.0),
            Vec3::new(1.0, phi, 0.0),
            Vec3::new(-1.0, -phi, 0.0),
            Vec3::new(1.0, -phi, 0.0),
            Vec3::new(0.0, -1.0, phi),
            Vec3::new(0.0, 1.0, phi),
            Vec3::new(0.0, -1.0, -phi),
            Vec3::new(0.0, 1.0, -phi),
            Vec3::new(phi, 0.0, -1.0),
            Vec3::new(phi, 0.0, 1.0),
            Vec3::new(-phi, 0.0, -1.0),
            Vec3::new(-phi, 0.0, 1.0),
        ];
        for v in vertices.iter_mut() {
            *v = v.normalized();
        }
        let mut triangles: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoints: std::collections::HashMap<(usize, usize), usize> =
                std::collections::HashMap::new();
            let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) * 0.5).normalized();
                    vertices.push(m);
                    vertices.len() - 1
                })
            };
            let mut next = Vec::with_capacity(triangles.len() * 4);
            for [a, b, c] in triangles {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            triangles = next;
        }
        TriangleMesh::from_parts(vertices, triangles).expect("icosphere is valid")
    }

    pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
        assert!(segments >= 3);
        let mut vertices = vec![
            Vec3::new(0.0, 0.0, -height / 2.0),
            Vec3::new(0.0, 0.0, height / 2.0),
        ];
        for k in 0..segments {
            let a = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), -height / 2.0));
        }
        for k in 0..segments {
            let a = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), height / 2.0));
        }
        let bottom = |k: usize| 2 + (k % segments);
        let top = |k: usize| 2 + segments + (k % segments);
        let mut triangles = Vec::new();
        for k in 0..segments {
            triangles.push([0, bottom(k + 1), bottom(k)]);
            triangles.push([1, top(k), top(k + 1)]);
            triangles.push([bottom(k), bottom(k + 1), top(k + 1)]);
            triangles.push([bottom(k), top(k + 1), top(k)]);
        }
        TriangleMesh::from_parts(vertices, triangles).expect("cylinder is valid")
    }

    pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> TriangleMesh {
        assert!(major_segments >= 3 && minor_segments >= 3);
        let mut vertices = Vec::with_capacity(major_segments * minor_segments);
        for i in 0..major_segments {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / major_segments as f64;
            for j in 0..minor_segments {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / minor_segments as f64;
                let ring = major + minor * phi.cos();
                vertices.push(Vec3::new(
                    ring * theta.cos(),
                    ring * theta.sin(),
                    minor * phi.sin(),
                ));
            }
        }
        let at = |i: usize, j: usize| (i % major_segments) * minor_segments + (j % minor_segments);
        let mut triangles = Vec::with_capacity(major_segments * minor_segments * 2);
        for i in 0..major_segments {
            for j in 0..minor_segments {
                triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
        TriangleMesh::from_parts(vertices, triangles).expect("torus is valid")
    }

    /// L-shaped prism. Unlike the symmetric primitives its silhouette pins
    /// down the viewing direction, which matters for pose-accuracy tests:
    /// centrally symmetric shapes render identical silhouettes from
    /// opposite views, so no silhouette matcher can tell those apart.
    pub fn l_bracket() -> TriangleMesh {
        // L cross-section in xy (fan-triangulated from the corner vertex),
        // extruded along z
        let profile = [
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 0.35),
            (0.35, 0.35),
            (0.35, 0.8),
            (0.0, 0.8),
        ];
        let h = 0.5;
        let n = profile.len();
        let mut vertices = Vec::with_capacity(2 * n);
        for &(x, y) in &profile {
            vertices.push(Vec3::new(x, y, 0.0));
        }
        for &(x, y) in &profile {
            vertices.push(Vec3::new(x, y, h));
        }
        let mut triangles = Vec::new();
        for k in 1..n - 1 {
            triangles.push([0, k + 1, k]); // bottom cap, wound downward
            triangles.push([n, n + k, n + k + 1]); // top cap, wound upward
        }
        for i in 0..n {
            let j = (i + 1) % n;
            triangles.push([i, j, n + j]);
            triangles.push([i, n + j, n + i]);
        }
        TriangleMesh::from_parts(vertices, triangles).expect("l-bracket is valid")
    }

    /// The default four-shape starter library.
    pub fn starter_meshes() -> Vec<(String, TriangleMesh)> {
        vec![
            ("cuboid".to_string(), cuboid(1.0, 0.75, 0.55)),
            ("cylinder".to_string(), cylinder(0.35, 1.0, 32)),
            ("sphere".to_string(), icosphere(3)),
            ("torus".to_string(), torus(0.35, 0.15, 32, 16)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sampling() -> SamplingParams {
        SamplingParams {
            pose_count: 12,
            radius: 2.0,
            resolution: 48,
        }
    }

    #[test]
    fn generated_shapes_are_watertight_and_unit_extent() {
        for (name, mesh) in shapes::starter_meshes() {
            assert!(mesh.watertight, "{name} not watertight");
            let (lo, hi) = mesh.bounding_box();
            let e = hi - lo;
            let max_extent = e.x.max(e.y).max(e.z);
            assert!((max_extent - 1.0).abs() < 1e-9, "{name} extent {max_extent}");
        }
    }

    #[test]
    fn cube_masks_are_filled_quadrilaterals() {
        let lib = Library::build(
            vec![("cuboid".into(), shapes::cuboid(1.0, 1.0, 1.0))],
            tiny_sampling(),
        )
        .unwrap();
        let entry = &lib.entries[0];
        assert_eq!(entry.masks.len(), 12);
        for mask in &entry.masks {
            assert!(!mask.is_empty());
            // convex object: every foreground row is a contiguous run
            let bbox = mask.bbox().unwrap();
            for y in bbox.y0..=bbox.y1 {
                let row: Vec<u8> = (0..mask.width).map(|x| mask.get(x, y)).collect();
                let first = row.iter().position(|&p| p == 1);
                let last = row.iter().rposition(|&p| p == 1);
                if let (Some(a), Some(b)) = (first, last) {
                    assert!(row[a..=b].iter().all(|&p| p == 1), "row {y} has holes");
                }
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = Library::build(shapes::starter_meshes(), tiny_sampling()).unwrap();
        let b = Library::build(shapes::starter_meshes(), tiny_sampling()).unwrap();
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.model_id, eb.model_id);
            for (ma, mb) in ea.masks.iter().zip(&eb.masks) {
                assert_eq!(ma.pixels, mb.pixels);
            }
            for (pa, pb) in ea.poses.iter().zip(&eb.poses) {
                assert_eq!(pa.camera_to_world().to_row_major(), pb.camera_to_world().to_row_major());
            }
        }
    }

    #[test]
    fn total_mask_count_scales_with_models_and_poses() {
        let lib = Library::build(
            vec![
                ("cuboid".into(), shapes::cuboid(1.0, 0.6, 0.4)),
                ("sphere".into(), shapes::icosphere(2)),
            ],
            tiny_sampling(),
        )
        .unwrap();
        let total: usize = lib.entries.iter().map(|e| e.masks.len()).sum();
        assert_eq!(total, 2 * 12);
    }

    #[test]
    fn non_watertight_model_is_rejected_by_id() {
        let mut mesh = shapes::cuboid(1.0, 1.0, 1.0);
        // knock out a face so validation fails
        let verts = mesh.vertices.clone();
        let mut tris = mesh.triangles.clone();
        tris.pop();
        mesh = match TriangleMesh::from_parts(verts, tris) {
            Ok(m) => m,
            Err(_) => return,
        };
        let err = Library::build(vec![("broken".into(), mesh)], tiny_sampling()).unwrap_err();
        match err {
            Error::NotWatertight(msg) => assert!(msg.contains("broken")),
            other => panic!("expected NotWatertight, got {other:?}"),
        }
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let lib = Library::build(
            vec![
                ("cuboid".into(), shapes::cuboid(1.0, 0.7, 0.5)),
                ("torus".into(), shapes::torus(0.35, 0.15, 16, 8)),
            ],
            tiny_sampling(),
        )
        .unwrap();
        let root = std::env::temp_dir().join("meshnerf_lib_roundtrip");
        std::fs::remove_dir_all(&root).ok();
        lib.save(&root).unwrap();
        let loaded = load_library(&root).unwrap();
        assert_eq!(loaded.entries.len(), lib.entries.len());
        assert_eq!(loaded.sampling, lib.sampling);
        for (a, b) in lib.entries.iter().zip(&loaded.entries) {
            assert_eq!(a.model_id, b.model_id);
            for (ma, mb) in a.masks.iter().zip(&b.masks) {
                assert_eq!(ma.pixels, mb.pixels, "mask pixels differ for {}", a.model_id);
            }
            for (pa, pb) in a.poses.iter().zip(&b.poses) {
                let ra = pa.camera_to_world().to_row_major();
                let rb = pb.camera_to_world().to_row_major();
                for (x, y) in ra.iter().zip(rb.iter()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        std::fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn missing_mask_is_reported_as_corrupt() {
        let lib = Library::build(
            vec![("cuboid".into(), shapes::cuboid(1.0, 1.0, 1.0))],
            tiny_sampling(),
        )
        .unwrap();
        let root = std::env::temp_dir().join("meshnerf_lib_missing_mask");
        std::fs::remove_dir_all(&root).ok();
        lib.save(&root).unwrap();
        let victim = root.join("cuboid/masks/3.png");
        std::fs::remove_file(&victim).unwrap();
        match load_library(&root) {
            Err(Error::CorruptLibrary(msg)) => assert!(msg.contains("3.png"), "message: {msg}"),
            other => panic!("expected corrupt library, got {other:?}"),
        }
        std::fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn pose_count_mismatch_is_reported_as_corrupt() {
        let lib = Library::build(
            vec![("cuboid".into(), shapes::cuboid(1.0, 1.0, 1.0))],
            tiny_sampling(),
        )
        .unwrap();
        let root = std::env::temp_dir().join("meshnerf_lib_pose_mismatch");
        std::fs::remove_dir_all(&root).ok();
        lib.save(&root).unwrap();
        // rewrite poses.json with one record dropped
        let pose_path = root.join("cuboid/poses.json");
        let mut poses = load_poses(&pose_path).unwrap();
        poses.pop();
        save_poses(&pose_path, &poses).unwrap();
        assert!(matches!(load_library(&root), Err(Error::CorruptLibrary(_))));
        std::fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn stored_masks_match_fresh_renders() {
        let lib = Library::build(
            vec![("cylinder".into(), shapes::cylinder(0.35, 1.0, 24))],
            tiny_sampling(),
        )
        .unwrap();
        let entry = &lib.entries[0];
        for (pose, mask) in entry.poses.iter().zip(&entry.masks) {
            let fresh = entry.mesh.render_silhouette(pose, lib.sampling.resolution).unwrap();
            assert_eq!(fresh.pixels, mask.pixels);
        }
    }
}
