//! Pinhole cameras, SE(3) pose updates, library pose sampling, ray
//! generation, and pose registration error after global alignment.

use crate::error::{Error, Result};
use crate::geom::{rotation_exp, svd3, Mat3, Mat4, Vec3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Camera-to-world pose with pinhole intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    /// Camera-to-world rotation. Camera axes: +x right, +y up, forward -z.
    pub rotation: Mat3,
    /// Camera center in world units.
    pub translation: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    /// Principal point in pixels.
    pub principal: (f64, f64),
    pub width: usize,
    pub height: usize,
}

/// Near/far ray bounds.
pub type Bounds = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, bounds: Bounds) -> Result<Ray> {
        let n = direction.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "ray direction norm {n} is not 1"
            )));
        }
        if bounds.0 >= bounds.1 {
            return Err(Error::InvalidInput(format!(
                "ray bounds ({}, {}) are not ordered",
                bounds.0, bounds.1
            )));
        }
        Ok(Ray {
            origin,
            direction,
            t_near: bounds.0,
            t_far: bounds.1,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Rigid correction applied on top of an initial pose: `P_opt = T * P_init`
/// with `T = (exp(axis_angle), delta_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseUpdate {
    pub axis_angle: Vec3,
    pub delta_t: Vec3,
}

impl PoseUpdate {
    pub fn validate(&self) -> Result<()> {
        if !self.axis_angle.is_finite() || !self.delta_t.is_finite() {
            return Err(Error::InvalidInput("pose update has non-finite entries".into()));
        }
        Ok(())
    }
}

impl CameraPose {
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        focal: f64,
        principal: (f64, f64),
        width: usize,
        height: usize,
    ) -> Result<CameraPose> {
        if rotation.rotation_residual() > 1e-9 {
            return Err(Error::InvalidInput(
                "camera rotation is not orthonormal with det +1".into(),
            ));
        }
        if focal <= 0.0 {
            return Err(Error::InvalidInput("focal length must be positive".into()));
        }
        Ok(CameraPose {
            rotation,
            translation,
            focal,
            principal,
            width,
            height,
        })
    }

    /// Pose centered at `center` looking at `target`, rolled so `up` points
    /// upward in the image; falls back to +x as up when degenerate.
    pub fn look_at(
        center: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<CameraPose> {
        let fwd = (target - center).normalized();
        let mut right = fwd.cross(up);
        if right.norm() < 1e-9 {
            right = fwd.cross(Vec3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalized();
        let true_up = right.cross(fwd);
        // columns map camera axes to world; forward is -z
        let rotation = Mat3::from_cols(right, true_up, -fwd);
        CameraPose::new(
            rotation,
            center,
            focal,
            (width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
        )
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.mul_vec(Vec3::new(0.0, 0.0, -1.0))
    }

    pub fn camera_to_world(&self) -> Mat4 {
        Mat4::from_rotation_translation(&self.rotation, self.translation)
    }

    pub fn from_camera_to_world(
        mat: &Mat4,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<CameraPose> {
        CameraPose::new(
            mat.rotation(),
            mat.translation(),
            focal,
            (width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
        )
    }

    /// Unit world-space direction through continuous image position (u, v).
    /// v grows downward in the image; camera y grows upward.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        let cam = Vec3::new(
            (u - self.principal.0) / self.focal,
            (self.principal.1 - v) / self.focal,
            -1.0,
        );
        self.rotation.mul_vec(cam).normalized()
    }

    /// Ray through the center of pixel (ix, iy).
    pub fn pixel_center_ray(&self, ix: usize, iy: usize, bounds: Bounds) -> Ray {
        let dir = self.pixel_direction(ix as f64 + 0.5, iy as f64 + 0.5);
        Ray {
            origin: self.translation,
            direction: dir,
            t_near: bounds.0,
            t_far: bounds.1,
        }
    }

    /// Same viewpoint and field of view on a different image grid: the
    /// focal length scales with the width ratio and the principal point
    /// recenters. Library poses are adapted this way to each input image.
    pub fn with_resolution(&self, width: usize, height: usize) -> CameraPose {
        let scale = width as f64 / self.width as f64;
        CameraPose {
            rotation: self.rotation,
            translation: self.translation,
            focal: self.focal * scale,
            principal: (width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
        }
    }

    /// Azimuth/elevation of the camera center, the library pose sort key.
    pub fn center_azimuth_elevation(&self) -> (f64, f64) {
        let c = self.translation;
        let azimuth = c.y.atan2(c.x);
        let r = c.norm();
        let elevation = if r > 0.0 { (c.z / r).asin() } else { 0.0 };
        (azimuth, elevation)
    }
}

/// One ray per requested continuous pixel position.
pub fn generate_rays(pose: &CameraPose, pixels: &[(f64, f64)], bounds: Bounds) -> Vec<Ray> {
    pixels
        .iter()
        .map(|&(u, v)| Ray {
            origin: pose.translation,
            direction: pose.pixel_direction(u, v),
            t_near: bounds.0,
            t_far: bounds.1,
        })
        .collect()
}

/// Focal length that makes a unit-extent object span roughly 80% of the
/// image when viewed from `radius`.
pub fn library_focal(resolution: usize, radius: f64) -> f64 {
    0.8 * resolution as f64 * radius / 3f64.sqrt()
}

/// `count` poses on a Fibonacci lattice over the sphere of `radius`, each
/// looking at the origin, sorted by (azimuth, elevation) of the center.
/// The position in the returned list is the library pose index.
pub fn sample_library_poses(count: usize, radius: f64, resolution: usize) -> Vec<CameraPose> {
    assert!(count >= 1, "pose count must be at least 1");
    assert!(radius > 0.0, "radius must be positive");
    let golden_angle = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let focal = library_focal(resolution, radius);
    let mut poses: Vec<CameraPose> = (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let ring = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * k as f64;
            let center = Vec3::new(ring * phi.cos(), ring * phi.sin(), z) * radius;
            CameraPose::look_at(
                center,
                Vec3::ZERO,
                Vec3::new(0.0, 0.0, 1.0),
                focal,
                resolution,
                resolution,
            )
            .expect("lattice look-at is always valid")
        })
        .collect();
    poses.sort_by(|a, b| {
        let ka = a.center_azimuth_elevation();
        let kb = b.center_azimuth_elevation();
        ka.partial_cmp(&kb).expect("finite sort keys")
    });
    poses
}

/// `P_opt = T * P_init` on camera-to-world matrices.
pub fn apply_pose_update(update: &PoseUpdate, init: &CameraPose) -> Result<CameraPose> {
    update.validate()?;
    let t = Mat4::from_rotation_translation(&rotation_exp(update.axis_angle), update.delta_t);
    let opt = t.mul_mat(&init.camera_to_world());
    let mut pose = init.clone();
    pose.rotation = opt.rotation();
    pose.translation = opt.translation();
    if pose.rotation.rotation_residual() > 1e-9 {
        return Err(Error::InvalidInput(
            "pose update produced a non-orthonormal rotation".into(),
        ));
    }
    Ok(pose)
}

/// Mean geodesic rotation error (degrees) and mean camera-center distance
/// (x100) after aligning `estimated` to `reference` with a similarity
/// transform fitted on camera centers.
pub fn pose_registration_error(
    estimated: &[CameraPose],
    reference: &[CameraPose],
) -> Result<(f64, f64)> {
    if estimated.len() != reference.len() || estimated.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pose sets must have equal lengths >= 2 (got {} and {})",
            estimated.len(),
            reference.len()
        )));
    }
    let n = estimated.len();
    let mean = |poses: &[CameraPose]| {
        poses
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + p.translation)
            / n as f64
    };
    let mu_e = mean(estimated);
    let mu_r = mean(reference);

    // cross-covariance of centered reference vs centered estimate
    let mut cov = Mat3 { m: [[0.0; 3]; 3] };
    let mut var_e = 0.0;
    for (e, r) in estimated.iter().zip(reference) {
        let ec = e.translation - mu_e;
        let rc = r.translation - mu_r;
        for i in 0..3 {
            for j in 0..3 {
                cov.m[i][j] += rc.component(i) * ec.component(j) / n as f64;
            }
        }
        var_e += ec.dot(ec) / n as f64;
    }

    let (u, s, v) = svd3(&cov);
    // collinear or coincident centers leave the rotation under-determined
    if s[1] <= 1e-6 * s[0].max(1e-300) || s[0] <= 1e-12 {
        return Err(Error::AlignmentIllConditioned(
            "camera centers are collinear or coincident".into(),
        ));
    }
    let flip = u.det() * v.det();
    let d = Mat3 {
        m: [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, if flip < 0.0 { -1.0 } else { 1.0 }],
        ],
    };
    let r_align = u.mul_mat(&d).mul_mat(&v.transpose());
    let scale = (s[0] + s[1] + if flip < 0.0 { -s[2] } else { s[2] }) / var_e;

    let mut rot_sum = 0.0;
    let mut trans_sum = 0.0;
    for (e, r) in estimated.iter().zip(reference) {
        let aligned_center = r_align.mul_vec(e.translation - mu_e) * scale + mu_r;
        trans_sum += (aligned_center - r.translation).norm();
        let aligned_rot = r_align.mul_mat(&e.rotation);
        rot_sum += aligned_rot.geodesic_angle(&r.rotation).to_degrees();
    }
    Ok((rot_sum / n as f64, trans_sum / n as f64 * 100.0))
}

/// Serialized pose record (`poses.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRecord {
    pub index: usize,
    /// Row-major 4x4 camera-to-world matrix.
    pub camera_to_world: Vec<f64>,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl PoseRecord {
    pub fn from_pose(index: usize, pose: &CameraPose) -> PoseRecord {
        PoseRecord {
            index,
            camera_to_world: pose.camera_to_world().to_row_major().to_vec(),
            focal: pose.focal,
            width: pose.width,
            height: pose.height,
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose> {
        if self.camera_to_world.len() != 16 {
            return Err(Error::InvalidInput(
                "camera_to_world must have 16 entries".into(),
            ));
        }
        let mut m = [0.0; 16];
        m.copy_from_slice(&self.camera_to_world);
        CameraPose::from_camera_to_world(&Mat4::from_row_major(&m), self.focal, self.width, self.height)
    }
}

pub fn save_poses(path: &Path, poses: &[CameraPose]) -> Result<()> {
    let records: Vec<PoseRecord> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| PoseRecord::from_pose(i, p))
        .collect();
    let text = serde_json::to_string_pretty(&records)
        .map_err(|e| Error::InvalidInput(format!("pose serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_poses(path: &Path) -> Result<Vec<CameraPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<PoseRecord> = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    records.iter().map(|r| r.to_pose()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_pose(rng: &mut Rng) -> CameraPose {
        let center = rng.unit_vector() * rng.uniform(1.5, 3.0);
        CameraPose::look_at(center, Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 100.0, 64, 64).unwrap()
    }

    #[test]
    fn look_at_points_toward_target() {
        let poses = sample_library_poses(25, 2.0, 64);
        for p in &poses {
            let fwd = p.forward();
            let expected = (Vec3::ZERO - p.translation).normalized();
            assert!((fwd - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn single_library_pose_is_valid() {
        let poses = sample_library_poses(1, 2.0, 64);
        assert_eq!(poses.len(), 1);
        assert!((poses[0].translation.norm() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn library_lattice_radius_and_separation() {
        let poses = sample_library_poses(100, 2.0, 64);
        assert_eq!(poses.len(), 100);
        for p in &poses {
            assert!((p.translation.norm() - 2.0).abs() < 1e-9);
        }
        let mut min_angle = f64::MAX;
        for i in 0..poses.len() {
            for j in i + 1..poses.len() {
                let a = poses[i].translation.normalized();
                let b = poses[j].translation.normalized();
                let angle = a.dot(b).clamp(-1.0, 1.0).acos().to_degrees();
                min_angle = min_angle.min(angle);
            }
        }
        assert!(min_angle >= 12.0, "min pairwise separation {min_angle}");
    }

    #[test]
    fn poses_sorted_by_azimuth_then_elevation() {
        let poses = sample_library_poses(50, 2.0, 64);
        let keys: Vec<(f64, f64)> = poses.iter().map(|p| p.center_azimuth_elevation()).collect();
        for w in keys.windows(2) {
            assert!(w[0] <= w[1], "pose order violated: {:?} > {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn principal_point_ray_is_forward() {
        let pose = CameraPose::look_at(
            Vec3::new(0.0, -2.0, 0.0),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
            80.0,
            64,
            64,
        )
        .unwrap();
        let dir = pose.pixel_direction(32.0, 32.0);
        assert!((dir - pose.forward()).norm() < 1e-12);
    }

    #[test]
    fn symmetric_pixels_give_symmetric_directions() {
        let pose = CameraPose::look_at(
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
            80.0,
            64,
            64,
        )
        .unwrap();
        let fwd = pose.forward();
        let a = pose.pixel_direction(32.0 + 7.0, 32.0 + 3.0);
        let b = pose.pixel_direction(32.0 - 7.0, 32.0 - 3.0);
        // mirrored pixels make equal angles with the optical axis
        assert!((a.dot(fwd) - b.dot(fwd)).abs() < 1e-12);
        // and their sum lies along the axis
        let sum = (a + b).normalized();
        assert!((sum - fwd).norm() < 1e-9);
    }

    #[test]
    fn full_frame_rays_stay_in_frustum() {
        let pose = CameraPose::look_at(
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
            70.0,
            64,
            64,
        )
        .unwrap();
        let mut pixels = Vec::new();
        for y in 0..64 {
            for x in 0..64 {
                pixels.push((x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        let rays = generate_rays(&pose, &pixels, (1.0, 3.0));
        assert_eq!(rays.len(), 4096);
        let half_angle = (32.0 / 70.0f64).atan() * 2f64.sqrt();
        let fwd = pose.forward();
        for r in &rays {
            assert!((r.direction.norm() - 1.0).abs() < 1e-12);
            let angle = r.direction.dot(fwd).clamp(-1.0, 1.0).acos();
            assert!(angle <= half_angle + 1e-9);
        }
    }

    #[test]
    fn zero_update_is_identity() {
        let mut rng = Rng::seeded(2);
        let pose = random_pose(&mut rng);
        let updated = apply_pose_update(&PoseUpdate::default(), &pose).unwrap();
        assert_eq!(updated.rotation, pose.rotation);
        assert_eq!(updated.translation, pose.translation);
    }

    #[test]
    fn quarter_turn_update_about_z() {
        let pose = CameraPose::new(
            Mat3::IDENTITY,
            Vec3::ZERO,
            50.0,
            (32.0, 32.0),
            64,
            64,
        )
        .unwrap();
        let update = PoseUpdate {
            axis_angle: Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            delta_t: Vec3::ZERO,
        };
        let opt = apply_pose_update(&update, &pose).unwrap();
        // camera x-axis (first rotation column) maps to world y
        let x_axis = opt.rotation.col(0);
        assert!((x_axis - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn update_matches_homogeneous_product() {
        let mut rng = Rng::seeded(8);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let update = PoseUpdate {
                axis_angle: rng.unit_vector() * rng.uniform(0.0, 2.0),
                delta_t: rng.unit_vector() * rng.uniform(0.0, 1.0),
            };
            let opt = apply_pose_update(&update, &pose).unwrap();
            let t = Mat4::from_rotation_translation(
                &rotation_exp(update.axis_angle),
                update.delta_t,
            );
            let expected = t.mul_mat(&pose.camera_to_world());
            let got = opt.camera_to_world();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((expected.m[i][j] - got.m[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn update_composition_matches_single_transform() {
        let mut rng = Rng::seeded(13);
        let pose = random_pose(&mut rng);
        let u1 = PoseUpdate {
            axis_angle: rng.unit_vector() * 0.3,
            delta_t: rng.unit_vector() * 0.2,
        };
        let u2 = PoseUpdate {
            axis_angle: rng.unit_vector() * 0.4,
            delta_t: rng.unit_vector() * 0.1,
        };
        let two_step = apply_pose_update(&u2, &apply_pose_update(&u1, &pose).unwrap()).unwrap();
        let t1 = Mat4::from_rotation_translation(&rotation_exp(u1.axis_angle), u1.delta_t);
        let t2 = Mat4::from_rotation_translation(&rotation_exp(u2.axis_angle), u2.delta_t);
        let combined = t2.mul_mat(&t1).mul_mat(&pose.camera_to_world());
        let got = two_step.camera_to_world();
        for i in 0..4 {
            for j in 0..4 {
                assert!((combined.m[i][j] - got.m[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn registration_error_zero_for_identical_sets() {
        let poses = sample_library_poses(8, 2.0, 64);
        let (rot, trans) = pose_registration_error(&poses, &poses).unwrap();
        assert!(rot.abs() < 1e-9);
        assert!(trans.abs() < 1e-9);
    }

    #[test]
    fn registration_error_invariant_to_global_rigid_motion() {
        let reference = sample_library_poses(10, 2.0, 64);
        let gauge = PoseUpdate {
            axis_angle: Vec3::new(0.1, -0.2, 0.15).normalized() * 10f64.to_radians(),
            delta_t: Vec3::new(0.3, -0.1, 0.2),
        };
        let estimated: Vec<CameraPose> = reference
            .iter()
            .map(|p| apply_pose_update(&gauge, p).unwrap())
            .collect();
        let (rot, trans) = pose_registration_error(&estimated, &reference).unwrap();
        assert!(rot < 1e-6, "rotation error {rot}");
        assert!(trans < 1e-6, "translation error {trans}");
    }

    #[test]
    fn independent_perturbations_survive_alignment() {
        let mut rng = Rng::seeded(21);
        let reference = sample_library_poses(40, 2.0, 64);
        let estimated: Vec<CameraPose> = reference
            .iter()
            .map(|p| {
                let axis = rng.unit_vector();
                let update = PoseUpdate {
                    axis_angle: axis * 5f64.to_radians(),
                    delta_t: Vec3::ZERO,
                };
                // rotate orientation in place, keeping the center fixed
                let mut q = p.clone();
                q.rotation = rotation_exp(update.axis_angle).mul_mat(&p.rotation);
                q
            })
            .collect();
        let (rot, _trans) = pose_registration_error(&estimated, &reference).unwrap();
        assert!((rot - 5.0).abs() <= 0.1, "mean rotation error {rot}");
    }

    #[test]
    fn collinear_centers_are_rejected() {
        let make = |x: f64| {
            CameraPose::look_at(
                Vec3::new(x, 0.0, 2.0),
                Vec3::new(x, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                50.0,
                64,
                64,
            )
            .unwrap()
        };
        let poses: Vec<CameraPose> = (0..4).map(|i| make(i as f64)).collect();
        assert!(matches!(
            pose_registration_error(&poses, &poses),
            Err(Error::AlignmentIllConditioned(_))
        ));
    }

    #[test]
    fn pose_json_roundtrip() {
        let poses = sample_library_poses(5, 2.0, 64);
        let dir = std::env::temp_dir().join("meshnerf_pose_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("poses.json");
        save_poses(&path, &poses).unwrap();
        let loaded = load_poses(&path).unwrap();
        assert_eq!(loaded.len(), poses.len());
        for (a, b) in poses.iter().zip(&loaded) {
            let ma = a.camera_to_world().to_row_major();
            let mb = b.camera_to_world().to_row_major();
            for (x, y) in ma.iter().zip(mb.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
