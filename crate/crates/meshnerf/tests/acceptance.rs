//! Acceptance suite: one test per pipeline-level criterion, each printing a
//! PASS line with its measured numbers. The heavy end-to-end desk run is
//! shared between criteria through a `OnceLock`.

use meshnerf::autodiff::{Graph, Matrix, ParamStore};
use meshnerf::camera::{
    apply_pose_update, pose_registration_error, sample_library_poses, CameraPose, PoseUpdate, Ray,
};
use meshnerf::fields::{EncodingConfig, FieldParams};
use meshnerf::geom::Vec3;
use meshnerf::img::ImageRgb;
use meshnerf::library::{shapes, Library, SamplingParams};
use meshnerf::mask::MaskRaster;
use meshnerf::mesh::{parity_directions, OccupancyQuery, TriangleMesh};
use meshnerf::metrics::{average_metric, psnr};
use meshnerf::render::{
    loss_color_tape, loss_total_tape, pose_rays_tape, render_image, render_rays,
    render_rays_tape, sample_along_rays, sample_quadrature, FieldEval, NetField, RenderConfig,
};
use meshnerf::retrieval::{backtrack_assign, retrieve, CandidateTable};
use meshnerf::rng::Rng;
use meshnerf::synthetic::{render_facet_scene, views_at_library_poses};
use meshnerf::trainer::{
    phase1_pretrain, refine_poses_only, run_full, RunReport, TrainConfig, TrainState, TrainView,
};
use std::sync::OnceLock;
use std::time::Instant;

// ---------------------------------------------------------------------------
// shared desk-scale end-to-end run (criteria 6, 8, 10)

struct ToyScene {
    library: Library,
    views: Vec<TrainView>,
    heldout: Vec<(CameraPose, ImageRgb)>,
}

struct ToyRun {
    out_dir: std::path::PathBuf,
    state: TrainState,
    report: RunReport,
    train_psnr_mean: f64,
    heldout_psnr_mean: f64,
    runtime: std::time::Duration,
}

/// Nearest library pose to a target azimuth/elevation (degrees).
fn nearest_pose_index(poses: &[CameraPose], az_deg: f64, el_deg: f64) -> usize {
    let mut best = (0usize, f64::MAX);
    for (i, p) in poses.iter().enumerate() {
        let (az, el) = p.center_azimuth_elevation();
        let mut da = (az.to_degrees() - az_deg).rem_euclid(360.0);
        da = da.min(360.0 - da);
        let de = el.to_degrees() - el_deg;
        let d = da * da + de * de;
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn toy_scene() -> &'static ToyScene {
    static SCENE: OnceLock<ToyScene> = OnceLock::new();
    SCENE.get_or_init(|| {
        let library = Library::build(
            shapes::starter_meshes(),
            SamplingParams {
                pose_count: 100,
                radius: 2.0,
                resolution: 128,
            },
        )
        .expect("library build");
        let entry = library.entry("cuboid").expect("cuboid in library");
        let scene_poses = sample_library_poses(100, 2.0, 64);
        // training views about 55 degrees apart; held-out views interpolate
        let train_indices = [
            nearest_pose_index(&scene_poses, -55.0, 18.0),
            nearest_pose_index(&scene_poses, 0.0, 30.0),
            nearest_pose_index(&scene_poses, 55.0, 15.0),
        ];
        assert!(
            train_indices.windows(2).all(|w| w[0] < w[1]),
            "training views must arrive in pose-index order"
        );
        let heldout_indices = [
            nearest_pose_index(&scene_poses, -27.0, 22.0),
            nearest_pose_index(&scene_poses, 28.0, 25.0),
        ];
        let views = views_at_library_poses(&entry.mesh, &scene_poses, &train_indices);
        let heldout = heldout_indices
            .iter()
            .map(|&i| {
                let (image, _) = render_facet_scene(&entry.mesh, &scene_poses[i]);
                (scene_poses[i].clone(), image)
            })
            .collect();
        ToyScene {
            library,
            views,
            heldout,
        }
    })
}

fn heldout_psnr_mean(state: &TrainState, heldout: &[(CameraPose, ImageRgb)]) -> f64 {
    let total: f64 = heldout
        .iter()
        .map(|(pose, gt)| psnr(&state.render_view(pose), gt).expect("psnr"))
        .sum();
    total / heldout.len() as f64
}

fn run_toy(config: &TrainConfig, tag: &str) -> ToyRun {
    let scene = toy_scene();
    let out_dir = std::env::temp_dir().join(format!("meshnerf_acceptance_{tag}"));
    std::fs::remove_dir_all(&out_dir).ok();
    let start = Instant::now();
    let (state, report) = run_full(&scene.views, &scene.library, config, &out_dir).expect("run_full");
    let runtime = start.elapsed();
    let train_psnr_mean =
        report.train_rows.iter().map(|r| r.psnr).sum::<f64>() / report.train_rows.len() as f64;
    let heldout_psnr_mean = heldout_psnr_mean(&state, &scene.heldout);
    ToyRun {
        out_dir,
        state,
        report,
        train_psnr_mean,
        heldout_psnr_mean,
        runtime,
    }
}

fn toy_run_full_model() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| run_toy(&TrainConfig::desk_preset(), "full"))
}

// ---------------------------------------------------------------------------
// criterion 1: backtracking optimality against exhaustive enumeration

/// Independent oracle: iterative odometer over every selection (each view
/// picks one candidate or skips), checking the order constraint directly.
fn enumerate_best_score(table: &CandidateTable) -> f64 {
    let n = table.views.len();
    let mut choice = vec![0usize; n]; // candidates.len() means "skip"
    let mut best = 0.0_f64;
    loop {
        let mut last: Option<usize> = None;
        let mut score = 0.0;
        let mut valid = true;
        let mut any = false;
        for (v, &c) in choice.iter().enumerate() {
            if c == table.views[v].len() {
                continue; // skipped view
            }
            let (index, iou) = table.views[v][c];
            if last.is_some_and(|l| index <= l) {
                valid = false;
                break;
            }
            last = Some(index);
            score += iou;
            any = true;
        }
        if valid && any && score > best {
            best = score;
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            choice[pos] += 1;
            if choice[pos] <= table.views[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

#[test]
fn criterion_1_backtracking_matches_exhaustive_oracle() {
    let start = Instant::now();
    let mut rng = Rng::seeded(0xACC1);
    for case in 0..200 {
        let n_views = 3 + rng.below(4);
        let views: Vec<Vec<(usize, f64)>> = (0..n_views)
            .map(|_| {
                let n_cand = 5 + rng.below(6);
                let mut seen = std::collections::BTreeSet::new();
                let mut cand: Vec<(usize, f64)> = (0..n_cand)
                    .filter_map(|_| {
                        let index = rng.below(40);
                        seen.insert(index).then(|| (index, 0.01 + 0.99 * rng.unit()))
                    })
                    .collect();
                cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                cand
            })
            .collect();
        let table = CandidateTable { views };
        let got = backtrack_assign(&table).expect("assignable").total_score;
        let want = enumerate_best_score(&table);
        assert_eq!(got, want, "case {case}: scores must be bit-equal");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 1: PASS — 200/200 bit-equal optima in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// criterion 2: parity occupancy against analytic membership

/// Signed-solid-angle winding number; an oracle with no ray casting at all.
fn winding_number_inside(mesh: &TriangleMesh, p: Vec3) -> bool {
    let mut total = 0.0;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0]] - p;
        let b = mesh.vertices[t[1]] - p;
        let c = mesh.vertices[t[2]] - p;
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let det = a.dot(b.cross(c));
        let denom = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += 2.0 * det.atan2(denom);
    }
    total.abs() > 2.0 * std::f64::consts::PI
}

#[test]
fn criterion_2_occupancy_matches_analytic_membership() {
    let start = Instant::now();
    let cube = shapes::cuboid(1.0, 1.0, 1.0);
    let sphere = shapes::icosphere(3);
    let torus = shapes::torus(0.35, 0.15, 32, 16);

    // outward-consistent convex-plane test for the icosphere
    let sphere_centroid = sphere
        .vertices
        .iter()
        .fold(Vec3::ZERO, |acc, &v| acc + v)
        / sphere.vertices.len() as f64;
    let sphere_planes: Vec<(Vec3, Vec3)> = sphere
        .triangles
        .iter()
        .map(|t| {
            let v0 = sphere.vertices[t[0]];
            let mut n = (sphere.vertices[t[1]] - v0).cross(sphere.vertices[t[2]] - v0);
            if n.dot(v0 - sphere_centroid) < 0.0 {
                n = -n;
            }
            (n.normalized(), v0)
        })
        .collect();

    let meshes: [(&str, &TriangleMesh, Box<dyn Fn(Vec3) -> bool>); 3] = [
        (
            "cube",
            &cube,
            Box::new(|p: Vec3| p.x.abs() < 0.5 && p.y.abs() < 0.5 && p.z.abs() < 0.5),
        ),
        (
            "icosphere",
            &sphere,
            Box::new(move |p: Vec3| sphere_planes.iter().all(|&(n, v0)| n.dot(p - v0) < 0.0)),
        ),
        (
            "torus",
            &torus,
            Box::new(|p: Vec3| winding_number_inside(&shapes::torus(0.35, 0.15, 32, 16), p)),
        ),
    ];

    let directions = parity_directions(2024);
    for (name, mesh, oracle) in &meshes {
        let mut rng = Rng::seeded(0xACC2);
        let mut checked = 0usize;
        let mut agreement = 0usize;
        while checked < 10_000 {
            let p = Vec3::new(
                rng.uniform(-0.6, 0.6),
                rng.uniform(-0.6, 0.6),
                rng.uniform(-0.6, 0.6),
            );
            if mesh.surface_distance(p) < 1e-5 {
                continue; // excluded surface band
            }
            let query = OccupancyQuery::new(p, directions.clone()).unwrap();
            let got = mesh.occupancy(&query).expect("non-surface point") == 1;
            let want = oracle(p);
            checked += 1;
            if got == want {
                agreement += 1;
            } else {
                panic!("{name}: disagreement at {p:?}");
            }
        }
        assert_eq!(agreement, checked, "{name}: {agreement}/{checked}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("criterion 2: PASS — 3 x 10,000/10,000 agreement in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// criterion 3: analytic volume rendering

struct ConstField {
    sigma: f64,
    rgb: [f64; 3],
}

impl FieldEval for ConstField {
    fn eval(&self, points: &Matrix, _dirs: &Matrix) -> (Matrix, Matrix) {
        let n = points.rows;
        let sigma = Matrix::from_vec(n, 1, vec![self.sigma; n]);
        let mut rgb = Matrix::zeros(n, 3);
        for r in 0..n {
            rgb.row_mut(r).copy_from_slice(&self.rgb);
        }
        (sigma, rgb)
    }
}

#[test]
fn criterion_3_analytic_slab_and_empty_field() {
    let len = std::f64::consts::LN_2;
    let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), (0.0, len)).unwrap();
    let config = RenderConfig {
        n_samples: 256,
        bounds: (0.0, len),
        density_scale: 1.0,
    };
    let batch = sample_along_rays(&[ray], 256, false, 0);
    let slab = render_rays(
        &batch,
        &ConstField {
            sigma: 1.0,
            rgb: [1.0, 1.0, 1.0],
        },
        &config,
    );
    let mut worst: f64 = 0.0;
    for c in slab.color[0] {
        worst = worst.max((c - 0.5).abs());
    }
    assert!(worst < 1e-3, "slab deviation {worst}");

    let empty = render_rays(
        &batch,
        &ConstField {
            sigma: 0.0,
            rgb: [1.0, 1.0, 1.0],
        },
        &config,
    );
    assert_eq!(empty.color[0], [0.0, 0.0, 0.0]);
    assert_eq!(empty.opacity[0], 0.0);
    println!("criterion 3: PASS — slab within {worst:.2e} of 0.5; empty field exactly black");
}

// ---------------------------------------------------------------------------
// criterion 4: end-to-end gradients vs central finite differences

#[test]
fn criterion_4_end_to_end_gradient_check() {
    let mut store = ParamStore::new();
    let encoding = EncodingConfig::full(4, 2);
    let fields = FieldParams::new(&mut store, &encoding, 20, 2024);
    let config = RenderConfig {
        n_samples: 10,
        bounds: (1.0, 3.0),
        density_scale: 25.0,
    };
    let init_pose = CameraPose::look_at(
        Vec3::new(0.3, -2.0, 0.5),
        Vec3::ZERO,
        Vec3::new(0.0, 0.0, 1.0),
        24.0,
        24,
        24,
    )
    .unwrap();
    let aa = store.add(
        "pose.aa",
        Matrix::row_vector(&[0.03, -0.02, 0.05]),
        meshnerf::autodiff::ParamGroup::Poses,
    );
    let dt = store.add(
        "pose.dt",
        Matrix::row_vector(&[0.01, 0.02, -0.015]),
        meshnerf::autodiff::ParamGroup::Poses,
    );
    let pixels: Vec<(f64, f64)> = (0..5).map(|i| (8.0 + 2.0 * i as f64, 11.5)).collect();
    let quad = sample_quadrature(pixels.len(), config.n_samples, config.bounds, true, 77);
    let target = Matrix::from_vec(pixels.len(), 3, vec![0.7; pixels.len() * 3]);

    let loss_of = |store: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let (origin, dirs) = pose_rays_tape(&mut g, store, aa, dt, &init_pose, &pixels).unwrap();
        let out = render_rays_tape(
            &mut g, store, &fields, origin, dirs, &quad, &config, &encoding, true,
        )
        .unwrap();
        let l_color = loss_color_tape(&mut g, out.color, &target).unwrap();
        let (l_off, l_corr) = meshnerf::render::loss_regularizers_tape(
            &mut g,
            out.offsets.unwrap(),
            out.corrections.unwrap(),
        )
        .unwrap();
        let total = loss_total_tape(&mut g, l_color, l_off, l_corr, 10.0, 0.1).unwrap();
        g.scalar_value(total)
    };

    // analytic gradients
    {
        let mut g = Graph::new();
        let (origin, dirs) =
            pose_rays_tape(&mut g, &store, aa, dt, &init_pose, &pixels).unwrap();
        let out = render_rays_tape(
            &mut g, &store, &fields, origin, dirs, &quad, &config, &encoding, true,
        )
        .unwrap();
        let l_color = loss_color_tape(&mut g, out.color, &target).unwrap();
        let (l_off, l_corr) = meshnerf::render::loss_regularizers_tape(
            &mut g,
            out.offsets.unwrap(),
            out.corrections.unwrap(),
        )
        .unwrap();
        let total = loss_total_tape(&mut g, l_color, l_off, l_corr, 10.0, 0.1).unwrap();
        store.zero_grads();
        g.backward(total, &mut store).unwrap();
    }

    // 100 coordinates spanning all three networks plus the pose update;
    // points whose two-step finite differences disagree sit on relu kinks
    // and are resampled
    let mut groups: Vec<Vec<usize>> = vec![
        fields.density_param_ids(),
        fields.deform_param_ids(),
        fields.color_param_ids(),
        vec![aa, dt],
    ];
    let mut rng = Rng::seeded(4242);
    let mut checked = 0usize;
    let mut rejected = 0usize;
    let mut worst_rel: f64 = 0.0;
    let h = 1e-5;
    while checked < 100 {
        let group = &mut groups[checked % 4];
        let pid = group[rng.below(group.len())];
        let len = store.params[pid].value.data.len();
        let idx = rng.below(len);
        let analytic = store.params[pid].grad.data[idx];
        let orig = store.params[pid].value.data[idx];
        let fd_at = |store: &mut ParamStore, step: f64| {
            store.params[pid].value.data[idx] = orig + step;
            let up = loss_of(store);
            store.params[pid].value.data[idx] = orig - step;
            let down = loss_of(store);
            store.params[pid].value.data[idx] = orig;
            (up - down) / (2.0 * step)
        };
        let fd1 = fd_at(&mut store, h);
        let fd2 = fd_at(&mut store, 2.0 * h);
        let fd_consistency = (fd1 - fd2).abs() / fd1.abs().max(fd2.abs()).max(1e-8);
        if fd_consistency > 1e-4 {
            // non-smooth point (relu kink crossed within the stencil)
            rejected += 1;
            assert!(rejected < 200, "too many kink rejections");
            continue;
        }
        if fd1.abs() < 1e-12 && analytic.abs() < 1e-12 {
            checked += 1;
            continue;
        }
        let rel = (fd1 - analytic).abs() / fd1.abs().max(analytic.abs()).max(1e-10);
        assert!(
            rel < 1e-3,
            "param {} [{idx}]: fd {fd1} vs analytic {analytic} (rel {rel})",
            store.params[pid].name
        );
        worst_rel = worst_rel.max(rel);
        checked += 1;
    }
    println!(
        "criterion 4: PASS — 100 coordinates, worst relative error {worst_rel:.2e} ({rejected} kink rejections)"
    );
}

// ---------------------------------------------------------------------------
// criterion 5: self-retrieval pose accuracy

#[test]
fn criterion_5_self_retrieval_accuracy() {
    let start = Instant::now();
    // pose accuracy needs an orientation-distinctive model; the symmetric
    // primitives render identical silhouettes from opposite views
    let mut named = shapes::starter_meshes();
    named.push(("wedge".into(), shapes::l_bracket()));
    let library = Library::build(
        named,
        SamplingParams {
            pose_count: 100,
            radius: 2.0,
            resolution: 128,
        },
    )
    .expect("library build");
    let entry = library.entry("wedge").unwrap();

    let mut rng = Rng::seeded(0xACC5);
    let mut centers: Vec<Vec3> = (0..20).map(|_| rng.unit_vector() * 2.0).collect();
    centers.sort_by(|a, b| {
        (a.y.atan2(a.x), a.z)
            .partial_cmp(&(b.y.atan2(b.x), b.z))
            .unwrap()
    });
    let focal = meshnerf::camera::library_focal(128, 2.0);
    let true_poses: Vec<CameraPose> = centers
        .iter()
        .map(|&c| CameraPose::look_at(c, Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), focal, 128, 128).unwrap())
        .collect();
    let inputs: Vec<MaskRaster> = true_poses
        .iter()
        .map(|p| entry.mesh.render_silhouette(p, 128).unwrap())
        .collect();

    // per-view model pick: 20 independent single-view retrievals
    let mut model_hits = 0;
    for mask in &inputs {
        let single = retrieve(std::slice::from_ref(mask), &library, 10, 0).expect("single view");
        if single.model_id == "wedge" {
            model_hits += 1;
        }
    }
    assert!(model_hits >= 19, "correct model in {model_hits}/20 cases");

    // joint ordered retrieval for pose accuracy
    let result = retrieve(&inputs, &library, 10, 2).expect("retrieval");
    assert_eq!(result.model_id, "wedge");
    assert!(
        result.assignments.len() >= 18,
        "{} of 20 views assigned",
        result.assignments.len()
    );
    let mut err_sum = 0.0;
    for a in &result.assignments {
        let assigned = &entry.poses[a.pose_index];
        err_sum += assigned
            .rotation
            .geodesic_angle(&true_poses[a.view].rotation)
            .to_degrees();
    }
    let mean_rot = err_sum / result.assignments.len() as f64;
    let elapsed = start.elapsed();
    assert!(mean_rot <= 15.0, "mean assigned-pose rotation error {mean_rot}");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 5: PASS — model {model_hits}/20, {} views assigned, mean rotation error {mean_rot:.2} deg in {elapsed:?}",
        result.assignments.len()
    );
}

// ---------------------------------------------------------------------------
// criterion 6: toy end-to-end reconstruction

#[test]
fn criterion_6_toy_end_to_end_reconstruction() {
    let run = toy_run_full_model();
    assert_eq!(run.report.retrieval.model_id, "cuboid");
    assert!(
        run.train_psnr_mean >= 25.0,
        "training-view PSNR {:.2} dB",
        run.train_psnr_mean
    );
    assert!(
        run.heldout_psnr_mean >= 20.0,
        "held-out PSNR {:.2} dB",
        run.heldout_psnr_mean
    );
    assert!(
        run.runtime.as_secs() <= 30 * 60,
        "run took {:?}",
        run.runtime
    );
    println!(
        "criterion 6: PASS — train PSNR {:.2} dB, held-out PSNR {:.2} dB, runtime {:?}",
        run.train_psnr_mean, run.heldout_psnr_mean, run.runtime
    );
}

// ---------------------------------------------------------------------------
// criterion 7: pose refinement against frozen ground-truth fields

#[test]
fn criterion_7_pose_refinement_recovers_perturbations() {
    let mesh = shapes::cuboid(1.0, 1.0, 1.0);
    let mut config = TrainConfig::desk_preset();
    config.phase1_iters = 800;
    config.pose_start = 850;
    config.pose_end = 900;
    config.seed = 7;
    // pose-only study settings: a larger step and batch are appropriate
    // when only 48 scalars are being optimized against frozen fields
    config.learning_rate = 1.5e-3;
    config.batch_rays = 120;

    let scene_poses = sample_library_poses(40, 2.0, 48);
    let true_poses: Vec<CameraPose> = [2usize, 7, 12, 17, 23, 28, 33, 38]
        .iter()
        .map(|&i| scene_poses[i].clone())
        .collect();

    // perturb each pose by 10 degrees and 0.1 world units
    let mut rng = Rng::seeded(0xACC7);
    let perturbed: Vec<CameraPose> = true_poses
        .iter()
        .map(|p| {
            let update = PoseUpdate {
                axis_angle: rng.unit_vector() * 10f64.to_radians(),
                delta_t: rng.unit_vector() * 0.1,
            };
            apply_pose_update(&update, p).unwrap()
        })
        .collect();

    let mut state = TrainState::new(&config, perturbed.clone()).unwrap();
    phase1_pretrain(&mesh, &mut state).unwrap();

    // freeze the fields and the encoding at the pretraining state
    state.config.phase1_iters = usize::MAX / 2;

    // self-consistent targets: render the frozen fields from the true poses
    let views: Vec<TrainView> = true_poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let image = state.render_view(pose);
            let mask = mesh.render_silhouette(pose, 48).unwrap();
            TrainView {
                name: format!("study{i}"),
                image,
                mask,
            }
        })
        .collect();

    let (rot_before, trans_before) =
        pose_registration_error(&state.current_poses().unwrap(), &true_poses).unwrap();
    refine_poses_only(&views, &mut state, 1000).unwrap();
    let (rot_after, trans_after) =
        pose_registration_error(&state.current_poses().unwrap(), &true_poses).unwrap();

    assert!(
        rot_after < 2.0,
        "rotation error {rot_after:.3} deg (was {rot_before:.3})"
    );
    assert!(
        trans_after < 5.0,
        "translation error x100 {trans_after:.3} (was {trans_before:.3})"
    );
    println!(
        "criterion 7: PASS — rotation {rot_before:.2} -> {rot_after:.3} deg, translation x100 {trans_before:.2} -> {trans_after:.3}"
    );
}

// ---------------------------------------------------------------------------
// criterion 8: ablation directions

#[test]
fn criterion_8_ablations() {
    let full = toy_run_full_model();

    // w/o initialization: held-out quality must drop by at least 1 dB
    let mut config = TrainConfig::desk_preset();
    config.use_init = false;
    let no_init = run_toy(&config, "no_init");
    let drop = full.heldout_psnr_mean - no_init.heldout_psnr_mean;
    assert!(
        drop >= 1.0,
        "disabling initialization changed held-out PSNR by {drop:.2} dB ({:.2} -> {:.2})",
        full.heldout_psnr_mean,
        no_init.heldout_psnr_mean
    );

    // w/o deformation: renders must be bit-identical to zero-wired deform
    let scene = toy_scene();
    let pose = &scene.heldout[0].0;
    let state = &full.state;
    let encoding = state
        .config
        .encoding(state.config.alpha_at(state.iteration));
    let render_cfg = state.config.render_config();
    let disabled = render_image(
        pose,
        &NetField {
            params: &state.fields,
            store: &state.store,
            encoding,
            use_deformation: false,
        },
        &render_cfg,
        state.config.samples_per_ray,
    );
    // zero out the deformation output layer in a copied store
    let mut zero_store = state.store.clone();
    let deform_ids = state.fields.deform_param_ids();
    // the output layer's weight and bias are the last two deform params
    for &id in &deform_ids[deform_ids.len() - 2..] {
        zero_store.params[id].value.data.fill(0.0);
    }
    let zero_wired = render_image(
        pose,
        &NetField {
            params: &state.fields,
            store: &zero_store,
            encoding,
            use_deformation: true,
        },
        &render_cfg,
        state.config.samples_per_ray,
    );
    assert_eq!(
        disabled.data, zero_wired.data,
        "deformation ablation must be bit-identical to zero wiring"
    );
    println!(
        "criterion 8: PASS — no-init drops held-out PSNR by {drop:.2} dB ({:.2} -> {:.2}); zero-deformation renders bit-identical",
        full.heldout_psnr_mean, no_init.heldout_psnr_mean
    );
}

// ---------------------------------------------------------------------------
// criterion 9: loss unit values

#[test]
fn criterion_9_loss_worked_examples() {
    let mut g = Graph::new();
    let sigma = g.constant(Matrix::from_vec(4, 1, vec![0.5; 4]));
    let targets = Matrix::from_vec(4, 1, vec![1.0, 0.0, 0.0, 1.0]);
    let bce = meshnerf::render::loss_density_tape(&mut g, sigma, &targets).unwrap();
    let bce_value = g.scalar_value(bce);
    assert!(
        (bce_value - std::f64::consts::LN_2).abs() <= 1e-9,
        "BCE at 0.5: {bce_value}"
    );

    let offsets = g.constant(Matrix::from_vec(1, 3, vec![3.0, 4.0, 0.0]));
    let corrections = g.constant(Matrix::from_vec(2, 1, vec![-1.0, 2.0]));
    let (l_off, l_corr) =
        meshnerf::render::loss_regularizers_tape(&mut g, offsets, corrections).unwrap();
    assert_eq!(g.scalar_value(l_off), 5.0);
    assert_eq!(g.scalar_value(l_corr), 1.5);

    let c = g.constant(Matrix::scalar(1.0));
    let o = g.constant(Matrix::scalar(0.2));
    let k = g.constant(Matrix::scalar(0.5));
    let total = loss_total_tape(&mut g, c, o, k, 10.0, 0.1).unwrap();
    assert!((g.scalar_value(total) - 3.05).abs() < 1e-12);

    let avg = average_metric(20.0, 0.91, 0.1);
    assert!((avg - 0.0669).abs() <= 1e-4, "average metric {avg}");
    println!(
        "criterion 9: PASS — BCE ln2, regularizers (5, 1.5), total 3.05, average {avg:.4}"
    );
}

// ---------------------------------------------------------------------------
// criterion 10: determinism

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let first = toy_run_full_model();
    let second = run_toy(&TrainConfig::desk_preset(), "determinism");
    let read = |dir: &std::path::Path, file: &str| std::fs::read(dir.join(file)).expect(file);
    assert_eq!(
        read(&first.out_dir, "loss_history.csv"),
        read(&second.out_dir, "loss_history.csv"),
        "loss histories must be byte-identical"
    );
    for ckpt in ["phase1.ckpt", "phase2.ckpt", "phase3.ckpt"] {
        assert_eq!(
            read(&first.out_dir, ckpt),
            read(&second.out_dir, ckpt),
            "{ckpt} must be byte-identical"
        );
    }
    println!("criterion 10: PASS — loss history and all checkpoints byte-identical across reruns");
}
