//! Discretized emission-absorption volume rendering and the training
//! losses. Compositing follows the standard quadrature: per sample
//! `alpha_i = 1 - exp(-sigma_i * delta_i)`, transmittance
//! `T_i = prod_{j<i} (1 - alpha_j)`, pixel color `sum_i T_i alpha_i c_i`
//! over a black background.
//!
//! Field densities live in [0, 1], so an extinction gain
//! (`RenderConfig::density_scale`) converts them into the optical density
//! used by the quadrature; a normalized density can never saturate opacity
//! over a unit-scale object on its own.

use crate::autodiff::{Graph, Matrix, NodeId, ParamId, ParamStore};
use crate::camera::{Bounds, CameraPose, Ray};
use crate::error::Result;
use crate::fields::{EncodingConfig, FieldParams};
use crate::img::ImageRgb;
use crate::rng::Rng;

pub const DEFAULT_SAMPLES_PER_RAY: usize = 128;
pub const DEFAULT_DENSITY_SCALE: f64 = 40.0;
/// Clipping bound for the binary cross-entropy logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub bounds: Bounds,
    /// Extinction gain applied to field densities before compositing.
    pub density_scale: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_samples: DEFAULT_SAMPLES_PER_RAY,
            bounds: (1.0, 3.0),
            density_scale: DEFAULT_DENSITY_SCALE,
        }
    }
}

impl RenderConfig {
    /// Bounds straddling the unit-cube scene as seen from `radius`.
    pub fn for_radius(radius: f64) -> RenderConfig {
        RenderConfig {
            bounds: (radius - 1.0, radius + 1.0),
            ..Default::default()
        }
    }
}

/// Quadrature points for a batch of rays, stored ray-major:
/// row `r * n_samples + s` belongs to ray r, sample s.
#[derive(Debug, Clone)]
pub struct QuadratureSamples {
    pub n_rays: usize,
    pub n_samples: usize,
    /// `[R*S x 1]` sorted within each ray.
    pub ts: Matrix,
    /// `[R*S x 1]`; the last delta is the residual distance to t_far.
    pub deltas: Matrix,
}

/// A quadrature plus the concrete rays it was sampled for.
#[derive(Debug, Clone)]
pub struct RaySampleBatch {
    pub rays: Vec<Ray>,
    pub quad: QuadratureSamples,
    pub seed: u64,
}

impl RaySampleBatch {
    pub fn n_samples(&self) -> usize {
        self.quad.n_samples
    }
}

/// Midpoint (or jittered-stratified) quadrature points for `n_rays` rays
/// sharing the same bounds. Rays live elsewhere (possibly on the tape).
pub fn sample_quadrature(
    n_rays: usize,
    n_samples: usize,
    bounds: Bounds,
    stratified: bool,
    seed: u64,
) -> QuadratureSamples {
    assert!(n_samples >= 2, "need at least two samples per ray");
    let (t_near, t_far) = bounds;
    let mut ts = Matrix::zeros(n_rays * n_samples, 1);
    let mut deltas = Matrix::zeros(n_rays * n_samples, 1);
    for r in 0..n_rays {
        let bin = (t_far - t_near) / n_samples as f64;
        let mut rng = Rng::stream(seed, r as u64);
        let base = r * n_samples;
        for s in 0..n_samples {
            let jitter = if stratified { rng.unit() } else { 0.5 };
            ts.data[base + s] = t_near + (s as f64 + jitter) * bin;
        }
        for s in 0..n_samples {
            deltas.data[base + s] = if s + 1 < n_samples {
                ts.data[base + s + 1] - ts.data[base + s]
            } else {
                t_far - ts.data[base + s]
            };
        }
    }
    QuadratureSamples {
        n_rays,
        n_samples,
        ts,
        deltas,
    }
}

/// Midpoint (or jittered-stratified) quadrature points along each ray.
pub fn sample_along_rays(rays: &[Ray], n_samples: usize, stratified: bool, seed: u64) -> RaySampleBatch {
    let bounds = rays
        .first()
        .map(|r| (r.t_near, r.t_far))
        .unwrap_or((0.0, 1.0));
    debug_assert!(rays.iter().all(|r| (r.t_near, r.t_far) == bounds));
    RaySampleBatch {
        rays: rays.to_vec(),
        quad: sample_quadrature(rays.len(), n_samples, bounds, stratified, seed),
        seed,
    }
}

/// Anything that can answer (density, rgb) at a batch of points/directions.
/// Networks implement it for inference; tests plug in analytic fields.
pub trait FieldEval {
    /// `points`, `dirs`: `[P x 3]`. Returns (sigma `[P x 1]`, rgb `[P x 3]`).
    fn eval(&self, points: &Matrix, dirs: &Matrix) -> (Matrix, Matrix);
}

/// Network-backed field for inference rendering.
pub struct NetField<'a> {
    pub params: &'a FieldParams,
    pub store: &'a ParamStore,
    pub encoding: EncodingConfig,
    pub use_deformation: bool,
}

impl FieldEval for NetField<'_> {
    fn eval(&self, points: &Matrix, dirs: &Matrix) -> (Matrix, Matrix) {
        let (sigma, feature) = if self.use_deformation {
            self.params
                .deformed_density_plain(self.store, points, &self.encoding)
        } else {
            self.params.density_plain(self.store, points, &self.encoding)
        };
        let rgb = self
            .params
            .color_plain(self.store, &feature, dirs, &self.encoding);
        (sigma, rgb)
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// Composited color per ray.
    pub color: Vec<[f64; 3]>,
    /// Accumulated alpha per ray, `1 - T_final`.
    pub opacity: Vec<f64>,
    /// Per-sample transmittance `[R x S]`, starts at 1, non-increasing.
    pub transmittance: Matrix,
}

/// Inference-path rendering of a sampled batch against a field.
pub fn render_rays(batch: &RaySampleBatch, field: &impl FieldEval, config: &RenderConfig) -> RenderOutput {
    let n_rays = batch.rays.len();
    let s = batch.quad.n_samples;
    let mut points = Matrix::zeros(n_rays * s, 3);
    let mut dirs = Matrix::zeros(n_rays * s, 3);
    for (r, ray) in batch.rays.iter().enumerate() {
        for k in 0..s {
            let t = batch.quad.ts.data[r * s + k];
            let p = ray.at(t);
            points.row_mut(r * s + k).copy_from_slice(&[p.x, p.y, p.z]);
            dirs.row_mut(r * s + k)
                .copy_from_slice(&[ray.direction.x, ray.direction.y, ray.direction.z]);
        }
    }
    let (sigma, rgb) = field.eval(&points, &dirs);
    composite(&sigma, &rgb, &batch.quad, config)
}

/// Alpha compositing shared by the inference path.
pub fn composite(sigma: &Matrix, rgb: &Matrix, quad: &QuadratureSamples, config: &RenderConfig) -> RenderOutput {
    let n_rays = quad.n_rays;
    let s = quad.n_samples;
    let mut color = vec![[0.0; 3]; n_rays];
    let mut opacity = vec![0.0; n_rays];
    let mut transmittance = Matrix::zeros(n_rays, s);
    for r in 0..n_rays {
        let mut accum_tau = 0.0_f64;
        for k in 0..s {
            let idx = r * s + k;
            let t_here = (-accum_tau).exp();
            transmittance.set(r, k, t_here);
            let tau = config.density_scale * sigma.data[idx] * quad.deltas.data[idx];
            let alpha = 1.0 - (-tau).exp();
            let w = t_here * alpha;
            let c = rgb.row(idx);
            color[r][0] += w * c[0];
            color[r][1] += w * c[1];
            color[r][2] += w * c[2];
            opacity[r] += w;
            accum_tau += tau;
        }
    }
    RenderOutput {
        color,
        opacity,
        transmittance,
    }
}

/// Everything the training step needs from a differentiable render.
pub struct TapeRender {
    /// `[R x 3]` composited colors.
    pub color: NodeId,
    /// `[R x 1]` accumulated alpha.
    pub opacity: NodeId,
    /// `[P x 3]` per-sample offsets (when deformation is on).
    pub offsets: Option<NodeId>,
    /// `[P x 1]` per-sample corrections (when deformation is on).
    pub corrections: Option<NodeId>,
}

/// Differentiable rays from a pose update applied to an initial camera:
/// rotate the initial world-space ray directions and origin by
/// `exp(axis_angle)` and add the translation. Returns
/// `(origin [1 x 3], dirs [R x 3])`.
pub fn pose_rays_tape(
    g: &mut Graph,
    store: &ParamStore,
    axis_angle: ParamId,
    delta_t: ParamId,
    init: &CameraPose,
    pixels: &[(f64, f64)],
) -> Result<(NodeId, NodeId)> {
    let mut d0 = Matrix::zeros(pixels.len(), 3);
    for (i, &(u, v)) in pixels.iter().enumerate() {
        let d = init.pixel_direction(u, v);
        d0.row_mut(i).copy_from_slice(&[d.x, d.y, d.z]);
    }
    let o0 = Matrix::row_vector(&[init.translation.x, init.translation.y, init.translation.z]);
    let aa = g.param(store, axis_angle);
    let dt = g.param(store, delta_t);
    let dirs = g.rotate_points(aa, d0)?;
    let origin_rot = g.rotate_points(aa, o0)?;
    let origin = g.add(origin_rot, dt)?;
    Ok((origin, dirs))
}

/// Fixed (non-differentiable) rays for a known camera.
pub fn fixed_rays_tape(g: &mut Graph, rays: &[Ray]) -> (NodeId, NodeId) {
    let mut d0 = Matrix::zeros(rays.len(), 3);
    let o = rays.first().map(|r| r.origin).unwrap_or(crate::geom::Vec3::ZERO);
    for (i, ray) in rays.iter().enumerate() {
        d0.row_mut(i)
            .copy_from_slice(&[ray.direction.x, ray.direction.y, ray.direction.z]);
    }
    let dirs = g.constant(d0);
    let origin = g.constant(Matrix::row_vector(&[o.x, o.y, o.z]));
    (origin, dirs)
}

/// One camera's contribution to a batched render: a shared origin and its
/// ray directions, either constants or pose-dependent nodes.
pub struct RayGroup {
    /// `[1 x 3]`
    pub origin: NodeId,
    /// `[r x 3]`
    pub dirs: NodeId,
}

/// Differentiable volume rendering of rays from several cameras in one
/// batch. Groups contribute consecutive ray rows in order; `quad` covers
/// the total ray count.
#[allow(clippy::too_many_arguments)]
pub fn render_groups_tape(
    g: &mut Graph,
    store: &ParamStore,
    fields: &FieldParams,
    groups: &[RayGroup],
    quad: &QuadratureSamples,
    config: &RenderConfig,
    encoding: &EncodingConfig,
    use_deformation: bool,
) -> Result<TapeRender> {
    let s = quad.n_samples;
    let mut point_parts = Vec::with_capacity(groups.len());
    let mut dir_parts = Vec::with_capacity(groups.len());
    let mut row = 0usize;
    for group in groups {
        let r = g.value(group.dirs).rows;
        let ts_slice = Matrix::from_vec(
            r * s,
            1,
            quad.ts.data[row * s..(row + r) * s].to_vec(),
        );
        let ts_const = g.constant(ts_slice);
        let dirs_rep = g.repeat_rows(group.dirs, s);
        let scaled = g.mul_col(ts_const, dirs_rep)?;
        let points = g.add_row(scaled, group.origin)?;
        point_parts.push(points);
        dir_parts.push(dirs_rep);
        row += r;
    }
    if row != quad.n_rays {
        return Err(crate::error::Error::Dimension(format!(
            "ray groups cover {row} rays, quadrature has {}",
            quad.n_rays
        )));
    }
    let points = if point_parts.len() == 1 {
        point_parts[0]
    } else {
        g.concat_rows(&point_parts)?
    };
    let dirs_rep = if dir_parts.len() == 1 {
        dir_parts[0]
    } else {
        g.concat_rows(&dir_parts)?
    };
    render_points_tape(g, store, fields, points, dirs_rep, quad, config, encoding, use_deformation)
}

/// Differentiable volume rendering over a sampled batch.
///
/// `origin [1 x 3]` and `dirs [R x 3]` may be constants or pose-dependent
/// nodes; sample positions, field evaluation, and compositing all live on
/// the tape.
#[allow(clippy::too_many_arguments)]
pub fn render_rays_tape(
    g: &mut Graph,
    store: &ParamStore,
    fields: &FieldParams,
    origin: NodeId,
    dirs: NodeId,
    quad: &QuadratureSamples,
    config: &RenderConfig,
    encoding: &EncodingConfig,
    use_deformation: bool,
) -> Result<TapeRender> {
    render_groups_tape(
        g,
        store,
        fields,
        &[RayGroup { origin, dirs }],
        quad,
        config,
        encoding,
        use_deformation,
    )
}

/// Shared tail: field evaluation and alpha compositing of prepared
/// `[P x 3]` sample points and per-sample directions.
#[allow(clippy::too_many_arguments)]
fn render_points_tape(
    g: &mut Graph,
    store: &ParamStore,
    fields: &FieldParams,
    points: NodeId,
    dirs_rep: NodeId,
    quad: &QuadratureSamples,
    config: &RenderConfig,
    encoding: &EncodingConfig,
    use_deformation: bool,
) -> Result<TapeRender> {
    let n_rays = quad.n_rays;
    let s = quad.n_samples;
    let deltas_const = g.constant(quad.deltas.clone());

    let (sigma, feature, offsets, corrections) = if use_deformation {
        let (sigma2, feature, offset, correction) =
            fields.deformed_density_tape(g, store, points, encoding)?;
        (sigma2, feature, Some(offset), Some(correction))
    } else {
        let (sigma1, feature) = fields.density_tape(g, store, points, encoding)?;
        (sigma1, feature, None, None)
    };
    let rgb = fields.color_tape(g, store, feature, dirs_rep, encoding)?;

    // tau_i = scale * sigma_i * delta_i; alpha = 1 - exp(-tau)
    let ext = g.scale(sigma, config.density_scale);
    let tau = g.mul(ext, deltas_const)?;
    let neg_tau = g.scale(tau, -1.0);
    let exp_neg = g.exp(neg_tau);
    let neg_exp = g.scale(exp_neg, -1.0);
    let alpha = g.add_scalar(neg_exp, 1.0);

    // T_i = exp(-sum_{j<i} tau_j) per ray
    let tau_rows = g.reshape(tau, n_rays, s)?;
    let cum = g.cumsum_exclusive_rows(tau_rows);
    let neg_cum = g.scale(cum, -1.0);
    let trans_rows = g.exp(neg_cum);
    let trans = g.reshape(trans_rows, n_rays * s, 1)?;

    let weights = g.mul(trans, alpha)?;
    let weighted_rgb = g.mul_col(weights, rgb)?;
    let color = g.sum_groups(weighted_rgb, s)?;
    let opacity = g.sum_groups(weights, s)?;

    Ok(TapeRender {
        color,
        opacity,
        offsets,
        corrections,
    })
}

/// Mean over rays of the squared L2 color error (tape).
pub fn loss_color_tape(g: &mut Graph, rendered: NodeId, target: &Matrix) -> Result<NodeId> {
    let n_rays = target.rows;
    let t = g.constant(target.clone());
    let diff = g.sub(rendered, t)?;
    let sq = g.mul(diff, diff)?;
    let sum = g.sum_all(sq);
    Ok(g.scale(sum, 1.0 / n_rays as f64))
}

/// Binary cross-entropy between predicted densities and {0,1} occupancy
/// targets, predictions clipped to `[BCE_EPS, 1 - BCE_EPS]` (tape).
pub fn loss_density_tape(g: &mut Graph, sigma: NodeId, targets: &Matrix) -> Result<NodeId> {
    let n = targets.rows;
    let clipped = g.clamp(sigma, BCE_EPS, 1.0 - BCE_EPS);
    let t = g.constant(targets.clone());
    let one_minus_t = g.constant(targets.map(|v| 1.0 - v));
    let ln_s = g.ln(clipped);
    let neg_s = g.scale(clipped, -1.0);
    let one_minus_s = g.add_scalar(neg_s, 1.0);
    let ln_1ms = g.ln(one_minus_s);
    let a = g.mul(t, ln_s)?;
    let b = g.mul(one_minus_t, ln_1ms)?;
    let sum_ab = g.add(a, b)?;
    let total = g.sum_all(sum_ab);
    Ok(g.scale(total, -1.0 / n as f64))
}

/// Deformation regularizers: batch-mean Euclidean offset norm and
/// batch-mean absolute correction (tape). Returns `(l_offset, l_correction)`.
pub fn loss_regularizers_tape(
    g: &mut Graph,
    offsets: NodeId,
    corrections: NodeId,
) -> Result<(NodeId, NodeId)> {
    let n = g.value(offsets).rows;
    let sq = g.mul(offsets, offsets)?;
    let row = g.row_sum(sq);
    let norms = g.sqrt(row);
    let sum_norms = g.sum_all(norms);
    let l_offset = g.scale(sum_norms, 1.0 / n as f64);

    let m = g.value(corrections).rows;
    let abs = g.abs(corrections);
    let sum_abs = g.sum_all(abs);
    let l_correction = g.scale(sum_abs, 1.0 / m as f64);
    Ok((l_offset, l_correction))
}

/// `L_color + lambda_a * L_offset + lambda_b * L_correction` (tape).
pub fn loss_total_tape(
    g: &mut Graph,
    l_color: NodeId,
    l_offset: NodeId,
    l_correction: NodeId,
    lambda_a: f64,
    lambda_b: f64,
) -> Result<NodeId> {
    let a = g.scale(l_offset, lambda_a);
    let b = g.scale(l_correction, lambda_b);
    let partial = g.add(l_color, a)?;
    g.add(partial, b)
}

/// Plain-path color loss for reporting.
pub fn loss_color_plain(rendered: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    assert_eq!(rendered.len(), target.len());
    let sum: f64 = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| {
            (r[0] - t[0]).powi(2) + (r[1] - t[1]).powi(2) + (r[2] - t[2]).powi(2)
        })
        .sum();
    sum / rendered.len() as f64
}

/// Plain-path BCE for reporting.
pub fn loss_density_plain(sigma: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(sigma.len(), targets.len());
    let sum: f64 = sigma
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
            t * s.ln() + (1.0 - t) * (1.0 - s).ln()
        })
        .sum();
    -sum / sigma.len() as f64
}

/// Render a full image through the inference path, chunked by rows.
pub fn render_image(
    pose: &CameraPose,
    field: &impl FieldEval,
    config: &RenderConfig,
    n_samples: usize,
) -> ImageRgb {
    let mut image = ImageRgb::new(pose.width, pose.height);
    let chunk_rows = (4096 / pose.width.max(1)).max(1);
    let mut y = 0;
    while y < pose.height {
        let y_end = (y + chunk_rows).min(pose.height);
        let mut rays = Vec::with_capacity((y_end - y) * pose.width);
        for yy in y..y_end {
            for x in 0..pose.width {
                rays.push(pose.pixel_center_ray(x, yy, config.bounds));
            }
        }
        let batch = sample_along_rays(&rays, n_samples, false, 0);
        let out = render_rays(&batch, field, config);
        let mut i = 0;
        for yy in y..y_end {
            for x in 0..pose.width {
                image.set_pixel(x, yy, out.color[i]);
                i += 1;
            }
        }
        y = y_end;
    }
    image
}
