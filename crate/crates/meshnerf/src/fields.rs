//! The three fields: a residual-block density network, a deformation
//! network predicting per-point offset and density correction, and a color
//! network fed by the density feature plus encoded view direction. Position
//! inputs go through coarse-to-fine annealed positional encoding.
//!
//! Every network has two forward paths with identical arithmetic: a tape
//! path for training and a plain path for inference rendering.

use crate::autodiff::{Graph, Matrix, NodeId, ParamGroup, ParamId, ParamStore};
use crate::error::Result;
use crate::geom::Vec3;
use crate::rng::Rng;

pub const DEFAULT_POSITION_FREQS: usize = 10;
pub const DEFAULT_DIRECTION_FREQS: usize = 4;
pub const DEFAULT_HIDDEN_WIDTH: usize = 128;
pub const DENSITY_BLOCKS: usize = 4;
pub const DEFORM_HIDDEN_LAYERS: usize = 3;
pub const COLOR_LAYERS: usize = 4;

/// Positional-encoding shape plus the coarse-to-fine progress `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    pub position_freqs: usize,
    pub direction_freqs: usize,
    /// Annealing progress in `[0, position_freqs]`; frequency band k is
    /// weighted by `(1 - cos(pi * clamp(alpha - k, 0, 1))) / 2`.
    pub alpha: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            position_freqs: DEFAULT_POSITION_FREQS,
            direction_freqs: DEFAULT_DIRECTION_FREQS,
            alpha: DEFAULT_POSITION_FREQS as f64,
        }
    }
}

impl EncodingConfig {
    pub fn full(position_freqs: usize, direction_freqs: usize) -> EncodingConfig {
        EncodingConfig {
            position_freqs,
            direction_freqs,
            alpha: position_freqs as f64,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> EncodingConfig {
        self.alpha = alpha;
        self
    }

    pub fn band_weight(&self, k: usize) -> f64 {
        let t = (self.alpha - k as f64).clamp(0.0, 1.0);
        (1.0 - (std::f64::consts::PI * t).cos()) / 2.0
    }

    pub fn position_dim(&self) -> usize {
        3 + 3 * 2 * self.position_freqs
    }

    pub fn direction_dim(&self) -> usize {
        3 + 3 * 2 * self.direction_freqs
    }
}

/// `[x, w_0 sin(2^0 pi x), w_0 cos(2^0 pi x), ..., w_{L-1} cos(2^{L-1} pi x)]`
pub fn encode_plain(points: &Matrix, freqs: usize, config: &EncodingConfig) -> Matrix {
    let n = points.rows;
    let dims = points.cols;
    let out_cols = dims * (1 + 2 * freqs);
    let mut out = Matrix::zeros(n, out_cols);
    for r in 0..n {
        let src = points.row(r);
        let dst = out.row_mut(r);
        dst[..dims].copy_from_slice(src);
        for k in 0..freqs {
            let w = config.band_weight(k);
            let scale = (1u64 << k) as f64 * std::f64::consts::PI;
            for (d, &x) in src.iter().enumerate() {
                let v = scale * x;
                dst[dims + (2 * k) * dims + d] = w * v.sin();
                dst[dims + (2 * k + 1) * dims + d] = w * v.cos();
            }
        }
    }
    out
}

/// Tape version of [`encode_plain`], band order identical.
pub fn encode_tape(g: &mut Graph, points: NodeId, freqs: usize, config: &EncodingConfig) -> Result<NodeId> {
    let mut parts = vec![points];
    for k in 0..freqs {
        let w = config.band_weight(k);
        let scale = (1u64 << k) as f64 * std::f64::consts::PI;
        let scaled = g.scale(points, scale);
        let s = g.sin(scaled);
        let c = g.cos(scaled);
        parts.push(g.scale(s, w));
        parts.push(g.scale(c, w));
    }
    g.concat_cols(&parts)
}

/// Single-point positional encoding (row layout as [`encode_plain`]).
pub fn positional_encoding(x: Vec3, config: &EncodingConfig) -> Vec<f64> {
    let m = Matrix::row_vector(&[x.x, x.y, x.z]);
    encode_plain(&m, config.position_freqs, config).data
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Linear {
        let std = (2.0 / fan_in as f64).sqrt();
        let w = Matrix::from_vec(
            fan_in,
            fan_out,
            (0..fan_in * fan_out).map(|_| rng.normal() * std).collect(),
        );
        Linear {
            w: store.add(format!("{name}.w"), w, ParamGroup::Fields),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, fan_out), ParamGroup::Fields),
        }
    }

    fn new_zero(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: store.add(format!("{name}.w"), Matrix::zeros(fan_in, fan_out), ParamGroup::Fields),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, fan_out), ParamGroup::Fields),
        }
    }

    fn tape(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let prod = g.matmul(x, w)?;
        g.add_row(prod, b)
    }

    fn plain(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let mut out = x.matmul(store.value(self.w));
        let b = store.value(self.b);
        for r in 0..out.rows {
            for (v, &bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *v += bv;
            }
        }
        out
    }
}

/// Fully-connected residual block: `x + fc1(relu(fc0(relu(x))))`, with fc1
/// zero-initialized so the block starts as the identity.
#[derive(Debug, Clone, Copy)]
struct ResBlock {
    fc0: Linear,
    fc1: Linear,
}

impl ResBlock {
    fn tape(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let a = g.relu(x);
        let h = self.fc0.tape(g, store, a)?;
        let a2 = g.relu(h);
        let h2 = self.fc1.tape(g, store, a2)?;
        g.add(x, h2)
    }

    fn plain(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let a = x.map(|v| v.max(0.0));
        let h = self.fc0.plain(store, &a);
        let a2 = h.map(|v| v.max(0.0));
        let mut h2 = self.fc1.plain(store, &a2);
        h2.add_in_place(x);
        h2
    }
}

/// Parameter handles for all three networks.
#[derive(Debug, Clone)]
pub struct FieldParams {
    pub hidden_width: usize,
    density_in: Linear,
    density_blocks: Vec<ResBlock>,
    density_logit: Linear,
    deform_layers: Vec<Linear>,
    color_layers: Vec<Linear>,
}

impl FieldParams {
    /// Fresh networks. The deformation output layer starts at exactly zero,
    /// so training begins from the undeformed retrieved shape.
    pub fn new(
        store: &mut ParamStore,
        encoding: &EncodingConfig,
        hidden_width: usize,
        seed: u64,
    ) -> FieldParams {
        let mut rng = Rng::stream(seed, 0xf1e1d5);
        let w = hidden_width;
        let pos_dim = encoding.position_dim();
        let dir_dim = encoding.direction_dim();

        let density_in = Linear::new(store, "density.in", pos_dim, w, &mut rng);
        // Zero the frequency-band rows of the input layer: phase-one
        // pretraining runs fully coarse, and bands that open later must not
        // inject untrained noise into the pretrained field. They grow from
        // zero under the rendering loss instead.
        {
            let weights = &mut store.params[density_in.w].value;
            for row in 3..pos_dim {
                weights.row_mut(row).fill(0.0);
            }
        }
        let density_blocks = (0..DENSITY_BLOCKS)
            .map(|i| ResBlock {
                fc0: Linear::new(store, &format!("density.block{i}.fc0"), w, w, &mut rng),
                fc1: Linear::new_zero(store, &format!("density.block{i}.fc1"), w, w),
            })
            .collect();
        let density_logit = Linear::new(store, "density.logit", w, 1, &mut rng);

        let mut deform_layers = Vec::new();
        for i in 0..DEFORM_HIDDEN_LAYERS {
            let fan_in = if i == 0 { pos_dim } else { w };
            deform_layers.push(Linear::new(store, &format!("deform.fc{i}"), fan_in, w, &mut rng));
        }
        deform_layers.push(Linear::new_zero(
            store,
            &format!("deform.fc{DEFORM_HIDDEN_LAYERS}"),
            w,
            4,
        ));

        let mut color_layers = Vec::new();
        for i in 0..COLOR_LAYERS - 1 {
            let fan_in = if i == 0 { w + dir_dim } else { w };
            color_layers.push(Linear::new(store, &format!("color.fc{i}"), fan_in, w, &mut rng));
        }
        color_layers.push(Linear::new(
            store,
            &format!("color.fc{}", COLOR_LAYERS - 1),
            w,
            3,
            &mut rng,
        ));

        FieldParams {
            hidden_width,
            density_in,
            density_blocks,
            density_logit,
            deform_layers,
            color_layers,
        }
    }

    pub fn density_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.density_in.w,
            self.density_in.b,
            self.density_logit.w,
            self.density_logit.b,
        ];
        for b in &self.density_blocks {
            ids.extend([b.fc0.w, b.fc0.b, b.fc1.w, b.fc1.b]);
        }
        ids
    }

    pub fn deform_param_ids(&self) -> Vec<ParamId> {
        self.deform_layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn color_param_ids(&self) -> Vec<ParamId> {
        self.color_layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    /// Density and feature at raw positions (tape).
    /// Returns `(sigma [Nx1], feature [NxW])`.
    pub fn density_tape(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        points: NodeId,
        config: &EncodingConfig,
    ) -> Result<(NodeId, NodeId)> {
        let enc = encode_tape(g, points, config.position_freqs, config)?;
        let mut h = self.density_in.tape(g, store, enc)?;
        for block in &self.density_blocks {
            h = block.tape(g, store, h)?;
        }
        let a = g.relu(h);
        let logit = self.density_logit.tape(g, store, a)?;
        let sigma = g.sigmoid(logit);
        Ok((sigma, h))
    }

    /// Offset and correction at raw positions (tape).
    /// Returns `(offset [Nx3], correction [Nx1])`.
    pub fn deform_tape(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        points: NodeId,
        config: &EncodingConfig,
    ) -> Result<(NodeId, NodeId)> {
        let enc = encode_tape(g, points, config.position_freqs, config)?;
        let mut h = enc;
        for (i, layer) in self.deform_layers.iter().enumerate() {
            h = layer.tape(g, store, h)?;
            if i + 1 < self.deform_layers.len() {
                h = g.relu(h);
            }
        }
        let offset = g.slice_cols(h, 0, 3)?;
        let correction = g.slice_cols(h, 3, 4)?;
        Ok((offset, correction))
    }

    /// Deformed density `clamp(D(x + o) + c1, 0, 1)` (tape).
    /// Returns `(sigma2, feature, offset, correction)`.
    pub fn deformed_density_tape(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        points: NodeId,
        config: &EncodingConfig,
    ) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let (offset, correction) = self.deform_tape(g, store, points, config)?;
        let moved = g.add(points, offset)?;
        let (sigma1, feature) = self.density_tape(g, store, moved, config)?;
        let sum = g.add(sigma1, correction)?;
        let sigma2 = g.clamp(sum, 0.0, 1.0);
        Ok((sigma2, feature, offset, correction))
    }

    /// View-dependent color from density feature and direction (tape).
    pub fn color_tape(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feature: NodeId,
        dirs: NodeId,
        config: &EncodingConfig,
    ) -> Result<NodeId> {
        let enc_dir = encode_tape(g, dirs, config.direction_freqs, config)?;
        let mut h = g.concat_cols(&[feature, enc_dir])?;
        for (i, layer) in self.color_layers.iter().enumerate() {
            h = layer.tape(g, store, h)?;
            if i + 1 < self.color_layers.len() {
                h = g.relu(h);
            }
        }
        Ok(g.sigmoid(h))
    }

    /// Plain-path density; identical arithmetic to the tape path.
    pub fn density_plain(
        &self,
        store: &ParamStore,
        points: &Matrix,
        config: &EncodingConfig,
    ) -> (Matrix, Matrix) {
        let enc = encode_plain(points, config.position_freqs, config);
        let mut h = self.density_in.plain(store, &enc);
        for block in &self.density_blocks {
            h = block.plain(store, &h);
        }
        let a = h.map(|v| v.max(0.0));
        let logit = self.density_logit.plain(store, &a);
        let sigma = logit.map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        (sigma, h)
    }

    pub fn deform_plain(
        &self,
        store: &ParamStore,
        points: &Matrix,
        config: &EncodingConfig,
    ) -> (Matrix, Matrix) {
        let enc = encode_plain(points, config.position_freqs, config);
        let mut h = enc;
        for (i, layer) in self.deform_layers.iter().enumerate() {
            h = layer.plain(store, &h);
            if i + 1 < self.deform_layers.len() {
                h = h.map(|v| v.max(0.0));
            }
        }
        let mut offset = Matrix::zeros(h.rows, 3);
        let mut correction = Matrix::zeros(h.rows, 1);
        for r in 0..h.rows {
            offset.row_mut(r).copy_from_slice(&h.row(r)[0..3]);
            correction.set(r, 0, h.get(r, 3));
        }
        (offset, correction)
    }

    pub fn deformed_density_plain(
        &self,
        store: &ParamStore,
        points: &Matrix,
        config: &EncodingConfig,
    ) -> (Matrix, Matrix) {
        let (offset, correction) = self.deform_plain(store, points, config);
        let mut moved = points.clone();
        for (m, &o) in moved.data.iter_mut().zip(&offset.data) {
            *m += o;
        }
        let (sigma1, feature) = self.density_plain(store, &moved, config);
        let mut sigma2 = sigma1;
        for (s, &c) in sigma2.data.iter_mut().zip(&correction.data) {
            *s = (*s + c).clamp(0.0, 1.0);
        }
        (sigma2, feature)
    }

    pub fn color_plain(
        &self,
        store: &ParamStore,
        feature: &Matrix,
        dirs: &Matrix,
        config: &EncodingConfig,
    ) -> Matrix {
        let enc_dir = encode_plain(dirs, config.direction_freqs, config);
        let mut h = Matrix::zeros(feature.rows, feature.cols + enc_dir.cols);
        for r in 0..feature.rows {
            let dst = h.row_mut(r);
            dst[..feature.cols].copy_from_slice(feature.row(r));
            dst[feature.cols..].copy_from_slice(enc_dir.row(r));
        }
        for (i, layer) in self.color_layers.iter().enumerate() {
            h = layer.plain(store, &h);
            if i + 1 < self.color_layers.len() {
                h = h.map(|v| v.max(0.0));
            }
        }
        h.map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }
}

/// Single-point density query.
pub fn density_eval(
    params: &FieldParams,
    store: &ParamStore,
    x: Vec3,
    config: &EncodingConfig,
) -> (f64, Vec<f64>) {
    let points = Matrix::row_vector(&[x.x, x.y, x.z]);
    let (sigma, feature) = params.density_plain(store, &points, config);
    (sigma.data[0], feature.data)
}

/// Single-point deformed density query.
pub fn deformed_density(
    params: &FieldParams,
    store: &ParamStore,
    x: Vec3,
    config: &EncodingConfig,
) -> f64 {
    let points = Matrix::row_vector(&[x.x, x.y, x.z]);
    let (sigma2, _) = params.deformed_density_plain(store, &points, config);
    sigma2.data[0]
}

/// Single-point color query; `d` must be unit length.
pub fn color_eval(
    params: &FieldParams,
    store: &ParamStore,
    feature: &[f64],
    d: Vec3,
    config: &EncodingConfig,
) -> [f64; 3] {
    let f = Matrix::row_vector(feature);
    let dirs = Matrix::row_vector(&[d.x, d.y, d.z]);
    let rgb = params.color_plain(store, &f, &dirs, config);
    [rgb.data[0], rgb.data[1], rgb.data[2]]
}
