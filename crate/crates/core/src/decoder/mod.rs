//! Feed-forward Gaussian decoder: patch tokens over multi-view latents, hybrid
//! attention / linear-recurrence blocks and a 14-channel Gaussian head.
//!
//! Token order is view-major, then latent frame, then spatial row-major.
//! Each token emits `τ·k²` Gaussians (`k = patch·σ / head_factor`): latent
//! frame 0 covers video frame 0 only, latent frame `l ≥ 1` covers frames
//! `1 + (l−1)τ .. 1 + lτ`.

pub mod inputs;
pub mod layers;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{compute_plucker, CameraIntrinsics, CameraPose, Trajectory, Vec3};
use crate::codec::{ChannelNormalizer, Codec, CodecConfig, LatentTensor};
use crate::error::{invalid, mismatch, Error, Result};
use crate::raster::{subsample_count, Gaussian, GaussianGrid, GaussianScene, CHANNELS};
use crate::rng::rng_for;

pub use inputs::{encode_plucker_latent, encode_time, time_channels, Normalizers, TimeField};
pub use layers::{sigmoid, silu, softplus, Attention, Grads, Linear, Mixer, ParamSet, RmsNorm};

use layers::{silu_grad, AttentionCache, MixerCache};

/// Smallest decoded scale; keeps covariances positive definite.
pub const MIN_SCALE: f64 = 1e-9;
/// Quaternions shorter than this fall back to the identity rotation.
pub const QUAT_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// Distance along the pixel ray plus a bounded in-plane offset.
    RayAnchored,
    /// Raw channels are world coordinates.
    FreeXyz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// One attention layer followed by `mixers_per_block` recurrence layers.
    Hybrid,
    /// Every layer is attention.
    AttentionOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub codec: CodecConfig,
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mixers_per_block: usize,
    /// Recurrent state size per channel.
    pub state: usize,
    pub patch: usize,
    /// Pixels per decoded Gaussian along each axis.
    pub head_factor: usize,
    pub layers: LayerKind,
    pub position: PositionMode,
    /// Scales are capped at a quarter of this.
    pub scene_extent: f64,
    pub init_depth: f64,
    pub init_scale: f64,
    pub init_opacity: f64,
    pub seed: u64,
}

impl DecoderConfig {
    /// Full-size architecture: 16 layers of width 512.
    pub fn reference() -> Self {
        Self {
            codec: CodecConfig::reference(),
            hidden: 512,
            heads: 8,
            blocks: 2,
            mixers_per_block: 7,
            state: 16,
            patch: 2,
            head_factor: 8,
            layers: LayerKind::Hybrid,
            position: PositionMode::RayAnchored,
            scene_extent: 10.0,
            init_depth: 5.0,
            init_scale: 0.1,
            init_opacity: 0.4,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            hidden: 64,
            heads: 4,
            state: 8,
            init_scale: 0.25,
            ..Self::reference()
        }
    }

    /// Smallest configuration used for end-to-end gradient checks.
    pub fn tiny() -> Self {
        Self {
            codec: CodecConfig {
                temporal: 2,
                spatial: 2,
                channels: 4,
            },
            hidden: 16,
            heads: 2,
            blocks: 1,
            state: 4,
            head_factor: 4,
            init_depth: 3.0,
            init_scale: 0.3,
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return invalid(format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if self.blocks == 0 || self.state == 0 || self.patch == 0 || self.head_factor == 0 {
            return invalid("blocks, state, patch and head_factor must be positive");
        }
        let span = self.patch * self.codec.spatial;
        if span % self.head_factor != 0 {
            return invalid(format!("head_factor {} must divide patch·σ = {span}", self.head_factor));
        }
        for (name, v) in [
            ("scene_extent", self.scene_extent),
            ("init_depth", self.init_depth),
            ("init_scale", self.init_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive"));
            }
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return invalid("init_opacity must lie in (0, 1)");
        }
        if self.init_scale >= self.scale_max() {
            return invalid("init_scale must be below the scale cap");
        }
        Ok(())
    }

    /// Gaussians per token along each spatial axis.
    pub fn head_side(&self) -> usize {
        self.patch * self.codec.spatial / self.head_factor
    }

    pub fn scale_max(&self) -> f64 {
        0.25 * self.scene_extent
    }

    fn head_width(&self) -> usize {
        self.codec.temporal * self.head_side() * self.head_side() * CHANNELS
    }

    pub fn layer_count(&self) -> usize {
        self.blocks * (1 + self.mixers_per_block)
    }

    /// Number of decoded Gaussians for `views` videos of `frames × height × width`.
    pub fn output_count(&self, views: usize, frames: usize, height: usize, width: usize) -> Result<u64> {
        self.codec.latent_frames(frames)?;
        let span = self.patch * self.codec.spatial;
        if height % span != 0 || width % span != 0 {
            return mismatch(format!("{height}x{width} not divisible by patch·σ = {span}"));
        }
        subsample_count(views, frames, height, width, self.head_factor)
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Attention(Attention),
    Mixer(Mixer),
}

enum LayerCache {
    Attention(AttentionCache),
    Mixer(MixerCache),
}

#[derive(Clone, Debug)]
struct Layout {
    plucker_in: Linear,
    plucker_out: Linear,
    patch: Linear,
    time_src: Linear,
    time_tgt: Linear,
    layers: Vec<Layer>,
    final_norm: RmsNorm,
    head: Linear,
    head_bias: usize,
}

/// Ray frame a decoded Gaussian is anchored to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorRay {
    pub origin: Vec3,
    /// Ray direction scaled to unit camera depth.
    pub direction: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    /// Half the block footprint per unit depth, horizontally and vertically.
    pub half_extent: [f64; 2],
}

impl AnchorRay {
    /// Ray through the center of Gaussian block `(gx, gy)`.
    pub fn for_block(pose: &CameraPose, k: &CameraIntrinsics, head_factor: usize, gx: usize, gy: usize) -> Self {
        let hf = head_factor as f64;
        let u = gx as f64 * hf + (hf - 1.0) / 2.0;
        let v = gy as f64 * hf + (hf - 1.0) / 2.0;
        Self {
            origin: pose.center,
            direction: pose.rotation * k.backproject(u, v),
            right: pose.right(),
            down: pose.down(),
            half_extent: [0.5 * hf / k.fx, 0.5 * hf / k.fy],
        }
    }
}

/// Maps raw head channels to a valid Gaussian.
pub fn gaussian_activation(raw: &[f64; CHANNELS], ray: &AnchorRay, mode: PositionMode, scale_max: f64) -> Gaussian {
    let position = match mode {
        PositionMode::FreeXyz => Vec3::new(raw[0], raw[1], raw[2]),
        PositionMode::RayAnchored => {
            let d = softplus(raw[0]);
            ray.origin
                + ray.direction * d
                + ray.right * (raw[1].tanh() * ray.half_extent[0] * d)
                + ray.down * (raw[2].tanh() * ray.half_extent[1] * d)
        }
    };
    let scale = Vec3::from_fn(|i, _| softplus(raw[3 + i]).clamp(MIN_SCALE, scale_max));
    let q = [raw[6], raw[7], raw[8], raw[9]];
    let n = crate::raster::quat_norm(&q);
    let rotation = if n < QUAT_EPS {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        q.map(|v| v / n)
    };
    Gaussian {
        position,
        scale,
        rotation,
        opacity: sigmoid(raw[10]),
        color: [sigmoid(raw[11]), sigmoid(raw[12]), sigmoid(raw[13])],
    }
}

/// Pulls a gradient with respect to the activated channels back to the raw channels.
pub fn gaussian_activation_backward(
    raw: &[f64; CHANNELS],
    ray: &AnchorRay,
    mode: PositionMode,
    scale_max: f64,
    grad: &[f64; CHANNELS],
) -> [f64; CHANNELS] {
    let mut out = [0.0; CHANNELS];
    let dp = Vec3::new(grad[0], grad[1], grad[2]);
    match mode {
        PositionMode::FreeXyz => out[..3].copy_from_slice(&grad[..3]),
        PositionMode::RayAnchored => {
            let d = softplus(raw[0]);
            let (t1, t2) = (raw[1].tanh(), raw[2].tanh());
            let [e1, e2] = ray.half_extent;
            let dd = dp.dot(&(ray.direction + ray.right * (t1 * e1) + ray.down * (t2 * e2)));
            out[0] = dd * sigmoid(raw[0]);
            out[1] = dp.dot(&ray.right) * e1 * d * (1.0 - t1 * t1);
            out[2] = dp.dot(&ray.down) * e2 * d * (1.0 - t2 * t2);
        }
    }
    for i in 3..6 {
        let s = softplus(raw[i]);
        if s > MIN_SCALE && s < scale_max {
            out[i] = grad[i] * sigmoid(raw[i]);
        }
    }
    let q = [raw[6], raw[7], raw[8], raw[9]];
    let n = crate::raster::quat_norm(&q);
    if n >= QUAT_EPS {
        let g = &grad[6..10];
        let dot: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / n;
        for i in 0..4 {
            out[6 + i] = (g[i] - q[i] / n * dot) / n;
        }
    }
    for i in 10..14 {
        let s = sigmoid(raw[i]);
        out[i] = grad[i] * s * (1.0 - s);
    }
    out
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Per-view decoder inputs, already normalized.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub latent: LatentTensor,
    /// Encoded ray directions then moments (`2C` channels).
    pub plucker: LatentTensor,
    pub time: Option<TimeField>,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug)]
pub struct DecoderInput {
    pub views: Vec<ViewInput>,
    pub target_time: Option<f64>,
}

impl DecoderInput {
    pub fn subset(&self, views: &[usize]) -> Self {
        Self {
            views: views.iter().map(|&v| self.views[v].clone()).collect(),
            target_time: self.target_time,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    views: usize,
    lp: usize,
    h: usize,
    w: usize,
    th: usize,
    tw: usize,
    frames: usize,
    gh: usize,
    gw: usize,
}

impl Dims {
    fn tokens(&self) -> usize {
        self.views * self.lp * self.th * self.tw
    }

    fn pixels(&self) -> usize {
        self.views * self.lp * self.h * self.w
    }

    fn gaussians(&self) -> usize {
        self.views * self.frames * self.gh * self.gw
    }
}

/// Everything the backward pass needs from a training forward pass.
pub struct DecodeCache {
    dims: Dims,
    use_time: bool,
    plucker_rows: Vec<f64>,
    plucker_pre: Vec<f64>,
    plucker_act: Vec<f64>,
    tok_in: Vec<f64>,
    tsrc: Vec<f64>,
    ttgt: Vec<f64>,
    layer_inputs: Vec<Vec<f64>>,
    layer_caches: Vec<LayerCache>,
    final_x: Vec<f64>,
    final_inv: Vec<f64>,
    final_y: Vec<f64>,
    raw: Vec<[f64; CHANNELS]>,
    rays: Vec<AnchorRay>,
    slots: Vec<usize>,
}

impl DecodeCache {
    pub fn gaussian_count(&self) -> usize {
        self.raw.len()
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub params: ParamSet,
    pub normalizers: Normalizers,
    layout: Layout,
}

/// Latent rows `(v, l, y, x) × channels`.
fn pixel_rows<'a>(tensors: impl Iterator<Item = &'a LatentTensor>, dims: &Dims, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; dims.pixels() * channels];
    for (v, t) in tensors.enumerate() {
        for l in 0..dims.lp {
            for c in 0..channels {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        let row = ((v * dims.lp + l) * dims.h + y) * dims.w + x;
                        out[row * channels + c] = t.data[t.index(l, c, y, x)];
                    }
                }
            }
        }
    }
    out
}

/// Gathers `patch × patch` pixel rows into token rows ordered `(c, dy, dx)`.
fn patchify(rows: &[f64], dims: &Dims, channels: usize, p: usize, scatter: Option<&mut [f64]>) -> Vec<f64> {
    let width = channels * p * p;
    let mut out = if scatter.is_none() {
        vec![0.0; dims.tokens() * width]
    } else {
        Vec::new()
    };
    let mut scatter = scatter;
    let mut tok = 0;
    for v in 0..dims.views {
        for l in 0..dims.lp {
            for py in 0..dims.th {
                for px in 0..dims.tw {
                    for c in 0..channels {
                        for dy in 0..p {
                            for dx in 0..p {
                                let row = ((v * dims.lp + l) * dims.h + py * p + dy) * dims.w + px * p + dx;
                                let col = (c * p + dy) * p + dx;
                                match scatter.as_deref_mut() {
                                    None => out[tok * width + col] = rows[row * channels + c],
                                    Some(dst) => dst[row * channels + c] += rows[tok * width + col],
                                }
                            }
                        }
                    }
                    tok += 1;
                }
            }
        }
    }
    out
}

impl Decoder {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::default();
        let mut rng = rng_for(config.seed, "decoder-init");
        let c = config.codec.channels;
        let cp = c * config.patch * config.patch;
        let d = config.hidden;
        let out_std = 1.0 / ((d * 2 * config.layer_count()) as f64).sqrt();
        let plucker_in = Linear::new(&mut p, "plucker.in", 2 * c, 2 * c, true, &mut rng, (1.0 / (2 * c) as f64).sqrt());
        let plucker_out = Linear::new(&mut p, "plucker.out", 2 * c, c, true, &mut rng, (1.0 / (2 * c) as f64).sqrt());
        let patch = Linear::new(&mut p, "patch", cp, d, true, &mut rng, (1.0 / cp as f64).sqrt());
        let time_src = Linear::new(&mut p, "time.src", cp, d, false, &mut rng, 1.0);
        let time_tgt = Linear::new(&mut p, "time.tgt", cp, d, false, &mut rng, 1.0);
        p.get_mut(time_src.w).fill(0.0);
        p.get_mut(time_tgt.w).fill(0.0);
        let mut layers = Vec::new();
        for b in 0..config.blocks {
            for m in 0..=config.mixers_per_block {
                let name = format!("block{b}.layer{m}");
                let attention = m == 0 || config.layers == LayerKind::AttentionOnly;
                layers.push(if attention {
                    Layer::Attention(Attention::new(&mut p, &name, d, config.heads, &mut rng, out_std))
                } else {
                    Layer::Mixer(Mixer::new(&mut p, &name, d, d, config.state, &mut rng, out_std))
                });
            }
        }
        let final_norm = RmsNorm::new(&mut p, "final.norm", d);
        let head = Linear::new(&mut p, "head", d, config.head_width(), false, &mut rng, 0.1 / (d as f64).sqrt());
        let mut bias = [0.0; CHANNELS];
        if config.position == PositionMode::RayAnchored {
            bias[0] = inverse_softplus(config.init_depth);
        }
        for b in &mut bias[3..6] {
            *b = inverse_softplus(config.init_scale);
        }
        bias[6] = 1.0;
        bias[10] = (config.init_opacity / (1.0 - config.init_opacity)).ln();
        let mut it = bias.into_iter();
        let head_bias = p.add("head.bias", &[CHANNELS], || it.next().unwrap());
        Ok(Self {
            normalizers: Normalizers::identity(c),
            params: p,
            layout: Layout {
                plucker_in,
                plucker_out,
                patch,
                time_src,
                time_tgt,
                layers,
                final_norm,
                head,
                head_bias,
            },
            config,
        })
    }

    pub fn codec(&self) -> Result<Codec> {
        Codec::new(self.config.codec)
    }

    /// Ids of the time-embedding weights, zero until dynamic fine-tuning.
    pub fn time_param_ids(&self) -> [usize; 2] {
        [self.layout.time_src.w, self.layout.time_tgt.w]
    }

    /// Encodes and normalizes raw latents, ray fields and (optionally) time fields.
    pub fn prepare(
        &self,
        codec: &Codec,
        latents: &[LatentTensor],
        trajectories: &[Trajectory],
        target_time: Option<f64>,
    ) -> Result<DecoderInput> {
        if codec.config != self.config.codec {
            return mismatch("codec configuration differs from the decoder's");
        }
        if latents.len() != trajectories.len() || latents.is_empty() {
            return mismatch(format!("{} latents for {} trajectories", latents.len(), trajectories.len()));
        }
        let mut views = Vec::with_capacity(latents.len());
        for (z, traj) in latents.iter().zip(trajectories) {
            let k = &traj.intrinsics;
            let plucker = encode_plucker_latent(&compute_plucker(traj)?, codec)?;
            let time = match target_time {
                None => None,
                Some(t) => {
                    let tf = encode_time(&traj.frame_times, t, codec, k.height, k.width)?;
                    Some(TimeField {
                        src: self.normalizers.time.apply(&tf.src)?,
                        tgt: self.normalizers.time.apply(&tf.tgt)?,
                    })
                }
            };
            views.push(ViewInput {
                latent: self.normalizers.latent.apply(z)?,
                plucker: self.normalizers.plucker.apply(&plucker)?,
                time,
                trajectory: traj.clone(),
            });
        }
        let input = DecoderInput { views, target_time };
        self.dims(&input, target_time.is_some())?;
        Ok(input)
    }

    fn dims(&self, input: &DecoderInput, use_time: bool) -> Result<Dims> {
        let cfg = &self.config;
        let c = cfg.codec.channels;
        let first = input.views.first().ok_or_else(|| Error::InvalidInput("no views".into()))?;
        let (lp, h, w) = (first.latent.frames, first.latent.height, first.latent.width);
        if h % cfg.patch != 0 || w % cfg.patch != 0 || h == 0 || w == 0 {
            return mismatch(format!("latent grid {h}x{w} not divisible by patch {}", cfg.patch));
        }
        let frames = 1 + (lp - 1) * cfg.codec.temporal;
        let (hh, ww) = (h * cfg.codec.spatial, w * cfg.codec.spatial);
        for (i, v) in input.views.iter().enumerate() {
            if v.latent.dims() != (lp, c, h, w) {
                return mismatch(format!("view {i} latent dims {:?}", v.latent.dims()));
            }
            if v.plucker.dims() != (lp, 2 * c, h, w) {
                return mismatch(format!("view {i} ray embedding dims {:?}", v.plucker.dims()));
            }
            if v.trajectory.len() != frames || v.trajectory.intrinsics.height != hh || v.trajectory.intrinsics.width != ww {
                return mismatch(format!(
                    "view {i} trajectory must have {frames} frames at {hh}x{ww}, got {} at {}x{}",
                    v.trajectory.len(),
                    v.trajectory.intrinsics.height,
                    v.trajectory.intrinsics.width
                ));
            }
            if use_time {
                let tf = v.time.as_ref().ok_or_else(|| Error::InvalidInput(format!("view {i} has no time field")))?;
                if tf.src.dims() != (lp, c, h, w) || tf.tgt.dims() != (lp, c, h, w) {
                    return mismatch(format!("view {i} time field dims"));
                }
            }
            if v.latent.data.iter().chain(&v.plucker.data).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("view {i} decoder input")));
            }
        }
        if use_time && !input.target_time.is_some_and(|t| (0.0..=1.0).contains(&t)) {
            return invalid("dynamic decoding needs a target time in [0, 1]");
        }
        let hf = cfg.head_factor;
        Ok(Dims {
            views: input.views.len(),
            lp,
            h,
            w,
            th: h / cfg.patch,
            tw: w / cfg.patch,
            frames,
            gh: hh / hf,
            gw: ww / hf,
        })
    }

    /// Head output offset and anchor ray of every Gaussian, in `[view][frame][gy][gx]` order.
    fn slots(&self, input: &DecoderInput, dims: &Dims) -> (Vec<usize>, Vec<AnchorRay>) {
        let cfg = &self.config;
        let k = cfg.head_side();
        let tau = cfg.codec.temporal;
        let hw = cfg.head_width();
        let mut slots = Vec::with_capacity(dims.gaussians());
        let mut rays = Vec::with_capacity(dims.gaussians());
        for (v, view) in input.views.iter().enumerate() {
            let traj = &view.trajectory;
            for f in 0..dims.frames {
                let (l, s) = if f == 0 { (0, 0) } else { (1 + (f - 1) / tau, (f - 1) % tau) };
                for gy in 0..dims.gh {
                    for gx in 0..dims.gw {
                        let tok = ((v * dims.lp + l) * dims.th + gy / k) * dims.tw + gx / k;
                        slots.push(tok * hw + ((s * k + gy % k) * k + gx % k) * CHANNELS);
                        rays.push(AnchorRay::for_block(&traj.poses[f], &traj.intrinsics, cfg.head_factor, gx, gy));
                    }
                }
            }
        }
        (slots, rays)
    }

    fn run(&self, input: &DecoderInput, use_time: bool, train: bool) -> Result<(Vec<Gaussian>, Option<DecodeCache>)> {
        let dims = self.dims(input, use_time)?;
        let p = &self.params;
        let ly = &self.layout;
        let c = self.config.codec.channels;
        let patch = self.config.patch;
        let n = dims.tokens();

        let plucker_rows = pixel_rows(input.views.iter().map(|v| &v.plucker), &dims, 2 * c);
        let plucker_pre = ly.plucker_in.forward(p, &plucker_rows, dims.pixels());
        let plucker_act: Vec<f64> = plucker_pre.iter().map(|v| silu(*v)).collect();
        let mut s = ly.plucker_out.forward(p, &plucker_act, dims.pixels());
        let z = pixel_rows(input.views.iter().map(|v| &v.latent), &dims, c);
        s.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        let tok_in = patchify(&s, &dims, c, patch, None);
        let mut x = ly.patch.forward(p, &tok_in, n);
        let (mut tsrc, mut ttgt) = (Vec::new(), Vec::new());
        if use_time {
            let times = || input.views.iter().map(|v| v.time.as_ref().expect("checked in dims"));
            tsrc = patchify(&pixel_rows(times().map(|t| &t.src), &dims, c), &dims, c, patch, None);
            ttgt = patchify(&pixel_rows(times().map(|t| &t.tgt), &dims, c), &dims, c, patch, None);
            let a = ly.time_src.forward(p, &tsrc, n);
            let b = ly.time_tgt.forward(p, &ttgt, n);
            for i in 0..x.len() {
                x[i] += a[i];
                x[i] += b[i];
            }
        }

        let mut layer_inputs = Vec::new();
        let mut layer_caches = Vec::new();
        for layer in &ly.layers {
            let next = match (layer, train) {
                (Layer::Attention(a), false) => a.forward(p, &x, n),
                (Layer::Mixer(m), false) => m.forward(p, &x, n),
                (Layer::Attention(a), true) => {
                    let (y, cache) = a.forward_train(p, &x, n);
                    layer_caches.push(LayerCache::Attention(cache));
                    y
                }
                (Layer::Mixer(m), true) => {
                    let (y, cache) = m.forward_train(p, &x, n);
                    layer_caches.push(LayerCache::Mixer(cache));
                    y
                }
            };
            if train {
                layer_inputs.push(std::mem::replace(&mut x, next));
            } else {
                x = next;
            }
        }
        let (final_y, final_inv) = ly.final_norm.forward(p, &x);
        let out = ly.head.forward(p, &final_y, n);

        let bias = p.get(ly.head_bias);
        let (slots, rays) = self.slots(input, &dims);
        let scale_max = self.config.scale_max();
        let mut raw = Vec::with_capacity(slots.len());
        let mut gaussians = Vec::with_capacity(slots.len());
        for (&slot, ray) in slots.iter().zip(&rays) {
            let mut r = [0.0; CHANNELS];
            for ch in 0..CHANNELS {
                r[ch] = out[slot + ch] + bias[ch];
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("decoder head output".into()));
            }
            gaussians.push(gaussian_activation(&r, ray, self.config.position, scale_max));
            raw.push(r);
        }
        let cache = train.then(|| DecodeCache {
            dims,
            use_time,
            plucker_rows,
            plucker_pre,
            plucker_act,
            tok_in,
            tsrc,
            ttgt,
            layer_inputs,
            layer_caches,
            final_x: x,
            final_inv,
            final_y,
            raw,
            rays,
            slots,
        });
        Ok((gaussians, cache))
    }

    fn scene(&self, gaussians: Vec<Gaussian>, input: &DecoderInput, dynamic: bool) -> GaussianScene {
        GaussianScene {
            gaussians,
            time_stamp: if dynamic { input.target_time } else { None },
        }
    }

    pub fn decode_static(&self, input: &DecoderInput) -> Result<GaussianScene> {
        let (g, _) = self.run(input, false, false)?;
        Ok(self.scene(g, input, false))
    }

    /// As [`Decoder::decode_static`] with the time fields added to the tokens.
    pub fn decode_dynamic(&self, input: &DecoderInput) -> Result<GaussianScene> {
        let (g, _) = self.run(input, true, false)?;
        Ok(self.scene(g, input, true))
    }

    pub fn decode(&self, input: &DecoderInput, dynamic: bool) -> Result<GaussianScene> {
        if dynamic {
            self.decode_dynamic(input)
        } else {
            self.decode_static(input)
        }
    }

    /// The decoded Gaussians arranged on their `[view][frame][gy][gx]` grid.
    pub fn decode_grid(&self, input: &DecoderInput, dynamic: bool) -> Result<GaussianGrid> {
        let dims = self.dims(input, dynamic)?;
        let scene = self.decode(input, dynamic)?;
        Ok(GaussianGrid {
            views: dims.views,
            frames: dims.frames,
            height: dims.gh,
            width: dims.gw,
            gaussians: scene.gaussians,
        })
    }

    /// Forward pass that keeps intermediate activations for [`Decoder::backward`].
    pub fn forward_train(&self, input: &DecoderInput, dynamic: bool) -> Result<(GaussianScene, DecodeCache)> {
        let (g, cache) = self.run(input, dynamic, true)?;
        Ok((self.scene(g, input, dynamic), cache.expect("training pass keeps a cache")))
    }

    /// Parameter gradient given the loss gradient with respect to every decoded
    /// Gaussian (in [`Gaussian::to_channels`] layout).
    pub fn backward(&self, cache: &DecodeCache, dgauss: &[[f64; CHANNELS]]) -> Result<Vec<f64>> {
        if dgauss.len() != cache.raw.len() {
            return mismatch(format!("{} gradients for {} gaussians", dgauss.len(), cache.raw.len()));
        }
        let p = &self.params;
        let ly = &self.layout;
        let dims = &cache.dims;
        let n = dims.tokens();
        let c = self.config.codec.channels;
        let mut g = Grads::zeros(p);

        let mut dout = vec![0.0; n * self.config.head_width()];
        let mut dbias = [0.0; CHANNELS];
        let scale_max = self.config.scale_max();
        for (i, dg) in dgauss.iter().enumerate() {
            let draw = gaussian_activation_backward(&cache.raw[i], &cache.rays[i], self.config.position, scale_max, dg);
            let slot = cache.slots[i];
            for ch in 0..CHANNELS {
                dout[slot + ch] += draw[ch];
                dbias[ch] += draw[ch];
            }
        }
        g.get_mut(ly.head_bias).iter_mut().zip(dbias).for_each(|(a, b)| *a += b);
        let dy = ly.head.backward(p, &cache.final_y, n, &dout, &mut g);
        let mut dx = ly.final_norm.backward(p, &cache.final_x, &cache.final_inv, &dy, &mut g);
        for (i, layer) in ly.layers.iter().enumerate().rev() {
            let xi = &cache.layer_inputs[i];
            dx = match (layer, &cache.layer_caches[i]) {
                (Layer::Attention(a), LayerCache::Attention(lc)) => a.backward(p, xi, n, lc, &dx, &mut g),
                (Layer::Mixer(m), LayerCache::Mixer(lc)) => m.backward(p, xi, n, lc, &dx, &mut g),
                _ => unreachable!("layer and cache kinds are built together"),
            };
        }
        if cache.use_time {
            ly.time_src.accumulate(&cache.tsrc, n, &dx, &mut g);
            ly.time_tgt.accumulate(&cache.ttgt, n, &dx, &mut g);
        }
        let dtok = ly.patch.backward(p, &cache.tok_in, n, &dx, &mut g);
        let mut ds = vec![0.0; dims.pixels() * c];
        patchify(&dtok, dims, c, self.config.patch, Some(&mut ds));
        let dact = ly.plucker_out.backward(p, &cache.plucker_act, dims.pixels(), &ds, &mut g);
        let dpre: Vec<f64> = dact.iter().zip(&cache.plucker_pre).map(|(d, x)| d * silu_grad(*x)).collect();
        ly.plucker_in.accumulate(&cache.plucker_rows, dims.pixels(), &dpre, &mut g);
        Ok(g.data)
    }

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        let cfg = toml::to_string(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_u32(&mut w, cfg.len())?;
        w.write_all(cfg.as_bytes())?;
        let norms = self.normalizer_blobs();
        write_u32(&mut w, self.params.len() + norms.len())?;
        for id in 0..self.params.len() {
            write_blob(&mut w, &self.params.names[id], &self.params.shapes[id], self.params.get(id))?;
        }
        for (name, data) in &norms {
            write_blob(&mut w, name, &[data.len()], data)?;
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a decoder checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let cfg = String::from_utf8(cfg).map_err(|e| Error::Format(e.to_string()))?;
        let config: DecoderConfig = toml::from_str(&cfg).map_err(|e| Error::Format(e.to_string()))?;
        let mut dec = Decoder::new(config)?;
        let count = read_u32(&mut r)?;
        let mut seen = vec![false; dec.params.len()];
        let mut norms = std::collections::HashMap::new();
        for _ in 0..count {
            let (name, shape, data) = read_blob(&mut r)?;
            if let Some(key) = name.strip_prefix("normalizer.") {
                norms.insert(key.to_string(), data);
                continue;
            }
            let id = dec.params.id(&name).ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if dec.params.shapes[id] != shape {
                return Err(Error::Format(format!("parameter {name} has shape {shape:?}")));
            }
            dec.params.get_mut(id).copy_from_slice(&data);
            seen[id] = true;
        }
        if let Some(id) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("missing parameter {}", dec.params.names[id])));
        }
        let mut take = |key: &str| {
            norms
                .remove(key)
                .ok_or_else(|| Error::Format(format!("missing normalizer {key}")))
        };
        let mut norm = |name: &str| -> Result<ChannelNormalizer> {
            Ok(ChannelNormalizer {
                mean: take(&format!("{name}.mean"))?,
                std: take(&format!("{name}.std"))?,
            })
        };
        dec.normalizers = Normalizers {
            latent: norm("latent")?,
            plucker: norm("plucker")?,
            time: norm("time")?,
        };
        Ok(dec)
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    fn normalizer_blobs(&self) -> Vec<(String, Vec<f64>)> {
        let n = &self.normalizers;
        let mut out = Vec::new();
        for (name, norm) in [("latent", &n.latent), ("plucker", &n.plucker), ("time", &n.time)] {
            out.push((format!("normalizer.{name}.mean"), norm.mean.clone()));
            out.push((format!("normalizer.{name}.std"), norm.std.clone()));
        }
        out
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"LYRD";
const CHECKPOINT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_blob(w: &mut impl Write, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    write_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    write_u32(w, shape.len())?;
    for &d in shape {
        write_u32(w, d)?;
    }
    for v in data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_blob(r: &mut impl Read) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let len = read_u32(r)? as usize;
    if len > 4096 {
        return Err(Error::Format("blob name too long".into()));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("blob {name} has rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((name, shape, data))
}
