//! Parameter-free video latent codec: an orthonormal separable block transform
//! (DCT-II over time and space, a fixed orthonormal color basis) truncated to
//! the `C` lowest-frequency coefficients per block.
//!
//! The first frame is coded alone; every later group of `τ` frames is coded
//! jointly, giving `L' = (L − 1)/τ + 1` latent frames.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::imgbuf::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// τ, frames per temporal group.
    pub temporal: usize,
    /// σ, pixels per block side.
    pub spatial: usize,
    /// C, retained coefficients per block.
    pub channels: usize,
}

impl CodecConfig {
    pub fn new(temporal: usize, spatial: usize, channels: usize) -> Result<Self> {
        let c = Self {
            temporal,
            spatial,
            channels,
        };
        c.validate()?;
        Ok(c)
    }

    /// τ = 8, σ = 8, C = 16.
    pub fn reference() -> Self {
        Self {
            temporal: 8,
            spatial: 8,
            channels: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (t, s, c) = (self.temporal, self.spatial, self.channels);
        if t == 0 || s == 0 || c == 0 {
            return invalid(format!("codec factors must be positive (τ={t}, σ={s}, C={c})"));
        }
        // The first frame is coded alone, so its blocks only hold 3σ² coefficients.
        if c > 3 * s * s {
            return invalid(format!("C={c} exceeds the 3σ²={} coefficients of a single-frame block", 3 * s * s));
        }
        Ok(())
    }

    pub fn latent_frames(&self, frames: usize) -> Result<usize> {
        latent_frames(frames, self.temporal)
    }

    /// `(L', C, h, w)` for an `L × 3 × H × W` video.
    pub fn latent_dims(&self, frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        let lp = self.latent_frames(frames)?;
        if height % self.spatial != 0 || width % self.spatial != 0 {
            return mismatch(format!("{height}x{width} not divisible by σ={}", self.spatial));
        }
        Ok((lp, self.channels, height / self.spatial, width / self.spatial))
    }

    /// Video frame indices covered by latent frame `l`.
    pub fn group_frames(&self, l: usize) -> std::ops::Range<usize> {
        if l == 0 {
            0..1
        } else {
            1 + (l - 1) * self.temporal..1 + l * self.temporal
        }
    }
}

/// `L' = (L − 1)/τ + 1`; rejects lengths with `L ≢ 1 (mod τ)`.
pub fn latent_frames(frames: usize, temporal: usize) -> Result<usize> {
    if frames == 0 || temporal == 0 || (frames - 1) % temporal != 0 {
        return invalid(format!("L={frames} is not 1 mod τ={temporal}"));
    }
    Ok((frames - 1) / temporal + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LatentTensor {
    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
            data: vec![0.0; frames * channels * height * width],
        }
    }

    #[inline]
    pub fn index(&self, l: usize, c: usize, y: usize, x: usize) -> usize {
        ((l * self.channels + c) * self.height + y) * self.width + x
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.channels, self.height, self.width)
    }
}

/// Orthonormal DCT-II matrix, rows are basis vectors.
pub fn dct_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| norm * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .collect()
        })
        .collect()
}

/// Luma-first orthonormal color basis.
pub fn color_basis() -> [[f64; 3]; 3] {
    let a = 1.0 / 3f64.sqrt();
    let b = 1.0 / 2f64.sqrt();
    let c = 1.0 / 6f64.sqrt();
    [[a, a, a], [b, 0.0, -b], [c, -2.0 * c, c]]
}

/// Basis index `(kt, ky, kx, kc)`.
pub type BasisIndex = [usize; 4];

/// The first `count` indices of a `nt × σ × σ × 3` basis in zig-zag order:
/// ascending total frequency `kt + ky + kx + kc`, then by `kc, kt, ky, kx`.
pub fn retained_indices(nt: usize, spatial: usize, count: usize) -> Vec<BasisIndex> {
    let mut all = Vec::with_capacity(nt * spatial * spatial * 3);
    for kt in 0..nt {
        for ky in 0..spatial {
            for kx in 0..spatial {
                for kc in 0..3 {
                    all.push([kt, ky, kx, kc]);
                }
            }
        }
    }
    all.sort_by_key(|&[kt, ky, kx, kc]| (kt + ky + kx + kc, kc, kt, ky, kx));
    all.truncate(count);
    all
}

#[derive(Clone, Debug)]
pub struct Codec {
    pub config: CodecConfig,
    dct_t: Vec<Vec<f64>>,
    dct_s: Vec<Vec<f64>>,
    first: Vec<BasisIndex>,
    group: Vec<BasisIndex>,
}

impl Codec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            dct_t: dct_matrix(config.temporal),
            dct_s: dct_matrix(config.spatial),
            first: retained_indices(1, config.spatial, config.channels),
            group: retained_indices(config.temporal, config.spatial, config.channels),
        })
    }

    /// Retained basis indices for latent frame 0 (`first = true`) or later frames.
    pub fn retained(&self, first: bool) -> &[BasisIndex] {
        if first {
            &self.first
        } else {
            &self.group
        }
    }

    fn check_video(&self, video: &[Image]) -> Result<(usize, usize)> {
        let Some(f0) = video.first() else {
            return invalid("empty video");
        };
        if f0.channels != 3 {
            return mismatch(format!("codec expects 3-channel frames, got {}", f0.channels));
        }
        for f in video {
            f.ensure_same_shape(f0, "video frame")?;
        }
        self.config.latent_dims(video.len(), f0.height, f0.width)?;
        Ok((f0.height, f0.width))
    }

    /// Encodes an RGB video in `[0, 1]`.
    pub fn encode(&self, video: &[Image]) -> Result<LatentTensor> {
        for f in video {
            if f.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("video sample".into()));
            }
            if f.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return invalid("video values outside [0, 1]");
            }
        }
        self.encode_raw(video)
    }

    /// Encodes any 3-channel signal without range checks (ray and time fields).
    pub fn encode_raw(&self, video: &[Image]) -> Result<LatentTensor> {
        let (h, w) = self.check_video(video)?;
        let (lp, c, bh, bw) = self.config.latent_dims(video.len(), h, w)?;
        let mut out = LatentTensor::zeros(lp, c, bh, bw);
        for l in 0..lp {
            let frames = &video[self.config.group_frames(l)];
            let coeffs = self.forward_group(frames);
            self.gather(&coeffs, l, &mut out);
        }
        Ok(out)
    }

    /// Inverse transform with dropped coefficients zero-filled, no clamping.
    pub fn decode_raw(&self, latent: &LatentTensor) -> Result<Vec<Image>> {
        if latent.channels != self.config.channels || latent.frames == 0 {
            return mismatch(format!(
                "latent has {} channels / {} frames, codec expects C={}",
                latent.channels, latent.frames, self.config.channels
            ));
        }
        let s = self.config.spatial;
        let (h, w) = (latent.height * s, latent.width * s);
        let mut video = Vec::new();
        for l in 0..latent.frames {
            let nt = self.config.group_frames(l).len();
            let mut coeffs = vec![Image::new(3, h, w); nt];
            self.scatter(latent, l, &mut coeffs);
            video.extend(self.inverse_group(coeffs));
        }
        Ok(video)
    }

    /// `decode_raw` clamped to `[0, 1]`.
    pub fn decode_rgb(&self, latent: &LatentTensor) -> Result<Vec<Image>> {
        let mut v = self.decode_raw(latent)?;
        for f in &mut v {
            f.data.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        }
        Ok(v)
    }

    /// Full coefficient cube of one group: `[kt]` images with channel `kc` and
    /// pixel `(by·σ + ky, bx·σ + kx)` holding coefficient `(kt, ky, kx, kc)` of block `(by, bx)`.
    fn forward_group(&self, frames: &[Image]) -> Vec<Image> {
        let nt = frames.len();
        let col = color_basis();
        let spatial: Vec<Image> = frames
            .iter()
            .map(|f| {
                let mut mixed = Image::new(3, f.height, f.width);
                let n = f.height * f.width;
                for kc in 0..3 {
                    for i in 0..n {
                        mixed.data[kc * n + i] =
                            col[kc][0] * f.data[i] + col[kc][1] * f.data[n + i] + col[kc][2] * f.data[2 * n + i];
                    }
                }
                self.block_transform(&mixed, false)
            })
            .collect();
        self.temporal_mix(spatial, nt, false)
    }

    fn inverse_group(&self, coeffs: Vec<Image>) -> Vec<Image> {
        let nt = coeffs.len();
        let col = color_basis();
        self.temporal_mix(coeffs, nt, true)
            .into_iter()
            .map(|c| {
                let mixed = self.block_transform(&c, true);
                let n = mixed.height * mixed.width;
                let mut f = Image::new(3, mixed.height, mixed.width);
                for ch in 0..3 {
                    for i in 0..n {
                        f.data[ch * n + i] = col[0][ch] * mixed.data[i]
                            + col[1][ch] * mixed.data[n + i]
                            + col[2][ch] * mixed.data[2 * n + i];
                    }
                }
                f
            })
            .collect()
    }

    fn temporal_mix(&self, frames: Vec<Image>, nt: usize, inverse: bool) -> Vec<Image> {
        if nt == 1 {
            return frames;
        }
        let m = &self.dct_t;
        let len = frames[0].data.len();
        let mut out = vec![Image::new(frames[0].channels, frames[0].height, frames[0].width); nt];
        for (k, o) in out.iter_mut().enumerate() {
            for (t, f) in frames.iter().enumerate() {
                let wgt = if inverse { m[t][k] } else { m[k][t] };
                for i in 0..len {
                    o.data[i] += wgt * f.data[i];
                }
            }
        }
        out
    }

    /// Applies `D X Dᵀ` (or `Dᵀ X D` when inverse) to every σ×σ block of every channel.
    fn block_transform(&self, img: &Image, inverse: bool) -> Image {
        let s = self.config.spatial;
        let d = &self.dct_s;
        let m = |a: usize, b: usize| if inverse { d[b][a] } else { d[a][b] };
        let mut out = Image::new(img.channels, img.height, img.width);
        let mut tmp = vec![0.0; s * s];
        for c in 0..img.channels {
            for by in (0..img.height).step_by(s) {
                for bx in (0..img.width).step_by(s) {
                    for ky in 0..s {
                        for x in 0..s {
                            tmp[ky * s + x] = (0..s).map(|y| m(ky, y) * img.get(c, by + y, bx + x)).sum();
                        }
                    }
                    for ky in 0..s {
                        for kx in 0..s {
                            let v = (0..s).map(|x| m(kx, x) * tmp[ky * s + x]).sum();
                            out.set(c, by + ky, bx + kx, v);
                        }
                    }
                }
            }
        }
        out
    }

    fn gather(&self, coeffs: &[Image], l: usize, out: &mut LatentTensor) {
        let s = self.config.spatial;
        for (c, &[kt, ky, kx, kc]) in self.retained(l == 0).iter().enumerate() {
            for by in 0..out.height {
                for bx in 0..out.width {
                    let i = out.index(l, c, by, bx);
                    out.data[i] = coeffs[kt].get(kc, by * s + ky, bx * s + kx);
                }
            }
        }
    }

    fn scatter(&self, latent: &LatentTensor, l: usize, coeffs: &mut [Image]) {
        let s = self.config.spatial;
        for (c, &[kt, ky, kx, kc]) in self.retained(l == 0).iter().enumerate() {
            for by in 0..latent.height {
                for bx in 0..latent.width {
                    coeffs[kt].set(kc, by * s + ky, bx * s + kx, latent.data[latent.index(l, c, by, bx)]);
                }
            }
        }
    }

    /// The full `(nt·σ²·3)²` block transform; rows are basis vectors in
    /// `(kt, ky, kx, kc)` order, columns are samples in `(t, y, x, c)` order.
    pub fn block_matrix(&self, first: bool) -> Vec<Vec<f64>> {
        let nt = if first { 1 } else { self.config.temporal };
        let s = self.config.spatial;
        let dt = dct_matrix(nt);
        let col = color_basis();
        let n = nt * s * s * 3;
        let flat = |t: usize, y: usize, x: usize, c: usize| ((t * s + y) * s + x) * 3 + c;
        let mut rows = vec![vec![0.0; n]; n];
        for kt in 0..nt {
            for ky in 0..s {
                for kx in 0..s {
                    for kc in 0..3 {
                        let r = &mut rows[flat(kt, ky, kx, kc)];
                        for t in 0..nt {
                            for y in 0..s {
                                for x in 0..s {
                                    for c in 0..3 {
                                        r[flat(t, y, x, c)] =
                                            dt[kt][t] * self.dct_s[ky][y] * self.dct_s[kx][x] * col[kc][c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        rows
    }
}

/// Per-channel affine normalization of latent-space inputs, fitted on a calibration batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelNormalizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn fit<'a>(latents: impl IntoIterator<Item = &'a LatentTensor>) -> Result<Self> {
        let mut sum = Vec::new();
        let mut sq = Vec::new();
        let mut count = 0usize;
        for z in latents {
            if sum.is_empty() {
                sum = vec![0.0; z.channels];
                sq = vec![0.0; z.channels];
            } else if sum.len() != z.channels {
                return mismatch("calibration latents disagree on channel count");
            }
            let plane = z.height * z.width;
            for l in 0..z.frames {
                for c in 0..z.channels {
                    let start = z.index(l, c, 0, 0);
                    for v in &z.data[start..start + plane] {
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
            }
            count += z.frames * plane;
        }
        if count == 0 {
            return invalid("empty calibration batch");
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() > 1e-8 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, z: &LatentTensor) -> Result<LatentTensor> {
        if z.channels != self.mean.len() {
            return mismatch("normalizer channel count");
        }
        let mut out = z.clone();
        let plane = z.height * z.width;
        for l in 0..z.frames {
            for c in 0..z.channels {
                let start = z.index(l, c, 0, 0);
                for v in &mut out.data[start..start + plane] {
                    *v = (*v - self.mean[c]) / self.std[c];
                }
            }
        }
        Ok(out)
    }
}

const LATENT_MAGIC: &[u8; 4] = b"LYRL";
const LATENT_VERSION: u32 = 1;

/// Writes `(V, L', C, h, w)` latents as little-endian f32 after a fixed header.
pub fn write_latents(mut w: impl Write, views: &[LatentTensor]) -> Result<()> {
    let Some(first) = views.first() else {
        return invalid("no latent views to write");
    };
    if views.iter().any(|v| v.dims() != first.dims()) {
        return mismatch("latent views disagree on dims");
    }
    let (lp, c, h, wd) = first.dims();
    w.write_all(LATENT_MAGIC)?;
    for v in [LATENT_VERSION, views.len() as u32, lp as u32, c as u32, h as u32, wd as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(views.len() * first.data.len() * 4);
    for v in views {
        for x in &v.data {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_latents(mut r: impl Read) -> Result<Vec<LatentTensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LATENT_MAGIC {
        return Err(Error::Format("bad latent magic".into()));
    }
    let mut hdr = [0u32; 6];
    for v in hdr.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [version, nv, lp, c, h, w] = hdr.map(|v| v as usize);
    if version != LATENT_VERSION as usize {
        return Err(Error::Format(format!("unsupported latent version {version}")));
    }
    let per = lp * c * h * w;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != nv * per * 4 {
        return Err(Error::Format(format!(
            "latent payload is {} bytes, header implies {}",
            bytes.len(),
            nv * per * 4
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(vals
        .chunks(per.max(1))
        .take(nv)
        .map(|d| LatentTensor {
            frames: lp,
            channels: c,
            height: h,
            width: w,
            data: d.to_vec(),
        })
        .collect())
}

pub fn save_latents(path: &Path, views: &[LatentTensor]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_latents(std::io::BufWriter::new(f), views)
}

pub fn load_latents(path: &Path) -> Result<Vec<LatentTensor>> {
    read_latents(std::io::BufReader::new(std::fs::File::open(path)?))
}
