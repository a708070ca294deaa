//! Latent-space encodings of camera rays and frame times.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::camera::PluckerImage;
use crate::codec::{ChannelNormalizer, Codec, LatentTensor};
use crate::error::{invalid, mismatch, Result};
use crate::imgbuf::Image;

/// Codec-encoded ray directions followed by moments: `L' × 2C × h × w`.
pub fn encode_plucker_latent(plucker: &PluckerImage, codec: &Codec) -> Result<LatentTensor> {
    let s = codec.config.spatial;
    if plucker.height % s != 0 || plucker.width % s != 0 {
        return mismatch(format!(
            "plucker field {}x{} not divisible by spatial factor {s}",
            plucker.height, plucker.width
        ));
    }
    let dirs: Vec<Image> = (0..plucker.frames).map(|f| plucker.frame_image(f, false)).collect();
    let moms: Vec<Image> = (0..plucker.frames).map(|f| plucker.frame_image(f, true)).collect();
    let d = codec.encode_raw(&dirs)?;
    let m = codec.encode_raw(&moms)?;
    Ok(concat_channels(&d, &m))
}

pub(crate) fn concat_channels(a: &LatentTensor, b: &LatentTensor) -> LatentTensor {
    let mut out = LatentTensor::zeros(a.frames, a.channels + b.channels, a.height, a.width);
    let plane = a.height * a.width;
    for l in 0..a.frames {
        for c in 0..a.channels {
            let src = a.index(l, c, 0, 0);
            let dst = out.index(l, c, 0, 0);
            out.data[dst..dst + plane].copy_from_slice(&a.data[src..src + plane]);
        }
        for c in 0..b.channels {
            let src = b.index(l, c, 0, 0);
            let dst = out.index(l, a.channels + c, 0, 0);
            out.data[dst..dst + plane].copy_from_slice(&b.data[src..src + plane]);
        }
    }
    out
}

/// The three time channels `(t, sin 2πt, cos 2πt)`.
pub fn time_channels(t: f64) -> [f64; 3] {
    [t, (TAU * t).sin(), (TAU * t).cos()]
}

/// Source and target time fields for one view, each `L' × C × h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeField {
    pub src: LatentTensor,
    pub tgt: LatentTensor,
}

fn time_video(times: impl Iterator<Item = f64>, height: usize, width: usize) -> Vec<Image> {
    times
        .map(|t| {
            let ch = time_channels(t);
            let mut img = Image::new(3, height, width);
            for (c, v) in ch.iter().enumerate() {
                img.plane_mut(c).iter_mut().for_each(|x| *x = *v);
            }
            img
        })
        .collect()
}

/// Encodes per-frame source times and a target time replicated over all frames.
pub fn encode_time(src_times: &[f64], tgt_time: f64, codec: &Codec, height: usize, width: usize) -> Result<TimeField> {
    if src_times.is_empty() {
        return invalid("no source times");
    }
    for &t in src_times.iter().chain(std::iter::once(&tgt_time)) {
        if !(0.0..=1.0).contains(&t) {
            return invalid(format!("time {t} outside [0, 1]"));
        }
    }
    let src = codec.encode_raw(&time_video(src_times.iter().copied(), height, width))?;
    let tgt = codec.encode_raw(&time_video(src_times.iter().map(|_| tgt_time), height, width))?;
    Ok(TimeField { src, tgt })
}

/// Affine normalizers applied to every decoder input, stored with the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub latent: ChannelNormalizer,
    pub plucker: ChannelNormalizer,
    pub time: ChannelNormalizer,
}

impl Normalizers {
    pub fn identity(channels: usize) -> Self {
        Self {
            latent: ChannelNormalizer::identity(channels),
            plucker: ChannelNormalizer::identity(2 * channels),
            time: ChannelNormalizer::identity(channels),
        }
    }

    /// Fits the time normalizer on a uniform sweep of times; latent and ray
    /// normalizers come from calibration batches.
    pub fn fit(latents: &[LatentTensor], pluckers: &[LatentTensor], codec: &Codec, height: usize, width: usize) -> Result<Self> {
        let sweep: Vec<f64> = (0..=32).map(|i| i as f64 / 32.0).collect();
        let mut fields = Vec::new();
        let frames = 1 + codec.config.temporal;
        for w in sweep.windows(2) {
            let times: Vec<f64> = (0..frames).map(|i| w[0] + (w[1] - w[0]) * i as f64 / frames as f64).collect();
            let tf = encode_time(&times, w[0], codec, height, width)?;
            fields.push(tf.src);
        }
        Ok(Self {
            latent: ChannelNormalizer::fit(latents)?,
            plucker: ChannelNormalizer::fit(pluckers)?,
            time: ChannelNormalizer::fit(&fields)?,
        })
    }
}
