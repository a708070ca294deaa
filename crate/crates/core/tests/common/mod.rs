#![allow(dead_code)]

use latsplat::camera::{uniform_times, CameraIntrinsics, CameraPose, Trajectory, Vec3};
use latsplat::codec::LatentTensor;
use latsplat::decoder::{Decoder, DecoderConfig, DecoderInput};
use latsplat::raster::{render_opts, render_with_gradients_opts, RenderAdjoint, RenderOptions};
use latsplat::rng::rng_for;
use latsplat::Image;
use rand::Rng as _;

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
    pub worst_name: String,
    pub failures: Vec<String>,
}

/// Tiny dynamic decoder with random time weights, a 3-frame input and a
/// fixed render pose, so every parameter influences the loss.
pub struct TinyProblem {
    pub decoder: Decoder,
    pub input: DecoderInput,
    pub pose: CameraPose,
    pub k: CameraIntrinsics,
    pub adjoint: RenderAdjoint,
    pub opacity_weight: f64,
}

impl TinyProblem {
    pub fn new(seed: u64) -> Self {
        let cfg = DecoderConfig {
            seed,
            ..DecoderConfig::tiny()
        };
        let mut decoder = Decoder::new(cfg.clone()).unwrap();
        let codec = decoder.codec().unwrap();
        let mut rng = rng_for(seed, "tiny-problem");
        for id in decoder.time_param_ids() {
            decoder.params.get_mut(id).iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
        let size = 16;
        let frames = 3;
        let k = CameraIntrinsics::from_fov(size, size, 60.0).unwrap();
        let (lp, c, h, w) = cfg.codec.latent_dims(frames, size, size).unwrap();
        let mut z = LatentTensor::zeros(lp, c, h, w);
        z.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let poses: Vec<CameraPose> = (0..frames)
            .map(|i| {
                let c = Vec3::new(0.2 * i as f64 - 0.2, 0.1, -2.0);
                CameraPose::look_at(c, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0)).unwrap()
            })
            .collect();
        let traj = Trajectory::new(poses, k, uniform_times(frames)).unwrap();
        let input = decoder.prepare(&codec, &[z], &[traj], Some(0.4)).unwrap();
        let pose = CameraPose::look_at(Vec3::new(0.1, -0.1, -2.2), Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let mut adjoint = RenderAdjoint::zeros(size, size);
        for img in [&mut adjoint.image, &mut adjoint.alpha, &mut adjoint.depth] {
            img.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        adjoint.depth.data.iter_mut().for_each(|v| *v *= 0.1);
        Self {
            decoder,
            input,
            pose,
            k,
            adjoint,
            opacity_weight: 0.1,
        }
    }

    fn opts() -> RenderOptions {
        RenderOptions { cutoff_q: f64::INFINITY }
    }

    fn dot(a: &Image, b: &Image) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    pub fn loss(&self, decoder: &Decoder) -> f64 {
        let scene = decoder.decode_dynamic(&self.input).unwrap();
        let out = render_opts(&scene, &self.pose, &self.k, &Self::opts()).unwrap();
        let opacity = scene.gaussians.iter().map(|g| g.opacity).sum::<f64>() / scene.len() as f64;
        Self::dot(&out.image, &self.adjoint.image)
            + Self::dot(&out.alpha, &self.adjoint.alpha)
            + Self::dot(&out.depth, &self.adjoint.depth)
            + self.opacity_weight * opacity
    }

    pub fn gradient(&self) -> Vec<f64> {
        let (scene, cache) = self.decoder.forward_train(&self.input, true).unwrap();
        let (_, mut dg) = render_with_gradients_opts(&scene, &self.pose, &self.k, &self.adjoint, &Self::opts()).unwrap();
        let w = self.opacity_weight / scene.len() as f64;
        dg.iter_mut().for_each(|g| g[10] += w);
        self.decoder.backward(&cache, &dg).unwrap()
    }

    /// Central differences over every parameter; coordinates whose analytic and
    /// numeric gradients are both below `floor` are counted as skipped.
    pub fn check(&self, step: f64, rel_tol: f64, floor: f64) -> GradCheck {
        let grad = self.gradient();
        let mut probe = self.decoder.clone();
        let mut report = GradCheck {
            checked: 0,
            skipped: 0,
            worst_rel: 0.0,
            worst_name: String::new(),
            failures: Vec::new(),
        };
        for id in 0..probe.params.len() {
            let range = probe.params.range(id);
            for i in range.clone() {
                let orig = probe.params.data[i];
                probe.params.data[i] = orig + step;
                let lp = self.loss(&probe);
                probe.params.data[i] = orig - step;
                let lm = self.loss(&probe);
                probe.params.data[i] = orig;
                let fd = (lp - lm) / (2.0 * step);
                let an = grad[i];
                let scale = fd.abs().max(an.abs());
                if scale <= floor {
                    report.skipped += 1;
                    continue;
                }
                report.checked += 1;
                let rel = (fd - an).abs() / scale;
                let name = format!("{}[{}]", probe.params.names[id], i - range.start);
                if rel > report.worst_rel {
                    report.worst_rel = rel;
                    report.worst_name = name.clone();
                }
                if rel >= rel_tol {
                    report.failures.push(format!("{name}: analytic {an:.6e} numeric {fd:.6e}"));
                }
            }
        }
        report
    }
}
