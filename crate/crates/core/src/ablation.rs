//! Scripted property checks: conservative masking on a two-plane occluder,
//! opacity-pruning speedup, and token-mixer cost scaling.

use std::time::Instant;

use rand::Rng as _;

use crate::cache::{conservative_warp, ConservativeWarp};
use crate::camera::{unproject_depth, CameraIntrinsics, CameraPose, Vec3};
use crate::decoder::{Attention, Mixer, ParamSet};
use crate::error::Result;
use crate::imgbuf::Image;
use crate::raster::{prune_by_opacity, render, Gaussian, GaussianScene};
use crate::rng::rng_for;

/// Frontal occluder square at `z = FG_Z` with half-extent `FG_HALF`, in front of
/// an unbounded frontal wall at `z = BG_Z`; the source camera sits at the origin.
pub const FG_Z: f64 = 2.0;
pub const FG_HALF: f64 = 0.4;
pub const BG_Z: f64 = 5.0;

fn hits_occluder(origin: &Vec3, dir: &Vec3) -> Option<f64> {
    if dir.z <= 0.0 {
        return None;
    }
    let t = (FG_Z - origin.z) / dir.z;
    let p = origin + dir * t;
    (t > 0.0 && p.x.abs() <= FG_HALF && p.y.abs() <= FG_HALF).then_some(t)
}

/// Ray-cast image and depth of the two-plane scene. Occluder pixels are light,
/// wall pixels follow a checker so the warp has structure.
pub fn two_plane_view(pose: &CameraPose, k: &CameraIntrinsics) -> (Image, Image) {
    let mut img = Image::new(3, k.height, k.width);
    let mut depth = Image::filled(1, k.height, k.width, f64::INFINITY);
    for y in 0..k.height {
        for x in 0..k.width {
            let d = pose.ray_direction(k, x as f64, y as f64);
            let (p, color) = match hits_occluder(&pose.center, &d) {
                Some(t) => (pose.center + d * t, [0.9, 0.8, 0.7]),
                None if d.z > 0.0 => {
                    let p = pose.center + d * ((BG_Z - pose.center.z) / d.z);
                    let c = if ((p.x * 2.0).floor() + (p.y * 2.0).floor()) as i64 % 2 == 0 { 0.2 } else { 0.5 };
                    (p, [c, c, 0.3])
                }
                None => continue,
            };
            depth.set(0, y, x, pose.world_to_camera(&p).z);
            for c in 0..3 {
                img.set(c, y, x, color[c]);
            }
        }
    }
    (img, depth)
}

/// Target pixels whose visible surface is wall the source camera cannot see
/// because the occluder blocks it.
pub fn leaked_background(source: &CameraPose, target: &CameraPose, k: &CameraIntrinsics) -> Image {
    let mut gt = Image::new(1, k.height, k.width);
    for y in 0..k.height {
        for x in 0..k.width {
            let d = target.ray_direction(k, x as f64, y as f64);
            if d.z <= 0.0 || hits_occluder(&target.center, &d).is_some() {
                continue;
            }
            let p = target.center + d * ((BG_Z - target.center.z) / d.z);
            let back = p - source.center;
            let pc = source.world_to_camera(&p);
            let (u, v) = k.project(&pc);
            let in_view = pc.z > 0.0 && u >= 0.0 && v >= 0.0 && u <= (k.width - 1) as f64 && v <= (k.height - 1) as f64;
            if in_view && hits_occluder(&source.center, &back).is_some_and(|t| t < 1.0) {
                gt.set(0, y, x, 1.0);
            }
        }
    }
    gt
}

#[derive(Clone, Debug)]
pub struct MaskReport {
    /// Every pixel masked by the plain warp is still masked after refinement.
    pub superset: bool,
    /// Fraction of leaked-background pixels masked after refinement.
    pub recall: f64,
    /// Same fraction for the plain warp mask.
    pub warp_recall: f64,
    pub leaked_pixels: usize,
    /// Refinement leaves the warp mask unchanged on a single frontal plane.
    pub flat_noop: bool,
}

impl MaskReport {
    pub fn passes(&self, min_recall: f64) -> bool {
        self.superset && self.flat_noop && self.recall >= min_recall
    }
}

fn zero_set(mask: &Image) -> Vec<bool> {
    mask.data.iter().map(|m| *m < 0.5).collect()
}

/// Camera orbited `degrees` about the occluder centre, still looking at it.
pub fn orbit_pose(degrees: f64) -> Result<CameraPose> {
    let a = degrees.to_radians();
    let center = Vec3::new(FG_Z * a.sin(), 0.0, FG_Z * (1.0 - a.cos()));
    CameraPose::look_at(center, Vec3::new(0.0, 0.0, FG_Z), Vec3::new(0.0, 1.0, 0.0))
}

pub fn mask_ablation_pair(size: usize, degrees: f64) -> Result<(ConservativeWarp, Image)> {
    let k = CameraIntrinsics::from_fov(size, size, 60.0)?;
    let source = CameraPose::identity();
    let target = orbit_pose(degrees)?;
    let (img, depth) = two_plane_view(&source, &k);
    let cloud = unproject_depth(&img, &depth, &k, &source)?;
    let cw = conservative_warp(&cloud, &source, &target, &k, 1.5, None)?;
    Ok((cw, leaked_background(&source, &target, &k)))
}

/// Conservative-mask check on the two-plane scene seen 30 degrees off-axis, plus the flat-plane no-op.
pub fn mask_ablation(size: usize) -> Result<MaskReport> {
    let (cw, gt) = mask_ablation_pair(size, 30.0)?;
    let before = zero_set(&cw.warp.mask);
    let after = zero_set(&cw.refined_mask);
    let superset = before.iter().zip(&after).all(|(b, a)| !b || *a);
    let leaked: Vec<usize> = (0..gt.data.len()).filter(|&i| gt.data[i] > 0.5).collect();
    let frac = |set: &[bool]| leaked.iter().filter(|&&i| set[i]).count() as f64 / leaked.len().max(1) as f64;

    let k = CameraIntrinsics::from_fov(size, size, 60.0)?;
    let source = CameraPose::identity();
    let mut img = Image::filled(3, size, size, 0.5);
    img.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64 / 7.0);
    let depth = Image::filled(1, size, size, 3.0);
    let cloud = unproject_depth(&img, &depth, &k, &source)?;
    let target = CameraPose::look_at(Vec3::new(0.3, -0.2, 0.1), Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 1.0, 0.0))?;
    let flat = conservative_warp(&cloud, &source, &target, &k, 1.5, None)?;
    Ok(MaskReport {
        superset,
        recall: frac(&after),
        warp_recall: frac(&before),
        leaked_pixels: leaked.len(),
        flat_noop: flat.refined_mask == flat.warp.mask,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Small random Gaussians filling the view frustum of the identity camera.
pub fn random_frustum_scene(count: usize, seed: u64) -> GaussianScene {
    let mut rng = rng_for(seed, "prune-scene");
    GaussianScene::new(
        (0..count)
            .map(|_| {
                let z = rng.gen_range(2.0..8.0);
                let mut q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
                q.iter_mut().for_each(|v| *v /= n);
                Gaussian {
                    position: Vec3::new(rng.gen_range(-0.6..0.6) * z, rng.gen_range(-0.6..0.6) * z, z),
                    scale: Vec3::new(rng.gen_range(0.01..0.06), rng.gen_range(0.01..0.06), rng.gen_range(0.01..0.06)),
                    rotation: q,
                    opacity: rng.gen_range(0.0..1.0),
                    color: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                }
            })
            .collect(),
    )
}

#[derive(Clone, Debug)]
pub struct PruneReport {
    pub total: usize,
    pub kept: usize,
    pub before_ms: f64,
    pub after_ms: f64,
}

impl PruneReport {
    pub fn speedup(&self) -> f64 {
        self.before_ms / self.after_ms
    }
}

/// Median render time of a `count`-Gaussian scene before and after pruning.
pub fn prune_ablation(count: usize, keep_fraction: f64, size: usize, trials: usize, seed: u64) -> Result<PruneReport> {
    let scene = random_frustum_scene(count, seed);
    let pruned = prune_by_opacity(&scene, keep_fraction)?;
    let k = CameraIntrinsics::from_fov(size, size, 70.0)?;
    let pose = CameraPose::identity();
    let time = |s: &GaussianScene| -> Result<f64> {
        let mut v = Vec::with_capacity(trials);
        for _ in 0..trials.max(1) {
            let t = Instant::now();
            render(s, &pose, &k)?;
            v.push(t.elapsed().as_secs_f64() * 1e3);
        }
        Ok(median(v))
    };
    Ok(PruneReport {
        total: scene.len(),
        kept: pruned.len(),
        before_ms: time(&scene)?,
        after_ms: time(&pruned)?,
    })
}

#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub tokens: usize,
    /// Median forward time at `N` and `2N` tokens.
    pub mixer_ms: [f64; 2],
    pub attention_ms: [f64; 2],
}

impl ScalingReport {
    pub fn mixer_ratio(&self) -> f64 {
        self.mixer_ms[1] / self.mixer_ms[0]
    }

    pub fn attention_ratio(&self) -> f64 {
        self.attention_ms[1] / self.attention_ms[0]
    }
}

/// Times one recurrent mixer layer and one attention layer of width `dim` on
/// `tokens` and `2·tokens` inputs.
pub fn mixer_scaling(tokens: usize, dim: usize, trials: usize, seed: u64) -> ScalingReport {
    let mut rng = rng_for(seed, "mixer-scaling");
    let mut p = ParamSet::default();
    let attn = Attention::new(&mut p, "attn", dim, 4, &mut rng, 0.02);
    let mixer = Mixer::new(&mut p, "mixer", dim, 2 * dim, 16, &mut rng, 0.02);
    let x: Vec<f64> = (0..2 * tokens * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let time = |f: &dyn Fn(usize) -> Vec<f64>, n: usize| {
        median(
            (0..trials.max(1))
                .map(|_| {
                    let t = Instant::now();
                    std::hint::black_box(f(n));
                    t.elapsed().as_secs_f64() * 1e3
                })
                .collect(),
        )
    };
    let run_mixer = |n: usize| mixer.forward(&p, &x[..n * dim], n);
    let run_attn = |n: usize| attn.forward(&p, &x[..n * dim], n);
    ScalingReport {
        tokens,
        mixer_ms: [time(&run_mixer, tokens), time(&run_mixer, 2 * tokens)],
        attention_ms: [time(&run_attn, tokens), time(&run_attn, 2 * tokens)],
    }
}
