//! Teacher corpus generation and storage, stage-resolution views of it, and
//! per-step sample assembly.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::camera::{
    compute_plucker, load_trajectory, reverse_trajectory, sample_trajectories, save_trajectory, CameraIntrinsics,
    CameraPose, CoverageConfig, Trajectory,
};
use crate::codec::{load_latents, save_latents, Codec, CodecConfig, LatentTensor};
use crate::decoder::inputs::{encode_plucker_latent, Normalizers};
use crate::error::{invalid, mismatch, Error, Result};
use crate::imgbuf::Image;
use crate::io::{load_frames, save_frames};
use crate::rng::Rng;
use crate::teacher::{anchor_pose, teacher_generate, teacher_intrinsics, teacher_render, TeacherOptions, TimeMode};

use super::schedule::Stage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub views: usize,
    pub codec: CodecConfig,
    /// Per-frame teacher gain/bias jitter amplitude.
    pub jitter: f64,
    pub coverage: CoverageConfig,
}

impl CorpusConfig {
    pub fn desk() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 9,
            views: 4,
            codec: CodecConfig::reference(),
            jitter: 0.02,
            coverage: CoverageConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return invalid("corpus needs at least one view");
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return invalid(format!("jitter {} outside [0, 0.5)", self.jitter));
        }
        self.codec.validate()?;
        self.codec.latent_dims(self.frames, self.height, self.width)?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        teacher_intrinsics(self.width, self.height)
    }
}

/// One camera path with its teacher frames and depths in path order.
#[derive(Clone, Debug)]
pub struct Track {
    pub trajectory: Trajectory,
    pub frames: Vec<Image>,
    pub depths: Vec<Image>,
    /// The teacher produced this video in reverse order; the codec round trip
    /// that forms supervision runs in that order.
    pub reversed: bool,
}

/// A generated scene. The first `latents.len()` tracks are decoder inputs;
/// any further tracks are supervision-only.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub seed: u64,
    pub dynamic: bool,
    pub codec: CodecConfig,
    pub tracks: Vec<Track>,
    pub latents: Vec<LatentTensor>,
}

impl SceneData {
    pub fn input_views(&self) -> usize {
        self.latents.len()
    }
}

fn teacher_options(seed: u64, cfg: &CorpusConfig, time_mode: TimeMode) -> TeacherOptions {
    TeacherOptions {
        time_mode,
        jitter_seed: (cfg.jitter > 0.0).then_some(seed),
        jitter_amount: cfg.jitter,
    }
}

pub fn scene_trajectories(seed: u64, cfg: &CorpusConfig) -> Result<Vec<Trajectory>> {
    let coverage = CoverageConfig { seed, ..cfg.coverage };
    sample_trajectories(&anchor_pose(), &cfg.intrinsics()?, cfg.views, cfg.frames, &coverage)
}

/// Renders and encodes the `V` teacher videos of scene `seed`.
pub fn generate_scene(seed: u64, dynamic: bool, cfg: &CorpusConfig) -> Result<SceneData> {
    cfg.validate()?;
    let scene = teacher_generate(seed, dynamic);
    let codec = Codec::new(cfg.codec)?;
    let opts = teacher_options(seed, cfg, TimeMode::Synchronized);
    let mut tracks = Vec::with_capacity(cfg.views);
    let mut latents = Vec::with_capacity(cfg.views);
    for trajectory in scene_trajectories(seed, cfg)? {
        let video = teacher_render(&scene, &trajectory, &opts)?;
        latents.push(codec.encode(&video.frames)?);
        tracks.push(Track {
            trajectory,
            frames: video.frames,
            depths: video.depths,
            reversed: false,
        });
    }
    Ok(SceneData {
        seed,
        dynamic,
        codec: cfg.codec,
        tracks,
        latents,
    })
}

/// Appends one motion-reversed track per input view: the teacher renders the
/// original poses with time running backwards, and the result is reversed back
/// so frame `k` shows time `t_k` from the pose originally at `L − 1 − k`.
pub fn augment_dynamic(scene: &SceneData, cfg: &CorpusConfig) -> Result<SceneData> {
    if !scene.dynamic {
        return invalid("augmentation applies to dynamic scenes only");
    }
    let teacher = teacher_generate(scene.seed, true);
    let opts = teacher_options(scene.seed ^ 0xa5a5, cfg, TimeMode::Reversed);
    let mut out = scene.clone();
    out.tracks.truncate(scene.input_views());
    for track in &scene.tracks[..scene.input_views()] {
        let video = teacher_render(&teacher, &track.trajectory, &opts)?;
        out.tracks.push(Track {
            trajectory: reverse_trajectory(&track.trajectory),
            frames: video.frames.into_iter().rev().collect(),
            depths: video.depths.into_iter().rev().collect(),
            reversed: true,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    seed: u64,
    dynamic: bool,
    views: usize,
    frames: usize,
    width: usize,
    height: usize,
    codec: CodecConfig,
}

pub fn scene_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("scene_{seed}"))
}

/// Writes `scene_<seed>/meta.toml` and `traj_<v>/{video.raw, depth.raw, poses.txt, latent.bin}`
/// for every input view.
pub fn save_scene(root: &Path, scene: &SceneData) -> Result<PathBuf> {
    let dir = scene_dir(root, scene.seed);
    std::fs::create_dir_all(&dir)?;
    let first = &scene.tracks[0];
    let meta = SceneMeta {
        seed: scene.seed,
        dynamic: scene.dynamic,
        views: scene.input_views(),
        frames: first.frames.len(),
        width: first.trajectory.intrinsics.width,
        height: first.trajectory.intrinsics.height,
        codec: scene.codec,
    };
    std::fs::write(dir.join("meta.toml"), toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?)?;
    for (v, (track, z)) in scene.tracks.iter().zip(&scene.latents).enumerate() {
        let td = dir.join(format!("traj_{v}"));
        std::fs::create_dir_all(&td)?;
        save_frames(&td.join("video.raw"), &track.frames)?;
        save_frames(&td.join("depth.raw"), &track.depths)?;
        save_trajectory(&td.join("poses.txt"), &track.trajectory)?;
        save_latents(&td.join("latent.bin"), std::slice::from_ref(z))?;
    }
    Ok(dir)
}

pub fn load_scene(dir: &Path) -> Result<SceneData> {
    let text = std::fs::read_to_string(dir.join("meta.toml"))?;
    let meta: SceneMeta = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?;
    let mut tracks = Vec::with_capacity(meta.views);
    let mut latents = Vec::with_capacity(meta.views);
    for v in 0..meta.views {
        let td = dir.join(format!("traj_{v}"));
        let frames = load_frames(&td.join("video.raw"))?;
        let depths = load_frames(&td.join("depth.raw"))?;
        let trajectory = load_trajectory(&td.join("poses.txt"))?;
        if frames.len() != meta.frames || depths.len() != meta.frames || trajectory.len() != meta.frames {
            return mismatch(format!("{}: frame counts disagree with meta.toml", td.display()));
        }
        let mut z = load_latents(&td.join("latent.bin"))?;
        if z.len() != 1 {
            return Err(Error::Format(format!("{}: expected one latent tensor", td.display())));
        }
        latents.push(z.remove(0));
        tracks.push(Track {
            trajectory,
            frames,
            depths,
            reversed: false,
        });
    }
    Ok(SceneData {
        seed: meta.seed,
        dynamic: meta.dynamic,
        codec: meta.codec,
        tracks,
        latents,
    })
}

/// Loads every `scene_*` directory under `root`, ordered by seed.
pub fn load_corpus(root: &Path) -> Result<Vec<SceneData>> {
    let mut dirs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("scene_"))
            .and_then(|s| s.parse().ok());
        if let Some(seed) = seed {
            dirs.push((seed, path));
        }
    }
    if dirs.is_empty() {
        return invalid(format!("no scene_* directories under {}", root.display()));
    }
    dirs.sort();
    dirs.iter().map(|(_, d)| load_scene(d)).collect()
}

/// One supervision view: a pose with its target image and depth.
#[derive(Clone, Debug)]
pub struct Target {
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
    pub time: f64,
    pub rgb: Image,
    pub depth: Image,
}

impl Target {
    /// 1 where the target depth is finite and positive.
    pub fn mask(&self) -> Image {
        let mut m = self.depth.clone();
        m.data.iter_mut().for_each(|v| *v = if v.is_finite() && *v > 0.0 { 1.0 } else { 0.0 });
        m
    }
}

/// A scene at a stage's resolution and length. Supervision images are the
/// codec's reconstruction of the teacher frames.
#[derive(Clone, Debug)]
pub struct StageScene {
    pub seed: u64,
    pub dynamic: bool,
    pub latents: Vec<LatentTensor>,
    pub trajectories: Vec<Trajectory>,
    /// `[track][frame]`, covering input and supervision-only tracks.
    pub targets: Vec<Vec<Target>>,
}

impl StageScene {
    pub fn input_views(&self) -> usize {
        self.latents.len()
    }

    pub fn frames(&self) -> usize {
        self.trajectories[0].len()
    }
}

fn resample(frames: &[Image], factor: usize) -> Result<Vec<Image>> {
    if factor == 1 {
        return Ok(frames.to_vec());
    }
    frames.iter().map(|f| f.downsample(factor)).collect()
}

/// Truncates to `frames`, box-downsamples to `height × width` and re-encodes.
pub fn stage_scene(scene: &SceneData, codec: &Codec, height: usize, width: usize, frames: usize) -> Result<StageScene> {
    let k0 = scene.tracks[0].trajectory.intrinsics;
    if k0.height % height != 0 || k0.width % width != 0 || k0.height / height != k0.width / width {
        return mismatch(format!("cannot resample {}x{} to {height}x{width}", k0.height, k0.width));
    }
    let factor = k0.height / height;
    if codec.config != scene.codec {
        return mismatch("codec differs from the one that encoded the corpus");
    }
    codec.config.latent_dims(frames, height, width)?;
    let mut latents = Vec::new();
    let mut trajectories = Vec::new();
    let mut targets = Vec::new();
    for (v, track) in scene.tracks.iter().enumerate() {
        let traj = track.trajectory.truncated(frames)?.downscaled(factor)?;
        let video = resample(&track.frames[..frames], factor)?;
        let depths = resample(&track.depths[..frames], factor)?;
        let rgb = if track.reversed {
            let rev: Vec<Image> = video.iter().rev().cloned().collect();
            let mut out = codec.decode_rgb(&codec.encode(&rev)?)?;
            out.reverse();
            out
        } else {
            let z = if factor == 1 && frames == track.frames.len() && v < scene.input_views() {
                scene.latents[v].clone()
            } else {
                codec.encode(&video)?
            };
            let out = codec.decode_rgb(&z)?;
            if v < scene.input_views() {
                latents.push(z);
            }
            out
        };
        if v < scene.input_views() {
            trajectories.push(traj.clone());
        }
        targets.push(
            rgb.into_iter()
                .zip(depths)
                .enumerate()
                .map(|(f, (rgb, depth))| Target {
                    pose: traj.poses[f],
                    intrinsics: traj.intrinsics,
                    time: traj.frame_times[f],
                    rgb,
                    depth,
                })
                .collect(),
        );
    }
    Ok(StageScene {
        seed: scene.seed,
        dynamic: scene.dynamic,
        latents,
        trajectories,
        targets,
    })
}

/// Uniform frame index in `0..frames`.
pub fn sample_target_time(frames: usize, rng: &mut Rng) -> usize {
    assert!(frames >= 1, "need at least one frame");
    rng.gen_range(0..frames)
}

/// `count` distinct frame indices drawn uniformly, ascending.
pub fn select_frames(frames: usize, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if count == 0 || count > frames {
        return invalid(format!("cannot select {count} of {frames} frames"));
    }
    let mut idx = sample_indices(rng, frames, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Input views and supervision targets of one training step.
#[derive(Clone, Debug)]
pub struct TrainSample {
    /// Input view indices into the stage scene, ascending.
    pub views: Vec<usize>,
    /// Target frame for dynamic samples.
    pub target_frame: Option<usize>,
    pub targets: Vec<Target>,
}

impl TrainSample {
    pub fn target_time(&self, scene: &StageScene) -> Option<f64> {
        self.target_frame.map(|j| scene.trajectories[0].frame_times[j])
    }
}

/// Draws a view subset of size within the stage's range, then either `S`
/// frames per chosen trajectory (static) or one target frame supervised from
/// every chosen input track and its augmented partner (dynamic).
pub fn make_sample(scene: &StageScene, stage: &Stage, rng: &mut Rng) -> Result<TrainSample> {
    let available = scene.input_views();
    let (lo, hi) = stage.view_range();
    let hi = hi.min(available);
    let lo = lo.min(hi);
    let count = rng.gen_range(lo..=hi);
    let mut views = sample_indices(rng, available, count).into_vec();
    views.sort_unstable();
    let frames = scene.frames();
    if stage.dynamic {
        if !scene.dynamic {
            return invalid("dynamic stage on a static scene");
        }
        let j = sample_target_time(frames, rng);
        let mut targets = Vec::new();
        for &v in &views {
            targets.push(scene.targets[v][j].clone());
            if let Some(aug) = scene.targets.get(available + v) {
                targets.push(aug[j].clone());
            }
        }
        return Ok(TrainSample {
            views,
            target_frame: Some(j),
            targets,
        });
    }
    let s = stage.supervised.min(frames);
    let mut targets = Vec::with_capacity(views.len() * s);
    for &v in &views {
        for f in select_frames(frames, s, rng)? {
            targets.push(scene.targets[v][f].clone());
        }
    }
    Ok(TrainSample {
        views,
        target_frame: None,
        targets,
    })
}

/// Fits input normalizers on the given scenes.
pub fn fit_normalizers(scenes: &[StageScene], codec: &Codec) -> Result<Normalizers> {
    let first = scenes.first().ok_or_else(|| Error::InvalidInput("no calibration scenes".into()))?;
    let k = first.trajectories[0].intrinsics;
    let mut latents = Vec::new();
    let mut pluckers = Vec::new();
    for s in scenes {
        latents.extend(s.latents.iter().cloned());
        for t in &s.trajectories {
            pluckers.push(encode_plucker_latent(&compute_plucker(t)?, codec)?);
        }
    }
    Normalizers::fit(&latents, &pluckers, codec, k.height, k.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn small() -> CorpusConfig {
        CorpusConfig {
            width: 32,
            height: 32,
            frames: 9,
            views: 3,
            ..CorpusConfig::desk()
        }
    }

    #[test]
    fn scene_round_trips_through_disk() {
        let cfg = small();
        let scene = generate_scene(4, false, &cfg).unwrap();
        assert_eq!(scene.tracks.len(), 3);
        assert_eq!(scene.latents[0].dims(), (2, 16, 4, 4));
        let dir = tempfile::tempdir().unwrap();
        let path = save_scene(dir.path(), &scene).unwrap();
        assert!(path.join("traj_2/latent.bin").exists());
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        let b = &back[0];
        assert_eq!((b.seed, b.dynamic), (4, false));
        for (x, y) in scene.tracks.iter().zip(&b.tracks) {
            assert_eq!(x.trajectory, y.trajectory);
            for (p, q) in x.frames[3].data.iter().zip(&y.frames[3].data) {
                assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn augmentation_doubles_views_and_preserves_times() {
        let cfg = small();
        let scene = generate_scene(2, true, &cfg).unwrap();
        let aug = augment_dynamic(&scene, &cfg).unwrap();
        assert_eq!(aug.tracks.len(), 6);
        assert_eq!(aug.input_views(), 3);
        for v in 0..3 {
            let (o, a) = (&aug.tracks[v].trajectory, &aug.tracks[3 + v].trajectory);
            assert_eq!(o.frame_times, a.frame_times);
            assert_eq!(reverse_trajectory(a).poses, o.poses);
        }
        let stat = generate_scene(2, false, &cfg).unwrap();
        assert!(augment_dynamic(&stat, &cfg).is_err());
    }

    #[test]
    fn augmented_frames_show_original_motion_order() {
        let cfg = CorpusConfig { jitter: 0.0, ..small() };
        let scene = generate_scene(9, true, &cfg).unwrap();
        let aug = augment_dynamic(&scene, &cfg).unwrap();
        let teacher = teacher_generate(9, true);
        let a = &aug.tracks[3];
        let (img, _, _) = crate::teacher::render_frame(&teacher, &a.trajectory.poses[2], &a.trajectory.intrinsics, a.trajectory.frame_times[2]);
        assert_eq!(img, a.frames[2]);
    }

    #[test]
    fn augmentation_brings_a_view_closer_at_every_time() {
        let cfg = CorpusConfig {
            views: 6,
            ..small()
        };
        for seed in 0..5 {
            let scene = generate_scene(seed, true, &cfg).unwrap();
            let aug = augment_dynamic(&scene, &cfg).unwrap();
            let teacher = teacher_generate(seed, true);
            let mut strictly = false;
            for f in 0..cfg.frames {
                let t = scene.tracks[0].trajectory.frame_times[f];
                let n = teacher.primitives.len();
                let centroid = (0..n).map(|i| teacher.state(i, t).1).sum::<crate::camera::Vec3>() / n as f64;
                let dist = |tracks: &[Track]| {
                    tracks
                        .iter()
                        .map(|tr| (tr.trajectory.poses[f].center - centroid).norm())
                        .fold(f64::INFINITY, f64::min)
                };
                let (without, with) = (dist(&aug.tracks[..6]), dist(&aug.tracks));
                assert!(with <= without);
                strictly |= with < without;
            }
            assert!(strictly, "seed {seed}: augmentation never helped");
        }
    }

    #[test]
    fn stage_scene_downsamples_and_reencodes() {
        let cfg = small();
        let scene = generate_scene(1, false, &cfg).unwrap();
        let codec = Codec::new(cfg.codec).unwrap();
        let full = stage_scene(&scene, &codec, 32, 32, 9).unwrap();
        assert_eq!(full.latents[0], scene.latents[0]);
        assert_eq!(full.targets[0][0].rgb, codec.decode_rgb(&scene.latents[0]).unwrap()[0]);
        let half = stage_scene(&scene, &codec, 16, 16, 1).unwrap();
        assert_eq!(half.latents[0].dims(), (1, 16, 2, 2));
        assert_eq!(half.targets[1].len(), 1);
        assert_eq!(half.trajectories[0].intrinsics.width, 16);
        assert!(stage_scene(&scene, &codec, 24, 24, 9).is_err());
    }

    #[test]
    fn target_time_is_uniform_and_seeded() {
        let mut rng = rng_for(1, "t");
        assert!((0..20).all(|_| sample_target_time(1, &mut rng) == 0));
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            counts[sample_target_time(10, &mut rng)] += 1;
        }
        let sigma = (10_000.0f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 3.0 * sigma, "{counts:?}");
        }
        let a: Vec<usize> = (0..50).map(|_| sample_target_time(7, &mut rng_for(3, "x"))).collect();
        let b: Vec<usize> = (0..50).map(|_| sample_target_time(7, &mut rng_for(3, "x"))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn frame_selection_is_distinct_and_sorted() {
        let mut rng = rng_for(2, "s");
        for _ in 0..100 {
            let f = select_frames(9, 4, &mut rng).unwrap();
            assert_eq!(f.len(), 4);
            assert!(f.windows(2).all(|w| w[0] < w[1]));
            assert!(f[3] < 9);
        }
        assert!(select_frames(3, 4, &mut rng).is_err());
    }

    #[test]
    fn samples_follow_the_stage() {
        let cfg = small();
        let codec = Codec::new(cfg.codec).unwrap();
        let scene = stage_scene(&generate_scene(3, true, &cfg).unwrap(), &codec, 32, 32, 9).unwrap();
        let mut rng = rng_for(5, "sample");
        let stage = Stage {
            height: 32,
            width: 32,
            frames: 9,
            views: 2,
            min_views: None,
            supervised: 3,
            batch: 1,
            steps: 1,
            dynamic: false,
        };
        let s = make_sample(&scene, &stage, &mut rng).unwrap();
        assert_eq!((s.views.len(), s.targets.len(), s.target_frame), (2, 6, None));
        let dyn_stage = Stage { dynamic: true, ..stage };
        let s = make_sample(&scene, &dyn_stage, &mut rng).unwrap();
        let j = s.target_frame.unwrap();
        assert_eq!(s.targets.len(), 2);
        assert!(s.targets.iter().all(|t| t.time == scene.trajectories[0].frame_times[j]));
        let aug = augment_dynamic(&generate_scene(3, true, &cfg).unwrap(), &cfg).unwrap();
        let scene = stage_scene(&aug, &codec, 32, 32, 9).unwrap();
        let s = make_sample(&scene, &dyn_stage, &mut rng).unwrap();
        assert_eq!(s.targets.len(), 4);
    }
}
