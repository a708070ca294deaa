//! The self-distillation loop: decode, prune, render at supervision poses,
//! backpropagate through the renderer and the decoder, and step Adam.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cache::forward_warp;
use crate::camera::unproject_depth;
use crate::decoder::{Decoder, DecoderConfig, DecoderInput};
use crate::error::{invalid, Error, Result};
use crate::io::{psnr, ssim};
use crate::raster::{ch, prune_indices, render, render_with_gradients, GaussianScene, RenderAdjoint, CHANNELS};
use crate::rng::rng_for;

use super::data::{fit_normalizers, make_sample, stage_scene, SceneData, StageScene, Target};
use super::loss::{loss_depth, loss_mse, loss_opacity, total_loss, LossParts, LossWeights, PerceptualProxy};
use super::optim::{cosine_lr, Adam, OptimizerConfig};
use super::schedule::StageConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub decoder: DecoderConfig,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    /// Fraction of Gaussians kept by opacity pruning before rendering.
    pub keep_fraction: f64,
    pub seed: u64,
    /// The run fails when more than this fraction of steps is skipped.
    pub max_skip_fraction: f64,
    /// Scenes used to fit the input normalizers of a fresh decoder.
    pub normalizer_scenes: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(decoder: DecoderConfig) -> Self {
        Self {
            decoder,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            keep_fraction: 0.2,
            seed: 0,
            max_skip_fraction: 0.01,
            normalizer_scenes: 16,
            checkpoint_dir: None,
            metrics_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()?;
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return invalid(format!("keep fraction {} outside (0, 1]", self.keep_fraction));
        }
        if !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return invalid("max skip fraction outside [0, 1]");
        }
        Ok(())
    }
}

/// Loss parts, total and parameter gradient of one sample.
#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub parts: LossParts,
    pub total: f64,
    pub grad: Vec<f64>,
}

/// Decodes `input`, prunes to `keep_fraction`, renders every target and
/// returns the weighted loss with its gradient. Image terms are averaged over
/// targets; the opacity term covers the unpruned scene.
pub fn sample_loss(
    decoder: &Decoder,
    proxy: &PerceptualProxy,
    input: &DecoderInput,
    dynamic: bool,
    targets: &[Target],
    weights: &LossWeights,
    keep_fraction: f64,
) -> Result<SampleLoss> {
    if targets.is_empty() {
        return invalid("sample has no supervision targets");
    }
    let (scene, cache) = decoder.forward_train(input, dynamic)?;
    let kept = prune_indices(&scene, keep_fraction)?;
    let pruned = GaussianScene::new(kept.iter().map(|&i| scene.gaussians[i]).collect());
    let mut dg = vec![[0.0; CHANNELS]; scene.len()];
    let mut parts = LossParts::default();
    let inv = 1.0 / targets.len() as f64;
    for t in targets {
        let out = render(&pruned, &t.pose, &t.intrinsics)?;
        let mask = t.mask();
        let mse = loss_mse(&out.image, &t.rgb, Some(&mask))?;
        let lp = proxy.loss(&out.image, &t.rgb)?;
        let dep = loss_depth(&out.depth, &t.depth, Some(&mask))?;
        parts.add(&LossParts {
            mse: mse.value,
            lpips: lp.value,
            depth: dep.value,
            opacity: 0.0,
        });
        let (h, w) = (t.intrinsics.height, t.intrinsics.width);
        let mut adj = RenderAdjoint::zeros(h, w);
        for i in 0..adj.image.data.len() {
            adj.image.data[i] = inv * (weights.mse * mse.grad.data[i] + weights.lpips * lp.grad.data[i]);
        }
        for i in 0..adj.depth.data.len() {
            adj.depth.data[i] = inv * weights.depth * dep.grad.data[i];
        }
        let (_, g) = render_with_gradients(&pruned, &t.pose, &t.intrinsics, &adj)?;
        for (k, gi) in kept.iter().zip(&g) {
            for c in 0..CHANNELS {
                dg[*k][c] += gi[c];
            }
        }
    }
    let mut parts = parts.scaled(inv);
    parts.opacity = loss_opacity(&scene)?;
    let per = weights.opacity / scene.len() as f64;
    dg.iter_mut().for_each(|g| g[ch::OPACITY] += per);
    let total = total_loss(&parts, weights)?;
    let grad = decoder.backward(&cache, &dg)?;
    Ok(SampleLoss { parts, total, grad })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stage: usize,
    pub loss: f64,
    pub parts: LossParts,
    pub grad_norm: f64,
    pub wallclock_ms: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub skipped: usize,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    /// Mean loss over the first and last `window` finite steps of `stage`.
    pub fn stage_trend(&self, stage: usize, window: usize) -> Option<(f64, f64)> {
        let losses: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.stage == stage && !r.skipped)
            .map(|r| r.loss)
            .collect();
        let w = window.max(1);
        if losses.len() < 2 * w {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
    }
}

pub const METRICS_HEADER: &str = "# step stage loss mse lpips depth opacity grad_norm wallclock_ms";

fn metrics_line(r: &StepRecord) -> String {
    format!(
        "{} {} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.6e} {:.3}",
        r.step,
        r.stage,
        r.loss,
        r.parts.mse,
        r.parts.lpips,
        r.parts.depth,
        r.parts.opacity,
        r.grad_norm,
        r.wallclock_ms
    )
}

/// A decoder with input normalizers fitted on the first scenes of the corpus.
pub fn init_decoder(cfg: &TrainConfig, scenes: &[SceneData]) -> Result<Decoder> {
    let mut decoder = Decoder::new(cfg.decoder.clone())?;
    let codec = decoder.codec()?;
    let first = scenes.first().ok_or_else(|| Error::InvalidInput("empty corpus".into()))?;
    let k = first.tracks[0].trajectory.intrinsics;
    let frames = first.tracks[0].frames.len();
    let calib = scenes
        .iter()
        .take(cfg.normalizer_scenes.max(1))
        .map(|s| stage_scene(s, &codec, k.height, k.width, frames))
        .collect::<Result<Vec<_>>>()?;
    decoder.normalizers = fit_normalizers(&calib, &codec)?;
    Ok(decoder)
}

/// Runs every stage of `schedule` on `scenes`, starting from `decoder`.
pub fn train(
    mut decoder: Decoder,
    scenes: &[SceneData],
    schedule: &StageConfig,
    cfg: &TrainConfig,
) -> Result<(Decoder, TrainReport)> {
    cfg.validate()?;
    schedule.validate()?;
    if scenes.is_empty() {
        return invalid("empty corpus");
    }
    let codec = decoder.codec()?;
    let proxy = PerceptualProxy::default();
    let mut rng = rng_for(cfg.seed, "train");
    let mut adam = Adam::new(cfg.optimizer, decoder.params.data.len());
    let mut report = TrainReport::default();
    let mut log = match &cfg.metrics_path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let start = Instant::now();
    let mut step = 0usize;
    let mut staged: Option<((usize, usize, usize), Vec<StageScene>)> = None;
    for (si, stage) in schedule.stages.iter().enumerate() {
        let key = (stage.height, stage.width, stage.frames);
        if staged.as_ref().map_or(true, |(k, _)| *k != key) {
            let built = scenes
                .iter()
                .map(|s| stage_scene(s, &codec, stage.height, stage.width, stage.frames))
                .collect::<Result<Vec<_>>>()?;
            staged = Some((key, built));
        }
        let stage_scenes = &staged.as_ref().expect("stage data built").1;
        if stage.dynamic && stage_scenes.iter().any(|s| !s.dynamic) {
            return invalid(format!("stage {} is dynamic but the corpus has static scenes", si + 1));
        }
        let mut inputs: Vec<Option<DecoderInput>> = vec![None; stage_scenes.len()];
        for local in 0..stage.steps {
            let lr = cosine_lr(cfg.optimizer.lr, cfg.optimizer.min_lr_fraction, local, stage.steps);
            let mut grad = vec![0.0; decoder.params.data.len()];
            let mut parts = LossParts::default();
            let mut total = 0.0;
            let mut failed = false;
            for _ in 0..stage.batch {
                let idx = rng.gen_range(0..stage_scenes.len());
                let scene = &stage_scenes[idx];
                let sample = make_sample(scene, stage, &mut rng)?;
                let input = if stage.dynamic {
                    let sub: Vec<_> = sample.views.iter().map(|&v| scene.latents[v].clone()).collect();
                    let trajs: Vec<_> = sample.views.iter().map(|&v| scene.trajectories[v].clone()).collect();
                    decoder.prepare(&codec, &sub, &trajs, sample.target_time(scene))?
                } else {
                    if inputs[idx].is_none() {
                        inputs[idx] = Some(decoder.prepare(&codec, &scene.latents, &scene.trajectories, None)?);
                    }
                    inputs[idx].as_ref().expect("cached input").subset(&sample.views)
                };
                match sample_loss(&decoder, &proxy, &input, stage.dynamic, &sample.targets, &cfg.weights, cfg.keep_fraction) {
                    Ok(s) if s.grad.iter().all(|g| g.is_finite()) => {
                        total += s.total;
                        parts.add(&s.parts);
                        grad.iter_mut().zip(&s.grad).for_each(|(a, b)| *a += b);
                    }
                    Ok(_) | Err(Error::NonFinite(_)) => failed = true,
                    Err(e) => return Err(e),
                }
            }
            let b = 1.0 / stage.batch as f64;
            let record = if failed {
                report.skipped += 1;
                StepRecord {
                    step,
                    stage: si + 1,
                    loss: f64::NAN,
                    parts: LossParts {
                        mse: f64::NAN,
                        lpips: f64::NAN,
                        depth: f64::NAN,
                        opacity: f64::NAN,
                    },
                    grad_norm: f64::NAN,
                    wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
                    skipped: true,
                }
            } else {
                grad.iter_mut().for_each(|g| *g *= b);
                let norm = adam.step(&mut decoder.params.data, &mut grad, lr);
                StepRecord {
                    step,
                    stage: si + 1,
                    loss: total * b,
                    parts: parts.scaled(b),
                    grad_norm: norm,
                    wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
                    skipped: false,
                }
            };
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", metrics_line(&record))?;
            }
            report.records.push(record);
            step += 1;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("stage_{}.lyrd", si + 1));
            decoder.save_file(&path)?;
            report.checkpoints.push(path);
        }
    }
    if let Some(f) = log.as_mut() {
        f.flush()?;
    }
    if report.skipped as f64 > cfg.max_skip_fraction * step as f64 {
        return Err(Error::Training(format!("{} of {step} steps skipped on non-finite values", report.skipped)));
    }
    Ok((decoder, report))
}

/// Per-scene image metrics of one method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub proxy: f64,
}

impl Metrics {
    fn mean(rows: &[Metrics]) -> Metrics {
        let n = rows.len().max(1) as f64;
        Metrics {
            psnr: rows.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|m| m.ssim).sum::<f64>() / n,
            proxy: rows.iter().map(|m| m.proxy).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub student: Vec<Metrics>,
    pub warp: Vec<Metrics>,
}

impl EvalReport {
    pub fn student_mean(&self) -> Metrics {
        Metrics::mean(&self.student)
    }

    pub fn warp_mean(&self) -> Metrics {
        Metrics::mean(&self.warp)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("seed student_psnr student_ssim student_proxy warp_psnr warp_ssim warp_proxy\n");
        for ((seed, a), b) in self.seeds.iter().zip(&self.student).zip(&self.warp) {
            s.push_str(&format!(
                "{seed} {:.4} {:.4} {:.5} {:.4} {:.4} {:.5}\n",
                a.psnr, a.ssim, a.proxy, b.psnr, b.ssim, b.proxy
            ));
        }
        let (a, b) = (self.student_mean(), self.warp_mean());
        s.push_str(&format!(
            "mean {:.4} {:.4} {:.5} {:.4} {:.4} {:.5}\n",
            a.psnr, a.ssim, a.proxy, b.psnr, b.ssim, b.proxy
        ));
        s
    }
}

/// PSNR is averaged in dB over frames; identical frames are capped at 100 dB.
fn frame_metrics(proxy: &PerceptualProxy, pairs: &[(crate::Image, &crate::Image)]) -> Result<Metrics> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        rows.push(Metrics {
            psnr: psnr(a, b)?.min(100.0),
            ssim: ssim(a, b)?,
            proxy: proxy.distance(a, b)?,
        });
    }
    Ok(Metrics::mean(&rows))
}

/// Splat radius of the warp baseline, in pixels.
pub const WARP_RADIUS: f64 = 1.5;

/// Warps the anchor frame (first track, frame 0) with its teacher depth into `target`.
pub fn warp_baseline(scene: &StageScene, target: &Target) -> Result<crate::Image> {
    let anchor = &scene.targets[0][0];
    let cloud = unproject_depth(&anchor.rgb, &anchor.depth, &anchor.intrinsics, &anchor.pose)?;
    Ok(forward_warp(&cloud, &target.pose, &target.intrinsics, WARP_RADIUS)?.image)
}

/// Decodes each static held-out scene from all input views and compares renders
/// at every input-track frame except the shared anchor (frame 0) against the
/// supervision frames, alongside the warp baseline.
pub fn evaluate(decoder: &Decoder, scenes: &[StageScene], keep_fraction: f64) -> Result<EvalReport> {
    let codec = decoder.codec()?;
    let proxy = PerceptualProxy::default();
    let mut report = EvalReport::default();
    for scene in scenes {
        let input = decoder.prepare(&codec, &scene.latents, &scene.trajectories, None)?;
        let decoded = crate::raster::prune_by_opacity(&decoder.decode_static(&input)?, keep_fraction)?;
        let mut student = Vec::new();
        let mut warp = Vec::new();
        for track in &scene.targets[..scene.input_views()] {
            for t in &track[1..] {
                student.push((render(&decoded, &t.pose, &t.intrinsics)?.image, &t.rgb));
                warp.push((warp_baseline(scene, t)?, &t.rgb));
            }
        }
        report.seeds.push(scene.seed);
        report.student.push(frame_metrics(&proxy, &student)?);
        report.warp.push(frame_metrics(&proxy, &warp)?);
    }
    Ok(report)
}

/// Mean PSNR of joint decoding against decoding each view alone and taking the
/// union of the per-view Gaussians, rendered at the same poses as [`evaluate`].
pub fn fusion_ablation(decoder: &Decoder, scenes: &[StageScene], keep_fraction: f64) -> Result<(f64, f64)> {
    let codec = decoder.codec()?;
    let (mut joint, mut indep, mut n) = (0.0, 0.0, 0usize);
    for scene in scenes {
        let input = decoder.prepare(&codec, &scene.latents, &scene.trajectories, None)?;
        let a = crate::raster::prune_by_opacity(&decoder.decode_static(&input)?, keep_fraction)?;
        let mut union = Vec::new();
        for v in 0..scene.input_views() {
            union.extend(decoder.decode_static(&input.subset(&[v]))?.gaussians);
        }
        let b = crate::raster::prune_by_opacity(&GaussianScene::new(union), keep_fraction)?;
        for track in &scene.targets[..scene.input_views()] {
            for t in &track[1..] {
                joint += psnr(&render(&a, &t.pose, &t.intrinsics)?.image, &t.rgb)?.min(100.0);
                indep += psnr(&render(&b, &t.pose, &t.intrinsics)?.image, &t.rgb)?.min(100.0);
                n += 1;
            }
        }
    }
    Ok((joint / n as f64, indep / n as f64))
}

/// Dynamic-scene probes on held-out scenes that carry augmented tracks.
#[derive(Clone, Debug, Default, Serialize)]
pub struct DynamicReport {
    /// Mean rendered alpha at `t = 0` from the held-out pose farthest from the anchor.
    pub alpha_far: Vec<f64>,
    /// Per scene: matched-time MSE and opposite-end-time MSE at end-frame poses.
    pub bullet_time: Vec<(f64, f64)>,
}

impl DynamicReport {
    pub fn mean_alpha(&self) -> f64 {
        self.alpha_far.iter().sum::<f64>() / self.alpha_far.len().max(1) as f64
    }

    pub fn bullet_time_pass_rate(&self) -> f64 {
        let pass = self.bullet_time.iter().filter(|(m, x)| m < x).count();
        pass as f64 / self.bullet_time.len().max(1) as f64
    }
}

pub fn evaluate_dynamic(decoder: &Decoder, scenes: &[StageScene], keep_fraction: f64) -> Result<DynamicReport> {
    let codec = decoder.codec()?;
    let mut report = DynamicReport::default();
    for scene in scenes {
        if !scene.dynamic {
            return invalid("dynamic evaluation needs dynamic scenes");
        }
        let l = scene.frames();
        let times = &scene.trajectories[0].frame_times;
        let decode_at = |j: usize| -> Result<GaussianScene> {
            let input = decoder.prepare(&codec, &scene.latents, &scene.trajectories, Some(times[j]))?;
            crate::raster::prune_by_opacity(&decoder.decode_dynamic(&input)?, keep_fraction)
        };
        let first = decode_at(0)?;
        let last = decode_at(l - 1)?;
        let anchor = scene.trajectories[0].poses[0].center;
        let far = scene
            .targets
            .iter()
            .map(|tr| &tr[0])
            .chain(scene.targets.iter().map(|tr| &tr[l - 1]))
            .filter(|t| t.time == times[0])
            .max_by(|a, b| (a.pose.center - anchor).norm().total_cmp(&(b.pose.center - anchor).norm()))
            .expect("at least one target at t = 0");
        let alpha = render(&first, &far.pose, &far.intrinsics)?.alpha;
        report.alpha_far.push(alpha.data.iter().sum::<f64>() / alpha.data.len() as f64);
        let (mut matched, mut mismatched) = (0.0, 0.0);
        for (j, own, other) in [(0, &first, &last), (l - 1, &last, &first)] {
            for track in &scene.targets[..scene.input_views()] {
                let t = &track[j];
                matched += loss_mse(&render(own, &t.pose, &t.intrinsics)?.image, &t.rgb, None)?.value;
                mismatched += loss_mse(&render(other, &t.pose, &t.intrinsics)?.image, &t.rgb, None)?.value;
            }
        }
        report.bullet_time.push((matched, mismatched));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::training::data::{augment_dynamic, generate_scene, CorpusConfig};
    use crate::training::schedule::Stage;

    fn tiny_corpus() -> CorpusConfig {
        CorpusConfig {
            width: 16,
            height: 16,
            frames: 3,
            views: 2,
            codec: CodecConfig::new(2, 2, 4).unwrap(),
            ..CorpusConfig::desk()
        }
    }

    fn tiny_stage(steps: usize, dynamic: bool) -> StageConfig {
        StageConfig {
            stages: vec![Stage {
                height: 16,
                width: 16,
                frames: 3,
                views: 2,
                min_views: Some(1),
                supervised: 2,
                batch: 1,
                steps,
                dynamic,
            }],
        }
    }

    #[test]
    fn one_step_changes_params_and_logs() {
        let scenes: Vec<_> = (0..2).map(|s| generate_scene(s, false, &tiny_corpus()).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::new(DecoderConfig::tiny());
        cfg.metrics_path = Some(dir.path().join("metrics.txt"));
        cfg.checkpoint_dir = Some(dir.path().join("ckpt"));
        let d0 = init_decoder(&cfg, &scenes).unwrap();
        let (d1, report) = train(d0.clone(), &scenes, &tiny_stage(1, false), &cfg).unwrap();
        assert_ne!(d0.params.data, d1.params.data);
        assert!(report.records[0].loss.is_finite());
        let log = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1].split_whitespace().count(), 9);
        assert!(dir.path().join("ckpt/stage_1.lyrd").exists());
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let scenes: Vec<_> = (0..2).map(|s| generate_scene(s, false, &tiny_corpus()).unwrap()).collect();
        let cfg = TrainConfig::new(DecoderConfig::tiny());
        let run = || {
            let d = init_decoder(&cfg, &scenes).unwrap();
            let (d, _) = train(d, &scenes, &tiny_stage(3, false), &cfg).unwrap();
            let mut buf = Vec::new();
            d.save(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dynamic_stage_trains_time_weights() {
        let cfg_c = tiny_corpus();
        let scenes: Vec<_> = (0..2)
            .map(|s| augment_dynamic(&generate_scene(s, true, &cfg_c).unwrap(), &cfg_c).unwrap())
            .collect();
        let cfg = TrainConfig::new(DecoderConfig::tiny());
        let d0 = init_decoder(&cfg, &scenes).unwrap();
        let (d1, _) = train(d0.clone(), &scenes, &tiny_stage(2, true), &cfg).unwrap();
        for id in d1.time_param_ids() {
            assert!(d1.params.get(id).iter().any(|v| *v != 0.0));
            assert!(d0.params.get(id).iter().all(|v| *v == 0.0));
        }
        let codec = d1.codec().unwrap();
        let staged: Vec<_> = scenes.iter().map(|s| stage_scene(s, &codec, 16, 16, 3).unwrap()).collect();
        let rep = evaluate_dynamic(&d1, &staged, 0.2).unwrap();
        assert_eq!(rep.alpha_far.len(), 2);
        assert!(rep.alpha_far.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn static_scenes_reject_dynamic_stages() {
        let scenes = vec![generate_scene(0, false, &tiny_corpus()).unwrap()];
        let cfg = TrainConfig::new(DecoderConfig::tiny());
        let d0 = init_decoder(&cfg, &scenes).unwrap();
        assert!(train(d0, &scenes, &tiny_stage(1, true), &cfg).is_err());
    }

    #[test]
    fn evaluation_tables_cover_every_scene() {
        let scenes: Vec<_> = (0..2).map(|s| generate_scene(s, false, &tiny_corpus()).unwrap()).collect();
        let cfg = TrainConfig::new(DecoderConfig::tiny());
        let d = init_decoder(&cfg, &scenes).unwrap();
        let codec = d.codec().unwrap();
        let staged: Vec<_> = scenes.iter().map(|s| stage_scene(s, &codec, 16, 16, 3).unwrap()).collect();
        let rep = evaluate(&d, &staged, 0.2).unwrap();
        assert_eq!(rep.student.len(), 2);
        assert!(rep.warp_mean().psnr.is_finite());
        assert_eq!(rep.to_table().lines().count(), 4);
        let (j, i) = fusion_ablation(&d, &staged, 0.2).unwrap();
        assert!(j.is_finite() && i.is_finite());
    }

    #[test]
    fn stage_trend_windows() {
        let mut r = TrainReport::default();
        for (i, l) in [4.0, 3.0, 2.0, 1.0].iter().enumerate() {
            r.records.push(StepRecord {
                step: i,
                stage: 1,
                loss: *l,
                parts: LossParts::default(),
                grad_norm: 0.0,
                wallclock_ms: 0.0,
                skipped: false,
            });
        }
        assert_eq!(r.stage_trend(1, 2), Some((3.5, 1.5)));
        assert_eq!(r.stage_trend(1, 3), None);
        assert_eq!(r.stage_trend(2, 1), None);
    }
}
