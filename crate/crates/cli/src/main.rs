use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use latsplat::ablation::{mask_ablation, mixer_scaling, prune_ablation};
use latsplat::camera::{load_trajectory, CoverageConfig, Trajectory};
use latsplat::codec::{load_latents, CodecConfig};
use latsplat::config::RunConfig;
use latsplat::decoder::Decoder;
use latsplat::io::{export_ply, import_ply, save_png};
use latsplat::raster::{prune_by_opacity, render};
use latsplat::training::data::{augment_dynamic, generate_scene, load_corpus, save_scene, stage_scene, SceneData};
use latsplat::training::train::{evaluate, evaluate_dynamic, fusion_ablation};
use latsplat::training::{init_decoder, train, CorpusConfig, StageScene};
use latsplat::Error;

#[derive(Parser)]
#[command(name = "latsplat", version, about = "Feed-forward Gaussian splatting from video latents")]
struct Cli {
    /// Run seed; overrides the seed in a run config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 = deterministic single-worker mode).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render and encode a teacher corpus.
    GenData {
        /// Half-open seed range `A..B`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        dynamic: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 9)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        views: usize,
        /// Codec as `tau,sigma,channels`.
        #[arg(long, default_value = "8,8,16")]
        codec: String,
        #[arg(long, default_value_t = 0.02)]
        jitter: f64,
    },
    /// Run the progressive schedule of a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Final checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Metrics log (default: next to the checkpoint).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Decode latents and trajectories into a PLY scene.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// One `latent.bin` per view, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        latents: Vec<PathBuf>,
        /// One `poses.txt` per view, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        trajectories: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Bullet-time target in [0, 1]; decodes with the dynamic path.
        #[arg(long)]
        time: Option<f64>,
        /// Opacity-pruning keep fraction.
        #[arg(long, default_value_t = 0.2)]
        keep: f64,
    },
    /// Render a PLY scene along a trajectory to PNG frames.
    Render {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out metrics against teacher frames and the warp baseline.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 20)]
        holdout: usize,
        #[arg(long, default_value_t = 0.2)]
        keep: f64,
    },
    /// Scripted property checks.
    Ablate {
        #[arg(long, value_enum)]
        which: Which,
        /// Image side for the mask and prune checks.
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Gaussian count for the prune check.
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        /// Token count N for the mixer check.
        #[arg(long, default_value_t = 4096)]
        tokens: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Checkpoint for fusion and augment.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Control checkpoint trained without augmentation (augment).
        #[arg(long)]
        control: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        holdout: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Mask,
    Prune,
    Mixer,
    Fusion,
    Augment,
}

enum Failure {
    Core(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::InvalidInput(msg.into()))
}

fn parse_seeds(s: &str) -> Result<std::ops::Range<u64>, Failure> {
    let (a, b) = s.split_once("..").ok_or_else(|| usage(format!("seed range {s:?} is not A..B")))?;
    let a: u64 = a.trim().parse().map_err(|_| usage(format!("bad seed {a:?}")))?;
    let b: u64 = b.trim().parse().map_err(|_| usage(format!("bad seed {b:?}")))?;
    if a >= b {
        return Err(usage(format!("empty seed range {s}")));
    }
    Ok(a..b)
}

fn parse_codec(s: &str) -> Result<CodecConfig, Failure> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| usage(format!("bad codec {s:?}"))))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [t, sp, c] => Ok(CodecConfig::new(t, sp, c)?),
        _ => Err(usage("codec needs tau,sigma,channels")),
    }
}

/// Splits a corpus into training scenes and the `holdout` highest seeds.
fn split(mut scenes: Vec<SceneData>, holdout: usize) -> Result<(Vec<SceneData>, Vec<SceneData>), Failure> {
    if holdout > scenes.len() {
        return Err(usage(format!("holdout {holdout} exceeds corpus size {}", scenes.len())));
    }
    let held = scenes.split_off(scenes.len() - holdout);
    Ok((scenes, held))
}

fn corpus_config_of(scene: &SceneData) -> CorpusConfig {
    let k = scene.tracks[0].trajectory.intrinsics;
    CorpusConfig {
        width: k.width,
        height: k.height,
        frames: scene.tracks[0].frames.len(),
        views: scene.input_views(),
        codec: scene.codec,
        jitter: CorpusConfig::desk().jitter,
        coverage: CoverageConfig::default(),
    }
}

fn staged(decoder: &Decoder, scenes: &[SceneData], augment: bool) -> Result<Vec<StageScene>, Failure> {
    let codec = decoder.codec()?;
    let mut out = Vec::with_capacity(scenes.len());
    for s in scenes {
        let k = s.tracks[0].trajectory.intrinsics;
        let frames = s.tracks[0].frames.len();
        let s = if augment && s.dynamic { augment_dynamic(s, &corpus_config_of(s))? } else { s.clone() };
        out.push(stage_scene(&s, &codec, k.height, k.width, frames)?);
    }
    Ok(out)
}

fn gen_data(
    seeds: &str,
    dynamic: bool,
    out: &Path,
    cfg: CorpusConfig,
) -> CliResult {
    let range = parse_seeds(seeds)?;
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let t = Instant::now();
    for seed in range.clone() {
        save_scene(out, &generate_scene(seed, dynamic, &cfg)?)?;
    }
    println!(
        "gen-data scenes={} dynamic={dynamic} out={} seconds={:.1}",
        range.end - range.start,
        out.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_cmd(config: &Path, out: &Path, metrics: Option<PathBuf>, seed: Option<u64>) -> CliResult {
    let mut run = RunConfig::load(config)?;
    if let Some(s) = seed {
        run.seed = s;
    }
    let stages = run.stages()?;
    let (scenes, _) = split(load_corpus(&run.corpus)?, run.holdout)?;
    let scenes = if run.augment && scenes.iter().any(|s| s.dynamic) {
        scenes
            .iter()
            .map(|s| if s.dynamic { augment_dynamic(s, &corpus_config_of(s)) } else { Ok(s.clone()) })
            .collect::<latsplat::Result<Vec<_>>>()?
    } else {
        scenes
    };
    let mut cfg = run.train_config();
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.metrics_path = Some(metrics.unwrap_or_else(|| dir.join("metrics.txt")));
    cfg.checkpoint_dir = Some(dir.join("checkpoints"));
    let decoder = match &run.init {
        Some(p) => Decoder::load_file(p)?,
        None => init_decoder(&cfg, &scenes)?,
    };
    let t = Instant::now();
    let (decoder, report) = train(decoder, &scenes, &stages, &cfg)?;
    decoder.save_file(out)?;
    let last = report.records.iter().rev().find(|r| !r.skipped).map_or(f64::NAN, |r| r.loss);
    println!(
        "train steps={} skipped={} final_loss={last:.6} seconds={:.1} ckpt={}",
        report.records.len(),
        report.skipped,
        t.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn infer(ckpt: &Path, latents: &[PathBuf], trajectories: &[PathBuf], out: &Path, time: Option<f64>, keep: f64) -> CliResult {
    if latents.len() != trajectories.len() {
        return Err(usage(format!("{} latents for {} trajectories", latents.len(), trajectories.len())));
    }
    let decoder = Decoder::load_file(ckpt)?;
    let codec = decoder.codec()?;
    let mut zs = Vec::new();
    for p in latents {
        let mut v = load_latents(p)?;
        if v.len() != 1 {
            return Err(Failure::Core(Error::Format(format!("{}: expected one latent tensor", p.display()))));
        }
        zs.push(v.remove(0));
    }
    let trajs: Vec<Trajectory> = trajectories.iter().map(|p| load_trajectory(p)).collect::<latsplat::Result<_>>()?;
    let input = decoder.prepare(&codec, &zs, &trajs, time)?;
    let scene = prune_by_opacity(&decoder.decode(&input, time.is_some())?, keep)?;
    export_ply(&scene, out)?;
    println!("infer gaussians={} out={}", scene.len(), out.display());
    Ok(())
}

fn render_cmd(ply: &Path, trajectory: &Path, out: &Path) -> CliResult {
    let scene = import_ply(ply)?;
    let traj = load_trajectory(trajectory)?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    for (i, pose) in traj.poses.iter().enumerate() {
        let r = render(&scene, pose, &traj.intrinsics)?;
        save_png(&out.join(format!("frame_{i:03}.png")), &r.image)?;
    }
    println!("render frames={} out={}", traj.len(), out.display());
    Ok(())
}

fn eval_cmd(ckpt: &Path, corpus: &Path, holdout: usize, keep: f64) -> CliResult {
    let decoder = Decoder::load_file(ckpt)?;
    let (_, held) = split(load_corpus(corpus)?, holdout)?;
    if held.is_empty() {
        return Err(usage("holdout must be at least 1"));
    }
    if held.iter().all(|s| s.dynamic) {
        let rep = evaluate_dynamic(&decoder, &staged(&decoder, &held, true)?, keep)?;
        println!("seed alpha_far matched_mse mismatched_mse");
        for ((s, a), (m, x)) in held.iter().zip(&rep.alpha_far).zip(&rep.bullet_time) {
            println!("{} {a:.5} {m:.6} {x:.6}", s.seed);
        }
        println!("mean_alpha_far {:.5} bullet_time_pass_rate {:.3}", rep.mean_alpha(), rep.bullet_time_pass_rate());
        return Ok(());
    }
    let rep = evaluate(&decoder, &staged(&decoder, &held, false)?, keep)?;
    print!("{}", rep.to_table());
    println!(
        "psnr_gain_db {:.4}",
        rep.student_mean().psnr - rep.warp_mean().psnr
    );
    Ok(())
}

fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf, Failure> {
    v.as_ref().ok_or_else(|| usage(format!("--{flag} is required for this check")))
}

fn check(pass: bool, what: &str) -> CliResult {
    if pass {
        Ok(())
    } else {
        Err(Failure::Check(format!("{what} property does not hold")))
    }
}

#[allow(clippy::too_many_arguments)]
fn ablate(
    which: Which,
    size: usize,
    count: usize,
    tokens: usize,
    trials: usize,
    ckpt: &Option<PathBuf>,
    control: &Option<PathBuf>,
    corpus: &Option<PathBuf>,
    holdout: usize,
    seed: u64,
) -> CliResult {
    match which {
        Which::Mask => {
            let r = mask_ablation(size)?;
            println!(
                "ablate mask superset={} recall={:.4} warp_recall={:.4} leaked_pixels={} flat_noop={}",
                r.superset, r.recall, r.warp_recall, r.leaked_pixels, r.flat_noop
            );
            check(r.passes(0.95), "conservative mask")
        }
        Which::Prune => {
            let r = prune_ablation(count, 0.2, size, trials, seed)?;
            println!(
                "ablate prune total={} kept={} before_ms={:.2} after_ms={:.2} speedup={:.2}",
                r.total,
                r.kept,
                r.before_ms,
                r.after_ms,
                r.speedup()
            );
            check(r.after_ms < r.before_ms, "pruning speedup")
        }
        Which::Mixer => {
            let r = mixer_scaling(tokens, 64, trials, seed);
            println!(
                "ablate mixer tokens={} mixer_ms={:.2},{:.2} attention_ms={:.2},{:.2} mixer_ratio={:.3} attention_ratio={:.3}",
                r.tokens,
                r.mixer_ms[0],
                r.mixer_ms[1],
                r.attention_ms[0],
                r.attention_ms[1],
                r.mixer_ratio(),
                r.attention_ratio()
            );
            check(r.mixer_ratio() <= 2.5 && r.attention_ratio() >= 3.5, "mixer scaling")
        }
        Which::Fusion => {
            let decoder = Decoder::load_file(need(ckpt, "ckpt")?)?;
            let (_, held) = split(load_corpus(need(corpus, "corpus")?)?, holdout)?;
            let (joint, indep) = fusion_ablation(&decoder, &staged(&decoder, &held, false)?, 0.2)?;
            println!("ablate fusion joint_psnr={joint:.4} independent_psnr={indep:.4}");
            check(joint > indep, "multi-view fusion")
        }
        Which::Augment => {
            let with = Decoder::load_file(need(ckpt, "ckpt")?)?;
            let without = Decoder::load_file(need(control, "control")?)?;
            let (_, held) = split(load_corpus(need(corpus, "corpus")?)?, holdout)?;
            let st = staged(&with, &held, true)?;
            let a = evaluate_dynamic(&with, &st, 0.2)?;
            let b = evaluate_dynamic(&without, &st, 0.2)?;
            println!(
                "ablate augment alpha_augmented={:.5} alpha_control={:.5} bullet_time_pass_rate={:.3}",
                a.mean_alpha(),
                b.mean_alpha(),
                a.bullet_time_pass_rate()
            );
            check(a.mean_alpha() > b.mean_alpha(), "augmentation coverage")
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if cli.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| usage(e.to_string()))?;
    let seed = cli.seed;
    match cli.command {
        Command::GenData {
            seeds,
            dynamic,
            out,
            width,
            height,
            frames,
            views,
            codec,
            jitter,
        } => {
            let cfg = CorpusConfig {
                width,
                height,
                frames,
                views,
                codec: parse_codec(&codec)?,
                jitter,
                coverage: CoverageConfig::default(),
            };
            gen_data(&seeds, dynamic, &out, cfg)
        }
        Command::Train { config, out, metrics } => train_cmd(&config, &out, metrics, seed),
        Command::Infer {
            ckpt,
            latents,
            trajectories,
            out,
            time,
            keep,
        } => infer(&ckpt, &latents, &trajectories, &out, time, keep),
        Command::Render { ply, trajectory, out } => render_cmd(&ply, &trajectory, &out),
        Command::Eval {
            ckpt,
            corpus,
            holdout,
            keep,
        } => eval_cmd(&ckpt, &corpus, holdout, keep),
        Command::Ablate {
            which,
            size,
            count,
            tokens,
            trials,
            ckpt,
            control,
            corpus,
            holdout,
        } => ablate(which, size, count, tokens, trials, &ckpt, &control, &corpus, holdout, seed.unwrap_or(0)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Core(e) => (e.code(), e.to_string()),
                Failure::Check(m) => ("E_CHECK_FAILED", m),
            };
            eprintln!("error code={code} message={}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
