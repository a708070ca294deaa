//! Dynamic pilot: fine-tunes a static checkpoint on dynamic scenes with and
//! without the motion-reversed augmentation and compares the two.
//!
//! `cargo run --release --example dynamic_pilot -- <init.lyrd> <train scenes> <held-out> <steps> [views] [warmup] [lr] [seed base]`

use std::path::Path;
use std::time::Instant;

use latsplat::decoder::Decoder;
use latsplat::training::data::{augment_dynamic, generate_scene, stage_scene, CorpusConfig};
use latsplat::training::{evaluate_dynamic, train, Stage, StageConfig, TrainConfig};

fn main() -> latsplat::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let init = Decoder::load_file(Path::new(args.first().map(String::as_str).unwrap_or("/tmp/pilot_static.lyrd")))?;
    let (n_train, n_eval, steps, views) = (num(1, 40), num(2, 10), num(3, 600), num(4, 2));
    let base = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(20_000u64);
    let corpus = CorpusConfig::desk();
    let t = Instant::now();
    let plain = (base..base + n_train as u64)
        .map(|s| generate_scene(s, true, &corpus))
        .collect::<latsplat::Result<Vec<_>>>()?;
    let augmented = plain.iter().map(|s| augment_dynamic(s, &corpus)).collect::<latsplat::Result<Vec<_>>>()?;
    let held = (base + 10_000..base + 10_000 + n_eval as u64)
        .map(|s| augment_dynamic(&generate_scene(s, true, &corpus)?, &corpus))
        .collect::<latsplat::Result<Vec<_>>>()?;
    println!("corpus: {:.1} s", t.elapsed().as_secs_f64());
    let schedule = StageConfig {
        stages: vec![Stage {
            height: 64,
            width: 64,
            frames: 9,
            views,
            min_views: Some(1),
            supervised: 2,
            batch: 1,
            steps,
            dynamic: true,
        }],
    };
    let mut cfg = TrainConfig::new(init.config.clone());
    cfg.optimizer.warmup_steps = num(5, 100);
    if let Some(lr) = args.get(6).and_then(|s| s.parse().ok()) {
        cfg.optimizer.lr = lr;
    }
    let codec = init.codec()?;
    let staged = held.iter().map(|s| stage_scene(s, &codec, 64, 64, 9)).collect::<latsplat::Result<Vec<_>>>()?;
    let before = evaluate_dynamic(&init, &staged, cfg.keep_fraction)?;
    println!("init: alpha {:.4} bullet {:.2}", before.mean_alpha(), before.bullet_time_pass_rate());
    for (name, scenes) in [("augmented", &augmented), ("control", &plain)] {
        let t = Instant::now();
        let (d, rep) = train(init.clone(), scenes, &schedule, &cfg)?;
        let secs = t.elapsed().as_secs_f64();
        if std::env::var("DYN_DEBUG").is_ok() {
            for r in rep.records.iter().take(15).chain(rep.records.iter().rev().take(5)) {
                println!("  {} loss {:.3} {:?} g {:.2}", r.step, r.loss, r.parts, r.grad_norm);
            }
        }
        let r = evaluate_dynamic(&d, &staged, cfg.keep_fraction)?;
        if let Ok(dir) = std::env::var("DYN_SAVE") {
            d.save_file(&Path::new(&dir).join(format!("{name}.lyrd")))?;
        }
        println!("  alpha per scene {:?}", r.alpha_far.iter().map(|a| (a * 1e3).round() / 1e3).collect::<Vec<_>>());
        println!(
            "{name}: {secs:.1} s, trend {:?}, alpha {:.4}, bullet {:.2} {:?}",
            rep.stage_trend(1, (steps / 10).max(1)),
            r.mean_alpha(),
            r.bullet_time_pass_rate(),
            r.bullet_time
        );
    }
    Ok(())
}
