//! Desk-scale pilot: trains on a small static corpus and reports loss trends and
//! held-out PSNR against the warp baseline.
//!
//! Set `PILOT_SAVE=<path>` to keep the trained decoder.
//!
//! `cargo run --release --example pilot -- <train scenes> <held-out> <s1> <s2> <s3> [head_factor] [lr]`

use std::time::Instant;

use latsplat::decoder::DecoderConfig;
use latsplat::training::data::{generate_scene, stage_scene, CorpusConfig};
use latsplat::training::{evaluate, init_decoder, train, StageConfig, TrainConfig};

fn main() -> latsplat::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (n_train, n_eval) = (num(0, 20), num(1, 4));
    let steps = [num(2, 20), num(3, 10), num(4, 10)];
    let mut dcfg = DecoderConfig::desk();
    dcfg.head_factor = num(5, dcfg.head_factor);
    let mut cfg = TrainConfig::new(dcfg);
    if let Some(lr) = args.get(6).and_then(|s| s.parse().ok()) {
        cfg.optimizer.lr = lr;
    }
    let corpus = CorpusConfig::desk();
    let t = Instant::now();
    let scenes = (0..n_train as u64).map(|s| generate_scene(s, false, &corpus)).collect::<latsplat::Result<Vec<_>>>()?;
    let held = (10_000..10_000 + n_eval as u64)
        .map(|s| generate_scene(s, false, &corpus))
        .collect::<latsplat::Result<Vec<_>>>()?;
    println!("corpus: {:.1} s for {} scenes", t.elapsed().as_secs_f64(), n_train + n_eval);
    let decoder = init_decoder(&cfg, &scenes)?;
    println!("params: {}", decoder.params.data.len());
    let schedule = StageConfig::desk(steps);
    let t = Instant::now();
    let (decoder, report) = train(decoder, &scenes, &schedule, &cfg)?;
    let total = t.elapsed().as_secs_f64();
    println!("train: {:.1} s, {:.1} ms/step", total, 1e3 * total / schedule.total_steps() as f64);
    for si in 1..=3 {
        let w = (schedule.stages[si - 1].steps / 10).max(1);
        println!("stage {si} trend {:?}", report.stage_trend(si, w));
    }
    if let Ok(path) = std::env::var("PILOT_SAVE") {
        decoder.save_file(std::path::Path::new(&path))?;
    }
    let codec = decoder.codec()?;
    let staged = held.iter().map(|s| stage_scene(s, &codec, 64, 64, 9)).collect::<latsplat::Result<Vec<_>>>()?;
    let t = Instant::now();
    let eval = evaluate(&decoder, &staged, cfg.keep_fraction)?;
    println!("eval: {:.1} s", t.elapsed().as_secs_f64());
    print!("{}", eval.to_table());
    Ok(())
}
