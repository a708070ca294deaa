//! Shared fixtures for the benchmarks.

use latsplat::decoder::{Decoder, DecoderConfig, DecoderInput};
use latsplat::training::data::{generate_scene, CorpusConfig};

/// A desk-sized decoder and the prepared input of one generated scene.
pub fn desk_fixture(seed: u64) -> (Decoder, DecoderInput) {
    let decoder = Decoder::new(DecoderConfig::desk()).expect("desk config is valid");
    let scene = generate_scene(seed, false, &CorpusConfig::desk()).expect("scene generation");
    let codec = decoder.codec().expect("codec");
    let trajectories: Vec<_> = scene.tracks.iter().map(|t| t.trajectory.clone()).collect();
    let input = decoder.prepare(&codec, &scene.latents, &trajectories, None).expect("prepare");
    (decoder, input)
}
