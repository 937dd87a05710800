#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use lineup_core::align::LandmarkSet;
use lineup_core::imagecore::{write_png, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn lineup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lineup")).args(args).output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn random_image(side: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(side, side, |_, _, _| rng.random()).unwrap()
}

/// `count` random `side`×`side` PNGs named `img_{i:02}.png`.
pub fn write_corpus(dir: &Path, count: usize, side: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        write_png(dir.join(format!("img_{i:02}.png")), &random_image(side, seed * 1000 + i as u64)).unwrap();
    }
}

/// Portraits plus a landmark file per portrait: five jittered points around
/// a face-like layout.
pub fn write_landmarked_corpus(images: &Path, landmarks: &Path, count: usize, side: usize) {
    write_corpus(images, count, side, 7);
    std::fs::create_dir_all(landmarks).unwrap();
    let s = side as f64;
    let base = [[0.35, 0.4], [0.65, 0.4], [0.5, 0.55], [0.4, 0.7], [0.6, 0.7]];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..count {
        let points = base
            .iter()
            .map(|[x, y]| [x * s + rng.random_range(-2.0..2.0), y * s + rng.random_range(-2.0..2.0)])
            .collect();
        let id = format!("img_{i:02}");
        let set = LandmarkSet::new(&id, points).unwrap();
        std::fs::write(landmarks.join(format!("{id}.json")), set.to_json()).unwrap();
    }
}

/// Fits a model with `d` components on `count` random 8×8 images.
pub fn fit_model(dir: &Path, count: usize, d: usize) -> std::path::PathBuf {
    let corpus = dir.join("corpus");
    write_corpus(&corpus, count, 8, 3);
    let model = dir.join("model.llef");
    let out = lineup(&["fit", p(&corpus), "--d", &d.to_string(), "--out", p(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}
