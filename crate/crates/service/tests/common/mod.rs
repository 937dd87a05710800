#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use lineup_core::facespace::fit_eigenfaces;
use lineup_core::imagecore::Image;
use lineup_service::{Resources, ServiceConfig, SessionManager};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 8;
pub const D: usize = 4;

pub fn corpus(seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..10)
        .map(|_| Image::from_fn(SIDE, SIDE, |_, _, _| rng.random::<f64>()).unwrap())
        .collect()
}

pub fn resources() -> Resources {
    let corpus = corpus(1);
    let model = fit_eigenfaces(&corpus, D).unwrap();
    Resources::new(Some(model), corpus, SIDE).unwrap()
}

pub fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        lineup_side: SIDE,
        snapshot_every: 7,
        ..ServiceConfig::default()
    }
}

pub fn manager(dir: &Path) -> Arc<SessionManager> {
    Arc::new(SessionManager::open(&config(dir), resources()).unwrap())
}

/// A valid ranking of `n` portraits derived from `salt`.
pub fn ranking(n: usize, salt: u64) -> Vec<u32> {
    use rand::seq::SliceRandom;
    let mut r: Vec<u32> = (1..=n as u32).collect();
    r.shuffle(&mut ChaCha8Rng::seed_from_u64(salt));
    r
}
