pub mod align;
pub mod figures;
pub mod fit;
pub mod results;
pub mod serve;
pub mod simulate;

use std::path::{Path, PathBuf};

use lineup_core::facespace::{read_model, EigenfaceModel};
use lineup_core::imagecore::{read_png, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{data, runtime, Result};

/// Independent stream `stream` under `seed`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Every PNG in `dir` with its file name; any unreadable file is fatal.
pub fn read_corpus(dir: &Path) -> Result<Vec<(String, Image)>> {
    list_pngs(dir)?
        .into_iter()
        .map(|p| {
            let img = read_png(&p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            Ok((file_name(&p), img))
        })
        .collect()
}

pub fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_model(path: &Path) -> Result<EigenfaceModel> {
    read_model(path).map_err(|e| data(format!("model {}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}
