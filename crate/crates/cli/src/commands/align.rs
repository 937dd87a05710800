use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use lineup_core::align::{align_corpus, AlignConfig, AlignError, LandmarkSet, SimilarityTransform};
use lineup_core::imagecore::{content_hash, decode_png, write_png, Image};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{create_dir, file_name, list_pngs, write_json};
use crate::error::{data, CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Directory of portrait PNGs.
    pub images: PathBuf,
    /// Directory holding one `{stem}.json` landmark file per portrait.
    pub landmarks: PathBuf,
    /// Output directory for aligned PNGs and the manifest.
    pub out: PathBuf,
    #[arg(long, default_value_t = AlignConfig::default().resize_side)]
    pub resize_side: usize,
    #[arg(long, default_value_t = AlignConfig::default().crop_side)]
    pub crop_side: usize,
    #[arg(long, default_value_t = AlignConfig::default().out_side)]
    pub out_side: usize,
}

#[derive(Debug, Serialize)]
pub struct AlignedEntry {
    pub source_id: String,
    pub output: String,
    pub content_hash: String,
    pub transform: SimilarityTransform,
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct CorpusManifest {
    pub config: AlignConfig,
    pub image_paths: Vec<String>,
    pub landmark_paths: Vec<String>,
    pub image_count: usize,
    pub aligned_count: usize,
    /// SHA-256 over every input image and landmark file, in name order.
    pub corpus_hash: String,
    pub composite: Vec<[f64; 2]>,
    pub aligned: Vec<AlignedEntry>,
    pub failures: Vec<Failure>,
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn hash_field(h: &mut Sha256, bytes: Option<&[u8]>) {
    match bytes {
        Some(b) => {
            h.update((b.len() as u64).to_le_bytes());
            h.update(b);
        }
        None => h.update(u64::MAX.to_le_bytes()),
    }
}

fn load_pair(image: &[u8], landmarks: Option<&[u8]>, lm_path: &Path, id: &str) -> Result<(Image, LandmarkSet), String> {
    let img = decode_png(image).map_err(|e| format!("image: {e}"))?;
    let bytes = landmarks.ok_or_else(|| format!("missing landmark file {}", lm_path.display()))?;
    let text = std::str::from_utf8(bytes).map_err(|e| format!("landmarks: {e}"))?;
    let mut lm = LandmarkSet::from_json(text).map_err(|e| format!("landmarks: {e}"))?;
    lm.source_id = id.to_string();
    Ok((img, lm))
}

pub fn run(args: &AlignArgs) -> Result<()> {
    let cfg = AlignConfig {
        resize_side: args.resize_side,
        crop_side: args.crop_side,
        out_side: args.out_side,
        ..AlignConfig::default()
    };
    if !args.landmarks.is_dir() {
        return Err(data(format!("landmark directory {} not found", args.landmarks.display())));
    }
    let images = list_pngs(&args.images)?;
    if images.is_empty() {
        return Err(data(format!("no PNG files in {}", args.images.display())));
    }

    let mut hasher = Sha256::new();
    let mut manifest = CorpusManifest {
        config: cfg,
        image_paths: Vec::new(),
        landmark_paths: Vec::new(),
        image_count: images.len(),
        aligned_count: 0,
        corpus_hash: String::new(),
        composite: Vec::new(),
        aligned: Vec::new(),
        failures: Vec::new(),
    };
    let mut pairs: Vec<(Image, LandmarkSet)> = Vec::new();
    let mut seen = BTreeSet::new();
    for path in &images {
        let id = stem(path);
        if !seen.insert(id.clone()) {
            manifest.failures.push(Failure { file: path.display().to_string(), error: "duplicate stem".into() });
            continue;
        }
        let lm_path = args.landmarks.join(format!("{id}.json"));
        let image_bytes = std::fs::read(path)?;
        let lm_bytes = std::fs::read(&lm_path).ok();
        hasher.update(file_name(path).as_bytes());
        hasher.update([0]);
        hash_field(&mut hasher, Some(&image_bytes));
        hash_field(&mut hasher, lm_bytes.as_deref());

        manifest.image_paths.push(path.display().to_string());
        if lm_bytes.is_some() {
            manifest.landmark_paths.push(lm_path.display().to_string());
        }
        match load_pair(&image_bytes, lm_bytes.as_deref(), &lm_path, &id) {
            Ok(pair) => pairs.push(pair),
            Err(error) => manifest.failures.push(Failure { file: path.display().to_string(), error }),
        }
    }
    manifest.corpus_hash = hex::encode(hasher.finalize());

    // A portrait the aligner rejects is set aside and the rest realigned.
    let corpus = loop {
        if pairs.is_empty() {
            break None;
        }
        match align_corpus(&pairs, &cfg) {
            Ok(c) => break Some(c),
            Err(AlignError::Portrait { id, source }) => {
                pairs.retain(|(_, lm)| lm.source_id != id);
                let file = images.iter().find(|p| stem(p) == id).map(|p| p.display().to_string()).unwrap_or(id);
                manifest.failures.push(Failure { file, error: source.to_string() });
            }
            Err(e) => return Err(data(e)),
        }
    };

    create_dir(&args.out)?;
    if let Some(corpus) = &corpus {
        manifest.composite = corpus.composite.points.clone();
        for p in &corpus.portraits {
            let output = format!("{}.png", p.source_id);
            let path = args.out.join(&output);
            write_png(&path, &p.image).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            manifest.aligned.push(AlignedEntry {
                source_id: p.source_id.clone(),
                output,
                content_hash: content_hash(&p.image),
                transform: p.transform,
            });
        }
    }
    manifest.aligned_count = manifest.aligned.len();
    manifest.failures.sort_by(|a, b| a.file.cmp(&b.file));
    write_json(&args.out.join(MANIFEST_FILE), &manifest)?;
    println!("aligned {} of {} portraits into {}", manifest.aligned_count, manifest.image_count, args.out.display());

    if manifest.failures.is_empty() {
        return Ok(());
    }
    for f in &manifest.failures {
        eprintln!("{}: {}", f.file, f.error);
    }
    Err(data(format!("{} input(s) failed", manifest.failures.len())))
}
